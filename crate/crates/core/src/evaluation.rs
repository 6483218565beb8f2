//! Localization metrics: recall at distance thresholds, RMSE over all steps
//! and over successfully localized sequences, plus report output.

use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::Path;

use serde::ser::SerializeMap;
use serde::{Deserialize, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::floorplan::{angle_diff, Pose};

pub const DEFAULT_THRESHOLDS: [f64; 3] = [0.1, 0.5, 1.0];
pub const DEFAULT_ANGLE_BOUND_DEG: f64 = 30.0;
pub const DEFAULT_SUCCESS_M: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PosePair {
    pub predicted: Pose,
    pub truth: Pose,
}

impl PosePair {
    pub fn new(predicted: Pose, truth: Pose) -> Self {
        PosePair {
            predicted: Pose::new(predicted.x, predicted.y, predicted.theta),
            truth: Pose::new(truth.x, truth.y, truth.theta),
        }
    }

    pub fn position_error(&self) -> f64 {
        (self.predicted.x - self.truth.x).hypot(self.predicted.y - self.truth.y)
    }

    /// Wrapped heading error in `[0, pi]`.
    pub fn angle_error(&self) -> f64 {
        angle_diff(self.predicted.theta, self.truth.theta)
    }
}

/// Recall percentages, one per positional threshold, plus the
/// angle-bounded value when requested.
#[derive(Debug, Clone, PartialEq)]
pub struct Recall {
    pub at: Vec<(f64, f64)>,
    pub bounded: Option<f64>,
}

/// Percent of pairs within each threshold (inclusive). With `angle_bound`,
/// also the percent within `bounded_at_m` and strictly under the bound.
pub fn recall(
    pairs: &[PosePair],
    thresholds_m: &[f64],
    angle_bound: Option<f64>,
    bounded_at_m: f64,
) -> Result<Recall> {
    if pairs.is_empty() {
        return Err(Error::EmptyInput);
    }
    if let Some(t) = thresholds_m.iter().find(|t| !(**t > 0.0)) {
        return Err(Error::InvalidArgument(format!("threshold {t} must be positive")));
    }
    let n = pairs.len() as f64;
    let pct = |count: usize| 100.0 * count as f64 / n;
    let at = thresholds_m
        .iter()
        .map(|&t| (t, pct(pairs.iter().filter(|p| p.position_error() <= t).count())))
        .collect();
    let bounded = angle_bound.map(|bound| {
        pct(pairs
            .iter()
            .filter(|p| p.position_error() <= bounded_at_m && p.angle_error() < bound)
            .count())
    });
    Ok(Recall { at, bounded })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rmse {
    pub success: Option<f64>,
    pub all: f64,
    pub successful_sequences: usize,
}

/// RMSE from per-step positional errors grouped by sequence. A sequence is
/// successful when its last error is within `success_m`; its steps count
/// toward the success RMSE from the first one within `success_m` onward.
pub fn rmse_from_errors(sequences: &[Vec<f64>], success_m: f64) -> Result<Rmse> {
    let total: usize = sequences.iter().map(Vec::len).sum();
    if total == 0 {
        return Err(Error::EmptyInput);
    }
    let all_sq: f64 = sequences.iter().flatten().map(|e| e * e).sum();
    let mut s_sq = 0.0;
    let mut s_n = 0usize;
    let mut ok = 0;
    for seq in sequences {
        if seq.last().is_some_and(|&e| e <= success_m) {
            ok += 1;
            let first = seq.iter().position(|&e| e <= success_m).expect("last qualifies");
            s_sq += seq[first..].iter().map(|e| e * e).sum::<f64>();
            s_n += seq.len() - first;
        }
    }
    Ok(Rmse {
        success: (s_n > 0).then(|| (s_sq / s_n as f64).sqrt()),
        all: (all_sq / total as f64).sqrt(),
        successful_sequences: ok,
    })
}

pub fn rmse(sequences: &[Vec<PosePair>], success_m: f64) -> Result<Rmse> {
    let errors: Vec<Vec<f64>> = sequences
        .iter()
        .map(|s| s.iter().map(PosePair::position_error).collect())
        .collect();
    rmse_from_errors(&errors, success_m)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetricConfig {
    pub thresholds_m: Vec<f64>,
    pub angle_bound_deg: f64,
    pub angle_bound_at_m: f64,
    pub success_m: f64,
}

impl Default for MetricConfig {
    fn default() -> Self {
        MetricConfig {
            thresholds_m: DEFAULT_THRESHOLDS.to_vec(),
            angle_bound_deg: DEFAULT_ANGLE_BOUND_DEG,
            angle_bound_at_m: 1.0,
            success_m: DEFAULT_SUCCESS_M,
        }
    }
}

impl MetricConfig {
    pub fn success_rule(&self) -> String {
        format!(
            "sequence successful if final error <= {} m; RMSE(S) uses steps from first entry within {} m",
            self.success_m, self.success_m
        )
    }
}

/// One evaluated run: a name, its metric settings and its sequences.
#[derive(Debug, Clone)]
pub struct Run {
    pub name: String,
    pub config: MetricConfig,
    pub sequences: Vec<Vec<PosePair>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricReport {
    pub recall_at: Vec<(f64, f64)>,
    pub recall_1m_30deg: f64,
    pub rmse_success: Option<f64>,
    pub rmse_all: f64,
    pub success_rule: String,
}

impl MetricReport {
    fn compute(config: &MetricConfig, sequences: &[Vec<PosePair>]) -> Result<Self> {
        let pairs: Vec<PosePair> = sequences.iter().flatten().copied().collect();
        let r = recall(
            &pairs,
            &config.thresholds_m,
            Some(config.angle_bound_deg.to_radians()),
            config.angle_bound_at_m,
        )?;
        let e = rmse(sequences, config.success_m)?;
        Ok(MetricReport {
            recall_at: r.at,
            recall_1m_30deg: r.bounded.expect("bound given"),
            rmse_success: e.success,
            rmse_all: e.all,
            success_rule: config.success_rule(),
        })
    }
}

pub fn metrics(run: &Run) -> Result<MetricReport> {
    MetricReport::compute(&run.config, &run.sequences)
}

/// Per-run metrics plus an aggregate over the pooled pairs of all runs.
#[derive(Debug, Clone, PartialEq)]
pub struct Report {
    pub config: MetricConfig,
    pub per_run: Vec<(String, MetricReport)>,
    pub aggregate: MetricReport,
}

pub fn report(runs: &[Run]) -> Result<Report> {
    let first = runs.first().ok_or(Error::EmptyInput)?;
    if let Some(r) = runs.iter().find(|r| r.config != first.config) {
        return Err(Error::InconsistentConfig(format!(
            "run {:?} uses different metric settings than {:?}",
            r.name, first.name
        )));
    }
    let per_run = runs
        .iter()
        .map(|r| Ok((r.name.clone(), metrics(r)?)))
        .collect::<Result<Vec<_>>>()?;
    let pooled: Vec<Vec<PosePair>> = runs.iter().flat_map(|r| r.sequences.iter().cloned()).collect();
    Ok(Report {
        config: first.config.clone(),
        per_run,
        aggregate: MetricReport::compute(&first.config, &pooled)?,
    })
}

/// Formats a threshold for keys and headers: `0.1`, `0.5`, `1`.
pub fn threshold_label(t: f64) -> String {
    format!("{t}")
}

struct RecallMap<'a>(&'a [(f64, f64)]);

impl Serialize for RecallMap<'_> {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let mut m = s.serialize_map(Some(self.0.len()))?;
        for (t, v) in self.0 {
            m.serialize_entry(&threshold_label(*t), v)?;
        }
        m.end()
    }
}

#[derive(Serialize)]
struct MetricsJson<'a> {
    #[serde(skip_serializing_if = "Option::is_none")]
    name: Option<&'a str>,
    r_at: RecallMap<'a>,
    r_1m_30: f64,
    rmse_s: Option<f64>,
    rmse_a: f64,
}

impl<'a> MetricsJson<'a> {
    fn new(name: Option<&'a str>, m: &'a MetricReport) -> Self {
        MetricsJson {
            name,
            r_at: RecallMap(&m.recall_at),
            r_1m_30: m.recall_1m_30deg,
            rmse_s: m.rmse_success,
            rmse_a: m.rmse_all,
        }
    }
}

#[derive(Serialize)]
struct ConfigJson<'a> {
    #[serde(flatten)]
    metrics: &'a MetricConfig,
    success_rule: String,
}

#[derive(Serialize)]
struct ReportJson<'a> {
    config: ConfigJson<'a>,
    per_run: Vec<MetricsJson<'a>>,
    aggregate: MetricsJson<'a>,
}

impl Report {
    pub fn to_json(&self) -> String {
        let doc = ReportJson {
            config: ConfigJson {
                metrics: &self.config,
                success_rule: self.config.success_rule(),
            },
            per_run: self
                .per_run
                .iter()
                .map(|(n, m)| MetricsJson::new(Some(n), m))
                .collect(),
            aggregate: MetricsJson::new(None, &self.aggregate),
        };
        let mut s = serde_json::to_string_pretty(&doc).expect("report serializes");
        s.push('\n');
        s
    }

    /// Fixed-width table, one row per run and a final aggregate row.
    pub fn to_table(&self) -> String {
        let mut header = vec!["run".to_string()];
        header.extend(self.config.thresholds_m.iter().map(|t| format!("R@{}m", threshold_label(*t))));
        header.push(format!(
            "R@{}m {}deg",
            threshold_label(self.config.angle_bound_at_m),
            self.config.angle_bound_deg
        ));
        header.push("RMSE(S)".into());
        header.push("RMSE(A)".into());

        let row = |name: &str, m: &MetricReport| {
            let mut r = vec![name.to_string()];
            r.extend(m.recall_at.iter().map(|(_, v)| format!("{v:.1}")));
            r.push(format!("{:.1}", m.recall_1m_30deg));
            r.push(m.rmse_success.map_or("-".into(), |v| format!("{v:.3}")));
            r.push(format!("{:.3}", m.rmse_all));
            r
        };
        let mut rows = vec![header];
        rows.extend(self.per_run.iter().map(|(n, m)| row(n, m)));
        rows.push(row("all", &self.aggregate));

        let widths: Vec<usize> = (0..rows[0].len())
            .map(|c| rows.iter().map(|r| r[c].chars().count()).max().unwrap_or(0))
            .collect();
        let mut out = String::new();
        for r in &rows {
            let line: Vec<String> = r
                .iter()
                .zip(&widths)
                .enumerate()
                .map(|(i, (cell, w))| {
                    if i == 0 {
                        format!("{cell:<w$}")
                    } else {
                        format!("{cell:>w$}")
                    }
                })
                .collect();
            let _ = writeln!(out, "{}", line.join("  "));
        }
        out
    }
}

/// One row of a trajectory CSV (`step,x_m,y_m,theta_rad`).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrajectoryPoint {
    pub step: usize,
    pub pose: Pose,
}

pub fn write_trajectory(path: &Path, points: &[TrajectoryPoint]) -> Result<()> {
    let mut f = std::io::BufWriter::new(fs::File::create(path)?);
    writeln!(f, "step,x_m,y_m,theta_rad")?;
    for p in points {
        writeln!(f, "{},{},{},{}", p.step, p.pose.x, p.pose.y, p.pose.theta)?;
    }
    f.flush()?;
    Ok(())
}

pub fn read_trajectory(path: &Path) -> Result<Vec<TrajectoryPoint>> {
    let text = fs::read_to_string(path)?;
    parse_trajectory(&text, &path.display().to_string())
}

fn parse_trajectory(text: &str, name: &str) -> Result<Vec<TrajectoryPoint>> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim() == "step,x_m,y_m,theta_rad" => {}
        _ => return Err(Error::parse(format!("{name}:1"), "expected header step,x_m,y_m,theta_rad")),
    }
    let mut out = Vec::new();
    for (i, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let loc = format!("{name}:{}", i + 1);
        let cols: Vec<&str> = line.split(',').map(str::trim).collect();
        if cols.len() != 4 {
            return Err(Error::parse(&loc, "expected 4 columns"));
        }
        let step = cols[0]
            .parse()
            .map_err(|_| Error::parse(&loc, format!("bad step {:?}", cols[0])))?;
        let num = |s: &str| {
            s.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| Error::parse(&loc, format!("bad number {s:?}")))
        };
        out.push(TrajectoryPoint {
            step,
            pose: Pose::new(num(cols[1])?, num(cols[2])?, num(cols[3])?),
        });
    }
    Ok(out)
}

/// Matches predictions to truth by step number, in truth order.
pub fn pair_by_step(predicted: &[TrajectoryPoint], truth: &[TrajectoryPoint]) -> Result<Vec<PosePair>> {
    let lookup: std::collections::HashMap<usize, Pose> = predicted.iter().map(|p| (p.step, p.pose)).collect();
    if lookup.len() != truth.len() {
        return Err(Error::LengthMismatch {
            expected: truth.len(),
            found: predicted.len(),
        });
    }
    truth
        .iter()
        .map(|t| {
            lookup
                .get(&t.step)
                .map(|p| PosePair::new(*p, t.pose))
                .ok_or_else(|| Error::InvalidArgument(format!("no prediction for step {}", t.step)))
        })
        .collect()
}

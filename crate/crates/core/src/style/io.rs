use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use super::{EpisodeMeta, FeatureRecord};
use crate::error::{Error, Result};
use crate::observation::read_jsonl;

pub fn read_metas(path: &Path) -> Result<Vec<EpisodeMeta>> {
    read_jsonl(path)
}

/// Text features: `FEATS v1 <N> <d>` header, then `image_id v1 ... vd` rows.
pub fn read_features(path: &Path) -> Result<Vec<FeatureRecord>> {
    let text = fs::read_to_string(path)?;
    parse_features_text(&text, &path.display().to_string())
}

fn parse_features_text(text: &str, name: &str) -> Result<Vec<FeatureRecord>> {
    let mut lines = text.lines().enumerate();
    let (_, header) = lines
        .next()
        .ok_or_else(|| Error::parse(format!("{name}:1"), "empty feature file"))?;
    let f: Vec<&str> = header.split_whitespace().collect();
    if f.len() != 4 || f[0] != "FEATS" || f[1] != "v1" {
        return Err(Error::parse(format!("{name}:1"), "expected `FEATS v1 <N> <d>`"));
    }
    let n: usize = f[2]
        .parse()
        .map_err(|_| Error::parse(format!("{name}:1"), "bad N"))?;
    let d: usize = f[3]
        .parse()
        .map_err(|_| Error::parse(format!("{name}:1"), "bad d"))?;
    let mut out = Vec::with_capacity(n.min(1 << 20));
    for (i, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let loc = format!("{name}:{}", i + 1);
        let mut parts = line.split_whitespace();
        let id = parts.next().expect("non-empty line");
        let values = parts
            .map(|v| v.parse::<f64>().map_err(|_| Error::parse(&loc, format!("bad value {v:?}"))))
            .collect::<Result<Vec<_>>>()?;
        if values.len() != d {
            return Err(Error::parse(&loc, format!("expected {d} values, found {}", values.len())));
        }
        out.push(FeatureRecord::new(id, values)?);
    }
    if out.len() != n {
        return Err(Error::parse(
            format!("{name}:1"),
            format!("header declares {n} rows, file has {}", out.len()),
        ));
    }
    Ok(out)
}

pub fn write_features_text(path: &Path, features: &[FeatureRecord]) -> Result<()> {
    let d = features.first().map_or(0, FeatureRecord::dim);
    let mut out = format!("FEATS v1 {} {d}\n", features.len());
    for f in features {
        out.push_str(f.image_id());
        for v in f.vector().iter() {
            out.push(' ');
            out.push_str(&v.to_string());
        }
        out.push('\n');
    }
    fs::write(path, out)?;
    Ok(())
}

fn ids_sidecar(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".ids");
    PathBuf::from(s)
}

/// Binary features: packed little-endian f32 rows, ids one per line in
/// `<path>.ids`.
pub fn read_features_binary(path: &Path) -> Result<Vec<FeatureRecord>> {
    let bytes = fs::read(path)?;
    let ids_text = fs::read_to_string(ids_sidecar(path))?;
    let ids: Vec<&str> = ids_text.lines().filter(|l| !l.trim().is_empty()).collect();
    if ids.is_empty() {
        return Ok(Vec::new());
    }
    if bytes.len() % (4 * ids.len()) != 0 {
        return Err(Error::parse(
            path.display().to_string(),
            format!("{} bytes do not divide into {} rows of f32", bytes.len(), ids.len()),
        ));
    }
    let d = bytes.len() / 4 / ids.len();
    bytes
        .chunks_exact(4 * d)
        .zip(ids)
        .map(|(row, id)| {
            let v = row
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
                .collect();
            FeatureRecord::new(id.trim(), v)
        })
        .collect()
}

pub fn write_features_binary(path: &Path, features: &[FeatureRecord]) -> Result<()> {
    let mut bytes = Vec::new();
    let mut ids = String::new();
    for f in features {
        for v in f.vector().iter() {
            bytes.extend_from_slice(&(*v as f32).to_le_bytes());
        }
        ids.push_str(f.image_id());
        ids.push('\n');
    }
    fs::write(path, bytes)?;
    fs::write(ids_sidecar(path), ids)?;
    Ok(())
}

/// CSV `image_id,label`.
pub fn write_labels(path: &Path, ids: &[&str], labels: &[usize]) -> Result<()> {
    let mut file = std::io::BufWriter::new(fs::File::create(path)?);
    writeln!(file, "image_id,label")?;
    for (id, l) in ids.iter().zip(labels) {
        writeln!(file, "{id},{l}")?;
    }
    file.flush()?;
    Ok(())
}

/// One predicted same-room probability for an image pair.
#[derive(Debug, Clone, PartialEq)]
pub struct PairProb {
    pub a: String,
    pub b: String,
    pub prob: f64,
}

/// CSV `image_a,image_b,prob` with a header row.
pub fn read_pair_probs(path: &Path) -> Result<Vec<PairProb>> {
    let text = fs::read_to_string(path)?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate().skip(1) {
        if line.trim().is_empty() {
            continue;
        }
        let loc = format!("{}:{}", path.display(), i + 1);
        let cols: Vec<&str> = line.split(',').map(str::trim).collect();
        if cols.len() != 3 {
            return Err(Error::parse(&loc, "expected image_a,image_b,prob"));
        }
        let prob: f64 = cols[2]
            .parse()
            .map_err(|_| Error::parse(&loc, format!("bad probability {:?}", cols[2])))?;
        if !(0.0..=1.0).contains(&prob) {
            return Err(Error::parse(&loc, format!("probability {prob} outside [0, 1]")));
        }
        out.push(PairProb {
            a: cols[0].to_string(),
            b: cols[1].to_string(),
            prob,
        });
    }
    Ok(out)
}

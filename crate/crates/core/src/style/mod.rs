//! Room-style pseudo-labelling: metadata constraints, cosine distances,
//! constrained refinement, InfoMap clustering and the cluster-level losses.

pub mod infomap;
mod io;

use std::collections::HashSet;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use infomap::{infomap_cluster, infomap_graph, map_equation, FlowGraph, InfomapOptions, WeightedGraph};
pub use io::{
    read_features, read_features_binary, read_metas, read_pair_probs, write_features_binary,
    write_features_text, write_labels, PairProb,
};

/// Default refinement scale.
pub const DEFAULT_LAMBDA: f64 = 0.25;
/// Default contrastive temperature.
pub const DEFAULT_TAU: f64 = 0.07;
/// Default balance between the contrastive and pair losses.
pub const DEFAULT_GAMMA: f64 = 1.0;

/// Navigation-episode difficulty, banded by trajectory length.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Difficulty {
    Easy,
    Medium,
    Hard,
}

impl Difficulty {
    /// Easy `[1.5, 3)`, medium `[3, 5)`, hard `[5, 10]` meters.
    pub fn from_trajectory_length(meters: f64) -> Option<Self> {
        match meters {
            m if (1.5..3.0).contains(&m) => Some(Difficulty::Easy),
            m if (3.0..5.0).contains(&m) => Some(Difficulty::Medium),
            m if (5.0..=10.0).contains(&m) => Some(Difficulty::Hard),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EpisodeMeta {
    pub image_id: String,
    pub scene: String,
    pub episode: String,
    pub difficulty: Difficulty,
    pub position_tag: String,
    /// Number of segmentation masks found in the image.
    pub object_count: u32,
}

/// A unit-normalized feature vector.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureRecord {
    image_id: String,
    vector: DVector<f64>,
}

impl FeatureRecord {
    pub fn new(image_id: impl Into<String>, vector: Vec<f64>) -> Result<Self> {
        let image_id = image_id.into();
        let v = DVector::from_vec(vector);
        let norm = v.norm();
        if !(norm > 0.0) || !norm.is_finite() {
            return Err(Error::ZeroVector(image_id));
        }
        Ok(FeatureRecord {
            image_id,
            vector: v / norm,
        })
    }

    pub fn image_id(&self) -> &str {
        &self.image_id
    }

    pub fn vector(&self) -> &DVector<f64> {
        &self.vector
    }

    pub fn dim(&self) -> usize {
        self.vector.len()
    }
}

/// Pairwise room-relationship priors in `{-1, -0.5, 0, 0.5, 1}`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConstraintMatrix(DMatrix<f64>);

impl ConstraintMatrix {
    /// Checks shape, symmetry, unit diagonal and the allowed value set.
    pub fn from_values(m: DMatrix<f64>) -> Result<Self> {
        if !m.is_square() {
            return Err(Error::ShapeMismatch(format!("constraint matrix is {:?}", m.shape())));
        }
        for i in 0..m.nrows() {
            if m[(i, i)] != 1.0 {
                return Err(Error::InvalidArgument(format!("diagonal entry {i} is not 1")));
            }
            for j in 0..i {
                let v = m[(i, j)];
                if v != m[(j, i)] {
                    return Err(Error::InvalidArgument(format!("entry ({i}, {j}) breaks symmetry")));
                }
                if ![-1.0, -0.5, 0.0, 0.5, 1.0].contains(&v) {
                    return Err(Error::InvalidArgument(format!("entry ({i}, {j}) = {v} not allowed")));
                }
            }
        }
        Ok(ConstraintMatrix(m))
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.0.nrows() == 0
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.0[(i, j)]
    }
}

/// Room relationship between two images. Earlier rules take precedence:
/// different scenes, then shared capture position, then the easy/hard
/// same-episode rules.
pub fn pair_constraint(a: &EpisodeMeta, b: &EpisodeMeta) -> f64 {
    if a.scene != b.scene {
        -1.0
    } else if a.position_tag == b.position_tag {
        1.0
    } else if a.episode == b.episode {
        match (a.difficulty, b.difficulty) {
            (Difficulty::Easy, Difficulty::Easy) => 0.5,
            (Difficulty::Hard, Difficulty::Hard) => -0.5,
            _ => 0.0,
        }
    } else {
        0.0
    }
}

pub fn build_constraints(metas: &[EpisodeMeta]) -> Result<ConstraintMatrix> {
    let mut seen = HashSet::with_capacity(metas.len());
    for m in metas {
        if !seen.insert(m.image_id.as_str()) {
            return Err(Error::DuplicateId(m.image_id.clone()));
        }
    }
    let n = metas.len();
    let mut m = DMatrix::from_element(n, n, 0.0);
    for i in 0..n {
        m[(i, i)] = 1.0;
        for j in i + 1..n {
            let v = pair_constraint(&metas[i], &metas[j]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
    Ok(ConstraintMatrix(m))
}

/// Cosine distances `1 - cos(v_i, v_j)`, clamped to `[0, 2]`, zero diagonal.
pub fn distance_matrix(features: &[FeatureRecord]) -> Result<DMatrix<f64>> {
    let Some(first) = features.first() else {
        return Ok(DMatrix::zeros(0, 0));
    };
    let d = first.dim();
    if let Some(bad) = features.iter().find(|f| f.dim() != d) {
        return Err(Error::DimensionMismatch(format!(
            "feature {:?} has dimension {}, expected {d}",
            bad.image_id,
            bad.dim()
        )));
    }
    let n = features.len();
    let mut out = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in i + 1..n {
            let dist = (1.0 - features[i].vector.dot(&features[j].vector)).clamp(0.0, 2.0);
            out[(i, j)] = dist;
            out[(j, i)] = dist;
        }
    }
    Ok(out)
}

/// Constrained refinement `D - lambda * M`.
pub fn refine(d: &DMatrix<f64>, m: &ConstraintMatrix, lambda: f64) -> Result<DMatrix<f64>> {
    if d.shape() != m.0.shape() {
        return Err(Error::ShapeMismatch(format!(
            "distance matrix is {:?}, constraint matrix is {:?}",
            d.shape(),
            m.0.shape()
        )));
    }
    Ok(d - &m.0 * lambda)
}

/// Pseudo-labels, centroids and loss hyperparameters.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterModel {
    pub labels: Vec<usize>,
    pub centroids: Vec<DVector<f64>>,
    pub tau: f64,
    pub lambda: f64,
    pub gamma: f64,
}

impl ClusterModel {
    pub fn new(features: &[FeatureRecord], labels: Vec<usize>, tau: f64, lambda: f64, gamma: f64) -> Result<Self> {
        let centroids = compute_centroids(features, &labels)?;
        Ok(ClusterModel {
            labels,
            centroids,
            tau,
            lambda,
            gamma,
        })
    }

    pub fn k(&self) -> usize {
        self.centroids.len()
    }

    /// Mean contrastive loss over all features.
    pub fn mean_contrastive_loss(&self, features: &[FeatureRecord]) -> Result<f64> {
        if features.is_empty() {
            return Err(Error::EmptyInput);
        }
        let mut total = 0.0;
        for (f, &label) in features.iter().zip(&self.labels) {
            total += contrastive_loss(f.vector(), label, &self.centroids, self.tau)?.loss;
        }
        Ok(total / features.len() as f64)
    }
}

/// L2-normalized mean of each cluster's members. Labels must cover
/// `0..K` with no gaps.
pub fn compute_centroids(features: &[FeatureRecord], labels: &[usize]) -> Result<Vec<DVector<f64>>> {
    if features.len() != labels.len() {
        return Err(Error::LengthMismatch {
            expected: features.len(),
            found: labels.len(),
        });
    }
    let Some(first) = features.first() else {
        return Err(Error::EmptyInput);
    };
    let k = labels.iter().max().map_or(0, |m| m + 1);
    let mut sums = vec![DVector::zeros(first.dim()); k];
    let mut counts = vec![0usize; k];
    for (f, &l) in features.iter().zip(labels) {
        if f.dim() != first.dim() {
            return Err(Error::DimensionMismatch(format!(
                "feature {:?} has dimension {}",
                f.image_id,
                f.dim()
            )));
        }
        sums[l] += &f.vector;
        counts[l] += 1;
    }
    sums.into_iter()
        .zip(counts)
        .enumerate()
        .map(|(i, (sum, count))| {
            if count == 0 {
                return Err(Error::EmptyCluster(i));
            }
            let mean = sum / count as f64;
            let norm = mean.norm();
            if norm < 1e-12 {
                return Err(Error::NormalizationUnderflow(i));
            }
            Ok(mean / norm)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossGrad {
    pub loss: f64,
    pub grad: Vec<f64>,
}

/// Cluster-level contrastive loss: cross-entropy of the softmax over
/// `f . phi_k / tau` against the positive cluster. Gradient is w.r.t. `f`.
pub fn contrastive_loss(
    feature: &DVector<f64>,
    positive: usize,
    centroids: &[DVector<f64>],
    tau: f64,
) -> Result<LossGrad> {
    let k = centroids.len();
    if positive >= k {
        return Err(Error::BadLabel { label: positive, k });
    }
    if !(tau > 0.0) {
        return Err(Error::InvalidArgument(format!("tau must be positive, got {tau}")));
    }
    let logits: Vec<f64> = centroids.iter().map(|c| feature.dot(c) / tau).collect();
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
    let denom: f64 = exps.iter().sum();
    let loss = max + denom.ln() - logits[positive];
    let mut grad = DVector::zeros(feature.len());
    for (i, (c, e)) in centroids.iter().zip(&exps).enumerate() {
        let weight = e / denom - if i == positive { 1.0 } else { 0.0 };
        grad.axpy(weight / tau, c, 1.0);
    }
    Ok(LossGrad {
        loss,
        grad: grad.as_slice().to_vec(),
    })
}

const PROB_CLAMP: f64 = 1e-12;

/// Summed binary cross-entropy of same-room predictions. Probabilities are
/// clamped into `[1e-12, 1 - 1e-12]`; the gradient is taken at the clamped value.
pub fn style_pair_loss(probs: &[f64], labels: &[bool]) -> Result<LossGrad> {
    if probs.len() != labels.len() {
        return Err(Error::LengthMismatch {
            expected: probs.len(),
            found: labels.len(),
        });
    }
    let mut loss = 0.0;
    let mut grad = Vec::with_capacity(probs.len());
    for (&p, &y) in probs.iter().zip(labels) {
        let p = p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
        if y {
            loss -= p.ln();
            grad.push(-1.0 / p);
        } else {
            loss -= (1.0 - p).ln();
            grad.push(1.0 / (1.0 - p));
        }
    }
    Ok(LossGrad { loss, grad })
}

/// `l_c + gamma * l_pred`.
pub fn total_loss(l_c: f64, l_pred: f64, gamma: f64) -> f64 {
    debug_assert!(gamma >= 0.0);
    l_c + gamma * l_pred
}

/// Ids of images with at least `threshold` objects, in input order.
pub fn filter_blank(metas: &[EpisodeMeta], threshold: u32) -> Vec<String> {
    metas
        .iter()
        .filter(|m| m.object_count >= threshold)
        .map(|m| m.image_id.clone())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn meta(id: &str, scene: &str, ep: &str, d: Difficulty, pos: &str, objects: u32) -> EpisodeMeta {
        EpisodeMeta {
            image_id: id.into(),
            scene: scene.into(),
            episode: ep.into(),
            difficulty: d,
            position_tag: pos.into(),
            object_count: objects,
        }
    }

    #[test]
    fn rule_values() {
        use Difficulty::*;
        let a = meta("a", "s1", "e1", Hard, "p1", 3);
        assert_eq!(pair_constraint(&a, &meta("b", "s2", "e1", Hard, "p1", 3)), -1.0);
        assert_eq!(pair_constraint(&a, &meta("b", "s1", "e1", Hard, "p1", 3)), 1.0);
        assert_eq!(pair_constraint(&a, &meta("b", "s1", "e1", Hard, "p2", 3)), -0.5);
        let e = meta("e", "s1", "e2", Easy, "p5", 3);
        assert_eq!(pair_constraint(&e, &meta("f", "s1", "e2", Easy, "p6", 3)), 0.5);
        assert_eq!(pair_constraint(&e, &meta("f", "s1", "e3", Easy, "p6", 3)), 0.0);
        let m = meta("m", "s1", "e4", Medium, "p7", 3);
        assert_eq!(pair_constraint(&m, &meta("n", "s1", "e4", Medium, "p8", 3)), 0.0);
    }

    #[test]
    fn duplicate_ids_rejected() {
        let a = meta("a", "s", "e", Difficulty::Easy, "p", 1);
        assert!(matches!(
            build_constraints(&[a.clone(), a]),
            Err(Error::DuplicateId(id)) if id == "a"
        ));
    }

    #[test]
    fn difficulty_bands() {
        assert_eq!(Difficulty::from_trajectory_length(1.5), Some(Difficulty::Easy));
        assert_eq!(Difficulty::from_trajectory_length(3.0), Some(Difficulty::Medium));
        assert_eq!(Difficulty::from_trajectory_length(7.0), Some(Difficulty::Hard));
        assert_eq!(Difficulty::from_trajectory_length(1.0), None);
        assert_eq!(Difficulty::from_trajectory_length(12.0), None);
    }

    #[test]
    fn distances_basic() {
        let f = vec![
            FeatureRecord::new("a", vec![1.0, 0.0]).unwrap(),
            FeatureRecord::new("b", vec![3.0, 0.0]).unwrap(),
            FeatureRecord::new("c", vec![0.0, 2.0]).unwrap(),
        ];
        let d = distance_matrix(&f).unwrap();
        assert!(d[(0, 1)].abs() < 1e-15);
        assert!((d[(0, 2)] - 1.0).abs() < 1e-15);
        assert_eq!(d[(2, 2)], 0.0);
        assert!(matches!(FeatureRecord::new("z", vec![0.0, 0.0]), Err(Error::ZeroVector(_))));
        let mixed = vec![f[0].clone(), FeatureRecord::new("d", vec![1.0, 0.0, 0.0]).unwrap()];
        assert!(distance_matrix(&mixed).is_err());
    }

    #[test]
    fn refine_examples() {
        let d = DMatrix::from_row_slice(2, 2, &[0.0, 0.4, 0.4, 0.0]);
        let m = ConstraintMatrix(DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]));
        let r = refine(&d, &m, 0.2).unwrap();
        assert!((r[(0, 1)] - 0.2).abs() < 1e-15);
        assert_eq!(refine(&d, &m, 0.0).unwrap(), d);
        let far = ConstraintMatrix(DMatrix::from_row_slice(2, 2, &[1.0, -1.0, -1.0, 1.0]));
        let r = refine(&d, &far, 0.2).unwrap();
        assert!((r[(0, 1)] - 0.6).abs() < 1e-15);
        let wrong = ConstraintMatrix(DMatrix::identity(3, 3));
        assert!(matches!(refine(&d, &wrong, 0.2), Err(Error::ShapeMismatch(_))));
    }

    #[test]
    fn centroid_cases() {
        let v = FeatureRecord::new("a", vec![0.6, 0.8]).unwrap();
        let c = compute_centroids(std::slice::from_ref(&v), &[0]).unwrap();
        assert!((&c[0] - v.vector()).norm() < 1e-15);
        let w = FeatureRecord::new("b", vec![-0.6, -0.8]).unwrap();
        assert!(matches!(
            compute_centroids(&[v.clone(), w], &[0, 0]),
            Err(Error::NormalizationUnderflow(0))
        ));
        assert!(matches!(
            compute_centroids(&[v.clone(), v], &[0, 2]),
            Err(Error::EmptyCluster(1))
        ));
    }

    #[test]
    fn contrastive_examples() {
        let f = DVector::from_vec(vec![1.0, 0.0]);
        let cents = vec![DVector::from_vec(vec![1.0, 0.0]), DVector::from_vec(vec![0.0, 1.0])];
        let r = contrastive_loss(&f, 0, &cents, 1.0).unwrap();
        assert!((r.loss - (1.0 + (-1.0f64).exp()).ln()).abs() < 1e-12);
        assert!((r.loss - 0.31326).abs() < 1e-5);
        let single = contrastive_loss(&f, 0, &cents[..1], 0.07).unwrap();
        assert!(single.loss.abs() < 1e-12);
        assert!(matches!(
            contrastive_loss(&f, 2, &cents, 1.0),
            Err(Error::BadLabel { label: 2, k: 2 })
        ));
    }

    #[test]
    fn contrastive_uniform_is_ln_k() {
        let f = DVector::from_vec(vec![0.0, 0.0, 1.0]);
        let cents: Vec<_> = (0..5)
            .map(|i| {
                let a = i as f64;
                DVector::from_vec(vec![a.cos(), a.sin(), 0.0])
            })
            .collect();
        let r = contrastive_loss(&f, 3, &cents, 0.07).unwrap();
        assert!((r.loss - 5f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn pair_loss_examples() {
        let r = style_pair_loss(&[1.0 - 1e-12], &[true]).unwrap();
        assert!(r.loss < 1e-11);
        let r = style_pair_loss(&[0.5; 7], &[true, false, true, true, false, false, true]).unwrap();
        assert!((r.loss - 7.0 * 2f64.ln()).abs() < 1e-12);
        assert!(style_pair_loss(&[0.5], &[]).is_err());
        // Exact 0 and 1 stay finite thanks to the clamp.
        let r = style_pair_loss(&[0.0, 1.0], &[true, false]).unwrap();
        assert!(r.loss.is_finite());
    }

    #[test]
    fn total_loss_examples() {
        assert_eq!(total_loss(0.5, 0.25, 1.0), 0.75);
        assert_eq!(total_loss(0.5, 9.0, 0.0), 0.5);
        assert_eq!(total_loss(0.5, 0.0, 3.0), 0.5);
    }

    #[test]
    fn blank_filter() {
        use Difficulty::*;
        let metas = vec![
            meta("a", "s", "e", Easy, "p", 1),
            meta("b", "s", "e", Easy, "p", 5),
            meta("c", "s", "e", Easy, "p", 9),
        ];
        assert_eq!(filter_blank(&metas, 5), vec!["b", "c"]);
        assert_eq!(filter_blank(&metas, 0).len(), 3);
        assert!(filter_blank(&metas, 10).is_empty());
    }
}

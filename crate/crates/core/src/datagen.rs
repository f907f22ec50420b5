//! Synthetic datasets: Gaussian blobs, out-of-distribution sets and a
//! stratified train/validation/test split.
//!
//! All randomness comes from [`crate::Rng`] (ChaCha8) seeded through
//! [`crate::rng_from_seed`]; the same seed regenerates identical data.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;

use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::{derive_seed, math, rng_from_seed, Rng};

/// Row label: a known class or the out-of-distribution marker.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Label {
    Class(usize),
    Ood,
}

impl Label {
    pub fn class(self) -> Option<usize> {
        match self {
            Label::Class(c) => Some(c),
            Label::Ood => None,
        }
    }

    /// Integer encoding with `-1` for OOD.
    pub fn as_i64(self) -> i64 {
        match self {
            Label::Class(c) => c as i64,
            Label::Ood => -1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub name: String,
    pub features: Matrix,
    pub labels: Vec<Label>,
}

impl Dataset {
    pub fn new(name: impl Into<String>, features: Matrix, labels: Vec<Label>) -> Result<Self> {
        if features.rows() != labels.len() {
            return Err(Error::DimensionMismatch { expected: features.rows(), found: labels.len() });
        }
        if !features.is_finite() {
            return Err(Error::NonFinite("dataset features".into()));
        }
        Ok(Self { name: name.into(), features, labels })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.cols()
    }

    /// Class indices; fails if any row is OOD.
    pub fn class_labels(&self) -> Result<Vec<usize>> {
        self.labels
            .iter()
            .enumerate()
            .map(|(i, l)| l.class().ok_or_else(|| Error::Config(format!("{}: row {i} is OOD where a class label is required", self.name))))
            .collect()
    }

    /// Rows grouped by label, each group in ascending row order.
    pub fn label_indices(&self) -> BTreeMap<Label, Vec<usize>> {
        let mut groups: BTreeMap<Label, Vec<usize>> = BTreeMap::new();
        for (i, &l) in self.labels.iter().enumerate() {
            groups.entry(l).or_default().push(i);
        }
        groups
    }

    pub fn subset(&self, name: impl Into<String>, indices: &[usize]) -> Dataset {
        Dataset { name: name.into(), features: self.features.select_rows(indices), labels: indices.iter().map(|&i| self.labels[i]).collect() }
    }
}

/// `k` points evenly spaced on a circle of `radius` in the first two
/// coordinates, zero elsewhere.
pub fn circle_centers(k: usize, dim: usize, radius: f64) -> Result<Vec<Vec<f64>>> {
    if dim < 2 {
        return Err(Error::Config(format!("circle centres need dim >= 2, got {dim}")));
    }
    if k == 0 {
        return Err(Error::Config("need at least one class".into()));
    }
    Ok((0..k)
        .map(|i| {
            let angle = 2.0 * PI * i as f64 / k as f64;
            let mut c = vec![0.0; dim];
            c[0] = radius * math::cos(angle);
            c[1] = radius * math::sin(angle);
            c
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BlobSpec {
    pub centers: Vec<Vec<f64>>,
    pub n_per_class: usize,
    pub sigma: f64,
    pub seed: u64,
}

impl BlobSpec {
    /// Five overlapping classes on a radius-4 circle in the plane.
    pub fn benchmark() -> Self {
        Self::on_circle(5, 2, 4.0, 0.9, 500, 42).expect("benchmark spec is valid")
    }

    pub fn on_circle(k: usize, dim: usize, radius: f64, sigma: f64, n_per_class: usize, seed: u64) -> Result<Self> {
        Ok(Self { centers: circle_centers(k, dim, radius)?, n_per_class, sigma, seed })
    }

    pub fn classes(&self) -> usize {
        self.centers.len()
    }

    pub fn dim(&self) -> usize {
        self.centers.first().map_or(0, Vec::len)
    }

    /// Largest distance from the origin to a centre.
    pub fn max_center_radius(&self) -> f64 {
        self.centers.iter().map(|c| norm(c)).fold(0.0, f64::max)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return Err(Error::Config(format!("sigma {} must be positive", self.sigma)));
        }
        let d = self.dim();
        if d == 0 {
            return Err(Error::Config("need at least one non-empty centre".into()));
        }
        for (i, c) in self.centers.iter().enumerate() {
            if c.len() != d {
                return Err(Error::DimensionMismatch { expected: d, found: c.len() });
            }
            if c.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!("centre {i}")));
            }
            if self.centers[..i].iter().any(|o| o == c) {
                return Err(Error::Config(format!("centre {i} duplicates an earlier centre")));
            }
        }
        Ok(())
    }
}

fn norm(v: &[f64]) -> f64 {
    math::sqrt(v.iter().map(|x| x * x).sum())
}

fn distance(a: &[f64], b: &[f64]) -> f64 {
    math::sqrt(a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum())
}

fn standard_normal(rng: &mut Rng) -> f64 {
    StandardNormal.sample(rng)
}

/// Isotropic Gaussian clusters, class-major row order.
pub fn gen_blobs(spec: &BlobSpec) -> Result<Dataset> {
    spec.validate()?;
    let d = spec.dim();
    let normal = Normal::new(0.0, spec.sigma).map_err(|e| Error::Config(format!("{e}")))?;
    let mut rng = rng_from_seed(spec.seed);
    let mut data = Vec::with_capacity(spec.classes() * spec.n_per_class * d);
    let mut labels = Vec::with_capacity(spec.classes() * spec.n_per_class);
    for (k, c) in spec.centers.iter().enumerate() {
        for _ in 0..spec.n_per_class {
            data.extend(c.iter().map(|&m| m + normal.sample(&mut rng)));
            labels.push(Label::Class(k));
        }
    }
    Dataset::new("blobs", Matrix::from_vec(labels.len(), d, data)?, labels)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OodKind {
    Ring,
    FarCluster,
    UniformBox,
}

impl OodKind {
    pub const ALL: [OodKind; 3] = [OodKind::Ring, OodKind::FarCluster, OodKind::UniformBox];

    pub fn name(self) -> &'static str {
        match self {
            OodKind::Ring => "ring",
            OodKind::FarCluster => "far_cluster",
            OodKind::UniformBox => "uniform_box",
        }
    }
}

impl core::str::FromStr for OodKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        OodKind::ALL.into_iter().find(|k| k.name() == s).ok_or_else(|| Error::Config(format!("unknown OOD kind {s:?}")))
    }
}

/// Radial band of the ring generator, as multiples of the largest centre radius.
pub const RING_BAND: (f64, f64) = (3.0, 4.0);
/// Minimum distance, in units of sigma, between far-cluster samples and every centre.
pub const FAR_MARGIN_SIGMAS: f64 = 10.0;
/// Half-width of the in-distribution box around the centres, in units of sigma.
pub const ID_BOX_SIGMAS: f64 = 3.0;
/// Side-length multiplier of the uniform box relative to the in-distribution box.
pub const UNIFORM_BOX_SCALE: f64 = 5.0;

const MAX_REJECTIONS: usize = 1_000_000;

/// Bounding box of the centres widened by `ID_BOX_SIGMAS * sigma`.
pub fn id_bounding_box(spec: &BlobSpec) -> (Vec<f64>, Vec<f64>) {
    let d = spec.dim();
    let pad = ID_BOX_SIGMAS * spec.sigma;
    let mut lo = vec![f64::INFINITY; d];
    let mut hi = vec![f64::NEG_INFINITY; d];
    for c in &spec.centers {
        for j in 0..d {
            lo[j] = lo[j].min(c[j] - pad);
            hi[j] = hi[j].max(c[j] + pad);
        }
    }
    (lo, hi)
}

fn unit_direction(rng: &mut Rng, d: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..d).map(|_| standard_normal(rng)).collect();
        let n = norm(&v);
        if n > 1e-12 {
            return v.into_iter().map(|x| x / n).collect();
        }
    }
}

/// `n` samples outside the support of the blobs described by `id`.
///
/// - `ring`: uniform direction, radius uniform in `RING_BAND` times the
///   largest centre radius.
/// - `far_cluster`: a Gaussian cluster of width `sigma` placed beyond the
///   centres; samples closer than `FAR_MARGIN_SIGMAS * sigma` to any centre
///   are rejected.
/// - `uniform_box`: uniform over the in-distribution box scaled by
///   `UNIFORM_BOX_SCALE` about its middle, rejecting points inside the
///   in-distribution box.
pub fn gen_ood(kind: OodKind, n: usize, id: &BlobSpec, seed: u64) -> Result<Dataset> {
    id.validate()?;
    let d = id.dim();
    let mut rng = rng_from_seed(seed);
    let mut data = Vec::with_capacity(n * d);
    match kind {
        OodKind::Ring => {
            let r = id.max_center_radius();
            if r <= 0.0 {
                return Err(Error::Config("ring OOD needs at least one centre away from the origin".into()));
            }
            for _ in 0..n {
                let dir = unit_direction(&mut rng, d);
                let radius = rng.random_range(RING_BAND.0 * r..=RING_BAND.1 * r);
                data.extend(dir.iter().map(|x| x * radius));
            }
        }
        OodKind::FarCluster => {
            let margin = FAR_MARGIN_SIGMAS * id.sigma;
            let dir = unit_direction(&mut rng, d);
            let offset = id.max_center_radius() + margin + 4.0 * id.sigma;
            let centre: Vec<f64> = dir.iter().map(|x| x * offset).collect();
            let mut rejected = 0;
            let mut accepted = 0;
            while accepted < n {
                let p: Vec<f64> = centre.iter().map(|&c| c + id.sigma * standard_normal(&mut rng)).collect();
                if id.centers.iter().all(|c| distance(&p, c) > margin) {
                    data.extend(p);
                    accepted += 1;
                } else {
                    rejected += 1;
                    if rejected > MAX_REJECTIONS {
                        return Err(Error::Config("far-cluster rejection sampling did not converge".into()));
                    }
                }
            }
        }
        OodKind::UniformBox => {
            let (lo, hi) = id_bounding_box(id);
            let outer: Vec<(f64, f64)> = lo
                .iter()
                .zip(&hi)
                .map(|(&l, &h)| {
                    let mid = 0.5 * (l + h);
                    let half = 0.5 * (h - l) * UNIFORM_BOX_SCALE;
                    (mid - half, mid + half)
                })
                .collect();
            let mut rejected = 0;
            let mut accepted = 0;
            while accepted < n {
                let p: Vec<f64> = outer.iter().map(|&(a, b)| rng.random_range(a..b)).collect();
                let inside = p.iter().zip(lo.iter().zip(&hi)).all(|(&x, (&l, &h))| x >= l && x <= h);
                if inside {
                    rejected += 1;
                    if rejected > MAX_REJECTIONS {
                        return Err(Error::Config("uniform-box rejection sampling did not converge".into()));
                    }
                } else {
                    data.extend(p);
                    accepted += 1;
                }
            }
        }
    }
    Dataset::new(format!("ood_{}", kind.name()), Matrix::from_vec(n, d, data)?, vec![Label::Ood; n])
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitSpec {
    pub ratios: [f64; 3],
    pub seed: u64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self { ratios: [0.6, 0.2, 0.2], seed: 42 }
    }
}

impl SplitSpec {
    pub fn validate(&self) -> Result<()> {
        if self.ratios.iter().any(|r| !(*r > 0.0 && r.is_finite())) {
            return Err(Error::Config(format!("split ratios {:?} must be positive", self.ratios)));
        }
        let sum: f64 = self.ratios.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!("split ratios sum to {sum}, expected 1")));
        }
        Ok(())
    }
}

/// Stratified split into train, validation and test sets.
///
/// Each label group is shuffled with its own derived seed and cut at the
/// rounded ratio boundaries, so every group's share is within one sample of
/// the target. Rows keep their original relative order inside each split.
pub fn split_622(dataset: &Dataset, spec: &SplitSpec) -> Result<(Dataset, Dataset, Dataset)> {
    spec.validate()?;
    if dataset.len() < 10 {
        return Err(Error::Config(format!("{} has {} rows; a split needs at least 10", dataset.name, dataset.len())));
    }
    let mut parts: [Vec<usize>; 3] = Default::default();
    for (label, mut idx) in dataset.label_indices() {
        if idx.len() < 3 {
            let class = match label {
                Label::Class(c) => c.to_string(),
                Label::Ood => "ood".into(),
            };
            return Err(Error::Stratify { class, count: idx.len() });
        }
        let stream = label.as_i64() as u64;
        idx.shuffle(&mut rng_from_seed(derive_seed(spec.seed, stream)));
        let n = idx.len() as f64;
        let n_train = libm::round(n * spec.ratios[0]) as usize;
        let n_val = (libm::round(n * (spec.ratios[0] + spec.ratios[1])) as usize).saturating_sub(n_train);
        parts[0].extend_from_slice(&idx[..n_train]);
        parts[1].extend_from_slice(&idx[n_train..n_train + n_val]);
        parts[2].extend_from_slice(&idx[n_train + n_val..]);
    }
    for p in &mut parts {
        p.sort_unstable();
    }
    let [tr, va, te] = parts;
    Ok((dataset.subset("train", &tr), dataset.subset("val", &va), dataset.subset("test", &te)))
}

//! Feature matching: attention scoring, optimal-transport partial assignment
//! and a mutual-nearest-neighbor baseline.
//!
//! The attention scorer exists to make the weighting algebra checkable: with
//! fixed projections, scores computed from weighted descriptors must equal
//! the unweighted scores multiplied by `alpha_i * alpha_j`. The assignment
//! solver enforces the sub-stochastic row/column constraints with explicit
//! dustbins, and extraction reads out hard one-to-one matches.

use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use thiserror::Error;

use crate::weighting::WeightedDescriptorSet;

pub const NIOW_MAGIC: &[u8; 4] = b"NIOW";

#[derive(Debug, Error)]
pub enum MatchError {
    #[error("descriptor dimension {0} must be even for rotary encoding")]
    OddDimension(usize),
    #[error("dimension mismatch: {0} vs {1}")]
    DimensionMismatch(usize, usize),
    #[error("non-finite value in input")]
    NonFinite,
    #[error("temperature must be positive, got {0}")]
    BadTemperature(f64),
    #[error("iteration count must be at least 1")]
    NoIterations,
    #[error("ratio must lie in (0, 1], got {0}")]
    BadRatio(f64),
    #[error("failed to access {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("bad NIOW container in {0}")]
    BadContainer(PathBuf),
}

/// Fixed query/key projections, `d x d` row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionWeights {
    dim: usize,
    w_q: Vec<f64>,
    w_k: Vec<f64>,
}

impl ProjectionWeights {
    pub fn new(dim: usize, w_q: Vec<f64>, w_k: Vec<f64>) -> Result<Self, MatchError> {
        if w_q.len() != dim * dim || w_k.len() != dim * dim {
            return Err(MatchError::DimensionMismatch(w_q.len(), dim * dim));
        }
        if !w_q.iter().chain(&w_k).all(|v| v.is_finite()) {
            return Err(MatchError::NonFinite);
        }
        Ok(Self { dim, w_q, w_k })
    }

    /// Seeded Gaussian projections with sigma = 1/sqrt(d). No training is in
    /// scope; any fixed matrices preserve the weighting identities.
    pub fn seeded_gaussian(dim: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, 1.0 / (dim as f64).sqrt()).unwrap();
        let mut sample = |n: usize| (0..n).map(|_| normal.sample(&mut rng)).collect::<Vec<f64>>();
        let w_q = sample(dim * dim);
        let w_k = sample(dim * dim);
        Self { dim, w_q, w_k }
    }

    pub fn identity(dim: usize) -> Self {
        let mut w = vec![0.0; dim * dim];
        for i in 0..dim {
            w[i * dim + i] = 1.0;
        }
        Self {
            dim,
            w_q: w.clone(),
            w_k: w,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    fn project(&self, matrix: &[f64], v: &[f64]) -> Vec<f64> {
        let d = self.dim;
        let mut out = vec![0.0; d];
        for (i, o) in out.iter_mut().enumerate() {
            let row = &matrix[i * d..(i + 1) * d];
            *o = row.iter().zip(v).map(|(a, b)| a * b).sum();
        }
        out
    }

    pub fn query(&self, v: &[f64]) -> Vec<f64> {
        self.project(&self.w_q, v)
    }

    pub fn key(&self, v: &[f64]) -> Vec<f64> {
        self.project(&self.w_k, v)
    }

    /// NIOW container: magic, u32 d, then 2*d*d little-endian float32
    /// (query projection first).
    pub fn load(path: &Path) -> Result<Self, MatchError> {
        let bytes = std::fs::read(path).map_err(|source| MatchError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let bad = || MatchError::BadContainer(path.to_path_buf());
        if bytes.len() < 8 || &bytes[0..4] != NIOW_MAGIC {
            return Err(bad());
        }
        let dim = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
        if dim == 0 || bytes.len() < 8 + 2 * dim * dim * 4 {
            return Err(bad());
        }
        let mut floats = bytes[8..]
            .chunks_exact(4)
            .map(|c| f64::from(f32::from_le_bytes(c.try_into().unwrap())));
        let w_q: Vec<f64> = floats.by_ref().take(dim * dim).collect();
        let w_k: Vec<f64> = floats.take(dim * dim).collect();
        Self::new(dim, w_q, w_k)
    }

    pub fn save(&self, path: &Path) -> Result<(), MatchError> {
        let mut bytes = Vec::with_capacity(8 + 2 * self.dim * self.dim * 4);
        bytes.extend_from_slice(NIOW_MAGIC);
        bytes.extend_from_slice(&(self.dim as u32).to_le_bytes());
        for &v in self.w_q.iter().chain(&self.w_k) {
            bytes.extend_from_slice(&(v as f32).to_le_bytes());
        }
        std::fs::write(path, bytes).map_err(|source| MatchError::Io {
            path: path.to_path_buf(),
            source,
        })
    }
}

/// Pre-activation attention or similarity scores, `rows x cols`.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreMatrix {
    rows: usize,
    cols: usize,
    values: Vec<f64>,
}

impl ScoreMatrix {
    pub fn new(rows: usize, cols: usize, values: Vec<f64>) -> Result<Self, MatchError> {
        if values.len() != rows * cols {
            return Err(MatchError::DimensionMismatch(values.len(), rows * cols));
        }
        if !values.iter().all(|v| v.is_finite()) {
            return Err(MatchError::NonFinite);
        }
        Ok(Self { rows, cols, values })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.cols + j]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }
}

/// Rotary position encoding over `d/2` two-dimensional blocks.
///
/// Block `b` rotates by `omega_b . delta_p` where the frequency vectors are
/// log-spaced over base wavelengths 4 px to 1024 px, alternating between the
/// x and y axes. Applying the rotation blockwise realizes the full `d x d`
/// rotation matrix without materializing it.
#[derive(Debug, Clone)]
pub struct RotaryEncoder {
    dim: usize,
    frequencies: Vec<(f64, f64)>,
}

const ROTARY_MIN_WAVELENGTH: f64 = 4.0;
const ROTARY_MAX_WAVELENGTH: f64 = 1024.0;

impl RotaryEncoder {
    pub fn new(dim: usize) -> Result<Self, MatchError> {
        if dim == 0 || dim % 2 != 0 {
            return Err(MatchError::OddDimension(dim));
        }
        let blocks = dim / 2;
        let per_axis = (blocks / 2).max(1);
        let mut frequencies = Vec::with_capacity(blocks);
        for b in 0..blocks {
            let rank = b / 2;
            let t = if per_axis > 1 {
                rank as f64 / (per_axis - 1) as f64
            } else {
                0.0
            };
            let wavelength =
                ROTARY_MIN_WAVELENGTH * (ROTARY_MAX_WAVELENGTH / ROTARY_MIN_WAVELENGTH).powf(t);
            let omega = std::f64::consts::TAU / wavelength;
            frequencies.push(if b % 2 == 0 { (omega, 0.0) } else { (0.0, omega) });
        }
        Ok(Self { dim, frequencies })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn frequencies(&self) -> &[(f64, f64)] {
        &self.frequencies
    }

    /// Rotate `v` in-place-free by the position delta (pixels).
    pub fn rotate(&self, v: &[f64], delta_p: (f64, f64)) -> Result<Vec<f64>, MatchError> {
        if v.len() != self.dim {
            return Err(MatchError::DimensionMismatch(v.len(), self.dim));
        }
        if !delta_p.0.is_finite() || !delta_p.1.is_finite() {
            return Err(MatchError::NonFinite);
        }
        let mut out = Vec::with_capacity(self.dim);
        for (b, &(wx, wy)) in self.frequencies.iter().enumerate() {
            let theta = wx * delta_p.0 + wy * delta_p.1;
            let (sin, cos) = theta.sin_cos();
            let a = v[2 * b];
            let c = v[2 * b + 1];
            out.push(cos * a - sin * c);
            out.push(sin * a + cos * c);
        }
        Ok(out)
    }
}

/// Immutable attention scorer: fixed projections plus fixed rotary
/// frequencies.
#[derive(Debug, Clone)]
pub struct AttentionScorer {
    projections: ProjectionWeights,
    rotary: RotaryEncoder,
}

impl AttentionScorer {
    pub fn new(projections: ProjectionWeights) -> Result<Self, MatchError> {
        let rotary = RotaryEncoder::new(projections.dim())?;
        Ok(Self { projections, rotary })
    }

    pub fn rotary(&self) -> &RotaryEncoder {
        &self.rotary
    }

    pub fn projections(&self) -> &ProjectionWeights {
        &self.projections
    }

    /// Self-attention scores within one set:
    /// entry (i, j) = q_i . R(p_j - p_i) k_j.
    pub fn self_scores(&self, set: &WeightedDescriptorSet) -> Result<ScoreMatrix, MatchError> {
        self.check_dim(set)?;
        let n = set.len();
        let queries = self.all_queries(set);
        let keys = self.all_keys(set);
        let positions = set.positions();
        let mut values = Vec::with_capacity(n * n);
        for i in 0..n {
            let (xi, yi) = positions[i];
            for j in 0..n {
                let (xj, yj) = positions[j];
                let delta = (f64::from(xj) - f64::from(xi), f64::from(yj) - f64::from(yi));
                let rotated = self.rotary.rotate(&keys[j], delta)?;
                values.push(dot(&queries[i], &rotated));
            }
        }
        ScoreMatrix::new(n, n, values)
    }

    /// Cross-attention scores between two sets, computed from key vectors:
    /// entry (i, j) = k_i^A . k_j^B.
    pub fn cross_scores(
        &self,
        set_a: &WeightedDescriptorSet,
        set_b: &WeightedDescriptorSet,
    ) -> Result<ScoreMatrix, MatchError> {
        self.check_dim(set_a)?;
        self.check_dim(set_b)?;
        let keys_a = self.all_keys(set_a);
        let keys_b = self.all_keys(set_b);
        let mut values = Vec::with_capacity(set_a.len() * set_b.len());
        for ka in &keys_a {
            for kb in &keys_b {
                values.push(dot(ka, kb));
            }
        }
        ScoreMatrix::new(set_a.len(), set_b.len(), values)
    }

    fn check_dim(&self, set: &WeightedDescriptorSet) -> Result<(), MatchError> {
        if set.is_empty() || set.dim() == self.projections.dim() {
            Ok(())
        } else {
            Err(MatchError::DimensionMismatch(
                set.dim(),
                self.projections.dim(),
            ))
        }
    }

    fn all_queries(&self, set: &WeightedDescriptorSet) -> Vec<Vec<f64>> {
        set.weighted()
            .rows()
            .map(|row| self.projections.query(&to_f64(row)))
            .collect()
    }

    fn all_keys(&self, set: &WeightedDescriptorSet) -> Vec<Vec<f64>> {
        set.weighted()
            .rows()
            .map(|row| self.projections.key(&to_f64(row)))
            .collect()
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn to_f64(v: &[f32]) -> Vec<f64> {
    v.iter().map(|&x| f64::from(x)).collect()
}

/// Plain dot-product similarity of weighted descriptors; the input to the
/// assignment solver.
pub fn similarity_matrix(
    set_a: &WeightedDescriptorSet,
    set_b: &WeightedDescriptorSet,
) -> Result<ScoreMatrix, MatchError> {
    if !set_a.is_empty() && !set_b.is_empty() && set_a.dim() != set_b.dim() {
        return Err(MatchError::DimensionMismatch(set_a.dim(), set_b.dim()));
    }
    let mut values = Vec::with_capacity(set_a.len() * set_b.len());
    for da in set_a.weighted().rows() {
        for db in set_b.weighted().rows() {
            values.push(
                da.iter()
                    .zip(db)
                    .map(|(&x, &y)| f64::from(x) * f64::from(y))
                    .sum(),
            );
        }
    }
    ScoreMatrix::new(set_a.len(), set_b.len(), values)
}

/// Soft partial assignment over `(n_A + 1) x (n_B + 1)` entries including one
/// dustbin row and column.
#[derive(Debug, Clone)]
pub struct Assignment {
    rows: usize,
    cols: usize,
    matrix: Vec<f64>,
    tolerance: f64,
}

pub const ASSIGNMENT_TOLERANCE: f64 = 1e-3;

impl Assignment {
    /// Number of non-dustbin rows.
    pub fn rows(&self) -> usize {
        self.rows
    }

    /// Number of non-dustbin columns.
    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn tolerance(&self) -> f64 {
        self.tolerance
    }

    /// Entry access over the augmented matrix; index `rows`/`cols` addresses
    /// the dustbin row/column.
    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.matrix[i * (self.cols + 1) + j]
    }

    /// Row sum over non-dustbin columns.
    pub fn row_sum(&self, i: usize) -> f64 {
        (0..self.cols).map(|j| self.get(i, j)).sum()
    }

    /// Column sum over non-dustbin rows.
    pub fn col_sum(&self, j: usize) -> f64 {
        (0..self.rows).map(|i| self.get(i, j)).sum()
    }
}

/// Entropic partial-assignment solver.
///
/// Scores are augmented with a dustbin row and column at `dustbin_score`,
/// exponentiated at the given temperature (with per-row max subtraction as
/// the overflow guard) and then alternately rescaled: any non-dustbin row or
/// column whose sum (dustbin entry included) exceeds one is divided by that
/// sum. Scaling only ever shrinks mass, so every entry stays in `[0, 1]` and
/// both sub-stochastic constraints hold on return.
pub fn sinkhorn_assign(
    scores: &ScoreMatrix,
    dustbin_score: f64,
    temperature: f64,
    iterations: usize,
) -> Result<Assignment, MatchError> {
    if !(temperature > 0.0) || !temperature.is_finite() {
        return Err(MatchError::BadTemperature(temperature));
    }
    if iterations == 0 {
        return Err(MatchError::NoIterations);
    }
    if !dustbin_score.is_finite() {
        return Err(MatchError::NonFinite);
    }
    let n_a = scores.rows();
    let n_b = scores.cols();
    let stride = n_b + 1;
    let mut m = vec![0.0f64; (n_a + 1) * stride];
    for i in 0..=n_a {
        for j in 0..=n_b {
            m[i * stride + j] = if i < n_a && j < n_b {
                scores.get(i, j)
            } else {
                dustbin_score
            };
        }
    }
    // Exponentiate with per-row max subtraction.
    for i in 0..=n_a {
        let row = &mut m[i * stride..(i + 1) * stride];
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        for v in row.iter_mut() {
            *v = ((*v - max) / temperature).exp();
        }
    }

    for _ in 0..iterations {
        for i in 0..n_a {
            let row = &mut m[i * stride..(i + 1) * stride];
            let sum: f64 = row.iter().sum();
            if sum > 1.0 {
                for v in row.iter_mut() {
                    *v /= sum;
                }
            }
        }
        for j in 0..n_b {
            let sum: f64 = (0..=n_a).map(|i| m[i * stride + j]).sum();
            if sum > 1.0 {
                for i in 0..=n_a {
                    m[i * stride + j] /= sum;
                }
            }
        }
    }

    Ok(Assignment {
        rows: n_a,
        cols: n_b,
        matrix: m,
        tolerance: ASSIGNMENT_TOLERANCE,
    })
}

/// One hard match with its confidence.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Match {
    pub index_a: usize,
    pub index_b: usize,
    pub confidence: f64,
}

/// Hard one-to-one matches; each side index appears at most once.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct MatchSet {
    pub pairs: Vec<Match>,
}

impl MatchSet {
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }
}

/// Keep (k, l) iff `m_kl` is the strict maximum of both its row and its
/// column among non-dustbin entries and clears `min_confidence`.
pub fn extract_matches(
    assignment: &Assignment,
    scores: &ScoreMatrix,
    min_confidence: f64,
) -> Result<MatchSet, MatchError> {
    if assignment.rows() != scores.rows() || assignment.cols() != scores.cols() {
        return Err(MatchError::DimensionMismatch(
            assignment.rows() * assignment.cols(),
            scores.rows() * scores.cols(),
        ));
    }
    let mut pairs = Vec::new();
    for k in 0..assignment.rows() {
        let mut best_l = None;
        let mut best = f64::NEG_INFINITY;
        let mut strict = false;
        for l in 0..assignment.cols() {
            let v = assignment.get(k, l);
            if v > best {
                best = v;
                best_l = Some(l);
                strict = true;
            } else if v == best {
                strict = false;
            }
        }
        let Some(l) = best_l else { continue };
        if !strict || best < min_confidence {
            continue;
        }
        // Strict column maximum as well.
        let col_ok = (0..assignment.rows()).all(|k2| k2 == k || assignment.get(k2, l) < best);
        if col_ok {
            pairs.push(Match {
                index_a: k,
                index_b: l,
                confidence: best.clamp(0.0, 1.0),
            });
        }
    }
    Ok(MatchSet { pairs })
}

/// Mutual nearest neighbor matching on weighted descriptors with a
/// similarity ratio test (second best <= ratio * best, tested in the A->B
/// direction) and a similarity floor.
pub fn mnn_match(
    set_a: &WeightedDescriptorSet,
    set_b: &WeightedDescriptorSet,
    ratio: f64,
    min_similarity: f64,
) -> Result<MatchSet, MatchError> {
    if !(ratio > 0.0 && ratio <= 1.0) {
        return Err(MatchError::BadRatio(ratio));
    }
    let sims = similarity_matrix(set_a, set_b)?;
    let n_a = sims.rows();
    let n_b = sims.cols();
    if n_a == 0 || n_b == 0 {
        return Ok(MatchSet::default());
    }

    // Reverse nearest neighbors (first index wins on ties).
    let mut best_for_b: Vec<usize> = vec![0; n_b];
    let mut best_sim_b: Vec<f64> = vec![f64::NEG_INFINITY; n_b];
    for i in 0..n_a {
        for j in 0..n_b {
            let s = sims.get(i, j);
            if s > best_sim_b[j] {
                best_sim_b[j] = s;
                best_for_b[j] = i;
            }
        }
    }

    let mut pairs = Vec::new();
    for i in 0..n_a {
        let mut best = f64::NEG_INFINITY;
        let mut second = f64::NEG_INFINITY;
        let mut best_j = 0usize;
        for j in 0..n_b {
            let s = sims.get(i, j);
            if s > best {
                second = best;
                best = s;
                best_j = j;
            } else if s > second {
                second = s;
            }
        }
        if best < min_similarity {
            continue;
        }
        if second > ratio * best {
            continue;
        }
        if best_for_b[best_j] != i {
            continue;
        }
        pairs.push(Match {
            index_a: i,
            index_b: best_j,
            confidence: best.clamp(0.0, 1.0),
        });
    }
    Ok(MatchSet { pairs })
}

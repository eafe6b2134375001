//! Diffusion-map embedding of a track set.
//!
//! The transition matrix `P = D⁻¹W` is similar to `S = D^{-1/2} W D^{-1/2}`;
//! eigenpairs are computed on `S` and mapped back with `ψ = v / √φ₀`, which
//! makes `ψ₀ ≡ 1` and normalizes `Σ φ₀ ψ_j² = 1`.

mod cv;

pub use cv::{cross_validate, default_grid, CvCandidate, CvConfig, CvReport};

use std::sync::Arc;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::trackdata::{Point, RegularTrack, TrackMetric, TrackSet};

/// Eigenvalues below this magnitude cannot be inverted by the extension.
pub const MIN_EXTENSION_EIGENVALUE: f64 = 1e-12;

/// A point in diffusion coordinates: `coords[j-1] = λ_j^t ψ_j(x)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmbeddedPoint(pub Vec<f64>);

impl EmbeddedPoint {
    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn coords(&self) -> &[f64] {
        &self.0
    }

    pub fn sq_distance(&self, other: &[f64]) -> f64 {
        self.0.iter().zip(other).map(|(a, b)| (a - b) * (a - b)).sum()
    }
}

/// Kernel graph, Markov walk and full spectrum; independent of `t` and `m`.
#[derive(Debug)]
pub struct Walk {
    metric: TrackMetric,
    epsilon: f64,
    kernel: DMatrix<f64>,
    transition: DMatrix<f64>,
    eigenvalues: Vec<f64>,
    /// Column `j` holds `ψ_j` evaluated at the training tracks.
    eigenvectors: DMatrix<f64>,
    stationary: Vec<f64>,
    /// Training points flattened track-major for the extension loop.
    flat: Vec<Point>,
}

impl Walk {
    /// Kernel `w = exp(-Δ²/ε)`, row-normalized walk and its eigendecomposition.
    pub fn new(tracks: &TrackSet, metric: TrackMetric, epsilon: f64) -> Result<Self> {
        let n = tracks.len();
        if !(epsilon > 0.0 && epsilon.is_finite()) {
            return Err(Error::InvalidParameter(format!("epsilon must be positive, got {epsilon}")));
        }
        if n == 0 {
            return Err(Error::InvalidParameter("empty track set".into()));
        }
        let flat: Vec<Point> = tracks.tracks().iter().flat_map(|t| t.points.iter().copied()).collect();
        let p = tracks.points_per_track();
        let mut kernel = DMatrix::<f64>::identity(n, n);
        let mut duplicates = 0usize;
        for i in 0..n {
            for j in (i + 1)..n {
                let d = metric.between(&flat[i * p..(i + 1) * p], &flat[j * p..(j + 1) * p]);
                if !d.is_finite() {
                    return Err(Error::NonFinite(format!("distance between tracks {i} and {j}")));
                }
                if d == 0.0 {
                    duplicates += 1;
                }
                let w = (-d * d / epsilon).exp();
                kernel[(i, j)] = w;
                kernel[(j, i)] = w;
            }
        }
        if duplicates > 0 {
            log::warn!("{duplicates} duplicate track pair(s); kernel is rank deficient");
        }

        let degree: Vec<f64> = (0..n).map(|i| kernel.row(i).sum()).collect();
        let volume: f64 = degree.iter().sum();
        let stationary: Vec<f64> = degree.iter().map(|d| d / volume).collect();
        if let Some(index) = stationary.iter().position(|&s| s <= 0.0) {
            return Err(Error::SingularStationary { index });
        }

        let inv_sqrt: Vec<f64> = degree.iter().map(|d| 1.0 / d.sqrt()).collect();
        let sym = faer::Mat::<f64>::from_fn(n, n, |i, j| kernel[(i, j)] * (inv_sqrt[i] * inv_sqrt[j]));
        let transition = DMatrix::from_fn(n, n, |i, j| kernel[(i, j)] / degree[i]);

        let eig = sym
            .self_adjoint_eigen(faer::Side::Lower)
            .map_err(|e| Error::Invariant(format!("eigendecomposition failed: {e:?}")))?;
        let values = eig.S().column_vector();
        let vectors = eig.U();
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| values[b].abs().total_cmp(&values[a].abs()).then(a.cmp(&b)));

        let sqrt_stat: Vec<f64> = stationary.iter().map(|s| s.sqrt()).collect();
        let mut eigenvalues = Vec::with_capacity(n);
        let mut eigenvectors = DMatrix::<f64>::zeros(n, n);
        for (col, &k) in order.iter().enumerate() {
            eigenvalues.push(values[k]);
            let mut psi: Vec<f64> = (0..n).map(|i| vectors[(i, k)] / sqrt_stat[i]).collect();
            orient(&mut psi);
            eigenvectors.column_mut(col).copy_from_slice(&psi);
        }

        Ok(Walk {
            metric,
            epsilon,
            kernel,
            transition,
            eigenvalues,
            eigenvectors,
            stationary,
            flat,
        })
    }

    pub fn len(&self) -> usize {
        self.stationary.len()
    }

    pub fn is_empty(&self) -> bool {
        self.stationary.is_empty()
    }

    pub fn kernel(&self) -> &DMatrix<f64> {
        &self.kernel
    }

    pub fn transition(&self) -> &DMatrix<f64> {
        &self.transition
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    pub fn eigenvectors(&self) -> &DMatrix<f64> {
        &self.eigenvectors
    }

    pub fn stationary(&self) -> &[f64] {
        &self.stationary
    }

    /// Squared diffusion distance at scale `t` by explicit propagation of the walk.
    pub fn diffusion_distance_exact(&self, i: usize, j: usize, t: u32) -> Result<f64> {
        if let Some(index) = self.stationary.iter().position(|&p| p <= 0.0) {
            return Err(Error::SingularStationary { index });
        }
        let n = self.len();
        let propagate = |start: usize| {
            let mut row = vec![0.0; n];
            row[start] = 1.0;
            for _ in 0..t {
                let mut next = vec![0.0; n];
                for (x, &mass) in row.iter().enumerate() {
                    if mass != 0.0 {
                        for (z, acc) in next.iter_mut().enumerate() {
                            *acc += mass * self.transition[(x, z)];
                        }
                    }
                }
                row = next;
            }
            row
        };
        let (pi, pj) = (propagate(i), propagate(j));
        Ok((0..n).map(|z| (pi[z] - pj[z]).powi(2) / self.stationary[z]).sum())
    }

    /// Squared diffusion distance at scale `t` from the first `terms` nontrivial eigenpairs.
    pub fn diffusion_distance_spectral(&self, i: usize, j: usize, t: u32, terms: usize) -> f64 {
        let t2 = 2 * t as i32;
        (1..=terms.min(self.len() - 1))
            .map(|k| {
                self.eigenvalues[k].powi(t2) * (self.eigenvectors[(i, k)] - self.eigenvectors[(j, k)]).powi(2)
            })
            .sum()
    }
}

/// A built diffusion map. Cheap to clone; `with_steps` and `with_dimension`
/// share the underlying spectrum.
#[derive(Clone, Debug)]
pub struct DiffusionModel {
    tracks: Arc<TrackSet>,
    metric: TrackMetric,
    epsilon: f64,
    t: u32,
    m: usize,
    spectrum: Arc<Walk>,
}

impl DiffusionModel {
    /// Builds the kernel graph, walk and full spectrum for `tracks`.
    pub fn build(tracks: &TrackSet, epsilon: f64, t: u32, m: usize) -> Result<Self> {
        Self::build_with_metric(tracks, TrackMetric::default(), epsilon, t, m)
    }

    pub fn build_with_metric(tracks: &TrackSet, metric: TrackMetric, epsilon: f64, t: u32, m: usize) -> Result<Self> {
        let n = tracks.len();
        if t < 1 {
            return Err(Error::InvalidParameter("t must be at least 1".into()));
        }
        if m < 1 || n < m + 2 {
            return Err(Error::InvalidParameter(format!(
                "need 1 <= m and n >= m + 2 (n = {n}, m = {m})"
            )));
        }
        let walk = Walk::new(tracks, metric, epsilon)?;
        Self::from_walk(Arc::new(walk), Arc::new(tracks.clone()), t, m)
    }

    fn from_walk(walk: Arc<Walk>, tracks: Arc<TrackSet>, t: u32, m: usize) -> Result<Self> {
        let model = DiffusionModel {
            tracks,
            metric: walk.metric,
            epsilon: walk.epsilon,
            t,
            m,
            spectrum: walk,
        };
        model.check_invariants()?;
        Ok(model)
    }

    /// Same spectrum, different number of diffusion steps.
    pub fn with_steps(&self, t: u32) -> Result<Self> {
        if t < 1 {
            return Err(Error::InvalidParameter("t must be at least 1".into()));
        }
        Ok(DiffusionModel { t, ..self.clone() })
    }

    /// Same spectrum, different embedding dimension.
    pub fn with_dimension(&self, m: usize) -> Result<Self> {
        if m < 1 || self.len() < m + 2 {
            return Err(Error::InvalidParameter(format!("invalid embedding dimension {m}")));
        }
        let model = DiffusionModel { m, ..self.clone() };
        model.check_invariants()?;
        Ok(model)
    }

    pub fn len(&self) -> usize {
        self.tracks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tracks.is_empty()
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn steps(&self) -> u32 {
        self.t
    }

    pub fn dimension(&self) -> usize {
        self.m
    }

    pub fn metric(&self) -> TrackMetric {
        self.metric
    }

    pub fn tracks(&self) -> &TrackSet {
        &self.tracks
    }

    pub fn kernel(&self) -> &DMatrix<f64> {
        &self.spectrum.kernel
    }

    pub fn transition(&self) -> &DMatrix<f64> {
        &self.spectrum.transition
    }

    /// All `n` eigenvalues, `λ₀ = 1` first, then by decreasing magnitude.
    pub fn eigenvalues(&self) -> &[f64] {
        &self.spectrum.eigenvalues
    }

    /// `ψ_j` evaluated at training track `i`.
    pub fn psi(&self, j: usize, i: usize) -> f64 {
        self.spectrum.eigenvectors[(i, j)]
    }

    pub fn eigenvectors(&self) -> &DMatrix<f64> {
        &self.spectrum.eigenvectors
    }

    pub fn stationary(&self) -> &[f64] {
        &self.spectrum.stationary
    }

    /// Verifies walk, spectrum and stationary-distribution invariants.
    pub fn check_invariants(&self) -> Result<()> {
        let s = &*self.spectrum;
        let n = self.len();
        for i in 0..n {
            let sum = s.transition.row(i).sum();
            if (sum - 1.0).abs() > 1e-12 {
                return Err(Error::Invariant(format!("row {i} of P sums to {sum}")));
            }
        }
        if (s.eigenvalues[0] - 1.0).abs() > 1e-10 {
            return Err(Error::Invariant(format!("leading eigenvalue {}", s.eigenvalues[0])));
        }
        if let Some(l) = s.eigenvalues.iter().find(|l| l.abs() > 1.0 + 1e-10) {
            return Err(Error::Invariant(format!("eigenvalue {l} exceeds 1")));
        }
        for j in 0..=self.m {
            let psi = s.eigenvectors.column(j);
            let residual = (&s.transition * psi - psi * s.eigenvalues[j]).amax();
            if residual > 1e-8 {
                return Err(Error::Invariant(format!("eigenpair {j} residual {residual:e}")));
            }
        }
        let total: f64 = s.stationary.iter().sum();
        if s.stationary.iter().any(|&p| p < 0.0) || (total - 1.0).abs() > 1e-12 {
            return Err(Error::Invariant("stationary distribution not a probability vector".into()));
        }
        for z in 0..n {
            let flow: f64 = (0..n).map(|x| s.stationary[x] * s.transition[(x, z)]).sum();
            if (flow - s.stationary[z]).abs() > 1e-8 {
                return Err(Error::Invariant(format!("stationary balance fails at {z}")));
            }
        }
        Ok(())
    }

    /// Diffusion coordinates of every training track, ψ₀ excluded.
    pub fn embed(&self) -> Vec<EmbeddedPoint> {
        (0..self.len()).map(|i| self.embed_index(i)).collect()
    }

    pub fn embed_index(&self, i: usize) -> EmbeddedPoint {
        let t = self.t as i32;
        EmbeddedPoint(
            (1..=self.m)
                .map(|j| self.spectrum.eigenvalues[j].powi(t) * self.psi(j, i))
                .collect(),
        )
    }

    /// Training embedding as a row-major `n × m` buffer.
    pub fn embedding_flat(&self) -> Vec<f64> {
        self.embed().into_iter().flat_map(|e| e.0).collect()
    }

    /// Squared diffusion distance by explicit `t`-fold propagation of the walk.
    pub fn diffusion_distance_exact(&self, i: usize, j: usize) -> Result<f64> {
        self.spectrum.diffusion_distance_exact(i, j, self.t)
    }

    /// Squared diffusion distance from the first `terms` nontrivial eigenpairs.
    pub fn diffusion_distance_spectral(&self, i: usize, j: usize, terms: usize) -> f64 {
        self.spectrum.diffusion_distance_spectral(i, j, self.t, terms)
    }

    pub fn walk(&self) -> &Walk {
        &self.spectrum
    }

    /// Transition probabilities from an out-of-sample track to every training track.
    pub fn extension_row(&self, y: &RegularTrack) -> Result<Vec<f64>> {
        let p = self.tracks.points_per_track();
        if y.len() != p {
            return Err(Error::Dimension {
                expected: p,
                found: y.len(),
            });
        }
        let mut row = vec![0.0; self.len()];
        self.fill_extension_row(&y.points, &mut row)?;
        Ok(row)
    }

    fn fill_extension_row(&self, y: &[Point], row: &mut [f64]) -> Result<()> {
        let p = y.len();
        let flat = &self.spectrum.flat;
        let mut min_sq = f64::INFINITY;
        for (z, slot) in row.iter_mut().enumerate() {
            let d = self.metric.between(y, &flat[z * p..(z + 1) * p]);
            *slot = d * d;
            min_sq = min_sq.min(*slot);
        }
        if !min_sq.is_finite() {
            return Err(Error::NonFinite("distance to training tracks".into()));
        }
        // Shifting by the nearest distance leaves the normalized row unchanged
        // and keeps at least one weight at exactly 1.
        let mut total = 0.0;
        for slot in row.iter_mut() {
            *slot = (-(*slot - min_sq) / self.epsilon).exp();
            total += *slot;
        }
        for slot in row.iter_mut() {
            *slot /= total;
        }
        Ok(())
    }

    /// Nyström extension: `coords[j-1] = λ_j^{t-1} Σ_z p(y, z) ψ_j(z)`.
    pub fn nystrom_extend(&self, y: &RegularTrack) -> Result<EmbeddedPoint> {
        let row = self.extension_row(y)?;
        self.extend_from_row(&row)
    }

    pub(crate) fn extend_from_row(&self, row: &[f64]) -> Result<EmbeddedPoint> {
        let s = &*self.spectrum;
        let mut out = Vec::with_capacity(self.m);
        for j in 1..=self.m {
            let lambda = s.eigenvalues[j];
            if lambda.abs() < MIN_EXTENSION_EIGENVALUE {
                return Err(Error::IllConditionedExtension { index: j, value: lambda });
            }
            let psi = s.eigenvectors.column(j);
            let dot: f64 = row.iter().zip(psi.iter()).map(|(p, v)| p * v).sum();
            out.push(lambda.powi(self.t as i32 - 1) * dot);
        }
        Ok(EmbeddedPoint(out))
    }

    /// Reusable extension state for scoring many candidate tracks.
    pub fn extender(&self) -> Result<Extender<'_>> {
        let s = &*self.spectrum;
        let n = self.len();
        let mut scale = Vec::with_capacity(self.m);
        for j in 1..=self.m {
            let lambda = s.eigenvalues[j];
            if lambda.abs() < MIN_EXTENSION_EIGENVALUE {
                return Err(Error::IllConditionedExtension { index: j, value: lambda });
            }
            scale.push(lambda.powi(self.t as i32 - 1));
        }
        let mut psi = Vec::with_capacity(n * self.m);
        for i in 0..n {
            for j in 1..=self.m {
                psi.push(s.eigenvectors[(i, j)]);
            }
        }
        Ok(Extender {
            model: self,
            psi,
            scale,
        })
    }

    /// Parameters and spectrum summary for reproducibility dumps.
    pub fn summary(&self) -> ModelSummary {
        ModelSummary {
            epsilon: self.epsilon,
            t: self.t,
            m: self.m,
            n: self.len(),
            points_per_track: self.tracks.points_per_track(),
            lon_scaling: self.metric.lon_scaling,
            eigenvalues: self.spectrum.eigenvalues.clone(),
            trackset_hash: self.tracks.content_hash(),
        }
    }
}

/// Nyström extension with the eigenvector block laid out row-major.
pub struct Extender<'a> {
    model: &'a DiffusionModel,
    psi: Vec<f64>,
    scale: Vec<f64>,
}

impl Extender<'_> {
    /// Extends the point sequence `y` into `out` (length `m`), using `row` as scratch.
    pub fn extend_into(&self, y: &[Point], row: &mut [f64], out: &mut [f64]) -> Result<()> {
        self.model.fill_extension_row(y, row)?;
        let m = self.scale.len();
        out.iter_mut().for_each(|o| *o = 0.0);
        for (z, &pz) in row.iter().enumerate() {
            if pz != 0.0 {
                let psi = &self.psi[z * m..(z + 1) * m];
                for (o, v) in out.iter_mut().zip(psi) {
                    *o += pz * v;
                }
            }
        }
        for (o, s) in out.iter_mut().zip(&self.scale) {
            *o *= s;
        }
        Ok(())
    }

    pub fn model(&self) -> &DiffusionModel {
        self.model
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelSummary {
    pub epsilon: f64,
    pub t: u32,
    pub m: usize,
    pub n: usize,
    pub points_per_track: usize,
    pub lon_scaling: bool,
    pub eigenvalues: Vec<f64>,
    pub trackset_hash: String,
}

/// Flip so the largest-magnitude entry (first on ties) is positive.
fn orient(v: &mut [f64]) {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if x.abs() > v[best].abs() {
            best = i;
        }
    }
    if v[best] < 0.0 {
        v.iter_mut().for_each(|x| *x = -*x);
    }
}

/// Upper-triangle squared track distances, row by row.
pub fn pairwise_sq_distances(tracks: &TrackSet, metric: TrackMetric) -> Vec<f64> {
    let t = tracks.tracks();
    let mut out = Vec::with_capacity(t.len() * t.len().saturating_sub(1) / 2);
    for i in 0..t.len() {
        for j in (i + 1)..t.len() {
            let d = metric.between(&t[i].points, &t[j].points);
            out.push(d * d);
        }
    }
    out
}

/// Median pairwise squared distance, a scale-adaptive default for `epsilon`.
pub fn median_sq_distance(tracks: &TrackSet) -> f64 {
    crate::stats::quantile(&pairwise_sq_distances(tracks, TrackMetric::default()), 0.5)
}

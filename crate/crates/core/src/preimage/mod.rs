//! Pre-images: mapping diffusion-space points back to tracks.
//!
//! Candidates are convex combinations of training tracks, weighted by a
//! softmax of embedded distances, then dilated about the first or last point.
//! The candidate whose Nyström extension lands closest to the target wins.

use serde::{Deserialize, Serialize};

use crate::diffusion::{DiffusionModel, EmbeddedPoint};
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::stats::{log_space, quantile_sorted};
use crate::trackdata::{Point, RegularTrack, TrackSet};

pub const MIN_STRETCH: f64 = 0.75;
pub const MAX_STRETCH: f64 = 1.5;
/// Weights below this are dropped before combining.
pub const WEIGHT_CUTOFF: f64 = 1e-10;

/// Fixed point of a stretch.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Anchor {
    Origination,
    Lysis,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SigmaGrid {
    /// The `σ → 0` limit, then nine log-spaced values over `[0.1·q25, 10·q75]`
    /// of squared embedded distances.
    Auto,
    /// Explicit values; `0` stands for the `σ → 0` limit.
    Fixed(Vec<f64>),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PreimageConfig {
    pub sigmas: SigmaGrid,
    pub stretches: Vec<f64>,
    pub anchors: Vec<Anchor>,
}

impl Default for PreimageConfig {
    fn default() -> Self {
        PreimageConfig {
            sigmas: SigmaGrid::Auto,
            stretches: default_stretches(),
            anchors: vec![Anchor::Origination, Anchor::Lysis],
        }
    }
}

/// 0.75, 0.80, …, 1.50.
pub fn default_stretches() -> Vec<f64> {
    (0..=15).map(|k| (75.0 + 5.0 * k as f64) / 100.0).collect()
}

impl PreimageConfig {
    /// A config that performs no search.
    pub fn single(sigma: f64, stretch: f64, anchor: Anchor) -> Self {
        PreimageConfig {
            sigmas: SigmaGrid::Fixed(vec![sigma]),
            stretches: vec![stretch],
            anchors: vec![anchor],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.stretches.is_empty() || self.anchors.is_empty() {
            return Err(Error::InvalidParameter("pre-image grids must be nonempty".into()));
        }
        if let Some(s) = self.stretches.iter().find(|s| !(MIN_STRETCH..=MAX_STRETCH).contains(*s)) {
            return Err(Error::InvalidParameter(format!("stretch {s} outside [0.75, 1.5]")));
        }
        if let SigmaGrid::Fixed(s) = &self.sigmas {
            if s.is_empty() || s.iter().any(|v| !(*v >= 0.0 && v.is_finite())) {
                return Err(Error::InvalidParameter("sigma grid must be nonempty and nonnegative".into()));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PreimageResult {
    pub track: RegularTrack,
    pub weights: Vec<f64>,
    pub sigma: f64,
    pub stretch: f64,
    pub anchor: Anchor,
    /// `‖ζ − Ψ̂(track)‖²`.
    pub objective: f64,
}

/// Softmax weights `exp(-‖ζ − Ψ(x_i)‖²/σ)` normalized over the training set.
pub fn weights(zeta: &EmbeddedPoint, model: &DiffusionModel, sigma: f64) -> Result<Vec<f64>> {
    if !(sigma > 0.0) {
        return Err(Error::InvalidParameter(format!("sigma must be positive, got {sigma}")));
    }
    softmax_weights(zeta.coords(), &model.embedding_flat(), model.dimension(), sigma)
}

/// `sigma == 0` gives the limit: equal weight on the nearest embedded points.
fn softmax_weights(zeta: &[f64], embedding: &[f64], m: usize, sigma: f64) -> Result<Vec<f64>> {
    if !(sigma >= 0.0) {
        return Err(Error::InvalidParameter(format!("sigma must be nonnegative, got {sigma}")));
    }
    if zeta.len() != m {
        return Err(Error::Dimension {
            expected: m,
            found: zeta.len(),
        });
    }
    let mut w: Vec<f64> = embedding
        .chunks_exact(m)
        .map(|e| e.iter().zip(zeta).map(|(a, b)| (a - b) * (a - b)).sum::<f64>())
        .collect();
    let min = w.iter().copied().filter(|d| d.is_finite()).fold(f64::INFINITY, f64::min);
    if !min.is_finite() {
        return Err(Error::NonFinite("all embedded distances are non-finite".into()));
    }
    let mut total = 0.0;
    for d in w.iter_mut() {
        *d = if sigma == 0.0 {
            f64::from(u8::from(*d == min))
        } else if d.is_finite() {
            (-(*d - min) / sigma).exp()
        } else {
            0.0
        };
        total += *d;
    }
    w.iter_mut().for_each(|v| *v /= total);
    Ok(w)
}

/// Drops negligible weights and renormalizes.
fn truncate(w: &mut [f64]) {
    let mut total = 0.0;
    for v in w.iter_mut() {
        if *v < WEIGHT_CUTOFF {
            *v = 0.0;
        }
        total += *v;
    }
    w.iter_mut().for_each(|v| *v /= total);
}

/// Convex combination of `tracks`, then dilation by `stretch` about the anchor.
pub fn combine(weights: &[f64], tracks: &TrackSet, stretch: f64, anchor: Anchor) -> Result<RegularTrack> {
    if weights.len() != tracks.len() {
        return Err(Error::Dimension {
            expected: tracks.len(),
            found: weights.len(),
        });
    }
    if !(MIN_STRETCH..=MAX_STRETCH).contains(&stretch) {
        return Err(Error::InvalidParameter(format!("stretch {stretch} outside [0.75, 1.5]")));
    }
    let mut mean = vec![[0.0; 2]; tracks.points_per_track()];
    average_into(weights, tracks, &mut mean);
    let mut out = mean.clone();
    dilate(&mean, stretch, anchor, &mut out);
    Ok(RegularTrack::new("preimage", out))
}

fn average_into(weights: &[f64], tracks: &TrackSet, out: &mut [Point]) {
    out.iter_mut().for_each(|p| *p = [0.0; 2]);
    for (w, t) in weights.iter().zip(tracks.tracks()) {
        if *w != 0.0 {
            for (o, p) in out.iter_mut().zip(&t.points) {
                o[0] += w * p[0];
                o[1] += w * p[1];
            }
        }
    }
}

fn dilate(base: &[Point], stretch: f64, anchor: Anchor, out: &mut [Point]) {
    let a = match anchor {
        Anchor::Origination => base[0],
        Anchor::Lysis => base[base.len() - 1],
    };
    for (o, p) in out.iter_mut().zip(base) {
        *o = [a[0] + stretch * (p[0] - a[0]), a[1] + stretch * (p[1] - a[1])];
    }
    // The anchor itself is reproduced bit-exactly.
    match anchor {
        Anchor::Origination => out[0] = a,
        Anchor::Lysis => out[base.len() - 1] = a,
    }
}

/// Pre-image solver bound to one model; reuse it for many targets.
pub struct Preimager<'a> {
    model: &'a DiffusionModel,
    extender: crate::diffusion::Extender<'a>,
    embedding: Vec<f64>,
    sigmas: Vec<f64>,
    /// Stretch values in tie-break order: nearest 1 first, then smaller.
    stretches: Vec<f64>,
    anchors: Vec<Anchor>,
    exec: Exec,
}

impl<'a> Preimager<'a> {
    pub fn new(model: &'a DiffusionModel, config: &PreimageConfig) -> Result<Self> {
        config.validate()?;
        let embedding = model.embedding_flat();
        let mut sigmas = match &config.sigmas {
            SigmaGrid::Fixed(s) => s.clone(),
            SigmaGrid::Auto => auto_sigmas(&embedding, model.dimension())?,
        };
        sigmas.sort_by(f64::total_cmp);
        sigmas.dedup();
        let mut stretches = config.stretches.clone();
        stretches.sort_by(|a, b| (a - 1.0).abs().total_cmp(&(b - 1.0).abs()).then(a.total_cmp(b)));
        stretches.dedup();
        let mut anchors = config.anchors.clone();
        anchors.sort();
        anchors.dedup();
        Ok(Preimager {
            model,
            extender: model.extender()?,
            embedding,
            sigmas,
            stretches,
            anchors,
            exec: Exec::Sequential,
        })
    }

    /// Evaluate the sigma grid with the given strategy (default sequential).
    pub fn with_exec(mut self, exec: Exec) -> Self {
        self.exec = exec;
        self
    }

    pub fn sigmas(&self) -> &[f64] {
        &self.sigmas
    }

    pub fn stretches(&self) -> &[f64] {
        &self.stretches
    }

    pub fn anchors(&self) -> &[Anchor] {
        &self.anchors
    }

    /// Grid search over `(σ, stretch, anchor)`; ties go to the earliest
    /// candidate in (smaller σ, stretch nearer 1, origination) order.
    pub fn solve(&self, zeta: &EmbeddedPoint) -> Result<PreimageResult> {
        let m = self.model.dimension();
        let tracks = self.model.tracks();
        let per_sigma = self.exec.try_map(self.sigmas.len(), |k| self.best_for_sigma(zeta, k))?;

        let mut best: Option<(f64, usize, usize, usize)> = None;
        for (k, (obj, si, ai)) in per_sigma.into_iter().enumerate() {
            if best.is_none_or(|b| obj < b.0) {
                best = Some((obj, k, si, ai));
            }
        }
        let (objective, k, si, ai) = best.expect("nonempty grid");
        let mut w = softmax_weights(zeta.coords(), &self.embedding, m, self.sigmas[k])?;
        truncate(&mut w);
        let stretch = self.stretches[si];
        let anchor = self.anchors[ai];
        let mut track = combine(&w, tracks, stretch, anchor)?;
        track.id = "preimage".into();
        Ok(PreimageResult {
            track,
            weights: w,
            sigma: self.sigmas[k],
            stretch,
            anchor,
            objective,
        })
    }

    /// Objective of one explicit candidate, for oracles and diagnostics.
    pub fn objective(&self, zeta: &EmbeddedPoint, sigma: f64, stretch: f64, anchor: Anchor) -> Result<f64> {
        let mut w = softmax_weights(zeta.coords(), &self.embedding, self.model.dimension(), sigma)?;
        truncate(&mut w);
        let track = combine(&w, self.model.tracks(), stretch, anchor)?;
        self.score(zeta, &track.points, &mut vec![0.0; self.model.len()], &mut vec![0.0; zeta.dim()])
    }

    fn score(&self, zeta: &EmbeddedPoint, y: &[Point], row: &mut [f64], out: &mut [f64]) -> Result<f64> {
        self.extender.extend_into(y, row, out)?;
        Ok(zeta.sq_distance(out))
    }

    /// Best (objective, stretch index, anchor index) for sigma index `k`.
    fn best_for_sigma(&self, zeta: &EmbeddedPoint, k: usize) -> Result<(f64, usize, usize)> {
        let m = self.model.dimension();
        let tracks = self.model.tracks();
        let p = tracks.points_per_track();
        let mut w = softmax_weights(zeta.coords(), &self.embedding, m, self.sigmas[k])?;
        truncate(&mut w);
        let mut mean = vec![[0.0; 2]; p];
        average_into(&w, tracks, &mut mean);

        let mut row = vec![0.0; self.model.len()];
        let mut out = vec![0.0; m];
        let mut cand = mean.clone();
        let mut best = (f64::INFINITY, 0, 0);
        for (si, &s) in self.stretches.iter().enumerate() {
            for (ai, &anchor) in self.anchors.iter().enumerate() {
                if s == 1.0 && ai > 0 {
                    // Identical to the first anchor's candidate, which wins ties.
                    continue;
                }
                dilate(&mean, s, anchor, &mut cand);
                let obj = self.score(zeta, &cand, &mut row, &mut out)?;
                if obj < best.0 {
                    best = (obj, si, ai);
                }
            }
        }
        if !best.0.is_finite() {
            return Err(Error::NonFinite("pre-image objective".into()));
        }
        Ok(best)
    }
}

fn auto_sigmas(embedding: &[f64], m: usize) -> Result<Vec<f64>> {
    let pts: Vec<&[f64]> = embedding.chunks_exact(m).collect();
    let mut d = Vec::with_capacity(pts.len() * pts.len().saturating_sub(1) / 2);
    for i in 0..pts.len() {
        for j in (i + 1)..pts.len() {
            d.push(pts[i].iter().zip(pts[j]).map(|(a, b)| (a - b) * (a - b)).sum::<f64>());
        }
    }
    d.sort_by(f64::total_cmp);
    let lo = 0.1 * quantile_sorted(&d, 0.25);
    let hi = 10.0 * quantile_sorted(&d, 0.75);
    if !(lo > 0.0 && hi.is_finite()) {
        return Err(Error::NonFinite("degenerate embedding: cannot derive sigma grid".into()));
    }
    let mut sigmas = vec![0.0];
    sigmas.extend(log_space(lo, hi, 9));
    Ok(sigmas)
}

/// One-shot pre-image of `zeta`.
pub fn preimage(zeta: &EmbeddedPoint, model: &DiffusionModel, config: &PreimageConfig) -> Result<PreimageResult> {
    Preimager::new(model, config)?.solve(zeta)
}

#[cfg(test)]
mod tests;

//! Leave-one-out selection of `(epsilon, t)` by pre-image reconstruction error.

use serde::{Deserialize, Serialize};

use super::{pairwise_sq_distances, DiffusionModel};
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::preimage::{PreimageConfig, Preimager};
use crate::stats::{log_space, quantile_sorted};
use crate::trackdata::{TrackMetric, TrackSet};

#[derive(Clone, Debug)]
pub struct CvConfig {
    /// Candidate `(epsilon, t)` pairs.
    pub grid: Vec<(f64, u32)>,
    pub m: usize,
    pub preimage: PreimageConfig,
    pub metric: TrackMetric,
    pub exec: Exec,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CvCandidate {
    pub epsilon: f64,
    pub t: u32,
    /// `Σ_i Δ(x_i, x̂_i)`; infinite when the candidate is infeasible.
    pub error: f64,
    /// Per held-out track reconstruction distance, in track order.
    pub per_item: Vec<f64>,
    pub feasible: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CvReport {
    pub best_epsilon: f64,
    pub best_t: u32,
    pub candidates: Vec<CvCandidate>,
}

/// Seven log-spaced epsilons over the 10th–90th percentile of pairwise `Δ²`,
/// crossed with `t ∈ {1, 2, 3}`.
pub fn default_grid(tracks: &TrackSet, metric: TrackMetric) -> Vec<(f64, u32)> {
    let mut d = pairwise_sq_distances(tracks, metric);
    d.sort_by(f64::total_cmp);
    let eps = log_space(quantile_sorted(&d, 0.1), quantile_sorted(&d, 0.9), 7);
    eps.into_iter().flat_map(|e| (1..=3).map(move |t| (e, t))).collect()
}

/// Runs leave-one-out cross-validation over `config.grid`.
///
/// Work is split into one task per (distinct epsilon, held-out index); every
/// `t` sharing that epsilon reuses the task's eigendecomposition. Sums are
/// accumulated in track order, so the table does not depend on `exec`.
pub fn cross_validate(tracks: &TrackSet, config: &CvConfig) -> Result<CvReport> {
    if config.grid.is_empty() {
        return Err(Error::InvalidParameter("cross-validation grid is empty".into()));
    }
    let n = tracks.len();
    if n < 10 {
        return Err(Error::InvalidParameter(format!("cross-validation needs n >= 10, got {n}")));
    }
    config.preimage.validate()?;

    let mut epsilons: Vec<f64> = Vec::new();
    for &(e, _) in &config.grid {
        if !epsilons.contains(&e) {
            epsilons.push(e);
        }
    }
    let steps_for = |e: f64| -> Vec<u32> {
        config.grid.iter().filter(|g| g.0 == e).map(|g| g.1).collect()
    };

    let tasks = epsilons.len() * n;
    let results: Vec<Vec<Option<f64>>> = config.exec.map(tasks, |task| {
        let (ei, i) = (task / n, task % n);
        let eps = epsilons[ei];
        let steps = steps_for(eps);
        held_out_errors(tracks, i, eps, &steps, config)
    });

    let mut candidates = Vec::with_capacity(config.grid.len());
    for &(eps, t) in &config.grid {
        let ei = epsilons.iter().position(|&e| e == eps).unwrap();
        let slot = steps_for(eps).iter().position(|&s| s == t).unwrap();
        let per_item: Vec<f64> = (0..n)
            .map(|i| results[ei * n + i][slot].unwrap_or(f64::INFINITY))
            .collect();
        let feasible = per_item.iter().all(|v| v.is_finite());
        let error = if feasible { per_item.iter().sum() } else { f64::INFINITY };
        candidates.push(CvCandidate {
            epsilon: eps,
            t,
            error,
            per_item,
            feasible,
        });
    }

    let best = candidates
        .iter()
        .min_by(|a, b| {
            a.error
                .total_cmp(&b.error)
                .then(a.epsilon.total_cmp(&b.epsilon))
                .then(a.t.cmp(&b.t))
        })
        .unwrap();
    Ok(CvReport {
        best_epsilon: best.epsilon,
        best_t: best.t,
        candidates,
    })
}

/// Reconstruction distance of track `i` for each `t`; `None` marks failure.
fn held_out_errors(tracks: &TrackSet, i: usize, eps: f64, steps: &[u32], config: &CvConfig) -> Vec<Option<f64>> {
    let rest = tracks.without(i);
    let held = tracks.get(i);
    let base = match DiffusionModel::build_with_metric(&rest, config.metric, eps, steps[0], config.m) {
        Ok(m) => m,
        Err(e) => {
            log::debug!("epsilon {eps}: build without track {i} failed: {e}");
            return vec![None; steps.len()];
        }
    };
    steps
        .iter()
        .map(|&t| {
            let model = base.with_steps(t).ok()?;
            let zeta = model.nystrom_extend(held).ok()?;
            let solver = Preimager::new(&model, &config.preimage).ok()?;
            let rec = solver.solve(&zeta).ok()?;
            config.metric.distance(held, &rec.track).ok()
        })
        .collect()
}

//! End-to-end estimation and simulation: embed, fit, sample, invert.

use serde::{Deserialize, Serialize};

use crate::density::{default_k, fit_knn_kde, DensityEstimate};
use crate::diffusion::{pairwise_sq_distances, DiffusionModel, EmbeddedPoint};
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::preimage::{PreimageConfig, PreimageResult, Preimager};
use crate::rng::derive_seed;
use crate::stats::quantile;
use crate::trackdata::{RegularTrack, TrackMetric, TrackSet};
use crate::validation::{nn_statistic, pick_dimension, DimensionCandidate, DimensionReport};

/// How to choose the kernel scale when it is not given explicitly.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Epsilon {
    Fixed(f64),
    /// This quantile of pairwise squared track distances.
    Quantile(f64),
}

impl Epsilon {
    pub fn resolve(self, tracks: &TrackSet, metric: TrackMetric) -> Result<f64> {
        match self {
            Epsilon::Fixed(e) => Ok(e),
            Epsilon::Quantile(q) => {
                if tracks.len() < 2 {
                    return Err(Error::InvalidParameter("need two tracks to derive epsilon".into()));
                }
                let e = quantile(&pairwise_sq_distances(tracks, metric), q);
                if e > 0.0 {
                    Ok(e)
                } else {
                    Err(Error::InvalidParameter("all tracks coincide; epsilon would be zero".into()))
                }
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PipelineSettings {
    pub epsilon: Epsilon,
    pub t: u32,
    pub m: usize,
    /// Neighbour count for the density; `None` means `round(√n)`.
    pub k: Option<usize>,
    pub preimage: PreimageConfig,
    pub metric: TrackMetric,
}

impl Default for PipelineSettings {
    fn default() -> Self {
        PipelineSettings {
            epsilon: Epsilon::Quantile(0.1),
            t: 1,
            m: 3,
            k: None,
            preimage: PreimageConfig::default(),
            metric: TrackMetric::default(),
        }
    }
}

/// A fitted diffusion map plus density, ready to generate tracks.
#[derive(Clone, Debug)]
pub struct Simulator {
    model: DiffusionModel,
    density: DensityEstimate,
    preimage: PreimageConfig,
}

/// Draws in diffusion space and their pre-images, index-aligned.
#[derive(Clone, Debug)]
pub struct Simulation {
    pub points: Vec<EmbeddedPoint>,
    pub preimages: Vec<PreimageResult>,
}

impl Simulation {
    pub fn tracks(&self) -> Vec<RegularTrack> {
        self.preimages.iter().map(|r| r.track.clone()).collect()
    }
}

impl Simulator {
    pub fn fit(tracks: &TrackSet, settings: &PipelineSettings) -> Result<Self> {
        let eps = settings.epsilon.resolve(tracks, settings.metric)?;
        let model = DiffusionModel::build_with_metric(tracks, settings.metric, eps, settings.t, settings.m)?;
        Self::from_model(model, settings.k, settings.preimage.clone())
    }

    pub fn from_model(model: DiffusionModel, k: Option<usize>, preimage: PreimageConfig) -> Result<Self> {
        preimage.validate()?;
        let k = k.unwrap_or_else(|| default_k(model.len()));
        let density = fit_knn_kde(&model.embed(), k)?;
        Ok(Simulator {
            model,
            density,
            preimage,
        })
    }

    pub fn model(&self) -> &DiffusionModel {
        &self.model
    }

    pub fn density(&self) -> &DensityEstimate {
        &self.density
    }

    /// Samples `count` diffusion-space points and inverts each to a track
    /// with id `SIM#####`.
    pub fn simulate(&self, count: usize, seed: u64, exec: Exec) -> Result<Simulation> {
        let points = self.density.sample(count, seed, exec);
        let solver = Preimager::new(&self.model, &self.preimage)?;
        let preimages = exec.try_map(count, |j| {
            let mut r = solver.solve(&points[j])?;
            r.track.id = format!("SIM{j:05}");
            Ok::<_, Error>(r)
        })?;
        Ok(Simulation { points, preimages })
    }

    pub fn simulate_tracks(&self, count: usize, seed: u64, exec: Exec) -> Result<Vec<RegularTrack>> {
        Ok(self.simulate(count, seed, exec)?.tracks())
    }
}

/// Mean `L_Δ(observed, S_i)` over `sims` simulated sets for each candidate
/// `m`; selects the mean closest to one half.
///
/// The spectrum is computed once and reused across candidates. Simulated set
/// `i` for dimension `m` is seeded `derive_seed(seed, i)`, identical across
/// candidates.
pub fn select_dimension(
    tracks: &TrackSet,
    candidates: &[usize],
    sims: usize,
    settings: &PipelineSettings,
    seed: u64,
    exec: Exec,
) -> Result<DimensionReport> {
    if candidates.is_empty() {
        return Err(Error::InvalidParameter("no dimension candidates".into()));
    }
    if sims == 0 {
        return Err(Error::InvalidParameter("need at least one simulation per candidate".into()));
    }
    let eps = settings.epsilon.resolve(tracks, settings.metric)?;
    let max_m = *candidates.iter().max().unwrap();
    let base = DiffusionModel::build_with_metric(tracks, settings.metric, eps, settings.t, max_m);
    let n = tracks.len();

    let mut report = Vec::with_capacity(candidates.len());
    for &m in candidates {
        let sim = base
            .as_ref()
            .map_err(|e| Error::InvalidParameter(e.to_string()))
            .and_then(|b| b.with_dimension(m))
            .and_then(|model| Simulator::from_model(model, settings.k, settings.preimage.clone()));
        let ratios = sim.and_then(|sim| {
            exec.try_map(sims, |i| {
                let s = sim.simulate_tracks(n, derive_seed(seed, i as u64), Exec::Sequential)?;
                nn_statistic(tracks.tracks(), &s, settings.metric)
            })
        });
        match ratios {
            Ok(r) => report.push(DimensionCandidate {
                m,
                mean_ratio: Some(r.iter().sum::<f64>() / r.len() as f64),
                ratios: r,
            }),
            Err(e) => {
                log::warn!("dimension {m} infeasible: {e}");
                report.push(DimensionCandidate {
                    m,
                    mean_ratio: None,
                    ratios: Vec::new(),
                })
            }
        }
    }
    Ok(DimensionReport {
        selected: pick_dimension(&report)?,
        candidates: report,
    })
}

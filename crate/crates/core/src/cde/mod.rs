//! Conditional analysis: splitting by a climate index, comparing conditional
//! densities on a shared diffusion map, reducing gridded fields over tracks,
//! and orthogonal-series conditional density estimation.

mod series;
mod sst;

pub use series::{
    fit_series_conditional, fit_series_marginal, CosineBasis, DiffusionBasis, MarginalSeries, PredictorDensity,
    ReflectedKde, ResponseBasis, SeriesEstimate, DENSITY_FLOOR,
};
pub use sst::{sst_over_track, SstField};

use std::collections::{BTreeMap, HashSet};

use serde::{Deserialize, Serialize};
use statrs::function::erf::erf;

use crate::density::{default_k, fit_knn_kde, DensityEstimate};
use crate::diffusion::DiffusionModel;
use crate::error::{Error, Result};
use crate::trackdata::TrackSet;
use crate::validation::Region;

/// Default number of years on each side of a split.
pub const DEFAULT_SPLIT: usize = 19;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConditionSplit {
    pub hot_years: Vec<i32>,
    pub cold_years: Vec<i32>,
    /// Track indices whose year is hot, in track order.
    pub hot_tracks: Vec<usize>,
    pub cold_tracks: Vec<usize>,
}

/// Top and bottom `count` years by condition value, then tracks by year.
///
/// Ties rank the earlier year first on both sides; cold years are drawn from
/// the years not already hot.
pub fn split_by_condition(tracks: &TrackSet, condition: &[(i32, f64)], count: usize) -> Result<ConditionSplit> {
    let mut series: BTreeMap<i32, f64> = BTreeMap::new();
    for &(year, v) in condition {
        if !v.is_finite() {
            return Err(Error::NonFinite(format!("condition value for {year}")));
        }
        if series.insert(year, v).is_some() {
            return Err(Error::InvalidParameter(format!("year {year} listed twice")));
        }
    }
    if count == 0 || series.len() < 2 * count {
        return Err(Error::InvalidParameter(format!(
            "{} distinct years cannot supply two groups of {count}",
            series.len()
        )));
    }
    for (t, y) in tracks.tracks().iter().zip(tracks.years()) {
        match y {
            Some(y) if series.contains_key(y) => {}
            Some(y) => {
                return Err(Error::InvalidTrack {
                    id: t.id.clone(),
                    message: format!("year {y} missing from condition series"),
                })
            }
            None => {
                return Err(Error::InvalidTrack {
                    id: t.id.clone(),
                    message: "track has no year".into(),
                })
            }
        }
    }

    let mut by_value: Vec<(i32, f64)> = series.into_iter().collect();
    by_value.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    let hot_years: Vec<i32> = by_value[..count].iter().map(|e| e.0).collect();
    let hot: HashSet<i32> = hot_years.iter().copied().collect();
    let mut rest: Vec<(i32, f64)> = by_value.into_iter().filter(|e| !hot.contains(&e.0)).collect();
    rest.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
    let cold_years: Vec<i32> = rest[..count].iter().map(|e| e.0).collect();
    let cold: HashSet<i32> = cold_years.iter().copied().collect();

    let pick = |set: &HashSet<i32>| -> Vec<usize> {
        tracks
            .years()
            .iter()
            .enumerate()
            .filter(|(_, y)| y.is_some_and(|y| set.contains(&y)))
            .map(|(i, _)| i)
            .collect()
    };
    Ok(ConditionSplit {
        hot_tracks: pick(&hot),
        cold_tracks: pick(&cold),
        hot_years,
        cold_years,
    })
}

/// Hot and cold densities fitted in the coordinates of one shared model.
#[derive(Clone, Debug)]
pub struct ConditionalDensities {
    pub model: DiffusionModel,
    pub hot: DensityEstimate,
    pub cold: DensityEstimate,
    pub hot_tracks: Vec<usize>,
    pub cold_tracks: Vec<usize>,
}

/// Fits separate densities to the hot and cold subsets of `model`'s
/// training embedding. `k = None` uses `round(√n)` per subset.
pub fn conditional_densities(model: &DiffusionModel, split: &ConditionSplit, k: Option<usize>) -> Result<ConditionalDensities> {
    if split.hot_tracks.is_empty() || split.cold_tracks.is_empty() {
        return Err(Error::InvalidParameter("both partitions must be nonempty".into()));
    }
    let embedding = model.embed();
    let fit = |idx: &[usize]| {
        let pts: Vec<_> = idx.iter().map(|&i| embedding[i].clone()).collect();
        fit_knn_kde(&pts, k.unwrap_or_else(|| default_k(pts.len())))
    };
    Ok(ConditionalDensities {
        hot: fit(&split.hot_tracks)?,
        cold: fit(&split.cold_tracks)?,
        model: model.clone(),
        hot_tracks: split.hot_tracks.clone(),
        cold_tracks: split.cold_tracks.clone(),
    })
}

/// Exact probability mass of a density inside an axis-aligned region.
/// Coordinates beyond `region.bounds` are unconstrained.
pub fn region_mass(density: &DensityEstimate, region: &Region) -> f64 {
    let cdf = |x: f64| 0.5 * (1.0 + erf(x / std::f64::consts::SQRT_2));
    let total: f64 = (0..density.len())
        .map(|i| {
            let h = density.bandwidths()[i];
            density
                .point(i)
                .iter()
                .zip(&region.bounds)
                .map(|(&z, b)| (cdf((b[1] - z) / h) - cdf((b[0] - z) / h)).max(0.0))
                .product::<f64>()
        })
        .sum();
    total / density.len() as f64
}

/// Training tracks whose embedding falls inside `region`, in track order.
pub fn tracks_in_region(model: &DiffusionModel, region: &Region) -> Vec<usize> {
    model
        .embed()
        .iter()
        .enumerate()
        .filter(|(_, e)| region.contains(e.coords()))
        .map(|(i, _)| i)
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DensitySummary {
    pub tracks: usize,
    pub years: Vec<i32>,
    pub k: usize,
    pub mean_bandwidth: f64,
    pub region_mass: f64,
    pub region_tracks: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConditionalReport {
    pub trackset_hash: String,
    pub epsilon: f64,
    pub t: u32,
    pub m: usize,
    pub hot: DensitySummary,
    pub cold: DensitySummary,
    pub region: Region,
    /// Ids of every training track inside the region.
    pub region_track_ids: Vec<String>,
}

pub fn conditional_report(cd: &ConditionalDensities, split: &ConditionSplit, region: &Region) -> ConditionalReport {
    let inside = tracks_in_region(&cd.model, region);
    let count_in = |idx: &[usize]| idx.iter().filter(|i| inside.binary_search(i).is_ok()).count();
    let summary = |d: &DensityEstimate, idx: &[usize], years: &[i32]| DensitySummary {
        tracks: idx.len(),
        years: years.to_vec(),
        k: d.k(),
        mean_bandwidth: d.bandwidths().iter().sum::<f64>() / d.len() as f64,
        region_mass: region_mass(d, region),
        region_tracks: count_in(idx),
    };
    let tracks = cd.model.tracks();
    ConditionalReport {
        trackset_hash: tracks.content_hash(),
        epsilon: cd.model.epsilon(),
        t: cd.model.steps(),
        m: cd.model.dimension(),
        hot: summary(&cd.hot, &cd.hot_tracks, &split.hot_years),
        cold: summary(&cd.cold, &cd.cold_tracks, &split.cold_years),
        region: region.clone(),
        region_track_ids: inside.iter().map(|&i| tracks.get(i).id.clone()).collect(),
    }
}

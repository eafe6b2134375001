//! Nearest-neighbour two-sample checks between observed and simulated tracks.

use serde::{Deserialize, Serialize};

use crate::diffusion::EmbeddedPoint;
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::rng::derive_seed;
use crate::stats::quantile_sorted;
use crate::trackdata::{RegularTrack, TrackMetric};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SampleLabel {
    Observed,
    Simulated,
}

impl SampleLabel {
    pub fn as_str(self) -> &'static str {
        match self {
            SampleLabel::Observed => "observed",
            SampleLabel::Simulated => "simulated",
        }
    }
}

/// Per-item nearest-neighbour outcome over a pooled two-sample set.
#[derive(Clone, Debug, PartialEq)]
pub struct NnOutcome {
    /// `true` when the item's nearest neighbour shares its sample.
    pub within: Vec<bool>,
    pub within_count: usize,
}

impl NnOutcome {
    pub fn proportion(&self) -> f64 {
        self.within_count as f64 / self.within.len() as f64
    }
}

/// Nearest neighbours over a pool whose first `n_first` items form sample one.
///
/// `dist(i, j)` is called once per unordered pair with `i < j`. Ties go to
/// the smallest pooled index.
pub fn nn_outcome_by<F>(n_first: usize, n_total: usize, dist: F) -> Result<NnOutcome>
where
    F: Fn(usize, usize) -> f64,
{
    if n_total < 2 {
        return Err(Error::InvalidParameter("pool needs at least two items".into()));
    }
    let mut best = vec![(f64::INFINITY, usize::MAX); n_total];
    for i in 0..n_total {
        for j in (i + 1)..n_total {
            let d = dist(i, j);
            if !d.is_finite() {
                return Err(Error::NonFinite(format!("distance between pooled items {i} and {j}")));
            }
            // Pairs arrive in lexicographic order, so a strict comparison keeps
            // the smallest index among equidistant neighbours.
            if d < best[i].0 {
                best[i] = (d, j);
            }
            if d < best[j].0 {
                best[j] = (d, i);
            }
        }
    }
    let within: Vec<bool> = best
        .iter()
        .enumerate()
        .map(|(i, &(_, j))| (i < n_first) == (j < n_first))
        .collect();
    let within_count = within.iter().filter(|w| **w).count();
    Ok(NnOutcome { within, within_count })
}

fn check_sizes(a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(Error::Dimension { expected: a, found: b });
    }
    if a < 2 {
        return Err(Error::InvalidParameter("samples need at least two items".into()));
    }
    Ok(())
}

/// Outcome of pooling `a` then `b` under the track metric.
pub fn nn_outcome(a: &[RegularTrack], b: &[RegularTrack], metric: TrackMetric) -> Result<NnOutcome> {
    check_sizes(a.len(), b.len())?;
    let pool: Vec<&RegularTrack> = a.iter().chain(b).collect();
    let p = pool[0].len();
    if let Some(t) = pool.iter().find(|t| t.len() != p) {
        return Err(Error::Dimension {
            expected: p,
            found: t.len(),
        });
    }
    nn_outcome_by(a.len(), pool.len(), |i, j| metric.between(&pool[i].points, &pool[j].points))
}

/// Fraction of the pooled items whose nearest neighbour is from their own sample.
pub fn nn_statistic(a: &[RegularTrack], b: &[RegularTrack], metric: TrackMetric) -> Result<f64> {
    Ok(nn_outcome(a, b, metric)?.proportion())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PointFlag {
    pub id: String,
    pub sample: SampleLabel,
    pub within_nn: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub ell_star: f64,
    pub within_count: usize,
    pub null_proportions: Vec<f64>,
    /// Upper tail, `(#{null ≥ ℓ*} + 1)/(k + 1)`.
    pub p_value: f64,
    /// Twice the smaller add-one tail, capped at 1.
    pub p_value_two_sided: f64,
    pub flags: Vec<PointFlag>,
    pub k: usize,
    pub n: usize,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NullSummary {
    pub min: f64,
    pub q25: f64,
    pub median: f64,
    pub q75: f64,
    pub max: f64,
}

/// The JSON-facing subset of a report.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportSummary {
    pub ell_star: f64,
    pub within_count: usize,
    pub pooled: usize,
    pub k: usize,
    pub n: usize,
    pub p_value: f64,
    pub p_value_two_sided: f64,
    pub null: NullSummary,
    pub seed: u64,
}

impl ValidationReport {
    pub fn rejects(&self, alpha: f64) -> bool {
        self.p_value <= alpha
    }

    pub fn summary(&self) -> ReportSummary {
        let mut v = self.null_proportions.clone();
        v.sort_by(f64::total_cmp);
        ReportSummary {
            ell_star: self.ell_star,
            within_count: self.within_count,
            pooled: 2 * self.n,
            k: self.k,
            n: self.n,
            p_value: self.p_value,
            p_value_two_sided: self.p_value_two_sided,
            null: NullSummary {
                min: v[0],
                q25: quantile_sorted(&v, 0.25),
                median: quantile_sorted(&v, 0.5),
                q75: quantile_sorted(&v, 0.75),
                max: v[v.len() - 1],
            },
            seed: self.seed,
        }
    }
}

/// Add-one upper-tail and two-sided p-values of `stat` against `null`.
pub fn p_values(stat: f64, null: &[f64]) -> (f64, f64) {
    let k = null.len() as f64;
    let upper = (null.iter().filter(|&&v| v >= stat).count() as f64 + 1.0) / (k + 1.0);
    let lower = (null.iter().filter(|&&v| v <= stat).count() as f64 + 1.0) / (k + 1.0);
    (upper, (2.0 * upper.min(lower)).min(1.0))
}

/// Simulation-based test of whether `observed` could come from `sampler`.
///
/// Replicate `r` pairs draws seeded `derive_seed(seed, 2r)` and
/// `derive_seed(seed, 2r + 1)`; the draw compared with `observed` uses
/// `derive_seed(seed, 2k)`.
pub fn simulated_test<S>(
    sampler: S,
    observed: &[RegularTrack],
    k: usize,
    seed: u64,
    metric: TrackMetric,
    exec: Exec,
) -> Result<ValidationReport>
where
    S: Fn(u64) -> Result<Vec<RegularTrack>> + Sync + Send,
{
    if k < 1 {
        return Err(Error::InvalidParameter("k must be at least 1".into()));
    }
    let n = observed.len();
    let draw = |replicate: usize, stream: u64| -> Result<Vec<RegularTrack>> {
        let s = sampler(derive_seed(seed, stream)).map_err(|e| Error::Sampler {
            replicate,
            source: Box::new(e),
        })?;
        if s.len() != n {
            return Err(Error::Sampler {
                replicate,
                source: Box::new(Error::Dimension { expected: n, found: s.len() }),
            });
        }
        Ok(s)
    };

    let null_proportions = exec.try_map(k, |r| {
        let a = draw(r, 2 * r as u64)?;
        let b = draw(r, 2 * r as u64 + 1)?;
        nn_statistic(&a, &b, metric)
    })?;

    let simulated = draw(k, 2 * k as u64)?;
    let outcome = nn_outcome(observed, &simulated, metric)?;
    let ell_star = outcome.proportion();
    let (p_value, p_value_two_sided) = p_values(ell_star, &null_proportions);

    let flags = observed
        .iter()
        .map(|t| (t, SampleLabel::Observed))
        .chain(simulated.iter().map(|t| (t, SampleLabel::Simulated)))
        .zip(&outcome.within)
        .map(|((t, sample), &within_nn)| PointFlag {
            id: t.id.clone(),
            sample,
            within_nn,
        })
        .collect();

    Ok(ValidationReport {
        ell_star,
        within_count: outcome.within_count,
        null_proportions,
        p_value,
        p_value_two_sided,
        flags,
        k,
        n,
        seed,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AssessmentRow {
    pub id: String,
    pub sample: SampleLabel,
    pub within_nn: bool,
    pub coords: Vec<f64>,
}

/// Joins report flags with diffusion coordinates for plotting.
///
/// `observed` and `simulated` map ids to embedded points of each sample.
pub fn visual_assessment_export(
    report: &ValidationReport,
    observed: &[(String, EmbeddedPoint)],
    simulated: &[(String, EmbeddedPoint)],
) -> Result<Vec<AssessmentRow>> {
    use std::collections::HashMap;
    let index = |list: &[(String, EmbeddedPoint)]| -> HashMap<String, EmbeddedPoint> {
        list.iter().cloned().collect()
    };
    let (obs, sim) = (index(observed), index(simulated));
    if obs.len() + sim.len() != report.flags.len() {
        return Err(Error::IdMismatch(format!(
            "report has {} flags but {} embeddings were supplied",
            report.flags.len(),
            obs.len() + sim.len()
        )));
    }
    report
        .flags
        .iter()
        .map(|f| {
            let table = match f.sample {
                SampleLabel::Observed => &obs,
                SampleLabel::Simulated => &sim,
            };
            let e = table
                .get(&f.id)
                .ok_or_else(|| Error::IdMismatch(format!("no {} embedding for `{}`", f.sample.as_str(), f.id)))?;
            Ok(AssessmentRow {
                id: f.id.clone(),
                sample: f.sample,
                within_nn: f.within_nn,
                coords: e.0.clone(),
            })
        })
        .collect()
}

/// Axis-aligned box in diffusion coordinates.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Region {
    /// `[lo, hi]` per coordinate, inclusive.
    pub bounds: Vec<[f64; 2]>,
}

impl Region {
    pub fn new(bounds: Vec<[f64; 2]>) -> Self {
        Region { bounds }
    }

    pub fn contains(&self, coords: &[f64]) -> bool {
        self.bounds.len() <= coords.len()
            && self
                .bounds
                .iter()
                .zip(coords)
                .all(|(b, &c)| b[0] <= c && c <= b[1])
    }

    pub fn filter<'a>(&self, rows: &'a [AssessmentRow]) -> Vec<&'a AssessmentRow> {
        rows.iter().filter(|r| self.contains(&r.coords)).collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DimensionCandidate {
    pub m: usize,
    /// Mean of `L_Δ(O, S_i)`; `None` if the pipeline failed for this `m`.
    pub mean_ratio: Option<f64>,
    pub ratios: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DimensionReport {
    pub selected: usize,
    pub candidates: Vec<DimensionCandidate>,
}

/// Picks the candidate whose mean ratio is closest to 0.5; ties go to smaller `m`.
pub fn pick_dimension(candidates: &[DimensionCandidate]) -> Result<usize> {
    candidates
        .iter()
        .filter_map(|c| c.mean_ratio.map(|r| (c.m, (r - 0.5).abs())))
        .min_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)))
        .map(|(m, _)| m)
        .ok_or_else(|| Error::InvalidParameter("no feasible dimension candidate".into()))
}

//! k-nearest-neighbour Gaussian kernel density estimation in diffusion space.
//!
//! Each training point carries its own bandwidth, the distance to its k-th
//! nearest neighbour. The estimate is the equal-weight mixture
//! `μ̂(z) = (1/n) Σ_i N(z; z_i, h_i² I)`, so sampling is exact: pick a point
//! uniformly, then add Gaussian noise at that point's bandwidth.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::diffusion::EmbeddedPoint;
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::rng::substream;

/// `round(√n)`, at least 1.
pub fn default_k(n: usize) -> usize {
    ((n as f64).sqrt().round() as usize).max(1)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DensityEstimate {
    m: usize,
    k: usize,
    /// Row-major `n × m`.
    points: Vec<f64>,
    bandwidths: Vec<f64>,
    #[serde(skip)]
    norms: Vec<f64>,
}

/// Fits per-point bandwidths to the `k`-th nearest-neighbour distance.
pub fn fit_knn_kde(points: &[EmbeddedPoint], k: usize) -> Result<DensityEstimate> {
    let n = points.len();
    if k == 0 {
        return Err(Error::InvalidParameter("k must be at least 1".into()));
    }
    if n < k + 1 {
        return Err(Error::InvalidParameter(format!("need n >= k + 1 (n = {n}, k = {k})")));
    }
    let m = points[0].dim();
    if m == 0 {
        return Err(Error::InvalidParameter("zero-dimensional points".into()));
    }
    let mut flat = Vec::with_capacity(n * m);
    for p in points {
        if p.dim() != m {
            return Err(Error::Dimension {
                expected: m,
                found: p.dim(),
            });
        }
        if p.coords().iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("embedded point".into()));
        }
        flat.extend_from_slice(p.coords());
    }

    let mut bandwidths = Vec::with_capacity(n);
    let mut dists = vec![0.0; n - 1];
    for i in 0..n {
        let zi = &flat[i * m..(i + 1) * m];
        let mut slot = 0;
        for j in 0..n {
            if j != i {
                dists[slot] = sq_dist(zi, &flat[j * m..(j + 1) * m]);
                slot += 1;
            }
        }
        let (_, kth, _) = dists.select_nth_unstable_by(k - 1, f64::total_cmp);
        let h = kth.sqrt();
        if h <= 0.0 {
            let count = 1 + dists.iter().filter(|&&d| d == 0.0).count();
            return Err(Error::ZeroBandwidth { index: i, count });
        }
        bandwidths.push(h);
    }
    Ok(DensityEstimate::from_parts(m, k, flat, bandwidths))
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

impl DensityEstimate {
    fn from_parts(m: usize, k: usize, points: Vec<f64>, bandwidths: Vec<f64>) -> Self {
        let c = (2.0 * std::f64::consts::PI).powf(-(m as f64) / 2.0);
        let norms = bandwidths.iter().map(|h| c * h.powi(-(m as i32))).collect();
        DensityEstimate {
            m,
            k,
            points,
            bandwidths,
            norms,
        }
    }

    pub fn dim(&self) -> usize {
        self.m
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn len(&self) -> usize {
        self.bandwidths.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bandwidths.is_empty()
    }

    pub fn bandwidths(&self) -> &[f64] {
        &self.bandwidths
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.points[i * self.m..(i + 1) * self.m]
    }

    /// `μ̂(z)`.
    pub fn evaluate(&self, z: &[f64]) -> Result<f64> {
        if z.len() != self.m {
            return Err(Error::Dimension {
                expected: self.m,
                found: z.len(),
            });
        }
        Ok(self.evaluate_unchecked(z))
    }

    pub(crate) fn evaluate_unchecked(&self, z: &[f64]) -> f64 {
        let mut total = 0.0;
        for (i, (&h, &c)) in self.bandwidths.iter().zip(&self.norms).enumerate() {
            let d2 = sq_dist(z, self.point(i));
            total += c * (-0.5 * d2 / (h * h)).exp();
        }
        total / self.len() as f64
    }

    /// Smoothed-bootstrap draws. Draw `j` uses its own substream of `seed`,
    /// so output is independent of how the batch is split across workers.
    pub fn sample(&self, count: usize, seed: u64, exec: Exec) -> Vec<EmbeddedPoint> {
        exec.map(count, |j| {
            let mut rng = substream(seed, j as u64);
            let i = rng.random_range(0..self.len());
            let h = self.bandwidths[i];
            EmbeddedPoint(
                self.point(i)
                    .iter()
                    .map(|&c| c + h * rng.sample::<f64, _>(StandardNormal))
                    .collect(),
            )
        })
    }

    /// Axis-aligned box holding all but a negligible fraction of the mass:
    /// each kernel's ±`width` bandwidths in every coordinate.
    pub fn support_box(&self, width: f64) -> (Vec<f64>, Vec<f64>) {
        let mut lo = vec![f64::INFINITY; self.m];
        let mut hi = vec![f64::NEG_INFINITY; self.m];
        for i in 0..self.len() {
            let h = self.bandwidths[i];
            for (c, &v) in self.point(i).iter().enumerate() {
                lo[c] = lo[c].min(v - width * h);
                hi[c] = hi[c].max(v + width * h);
            }
        }
        (lo, hi)
    }

    /// Evaluates on a regular grid of `resolution` nodes per axis over the box.
    /// Rows are node coordinates followed by the density, last axis fastest.
    pub fn evaluate_grid(&self, lo: &[f64], hi: &[f64], resolution: usize, exec: Exec) -> Result<Vec<Vec<f64>>> {
        if lo.len() != self.m || hi.len() != self.m {
            return Err(Error::Dimension {
                expected: self.m,
                found: lo.len().min(hi.len()),
            });
        }
        if resolution < 2 {
            return Err(Error::InvalidParameter("grid resolution must be at least 2".into()));
        }
        let total = resolution.pow(self.m as u32);
        Ok(exec.map(total, |flat| {
            let mut z = vec![0.0; self.m];
            let mut rem = flat;
            for c in (0..self.m).rev() {
                let idx = rem % resolution;
                rem /= resolution;
                z[c] = lo[c] + (hi[c] - lo[c]) * idx as f64 / (resolution - 1) as f64;
            }
            let d = self.evaluate_unchecked(&z);
            z.push(d);
            z
        }))
    }
}

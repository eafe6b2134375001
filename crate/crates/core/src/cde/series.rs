//! Orthogonal-series estimates of marginal and conditional densities.

use std::f64::consts::{PI, SQRT_2};

use serde::Serialize;

use crate::diffusion::{DiffusionModel, MIN_EXTENSION_EIGENVALUE};
use crate::error::{Error, Result};
use crate::stats::{quantile_sorted, std_dev};
use crate::trackdata::RegularTrack;

/// Lower bound on the predictor density at training values.
pub const DENSITY_FLOOR: f64 = 1e-6;

/// Orthonormal cosine basis on `[lo, hi]`, truncated after index `cutoff`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct CosineBasis {
    pub lo: f64,
    pub hi: f64,
    pub cutoff: usize,
}

impl CosineBasis {
    pub fn new(lo: f64, hi: f64, cutoff: usize) -> Result<Self> {
        if !(lo.is_finite() && hi.is_finite() && lo < hi) {
            return Err(Error::InvalidParameter(format!("basis interval [{lo}, {hi}] is empty")));
        }
        Ok(CosineBasis { lo, hi, cutoff })
    }

    /// Basis on the min-max range of `values`.
    pub fn from_data(values: &[f64], cutoff: usize) -> Result<Self> {
        let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        Self::new(lo, hi, cutoff)
    }

    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }

    pub fn len(&self) -> usize {
        self.cutoff + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn contains(&self, x: f64) -> bool {
        self.lo <= x && x <= self.hi
    }

    /// `φ_i(x)` without a support check.
    pub fn phi(&self, i: usize, x: f64) -> f64 {
        let l = self.width();
        if i == 0 {
            1.0 / l.sqrt()
        } else {
            SQRT_2 / l.sqrt() * (i as f64 * PI * (x - self.lo) / l).cos()
        }
    }

    /// Writes `φ_0(x) .. φ_cutoff(x)` into `out`.
    pub fn eval_into(&self, x: f64, out: &mut [f64]) -> Result<()> {
        if !self.contains(x) {
            return Err(Error::OutsideSupport {
                value: x,
                lo: self.lo,
                hi: self.hi,
            });
        }
        for (i, o) in out.iter_mut().enumerate().take(self.len()) {
            *o = self.phi(i, x);
        }
        Ok(())
    }
}

/// Marginal series estimate `f̂(z) = Σ θ̂_i φ_i(z)`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MarginalSeries {
    pub basis: CosineBasis,
    pub coefficients: Vec<f64>,
}

impl MarginalSeries {
    pub fn evaluate(&self, z: f64) -> f64 {
        if !self.basis.contains(z) {
            return 0.0;
        }
        self.coefficients
            .iter()
            .enumerate()
            .map(|(i, c)| c * self.basis.phi(i, z))
            .sum()
    }
}

/// `θ̂_i = (1/n) Σ_j φ_i(z_j)` for `i = 0..=cutoff`.
pub fn fit_series_marginal(values: &[f64], basis: &CosineBasis) -> Result<MarginalSeries> {
    if values.is_empty() {
        return Err(Error::InvalidParameter("no values".into()));
    }
    let mut sum = vec![0.0; basis.len()];
    let mut phi = vec![0.0; basis.len()];
    for &z in values {
        basis.eval_into(z, &mut phi)?;
        for (s, p) in sum.iter_mut().zip(&phi) {
            *s += p;
        }
    }
    let n = values.len() as f64;
    Ok(MarginalSeries {
        basis: *basis,
        coefficients: sum.into_iter().map(|s| s / n).collect(),
    })
}

/// Density of the predictor, used to reweight conditional coefficients.
pub trait PredictorDensity {
    fn density(&self, x: f64) -> f64;
}

impl<F: Fn(f64) -> f64> PredictorDensity for F {
    fn density(&self, x: f64) -> f64 {
        self(x)
    }
}

/// Gaussian KDE with Silverman bandwidth, reflected at both ends of `[lo, hi]`.
#[derive(Clone, Debug)]
pub struct ReflectedKde {
    lo: f64,
    hi: f64,
    bandwidth: f64,
    n: usize,
    /// Data and its two mirror images, sorted.
    nodes: Vec<f64>,
}

impl ReflectedKde {
    pub fn fit(values: &[f64], lo: f64, hi: f64) -> Result<Self> {
        let n = values.len();
        if n < 2 {
            return Err(Error::InvalidParameter("kernel estimate needs two values".into()));
        }
        if let Some(&x) = values.iter().find(|x| !(lo..=hi).contains(*x)) {
            return Err(Error::OutsideSupport { value: x, lo, hi });
        }
        let mut sorted = values.to_vec();
        sorted.sort_by(f64::total_cmp);
        let iqr = quantile_sorted(&sorted, 0.75) - quantile_sorted(&sorted, 0.25);
        let sd = std_dev(values);
        let spread = if iqr > 0.0 { sd.min(iqr / 1.34) } else { sd };
        let bandwidth = 0.9 * spread * (n as f64).powf(-0.2);
        if !(bandwidth > 0.0) {
            return Err(Error::ZeroBandwidth { index: 0, count: n });
        }
        let mut nodes = Vec::with_capacity(3 * n);
        for &x in values {
            nodes.extend([x, 2.0 * lo - x, 2.0 * hi - x]);
        }
        nodes.sort_by(f64::total_cmp);
        Ok(ReflectedKde {
            lo,
            hi,
            bandwidth,
            n,
            nodes,
        })
    }

    pub fn bandwidth(&self) -> f64 {
        self.bandwidth
    }
}

impl PredictorDensity for ReflectedKde {
    fn density(&self, x: f64) -> f64 {
        if !(self.lo..=self.hi).contains(&x) {
            return 0.0;
        }
        let h = self.bandwidth;
        let start = self.nodes.partition_point(|&v| v < x - 9.0 * h);
        let end = self.nodes.partition_point(|&v| v <= x + 9.0 * h);
        let sum: f64 = self.nodes[start..end]
            .iter()
            .map(|&v| {
                let u = (x - v) / h;
                (-0.5 * u * u).exp()
            })
            .sum();
        sum / (self.n as f64 * h * (2.0 * PI).sqrt())
    }
}

/// A finite family of response basis functions `ψ_0 .. ψ_J`.
pub trait ResponseBasis<Y: ?Sized> {
    fn len(&self) -> usize;

    fn eval_into(&self, y: &Y, out: &mut [f64]) -> Result<()>;
}

impl ResponseBasis<f64> for CosineBasis {
    fn len(&self) -> usize {
        self.cutoff + 1
    }

    fn eval_into(&self, y: &f64, out: &mut [f64]) -> Result<()> {
        CosineBasis::eval_into(self, *y, out)
    }
}

/// Diffusion eigenvectors `ψ_0 .. ψ_J`, rescaled to unit empirical norm on the
/// training tracks and extended to new tracks by Nyström.
#[derive(Clone, Debug)]
pub struct DiffusionBasis {
    model: DiffusionModel,
    cutoff: usize,
    scales: Vec<f64>,
}

impl DiffusionBasis {
    pub fn new(model: &DiffusionModel, cutoff: usize) -> Result<Self> {
        let n = model.len();
        if cutoff >= n {
            return Err(Error::InvalidParameter(format!("response cutoff {cutoff} needs more than {n} tracks")));
        }
        let walk = model.walk();
        let mut scales = Vec::with_capacity(cutoff + 1);
        for j in 0..=cutoff {
            let lambda = walk.eigenvalues()[j];
            if lambda.abs() < MIN_EXTENSION_EIGENVALUE {
                return Err(Error::IllConditionedExtension { index: j, value: lambda });
            }
            let col = walk.eigenvectors().column(j);
            let ms = col.iter().map(|v| v * v).sum::<f64>() / n as f64;
            scales.push(1.0 / ms.sqrt());
        }
        Ok(DiffusionBasis {
            model: model.clone(),
            cutoff,
            scales,
        })
    }

    pub fn model(&self) -> &DiffusionModel {
        &self.model
    }

    /// Normalized `ψ_j` at training track `i`.
    pub fn at_training(&self, j: usize, i: usize) -> f64 {
        self.model.walk().eigenvectors()[(i, j)] * self.scales[j]
    }
}

impl ResponseBasis<RegularTrack> for DiffusionBasis {
    fn len(&self) -> usize {
        self.cutoff + 1
    }

    fn eval_into(&self, y: &RegularTrack, out: &mut [f64]) -> Result<()> {
        let row = self.model.extension_row(y)?;
        let walk = self.model.walk();
        for (j, o) in out.iter_mut().enumerate().take(self.cutoff + 1) {
            let col = walk.eigenvectors().column(j);
            let dot: f64 = row.iter().zip(col.iter()).map(|(p, v)| p * v).sum();
            *o = dot / walk.eigenvalues()[j] * self.scales[j];
        }
        Ok(())
    }
}

/// Conditional series estimate `f̂(y|x) = Σ_i Σ_j θ̂_{i,j} φ_i(x) ψ_j(y)`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SeriesEstimate {
    pub predictor: CosineBasis,
    pub response_len: usize,
    /// Row-major `(I + 1) × (J + 1)`.
    pub coefficients: Vec<f64>,
    /// Predictor density at each training value.
    pub predictor_density: Vec<f64>,
}

impl SeriesEstimate {
    pub fn coefficient(&self, i: usize, j: usize) -> f64 {
        self.coefficients[i * self.response_len + j]
    }

    /// Evaluates from precomputed response basis values `ψ_0(y) .. ψ_J(y)`.
    pub fn evaluate_with(&self, x: f64, psi: &[f64]) -> Result<f64> {
        let mut phi = vec![0.0; self.predictor.len()];
        self.predictor.eval_into(x, &mut phi)?;
        let mut total = 0.0;
        for (i, p) in phi.iter().enumerate() {
            let row = &self.coefficients[i * self.response_len..(i + 1) * self.response_len];
            total += p * row.iter().zip(psi).map(|(c, v)| c * v).sum::<f64>();
        }
        Ok(total)
    }

    pub fn evaluate<Y: ?Sized, B: ResponseBasis<Y>>(&self, x: f64, y: &Y, response: &B) -> Result<f64> {
        let mut psi = vec![0.0; self.response_len];
        response.eval_into(y, &mut psi)?;
        self.evaluate_with(x, &psi)
    }
}

/// `θ̂_{i,j} = (1/n) Σ_k φ_i(x_k) ψ_j(y_k) / f̂_X(x_k)`.
pub fn fit_series_conditional<Y, B, D>(
    xs: &[f64],
    ys: &[Y],
    predictor: &CosineBasis,
    response: &B,
    fx: &D,
) -> Result<SeriesEstimate>
where
    B: ResponseBasis<Y>,
    D: PredictorDensity + ?Sized,
{
    if xs.len() != ys.len() {
        return Err(Error::Dimension {
            expected: xs.len(),
            found: ys.len(),
        });
    }
    if xs.is_empty() {
        return Err(Error::InvalidParameter("no pairs".into()));
    }
    let densities: Vec<f64> = xs.iter().map(|&x| fx.density(x)).collect();
    let low: Vec<f64> = xs
        .iter()
        .zip(&densities)
        .filter(|(_, &d)| !(d > DENSITY_FLOOR))
        .map(|(&x, _)| x)
        .collect();
    if !low.is_empty() {
        return Err(Error::DensityFloor(low));
    }
    let (ni, nj) = (predictor.len(), response.len());
    let mut sum = vec![0.0; ni * nj];
    let mut phi = vec![0.0; ni];
    let mut psi = vec![0.0; nj];
    for ((&x, y), &d) in xs.iter().zip(ys).zip(&densities) {
        predictor.eval_into(x, &mut phi)?;
        response.eval_into(y, &mut psi)?;
        for (i, p) in phi.iter().enumerate() {
            let w = p / d;
            for (s, v) in sum[i * nj..(i + 1) * nj].iter_mut().zip(&psi) {
                *s += w * v;
            }
        }
    }
    let n = xs.len() as f64;
    let coefficients: Vec<f64> = sum.into_iter().map(|s| s / n).collect();
    if coefficients.iter().any(|c| !c.is_finite()) {
        return Err(Error::NonFinite("series coefficient".into()));
    }
    Ok(SeriesEstimate {
        predictor: *predictor,
        response_len: nj,
        coefficients,
        predictor_density: densities,
    })
}


//! Synthetic trajectory archives with a known three-factor latent structure.
//!
//! Each track is a parabola-like path determined by a genesis position along
//! a fixed line, a heading and a total turning angle. Raw fixes carry
//! small Gaussian jitter and are then regularized like observed data.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{regularize, RawTrack, TrackSet, DEFAULT_POINTS};
use crate::error::{Error, Result};
use crate::rng::substream;

/// Generator parameters. All ranges are inclusive `[lo, hi]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSpec {
    /// Points per regularized track.
    pub points: usize,
    /// Raw fixes per storm before regularization.
    pub raw_fixes: usize,
    /// Genesis line endpoints, (lon, lat) degrees.
    pub genesis_from: [f64; 2],
    pub genesis_to: [f64; 2],
    /// Bearing range at 3/8 of the track, degrees clockwise from north.
    pub heading: [f64; 2],
    /// Total turning angle range along the track, degrees clockwise.
    pub curvature: [f64; 2],
    /// Along-track length scale, degrees.
    pub length: f64,
    /// Standard deviation of jitter on raw fixes, degrees.
    pub noise: f64,
    /// Storm years drawn uniformly from this range.
    pub years: [i32; 2],
    /// Strength of the coupling between a year's condition index and heading.
    pub condition_shift: f64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            points: DEFAULT_POINTS,
            raw_fixes: 24,
            genesis_from: [-46.0, 14.0],
            genesis_to: [-44.1, 14.0],
            heading: [267.5, 272.5],
            curvature: [0.0, 42.0],
            length: 50.0,
            noise: 0.02,
            years: [1950, 2005],
            condition_shift: 0.0,
        }
    }
}

/// Latent factors of one synthetic track, each in `[0, 1]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Latent {
    pub genesis: f64,
    pub heading: f64,
    pub curvature: f64,
}

#[derive(Clone, Debug)]
pub struct SyntheticSet {
    pub tracks: TrackSet,
    pub raw: Vec<RawTrack>,
    pub latents: Vec<Latent>,
    /// Per-year condition index, sorted by year.
    pub condition: Vec<(i32, f64)>,
}

impl SynthSpec {
    fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidParameter(m.to_string()));
        if self.points < 2 || self.raw_fixes < 2 {
            return bad("points and raw_fixes must be at least 2");
        }
        if self.length <= 0.0 || self.noise < 0.0 {
            return bad("length must be positive and noise nonnegative");
        }
        if self.years[0] > self.years[1] || self.heading[0] > self.heading[1] || self.curvature[0] > self.curvature[1] {
            return bad("ranges must satisfy lo <= hi");
        }
        Ok(())
    }

    /// Noise-free raw path for the given latent.
    ///
    /// The path has unit speed and bearing `θ(s) = θ_h + κ (s − 3/8)` for
    /// `s ∈ [0, 1]`. Centering the turn at 3/8 makes the displacement caused by
    /// a change of `κ` orthogonal to the one caused by a change of `θ_h`.
    pub fn path(&self, latent: &Latent) -> Vec<[f64; 2]> {
        const SUBSTEPS: usize = 32;
        let g = latent.genesis;
        let mut p = [
            self.genesis_from[0] + g * (self.genesis_to[0] - self.genesis_from[0]),
            self.genesis_from[1] + g * (self.genesis_to[1] - self.genesis_from[1]),
        ];
        let heading = lerp(self.heading, latent.heading).to_radians();
        let turn = lerp(self.curvature, latent.curvature).to_radians();
        let bearing = |s: f64| heading + turn * (s - 0.375);
        let intervals = self.raw_fixes - 1;
        let h = 1.0 / (intervals * SUBSTEPS) as f64;
        let mut out = Vec::with_capacity(self.raw_fixes);
        out.push(p);
        for k in 0..intervals {
            for q in 0..SUBSTEPS {
                let b = bearing(((k * SUBSTEPS + q) as f64 + 0.5) * h);
                p = [p[0] + self.length * h * b.sin(), p[1] + self.length * h * b.cos()];
            }
            out.push(p);
        }
        out
    }
}

fn lerp(range: [f64; 2], u: f64) -> f64 {
    range[0] + u * (range[1] - range[0])
}

/// Draws `n` synthetic tracks. Output is a pure function of `(n, spec, seed)`.
pub fn synthesize_tracks(n: usize, spec: &SynthSpec, seed: u64) -> Result<SyntheticSet> {
    if n == 0 {
        return Err(Error::InvalidParameter("n must be at least 1".into()));
    }
    spec.validate()?;

    let mut year_rng = substream(seed, 0);
    let condition: Vec<(i32, f64)> = (spec.years[0]..=spec.years[1])
        .map(|y| (y, year_rng.sample::<f64, _>(StandardNormal)))
        .collect();

    let mut tracks = Vec::with_capacity(n);
    let mut raw = Vec::with_capacity(n);
    let mut latents = Vec::with_capacity(n);
    let mut years = Vec::with_capacity(n);
    for i in 0..n {
        let mut rng = substream(seed, 1 + i as u64);
        let year = rng.random_range(spec.years[0]..=spec.years[1]);
        let index = condition[(year - spec.years[0]) as usize].1;
        let heading: f64 = rng.random();
        let latent = Latent {
            genesis: rng.random(),
            // Monotone warp of [0, 1]; positive index pushes headings up.
            heading: heading.powf((-spec.condition_shift * index).exp()),
            curvature: rng.random(),
        };
        let points: Vec<[f64; 2]> = spec
            .path(&latent)
            .into_iter()
            .map(|p| {
                let jitter: [f64; 2] = [StandardNormal.sample(&mut rng), StandardNormal.sample(&mut rng)];
                [p[0] + spec.noise * jitter[0], p[1] + spec.noise * jitter[1]]
            })
            .collect();
        let track = RawTrack::new(format!("S{i:04}"), points)?;
        tracks.push(regularize(&track, spec.points)?);
        raw.push(track);
        latents.push(latent);
        years.push(Some(year));
    }
    Ok(SyntheticSet {
        tracks: TrackSet::with_years(tracks, years)?,
        raw,
        latents,
        condition,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_given_seed() {
        let spec = SynthSpec::default();
        let a = synthesize_tracks(1, &spec, 42).unwrap();
        let b = synthesize_tracks(1, &spec, 42).unwrap();
        assert_eq!(a.tracks, b.tracks);
        let c = synthesize_tracks(1, &spec, 43).unwrap();
        assert_ne!(a.tracks, c.tracks);
    }

    #[test]
    fn archive_sized_like_hurdat_subset() {
        let s = synthesize_tracks(608, &SynthSpec::default(), 1).unwrap();
        assert_eq!(s.tracks.len(), 608);
        assert!(s.tracks.tracks().iter().all(|t| t.len() == 13));
        assert!(s.tracks.years().iter().all(|y| matches!(y, Some(1950..=2005))));
    }

    #[test]
    fn prefix_stable_across_n() {
        let spec = SynthSpec::default();
        let small = synthesize_tracks(5, &spec, 9).unwrap();
        let large = synthesize_tracks(50, &spec, 9).unwrap();
        assert_eq!(small.tracks.tracks(), &large.tracks.tracks()[..5]);
    }

    #[test]
    fn rejects_zero_count() {
        assert!(synthesize_tracks(0, &SynthSpec::default(), 0).is_err());
    }
}

//! Trajectory ingestion, arc-length regularization and the track metric.

mod parse;
mod synth;

pub use parse::{parse_tracks, read_tracks, write_tracks_csv, TrackFormat};
pub use synth::{synthesize_tracks, Latent, SynthSpec, SyntheticSet};

use std::collections::HashSet;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Number of points per regularized track unless configured otherwise.
pub const DEFAULT_POINTS: usize = 13;

/// Planar position in degrees.
pub type Point = [f64; 2];

/// A trajectory as observed: an ordered list of (lon, lat) fixes.
#[derive(Clone, Debug, PartialEq)]
pub struct RawTrack {
    pub id: String,
    pub points: Vec<Point>,
    pub timestamps: Option<Vec<String>>,
}

impl RawTrack {
    pub fn new(id: impl Into<String>, points: Vec<Point>) -> Result<Self> {
        let track = RawTrack {
            id: id.into(),
            points,
            timestamps: None,
        };
        track.validate()?;
        Ok(track)
    }

    pub fn validate(&self) -> Result<()> {
        if self.points.len() < 2 {
            return Err(Error::TooFewPoints {
                id: self.id.clone(),
                count: self.points.len(),
            });
        }
        for &[lon, lat] in &self.points {
            if !lon.is_finite() || !lat.is_finite() {
                return Err(Error::InvalidTrack {
                    id: self.id.clone(),
                    message: "non-finite coordinate".into(),
                });
            }
            if !(-90.0..=90.0).contains(&lat) {
                return Err(Error::InvalidTrack {
                    id: self.id.clone(),
                    message: format!("latitude {lat} out of range"),
                });
            }
        }
        if let Some(ts) = &self.timestamps {
            if ts.len() != self.points.len() {
                return Err(Error::InvalidTrack {
                    id: self.id.clone(),
                    message: "timestamp count differs from point count".into(),
                });
            }
        }
        Ok(())
    }
}

/// A trajectory resampled to a fixed number of points equally spaced in arc length.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegularTrack {
    pub id: String,
    pub points: Vec<Point>,
}

impl RegularTrack {
    pub fn new(id: impl Into<String>, points: Vec<Point>) -> Self {
        RegularTrack {
            id: id.into(),
            points,
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn genesis(&self) -> Point {
        self.points[0]
    }

    pub fn lysis(&self) -> Point {
        self.points[self.points.len() - 1]
    }

    /// Straight-line distance between the first and last points.
    pub fn chord(&self) -> f64 {
        norm(sub(self.lysis(), self.genesis()))
    }
}

/// Resamples `raw` to `p` points equally spaced along its piecewise-linear path.
///
/// The first and last raw points are copied verbatim.
pub fn regularize(raw: &RawTrack, p: usize) -> Result<RegularTrack> {
    raw.validate()?;
    if p < 2 {
        return Err(Error::InvalidParameter(format!(
            "regularized tracks need at least 2 points, got {p}"
        )));
    }
    let pts = &raw.points;
    let mut cumulative = Vec::with_capacity(pts.len());
    cumulative.push(0.0);
    for w in pts.windows(2) {
        let last = *cumulative.last().unwrap();
        cumulative.push(last + norm(sub(w[1], w[0])));
    }
    let total = *cumulative.last().unwrap();
    if total <= 0.0 {
        return Err(Error::DegenerateTrack { id: raw.id.clone() });
    }

    let mut out = Vec::with_capacity(p);
    out.push(pts[0]);
    let mut seg = 0;
    for k in 1..p - 1 {
        let target = total * k as f64 / (p - 1) as f64;
        while seg + 1 < pts.len() - 1 && cumulative[seg + 1] < target {
            seg += 1;
        }
        let len = cumulative[seg + 1] - cumulative[seg];
        let frac = if len > 0.0 {
            ((target - cumulative[seg]) / len).clamp(0.0, 1.0)
        } else {
            0.0
        };
        let (a, b) = (pts[seg], pts[seg + 1]);
        out.push([a[0] + frac * (b[0] - a[0]), a[1] + frac * (b[1] - a[1])]);
    }
    out.push(pts[pts.len() - 1]);
    Ok(RegularTrack::new(raw.id.clone(), out))
}

/// The track metric: sum of point-wise Euclidean distances in degrees.
///
/// With `lon_scaling` set, longitude differences are multiplied by the cosine
/// of the mean latitude of each point pair.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrackMetric {
    pub lon_scaling: bool,
}

impl TrackMetric {
    pub fn distance(&self, a: &RegularTrack, b: &RegularTrack) -> Result<f64> {
        if a.len() != b.len() {
            return Err(Error::Dimension {
                expected: a.len(),
                found: b.len(),
            });
        }
        Ok(self.between(&a.points, &b.points))
    }

    /// Distance between two equal-length point slices; lengths are not checked.
    #[inline]
    pub fn between(&self, a: &[Point], b: &[Point]) -> f64 {
        if self.lon_scaling {
            a.iter()
                .zip(b)
                .map(|(u, v)| {
                    let c = (0.5 * (u[1] + v[1])).to_radians().cos();
                    let dx = (u[0] - v[0]) * c;
                    let dy = u[1] - v[1];
                    (dx * dx + dy * dy).sqrt()
                })
                .sum()
        } else {
            a.iter()
                .zip(b)
                .map(|(u, v)| {
                    let dx = u[0] - v[0];
                    let dy = u[1] - v[1];
                    (dx * dx + dy * dy).sqrt()
                })
                .sum()
        }
    }
}

/// Plain (unscaled) track distance.
pub fn track_distance(a: &RegularTrack, b: &RegularTrack) -> Result<f64> {
    TrackMetric::default().distance(a, b)
}

/// An immutable collection of regularized tracks sharing one point count.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrackSet {
    tracks: Vec<RegularTrack>,
    years: Vec<Option<i32>>,
    points_per_track: usize,
}

impl TrackSet {
    pub fn new(tracks: Vec<RegularTrack>) -> Result<Self> {
        let years = vec![None; tracks.len()];
        Self::with_years(tracks, years)
    }

    pub fn with_years(tracks: Vec<RegularTrack>, years: Vec<Option<i32>>) -> Result<Self> {
        if years.len() != tracks.len() {
            return Err(Error::Dimension {
                expected: tracks.len(),
                found: years.len(),
            });
        }
        let p = tracks.first().map_or(DEFAULT_POINTS, |t| t.len());
        let mut seen = HashSet::with_capacity(tracks.len());
        for t in &tracks {
            if t.len() != p {
                return Err(Error::Dimension {
                    expected: p,
                    found: t.len(),
                });
            }
            if !seen.insert(t.id.as_str()) {
                return Err(Error::InvalidTrack {
                    id: t.id.clone(),
                    message: "duplicate id".into(),
                });
            }
        }
        Ok(TrackSet {
            tracks,
            years,
            points_per_track: p,
        })
    }

    pub fn regularized(raw: &[RawTrack], p: usize) -> Result<Self> {
        let tracks = raw.iter().map(|r| regularize(r, p)).collect::<Result<Vec<_>>>()?;
        Self::new(tracks)
    }

    pub fn tracks(&self) -> &[RegularTrack] {
        &self.tracks
    }

    pub fn years(&self) -> &[Option<i32>] {
        &self.years
    }

    pub fn len(&self) -> usize {
        self.tracks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tracks.is_empty()
    }

    pub fn points_per_track(&self) -> usize {
        self.points_per_track
    }

    pub fn get(&self, i: usize) -> &RegularTrack {
        &self.tracks[i]
    }

    /// Copy of the set with the track at `index` removed.
    pub fn without(&self, index: usize) -> TrackSet {
        let mut tracks = self.tracks.clone();
        let mut years = self.years.clone();
        tracks.remove(index);
        years.remove(index);
        TrackSet {
            tracks,
            years,
            points_per_track: self.points_per_track,
        }
    }

    /// Subset by index list, preserving the given order.
    pub fn select(&self, indices: &[usize]) -> TrackSet {
        TrackSet {
            tracks: indices.iter().map(|&i| self.tracks[i].clone()).collect(),
            years: indices.iter().map(|&i| self.years[i]).collect(),
            points_per_track: self.points_per_track,
        }
    }

    /// SHA-256 over ids and coordinate bit patterns, hex encoded.
    pub fn content_hash(&self) -> String {
        let mut h = Sha256::new();
        h.update((self.points_per_track as u64).to_le_bytes());
        for t in &self.tracks {
            h.update((t.id.len() as u64).to_le_bytes());
            h.update(t.id.as_bytes());
            for p in &t.points {
                h.update(p[0].to_bits().to_le_bytes());
                h.update(p[1].to_bits().to_le_bytes());
            }
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }
}

#[inline]
pub(crate) fn sub(a: Point, b: Point) -> Point {
    [a[0] - b[0], a[1] - b[1]]
}

#[inline]
pub(crate) fn norm(a: Point) -> f64 {
    a[0].hypot(a[1])
}

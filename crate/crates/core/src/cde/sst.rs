//! Gridded sea-surface temperature and its reduction over tracks.

use std::collections::BTreeSet;
use std::io::{Read, Write};

use crate::error::{Error, Result};
use crate::trackdata::RegularTrack;

/// Values on a rectilinear `(time, lat, lon)` grid; `NaN` marks missing data.
#[derive(Clone, Debug, PartialEq)]
pub struct SstField {
    times: Vec<i64>,
    lons: Vec<f64>,
    lats: Vec<f64>,
    /// Index `(t * lats + y) * lons + x`.
    values: Vec<f64>,
}

impl SstField {
    pub fn new(times: Vec<i64>, lons: Vec<f64>, lats: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        let ascending = |v: &[f64]| v.windows(2).all(|w| w[0] < w[1]);
        if times.is_empty() || lons.len() < 2 || lats.len() < 2 {
            return Err(Error::InvalidParameter("field grid needs one time and two nodes per axis".into()));
        }
        if !times.windows(2).all(|w| w[0] < w[1]) || !ascending(&lons) || !ascending(&lats) {
            return Err(Error::InvalidParameter("grid axes must be strictly increasing".into()));
        }
        if values.len() != times.len() * lons.len() * lats.len() {
            return Err(Error::Dimension {
                expected: times.len() * lons.len() * lats.len(),
                found: values.len(),
            });
        }
        if values.iter().any(|v| v.is_infinite()) {
            return Err(Error::NonFinite("infinite field value".into()));
        }
        Ok(SstField {
            times,
            lons,
            lats,
            values,
        })
    }

    /// Field generated by `f(time, lon, lat)` on the given axes.
    pub fn from_fn(times: Vec<i64>, lons: Vec<f64>, lats: Vec<f64>, f: impl Fn(i64, f64, f64) -> f64) -> Result<Self> {
        let mut values = Vec::with_capacity(times.len() * lons.len() * lats.len());
        for &t in &times {
            for &y in &lats {
                for &x in &lons {
                    values.push(f(t, x, y));
                }
            }
        }
        Self::new(times, lons, lats, values)
    }

    pub fn times(&self) -> &[i64] {
        &self.times
    }

    pub fn lons(&self) -> &[f64] {
        &self.lons
    }

    pub fn lats(&self) -> &[f64] {
        &self.lats
    }

    fn at(&self, t: usize, y: usize, x: usize) -> f64 {
        self.values[(t * self.lats.len() + y) * self.lons.len() + x]
    }

    fn time_index(&self, time: i64) -> Result<usize> {
        self.times
            .binary_search(&time)
            .map_err(|_| Error::InvalidParameter(format!("time {time} not in field")))
    }

    /// Bilinear interpolation at `(lon, lat)` for the given time.
    pub fn sample(&self, time: i64, lon: f64, lat: f64) -> Result<f64> {
        let t = self.time_index(time)?;
        let (x, fx) = cell(&self.lons, lon).ok_or(Error::Extrapolation { lon, lat })?;
        let (y, fy) = cell(&self.lats, lat).ok_or(Error::Extrapolation { lon, lat })?;
        let corners = [
            (y, x, (1.0 - fy) * (1.0 - fx)),
            (y, x + 1, (1.0 - fy) * fx),
            (y + 1, x, fy * (1.0 - fx)),
            (y + 1, x + 1, fy * fx),
        ];
        let mut acc = 0.0;
        for (yy, xx, w) in corners {
            if w == 0.0 {
                continue;
            }
            let v = self.at(t, yy, xx);
            if v.is_nan() {
                return Err(Error::MissingValue {
                    time,
                    lon: self.lons[xx],
                    lat: self.lats[yy],
                });
            }
            acc += w * v;
        }
        Ok(acc)
    }

    /// Reads `time,lon,lat,value` rows; `NaN`, `NA` or an empty value is missing.
    pub fn read_csv<R: Read>(source: R) -> Result<Self> {
        let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(source);
        let mut rows = Vec::new();
        for record in reader.records() {
            let record = record.map_err(|e| Error::Parse {
                line: e.position().map_or(0, |p| p.line() as usize),
                message: e.to_string(),
            })?;
            let line = record.position().map_or(0, |p| p.line() as usize);
            let bad = |what: &str| Error::Parse {
                line,
                message: format!("bad {what}"),
            };
            let time: i64 = record.get(0).and_then(|s| s.parse().ok()).ok_or_else(|| bad("time"))?;
            let lon: f64 = record.get(1).and_then(|s| s.parse().ok()).ok_or_else(|| bad("lon"))?;
            let lat: f64 = record.get(2).and_then(|s| s.parse().ok()).ok_or_else(|| bad("lat"))?;
            let raw = record.get(3).ok_or_else(|| bad("value"))?;
            let value = match raw {
                "" | "NA" | "NaN" | "nan" => f64::NAN,
                s => s.parse().map_err(|_| bad("value"))?,
            };
            rows.push((time, lon, lat, value, line));
        }
        let times: Vec<i64> = rows.iter().map(|r| r.0).collect::<BTreeSet<_>>().into_iter().collect();
        let axis = |pick: fn(&(i64, f64, f64, f64, usize)) -> f64| -> Vec<f64> {
            let mut v: Vec<f64> = rows.iter().map(pick).collect();
            v.sort_by(f64::total_cmp);
            v.dedup();
            v
        };
        let lons = axis(|r| r.1);
        let lats = axis(|r| r.2);
        let total = times.len() * lons.len() * lats.len();
        if rows.len() != total {
            return Err(Error::InvalidParameter(format!(
                "field is not a full grid: {} rows for {total} nodes",
                rows.len()
            )));
        }
        let mut values = vec![f64::NAN; total];
        let mut seen = vec![false; total];
        for (time, lon, lat, value, line) in rows {
            let t = times.binary_search(&time).unwrap();
            let x = lons.binary_search_by(|v| v.total_cmp(&lon)).unwrap();
            let y = lats.binary_search_by(|v| v.total_cmp(&lat)).unwrap();
            let idx = (t * lats.len() + y) * lons.len() + x;
            if seen[idx] {
                return Err(Error::Parse {
                    line,
                    message: "duplicate grid node".into(),
                });
            }
            seen[idx] = true;
            values[idx] = value;
        }
        Self::new(times, lons, lats, values)
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "time,lon,lat,value")?;
        for (ti, &t) in self.times.iter().enumerate() {
            for (yi, &y) in self.lats.iter().enumerate() {
                for (xi, &x) in self.lons.iter().enumerate() {
                    let v = self.at(ti, yi, xi);
                    if v.is_nan() {
                        writeln!(out, "{t},{x},{y},NA")?;
                    } else {
                        writeln!(out, "{t},{x},{y},{v}")?;
                    }
                }
            }
        }
        Ok(())
    }
}

/// Lower node index and fractional offset of `v` on a sorted axis.
fn cell(axis: &[f64], v: f64) -> Option<(usize, f64)> {
    let last = axis.len() - 1;
    if !(axis[0] <= v && v <= axis[last]) {
        return None;
    }
    let i = axis.partition_point(|&a| a <= v).saturating_sub(1).min(last - 1);
    Some((i, (v - axis[i]) / (axis[i + 1] - axis[i])))
}

/// Mean of the field sampled at every track point at `time`.
pub fn sst_over_track(field: &SstField, track: &RegularTrack, time: i64) -> Result<f64> {
    let mut total = 0.0;
    for p in &track.points {
        total += field.sample(time, p[0], p[1])?;
    }
    Ok(total / track.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn axis(lo: f64, hi: f64, step: f64) -> Vec<f64> {
        let n = ((hi - lo) / step).round() as usize;
        (0..=n).map(|i| lo + step * i as f64).collect()
    }

    fn track() -> RegularTrack {
        RegularTrack::new("t", (0..13).map(|i| [-70.0 + 2.3 * i as f64, 12.0 + 1.1 * i as f64]).collect())
    }

    #[test]
    fn constant_field() {
        let f = SstField::from_fn(vec![1990], axis(-90.0, 0.0, 2.0), axis(0.0, 40.0, 2.0), |_, _, _| 27.5).unwrap();
        assert!((sst_over_track(&f, &track(), 1990).unwrap() - 27.5).abs() < 1e-12);
    }

    #[test]
    fn linear_in_longitude_gives_centroid_value() {
        let f = SstField::from_fn(vec![0], axis(-90.0, 0.0, 2.5), axis(0.0, 40.0, 2.5), |_, x, _| 20.0 + 0.1 * x).unwrap();
        let t = track();
        let centroid = t.points.iter().map(|p| p[0]).sum::<f64>() / 13.0;
        assert!((sst_over_track(&f, &t, 0).unwrap() - (20.0 + 0.1 * centroid)).abs() < 1e-12);
    }

    #[test]
    fn random_field_matches_per_point_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let lons = axis(-90.0, 0.0, 5.0);
        let lats = axis(0.0, 40.0, 5.0);
        let vals: Vec<f64> = (0..lons.len() * lats.len()).map(|_| rng.random_range(20.0..30.0)).collect();
        let f = SstField::new(vec![7], lons.clone(), lats.clone(), vals.clone()).unwrap();
        let t = track();
        let mut acc = 0.0;
        for p in &t.points {
            // Independent bilinear evaluation via explicit cell search.
            let xi = lons.iter().rposition(|&l| l <= p[0]).unwrap().min(lons.len() - 2);
            let yi = lats.iter().rposition(|&l| l <= p[1]).unwrap().min(lats.len() - 2);
            let tx = (p[0] - lons[xi]) / (lons[xi + 1] - lons[xi]);
            let ty = (p[1] - lats[yi]) / (lats[yi + 1] - lats[yi]);
            let v = |y: usize, x: usize| vals[y * lons.len() + x];
            acc += v(yi, xi) * (1.0 - tx) * (1.0 - ty)
                + v(yi, xi + 1) * tx * (1.0 - ty)
                + v(yi + 1, xi) * (1.0 - tx) * ty
                + v(yi + 1, xi + 1) * tx * ty;
        }
        assert!((sst_over_track(&f, &t, 7).unwrap() - acc / 13.0).abs() < 1e-12);
    }

    #[test]
    fn linear_in_field() {
        let lons = axis(-90.0, 0.0, 5.0);
        let lats = axis(0.0, 40.0, 5.0);
        let f1 = SstField::from_fn(vec![0], lons.clone(), lats.clone(), |_, x, y| (x * 0.3).sin() + y).unwrap();
        let f2 = SstField::from_fn(vec![0], lons.clone(), lats.clone(), |_, x, y| (y * 0.2).cos() * x).unwrap();
        let sum = SstField::from_fn(vec![0], lons, lats, |_, x, y| 2.0 * ((x * 0.3).sin() + y) - 3.0 * (y * 0.2).cos() * x).unwrap();
        let t = track();
        let lhs = sst_over_track(&sum, &t, 0).unwrap();
        let rhs = 2.0 * sst_over_track(&f1, &t, 0).unwrap() - 3.0 * sst_over_track(&f2, &t, 0).unwrap();
        assert!((lhs - rhs).abs() < 1e-9);
    }

    #[test]
    fn outside_grid_is_an_error() {
        let f = SstField::from_fn(vec![0], axis(-60.0, 0.0, 5.0), axis(0.0, 40.0, 5.0), |_, _, _| 1.0).unwrap();
        assert!(matches!(sst_over_track(&f, &track(), 0), Err(Error::Extrapolation { .. })));
    }

    #[test]
    fn missing_corner_is_an_error() {
        let mut f = SstField::from_fn(vec![0], axis(-90.0, 0.0, 5.0), axis(0.0, 40.0, 5.0), |_, _, _| 1.0).unwrap();
        // Knock out the node nearest the first track point (-70, 12).
        let x = f.lons.iter().position(|&l| l == -70.0).unwrap();
        let y = f.lats.iter().position(|&l| l == 15.0).unwrap();
        let nx = f.lons.len();
        f.values[y * nx + x] = f64::NAN;
        assert!(matches!(sst_over_track(&f, &track(), 0), Err(Error::MissingValue { .. })));
    }

    #[test]
    fn csv_round_trip() {
        let mut f = SstField::from_fn(vec![1, 2], axis(-10.0, 0.0, 5.0), axis(0.0, 10.0, 5.0), |t, x, y| t as f64 + x - y).unwrap();
        f.values[3] = f64::NAN;
        let mut buf = Vec::new();
        f.write_csv(&mut buf).unwrap();
        let back = SstField::read_csv(buf.as_slice()).unwrap();
        assert_eq!(back.times, f.times);
        assert_eq!(back.lons, f.lons);
        for (a, b) in back.values.iter().zip(&f.values) {
            assert!(a == b || (a.is_nan() && b.is_nan()));
        }
    }
}

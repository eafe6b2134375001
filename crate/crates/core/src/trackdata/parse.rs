use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Point, RawTrack, RegularTrack};
use crate::error::{Error, Result};

/// Input record layouts understood by [`parse_tracks`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrackFormat {
    /// `id,seq,lon,lat`, one row per fix.
    Csv,
    /// `ID,NAME,COUNT` header lines, each followed by COUNT fix rows.
    Hurdat,
}

impl std::str::FromStr for TrackFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "csv" => Ok(TrackFormat::Csv),
            "hurdat" | "hurdat-like" => Ok(TrackFormat::Hurdat),
            other => Err(Error::InvalidParameter(format!("unknown track format `{other}`"))),
        }
    }
}

pub fn read_tracks(path: &Path, format: TrackFormat) -> Result<Vec<RawTrack>> {
    let file = File::open(path)?;
    parse_tracks(BufReader::new(file), format)
}

/// Parses raw tracks, one per storm, with fixes in observation order.
pub fn parse_tracks<R: Read>(source: R, format: TrackFormat) -> Result<Vec<RawTrack>> {
    let tracks = match format {
        TrackFormat::Csv => parse_csv(source)?,
        TrackFormat::Hurdat => parse_hurdat(BufReader::new(source))?,
    };
    if tracks.is_empty() {
        log::warn!("track source contained no records");
    }
    for t in &tracks {
        t.validate()?;
    }
    Ok(tracks)
}

fn parse_csv<R: Read>(source: R) -> Result<Vec<RawTrack>> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .has_headers(true)
        .from_reader(source);

    let headers = match reader.headers() {
        Ok(h) => h.clone(),
        Err(e) => return Err(csv_error(e, 1)),
    };
    if headers.is_empty() || (headers.len() == 1 && headers[0].is_empty()) {
        return Ok(Vec::new());
    }
    let column = |name: &str| {
        headers
            .iter()
            .position(|h| h.eq_ignore_ascii_case(name))
            .ok_or_else(|| Error::Parse {
                line: 1,
                message: format!("missing column `{name}`"),
            })
    };
    let (ci, cs, cx, cy) = (column("id")?, column("seq")?, column("lon")?, column("lat")?);

    let mut order: Vec<String> = Vec::new();
    let mut rows: HashMap<String, Vec<(i64, Point)>> = HashMap::new();
    for record in reader.records() {
        let record = record.map_err(|e| csv_error(e, 0))?;
        let line = record.position().map_or(0, |p| p.line() as usize);
        let field = |c: usize| {
            record.get(c).ok_or_else(|| Error::Parse {
                line,
                message: format!("missing field {c}"),
            })
        };
        let id = field(ci)?.to_string();
        let seq: i64 = field(cs)?.parse().map_err(|_| Error::Parse {
            line,
            message: format!("bad seq `{}`", field(cs).unwrap_or("")),
        })?;
        let lon = parse_number(field(cx)?, line)?;
        let lat = parse_number(field(cy)?, line)?;
        if !rows.contains_key(&id) {
            order.push(id.clone());
        }
        rows.entry(id).or_default().push((seq, [lon, lat]));
    }

    Ok(order
        .into_iter()
        .map(|id| {
            let mut fixes = rows.remove(&id).unwrap();
            fixes.sort_by_key(|f| f.0);
            RawTrack {
                id,
                points: fixes.into_iter().map(|f| f.1).collect(),
                timestamps: None,
            }
        })
        .collect())
}

fn parse_hurdat<R: BufRead>(source: R) -> Result<Vec<RawTrack>> {
    let mut tracks = Vec::new();
    let mut lines = source.lines().enumerate();
    while let Some((idx, line)) = lines.next() {
        let line = line?;
        let lineno = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() < 3 {
            return Err(Error::Parse {
                line: lineno,
                message: "expected header `ID,NAME,COUNT`".into(),
            });
        }
        let id = fields[0].to_string();
        let count: usize = fields[2].parse().map_err(|_| Error::Parse {
            line: lineno,
            message: format!("bad fix count `{}`", fields[2]),
        })?;
        let mut points = Vec::with_capacity(count);
        let mut stamps = Vec::with_capacity(count);
        for _ in 0..count {
            let (idx, row) = lines.next().ok_or_else(|| Error::Parse {
                line: lineno,
                message: format!("storm `{id}` ends before {count} fixes"),
            })?;
            let row = row?;
            let (stamp, point) = parse_fix(&row, idx + 1)?;
            stamps.push(stamp);
            points.push(point);
        }
        tracks.push(RawTrack {
            id,
            points,
            timestamps: Some(stamps),
        });
    }
    Ok(tracks)
}

/// Finds the first adjacent `lat[NS], lon[EW]` field pair; everything before it
/// is the timestamp.
fn parse_fix(row: &str, line: usize) -> Result<(String, Point)> {
    let fields: Vec<&str> = row.split(',').map(str::trim).collect();
    for j in 1..fields.len().saturating_sub(1) {
        if let (Some(lat), Some(lon)) = (hemisphere(fields[j], 'N', 'S'), hemisphere(fields[j + 1], 'E', 'W')) {
            let stamp = fields[..j].iter().filter(|f| !f.is_empty() && f.chars().all(|c| c.is_ascii_digit() || c == ' ')).cloned().collect::<Vec<_>>().join(" ");
            return Ok((stamp, [lon, lat]));
        }
    }
    Err(Error::Parse {
        line,
        message: "no `lat[N|S],lon[E|W]` field pair".into(),
    })
}

fn hemisphere(field: &str, pos: char, neg: char) -> Option<f64> {
    let last = field.chars().last()?.to_ascii_uppercase();
    let sign = if last == pos {
        1.0
    } else if last == neg {
        -1.0
    } else {
        return None;
    };
    let v: f64 = field[..field.len() - 1].trim().parse().ok()?;
    v.is_finite().then_some(sign * v)
}

fn parse_number(s: &str, line: usize) -> Result<f64> {
    let v: f64 = s.parse().map_err(|_| Error::Parse {
        line,
        message: format!("bad number `{s}`"),
    })?;
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::Parse {
            line,
            message: format!("non-finite number `{s}`"),
        })
    }
}

fn csv_error(e: csv::Error, fallback_line: usize) -> Error {
    let line = e.position().map_or(fallback_line, |p| p.line() as usize);
    Error::Parse {
        line,
        message: e.to_string(),
    }
}

/// Writes tracks in the `id,seq,lon,lat` schema accepted by [`parse_tracks`].
pub fn write_tracks_csv<W: Write>(tracks: &[RegularTrack], mut out: W) -> Result<()> {
    writeln!(out, "id,seq,lon,lat")?;
    for t in tracks {
        for (k, p) in t.points.iter().enumerate() {
            writeln!(out, "{},{},{},{}", t.id, k, p[0], p[1])?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_rows_map_to_points() {
        let src = "id,seq,lon,lat\nA,2,-60.0,15.5\nA,0,-58,14\nB,0,1,2\nA,1,-59,15\nA,3,-61,16\nB,1,2,3\n";
        let t = parse_tracks(src.as_bytes(), TrackFormat::Csv).unwrap();
        assert_eq!(t.len(), 2);
        assert_eq!(t[0].id, "A");
        assert_eq!(t[0].points, vec![[-58.0, 14.0], [-59.0, 15.0], [-60.0, 15.5], [-61.0, 16.0]]);
        assert_eq!(t[1].points.len(), 2);
    }

    #[test]
    fn empty_sources_give_empty_lists() {
        assert!(parse_tracks("".as_bytes(), TrackFormat::Csv).unwrap().is_empty());
        assert!(parse_tracks("id,seq,lon,lat\n".as_bytes(), TrackFormat::Csv).unwrap().is_empty());
        assert!(parse_tracks("".as_bytes(), TrackFormat::Hurdat).unwrap().is_empty());
    }

    #[test]
    fn malformed_row_reports_line() {
        let src = "id,seq,lon,lat\nA,0,1,2\nA,1,oops,3\n";
        match parse_tracks(src.as_bytes(), TrackFormat::Csv) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn single_fix_track_rejected_with_id() {
        let src = "id,seq,lon,lat\nA,0,1,2\nA,1,2,3\nLONE,0,5,5\n";
        match parse_tracks(src.as_bytes(), TrackFormat::Csv) {
            Err(Error::TooFewPoints { id, count }) => {
                assert_eq!(id, "LONE");
                assert_eq!(count, 1);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn hurdat_like_records() {
        let src = "AL011950,ABLE,3\n19500812 0000,17.1N,55.5W,35\n19500812 0600,17.7N,56.3W,40\n19500812 1200,18.2N,57.4W\n\
                   AL021950,BAKER,2,\n19500818, 1200,  , TS, 15.0N, 10.0E, 50\n19500818, 1800,  , TS, 15.5S, 11.0E, 50\n";
        let t = parse_tracks(src.as_bytes(), TrackFormat::Hurdat).unwrap();
        assert_eq!(t.len(), 2);
        assert_eq!(t[0].id, "AL011950");
        assert_eq!(t[0].points[0], [-55.5, 17.1]);
        assert_eq!(t[0].timestamps.as_ref().unwrap()[1], "19500812 0600");
        assert_eq!(t[1].points[1], [11.0, -15.5]);
        assert_eq!(t[1].timestamps.as_ref().unwrap()[0], "19500818 1200");
    }

    #[test]
    fn hurdat_truncated_storm() {
        let src = "AL011950,ABLE,3\n19500812 0000,17.1N,55.5W\n";
        assert!(matches!(
            parse_tracks(src.as_bytes(), TrackFormat::Hurdat),
            Err(Error::Parse { line: 1, .. })
        ));
    }

    #[test]
    fn written_csv_parses_back() {
        let t = RegularTrack::new("s1", vec![[-50.125, 12.0], [-51.0, 13.3333333333333], [-52.0, 14.0]]);
        let mut buf = Vec::new();
        write_tracks_csv(std::slice::from_ref(&t), &mut buf).unwrap();
        let back = parse_tracks(buf.as_slice(), TrackFormat::Csv).unwrap();
        assert_eq!(back[0].points, t.points);
    }
}

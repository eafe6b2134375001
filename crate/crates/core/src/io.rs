//! CSV and JSON writers for embeddings, density grids and assessments.

use std::io::Write;

use serde::Serialize;

use crate::diffusion::EmbeddedPoint;
use crate::error::{Error, Result};
use crate::validation::AssessmentRow;

fn coord_header(m: usize) -> String {
    (1..=m).map(|j| format!("d{j}")).collect::<Vec<_>>().join(",")
}

fn join(values: &[f64]) -> String {
    values.iter().map(|v| format!("{v}")).collect::<Vec<_>>().join(",")
}

/// `id,d1..dm`, one row per point.
pub fn write_points_csv<W: Write>(mut out: W, ids: &[String], points: &[EmbeddedPoint]) -> Result<()> {
    if ids.len() != points.len() {
        return Err(Error::Dimension {
            expected: ids.len(),
            found: points.len(),
        });
    }
    let m = points.first().map_or(0, EmbeddedPoint::dim);
    writeln!(out, "id,{}", coord_header(m))?;
    for (id, p) in ids.iter().zip(points) {
        if p.dim() != m {
            return Err(Error::Dimension { expected: m, found: p.dim() });
        }
        writeln!(out, "{id},{}", join(p.coords()))?;
    }
    Ok(())
}

/// `d1..dm,density`; each row holds coordinates followed by the value.
pub fn write_grid_csv<W: Write>(mut out: W, m: usize, rows: &[Vec<f64>]) -> Result<()> {
    writeln!(out, "{},density", coord_header(m))?;
    for row in rows {
        if row.len() != m + 1 {
            return Err(Error::Dimension {
                expected: m + 1,
                found: row.len(),
            });
        }
        writeln!(out, "{}", join(row))?;
    }
    Ok(())
}

/// `id,sample,within_nn,d1..dm`.
pub fn write_assessment_csv<W: Write>(mut out: W, rows: &[AssessmentRow]) -> Result<()> {
    let m = rows.first().map_or(0, |r| r.coords.len());
    writeln!(out, "id,sample,within_nn,{}", coord_header(m))?;
    for r in rows {
        writeln!(out, "{},{},{},{}", r.id, r.sample.as_str(), r.within_nn, join(&r.coords))?;
    }
    Ok(())
}

/// Pretty JSON with a trailing newline.
pub fn write_json<W: Write, T: Serialize + ?Sized>(mut out: W, value: &T) -> Result<()> {
    serde_json::to_writer_pretty(&mut out, value)?;
    writeln!(out)?;
    Ok(())
}

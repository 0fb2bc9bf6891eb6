//! Comma-separated point files: one point per row, optional header row.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use ifsem_core::{Dataset, Points};

use crate::error::{IoError, Result};

fn parse_row(line: &str) -> Option<Vec<f64>> {
    line.split(',').map(|c| c.trim().parse::<f64>().ok().filter(|v| v.is_finite())).collect()
}

/// Parses CSV text. A first row that does not parse as numbers is taken as a
/// header; blank lines are ignored.
pub fn parse_csv(text: &str, path: &Path) -> Result<Points> {
    let mut points: Option<Points> = None;
    let mut seen_row = false;
    for (idx, line) in text.lines().enumerate() {
        let line_no = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let parsed = parse_row(line);
        let first = !seen_row;
        seen_row = true;
        let row = match parsed {
            Some(r) => r,
            None if first => continue,
            None => {
                return Err(IoError::Parse {
                    path: path.into(),
                    line: line_no,
                    message: format!("expected finite numbers, got '{}'", line.trim()),
                })
            }
        };
        let pts = points.get_or_insert_with(|| Points::new(row.len()));
        if row.len() != pts.dim() {
            return Err(IoError::Parse {
                path: path.into(),
                line: line_no,
                message: format!("expected {} columns, found {}", pts.dim(), row.len()),
            });
        }
        pts.push(&row)?;
    }
    points.ok_or_else(|| IoError::format(path, "no data rows"))
}

/// Reads a point file into a dataset named after the file stem.
pub fn load_csv(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| IoError::io(path, e))?;
    let points = parse_csv(&text, path)?;
    let name = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    Ok(Dataset::new(points, name, path.display().to_string())?)
}

/// Formats points with 17 significant digits, no header.
pub fn format_csv(points: &Points) -> String {
    let mut out = String::with_capacity(points.len() * points.dim() * 24);
    for row in points.rows() {
        for (j, v) in row.iter().enumerate() {
            if j > 0 {
                out.push(',');
            }
            write!(out, "{v:.16e}").expect("writing to a string");
        }
        out.push('\n');
    }
    out
}

pub fn write_csv(path: impl AsRef<Path>, points: &Points) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, format_csv(points)).map_err(|e| IoError::io(path, e))
}

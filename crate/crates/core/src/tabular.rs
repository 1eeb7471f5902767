//! Comma-separated tables for data files and draw outputs.
//!
//! Deliberately minimal: comma separator, no quoting, cells trimmed,
//! blank lines skipped. Floats are written with `Display`, which
//! round-trips exactly, and every parse failure carries the file path and
//! 1-based line number.

use std::fmt::Display;
use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::scalar::{cast, Real};

#[derive(Debug, Clone)]
pub struct Row {
    pub line: usize,
    pub cells: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct Table {
    pub path: PathBuf,
    pub headers: Vec<String>,
    pub rows: Vec<Row>,
}

impl Table {
    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref().to_path_buf();
        let text = fs::read_to_string(&path)?;
        let mut lines = text
            .lines()
            .enumerate()
            .map(|(i, l)| (i + 1, l.trim()))
            .filter(|(_, l)| !l.is_empty());
        let (_, header_line) = lines.next().ok_or_else(|| Error::Parse {
            path: path.display().to_string(),
            line: 1,
            message: "empty table".into(),
        })?;
        let headers: Vec<String> = header_line
            .split(',')
            .map(|c| c.trim().to_string())
            .collect();
        let rows = lines
            .map(|(line, l)| {
                let cells: Vec<String> = l.split(',').map(|c| c.trim().to_string()).collect();
                if cells.len() != headers.len() {
                    return Err(Error::Parse {
                        path: path.display().to_string(),
                        line,
                        message: format!("{} cells under {} headers", cells.len(), headers.len()),
                    });
                }
                Ok(Row { line, cells })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            path,
            headers,
            rows,
        })
    }

    pub fn column(&self, name: &str) -> Result<usize> {
        self.headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Parse {
                path: self.path.display().to_string(),
                line: 1,
                message: format!("no column named {name}; have {}", self.headers.join(", ")),
            })
    }

    pub fn number<T: Real>(&self, row: usize, col: usize) -> Result<T> {
        let r = &self.rows[row];
        r.cells[col]
            .parse::<f64>()
            .map(cast)
            .map_err(|_| Error::Parse {
                path: self.path.display().to_string(),
                line: r.line,
                message: format!(
                    "{} is not a number (column {})",
                    r.cells[col], self.headers[col]
                ),
            })
    }

    pub fn integer(&self, row: usize, col: usize) -> Result<usize> {
        let r = &self.rows[row];
        r.cells[col].parse::<usize>().map_err(|_| Error::Parse {
            path: self.path.display().to_string(),
            line: r.line,
            message: format!(
                "{} is not a non-negative integer (column {})",
                r.cells[col], self.headers[col]
            ),
        })
    }
}

fn check_cell(path: &Path, cell: &str) -> Result<()> {
    if cell.contains(',') || cell.contains('\n') {
        return Err(Error::Parse {
            path: path.display().to_string(),
            line: 0,
            message: format!("cell {cell:?} contains a separator"),
        });
    }
    Ok(())
}

/// Writes a table; every row must match the header width.
pub fn write_csv<C: Display>(
    path: impl AsRef<Path>,
    headers: &[impl AsRef<str>],
    rows: impl IntoIterator<Item = Vec<C>>,
) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::new();
    for (i, h) in headers.iter().enumerate() {
        check_cell(path, h.as_ref())?;
        if i > 0 {
            out.push(',');
        }
        out.push_str(h.as_ref());
    }
    out.push('\n');
    for row in rows {
        let mut n = 0;
        for (i, c) in row.iter().enumerate() {
            let cell = c.to_string();
            check_cell(path, &cell)?;
            if i > 0 {
                out.push(',');
            }
            out.push_str(&cell);
            n += 1;
        }
        if n != headers.len() {
            return Err(Error::Parse {
                path: path.display().to_string(),
                line: 0,
                message: format!("row with {n} cells under {} headers", headers.len()),
            });
        }
        out.push('\n');
    }
    fs::write(path, out)?;
    Ok(())
}

/// Writes a numeric matrix, one table row per matrix row.
pub fn write_matrix<T: Real>(
    path: impl AsRef<Path>,
    headers: &[impl AsRef<str>],
    m: &DMatrix<T>,
) -> Result<()> {
    write_csv(
        path,
        headers,
        (0..m.nrows()).map(|r| m.row(r).iter().copied().collect()),
    )
}

/// Reads a fully numeric table into a matrix.
pub fn read_matrix<T: Real>(path: impl AsRef<Path>) -> Result<(Vec<String>, DMatrix<T>)> {
    let table = Table::read(path)?;
    let (nr, nc) = (table.rows.len(), table.headers.len());
    let mut m = DMatrix::zeros(nr, nc);
    for r in 0..nr {
        for c in 0..nc {
            m[(r, c)] = table.number(r, c)?;
        }
    }
    Ok((table.headers, m))
}

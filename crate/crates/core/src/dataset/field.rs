use std::io::{BufRead, Write};

use crate::error::{invalid, Error, Result};

pub const THRESHOLD: f64 = 0.5;

/// Row-major 2D scalar field.
#[derive(Debug, Clone, PartialEq)]
pub struct Field {
    pub rows: usize,
    pub cols: usize,
    pub values: Vec<f64>,
}

impl Field {
    pub fn new(rows: usize, cols: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != rows * cols {
            return invalid(format!(
                "field of {rows}x{cols} needs {} values, got {}",
                rows * cols,
                values.len()
            ));
        }
        Ok(Self { rows, cols, values })
    }

    /// Element densities of an `nx` by `ny` mesh.
    pub fn from_densities(nx: usize, ny: usize, densities: &[f64]) -> Result<Self> {
        Self::new(ny, nx, densities.to_vec())
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.cols + col]
    }

    pub fn same_shape(&self, other: &Field) -> bool {
        self.rows == other.rows && self.cols == other.cols
    }

    pub fn is_binary(&self) -> bool {
        self.values.iter().all(|&v| v == 0.0 || v == 1.0)
    }

    /// Comma-separated rows.
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        for row in self.values.chunks(self.cols.max(1)) {
            let line: Vec<String> = row.iter().map(|v| format!("{v:e}")).collect();
            writeln!(out, "{}", line.join(","))?;
        }
        Ok(())
    }

    pub fn read_csv<R: BufRead>(input: R) -> Result<Self> {
        let mut values = Vec::new();
        let mut rows = 0;
        let mut cols = None;
        for line in input.lines() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let row: Vec<f64> = line
                .split(',')
                .map(|s| s.trim().parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::InvalidArgument(format!("row {rows}: {e}")))?;
            match cols {
                None => cols = Some(row.len()),
                Some(c) if c != row.len() => {
                    return invalid(format!("row {rows} has {} values, expected {c}", row.len()))
                }
                _ => {}
            }
            values.extend(row);
            rows += 1;
        }
        Field::new(rows, cols.unwrap_or(0), values)
    }
}

/// Pixel is solid iff its value is at least `threshold`.
pub fn binarize(field: &Field, threshold: f64) -> Field {
    Field {
        rows: field.rows,
        cols: field.cols,
        values: field
            .values
            .iter()
            .map(|&v| if v >= threshold { 1.0 } else { 0.0 })
            .collect(),
    }
}

/// Dice similarity `2|a ∩ b| / (|a| + |b|)` of two binary fields; 1 when
/// both are empty.
pub fn dsc(a: &Field, b: &Field) -> Result<f64> {
    if !a.same_shape(b) {
        return invalid(format!(
            "shape mismatch: {}x{} vs {}x{}",
            a.rows, a.cols, b.rows, b.cols
        ));
    }
    if !a.is_binary() || !b.is_binary() {
        return invalid("dsc expects binary fields");
    }
    let mut inter = 0usize;
    let mut na = 0usize;
    let mut nb = 0usize;
    for (&x, &y) in a.values.iter().zip(&b.values) {
        let (x, y) = (x == 1.0, y == 1.0);
        na += x as usize;
        nb += y as usize;
        inter += (x && y) as usize;
    }
    if na + nb == 0 {
        return Ok(1.0);
    }
    Ok(2.0 * inter as f64 / (na + nb) as f64)
}

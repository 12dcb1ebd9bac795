use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::error::{PemError, Result};

/// Square matrix stored by columns, used for the column-stochastic transition
/// operators. Entries with the same (row, col) are merged on insertion.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseMatrix {
    dim: usize,
    cols: Vec<Vec<(usize, f64)>>,
}

impl SparseMatrix {
    pub fn zeros(dim: usize) -> Self {
        Self {
            dim,
            cols: vec![Vec::new(); dim],
        }
    }

    pub fn identity(dim: usize) -> Self {
        let mut m = Self::zeros(dim);
        for i in 0..dim {
            m.add(i, i, 1.0);
        }
        m
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn add(&mut self, row: usize, col: usize, value: f64) {
        debug_assert!(row < self.dim && col < self.dim);
        if value == 0.0 {
            return;
        }
        let c = &mut self.cols[col];
        match c.iter_mut().find(|(r, _)| *r == row) {
            Some((_, v)) => *v += value,
            None => {
                c.push((row, value));
                c.sort_by_key(|(r, _)| *r);
            }
        }
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.cols[col]
            .iter()
            .find(|(r, _)| *r == row)
            .map_or(0.0, |(_, v)| *v)
    }

    pub fn column(&self, col: usize) -> &[(usize, f64)] {
        &self.cols[col]
    }

    pub fn nnz(&self) -> usize {
        self.cols.iter().map(Vec::len).sum()
    }

    pub fn column_sums(&self) -> Vec<f64> {
        self.cols.iter().map(|c| c.iter().map(|(_, v)| v).sum()).collect()
    }

    /// Largest deviation of a column sum from one.
    pub fn stochastic_defect(&self) -> f64 {
        self.column_sums()
            .iter()
            .map(|s| (s - 1.0).abs())
            .fold(0.0, f64::max)
    }

    pub fn mul_vec_into(&self, x: &[f64], y: &mut [f64]) {
        debug_assert_eq!(x.len(), self.dim);
        y.iter_mut().for_each(|v| *v = 0.0);
        for (col, entries) in self.cols.iter().enumerate() {
            let xc = x[col];
            if xc == 0.0 {
                continue;
            }
            for &(row, v) in entries {
                y[row] += v * xc;
            }
        }
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.dim];
        self.mul_vec_into(x, &mut y);
        y
    }

    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let mut d = vec![vec![0.0; self.dim]; self.dim];
        for (col, entries) in self.cols.iter().enumerate() {
            for &(row, v) in entries {
                d[row][col] = v;
            }
        }
        d
    }

    /// Dense CSV, one matrix row per line.
    pub fn write_dense_csv(&self, path: &Path) -> Result<()> {
        write_dense_rows(path, &self.to_dense())
    }
}

pub(crate) fn write_dense_rows(path: &Path, rows: &[Vec<f64>]) -> Result<()> {
    let f = File::create(path).map_err(|e| PemError::io(path, e))?;
    let mut w = BufWriter::new(f);
    let io = |e| PemError::io(path, e);
    for row in rows {
        let line: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        writeln!(w, "{}", line.join(",")).map_err(io)?;
    }
    w.flush().map_err(io)
}

use serde::{Deserialize, Serialize};

/// Dense row-major `f64` matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols, "matrix data length");
        Self { rows, cols, data }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            assert_eq!(r.len(), cols, "ragged rows");
            data.extend_from_slice(r);
        }
        Self {
            rows: rows.len(),
            cols,
            data,
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        let c = self.cols;
        &mut self.data[r * c..(r + 1) * c]
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    /// Rows selected by index, in the given order.
    pub fn select_rows(&self, idx: &[usize]) -> Matrix {
        let mut data = Vec::with_capacity(idx.len() * self.cols);
        for &i in idx {
            data.extend_from_slice(self.row(i));
        }
        Matrix::from_vec(idx.len(), self.cols, data)
    }

    /// `self · wᵀ + bias` where `w` is `out × in`.
    pub(crate) fn affine(&self, w: &Matrix, bias: &[f64]) -> Matrix {
        debug_assert_eq!(self.cols, w.cols);
        let mut out = Matrix::zeros(self.rows, w.rows);
        for r in 0..self.rows {
            let x = self.row(r);
            for (u, b) in bias.iter().enumerate() {
                let wr = w.row(u);
                let mut acc = *b;
                for k in 0..x.len() {
                    acc += wr[k] * x[k];
                }
                out.data[r * w.rows + u] = acc;
            }
        }
        out
    }

    /// `self · w` where `w` is `self.cols × out`.
    pub(crate) fn matmul(&self, w: &Matrix) -> Matrix {
        debug_assert_eq!(self.cols, w.rows);
        let mut out = Matrix::zeros(self.rows, w.cols);
        for r in 0..self.rows {
            for k in 0..self.cols {
                let a = self.get(r, k);
                if a == 0.0 {
                    continue;
                }
                let wr = w.row(k);
                let o = out.row_mut(r);
                for c in 0..wr.len() {
                    o[c] += a * wr[c];
                }
            }
        }
        out
    }
}

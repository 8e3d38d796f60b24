//! Dense row-major matrix of `f64`.
//!
//! Vectors are carried as `1 × n` rows. Linear maps follow the row
//! convention `y = x · W` with `W` stored as `[in × out]`, except where a
//! caller explicitly uses [`Tensor2D::matmul_bt`].

use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tensor2D {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Tensor2D {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(shape_err!(
                "data length {} does not match {}x{}",
                data.len(),
                rows,
                cols
            ));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn filled(rows: usize, cols: usize, value: f64) -> Self {
        Self {
            rows,
            cols,
            data: vec![value; rows * cols],
        }
    }

    pub fn row_vector(values: Vec<f64>) -> Self {
        Self {
            rows: 1,
            cols: values.len(),
            data: values,
        }
    }

    pub fn scalar(value: f64) -> Self {
        Self::row_vector(vec![value])
    }

    /// Builds a matrix from equally sized rows.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for (i, r) in rows.iter().enumerate() {
            if r.len() != cols {
                return Err(shape_err!("row {i} has {} entries, expected {cols}", r.len()));
            }
            data.extend_from_slice(r);
        }
        Ok(Self {
            rows: rows.len(),
            cols,
            data,
        })
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    #[inline]
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, value: f64) {
        self.data[r * self.cols + c] = value;
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_tensor(&self, r: usize) -> Tensor2D {
        Tensor2D::row_vector(self.row(r).to_vec())
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn ensure_finite(&self, what: &str) -> Result<()> {
        if self.is_finite() {
            Ok(())
        } else {
            Err(Error::NonFinite(format!("{what} contains NaN or infinity")))
        }
    }

    pub fn same_shape(&self, other: &Tensor2D) -> bool {
        self.shape() == other.shape()
    }

    fn check_same(&self, other: &Tensor2D, op: &str) -> Result<()> {
        if self.same_shape(other) {
            Ok(())
        } else {
            Err(shape_err!("{op}: {:?} vs {:?}", self.shape(), other.shape()))
        }
    }

    /// `self · other`
    pub fn matmul(&self, other: &Tensor2D) -> Result<Tensor2D> {
        if self.cols != other.rows {
            return Err(shape_err!("matmul: {:?} x {:?}", self.shape(), other.shape()));
        }
        let mut out = Tensor2D::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            let a_row = self.row(i);
            let o_row = &mut out.data[i * other.cols..(i + 1) * other.cols];
            for (k, &a) in a_row.iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                let b_row = &other.data[k * other.cols..(k + 1) * other.cols];
                for (o, &b) in o_row.iter_mut().zip(b_row) {
                    *o += a * b;
                }
            }
        }
        Ok(out)
    }

    /// `self · otherᵀ`
    pub fn matmul_bt(&self, other: &Tensor2D) -> Result<Tensor2D> {
        if self.cols != other.cols {
            return Err(shape_err!("matmul_bt: {:?} x {:?}ᵀ", self.shape(), other.shape()));
        }
        let mut out = Tensor2D::zeros(self.rows, other.rows);
        for i in 0..self.rows {
            let a_row = self.row(i);
            for j in 0..other.rows {
                out.data[i * other.rows + j] = dot(a_row, other.row(j));
            }
        }
        Ok(out)
    }

    /// `selfᵀ · other`
    pub fn matmul_at(&self, other: &Tensor2D) -> Result<Tensor2D> {
        if self.rows != other.rows {
            return Err(shape_err!("matmul_at: {:?}ᵀ x {:?}", self.shape(), other.shape()));
        }
        let mut out = Tensor2D::zeros(self.cols, other.cols);
        for k in 0..self.rows {
            let a_row = self.row(k);
            let b_row = other.row(k);
            for (i, &a) in a_row.iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                let o_row = &mut out.data[i * other.cols..(i + 1) * other.cols];
                for (o, &b) in o_row.iter_mut().zip(b_row) {
                    *o += a * b;
                }
            }
        }
        Ok(out)
    }

    pub fn transpose(&self) -> Tensor2D {
        let mut out = Tensor2D::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                out.data[c * self.rows + r] = self.data[r * self.cols + c];
            }
        }
        out
    }

    pub fn add(&self, other: &Tensor2D) -> Result<Tensor2D> {
        self.check_same(other, "add")?;
        Ok(self.zip_map(other, |a, b| a + b))
    }

    pub fn sub(&self, other: &Tensor2D) -> Result<Tensor2D> {
        self.check_same(other, "sub")?;
        Ok(self.zip_map(other, |a, b| a - b))
    }

    pub fn hadamard(&self, other: &Tensor2D) -> Result<Tensor2D> {
        self.check_same(other, "hadamard")?;
        Ok(self.zip_map(other, |a, b| a * b))
    }

    /// Adds a `1 × cols` row to every row.
    pub fn add_row(&self, bias: &Tensor2D) -> Result<Tensor2D> {
        if bias.rows != 1 || bias.cols != self.cols {
            return Err(shape_err!("add_row: {:?} + {:?}", self.shape(), bias.shape()));
        }
        let mut out = self.clone();
        for r in 0..out.rows {
            for (o, &b) in out.row_mut(r).iter_mut().zip(&bias.data) {
                *o += b;
            }
        }
        Ok(out)
    }

    pub fn add_assign(&mut self, other: &Tensor2D) -> Result<()> {
        self.check_same(other, "add_assign")?;
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
        Ok(())
    }

    pub fn scale(&self, factor: f64) -> Tensor2D {
        self.map(|v| v * factor)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor2D {
        Tensor2D {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_map(&self, other: &Tensor2D, f: impl Fn(f64, f64) -> f64) -> Tensor2D {
        debug_assert!(self.same_shape(other));
        Tensor2D {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect(),
        }
    }

    /// Column sums as a `1 × cols` row.
    pub fn sum_rows(&self) -> Tensor2D {
        let mut out = vec![0.0; self.cols];
        for r in 0..self.rows {
            for (o, &v) in out.iter_mut().zip(self.row(r)) {
                *o += v;
            }
        }
        Tensor2D::row_vector(out)
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    /// Stacks tensors with equal column counts vertically.
    pub fn vstack(parts: &[&Tensor2D]) -> Result<Tensor2D> {
        let cols = parts.first().map_or(0, |t| t.cols);
        let mut data = Vec::new();
        let mut rows = 0;
        for p in parts {
            if p.cols != cols {
                return Err(shape_err!("vstack: {} vs {} columns", p.cols, cols));
            }
            rows += p.rows;
            data.extend_from_slice(&p.data);
        }
        Ok(Tensor2D { rows, cols, data })
    }

    /// Concatenates two tensors with equal row counts side by side.
    pub fn hstack(left: &Tensor2D, right: &Tensor2D) -> Result<Tensor2D> {
        if left.rows != right.rows {
            return Err(shape_err!("hstack: {:?} | {:?}", left.shape(), right.shape()));
        }
        let cols = left.cols + right.cols;
        let mut data = Vec::with_capacity(left.rows * cols);
        for r in 0..left.rows {
            data.extend_from_slice(left.row(r));
            data.extend_from_slice(right.row(r));
        }
        Ok(Tensor2D {
            rows: left.rows,
            cols,
            data,
        })
    }

    /// Copies columns `start..start + len`.
    pub fn col_slice(&self, start: usize, len: usize) -> Result<Tensor2D> {
        if start + len > self.cols {
            return Err(shape_err!(
                "col_slice {start}..{} of {} columns",
                start + len,
                self.cols
            ));
        }
        let mut data = Vec::with_capacity(self.rows * len);
        for r in 0..self.rows {
            data.extend_from_slice(&self.row(r)[start..start + len]);
        }
        Ok(Tensor2D {
            rows: self.rows,
            cols: len,
            data,
        })
    }

    /// Rows in reverse order.
    pub fn reverse_rows(&self) -> Tensor2D {
        let mut data = Vec::with_capacity(self.data.len());
        for r in (0..self.rows).rev() {
            data.extend_from_slice(self.row(r));
        }
        Tensor2D {
            rows: self.rows,
            cols: self.cols,
            data,
        }
    }

    pub fn max_abs_diff(&self, other: &Tensor2D) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_bad_length() {
        assert!(Tensor2D::new(2, 2, vec![1.0; 3]).is_err());
    }

    #[test]
    fn matmul_variants_agree() {
        let a = Tensor2D::new(2, 3, vec![1., 2., 3., 4., 5., 6.]).unwrap();
        let b = Tensor2D::new(3, 2, vec![7., 8., 9., 10., 11., 12.]).unwrap();
        let ab = a.matmul(&b).unwrap();
        assert_eq!(ab.data(), &[58., 64., 139., 154.]);
        assert_eq!(a.matmul_bt(&b.transpose()).unwrap(), ab);
        assert_eq!(a.transpose().matmul_at(&b).unwrap(), ab);
    }

    #[test]
    fn stacking() {
        let a = Tensor2D::row_vector(vec![1., 2.]);
        let b = Tensor2D::row_vector(vec![3., 4.]);
        let v = Tensor2D::vstack(&[&a, &b]).unwrap();
        assert_eq!(v.shape(), (2, 2));
        let h = Tensor2D::hstack(&v, &v).unwrap();
        assert_eq!(h.row(1), &[3., 4., 3., 4.]);
        assert_eq!(h.col_slice(1, 2).unwrap().row(0), &[2., 1.]);
        assert_eq!(v.reverse_rows().row(0), &[3., 4.]);
    }
}

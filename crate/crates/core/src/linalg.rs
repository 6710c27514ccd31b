//! Small dense matrices and axis-aligned boxes under the infinity norm.

use serde::{Deserialize, Serialize};

/// Row-major dense matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Option<Self> {
        (data.len() == rows * cols).then_some(Matrix { rows, cols, data })
    }

    pub fn from_rows(rows: &[&[f64]]) -> Self {
        let cols = rows.first().map_or(0, |r| r.len());
        assert!(rows.iter().all(|r| r.len() == cols), "ragged matrix rows");
        Matrix { rows: rows.len(), cols, data: rows.concat() }
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
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

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    /// `out[r] = Σ_c self[r,c]·v[c]`, summed left to right.
    pub fn mul_vec_into(&self, v: &[f64], out: &mut [f64]) {
        debug_assert_eq!(v.len(), self.cols);
        debug_assert_eq!(out.len(), self.rows);
        for (r, o) in out.iter_mut().enumerate() {
            let mut acc = 0.0;
            for (a, x) in self.row(r).iter().zip(v) {
                acc += a * x;
            }
            *o = acc;
        }
    }

    pub fn mul_vec(&self, v: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.rows];
        self.mul_vec_into(v, &mut out);
        out
    }

    /// Induced infinity norm (max absolute row sum).
    pub fn norm_inf(&self) -> f64 {
        (0..self.rows)
            .map(|r| self.row(r).iter().map(|a| a.abs()).sum::<f64>())
            .fold(0.0, f64::max)
    }

    /// `‖diag(left)·self·diag(right)⁻¹‖∞`.
    pub fn weighted_norm_inf(&self, left: &[f64], right: &[f64]) -> f64 {
        (0..self.rows)
            .map(|r| {
                self.row(r)
                    .iter()
                    .zip(right)
                    .map(|(a, w)| (left[r] * a / w).abs())
                    .sum::<f64>()
            })
            .fold(0.0, f64::max)
    }

    pub fn is_zero(&self) -> bool {
        self.data.iter().all(|&a| a == 0.0)
    }

    /// Stack `blocks` vertically; all must share a column count.
    pub fn vstack(blocks: &[&Matrix]) -> Option<Matrix> {
        let cols = blocks.first()?.cols;
        if blocks.iter().any(|b| b.cols != cols) {
            return None;
        }
        let rows = blocks.iter().map(|b| b.rows).sum();
        let data = blocks.iter().flat_map(|b| b.data.iter().copied()).collect();
        Some(Matrix { rows, cols, data })
    }

    /// Exact interval image `{M x : x ∈ b}` of a box.
    pub fn image_of_box(&self, b: &HyperBox) -> HyperBox {
        let mut lower = vec![0.0; self.rows];
        let mut upper = vec![0.0; self.rows];
        for r in 0..self.rows {
            for (c, &a) in self.row(r).iter().enumerate() {
                let (lo, hi) = (a * b.lower[c], a * b.upper[c]);
                lower[r] += lo.min(hi);
                upper[r] += lo.max(hi);
            }
        }
        HyperBox { lower, upper }
    }
}

/// Relative slack used for membership tests of floating-point grid points.
pub const CONTAINMENT_TOL: f64 = 1e-9;

fn slack(v: f64) -> f64 {
    CONTAINMENT_TOL * v.abs().max(1.0)
}

/// Closed axis-aligned box `[lower, upper]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HyperBox {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl HyperBox {
    /// Checked constructor: `lower[i] < upper[i]` on every axis.
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Option<Self> {
        let ok = lower.len() == upper.len()
            && lower.iter().zip(&upper).all(|(l, u)| l.is_finite() && u.is_finite() && l < u);
        ok.then_some(HyperBox { lower, upper })
    }

    /// Box whose extent may be degenerate on some axes (interval images).
    pub fn closed(lower: Vec<f64>, upper: Vec<f64>) -> Self {
        debug_assert_eq!(lower.len(), upper.len());
        HyperBox { lower, upper }
    }

    pub fn cube(dim: usize, lo: f64, hi: f64) -> Self {
        HyperBox { lower: vec![lo; dim], upper: vec![hi; dim] }
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    /// Smallest side length.
    pub fn span(&self) -> f64 {
        self.lower
            .iter()
            .zip(&self.upper)
            .map(|(l, u)| u - l)
            .fold(f64::INFINITY, f64::min)
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.dim()
            && x.iter()
                .zip(self.lower.iter().zip(&self.upper))
                .all(|(v, (l, u))| *v >= l - slack(*l) && *v <= u + slack(*u))
    }

    pub fn contains_box(&self, other: &HyperBox) -> bool {
        self.dim() == other.dim()
            && (0..self.dim()).all(|i| {
                other.lower[i] >= self.lower[i] - slack(self.lower[i])
                    && other.upper[i] <= self.upper[i] + slack(self.upper[i])
            })
    }

    /// Coordinates `range` of this box.
    pub fn project(&self, range: std::ops::Range<usize>) -> HyperBox {
        HyperBox { lower: self.lower[range.clone()].to_vec(), upper: self.upper[range].to_vec() }
    }

    pub fn inflate(&self, r: f64) -> HyperBox {
        HyperBox {
            lower: self.lower.iter().map(|l| l - r).collect(),
            upper: self.upper.iter().map(|u| u + r).collect(),
        }
    }

    pub fn sample<R: rand::Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        self.lower
            .iter()
            .zip(&self.upper)
            .map(|(&l, &u)| if u > l { rng.gen_range(l..=u) } else { l })
            .collect()
    }
}

/// Span of a union of boxes: the smallest side over all of them.
pub fn span_of(boxes: &[HyperBox]) -> f64 {
    boxes.iter().map(HyperBox::span).fold(f64::INFINITY, f64::min)
}

pub fn union_contains(boxes: &[HyperBox], x: &[f64]) -> bool {
    boxes.iter().any(|b| b.contains(x))
}

pub fn dist_inf(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

pub fn norm_inf(a: &[f64]) -> f64 {
    a.iter().map(|x| x.abs()).fold(0.0, f64::max)
}

//! Uniform quantization `[S]_η` of finite unions of boxes.

use serde::{Deserialize, Serialize};

use super::AbstractionError;
use crate::linalg::{span_of, HyperBox};

/// Closed inequality `‖·‖ ≤ η` evaluated with this relative slack.
pub const BALL_TOL: f64 = 1e-12;
const INDEX_TOL: f64 = 1e-9;

/// Integer index ranges of one box of the domain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoxGrid {
    pub k_lo: Vec<i64>,
    pub counts: Vec<usize>,
    strides: Vec<usize>,
    pub offset: usize,
    pub len: usize,
}

impl BoxGrid {
    fn build(k_lo: Vec<i64>, counts: Vec<usize>, offset: usize) -> Self {
        let mut strides = vec![1; counts.len()];
        for d in (0..counts.len().saturating_sub(1)).rev() {
            strides[d] = strides[d + 1] * counts[d + 1];
        }
        let len = counts.iter().product();
        BoxGrid { k_lo, counts, strides, offset, len }
    }

    pub fn k_hi(&self, axis: usize) -> i64 {
        self.k_lo[axis] + self.counts[axis] as i64 - 1
    }

    pub fn local_index(&self, k: &[i64]) -> Option<usize> {
        let mut idx = 0;
        for d in 0..k.len() {
            let rel = k[d] - self.k_lo[d];
            if rel < 0 || rel as usize >= self.counts[d] {
                return None;
            }
            idx += rel as usize * self.strides[d];
        }
        Some(idx)
    }

    pub fn strides(&self) -> &[usize] {
        &self.strides
    }
}

/// Inclusive range of multi-indices inside one box of a [`Grid`].
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct IndexBox {
    pub grid_box: usize,
    pub lo: Vec<i64>,
    pub hi: Vec<i64>,
}

impl IndexBox {
    pub fn cell_count(&self) -> usize {
        self.lo.iter().zip(&self.hi).map(|(l, h)| (h - l + 1).max(0) as usize).product()
    }
}

/// Grid points `{a ∈ S : a_i = k_i·η}` with a dense index.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    dim: usize,
    eta: f64,
    boxes: Vec<BoxGrid>,
    len: usize,
}

impl Grid {
    pub fn new(domain: &[HyperBox], eta: f64) -> Result<Self, AbstractionError> {
        if !(eta.is_finite() && eta > 0.0) {
            return Err(AbstractionError::InvalidQuantization(eta));
        }
        let dim = domain.first().map(HyperBox::dim).ok_or(AbstractionError::EmptyDomain)?;
        let span = span_of(domain);
        if eta > span * (1.0 + BALL_TOL) {
            return Err(AbstractionError::EtaTooLarge { eta, span });
        }
        let mut boxes: Vec<BoxGrid> = Vec::with_capacity(domain.len());
        let mut offset = 0;
        for b in domain {
            let mut k_lo = Vec::with_capacity(dim);
            let mut counts = Vec::with_capacity(dim);
            for d in 0..dim {
                let lo = (b.lower[d] / eta - INDEX_TOL).ceil() as i64;
                let hi = (b.upper[d] / eta + INDEX_TOL).floor() as i64;
                k_lo.push(lo);
                counts.push((hi - lo + 1).max(0) as usize);
            }
            let bg = BoxGrid::build(k_lo, counts, offset);
            for prev in &boxes {
                let overlaps = (0..dim).all(|d| bg.k_lo[d] <= prev.k_hi(d) && prev.k_lo[d] <= bg.k_hi(d));
                if overlaps {
                    return Err(AbstractionError::OverlappingBoxes);
                }
            }
            offset += bg.len;
            boxes.push(bg);
        }
        Ok(Grid { dim, eta, boxes, len: offset })
    }

    /// Rebuild from stored index ranges (used when reloading dumps).
    pub fn from_parts(dim: usize, eta: f64, ranges: Vec<(Vec<i64>, Vec<usize>)>) -> Self {
        let mut offset = 0;
        let boxes = ranges
            .into_iter()
            .map(|(k_lo, counts)| {
                let bg = BoxGrid::build(k_lo, counts, offset);
                offset += bg.len;
                bg
            })
            .collect();
        Grid { dim, eta, boxes, len: offset }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn eta(&self) -> f64 {
        self.eta
    }

    pub fn boxes(&self) -> &[BoxGrid] {
        &self.boxes
    }

    pub fn coord(&self, k: i64) -> f64 {
        k as f64 * self.eta
    }

    pub fn multi_index(&self, idx: usize) -> (usize, Vec<i64>) {
        let b = self.boxes.partition_point(|b| b.offset + b.len <= idx);
        let bg = &self.boxes[b];
        let mut rem = idx - bg.offset;
        let k = (0..self.dim)
            .map(|d| {
                let q = rem / bg.strides[d];
                rem %= bg.strides[d];
                bg.k_lo[d] + q as i64
            })
            .collect();
        (b, k)
    }

    pub fn index_in_box(&self, grid_box: usize, k: &[i64]) -> Option<usize> {
        let bg = &self.boxes[grid_box];
        bg.local_index(k).map(|l| l + bg.offset)
    }

    pub fn index_of(&self, k: &[i64]) -> Option<usize> {
        (0..self.boxes.len()).find_map(|b| self.index_in_box(b, k))
    }

    pub fn point_into(&self, idx: usize, out: &mut [f64]) {
        let b = self.boxes.partition_point(|b| b.offset + b.len <= idx);
        let bg = &self.boxes[b];
        let mut rem = idx - bg.offset;
        for d in 0..self.dim {
            let q = rem / bg.strides[d];
            rem %= bg.strides[d];
            out[d] = self.coord(bg.k_lo[d] + q as i64);
        }
    }

    pub fn point(&self, idx: usize) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        self.point_into(idx, &mut out);
        out
    }

    pub fn points(&self) -> impl Iterator<Item = Vec<f64>> + '_ {
        (0..self.len).map(|i| self.point(i))
    }

    /// Grid point closest to `x` in the infinity norm (ties: lowest index).
    pub fn nearest(&self, x: &[f64]) -> Option<(usize, f64)> {
        let mut best: Option<(usize, f64)> = None;
        for (b, bg) in self.boxes.iter().enumerate() {
            let k: Vec<i64> = (0..self.dim)
                .map(|d| ((x[d] / self.eta).round() as i64).clamp(bg.k_lo[d], bg.k_hi(d)))
                .collect();
            let dist = (0..self.dim).map(|d| (self.coord(k[d]) - x[d]).abs()).fold(0.0, f64::max);
            let idx = self.index_in_box(b, &k).expect("clamped into box");
            if best.is_none_or(|(_, bd)| dist < bd) {
                best = Some((idx, dist));
            }
        }
        best
    }

    /// Range of `k` with `|k·η − c| ≤ η` on one axis (possibly empty: lo > hi).
    pub fn axis_ball(&self, c: f64) -> (i64, i64) {
        let eta = self.eta;
        let r = eta * (1.0 + BALL_TOL);
        let within = |k: i64| (k as f64 * eta - c).abs() <= r;
        let mut lo = ((c - r) / eta).ceil() as i64;
        let mut hi = ((c + r) / eta).floor() as i64;
        while within(lo - 1) {
            lo -= 1;
        }
        while lo <= hi && !within(lo) {
            lo += 1;
        }
        while within(hi + 1) {
            hi += 1;
        }
        while hi >= lo && !within(hi) {
            hi -= 1;
        }
        (lo, hi)
    }

    /// Grid points within `η` of `c`, as one index box per domain box hit.
    pub fn ball(&self, c: &[f64]) -> Vec<IndexBox> {
        let axes: Vec<(i64, i64)> = c.iter().map(|&v| self.axis_ball(v)).collect();
        if axes.iter().any(|(l, h)| l > h) {
            return Vec::new();
        }
        self.clip(&axes)
    }

    /// Intersect per-axis index ranges with every box of the grid.
    pub fn clip(&self, axes: &[(i64, i64)]) -> Vec<IndexBox> {
        let mut out = Vec::new();
        for (b, bg) in self.boxes.iter().enumerate() {
            let mut lo = Vec::with_capacity(self.dim);
            let mut hi = Vec::with_capacity(self.dim);
            let mut empty = false;
            for d in 0..self.dim {
                let l = axes[d].0.max(bg.k_lo[d]);
                let h = axes[d].1.min(bg.k_hi(d));
                if l > h {
                    empty = true;
                    break;
                }
                lo.push(l);
                hi.push(h);
            }
            if !empty {
                out.push(IndexBox { grid_box: b, lo, hi });
            }
        }
        out
    }

    /// Dense indices of every cell of `ib`, ascending.
    pub fn cells(&self, ib: &IndexBox) -> Vec<usize> {
        let bg = &self.boxes[ib.grid_box];
        let mut out = Vec::with_capacity(ib.cell_count());
        let mut k = ib.lo.clone();
        if ib.cell_count() == 0 {
            return out;
        }
        loop {
            out.push(bg.offset + bg.local_index(&k).expect("inside box"));
            let mut d = self.dim;
            loop {
                if d == 0 {
                    return out;
                }
                d -= 1;
                if k[d] < ib.hi[d] {
                    k[d] += 1;
                    break;
                }
                k[d] = ib.lo[d];
            }
        }
    }
}

/// Internal-input points `Ŵ`: either `[W]_ϖ` or an explicit list.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputPoints {
    dim: usize,
    data: Vec<f64>,
}

impl InputPoints {
    /// The single empty input of a subsystem without internal inputs.
    pub fn none() -> Self {
        InputPoints { dim: 0, data: Vec::new() }
    }

    pub fn from_points(dim: usize, points: &[Vec<f64>]) -> Result<Self, AbstractionError> {
        if dim == 0 {
            return Ok(Self::none());
        }
        if points.is_empty() || points.iter().any(|p| p.len() != dim) {
            return Err(AbstractionError::BadInputPoints);
        }
        Ok(InputPoints { dim, data: points.concat() })
    }

    pub fn from_flat(dim: usize, data: Vec<f64>) -> Self {
        InputPoints { dim, data }
    }

    /// `[W]_ϖ`; `ϖ = 0` has no finite grid and needs an explicit list instead.
    pub fn quantize(domain: &[HyperBox], varpi: f64) -> Result<Self, AbstractionError> {
        if domain.is_empty() {
            return Ok(Self::none());
        }
        if varpi == 0.0 {
            return Err(AbstractionError::ZeroVarpiNeedsPoints);
        }
        let g = Grid::new(domain, varpi)?;
        let data = g.points().flatten().collect();
        Ok(InputPoints { dim: g.dim(), data })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.data.len().checked_div(self.dim).unwrap_or(1)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn get(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn iter(&self) -> impl Iterator<Item = &[f64]> {
        (0..self.len()).map(move |i| self.get(i))
    }

    pub fn flat(&self) -> &[f64] {
        &self.data
    }

    /// Index of the point closest to `w` (ties: lowest index).
    pub fn nearest(&self, w: &[f64]) -> usize {
        let mut best = (0, f64::INFINITY);
        for (i, p) in self.iter().enumerate() {
            let d = crate::linalg::dist_inf(p, w);
            if d < best.1 {
                best = (i, d);
            }
        }
        best.0
    }

    /// Index of a point equal to `w` within `tol`.
    pub fn find(&self, w: &[f64], tol: f64) -> Option<usize> {
        self.iter().position(|p| crate::linalg::dist_inf(p, w) <= tol)
    }
}

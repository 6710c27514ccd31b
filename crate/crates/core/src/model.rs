//! Switched subsystems with affine modes and their interconnection.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::kfn::KFn;
use crate::linalg::{union_contains, HyperBox, Matrix};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("subsystem {subsystem}: {what} outside its domain")]
    DomainViolation { subsystem: usize, what: &'static str },
    #[error("subsystem {subsystem}: mode {mode} out of range ({modes} modes)")]
    InvalidMode { subsystem: usize, mode: usize, modes: usize },
    #[error("invalid subsystem definition: {0}")]
    Invalid(String),
}

/// Mode index, zero based.
pub type Mode = usize;

/// `x' = A x + D w + B` for one mode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AffineMode {
    pub a: Matrix,
    pub b: Vec<f64>,
    pub d: Matrix,
}

/// Internal-input block `w_ij`, fed by subsystem `source`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputBlock {
    pub source: usize,
    pub dim: usize,
}

/// Internal output block `y_ij = C_ij x_i`, consumed by subsystem `target`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutputBlock {
    pub target: usize,
    pub c: Matrix,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SwitchedSubsystem {
    pub id: usize,
    dim: usize,
    input_dim: usize,
    modes: Vec<AffineMode>,
    pub state_domain: Vec<HyperBox>,
    pub internal_domain: Vec<HyperBox>,
    pub internal_blocks: Vec<InputBlock>,
    pub external_output: Matrix,
    pub output_blocks: Vec<OutputBlock>,
    pub dwell_time: usize,
    pub output_lipschitz: KFn,
}

/// Everything needed to assemble a [`SwitchedSubsystem`].
#[derive(Debug, Clone)]
pub struct SubsystemDef {
    pub id: usize,
    pub modes: Vec<AffineMode>,
    pub state_domain: Vec<HyperBox>,
    pub internal_domain: Vec<HyperBox>,
    pub internal_blocks: Vec<InputBlock>,
    pub external_output: Matrix,
    pub output_blocks: Vec<OutputBlock>,
    pub dwell_time: usize,
    /// Defaults to the induced norm of the stacked output map.
    pub output_lipschitz: Option<KFn>,
}

impl SwitchedSubsystem {
    pub fn new(def: SubsystemDef) -> Result<Self, ModelError> {
        let mismatch = |msg: String| Err(ModelError::DimensionMismatch(format!("subsystem {}: {msg}", def.id)));
        let first = def.modes.first().ok_or_else(|| ModelError::Invalid("no modes".into()))?;
        let n = first.a.rows();
        let q = first.d.cols();
        for (p, m) in def.modes.iter().enumerate() {
            if m.a.rows() != n || m.a.cols() != n {
                return mismatch(format!("A of mode {p} is not {n}x{n}"));
            }
            if m.b.len() != n {
                return mismatch(format!("B of mode {p} has length {}", m.b.len()));
            }
            if m.d.rows() != n || m.d.cols() != q {
                return mismatch(format!("D of mode {p} is not {n}x{q}"));
            }
        }
        if def.state_domain.is_empty() || def.state_domain.iter().any(|b| b.dim() != n) {
            return mismatch("state domain must be a non-empty list of n-dimensional boxes".into());
        }
        if q > 0 && (def.internal_domain.is_empty() || def.internal_domain.iter().any(|b| b.dim() != q)) {
            return mismatch("internal domain must be a non-empty list of q-dimensional boxes".into());
        }
        if q == 0 && !def.internal_domain.is_empty() {
            return mismatch("internal domain given for a subsystem without internal inputs".into());
        }
        let block_sum: usize = def.internal_blocks.iter().map(|b| b.dim).sum();
        if block_sum != q {
            return mismatch(format!("internal-input blocks sum to {block_sum}, expected {q}"));
        }
        if def.external_output.cols() != n || def.output_blocks.iter().any(|b| b.c.cols() != n) {
            return mismatch("output matrices must have n columns".into());
        }
        if def.dwell_time == 0 {
            return Err(ModelError::Invalid("dwell time must be at least 1".into()));
        }
        let mut sub = SwitchedSubsystem {
            id: def.id,
            dim: n,
            input_dim: q,
            modes: def.modes,
            state_domain: def.state_domain,
            internal_domain: def.internal_domain,
            internal_blocks: def.internal_blocks,
            external_output: def.external_output,
            output_blocks: def.output_blocks,
            dwell_time: def.dwell_time,
            output_lipschitz: KFn::identity(),
        };
        sub.output_lipschitz = match def.output_lipschitz {
            Some(l) => l,
            None => {
                let norm = sub.output_matrix().norm_inf();
                KFn::linear(if norm > 0.0 { norm } else { 1.0 }).expect("positive slope")
            }
        };
        Ok(sub)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn mode_count(&self) -> usize {
        self.modes.len()
    }

    pub fn mode(&self, p: Mode) -> &AffineMode {
        &self.modes[p]
    }

    pub fn modes(&self) -> &[AffineMode] {
        &self.modes
    }

    /// Stacked output map `h = [C_ii; C_ij; …]`.
    pub fn output_matrix(&self) -> Matrix {
        let mut blocks = vec![&self.external_output];
        blocks.extend(self.output_blocks.iter().map(|b| &b.c));
        Matrix::vstack(&blocks).expect("output blocks share the state dimension")
    }

    pub fn output(&self, x: &[f64]) -> Vec<f64> {
        self.output_matrix().mul_vec(x)
    }

    pub fn external_output(&self, x: &[f64]) -> Vec<f64> {
        self.external_output.mul_vec(x)
    }

    pub fn output_block_for(&self, target: usize) -> Option<&OutputBlock> {
        self.output_blocks.iter().find(|b| b.target == target)
    }

    /// `out = (A_p x + D_p w) + B_p`, with a fixed summation order shared by
    /// every caller so that all evaluations of the same image agree bit for bit.
    pub fn image_into(&self, p: Mode, x: &[f64], w: &[f64], out: &mut [f64]) {
        let m = &self.modes[p];
        for (k, o) in out.iter_mut().enumerate() {
            let mut ax = 0.0;
            for (a, xi) in m.a.row(k).iter().zip(x) {
                ax += a * xi;
            }
            let mut dw = 0.0;
            for (d, wi) in m.d.row(k).iter().zip(w) {
                dw += d * wi;
            }
            *o = (ax + dw) + m.b[k];
        }
    }

    pub fn image(&self, p: Mode, x: &[f64], w: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        self.image_into(p, x, w, &mut out);
        out
    }

    pub fn in_state_domain(&self, x: &[f64]) -> bool {
        union_contains(&self.state_domain, x)
    }

    pub fn in_internal_domain(&self, w: &[f64]) -> bool {
        if self.input_dim == 0 {
            w.is_empty()
        } else {
            union_contains(&self.internal_domain, w)
        }
    }

    /// The unique successor of `x` under mode `p` and internal input `w`.
    pub fn step(&self, p: Mode, x: &[f64], w: &[f64]) -> Result<Vec<f64>, ModelError> {
        if p >= self.modes.len() {
            return Err(ModelError::InvalidMode { subsystem: self.id, mode: p, modes: self.modes.len() });
        }
        if x.len() != self.dim || w.len() != self.input_dim {
            return Err(ModelError::DimensionMismatch(format!(
                "subsystem {}: step called with |x| = {}, |w| = {}",
                self.id,
                x.len(),
                w.len()
            )));
        }
        if !self.in_state_domain(x) {
            return Err(ModelError::DomainViolation { subsystem: self.id, what: "state" });
        }
        if !self.in_internal_domain(w) {
            return Err(ModelError::DomainViolation { subsystem: self.id, what: "internal input" });
        }
        Ok(self.image(p, x, w))
    }
}

/// Subsystems plus directed edges `(j, i)` meaning `w_ij = y_ji`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub subsystems: Vec<SwitchedSubsystem>,
    pub edges: Vec<(usize, usize)>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EdgeVerdict {
    pub from: usize,
    pub to: usize,
    /// Interval images of `C_ji` over each box of the source state domain.
    pub images: Vec<HyperBox>,
    pub contained: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NetworkReport {
    pub edges: Vec<EdgeVerdict>,
    /// Output blocks aimed at a subsystem without a matching edge that are not identically zero.
    pub stray_outputs: Vec<(usize, usize)>,
    pub pass: bool,
}

impl NetworkSpec {
    pub fn new(subsystems: Vec<SwitchedSubsystem>, edges: Vec<(usize, usize)>) -> Self {
        NetworkSpec { subsystems, edges }
    }

    pub fn len(&self) -> usize {
        self.subsystems.len()
    }

    pub fn is_empty(&self) -> bool {
        self.subsystems.is_empty()
    }

    /// Column offset of block `source` inside subsystem `i`'s internal input.
    fn block_range(&self, i: usize, source: usize) -> Option<std::ops::Range<usize>> {
        let mut offset = 0;
        for b in &self.subsystems[i].internal_blocks {
            if b.source == source {
                return Some(offset..offset + b.dim);
            }
            offset += b.dim;
        }
        None
    }

    pub fn validate(&self) -> Result<NetworkReport, ModelError> {
        let n = self.subsystems.len();
        let mut verdicts = Vec::with_capacity(self.edges.len());
        for &(j, i) in &self.edges {
            if i >= n || j >= n || i == j {
                return Err(ModelError::DimensionMismatch(format!("edge ({j} -> {i}) is not between distinct subsystems")));
            }
            let range = self.block_range(i, j).ok_or_else(|| {
                ModelError::DimensionMismatch(format!("subsystem {i} has no internal-input block fed by {j}"))
            })?;
            let out = self.subsystems[j].output_block_for(i).ok_or_else(|| {
                ModelError::DimensionMismatch(format!("subsystem {j} has no output block aimed at {i}"))
            })?;
            if out.c.rows() != range.len() {
                return Err(ModelError::DimensionMismatch(format!(
                    "edge ({j} -> {i}): output block has {} rows, input block has dimension {}",
                    out.c.rows(),
                    range.len()
                )));
            }
            let targets: Vec<HyperBox> =
                self.subsystems[i].internal_domain.iter().map(|b| b.project(range.clone())).collect();
            let images: Vec<HyperBox> =
                self.subsystems[j].state_domain.iter().map(|b| out.c.image_of_box(b)).collect();
            let contained = images.iter().all(|img| targets.iter().any(|t| t.contains_box(img)));
            verdicts.push(EdgeVerdict { from: j, to: i, images, contained });
        }
        for (i, sub) in self.subsystems.iter().enumerate() {
            for b in &sub.internal_blocks {
                if !self.edges.contains(&(b.source, i)) {
                    return Err(ModelError::DimensionMismatch(format!(
                        "subsystem {i} has an input block from {} without a matching edge",
                        b.source
                    )));
                }
            }
        }
        let stray: Vec<(usize, usize)> = self
            .subsystems
            .iter()
            .enumerate()
            .flat_map(|(j, sub)| {
                sub.output_blocks
                    .iter()
                    .filter(move |b| !self_edge(&self.edges, j, b.target) && !b.c.is_zero())
                    .map(move |b| (j, b.target))
            })
            .collect();
        let pass = verdicts.iter().all(|v| v.contained) && stray.is_empty();
        Ok(NetworkReport { edges: verdicts, stray_outputs: stray, pass })
    }

    /// Internal input of subsystem `i` induced by the network state `xs`.
    pub fn internal_input(&self, i: usize, xs: &[Vec<f64>]) -> Vec<f64> {
        let mut w = Vec::with_capacity(self.subsystems[i].input_dim());
        for b in &self.subsystems[i].internal_blocks {
            let src = &self.subsystems[b.source];
            let block = src.output_block_for(i).expect("validated network");
            w.extend(block.c.mul_vec(&xs[b.source]));
        }
        w
    }

    /// One synchronous step of the interconnected system.
    pub fn step(&self, modes: &[Mode], xs: &[Vec<f64>]) -> Result<Vec<Vec<f64>>, ModelError> {
        (0..self.subsystems.len())
            .map(|i| {
                let w = self.internal_input(i, xs);
                self.subsystems[i].step(modes[i], &xs[i], &w)
            })
            .collect()
    }

    /// Dense matrix of the autonomous part of the whole network (all `A_i`
    /// on the diagonal, `D_i C_ji` off it) for mode vector `modes`.
    pub fn composed_matrix(&self, modes: &[Mode]) -> Matrix {
        let offsets: Vec<usize> = self
            .subsystems
            .iter()
            .scan(0, |acc, s| {
                let o = *acc;
                *acc += s.dim();
                Some(o)
            })
            .collect();
        let total: usize = self.subsystems.iter().map(|s| s.dim()).sum();
        let mut data = vec![0.0; total * total];
        for (i, sub) in self.subsystems.iter().enumerate() {
            let m = sub.mode(modes[i]);
            for r in 0..sub.dim() {
                for c in 0..sub.dim() {
                    data[(offsets[i] + r) * total + offsets[i] + c] += m.a.get(r, c);
                }
            }
            let mut col = 0;
            for b in &sub.internal_blocks {
                let src = &self.subsystems[b.source];
                let cji = &src.output_block_for(i).expect("validated network").c;
                for r in 0..sub.dim() {
                    for k in 0..b.dim {
                        let d = m.d.get(r, col + k);
                        for c in 0..src.dim() {
                            data[(offsets[i] + r) * total + offsets[b.source] + c] += d * cji.get(k, c);
                        }
                    }
                }
                col += b.dim;
            }
        }
        Matrix::new(total, total, data).expect("square")
    }
}

fn self_edge(edges: &[(usize, usize)], from: usize, to: usize) -> bool {
    edges.contains(&(from, to))
}

use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::dwell::{next_labels, AugState};
use super::grid::{Grid, IndexBox, InputPoints};
use super::AbstractionError;
use crate::linalg::Matrix;
use crate::model::{Mode, SwitchedSubsystem};

/// What happens to images whose η-ball contains no grid point of the domain.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum SinkPolicy {
    /// Route to an absorbing unsafe pseudo-state.
    #[default]
    Absorbing,
    /// Treat any such image as a build error.
    Reject,
}

/// How the internal-input set of a [`FiniteTs`] was obtained.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum InputSource {
    /// `[W]_ϖ`.
    Quantized { varpi: f64 },
    /// Explicit list, e.g. the image of a neighbour's output grid.
    Points,
    /// No internal inputs.
    Empty,
}

/// Successor `x̂'` cells for one `(x̂, p, ŵ)`; `None` means the sink.
pub type Post = Option<Vec<IndexBox>>;

/// Sparse successor table keyed by `(x̂, p, ŵ)`. An empty row is the sink.
#[derive(Debug, Clone, PartialEq)]
pub struct CsrTable {
    pub row_ptr: Vec<u64>,
    pub cols: Vec<u32>,
}

#[derive(Debug, Clone)]
enum Relation {
    Lazy(Arc<SwitchedSubsystem>),
    Table(CsrTable),
}

/// Options for [`build_finite_ts`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BuildOptions {
    pub materialize: bool,
    pub sink_policy: SinkPolicy,
}

impl Default for BuildOptions {
    fn default() -> Self {
        BuildOptions { materialize: false, sink_policy: SinkPolicy::Absorbing }
    }
}

/// Finite abstraction over `(x̂, p, l)`.
#[derive(Debug, Clone)]
pub struct FiniteTs {
    pub state_grid: Grid,
    pub inputs: InputPoints,
    pub input_source: InputSource,
    pub modes: usize,
    pub dwell_time: usize,
    pub sink_policy: SinkPolicy,
    pub external_output: Matrix,
    relation: Relation,
}

/// Grid cells within `η` of `f_p(x̂, ŵ)`, or `None` when that set is empty.
pub fn abstract_post(sub: &SwitchedSubsystem, grid: &Grid, p: Mode, x_idx: usize, w: &[f64]) -> Post {
    let mut x = vec![0.0; grid.dim()];
    grid.point_into(x_idx, &mut x);
    let c = sub.image(p, &x, w);
    let cells = grid.ball(&c);
    (!cells.is_empty()).then_some(cells)
}

/// Successor states of `(x̂, p, l)` under `u` and `ŵ` (a point, not an index).
///
/// Returns `None` for the sink; an empty vector when `u ≠ p`.
pub fn abstract_successors(sub: &SwitchedSubsystem, grid: &Grid, state: AugState, u: Mode, w: &[f64]) -> Option<Vec<AugState>> {
    if u != state.p {
        return Some(Vec::new());
    }
    let cells = abstract_post(sub, grid, state.p, state.x, w)?;
    Some(cross_labels(grid, &cells, state, sub.dwell_time, sub.mode_count()))
}

fn cross_labels(grid: &Grid, cells: &[IndexBox], state: AugState, dwell: usize, modes: usize) -> Vec<AugState> {
    let mut xs: Vec<usize> = cells.iter().flat_map(|b| grid.cells(b)).collect();
    xs.sort_unstable();
    let labels: Vec<(Mode, usize)> = next_labels(state.p, state.l, dwell, modes).collect();
    xs.iter().flat_map(|&x| labels.iter().map(move |&(p, l)| AugState { x, p, l })).collect()
}

/// Builds the finite abstraction; `inputs` replaces `[W]_ϖ` when it is a point list.
pub fn build_finite_ts(
    sub: &SwitchedSubsystem,
    eta: f64,
    inputs: InputPoints,
    input_source: InputSource,
    options: BuildOptions,
) -> Result<FiniteTs, AbstractionError> {
    let state_grid = Grid::new(&sub.state_domain, eta)?;
    if inputs.dim() != sub.input_dim() {
        return Err(AbstractionError::BadInputPoints);
    }
    let mut ts = FiniteTs {
        state_grid,
        inputs,
        input_source,
        modes: sub.mode_count(),
        dwell_time: sub.dwell_time,
        sink_policy: options.sink_policy,
        external_output: sub.external_output.clone(),
        relation: Relation::Lazy(Arc::new(sub.clone())),
    };
    if options.materialize {
        ts.materialize()?;
    }
    Ok(ts)
}

/// Convenience wrapper quantizing the internal domain at `ϖ`.
pub fn build_quantized(sub: &SwitchedSubsystem, eta: f64, varpi: f64, options: BuildOptions) -> Result<FiniteTs, AbstractionError> {
    let (inputs, source) = if sub.input_dim() == 0 {
        (InputPoints::none(), InputSource::Empty)
    } else {
        (InputPoints::quantize(&sub.internal_domain, varpi)?, InputSource::Quantized { varpi })
    };
    build_finite_ts(sub, eta, inputs, source, options)
}

impl FiniteTs {
    pub(crate) fn from_table(
        state_grid: Grid,
        inputs: InputPoints,
        input_source: InputSource,
        modes: usize,
        dwell_time: usize,
        sink_policy: SinkPolicy,
        external_output: Matrix,
        table: CsrTable,
    ) -> Self {
        FiniteTs {
            state_grid,
            inputs,
            input_source,
            modes,
            dwell_time,
            sink_policy,
            external_output,
            relation: Relation::Table(table),
        }
    }

    pub fn eta(&self) -> f64 {
        self.state_grid.eta()
    }

    pub fn key_count(&self) -> usize {
        self.state_grid.len() * self.modes * self.inputs.len()
    }

    pub fn state_count(&self) -> usize {
        self.state_grid.len() * self.modes * self.dwell_time
    }

    pub fn state_index(&self, s: AugState) -> usize {
        (s.x * self.modes + s.p) * self.dwell_time + s.l
    }

    pub fn state_at(&self, idx: usize) -> AugState {
        let l = idx % self.dwell_time;
        let rest = idx / self.dwell_time;
        AugState { x: rest / self.modes, p: rest % self.modes, l }
    }

    fn key(&self, x: usize, p: Mode, w: usize) -> usize {
        (x * self.modes + p) * self.inputs.len() + w
    }

    pub fn is_materialized(&self) -> bool {
        matches!(self.relation, Relation::Table(_))
    }

    pub fn table(&self) -> Option<&CsrTable> {
        match &self.relation {
            Relation::Table(t) => Some(t),
            Relation::Lazy(_) => None,
        }
    }

    pub fn subsystem(&self) -> Option<&SwitchedSubsystem> {
        match &self.relation {
            Relation::Lazy(s) => Some(s),
            Relation::Table(_) => None,
        }
    }

    /// Successor cells of `(x̂, p, ŵ_idx)`.
    pub fn post(&self, x: usize, p: Mode, w: usize) -> Post {
        match &self.relation {
            Relation::Lazy(sub) => abstract_post(sub, &self.state_grid, p, x, self.inputs.get(w)),
            Relation::Table(t) => {
                let k = self.key(x, p, w);
                let row = &t.cols[t.row_ptr[k] as usize..t.row_ptr[k + 1] as usize];
                if row.is_empty() {
                    return None;
                }
                Some(
                    row.iter()
                        .map(|&c| {
                            let (b, k) = self.state_grid.multi_index(c as usize);
                            IndexBox { grid_box: b, lo: k.clone(), hi: k }
                        })
                        .collect(),
                )
            }
        }
    }

    /// Sorted successor grid indices of `(x̂, p, ŵ_idx)`; `None` is the sink.
    pub fn post_indices(&self, x: usize, p: Mode, w: usize) -> Option<Vec<usize>> {
        if let Relation::Table(t) = &self.relation {
            let k = self.key(x, p, w);
            let row = &t.cols[t.row_ptr[k] as usize..t.row_ptr[k + 1] as usize];
            return (!row.is_empty()).then(|| row.iter().map(|&c| c as usize).collect());
        }
        let cells = self.post(x, p, w)?;
        let mut v: Vec<usize> = cells.iter().flat_map(|b| self.state_grid.cells(b)).collect();
        v.sort_unstable();
        Some(v)
    }

    /// Successor states of `state` under `u` and internal input index `w`.
    pub fn successors(&self, state: AugState, u: Mode, w: usize) -> Option<Vec<AugState>> {
        if u != state.p {
            return Some(Vec::new());
        }
        let xs = self.post_indices(state.x, state.p, w)?;
        let labels: Vec<(Mode, usize)> = next_labels(state.p, state.l, self.dwell_time, self.modes).collect();
        Some(xs.iter().flat_map(|&x| labels.iter().map(move |&(p, l)| AugState { x, p, l })).collect())
    }

    /// Replace the lazy evaluator by a full CSR table.
    pub fn materialize(&mut self) -> Result<(), AbstractionError> {
        let Relation::Lazy(sub) = &self.relation else {
            return Ok(());
        };
        if self.state_grid.len() > u32::MAX as usize {
            return Err(AbstractionError::TooLarge("grid exceeds u32 indexing".into()));
        }
        let sub = Arc::clone(sub);
        let per_x = self.modes * self.inputs.len();
        // Disjoint state ranges are filled independently and concatenated in order.
        let rows: Vec<Result<(Vec<u32>, Vec<u32>), AbstractionError>> = (0..self.state_grid.len())
            .into_par_iter()
            .with_min_len(256)
            .map(|x| {
                let mut lens = Vec::with_capacity(per_x);
                let mut cols = Vec::new();
                for p in 0..self.modes {
                    for w in 0..self.inputs.len() {
                        match abstract_post(&sub, &self.state_grid, p, x, self.inputs.get(w)) {
                            Some(cells) => {
                                let before = cols.len();
                                for b in &cells {
                                    cols.extend(self.state_grid.cells(b).into_iter().map(|c| c as u32));
                                }
                                cols[before..].sort_unstable();
                                lens.push((cols.len() - before) as u32);
                            }
                            None if self.sink_policy == SinkPolicy::Reject => {
                                return Err(AbstractionError::Blocking { state: x, mode: p, input: w });
                            }
                            None => lens.push(0),
                        }
                    }
                }
                Ok((lens, cols))
            })
            .collect();
        let mut row_ptr = Vec::with_capacity(self.key_count() + 1);
        row_ptr.push(0u64);
        let mut cols = Vec::new();
        for r in rows {
            let (lens, c) = r?;
            for len in lens {
                let last = *row_ptr.last().unwrap();
                row_ptr.push(last + len as u64);
            }
            cols.extend(c);
        }
        self.relation = Relation::Table(CsrTable { row_ptr, cols });
        Ok(())
    }

    /// Abstract states from which some `(p, ŵ)` leads to the sink, as `(x̂, p, ŵ)` keys.
    pub fn sink_keys(&self) -> Vec<(usize, Mode, usize)> {
        let mut out = Vec::new();
        for x in 0..self.state_grid.len() {
            for p in 0..self.modes {
                for w in 0..self.inputs.len() {
                    if self.post(x, p, w).is_none() {
                        out.push((x, p, w));
                    }
                }
            }
        }
        out
    }
}

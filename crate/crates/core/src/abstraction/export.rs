//! Persistence of finite abstractions.
//!
//! Binary layout (all little endian):
//!
//! ```text
//! magic        8 bytes  "CSYMFTS\0"
//! version      u32      1
//! eta          f64
//! varpi        f64      NaN for point lists, -1 when there are no inputs
//! dwell_time   u32
//! modes        u32
//! state_dim    u32
//! input_dim    u32
//! sink_policy  u8       0 = absorbing, 1 = reject
//! out_rows     u32      then out_rows·state_dim f64 (external output matrix)
//! grid_boxes   u32      then per box: state_dim × i64 k_lo, state_dim × u64 counts
//! inputs       u64      then inputs·input_dim f64
//! row_ptr_len  u64      then row_ptr_len × u64
//! cols_len     u64      then cols_len × u32
//! ```
//!
//! Rows are keyed by `(x̂·modes + p)·|Ŵ| + ŵ`; an empty row is the sink.

use std::fmt::Write as _;
use std::io::{Read, Write};

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};

use super::dwell::AugState;
use super::finite::{CsrTable, FiniteTs, InputSource, SinkPolicy};
use super::grid::{Grid, InputPoints};
use super::AbstractionError;
use crate::linalg::Matrix;

pub const FTS_MAGIC: &[u8; 8] = b"CSYMFTS\0";
pub const FTS_VERSION: u32 = 1;
/// Largest abstraction (in `(x̂, p, l)` states) exported as a DOT graph.
pub const DOT_STATE_LIMIT: usize = 5000;

pub fn write_dump<W: Write>(ts: &FiniteTs, out: &mut W) -> Result<(), AbstractionError> {
    let table = ts.table().ok_or(AbstractionError::NotMaterialized)?;
    let g = &ts.state_grid;
    out.write_all(FTS_MAGIC)?;
    out.write_u32::<LittleEndian>(FTS_VERSION)?;
    out.write_f64::<LittleEndian>(g.eta())?;
    let varpi = match ts.input_source {
        InputSource::Quantized { varpi } => varpi,
        InputSource::Points => f64::NAN,
        InputSource::Empty => -1.0,
    };
    out.write_f64::<LittleEndian>(varpi)?;
    out.write_u32::<LittleEndian>(ts.dwell_time as u32)?;
    out.write_u32::<LittleEndian>(ts.modes as u32)?;
    out.write_u32::<LittleEndian>(g.dim() as u32)?;
    out.write_u32::<LittleEndian>(ts.inputs.dim() as u32)?;
    out.write_u8(match ts.sink_policy {
        SinkPolicy::Absorbing => 0,
        SinkPolicy::Reject => 1,
    })?;
    out.write_u32::<LittleEndian>(ts.external_output.rows() as u32)?;
    for &v in ts.external_output.data() {
        out.write_f64::<LittleEndian>(v)?;
    }
    out.write_u32::<LittleEndian>(g.boxes().len() as u32)?;
    for b in g.boxes() {
        for &k in &b.k_lo {
            out.write_i64::<LittleEndian>(k)?;
        }
        for &c in &b.counts {
            out.write_u64::<LittleEndian>(c as u64)?;
        }
    }
    let n_inputs = if ts.inputs.dim() == 0 { 0 } else { ts.inputs.len() };
    out.write_u64::<LittleEndian>(n_inputs as u64)?;
    for &v in ts.inputs.flat() {
        out.write_f64::<LittleEndian>(v)?;
    }
    out.write_u64::<LittleEndian>(table.row_ptr.len() as u64)?;
    for &r in &table.row_ptr {
        out.write_u64::<LittleEndian>(r)?;
    }
    out.write_u64::<LittleEndian>(table.cols.len() as u64)?;
    for &c in &table.cols {
        out.write_u32::<LittleEndian>(c)?;
    }
    Ok(())
}

pub fn read_dump<R: Read>(input: &mut R) -> Result<FiniteTs, AbstractionError> {
    let bad = |m: &str| AbstractionError::Format(m.to_string());
    let mut magic = [0u8; 8];
    input.read_exact(&mut magic)?;
    if &magic != FTS_MAGIC {
        return Err(bad("bad magic"));
    }
    if input.read_u32::<LittleEndian>()? != FTS_VERSION {
        return Err(bad("unsupported version"));
    }
    let eta = input.read_f64::<LittleEndian>()?;
    let varpi = input.read_f64::<LittleEndian>()?;
    let dwell_time = input.read_u32::<LittleEndian>()? as usize;
    let modes = input.read_u32::<LittleEndian>()? as usize;
    let dim = input.read_u32::<LittleEndian>()? as usize;
    let input_dim = input.read_u32::<LittleEndian>()? as usize;
    let sink_policy = match input.read_u8()? {
        0 => SinkPolicy::Absorbing,
        1 => SinkPolicy::Reject,
        _ => return Err(bad("bad sink policy")),
    };
    if dwell_time == 0 || modes == 0 {
        return Err(bad("zero dwell time or mode count"));
    }
    let out_rows = input.read_u32::<LittleEndian>()? as usize;
    let out_data = read_f64s(input, out_rows * dim)?;
    let external_output = Matrix::new(out_rows, dim, out_data).ok_or_else(|| bad("output matrix"))?;
    let n_boxes = input.read_u32::<LittleEndian>()? as usize;
    let mut ranges = Vec::with_capacity(n_boxes);
    for _ in 0..n_boxes {
        let k_lo = (0..dim).map(|_| input.read_i64::<LittleEndian>()).collect::<Result<Vec<_>, _>>()?;
        let counts = (0..dim)
            .map(|_| input.read_u64::<LittleEndian>().map(|c| c as usize))
            .collect::<Result<Vec<_>, _>>()?;
        ranges.push((k_lo, counts));
    }
    let grid = Grid::from_parts(dim, eta, ranges);
    let n_inputs = input.read_u64::<LittleEndian>()? as usize;
    let inputs = if input_dim == 0 {
        InputPoints::none()
    } else {
        InputPoints::from_flat(input_dim, read_f64s(input, n_inputs * input_dim)?)
    };
    let input_source = if input_dim == 0 {
        InputSource::Empty
    } else if varpi.is_nan() {
        InputSource::Points
    } else {
        InputSource::Quantized { varpi }
    };
    let n_ptr = input.read_u64::<LittleEndian>()? as usize;
    if n_ptr != grid.len() * modes * inputs.len() + 1 {
        return Err(bad("row pointer length does not match the key count"));
    }
    let row_ptr = (0..n_ptr).map(|_| input.read_u64::<LittleEndian>()).collect::<Result<Vec<_>, _>>()?;
    let n_cols = input.read_u64::<LittleEndian>()? as usize;
    if row_ptr.last().copied() != Some(n_cols as u64) || row_ptr.windows(2).any(|w| w[0] > w[1]) {
        return Err(bad("inconsistent row pointers"));
    }
    let cols = (0..n_cols).map(|_| input.read_u32::<LittleEndian>()).collect::<Result<Vec<_>, _>>()?;
    if cols.iter().any(|&c| c as usize >= grid.len()) {
        return Err(bad("column index out of range"));
    }
    Ok(FiniteTs::from_table(
        grid,
        inputs,
        input_source,
        modes,
        dwell_time,
        sink_policy,
        external_output,
        CsrTable { row_ptr, cols },
    ))
}

fn read_f64s<R: Read>(input: &mut R, n: usize) -> Result<Vec<f64>, AbstractionError> {
    (0..n).map(|_| input.read_f64::<LittleEndian>().map_err(Into::into)).collect()
}

/// DOT rendering of `(x̂, p, l)` states and their successors, one edge per input.
pub fn to_dot(ts: &FiniteTs) -> Result<String, AbstractionError> {
    if ts.state_count() > DOT_STATE_LIMIT {
        return Err(AbstractionError::TooLarge(format!(
            "{} states exceed the DOT export limit of {DOT_STATE_LIMIT}",
            ts.state_count()
        )));
    }
    let name = |s: AugState| format!("x{}_p{}_l{}", s.x, s.p, s.l);
    let mut out = String::from("digraph abstraction {\n  sink [shape=doublecircle, label=\"sink\"];\n");
    for idx in 0..ts.state_count() {
        let s = ts.state_at(idx);
        let pt = ts.state_grid.point(s.x);
        let _ = writeln!(out, "  {} [label=\"{:?} p={} l={}\"];", name(s), pt, s.p, s.l);
    }
    for idx in 0..ts.state_count() {
        let s = ts.state_at(idx);
        for w in 0..ts.inputs.len() {
            match ts.successors(s, s.p, w) {
                None => {
                    let _ = writeln!(out, "  {} -> sink [label=\"w{w}\"];", name(s));
                }
                Some(succ) => {
                    for t in succ {
                        let _ = writeln!(out, "  {} -> {} [label=\"w{w}\"];", name(s), name(t));
                    }
                }
            }
        }
    }
    out.push_str("}\n");
    Ok(out)
}

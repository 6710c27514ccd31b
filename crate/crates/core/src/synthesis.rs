//! Safety games on finite abstractions, refinement to concrete states and
//! closed-loop simulation.
//!
//! The controller acts by committing the next mode: at `(x̂, p, l)` it picks
//! an admissible `p'`, the plant moves with `p` and the next state carries
//! `p'` with its updated dwell counter.

use std::io::{Read, Write};

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::abstraction::{label_after, next_labels, FiniteTs, Grid, InputUnion};
use crate::certification::AltSimCert;
use crate::linalg::{dist_inf, HyperBox};
use crate::model::{Mode, ModelError, NetworkSpec};

#[derive(Debug, Error)]
pub enum SynthesisError {
    #[error("the winning set is empty")]
    EmptyWinningSet,
    #[error("invalid safety specification: {0}")]
    BadSpec(String),
    #[error("at most 64 modes are supported, got {0}")]
    TooManyModes(usize),
    #[error("no winning grid point near {state:?}")]
    NoWinningStateNearby { state: Vec<f64> },
    #[error("controller of subsystem {subsystem} failed at step {step}: {source}")]
    ControllerFailure {
        step: usize,
        subsystem: usize,
        #[source]
        source: Box<SynthesisError>,
    },
    #[error("malformed controller dump: {0}")]
    Format(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Safe set on the external output of one subsystem.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SafetySpec {
    pub safe: Vec<HyperBox>,
    pub horizon: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct SolveOptions {
    /// Quantify only over the smallest and largest assumed internal inputs.
    /// Exact for dynamics monotone in the internal input.
    pub extremes_only: bool,
}

/// Maximal controlled invariant set with the modes that witness it.
#[derive(Debug, Clone, PartialEq)]
pub struct AbstractController {
    pub grid_len: usize,
    pub modes: usize,
    pub dwell_time: usize,
    /// Bit `p'` set when committing to `p'` keeps the play winning.
    allowed: Vec<u64>,
    /// Winning-set sizes after each sweep, starting with the safe set.
    pub history: Vec<usize>,
}

impl AbstractController {
    pub fn state_count(&self) -> usize {
        self.allowed.len()
    }

    pub fn state_index(&self, x: usize, p: Mode, l: usize) -> usize {
        (x * self.modes + p) * self.dwell_time + l
    }

    pub fn is_winning(&self, x: usize, p: Mode, l: usize) -> bool {
        self.allowed[self.state_index(x, p, l)] != 0
    }

    pub fn allowed_modes(&self, x: usize, p: Mode, l: usize) -> impl Iterator<Item = Mode> {
        let mask = self.allowed[self.state_index(x, p, l)];
        (0..self.modes).filter(move |&q| mask >> q & 1 == 1)
    }

    /// Lowest allowed next mode, the runtime tie-break.
    pub fn first_allowed(&self, x: usize, p: Mode, l: usize) -> Option<Mode> {
        let mask = self.allowed[self.state_index(x, p, l)];
        (mask != 0).then(|| mask.trailing_zeros() as usize)
    }

    pub fn winning_count(&self) -> usize {
        self.allowed.iter().filter(|&&m| m != 0).count()
    }

    /// Winning flag per `(x̂, p, l)` index.
    pub fn winning(&self) -> Vec<bool> {
        self.allowed.iter().map(|&m| m != 0).collect()
    }
}

/// Successor boxes per `(x̂, p)`, flattened; an empty range is the sink.
struct PostCache {
    dim: usize,
    offsets: Vec<u32>,
    grid_box: Vec<u32>,
    lo: Vec<i64>,
    hi: Vec<i64>,
}

impl PostCache {
    fn build(ts: &FiniteTs, union: &InputUnion) -> Self {
        let dim = ts.state_grid.dim();
        let keys = ts.state_grid.len() * ts.modes;
        let chunks: Vec<(Vec<u32>, Vec<u32>, Vec<i64>, Vec<i64>)> = (0..keys.div_ceil(4096))
            .into_par_iter()
            .map(|c| {
                let mut counts = Vec::new();
                let (mut gb, mut lo, mut hi) = (Vec::new(), Vec::new(), Vec::new());
                for key in c * 4096..((c + 1) * 4096).min(keys) {
                    let boxes = union.post(key / ts.modes, key % ts.modes).unwrap_or_default();
                    counts.push(boxes.len() as u32);
                    for b in boxes {
                        gb.push(b.grid_box as u32);
                        lo.extend(b.lo);
                        hi.extend(b.hi);
                    }
                }
                (counts, gb, lo, hi)
            })
            .collect();
        let mut cache = PostCache { dim, offsets: vec![0], grid_box: Vec::new(), lo: Vec::new(), hi: Vec::new() };
        for (counts, gb, lo, hi) in chunks {
            for c in counts {
                let last = *cache.offsets.last().expect("starts with zero");
                cache.offsets.push(last + c);
            }
            cache.grid_box.extend(gb);
            cache.lo.extend(lo);
            cache.hi.extend(hi);
        }
        cache
    }

    fn boxes(&self, key: usize) -> std::ops::Range<usize> {
        self.offsets[key] as usize..self.offsets[key + 1] as usize
    }

    fn lo(&self, b: usize) -> &[i64] {
        &self.lo[b * self.dim..(b + 1) * self.dim]
    }

    fn hi(&self, b: usize) -> &[i64] {
        &self.hi[b * self.dim..(b + 1) * self.dim]
    }
}

/// n-dimensional prefix sums of the losing indicator over one grid box.
struct Prefix {
    k_lo: Vec<i64>,
    strides: Vec<usize>,
    data: Vec<u32>,
}

impl Prefix {
    fn build(grid: &Grid, b: usize, losing: impl Fn(usize) -> bool) -> Self {
        let bg = &grid.boxes()[b];
        let dim = grid.dim();
        let ext: Vec<usize> = bg.counts.iter().map(|c| c + 1).collect();
        let mut strides = vec![1; dim];
        for d in (0..dim.saturating_sub(1)).rev() {
            strides[d] = strides[d + 1] * ext[d + 1];
        }
        let mut data = vec![0u32; ext.iter().product()];
        let box_strides = bg.strides();
        for r in 0..bg.len {
            if losing(bg.offset + r) {
                let mut rem = r;
                let mut at = 0;
                for d in 0..dim {
                    at += (rem / box_strides[d] + 1) * strides[d];
                    rem %= box_strides[d];
                }
                data[at] = 1;
            }
        }
        for d in 0..dim {
            for i in 0..data.len() {
                if !(i / strides[d]).is_multiple_of(ext[d]) {
                    data[i] += data[i - strides[d]];
                }
            }
        }
        Prefix { k_lo: bg.k_lo.clone(), strides, data }
    }

    /// Number of losing cells in the inclusive index box `[lo, hi]`.
    fn count(&self, lo: &[i64], hi: &[i64]) -> i64 {
        let dim = lo.len();
        let mut total = 0i64;
        for mask in 0..1usize << dim {
            let mut at = 0;
            let mut negative = false;
            for d in 0..dim {
                let c = if mask >> d & 1 == 1 {
                    (hi[d] - self.k_lo[d] + 1) as usize
                } else {
                    negative = !negative;
                    (lo[d] - self.k_lo[d]) as usize
                };
                at += c * self.strides[d];
            }
            let v = self.data[at] as i64;
            total += if negative { -v } else { v };
        }
        total
    }
}

/// Indices of internal-input points inside the assumption (all when `None`).
pub fn assumed_inputs(ts: &FiniteTs, assumption: Option<&[HyperBox]>) -> Vec<usize> {
    if ts.inputs.dim() == 0 {
        return vec![0];
    }
    (0..ts.inputs.len())
        .filter(|&w| assumption.is_none_or(|a| a.iter().any(|b| b.contains(ts.inputs.get(w)))))
        .collect()
}

/// Greatest fixed point of `W ← {s ∈ W ∩ Safe : ∃p' ∀ŵ ∀x̂' ∈ post(s, ŵ). (x̂', p', l') ∈ W}`
/// with the sink losing. Sweeps are Jacobi iterations, so the result does
/// not depend on scheduling.
pub fn solve_safety(
    ts: &FiniteTs,
    spec: &SafetySpec,
    assumption: Option<&[HyperBox]>,
    options: SolveOptions,
) -> Result<AbstractController, SynthesisError> {
    if ts.modes > 64 {
        return Err(SynthesisError::TooManyModes(ts.modes));
    }
    if spec.safe.iter().any(|b| b.dim() != ts.external_output.rows()) {
        return Err(SynthesisError::BadSpec("safe box dimension differs from the external output".into()));
    }
    let selected = assumed_inputs(ts, assumption);
    if selected.is_empty() {
        return Err(SynthesisError::BadSpec("no internal-input point satisfies the assumption".into()));
    }
    let union = if options.extremes_only {
        InputUnion::extremes_only(ts, &selected)
    } else {
        InputUnion::new(ts, selected)
    };
    let grid = &ts.state_grid;
    let (modes, kd) = (ts.modes, ts.dwell_time);
    let safe: Vec<bool> = (0..grid.len())
        .into_par_iter()
        .map(|x| {
            let y = ts.external_output.mul_vec(&grid.point(x));
            spec.safe.iter().any(|b| b.contains(&y))
        })
        .collect();
    let cache = PostCache::build(ts, &union);
    let full_mask = if modes == 64 { u64::MAX } else { (1u64 << modes) - 1 };
    let mut allowed: Vec<u64> = (0..grid.len() * modes * kd)
        .map(|s| if safe[s / (modes * kd)] { full_mask } else { 0 })
        .collect();
    let mut history = vec![allowed.iter().filter(|&&m| m != 0).count()];
    loop {
        let layers: Vec<Vec<Prefix>> = (0..modes * kd)
            .into_par_iter()
            .map(|layer| {
                (0..grid.boxes().len())
                    .map(|b| Prefix::build(grid, b, |x| allowed[x * modes * kd + layer] == 0))
                    .collect()
            })
            .collect();
        let next: Vec<u64> = (0..allowed.len())
            .into_par_iter()
            .map(|s| {
                if allowed[s] == 0 {
                    return 0;
                }
                let (l, rest) = (s % kd, s / kd);
                let (x, p) = (rest / modes, rest % modes);
                let range = cache.boxes(x * modes + p);
                if range.is_empty() {
                    return 0;
                }
                let mut mask = 0u64;
                for (pn, ln) in next_labels(p, l, kd, modes) {
                    let layer = &layers[pn * kd + ln];
                    let clear = range
                        .clone()
                        .all(|b| layer[cache.grid_box[b] as usize].count(cache.lo(b), cache.hi(b)) == 0);
                    if clear {
                        mask |= 1 << pn;
                    }
                }
                mask
            })
            .collect();
        let changed = next != allowed;
        allowed = next;
        history.push(allowed.iter().filter(|&&m| m != 0).count());
        if !changed {
            break;
        }
    }
    let ctrl = AbstractController { grid_len: grid.len(), modes, dwell_time: kd, allowed, history };
    if ctrl.winning_count() == 0 {
        return Err(SynthesisError::EmptyWinningSet);
    }
    Ok(ctrl)
}

pub const CONTROLLER_MAGIC: &[u8; 8] = b"CSYMCTL\0";
pub const CONTROLLER_VERSION: u32 = 1;

/// Layout (little endian): magic, version u32, grid_len u64, modes u32,
/// dwell_time u32, then one u64 mode mask per `(x̂, p, l)` index (bit `p'`
/// set when `p'` is allowed; zero means losing).
pub fn write_controller<W: Write>(ctrl: &AbstractController, out: &mut W) -> Result<(), SynthesisError> {
    out.write_all(CONTROLLER_MAGIC)?;
    out.write_u32::<LittleEndian>(CONTROLLER_VERSION)?;
    out.write_u64::<LittleEndian>(ctrl.grid_len as u64)?;
    out.write_u32::<LittleEndian>(ctrl.modes as u32)?;
    out.write_u32::<LittleEndian>(ctrl.dwell_time as u32)?;
    for &m in &ctrl.allowed {
        out.write_u64::<LittleEndian>(m)?;
    }
    Ok(())
}

pub fn read_controller<R: Read>(input: &mut R) -> Result<AbstractController, SynthesisError> {
    let mut magic = [0u8; 8];
    input.read_exact(&mut magic)?;
    if &magic != CONTROLLER_MAGIC || input.read_u32::<LittleEndian>()? != CONTROLLER_VERSION {
        return Err(SynthesisError::Format("bad header".into()));
    }
    let grid_len = input.read_u64::<LittleEndian>()? as usize;
    let modes = input.read_u32::<LittleEndian>()? as usize;
    let dwell_time = input.read_u32::<LittleEndian>()? as usize;
    if modes == 0 || modes > 64 || dwell_time == 0 {
        return Err(SynthesisError::Format("bad mode count or dwell time".into()));
    }
    let n = grid_len * modes * dwell_time;
    let allowed = (0..n).map(|_| input.read_u64::<LittleEndian>()).collect::<Result<Vec<_>, _>>()?;
    if allowed.iter().any(|&m| modes < 64 && m >> modes != 0) {
        return Err(SynthesisError::Format("mode mask out of range".into()));
    }
    let count = allowed.iter().filter(|&&m| m != 0).count();
    Ok(AbstractController { grid_len, modes, dwell_time, allowed, history: vec![count] })
}

/// Abstract controller plus quantizer. Concrete states are mapped to the
/// nearest winning grid point within `eps_hat`.
#[derive(Debug, Clone)]
pub struct RefinedController {
    pub ctrl: AbstractController,
    pub grid: Grid,
    pub eps_hat: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Choice {
    pub grid_point: usize,
    pub next_mode: Mode,
}

pub fn refine_controller(ctrl: AbstractController, grid: Grid, eps_hat: f64) -> RefinedController {
    assert!(eps_hat >= 0.0, "refinement radius must be nonnegative");
    assert_eq!(ctrl.grid_len, grid.len(), "controller and grid disagree");
    RefinedController { ctrl, grid, eps_hat }
}

impl RefinedController {
    fn tol(&self) -> f64 {
        self.eps_hat + 1e-12 * self.grid.eta()
    }

    /// Winning grid point for `x` in mode `p` with counter `l`.
    pub fn quantize(&self, x: &[f64], p: Mode, l: usize) -> Result<usize, SynthesisError> {
        let none = || SynthesisError::NoWinningStateNearby { state: x.to_vec() };
        let (near, dist) = self.grid.nearest(x).ok_or_else(none)?;
        if dist <= self.tol() && self.ctrl.is_winning(near, p, l) {
            return Ok(near);
        }
        let eta = self.grid.eta();
        let axes: Vec<(i64, i64)> = x
            .iter()
            .map(|&v| (((v - self.eps_hat) / eta).floor() as i64, ((v + self.eps_hat) / eta).ceil() as i64))
            .collect();
        let mut best: Option<(f64, usize)> = None;
        let mut pt = vec![0.0; self.grid.dim()];
        for b in self.grid.clip(&axes) {
            for c in self.grid.cells(&b) {
                if !self.ctrl.is_winning(c, p, l) {
                    continue;
                }
                self.grid.point_into(c, &mut pt);
                let d = dist_inf(&pt, x);
                if d <= self.tol() && best.is_none_or(|(bd, bc)| d < bd || (d == bd && c < bc)) {
                    best = Some((d, c));
                }
            }
        }
        best.map(|(_, c)| c).ok_or_else(none)
    }

    pub fn choose(&self, x: &[f64], p: Mode, l: usize) -> Result<Choice, SynthesisError> {
        let grid_point = self.quantize(x, p, l)?;
        let next_mode = self.ctrl.first_allowed(grid_point, p, l).expect("winning states allow a mode");
        Ok(Choice { grid_point, next_mode })
    }

    /// Lowest mode whose fresh state `(x̂, p, 0)` is winning.
    pub fn initial_mode(&self, x: &[f64]) -> Result<Mode, SynthesisError> {
        (0..self.ctrl.modes)
            .find(|&p| self.quantize(x, p, 0).is_ok())
            .ok_or_else(|| SynthesisError::NoWinningStateNearby { state: x.to_vec() })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrajectoryRow {
    pub step: usize,
    pub subsystem: usize,
    pub x: Vec<f64>,
    pub mode: Mode,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Trajectory {
    pub rows: Vec<TrajectoryRow>,
    /// Every output stayed in its target for all steps.
    pub safe: bool,
    pub first_violation: Option<(usize, usize)>,
    /// Largest external-output component seen.
    pub peak_output: f64,
    /// Steps where the simulation-function value between the concrete state
    /// and the controller's grid point broke its decay bound.
    pub monitor_violations: usize,
}

/// Targets and optional simulation-function monitors for [`simulate_closed_loop`].
#[derive(Debug, Clone, Copy)]
pub struct ClosedLoopOptions<'a> {
    pub steps: usize,
    /// Per subsystem, boxes in external-output space.
    pub targets: &'a [Vec<HyperBox>],
    pub monitor: Option<&'a [AltSimCert]>,
}

struct Tracker<'a> {
    targets: &'a [Vec<HyperBox>],
    safe: bool,
    first_violation: Option<(usize, usize)>,
    peak: f64,
}

impl Tracker<'_> {
    fn observe(&mut self, net: &NetworkSpec, step: usize, xs: &[Vec<f64>]) {
        for (i, x) in xs.iter().enumerate() {
            let y = net.subsystems[i].external_output(x);
            self.peak = y.iter().copied().fold(self.peak, f64::max);
            if !self.targets[i].iter().any(|b| b.contains(&y)) {
                self.safe = false;
                self.first_violation.get_or_insert((step, i));
            }
        }
    }
}

/// Synchronous closed loop with `w_ij = y_ji`; row `k` holds `x_k` and the
/// mode applied at step `k`. The final state `x_K` is checked but not listed.
pub fn simulate_closed_loop(
    net: &NetworkSpec,
    controllers: &[RefinedController],
    x0: &[Vec<f64>],
    options: ClosedLoopOptions,
) -> Result<Trajectory, SynthesisError> {
    let n = net.len();
    if controllers.len() != n || x0.len() != n || options.targets.len() != n {
        return Err(SynthesisError::BadSpec("one controller, initial state and target per subsystem".into()));
    }
    let wrap = |step: usize, subsystem: usize| {
        move |e: SynthesisError| SynthesisError::ControllerFailure { step, subsystem, source: Box::new(e) }
    };
    let mut xs = x0.to_vec();
    let mut modes: Vec<Mode> = Vec::with_capacity(n);
    for i in 0..n {
        modes.push(controllers[i].initial_mode(&xs[i]).map_err(wrap(0, i))?);
    }
    let mut counters = vec![0usize; n];
    let mut rows = Vec::with_capacity(options.steps * n);
    let mut tracker = Tracker { targets: options.targets, safe: true, first_violation: None, peak: f64::NEG_INFINITY };
    let mut monitor_violations = 0;
    let mut previous: Option<(Vec<f64>, Vec<f64>)> = None;
    if options.steps > 0 {
        tracker.observe(net, 0, &xs);
    }
    for k in 0..options.steps {
        let mut choices = Vec::with_capacity(n);
        for i in 0..n {
            choices.push(controllers[i].choose(&xs[i], modes[i], counters[i]).map_err(wrap(k, i))?);
        }
        let points: Vec<Vec<f64>> = (0..n).map(|i| controllers[i].grid.point(choices[i].grid_point)).collect();
        if let Some(ascs) = options.monitor {
            let values: Vec<f64> =
                (0..n).map(|i| ascs[i].evaluate(modes[i], counters[i], &xs[i], &points[i])).collect();
            if let Some((prev, gaps)) = &previous {
                for i in 0..n {
                    if values[i] > ascs[i].decay_bound(prev[i], gaps[i]) * (1.0 + 1e-9) + 1e-12 {
                        monitor_violations += 1;
                    }
                }
            }
            let gaps = (0..n)
                .map(|i| dist_inf(&net.internal_input(i, &xs), &net.internal_input(i, &points)))
                .collect();
            previous = Some((values, gaps));
        }
        let mut next = Vec::with_capacity(n);
        for i in 0..n {
            rows.push(TrajectoryRow { step: k, subsystem: i, x: xs[i].clone(), mode: modes[i] });
            let w = net.internal_input(i, &xs);
            next.push(net.subsystems[i].image(modes[i], &xs[i], &w));
        }
        for i in 0..n {
            let q = choices[i].next_mode;
            counters[i] = label_after(modes[i], counters[i], controllers[i].ctrl.dwell_time, q)
                .expect("controllers only allow admissible modes");
            modes[i] = q;
        }
        xs = next;
        tracker.observe(net, k + 1, &xs);
    }
    Ok(Trajectory {
        rows,
        safe: tracker.safe,
        first_violation: tracker.first_violation,
        peak_output: if tracker.peak.is_finite() { tracker.peak } else { 0.0 },
        monitor_violations,
    })
}

/// Open loop with a fixed mode per subsystem.
pub fn simulate_fixed_modes(
    net: &NetworkSpec,
    modes: &[Mode],
    x0: &[Vec<f64>],
    steps: usize,
    targets: &[Vec<HyperBox>],
) -> Trajectory {
    let n = net.len();
    let mut xs = x0.to_vec();
    let mut rows = Vec::with_capacity(steps * n);
    let mut tracker = Tracker { targets, safe: true, first_violation: None, peak: f64::NEG_INFINITY };
    if steps > 0 {
        tracker.observe(net, 0, &xs);
    }
    for k in 0..steps {
        let next: Vec<Vec<f64>> = (0..n)
            .map(|i| {
                rows.push(TrajectoryRow { step: k, subsystem: i, x: xs[i].clone(), mode: modes[i] });
                net.subsystems[i].image(modes[i], &xs[i], &net.internal_input(i, &xs))
            })
            .collect();
        xs = next;
        tracker.observe(net, k + 1, &xs);
    }
    Trajectory {
        rows,
        safe: tracker.safe,
        first_violation: tracker.first_violation,
        peak_output: if tracker.peak.is_finite() { tracker.peak } else { 0.0 },
        monitor_violations: 0,
    }
}

/// CSV with columns `step,subsystem,x1,…,xn,mode`; shorter states leave
/// trailing cells empty.
pub fn write_trajectory_csv<W: Write>(traj: &Trajectory, dim: usize, out: &mut W) -> std::io::Result<()> {
    let mut header = String::from("step,subsystem");
    for k in 1..=dim {
        header.push_str(&format!(",x{k}"));
    }
    writeln!(out, "{header},mode")?;
    for r in &traj.rows {
        let mut line = format!("{},{}", r.step, r.subsystem);
        for k in 0..dim {
            line.push(',');
            if let Some(v) = r.x.get(k) {
                line.push_str(&v.to_string());
            }
        }
        writeln!(out, "{line},{}", r.mode)?;
    }
    Ok(())
}

/// Abstract successors of `(x̂, p, l)` under the commitment `p'` and input
/// index `w`, as `(x̂', p', l')` indices; `None` for the sink.
pub fn committed_successors(ts: &FiniteTs, x: usize, p: Mode, l: usize, pn: Mode, w: usize) -> Option<Vec<usize>> {
    let ln = label_after(p, l, ts.dwell_time, pn)?;
    let xs = ts.post_indices(x, p, w)?;
    Some(xs.into_iter().map(|xn| (xn * ts.modes + pn) * ts.dwell_time + ln).collect())
}

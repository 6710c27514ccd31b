//! Gains between subsystems, the small-gain cycle condition, scaling
//! factors `λ_i` and the network-level simulation function
//! `S̃ = max_i S_i / λ_i`.
//!
//! Gains are read as a weighted digraph with an arc `i → j` whenever
//! `γ_ij` is nonzero (subsystem `i` is driven by `j`).

use std::collections::HashMap;
use std::fmt::Write as _;

use rand::Rng;
use serde::Serialize;
use thiserror::Error;

use crate::abstraction::{next_labels, AbstractionError, AugState, FiniteTs, Grid, InputPoints};
use crate::certification::{le_tol, sample_union, sampled, AltSimCert, FalsificationReport};
use crate::kfn::{KFn, KfnError, SampleSpec};
use crate::linalg::dist_inf;
use crate::model::{Mode, NetworkSpec};

#[derive(Debug, Error)]
pub enum CompositionError {
    #[error(transparent)]
    Kfn(#[from] KfnError),
    #[error("more than {budget} simple cycles and the gains are not all linear")]
    CycleExplosion { budget: usize },
    #[error("gain ({0}, {1}) is not linear")]
    NonLinearGains(usize, usize),
    #[error("small-gain condition fails: max cycle gain {0}")]
    SmallGainFailed(f64),
    #[error("component {component}: {detail}")]
    CouplingMismatch { component: usize, detail: String },
    #[error("{0}")]
    Shape(String),
    #[error(transparent)]
    Abstraction(#[from] AbstractionError),
}

/// `N × N` gains; `None` is the zero gain.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GainMatrix {
    n: usize,
    entries: Vec<Option<KFn>>,
}

impl GainMatrix {
    pub fn new(n: usize) -> Self {
        GainMatrix { n, entries: vec![None; n * n] }
    }

    pub fn from_slopes(slopes: &[Vec<f64>]) -> Result<Self, KfnError> {
        let n = slopes.len();
        let mut gm = GainMatrix::new(n);
        for (i, row) in slopes.iter().enumerate() {
            assert_eq!(row.len(), n, "gain matrix must be square");
            for (j, &s) in row.iter().enumerate() {
                if s != 0.0 {
                    gm.set(i, j, Some(KFn::linear(s)?));
                }
            }
        }
        Ok(gm)
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn get(&self, i: usize, j: usize) -> Option<&KFn> {
        self.entries[i * self.n + j].as_ref()
    }

    pub fn set(&mut self, i: usize, j: usize, g: Option<KFn>) {
        self.entries[i * self.n + j] = g;
    }

    /// Row-major slopes, or the first nonlinear entry.
    pub fn slopes(&self) -> Result<Vec<Vec<f64>>, CompositionError> {
        (0..self.n)
            .map(|i| {
                (0..self.n)
                    .map(|j| match self.get(i, j) {
                        None => Ok(0.0),
                        Some(g) => g.linear_slope().ok_or(CompositionError::NonLinearGains(i, j)),
                    })
                    .collect()
            })
            .collect()
    }

    fn successors(&self, i: usize) -> impl Iterator<Item = usize> + '_ {
        (0..self.n).filter(move |&j| self.get(i, j).is_some())
    }

    /// Gain digraph in DOT format.
    pub fn to_dot(&self) -> String {
        let mut out = String::from("digraph gains {\n");
        for i in 0..self.n {
            let _ = writeln!(out, "  s{i} [label=\"{i}\"];");
        }
        for i in 0..self.n {
            for j in self.successors(i) {
                let label = match self.get(i, j).and_then(KFn::linear_slope) {
                    Some(s) => format!("{s:.4}"),
                    None => "nonlinear".into(),
                };
                let _ = writeln!(out, "  s{i} -> s{j} [label=\"{label}\"];");
            }
        }
        out.push_str("}\n");
        out
    }
}

/// `γ_ii = σ_i` and, for each edge `(j → i)`, `γ_ij = ρ̂_i ∘ α_j⁻¹`.
pub fn gain_matrix(ascs: &[AltSimCert], edges: &[(usize, usize)]) -> Result<GainMatrix, CompositionError> {
    let n = ascs.len();
    let mut gm = GainMatrix::new(n);
    for (i, a) in ascs.iter().enumerate() {
        gm.set(i, i, Some(KFn::linear(a.sigma)?));
    }
    for &(j, i) in edges {
        if i >= n || j >= n {
            return Err(CompositionError::Shape(format!("edge ({j} -> {i}) out of range")));
        }
        if let Some(rho) = &ascs[i].rho_hat {
            gm.set(i, j, Some(KFn::compose(rho.clone(), ascs[j].alpha.inverse()?)));
        }
    }
    Ok(gm)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CycleVerdict {
    pub cycle: Vec<usize>,
    pub gain: KFn,
    pub below_identity: bool,
    pub witness: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SmallGainReport {
    pub pass: bool,
    /// Number of simple cycles, when enumerated within budget.
    pub cycle_count: Option<usize>,
    pub cycles: Vec<CycleVerdict>,
    /// Maximum cycle geometric mean of the slopes, for linear gains.
    pub max_cycle_mean: Option<f64>,
}

pub const DEFAULT_CYCLE_BUDGET: usize = 1_000_000;
/// Cycle verdicts kept in a report; failing cycles are always kept.
const REPORTED_CYCLES: usize = 256;

/// Tests every simple cycle composition against the identity; falls back to
/// the maximum cycle mean when there are more than `budget` cycles.
pub fn check_small_gain(gm: &GainMatrix, budget: usize) -> Result<SmallGainReport, CompositionError> {
    let slopes = gm.slopes().ok();
    let max_cycle_mean = slopes.as_ref().map(|s| max_cycle_mean(s));
    let spec = SampleSpec::default();
    let mut cycles = Vec::new();
    let mut pass = true;
    let mut count = 0usize;
    let complete = simple_cycles(gm, budget, |cycle| {
        count += 1;
        let gain = cycle
            .iter()
            .enumerate()
            .map(|(k, &i)| gm.get(i, cycle[(k + 1) % cycle.len()]).expect("cycle follows arcs").clone())
            .reduce(KFn::compose)
            .expect("cycles are non-empty");
        let lt = gain.lt_identity(&spec);
        pass &= lt.holds;
        if !lt.holds || cycles.len() < REPORTED_CYCLES {
            cycles.push(CycleVerdict { cycle: cycle.to_vec(), gain, below_identity: lt.holds, witness: lt.witness });
        }
    });
    if complete {
        return Ok(SmallGainReport { pass, cycle_count: Some(count), cycles, max_cycle_mean });
    }
    match max_cycle_mean {
        Some(r) => Ok(SmallGainReport { pass: r < 1.0, cycle_count: None, cycles: Vec::new(), max_cycle_mean }),
        None => Err(CompositionError::CycleExplosion { budget }),
    }
}

/// Johnson's enumeration of elementary cycles; stops after `budget` cycles and
/// returns whether the enumeration completed.
fn simple_cycles(gm: &GainMatrix, budget: usize, mut visit: impl FnMut(&[usize])) -> bool {
    let n = gm.len();
    let adj: Vec<Vec<usize>> = (0..n).map(|i| gm.successors(i).collect()).collect();
    let mut count = 0usize;
    for s in 0..n {
        // Cycles whose smallest vertex is s, within the subgraph on vertices >= s.
        let mut blocked = vec![false; n];
        let mut bset: Vec<Vec<usize>> = vec![Vec::new(); n];
        let mut path = vec![s];
        blocked[s] = true;
        // Explicit stack of (vertex, next neighbour position, found a cycle).
        let mut stack: Vec<(usize, usize, bool)> = vec![(s, 0, false)];
        while let Some(top) = stack.last_mut() {
            let (v, pos, _) = *top;
            if pos < adj[v].len() {
                top.1 += 1;
                let w = adj[v][pos];
                if w < s {
                    continue;
                }
                if w == s {
                    count += 1;
                    if count > budget {
                        return false;
                    }
                    visit(&path);
                    top.2 = true;
                } else if !blocked[w] {
                    blocked[w] = true;
                    path.push(w);
                    stack.push((w, 0, false));
                }
            } else {
                let (v, _, found) = stack.pop().expect("non-empty");
                if found {
                    unblock(v, &mut blocked, &mut bset);
                } else {
                    for &w in &adj[v] {
                        if w >= s && !bset[w].contains(&v) {
                            bset[w].push(v);
                        }
                    }
                }
                path.pop();
                if let Some(parent) = stack.last_mut() {
                    parent.2 |= found;
                }
            }
        }
    }
    true
}

fn unblock(v: usize, blocked: &mut [bool], bset: &mut [Vec<usize>]) {
    let mut todo = vec![v];
    while let Some(u) = todo.pop() {
        if blocked[u] {
            blocked[u] = false;
            todo.extend(std::mem::take(&mut bset[u]));
        }
    }
}

/// Maximum over cycles of the geometric mean of the slopes (Karp's algorithm
/// on log-weights, with a virtual source feeding every vertex). Zero when the
/// digraph is acyclic.
pub fn max_cycle_mean(slopes: &[Vec<f64>]) -> f64 {
    let n = slopes.len();
    let arcs: Vec<(usize, usize, f64)> = (0..n)
        .flat_map(|i| (0..n).filter(move |&j| slopes[i][j] > 0.0).map(move |j| (i, j, slopes[i][j].ln())))
        .collect();
    if arcs.is_empty() {
        return 0.0;
    }
    // d[k][v]: heaviest walk with k arcs from the virtual source (k = 0 is the source arc).
    let mut d = vec![vec![0.0; n]];
    for k in 1..=n {
        let mut row = vec![f64::NEG_INFINITY; n];
        for &(u, v, w) in &arcs {
            let c = d[k - 1][u] + w;
            if c > row[v] {
                row[v] = c;
            }
        }
        d.push(row);
    }
    let mut best = f64::NEG_INFINITY;
    for v in 0..n {
        if d[n][v] == f64::NEG_INFINITY {
            continue;
        }
        let worst = (0..n)
            .filter(|&k| d[k][v] > f64::NEG_INFINITY)
            .map(|k| (d[n][v] - d[k][v]) / (n - k) as f64)
            .fold(f64::INFINITY, f64::min);
        best = best.max(worst);
    }
    if best == f64::NEG_INFINITY {
        0.0
    } else {
        best.exp()
    }
}

/// Scalars `λ_i` with `max_j γ_ij λ_j ≤ θ λ_i`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Deltas {
    pub lambda: Vec<f64>,
    /// Attained factor `max_i max_j γ_ij λ_j / λ_i`.
    pub theta: f64,
}

/// `λ = (Γ/θ)* ⊗ 1` in max-times algebra with `θ = (r + 1)/2`, where `r` is
/// the maximum cycle mean. Since the cycle means of `Γ/θ` are below one, the
/// star is reached after at most `N` relaxation rounds.
pub fn compute_deltas(gm: &GainMatrix) -> Result<Deltas, CompositionError> {
    let g = gm.slopes()?;
    let n = g.len();
    let r = max_cycle_mean(&g);
    if r >= 1.0 {
        return Err(CompositionError::SmallGainFailed(r));
    }
    let target = 0.5 * (r + 1.0);
    let mut lambda = vec![1.0; n];
    for _ in 0..=n {
        let next: Vec<f64> = (0..n)
            .map(|i| (0..n).map(|j| g[i][j] / target * lambda[j]).fold(1.0, f64::max))
            .collect();
        if next == lambda {
            break;
        }
        lambda = next;
    }
    let theta = attained_factor(&g, &lambda);
    Ok(Deltas { lambda, theta })
}

/// Smallest float `θ` (up to rounding) with `γ_ij λ_j ≤ θ λ_i` under
/// floating-point multiplication.
fn attained_factor(g: &[Vec<f64>], lambda: &[f64]) -> f64 {
    let n = g.len();
    let mut theta = (0..n)
        .flat_map(|i| (0..n).map(move |j| g[i][j] * lambda[j] / lambda[i]))
        .fold(0.0, f64::max);
    while (0..n).any(|i| (0..n).any(|j| g[i][j] * lambda[j] > theta * lambda[i])) {
        theta *= 1.0 + 2.0 * f64::EPSILON;
    }
    theta
}

/// Checks `max_j γ_ij λ_j ≤ θ λ_i` for every `i` with `θ < 1`.
pub fn check_deltas(gm: &GainMatrix, deltas: &Deltas) -> Result<bool, CompositionError> {
    let g = gm.slopes()?;
    let ok = deltas.theta < 1.0
        && deltas.lambda.iter().all(|&l| l > 0.0)
        && (0..g.len()).all(|i| (0..g.len()).all(|j| g[i][j] * deltas.lambda[j] <= deltas.theta * deltas.lambda[i]));
    Ok(ok)
}

/// Network simulation function `S̃ = max_i S_i / λ_i` without internal inputs.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NetworkAltSim {
    pub components: Vec<AltSimCert>,
    pub lambda: Vec<f64>,
    pub sigma: f64,
    pub eps_tilde: f64,
    pub alpha: KFn,
    /// `α̃⁻¹(ε̃)`.
    pub eps_hat: f64,
}

impl NetworkAltSim {
    pub fn evaluate(&self, p: &[Mode], l: &[usize], x: &[Vec<f64>], xh: &[Vec<f64>]) -> f64 {
        (0..self.components.len())
            .map(|i| self.components[i].evaluate(p[i], l[i], &x[i], &xh[i]) / self.lambda[i])
            .fold(0.0, f64::max)
    }
}

/// Since `‖w_i − ŵ_i‖ ≤ max_j α_j⁻¹(S_j)`, each component satisfies
/// `S_i' ≤ max{max_j γ_ij S_j, ε̃_i}`, so dividing by `λ_i` yields
/// `S̃' ≤ max{θ S̃, max_i ε̃_i/λ_i}`.
pub fn composed_alt_sim(ascs: &[AltSimCert], deltas: &Deltas) -> Result<NetworkAltSim, CompositionError> {
    if ascs.len() != deltas.lambda.len() || ascs.is_empty() {
        return Err(CompositionError::Shape("one scaling factor per component is required".into()));
    }
    let eps_tilde = ascs.iter().zip(&deltas.lambda).map(|(a, l)| a.eps_tilde / l).fold(0.0, f64::max);
    let mut slope = f64::INFINITY;
    for (a, l) in ascs.iter().zip(&deltas.lambda) {
        let s = a.alpha.linear_slope().ok_or(CompositionError::Kfn(KfnError::NotInvertibleRepresentation))?;
        slope = slope.min(s / l);
    }
    let alpha = KFn::linear(slope)?;
    let eps_hat = alpha.inverse()?.eval(eps_tilde);
    Ok(NetworkAltSim {
        components: ascs.to_vec(),
        lambda: deltas.lambda.clone(),
        sigma: deltas.theta,
        eps_tilde,
        alpha,
        eps_hat,
    })
}

/// Every internal input subsystem `i` can receive when each neighbour sits on
/// a point of its grid: the product over input blocks of `{C_ji x̂_j}`.
pub fn neighbor_output_image(net: &NetworkSpec, i: usize, grids: &[&Grid]) -> Result<InputPoints, CompositionError> {
    let sub = &net.subsystems[i];
    if sub.internal_blocks.is_empty() {
        return Ok(InputPoints::none());
    }
    let mut per_block: Vec<Vec<Vec<f64>>> = Vec::new();
    for b in &sub.internal_blocks {
        let c = &net.subsystems[b.source]
            .output_block_for(i)
            .ok_or_else(|| CompositionError::Shape(format!("subsystem {} has no output towards {i}", b.source)))?
            .c;
        let mut imgs: Vec<Vec<f64>> = grids[b.source].points().map(|x| c.mul_vec(&x)).collect();
        imgs.sort_by(|a, b| lex_cmp(a, b));
        imgs.dedup();
        per_block.push(imgs);
    }
    let total: usize = per_block.iter().map(Vec::len).product();
    if total > 50_000_000 {
        return Err(AbstractionError::TooLarge(format!("{total} internal-input points")).into());
    }
    let mut flat = Vec::with_capacity(total * sub.input_dim());
    for mut k in 0..total {
        let mut pt = Vec::with_capacity(sub.input_dim());
        let mut picks = vec![0; per_block.len()];
        for (bi, imgs) in per_block.iter().enumerate().rev() {
            picks[bi] = k % imgs.len();
            k /= imgs.len();
        }
        for (bi, imgs) in per_block.iter().enumerate() {
            pt.extend_from_slice(&imgs[picks[bi]]);
        }
        flat.extend(pt);
    }
    Ok(InputPoints::from_flat(sub.input_dim(), flat))
}

fn lex_cmp(a: &[f64], b: &[f64]) -> std::cmp::Ordering {
    a.iter().zip(b).map(|(x, y)| x.total_cmp(y)).find(|o| o.is_ne()).unwrap_or(std::cmp::Ordering::Equal)
}

fn bits(w: &[f64]) -> Vec<u64> {
    w.iter().map(|v| (v + 0.0).to_bits()).collect()
}

const COUPLING_TOL: f64 = 1e-9;

/// Product of component abstractions where component `i` reads
/// `ŵ_i = (C_ji x̂_j)_j` from the current product state.
#[derive(Debug, Clone)]
pub struct NetworkFiniteTs {
    pub net: NetworkSpec,
    pub components: Vec<FiniteTs>,
    lookup: Vec<HashMap<Vec<u64>, usize>>,
}

/// Validates that each component's internal-input list contains the image of
/// its neighbours' output grids, then couples the components.
pub fn interconnect_finite(net: &NetworkSpec, components: Vec<FiniteTs>) -> Result<NetworkFiniteTs, CompositionError> {
    if components.len() != net.len() {
        return Err(CompositionError::Shape(format!("{} abstractions for {} subsystems", components.len(), net.len())));
    }
    let grids: Vec<&Grid> = components.iter().map(|c| &c.state_grid).collect();
    let mut lookup = Vec::with_capacity(net.len());
    for (i, fts) in components.iter().enumerate() {
        let mut map = HashMap::new();
        for (k, w) in fts.inputs.iter().enumerate() {
            map.entry(bits(w)).or_insert(k);
        }
        if net.subsystems[i].input_dim() != fts.inputs.dim() {
            return Err(CompositionError::CouplingMismatch {
                component: i,
                detail: "internal-input dimension differs from the abstraction".into(),
            });
        }
        let needed = neighbor_output_image(net, i, &grids)?;
        if fts.inputs.dim() > 0 {
            for w in needed.iter() {
                if !map.contains_key(&bits(w)) && fts.inputs.find(w, COUPLING_TOL).is_none() {
                    return Err(CompositionError::CouplingMismatch {
                        component: i,
                        detail: format!("neighbour output {w:?} is not an internal-input point"),
                    });
                }
            }
        }
        lookup.push(map);
    }
    Ok(NetworkFiniteTs { net: net.clone(), components, lookup })
}

impl NetworkFiniteTs {
    pub fn len(&self) -> usize {
        self.components.len()
    }

    pub fn is_empty(&self) -> bool {
        self.components.is_empty()
    }

    /// Index of `ŵ_i` for grid indices `xs` of all components.
    pub fn input_index(&self, i: usize, xs: &[usize]) -> usize {
        if self.components[i].inputs.dim() == 0 {
            return 0;
        }
        let pts: Vec<Vec<f64>> = xs.iter().zip(&self.components).map(|(&x, c)| c.state_grid.point(x)).collect();
        let w = self.net.internal_input(i, &pts);
        self.lookup[i]
            .get(&bits(&w))
            .copied()
            .or_else(|| self.components[i].inputs.find(&w, COUPLING_TOL))
            .expect("coupling validated at construction")
    }

    /// Successors of each component; the product successor set is their
    /// Cartesian product. `None` when some component reaches its sink.
    pub fn component_successors(&self, states: &[AugState], u: &[Mode]) -> Option<Vec<Vec<AugState>>> {
        let xs: Vec<usize> = states.iter().map(|s| s.x).collect();
        (0..self.len())
            .map(|i| self.components[i].successors(states[i], u[i], self.input_index(i, &xs)))
            .collect()
    }

    /// Explicit product successors.
    pub fn product_successors(&self, states: &[AugState], u: &[Mode]) -> Option<Vec<Vec<AugState>>> {
        let parts = self.component_successors(states, u)?;
        Some(cartesian(&parts))
    }

    pub fn product_state_count(&self) -> usize {
        self.components.iter().map(FiniteTs::state_count).product()
    }

    /// Product states in mixed-radix order (last component fastest).
    pub fn product_states(&self) -> impl Iterator<Item = Vec<AugState>> + '_ {
        (0..self.product_state_count()).map(move |mut k| {
            let mut out = vec![AugState { x: 0, p: 0, l: 0 }; self.len()];
            for (i, c) in self.components.iter().enumerate().rev() {
                out[i] = c.state_at(k % c.state_count());
                k /= c.state_count();
            }
            out
        })
    }
}

fn cartesian<T: Clone>(parts: &[Vec<T>]) -> Vec<Vec<T>> {
    parts.iter().fold(vec![Vec::new()], |acc, part| {
        acc.iter()
            .flat_map(|prefix| {
                part.iter().map(move |x| {
                    let mut v = prefix.clone();
                    v.push(x.clone());
                    v
                })
            })
            .collect()
    })
}

/// Sampled check of both network-level inequalities, with the existential
/// over product successors resolved componentwise (the minimum of a maximum
/// of independent terms is the maximum of their minima).
///
/// One sample in ten puts every component on a matched on-grid pair.
pub fn verify_composed_sampled(
    nfts: &NetworkFiniteTs,
    asc: &NetworkAltSim,
    samples: usize,
    seed: u64,
) -> FalsificationReport {
    let net = &nfts.net;
    let n = nfts.len();
    sampled(samples, seed, |s, rng, rep| {
        let mut p = Vec::with_capacity(n);
        let mut l = Vec::with_capacity(n);
        let mut xh_idx = Vec::with_capacity(n);
        let mut xh = Vec::with_capacity(n);
        let mut x = Vec::with_capacity(n);
        for (i, c) in nfts.components.iter().enumerate() {
            p.push(rng.gen_range(0..c.modes));
            l.push(rng.gen_range(0..c.dwell_time));
            let k = rng.gen_range(0..c.state_grid.len());
            xh_idx.push(k);
            xh.push(c.state_grid.point(k));
            if s % 10 == 0 {
                x.push(xh[i].clone());
            } else {
                x.push(sample_union(&net.subsystems[i].state_domain, rng));
            }
        }
        let witness = || {
            let mut w = vec![p.iter().map(|&v| v as f64).collect::<Vec<_>>(), l.iter().map(|&v| v as f64).collect()];
            w.extend(x.iter().cloned());
            w.extend(xh.iter().cloned());
            w
        };
        let s_now = asc.evaluate(&p, &l, &x, &xh);
        let out_gap = (0..n)
            .map(|i| {
                let h = &net.subsystems[i].external_output;
                dist_inf(&h.mul_vec(&x[i]), &h.mul_vec(&xh[i]))
            })
            .fold(0.0, f64::max);
        if !le_tol(asc.alpha.eval(out_gap), s_now) {
            rep.record(s, "output bound", asc.alpha.eval(out_gap), s_now, witness());
        }
        let mut x_next = Vec::with_capacity(n);
        for i in 0..n {
            let w = net.internal_input(i, &x);
            let xn = net.subsystems[i].image(p[i], &x[i], &w);
            if !net.subsystems[i].in_state_domain(&xn) {
                rep.skipped += 1;
                return;
            }
            x_next.push(xn);
        }
        let bound = (asc.sigma * s_now).max(asc.eps_tilde);
        let mut worst = 0.0f64;
        for i in 0..n {
            let c = &nfts.components[i];
            let w = nfts.input_index(i, &xh_idx);
            let Some(cells) = c.post(xh_idx[i], p[i], w) else {
                rep.record(s, "blocked abstraction", f64::INFINITY, bound, witness());
                return;
            };
            let mut buf = vec![0.0; c.state_grid.dim()];
            for (pn, ln) in next_labels(p[i], l[i], c.dwell_time, c.modes) {
                let mut best = f64::INFINITY;
                for b in &cells {
                    for k in c.state_grid.cells(b) {
                        c.state_grid.point_into(k, &mut buf);
                        best = best.min(asc.components[i].evaluate(pn, ln, &x_next[i], &buf));
                    }
                }
                worst = worst.max(best / asc.lambda[i]);
            }
        }
        if !le_tol(worst, bound) {
            rep.record(s, "decay", worst, bound, witness());
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn slopes_equal(a: &[Vec<f64>], gm: &GainMatrix) -> bool {
        gm.slopes().unwrap() == a
    }

    #[test]
    fn example_gain_composition() {
        let rho = KFn::linear(0.5).unwrap();
        let g = KFn::compose(rho, KFn::identity().inverse().unwrap());
        assert_eq!(g.linear_slope(), Some(0.5));
    }

    #[test]
    fn two_node_cycle_above_identity_fails() {
        let gm = GainMatrix::from_slopes(&[vec![0.0, 1.1], vec![1.1, 0.0]]).unwrap();
        let rep = check_small_gain(&gm, DEFAULT_CYCLE_BUDGET).unwrap();
        assert!(!rep.pass);
        assert_eq!(rep.cycle_count, Some(1));
        assert_eq!(rep.cycles[0].cycle, vec![0, 1]);
        assert!(rep.cycles[0].witness.is_some());
    }

    #[test]
    fn single_self_loop_passes() {
        let gm = GainMatrix::from_slopes(&[vec![0.99]]).unwrap();
        let rep = check_small_gain(&gm, DEFAULT_CYCLE_BUDGET).unwrap();
        assert!(rep.pass);
        assert_eq!(rep.cycle_count, Some(1));
    }

    #[test]
    fn ring_with_self_loops() {
        let n = 25;
        let mut s = vec![vec![0.0; n]; n];
        for i in 0..n {
            s[i][i] = 0.65;
            s[i][(i + n - 1) % n] = 0.9;
        }
        let gm = GainMatrix::from_slopes(&s).unwrap();
        let rep = check_small_gain(&gm, DEFAULT_CYCLE_BUDGET).unwrap();
        assert!(rep.pass);
        assert_eq!(rep.cycle_count, Some(n + 1));
        assert!((rep.max_cycle_mean.unwrap() - 0.9).abs() < 1e-12);
    }

    #[test]
    fn budget_falls_back_to_cycle_mean() {
        let gm = GainMatrix::from_slopes(&[vec![0.5, 0.5], vec![0.5, 0.5]]).unwrap();
        let rep = check_small_gain(&gm, 1).unwrap();
        assert!(rep.pass);
        assert_eq!(rep.cycle_count, None);
        let mut nonlinear = gm.clone();
        nonlinear.set(0, 1, Some(KFn::power(1.0, 2.0).unwrap()));
        assert!(matches!(check_small_gain(&nonlinear, 1), Err(CompositionError::CycleExplosion { budget: 1 })));
    }

    #[test]
    fn deltas_for_asymmetric_pair() {
        let gm = GainMatrix::from_slopes(&[vec![0.5, 0.5], vec![1.5, 0.5]]).unwrap();
        let d = compute_deltas(&gm).unwrap();
        assert_eq!(d.lambda[0], 1.0);
        assert!(d.lambda[1] > 1.5 && d.lambda[1] < 1.7);
        assert!(d.theta < 1.0);
        assert!(check_deltas(&gm, &d).unwrap());
    }

    #[test]
    fn deltas_decoupled() {
        let gm = GainMatrix::from_slopes(&[vec![0.3, 0.0], vec![0.0, 0.6]]).unwrap();
        let d = compute_deltas(&gm).unwrap();
        assert_eq!(d.lambda, vec![1.0, 1.0]);
        assert_eq!(d.theta, 0.6);
        assert!(slopes_equal(&[vec![0.3, 0.0], vec![0.0, 0.6]], &gm));
    }

    #[test]
    fn deltas_reject_nonlinear() {
        let mut gm = GainMatrix::new(1);
        gm.set(0, 0, Some(KFn::power(0.5, 2.0).unwrap()));
        assert!(matches!(compute_deltas(&gm), Err(CompositionError::NonLinearGains(0, 0))));
    }

    #[test]
    fn dot_lists_arcs() {
        let gm = GainMatrix::from_slopes(&[vec![0.5, 0.25], vec![0.0, 0.5]]).unwrap();
        let dot = gm.to_dot();
        assert!(dot.contains("s0 -> s1 [label=\"0.2500\"]"));
        assert!(!dot.contains("s1 -> s0"));
    }

    /// Brute force over all vertex sequences without repetition.
    fn brute_cycles(s: &[Vec<f64>]) -> Vec<Vec<usize>> {
        fn extend(s: &[Vec<f64>], path: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
            let last = *path.last().unwrap();
            if s[last][path[0]] > 0.0 {
                out.push(path.clone());
            }
            for j in path[0] + 1..s.len() {
                if s[last][j] > 0.0 && !path.contains(&j) {
                    path.push(j);
                    extend(s, path, out);
                    path.pop();
                }
            }
        }
        let mut out = Vec::new();
        for v in 0..s.len() {
            extend(s, &mut vec![v], &mut out);
        }
        out
    }

    fn digraph() -> impl Strategy<Value = Vec<Vec<f64>>> {
        (1usize..=8).prop_flat_map(|n| {
            prop::collection::vec(prop::collection::vec(prop_oneof![Just(0.0), 0.05f64..1.6], n), n)
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(128))]

        #[test]
        fn enumeration_matches_cycle_mean(s in digraph()) {
            let gm = GainMatrix::from_slopes(&s).unwrap();
            let rep = check_small_gain(&gm, DEFAULT_CYCLE_BUDGET).unwrap();
            let r = max_cycle_mean(&s);
            prop_assume!((r - 1.0).abs() > 1e-9);
            prop_assert_eq!(rep.pass, r < 1.0);
            let mut expected = brute_cycles(&s);
            let mut got: Vec<Vec<usize>> = Vec::new();
            simple_cycles(&gm, usize::MAX, |c| got.push(c.to_vec()));
            expected.sort();
            got.sort();
            prop_assert_eq!(got, expected);
        }

        #[test]
        fn deltas_satisfy_their_inequality(s in digraph()) {
            let gm = GainMatrix::from_slopes(&s).unwrap();
            match compute_deltas(&gm) {
                Ok(d) => {
                    prop_assert!(d.theta < 1.0);
                    for i in 0..s.len() {
                        for j in 0..s.len() {
                            prop_assert!(s[i][j] * d.lambda[j] <= d.theta * d.lambda[i]);
                        }
                    }
                }
                Err(CompositionError::SmallGainFailed(r)) => prop_assert!(r >= 1.0),
                Err(e) => prop_assert!(false, "unexpected error {e}"),
            }
        }
    }
}

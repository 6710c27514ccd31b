//! Incremental-stability certificates for affine modes and the alternating
//! simulation functions built from them.
//!
//! Lyapunov functions are weighted max-norms `V_p(x, x̂) = ‖M_p (x − x̂)‖∞`
//! with diagonal `M_p`. For those, every comparison function is linear and the
//! contraction rate is an induced norm, so certification is exact algebra;
//! the sampled checks below exist to falsify it, not to establish it.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::abstraction::{next_labels, FiniteTs};
use crate::kfn::{KFn, KfnError};
use crate::linalg::{dist_inf, HyperBox};
use crate::model::{Mode, SwitchedSubsystem};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CertError {
    #[error("mode {mode} is not contractive: kappa = {kappa}")]
    NotContractive { mode: usize, kappa: f64 },
    #[error("exponent epsilon must exceed 1, got {0}")]
    BadEpsilon(f64),
    #[error("dwell time {given} is below the required {required}")]
    DwellTooSmall { required: usize, given: usize },
    #[error("splitters must lie in (0, 1) and sum to 1, got {0:?}")]
    BadSplitters([f64; 3]),
    #[error("derived sigma = {0} is not below 1; increase the first splitter")]
    SigmaNotContractive(f64),
    #[error("quantization parameter {eta} exceeds the domain span {span}")]
    EtaTooLarge { eta: f64, span: f64 },
    #[error("weights: {0}")]
    BadWeights(String),
    #[error("comparison functions must be linear here")]
    NonLinear,
    #[error("sampled verification found {0} violations")]
    GateFailed(usize),
    #[error(transparent)]
    Kfn(#[from] KfnError),
}

/// δ-ISS data for one mode.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ModeCert {
    /// Diagonal of `M_p`.
    pub weights: Vec<f64>,
    pub lower: KFn,
    pub upper: KFn,
    pub kappa: f64,
    /// Input gain; `None` when the mode ignores its internal input.
    pub rho: Option<KFn>,
    /// Triangle-inequality gain.
    pub gamma: KFn,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LyapCert {
    pub modes: Vec<ModeCert>,
    pub mu: f64,
    /// All modes share one Lyapunov function.
    pub common: bool,
}

impl LyapCert {
    pub fn v(&self, p: Mode, x: &[f64], xh: &[f64]) -> f64 {
        self.modes[p]
            .weights
            .iter()
            .zip(x.iter().zip(xh))
            .map(|(m, (a, b))| m * (a - b).abs())
            .fold(0.0, f64::max)
    }

    pub fn kappa_max(&self) -> f64 {
        self.modes.iter().map(|m| m.kappa).fold(0.0, f64::max)
    }
}

/// Smallest contraction rate we report; `κ = 0` is replaced by this bound.
const KAPPA_FLOOR: f64 = 1e-12;

/// Certifies every mode with `V_p = ‖diag(weights[p])·(x − x̂)‖∞`.
pub fn certify_delta_iss_affine(sub: &SwitchedSubsystem, weights: &[Vec<f64>]) -> Result<LyapCert, CertError> {
    if weights.len() != sub.mode_count() {
        return Err(CertError::BadWeights(format!("{} weight vectors for {} modes", weights.len(), sub.mode_count())));
    }
    if weights.iter().any(|w| w.len() != sub.dim() || w.iter().any(|&m| !(m.is_finite() && m > 0.0))) {
        return Err(CertError::BadWeights("weights must be positive and match the state dimension".into()));
    }
    let ones = vec![1.0; sub.input_dim()];
    let mut modes = Vec::with_capacity(weights.len());
    for (p, w) in weights.iter().enumerate() {
        let m = sub.mode(p);
        let kappa = m.a.weighted_norm_inf(w, w);
        if kappa >= 1.0 {
            return Err(CertError::NotContractive { mode: p, kappa });
        }
        let rho_slope = if sub.input_dim() == 0 { 0.0 } else { m.d.weighted_norm_inf(w, &ones) };
        let wmin = w.iter().copied().fold(f64::INFINITY, f64::min);
        let wmax = w.iter().copied().fold(0.0, f64::max);
        modes.push(ModeCert {
            weights: w.clone(),
            lower: KFn::linear(wmin)?,
            upper: KFn::linear(wmax)?,
            kappa: kappa.max(KAPPA_FLOOR),
            rho: (rho_slope > 0.0).then(|| KFn::linear(rho_slope)).transpose()?,
            gamma: KFn::linear(wmax)?,
        });
    }
    let mut mu: f64 = 1.0;
    for a in &modes {
        for b in &modes {
            for (x, y) in a.weights.iter().zip(&b.weights) {
                mu = mu.max(x / y);
            }
        }
    }
    let common = modes.iter().all(|m| m.weights == modes[0].weights);
    Ok(LyapCert { modes, mu, common })
}

/// `max_p ⌈ε·ln μ / ln(1/κ_p) + 1⌉`.
pub fn min_dwell_time(cert: &LyapCert, epsilon: f64) -> Result<usize, CertError> {
    if !(epsilon > 1.0) {
        return Err(CertError::BadEpsilon(epsilon));
    }
    let bound = cert
        .modes
        .iter()
        .map(|m| epsilon * cert.mu.ln() / (1.0 / m.kappa).ln() + 1.0)
        .fold(1.0, f64::max);
    Ok((bound - 1e-9).ceil().max(1.0) as usize)
}

/// One violated inequality with the tuple that exhibits it.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Violation {
    pub sample: usize,
    pub check: &'static str,
    pub lhs: f64,
    pub rhs: f64,
    pub witness: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Default)]
pub struct FalsificationReport {
    pub samples: usize,
    /// Tuples whose concrete successor left the state domain (no transition exists).
    pub skipped: usize,
    pub violation_count: usize,
    /// First violations in sample order.
    pub violations: Vec<Violation>,
}

impl FalsificationReport {
    pub fn passed(&self) -> bool {
        self.violation_count == 0
    }

    fn merge(parts: Vec<FalsificationReport>) -> FalsificationReport {
        let mut out = FalsificationReport::default();
        for p in parts {
            out.samples += p.samples;
            out.skipped += p.skipped;
            out.violation_count += p.violation_count;
            out.violations.extend(p.violations);
        }
        out.violations.sort_by_key(|v| v.sample);
        out.violations.truncate(MAX_WITNESSES);
        out
    }

    pub(crate) fn record(&mut self, sample: usize, check: &'static str, lhs: f64, rhs: f64, witness: Vec<Vec<f64>>) {
        self.violation_count += 1;
        if self.violations.len() < MAX_WITNESSES {
            self.violations.push(Violation { sample, check, lhs, rhs, witness });
        }
    }
}

const MAX_WITNESSES: usize = 32;
const CHUNK: usize = 1024;

pub(crate) fn le_tol(lhs: f64, rhs: f64) -> bool {
    lhs <= rhs + 1e-9 * rhs.abs().max(1.0)
}

/// Splits `samples` into fixed chunks with derived seeds so results do not
/// depend on scheduling.
pub(crate) fn sampled<F>(samples: usize, seed: u64, f: F) -> FalsificationReport
where
    F: Fn(usize, &mut ChaCha8Rng, &mut FalsificationReport) + Sync,
{
    let chunks = samples.div_ceil(CHUNK);
    let parts = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add((c as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)));
            let mut rep = FalsificationReport::default();
            for s in c * CHUNK..((c + 1) * CHUNK).min(samples) {
                rep.samples += 1;
                f(s, &mut rng, &mut rep);
            }
            rep
        })
        .collect();
    FalsificationReport::merge(parts)
}

pub(crate) fn sample_union<R: Rng + ?Sized>(boxes: &[HyperBox], rng: &mut R) -> Vec<f64> {
    if boxes.is_empty() {
        return Vec::new();
    }
    boxes[rng.gen_range(0..boxes.len())].sample(rng)
}

/// Random falsification of the δ-ISS inequalities, μ bound and triangle bound.
///
/// A quarter of the samples align `x − x̂` with the row of `M_p A_p M_p⁻¹`
/// attaining the induced norm and set `w = ŵ`, which is where an understated
/// contraction rate shows first.
pub fn check_cert_sampled(sub: &SwitchedSubsystem, cert: &LyapCert, samples: usize, seed: u64) -> FalsificationReport {
    sampled(samples, seed, |s, rng, rep| {
        let p = rng.gen_range(0..sub.mode_count());
        let q = rng.gen_range(0..sub.mode_count());
        let mc = &cert.modes[p];
        let (x, xh, w, wh) = if s % 4 == 0 {
            let (xa, xb) = aligned_pair(sub, mc, p, rng);
            let w = sample_union(&sub.internal_domain, rng);
            (xa, xb, w.clone(), w)
        } else {
            (
                sample_union(&sub.state_domain, rng),
                sample_union(&sub.state_domain, rng),
                sample_union(&sub.internal_domain, rng),
                sample_union(&sub.internal_domain, rng),
            )
        };
        let d = dist_inf(&x, &xh);
        let v = cert.v(p, &x, &xh);
        let witness = || vec![vec![p as f64], x.clone(), xh.clone(), w.clone(), wh.clone()];
        if !le_tol(mc.lower.eval(d), v) {
            rep.record(s, "lower bound", mc.lower.eval(d), v, witness());
        }
        if !le_tol(v, mc.upper.eval(d)) {
            rep.record(s, "upper bound", v, mc.upper.eval(d), witness());
        }
        let v_next = cert.v(p, &sub.image(p, &x, &w), &sub.image(p, &xh, &wh));
        let rhs = mc.kappa * v + mc.rho.as_ref().map_or(0.0, |r| r.eval(dist_inf(&w, &wh)));
        if !le_tol(v_next, rhs) {
            rep.record(s, "contraction", v_next, rhs, witness());
        }
        let vq = cert.v(q, &x, &xh);
        if !le_tol(v, cert.mu * vq) {
            rep.record(s, "mu bound", v, cert.mu * vq, witness());
        }
        let z = sample_union(&sub.state_domain, rng);
        let tri = cert.v(p, &x, &z) + mc.gamma.eval(dist_inf(&xh, &z));
        if !le_tol(v, tri) {
            rep.record(s, "triangle", v, tri, witness());
        }
    })
}

/// A pair in the state domain whose difference maximizes the weighted row sum.
fn aligned_pair<R: Rng + ?Sized>(sub: &SwitchedSubsystem, mc: &ModeCert, p: Mode, rng: &mut R) -> (Vec<f64>, Vec<f64>) {
    let a = &sub.mode(p).a;
    let wts = &mc.weights;
    let row = (0..sub.dim())
        .max_by(|&i, &j| {
            let r = |k: usize| a.row(k).iter().zip(wts).map(|(v, m)| (wts[k] * v / m).abs()).sum::<f64>();
            r(i).total_cmp(&r(j))
        })
        .unwrap_or(0);
    let dir: Vec<f64> = a.row(row).iter().zip(wts).map(|(v, m)| if *v < 0.0 { -1.0 / m } else { 1.0 / m }).collect();
    let b = &sub.state_domain[rng.gen_range(0..sub.state_domain.len())];
    let centre: Vec<f64> = b.lower.iter().zip(&b.upper).map(|(l, u)| 0.5 * (l + u)).collect();
    let scale = 0.25 * b.span() / dir.iter().map(|d| d.abs()).fold(0.0, f64::max) * rng.gen_range(0.1..1.0);
    let x = centre.iter().zip(&dir).map(|(c, d)| c + scale * d).collect();
    let xh = centre.iter().zip(&dir).map(|(c, d)| c - scale * d).collect();
    (x, xh)
}

/// An alternating simulation function `κ_p^(−l/ε)·V_p(x, x̂)` (or `V(x, x̂)` for
/// a common Lyapunov function) with derived parameters.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AltSimCert {
    pub cert: LyapCert,
    pub eta: f64,
    pub varpi: Option<f64>,
    pub epsilon_exp: f64,
    pub dwell_time: usize,
    pub splitters: [f64; 3],
    /// Output lower bound `α` in `α(‖H − Ĥ‖) ≤ S`.
    pub alpha: KFn,
    pub sigma: f64,
    pub rho_hat: Option<KFn>,
    pub eps_tilde: f64,
    /// `α⁻¹(ε̃)`.
    pub eps_hat: f64,
}

impl AltSimCert {
    pub fn evaluate(&self, p: Mode, l: usize, x: &[f64], xh: &[f64]) -> f64 {
        let v = self.cert.v(p, x, xh);
        if self.cert.common || l == 0 {
            v
        } else {
            self.cert.modes[p].kappa.powf(-(l as f64) / self.epsilon_exp) * v
        }
    }

    pub fn rho_hat_eval(&self, s: f64) -> f64 {
        self.rho_hat.as_ref().map_or(0.0, |r| r.eval(s))
    }

    /// Right-hand side `max{σ S, ρ̂(‖w − ŵ‖), ε̃}`.
    pub fn decay_bound(&self, s: f64, input_gap: f64) -> f64 {
        (self.sigma * s).max(self.rho_hat_eval(input_gap)).max(self.eps_tilde)
    }
}

/// Default splitters `(θ₁, θ₂, θ₃)`.
pub const DEFAULT_SPLITTERS: [f64; 3] = [0.7, 0.15, 0.15];

/// Builds the alternating simulation function for `sub` and its abstraction
/// at `eta`.
///
/// With the abstract successor nearest the image,
/// `V(x', x̂') ≤ κ V + ρ(‖w − ŵ‖) + γ(η)`, and splitting the sum with
/// `θ₁ + θ₂ + θ₃ = 1` turns it into the max-form. With multiple Lyapunov
/// functions, in-mode steps contract by `κ^((ε−1)/ε)`, switches are absorbed by
/// the dwell bound `μ·κ^((k_d−1)/ε) ≤ 1`, and additive terms grow by at most
/// `c = max_p κ_p^(−(k_d−1)/ε)`.
pub fn build_alt_sim(
    sub: &SwitchedSubsystem,
    cert: &LyapCert,
    eta: f64,
    varpi: Option<f64>,
    epsilon: f64,
    dwell_time: usize,
    splitters: [f64; 3],
) -> Result<AltSimCert, CertError> {
    if splitters.iter().any(|&t| !(t > 0.0 && t < 1.0)) || (splitters.iter().sum::<f64>() - 1.0).abs() > 1e-12 {
        return Err(CertError::BadSplitters(splitters));
    }
    let required = min_dwell_time(cert, epsilon)?;
    if !cert.common && dwell_time < required {
        return Err(CertError::DwellTooSmall { required, given: dwell_time });
    }
    let span = crate::linalg::span_of(&sub.state_domain);
    if !(eta > 0.0) || eta > span * (1.0 + 1e-12) {
        return Err(CertError::EtaTooLarge { eta, span });
    }
    let [t1, t2, t3] = splitters;
    let (contraction, amplification) = if cert.common {
        (cert.kappa_max(), 1.0)
    } else {
        let e = epsilon;
        let contraction = cert.modes.iter().map(|m| m.kappa.powf((e - 1.0) / e)).fold(0.0, f64::max);
        let amp = cert
            .modes
            .iter()
            .map(|m| m.kappa.powf(-((dwell_time - 1) as f64) / e))
            .fold(1.0, f64::max);
        (contraction, amp)
    };
    let sigma = contraction / t1;
    if sigma >= 1.0 {
        return Err(CertError::SigmaNotContractive(sigma));
    }
    let rhos: Vec<KFn> = cert.modes.iter().filter_map(|m| m.rho.clone()).collect();
    let rho_hat = if rhos.is_empty() { None } else { Some(KFn::max(rhos)?.scaled(amplification / t2)?) };
    let gamma_eta = cert.modes.iter().map(|m| m.gamma.eval(eta)).fold(0.0, f64::max);
    let eps_tilde = amplification * gamma_eta / t3;
    let lower = cert
        .modes
        .iter()
        .map(|m| m.lower.linear_slope())
        .collect::<Option<Vec<_>>>()
        .ok_or(CertError::NonLinear)?
        .into_iter()
        .fold(f64::INFINITY, f64::min);
    let alpha = KFn::compose(KFn::linear(lower)?, sub.output_lipschitz.inverse()?);
    let eps_hat = alpha.inverse()?.eval(eps_tilde);
    Ok(AltSimCert {
        cert: cert.clone(),
        eta,
        varpi,
        epsilon_exp: epsilon,
        dwell_time,
        splitters,
        alpha,
        sigma,
        rho_hat,
        eps_tilde,
        eps_hat,
    })
}

/// `ε̂ = α̃⁻¹(ε̃)`.
pub fn relation_radius(asc: &AltSimCert, alpha_tilde: &KFn) -> Result<f64, KfnError> {
    Ok(alpha_tilde.inverse()?.eval(asc.eps_tilde))
}

/// Minimum of `S((x', p', l'), (x̂', p', l'))` over the abstract successors of
/// `(x̂, p)` under internal input index `w`; `None` when the abstraction blocks.
pub(crate) fn best_abstract_match(
    fts: &FiniteTs,
    asc: &AltSimCert,
    x_next: &[f64],
    xh: usize,
    p: Mode,
    w: usize,
    p_next: Mode,
    l_next: usize,
) -> Option<f64> {
    let cells = fts.post(xh, p, w)?;
    let mut buf = vec![0.0; fts.state_grid.dim()];
    let mut best = f64::INFINITY;
    for b in &cells {
        for c in fts.state_grid.cells(b) {
            fts.state_grid.point_into(c, &mut buf);
            best = best.min(asc.evaluate(p_next, l_next, x_next, &buf));
        }
    }
    Some(best)
}

/// Sampled check of both alternating-simulation inequalities between `sub`
/// and `fts`, resolving the existential by minimizing over abstract successors.
///
/// One sample in ten is a matched pair (`x = x̂`, `w = ŵ`): the only place
/// where the quantization floor `ε̃` is essential.
pub fn verify_alt_sim_sampled(
    sub: &SwitchedSubsystem,
    fts: &FiniteTs,
    asc: &AltSimCert,
    samples: usize,
    seed: u64,
) -> FalsificationReport {
    let h = sub.output_matrix();
    sampled(samples, seed, |s, rng, rep| {
        let p = rng.gen_range(0..sub.mode_count());
        let l = rng.gen_range(0..sub.dwell_time);
        let xh_idx = rng.gen_range(0..fts.state_grid.len());
        let xh = fts.state_grid.point(xh_idx);
        let wh_idx = rng.gen_range(0..fts.inputs.len());
        let wh = fts.inputs.get(wh_idx).to_vec();
        let (x, w) = if s % 10 == 0 {
            (xh.clone(), wh.clone())
        } else {
            (sample_union(&sub.state_domain, rng), sample_union(&sub.internal_domain, rng))
        };
        let witness = || vec![vec![p as f64, l as f64], x.clone(), xh.clone(), w.clone(), wh.clone()];
        let s_now = asc.evaluate(p, l, &x, &xh);
        let out_gap = dist_inf(&h.mul_vec(&x), &h.mul_vec(&xh));
        if !le_tol(asc.alpha.eval(out_gap), s_now) {
            rep.record(s, "output bound", asc.alpha.eval(out_gap), s_now, witness());
        }
        let x_next = sub.image(p, &x, &w);
        if !sub.in_state_domain(&x_next) {
            rep.skipped += 1;
            return;
        }
        let bound = asc.decay_bound(s_now, dist_inf(&w, &wh));
        for (pn, ln) in next_labels(p, l, sub.dwell_time, sub.mode_count()) {
            match best_abstract_match(fts, asc, &x_next, xh_idx, p, wh_idx, pn, ln) {
                None => rep.record(s, "blocked abstraction", f64::INFINITY, bound, witness()),
                Some(best) if !le_tol(best, bound) => rep.record(s, "decay", best, bound, witness()),
                Some(_) => {}
            }
        }
    })
}

/// [`build_alt_sim`] followed by [`verify_alt_sim_sampled`]; refuses to
/// return a certificate whose sampled check fails.
#[allow(clippy::too_many_arguments)]
pub fn gated_alt_sim(
    sub: &SwitchedSubsystem,
    fts: &FiniteTs,
    cert: &LyapCert,
    epsilon: f64,
    splitters: [f64; 3],
    samples: usize,
    seed: u64,
) -> Result<(AltSimCert, FalsificationReport), CertError> {
    let varpi = match fts.input_source {
        crate::abstraction::InputSource::Quantized { varpi } => Some(varpi),
        _ => None,
    };
    let asc = build_alt_sim(sub, cert, fts.eta(), varpi, epsilon, sub.dwell_time, splitters)?;
    let rep = verify_alt_sim_sampled(sub, fts, &asc, samples, seed);
    if !rep.passed() {
        return Err(CertError::GateFailed(rep.violation_count));
    }
    Ok((asc, rep))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::Matrix;
    use crate::model::{AffineMode, SubsystemDef};

    fn scalar(a: f64) -> SwitchedSubsystem {
        SwitchedSubsystem::new(SubsystemDef {
            id: 0,
            modes: vec![AffineMode { a: Matrix::from_rows(&[&[a]]), b: vec![0.0], d: Matrix::zeros(1, 0) }],
            state_domain: vec![HyperBox::cube(1, -1.0, 1.0)],
            internal_domain: vec![],
            internal_blocks: vec![],
            external_output: Matrix::identity(1),
            output_blocks: vec![],
            dwell_time: 1,
            output_lipschitz: None,
        })
        .unwrap()
    }

    fn cert_with(mu: f64, kappa: f64) -> LyapCert {
        let mc = ModeCert {
            weights: vec![1.0],
            lower: KFn::identity(),
            upper: KFn::identity(),
            kappa,
            rho: None,
            gamma: KFn::identity(),
        };
        LyapCert { modes: vec![mc.clone(), mc], mu, common: mu == 1.0 }
    }

    #[test]
    fn expanding_mode_rejected() {
        assert!(matches!(
            certify_delta_iss_affine(&scalar(1.1), &[vec![1.0]]),
            Err(CertError::NotContractive { mode: 0, .. })
        ));
    }

    #[test]
    fn dwell_formula() {
        assert_eq!(min_dwell_time(&cert_with(1.0, 0.3), 2.0).unwrap(), 1);
        assert_eq!(min_dwell_time(&cert_with(1.0, 0.9), 7.5).unwrap(), 1);
        assert_eq!(min_dwell_time(&cert_with(2.0, 0.5), 2.0).unwrap(), 3);
        assert_eq!(min_dwell_time(&cert_with(2.0, 0.5), 1.0), Err(CertError::BadEpsilon(1.0)));
    }

    #[test]
    fn relation_radius_examples() {
        let sub = scalar(0.5);
        let cert = certify_delta_iss_affine(&sub, &[vec![1.0]]).unwrap();
        let mut asc = build_alt_sim(&sub, &cert, 0.5, None, 2.0, 1, DEFAULT_SPLITTERS).unwrap();
        asc.eps_tilde = 0.5;
        assert_eq!(relation_radius(&asc, &KFn::identity()).unwrap(), 0.5);
        asc.eps_tilde = 1.0;
        assert_eq!(relation_radius(&asc, &KFn::linear(2.0).unwrap()).unwrap(), 0.5);
        asc.eps_tilde = 0.0;
        assert_eq!(relation_radius(&asc, &KFn::linear(2.0).unwrap()).unwrap(), 0.0);
        let max = KFn::Max { terms: vec![KFn::identity(), KFn::linear(2.0).unwrap()] };
        assert!(relation_radius(&asc, &max).is_err());
    }

    #[test]
    fn matched_pair_value_is_zero() {
        let sub = scalar(0.5);
        let cert = certify_delta_iss_affine(&sub, &[vec![1.0]]).unwrap();
        let asc = build_alt_sim(&sub, &cert, 0.5, None, 2.0, 1, DEFAULT_SPLITTERS).unwrap();
        assert_eq!(asc.evaluate(0, 0, &[0.5], &[0.5]), 0.0);
    }

    #[test]
    fn splitters_validated() {
        let sub = scalar(0.5);
        let cert = certify_delta_iss_affine(&sub, &[vec![1.0]]).unwrap();
        assert!(matches!(
            build_alt_sim(&sub, &cert, 0.5, None, 2.0, 1, [0.5, 0.5, 0.5]),
            Err(CertError::BadSplitters(_))
        ));
        assert!(matches!(
            build_alt_sim(&sub, &cert, 0.5, None, 2.0, 1, [0.4, 0.3, 0.3]),
            Err(CertError::SigmaNotContractive(_))
        ));
    }

    mod props {
        use super::*;
        use crate::model::InputBlock;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn unit_weight_certificate_bounds_the_increment(
                a in prop::array::uniform4(-0.45f64..0.45),
                d in prop::array::uniform2(-1.0f64..1.0),
                x in prop::array::uniform4(-1.0f64..1.0),
                w in prop::array::uniform2(-1.0f64..1.0),
            ) {
                let sub = SwitchedSubsystem::new(SubsystemDef {
                    id: 0,
                    modes: vec![AffineMode {
                        a: Matrix::from_rows(&[&a[..2], &a[2..]]),
                        b: vec![0.3, -0.2],
                        d: Matrix::from_rows(&[&[d[0]], &[d[1]]]),
                    }],
                    state_domain: vec![HyperBox::cube(2, -10.0, 10.0)],
                    internal_domain: vec![HyperBox::cube(1, -1.0, 1.0)],
                    internal_blocks: vec![InputBlock { source: 1, dim: 1 }],
                    external_output: Matrix::identity(2),
                    output_blocks: vec![],
                    dwell_time: 1,
                    output_lipschitz: None,
                })
                .unwrap();
                let cert = certify_delta_iss_affine(&sub, &[vec![1.0, 1.0]]).unwrap();
                let m = &cert.modes[0];
                let rho = m.rho.as_ref().and_then(KFn::linear_slope).unwrap_or(0.0);
                let (x1, x2) = (&x[..2], &x[2..]);
                let lhs = cert.v(0, &sub.image(0, x1, &w[..1]), &sub.image(0, x2, &w[1..]));
                let rhs = m.kappa * cert.v(0, x1, x2) + rho * (w[0] - w[1]).abs();
                prop_assert!(le_tol(lhs, rhs), "{} > {}", lhs, rhs);
            }
        }
    }
}

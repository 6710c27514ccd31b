//! The dwell-time transition system `T(Σ)` over triples `(x, p, l)`.

use serde::{Deserialize, Serialize};

use super::AbstractionError;
use crate::model::{Mode, SwitchedSubsystem};

/// Abstract state `(x̂, p, l)` with `x̂` a grid index.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct AugState {
    pub x: usize,
    pub p: Mode,
    pub l: usize,
}

/// Concrete state `(x, p, l)` of `T(Σ)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConcreteState {
    pub x: Vec<f64>,
    pub p: Mode,
    pub l: usize,
}

impl ConcreteState {
    /// Fresh initial state `(x0, p0, 0)`.
    pub fn initial(x: Vec<f64>, p: Mode) -> Self {
        ConcreteState { x, p, l: 0 }
    }
}

/// `(p', l')` pairs admitted after a step from `(p, l)`.
///
/// Below the dwell bound the mode is frozen and the counter advances; at
/// `l = k_d − 1` the mode may stay (counter saturates) or switch (counter
/// resets).
pub fn next_labels(p: Mode, l: usize, dwell: usize, modes: usize) -> impl Iterator<Item = (Mode, usize)> {
    let last = dwell - 1;
    let frozen = l < last;
    let first = if frozen { (p, l + 1) } else { (p, last) };
    std::iter::once(first).chain((0..modes).filter(move |&q| !frozen && q != p).map(|q| (q, 0)))
}

/// Counter value after moving from `(p, l)` to next mode `next`, if admissible.
pub fn label_after(p: Mode, l: usize, dwell: usize, next: Mode) -> Option<usize> {
    let last = dwell - 1;
    if l < last {
        (next == p).then_some(l + 1)
    } else if next == p {
        Some(last)
    } else {
        Some(0)
    }
}

/// Successors of `T(Σ)` from `state` under external input `u` and internal input `w`.
///
/// Empty when `u ≠ p` or when the image leaves the state domain.
pub fn concrete_successors(sub: &SwitchedSubsystem, state: &ConcreteState, u: Mode, w: &[f64]) -> Vec<ConcreteState> {
    if u != state.p {
        return Vec::new();
    }
    let x = sub.image(state.p, &state.x, w);
    if !sub.in_state_domain(&x) {
        return Vec::new();
    }
    next_labels(state.p, state.l, sub.dwell_time, sub.mode_count())
        .map(|(p, l)| ConcreteState { x: x.clone(), p, l })
        .collect()
}

/// Step index of the first switch that violates the dwell time, if any.
///
/// Time 0 counts as a switching instant, matching the fresh counter `l0 = 0`.
pub fn first_dwell_violation(switching: &[Mode], dwell: usize) -> Option<usize> {
    let mut last_switch = 0usize;
    for k in 1..switching.len() {
        if switching[k] != switching[k - 1] {
            if k - last_switch < dwell {
                return Some(k);
            }
            last_switch = k;
        }
    }
    None
}

/// Compares the output run of `Σ` with the output run of `T(Σ)` driven by
/// `u = p̄` from `(x0, p0, 0)`; `true` iff they agree bit for bit.
pub fn run_equivalence_check(
    sub: &SwitchedSubsystem,
    x0: &[f64],
    switching: &[Mode],
    inputs: &[Vec<f64>],
) -> Result<bool, AbstractionError> {
    if switching.len() != inputs.len() {
        return Err(AbstractionError::BadInputPoints);
    }
    if let Some(step) = first_dwell_violation(switching, sub.dwell_time) {
        return Err(AbstractionError::DwellViolation { step });
    }
    if switching.is_empty() {
        return Ok(true);
    }
    let same = |a: &[f64], b: &[f64]| a.len() == b.len() && a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits());

    let mut x = x0.to_vec();
    let mut z = ConcreteState::initial(x0.to_vec(), switching[0]);
    if !same(&sub.output(&x), &sub.output(&z.x)) {
        return Ok(false);
    }
    for k in 0..switching.len() {
        x = sub.step(switching[k], &x, &inputs[k])?;
        let next_mode = switching.get(k + 1).copied().unwrap_or(switching[k]);
        let succ = concrete_successors(sub, &z, switching[k], &inputs[k]);
        match succ.into_iter().find(|s| s.p == next_mode) {
            Some(s) => z = s,
            None => return Ok(false),
        }
        if !same(&sub.output(&x), &sub.output(&z.x)) {
            return Ok(false);
        }
    }
    Ok(true)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn below_dwell_bound_no_switch() {
        let v: Vec<_> = next_labels(0, 0, 2, 3).collect();
        assert_eq!(v, vec![(0, 1)]);
    }

    #[test]
    fn at_dwell_bound_stay_or_switch() {
        let mut v: Vec<_> = next_labels(1, 1, 2, 3).collect();
        v.sort();
        assert_eq!(v, vec![(0, 0), (1, 1), (2, 0)]);
    }

    #[test]
    fn dwell_one_always_free() {
        let v: Vec<_> = next_labels(0, 0, 1, 2).collect();
        assert_eq!(v, vec![(0, 0), (1, 0)]);
        assert_eq!(label_after(0, 0, 1, 1), Some(0));
        assert_eq!(label_after(0, 0, 3, 1), None);
        assert_eq!(label_after(0, 2, 3, 0), Some(2));
    }

    #[test]
    fn early_switch_detected() {
        assert_eq!(first_dwell_violation(&[0, 1, 1, 1], 3), Some(1));
        assert_eq!(first_dwell_violation(&[0, 0, 0, 1, 1, 1, 0], 3), None);
        assert_eq!(first_dwell_violation(&[0, 0, 0, 1, 1, 0], 3), Some(5));
    }
}

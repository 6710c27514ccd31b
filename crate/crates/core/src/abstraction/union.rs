//! Union of successor cells over a set of internal inputs.
//!
//! Safety synthesis quantifies universally over the internal inputs allowed
//! by an assumption, so it needs `⋃_ŵ post(x̂, p, ŵ)` rather than each set
//! separately. When the inputs only move the image along one axis and
//! consecutive images are at most `2η` apart, the η-balls overlap and the
//! union is exactly the index box spanned by the two extreme balls.

use super::finite::{FiniteTs, Post};
use super::grid::IndexBox;
use crate::model::Mode;

const GAP_MARGIN: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub enum SweepPlan {
    /// Every selected input yields the same image.
    Single(usize),
    /// Images move along `axis` only; `low`/`high` give the extreme images.
    Axis { axis: usize, low: usize, high: usize },
    /// Evaluate every selected input.
    Enumerate,
}

#[derive(Debug, Clone)]
pub struct InputUnion<'a> {
    ts: &'a FiniteTs,
    selected: Vec<usize>,
    plans: Vec<SweepPlan>,
}

impl<'a> InputUnion<'a> {
    /// Exact union over `selected` input indices.
    pub fn new(ts: &'a FiniteTs, selected: Vec<usize>) -> Self {
        assert!(!selected.is_empty(), "at least one internal input must be selected");
        let plans = (0..ts.modes).map(|p| plan_for(ts, &selected, p)).collect();
        InputUnion { ts, selected, plans }
    }

    /// Union over the lexicographically smallest and largest selected inputs
    /// only. Exact for dynamics monotone in `w` when the target set is convex
    /// along the input direction; an optimization, not a general identity.
    pub fn extremes_only(ts: &'a FiniteTs, selected: &[usize]) -> Self {
        let cmp = |a: &usize, b: &usize| {
            ts.inputs.get(*a).partial_cmp(ts.inputs.get(*b)).unwrap_or(std::cmp::Ordering::Equal)
        };
        let lo = *selected.iter().min_by(|a, b| cmp(a, b)).expect("non-empty selection");
        let hi = *selected.iter().max_by(|a, b| cmp(a, b)).expect("non-empty selection");
        let sel = if lo == hi { vec![lo] } else { vec![lo, hi] };
        let plans = vec![SweepPlan::Enumerate; ts.modes];
        InputUnion { ts, selected: sel, plans }
    }

    pub fn plan(&self, p: Mode) -> &SweepPlan {
        &self.plans[p]
    }

    pub fn selected(&self) -> &[usize] {
        &self.selected
    }

    /// `⋃_ŵ post(x̂, p, ŵ)`; `None` as soon as one input reaches the sink.
    pub fn post(&self, x: usize, p: Mode) -> Post {
        match &self.plans[p] {
            SweepPlan::Single(w) => self.ts.post(x, p, *w),
            SweepPlan::Axis { axis, low, high } => {
                let a = self.ts.post(x, p, *low)?;
                let b = self.ts.post(x, p, *high)?;
                let (a, b) = (&a[0], &b[0]);
                let mut merged = a.clone();
                merged.lo[*axis] = a.lo[*axis].min(b.lo[*axis]);
                merged.hi[*axis] = a.hi[*axis].max(b.hi[*axis]);
                Some(vec![merged])
            }
            SweepPlan::Enumerate => {
                let mut boxes: Vec<IndexBox> = Vec::new();
                for &w in &self.selected {
                    boxes.extend(self.ts.post(x, p, w)?);
                }
                boxes.sort_by(|a, b| (a.grid_box, &a.lo, &a.hi).cmp(&(b.grid_box, &b.lo, &b.hi)));
                boxes.dedup();
                Some(boxes)
            }
        }
    }

    /// Sorted, deduplicated grid indices of the union.
    pub fn post_indices(&self, x: usize, p: Mode) -> Option<Vec<usize>> {
        let boxes = self.post(x, p)?;
        let mut v: Vec<usize> = boxes.iter().flat_map(|b| self.ts.state_grid.cells(b)).collect();
        v.sort_unstable();
        v.dedup();
        Some(v)
    }
}

fn plan_for(ts: &FiniteTs, selected: &[usize], p: Mode) -> SweepPlan {
    let Some(sub) = ts.subsystem() else {
        return SweepPlan::Enumerate;
    };
    if selected.len() == 1 || ts.inputs.dim() == 0 {
        return SweepPlan::Single(selected[0]);
    }
    if ts.state_grid.boxes().len() != 1 {
        return SweepPlan::Enumerate;
    }
    let d = &sub.mode(p).d;
    let n = sub.dim();
    // Offsets D·ŵ, accumulated exactly as in `SwitchedSubsystem::image_into`.
    let offset = |w: usize, k: usize| {
        let mut acc = 0.0;
        for (dk, wi) in d.row(k).iter().zip(ts.inputs.get(w)) {
            acc += dk * wi;
        }
        acc
    };
    let varying: Vec<usize> = (0..n)
        .filter(|&k| {
            let first = offset(selected[0], k);
            selected.iter().any(|&w| offset(w, k) != first)
        })
        .collect();
    match varying.as_slice() {
        [] => SweepPlan::Single(selected[0]),
        [axis] => {
            let mut vals: Vec<(f64, usize)> = selected.iter().map(|&w| (offset(w, *axis), w)).collect();
            vals.sort_by(|a, b| a.0.total_cmp(&b.0));
            let limit = 2.0 * ts.eta() * (1.0 - GAP_MARGIN);
            if vals.windows(2).all(|v| v[1].0 - v[0].0 <= limit) {
                SweepPlan::Axis { axis: *axis, low: vals[0].1, high: vals[vals.len() - 1].1 }
            } else {
                SweepPlan::Enumerate
            }
        }
        _ => SweepPlan::Enumerate,
    }
}

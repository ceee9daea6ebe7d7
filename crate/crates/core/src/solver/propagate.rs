//! Activity-based bound propagation, run at every branch-and-bound node.
//!
//! Starting from the rows touched by freshly fixed variables, each row's
//! minimum and maximum activity bounds every one of its variables; binaries
//! are rounded inward. Rows whose variables moved are revisited until
//! nothing changes or the work budget runs out.

use std::collections::VecDeque;

use crate::milp::{MilpModel, Sense};

const FEAS_TOL: f64 = 1e-7;
/// Relative improvement a continuous bound needs before it counts.
const MIN_REL_TIGHTEN: f64 = 1e-3;
/// Row visits allowed per call, as a multiple of the row count.
const BUDGET_FACTOR: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Infeasible;

#[derive(Debug, Clone)]
pub struct Propagator {
    row_start: Vec<usize>,
    row_col: Vec<usize>,
    row_val: Vec<f64>,
    row_lo: Vec<f64>,
    row_hi: Vec<f64>,
    col_start: Vec<usize>,
    col_row: Vec<usize>,
    binary: Vec<bool>,
}

impl Propagator {
    pub fn new(model: &MilpModel) -> Self {
        let n = model.num_vars();
        let mut row_start = vec![0];
        let (mut row_col, mut row_val, mut row_lo, mut row_hi) = (vec![], vec![], vec![], vec![]);
        let mut col_count = vec![0usize; n];
        for c in model.constraints() {
            for &(a, v) in c.expr.terms() {
                row_col.push(v.0);
                row_val.push(a);
                col_count[v.0] += 1;
            }
            row_start.push(row_col.len());
            let (lo, hi) = match c.sense {
                Sense::Le => (f64::NEG_INFINITY, c.rhs),
                Sense::Ge => (c.rhs, f64::INFINITY),
                Sense::Eq => (c.rhs, c.rhs),
            };
            row_lo.push(lo);
            row_hi.push(hi);
        }
        let mut col_start = vec![0; n + 1];
        for j in 0..n {
            col_start[j + 1] = col_start[j] + col_count[j];
        }
        let mut fill = col_start.clone();
        let mut col_row = vec![0; row_col.len()];
        for r in 0..row_lo.len() {
            for &j in &row_col[row_start[r]..row_start[r + 1]] {
                col_row[fill[j]] = r;
                fill[j] += 1;
            }
        }
        Self {
            row_start,
            row_col,
            row_val,
            row_lo,
            row_hi,
            col_start,
            col_row,
            binary: model.vars().iter().map(|v| v.is_binary()).collect(),
        }
    }

    fn num_rows(&self) -> usize {
        self.row_lo.len()
    }

    /// Tightens `lb`/`ub` in place, starting from the rows of `seeds`.
    pub fn propagate(&self, lb: &mut [f64], ub: &mut [f64], seeds: &[usize]) -> Result<(), Infeasible> {
        let m = self.num_rows();
        let mut queued = vec![false; m];
        let mut queue = VecDeque::new();
        for &j in seeds {
            for &r in &self.col_row[self.col_start[j]..self.col_start[j + 1]] {
                if !queued[r] {
                    queued[r] = true;
                    queue.push_back(r);
                }
            }
        }
        let mut budget = BUDGET_FACTOR * m.max(1);
        while let Some(r) = queue.pop_front() {
            queued[r] = false;
            if budget == 0 {
                break;
            }
            budget -= 1;
            let span = self.row_start[r]..self.row_start[r + 1];
            let cols = &self.row_col[span.clone()];
            let vals = &self.row_val[span];
            let (lo, hi) = (self.row_lo[r], self.row_hi[r]);
            let (mut amin, mut amax) = (0.0, 0.0);
            let (mut inf_min, mut inf_max) = (0usize, 0usize);
            for (&j, &a) in cols.iter().zip(vals) {
                let (cmin, cmax) = if a >= 0.0 { (a * lb[j], a * ub[j]) } else { (a * ub[j], a * lb[j]) };
                if cmin.is_finite() {
                    amin += cmin;
                } else {
                    inf_min += 1;
                }
                if cmax.is_finite() {
                    amax += cmax;
                } else {
                    inf_max += 1;
                }
            }
            let tol = FEAS_TOL * (1.0 + lo.abs().min(hi.abs()).min(1e6));
            if (inf_min == 0 && amin > hi + tol) || (inf_max == 0 && amax < lo - tol) {
                return Err(Infeasible);
            }
            for (&j, &a) in cols.iter().zip(vals) {
                if ub[j] - lb[j] <= 1e-12 {
                    continue;
                }
                let (cmin, cmax) = if a >= 0.0 { (a * lb[j], a * ub[j]) } else { (a * ub[j], a * lb[j]) };
                let rmin = residual(amin, cmin, inf_min);
                let rmax = residual(amax, cmax, inf_max);
                let mut moved = false;
                // a x <= hi - rmin and a x >= lo - rmax
                if hi.is_finite() && rmin.is_finite() {
                    let b = (hi - rmin) / a;
                    moved |= self.tighten(lb, ub, j, b, a > 0.0)?;
                }
                if lo.is_finite() && rmax.is_finite() {
                    let b = (lo - rmax) / a;
                    moved |= self.tighten(lb, ub, j, b, a < 0.0)?;
                }
                if moved {
                    for &r2 in &self.col_row[self.col_start[j]..self.col_start[j + 1]] {
                        if r2 != r && !queued[r2] {
                            queued[r2] = true;
                            queue.push_back(r2);
                        }
                    }
                }
            }
        }
        Ok(())
    }

    fn tighten(&self, lb: &mut [f64], ub: &mut [f64], j: usize, v: f64, upper: bool) -> Result<bool, Infeasible> {
        let (l, u) = (lb[j], ub[j]);
        let moved = if self.binary[j] {
            if upper {
                let v = (v + 1e-6).floor();
                if v < u {
                    ub[j] = v;
                    true
                } else {
                    false
                }
            } else {
                let v = (v - 1e-6).ceil();
                if v > l {
                    lb[j] = v;
                    true
                } else {
                    false
                }
            }
        } else {
            let need = MIN_REL_TIGHTEN * (u - l).clamp(1e-6, 1.0);
            if upper && v < u - need {
                ub[j] = v.max(l);
                true
            } else if !upper && v > l + need {
                lb[j] = v.min(u);
                true
            } else {
                false
            }
        };
        if upper && v < l - FEAS_TOL * (1.0 + l.abs()) {
            return Err(Infeasible);
        }
        if !upper && v > u + FEAS_TOL * (1.0 + u.abs()) {
            return Err(Infeasible);
        }
        if lb[j] > ub[j] {
            return Err(Infeasible);
        }
        Ok(moved)
    }
}

fn residual(total: f64, own: f64, inf_count: usize) -> f64 {
    if own.is_finite() {
        if inf_count > 0 {
            f64::NAN
        } else {
            total - own
        }
    } else if inf_count == 1 {
        total
    } else {
        f64::NAN
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::milp::{LinExpr, VarTag};

    #[test]
    fn chain_fixes_forward() {
        let mut m = MilpModel::new();
        let b: Vec<_> = (0..4).map(|t| m.add_binary(VarTag::new("b", &[t]))).collect();
        for t in 0..3 {
            m.add_constraint(LinExpr::from_terms([(1.0, b[t]), (-1.0, b[t + 1])], 0.0), Sense::Le, 0.0, "chain");
        }
        let p = Propagator::new(&m);
        let (mut lb, mut ub) = (vec![0.0; 4], vec![1.0; 4]);
        lb[1] = 1.0;
        p.propagate(&mut lb, &mut ub, &[1]).unwrap();
        assert_eq!(lb, vec![0.0, 1.0, 1.0, 1.0]);
        assert_eq!(ub, vec![1.0; 4]);
    }

    #[test]
    fn big_m_indicator_fixes_binary() {
        // x + 0.5 z <= 0.8 with x >= 0.5 leaves no room for z = 1
        let mut m = MilpModel::new();
        let x = m.add_continuous(0.5, 1.0, VarTag::new("x", &[]));
        let z = m.add_binary(VarTag::new("z", &[]));
        m.add_constraint(LinExpr::from_terms([(1.0, x), (0.5, z)], 0.0), Sense::Le, 0.8, "m");
        let p = Propagator::new(&m);
        let (mut lb, mut ub) = (vec![0.5, 0.0], vec![1.0, 1.0]);
        p.propagate(&mut lb, &mut ub, &[0]).unwrap();
        assert_eq!(ub[1], 0.0);
        assert!((ub[0] - 0.8).abs() < 1e-12);
    }

    #[test]
    fn conflict_is_reported() {
        let mut m = MilpModel::new();
        let a = m.add_binary(VarTag::new("a", &[]));
        let b = m.add_binary(VarTag::new("b", &[]));
        m.add_constraint(LinExpr::from_terms([(1.0, a), (1.0, b)], 0.0), Sense::Le, 1.0, "x");
        let p = Propagator::new(&m);
        let (mut lb, mut ub) = (vec![1.0, 1.0], vec![1.0, 1.0]);
        assert_eq!(p.propagate(&mut lb, &mut ub, &[0, 1]), Err(Infeasible));
    }
}

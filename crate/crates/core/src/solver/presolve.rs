//! Model reductions applied before branch-and-bound.
//!
//! Runs to a fixed point: redundant and singleton rows are dropped (a
//! singleton row becomes a bound, so `x = c` fixes `x`), variable bounds are
//! tightened from row activities with integer rounding for binaries, and
//! fixed variables are substituted out. The reduced model keeps only free
//! variables and live rows; [`Presolved::restore`] maps a reduced solution
//! back to the original variable table.

use crate::milp::{LinExpr, MilpModel, Sense, VarId, VarKind, VarSpec};

const FEAS_TOL: f64 = 1e-9;
const INT_TOL: f64 = 1e-6;
/// Minimum continuous bound improvement worth recording.
const MIN_TIGHTEN: f64 = 1e-6;
const MAX_PASSES: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum VarMap {
    Fixed(f64),
    Kept(VarId),
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct PresolveStats {
    pub passes: usize,
    pub removed_rows: usize,
    pub fixed_vars: usize,
    pub tightened_bounds: usize,
    pub binaries_before: usize,
    pub binaries_after: usize,
}

#[derive(Debug, Clone)]
pub struct Presolved {
    pub model: MilpModel,
    pub mapping: Vec<VarMap>,
    pub stats: PresolveStats,
}

impl Presolved {
    /// Expands reduced-model values to the original variable table.
    pub fn restore(&self, reduced: &[f64]) -> Vec<f64> {
        self.mapping
            .iter()
            .map(|m| match *m {
                VarMap::Fixed(v) => v,
                VarMap::Kept(id) => reduced[id.0],
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PresolveInfeasible;

struct Work {
    lb: Vec<f64>,
    ub: Vec<f64>,
    binary: Vec<bool>,
    stats: PresolveStats,
}

impl Work {
    fn fixed(&self, j: usize) -> bool {
        self.ub[j] - self.lb[j] <= FEAS_TOL
    }

    /// Tightens `x_j <= v` (upper) or `x_j >= v` (lower). Returns whether the
    /// bound moved.
    fn tighten(&mut self, j: usize, v: f64, upper: bool) -> Result<bool, PresolveInfeasible> {
        let v = if self.binary[j] {
            if upper {
                (v + INT_TOL).floor()
            } else {
                (v - INT_TOL).ceil()
            }
        } else {
            v
        };
        let (lb, ub) = (self.lb[j], self.ub[j]);
        let scale = 1.0 + v.abs();
        let moved = if upper {
            if v < ub - MIN_TIGHTEN * scale || (self.binary[j] && v < ub) {
                self.ub[j] = v;
                true
            } else {
                false
            }
        } else if v > lb + MIN_TIGHTEN * scale || (self.binary[j] && v > lb) {
            self.lb[j] = v;
            true
        } else {
            false
        };
        if self.lb[j] > self.ub[j] + FEAS_TOL * (1.0 + self.ub[j].abs()) {
            return Err(PresolveInfeasible);
        }
        if self.lb[j] > self.ub[j] {
            // within tolerance: snap
            let mid = 0.5 * (self.lb[j] + self.ub[j]);
            self.lb[j] = mid;
            self.ub[j] = mid;
        }
        if moved {
            self.stats.tightened_bounds += 1;
        }
        Ok(moved)
    }
}

fn row_range(sense: Sense, rhs: f64) -> (f64, f64) {
    match sense {
        Sense::Le => (f64::NEG_INFINITY, rhs),
        Sense::Ge => (rhs, f64::INFINITY),
        Sense::Eq => (rhs, rhs),
    }
}

pub fn presolve(model: &MilpModel) -> Result<Presolved, PresolveInfeasible> {
    let n = model.num_vars();
    let mut w = Work {
        lb: model.vars().iter().map(|v| v.lb).collect(),
        ub: model.vars().iter().map(|v| v.ub).collect(),
        binary: model.vars().iter().map(VarSpec::is_binary).collect(),
        stats: PresolveStats {
            binaries_before: model.binary_count(),
            ..Default::default()
        },
    };
    for j in 0..n {
        if w.lb[j] > w.ub[j] {
            return Err(PresolveInfeasible);
        }
    }
    let cons = model.constraints();
    let mut active = vec![true; cons.len()];

    for pass in 0..MAX_PASSES {
        w.stats.passes = pass + 1;
        let mut changed = false;
        for (k, c) in cons.iter().enumerate() {
            if !active[k] {
                continue;
            }
            let (lo, hi) = row_range(c.sense, c.rhs);
            let (mut amin, mut amax) = (0.0, 0.0);
            let (mut inf_min, mut inf_max) = (0usize, 0usize);
            let mut free_terms = 0usize;
            let mut last_free = 0usize;
            for (t, &(a, v)) in c.expr.terms().iter().enumerate() {
                let (l, u) = (w.lb[v.0], w.ub[v.0]);
                let (cmin, cmax) = if a >= 0.0 { (a * l, a * u) } else { (a * u, a * l) };
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
                if !w.fixed(v.0) {
                    free_terms += 1;
                    last_free = t;
                }
            }
            let amin_f = if inf_min > 0 { f64::NEG_INFINITY } else { amin };
            let amax_f = if inf_max > 0 { f64::INFINITY } else { amax };
            let tol = FEAS_TOL * (1.0 + lo.abs().min(hi.abs()).min(1e6));
            if amin_f > hi + tol.max(1e-7) || amax_f < lo - tol.max(1e-7) {
                return Err(PresolveInfeasible);
            }
            if amin_f >= lo - tol && amax_f <= hi + tol {
                active[k] = false;
                w.stats.removed_rows += 1;
                changed = true;
                continue;
            }
            if free_terms == 0 {
                active[k] = false;
                w.stats.removed_rows += 1;
                continue;
            }
            if free_terms == 1 {
                let (a, v) = c.expr.terms()[last_free];
                let rest: f64 = c
                    .expr
                    .terms()
                    .iter()
                    .enumerate()
                    .filter(|&(t, _)| t != last_free)
                    .map(|(_, &(b, u))| b * w.lb[u.0])
                    .sum();
                // a x in [lo - rest, hi - rest]
                let (elo, ehi) = (lo - rest, hi - rest);
                if a > 0.0 {
                    if ehi.is_finite() {
                        w.tighten(v.0, ehi / a, true)?;
                    }
                    if elo.is_finite() {
                        w.tighten(v.0, elo / a, false)?;
                    }
                } else {
                    if ehi.is_finite() {
                        w.tighten(v.0, ehi / a, false)?;
                    }
                    if elo.is_finite() {
                        w.tighten(v.0, elo / a, true)?;
                    }
                }
                active[k] = false;
                w.stats.removed_rows += 1;
                changed = true;
                continue;
            }
            // activity-based tightening
            for &(a, v) in c.expr.terms() {
                let j = v.0;
                if w.fixed(j) {
                    continue;
                }
                let (l, u) = (w.lb[j], w.ub[j]);
                let (cmin, cmax) = if a >= 0.0 { (a * l, a * u) } else { (a * u, a * l) };
                // residual min/max activity excluding this term
                let rmin = if cmin.is_finite() {
                    if inf_min > 0 {
                        f64::NEG_INFINITY
                    } else {
                        amin - cmin
                    }
                } else if inf_min == 1 {
                    amin
                } else {
                    f64::NEG_INFINITY
                };
                let rmax = if cmax.is_finite() {
                    if inf_max > 0 {
                        f64::INFINITY
                    } else {
                        amax - cmax
                    }
                } else if inf_max == 1 {
                    amax
                } else {
                    f64::INFINITY
                };
                // a x <= hi - rmin ; a x >= lo - rmax
                if hi.is_finite() && rmin.is_finite() {
                    let b = (hi - rmin) / a;
                    if a > 0.0 {
                        changed |= w.tighten(j, b, true)?;
                    } else {
                        changed |= w.tighten(j, b, false)?;
                    }
                }
                if lo.is_finite() && rmax.is_finite() {
                    let b = (lo - rmax) / a;
                    if a > 0.0 {
                        changed |= w.tighten(j, b, false)?;
                    } else {
                        changed |= w.tighten(j, b, true)?;
                    }
                }
            }
        }
        if !changed {
            break;
        }
    }

    // build the reduced model
    let mut reduced = MilpModel::new();
    let mut mapping = Vec::with_capacity(n);
    for (j, spec) in model.vars().iter().enumerate() {
        if w.fixed(j) {
            let v = if spec.kind == VarKind::Binary {
                w.lb[j].round()
            } else {
                0.5 * (w.lb[j] + w.ub[j])
            };
            mapping.push(VarMap::Fixed(v));
            w.stats.fixed_vars += 1;
        } else {
            let id = reduced.add_var(spec.kind, w.lb[j], w.ub[j], spec.tag.clone());
            mapping.push(VarMap::Kept(id));
        }
    }
    for (k, c) in cons.iter().enumerate() {
        if !active[k] {
            continue;
        }
        let mut shift = 0.0;
        let terms: Vec<(f64, VarId)> = c
            .expr
            .terms()
            .iter()
            .filter_map(|&(a, v)| match mapping[v.0] {
                VarMap::Fixed(x) => {
                    shift += a * x;
                    None
                }
                VarMap::Kept(id) => Some((a, id)),
            })
            .collect();
        reduced.add_constraint(LinExpr::from_terms(terms, 0.0), c.sense, c.rhs - shift, c.tag);
    }
    let mut offset = model.objective().constant;
    let obj_terms: Vec<(f64, VarId)> = model
        .objective()
        .terms()
        .iter()
        .filter_map(|&(a, v)| match mapping[v.0] {
            VarMap::Fixed(x) => {
                offset += a * x;
                None
            }
            VarMap::Kept(id) => Some((a, id)),
        })
        .collect();
    reduced.set_objective(LinExpr::from_terms(obj_terms, offset));
    w.stats.binaries_after = reduced.binary_count();
    Ok(Presolved {
        model: reduced,
        mapping,
        stats: w.stats,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::milp::VarTag;

    #[test]
    fn equality_fixes_binary() {
        let mut m = MilpModel::new();
        let psi = m.add_binary(VarTag::new("psi", &[0]));
        let other = m.add_binary(VarTag::new("b", &[0]));
        m.add_constraint(LinExpr::var(psi), Sense::Eq, 1.0, "completion_chain");
        let e = LinExpr::from_terms([(1.0, psi), (1.0, other)], 0.0);
        m.add_constraint(e, Sense::Le, 1.5, "x");
        let p = presolve(&m).unwrap();
        assert_eq!(p.mapping[0], VarMap::Fixed(1.0));
        assert_eq!(p.stats.binaries_after, 0, "b is forced to 0 by psi = 1");
    }

    #[test]
    fn monotone_chain_propagates() {
        let mut m = MilpModel::new();
        let psi: Vec<VarId> = (0..5).map(|t| m.add_binary(VarTag::new("psi", &[t]))).collect();
        for t in 0..4 {
            let e = LinExpr::from_terms([(1.0, psi[t]), (-1.0, psi[t + 1])], 0.0);
            m.add_constraint(e, Sense::Le, 0.0, "completion_chain");
        }
        m.fix(psi[0], 1.0);
        let p = presolve(&m).unwrap();
        assert!(p.mapping.iter().all(|&v| v == VarMap::Fixed(1.0)));
        assert_eq!(p.stats.binaries_after, 0);
    }

    #[test]
    fn nothing_to_do_is_identity() {
        let mut m = MilpModel::new();
        let a = m.add_binary(VarTag::new("a", &[]));
        let b = m.add_binary(VarTag::new("b", &[]));
        m.add_constraint(LinExpr::from_terms([(1.0, a), (1.0, b)], 0.0), Sense::Le, 1.0, "x");
        m.set_objective(LinExpr::from_terms([(-1.0, a), (-1.0, b)], 0.0));
        let p = presolve(&m).unwrap();
        assert_eq!(p.stats.binaries_after, 2);
        assert_eq!(p.model.num_constraints(), 1);
        assert_eq!(p.restore(&[1.0, 0.0]), vec![1.0, 0.0]);
    }

    #[test]
    fn detects_infeasibility() {
        let mut m = MilpModel::new();
        let x = m.add_continuous(0.0, 5.0, VarTag::new("x", &[]));
        m.add_constraint(LinExpr::var(x), Sense::Ge, 2.0, "a");
        m.add_constraint(LinExpr::var(x), Sense::Le, 1.0, "b");
        assert!(presolve(&m).is_err());
    }
}

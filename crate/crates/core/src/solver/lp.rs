//! Bounded dual simplex, revised form over a sparse LU of the basis.
//!
//! Each row `i` of the constraint matrix gets a logical variable
//! `r_i = sum_j a_ij x_j` whose bounds carry the row sense, so every
//! constraint becomes a bound. All variables are boxed (infinite bounds are
//! clamped to [`BIG`]); any basis can then be made dual feasible by parking
//! each nonbasic variable at the bound matching the sign of its reduced
//! cost. That makes the dual simplex the only phase we need, and lets
//! branch-and-bound warm-start any node from any previous basis by
//! changing bounds alone.
//!
//! Pricing uses dual steepest-edge weights; the ratio test passes
//! breakpoints by flipping boxed variables while the leaving row stays
//! infeasible.
//!
//! Sign convention: with `alpha = B^-1 a_j`, basic values obey
//! `x_B = -sum_{j in N} alpha_j x_j`.

use super::lu::Factor;
use crate::milp::{MilpModel, Sense};
use crate::par::{fill_indexed, Exec};

/// Stand-in for infinite bounds.
pub const BIG: f64 = 1e9;

const PRIMAL_TOL: f64 = 1e-9;
const DUAL_TOL: f64 = 1e-9;
const PIVOT_TOL: f64 = 1e-7;
/// Relative disagreement between row and column pivot that forces a refactor.
const PIVOT_MISMATCH: f64 = 1e-6;
/// Basis updates between refactorizations.
const REFACTOR_EVERY: usize = 100;
/// Pivot-row density above which the row is priced column by column.
const DENSE_RHO: f64 = 0.1;
const MIN_WEIGHT: f64 = 1e-8;

/// LP in row form: `row_lo <= A x <= row_hi`, `lb <= x <= ub`, min `c x`.
#[derive(Debug, Clone, PartialEq)]
pub struct LpProblem {
    pub num_cols: usize,
    pub rows: Vec<Vec<(usize, f64)>>,
    pub row_lo: Vec<f64>,
    pub row_hi: Vec<f64>,
    pub lb: Vec<f64>,
    pub ub: Vec<f64>,
    pub cost: Vec<f64>,
    pub cost_offset: f64,
}

impl LpProblem {
    /// Continuous relaxation of a model (binaries become [0, 1]).
    pub fn from_model(model: &MilpModel) -> Self {
        let n = model.num_vars();
        let mut rows = Vec::with_capacity(model.num_constraints());
        let mut row_lo = Vec::with_capacity(model.num_constraints());
        let mut row_hi = Vec::with_capacity(model.num_constraints());
        for c in model.constraints() {
            rows.push(c.expr.terms().iter().map(|&(a, v)| (v.0, a)).collect());
            let (lo, hi) = match c.sense {
                Sense::Le => (f64::NEG_INFINITY, c.rhs),
                Sense::Ge => (c.rhs, f64::INFINITY),
                Sense::Eq => (c.rhs, c.rhs),
            };
            row_lo.push(lo);
            row_hi.push(hi);
        }
        let mut cost = vec![0.0; n];
        for &(a, v) in model.objective().terms() {
            cost[v.0] += a;
        }
        Self {
            num_cols: n,
            rows,
            row_lo,
            row_hi,
            lb: model.vars().iter().map(|v| v.lb).collect(),
            ub: model.vars().iter().map(|v| v.ub).collect(),
            cost,
            cost_offset: model.objective().constant,
        }
    }

    pub fn num_rows(&self) -> usize {
        self.rows.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LpStatus {
    Optimal,
    Infeasible,
    IterationLimit,
}

fn clamp_big(v: f64) -> f64 {
    v.clamp(-BIG, BIG)
}

#[derive(Debug, Clone)]
pub struct DualSimplex {
    m: usize,
    n: usize,
    width: usize,
    /// Columns of `[A | -I]` as (row, value) pairs.
    cols: Vec<Vec<(usize, f64)>>,
    /// Structural part of `A` by rows.
    rows: Vec<Vec<(usize, f64)>>,
    /// Variable held at each basis position.
    basis: Vec<usize>,
    /// Basis position of a variable, `usize::MAX` when nonbasic.
    row_of: Vec<usize>,
    at_upper: Vec<bool>,
    lb: Vec<f64>,
    ub: Vec<f64>,
    x: Vec<f64>,
    d: Vec<f64>,
    cost: Vec<f64>,
    cost_offset: f64,
    factor: Factor,
    /// Dual steepest-edge weights by basis position.
    weight: Vec<f64>,
    exec: Exec,
    /// Infeasible bounds detected before any pivoting (lb > ub).
    trivially_infeasible: bool,
    /// Nonbasic values changed since the basic values were last recomputed.
    primal_stale: bool,
    /// Pivots since the basic values were last recomputed from scratch.
    since_primal: usize,
    pub iterations: u64,
    max_iterations: u64,
    rho: Vec<f64>,
    prow: Vec<f64>,
    col: Vec<f64>,
    tau: Vec<f64>,
    work: Vec<f64>,
}

impl DualSimplex {
    pub fn new(problem: &LpProblem, exec: Exec) -> Self {
        let m = problem.num_rows();
        let n = problem.num_cols;
        let width = n + m;
        let mut lb: Vec<f64> = problem.lb.iter().map(|&v| clamp_big(v)).collect();
        let mut ub: Vec<f64> = problem.ub.iter().map(|&v| clamp_big(v)).collect();
        let mut trivially_infeasible = lb.iter().zip(&ub).any(|(l, u)| l > u);
        let mut cols: Vec<Vec<(usize, f64)>> = vec![Vec::new(); width];
        for (i, row) in problem.rows.iter().enumerate() {
            // logical bounds: intersect the row range with the activity range
            let (mut amin, mut amax) = (0.0, 0.0);
            for &(j, a) in row {
                cols[j].push((i, a));
                if a >= 0.0 {
                    amin += a * lb[j];
                    amax += a * ub[j];
                } else {
                    amin += a * ub[j];
                    amax += a * lb[j];
                }
            }
            cols[n + i].push((i, -1.0));
            let lo = problem.row_lo[i].max(amin - 1.0);
            let hi = problem.row_hi[i].min(amax + 1.0);
            if lo > hi {
                trivially_infeasible = true;
            }
            lb.push(lo);
            ub.push(hi);
        }
        let mut cost = problem.cost.clone();
        cost.resize(width, 0.0);
        let mut row_of = vec![usize::MAX; width];
        for i in 0..m {
            row_of[n + i] = i;
        }
        let mut s = Self {
            m,
            n,
            width,
            cols,
            rows: problem.rows.clone(),
            basis: (n..width).collect(),
            row_of,
            at_upper: vec![false; width],
            lb,
            ub,
            x: vec![0.0; width],
            d: vec![0.0; width],
            cost,
            cost_offset: problem.cost_offset,
            factor: Factor::default(),
            weight: vec![1.0; m],
            exec,
            trivially_infeasible,
            primal_stale: true,
            since_primal: 0,
            iterations: 0,
            max_iterations: 50 * (width as u64 + 100),
            rho: vec![0.0; m],
            prow: vec![0.0; width],
            col: vec![0.0; m],
            tau: vec![0.0; m],
            work: vec![0.0; m],
        };
        s.refactor();
        s.compute_dual();
        s.place_nonbasics();
        s.compute_primal();
        s
    }

    pub fn num_rows(&self) -> usize {
        self.m
    }

    pub fn num_cols(&self) -> usize {
        self.n
    }

    pub fn set_exec(&mut self, exec: Exec) {
        self.exec = exec;
    }

    /// Factors the current basis, swapping logicals in for dependent columns.
    fn refactor(&mut self) {
        loop {
            let cols: Vec<&[(usize, f64)]> = self.basis.iter().map(|&j| self.cols[j].as_slice()).collect();
            match Factor::new(self.m, &cols) {
                Ok(f) => {
                    self.factor = f;
                    return;
                }
                Err(sing) => {
                    for (&p, &i) in sing.positions.iter().zip(&sing.rows) {
                        let out = self.basis[p];
                        self.row_of[out] = usize::MAX;
                        self.at_upper[out] = self.x[out] >= self.ub[out] && self.ub[out] > self.lb[out];
                        self.x[out] = if self.at_upper[out] { self.ub[out] } else { self.lb[out] };
                        self.basis[p] = self.n + i;
                        self.row_of[self.n + i] = p;
                    }
                    self.weight.iter_mut().for_each(|w| *w = 1.0);
                    self.primal_stale = true;
                }
            }
        }
    }

    /// Puts every nonbasic variable at the bound its reduced cost prefers.
    fn place_nonbasics(&mut self) {
        for j in 0..self.width {
            if self.row_of[j] != usize::MAX {
                continue;
            }
            self.at_upper[j] = self.d[j] < 0.0 && self.ub[j] > self.lb[j];
            self.x[j] = if self.at_upper[j] { self.ub[j] } else { self.lb[j] };
        }
        self.primal_stale = true;
    }

    /// Recomputes basic values from the nonbasic ones.
    fn compute_primal(&mut self) {
        let rhs = &mut self.work;
        rhs.iter_mut().for_each(|v| *v = 0.0);
        for j in 0..self.width {
            let xj = self.x[j];
            if self.row_of[j] != usize::MAX || xj == 0.0 {
                continue;
            }
            for &(i, a) in &self.cols[j] {
                rhs[i] -= a * xj;
            }
        }
        self.factor.ftran(rhs, &mut self.col);
        for (p, &b) in self.basis.iter().enumerate() {
            self.x[b] = self.col[p];
        }
        self.primal_stale = false;
        self.since_primal = 0;
    }

    /// Recomputes reduced costs from the basis.
    fn compute_dual(&mut self) {
        for (p, &b) in self.basis.iter().enumerate() {
            self.work[p] = self.cost[b];
        }
        self.factor.btran(&mut self.work, &mut self.rho);
        for j in 0..self.width {
            self.d[j] = if self.row_of[j] != usize::MAX {
                0.0
            } else {
                self.cost[j] - self.cols[j].iter().map(|&(i, a)| self.rho[i] * a).sum::<f64>()
            };
        }
    }

    /// Refactors and recomputes primal and dual values.
    pub fn reinvert(&mut self) {
        self.refactor();
        self.compute_dual();
        self.place_nonbasics();
        self.compute_primal();
    }

    /// Changes a variable's bounds, keeping the basis dual feasible.
    pub fn set_bounds(&mut self, j: usize, lb: f64, ub: f64) {
        let (lb, ub) = (clamp_big(lb), clamp_big(ub));
        if lb > ub {
            self.trivially_infeasible = true;
        }
        self.lb[j] = lb;
        self.ub[j] = ub;
        if self.row_of[j] != usize::MAX {
            return;
        }
        let upper = if self.d[j] > DUAL_TOL {
            false
        } else if self.d[j] < -DUAL_TOL {
            true
        } else {
            self.at_upper[j]
        };
        self.at_upper[j] = upper && ub > lb;
        let new = if self.at_upper[j] { ub } else { lb };
        if new != self.x[j] {
            self.x[j] = new;
            self.primal_stale = true;
        }
    }

    /// Clears a sticky infeasibility flag after bounds were restored.
    pub fn recheck_bounds(&mut self) {
        self.trivially_infeasible = self.lb.iter().zip(&self.ub).any(|(l, u)| l > u);
    }

    pub fn bounds(&self, j: usize) -> (f64, f64) {
        (self.lb[j], self.ub[j])
    }

    /// Applies nonbasic moves `(j, delta)` to the basic values.
    fn shift_nonbasics(&mut self, moves: &[(usize, f64)]) {
        if moves.is_empty() {
            return;
        }
        let rhs = &mut self.work;
        rhs.iter_mut().for_each(|v| *v = 0.0);
        for &(j, delta) in moves {
            self.x[j] += delta;
            for &(i, a) in &self.cols[j] {
                rhs[i] += a * delta;
            }
        }
        self.factor.ftran(rhs, &mut self.tau);
        for (p, &b) in self.basis.iter().enumerate() {
            self.x[b] -= self.tau[p];
        }
    }

    /// Bound-flips nonbasic variables whose reduced cost has the wrong sign.
    fn fix_dual_signs(&mut self) {
        let mut moves = Vec::new();
        for j in 0..self.width {
            if self.row_of[j] != usize::MAX || self.lb[j] == self.ub[j] {
                continue;
            }
            let flip = if self.at_upper[j] {
                self.d[j] > DUAL_TOL
            } else {
                self.d[j] < -DUAL_TOL
            };
            if flip {
                self.at_upper[j] = !self.at_upper[j];
                let new = if self.at_upper[j] { self.ub[j] } else { self.lb[j] };
                moves.push((j, new - self.x[j]));
            }
        }
        self.shift_nonbasics(&moves);
    }

    /// Basis position with the largest weighted primal infeasibility.
    fn choose_leaving(&self) -> Option<(usize, bool)> {
        let mut best: Option<(usize, bool, f64)> = None;
        for p in 0..self.m {
            let b = self.basis[p];
            let v = self.x[b];
            let (viol, below) = if v < self.lb[b] - PRIMAL_TOL {
                (self.lb[b] - v, true)
            } else if v > self.ub[b] + PRIMAL_TOL {
                (v - self.ub[b], false)
            } else {
                continue;
            };
            let score = viol * viol / self.weight[p];
            if best.is_none_or(|(_, _, s)| score > s) {
                best = Some((p, below, score));
            }
        }
        best.map(|(p, below, _)| (p, below))
    }

    /// Fills `rho` with row `r` of the basis inverse and `prow` with row `r`
    /// of the tableau.
    fn pivot_row(&mut self, r: usize) {
        self.work.iter_mut().for_each(|v| *v = 0.0);
        self.work[r] = 1.0;
        self.factor.btran(&mut self.work, &mut self.rho);
        let nnz = self.rho.iter().filter(|v| **v != 0.0).count();
        let n = self.n;
        let (structural, logical) = self.prow.split_at_mut(n);
        if (nnz as f64) < DENSE_RHO * self.m as f64 {
            structural.iter_mut().for_each(|v| *v = 0.0);
            for (i, &ri) in self.rho.iter().enumerate() {
                if ri != 0.0 {
                    for &(j, a) in &self.rows[i] {
                        structural[j] += ri * a;
                    }
                }
            }
        } else {
            let (cols, rho) = (&self.cols, &self.rho);
            fill_indexed(self.exec, structural, |j| cols[j].iter().map(|&(i, a)| rho[i] * a).sum());
        }
        for (v, &ri) in logical.iter_mut().zip(&self.rho) {
            *v = -ri;
        }
    }

    /// Ratio test on the pivot row with bound flipping; returns the entering
    /// variable and the variables to flip.
    fn choose_entering(&self, r: usize, below: bool) -> Option<(usize, Vec<usize>)> {
        let leave = self.basis[r];
        let mut slope = if below {
            self.lb[leave] - self.x[leave]
        } else {
            self.x[leave] - self.ub[leave]
        };
        let mut cands: Vec<(f64, usize, f64)> = Vec::new();
        for j in 0..self.width {
            if self.row_of[j] != usize::MAX || self.lb[j] == self.ub[j] {
                continue;
            }
            let t = self.prow[j];
            if t.abs() <= PIVOT_TOL {
                continue;
            }
            let up = self.at_upper[j];
            // leaving var must rise (below) or fall; entering moves away from its bound
            let ok = match (below, up) {
                (true, false) => t < 0.0,
                (true, true) => t > 0.0,
                (false, false) => t > 0.0,
                (false, true) => t < 0.0,
            };
            if !ok {
                continue;
            }
            let dj = if up { -self.d[j] } else { self.d[j] };
            cands.push((dj.max(0.0) / t.abs(), j, t.abs()));
        }
        if cands.is_empty() {
            return None;
        }
        cands.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let mut k = 0;
        while k + 1 < cands.len() {
            let (_, j, a) = cands[k];
            let next = slope - a * (self.ub[j] - self.lb[j]);
            if next <= 0.0 {
                break;
            }
            slope = next;
            k += 1;
        }
        // Harris window: prefer the largest pivot among near-ties
        let mut best = k;
        let limit = cands[k].0;
        for (idx, &(ratio, _, a)) in cands.iter().enumerate().skip(k + 1) {
            if ratio > limit + DUAL_TOL / a {
                break;
            }
            if a > cands[best].2 {
                best = idx;
            }
        }
        let flips = cands[..k].iter().map(|c| c.1).collect();
        Some((cands[best].1, flips))
    }

    /// Runs the dual simplex from the current basis.
    pub fn solve(&mut self) -> LpStatus {
        if self.trivially_infeasible {
            return LpStatus::Infeasible;
        }
        let start = self.iterations;
        let mut confirmed = false;
        loop {
            if self.factor.wants_refactor(REFACTOR_EVERY) {
                self.refactor();
                self.compute_dual();
                self.fix_dual_signs();
                self.primal_stale = true;
            }
            if self.primal_stale {
                self.compute_primal();
            }
            let Some((r, below)) = self.choose_leaving() else {
                if self.since_primal > 0 {
                    self.compute_primal();
                    continue;
                }
                return LpStatus::Optimal;
            };
            self.pivot_row(r);
            let Some((q, flips)) = self.choose_entering(r, below) else {
                if !confirmed {
                    // confirm on a fresh factorization before declaring infeasible
                    confirmed = true;
                    self.reinvert();
                    continue;
                }
                return LpStatus::Infeasible;
            };
            self.work.iter_mut().for_each(|v| *v = 0.0);
            for &(i, a) in &self.cols[q] {
                self.work[i] = a;
            }
            self.factor.ftran(&mut self.work, &mut self.col);
            let alpha = self.col[r];
            if (alpha - self.prow[q]).abs() > PIVOT_MISMATCH * (1.0 + alpha.abs()) && self.factor.num_etas() > 0 {
                self.refactor();
                self.compute_dual();
                self.fix_dual_signs();
                self.primal_stale = true;
                continue;
            }
            self.pivot(r, q, below, &flips);
            if self.iterations - start > self.max_iterations {
                return LpStatus::IterationLimit;
            }
        }
    }

    /// Basis change at position `r`; `col` holds the entering column's FTRAN
    /// image and `prow`/`rho` the pivot row.
    fn pivot(&mut self, r: usize, q: usize, below: bool, flips: &[usize]) {
        let alpha_r = self.col[r];
        let col = std::mem::take(&mut self.col);

        // dual steepest-edge update needs B^-1 rho before the basis changes
        let beta_r: f64 = self.rho.iter().map(|v| v * v).sum();
        self.work.copy_from_slice(&self.rho);
        self.factor.ftran(&mut self.work, &mut self.tau);
        for p in 0..self.m {
            if p == r || col[p] == 0.0 {
                continue;
            }
            let k = col[p] / alpha_r;
            self.weight[p] = (self.weight[p] - 2.0 * k * self.tau[p] + k * k * beta_r).max(MIN_WEIGHT);
        }
        self.weight[r] = (beta_r / (alpha_r * alpha_r)).max(MIN_WEIGHT);

        if !flips.is_empty() {
            let moves: Vec<(usize, f64)> = flips
                .iter()
                .map(|&j| {
                    self.at_upper[j] = !self.at_upper[j];
                    let new = if self.at_upper[j] { self.ub[j] } else { self.lb[j] };
                    (j, new - self.x[j])
                })
                .collect();
            self.shift_nonbasics(&moves);
        }

        let leave = self.basis[r];
        let beta = if below { self.lb[leave] } else { self.ub[leave] };
        let delta = (self.x[leave] - beta) / alpha_r;
        for p in 0..self.m {
            if col[p] != 0.0 {
                self.x[self.basis[p]] -= col[p] * delta;
            }
        }
        self.x[q] += delta;
        self.x[leave] = beta;

        let theta = self.d[q] / self.prow[q];
        if theta != 0.0 {
            for j in 0..self.width {
                if self.row_of[j] == usize::MAX {
                    self.d[j] -= theta * self.prow[j];
                }
            }
        }
        self.d[q] = 0.0;
        self.d[leave] = -theta;

        self.factor.update(r, &col);
        self.col = col;
        self.basis[r] = q;
        self.row_of[q] = r;
        self.row_of[leave] = usize::MAX;
        self.at_upper[leave] = !below && self.ub[leave] > self.lb[leave];
        self.iterations += 1;
        self.since_primal += 1;
        self.fix_dual_signs();
    }

    /// Largest row residual `|A x - r|`.
    pub fn residual(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for (i, row) in self.rows.iter().enumerate() {
            let act: f64 = row.iter().map(|&(j, a)| a * self.x[j]).sum();
            worst = worst.max((act - self.x[self.n + i]).abs());
        }
        worst
    }

    /// Structural values.
    pub fn values(&self) -> &[f64] {
        &self.x[..self.n]
    }

    pub fn objective(&self) -> f64 {
        self.cost_offset
            + self.cost[..self.n]
                .iter()
                .zip(&self.x[..self.n])
                .map(|(c, x)| c * x)
                .sum::<f64>()
    }

    /// Variables whose value sits on an artificial [`BIG`] bound.
    pub fn hits_artificial_bound(&self) -> bool {
        self.x[..self.n].iter().any(|v| v.abs() >= BIG * (1.0 - 1e-9))
    }
}

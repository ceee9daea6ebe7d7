//! MILP model: variables, linear constraints, a minimisation objective, and
//! the logic encodings (NOT/AND/OR) and big-M helpers used by the planner.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("variable {0} has an infinite bound; big-M is undefined")]
    UnboundedVariable(String),
    #[error("variable index {0} does not belong to this model")]
    UnknownVariable(usize),
    #[error("logic encoding needs at least one operand")]
    EmptyOperands,
    #[error("operand {0} is not a 0-1 variable")]
    NotZeroOne(String),
}

/// Handle into a model's variable table.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct VarId(pub usize);

impl VarId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum VarKind {
    /// Integral {0, 1}; the only kind branch-and-bound branches on.
    Binary,
    /// Continuous in [0, 1].
    UnitInterval,
    Continuous,
}

/// Structured variable name: a symbol plus its index tuple.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct VarTag {
    pub symbol: String,
    pub indices: Vec<usize>,
}

impl VarTag {
    pub fn new(symbol: impl Into<String>, indices: &[usize]) -> Self {
        Self {
            symbol: symbol.into(),
            indices: indices.to_vec(),
        }
    }
}

impl fmt::Display for VarTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.symbol)?;
        if !self.indices.is_empty() {
            let idx: Vec<String> = self.indices.iter().map(|i| i.to_string()).collect();
            write!(f, "[{}]", idx.join(","))?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VarSpec {
    pub kind: VarKind,
    pub lb: f64,
    pub ub: f64,
    pub tag: VarTag,
}

impl VarSpec {
    pub fn is_binary(&self) -> bool {
        self.kind == VarKind::Binary
    }

    pub fn is_fixed(&self) -> bool {
        self.lb == self.ub
    }
}

/// Linear expression `sum(coef * var) + constant`.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct LinExpr {
    terms: Vec<(f64, VarId)>,
    pub constant: f64,
}

impl LinExpr {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn constant(c: f64) -> Self {
        Self {
            terms: Vec::new(),
            constant: c,
        }
    }

    pub fn var(v: VarId) -> Self {
        Self::term(1.0, v)
    }

    pub fn term(c: f64, v: VarId) -> Self {
        let mut e = Self::new();
        e.add_term(c, v);
        e
    }

    /// Builds an expression from arbitrary terms, merging duplicates.
    pub fn from_terms(terms: impl IntoIterator<Item = (f64, VarId)>, constant: f64) -> Self {
        let mut terms: Vec<(f64, VarId)> = terms.into_iter().collect();
        terms.sort_by_key(|&(_, v)| v);
        let mut merged: Vec<(f64, VarId)> = Vec::with_capacity(terms.len());
        for (c, v) in terms {
            match merged.last_mut() {
                Some(last) if last.1 == v => last.0 += c,
                _ => merged.push((c, v)),
            }
        }
        merged.retain(|&(c, _)| c != 0.0);
        Self {
            terms: merged,
            constant,
        }
    }

    /// Adds `c * v`, merging with an existing term for `v`.
    pub fn add_term(&mut self, c: f64, v: VarId) -> &mut Self {
        if let Some(pos) = self.terms.iter().position(|&(_, w)| w == v) {
            self.terms[pos].0 += c;
            if self.terms[pos].0 == 0.0 {
                self.terms.remove(pos);
            }
        } else if c != 0.0 {
            self.terms.push((c, v));
        }
        self
    }

    pub fn add_constant(&mut self, c: f64) -> &mut Self {
        self.constant += c;
        self
    }

    pub fn add_expr(&mut self, scale: f64, other: &LinExpr) -> &mut Self {
        for &(c, v) in &other.terms {
            self.add_term(scale * c, v);
        }
        self.constant += scale * other.constant;
        self
    }

    pub fn add_lit(&mut self, c: f64, lit: Lit) -> &mut Self {
        match lit {
            Lit::Pos(v) => self.add_term(c, v),
            Lit::Neg(v) => self.add_term(-c, v).add_constant(c),
        }
    }

    pub fn terms(&self) -> &[(f64, VarId)] {
        &self.terms
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn eval(&self, values: &[f64]) -> f64 {
        self.constant + self.terms.iter().map(|&(c, v)| c * values[v.0]).sum::<f64>()
    }
}

/// A 0-1 operand, possibly negated.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Lit {
    Pos(VarId),
    Neg(VarId),
}

impl Lit {
    pub fn var(self) -> VarId {
        match self {
            Lit::Pos(v) | Lit::Neg(v) => v,
        }
    }
}

impl From<VarId> for Lit {
    fn from(v: VarId) -> Self {
        Lit::Pos(v)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Sense {
    Le,
    Ge,
    Eq,
}

impl fmt::Display for Sense {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Sense::Le => "<=",
            Sense::Ge => ">=",
            Sense::Eq => "=",
        })
    }
}

/// `expr (sense) rhs`; the expression's constant is always folded into rhs.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Constraint {
    pub expr: LinExpr,
    pub sense: Sense,
    pub rhs: f64,
    pub tag: &'static str,
}

impl Constraint {
    pub fn violation(&self, values: &[f64]) -> f64 {
        let lhs = self.expr.eval(values);
        match self.sense {
            Sense::Le => (lhs - self.rhs).max(0.0),
            Sense::Ge => (self.rhs - lhs).max(0.0),
            Sense::Eq => (lhs - self.rhs).abs(),
        }
    }
}

/// Minimisation MILP.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct MilpModel {
    vars: Vec<VarSpec>,
    constraints: Vec<Constraint>,
    objective: LinExpr,
}

impl MilpModel {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_var(&mut self, kind: VarKind, lb: f64, ub: f64, tag: VarTag) -> VarId {
        debug_assert!(lb <= ub, "{tag}: lb {lb} > ub {ub}");
        let id = VarId(self.vars.len());
        self.vars.push(VarSpec { kind, lb, ub, tag });
        id
    }

    pub fn add_binary(&mut self, tag: VarTag) -> VarId {
        self.add_var(VarKind::Binary, 0.0, 1.0, tag)
    }

    pub fn add_unit(&mut self, tag: VarTag) -> VarId {
        self.add_var(VarKind::UnitInterval, 0.0, 1.0, tag)
    }

    pub fn add_continuous(&mut self, lb: f64, ub: f64, tag: VarTag) -> VarId {
        self.add_var(VarKind::Continuous, lb, ub, tag)
    }

    /// Pins a variable to a value through its bounds.
    pub fn fix(&mut self, v: VarId, value: f64) {
        let spec = &mut self.vars[v.0];
        spec.lb = value;
        spec.ub = value;
    }

    pub fn set_bounds(&mut self, v: VarId, lb: f64, ub: f64) {
        let spec = &mut self.vars[v.0];
        spec.lb = lb;
        spec.ub = ub;
    }

    pub fn add_constraint(&mut self, expr: LinExpr, sense: Sense, rhs: f64, tag: &'static str) {
        let mut expr = expr;
        let rhs = rhs - expr.constant;
        expr.constant = 0.0;
        self.constraints.push(Constraint {
            expr,
            sense,
            rhs,
            tag,
        });
    }

    pub fn set_objective(&mut self, objective: LinExpr) {
        self.objective = objective;
    }

    pub fn objective(&self) -> &LinExpr {
        &self.objective
    }

    pub fn vars(&self) -> &[VarSpec] {
        &self.vars
    }

    pub fn var(&self, v: VarId) -> &VarSpec {
        &self.vars[v.0]
    }

    pub fn num_vars(&self) -> usize {
        self.vars.len()
    }

    pub fn constraints(&self) -> &[Constraint] {
        &self.constraints
    }

    pub fn num_constraints(&self) -> usize {
        self.constraints.len()
    }

    pub fn binary_count(&self) -> usize {
        self.vars.iter().filter(|v| v.is_binary()).count()
    }

    pub fn continuous_count(&self) -> usize {
        self.vars.len() - self.binary_count()
    }

    fn check_zero_one(&self, v: VarId) -> Result<(), ModelError> {
        let spec = self.vars.get(v.0).ok_or(ModelError::UnknownVariable(v.0))?;
        match spec.kind {
            VarKind::Binary | VarKind::UnitInterval => Ok(()),
            VarKind::Continuous if spec.lb >= 0.0 && spec.ub <= 1.0 => Ok(()),
            VarKind::Continuous => Err(ModelError::NotZeroOne(spec.tag.to_string())),
        }
    }

    /// Mints `phi = 1 - operand`.
    pub fn encode_not(&mut self, operand: VarId) -> Result<VarId, ModelError> {
        self.check_zero_one(operand)?;
        let tag = VarTag::new(format!("not({})", self.vars[operand.0].tag), &[]);
        let phi = self.add_unit(tag);
        let mut e = LinExpr::var(phi);
        e.add_term(1.0, operand);
        self.add_constraint(e, Sense::Eq, 1.0, "logic_not");
        Ok(phi)
    }

    /// Mints `phi = AND(operands)`.
    pub fn encode_and(&mut self, operands: &[VarId]) -> Result<VarId, ModelError> {
        let lits: Vec<Lit> = operands.iter().map(|&v| Lit::Pos(v)).collect();
        let phi = self.add_unit(VarTag::new("and", &[self.vars.len()]));
        self.constrain_and(phi, &lits)?;
        Ok(phi)
    }

    /// Mints `phi = OR(operands)`.
    pub fn encode_or(&mut self, operands: &[VarId]) -> Result<VarId, ModelError> {
        let lits: Vec<Lit> = operands.iter().map(|&v| Lit::Pos(v)).collect();
        let phi = self.add_unit(VarTag::new("or", &[self.vars.len()]));
        self.constrain_or(phi, &lits)?;
        Ok(phi)
    }

    /// Constrains an existing 0-1 variable to the conjunction of `lits`.
    pub fn constrain_and(&mut self, phi: VarId, lits: &[Lit]) -> Result<(), ModelError> {
        self.constrain_and_tagged(phi, lits, "logic_and")
    }

    pub fn constrain_and_tagged(
        &mut self,
        phi: VarId,
        lits: &[Lit],
        tag: &'static str,
    ) -> Result<(), ModelError> {
        if lits.is_empty() {
            return Err(ModelError::EmptyOperands);
        }
        self.check_zero_one(phi)?;
        for l in lits {
            self.check_zero_one(l.var())?;
        }
        for &l in lits {
            // phi <= l
            let mut e = LinExpr::var(phi);
            e.add_lit(-1.0, l);
            self.add_constraint(e, Sense::Le, 0.0, tag);
        }
        // phi >= sum(l) - N + 1
        let mut e = LinExpr::var(phi);
        for &l in lits {
            e.add_lit(-1.0, l);
        }
        self.add_constraint(e, Sense::Ge, 1.0 - lits.len() as f64, tag);
        Ok(())
    }

    /// Constrains an existing 0-1 variable to the disjunction of `lits`.
    pub fn constrain_or(&mut self, phi: VarId, lits: &[Lit]) -> Result<(), ModelError> {
        self.constrain_or_tagged(phi, lits, "logic_or")
    }

    pub fn constrain_or_tagged(
        &mut self,
        phi: VarId,
        lits: &[Lit],
        tag: &'static str,
    ) -> Result<(), ModelError> {
        if lits.is_empty() {
            return Err(ModelError::EmptyOperands);
        }
        self.check_zero_one(phi)?;
        for l in lits {
            self.check_zero_one(l.var())?;
        }
        for &l in lits {
            let mut e = LinExpr::var(phi);
            e.add_lit(-1.0, l);
            self.add_constraint(e, Sense::Ge, 0.0, tag);
        }
        let mut e = LinExpr::var(phi);
        for &l in lits {
            e.add_lit(-1.0, l);
        }
        self.add_constraint(e, Sense::Le, 0.0, tag);
        Ok(())
    }

    /// Interval range of `expr` over the variable bound box.
    pub fn expr_range(&self, expr: &LinExpr) -> Result<(f64, f64), ModelError> {
        let mut lo = expr.constant;
        let mut hi = expr.constant;
        for &(c, v) in expr.terms() {
            let spec = self.vars.get(v.0).ok_or(ModelError::UnknownVariable(v.0))?;
            if !spec.lb.is_finite() || !spec.ub.is_finite() {
                return Err(ModelError::UnboundedVariable(spec.tag.to_string()));
            }
            if c >= 0.0 {
                lo += c * spec.lb;
                hi += c * spec.ub;
            } else {
                lo += c * spec.ub;
                hi += c * spec.lb;
            }
        }
        Ok((lo, hi))
    }

    /// Smallest M with `|expr| <= M` over the variable bound box.
    pub fn tightest_big_m(&self, expr: &LinExpr) -> Result<f64, ModelError> {
        let (lo, hi) = self.expr_range(expr)?;
        Ok(lo.abs().max(hi.abs()))
    }

    /// Lists references to variables outside the table (should be empty).
    pub fn audit(&self) -> Vec<String> {
        let n = self.vars.len();
        let mut issues = Vec::new();
        for (k, c) in self.constraints.iter().enumerate() {
            for &(_, v) in c.expr.terms() {
                if v.0 >= n {
                    issues.push(format!("constraint #{k} ({}) references var {}", c.tag, v.0));
                }
            }
        }
        for &(_, v) in self.objective.terms() {
            if v.0 >= n {
                issues.push(format!("objective references var {}", v.0));
            }
        }
        issues
    }

    /// Largest violation over constraints and variable bounds.
    pub fn max_violation(&self, values: &[f64]) -> f64 {
        let cons = self
            .constraints
            .iter()
            .map(|c| c.violation(values))
            .fold(0.0, f64::max);
        let bounds = self
            .vars
            .iter()
            .zip(values)
            .map(|(s, &x)| (s.lb - x).max(x - s.ub).max(0.0))
            .fold(0.0, f64::max);
        cons.max(bounds)
    }

    /// Largest distance of a binary variable from {0, 1}.
    pub fn max_integrality_violation(&self, values: &[f64]) -> f64 {
        self.vars
            .iter()
            .zip(values)
            .filter(|(s, _)| s.is_binary())
            .map(|(_, &x)| (x - x.round()).abs())
            .fold(0.0, f64::max)
    }
}

fn fmt_num(x: f64) -> String {
    if x == f64::INFINITY {
        "inf".into()
    } else if x == f64::NEG_INFINITY {
        "-inf".into()
    } else {
        format!("{x}")
    }
}

fn fmt_expr(f: &mut fmt::Formatter<'_>, model: &MilpModel, e: &LinExpr) -> fmt::Result {
    if e.terms().is_empty() {
        write!(f, "0")?;
    }
    for (n, &(c, v)) in e.terms().iter().enumerate() {
        let name = &model.vars[v.0].tag;
        if n == 0 {
            write!(f, "{c} {name}")?;
        } else if c < 0.0 {
            write!(f, " - {} {name}", -c)?;
        } else {
            write!(f, " + {c} {name}")?;
        }
    }
    if e.constant != 0.0 {
        write!(f, " + {}", e.constant)?;
    }
    Ok(())
}

/// Human-readable dump in table order.
impl fmt::Display for MilpModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "variables: {}", self.vars.len())?;
        for (k, v) in self.vars.iter().enumerate() {
            let kind = match v.kind {
                VarKind::Binary => "bin",
                VarKind::UnitInterval => "unit",
                VarKind::Continuous => "cont",
            };
            writeln!(f, "  x{k} {kind} [{}, {}] {}", fmt_num(v.lb), fmt_num(v.ub), v.tag)?;
        }
        writeln!(f, "constraints: {}", self.constraints.len())?;
        for (k, c) in self.constraints.iter().enumerate() {
            write!(f, "  c{k} {}: ", c.tag)?;
            fmt_expr(f, self, &c.expr)?;
            writeln!(f, " {} {}", c.sense, c.rhs)?;
        }
        write!(f, "minimize: ")?;
        fmt_expr(f, self, &self.objective)?;
        writeln!(f)
    }
}

//! Solver-agnostic conic program: linear objective, labelled linear rows,
//! box bounds and second-order cones.
//!
//! Equalities read `expr = rhs`, inequalities `expr <= rhs`, and a cone
//! `head >= ||tail||_2` with affine members.

mod clarabel_adapter;
mod dump;

use std::collections::HashMap;
use std::fmt;
use std::ops::{Add, Mul, Neg, Sub};

use crate::error::{Error, Result};
use crate::feeder::{LineIdx, NodeIdx};
use crate::units::Phase;

pub use clarabel_adapter::ClarabelSolver;
pub use dump::write_dump;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Counterparty {
    Consumer(usize),
    /// The distribution operator, buying prosumer output not matched with a consumer.
    Operator,
}

/// Identity of a decision variable.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum VarKey {
    ProsumerP { t: usize, prosumer: usize, phase: Phase },
    ProsumerQ { t: usize, prosumer: usize, phase: Phase },
    Trade { t: usize, phase: Phase, prosumer: usize, counterparty: Counterparty },
    Demand { t: usize, consumer: usize, phase: Phase },
    FlowP { t: usize, line: LineIdx, phase: Phase },
    FlowQ { t: usize, line: LineIdx, phase: Phase },
    Current { t: usize, line: LineIdx, phase: Phase },
    Voltage { t: usize, node: NodeIdx, phase: Phase },
    ImportP { t: usize, phase: Phase },
    ImportQ { t: usize, phase: Phase },
    Shed { t: usize, node: NodeIdx, phase: Phase },
}

impl fmt::Display for VarKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        use VarKey::*;
        match *self {
            ProsumerP { t, prosumer, phase } => write!(f, "pp[t{t},g{prosumer},{phase}]"),
            ProsumerQ { t, prosumer, phase } => write!(f, "qp[t{t},g{prosumer},{phase}]"),
            Trade { t, phase, prosumer, counterparty: Counterparty::Consumer(c) } => {
                write!(f, "trade[t{t},{phase},g{prosumer},c{c}]")
            }
            Trade { t, phase, prosumer, counterparty: Counterparty::Operator } => {
                write!(f, "trade[t{t},{phase},g{prosumer},op]")
            }
            Demand { t, consumer, phase } => write!(f, "dem[t{t},c{consumer},{phase}]"),
            FlowP { t, line, phase } => write!(f, "fp[t{t},l{line},{phase}]"),
            FlowQ { t, line, phase } => write!(f, "fq[t{t},l{line},{phase}]"),
            Current { t, line, phase } => write!(f, "a[t{t},l{line},{phase}]"),
            Voltage { t, node, phase } => write!(f, "v[t{t},n{node},{phase}]"),
            ImportP { t, phase } => write!(f, "pug[t{t},{phase}]"),
            ImportQ { t, phase } => write!(f, "qug[t{t},{phase}]"),
            Shed { t, node, phase } => write!(f, "shd[t{t},n{node},{phase}]"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct VarId(pub usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum RowLabel {
    ActiveBalance { t: usize, node: NodeIdx, phase: Phase },
    ReactiveBalance { t: usize, node: NodeIdx, phase: Phase },
    VoltageDrop { t: usize, line: LineIdx, phase: Phase },
    SourceVoltage { t: usize, phase: Phase },
    Aggregation { t: usize, prosumer: usize, phase: Phase },
    DemandCover { t: usize, consumer: usize, phase: Phase },
    ShedLimit { t: usize, node: NodeIdx, phase: Phase },
}

impl fmt::Display for RowLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        use RowLabel::*;
        match *self {
            ActiveBalance { t, node, phase } => write!(f, "bal_p[t{t},n{node},{phase}]"),
            ReactiveBalance { t, node, phase } => write!(f, "bal_q[t{t},n{node},{phase}]"),
            VoltageDrop { t, line, phase } => write!(f, "vdrop[t{t},l{line},{phase}]"),
            SourceVoltage { t, phase } => write!(f, "vsrc[t{t},{phase}]"),
            Aggregation { t, prosumer, phase } => write!(f, "agg[t{t},g{prosumer},{phase}]"),
            DemandCover { t, consumer, phase } => write!(f, "dem_cover[t{t},c{consumer},{phase}]"),
            ShedLimit { t, node, phase } => write!(f, "shd_max[t{t},n{node},{phase}]"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ConeLabel {
    SendingLimit { t: usize, line: LineIdx, phase: Phase },
    ReceivingLimit { t: usize, line: LineIdx, phase: Phase },
    BranchRelaxation { t: usize, line: LineIdx, phase: Phase },
    Inverter { t: usize, prosumer: usize, phase: Phase },
}

impl fmt::Display for ConeLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        use ConeLabel::*;
        match *self {
            SendingLimit { t, line, phase } => write!(f, "slim_send[t{t},l{line},{phase}]"),
            ReceivingLimit { t, line, phase } => write!(f, "slim_recv[t{t},l{line},{phase}]"),
            BranchRelaxation { t, line, phase } => write!(f, "soc[t{t},l{line},{phase}]"),
            Inverter { t, prosumer, phase } => write!(f, "inv[t{t},g{prosumer},{phase}]"),
        }
    }
}

/// Sparse affine expression `sum c_i x_i + constant`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LinExpr {
    pub terms: Vec<(VarId, f64)>,
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
        Self {
            terms: vec![(v, 1.0)],
            constant: 0.0,
        }
    }

    pub fn term(v: VarId, c: f64) -> Self {
        Self {
            terms: vec![(v, c)],
            constant: 0.0,
        }
    }

    pub fn add_term(&mut self, v: VarId, c: f64) -> &mut Self {
        if c != 0.0 {
            self.terms.push((v, c));
        }
        self
    }

    pub fn add_constant(&mut self, c: f64) -> &mut Self {
        self.constant += c;
        self
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        self.terms.iter().map(|&(v, c)| c * x[v.0]).sum::<f64>() + self.constant
    }

    /// Merges duplicate variables and drops zero coefficients, ordering by variable.
    pub fn compact(mut self) -> Self {
        self.terms.sort_by_key(|&(v, _)| v);
        let mut out: Vec<(VarId, f64)> = Vec::with_capacity(self.terms.len());
        for (v, c) in self.terms {
            match out.last_mut() {
                Some((last, acc)) if *last == v => *acc += c,
                _ => out.push((v, c)),
            }
        }
        out.retain(|&(_, c)| c != 0.0);
        self.terms = out;
        self
    }
}

impl From<VarId> for LinExpr {
    fn from(v: VarId) -> Self {
        LinExpr::var(v)
    }
}

impl Add for LinExpr {
    type Output = LinExpr;
    fn add(mut self, rhs: LinExpr) -> LinExpr {
        self.terms.extend(rhs.terms);
        self.constant += rhs.constant;
        self
    }
}

impl Sub for LinExpr {
    type Output = LinExpr;
    fn sub(self, rhs: LinExpr) -> LinExpr {
        self + (-rhs)
    }
}

impl Neg for LinExpr {
    type Output = LinExpr;
    fn neg(self) -> LinExpr {
        self * -1.0
    }
}

impl Mul<f64> for LinExpr {
    type Output = LinExpr;
    fn mul(mut self, k: f64) -> LinExpr {
        for t in &mut self.terms {
            t.1 *= k;
        }
        self.constant *= k;
        self
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Row {
    pub label: RowLabel,
    /// Linear part; any constant is folded into `rhs`.
    pub expr: LinExpr,
    pub rhs: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SocCone {
    pub label: ConeLabel,
    pub head: LinExpr,
    pub tail: Vec<LinExpr>,
}

impl SocCone {
    /// `head - ||tail||`, non-negative when the point lies in the cone.
    pub fn residual(&self, x: &[f64]) -> f64 {
        let norm = self.tail.iter().map(|e| e.eval(x).powi(2)).sum::<f64>().sqrt();
        self.head.eval(x) - norm
    }
}

#[derive(Debug, Clone, Default)]
pub struct ConicProblem {
    vars: Vec<VarKey>,
    lookup: HashMap<VarKey, VarId>,
    lower: Vec<f64>,
    upper: Vec<f64>,
    objective: Vec<f64>,
    pub objective_constant: f64,
    equalities: Vec<Row>,
    inequalities: Vec<Row>,
    cones: Vec<SocCone>,
    eq_index: HashMap<RowLabel, usize>,
}

impl ConicProblem {
    pub fn new() -> Self {
        Self::default()
    }

    /// Declares a variable with bounds (use infinities for free sides).
    pub fn add_var(&mut self, key: VarKey, lower: f64, upper: f64) -> Result<VarId> {
        if self.lookup.contains_key(&key) {
            return Err(Error::Assembly(format!("variable {key} declared twice")));
        }
        if lower > upper || lower.is_nan() || upper.is_nan() {
            return Err(Error::Assembly(format!("variable {key} has bounds [{lower}, {upper}]")));
        }
        let id = VarId(self.vars.len());
        self.vars.push(key);
        self.lookup.insert(key, id);
        self.lower.push(lower);
        self.upper.push(upper);
        self.objective.push(0.0);
        Ok(id)
    }

    pub fn var(&self, key: &VarKey) -> Option<VarId> {
        self.lookup.get(key).copied()
    }

    pub fn require(&self, key: &VarKey) -> Result<VarId> {
        self.var(key)
            .ok_or_else(|| Error::Assembly(format!("variable {key} is not declared")))
    }

    pub fn key(&self, id: VarId) -> VarKey {
        self.vars[id.0]
    }

    pub fn keys(&self) -> &[VarKey] {
        &self.vars
    }

    pub fn num_vars(&self) -> usize {
        self.vars.len()
    }

    pub fn bounds(&self, id: VarId) -> (f64, f64) {
        (self.lower[id.0], self.upper[id.0])
    }

    pub fn set_bounds(&mut self, id: VarId, lower: f64, upper: f64) {
        self.lower[id.0] = lower;
        self.upper[id.0] = upper;
    }

    pub fn add_cost(&mut self, id: VarId, coef: f64) {
        self.objective[id.0] += coef;
    }

    pub fn objective(&self) -> &[f64] {
        &self.objective
    }

    fn check_expr(&self, expr: &LinExpr, what: &dyn fmt::Display) -> Result<()> {
        for &(v, c) in &expr.terms {
            if v.0 >= self.vars.len() {
                return Err(Error::Assembly(format!("{what} references undeclared variable #{}", v.0)));
            }
            if !c.is_finite() {
                return Err(Error::Assembly(format!("{what} has a non-finite coefficient")));
            }
        }
        Ok(())
    }

    /// Adds `expr = rhs`; a constant inside `expr` is moved to the right.
    pub fn add_eq(&mut self, label: RowLabel, expr: LinExpr, rhs: f64) -> Result<usize> {
        self.check_expr(&expr, &label)?;
        if self.eq_index.contains_key(&label) {
            return Err(Error::Assembly(format!("equality {label} added twice")));
        }
        let rhs = rhs - expr.constant;
        let mut expr = expr.compact();
        expr.constant = 0.0;
        self.eq_index.insert(label, self.equalities.len());
        self.equalities.push(Row { label, expr, rhs });
        Ok(self.equalities.len() - 1)
    }

    /// Adds `expr <= rhs`.
    pub fn add_le(&mut self, label: RowLabel, expr: LinExpr, rhs: f64) -> Result<usize> {
        self.check_expr(&expr, &label)?;
        let rhs = rhs - expr.constant;
        let mut expr = expr.compact();
        expr.constant = 0.0;
        self.inequalities.push(Row { label, expr, rhs });
        Ok(self.inequalities.len() - 1)
    }

    /// Adds `head >= ||tail||_2`.
    pub fn add_soc(&mut self, label: ConeLabel, head: LinExpr, tail: Vec<LinExpr>) -> Result<usize> {
        self.check_expr(&head, &label)?;
        for e in &tail {
            self.check_expr(e, &label)?;
        }
        if tail.is_empty() {
            return Err(Error::Assembly(format!("cone {label} has an empty tail")));
        }
        self.cones.push(SocCone {
            label,
            head: head.compact(),
            tail: tail.into_iter().map(LinExpr::compact).collect(),
        });
        Ok(self.cones.len() - 1)
    }

    pub fn equalities(&self) -> &[Row] {
        &self.equalities
    }

    pub fn inequalities(&self) -> &[Row] {
        &self.inequalities
    }

    pub fn cones(&self) -> &[SocCone] {
        &self.cones
    }

    pub fn equality_index(&self, label: &RowLabel) -> Option<usize> {
        self.eq_index.get(label).copied()
    }

    /// Shifts the right-hand side of a labelled equality.
    pub fn perturb_eq(&mut self, label: &RowLabel, delta: f64) -> Result<()> {
        let i = self
            .equality_index(label)
            .ok_or_else(|| Error::Assembly(format!("no equality labelled {label}")))?;
        self.equalities[i].rhs += delta;
        Ok(())
    }

    /// Linear objective at `x`, including the constant.
    pub fn objective_at(&self, x: &[f64]) -> f64 {
        self.objective.iter().zip(x).map(|(c, v)| c * v).sum::<f64>() + self.objective_constant
    }

    /// Multiplies every objective coefficient by `k`.
    pub fn scale_objective(&mut self, k: f64) {
        for c in &mut self.objective {
            *c *= k;
        }
        self.objective_constant *= k;
    }

    /// Largest violation across rows, bounds and cones at `x`.
    pub fn max_violation(&self, x: &[f64]) -> f64 {
        let mut worst: f64 = 0.0;
        for r in &self.equalities {
            worst = worst.max((r.expr.eval(x) - r.rhs).abs());
        }
        for r in &self.inequalities {
            worst = worst.max(r.expr.eval(x) - r.rhs);
        }
        for (i, &v) in x.iter().enumerate() {
            worst = worst.max(self.lower[i] - v).max(v - self.upper[i]);
        }
        for c in &self.cones {
            worst = worst.max(-c.residual(x));
        }
        worst
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveStatus {
    Optimal,
    Infeasible,
    Unbounded,
    NumericalFailure,
}

impl fmt::Display for SolveStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SolveStatus::Optimal => "optimal",
            SolveStatus::Infeasible => "infeasible",
            SolveStatus::Unbounded => "unbounded",
            SolveStatus::NumericalFailure => "numerical-failure",
        })
    }
}

#[derive(Debug, Clone, Default, PartialEq, serde::Serialize)]
pub struct SolverStats {
    pub solver: String,
    pub iterations: u32,
    pub solve_time_s: f64,
    pub primal_residual: f64,
    pub dual_residual: f64,
    pub gap_abs: f64,
    pub gap_rel: f64,
    pub raw_status: String,
}

/// Primal values and row sensitivities of a solve.
///
/// Row duals are reported as derivatives of the optimal objective with
/// respect to the row right-hand side, so the dual of an active-balance row
/// whose right-hand side is the fixed load is the marginal cost of load.
#[derive(Debug, Clone)]
pub struct Solution {
    pub status: SolveStatus,
    pub primal: Vec<f64>,
    pub eq_duals: Vec<f64>,
    pub ineq_duals: Vec<f64>,
    pub objective_value: f64,
    pub stats: SolverStats,
}

impl Solution {
    pub fn is_optimal(&self) -> bool {
        self.status == SolveStatus::Optimal
    }

    pub fn value(&self, problem: &ConicProblem, key: &VarKey) -> Option<f64> {
        problem.var(key).map(|v| self.primal[v.0])
    }

    /// Value of an optional variable, zero when it was never declared.
    pub fn value_or_zero(&self, problem: &ConicProblem, key: &VarKey) -> f64 {
        self.value(problem, key).unwrap_or(0.0)
    }

    pub fn eq_dual(&self, problem: &ConicProblem, label: &RowLabel) -> Option<f64> {
        problem.equality_index(label).map(|i| self.eq_duals[i])
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverOptions {
    /// Feasibility and duality-gap tolerance.
    pub tol: f64,
    pub max_iter: u32,
    pub verbose: bool,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            tol: 1e-8,
            max_iter: 200,
            verbose: false,
        }
    }
}

/// Any backend able to return primal values and row duals for a [`ConicProblem`].
pub trait ConicSolver: Send + Sync {
    fn name(&self) -> &str;
    fn solve(&self, problem: &ConicProblem) -> Result<Solution>;
}

#[cfg(test)]
mod tests {
    use super::*;

    fn v(t: usize) -> VarKey {
        VarKey::ImportP { t, phase: Phase::A }
    }

    #[test]
    fn compact_merges_duplicates() {
        let e = LinExpr::term(VarId(2), 1.0) + LinExpr::term(VarId(0), 3.0) + LinExpr::term(VarId(2), -1.0);
        let e = e.compact();
        assert_eq!(e.terms, vec![(VarId(0), 3.0)]);
    }

    #[test]
    fn duplicate_variable_rejected() {
        let mut p = ConicProblem::new();
        p.add_var(v(0), 0.0, 1.0).unwrap();
        assert!(p.add_var(v(0), 0.0, 1.0).is_err());
    }

    #[test]
    fn undeclared_variable_rejected() {
        let mut p = ConicProblem::new();
        let err = p.add_eq(
            RowLabel::SourceVoltage { t: 0, phase: Phase::A },
            LinExpr::var(VarId(4)),
            1.0,
        );
        assert!(matches!(err, Err(Error::Assembly(_))));
    }

    #[test]
    fn constants_move_to_rhs() {
        let mut p = ConicProblem::new();
        let x = p.add_var(v(0), 0.0, 1.0).unwrap();
        let mut e = LinExpr::var(x);
        e.add_constant(0.25);
        p.add_eq(RowLabel::SourceVoltage { t: 0, phase: Phase::A }, e, 1.0).unwrap();
        assert_eq!(p.equalities()[0].rhs, 0.75);
        assert_eq!(p.max_violation(&[0.75]), 0.0);
    }

    #[test]
    fn cone_residual() {
        let mut p = ConicProblem::new();
        let x = p.add_var(v(0), f64::NEG_INFINITY, f64::INFINITY).unwrap();
        let y = p.add_var(v(1), f64::NEG_INFINITY, f64::INFINITY).unwrap();
        p.add_soc(
            ConeLabel::Inverter { t: 0, prosumer: 0, phase: Phase::A },
            LinExpr::constant(5.0),
            vec![LinExpr::var(x), LinExpr::var(y)],
        )
        .unwrap();
        assert!((p.cones()[0].residual(&[3.0, 4.0])).abs() < 1e-15);
        assert!(p.max_violation(&[6.0, 8.0]) > 4.9);
    }
}

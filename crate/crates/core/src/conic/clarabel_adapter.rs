use clarabel::algebra::CscMatrix;
use clarabel::solver::{
    DefaultSettingsBuilder, DefaultSolver, IPSolver, NonnegativeConeT, SecondOrderConeT, SolverStatus,
    SupportedConeT, ZeroConeT,
};

use super::{ConicProblem, ConicSolver, Solution, SolveStatus, SolverOptions, SolverStats};
use crate::error::{Error, Result};

/// Interior-point backend built on Clarabel.
#[derive(Debug, Clone, Default)]
pub struct ClarabelSolver {
    pub options: SolverOptions,
}

impl ClarabelSolver {
    pub fn new(options: SolverOptions) -> Self {
        Self { options }
    }
}

enum Origin {
    Equality(usize),
    Inequality(usize),
    Bound,
}

struct Standard {
    rows: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<f64>,
    b: Vec<f64>,
    origin: Vec<Origin>,
    cones: Vec<SupportedConeT<f64>>,
}

impl Standard {
    fn push_row(&mut self, terms: impl IntoIterator<Item = (usize, f64)>, b: f64, origin: Origin) {
        let r = self.b.len();
        for (c, v) in terms {
            self.rows.push(r);
            self.cols.push(c);
            self.vals.push(v);
        }
        self.b.push(b);
        self.origin.push(origin);
    }
}

/// Rewrites the problem as `A x + s = b, s in K`.
fn standard_form(p: &ConicProblem) -> Standard {
    let mut st = Standard {
        rows: Vec::new(),
        cols: Vec::new(),
        vals: Vec::new(),
        b: Vec::new(),
        origin: Vec::new(),
        cones: Vec::new(),
    };
    let n = p.num_vars();
    let fixed: Vec<usize> = (0..n).filter(|&i| p.lower[i] == p.upper[i]).collect();

    for (i, row) in p.equalities().iter().enumerate() {
        st.push_row(row.expr.terms.iter().map(|&(v, c)| (v.0, c)), row.rhs, Origin::Equality(i));
    }
    for &i in &fixed {
        st.push_row([(i, 1.0)], p.lower[i], Origin::Bound);
    }
    let zeros = st.b.len();
    if zeros > 0 {
        st.cones.push(ZeroConeT(zeros));
    }

    for (i, row) in p.inequalities().iter().enumerate() {
        st.push_row(row.expr.terms.iter().map(|&(v, c)| (v.0, c)), row.rhs, Origin::Inequality(i));
    }
    for i in 0..n {
        if p.lower[i] == p.upper[i] {
            continue;
        }
        if p.upper[i].is_finite() {
            st.push_row([(i, 1.0)], p.upper[i], Origin::Bound);
        }
        if p.lower[i].is_finite() {
            st.push_row([(i, -1.0)], -p.lower[i], Origin::Bound);
        }
    }
    let nonneg = st.b.len() - zeros;
    if nonneg > 0 {
        st.cones.push(NonnegativeConeT(nonneg));
    }

    for cone in p.cones() {
        for member in std::iter::once(&cone.head).chain(&cone.tail) {
            st.push_row(member.terms.iter().map(|&(v, c)| (v.0, -c)), member.constant, Origin::Bound);
        }
        st.cones.push(SecondOrderConeT(1 + cone.tail.len()));
    }
    st
}

fn map_status(status: SolverStatus) -> SolveStatus {
    match status {
        SolverStatus::Solved => SolveStatus::Optimal,
        SolverStatus::PrimalInfeasible | SolverStatus::AlmostPrimalInfeasible => SolveStatus::Infeasible,
        SolverStatus::DualInfeasible | SolverStatus::AlmostDualInfeasible => SolveStatus::Unbounded,
        _ => SolveStatus::NumericalFailure,
    }
}

impl ConicSolver for ClarabelSolver {
    fn name(&self) -> &str {
        "clarabel"
    }

    fn solve(&self, problem: &ConicProblem) -> Result<Solution> {
        let n = problem.num_vars();
        let st = standard_form(problem);
        let m = st.b.len();
        let a = CscMatrix::new_from_triplets(m, n, st.rows, st.cols, st.vals);
        let p = CscMatrix::zeros((n, n));
        let tol = self.options.tol;
        let settings = DefaultSettingsBuilder::default()
            .verbose(self.options.verbose)
            .max_iter(self.options.max_iter)
            .tol_gap_abs(tol)
            .tol_gap_rel(tol)
            .tol_feas(tol)
            .max_threads(1)
            .build()
            .map_err(|e| Error::Solver(format!("invalid solver settings: {e}")))?;
        let mut solver = DefaultSolver::new(&p, problem.objective(), &a, &st.b, &st.cones, settings)
            .map_err(|e| Error::Solver(format!("solver setup failed: {e}")))?;
        solver.solve();

        let sol = &solver.solution;
        let info = &solver.info;
        let mut eq_duals = vec![0.0; problem.equalities().len()];
        let mut ineq_duals = vec![0.0; problem.inequalities().len()];
        // d(objective)/d(b) = -z for A x + s = b.
        for (origin, &z) in st.origin.iter().zip(&sol.z) {
            match *origin {
                Origin::Equality(i) => eq_duals[i] = -z,
                Origin::Inequality(i) => ineq_duals[i] = -z,
                Origin::Bound => {}
            }
        }
        let status = map_status(sol.status);
        let objective_value = if status == SolveStatus::Optimal {
            problem.objective_at(&sol.x)
        } else {
            f64::NAN
        };
        Ok(Solution {
            status,
            primal: sol.x.clone(),
            eq_duals,
            ineq_duals,
            objective_value,
            stats: SolverStats {
                solver: self.name().to_string(),
                iterations: sol.iterations,
                solve_time_s: sol.solve_time,
                primal_residual: sol.r_prim,
                dual_residual: sol.r_dual,
                gap_abs: info.gap_abs,
                gap_rel: info.gap_rel,
                raw_status: format!("{:?}", sol.status),
            },
        })
    }
}

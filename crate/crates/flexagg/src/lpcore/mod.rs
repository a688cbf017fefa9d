//! Assembly of robust-counterpart row sets into a linear program, and the
//! two solver backends: a sparse interior-point method (Clarabel) for the
//! full-size problems and a dense two-phase simplex for small instances
//! and duality cross-checks.

pub mod simplex;

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;

use thiserror::Error;

use crate::robust::{LinExpr, Rel, RobustRows, Row, VarRef};

#[derive(Error, Debug, Clone, PartialEq)]
pub enum LpError {
    #[error("bound on unknown variable {0}")]
    UnknownVar(String),
    #[error("inverted bound on {var}: [{lower}, {upper}]")]
    InvertedBound { var: String, lower: f64, upper: f64 },
    #[error("non-finite coefficient on {var} in row {row}")]
    NonFinite { var: String, row: usize },
    #[error("solver backend failed: {0}")]
    Backend(String),
}

#[derive(Copy, Clone, PartialEq, Eq, Debug)]
pub enum Sense {
    Minimize,
    Maximize,
}

#[derive(Copy, Clone, PartialEq, Eq, Debug)]
pub enum Backend {
    /// Dense two-phase simplex; small problems only.
    Simplex,
    /// Sparse interior point (Clarabel).
    InteriorPoint,
}

#[derive(Copy, Clone, PartialEq, Eq, Debug)]
pub enum SolveStatus {
    Optimal,
    Infeasible,
    Unbounded,
}

/// Solution in terms of the original variables and objective sense.
#[derive(Clone, Debug)]
pub struct LpSolution {
    pub status: SolveStatus,
    pub objective: f64,
    pub values: HashMap<VarRef, f64>,
    /// Dual multipliers per assembled row, in assembly order, for the
    /// minimization form.  Only the simplex backend provides them.
    pub duals: Option<Vec<f64>>,
}

/// An assembled linear program over a deterministic variable ordering.
#[derive(Clone, Debug)]
pub struct LinearProgram {
    vars: Vec<VarRef>,
    index: BTreeMap<VarRef, usize>,
    /// Minimization costs (maximization is pre-negated).
    cost: Vec<f64>,
    flip: f64,
    /// Merged rows: sorted `(var_index, coeff)` pairs, relation, rhs.
    rows: Vec<(Vec<(usize, f64)>, Rel, f64)>,
}

impl LinearProgram {
    /// Collects all rows of the given sets plus `extra_rows`, dedups
    /// variables into a sorted ordering, merges duplicate coefficients,
    /// and installs `bounds` as explicit rows.  Bounds on variables that
    /// appear nowhere else are rejected.
    pub fn assemble(
        sets: &[&RobustRows],
        extra_rows: &[Row],
        objective: &LinExpr,
        sense: Sense,
        bounds: &[(VarRef, f64, f64)],
    ) -> Result<Self, LpError> {
        let mut index: BTreeMap<VarRef, usize> = BTreeMap::new();
        let all_rows: Vec<&Row> = sets
            .iter()
            .flat_map(|s| s.rows.iter())
            .chain(extra_rows.iter())
            .collect();
        for row in &all_rows {
            for (v, _) in &row.coeffs {
                index.entry(*v).or_insert(0);
            }
        }
        for (v, _) in &objective.terms {
            index.entry(*v).or_insert(0);
        }
        for (i, v) in index.values_mut().enumerate() {
            *v = i;
        }
        let vars: Vec<VarRef> = index.keys().copied().collect();
        let n = vars.len();

        let mut rows = Vec::with_capacity(all_rows.len() + 2 * bounds.len());
        for (ri, row) in all_rows.iter().enumerate() {
            let mut acc: BTreeMap<usize, f64> = BTreeMap::new();
            for (v, c) in &row.coeffs {
                if !c.is_finite() {
                    return Err(LpError::NonFinite {
                        var: v.to_string(),
                        row: ri,
                    });
                }
                *acc.entry(index[v]).or_insert(0.0) += c;
            }
            let coeffs: Vec<(usize, f64)> =
                acc.into_iter().filter(|&(_, c)| c != 0.0).collect();
            rows.push((coeffs, row.rel, row.rhs));
        }
        for (v, lower, upper) in bounds {
            let Some(&j) = index.get(v) else {
                return Err(LpError::UnknownVar(v.to_string()));
            };
            if lower > upper {
                return Err(LpError::InvertedBound {
                    var: v.to_string(),
                    lower: *lower,
                    upper: *upper,
                });
            }
            if lower == upper {
                rows.push((vec![(j, 1.0)], Rel::Eq, *lower));
                continue;
            }
            if upper.is_finite() {
                rows.push((vec![(j, 1.0)], Rel::Le, *upper));
            }
            if lower.is_finite() {
                rows.push((vec![(j, -1.0)], Rel::Le, -lower));
            }
        }

        let flip = match sense {
            Sense::Minimize => 1.0,
            Sense::Maximize => -1.0,
        };
        let mut cost = vec![0.0; n];
        for (v, c) in &objective.terms {
            cost[index[v]] += flip * c;
        }
        Ok(LinearProgram {
            vars,
            index,
            cost,
            flip,
            rows,
        })
    }

    pub fn n_vars(&self) -> usize {
        self.vars.len()
    }

    pub fn n_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn var_index(&self, v: &VarRef) -> Option<usize> {
        self.index.get(v).copied()
    }

    pub fn solve(&self, backend: Backend) -> Result<LpSolution, LpError> {
        match backend {
            Backend::Simplex => Ok(self.solve_simplex()),
            Backend::InteriorPoint => self.solve_clarabel(),
        }
    }

    fn wrap(&self, status: SolveStatus, x: &[f64], duals: Option<Vec<f64>>) -> LpSolution {
        let values: HashMap<VarRef, f64> = self
            .vars
            .iter()
            .zip(x)
            .map(|(v, &val)| (*v, val))
            .collect();
        let objective = self.flip
            * self
                .cost
                .iter()
                .zip(x)
                .map(|(c, v)| c * v)
                .sum::<f64>();
        LpSolution {
            status,
            objective,
            values,
            duals,
        }
    }

    /// Dense simplex path: every variable is split into a difference of
    /// nonnegative parts and every `<=` row gets a slack.
    fn solve_simplex(&self) -> LpSolution {
        let n = self.vars.len();
        let m = self.rows.len();
        let n_slack = self.rows.iter().filter(|r| r.1 == Rel::Le).count();
        let cols = 2 * n + n_slack;
        let mut a = vec![vec![0.0; cols]; m];
        let mut b = vec![0.0; m];
        let mut slack = 2 * n;
        for (i, (coeffs, rel, rhs)) in self.rows.iter().enumerate() {
            for &(j, c) in coeffs {
                a[i][j] = c;
                a[i][n + j] = -c;
            }
            if *rel == Rel::Le {
                a[i][slack] = 1.0;
                slack += 1;
            }
            b[i] = *rhs;
        }
        let mut c = vec![0.0; cols];
        for j in 0..n {
            c[j] = self.cost[j];
            c[n + j] = -self.cost[j];
        }
        let r = simplex::solve_standard(&simplex::StandardLp { a, b, c });
        let status = match r.status {
            simplex::SimplexStatus::Optimal => SolveStatus::Optimal,
            simplex::SimplexStatus::Infeasible => SolveStatus::Infeasible,
            simplex::SimplexStatus::Unbounded => SolveStatus::Unbounded,
        };
        let x: Vec<f64> = (0..n).map(|j| r.x[j] - r.x[n + j]).collect();
        self.wrap(status, &x, Some(r.duals))
    }

    fn solve_clarabel(&self) -> Result<LpSolution, LpError> {
        use clarabel::algebra::CscMatrix;
        use clarabel::solver::{
            DefaultSettings, DefaultSolver, IPSolver, SolverStatus, SupportedConeT,
        };

        let n = self.vars.len();
        // equality rows first, then inequality rows
        let mut order: Vec<usize> = Vec::with_capacity(self.rows.len());
        order.extend((0..self.rows.len()).filter(|&i| self.rows[i].1 == Rel::Eq));
        let n_eq = order.len();
        order.extend((0..self.rows.len()).filter(|&i| self.rows[i].1 == Rel::Le));
        let n_le = order.len() - n_eq;

        let mut cols: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
        let mut b = Vec::with_capacity(order.len());
        for (ri, &orig) in order.iter().enumerate() {
            let (coeffs, _, rhs) = &self.rows[orig];
            for &(j, c) in coeffs {
                cols[j].push((ri, c));
            }
            b.push(*rhs);
        }
        let mut colptr = Vec::with_capacity(n + 1);
        let mut rowval = Vec::new();
        let mut nzval = Vec::new();
        colptr.push(0);
        for col in &cols {
            rowval.extend(col.iter().map(|&(r, _)| r));
            nzval.extend(col.iter().map(|&(_, v)| v));
            colptr.push(rowval.len());
        }
        let a = CscMatrix::new(order.len(), n, colptr, rowval, nzval);
        let p = CscMatrix::zeros((n, n));
        let cones: Vec<SupportedConeT<f64>> = vec![
            SupportedConeT::ZeroConeT(n_eq),
            SupportedConeT::NonnegativeConeT(n_le),
        ];
        let settings = DefaultSettings {
            verbose: std::env::var_os("FLEXAGG_LP_VERBOSE").is_some(),
            max_iter: 500,
            ..DefaultSettings::default()
        };
        let mut solver = DefaultSolver::new(&p, &self.cost, &a, &b, &cones, settings)
            .map_err(|e| LpError::Backend(format!("{e:?}")))?;
        solver.solve();
        let status = match solver.solution.status {
            SolverStatus::Solved | SolverStatus::AlmostSolved => SolveStatus::Optimal,
            SolverStatus::PrimalInfeasible | SolverStatus::AlmostPrimalInfeasible => {
                SolveStatus::Infeasible
            }
            SolverStatus::DualInfeasible | SolverStatus::AlmostDualInfeasible => {
                SolveStatus::Unbounded
            }
            // degenerate optima can stall the last step; accept the
            // iterate if it is primal feasible to tight tolerance
            SolverStatus::NumericalError | SolverStatus::InsufficientProgress
                if self.max_violation(&solver.solution.x) <= 1e-6 =>
            {
                SolveStatus::Optimal
            }
            other => return Err(LpError::Backend(format!("solver status {other:?}"))),
        };
        Ok(self.wrap(status, &solver.solution.x, None))
    }

    /// Largest constraint violation of a candidate point.
    fn max_violation(&self, x: &[f64]) -> f64 {
        let mut worst: f64 = 0.0;
        for (coeffs, rel, rhs) in &self.rows {
            let lhs: f64 = coeffs.iter().map(|&(j, c)| c * x[j]).sum();
            let v = match rel {
                Rel::Le => lhs - rhs,
                Rel::Eq => (lhs - rhs).abs(),
            };
            worst = worst.max(v);
        }
        worst
    }

    /// Human-readable listing of the assembled program.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let sense = if self.flip > 0.0 { "min" } else { "max" };
        write!(out, "{sense}:").unwrap();
        for (j, c) in self.cost.iter().enumerate() {
            if *c != 0.0 {
                write!(out, " {:+} {}", self.flip * c, self.vars[j]).unwrap();
            }
        }
        out.push('\n');
        for (coeffs, rel, rhs) in &self.rows {
            for &(j, c) in coeffs {
                write!(out, " {:+} {}", c, self.vars[j]).unwrap();
            }
            let r = match rel {
                Rel::Le => "<=",
                Rel::Eq => "=",
            };
            writeln!(out, " {r} {rhs}").unwrap();
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::robust::{AuxFamily, Owner};
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn v(i: u32) -> VarRef {
        VarRef::Aux {
            owner: Owner::Shared,
            family: AuxFamily::Epigraph,
            i,
            j: 0,
        }
    }

    fn le(coeffs: Vec<(VarRef, f64)>, rhs: f64) -> Row {
        Row {
            coeffs,
            rel: Rel::Le,
            rhs,
        }
    }

    fn assert_near(a: f64, b: f64, tol: f64) {
        assert!((a - b).abs() <= tol, "{a} vs {b}");
    }

    #[test]
    fn both_backends_agree_on_a_small_program() {
        // max 3x + 5y  s.t. x <= 4, 2y <= 12, 3x + 2y <= 18, x,y >= 0
        let rows = vec![
            le(vec![(v(0), 1.0)], 4.0),
            le(vec![(v(1), 2.0)], 12.0),
            le(vec![(v(0), 3.0), (v(1), 2.0)], 18.0),
        ];
        let mut obj = LinExpr::default();
        obj.push(v(0), 3.0);
        obj.push(v(1), 5.0);
        let bounds = [(v(0), 0.0, f64::INFINITY), (v(1), 0.0, f64::INFINITY)];
        let lp = LinearProgram::assemble(&[], &rows, &obj, Sense::Maximize, &bounds).unwrap();
        for backend in [Backend::Simplex, Backend::InteriorPoint] {
            let s = lp.solve(backend).unwrap();
            assert_eq!(s.status, SolveStatus::Optimal);
            assert_near(s.objective, 36.0, 1e-7);
            assert_near(s.values[&v(0)], 2.0, 1e-6);
            assert_near(s.values[&v(1)], 6.0, 1e-6);
        }
    }

    #[test]
    fn infeasible_and_unbounded_statuses() {
        let rows = vec![
            le(vec![(v(0), 1.0)], 1.0),
            le(vec![(v(0), -1.0)], -2.0), // x >= 2 conflicts with x <= 1
        ];
        let obj = LinExpr::term(v(0), 1.0);
        let lp = LinearProgram::assemble(&[], &rows, &obj, Sense::Minimize, &[]).unwrap();
        for backend in [Backend::Simplex, Backend::InteriorPoint] {
            assert_eq!(lp.solve(backend).unwrap().status, SolveStatus::Infeasible);
        }

        let rows = vec![le(vec![(v(0), 1.0)], 1.0)];
        let lp = LinearProgram::assemble(&[], &rows, &obj, Sense::Minimize, &[]).unwrap();
        for backend in [Backend::Simplex, Backend::InteriorPoint] {
            assert_eq!(lp.solve(backend).unwrap().status, SolveStatus::Unbounded);
        }
    }

    #[test]
    fn duplicate_coefficients_merge_and_bounds_validate() {
        // x + x <= 4 must behave as 2x <= 4
        let rows = vec![le(vec![(v(0), 1.0), (v(0), 1.0)], 4.0)];
        let obj = LinExpr::term(v(0), 1.0);
        let lp = LinearProgram::assemble(
            &[],
            &rows,
            &obj,
            Sense::Maximize,
            &[(v(0), 0.0, f64::INFINITY)],
        )
        .unwrap();
        let s = lp.solve(Backend::Simplex).unwrap();
        assert_near(s.values[&v(0)], 2.0, 1e-9);

        // bound on a variable that appears nowhere is rejected
        let err = LinearProgram::assemble(&[], &rows, &obj, Sense::Minimize, &[(v(9), 0.0, 1.0)]);
        assert!(matches!(err, Err(LpError::UnknownVar(_))));
        // inverted bounds are rejected
        let err = LinearProgram::assemble(&[], &rows, &obj, Sense::Minimize, &[(v(0), 2.0, 1.0)]);
        assert!(matches!(err, Err(LpError::InvertedBound { .. })));
    }

    #[test]
    fn fixed_bounds_pin_variables() {
        let rows = vec![le(vec![(v(0), 1.0), (v(1), 1.0)], 10.0)];
        let mut obj = LinExpr::default();
        obj.push(v(0), 1.0);
        obj.push(v(1), 1.0);
        let lp = LinearProgram::assemble(
            &[],
            &rows,
            &obj,
            Sense::Maximize,
            &[(v(0), 3.0, 3.0), (v(1), 0.0, f64::INFINITY)],
        )
        .unwrap();
        let s = lp.solve(Backend::Simplex).unwrap();
        assert_near(s.values[&v(0)], 3.0, 1e-9);
        assert_near(s.values[&v(1)], 7.0, 1e-9);
    }

    #[test]
    fn row_permutation_does_not_change_the_solution() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let n = 8;
        let mut rows = Vec::new();
        // box plus random cuts; strictly convex-like unique optimum via
        // distinct costs
        for j in 0..n {
            rows.push(le(vec![(v(j), 1.0)], 1.0 + j as f64 * 0.1));
            rows.push(le(vec![(v(j), -1.0)], 1.0));
        }
        for _ in 0..10 {
            let coeffs: Vec<(VarRef, f64)> =
                (0..n).map(|j| (v(j), rng.gen_range(-1.0..1.0))).collect();
            rows.push(le(coeffs, rng.gen_range(0.5..2.0)));
        }
        let mut obj = LinExpr::default();
        for j in 0..n {
            obj.push(v(j), 1.0 + j as f64 * 0.37);
        }
        let lp = LinearProgram::assemble(&[], &rows, &obj, Sense::Maximize, &[]).unwrap();
        let base = lp.solve(Backend::InteriorPoint).unwrap();
        for seed in 0..5 {
            let mut shuffled = rows.clone();
            shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
            let lp2 =
                LinearProgram::assemble(&[], &shuffled, &obj, Sense::Maximize, &[]).unwrap();
            let s = lp2.solve(Backend::InteriorPoint).unwrap();
            assert_near(s.objective, base.objective, 1e-8);
            for j in 0..n {
                assert_near(s.values[&v(j)], base.values[&v(j)], 1e-6);
            }
        }
    }

    #[test]
    fn simplex_duality_gap_on_random_instances() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for trial in 0..20 {
            let n = rng.gen_range(5..40);
            let m = rng.gen_range(5..60);
            // feasible by construction around a random interior point
            let x0: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let mut rows = Vec::new();
            for _ in 0..m {
                let coeffs: Vec<(VarRef, f64)> = (0..n)
                    .map(|j| (v(j as u32), rng.gen_range(-1.0..1.0)))
                    .collect();
                let ax0: f64 = coeffs.iter().enumerate().map(|(j, (_, c))| c * x0[j]).sum();
                rows.push(le(coeffs, ax0 + rng.gen_range(0.1..1.0)));
            }
            // bounded via box rows
            for j in 0..n {
                rows.push(le(vec![(v(j as u32), 1.0)], 2.0));
                rows.push(le(vec![(v(j as u32), -1.0)], 2.0));
            }
            let mut obj = LinExpr::default();
            for j in 0..n {
                obj.push(v(j as u32), rng.gen_range(-1.0..1.0));
            }
            let lp = LinearProgram::assemble(&[], &rows, &obj, Sense::Minimize, &[]).unwrap();
            let s = lp.solve(Backend::Simplex).unwrap();
            assert_eq!(s.status, SolveStatus::Optimal, "trial {trial}");
            let duals = s.duals.as_ref().unwrap();
            let by: f64 = lp
                .rows
                .iter()
                .zip(duals)
                .map(|((_, _, rhs), y)| rhs * y)
                .sum();
            assert!(
                (by - s.objective).abs() <= 1e-6,
                "trial {trial}: gap {} vs {}",
                by,
                s.objective
            );
        }
    }

    #[test]
    fn text_listing_contains_canonical_names(){
        let rows = vec![le(vec![(v(0), 1.0)], 4.0)];
        let obj = LinExpr::term(v(0), 1.0);
        let lp = LinearProgram::assemble(&[], &rows, &obj, Sense::Maximize, &[]).unwrap();
        let text = lp.to_text();
        assert!(text.contains("max:"));
        assert!(text.contains("aux[*:Epigraph:0:0]"));
        assert!(text.contains("<= 4"));
    }
}

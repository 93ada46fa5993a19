//! Generic linear programs and a dense bounded-variable revised simplex.
//!
//! Nothing in here knows about DEA. Variables carry explicit bounds (either
//! side may be infinite), so free variables stay free instead of being split
//! into a difference of non-negative parts.

mod mps;
mod simplex;

use std::collections::HashMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use mps::write_mps;

#[derive(Debug, Error, PartialEq)]
pub enum LpError {
    #[error("duplicate variable name `{0}`")]
    DuplicateVariable(String),
    #[error("variable `{name}` has lower bound {lower} above upper bound {upper}")]
    InvertedBounds { name: String, lower: f64, upper: f64 },
    #[error("constraint `{constraint}` references undeclared variable index {index}")]
    UndeclaredVariable { constraint: String, index: usize },
    #[error("non-finite coefficient in `{0}`")]
    NonFinite(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct VarId(pub usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Sense {
    Maximize,
    Minimize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Relation {
    Le,
    Eq,
    Ge,
}

impl fmt::Display for Relation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Relation::Le => "<=",
            Relation::Eq => "=",
            Relation::Ge => ">=",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Variable {
    pub name: String,
    pub lower: f64,
    pub upper: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Constraint {
    pub name: String,
    pub coefficients: Vec<(VarId, f64)>,
    pub relation: Relation,
    pub rhs: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearProgram {
    pub sense: Sense,
    variables: Vec<Variable>,
    objective: Vec<(VarId, f64)>,
    constraints: Vec<Constraint>,
    names: HashMap<String, VarId>,
}

impl LinearProgram {
    pub fn new(sense: Sense) -> Self {
        Self {
            sense,
            variables: Vec::new(),
            objective: Vec::new(),
            constraints: Vec::new(),
            names: HashMap::new(),
        }
    }

    pub fn add_variable(&mut self, name: &str, lower: f64, upper: f64) -> Result<VarId, LpError> {
        if self.names.contains_key(name) {
            return Err(LpError::DuplicateVariable(name.to_string()));
        }
        if lower > upper || lower.is_nan() || upper.is_nan() {
            return Err(LpError::InvertedBounds {
                name: name.to_string(),
                lower,
                upper,
            });
        }
        let id = VarId(self.variables.len());
        self.variables.push(Variable {
            name: name.to_string(),
            lower,
            upper,
        });
        self.names.insert(name.to_string(), id);
        Ok(id)
    }

    /// Accumulates into the objective coefficient of `var`.
    pub fn add_objective(&mut self, var: VarId, coef: f64) {
        match self.objective.iter_mut().find(|(v, _)| *v == var) {
            Some(slot) => slot.1 += coef,
            None => self.objective.push((var, coef)),
        }
    }

    pub fn add_constraint(
        &mut self,
        name: &str,
        coefficients: Vec<(VarId, f64)>,
        relation: Relation,
        rhs: f64,
    ) -> Result<(), LpError> {
        for &(VarId(index), c) in &coefficients {
            if index >= self.variables.len() {
                return Err(LpError::UndeclaredVariable {
                    constraint: name.to_string(),
                    index,
                });
            }
            if !c.is_finite() {
                return Err(LpError::NonFinite(name.to_string()));
            }
        }
        if !rhs.is_finite() {
            return Err(LpError::NonFinite(name.to_string()));
        }
        self.constraints.push(Constraint {
            name: name.to_string(),
            coefficients,
            relation,
            rhs,
        });
        Ok(())
    }

    pub fn variables(&self) -> &[Variable] {
        &self.variables
    }

    pub fn constraints(&self) -> &[Constraint] {
        &self.constraints
    }

    pub fn objective(&self) -> &[(VarId, f64)] {
        &self.objective
    }

    pub fn var(&self, name: &str) -> Option<VarId> {
        self.names.get(name).copied()
    }

    pub fn n_variables(&self) -> usize {
        self.variables.len()
    }

    pub fn n_constraints(&self) -> usize {
        self.constraints.len()
    }

    /// Objective value of an arbitrary point.
    pub fn evaluate(&self, values: &[f64]) -> f64 {
        self.objective.iter().map(|(v, c)| c * values[v.0]).sum()
    }

    /// Largest bound or row violation of a point.
    pub fn max_violation(&self, values: &[f64]) -> f64 {
        let mut worst: f64 = 0.0;
        for (v, x) in self.variables.iter().zip(values) {
            worst = worst.max(v.lower - x).max(x - v.upper);
        }
        for c in &self.constraints {
            let lhs: f64 = c.coefficients.iter().map(|(v, a)| a * values[v.0]).sum();
            let viol = match c.relation {
                Relation::Le => lhs - c.rhs,
                Relation::Ge => c.rhs - lhs,
                Relation::Eq => (lhs - c.rhs).abs(),
            };
            worst = worst.max(viol);
        }
        worst
    }

    pub fn solve(&self, options: &SolveOptions) -> LpSolution {
        simplex::solve(self, options)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolveOptions {
    pub feasibility_tol: f64,
    pub optimality_tol: f64,
    pub iteration_limit: usize,
    /// Consecutive degenerate pivots tolerated before switching to Bland's rule.
    pub degenerate_pivot_limit: usize,
}

impl Default for SolveOptions {
    fn default() -> Self {
        Self {
            feasibility_tol: 1e-8,
            optimality_tol: 1e-9,
            iteration_limit: 50_000,
            degenerate_pivot_limit: 50,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LpStatus {
    Optimal,
    Infeasible,
    Unbounded,
    IterationLimit,
}

impl fmt::Display for LpStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LpStatus::Optimal => "optimal",
            LpStatus::Infeasible => "infeasible",
            LpStatus::Unbounded => "unbounded",
            LpStatus::IterationLimit => "iteration-limit",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LpSolution {
    pub status: LpStatus,
    pub objective: f64,
    /// Empty when infeasible; the last incumbent for unbounded and
    /// iteration-limit outcomes.
    pub values: Vec<f64>,
    pub iterations: usize,
}

impl LpSolution {
    pub fn is_optimal(&self) -> bool {
        self.status == LpStatus::Optimal
    }

    pub fn value(&self, var: VarId) -> f64 {
        self.values[var.0]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::CounterRng;

    const INF: f64 = f64::INFINITY;

    fn opts() -> SolveOptions {
        SolveOptions::default()
    }

    #[test]
    fn single_upper_bound() {
        let mut lp = LinearProgram::new(Sense::Maximize);
        let x = lp.add_variable("x", 0.0, INF).unwrap();
        lp.add_objective(x, 1.0);
        lp.add_constraint("c", vec![(x, 1.0)], Relation::Le, 3.0).unwrap();
        let s = lp.solve(&opts());
        assert_eq!(s.status, LpStatus::Optimal);
        assert!((s.objective - 3.0).abs() < 1e-12);
        assert!((s.value(x) - 3.0).abs() < 1e-12);
    }

    #[test]
    fn degenerate_face_is_deterministic() {
        let build = || {
            let mut lp = LinearProgram::new(Sense::Maximize);
            let x = lp.add_variable("x", 0.0, INF).unwrap();
            let y = lp.add_variable("y", 0.0, INF).unwrap();
            lp.add_objective(x, 1.0);
            lp.add_objective(y, 1.0);
            lp.add_constraint("c", vec![(x, 1.0), (y, 1.0)], Relation::Le, 1.0)
                .unwrap();
            lp
        };
        let a = build().solve(&opts());
        let b = build().solve(&opts());
        assert!((a.objective - 1.0).abs() < 1e-12);
        assert_eq!(a, b);
        assert_eq!(a.values.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
                   b.values.iter().map(|v| v.to_bits()).collect::<Vec<_>>());
    }

    #[test]
    fn infeasible_detected() {
        let mut lp = LinearProgram::new(Sense::Maximize);
        let x = lp.add_variable("x", 0.0, INF).unwrap();
        lp.add_objective(x, 1.0);
        lp.add_constraint("a", vec![(x, 1.0)], Relation::Le, 1.0).unwrap();
        lp.add_constraint("b", vec![(x, 1.0)], Relation::Ge, 2.0).unwrap();
        let s = lp.solve(&opts());
        assert_eq!(s.status, LpStatus::Infeasible);
        assert!(s.values.is_empty());
    }

    #[test]
    fn unbounded_detected() {
        let mut lp = LinearProgram::new(Sense::Maximize);
        let x = lp.add_variable("x", 0.0, INF).unwrap();
        let y = lp.add_variable("y", 0.0, INF).unwrap();
        lp.add_objective(x, 1.0);
        lp.add_constraint("a", vec![(x, 1.0), (y, -1.0)], Relation::Le, 1.0)
            .unwrap();
        assert_eq!(lp.solve(&opts()).status, LpStatus::Unbounded);
    }

    #[test]
    fn free_variable_keeps_its_sign() {
        // max -x s.t. x >= -2, x free  => x = -2
        let mut lp = LinearProgram::new(Sense::Maximize);
        let x = lp.add_variable("x", -INF, INF).unwrap();
        lp.add_objective(x, -1.0);
        lp.add_constraint("a", vec![(x, 1.0)], Relation::Ge, -2.0).unwrap();
        let s = lp.solve(&opts());
        assert_eq!(s.status, LpStatus::Optimal);
        assert!((s.value(x) + 2.0).abs() < 1e-12);
    }

    #[test]
    fn equality_and_boxed_bounds() {
        // min x + 2y s.t. x + y = 4, 0 <= x <= 3, y >= 0  => x = 3, y = 1
        let mut lp = LinearProgram::new(Sense::Minimize);
        let x = lp.add_variable("x", 0.0, 3.0).unwrap();
        let y = lp.add_variable("y", 0.0, INF).unwrap();
        lp.add_objective(x, 1.0);
        lp.add_objective(y, 2.0);
        lp.add_constraint("e", vec![(x, 1.0), (y, 1.0)], Relation::Eq, 4.0)
            .unwrap();
        let s = lp.solve(&opts());
        assert_eq!(s.status, LpStatus::Optimal);
        assert!((s.objective - 5.0).abs() < 1e-12);
        assert!((s.value(x) - 3.0).abs() < 1e-12);
    }

    #[test]
    fn iteration_limit_reports_status() {
        let mut lp = LinearProgram::new(Sense::Maximize);
        let x = lp.add_variable("x", 0.0, INF).unwrap();
        let y = lp.add_variable("y", 0.0, INF).unwrap();
        lp.add_objective(x, 1.0);
        lp.add_objective(y, 1.0);
        lp.add_constraint("a", vec![(x, 1.0), (y, 2.0)], Relation::Le, 4.0)
            .unwrap();
        lp.add_constraint("b", vec![(x, 3.0), (y, 1.0)], Relation::Le, 6.0)
            .unwrap();
        let s = lp.solve(&SolveOptions {
            iteration_limit: 1,
            ..opts()
        });
        assert_eq!(s.status, LpStatus::IterationLimit);
        assert_eq!(s.values.len(), 2);
    }

    #[test]
    fn malformed_programs_rejected() {
        let mut lp = LinearProgram::new(Sense::Maximize);
        assert!(lp.add_variable("x", 1.0, 0.0).is_err());
        let x = lp.add_variable("x", 0.0, 1.0).unwrap();
        assert!(matches!(
            lp.add_variable("x", 0.0, 1.0),
            Err(LpError::DuplicateVariable(_))
        ));
        assert!(lp
            .add_constraint("c", vec![(VarId(7), 1.0)], Relation::Le, 1.0)
            .is_err());
        assert!(lp
            .add_constraint("c", vec![(x, f64::NAN)], Relation::Le, 1.0)
            .is_err());
    }

    #[test]
    fn empty_rows_are_dropped_or_flag_infeasibility() {
        let mut lp = LinearProgram::new(Sense::Maximize);
        let x = lp.add_variable("x", 0.0, 2.0).unwrap();
        lp.add_objective(x, 1.0);
        lp.add_constraint("empty", vec![(x, 0.0)], Relation::Le, 1.0).unwrap();
        assert!((lp.solve(&opts()).objective - 2.0).abs() < 1e-12);
        lp.add_constraint("bad", vec![], Relation::Ge, 1.0).unwrap();
        assert_eq!(lp.solve(&opts()).status, LpStatus::Infeasible);
    }

    /// Random bounded LP: max c·x, A x <= b with positive A, b, x >= 0.
    fn random_lp(rng: &mut CounterRng, n: usize, m: usize) -> (LinearProgram, Vec<Vec<f64>>, Vec<f64>, Vec<f64>) {
        let mut lp = LinearProgram::new(Sense::Maximize);
        let vars: Vec<VarId> = (0..n)
            .map(|j| lp.add_variable(&format!("x{j}"), 0.0, INF).unwrap())
            .collect();
        let c: Vec<f64> = (0..n).map(|_| rng.uniform_range(-1.0, 3.0)).collect();
        for (v, cj) in vars.iter().zip(&c) {
            lp.add_objective(*v, *cj);
        }
        let mut a = Vec::new();
        let mut b = Vec::new();
        for i in 0..m {
            let row: Vec<f64> = (0..n).map(|_| rng.uniform_range(0.05, 2.0)).collect();
            let rhs = rng.uniform_range(1.0, 10.0);
            lp.add_constraint(
                &format!("r{i}"),
                vars.iter().zip(&row).map(|(v, a)| (*v, *a)).collect(),
                Relation::Le,
                rhs,
            )
            .unwrap();
            a.push(row);
            b.push(rhs);
        }
        (lp, a, b, c)
    }

    /// Gaussian elimination with partial pivoting; None when singular.
    fn solve_dense(mut m: Vec<Vec<f64>>, mut r: Vec<f64>) -> Option<Vec<f64>> {
        let n = r.len();
        for k in 0..n {
            let p = (k..n).max_by(|&i, &j| m[i][k].abs().total_cmp(&m[j][k].abs()))?;
            if m[p][k].abs() < 1e-12 {
                return None;
            }
            m.swap(k, p);
            r.swap(k, p);
            for i in k + 1..n {
                let f = m[i][k] / m[k][k];
                for j in k..n {
                    m[i][j] -= f * m[k][j];
                }
                r[i] -= f * r[k];
            }
        }
        let mut x = vec![0.0; n];
        for k in (0..n).rev() {
            let s: f64 = (k + 1..n).map(|j| m[k][j] * x[j]).sum();
            x[k] = (r[k] - s) / m[k][k];
        }
        Some(x)
    }

    /// Enumerate every basic solution: choose n active hyperplanes among the
    /// m rows and n non-negativity bounds, keep the feasible ones.
    fn vertex_enumeration_max(a: &[Vec<f64>], b: &[f64], c: &[f64]) -> f64 {
        let n = c.len();
        let m = a.len();
        let mut rows: Vec<(Vec<f64>, f64)> = a.iter().cloned().zip(b.iter().copied()).collect();
        for j in 0..n {
            let mut e = vec![0.0; n];
            e[j] = 1.0;
            rows.push((e, 0.0));
        }
        let mut best = f64::NEG_INFINITY;
        let mut pick = Vec::with_capacity(n);
        combos(rows.len(), n, 0, &mut pick, &mut |chosen| {
            let mat = chosen.iter().map(|&i| rows[i].0.clone()).collect();
            let rhs = chosen.iter().map(|&i| rows[i].1).collect();
            if let Some(x) = solve_dense(mat, rhs) {
                let feasible = x.iter().all(|v| *v >= -1e-9)
                    && (0..m).all(|i| {
                        a[i].iter().zip(&x).map(|(p, q)| p * q).sum::<f64>() <= b[i] + 1e-9
                    });
                if feasible {
                    best = best.max(c.iter().zip(&x).map(|(p, q)| p * q).sum());
                }
            }
        });
        best
    }

    fn combos(total: usize, k: usize, start: usize, pick: &mut Vec<usize>, f: &mut dyn FnMut(&[usize])) {
        if pick.len() == k {
            f(pick);
            return;
        }
        for i in start..total {
            pick.push(i);
            combos(total, k, i + 1, pick, f);
            pick.pop();
        }
    }

    #[test]
    fn matches_vertex_enumeration_on_random_programs() {
        let mut rng = CounterRng::new(2024, 11);
        for _ in 0..40 {
            let (lp, a, b, c) = random_lp(&mut rng, 6, 8);
            let s = lp.solve(&opts());
            assert_eq!(s.status, LpStatus::Optimal);
            let oracle = vertex_enumeration_max(&a, &b, &c);
            assert!((s.objective - oracle).abs() < 1e-8, "{} vs {}", s.objective, oracle);
            assert!(lp.max_violation(&s.values) < 1e-8);
        }
    }

    #[test]
    fn weak_duality_against_feasible_dual_points() {
        // Any y >= 0 with A^T y >= c gives the bound b·y >= optimum.
        let mut rng = CounterRng::new(99, 2);
        for _ in 0..20 {
            let (lp, a, b, c) = random_lp(&mut rng, 5, 7);
            let s = lp.solve(&opts());
            for _ in 0..20 {
                let mut y: Vec<f64> = (0..a.len()).map(|_| rng.uniform_range(0.0, 2.0)).collect();
                // scale up until dual feasible
                let need = (0..c.len())
                    .map(|j| {
                        let col: f64 = a.iter().zip(&y).map(|(row, yi)| row[j] * yi).sum();
                        if c[j] <= 0.0 { 0.0 } else { c[j] / col }
                    })
                    .fold(0.0f64, f64::max);
                if need > 1.0 {
                    y.iter_mut().for_each(|v| *v *= need);
                }
                let bound: f64 = b.iter().zip(&y).map(|(p, q)| p * q).sum();
                assert!(s.objective <= bound + 1e-9);
            }
        }
    }

    #[test]
    fn row_scaling_leaves_objective_unchanged() {
        let mut rng = CounterRng::new(5, 5);
        for _ in 0..20 {
            let (lp, a, b, c) = random_lp(&mut rng, 6, 8);
            let base = lp.solve(&opts()).objective;
            let mut scaled = LinearProgram::new(Sense::Maximize);
            let vars: Vec<VarId> = (0..c.len())
                .map(|j| scaled.add_variable(&format!("x{j}"), 0.0, INF).unwrap())
                .collect();
            for (v, cj) in vars.iter().zip(&c) {
                scaled.add_objective(*v, *cj);
            }
            for (i, (row, rhs)) in a.iter().zip(&b).enumerate() {
                let k = rng.uniform_range(0.01, 100.0);
                scaled
                    .add_constraint(
                        &format!("r{i}"),
                        vars.iter().zip(row).map(|(v, x)| (*v, x * k)).collect(),
                        Relation::Le,
                        rhs * k,
                    )
                    .unwrap();
            }
            let other = scaled.solve(&opts()).objective;
            assert!((base - other).abs() < 1e-8, "{base} vs {other}");
        }
    }
}

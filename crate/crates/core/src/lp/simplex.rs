//! Bounded-variable primal revised simplex.
//!
//! Rows are written in computational form `A x - r = 0` with one logical
//! variable `r_i` per row whose bounds encode the relation. A basis is then a
//! set `S` of basic structural columns plus the logicals of all rows except a
//! set `T` of "tight" rows (logical nonbasic), with `|S| = |T|`. Every basis
//! solve reduces to the small square block `A[T, S]`, which is refactored from
//! scratch on each iteration; this keeps the work per pivot at
//! `O(|S|^3 + m n)` and avoids drift from update formulas.
//!
//! Phase 1 minimises the sum of bound violations of basic variables and
//! phase 2 the (sign-adjusted) objective. Pricing is Dantzig's rule with a
//! Harris two-pass ratio test; after a run of degenerate pivots both switch to
//! Bland's smallest-index rule until progress resumes.

use super::{LinearProgram, LpSolution, LpStatus, Relation, Sense, SolveOptions};

const PIVOT_TOL: f64 = 1e-7;
const DEGENERATE_STEP: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum State {
    Basic,
    AtLower,
    AtUpper,
    /// Nonbasic with both bounds infinite; holds its current value.
    Free,
}

/// Dense LU with partial pivoting of a small row-major square matrix.
struct Lu {
    k: usize,
    lu: Vec<f64>,
    perm: Vec<usize>,
}

impl Lu {
    fn factor(k: usize, mut a: Vec<f64>) -> Option<Lu> {
        let mut perm: Vec<usize> = (0..k).collect();
        for col in 0..k {
            let mut p = col;
            let mut best = a[col * k + col].abs();
            for r in col + 1..k {
                let v = a[r * k + col].abs();
                if v > best {
                    best = v;
                    p = r;
                }
            }
            if best < 1e-13 {
                return None;
            }
            if p != col {
                for c in 0..k {
                    a.swap(p * k + c, col * k + c);
                }
                perm.swap(p, col);
            }
            let d = a[col * k + col];
            for r in col + 1..k {
                let f = a[r * k + col] / d;
                a[r * k + col] = f;
                if f != 0.0 {
                    for c in col + 1..k {
                        a[r * k + c] -= f * a[col * k + c];
                    }
                }
            }
        }
        Some(Lu { k, lu: a, perm })
    }

    /// Solve `M x = b`.
    fn solve(&self, b: &[f64]) -> Vec<f64> {
        let k = self.k;
        let mut x: Vec<f64> = self.perm.iter().map(|&p| b[p]).collect();
        for r in 0..k {
            let mut s = x[r];
            for c in 0..r {
                s -= self.lu[r * k + c] * x[c];
            }
            x[r] = s;
        }
        for r in (0..k).rev() {
            let mut s = x[r];
            for c in r + 1..k {
                s -= self.lu[r * k + c] * x[c];
            }
            x[r] = s / self.lu[r * k + r];
        }
        x
    }

    /// Solve `M^T y = b`.
    fn solve_transpose(&self, b: &[f64]) -> Vec<f64> {
        let k = self.k;
        // U^T z = b
        let mut z = b.to_vec();
        for r in 0..k {
            let mut s = z[r];
            for c in 0..r {
                s -= self.lu[c * k + r] * z[c];
            }
            z[r] = s / self.lu[r * k + r];
        }
        // L^T w = z
        for r in (0..k).rev() {
            let mut s = z[r];
            for c in r + 1..k {
                s -= self.lu[c * k + r] * z[c];
            }
            z[r] = s;
        }
        let mut y = vec![0.0; k];
        for (i, &p) in self.perm.iter().enumerate() {
            y[p] = z[i];
        }
        y
    }
}

struct Simplex<'a> {
    opts: &'a SolveOptions,
    n: usize,
    m: usize,
    /// Row-major `m × n`.
    a: Vec<f64>,
    /// Working bounds; may be shifted outward by up to the feasibility
    /// tolerance while iterating.
    lo: Vec<f64>,
    up: Vec<f64>,
    lo0: Vec<f64>,
    up0: Vec<f64>,
    shifted: bool,
    allow_shift: bool,
    /// Minimisation costs of the structural columns.
    cost: Vec<f64>,
    x: Vec<f64>,
    state: Vec<State>,
    basic: Vec<usize>,
    tight: Vec<usize>,
    is_tight: Vec<bool>,
}

enum Outcome {
    Optimal,
    Infeasible,
    Unbounded,
    IterationLimit,
}

impl<'a> Simplex<'a> {
    fn new(lp: &LinearProgram, rows: &[usize], opts: &'a SolveOptions) -> Self {
        let n = lp.n_variables();
        let m = rows.len();
        let mut a = vec![0.0; m * n];
        let mut lo = Vec::with_capacity(n + m);
        let mut up = Vec::with_capacity(n + m);
        for v in lp.variables() {
            lo.push(v.lower);
            up.push(v.upper);
        }
        for (i, &ri) in rows.iter().enumerate() {
            let c = &lp.constraints()[ri];
            for &(v, coef) in &c.coefficients {
                a[i * n + v.0] += coef;
            }
            let (l, u) = match c.relation {
                Relation::Le => (f64::NEG_INFINITY, c.rhs),
                Relation::Ge => (c.rhs, f64::INFINITY),
                Relation::Eq => (c.rhs, c.rhs),
            };
            lo.push(l);
            up.push(u);
        }
        let sign = match lp.sense {
            Sense::Maximize => -1.0,
            Sense::Minimize => 1.0,
        };
        let mut cost = vec![0.0; n];
        for &(v, c) in lp.objective() {
            cost[v.0] += sign * c;
        }
        let mut x = vec![0.0; n + m];
        let mut state = vec![State::Basic; n + m];
        for j in 0..n {
            if lo[j].is_finite() {
                x[j] = lo[j];
                state[j] = State::AtLower;
            } else if up[j].is_finite() {
                x[j] = up[j];
                state[j] = State::AtUpper;
            } else {
                x[j] = 0.0;
                state[j] = State::Free;
            }
        }
        Simplex {
            opts,
            n,
            m,
            a,
            lo0: lo.clone(),
            up0: up.clone(),
            lo,
            up,
            shifted: false,
            allow_shift: true,
            cost,
            x,
            state,
            basic: Vec::new(),
            tight: Vec::new(),
            is_tight: vec![false; m],
        }
    }

    #[inline]
    fn at(&self, i: usize, j: usize) -> f64 {
        self.a[i * self.n + j]
    }

    fn reset_to_logical_basis(&mut self) {
        for &j in &self.basic {
            self.state[j] = if self.lo[j].is_finite() {
                self.x[j] = self.lo[j];
                State::AtLower
            } else if self.up[j].is_finite() {
                self.x[j] = self.up[j];
                State::AtUpper
            } else {
                State::Free
            };
        }
        for &i in &self.tight {
            self.state[self.n + i] = State::Basic;
            self.is_tight[i] = false;
        }
        self.basic.clear();
        self.tight.clear();
    }

    fn factor(&self) -> Option<Lu> {
        let k = self.basic.len();
        let mut mat = Vec::with_capacity(k * k);
        for &i in &self.tight {
            for &j in &self.basic {
                mat.push(self.at(i, j));
            }
        }
        Lu::factor(k, mat)
    }

    /// Recompute basic values from the nonbasic ones.
    fn compute_primal(&mut self, lu: &Lu) {
        let n = self.n;
        let rhs: Vec<f64> = self
            .tight
            .iter()
            .map(|&i| {
                let mut s = self.x[n + i];
                for j in 0..n {
                    if self.state[j] != State::Basic {
                        s -= self.at(i, j) * self.x[j];
                    }
                }
                s
            })
            .collect();
        let xs = lu.solve(&rhs);
        for (b, &j) in self.basic.iter().enumerate() {
            self.x[j] = xs[b];
        }
        for i in 0..self.m {
            if !self.is_tight[i] {
                let mut s = 0.0;
                for j in 0..n {
                    s += self.at(i, j) * self.x[j];
                }
                self.x[n + i] = s;
            }
        }
    }

    fn infeasibility(&self, v: usize) -> f64 {
        let tol = self.opts.feasibility_tol;
        if self.x[v] < self.lo[v] - tol {
            -1.0
        } else if self.x[v] > self.up[v] + tol {
            1.0
        } else {
            0.0
        }
    }

    fn iterate(&mut self, iterations: &mut usize) -> Outcome {
        let n = self.n;
        let mut degenerate_run = 0usize;
        let mut bland = false;
        let mut resets = 0usize;
        // Harris steps can leave basics a hair outside their bounds; when
        // rounding pushes one past the tolerance the method drops back to
        // phase 1. Repeated loss of feasibility means the two phases are
        // undoing each other, so fall back to Bland's rule for good.
        let mut was_feasible = false;
        let mut feasibility_losses = 0usize;
        let mut sticky_bland = false;
        loop {
            let lu = match self.factor() {
                Some(lu) => lu,
                None => {
                    resets += 1;
                    if resets > 3 {
                        return Outcome::IterationLimit;
                    }
                    self.reset_to_logical_basis();
                    continue;
                }
            };
            self.compute_primal(&lu);

            // Phase selection and cost vector on all n + m columns.
            let mut phase_one = false;
            let mut c = vec![0.0; n + self.m];
            for &j in &self.basic {
                let s = self.infeasibility(j);
                c[j] = s;
                phase_one |= s != 0.0;
            }
            for i in 0..self.m {
                if !self.is_tight[i] {
                    let s = self.infeasibility(n + i);
                    c[n + i] = s;
                    phase_one |= s != 0.0;
                }
            }
            if phase_one && was_feasible {
                feasibility_losses += 1;
                if feasibility_losses >= 3 {
                    sticky_bland = true;
                    bland = true;
                }
            }
            was_feasible = !phase_one;
            if !phase_one {
                c[..n].copy_from_slice(&self.cost);
                for i in 0..self.m {
                    c[n + i] = 0.0;
                }
            }

            // Duals.
            let mut y = vec![0.0; self.m];
            for i in 0..self.m {
                if !self.is_tight[i] {
                    y[i] = -c[n + i];
                }
            }
            let rhs: Vec<f64> = self
                .basic
                .iter()
                .map(|&j| {
                    let mut s = c[j];
                    for i in 0..self.m {
                        if !self.is_tight[i] {
                            s -= self.at(i, j) * y[i];
                        }
                    }
                    s
                })
                .collect();
            let yt = lu.solve_transpose(&rhs);
            for (a, &i) in self.tight.iter().enumerate() {
                y[i] = yt[a];
            }

            if *iterations >= self.opts.iteration_limit {
                return Outcome::IterationLimit;
            }

            // Pricing.
            let mut reduced = vec![0.0; n + self.m];
            for j in 0..n {
                if self.state[j] != State::Basic {
                    let mut d = c[j];
                    for i in 0..self.m {
                        d -= self.at(i, j) * y[i];
                    }
                    reduced[j] = d;
                }
            }
            for &i in &self.tight {
                reduced[n + i] = c[n + i] + y[i];
            }
            let mut rejected: Vec<usize> = Vec::new();
            let step = loop {
                let Some((q, sigma)) = self.price(&reduced, bland, &rejected) else {
                    return if phase_one {
                        Outcome::Infeasible
                    } else {
                        Outcome::Optimal
                    };
                };
                match self.ratio_test(&lu, q, sigma, bland) {
                    Some(step) => break step,
                    None if !phase_one => return Outcome::Unbounded,
                    None => rejected.push(q),
                }
            };
            *iterations += 1;

            if step.t <= DEGENERATE_STEP {
                degenerate_run += 1;
                if degenerate_run >= self.opts.degenerate_pivot_limit {
                    bland = true;
                }
            } else {
                degenerate_run = 0;
                bland = sticky_bland;
            }
            self.apply(step);
        }
    }

    /// Iterate to an outcome; if bounds were shifted on the way, restore
    /// them and iterate again from the same basis. After a few rounds
    /// shifting is disabled so the last pass runs on the true bounds.
    fn run(&mut self, iterations: &mut usize) -> Outcome {
        let mut rounds = 0;
        loop {
            let outcome = self.iterate(iterations);
            if !self.shifted {
                return outcome;
            }
            rounds += 1;
            self.restore_bounds(rounds < 3);
            if !matches!(outcome, Outcome::Optimal | Outcome::Infeasible) {
                return outcome;
            }
        }
    }

    fn restore_bounds(&mut self, allow_shift: bool) {
        self.lo.copy_from_slice(&self.lo0);
        self.up.copy_from_slice(&self.up0);
        for j in 0..self.n + self.m {
            match self.state[j] {
                State::AtLower => self.x[j] = self.lo[j],
                State::AtUpper => self.x[j] = self.up[j],
                _ => {}
            }
        }
        self.shifted = false;
        self.allow_shift = allow_shift;
    }

    fn eligible(&self, j: usize, d: f64) -> Option<f64> {
        let tol = self.opts.optimality_tol;
        if self.lo0[j] == self.up0[j] {
            return None;
        }
        match self.state[j] {
            State::Basic => None,
            State::AtLower if d < -tol => Some(1.0),
            State::AtUpper if d > tol => Some(-1.0),
            State::Free if d.abs() > tol => Some(if d < 0.0 { 1.0 } else { -1.0 }),
            _ => None,
        }
    }

    fn price(&self, reduced: &[f64], bland: bool, rejected: &[usize]) -> Option<(usize, f64)> {
        let mut best: Option<(usize, f64, f64)> = None;
        let candidates = (0..self.n).chain(self.tight.iter().map(|&i| self.n + i));
        let mut order: Vec<usize> = candidates.collect();
        order.sort_unstable();
        for j in order {
            if rejected.contains(&j) {
                continue;
            }
            let Some(sigma) = self.eligible(j, reduced[j]) else {
                continue;
            };
            if bland {
                return Some((j, sigma));
            }
            let score = reduced[j].abs();
            if best.map_or(true, |(_, _, s)| score > s) {
                best = Some((j, sigma, score));
            }
        }
        best.map(|(j, s, _)| (j, s))
    }

    /// Rates of change of all basic variables per unit move of column `q` in
    /// direction `sigma`, as (variable, rate) pairs.
    fn direction(&self, lu: &Lu, q: usize, sigma: f64) -> Vec<(usize, f64)> {
        let n = self.n;
        let k = self.basic.len();
        let ds: Vec<f64> = if q < n {
            let col: Vec<f64> = self.tight.iter().map(|&i| self.at(i, q)).collect();
            lu.solve(&col).into_iter().map(|w| -sigma * w).collect()
        } else {
            let row = q - n;
            let pos = self.tight.iter().position(|&i| i == row).expect("tight row");
            let mut e = vec![0.0; k];
            e[pos] = 1.0;
            lu.solve(&e).into_iter().map(|w| sigma * w).collect()
        };
        let mut out = Vec::with_capacity(k + self.m);
        for (b, &j) in self.basic.iter().enumerate() {
            out.push((j, ds[b]));
        }
        for i in 0..self.m {
            if self.is_tight[i] {
                continue;
            }
            let mut r = if q < n { sigma * self.at(i, q) } else { 0.0 };
            for (b, &j) in self.basic.iter().enumerate() {
                r += self.at(i, j) * ds[b];
            }
            out.push((n + i, r));
        }
        out
    }

    /// Distance a basic variable may travel before hitting the bound relevant
    /// to its current position, with the bound relaxed by `slack`. A variable
    /// already outside a bound by less than the tolerance may not drift
    /// further than `slack` past it.
    fn limit(&self, v: usize, rate: f64, slack: f64) -> Option<(f64, bool)> {
        let tol = self.opts.feasibility_tol;
        let x = self.x[v];
        let dist = |d: f64| (d + slack).max(0.0);
        if rate < 0.0 {
            if x > self.up[v] + tol {
                Some(((x - self.up[v]) / -rate, true))
            } else if self.lo[v].is_finite() && x >= self.lo[v] - tol {
                Some((dist(x - self.lo[v]) / -rate, false))
            } else {
                None
            }
        } else if x < self.lo[v] - tol {
            Some(((self.lo[v] - x) / rate, false))
        } else if self.up[v].is_finite() && x <= self.up[v] + tol {
            Some((dist(self.up[v] - x) / rate, true))
        } else {
            None
        }
    }

    fn ratio_test(&self, lu: &Lu, q: usize, sigma: f64, bland: bool) -> Option<Step> {
        let rates = self.direction(lu, q, sigma);
        let span = if sigma > 0.0 {
            self.up[q] - self.x[q]
        } else {
            self.x[q] - self.lo[q]
        };
        let tol = self.opts.feasibility_tol;
        let usable = |r: f64| r.abs() > PIVOT_TOL;

        let mut leave: Option<(usize, f64, bool, f64)> = None;
        if bland {
            let mut t_min = f64::INFINITY;
            for &(v, r) in &rates {
                if let (true, Some((t, _))) = (usable(r), self.limit(v, r, 0.0)) {
                    t_min = t_min.min(t);
                }
            }
            for &(v, r) in &rates {
                if !usable(r) {
                    continue;
                }
                if let Some((t, upper)) = self.limit(v, r, 0.0) {
                    if t <= t_min + 1e-12 && leave.map_or(true, |(lv, ..)| v < lv) {
                        leave = Some((v, t, upper, r));
                    }
                }
            }
        } else {
            // Harris: bound on the step with relaxed bounds, then the largest
            // pivot among rows that block within it.
            let mut t_relaxed = f64::INFINITY;
            for &(v, r) in &rates {
                if let (true, Some((t, _))) = (usable(r), self.limit(v, r, 0.5 * tol)) {
                    t_relaxed = t_relaxed.min(t);
                }
            }
            for &(v, r) in &rates {
                if !usable(r) {
                    continue;
                }
                if let Some((t, upper)) = self.limit(v, r, 0.0) {
                    if t <= t_relaxed
                        && leave.map_or(true, |(lv, _, _, lr)| {
                            r.abs() > lr.abs() || (r.abs() == lr.abs() && v < lv)
                        })
                    {
                        leave = Some((v, t, upper, r));
                    }
                }
            }
        }

        match leave {
            Some((_, t, _, _)) if span <= t => Some(Step::flip(q, sigma, span, rates)),
            Some((v, t, upper, _)) => Some(Step {
                entering: q,
                sigma,
                t: t.max(0.0),
                leaving: Some((v, upper)),
                rates,
            }),
            None if span.is_finite() => Some(Step::flip(q, sigma, span, rates)),
            None => None,
        }
    }

    fn apply(&mut self, step: Step) {
        let n = self.n;
        let q = step.entering;
        self.x[q] += step.sigma * step.t;
        for &(v, r) in &step.rates {
            self.x[v] += r * step.t;
        }
        let Some((l, at_upper)) = step.leaving else {
            self.state[q] = if step.sigma > 0.0 {
                self.x[q] = self.up[q];
                State::AtUpper
            } else {
                self.x[q] = self.lo[q];
                State::AtLower
            };
            return;
        };
        // A leaving variable that overshot its bound within tolerance keeps
        // its value and the working bound moves to it; snapping it back
        // would perturb the other basics through the basis inverse.
        if self.allow_shift && at_upper && self.x[l] > self.up[l] {
            self.up[l] = self.x[l];
            self.shifted = true;
        } else if self.allow_shift && !at_upper && self.x[l] < self.lo[l] {
            self.lo[l] = self.x[l];
            self.shifted = true;
        } else {
            self.x[l] = if at_upper { self.up[l] } else { self.lo[l] };
        }
        self.state[l] = if at_upper { State::AtUpper } else { State::AtLower };
        self.state[q] = State::Basic;

        match (q < n, l < n) {
            (true, true) => {
                let b = self.basic.iter().position(|&j| j == l).unwrap();
                self.basic[b] = q;
            }
            (true, false) => {
                self.basic.push(q);
                self.tight.push(l - n);
                self.is_tight[l - n] = true;
            }
            (false, true) => {
                let b = self.basic.iter().position(|&j| j == l).unwrap();
                self.basic.remove(b);
                let a = self.tight.iter().position(|&i| i == q - n).unwrap();
                self.tight.remove(a);
                self.is_tight[q - n] = false;
            }
            (false, false) => {
                let a = self.tight.iter().position(|&i| i == q - n).unwrap();
                self.tight[a] = l - n;
                self.is_tight[q - n] = false;
                self.is_tight[l - n] = true;
            }
        }
    }
}

struct Step {
    entering: usize,
    sigma: f64,
    t: f64,
    /// Leaving variable and whether it leaves at its upper bound; `None` for a
    /// bound flip of the entering variable.
    leaving: Option<(usize, bool)>,
    rates: Vec<(usize, f64)>,
}

impl Step {
    fn flip(q: usize, sigma: f64, span: f64, rates: Vec<(usize, f64)>) -> Step {
        Step {
            entering: q,
            sigma,
            t: span,
            leaving: None,
            rates,
        }
    }
}

pub(super) fn solve(lp: &LinearProgram, opts: &SolveOptions) -> LpSolution {
    // Empty rows: drop when satisfied, otherwise the program is infeasible.
    let mut rows = Vec::with_capacity(lp.n_constraints());
    for (i, c) in lp.constraints().iter().enumerate() {
        if c.coefficients.iter().all(|&(_, a)| a == 0.0) {
            let ok = match c.relation {
                Relation::Le => 0.0 <= c.rhs + opts.feasibility_tol,
                Relation::Ge => 0.0 >= c.rhs - opts.feasibility_tol,
                Relation::Eq => c.rhs.abs() <= opts.feasibility_tol,
            };
            if !ok {
                return LpSolution {
                    status: LpStatus::Infeasible,
                    objective: f64::NAN,
                    values: Vec::new(),
                    iterations: 0,
                };
            }
        } else {
            rows.push(i);
        }
    }

    let mut sx = Simplex::new(lp, &rows, opts);
    let mut iterations = 0;
    let outcome = sx.run(&mut iterations);
    // Basic values may sit outside a bound by up to the feasibility
    // tolerance; report them clamped.
    let values: Vec<f64> = (0..sx.n)
        .map(|j| sx.x[j].max(sx.lo0[j]).min(sx.up0[j]))
        .collect();
    let objective = lp.evaluate(&values);
    match outcome {
        Outcome::Optimal => LpSolution {
            status: LpStatus::Optimal,
            objective,
            values,
            iterations,
        },
        Outcome::Infeasible => LpSolution {
            status: LpStatus::Infeasible,
            objective: f64::NAN,
            values: Vec::new(),
            iterations,
        },
        Outcome::Unbounded => LpSolution {
            status: LpStatus::Unbounded,
            objective: match lp.sense {
                Sense::Maximize => f64::INFINITY,
                Sense::Minimize => f64::NEG_INFINITY,
            },
            values,
            iterations,
        },
        Outcome::IterationLimit => LpSolution {
            status: LpStatus::IterationLimit,
            objective,
            values,
            iterations,
        },
    }
}

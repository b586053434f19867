//! Thin wrapper over a floating-point simplex for the solvers' polish step.

use microlp::{ComparisonOp, LinearExpr, OptimizationDirection, Problem, SolveOutcome, Variable};

pub struct Lp {
    problem: Problem,
    vars: Vec<Variable>,
}

impl Lp {
    pub fn minimize() -> Self {
        Lp { problem: Problem::new(OptimizationDirection::Minimize), vars: Vec::new() }
    }

    pub fn var(&mut self, cost: f64, lo: f64, hi: f64) -> usize {
        self.vars.push(self.problem.add_var(cost, (lo, hi)));
        self.vars.len() - 1
    }

    /// Builds an expression, merging repeated variables (the backend
    /// requires distinct indices).
    fn expr(&self, terms: &[(usize, f64)]) -> LinearExpr {
        let mut merged: Vec<(usize, f64)> = terms.to_vec();
        merged.sort_by_key(|t| t.0);
        let mut e = LinearExpr::empty();
        let mut k = 0;
        while k < merged.len() {
            let v = merged[k].0;
            let mut c = 0.0;
            while k < merged.len() && merged[k].0 == v {
                c += merged[k].1;
                k += 1;
            }
            if c != 0.0 {
                e.add(self.vars[v], c);
            }
        }
        e
    }

    pub fn eq(&mut self, terms: &[(usize, f64)], rhs: f64) {
        let e = self.expr(terms);
        self.problem.add_constraint(e, ComparisonOp::Eq, rhs);
    }

    pub fn le(&mut self, terms: &[(usize, f64)], rhs: f64) {
        let e = self.expr(terms);
        self.problem.add_constraint(e, ComparisonOp::Le, rhs);
    }

    pub fn ge(&mut self, terms: &[(usize, f64)], rhs: f64) {
        let e = self.expr(terms);
        self.problem.add_constraint(e, ComparisonOp::Ge, rhs);
    }

    /// Optimal point, or `None` when infeasible or unbounded.
    pub fn solve(&self) -> Option<Vec<f64>> {
        match self.problem.solve().ok()? {
            SolveOutcome::Solution(sol) => Some(self.vars.iter().map(|&v| sol[v]).collect()),
            SolveOutcome::Interrupted(_) => None,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_lp() {
        // min x + 2y  s.t. x + y = 1, x <= 0.25
        let mut lp = Lp::minimize();
        let x = lp.var(1.0, 0.0, 0.25);
        let y = lp.var(2.0, 0.0, f64::INFINITY);
        lp.eq(&[(x, 1.0), (y, 1.0)], 1.0);
        let s = lp.solve().unwrap();
        assert!((s[x] - 0.25).abs() < 1e-12 && (s[y] - 0.75).abs() < 1e-12);
    }

    #[test]
    fn repeated_terms_are_merged() {
        let mut lp = Lp::minimize();
        let x = lp.var(-1.0, 0.0, 10.0);
        lp.le(&[(x, 1.0), (x, 1.0)], 3.0);
        assert!((lp.solve().unwrap()[x] - 1.5).abs() < 1e-12);
    }

    #[test]
    fn infeasible_is_none() {
        let mut lp = Lp::minimize();
        let x = lp.var(0.0, 0.0, 1.0);
        lp.ge(&[(x, 1.0)], 2.0);
        assert!(lp.solve().is_none());
    }
}

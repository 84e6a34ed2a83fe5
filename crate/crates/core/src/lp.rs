//! Thin dense-index wrapper over `microlp` so callers can build programs with
//! plain `usize` variable handles.

use microlp::{ComparisonOp, OptimizationDirection, Problem, Variable};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Cmp {
    Le,
    Ge,
    Eq,
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) enum LpError {
    Infeasible,
    Unbounded,
    Solver(String),
}

pub(crate) struct Lp {
    problem: Problem,
    vars: Vec<Variable>,
}

impl Lp {
    pub fn minimize() -> Self {
        Lp {
            problem: Problem::new(OptimizationDirection::Minimize),
            vars: Vec::new(),
        }
    }

    pub fn maximize() -> Self {
        Lp {
            problem: Problem::new(OptimizationDirection::Maximize),
            vars: Vec::new(),
        }
    }

    pub fn var(&mut self, obj: f64, lo: f64, hi: f64) -> usize {
        self.vars.push(self.problem.add_var(obj, (lo, hi)));
        self.vars.len() - 1
    }

    pub fn row(&mut self, terms: &[(usize, f64)], cmp: Cmp, rhs: f64) {
        let expr: Vec<(Variable, f64)> = terms
            .iter()
            .filter(|(_, c)| *c != 0.0)
            .map(|&(v, c)| (self.vars[v], c))
            .collect();
        if expr.is_empty() {
            return;
        }
        let op = match cmp {
            Cmp::Le => ComparisonOp::Le,
            Cmp::Ge => ComparisonOp::Ge,
            Cmp::Eq => ComparisonOp::Eq,
        };
        self.problem.add_constraint(expr, op, rhs);
    }

    /// Returns variable values and the objective.
    pub fn solve(&self) -> Result<(Vec<f64>, f64), LpError> {
        match self.problem.solve() {
            Ok(outcome) => match outcome.into_solution() {
                Ok(sol) => Ok((
                    self.vars.iter().map(|&v| sol.var_value(v)).collect(),
                    sol.objective(),
                )),
                Err(_) => Err(LpError::Solver("interrupted".into())),
            },
            Err(microlp::Error::Infeasible) => Err(LpError::Infeasible),
            Err(microlp::Error::Unbounded) => Err(LpError::Unbounded),
            Err(e) => Err(LpError::Solver(format!("{e:?}"))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_program() {
        // max x + 2y s.t. x + y <= 4, y <= 3
        let mut lp = Lp::maximize();
        let x = lp.var(1.0, 0.0, f64::INFINITY);
        let y = lp.var(2.0, 0.0, 3.0);
        lp.row(&[(x, 1.0), (y, 1.0)], Cmp::Le, 4.0);
        let (v, obj) = lp.solve().unwrap();
        assert!((v[x] - 1.0).abs() < 1e-9 && (v[y] - 3.0).abs() < 1e-9);
        assert!((obj - 7.0).abs() < 1e-9);
    }

    #[test]
    fn infeasible_reported() {
        let mut lp = Lp::minimize();
        let x = lp.var(1.0, 0.0, 1.0);
        lp.row(&[(x, 1.0)], Cmp::Ge, 2.0);
        assert_eq!(lp.solve().unwrap_err(), LpError::Infeasible);
    }
}

//! Dense two-phase tableau simplex with Bland's rule.
//!
//! Problems have the form `min cᵀx` subject to rows `aᵀx {≤, ≥, =} b` and
//! `x ≥ 0`. Sizes are small (a few thousand columns at most), so the full
//! tableau is kept in one row-major buffer.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// Pivot and reduced-cost tolerance.
pub const PIVOT_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Relation {
    Le,
    Ge,
    Eq,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Constraint {
    pub coeffs: Vec<f64>,
    pub relation: Relation,
    pub rhs: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearProgram {
    /// Minimized.
    pub objective: Vec<f64>,
    pub constraints: Vec<Constraint>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LpSolution {
    pub x: Vec<f64>,
    pub objective: f64,
    pub iterations: usize,
}

impl LinearProgram {
    pub fn new(objective: Vec<f64>) -> Self {
        Self {
            objective,
            constraints: Vec::new(),
        }
    }

    pub fn add(&mut self, coeffs: Vec<f64>, relation: Relation, rhs: f64) {
        self.constraints.push(Constraint {
            coeffs,
            relation,
            rhs,
        });
    }

    pub fn n_vars(&self) -> usize {
        self.objective.len()
    }

    fn validate(&self) -> Result<()> {
        let n = self.n_vars();
        if n == 0 {
            return Err(invalid("linear program has no variables"));
        }
        if self.objective.iter().any(|c| !c.is_finite()) {
            return Err(invalid("objective has a non-finite coefficient"));
        }
        for (r, c) in self.constraints.iter().enumerate() {
            if c.coeffs.len() != n {
                return Err(invalid(format!(
                    "constraint {r} has {} coefficients, expected {n}",
                    c.coeffs.len()
                )));
            }
            if !c.rhs.is_finite() || c.coeffs.iter().any(|a| !a.is_finite()) {
                return Err(invalid(format!("constraint {r} has a non-finite entry")));
            }
        }
        Ok(())
    }

    pub fn solve(&self) -> Result<LpSolution> {
        self.validate()?;
        Tableau::build(self).run(self)
    }
}

struct Tableau {
    rows: usize,
    /// Structural + slack/surplus + artificial columns, then the rhs.
    cols: usize,
    n_struct: usize,
    first_artificial: usize,
    data: Vec<f64>,
    basis: Vec<usize>,
    iterations: usize,
    max_iterations: usize,
}

impl Tableau {
    fn build(lp: &LinearProgram) -> Self {
        let n = lp.n_vars();
        let m = lp.constraints.len();
        let n_slack = lp
            .constraints
            .iter()
            .filter(|c| c.relation != Relation::Eq)
            .count();
        // Every row gets an artificial unless its slack can start basic.
        let needs_artificial: Vec<bool> = lp
            .constraints
            .iter()
            .map(|c| {
                let flip = c.rhs < 0.0;
                match c.relation {
                    Relation::Le => flip,
                    Relation::Ge => !flip,
                    Relation::Eq => true,
                }
            })
            .collect();
        let n_art = needs_artificial.iter().filter(|&&a| a).count();
        let first_artificial = n + n_slack;
        let cols = first_artificial + n_art + 1;
        let mut data = vec![0.0; m * cols];
        let mut basis = vec![0; m];
        let mut slack = n;
        let mut art = first_artificial;
        for (r, c) in lp.constraints.iter().enumerate() {
            let sign = if c.rhs < 0.0 { -1.0 } else { 1.0 };
            let row = &mut data[r * cols..(r + 1) * cols];
            for (j, &a) in c.coeffs.iter().enumerate() {
                row[j] = sign * a;
            }
            row[cols - 1] = sign * c.rhs;
            match c.relation {
                Relation::Le => {
                    row[slack] = sign;
                    if sign > 0.0 {
                        basis[r] = slack;
                    }
                    slack += 1;
                }
                Relation::Ge => {
                    row[slack] = -sign;
                    if sign < 0.0 {
                        basis[r] = slack;
                    }
                    slack += 1;
                }
                Relation::Eq => {}
            }
            if needs_artificial[r] {
                row[art] = 1.0;
                basis[r] = art;
                art += 1;
            }
        }
        Self {
            rows: m,
            cols,
            n_struct: n,
            first_artificial,
            data,
            basis,
            iterations: 0,
            max_iterations: 50_000 + 100 * (m + cols),
        }
    }

    fn at(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    fn rhs(&self, r: usize) -> f64 {
        self.at(r, self.cols - 1)
    }

    fn pivot(&mut self, r: usize, c: usize) {
        let cols = self.cols;
        let p = self.at(r, c);
        for x in &mut self.data[r * cols..(r + 1) * cols] {
            *x /= p;
        }
        let (before, rest) = self.data.split_at_mut(r * cols);
        let (prow, after) = rest.split_at_mut(cols);
        for other in before.chunks_mut(cols).chain(after.chunks_mut(cols)) {
            let f = other[c];
            if f != 0.0 {
                for (x, &y) in other.iter_mut().zip(prow.iter()) {
                    *x -= f * y;
                }
                other[c] = 0.0;
            }
        }
        self.basis[r] = c;
        self.iterations += 1;
    }

    /// Reduced costs of `cost` (indexed by column) under the current basis.
    fn reduced_costs(&self, cost: &[f64], allowed: usize) -> Vec<f64> {
        let mut d: Vec<f64> = cost[..allowed].to_vec();
        for r in 0..self.rows {
            let cb = cost[self.basis[r]];
            if cb != 0.0 {
                for (j, dj) in d.iter_mut().enumerate() {
                    *dj -= cb * self.at(r, j);
                }
            }
        }
        d
    }

    /// Minimizes `cost` over columns `< allowed`. Returns false when unbounded.
    fn optimize(&mut self, cost: &[f64], allowed: usize) -> Result<bool> {
        loop {
            if self.iterations >= self.max_iterations {
                return Err(Error::Solver(format!(
                    "no convergence after {} pivots; basis = {:?}",
                    self.iterations, self.basis
                )));
            }
            let d = self.reduced_costs(cost, allowed);
            let Some(enter) = (0..allowed).find(|&j| d[j] < -PIVOT_TOL) else {
                return Ok(true);
            };
            let mut leave: Option<(usize, f64)> = None;
            for r in 0..self.rows {
                let a = self.at(r, enter);
                if a > PIVOT_TOL {
                    let ratio = self.rhs(r) / a;
                    leave = match leave {
                        None => Some((r, ratio)),
                        Some((lr, lratio)) => {
                            if ratio < lratio - PIVOT_TOL
                                || (ratio <= lratio + PIVOT_TOL && self.basis[r] < self.basis[lr])
                            {
                                Some((r, ratio))
                            } else {
                                Some((lr, lratio))
                            }
                        }
                    };
                }
            }
            match leave {
                Some((r, _)) => self.pivot(r, enter),
                None => return Ok(false),
            }
        }
    }

    fn run(mut self, lp: &LinearProgram) -> Result<LpSolution> {
        let total = self.cols - 1;
        if self.first_artificial < total {
            let mut phase1 = vec![0.0; total];
            phase1[self.first_artificial..]
                .iter_mut()
                .for_each(|c| *c = 1.0);
            self.optimize(&phase1, total)?;
            let infeasibility: f64 = (0..self.rows)
                .filter(|&r| self.basis[r] >= self.first_artificial)
                .map(|r| self.rhs(r))
                .sum();
            if infeasibility > 1e-7 {
                return Err(Error::Solver(format!(
                    "problem is infeasible (phase-one residual {infeasibility:e})"
                )));
            }
            self.drive_out_artificials();
        }
        let mut cost = vec![0.0; total];
        cost[..self.n_struct].copy_from_slice(&lp.objective);
        if !self.optimize(&cost, self.first_artificial)? {
            return Err(Error::Solver("objective is unbounded below".into()));
        }
        let mut x = vec![0.0; self.n_struct];
        for r in 0..self.rows {
            if self.basis[r] < self.n_struct {
                x[self.basis[r]] = self.rhs(r).max(0.0);
            }
        }
        let objective = x.iter().zip(&lp.objective).map(|(a, b)| a * b).sum();
        Ok(LpSolution {
            x,
            objective,
            iterations: self.iterations,
        })
    }

    /// Pivots zero-level artificials out of the basis; rows where that is
    /// impossible are redundant and are removed.
    fn drive_out_artificials(&mut self) {
        let mut r = 0;
        while r < self.rows {
            if self.basis[r] < self.first_artificial {
                r += 1;
                continue;
            }
            let col = (0..self.first_artificial).find(|&j| self.at(r, j).abs() > PIVOT_TOL);
            match col {
                Some(j) => {
                    self.pivot(r, j);
                    r += 1;
                }
                None => {
                    let cols = self.cols;
                    self.data.drain(r * cols..(r + 1) * cols);
                    self.basis.remove(r);
                    self.rows -= 1;
                }
            }
        }
    }
}

//! Dense two-phase simplex for small standard-form linear programs.
//!
//! Solves `min cᵀx  s.t.  Ax = b, x ≥ 0` with Bland's anti-cycling rule.
//! Phase 1 minimizes the sum of artificial variables; when that optimum is
//! positive its dual vector is a Farkas certificate `y` with `yᵀA ≤ 0` and
//! `yᵀb > 0`.

use thiserror::Error;

pub const DEFAULT_ITERATION_CAP: usize = 100_000;

/// Phase-1 optima at or below this are treated as feasible.
pub const FEASIBILITY_TOL: f64 = 1e-9;

const PIVOT_TOL: f64 = 1e-11;
const COST_TOL: f64 = 1e-11;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LpError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("non-finite coefficient in problem data")]
    NonFinite,
    #[error("iteration cap {cap} reached in phase {phase}")]
    IterationCap { phase: u8, cap: usize },
    #[error("numerical failure: {0}")]
    Numerical(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearProgram {
    a: Vec<Vec<f64>>,
    b: Vec<f64>,
    c: Vec<f64>,
    iteration_cap: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Solution {
    pub x: Vec<f64>,
    pub objective: f64,
    /// Dual values `y` with `yᵀA ≤ c` on every column.
    pub duals: Vec<f64>,
    pub iterations: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Farkas {
    /// `yᵀA_j ≤ 0` for every column, `yᵀb = infeasibility > 0`.
    pub y: Vec<f64>,
    pub infeasibility: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Outcome {
    Optimal(Solution),
    Infeasible(Farkas),
    Unbounded,
}

impl LinearProgram {
    /// `a` is row-major with one row per equality constraint.
    pub fn new(a: Vec<Vec<f64>>, b: Vec<f64>, c: Vec<f64>) -> Result<Self, LpError> {
        if a.len() != b.len() {
            return Err(LpError::Dimension(format!(
                "{} rows but {} right-hand sides",
                a.len(),
                b.len()
            )));
        }
        if a.iter().any(|r| r.len() != c.len()) {
            return Err(LpError::Dimension(
                "every row needs one coefficient per variable".into(),
            ));
        }
        if a.iter().flatten().chain(&b).chain(&c).any(|v| !v.is_finite()) {
            return Err(LpError::NonFinite);
        }
        Ok(Self {
            a,
            b,
            c,
            iteration_cap: DEFAULT_ITERATION_CAP,
        })
    }

    /// Pure feasibility problem (zero objective).
    pub fn feasibility(a: Vec<Vec<f64>>, b: Vec<f64>) -> Result<Self, LpError> {
        let n = a.first().map_or(0, Vec::len);
        Self::new(a, b, vec![0.0; n])
    }

    pub fn with_iteration_cap(mut self, cap: usize) -> Self {
        self.iteration_cap = cap;
        self
    }

    pub fn rows(&self) -> usize {
        self.a.len()
    }

    pub fn cols(&self) -> usize {
        self.c.len()
    }

    pub fn solve(&self) -> Result<Outcome, LpError> {
        Tableau::new(self).run(self)
    }
}

struct Tableau {
    m: usize,
    n: usize,
    /// `m × (n + m)`; the trailing block starts as the identity over artificials.
    t: Vec<Vec<f64>>,
    rhs: Vec<f64>,
    basis: Vec<usize>,
    signs: Vec<f64>,
    iterations: usize,
}

impl Tableau {
    fn new(lp: &LinearProgram) -> Self {
        let m = lp.rows();
        let n = lp.cols();
        let mut t = Vec::with_capacity(m);
        let mut rhs = Vec::with_capacity(m);
        let mut signs = Vec::with_capacity(m);
        for i in 0..m {
            let s = if lp.b[i] < 0.0 { -1.0 } else { 1.0 };
            let mut row: Vec<f64> = lp.a[i].iter().map(|v| s * v).collect();
            row.extend((0..m).map(|k| if k == i { 1.0 } else { 0.0 }));
            t.push(row);
            rhs.push(s * lp.b[i]);
            signs.push(s);
        }
        Self {
            m,
            n,
            t,
            rhs,
            basis: (n..n + m).collect(),
            signs,
            iterations: 0,
        }
    }

    fn run(mut self, lp: &LinearProgram) -> Result<Outcome, LpError> {
        let total = self.n + self.m;
        let phase1_cost: Vec<f64> = (0..total).map(|j| if j < self.n { 0.0 } else { 1.0 }).collect();
        if !self.optimize(&phase1_cost, total, 1, lp.iteration_cap)? {
            return Err(LpError::Numerical("phase 1 reported unbounded".into()));
        }
        let infeasibility: f64 = self.objective(&phase1_cost);
        if infeasibility > FEASIBILITY_TOL {
            let y = self.duals(&phase1_cost);
            let infeasibility = y.iter().zip(&lp.b).map(|(y, b)| y * b).sum();
            return Ok(Outcome::Infeasible(Farkas { y, infeasibility }));
        }
        self.drive_out_artificials();

        let mut cost = lp.c.clone();
        cost.extend(std::iter::repeat_n(0.0, self.m));
        if !self.optimize(&cost, self.n, 2, lp.iteration_cap)? {
            return Ok(Outcome::Unbounded);
        }
        let mut x = vec![0.0; self.n];
        for (i, &j) in self.basis.iter().enumerate() {
            if j < self.n {
                x[j] = self.rhs[i].max(0.0);
            }
        }
        let objective = lp.c.iter().zip(&x).map(|(c, x)| c * x).sum();
        Ok(Outcome::Optimal(Solution {
            x,
            objective,
            duals: self.duals(&cost),
            iterations: self.iterations,
        }))
    }

    fn objective(&self, cost: &[f64]) -> f64 {
        self.basis.iter().zip(&self.rhs).map(|(&j, r)| cost[j] * r).sum()
    }

    /// Duals expressed for the caller's (unflipped) rows.
    fn duals(&self, cost: &[f64]) -> Vec<f64> {
        (0..self.m)
            .map(|k| {
                let col = self.n + k;
                let v: f64 = (0..self.m).map(|i| cost[self.basis[i]] * self.t[i][col]).sum();
                v * self.signs[k]
            })
            .collect()
    }

    fn reduced_cost(&self, cost: &[f64], j: usize) -> f64 {
        cost[j]
            - (0..self.m)
                .map(|i| cost[self.basis[i]] * self.t[i][j])
                .sum::<f64>()
    }

    /// Runs simplex iterations; columns `>= enter_limit` may not enter.
    /// Returns `false` when unbounded.
    fn optimize(&mut self, cost: &[f64], enter_limit: usize, phase: u8, cap: usize) -> Result<bool, LpError> {
        loop {
            let entering = (0..enter_limit)
                .find(|&j| !self.basis.contains(&j) && self.reduced_cost(cost, j) < -COST_TOL);
            let Some(col) = entering else {
                return Ok(true);
            };
            let mut leave: Option<(usize, f64)> = None;
            for i in 0..self.m {
                let a = self.t[i][col];
                if a > PIVOT_TOL {
                    let ratio = self.rhs[i].max(0.0) / a;
                    leave = match leave {
                        None => Some((i, ratio)),
                        Some((k, best)) => {
                            if ratio < best - 1e-15
                                || (ratio <= best + 1e-15 && self.basis[i] < self.basis[k])
                            {
                                Some((i, ratio))
                            } else {
                                Some((k, best))
                            }
                        }
                    };
                }
            }
            let Some((row, _)) = leave else {
                return Ok(false);
            };
            self.pivot(row, col);
            self.iterations += 1;
            if self.iterations >= cap {
                return Err(LpError::IterationCap { phase, cap });
            }
        }
    }

    fn pivot(&mut self, row: usize, col: usize) {
        let p = self.t[row][col];
        for v in self.t[row].iter_mut() {
            *v /= p;
        }
        self.rhs[row] /= p;
        let pivot_row = self.t[row].clone();
        let pivot_rhs = self.rhs[row];
        for i in 0..self.m {
            if i == row {
                continue;
            }
            let f = self.t[i][col];
            if f != 0.0 {
                for (v, pv) in self.t[i].iter_mut().zip(&pivot_row) {
                    *v -= f * pv;
                }
                self.rhs[i] -= f * pivot_rhs;
                if self.rhs[i].abs() < 1e-14 {
                    self.rhs[i] = 0.0;
                }
            }
        }
        self.basis[row] = col;
    }

    fn drive_out_artificials(&mut self) {
        for i in 0..self.m {
            if self.basis[i] < self.n {
                continue;
            }
            if let Some(j) = (0..self.n).find(|&j| !self.basis.contains(&j) && self.t[i][j].abs() > 1e-9) {
                self.pivot(i, j);
            }
        }
    }
}

//! Dense two-phase simplex with Bland's rule.
//!
//! Solves `min c·x` subject to `x ≥ 0` and mixed `≤ / ≥ / =` rows. Problem
//! sizes here top out around a thousand variables (occupancy measures of
//! instances with a couple hundred states), so a dense tableau is adequate.
//! Bland's pivoting rule (smallest eligible index enters, ties in the ratio
//! test broken by smallest basic index) makes every run deterministic and
//! cycle-free. Optimal bases come with dual multipliers recovered from a
//! solve against the basis matrix, so callers can check strong duality.

use ndarray::{Array1, Array2};

use crate::error::{CmdpError, Result};
use crate::linalg::LuFactors;

/// Comparison direction of one LP row.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Relation {
    Le,
    Ge,
    Eq,
}

#[derive(Debug, Clone)]
pub struct LpRow {
    pub coeffs: Vec<f64>,
    pub relation: Relation,
    pub rhs: f64,
}

/// `min objective·x` over `x ≥ 0` subject to `rows`.
#[derive(Debug, Clone)]
pub struct LpProblem {
    pub objective: Vec<f64>,
    pub rows: Vec<LpRow>,
}

#[derive(Debug, Clone)]
pub struct LpSolution {
    /// Optimal point (original variables only).
    pub x: Vec<f64>,
    /// Optimal objective value `objective·x`.
    pub objective: f64,
    /// One dual multiplier per input row, oriented for the input row as
    /// written; zero for rows found redundant.
    pub duals: Vec<f64>,
    /// `|primal objective - dual objective|` at the final basis.
    pub duality_gap: f64,
}

#[derive(Debug, Clone)]
pub enum LpOutcome {
    Optimal(LpSolution),
    Infeasible,
    Unbounded,
}

const PIVOT_EPS: f64 = 1e-9;
const COST_EPS: f64 = 1e-9;
const PHASE1_TOL: f64 = 1e-7;
const MAX_PIVOTS: usize = 1_000_000;

struct Tableau {
    /// `rows x (cols + 1)`; last column is the rhs.
    rows: Vec<Vec<f64>>,
    /// Reduced-cost row, same width, last entry is minus the objective value.
    cost: Vec<f64>,
    /// Basic variable of each row.
    basis: Vec<usize>,
}

impl Tableau {
    fn rhs(&self, i: usize) -> f64 {
        *self.rows[i].last().unwrap()
    }

    fn pivot(&mut self, row: usize, col: usize) {
        let width = self.rows[row].len();
        let pivot = self.rows[row][col];
        for j in 0..width {
            self.rows[row][j] /= pivot;
        }
        for i in 0..self.rows.len() {
            if i == row {
                continue;
            }
            let factor = self.rows[i][col];
            if factor == 0.0 {
                continue;
            }
            for j in 0..width {
                self.rows[i][j] -= factor * self.rows[row][j];
            }
        }
        let factor = self.cost[col];
        if factor != 0.0 {
            for j in 0..width {
                self.cost[j] -= factor * self.rows[row][j];
            }
        }
        self.basis[row] = col;
    }

    /// Run simplex iterations under Bland's rule. `allowed` bounds the
    /// entering column index (columns `>= allowed` never enter).
    fn iterate(&mut self, allowed: usize, pivots: &mut usize) -> Result<bool> {
        loop {
            if *pivots > MAX_PIVOTS {
                return Err(CmdpError::NumericalFailure(format!(
                    "simplex exceeded {MAX_PIVOTS} pivots"
                )));
            }
            // Bland: smallest index with a negative reduced cost.
            let entering = (0..allowed).find(|&j| self.cost[j] < -COST_EPS);
            let Some(entering) = entering else {
                return Ok(true); // optimal
            };
            // Ratio test; ties broken by the smallest basic variable index.
            let mut leaving: Option<usize> = None;
            let mut best_ratio = f64::INFINITY;
            for i in 0..self.rows.len() {
                let a = self.rows[i][entering];
                if a > PIVOT_EPS {
                    let ratio = self.rhs(i) / a;
                    let better = match leaving {
                        None => true,
                        Some(prev) => {
                            ratio < best_ratio - 1e-12
                                || ((ratio - best_ratio).abs() <= 1e-12
                                    && self.basis[i] < self.basis[prev])
                        }
                    };
                    if better {
                        best_ratio = ratio;
                        leaving = Some(i);
                    }
                }
            }
            let Some(leaving) = leaving else {
                return Ok(false); // unbounded in the entering direction
            };
            self.pivot(leaving, entering);
            *pivots += 1;
        }
    }
}

/// Solve an LP. Determinism: identical problems produce identical pivot
/// sequences and bit-identical solutions.
pub fn solve(problem: &LpProblem) -> Result<LpOutcome> {
    let n0 = problem.objective.len();
    for (i, row) in problem.rows.iter().enumerate() {
        if row.coeffs.len() != n0 {
            return Err(CmdpError::DimensionMismatch {
                context: "lp row",
                expected: format!("{n0}"),
                actual: format!("{} (row {i})", row.coeffs.len()),
            });
        }
    }
    if problem
        .objective
        .iter()
        .chain(problem.rows.iter().flat_map(|r| r.coeffs.iter()))
        .chain(problem.rows.iter().map(|r| &r.rhs))
        .any(|v| !v.is_finite())
    {
        return Err(CmdpError::InvalidParameter(
            "lp contains non-finite coefficients".into(),
        ));
    }

    let m = problem.rows.len();

    // Standard form: flip rows so rhs >= 0, add slack (Le) / surplus (Ge).
    // `row_sign` remembers the flip for dual recovery; `orig_index` survives
    // redundant-row removal.
    let mut row_sign = vec![1.0f64; m];
    let mut relations: Vec<Relation> = Vec::with_capacity(m);
    let mut body: Vec<Vec<f64>> = Vec::with_capacity(m);
    let mut rhs: Vec<f64> = Vec::with_capacity(m);
    for (i, row) in problem.rows.iter().enumerate() {
        let mut coeffs = row.coeffs.clone();
        let mut b = row.rhs;
        let mut rel = row.relation;
        if b < 0.0 {
            row_sign[i] = -1.0;
            b = -b;
            coeffs.iter_mut().for_each(|v| *v = -*v);
            rel = match rel {
                Relation::Le => Relation::Ge,
                Relation::Ge => Relation::Le,
                Relation::Eq => Relation::Eq,
            };
        }
        relations.push(rel);
        body.push(coeffs);
        rhs.push(b);
    }

    let n_slack: usize = relations
        .iter()
        .filter(|r| matches!(r, Relation::Le | Relation::Ge))
        .count();
    let n_std = n0 + n_slack;

    // A_std rows and the structural cost vector (slacks cost nothing).
    let mut a_std: Vec<Vec<f64>> = vec![vec![0.0; n_std]; m];
    let mut c_std = vec![0.0f64; n_std];
    c_std[..n0].copy_from_slice(&problem.objective);
    let mut slack_col = n0;
    let mut initial_basis: Vec<Option<usize>> = vec![None; m];
    for i in 0..m {
        a_std[i][..n0].copy_from_slice(&body[i]);
        match relations[i] {
            Relation::Le => {
                a_std[i][slack_col] = 1.0;
                initial_basis[i] = Some(slack_col);
                slack_col += 1;
            }
            Relation::Ge => {
                a_std[i][slack_col] = -1.0;
                slack_col += 1;
            }
            Relation::Eq => {}
        }
    }

    // Phase 1 tableau: structural columns, then one artificial per row
    // lacking an initial basic column.
    let art_rows: Vec<usize> = (0..m).filter(|&i| initial_basis[i].is_none()).collect();
    let n_art = art_rows.len();
    let width = n_std + n_art;
    let mut rows: Vec<Vec<f64>> = Vec::with_capacity(m);
    let mut basis = vec![usize::MAX; m];
    for i in 0..m {
        let mut r = vec![0.0; width + 1];
        r[..n_std].copy_from_slice(&a_std[i]);
        r[width] = rhs[i];
        rows.push(r);
        if let Some(b) = initial_basis[i] {
            basis[i] = b;
        }
    }
    for (k, &i) in art_rows.iter().enumerate() {
        rows[i][n_std + k] = 1.0;
        basis[i] = n_std + k;
    }

    // Phase-1 reduced costs: cost 1 on artificials, canonicalized against
    // the artificial basics.
    let mut cost = vec![0.0f64; width + 1];
    for k in 0..n_art {
        cost[n_std + k] = 1.0;
    }
    for &i in &art_rows {
        for j in 0..=width {
            cost[j] -= rows[i][j];
        }
    }

    let mut tableau = Tableau { rows, cost, basis };
    let mut pivots = 0usize;
    let optimal = tableau.iterate(width, &mut pivots)?;
    if !optimal {
        // Phase-1 objective is bounded below by zero; an unbounded report
        // here means numerical trouble.
        return Err(CmdpError::NumericalFailure(
            "phase-1 simplex reported unbounded".into(),
        ));
    }
    let phase1_obj = -tableau.cost[width];
    if phase1_obj > PHASE1_TOL {
        return Ok(LpOutcome::Infeasible);
    }

    // Drive remaining artificial basics out; rows that cannot be pivoted on
    // any structural column are redundant and get dropped.
    let mut orig_index: Vec<usize> = (0..m).collect();
    let mut i = 0;
    while i < tableau.rows.len() {
        if tableau.basis[i] >= n_std {
            let col = (0..n_std).find(|&j| tableau.rows[i][j].abs() > PIVOT_EPS);
            match col {
                Some(j) => {
                    tableau.pivot(i, j);
                    pivots += 1;
                    i += 1;
                }
                None => {
                    tableau.rows.remove(i);
                    tableau.basis.remove(i);
                    orig_index.remove(i);
                }
            }
        } else {
            i += 1;
        }
    }

    // Phase 2: rebuild without artificial columns, install the real costs.
    let m2 = tableau.rows.len();
    let mut rows2: Vec<Vec<f64>> = Vec::with_capacity(m2);
    for r in &tableau.rows {
        let mut nr = r[..n_std].to_vec();
        nr.push(r[width]);
        rows2.push(nr);
    }
    let mut cost2 = vec![0.0f64; n_std + 1];
    cost2[..n_std].copy_from_slice(&c_std);
    for i in 0..m2 {
        let cb = c_std[tableau.basis[i]];
        if cb != 0.0 {
            for j in 0..=n_std {
                cost2[j] -= cb * rows2[i][j];
            }
        }
    }
    let mut tableau = Tableau {
        rows: rows2,
        cost: cost2,
        basis: tableau.basis,
    };
    let optimal = tableau.iterate(n_std, &mut pivots)?;
    if !optimal {
        return Ok(LpOutcome::Unbounded);
    }

    // Primal solution.
    let mut x_std = vec![0.0f64; n_std];
    for i in 0..m2 {
        x_std[tableau.basis[i]] = tableau.rhs(i);
    }
    let x: Vec<f64> = x_std[..n0].to_vec();
    let objective: f64 = problem
        .objective
        .iter()
        .zip(x.iter())
        .map(|(c, v)| c * v)
        .sum();

    // Duals from the basis matrix: solve Bᵀ y = c_B, then undo row flips.
    let mut bt = Array2::zeros((m2, m2));
    let mut cb = Array1::zeros(m2);
    for i in 0..m2 {
        cb[i] = c_std[tableau.basis[i]];
        for r in 0..m2 {
            // Bᵀ[i][r] = A_std[orig row r][basis col of row i]
            bt[[i, r]] = a_std[orig_index[r]][tableau.basis[i]];
        }
    }
    let y = LuFactors::new(&bt)?.solve(&cb)?;
    let mut duals = vec![0.0f64; m];
    for r in 0..m2 {
        duals[orig_index[r]] = row_sign[orig_index[r]] * y[r];
    }
    let dual_objective: f64 = problem
        .rows
        .iter()
        .zip(duals.iter())
        .map(|(row, y)| row.rhs * y)
        .sum();
    let duality_gap = (objective - dual_objective).abs();

    Ok(LpOutcome::Optimal(LpSolution {
        x,
        objective,
        duals,
        duality_gap,
    }))
}

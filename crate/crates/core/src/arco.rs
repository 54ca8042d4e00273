//! Accelerated regularized constrained optimization over a black-box
//! Lagrangian minimizer.
//!
//! Generic problem: `min f_0(x)` over `x ∈ X` subject to `f_i(x) ≤ 0`,
//! with `|f_i| ≤ G` on `X`. The same three-sequence dual loop as the CMDP
//! solver runs on the concave dual `d_μ(λ) = min_x L(x, λ) - (μ/2)‖λ‖²`,
//! with two sign flips relative to the CMDP case: the gradient estimate is
//! `f(x_t) - μ λ̲_t` and the prox step ascends it. The dual box radius is
//! `B = G/ξ` from the Slater margin.
//!
//! The caller's contract (strong duality, an `L`-smooth dual, a Slater
//! point) is documented, not checked — only the supplied Slater point is
//! verified against its claimed margin. Output is randomized over the
//! iterates with geometric weights; both the weighted list (exact
//! expectation) and one sampled point under a seeded RNG are returned.

use ndarray::Array1;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::arcpo::{dual_prox_step, mixture_weights, accelerated_stepsizes};
use crate::error::{CmdpError, Result};
use crate::linalg::LuFactors;
use crate::trace::{IterRecord, RunTrace};

type ScalarFn = dyn Fn(&Array1<f64>) -> f64 + Send + Sync;
type VectorFn = dyn Fn(&Array1<f64>) -> Array1<f64> + Send + Sync;
type LagOptFn = dyn Fn(f64, &Array1<f64>) -> Result<Array1<f64>> + Send + Sync;

/// A constrained problem with a pluggable Lagrangian minimizer.
pub struct ConstrainedProblem {
    pub dim: usize,
    pub num_constraints: usize,
    /// Objective `f_0`.
    pub objective: Box<ScalarFn>,
    /// Constraint vector `f(x) ∈ R^m`; feasible iff every entry ≤ 0.
    pub constraints: Box<VectorFn>,
    /// Uniform bound `G` on `|f_i(x)|` over the domain.
    pub bound_g: f64,
    /// Point with `f_i(x_ξ) ≤ -ξ` for all `i`.
    pub slater_point: Array1<f64>,
    pub slater_margin: f64,
    /// `(δ, λ) ↦ x` achieving `min_x L(x, λ)` to accuracy δ.
    pub lag_opt: Box<LagOptFn>,
}

impl std::fmt::Debug for ConstrainedProblem {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ConstrainedProblem")
            .field("dim", &self.dim)
            .field("num_constraints", &self.num_constraints)
            .field("bound_g", &self.bound_g)
            .field("slater_margin", &self.slater_margin)
            .finish_non_exhaustive()
    }
}

impl ConstrainedProblem {
    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 {
            return Err(CmdpError::InvalidInstance("problem dimension is zero".into()));
        }
        if !(self.bound_g > 0.0) || !(self.slater_margin > 0.0) {
            return Err(CmdpError::InvalidInstance(format!(
                "need G > 0 and xi > 0 (G = {}, xi = {})",
                self.bound_g, self.slater_margin
            )));
        }
        if self.slater_point.len() != self.dim {
            return Err(CmdpError::DimensionMismatch {
                context: "slater point",
                expected: format!("{}", self.dim),
                actual: format!("{}", self.slater_point.len()),
            });
        }
        let at_slater = (self.constraints)(&self.slater_point);
        if at_slater.len() != self.num_constraints {
            return Err(CmdpError::DimensionMismatch {
                context: "constraint evaluator",
                expected: format!("{}", self.num_constraints),
                actual: format!("{}", at_slater.len()),
            });
        }
        for (i, v) in at_slater.iter().enumerate() {
            if *v > -self.slater_margin + 1e-10 {
                return Err(CmdpError::InvalidInstance(format!(
                    "supplied slater point gives f_{}(x) = {v}, above -xi = {}",
                    i + 1,
                    -self.slater_margin
                )));
            }
        }
        Ok(())
    }

    /// Dual box half-radius `B = G/ξ`.
    pub fn b_radius(&self) -> f64 {
        self.bound_g / self.slater_margin
    }
}

#[derive(Debug, Clone)]
pub struct ArcoConfig {
    pub t_outer: usize,
    /// Dual strong-concavity weight `μ > 0`.
    pub mu: f64,
    /// Smoothness `L` of the unregularized dual (the stepsizes use
    /// `L̃ = L + μ`).
    pub l_smooth: f64,
    /// Accuracy handed to the Lagrangian minimizer.
    pub delta: f64,
    /// Seed of the output sampler.
    pub seed: u64,
}

/// Output of one run: the full weighted list plus one sampled point.
#[derive(Debug, Clone)]
pub struct ArcoOutput {
    pub iterates: Vec<Array1<f64>>,
    /// Sampling weights; always sum to one.
    pub weights: Vec<f64>,
    pub sampled_index: usize,
    pub sampled: Array1<f64>,
    /// `Σ_t w_t f_0(x_t)` — the exact expectation of the sampled objective.
    pub expected_objective: f64,
    /// `Σ_t w_t f(x_t)` componentwise.
    pub expected_constraints: Array1<f64>,
}

/// Inverse-CDF draw from a finite weight vector.
pub fn sample_weighted_index(weights: &[f64], rng: &mut impl Rng) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, w) in weights.iter().enumerate() {
        acc += w;
        if u < acc {
            return i;
        }
    }
    weights.len() - 1
}

/// Run the accelerated regularized dual ascent. Deterministic given the
/// config seed.
pub fn run_arco(
    problem: &ConstrainedProblem,
    config: &ArcoConfig,
) -> Result<(ArcoOutput, RunTrace)> {
    problem.validate()?;
    if config.t_outer == 0 {
        return Err(CmdpError::InvalidConfig("need at least one outer iteration".into()));
    }
    if !(config.delta > 0.0) {
        return Err(CmdpError::InvalidConfig(format!(
            "need delta > 0, got {}",
            config.delta
        )));
    }
    if !(config.l_smooth >= 0.0) || !config.l_smooth.is_finite() {
        return Err(CmdpError::InvalidConfig(format!(
            "dual smoothness must be finite and nonnegative, got {}",
            config.l_smooth
        )));
    }
    let (alpha, q, eta) = accelerated_stepsizes(config.mu, config.l_smooth + config.mu)?;
    let m = problem.num_constraints;
    let b_radius = problem.b_radius();

    let mut lambda: Array1<f64> = Array1::zeros(m);
    let mut lambda_bar: Array1<f64> = Array1::zeros(m);
    let mut trace = RunTrace::default();
    let mut iterates: Vec<Array1<f64>> = Vec::with_capacity(config.t_outer);

    for t in 1..=config.t_outer {
        let lambda_under = (1.0 - q) * &lambda_bar + q * &lambda;
        let x_t = (problem.lag_opt)(config.delta, &lambda_under).map_err(|e| {
            CmdpError::NumericalFailure(format!(
                "Lagrangian minimizer failed at outer iteration {t}: {e}"
            ))
        })?;
        if x_t.len() != problem.dim || x_t.iter().any(|v| !v.is_finite()) {
            return Err(CmdpError::NumericalFailure(format!(
                "Lagrangian minimizer returned an invalid point at outer iteration {t}"
            )));
        }
        let f_vals = (problem.constraints)(&x_t);
        let f0 = (problem.objective)(&x_t);
        if !f0.is_finite() || f_vals.iter().any(|v| !v.is_finite()) {
            return Err(CmdpError::NumericalFailure(format!(
                "non-finite problem evaluation at outer iteration {t}"
            )));
        }

        // Ascent gradient estimate of d_μ, fed to the prox step negated:
        // the step maximizes, where the CMDP loop minimizes.
        let g_hat = &f_vals - config.mu * &lambda_under;
        let descent_g = -&g_hat;
        let lambda_next = dual_prox_step(
            &lambda,
            &lambda_under,
            &descent_g,
            eta,
            config.mu,
            b_radius,
        )?;
        let step_norm = (&lambda_next - &lambda).iter().map(|v| v * v).sum::<f64>().sqrt();
        lambda_bar = (1.0 - alpha) * &lambda_bar + alpha * &lambda_next;
        lambda = lambda_next;

        trace.push(IterRecord {
            iter: t,
            v0: f0,
            constraint_values: f_vals.to_vec(),
            lambda: lambda.to_vec(),
            lambda_step_norm: step_norm,
            grad_error_norm: None,
            inner_gap: None,
            oracle_calls: t as u64,
        });
        iterates.push(x_t);
    }

    let weights = mixture_weights(&vec![alpha; config.t_outer]);
    let expected_objective: f64 = trace
        .records
        .iter()
        .zip(&weights)
        .map(|(r, w)| w * r.v0)
        .sum();
    let mut expected_constraints = Array1::zeros(m);
    for (record, w) in trace.records.iter().zip(&weights) {
        for i in 0..m {
            expected_constraints[i] += w * record.constraint_values[i];
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let sampled_index = sample_weighted_index(&weights, &mut rng);
    let sampled = iterates[sampled_index].clone();

    Ok((
        ArcoOutput {
            iterates,
            weights,
            sampled_index,
            sampled,
            expected_objective,
            expected_constraints,
        },
        trace,
    ))
}

/// Strongly convex quadratic with affine constraints:
/// `f_0(x) = ½ xᵀPx + qᵀx`, `f_i(x) = a_iᵀx + b_i`.
///
/// These are the test problems where the caller's contract provably holds:
/// strong duality, closed-form dual smoothness, and an exact Lagrangian
/// minimizer `x*(λ) = -P^{-1}(q + Aᵀλ)`.
#[derive(Debug, Clone)]
pub struct QuadraticProgram {
    pub p: ndarray::Array2<f64>,
    pub q: Array1<f64>,
    pub a: ndarray::Array2<f64>,
    pub b: Array1<f64>,
    pub bound_g: f64,
    pub slater_point: Array1<f64>,
}

impl QuadraticProgram {
    pub fn num_vars(&self) -> usize {
        self.q.len()
    }

    pub fn num_constraints(&self) -> usize {
        self.b.len()
    }

    /// Upper bound on the dual smoothness: `‖A P⁻¹ Aᵀ‖_F ≥ ‖·‖_2`.
    pub fn dual_smoothness(&self) -> Result<f64> {
        let factors = LuFactors::new(&self.p)?;
        let m = self.num_constraints();
        let mut gram = ndarray::Array2::zeros((m, m));
        for j in 0..m {
            let col = factors.solve(&self.a.row(j).to_owned())?;
            for i in 0..m {
                gram[[i, j]] = self.a.row(i).dot(&col);
            }
        }
        Ok(gram.iter().map(|v| v * v).sum::<f64>().sqrt())
    }

    pub fn to_problem(&self) -> Result<ConstrainedProblem> {
        let n = self.num_vars();
        let m = self.num_constraints();
        if self.p.dim() != (n, n) || self.a.dim() != (m, n) || self.slater_point.len() != n {
            return Err(CmdpError::InvalidInstance(
                "inconsistent quadratic-program shapes".into(),
            ));
        }
        let factors = LuFactors::new(&self.p)?;
        let p = self.p.clone();
        let q = self.q.clone();
        let a = self.a.clone();
        let b = self.b.clone();
        let margin = {
            let at_slater = a.dot(&self.slater_point) + &b;
            let worst = at_slater.iter().fold(f64::NEG_INFINITY, |acc, v| acc.max(*v));
            -worst
        };
        if !(margin > 0.0) {
            return Err(CmdpError::InvalidInstance(format!(
                "slater point is not strictly feasible (margin {margin})"
            )));
        }

        let objective = {
            let p = p.clone();
            let q = q.clone();
            move |x: &Array1<f64>| 0.5 * x.dot(&p.dot(x)) + q.dot(x)
        };
        let constraints = {
            let a = a.clone();
            let b = b.clone();
            move |x: &Array1<f64>| a.dot(x) + &b
        };
        let lag_opt = {
            let a = a.clone();
            let q = q.clone();
            move |_delta: f64, lambda: &Array1<f64>| -> Result<Array1<f64>> {
                let rhs = -(&q + &a.t().dot(lambda));
                factors.solve(&rhs)
            }
        };
        Ok(ConstrainedProblem {
            dim: n,
            num_constraints: m,
            objective: Box::new(objective),
            constraints: Box::new(constraints),
            bound_g: self.bound_g,
            slater_point: self.slater_point.clone(),
            slater_margin: margin,
            lag_opt: Box::new(lag_opt),
        })
    }
}

/// The reference quadratic: `f_0 = ‖x‖²/2`, `f_1 = 1 - x_1` in `R^2`, with
/// Slater point `(2, 0)` and `G = 4`. KKT gives `x* = (1, 0)`, optimum
/// `1/2`, `λ* = 1`.
pub fn reference_qp() -> QuadraticProgram {
    QuadraticProgram {
        p: ndarray::Array2::eye(2),
        q: Array1::zeros(2),
        a: ndarray::array![[-1.0, 0.0]],
        b: ndarray::array![1.0],
        bound_g: 4.0,
        slater_point: ndarray::array![2.0, 0.0],
    }
}

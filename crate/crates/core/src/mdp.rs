//! Problem-instance types and exact policy evaluation.
//!
//! A tabular constrained MDP carries one objective reward `r_0` and `m`
//! constraint utilities `r_1..r_m` with thresholds `c`. For a policy `π`
//! the discounted state-action visitation distribution `ν` satisfies
//! `V_i^π(ρ) = ⟨ν, r_i⟩ / (1-γ)`, and everything in this module is computed
//! from dense linear solves against that identity — no iteration, no
//! sampling, no tolerance tuning beyond floating-point roundoff.

use ndarray::{Array1, Array2, Array3};

use crate::error::{CmdpError, Result};
use crate::linalg::LuFactors;

/// Tolerance for "this row is a probability distribution" checks.
pub const ROW_SUM_TOL: f64 = 1e-12;
/// Tolerance for the total mass of an occupancy measure.
pub const OCCUPANCY_SUM_TOL: f64 = 1e-10;

/// Validation tolerances, overridable where the defaults are too strict for
/// externally produced data.
#[derive(Debug, Clone, Copy)]
pub struct Tolerances {
    /// Row sums of transition kernels, policies and the initial distribution.
    pub row_sum: f64,
    /// Total mass of an occupancy measure.
    pub occupancy_sum: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            row_sum: ROW_SUM_TOL,
            occupancy_sum: OCCUPANCY_SUM_TOL,
        }
    }
}

/// A tabular constrained MDP instance.
///
/// Immutable after construction; every operation on it is a pure function,
/// so instances can be shared freely across threads.
#[derive(Debug, Clone)]
pub struct TabularCmdp {
    num_states: usize,
    num_actions: usize,
    /// Transition kernel, indexed `[s, a, s']`.
    transition: Array3<f64>,
    /// `m + 1` reward matrices indexed `[s, a]`; index 0 is the objective.
    rewards: Vec<Array2<f64>>,
    /// Constraint thresholds, length `m`.
    thresholds: Array1<f64>,
    discount: f64,
    initial_dist: Array1<f64>,
}

impl TabularCmdp {
    pub fn new(
        transition: Array3<f64>,
        rewards: Vec<Array2<f64>>,
        thresholds: Array1<f64>,
        discount: f64,
        initial_dist: Array1<f64>,
    ) -> Result<Self> {
        Self::new_with_tolerances(
            transition,
            rewards,
            thresholds,
            discount,
            initial_dist,
            &Tolerances::default(),
        )
    }

    /// Construct an instance, reporting the first violated invariant.
    pub fn new_with_tolerances(
        transition: Array3<f64>,
        rewards: Vec<Array2<f64>>,
        thresholds: Array1<f64>,
        discount: f64,
        initial_dist: Array1<f64>,
        tol: &Tolerances,
    ) -> Result<Self> {
        let (num_states, num_actions, s2) = transition.dim();
        if num_states == 0 || num_actions == 0 {
            return Err(CmdpError::InvalidInstance(
                "state and action counts must be positive".into(),
            ));
        }
        if s2 != num_states {
            return Err(CmdpError::InvalidInstance(format!(
                "transition tensor must be |S|x|A|x|S|, got {num_states}x{num_actions}x{s2}"
            )));
        }
        if !(discount > 0.0 && discount < 1.0) {
            return Err(CmdpError::InvalidInstance(format!(
                "discount must lie in (0,1), got {discount}"
            )));
        }
        for s in 0..num_states {
            for a in 0..num_actions {
                let mut sum = 0.0;
                for s_next in 0..num_states {
                    let p = transition[[s, a, s_next]];
                    if !p.is_finite() || p < 0.0 {
                        return Err(CmdpError::InvalidInstance(format!(
                            "transition({s},{a},{s_next}) = {p} is negative or non-finite"
                        )));
                    }
                    sum += p;
                }
                if (sum - 1.0).abs() > tol.row_sum {
                    return Err(CmdpError::InvalidInstance(format!(
                        "transition row (s={s}, a={a}) sums to {sum}, expected 1"
                    )));
                }
            }
        }
        if rewards.is_empty() {
            return Err(CmdpError::InvalidInstance(
                "at least the objective reward r_0 is required".into(),
            ));
        }
        for (i, r) in rewards.iter().enumerate() {
            if r.dim() != (num_states, num_actions) {
                return Err(CmdpError::InvalidInstance(format!(
                    "reward {i} has shape {:?}, expected ({num_states}, {num_actions})",
                    r.dim()
                )));
            }
            if let Some(bad) = r.iter().find(|v| !v.is_finite() || **v < 0.0) {
                return Err(CmdpError::InvalidInstance(format!(
                    "reward {i} contains negative or non-finite entry {bad}"
                )));
            }
        }
        let m = rewards.len() - 1;
        if thresholds.len() != m {
            return Err(CmdpError::InvalidInstance(format!(
                "got {} thresholds for {m} constraint rewards",
                thresholds.len()
            )));
        }
        if let Some(bad) = thresholds.iter().find(|v| !v.is_finite()) {
            return Err(CmdpError::InvalidInstance(format!(
                "threshold {bad} is not finite"
            )));
        }
        if initial_dist.len() != num_states {
            return Err(CmdpError::InvalidInstance(format!(
                "initial distribution has length {}, expected {num_states}",
                initial_dist.len()
            )));
        }
        if let Some(bad) = initial_dist.iter().find(|v| !v.is_finite() || **v < 0.0) {
            return Err(CmdpError::InvalidInstance(format!(
                "initial distribution entry {bad} is negative or non-finite"
            )));
        }
        let rho_sum: f64 = initial_dist.sum();
        if (rho_sum - 1.0).abs() > tol.row_sum {
            return Err(CmdpError::InvalidInstance(format!(
                "initial distribution sums to {rho_sum}, expected 1"
            )));
        }
        Ok(Self {
            num_states,
            num_actions,
            transition,
            rewards,
            thresholds,
            discount,
            initial_dist,
        })
    }

    pub fn num_states(&self) -> usize {
        self.num_states
    }

    pub fn num_actions(&self) -> usize {
        self.num_actions
    }

    /// Number of constraints `m` (may be zero: plain unconstrained MDP).
    pub fn num_constraints(&self) -> usize {
        self.rewards.len() - 1
    }

    pub fn discount(&self) -> f64 {
        self.discount
    }

    pub fn transition(&self) -> &Array3<f64> {
        &self.transition
    }

    /// Reward matrix `r_i`, `0 ≤ i ≤ m`.
    pub fn reward(&self, i: usize) -> Result<&Array2<f64>> {
        self.rewards.get(i).ok_or_else(|| {
            CmdpError::InvalidParameter(format!(
                "reward index {i} out of range (m = {})",
                self.num_constraints()
            ))
        })
    }

    pub fn rewards(&self) -> &[Array2<f64>] {
        &self.rewards
    }

    pub fn thresholds(&self) -> &Array1<f64> {
        &self.thresholds
    }

    pub fn initial_dist(&self) -> &Array1<f64> {
        &self.initial_dist
    }

    /// Same instance with different thresholds (used by the generator,
    /// which needs value oracles before thresholds exist).
    pub fn with_thresholds(&self, thresholds: Array1<f64>) -> Result<Self> {
        Self::new(
            self.transition.clone(),
            self.rewards.clone(),
            thresholds,
            self.discount,
            self.initial_dist.clone(),
        )
    }
}

/// A stationary policy: a row-stochastic |S|x|A| matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Policy {
    probs: Array2<f64>,
}

impl Policy {
    pub fn new(probs: Array2<f64>) -> Result<Self> {
        for (s, row) in probs.outer_iter().enumerate() {
            let mut sum = 0.0;
            for &p in row.iter() {
                if !p.is_finite() || p < 0.0 {
                    return Err(CmdpError::InvalidInstance(format!(
                        "policy row {s} contains negative or non-finite entry {p}"
                    )));
                }
                sum += p;
            }
            if (sum - 1.0).abs() > ROW_SUM_TOL {
                return Err(CmdpError::InvalidInstance(format!(
                    "policy row {s} sums to {sum}, expected 1"
                )));
            }
        }
        Ok(Self { probs })
    }

    /// The uniform policy on `|S|` states and `|A|` actions.
    pub fn uniform(num_states: usize, num_actions: usize) -> Self {
        Self {
            probs: Array2::from_elem((num_states, num_actions), 1.0 / num_actions as f64),
        }
    }

    /// Deterministic policy from one action index per state.
    pub fn deterministic(num_actions: usize, actions: &[usize]) -> Result<Self> {
        let mut probs = Array2::zeros((actions.len(), num_actions));
        for (s, &a) in actions.iter().enumerate() {
            if a >= num_actions {
                return Err(CmdpError::InvalidParameter(format!(
                    "action {a} out of range at state {s}"
                )));
            }
            probs[[s, a]] = 1.0;
        }
        Ok(Self { probs })
    }

    pub fn probs(&self) -> &Array2<f64> {
        &self.probs
    }

    pub fn num_states(&self) -> usize {
        self.probs.nrows()
    }

    pub fn num_actions(&self) -> usize {
        self.probs.ncols()
    }

    /// Largest absolute entrywise difference to another policy.
    pub fn sup_distance(&self, other: &Policy) -> f64 {
        self.probs
            .iter()
            .zip(other.probs.iter())
            .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()))
    }
}

/// Discounted state-action visitation distribution `ν` of a policy.
#[derive(Debug, Clone)]
pub struct OccupancyMeasure {
    nu: Array2<f64>,
}

impl OccupancyMeasure {
    pub fn new(nu: Array2<f64>) -> Result<Self> {
        Self::new_with_tolerances(nu, &Tolerances::default())
    }

    pub fn new_with_tolerances(nu: Array2<f64>, tol: &Tolerances) -> Result<Self> {
        if let Some(bad) = nu.iter().find(|v| !v.is_finite() || **v < 0.0) {
            return Err(CmdpError::InvalidInstance(format!(
                "occupancy entry {bad} is negative or non-finite"
            )));
        }
        let total = nu.sum();
        if (total - 1.0).abs() > tol.occupancy_sum {
            return Err(CmdpError::InvalidInstance(format!(
                "occupancy mass is {total}, expected 1"
            )));
        }
        Ok(Self { nu })
    }

    pub fn nu(&self) -> &Array2<f64> {
        &self.nu
    }

    /// State marginal `χ(s) = Σ_a ν(s,a)`.
    pub fn state_marginal(&self) -> Array1<f64> {
        self.nu.sum_axis(ndarray::Axis(1))
    }
}

/// Per-reward maxima and their aggregate, used by the stepsize formulas.
#[derive(Debug, Clone)]
pub struct RewardStats {
    /// `max_{s,a} r_i(s,a)` for `i = 0..m`.
    pub per_reward_max: Vec<f64>,
    /// `r_{0,max}`.
    pub r0_max: f64,
    /// `sqrt(Σ_{i=1..m} r_{i,max}^2)`.
    pub r_max: f64,
}

impl RewardStats {
    pub fn from_cmdp(cmdp: &TabularCmdp) -> Self {
        let per_reward_max: Vec<f64> = cmdp
            .rewards()
            .iter()
            .map(|r| r.iter().fold(0.0f64, |m, v| m.max(*v)))
            .collect();
        let r0_max = per_reward_max[0];
        let r_max = per_reward_max[1..]
            .iter()
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt();
        Self {
            per_reward_max,
            r0_max,
            r_max,
        }
    }
}

fn check_policy_shape(cmdp: &TabularCmdp, pi: &Policy) -> Result<()> {
    if pi.num_states() != cmdp.num_states() || pi.num_actions() != cmdp.num_actions() {
        return Err(CmdpError::DimensionMismatch {
            context: "policy vs instance",
            expected: format!("{}x{}", cmdp.num_states(), cmdp.num_actions()),
            actual: format!("{}x{}", pi.num_states(), pi.num_actions()),
        });
    }
    Ok(())
}

fn check_lambda_shape(cmdp: &TabularCmdp, lambda: &Array1<f64>) -> Result<()> {
    if lambda.len() != cmdp.num_constraints() {
        return Err(CmdpError::DimensionMismatch {
            context: "dual variable vs instance",
            expected: format!("{}", cmdp.num_constraints()),
            actual: format!("{}", lambda.len()),
        });
    }
    Ok(())
}

/// Markov chain induced by a policy: `P_π(s'|s) = Σ_a π(a|s) P(s'|s,a)`.
pub fn policy_transition(cmdp: &TabularCmdp, pi: &Policy) -> Result<Array2<f64>> {
    check_policy_shape(cmdp, pi)?;
    let n = cmdp.num_states();
    let mut p = Array2::zeros((n, n));
    for s in 0..n {
        for a in 0..cmdp.num_actions() {
            let w = pi.probs()[[s, a]];
            if w == 0.0 {
                continue;
            }
            for s_next in 0..n {
                p[[s, s_next]] += w * cmdp.transition()[[s, a, s_next]];
            }
        }
    }
    Ok(p)
}

/// LU factors of `(I - γ P_π)`, reused for every value-style solve under
/// one policy. The transposed system for occupancy flows is factored
/// separately on demand.
struct PolicySystem {
    factors: LuFactors,
}

impl PolicySystem {
    fn new(cmdp: &TabularCmdp, p_pi: &Array2<f64>) -> Result<Self> {
        let n = cmdp.num_states();
        let gamma = cmdp.discount();
        let mut a = Array2::zeros((n, n));
        for i in 0..n {
            for j in 0..n {
                a[[i, j]] = if i == j { 1.0 } else { 0.0 } - gamma * p_pi[[i, j]];
            }
        }
        Ok(Self {
            factors: LuFactors::new(&a)?,
        })
    }
}

/// Occupancy measure of a policy: `ν(s,a) = χ(s) π(a|s)` where `χ` solves
/// the discounted flow equation `χᵀ = (1-γ)ρᵀ + γ χᵀ P_π`.
pub fn occupancy(cmdp: &TabularCmdp, pi: &Policy) -> Result<OccupancyMeasure> {
    check_policy_shape(cmdp, pi)?;
    let p_pi = policy_transition(cmdp, pi)?;
    let n = cmdp.num_states();
    let gamma = cmdp.discount();
    // (I - γ P_πᵀ) χ = (1-γ) ρ
    let mut a = Array2::zeros((n, n));
    for i in 0..n {
        for j in 0..n {
            a[[i, j]] = if i == j { 1.0 } else { 0.0 } - gamma * p_pi[[j, i]];
        }
    }
    let b = cmdp.initial_dist() * (1.0 - gamma);
    let chi = LuFactors::new(&a)?.solve(&b)?;

    let mut nu = Array2::zeros((n, cmdp.num_actions()));
    for s in 0..n {
        let mass = chi[s];
        // χ is a distribution up to roundoff; scrub the dust, fail loudly on
        // anything that is actually negative.
        if mass < -1e-9 {
            return Err(CmdpError::NumericalFailure(format!(
                "occupancy solve produced χ({s}) = {mass}"
            )));
        }
        let mass = mass.max(0.0);
        for a_idx in 0..cmdp.num_actions() {
            nu[[s, a_idx]] = mass * pi.probs()[[s, a_idx]];
        }
    }
    OccupancyMeasure::new(nu)
}

/// Value of reward `i` under a policy, via the occupancy identity
/// `V_i^π(ρ) = ⟨ν, r_i⟩ / (1-γ)`.
pub fn value(cmdp: &TabularCmdp, pi: &Policy, i: usize) -> Result<f64> {
    let nu = occupancy(cmdp, pi)?;
    value_from_occupancy(cmdp, &nu, i)
}

/// `⟨ν, r_i⟩ / (1-γ)` for a precomputed occupancy measure.
pub fn value_from_occupancy(cmdp: &TabularCmdp, nu: &OccupancyMeasure, i: usize) -> Result<f64> {
    let r = cmdp.reward(i)?;
    let inner: f64 = nu.nu().iter().zip(r.iter()).map(|(n, r)| n * r).sum();
    Ok(inner / (1.0 - cmdp.discount()))
}

/// All `m + 1` values of a policy from a single occupancy solve;
/// index 0 is the objective.
pub fn all_values(cmdp: &TabularCmdp, pi: &Policy) -> Result<Array1<f64>> {
    let nu = occupancy(cmdp, pi)?;
    let mut out = Array1::zeros(cmdp.num_constraints() + 1);
    for i in 0..=cmdp.num_constraints() {
        out[i] = value_from_occupancy(cmdp, &nu, i)?;
    }
    Ok(out)
}

/// Value of reward `i` via the Bellman route: solve `(I - γP_π) v = r_{i,π}`
/// and return `ρᵀ v`. Independent of [`value`], kept as a cross-check.
pub fn value_bellman(cmdp: &TabularCmdp, pi: &Policy, i: usize) -> Result<f64> {
    check_policy_shape(cmdp, pi)?;
    let r = cmdp.reward(i)?;
    let p_pi = policy_transition(cmdp, pi)?;
    let system = PolicySystem::new(cmdp, &p_pi)?;
    let mut r_pi = Array1::zeros(cmdp.num_states());
    for s in 0..cmdp.num_states() {
        for a in 0..cmdp.num_actions() {
            r_pi[s] += pi.probs()[[s, a]] * r[[s, a]];
        }
    }
    let v = system.factors.solve(&r_pi)?;
    Ok(cmdp.initial_dist().dot(&v))
}

/// Discounted entropy `H(π) = ⟨ν, -log π⟩ / (1-γ)`, with `0·log 0 = 0`.
///
/// Always lies in `[0, log|A| / (1-γ)]`.
pub fn entropy_value(cmdp: &TabularCmdp, pi: &Policy) -> Result<f64> {
    let nu = occupancy(cmdp, pi)?;
    let mut acc = 0.0;
    for (n, p) in nu.nu().iter().zip(pi.probs().iter()) {
        if *n > 0.0 && *p > 0.0 {
            acc -= n * p.ln();
        }
    }
    Ok(acc / (1.0 - cmdp.discount()))
}

/// Mixed reward `r_λ = r_0 + Σ_i λ_i r_i`.
pub fn combined_reward(cmdp: &TabularCmdp, lambda: &Array1<f64>) -> Result<Array2<f64>> {
    check_lambda_shape(cmdp, lambda)?;
    if let Some(bad) = lambda.iter().find(|v| !v.is_finite() || **v < 0.0) {
        return Err(CmdpError::InvalidParameter(format!(
            "dual variable entry {bad} is negative or non-finite"
        )));
    }
    let mut r = cmdp.reward(0)?.clone();
    for (i, li) in lambda.iter().enumerate() {
        if *li == 0.0 {
            continue;
        }
        r.scaled_add(*li, cmdp.reward(i + 1)?);
    }
    Ok(r)
}

/// Regularized Lagrangian
/// `L_{τ,μ}(π, λ) = V_0^π(ρ) + ⟨λ, V^π(ρ) - c⟩ + τ H(π) + (μ/2)‖λ‖²`.
pub fn regularized_lagrangian(
    cmdp: &TabularCmdp,
    pi: &Policy,
    lambda: &Array1<f64>,
    tau: f64,
    mu: f64,
) -> Result<f64> {
    check_lambda_shape(cmdp, lambda)?;
    if tau < 0.0 || mu < 0.0 {
        return Err(CmdpError::InvalidParameter(format!(
            "regularization weights must be nonnegative (tau = {tau}, mu = {mu})"
        )));
    }
    if let Some(bad) = lambda.iter().find(|v| **v < 0.0) {
        return Err(CmdpError::InvalidParameter(format!(
            "dual variable entry {bad} is negative"
        )));
    }
    let nu = occupancy(cmdp, pi)?;
    let mut total = value_from_occupancy(cmdp, &nu, 0)?;
    for i in 0..cmdp.num_constraints() {
        total += lambda[i] * (value_from_occupancy(cmdp, &nu, i + 1)? - cmdp.thresholds()[i]);
    }
    if tau > 0.0 {
        let mut h = 0.0;
        for (n, p) in nu.nu().iter().zip(pi.probs().iter()) {
            if *n > 0.0 && *p > 0.0 {
                h -= n * p.ln();
            }
        }
        total += tau * h / (1.0 - cmdp.discount());
    }
    total += 0.5 * mu * lambda.dot(lambda);
    Ok(total)
}

/// Entropy-regularized Q function of a policy under the mixed reward:
/// solve `(I - γP_π) v = r̃_π` with
/// `r̃_π(s) = Σ_a π(a|s)(r_λ(s,a) - τ log π(a|s))`, then
/// `Q(s,a) = r_λ(s,a) + γ Σ_{s'} P(s'|s,a) v(s')`.
pub fn soft_q_eval(
    cmdp: &TabularCmdp,
    pi: &Policy,
    lambda: &Array1<f64>,
    tau: f64,
) -> Result<Array2<f64>> {
    check_policy_shape(cmdp, pi)?;
    if tau < 0.0 {
        return Err(CmdpError::InvalidParameter(format!(
            "tau must be nonnegative, got {tau}"
        )));
    }
    if tau > 0.0 {
        if let Some((s, a)) = (0..pi.num_states())
            .flat_map(|s| (0..pi.num_actions()).map(move |a| (s, a)))
            .find(|&(s, a)| pi.probs()[[s, a]] <= 0.0)
        {
            return Err(CmdpError::InvalidParameter(format!(
                "policy has a zero entry at (s={s}, a={a}); the regularized \
                 value is undefined at the simplex boundary"
            )));
        }
    }
    let r_lambda = combined_reward(cmdp, lambda)?;
    let p_pi = policy_transition(cmdp, pi)?;
    let system = PolicySystem::new(cmdp, &p_pi)?;
    let n = cmdp.num_states();
    let mut r_tilde = Array1::zeros(n);
    for s in 0..n {
        for a in 0..cmdp.num_actions() {
            let p = pi.probs()[[s, a]];
            if p == 0.0 {
                continue;
            }
            let mut term = r_lambda[[s, a]];
            if tau > 0.0 {
                term -= tau * p.ln();
            }
            r_tilde[s] += p * term;
        }
    }
    let v = system.factors.solve(&r_tilde)?;
    let gamma = cmdp.discount();
    let mut q = r_lambda;
    for s in 0..n {
        for a in 0..cmdp.num_actions() {
            let mut exp_next = 0.0;
            for s_next in 0..n {
                exp_next += cmdp.transition()[[s, a, s_next]] * v[s_next];
            }
            q[[s, a]] += gamma * exp_next;
        }
    }
    Ok(q)
}

//! Baseline alternating primal-dual scheme.
//!
//! The classical loop: solve the inner policy optimization at the current
//! dual variable, then take a projected dual gradient step
//! `λ_{t} = (λ_{t-1} - η (V^{π_t}(ρ) - c))_+`. The scheme does not specify
//! an output policy, so both the last iterate and the uniform mixture over
//! all iterates are reported; benchmark tables show each.

use ndarray::Array1;

use crate::arcpo::{mix_policies, InnerSolver};
use crate::error::{CmdpError, Result};
use crate::mdp::{self, Policy, RewardStats, TabularCmdp};
use crate::regpo::{self, RegpoOptions};
use crate::trace::{IterRecord, RunTrace};

#[derive(Debug, Clone)]
pub struct PdoConfig {
    /// Outer iterations `T ≥ 1`.
    pub t_outer: usize,
    /// Dual stepsize `η > 0`.
    pub eta: f64,
    pub inner: InnerSolver,
    /// Inner accuracy handed to RegPO.
    pub delta: f64,
    /// Entropy weight of the inner solver. The baseline is nominally
    /// unregularized; `τ = 1e-3` serves as the τ→0 proxy.
    pub tau: f64,
    /// `Some(B)` projects onto `[0, 2B]^m`, `None` onto the nonnegative
    /// orthant (the plain `(·)_+` of the classical update).
    pub projection_box: Option<f64>,
    /// Finite reward-scale radius used only by the inner iteration budget.
    pub budget_radius: f64,
}

impl PdoConfig {
    pub fn validate(&self) -> Result<()> {
        if self.t_outer == 0 {
            return Err(CmdpError::InvalidConfig("need at least one outer iteration".into()));
        }
        if !(self.eta > 0.0) || !(self.delta > 0.0) || !(self.tau > 0.0) {
            return Err(CmdpError::InvalidConfig(format!(
                "need eta, delta, tau > 0 (eta = {}, delta = {}, tau = {})",
                self.eta, self.delta, self.tau
            )));
        }
        if let Some(b) = self.projection_box {
            if !(b > 0.0) || !b.is_finite() {
                return Err(CmdpError::InvalidConfig(format!(
                    "projection box half-radius must be positive and finite, got {b}"
                )));
            }
        }
        if !(self.budget_radius > 0.0) || !self.budget_radius.is_finite() {
            return Err(CmdpError::InvalidConfig(format!(
                "budget radius must be positive and finite, got {}",
                self.budget_radius
            )));
        }
        Ok(())
    }
}

/// Both output policies of a baseline run.
#[derive(Debug, Clone)]
pub struct PdoOutput {
    pub last: Policy,
    /// Uniform mixture over all iterates (weights `1/T`), built through the
    /// same occupancy-weighted construction as the accelerated solver so
    /// value functions average exactly.
    pub mixed: Policy,
}

/// Run the baseline. Deterministic given the config.
pub fn run_pdo(cmdp: &TabularCmdp, config: &PdoConfig) -> Result<(PdoOutput, RunTrace)> {
    config.validate()?;
    let m = cmdp.num_constraints();
    let stats = RewardStats::from_cmdp(cmdp);
    let opts = RegpoOptions::default();
    let mut lambda = Array1::zeros(m);
    let mut trace = RunTrace::default();
    let mut oracle_calls = 0u64;
    let mut policies: Vec<Policy> = Vec::with_capacity(config.t_outer);

    for t in 1..=config.t_outer {
        let inner = match config.inner {
            InnerSolver::SoftQ => regpo::regpo_softq(
                cmdp,
                &lambda,
                config.tau,
                config.delta,
                &stats,
                config.budget_radius,
                &opts,
            )?,
            InnerSolver::Npg => regpo::regpo_npg(
                cmdp,
                &lambda,
                config.tau,
                config.delta,
                &stats,
                config.budget_radius,
                &opts,
            )?,
        };
        oracle_calls += inner.iterations_used as u64;
        let values = mdp::all_values(cmdp, &inner.policy)?;
        if values.iter().any(|v| !v.is_finite()) {
            return Err(CmdpError::NumericalFailure(format!(
                "non-finite policy value at outer iteration {t}"
            )));
        }

        let mut next = Array1::zeros(m);
        for i in 0..m {
            let stepped = lambda[i] - config.eta * (values[i + 1] - cmdp.thresholds()[i]);
            next[i] = match config.projection_box {
                Some(b) => stepped.clamp(0.0, 2.0 * b),
                None => stepped.max(0.0),
            };
        }
        if next.iter().any(|v| !v.is_finite()) {
            return Err(CmdpError::NumericalFailure(format!(
                "non-finite dual iterate at outer iteration {t}"
            )));
        }
        let step_norm = (&next - &lambda).iter().map(|v| v * v).sum::<f64>().sqrt();
        lambda = next;

        trace.push(IterRecord {
            iter: t,
            v0: values[0],
            constraint_values: values.iter().skip(1).copied().collect(),
            lambda: lambda.to_vec(),
            lambda_step_norm: step_norm,
            grad_error_norm: None,
            inner_gap: None,
            oracle_calls,
        });
        policies.push(inner.policy);
    }

    let last = policies.last().expect("t_outer >= 1").clone();
    let uniform = vec![1.0 / config.t_outer as f64; config.t_outer];
    let mixed = mix_policies(cmdp, &policies, &uniform)?;
    Ok((PdoOutput { last, mixed }, trace))
}

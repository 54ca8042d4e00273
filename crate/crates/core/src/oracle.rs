//! Ground-truth CMDP solutions via linear programming over occupancy
//! measures.
//!
//! The LP maximizes `⟨ν, r_0⟩` over the discounted flow polytope
//! `{ν ≥ 0 : Σ_a ν(s,a) = (1-γ)ρ(s) + γ Σ_{s',a'} P(s|s',a') ν(s',a')}`
//! with the constraint rows `⟨ν, r_i⟩ ≥ (1-γ) c_i`, which is exactly the
//! CMDP by the occupancy identity `V_i = ⟨ν, r_i⟩/(1-γ)`. An auxiliary LP
//! over the same polytope computes the best achievable Slater margin.

use ndarray::Array2;

use crate::error::{CmdpError, Result};
use crate::mdp::{self, OccupancyMeasure, Policy, TabularCmdp};
use crate::simplex::{self, LpOutcome, LpProblem, LpRow, Relation};

/// States with less aggregate visitation than this get a uniform row when a
/// policy is extracted from an occupancy measure.
pub const EXTRACTION_FLOOR: f64 = 1e-14;

/// Everything the LP oracle certifies about one instance.
#[derive(Debug, Clone)]
pub struct SolveCertificate {
    /// `V_0^*(ρ)`.
    pub optimal_value: f64,
    pub optimal_occupancy: OccupancyMeasure,
    /// Policy extracted from the optimal occupancy (`π(a|s) = ν(s,a)/χ(s)`).
    pub optimal_policy: Policy,
    /// Constraint values `V_i` of the optimal occupancy, `i = 1..m`.
    pub constraint_values: Vec<f64>,
    /// Largest absolute violation of a flow constraint at the optimum.
    pub feasibility_residual: f64,
    /// Best achievable Slater margin `ξ*` of the instance.
    pub slater_margin: f64,
}

/// Outcome of the exact solve: the LP is infeasible precisely when no
/// policy meets all constraints.
#[derive(Debug, Clone)]
pub enum CmdpSolve {
    Optimal(Box<SolveCertificate>),
    Infeasible,
}

fn var_index(cmdp: &TabularCmdp, s: usize, a: usize) -> usize {
    s * cmdp.num_actions() + a
}

/// Flow-conservation rows of the occupancy polytope, with `extra` trailing
/// zero columns for auxiliary variables.
fn flow_rows(cmdp: &TabularCmdp, extra: usize) -> Vec<LpRow> {
    let ns = cmdp.num_states();
    let na = cmdp.num_actions();
    let gamma = cmdp.discount();
    let width = ns * na + extra;
    let mut rows = Vec::with_capacity(ns);
    for s in 0..ns {
        let mut coeffs = vec![0.0; width];
        for a in 0..na {
            coeffs[var_index(cmdp, s, a)] += 1.0;
        }
        for s_prev in 0..ns {
            for a in 0..na {
                coeffs[var_index(cmdp, s_prev, a)] -= gamma * cmdp.transition()[[s_prev, a, s]];
            }
        }
        rows.push(LpRow {
            coeffs,
            relation: Relation::Eq,
            rhs: (1.0 - gamma) * cmdp.initial_dist()[s],
        });
    }
    rows
}

fn flatten_reward(cmdp: &TabularCmdp, i: usize, extra: usize) -> Result<Vec<f64>> {
    let r = cmdp.reward(i)?;
    let mut out = vec![0.0; cmdp.num_states() * cmdp.num_actions() + extra];
    for s in 0..cmdp.num_states() {
        for a in 0..cmdp.num_actions() {
            out[var_index(cmdp, s, a)] = r[[s, a]];
        }
    }
    Ok(out)
}

fn occupancy_from_lp(cmdp: &TabularCmdp, x: &[f64]) -> Result<OccupancyMeasure> {
    let mut nu = Array2::zeros((cmdp.num_states(), cmdp.num_actions()));
    for s in 0..cmdp.num_states() {
        for a in 0..cmdp.num_actions() {
            // The simplex keeps variables nonnegative; scrub roundoff dust.
            nu[[s, a]] = x[var_index(cmdp, s, a)].max(0.0);
        }
    }
    OccupancyMeasure::new_with_tolerances(
        nu,
        &mdp::Tolerances {
            occupancy_sum: 1e-8,
            ..Default::default()
        },
    )
}

/// Extract the stationary policy of an occupancy measure; states the
/// measure never visits get a uniform row.
pub fn policy_from_occupancy(cmdp: &TabularCmdp, nu: &OccupancyMeasure) -> Result<Policy> {
    let chi = nu.state_marginal();
    let na = cmdp.num_actions();
    let mut probs = Array2::zeros((cmdp.num_states(), na));
    for s in 0..cmdp.num_states() {
        if chi[s] < EXTRACTION_FLOOR {
            for a in 0..na {
                probs[[s, a]] = 1.0 / na as f64;
            }
        } else {
            let mut sum = 0.0;
            for a in 0..na {
                let p = nu.nu()[[s, a]] / chi[s];
                probs[[s, a]] = p;
                sum += p;
            }
            for a in 0..na {
                probs[[s, a]] /= sum;
            }
        }
    }
    Policy::new(probs)
}

fn flow_residual(cmdp: &TabularCmdp, nu: &OccupancyMeasure) -> f64 {
    let gamma = cmdp.discount();
    let chi = nu.state_marginal();
    let mut worst = 0.0f64;
    for s in 0..cmdp.num_states() {
        let mut inflow = (1.0 - gamma) * cmdp.initial_dist()[s];
        for s_prev in 0..cmdp.num_states() {
            for a in 0..cmdp.num_actions() {
                inflow += gamma * cmdp.transition()[[s_prev, a, s]] * nu.nu()[[s_prev, a]];
            }
        }
        worst = worst.max((chi[s] - inflow).abs());
    }
    worst
}

/// Solve the CMDP exactly. Returns `Infeasible` when no policy meets the
/// thresholds; any other simplex anomaly is an error.
pub fn solve_cmdp_lp(cmdp: &TabularCmdp) -> Result<CmdpSolve> {
    let m = cmdp.num_constraints();
    let gamma = cmdp.discount();
    let mut rows = flow_rows(cmdp, 0);
    for i in 1..=m {
        rows.push(LpRow {
            coeffs: flatten_reward(cmdp, i, 0)?,
            relation: Relation::Ge,
            rhs: (1.0 - gamma) * cmdp.thresholds()[i - 1],
        });
    }
    let objective: Vec<f64> = flatten_reward(cmdp, 0, 0)?.iter().map(|v| -v).collect();
    let problem = LpProblem { objective, rows };

    let solution = match simplex::solve(&problem)? {
        LpOutcome::Optimal(s) => s,
        LpOutcome::Infeasible => return Ok(CmdpSolve::Infeasible),
        LpOutcome::Unbounded => {
            return Err(CmdpError::NumericalFailure(
                "occupancy LP reported unbounded on a bounded polytope".into(),
            ))
        }
    };
    if solution.duality_gap > 1e-7 {
        return Err(CmdpError::NumericalFailure(format!(
            "LP duality gap {:.3e} exceeds certificate tolerance",
            solution.duality_gap
        )));
    }

    let nu = occupancy_from_lp(cmdp, &solution.x)?;
    let optimal_value = -solution.objective / (1.0 - gamma);
    let constraint_values: Vec<f64> = (1..=m)
        .map(|i| mdp::value_from_occupancy(cmdp, &nu, i))
        .collect::<Result<_>>()?;
    let optimal_policy = policy_from_occupancy(cmdp, &nu)?;
    let feasibility_residual = flow_residual(cmdp, &nu);
    let slater_margin = slater_margin(cmdp)?;

    Ok(CmdpSolve::Optimal(Box::new(SolveCertificate {
        optimal_value,
        optimal_occupancy: nu,
        optimal_policy,
        constraint_values,
        feasibility_residual,
        slater_margin,
    })))
}

/// Best achievable Slater margin
/// `ξ* = max_ν min_i (⟨ν, r_i⟩/(1-γ) - c_i)`,
/// computed as `max t` subject to `⟨ν, r_i⟩ ≥ (1-γ)(c_i + t)` over the flow
/// polytope. Negative `ξ*` certifies that the instance is infeasible;
/// unconstrained instances get `+∞` by convention.
pub fn slater_margin(cmdp: &TabularCmdp) -> Result<f64> {
    let m = cmdp.num_constraints();
    if m == 0 {
        return Ok(f64::INFINITY);
    }
    let gamma = cmdp.discount();
    let sa = cmdp.num_states() * cmdp.num_actions();
    // Variables: ν, then t = t_pos - t_neg.
    let mut rows = flow_rows(cmdp, 2);
    for i in 1..=m {
        let mut coeffs = flatten_reward(cmdp, i, 2)?;
        coeffs[sa] = -(1.0 - gamma);
        coeffs[sa + 1] = 1.0 - gamma;
        rows.push(LpRow {
            coeffs,
            relation: Relation::Ge,
            rhs: (1.0 - gamma) * cmdp.thresholds()[i - 1],
        });
    }
    let mut objective = vec![0.0; sa + 2];
    objective[sa] = -1.0;
    objective[sa + 1] = 1.0;
    match simplex::solve(&LpProblem { objective, rows })? {
        LpOutcome::Optimal(s) => Ok(s.x[sa] - s.x[sa + 1]),
        LpOutcome::Infeasible => Err(CmdpError::NumericalFailure(
            "slater LP infeasible; the flow polytope is never empty".into(),
        )),
        LpOutcome::Unbounded => Err(CmdpError::NumericalFailure(
            "slater LP reported unbounded margin".into(),
        )),
    }
}

/// Largest achievable `V_i(ρ)` over all policies (single-objective LP on
/// the flow polytope). Used to place constraint thresholds.
pub fn max_achievable_value(cmdp: &TabularCmdp, i: usize) -> Result<f64> {
    let rows = flow_rows(cmdp, 0);
    let objective: Vec<f64> = flatten_reward(cmdp, i, 0)?.iter().map(|v| -v).collect();
    match simplex::solve(&LpProblem { objective, rows })? {
        LpOutcome::Optimal(s) => Ok(-s.objective / (1.0 - cmdp.discount())),
        other => Err(CmdpError::NumericalFailure(format!(
            "single-objective flow LP did not solve: {other:?}"
        ))),
    }
}

/// Best feasible deterministic policy found by exhaustive search.
#[derive(Debug, Clone)]
pub struct DeterministicBest {
    pub value: f64,
    pub policy: Policy,
}

/// Evaluate every deterministic policy; `None` when no deterministic policy
/// is feasible. CMDP optima may be stochastic, so for `m ≥ 1` this is a
/// lower bound on the LP optimum, not an oracle.
pub fn enumerate_deterministic(cmdp: &TabularCmdp) -> Result<Option<DeterministicBest>> {
    let ns = cmdp.num_states();
    let na = cmdp.num_actions();
    let count = (na as f64).powi(ns as i32);
    if count > 1e6 {
        return Err(CmdpError::InvalidParameter(format!(
            "|A|^|S| = {count:.3e} exceeds the 10^6 enumeration guard"
        )));
    }
    let m = cmdp.num_constraints();
    let mut actions = vec![0usize; ns];
    let mut best: Option<DeterministicBest> = None;
    loop {
        let policy = Policy::deterministic(na, &actions)?;
        let values = mdp::all_values(cmdp, &policy)?;
        let feasible = (0..m).all(|i| values[i + 1] >= cmdp.thresholds()[i] - 1e-9);
        if feasible && best.as_ref().is_none_or(|b| values[0] > b.value) {
            best = Some(DeterministicBest {
                value: values[0],
                policy,
            });
        }
        // Odometer increment.
        let mut pos = 0;
        loop {
            if pos == ns {
                return Ok(best);
            }
            actions[pos] += 1;
            if actions[pos] < na {
                break;
            }
            actions[pos] = 0;
            pos += 1;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{array, Array1, Array3};

    /// 1 state, 2 actions, r_0 = (1, 0), optional r_1 = (0, 1) with
    /// threshold c.
    fn bandit(gamma: f64, constraint: Option<f64>) -> TabularCmdp {
        let mut p = Array3::zeros((1, 2, 1));
        p[[0, 0, 0]] = 1.0;
        p[[0, 1, 0]] = 1.0;
        let mut r0 = Array2::zeros((1, 2));
        r0[[0, 0]] = 1.0;
        let mut rewards = vec![r0];
        let mut thresholds = Array1::zeros(0);
        if let Some(c) = constraint {
            let mut r1 = Array2::zeros((1, 2));
            r1[[0, 1]] = 1.0;
            rewards.push(r1);
            thresholds = array![c];
        }
        TabularCmdp::new(p, rewards, thresholds, gamma, array![1.0]).unwrap()
    }

    fn random_cmdp(seed: u64, s: usize, a: usize, m: usize, gamma: f64) -> TabularCmdp {
        let mut state = seed.wrapping_mul(0x9e3779b97f4a7c15).wrapping_add(1);
        let mut next = move || {
            state ^= state << 13;
            state ^= state >> 7;
            state ^= state << 17;
            (state >> 11) as f64 / (1u64 << 53) as f64
        };
        let mut p = Array3::zeros((s, a, s));
        for i in 0..s {
            for j in 0..a {
                let mut row: Vec<f64> = (0..s).map(|_| next() + 1e-3).collect();
                let sum: f64 = row.iter().sum();
                row.iter_mut().for_each(|v| *v /= sum);
                for (k, v) in row.iter().enumerate() {
                    p[[i, j, k]] = *v;
                }
            }
        }
        let rewards: Vec<Array2<f64>> = (0..=m)
            .map(|_| Array2::from_shape_fn((s, a), |_| next()))
            .collect();
        let base = TabularCmdp::new(
            p,
            rewards,
            Array1::zeros(m),
            gamma,
            Array1::from_elem(s, 1.0 / s as f64),
        )
        .unwrap();
        if m == 0 {
            return base;
        }
        // Thresholds at 60% of each constraint's best achievable value.
        let thresholds = Array1::from_iter(
            (1..=m).map(|i| 0.6 * max_achievable_value(&base, i).unwrap()),
        );
        base.with_thresholds(thresholds).unwrap()
    }

    fn random_policy(seed: u64, s: usize, a: usize) -> Policy {
        let mut state = seed.wrapping_mul(0x2545f4914f6cdd1d).wrapping_add(7);
        let mut next = move || {
            state ^= state << 13;
            state ^= state >> 7;
            state ^= state << 17;
            (state >> 11) as f64 / (1u64 << 53) as f64
        };
        let mut probs = Array2::zeros((s, a));
        for i in 0..s {
            let mut row: Vec<f64> = (0..a).map(|_| next() + 1e-6).collect();
            let sum: f64 = row.iter().sum();
            row.iter_mut().for_each(|v| *v /= sum);
            for (j, v) in row.iter().enumerate() {
                probs[[i, j]] = *v;
            }
        }
        Policy::new(probs).unwrap()
    }

    fn expect_certificate(outcome: CmdpSolve) -> Box<SolveCertificate> {
        match outcome {
            CmdpSolve::Optimal(c) => c,
            CmdpSolve::Infeasible => panic!("unexpected infeasible"),
        }
    }

    #[test]
    fn unconstrained_bandit_picks_better_arm() {
        let cmdp = bandit(0.5, None);
        let cert = expect_certificate(solve_cmdp_lp(&cmdp).unwrap());
        assert!((cert.optimal_value - 2.0).abs() < 1e-9);
        assert!((cert.optimal_occupancy.nu()[[0, 0]] - 1.0).abs() < 1e-9);
        assert!(cert.optimal_occupancy.nu()[[0, 1]].abs() < 1e-9);
    }

    #[test]
    fn binding_constraint_splits_mass() {
        // Constraint V_1 >= 1.2 forces ν(a_2) >= 0.6, so V_0^* = 0.8.
        let cmdp = bandit(0.5, Some(1.2));
        let cert = expect_certificate(solve_cmdp_lp(&cmdp).unwrap());
        assert!((cert.optimal_value - 0.8).abs() < 1e-9);
        assert!((cert.optimal_occupancy.nu()[[0, 0]] - 0.4).abs() < 1e-9);
        assert!((cert.optimal_occupancy.nu()[[0, 1]] - 0.6).abs() < 1e-9);
        assert!((cert.constraint_values[0] - 1.2).abs() < 1e-9);
        // ξ* = 2 - 1.2: put all mass on the constraint arm.
        assert!((cert.slater_margin - 0.8).abs() < 1e-9);
    }

    #[test]
    fn infeasible_thresholds_are_reported_as_such() {
        let cmdp = bandit(0.5, Some(2.5)); // max achievable V_1 is 2
        assert!(matches!(solve_cmdp_lp(&cmdp).unwrap(), CmdpSolve::Infeasible));
        assert!(slater_margin(&cmdp).unwrap() < 0.0);
    }

    #[test]
    fn slater_margin_constant_reward() {
        // r_1 ≡ 1, c_1 = 0: every policy earns 1/(1-γ).
        let mut p = Array3::zeros((2, 2, 2));
        for s in 0..2 {
            for a in 0..2 {
                p[[s, a, (s + a) % 2]] = 1.0;
            }
        }
        let cmdp = TabularCmdp::new(
            p,
            vec![Array2::zeros((2, 2)), Array2::ones((2, 2))],
            array![0.0],
            0.5,
            array![0.5, 0.5],
        )
        .unwrap();
        let margin = slater_margin(&cmdp).unwrap();
        assert!((margin - 2.0).abs() < 1e-9);
    }

    #[test]
    fn slater_margin_unconstrained_is_infinite() {
        let cmdp = bandit(0.5, None);
        assert_eq!(slater_margin(&cmdp).unwrap(), f64::INFINITY);
    }

    #[test]
    fn lp_dominates_random_policies_and_enumeration() {
        for seed in 0..6 {
            let cmdp = random_cmdp(seed, 6, 3, 2, 0.9);
            let cert = expect_certificate(solve_cmdp_lp(&cmdp).unwrap());
            for k in 0..200 {
                let pi = random_policy(seed * 1000 + k, 6, 3);
                let values = mdp::all_values(&cmdp, &pi).unwrap();
                let feasible = (0..2).all(|i| values[i + 1] >= cmdp.thresholds()[i] - 1e-9);
                if feasible {
                    assert!(
                        values[0] <= cert.optimal_value + 1e-8,
                        "random feasible policy beats LP: {} > {}",
                        values[0],
                        cert.optimal_value
                    );
                }
            }
            if let Some(best) = enumerate_deterministic(&cmdp).unwrap() {
                assert!(best.value <= cert.optimal_value + 1e-8);
            }
        }
    }

    #[test]
    fn unconstrained_lp_matches_deterministic_enumeration() {
        for seed in 10..16 {
            let cmdp = random_cmdp(seed, 5, 3, 0, 0.85);
            let cert = expect_certificate(solve_cmdp_lp(&cmdp).unwrap());
            let best = enumerate_deterministic(&cmdp).unwrap().unwrap();
            assert!(
                (best.value - cert.optimal_value).abs() < 1e-8,
                "enumeration {} vs LP {}",
                best.value,
                cert.optimal_value
            );
        }
    }

    #[test]
    fn unconstrained_lp_matches_policy_iteration() {
        // Hand-rolled policy iteration as an independent oracle.
        let cmdp = random_cmdp(42, 2, 2, 0, 0.9);
        let gamma = cmdp.discount();
        let mut actions = vec![0usize; 2];
        loop {
            let pi = Policy::deterministic(2, &actions).unwrap();
            // State values of the current deterministic policy.
            let p_pi = mdp::policy_transition(&cmdp, &pi).unwrap();
            let mut a_mat = Array2::zeros((2, 2));
            for i in 0..2 {
                for j in 0..2 {
                    a_mat[[i, j]] = if i == j { 1.0 } else { 0.0 } - gamma * p_pi[[i, j]];
                }
            }
            let r_pi = Array1::from_iter(
                (0..2).map(|s| cmdp.reward(0).unwrap()[[s, actions[s]]]),
            );
            let v = crate::linalg::solve(&a_mat, &r_pi).unwrap();
            let mut improved = actions.clone();
            for (s, slot) in improved.iter_mut().enumerate() {
                let mut best_a = 0;
                let mut best_q = f64::NEG_INFINITY;
                for a in 0..2 {
                    let mut q = cmdp.reward(0).unwrap()[[s, a]];
                    for s2 in 0..2 {
                        q += gamma * cmdp.transition()[[s, a, s2]] * v[s2];
                    }
                    if q > best_q + 1e-12 {
                        best_q = q;
                        best_a = a;
                    }
                }
                *slot = best_a;
            }
            if improved == actions {
                let pi_star_value = mdp::value(&cmdp, &pi, 0).unwrap();
                let cert = expect_certificate(solve_cmdp_lp(&cmdp).unwrap());
                assert!((pi_star_value - cert.optimal_value).abs() < 1e-8);
                break;
            }
            actions = improved;
        }
    }

    #[test]
    fn extraction_reproduces_certificate_values() {
        for seed in 20..26 {
            let cmdp = random_cmdp(seed, 7, 4, 2, 0.9);
            let cert = expect_certificate(solve_cmdp_lp(&cmdp).unwrap());
            let values = mdp::all_values(&cmdp, &cert.optimal_policy).unwrap();
            assert!(
                (values[0] - cert.optimal_value).abs() < 1e-7,
                "re-evaluated {} vs certified {}",
                values[0],
                cert.optimal_value
            );
            for i in 0..2 {
                assert!((values[i + 1] - cert.constraint_values[i]).abs() < 1e-7);
                assert!(cert.constraint_values[i] >= cmdp.thresholds()[i] - 1e-8);
            }
            assert!(cert.feasibility_residual < 1e-8);
        }
    }

    #[test]
    fn raising_thresholds_weakly_decreases_value() {
        let cmdp = random_cmdp(33, 5, 3, 1, 0.9);
        let max_v = max_achievable_value(&cmdp, 1).unwrap();
        let mut prev = f64::INFINITY;
        for k in 0..10 {
            let c = max_v * (k as f64) / 10.0;
            let inst = cmdp.with_thresholds(array![c]).unwrap();
            let value = match solve_cmdp_lp(&inst).unwrap() {
                CmdpSolve::Optimal(cert) => cert.optimal_value,
                CmdpSolve::Infeasible => break,
            };
            assert!(value <= prev + 1e-9, "value rose from {prev} to {value}");
            prev = value;
        }
    }

    #[test]
    fn enumeration_guard_triggers() {
        let cmdp = random_cmdp(1, 9, 5, 0, 0.9);
        // 5^9 ≈ 1.95e6 > 1e6.
        assert!(enumerate_deterministic(&cmdp).is_err());
    }
}

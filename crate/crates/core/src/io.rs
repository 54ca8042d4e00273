//! JSON file formats: problem instances, solve certificates, and quadratic
//! programs for the generic solver.
//!
//! Instance schema: `{ "num_states", "num_actions", "discount",
//! "initial_dist", "transition", "rewards", "thresholds" }` with the
//! transition indexed `[s][a][s']` and rewards `[i][s][a]` for `i = 0..m`.
//! Loading enforces every structural invariant and reports the first
//! violation.

use std::fs;
use std::path::Path;

use ndarray::{Array1, Array2, Array3};
use serde::{Deserialize, Serialize};

use crate::arco::QuadraticProgram;
use crate::error::{CmdpError, Result};
use crate::mdp::TabularCmdp;
use crate::oracle::SolveCertificate;

#[derive(Debug, Serialize, Deserialize)]
pub struct CmdpJson {
    pub num_states: usize,
    pub num_actions: usize,
    pub discount: f64,
    pub initial_dist: Vec<f64>,
    /// Indexed `[s][a][s']`.
    pub transition: Vec<Vec<Vec<f64>>>,
    /// Indexed `[i][s][a]`, `i = 0..m`.
    pub rewards: Vec<Vec<Vec<f64>>>,
    pub thresholds: Vec<f64>,
}

impl CmdpJson {
    pub fn from_cmdp(cmdp: &TabularCmdp) -> Self {
        let (s, a) = (cmdp.num_states(), cmdp.num_actions());
        let transition = (0..s)
            .map(|i| {
                (0..a)
                    .map(|j| (0..s).map(|k| cmdp.transition()[[i, j, k]]).collect())
                    .collect()
            })
            .collect();
        let rewards = cmdp
            .rewards()
            .iter()
            .map(|r| {
                (0..s)
                    .map(|i| (0..a).map(|j| r[[i, j]]).collect())
                    .collect()
            })
            .collect();
        Self {
            num_states: s,
            num_actions: a,
            discount: cmdp.discount(),
            initial_dist: cmdp.initial_dist().to_vec(),
            transition,
            rewards,
            thresholds: cmdp.thresholds().to_vec(),
        }
    }

    pub fn into_cmdp(self) -> Result<TabularCmdp> {
        let (s, a) = (self.num_states, self.num_actions);
        if self.transition.len() != s
            || self.transition.iter().any(|rows| rows.len() != a)
            || self
                .transition
                .iter()
                .flatten()
                .any(|row| row.len() != s)
        {
            return Err(CmdpError::InvalidInstance(format!(
                "transition must be [{s}][{a}][{s}]"
            )));
        }
        let mut transition = Array3::zeros((s, a, s));
        for (i, per_state) in self.transition.iter().enumerate() {
            for (j, row) in per_state.iter().enumerate() {
                for (k, v) in row.iter().enumerate() {
                    transition[[i, j, k]] = *v;
                }
            }
        }
        let mut rewards = Vec::with_capacity(self.rewards.len());
        for (idx, r) in self.rewards.iter().enumerate() {
            if r.len() != s || r.iter().any(|row| row.len() != a) {
                return Err(CmdpError::InvalidInstance(format!(
                    "reward {idx} must be [{s}][{a}]"
                )));
            }
            let mut out = Array2::zeros((s, a));
            for (i, row) in r.iter().enumerate() {
                for (j, v) in row.iter().enumerate() {
                    out[[i, j]] = *v;
                }
            }
            rewards.push(out);
        }
        TabularCmdp::new(
            transition,
            rewards,
            Array1::from_vec(self.thresholds),
            self.discount,
            Array1::from_vec(self.initial_dist),
        )
    }
}

pub fn load_cmdp(path: &Path) -> Result<TabularCmdp> {
    let text = fs::read_to_string(path)?;
    let parsed: CmdpJson = serde_json::from_str(&text)?;
    parsed.into_cmdp()
}

pub fn save_cmdp(path: &Path, cmdp: &TabularCmdp) -> Result<()> {
    let json = serde_json::to_string_pretty(&CmdpJson::from_cmdp(cmdp))?;
    fs::write(path, json)?;
    Ok(())
}

/// Serialized certificate written next to the instance it certifies.
#[derive(Debug, Serialize, Deserialize)]
pub struct CertificateJson {
    pub optimal_value: f64,
    /// Indexed `[s][a]`.
    pub optimal_occupancy: Vec<Vec<f64>>,
    /// Indexed `[s][a]`.
    pub optimal_policy: Vec<Vec<f64>>,
    pub constraint_values: Vec<f64>,
    pub feasibility_residual: f64,
    pub slater_margin: f64,
}

impl CertificateJson {
    pub fn from_certificate(cert: &SolveCertificate) -> Self {
        let matrix_to_rows = |m: &Array2<f64>| {
            m.outer_iter()
                .map(|row| row.to_vec())
                .collect::<Vec<Vec<f64>>>()
        };
        Self {
            optimal_value: cert.optimal_value,
            optimal_occupancy: matrix_to_rows(cert.optimal_occupancy.nu()),
            optimal_policy: matrix_to_rows(cert.optimal_policy.probs()),
            constraint_values: cert.constraint_values.clone(),
            feasibility_residual: cert.feasibility_residual,
            slater_margin: cert.slater_margin,
        }
    }
}

pub fn save_certificate(path: &Path, cert: &SolveCertificate) -> Result<()> {
    let json = serde_json::to_string_pretty(&CertificateJson::from_certificate(cert))?;
    fs::write(path, json)?;
    Ok(())
}

/// Quadratic-program schema for the generic solver:
/// `{ "p": [[..]], "q": [..], "a": [[..]], "b": [..], "bound_g",
/// "slater_point" }` with `f_0 = ½xᵀPx + qᵀx` and rows `f_i = a_i·x + b_i`.
#[derive(Debug, Serialize, Deserialize)]
pub struct QpJson {
    pub p: Vec<Vec<f64>>,
    pub q: Vec<f64>,
    pub a: Vec<Vec<f64>>,
    pub b: Vec<f64>,
    pub bound_g: f64,
    pub slater_point: Vec<f64>,
}

impl QpJson {
    pub fn into_qp(self) -> Result<QuadraticProgram> {
        let n = self.q.len();
        let m = self.b.len();
        if self.p.len() != n || self.p.iter().any(|row| row.len() != n) {
            return Err(CmdpError::InvalidInstance(format!("p must be {n}x{n}")));
        }
        if self.a.len() != m || self.a.iter().any(|row| row.len() != n) {
            return Err(CmdpError::InvalidInstance(format!("a must be {m}x{n}")));
        }
        if self.slater_point.len() != n {
            return Err(CmdpError::InvalidInstance(format!(
                "slater point must have length {n}"
            )));
        }
        let mut p = Array2::zeros((n, n));
        for (i, row) in self.p.iter().enumerate() {
            for (j, v) in row.iter().enumerate() {
                p[[i, j]] = *v;
            }
        }
        let mut a = Array2::zeros((m, n));
        for (i, row) in self.a.iter().enumerate() {
            for (j, v) in row.iter().enumerate() {
                a[[i, j]] = *v;
            }
        }
        Ok(QuadraticProgram {
            p,
            q: Array1::from_vec(self.q),
            a,
            b: Array1::from_vec(self.b),
            bound_g: self.bound_g,
            slater_point: Array1::from_vec(self.slater_point),
        })
    }
}

pub fn load_qp(path: &Path) -> Result<QuadraticProgram> {
    let text = fs::read_to_string(path)?;
    let parsed: QpJson = serde_json::from_str(&text)?;
    parsed.into_qp()
}

//! Knockout experiments and the contribution metrics.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::config::{FusionMode, RunConfig};
use crate::dataset::Dataset;
use crate::error::{Result, VlqaError};
use crate::eval::{self, EvalReport};
use crate::model::{Knockout, Model};
use crate::parallel::Execution;
use crate::train::{self, EpochLog};

/// Denominator guard of the relative accuracy contribution.
pub const EPSILON: f64 = 1e-4;

/// `(acc_full − acc_minus) / (acc_minus + ε)`.
pub fn delta_x(acc_full: f64, acc_minus: f64) -> f64 {
    (acc_full - acc_minus) / (acc_minus + EPSILON)
}

/// `(sim_full − sim_minus) / σ_sem`.
pub fn c_sem(sim_full: f64, sim_minus: f64, sigma_sem: f64) -> Result<f64> {
    if !(sigma_sem > 0.0) || !sigma_sem.is_finite() {
        return Err(VlqaError::DegenerateVariance(sigma_sem));
    }
    Ok((sim_full - sim_minus) / sigma_sem)
}

/// Parse a comma-separated target list; empty lists are rejected.
pub fn parse_targets(list: &str) -> Result<Vec<Knockout>> {
    let targets = list
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(str::parse)
        .collect::<Result<Vec<Knockout>>>()?;
    if targets.is_empty() {
        return Err(VlqaError::Config(format!(
            "no ablation targets given; valid targets: {}",
            Knockout::valid_names()
        )));
    }
    Ok(targets)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub target: Knockout,
    pub acc_full: f64,
    pub acc_minus: f64,
    pub delta_x: f64,
    pub sim_full: f64,
    pub sim_minus: f64,
    pub sigma_sem: f64,
    pub c_sem: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    /// `retrain` or `frozen`.
    pub protocol: String,
    pub epsilon: f64,
    pub seed: u64,
    pub full: EvalReport,
    pub rows: Vec<AblationRow>,
}

/// Row for one variant, scored against the full model's evaluation.
pub fn row(target: Knockout, full: &EvalReport, minus: &EvalReport) -> Result<AblationRow> {
    Ok(AblationRow {
        target,
        acc_full: full.top1,
        acc_minus: minus.top1,
        delta_x: delta_x(full.top1, minus.top1),
        sim_full: full.sim_sem_mean,
        sim_minus: minus.sim_sem_mean,
        sigma_sem: full.sim_sem_std,
        c_sem: c_sem(full.sim_sem_mean, minus.sim_sem_mean, full.sim_sem_std)?,
    })
}

/// Train (or reuse) the full model, then score every knockout variant on
/// the held-out split. Variants are retrained from the same seed unless
/// `config.ablation.frozen` is set. All alignment scores use the full
/// model's answer embeddings.
pub fn run(
    config: &RunConfig,
    data: &Dataset,
    targets: &[Knockout],
    exec: Execution,
    mut log: impl FnMut(Option<Knockout>, &EpochLog),
) -> Result<AblationReport> {
    if targets.is_empty() {
        return Err(VlqaError::Config(format!(
            "no ablation targets given; valid targets: {}",
            Knockout::valid_names()
        )));
    }
    if config.fusion != FusionMode::Hier {
        return Err(VlqaError::Config(format!(
            "ablation needs the hier fusion mode, config has {}",
            config.fusion
        )));
    }
    let (full_model, _, _) = train::fit(config, data, None, exec, |e| log(None, e))?;
    let embeddings = full_model.answer_embeddings()?;
    let score = |m: &Model| eval::evaluate_with(m, &data.test, &data.manifest, &embeddings, config.gamma, exec);
    let full = score(&full_model)?;

    let mut rows = Vec::with_capacity(targets.len());
    for &t in targets {
        let variant = if config.ablation.frozen {
            let mut m = full_model.clone();
            m.set_knockout(Some(t))?;
            m
        } else {
            train::fit(config, data, Some(t), exec, |e| log(Some(t), e))?.0
        };
        rows.push(row(t, &full, &score(&variant)?)?);
    }
    Ok(AblationReport {
        protocol: if config.ablation.frozen { "frozen" } else { "retrain" }.into(),
        epsilon: EPSILON,
        seed: config.seed,
        full,
        rows,
    })
}

pub fn render_table(report: &AblationReport) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:<20} {:>8} {:>8} {:>9} {:>8} {:>8} {:>8}",
        "target", "acc", "acc_-X", "delta_X", "sim", "sim_-X", "C_sem"
    );
    for r in &report.rows {
        let _ = writeln!(
            out,
            "{:<20} {:>8.4} {:>8.4} {:>9.4} {:>8.4} {:>8.4} {:>8.4}",
            r.target.name(),
            r.acc_full,
            r.acc_minus,
            r.delta_x,
            r.sim_full,
            r.sim_minus,
            r.c_sem
        );
    }
    out
}

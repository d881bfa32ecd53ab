//! Top-1 accuracy, mean reciprocal rank and the penalized alignment score.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::dataset::{Manifest, Sample};
use crate::error::{Result, VlqaError};
use crate::model::Model;
use crate::parallel::Execution;
use crate::tensor::Tensor;

fn check_lengths(rankings: usize, golds: usize) -> Result<()> {
    if rankings != golds {
        return Err(VlqaError::Evaluation(format!(
            "{rankings} rankings for {golds} gold answers"
        )));
    }
    if golds == 0 {
        return Err(VlqaError::Evaluation("nothing to evaluate".into()));
    }
    Ok(())
}

/// Fraction of rankings whose first entry is the gold answer.
pub fn top1(rankings: &[Vec<usize>], golds: &[usize]) -> Result<f64> {
    check_lengths(rankings.len(), golds.len())?;
    let hits = rankings
        .iter()
        .zip(golds)
        .filter(|(r, g)| r.first() == Some(g))
        .count();
    Ok(hits as f64 / golds.len() as f64)
}

/// 1-based position of `gold` in `ranking`.
pub fn rank_of(ranking: &[usize], gold: usize) -> Result<usize> {
    ranking
        .iter()
        .position(|&a| a == gold)
        .map(|p| p + 1)
        .ok_or_else(|| VlqaError::Evaluation(format!("gold answer {gold} missing from the ranked list")))
}

pub fn mrr(rankings: &[Vec<usize>], golds: &[usize]) -> Result<f64> {
    check_lengths(rankings.len(), golds.len())?;
    let mut total = 0.0;
    for (r, &g) in rankings.iter().zip(golds) {
        total += 1.0 / rank_of(r, g)? as f64;
    }
    Ok(total / golds.len() as f64)
}

/// 1 when the two answers belong to different task categories.
pub fn task_penalty(pred: usize, gold: usize, answer_categories: &[usize]) -> f64 {
    if answer_categories[pred] == answer_categories[gold] {
        0.0
    } else {
        1.0
    }
}

/// `u_p·u_g / (‖u_p‖‖u_g‖ + γ·P_task(p, g))`.
pub fn sim_sem(
    pred: usize,
    gold: usize,
    embeddings: &Tensor,
    gamma: f64,
    answer_categories: &[usize],
) -> Result<f64> {
    let (answers, _) = embeddings.dims2()?;
    for x in [pred, gold] {
        if x >= answers || x >= answer_categories.len() {
            return Err(VlqaError::Vocabulary(format!(
                "answer {x} outside the {answers}-answer vocabulary"
            )));
        }
    }
    if !(gamma >= 0.0) {
        return Err(VlqaError::Precondition(format!("gamma {gamma} must be >= 0")));
    }
    let (u, w) = (embeddings.row(pred), embeddings.row(gold));
    let norm = |x: &[f64]| x.iter().map(|a| a * a).sum::<f64>().sqrt();
    let (nu, nw) = (norm(u), norm(w));
    if nu == 0.0 || nw == 0.0 {
        return Err(VlqaError::DegenerateInput(format!(
            "zero-norm answer embedding for answer {}",
            if nu == 0.0 { pred } else { gold }
        )));
    }
    let dot: f64 = u.iter().zip(w).map(|(a, b)| a * b).sum();
    Ok(dot / (nu * nw + gamma * task_penalty(pred, gold, answer_categories)))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CategoryScores {
    pub n: usize,
    pub top1: f64,
    pub mrr: f64,
    pub sim_sem: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub top1: f64,
    pub mrr: f64,
    pub sim_sem_mean: f64,
    pub sim_sem_by_category: BTreeMap<String, f64>,
    pub n: usize,
    /// Mean of the per-category alignment means.
    pub sim_sem_category_weighted: f64,
    /// Population standard deviation of the per-sample alignment scores.
    pub sim_sem_std: f64,
    pub by_category: BTreeMap<String, CategoryScores>,
    #[serde(skip)]
    pub per_sample_sim_sem: Vec<f64>,
}

/// Score ranked predictions against gold answers. `categories` holds the
/// question category of each sample.
pub fn evaluate_rankings(
    rankings: &[Vec<usize>],
    golds: &[usize],
    categories: &[usize],
    manifest: &Manifest,
    embeddings: &Tensor,
    gamma: f64,
) -> Result<EvalReport> {
    check_lengths(rankings.len(), golds.len())?;
    check_lengths(categories.len(), golds.len())?;
    let answer_cats = manifest.answer_category_indices()?;
    let sims = rankings
        .iter()
        .zip(golds)
        .map(|(r, &g)| {
            let pred = *r
                .first()
                .ok_or_else(|| VlqaError::Evaluation("empty ranked list".into()))?;
            sim_sem(pred, g, embeddings, gamma, &answer_cats)
        })
        .collect::<Result<Vec<_>>>()?;
    let n = golds.len();
    let sim_mean = sims.iter().sum::<f64>() / n as f64;
    let sim_std = (sims.iter().map(|s| (s - sim_mean).powi(2)).sum::<f64>() / n as f64).sqrt();

    let mut by_category = BTreeMap::new();
    for (c, name) in manifest.categories.iter().enumerate() {
        let idx: Vec<usize> = (0..n).filter(|&i| categories[i] == c).collect();
        if idx.is_empty() {
            continue;
        }
        let r: Vec<Vec<usize>> = idx.iter().map(|&i| rankings[i].clone()).collect();
        let g: Vec<usize> = idx.iter().map(|&i| golds[i]).collect();
        by_category.insert(
            name.clone(),
            CategoryScores {
                n: idx.len(),
                top1: top1(&r, &g)?,
                mrr: mrr(&r, &g)?,
                sim_sem: idx.iter().map(|&i| sims[i]).sum::<f64>() / idx.len() as f64,
            },
        );
    }
    let weighted = by_category.values().map(|c| c.sim_sem).sum::<f64>() / by_category.len() as f64;
    Ok(EvalReport {
        top1: top1(rankings, golds)?,
        mrr: mrr(rankings, golds)?,
        sim_sem_mean: sim_mean,
        sim_sem_by_category: by_category.iter().map(|(k, v)| (k.clone(), v.sim_sem)).collect(),
        n,
        sim_sem_category_weighted: weighted,
        sim_sem_std: sim_std,
        by_category,
        per_sample_sim_sem: sims,
    })
}

pub fn rankings_of(model: &Model, samples: &[Sample], exec: Execution) -> Result<Vec<Vec<usize>>> {
    Ok(model
        .predict_all(samples, exec)?
        .into_iter()
        .map(|d| d.ranking)
        .collect())
}

/// Evaluate with the model's own answer embeddings.
pub fn evaluate(model: &Model, samples: &[Sample], manifest: &Manifest, gamma: f64, exec: Execution) -> Result<EvalReport> {
    evaluate_with(model, samples, manifest, &model.answer_embeddings()?, gamma, exec)
}

/// Evaluate with a fixed embedding table, so different models are scored
/// on the same alignment scale.
pub fn evaluate_with(
    model: &Model,
    samples: &[Sample],
    manifest: &Manifest,
    embeddings: &Tensor,
    gamma: f64,
    exec: Execution,
) -> Result<EvalReport> {
    let rankings = rankings_of(model, samples, exec)?;
    let golds: Vec<usize> = samples.iter().map(|s| s.answer).collect();
    let cats: Vec<usize> = samples.iter().map(|s| s.category).collect();
    evaluate_rankings(&rankings, &golds, &cats, manifest, embeddings, gamma)
}

pub fn top1_of(model: &Model, samples: &[Sample], exec: Execution) -> Result<f64> {
    let rankings = rankings_of(model, samples, exec)?;
    let golds: Vec<usize> = samples.iter().map(|s| s.answer).collect();
    top1(&rankings, &golds)
}

/// Half-width of the normal-approximation binomial confidence interval.
pub fn binomial_half_width(p: f64, n: usize, z: f64) -> f64 {
    z * (p * (1.0 - p) / n as f64).sqrt()
}

/// Aligned text table: one overall row, then one row per category.
pub fn render_table(report: &EvalReport) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{:<22} {:>6} {:>8} {:>8} {:>8}", "category", "n", "top1", "mrr", "sim_sem");
    let _ = writeln!(
        out,
        "{:<22} {:>6} {:>8.4} {:>8.4} {:>8.4}",
        "overall", report.n, report.top1, report.mrr, report.sim_sem_mean
    );
    for (name, c) in &report.by_category {
        let _ = writeln!(
            out,
            "{:<22} {:>6} {:>8.4} {:>8.4} {:>8.4}",
            name, c.n, c.top1, c.mrr, c.sim_sem
        );
    }
    out
}

//! Question-conditioned attention over region–node pairs, the gated
//! readout, and the answer classifier.
//!
//! The pair logit `qᵀ·W_s·[v_i; l_j] + ξ_ij` splits into a region term and
//! a node term (`w = qᵀW_s` cut at `dv`), so the `M × N` logit grid is an
//! outer sum plus the prior. Normalization runs over the whole grid.

use std::cmp::Ordering;

use crate::error::{Result, VlqaError};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct SemanticAttention {
    /// `M × N`, sums to one over all entries.
    pub alpha: Tensor,
    pub w_s: Tensor,
    pub xi: Tensor,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GatedReadout {
    pub z_final: Tensor,
    /// The readout after standardization, before the learned affine.
    pub standardized: Tensor,
    /// `M × N` gates in (0, 1).
    pub gates: Tensor,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AnswerDistribution {
    pub logits: Vec<f64>,
    pub probs: Vec<f64>,
    /// Answer indices by descending probability, ties to the lower index.
    pub ranking: Vec<usize>,
}

impl AnswerDistribution {
    pub fn from_logits(logits: Vec<f64>) -> Result<Self> {
        if logits.is_empty() {
            return Err(VlqaError::Precondition("empty answer vocabulary".into()));
        }
        let probs = Tensor::vector(logits.clone()).softmax(0)?.into_data();
        let ranking = rank_descending(&probs);
        Ok(Self {
            logits,
            probs,
            ranking,
        })
    }

    pub fn top1(&self) -> usize {
        self.ranking[0]
    }

    /// 1-based rank of `answer`.
    pub fn rank_of(&self, answer: usize) -> Option<usize> {
        self.ranking.iter().position(|&a| a == answer).map(|p| p + 1)
    }

    /// Ranking restricted to `candidates`, same ordering rule.
    pub fn ranking_within(&self, candidates: &[usize]) -> Vec<usize> {
        self.ranking
            .iter()
            .copied()
            .filter(|a| candidates.contains(a))
            .collect()
    }
}

pub fn rank_descending(scores: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| {
        scores[b]
            .partial_cmp(&scores[a])
            .unwrap_or(Ordering::Equal)
            .then(a.cmp(&b))
    });
    idx
}

/// Region-side and node-side logit terms of the pair score.
fn pair_terms(tape: &mut Tape, w: Var, v: Var, l: Var) -> Result<(Var, Var)> {
    let (_, dv) = tape.value(v).dims2()?;
    let (_, d) = tape.value(l).dims2()?;
    let w = if tape.shape(w).len() == 1 {
        let n = tape.value(w).len();
        tape.reshape(w, &[1, n])?
    } else {
        w
    };
    if tape.shape(w) != [1, dv + d] {
        return Err(VlqaError::Dimension(format!(
            "pair weights {:?} for region width {dv} and node width {d}",
            tape.shape(w)
        )));
    }
    let w_v = tape.slice_cols(w, 0, dv)?;
    let w_l = tape.slice_cols(w, dv, dv + d)?;
    let w_vt = tape.transpose(w_v)?;
    let a_v = tape.matmul(v, w_vt)?;
    let w_lt = tape.transpose(w_l)?;
    let a_l = tape.matmul(l, w_lt)?;
    let a_l = tape.transpose(a_l)?;
    Ok((a_v, a_l))
}

/// `α = softmax over all (i, j) of qᵀW_s[v_i; l_j] + ξ_ij`.
pub fn semantic_attention_on(
    tape: &mut Tape,
    q: Var,
    v: Var,
    l: Var,
    w_s: Var,
    xi: Var,
) -> Result<Var> {
    let (m, dv) = tape.value(v).dims2()?;
    let (n, d) = tape.value(l).dims2()?;
    if m == 0 || n == 0 {
        return Err(VlqaError::Precondition("semantic attention over an empty grid".into()));
    }
    if tape.value(q).len() != d || tape.shape(w_s) != [d, dv + d] || tape.shape(xi) != [m, n] {
        return Err(VlqaError::Dimension(format!(
            "semantic attention: q {:?}, v {:?}, l {:?}, W_s {:?}, xi {:?}",
            tape.shape(q),
            tape.shape(v),
            tape.shape(l),
            tape.shape(w_s),
            tape.shape(xi)
        )));
    }
    let q = if tape.shape(q).len() == 1 {
        tape.reshape(q, &[1, d])?
    } else {
        q
    };
    let w = tape.matmul(q, w_s)?;
    let (a_v, a_l) = pair_terms(tape, w, v, l)?;
    let logits = tape.outer_add(a_v, a_l)?;
    let logits = tape.add(logits, xi)?;
    tape.softmax_all(logits)
}

pub fn semantic_attention(
    q: &Tensor,
    v: &Tensor,
    l: &Tensor,
    w_s: &Tensor,
    xi: &Tensor,
) -> Result<SemanticAttention> {
    let mut tape = Tape::new();
    let vars = [q, v, l, w_s, xi].map(|t| tape.constant(t.clone()));
    let [q, vv, lv, wv, xv] = vars;
    let alpha = semantic_attention_on(&mut tape, q?, vv?, lv?, wv?, xv?)?;
    Ok(SemanticAttention {
        alpha: tape.value(alpha).clone(),
        w_s: w_s.clone(),
        xi: xi.clone(),
    })
}

/// Gate parameters for one question category, plus the normalizer.
#[derive(Clone, Copy, Debug)]
pub struct GateVars {
    /// `1 × (dv + D)` gate direction.
    pub u: Var,
    /// `[1]` gate bias.
    pub c: Var,
    pub rho_gain: Var,
    pub rho_bias: Var,
}

#[derive(Clone, Copy, Debug)]
pub struct ReadoutVars {
    pub z_final: Var,
    pub standardized: Var,
    pub gates: Var,
}

/// `ζ_ij = σ(u·[v_i; l_j] + c)`, or all ones when `gates_open`.
pub fn gates_on(tape: &mut Tape, v: Var, l: Var, gate: &GateVars, gates_open: bool) -> Result<Var> {
    let (m, _) = tape.value(v).dims2()?;
    let (n, _) = tape.value(l).dims2()?;
    if gates_open {
        return tape.constant(Tensor::ones(&[m, n]));
    }
    let (g_v, g_l) = pair_terms(tape, gate.u, v, l)?;
    let g_v = tape.add_row(g_v, gate.c)?;
    let logits = tape.outer_add(g_v, g_l)?;
    tape.sigmoid(logits)
}

/// `z = ρ(Σ_ij α_ij·ζ_ij·[v_i; l_j])`, ρ = standardize, affine, ReLU.
pub fn gated_readout_on(
    tape: &mut Tape,
    alpha: Var,
    v: Var,
    l: Var,
    gate: &GateVars,
    gates_open: bool,
) -> Result<ReadoutVars> {
    let gates = gates_on(tape, v, l, gate, gates_open)?;
    let w = tape.mul(alpha, gates)?;
    let per_region = tape.sum_axis(w, 1)?;
    let per_region = tape.transpose(per_region)?;
    let z_v = tape.matmul(per_region, v)?;
    let per_node = tape.sum_axis(w, 0)?;
    let z_l = tape.matmul(per_node, l)?;
    let z = tape.concat_cols(z_v, z_l)?;
    let standardized = tape.standardize(z)?;
    let scaled = tape.mul(standardized, gate.rho_gain)?;
    let shifted = tape.add(scaled, gate.rho_bias)?;
    let z_final = tape.relu(shifted)?;
    Ok(ReadoutVars {
        z_final,
        standardized,
        gates,
    })
}

/// Per-category gate tables: `u` is `categories × (dv + D)`, `c` has one
/// entry per category; `rho_gain`/`rho_bias` are `1 × (dv + D)`.
pub struct GateTables<'a> {
    pub u: &'a Tensor,
    pub c: &'a Tensor,
    pub rho_gain: &'a Tensor,
    pub rho_bias: &'a Tensor,
}

pub fn gated_readout(
    attn: &SemanticAttention,
    v: &Tensor,
    l: &Tensor,
    tables: &GateTables<'_>,
    category: usize,
) -> Result<GatedReadout> {
    let (categories, width) = tables.u.dims2()?;
    if category >= categories {
        return Err(VlqaError::Category(format!(
            "index {category} of {categories}"
        )));
    }
    let mut tape = Tape::new();
    let u = tape.constant(Tensor::row_vector(tables.u.row(category).to_vec()))?;
    let c = tape.constant(Tensor::scalar(tables.c.data()[category]))?;
    let rho_gain = tape.constant(tables.rho_gain.reshape(&[1, width])?)?;
    let rho_bias = tape.constant(tables.rho_bias.reshape(&[1, width])?)?;
    let gate = GateVars {
        u,
        c,
        rho_gain,
        rho_bias,
    };
    let alpha = tape.constant(attn.alpha.clone())?;
    let vv = tape.constant(v.clone())?;
    let lv = tape.constant(l.clone())?;
    let out = gated_readout_on(&mut tape, alpha, vv, lv, &gate, false)?;
    Ok(GatedReadout {
        z_final: tape.value(out.z_final).clone(),
        standardized: tape.value(out.standardized).clone(),
        gates: tape.value(out.gates).clone(),
    })
}

/// `logits = [z; joint]·W_out + b_out` as a `1 × answers` row.
pub fn answer_on(tape: &mut Tape, z: Var, joint: Var, w_out: Var, b_out: Var) -> Result<Var> {
    let h = tape.concat_cols(z, joint)?;
    let logits = tape.matmul(h, w_out)?;
    tape.add_row(logits, b_out)
}

pub fn answer(z: &Tensor, joint: &Tensor, w_out: &Tensor, b_out: &Tensor) -> Result<AnswerDistribution> {
    let mut tape = Tape::new();
    let z = tape.constant(z.reshape(&[1, z.len()])?)?;
    let j = tape.constant(joint.reshape(&[1, joint.len()])?)?;
    let w = tape.constant(w_out.clone())?;
    let b = tape.constant(b_out.clone())?;
    let logits = answer_on(&mut tape, z, j, w, b)?;
    AnswerDistribution::from_logits(tape.value(logits).data().to_vec())
}

/// `−log p(gold)` from a `1 × answers` logit row.
pub fn loss_on(tape: &mut Tape, logits: Var, gold: usize) -> Result<Var> {
    let answers = tape.value(logits).len();
    if gold >= answers {
        return Err(VlqaError::Vocabulary(format!(
            "gold answer {gold} outside {answers} answers"
        )));
    }
    let ls = tape.log_softmax(logits, 1)?;
    let picked = tape.gather(ls, vec![gold], &[1])?;
    tape.scale(picked, -1.0)
}

pub fn loss(dist: &AnswerDistribution, gold: usize) -> Result<f64> {
    let p = dist.probs.get(gold).ok_or_else(|| {
        VlqaError::Vocabulary(format!(
            "gold answer {gold} outside {} answers",
            dist.probs.len()
        ))
    })?;
    Ok(-p.ln())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_pair_attention_is_one() {
        let a = semantic_attention(
            &Tensor::vector(vec![0.3, -0.2]),
            &Tensor::new(vec![1, 3], vec![1.0, 2.0, 3.0]).unwrap(),
            &Tensor::new(vec![1, 2], vec![0.5, 0.5]).unwrap(),
            &Tensor::ones(&[2, 5]),
            &Tensor::zeros(&[1, 1]),
        )
        .unwrap();
        assert_eq!(a.alpha.data(), &[1.0]);
    }

    #[test]
    fn zero_weights_give_uniform_grid() {
        let a = semantic_attention(
            &Tensor::vector(vec![0.3, -0.2]),
            &Tensor::new(vec![2, 1], vec![1.0, 2.0]).unwrap(),
            &Tensor::new(vec![3, 2], vec![0.5; 6]).unwrap(),
            &Tensor::zeros(&[2, 3]),
            &Tensor::zeros(&[2, 3]),
        )
        .unwrap();
        for &p in a.alpha.data() {
            assert!((p - 1.0 / 6.0).abs() < 1e-15);
        }
    }

    #[test]
    fn strong_prior_concentrates() {
        let mut xi = Tensor::zeros(&[2, 3]);
        xi.data_mut()[4] = 50.0;
        let a = semantic_attention(
            &Tensor::vector(vec![0.3, -0.2]),
            &Tensor::new(vec![2, 1], vec![1.0, 2.0]).unwrap(),
            &Tensor::new(vec![3, 2], vec![0.1, 0.2, 0.3, 0.4, 0.5, 0.6]).unwrap(),
            &Tensor::new(vec![2, 3], vec![0.1, -0.2, 0.3, 0.2, 0.1, -0.1]).unwrap(),
            &xi,
        )
        .unwrap();
        assert!(a.alpha.data()[4] > 0.999);
    }

    #[test]
    fn unknown_category_rejected() {
        let attn = SemanticAttention {
            alpha: Tensor::ones(&[1, 1]),
            w_s: Tensor::zeros(&[1, 2]),
            xi: Tensor::zeros(&[1, 1]),
        };
        let u = Tensor::zeros(&[4, 2]);
        let c = Tensor::zeros(&[4]);
        let g = Tensor::ones(&[2]);
        let b = Tensor::zeros(&[2]);
        let tables = GateTables {
            u: &u,
            c: &c,
            rho_gain: &g,
            rho_bias: &b,
        };
        let r = gated_readout(
            &attn,
            &Tensor::ones(&[1, 1]),
            &Tensor::ones(&[1, 1]),
            &tables,
            4,
        );
        assert!(matches!(r, Err(VlqaError::Category(_))));
    }

    #[test]
    fn equal_logits_tie_to_lowest_index() {
        let d = AnswerDistribution::from_logits(vec![0.0, 0.0]).unwrap();
        assert_eq!(d.probs, vec![0.5, 0.5]);
        assert_eq!(d.top1(), 0);
        let d = AnswerDistribution::from_logits(vec![20.0, 0.0, 0.0]).unwrap();
        assert!(d.probs[0] > 0.999);
        assert_eq!(d.ranking, vec![0, 1, 2]);
    }

    #[test]
    fn loss_cases() {
        let d = AnswerDistribution::from_logits(vec![0.0; 4]).unwrap();
        assert!((loss(&d, 2).unwrap() - 4f64.ln()).abs() < 1e-12);
        let sure = AnswerDistribution {
            logits: vec![],
            probs: vec![1.0, 0.0],
            ranking: vec![0, 1],
        };
        assert_eq!(loss(&sure, 0).unwrap(), 0.0);
        assert!(matches!(loss(&d, 4), Err(VlqaError::Vocabulary(_))));
    }

    #[test]
    fn tape_loss_matches_eager_loss() {
        let logits = vec![0.3, -1.0, 2.5, 0.0];
        let mut tape = Tape::new();
        let l = tape.constant(Tensor::row_vector(logits.clone())).unwrap();
        let out = loss_on(&mut tape, l, 1).unwrap();
        let eager = loss(&AnswerDistribution::from_logits(logits).unwrap(), 1).unwrap();
        assert!((tape.value(out).item() - eager).abs() < 1e-12);
    }
}

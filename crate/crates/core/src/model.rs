//! The hierarchical fusion model and the two baselines it is compared to.
//!
//! All three share the multi-scale visual encoder, the tree encoder and a
//! factorized answer head: `W_out = W_h · Uᵀ`, where row `x` of `U` is the
//! mean of the answer-token rows making up answer `x`. `U` doubles as the
//! answer embedding table of the alignment metric.

use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::{FusionMode, RunConfig};
use crate::dataset::{Manifest, Sample};
use crate::error::{Result, VlqaError};
use crate::fusion::{self, DEPTH_BINS, DISTANCE_BINS};
use crate::head::{self, AnswerDistribution, GateVars};
use crate::language::{self, LanguageVars};
use crate::parallel::Execution;
use crate::tape::{Gradients, ParamStore, Tape, Var};
use crate::tensor::Tensor;
use crate::visual;

/// A module that can be switched to its neutral substitute.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Knockout {
    #[serde(rename = "semantic-attention")]
    SemanticAttention,
    #[serde(rename = "task-gating")]
    TaskGating,
    #[serde(rename = "cross-attention")]
    CrossAttention,
    #[serde(rename = "multi-scale")]
    MultiScale,
    #[serde(rename = "syntax-encoding")]
    SyntaxEncoding,
    #[serde(rename = "adaptive-fusion")]
    AdaptiveFusion,
    #[serde(rename = "refinement")]
    Refinement,
}

impl Knockout {
    pub const ALL: [Knockout; 7] = [
        Knockout::SemanticAttention,
        Knockout::TaskGating,
        Knockout::CrossAttention,
        Knockout::MultiScale,
        Knockout::SyntaxEncoding,
        Knockout::AdaptiveFusion,
        Knockout::Refinement,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Knockout::SemanticAttention => "semantic-attention",
            Knockout::TaskGating => "task-gating",
            Knockout::CrossAttention => "cross-attention",
            Knockout::MultiScale => "multi-scale",
            Knockout::SyntaxEncoding => "syntax-encoding",
            Knockout::AdaptiveFusion => "adaptive-fusion",
            Knockout::Refinement => "refinement",
        }
    }

    pub fn valid_names() -> String {
        Knockout::ALL.map(Knockout::name).join(", ")
    }

    /// Whether the target only exists in the hierarchical model.
    pub fn hier_only(self) -> bool {
        !matches!(self, Knockout::MultiScale | Knockout::SyntaxEncoding)
    }
}

impl fmt::Display for Knockout {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Knockout {
    type Err = VlqaError;

    fn from_str(s: &str) -> Result<Self> {
        Knockout::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| {
                VlqaError::Config(format!(
                    "unknown knockout target {s:?}; valid targets: {}",
                    Knockout::valid_names()
                ))
            })
    }
}

/// Everything the model needs to know about shapes and vocabularies.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelSpec {
    pub fusion: FusionMode,
    pub feature_dims: Vec<usize>,
    pub channels: usize,
    pub d: usize,
    pub d_answer: usize,
    pub vocab_size: usize,
    pub categories: usize,
    pub object_classes: usize,
    pub answers: usize,
    /// `answers × answer tokens` row-averaging matrix.
    pub answer_mixing: Tensor,
    pub answer_token_count: usize,
    pub refine_rounds: usize,
}

impl ModelSpec {
    pub fn new(config: &RunConfig, manifest: &Manifest) -> Result<Self> {
        config.validate()?;
        let dims = &config.dims;
        if manifest.dims.s != dims.scales || manifest.dims.k != dims.k {
            return Err(VlqaError::Config(format!(
                "dataset has S={} K={:?}, config has S={} K={:?}",
                manifest.dims.s, manifest.dims.k, dims.scales, dims.k
            )));
        }
        let (answer_mixing, answer_token_count) = answer_mixing(&manifest.answer_vocab)?;
        Ok(Self {
            fusion: config.fusion,
            feature_dims: dims.k.clone(),
            channels: dims.channels,
            d: dims.d,
            d_answer: dims.d_answer,
            vocab_size: manifest.vocab.len(),
            categories: manifest.categories.len(),
            object_classes: manifest.classes.len(),
            answers: manifest.answer_vocab.len(),
            answer_mixing,
            answer_token_count,
            refine_rounds: config.refine_rounds,
        })
    }

    /// Width of a flattened region embedding.
    pub fn dv(&self) -> usize {
        self.channels * self.feature_dims.len()
    }

    /// Width of a region–node pair feature.
    pub fn dz(&self) -> usize {
        self.dv() + self.d
    }

    fn head_width(&self) -> usize {
        match self.fusion {
            FusionMode::Concat => self.dv() + self.d,
            FusionMode::Scalar => self.d,
            FusionMode::Hier => self.dz() + self.d,
        }
    }
}

/// Answers split on `-` into tokens; returns the averaging matrix and the
/// number of distinct tokens.
fn answer_mixing(answers: &[String]) -> Result<(Tensor, usize)> {
    let mut tokens: Vec<&str> = answers.iter().flat_map(|a| a.split('-')).collect();
    tokens.sort_unstable();
    tokens.dedup();
    let mut mix = Tensor::zeros(&[answers.len(), tokens.len()]);
    for (i, a) in answers.iter().enumerate() {
        let parts: Vec<&str> = a.split('-').collect();
        for p in &parts {
            let t = tokens.binary_search(p).expect("token collected above");
            mix.data_mut()[i * tokens.len() + t] += 1.0 / parts.len() as f64;
        }
    }
    if answers.is_empty() {
        return Err(VlqaError::Data("empty answer vocabulary".into()));
    }
    Ok((mix, tokens.len()))
}

/// Tape handles of one forward pass.
#[derive(Clone, Debug)]
pub struct ForwardVars {
    pub logits: Var,
    pub regions: Var,
    pub nodes: Var,
    pub cross_attention: Option<Var>,
    pub attended: Option<Var>,
    pub delta: Option<Var>,
    pub alpha: Option<Var>,
    pub gates: Option<Var>,
    pub standardized: Option<Var>,
    pub z_final: Option<Var>,
    pub mix: Option<Var>,
}

/// Intermediate values of one forward pass, for inspection and tests.
#[derive(Clone, Debug)]
pub struct Diagnostics {
    pub distribution: AnswerDistribution,
    pub cross_attention: Option<Tensor>,
    pub alpha: Option<Tensor>,
    pub gates: Option<Tensor>,
    pub delta: Option<f64>,
    pub global_score: Option<f64>,
    pub standardized: Option<Tensor>,
    pub z_final: Option<Tensor>,
    /// Mixing coefficient of the scalar-attention baseline.
    pub mix: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    spec: ModelSpec,
    params: ParamStore,
    knockout: Option<Knockout>,
}

fn uniform(rng: &mut ChaCha8Rng, shape: &[usize], bound: f64) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.random_range(-bound..bound)).collect();
    Tensor::new(shape.to_vec(), data).expect("shape matches")
}

fn fan(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor {
    uniform(rng, &[rows, cols], (6.0 / (rows + cols) as f64).sqrt())
}

impl Model {
    /// Fresh parameters drawn from `seed`; registration order is fixed.
    pub fn new(spec: ModelSpec, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = ParamStore::new();
        let (c, d, dv, dz, da) = (spec.channels, spec.d, spec.dv(), spec.dz(), spec.d_answer);
        for (s, &k) in spec.feature_dims.iter().enumerate() {
            p.register(format!("visual/w_s{}", s + 1), visual::init_projection(&mut rng, c, k))?;
        }
        p.register("lang/embed", language::init_table(&mut rng, spec.vocab_size, d))?;
        p.register("lang/tau_w", fan(&mut rng, d, d))?;
        p.register("lang/tau_b", Tensor::zeros(&[1, d]))?;
        match spec.fusion {
            FusionMode::Concat => {}
            FusionMode::Scalar => {
                p.register("fusion/proj_v", fan(&mut rng, dv, d))?;
                p.register("fusion/ctx_w", uniform(&mut rng, &[1, 2 * d], 0.1))?;
                p.register("fusion/ctx_b", Tensor::zeros(&[1]))?;
            }
            FusionMode::Hier => {
                p.register("fusion/w_a", fan(&mut rng, dv, d))?;
                p.register("fusion/b_pos", Tensor::zeros(&[DISTANCE_BINS, DEPTH_BINS]))?;
                p.register("fusion/b_task", Tensor::zeros(&[spec.categories, DEPTH_BINS]))?;
                p.register("fusion/mu_v", Tensor::zeros(&[1, dv]))?;
                p.register("fusion/mu_l", Tensor::zeros(&[1, d]))?;
                p.register("fusion/mu_t", Tensor::zeros(&[1, d]))?;
                p.register("fusion/proj_v", fan(&mut rng, dv, d))?;
                p.register("head/w_s", fan(&mut rng, d, dz))?;
                p.register("head/xi", Tensor::zeros(&[spec.object_classes, spec.categories]))?;
                p.register("head/gate_u", uniform(&mut rng, &[spec.categories, dz], 0.1))?;
                p.register("head/gate_c", Tensor::zeros(&[1, spec.categories]))?;
                p.register("head/rho_gain", Tensor::ones(&[1, dz]))?;
                p.register("head/rho_bias", Tensor::zeros(&[1, dz]))?;
                p.register("head/refine", fan(&mut rng, dz, d))?;
            }
        }
        p.register("out/w_h", fan(&mut rng, spec.head_width(), da))?;
        p.register("out/answer_table", language::init_table(&mut rng, spec.answer_token_count, da))?;
        p.register("out/b", Tensor::zeros(&[1, spec.answers]))?;
        Ok(Self {
            spec,
            params: p,
            knockout: None,
        })
    }

    pub fn from_config(config: &RunConfig, manifest: &Manifest) -> Result<Self> {
        Self::new(ModelSpec::new(config, manifest)?, config.seed)
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn knockout(&self) -> Option<Knockout> {
        self.knockout
    }

    /// Switch a module to its substitute (or restore with `None`). Only the
    /// forward pass changes; parameters are untouched.
    pub fn set_knockout(&mut self, target: Option<Knockout>) -> Result<()> {
        if let Some(k) = target {
            if k.hier_only() && self.spec.fusion != FusionMode::Hier {
                return Err(VlqaError::Config(format!(
                    "knockout {k} needs the hier fusion mode, model is {}",
                    self.spec.fusion
                )));
            }
        }
        self.knockout = target;
        Ok(())
    }

    fn ko(&self, k: Knockout) -> bool {
        self.knockout == Some(k)
    }

    fn p(&self, tape: &mut Tape, store: &ParamStore, name: &str) -> Result<Var> {
        let id = store
            .id(name)
            .ok_or_else(|| VlqaError::Config(format!("parameter {name} missing from the store")))?;
        Ok(tape.param(store, id))
    }

    /// `answers × D_a` answer embedding rows.
    pub fn answer_embeddings_on(&self, tape: &mut Tape, store: &ParamStore) -> Result<Var> {
        let table = self.p(tape, store, "out/answer_table")?;
        let mix = tape.constant(self.spec.answer_mixing.clone())?;
        tape.matmul(mix, table)
    }

    pub fn answer_embeddings(&self) -> Result<Tensor> {
        let mut tape = Tape::new();
        let u = self.answer_embeddings_on(&mut tape, &self.params)?;
        Ok(tape.value(u).clone())
    }

    fn w_out_on(&self, tape: &mut Tape, store: &ParamStore) -> Result<(Var, Var)> {
        let w_h = self.p(tape, store, "out/w_h")?;
        let u = self.answer_embeddings_on(tape, store)?;
        let ut = tape.transpose(u)?;
        let w_out = tape.matmul(w_h, ut)?;
        let b = self.p(tape, store, "out/b")?;
        Ok((w_out, b))
    }

    /// Record a forward pass over `store` (which must share this model's
    /// layout) and return the handles of interest.
    pub fn forward_on(&self, tape: &mut Tape, store: &ParamStore, sample: &Sample) -> Result<ForwardVars> {
        let s = &self.spec;
        let weights = (0..s.feature_dims.len())
            .map(|i| self.p(tape, store, &format!("visual/w_s{}", i + 1)))
            .collect::<Result<Vec<_>>>()?;
        let dropped: Vec<usize> = if self.ko(Knockout::MultiScale) {
            (1..s.feature_dims.len()).collect()
        } else {
            vec![]
        };
        let v = visual::encode_scene_on(tape, &sample.regions, &weights, &dropped)?;
        let lang = LanguageVars {
            table: self.p(tape, store, "lang/embed")?,
            tau_w: self.p(tape, store, "lang/tau_w")?,
            tau_b: self.p(tape, store, "lang/tau_b")?,
        };
        let (l, q0) = language::encode_tree_on(tape, &sample.layout, &lang, self.ko(Knockout::SyntaxEncoding))?;
        let v_bar = tape.mean_axis(v, 0)?;

        let mut out = ForwardVars {
            logits: v,
            regions: v,
            nodes: l,
            cross_attention: None,
            attended: None,
            delta: None,
            alpha: None,
            gates: None,
            standardized: None,
            z_final: None,
            mix: None,
        };
        let (w_out, b_out) = self.w_out_on(tape, store)?;
        out.logits = match s.fusion {
            FusionMode::Concat => head::answer_on(tape, v_bar, q0, w_out, b_out)?,
            FusionMode::Scalar => {
                let proj = self.p(tape, store, "fusion/proj_v")?;
                let vis = tape.matmul(v_bar, proj)?;
                let w = self.p(tape, store, "fusion/ctx_w")?;
                let b = self.p(tape, store, "fusion/ctx_b")?;
                let (fused, mix) = fusion::fuse_scalar_attn_on(tape, vis, q0, w, b)?;
                out.mix = Some(mix);
                let logits = tape.matmul(fused, w_out)?;
                tape.add_row(logits, b_out)?
            }
            FusionMode::Hier => {
                let (z, joint) = self.hier_on(tape, store, sample, v, l, q0, v_bar, &mut out)?;
                head::answer_on(tape, z, joint, w_out, b_out)?
            }
        };
        Ok(out)
    }

    #[allow(clippy::too_many_arguments)]
    fn hier_on(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        sample: &Sample,
        v: Var,
        l: Var,
        q0: Var,
        v_bar: Var,
        out: &mut ForwardVars,
    ) -> Result<(Var, Var)> {
        let s = &self.spec;
        let m = sample.regions.len();
        let n = sample.layout.depths.len();
        let cat = sample.category;
        if cat >= s.categories {
            return Err(VlqaError::Category(format!("index {cat} of {}", s.categories)));
        }

        let a = if self.ko(Knockout::CrossAttention) {
            tape.constant(Tensor::filled(&[m, n], 1.0 / n as f64))?
        } else {
            let (pos, task) = fusion::prior_indices(&sample.regions, &sample.layout.depths, cat);
            let b_pos = self.p(tape, store, "fusion/b_pos")?;
            let b_task = self.p(tape, store, "fusion/b_task")?;
            let bp = tape.gather(b_pos, pos, &[m, n])?;
            let bt = tape.gather(b_task, task, &[m, n])?;
            let beta = tape.add(bp, bt)?;
            let w_a = self.p(tape, store, "fusion/w_a")?;
            fusion::cross_attend_on(tape, v, l, w_a, beta)?
        };
        let f = fusion::attend_features_on(tape, a, l)?;
        out.cross_attention = Some(a);
        out.attended = Some(f);

        let s_bar = tape.mean_axis(f, 0)?;
        let delta = if self.ko(Knockout::AdaptiveFusion) {
            tape.constant(Tensor::scalar(0.5))?
        } else {
            let l_bar = tape.mean_axis(l, 0)?;
            let mu = [
                self.p(tape, store, "fusion/mu_v")?,
                self.p(tape, store, "fusion/mu_l")?,
                self.p(tape, store, "fusion/mu_t")?,
            ];
            fusion::adaptive_coeff_on(tape, [v_bar, l_bar, s_bar], mu)?
        };
        out.delta = Some(delta);
        let proj = self.p(tape, store, "fusion/proj_v")?;
        let vis = tape.matmul(v_bar, proj)?;
        let vis = tape.add(vis, s_bar)?;
        let toward = tape.sub(vis, q0)?;
        let toward = tape.mul_scalar(toward, delta)?;
        let joint = tape.add(q0, toward)?;

        let dz = s.dz();
        let gate_u = self.p(tape, store, "head/gate_u")?;
        let gate_c = self.p(tape, store, "head/gate_c")?;
        let gate = GateVars {
            u: tape.gather(gate_u, (cat * dz..(cat + 1) * dz).collect(), &[1, dz])?,
            c: tape.gather(gate_c, vec![cat], &[1])?,
            rho_gain: self.p(tape, store, "head/rho_gain")?,
            rho_bias: self.p(tape, store, "head/rho_bias")?,
        };
        let xi_idx: Vec<usize> = sample
            .regions
            .iter()
            .flat_map(|r| std::iter::repeat_n(r.object_class * s.categories + cat, n))
            .collect();
        if sample.regions.iter().any(|r| r.object_class >= s.object_classes) {
            return Err(VlqaError::Data("region object class outside the manifest classes".into()));
        }
        let xi_table = self.p(tape, store, "head/xi")?;
        let xi = tape.gather(xi_table, xi_idx, &[m, n])?;
        let w_s = self.p(tape, store, "head/w_s")?;
        let refine = self.p(tape, store, "head/refine")?;

        let rounds = if self.ko(Knockout::Refinement) { 1 } else { s.refine_rounds };
        let mut q = q0;
        let mut z = None;
        for r in 0..rounds {
            let alpha = if self.ko(Knockout::SemanticAttention) {
                tape.constant(Tensor::filled(&[m, n], 1.0 / (m * n) as f64))?
            } else {
                head::semantic_attention_on(tape, q, v, l, w_s, xi)?
            };
            let ro = head::gated_readout_on(tape, alpha, v, l, &gate, self.ko(Knockout::TaskGating))?;
            if r + 1 < rounds {
                let step = tape.matmul(ro.z_final, refine)?;
                q = tape.add(q, step)?;
            }
            out.alpha = Some(alpha);
            out.gates = Some(ro.gates);
            out.standardized = Some(ro.standardized);
            out.z_final = Some(ro.z_final);
            z = Some(ro.z_final);
        }
        Ok((z.expect("at least one round"), joint))
    }

    pub fn loss_on(&self, tape: &mut Tape, store: &ParamStore, sample: &Sample) -> Result<Var> {
        let fwd = self.forward_on(tape, store, sample)?;
        head::loss_on(tape, fwd.logits, sample.answer)
    }

    pub fn predict(&self, sample: &Sample) -> Result<AnswerDistribution> {
        let mut tape = Tape::new();
        let fwd = self.forward_on(&mut tape, &self.params, sample)?;
        AnswerDistribution::from_logits(tape.value(fwd.logits).data().to_vec())
    }

    pub fn diagnose(&self, sample: &Sample) -> Result<Diagnostics> {
        let mut tape = Tape::new();
        let fwd = self.forward_on(&mut tape, &self.params, sample)?;
        let get = |v: Option<Var>| v.map(|v| tape.value(v).clone());
        let global_score = match (fwd.attended, fwd.cross_attention) {
            (Some(f), Some(a)) => Some(fusion::global_score(
                tape.value(f),
                tape.value(fwd.nodes),
                &fusion::relevance(tape.value(a))?,
            )?),
            _ => None,
        };
        Ok(Diagnostics {
            distribution: AnswerDistribution::from_logits(tape.value(fwd.logits).data().to_vec())?,
            cross_attention: get(fwd.cross_attention),
            alpha: get(fwd.alpha),
            gates: get(fwd.gates),
            delta: fwd.delta.map(|d| tape.value(d).item()),
            global_score,
            standardized: get(fwd.standardized),
            z_final: get(fwd.z_final),
            mix: fwd.mix.map(|m| tape.value(m).item()),
        })
    }

    pub fn loss_and_grad(&self, sample: &Sample) -> Result<(f64, Gradients)> {
        let mut tape = Tape::new();
        let loss = self.loss_on(&mut tape, &self.params, sample)?;
        let grads = tape.backward(loss, &self.params)?;
        Ok((tape.value(loss).item(), grads))
    }

    /// Summed loss and gradients over `samples[indices]`. Per-sample passes
    /// may run in parallel; the sum is always taken in `indices` order.
    pub fn batch_loss_and_grad(
        &self,
        samples: &[Sample],
        indices: &[usize],
        exec: Execution,
    ) -> Result<(f64, Gradients)> {
        let parts = exec.map(indices, |_, &i| self.loss_and_grad(&samples[i]));
        let mut loss = 0.0;
        let mut grads = Gradients::zeros_like(&self.params);
        for part in parts {
            let (l, g) = part?;
            loss += l;
            grads.add_assign(&g);
        }
        Ok((loss, grads))
    }

    pub fn predict_all(&self, samples: &[Sample], exec: Execution) -> Result<Vec<AnswerDistribution>> {
        exec.map(samples, |_, s| self.predict(s)).into_iter().collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::Dataset;

    fn setup(fusion: FusionMode) -> (Model, Dataset) {
        let ds = Dataset::synthetic(9, 8, 2, 0.0, 6).unwrap();
        let mut cfg = RunConfig::default();
        cfg.fusion = fusion;
        (Model::from_config(&cfg, &ds.manifest).unwrap(), ds)
    }

    #[test]
    fn answer_mixing_splits_on_dash() {
        let (mix, n) = answer_mixing(&["robot-arm".into(), "robot".into(), "arm".into()]).unwrap();
        assert_eq!(n, 2);
        assert_eq!(mix.row(0), &[0.5, 0.5]);
        assert_eq!(mix.row(1), &[0.0, 1.0]);
    }

    #[test]
    fn every_mode_predicts_a_distribution() {
        for mode in FusionMode::ALL {
            let (m, ds) = setup(mode);
            for s in &ds.train {
                let d = m.predict(s).unwrap();
                assert_eq!(d.probs.len(), 33);
                assert!((d.probs.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn hier_only_knockouts_rejected_for_baselines() {
        let (mut m, _) = setup(FusionMode::Concat);
        assert!(matches!(
            m.set_knockout(Some(Knockout::CrossAttention)),
            Err(VlqaError::Config(_))
        ));
        m.set_knockout(Some(Knockout::MultiScale)).unwrap();
    }

    #[test]
    fn unknown_target_lists_valid_ones() {
        let e = "attention".parse::<Knockout>().unwrap_err().to_string();
        assert!(e.contains("semantic-attention") && e.contains("refinement"));
    }

    #[test]
    fn adaptive_fusion_knockout_pins_delta() {
        let (mut m, ds) = setup(FusionMode::Hier);
        m.set_knockout(Some(Knockout::AdaptiveFusion)).unwrap();
        assert_eq!(m.diagnose(&ds.train[0]).unwrap().delta, Some(0.5));
    }

    #[test]
    fn batch_sum_matches_serial_fold() {
        let (m, ds) = setup(FusionMode::Hier);
        let idx: Vec<usize> = (0..ds.train.len()).rev().collect();
        let (la, ga) = m.batch_loss_and_grad(&ds.train, &idx, Execution::Auto).unwrap();
        let (lb, gb) = m.batch_loss_and_grad(&ds.train, &idx, Execution::Sequential).unwrap();
        assert_eq!(la.to_bits(), lb.to_bits());
        assert_eq!(ga, gb);
    }
}

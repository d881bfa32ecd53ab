//! Vision–language alignment: the concatenation and scalar-attention
//! baselines, per-region cross-attention over syntax nodes, the global
//! matching score and the adaptive fusion coefficient.

use crate::error::{Result, VlqaError};
use crate::tape::{logistic, Tape, Var};
use crate::tensor::Tensor;
use crate::visual::RegionInput;

/// Distance bins for the positional prior.
pub const DISTANCE_BINS: usize = 4;
/// Depth bins for the positional and task priors (depth capped at 4).
pub const DEPTH_BINS: usize = 5;

#[derive(Clone, Debug, PartialEq)]
pub struct CrossAttentionMap {
    /// `M × N`, rows are distributions over syntax nodes.
    pub a: Tensor,
    pub beta: Tensor,
    pub w_a: Tensor,
}

fn as_row(tape: &mut Tape, v: Var) -> Result<Var> {
    let n = tape.value(v).len();
    if tape.shape(v) == [1, n] {
        Ok(v)
    } else {
        tape.reshape(v, &[1, n])
    }
}

pub fn fuse_concat_on(tape: &mut Tape, v: Var, l: Var) -> Result<Var> {
    if tape.value(v).is_empty() || tape.value(l).is_empty() {
        return Err(VlqaError::Precondition(
            "concatenation fusion needs two non-empty vectors".into(),
        ));
    }
    let v = as_row(tape, v)?;
    let l = as_row(tape, l)?;
    tape.concat_cols(v, l)
}

/// `v ⊕ l`.
pub fn fuse_concat(v: &Tensor, l: &Tensor) -> Result<Tensor> {
    let mut tape = Tape::new();
    let (v, l) = (tape.constant(v.clone())?, tape.constant(l.clone())?);
    let out = fuse_concat_on(&mut tape, v, l)?;
    Ok(Tensor::vector(tape.value(out).data().to_vec()))
}

/// Returns `(α·v + (1−α)·l, α)` with `α = σ(w·[v;l] + b)`.
pub fn fuse_scalar_attn_on(
    tape: &mut Tape,
    v: Var,
    l: Var,
    w: Var,
    b: Var,
) -> Result<(Var, Var)> {
    if tape.value(v).len() != tape.value(l).len() {
        return Err(VlqaError::Dimension(format!(
            "scalar attention over lengths {} and {}",
            tape.value(v).len(),
            tape.value(l).len()
        )));
    }
    let ctx = fuse_concat_on(tape, v, l)?;
    let w = as_row(tape, w)?;
    if tape.value(w).len() != tape.value(ctx).len() {
        return Err(VlqaError::Dimension(format!(
            "context weights of length {} for a context of {}",
            tape.value(w).len(),
            tape.value(ctx).len()
        )));
    }
    let logit = tape.dot(ctx, w)?;
    let logit = tape.add(logit, b)?;
    let alpha = tape.sigmoid(logit)?;
    let v = as_row(tape, v)?;
    let l = as_row(tape, l)?;
    let diff = tape.sub(v, l)?;
    let mix = tape.mul_scalar(diff, alpha)?;
    let out = tape.add(l, mix)?;
    Ok((out, alpha))
}

pub fn fuse_scalar_attn(v: &Tensor, l: &Tensor, w: &Tensor, b: f64) -> Result<(Tensor, f64)> {
    let mut tape = Tape::new();
    let v = tape.constant(v.clone())?;
    let l = tape.constant(l.clone())?;
    let w = tape.constant(w.clone())?;
    let b = tape.constant(Tensor::scalar(b))?;
    let (out, alpha) = fuse_scalar_attn_on(&mut tape, v, l, w, b)?;
    Ok((
        Tensor::vector(tape.value(out).data().to_vec()),
        tape.value(alpha).item(),
    ))
}

/// Logits `v·W_a·lᵀ + β`, softmaxed over nodes for each region.
pub fn cross_attend_on(tape: &mut Tape, v: Var, l: Var, w_a: Var, beta: Var) -> Result<Var> {
    let (m, dv) = tape.value(v).dims2()?;
    let (n, d) = tape.value(l).dims2()?;
    if tape.shape(w_a) != [dv, d] || tape.shape(beta) != [m, n] {
        return Err(VlqaError::Dimension(format!(
            "cross attention: v {:?}, l {:?}, W_a {:?}, beta {:?}",
            tape.shape(v),
            tape.shape(l),
            tape.shape(w_a),
            tape.shape(beta)
        )));
    }
    let vw = tape.matmul(v, w_a)?;
    let lt = tape.transpose(l)?;
    let logits = tape.matmul(vw, lt)?;
    let logits = tape.add(logits, beta)?;
    tape.softmax(logits, 1)
}

pub fn cross_attend(v: &Tensor, l: &Tensor, w_a: &Tensor, beta: &Tensor) -> Result<CrossAttentionMap> {
    let mut tape = Tape::new();
    let vv = tape.constant(v.clone())?;
    let lv = tape.constant(l.clone())?;
    let wv = tape.constant(w_a.clone())?;
    let bv = tape.constant(beta.clone())?;
    let a = cross_attend_on(&mut tape, vv, lv, wv, bv)?;
    Ok(CrossAttentionMap {
        a: tape.value(a).clone(),
        beta: beta.clone(),
        w_a: w_a.clone(),
    })
}

/// `f_m = Σ_n A[m,n]·l_n`.
pub fn attend_features_on(tape: &mut Tape, a: Var, l: Var) -> Result<Var> {
    tape.matmul(a, l)
}

pub fn attend_features(map: &CrossAttentionMap, l: &Tensor) -> Result<Tensor> {
    map.a.matmul(l)
}

/// `Σ λ[m,n]⟨f_m, g_n⟩ / (sqrt(Σ‖f_m‖²)·sqrt(Σ‖g_n‖²))`.
pub fn global_score_on(tape: &mut Tape, f: Var, g: Var, lambda: Var) -> Result<Var> {
    let (m, df) = tape.value(f).dims2()?;
    let (n, dg) = tape.value(g).dims2()?;
    if df != dg || tape.shape(lambda) != [m, n] {
        return Err(VlqaError::Dimension(format!(
            "global score: f {:?}, g {:?}, lambda {:?}",
            tape.shape(f),
            tape.shape(g),
            tape.shape(lambda)
        )));
    }
    let ff = tape.dot(f, f)?;
    let gg = tape.dot(g, g)?;
    if tape.value(ff).item() == 0.0 || tape.value(gg).item() == 0.0 {
        return Err(VlqaError::DegenerateInput(
            "global score with an all-zero feature set".into(),
        ));
    }
    let gt = tape.transpose(g)?;
    let sims = tape.matmul(f, gt)?;
    let num = tape.dot(lambda, sims)?;
    let den = tape.mul(ff, gg)?;
    let inv = tape.powf(den, -0.5)?;
    tape.mul(num, inv)
}

pub fn global_score(f: &Tensor, g: &Tensor, lambda: &Tensor) -> Result<f64> {
    let mut tape = Tape::new();
    let fv = tape.constant(f.clone())?;
    let gv = tape.constant(g.clone())?;
    let lv = tape.constant(lambda.clone())?;
    let s = global_score_on(&mut tape, fv, gv, lv)?;
    Ok(tape.value(s).item())
}

/// Relevance weights for the global score: the cross-attention map with
/// each column rescaled so that it sums to at most one. Rows and columns
/// both summing to at most one bounds the score by one in magnitude.
pub fn relevance(a: &Tensor) -> Result<Tensor> {
    let (m, n) = a.dims2()?;
    let mut out = a.clone();
    for j in 0..n {
        let col: f64 = (0..m).map(|i| a.get2(i, j)).sum();
        if col > 1.0 {
            for i in 0..m {
                out.data_mut()[i * n + j] /= col;
            }
        }
    }
    Ok(out)
}

/// `δ* = σ(μ_v·v̄ + μ_l·l̄ + μ_t·s̄)` as a `[1]` tensor.
pub fn adaptive_coeff_on(
    tape: &mut Tape,
    pooled: [Var; 3],
    mu: [Var; 3],
) -> Result<Var> {
    let mut logit: Option<Var> = None;
    for (p, m) in pooled.into_iter().zip(mu) {
        if tape.value(p).len() != tape.value(m).len() {
            return Err(VlqaError::Dimension(format!(
                "fusion coefficient: pooled {:?} against mu {:?}",
                tape.shape(p),
                tape.shape(m)
            )));
        }
        let p = as_row(tape, p)?;
        let m = as_row(tape, m)?;
        let term = tape.dot(p, m)?;
        logit = Some(match logit {
            None => term,
            Some(acc) => tape.add(acc, term)?,
        });
    }
    tape.sigmoid(logit.expect("three terms"))
}

pub fn adaptive_coeff(pooled: [&Tensor; 3], mu: [&Tensor; 3]) -> Result<f64> {
    let mut logit = 0.0;
    for (p, m) in pooled.iter().zip(mu) {
        if p.len() != m.len() {
            return Err(VlqaError::Dimension(format!(
                "fusion coefficient: pooled {:?} against mu {:?}",
                p.shape(),
                m.shape()
            )));
        }
        logit += p.data().iter().zip(m.data()).map(|(a, b)| a * b).sum::<f64>();
    }
    Ok(logistic(logit))
}

/// Distance bin of a region's bbox center from the image center.
pub fn distance_bin(region: &RegionInput) -> usize {
    let (cx, cy) = region.center();
    let d = ((cx - 0.5).powi(2) + (cy - 0.5).powi(2)).sqrt();
    let max = 0.5f64.sqrt();
    ((d / max * DISTANCE_BINS as f64) as usize).min(DISTANCE_BINS - 1)
}

/// Flat indices into the `DISTANCE_BINS × DEPTH_BINS` positional table and
/// the `categories × DEPTH_BINS` task table, one per (region, node) pair.
pub fn prior_indices(
    regions: &[RegionInput],
    depths: &[usize],
    category: usize,
) -> (Vec<usize>, Vec<usize>) {
    let mut pos = Vec::with_capacity(regions.len() * depths.len());
    let mut task = Vec::with_capacity(regions.len() * depths.len());
    for r in regions {
        let db = distance_bin(r);
        for &d in depths {
            let depth = d.min(DEPTH_BINS - 1);
            pos.push(db * DEPTH_BINS + depth);
            task.push(category * DEPTH_BINS + depth);
        }
    }
    (pos, task)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn concat_hand_case_and_empty() {
        let out = fuse_concat(&Tensor::vector(vec![1.0, 2.0]), &Tensor::vector(vec![3.0])).unwrap();
        assert_eq!(out.data(), &[1.0, 2.0, 3.0]);
        assert!(matches!(
            fuse_concat(&Tensor::vector(vec![1.0]), &Tensor::vector(vec![])),
            Err(VlqaError::Precondition(_))
        ));
    }

    #[test]
    fn scalar_attn_equal_inputs_and_saturation() {
        let v = Tensor::vector(vec![0.3, -1.2, 2.0]);
        let w = Tensor::vector(vec![0.4, 0.1, -0.3, 0.2, 0.5, -0.6]);
        let (out, _) = fuse_scalar_attn(&v, &v, &w, 0.7).unwrap();
        for (a, b) in out.data().iter().zip(v.data()) {
            assert!((a - b).abs() < 1e-15);
        }
        let l = Tensor::vector(vec![5.0, 5.0, 5.0]);
        let (out, alpha) = fuse_scalar_attn(&v, &l, &Tensor::zeros(&[6]), 50.0).unwrap();
        assert!(alpha > 1.0 - 1e-15 && alpha <= 1.0);
        for (a, b) in out.data().iter().zip(v.data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn scalar_attn_length_mismatch() {
        let r = fuse_scalar_attn(
            &Tensor::vector(vec![1.0, 2.0]),
            &Tensor::vector(vec![1.0]),
            &Tensor::zeros(&[3]),
            0.0,
        );
        assert!(matches!(r, Err(VlqaError::Dimension(_))));
    }

    #[test]
    fn cross_attend_trivial_cases() {
        let v = Tensor::new(vec![2, 3], vec![1.0, 2.0, 3.0, -1.0, 0.0, 2.0]).unwrap();
        let l1 = Tensor::new(vec![1, 2], vec![0.5, -0.5]).unwrap();
        let w = Tensor::new(vec![3, 2], vec![0.1, 0.2, 0.3, 0.4, 0.5, 0.6]).unwrap();
        let map = cross_attend(&v, &l1, &w, &Tensor::zeros(&[2, 1])).unwrap();
        assert_eq!(map.a.data(), &[1.0, 1.0]);

        let l4 = Tensor::new(vec![4, 2], (0..8).map(|i| i as f64).collect()).unwrap();
        let map = cross_attend(&v, &l4, &Tensor::zeros(&[3, 2]), &Tensor::zeros(&[2, 4])).unwrap();
        for &p in map.a.data() {
            assert!((p - 0.25).abs() < 1e-15);
        }
    }

    #[test]
    fn cross_attend_shape_error() {
        let r = cross_attend(
            &Tensor::zeros(&[2, 3]),
            &Tensor::zeros(&[4, 2]),
            &Tensor::zeros(&[2, 2]),
            &Tensor::zeros(&[2, 4]),
        );
        assert!(matches!(r, Err(VlqaError::Dimension(_))));
    }

    #[test]
    fn attend_one_hot_and_identical() {
        let l = Tensor::new(vec![3, 2], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let map = CrossAttentionMap {
            a: Tensor::new(vec![2, 3], vec![0.0, 1.0, 0.0, 0.0, 0.0, 1.0]).unwrap(),
            beta: Tensor::zeros(&[2, 3]),
            w_a: Tensor::zeros(&[1, 2]),
        };
        let f = attend_features(&map, &l).unwrap();
        assert_eq!(f.row(0), l.row(1));
        assert_eq!(f.row(1), l.row(2));

        let same = Tensor::new(vec![3, 2], vec![7.0, -1.0, 7.0, -1.0, 7.0, -1.0]).unwrap();
        let map = CrossAttentionMap {
            a: Tensor::new(vec![2, 3], vec![0.2, 0.3, 0.5, 0.6, 0.1, 0.3]).unwrap(),
            ..map
        };
        let f = attend_features(&map, &same).unwrap();
        for i in 0..2 {
            assert!((f.get2(i, 0) - 7.0).abs() < 1e-14 && (f.get2(i, 1) + 1.0).abs() < 1e-14);
        }
    }

    #[test]
    fn global_score_perfect_and_orthogonal() {
        let u = Tensor::new(vec![1, 3], vec![0.6, 0.8, 0.0]).unwrap();
        let one = Tensor::ones(&[1, 1]);
        assert!((global_score(&u, &u, &one).unwrap() - 1.0).abs() < 1e-15);

        let f = Tensor::new(vec![2, 2], vec![1.0, 0.0, 2.0, 0.0]).unwrap();
        let g = Tensor::new(vec![1, 2], vec![0.0, 3.0]).unwrap();
        assert_eq!(global_score(&f, &g, &Tensor::ones(&[2, 1])).unwrap(), 0.0);
    }

    #[test]
    fn global_score_zero_features_rejected() {
        let r = global_score(
            &Tensor::zeros(&[2, 2]),
            &Tensor::ones(&[1, 2]),
            &Tensor::ones(&[2, 1]),
        );
        assert!(matches!(r, Err(VlqaError::DegenerateInput(_))));
    }

    #[test]
    fn adaptive_coeff_zero_and_saturated() {
        let p = Tensor::vector(vec![0.4, -2.0]);
        let z = Tensor::zeros(&[2]);
        assert_eq!(adaptive_coeff([&p, &p, &p], [&z, &z, &z]).unwrap(), 0.5);

        let one = Tensor::vector(vec![1.0]);
        let twenty = Tensor::vector(vec![20.0]);
        let z1 = Tensor::zeros(&[1]);
        let d = adaptive_coeff([&one, &one, &one], [&twenty, &z1, &z1]).unwrap();
        assert!(d > 0.99999 && d < 1.0);
    }

    #[test]
    fn adaptive_coeff_shape_error() {
        let a = Tensor::zeros(&[2]);
        let b = Tensor::zeros(&[3]);
        assert!(adaptive_coeff([&a, &a, &a], [&b, &a, &a]).is_err());
    }
}

//! Multi-scale region encoding.
//!
//! Each region carries raw features at `S` scales; scale `s` is projected
//! by its own `C × K_s` matrix, `v[i,c,s] = Σ_k W_s[c,k] · f_s[i,k]`. The
//! per-region embedding used downstream is the flattened `v[i,·,·]` laid
//! out scale block by scale block: entry `s·C + c`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Result, VlqaError};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegionInput {
    pub region_id: usize,
    /// Raw features, one vector per scale.
    pub features: Vec<Vec<f64>>,
    /// `(x0, y0, x1, y1)` in the unit square.
    pub bbox: [f64; 4],
    /// Object class index, used by the attention priors.
    pub object_class: usize,
}

impl RegionInput {
    pub fn validate(&self, feature_dims: &[usize]) -> Result<()> {
        if self.features.len() != feature_dims.len() {
            return Err(VlqaError::Dimension(format!(
                "region {} has {} scales, expected {}",
                self.region_id,
                self.features.len(),
                feature_dims.len()
            )));
        }
        for (s, (f, &k)) in self.features.iter().zip(feature_dims).enumerate() {
            if f.len() != k {
                return Err(VlqaError::Dimension(format!(
                    "region {} scale {}: {} features, expected K_{} = {}",
                    self.region_id,
                    s + 1,
                    f.len(),
                    s + 1,
                    k
                )));
            }
        }
        let [x0, y0, x1, y1] = self.bbox;
        let in_unit = self.bbox.iter().all(|v| (0.0..=1.0).contains(v));
        if !in_unit || x0 > x1 || y0 > y1 {
            return Err(VlqaError::Schema(format!(
                "region {} has malformed bbox {:?}",
                self.region_id, self.bbox
            )));
        }
        Ok(())
    }

    pub fn center(&self) -> (f64, f64) {
        let [x0, y0, x1, y1] = self.bbox;
        ((x0 + x1) / 2.0, (y0 + y1) / 2.0)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SceneEncoding {
    /// `num_regions × C × S`.
    pub v: Tensor,
    /// `num_regions × (C·S)`, scale blocks ascending.
    pub flat: Tensor,
}

impl SceneEncoding {
    pub fn get(&self, i: usize, c: usize, s: usize) -> f64 {
        let (cs, ss) = (self.v.shape()[1], self.v.shape()[2]);
        self.v.data()[(i * cs + c) * ss + s]
    }
}

fn check_weights(regions: &[RegionInput], weight_shapes: &[&[usize]]) -> Result<Vec<usize>> {
    if regions.is_empty() {
        return Err(VlqaError::Precondition("scene has no regions".into()));
    }
    if weight_shapes.is_empty() {
        return Err(VlqaError::Dimension("no scale projections given".into()));
    }
    let channels = weight_shapes[0][0];
    let mut dims = Vec::with_capacity(weight_shapes.len());
    for (s, shape) in weight_shapes.iter().enumerate() {
        if shape.len() != 2 || shape[0] != channels {
            return Err(VlqaError::Dimension(format!(
                "projection for scale {} has shape {:?}, expected [{}, K_{}]",
                s + 1,
                shape,
                channels,
                s + 1
            )));
        }
        dims.push(shape[1]);
    }
    for r in regions {
        r.validate(&dims)?;
    }
    Ok(dims)
}

/// Raw features of every region at `scale`, as an `M × K_s` matrix.
pub fn feature_matrix(regions: &[RegionInput], scale: usize) -> Result<Tensor> {
    let k = regions.first().map_or(0, |r| r.features[scale].len());
    let rows: Vec<Vec<f64>> = regions.iter().map(|r| r.features[scale].clone()).collect();
    Tensor::from_rows(&rows, k)
}

/// Record the projection on a tape; returns the `M × (C·S)` region matrix.
/// Scales listed in `dropped` contribute a zero block of the same width.
pub fn encode_scene_on(
    tape: &mut Tape,
    regions: &[RegionInput],
    weights: &[Var],
    dropped: &[usize],
) -> Result<Var> {
    let shapes: Vec<Vec<usize>> = weights.iter().map(|&w| tape.shape(w).to_vec()).collect();
    let shape_refs: Vec<&[usize]> = shapes.iter().map(Vec::as_slice).collect();
    check_weights(regions, &shape_refs)?;
    let channels = shapes[0][0];

    let mut out: Option<Var> = None;
    for (s, &w) in weights.iter().enumerate() {
        let block = if dropped.contains(&s) {
            tape.constant(Tensor::zeros(&[regions.len(), channels]))?
        } else {
            let f = tape.constant(feature_matrix(regions, s)?)?;
            let wt = tape.transpose(w)?;
            tape.matmul(f, wt)?
        };
        out = Some(match out {
            None => block,
            Some(prev) => tape.concat_cols(prev, block)?,
        });
    }
    Ok(out.expect("at least one scale"))
}

/// Eager multi-scale encoding.
pub fn encode_scene(regions: &[RegionInput], weights: &[Tensor]) -> Result<SceneEncoding> {
    let mut tape = Tape::new();
    let vars = weights
        .iter()
        .map(|w| tape.constant(w.clone()))
        .collect::<Result<Vec<_>>>()?;
    let flat_var = encode_scene_on(&mut tape, regions, &vars, &[])?;
    let flat = tape.value(flat_var).clone();

    let (m, cs) = flat.dims2()?;
    let scales = weights.len();
    let channels = cs / scales;
    let mut v = vec![0.0; m * channels * scales];
    for i in 0..m {
        for s in 0..scales {
            for c in 0..channels {
                v[(i * channels + c) * scales + s] = flat.get2(i, s * channels + c);
            }
        }
    }
    Ok(SceneEncoding {
        v: Tensor::new(vec![m, channels, scales], v)?,
        flat,
    })
}

/// Mean over regions of the flattened embeddings.
pub fn pool_visual(enc: &SceneEncoding) -> Result<Tensor> {
    let (m, cs) = enc.flat.dims2()?;
    if m == 0 {
        return Err(VlqaError::Precondition("pooling an empty scene".into()));
    }
    let mut out = vec![0.0; cs];
    for i in 0..m {
        for (o, x) in out.iter_mut().zip(enc.flat.row(i)) {
            *o += x;
        }
    }
    Ok(Tensor::vector(out.into_iter().map(|x| x / m as f64).collect()))
}

/// Fan-based uniform init in `±sqrt(6 / (K_s + C))`.
pub fn init_projection(rng: &mut impl Rng, channels: usize, k: usize) -> Tensor {
    let bound = (6.0 / (k + channels) as f64).sqrt();
    let data = (0..channels * k)
        .map(|_| rng.random_range(-bound..bound))
        .collect();
    Tensor::new(vec![channels, k], data).expect("shape matches")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn region(id: usize, feats: Vec<Vec<f64>>) -> RegionInput {
        RegionInput {
            region_id: id,
            features: feats,
            bbox: [0.1, 0.1, 0.2, 0.3],
            object_class: 0,
        }
    }

    #[test]
    fn identity_projection_passes_features_through() {
        let regions = vec![
            region(0, vec![vec![1.0, 2.0, 3.0]]),
            region(1, vec![vec![-1.0, 0.5, 4.0]]),
        ];
        let enc = encode_scene(&regions, &[Tensor::eye(3)]).unwrap();
        for (i, r) in regions.iter().enumerate() {
            for c in 0..3 {
                assert_eq!(enc.get(i, c, 0), r.features[0][c]);
            }
        }
    }

    #[test]
    fn hand_arithmetic() {
        let regions = vec![region(0, vec![vec![1.0, 1.0]])];
        let w = Tensor::new(vec![1, 2], vec![2.0, 3.0]).unwrap();
        let enc = encode_scene(&regions, &[w]).unwrap();
        assert_eq!(enc.v.data(), &[5.0]);
    }

    #[test]
    fn wrong_feature_length_names_region_and_scale() {
        let regions = vec![region(7, vec![vec![1.0, 2.0], vec![1.0]])];
        let ws = vec![Tensor::zeros(&[3, 2]), Tensor::zeros(&[3, 2])];
        let msg = encode_scene(&regions, &ws).unwrap_err().to_string();
        assert!(msg.contains("region 7") && msg.contains("scale 2"), "{msg}");
    }

    #[test]
    fn pool_single_and_antisymmetric() {
        let w = Tensor::eye(2);
        let one = encode_scene(&[region(0, vec![vec![3.0, -1.0]])], &[w.clone()]).unwrap();
        assert_eq!(pool_visual(&one).unwrap().data(), &[3.0, -1.0]);
        let two = encode_scene(
            &[region(0, vec![vec![3.0, -1.0]]), region(1, vec![vec![-3.0, 1.0]])],
            &[w],
        )
        .unwrap();
        assert_eq!(pool_visual(&two).unwrap().data(), &[0.0, 0.0]);
    }

    #[test]
    fn empty_scene_rejected() {
        assert!(matches!(
            encode_scene(&[], &[Tensor::eye(2)]),
            Err(VlqaError::Precondition(_))
        ));
    }

    #[test]
    fn bad_bbox_rejected() {
        let mut r = region(0, vec![vec![1.0]]);
        r.bbox = [0.5, 0.1, 0.2, 0.3];
        assert!(r.validate(&[1]).is_err());
    }
}

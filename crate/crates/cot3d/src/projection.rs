//! Multi-projector module g_proj mapping shape features into the shared
//! text-compatible space: local, global and position branches fused by
//! concat + linear, then normalized so cosine similarity is a dot product.

use rand::Rng;

use crate::encoders::{ModelConfig, ShapeFeatures};
use crate::error::Result;
use crate::geometry::{fourier_encode, Point3};
use crate::tensorkit::{uniform_init, ParamLeaves, ParamSet, Tape, Tensor, Var};

/// Parameter indices of the projection module under the `proj.` prefix.
#[derive(Debug, Clone)]
pub struct Projection {
    pub cfg: ModelConfig,
    local_w1: usize,
    local_b1: usize,
    local_w2: usize,
    local_b2: usize,
    global_w1: usize,
    global_b1: usize,
    global_w2: usize,
    global_b2: usize,
    pos_w1: usize,
    pos_b1: usize,
    pos_w2: usize,
    pos_b2: usize,
    fuse_w: usize,
    fuse_b: usize,
}

impl Projection {
    pub fn register<R: Rng>(params: &mut ParamSet, cfg: &ModelConfig, rng: &mut R) -> Self {
        let h = cfg.local_dim;
        let d = cfg.global_dim;
        let dp = cfg.shared_dim;
        let pf = 6 * cfg.n_freq;
        Self {
            cfg: cfg.clone(),
            local_w1: params.add("proj.local.w1", uniform_init(rng, h, dp, h)),
            local_b1: params.add("proj.local.b1", Tensor::zeros(1, dp)),
            local_w2: params.add("proj.local.w2", uniform_init(rng, dp, dp, dp)),
            local_b2: params.add("proj.local.b2", Tensor::zeros(1, dp)),
            global_w1: params.add("proj.global.w1", uniform_init(rng, d, dp, d)),
            global_b1: params.add("proj.global.b1", Tensor::zeros(1, dp)),
            global_w2: params.add("proj.global.w2", uniform_init(rng, dp, dp, dp)),
            global_b2: params.add("proj.global.b2", Tensor::zeros(1, dp)),
            pos_w1: params.add("proj.pos.w1", uniform_init(rng, pf, dp, pf)),
            pos_b1: params.add("proj.pos.b1", Tensor::zeros(1, dp)),
            pos_w2: params.add("proj.pos.w2", uniform_init(rng, dp, dp, dp)),
            pos_b2: params.add("proj.pos.b2", Tensor::zeros(1, dp)),
            fuse_w: params.add("proj.fuse.w", uniform_init(rng, 3 * dp, dp, 3 * dp)),
            fuse_b: params.add("proj.fuse.b", Tensor::zeros(1, dp)),
        }
    }

    fn mlp(
        &self,
        tape: &mut Tape,
        params: &ParamSet,
        leaves: &mut ParamLeaves,
        x: Var,
        w1: usize,
        b1: usize,
        w2: usize,
        b2: usize,
    ) -> Result<Var> {
        let w1 = leaves.get(tape, params, w1);
        let b1 = leaves.get(tape, params, b1);
        let w2 = leaves.get(tape, params, w2);
        let b2 = leaves.get(tape, params, b2);
        let h = tape.linear(x, w1, b1)?;
        let h = tape.gelu(h);
        tape.linear(h, w2, b2)
    }

    /// Mean Fourier feature row for the keypoint coordinates.
    fn pos_features(&self, key_coords: &[Point3]) -> Result<Tensor> {
        let feats = fourier_encode(key_coords, self.cfg.n_freq)?;
        Tensor::from_rows(&feats)
    }

    /// Differentiable projection from tape-resident shape features.
    pub fn forward(
        &self,
        tape: &mut Tape,
        params: &ParamSet,
        leaves: &mut ParamLeaves,
        local: Var,
        key_coords: &[Point3],
        global: Var,
    ) -> Result<Var> {
        let local_mean = tape.mean_rows(local);
        let u_local = self.mlp(
            tape, params, leaves, local_mean,
            self.local_w1, self.local_b1, self.local_w2, self.local_b2,
        )?;
        let u_global = self.mlp(
            tape, params, leaves, global,
            self.global_w1, self.global_b1, self.global_w2, self.global_b2,
        )?;
        let pos = tape.leaf(self.pos_features(key_coords)?);
        let pos_mean = tape.mean_rows(pos);
        let u_pos = self.mlp(
            tape, params, leaves, pos_mean,
            self.pos_w1, self.pos_b1, self.pos_w2, self.pos_b2,
        )?;
        let fused = tape.concat_cols(&[u_local, u_global, u_pos])?;
        let fw = leaves.get(tape, params, self.fuse_w);
        let fb = leaves.get(tape, params, self.fuse_b);
        let z = tape.linear(fused, fw, fb)?;
        tape.l2_normalize_rows(z)
    }

    /// Non-differentiable projection of plain shape features.
    pub fn project(&self, params: &ParamSet, sf: &ShapeFeatures) -> Result<Tensor> {
        let mut tape = Tape::new();
        let mut leaves = ParamLeaves::new(params);
        let local = tape.leaf(sf.local.clone());
        let global = tape.leaf(sf.global_e3d.clone());
        let z = self.forward(&mut tape, params, &mut leaves, local, &sf.key_coords, global)?;
        Ok(tape.value(z).clone())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::CotError;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small_cfg() -> ModelConfig {
        ModelConfig {
            keypoints: 4,
            local_dim: 8,
            global_dim: 12,
            shared_dim: 6,
            n_freq: 2,
            ..ModelConfig::default()
        }
    }

    fn build() -> (ParamSet, Projection) {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let mut params = ParamSet::new();
        let proj = Projection::register(&mut params, &small_cfg(), &mut rng);
        (params, proj)
    }

    fn random_features(rng: &mut ChaCha8Rng) -> ShapeFeatures {
        let local = Tensor::new(4, 8, (0..32).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
        let global = Tensor::new(1, 12, (0..12).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
        let key_coords = (0..4)
            .map(|_| {
                [
                    rng.gen_range(-1.0..1.0),
                    rng.gen_range(-1.0..1.0),
                    rng.gen_range(-1.0..1.0),
                ]
            })
            .collect();
        ShapeFeatures {
            local,
            key_coords,
            global_e3d: global,
        }
    }

    #[test]
    fn output_is_unit_norm() {
        let (params, proj) = build();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let sf = random_features(&mut rng);
        let z = proj.project(&params, &sf).unwrap();
        let norm: f64 = z.data().iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!((norm - 1.0).abs() < 1e-9);
        assert_eq!(z.cols(), 6);
    }

    #[test]
    fn zero_fusion_input_is_degenerate() {
        let (mut params, proj) = build();
        // zero out every projection weight (biases start at zero): the
        // fusion input becomes exactly zero and normalization must fail
        for block in params.blocks_mut() {
            for v in block.value.data_mut() {
                *v = 0.0;
            }
        }
        let sf = ShapeFeatures {
            local: Tensor::zeros(4, 8),
            key_coords: vec![[0.0; 3]; 4],
            global_e3d: Tensor::zeros(1, 12),
        };
        let err = proj.project(&params, &sf).unwrap_err();
        assert!(matches!(err, CotError::DegenerateVector { .. }));
    }

    #[test]
    fn no_dead_branch() {
        let (params, proj) = build();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let sf = random_features(&mut rng);
        let base = proj.project(&params, &sf).unwrap();

        let zero_local = ShapeFeatures {
            local: Tensor::zeros(4, 8),
            ..sf.clone()
        };
        let zero_global = ShapeFeatures {
            global_e3d: Tensor::zeros(1, 12),
            ..sf.clone()
        };
        let zero_pos = ShapeFeatures {
            key_coords: vec![[0.0; 3]; 4],
            ..sf.clone()
        };
        for variant in [zero_local, zero_global, zero_pos] {
            let z = proj.project(&params, &variant).unwrap();
            let max_diff = z
                .data()
                .iter()
                .zip(base.data())
                .map(|(a, b)| (a - b).abs())
                .fold(0.0f64, f64::max);
            assert!(max_diff > 1e-6, "branch had no effect (diff {max_diff})");
        }
    }

    #[test]
    fn deterministic_and_pure() {
        let (params, proj) = build();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let sf = random_features(&mut rng);
        let a = proj.project(&params, &sf).unwrap();
        let b = proj.project(&params, &sf).unwrap();
        assert_eq!(a.data(), b.data());
    }
}

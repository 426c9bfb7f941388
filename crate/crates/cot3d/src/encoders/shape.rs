//! Shape encoder: FPS keypoints, kNN grouping, shared per-point MLP,
//! per-group max-pool, and a global MLP producing e_3D.

use rand::Rng;

use super::ModelConfig;
use crate::error::{CotError, Result};
use crate::geometry::{farthest_point_sample, knn_group, Point3, PointCloud};
use crate::tensorkit::{uniform_init, ParamLeaves, ParamSet, Tape, Tensor, Var};

/// Plain-tensor view of one encoded shape.
#[derive(Debug, Clone)]
pub struct ShapeFeatures {
    /// M×h per-keypoint local features.
    pub local: Tensor,
    /// Keypoint coordinates, M rows.
    pub key_coords: Vec<Point3>,
    /// Global embedding e_3D, 1×d.
    pub global_e3d: Tensor,
}

/// Tape handles for one encoded shape, for building a differentiable loss.
pub struct ShapeForward {
    pub local: Var,
    pub key_coords: Vec<Point3>,
    pub global: Var,
}

/// Parameter indices of the shape encoder inside a shared [`ParamSet`].
#[derive(Debug, Clone)]
pub struct ShapeEncoder {
    pub cfg: ModelConfig,
    point_w1: usize,
    point_b1: usize,
    point_w2: usize,
    point_b2: usize,
    global_w1: usize,
    global_b1: usize,
    global_w2: usize,
    global_b2: usize,
}

impl ShapeEncoder {
    /// Register all blocks under the `shape.` prefix.
    pub fn register<R: Rng>(params: &mut ParamSet, cfg: &ModelConfig, rng: &mut R) -> Self {
        let h = cfg.local_dim;
        let d = cfg.global_dim;
        Self {
            cfg: cfg.clone(),
            point_w1: params.add("shape.point_mlp.w1", uniform_init(rng, 3, h, 3)),
            point_b1: params.add("shape.point_mlp.b1", Tensor::zeros(1, h)),
            point_w2: params.add("shape.point_mlp.w2", uniform_init(rng, h, h, h)),
            point_b2: params.add("shape.point_mlp.b2", Tensor::zeros(1, h)),
            global_w1: params.add("shape.global_mlp.w1", uniform_init(rng, 2 * h, d, 2 * h)),
            global_b1: params.add("shape.global_mlp.b1", Tensor::zeros(1, d)),
            global_w2: params.add("shape.global_mlp.w2", uniform_init(rng, d, d, d)),
            global_b2: params.add("shape.global_mlp.b2", Tensor::zeros(1, d)),
        }
    }

    /// Differentiable forward pass over an already-normalized cloud.
    ///
    /// FPS starts at the lexicographically smallest point so the result is
    /// invariant to input point order.
    pub fn forward(
        &self,
        tape: &mut Tape,
        params: &ParamSet,
        leaves: &mut ParamLeaves,
        pc: &PointCloud,
    ) -> Result<ShapeForward> {
        let m_keys = self.cfg.keypoints;
        let m_nbrs = self.cfg.neighbors;
        if pc.len() < m_keys || pc.len() < m_nbrs {
            return Err(CotError::Capacity {
                requested: m_keys.max(m_nbrs),
                available: pc.len(),
            });
        }
        let keys = farthest_point_sample(pc, m_keys, pc.canonical_start())?;
        let groups = knn_group(pc, &keys, m_nbrs)?;
        self.forward_grouped(tape, params, leaves, &keys.coords, &groups)
    }

    /// Forward pass from precomputed kNN groups (the grouping is parameter
    /// free, so trainers may cache it per shape).
    pub fn forward_grouped(
        &self,
        tape: &mut Tape,
        params: &ParamSet,
        leaves: &mut ParamLeaves,
        key_coords: &[Point3],
        groups: &[Vec<Point3>],
    ) -> Result<ShapeForward> {
        let m_keys = self.cfg.keypoints;
        let m_nbrs = self.cfg.neighbors;
        if groups.len() != m_keys || groups.iter().any(|g| g.len() != m_nbrs) {
            return Err(CotError::Config(format!(
                "expected {m_keys} groups of {m_nbrs} neighbors"
            )));
        }
        let mut data = Vec::with_capacity(m_keys * m_nbrs * 3);
        for group in groups {
            for p in group {
                data.extend_from_slice(p);
            }
        }
        let offsets = tape.leaf(Tensor::new(m_keys * m_nbrs, 3, data)?);

        let w1 = leaves.get(tape, params, self.point_w1);
        let b1 = leaves.get(tape, params, self.point_b1);
        let w2 = leaves.get(tape, params, self.point_w2);
        let b2 = leaves.get(tape, params, self.point_b2);
        let h1 = tape.linear(offsets, w1, b1)?;
        let h1 = tape.gelu(h1);
        let h2 = tape.linear(h1, w2, b2)?;
        let h2 = tape.gelu(h2);
        let local = tape.max_pool_groups(h2, m_keys)?;

        let max_pooled = tape.max_pool_groups(local, 1)?;
        let mean_pooled = tape.mean_rows(local);
        let pooled = tape.concat_cols(&[max_pooled, mean_pooled])?;

        let gw1 = leaves.get(tape, params, self.global_w1);
        let gb1 = leaves.get(tape, params, self.global_b1);
        let gw2 = leaves.get(tape, params, self.global_w2);
        let gb2 = leaves.get(tape, params, self.global_b2);
        let g1 = tape.linear(pooled, gw1, gb1)?;
        let g1 = tape.gelu(g1);
        let global = tape.linear(g1, gw2, gb2)?;

        Ok(ShapeForward {
            local,
            key_coords: key_coords.to_vec(),
            global,
        })
    }

    /// Non-differentiable convenience: plain ShapeFeatures for evaluation.
    pub fn features(&self, params: &ParamSet, pc: &PointCloud) -> Result<ShapeFeatures> {
        let mut tape = Tape::new();
        let mut leaves = ParamLeaves::new(params);
        let fwd = self.forward(&mut tape, params, &mut leaves, pc)?;
        Ok(ShapeFeatures {
            local: tape.value(fwd.local).clone(),
            key_coords: fwd.key_coords,
            global_e3d: tape.value(fwd.global).clone(),
        })
    }
}

//! Minimal differentiable compute core: dense f64 tensors, a reverse-mode
//! tape over a small fixed op set, and a finite-difference gradient checker.

pub mod gradcheck;
pub mod tape;

pub use gradcheck::grad_check;
pub use tape::{Tape, Var};

use crate::error::{CotError, Result};
use rand::Rng;

/// Dense row-major 2-D tensor of 64-bit floats.
///
/// Everything learned in this crate is 2-D; vectors are `1×d` rows and
/// scalars are `1×1`.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(CotError::ShapeMismatch {
                op: "Tensor::new",
                lhs: vec![rows, cols],
                rhs: vec![data.len()],
            });
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(CotError::NonFinite("Tensor::new".into()));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn scalar(v: f64) -> Self {
        Self {
            rows: 1,
            cols: 1,
            data: vec![v],
        }
    }

    pub fn row(data: Vec<f64>) -> Self {
        Self {
            rows: 1,
            cols: data.len(),
            data,
        }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let r = rows.len();
        let c = rows.first().map(|x| x.len()).unwrap_or(0);
        let mut data = Vec::with_capacity(r * c);
        for row in rows {
            if row.len() != c {
                return Err(CotError::ShapeMismatch {
                    op: "Tensor::from_rows",
                    lhs: vec![c],
                    rhs: vec![row.len()],
                });
            }
            data.extend_from_slice(row);
        }
        Tensor::new(r, c, data)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    pub fn row_slice(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn same_shape(&self, other: &Tensor) -> bool {
        self.rows == other.rows && self.cols == other.cols
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// Seeded `uniform(-1/sqrt(fan_in), +1/sqrt(fan_in))` layer initialization.
pub fn uniform_init<R: Rng>(rng: &mut R, rows: usize, cols: usize, fan_in: usize) -> Tensor {
    let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
    let data = (0..rows * cols)
        .map(|_| rng.gen_range(-bound..bound))
        .collect();
    Tensor { rows, cols, data }
}

/// A named parameter with its gradient accumulator.
///
/// `trainable = false` freezes the block: optimizer steps must leave the
/// value bit-identical.
#[derive(Debug, Clone)]
pub struct ParamBlock {
    pub name: String,
    pub value: Tensor,
    pub grad: Tensor,
    pub trainable: bool,
}

impl ParamBlock {
    pub fn new(name: impl Into<String>, value: Tensor) -> Self {
        let grad = Tensor::zeros(value.rows(), value.cols());
        Self {
            name: name.into(),
            value,
            grad,
            trainable: true,
        }
    }

    pub fn zero_grad(&mut self) {
        for g in self.grad.data_mut() {
            *g = 0.0;
        }
    }
}

/// Ordered collection of parameter blocks shared by one model instance.
///
/// Registration order is fixed, which keeps optimizer state, checkpoints
/// and freezing audits deterministic.
#[derive(Debug, Clone, Default)]
pub struct ParamSet {
    blocks: Vec<ParamBlock>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> usize {
        let name = name.into();
        assert!(
            self.index_of(&name).is_none(),
            "duplicate param name {name}"
        );
        self.blocks.push(ParamBlock::new(name, value));
        self.blocks.len() - 1
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.blocks.iter().position(|b| b.name == name)
    }

    pub fn get(&self, idx: usize) -> &ParamBlock {
        &self.blocks[idx]
    }

    pub fn get_mut(&mut self, idx: usize) -> &mut ParamBlock {
        &mut self.blocks[idx]
    }

    pub fn blocks(&self) -> &[ParamBlock] {
        &self.blocks
    }

    pub fn blocks_mut(&mut self) -> &mut [ParamBlock] {
        &mut self.blocks
    }

    pub fn len(&self) -> usize {
        self.blocks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }

    pub fn zero_grads(&mut self) {
        for b in &mut self.blocks {
            b.zero_grad();
        }
    }

    /// Set the trainable flag on every block whose name starts with `prefix`.
    pub fn set_trainable_prefix(&mut self, prefix: &str, trainable: bool) {
        for b in &mut self.blocks {
            if b.name.starts_with(prefix) {
                b.trainable = trainable;
            }
        }
    }
}

/// One tape leaf per parameter block, created lazily on first use.
///
/// All forward passes on the same tape share leaves, so batch gradients
/// accumulate correctly with a single [`ParamLeaves::accumulate`] call
/// after `backward`.
pub struct ParamLeaves {
    vars: Vec<Option<Var>>,
}

impl ParamLeaves {
    pub fn new(params: &ParamSet) -> Self {
        Self {
            vars: vec![None; params.len()],
        }
    }

    pub fn get(&mut self, tape: &mut Tape, params: &ParamSet, idx: usize) -> Var {
        match self.vars[idx] {
            Some(v) => v,
            None => {
                let v = tape.leaf(params.get(idx).value.clone());
                self.vars[idx] = Some(v);
                v
            }
        }
    }

    /// Add the tape gradients of every used leaf into the matching block's
    /// grad accumulator.
    pub fn accumulate(&self, tape: &Tape, params: &mut ParamSet) {
        for (idx, var) in self.vars.iter().enumerate() {
            if let Some(v) = var {
                let g = tape.grad(*v);
                let block = params.get_mut(idx);
                for (a, b) in block.grad.data_mut().iter_mut().zip(g.data()) {
                    *a += b;
                }
            }
        }
    }
}

//! Reverse-mode automatic differentiation over a Wengert list.
//!
//! The op set is exactly what the fixed model topologies in this crate
//! need; there is no dynamic graph beyond that.

use super::Tensor;
use crate::error::{CotError, Result};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul { a: usize, b: usize },
    Add { a: usize, b: usize },
    Sub { a: usize, b: usize },
    AddRowBroadcast { x: usize, bias: usize },
    AddConst { x: usize },
    Scale { x: usize, c: f64 },
    MulScalarVar { x: usize, s: usize },
    Gelu { x: usize },
    Exp { x: usize },
    Neg { x: usize },
    L2NormalizeRows { x: usize },
    SoftmaxRowsMasked { x: usize, mask: Vec<bool> },
    ConcatCols { parts: Vec<usize> },
    ConcatRows { parts: Vec<usize> },
    MeanRows { x: usize },
    MaskedMeanRows { x: usize, mask: Vec<bool> },
    MaxPoolGroups { x: usize, groups: usize },
    GatherRows { table: usize, idx: Vec<usize> },
    Transpose { x: usize },
    LogSumExpRows { x: usize },
    Diag { x: usize },
    MeanAll { x: usize },
}

struct Node {
    value: Tensor,
    op: Op,
}

/// Single-use computation tape. Build the forward graph, call
/// [`Tape::backward`] once, then read gradients with [`Tape::grad`].
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    grads: Vec<Option<Tensor>>,
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

fn gelu_scalar(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + GELU_A * x * x * x)).tanh())
}

fn gelu_grad_scalar(x: f64) -> f64 {
    let u = GELU_C * (x + GELU_A * x * x * x);
    let t = u.tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * x * x)
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn leaf(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ar, ac) = self.value(a).shape();
        let (br, bc) = self.value(b).shape();
        if ac != br {
            return Err(CotError::ShapeMismatch {
                op: "matmul",
                lhs: vec![ar, ac],
                rhs: vec![br, bc],
            });
        }
        let mut out = Tensor::zeros(ar, bc);
        {
            let av = self.value(a);
            let bv = self.value(b);
            for i in 0..ar {
                for k in 0..ac {
                    let aik = av.get(i, k);
                    if aik == 0.0 {
                        continue;
                    }
                    for j in 0..bc {
                        let cur = out.get(i, j);
                        out.set(i, j, cur + aik * bv.get(k, j));
                    }
                }
            }
        }
        Ok(self.push(out, Op::MatMul { a: a.0, b: b.0 }))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let av = self.value(a);
        let bv = self.value(b);
        if !av.same_shape(bv) {
            return Err(CotError::ShapeMismatch {
                op: "add",
                lhs: vec![av.rows(), av.cols()],
                rhs: vec![bv.rows(), bv.cols()],
            });
        }
        let data = av
            .data()
            .iter()
            .zip(bv.data())
            .map(|(x, y)| x + y)
            .collect();
        let out = Tensor::new(av.rows(), av.cols(), data)?;
        Ok(self.push(out, Op::Add { a: a.0, b: b.0 }))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let av = self.value(a);
        let bv = self.value(b);
        if !av.same_shape(bv) {
            return Err(CotError::ShapeMismatch {
                op: "sub",
                lhs: vec![av.rows(), av.cols()],
                rhs: vec![bv.rows(), bv.cols()],
            });
        }
        let data = av
            .data()
            .iter()
            .zip(bv.data())
            .map(|(x, y)| x - y)
            .collect();
        let out = Tensor::new(av.rows(), av.cols(), data)?;
        Ok(self.push(out, Op::Sub { a: a.0, b: b.0 }))
    }

    /// `y[i, :] = x[i, :] + bias[0, :]`
    pub fn add_row_broadcast(&mut self, x: Var, bias: Var) -> Result<Var> {
        let xv = self.value(x);
        let bv = self.value(bias);
        if bv.rows() != 1 || bv.cols() != xv.cols() {
            return Err(CotError::ShapeMismatch {
                op: "add_row_broadcast",
                lhs: vec![xv.rows(), xv.cols()],
                rhs: vec![bv.rows(), bv.cols()],
            });
        }
        let mut out = xv.clone();
        for r in 0..out.rows() {
            for c in 0..out.cols() {
                let v = out.get(r, c) + bv.get(0, c);
                out.set(r, c, v);
            }
        }
        Ok(self.push(out, Op::AddRowBroadcast { x: x.0, bias: bias.0 }))
    }

    /// Add a constant (non-differentiated) tensor, e.g. positional encodings.
    pub fn add_const(&mut self, x: Var, c: &Tensor) -> Result<Var> {
        let xv = self.value(x);
        if !xv.same_shape(c) {
            return Err(CotError::ShapeMismatch {
                op: "add_const",
                lhs: vec![xv.rows(), xv.cols()],
                rhs: vec![c.rows(), c.cols()],
            });
        }
        let data = xv
            .data()
            .iter()
            .zip(c.data())
            .map(|(a, b)| a + b)
            .collect();
        let out = Tensor::new(xv.rows(), xv.cols(), data)?;
        Ok(self.push(out, Op::AddConst { x: x.0 }))
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        let xv = self.value(x);
        let data = xv.data().iter().map(|v| v * c).collect();
        let out = Tensor {
            rows: xv.rows(),
            cols: xv.cols(),
            data,
        };
        self.push(out, Op::Scale { x: x.0, c })
    }

    /// Elementwise multiply by a `1×1` scalar node.
    pub fn mul_scalar_var(&mut self, x: Var, s: Var) -> Result<Var> {
        let sv = self.value(s);
        if sv.shape() != (1, 1) {
            return Err(CotError::ShapeMismatch {
                op: "mul_scalar_var",
                lhs: vec![1, 1],
                rhs: vec![sv.rows(), sv.cols()],
            });
        }
        let sc = sv.get(0, 0);
        let xv = self.value(x);
        let data = xv.data().iter().map(|v| v * sc).collect();
        let out = Tensor {
            rows: xv.rows(),
            cols: xv.cols(),
            data,
        };
        Ok(self.push(out, Op::MulScalarVar { x: x.0, s: s.0 }))
    }

    /// Elementwise tanh-approximation GELU.
    pub fn gelu(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let data = xv.data().iter().map(|&v| gelu_scalar(v)).collect();
        let out = Tensor {
            rows: xv.rows(),
            cols: xv.cols(),
            data,
        };
        self.push(out, Op::Gelu { x: x.0 })
    }

    pub fn exp(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let data = xv.data().iter().map(|v| v.exp()).collect();
        let out = Tensor {
            rows: xv.rows(),
            cols: xv.cols(),
            data,
        };
        self.push(out, Op::Exp { x: x.0 })
    }

    pub fn neg(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let data = xv.data().iter().map(|v| -v).collect();
        let out = Tensor {
            rows: xv.rows(),
            cols: xv.cols(),
            data,
        };
        self.push(out, Op::Neg { x: x.0 })
    }

    /// Normalize every row to unit Euclidean norm.
    pub fn l2_normalize_rows(&mut self, x: Var) -> Result<Var> {
        const MIN_NORM: f64 = 1e-12;
        let xv = self.value(x);
        let mut out = xv.clone();
        for r in 0..xv.rows() {
            let norm = xv.row_slice(r).iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm <= MIN_NORM {
                return Err(CotError::DegenerateVector {
                    norm,
                    min: MIN_NORM,
                });
            }
            for c in 0..xv.cols() {
                out.set(r, c, xv.get(r, c) / norm);
            }
        }
        Ok(self.push(out, Op::L2NormalizeRows { x: x.0 }))
    }

    /// Row-wise softmax over unmasked columns; masked columns get probability 0.
    pub fn softmax_rows_masked(&mut self, x: Var, mask: &[bool]) -> Result<Var> {
        let xv = self.value(x);
        if mask.len() != xv.cols() {
            return Err(CotError::ShapeMismatch {
                op: "softmax_rows_masked",
                lhs: vec![xv.rows(), xv.cols()],
                rhs: vec![mask.len()],
            });
        }
        if !mask.iter().any(|&m| m) {
            return Err(CotError::Data("softmax over fully masked row".into()));
        }
        let mut out = Tensor::zeros(xv.rows(), xv.cols());
        for r in 0..xv.rows() {
            let row = xv.row_slice(r);
            let max = row
                .iter()
                .zip(mask)
                .filter(|(_, &m)| m)
                .map(|(v, _)| *v)
                .fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for c in 0..xv.cols() {
                if mask[c] {
                    let e = (row[c] - max).exp();
                    out.set(r, c, e);
                    sum += e;
                }
            }
            for c in 0..xv.cols() {
                out.set(r, c, out.get(r, c) / sum);
            }
        }
        Ok(self.push(
            out,
            Op::SoftmaxRowsMasked {
                x: x.0,
                mask: mask.to_vec(),
            },
        ))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(CotError::Data("concat_cols of zero parts".into()));
        }
        let rows = self.value(parts[0]).rows();
        let mut cols = 0;
        for &p in parts {
            let pv = self.value(p);
            if pv.rows() != rows {
                return Err(CotError::ShapeMismatch {
                    op: "concat_cols",
                    lhs: vec![rows],
                    rhs: vec![pv.rows()],
                });
            }
            cols += pv.cols();
        }
        let mut out = Tensor::zeros(rows, cols);
        let mut off = 0;
        for &p in parts {
            let pv = self.value(p).clone();
            for r in 0..rows {
                for c in 0..pv.cols() {
                    out.set(r, off + c, pv.get(r, c));
                }
            }
            off += pv.cols();
        }
        Ok(self.push(
            out,
            Op::ConcatCols {
                parts: parts.iter().map(|v| v.0).collect(),
            },
        ))
    }

    /// Stack parts vertically; all parts must share a column count.
    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(CotError::Data("concat_rows of zero parts".into()));
        }
        let cols = self.value(parts[0]).cols();
        let mut rows = 0;
        for &p in parts {
            let pv = self.value(p);
            if pv.cols() != cols {
                return Err(CotError::ShapeMismatch {
                    op: "concat_rows",
                    lhs: vec![cols],
                    rhs: vec![pv.cols()],
                });
            }
            rows += pv.rows();
        }
        let mut data = Vec::with_capacity(rows * cols);
        for &p in parts {
            data.extend_from_slice(self.value(p).data());
        }
        let out = Tensor { rows, cols, data };
        Ok(self.push(
            out,
            Op::ConcatRows {
                parts: parts.iter().map(|v| v.0).collect(),
            },
        ))
    }

    /// `[n×d] -> [1×d]` mean over rows.
    pub fn mean_rows(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let n = xv.rows() as f64;
        let mut out = Tensor::zeros(1, xv.cols());
        for r in 0..xv.rows() {
            for c in 0..xv.cols() {
                out.set(0, c, out.get(0, c) + xv.get(r, c) / n);
            }
        }
        self.push(out, Op::MeanRows { x: x.0 })
    }

    /// Mean over the rows where `mask` is true.
    pub fn masked_mean_rows(&mut self, x: Var, mask: &[bool]) -> Result<Var> {
        let xv = self.value(x);
        if mask.len() != xv.rows() {
            return Err(CotError::ShapeMismatch {
                op: "masked_mean_rows",
                lhs: vec![xv.rows()],
                rhs: vec![mask.len()],
            });
        }
        let n = mask.iter().filter(|&&m| m).count();
        if n == 0 {
            return Err(CotError::Data("masked_mean_rows over empty mask".into()));
        }
        let mut out = Tensor::zeros(1, xv.cols());
        for r in 0..xv.rows() {
            if mask[r] {
                for c in 0..xv.cols() {
                    out.set(0, c, out.get(0, c) + xv.get(r, c) / n as f64);
                }
            }
        }
        Ok(self.push(
            out,
            Op::MaskedMeanRows {
                x: x.0,
                mask: mask.to_vec(),
            },
        ))
    }

    /// `[(g·m)×d] -> [g×d]` max over each consecutive block of `m` rows.
    pub fn max_pool_groups(&mut self, x: Var, groups: usize) -> Result<Var> {
        let xv = self.value(x);
        if groups == 0 || xv.rows() % groups != 0 {
            return Err(CotError::ShapeMismatch {
                op: "max_pool_groups",
                lhs: vec![xv.rows()],
                rhs: vec![groups],
            });
        }
        let m = xv.rows() / groups;
        let mut out = Tensor::zeros(groups, xv.cols());
        for g in 0..groups {
            for c in 0..xv.cols() {
                let mut best = f64::NEG_INFINITY;
                for i in 0..m {
                    best = best.max(xv.get(g * m + i, c));
                }
                out.set(g, c, best);
            }
        }
        Ok(self.push(out, Op::MaxPoolGroups { x: x.0, groups }))
    }

    /// Row gather (embedding lookup); backward scatter-adds into the table.
    pub fn gather_rows(&mut self, table: Var, idx: &[usize]) -> Result<Var> {
        let tv = self.value(table);
        for &i in idx {
            if i >= tv.rows() {
                return Err(CotError::Range(format!(
                    "gather index {i} out of range 0..{}",
                    tv.rows()
                )));
            }
        }
        let mut out = Tensor::zeros(idx.len(), tv.cols());
        for (r, &i) in idx.iter().enumerate() {
            for c in 0..tv.cols() {
                out.set(r, c, tv.get(i, c));
            }
        }
        Ok(self.push(
            out,
            Op::GatherRows {
                table: table.0,
                idx: idx.to_vec(),
            },
        ))
    }

    pub fn transpose(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let mut out = Tensor::zeros(xv.cols(), xv.rows());
        for r in 0..xv.rows() {
            for c in 0..xv.cols() {
                out.set(c, r, xv.get(r, c));
            }
        }
        self.push(out, Op::Transpose { x: x.0 })
    }

    /// `[n×m] -> [n×1]` log-sum-exp per row.
    pub fn logsumexp_rows(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let mut out = Tensor::zeros(xv.rows(), 1);
        for r in 0..xv.rows() {
            let row = xv.row_slice(r);
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let sum: f64 = row.iter().map(|v| (v - max).exp()).sum();
            out.set(r, 0, max + sum.ln());
        }
        self.push(out, Op::LogSumExpRows { x: x.0 })
    }

    /// `[n×n] -> [n×1]` diagonal extraction.
    pub fn diag(&mut self, x: Var) -> Result<Var> {
        let xv = self.value(x);
        if xv.rows() != xv.cols() {
            return Err(CotError::ShapeMismatch {
                op: "diag",
                lhs: vec![xv.rows()],
                rhs: vec![xv.cols()],
            });
        }
        let mut out = Tensor::zeros(xv.rows(), 1);
        for r in 0..xv.rows() {
            out.set(r, 0, xv.get(r, r));
        }
        Ok(self.push(out, Op::Diag { x: x.0 }))
    }

    /// Mean over all entries, producing a `1×1` scalar.
    pub fn mean_all(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let n = xv.len() as f64;
        let s: f64 = xv.data().iter().sum();
        let out = Tensor::scalar(s / n);
        self.push(out, Op::MeanAll { x: x.0 })
    }

    /// `y = x·W + b` with broadcasted bias.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let xw = self.matmul(x, w)?;
        self.add_row_broadcast(xw, b)
    }

    /// Run backpropagation from a scalar loss node.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        let lv = self.value(loss);
        if lv.shape() != (1, 1) {
            return Err(CotError::ShapeMismatch {
                op: "backward",
                lhs: vec![1, 1],
                rhs: vec![lv.rows(), lv.cols()],
            });
        }
        if !lv.get(0, 0).is_finite() {
            return Err(CotError::NonFinite("loss".into()));
        }
        self.grads = self.nodes.iter().map(|_| None).collect();
        self.grads[loss.0] = Some(Tensor::scalar(1.0));

        for i in (0..self.nodes.len()).rev() {
            let g = match self.grads[i].clone() {
                Some(g) => g,
                None => continue,
            };
            let op = self.nodes[i].op.clone();
            match op {
                Op::Leaf => {}
                Op::MatMul { a, b } => {
                    // dA = g Bᵀ ; dB = Aᵀ g
                    let av = self.nodes[a].value.clone();
                    let bv = self.nodes[b].value.clone();
                    let mut da = Tensor::zeros(av.rows(), av.cols());
                    for r in 0..da.rows() {
                        for c in 0..da.cols() {
                            let mut s = 0.0;
                            for j in 0..bv.cols() {
                                s += g.get(r, j) * bv.get(c, j);
                            }
                            da.set(r, c, s);
                        }
                    }
                    let mut db = Tensor::zeros(bv.rows(), bv.cols());
                    for r in 0..db.rows() {
                        for c in 0..db.cols() {
                            let mut s = 0.0;
                            for j in 0..av.rows() {
                                s += av.get(j, r) * g.get(j, c);
                            }
                            db.set(r, c, s);
                        }
                    }
                    self.accumulate(a, da);
                    self.accumulate(b, db);
                }
                Op::Add { a, b } => {
                    self.accumulate(a, g.clone());
                    self.accumulate(b, g);
                }
                Op::Sub { a, b } => {
                    let neg: Vec<f64> = g.data().iter().map(|v| -v).collect();
                    let ng = Tensor {
                        rows: g.rows(),
                        cols: g.cols(),
                        data: neg,
                    };
                    self.accumulate(a, g);
                    self.accumulate(b, ng);
                }
                Op::AddRowBroadcast { x, bias } => {
                    let mut db = Tensor::zeros(1, g.cols());
                    for r in 0..g.rows() {
                        for c in 0..g.cols() {
                            db.set(0, c, db.get(0, c) + g.get(r, c));
                        }
                    }
                    self.accumulate(x, g);
                    self.accumulate(bias, db);
                }
                Op::AddConst { x } => self.accumulate(x, g),
                Op::Scale { x, c } => {
                    let data = g.data().iter().map(|v| v * c).collect();
                    let dg = Tensor {
                        rows: g.rows(),
                        cols: g.cols(),
                        data,
                    };
                    self.accumulate(x, dg);
                }
                Op::MulScalarVar { x, s } => {
                    let sc = self.nodes[s].value.get(0, 0);
                    let xv = self.nodes[x].value.clone();
                    let dx_data = g.data().iter().map(|v| v * sc).collect();
                    let dx = Tensor {
                        rows: g.rows(),
                        cols: g.cols(),
                        data: dx_data,
                    };
                    let ds: f64 = g.data().iter().zip(xv.data()).map(|(a, b)| a * b).sum();
                    self.accumulate(x, dx);
                    self.accumulate(s, Tensor::scalar(ds));
                }
                Op::Gelu { x } => {
                    let xv = self.nodes[x].value.clone();
                    let data = g
                        .data()
                        .iter()
                        .zip(xv.data())
                        .map(|(gv, &v)| gv * gelu_grad_scalar(v))
                        .collect();
                    let dx = Tensor {
                        rows: g.rows(),
                        cols: g.cols(),
                        data,
                    };
                    self.accumulate(x, dx);
                }
                Op::Exp { x } => {
                    let yv = self.nodes[i].value.clone();
                    let data = g
                        .data()
                        .iter()
                        .zip(yv.data())
                        .map(|(gv, yv)| gv * yv)
                        .collect();
                    let dx = Tensor {
                        rows: g.rows(),
                        cols: g.cols(),
                        data,
                    };
                    self.accumulate(x, dx);
                }
                Op::Neg { x } => {
                    let data = g.data().iter().map(|v| -v).collect();
                    let dx = Tensor {
                        rows: g.rows(),
                        cols: g.cols(),
                        data,
                    };
                    self.accumulate(x, dx);
                }
                Op::L2NormalizeRows { x } => {
                    let xv = self.nodes[x].value.clone();
                    let yv = self.nodes[i].value.clone();
                    let mut dx = Tensor::zeros(xv.rows(), xv.cols());
                    for r in 0..xv.rows() {
                        let norm = xv.row_slice(r).iter().map(|v| v * v).sum::<f64>().sqrt();
                        let dot: f64 = yv
                            .row_slice(r)
                            .iter()
                            .zip(g.row_slice(r))
                            .map(|(a, b)| a * b)
                            .sum();
                        for c in 0..xv.cols() {
                            dx.set(r, c, (g.get(r, c) - yv.get(r, c) * dot) / norm);
                        }
                    }
                    self.accumulate(x, dx);
                }
                Op::SoftmaxRowsMasked { x, mask } => {
                    let yv = self.nodes[i].value.clone();
                    let mut dx = Tensor::zeros(yv.rows(), yv.cols());
                    for r in 0..yv.rows() {
                        let dot: f64 = (0..yv.cols())
                            .filter(|&c| mask[c])
                            .map(|c| yv.get(r, c) * g.get(r, c))
                            .sum();
                        for c in 0..yv.cols() {
                            if mask[c] {
                                dx.set(r, c, yv.get(r, c) * (g.get(r, c) - dot));
                            }
                        }
                    }
                    self.accumulate(x, dx);
                }
                Op::ConcatCols { parts } => {
                    let mut off = 0;
                    for p in parts {
                        let pc = self.nodes[p].value.cols();
                        let pr = self.nodes[p].value.rows();
                        let mut dp = Tensor::zeros(pr, pc);
                        for r in 0..pr {
                            for c in 0..pc {
                                dp.set(r, c, g.get(r, off + c));
                            }
                        }
                        off += pc;
                        self.accumulate(p, dp);
                    }
                }
                Op::ConcatRows { parts } => {
                    let mut off = 0;
                    for p in parts {
                        let pr = self.nodes[p].value.rows();
                        let pc = self.nodes[p].value.cols();
                        let mut dp = Tensor::zeros(pr, pc);
                        for r in 0..pr {
                            for c in 0..pc {
                                dp.set(r, c, g.get(off + r, c));
                            }
                        }
                        off += pr;
                        self.accumulate(p, dp);
                    }
                }
                Op::MeanRows { x } => {
                    let xv = &self.nodes[x].value;
                    let (rows, cols) = xv.shape();
                    let mut dx = Tensor::zeros(rows, cols);
                    for r in 0..rows {
                        for c in 0..cols {
                            dx.set(r, c, g.get(0, c) / rows as f64);
                        }
                    }
                    self.accumulate(x, dx);
                }
                Op::MaskedMeanRows { x, mask } => {
                    let xv = &self.nodes[x].value;
                    let (rows, cols) = xv.shape();
                    let n = mask.iter().filter(|&&m| m).count() as f64;
                    let mut dx = Tensor::zeros(rows, cols);
                    for r in 0..rows {
                        if mask[r] {
                            for c in 0..cols {
                                dx.set(r, c, g.get(0, c) / n);
                            }
                        }
                    }
                    self.accumulate(x, dx);
                }
                Op::MaxPoolGroups { x, groups } => {
                    let xv = self.nodes[x].value.clone();
                    let m = xv.rows() / groups;
                    let mut dx = Tensor::zeros(xv.rows(), xv.cols());
                    for gi in 0..groups {
                        for c in 0..xv.cols() {
                            let mut best = f64::NEG_INFINITY;
                            let mut arg = 0;
                            for r in 0..m {
                                let v = xv.get(gi * m + r, c);
                                if v > best {
                                    best = v;
                                    arg = gi * m + r;
                                }
                            }
                            dx.set(arg, c, dx.get(arg, c) + g.get(gi, c));
                        }
                    }
                    self.accumulate(x, dx);
                }
                Op::GatherRows { table, idx } => {
                    let tv = &self.nodes[table].value;
                    let (rows, cols) = tv.shape();
                    let mut dt = Tensor::zeros(rows, cols);
                    for (r, &i2) in idx.iter().enumerate() {
                        for c in 0..cols {
                            dt.set(i2, c, dt.get(i2, c) + g.get(r, c));
                        }
                    }
                    self.accumulate(table, dt);
                }
                Op::Transpose { x } => {
                    let mut dx = Tensor::zeros(g.cols(), g.rows());
                    for r in 0..g.rows() {
                        for c in 0..g.cols() {
                            dx.set(c, r, g.get(r, c));
                        }
                    }
                    self.accumulate(x, dx);
                }
                Op::LogSumExpRows { x } => {
                    let xv = self.nodes[x].value.clone();
                    let mut dx = Tensor::zeros(xv.rows(), xv.cols());
                    for r in 0..xv.rows() {
                        let row = xv.row_slice(r);
                        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                        let sum: f64 = row.iter().map(|v| (v - max).exp()).sum();
                        for c in 0..xv.cols() {
                            dx.set(r, c, g.get(r, 0) * (xv.get(r, c) - max).exp() / sum);
                        }
                    }
                    self.accumulate(x, dx);
                }
                Op::Diag { x } => {
                    let n = self.nodes[x].value.rows();
                    let mut dx = Tensor::zeros(n, n);
                    for r in 0..n {
                        dx.set(r, r, g.get(r, 0));
                    }
                    self.accumulate(x, dx);
                }
                Op::MeanAll { x } => {
                    let xv = &self.nodes[x].value;
                    let (rows, cols) = xv.shape();
                    let scale = g.get(0, 0) / (rows * cols) as f64;
                    let dx = Tensor {
                        rows,
                        cols,
                        data: vec![scale; rows * cols],
                    };
                    self.accumulate(x, dx);
                }
            }
        }
        Ok(())
    }

    fn accumulate(&mut self, idx: usize, contribution: Tensor) {
        match &mut self.grads[idx] {
            Some(existing) => {
                for (e, c) in existing.data.iter_mut().zip(contribution.data()) {
                    *e += c;
                }
            }
            slot @ None => *slot = Some(contribution),
        }
    }

    /// Gradient of the last `backward` loss w.r.t. `v`; zeros if `v` did
    /// not contribute.
    pub fn grad(&self, v: Var) -> Tensor {
        match &self.grads[v.0] {
            Some(g) => g.clone(),
            None => {
                let t = self.value(v);
                Tensor::zeros(t.rows(), t.cols())
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(rows: usize, cols: usize, data: &[f64]) -> Tensor {
        Tensor::new(rows, cols, data.to_vec()).unwrap()
    }

    #[test]
    fn linear_identity_weights() {
        let mut tape = Tape::new();
        let x = tape.leaf(t(1, 2, &[1.0, 2.0]));
        let w = tape.leaf(t(2, 2, &[1.0, 0.0, 0.0, 1.0]));
        let b = tape.leaf(t(1, 2, &[0.0, 0.0]));
        let y = tape.linear(x, w, b).unwrap();
        assert_eq!(tape.value(y).data(), &[1.0, 2.0]);
    }

    #[test]
    fn linear_hand_multiply() {
        let mut tape = Tape::new();
        let x = tape.leaf(t(1, 2, &[1.0, 1.0]));
        let w = tape.leaf(t(2, 2, &[2.0, 0.0, 0.0, 3.0]));
        let b = tape.leaf(t(1, 2, &[1.0, 1.0]));
        let y = tape.linear(x, w, b).unwrap();
        assert_eq!(tape.value(y).data(), &[3.0, 4.0]);
    }

    #[test]
    fn linear_bias_grad_is_ones() {
        let mut tape = Tape::new();
        let x = tape.leaf(t(2, 2, &[1.0, 2.0, 3.0, 4.0]));
        let w = tape.leaf(t(2, 2, &[0.5, -0.5, 0.25, 1.0]));
        let b = tape.leaf(t(1, 2, &[0.1, -0.1]));
        let y = tape.linear(x, w, b).unwrap();
        let m = tape.mean_all(y);
        // sum(y) = 4 * mean(y)
        let s = tape.scale(m, 4.0);
        tape.backward(s).unwrap();
        assert_eq!(tape.grad(b).data(), &[2.0, 2.0]); // two rows each
    }

    #[test]
    fn linear_shape_mismatch_names_both_shapes() {
        let mut tape = Tape::new();
        let x = tape.leaf(t(1, 3, &[1.0, 2.0, 3.0]));
        let w = tape.leaf(t(2, 2, &[1.0, 0.0, 0.0, 1.0]));
        let err = tape.matmul(x, w).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("[1, 3]") && msg.contains("[2, 2]"), "{msg}");
    }

    #[test]
    fn gelu_fixed_points() {
        let mut tape = Tape::new();
        let x = tape.leaf(t(1, 3, &[0.0, 10.0, 1.0]));
        let y = tape.gelu(x);
        let v = tape.value(y).data().to_vec();
        assert_eq!(v[0], 0.0);
        assert!((v[1] - 10.0).abs() < 1e-6);
        // closed-form tanh approximation at x = 1
        let expect = 0.5 * (1.0 + (GELU_C * (1.0 + GELU_A)).tanh());
        assert!((v[2] - expect).abs() < 1e-15);
    }

    #[test]
    fn l2_normalize_345() {
        let mut tape = Tape::new();
        let x = tape.leaf(t(1, 2, &[3.0, 4.0]));
        let y = tape.l2_normalize_rows(x).unwrap();
        let v = tape.value(y).data().to_vec();
        assert!((v[0] - 0.6).abs() < 1e-12 && (v[1] - 0.8).abs() < 1e-12);
    }

    #[test]
    fn l2_normalize_idempotent_on_unit_rows() {
        let mut tape = Tape::new();
        let x = tape.leaf(t(1, 2, &[0.6, 0.8]));
        let y = tape.l2_normalize_rows(x).unwrap();
        let v = tape.value(y).data().to_vec();
        assert!((v[0] - 0.6).abs() < 1e-12 && (v[1] - 0.8).abs() < 1e-12);
    }

    #[test]
    fn l2_normalize_zero_row_errors() {
        let mut tape = Tape::new();
        let x = tape.leaf(t(1, 2, &[0.0, 0.0]));
        assert!(matches!(
            tape.l2_normalize_rows(x),
            Err(CotError::DegenerateVector { .. })
        ));
    }

    #[test]
    fn constant_function_has_zero_grads() {
        let mut tape = Tape::new();
        let x = tape.leaf(t(1, 2, &[1.0, 2.0]));
        let c = tape.leaf(Tensor::scalar(7.0));
        let loss = tape.mean_all(c);
        tape.backward(loss).unwrap();
        assert_eq!(tape.grad(x).data(), &[0.0, 0.0]);
    }

    #[test]
    fn max_pool_routes_grads_to_argmax() {
        let mut tape = Tape::new();
        let x = tape.leaf(t(4, 1, &[1.0, 3.0, 2.0, 0.0]));
        let y = tape.max_pool_groups(x, 2).unwrap();
        assert_eq!(tape.value(y).data(), &[3.0, 2.0]);
        let m = tape.mean_all(y);
        let s = tape.scale(m, 2.0);
        tape.backward(s).unwrap();
        assert_eq!(tape.grad(x).data(), &[0.0, 1.0, 1.0, 0.0]);
    }

    #[test]
    fn forward_is_deterministic() {
        let run = || {
            let mut tape = Tape::new();
            let x = tape.leaf(t(2, 2, &[0.3, -1.2, 0.9, 2.2]));
            let g = tape.gelu(x);
            let n = tape.l2_normalize_rows(g).unwrap();
            tape.value(n).data().to_vec()
        };
        assert_eq!(run(), run());
    }
}

//! Reverse-mode autodiff over a recorded operation tape.
//!
//! The tape owns an arena of buffers. A forward pass records each primitive
//! together with the buffer ids of its operands; `backward` seeds the loss
//! gradient with 1 and replays the records in exact reverse order,
//! accumulating into operand gradients additively, which makes fan-out
//! (the same buffer consumed twice) come out right with no special cases.

use crate::tensor::{Scalar, Tensor};
use crate::{LexError, Result};

/// Index of a buffer in the tape arena.
pub type BufId = usize;

/// Additive attention-mask value for "blocked" positions. Finite (so checked
/// mode accepts it) but large enough that exp(x - max) underflows to exactly
/// 0.0 for any realistic score scale, keeping causality exact.
pub const MASK_NEG: f64 = -1e9;

struct Node<S> {
    rows: usize,
    cols: usize,
    val: Vec<S>,
    grad: Vec<S>,
    needs_grad: bool,
}

enum Op<S> {
    Matmul { a: BufId, b: BufId, out: BufId },
    AddSame { a: BufId, b: BufId, out: BufId },
    MulSame { a: BufId, b: BufId, out: BufId },
    AddScalar { a: BufId, out: BufId },
    Scale { a: BufId, c: S, out: BufId },
    AddBias { x: BufId, bias: BufId, out: BufId },
    MulCol { col: BufId, x: BufId, out: BufId },
    Relu { x: BufId, out: BufId },
    Sigmoid { x: BufId, out: BufId },
    SoftmaxRows { x: BufId, out: BufId },
    LayerNorm { x: BufId, gamma: BufId, beta: BufId, eps: S, out: BufId },
    Transpose { x: BufId, out: BufId },
    SliceCols { x: BufId, start: BufId, out: BufId },
    ConcatCols { parts: Vec<BufId>, out: BufId },
    Gather { table: BufId, ids: Vec<u32>, out: BufId },
    MulStored { x: BufId, m: Vec<S>, out: BufId },
    CrossEntropyLs { logits: BufId, targets: Vec<u32>, eps_ls: S, pad_id: u32, out: BufId },
    Sum { x: BufId, out: BufId },
}

fn op_name<S>(op: &Op<S>) -> &'static str {
    match op {
        Op::Matmul { .. } => "matmul",
        Op::AddSame { .. } => "add",
        Op::MulSame { .. } => "mul",
        Op::AddScalar { .. } => "add_scalar",
        Op::Scale { .. } => "scale",
        Op::AddBias { .. } => "add_bias",
        Op::MulCol { .. } => "mul_col",
        Op::Relu { .. } => "relu",
        Op::Sigmoid { .. } => "sigmoid",
        Op::SoftmaxRows { .. } => "softmax",
        Op::LayerNorm { .. } => "layer_norm",
        Op::Transpose { .. } => "transpose",
        Op::SliceCols { .. } => "slice_cols",
        Op::ConcatCols { .. } => "concat_cols",
        Op::Gather { .. } => "gather",
        Op::MulStored { .. } => "mul_stored",
        Op::CrossEntropyLs { .. } => "cross_entropy_label_smoothed",
        Op::Sum { .. } => "sum",
    }
}

pub struct Tape<S: Scalar> {
    nodes: Vec<Node<S>>,
    ops: Vec<Op<S>>,
    /// Train mode enables dropout; eval mode makes it the identity.
    pub train: bool,
    /// When set, every op output is scanned for NaN/Inf.
    checked: bool,
    dropout_seed: u64,
    dropout_counter: u64,
}

impl<S: Scalar> Tape<S> {
    pub fn new(train: bool, dropout_seed: u64) -> Self {
        Tape {
            nodes: Vec::new(),
            ops: Vec::new(),
            train,
            checked: cfg!(debug_assertions),
            dropout_seed,
            dropout_counter: 0,
        }
    }

    pub fn set_checked(&mut self, on: bool) {
        self.checked = on;
    }

    /// Next state for a counter-based noise stream (dropout masks, gate
    /// noise). Each call advances the counter, so op insertion order fully
    /// determines every mask.
    pub fn next_stream(&mut self) -> u64 {
        let s = self
            .dropout_seed
            ^ self.dropout_counter.wrapping_mul(0x9e37_79b9_7f4a_7c15);
        self.dropout_counter += 1;
        s
    }

    fn push(&mut self, rows: usize, cols: usize, val: Vec<S>, needs_grad: bool) -> BufId {
        debug_assert_eq!(rows * cols, val.len());
        let grad = vec![S::zero(); val.len()];
        self.nodes.push(Node { rows, cols, val, grad, needs_grad });
        self.nodes.len() - 1
    }

    fn check_out(&self, id: BufId, op: &'static str) -> Result<BufId> {
        if self.checked && self.nodes[id].val.iter().any(|v| !v.is_finite()) {
            return Err(LexError::Internal(format!("non-finite values produced by {op}")));
        }
        Ok(id)
    }

    /// Registers a tensor as a leaf; gradient tracking follows
    /// `tensor.requires_grad`.
    pub fn leaf(&mut self, t: &Tensor<S>) -> Result<BufId> {
        let (r, c) = t.as_2d()?;
        Ok(self.push(r, c, t.data().to_vec(), t.requires_grad))
    }

    /// Registers a tensor as a non-differentiable constant.
    pub fn constant(&mut self, t: &Tensor<S>) -> Result<BufId> {
        let (r, c) = t.as_2d()?;
        Ok(self.push(r, c, t.data().to_vec(), false))
    }

    pub fn constant_raw(&mut self, rows: usize, cols: usize, val: Vec<S>) -> Result<BufId> {
        if rows * cols != val.len() {
            return Err(LexError::Shape(format!(
                "constant data length {} does not match {rows}x{cols}",
                val.len()
            )));
        }
        Ok(self.push(rows, cols, val, false))
    }

    pub fn shape2(&self, id: BufId) -> (usize, usize) {
        (self.nodes[id].rows, self.nodes[id].cols)
    }

    pub fn value(&self, id: BufId) -> &[S] {
        &self.nodes[id].val
    }

    pub fn grad(&self, id: BufId) -> &[S] {
        &self.nodes[id].grad
    }

    pub fn scalar_value(&self, id: BufId) -> Result<S> {
        let n = &self.nodes[id];
        if n.val.len() != 1 {
            return Err(LexError::Shape(format!(
                "expected scalar buffer, found {}x{}",
                n.rows, n.cols
            )));
        }
        Ok(n.val[0])
    }

    // ── forward ops ──────────────────────────────────────────────────────

    pub fn matmul(&mut self, a: BufId, b: BufId) -> Result<BufId> {
        let (m, ka) = self.shape2(a);
        let (kb, n) = self.shape2(b);
        if ka != kb {
            return Err(LexError::Shape(format!(
                "matmul inner dimensions disagree: {m}x{ka} vs {kb}x{n}"
            )));
        }
        let mut out = vec![S::zero(); m * n];
        {
            let av = &self.nodes[a].val;
            let bv = &self.nodes[b].val;
            for i in 0..m {
                for t in 0..ka {
                    let ait = av[i * ka + t];
                    if ait == S::zero() {
                        continue;
                    }
                    let brow = &bv[t * n..(t + 1) * n];
                    let orow = &mut out[i * n..(i + 1) * n];
                    for j in 0..n {
                        orow[j] = orow[j] + ait * brow[j];
                    }
                }
            }
        }
        let ng = self.nodes[a].needs_grad || self.nodes[b].needs_grad;
        let id = self.push(m, n, out, ng);
        self.ops.push(Op::Matmul { a, b, out: id });
        self.check_out(id, "matmul")
    }

    fn same_shape(&self, a: BufId, b: BufId, op: &str) -> Result<(usize, usize)> {
        let sa = self.shape2(a);
        let sb = self.shape2(b);
        if sa != sb {
            return Err(LexError::Shape(format!(
                "{op} operand shapes disagree: {}x{} vs {}x{}",
                sa.0, sa.1, sb.0, sb.1
            )));
        }
        Ok(sa)
    }

    pub fn add(&mut self, a: BufId, b: BufId) -> Result<BufId> {
        let (r, c) = self.same_shape(a, b, "add")?;
        let out: Vec<S> = self.nodes[a]
            .val
            .iter()
            .zip(&self.nodes[b].val)
            .map(|(x, y)| *x + *y)
            .collect();
        let ng = self.nodes[a].needs_grad || self.nodes[b].needs_grad;
        let id = self.push(r, c, out, ng);
        self.ops.push(Op::AddSame { a, b, out: id });
        self.check_out(id, "add")
    }

    pub fn mul(&mut self, a: BufId, b: BufId) -> Result<BufId> {
        let (r, c) = self.same_shape(a, b, "mul")?;
        let out: Vec<S> = self.nodes[a]
            .val
            .iter()
            .zip(&self.nodes[b].val)
            .map(|(x, y)| *x * *y)
            .collect();
        let ng = self.nodes[a].needs_grad || self.nodes[b].needs_grad;
        let id = self.push(r, c, out, ng);
        self.ops.push(Op::MulSame { a, b, out: id });
        self.check_out(id, "mul")
    }

    pub fn add_scalar(&mut self, a: BufId, c: S) -> Result<BufId> {
        let (r, cc) = self.shape2(a);
        let out: Vec<S> = self.nodes[a].val.iter().map(|x| *x + c).collect();
        let ng = self.nodes[a].needs_grad;
        let id = self.push(r, cc, out, ng);
        self.ops.push(Op::AddScalar { a, out: id });
        self.check_out(id, "add_scalar")
    }

    pub fn scale(&mut self, a: BufId, c: S) -> Result<BufId> {
        let (r, cc) = self.shape2(a);
        let out: Vec<S> = self.nodes[a].val.iter().map(|x| *x * c).collect();
        let ng = self.nodes[a].needs_grad;
        let id = self.push(r, cc, out, ng);
        self.ops.push(Op::Scale { a, c, out: id });
        self.check_out(id, "scale")
    }

    /// Adds a 1xC bias row to every row of an RxC matrix.
    pub fn add_bias(&mut self, x: BufId, bias: BufId) -> Result<BufId> {
        let (r, c) = self.shape2(x);
        let (br, bc) = self.shape2(bias);
        if br != 1 || bc != c {
            return Err(LexError::Shape(format!(
                "add_bias: {r}x{c} vs bias {br}x{bc}"
            )));
        }
        let mut out = vec![S::zero(); r * c];
        {
            let xv = &self.nodes[x].val;
            let bv = &self.nodes[bias].val;
            for i in 0..r {
                for j in 0..c {
                    out[i * c + j] = xv[i * c + j] + bv[j];
                }
            }
        }
        let ng = self.nodes[x].needs_grad || self.nodes[bias].needs_grad;
        let id = self.push(r, c, out, ng);
        self.ops.push(Op::AddBias { x, bias, out: id });
        self.check_out(id, "add_bias")
    }

    /// Multiplies each row of an RxC matrix by the matching entry of an Rx1
    /// column (per-token gate broadcast across the feature axis).
    pub fn mul_col(&mut self, col: BufId, x: BufId) -> Result<BufId> {
        let (r, c) = self.shape2(x);
        let (gr, gc) = self.shape2(col);
        if gr != r || gc != 1 {
            return Err(LexError::Shape(format!(
                "mul_col: column {gr}x{gc} vs matrix {r}x{c}"
            )));
        }
        let mut out = vec![S::zero(); r * c];
        {
            let xv = &self.nodes[x].val;
            let gv = &self.nodes[col].val;
            for i in 0..r {
                for j in 0..c {
                    out[i * c + j] = gv[i] * xv[i * c + j];
                }
            }
        }
        let ng = self.nodes[x].needs_grad || self.nodes[col].needs_grad;
        let id = self.push(r, c, out, ng);
        self.ops.push(Op::MulCol { col, x, out: id });
        self.check_out(id, "mul_col")
    }

    pub fn relu(&mut self, x: BufId) -> Result<BufId> {
        let (r, c) = self.shape2(x);
        let out: Vec<S> = self.nodes[x].val.iter().map(|v| v.max(S::zero())).collect();
        let ng = self.nodes[x].needs_grad;
        let id = self.push(r, c, out, ng);
        self.ops.push(Op::Relu { x, out: id });
        self.check_out(id, "relu")
    }

    pub fn sigmoid(&mut self, x: BufId) -> Result<BufId> {
        let (r, c) = self.shape2(x);
        let one = S::one();
        let out: Vec<S> = self.nodes[x]
            .val
            .iter()
            .map(|v| one / (one + (-*v).exp()))
            .collect();
        let ng = self.nodes[x].needs_grad;
        let id = self.push(r, c, out, ng);
        self.ops.push(Op::Sigmoid { x, out: id });
        self.check_out(id, "sigmoid")
    }

    /// Row-wise softmax with max subtraction for stability.
    pub fn softmax_rows(&mut self, x: BufId) -> Result<BufId> {
        let (r, c) = self.shape2(x);
        if c == 0 {
            return Err(LexError::Shape("softmax over empty rows".into()));
        }
        let mut out = vec![S::zero(); r * c];
        {
            let xv = &self.nodes[x].val;
            for i in 0..r {
                let row = &xv[i * c..(i + 1) * c];
                let m = row.iter().fold(row[0], |acc, v| acc.max(*v));
                let mut z = S::zero();
                for j in 0..c {
                    let e = (row[j] - m).exp();
                    out[i * c + j] = e;
                    z = z + e;
                }
                for j in 0..c {
                    out[i * c + j] = out[i * c + j] / z;
                }
            }
        }
        let ng = self.nodes[x].needs_grad;
        let id = self.push(r, c, out, ng);
        self.ops.push(Op::SoftmaxRows { x, out: id });
        self.check_out(id, "softmax")
    }

    /// Per-row mean-0/variance-1 normalization over the last axis, then the
    /// affine gamma * xhat + beta. eps sits inside the square root.
    pub fn layer_norm(&mut self, x: BufId, gamma: BufId, beta: BufId, eps: S) -> Result<BufId> {
        let (r, c) = self.shape2(x);
        if c == 0 {
            return Err(LexError::Shape("layer_norm over zero-width rows".into()));
        }
        for (name, id) in [("gamma", gamma), ("beta", beta)] {
            let (ar, ac) = self.shape2(id);
            if ar != 1 || ac != c {
                return Err(LexError::Shape(format!(
                    "layer_norm {name} is {ar}x{ac}, expected 1x{c}"
                )));
            }
        }
        let mut out = vec![S::zero(); r * c];
        {
            let xv = &self.nodes[x].val;
            let gv = &self.nodes[gamma].val;
            let bv = &self.nodes[beta].val;
            let cn = S::of_f64(c as f64);
            for i in 0..r {
                let row = &xv[i * c..(i + 1) * c];
                let mean = row.iter().copied().sum::<S>() / cn;
                let var = row
                    .iter()
                    .map(|v| (*v - mean) * (*v - mean))
                    .sum::<S>()
                    / cn;
                let inv = S::one() / (var + eps).sqrt();
                for j in 0..c {
                    let xhat = (row[j] - mean) * inv;
                    out[i * c + j] = gv[j] * xhat + bv[j];
                }
            }
        }
        let ng = self.nodes[x].needs_grad
            || self.nodes[gamma].needs_grad
            || self.nodes[beta].needs_grad;
        let id = self.push(r, c, out, ng);
        self.ops.push(Op::LayerNorm { x, gamma, beta, eps, out: id });
        self.check_out(id, "layer_norm")
    }

    pub fn transpose(&mut self, x: BufId) -> Result<BufId> {
        let (r, c) = self.shape2(x);
        let mut out = vec![S::zero(); r * c];
        {
            let xv = &self.nodes[x].val;
            for i in 0..r {
                for j in 0..c {
                    out[j * r + i] = xv[i * c + j];
                }
            }
        }
        let ng = self.nodes[x].needs_grad;
        let id = self.push(c, r, out, ng);
        self.ops.push(Op::Transpose { x, out: id });
        self.check_out(id, "transpose")
    }

    /// Extracts columns [start, start+width) of every row.
    pub fn slice_cols(&mut self, x: BufId, start: usize, width: usize) -> Result<BufId> {
        let (r, c) = self.shape2(x);
        if start + width > c || width == 0 {
            return Err(LexError::Shape(format!(
                "slice_cols [{start}, {}) out of range for {r}x{c}",
                start + width
            )));
        }
        let mut out = vec![S::zero(); r * width];
        {
            let xv = &self.nodes[x].val;
            for i in 0..r {
                out[i * width..(i + 1) * width]
                    .copy_from_slice(&xv[i * c + start..i * c + start + width]);
            }
        }
        let ng = self.nodes[x].needs_grad;
        let id = self.push(r, width, out, ng);
        self.ops.push(Op::SliceCols { x, start, out: id });
        self.check_out(id, "slice_cols")
    }

    /// Concatenates matrices with equal row counts along the column axis.
    pub fn concat_cols(&mut self, parts: &[BufId]) -> Result<BufId> {
        if parts.is_empty() {
            return Err(LexError::Shape("concat_cols of zero parts".into()));
        }
        let r = self.shape2(parts[0]).0;
        let mut total = 0;
        for &p in parts {
            let (pr, pc) = self.shape2(p);
            if pr != r {
                return Err(LexError::Shape(format!(
                    "concat_cols row counts disagree: {r} vs {pr}"
                )));
            }
            total += pc;
        }
        let mut out = vec![S::zero(); r * total];
        {
            let mut off = 0;
            for &p in parts {
                let (_, pc) = self.shape2(p);
                let pv = &self.nodes[p].val;
                for i in 0..r {
                    out[i * total + off..i * total + off + pc]
                        .copy_from_slice(&pv[i * pc..(i + 1) * pc]);
                }
                off += pc;
            }
        }
        let ng = parts.iter().any(|&p| self.nodes[p].needs_grad);
        let id = self.push(r, total, out, ng);
        self.ops.push(Op::ConcatCols { parts: parts.to_vec(), out: id });
        self.check_out(id, "concat_cols")
    }

    /// Embedding lookup: row `ids[t]` of the table becomes row t of the
    /// output. Backward scatter-adds, so repeated ids accumulate.
    pub fn gather(&mut self, table: BufId, ids: &[u32]) -> Result<BufId> {
        let (v, d) = self.shape2(table);
        for &id in ids {
            if id as usize >= v {
                return Err(LexError::Data(format!(
                    "token id {id} out of range for table with {v} rows"
                )));
            }
        }
        let mut out = vec![S::zero(); ids.len() * d];
        {
            let tv = &self.nodes[table].val;
            for (t, &id) in ids.iter().enumerate() {
                out[t * d..(t + 1) * d]
                    .copy_from_slice(&tv[id as usize * d..(id as usize + 1) * d]);
            }
        }
        let ng = self.nodes[table].needs_grad;
        let id = self.push(ids.len(), d, out, ng);
        self.ops.push(Op::Gather { table, ids: ids.to_vec(), out: id });
        self.check_out(id, "gather")
    }

    /// Inverted dropout: at train time each element is zeroed with
    /// probability p and survivors are scaled by 1/(1-p); at eval time the
    /// op is the identity and records nothing. The mask stream is
    /// counter-based: state = dropout_seed ^ (counter * 0x9e3779b97f4a7c15),
    /// then one splitmix64 draw per element.
    pub fn dropout(&mut self, x: BufId, p: f64) -> Result<BufId> {
        if !(0.0..1.0).contains(&p) {
            return Err(LexError::Config(format!("dropout probability {p} outside [0, 1)")));
        }
        if !self.train || p == 0.0 {
            return Ok(x);
        }
        let (r, c) = self.shape2(x);
        let mut state = self.next_stream();
        let keep_scale = S::of_f64(1.0 / (1.0 - p));
        let m: Vec<S> = (0..r * c)
            .map(|_| {
                if crate::util::unit_f64(&mut state) < 1.0 - p {
                    keep_scale
                } else {
                    S::zero()
                }
            })
            .collect();
        let out: Vec<S> = self.nodes[x].val.iter().zip(&m).map(|(v, mm)| *v * *mm).collect();
        let ng = self.nodes[x].needs_grad;
        let id = self.push(r, c, out, ng);
        self.ops.push(Op::MulStored { x, m, out: id });
        self.check_out(id, "dropout")
    }

    /// Elementwise multiply by a fixed (non-differentiable) mask.
    pub fn mul_stored(&mut self, x: BufId, m: Vec<S>) -> Result<BufId> {
        let (r, c) = self.shape2(x);
        if m.len() != r * c {
            return Err(LexError::Shape(format!(
                "mul_stored mask length {} vs {r}x{c}",
                m.len()
            )));
        }
        let out: Vec<S> = self.nodes[x].val.iter().zip(&m).map(|(v, mm)| *v * *mm).collect();
        let ng = self.nodes[x].needs_grad;
        let id = self.push(r, c, out, ng);
        self.ops.push(Op::MulStored { x, m, out: id });
        self.check_out(id, "mul_stored")
    }

    /// Label-smoothed cross entropy, averaged over non-pad positions.
    ///
    /// The smoothed target puts 1-eps on the true id and eps/(V-1) on every
    /// other id; positions whose target equals pad_id contribute zero.
    pub fn cross_entropy_ls(
        &mut self,
        logits: BufId,
        targets: &[u32],
        eps_ls: f64,
        pad_id: u32,
    ) -> Result<BufId> {
        let (t, v) = self.shape2(logits);
        if targets.len() != t {
            return Err(LexError::Shape(format!(
                "cross entropy: {t} logit rows vs {} targets",
                targets.len()
            )));
        }
        if v < 2 {
            return Err(LexError::Config(format!(
                "cross entropy needs vocab >= 2, got {v}"
            )));
        }
        for (pos, &y) in targets.iter().enumerate() {
            if y != pad_id && y as usize >= v {
                return Err(LexError::Data(format!(
                    "target id {y} at position {pos} >= vocab size {v}"
                )));
            }
        }
        let eps = S::of_f64(eps_ls);
        let one = S::one();
        let off_mass = eps / S::of_f64((v - 1) as f64);
        let mut total = S::zero();
        let mut n_nonpad = 0usize;
        {
            let lv = &self.nodes[logits].val;
            for (pos, &y) in targets.iter().enumerate() {
                if y == pad_id {
                    continue;
                }
                n_nonpad += 1;
                let row = &lv[pos * v..(pos + 1) * v];
                let m = row.iter().fold(row[0], |acc, x| acc.max(*x));
                let lse = m + row.iter().map(|x| (*x - m).exp()).sum::<S>().ln();
                let sum_all: S = row.iter().copied().sum();
                let xy = row[y as usize];
                // loss = lse - (1-eps)*x_y - eps/(V-1) * (sum - x_y)
                total = total + lse - (one - eps) * xy - off_mass * (sum_all - xy);
            }
        }
        let mean = if n_nonpad == 0 {
            S::zero()
        } else {
            total / S::of_f64(n_nonpad as f64)
        };
        let ng = self.nodes[logits].needs_grad;
        let id = self.push(1, 1, vec![mean], ng);
        self.ops.push(Op::CrossEntropyLs {
            logits,
            targets: targets.to_vec(),
            eps_ls: eps,
            pad_id,
            out: id,
        });
        self.check_out(id, "cross_entropy_label_smoothed")
    }

    pub fn sum(&mut self, x: BufId) -> Result<BufId> {
        let total: S = self.nodes[x].val.iter().copied().sum();
        let ng = self.nodes[x].needs_grad;
        let id = self.push(1, 1, vec![total], ng);
        self.ops.push(Op::Sum { x, out: id });
        self.check_out(id, "sum")
    }

    // ── backward ─────────────────────────────────────────────────────────

    /// Populates gradients for every buffer that participates in `loss`.
    /// `loss` must be scalar (1x1). Deterministic: the replay order and all
    /// accumulations are fixed by the recorded op sequence.
    pub fn backward(&mut self, loss: BufId) -> Result<()> {
        let n = &self.nodes[loss];
        if n.rows != 1 || n.cols != 1 {
            return Err(LexError::Usage(format!(
                "backward requires a scalar loss, found {}x{}",
                n.rows, n.cols
            )));
        }
        self.nodes[loss].grad[0] = self.nodes[loss].grad[0] + S::one();
        for oi in (0..self.ops.len()).rev() {
            self.backprop_op(oi);
        }
        if self.checked {
            for (i, node) in self.nodes.iter().enumerate() {
                if node.needs_grad && node.grad.iter().any(|g| !g.is_finite()) {
                    return Err(LexError::Internal(format!(
                        "non-finite gradient in buffer {i} (produced near op {})",
                        self.ops.last().map(op_name).unwrap_or("leaf")
                    )));
                }
            }
        }
        Ok(())
    }

    fn backprop_op(&mut self, oi: usize) {
        // Clones keep the borrow checker out of the way; every graph here is
        // desk-scale so the copies are cheap.
        macro_rules! gout {
            ($out:expr) => {
                self.nodes[$out].grad.clone()
            };
        }
        match &self.ops[oi] {
            &Op::Matmul { a, b, out } => {
                let go = gout!(out);
                let (m, k) = self.shape2(a);
                let n = self.shape2(b).1;
                if self.nodes[a].needs_grad {
                    let bv = self.nodes[b].val.clone();
                    let ga = &mut self.nodes[a].grad;
                    for i in 0..m {
                        for t in 0..k {
                            let mut acc = S::zero();
                            for j in 0..n {
                                acc = acc + go[i * n + j] * bv[t * n + j];
                            }
                            ga[i * k + t] = ga[i * k + t] + acc;
                        }
                    }
                }
                if self.nodes[b].needs_grad {
                    let av = self.nodes[a].val.clone();
                    let gb = &mut self.nodes[b].grad;
                    for t in 0..k {
                        for i in 0..m {
                            let ait = av[i * k + t];
                            if ait == S::zero() {
                                continue;
                            }
                            for j in 0..n {
                                gb[t * n + j] = gb[t * n + j] + ait * go[i * n + j];
                            }
                        }
                    }
                }
            }
            &Op::AddSame { a, b, out } => {
                let go = gout!(out);
                for target in [a, b] {
                    if self.nodes[target].needs_grad {
                        let g = &mut self.nodes[target].grad;
                        for (gi, goi) in g.iter_mut().zip(&go) {
                            *gi = *gi + *goi;
                        }
                    }
                }
            }
            &Op::MulSame { a, b, out } => {
                let go = gout!(out);
                if self.nodes[a].needs_grad {
                    let bv = self.nodes[b].val.clone();
                    let ga = &mut self.nodes[a].grad;
                    for i in 0..go.len() {
                        ga[i] = ga[i] + go[i] * bv[i];
                    }
                }
                if self.nodes[b].needs_grad {
                    let av = self.nodes[a].val.clone();
                    let gb = &mut self.nodes[b].grad;
                    for i in 0..go.len() {
                        gb[i] = gb[i] + go[i] * av[i];
                    }
                }
            }
            &Op::AddScalar { a, out } => {
                let go = gout!(out);
                if self.nodes[a].needs_grad {
                    let ga = &mut self.nodes[a].grad;
                    for (gi, goi) in ga.iter_mut().zip(&go) {
                        *gi = *gi + *goi;
                    }
                }
            }
            &Op::Scale { a, c, out } => {
                let go = gout!(out);
                if self.nodes[a].needs_grad {
                    let ga = &mut self.nodes[a].grad;
                    for (gi, goi) in ga.iter_mut().zip(&go) {
                        *gi = *gi + c * *goi;
                    }
                }
            }
            &Op::AddBias { x, bias, out } => {
                let go = gout!(out);
                let (r, c) = self.shape2(x);
                if self.nodes[x].needs_grad {
                    let gx = &mut self.nodes[x].grad;
                    for (gi, goi) in gx.iter_mut().zip(&go) {
                        *gi = *gi + *goi;
                    }
                }
                if self.nodes[bias].needs_grad {
                    let gb = &mut self.nodes[bias].grad;
                    for i in 0..r {
                        for j in 0..c {
                            gb[j] = gb[j] + go[i * c + j];
                        }
                    }
                }
            }
            &Op::MulCol { col, x, out } => {
                let go = gout!(out);
                let (r, c) = self.shape2(x);
                if self.nodes[col].needs_grad {
                    let xv = self.nodes[x].val.clone();
                    let gc = &mut self.nodes[col].grad;
                    for i in 0..r {
                        let mut acc = S::zero();
                        for j in 0..c {
                            acc = acc + go[i * c + j] * xv[i * c + j];
                        }
                        gc[i] = gc[i] + acc;
                    }
                }
                if self.nodes[x].needs_grad {
                    let cv = self.nodes[col].val.clone();
                    let gx = &mut self.nodes[x].grad;
                    for i in 0..r {
                        for j in 0..c {
                            gx[i * c + j] = gx[i * c + j] + cv[i] * go[i * c + j];
                        }
                    }
                }
            }
            &Op::Relu { x, out } => {
                let go = gout!(out);
                if self.nodes[x].needs_grad {
                    let xv = self.nodes[x].val.clone();
                    let gx = &mut self.nodes[x].grad;
                    for i in 0..go.len() {
                        if xv[i] > S::zero() {
                            gx[i] = gx[i] + go[i];
                        }
                    }
                }
            }
            &Op::Sigmoid { x, out } => {
                let go = gout!(out);
                if self.nodes[x].needs_grad {
                    let yv = self.nodes[out].val.clone();
                    let gx = &mut self.nodes[x].grad;
                    for i in 0..go.len() {
                        gx[i] = gx[i] + go[i] * yv[i] * (S::one() - yv[i]);
                    }
                }
            }
            &Op::SoftmaxRows { x, out } => {
                let go = gout!(out);
                if self.nodes[x].needs_grad {
                    let yv = self.nodes[out].val.clone();
                    let (r, c) = self.shape2(out);
                    let gx = &mut self.nodes[x].grad;
                    for i in 0..r {
                        let mut dot = S::zero();
                        for j in 0..c {
                            dot = dot + go[i * c + j] * yv[i * c + j];
                        }
                        for j in 0..c {
                            gx[i * c + j] =
                                gx[i * c + j] + yv[i * c + j] * (go[i * c + j] - dot);
                        }
                    }
                }
            }
            &Op::LayerNorm { x, gamma, beta, eps, out } => {
                let go = gout!(out);
                let (r, c) = self.shape2(x);
                let xv = self.nodes[x].val.clone();
                let gv = self.nodes[gamma].val.clone();
                let cn = S::of_f64(c as f64);
                // Recompute per-row statistics; cheaper than caching them.
                let mut xhat = vec![S::zero(); r * c];
                let mut inv_std = vec![S::zero(); r];
                for i in 0..r {
                    let row = &xv[i * c..(i + 1) * c];
                    let mean = row.iter().copied().sum::<S>() / cn;
                    let var = row.iter().map(|v| (*v - mean) * (*v - mean)).sum::<S>() / cn;
                    let inv = S::one() / (var + eps).sqrt();
                    inv_std[i] = inv;
                    for j in 0..c {
                        xhat[i * c + j] = (row[j] - mean) * inv;
                    }
                }
                if self.nodes[gamma].needs_grad {
                    let gg = &mut self.nodes[gamma].grad;
                    for i in 0..r {
                        for j in 0..c {
                            gg[j] = gg[j] + go[i * c + j] * xhat[i * c + j];
                        }
                    }
                }
                if self.nodes[beta].needs_grad {
                    let gb = &mut self.nodes[beta].grad;
                    for i in 0..r {
                        for j in 0..c {
                            gb[j] = gb[j] + go[i * c + j];
                        }
                    }
                }
                if self.nodes[x].needs_grad {
                    let gx = &mut self.nodes[x].grad;
                    for i in 0..r {
                        let mut mean_dxh = S::zero();
                        let mut mean_dxh_xh = S::zero();
                        for j in 0..c {
                            let dxh = go[i * c + j] * gv[j];
                            mean_dxh = mean_dxh + dxh;
                            mean_dxh_xh = mean_dxh_xh + dxh * xhat[i * c + j];
                        }
                        mean_dxh = mean_dxh / cn;
                        mean_dxh_xh = mean_dxh_xh / cn;
                        for j in 0..c {
                            let dxh = go[i * c + j] * gv[j];
                            gx[i * c + j] = gx[i * c + j]
                                + inv_std[i] * (dxh - mean_dxh - xhat[i * c + j] * mean_dxh_xh);
                        }
                    }
                }
            }
            &Op::Transpose { x, out } => {
                let go = gout!(out);
                if self.nodes[x].needs_grad {
                    let (r, c) = self.shape2(x);
                    let gx = &mut self.nodes[x].grad;
                    for i in 0..r {
                        for j in 0..c {
                            gx[i * c + j] = gx[i * c + j] + go[j * r + i];
                        }
                    }
                }
            }
            &Op::SliceCols { x, start, out } => {
                let go = gout!(out);
                if self.nodes[x].needs_grad {
                    let (r, w) = self.shape2(out);
                    let c = self.shape2(x).1;
                    let gx = &mut self.nodes[x].grad;
                    for i in 0..r {
                        for j in 0..w {
                            gx[i * c + start + j] = gx[i * c + start + j] + go[i * w + j];
                        }
                    }
                }
            }
            Op::ConcatCols { parts, out } => {
                let parts = parts.clone();
                let out = *out;
                let go = gout!(out);
                let (r, total) = self.shape2(out);
                let mut off = 0;
                for p in parts {
                    let (_, pc) = self.shape2(p);
                    if self.nodes[p].needs_grad {
                        let gp = &mut self.nodes[p].grad;
                        for i in 0..r {
                            for j in 0..pc {
                                gp[i * pc + j] = gp[i * pc + j] + go[i * total + off + j];
                            }
                        }
                    }
                    off += pc;
                }
            }
            Op::Gather { table, ids, out } => {
                let table = *table;
                let ids = ids.clone();
                let out = *out;
                let go = gout!(out);
                if self.nodes[table].needs_grad {
                    let d = self.shape2(table).1;
                    let gt = &mut self.nodes[table].grad;
                    for (t, id) in ids.iter().enumerate() {
                        for j in 0..d {
                            let k = *id as usize * d + j;
                            gt[k] = gt[k] + go[t * d + j];
                        }
                    }
                }
            }
            Op::MulStored { x, m, out } => {
                let x = *x;
                let out = *out;
                let m = m.clone();
                let go = gout!(out);
                if self.nodes[x].needs_grad {
                    let gx = &mut self.nodes[x].grad;
                    for i in 0..go.len() {
                        gx[i] = gx[i] + go[i] * m[i];
                    }
                }
            }
            Op::CrossEntropyLs { logits, targets, eps_ls, pad_id, out } => {
                let logits = *logits;
                let targets = targets.clone();
                let eps = *eps_ls;
                let pad_id = *pad_id;
                let out = *out;
                let gout = self.nodes[out].grad[0];
                if self.nodes[logits].needs_grad {
                    let (_, v) = self.shape2(logits);
                    let lv = self.nodes[logits].val.clone();
                    let n_nonpad = targets.iter().filter(|&&y| y != pad_id).count();
                    if n_nonpad > 0 {
                        let w = gout / S::of_f64(n_nonpad as f64);
                        let one = S::one();
                        let off_mass = eps / S::of_f64((v - 1) as f64);
                        let gl = &mut self.nodes[logits].grad;
                        for (pos, &y) in targets.iter().enumerate() {
                            if y == pad_id {
                                continue;
                            }
                            let row = &lv[pos * v..(pos + 1) * v];
                            let m = row.iter().fold(row[0], |acc, x| acc.max(*x));
                            let z: S = row.iter().map(|x| (*x - m).exp()).sum();
                            for j in 0..v {
                                let p = (row[j] - m).exp() / z;
                                let q = if j == y as usize { one - eps } else { off_mass };
                                gl[pos * v + j] = gl[pos * v + j] + w * (p - q);
                            }
                        }
                    }
                }
            }
            &Op::Sum { x, out } => {
                let gout = self.nodes[out].grad[0];
                if self.nodes[x].needs_grad {
                    let gx = &mut self.nodes[x].grad;
                    for g in gx.iter_mut() {
                        *g = *g + gout;
                    }
                }
            }
        }
    }
}

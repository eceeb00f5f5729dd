//! Encoder-decoder forward graph built on the autodiff tape.
//!
//! Layout conventions: activations are T x d_model row-major, one row per
//! token. The decoder applies, per block, self-attention (causal), then
//! cross-attention over the encoder states, then the feed-forward net; the
//! routing layer wraps the self-attention or cross-attention output
//! according to `dr_position`, and one routing parameter set is shared by
//! every block.

use std::collections::BTreeMap;

use crate::model::routing::{dr_forward_probed, DrGatedIds, DrIds, DR_NOISE_STD};
use crate::model::{DrPosition, ModelConfig, ParamSet};
use crate::tensor::tape::{BufId, Tape, MASK_NEG};
use crate::tensor::Scalar;
use crate::{LexError, Result};

pub const LN_EPS: f64 = 1e-5;

/// Tape ids of every model parameter, keyed by parameter name.
pub struct BoundIds {
    pub cfg: ModelConfig,
    ids: BTreeMap<String, BufId>,
}

impl BoundIds {
    fn id(&self, name: &str) -> BufId {
        *self
            .ids
            .get(name)
            .unwrap_or_else(|| panic!("internal: no bound parameter named '{name}'"))
    }

    fn dr(&self) -> Option<DrIds> {
        match self.cfg.dr_position {
            DrPosition::None => None,
            DrPosition::SharedOnly => Some(DrIds { w_shared: self.id("dr.w_shared"), gated: None }),
            DrPosition::AfterSan | DrPosition::AfterCan => Some(DrIds {
                w_shared: self.id("dr.w_shared"),
                gated: Some(DrGatedIds {
                    w_dom: self.id("dr.w_dom"),
                    w1: self.id("dr.gate.w1"),
                    b: self.id("dr.gate.b"),
                    w2: self.id("dr.gate.w2"),
                }),
            }),
        }
    }

    fn noise_std(&self) -> f64 {
        if self.cfg.dr_noise {
            DR_NOISE_STD
        } else {
            0.0
        }
    }
}

/// Registers every parameter as a tape leaf. Gradients flow back into the
/// tape buffers; read them out via `grad_of`.
pub fn bind<S: Scalar>(tape: &mut Tape<S>, params: &ParamSet<S>) -> Result<BoundIds> {
    let mut ids = BTreeMap::new();
    for (name, t) in params.iter() {
        ids.insert(name.clone(), tape.leaf(t)?);
    }
    Ok(BoundIds { cfg: params.cfg.clone(), ids })
}

/// Gradient slice of a named parameter after `backward`.
pub fn grad_of<'t, S: Scalar>(tape: &'t Tape<S>, bound: &BoundIds, name: &str) -> &'t [S] {
    tape.grad(bound.id(name))
}

/// Interleaved sine/cosine position rows: dimension pair 2i holds
/// sin(pos / 10000^(2i/d)), 2i+1 the matching cosine.
pub fn sinusoidal_positions<S: Scalar>(len: usize, d_model: usize) -> Vec<S> {
    let mut out = vec![S::zero(); len * d_model];
    for pos in 0..len {
        for i in 0..d_model / 2 {
            let angle = pos as f64 / 10000f64.powf(2.0 * i as f64 / d_model as f64);
            out[pos * d_model + 2 * i] = S::of_f64(angle.sin());
            out[pos * d_model + 2 * i + 1] = S::of_f64(angle.cos());
        }
    }
    out
}

fn causal_mask<S: Scalar>(n: usize) -> Vec<S> {
    let mut m = vec![S::zero(); n * n];
    for i in 0..n {
        for j in (i + 1)..n {
            m[i * n + j] = S::of_f64(MASK_NEG);
        }
    }
    m
}

fn layer_norm_at<S: Scalar>(
    tape: &mut Tape<S>,
    b: &BoundIds,
    prefix: &str,
    x: BufId,
) -> Result<BufId> {
    let gamma = b.id(&format!("{prefix}.gamma"));
    let beta = b.id(&format!("{prefix}.beta"));
    tape.layer_norm(x, gamma, beta, S::of_f64(LN_EPS))
}

/// Multi-head scaled dot-product attention. `mask` is an additive q_len x
/// kv_len matrix (0 = visible, large negative = blocked).
fn attention<S: Scalar>(
    tape: &mut Tape<S>,
    b: &BoundIds,
    prefix: &str,
    q_in: BufId,
    kv_in: BufId,
    mask: Option<&[S]>,
) -> Result<BufId> {
    let d = b.cfg.d_model;
    let h = b.cfg.n_heads;
    let dh = d / h;
    let q = tape.matmul(q_in, b.id(&format!("{prefix}.wq")))?;
    let k = tape.matmul(kv_in, b.id(&format!("{prefix}.wk")))?;
    let v = tape.matmul(kv_in, b.id(&format!("{prefix}.wv")))?;
    let (q_rows, _) = tape.shape2(q);
    let (k_rows, _) = tape.shape2(k);
    let scale = S::of_f64(1.0 / (dh as f64).sqrt());
    let mut heads = Vec::with_capacity(h);
    for hh in 0..h {
        let qh = tape.slice_cols(q, hh * dh, dh)?;
        let kh = tape.slice_cols(k, hh * dh, dh)?;
        let vh = tape.slice_cols(v, hh * dh, dh)?;
        let kt = tape.transpose(kh)?;
        let mut scores = tape.matmul(qh, kt)?;
        scores = tape.scale(scores, scale)?;
        if let Some(m) = mask {
            debug_assert_eq!(m.len(), q_rows * k_rows);
            let mc = tape.constant_raw(q_rows, k_rows, m.to_vec())?;
            scores = tape.add(scores, mc)?;
        }
        let attn = tape.softmax_rows(scores)?;
        heads.push(tape.matmul(attn, vh)?);
    }
    let ctx = tape.concat_cols(&heads)?;
    tape.matmul(ctx, b.id(&format!("{prefix}.wo")))
}

fn ffn<S: Scalar>(tape: &mut Tape<S>, b: &BoundIds, prefix: &str, x: BufId) -> Result<BufId> {
    let h = tape.matmul(x, b.id(&format!("{prefix}.w1")))?;
    let h = tape.add_bias(h, b.id(&format!("{prefix}.b1")))?;
    let h = tape.relu(h)?;
    let h = tape.matmul(h, b.id(&format!("{prefix}.w2")))?;
    tape.add_bias(h, b.id(&format!("{prefix}.b2")))
}

/// Residual sublayer in post-norm (LN(z + drop(f(z)))) or pre-norm
/// (z + drop(f(LN(z)))) form. When `dr` is set, the routing layer wraps the
/// sublayer output, gated by the sublayer input; any probed gate buffer is
/// appended to `gates`.
#[allow(clippy::too_many_arguments)]
fn sublayer<S: Scalar>(
    tape: &mut Tape<S>,
    b: &BoundIds,
    z: BufId,
    ln_prefix: &str,
    f: impl FnOnce(&mut Tape<S>, BufId) -> Result<BufId>,
    dr: Option<&DrIds>,
    gates: &mut Vec<BufId>,
) -> Result<BufId> {
    let input = if b.cfg.pre_norm {
        layer_norm_at(tape, b, ln_prefix, z)?
    } else {
        z
    };
    let mut f_z = f(tape, input)?;
    if let Some(dr) = dr {
        let (routed, gate) = dr_forward_probed(tape, input, f_z, dr, b.noise_std())?;
        f_z = routed;
        if let Some(g) = gate {
            gates.push(g);
        }
    }
    let f_z = tape.dropout(f_z, b.cfg.dropout_p)?;
    let sum = tape.add(z, f_z)?;
    if b.cfg.pre_norm {
        Ok(sum)
    } else {
        layer_norm_at(tape, b, ln_prefix, sum)
    }
}

fn embed_and_position<S: Scalar>(
    tape: &mut Tape<S>,
    b: &BoundIds,
    ids: &[u32],
) -> Result<BufId> {
    if ids.is_empty() {
        return Err(LexError::Data("cannot embed an empty token sequence".into()));
    }
    if ids.len() > b.cfg.max_len {
        return Err(LexError::Data(format!(
            "sequence length {} exceeds max_len {}",
            ids.len(),
            b.cfg.max_len
        )));
    }
    let d = b.cfg.d_model;
    let emb = tape.gather(b.id("embed"), ids)?;
    let emb = tape.scale(emb, S::of_f64((d as f64).sqrt()))?;
    let pos = tape.constant_raw(ids.len(), d, sinusoidal_positions(ids.len(), d))?;
    tape.add(emb, pos)
}

/// Encoder stack over a prepared source sequence; returns S x d_model.
pub fn encode<S: Scalar>(tape: &mut Tape<S>, b: &BoundIds, src_ids: &[u32]) -> Result<BufId> {
    let z0 = embed_and_position(tape, b, src_ids)?;
    let mut z = tape.dropout(z0, b.cfg.dropout_p)?;
    let mut no_gates = Vec::new();
    for i in 0..b.cfg.n_enc_layers {
        z = sublayer(
            tape,
            b,
            z,
            &format!("enc.{i}.ln1"),
            |t, x| attention(t, b, &format!("enc.{i}.san"), x, x, None),
            None,
            &mut no_gates,
        )?;
        z = sublayer(
            tape,
            b,
            z,
            &format!("enc.{i}.ln2"),
            |t, x| ffn(t, b, &format!("enc.{i}.ffn"), x),
            None,
            &mut no_gates,
        )?;
    }
    if b.cfg.pre_norm {
        z = layer_norm_at(tape, b, "enc_final", z)?;
    }
    Ok(z)
}

pub struct DecodeOut {
    /// T x vocab logits, one row per target position.
    pub logits: BufId,
    /// Probed gate buffers (T x 1), one per decoder block, in block order.
    /// Empty when the configuration has no learnable gate.
    pub gates: Vec<BufId>,
}

/// Decoder stack over a teacher-forced prefix; causal self-attention, then
/// cross-attention over `enc`, then feed-forward, per block.
pub fn decode_logits<S: Scalar>(
    tape: &mut Tape<S>,
    b: &BoundIds,
    enc: BufId,
    tgt_in_ids: &[u32],
) -> Result<DecodeOut> {
    let (_, enc_width) = tape.shape2(enc);
    if enc_width != b.cfg.d_model {
        return Err(LexError::Shape(format!(
            "encoder states are {enc_width} wide, model expects {}",
            b.cfg.d_model
        )));
    }
    let z0 = embed_and_position(tape, b, tgt_in_ids)?;
    let mut z = tape.dropout(z0, b.cfg.dropout_p)?;
    let n = tgt_in_ids.len();
    let mask = causal_mask::<S>(n);
    let dr = b.dr();
    let dr_at_san = matches!(
        b.cfg.dr_position,
        DrPosition::AfterSan | DrPosition::SharedOnly
    );
    let mut gates = Vec::new();
    for i in 0..b.cfg.n_dec_layers {
        z = sublayer(
            tape,
            b,
            z,
            &format!("dec.{i}.ln1"),
            |t, x| attention(t, b, &format!("dec.{i}.san"), x, x, Some(&mask)),
            if dr_at_san { dr.as_ref() } else { None },
            &mut gates,
        )?;
        z = sublayer(
            tape,
            b,
            z,
            &format!("dec.{i}.ln2"),
            |t, x| attention(t, b, &format!("dec.{i}.can"), x, enc, None),
            if b.cfg.dr_position == DrPosition::AfterCan {
                dr.as_ref()
            } else {
                None
            },
            &mut gates,
        )?;
        z = sublayer(
            tape,
            b,
            z,
            &format!("dec.{i}.ln3"),
            |t, x| ffn(t, b, &format!("dec.{i}.ffn"), x),
            None,
            &mut gates,
        )?;
    }
    if b.cfg.pre_norm {
        z = layer_norm_at(tape, b, "dec_final", z)?;
    }
    let logits = tape.matmul(z, b.id("out_proj"))?;
    Ok(DecodeOut { logits, gates })
}

/// Teacher-forced label-smoothed loss for one (source, target) pair.
/// The decoder sees [bos] ++ tgt and predicts tgt ++ [eos]. Returns the
/// scalar loss buffer and the number of predicted tokens.
#[allow(clippy::too_many_arguments)]
pub fn example_loss<S: Scalar>(
    tape: &mut Tape<S>,
    b: &BoundIds,
    src_ids: &[u32],
    tgt_ids: &[u32],
    label_smoothing: f64,
    bos: u32,
    eos: u32,
    pad: u32,
) -> Result<(BufId, usize)> {
    let enc = encode(tape, b, src_ids)?;
    let mut dec_in = Vec::with_capacity(tgt_ids.len() + 1);
    dec_in.push(bos);
    dec_in.extend_from_slice(tgt_ids);
    let mut targets = tgt_ids.to_vec();
    targets.push(eos);
    let out = decode_logits(tape, b, enc, &dec_in)?;
    let loss = tape.cross_entropy_ls(out.logits, &targets, label_smoothing, pad)?;
    Ok((loss, targets.len()))
}

//! Token-gated domain routing.
//!
//! Each routed sublayer output is replaced by a convex mixture of two linear
//! paths: y = g(z) * (f_z W_dom) + (1 - g(z)) * (f_z W_shared), where the
//! per-token gate g(z) = sigmoid(relu(z W_1 + b) W_2) is computed from the
//! sublayer *input* z and broadcast across the feature axis. One parameter
//! set serves every decoder block.

use crate::tensor::tape::{BufId, Tape};
use crate::tensor::Scalar;
use crate::Result;

/// Pre-sigmoid noise scale used when a model enables gate noise.
pub const DR_NOISE_STD: f64 = 0.1;

/// Tape bindings for the gate parameters.
#[derive(Debug, Clone, Copy)]
pub struct DrGatedIds {
    pub w_dom: BufId,
    pub w1: BufId,
    pub b: BufId,
    pub w2: BufId,
}

/// Tape bindings for the full routing layer. `gated` is absent in
/// shared-only mode, which pins the gate to zero.
#[derive(Debug, Clone, Copy)]
pub struct DrIds {
    pub w_shared: BufId,
    pub gated: Option<DrGatedIds>,
}

/// Per-token gate in (0, 1), shape T x 1.
///
/// With `noise_std > 0` and the tape in train mode, zero-mean Gaussian noise
/// is added to the pre-sigmoid logit (drawn from the tape's counter stream,
/// so it is reproducible per seed).
pub fn gate<S: Scalar>(
    tape: &mut Tape<S>,
    z: BufId,
    g: &DrGatedIds,
    noise_std: f64,
) -> Result<BufId> {
    let h = tape.matmul(z, g.w1)?;
    let h = tape.add_bias(h, g.b)?;
    let h = tape.relu(h)?;
    let mut logit = tape.matmul(h, g.w2)?;
    if noise_std > 0.0 && tape.train {
        let (rows, _) = tape.shape2(logit);
        let mut state = tape.next_stream();
        let noise: Vec<S> = (0..rows)
            .map(|_| {
                // Box-Muller from two uniform draws; u1 kept off zero.
                let u1 = 1.0 - crate::util::unit_f64(&mut state);
                let u2 = crate::util::unit_f64(&mut state);
                let n = (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos();
                S::of_f64(n * noise_std)
            })
            .collect();
        let noise_id = tape.constant_raw(rows, 1, noise)?;
        logit = tape.add(logit, noise_id)?;
    }
    tape.sigmoid(logit)
}

/// Routed sublayer output: gate from `z`, transform applied to `f_z`.
pub fn dr_forward<S: Scalar>(
    tape: &mut Tape<S>,
    z: BufId,
    f_z: BufId,
    dr: &DrIds,
    noise_std: f64,
) -> Result<BufId> {
    let shared = tape.matmul(f_z, dr.w_shared)?;
    match &dr.gated {
        None => Ok(shared),
        Some(g) => {
            let gv = gate(tape, z, g, noise_std)?;
            let dom = tape.matmul(f_z, g.w_dom)?;
            let one_minus_g = {
                let neg = tape.scale(gv, -S::one())?;
                tape.add_scalar(neg, S::one())?
            };
            let a = tape.mul_col(gv, dom)?;
            let b = tape.mul_col(one_minus_g, shared)?;
            tape.add(a, b)
        }
    }
}

/// Like `dr_forward` but also reports the gate buffer for probing; the gate
/// id is None in shared-only mode.
pub fn dr_forward_probed<S: Scalar>(
    tape: &mut Tape<S>,
    z: BufId,
    f_z: BufId,
    dr: &DrIds,
    noise_std: f64,
) -> Result<(BufId, Option<BufId>)> {
    let shared = tape.matmul(f_z, dr.w_shared)?;
    match &dr.gated {
        None => Ok((shared, None)),
        Some(g) => {
            let gv = gate(tape, z, g, noise_std)?;
            let dom = tape.matmul(f_z, g.w_dom)?;
            let one_minus_g = {
                let neg = tape.scale(gv, -S::one())?;
                tape.add_scalar(neg, S::one())?
            };
            let a = tape.mul_col(gv, dom)?;
            let b = tape.mul_col(one_minus_g, shared)?;
            Ok((tape.add(a, b)?, Some(gv)))
        }
    }
}

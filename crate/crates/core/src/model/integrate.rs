//! Collapsing a node's final slots into one representation.

use super::params::BoundSlotAttn;
use crate::autodiff::{Activation, Tape, Var};
use crate::error::{Error, Result};

fn slot_width(tape: &Tape, state: Var, num_types: usize) -> Result<usize> {
    let width = tape.shape(state).1;
    if num_types == 0 || !width.is_multiple_of(num_types) {
        return Err(Error::Shape(format!(
            "state width {width} does not split into {num_types} slots"
        )));
    }
    Ok(width / num_types)
}

fn mean_of_slots(tape: &mut Tape, state: Var, slots: &[usize], width: usize) -> Result<Var> {
    let mut acc: Option<Var> = None;
    for &t in slots {
        let s = tape.slice_cols(state, t * width, width)?;
        acc = Some(match acc {
            None => s,
            Some(a) => tape.add(a, s)?,
        });
    }
    let acc = acc.ok_or_else(|| Error::Config("no slots to integrate".into()))?;
    if slots.len() == 1 {
        return Ok(acc);
    }
    tape.scale(acc, 1.0 / slots.len() as f64)
}

/// `h_v = (1/|types|) sum_t h_v^t`.
pub fn integrate_average(tape: &mut Tape, state: Var, num_types: usize) -> Result<Var> {
    let width = slot_width(tape, state, num_types)?;
    let all: Vec<usize> = (0..num_types).collect();
    mean_of_slots(tape, state, &all, width)
}

/// Mean over the slots in `target_types` only.
pub fn integrate_target_slot(
    tape: &mut Tape,
    state: Var,
    num_types: usize,
    target_types: &[usize],
) -> Result<Var> {
    if target_types.is_empty() {
        return Err(Error::Config(
            "target slot integration needs a target type".into(),
        ));
    }
    if let Some(t) = target_types.iter().find(|&&t| t >= num_types) {
        return Err(Error::Config(format!(
            "target type {t} outside 0..{num_types}"
        )));
    }
    let width = slot_width(tape, state, num_types)?;
    mean_of_slots(tape, state, target_types, width)
}

/// `h_v = W_fc [h_v^0 | h_v^1 | ...]`, no bias.
pub fn integrate_last_fc(tape: &mut Tape, state: Var, w_fc: Var) -> Result<Var> {
    tape.matmul_nt(state, w_fc)
}

/// Slot attention. Returns the integrated `n x d_L` matrix and the `1 x |types|`
/// weights, which are shared by every node.
pub fn integrate_slot_attention(
    tape: &mut Tape,
    state: Var,
    num_types: usize,
    params: &BoundSlotAttn,
) -> Result<(Var, Var)> {
    let width = slot_width(tape, state, num_types)?;
    let mut slots = Vec::with_capacity(num_types);
    let mut scores = Vec::with_capacity(num_types);
    for t in 0..num_types {
        let h = tape.slice_cols(state, t * width, width)?;
        let pre = tape.matmul_nt(h, params.w)?;
        let pre = tape.add_row(pre, params.b)?;
        let sem = tape.activation(pre, Activation::Tanh)?;
        let proj = tape.matmul(sem, params.z)?;
        scores.push(tape.mean(proj)?);
        slots.push(h);
    }
    let scores = tape.concat_cols(&scores)?;
    let beta = tape.softmax_rows(scores)?;
    let mut out: Option<Var> = None;
    for (t, &h) in slots.iter().enumerate() {
        let b = tape.slice_cols(beta, t, 1)?;
        let weighted = tape.scale_by(h, b)?;
        out = Some(match out {
            None => weighted,
            Some(o) => tape.add(o, weighted)?,
        });
    }
    Ok((out.expect("at least one slot"), beta))
}

//! Task heads attached to the encoder for fine-tuning.

use rand::Rng;

use crate::diff::{ParamStore, ParamVars, Tape, Var};
use crate::error::{Error, Result};

/// Linear classifier on the global embedding.
pub fn init_cls_head<R: Rng + ?Sized>(params: &mut ParamStore, embedding_dim: usize, num_classes: usize, rng: &mut R) {
    params.init_linear("head.cls", embedding_dim, num_classes, rng);
}

/// 1×C logits for one embedding of length E.
pub fn cls_logits(tape: &mut Tape, pv: &ParamVars, embedding: Var) -> Result<Var> {
    let e = tape.value(embedding).len();
    let row = tape.reshape(embedding, &[1, e])?;
    tape.linear(row, pv.get("head.cls.w")?, Some(pv.get("head.cls.b")?))
}

pub fn cls_head_classes(params: &ParamStore) -> Result<usize> {
    params
        .get("head.cls.b")
        .map(|t| t.len())
        .ok_or_else(|| Error::ShapeTableMismatch("no classification head".into()))
}

/// Per-point two-layer classifier over N×F segmentation features.
pub fn init_seg_head<R: Rng + ?Sized>(
    params: &mut ParamStore,
    feature_dim: usize,
    hidden: usize,
    num_parts: usize,
    rng: &mut R,
) {
    params.init_linear("head.seg.l1", feature_dim, hidden, rng);
    params.init_linear("head.seg.l2", hidden, num_parts, rng);
}

/// N×P part logits.
pub fn seg_logits(tape: &mut Tape, pv: &ParamVars, per_point: Var) -> Result<Var> {
    let h = tape.linear(per_point, pv.get("head.seg.l1.w")?, Some(pv.get("head.seg.l1.b")?))?;
    let h = tape.relu(h)?;
    tape.linear(h, pv.get("head.seg.l2.w")?, Some(pv.get("head.seg.l2.b")?))
}

pub fn seg_head_parts(params: &ParamStore) -> Result<usize> {
    params
        .get("head.seg.l2.b")
        .map(|t| t.len())
        .ok_or_else(|| Error::ShapeTableMismatch("no segmentation head".into()))
}

/// Index of the largest logit among `allowed` (first on ties).
pub fn argmax_among(logits: &[f64], allowed: &[u32]) -> u32 {
    let mut best = allowed[0];
    for &p in &allowed[1..] {
        if logits[p as usize] > logits[best as usize] {
            best = p;
        }
    }
    best
}

pub fn argmax(logits: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in logits.iter().enumerate() {
        if *v > logits[best] {
            best = i;
        }
    }
    best
}

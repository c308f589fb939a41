//! Reconstruction and contrastive objectives.

use std::sync::Arc;

use crate::diff::{Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::geom::{chamfer_distance, Point3};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossConfig {
    /// Weight of the contrastive term; 0 disables it.
    pub lambda: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self { lambda: 1.0 }
    }
}

impl LossConfig {
    pub fn new(lambda: f64) -> Result<Self> {
        if !lambda.is_finite() || lambda < 0.0 {
            return Err(Error::InvalidArgument(format!("lambda must be finite and >= 0, got {lambda}")));
        }
        Ok(Self { lambda })
    }
}

/// Sum of the Chamfer distances of the two reconstructions to their sources.
pub fn reconstruction_loss(
    tape: &mut Tape,
    s_hat_a: Var,
    s_a: &[Point3],
    s_hat_b: Var,
    s_b: &[Point3],
) -> Result<Var> {
    let a = tape.chamfer(s_hat_a, Arc::new(s_a.to_vec()))?;
    let b = tape.chamfer(s_hat_b, Arc::new(s_b.to_vec()))?;
    tape.add(a, b)
}

pub fn reconstruction_value(s_hat_a: &[Point3], s_a: &[Point3], s_hat_b: &[Point3], s_b: &[Point3]) -> Result<f64> {
    Ok(chamfer_distance(s_hat_a, s_a)? + chamfer_distance(s_hat_b, s_b)?)
}

/// Contrastive loss of a B×E embedding batch.
pub fn contrastive_loss(tape: &mut Tape, embeddings: Var) -> Result<Var> {
    tape.contrastive(embeddings)
}

pub fn contrastive_value(embeddings: &[Vec<f64>]) -> Result<f64> {
    let b = embeddings.len();
    let e = embeddings.first().map_or(0, Vec::len);
    if embeddings.iter().any(|r| r.len() != e) {
        return Err(Error::SizeMismatch("embedding rows differ in length".into()));
    }
    let mut tape = Tape::new();
    let x = tape.constant(Tensor::matrix(b, e, embeddings.concat())?);
    let l = tape.contrastive(x)?;
    Ok(tape.value(l).data()[0])
}

pub fn total_loss(tape: &mut Tape, recon: Var, contrastive: Option<Var>, config: &LossConfig) -> Result<Var> {
    match contrastive {
        Some(c) if config.lambda != 0.0 => {
            let weighted = tape.scale(c, config.lambda)?;
            tape.add(recon, weighted)
        }
        _ => Ok(recon),
    }
}

pub fn total_value(recon: f64, contrastive: f64, config: &LossConfig) -> f64 {
    recon + config.lambda * contrastive
}

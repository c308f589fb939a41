//! Network definitions: encoder, decoder and the downstream heads.

pub mod decoder;
pub mod encoder;
pub mod heads;

use rand::Rng;

use crate::diff::{ParamStore, ParamVars, Tape, Var};
use crate::error::Result;
use crate::geom::MdSample;
pub use decoder::{Decoded, Decoder, DecoderConfig};
pub use encoder::{encode_cls, encode_seg, la_pool, onehot, Branch, Encoder, EncoderConfig};

/// Encoder plus decoder used for mixing/disentangling pre-training.
#[derive(Debug, Clone)]
pub struct MdModel {
    pub encoder: Encoder,
    pub decoder: Decoder,
}

/// Graph handles produced by one pre-training forward pass.
#[derive(Debug, Clone, Copy)]
pub struct MdForward {
    pub embedding: Var,
    pub recon_a: Decoded,
    pub recon_b: Decoded,
    /// Chamfer(ŝ_a, s_a) + Chamfer(ŝ_b, s_b).
    pub reconstruction: Var,
}

impl MdModel {
    pub fn new(encoder: EncoderConfig, decoder: DecoderConfig) -> Result<Self> {
        let e = encoder.embedding_dim;
        Ok(Self {
            encoder: Encoder::new(encoder)?,
            decoder: Decoder::new(decoder, e)?,
        })
    }

    pub fn init_params<R: Rng + ?Sized>(&self, rng: &mut R) -> ParamStore {
        let mut params = ParamStore::new();
        self.encoder.init_params(&mut params, rng);
        self.decoder.init_params(&mut params, rng);
        params
    }

    /// Encodes the mixed cloud and disentangles both sources from it.
    pub fn forward<R: Rng + ?Sized>(
        &self,
        tape: &mut Tape,
        pv: &ParamVars,
        sample: &MdSample,
        category_onehot: Option<&[f64]>,
        rng: &mut R,
        train: bool,
    ) -> Result<MdForward> {
        let embedding = self
            .encoder
            .forward_embedding(tape, pv, &sample.mixed.points, category_onehot)?;
        let recon_a = self
            .decoder
            .forward(tape, pv, embedding, &sample.cond_a.coords, rng, train)?;
        let recon_b = self
            .decoder
            .forward(tape, pv, embedding, &sample.cond_b.coords, rng, train)?;
        let reconstruction = crate::losses::reconstruction_loss(
            tape,
            recon_a.points,
            &sample.source_a.points,
            recon_b.points,
            &sample.source_b.points,
        )?;
        Ok(MdForward {
            embedding,
            recon_a,
            recon_b,
            reconstruction,
        })
    }
}

//! Instance-adaptive decoder: reconstructs one source cloud from the mixed
//! embedding, conditioned on that source's erased coordinates.

use rand::Rng;

use crate::diff::{ParamStore, ParamVars, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::geom::Point3;

#[derive(Debug, Clone, PartialEq)]
pub struct DecoderConfig {
    /// Output width of each of the three decoding units.
    pub unit_widths: Vec<usize>,
    /// Dropout probability at the embedding/condition fusion.
    pub dropout: f64,
    pub denoise_hidden: usize,
}

impl Default for DecoderConfig {
    fn default() -> Self {
        Self {
            unit_widths: vec![512, 256, 128],
            dropout: 0.5,
            denoise_hidden: 64,
        }
    }
}

impl DecoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.unit_widths.len() != 3 || self.unit_widths.contains(&0) {
            return Err(Error::InvalidArgument(format!(
                "decoder needs three non-zero unit widths, got {:?}",
                self.unit_widths
            )));
        }
        if !(0.0..1.0).contains(&self.dropout) || self.denoise_hidden == 0 {
            return Err(Error::InvalidArgument(format!("invalid decoder config {self:?}")));
        }
        Ok(())
    }
}

/// Decoder outputs for one reconstruction.
#[derive(Debug, Clone, Copy)]
pub struct Decoded {
    /// N×3 cloud before denoising.
    pub noisy: Var,
    /// N×3 denoised reconstruction.
    pub points: Var,
    /// N×1 per-point denoise weights in (0, 1).
    pub weights: Var,
}

/// A block of per-point rows, either materialized or one row repeated N times.
#[derive(Debug, Clone, Copy)]
enum Rows {
    Full(Var),
    Repeated(Var),
}

/// `concat(parts)·w + b` without materializing the concatenation: each part
/// meets its own row slice of `w`, and repeated rows are multiplied once.
fn fused_linear(tape: &mut Tape, parts: &[Rows], n: usize, w: Var, b: Var) -> Result<Var> {
    let mut offset = 0;
    let mut repeated: Option<Var> = None;
    let mut full: Option<Var> = None;
    for part in parts {
        let (v, is_repeated) = match *part {
            Rows::Full(v) => (v, false),
            Rows::Repeated(v) => (v, true),
        };
        let width = if is_repeated {
            tape.value(v).len()
        } else {
            tape.value(v).row_len()
        };
        let slice = tape.slice_rows(w, offset, offset + width)?;
        offset += width;
        let term = if is_repeated {
            let row = tape.reshape(v, &[1, width])?;
            tape.linear(row, slice, None)?
        } else {
            tape.linear(v, slice, None)?
        };
        let acc = if is_repeated { &mut repeated } else { &mut full };
        *acc = Some(match acc.take() {
            Some(prev) => tape.add(prev, term)?,
            None => term,
        });
    }
    if offset != tape.shape(w)[0] {
        return Err(Error::shape("fused_linear", &[offset], tape.shape(w)));
    }
    let b_row = tape.reshape(b, &[1, tape.value(b).len()])?;
    let row = match repeated {
        Some(r) => tape.add(r, b_row)?,
        None => b_row,
    };
    let row = tape.broadcast_rows(row, n)?;
    match full {
        Some(f) => tape.add(f, row),
        None => Ok(row),
    }
}

#[derive(Debug, Clone)]
pub struct Decoder {
    config: DecoderConfig,
    embedding_dim: usize,
}

impl Decoder {
    pub fn new(config: DecoderConfig, embedding_dim: usize) -> Result<Self> {
        config.validate()?;
        Ok(Self { config, embedding_dim })
    }

    pub fn config(&self) -> &DecoderConfig {
        &self.config
    }

    fn unit_input_width(&self, unit: usize) -> usize {
        let prev = if unit == 0 {
            self.embedding_dim
        } else {
            self.config.unit_widths[unit - 1]
        };
        prev + 3
    }

    pub fn init_params<R: Rng + ?Sized>(&self, params: &mut ParamStore, rng: &mut R) {
        for (u, &width) in self.config.unit_widths.iter().enumerate() {
            let cin = self.unit_input_width(u);
            params.init_linear(&format!("dec.u{u}.res1"), cin, cin, rng);
            params.init_linear(&format!("dec.u{u}.res2"), cin, cin, rng);
            params.init_linear(&format!("dec.u{u}.reduce"), 2 * cin, width, rng);
        }
        params.init_linear("dec.out", self.config.unit_widths[2], 3, rng);
        let proj: Vec<f64> = (0..3).map(|_| rng.random_range(-1.0..1.0) / 3f64.sqrt()).collect();
        params.insert("den.proj.w", Tensor::from_parts(vec![3, 1], proj));
        params.init_linear("den.l1", 1, self.config.denoise_hidden, rng);
        params.init_linear("den.l2", self.config.denoise_hidden, 1, rng);
    }

    /// Noisy reconstruction `D(f, cond)` followed by the denoise block.
    ///
    /// `f` has length E. Dropout runs only when `train` is set: once on the
    /// embedding before it is repeated over points, and once on the first
    /// hidden layer that mixes embedding and condition.
    pub fn forward<R: Rng + ?Sized>(
        &self,
        tape: &mut Tape,
        pv: &ParamVars,
        f: Var,
        cond: &[Point3],
        rng: &mut R,
        train: bool,
    ) -> Result<Decoded> {
        let n = cond.len();
        if n == 0 {
            return Err(Error::EmptyCloud);
        }
        if tape.value(f).len() != self.embedding_dim {
            return Err(Error::shape("decode", &[self.embedding_dim], tape.shape(f)));
        }
        let cond = tape.constant(Tensor::matrix(n, 3, cond.iter().flatten().copied().collect())?);
        let f = tape.dropout(f, self.config.dropout, rng, train)?;

        let mut input = vec![Rows::Repeated(f), Rows::Full(cond)];
        let mut out = None;
        for u in 0..self.config.unit_widths.len() {
            let p = |s: &str| pv.get(&format!("dec.u{u}.{s}"));
            let h = fused_linear(tape, &input, n, p("res1.w")?, p("res1.b")?)?;
            let mut h = tape.relu(h)?;
            if u == 0 {
                h = tape.dropout(h, self.config.dropout, rng, train)?;
            }
            let h = tape.linear(h, p("res2.w")?, Some(p("res2.b")?))?;
            let h = tape.relu(h)?;
            let mut skip = input.clone();
            skip.push(Rows::Full(h));
            let reduced = fused_linear(tape, &skip, n, p("reduce.w")?, p("reduce.b")?)?;
            let reduced = tape.relu(reduced)?;
            input = vec![Rows::Full(reduced), Rows::Full(cond)];
            out = Some(reduced);
        }
        let out = out.expect("three decoding units");
        let noisy = tape.linear(out, pv.get("dec.out.w")?, Some(pv.get("dec.out.b")?))?;
        let (points, weights) = denoise(tape, pv, noisy)?;
        Ok(Decoded { noisy, points, weights })
    }
}

/// Rescales each point by a sigmoid weight computed from its own projected
/// score plus the score averaged over all points.
pub fn denoise(tape: &mut Tape, pv: &ParamVars, noisy: Var) -> Result<(Var, Var)> {
    let n = tape.value(noisy).rows();
    let score = tape.linear(noisy, pv.get("den.proj.w")?, None)?;
    let context = tape.reduce_mean(score, 0)?;
    let context = tape.broadcast_rows(context, n)?;
    let z = tape.add(score, context)?;
    let h = tape.linear(z, pv.get("den.l1.w")?, Some(pv.get("den.l1.b")?))?;
    let h = tape.relu(h)?;
    let s = tape.linear(h, pv.get("den.l2.w")?, Some(pv.get("den.l2.b")?))?;
    let w = tape.sigmoid(s)?;
    let out = tape.scale_rows(noisy, w)?;
    Ok((out, w))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::norm;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn setup(e: usize) -> (Decoder, ParamStore) {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let cfg = DecoderConfig {
            unit_widths: vec![16, 12, 8],
            dropout: 0.5,
            denoise_hidden: 6,
        };
        let dec = Decoder::new(cfg, e).unwrap();
        let mut params = ParamStore::new();
        dec.init_params(&mut params, &mut rng);
        (dec, params)
    }

    fn run(dec: &Decoder, params: &ParamStore, f: &[f64], cond: &[Point3], train: bool, seed: u64) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut tape = Tape::new();
        let pv = params.register(&mut tape, false);
        let fv = tape.constant(Tensor::vector(f.to_vec()));
        let d = dec.forward(&mut tape, &pv, fv, cond, &mut rng, train).unwrap();
        (
            tape.value(d.noisy).data().to_vec(),
            tape.value(d.points).data().to_vec(),
            tape.value(d.weights).data().to_vec(),
        )
    }

    fn cond(n: usize, seed: u64) -> Vec<Point3> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| {
                let mut p = [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];
                p[rng.random_range(0..3)] = 0.0;
                p
            })
            .collect()
    }

    #[test]
    fn fused_linear_matches_concat() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut tape = Tape::new();
        let n = 5;
        let f = tape.constant(Tensor::vector((0..4).map(|_| rng.random()).collect()));
        let c = tape.constant(Tensor::matrix(n, 3, (0..15).map(|_| rng.random()).collect()).unwrap());
        let w = tape.constant(Tensor::matrix(7, 2, (0..14).map(|_| rng.random()).collect()).unwrap());
        let b = tape.constant(Tensor::vector(vec![0.5, -0.5]));
        let fused = fused_linear(&mut tape, &[Rows::Repeated(f), Rows::Full(c)], n, w, b).unwrap();
        let rep = tape.broadcast_rows(f, n).unwrap();
        let cat = tape.concat(&[rep, c], 1).unwrap();
        let plain = tape.linear(cat, w, Some(b)).unwrap();
        for (a, e) in tape.value(fused).data().iter().zip(tape.value(plain).data()) {
            assert!((a - e).abs() < 1e-12);
        }
    }

    #[test]
    fn output_shapes() {
        let (dec, params) = setup(10);
        for n in [1, 7] {
            let (noisy, pts, w) = run(&dec, &params, &[0.3; 10], &cond(n, 1), false, 0);
            assert_eq!(noisy.len(), 3 * n);
            assert_eq!(pts.len(), 3 * n);
            assert_eq!(w.len(), n);
        }
    }

    #[test]
    fn empty_condition_is_rejected() {
        let (dec, params) = setup(10);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut tape = Tape::new();
        let pv = params.register(&mut tape, false);
        let fv = tape.constant(Tensor::vector(vec![0.0; 10]));
        assert!(matches!(dec.forward(&mut tape, &pv, fv, &[], &mut rng, false), Err(Error::EmptyCloud)));
    }

    #[test]
    fn instance_adaptive() {
        let (dec, params) = setup(10);
        let f: Vec<f64> = (0..10).map(|i| (i as f64).sin()).collect();
        let a = run(&dec, &params, &f, &cond(16, 1), false, 0).1;
        let b = run(&dec, &params, &f, &cond(16, 2), false, 0).1;
        assert_ne!(a, b);
    }

    #[test]
    fn eval_is_deterministic_and_train_uses_dropout() {
        let (dec, params) = setup(10);
        let f = [0.7; 10];
        let c = cond(9, 4);
        assert_eq!(run(&dec, &params, &f, &c, false, 1), run(&dec, &params, &f, &c, false, 2));
        assert_ne!(run(&dec, &params, &f, &c, true, 1), run(&dec, &params, &f, &c, true, 2));
    }

    #[test]
    fn denoise_shrinks_points() {
        let (dec, params) = setup(10);
        let (noisy, pts, w) = run(&dec, &params, &[0.2; 10], &cond(20, 5), false, 0);
        for i in 0..20 {
            assert!(w[i] > 0.0 && w[i] < 1.0);
            let a = [noisy[3 * i], noisy[3 * i + 1], noisy[3 * i + 2]];
            let b = [pts[3 * i], pts[3 * i + 1], pts[3 * i + 2]];
            assert!(norm(&b) < norm(&a));
            for c in 0..3 {
                assert!((b[c] - w[i] * a[c]).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn scale_rows_by_half() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::matrix(1, 3, vec![2.0, 0.0, 0.0]).unwrap());
        let w = tape.constant(Tensor::matrix(1, 1, vec![0.5]).unwrap());
        let y = tape.scale_rows(x, w).unwrap();
        assert_eq!(tape.value(y).data(), &[1.0, 0.0, 0.0]);
    }

    #[test]
    fn permutation_equivariance() {
        let (dec, params) = setup(10);
        let f = [0.1, -0.2, 0.3, 0.4, -0.5, 0.6, 0.7, -0.8, 0.9, 1.0];
        let c = cond(12, 8);
        let perm: Vec<usize> = (0..12).rev().collect();
        let pc: Vec<Point3> = perm.iter().map(|&i| c[i]).collect();
        let a = run(&dec, &params, &f, &c, false, 0).1;
        let b = run(&dec, &params, &f, &pc, false, 0).1;
        for (j, &i) in perm.iter().enumerate() {
            for d in 0..3 {
                assert!((b[3 * j + d] - a[3 * i + d]).abs() < 1e-9);
            }
        }
    }
}

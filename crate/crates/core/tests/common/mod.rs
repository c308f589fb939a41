//! Shared oracles and fixtures for the integration tests.
#![allow(dead_code)]

use std::collections::BTreeMap;
use std::sync::Arc;

use pointmix::dataio::Checkpoint;
use pointmix::diff::{grad_check, grad_check_at, logit, AdamState, GradCheckReport, ParamStore, Tape, Tensor, Var};
use pointmix::geom::{knn_graph, mix, MdSample, Point3, PointCloud};
use pointmix::losses::{total_loss, LossConfig};
use pointmix::model::{la_pool, Branch, DecoderConfig, EncoderConfig, MdModel};
use pointmix::Result;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform(rng: &mut impl Rng, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(lo..hi)).collect()
}

pub fn tensor(rng: &mut impl Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape, uniform(rng, n, -1.0, 1.0)).unwrap()
}

/// Values bounded away from zero, for kinked ops.
pub fn away_from_zero(rng: &mut impl Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let m = rng.random_range(0.1..1.0);
            if rng.random::<bool>() {
                m
            } else {
                -m
            }
        })
        .collect();
    Tensor::new(shape, data).unwrap()
}

pub fn points(rng: &mut impl Rng, n: usize) -> Vec<Point3> {
    (0..n)
        .map(|_| [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)])
        .collect()
}

/// Points on a coarse lattice, so distance ties and duplicates are common.
pub fn lattice_points(rng: &mut impl Rng, n: usize) -> Vec<Point3> {
    (0..n)
        .map(|_| {
            [
                rng.random_range(-2..=2) as f64 * 0.5,
                rng.random_range(-2..=2) as f64 * 0.5,
                rng.random_range(-1..=1) as f64 * 0.5,
            ]
        })
        .collect()
}

pub fn cloud(rng: &mut impl Rng, n: usize) -> PointCloud {
    PointCloud::new(points(rng, n)).unwrap()
}

/// O(N·M) Chamfer with every pairwise distance written out.
pub fn chamfer_oracle(a: &[Point3], b: &[Point3]) -> f64 {
    let d = |p: &Point3, q: &Point3| ((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2) + (p[2] - q[2]).powi(2)).sqrt();
    let one_way = |x: &[Point3], y: &[Point3]| {
        x.iter()
            .map(|p| y.iter().map(|q| d(p, q)).fold(f64::INFINITY, f64::min))
            .sum::<f64>()
            / x.len() as f64
    };
    one_way(a, b) + one_way(b, a)
}

/// Neighbor lists by fully sorting every other row on (distance, index).
pub fn knn_oracle(features: &[f64], cols: usize, k: usize) -> Vec<Vec<usize>> {
    let n = features.len() / cols;
    (0..n)
        .map(|i| {
            let mut all: Vec<(f64, usize)> = (0..n)
                .filter(|&j| j != i)
                .map(|j| {
                    let d = (0..cols)
                        .map(|c| (features[i * cols + c] - features[j * cols + c]).powi(2))
                        .sum::<f64>();
                    (d, j)
                })
                .collect();
            all.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
            all.into_iter().take(k).map(|(_, j)| j).collect()
        })
        .collect()
}

/// Pairwise-loop contrastive loss: mean over all (i, j) of |(cos_ij + 1)/2 - [i = j]|.
pub fn contrastive_oracle(rows: &[Vec<f64>]) -> f64 {
    let b = rows.len();
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let mut total = 0.0;
    for i in 0..b {
        for j in 0..b {
            let dot: f64 = rows[i].iter().zip(&rows[j]).map(|(x, y)| x * y).sum();
            let q = dot / (norm(&rows[i]) * norm(&rows[j]));
            let target = if i == j { 1.0 } else { 0.0 };
            total += ((q + 1.0) / 2.0 - target).abs();
        }
    }
    total / (b * b) as f64
}

/// Reduces any tensor output to a scalar with fixed random weights.
fn weighted_sum(t: &mut Tape, y: Var, seed: u64) -> Result<Var> {
    let shape = t.shape(y).to_vec();
    let w = t.constant(tensor(&mut rng(seed), &shape));
    let p = t.mul(y, w)?;
    t.sum(p)
}

type Case = (&'static str, Vec<Tensor>, Box<dyn Fn(&mut Tape, &[Var]) -> Result<Var>>);

/// One grad-check case per differentiable tape primitive.
pub fn primitive_cases(seed: u64) -> Vec<Case> {
    let mut r = rng(seed);
    let graph_pts: Vec<f64> = uniform(&mut r, 7 * 3, -1.0, 1.0);
    let graph = Arc::new(knn_graph(&graph_pts, 3, 3).unwrap());
    let target: Arc<Vec<Point3>> = Arc::new(points(&mut r, 6));
    let g1 = graph.clone();
    let g2 = graph.clone();
    let mut cases: Vec<Case> = vec![
        ("add", vec![tensor(&mut r, &[3, 4]), tensor(&mut r, &[3, 4])], Box::new(|t, v| {
            let y = t.add(v[0], v[1])?;
            weighted_sum(t, y, 1)
        })),
        ("sub", vec![tensor(&mut r, &[3, 4]), tensor(&mut r, &[3, 4])], Box::new(|t, v| {
            let y = t.sub(v[0], v[1])?;
            weighted_sum(t, y, 2)
        })),
        ("mul", vec![tensor(&mut r, &[3, 4]), tensor(&mut r, &[3, 4])], Box::new(|t, v| {
            let y = t.mul(v[0], v[1])?;
            weighted_sum(t, y, 3)
        })),
        ("scale", vec![tensor(&mut r, &[5])], Box::new(|t, v| {
            let y = t.scale(v[0], -1.7)?;
            weighted_sum(t, y, 4)
        })),
        ("scale_by", vec![tensor(&mut r, &[2, 3]), Tensor::vector(vec![0.4])], Box::new(|t, v| {
            let y = t.scale_by(v[0], v[1])?;
            weighted_sum(t, y, 5)
        })),
        ("scale_rows", vec![tensor(&mut r, &[4, 3]), tensor(&mut r, &[4, 1])], Box::new(|t, v| {
            let y = t.scale_rows(v[0], v[1])?;
            weighted_sum(t, y, 6)
        })),
        ("matmul", vec![tensor(&mut r, &[3, 4]), tensor(&mut r, &[4, 2])], Box::new(|t, v| {
            let y = t.matmul(v[0], v[1])?;
            weighted_sum(t, y, 7)
        })),
        ("linear", vec![tensor(&mut r, &[5, 3]), tensor(&mut r, &[3, 4]), tensor(&mut r, &[4])], Box::new(|t, v| {
            let y = t.linear(v[0], v[1], Some(v[2]))?;
            weighted_sum(t, y, 8)
        })),
        ("relu", vec![away_from_zero(&mut r, &[4, 4])], Box::new(|t, v| {
            let y = t.relu(v[0])?;
            weighted_sum(t, y, 9)
        })),
        ("sigmoid", vec![tensor(&mut r, &[6])], Box::new(|t, v| {
            let y = t.sigmoid(v[0])?;
            weighted_sum(t, y, 10)
        })),
        ("concat_rows", vec![tensor(&mut r, &[2, 3]), tensor(&mut r, &[4, 3])], Box::new(|t, v| {
            let y = t.concat(&[v[0], v[1]], 0)?;
            weighted_sum(t, y, 11)
        })),
        ("concat_cols", vec![tensor(&mut r, &[3, 2]), tensor(&mut r, &[3, 5])], Box::new(|t, v| {
            let y = t.concat(&[v[0], v[1]], 1)?;
            weighted_sum(t, y, 12)
        })),
        ("gather_rows", vec![tensor(&mut r, &[4, 3])], Box::new(|t, v| {
            let y = t.gather_rows(v[0], &[3, 0, 3, 1, 1])?;
            weighted_sum(t, y, 13)
        })),
        ("gather_neighbors", vec![tensor(&mut r, &[7, 2])], Box::new(move |t, v| {
            let y = t.gather_neighbors(v[0], &g1)?;
            weighted_sum(t, y, 14)
        })),
        ("slice_rows", vec![tensor(&mut r, &[5, 2])], Box::new(|t, v| {
            let y = t.slice_rows(v[0], 1, 4)?;
            weighted_sum(t, y, 15)
        })),
        ("reduce_max", vec![tensor(&mut r, &[4, 5, 3])], Box::new(|t, v| {
            let y = t.reduce_max(v[0], 1)?;
            weighted_sum(t, y, 16)
        })),
        ("reduce_mean", vec![tensor(&mut r, &[4, 5, 3])], Box::new(|t, v| {
            let y = t.reduce_mean(v[0], 1)?;
            weighted_sum(t, y, 17)
        })),
        ("broadcast_rows", vec![tensor(&mut r, &[1, 4])], Box::new(|t, v| {
            let y = t.broadcast_rows(v[0], 3)?;
            weighted_sum(t, y, 18)
        })),
        ("reshape", vec![tensor(&mut r, &[2, 6])], Box::new(|t, v| {
            let y = t.reshape(v[0], &[3, 4])?;
            weighted_sum(t, y, 19)
        })),
        ("dropout", vec![tensor(&mut r, &[5, 4])], Box::new(|t, v| {
            let y = t.dropout(v[0], 0.3, &mut rng(77), true)?;
            weighted_sum(t, y, 20)
        })),
        ("sum", vec![tensor(&mut r, &[3, 3])], Box::new(|t, v| {
            let sq = t.mul(v[0], v[0])?;
            t.sum(sq)
        })),
        ("edge_linear", vec![tensor(&mut r, &[7, 3]), tensor(&mut r, &[6, 4]), tensor(&mut r, &[4])], Box::new(move |t, v| {
            let y = t.edge_linear(v[0], &g2, v[1], v[2])?;
            weighted_sum(t, y, 21)
        })),
        ("chamfer", vec![Tensor::matrix(5, 3, uniform(&mut r, 15, -1.0, 1.0)).unwrap()], Box::new(move |t, v| {
            t.chamfer(v[0], target.clone())
        })),
        ("contrastive", vec![tensor(&mut r, &[3, 5])], Box::new(|t, v| t.contrastive(v[0]))),
        ("cross_entropy", vec![tensor(&mut r, &[4, 3])], Box::new(|t, v| t.cross_entropy(v[0], &[2, 0, 1, 2]))),
        ("la_pool", vec![tensor(&mut r, &[4, 5, 3]), Tensor::vector(vec![0.2])], Box::new(|t, v| {
            let y = la_pool(t, v[0], 1, v[1])?;
            weighted_sum(t, y, 22)
        })),
    ];
    cases.shrink_to_fit();
    cases
}

/// Worst relative error of every primitive against central differences.
pub fn primitive_grad_errors(seed: u64) -> Vec<(&'static str, f64)> {
    primitive_cases(seed)
        .into_iter()
        .map(|(name, point, f)| {
            let report = grad_check(|t, v| f(t, v), &point, 1e-5).unwrap_or_else(|e| panic!("{name}: {e}"));
            (name, report.max_rel_error)
        })
        .collect()
}

pub fn small_model(k: usize) -> MdModel {
    MdModel::new(
        EncoderConfig {
            branch: Branch::Classification,
            k,
            cls_channels: vec![8, 8, 8, 8],
            seg_channels: vec![8, 8, 8],
            embedding_dim: 16,
            num_categories: 1,
        },
        DecoderConfig {
            unit_widths: vec![12, 8, 8],
            dropout: 0.5,
            denoise_hidden: 6,
        },
    )
    .unwrap()
}

pub fn md_samples(seed: u64, n: usize, b: usize) -> Vec<MdSample> {
    let mut r = rng(seed);
    (0..b)
        .map(|_| {
            let a = cloud(&mut r, n);
            let c = cloud(&mut r, n);
            mix(&a, &c, &mut r).unwrap()
        })
        .collect()
}

/// Batch objective: mean reconstruction plus λ·contrastive, in training mode
/// with a fixed dropout mask.
pub fn batch_objective(
    t: &mut Tape,
    model: &MdModel,
    params: &ParamStore,
    vars: &[Var],
    samples: &[MdSample],
    lambda: f64,
) -> Result<Var> {
    let pv = params.bind(vars)?;
    let mut drop = rng(99);
    let mut recon = None;
    let mut embeddings = Vec::new();
    for s in samples {
        let out = model.forward(t, &pv, s, None, &mut drop, true)?;
        recon = Some(match recon {
            None => out.reconstruction,
            Some(r) => t.add(r, out.reconstruction)?,
        });
        embeddings.push(out.embedding);
    }
    let recon = t.scale(recon.unwrap(), 1.0 / samples.len() as f64)?;
    let e = t.value(embeddings[0]).len();
    let stacked = t.concat(&embeddings, 0)?;
    let stacked = t.reshape(stacked, &[samples.len(), e])?;
    let contrastive = t.contrastive(stacked)?;
    total_loss(t, recon, Some(contrastive), &LossConfig::new(lambda)?)
}

/// Composite encoder → decoder → total-loss check at N=64, k=4, B=2 over a
/// sample of coordinates that touches every parameter tensor.
pub fn composite_grad_report(seed: u64, per_tensor: usize) -> GradCheckReport {
    let model = small_model(4);
    let params = model.init_params(&mut rng(seed));
    let samples = md_samples(seed + 1, 64, 2);
    let point: Vec<Tensor> = params.iter().map(|(_, t)| t.clone()).collect();
    let mut r = rng(seed + 2);
    let mut coords = Vec::new();
    for (i, t) in point.iter().enumerate() {
        let mut idx: Vec<usize> = (0..t.len()).collect();
        idx.shuffle(&mut r);
        coords.extend(idx.into_iter().take(per_tensor).map(|j| (i, j)));
    }
    grad_check_at(
        |t, v| batch_objective(t, &model, &params, v, &samples, 1.0),
        &point,
        1e-6,
        &coords,
    )
    .unwrap()
}

/// Raw LA parameter that yields `alpha`; the endpoints use a saturating value.
pub fn raw_for_alpha(alpha: f64) -> f64 {
    match alpha {
        a if a <= 0.0 => -60.0,
        a if a >= 1.0 => 60.0,
        a => logit(a),
    }
}

/// Cloud with coordinates spread over six decades.
pub fn random_cloud(seed: u64, n: usize, labels: bool, category: Option<u32>) -> PointCloud {
    let mut r = rng(seed);
    let points = (0..n)
        .map(|_| [0, 1, 2].map(|_| r.random_range(-10.0..10.0) * 10f64.powi(r.random_range(-3..3))))
        .collect();
    let labels = labels.then(|| (0..n).map(|_| r.random_range(0..50u32)).collect());
    PointCloud::with_labels(points, labels, category).unwrap()
}

pub fn random_checkpoint(seed: u64, tensors: usize, with_adam: bool) -> Checkpoint {
    let mut r = rng(seed);
    let mut params = ParamStore::new();
    for i in 0..tensors {
        let shape: Vec<usize> = (0..r.random_range(0..=3)).map(|_| r.random_range(1..5)).collect();
        let n = shape.iter().product();
        let data = (0..n).map(|_| r.random_range(-1e3..1e3) * r.random::<f64>().powi(7)).collect();
        params.insert(format!("layer{i}.{}", ["w", "b", "alpha"][i % 3]), Tensor::new(&shape, data).unwrap());
    }
    let mut config = BTreeMap::new();
    for i in 0..r.random_range(0..6) {
        config.insert(format!("key{i}"), format!("value {} é", r.random::<u32>()));
    }
    let mut ck = Checkpoint::new(config, params);
    if with_adam {
        let mut adam = AdamState::new(&ck.params, 0.9, 0.99, 1e-8);
        adam.step = r.random();
        for t in adam.m.iter_mut().chain(adam.v.iter_mut()) {
            for v in t.data_mut() {
                *v = r.random_range(-1.0..1.0);
            }
        }
        ck.adam = Some(adam);
    }
    ck.epoch = r.random();
    ck.step = r.random();
    ck
}

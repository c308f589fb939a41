//! EdgeConv graph encoder with learnable max/average aggregation.

use rand::Rng;

use crate::diff::{ParamStore, ParamVars, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::geom::{knn_graph, NeighborGraph, Point3};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Branch {
    Classification,
    Segmentation,
}

impl Branch {
    pub fn as_str(self) -> &'static str {
        match self {
            Branch::Classification => "cls",
            Branch::Segmentation => "seg",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "cls" | "classification" => Ok(Branch::Classification),
            "seg" | "segmentation" => Ok(Branch::Segmentation),
            other => Err(Error::InvalidArgument(format!("unknown encoder branch {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderConfig {
    pub branch: Branch,
    pub k: usize,
    pub cls_channels: Vec<usize>,
    pub seg_channels: Vec<usize>,
    pub embedding_dim: usize,
    /// Length of the category one-hot fused into the segmentation embedding.
    pub num_categories: usize,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            branch: Branch::Classification,
            k: 20,
            cls_channels: vec![64, 64, 128, 256],
            seg_channels: vec![64, 64, 64],
            embedding_dim: 1024,
            num_categories: 16,
        }
    }
}

impl EncoderConfig {
    /// Output widths of the EdgeConv stack for the configured branch.
    pub fn channels(&self) -> &[usize] {
        match self.branch {
            Branch::Classification => &self.cls_channels,
            Branch::Segmentation => &self.seg_channels,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.k >= 1
            && !self.channels().is_empty()
            && self.channels().iter().all(|&c| c > 0)
            && self.embedding_dim > 0
            && (self.branch == Branch::Classification || self.num_categories > 0);
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!("invalid encoder config {self:?}")))
        }
    }

    /// Width of the per-point segmentation features: embedding plus every layer's output.
    pub fn point_feature_dim(&self) -> usize {
        self.embedding_dim + self.seg_channels.iter().sum::<usize>()
    }
}

/// Learnable aggregation along `axis`: `α·max + (1-α)·avg` with `α = sigmoid(alpha_raw)`.
pub fn la_pool(tape: &mut Tape, x: Var, axis: usize, alpha_raw: Var) -> Result<Var> {
    let alpha = tape.sigmoid(alpha_raw)?;
    let max = tape.reduce_max(x, axis)?;
    let avg = tape.reduce_mean(x, axis)?;
    let spread = tape.sub(max, avg)?;
    let lifted = tape.scale_by(spread, alpha)?;
    tape.add(avg, lifted)
}

/// One EdgeConv layer: per-edge `relu(concat(x_i, x_i - x_k)·w + b)`, then
/// learnable aggregation over each point's neighbors.
pub fn edgeconv_forward(
    tape: &mut Tape,
    x: Var,
    graph: &NeighborGraph,
    w: Var,
    b: Var,
    alpha_raw: Var,
) -> Result<Var> {
    let pre = tape.edge_linear(x, graph, w, b)?;
    let act = tape.relu(pre)?;
    la_pool(tape, act, 1, alpha_raw)
}

/// Explicit N×k×2C edge features `concat(x_i, x_i - x_k)`, built from gathers.
pub fn edge_features(tape: &mut Tape, x: Var, graph: &NeighborGraph) -> Result<Var> {
    let (n, k) = (graph.num_points(), graph.k());
    let c = tape.value(x).row_len();
    let centers: Vec<usize> = (0..n).flat_map(|i| std::iter::repeat_n(i, k)).collect();
    let own = tape.gather_rows(x, &centers)?;
    let own = tape.reshape(own, &[n, k, c])?;
    let nbr = tape.gather_neighbors(x, graph)?;
    let diff = tape.sub(own, nbr)?;
    tape.concat(&[own, diff], 2)
}

/// Output of the segmentation branch.
#[derive(Debug, Clone, Copy)]
pub struct SegFeatures {
    /// N×F per-point features.
    pub per_point: Var,
    /// Category-fused global embedding, length E.
    pub embedding: Var,
}

#[derive(Debug, Clone)]
pub struct Encoder {
    config: EncoderConfig,
}

impl Encoder {
    pub fn new(config: EncoderConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self { config })
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.config
    }

    pub fn init_params<R: Rng + ?Sized>(&self, params: &mut ParamStore, rng: &mut R) {
        let mut cin = 3;
        for (i, &cout) in self.config.channels().iter().enumerate() {
            params.init_linear(&format!("enc.ec{i}"), 2 * cin, cout, rng);
            params.insert(format!("enc.ec{i}.alpha_raw"), Tensor::vector(vec![0.0]));
            cin = cout;
        }
        let skip: usize = self.config.channels().iter().sum();
        let e = self.config.embedding_dim;
        params.init_linear("enc.embed", skip, e, rng);
        params.insert("enc.global.alpha_raw", Tensor::vector(vec![0.0]));
        if self.config.branch == Branch::Segmentation {
            params.init_linear("enc.cat", e + self.config.num_categories, e, rng);
        }
    }

    fn check_points(&self, points: &[Point3]) -> Result<()> {
        if points.len() <= self.config.k {
            return Err(Error::KTooLarge {
                k: self.config.k,
                n: points.len(),
            });
        }
        Ok(())
    }

    /// EdgeConv stack with a fresh k-NN graph on every layer's input features.
    fn backbone(
        &self,
        tape: &mut Tape,
        pv: &ParamVars,
        points: &[Point3],
        mut graphs: Option<&mut Vec<NeighborGraph>>,
    ) -> Result<Vec<Var>> {
        self.check_points(points)?;
        let n = points.len();
        let coords = Tensor::matrix(n, 3, points.iter().flatten().copied().collect())?;
        let mut x = tape.constant(coords);
        let mut layers = Vec::with_capacity(self.config.channels().len());
        for i in 0..self.config.channels().len() {
            let graph = {
                let t = tape.value(x);
                knn_graph(t.data(), t.row_len(), self.config.k)?
            };
            x = edgeconv_forward(
                tape,
                x,
                &graph,
                pv.get(&format!("enc.ec{i}.w"))?,
                pv.get(&format!("enc.ec{i}.b"))?,
                pv.get(&format!("enc.ec{i}.alpha_raw"))?,
            )?;
            if let Some(g) = graphs.as_deref_mut() {
                g.push(graph);
            }
            layers.push(x);
        }
        Ok(layers)
    }

    /// Skip-concatenated layer features mapped to E channels and pooled over all points.
    fn global(&self, tape: &mut Tape, pv: &ParamVars, layers: &[Var]) -> Result<Var> {
        let skip = tape.concat(layers, 1)?;
        let h = tape.linear(skip, pv.get("enc.embed.w")?, Some(pv.get("enc.embed.b")?))?;
        let h = tape.relu(h)?;
        la_pool(tape, h, 0, pv.get("enc.global.alpha_raw")?)
    }

    /// Global embedding (length E) of a cloud.
    pub fn forward_cls(&self, tape: &mut Tape, pv: &ParamVars, points: &[Point3]) -> Result<Var> {
        let layers = self.backbone(tape, pv, points, None)?;
        self.global(tape, pv, &layers)
    }

    /// Per-point features and category-fused embedding.
    pub fn forward_seg(
        &self,
        tape: &mut Tape,
        pv: &ParamVars,
        points: &[Point3],
        category_onehot: &[f64],
    ) -> Result<SegFeatures> {
        check_onehot(category_onehot, self.config.num_categories)?;
        let layers = self.backbone(tape, pv, points, None)?;
        let f = self.global(tape, pv, &layers)?;
        let cat = tape.constant(Tensor::vector(category_onehot.to_vec()));
        let joined = tape.concat(&[f, cat], 0)?;
        let e = self.config.embedding_dim;
        let joined = tape.reshape(joined, &[1, e + self.config.num_categories])?;
        let fused = tape.linear(joined, pv.get("enc.cat.w")?, Some(pv.get("enc.cat.b")?))?;
        let repeated = tape.broadcast_rows(fused, points.len())?;
        let mut parts = vec![repeated];
        parts.extend(layers);
        let per_point = tape.concat(&parts, 1)?;
        let embedding = tape.reshape(fused, &[e])?;
        Ok(SegFeatures { per_point, embedding })
    }

    /// Branch-appropriate embedding; segmentation requires a category one-hot.
    pub fn forward_embedding(
        &self,
        tape: &mut Tape,
        pv: &ParamVars,
        points: &[Point3],
        category_onehot: Option<&[f64]>,
    ) -> Result<Var> {
        match self.config.branch {
            Branch::Classification => self.forward_cls(tape, pv, points),
            Branch::Segmentation => {
                let onehot = category_onehot
                    .ok_or_else(|| Error::BadOneHot("segmentation branch needs a category vector".into()))?;
                Ok(self.forward_seg(tape, pv, points, onehot)?.embedding)
            }
        }
    }

    /// The k-NN graph used by every layer, in order.
    pub fn layer_graphs(&self, params: &ParamStore, points: &[Point3]) -> Result<Vec<NeighborGraph>> {
        let mut tape = Tape::new();
        let pv = params.register(&mut tape, false);
        let mut graphs = Vec::new();
        self.backbone(&mut tape, &pv, points, Some(&mut graphs))?;
        Ok(graphs)
    }
}

pub fn check_onehot(v: &[f64], num_categories: usize) -> Result<()> {
    if v.len() != num_categories {
        return Err(Error::BadOneHot(format!(
            "length {} but {num_categories} categories",
            v.len()
        )));
    }
    let ones = v.iter().filter(|&&x| x == 1.0).count();
    if ones != 1 || v.iter().any(|&x| x != 0.0 && x != 1.0) {
        return Err(Error::BadOneHot(format!("expected exactly one 1, got {v:?}")));
    }
    Ok(())
}

pub fn onehot(category: usize, num_categories: usize) -> Result<Vec<f64>> {
    if category >= num_categories {
        return Err(Error::BadOneHot(format!(
            "category {category} out of range for {num_categories}"
        )));
    }
    let mut v = vec![0.0; num_categories];
    v[category] = 1.0;
    Ok(v)
}

/// Embedding of one cloud with fixed parameters.
pub fn encode_cls(points: &[Point3], config: &EncoderConfig, params: &ParamStore) -> Result<Vec<f64>> {
    let enc = Encoder::new(EncoderConfig {
        branch: Branch::Classification,
        ..config.clone()
    })?;
    let mut tape = Tape::new();
    let pv = params.register(&mut tape, false);
    let f = enc.forward_cls(&mut tape, &pv, points)?;
    Ok(tape.value(f).data().to_vec())
}

/// Per-point features (row-major N×F) and embedding of one cloud.
pub fn encode_seg(
    points: &[Point3],
    category_onehot: &[f64],
    config: &EncoderConfig,
    params: &ParamStore,
) -> Result<(Tensor, Vec<f64>)> {
    let enc = Encoder::new(EncoderConfig {
        branch: Branch::Segmentation,
        ..config.clone()
    })?;
    let mut tape = Tape::new();
    let pv = params.register(&mut tape, false);
    let out = enc.forward_seg(&mut tape, &pv, points, category_onehot)?;
    Ok((tape.value(out.per_point).clone(), tape.value(out.embedding).data().to_vec()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diff::{grad_check, logit};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_points(n: usize, rng: &mut ChaCha8Rng) -> Vec<Point3> {
        (0..n)
            .map(|_| [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)])
            .collect()
    }

    fn small_config(branch: Branch) -> EncoderConfig {
        EncoderConfig {
            branch,
            k: 4,
            cls_channels: vec![8, 8, 12, 16],
            seg_channels: vec![8, 8, 8],
            embedding_dim: 24,
            num_categories: 3,
        }
    }

    #[test]
    fn identity_mlp_reproduces_edge_features() {
        let pts = vec![[0.5, -1.0, 2.0], [1.5, 0.25, -0.5]];
        let graph = NeighborGraph::from_rows(vec![vec![1], vec![0]]).unwrap();
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::matrix(2, 3, pts.iter().flatten().copied().collect()).unwrap());
        let mut eye = vec![0.0; 36];
        for i in 0..6 {
            eye[i * 6 + i] = 1.0;
        }
        let w = tape.constant(Tensor::matrix(6, 6, eye).unwrap());
        let b = tape.constant(Tensor::zeros(&[6]));
        let r = tape.edge_linear(x, &graph, w, b).unwrap();
        let explicit = edge_features(&mut tape, x, &graph).unwrap();
        assert_eq!(tape.value(r).data(), tape.value(explicit).data());
        assert_eq!(
            &tape.value(r).data()[..6],
            &[0.5, -1.0, 2.0, 0.5 - 1.5, -1.0 - 0.25, 2.0 + 0.5]
        );
    }

    #[test]
    fn edge_linear_equals_explicit_edge_mlp() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (n, c, cout, k) = (12, 5, 7, 3);
        let data: Vec<f64> = (0..n * c).map(|_| rng.random_range(-1.0..1.0)).collect();
        let graph = knn_graph(&data, c, k).unwrap();
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::matrix(n, c, data).unwrap());
        let w = tape.constant(
            Tensor::matrix(2 * c, cout, (0..2 * c * cout).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap(),
        );
        let b = tape.constant(Tensor::vector((0..cout).map(|_| rng.random_range(-1.0..1.0)).collect()));
        let fused = tape.edge_linear(x, &graph, w, b).unwrap();
        let feats = edge_features(&mut tape, x, &graph).unwrap();
        let flat = tape.reshape(feats, &[n * k, 2 * c]).unwrap();
        let explicit = tape.linear(flat, w, Some(b)).unwrap();
        for (a, e) in tape.value(fused).data().iter().zip(tape.value(explicit).data()) {
            assert!((a - e).abs() < 1e-12);
        }
    }

    #[test]
    fn identical_points_have_zero_differences() {
        let graph = knn_graph(&[1.0; 12], 3, 2).unwrap();
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::matrix(4, 3, vec![1.0; 12]).unwrap());
        let f = edge_features(&mut tape, x, &graph).unwrap();
        for (i, v) in tape.value(f).data().iter().enumerate() {
            if i % 6 >= 3 {
                assert_eq!(*v, 0.0);
            }
        }
    }

    #[test]
    fn la_pool_hand_value_and_limits() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::new(&[1, 2, 1], vec![1.0, 3.0]).unwrap());
        let half = tape.constant(Tensor::vector(vec![0.0]));
        let y = la_pool(&mut tape, x, 1, half).unwrap();
        assert_eq!(tape.value(y).data(), &[2.5]);

        let one = tape.constant(Tensor::vector(vec![logit(1.0)]));
        let y = la_pool(&mut tape, x, 1, one).unwrap();
        assert_eq!(tape.value(y).data(), &[3.0]);
        let zero = tape.constant(Tensor::vector(vec![logit(0.0)]));
        let y = la_pool(&mut tape, x, 1, zero).unwrap();
        assert_eq!(tape.value(y).data(), &[2.0]);
    }

    #[test]
    fn embedding_shape_and_permutation_invariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let cfg = small_config(Branch::Classification);
        let enc = Encoder::new(cfg.clone()).unwrap();
        let mut params = ParamStore::new();
        enc.init_params(&mut params, &mut rng);
        let pts = random_points(30, &mut rng);
        let f = encode_cls(&pts, &cfg, &params).unwrap();
        assert_eq!(f.len(), 24);
        let mut perm = pts.clone();
        perm.reverse();
        perm.swap(3, 17);
        let g = encode_cls(&perm, &cfg, &params).unwrap();
        for (a, b) in f.iter().zip(&g) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn too_few_points() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let cfg = small_config(Branch::Classification);
        let enc = Encoder::new(cfg.clone()).unwrap();
        let mut params = ParamStore::new();
        enc.init_params(&mut params, &mut rng);
        let pts = random_points(4, &mut rng);
        assert!(matches!(encode_cls(&pts, &cfg, &params), Err(Error::KTooLarge { .. })));
    }

    #[test]
    fn seg_feature_width_and_onehot_checks() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let cfg = small_config(Branch::Segmentation);
        let enc = Encoder::new(cfg.clone()).unwrap();
        let mut params = ParamStore::new();
        enc.init_params(&mut params, &mut rng);
        let pts = random_points(20, &mut rng);
        let (feats, emb) = encode_seg(&pts, &[0.0, 1.0, 0.0], &cfg, &params).unwrap();
        assert_eq!(feats.shape(), &[20, 24 + 24]);
        assert_eq!(emb.len(), 24);
        assert!(matches!(
            encode_seg(&pts, &[0.0, 0.0, 0.0], &cfg, &params),
            Err(Error::BadOneHot(_))
        ));
        assert!(encode_seg(&pts, &[0.5, 0.5, 0.0], &cfg, &params).is_err());
        assert_eq!(EncoderConfig { branch: Branch::Segmentation, ..EncoderConfig::default() }.point_feature_dim(), 1024 + 192);
    }

    #[test]
    fn dynamic_graph_changes_between_layers() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let cfg = small_config(Branch::Classification);
        let enc = Encoder::new(cfg).unwrap();
        let mut params = ParamStore::new();
        enc.init_params(&mut params, &mut rng);
        let pts = random_points(40, &mut rng);
        let graphs = enc.layer_graphs(&params, &pts).unwrap();
        assert_eq!(graphs.len(), 4);
        assert_ne!(graphs[0], graphs[1]);
    }

    #[test]
    fn edgeconv_layer_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (n, c, cout, k) = (9, 3, 4, 3);
        let x: Vec<f64> = (0..n * c).map(|_| rng.random_range(-1.0..1.0)).collect();
        let graph = knn_graph(&x, c, k).unwrap();
        let point = vec![
            Tensor::matrix(n, c, x).unwrap(),
            Tensor::matrix(2 * c, cout, (0..2 * c * cout).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap(),
            Tensor::vector((0..cout).map(|_| rng.random_range(-1.0..1.0)).collect()),
            Tensor::vector(vec![0.3]),
        ];
        let report = grad_check(
            |t, v| {
                let y = edgeconv_forward(t, v[0], &graph, v[1], v[2], v[3])?;
                let sq = t.mul(y, y)?;
                t.sum(sq)
            },
            &point,
            1e-6,
        )
        .unwrap();
        assert!(report.max_rel_error < 1e-5, "{report:?}");
    }
}

//! Geometry kernels and the mixing/erasing transforms used to synthesize
//! pre-training samples.
//!
//! Everything here is a pure function of its inputs. Randomized operations
//! take the random stream explicitly so results are reproducible from a seed.

use rand::seq::{index, SliceRandom};
use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};

pub type Point3 = [f64; 3];

/// A set of 3D points with optional per-point part labels and a category id.
#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud {
    pub points: Vec<Point3>,
    pub part_labels: Option<Vec<u32>>,
    pub category: Option<u32>,
}

impl PointCloud {
    pub fn new(points: Vec<Point3>) -> Result<Self> {
        Self::with_labels(points, None, None)
    }

    pub fn with_labels(
        points: Vec<Point3>,
        part_labels: Option<Vec<u32>>,
        category: Option<u32>,
    ) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::EmptyCloud);
        }
        if let Some(i) = points
            .iter()
            .position(|p| p.iter().any(|c| !c.is_finite()))
        {
            return Err(Error::NonFiniteCoordinate(i));
        }
        if let Some(labels) = &part_labels {
            if labels.len() != points.len() {
                return Err(Error::SizeMismatch(format!(
                    "{} part labels for {} points",
                    labels.len(),
                    points.len()
                )));
            }
        }
        Ok(Self {
            points,
            part_labels,
            category,
        })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Part labels, or a `MissingLabels` error naming the use site.
    pub fn labels_for(&self, use_site: &str) -> Result<&[u32]> {
        self.part_labels
            .as_deref()
            .ok_or_else(|| Error::MissingLabels(format!("{use_site} needs per-point part labels")))
    }

    pub fn centroid(&self) -> Point3 {
        centroid(&self.points)
    }

    /// Coordinates as a row-major N×3 buffer.
    pub fn flat(&self) -> Vec<f64> {
        self.points.iter().flat_map(|p| p.iter().copied()).collect()
    }

    fn select(&self, idx: &[usize]) -> PointCloud {
        PointCloud {
            points: idx.iter().map(|&i| self.points[i]).collect(),
            part_labels: self
                .part_labels
                .as_ref()
                .map(|l| idx.iter().map(|&i| l[i]).collect()),
            category: self.category,
        }
    }
}

pub fn centroid(points: &[Point3]) -> Point3 {
    let mut c = [0.0; 3];
    for p in points {
        for d in 0..3 {
            c[d] += p[d];
        }
    }
    let n = points.len() as f64;
    c.map(|v| v / n)
}

#[inline]
pub fn dist(a: &Point3, b: &Point3) -> f64 {
    sq_dist(a, b).sqrt()
}

#[inline]
pub fn sq_dist(a: &Point3, b: &Point3) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    let dz = a[2] - b[2];
    dx * dx + dy * dy + dz * dz
}

#[inline]
pub fn norm(p: &Point3) -> f64 {
    (p[0] * p[0] + p[1] * p[1] + p[2] * p[2]).sqrt()
}

/// Result of [`normalize_unit_sphere`].
#[derive(Debug, Clone)]
pub struct Normalized {
    pub cloud: PointCloud,
    /// Set when every point coincided with the centroid, so no scaling was applied.
    pub degenerate: bool,
}

/// Centers the cloud at the origin and scales it so the farthest point has norm 1.
pub fn normalize_unit_sphere(cloud: &PointCloud) -> Normalized {
    let c = cloud.centroid();
    let mut points: Vec<Point3> = cloud
        .points
        .iter()
        .map(|p| [p[0] - c[0], p[1] - c[1], p[2] - c[2]])
        .collect();
    let max_norm = points.iter().map(norm).fold(0.0, f64::max);
    let degenerate = max_norm == 0.0;
    if !degenerate {
        for p in &mut points {
            for v in p.iter_mut() {
                *v /= max_norm;
            }
        }
    }
    Normalized {
        cloud: PointCloud {
            points,
            part_labels: cloud.part_labels.clone(),
            category: cloud.category,
        },
        degenerate,
    }
}

/// Draws `n` points uniformly without replacement. Labels travel with their points.
pub fn subsample<R: Rng + ?Sized>(cloud: &PointCloud, n: usize, rng: &mut R) -> Result<PointCloud> {
    if n == 0 || n > cloud.len() {
        return Err(Error::InsufficientPoints {
            requested: n,
            available: cloud.len(),
        });
    }
    let idx = index::sample(rng, cloud.len(), n).into_vec();
    Ok(cloud.select(&idx))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AugmentParams {
    pub jitter_sigma: f64,
    pub jitter_clip: f64,
    pub scale_lo: f64,
    pub scale_hi: f64,
}

impl Default for AugmentParams {
    fn default() -> Self {
        Self {
            jitter_sigma: 0.01,
            jitter_clip: 0.05,
            scale_lo: 0.8,
            scale_hi: 1.25,
        }
    }
}

impl AugmentParams {
    pub fn identity() -> Self {
        Self {
            jitter_sigma: 0.0,
            jitter_clip: 0.0,
            scale_lo: 1.0,
            scale_hi: 1.0,
        }
    }
}

/// Adds clipped Gaussian jitter to every coordinate, then applies one random
/// uniform scale factor to the whole cloud.
pub fn augment<R: Rng + ?Sized>(
    cloud: &PointCloud,
    params: &AugmentParams,
    rng: &mut R,
) -> Result<PointCloud> {
    let AugmentParams {
        jitter_sigma,
        jitter_clip,
        scale_lo,
        scale_hi,
    } = *params;
    if !(jitter_sigma >= 0.0 && jitter_clip >= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "jitter sigma/clip must be non-negative, got {jitter_sigma}/{jitter_clip}"
        )));
    }
    if !(scale_lo > 0.0 && scale_lo <= scale_hi) {
        return Err(Error::InvalidArgument(format!(
            "scale range must satisfy 0 < lo <= hi, got [{scale_lo}, {scale_hi}]"
        )));
    }
    let mut out = cloud.clone();
    if jitter_sigma > 0.0 {
        let normal = Normal::new(0.0, jitter_sigma)
            .map_err(|e| Error::InvalidArgument(e.to_string()))?;
        for p in &mut out.points {
            for v in p.iter_mut() {
                *v += normal.sample(rng).clamp(-jitter_clip, jitter_clip);
            }
        }
    }
    let scale = if scale_lo == scale_hi {
        scale_lo
    } else {
        rng.random_range(scale_lo..=scale_hi)
    };
    if scale != 1.0 {
        for p in &mut out.points {
            for v in p.iter_mut() {
                *v *= scale;
            }
        }
    }
    Ok(out)
}

/// k nearest neighbors of every row in a feature space.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NeighborGraph {
    neighbors: Vec<usize>,
    n: usize,
    k: usize,
}

impl NeighborGraph {
    /// Builds a graph from explicit rows, validating the neighbor invariants.
    pub fn from_rows(rows: Vec<Vec<usize>>) -> Result<Self> {
        let n = rows.len();
        let k = rows.first().map_or(0, Vec::len);
        let mut neighbors = Vec::with_capacity(n * k);
        for (i, row) in rows.into_iter().enumerate() {
            if row.len() != k {
                return Err(Error::SizeMismatch(format!("row {i} has {} neighbors, expected {k}", row.len())));
            }
            for (a, &j) in row.iter().enumerate() {
                if j >= n || j == i || row[..a].contains(&j) {
                    return Err(Error::InvalidArgument(format!("invalid neighbor {j} in row {i}")));
                }
            }
            neighbors.extend(row);
        }
        Ok(Self { neighbors, n, k })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn num_points(&self) -> usize {
        self.n
    }

    pub fn row(&self, i: usize) -> &[usize] {
        &self.neighbors[i * self.k..(i + 1) * self.k]
    }

    /// All neighbor indices, row-major N×k.
    pub fn indices(&self) -> &[usize] {
        &self.neighbors
    }

    pub fn rows(&self) -> impl Iterator<Item = &[usize]> {
        self.neighbors.chunks(self.k.max(1))
    }
}

/// Exact k-NN graph over the rows of a row-major N×C feature matrix.
///
/// Distances are squared Euclidean, computed coordinate-wise. Ties go to the
/// smaller index and a point never lists itself, even when duplicated.
pub fn knn_graph(features: &[f64], cols: usize, k: usize) -> Result<NeighborGraph> {
    if cols == 0 || features.len() % cols != 0 {
        return Err(Error::SizeMismatch(format!(
            "feature buffer of length {} is not divisible into rows of {cols}",
            features.len()
        )));
    }
    let n = features.len() / cols;
    if k >= n {
        return Err(Error::KTooLarge { k, n });
    }
    if features.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("knn_graph input"));
    }
    let mut neighbors = Vec::with_capacity(n * k);
    let mut cand: Vec<(f64, usize)> = Vec::with_capacity(n);
    for i in 0..n {
        let xi = &features[i * cols..(i + 1) * cols];
        cand.clear();
        for j in 0..n {
            if j == i {
                continue;
            }
            let xj = &features[j * cols..(j + 1) * cols];
            let d: f64 = xi.iter().zip(xj).map(|(a, b)| (a - b) * (a - b)).sum();
            cand.push((d, j));
        }
        let cmp = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
        if k < cand.len() {
            cand.select_nth_unstable_by(k - 1, cmp);
        }
        let head = &mut cand[..k];
        head.sort_unstable_by(cmp);
        neighbors.extend(head.iter().map(|&(_, j)| j));
    }
    Ok(NeighborGraph { neighbors, n, k })
}

/// Index of the nearest point in `targets` (first minimum on ties) and its squared distance.
#[inline]
pub fn nearest(p: &Point3, targets: &[Point3]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (j, q) in targets.iter().enumerate() {
        let d = sq_dist(p, q);
        if d < best.1 {
            best = (j, d);
        }
    }
    best
}

/// Symmetric Chamfer distance with plain (non-squared) L2 point distances,
/// each direction averaged over its source cloud.
pub fn chamfer_distance(s_hat: &[Point3], s: &[Point3]) -> Result<f64> {
    if s_hat.is_empty() || s.is_empty() {
        return Err(Error::EmptyCloud);
    }
    let forward: f64 = s_hat.iter().map(|p| nearest(p, s).1.sqrt()).sum::<f64>() / s_hat.len() as f64;
    let backward: f64 = s.iter().map(|p| nearest(p, s_hat).1.sqrt()).sum::<f64>() / s.len() as f64;
    Ok(forward + backward)
}

/// Coordinates with one axis per point set to zero, plus the zeroed axis.
#[derive(Debug, Clone, PartialEq)]
pub struct ErasedCoords {
    pub coords: Vec<Point3>,
    pub axes: Vec<u8>,
}

pub fn erase_coordinate<R: Rng + ?Sized>(cloud: &PointCloud, rng: &mut R) -> ErasedCoords {
    let mut coords = Vec::with_capacity(cloud.len());
    let mut axes = Vec::with_capacity(cloud.len());
    for p in &cloud.points {
        let axis: u8 = rng.random_range(0..3);
        let mut q = *p;
        q[axis as usize] = 0.0;
        coords.push(q);
        axes.push(axis);
    }
    ErasedCoords { coords, axes }
}

/// One pre-training example: two sources, their mixture and the erased
/// conditional coordinates of each source.
#[derive(Debug, Clone)]
pub struct MdSample {
    pub source_a: PointCloud,
    pub source_b: PointCloud,
    pub mixed: PointCloud,
    pub cond_a: ErasedCoords,
    pub cond_b: ErasedCoords,
}

/// Mixes ⌈N/2⌉ random points of `a` with ⌊N/2⌋ random points of `b` in shuffled order.
pub fn mix<R: Rng + ?Sized>(a: &PointCloud, b: &PointCloud, rng: &mut R) -> Result<MdSample> {
    let n = a.len();
    if b.len() != n {
        return Err(Error::SizeMismatch(format!(
            "cannot mix clouds of {} and {} points",
            a.len(),
            b.len()
        )));
    }
    let from_a = n.div_ceil(2);
    let from_b = n / 2;
    let mut points = Vec::with_capacity(n);
    points.extend(index::sample(rng, n, from_a).iter().map(|i| a.points[i]));
    if from_b > 0 {
        points.extend(index::sample(rng, n, from_b).iter().map(|i| b.points[i]));
    }
    points.shuffle(rng);
    let cond_a = erase_coordinate(a, rng);
    let cond_b = erase_coordinate(b, rng);
    Ok(MdSample {
        source_a: a.clone(),
        source_b: b.clone(),
        mixed: PointCloud {
            points,
            part_labels: None,
            category: None,
        },
        cond_a,
        cond_b,
    })
}

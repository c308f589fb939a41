//! Analytic shapes with part labels, used as a small stand-in dataset.

use std::f64::consts::{PI, TAU};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::dataset::{Dataset, Split};
use crate::error::{Error, Result};
use crate::geom::{normalize_unit_sphere, Point3, PointCloud};

pub const MIN_SYNTH_POINTS: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ShapeKind {
    Sphere,
    Box,
    Cylinder,
    Cone,
    Torus,
    Table,
}

impl ShapeKind {
    pub const ALL: [ShapeKind; 6] = [
        ShapeKind::Sphere,
        ShapeKind::Box,
        ShapeKind::Cylinder,
        ShapeKind::Cone,
        ShapeKind::Torus,
        ShapeKind::Table,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ShapeKind::Sphere => "sphere",
            ShapeKind::Box => "box",
            ShapeKind::Cylinder => "cylinder",
            ShapeKind::Cone => "cone",
            ShapeKind::Torus => "torus",
            ShapeKind::Table => "table",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::UnknownShapeKind(s.to_string()))
    }

    /// Number of distinct local part labels the generator emits.
    ///
    /// box: sides 0, top/bottom 1. cylinder: side 0, caps 1. cone: side 0,
    /// base 1. table: top 0, legs 1.
    pub fn num_parts(self) -> usize {
        match self {
            ShapeKind::Sphere | ShapeKind::Torus => 1,
            _ => 2,
        }
    }
}

/// Shape dimension jitter: every size parameter is multiplied by a factor
/// drawn from `[1 - variation, 1 + variation]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SynthParams {
    pub variation: f64,
}

impl Default for SynthParams {
    fn default() -> Self {
        Self { variation: 0.2 }
    }
}

struct AxisBox {
    center: Point3,
    half: Point3,
}

impl AxisBox {
    fn faces(&self) -> [(usize, f64, f64); 6] {
        // (normal axis, sign, area)
        let [hx, hy, hz] = self.half;
        let ax = 4.0 * hy * hz;
        let ay = 4.0 * hx * hz;
        let az = 4.0 * hx * hy;
        [(0, -1.0, ax), (0, 1.0, ax), (1, -1.0, ay), (1, 1.0, ay), (2, -1.0, az), (2, 1.0, az)]
    }

    fn area(&self) -> f64 {
        self.faces().iter().map(|f| f.2).sum()
    }

    /// Uniform surface sample and the normal axis of the face it landed on.
    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> (Point3, usize) {
        let faces = self.faces();
        let mut u = rng.random::<f64>() * self.area();
        let mut pick = faces[5];
        for f in faces {
            if u < f.2 {
                pick = f;
                break;
            }
            u -= f.2;
        }
        let (axis, sign, _) = pick;
        let mut p = [0.0; 3];
        for d in 0..3 {
            p[d] = if d == axis {
                self.center[d] + sign * self.half[d]
            } else {
                self.center[d] + self.half[d] * rng.random_range(-1.0..=1.0)
            };
        }
        (p, axis)
    }
}

fn jitter<R: Rng + ?Sized>(base: f64, params: &SynthParams, rng: &mut R) -> f64 {
    if params.variation == 0.0 {
        base
    } else {
        base * rng.random_range(1.0 - params.variation..=1.0 + params.variation)
    }
}

fn unit_direction<R: Rng + ?Sized>(rng: &mut R) -> Point3 {
    loop {
        let z: f64 = rng.random_range(-1.0..=1.0);
        let phi: f64 = rng.random_range(0.0..TAU);
        let r = (1.0 - z * z).max(0.0).sqrt();
        let p = [r * phi.cos(), r * phi.sin(), z];
        let n = (p[0] * p[0] + p[1] * p[1] + p[2] * p[2]).sqrt();
        if n > 0.0 {
            return [p[0] / n, p[1] / n, p[2] / n];
        }
    }
}

/// Surface samples before normalization, with local part labels.
pub fn synth_raw<R: Rng + ?Sized>(
    kind: ShapeKind,
    n_points: usize,
    params: &SynthParams,
    rng: &mut R,
) -> Result<(Vec<Point3>, Vec<u32>)> {
    if n_points < MIN_SYNTH_POINTS {
        return Err(Error::InsufficientPoints {
            requested: n_points,
            available: MIN_SYNTH_POINTS,
        });
    }
    if !(0.0..1.0).contains(&params.variation) {
        return Err(Error::InvalidArgument(format!(
            "variation must lie in [0, 1), got {}",
            params.variation
        )));
    }
    let mut points = Vec::with_capacity(n_points);
    let mut labels = Vec::with_capacity(n_points);
    match kind {
        ShapeKind::Sphere => {
            for _ in 0..n_points {
                points.push(unit_direction(rng));
                labels.push(0);
            }
        }
        ShapeKind::Box => {
            let b = AxisBox {
                center: [0.0; 3],
                half: [jitter(0.5, params, rng), jitter(0.4, params, rng), jitter(0.3, params, rng)],
            };
            for _ in 0..n_points {
                let (p, axis) = b.sample(rng);
                points.push(p);
                labels.push(u32::from(axis == 2));
            }
        }
        ShapeKind::Cylinder => {
            let r = jitter(0.4, params, rng);
            let h = jitter(1.6, params, rng);
            let side = TAU * r * h;
            let caps = 2.0 * PI * r * r;
            for _ in 0..n_points {
                let phi = rng.random_range(0.0..TAU);
                if rng.random::<f64>() * (side + caps) < side {
                    let z = rng.random_range(-h / 2.0..=h / 2.0);
                    points.push([r * phi.cos(), r * phi.sin(), z]);
                    labels.push(0);
                } else {
                    let rho = r * rng.random::<f64>().sqrt();
                    let z = if rng.random::<bool>() { h / 2.0 } else { -h / 2.0 };
                    points.push([rho * phi.cos(), rho * phi.sin(), z]);
                    labels.push(1);
                }
            }
        }
        ShapeKind::Cone => {
            let r = jitter(0.7, params, rng);
            let h = jitter(1.2, params, rng);
            let slant = (r * r + h * h).sqrt();
            let side = PI * r * slant;
            let base = PI * r * r;
            for _ in 0..n_points {
                let phi = rng.random_range(0.0..TAU);
                // radial fraction from the apex; density grows linearly with it
                let t = rng.random::<f64>().sqrt();
                if rng.random::<f64>() * (side + base) < side {
                    points.push([t * r * phi.cos(), t * r * phi.sin(), h / 2.0 - t * h]);
                    labels.push(0);
                } else {
                    points.push([t * r * phi.cos(), t * r * phi.sin(), -h / 2.0]);
                    labels.push(1);
                }
            }
        }
        ShapeKind::Torus => {
            let big = jitter(0.7, params, rng);
            let small = jitter(0.25, params, rng).min(0.9 * big);
            for _ in 0..n_points {
                let theta = rng.random_range(0.0..TAU);
                // rejection on the tube angle so the surface density is uniform
                let psi = loop {
                    let psi = rng.random_range(0.0..TAU);
                    if rng.random::<f64>() * (big + small) <= big + small * f64::cos(psi) {
                        break psi;
                    }
                };
                let ring = big + small * psi.cos();
                points.push([ring * theta.cos(), ring * theta.sin(), small * psi.sin()]);
                labels.push(0);
            }
        }
        ShapeKind::Table => {
            let hx = jitter(0.8, params, rng);
            let hy = jitter(0.5, params, rng);
            let leg_h = jitter(0.45, params, rng);
            let top_t = 0.05;
            let leg_w = 0.05;
            let mut boxes = vec![(
                AxisBox {
                    center: [0.0, 0.0, leg_h + top_t],
                    half: [hx, hy, top_t],
                },
                0u32,
            )];
            for (sx, sy) in [(-1.0, -1.0), (-1.0, 1.0), (1.0, -1.0), (1.0, 1.0)] {
                boxes.push((
                    AxisBox {
                        center: [sx * (hx - leg_w), sy * (hy - leg_w), 0.0],
                        half: [leg_w, leg_w, leg_h],
                    },
                    1,
                ));
            }
            let areas: Vec<f64> = boxes.iter().map(|(b, _)| b.area()).collect();
            let total: f64 = areas.iter().sum();
            for _ in 0..n_points {
                let mut u = rng.random::<f64>() * total;
                let mut pick = boxes.len() - 1;
                for (i, a) in areas.iter().enumerate() {
                    if u < *a {
                        pick = i;
                        break;
                    }
                    u -= a;
                }
                let (b, label) = &boxes[pick];
                points.push(b.sample(rng).0);
                labels.push(*label);
            }
        }
    }
    Ok((points, labels))
}

/// Normalized synthetic cloud with local part labels and no category.
pub fn synth_generate<R: Rng + ?Sized>(
    kind: ShapeKind,
    n_points: usize,
    params: &SynthParams,
    rng: &mut R,
) -> Result<PointCloud> {
    let (points, labels) = synth_raw(kind, n_points, params, rng)?;
    let normalized = normalize_unit_sphere(&PointCloud::new(points)?).cloud;
    PointCloud::with_labels(normalized.points, Some(labels), None)
}

/// Recipe for a synthetic dataset.
///
/// Text form: `default`, or comma-separated `key=value` pairs over `classes`
/// (`+`-joined shape names or a count taken from the front of the kind
/// list), `train`, `test`, `points`, `variation`, `seed`. Omitted keys keep
/// their defaults.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthSpec {
    pub classes: Vec<ShapeKind>,
    pub train: usize,
    pub test: usize,
    pub points: usize,
    pub variation: f64,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            classes: ShapeKind::ALL.to_vec(),
            train: 600,
            test: 200,
            points: 256,
            variation: SynthParams::default().variation,
            seed: 0,
        }
    }
}

impl SynthSpec {
    pub fn parse(text: &str) -> Result<Self> {
        let mut spec = Self::default();
        let text = text.trim();
        if text == "default" || text.is_empty() {
            return Ok(spec);
        }
        for item in text.split(',') {
            let (key, value) = item
                .split_once('=')
                .ok_or_else(|| Error::InvalidArgument(format!("synthetic spec item {item:?} is not key=value")))?;
            let bad = || Error::InvalidArgument(format!("bad value for synthetic `{key}`: {value:?}"));
            match key.trim() {
                "classes" => {
                    spec.classes = match value.parse::<usize>() {
                        Ok(n) if (1..=ShapeKind::ALL.len()).contains(&n) => ShapeKind::ALL[..n].to_vec(),
                        Ok(_) => return Err(bad()),
                        Err(_) => value.split('+').map(ShapeKind::parse).collect::<Result<_>>()?,
                    }
                }
                "train" => spec.train = value.parse().map_err(|_| bad())?,
                "test" => spec.test = value.parse().map_err(|_| bad())?,
                "points" => spec.points = value.parse().map_err(|_| bad())?,
                "variation" => spec.variation = value.parse().map_err(|_| bad())?,
                "seed" => spec.seed = value.parse().map_err(|_| bad())?,
                other => return Err(Error::InvalidArgument(format!("unknown synthetic key {other:?}"))),
            }
        }
        Ok(spec)
    }

    /// Global part ids for each class, numbered consecutively in class order.
    pub fn part_table(&self) -> Vec<Vec<u32>> {
        let mut next = 0u32;
        self.classes
            .iter()
            .map(|k| {
                let ids = (next..next + k.num_parts() as u32).collect();
                next += k.num_parts() as u32;
                ids
            })
            .collect()
    }

    /// Builds the dataset. Cloud `i` of each split belongs to class
    /// `i % classes`; labels are mapped to global part ids.
    pub fn generate(&self) -> Result<Dataset> {
        if self.classes.is_empty() || self.train + self.test == 0 {
            return Err(Error::InvalidArgument("synthetic spec produces no clouds".into()));
        }
        let params = SynthParams {
            variation: self.variation,
        };
        let table = self.part_table();
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let mut clouds = Vec::with_capacity(self.train + self.test);
        let mut splits = Vec::with_capacity(self.train + self.test);
        for (split, count) in [(Split::Train, self.train), (Split::Test, self.test)] {
            for i in 0..count {
                let c = i % self.classes.len();
                let cloud = synth_generate(self.classes[c], self.points, &params, &mut rng)?;
                let labels = cloud
                    .part_labels
                    .as_ref()
                    .expect("synthetic clouds carry labels")
                    .iter()
                    .map(|&l| table[c][l as usize])
                    .collect();
                clouds.push(PointCloud::with_labels(cloud.points, Some(labels), Some(c as u32))?);
                splits.push(split);
            }
        }
        Dataset::new(
            clouds,
            splits,
            self.classes.iter().map(|k| k.name().to_string()).collect(),
            table,
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::norm;

    #[test]
    fn raw_sphere_has_unit_radius() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (pts, _) = synth_raw(ShapeKind::Sphere, 500, &SynthParams::default(), &mut rng).unwrap();
        for p in pts {
            assert!((norm(&p) - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn part_label_counts() {
        for kind in ShapeKind::ALL {
            let mut rng = ChaCha8Rng::seed_from_u64(11);
            let c = synth_generate(kind, 512, &SynthParams::default(), &mut rng).unwrap();
            let mut labels = c.part_labels.unwrap();
            labels.sort_unstable();
            labels.dedup();
            assert_eq!(labels.len(), kind.num_parts(), "{}", kind.name());
        }
    }

    #[test]
    fn same_seed_same_cloud() {
        let gen = |s| {
            let mut rng = ChaCha8Rng::seed_from_u64(s);
            synth_generate(ShapeKind::Table, 64, &SynthParams::default(), &mut rng).unwrap()
        };
        assert_eq!(gen(5), gen(5));
        assert_ne!(gen(5), gen(6));
    }

    #[test]
    fn normalized_output() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let c = synth_generate(ShapeKind::Cone, 300, &SynthParams::default(), &mut rng).unwrap();
        let max = c.points.iter().map(norm).fold(0.0, f64::max);
        assert!((max - 1.0).abs() < 1e-12);
    }

    #[test]
    fn rejects_bad_input() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(synth_generate(ShapeKind::Box, 7, &SynthParams::default(), &mut rng).is_err());
        assert!(matches!(ShapeKind::parse("teapot"), Err(Error::UnknownShapeKind(_))));
    }

    #[test]
    fn table_parts_are_box_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let (pts, labels) = synth_raw(ShapeKind::Table, 2000, &SynthParams { variation: 0.0 }, &mut rng).unwrap();
        for (p, l) in pts.iter().zip(labels) {
            if l == 0 {
                assert!(p[2] >= 0.45 - 1e-12);
            } else {
                assert!(p[2] <= 0.45 + 1e-12);
            }
        }
    }

    #[test]
    fn spec_parsing() {
        let s = SynthSpec::parse("classes=cylinder+table,train=10,test=4,points=32,seed=3").unwrap();
        assert_eq!(s.classes, vec![ShapeKind::Cylinder, ShapeKind::Table]);
        assert_eq!(s.part_table(), vec![vec![0, 1], vec![2, 3]]);
        let d = s.generate().unwrap();
        assert_eq!(d.len(), 14);
        assert_eq!(SynthSpec::parse("classes=3").unwrap().classes.len(), 3);
        assert!(SynthSpec::parse("colour=red").is_err());
        assert!(SynthSpec::parse("classes=9").is_err());
        assert_eq!(SynthSpec::default().part_table().concat().len(), 10);
    }
}

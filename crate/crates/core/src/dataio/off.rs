//! OFF mesh import with area-weighted surface sampling.

use std::fs;
use std::path::Path;

use rand::Rng;

use crate::error::{Error, Result};
use crate::geom::{normalize_unit_sphere, Point3, PointCloud};

#[derive(Debug, Clone, PartialEq)]
pub struct TriangleMesh {
    pub vertices: Vec<Point3>,
    pub triangles: Vec<[usize; 3]>,
}

/// Parses an OFF file. Polygons with more than three vertices are split into
/// a triangle fan around their first vertex.
pub fn parse_off(text: &str) -> Result<TriangleMesh> {
    let mut lines = text
        .lines()
        .map(|l| l.split('#').next().unwrap_or("").trim())
        .filter(|l| !l.is_empty());
    let first = lines
        .next()
        .ok_or_else(|| Error::MalformedHeader("empty OFF file".into()))?;
    let rest = first
        .strip_prefix("OFF")
        .ok_or_else(|| Error::MalformedHeader(format!("expected OFF, got {first:?}")))?
        .trim();
    // some exporters glue the counts onto the keyword line
    let counts_line = if rest.is_empty() {
        lines
            .next()
            .ok_or_else(|| Error::MalformedHeader("missing OFF counts".into()))?
    } else {
        rest
    };
    let counts: Vec<usize> = counts_line
        .split_whitespace()
        .map(|t| t.parse().map_err(|_| Error::MalformedHeader(format!("bad OFF count {t:?}"))))
        .collect::<Result<_>>()?;
    if counts.len() < 2 {
        return Err(Error::MalformedHeader(format!("bad OFF counts line {counts_line:?}")));
    }
    let (nv, nf) = (counts[0], counts[1]);

    let mut vertices = Vec::with_capacity(nv);
    for i in 0..nv {
        let line = lines.next().ok_or(Error::RowCountMismatch {
            expected: nv,
            found: i,
        })?;
        let v: Vec<f64> = line
            .split_whitespace()
            .take(3)
            .map(|t| t.parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| Error::MalformedRow {
                line: i,
                reason: format!("bad vertex {line:?}"),
            })?;
        if v.len() != 3 || v.iter().any(|x| !x.is_finite()) {
            return Err(Error::MalformedRow {
                line: i,
                reason: format!("bad vertex {line:?}"),
            });
        }
        vertices.push([v[0], v[1], v[2]]);
    }

    let mut triangles = Vec::with_capacity(nf);
    for f in 0..nf {
        let line = lines.next().ok_or(Error::RowCountMismatch {
            expected: nf,
            found: f,
        })?;
        let bad = || Error::MalformedRow {
            line: nv + f,
            reason: format!("bad face {line:?}"),
        };
        let mut toks = line.split_whitespace().map(|t| t.parse::<usize>());
        let count = toks.next().ok_or_else(bad)?.map_err(|_| bad())?;
        let idx: Vec<usize> = toks
            .take(count)
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| bad())?;
        if count < 3 || idx.len() != count || idx.iter().any(|&i| i >= nv) {
            return Err(bad());
        }
        for j in 1..count - 1 {
            triangles.push([idx[0], idx[j], idx[j + 1]]);
        }
    }
    Ok(TriangleMesh { vertices, triangles })
}

pub fn read_off(path: &Path) -> Result<TriangleMesh> {
    parse_off(&fs::read_to_string(path)?)
}

fn triangle_area(a: &Point3, b: &Point3, c: &Point3) -> f64 {
    let u = [b[0] - a[0], b[1] - a[1], b[2] - a[2]];
    let v = [c[0] - a[0], c[1] - a[1], c[2] - a[2]];
    let cross = [u[1] * v[2] - u[2] * v[1], u[2] * v[0] - u[0] * v[2], u[0] * v[1] - u[1] * v[0]];
    0.5 * (cross[0] * cross[0] + cross[1] * cross[1] + cross[2] * cross[2]).sqrt()
}

impl TriangleMesh {
    pub fn areas(&self) -> Vec<f64> {
        self.triangles
            .iter()
            .map(|t| triangle_area(&self.vertices[t[0]], &self.vertices[t[1]], &self.vertices[t[2]]))
            .collect()
    }

    /// `n` points drawn with probability proportional to triangle area and
    /// uniformly inside each triangle, with the triangle each came from.
    pub fn sample_surface<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Result<(Vec<Point3>, Vec<usize>)> {
        let mut cumulative = Vec::with_capacity(self.triangles.len());
        let mut total = 0.0;
        for a in self.areas() {
            total += a;
            cumulative.push(total);
        }
        if !(total > 0.0) {
            return Err(Error::DegenerateMesh("total surface area is zero".into()));
        }
        let mut points = Vec::with_capacity(n);
        let mut faces = Vec::with_capacity(n);
        for _ in 0..n {
            let u = rng.random::<f64>() * total;
            let f = cumulative.partition_point(|&c| c <= u).min(cumulative.len() - 1);
            let [a, b, c] = self.triangles[f].map(|i| self.vertices[i]);
            let r1 = rng.random::<f64>().sqrt();
            let r2 = rng.random::<f64>();
            let (wa, wb, wc) = (1.0 - r1, r1 * (1.0 - r2), r1 * r2);
            points.push([0, 1, 2].map(|d| wa * a[d] + wb * b[d] + wc * c[d]));
            faces.push(f);
        }
        Ok((points, faces))
    }
}

/// Samples `n_points` from an OFF mesh surface and normalizes them to the unit sphere.
pub fn import_off_mesh<R: Rng + ?Sized>(path: &Path, n_points: usize, rng: &mut R) -> Result<PointCloud> {
    let mesh = read_off(path)?;
    let (points, _) = mesh.sample_surface(n_points, rng)?;
    Ok(normalize_unit_sphere(&PointCloud::new(points)?).cloud)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn parses_quads_by_fan() {
        let m = parse_off("OFF\n# square\n4 1 0\n0 0 0\n1 0 0\n1 1 0\n0 1 0\n4 0 1 2 3\n").unwrap();
        assert_eq!(m.triangles, vec![[0, 1, 2], [0, 2, 3]]);
        let total: f64 = m.areas().iter().sum();
        assert!((total - 1.0).abs() < 1e-15);
    }

    #[test]
    fn parses_glued_counts() {
        let m = parse_off("OFF3 1 0\n0 0 0\n1 0 0\n0 1 0\n3 0 1 2\n").unwrap();
        assert_eq!(m.triangles.len(), 1);
    }

    #[test]
    fn rejects_malformed() {
        assert!(parse_off("PLY\n").is_err());
        assert!(parse_off("OFF\n3 1 0\n0 0 0\n1 0 0\n").is_err());
        assert!(parse_off("OFF\n3 1 0\n0 0 0\n1 0 0\n0 1 0\n3 0 1 7\n").is_err());
    }

    #[test]
    fn samples_inside_single_triangle() {
        let m = parse_off("OFF\n3 1 0\n0 0 0\n2 0 0\n0 1 0\n3 0 1 2\n").unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (pts, _) = m.sample_surface(2000, &mut rng).unwrap();
        for p in pts {
            // barycentric coordinates in the triangle (0,0),(2,0),(0,1)
            let (wb, wc) = (p[0] / 2.0, p[1]);
            let wa = 1.0 - wb - wc;
            assert!(wa >= -1e-12 && wb >= -1e-12 && wc >= -1e-12);
            assert_eq!(p[2], 0.0);
        }
    }

    #[test]
    fn zero_area_mesh_is_rejected() {
        let m = parse_off("OFF\n3 1 0\n0 0 0\n1 0 0\n2 0 0\n3 0 1 2\n").unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert!(matches!(m.sample_surface(10, &mut rng), Err(Error::DegenerateMesh(_))));
    }
}

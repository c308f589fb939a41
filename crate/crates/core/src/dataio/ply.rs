//! ASCII PLY export.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::geom::Point3;

/// Renders points as ASCII PLY. Optional per-vertex weights in [0, 1] become
/// grey levels (`red = green = blue`).
pub fn encode_ply(points: &[Point3], weights: Option<&[f64]>) -> Result<String> {
    if let Some(w) = weights {
        if w.len() != points.len() {
            return Err(Error::SizeMismatch(format!("{} weights for {} points", w.len(), points.len())));
        }
    }
    let mut out = String::from("ply\nformat ascii 1.0\n");
    out.push_str(&format!("element vertex {}\n", points.len()));
    out.push_str("property float x\nproperty float y\nproperty float z\n");
    if weights.is_some() {
        out.push_str("property uchar red\nproperty uchar green\nproperty uchar blue\n");
    }
    out.push_str("end_header\n");
    for (i, p) in points.iter().enumerate() {
        out.push_str(&format!("{} {} {}", p[0] as f32, p[1] as f32, p[2] as f32));
        if let Some(w) = weights {
            let g = (w[i].clamp(0.0, 1.0) * 255.0).round() as u8;
            out.push_str(&format!(" {g} {g} {g}"));
        }
        out.push('\n');
    }
    Ok(out)
}

pub fn write_ply(path: &Path, points: &[Point3], weights: Option<&[f64]>) -> Result<()> {
    fs::write(path, encode_ply(points, weights)?)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_and_rows() {
        let text = encode_ply(&[[0.0, 1.0, 2.0], [0.5, 0.0, -1.0]], Some(&[0.0, 1.0])).unwrap();
        assert!(text.contains("element vertex 2\n"));
        let body: Vec<&str> = text.split("end_header\n").nth(1).unwrap().lines().collect();
        assert_eq!(body, vec!["0 1 2 0 0 0", "0.5 0 -1 255 255 255"]);
        assert!(encode_ply(&[[0.0; 3]], Some(&[])).is_err());
        assert!(!encode_ply(&[[0.0; 3]], None).unwrap().contains("red"));
    }
}

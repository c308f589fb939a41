//! Point-cloud files.
//!
//! Text (`.pcd`): a header line `pcd <N> <has_labels:0|1> <category|-1>`
//! followed by N rows `x y z [part_label]`, coordinates written with nine
//! significant digits.
//!
//! Binary (`.pcdb`), little-endian throughout:
//!
//! ```text
//! b"PCDB" | version u32 = 1 | N u32 | flags u32 | N × (x f32, y f32, z f32) | [N × label u16]
//! ```
//!
//! flags bit 0: labels present; bit 1: category present; bits 16..32: category id.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::geom::{Point3, PointCloud};

pub const BINARY_MAGIC: &[u8; 4] = b"PCDB";
pub const BINARY_VERSION: u32 = 1;
const FLAG_LABELS: u32 = 1;
const FLAG_CATEGORY: u32 = 1 << 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CloudFormat {
    Text,
    Binary,
}

impl CloudFormat {
    /// `.pcdb` is binary; anything else is text.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some("pcdb") => CloudFormat::Binary,
            _ => CloudFormat::Text,
        }
    }
}

pub fn encode_text(cloud: &PointCloud) -> String {
    let mut out = format!(
        "pcd {} {} {}\n",
        cloud.len(),
        u8::from(cloud.part_labels.is_some()),
        cloud.category.map_or(-1, i64::from)
    );
    for (i, p) in cloud.points.iter().enumerate() {
        out.push_str(&format!("{:.8e} {:.8e} {:.8e}", p[0], p[1], p[2]));
        if let Some(labels) = &cloud.part_labels {
            out.push_str(&format!(" {}", labels[i]));
        }
        out.push('\n');
    }
    out
}

pub fn decode_text(text: &str) -> Result<PointCloud> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let (_, header) = lines
        .next()
        .ok_or_else(|| Error::MalformedHeader("empty file".into()))?;
    let fields: Vec<&str> = header.split_whitespace().collect();
    if fields.len() != 4 || fields[0] != "pcd" {
        return Err(Error::MalformedHeader(format!("expected `pcd <N> <0|1> <category>`, got {header:?}")));
    }
    let n: usize = fields[1]
        .parse()
        .map_err(|_| Error::MalformedHeader(format!("bad point count {:?}", fields[1])))?;
    let has_labels = match fields[2] {
        "0" => false,
        "1" => true,
        other => return Err(Error::MalformedHeader(format!("bad label flag {other:?}"))),
    };
    let category: i64 = fields[3]
        .parse()
        .map_err(|_| Error::MalformedHeader(format!("bad category {:?}", fields[3])))?;
    let category = match category {
        -1 => None,
        c if (0..=i64::from(u32::MAX)).contains(&c) => Some(c as u32),
        c => return Err(Error::MalformedHeader(format!("bad category {c}"))),
    };
    let width = if has_labels { 4 } else { 3 };
    let mut points = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(if has_labels { n } else { 0 });
    for (lineno, line) in lines {
        if points.len() == n {
            return Err(Error::RowCountMismatch {
                expected: n,
                found: n + 1 + text.lines().skip(lineno + 1).filter(|l| !l.trim().is_empty()).count(),
            });
        }
        let cols: Vec<&str> = line.split_whitespace().collect();
        let bad = |reason: String| Error::MalformedRow {
            line: lineno + 1,
            reason,
        };
        if cols.len() != width {
            return Err(bad(format!("expected {width} columns, got {}", cols.len())));
        }
        let mut p = [0.0; 3];
        for d in 0..3 {
            p[d] = cols[d]
                .parse()
                .map_err(|_| bad(format!("bad coordinate {:?}", cols[d])))?;
        }
        points.push(p);
        if has_labels {
            labels.push(cols[3].parse().map_err(|_| bad(format!("bad label {:?}", cols[3])))?);
        }
    }
    if points.len() != n {
        return Err(Error::RowCountMismatch {
            expected: n,
            found: points.len(),
        });
    }
    PointCloud::with_labels(points, has_labels.then_some(labels), category)
}

pub fn encode_binary(cloud: &PointCloud) -> Result<Vec<u8>> {
    let n = u32::try_from(cloud.len()).map_err(|_| Error::InvalidArgument("too many points for PCDB".into()))?;
    let mut flags = 0u32;
    if cloud.part_labels.is_some() {
        flags |= FLAG_LABELS;
    }
    if let Some(c) = cloud.category {
        if c > 0xFFFF {
            return Err(Error::InvalidArgument(format!("category {c} does not fit PCDB flags")));
        }
        flags |= FLAG_CATEGORY | (c << 16);
    }
    let mut out = Vec::with_capacity(16 + cloud.len() * 14);
    out.extend_from_slice(BINARY_MAGIC);
    out.extend_from_slice(&BINARY_VERSION.to_le_bytes());
    out.extend_from_slice(&n.to_le_bytes());
    out.extend_from_slice(&flags.to_le_bytes());
    for p in &cloud.points {
        for v in p {
            out.extend_from_slice(&(*v as f32).to_le_bytes());
        }
    }
    if let Some(labels) = &cloud.part_labels {
        for &l in labels {
            let l = u16::try_from(l).map_err(|_| Error::InvalidArgument(format!("label {l} does not fit u16")))?;
            out.extend_from_slice(&l.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn decode_binary(bytes: &[u8]) -> Result<PointCloud> {
    if bytes.len() < 4 || &bytes[..4] != BINARY_MAGIC {
        return Err(Error::BadMagic { expected: "PCDB" });
    }
    let word = |i: usize| -> Result<u32> {
        bytes
            .get(i..i + 4)
            .map(|b| u32::from_le_bytes(b.try_into().expect("4 bytes")))
            .ok_or(Error::TruncatedPayload)
    };
    let version = word(4)?;
    if version != BINARY_VERSION {
        return Err(Error::UnsupportedVersion(version));
    }
    let n = word(8)? as usize;
    let flags = word(12)?;
    if flags & !(FLAG_LABELS | FLAG_CATEGORY | 0xFFFF_0000) != 0 {
        return Err(Error::MalformedHeader(format!("unknown flag bits {flags:#x}")));
    }
    let has_labels = flags & FLAG_LABELS != 0;
    let category = (flags & FLAG_CATEGORY != 0).then_some(flags >> 16);
    let coords_end = 16 + n * 12;
    let end = coords_end + if has_labels { n * 2 } else { 0 };
    if bytes.len() < end {
        return Err(Error::TruncatedPayload);
    }
    if bytes.len() > end {
        return Err(Error::MalformedHeader(format!("{} trailing bytes", bytes.len() - end)));
    }
    let points: Vec<Point3> = bytes[16..coords_end]
        .chunks_exact(12)
        .map(|c| {
            let f = |o: usize| f64::from(f32::from_le_bytes(c[o..o + 4].try_into().expect("4 bytes")));
            [f(0), f(4), f(8)]
        })
        .collect();
    let labels = has_labels.then(|| {
        bytes[coords_end..end]
            .chunks_exact(2)
            .map(|c| u32::from(u16::from_le_bytes([c[0], c[1]])))
            .collect()
    });
    PointCloud::with_labels(points, labels, category)
}

pub fn read_cloud(path: &Path) -> Result<PointCloud> {
    match CloudFormat::from_path(path) {
        CloudFormat::Binary => decode_binary(&fs::read(path)?),
        CloudFormat::Text => decode_text(&fs::read_to_string(path)?),
    }
}

pub fn write_cloud(path: &Path, cloud: &PointCloud) -> Result<()> {
    match CloudFormat::from_path(path) {
        CloudFormat::Binary => fs::write(path, encode_binary(cloud)?)?,
        CloudFormat::Text => fs::write(path, encode_text(cloud))?,
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn labeled() -> PointCloud {
        PointCloud::with_labels(
            vec![[0.5, -1.25, 3.0], [0.125, 2.0, -0.75]],
            Some(vec![3, 0]),
            Some(7),
        )
        .unwrap()
    }

    #[test]
    fn text_round_trip() {
        let c = labeled();
        let text = encode_text(&c);
        assert!(text.starts_with("pcd 2 1 7\n"));
        assert_eq!(decode_text(&text).unwrap(), c);
    }

    #[test]
    fn text_keeps_nine_digits() {
        let c = PointCloud::new(vec![[std::f64::consts::PI, 1.0 / 3.0, -2.0 / 7.0]]).unwrap();
        let back = decode_text(&encode_text(&c)).unwrap();
        for (a, b) in back.points[0].iter().zip(&c.points[0]) {
            assert!(((a - b) / b).abs() < 1e-8);
        }
        assert_eq!(encode_text(&back), encode_text(&c));
    }

    #[test]
    fn text_errors() {
        assert!(matches!(decode_text(""), Err(Error::MalformedHeader(_))));
        assert!(matches!(decode_text("pcx 1 0 -1\n0 0 0\n"), Err(Error::MalformedHeader(_))));
        assert!(matches!(decode_text("pcd 1 2 -1\n0 0 0\n"), Err(Error::MalformedHeader(_))));
        let four_rows = "pcd 5 0 -1\n0 0 0\n1 0 0\n2 0 0\n3 0 0\n";
        let err = decode_text(four_rows).unwrap_err();
        assert!(matches!(err, Error::RowCountMismatch { expected: 5, found: 4 }));
        assert!(err.to_string().contains("row count mismatch"));
        assert!(matches!(
            decode_text("pcd 1 0 -1\n0 0 0\n1 1 1\n"),
            Err(Error::RowCountMismatch { expected: 1, found: 2 })
        ));
        assert!(matches!(decode_text("pcd 1 1 -1\n0 0 0\n"), Err(Error::MalformedRow { .. })));
        assert!(matches!(decode_text("pcd 1 0 -1\n0 x 0\n"), Err(Error::MalformedRow { .. })));
    }

    #[test]
    fn missing_labels_reported_at_use_site() {
        let c = decode_text("pcd 1 0 -1\n0 0 0\n").unwrap();
        assert!(matches!(c.labels_for("finetune-seg"), Err(Error::MissingLabels(_))));
    }

    #[test]
    fn binary_round_trip() {
        let c = labeled();
        let bytes = encode_binary(&c).unwrap();
        assert_eq!(bytes.len(), 16 + 2 * 12 + 2 * 2);
        let back = decode_binary(&bytes).unwrap();
        assert_eq!(back, c);
        assert_eq!(encode_binary(&back).unwrap(), bytes);
    }

    #[test]
    fn binary_errors() {
        let bytes = encode_binary(&labeled()).unwrap();
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(decode_binary(&bad), Err(Error::BadMagic { .. })));
        let mut bad = bytes.clone();
        bad[4] = 9;
        assert!(matches!(decode_binary(&bad), Err(Error::UnsupportedVersion(9))));
        assert!(matches!(decode_binary(&bytes[..bytes.len() - 1]), Err(Error::TruncatedPayload)));
        assert!(matches!(decode_binary(&bytes[..10]), Err(Error::TruncatedPayload)));
        let mut long = bytes.clone();
        long.push(0);
        assert!(matches!(decode_binary(&long), Err(Error::MalformedHeader(_))));
    }
}

mod common;

use std::path::PathBuf;

use pointmix::dataio::{
    decode_binary, decode_text, encode_binary, encode_text, read_cloud, read_off, write_cloud, Checkpoint, Split,
    SynthSpec,
};
use pointmix::geom::PointCloud;
use pointmix::Error;
use proptest::prelude::*;
use rand::Rng;

use common::{random_checkpoint, random_cloud, rng};

fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

fn fixture_bytes(name: &str) -> Vec<u8> {
    std::fs::read(fixture(name)).unwrap()
}

#[test]
fn golden_pcdb_is_little_endian() {
    let bytes = fixture_bytes("golden.pcdb");
    let cloud = decode_binary(&bytes).unwrap();
    assert_eq!(
        cloud.points,
        vec![[0.5, -1.25, 2.0], [-0.75, 0.125, 1.5], [3.0, -2.5, 0.0625], [1.0, 1.0, -1.0]]
    );
    assert_eq!(cloud.part_labels, Some(vec![0, 1, 1, 2]));
    assert_eq!(cloud.category, Some(3));
    assert_eq!(encode_binary(&cloud).unwrap(), bytes);
    assert_eq!(read_cloud(&fixture("golden.pcdb")).unwrap(), cloud);
}

#[test]
fn golden_mdck_decodes_and_reencodes() {
    let bytes = fixture_bytes("golden.mdck");
    let ck = Checkpoint::decode(&bytes).unwrap();
    assert_eq!(ck.config_value("task").unwrap(), "pretrain");
    assert_eq!(ck.config_value("branch").unwrap(), "cls");
    let w = ck.params.get("enc.w").unwrap();
    assert_eq!(w.shape(), &[2, 3]);
    assert_eq!(w.data(), &[0.5, -1.0, 2.25, 0.0, 1e-3, -7.5]);
    assert_eq!(ck.params.get("enc.b").unwrap().data(), &[1.0, 2.0, 3.0]);
    assert_eq!(ck.params.names().collect::<Vec<_>>(), ["enc.w", "enc.b"]);
    assert!(ck.adam.is_none());
    assert_eq!((ck.epoch, ck.step), (4, 17));
    assert_eq!(ck.encode().unwrap(), bytes);
}

#[test]
fn corrupted_binary_fixtures_name_their_fault() {
    let cases: [(&str, fn(&Error) -> bool); 7] = [
        ("bad_magic.pcdb", |e| matches!(e, Error::BadMagic { expected: "PCDB" })),
        ("bad_version.pcdb", |e| matches!(e, Error::UnsupportedVersion(9))),
        ("truncated.pcdb", |e| matches!(e, Error::TruncatedPayload)),
        ("short_header.pcdb", |e| matches!(e, Error::TruncatedPayload)),
        ("bad_magic.mdck", |e| matches!(e, Error::BadMagic { expected: "MDCK" })),
        ("bad_version.mdck", |e| matches!(e, Error::UnsupportedVersion(2))),
        ("truncated.mdck", |e| matches!(e, Error::TruncatedPayload)),
    ];
    for (name, expected) in cases {
        let err = if name.ends_with(".pcdb") {
            read_cloud(&fixture(name)).unwrap_err()
        } else {
            Checkpoint::load(&fixture(name)).unwrap_err()
        };
        assert!(expected(&err), "{name}: {err}");
        assert!(err.is_data(), "{name}: {err}");
    }
}

#[test]
fn corrupted_text_fixtures_name_their_fault() {
    let err = read_cloud(&fixture("row_count.pcd")).unwrap_err();
    assert!(matches!(err, Error::RowCountMismatch { expected: 5, found: 4 }), "{err}");
    assert!(err.to_string().contains("row count mismatch"));
    let err = read_cloud(&fixture("bad_header.pcd")).unwrap_err();
    assert!(matches!(err, Error::MalformedHeader(_)), "{err}");
    let err = read_cloud(&fixture("bad_row.pcd")).unwrap_err();
    assert!(matches!(err, Error::MalformedRow { line: 3, .. }), "{err}");
}

#[test]
fn files_round_trip_through_both_formats() {
    let dir = tempfile::tempdir().unwrap();
    let cloud = random_cloud(5, 40, true, Some(2));
    let bin = dir.path().join("c.pcdb");
    write_cloud(&bin, &cloud).unwrap();
    let back = read_cloud(&bin).unwrap();
    assert_eq!(std::fs::read(&bin).unwrap(), encode_binary(&back).unwrap());
    let txt = dir.path().join("c.pcd");
    write_cloud(&txt, &back).unwrap();
    assert_eq!(std::fs::read_to_string(&txt).unwrap(), encode_text(&read_cloud(&txt).unwrap()));
}

#[test]
fn off_sampling_follows_triangle_areas() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("two.off");
    std::fs::write(
        &path,
        "OFF\n6 2 0\n0 0 0\n1 0 0\n0 2 0\n0 0 1\n3 0 1\n0 2 1\n3 0 1 2\n3 3 4 5\n",
    )
    .unwrap();
    let mesh = read_off(&path).unwrap();
    let areas = mesh.areas();
    assert!((areas[0] - 1.0).abs() < 1e-12 && (areas[1] - 3.0).abs() < 1e-12);
    let (points, faces) = mesh.sample_surface(100_000, &mut rng(17)).unwrap();
    let small = faces.iter().filter(|&&f| f == 0).count() as f64;
    let large = faces.len() as f64 - small;
    let ratio = small / large;
    assert!((ratio / (1.0 / 3.0) - 1.0).abs() < 0.02, "ratio {ratio}");
    for (p, f) in points.iter().zip(&faces) {
        assert!((p[2] - *f as f64).abs() < 1e-12);
    }
}

fn moments(cloud: &PointCloud) -> Vec<f64> {
    let c = cloud.centroid();
    let n = cloud.len() as f64;
    let mut m = vec![0.0; 8];
    for p in &cloud.points {
        let d = [p[0] - c[0], p[1] - c[1], p[2] - c[2]];
        let r = (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt();
        for a in 0..3 {
            m[a] += d[a] * d[a] / n;
            m[3 + a] += d[a].abs().powi(4) / n;
        }
        m[6] += r / n;
        m[7] += r * r * r / n;
    }
    m
}

#[test]
fn synthetic_classes_separate_on_moments() {
    let data = SynthSpec::parse("train=120,test=60,points=256").unwrap().generate().unwrap();
    let classes = data.num_categories();
    let mut centroids = vec![vec![0.0; 8]; classes];
    let mut counts = vec![0.0; classes];
    for i in data.indices(Split::Train) {
        let c = data.category_of(i, "moments").unwrap();
        for (acc, v) in centroids[c].iter_mut().zip(moments(data.cloud(i))) {
            *acc += v;
        }
        counts[c] += 1.0;
    }
    for (c, n) in centroids.iter_mut().zip(&counts) {
        c.iter_mut().for_each(|v| *v /= n);
    }
    let test = data.indices(Split::Test);
    let correct = test
        .iter()
        .filter(|&&i| {
            let m = moments(data.cloud(i));
            let d = |c: &Vec<f64>| c.iter().zip(&m).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
            let pred = (0..classes).min_by(|&a, &b| d(&centroids[a]).total_cmp(&d(&centroids[b]))).unwrap();
            pred == data.category_of(i, "moments").unwrap()
        })
        .count();
    let acc = correct as f64 / test.len() as f64;
    assert!(acc > 2.0 / classes as f64, "nearest-centroid accuracy {acc}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn pcdb_save_load_save_is_byte_identical(seed in any::<u64>(), n in 1usize..300, labels in any::<bool>(), cat in proptest::option::of(0u32..0x10000)) {
        let first = encode_binary(&random_cloud(seed, n, labels, cat)).unwrap();
        let second = encode_binary(&decode_binary(&first).unwrap()).unwrap();
        prop_assert_eq!(first, second);
    }

    #[test]
    fn text_round_trip_is_stable(seed in any::<u64>(), n in 1usize..100, labels in any::<bool>(), cat in proptest::option::of(0u32..1000)) {
        let cloud = random_cloud(seed, n, labels, cat);
        let first = encode_text(&cloud);
        let back = decode_text(&first).unwrap();
        for (p, q) in cloud.points.iter().zip(&back.points) {
            for d in 0..3 {
                prop_assert!((p[d] - q[d]).abs() <= 1e-8 * p[d].abs());
            }
        }
        prop_assert_eq!(encode_text(&back), first);
    }

    #[test]
    fn mdck_save_load_save_is_byte_identical(seed in any::<u64>(), tensors in 0usize..8, adam in any::<bool>()) {
        let ck = random_checkpoint(seed, tensors, adam);
        let first = ck.encode().unwrap();
        let back = Checkpoint::decode(&first).unwrap();
        prop_assert_eq!(&back, &ck);
        prop_assert_eq!(back.encode().unwrap(), first);
    }

    #[test]
    fn readers_survive_writer_corruption(seed in any::<u64>(), flips in proptest::collection::vec((any::<usize>(), any::<u8>()), 1..6), cut in any::<usize>()) {
        let blobs = [
            encode_binary(&random_cloud(seed, 17, true, Some(1))).unwrap(),
            random_checkpoint(seed, 3, true).encode().unwrap(),
            encode_text(&random_cloud(seed, 5, true, None)).into_bytes(),
        ];
        for (kind, blob) in blobs.iter().enumerate() {
            let mut bad = blob.clone();
            for &(at, byte) in &flips {
                let i = at % bad.len();
                bad[i] ^= byte.max(1);
            }
            let truncated = &blob[..cut % blob.len()];
            for bytes in [&bad[..], truncated] {
                match kind {
                    0 => { let _ = decode_binary(bytes); }
                    1 => { let _ = Checkpoint::decode(bytes); }
                    _ => { let _ = decode_text(&String::from_utf8_lossy(bytes)); }
                }
            }
            let err = match kind {
                0 => decode_binary(truncated).unwrap_err(),
                1 => Checkpoint::decode(truncated).unwrap_err(),
                _ => continue,
            };
            prop_assert!(err.is_data(), "{}", err);
        }
    }
}

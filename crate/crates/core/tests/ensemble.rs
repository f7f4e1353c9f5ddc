use std::fs::File;
use std::io::{BufReader, BufWriter, Write};

use ybmap::ensemble::*;
use ybmap::{Model, ModelParams};

fn model() -> Model {
    Model::new(ModelParams::default()).unwrap()
}

#[test]
fn file_round_trip_through_disk() {
    let m = model();
    let f = generate_file(&m, 3, 77, 50, 16).unwrap();
    assert_eq!(f.records.len(), 17);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("file_0003.ybv");
    f.write_to(BufWriter::new(File::create(&path).unwrap())).unwrap();
    let back = SnapshotFile::read_from(BufReader::new(File::open(&path).unwrap()), 3, 77).unwrap();
    assert_eq!(back, f);
}

#[test]
fn truncated_and_padded_files_are_rejected() {
    let m = model();
    let f = generate_file(&m, 0, 1, 10, 4).unwrap();
    let mut bytes = Vec::new();
    f.write_to(&mut bytes).unwrap();
    assert!(SnapshotFile::read_from(&bytes[..bytes.len() - 3], 0, 1).is_err());
    let mut padded = bytes.clone();
    padded.push(0);
    assert!(SnapshotFile::read_from(&padded[..], 0, 1).is_err());
    let mut bad_magic = bytes;
    bad_magic[0] = b'X';
    assert!(SnapshotFile::read_from(&bad_magic[..], 0, 1).is_err());
}

#[test]
fn labels_and_chain() {
    let m = model();
    let burn = 40;
    let f = generate_file(&m, 1, 5, burn, 8).unwrap();
    assert_eq!(f.records[0].label, 0);
    for (k, s) in f.post_burn().iter().enumerate() {
        assert_eq!(s.label, (2 * burn + 2 * k) as u64);
    }
    f.verify_chain(&m).unwrap();
    let mut broken = f.clone();
    broken.records[4].state = m.advance(&broken.records[4].state).unwrap();
    assert!(broken.verify_chain(&m).is_err());
}

#[test]
fn seeded_generation_is_byte_identical() {
    let m = model();
    let bytes = |f: &SnapshotFile| {
        let mut v = Vec::new();
        f.write_to(&mut v).unwrap();
        v
    };
    let a = generate_ensemble(&m, 3, 2024, 30, 8).unwrap();
    let b = generate_ensemble(&m, 3, 2024, 30, 8).unwrap();
    for (x, y) in a.iter().zip(&b) {
        assert_eq!(bytes(x), bytes(y));
    }
    let c = generate_ensemble(&m, 3, 2025, 30, 8).unwrap();
    assert_ne!(bytes(&a[0]), bytes(&c[0]));
    assert_ne!(bytes(&a[0]), bytes(&a[1]));
}

#[test]
fn snapshots_stay_in_the_trapping_box() {
    let m = model();
    let b = m.bounds();
    for f in generate_ensemble(&m, 2, 9, 100, 32).unwrap() {
        for s in f.post_burn() {
            assert!(s.state.iter().all(|&v| v >= b.permanence_floor && v <= b.n_max));
        }
    }
}

#[test]
fn csv_has_one_row_per_record() {
    let m = model();
    let f = generate_file(&m, 0, 2, 5, 3).unwrap();
    let mut out = Vec::new();
    f.write_csv(&mut out).unwrap();
    let text = String::from_utf8(out).unwrap();
    let rows: Vec<&str> = text.lines().collect();
    assert_eq!(rows.len(), 1 + f.records.len());
    assert_eq!(rows[1].split(',').count(), 1 + m.dim());
}

#[test]
fn perturbation_is_small_and_positive() {
    let m = model();
    let f = generate_file(&m, 0, 3, 50, 2).unwrap();
    let x = &f.post_burn()[0].state;
    let mut rng = file_rng(1, 0);
    let p = perturb(&m, x, 1e-9, &mut rng).unwrap();
    assert!(head_distance(&p.state, x) <= 1e-9);
    assert!(p.state.iter().all(|&v| v > 0.0));
    assert_eq!(divergence_time(&m, x, x, 0.1, 50).unwrap(), 51);
}

#[test]
fn small_perturbations_separate_quickly() {
    let m = model();
    let files = generate_ensemble(&m, 4, 11, 200, 1).unwrap();
    let r = sensitivity(&m, &files, 1e-9, 0.1, 1000, 11).unwrap();
    assert_eq!(r.per_file_b.len(), 4);
    assert_eq!(r.unperturbed_files, 0);
    assert!(r.max_b() < 100, "{:?}", r.per_file_b);
}

#[test]
fn dispersion_of_identical_files() {
    let m = model();
    let f = generate_file(&m, 0, 4, 20, 4).unwrap();
    let r = dispersion(&[f.clone(), f]).unwrap();
    assert_eq!(r.per_file_means.len(), 2);
    assert_eq!(r.per_file_means[0], r.per_file_means[1]);
    assert!(r.abs_deviation > 0.0);
    let mut out = Vec::new();
    writeln!(out, "{}", r.grand_mean).unwrap();
}

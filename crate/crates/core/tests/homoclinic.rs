use std::sync::OnceLock;

use nalgebra::DVector;
use proptest::prelude::*;
use ybmap::cli;
use ybmap::ensemble::generate_ensemble;
use ybmap::homoclinic::*;
use ybmap::spectral::{self, JacobianScheme};
use ybmap::{Error, Model, ModelParams, StateVector};

fn model() -> &'static Model {
    static M: OnceLock<Model> = OnceLock::new();
    M.get_or_init(|| Model::new(ModelParams::default()).unwrap())
}

fn polished() -> &'static StateVector {
    static P: OnceLock<StateVector> = OnceLock::new();
    P.get_or_init(|| spectral::newton_polish(model(), &spectral::reference_point(), 0.0, 8).unwrap().point)
}

fn unit(v: &[f64]) -> Vec<f64> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.iter().map(|x| x / n).collect()
}

fn offset(p: &[f64], eps: f64, dir: &[f64]) -> Vec<f64> {
    p.iter().zip(dir).map(|(a, d)| a + eps * d).collect()
}

#[test]
fn segment_lengths() {
    let m = model();
    let p = polished();
    assert!(unstable_segment(m, p, 19).unwrap().length < 1e-3);
    assert!(unstable_segment(m, p, 15).unwrap().length < 1e-4);
    // [p, T^2 p] is as long as the residual
    let zero = unstable_segment(m, p, 0).unwrap();
    assert!(zero.length < 1e-13, "{}", zero.length);
    assert_eq!(zero.left, *p);
}

#[test]
fn unpolished_point_fails_the_long_segment_bound() {
    let m = model();
    let raw = spectral::reference_point();
    assert!(matches!(unstable_segment(m, &raw, 19), Err(Error::Precondition(_))));
    assert!(unstable_segment(m, &raw, 15).unwrap().length < 1e-4);
    let mut bad = raw.into_inner();
    bad[3] *= 1.01;
    let bad = StateVector::new(bad).unwrap();
    assert!(matches!(unstable_segment(m, &bad, 15), Err(Error::Precondition(_))));
}

#[test]
fn degenerate_segment_is_rejected() {
    let p = polished().clone();
    let seg = UnstableSegment {
        left: p.clone(),
        right: p.clone(),
        s: 0,
        length: 0.0,
    };
    let cfg = ScanConfig {
        subdivisions: 4,
        max_pairs: 80,
        skip: DEFAULT_SKIP,
    };
    // the orbit of p only drifts away, so every minimum sits on the first
    // allowed step
    match scan_returns(model(), &p, &seg, cfg) {
        Err(Error::Inconclusive(_)) => {}
        other => panic!("{other:?}"),
    }
}

#[test]
fn finer_lattice_contains_the_coarse_one() {
    let m = model();
    let p = polished();
    let seg = unstable_segment(m, p, 19).unwrap();
    let cfg = |n| ScanConfig {
        subdivisions: n,
        max_pairs: 120,
        skip: DEFAULT_SKIP,
    };
    let coarse = scan_returns(m, p, &seg, cfg(8)).unwrap();
    let fine = scan_returns(m, p, &seg, cfg(16)).unwrap();
    for c in &coarse.per_point {
        let f = fine.per_point[2 * c.m];
        assert_eq!((f.j0, f.min_distance), (c.j0, c.min_distance));
    }
    assert!(fine.best.min_distance <= coarse.best.min_distance);
    assert_eq!(seg.lattice_point(3, 8), seg.lattice_point(6, 16));
}

#[test]
fn expansion_along_unstable_direction() {
    let m = model();
    let p = polished();
    let seg = unstable_segment(m, p, 15).unwrap();
    let u = unit(&seg.direction());
    let r1 = expansion_rate(m, p, &offset(p, 1e-7, &u)).unwrap();
    let r2 = expansion_rate(m, p, &offset(p, 1e-8, &u)).unwrap();
    assert!((3.1..=3.5).contains(&r1), "{r1}");
    assert!((r1 / r2 - 1.0).abs() < 0.01, "{r1} {r2}");
    assert!(expansion_rate(m, p, p).is_err());
}

#[test]
fn contraction_off_the_unstable_direction() {
    let m = model();
    let p = polished();
    let j = spectral::jacobian_t2(m, p, JacobianScheme::AnalyticChain).unwrap().matrix;
    let mu = spectral::spectrum(&j).unwrap().dominant;
    let w = DVector::from_fn(p.len(), |i, _| ((i as f64) * 0.731).sin());
    // (J - mu) w has no component along the unstable eigenvector
    let s = &j * &w - &w * mu;
    let s = unit(s.as_slice());
    let rate = expansion_rate(m, p, &offset(p, 1e-7, &s)).unwrap();
    assert!(rate < 1.0, "{rate}");
}

fn reference_run(gap_exponent: f64) -> Result<Refinement, Error> {
    let m = model();
    let p = polished();
    let seg = unstable_segment(m, p, 19).unwrap();
    let cand = ReturnCandidate {
        m: 1055,
        j0: 571,
        min_distance: f64::NAN,
    };
    refine(m, p, &seg, &cand, gap_exponent, &RefineConfig::default())
}

#[test]
fn refinement_respects_guards() {
    let run = reference_run(6.6).unwrap();
    assert_eq!(run.state.iterations_done, 571);
    assert_eq!(run.state.budget_remaining, 0);
    let mut done = 0;
    for c in &run.chunks {
        assert_eq!(c.start, done);
        if c.accepted {
            done += c.steps;
        }
        if c.landing {
            continue;
        }
        let ok = c.length_after <= 1e-4 && c.ratio() <= DEFAULT_RATIO_TOL;
        assert_eq!(ok, c.accepted, "{c:?}");
    }
    assert_eq!(done, 571);
    assert!(run.accepted_chunks().count() > 40);
    assert_eq!(run.chunks.iter().filter(|c| c.landing).count(), 1);
}

#[test]
fn verdict_follows_from_angles() {
    for e in [5.5, 6.6, 8.0, 10.0] {
        let run = reference_run(e).unwrap();
        let d = &run.diagnostics;
        assert_eq!(d.per_iterate_angles.len(), DIAGNOSTIC_ITERATES);
        assert!(d.per_iterate_angles.iter().all(|a| (0.0..=std::f64::consts::PI).contains(a)));
        assert_eq!(classify(&d.per_iterate_angles), d.verdict);
        // returns arrive along the unstable direction
        let far = d.far_from_tangency_angle;
        assert!(far.min(std::f64::consts::PI - far) < 1e-3, "{far}");
    }
}

#[test]
fn refinement_preconditions() {
    assert!(matches!(reference_run(3.0), Err(Error::Precondition(_))));
    assert!(matches!(reference_run(20.5), Err(Error::Precondition(_))));
    // an arc this short shrinks out of resolution before it lands
    assert!(matches!(reference_run(20.0), Err(Error::GapTooSmall { .. })));
}

#[test]
fn transcript_and_csv() {
    let run = reference_run(6.6).unwrap();
    let cand = ReturnCandidate {
        m: 1055,
        j0: 571,
        min_distance: 1.43e-3,
    };
    let text = transcript(&cand, &run);
    assert!(text.contains("exponent = 6.60000000"));
    assert!(text.contains(&format!("{}", run.diagnostics.verdict)));
    let mut csv = Vec::new();
    write_angles_csv(&mut csv, &run).unwrap();
    let csv = String::from_utf8(csv).unwrap();
    assert_eq!(csv.lines().count(), 1 + DIAGNOSTIC_ITERATES);
    assert_eq!(csv.lines().next(), Some("j,radians,degrees"));
}

#[test]
fn unstable_orbit_covers_the_attractor_projection() {
    let m = model();
    let p = polished();
    let params = m.params();
    let seg = unstable_segment(m, p, 19).unwrap();
    let mut y = StateVector::new(seg.lattice_point(1055, 10_000)).unwrap();
    let mut orbit = Vec::new();
    for _ in 0..1000 {
        y = m.advance_two(&y).unwrap();
        orbit.push(cli::project(&y, params).unwrap());
    }
    let files = generate_ensemble(m, 8, 2024, 2000, 256).unwrap();
    let cloud: Vec<_> = files
        .iter()
        .flat_map(|f| f.post_burn())
        .map(|r| cli::project(&r.state, params).unwrap())
        .collect();
    let overlap = cli::box_overlap(&cli::bounding_box(&cloud), &cli::bounding_box(&orbit));
    assert!(overlap >= 0.9, "{overlap}");
}

proptest! {
    #[test]
    fn distance_is_homogeneous(v in prop::collection::vec(-10.0f64..10.0, 1..30), c in -1e3f64..1e3) {
        let zero = vec![0.0; v.len()];
        let scaled: Vec<f64> = v.iter().map(|x| c * x).collect();
        let d = scaled_distance(&v, &zero);
        let ds = scaled_distance(&scaled, &zero);
        prop_assert!((ds - c.abs() * d).abs() <= 1e-12 * (1.0 + c.abs() * d));
        prop_assert_eq!(scaled_distance(&v, &v), 0.0);
    }

    #[test]
    fn angle_is_symmetric_and_bounded(
        u in prop::collection::vec(-5.0f64..5.0, 3),
        v in prop::collection::vec(-5.0f64..5.0, 3),
        c in 1e-3f64..1e3,
    ) {
        let a = angle(&u, &v);
        prop_assert!((0.0..=std::f64::consts::PI).contains(&a.radians));
        prop_assert_eq!(a.radians, angle(&v, &u).radians);
        let cu: Vec<f64> = u.iter().map(|x| x * c).collect();
        if !a.degenerate {
            prop_assert!((angle(&cu, &v).radians - a.radians).abs() < 1e-6);
        }
    }
}

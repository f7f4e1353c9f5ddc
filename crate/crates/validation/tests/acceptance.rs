use std::io::Write;
use std::sync::OnceLock;

use rand::Rng;
use rayon::prelude::*;
use ybmap::ensemble::{self, file_rng, generate_ensemble, random_initial, SnapshotFile};
use ybmap::entropy::{self, Sample};
use ybmap::homoclinic::{self, RefineConfig, Refinement, ReturnCandidate, ScanConfig, UnstableSegment, Verdict};
use ybmap::spectral::{self, JacobianScheme, DEFAULT_FD_STEP};
use ybmap::{Error, Model, ModelParams, StateVector};

const SEED: u64 = 2024;

const N_MAX_CEILING: f64 = 41.406;
const PERMANENCE_PRODUCT: f64 = 20.475;
const LIPSCHITZ_FACTOR: f64 = 659.75;
const FIRST_COORDINATE: f64 = 1.2326490487970465;
const J0_BAND: (usize, usize) = (550, 700);
const NEARBY: f64 = 1.0;

fn model() -> &'static Model {
    static M: OnceLock<Model> = OnceLock::new();
    M.get_or_init(|| Model::new(ModelParams::default()).unwrap())
}

fn desk() -> &'static [SnapshotFile] {
    static E: OnceLock<Vec<SnapshotFile>> = OnceLock::new();
    E.get_or_init(|| generate_ensemble(model(), 50, SEED, ensemble::DEFAULT_BURN_PAIRS, ensemble::DEFAULT_SNAPSHOTS).unwrap())
}

fn polished() -> &'static spectral::FixedPointResult {
    static P: OnceLock<spectral::FixedPointResult> = OnceLock::new();
    P.get_or_init(|| spectral::newton_polish(model(), &spectral::reference_point(), 0.0, 8).unwrap())
}

fn report(n: usize, ok: bool, detail: String) {
    let line = format!("criterion {n}: {} {detail}\n", if ok { "PASS" } else { "FAIL" });
    // straight to the process stdout so the line shows without --nocapture
    std::io::stdout().lock().write_all(line.as_bytes()).unwrap();
    assert!(ok, "criterion {n}: {detail}");
}

fn sup(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

#[test]
fn criterion_01_bounds() {
    let m = model();
    let skip = 201 + m.params().min_lag();
    let worst: Vec<(f64, bool)> = (0..100u32)
        .into_par_iter()
        .map(|i| {
            let x = random_initial(m, &mut file_rng(SEED, i));
            let series = m.simulate(&x, 10_000).unwrap();
            let top = series[skip..].iter().cloned().fold(f64::MIN, f64::max);
            (top, series.iter().all(|&v| v > 0.0))
        })
        .collect();
    let top = worst.iter().map(|w| w.0).fold(f64::MIN, f64::max);
    let positive = worst.iter().all(|w| w.1);
    let b = m.bounds();
    let product = b.c0 * m.params().fecundity_cap;
    report(
        1,
        top <= N_MAX_CEILING && positive && (product - PERMANENCE_PRODUCT).abs() <= 1e-9,
        format!("max fresh value {top:.6}, all positive {positive}, c0*m0 {product:.12}"),
    );
}

#[test]
fn criterion_02_non_injectivity() {
    let m = model();
    let n_max = m.bounds().n_max;
    let low = n_max.powf(1.0 - m.params().decay_exponent);
    let x = m.complete_state(&vec![n_max; 200]).unwrap();
    let y = m.complete_state(&vec![low; 200]).unwrap();
    let d = sup(&m.advance_two(&x).unwrap(), &m.advance_two(&y).unwrap());
    report(2, d <= 1e-12, format!("image difference {d:e}, states {:.3} apart", x.sup_distance(&y)));
}

#[test]
fn criterion_03_lipschitz() {
    let m = model();
    let mut rng = file_rng(SEED, 3);
    let mut violations = 0;
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let a = random_initial(m, &mut rng);
        let scale = 10f64.powf(rng.gen_range(-8.0..0.0));
        let b: Vec<f64> = a.iter().map(|&v| (v + scale * rng.gen_range(-1.0..1.0)).max(1e-6)).collect();
        let b = StateVector::new(b).unwrap();
        let q = sup(&m.advance(&a).unwrap(), &m.advance(&b).unwrap()) / a.sup_distance(&b);
        worst = worst.max(q);
        if q > LIPSCHITZ_FACTOR {
            violations += 1;
        }
    }
    report(3, violations == 0, format!("{violations} violations, largest ratio {worst:.4}"));
}

#[test]
fn criterion_04_fixed_point() {
    let r = polished();
    let (s, l) = r.recompute_residuals(model()).unwrap();
    let first = r.point[0];
    report(
        4,
        s <= 1e-10 && l <= 1e-8 && (first - FIRST_COORDINATE).abs() <= 1e-9,
        format!("sup {s:e}, l1 {l:e}, first coordinate {first:.16}"),
    );
}

#[test]
fn criterion_05_spectrum() {
    let m = model();
    let p = &polished().point;
    let a = spectral::jacobian_t2(m, p, JacobianScheme::AnalyticChain).unwrap().matrix;
    let f = spectral::jacobian_t2(m, p, JacobianScheme::FiniteDifference(DEFAULT_FD_STEP)).unwrap().matrix;
    let diff = (&a - &f).abs().max();
    let s = spectral::spectrum(&a).unwrap();
    let ok = (-3.5..=-3.1).contains(&s.dominant) && s.subdominant_modulus < 0.5 && s.consistent && diff <= 1e-4;
    report(
        5,
        ok,
        format!("dominant {:.6}, next modulus {:.4}, scheme difference {diff:e}", s.dominant, s.subdominant_modulus),
    );
}

fn worst_b(us: &[f64]) -> (usize, Vec<usize>) {
    let maxes: Vec<usize> = us
        .iter()
        .map(|&u| ensemble::sensitivity(model(), desk(), u, 0.1, 1000, SEED).unwrap().max_b())
        .collect();
    (maxes.iter().copied().max().unwrap(), maxes)
}

#[test]
fn criterion_06_sensitivity() {
    let (coarse, per_coarse) = worst_b(&[1e-10, 1e-9, 1e-8]);
    let (fine, per_fine) = worst_b(&[1e-18, 1e-17, 1e-16]);
    report(
        6,
        coarse <= 80 && fine <= 200,
        format!("largest b for 1e-10..1e-8 {per_coarse:?} (limit 80), for 1e-18..1e-16 {per_fine:?} (limit 200)"),
    );
}

#[test]
fn criterion_07_dispersion() {
    let d = ensemble::dispersion(desk()).unwrap();
    report(
        7,
        (2.2..=2.5).contains(&d.grand_mean) && (0.85..=1.10).contains(&d.abs_deviation),
        format!("grand mean {:.4}, deviation {:.4}", d.grand_mean, d.abs_deviation),
    );
}

#[test]
fn criterion_08_estimator_algebra() {
    let inversion = (1..=500)
        .map(|i| {
            let k = i as f64 * 0.01;
            (entropy::k_from_mean_escape(entropy::mean_escape_from_k(k, 1.0), 1.0) - k).abs()
        })
        .fold(0.0, f64::max);

    let mut rng = file_rng(SEED, 8);
    let idempotent = (0..200).all(|_| {
        let n = rng.gen_range(0..80);
        let samples: Vec<Sample> = (0..n)
            .map(|_| Sample {
                file_j: rng.gen_range(0..4),
                iter_j: rng.gen_range(0..60),
                file_i: rng.gen_range(0..4),
                iter_i: rng.gen_range(0..60),
                escape: rng.gen_range(1..8),
            })
            .collect();
        let once = entropy::dedup(&samples);
        entropy::dedup(&once) == once
    });

    let rows = [
        (5591.0 / 2866.0, 2866, 1.0 / 128.0, 0.71868973392930086, 0.019083966799452565),
        (2946.0 / 1558.0, 1558, 1.0 / 1024.0, 0.75258445595582577, 0.025936858832676262),
    ];
    let golden = rows.iter().all(|&(b, n, d, k, s)| {
        let e = entropy::estimate_from_mean(b, n, d, 1.0).unwrap();
        (e.k_hat - k).abs() <= 1e-12 && (e.sigma_k - s).abs() <= 1e-12
    });
    report(
        8,
        inversion <= 1e-12 && idempotent && golden,
        format!("inversion error {inversion:e}, dedup idempotent {idempotent}, golden rows {golden}"),
    );
}

#[test]
fn criterion_09_entropy() {
    let run = entropy::entropy_at(model(), desk(), 1.0 / 1024.0, ensemble::DEFAULT_ESCAPE_CAP, 1.0).unwrap();
    let Some(e) = run.estimate else {
        report(9, false, format!("no estimate from {} matches", run.matches));
        return;
    };
    report(
        9,
        (0.6..=0.9).contains(&e.k_hat) && e.per_year() > 0.25,
        format!(
            "k_hat {:.4} sigma {:.4} from {} samples ({} matches, {} capped), per year {:.4}",
            e.k_hat,
            e.k_hat * e.sigma_k,
            e.sample_count,
            run.matches,
            run.capped,
            e.per_year()
        ),
    );
}

struct Homoclinic {
    full: ReturnCandidate,
    smoke: ReturnCandidate,
    /// `(gap_exponent, outcome)` over the grid.
    grid: Vec<(f64, Result<Refinement, Error>)>,
}

fn homoclinic_runs() -> &'static Homoclinic {
    static H: OnceLock<Homoclinic> = OnceLock::new();
    H.get_or_init(|| {
        let m = model();
        let p = &polished().point;
        let seg: UnstableSegment = homoclinic::unstable_segment(m, p, 19).unwrap();
        let full = homoclinic::scan_returns(m, p, &seg, ScanConfig::default()).unwrap().best;
        let smoke_cfg = ScanConfig {
            subdivisions: 1000,
            ..ScanConfig::default()
        };
        let smoke = homoclinic::scan_returns(m, p, &seg, smoke_cfg).unwrap().best;
        let cfg = RefineConfig::default();
        let grid = (0..=600)
            .into_par_iter()
            .map(|k| {
                let e = 10.0 + 0.01 * k as f64;
                (e, homoclinic::refine(m, p, &seg, &full, e, &cfg))
            })
            .collect();
        Homoclinic { full, smoke, grid }
    })
}

fn in_band(c: &ReturnCandidate) -> bool {
    (J0_BAND.0..=J0_BAND.1).contains(&c.j0)
}

#[test]
fn criterion_10_homoclinic() {
    let h = homoclinic_runs();
    let with = |v: Verdict| -> Vec<f64> {
        h.grid
            .iter()
            .filter(|(_, r)| matches!(r, Ok(r) if r.diagnostics.verdict == v))
            .map(|(e, _)| *e)
            .collect()
    };
    let crossing = with(Verdict::CrossingEvidence);
    let same = with(Verdict::SameSide);
    let failed = h.grid.iter().filter(|(_, r)| r.is_err()).count();
    let paired = crossing.iter().any(|c| same.iter().any(|s| (c - s).abs() <= NEARBY));
    let ok = in_band(&h.full) && in_band(&h.smoke) && paired;
    report(
        10,
        ok,
        format!(
            "full scan m {} j0 {}, smoke scan m {} j0 {}, over {} exponents: {} crossing, {} same side, {} runs stopped early",
            h.full.m,
            h.full.j0,
            h.smoke.m,
            h.smoke.j0,
            h.grid.len(),
            crossing.len(),
            same.len(),
            failed
        ),
    );
}

#[test]
fn criterion_11_guards() {
    let h = homoclinic_runs();
    let mut checked = 0;
    let mut bad = Vec::new();
    for (e, r) in &h.grid {
        let Ok(r) = r else { continue };
        for c in r.accepted_chunks() {
            checked += 1;
            if !(c.length_after <= homoclinic::DEFAULT_MAX_LENGTH && c.ratio() <= homoclinic::DEFAULT_RATIO_TOL) {
                bad.push((*e, c.start, c.length_after, c.ratio()));
            }
        }
    }
    report(
        11,
        checked > 0 && bad.is_empty(),
        format!("{checked} accepted chunks checked, violations {bad:?}"),
    );
}

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use ybmap::spectral::*;
use ybmap::{Model, ModelParams, StateVector};

fn model() -> Model {
    Model::new(ModelParams::default()).unwrap()
}

fn analytic(m: &Model, x: &StateVector) -> DMatrix<f64> {
    jacobian_t2(m, x, JacobianScheme::AnalyticChain).unwrap().matrix
}

#[test]
fn schemes_agree_at_reference_point() {
    let m = model();
    let p = reference_point();
    let a = jacobian_t2(&m, &p, JacobianScheme::AnalyticChain).unwrap();
    let f = jacobian_t2(&m, &p, JacobianScheme::FiniteDifference(DEFAULT_FD_STEP)).unwrap();
    assert!(!f.kink_warning);
    let worst = (&a.matrix - &f.matrix).abs().max();
    assert!(worst < 1e-4, "max entry difference {worst:e}");
}

#[test]
fn fd_warns_when_straddling_kink() {
    let m = model();
    let mut v = reference_point().into_inner();
    v[150] = 1.0 + 1e-7;
    let x = StateVector::new(v).unwrap();
    let f = jacobian_t2(&m, &x, JacobianScheme::FiniteDifference(1e-6)).unwrap();
    assert!(f.kink_warning);
}

#[test]
fn fd_rejects_bad_step() {
    let m = model();
    assert!(jacobian_t2(&m, &reference_point(), JacobianScheme::FiniteDifference(0.0)).is_err());
}

#[test]
fn one_year_fresh_rows_before_feedback() {
    // Until fresh values re-enter the lag window (min_lag steps), fresh
    // coordinate p+1+i depends only on inputs i+1.., and on input i+1 only
    // through the longest lag.
    let m = model();
    let params = m.params().clone();
    let p = params.steps_per_year;
    let x = reference_point();
    let j = jacobian_t(&m, &x).unwrap().matrix;
    for row in 0..=p {
        for col in 0..m.dim() {
            let expected = if col == row + p { 1.0 } else { 0.0 };
            assert_eq!(j[(row, col)], expected);
        }
    }
    for i in 0..params.min_lag() {
        let row = p + 1 + i;
        for col in 0..=i {
            assert_eq!(j[(row, col)], 0.0, "({row},{col})");
        }
        let col = i + 1;
        let slope = h_derivative(x[col], &params).unwrap().value;
        let diag = slope * m.gate_at_index(col) * params.survival(params.max_lag() as i64) / p as f64;
        assert!((j[(row, col)] - diag).abs() <= 1e-15 * diag.abs().max(1.0));
    }
}

#[test]
fn one_year_jacobians_compose() {
    let m = model();
    let x = reference_point();
    let tx = m.advance(&x).unwrap();
    let composed = jacobian_t(&m, &tx).unwrap().matrix * jacobian_t(&m, &x).unwrap().matrix;
    let direct = analytic(&m, &x);
    assert!((composed - direct).abs().max() < 1e-12);
}

#[test]
fn spectrum_at_reference_point() {
    let m = model();
    let j = analytic(&m, &reference_point());
    let s = spectrum(&j).unwrap();
    assert!((-3.5..=-3.1).contains(&s.dominant), "dominant {}", s.dominant);
    assert!(s.consistent && !s.fallback_used);
    assert_eq!(s.all_moduli.len(), 201);
    assert!(s.all_moduli.windows(2).all(|w| w[0] >= w[1]));
    assert!(s.all_moduli[1..].iter().all(|&m| m < 0.5));
    assert_eq!(s.unstable_count(), 1);
    assert!(s.dominant < 0.0);
}

#[test]
fn jacobian_rank_and_saddle_nondegeneracy() {
    let m = model();
    let j = analytic(&m, &reference_point());
    let zero_cols = (0..201).filter(|&c| j.column(c).iter().all(|v| *v == 0.0)).count();
    assert_eq!(zero_cols, 60);
    let shifted = &j - DMatrix::<f64>::identity(201, 201);
    let s = smallest_singular_value(&shifted);
    assert!(s > 0.05, "smallest singular value of J - I is {s:e}");
}

#[test]
fn newton_from_reference() {
    let m = model();
    let r = newton_polish(&m, &reference_point(), 1e-12, 5).unwrap();
    assert!(r.converged);
    assert!(r.iterations_used <= 5);
    assert!(r.sup_residual <= 1e-12);
    let (sup, l1) = r.recompute_residuals(&m).unwrap();
    assert!((sup - r.sup_residual).abs() <= 1e-15);
    assert!((l1 - r.l1_residual).abs() <= 1e-15);
    // period exactly two
    assert!(m.advance(&r.point).unwrap().sup_distance(&r.point) > 0.1);
}

#[test]
fn newton_recovers_from_perturbation() {
    let m = model();
    let p = reference_point();
    let base = newton_polish(&m, &p, 1e-13, 10).unwrap();
    // Coordinate 0 is invisible to T^2, so move a coordinate that matters too.
    let mut v = p.to_vec();
    v[0] += 1e-6;
    v[150] += 1e-6;
    let r = newton_polish(&m, &StateVector::new(v).unwrap(), 1e-13, 10).unwrap();
    assert!(r.converged);
    let mut diff = r.point.to_vec();
    diff[0] -= 1e-6;
    let worst = diff.iter().zip(base.point.iter()).skip(1).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    assert!(worst <= 1e-10, "moved {worst:e}");
}

#[test]
fn newton_far_guess_does_not_converge() {
    let m = model();
    let c = StateVector::constant(201, 10.0).unwrap();
    let r = newton_polish(&m, &c, 1e-12, 50).unwrap();
    assert!(!r.converged);
}

#[test]
fn find_period2_from_constant_one_stays_bounded() {
    let m = model();
    let r = find_period2_point(&m, &StateVector::constant(201, 1.0).unwrap(), 1e-10, 300).unwrap();
    let b = m.bounds();
    assert!(r.point.iter().all(|&v| v > 0.0 && v <= b.n_max + 1e-12));
}

#[test]
fn directional_derivatives_match() {
    let m = model();
    let b = m.bounds();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let step = 1e-6;
    let mut checked = 0;
    while checked < 20 {
        let head: Vec<f64> = (0..200).map(|_| rng.gen_range(b.permanence_floor..b.n_max)).collect();
        let x = m.complete_state(&head).unwrap();
        let near_kink = m
            .simulate(&x, 200)
            .unwrap()
            .iter()
            .any(|v| (v - 1.0).abs() < 1e-4);
        if near_kink {
            continue;
        }
        let dir = DVector::from_fn(201, |_, _| rng.gen_range(-1.0..1.0));
        let plus: Vec<f64> = x.iter().zip(dir.iter()).map(|(a, d)| a + step * d).collect();
        let minus: Vec<f64> = x.iter().zip(dir.iter()).map(|(a, d)| a - step * d).collect();
        let fp = m.advance_two(&plus).unwrap();
        let fm = m.advance_two(&minus).unwrap();
        let fd = DVector::from_fn(201, |i, _| (fp[i] - fm[i]) / (2.0 * step));
        let exact = analytic(&m, &x) * &dir;
        let rel = (&fd - &exact).norm() / exact.norm();
        assert!(rel < 1e-5, "relative error {rel:e}");
        checked += 1;
    }
}

//! The verification harness itself: finite-difference oracle sanity and the
//! published-composite arithmetic fixtures.

use fabseg::error::Error;
use fabseg::losses::dice_graph;
use fabseg::verification::{
    check_composite_fixtures, finite_difference_gradient, rel_error, GradCheckReport,
    COMPOSITE_TOLERANCE, DEFAULT_FD_STEP, REFERENCE_COMPOSITES,
};
use fabseg_autograd::Tensor;
use ndarray::{ArrayD, IxDyn};

fn arr(v: &[f64]) -> ArrayD<f64> {
    ArrayD::from_shape_vec(IxDyn(&[v.len()]), v.to_vec()).unwrap()
}

#[test]
fn finite_difference_on_quadratic() {
    // f(x) = sum(x^2) has gradient 2x.
    let x = arr(&[1.0, 2.0]);
    let g = finite_difference_gradient(|x| Ok(x.iter().map(|v| v * v).sum()), &x, DEFAULT_FD_STEP)
        .unwrap();
    assert!((g[[0]] - 2.0).abs() < 1e-8, "got {}", g[[0]]);
    assert!((g[[1]] - 4.0).abs() < 1e-8, "got {}", g[[1]]);
}

#[test]
fn finite_difference_on_constant_is_zero() {
    let x = arr(&[0.3, -0.7, 2.0]);
    let g = finite_difference_gradient(|_| Ok(42.0), &x, DEFAULT_FD_STEP).unwrap();
    assert!(g.iter().all(|&v| v == 0.0));
}

#[test]
fn finite_difference_matches_dice_analytic_gradient() {
    // The oracle agrees with the engine's analytic dice gradient; this is
    // the cross-check that licenses using it against the other losses.
    let y0 = arr(&[0.8, 0.2, 0.6, 0.4, 0.5]);
    let gt = Tensor::constant(arr(&[1.0, 0.0, 1.0, 0.0, 1.0]));
    let leaf = Tensor::leaf(y0.clone());
    let loss = dice_graph(&leaf, &gt, 1e-6).unwrap();
    let analytic = loss.backward().get(&leaf).unwrap().clone();
    let numeric = finite_difference_gradient(
        |x| Ok(dice_graph(&Tensor::constant(x.clone()), &gt, 1e-6).unwrap().scalar()),
        &y0,
        DEFAULT_FD_STEP,
    )
    .unwrap();
    let report = GradCheckReport::compare("y", &analytic, &numeric, DEFAULT_FD_STEP).unwrap();
    assert!(report.max_rel_error < 1e-5, "rel err {} at {}", report.max_rel_error, report.worst_parameter);
    assert_eq!(report.precision, "double");
}

#[test]
fn finite_difference_rejects_bad_inputs() {
    let x = arr(&[1.0]);
    assert!(matches!(
        finite_difference_gradient(|_| Ok(1.0), &x, 0.0),
        Err(Error::InvalidArgument(_))
    ));
    assert!(matches!(
        finite_difference_gradient(|_| Ok(f64::NAN), &x, 1e-5),
        Err(Error::NumericalError(_))
    ));
}

#[test]
fn rel_error_guards_zero_denominator() {
    assert_eq!(rel_error(0.0, 0.0), 0.0);
    assert!((rel_error(1.0, 1.1) - 0.1 / 1.1).abs() < 1e-15);
    assert!(rel_error(0.0, 1e-13) < 1.0 + 1e-9);
}

#[test]
fn composite_fixtures_all_pass() {
    let checks = check_composite_fixtures();
    assert_eq!(checks.len(), 10);
    for c in &checks {
        assert!(
            c.pass,
            "{}/{}: recomputed {} vs printed {}",
            c.dataset, c.method, c.computed_miou_pct, c.printed_miou_pct
        );
    }
}

#[test]
fn composite_fixture_reference_rows() {
    // Spot-check three rows against hand arithmetic.
    let find = |dataset: &str, method: &str| {
        check_composite_fixtures()
            .into_iter()
            .find(|c| c.dataset == dataset && c.method == method)
            .expect("fixture row")
    };
    let r = find("AI4B", "fabSAM");
    assert!((r.computed_miou_pct - 49.02).abs() < 1e-9);
    let r = find("AI4S", "Deeplabv3+");
    assert!((r.computed_miou_pct - 43.775).abs() < 1e-9);
    assert_eq!(r.printed_miou_pct, 43.78);
    let r = find("AI4S", "SAM (zero-shot)");
    assert!((r.computed_miou_pct - 41.175).abs() < 1e-9);
    assert_eq!(r.printed_miou_pct, 41.18);
}

#[test]
fn composite_tolerance_is_tight() {
    // A fabricated off-by-0.01 composite must fail: the tolerance accepts
    // only rounding of the true mean, not transcription errors.
    for row in REFERENCE_COMPOSITES {
        let computed = (row.iou_region_pct + row.iou_boundary_pct) / 2.0;
        assert!((computed - (row.printed_miou_pct + 0.011)).abs() > COMPOSITE_TOLERANCE);
    }
}

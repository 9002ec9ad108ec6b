//! Loss oracles: frozen hand arithmetic, closed forms, degenerate-parameter
//! identities, and finite-difference gradient checks for every objective.

use fabseg::error::Error;
use fabseg::losses::{
    cross_entropy_graph, cross_entropy_loss, dice_graph, dice_loss, dice_loss_with_smoothing,
    finetune_loss, finetune_loss_graph, focal_graph, focal_loss, prompter_loss,
    prompter_loss_graph, softmax_fg_prob, FinetuneLossWeights, PrompterLossWeights,
};
use fabseg::metrics::{confusion_counts, pixel_metrics};
use fabseg::raster::{Domain, Raster};
use fabseg::verification::{finite_difference_gradient, GradCheckReport, DEFAULT_FD_STEP};
use fabseg_autograd::Tensor;
use ndarray::{Array2, ArrayD, IxDyn};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn arr(v: &[f64]) -> ArrayD<f64> {
    ArrayD::from_shape_vec(IxDyn(&[v.len()]), v.to_vec()).unwrap()
}

// ---------------------------------------------------------------------------
// Frozen reference values
// ---------------------------------------------------------------------------

/// Hand arithmetic: 1 - 2*(0.8 + 0.6) / (2 + 2) = 1 - 2.8/4 = 0.3.
#[test]
fn dice_reference_value() {
    let v = dice_loss(&arr(&[0.8, 0.2, 0.6, 0.4]), &arr(&[1.0, 0.0, 1.0, 0.0])).unwrap();
    assert!(
        (v.value - 0.3).abs() < 1e-9,
        "dice reference: got {} (err {})",
        v.value,
        (v.value - 0.3).abs()
    );
}

#[test]
fn dice_trivial_values() {
    // Perfect overlap with k > 0 positives: exactly zero.
    let perfect = dice_loss(&arr(&[1.0, 0.0, 1.0]), &arr(&[1.0, 0.0, 1.0])).unwrap();
    assert_eq!(perfect.value, 0.0);
    // Disjoint supports: approaches one (exact up to the smoothing term).
    let disjoint = dice_loss(&arr(&[0.0, 1.0]), &arr(&[1.0, 0.0])).unwrap();
    assert!((disjoint.value - 1.0).abs() < 1e-9);
    // Both empty: smoothing makes the ratio one, the loss zero.
    let empty = dice_loss(&arr(&[0.0, 0.0]), &arr(&[0.0, 0.0])).unwrap();
    assert_eq!(empty.value, 0.0);
}

/// Direct evaluation of the two focal branches at alpha = 0.25, gamma = 2:
/// positive branch at y = 0.9 gives 0.25 * 0.1^2 * (-ln 0.9) ~ 2.634e-4;
/// negative branch at y = 0.1 gives 0.75 * 0.1^2 * (-ln 0.9) ~ 7.902e-4.
#[test]
fn focal_reference_values() {
    let pos = focal_loss(&arr(&[0.9]), &arr(&[1.0]), 0.25, 2.0).unwrap();
    assert!((pos.value - 2.634e-4).abs() < 1e-7, "positive branch: got {}", pos.value);
    let exact_pos = 0.25 * (1.0 - 0.9f64).powi(2) * -(0.9f64.ln());
    assert!((pos.value - exact_pos).abs() < 1e-15);

    let neg = focal_loss(&arr(&[0.1]), &arr(&[0.0]), 0.25, 2.0).unwrap();
    assert!((neg.value - 7.902e-4).abs() < 1e-7, "negative branch: got {}", neg.value);
    let exact_neg = 0.75 * 0.1f64.powi(2) * -(0.9f64.ln());
    assert!((neg.value - exact_neg).abs() < 1e-15);
}

/// Closed form: uniform y = 0.5 against an all-ones target is ln 2.
#[test]
fn cross_entropy_reference_values() {
    let v = cross_entropy_loss(&arr(&[0.5, 0.5, 0.5]), &arr(&[1.0, 1.0, 1.0])).unwrap();
    assert!((v.value - std::f64::consts::LN_2).abs() < 1e-9, "got {}", v.value);

    // Perfect hard predictions cost only the clamp epsilon.
    let perfect = cross_entropy_loss(&arr(&[1.0, 0.0]), &arr(&[1.0, 0.0])).unwrap();
    assert!(perfect.value > 0.0 && perfect.value < 1.1e-7, "got {}", perfect.value);

    // Complement symmetry: loss(y, gt) == loss(1-y, 1-gt).
    let y = arr(&[0.25, 0.75, 0.5, 0.125]);
    let gt = arr(&[1.0, 0.0, 1.0, 0.0]);
    let flipped = cross_entropy_loss(&y.mapv(|v| 1.0 - v), &gt.mapv(|v| 1.0 - v)).unwrap();
    let direct = cross_entropy_loss(&y, &gt).unwrap();
    assert!((direct.value - flipped.value).abs() < 1e-12);
}

/// gamma = 0, alpha = 0.5 degenerates the focal loss to half the
/// cross-entropy, bitwise on 100 random vectors.
#[test]
fn focal_degenerates_to_scaled_cross_entropy() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    for _ in 0..100 {
        let n = rng.random_range(1..32);
        let y: Vec<f64> = (0..n).map(|_| rng.random_range(0.01..0.99)).collect();
        let gt: Vec<f64> = (0..n).map(|_| f64::from(rng.random_range(0..2u32))).collect();
        let focal = focal_loss(&arr(&y), &arr(&gt), 0.5, 0.0).unwrap();
        let ce = cross_entropy_loss(&arr(&y), &arr(&gt)).unwrap();
        assert!(
            (focal.value - 0.5 * ce.value).abs() < 1e-9,
            "focal {} vs half-CE {}",
            focal.value,
            0.5 * ce.value
        );
    }
}

#[test]
fn finetune_loss_composes_terms() {
    let y = arr(&[0.8, 0.2, 0.6, 0.4]);
    let gt = arr(&[1.0, 0.0, 1.0, 0.0]);
    let w = FinetuneLossWeights::default();
    let combined = finetune_loss(&y, &gt, &w).unwrap();
    let dice = dice_loss(&y, &gt).unwrap();
    let focal = focal_loss(&y, &gt, w.alpha, w.gamma).unwrap();
    // Breakdown terms are the standalone values; the total is their
    // weighted sum (weights are 1 here).
    assert_eq!(combined.term("dice").unwrap(), dice.value);
    assert_eq!(combined.term("focal").unwrap(), focal.value);
    assert!((combined.value - (dice.value + focal.value)).abs() < 1e-15);

    // A zero focal weight leaves only the scaled dice term.
    let dice_only = FinetuneLossWeights { w_d: 2.5, w_f: 0.0, ..w };
    let v = finetune_loss(&y, &gt, &dice_only).unwrap();
    assert!((v.value - 2.5 * dice.value).abs() < 1e-15);
}

#[test]
fn prompter_loss_composes_heads() {
    // Zero logits in both channels make the foreground probability exactly
    // 0.5, so each head costs ln 2 against an all-ones target.
    let logits = ArrayD::<f64>::zeros(IxDyn(&[2, 2, 2]));
    let gt = ArrayD::<f64>::ones(IxDyn(&[2, 2]));
    let w = PrompterLossWeights::default();
    let v = prompter_loss(&logits, &logits, &gt, &w).unwrap();
    let ln2 = std::f64::consts::LN_2;
    assert!((v.term("main_ce").unwrap() - ln2).abs() < 1e-12);
    assert!((v.term("aux_ce").unwrap() - ln2).abs() < 1e-12);
    assert!((v.value - 1.4 * ln2).abs() < 1e-12);

    // Degenerate weights reduce to a single head; equal weights double it.
    let main_only = prompter_loss(&logits, &logits, &gt, &PrompterLossWeights { w_m: 1.0, w_a: 0.0 }).unwrap();
    assert!((main_only.value - ln2).abs() < 1e-12);
    let both = prompter_loss(&logits, &logits, &gt, &PrompterLossWeights { w_m: 1.0, w_a: 1.0 }).unwrap();
    assert!((both.value - 2.0 * ln2).abs() < 1e-12);
}

// ---------------------------------------------------------------------------
// Validation errors
// ---------------------------------------------------------------------------

#[test]
fn losses_validate_inputs() {
    let y = arr(&[0.5, 0.5]);
    let gt = arr(&[1.0, 0.0]);
    let short = arr(&[1.0]);
    assert!(matches!(cross_entropy_loss(&y, &short), Err(Error::ShapeError(_))));
    assert!(matches!(dice_loss(&y, &short), Err(Error::ShapeError(_))));
    assert!(matches!(focal_loss(&arr(&[1.5, 0.0]), &gt, 0.25, 2.0), Err(Error::InvalidRange(_))));
    assert!(matches!(cross_entropy_loss(&y, &arr(&[0.5, 0.0])), Err(Error::InvalidArgument(_))));
    assert!(matches!(focal_loss(&y, &gt, 0.0, 2.0), Err(Error::InvalidArgument(_))));
    assert!(matches!(focal_loss(&y, &gt, 1.0, 2.0), Err(Error::InvalidArgument(_))));
    assert!(matches!(focal_loss(&y, &gt, 0.25, -1.0), Err(Error::InvalidArgument(_))));
    assert!(matches!(
        finetune_loss(&y, &gt, &FinetuneLossWeights { w_d: 0.0, w_f: 0.0, ..Default::default() }),
        Err(Error::InvalidArgument(_))
    ));
    let logits = ArrayD::<f64>::zeros(IxDyn(&[2, 2, 2]));
    let gt2 = ArrayD::<f64>::ones(IxDyn(&[2, 2]));
    assert!(matches!(
        prompter_loss(&logits, &logits, &gt2, &PrompterLossWeights { w_m: 0.0, w_a: 0.0 }),
        Err(Error::InvalidArgument(_))
    ));
    let bad_logits = ArrayD::<f64>::zeros(IxDyn(&[3, 2, 2]));
    assert!(matches!(
        prompter_loss(&bad_logits, &bad_logits, &gt2, &PrompterLossWeights::default()),
        Err(Error::ShapeError(_))
    ));
    let nan_logits = ArrayD::<f64>::from_elem(IxDyn(&[2, 2, 2]), f64::NAN);
    assert!(matches!(
        prompter_loss(&nan_logits, &nan_logits, &gt2, &PrompterLossWeights::default()),
        Err(Error::NumericalError(_))
    ));
}

// ---------------------------------------------------------------------------
// Properties
// ---------------------------------------------------------------------------

proptest! {
    /// All objectives stay finite and non-negative over random inputs,
    /// including hard 0/1 probabilities (the clamp handles the poles).
    #[test]
    fn losses_are_finite_and_nonnegative(
        seed in 0u64..1u64 << 48,
        n in 1usize..24,
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let y: Vec<f64> = (0..n)
            .map(|_| match rng.random_range(0..4u32) {
                0 => 0.0,
                1 => 1.0,
                _ => rng.random::<f64>(),
            })
            .collect();
        let gt: Vec<f64> = (0..n).map(|_| f64::from(rng.random_range(0..2u32))).collect();
        let (y, gt) = (arr(&y), arr(&gt));
        for v in [
            cross_entropy_loss(&y, &gt).unwrap().value,
            dice_loss(&y, &gt).unwrap().value,
            focal_loss(&y, &gt, 0.25, 2.0).unwrap().value,
            finetune_loss(&y, &gt, &FinetuneLossWeights::default()).unwrap().value,
        ] {
            prop_assert!(v.is_finite() && v >= 0.0, "loss {v} out of range");
        }
    }

    /// On binary predictions with zero smoothing the Dice loss is exactly
    /// one minus the F1 score of the evaluation metrics.
    #[test]
    fn dice_is_one_minus_f1_on_binary(seed in 0u64..1u64 << 48) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = rng.random_range(4..40usize);
        let mut y: Vec<f64> = (0..n).map(|_| f64::from(rng.random_range(0..2u32))).collect();
        let gt: Vec<f64> = (0..n).map(|_| f64::from(rng.random_range(0..2u32))).collect();
        // Zero smoothing needs a non-empty union.
        y[0] = 1.0;
        let dice = dice_loss_with_smoothing(&arr(&y), &arr(&gt), 0.0).unwrap();
        let pred = Raster::from_plane(Array2::from_shape_vec((1, n), y).unwrap(), Domain::Binary, "pred").unwrap();
        let truth = Raster::from_plane(Array2::from_shape_vec((1, n), gt).unwrap(), Domain::Binary, "gt").unwrap();
        let m = pixel_metrics(&confusion_counts(&pred, &truth).unwrap()).unwrap();
        prop_assert!((dice.value - (1.0 - m.f1)).abs() < 1e-12,
            "dice {} vs 1-F1 {}", dice.value, 1.0 - m.f1);
    }
}

// ---------------------------------------------------------------------------
// Gradient checks against the finite-difference oracle
// ---------------------------------------------------------------------------

/// Max relative error between the analytic gradient of `build` w.r.t. its
/// input leaf and the central finite-difference estimate.
fn grad_check(
    build: impl Fn(&Tensor) -> Tensor,
    x0: &ArrayD<f64>,
    what: &str,
) -> GradCheckReport {
    let leaf = Tensor::leaf(x0.clone());
    let loss = build(&leaf);
    let store = loss.backward();
    let analytic = store.get(&leaf).expect("input gradient").clone();
    let numeric = finite_difference_gradient(
        |x| Ok(build(&Tensor::constant(x.clone())).scalar()),
        x0,
        DEFAULT_FD_STEP,
    )
    .unwrap();
    GradCheckReport::compare(what, &analytic, &numeric, DEFAULT_FD_STEP).unwrap()
}

fn assert_grad_ok(report: &GradCheckReport, tol: f64) {
    assert!(
        report.max_rel_error < tol,
        "gradient mismatch at {}: rel err {}",
        report.worst_parameter,
        report.max_rel_error
    );
}

/// Probabilities away from the clamp boundary so the finite difference sees
/// the same smooth branch as the analytic gradient.
fn rand_probs(n: usize, rng: &mut ChaCha8Rng) -> ArrayD<f64> {
    arr(&(0..n).map(|_| rng.random_range(0.05..0.95)).collect::<Vec<_>>())
}

fn rand_binary(n: usize, rng: &mut ChaCha8Rng) -> ArrayD<f64> {
    arr(&(0..n).map(|_| f64::from(rng.random_range(0..2u32))).collect::<Vec<_>>())
}

#[test]
fn loss_gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let n = 24;
    let y0 = rand_probs(n, &mut rng);
    let gt = Tensor::constant(rand_binary(n, &mut rng));

    let r = grad_check(|y| cross_entropy_graph(y, &gt).unwrap(), &y0, "cross_entropy/y");
    assert_grad_ok(&r, 1e-5);

    let r = grad_check(|y| dice_graph(y, &gt, 1e-6).unwrap(), &y0, "dice/y");
    assert_grad_ok(&r, 1e-5);

    for gamma in [2.0, 1.0, 1.7] {
        let r = grad_check(
            |y| focal_graph(y, &gt, 0.25, gamma).unwrap(),
            &y0,
            &format!("focal(gamma={gamma})/y"),
        );
        assert_grad_ok(&r, 1e-5);
    }

    let r = grad_check(
        |y| finetune_loss_graph(y, &gt, &FinetuneLossWeights::default()).unwrap().0,
        &y0,
        "finetune/y",
    );
    assert_grad_ok(&r, 1e-5);
}

#[test]
fn prompter_loss_gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let shape = [2usize, 2, 3, 4];
    let count: usize = shape.iter().product();
    let logits =
        |rng: &mut ChaCha8Rng| {
            ArrayD::from_shape_vec(
                IxDyn(&shape),
                (0..count).map(|_| rng.random_range(-2.0..2.0)).collect::<Vec<_>>(),
            )
            .unwrap()
        };
    let main0 = logits(&mut rng);
    let aux0 = logits(&mut rng);
    let gt = Tensor::constant(
        ArrayD::from_shape_vec(
            IxDyn(&[2, 3, 4]),
            (0..24).map(|_| f64::from(rng.random_range(0..2u32))).collect::<Vec<_>>(),
        )
        .unwrap(),
    );
    let w = PrompterLossWeights::default();

    let aux_const = Tensor::constant(aux0.clone());
    let r = grad_check(
        |m| prompter_loss_graph(m, &aux_const, &gt, &w).unwrap().0,
        &main0,
        "prompter/main_logits",
    );
    assert_grad_ok(&r, 1e-5);

    let main_const = Tensor::constant(main0);
    let r = grad_check(
        |a| prompter_loss_graph(&main_const, a, &gt, &w).unwrap().0,
        &aux0,
        "prompter/aux_logits",
    );
    assert_grad_ok(&r, 1e-5);
}

#[test]
fn softmax_fg_prob_shape_and_values() {
    // Foreground logit 1, background 0 everywhere: probability sigmoid(1).
    let mut logits = ArrayD::<f64>::zeros(IxDyn(&[1, 2, 2, 2]));
    logits.slice_mut(ndarray::s![.., 1, .., ..]).fill(1.0);
    let p = softmax_fg_prob(&Tensor::constant(logits)).unwrap();
    assert_eq!(p.shape(), &[1, 2, 2]);
    let expected = 1.0 / (1.0 + (-1.0f64).exp());
    for &v in p.value().iter() {
        assert!((v - expected).abs() < 1e-15);
    }
    // Wrong channel count is rejected.
    assert!(matches!(
        softmax_fg_prob(&Tensor::constant(ArrayD::zeros(IxDyn(&[1, 3, 2, 2])))),
        Err(Error::ShapeError(_))
    ));
}

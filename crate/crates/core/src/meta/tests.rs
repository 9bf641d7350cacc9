use super::*;
use crate::numcore::{Batch, HiddenActivation, LossKind, Matrix, OutputActivation};
use crate::tasks::{SineFamily, TaskDescriptor, TaskInstance};

fn pv(v: &[f64]) -> ParamVector {
    ParamVector::new(v.to_vec()).unwrap()
}

fn linear_spec() -> MlpSpec {
    MlpSpec::new(
        vec![1, 1],
        HiddenActivation::Tanh,
        OutputActivation::Identity,
    )
    .unwrap()
}

fn point(x: f64, t: f64) -> Batch {
    Batch::new(
        Matrix::column(vec![x]),
        Matrix::column(vec![t]),
        LossKind::MeanSquaredError,
    )
    .unwrap()
}

fn fixed(points: &[(f64, f64)]) -> TaskSource {
    TaskSource::Fixed(
        points
            .iter()
            .map(|&(x, t)| TaskInstance {
                descriptor: TaskDescriptor::Fixed(0),
                support: point(x, t),
                query: point(x, t),
            })
            .collect(),
    )
}

fn adapt_result(displacement: &[f64], outer: Option<&[f64]>) -> AdaptResult {
    AdaptResult {
        adapted: pv(&vec![0.0; displacement.len()]),
        displacement: pv(displacement),
        final_inner_loss: 0.0,
        outer_gradient: outer.map(pv),
    }
}

fn toy_config(variant: Variant, n: usize) -> MetaConfig {
    MetaConfig {
        variant,
        inner_rate: 0.5,
        outer_rate: 1.0,
        inner_steps: 1,
        tasks_per_batch: n,
        outer_iterations: 1,
        examples_per_task: 1,
        seed: 0,
        eps_degenerate: DEFAULT_EPS,
    }
}

#[test]
fn zero_inner_rate_is_a_no_op() {
    let spec = MlpSpec::sine_regressor();
    let theta = init_params(&spec, 2);
    let plan = TaskBatchPlan {
        sub_batches: vec![point(0.3, 1.0), point(-2.0, 0.5)],
    };
    // rate 0 is rejected by configs but valid for the raw operation
    let r = adapt(&spec, &theta, &plan, 0.0).unwrap();
    assert_eq!(r.adapted, theta);
    assert!(r.displacement.iter().all(|&v| v == 0.0));
}

#[test]
fn single_step_by_hand() {
    // y = w x + b at (w, b) = (1, 0); example (2, 1): residual 1, grad (4, 2)
    let plan = TaskBatchPlan {
        sub_batches: vec![point(2.0, 1.0)],
    };
    let r = adapt(&linear_spec(), &pv(&[1.0, 0.0]), &plan, 0.25).unwrap();
    assert_eq!(r.adapted.as_slice(), &[0.0, -0.5]);
    assert_eq!(r.displacement.as_slice(), &[1.0, 0.5]);
    assert_eq!(r.final_inner_loss, 1.0);
    // at (0, -0.5): y = -0.5, residual -1.5, grad (-6, -3)
    assert_eq!(r.outer_gradient.unwrap().as_slice(), &[-6.0, -3.0]);
}

#[test]
fn displacement_is_exact_difference() {
    let spec = MlpSpec::sine_regressor();
    let source = TaskSource::Sine(SineFamily::default());
    let config = MetaConfig::sine(Variant::Reptile, 5);
    let theta = init_params(&spec, 5);
    for i in 0..5 {
        let r = adapt_task(&config, &source, &spec, &theta, 0, i).unwrap();
        for ((g, t), a) in r
            .displacement
            .iter()
            .zip(theta.iter())
            .zip(r.adapted.iter())
        {
            assert_eq!(*g, t - a);
            assert!((g + a - t).abs() <= 4.0 * f64::EPSILON * t.abs().max(1.0));
        }
    }
}

#[test]
fn adapt_reports_the_failing_step() {
    let plan = TaskBatchPlan {
        sub_batches: vec![point(1.0, 0.0), point(1e200, 0.0)],
    };
    let err = adapt(&linear_spec(), &pv(&[1e200, 0.0]), &plan, 1.0).unwrap_err();
    assert!(err.is_numeric());
    assert!(err.to_string().contains("inner step"), "{err}");
}

#[test]
fn reptile_update_examples() {
    let theta = pv(&[0.0]);
    // theta_1 = 1, theta_2 = 3 -> displacements -1, -3
    let adapts = vec![adapt_result(&[-1.0], None), adapt_result(&[-3.0], None)];
    assert_eq!(
        outer_update_reptile(&theta, &adapts, &[0.25, 0.75], 1.0)
            .unwrap()
            .as_slice(),
        &[2.5]
    );
    assert_eq!(
        outer_update_reptile(&theta, &adapts, &[0.5, 0.5], 1.0)
            .unwrap()
            .as_slice(),
        &[2.0]
    );
    assert_eq!(
        outer_update_reptile(&theta, &adapts, &[0.0, 0.0], 1.0).unwrap(),
        theta
    );
    assert!(outer_update_reptile(&theta, &adapts, &[1.0], 1.0).is_err());
}

#[test]
fn maml_update_examples() {
    let theta = pv(&[1.0, -1.0]);
    let zero = vec![adapt_result(&[0.3, 0.1], Some(&[0.0, 0.0]))];
    assert_eq!(
        outer_update_maml(&theta, &zero, &[1.0], 0.7).unwrap(),
        theta
    );
    let one = vec![adapt_result(&[0.3, 0.1], Some(&[2.0, -4.0]))];
    assert_eq!(
        outer_update_maml(&theta, &one, &[1.0], 0.5).unwrap(),
        sgd_step(&theta, &pv(&[2.0, -4.0]), 0.5).unwrap()
    );
    let two = vec![
        adapt_result(&[0.0, 0.0], Some(&[4.0, 4.0])),
        adapt_result(&[0.0, 0.0], Some(&[12.0, 12.0])),
    ];
    // 1 - 0.5 * (0.25*4 + 0.75*12) = -4
    assert_eq!(
        outer_update_maml(&theta, &two, &[0.25, 0.75], 0.5)
            .unwrap()
            .as_slice(),
        &[-4.0, -6.0]
    );
    let missing = vec![adapt_result(&[0.0, 0.0], None)];
    assert!(outer_update_maml(&theta, &missing, &[1.0], 0.5).is_err());
}

/// Two single-point linear tasks from theta = (0, 0):
/// A (x=1, t=2): grad (-4,-4), theta_A = (2,2), g_A = (-2,-2), grad at theta_A (4,4)
/// B (x=1, t=6): grad (-12,-12), theta_B = (6,6), g_B = (-6,-6), grad at theta_B (12,12)
/// s = (32, 96), weights (0.25, 0.75).
#[test]
fn two_task_toy_by_hand() {
    let spec = linear_spec();
    let source = fixed(&[(1.0, 2.0), (1.0, 6.0)]);
    let theta = pv(&[0.0, 0.0]);
    let cases = [
        (Variant::Reptile, [4.0, 4.0], vec![0.5, 0.5]),
        (Variant::GaReptile, [5.0, 5.0], vec![0.25, 0.75]),
        (Variant::Fomaml, [-8.0, -8.0], vec![0.5, 0.5]),
        (Variant::GaFomaml, [-10.0, -10.0], vec![0.25, 0.75]),
    ];
    for (variant, expected, weights) in cases {
        let config = toy_config(variant, 2);
        let (next, w, adapts) =
            outer_step(&config, &source, &spec, &theta, 0, Schedule::Serial).unwrap();
        assert_eq!(next.as_slice(), &expected, "{variant}");
        assert_eq!(w.weights, weights, "{variant}");
        assert_eq!(adapts[0].displacement.as_slice(), &[-2.0, -2.0]);
        assert_eq!(adapts[1].displacement.as_slice(), &[-6.0, -6.0]);
        let (trained, trace) = train_from(
            &config,
            &source,
            &spec,
            theta.clone(),
            0,
            Schedule::Parallel,
        )
        .unwrap();
        assert_eq!(trained, next);
        assert_eq!(trace.len(), 1);
        if variant.uses_agreement() {
            assert_eq!(trace.records[0].denominator, 128.0);
        }
    }
}

#[test]
fn identical_tasks_collapse_to_baseline() {
    let spec = MlpSpec::sine_regressor();
    let source = fixed(&[(0.7, 1.3)]);
    let mut base = toy_config(Variant::Reptile, 2);
    base.outer_iterations = 5;
    base.inner_rate = 0.01;
    base.outer_rate = 0.3;
    let ga = MetaConfig {
        variant: Variant::GaReptile,
        ..base.clone()
    };
    let init = init_params(&spec, 9);
    let (a, _) = train_from(&base, &source, &spec, init.clone(), 0, Schedule::Serial).unwrap();
    let (b, trace) = train_from(&ga, &source, &spec, init.clone(), 0, Schedule::Serial).unwrap();
    assert_eq!(a, b);
    assert!(trace.records.iter().all(|r| r.weights == vec![0.5, 0.5]));

    // five tasks: 1/5 is inexact, so compare to rounding
    base.tasks_per_batch = 5;
    let ga5 = MetaConfig {
        variant: Variant::GaReptile,
        ..base.clone()
    };
    let (a, _) = train_from(&base, &source, &spec, init.clone(), 0, Schedule::Serial).unwrap();
    let (b, _) = train_from(&ga5, &source, &spec, init, 0, Schedule::Serial).unwrap();
    assert!(a.max_abs_diff(&b).unwrap() < 1e-12);
}

#[test]
fn single_task_batches_match_baseline_exactly() {
    let spec = MlpSpec::new(
        vec![1, 8, 8, 1],
        HiddenActivation::Tanh,
        OutputActivation::Identity,
    )
    .unwrap();
    let source = TaskSource::Sine(SineFamily::default());
    for (base, ga) in [
        (Variant::Reptile, Variant::GaReptile),
        (Variant::Fomaml, Variant::GaFomaml),
    ] {
        let mut config = MetaConfig::sine(base, 3);
        config.tasks_per_batch = 1;
        config.outer_iterations = 30;
        let (a, _) = train(&config, &source, &spec).unwrap();
        config.variant = ga;
        let (b, trace) = train(&config, &source, &spec).unwrap();
        assert_eq!(a, b, "{base} vs {ga}");
        assert!(trace.records.iter().all(|r| r.weights == vec![1.0]));
    }
}

#[test]
fn update_recomputed_from_trace_is_bit_identical() {
    let spec = MlpSpec::new(
        vec![1, 6, 1],
        HiddenActivation::Tanh,
        OutputActivation::Identity,
    )
    .unwrap();
    let source = TaskSource::Sine(SineFamily::default());
    let mut config = MetaConfig::sine(Variant::GaReptile, 17);
    config.outer_iterations = 3;
    let theta0 = init_params(&spec, 17);
    let (theta1, _, _) = outer_step(&config, &source, &spec, &theta0, 0, Schedule::Serial).unwrap();
    let (_, trace) = train(&config, &source, &spec).unwrap();
    let rec = &trace.records[1];

    let adapts: Vec<AdaptResult> = (0..config.tasks_per_batch)
        .map(|i| adapt_task(&config, &source, &spec, &theta1, 1, i).unwrap())
        .collect();
    let mut step = vec![0.0; theta1.len()];
    for (a, w) in adapts.iter().zip(&rec.weights) {
        for ((s, ti), t) in step.iter_mut().zip(a.adapted.iter()).zip(theta1.iter()) {
            *s += -w * (t - ti);
        }
    }
    let expected: Vec<f64> = theta1
        .iter()
        .zip(&step)
        .map(|(t, s)| t + config.outer_rate * s)
        .collect();
    let (theta2, _, _) = outer_step(&config, &source, &spec, &theta1, 1, Schedule::Serial).unwrap();
    assert_eq!(theta2.as_slice(), expected.as_slice());
    assert_eq!(rec.param_norm, theta2.norm());

    // the same step written as a proximal SGD step on the displacements
    let mut sgd_form = theta1.clone();
    let mut weighted = ParamVector::zeros(theta1.len());
    for (a, &w) in adapts.iter().zip(&rec.weights) {
        weighted = weighted.add_scaled(&a.displacement, w).unwrap();
    }
    sgd_form = sgd_step(&sgd_form, &weighted, config.outer_rate).unwrap();
    assert_eq!(sgd_form, theta2);
}

#[test]
fn baseline_reptile_is_mean_displacement() {
    let theta = pv(&[1.0, 2.0]);
    let adapts = vec![
        adapt_result(&[0.5, -1.0], None),
        adapt_result(&[1.5, 3.0], None),
        adapt_result(&[-0.25, 0.0], None),
    ];
    let w = AgreementWeights::uniform(3);
    let got = outer_update_reptile(&theta, &adapts, &w.weights, 0.6).unwrap();
    for d in 0..2 {
        let mean_step: f64 = adapts
            .iter()
            .map(|a| -a.displacement.as_slice()[d])
            .sum::<f64>();
        let expected = theta.as_slice()[d] + 0.6 / 3.0 * mean_step;
        assert!((got.as_slice()[d] - expected).abs() < 1e-15);
    }
}

#[test]
fn zero_iterations_returns_init() {
    let spec = MlpSpec::sine_regressor();
    let source = TaskSource::Sine(SineFamily::default());
    let mut config = MetaConfig::sine(Variant::GaReptile, 42);
    config.outer_iterations = 0;
    let (theta, trace) = train(&config, &source, &spec).unwrap();
    assert_eq!(theta, init_params(&spec, 42));
    assert!(trace.is_empty());
}

#[test]
fn deterministic_resumable_and_schedule_independent() {
    let spec = MlpSpec::new(
        vec![1, 16, 16, 1],
        HiddenActivation::Tanh,
        OutputActivation::Identity,
    )
    .unwrap();
    let source = TaskSource::Sine(SineFamily::default());
    let mut config = MetaConfig::sine(Variant::GaFomaml, 8);
    config.outer_iterations = 40;
    config.outer_rate = 0.01;
    let init = init_params(&spec, 8);
    let (a, ta) = train_from(&config, &source, &spec, init.clone(), 0, Schedule::Parallel).unwrap();
    let (b, tb) = train_from(&config, &source, &spec, init.clone(), 0, Schedule::Serial).unwrap();
    assert_eq!(a, b);
    assert_eq!(ta, tb);

    let mut half = config.clone();
    half.outer_iterations = 15;
    let (mid, _) = train_from(&half, &source, &spec, init, 0, Schedule::Serial).unwrap();
    let (resumed, tail) = train_from(&config, &source, &spec, mid, 15, Schedule::Parallel).unwrap();
    assert_eq!(resumed, a);
    assert_eq!(tail.records[0].iteration, 15);
    assert_eq!(tail.len(), 25);
}

#[test]
fn config_validation() {
    let spec = MlpSpec::sine_regressor();
    let source = TaskSource::Sine(SineFamily::default());
    let good = MetaConfig::sine(Variant::Reptile, 0);
    assert!(good.validate_for(&source, &spec).is_ok());
    for bad in [
        MetaConfig {
            inner_rate: 0.0,
            ..good.clone()
        },
        MetaConfig {
            outer_rate: f64::INFINITY,
            ..good.clone()
        },
        MetaConfig {
            inner_steps: 0,
            ..good.clone()
        },
        MetaConfig {
            tasks_per_batch: 0,
            ..good.clone()
        },
        MetaConfig {
            examples_per_task: 7,
            ..good.clone()
        },
    ] {
        assert!(bad.validate_for(&source, &spec).is_err(), "{bad:?}");
    }
    let wrong_net = MlpSpec::new(
        vec![2, 4, 1],
        HiddenActivation::Tanh,
        OutputActivation::Identity,
    )
    .unwrap();
    assert!(good.validate_for(&source, &wrong_net).is_err());
}

#[test]
fn config_json_is_strict() {
    let cfg = MetaConfig::sine(Variant::GaReptile, 1);
    let json = serde_json::to_string(&cfg).unwrap();
    assert!(json.contains("\"ga_reptile\""));
    let back: MetaConfig = serde_json::from_str(&json).unwrap();
    assert_eq!(back, cfg);
    let typo = json.replace("inner_rate", "iner_rate");
    assert!(serde_json::from_str::<MetaConfig>(&typo).is_err());
}

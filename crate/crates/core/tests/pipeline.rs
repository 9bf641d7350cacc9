use metagree::meta::{
    read_checkpoint, read_sidecar, train_from, write_checkpoint, write_sidecar, CheckpointSidecar,
};
use metagree::numcore::{init_params, HiddenActivation};
use metagree::tasks::{SineFamily, SyntheticFamily};
use metagree::{meta_test, train, MetaConfig, MlpSpec, Schedule, TaskFamily, TaskSource, Variant};

fn small_sine(variant: Variant) -> (MetaConfig, TaskSource, MlpSpec) {
    let mut config = MetaConfig::sine(variant, 11);
    config.outer_iterations = 30;
    let source = TaskSource::Sine(SineFamily::default());
    let spec = source.network(&[16], HiddenActivation::Tanh).unwrap();
    (config, source, spec)
}

#[test]
fn checkpoint_files_reproduce_the_evaluation() {
    let (config, source, spec) = small_sine(Variant::GaReptile);
    let (theta, trace) = train(&config, &source, &spec).unwrap();
    assert_eq!(trace.len(), 30);

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.mgre");
    write_checkpoint(&path, &spec, &theta).unwrap();
    let sidecar = CheckpointSidecar {
        config: config.clone(),
        spec: spec.clone(),
        family: TaskFamily::Sine(SineFamily::default()),
        iterations_done: 30,
    };
    write_sidecar(&CheckpointSidecar::path_for(&path), &sidecar).unwrap();

    let loaded = read_checkpoint(&path).unwrap();
    assert_eq!(loaded.layer_sizes, spec.layer_sizes);
    assert_eq!(loaded.params, theta);
    assert_eq!(read_sidecar(&dir.path().join("m.json")).unwrap(), sidecar);

    let a = meta_test(&theta, &spec, &source, 25, 5, config.inner_rate, 3).unwrap();
    let b = meta_test(&loaded.params, &spec, &source, 25, 5, config.inner_rate, 3).unwrap();
    assert_eq!(a.to_json().unwrap(), b.to_json().unwrap());
}

#[test]
fn schedules_agree_for_every_variant() {
    for variant in [
        Variant::Reptile,
        Variant::GaReptile,
        Variant::Fomaml,
        Variant::GaFomaml,
    ] {
        let (config, source, spec) = small_sine(variant);
        let init = init_params(&spec, config.seed);
        let serial =
            train_from(&config, &source, &spec, init.clone(), 0, Schedule::Serial).unwrap();
        let parallel = train_from(&config, &source, &spec, init, 0, Schedule::Parallel).unwrap();
        assert_eq!(serial, parallel, "{variant}");
    }
}

#[test]
fn classification_training_improves_accuracy() {
    let source = TaskSource::Synthetic(SyntheticFamily {
        n_way: 3,
        k_shot: 2,
        query_per_class: 4,
        dim: 4,
        min_center_distance: 6.0,
    });
    let spec = source.network(&[], HiddenActivation::Relu).unwrap();
    let config = MetaConfig {
        variant: Variant::GaFomaml,
        inner_rate: 0.2,
        outer_rate: 0.1,
        inner_steps: 2,
        tasks_per_batch: 4,
        outer_iterations: 300,
        examples_per_task: 6,
        seed: 5,
        eps_degenerate: 1e-12,
    };
    let before = init_params(&spec, config.seed);
    let (after, _) = train(&config, &source, &spec).unwrap();
    let acc = |theta| {
        meta_test(theta, &spec, &source, 200, 2, 0.2, 8)
            .unwrap()
            .mean_accuracy
            .unwrap()
    };
    let (a0, a1) = (acc(&before), acc(&after));
    assert!(a1 > a0 && a1 > 0.8, "accuracy {a0} -> {a1}");
}

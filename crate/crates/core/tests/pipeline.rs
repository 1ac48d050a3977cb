use prepinn_core::grid::{coordinate_channels, make_grid};
use prepinn_core::net::{forward, Activation, NetworkArch, ParameterSet};
use prepinn_core::oracle::{picard_solve, relative_l2};
use prepinn_core::train::{train, train_with, TrainOptions};
use prepinn_core::{Optimizer, ProblemSpec, TrainConfig, TrainMode};

#[test]
fn poisson_k1_reaches_two_percent() {
    let grid = make_grid(16, 16, [-1.0, 1.0, -1.0, 1.0]).unwrap();
    let spec = ProblemSpec::poisson(1);
    let arch = NetworkArch::reference(1, Activation::Tanh);
    let cfg = TrainConfig { epochs: 2000, log_stride: 500, ..Default::default() };
    let out = train(&spec, &grid, &arch, &cfg, TrainMode::Preconditioned).unwrap();
    assert!(out.final_rel_l2 < 0.02, "rel L2 {}", out.final_rel_l2);
    assert_eq!(out.factor_builds, 1);
    let epochs: Vec<usize> = out.records.iter().map(|r| r.epoch).collect();
    assert_eq!(epochs, [0, 500, 1000, 1500, 2000]);
}

#[test]
fn checkpoint_survives_a_file_round_trip() {
    let grid = make_grid(8, 6, [0.0, 1.0, 0.0, 1.0]).unwrap();
    let spec = ProblemSpec::poisson(2);
    let arch = NetworkArch::reference(1, Activation::Tanh);
    let cfg = TrainConfig { epochs: 5, ..Default::default() };
    let out = train(&spec, &grid, &arch, &cfg, TrainMode::Preconditioned).unwrap();

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("params.bin");
    let mut bytes = Vec::new();
    out.params.write_checkpoint(&mut bytes).unwrap();
    std::fs::write(&path, &bytes).unwrap();
    let back = ParameterSet::read_checkpoint(std::io::BufReader::new(std::fs::File::open(&path).unwrap())).unwrap();
    assert_eq!(back, out.params);

    let coords = coordinate_channels(&grid);
    let (a, _) = forward(&out.params, &coords).unwrap();
    let (b, _) = forward(&back, &coords).unwrap();
    assert_eq!(a, b);
}

#[test]
fn cavity_training_reduces_error_against_picard() {
    let grid = make_grid(12, 12, [0.0, 1.0, 0.0, 1.0]).unwrap();
    let spec = ProblemSpec::cavity(100.0);
    let (reference, report) = picard_solve(&grid, &spec, &Default::default()).unwrap();
    assert!(report.max_residual_off_gauge <= 1e-7);

    let arch = NetworkArch { hidden: vec![16, 16], ..NetworkArch::reference(3, Activation::Tanh) };
    let cfg = TrainConfig { optimizer: Optimizer::Lbfgs, epochs: 4, ..Default::default() };
    let opts = TrainOptions { reference: Some(&reference), ..Default::default() };
    let out = train_with(&spec, &grid, &arch, &cfg, TrainMode::Preconditioned, opts).unwrap();
    // constructor, then every epoch 0..=4
    assert_eq!(out.factor_builds, 6);
    let first = out.records.first().unwrap().rel_l2;
    assert!(out.final_rel_l2 < 0.5 * first, "{first} -> {}", out.final_rel_l2);
    assert_eq!(out.final_rel_l2, relative_l2(&out.output, &reference).unwrap());
}

#[test]
fn repeated_runs_agree_bit_for_bit() {
    let grid = make_grid(10, 10, [0.0, 1.0, 0.0, 1.0]).unwrap();
    let spec = ProblemSpec::cavity(100.0);
    let arch = NetworkArch { hidden: vec![8], ..NetworkArch::reference(3, Activation::Gelu) };
    let cfg = TrainConfig { optimizer: Optimizer::Lbfgs, epochs: 2, seed: 7, ..Default::default() };
    let a = train(&spec, &grid, &arch, &cfg, TrainMode::Preconditioned).unwrap();
    let b = train(&spec, &grid, &arch, &cfg, TrainMode::Preconditioned).unwrap();
    assert_eq!(a.params, b.params);
    let bits = |o: &prepinn_core::train::TrainOutcome| o.records.iter().map(|r| r.loss.to_bits()).collect::<Vec<_>>();
    assert_eq!(bits(&a), bits(&b));
}

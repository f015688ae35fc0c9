use myoarm::canonical::build_handle_rig;
use myoarm::experiment::{run_handle_learning_experiment, write_metrics_csv, ExperimentConfig};
use myoarm::statics::NoiseConfig;

fn short(epochs: usize) -> ExperimentConfig {
    ExperimentConfig {
        epochs,
        end_deg: -20.0,
        ..ExperimentConfig::handle_rig()
    }
}

#[test]
fn same_seed_same_run() {
    let robot = build_handle_rig();
    let cfg = short(2);
    let a = run_handle_learning_experiment(&robot, &cfg, 7).unwrap();
    let b = run_handle_learning_experiment(&robot, &cfg, 7).unwrap();
    assert_eq!(a.metrics, b.metrics);
    assert_eq!(a.image.muscles, b.image.muscles);
    let c = run_handle_learning_experiment(&robot, &cfg, 8).unwrap();
    assert_ne!(a.metrics, c.metrics);
}

#[test]
fn exact_image_predicts_exactly() {
    let robot = build_handle_rig();
    let cfg = ExperimentConfig {
        mismatch: 0.0,
        relay_friction: 0.0,
        noise: NoiseConfig::none(),
        ..short(3)
    };
    let run = run_handle_learning_experiment(&robot, &cfg, 1).unwrap();
    for m in &run.metrics {
        assert!(m.pred_err_mm < 0.1, "epoch {}: {}", m.epoch, m.pred_err_mm);
    }
}

#[test]
fn metrics_csv_layout() {
    let robot = build_handle_rig();
    let one = run_handle_learning_experiment(&robot, &short(1), 3).unwrap();
    let mut buf = Vec::new();
    write_metrics_csv(&one.metrics, &mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    let lines: Vec<_> = text.lines().collect();
    assert_eq!(lines[0], "epoch,peak_T_N,rotation_deg,pred_err_mm");
    assert_eq!(lines.len(), 2);
    assert!(lines[1].starts_with("1,"));

    let two = run_handle_learning_experiment(&robot, &short(2), 3).unwrap();
    let mut buf = Vec::new();
    write_metrics_csv(&two.metrics, &mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    let last = text.lines().last().unwrap();
    let ratio: f64 = last.split(',').nth(1).unwrap().parse().unwrap();
    assert!(last.starts_with("final/first,"));
    assert!((ratio - two.metrics[1].peak_t_n / two.metrics[0].peak_t_n).abs() < 1e-12);
}

#[test]
fn solver_failure_names_the_step() {
    let robot = build_handle_rig();
    let cfg = ExperimentConfig {
        solver_tol: 1e-300,
        ..short(1)
    };
    let err = run_handle_learning_experiment(&robot, &cfg, 1).unwrap_err().to_string();
    assert!(err.contains("epoch 1, step 0"), "{err}");
}

#[test]
fn bad_configs_are_rejected() {
    let robot = build_handle_rig();
    for cfg in [
        short(0),
        ExperimentConfig { solver_tol: 0.0, ..short(1) },
        ExperimentConfig { mismatch: 1.5, ..short(1) },
        ExperimentConfig { end_deg: -40.0, ..short(1) },
    ] {
        assert!(run_handle_learning_experiment(&robot, &cfg, 1).is_err());
    }
}

//! End-to-end command tests on small configurations.

use addnet::cli::{
    cmd_gen_data, cmd_prune, cmd_report, cmd_train, parse_batch_range, GenDataArgs, MagnitudeFlag,
    Model, PruneArgs, ReportArgs, Task, TrainArgs,
};
use addnet::data::drift::{gen_synthetic_drift_batches, write_drift_batch};
use addnet::error::Error;
use std::path::PathBuf;
use std::process::Command;

fn base_train_args(out_dir: PathBuf) -> TrainArgs {
    TrainArgs {
        task: Task::IrSynth,
        model: Model::Convnet,
        train_data: None,
        val_data: None,
        data_dir: None,
        train_batches: vec![],
        test_batches: None,
        holdout_trials: 4,
        holdout_size: 35,
        epochs: Some(1),
        batch_size: Some(16),
        learning_rate: 1e-3,
        dropout: None,
        noise_std: None,
        adversarial_epochs: 2,
        domain_adapt: false,
        seed: 1,
        out_dir,
    }
}

#[test]
fn ir_train_prune_report_pipeline() {
    let tmp = tempfile::tempdir().unwrap();
    let gen = GenDataArgs {
        task: Task::IrSynth,
        leak: 30,
        clean: 30,
        seed: 2,
        out_dir: tmp.path().join("data"),
        file_name: "ir.csv".into(),
    };
    let csv = cmd_gen_data(&gen).unwrap();

    let mut args = base_train_args(tmp.path().join("conv"));
    args.train_data = Some(csv.clone());
    args.epochs = Some(2);
    let conv = cmd_train(&args).unwrap();
    assert!(conv.model_file.exists());
    assert!(conv.metrics_files.iter().all(|f| f.exists()));
    let json = std::fs::read_to_string(&conv.metrics_files[0]).unwrap();
    assert!(json.contains("\"task\": \"ir-synth\""));
    assert!(json.contains("\"model\": \"convnet\""));

    // GAN variant exercises the adversarial warm-up path end to end.
    let mut gan_args = base_train_args(tmp.path().join("gan"));
    gan_args.train_data = Some(csv.clone());
    gan_args.model = Model::Discgan;
    let gan = cmd_train(&gan_args).unwrap();
    assert!(gan.model_file.exists());

    let prune_args = PruneArgs {
        model_file: conv.model_file.clone(),
        eval_data: csv.clone(),
        rates: vec![0.0, 0.161, 0.197, 0.674, 0.768, 0.866],
        magnitude: MagnitudeFlag::MeanBinarized,
        quantized: false,
        seed: 2,
        out_dir: tmp.path().join("prune"),
    };
    let pruned = cmd_prune(&prune_args).unwrap();
    assert_eq!(pruned.rows.len(), 6);
    let sweep = std::fs::read_to_string(&pruned.sweep_csv).unwrap();
    assert_eq!(sweep.lines().count(), 7); // header + six rates
    // rate-0 evaluation equals the unpruned model's accuracy on the same set
    let first_row_acc: f64 = sweep.lines().nth(1).unwrap().split(',').nth(2).unwrap().parse().unwrap();
    assert_eq!(first_row_acc, pruned.rows[0].2);

    let report_args = ReportArgs {
        inputs: vec![conv.metrics_files[0].clone(), gan.metrics_files[0].clone()],
        out_dir: tmp.path().join("report"),
    };
    let md = cmd_report(&report_args).unwrap();
    let text = std::fs::read_to_string(md).unwrap();
    assert!(text.contains("| convnet |"));
    assert!(text.contains("| discgan |"));
}

#[test]
fn quantized_prune_flag_reports_agreement() {
    let tmp = tempfile::tempdir().unwrap();
    let gen = GenDataArgs {
        task: Task::IrSynth,
        leak: 20,
        clean: 20,
        seed: 3,
        out_dir: tmp.path().join("data"),
        file_name: "ir.csv".into(),
    };
    let csv = cmd_gen_data(&gen).unwrap();
    let mut args = base_train_args(tmp.path().join("add"));
    args.train_data = Some(csv.clone());
    args.model = Model::Addnet;
    let add = cmd_train(&args).unwrap();

    let prune_args = PruneArgs {
        model_file: add.model_file,
        eval_data: csv,
        rates: vec![0.0],
        magnitude: MagnitudeFlag::Unit,
        quantized: true,
        seed: 3,
        out_dir: tmp.path().join("prune"),
    };
    let out = cmd_prune(&prune_args).unwrap();
    let agreement = out.quantized_agreement.unwrap();
    assert!((0.0..=1.0).contains(&agreement));
    assert!(prune_args.out_dir.join("quantized_agreement.csv").exists());
}

#[test]
fn drift_train_writes_per_batch_records() {
    let tmp = tempfile::tempdir().unwrap();
    let data_dir = tmp.path().join("batches");
    std::fs::create_dir_all(&data_dir).unwrap();
    for (i, b) in gen_synthetic_drift_batches(1).unwrap().iter().enumerate() {
        write_drift_batch(&data_dir.join(format!("batch{}.dat", i + 1)), b).unwrap();
    }
    let mut args = base_train_args(tmp.path().join("out"));
    args.task = Task::Drift;
    args.model = Model::Mlp;
    args.data_dir = Some(data_dir);
    args.train_batches = vec![1, 2];
    args.test_batches = Some("3..10".into());
    args.epochs = Some(1);
    args.batch_size = Some(128);
    let out = cmd_train(&args).unwrap();
    assert_eq!(out.batch_accuracies.len(), 8);
    let summary = std::fs::read_to_string(args.out_dir.join("drift_accuracy.csv")).unwrap();
    assert_eq!(summary.lines().count(), 9); // header + 8 batches
    for id in 3..=10 {
        assert!(args.out_dir.join(format!("batch{id}.json")).exists());
    }

    // overlapping train/test batches are rejected
    args.test_batches = Some("2..4".into());
    assert!(matches!(cmd_train(&args), Err(Error::Argument(_))));
}

#[test]
fn mixture_train_runs_on_the_synthetic_fixture() {
    let tmp = tempfile::tempdir().unwrap();
    let data_dir = tmp.path().join("mix");
    std::fs::create_dir_all(&data_dir).unwrap();
    addnet::data::mixtures::synth::gen_synthetic_mixture_files(&data_dir, 7).unwrap();
    let mut args = base_train_args(tmp.path().join("out"));
    args.task = Task::Mixtures;
    args.model = Model::Convnet;
    args.data_dir = Some(data_dir);
    args.holdout_trials = 1;
    args.epochs = Some(1);
    let out = cmd_train(&args).unwrap();
    // one trial of 35 validations
    let total: u64 = out.report.confusion_matrix.iter().flatten().sum();
    assert_eq!(total, 35);
}

#[test]
fn argument_errors_name_the_problem() {
    let mut args = base_train_args(PathBuf::from("unused"));
    args.task = Task::Mixtures;
    args.model = Model::Mlp;
    match cmd_train(&args) {
        Err(Error::Argument(msg)) => assert!(msg.contains("convnet"), "{msg}"),
        Err(other) => panic!("unexpected error {other:?}"),
        Ok(_) => panic!("expected an argument error"),
    }
    assert!(parse_batch_range(": )").is_err());

    // missing ir data carries a remediation hint
    let mut args = base_train_args(PathBuf::from("unused"));
    args.train_data = Some(PathBuf::from("/no/such/file.csv"));
    match cmd_train(&args) {
        Err(Error::Io(e)) => assert!(e.to_string().contains("gen-data"), "{e}"),
        Err(other) => panic!("unexpected error {other:?}"),
        Ok(_) => panic!("expected an io error"),
    }
}

#[test]
fn binary_reports_errors_with_distinct_exit_codes() {
    let bin = env!("CARGO_BIN_EXE_addnet");
    let out = Command::new(bin).args(["train", "--task", "ir-synth", "--model", "convnet"]).output().unwrap();
    assert_eq!(out.status.code(), Some(2), "argument error exit code");
    let out = Command::new(bin)
        .args([
            "prune",
            "--model-file",
            "/no/such/model.bin",
            "--eval-data",
            "/no/such/data.csv",
        ])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(3), "io error exit code");
    let out = Command::new(bin).args(["--help"]).output().unwrap();
    assert!(out.status.success());
    let help = String::from_utf8_lossy(&out.stdout);
    for cmd in ["gen-data", "train", "prune", "report"] {
        assert!(help.contains(cmd), "help missing {cmd}");
    }
    // unknown model names are rejected by the parser, which lists choices
    let out = Command::new(bin)
        .args(["train", "--task", "ir-synth", "--model", "resnet"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("convnet") && err.contains("addnet"), "{err}");
}

//! End-to-end CLI checks: the gen-data / train / infer / eval / report
//! pipeline on a tiny config, exit codes, and output provenance.

use ofp::cli::run_command;

fn args(parts: &[&str]) -> Vec<String> {
    std::iter::once("ofp".to_string())
        .chain(parts.iter().map(|s| s.to_string()))
        .collect()
}

/// Tiny-task overrides shared by the pipeline tests.
fn tiny_overrides() -> Vec<String> {
    [
        "--set",
        "task.n_train=64",
        "--set",
        "train.epochs=2",
        "--set",
        "train.batch_size=32",
        "--set",
        "train.warmup_steps=1",
        "--set",
        "net.hidden_width=12",
        "--set",
        "net.depth=1",
        "--set",
        "net.time_embed_dim=4",
        "--set",
        "net.cond_embed_dim=4",
        "--set",
        "eval.n_samples=32",
        "--set",
        "eval.nfe_list=[1,2]",
        "--set",
        "eval.warm=[false]",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect()
}

#[test]
fn full_pipeline_runs_and_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let data1 = dir.path().join("data1");
    let data2 = dir.path().join("data2");
    let run1 = dir.path().join("run1");
    let run2 = dir.path().join("run2");

    let mut gen = args(&["gen-data", "--seed", "11", "--out", data1.to_str().unwrap()]);
    gen.extend(tiny_overrides());
    assert_eq!(run_command(gen.clone()), 0);
    let mut gen2 = gen.clone();
    let pos = gen2.iter().position(|a| a == data1.to_str().unwrap()).unwrap();
    gen2[pos] = data2.to_str().unwrap().to_string();
    assert_eq!(run_command(gen2), 0);
    assert_eq!(
        std::fs::read(data1.join("data.csv")).unwrap(),
        std::fs::read(data2.join("data.csv")).unwrap(),
        "same seed must write byte-identical datasets"
    );
    assert!(data1.join("effective_config.json").exists());

    let mut tr = args(&["train", "--seed", "11", "--out", run1.to_str().unwrap()]);
    tr.extend(tiny_overrides());
    assert_eq!(run_command(tr.clone()), 0);
    let ckpt1 = run1.join("checkpoint.ofp");
    assert!(ckpt1.exists() && run1.join("trainlog.csv").exists());

    let mut tr2 = tr.clone();
    let pos = tr2.iter().position(|a| a == run1.to_str().unwrap()).unwrap();
    tr2[pos] = run2.to_str().unwrap().to_string();
    assert_eq!(run_command(tr2), 0);
    assert_eq!(
        std::fs::read(&ckpt1).unwrap(),
        std::fs::read(run2.join("checkpoint.ofp")).unwrap(),
        "same config+seed must produce bit-identical checkpoints"
    );
    assert_eq!(
        std::fs::read_to_string(run1.join("trainlog.csv")).unwrap(),
        std::fs::read_to_string(run2.join("trainlog.csv")).unwrap()
    );

    let infer_out = dir.path().join("samples");
    let mut inf = args(&[
        "infer",
        "--checkpoint",
        ckpt1.to_str().unwrap(),
        "--seed",
        "3",
        "--n",
        "8",
        "--out",
        infer_out.to_str().unwrap(),
    ]);
    inf.extend(tiny_overrides());
    assert_eq!(run_command(inf), 0);
    let samples = std::fs::read_to_string(infer_out.join("samples.csv")).unwrap();
    assert_eq!(samples.lines().count(), 9, "header plus 8 rows");

    let eval_out = dir.path().join("eval");
    let mut ev = args(&[
        "eval",
        "--checkpoint",
        ckpt1.to_str().unwrap(),
        "--seed",
        "3",
        "--out",
        eval_out.to_str().unwrap(),
    ]);
    ev.extend(tiny_overrides());
    assert_eq!(run_command(ev.clone()), 0);
    let report = std::fs::read_to_string(eval_out.join("report.json")).unwrap();
    assert!(report.contains("energy_distance"));
    assert!(eval_out.join("report.csv").exists());
    assert!(eval_out.join("scatter.svg").exists());

    // Same eval twice is byte-identical (no timing fields by default).
    let eval_out2 = dir.path().join("eval2");
    let mut ev2 = ev.clone();
    let pos = ev2.iter().position(|a| a == eval_out.to_str().unwrap()).unwrap();
    ev2[pos] = eval_out2.to_str().unwrap().to_string();
    assert_eq!(run_command(ev2), 0);
    assert_eq!(
        std::fs::read(eval_out.join("report.json")).unwrap(),
        std::fs::read(eval_out2.join("report.json")).unwrap()
    );

    // Re-emit the derived formats from the stored report.
    let re_out = dir.path().join("reemit");
    let code = run_command(args(&[
        "report",
        "--from",
        eval_out.join("report.json").to_str().unwrap(),
        "--out",
        re_out.to_str().unwrap(),
    ]));
    assert_eq!(code, 0);
    assert_eq!(
        std::fs::read(eval_out.join("report.csv")).unwrap(),
        std::fs::read(re_out.join("report.csv")).unwrap()
    );
}

#[test]
fn eval_grid_emits_one_cell_per_combination() {
    let dir = tempfile::tempdir().unwrap();
    let run = dir.path().join("run");
    let mut tr = args(&["train", "--seed", "5", "--out", run.to_str().unwrap()]);
    tr.extend(tiny_overrides());
    assert_eq!(run_command(tr), 0);

    let eval_out = dir.path().join("eval");
    let mut ev = args(&[
        "eval",
        "--checkpoint",
        run.join("checkpoint.ofp").to_str().unwrap(),
        "--nfe",
        "1,2,4",
        "--warm",
        "on,off",
        "--seed",
        "5",
        "--out",
        eval_out.to_str().unwrap(),
    ]);
    ev.extend(tiny_overrides());
    assert_eq!(run_command(ev), 0);
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(eval_out.join("report.json")).unwrap())
            .unwrap();
    assert_eq!(report["cells"].as_array().unwrap().len(), 6, "3 NFE x 2 warm cells");
}

#[test]
fn exit_codes_distinguish_failure_classes() {
    // Usage error: unknown flag.
    assert_eq!(run_command(args(&["train", "--no-such-flag"])), 2);
    // Config error: unknown key.
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("x");
    assert_eq!(
        run_command(args(&[
            "gen-data",
            "--set",
            "train.bogus=1",
            "--out",
            out.to_str().unwrap()
        ])),
        3
    );
    // I/O error: missing checkpoint.
    assert_eq!(
        run_command(args(&[
            "infer",
            "--checkpoint",
            dir.path().join("missing.ofp").to_str().unwrap(),
            "--out",
            out.to_str().unwrap()
        ])),
        4
    );
    // I/O error: corrupt checkpoint.
    let bad = dir.path().join("bad.ofp");
    std::fs::write(&bad, b"not a checkpoint").unwrap();
    assert_eq!(
        run_command(args(&[
            "infer",
            "--checkpoint",
            bad.to_str().unwrap(),
            "--out",
            out.to_str().unwrap()
        ])),
        4
    );
}

#[test]
fn seed_flag_overrides_environment_convention() {
    // The --seed flag must land in the effective config of the output dir.
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("d");
    let mut gen = args(&["gen-data", "--seed", "777", "--out", out.to_str().unwrap()]);
    gen.extend(tiny_overrides());
    assert_eq!(run_command(gen), 0);
    let cfg: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("effective_config.json")).unwrap())
            .unwrap();
    assert_eq!(cfg["train"]["seed"], 777);
    assert_eq!(cfg["net"]["seed"], 777);
    assert_eq!(cfg["task"]["seed"], 777);
}

#[test]
fn set_override_lands_in_effective_config() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("d");
    let mut gen = args(&["gen-data", "--out", out.to_str().unwrap()]);
    gen.extend(tiny_overrides());
    gen.extend(["--set".to_string(), "train.loss.lambda_g=0.25".to_string()]);
    assert_eq!(run_command(gen), 0);
    let cfg: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("effective_config.json")).unwrap())
            .unwrap();
    assert_eq!(cfg["train"]["loss"]["lambda_g"], 0.25);
}

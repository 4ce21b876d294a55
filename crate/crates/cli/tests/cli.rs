use std::path::Path;
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_hsi-pest"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("spawn hsi-pest")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn ok(o: Output) -> String {
    assert!(o.status.success(), "exit {:?}: {}", o.status.code(), String::from_utf8_lossy(&o.stderr));
    stdout(&o)
}

fn small_config(dir: &Path) -> String {
    let cfg = format!(
        r#"
seed = 11
[paths]
corpus = "{c}"
output = "{o}"
[synth]
backgrounds = ["bark", "soil"]
[sample]
n = 80
[train]
lv_max = 2
k_grid = [10, 20, 137]
preprocess = [{{ steps = [{{ step = "snv" }}, {{ step = "mean_center" }}] }}]
[unet]
bands = ["selection2"]
[unet.train]
epochs = 1
"#,
        c = dir.join("corpus").display(),
        o = dir.join("out").display()
    );
    let path = dir.join("run.toml");
    std::fs::write(&path, cfg).unwrap();
    path.display().to_string()
}

#[test]
fn selection1_preset_lists_38_bands() {
    let out = ok(run(&["bands", "--preset", "selection1"]));
    assert_eq!(out.lines().count(), 38);
    let js: serde_json::Value = serde_json::from_str(&ok(run(&["--json", "bands", "--preset", "selection2"]))).unwrap();
    assert_eq!(js["count"], 62);
}

#[test]
fn user_errors_exit_with_one_line() {
    for args in [
        vec!["frobnicate"],
        vec!["bands", "--preset", "selection9"],
        vec!["bands"],
        vec!["--config", "/nonexistent/run.toml", "synth"],
        vec!["evaluate", "object", "--pred", "/nonexistent"],
    ] {
        let o = run(&args);
        assert_eq!(o.status.code(), Some(1), "{args:?}");
        let err = String::from_utf8_lossy(&o.stderr);
        assert_eq!(err.trim_end().lines().count(), 1, "{args:?}: {err}");
    }
}

#[test]
fn bad_threshold_in_config_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("bad.toml");
    std::fs::write(&p, "[evaluate]\niou_threshold = 1.5\n").unwrap();
    let o = run(&["--config", p.to_str().unwrap(), "synth"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("iou_threshold"));
}

#[test]
fn help_exits_zero() {
    assert!(run(&["--help"]).status.success());
}

/// Every artifact one command writes is read back by the next.
#[test]
fn commands_chain_through_files() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let c = |args: &[&str]| {
        let mut all = vec!["--config", cfg.as_str()];
        all.extend_from_slice(args);
        ok(run(&all))
    };
    let out = dir.path().join("out");
    let corpus = dir.path().join("corpus");

    assert!(c(&["synth"]).contains("10 scenes"));
    assert!(corpus.join("bark_g1.hdr").exists() && corpus.join("soil_g5_truth.pgm").exists());
    let masks = c(&["mask"]);
    assert_eq!(masks.lines().count(), 10);
    assert!(out.join("masks/soil_g3_mask.pgm").exists());
    assert!(c(&["sample"]).contains("1600 spectra"));

    let js: serde_json::Value =
        serde_json::from_str(&c(&["--json", "train", "splsda", "--spectra", out.join("spectra.csv").to_str().unwrap()])).unwrap();
    assert_eq!(js["command"], "train splsda");
    assert!(js["test"]["eff"].as_f64().unwrap() > 0.95, "{js}");
    let model = out.join("model_splsda.json");
    let n_bands = js["bands"].as_array().unwrap().len();
    assert_eq!(c(&["bands", "--model", model.to_str().unwrap()]).lines().count(), n_bands);

    let cubes: Vec<String> = ["bark_g4", "bark_g5", "soil_g4", "soil_g5"]
        .iter()
        .map(|id| corpus.join(format!("{id}.hdr")).display().to_string())
        .collect();
    let mut args = vec!["predict", model.to_str().unwrap(), "--out"];
    let pred = out.join("splsda");
    args.push(pred.to_str().unwrap());
    args.extend(cubes.iter().map(String::as_str));
    assert_eq!(c(&args).lines().count(), 4);

    let report = out.join("report.csv");
    let csv = c(&["evaluate", "object", "--pred", pred.to_str().unwrap(), "--out", report.to_str().unwrap()]);
    assert_eq!(csv, std::fs::read_to_string(&report).unwrap());
    let all = csv.lines().find(|l| l.starts_with("splsda,full,all,")).unwrap();
    assert_eq!(all.split(',').nth(3), Some("4"));
    assert!(out.join("matches.csv").exists());

    let t = c(&["train", "unet", "--bands", "selection2", "--base-filters", "4"]);
    assert!(t.starts_with("unet_selection2: 62 bands"), "{t}");
    let unet = out.join("unet_selection2.bin");
    let upred = out.join("unet");
    let u = c(&["predict", unet.to_str().unwrap(), cubes[0].as_str(), "--out", upred.to_str().unwrap()]);
    assert!(u.starts_with("bark_g4:"));
    c(&["evaluate", "pixel", "--pred", upred.to_str().unwrap()]);
}

#[test]
fn evaluate_object_on_perfect_predictions() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    ok(run(&["--config", &cfg, "synth"]));
    let pred = dir.path().join("perfect");
    std::fs::create_dir_all(&pred).unwrap();
    for id in ["bark_g4", "soil_g5"] {
        std::fs::copy(dir.path().join(format!("corpus/{id}_truth.pgm")), pred.join(format!("{id}_pred.pgm"))).unwrap();
    }
    let js: serde_json::Value =
        serde_json::from_str(&ok(run(&["--config", &cfg, "--json", "evaluate", "object", "--pred", pred.to_str().unwrap()])))
            .unwrap();
    let rows = js["report"]["rows"].as_array().unwrap();
    assert_eq!(rows.len(), 3);
    for r in rows {
        for k in ["sens", "prec", "f1"] {
            assert_eq!(r["object_stats"][k], 1.0, "{r}");
        }
        assert_eq!(r["object"]["fp"], 0);
    }
}

#[test]
fn repro_is_byte_identical_across_runs_and_threads() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let mut outputs = Vec::new();
    for (i, threads) in ["1", "3"].iter().enumerate() {
        let out = dir.path().join(format!("r{i}"));
        let o = bin()
            .env("RAYON_NUM_THREADS", threads)
            .args(["--config", &cfg, "repro", "--out", out.to_str().unwrap()])
            .output()
            .unwrap();
        ok(o);
        outputs.push(out);
    }
    for f in ["report.csv", "report.txt", "matches.csv", "grid_sparse.csv", "model_sparse.json", "spectra.csv"] {
        let a = std::fs::read(outputs[0].join(f)).unwrap();
        let b = std::fs::read(outputs[1].join(f)).unwrap();
        assert!(a == b, "{f} differs");
    }
}

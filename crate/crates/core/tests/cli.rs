use std::path::{Path, PathBuf};

use archetypal::cli::run;
use archetypal::ModelExport;

fn exec(args: &[&str]) -> i32 {
    run(std::iter::once("archetypal").chain(args.iter().copied()))
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let path = dir.join(name);
    std::fs::write(&path, text).unwrap();
    path
}

fn listing(dir: &Path) -> Vec<String> {
    let mut names: Vec<String> =
        std::fs::read_dir(dir).unwrap().map(|e| e.unwrap().file_name().into_string().unwrap()).collect();
    names.sort();
    names
}

const SQUARE: &str = "id,x,y\na,0,0\nb,2,0\nc,0,2\nd,2,2\ne,1,1.5\n";

#[test]
fn fit_writes_model_and_tables() {
    let dir = tempfile::tempdir().unwrap();
    let input = write(dir.path(), "square.csv", SQUARE);
    let out = dir.path().join("fit");
    assert_eq!(exec(&["fit", "--input", p(&input), "--k", "1", "--out", p(&out)]), 0);
    assert_eq!(listing(&out), ["alpha.csv", "archetypes.csv", "beta.csv", "manifest.json", "model.json"]);
    let model = ModelExport::read_json(out.join("model.json")).unwrap();
    assert_eq!(model.kind, "archetypes");
    assert!((model.archetypes[0][0] - 1.0).abs() < 1e-8 && (model.archetypes[0][1] - 1.1).abs() < 1e-8);
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["command"], "fit");
    // Only the target directory and the input are left in the parent.
    assert_eq!(listing(dir.path()), ["fit", "square.csv"]);
}

#[test]
fn robust_archetypoid_fit_names_members() {
    let dir = tempfile::tempdir().unwrap();
    let input = write(dir.path(), "square.csv", SQUARE);
    let out = dir.path().join("fit");
    let code =
        exec(&["fit", "--input", p(&input), "--k", "4", "--mode", "ada", "--loss", "bisquare", "--out", p(&out)]);
    assert_eq!(code, 0);
    let model = ModelExport::read_json(out.join("model.json")).unwrap();
    let mut members = model.members.unwrap();
    members.sort();
    assert_eq!(members, ["a", "b", "c", "d"]);
}

#[test]
fn usage_and_validation_errors_exit_two_without_output() {
    let dir = tempfile::tempdir().unwrap();
    let input = write(dir.path(), "square.csv", SQUARE);
    let out = dir.path().join("out");
    let missing = dir.path().join("missing.csv");
    let cases: Vec<Vec<&str>> = vec![
        vec!["fit", "--input", p(&missing), "--k", "2", "--out", p(&out)],
        vec!["fit", "--input", p(&input), "--k", "0", "--out", p(&out)],
        vec!["fit", "--input", p(&input), "--k", "9", "--out", p(&out)],
        vec!["fit", "--input", p(&input), "--k", "2", "--restarts", "0", "--out", p(&out)],
        vec!["fit", "--input", p(&input), "--k", "2", "--loss", "bisquare", "--policy", "p0", "--out", p(&out)],
        vec!["simulate", "--experiment", "waveform", "--replicates", "0", "--out", p(&out)],
        vec!["simulate", "--experiment", "nonsense", "--out", p(&out)],
        vec!["taxonomy", "--model", p(&missing), "--out", p(&out)],
        vec!["frobnicate"],
    ];
    for args in cases {
        assert_eq!(exec(&args), 2, "{args:?}");
        assert!(!out.exists(), "{args:?} left output behind");
        assert_eq!(listing(dir.path()), ["square.csv"], "{args:?}");
    }
    assert_eq!(exec(&["--help"]), 0);
}

#[test]
fn numeric_failure_exits_three() {
    let dir = tempfile::tempdir().unwrap();
    let input = write(dir.path(), "square.csv", SQUARE);
    let fit = dir.path().join("fit");
    assert_eq!(exec(&["fit", "--input", p(&input), "--k", "2", "--out", p(&fit)]), 0);
    // A sector whose records carry no weight at all has undefined shares.
    let mut model = ModelExport::read_json(fit.join("model.json")).unwrap();
    model.alpha[0] = vec![0.0, 0.0];
    let bad = dir.path().join("bad.json");
    model.write_json(&bad).unwrap();
    let sectors = write(dir.path(), "sectors.csv", "symbol,sector\na,E\nb,T\nc,T\nd,T\ne,T\n");
    let out = dir.path().join("tax");
    assert_eq!(exec(&["taxonomy", "--model", p(&bad), "--sectors", p(&sectors), "--out", p(&out)]), 3);
    assert!(!out.exists());
}

#[test]
fn existing_output_is_replaced_only_on_success() {
    let dir = tempfile::tempdir().unwrap();
    let input = write(dir.path(), "square.csv", SQUARE);
    let out = dir.path().join("fit");
    assert_eq!(exec(&["fit", "--input", p(&input), "--k", "2", "--out", p(&out)]), 0);
    let before = std::fs::read(out.join("model.json")).unwrap();
    assert_eq!(exec(&["fit", "--input", p(&input), "--k", "0", "--out", p(&out)]), 2);
    assert_eq!(std::fs::read(out.join("model.json")).unwrap(), before);
}

#[test]
fn simulate_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let run_once = |name: &str| {
        let out = dir.path().join(name);
        let code = exec(&[
            "simulate",
            "--experiment",
            "contamination",
            "--n",
            "40",
            "--cr",
            "0.1,0.15",
            "--seed",
            "9",
            "--out",
            p(&out),
        ]);
        assert_eq!(code, 0);
        out
    };
    let (a, b) = (run_once("a"), run_once("b"));
    assert_eq!(listing(&a), listing(&b));
    for f in listing(&a) {
        assert_eq!(std::fs::read(a.join(&f)).unwrap(), std::fs::read(b.join(&f)).unwrap(), "{f}");
    }
    let truth = std::fs::read_to_string(a.join("truth_cr0.15.csv")).unwrap();
    assert_eq!(truth.lines().filter(|l| l.ends_with(",1")).count(), 6);
}

#[test]
fn smooth_detect_and_taxonomy_chain() {
    let dir = tempfile::tempdir().unwrap();
    let sim = dir.path().join("sim");
    assert_eq!(
        exec(&[
            "simulate",
            "--experiment",
            "contamination",
            "--n",
            "60",
            "--cr",
            "0.1",
            "--seed",
            "4",
            "--out",
            p(&sim)
        ]),
        0
    );

    // Wide grid values -> basis coefficients.
    let smooth = dir.path().join("smooth");
    let code = exec(&[
        "smooth",
        "--input",
        p(&sim.join("curves_cr0.1.csv")),
        "--layout",
        "wide",
        "--m",
        "15",
        "--out",
        p(&smooth),
    ]);
    assert_eq!(code, 0);
    assert!(smooth.join("dataset.csv").exists());

    let detect = dir.path().join("detect");
    let code = exec(&[
        "detect",
        "--input",
        p(&smooth.join("dataset.csv")),
        "--truth",
        p(&sim.join("truth_cr0.1.csv")),
        "--restarts",
        "3",
        "--out",
        p(&detect),
    ]);
    assert_eq!(code, 0);
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(detect.join("report.json")).unwrap()).unwrap();
    assert!(report["metrics"]["tpr"].as_f64().unwrap() >= 0.5, "{report}");

    let tax = dir.path().join("tax");
    assert_eq!(exec(&["taxonomy", "--model", p(&detect.join("model.json")), "--format", "dot", "--out", p(&tax)]), 0);
    assert_eq!(listing(&tax), ["clusters.csv", "manifest.json", "network.dot", "sector_weights.csv"]);
    let dot = std::fs::read_to_string(tax.join("network.dot")).unwrap();
    assert!(dot.starts_with("graph"), "{dot}");
}

#[test]
fn smooth_long_layout() {
    let dir = tempfile::tempdir().unwrap();
    let mut text = String::from("record,variable,t,value\n");
    for r in 0..4 {
        for q in 0..=20 {
            let t = q as f64 / 20.0;
            text += &format!("r{r},x,{t},{}\nr{r},y,{t},{}\n", (r as f64 + 1.0) * t, t * t - r as f64);
        }
    }
    let input = write(dir.path(), "long.csv", &text);
    let out = dir.path().join("smooth");
    assert_eq!(exec(&["smooth", "--input", p(&input), "--m", "6", "--out", p(&out)]), 0);
    let header = std::fs::read_to_string(out.join("dataset.csv")).unwrap();
    let first = header.lines().next().unwrap();
    assert!(first.contains("x_b1") && first.contains("y_b6"), "{first}");
}

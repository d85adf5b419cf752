use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use finsent_core::corpus::CorpusSet;
use finsent_core::sampler::TrainingManifest;
use finsent_core::trainer::RefModel;

fn finsent(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_finsent"))
        .args(args)
        .current_dir(cwd)
        .output()
        .expect("binary runs")
}

fn ok(out: &Output) {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn pipeline_from_csv_to_report() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let mut csv = String::from("sentence,score\n");
    let pos = ["Profit rose sharply", "Revenue growth beat forecasts", "Shares surged on strong gains"];
    let neg = ["Losses widened again", "Stock plunged after lawsuit", "Weak demand drove a decline"];
    let neu = ["The board meets on Monday", "Company files quarterly report", "CEO to speak at conference"];
    for i in 0..12 {
        csv.push_str(&format!("\"{} {i}\",2\n\"{} {i}\",0\n\"{} {i}\",1\n", pos[i % 3], neg[i % 3], neu[i % 3]));
    }
    csv.push_str("\"odd row\",9\n");
    fs::write(d.join("fpb.csv"), csv).unwrap();

    ok(&finsent(
        &[
            "ingest", "--input", "fpb.csv", "--domain", "fpb", "--text-field", "sentence", "--label-field", "score",
            "--label-map", "0=negative,1=neutral,2=positive", "--output", "fpb.jsonl", "--rejected", "rejected.jsonl",
        ],
        d,
    ));
    assert_eq!(fs::read_to_string(d.join("fpb.jsonl")).unwrap().lines().count(), 36);
    assert!(fs::read_to_string(d.join("rejected.jsonl")).unwrap().contains("\"9\""));

    ok(&finsent(&["split", "--input", "fpb.jsonl", "--output", "corpus.jsonl", "--seed", "3"], d));
    let set = CorpusSet::read_jsonl(&d.join("corpus.jsonl")).unwrap();
    let fpb = set.domains().next().unwrap().1;
    assert_eq!(fpb.test.len(), 7);
    assert_eq!(fpb.train.len(), 29);

    ok(&finsent(&["plan", "--total-steps", "60", "--lr-max", "0.5", "--lr-min", "0.05", "--output", "plan.json"], d));
    ok(&finsent(
        &["emit-manifest", "--corpus", "corpus.jsonl", "--plan", "plan.json", "--batch-size", "4", "--seed", "1", "--output", "m.jsonl"],
        d,
    ));
    let m = TrainingManifest::read(&d.join("m.jsonl")).unwrap();
    assert_eq!(m.steps.len(), 60);
    m.validate(&set).unwrap();

    ok(&finsent(
        &[
            "train-ref", "--corpus", "corpus.jsonl", "--manifest", "m.jsonl", "--eval-every", "10", "--checkpoint", "model.json",
            "--trajectory", "traj.csv",
        ],
        d,
    ));
    let model = RefModel::load(&d.join("model.json")).unwrap();
    assert_eq!(model.labels().len(), 3);
    let traj = fs::read_to_string(d.join("traj.csv")).unwrap();
    assert!(traj.starts_with("step,domain,macro_f1\n"));
    assert_eq!(traj.lines().count(), 1 + 6);

    let out = finsent(&["eval", "--corpus", "corpus.jsonl", "--shots", "3", "--seed", "7", "--output-dir", "eval"], d);
    ok(&out);
    assert!(String::from_utf8_lossy(&out.stdout).contains("| mock-lexicon | 3-shot | fpb |"));
    for f in ["report.md", "report.csv", "plot_data.csv", "rows.json", "runs.json", "predictions.jsonl"] {
        assert!(d.join("eval").join(f).exists(), "{f} missing");
    }
    assert_eq!(fs::read_to_string(d.join("eval/predictions.jsonl")).unwrap().lines().count(), 3 * 7);

    let out = finsent(&["report", "--input", "eval/rows.json", "--format", "plot-data"], d);
    ok(&out);
    assert_eq!(String::from_utf8_lossy(&out.stdout), "model,dataset,x,macro_f1\n".to_string() + &{
        let rows = finsent_core::harness::read_rows(&d.join("eval/rows.json")).unwrap();
        format!("mock-lexicon,fpb,3,{}\n", rows[0].macro_f1)
    });
}

#[test]
fn unreachable_endpoint_marks_runs_invalid() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(&finsent(&["synth", "--seed", "2", "--output", "corpus.jsonl"], d));
    fs::write(
        d.join("endpoint.toml"),
        "base_url = \"http://127.0.0.1:9\"\nmodel_name = \"offline\"\ntimeout_secs = 2\n[retry]\nmax_retries = 0\nbackoff_ms = 0\n",
    )
    .unwrap();
    let out = finsent(
        &["eval", "--corpus", "corpus.jsonl", "--classifier", "endpoint", "--endpoint", "endpoint.toml", "--output-dir", "out"],
        d,
    );
    assert_eq!(out.status.code(), Some(2), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    assert!(fs::read_to_string(d.join("out/report.md")).unwrap().contains("(invalid)"));
}

#[test]
fn bad_input_fails_cleanly() {
    let dir = tempfile::tempdir().unwrap();
    let out = finsent(&["plan", "--total-steps", "10", "--layer-scales", "1.0,1.5", "--output", "p.json"], dir.path());
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("layer scales"));

    let out = finsent(&["report", "--input", "missing.json"], dir.path());
    assert_eq!(out.status.code(), Some(1));
}

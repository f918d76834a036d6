use std::path::Path;
use std::process::{Command, Output};

fn ivfq(args: &[&str], cwd: &Path) -> Output {
    let out = Command::new(env!("CARGO_BIN_EXE_ivfq"))
        .args(args)
        .current_dir(cwd)
        .output()
        .expect("failed to start ivfq");
    out
}

fn ok(args: &[&str], cwd: &Path) -> String {
    let out = ivfq(args, cwd);
    assert!(
        out.status.success(),
        "ivfq {args:?} failed:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

#[test]
fn end_to_end_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(&["gen-corpus", "--out", "corpus.cgq", "--count", "4000", "--dim", "16", "--blobs", "200", "--seed", "1"], d);
    ok(&["build-index", "--corpus", "corpus.cgq", "--out-dir", "idx", "--nlist", "40"], d);
    // replay refuses an unprofiled index
    assert!(!ivfq(&["replay", "--index", "idx", "--out-dir", "out"], d).status.success());
    ok(&["profile", "--index", "idx"], d);
    ok(&["gen-workload", "--index", "idx", "--out", "trace.json", "--batches", "4", "--patterns", "4", "--seed", "2"], d);

    let plan = ok(&["group", "--index", "idx", "--trace", "trace.json", "--theta", "0.5"], d);
    let plans: serde_json::Value = serde_json::from_str(&plan).unwrap();
    assert_eq!(plans.as_array().unwrap().len(), 4);

    let summary = ok(
        &["replay", "--index", "idx", "--trace", "trace.json", "--mode", "baseline,qgp", "--out-dir", "out", "--verify"],
        d,
    );
    assert!(summary.contains("verify:"), "{summary}");
    assert!(d.join("out/per_query_baseline.csv").exists());
    assert!(d.join("out/per_query_qgp.csv").exists());
    assert!(!d.join("out/per_query_qg.csv").exists());

    let report = ok(&["report", "--csv", "out/per_query_qgp.csv", "--warmup", "5"], d);
    let s: serde_json::Value = serde_json::from_str(&report).unwrap();
    assert_eq!(s["warmup_boundary"], 5);

    // queries from a flat vector file
    ok(&["gen-corpus", "--out", "queries.cgq", "--count", "150", "--dim", "16", "--seed", "3"], d);
    ok(&["gen-workload", "--index", "idx", "--out", "ingested.json", "--vectors", "queries.cgq", "--seed", "4"], d);
    ok(
        &["replay", "--index", "idx", "--trace", "ingested.json", "--policy", "cost-aware", "--gap-us", "500", "--out-dir", "out2", "--verify", "--sequential"],
        d,
    );

    // replay without a trace generates one from --seed
    ok(&["replay", "--index", "idx", "--seed", "5", "--capacity", "12", "--out-dir", "out3", "--verify"], d);

    // bad arguments fail cleanly
    assert!(!ivfq(&["replay", "--index", "idx", "--mode", "fast"], d).status.success());
    assert!(!ivfq(&["build-index", "--corpus", "missing.cgq", "--out-dir", "x"], d).status.success());
}

mod common;

use std::sync::Arc;

use ivfq::cache::CachePolicy;
use ivfq::engine::ExecMode;
use ivfq::grouping::{jaccard, ClusterSet, GroupingConfig};
use ivfq::ivf::nearest_centroids;
use ivfq::replay::{csv_file_name, replay, verify_written, write_report, ReplayConfig, SummaryFile, SUMMARY_FILE};
use ivfq::report::{read_csv_file, summarize};
use ivfq::workload::{
    anchor_overlap, generate_synthetic, ingest_trace, write_vectors, BatchTrace, BatchingConfig, Interleave,
    SyntheticConfig,
};
use ivfq::Error;

use common::experiment_index;

fn synthetic(n_patterns: usize, interleave: Interleave, seed: u64) -> SyntheticConfig {
    SyntheticConfig {
        n_batches: 6,
        n_patterns,
        interleave,
        seed,
        ..SyntheticConfig::default()
    }
}

#[test]
fn single_pattern_queries_stay_near_the_anchor() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = experiment_index(dir.path(), 1);
    let trace = generate_synthetic(&synthetic(1, Interleave::Roundrobin, 3), &manifest).unwrap();
    let anchor = nearest_centroids(&trace.metadata.anchors[0], &manifest, 10).unwrap();
    for q in trace.queries() {
        let set = nearest_centroids(&q.vector, &manifest, 10).unwrap();
        assert!(anchor_overlap(&set, &anchor) >= 0.8);
        assert_eq!(q.pattern, Some(0));
    }
}

#[test]
fn adjacent_queries_are_less_similar_than_pattern_mates() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = experiment_index(dir.path(), 2);
    let trace = generate_synthetic(&synthetic(2, Interleave::Roundrobin, 4), &manifest).unwrap();
    let qs: Vec<(u32, ClusterSet)> = trace
        .queries()
        .map(|q| (q.pattern.unwrap(), nearest_centroids(&q.vector, &manifest, 10).unwrap()))
        .collect();
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let adjacent: Vec<f64> = qs.windows(2).map(|w| jaccard(&w[0].1, &w[1].1).unwrap()).collect();
    let mut same = Vec::new();
    for i in 0..qs.len() {
        for j in i + 1..qs.len() {
            if qs[i].0 == qs[j].0 {
                same.push(jaccard(&qs[i].1, &qs[j].1).unwrap());
            }
        }
    }
    assert!(qs.windows(2).all(|w| w[0].0 != w[1].0));
    assert!(mean(&adjacent) < mean(&same), "{} vs {}", mean(&adjacent), mean(&same));
}

#[test]
fn generation_is_seeded_and_well_formed() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = experiment_index(dir.path(), 3);
    for interleave in [Interleave::Roundrobin, Interleave::Shuffled] {
        let cfg = synthetic(5, interleave, 9);
        let a = serde_json::to_vec(&generate_synthetic(&cfg, &manifest).unwrap()).unwrap();
        let b = serde_json::to_vec(&generate_synthetic(&cfg, &manifest).unwrap()).unwrap();
        assert_eq!(a, b);
        let trace: BatchTrace = serde_json::from_slice(&a).unwrap();
        trace.validate().unwrap();
        assert_eq!(trace.batches.len(), 6);
        assert!(trace.batches.iter().all(|b| (20..=100).contains(&b.queries.len())));
        let patterns: Vec<u32> = trace.queries().map(|q| q.pattern.unwrap()).collect();
        assert!(patterns.windows(2).all(|w| w[0] != w[1]));
        let ids: Vec<u64> = trace.queries().map(|q| q.query_id).collect();
        assert_eq!(ids, (0..ids.len() as u64).collect::<Vec<_>>());
    }
    let other = generate_synthetic(&synthetic(5, Interleave::Roundrobin, 10), &manifest).unwrap();
    assert_ne!(other, generate_synthetic(&synthetic(5, Interleave::Roundrobin, 9), &manifest).unwrap());
}

#[test]
fn excessive_noise_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = experiment_index(dir.path(), 4);
    let cfg = SyntheticConfig {
        noise: 50.0,
        max_retries: 8,
        ..synthetic(3, Interleave::Roundrobin, 1)
    };
    match generate_synthetic(&cfg, &manifest) {
        Err(Error::Generation(msg)) => assert!(msg.contains("best overlap"), "{msg}"),
        other => panic!("expected a generation error, got {other:?}"),
    }
    let bad = SyntheticConfig {
        n_patterns: 0,
        ..synthetic(1, Interleave::Roundrobin, 1)
    };
    assert!(generate_synthetic(&bad, &manifest).is_err());
}

#[test]
fn ingestion_batches_flat_vector_files() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = experiment_index(dir.path(), 5);
    let path = dir.path().join("queries.cgq");
    let vectors: Vec<Vec<f32>> = (0..100).map(|i| vec![i as f32 / 100.0; 16]).collect();
    write_vectors(&path, 16, &vectors).unwrap();
    let cfg = BatchingConfig {
        min_batch: 20,
        max_batch: 100,
        seed: 42,
    };
    let a = ingest_trace(&path, &cfg, &manifest).unwrap();
    let b = ingest_trace(&path, &cfg, &manifest).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.query_count(), 100);
    assert!(a.batches.iter().all(|b| (20..=100).contains(&b.queries.len())));
    let flat: Vec<Vec<f32>> = a.queries().map(|q| q.vector.clone()).collect();
    assert_eq!(flat, vectors);

    let wrong = dir.path().join("wrong.cgq");
    write_vectors(&wrong, 8, &[vec![0.0; 8]]).unwrap();
    assert!(matches!(
        ingest_trace(&wrong, &cfg, &manifest),
        Err(Error::DimensionMismatch { expected: 16, actual: 8 })
    ));
    let empty = dir.path().join("empty.cgq");
    std::fs::write(&empty, b"").unwrap();
    assert!(matches!(
        ingest_trace(&empty, &cfg, &manifest),
        Err(Error::MalformedVectors { offset: 0, .. })
    ));
}

#[test]
fn replay_reports_are_consistent() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = experiment_index(dir.path(), 6);
    let trace = generate_synthetic(&synthetic(5, Interleave::Roundrobin, 6), &manifest).unwrap();
    let config = ReplayConfig::default();
    assert!(matches!(
        replay(&trace, Arc::clone(&manifest), &config, &[]),
        Err(Error::InvalidArgument(_))
    ));

    let report = replay(&trace, Arc::clone(&manifest), &config, &ExecMode::ALL).unwrap();
    assert_eq!(report.warmup_boundary, trace.batches[0].queries.len());
    let hashes = report.modes[0].result_hashes();
    assert_eq!(hashes.len(), trace.query_count());
    for m in &report.modes {
        assert_eq!(m.rows.len(), trace.query_count());
        assert!(m.failures.is_empty());
        assert_eq!(m.result_hashes(), hashes);
        assert_eq!(m.total_row_bytes(), m.store_bytes_read);
        let s = &m.summary;
        assert!(s.p50_us <= s.p95_us && s.p95_us <= s.p99_us);
        assert!((0.0..=1.0).contains(&s.hit_ratio));
        assert_eq!(m.policy, config.policy_for(m.mode));
    }
    // group ids are unique across batches
    let qg = report.mode(ExecMode::Qg).unwrap();
    let mut seen = Vec::new();
    for r in &qg.rows {
        let g = r.group_id.unwrap();
        if seen.last() != Some(&g) {
            assert!(!seen.contains(&g));
            seen.push(g);
        }
    }
    assert!(report.mode(ExecMode::Baseline).unwrap().rows.iter().all(|r| r.group_id.is_none()));

    let out = dir.path().join("out");
    write_report(&report, &config, &out).unwrap();
    verify_written(&report, &trace, &manifest, &config, &out).unwrap();
    let summary: SummaryFile = serde_json::from_slice(&std::fs::read(out.join(SUMMARY_FILE)).unwrap()).unwrap();
    for m in &report.modes {
        let rows = read_csv_file(&out.join(csv_file_name(m.mode))).unwrap();
        assert_eq!(rows, m.rows);
        let written = summary.modes.iter().find(|s| s.mode == m.mode).unwrap();
        assert_eq!(summarize(&rows, summary.warmup_boundary).unwrap(), written.summary);
    }

    // tampering with a row is caught
    let path = out.join(csv_file_name(ExecMode::Qgp));
    let text = std::fs::read_to_string(&path).unwrap();
    let mut lines: Vec<String> = text.lines().map(String::from).collect();
    let mut fields: Vec<String> = lines[5].split(',').map(String::from).collect();
    let hits: u32 = fields[4].parse().unwrap();
    let misses: u32 = fields[5].parse().unwrap();
    if misses > 0 {
        fields[4] = (hits + 1).to_string();
        fields[5] = (misses - 1).to_string();
    } else {
        fields[4] = (hits - 1).to_string();
        fields[5] = (misses + 1).to_string();
    }
    lines[5] = fields.join(",");
    std::fs::write(&path, lines.join("\n") + "\n").unwrap();
    assert!(matches!(
        verify_written(&report, &trace, &manifest, &config, &out),
        Err(Error::Divergence(_))
    ));
}

#[test]
fn grouping_and_prefetch_beat_the_baseline_on_interleaved_patterns() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = experiment_index(dir.path(), 7);
    let trace = generate_synthetic(&synthetic(2, Interleave::Roundrobin, 7), &manifest).unwrap();
    // two ten-cluster patterns against a cache that holds one of them
    let config = ReplayConfig {
        capacity: 10,
        ..ReplayConfig::default()
    };
    let report = replay(&trace, Arc::clone(&manifest), &config, &[ExecMode::Baseline, ExecMode::Qgp]).unwrap();
    let base = report.mode(ExecMode::Baseline).unwrap().summary.hit_ratio;
    let qgp = report.mode(ExecMode::Qgp).unwrap().summary.hit_ratio;
    assert!(qgp > base, "qgp {qgp} baseline {base}");
}

#[test]
fn prefetch_never_hurts_the_tail_of_small_groups() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = experiment_index(dir.path(), 8);
    let trace = generate_synthetic(&synthetic(5, Interleave::Shuffled, 8), &manifest).unwrap();
    for (gap, strict) in [(0.0, false), (2000.0, true)] {
        let config = ReplayConfig {
            grouping: GroupingConfig::with_theta(0.9),
            arrival_gap_us: gap,
            ..ReplayConfig::default()
        };
        let report = replay(&trace, Arc::clone(&manifest), &config, &[ExecMode::Qg, ExecMode::Qgp]).unwrap();
        let qg = report.mode(ExecMode::Qg).unwrap().summary.p99_us;
        let qgp = report.mode(ExecMode::Qgp).unwrap().summary.p99_us;
        assert!(qgp <= qg, "gap {gap}: qgp {qgp} qg {qg}");
        if strict {
            assert!(qgp < qg, "gap {gap}: qgp {qgp} qg {qg}");
        }
    }
}

#[test]
fn sequential_and_parallel_replays_agree() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = experiment_index(dir.path(), 9);
    let trace = generate_synthetic(&synthetic(3, Interleave::Shuffled, 9), &manifest).unwrap();
    let run = |parallel| {
        let config = ReplayConfig {
            parallel,
            baseline_policy: CachePolicy::Lru,
            warmup: Some(0),
            ..ReplayConfig::default()
        };
        let r = replay(&trace, Arc::clone(&manifest), &config, &ExecMode::ALL).unwrap();
        r.modes.into_iter().map(|m| (m.rows, m.summary)).collect::<Vec<_>>()
    };
    assert_eq!(run(true), run(false));

    let too_much = ReplayConfig {
        warmup: Some(trace.query_count()),
        ..ReplayConfig::default()
    };
    assert!(replay(&trace, Arc::clone(&manifest), &too_much, &[ExecMode::Qg]).is_err());
}

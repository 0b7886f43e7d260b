//! Runs the `flowquery` binary and checks exit codes and output formats.

use std::path::Path;
use std::process::{Command, Output};

fn flowquery(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_flowquery")).args(args).output().unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = flowquery(args);
    assert_eq!(out.status.code(), Some(0), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn usage_errors_exit_2() {
    assert_eq!(flowquery(&["no-such-command"]).status.code(), Some(2));
    assert_eq!(flowquery(&[]).status.code(), Some(2));
    assert_eq!(flowquery(&["query", "--text", "vortex"]).status.code(), Some(2));
    assert_eq!(flowquery(&["gen-field", "--kind", "tornado", "--out", "x"]).status.code(), Some(2));
    assert_eq!(flowquery(&["train-matcher", "--encoder", "e", "--out", "m"]).status.code(), Some(2));
    let out = flowquery(&["query", "--index", "i", "--text", "v", "--k", "many"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(!out.stderr.is_empty());
}

#[test]
fn help_and_version_exit_0() {
    assert!(ok(&["--help"]).contains("build-index"));
    assert!(ok(&["--version"]).contains(env!("CARGO_PKG_VERSION")));
}

#[test]
fn runtime_errors_exit_1() {
    let dir = tempfile::tempdir().unwrap();
    let out = flowquery(&["query", "--index", p(&dir.path().join("missing.fqix")), "--text", "vortex"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error:"));
    let bad = dir.path().join("bad.fqix");
    std::fs::write(&bad, b"FQIXjunk").unwrap();
    assert_eq!(flowquery(&["query", "--index", p(&bad), "--text", "vortex"]).status.code(), Some(1));
    let out = flowquery(&["gen-field", "--kind", "helix", "--pitch=-1", "--out", p(&dir.path().join("f"))]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn field_to_query_chain() {
    let dir = tempfile::tempdir().unwrap();
    let d = |name: &str| dir.path().join(name);
    ok(&["gen-field", "--kind", "helix", "--dims", "9", "9", "9", "--seed", "1", "--out", p(&d("field"))]);
    assert_eq!(std::fs::metadata(d("field.vec")).unwrap().len(), 9 * 9 * 9 * 12);
    let t = ok(&["trace", "--field", p(&d("field")), "--seeds", "12", "--max-steps", "600", "--out", p(&d("lines.txt"))]);
    assert!(t.contains("\"streamlines\":12"));
    let s = ok(&[
        "sample", "--streamlines", p(&d("lines.txt")), "--max-len", "2", "--levels", "1",
        "--out-segments", p(&d("segs.txt")), "--out-dm", p(&d("segs.dm")),
    ]);
    let n: usize = serde_json::from_str::<serde_json::Value>(&s).unwrap()["segments"].as_u64().unwrap() as usize;
    assert!(n >= 5, "{s}");
    ok(&["train-encoder", "--data", p(&d("segs.dm")), "--epochs", "3", "--latent-dim", "8", "--out", p(&d("enc.ckpt"))]);
    ok(&["encode", "--model", p(&d("enc.ckpt")), "--data", p(&d("segs.dm")), "--out", p(&d("z.txt"))]);
    let rows = std::fs::read_to_string(d("z.txt")).unwrap();
    assert_eq!(rows.lines().count(), n);
    assert!(rows.lines().all(|l| l.split_whitespace().count() == 8));
    let u = ok(&["eval-uniformity", "--features", p(&d("z.txt"))]);
    let u: serde_json::Value = serde_json::from_str(&u).unwrap();
    assert!(u["value"].as_f64().unwrap() >= 0.0 && u["std_error"].is_null());

    ok(&[
        "train-matcher", "--toy", "--encoder", p(&d("enc.ckpt")), "--per-class", "10", "--samples-per-class", "4",
        "--set-size", "4", "--epochs", "2", "--common-dim", "16", "--out", p(&d("m.ckpt")),
        "--save-corpus", p(&d("toy.txt")),
    ]);
    assert_eq!(std::fs::read_to_string(d("toy.txt.labels")).unwrap().lines().count(), 50);
    let b = ok(&["build-index", "--segments", p(&d("segs.txt")), "--encoder", p(&d("enc.ckpt")), "--matcher", p(&d("m.ckpt")), "--out", p(&d("i.fqix"))]);
    assert!(b.contains("fingerprint"));

    let q = ok(&["query", "--index", p(&d("i.fqix")), "--text", "vortex", "--k", "5"]);
    let lines: Vec<&str> = q.lines().collect();
    assert_eq!(lines.len(), 5);
    let mut last = f64::INFINITY;
    for (i, l) in lines.iter().enumerate() {
        let f: Vec<&str> = l.split(' ').collect();
        assert_eq!(f.len(), 3);
        assert_eq!(f[0].parse::<usize>().unwrap(), i + 1);
        let score: f64 = f[1].parse().unwrap();
        assert!(score <= last);
        last = score;
        assert!(f[2].parse::<u64>().unwrap() < n as u64);
    }
    assert_eq!(q, ok(&["query", "--index", p(&d("i.fqix")), "--text", "vortex", "--k", "5"]));
    let out = flowquery(&["query", "--index", p(&d("i.fqix")), "--text", "  "]);
    assert_eq!(out.status.code(), Some(1));

    // captions file path of train-matcher
    std::fs::write(d("caps.jsonl"), "{\"caption\":\"a spiral\",\"segment_ids\":[0,1]}\n{\"caption\":\"a line\",\"segment_ids\":[2,3]}\n").unwrap();
    ok(&[
        "train-matcher", "--captions", p(&d("caps.jsonl")), "--segments", p(&d("segs.txt")), "--encoder", p(&d("enc.ckpt")),
        "--epochs", "2", "--common-dim", "8", "--out", p(&d("m2.ckpt")),
    ]);
    std::fs::write(d("caps.jsonl"), "{\"caption\":\"a spiral\",\"segment_ids\":[0,99999]}\n").unwrap();
    let out = flowquery(&[
        "train-matcher", "--captions", p(&d("caps.jsonl")), "--segments", p(&d("segs.txt")), "--encoder", p(&d("enc.ckpt")),
        "--out", p(&d("m3.ckpt")),
    ]);
    assert_eq!(out.status.code(), Some(1));

    // dry-run instruction data with a review list
    let g = ok(&[
        "gen-data", "--segments", p(&d("segs.txt")), "--out-dir", p(&d("gen")), "--count", "5", "--views", "2",
        "--size", "32", "--dry-run", "--sample-review", "0.2", "--seed", "3",
    ]);
    let g: serde_json::Value = serde_json::from_str(&g).unwrap();
    assert_eq!((g["samples"].as_u64(), g["failures"].as_u64()), (Some(5), Some(0)));
    assert_eq!(std::fs::read_to_string(d("gen/instructions.jsonl")).unwrap().lines().count(), 5);
    assert_eq!(std::fs::read_to_string(d("gen/review.txt")).unwrap().lines().count(), 1);
    let out = flowquery(&["gen-data", "--segments", p(&d("segs.txt")), "--out-dir", p(&d("gen2"))]);
    assert_eq!(out.status.code(), Some(1), "live mode without an endpoint must fail");
}

#[test]
fn probe_and_bench_reports() {
    let dir = tempfile::tempdir().unwrap();
    let feats = dir.path().join("f.txt");
    let labels = dir.path().join("l.txt");
    let (mut f, mut l) = (String::new(), String::new());
    for i in 0..40 {
        let c = i % 2;
        f.push_str(&format!("{} {}\n", 10.0 * c as f64 + (i as f64 * 0.37).sin(), (i as f64 * 0.91).cos()));
        l.push_str(&format!("{c}\n"));
    }
    std::fs::write(&feats, f).unwrap();
    std::fs::write(&labels, l).unwrap();
    let r = ok(&["eval-probe", "--features", p(&feats), "--labels", p(&labels), "--epochs", "50"]);
    let r: serde_json::Value = serde_json::from_str(&r).unwrap();
    assert_eq!(r["accuracy"].as_f64(), Some(1.0));

    let b = ok(&["bench-scaling", "--counts", "50,100", "--repeats", "1"]);
    let recs: Vec<serde_json::Value> = b.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(recs.len(), 3);
    assert_eq!(recs[0]["record"], "environment");
    assert_eq!(recs[1]["op"], "distance_matrices");
    assert_eq!(recs[2]["count"], 100);
    assert_eq!(flowquery(&["bench-scaling", "--counts", "100,50"]).status.code(), Some(1));
}

//! Acceptance: byte-level determinism of every CLI command under identical
//! inputs, flags, and seed, with timing fields zeroed by --no-timing.
//!
//! Run with `cargo test -p fltop-cli --test acceptance -- --nocapture`.

use std::fs;
use std::path::Path;
use std::process::Command;

fn run(args: &[&str]) -> (Vec<u8>, Vec<u8>) {
    let out = Command::new(env!("CARGO_BIN_EXE_fltop"))
        .args(args)
        .output()
        .expect("failed to spawn fltop");
    assert!(
        out.status.success(),
        "command {:?} failed: {}",
        args,
        String::from_utf8_lossy(&out.stderr)
    );
    (out.stdout, out.stderr)
}

fn file_bytes(path: &Path) -> Vec<u8> {
    fs::read(path).unwrap_or_else(|e| panic!("missing {path:?}: {e}"))
}

fn dir_snapshot(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut entries: Vec<(String, Vec<u8>)> = fs::read_dir(dir)
        .unwrap()
        .map(|entry| {
            let entry = entry.unwrap();
            (
                entry.file_name().to_string_lossy().into_owned(),
                file_bytes(&entry.path()),
            )
        })
        .collect();
    entries.sort_by(|a, b| a.0.cmp(&b.0));
    entries
}

#[test]
fn criterion_09_cli_determinism() {
    let work = tempfile::tempdir().unwrap();
    let root = work.path();

    // gen-corpus twice into separate directories: identical trees.
    let corpus_a = root.join("corpus_a");
    let corpus_b = root.join("corpus_b");
    for dir in [&corpus_a, &corpus_b] {
        run(&[
            "gen-corpus",
            "--out-dir",
            dir.to_str().unwrap(),
            "--utterances",
            "6",
            "--frames",
            "40",
            "--vocab-size",
            "12",
            "--peakedness",
            "50",
            "--seed",
            "42",
        ]);
    }
    assert_eq!(
        dir_snapshot(&corpus_a),
        dir_snapshot(&corpus_b),
        "gen-corpus trees differ between runs"
    );

    let manifest = corpus_a.join("manifest.tsv");
    let vocab = corpus_a.join("vocab.txt");
    let manifest = manifest.to_str().unwrap();
    let vocab = vocab.to_str().unwrap();

    // decode --json --out twice: identical files and identical stdout.
    let decode_out_1 = root.join("decode1.jsonl");
    let decode_out_2 = root.join("decode2.jsonl");
    let mut stdouts = Vec::new();
    for out in [&decode_out_1, &decode_out_2] {
        let (stdout, _) = run(&[
            "decode",
            "--manifest",
            manifest,
            "--vocab",
            vocab,
            "--json",
            "--no-timing",
            "--threads",
            "3",
            "--out",
            out.to_str().unwrap(),
        ]);
        stdouts.push(stdout);
    }
    assert_eq!(stdouts[0], stdouts[1]);
    assert_eq!(file_bytes(&decode_out_1), file_bytes(&decode_out_2));

    // sweep-topn twice: identical CSV and metadata sidecar.
    let topn_1 = root.join("topn1.csv");
    let topn_2 = root.join("topn2.csv");
    for out in [&topn_1, &topn_2] {
        run(&[
            "sweep-topn",
            "--manifest",
            manifest,
            "--vocab",
            vocab,
            "--n-values",
            "1,2,4,12",
            "--beam-size",
            "32",
            "--out",
            out.to_str().unwrap(),
            "--no-timing",
            "--threads",
            "2",
            "--seed",
            "42",
        ]);
    }
    assert_eq!(file_bytes(&topn_1), file_bytes(&topn_2));
    assert_eq!(
        file_bytes(&root.join("topn1.meta.json")),
        file_bytes(&root.join("topn2.meta.json"))
    );

    // sweep-relthres twice.
    let rel_1 = root.join("rel1.csv");
    let rel_2 = root.join("rel2.csv");
    for out in [&rel_1, &rel_2] {
        run(&[
            "sweep-relthres",
            "--manifest",
            manifest,
            "--vocab",
            vocab,
            "--r-values",
            "0.0,0.007,0.1",
            "--beam-size",
            "32",
            "--out",
            out.to_str().unwrap(),
            "--no-timing",
            "--threads",
            "2",
            "--seed",
            "42",
        ]);
    }
    assert_eq!(file_bytes(&rel_1), file_bytes(&rel_2));
    assert_eq!(
        file_bytes(&root.join("rel1.meta.json")),
        file_bytes(&root.join("rel2.meta.json"))
    );

    // index-stats twice, CSV + summary JSON + metadata.
    let idx_1 = root.join("idx1.csv");
    let idx_2 = root.join("idx2.csv");
    for out in [&idx_1, &idx_2] {
        run(&[
            "index-stats",
            "--manifest",
            manifest,
            "--vocab",
            vocab,
            "--beam-size",
            "32",
            "--out",
            out.to_str().unwrap(),
            "--json",
            "--no-timing",
            "--threads",
            "2",
            "--seed",
            "42",
        ]);
    }
    assert_eq!(file_bytes(&idx_1), file_bytes(&idx_2));
    assert_eq!(
        file_bytes(&root.join("idx1.json")),
        file_bytes(&root.join("idx2.json"))
    );
    assert_eq!(
        file_bytes(&root.join("idx1.meta.json")),
        file_bytes(&root.join("idx2.meta.json"))
    );

    println!("criterion 9 (CLI determinism, byte-identical outputs): PASS");
}

mod common;

use std::path::Path;
use std::process::{Command, Output};

use nairs::io::save_dataset_dir;
use nairs::snapshot::Snapshot;
use nairs_core::model::ModelParams;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::Value;

fn nairs(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_nairs"))
        .args(args)
        .env_remove("NAIRS_DATA")
        .env_remove("NAIRS_MODEL")
        .env_remove("NAIRS_LOG")
        .env("RUST_LOG", "warn")
        .output()
        .unwrap()
}

fn ok(args: &[&str]) -> Value {
    let out = nairs(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn ingest_train_eval_cache_report() {
    let dir = tempfile::tempdir().unwrap();
    let raw = dir.path().join("ratings.dat");
    let mut text = String::new();
    for (u, items) in [[0, 1, 2, 3], [0, 1, 3, 2], [0, 2, 3, 1], [4, 5, 6, 7], [4, 5, 7, 6]].iter().enumerate() {
        for (t, i) in items.iter().enumerate() {
            text.push_str(&format!("{}::{}::5::{}\n", u + 10, i + 100, 100 * u + t));
        }
    }
    text.push_str("10::100::4::999\n");
    std::fs::write(&raw, text).unwrap();
    let titles = dir.path().join("movies.dat");
    let names: String = (0..8).map(|i| format!("{}::{}::Drama\n", i + 100, common::TOY_NAMES[i])).collect();
    std::fs::write(&titles, names).unwrap();

    let data = dir.path().join("toy");
    let r = ok(&["ingest", "--data", s(&raw), "--items", s(&titles), "--out", s(&data)]);
    assert_eq!((r["users"].as_u64(), r["items"].as_u64(), r["interactions"].as_u64()), (Some(5), Some(8), Some(20)));
    assert_eq!(r["duplicates_dropped"], 1);
    assert!(common::read(&data.join("items.tsv")).contains("The Matrix (1999)"));

    let model = dir.path().join("toy.model");
    let t = ok(&["train", "--data", s(&data), "--model", s(&model), "--epochs", "3", "--dim", "4", "--seed", "1"]);
    assert_eq!(t["epochs"], 3);
    assert!(t["hr@10"].as_f64().is_some());
    let (snap, version) = Snapshot::load(&model).unwrap();
    assert_eq!(t["version"], version.as_str());
    assert_eq!((snap.hyperparams.dim, snap.hyperparams.attention_dim), (4, 4));
    assert_eq!(snap.meta("train_split"), Some("leave_one_out"));
    assert_eq!(snap.meta("num_train"), Some("15"));
    let log = common::read(&dir.path().join("toy.model.metrics.tsv"));
    assert_eq!(log.lines().count(), 4);
    assert!(log.starts_with("epoch\tloss\thr@10\tndcg@10\tseconds"));

    let e = ok(&["eval", "--data", s(&data), "--model", s(&model), "--scorer", "nairs"]);
    assert_eq!(e["users"], 5);
    assert_eq!(e["version"], version.as_str());
    let report = common::read(&dir.path().join("toy.model.nairs.metrics.tsv"));
    assert!(report.lines().last().unwrap().starts_with("# aggregate scorer=nairs"));
    assert_eq!(report.lines().filter(|l| !l.starts_with('#')).count(), 6);

    let p = ok(&["eval", "--data", s(&data), "--scorer", "popularity"]);
    assert!(p["version"].is_null());
    assert!(data.join("popularity.metrics.tsv").exists());

    let c = ok(&["cache", "--data", s(&data), "--model", s(&model), "--depth", "3"]);
    assert_eq!(c["version"], version.as_str());
    let cache = nairs::cache::load(&dir.path().join("toy.model.cache")).unwrap();
    assert_eq!(cache.depth, 3);

    let csv_path = dir.path().join("epochs.csv");
    let out = nairs(&["report", "--model", s(&model), "--out", s(&csv_path)]);
    assert!(out.status.success());
    let csv = common::read(&csv_path);
    assert_eq!(csv.lines().next(), Some("epoch,loss,hr,ndcg,seconds"));
    assert_eq!(csv.lines().count(), 4);
    let stdout = nairs(&["report", "--model", s(&model)]).stdout;
    assert_eq!(String::from_utf8(stdout).unwrap(), csv);
}

#[test]
fn zero_epochs_keep_the_initialization_and_seeds_reproduce() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("toy");
    save_dataset_dir(&common::toy_dataset(), &data).unwrap();
    let init = dir.path().join("init.model");
    ok(&["train", "--data", s(&data), "--model", s(&init), "--epochs", "0", "--seed", "5", "--full"]);
    let (snap, _) = Snapshot::load(&init).unwrap();
    let expected = ModelParams::init(5, 8, &snap.hyperparams, &mut ChaCha8Rng::seed_from_u64(5));
    assert_eq!(snap.params, expected);
    assert_eq!(snap.meta("epochs_completed"), Some("0"));

    let a = dir.path().join("a.model");
    let b = dir.path().join("b.model");
    let config = dir.path().join("hp.conf");
    std::fs::write(&config, "# shared\nbeta = 0.5\nlearning_rate = 0.01\n").unwrap();
    for m in [&a, &b] {
        ok(&["train", "--data", s(&data), "--model", s(m), "--config", s(&config), "--epochs", "4", "--seed", "1"]);
    }
    let (sa, va) = Snapshot::load(&a).unwrap();
    let (_, vb) = Snapshot::load(&b).unwrap();
    assert_eq!(va, vb);
    assert_eq!(sa.hyperparams.beta, 0.5);
    let c = dir.path().join("c.model");
    ok(&["train", "--data", s(&data), "--model", s(&c), "--config", s(&config), "--epochs", "4", "--seed", "2"]);
    assert_ne!(Snapshot::load(&c).unwrap().1, va);
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("toy");
    save_dataset_dir(&common::toy_dataset(), &data).unwrap();
    let model = dir.path().join("m.model");

    assert_eq!(nairs(&["--help"]).status.code(), Some(0));
    assert_eq!(nairs(&[]).status.code(), Some(2));
    assert_eq!(nairs(&["frobnicate"]).status.code(), Some(2));
    assert_eq!(nairs(&["train", "--data", s(&data), "--model", s(&model), "--bogus"]).status.code(), Some(2));
    assert_eq!(nairs(&["train", "--data", s(&data), "--model", s(&model), "--epochs", "x"]).status.code(), Some(2));
    assert_eq!(nairs(&["train", "--data", s(&data), "--model", s(&model), "--beta", "1.5"]).status.code(), Some(2));
    assert_eq!(nairs(&["eval", "--data", s(&data), "--scorer", "fism"]).status.code(), Some(2));

    let out = nairs(&["train", "--data", s(&dir.path().join("nowhere")), "--model", s(&model)]);
    assert_eq!(out.status.code(), Some(1));
    let err: Value = serde_json::from_str(String::from_utf8_lossy(&out.stderr).lines().last().unwrap()).unwrap();
    assert_eq!(err["error"], "io");
    assert!(err["message"].as_str().unwrap().contains("nowhere"));

    let bad_conf = dir.path().join("bad.conf");
    std::fs::write(&bad_conf, "colour = blue\n").unwrap();
    let out = nairs(&["train", "--data", s(&data), "--model", s(&model), "--config", s(&bad_conf)]);
    assert_eq!(out.status.code(), Some(1));

    ok(&["train", "--data", s(&data), "--model", s(&model), "--epochs", "1", "--kind", "fism"]);
    let out = nairs(&["eval", "--data", s(&data), "--model", s(&model), "--scorer", "nairs"]);
    assert_eq!(out.status.code(), Some(1));
    ok(&["eval", "--data", s(&data), "--model", s(&model), "--scorer", "fism"]);
}

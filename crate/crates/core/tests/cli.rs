use std::path::Path;
use std::process::{Command, Output};

use van::checkpoint::Checkpoint;
use van::dataset::Dataset;
use van::eval::cascade_infer;
use van::{Network, NetworkConfig, Variant};

fn van(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_van")).args(args).output().expect("binary runs")
}

fn s(p: &Path) -> String {
    p.to_string_lossy().into_owned()
}

const SMALL: [&str; 4] = ["--set", "train_sequences=12", "--set", "test_sequences=6"];

fn gen(dir: &Path, extra: &[&str]) -> Output {
    van(&[&["gen", "--out", &s(dir)], &SMALL[..], extra].concat())
}

#[test]
fn gen_writes_splits_and_is_reproducible() {
    let root = tempfile::tempdir().unwrap();
    let (a, b) = (root.path().join("a"), root.path().join("b"));
    let out = gen(&a, &["--seed", "3"]);
    assert!(out.status.success());
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("train: 12 sequences"), "{stdout}");
    assert!(stdout.contains("test: 6 sequences"), "{stdout}");
    assert!(gen(&b, &["--seed", "3"]).status.success());
    for f in ["train.vds", "test.vds", "summary.csv", "config.txt"] {
        assert_eq!(std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap(), "{f}");
    }

    // the echoed config alone reproduces the run
    let c = root.path().join("c");
    let cfg = s(&a.join("config.txt"));
    assert!(van(&["gen", "--out", &s(&c), "--config", &cfg]).status.success());
    assert_eq!(std::fs::read(a.join("train.vds")).unwrap(), std::fs::read(c.join("train.vds")).unwrap());
}

#[test]
fn k_above_proposal_length_names_the_proposal() {
    let dir = tempfile::tempdir().unwrap();
    let out = gen(dir.path(), &["--k", "30"]);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("proposal [") && err.contains("fewer than k = 30"), "{err}");
}

#[test]
fn usage_errors_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    let d = s(dir.path());
    assert_eq!(van(&["gen", "--out", &d, "--nonsense"]).status.code(), Some(1));
    assert_eq!(van(&["gen", "--out", &d, "--set", "nonsense=1"]).status.code(), Some(1));
    assert_eq!(van(&["gen", "--out", &d, "--variant", "van_x"]).status.code(), Some(1));
    std::fs::write(dir.path().join("bad.txt"), "unknown_key=3\n").unwrap();
    assert_eq!(van(&["gen", "--out", &d, "--config", &s(&dir.path().join("bad.txt"))]).status.code(), Some(1));
    assert_eq!(van(&["frobnicate"]).status.code(), Some(1));
}

#[test]
fn train_eval_round_trip() {
    let root = tempfile::tempdir().unwrap();
    let data = root.path().join("data");
    assert!(gen(&data, &["--seed", "1"]).status.success());

    let train = |variant: &str, out: &Path, extra: &[&str]| {
        van(&[&["train", "--data", &s(&data), "--out", &s(out), "--variant", variant, "--iters", "40", "--batch", "16"], extra].concat())
    };
    let base_out = train("baseline", &root.path().join("base"), &[]);
    let vp_out = train("van_p", &root.path().join("vp"), &[]);
    assert!(base_out.status.success() && vp_out.status.success());
    let count_line = |o: &Output| {
        String::from_utf8_lossy(&o.stdout)
            .lines()
            .find(|l| l.contains("parameters"))
            .map(|l| l.split(" with ").nth(1).unwrap().to_string())
            .unwrap()
    };
    assert_eq!(count_line(&base_out), count_line(&vp_out));

    let loss = std::fs::read_to_string(root.path().join("vp/loss.csv")).unwrap();
    assert_eq!(loss.lines().count(), 41);

    // evaluating twice gives identical tables
    let ckpt = s(&root.path().join("vp/model.ckpt"));
    let e1 = root.path().join("e1");
    let e2 = root.path().join("e2");
    for e in [&e1, &e2] {
        let o = van(&["eval", "--data", &s(&data), "--checkpoint", &ckpt, "--out", &s(e)]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    for f in ["map.csv", "map_long.csv", "detections.csv"] {
        assert_eq!(std::fs::read(e1.join(f)).unwrap(), std::fs::read(e2.join(f)).unwrap());
    }
    let map = std::fs::read_to_string(e1.join("map.csv")).unwrap();
    assert!(map.starts_with("variant,k,seed,0.3,0.4,0.5,0.6,0.7,avg\nvan_p,3,1,"), "{map}");

    // the checkpoint's variant wins over the default, a conflicting flag is refused
    let o = van(&["eval", "--data", &s(&data), "--checkpoint", &ckpt, "--out", &s(&e1), "--variant", "van_o"]);
    assert_eq!(o.status.code(), Some(1));

    let o = van(&["eval", "--data", &s(&data), "--checkpoint", &s(&root.path().join("missing.ckpt")), "--out", &s(&e1)]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn zero_learning_rate_keeps_initialization() {
    let root = tempfile::tempdir().unwrap();
    let data = root.path().join("data");
    assert!(gen(&data, &["--seed", "4"]).status.success());
    let out = root.path().join("t");
    let o = van(&["train", "--data", &s(&data), "--out", &s(&out), "--variant", "van_o", "--lr", "0", "--iters", "5", "--batch", "8"]);
    assert!(o.status.success());
    let ckpt = Checkpoint::load(&out.join("model.ckpt")).unwrap();
    let cfg = NetworkConfig { variant: Variant::VanO, ..ckpt.network.config };
    assert_eq!(ckpt.network, Network::build(cfg, 4).unwrap());
}

#[test]
fn cascade_steps_change_only_boundaries_count() {
    let root = tempfile::tempdir().unwrap();
    let data = root.path().join("data");
    assert!(gen(&data, &["--seed", "2"]).status.success());
    let out = root.path().join("t");
    assert!(van(&["train", "--data", &s(&data), "--out", &s(&out), "--iters", "60", "--batch", "16"]).status.success());
    let net = Checkpoint::load(&out.join("model.ckpt")).unwrap().network;
    let test = Dataset::load(&data.join("test.vds")).unwrap();
    let seq = &test.sequences[0];
    let props: Vec<_> = test.proposals.iter().filter(|p| p.seq_id == seq.id).copied().collect();
    let one = cascade_infer(&net, seq, &props, 1).unwrap();
    let two = cascade_infer(&net, seq, &props, 2).unwrap();
    assert_eq!(one.len(), props.len());
    assert_eq!(two.len(), props.len());
    assert!(one.iter().zip(&two).any(|(a, b)| a.interval() != b.interval()));
}

#[test]
fn verify_only_restricts_groups() {
    let dir = tempfile::tempdir().unwrap();
    let o = van(&["verify", "--out", &s(dir.path()), "--only", "kl"]);
    assert_eq!(o.status.code(), Some(0));
    let report = std::fs::read_to_string(dir.path().join("verify.csv")).unwrap();
    assert!(report.lines().skip(1).all(|l| l.starts_with("kl,")));
    assert!(report.lines().count() > 3);
}

#[test]
fn plotdata_with_checkpoint_writes_boundaries() {
    let root = tempfile::tempdir().unwrap();
    let data = root.path().join("data");
    assert!(gen(&data, &["--seed", "6"]).status.success());
    let out = root.path().join("t");
    assert!(van(&["train", "--data", &s(&data), "--out", &s(&out), "--variant", "van_p", "--iters", "20"]).status.success());
    let pd = root.path().join("pd");
    let o = van(&["plotdata", "--out", &s(&pd), "--data", &s(&data), "--checkpoint", &s(&out.join("model.ckpt"))]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let table = std::fs::read_to_string(pd.join("boundaries.csv")).unwrap();
    let test = Dataset::load(&data.join("test.vds")).unwrap();
    assert_eq!(table.lines().count(), test.proposals.len() + 1);
    assert!(table.lines().skip(1).all(|l| l.ends_with(",propagated")));
    assert!(pd.join("loss_surface.csv").exists());
}

//! Acceptance criteria, one line each. Runs as a plain binary so the report
//! is always printed; exits non-zero if any criterion fails.

use std::path::Path;
use std::process::{Command, ExitCode};
use std::time::Instant;

use van::cli::RunConfig;
use van::dataset::{gen_split, SplitKind};
use van::eval::{evaluate, MapReport, DEFAULT_TIOUS};
use van::synth::SynthConfig;
use van::train::{train, TrainConfig};
use van::verify::{run_suite, Check};
use van::{Network, Variant};

struct Outcome {
    pass: bool,
    detail: String,
}

fn from_checks(checks: &[Check]) -> Outcome {
    let pass = checks.iter().all(|c| c.pass);
    let detail = checks
        .iter()
        .filter(|c| c.asserted)
        .map(|c| format!("{}={:.3e}", c.name, c.measured))
        .collect::<Vec<_>>()
        .join(" ");
    Outcome { pass, detail }
}

fn suite_group(group: &str) -> Outcome {
    match run_suite(Some(group)) {
        Ok(checks) => from_checks(&checks),
        Err(e) => Outcome {
            pass: false,
            detail: format!("error: {e}"),
        },
    }
}

fn train_and_eval(cfg: &RunConfig, variant: Variant) -> van::Result<MapReport> {
    let train_split = gen_split(&cfg.synth, SplitKind::Train, cfg.settings.train_sequences)?;
    let test_split = gen_split(&cfg.synth, SplitKind::Test, cfg.settings.test_sequences)?;
    let examples = train_split.examples(cfg.settings.k)?;
    let mut net_cfg = cfg.network_config();
    net_cfg.variant = variant;
    let mut net = Network::build(net_cfg, cfg.train.seed)?;
    train(&mut net, &examples, &cfg.train)?;
    evaluate(&net, &test_split, cfg.train.cascade, cfg.settings.nms_threshold, &DEFAULT_TIOUS)
}

fn sanity_ceiling() -> van::Result<Outcome> {
    let cfg = RunConfig {
        synth: SynthConfig {
            noise_act: 0.0,
            noise_bg: 0.0,
            jitter: 0.0,
            classes: 5,
            ..SynthConfig::default()
        },
        train: TrainConfig {
            iters: 5000,
            ..TrainConfig::default()
        },
        ..RunConfig::default()
    };
    assert_eq!((cfg.settings.train_sequences, cfg.settings.test_sequences), (200, 100));
    let report = train_and_eval(&cfg, Variant::Baseline)?;
    let at_05 = report.map[2];
    Ok(Outcome {
        pass: at_05 >= 0.95,
        detail: format!("baseline mAP@0.5={at_05:.4} after 5000 iterations"),
    })
}

fn median(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(f64::total_cmp);
    let n = xs.len();
    if n % 2 == 1 {
        xs[n / 2]
    } else {
        0.5 * (xs[n / 2 - 1] + xs[n / 2])
    }
}

fn directional() -> van::Result<Outcome> {
    let variants = [Variant::Baseline, Variant::VanO, Variant::VanP];
    let mut reports: Vec<Vec<MapReport>> = vec![Vec::new(); variants.len()];
    for seed in 0..5u64 {
        let mut cfg = RunConfig::default();
        cfg.synth.seed = seed;
        cfg.train.seed = seed;
        for (i, v) in variants.iter().enumerate() {
            let r = train_and_eval(&cfg, *v)?;
            println!("    seed {seed} {v:<8} avg={:.4} per-tIoU={:?}", r.average, r.map.iter().map(|m| format!("{m:.4}")).collect::<Vec<_>>());
            reports[i].push(r);
        }
    }
    let med_avg: Vec<f64> = reports.iter().map(|rs| median(rs.iter().map(|r| r.average).collect())).collect();
    let med_at = |i: usize, t: usize| median(reports[i].iter().map(|r| r.map[t]).collect());
    let gaps: Vec<String> = DEFAULT_TIOUS
        .iter()
        .enumerate()
        .map(|(t, thr)| format!("{thr:.1}:{:+.4}", med_at(2, t) - med_at(0, t)))
        .collect();
    println!("    van_p - baseline median gap per tIoU (reported): {}", gaps.join(" "));
    Ok(Outcome {
        pass: med_avg[2] >= med_avg[0] && med_avg[1] >= med_avg[0],
        detail: format!(
            "median avg-mAP baseline={:.4} van_o={:.4} van_p={:.4}",
            med_avg[0], med_avg[1], med_avg[2]
        ),
    })
}

fn van(args: &[&str]) -> bool {
    Command::new(env!("CARGO_BIN_EXE_van"))
        .args(args)
        .output()
        .map(|o| o.status.success())
        .unwrap_or(false)
}

fn pipeline(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let p = |s: &str| dir.join(s).to_string_lossy().into_owned();
    let small = ["--seed", "5", "--set", "train_sequences=20", "--set", "test_sequences=10"];
    let ok = van(&[&["gen", "--out", &p("data")], &small[..]].concat())
        && van(&[&["train", "--data", &p("data"), "--out", &p("train"), "--variant", "van_p", "--iters", "300"], &small[..]].concat())
        && van(&[&["eval", "--data", &p("data"), "--checkpoint", &p("train/model.ckpt"), "--out", &p("eval")], &small[..]].concat());
    assert!(ok, "pipeline command failed");
    ["data/summary.csv", "train/loss.csv", "eval/map.csv", "eval/map_long.csv", "eval/detections.csv", "data/train.vds", "train/model.ckpt"]
        .iter()
        .map(|f| (f.to_string(), std::fs::read(dir.join(f)).expect("output exists")))
        .collect()
}

fn determinism() -> Outcome {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let ra = pipeline(a.path());
    let rb = pipeline(b.path());
    let differing: Vec<&str> = ra.iter().zip(&rb).filter(|(x, y)| x.1 != y.1).map(|(x, _)| x.0.as_str()).collect();
    Outcome {
        pass: differing.is_empty(),
        detail: if differing.is_empty() {
            format!("{} output files byte-identical", ra.len())
        } else {
            format!("differing: {differing:?}")
        },
    }
}

fn loss_surface() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_string_lossy().into_owned();
    assert!(van(&["plotdata", "--out", &out]), "plotdata failed");
    let text = std::fs::read_to_string(dir.path().join("loss_surface.csv")).unwrap();
    let rows: Vec<(f64, f64, f64)> = text
        .lines()
        .filter(|l| !l.starts_with('#') && !l.starts_with("mu_p"))
        .map(|l| {
            let f: Vec<f64> = l.split(',').map(|x| x.parse().unwrap()).collect();
            (f[0], f[1], f[2])
        })
        .collect();
    let sigma_t2 = RunConfig::default().synth.sigma_t2;
    let sigma_t = sigma_t2.sqrt();
    let mut variances: Vec<f64> = rows.iter().map(|r| r.1).collect();
    variances.dedup();
    let slice = |v: f64| -> Vec<(f64, f64)> { rows.iter().filter(|r| r.1 == v).map(|r| (r.0, r.2)).collect() };

    // (a) symmetry about μ_t = 0
    let symmetric = variances.iter().all(|&v| {
        let s = slice(v);
        s.iter().zip(s.iter().rev()).all(|(a, b)| a.0 == -b.0 && a.1 == b.1)
    });
    // (b) strictly increasing in |μ_t − μ_p| at fixed σ_p ≥ σ_t
    let monotone = variances.iter().filter(|&&v| v >= sigma_t2).all(|&v| {
        let mut s: Vec<(f64, f64)> = slice(v).into_iter().filter(|p| p.0 >= 0.0).collect();
        s.sort_by(|a, b| a.0.total_cmp(&b.0));
        s.windows(2).all(|w| w[1].1 > w[0].1)
    });
    // (c) a wider prediction lowers the loss once the error is large
    let at_target = slice(sigma_t2);
    let far: Vec<&(f64, f64)> = at_target.iter().filter(|p| p.0.abs() >= 10.0 * sigma_t - 1e-12).collect();
    let attenuates = !far.is_empty()
        && far.iter().all(|&&(mu, l1)| {
            rows.iter().any(|r| r.0 == mu && r.1 > sigma_t2 && r.2 < l1)
        });
    Outcome {
        pass: symmetric && monotone && attenuates && !at_target.is_empty(),
        detail: format!(
            "symmetric={symmetric} monotone={monotone} attenuation={attenuates} ({} rows, {} large-error points)",
            rows.len(),
            far.len()
        ),
    }
}

fn main() -> ExitCode {
    let criteria: Vec<(&str, Box<dyn Fn() -> Outcome>)> = vec![
        ("1 moment propagation matches Monte Carlo within 4 SE", Box::new(|| suite_group("moments"))),
        ("2 ReLU rule within 1% for mu >= 3 sigma", Box::new(|| suite_group("relu"))),
        ("3 KL identities", Box::new(|| suite_group("kl"))),
        ("4 gradients match finite differences", Box::new(|| suite_group("grad"))),
        ("5 parameter counts", Box::new(|| suite_group("params"))),
        ("6 van_p test mode bitwise equals baseline", Box::new(|| suite_group("mean_path"))),
        ("7 sanity ceiling", Box::new(|| sanity_ceiling().unwrap_or_else(|e| Outcome { pass: false, detail: format!("error: {e}") }))),
        ("8 directional variance-aware gains", Box::new(|| directional().unwrap_or_else(|e| Outcome { pass: false, detail: format!("error: {e}") }))),
        ("9 pipeline determinism", Box::new(determinism)),
        ("10 loss-surface grid", Box::new(loss_surface)),
    ];
    let filter: Option<String> = std::env::args().skip(1).find(|a| !a.starts_with('-'));
    let mut failed = 0;
    for (name, run) in &criteria {
        let number = name.split(' ').next().unwrap();
        if filter.as_deref().is_some_and(|f| f != number) {
            continue;
        }
        let start = Instant::now();
        let o = run();
        let status = if o.pass { "PASS" } else { "FAIL" };
        println!("{status} criterion {name} [{:.1}s] {}", start.elapsed().as_secs_f64(), o.detail);
        failed += usize::from(!o.pass);
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failed} criteria failed");
        ExitCode::FAILURE
    }
}

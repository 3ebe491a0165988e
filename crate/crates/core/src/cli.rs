//! `van` command line: `gen | train | eval | verify | plotdata`.
//!
//! Every command resolves one flat configuration from, in increasing
//! precedence: built-in defaults, the headers of any dataset or checkpoint it
//! reads, `--config FILE`, and finally flags (`--set key=value` last). The
//! result is written to `<out>/config.txt`; passing that file back with
//! `--config` reproduces the run.
//!
//! Exit codes: 0 success, 1 usage, 2 runtime failure, 3 verification failure.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::checkpoint::Checkpoint;
use crate::config::{apply_pairs, parse_pairs, read_pairs, KeyValue};
use crate::dataset::{gen_split, Dataset, SplitKind};
use crate::error::{Error, Result};
use crate::eval::{detect, ground_truths, map_at_tious, DEFAULT_NMS_THRESHOLD, DEFAULT_TIOUS};
use crate::losses::kl_regression_loss;
use crate::moments::GaussianScalar;
use crate::network::{Mode, Network, NetworkConfig, Variant};
use crate::synth::SynthConfig;
use crate::train::{train, TrainConfig};
use crate::verify::{run_suite, write_report};

pub const TRAIN_FILE: &str = "train.vds";
pub const TEST_FILE: &str = "test.vds";
pub const CHECKPOINT_FILE: &str = "model.ckpt";
pub const CONFIG_FILE: &str = "config.txt";

/// Settings that belong to no library config struct.
#[derive(Debug, Clone, PartialEq)]
pub struct RunSettings {
    pub variant: Variant,
    pub k: usize,
    pub hidden: usize,
    pub train_sequences: usize,
    pub test_sequences: usize,
    pub nms_threshold: f64,
}

impl Default for RunSettings {
    fn default() -> Self {
        Self {
            variant: Variant::Baseline,
            k: 3,
            hidden: 128,
            train_sequences: 200,
            test_sequences: 100,
            nms_threshold: DEFAULT_NMS_THRESHOLD,
        }
    }
}

crate::config::key_value!(RunSettings {
    variant,
    k,
    hidden,
    train_sequences,
    test_sequences,
    nms_threshold,
});

/// Fully resolved configuration of one invocation.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct RunConfig {
    pub synth: SynthConfig,
    pub settings: RunSettings,
    pub train: TrainConfig,
}

impl RunConfig {
    fn apply(&mut self, pairs: &[(String, String)]) -> Result<()> {
        apply_pairs(pairs, &mut [&mut self.synth, &mut self.settings, &mut self.train])?;
        self.train.seed = self.synth.seed;
        Ok(())
    }

    /// `key=value` lines for every setting, in a fixed order.
    pub fn echo(&self) -> String {
        let sections: [&dyn KeyValue; 3] = [&self.synth, &self.settings, &self.train];
        sections
            .iter()
            .flat_map(|s| s.echo())
            .map(|(k, v)| format!("{k}={v}\n"))
            .collect()
    }

    pub fn network_config(&self) -> NetworkConfig {
        NetworkConfig {
            variant: self.settings.variant,
            dim: self.synth.dim,
            k: self.settings.k,
            hidden: self.settings.hidden,
            classes: self.synth.classes,
            sigma_t2: self.synth.sigma_t2,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "van", version, about = "Variance-aware interval localization on synthetic sequences")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate train and test splits.
    Gen(Common),
    /// Train one network variant on `<data>/train.vds`.
    Train {
        #[command(flatten)]
        common: Common,
        /// Directory holding the generated splits.
        #[arg(long)]
        data: PathBuf,
    },
    /// Evaluate a checkpoint on `<data>/test.vds`.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Run the oracle suite.
    Verify {
        #[command(flatten)]
        common: Common,
        /// Restrict to one check group.
        #[arg(long)]
        only: Option<String>,
    },
    /// Emit the loss-surface grid and, with a checkpoint, per-proposal boundaries.
    Plotdata {
        #[command(flatten)]
        common: Common,
        #[arg(long, requires = "checkpoint")]
        data: Option<PathBuf>,
        #[arg(long, requires = "data")]
        checkpoint: Option<PathBuf>,
    },
}

#[derive(Debug, Args)]
struct Common {
    /// Flat key=value config file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory, created if missing.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    variant: Option<Variant>,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    cascade: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    iters: Option<usize>,
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long = "lambda-reg")]
    lambda_reg: Option<f64>,
    #[arg(long = "sigma-t2")]
    sigma_t2: Option<f64>,
    /// Any other config key, repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

impl Common {
    fn flag_pairs(&self) -> Result<Vec<(String, String)>> {
        let mut out = Vec::new();
        let mut push = |k: &str, v: Option<String>| {
            if let Some(v) = v {
                out.push((k.to_string(), v));
            }
        };
        push("seed", self.seed.map(|v| v.to_string()));
        push("variant", self.variant.map(|v| v.to_string()));
        push("k", self.k.map(|v| v.to_string()));
        push("cascade", self.cascade.map(|v| v.to_string()));
        push("lr", self.lr.map(|v| v.to_string()));
        push("iters", self.iters.map(|v| v.to_string()));
        push("batch", self.batch.map(|v| v.to_string()));
        push("lambda_reg", self.lambda_reg.map(|v| v.to_string()));
        push("sigma_t2", self.sigma_t2.map(|v| v.to_string()));
        for s in &self.set {
            out.extend(parse_pairs(s)?);
        }
        Ok(out)
    }

    /// Resolves the run configuration on top of `inherited` pairs, creates
    /// the output directory and echoes the result into it.
    fn resolve(&self, inherited: &[(String, String)]) -> Result<RunConfig> {
        let mut cfg = RunConfig::default();
        cfg.apply(inherited)?;
        if let Some(path) = &self.config {
            cfg.apply(&read_pairs(path)?)?;
        }
        cfg.apply(&self.flag_pairs()?)?;
        cfg.synth.validate()?;
        cfg.train.validate()?;
        fs::create_dir_all(&self.out)?;
        let echo = cfg.echo();
        fs::write(self.out.join(CONFIG_FILE), &echo)?;
        print!("{echo}");
        Ok(cfg)
    }
}

enum Outcome {
    Done,
    VerificationFailed,
}

/// Parses `args` (program name first) and runs the command.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli.command) {
        Ok(Outcome::Done) => 0,
        Ok(Outcome::VerificationFailed) => 3,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Usage(_) => 1,
                _ => 2,
            }
        }
    }
}

pub fn main() -> i32 {
    run(std::env::args_os())
}

fn dispatch(cmd: Command) -> Result<Outcome> {
    match cmd {
        Command::Gen(common) => cmd_gen(&common),
        Command::Train { common, data } => cmd_train(&common, &data),
        Command::Eval { common, data, checkpoint } => cmd_eval(&common, &data, &checkpoint),
        Command::Verify { common, only } => cmd_verify(&common, only.as_deref()),
        Command::Plotdata { common, data, checkpoint } => cmd_plotdata(&common, data.as_deref(), checkpoint.as_deref()),
    }
    .map(|verified| if verified { Outcome::Done } else { Outcome::VerificationFailed })
}

/// Dataset header minus the split tag, ready to inherit.
fn dataset_pairs(data: &Dataset) -> Result<Vec<(String, String)>> {
    Ok(data.header_pairs()?.into_iter().filter(|(k, _)| k != "split").collect())
}

fn check_matches_dataset(cfg: &RunConfig, data: &Dataset) -> Result<()> {
    for (k, v) in data.header_pairs()? {
        if k == "dim" || k == "classes" {
            let ours = cfg.synth.echo().into_iter().find(|(n, _)| *n == k).map(|(_, v)| v);
            if ours.as_deref() != Some(v.as_str()) {
                return Err(Error::usage(format!("config sets {k}={} but the dataset has {k}={v}", ours.unwrap_or_default())));
            }
        }
    }
    Ok(())
}

fn load_dataset(dir: &Path, file: &str) -> Result<Dataset> {
    let path = dir.join(file);
    Dataset::load(&path).map_err(|e| match e {
        Error::Io(io) => Error::Io(std::io::Error::new(io.kind(), format!("{}: {io}", path.display()))),
        other => other,
    })
}

fn cmd_gen(common: &Common) -> Result<bool> {
    let cfg = common.resolve(&[])?;
    let mut summary = String::from("split,label,proposals\n");
    for (kind, count, file) in [
        (SplitKind::Train, cfg.settings.train_sequences, TRAIN_FILE),
        (SplitKind::Test, cfg.settings.test_sequences, TEST_FILE),
    ] {
        let data = gen_split(&cfg.synth, kind, count)?;
        // every proposal must pool with the configured number of parts
        data.examples(cfg.settings.k)?;
        data.save(&common.out.join(file))?;
        let hist = data.label_histogram(cfg.synth.classes);
        println!(
            "{}: {} sequences, {} proposals, labels {:?}",
            kind.as_str(),
            data.sequences.len(),
            data.proposals.len(),
            hist
        );
        for (label, n) in hist.iter().enumerate() {
            summary.push_str(&format!("{},{label},{n}\n", kind.as_str()));
        }
    }
    fs::write(common.out.join("summary.csv"), summary)?;
    Ok(true)
}

fn cmd_train(common: &Common, data_dir: &Path) -> Result<bool> {
    let data = load_dataset(data_dir, TRAIN_FILE)?;
    let cfg = common.resolve(&dataset_pairs(&data)?)?;
    check_matches_dataset(&cfg, &data)?;
    let examples = data.examples(cfg.settings.k)?;
    let mut net = Network::build(cfg.network_config(), cfg.train.seed)?;
    println!("variant {} with {} parameters", cfg.settings.variant, net.param_count());
    let report = train(&mut net, &examples, &cfg.train)?;

    let mut csv = String::from("iteration,classification,regression,total\n");
    for (i, l) in report.curve.iter().enumerate() {
        csv.push_str(&format!("{i},{},{},{}\n", l.classification, l.regression, l.total));
    }
    fs::write(common.out.join("loss.csv"), csv)?;
    Checkpoint {
        network: net,
        seed: cfg.train.seed,
    }
    .save(&common.out.join(CHECKPOINT_FILE))?;
    if let Some(last) = report.curve.last() {
        println!("final batch loss {:.6}", last.total);
    }
    Ok(true)
}

fn checkpoint_pairs(ckpt: &Checkpoint) -> Vec<(String, String)> {
    let c = &ckpt.network.config;
    [
        ("variant", c.variant.to_string()),
        ("k", c.k.to_string()),
        ("hidden", c.hidden.to_string()),
        ("seed", ckpt.seed.to_string()),
    ]
    .into_iter()
    .map(|(k, v)| (k.to_string(), v))
    .collect()
}

fn check_matches_checkpoint(cfg: &RunConfig, ckpt: &Checkpoint) -> Result<()> {
    let c = &ckpt.network.config;
    let ours = cfg.network_config();
    if (ours.variant, ours.k, ours.hidden, ours.dim, ours.classes) != (c.variant, c.k, c.hidden, c.dim, c.classes) {
        return Err(Error::usage(format!(
            "config describes a {} network (k={}, hidden={}, dim={}, classes={}) but the checkpoint holds {} (k={}, hidden={}, dim={}, classes={})",
            ours.variant, ours.k, ours.hidden, ours.dim, ours.classes, c.variant, c.k, c.hidden, c.dim, c.classes
        )));
    }
    Ok(())
}

fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    Checkpoint::load(path).map_err(|e| match e {
        Error::Io(io) => Error::Io(std::io::Error::new(io.kind(), format!("{}: {io}", path.display()))),
        other => other,
    })
}

fn cmd_eval(common: &Common, data_dir: &Path, ckpt_path: &Path) -> Result<bool> {
    let ckpt = load_checkpoint(ckpt_path)?;
    let data = load_dataset(data_dir, TEST_FILE)?;
    let mut inherited = dataset_pairs(&data)?;
    inherited.extend(checkpoint_pairs(&ckpt));
    let cfg = common.resolve(&inherited)?;
    check_matches_dataset(&cfg, &data)?;
    check_matches_checkpoint(&cfg, &ckpt)?;

    let net = &ckpt.network;
    let dets = detect(net, &data, cfg.train.cascade, cfg.settings.nms_threshold)?;
    let report = map_at_tious(&dets, &ground_truths(&data), &DEFAULT_TIOUS);

    let mut wide = String::from("variant,k,seed");
    for t in &report.thresholds {
        wide.push_str(&format!(",{t:.1}"));
    }
    wide.push_str(",avg\n");
    wide.push_str(&format!("{},{},{}", net.config.variant, net.config.k, ckpt.seed));
    for m in &report.map {
        wide.push_str(&format!(",{m:.6}"));
    }
    wide.push_str(&format!(",{:.6}\n", report.average));
    fs::write(common.out.join("map.csv"), &wide)?;
    print!("{wide}");

    let mut long = String::from("variant,k,seed,tiou,map\n");
    for (t, m) in report.thresholds.iter().zip(&report.map) {
        long.push_str(&format!("{},{},{},{t:.1},{m:.6}\n", net.config.variant, net.config.k, ckpt.seed));
    }
    fs::write(common.out.join("map_long.csv"), long)?;

    let mut det_csv = String::from("seq_id,class,score,start,end,start_var,end_var\n");
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    for d in &dets {
        det_csv.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            d.seq_id,
            d.class,
            d.score,
            d.start,
            d.end,
            opt(d.start_var),
            opt(d.end_var)
        ));
    }
    fs::write(common.out.join("detections.csv"), det_csv)?;
    Ok(true)
}

fn cmd_verify(common: &Common, only: Option<&str>) -> Result<bool> {
    common.resolve(&[])?;
    let checks = run_suite(only)?;
    let mut buf = Vec::new();
    write_report(&checks, &mut buf)?;
    fs::write(common.out.join("verify.csv"), &buf)?;
    std::io::stdout().write_all(&buf)?;
    let failed = checks.iter().filter(|c| !c.pass).count();
    println!("{} checks, {failed} failed", checks.len());
    Ok(failed == 0)
}

/// Regression loss for a target at 0 with variance `sigma_t2` over a grid of
/// predicted means (symmetric about 0) and predicted variances (a log grid
/// that contains `sigma_t2` itself).
pub fn loss_surface(sigma_t2: f64) -> Result<Vec<(f64, f64, f64)>> {
    const MU_STEPS: usize = 81;
    const MU_HALF_WIDTH: f64 = 20.0;
    let sigma_t = sigma_t2.sqrt();
    let target = GaussianScalar::new(0.0, sigma_t2);
    let mut rows = Vec::new();
    for e in 0..=36 {
        // σ_p² from σ_t²·10^-0.6 up to σ_t²·10^3; e = 6 is σ_t² exactly
        let sigma_p2 = sigma_t2 * 10f64.powf((e as f64 - 6.0) / 10.0);
        for i in 0..MU_STEPS {
            // signed integer numerator: mirrored points are exact negations
            let offset = 2 * i as i64 - (MU_STEPS as i64 - 1);
            let mu_p = MU_HALF_WIDTH * sigma_t * offset as f64 / (MU_STEPS - 1) as f64;
            let loss = kl_regression_loss(target, GaussianScalar::new(mu_p, sigma_p2))?;
            rows.push((mu_p, sigma_p2, loss));
        }
    }
    Ok(rows)
}

fn cmd_plotdata(common: &Common, data_dir: Option<&Path>, ckpt_path: Option<&Path>) -> Result<bool> {
    let loaded = match (data_dir, ckpt_path) {
        (Some(d), Some(c)) => Some((load_dataset(d, TEST_FILE)?, load_checkpoint(c)?)),
        _ => None,
    };
    let inherited = match &loaded {
        Some((data, ckpt)) => {
            let mut p = dataset_pairs(data)?;
            p.extend(checkpoint_pairs(ckpt));
            p
        }
        None => Vec::new(),
    };
    let cfg = common.resolve(&inherited)?;

    let mut csv = format!("# mu_t=0 sigma_t2={}\nmu_p,sigma_p2,loss\n", cfg.synth.sigma_t2);
    for (m, v, l) in loss_surface(cfg.synth.sigma_t2)? {
        csv.push_str(&format!("{m},{v},{l}\n"));
    }
    fs::write(common.out.join("loss_surface.csv"), csv)?;

    if let Some((data, ckpt)) = &loaded {
        check_matches_dataset(&cfg, data)?;
        check_matches_checkpoint(&cfg, ckpt)?;
        let net = &ckpt.network;
        let source = match net.config.variant {
            Variant::VanO => "predicted",
            Variant::VanP => "propagated",
            _ => "fixed",
        };
        let examples = data.examples(net.config.k)?;
        let mut csv = String::from(
            "seq_id,start,end,label,class,start_offset,start_var,end_offset,end_var,variance_source\n",
        );
        for (p, ex) in data.proposals.iter().zip(&examples) {
            // train mode so the propagated network reports its variances
            let (det, _) = net.forward(&ex.feature, Mode::Train)?;
            let class = (1..det.class_scores.len())
                .max_by(|&x, &y| det.class_scores[x].total_cmp(&det.class_scores[y]).then(y.cmp(&x)))
                .expect("at least one action class");
            let b = det.boundaries[class];
            csv.push_str(&format!(
                "{},{},{},{},{class},{},{},{},{},{source}\n",
                p.seq_id, p.start, p.end, p.label, b.start.mu, b.start.sigma2, b.end.mu, b.end.sigma2
            ));
        }
        fs::write(common.out.join("boundaries.csv"), csv)?;
    }
    Ok(true)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn echo_reloads_to_the_same_config() {
        let mut cfg = RunConfig::default();
        cfg.apply(&parse_pairs("seed=9\nvariant=van_p\nlr=0.0125\njitter=0.3").unwrap()).unwrap();
        let mut back = RunConfig::default();
        back.apply(&parse_pairs(&cfg.echo()).unwrap()).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.train.seed, 9);
    }

    #[test]
    fn unknown_key_and_flag_are_usage_errors() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().to_str().unwrap();
        assert_eq!(run(["van", "verify", "--out", out, "--set", "bogus=1"]), 1);
        assert_eq!(run(["van", "verify", "--out", out, "--bogus"]), 1);
        assert_eq!(run(["van", "verify", "--out", out, "--only", "nope"]), 1);
    }

    #[test]
    fn loss_surface_properties() {
        let s2 = 0.01;
        let rows = loss_surface(s2).unwrap();
        let at_target: Vec<_> = rows.iter().filter(|r| r.1 == s2).collect();
        assert_eq!(at_target.len(), 81);
        for r in at_target {
            assert!((r.2 - r.0.abs() / (2.0 * s2).sqrt()).abs() < 1e-12);
        }
        let row = |m: f64, v: f64| rows.iter().find(|r| r.0 == m && r.1 == v).map(|r| r.2);
        for r in &rows {
            assert_eq!(row(-r.0, r.1), Some(r.2));
        }
    }
}

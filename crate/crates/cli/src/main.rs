//! `shapegd` experiment harness.

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use shapegd::attack::{generate_phishing_trace, generate_waterhole_trace, write_infections};
use shapegd::detectors::write_verdicts;
use shapegd::experiment::cluster::run_cluster_experiment;
use shapegd::experiment::config::{ExperimentConfig, Scenario};
use shapegd::experiment::detection::{run_detection_sweep, DEFAULT_WATERHOLE_HORIZON};
use shapegd::experiment::fragility::run_count_fragility;
use shapegd::experiment::output;
use shapegd::experiment::pure_shape::{run_pure_shape, run_toy};
use shapegd::experiment::setup::build_setup;
use shapegd::neighborhood::write_trace;
use shapegd::roc::compute_roc;
use shapegd::seed::{self, stream};
use shapegd::shape::write_reference;

#[derive(Parser)]
#[command(
    name = "shapegd",
    version,
    about = "Shape-based global malware detection experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML experiment config.
    #[arg(long)]
    config: PathBuf,
    /// Output directory, created if missing.
    #[arg(long, default_value = ".")]
    out: PathBuf,
    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a phishing or waterhole trace and its infection sidecar.
    GenTrace(Common),
    /// Train the reference histogram and gamma threshold.
    TrainRef(Common),
    /// Score pure benign and malicious neighborhoods, or run the Gaussian toy.
    PureShape(Common),
    /// Time-to-detection sweep over ntw, partition size and infection level.
    DetectSweep(Common),
    /// Count-GD rates under neighborhood size errors.
    CountFragility(Common),
    /// Shape-GD versus centroid-distance AUC on early infections.
    ClusterAuc(Common),
    /// ROC curve and AUC of a labeled score file.
    Roc(Common),
}

fn create(dir: &Path, name: &str) -> Result<BufWriter<File>> {
    let path = dir.join(name);
    let f = File::create(&path).with_context(|| format!("cannot create {}", path.display()))?;
    Ok(BufWriter::new(f))
}

fn write_with<F>(dir: &Path, name: &str, f: F) -> Result<()>
where
    F: FnOnce(&mut BufWriter<File>) -> shapegd::Result<()>,
{
    let mut w = create(dir, name)?;
    f(&mut w).with_context(|| format!("writing {name}"))?;
    w.flush()?;
    Ok(())
}

fn load(common: &Common) -> Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::load(&common.config)
        .with_context(|| format!("loading config {}", common.config.display()))?;
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    fs::create_dir_all(&common.out)
        .with_context(|| format!("cannot create output directory {}", common.out.display()))?;
    Ok(cfg)
}

fn gen_trace(cfg: &ExperimentConfig, out: &Path) -> Result<String> {
    let trace_seed = seed::derive_path(cfg.seed, &[stream::TRACE, 0, 0]);
    let infection = cfg.detection.infection[0];
    let max_ntw = cfg.detection.ntw.iter().cloned().fold(0.0, f64::max);
    let (events, infections) = match cfg.scenario {
        Scenario::Phishing => {
            let scn = shapegd::attack::PhishingScenario {
                click_rate: infection,
                ..cfg.phishing.clone()
            };
            let t = generate_phishing_trace(
                &scn,
                cfg.detection.horizon.unwrap_or(max_ntw),
                trace_seed,
            )?;
            (t.events, t.infections)
        }
        Scenario::Waterhole => {
            let scn = shapegd::attack::WaterholeScenario {
                infection_probability: infection,
                ..cfg.waterhole.clone()
            };
            let horizon = cfg.detection.horizon.unwrap_or(DEFAULT_WATERHOLE_HORIZON);
            let t = generate_waterhole_trace(&scn, horizon, trace_seed)?;
            (t.events, t.infections)
        }
        other => bail!("gen-trace needs the phishing or waterhole scenario, got {other}"),
    };
    write_with(out, "trace.csv", |w| write_trace(w, &events))?;
    write_with(out, "infections.csv", |w| write_infections(w, &infections))?;
    Ok(format!(
        "{} events, {} infections written to {}",
        events.len(),
        infections.len(),
        out.display()
    ))
}

fn train_ref(cfg: &ExperimentConfig, out: &Path) -> Result<String> {
    let setup = build_setup(cfg, &[])?;
    let r = setup.primary();
    write_with(out, "reference.txt", |w| {
        write_reference(w, &r.reference, &r.gamma)
    })?;
    Ok(format!(
        "reference with {} bins from {} alerts, gamma {}, LD fp {:.4} tp {:.4}",
        r.bins,
        r.reference.alert_count(),
        r.gamma.gamma,
        setup.measured.fp_rate,
        setup.measured.tp_rate
    ))
}

fn pure_shape(cfg: &ExperimentConfig, out: &Path) -> Result<String> {
    if cfg.scenario == Scenario::ToyGaussian {
        let r = run_toy(&cfg.pure_shape, cfg.seed)?;
        write_with(out, "toy.csv", |w| output::write_toy(w, &r))?;
        return Ok(format!(
            "toy fp {:.4} tp {:.4}; 90 alerts: n=100 {}, n=1000 {}",
            r.measured.fp_rate, r.measured.tp_rate, r.decision_n100, r.decision_n1000
        ));
    }
    let setup = build_setup(cfg, &cfg.pure_shape.bins)?;
    let r = run_pure_shape(&setup, &cfg.pure_shape, cfg.seed)?;
    write_with(out, "scores.csv", |w| {
        output::write_pure_shape_scores(w, &r)
    })?;
    write_with(out, "summary.csv", |w| {
        output::write_pure_shape_summary(w, &r)
    })?;
    let parts: Vec<String> = r
        .outcomes
        .iter()
        .map(|o| {
            format!(
                "b={} fp {:.3} tp {:.3} gap {:.4}",
                o.bins,
                o.fp_rate,
                o.tp_rate,
                o.gap()
            )
        })
        .collect();
    Ok(parts.join("; "))
}

fn detect_sweep(cfg: &ExperimentConfig, out: &Path) -> Result<String> {
    let setup = build_setup(cfg, &[])?;
    let entries = run_detection_sweep(cfg, &setup)?;
    write_with(out, "runs.csv", |w| output::write_runs(w, &entries))?;
    write_with(out, "summary.csv", |w| {
        output::write_sweep_summary(w, &entries)
    })?;
    if cfg.detection.verdict_log {
        let verdicts: Vec<_> = entries
            .iter()
            .flat_map(|e| e.verdicts.iter().cloned())
            .collect();
        write_with(out, "verdicts.log", |w| write_verdicts(w, &verdicts))?;
    }
    let detected: usize = entries.iter().map(|e| e.summary.detected).sum();
    let total: usize = entries.iter().map(|e| e.summary.repetitions).sum();
    Ok(format!(
        "{} sweep points, {detected}/{total} runs detected",
        entries.len()
    ))
}

fn count_fragility(cfg: &ExperimentConfig, out: &Path) -> Result<String> {
    let setup = build_setup(cfg, &[])?;
    let r = run_count_fragility(&setup, &cfg.count_fragility, cfg.seed)?;
    write_with(out, "fragility.csv", |w| output::write_fragility(w, &r))?;
    Ok(format!(
        "{} error points; shape-gd fp {:.3} tp {:.3}",
        r.rows.len(),
        r.shape_fp,
        r.shape_tp
    ))
}

fn cluster_auc(cfg: &ExperimentConfig, out: &Path) -> Result<String> {
    let setup = build_setup(cfg, &[])?;
    let r = run_cluster_experiment(&setup, &cfg.cluster, &cfg.phishing, cfg.seed)?;
    write_with(out, "cluster_scores.csv", |w| {
        output::write_cluster_scores(w, &r)
    })?;
    write_with(out, "auc.csv", |w| output::write_cluster_auc(w, &r))?;
    let show = |a: Option<f64>| a.map_or("undefined".to_string(), |v| format!("{v:.3}"));
    Ok(format!(
        "{} pairs ({} skipped); auc shape-gd {} cluster-gd {}",
        r.pairs.len(),
        r.skipped,
        show(r.shape_auc),
        show(r.cluster_auc)
    ))
}

fn roc(cfg: &ExperimentConfig, out: &Path) -> Result<String> {
    let Some(input) = &cfg.roc.input else {
        bail!("roc needs roc.input in the config");
    };
    let positive = cfg.roc.positive.as_deref().unwrap_or("malicious");
    let f = File::open(input).with_context(|| format!("cannot open {}", input.display()))?;
    let (pos, neg) = output::read_labeled_scores(BufReader::new(f), positive)?;
    let curve = compute_roc(&pos, &neg)?;
    write_with(out, "roc.csv", |w| output::write_roc(w, &curve))?;
    write_with(out, "auc.csv", |w| {
        writeln!(w, "auc,positives,negatives")?;
        writeln!(w, "{},{},{}", curve.auc, pos.len(), neg.len())?;
        Ok(())
    })?;
    Ok(format!(
        "auc {:.4} over {} positive and {} negative scores",
        curve.auc,
        pos.len(),
        neg.len()
    ))
}

type Handler = fn(&ExperimentConfig, &Path) -> Result<String>;

fn run(cli: Cli) -> Result<String> {
    let (common, f): (&Common, Handler) = match &cli.command {
        Command::GenTrace(c) => (c, gen_trace),
        Command::TrainRef(c) => (c, train_ref),
        Command::PureShape(c) => (c, pure_shape),
        Command::DetectSweep(c) => (c, detect_sweep),
        Command::CountFragility(c) => (c, count_fragility),
        Command::ClusterAuc(c) => (c, cluster_auc),
        Command::Roc(c) => (c, roc),
    };
    let cfg = load(common)?;
    f(&cfg, &common.out)
}

fn main() {
    match run(Cli::parse()) {
        Ok(summary) => println!("{summary}"),
        Err(e) => {
            eprintln!("error: {e:#}");
            std::process::exit(1);
        }
    }
}

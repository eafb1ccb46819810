use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use botcensus_core::bundle::Bundle;
use botcensus_core::config::Config;
use botcensus_core::ensemble::classify_user;
use botcensus_core::eval::{
    individual_metrics, perturbation_eval, read_report, run_sweep, write_report, CachedScorer, EvalReport, ReportRow,
};
use botcensus_core::ingest::{read_edges, read_labels, read_user_store, write_edges, write_labels, write_users, EdgeList, UserStore};
use botcensus_core::pipeline::{calibrate, refit_weights, require_labels, train_bundle};
use botcensus_core::synth::{generate_community, SynthConfig};
use botcensus_core::{Error, Label, Result};
use clap::{Args, Parser, Subcommand};
use serde_json::json;

/// Seed offsets for communities the harness generates itself, so they never
/// coincide with a training community drawn from `synth.seed`.
const POOL_SEED_OFFSET: u64 = 50;
const BALANCED_SEED_OFFSET: u64 = 100;
const PERTURB_SEED_OFFSET: u64 = 200;

#[derive(Parser)]
#[command(name = "botcensus", version, about = "Estimate the share of bot accounts in a community")]
struct Cli {
    /// TOML config file; overrides environment settings.
    #[arg(long, global = true, env = "BOTCENSUS_CONFIG")]
    config: Option<PathBuf>,
    /// Config override `dotted.key=value`; wins over the config file.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Master seed; also seeds synthetic generation.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct DataArgs {
    /// Dataset directory holding users.jsonl, edges.csv and optionally labels.csv.
    #[arg(long, env = "BOTCENSUS_DATA")]
    data: PathBuf,
}

#[derive(Args)]
struct ReportOut {
    /// CSV report path.
    #[arg(long)]
    out: PathBuf,
    /// Optional SVG chart of estimated against true fractions.
    #[arg(long)]
    svg: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Write a labelled synthetic community to a dataset directory.
    SynthGenerate {
        #[arg(long)]
        out: PathBuf,
    },
    /// Train, calibrate and weight a bundle on a labelled dataset.
    Train {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long, env = "BOTCENSUS_BUNDLE")]
        bundle: PathBuf,
    },
    /// Refit every sub-model temperature on a labelled dataset.
    Calibrate {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long, env = "BOTCENSUS_BUNDLE")]
        bundle: PathBuf,
    },
    /// Refit the ensemble weights on a labelled dataset.
    FitWeights {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long, env = "BOTCENSUS_BUNDLE")]
        bundle: PathBuf,
    },
    /// Estimate the bot fraction of a dataset.
    Estimate {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long, env = "BOTCENSUS_BUNDLE")]
        bundle: PathBuf,
    },
    /// Estimate several generated communities with an even class split.
    EvalBalanced {
        #[arg(long, env = "BOTCENSUS_BUNDLE")]
        bundle: PathBuf,
        #[command(flatten)]
        report: ReportOut,
    },
    /// Resample communities across bot fractions and estimate each.
    EvalSweep {
        #[arg(long, env = "BOTCENSUS_BUNDLE")]
        bundle: PathBuf,
        /// Labelled pool to resample from; generated when omitted.
        #[arg(long)]
        pool: Option<PathBuf>,
        /// Force every temperature to 1 while keeping the weights.
        #[arg(long)]
        uncalibrated: bool,
        #[command(flatten)]
        report: ReportOut,
    },
    /// Compare ensemble and verified-only baseline under verified-flag rewrites.
    PerturbEval {
        #[arg(long, env = "BOTCENSUS_BUNDLE")]
        bundle: PathBuf,
        /// Labelled community; a generated even split when omitted.
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Re-emit a CSV report, optionally with a chart, and print its summary.
    Report {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        svg: Option<PathBuf>,
    },
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) | Error::BadFraction(_) | Error::BadLambda(_) | Error::BadTemperature(_) => 2,
        Error::InfeasibleTarget(_) => 4,
        _ => 3,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn load_config(cli: &Cli) -> Result<Config> {
    let mut overrides = Vec::new();
    if let Some(seed) = cli.seed {
        overrides.push(format!("seed={seed}"));
        overrides.push(format!("synth.seed={seed}"));
    }
    overrides.extend(cli.set.iter().cloned());
    Config::load(cli.config.as_deref(), std::env::vars(), &overrides)
}

struct Dataset {
    store: UserStore,
    edges: EdgeList,
    labels: BTreeMap<String, Label>,
}

/// Reads a dataset directory. Labels come from labels.csv when present,
/// otherwise from the records themselves.
fn read_dataset(dir: &Path) -> Result<Dataset> {
    let mut store = read_user_store(&dir.join("users.jsonl"))?;
    let edges_path = dir.join("edges.csv");
    let edges = if edges_path.exists() {
        read_edges(&edges_path)?.restrict_to(&store)
    } else {
        EdgeList::new(Vec::new())?
    };
    let labels_path = dir.join("labels.csv");
    if labels_path.exists() {
        let labels = read_labels(&labels_path)?;
        store.apply_labels(&labels)?;
    }
    let labels = store.labeled().map(|(u, l)| (u.id.clone(), l)).collect();
    Ok(Dataset { store, edges, labels })
}

fn write_dataset(dir: &Path, store: &UserStore, edges: &EdgeList, labels: &BTreeMap<String, Label>) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_users(&dir.join("users.jsonl"), store.users())?;
    write_edges(&dir.join("edges.csv"), edges)?;
    write_labels(&dir.join("labels.csv"), labels)
}

fn generated(cfg: &Config, n_users: usize, bot_fraction: f64, offset: u64) -> Result<Dataset> {
    let synth = SynthConfig {
        n_users,
        bot_fraction,
        seed: cfg.synth.seed.wrapping_add(offset),
        ..cfg.synth.clone()
    };
    let c = generate_community(&synth)?;
    let mut store = c.store;
    store.apply_labels(&c.labels)?;
    Ok(Dataset {
        store,
        edges: c.edges,
        labels: c.labels,
    })
}

fn print_json(v: &serde_json::Value) {
    println!("{}", serde_json::to_string_pretty(v).expect("json value serialises"));
}

fn summary(report: &EvalReport) -> serde_json::Value {
    json!({
        "rows": report.rows.len(),
        "infeasible": report.infeasible(),
        "mae": report.mae(),
        "max_error": report.max_error(),
        "individual": report.individual,
    })
}

fn run(cli: Cli) -> Result<u8> {
    let cfg = load_config(&cli)?;
    match &cli.command {
        Command::SynthGenerate { out } => {
            let c = generate_community(&cfg.synth)?;
            write_dataset(out, &c.store, &c.edges, &c.labels)?;
            let bots = c.labels.values().filter(|l| l.is_bot()).count();
            print_json(&json!({ "users": c.store.len(), "bots": bots, "edges": c.edges.len() }));
        }
        Command::Train { data, bundle } => {
            let d = read_dataset(&data.data)?;
            let (b, report) = train_bundle(&d.store, &d.edges, &cfg)?;
            b.save(bundle)?;
            print_json(&json!({
                "n_train": report.n_train,
                "n_val": report.n_val,
                "temperatures": report.calibration.temperatures,
                "weights": b.manifest.weights,
                "student_agreement": report.student_agreement,
            }));
        }
        Command::Calibrate { data, bundle } => {
            let d = read_dataset(&data.data)?;
            let mut b = Bundle::load(bundle)?;
            let y = require_labels(&d.store)?;
            let scores = b.score_store(&d.store)?;
            let rep = calibrate(&mut b, &scores, &y, cfg.calibration.ece_bins)?;
            b.save(bundle)?;
            print_json(&json!({
                "temperatures": rep.temperatures,
                "ece_before": rep.ece_before,
                "ece_after": rep.ece_after,
            }));
        }
        Command::FitWeights { data, bundle } => {
            let d = read_dataset(&data.data)?;
            let mut b = Bundle::load(bundle)?;
            let y = require_labels(&d.store)?;
            let scores = b.score_store(&d.store)?;
            let history = refit_weights(&mut b, &scores, &y, &cfg)?;
            b.save(bundle)?;
            print_json(&json!({ "weights": b.manifest.weights, "nll_history": history }));
        }
        Command::Estimate { data, bundle } => {
            let d = read_dataset(&data.data)?;
            let b = Bundle::load(bundle)?;
            let scores = b.score_store(&d.store)?;
            let est = CachedScorer::new(&b, &scores).estimate_ids(d.store.ids())?;
            print_json(&serde_json::to_value(&est)?);
        }
        Command::EvalBalanced { bundle, report } => {
            let b = Bundle::load(bundle)?;
            let temps = b.temperatures();
            let mut rows = Vec::new();
            let (mut preds, mut truth) = (Vec::new(), Vec::new());
            for i in 0..cfg.eval.balanced_communities {
                let offset = BALANCED_SEED_OFFSET + i as u64;
                let d = generated(&cfg, cfg.eval.balanced_users, 0.5, offset)?;
                let scores = b.score_store(&d.store)?;
                let est = CachedScorer::new(&b, &scores).estimate_ids(d.store.ids())?;
                for id in d.store.ids() {
                    preds.push(classify_user(&scores.calibrated(id, &temps)?, &b.manifest.weights)?);
                    truth.push(d.labels[id]);
                }
                let bots = d.labels.values().filter(|l| l.is_bot()).count();
                let true_fraction = bots as f64 / d.labels.len() as f64;
                let seed = cfg.synth.seed.wrapping_add(offset);
                rows.push(ReportRow::estimated(format!("balanced-{i}"), 0.5, seed, true_fraction, &est));
            }
            let rep = EvalReport {
                rows,
                individual: Some(individual_metrics(&preds, &truth)?),
            };
            write_report(&rep, &report.out, report.svg.as_deref())?;
            print_json(&summary(&rep));
        }
        Command::EvalSweep {
            bundle,
            pool,
            uncalibrated,
            report,
        } => {
            let b = Bundle::load(bundle)?;
            let d = match pool {
                Some(dir) => read_dataset(dir)?,
                None => generated(&cfg, cfg.eval.pool_users, cfg.synth.bot_fraction, POOL_SEED_OFFSET)?,
            };
            let scores = b.score_store(&d.store)?;
            let scorer = CachedScorer::new(&b, &scores);
            let scorer = if *uncalibrated { scorer.uncalibrated() } else { scorer };
            let rep = run_sweep(
                &scorer,
                (&d.store, &d.edges, &d.labels),
                &cfg.eval.fractions,
                cfg.eval.community_size,
                &cfg.eval.seeds,
            )?;
            write_report(&rep, &report.out, report.svg.as_deref())?;
            print_json(&summary(&rep));
            if rep.infeasible() > 0 {
                eprintln!("error: {} of {} sweep rows were infeasible", rep.infeasible(), rep.rows.len());
                return Ok(4);
            }
        }
        Command::PerturbEval { bundle, data } => {
            let b = Bundle::load(bundle)?;
            let baseline = b
                .manifest
                .verified_baseline
                .clone()
                .ok_or_else(|| Error::Bundle("bundle has no verified-only baseline".into()))?;
            let d = match data {
                Some(dir) => read_dataset(dir)?,
                None => generated(&cfg, cfg.eval.balanced_users, 0.5, PERTURB_SEED_OFFSET)?,
            };
            let rows = perturbation_eval(&b, &baseline, &d.store, &d.labels, cfg.seed)?;
            print_json(&serde_json::to_value(&rows)?);
        }
        Command::Report { input, out, svg } => {
            let rep = read_report(input)?;
            if let Some(out) = out {
                write_report(&rep, out, svg.as_deref())?;
            } else if let Some(svg) = svg {
                let text = botcensus_core::eval::report_svg(&rep);
                std::fs::write(svg, text).map_err(|e| Error::io(svg, e))?;
            }
            print_json(&summary(&rep));
        }
    }
    Ok(0)
}

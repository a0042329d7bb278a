use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use permsep::experiment::{self, ExperimentConfig, RunReport, SweepArm};
use permsep::gradcheck::{self, Fault, GradCheckConfig};
use permsep::losses::LossMode;
use permsep::mixgen::{manifest_path, Split};
use permsep::trainer::{self, Checkpoint, Trainer};
use permsep::Error;

const EXIT_CONFIG: u8 = 2;
const EXIT_IO: u8 = 3;
const EXIT_NON_FINITE: u8 = 4;
const EXIT_GRADCHECK: u8 = 5;

#[derive(Parser)]
#[command(
    name = "permsep",
    version,
    about = "Permutation invariant and soft-minimum separation experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Experiment configuration (TOML).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the top-level seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides `io.out_dir`.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the mixture dataset and its manifests.
    Gen(Common),
    /// Train a separator.
    Train {
        #[command(flatten)]
        common: Common,
        /// Continue from the checkpoint in the output directory.
        #[arg(long)]
        resume: bool,
    },
    /// Score a checkpoint (or ideal masks) on one split.
    Eval {
        #[command(flatten)]
        common: Common,
        /// Defaults to `<out>/checkpoint.json`.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long, default_value = "test")]
        split: String,
        /// Use ideal ratio masks instead of a trained model.
        #[arg(long)]
        oracle: bool,
    },
    /// Finite-difference check of every analytic gradient.
    Gradcheck {
        #[command(flatten)]
        common: Common,
        /// Number of random instances per check.
        #[arg(long, default_value_t = 100)]
        seeds: u64,
        #[arg(long, hide = true)]
        inject_fault: bool,
    },
    /// Train and evaluate one run per gamma per seed.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// Comma-separated gamma values (or initial values in trainable mode).
        #[arg(long, value_delimiter = ',')]
        gammas: Option<Vec<f64>>,
        /// Loss mode applied to every gamma of `--gammas`.
        #[arg(long, default_value = "softmin_const")]
        mode: String,
        /// Overrides `sweep.seeds`.
        #[arg(long)]
        seeds: Option<usize>,
    },
}

struct Failure {
    code: u8,
    message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match &e {
            Error::NonFinite { .. } => EXIT_NON_FINITE,
            e if e.is_io() => EXIT_IO,
            _ => EXIT_CONFIG,
        };
        Failure {
            code,
            message: e.to_string(),
        }
    }
}

type CmdResult = Result<(), Failure>;

fn load_config(common: &Common) -> Result<ExperimentConfig, Failure> {
    let mut cfg = match &common.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => {
            return Err(Failure {
                code: EXIT_CONFIG,
                message: "--config is required".into(),
            })
        }
    };
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &common.out {
        cfg.io.out_dir = out.clone();
    }
    Ok(cfg)
}

fn ensure_dir(path: &Path) -> Result<(), Failure> {
    std::fs::create_dir_all(path).map_err(|e| Failure {
        code: EXIT_IO,
        message: format!("cannot create {}: {e}", path.display()),
    })
}

fn require_manifest(cfg: &ExperimentConfig, split: Split) -> Result<(), Failure> {
    let path = manifest_path(&cfg.data_dir(), split);
    if path.is_file() {
        Ok(())
    } else {
        Err(Failure {
            code: EXIT_IO,
            message: format!(
                "manifest {} not found; run `permsep gen` first",
                path.display()
            ),
        })
    }
}

fn cmd_gen(common: &Common) -> CmdResult {
    let cfg = load_config(common)?;
    if !cfg.io.out_dir.is_dir() {
        return Err(Failure {
            code: EXIT_IO,
            message: format!(
                "output directory {} does not exist",
                cfg.io.out_dir.display()
            ),
        });
    }
    let manifests = experiment::generate(&cfg)?;
    for split in Split::ALL {
        println!(
            "{}: {} examples -> {}",
            split.as_str(),
            manifests.get(split).examples.len(),
            manifest_path(&cfg.data_dir(), split).display()
        );
    }
    Ok(())
}

#[derive(serde::Serialize)]
struct RunMeta<'a> {
    config_hash: &'a str,
    loss_mode: LossMode,
    gamma_init: f64,
    seed: u64,
}

fn cmd_train(common: &Common, resume: bool) -> CmdResult {
    let cfg = load_config(common)?;
    require_manifest(&cfg, Split::Train)?;
    require_manifest(&cfg, Split::Dev)?;
    let out = cfg.io.out_dir.clone();
    ensure_dir(&out)?;
    let data = experiment::load_train_data(&cfg)?;
    let hash = cfg.hash();
    let ck_path = out.join(trainer::CHECKPOINT_FILE);
    let mut t = if resume && ck_path.is_file() {
        let ck = Checkpoint::load(&ck_path)?;
        // the epoch count may grow on resume; everything else must match
        let mut original = cfg.clone();
        original.train.epochs = ck.train_config.epochs;
        if ck.config_hash != original.hash() {
            return Err(Failure {
                code: EXIT_CONFIG,
                message: "checkpoint was written under a different configuration".into(),
            });
        }
        log::info!("resuming at epoch {}", ck.epoch);
        let mut t = Trainer::from_checkpoint(ck)?;
        t.config.epochs = cfg.train.epochs;
        t.config_hash = hash.clone();
        t
    } else {
        let tc = cfg.train_config(cfg.seed);
        let mut t = Trainer::new(experiment::new_model(&cfg, cfg.seed)?, tc, &data)?;
        t.config_hash = hash.clone();
        t
    };
    experiment::write_json(
        &out.join("run_meta.json"),
        &RunMeta {
            config_hash: &hash,
            loss_mode: t.config.loss_mode,
            gamma_init: t.config.gamma_init,
            seed: t.config.seed,
        },
    )?;
    trainer::run(&mut t, &data, Some(&out))?;
    if let Some(last) = t.records.last() {
        println!(
            "trained {} epochs: cv objective {:.6}, gamma {}",
            t.records.len(),
            last.cv_objective,
            last.gamma
        );
    }
    Ok(())
}

fn cmd_eval(common: &Common, checkpoint: Option<PathBuf>, split: &str, oracle: bool) -> CmdResult {
    let cfg = load_config(common)?;
    let split: Split = split.parse()?;
    require_manifest(&cfg, split)?;
    let out = cfg.io.out_dir.clone();
    ensure_dir(&out)?;
    let oracle = oracle || cfg.eval.oracle;
    let hash = cfg.hash();
    let ck = if oracle {
        None
    } else {
        let path = checkpoint.unwrap_or_else(|| out.join(trainer::CHECKPOINT_FILE));
        Some(Checkpoint::load(&path)?)
    };
    let model = match &ck {
        Some(ck) => Some(permsep::separator::SeparatorModel::from_params(
            ck.model_config,
            ck.params.clone(),
        )?),
        None => None,
    };
    let examples = experiment::load_split(&cfg, split)?;
    let speakers = experiment::speaker_ids(&cfg, split)?;
    let rows = experiment::evaluate(model.as_ref(), &examples, &speakers, &hash)?;
    let mut report = match &ck {
        Some(ck) => RunReport::new(&hash, &ck.train_config, &ck.records),
        None => RunReport::new(&hash, &cfg.train_config(cfg.seed), &[]),
    };
    let summary = experiment::summarize(&rows);
    report.splits.insert(split.as_str().into(), summary.clone());
    experiment::write_csv(&out.join(format!("scores_{}.csv", split.as_str())), &rows)?;
    report.save(&out.join(format!("report_{}.json", split.as_str())))?;
    if cfg.eval.export_error_pairs {
        if let Some(m) = &model {
            let pairs = trainer::export_error_pairs(m, &examples, cfg.train.reduction)?;
            experiment::write_csv(
                &out.join(format!("error_pairs_{}.csv", split.as_str())),
                &pairs,
            )?;
        }
    }
    println!(
        "{} examples; mixture SDR {:.3} dB",
        summary.examples, summary.mean_baseline_sdr
    );
    for s in &summary.slots {
        println!(
            "speaker {}: SDR {:.3} ({:.3})  SIR {:.3} ({:.3})  SAR {:.3} ({:.3})",
            s.slot + 1,
            s.sdr.mean,
            s.sdr.std,
            s.sir.mean,
            s.sir.std,
            s.sar.mean,
            s.sar.std
        );
    }
    Ok(())
}

fn cmd_gradcheck(common: &Common, seeds: u64, inject_fault: bool) -> CmdResult {
    if common.config.is_some() {
        load_config(common)?;
    }
    let cfg = GradCheckConfig {
        seeds,
        fault: inject_fault.then_some(Fault::ScaleFirstParameter),
        ..GradCheckConfig::default()
    };
    let reports = gradcheck::run_suite(&cfg)?;
    println!(
        "{:<32} {:>8} {:>8} {:>12}  result",
        "check", "checked", "skipped", "max rel err"
    );
    let mut failed = Vec::new();
    for r in &reports {
        println!(
            "{:<32} {:>8} {:>8} {:>12.3e}  {}",
            r.name,
            r.checked,
            r.skipped,
            r.max_rel_error,
            if r.passed() { "pass" } else { "FAIL" }
        );
        if !r.passed() {
            failed.push(r);
        }
    }
    if failed.is_empty() {
        return Ok(());
    }
    let detail = failed
        .iter()
        .map(|r| {
            let idx: Vec<String> = r.failing.iter().map(|(s, i)| format!("{s}:{i}")).collect();
            format!("{} at (seed:index) {}", r.name, idx.join(" "))
        })
        .collect::<Vec<_>>()
        .join("; ");
    Err(Failure {
        code: EXIT_GRADCHECK,
        message: format!("gradient check failed: {detail}"),
    })
}

fn cmd_sweep(
    common: &Common,
    gammas: Option<Vec<f64>>,
    mode: &str,
    seeds: Option<usize>,
) -> CmdResult {
    let mut cfg = load_config(common)?;
    if let Some(gammas) = gammas {
        let loss_mode = parse_mode(mode)?;
        cfg.sweep.arms = gammas
            .into_iter()
            .map(|gamma| SweepArm { loss_mode, gamma })
            .collect();
    }
    if let Some(n) = seeds {
        cfg.sweep.seeds = n;
    }
    cfg.validate()?;
    for split in Split::ALL {
        require_manifest(&cfg, split)?;
    }
    let out = cfg.io.out_dir.join("sweep");
    ensure_dir(&out)?;
    let data = experiment::load_train_data(&cfg)?;
    let test = experiment::load_split(&cfg, Split::Test)?;
    let speakers = experiment::speaker_ids(&cfg, Split::Test)?;
    let report = experiment::sweep(&cfg, &data, &test, &speakers, Some(&out))?;
    experiment::write_csv(&out.join("rows.csv"), &report.rows)?;
    experiment::write_csv(&out.join("table.csv"), &report.table)?;
    experiment::write_json(&out.join("report.json"), &report)?;
    println!("mixture SDR {:.3} dB", report.baseline_sdr);
    println!(
        "{:<18} {:>6} {:>8} {:>8} {:>8} {:>8} {:>8} {:>8} {:>8}",
        "mode", "gamma", "SDR1", "SDR2", "SIR1", "SIR2", "SAR1", "SAR2", "gamma*"
    );
    for r in &report.table {
        println!(
            "{:<18} {:>6} {:>8.3} {:>8.3} {:>8.3} {:>8.3} {:>8.3} {:>8.3} {:>8.3}",
            r.loss_mode.as_str(),
            r.gamma,
            r.sdr_spk1,
            r.sdr_spk2,
            r.sir_spk1,
            r.sir_spk2,
            r.sar_spk1,
            r.sar_spk2,
            r.mean_final_gamma
        );
    }
    Ok(())
}

fn parse_mode(s: &str) -> Result<LossMode, Failure> {
    match s {
        "pit" => Ok(LossMode::Pit),
        "softmin_const" => Ok(LossMode::SoftminConst),
        "softmin_trainable" => Ok(LossMode::SoftminTrainable),
        other => Err(Failure {
            code: EXIT_CONFIG,
            message: format!("unknown loss mode '{other}'"),
        }),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .target(env_logger::Target::Stdout)
        .init();
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Gen(c) => cmd_gen(c),
        Command::Train { common, resume } => cmd_train(common, *resume),
        Command::Eval {
            common,
            checkpoint,
            split,
            oracle,
        } => cmd_eval(common, checkpoint.clone(), split, *oracle),
        Command::Gradcheck {
            common,
            seeds,
            inject_fault,
        } => cmd_gradcheck(common, *seeds, *inject_fault),
        Command::Sweep {
            common,
            gammas,
            mode,
            seeds,
        } => cmd_sweep(common, gammas.clone(), mode, *seeds),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}

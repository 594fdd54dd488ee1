//! `whar`: generate synthetic data, train, evaluate, check gradients,
//! benchmark and run the ablation matrix.
//!
//! Exit codes: 0 success, 1 usage error, 2 check failure, 3 runtime abort.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use whar::bench;
use whar::config::RunConfig;
use whar::data::{generate_synthetic, read_dataset, write_dataset, Dataset};
use whar::gradcheck::{self, CheckResult, Precision};
use whar::train::ablation::{run_ablation, summarize, AblationRow};
use whar::train::checkpoint::Checkpoint;
use whar::train::{train, EpochLog, TrainOptions, Variant};

const SPLITS: [&str; 3] = ["train", "val", "test"];
const RESOLVED: &str = "config.toml";

#[derive(Parser, Debug)]
#[command(name = "whar", version, about = "Lightweight multi-sensor activity recognition")]
struct Cli {
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write synthetic train/val/test splits.
    Generate {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Output directory for `train.whar`, `val.whar`, `test.whar`.
        #[arg(long)]
        out: PathBuf,
        /// Overrides `data.seed`.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Train one model; model dimensions are taken from the data.
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Directory written by `generate`.
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Overrides `train.seed`.
        #[arg(long)]
        seed: Option<u64>,
        /// baseline, +mom, +cfb or full; overrides `train.variant`.
        #[arg(long)]
        variant: Option<String>,
        /// Continue from `<out>/last.ckpt`.
        #[arg(long)]
        resume: bool,
    },
    /// Score a checkpoint on one split.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value = "test", value_parser = SPLITS)]
        split: String,
        /// Optional CSV file for the metrics row.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Finite-difference check of every op and block in 32 and 64 bit.
    Gradcheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Random shapes per case.
        #[arg(long, default_value_t = 20)]
        shapes: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Parameter, FLOP and latency sweep pairing CFB and attention fusion.
    Bench {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Comma-separated sensor counts; defaults to the config value.
        #[arg(long, value_delimiter = ',')]
        sensors: Vec<usize>,
        /// Comma-separated embedding widths; defaults to the config value.
        #[arg(long, value_delimiter = ',')]
        channels: Vec<usize>,
        #[arg(long, default_value_t = bench::MIN_ITERS)]
        iters: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train all four variants per seed and score them on the test split.
    Ablate {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// First seed; repeats use consecutive seeds.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value_t = 3)]
        repeats: usize,
    },
}

enum Failure {
    Usage(String),
    Check(String),
    Runtime(String),
}

impl From<whar::Error> for Failure {
    fn from(e: whar::Error) -> Self {
        Failure::Runtime(e.to_string())
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Runtime(e.to_string())
    }
}

type CmdResult = Result<(), Failure>;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(cli.cmd) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Check(msg)) => {
            eprintln!("check failed: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(3)
        }
    }
}

fn run(cmd: Command) -> CmdResult {
    match cmd {
        Command::Generate { config, out, seed } => generate(config, &out, seed),
        Command::Train {
            config,
            data,
            out,
            seed,
            variant,
            resume,
        } => train_cmd(config, &data, &out, seed, variant, resume),
        Command::Eval {
            checkpoint,
            data,
            split,
            out,
        } => eval(&checkpoint, &data, &split, out),
        Command::Gradcheck { seed, shapes, out } => gradcheck_cmd(seed, shapes, out),
        Command::Bench {
            config,
            sensors,
            channels,
            iters,
            seed,
            out,
        } => bench_cmd(config, sensors, channels, iters, seed, out),
        Command::Ablate {
            config,
            data,
            out,
            seed,
            repeats,
        } => ablate(config, &data, &out, seed, repeats),
    }
}

fn load_config(path: Option<PathBuf>) -> Result<RunConfig, Failure> {
    Ok(match path {
        Some(p) => RunConfig::load(&p).map_err(|e| Failure::Usage(format!("{}: {e}", p.display())))?,
        None => RunConfig::default(),
    })
}

fn write_resolved(dir: &Path, cfg: &RunConfig) -> CmdResult {
    fs::create_dir_all(dir)?;
    fs::write(dir.join(RESOLVED), cfg.to_toml())?;
    Ok(())
}

fn read_split(dir: &Path, split: &str) -> Result<Dataset, Failure> {
    let path = dir.join(format!("{split}.whar"));
    read_dataset(&path).map_err(|e| Failure::Runtime(format!("{}: {e}", path.display())))
}

/// Model dimensions follow the data so that defaults round-trip.
fn adopt_dims(cfg: &mut RunConfig, d: &Dataset) {
    cfg.model.sensors = d.sensors;
    cfg.model.variables = d.variables;
    cfg.model.length = d.length;
    cfg.model.classes = d.classes;
}

fn generate(config: Option<PathBuf>, out: &Path, seed: Option<u64>) -> CmdResult {
    let mut cfg = load_config(config)?;
    if let Some(s) = seed {
        cfg.data.seed = s;
    }
    let splits = generate_synthetic(&cfg.data)?;
    fs::create_dir_all(out)?;
    for (name, d) in SPLITS.iter().zip([&splits.train, &splits.val, &splits.test]) {
        write_dataset(&out.join(format!("{name}.whar")), d)?;
        println!("{name}: {} samples", d.len());
    }
    write_resolved(out, &cfg)
}

fn train_cmd(
    config: Option<PathBuf>,
    data: &Path,
    out: &Path,
    seed: Option<u64>,
    variant: Option<String>,
    resume: bool,
) -> CmdResult {
    let mut cfg = load_config(config)?;
    if let Some(s) = seed {
        cfg.train.seed = s;
    }
    if let Some(v) = variant {
        cfg.train.variant = Some(Variant::parse(&v).ok_or_else(|| Failure::Usage(format!("unknown variant `{v}`")))?);
    }
    let (tr, va) = (read_split(data, "train")?, read_split(data, "val")?);
    adopt_dims(&mut cfg, &tr);
    write_resolved(out, &cfg)?;
    let resume = if resume {
        Some(Checkpoint::load(&out.join("last.ckpt"))?)
    } else {
        None
    };
    let mut report = |e: &EpochLog| {
        println!(
            "epoch {:>3}  loss {:.4}  val acc {:.4}  val macro-F1 {:.4}  {:.1}s",
            e.epoch, e.train_loss, e.val_acc, e.val_macro_f1, e.seconds
        );
    };
    let outcome = train(
        &cfg.model_config(),
        &cfg.train,
        &tr,
        &va,
        TrainOptions {
            out_dir: Some(out.to_path_buf()),
            resume,
            on_epoch: Some(&mut report),
        },
    )?;
    let s = outcome.best.state;
    println!("best epoch {} val macro-F1 {:.4}", s.best_epoch, s.best_metric);
    Ok(())
}

fn eval(checkpoint: &Path, data: &Path, split: &str, out: Option<PathBuf>) -> CmdResult {
    let ck = Checkpoint::load(checkpoint)?;
    let mut set = read_split(data, split)?;
    ck.norm.apply(&mut set)?;
    let mut model = ck.model()?;
    let m = model.evaluate(&set, ck.train_config.batch)?;
    m.write_table(std::io::stdout())?;
    if let Some(path) = out {
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir)?;
        }
        fs::write(&path, format!("{}\n{}\n", whar::metrics::Metrics::csv_header(set.classes), m.csv_row()))?;
    }
    Ok(())
}

fn gradcheck_report(rows: &[CheckResult]) -> String {
    let mut s = String::from("case,precision,instances,max_rel_err,tolerance,passed\n");
    for r in rows {
        s += &format!(
            "{},{},{},{:.3e},{:.0e},{}\n",
            r.case.name(),
            if r.precision == Precision::F32 { "f32" } else { "f64" },
            r.instances,
            r.max_rel_err,
            r.precision.tolerance(),
            r.passed
        );
    }
    s
}

fn gradcheck_cmd(seed: u64, shapes: usize, out: Option<PathBuf>) -> CmdResult {
    let mut rows = Vec::new();
    for p in [Precision::F32, Precision::F64] {
        rows.extend(gradcheck::run_suite(p, shapes, seed)?);
    }
    let report = gradcheck_report(&rows);
    print!("{report}");
    if let Some(path) = out {
        fs::write(path, &report)?;
    }
    let failed = rows.iter().filter(|r| !r.passed).count();
    if failed > 0 {
        return Err(Failure::Check(format!("{failed} of {} gradient checks failed", rows.len())));
    }
    Ok(())
}

fn bench_cmd(
    config: Option<PathBuf>,
    sensors: Vec<usize>,
    channels: Vec<usize>,
    iters: usize,
    seed: u64,
    out: Option<PathBuf>,
) -> CmdResult {
    let cfg = load_config(config)?;
    let base = cfg.model_config();
    let sensors = if sensors.is_empty() { vec![base.model.sensors] } else { sensors };
    let channels = if channels.is_empty() { vec![base.mfe.channels] } else { channels };
    let rows = bench::sweep(&base, &sensors, &channels, iters, seed)?;
    let mut csv = format!("{}\n", bench::BenchRow::HEADER);
    for r in &rows {
        csv += &r.csv_row();
        csv.push('\n');
    }
    print!("{csv}");
    if let Some(path) = out {
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir)?;
            write_resolved(dir, &cfg)?;
        }
        fs::write(path, csv)?;
    }
    Ok(())
}

fn ablate(config: Option<PathBuf>, data: &Path, out: &Path, seed: Option<u64>, repeats: usize) -> CmdResult {
    let mut cfg = load_config(config)?;
    if let Some(s) = seed {
        cfg.train.seed = s;
    }
    let (tr, va, te) = (read_split(data, "train")?, read_split(data, "val")?, read_split(data, "test")?);
    adopt_dims(&mut cfg, &tr);
    write_resolved(out, &cfg)?;
    let seeds: Vec<u64> = (0..repeats.max(1) as u64).map(|i| cfg.train.seed + i).collect();
    println!("{}", AblationRow::HEADER);
    let rows = run_ablation(&cfg.model_config(), &cfg.train, &seeds, (&tr, &va, &te), |r| {
        println!("{}", r.csv_row());
    })?;
    let mut csv = format!("{}\n", AblationRow::HEADER);
    for r in &rows {
        csv += &r.csv_row();
        csv.push('\n');
    }
    fs::write(out.join("ablation.csv"), csv)?;
    let mut summary = String::from("variant,median_test_acc,median_test_macro_f1\n");
    for (v, acc, f1) in summarize(&rows) {
        summary += &format!("{},{acc:.6},{f1:.6}\n", v.label());
    }
    print!("{summary}");
    fs::write(out.join("ablation_summary.csv"), summary)?;
    Ok(())
}

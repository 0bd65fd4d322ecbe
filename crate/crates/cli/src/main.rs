//! `phlink` command-line driver.
//!
//! ```text
//! phlink generate --config run.toml [--dataset DIR] [--out DIR] [--seed N]
//! phlink train    --config run.toml --detector slope|svm|rnn|all [--dataset DIR] [--out DIR]
//! phlink evaluate --config run.toml [--detector ...] [--dataset DIR] [--out DIR]
//! phlink eye      --config run.toml [--interval MS] [--dataset DIR] [--out DIR]
//! ```
//!
//! Exit codes: 0 success, 1 other failure, 2 usage or config error,
//! 3 I/O error, 4 training diverged, 5 model missing.

use clap::{Args, CommandFactory, Parser, Subcommand};
use phlink::config::{split_records, RunConfig};
use phlink::dataset::{read_dataset, write_dataset, ModelFile};
use phlink::eval::{
    eye_diagram_export, generate_dataset, provenance_line, receive_all, train_detector, write_eye_csv,
    DetectorKind, EvalReport, ExperimentRecord, IntervalTraining,
};
use phlink::Error;
use std::collections::{BTreeMap, BTreeSet};
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

#[derive(Parser)]
#[command(
    name = "phlink",
    version,
    about = "pH molecular link simulator and detector benchmark"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate the dataset and write the manifest plus one trace CSV per record.
    Generate(Common),
    /// Train per-interval models for one detector (or `all`).
    Train {
        #[command(flatten)]
        common: Common,
        /// slope, svm, rnn (alias lstm) or all.
        #[arg(long, value_parser = parse_detectors)]
        detector: Detectors,
    },
    /// Score trained models on the test split and write report.csv.
    Evaluate {
        #[command(flatten)]
        common: Common,
        /// slope, svm, rnn (alias lstm) or all.
        #[arg(long, value_parser = parse_detectors, default_value = "all")]
        detector: Detectors,
    },
    /// Export rate-of-change eye-diagram rows.
    Eye {
        #[command(flatten)]
        common: Common,
        /// Symbol interval in ms; every interval when omitted.
        #[arg(long)]
        interval: Option<u32>,
    },
}

#[derive(Args)]
struct Common {
    /// Run configuration (dotted-key TOML).
    #[arg(long)]
    config: PathBuf,
    /// Dataset directory (default: <out>/dataset).
    #[arg(long)]
    dataset: Option<PathBuf>,
    /// Output directory (default: output_dir from the config).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Overrides master_seed from the config.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Clone)]
struct Detectors(Vec<DetectorKind>);

fn parse_detectors(s: &str) -> Result<Detectors, String> {
    if s == "all" {
        return Ok(Detectors(DetectorKind::ALL.to_vec()));
    }
    s.parse::<DetectorKind>()
        .map(|k| Detectors(vec![k]))
        .map_err(|e| e.to_string())
}

struct Failure {
    code: u8,
    message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match &e {
            Error::InvalidConfig(_)
            | Error::InvalidFrame(_)
            | Error::InvalidSchedule(_)
            | Error::Parse(_)
            | Error::Split(_) => 2,
            Error::Io(_) | Error::Json(_) => 3,
            Error::NoConvergence { .. } | Error::NonFiniteLoss { .. } | Error::DegenerateTraining => 4,
            Error::MissingModel { .. } => 5,
            _ => 1,
        };
        Failure {
            code,
            message: e.to_string(),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e).into()
    }
}

fn fail(code: u8, message: impl Into<String>) -> Failure {
    Failure {
        code,
        message: message.into(),
    }
}

type CliResult<T = ()> = Result<T, Failure>;

struct Context {
    cfg: RunConfig,
    digest: String,
    out: PathBuf,
    dataset: PathBuf,
}

impl Context {
    fn new(common: &Common) -> CliResult<Self> {
        let text = fs::read_to_string(&common.config)
            .map_err(|e| fail(2, format!("cannot read config {}: {e}", common.config.display())))?;
        let mut cfg = RunConfig::parse(&text).map_err(|e| fail(2, e.to_string()))?;
        if let Some(seed) = common.seed {
            cfg.master_seed = seed;
        }
        let out = common
            .out
            .clone()
            .unwrap_or_else(|| PathBuf::from(&cfg.output_dir));
        let dataset = common.dataset.clone().unwrap_or_else(|| out.join("dataset"));
        Ok(Context {
            digest: cfg.digest(),
            cfg,
            out,
            dataset,
        })
    }

    fn provenance(&self) -> String {
        provenance_line(&self.digest, self.cfg.master_seed)
    }

    fn load_dataset(&self) -> CliResult<Vec<ExperimentRecord>> {
        let (manifest, records) = read_dataset(&self.dataset)?;
        if manifest.channel != self.cfg.channel {
            eprintln!("warning: dataset was generated with a different channel config");
        }
        if manifest.master_seed != self.cfg.master_seed {
            eprintln!(
                "warning: dataset master_seed {} differs from the run's {}",
                manifest.master_seed, self.cfg.master_seed
            );
        }
        Ok(records)
    }

    fn model_path(&self, kind: DetectorKind) -> PathBuf {
        self.out.join("models").join(format!("{kind}.json"))
    }
}

fn create(path: &Path) -> CliResult<BufWriter<File>> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    Ok(BufWriter::new(File::create(path)?))
}

fn cmd_generate(common: &Common) -> CliResult {
    let ctx = Context::new(common)?;
    let dir = &ctx.dataset;
    let records = generate_dataset(&ctx.cfg.dataset, &ctx.cfg.channel, ctx.cfg.master_seed)?;
    write_dataset(dir, &records, &ctx.cfg.channel, &ctx.digest, ctx.cfg.master_seed)?;
    let bits: usize = records.iter().map(|r| r.bits.len()).sum();
    println!(
        "wrote {} records ({bits} bits) to {}",
        records.len(),
        dir.display()
    );
    Ok(())
}

fn write_training_log(
    path: &Path,
    provenance: &str,
    kind: DetectorKind,
    runs: &[IntervalTraining],
) -> CliResult {
    let mut w = create(path)?;
    writeln!(w, "{provenance}")?;
    match kind {
        DetectorKind::Slope => {
            writeln!(w, "interval_ms,records,threshold,training_errors")?;
            for t in runs {
                for (threshold, errors) in &t.summary {
                    writeln!(w, "{},{},{threshold},{errors}", t.interval_ms, t.records)?;
                }
            }
        }
        DetectorKind::Svm => {
            writeln!(w, "interval_ms,records,c_reg,validation_errors")?;
            for t in runs {
                for (c, errors) in &t.summary {
                    writeln!(w, "{},{},{c},{errors}", t.interval_ms, t.records)?;
                }
            }
        }
        DetectorKind::Rnn => {
            writeln!(w, "interval_ms,epoch,train_loss,val_loss,learning_rate")?;
            for t in runs {
                for e in &t.epochs {
                    writeln!(
                        w,
                        "{},{},{:.6},{:.6},{}",
                        t.interval_ms, e.epoch, e.train_loss, e.val_loss, e.learning_rate
                    )?;
                }
            }
        }
    }
    w.flush()?;
    Ok(())
}

fn cmd_train(common: &Common, detectors: &[DetectorKind]) -> CliResult {
    let ctx = Context::new(common)?;
    let records = ctx.load_dataset()?;
    let (train, _) = split_records(&ctx.cfg, &records)?;
    let rx = receive_all(&train, &ctx.cfg.channel);
    let train_records: Vec<usize> = train.iter().map(|r| r.index).collect();
    for &kind in detectors {
        let runs = train_detector(kind, &rx, &ctx.cfg.detectors, ctx.cfg.master_seed)?;
        let file = ModelFile {
            config_digest: ctx.digest.clone(),
            master_seed: ctx.cfg.master_seed,
            detector: kind,
            train_records: train_records.clone(),
            models: runs.iter().map(|t| (t.interval_ms, t.model.clone())).collect(),
        };
        file.save(&ctx.model_path(kind))?;
        write_training_log(
            &ctx.out.join("logs").join(format!("{kind}_train.csv")),
            &ctx.provenance(),
            kind,
            &runs,
        )?;
        let used: usize = runs.iter().map(|t| t.records).sum();
        println!("{kind}: {} interval models from {used} records", runs.len());
    }
    Ok(())
}

fn cmd_evaluate(common: &Common, detectors: &[DetectorKind]) -> CliResult {
    let ctx = Context::new(common)?;
    let records = ctx.load_dataset()?;
    let (_, test) = split_records(&ctx.cfg, &records)?;
    let test_ids: BTreeSet<usize> = test.iter().map(|r| r.index).collect();
    let rx = receive_all(&test, &ctx.cfg.channel);
    let mut rows = Vec::new();
    for &kind in detectors {
        let path = ctx.model_path(kind);
        if !path.exists() {
            return Err(fail(
                5,
                format!(
                    "no model file {}; run `phlink train --detector {kind}`",
                    path.display()
                ),
            ));
        }
        let file = ModelFile::load(&path)?;
        if let Some(leak) = file.train_records.iter().find(|i| test_ids.contains(i)) {
            return Err(fail(2, format!("{kind} model was trained on test record {leak}")));
        }
        if file.config_digest != ctx.digest {
            eprintln!(
                "warning: {kind} model was trained under config digest {}",
                file.config_digest
            );
        }
        rows.extend(phlink::eval::evaluate(kind.as_str(), &file.models, &rx)?);
    }
    let report = EvalReport {
        master_seed: ctx.cfg.master_seed,
        config_digest: ctx.digest.clone(),
        split: ctx.cfg.split,
        test_records: test_ids.into_iter().collect(),
        rows,
    };
    let path = ctx.out.join("report.csv");
    let mut w = create(&path)?;
    report.write_csv(&mut w)?;
    w.flush()?;
    print_table(&report);
    println!("wrote {}", path.display());
    Ok(())
}

fn print_table(report: &EvalReport) {
    let mut by_interval: BTreeMap<u32, Vec<(&str, f64)>> = BTreeMap::new();
    let mut names: Vec<&str> = Vec::new();
    for r in &report.rows {
        if !names.contains(&r.detector.as_str()) {
            names.push(&r.detector);
        }
        by_interval
            .entry(r.interval_ms)
            .or_default()
            .push((&r.detector, r.ber()));
    }
    print!("{:>12}", "interval_ms");
    for n in &names {
        print!("{n:>10}");
    }
    println!();
    for (ms, cells) in by_interval {
        print!("{ms:>12}");
        for n in &names {
            match cells.iter().find(|c| c.0 == *n) {
                Some((_, ber)) => print!("{ber:>10.4}"),
                None => print!("{:>10}", "-"),
            }
        }
        println!();
    }
    let failures: usize = report.rows.iter().map(|r| r.sync_failures).sum();
    if failures > 0 {
        println!("sync failures (scored as errors): {failures}");
    }
}

fn cmd_eye(common: &Common, interval: Option<u32>) -> CliResult {
    let ctx = Context::new(common)?;
    let records = ctx.load_dataset()?;
    let refs: Vec<&ExperimentRecord> = records.iter().collect();
    let rx = receive_all(&refs, &ctx.cfg.channel);
    let intervals: BTreeSet<u32> = records.iter().map(|r| r.interval_ms()).collect();
    let chosen: Vec<u32> = match interval {
        Some(ms) if intervals.contains(&ms) => vec![ms],
        Some(ms) => return Err(fail(2, format!("dataset has no {ms} ms records"))),
        None => intervals.into_iter().collect(),
    };
    for ms in chosen {
        let rows = eye_diagram_export(&rx, ms);
        let path = ctx.out.join(format!("eye_{ms}.csv"));
        let mut w = create(&path)?;
        write_eye_csv(&mut w, &ctx.provenance(), &rows)?;
        w.flush()?;
        println!("{ms} ms: {} rows to {}", rows.len(), path.display());
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if e.use_stderr() => {
            eprint!("{e}");
            let mut cmd = Cli::command();
            cmd.build();
            let sub = std::env::args()
                .nth(1)
                .and_then(|name| cmd.find_subcommand_mut(name).cloned());
            eprintln!("\n{}", sub.unwrap_or(cmd).render_usage());
            return ExitCode::from(2);
        }
        Err(e) => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
    };
    let result = match &cli.command {
        Command::Generate(common) => cmd_generate(common),
        Command::Train { common, detector } => cmd_train(common, &detector.0),
        Command::Evaluate { common, detector } => cmd_evaluate(common, &detector.0),
        Command::Eye { common, interval } => cmd_eye(common, *interval),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}

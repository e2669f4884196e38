use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use log::{info, warn};

use srl_core::archive::{ArchiveMeta, ModelArchive};
use srl_core::config::{Config, Precision};
use srl_core::corpus::{Format, Sentence};
use srl_core::eval::{distance_tsv, iteration_sweep, predict_corpus, sweep_tsv, EvalReport, SweepModels};
use srl_core::model::Model;
use srl_core::synthetic;
use srl_core::tensor::Fault;
use srl_core::trainer::{self, GradCheckSpec};
use srl_core::{Error, Scalar};

/// Semantic role labeler: train, predict, evaluate and analyze.
#[derive(Parser)]
#[command(name = "srl", version)]
struct Cli {
    /// Append diagnostics to this file instead of standard error.
    #[arg(long, global = true)]
    log_file: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum FormatArg {
    Conll09,
    Upb,
}

impl From<FormatArg> for Format {
    fn from(f: FormatArg) -> Format {
        match f {
            FormatArg::Conll09 => Format::Conll09,
            FormatArg::Upb => Format::Upb,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum SynthKind {
    Capacity,
    LongRange,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model and write an archive plus a training log.
    Train {
        /// `key = value` configuration file; unset keys keep their defaults.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Print the effective configuration and exit.
        #[arg(long)]
        print_config: bool,
        #[arg(long, required_unless_present = "print_config")]
        train: Option<PathBuf>,
        #[arg(long, required_unless_present = "print_config")]
        dev: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "conll09")]
        format: FormatArg,
        /// Pretrained word vectors, one `word v1 v2 ...` per line.
        #[arg(long)]
        embeddings: Option<PathBuf>,
        #[arg(long, required_unless_present = "print_config")]
        out: Option<PathBuf>,
        /// Training log path; defaults to the archive path plus `.log`.
        #[arg(long)]
        log: Option<PathBuf>,
        /// Overrides the configured seed.
        #[arg(long, env = "SRL_SEED")]
        seed: Option<u64>,
        /// Extra `key=value` settings applied after the config file.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
    },
    /// Label a corpus with a trained model.
    Predict {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long, value_enum, default_value = "conll09")]
        format: FormatArg,
        /// Refinement steps; defaults to the trained value.
        #[arg(long)]
        iterations: Option<usize>,
        /// Output path; standard output when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Score predictions against gold annotations.
    Eval {
        #[arg(long)]
        gold: PathBuf,
        #[arg(long)]
        pred: PathBuf,
        #[arg(long, value_enum, default_value = "conll09")]
        format: FormatArg,
        /// Print tab-separated records instead of the text report.
        #[arg(long)]
        tsv: bool,
    },
    /// Iteration sweep and distance breakdown on a dev set.
    Analyze {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        dev: PathBuf,
        #[arg(long, value_enum, default_value = "conll09")]
        format: FormatArg,
        /// Iteration counts, as `lo..hi` (inclusive) or a comma list.
        #[arg(long, default_value = "0..6")]
        sweep: String,
        /// Separately trained models as `N=path`, one per sweep value. When
        /// given, row N uses its own model instead of `--model`.
        #[arg(long = "per-iteration", value_name = "N=PATH")]
        per_iteration: Vec<String>,
        /// Directory for `sweep.tsv`, `distance.tsv` and `report.tsv`.
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Finite-difference check of the training loss on a random instance.
    Gradcheck {
        #[arg(long, default_value_t = 3)]
        size: usize,
        #[arg(long, default_value_t = 4)]
        roles: usize,
        #[arg(long, default_value_t = 2)]
        iterations: usize,
        #[arg(long, env = "SRL_SEED", default_value_t = 1)]
        seed: u64,
        #[arg(long, default_value_t = 1e-5)]
        eps: f64,
        /// Corrupt the tanh backward pass; the check must then fail.
        #[arg(long)]
        inject_fault: bool,
    },
    /// Write a seeded synthetic corpus.
    Synth {
        #[arg(long, value_enum)]
        kind: SynthKind,
        #[arg(long, default_value_t = 20)]
        count: usize,
        #[arg(long, env = "SRL_SEED", default_value_t = 1)]
        seed: u64,
        /// Largest marker-to-verb distance for `long-range` (at least 8).
        #[arg(long, default_value_t = 8)]
        max_gap: usize,
        #[arg(long)]
        out: PathBuf,
    },
}

/// Failure with its process exit code.
struct Failure {
    code: u8,
    message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::ArchiveVersion { .. } | Error::Archive(_) => 3,
            Error::NonFinite(_) | Error::Tensor(_) => 1,
            _ => 2,
        };
        Failure {
            code,
            message: e.to_string(),
        }
    }
}

fn usage(message: impl Into<String>) -> Failure {
    Failure {
        code: 2,
        message: message.into(),
    }
}

type CmdResult = Result<(), Failure>;

fn read_text(path: &Path) -> Result<String, Failure> {
    fs::read_to_string(path).map_err(|e| usage(format!("cannot read {}: {e}", path.display())))
}

fn write_text(path: &Path, text: &str) -> CmdResult {
    fs::write(path, text).map_err(|e| usage(format!("cannot write {}: {e}", path.display())))
}

fn read_corpus(path: &Path, format: FormatArg) -> Result<Vec<Sentence>, Failure> {
    let text = read_text(path)?;
    Format::from(format)
        .parse(&text)
        .map_err(|e| usage(format!("{}: {e}", path.display())))
}

fn load_archive(path: &Path) -> Result<ModelArchive, Failure> {
    if !path.exists() {
        return Err(usage(format!("cannot read {}: no such file", path.display())));
    }
    Ok(ModelArchive::load(path)?)
}

fn effective_config(config: Option<&Path>, seed: Option<u64>, overrides: &[String]) -> Result<Config, Failure> {
    let mut text = match config {
        Some(path) => read_text(path)?,
        None => String::new(),
    };
    if !text.is_empty() && !text.ends_with('\n') {
        text.push('\n');
    }
    for o in overrides {
        let _ = writeln!(text, "{o}");
    }
    if let Some(s) = seed {
        let _ = writeln!(text, "seed = {s}");
    }
    Ok(Config::parse(&text)?)
}

fn train_as<T: Scalar>(
    config: &Config,
    train: &[Sentence],
    dev: &[Sentence],
    embeddings: Option<&Path>,
    out: &Path,
    log_path: &Path,
) -> CmdResult {
    let model: Model<T> = trainer::init_model(train, config, embeddings)?;
    let mut log = format!(
        "# precision={} parameters={} train={} dev={}\n",
        T::NAME,
        model.params.num_scalars(),
        train.len(),
        dev.len()
    );
    let outcome = trainer::train(model, train, dev, &config.train, |r| {
        let _ = writeln!(log, "{r}");
    })?;
    let _ = writeln!(log, "# initial_loss={:.6}", outcome.initial_loss);
    let _ = writeln!(log, "# best_epoch={} best_dev_f1={:.6}", outcome.best_epoch, outcome.best_f1);
    let meta = ArchiveMeta {
        seed: config.train.seed,
        best_epoch: outcome.best_epoch,
        dev_f1: outcome.best_f1,
    };
    ModelArchive::from_model(&outcome.model, &config.train, meta).save(out)?;
    write_text(log_path, &log)?;
    info!(
        "wrote {} (best epoch {}, dev F1 {:.4})",
        out.display(),
        outcome.best_epoch,
        outcome.best_f1
    );
    Ok(())
}

fn predictions(archive: &ModelArchive, sentences: &[Sentence], iterations: usize) -> Result<Vec<Sentence>, Failure> {
    Ok(match archive.config.train.precision {
        Precision::Fp32 => predict_corpus(&archive.to_model::<f32>()?, sentences, iterations)?,
        Precision::Fp64 => predict_corpus(&archive.to_model::<f64>()?, sentences, iterations)?,
    })
}

fn parse_sweep(spec: &str) -> Result<Vec<usize>, Failure> {
    let bad = || usage(format!("bad sweep range {spec:?}; use lo..hi or a comma list"));
    let values: Vec<usize> = if let Some((lo, hi)) = spec.split_once("..") {
        let lo: usize = lo.trim().parse().map_err(|_| bad())?;
        let hi: usize = hi.trim().parse().map_err(|_| bad())?;
        (lo..=hi).collect()
    } else {
        spec.split(',').map(|v| v.trim().parse().map_err(|_| bad())).collect::<Result<_, _>>()?
    };
    if values.is_empty() {
        return Err(bad());
    }
    Ok(values)
}

fn analyze_as<T: Scalar>(
    archive: &ModelArchive,
    extra: &[(usize, ModelArchive)],
    dev: &[Sentence],
    range: &[usize],
    out_dir: &Path,
) -> CmdResult {
    let model = archive.to_model::<T>()?;
    let per: Vec<(usize, Model<T>)> = extra
        .iter()
        .map(|(n, a)| Ok((*n, a.to_model::<T>()?)))
        .collect::<Result<_, Failure>>()?;
    let models = if per.is_empty() {
        SweepModels::Shared(&model)
    } else {
        SweepModels::PerIteration(per.iter().map(|(n, m)| (*n, m)).collect())
    };
    let rows = iteration_sweep(&models, dev, range)?;
    let pred = predict_corpus(&model, dev, model.config.iterations)?;
    let report = EvalReport::compute(&pred, dev)?;
    fs::create_dir_all(out_dir).map_err(|e| usage(format!("cannot create {}: {e}", out_dir.display())))?;
    write_text(&out_dir.join("sweep.tsv"), &sweep_tsv(&rows, per.is_empty()))?;
    write_text(&out_dir.join("distance.tsv"), &distance_tsv(&report.buckets))?;
    write_text(&out_dir.join("report.tsv"), &report.to_tsv())?;
    print!("{}", report.to_text());
    println!();
    print!("{}", sweep_tsv(&rows, per.is_empty()));
    Ok(())
}

fn run(command: Command) -> CmdResult {
    match command {
        Command::Train {
            config,
            print_config,
            train,
            dev,
            format,
            embeddings,
            out,
            log,
            seed,
            overrides,
        } => {
            let config = effective_config(config.as_deref(), seed, &overrides)?;
            if print_config {
                print!("{}", config.to_text());
                return Ok(());
            }
            let (Some(train_path), Some(dev_path), Some(out)) = (train, dev, out) else {
                return Err(usage("--train, --dev and --out are required"));
            };
            let train = read_corpus(&train_path, format)?;
            let dev = read_corpus(&dev_path, format)?;
            let log_path = log.unwrap_or_else(|| {
                let mut p = out.clone().into_os_string();
                p.push(".log");
                p.into()
            });
            match config.train.precision {
                Precision::Fp32 => train_as::<f32>(&config, &train, &dev, embeddings.as_deref(), &out, &log_path),
                Precision::Fp64 => train_as::<f64>(&config, &train, &dev, embeddings.as_deref(), &out, &log_path),
            }
        }
        Command::Predict {
            model,
            input,
            format,
            iterations,
            out,
        } => {
            let archive = load_archive(&model)?;
            let sentences = read_corpus(&input, format)?;
            if sentences.is_empty() {
                warn!("{} contains no sentences", input.display());
            }
            let n = iterations.unwrap_or(archive.config.model.iterations);
            let pred = predictions(&archive, &sentences, n)?;
            let text = Format::from(format).write(&pred);
            match out {
                Some(path) => write_text(&path, &text),
                None => {
                    let mut stdout = std::io::stdout().lock();
                    stdout
                        .write_all(text.as_bytes())
                        .map_err(|e| usage(format!("cannot write output: {e}")))
                }
            }
        }
        Command::Eval { gold, pred, format, tsv } => {
            let gold = read_corpus(&gold, format)?;
            let pred = read_corpus(&pred, format)?;
            let report = EvalReport::compute(&pred, &gold)?;
            if tsv {
                print!("{}", report.to_tsv());
            } else {
                print!("{}", report.to_text());
            }
            Ok(())
        }
        Command::Analyze {
            model,
            dev,
            format,
            sweep,
            per_iteration,
            out_dir,
        } => {
            let range = parse_sweep(&sweep)?;
            let archive = load_archive(&model)?;
            let dev = read_corpus(&dev, format)?;
            let extra = per_iteration
                .iter()
                .map(|spec| {
                    let (n, path) = spec
                        .split_once('=')
                        .ok_or_else(|| usage(format!("--per-iteration expects N=PATH, got {spec:?}")))?;
                    let n = n.trim().parse().map_err(|_| usage(format!("bad iteration count in {spec:?}")))?;
                    Ok((n, load_archive(Path::new(path))?))
                })
                .collect::<Result<Vec<_>, Failure>>()?;
            match archive.config.train.precision {
                Precision::Fp32 => analyze_as::<f32>(&archive, &extra, &dev, &range, &out_dir),
                Precision::Fp64 => analyze_as::<f64>(&archive, &extra, &dev, &range, &out_dir),
            }
        }
        Command::Gradcheck {
            size,
            roles,
            iterations,
            seed,
            eps,
            inject_fault,
        } => {
            if size == 0 || size > 6 {
                return Err(usage(format!("--size must be in 1..=6, got {size}")));
            }
            let spec = GradCheckSpec {
                tokens: size,
                roles,
                iterations,
                seed,
                fault: inject_fault.then_some(Fault::TanhBackward),
                ..GradCheckSpec::default()
            };
            let report = trainer::loss_grad_check(&spec, eps)?;
            let mut failed = Vec::new();
            for (group, err) in report.by_group() {
                let ok = err < 1e-4;
                println!("{:<12} {err:.3e} {}", group.name(), if ok { "ok" } else { "FAIL" });
                if !ok {
                    failed.push(group.name());
                }
            }
            if failed.is_empty() {
                println!("max relative error {:.3e}", report.max_error());
                Ok(())
            } else {
                Err(Failure {
                    code: 1,
                    message: format!("gradient check failed in: {}", failed.join(", ")),
                })
            }
        }
        Command::Synth {
            kind,
            count,
            seed,
            max_gap,
            out,
        } => {
            if max_gap < 8 {
                return Err(usage(format!("--max-gap must be at least 8, got {max_gap}")));
            }
            let sentences = match kind {
                SynthKind::Capacity => synthetic::capacity_corpus(count, seed),
                SynthKind::LongRange => synthetic::long_range_corpus_with(count, seed, 7..=max_gap),
            };
            write_text(&out, &Format::Conll09.write(&sentences))
        }
    }
}

fn init_logging(log_file: Option<&Path>) -> CmdResult {
    let mut builder = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"));
    if let Some(path) = log_file {
        let file = fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|e| usage(format!("cannot open {}: {e}", path.display())))?;
        builder.target(env_logger::Target::Pipe(Box::new(file)));
    }
    builder.init();
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = init_logging(cli.log_file.as_deref()).and_then(|()| run(cli.command));
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}

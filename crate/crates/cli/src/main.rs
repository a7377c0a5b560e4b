use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use pace_core::classifier::{accuracy, train_labeled};
use pace_core::feature_io::{l2_normalize, load_bundle, save_bundle};
use pace_core::pipeline::{align_bundle, run_pipeline, strip_timing, MemberOutput};
use pace_core::self_training::{self_train, RoundTrace};
use pace_core::synthetic::{generate, perturb_member};
use pace_core::{DataBundle, Error, ErrorKind, GdConfig, LinearClassifier, PipelineConfig, RunReport, SynthConfig};

mod summary;

#[derive(Parser)]
#[command(
    name = "pace",
    version,
    about = "Align, self-train and ensemble linear classifiers on fixed features"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone, Default)]
struct ConfigArgs {
    /// Plain-text `key = value` configuration file.
    #[arg(long, short)]
    config: Option<PathBuf>,
    /// Override one configuration key; may be repeated.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Write a seeded synthetic domain-shift bundle (or several perturbed members).
    Synth(SynthArgs),
    /// Align a bundle with the configured aligner and write the result.
    Align {
        #[arg(long)]
        bundle: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Train the labeled-stage classifier and write a checkpoint.
    Train {
        #[arg(long)]
        bundle: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Skip row L2 normalization (features are already normalized).
        #[arg(long)]
        no_normalize: bool,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Self-train from a checkpoint and write the refined weights.
    Selftrain {
        #[arg(long)]
        bundle: PathBuf,
        #[arg(long)]
        init: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Write one JSON object per round to this file.
        #[arg(long)]
        trace: Option<PathBuf>,
        #[arg(long)]
        no_normalize: bool,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Run the full pipeline over every member and write a JSON report.
    Run(RunArgs),
    /// Score a checkpoint on a bundle's unlabeled target rows.
    Eval {
        #[arg(long)]
        bundle: PathBuf,
        #[arg(long)]
        weights: PathBuf,
        #[arg(long)]
        no_normalize: bool,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Summarize a report written by `run`.
    Report {
        input: PathBuf,
        /// Print the report as JSON with every timing field removed.
        #[arg(long)]
        strip_timing: bool,
    },
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    /// Number of noisy members to write as `member_<i>` subdirectories.
    #[arg(long, default_value_t = 1)]
    members: usize,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    classes: Option<usize>,
    #[arg(long)]
    dim: Option<usize>,
    #[arg(long)]
    n_source: Option<usize>,
    #[arg(long)]
    n_target: Option<usize>,
    #[arg(long)]
    separation: Option<f64>,
    #[arg(long)]
    rotation: Option<f64>,
    #[arg(long)]
    condition_cap: Option<f64>,
    #[arg(long)]
    shift: Option<f64>,
    #[arg(long)]
    prior_ratio: Option<f64>,
    /// Member noise scale.
    #[arg(long)]
    sigma: Option<f64>,
    #[arg(long)]
    shots: Option<usize>,
    #[arg(long)]
    val_per_class: Option<usize>,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Member bundle directory; may be repeated. Replaces `members` from the config.
    #[arg(long = "member")]
    members: Vec<PathBuf>,
    #[arg(long)]
    aligner: Option<String>,
    #[arg(long)]
    parallelism: Option<usize>,
    /// Comma-separated combiners, or `all`.
    #[arg(long)]
    combiners: Option<String>,
    /// Report path; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Write every member's round traces as JSON lines.
    #[arg(long)]
    trace: Option<PathBuf>,
}

#[derive(Debug)]
enum CliError {
    Core(Error),
    Members(Vec<Error>),
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Core(e)
    }
}

fn exit_code(kind: ErrorKind) -> u8 {
    match kind {
        ErrorKind::Config => 2,
        ErrorKind::Data => 3,
        ErrorKind::Numeric => 4,
    }
}

type CliResult<T = ()> = std::result::Result<T, CliError>;

fn parse_set(items: &[String]) -> pace_core::Result<Vec<(String, String)>> {
    items
        .iter()
        .map(|s| {
            s.split_once('=')
                .map(|(k, v)| (k.trim().to_string(), v.trim().to_string()))
                .ok_or_else(|| Error::Config(format!("--set expects KEY=VALUE, got '{s}'")))
        })
        .collect()
}

fn load_config(args: &ConfigArgs, flags: Vec<(String, String)>) -> pace_core::Result<PipelineConfig> {
    let mut overrides = parse_set(&args.set)?;
    overrides.extend(flags);
    let cfg = PipelineConfig::load(args.config.as_deref(), &overrides)?;
    cfg.validate()?;
    Ok(cfg)
}

fn create(path: &Path) -> pace_core::Result<BufWriter<File>> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    File::create(path).map(BufWriter::new).map_err(|e| Error::io(path, e))
}

fn write_json<T: Serialize>(value: &T, path: Option<&Path>) -> pace_core::Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::Format(e.to_string()))?;
    match path {
        Some(p) => {
            let mut w = create(p)?;
            writeln!(w, "{text}")
                .and_then(|_| w.flush())
                .map_err(|e| Error::io(p, e))
        }
        None => {
            println!("{text}");
            Ok(())
        }
    }
}

#[derive(Serialize)]
struct TraceLine<'a> {
    member: usize,
    name: &'a str,
    #[serde(flatten)]
    round: &'a RoundTrace,
}

fn write_traces(path: &Path, lines: &[TraceLine<'_>]) -> pace_core::Result<()> {
    let mut w = create(path)?;
    for line in lines {
        serde_json::to_writer(&mut w, line).map_err(|e| Error::Format(e.to_string()))?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn prepared(bundle: &Path, cfg: &PipelineConfig, normalize: bool) -> pace_core::Result<DataBundle> {
    let b = load_bundle(bundle, &cfg.split)?;
    if normalize {
        b.map_features(l2_normalize)
    } else {
        Ok(b)
    }
}

fn target_accuracy(w: &LinearClassifier, b: &DataBundle) -> pace_core::Result<Option<f64>> {
    b.target_eval_labels
        .as_ref()
        .map(|y| accuracy(w, &b.target_unlabeled, y))
        .transpose()
}

fn synth(args: &SynthArgs) -> CliResult {
    let mut cfg = SynthConfig::default();
    macro_rules! take {
        ($($field:ident => $target:ident),*) => {
            $(if let Some(v) = args.$field { cfg.$target = v; })*
        };
    }
    take!(seed => seed, classes => num_classes, dim => d, n_source => n_source,
        n_target => n_target, separation => separation, rotation => rotation,
        condition_cap => condition_cap, shift => shift, prior_ratio => prior_ratio,
        sigma => member_sigma, shots => shots, val_per_class => val_per_class);
    if args.members == 0 {
        return Err(Error::Config("--members must be >= 1".into()).into());
    }
    let base = generate(&cfg)?;
    if args.members == 1 {
        save_bundle(&base, &args.out)?;
    } else {
        for m in 0..args.members {
            let seed = cfg.seed ^ 0x9E37_79B9_7F4A_7C15u64.wrapping_mul(m as u64 + 1);
            let member = perturb_member(&base, cfg.member_sigma, seed)?;
            save_bundle(&member, args.out.join(format!("member_{m}")))?;
        }
    }
    write_json(&cfg, Some(&args.out.join("synth.json")))?;
    Ok(())
}

#[derive(Serialize)]
struct TrainSummary {
    final_loss: f64,
    source_accuracy: f64,
    target_accuracy: Option<f64>,
    rounds: Option<usize>,
}

fn run(args: &RunArgs) -> CliResult {
    let mut flags = Vec::new();
    if !args.members.is_empty() {
        let joined: Vec<String> = args.members.iter().map(|p| p.display().to_string()).collect();
        flags.push(("members".to_string(), joined.join(",")));
    }
    if let Some(a) = &args.aligner {
        flags.push(("aligner".into(), a.clone()));
    }
    if let Some(p) = args.parallelism {
        flags.push(("parallelism".into(), p.to_string()));
    }
    if let Some(c) = &args.combiners {
        flags.push(("combiners".into(), c.clone()));
    }
    let cfg = load_config(&args.config, flags)?;
    let (report, outputs): (RunReport, Vec<pace_core::Result<MemberOutput>>) = run_pipeline(&cfg)?;
    write_json(&report, args.out.as_deref())?;
    if let Some(path) = &args.trace {
        let lines: Vec<TraceLine<'_>> = outputs
            .iter()
            .filter_map(|o| o.as_ref().ok())
            .flat_map(|o| {
                o.traces.iter().map(|t| TraceLine {
                    member: o.report.member,
                    name: &o.report.name,
                    round: t,
                })
            })
            .collect();
        write_traces(path, &lines)?;
    }
    let failures: Vec<Error> = outputs.into_iter().filter_map(|o| o.err()).collect();
    if failures.is_empty() {
        Ok(())
    } else {
        Err(CliError::Members(failures))
    }
}

fn dispatch(cli: Cli) -> CliResult {
    match cli.command {
        Command::Synth(args) => synth(&args),
        Command::Align { bundle, out, config } => {
            let cfg = load_config(&config, Vec::new())?;
            let b = load_bundle(&bundle, &cfg.split)?;
            save_bundle(&align_bundle(&b, &cfg)?, &out)?;
            Ok(())
        }
        Command::Train {
            bundle,
            out,
            no_normalize,
            config,
        } => {
            let cfg = load_config(&config, Vec::new())?;
            let b = prepared(&bundle, &cfg, !no_normalize)?;
            let lp = &cfg.labeled;
            let gd = GdConfig {
                learning_rate: lp.learning_rate,
                iterations: lp.iters,
                momentum: lp.momentum,
                nesterov: true,
            };
            let run = train_labeled(&b, lp.alpha, lp.beta, &gd)?;
            run.classifier.save(&out)?;
            write_json(
                &TrainSummary {
                    final_loss: run.final_loss,
                    source_accuracy: accuracy(&run.classifier, &b.source.features, &b.source.labels)?,
                    target_accuracy: target_accuracy(&run.classifier, &b)?,
                    rounds: None,
                },
                None,
            )?;
            Ok(())
        }
        Command::Selftrain {
            bundle,
            init,
            out,
            trace,
            no_normalize,
            config,
        } => {
            let cfg = load_config(&config, Vec::new())?;
            let b = prepared(&bundle, &cfg, !no_normalize)?;
            let w0 = LinearClassifier::load(&init)?;
            let (w, traces) = self_train(&w0, &b, &cfg.selftrain)?;
            w.save(&out)?;
            if let Some(path) = trace {
                let name = bundle.display().to_string();
                let lines: Vec<TraceLine<'_>> = traces
                    .iter()
                    .map(|t| TraceLine {
                        member: 0,
                        name: &name,
                        round: t,
                    })
                    .collect();
                write_traces(&path, &lines)?;
            }
            write_json(
                &TrainSummary {
                    final_loss: traces.last().map_or(f64::NAN, |t| t.loss_end),
                    source_accuracy: accuracy(&w, &b.source.features, &b.source.labels)?,
                    target_accuracy: target_accuracy(&w, &b)?,
                    rounds: Some(traces.len()),
                },
                None,
            )?;
            Ok(())
        }
        Command::Run(args) => run(&args),
        Command::Eval {
            bundle,
            weights,
            no_normalize,
            config,
        } => {
            let cfg = load_config(&config, Vec::new())?;
            let b = prepared(&bundle, &cfg, !no_normalize)?;
            let w = LinearClassifier::load(&weights)?;
            let acc = target_accuracy(&w, &b)?
                .ok_or_else(|| Error::Validation(format!("{} has no target evaluation labels", bundle.display())))?;
            write_json(
                &serde_json::json!({ "n": b.target_unlabeled.n(), "accuracy": acc }),
                None,
            )?;
            Ok(())
        }
        Command::Report {
            input,
            strip_timing: strip,
        } => {
            let text = std::fs::read_to_string(&input).map_err(|e| Error::io(&input, e))?;
            let mut value: serde_json::Value =
                serde_json::from_str(&text).map_err(|e| Error::Format(format!("{}: {e}", input.display())))?;
            if strip {
                strip_timing(&mut value);
                println!(
                    "{}",
                    serde_json::to_string_pretty(&value).map_err(|e| Error::Format(e.to_string()))?
                );
            } else {
                let report: RunReport =
                    serde_json::from_value(value).map_err(|e| Error::Format(format!("{}: {e}", input.display())))?;
                print!("{}", summary::render(&report));
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Core(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(e.kind()))
        }
        Err(CliError::Members(errors)) => {
            for e in &errors {
                eprintln!("error: {e}");
            }
            ExitCode::from(exit_code(errors[0].kind()))
        }
    }
}

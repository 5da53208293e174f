//! Command-line surface: every pipeline stage as a subcommand, a shared JSON
//! config file, a global seed, and the end-to-end recipes.
//!
//! Exit codes: 0 success, 1 usage error (bad flags, unknown subcommand or
//! recipe, config parse failure), 2 data error (unreadable or malformed
//! inputs). Every failure prints a one-line diagnostic.

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use prefkit::corpus::{
    balance_by_length, balance_by_task_type, length_bias_stats, load_jsonl, load_requests_jsonl,
    split, write_jsonl,
};
use prefkit::curation::{
    build_antirepeat_dataset, build_filtered_pref_dataset, compute_thresholds, consensus_filter,
    filter_by_perplexity, load_archive_jsonl, select_most_different_pair, ThresholdTable,
};
use prefkit::dpo::{train_dpo, DpoConfig};
use prefkit::ppo::{train_ppo, EarlyStopConfig, NormalizationMode, PpoConfig};
use prefkit::prefmodel::{
    audit_markup, load_pm, ranking_accuracy, save_pm, train_pm, PmTrainConfig,
};
use prefkit::report::{
    aggregate_sbs, load_sbs_jsonl, render_curves_svg, sbs_csv, sbs_svg,
};
use prefkit::textscan::{repeat_rate, scan_response, RepeatConfig, ResponseRecord};
use prefkit::tinylm::{
    init, load_lm, perplexity, sample, save_lm, train_lm, LmConfig, LmTrainConfig, SampleOptions,
};

use crate::config::{resolve, RunConfig};
use crate::recipes::run_recipe;
use crate::CliError;

#[derive(Parser)]
#[command(
    name = "prefkit",
    version,
    about = "Desk-scale preference-learning toolkit: datasets, tiny-LM training, PM/DPO/PPO, perplexity curation, repeat scanning, reports",
    disable_help_subcommand = true
)]
struct Cli {
    /// Global seed; overrides the config file.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// JSON config file mirroring the run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory for recipes.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Dataset statistics, balancing, and splitting.
    Corpus {
        #[command(subcommand)]
        command: CorpusCmd,
    },
    /// Tiny-LM training, sampling, and perplexity.
    Lm {
        #[command(subcommand)]
        command: LmCmd,
    },
    /// Preference-model training, evaluation, and markup audit.
    Pm {
        #[command(subcommand)]
        command: PmCmd,
    },
    /// Direct preference optimization.
    Dpo {
        #[command(subcommand)]
        command: DpoCmd,
    },
    /// PPO fine-tuning against a preference model.
    Ppo {
        #[command(subcommand)]
        command: PpoCmd,
    },
    /// Repetition and cycle scanning.
    Scan {
        #[command(subcommand)]
        command: ScanCmd,
    },
    /// Dataset curation: thresholds, filtering, anti-repeat, pairs, consensus.
    Curate {
        #[command(subcommand)]
        command: CurateCmd,
    },
    /// Side-by-side and curve reports.
    Report {
        #[command(subcommand)]
        command: ReportCmd,
    },
    /// End-to-end experiment recipes.
    Recipe {
        /// One of: pm-balanced-vs-unbalanced, dpo-ood, dpo-filtered,
        /// dpo-generated, dpo-antirepeat, ppo-toy.
        name: String,
    },
}

#[derive(Subcommand)]
enum CorpusCmd {
    /// Length-bias statistics of a preference dataset.
    Stats {
        #[arg(long = "in")]
        input: PathBuf,
        /// Write the per-task CSV here (stdout otherwise).
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Balance a dataset by length direction or task-type size.
    Balance {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out_file: PathBuf,
        /// `length` or `task-type`.
        #[arg(long)]
        by: String,
        #[arg(long)]
        max_ratio: Option<f64>,
    },
    /// Stratified split into fraction-sized parts.
    Split {
        #[arg(long = "in")]
        input: PathBuf,
        /// Comma-separated fractions summing to 1, e.g. `0.8,0.2`.
        #[arg(long)]
        fractions: String,
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long, default_value = "part")]
        prefix: String,
    },
}

#[derive(Args)]
struct LmDims {
    #[arg(long)]
    context_window: Option<usize>,
    #[arg(long)]
    embed_dim: Option<usize>,
    #[arg(long)]
    hidden_dim: Option<usize>,
}

#[derive(Subcommand)]
enum LmCmd {
    /// NLL-train a model on a (request, response) corpus.
    Train {
        /// Corpus JSONL: one {"request", "response"} per line.
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        out_ckpt: PathBuf,
        /// Continue from an existing checkpoint instead of initializing.
        #[arg(long)]
        from_ckpt: Option<PathBuf>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        lr: Option<f64>,
        #[arg(long)]
        batch_size: Option<usize>,
        #[command(flatten)]
        dims: LmDims,
    },
    /// Sample responses to a request.
    Sample {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        request: String,
        #[arg(long)]
        max_len: Option<usize>,
        #[arg(long)]
        temperature: Option<f64>,
        #[arg(long)]
        greedy: bool,
        /// Number of samples (seeds derive from the global seed).
        #[arg(short = 'n', long, default_value_t = 1)]
        count: usize,
    },
    /// Perplexity of a response for a request.
    Ppl {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        request: String,
        #[arg(long)]
        response: String,
    },
}

#[derive(Subcommand)]
enum PmCmd {
    /// Train a preference model from an LM base.
    Train {
        #[arg(long)]
        base: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        out_ckpt: PathBuf,
        #[arg(long)]
        eval: Option<PathBuf>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        lr: Option<f64>,
        #[arg(long)]
        batch_size: Option<usize>,
        #[arg(long)]
        warmup_steps: Option<usize>,
        /// Per-epoch history CSV.
        #[arg(long)]
        history: Option<PathBuf>,
    },
    /// Sliced ranking accuracy on a dataset.
    Eval {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        /// Slice table CSV (task_type,slice,accuracy,support).
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Flag examples whose markup the model contradicts.
    Audit {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        /// Score-gap margin; flags r(worse) - r(better) > tau.
        #[arg(long, default_value_t = 0.0)]
        tau: f64,
        /// Write flags as JSONL here (stdout otherwise).
        #[arg(long)]
        out_file: Option<PathBuf>,
    },
}

#[derive(Subcommand)]
enum DpoCmd {
    /// Train a policy against a frozen copy of the base model.
    Train {
        #[arg(long)]
        base: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        out_ckpt: PathBuf,
        /// Named reference settings: `ood`, `filtered`, or `generated`.
        #[arg(long)]
        preset: Option<String>,
        #[arg(long)]
        beta: Option<f64>,
        #[arg(long)]
        lr: Option<f64>,
        #[arg(long)]
        batch_size: Option<usize>,
        #[arg(long)]
        epochs: Option<usize>,
        /// Per-step history CSV (step,loss,margin,implicit_accuracy).
        #[arg(long)]
        history: Option<PathBuf>,
    },
}

#[derive(Subcommand)]
enum PpoCmd {
    /// PPO fine-tuning loop.
    Train {
        #[arg(long)]
        base: PathBuf,
        #[arg(long)]
        pm: PathBuf,
        /// Request pool JSONL: {"id", "task_type", "request"}.
        #[arg(long)]
        requests: PathBuf,
        /// Held-out (request, response) corpus for the proxy eval metric.
        #[arg(long)]
        proxy_eval: PathBuf,
        #[arg(long)]
        out_ckpt: PathBuf,
        /// Per-batch history CSV.
        #[arg(long)]
        history: Option<PathBuf>,
        #[arg(long)]
        clip_eps: Option<f64>,
        #[arg(long)]
        gamma: Option<f64>,
        #[arg(long)]
        lambda: Option<f64>,
        #[arg(long)]
        beta_kl: Option<f64>,
        #[arg(long)]
        lr_policy: Option<f64>,
        #[arg(long)]
        lr_critic: Option<f64>,
        #[arg(long)]
        rollouts_per_batch: Option<usize>,
        #[arg(long)]
        update_epochs: Option<usize>,
        #[arg(long)]
        max_len: Option<usize>,
        #[arg(long)]
        temperature: Option<f64>,
        #[arg(long)]
        num_batches: Option<usize>,
        /// `batch_advantage`, `moving_score`, or `none`.
        #[arg(long)]
        normalization_mode: Option<String>,
        #[arg(long)]
        moving_decay: Option<f64>,
        /// Enable the early-stop heuristics.
        #[arg(long)]
        early_stop: bool,
        #[arg(long)]
        early_stop_window: Option<usize>,
        #[arg(long)]
        early_stop_min_improvement: Option<f64>,
        #[arg(long)]
        early_stop_proxy_tolerance: Option<f64>,
    },
}

#[derive(Args)]
struct ScanFlags {
    #[arg(long)]
    multi_min_len: Option<usize>,
    #[arg(long)]
    multi_min_count: Option<usize>,
    #[arg(long)]
    tandem_min_len: Option<usize>,
    #[arg(long)]
    tandem_min_count: Option<usize>,
}

impl ScanFlags {
    fn merge(&self, file: RepeatConfig) -> RepeatConfig {
        RepeatConfig {
            multi_min_len: self.multi_min_len.unwrap_or(file.multi_min_len),
            multi_min_count: self.multi_min_count.unwrap_or(file.multi_min_count),
            tandem_min_len: self.tandem_min_len.unwrap_or(file.tandem_min_len),
            tandem_min_count: self.tandem_min_count.unwrap_or(file.tandem_min_count),
        }
    }
}

#[derive(Subcommand)]
enum ScanCmd {
    /// Scan responses for repetitions and cycles.
    Repeats {
        /// Responses JSONL: {"id", "text", "hit_cap"}.
        #[arg(long = "in")]
        input: PathBuf,
        /// Per-response verdict JSONL.
        #[arg(long)]
        verdicts: Option<PathBuf>,
        /// Summary CSV with cycle/repetition rates.
        #[arg(long)]
        summary: Option<PathBuf>,
        #[command(flatten)]
        flags: ScanFlags,
    },
}

#[derive(Subcommand)]
enum CurateCmd {
    /// Per-task-type perplexity bounds from the model's own generations.
    Thresholds {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        requests: PathBuf,
        #[arg(long)]
        out_csv: PathBuf,
        #[arg(long)]
        samples_per_request: Option<usize>,
        #[arg(long)]
        percentile: Option<f64>,
        #[arg(long)]
        max_len: Option<usize>,
        #[arg(long)]
        temperature: Option<f64>,
    },
    /// Keep examples whose both responses fall below the task-type bound.
    Filter {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long = "in")]
        input: PathBuf,
        /// Optional second dataset merged in (deduplicated) before filtering.
        #[arg(long)]
        external: Option<PathBuf>,
        #[arg(long)]
        thresholds: PathBuf,
        #[arg(long)]
        out_file: PathBuf,
        #[arg(long)]
        stats: Option<PathBuf>,
        #[arg(long)]
        max_ratio: Option<f64>,
    },
    /// Build the anti-repeat preference dataset from a generation archive.
    Antirepeat {
        #[arg(long)]
        ckpt: PathBuf,
        /// Archive JSONL: {"id","task_type","request","responses":[{"text","hit_cap"}]}.
        #[arg(long)]
        archive: PathBuf,
        #[arg(long)]
        thresholds: PathBuf,
        #[arg(long)]
        out_file: PathBuf,
        /// Emit every clean x pathological combination per request.
        #[arg(long)]
        all_pairs: bool,
        #[command(flatten)]
        flags: ScanFlags,
    },
    /// Select the two most different responses per archive entry.
    Pairs {
        #[arg(long)]
        archive: PathBuf,
        #[arg(long)]
        out_file: PathBuf,
    },
    /// Keep unanimously marked examples and apply the agreed orientation.
    Consensus {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out_file: PathBuf,
        #[arg(long, default_value_t = 3)]
        overlap: usize,
    },
}

#[derive(Subcommand)]
enum ReportCmd {
    /// Aggregate side-by-side verdicts into CSV and SVG.
    Sbs {
        /// Records JSONL: {"id", "task_type", "verdict": "A"|"B"|"tie"}.
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out_csv: PathBuf,
        #[arg(long)]
        out_svg: Option<PathBuf>,
        #[arg(long, default_value = "A")]
        label_a: String,
        #[arg(long, default_value = "B")]
        label_b: String,
    },
    /// Render history columns as polyline curves.
    Curves {
        #[arg(long)]
        history: PathBuf,
        /// Comma-separated column names.
        #[arg(long)]
        columns: String,
        #[arg(long)]
        out_svg: PathBuf,
    },
}

/// One corpus line for `lm train`.
#[derive(Debug, Serialize, Deserialize)]
struct TextPair {
    request: String,
    response: String,
}

/// Verdict record emitted by `scan repeats`.
#[derive(Debug, Serialize)]
struct VerdictRecord<'a> {
    id: &'a str,
    multiple: bool,
    tandem: bool,
    cycle: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    witness: Option<serde_json::Value>,
}

/// Pair record emitted by `curate pairs`.
#[derive(Debug, Serialize)]
struct PairRecord<'a> {
    id: &'a str,
    task_type: prefkit::corpus::TaskType,
    request: &'a str,
    a: &'a str,
    b: &'a str,
}

fn data<E: std::fmt::Display>(e: E) -> CliError {
    CliError::Data(e.to_string())
}

fn load_corpus_jsonl(path: &PathBuf) -> Result<Vec<(String, String)>, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Data(format!("`{}`: {e}", path.display())))?;
    let mut pairs = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        if line.is_empty() {
            continue;
        }
        let pair: TextPair = serde_json::from_str(line)
            .map_err(|e| CliError::Data(format!("line {}: {e}", idx + 1)))?;
        pairs.push((pair.request, pair.response));
    }
    Ok(pairs)
}

fn load_response_records(path: &PathBuf) -> Result<Vec<ResponseRecord>, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Data(format!("`{}`: {e}", path.display())))?;
    let mut records = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        if line.is_empty() {
            continue;
        }
        let rec: ResponseRecord = serde_json::from_str(line)
            .map_err(|e| CliError::Data(format!("line {}: {e}", idx + 1)))?;
        records.push(rec);
    }
    Ok(records)
}

fn write_text(path: &PathBuf, text: &str) -> Result<(), CliError> {
    std::fs::write(path, text).map_err(|e| CliError::Data(format!("`{}`: {e}", path.display())))
}

/// Parses and dispatches; returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            // Help and version requests are successes, not usage errors.
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli) {
        Ok(()) => 0,
        Err(CliError::Usage(msg)) => {
            eprintln!("usage error: {msg}");
            1
        }
        Err(CliError::Data(msg)) => {
            eprintln!("data error: {msg}");
            2
        }
    }
}

fn dispatch(cli: Cli) -> Result<(), CliError> {
    let file = RunConfig::load_opt(cli.config.as_ref())?;
    let seed = resolve(cli.seed, file.seed, 0);
    match cli.command {
        Command::Corpus { command } => corpus_cmd(command, seed),
        Command::Lm { command } => lm_cmd(command, &file, seed),
        Command::Pm { command } => pm_cmd(command, &file, seed),
        Command::Dpo { command } => dpo_cmd(command, &file, seed),
        Command::Ppo { command } => ppo_cmd(command, &file, seed),
        Command::Scan { command } => scan_cmd(command, &file),
        Command::Curate { command } => curate_cmd(command, &file, seed),
        Command::Report { command } => report_cmd(command),
        Command::Recipe { name } => {
            let out_root = cli.out.or(file.out).unwrap_or_else(|| PathBuf::from("out"));
            let out_dir = out_root.join(&name);
            run_recipe(&name, &out_dir, seed)?;
            println!("recipe {name}: artifacts in {}", out_dir.display());
            Ok(())
        }
    }
}

fn corpus_cmd(cmd: CorpusCmd, seed: u64) -> Result<(), CliError> {
    match cmd {
        CorpusCmd::Stats { input, csv } => {
            let ds = load_jsonl(&input).map_err(data)?;
            let stats = length_bias_stats(&ds);
            let table = stats.to_csv();
            match csv {
                Some(path) => write_text(&path, &table)?,
                None => print!("{table}"),
            }
            Ok(())
        }
        CorpusCmd::Balance {
            input,
            out_file,
            by,
            max_ratio,
        } => {
            let ds = load_jsonl(&input).map_err(data)?;
            let balanced = match by.as_str() {
                "length" => balance_by_length(&ds, seed),
                "task-type" => {
                    balance_by_task_type(&ds, max_ratio.unwrap_or(2.0), seed).map_err(data)?
                }
                other => {
                    return Err(CliError::Usage(format!(
                        "--by must be `length` or `task-type`, got `{other}`"
                    )))
                }
            };
            write_jsonl(&balanced, &out_file).map_err(data)?;
            println!("kept {} of {} examples", balanced.len(), ds.len());
            Ok(())
        }
        CorpusCmd::Split {
            input,
            fractions,
            out_dir,
            prefix,
        } => {
            let fracs: Vec<f64> = fractions
                .split(',')
                .map(|s| {
                    s.trim()
                        .parse::<f64>()
                        .map_err(|e| CliError::Usage(format!("--fractions `{s}`: {e}")))
                })
                .collect::<Result<_, _>>()?;
            let ds = load_jsonl(&input).map_err(data)?;
            let parts = split(&ds, &fracs, seed).map_err(data)?;
            std::fs::create_dir_all(&out_dir).map_err(data)?;
            for (i, part) in parts.iter().enumerate() {
                let path = out_dir.join(format!("{prefix}{i}.jsonl"));
                write_jsonl(part, &path).map_err(data)?;
                println!("{}: {} examples", path.display(), part.len());
            }
            Ok(())
        }
    }
}

fn lm_cmd(cmd: LmCmd, file: &RunConfig, seed: u64) -> Result<(), CliError> {
    match cmd {
        LmCmd::Train {
            corpus,
            out_ckpt,
            from_ckpt,
            epochs,
            lr,
            batch_size,
            dims,
        } => {
            let pairs = load_corpus_jsonl(&corpus)?;
            let file_lm = file.lm();
            let mut params: prefkit::LmParams = match from_ckpt {
                Some(path) => load_lm(&path).map_err(data)?,
                None => init(LmConfig {
                    context_window: dims.context_window.unwrap_or(file_lm.context_window),
                    embed_dim: dims.embed_dim.unwrap_or(file_lm.embed_dim),
                    hidden_dim: dims.hidden_dim.unwrap_or(file_lm.hidden_dim),
                    seed,
                })
                .map_err(data)?,
            };
            let file_train = file.lm_train();
            let config = LmTrainConfig {
                lr: lr.unwrap_or(file_train.lr),
                batch_size: batch_size.unwrap_or(file_train.batch_size),
                epochs: epochs.unwrap_or(file_train.epochs),
                seed,
            };
            let losses = train_lm(&mut params, &pairs, &config);
            save_lm(&params, &out_ckpt).map_err(data)?;
            for (epoch, loss) in losses.iter().enumerate() {
                println!("epoch {epoch}: loss {loss:.6}");
            }
            Ok(())
        }
        LmCmd::Sample {
            ckpt,
            request,
            max_len,
            temperature,
            greedy,
            count,
        } => {
            let params: prefkit::LmParams = load_lm(&ckpt).map_err(data)?;
            let file_sample = file.sample();
            let options = SampleOptions {
                max_len: max_len.unwrap_or(file_sample.max_len),
                temperature: temperature.unwrap_or(file_sample.temperature),
                greedy: greedy || file_sample.greedy,
            };
            for i in 0..count {
                let s = sample(&params, &request, options, prefkit::ppo::derive_seed(seed, i as u64));
                let line = serde_json::json!({"text": s.text, "hit_cap": s.hit_cap});
                println!("{line}");
            }
            Ok(())
        }
        LmCmd::Ppl {
            ckpt,
            request,
            response,
        } => {
            let params: prefkit::LmParams = load_lm(&ckpt).map_err(data)?;
            let ppl = perplexity(&params, &request, &response).map_err(data)?;
            println!("{ppl}");
            Ok(())
        }
    }
}

fn pm_cmd(cmd: PmCmd, file: &RunConfig, seed: u64) -> Result<(), CliError> {
    match cmd {
        PmCmd::Train {
            base,
            dataset,
            out_ckpt,
            eval,
            epochs,
            lr,
            batch_size,
            warmup_steps,
            history,
        } => {
            let basic: prefkit::LmParams = load_lm(&base).map_err(data)?;
            let train = load_jsonl(&dataset).map_err(data)?;
            let eval_ds = eval.map(|p| load_jsonl(&p)).transpose().map_err(data)?;
            let file_pm = file.pm_train();
            let config = PmTrainConfig {
                lr: lr.unwrap_or(file_pm.lr),
                batch_size: batch_size.unwrap_or(file_pm.batch_size),
                epochs: epochs.unwrap_or(file_pm.epochs),
                seed,
                head_only_warmup_steps: warmup_steps.unwrap_or(file_pm.head_only_warmup_steps),
            };
            let (pm, stats) = train_pm(&basic, &train, eval_ds.as_ref(), &config);
            save_pm(&pm, &out_ckpt).map_err(data)?;
            if let Some(path) = history {
                let mut csv = String::from("epoch,train_loss,eval_accuracy\n");
                for s in &stats {
                    let acc = s
                        .eval_accuracy
                        .map(|a| format!("{a:.4}"))
                        .unwrap_or_default();
                    csv.push_str(&format!("{},{:.6},{}\n", s.epoch, s.train_loss, acc));
                }
                write_text(&path, &csv)?;
            }
            for s in &stats {
                match s.eval_accuracy {
                    Some(acc) => {
                        println!("epoch {}: loss {:.6} eval {:.4}", s.epoch, s.train_loss, acc)
                    }
                    None => println!("epoch {}: loss {:.6}", s.epoch, s.train_loss),
                }
            }
            Ok(())
        }
        PmCmd::Eval { ckpt, dataset, csv } => {
            let pm: prefkit::PmParams = load_pm(&ckpt).map_err(data)?;
            let ds = load_jsonl(&dataset).map_err(data)?;
            let acc = ranking_accuracy(&pm, &ds);
            println!("overall_accuracy={:.4} examples={}", acc.overall, acc.examples);
            if let Some(path) = csv {
                write_text(&path, &acc.slices.to_csv())?;
            }
            Ok(())
        }
        PmCmd::Audit {
            ckpt,
            dataset,
            tau,
            out_file,
        } => {
            let pm: prefkit::PmParams = load_pm(&ckpt).map_err(data)?;
            let ds = load_jsonl(&dataset).map_err(data)?;
            let flags = audit_markup(&pm, &ds, tau);
            let mut lines = String::new();
            for flag in &flags {
                lines.push_str(&serde_json::to_string(flag).map_err(data)?);
                lines.push('\n');
            }
            match out_file {
                Some(path) => write_text(&path, &lines)?,
                None => print!("{lines}"),
            }
            eprintln!("flagged {} of {} examples at tau={tau}", flags.len(), ds.len());
            Ok(())
        }
    }
}

fn dpo_cmd(cmd: DpoCmd, file: &RunConfig, seed: u64) -> Result<(), CliError> {
    match cmd {
        DpoCmd::Train {
            base,
            dataset,
            out_ckpt,
            preset,
            beta,
            lr,
            batch_size,
            epochs,
            history,
        } => {
            let baseline = match preset {
                Some(name) => DpoConfig::preset(&name).ok_or_else(|| {
                    CliError::Usage(format!(
                        "unknown preset `{name}` (expected ood, filtered, or generated)"
                    ))
                })?,
                None => file.dpo(),
            };
            let basic: prefkit::LmParams = load_lm(&base).map_err(data)?;
            let ds = load_jsonl(&dataset).map_err(data)?;
            let config = DpoConfig {
                beta: beta.unwrap_or(baseline.beta),
                lr: lr.unwrap_or(baseline.lr),
                batch_size: batch_size.unwrap_or(baseline.batch_size),
                epochs: epochs.unwrap_or(baseline.epochs),
                seed,
            };
            config.validate().map_err(CliError::Usage)?;
            let (policy, hist) = train_dpo(&basic, &ds, &config);
            save_lm(&policy, &out_ckpt).map_err(data)?;
            if let Some(path) = history {
                write_text(&path, &hist.to_csv())?;
            }
            for e in &hist.epochs {
                println!(
                    "epoch {}: loss {:.6} margin {:.4} implicit_accuracy {:.4}",
                    e.epoch, e.mean_loss, e.mean_margin, e.implicit_accuracy
                );
            }
            Ok(())
        }
    }
}

fn ppo_cmd(cmd: PpoCmd, file: &RunConfig, seed: u64) -> Result<(), CliError> {
    match cmd {
        PpoCmd::Train {
            base,
            pm,
            requests,
            proxy_eval,
            out_ckpt,
            history,
            clip_eps,
            gamma,
            lambda,
            beta_kl,
            lr_policy,
            lr_critic,
            rollouts_per_batch,
            update_epochs,
            max_len,
            temperature,
            num_batches,
            normalization_mode,
            moving_decay,
            early_stop,
            early_stop_window,
            early_stop_min_improvement,
            early_stop_proxy_tolerance,
        } => {
            let basic: prefkit::LmParams = load_lm(&base).map_err(data)?;
            let pm: prefkit::PmParams = load_pm(&pm).map_err(data)?;
            let pool = load_requests_jsonl(&requests).map_err(data)?;
            let proxy = load_corpus_jsonl(&proxy_eval)?;
            let base_cfg = file.ppo();
            let mode = match normalization_mode.as_deref() {
                None => base_cfg.normalization_mode,
                Some("batch_advantage") => NormalizationMode::BatchAdvantage,
                Some("moving_score") => NormalizationMode::MovingScore,
                Some("none") => NormalizationMode::None,
                Some(other) => {
                    return Err(CliError::Usage(format!(
                        "--normalization-mode must be batch_advantage, moving_score, or none, got `{other}`"
                    )))
                }
            };
            let es_defaults = EarlyStopConfig::default();
            let early = if early_stop
                || early_stop_window.is_some()
                || early_stop_min_improvement.is_some()
                || early_stop_proxy_tolerance.is_some()
            {
                Some(EarlyStopConfig {
                    window: early_stop_window.unwrap_or(es_defaults.window),
                    min_improvement: early_stop_min_improvement
                        .unwrap_or(es_defaults.min_improvement),
                    proxy_tolerance: early_stop_proxy_tolerance
                        .unwrap_or(es_defaults.proxy_tolerance),
                    lr_decay: es_defaults.lr_decay,
                })
            } else {
                base_cfg.early_stop
            };
            let config = PpoConfig {
                clip_eps: clip_eps.unwrap_or(base_cfg.clip_eps),
                gamma: gamma.unwrap_or(base_cfg.gamma),
                lambda: lambda.unwrap_or(base_cfg.lambda),
                beta_kl: beta_kl.unwrap_or(base_cfg.beta_kl),
                lr_policy: lr_policy.unwrap_or(base_cfg.lr_policy),
                lr_critic: lr_critic.unwrap_or(base_cfg.lr_critic),
                rollouts_per_batch: rollouts_per_batch.unwrap_or(base_cfg.rollouts_per_batch),
                update_epochs: update_epochs.unwrap_or(base_cfg.update_epochs),
                max_len: max_len.unwrap_or(base_cfg.max_len),
                temperature: temperature.unwrap_or(base_cfg.temperature),
                num_batches: num_batches.unwrap_or(base_cfg.num_batches),
                normalization_mode: mode,
                moving_decay: moving_decay.unwrap_or(base_cfg.moving_decay),
                seed,
                early_stop: early,
            };
            config.validate().map_err(CliError::Usage)?;
            let (policy, hist) = train_ppo(&basic, &pm, &pool, &proxy, &config);
            save_lm(&policy, &out_ckpt).map_err(data)?;
            if let Some(path) = history {
                write_text(&path, &hist.to_csv())?;
            }
            if let Some(last) = hist.rows.last() {
                println!(
                    "ran {} batches: mean_pm_score {:.4}, mean_response_len {:.2}",
                    hist.rows.len(),
                    last.mean_pm_score,
                    last.mean_response_len
                );
            }
            Ok(())
        }
    }
}

fn scan_cmd(cmd: ScanCmd, file: &RunConfig) -> Result<(), CliError> {
    match cmd {
        ScanCmd::Repeats {
            input,
            verdicts,
            summary,
            flags,
        } => {
            let config = flags.merge(file.scan());
            config.validate().map_err(CliError::Usage)?;
            let records = load_response_records(&input)?;
            if let Some(path) = verdicts {
                let mut lines = String::new();
                for rec in &records {
                    let report = scan_response(&rec.text, rec.hit_cap, &config);
                    let witness = match (&report.multiple, &report.tandem) {
                        (None, None) => None,
                        (multiple, tandem) => Some(serde_json::json!({
                            "multiple": multiple,
                            "tandem": tandem,
                        })),
                    };
                    let verdict = VerdictRecord {
                        id: &rec.id,
                        multiple: report.multiple.is_some(),
                        tandem: report.tandem.is_some(),
                        cycle: report.cycle,
                        witness,
                    };
                    lines.push_str(&serde_json::to_string(&verdict).map_err(data)?);
                    lines.push('\n');
                }
                write_text(&path, &lines)?;
            }
            let rates = repeat_rate(
                records.iter().map(|r| (r.text.as_str(), r.hit_cap)),
                &config,
            );
            let csv = rates.to_csv();
            match summary {
                Some(path) => write_text(&path, &csv)?,
                None => print!("{csv}"),
            }
            Ok(())
        }
    }
}

fn curate_cmd(cmd: CurateCmd, file: &RunConfig, seed: u64) -> Result<(), CliError> {
    match cmd {
        CurateCmd::Thresholds {
            ckpt,
            requests,
            out_csv,
            samples_per_request,
            percentile,
            max_len,
            temperature,
        } => {
            let lm: prefkit::LmParams = load_lm(&ckpt).map_err(data)?;
            let reqs = load_requests_jsonl(&requests).map_err(data)?;
            let cur = file.curation();
            let file_sample = file.sample();
            let options = SampleOptions {
                max_len: max_len.unwrap_or(file_sample.max_len),
                temperature: temperature.unwrap_or(file_sample.temperature),
                greedy: false,
            };
            let table = compute_thresholds(
                &lm,
                &reqs,
                samples_per_request.unwrap_or(cur.samples_per_request),
                percentile.unwrap_or(cur.percentile),
                options,
                seed,
            )
            .map_err(data)?;
            table.write_csv(&out_csv).map_err(data)?;
            println!("thresholds for {} task types", table.rows().len());
            Ok(())
        }
        CurateCmd::Filter {
            ckpt,
            input,
            external,
            thresholds,
            out_file,
            stats,
            max_ratio,
        } => {
            let lm: prefkit::LmParams = load_lm(&ckpt).map_err(data)?;
            let own = load_jsonl(&input).map_err(data)?;
            let table = ThresholdTable::read_csv(&thresholds).map_err(data)?;
            let cur = file.curation();
            let (kept, fstats) = match external {
                Some(path) => {
                    let ext = load_jsonl(&path).map_err(data)?;
                    build_filtered_pref_dataset(
                        &lm,
                        &own,
                        &ext,
                        &table,
                        max_ratio.unwrap_or(cur.max_ratio),
                        seed,
                    )
                    .map_err(data)?
                }
                None => filter_by_perplexity(&lm, &own, &table),
            };
            write_jsonl(&kept, &out_file).map_err(data)?;
            if let Some(path) = stats {
                write_text(&path, &fstats.to_csv())?;
            }
            println!(
                "kept {} of {} examples ({} uncovered)",
                fstats.total_kept(),
                fstats.total_in() + fstats.uncovered,
                fstats.uncovered
            );
            Ok(())
        }
        CurateCmd::Antirepeat {
            ckpt,
            archive,
            thresholds,
            out_file,
            all_pairs,
            flags,
        } => {
            let lm: prefkit::LmParams = load_lm(&ckpt).map_err(data)?;
            let entries = load_archive_jsonl(&archive).map_err(data)?;
            let table = ThresholdTable::read_csv(&thresholds).map_err(data)?;
            let scan = flags.merge(file.scan());
            scan.validate().map_err(CliError::Usage)?;
            let (ds, fstats) = build_antirepeat_dataset(&entries, &scan, &lm, &table, all_pairs);
            write_jsonl(&ds, &out_file).map_err(data)?;
            println!(
                "built {} anti-repeat examples ({} survived the perplexity filter)",
                fstats.total_in(),
                ds.len()
            );
            Ok(())
        }
        CurateCmd::Pairs { archive, out_file } => {
            let entries = load_archive_jsonl(&archive).map_err(data)?;
            let mut lines = String::new();
            let mut emitted = 0usize;
            for entry in &entries {
                let texts: Vec<String> = entry
                    .responses
                    .iter()
                    .map(|r| r.text.clone())
                    .filter(|t| !t.is_empty())
                    .collect();
                if texts.len() < 2 {
                    continue;
                }
                let (a, b) = select_most_different_pair(&texts).map_err(data)?;
                let rec = PairRecord {
                    id: &entry.id,
                    task_type: entry.task_type,
                    request: &entry.request,
                    a: &texts[a],
                    b: &texts[b],
                };
                lines.push_str(&serde_json::to_string(&rec).map_err(data)?);
                lines.push('\n');
                emitted += 1;
            }
            write_text(&out_file, &lines)?;
            println!("selected pairs for {emitted} of {} requests", entries.len());
            Ok(())
        }
        CurateCmd::Consensus {
            input,
            out_file,
            overlap,
        } => {
            let ds = load_jsonl(&input).map_err(data)?;
            let kept = consensus_filter(&ds, overlap);
            write_jsonl(&kept, &out_file).map_err(data)?;
            println!("kept {} of {} examples", kept.len(), ds.len());
            Ok(())
        }
    }
}

fn report_cmd(cmd: ReportCmd) -> Result<(), CliError> {
    match cmd {
        ReportCmd::Sbs {
            input,
            out_csv,
            out_svg,
            label_a,
            label_b,
        } => {
            let records = load_sbs_jsonl(&input).map_err(data)?;
            let report = aggregate_sbs(&records);
            write_text(&out_csv, &sbs_csv(&report))?;
            if let Some(path) = out_svg {
                write_text(&path, &sbs_svg(&report, &label_a, &label_b))?;
            }
            if let Some((a, b)) = report.overall.shares() {
                println!("overall: {label_a} {a:.4} vs {label_b} {b:.4}");
            } else {
                println!("overall: no decided verdicts");
            }
            Ok(())
        }
        ReportCmd::Curves {
            history,
            columns,
            out_svg,
        } => {
            let cols: Vec<&str> = columns.split(',').map(str::trim).collect();
            render_curves_svg(&history, &cols, &out_svg).map_err(data)?;
            println!("rendered {} curves to {}", cols.len(), out_svg.display());
            Ok(())
        }
    }
}

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Parser, Subcommand, ValueEnum};
use serde_json::json;

use omni_core::compression::{AudioTokenSeq, Compressor, DepthwiseKernel, PoolMode, ENCODER_TOKENS_PER_SECOND};
use omni_core::grpo::train_toy_policy;
use omni_core::harness::config::seed_from_env;
use omni_core::harness::io::{
    load_dataset, load_heads, load_meta, save_dataset, save_heads, sidecar_path, write_matrix, write_sidecar, SidecarEntry,
    TimedBatch,
};
use omni_core::harness::selftest;
use omni_core::harness::{evaluate_retrieval, gen_synthetic_pairs, run_ablation, train_on_synthetic, ExperimentConfig};
use omni_core::numerics::Matrix;
use omni_core::sequencing::{assemble_sequence, group_index, Modality, TimedEmbedding};
use omni_core::temporal::Crte;
use omni_core::OmniError;

const SEQUENCE_FILE: &str = "sequence.omni";

#[derive(Parser)]
#[command(name = "omni", version, about = "Temporal vision/audio alignment experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic paired dataset.
    GenData {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train linear alignment heads on synthetic pairs.
    TrainAlign {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Top-1 cross-modal retrieval of saved heads on a dataset.
    EvalRetrieval {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
    },
    /// Interleave each pair into time groups.
    Teg {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        tg: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Apply the rotary time embedding to every row.
    Crte {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Halve the audio token rate.
    Compress {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long, value_enum)]
        mode: CompressMode,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the toy multiple-choice policy and write its learning curve.
    GrpoTrain {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        steps: Option<usize>,
        #[arg(long = "group-size", short = 'g')]
        group_size: Option<usize>,
        #[arg(long)]
        epsilon: Option<f64>,
        #[arg(long)]
        beta: Option<f64>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Run the four-variant ablation and write a JSON report.
    Ablate {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the built-in invariant checks.
    Selftest,
}

#[derive(Clone, Copy, ValueEnum)]
enum CompressMode {
    Max,
    Avg,
    Conv,
}

fn load_config(path: Option<&Path>) -> anyhow::Result<ExperimentConfig> {
    match path {
        Some(p) => ExperimentConfig::load(p).with_context(|| format!("loading {}", p.display())),
        None => {
            let mut cfg = ExperimentConfig::default();
            if let Some(seed) = seed_from_env()? {
                cfg.override_seed(seed);
            }
            cfg.validate()?;
            Ok(cfg)
        }
    }
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> anyhow::Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn print_json(value: &serde_json::Value) {
    println!("{}", serde_json::to_string(value).expect("plain JSON value"));
}

fn timed_stream(rows: &Matrix, times: &[f64], modality: Modality) -> omni_core::Result<Vec<TimedEmbedding>> {
    rows.row_iter()
        .zip(times)
        .enumerate()
        .map(|(i, (r, &t))| TimedEmbedding::new(r, t, modality, i))
        .collect()
}

fn gen_data(config: Option<&Path>, out: &Path) -> anyhow::Result<()> {
    let cfg = load_config(config)?;
    let pairs = gen_synthetic_pairs(&cfg.data)?;
    save_dataset(out, &pairs.timed(), &json!({ "data": cfg.data }))?;
    print_json(&json!({ "pairs": pairs.batch.k(), "dim": pairs.batch.dim(), "out": out }));
    Ok(())
}

fn train_align(config: Option<&Path>, out: &Path) -> anyhow::Result<()> {
    let cfg = load_config(config)?;
    let run = train_on_synthetic(&cfg.data, &cfg.align)?;
    save_heads(out, &run.heads)?;
    fs::write(out.join("curve.csv"), run.to_csv())?;
    let last = run.final_point();
    print_json(&json!({
        "epochs": cfg.align.epochs,
        "first_epoch_at_0_9": run.first_epoch_reaching(0.9),
        "final_loss": last.loss,
        "eval_v2a": last.eval_v2a,
        "eval_a2v": last.eval_a2v,
    }));
    Ok(())
}

fn eval_retrieval(model: &Path, data: &Path) -> anyhow::Result<()> {
    let heads = load_heads(model).with_context(|| format!("reading model {}", model.display()))?;
    let dataset = load_dataset(data).with_context(|| format!("reading dataset {}", data.display()))?;
    let (v2a, a2v) = evaluate_retrieval(&heads, &dataset.batch)?;
    print_json(&json!({ "k": dataset.batch.k(), "v2a": v2a, "a2v": a2v }));
    Ok(())
}

fn teg(input: &Path, t_g: f64, out: &Path) -> anyhow::Result<()> {
    let data = load_dataset(input).with_context(|| format!("reading dataset {}", input.display()))?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut entries = Vec::new();
    for (sample, (v, a)) in data.batch.vision.iter().zip(&data.batch.audio).enumerate() {
        let vision = timed_stream(v, &data.vision_times[sample], Modality::Vision)?;
        let audio = timed_stream(a, &data.audio_times[sample], Modality::Audio)?;
        for e in assemble_sequence(vision, audio, t_g)?.into_flat() {
            entries.push(SidecarEntry {
                sample,
                group_index: Some(group_index(e.t, t_g)),
                modality: e.modality,
                source_index: e.source_index,
                t: e.t,
            });
            rows.push(e.vec.into_inner());
        }
    }
    fs::create_dir_all(out)?;
    let path = out.join(SEQUENCE_FILE);
    write_matrix(&path, &Matrix::from_rows(&rows, data.batch.dim())?)?;
    write_sidecar(sidecar_path(&path), &entries)?;
    write_json(&out.join("meta.json"), &json!({ "source": load_meta(input)?, "t_g": t_g }))?;
    print_json(&json!({ "tokens": entries.len(), "out": out }));
    Ok(())
}

fn crte(input: &Path, config: Option<&Path>, out: &Path) -> anyhow::Result<()> {
    let cfg = load_config(config)?;
    let data = load_dataset(input).with_context(|| format!("reading dataset {}", input.display()))?;
    let crte = Crte::new(cfg.crte)?;
    let apply = |seqs: &[Matrix], times: &[Vec<f64>]| -> omni_core::Result<Vec<Matrix>> {
        seqs.iter().zip(times).map(|(m, t)| crte.apply_rows(m, t)).collect()
    };
    let batch = omni_core::alignnet::OmniBatch::new(
        apply(&data.batch.vision, &data.vision_times)?,
        apply(&data.batch.audio, &data.audio_times)?,
    )?;
    let rotated = TimedBatch::new(batch, data.vision_times, data.audio_times)?;
    save_dataset(out, &rotated, &json!({ "source": load_meta(input)?, "crte": cfg.crte }))?;
    print_json(&json!({ "pairs": rotated.batch.k(), "out": out }));
    Ok(())
}

fn compress(input: &Path, mode: CompressMode, out: &Path) -> anyhow::Result<()> {
    let data = load_dataset(input).with_context(|| format!("reading dataset {}", input.display()))?;
    let dim = data.batch.dim();
    let (compressor, name) = match mode {
        CompressMode::Max => (Compressor::Pool(PoolMode::Max), "max"),
        CompressMode::Avg => (Compressor::Pool(PoolMode::Avg), "avg"),
        CompressMode::Conv => (Compressor::Conv(DepthwiseKernel::averaging(dim)), "conv"),
    };
    let mut audio = Vec::with_capacity(data.batch.k());
    let mut audio_times = Vec::with_capacity(data.batch.k());
    let mut before = 0;
    for (m, times) in data.batch.audio.iter().zip(&data.audio_times) {
        before += m.rows();
        let seq = AudioTokenSeq::new(m.clone(), ENCODER_TOKENS_PER_SECOND)?;
        audio.push(compressor.apply(&seq)?.into_tokens());
        // each output token keeps the timestamp of its window's first input
        audio_times.push(times.iter().step_by(2).copied().collect());
    }
    let after: usize = audio.iter().map(Matrix::rows).sum();
    let batch = omni_core::alignnet::OmniBatch::new(data.batch.vision, audio)?;
    let compressed = TimedBatch::new(batch, data.vision_times, audio_times)?;
    save_dataset(out, &compressed, &json!({ "source": load_meta(input)?, "compression": name }))?;
    print_json(&json!({ "audio_tokens_before": before, "audio_tokens_after": after, "out": out }));
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn grpo_train(
    config: Option<&Path>,
    out: &Path,
    steps: Option<usize>,
    group_size: Option<usize>,
    epsilon: Option<f64>,
    beta: Option<f64>,
    seed: Option<u64>,
) -> anyhow::Result<()> {
    let mut cfg = load_config(config)?.grpo;
    cfg.steps = steps.unwrap_or(cfg.steps);
    cfg.g = group_size.unwrap_or(cfg.g);
    cfg.epsilon = epsilon.unwrap_or(cfg.epsilon);
    cfg.beta = beta.unwrap_or(cfg.beta);
    cfg.seed = seed.unwrap_or(cfg.seed);
    let (_, curve) = train_toy_policy(&cfg)?;
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    fs::write(out, curve.to_csv()).with_context(|| format!("writing {}", out.display()))?;
    let last = curve.last().expect("at least one step");
    print_json(&json!({
        "steps": cfg.steps,
        "first_step_accuracy_0_9": curve.first_step_reaching(0.9, |p| p.mean_accuracy_reward),
        "first_step_format_0_99": curve.first_step_reaching(0.99, |p| p.mean_format_reward),
        "final_accuracy_reward": last.mean_accuracy_reward,
        "final_format_reward": last.mean_format_reward,
    }));
    Ok(())
}

fn ablate(config: Option<&Path>, out: &Path) -> anyhow::Result<()> {
    let cfg = load_config(config)?;
    let report = run_ablation(&cfg.ablation)?;
    write_json(out, &report)?;
    for row in &report.rows {
        println!(
            "{:<22} top1 {:.4}  order {:.4}",
            row.variant, row.temporal_retrieval_top1, row.order_accuracy
        );
    }
    println!("margin {:.4} (control {:.4}, noise band {:.4})", report.margin, report.control_margin, report.noise_band);
    Ok(())
}

fn run_selftest() -> anyhow::Result<()> {
    let results = selftest::run_all();
    for r in &results {
        match &r.detail {
            None => println!("PASS {}", r.name),
            Some(d) => println!("FAIL {}: {d}", r.name),
        }
    }
    let failed = results.iter().filter(|r| !r.passed).count();
    if failed > 0 {
        bail!("{failed} of {} checks failed", results.len());
    }
    Ok(())
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::GenData { config, out } => gen_data(config.as_deref(), &out),
        Command::TrainAlign { config, out } => train_align(config.as_deref(), &out),
        Command::EvalRetrieval { model, data } => eval_retrieval(&model, &data),
        Command::Teg { input, tg, out } => teg(&input, tg, &out),
        Command::Crte { input, config, out } => crte(&input, config.as_deref(), &out),
        Command::Compress { input, mode, out } => compress(&input, mode, &out),
        Command::GrpoTrain {
            config,
            out,
            steps,
            group_size,
            epsilon,
            beta,
            seed,
        } => grpo_train(config.as_deref(), &out, steps, group_size, epsilon, beta, seed),
        Command::Ablate { config, out } => ablate(config.as_deref(), &out),
        Command::Selftest => run_selftest(),
    }
}

fn error_code(err: &anyhow::Error) -> &'static str {
    err.chain()
        .find_map(|e| e.downcast_ref::<OmniError>().map(OmniError::code))
        .or_else(|| err.chain().any(|e| e.is::<std::io::Error>()).then_some("io"))
        .unwrap_or("failed")
}

fn report(code: &str, message: String) {
    eprintln!("{}", json!({ "error": code, "message": message }));
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            report("usage", e.to_string().trim_end().to_string());
            return ExitCode::from(2);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            report(error_code(&e), format!("{e:#}"));
            ExitCode::FAILURE
        }
    }
}

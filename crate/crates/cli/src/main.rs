//! `preqlab` — generate synthetic meta-datasets, meta-train in-context
//! learners, trace prequential coding curves, probe hosted models, compress
//! episodes to real bitstreams, and render figures.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use clap::{Parser, Subcommand};

use preqlab::codec;
use preqlab::eval::eval_curve;
use preqlab::exp::{self, ExperimentConfig};
use preqlab::hmm::HmmHyper;
use preqlab::io;
use preqlab::probe::{
    probe_curve, BackendDescriptor, HttpBackend, OracleBackend, ProbeBackend, ProbeConfig,
    UniformBackend,
};
use preqlab::store::{curve_to_rows, ResultsStore};
use preqlab::tasks::{Split, TaskParams, TaskSpec};

#[derive(Parser)]
#[command(name = "preqlab", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate and persist the train/eval meta-datasets of a config.
    Generate {
        #[arg(long)]
        config: PathBuf,
        /// Output directory (defaults to the config's output_dir).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Meta-train every (objective, seed) unit; writes checkpoints and traces.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Override the config's seed list, e.g. --seeds 0,1,2.
        #[arg(long, value_delimiter = ',')]
        seeds: Option<Vec<u64>>,
    },
    /// Evaluate stored checkpoints into coding-curve rows.
    Eval {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        store: PathBuf,
        #[arg(long, value_delimiter = ',')]
        seeds: Option<Vec<u64>>,
    },
    /// Full pipeline: generate → train → evaluate → persist, idempotently.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        store: PathBuf,
        #[arg(long, value_delimiter = ',')]
        seeds: Option<Vec<u64>>,
    },
    /// Probe a backend on Mastermind tasks and record its coding curve.
    Probe {
        /// mock-oracle, mock-uniform, or http.
        #[arg(long, default_value = "mock-uniform")]
        backend: String,
        #[arg(long, default_value_t = 5)]
        tasks: usize,
        #[arg(long, default_value_t = 40)]
        episode_len: usize,
        #[arg(long, value_delimiter = ',', default_value = "0,1,2,4,8,16")]
        contexts: Vec<usize>,
        #[arg(long, default_value_t = 7)]
        dataset_seed: u64,
        #[arg(long)]
        store: PathBuf,
        /// JSONL transcript of every prompt and reply, for audit.
        #[arg(long)]
        transcripts: Option<PathBuf>,
        #[arg(long, default_value = "https://api.openai.com/v1/chat/completions")]
        url: String,
        #[arg(long, default_value = "gpt-4o")]
        model: String,
        /// Environment variable holding the API credential.
        #[arg(long, default_value = "PREQLAB_API_KEY")]
        api_key_env: String,
        #[arg(long, default_value_t = 60)]
        timeout_secs: u64,
    },
    /// Compress one episode's labels under a trained learner.
    Compress {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Dataset directory written by `generate`.
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value_t = 0)]
        episode: usize,
        #[arg(long)]
        out: PathBuf,
        /// Also write the code-length report as JSON.
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Render coding-curve figures (and optional gap curves) from a store.
    Plot {
        #[arg(long)]
        store: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Two learner names "a,b" to difference into a gap figure.
        #[arg(long, value_delimiter = ',')]
        gap: Option<Vec<String>>,
    },
    /// Summarize a results store (and the HMM family combinatorics).
    Report {
        #[arg(long)]
        store: PathBuf,
        /// Print the latent-space counts of the HMM family.
        #[arg(long)]
        hmm_combinatorics: bool,
    },
    /// Evaluate the in-context model on a dense grid at one context length.
    Visualize {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value_t = 0)]
        episode: usize,
        #[arg(long, default_value_t = 15)]
        context: usize,
        #[arg(long, default_value_t = 101)]
        grid_points: usize,
        #[arg(long, value_delimiter = ',', default_values_t = [-3.0, 3.0])]
        range: Vec<f64>,
        #[arg(long)]
        out: PathBuf,
    },
}

fn load_config(path: &Path, seeds: Option<Vec<u64>>) -> anyhow::Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading config {}", path.display()))?;
    let mut config = ExperimentConfig::from_json(&text)?;
    if let Some(seeds) = seeds {
        config.seeds = seeds;
        config.validate()?;
    }
    Ok(config)
}

fn main() -> anyhow::Result<()> {
    match Cli::parse().command {
        Command::Generate { config, out } => {
            let config = load_config(&config, None)?;
            let out = out.unwrap_or_else(|| PathBuf::from(&config.output_dir));
            let (train, eval) = exp::generate_data(&config)?;
            io::save_meta_dataset(&out.join("train"), &train)?;
            io::save_meta_dataset(&out.join("eval"), &eval)?;
            if let Some(hyper) = &config.hmm_hyper {
                let family = preqlab::hmm::HmmFamily::new(hyper.clone(), config.dataset_seed)?;
                let (tl, el) = family.split_latents(0.2, config.dataset_seed);
                io::save_hmm_family(&out.join("hmm_family.json"), &family, &tl, &el)?;
            }
            println!(
                "generated {} train and {} eval episodes under {}",
                train.episodes.len(),
                eval.episodes.len(),
                out.display()
            );
        }
        Command::Train { config, seeds } => {
            let config = load_config(&config, seeds)?;
            let (train_data, _) = exp::generate_data(&config)?;
            for objective in &config.objectives {
                for &seed in &config.seeds {
                    let learner = exp::train_unit(&config, &train_data, objective, seed)?;
                    println!(
                        "trained {} seed {seed}: final loss {:.4}",
                        objective.name(),
                        learner.trace.last().copied().unwrap_or(f64::NAN)
                    );
                }
            }
        }
        Command::Eval { config, store, seeds } => {
            let config = load_config(&config, seeds)?;
            let store = ResultsStore::open(&store)?;
            let (_, eval_data) = exp::generate_data(&config)?;
            let grid = config.grid();
            let cfg = config.learner_config();
            let experiment_id = config.experiment_id();
            let learner_name = format!("{:?}", config.arch).to_lowercase();
            let mut added = 0;
            for objective in &config.objectives {
                for &seed in &config.seeds {
                    let ck = Path::new(&config.output_dir)
                        .join(format!("checkpoint-{}-seed{seed}.bin", objective.name()));
                    let learner = io::load_checkpoint(&ck)
                        .with_context(|| format!("loading {}", ck.display()))?;
                    let mut curve = eval_curve(
                        &cfg,
                        &learner.params,
                        &eval_data.episodes,
                        &grid,
                        config.queries_per_size,
                    )?;
                    curve.learner = learner_name.clone();
                    added += store.append(&curve_to_rows(
                        &curve,
                        &experiment_id,
                        objective.name(),
                        &[seed],
                    ))?;
                }
            }
            println!("appended {added} rows to {}", store.path().display());
        }
        Command::Run { config, store, seeds } => {
            let config = load_config(&config, seeds)?;
            let store = ResultsStore::open(&store)?;
            let summary = exp::run(&config, &store)?;
            println!(
                "{}: trained {} units, skipped {}, appended {} rows",
                summary.experiment_id, summary.trained_units, summary.skipped_units, summary.new_rows
            );
        }
        Command::Probe {
            backend,
            tasks,
            episode_len,
            contexts,
            dataset_seed,
            store,
            transcripts,
            url,
            model,
            api_key_env,
            timeout_secs,
        } => {
            let spec = TaskSpec::mastermind(8, 6);
            let meta =
                preqlab::tasks::make_meta_dataset(&spec, tasks, episode_len, dataset_seed, Split::Eval);
            let probe_config = ProbeConfig {
                model: model.clone(),
                ..ProbeConfig::default()
            };
            let store = ResultsStore::open(&store)?;
            let mut total_rows = 0;
            let mut all_records = Vec::new();
            let sweep_one = |backend: &mut dyn ProbeBackend,
                             episodes: &[preqlab::tasks::Episode]|
             -> anyhow::Result<_> {
                Ok(probe_curve(backend, episodes, &contexts, &probe_config)?)
            };
            let sweeps = match backend.as_str() {
                "mock-oracle" => {
                    // the oracle must know each task's code, so probe per task
                    let mut sweeps = Vec::new();
                    for ep in &meta.episodes {
                        let TaskParams::Mastermind { code } = ep.params.clone() else {
                            bail!("mastermind episodes expected")
                        };
                        let mut b = OracleBackend { code };
                        sweeps.push(sweep_one(&mut b, std::slice::from_ref(ep))?);
                    }
                    sweeps
                }
                "mock-uniform" => {
                    let mut b = UniformBackend;
                    vec![sweep_one(&mut b, &meta.episodes)?]
                }
                "http" => {
                    let mut b = HttpBackend::new(BackendDescriptor {
                        url,
                        model,
                        api_key_env,
                        timeout_secs,
                    })?;
                    vec![sweep_one(&mut b, &meta.episodes)?]
                }
                other => bail!("unknown backend {other:?} (mock-oracle, mock-uniform, http)"),
            };
            for sweep in sweeps {
                total_rows += store.append(&curve_to_rows(
                    &sweep.curve,
                    &format!("probe-{dataset_seed}"),
                    "prequential",
                    &[dataset_seed],
                ))?;
                all_records.extend(sweep.records);
            }
            if let Some(path) = transcripts {
                let mut lines = String::new();
                for record in &all_records {
                    lines.push_str(&serde_json::to_string(record)?);
                    lines.push('\n');
                }
                std::fs::write(&path, lines)?;
                println!("wrote {} transcripts to {}", all_records.len(), path.display());
            }
            println!("appended {total_rows} probe rows to {}", store.path().display());
        }
        Command::Compress {
            checkpoint,
            data,
            episode,
            out,
            report,
        } => {
            let learner = io::load_checkpoint(&checkpoint)?;
            let meta = io::load_meta_dataset(&data)?;
            let ep = meta
                .episodes
                .get(episode)
                .with_context(|| format!("dataset has {} episodes", meta.episodes.len()))?;
            let compressed =
                codec::compress_episode(&learner.config, &learner.params, ep, codec::DEFAULT_PRECISION)?;
            let symbols = codec::EpisodeLabelModel::symbols(ep);
            std::fs::write(
                &out,
                codec::write_stream(
                    &compressed.stream,
                    symbols.len() as u64,
                    codec::DEFAULT_PRECISION,
                ),
            )?;
            // verify the lossless roundtrip before declaring success
            let decoded = codec::decompress_episode(
                &learner.config,
                &learner.params,
                ep,
                &compressed.stream,
                codec::DEFAULT_PRECISION,
            )?;
            if decoded != symbols {
                bail!("roundtrip mismatch; refusing to keep {}", out.display());
            }
            println!(
                "{} symbols → {} bits realized (ideal {:.2}, ε_q {:.2e}); lossless ✓",
                symbols.len(),
                compressed.realized_bits,
                compressed.report.total_bits,
                compressed.eps_q,
            );
            if let Some(path) = report {
                std::fs::write(&path, serde_json::to_string_pretty(&compressed.report)?)?;
            }
        }
        Command::Plot { store, out, gap } => {
            let store = ResultsStore::open(&store)?;
            let rows = store.load()?;
            let figs = exp::emit_plots(&rows, &out)?;
            for f in &figs {
                println!("wrote {}", f.display());
            }
            if let Some(pair) = gap {
                if pair.len() != 2 {
                    bail!("--gap needs exactly two learner names");
                }
                let f = exp::emit_gap_plot(&rows, &pair[0], &pair[1], &out)?;
                println!("wrote {}", f.display());
            }
        }
        Command::Report {
            store,
            hmm_combinatorics,
        } => {
            let store = ResultsStore::open(&store)?;
            let rows = store.load()?;
            println!("results store: {} rows", rows.len());
            for curve in preqlab::store::curves_from_rows(&rows) {
                let last = curve.mean_error.last().copied().unwrap_or(f64::NAN);
                println!(
                    "  {:<40} {:<14} seeds {:>2}  sizes {:>3}  final {:.4}",
                    curve.learner,
                    curve.family,
                    curve.per_seed.len(),
                    curve.context_sizes.len(),
                    last
                );
            }
            if hmm_combinatorics {
                let hyper = HmmHyper::default();
                let t = hyper.transition_latent_count();
                let e = hyper.emission_latent_count();
                println!("hmm family: {t} transition latents × {e} emission latents = {} HMMs", t * e);
            }
        }
        Command::Visualize {
            checkpoint,
            data,
            episode,
            context,
            grid_points,
            range,
            out,
        } => {
            let learner = io::load_checkpoint(&checkpoint)?;
            let meta = io::load_meta_dataset(&data)?;
            let ep = meta
                .episodes
                .get(episode)
                .with_context(|| format!("dataset has {} episodes", meta.episodes.len()))?;
            if range.len() != 2 || range[0] >= range[1] {
                bail!("--range needs lo,hi with lo < hi");
            }
            let grid: Vec<f64> = (0..grid_points)
                .map(|i| range[0] + (range[1] - range[0]) * i as f64 / (grid_points - 1) as f64)
                .collect();
            let vis =
                exp::visualize_inferred_function(&learner.config, &learner.params, ep, context, &grid)?;
            std::fs::write(&out, serde_json::to_string_pretty(&vis)?)?;
            if let Some(norm) = vis.excess_degree_norm {
                println!("excess-degree coefficient norm: {norm:.4}");
            }
            println!("wrote {}", out.display());
        }
    }
    Ok(())
}

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use gaze_core::artifact;
use gaze_core::gaze::{load_samples, FilterConfig, IdtParams, Segmentation, SessionGeometry};
use gaze_core::loss::{evaluate_batch, DpoConfig, LossBatch, Reduction, DEFAULT_BETA_KL, DEFAULT_GAMMA};
use gaze_core::metrics::{evaluate, rows_to_csv, AttentionInput};
use gaze_core::pipeline::{
    fit_priors, fit_transitions, generate_pseudo, load_map_any, project_weights, run_pipeline, validate_artifacts,
    PathCorpus, RunConfig, STAGE_WEIGHTS,
};
use gaze_core::pseudo::{default_line_span, MaskConfig, PseudoFile};
use gaze_core::salience::SaliencePriorSet;
use gaze_core::sim::{simulate_sessions, write_sessions, PlantedModel};
use gaze_core::tokens::{align_fixations, load_scan_path, SessionMode};
use gaze_core::transitions::{TablesFile, DEFAULT_PRUNE_THRESHOLD};
use gaze_core::weights::{ShardSet, DEFAULT_W_BASE};
use gaze_core::Error;

const EXIT_USAGE: u8 = 1;
const EXIT_DATA: u8 = 2;
const EXIT_INTERNAL: u8 = 3;

#[derive(Parser)]
#[command(
    name = "gaze",
    version,
    about = "Distil eye-tracking sessions into token weights for code-model training"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Synthesize gaze sessions from a planted model.
    Simulate {
        #[arg(long)]
        model: PathBuf,
        /// Token map (.json) or source file.
        #[arg(long)]
        tokens: PathBuf,
        /// Override the model's session count.
        #[arg(long)]
        sessions: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(short, long)]
        output: PathBuf,
    },
    /// Detect fixations and saccades in a gaze CSV.
    Segment {
        #[arg(long)]
        input: PathBuf,
        #[command(flatten)]
        idt: IdtArgs,
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Map fixations onto tokens.
    Align {
        #[arg(long)]
        fixations: PathBuf,
        #[arg(long)]
        tokens: PathBuf,
        #[arg(long, default_value = "reading")]
        mode: SessionMode,
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Fit per-class Beta priors for every session mode.
    FitPriors {
        #[arg(long, num_args = 1.., required = true)]
        paths: Vec<PathBuf>,
        #[arg(long)]
        tokens: PathBuf,
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Build pruned bigram and trigram tables.
    FitTransitions {
        #[arg(long, num_args = 1.., required = true)]
        paths: Vec<PathBuf>,
        #[arg(long)]
        tokens: PathBuf,
        #[arg(long, default_value = "combined")]
        mode: SessionMode,
        #[arg(long, default_value_t = DEFAULT_PRUNE_THRESHOLD)]
        prune: u64,
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Sample attention masks and pseudo scan paths for training examples.
    GenPseudo {
        #[arg(long, num_args = 1.., required = true)]
        tokens: Vec<PathBuf>,
        #[arg(long)]
        priors: PathBuf,
        #[arg(long)]
        tables: PathBuf,
        #[arg(long, default_value = "reading")]
        mode: SessionMode,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        #[arg(long)]
        line_span: Option<u32>,
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Turn pseudo paths into per-shard training weights.
    Project {
        #[arg(long)]
        pseudo: PathBuf,
        #[arg(long)]
        priors: PathBuf,
        #[arg(long)]
        shards: PathBuf,
        #[arg(long, default_value_t = DEFAULT_W_BASE)]
        w_base: f64,
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Evaluate weighted SFT, preference and combined losses.
    EvalLoss {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, default_value_t = DEFAULT_BETA_KL)]
        beta: f64,
        #[arg(long, default_value_t = DEFAULT_GAMMA)]
        gamma: f64,
        #[arg(long)]
        check_grad: bool,
        /// Divide each example's loss by its target count.
        #[arg(long)]
        mean: bool,
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Entropy, recency, focus and confidence metrics over attention rows.
    AttnMetrics {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        k: Option<usize>,
        /// Also export the normalized rows as CSV.
        #[arg(long)]
        csv: Option<PathBuf>,
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Run the full pipeline from a TOML config.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        mode: Option<SessionMode>,
        #[arg(long)]
        w_base: Option<f64>,
        #[arg(long)]
        prune: Option<u64>,
        #[arg(long)]
        beta: Option<f64>,
        #[arg(long)]
        gamma: Option<f64>,
    },
    /// Re-check every invariant of a bundle directory.
    Validate {
        #[arg(long)]
        bundle: PathBuf,
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
}

#[derive(Args)]
struct IdtArgs {
    /// Session geometry JSON; defaults to 120 Hz, 30 px/deg, 1920x1080.
    #[arg(long)]
    geometry: Option<PathBuf>,
    #[arg(long, default_value_t = 1.0)]
    dispersion: f64,
    #[arg(long, default_value_t = 100.0)]
    min_fix: f64,
    #[arg(long, default_value_t = 1000.0)]
    max_velocity: f64,
}

enum Failure {
    Data(String),
    Internal(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        if e.is_internal() {
            Failure::Internal(e.to_string())
        } else {
            Failure::Data(e.to_string())
        }
    }
}

type Outcome = Result<(), Failure>;

fn emit<T: Serialize + ?Sized>(output: Option<&Path>, value: &T) -> Outcome {
    match output {
        Some(p) => {
            artifact::write_json(p, value)?;
        }
        None => {
            let mut s = artifact::to_canonical_string(value)?;
            s.push('\n');
            std::io::stdout()
                .write_all(s.as_bytes())
                .map_err(|e| Failure::Internal(e.to_string()))?;
        }
    }
    Ok(())
}

fn corpus(paths: &[PathBuf], tokens: &Path) -> Result<PathCorpus, Error> {
    let map = load_map_any(tokens)?;
    let paths = paths.iter().map(|p| load_scan_path(p)).collect::<Result<Vec<_>, _>>()?;
    Ok(PathCorpus::single(map, paths))
}

fn run(cmd: Cmd) -> Outcome {
    match cmd {
        Cmd::Simulate {
            model,
            tokens,
            sessions,
            seed,
            output,
        } => {
            let mut model = PlantedModel::load(&model)?;
            if let Some(n) = sessions {
                model.sessions = n;
            }
            if let Some(s) = seed {
                model.seed = s;
            }
            let map = load_map_any(&tokens)?;
            let sims = simulate_sessions(&model, &map)?;
            let entries = write_sessions(&output, &sims, &map)?;
            eprintln!("wrote {} sessions to {}", entries.len(), output.display());
            Ok(())
        }
        Cmd::Segment { input, idt, output } => {
            let geometry = match &idt.geometry {
                Some(p) => {
                    let g: SessionGeometry = artifact::read_json(p)?;
                    g.validate()?;
                    g
                }
                None => SessionGeometry::default(),
            };
            let params = IdtParams {
                dispersion_deg: idt.dispersion,
                min_duration_ms: idt.min_fix,
            };
            let filter = FilterConfig {
                pixels_per_degree: geometry.pixels_per_degree,
                max_velocity_deg_s: idt.max_velocity,
            };
            let samples = load_samples(&input)?;
            emit(
                output.as_deref(),
                &Segmentation::from_samples(&samples, &geometry, &filter, &params),
            )
        }
        Cmd::Align {
            fixations,
            tokens,
            mode,
            output,
        } => {
            let seg: Segmentation = artifact::read_json(&fixations)?;
            let map = load_map_any(&tokens)?;
            emit(output.as_deref(), &align_fixations(&seg.fixations, &map, mode))
        }
        Cmd::FitPriors { paths, tokens, output } => {
            let c = corpus(&paths, &tokens)?;
            let tax = c.maps.values().next().map(|m| m.taxonomy().clone()).unwrap_or_default();
            let priors = fit_priors(&c, &tax)?;
            emit(output.as_deref(), &priors.to_file())
        }
        Cmd::FitTransitions {
            paths,
            tokens,
            mode,
            prune,
            output,
        } => {
            if prune == 0 {
                return Err(Failure::Data("--prune must be positive".into()));
            }
            let c = corpus(&paths, &tokens)?;
            let tax = c.maps.values().next().map(|m| m.taxonomy().clone()).unwrap_or_default();
            emit(output.as_deref(), &fit_transitions(&c, &tax, mode, prune)?)
        }
        Cmd::GenPseudo {
            tokens,
            priors,
            tables,
            mode,
            seed,
            line_span,
            output,
        } => {
            let maps = tokens.iter().map(|p| load_map_any(p)).collect::<Result<Vec<_>, _>>()?;
            let priors = SaliencePriorSet::load(&priors)?;
            let tables = TablesFile::load(&tables)?;
            let cfg = MaskConfig::new(mode, seed).with_line_span(line_span.unwrap_or(default_line_span(mode)))?;
            emit(output.as_deref(), &generate_pseudo(&maps, &priors, &tables, &cfg)?)
        }
        Cmd::Project {
            pseudo,
            priors,
            shards,
            w_base,
            output,
        } => {
            let stage = |e: Error| e.in_stage(STAGE_WEIGHTS, None);
            let pseudo = PseudoFile::load(&pseudo).map_err(stage)?;
            let priors = SaliencePriorSet::load(&priors).map_err(stage)?;
            let shards = ShardSet::load(&shards).map_err(stage)?;
            let records = project_weights(&pseudo, &priors, &shards, w_base)?;
            match output {
                Some(p) => {
                    artifact::write_jsonl(&p, &records)?;
                    Ok(())
                }
                None => {
                    for r in &records {
                        emit(None, r)?;
                    }
                    Ok(())
                }
            }
        }
        Cmd::EvalLoss {
            input,
            beta,
            gamma,
            check_grad,
            mean,
            output,
        } => {
            let cfg = DpoConfig::new(beta, gamma)?;
            let batch = LossBatch::from_value(artifact::read_json(&input)?)?;
            let reduction = if mean { Reduction::Mean } else { Reduction::Sum };
            emit(output.as_deref(), &evaluate_batch(&batch, &cfg, reduction, check_grad)?)
        }
        Cmd::AttnMetrics { input, k, csv, output } => {
            let mut input: AttentionInput = artifact::read_json(&input)?;
            if let Some(k) = k {
                input.k = k;
            }
            let report = evaluate(&input)?;
            if let Some(p) = csv {
                artifact::write_bytes(&p, rows_to_csv(&input.rows).as_bytes())?;
            }
            emit(output.as_deref(), &report)
        }
        Cmd::Run {
            config,
            out,
            seed,
            mode,
            w_base,
            prune,
            beta,
            gamma,
        } => {
            let mut cfg = RunConfig::load(&config)?;
            if let Some(v) = seed {
                cfg.seed = v;
            }
            if let Some(v) = mode {
                cfg.mode = v;
            }
            if let Some(v) = w_base {
                cfg.w_base = v;
            }
            if let Some(v) = prune {
                cfg.prune_threshold = v;
            }
            if let Some(v) = beta {
                cfg.beta = v;
            }
            if let Some(v) = gamma {
                cfg.gamma = v;
            }
            let out_dir = out.unwrap_or_else(|| cfg.resolve(&cfg.output));
            let bundle = run_pipeline(&cfg, &out_dir)?;
            eprintln!(
                "wrote {} examples to {} ({} bytes)",
                bundle.pseudo.examples.len(),
                out_dir.display(),
                bundle.manifest.total_bytes
            );
            Ok(())
        }
        Cmd::Validate { bundle, output } => {
            let report = validate_artifacts(&bundle);
            emit(output.as_deref(), &report)?;
            for c in report.checks.iter().filter(|c| !c.passed) {
                eprintln!("FAIL {}: {}", c.name, c.detail);
            }
            if report.passed() {
                Ok(())
            } else {
                Err(Failure::Data("bundle failed validation".into()))
            }
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli.cmd) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Data(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(EXIT_DATA)
        }
        Err(Failure::Internal(msg)) => {
            eprintln!("internal error: {msg}");
            ExitCode::from(EXIT_INTERNAL)
        }
    }
}

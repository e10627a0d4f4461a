use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use shortcut_core::net::predicted_class;
use shortcut_core::prep::ConfigId;
use shortcut_core::similarity::compare_heatmaps;
use shortcut_core::spray::{adjusted_rand_index, group_mean_heatmaps, spray, SprayParams};
use shortcut_core::{Class, Volume};
use shortcut_lab::config::{ExperimentConfig, RelevanceStart, Seeds};
use shortcut_lab::experiment::{explain, prepare, run_sessions, unusable, EmbeddingPoint};
use shortcut_lab::io::{self, HeatmapSidecar};
use shortcut_lab::{render_report, run_experiment, LabError, Result};

#[derive(Parser)]
#[command(name = "shortcut", version, about = "Preprocessing shortcut experiments on synthetic head phantoms")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct RunArgs {
    /// Experiment configuration (JSON); omitted fields take their defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Base seed for every random stream; overrides the configured seeds.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads (default: all cores).
    #[arg(long)]
    threads: Option<usize>,
    /// Use the 160x240x256 input grid.
    #[arg(long)]
    full_scale: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum Target {
    Predicted,
    Nc,
    Ad,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a phantom dataset (VOL1 images and masks plus manifest).
    Generate(RunArgs),
    /// Train all sessions of a single preprocessing configuration.
    Train {
        #[command(flatten)]
        run: RunArgs,
        /// Preprocessing configuration, A1 to D2.
        #[arg(long)]
        prep: ConfigId,
    },
    /// Run the full grid and render the report.
    Experiment(RunArgs),
    /// Relevance map of one (already preprocessed) image.
    Heatmap {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        image: PathBuf,
        /// Output VOL1 path; the sidecar is written next to it.
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value = "predicted")]
        target: Target,
        #[arg(long, value_enum, default_value = "margin")]
        start: StartArg,
        /// True class recorded in the sidecar.
        #[arg(long, value_enum)]
        truth: Option<ClassArg>,
    },
    /// Similarity measures of two heatmaps, printed as JSON.
    Compare { a: PathBuf, b: PathBuf },
    /// Spectral relevance analysis of a directory of heatmaps with sidecars.
    Spray {
        #[arg(long)]
        heatmaps: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Fixed cluster count instead of the eigengap choice.
        #[arg(long)]
        clusters: Option<usize>,
    },
    /// Re-render the report of an experiment directory.
    Report {
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum ClassArg {
    Nc,
    Ad,
}

impl From<ClassArg> for Class {
    fn from(c: ClassArg) -> Self {
        match c {
            ClassArg::Nc => Class::Nc,
            ClassArg::Ad => Class::Ad,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum StartArg {
    Margin,
    Score,
}

fn load(args: &RunArgs) -> Result<(ExperimentConfig, PathBuf)> {
    let mut cfg = match &args.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(s) = args.seed {
        cfg.seeds = Seeds::from_base(s);
    }
    if args.full_scale {
        cfg = cfg.full_scale();
    }
    cfg.validate()?;
    let out = args.out.clone().or_else(|| cfg.output.clone()).ok_or_else(|| LabError::Config("no output directory (--out)".into()))?;
    if let Some(n) = args.threads {
        if n == 0 {
            return Err(LabError::Config("--threads must be positive".into()));
        }
        // fails only if a pool already exists, which keeps the earlier one
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    Ok((cfg, out))
}

fn read_heatmap_dir(dir: &Path) -> Result<Vec<(HeatmapSidecar, Volume)>> {
    let entries = std::fs::read_dir(dir).map_err(|e| LabError::io(dir, e))?;
    let mut paths: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "vol") && p.with_extension("json").exists())
        .collect();
    paths.sort();
    paths.into_iter().map(|p| Ok((io::read_json(&p.with_extension("json"))?, io::read_volume(&p)?))).collect()
}

fn cell(s: &HeatmapSidecar) -> &'static str {
    match (s.truth, s.predicted) {
        (Class::Ad, Class::Ad) => "TP",
        (Class::Nc, Class::Nc) => "TN",
        (Class::Nc, Class::Ad) => "FP",
        (Class::Ad, Class::Nc) => "FN",
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Generate(args) => {
            let (cfg, out) = load(&args)?;
            let (records, _) = prepare(&cfg)?;
            io::write_dataset(&out, &cfg.phantom, cfg.seeds.cohort, cfg.images_per_subject, &records)?;
            log::info!("wrote {} images to {}", records.len(), out.display());
        }
        Command::Train { run, prep } => {
            let (mut cfg, out) = load(&run)?;
            cfg.configs = vec![prep];
            cfg.reference = prep;
            let (records, plans) = prepare(&cfg)?;
            let sessions = run_sessions(&cfg, &out, &records, &plans)?;
            let converged = sessions.iter().filter(|s| s.record.converged).count();
            println!("{}: {converged} of {} sessions converged", prep.as_str(), sessions.len());
            if converged == 0 {
                return Err(LabError::NoConvergedRuns);
            }
        }
        Command::Experiment(args) => {
            let (cfg, out) = load(&args)?;
            let analysis = run_experiment(&cfg, &out)?;
            for c in &analysis.configs {
                let acc = c.summary.map(|s| format!("{:.3}", s.accuracy.mean)).unwrap_or_else(|| "-".into());
                println!("{}: {}/{} converged, mean accuracy {acc}", c.config_id.as_str(), c.converged, c.sessions);
            }
        }
        Command::Heatmap { checkpoint, image, out, target, start, truth } => {
            let img = io::read_volume(&image)?;
            let model = io::read_checkpoint(&checkpoint, img.dims())?.cast::<f64>();
            let predicted = predicted_class(&model.predict(&img)?);
            let target = match target {
                Target::Predicted => predicted,
                Target::Nc => Class::Nc,
                Target::Ad => Class::Ad,
            };
            let mut settings = ExperimentConfig::default().relevance;
            settings.start = match start {
                StartArg::Margin => RelevanceStart::Margin,
                StartArg::Score => RelevanceStart::Score,
            };
            let r = explain(&model, &img, target, &settings)?;
            io::write_volume(&out, &r.map)?;
            let session_id = checkpoint.parent().and_then(|p| p.file_name()).map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
            let image_id = image.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
            let sidecar = HeatmapSidecar {
                image_id,
                session_id,
                target,
                truth: truth.map_or(predicted, Class::from),
                predicted,
                target_score: r.target_score,
            };
            io::write_json(&out.with_extension("json"), &sidecar)?;
        }
        Command::Compare { a, b } => {
            let rep = compare_heatmaps(&io::read_volume(&a)?, &io::read_volume(&b)?)?;
            println!("{}", serde_json::to_string_pretty(&rep)?);
        }
        Command::Spray { heatmaps, out, seed, clusters } => {
            let mut items = read_heatmap_dir(&heatmaps)?;
            items.retain(|(s, m)| match unusable(m) {
                Some(reason) => {
                    log::warn!("excluded {}: {reason}", s.image_id);
                    false
                }
                None => true,
            });
            let maps: Vec<Volume> = items.iter().map(|(_, m)| m.clone()).collect();
            let res = spray(&maps, &SprayParams { seed, n_clusters: clusters, ..SprayParams::default() })?;
            let points: Vec<EmbeddingPoint> = items
                .iter()
                .zip(&res.labels)
                .zip(&res.embedding)
                .map(|(((s, _), &cluster), xy)| EmbeddingPoint {
                    image_id: s.image_id.clone(),
                    x: xy[0],
                    y: xy[1],
                    cluster,
                    confusion_cell: cell(s).into(),
                })
                .collect();
            io::write_csv(&out.join("embedding.csv"), &points)?;
            let eig: Vec<(usize, f64)> = res.eigenvalues.iter().copied().enumerate().collect();
            io::write_csv(&out.join("eigenvalues.csv"), &eig)?;
            for (k, m) in group_mean_heatmaps(&maps, &res.labels, res.chosen_k)?.into_iter().enumerate() {
                if let Some(m) = m {
                    io::write_volume(&out.join(format!("cluster_{k}.vol")), &m)?;
                }
            }
            let truth: Vec<usize> = items.iter().map(|(s, _)| s.truth.index()).collect();
            let ari = adjusted_rand_index(&res.labels, &truth)?;
            println!("{} heatmaps, {} clusters, ARI with true classes {ari:.3}", maps.len(), res.chosen_k);
            for f in &res.flags {
                log::warn!("{f}");
            }
        }
        Command::Report { out } => render_report(&out)?,
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

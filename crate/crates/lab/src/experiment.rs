//! The session grid and everything computed from it.
//!
//! Sessions run in a worker pool and are isolated from each other: a failed
//! or non-converged session only produces an exclusion entry. All
//! aggregation happens after sorting by `(config, sampling, init)`, so the
//! artifact tree does not depend on the thread count.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use shortcut_core::net::{predicted_class, train, Model, Partition, Sample, TrainCurves};
use shortcut_core::phantom::{generate_cohort, make_samplings, SessionPlan, SubjectRecord};
use shortcut_core::prep::{preprocess, ConfigId};
use shortcut_core::relevance::{boundary_focus, lrp, lrp_margin, mean_heatmap, relevance_mask, Relevance};
use shortcut_core::similarity::compare_heatmaps;
use shortcut_core::spray::{adjusted_rand_index, group_mean_heatmaps, spray, SprayParams};
use shortcut_core::stats::{holm, performance, summarize_metrics, DiscreteTest, HolmVariant, MetricSummary, Metrics, PairedOutcomes};
use shortcut_core::{seed, Class, Prediction, RunRecord, Volume};

use crate::config::{ExperimentConfig, RelevanceSettings, RelevanceStart};
use crate::error::{LabError, Result};
use crate::io;

pub const ANALYSIS_FILE: &str = "analysis.json";
pub const CONFIG_FILE: &str = "config.json";

/// Something left out of an aggregate, with the reason.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Exclusion {
    /// `session`, `heatmap`, `similarity`, `comparison` or `spray`.
    pub scope: String,
    pub config_id: ConfigId,
    pub sampling: Option<usize>,
    pub init: Option<usize>,
    pub item: String,
    pub reason: String,
}

impl Exclusion {
    fn new(scope: &str, config_id: ConfigId, run: Option<(usize, usize)>, item: impl Into<String>, reason: impl Into<String>) -> Self {
        Self {
            scope: scope.into(),
            config_id,
            sampling: run.map(|r| r.0),
            init: run.map(|r| r.1),
            item: item.into(),
            reason: reason.into(),
        }
    }
}

/// What a finished session hands to the aggregation step.
#[derive(Debug, Clone)]
pub struct SessionSummary {
    pub config_id: ConfigId,
    pub record: RunRecord,
    pub final_val_loss: f64,
    /// Mean test heatmap of a converged run, relative to the output root.
    pub mean_heatmap: Option<String>,
    pub exclusions: Vec<Exclusion>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub sampling: usize,
    pub init: usize,
    pub metrics: Metrics,
    pub final_val_accuracy: f64,
    pub final_val_loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingPoint {
    pub image_id: String,
    pub x: f64,
    pub y: f64,
    pub cluster: usize,
    /// TP, TN, FP or FN with AD as the positive class.
    pub confusion_cell: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubsetSpray {
    pub cell: String,
    pub n_maps: usize,
    pub chosen_k: usize,
    pub eigenvalues: Vec<f64>,
    pub labels: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SprayAnalysis {
    pub n_maps: usize,
    pub chosen_k: usize,
    pub eigenvalues: Vec<f64>,
    /// Agreement of the clusters with the true classes; absent when only
    /// one class is present.
    pub ari_truth: Option<f64>,
    pub flags: Vec<String>,
    pub points: Vec<EmbeddingPoint>,
    /// Per-cluster mean heatmaps, relative to the output root.
    pub cluster_means: Vec<Option<String>>,
    pub subsets: Vec<SubsetSpray>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BestRun {
    pub sampling: usize,
    pub init: usize,
    pub metrics: Metrics,
    pub heatmaps_used: usize,
    pub heatmaps_excluded: usize,
    /// Mean over test images of the top-relevance share near the brain
    /// surface.
    pub boundary_focus: Option<f64>,
    pub mean_heatmap: Option<String>,
    pub spray: Option<SprayAnalysis>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfigAnalysis {
    pub config_id: ConfigId,
    pub sessions: usize,
    pub converged: usize,
    /// Converged runs only.
    pub runs: Vec<RunMetrics>,
    pub summary: Option<MetricSummary>,
    pub best: Option<BestRun>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimilarityRow {
    pub config_id: ConfigId,
    pub sampling: usize,
    pub init: usize,
    pub rmse: f64,
    pub pearson: f64,
    pub mssim: f64,
    pub emd: f64,
    pub iou40: f64,
    pub iou10: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub ref_config: ConfigId,
    pub alt_config: ConfigId,
    pub sampling: usize,
    pub init: usize,
    pub metric: String,
    /// Test images only the reference classified correctly.
    pub b: u64,
    /// Test images only the alternative classified correctly.
    pub c: u64,
    pub p_raw: f64,
    /// Discrete Holm adjustment.
    pub p_adjusted: f64,
    pub reject: bool,
    pub p_adjusted_plain: f64,
    pub reject_plain: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Analysis {
    pub reference: ConfigId,
    pub alpha: f64,
    pub top_fraction: f64,
    pub configs: Vec<ConfigAnalysis>,
    pub similarity: Vec<SimilarityRow>,
    pub comparisons: Vec<ComparisonRow>,
    pub exclusions: Vec<Exclusion>,
}

impl Analysis {
    pub fn config(&self, id: ConfigId) -> Option<&ConfigAnalysis> {
        self.configs.iter().find(|c| c.config_id == id)
    }
}

/// Phantom cohort and session plans of a configuration.
pub fn prepare(cfg: &ExperimentConfig) -> Result<(Vec<SubjectRecord>, Vec<SessionPlan>)> {
    let records = generate_cohort(&cfg.phantom, cfg.n_subjects, cfg.images_per_subject, cfg.seeds.cohort)?;
    let plans = make_samplings(&records, cfg.n_samplings, cfg.n_inits, cfg.seeds.sampling)?;
    Ok((records, plans))
}

/// Preprocessed samples, index-aligned with `records`.
pub fn prepare_samples(records: &[SubjectRecord], config: ConfigId) -> Result<Vec<Sample>> {
    records
        .iter()
        .map(|r| {
            Ok(Sample {
                id: r.image_id.clone(),
                subject_id: r.subject_id.clone(),
                label: r.class,
                image: preprocess(&r.image, &r.brain_mask, config.config())?,
            })
        })
        .collect()
}

fn pick(samples: &[Sample], idx: &[usize]) -> Vec<Sample> {
    idx.iter().map(|&i| samples[i].clone()).collect()
}

pub fn run_dir(config: ConfigId, sampling: usize, init: usize) -> String {
    format!("runs/{}/{sampling}_{init}", config.as_str())
}

/// Relevance of `target` under the configured start rule.
pub fn explain(model: &Model<f64>, image: &Volume, target: Class, settings: &RelevanceSettings) -> Result<Relevance> {
    let f = match settings.start {
        RelevanceStart::Margin => lrp_margin::<f64>,
        RelevanceStart::Score => lrp::<f64>,
    };
    Ok(f(model, image, target.index(), &settings.lrp)?)
}

/// Why a map cannot enter means, masks or clustering, if it cannot.
pub fn unusable(map: &Volume) -> Option<String> {
    let total = map.sum();
    if map.data().iter().any(|&v| v < 0.0) {
        Some("relevance map has negative voxels".into())
    } else if !(total > 0.0) {
        Some(format!("non-positive total relevance {total}"))
    } else {
        None
    }
}

#[derive(Serialize)]
struct CurveRow {
    epoch: usize,
    train_loss: f64,
    train_accuracy: Option<f64>,
    val_loss: Option<f64>,
    val_accuracy: Option<f64>,
}

fn curve_rows(c: &TrainCurves) -> Vec<CurveRow> {
    let mut rows = vec![CurveRow { epoch: 0, train_loss: c.initial_train_loss, train_accuracy: None, val_loss: None, val_accuracy: None }];
    for e in 0..c.epochs() {
        rows.push(CurveRow {
            epoch: e + 1,
            train_loss: c.train_loss[e],
            train_accuracy: Some(c.train_accuracy[e]),
            val_loss: Some(c.val_loss[e]),
            val_accuracy: Some(c.val_accuracy[e]),
        });
    }
    rows
}

/// Trains one session and writes its artifacts. Errors are returned to the
/// caller, which turns them into an exclusion.
fn train_session(cfg: &ExperimentConfig, root: &Path, config: ConfigId, samples: &[Sample], plan: &SessionPlan) -> Result<SessionSummary> {
    let (train_set, val_set, test_set) =
        (pick(samples, &plan.split.train), pick(samples, &plan.split.val), pick(samples, &plan.split.test));
    let dims = samples[0].image.dims();
    let specs = cfg.architecture.layer_specs(dims);
    let partition = Partition { train: &train_set, val: &val_set, test: &test_set };
    let outcome = train::<f32>(&specs, plan.init_seed, plan.split.sampling_seed, partition, &cfg.hyperparams)?;
    let (model, curves, mut record) = outcome.into_record(config.as_str(), plan.sampling, plan.init, &cfg.convergence);
    let dir = run_dir(config, plan.sampling, plan.init);
    let checkpoint = format!("{dir}/checkpoint.spm");
    let curves_path = format!("{dir}/curves.csv");
    io::write_checkpoint(&root.join(&checkpoint), &model)?;
    io::write_csv(&root.join(&curves_path), &curve_rows(&curves))?;
    io::write_csv(&root.join(format!("{dir}/predictions.csv")), &record.predictions)?;
    record.checkpoint_path = Some(checkpoint);
    record.curves_path = Some(curves_path);
    let run = Some((plan.sampling, plan.init));
    let mut exclusions = Vec::new();
    let mut mean = None;
    if let Some(reason) = &record.exclusion {
        exclusions.push(Exclusion::new("session", config, run, &dir, reason.clone()));
    } else {
        let model64 = model.cast::<f64>();
        let mut maps = Vec::new();
        for (s, p) in test_set.iter().zip(&record.predictions) {
            let r = explain(&model64, &s.image, p.predicted, &cfg.relevance)?;
            match unusable(&r.map) {
                Some(reason) => exclusions.push(Exclusion::new("heatmap", config, run, &s.id, reason)),
                None => maps.push(r.map),
            }
        }
        if maps.is_empty() {
            exclusions.push(Exclusion::new("similarity", config, run, &dir, "no usable test heatmap"));
        } else {
            let path = format!("{dir}/mean_heatmap.vol");
            io::write_volume(&root.join(&path), &mean_heatmap(&maps)?)?;
            mean = Some(path);
        }
    }
    io::write_json(&root.join(format!("{dir}/record.json")), &record)?;
    let final_val_loss = curves.val_loss.last().copied().unwrap_or(f64::NAN);
    Ok(SessionSummary { config_id: config, record, final_val_loss, mean_heatmap: mean, exclusions })
}

/// Trains every `(config, plan)` pair on the current rayon pool and returns
/// the summaries sorted by `(config, sampling, init)`.
pub fn run_sessions(cfg: &ExperimentConfig, root: &Path, records: &[SubjectRecord], plans: &[SessionPlan]) -> Result<Vec<SessionSummary>> {
    let mut configs = cfg.configs.clone();
    configs.sort();
    let prepared: Vec<(ConfigId, Vec<Sample>)> =
        configs.par_iter().map(|&c| Ok((c, prepare_samples(records, c)?))).collect::<Result<_>>()?;
    let jobs: Vec<(usize, &SessionPlan)> = (0..prepared.len()).flat_map(|c| plans.iter().map(move |p| (c, p))).collect();
    let mut out: Vec<SessionSummary> = jobs
        .par_iter()
        .map(|&(c, plan)| {
            let (config, samples) = (&prepared[c].0, &prepared[c].1);
            let summary = train_session(cfg, root, *config, samples, plan).unwrap_or_else(|e| {
                let reason = format!("session failed: {e}");
                SessionSummary {
                    config_id: *config,
                    record: RunRecord {
                        config_id: config.as_str().into(),
                        sampling: plan.sampling,
                        init: plan.init,
                        converged: false,
                        exclusion: Some(reason.clone()),
                        final_val_accuracy: f64::NAN,
                        predictions: Vec::new(),
                        curves_path: None,
                        checkpoint_path: None,
                    },
                    final_val_loss: f64::NAN,
                    mean_heatmap: None,
                    exclusions: vec![Exclusion::new(
                        "session",
                        *config,
                        Some((plan.sampling, plan.init)),
                        run_dir(*config, plan.sampling, plan.init),
                        reason,
                    )],
                }
            });
            log::info!(
                "{} sampling {} init {}: {}",
                config.as_str(),
                plan.sampling,
                plan.init,
                summary.record.exclusion.as_deref().unwrap_or("converged")
            );
            summary
        })
        .collect();
    out.sort_by_key(|a| (a.config_id, a.record.sampling, a.record.init));
    Ok(out)
}

/// Best converged run: highest validation accuracy, then lowest validation
/// loss, then lowest `(sampling, init)`.
pub fn select_best(runs: &[&SessionSummary]) -> Option<usize> {
    let key = |s: &SessionSummary| {
        let loss = if s.final_val_loss.is_finite() { s.final_val_loss } else { f64::INFINITY };
        (s.record.final_val_accuracy, loss)
    };
    (0..runs.len()).filter(|&i| runs[i].record.converged).min_by(|&a, &b| {
        let (ka, kb) = (key(runs[a]), key(runs[b]));
        kb.0.total_cmp(&ka.0)
            .then(ka.1.total_cmp(&kb.1))
            .then((runs[a].record.sampling, runs[a].record.init).cmp(&(runs[b].record.sampling, runs[b].record.init)))
    })
}

fn confusion_cell(p: &Prediction) -> &'static str {
    match (p.truth, p.predicted) {
        (Class::Ad, Class::Ad) => "TP",
        (Class::Nc, Class::Nc) => "TN",
        (Class::Nc, Class::Ad) => "FP",
        (Class::Ad, Class::Nc) => "FN",
    }
}

struct Explained {
    prediction: Prediction,
    map: Volume,
    focus: f64,
}

fn config_position(id: ConfigId) -> u64 {
    ConfigId::ALL.iter().position(|&c| c == id).unwrap_or(0) as u64
}

fn spray_params(cfg: &ExperimentConfig, config: ConfigId, subset: u64) -> SprayParams {
    SprayParams { seed: seed::derive(cfg.seeds.spray, seed::stream::SPRAY, config_position(config) * 16 + subset), ..cfg.spray }
}

/// Heatmaps, boundary focus and clustering of the best run.
fn analyze_best(
    cfg: &ExperimentConfig,
    root: &Path,
    records: &[SubjectRecord],
    plans: &[SessionPlan],
    run: &SessionSummary,
    metrics: Metrics,
    exclusions: &mut Vec<Exclusion>,
) -> Result<BestRun> {
    let config = run.config_id;
    let (s, i) = (run.record.sampling, run.record.init);
    let rid = Some((s, i));
    let plan = plans
        .iter()
        .find(|p| p.sampling == s && p.init == i)
        .ok_or_else(|| LabError::Config(format!("no plan for sampling {s} init {i}")))?;
    let checkpoint = run.record.checkpoint_path.as_ref().ok_or_else(|| LabError::Config("best run has no checkpoint".into()))?;
    let dims = cfg.phantom.dims;
    let model = io::read_checkpoint(&root.join(checkpoint), dims)?.cast::<f64>();
    let session_id = ExperimentConfig::session_id(config, s, i);
    let hdir = format!("heatmaps/{}", config.as_str());
    let mut used = Vec::new();
    let mut excluded = 0usize;
    for &idx in &plan.split.test {
        let rec = &records[idx];
        let prediction = run
            .record
            .predictions
            .iter()
            .find(|p| p.image_id == rec.image_id)
            .cloned()
            .ok_or_else(|| LabError::Config(format!("{session_id}: no prediction for {}", rec.image_id)))?;
        let image = preprocess(&rec.image, &rec.brain_mask, config.config())?;
        debug_assert_eq!(predicted_class(&model.predict(&image)?), prediction.predicted);
        let r = explain(&model, &image, prediction.predicted, &cfg.relevance)?;
        io::write_volume(&root.join(format!("{hdir}/{}.vol", rec.image_id)), &r.map)?;
        let sidecar = io::HeatmapSidecar {
            image_id: rec.image_id.clone(),
            session_id: session_id.clone(),
            target: prediction.predicted,
            truth: rec.class,
            predicted: prediction.predicted,
            target_score: r.target_score,
        };
        io::write_json(&root.join(format!("{hdir}/{}.json", rec.image_id)), &sidecar)?;
        if let Some(reason) = unusable(&r.map) {
            exclusions.push(Exclusion::new("heatmap", config, rid, format!("best run {}", rec.image_id), reason));
            excluded += 1;
            continue;
        }
        let selection = relevance_mask(&r.map, cfg.relevance.top_fraction)?;
        let focus = boundary_focus(&selection, &rec.brain_mask, cfg.relevance.boundary_radius)?;
        used.push(Explained { prediction, map: r.map, focus });
    }
    let mut best = BestRun {
        sampling: s,
        init: i,
        metrics,
        heatmaps_used: used.len(),
        heatmaps_excluded: excluded,
        boundary_focus: None,
        mean_heatmap: None,
        spray: None,
    };
    if used.is_empty() {
        return Ok(best);
    }
    best.boundary_focus = Some(used.iter().map(|e| e.focus).sum::<f64>() / used.len() as f64);
    let mean_path = format!("{hdir}/mean.vol");
    io::write_volume(&root.join(&mean_path), &mean_heatmap(used.iter().map(|e| &e.map))?)?;
    best.mean_heatmap = Some(mean_path);
    let maps: Vec<Volume> = used.iter().map(|e| e.map.clone()).collect();
    match spray(&maps, &spray_params(cfg, config, 0)) {
        Err(e) => exclusions.push(Exclusion::new("spray", config, rid, "best run", e.to_string())),
        Ok(res) => {
            let truth: Vec<usize> = used.iter().map(|e| e.prediction.truth.index()).collect();
            let both = truth.contains(&0) && truth.contains(&1);
            let ari_truth = if both { adjusted_rand_index(&res.labels, &truth).ok() } else { None };
            let points = used
                .iter()
                .zip(&res.labels)
                .zip(&res.embedding)
                .map(|((e, &cluster), xy)| EmbeddingPoint {
                    image_id: e.prediction.image_id.clone(),
                    x: xy[0],
                    y: xy[1],
                    cluster,
                    confusion_cell: confusion_cell(&e.prediction).into(),
                })
                .collect();
            let mut cluster_means = Vec::new();
            for (k, m) in group_mean_heatmaps(&maps, &res.labels, res.chosen_k)?.into_iter().enumerate() {
                cluster_means.push(match m {
                    Some(v) => {
                        let p = format!("{hdir}/cluster_{k}.vol");
                        io::write_volume(&root.join(&p), &v)?;
                        Some(p)
                    }
                    None => None,
                });
            }
            let mut subsets = Vec::new();
            for (n, cell) in ["FN", "FP"].into_iter().enumerate() {
                let sub: Vec<Volume> = used.iter().filter(|e| confusion_cell(&e.prediction) == cell).map(|e| e.map.clone()).collect();
                if sub.len() < cfg.min_subset {
                    continue;
                }
                match spray(&sub, &spray_params(cfg, config, n as u64 + 1)) {
                    Ok(r) => subsets.push(SubsetSpray {
                        cell: cell.into(),
                        n_maps: sub.len(),
                        chosen_k: r.chosen_k,
                        eigenvalues: r.eigenvalues,
                        labels: r.labels,
                    }),
                    Err(e) => exclusions.push(Exclusion::new("spray", config, rid, format!("{cell} subset"), e.to_string())),
                }
            }
            best.spray = Some(SprayAnalysis {
                n_maps: maps.len(),
                chosen_k: res.chosen_k,
                eigenvalues: res.eigenvalues,
                ari_truth,
                flags: res.flags,
                points,
                cluster_means,
                subsets,
            });
        }
    }
    Ok(best)
}

const METRICS: [&str; 3] = ["accuracy", "sensitivity", "specificity"];

/// Paired correctness vectors of two runs on one test set, restricted to
/// all images, AD images or NC images.
fn correctness(reference: &[Prediction], alternative: &[Prediction], metric: &str) -> Result<(Vec<bool>, Vec<bool>)> {
    let mut r = Vec::new();
    let mut a = Vec::new();
    for p in reference {
        let q = alternative
            .iter()
            .find(|q| q.image_id == p.image_id)
            .ok_or_else(|| LabError::Config(format!("image {} missing from paired run", p.image_id)))?;
        let keep = match metric {
            "sensitivity" => p.truth == Class::Ad,
            "specificity" => p.truth == Class::Nc,
            _ => true,
        };
        if keep {
            r.push(p.correct());
            a.push(q.correct());
        }
    }
    Ok((r, a))
}

/// Aggregates sorted session summaries into the experiment analysis.
pub fn analyze(
    cfg: &ExperimentConfig,
    root: &Path,
    records: &[SubjectRecord],
    plans: &[SessionPlan],
    sessions: &[SessionSummary],
) -> Result<Analysis> {
    let mut exclusions: Vec<Exclusion> = sessions.iter().flat_map(|s| s.exclusions.iter().cloned()).collect();
    let mut configs = cfg.configs.clone();
    configs.sort();
    let per_config: Vec<(ConfigAnalysis, Vec<Exclusion>)> = configs
        .par_iter()
        .map(|&config| {
            let mut excl = Vec::new();
            let all: Vec<&SessionSummary> = sessions.iter().filter(|s| s.config_id == config).collect();
            let mut runs = Vec::new();
            let mut metric_ok: Vec<&SessionSummary> = Vec::new();
            for s in all.iter().filter(|s| s.record.converged) {
                match performance(&s.record.predictions) {
                    Ok(metrics) => {
                        runs.push(RunMetrics {
                            sampling: s.record.sampling,
                            init: s.record.init,
                            metrics,
                            final_val_accuracy: s.record.final_val_accuracy,
                            final_val_loss: s.final_val_loss,
                        });
                        metric_ok.push(s);
                    }
                    Err(e) => {
                        excl.push(Exclusion::new("session", config, Some((s.record.sampling, s.record.init)), "metrics", e.to_string()))
                    }
                }
            }
            let ms: Vec<Metrics> = runs.iter().map(|r| r.metrics).collect();
            let summary = if ms.is_empty() {
                None
            } else {
                Some(summarize_metrics(&ms, seed::derive(cfg.seeds.bootstrap, seed::stream::BOOTSTRAP, config_position(config)))?)
            };
            let best = match select_best(&metric_ok) {
                Some(b) => Some(analyze_best(cfg, root, records, plans, metric_ok[b], runs[b].metrics, &mut excl)?),
                None => None,
            };
            Ok((
                ConfigAnalysis {
                    config_id: config,
                    sessions: all.len(),
                    converged: all.iter().filter(|s| s.record.converged).count(),
                    runs,
                    summary,
                    best,
                },
                excl,
            ))
        })
        .collect::<Result<_>>()?;
    let mut config_rows = Vec::new();
    for (c, e) in per_config {
        config_rows.push(c);
        exclusions.extend(e);
    }

    let find = |c: ConfigId, s: usize, i: usize| sessions.iter().find(|x| x.config_id == c && x.record.sampling == s && x.record.init == i);
    let mut similarity = Vec::new();
    let mut pending = Vec::new();
    for &alt in configs.iter().filter(|&&c| c != cfg.reference) {
        for plan in plans {
            let (s, i) = (plan.sampling, plan.init);
            let (Some(r), Some(a)) = (find(cfg.reference, s, i), find(alt, s, i)) else { continue };
            if !r.record.converged || !a.record.converged {
                let which = if r.record.converged { alt } else { cfg.reference };
                exclusions.push(Exclusion::new(
                    "comparison",
                    alt,
                    Some((s, i)),
                    format!("{} vs {}", alt.as_str(), cfg.reference.as_str()),
                    format!("{} run not converged", which.as_str()),
                ));
                continue;
            }
            for metric in METRICS {
                let (rc, ac) = correctness(&r.record.predictions, &a.record.predictions, metric)?;
                let t = PairedOutcomes::from_correctness(&rc, &ac)?;
                pending.push((alt, s, i, metric, t));
            }
            match (&r.mean_heatmap, &a.mean_heatmap) {
                (Some(pr), Some(pa)) => {
                    let rep = compare_heatmaps(&io::read_volume(&root.join(pr))?, &io::read_volume(&root.join(pa))?);
                    match rep {
                        Ok(m) => similarity.push(SimilarityRow {
                            config_id: alt,
                            sampling: s,
                            init: i,
                            rmse: m.rmse,
                            pearson: m.pearson,
                            mssim: m.mssim,
                            emd: m.emd,
                            iou40: m.iou_top40,
                            iou10: m.iou_top10,
                        }),
                        Err(e) => exclusions.push(Exclusion::new("similarity", alt, Some((s, i)), "mean heatmaps", e.to_string())),
                    }
                }
                _ => {
                    exclusions.push(Exclusion::new("similarity", alt, Some((s, i)), "mean heatmaps", "a paired run has no usable heatmap"))
                }
            }
        }
    }
    let tests: Vec<DiscreteTest> = pending.iter().map(|p| DiscreteTest::mcnemar(p.4.b, p.4.c)).collect();
    let comparisons = if tests.is_empty() {
        Vec::new()
    } else {
        let disc = holm(&tests, cfg.alpha, HolmVariant::Discrete)?;
        let plain = holm(&tests, cfg.alpha, HolmVariant::Plain)?;
        pending
            .iter()
            .enumerate()
            .map(|(k, &(alt, s, i, metric, t))| ComparisonRow {
                ref_config: cfg.reference,
                alt_config: alt,
                sampling: s,
                init: i,
                metric: metric.into(),
                b: t.b,
                c: t.c,
                p_raw: tests[k].p,
                p_adjusted: disc.adjusted[k],
                reject: disc.reject[k],
                p_adjusted_plain: plain.adjusted[k],
                reject_plain: plain.reject[k],
            })
            .collect()
    };
    for e in &exclusions {
        log::warn!("excluded {} {} {}: {}", e.scope, e.config_id.as_str(), e.item, e.reason);
    }
    Ok(Analysis {
        reference: cfg.reference,
        alpha: cfg.alpha,
        top_fraction: cfg.relevance.top_fraction,
        configs: config_rows,
        similarity,
        comparisons,
        exclusions,
    })
}

/// Full grid: cohort, sessions, analysis and report under `root`.
pub fn run_experiment(cfg: &ExperimentConfig, root: &Path) -> Result<Analysis> {
    cfg.validate()?;
    io::write_json(&root.join(CONFIG_FILE), cfg)?;
    let (records, plans) = prepare(cfg)?;
    let sessions = run_sessions(cfg, root, &records, &plans)?;
    let analysis = analyze(cfg, root, &records, &plans, &sessions)?;
    io::write_json(&root.join(ANALYSIS_FILE), &analysis)?;
    crate::report::render_report(root)?;
    if analysis.configs.iter().all(|c| c.converged == 0) {
        return Err(LabError::NoConvergedRuns);
    }
    Ok(analysis)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn summary(s: usize, i: usize, acc: f64, loss: f64, converged: bool) -> SessionSummary {
        SessionSummary {
            config_id: ConfigId::A2,
            record: RunRecord {
                config_id: "A2".into(),
                sampling: s,
                init: i,
                converged,
                exclusion: None,
                final_val_accuracy: acc,
                predictions: Vec::new(),
                curves_path: None,
                checkpoint_path: None,
            },
            final_val_loss: loss,
            mean_heatmap: None,
            exclusions: Vec::new(),
        }
    }

    #[test]
    fn best_run_tie_breaks() {
        let runs =
            [summary(0, 0, 0.8, 0.3, true), summary(0, 1, 0.9, 0.5, true), summary(1, 0, 0.9, 0.4, true), summary(1, 1, 0.95, 0.1, false)];
        let refs: Vec<&SessionSummary> = runs.iter().collect();
        assert_eq!(select_best(&refs), Some(2));
        let tied = [summary(1, 0, 0.9, 0.4, true), summary(0, 2, 0.9, 0.4, true)];
        assert_eq!(select_best(&tied.iter().collect::<Vec<_>>()), Some(1));
        assert_eq!(select_best(&[&runs[3]]), None);
    }

    #[test]
    fn paired_correctness_by_metric() {
        let p = |id: &str, truth, predicted| Prediction { image_id: id.into(), truth, predicted, score: 0.5 };
        let r = vec![p("a", Class::Ad, Class::Ad), p("b", Class::Nc, Class::Ad), p("c", Class::Nc, Class::Nc)];
        let a = vec![p("c", Class::Nc, Class::Ad), p("a", Class::Ad, Class::Nc), p("b", Class::Nc, Class::Nc)];
        assert_eq!(correctness(&r, &a, "accuracy").unwrap(), (vec![true, false, true], vec![false, true, false]));
        assert_eq!(correctness(&r, &a, "sensitivity").unwrap(), (vec![true], vec![false]));
        assert_eq!(correctness(&r, &a, "specificity").unwrap(), (vec![false, true], vec![true, false]));
    }

    #[test]
    fn unusable_maps() {
        let d = shortcut_core::Dims::cube(2);
        assert!(unusable(&Volume::zeros(d, 1.0)).is_some());
        assert!(unusable(&Volume::filled(d, 1.0, -1.0)).is_some());
        assert!(unusable(&Volume::filled(d, 1.0, 0.5)).is_none());
    }
}

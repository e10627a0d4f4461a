//! Tables and slice images rendered from an experiment's `analysis.json`
//! and heatmap volumes.

use std::path::Path;

use serde::Serialize;

use shortcut_core::prep::ConfigId;
use shortcut_core::relevance::{top_relevance_threshold, RELEVANCE_BINS};
use shortcut_core::stats::{Summary, BOOTSTRAP_RESAMPLES};
use shortcut_core::Volume;

use crate::error::Result;
use crate::experiment::{Analysis, ConfigAnalysis, SimilarityRow, ANALYSIS_FILE};
use crate::io;

pub const REPORT_DIR: &str = "reports";

/// Display window of a heatmap: the top-relevance threshold, or `None` when
/// the map has no positive mass to window.
pub fn window_threshold(map: &Volume, fraction: f64) -> Option<f64> {
    top_relevance_threshold(map, fraction, RELEVANCE_BINS).ok()
}

/// Mid-axial slice (`z = nz / 2`) as 8-bit grey levels: zero below the
/// threshold, then linear up to the volume maximum.
pub fn slice_pixels(map: &Volume, threshold: Option<f64>) -> Vec<u8> {
    let d = map.dims();
    let z = d.nz / 2;
    let max = map.max() as f64;
    let mut px = Vec::with_capacity(d.nx * d.ny);
    for y in 0..d.ny {
        for x in 0..d.nx {
            let v = map.get(x, y, z) as f64;
            let g = match threshold {
                None => 0.0,
                Some(t) if v < t => 0.0,
                Some(t) if max > t => 255.0 * (v - t) / (max - t),
                Some(_) => 255.0,
            };
            px.push(g.round().clamp(0.0, 255.0) as u8);
        }
    }
    px
}

/// Windowed mid-axial PGM of `map` and the threshold used.
pub fn slice_pgm(map: &Volume, fraction: f64) -> (Vec<u8>, Option<f64>) {
    let t = window_threshold(map, fraction);
    let d = map.dims();
    (io::encode_pgm(d.nx, d.ny, &slice_pixels(map, t)), t)
}

#[derive(Serialize)]
struct PerformanceRow {
    config: ConfigId,
    sessions: usize,
    converged: usize,
    accuracy_mean: Option<f64>,
    accuracy_sd: Option<f64>,
    accuracy_ci_low: Option<f64>,
    accuracy_ci_high: Option<f64>,
    sensitivity_mean: Option<f64>,
    sensitivity_sd: Option<f64>,
    sensitivity_ci_low: Option<f64>,
    sensitivity_ci_high: Option<f64>,
    specificity_mean: Option<f64>,
    specificity_sd: Option<f64>,
    specificity_ci_low: Option<f64>,
    specificity_ci_high: Option<f64>,
    auc_mean: Option<f64>,
    auc_sd: Option<f64>,
    auc_ci_low: Option<f64>,
    auc_ci_high: Option<f64>,
    best_sampling: Option<usize>,
    best_init: Option<usize>,
    ci_method: String,
    flag: String,
}

type Cols = (Option<f64>, Option<f64>, Option<f64>, Option<f64>);

fn cols(s: Option<&Summary>) -> Cols {
    match s {
        Some(s) => (Some(s.mean), s.sd, s.ci_low, s.ci_high),
        None => (None, None, None, None),
    }
}

fn performance_row(c: &ConfigAnalysis) -> PerformanceRow {
    let s = c.summary.as_ref();
    let acc = cols(s.map(|s| &s.accuracy));
    let sen = cols(s.map(|s| &s.sensitivity));
    let spe = cols(s.map(|s| &s.specificity));
    let auc = cols(s.map(|s| &s.auc));
    PerformanceRow {
        config: c.config_id,
        sessions: c.sessions,
        converged: c.converged,
        accuracy_mean: acc.0,
        accuracy_sd: acc.1,
        accuracy_ci_low: acc.2,
        accuracy_ci_high: acc.3,
        sensitivity_mean: sen.0,
        sensitivity_sd: sen.1,
        sensitivity_ci_low: sen.2,
        sensitivity_ci_high: sen.3,
        specificity_mean: spe.0,
        specificity_sd: spe.1,
        specificity_ci_low: spe.2,
        specificity_ci_high: spe.3,
        auc_mean: auc.0,
        auc_sd: auc.1,
        auc_ci_low: auc.2,
        auc_ci_high: auc.3,
        best_sampling: c.best.as_ref().map(|b| b.sampling),
        best_init: c.best.as_ref().map(|b| b.init),
        ci_method: format!("percentile bootstrap of the session mean, {BOOTSTRAP_RESAMPLES} resamples"),
        flag: if c.converged == 0 { "no converged runs".into() } else { String::new() },
    }
}

#[derive(Serialize)]
struct SimilaritySummaryRow {
    config: ConfigId,
    pairs: usize,
    rmse_mean: Option<f64>,
    rmse_sd: Option<f64>,
    pearson_mean: Option<f64>,
    pearson_sd: Option<f64>,
    mssim_mean: Option<f64>,
    mssim_sd: Option<f64>,
    emd_mean: Option<f64>,
    emd_sd: Option<f64>,
    iou40_mean: Option<f64>,
    iou40_sd: Option<f64>,
    iou10_mean: Option<f64>,
    iou10_sd: Option<f64>,
    flag: String,
}

fn mean_sd(v: &[f64]) -> (Option<f64>, Option<f64>) {
    if v.is_empty() {
        return (None, None);
    }
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    let sd = (v.len() > 1).then(|| (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0)).sqrt());
    (Some(m), sd)
}

fn similarity_summary(config: ConfigId, rows: &[&SimilarityRow]) -> SimilaritySummaryRow {
    let col = |f: fn(&SimilarityRow) -> f64| mean_sd(&rows.iter().map(|r| f(r)).collect::<Vec<_>>());
    let (rmse, pearson, mssim, emd, iou40, iou10) =
        (col(|r| r.rmse), col(|r| r.pearson), col(|r| r.mssim), col(|r| r.emd), col(|r| r.iou40), col(|r| r.iou10));
    SimilaritySummaryRow {
        config,
        pairs: rows.len(),
        rmse_mean: rmse.0,
        rmse_sd: rmse.1,
        pearson_mean: pearson.0,
        pearson_sd: pearson.1,
        mssim_mean: mssim.0,
        mssim_sd: mssim.1,
        emd_mean: emd.0,
        emd_sd: emd.1,
        iou40_mean: iou40.0,
        iou40_sd: iou40.1,
        iou10_mean: iou10.0,
        iou10_sd: iou10.1,
        flag: if rows.is_empty() { "no paired converged runs".into() } else { String::new() },
    }
}

#[derive(Serialize)]
struct FocusRow {
    config: ConfigId,
    best_sampling: Option<usize>,
    best_init: Option<usize>,
    heatmaps_used: usize,
    heatmaps_excluded: usize,
    top_fraction: f64,
    boundary_focus: Option<f64>,
    flag: String,
}

#[derive(Serialize)]
struct SprayRow {
    config: ConfigId,
    n_maps: usize,
    chosen_k: Option<usize>,
    ari_truth: Option<f64>,
    fn_clusters: Option<usize>,
    fp_clusters: Option<usize>,
    flags: String,
}

#[derive(Serialize)]
struct EigenRow {
    index: usize,
    eigenvalue: f64,
}

/// Writes every table and slice image under `<root>/reports`.
pub fn render_report(root: &Path) -> Result<()> {
    let analysis: Analysis = io::read_json(&root.join(ANALYSIS_FILE))?;
    let out = root.join(REPORT_DIR);
    let perf: Vec<PerformanceRow> = analysis.configs.iter().map(performance_row).collect();
    io::write_csv(&out.join("performance.csv"), &perf)?;

    if analysis.similarity.is_empty() {
        io::write_csv_header(
            &out.join("similarity.csv"),
            &["config_id", "sampling", "init", "rmse", "pearson", "mssim", "emd", "iou40", "iou10"],
        )?;
    } else {
        io::write_csv(&out.join("similarity.csv"), &analysis.similarity)?;
    }
    let sim_summary: Vec<SimilaritySummaryRow> = analysis
        .configs
        .iter()
        .filter(|c| c.config_id != analysis.reference)
        .map(|c| similarity_summary(c.config_id, &analysis.similarity.iter().filter(|r| r.config_id == c.config_id).collect::<Vec<_>>()))
        .collect();
    io::write_csv(&out.join("similarity_summary.csv"), &sim_summary)?;

    if analysis.comparisons.is_empty() {
        let header = [
            "ref_config",
            "alt_config",
            "sampling",
            "init",
            "metric",
            "b",
            "c",
            "p_raw",
            "p_adjusted",
            "reject",
            "p_adjusted_plain",
            "reject_plain",
        ];
        io::write_csv_header(&out.join("comparisons.csv"), &header)?;
    } else {
        io::write_csv(&out.join("comparisons.csv"), &analysis.comparisons)?;
    }

    let focus: Vec<FocusRow> = analysis
        .configs
        .iter()
        .map(|c| FocusRow {
            config: c.config_id,
            best_sampling: c.best.as_ref().map(|b| b.sampling),
            best_init: c.best.as_ref().map(|b| b.init),
            heatmaps_used: c.best.as_ref().map_or(0, |b| b.heatmaps_used),
            heatmaps_excluded: c.best.as_ref().map_or(0, |b| b.heatmaps_excluded),
            top_fraction: analysis.top_fraction,
            boundary_focus: c.best.as_ref().and_then(|b| b.boundary_focus),
            flag: match &c.best {
                None => "no converged runs".into(),
                Some(b) if b.heatmaps_used == 0 => "no usable heatmaps".into(),
                Some(_) => String::new(),
            },
        })
        .collect();
    io::write_csv(&out.join("boundary_focus.csv"), &focus)?;

    let mut spray_rows = Vec::new();
    for c in &analysis.configs {
        let sp = c.best.as_ref().and_then(|b| b.spray.as_ref());
        let subset_k = |cell: &str| sp.and_then(|s| s.subsets.iter().find(|x| x.cell == cell)).map(|x| x.chosen_k);
        spray_rows.push(SprayRow {
            config: c.config_id,
            n_maps: sp.map_or(0, |s| s.n_maps),
            chosen_k: sp.map(|s| s.chosen_k),
            ari_truth: sp.and_then(|s| s.ari_truth),
            fn_clusters: subset_k("FN"),
            fp_clusters: subset_k("FP"),
            flags: sp.map(|s| s.flags.join("; ")).unwrap_or_else(|| "not clustered".into()),
        });
        let Some(sp) = sp else { continue };
        let id = c.config_id.as_str();
        io::write_csv(&out.join(format!("spray/{id}_embedding.csv")), &sp.points)?;
        let eig: Vec<EigenRow> = sp.eigenvalues.iter().enumerate().map(|(index, &eigenvalue)| EigenRow { index, eigenvalue }).collect();
        io::write_csv(&out.join(format!("spray/{id}_eigenvalues.csv")), &eig)?;
    }
    io::write_csv(&out.join("spray_summary.csv"), &spray_rows)?;

    if analysis.exclusions.is_empty() {
        io::write_csv_header(&out.join("exclusions.csv"), &["scope", "config_id", "sampling", "init", "item", "reason"])?;
    } else {
        io::write_csv(&out.join("exclusions.csv"), &analysis.exclusions)?;
    }

    for c in &analysis.configs {
        let Some(best) = &c.best else { continue };
        let id = c.config_id.as_str();
        let mut volumes: Vec<(String, &String)> = best.mean_heatmap.iter().map(|p| (format!("{id}_mean"), p)).collect();
        if let Some(sp) = &best.spray {
            for (k, p) in sp.cluster_means.iter().enumerate() {
                if let Some(p) = p {
                    volumes.push((format!("{id}_cluster_{k}"), p));
                }
            }
        }
        for (name, path) in volumes {
            let map = io::read_volume(&root.join(path))?;
            let (pgm, _) = slice_pgm(&map, analysis.top_fraction);
            io::write_bytes(&out.join(format!("slices/{name}.pgm")), &pgm)?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use shortcut_core::Dims;

    #[test]
    fn window_is_linear_above_threshold() {
        let d = Dims::new(4, 1, 1);
        let v = Volume::new(d, 1.0, vec![0.0, 1.0, 2.0, 4.0]).unwrap();
        assert_eq!(slice_pixels(&v, Some(2.0)), vec![0, 0, 0, 255]);
        assert_eq!(slice_pixels(&v, Some(0.0)), vec![0, 64, 128, 255]);
        assert_eq!(slice_pixels(&v, None), vec![0; 4]);
    }

    #[test]
    fn constant_slices_are_uniform() {
        for c in [0.0f32, 0.3, 7.0] {
            let v = Volume::filled(Dims::new(3, 5, 4), 1.0, c);
            let (pgm, _) = slice_pgm(&v, 0.4);
            let header = b"P5\n3 5\n255\n".len();
            let px = &pgm[header..];
            assert_eq!(px.len(), 15);
            assert!(px.iter().all(|&p| p == px[0]), "{c}");
        }
    }
}

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::OnceLock;

use sha2::{Digest, Sha256};

use shortcut_core::phantom::generate_cohort;
use shortcut_core::prep::ConfigId;
use shortcut_core::relevance::{top_relevance_threshold, RELEVANCE_BINS};
use shortcut_lab::experiment::{Analysis, ANALYSIS_FILE};
use shortcut_lab::report::slice_pgm;
use shortcut_lab::{io, run_experiment, ExperimentConfig};

fn toy(configs: Vec<ConfigId>) -> ExperimentConfig {
    let mut cfg = ExperimentConfig { n_subjects: 60, configs, n_samplings: 1, n_inits: 1, ..Default::default() };
    cfg.hyperparams.epochs = 8;
    cfg.hyperparams.batch_size = 10;
    cfg
}

struct Toy {
    _dir: tempfile::TempDir,
    root: PathBuf,
    analysis: Analysis,
}

fn toy_run() -> &'static Toy {
    static RUN: OnceLock<Toy> = OnceLock::new();
    RUN.get_or_init(|| {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path().join("out");
        let analysis = run_experiment(&toy(vec![ConfigId::A2, ConfigId::D2]), &root).unwrap();
        Toy { _dir: dir, root, analysis }
    })
}

fn data_rows(path: &Path) -> usize {
    csv::Reader::from_path(path).unwrap().records().count()
}

/// SHA-256 of every file under `root`, keyed by relative path.
fn tree_hashes(root: &Path) -> BTreeMap<String, String> {
    fn walk(dir: &Path, root: &Path, out: &mut BTreeMap<String, String>) {
        for e in std::fs::read_dir(dir).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                walk(&p, root, out);
            } else {
                let digest = Sha256::digest(std::fs::read(&p).unwrap());
                let hex: String = digest.iter().map(|b| format!("{b:02x}")).collect();
                out.insert(p.strip_prefix(root).unwrap().display().to_string(), hex);
            }
        }
    }
    let mut out = BTreeMap::new();
    walk(root, root, &mut out);
    out
}

#[test]
fn two_config_toy_run_counts() {
    let t = toy_run();
    assert!(t.analysis.configs.iter().all(|c| c.sessions == 1 && c.converged == 1), "{:?}", t.analysis.exclusions);
    let reports = t.root.join("reports");
    assert_eq!(data_rows(&reports.join("performance.csv")), 2);
    assert_eq!(data_rows(&reports.join("boundary_focus.csv")), 2);
    assert_eq!(data_rows(&reports.join("comparisons.csv")), 3);
    assert_eq!(data_rows(&reports.join("similarity.csv")), 1);
    for dir in ["runs/A2/0_0", "runs/D2/0_0"] {
        for f in ["checkpoint.spm", "curves.csv", "predictions.csv", "record.json"] {
            assert!(t.root.join(dir).join(f).is_file(), "{dir}/{f}");
        }
    }
    let reread: Analysis = io::read_json(&t.root.join(ANALYSIS_FILE)).unwrap();
    assert_eq!(&reread, &t.analysis);
}

#[test]
fn comparison_accounting() {
    let t = toy_run();
    let a = &t.analysis;
    let converged = |c: ConfigId| a.config(c).unwrap().runs.iter().map(|r| (r.sampling, r.init)).collect::<Vec<_>>();
    let reference = converged(a.reference);
    let paired: usize = a
        .configs
        .iter()
        .filter(|c| c.config_id != a.reference)
        .map(|c| converged(c.config_id).iter().filter(|r| reference.contains(r)).count())
        .sum();
    assert_eq!(a.comparisons.len(), 3 * paired);
    assert!(a.exclusions.iter().all(|e| !e.reason.is_empty()));
}

#[test]
fn report_window_matches_relevance_threshold() {
    let t = toy_run();
    for id in ["A2", "D2"] {
        let map = io::read_volume(&t.root.join(format!("heatmaps/{id}/mean.vol"))).unwrap();
        let (pgm, threshold) = slice_pgm(&map, t.analysis.top_fraction);
        let expected = top_relevance_threshold(&map, 0.4, RELEVANCE_BINS).unwrap();
        assert_eq!(threshold, Some(expected));
        let written = std::fs::read(t.root.join(format!("reports/slices/{id}_mean.pgm"))).unwrap();
        assert_eq!(written, pgm);
        let d = map.dims();
        let header = format!("P5\n{} {}\n255\n", d.nx, d.ny).len();
        let z = d.nz / 2;
        for y in 0..d.ny {
            for x in 0..d.nx {
                let dark = pgm[header + y * d.nx + x] == 0;
                if (map.get(x, y, z) as f64) < expected {
                    assert!(dark);
                }
            }
        }
    }
}

#[test]
fn rerun_gives_identical_tree() {
    let t = toy_run();
    let dir = tempfile::tempdir().unwrap();
    let pool = rayon::ThreadPoolBuilder::new().num_threads(3).build().unwrap();
    pool.install(|| run_experiment(&toy(vec![ConfigId::A2, ConfigId::D2]), dir.path())).unwrap();
    assert_eq!(tree_hashes(dir.path()), tree_hashes(&t.root));
}

#[test]
fn sessions_are_isolated() {
    let t = toy_run();
    let dir = tempfile::tempdir().unwrap();
    // B2 replaces D2 in the grid; the A2 sessions must not notice
    let cfg = toy(vec![ConfigId::A2, ConfigId::B2]);
    let other = run_experiment(&cfg, dir.path()).unwrap();
    assert_eq!(other.config(ConfigId::A2).unwrap().runs, t.analysis.config(ConfigId::A2).unwrap().runs);
    for f in ["checkpoint.spm", "predictions.csv", "curves.csv", "mean_heatmap.vol"] {
        let p = format!("runs/A2/0_0/{f}");
        assert_eq!(std::fs::read(dir.path().join(&p)).unwrap(), std::fs::read(t.root.join(&p)).unwrap(), "{p}");
    }
}

#[test]
fn dataset_round_trip() {
    let cfg = ExperimentConfig { n_subjects: 6, images_per_subject: 2, ..Default::default() };
    let records = generate_cohort(&cfg.phantom, 6, 2, cfg.seeds.cohort).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let manifest = io::write_dataset(dir.path(), &cfg.phantom, cfg.seeds.cohort, 2, &records).unwrap();
    assert_eq!(manifest.entries.len(), 12);
    let (m2, back) = io::read_dataset(dir.path()).unwrap();
    assert_eq!(m2, manifest);
    assert_eq!(back, records);
}

//! End-to-end acceptance checks. Every test writes one `PASS` or `FAIL`
//! line to stderr (uncaptured) before asserting.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;
use std::process::Command;
use std::time::Instant;

use rand::Rng;

use shortcut_core::net::{Activation, Architecture, Gradients, LayerSpec, Model};
use shortcut_core::phantom::{PhantomSpec, SignalMode};
use shortcut_core::prep::ConfigId;
use shortcut_core::relevance::{lrp, LrpParams};
use shortcut_core::similarity::{compare_heatmaps, emd};
use shortcut_core::spray::{adjusted_rand_index, affinity, eigengap_k, laplacian_spectrum, spectral_cluster, AffinityGraph};
use shortcut_core::stats::{holm, mcnemar_exact, DiscreteTest, HolmVariant};
use shortcut_core::{seed, Dims, Volume};
use shortcut_lab::config::Seeds;
use shortcut_lab::{run_experiment, Analysis, ExperimentConfig};

fn verdict(id: &str, name: &str, pass: bool, detail: &str) {
    let line = format!("acceptance {id} {name}: {} ({detail})\n", if pass { "PASS" } else { "FAIL" });
    let _ = std::io::stderr().write_all(line.as_bytes());
    assert!(pass, "{name}: {detail}");
}

fn run_grid(cfg: &ExperimentConfig) -> Analysis {
    let dir = tempfile::tempdir().unwrap();
    run_experiment(cfg, dir.path()).unwrap()
}

/// Training settings shared by the learned-model checks.
fn grid(
    phantom: PhantomSpec,
    configs: &[ConfigId],
    n_subjects: usize,
    epochs: usize,
    n_samplings: usize,
    n_inits: usize,
    base_seed: u64,
) -> ExperimentConfig {
    let mut cfg = ExperimentConfig {
        phantom,
        n_subjects,
        configs: configs.to_vec(),
        reference: configs[0],
        n_samplings,
        n_inits,
        seeds: Seeds::from_base(base_seed),
        ..Default::default()
    };
    cfg.hyperparams.epochs = epochs;
    cfg
}

#[test]
fn c01_shortcut_reproduction() {
    let configs = [ConfigId::A2, ConfigId::B2, ConfigId::C2, ConfigId::D2];
    let cfg = grid(PhantomSpec::default(), &configs, 200, 30, 3, 3, 1);
    let start = Instant::now();
    let a = run_grid(&cfg);
    let secs = start.elapsed().as_secs_f64();
    let acc = |c: ConfigId| a.config(c).and_then(|x| x.summary).map_or(f64::NAN, |s| s.accuracy.mean);
    let reference = acc(ConfigId::A2);
    let mut pass = secs < 600.0 && reference > 0.85;
    let mut detail = format!("A2 {reference:.3}");
    for c in &configs[1..] {
        let v = acc(*c);
        pass &= v > 0.85 && (v - reference).abs() <= 0.05;
        detail.push_str(&format!(", {} {v:.3}", c.as_str()));
    }
    detail.push_str(&format!(", {secs:.0} s"));
    verdict("01", "shortcut reproduction", pass, &detail);
}

fn morphology_phantom() -> PhantomSpec {
    PhantomSpec { signal_mode: SignalMode::MorphologyOnly, ..Default::default() }
}

/// Class signal only in the brain texture. A small brain inside a thick
/// bright skull keeps the brain surface far from the head surface.
fn texture_phantom() -> PhantomSpec {
    PhantomSpec {
        dims: Dims::cube(24),
        signal_mode: SignalMode::TextureOnly,
        shell_intensity: 1.0,
        brain_radius_frac: [0.3, 0.3],
        shell_thickness_vox: 8.0,
        ..Default::default()
    }
}

#[test]
fn c02_boundary_cue_detection() {
    let stripped = [ConfigId::A2, ConfigId::B2, ConfigId::C2, ConfigId::D2];
    let mut pass = true;
    let mut detail = Vec::new();
    for s in 1..=3 {
        let a = run_grid(&grid(morphology_phantom(), &stripped, 120, 20, 1, 2, s));
        for c in stripped {
            let f = a.config(c).and_then(|x| x.best.as_ref()).and_then(|b| b.boundary_focus).unwrap_or(f64::NAN);
            pass &= f >= 0.5;
            detail.push(format!("s{s} {} {f:.3}", c.as_str()));
        }
        let a = run_grid(&grid(texture_phantom(), &[ConfigId::A1], 200, 30, 1, 3, s));
        let f = a.config(ConfigId::A1).and_then(|x| x.best.as_ref()).and_then(|b| b.boundary_focus).unwrap_or(f64::NAN);
        pass &= f < 0.25;
        detail.push(format!("s{s} A1 {f:.3}"));
    }
    verdict("02", "boundary-cue detection", pass, &detail.join(", "));
}

fn random_volume(d: Dims, s: u64, lo: f64, hi: f64) -> Volume {
    let mut rng = seed::rng(s);
    Volume::new(d, 1.0, (0..d.len()).map(|_| rng.random_range(lo..hi) as f32).collect()).unwrap()
}

fn negative_biases(m: &mut Model<f64>, s: u64, scale: f64) {
    let mut rng = seed::rng(s);
    for l in m.layers_mut() {
        for b in &mut l.biases {
            *b = -rng.random_range(0.0..scale);
        }
    }
}

/// Positive evidence reaching output unit `target`: the sum of its positive
/// input contributions. The alpha-one rule can only route relevance through
/// units that have some.
fn positive_evidence(model: &Model<f64>, image: &Volume, target: usize) -> f64 {
    let trace = model.forward(image).unwrap();
    let out = model.layers().last().unwrap();
    let x = trace.inputs.last().unwrap();
    let row = &out.weights[target * x.len()..(target + 1) * x.len()];
    row.iter().zip(x).map(|(w, a)| (w * a).max(0.0)).sum()
}

#[test]
fn c03_lrp_conservation() {
    let mut worst = 0.0f64;
    let (mut cases, mut absorbed) = (0, 0);
    let (mut monotone, mut silent) = (true, true);
    for (size, blocks) in [(4usize, 1usize), (8, 2), (16, 3)] {
        let dims = Dims::cube(size);
        let arch = Architecture { blocks, channels: 3, hidden_units: 5, classes: 2 };
        for s in 0..10u64 {
            let mut model = Model::<f64>::with_architecture(dims, &arch, 100 + s).unwrap();
            let image = random_volume(dims, 200 + s, 0.0, 1.0);
            let logits = model.forward(&image).unwrap().pre.last().unwrap().clone();
            for target in 0..2 {
                let score = logits[target];
                let r = lrp(&model, &image, target, &LrpParams::default()).unwrap();
                let total: f64 = r.map.data().iter().map(|&v| v as f64).sum();
                if positive_evidence(&model, &image, target) == 0.0 {
                    // a logit built from negative contributions only has nothing to pass down
                    absorbed += 1;
                    silent &= total == 0.0;
                    continue;
                }
                worst = worst.max((total - score).abs() / score.abs());
                cases += 1;
            }
            negative_biases(&mut model, 400 + s, 0.02);
            let logits = model.forward(&image).unwrap().pre.last().unwrap().clone();
            let target = if logits[0] >= logits[1] { 0 } else { 1 };
            let r = lrp(&model, &image, target, &LrpParams::default()).unwrap();
            if r.target_score > 0.0 {
                monotone &= r.layer_totals.windows(2).all(|w| w[1] <= w[0] + 1e-9 * w[0].abs().max(1.0));
            }
        }
    }
    let pass = worst <= 1e-4 && cases >= 40 && monotone && silent;
    verdict(
        "03",
        "LRP conservation",
        pass,
        &format!("{cases} zero-bias targets, worst relative error {worst:.2e}, {absorbed} targets without positive evidence (zero map {silent}), negative-bias totals non-increasing {monotone}"),
    );
}

#[test]
fn c04_gradient_correctness() {
    let dims = Dims::cube(4);
    let specs = vec![
        LayerSpec::conv(1, 2),
        LayerSpec::strided(2, 2),
        LayerSpec::dense(2 * 8, 4, Activation::Relu),
        LayerSpec::dense(4, 2, Activation::Softmax),
    ];
    let h = 1e-4;
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let (mut checked, mut s, mut worst) = (0, 0u64, 0.0f64);
    while checked < 20 {
        s += 1;
        let mut model = Model::<f64>::init(dims, &specs, s).unwrap();
        negative_biases(&mut model, s + 1000, 0.05);
        let image = random_volume(dims, s + 2000, -1.0, 1.0);
        let label = (s % 2) as usize;
        let trace = model.forward(&image).unwrap();
        // central differences are meaningless across a ReLU kink
        let kink =
            model.layers().iter().zip(&trace.pre).any(|(l, z)| l.spec.activation == Activation::Relu && z.iter().any(|v| v.abs() < 1e-2));
        if kink {
            continue;
        }
        let mut grads = Gradients::zeros_like(&model);
        model.backward(&trace, label, &mut grads).unwrap();
        let x = model.input_tensor(&image).unwrap();
        for li in 0..specs.len() {
            for biases in [false, true] {
                let n = if biases { specs[li].out_channels } else { specs[li].weight_len() };
                let fd: Vec<f64> = (0..n)
                    .map(|i| {
                        let loss = |delta: f64| {
                            let mut m = model.clone();
                            let l = &mut m.layers_mut()[li];
                            if biases {
                                l.biases[i] += delta
                            } else {
                                l.weights[i] += delta
                            }
                            m.loss_on(&x, label)
                        };
                        (loss(h) - loss(-h)) / (2.0 * h)
                    })
                    .collect();
                let an = if biases { &grads.biases[li] } else { &grads.weights[li] };
                let diff: Vec<f64> = an.iter().zip(&fd).map(|(a, b)| a - b).collect();
                worst = worst.max(norm(&diff) / (norm(an) + norm(&fd)).max(1e-8));
            }
        }
        checked += 1;
    }
    verdict("04", "gradient correctness", worst < 1e-3, &format!("20 instances, conv/strided/dense, worst relative error {worst:.2e}"));
}

#[test]
fn c05_mcnemar_oracle() {
    let mut cases = 0;
    let mut worst = 0.0f64;
    for n in 0..=20u32 {
        let mut row = vec![1u64];
        for _ in 0..n {
            let mut next = vec![1u64; row.len() + 1];
            for k in 1..row.len() {
                next[k] = row[k - 1] + row[k];
            }
            row = next;
        }
        for b in 0..=n {
            let c = n - b;
            let tail: u64 = row[..=b.min(c) as usize].iter().sum();
            let expected = (2.0 * tail as f64 / 2f64.powi(n as i32)).min(1.0);
            worst = worst.max((mcnemar_exact(b as u64, c as u64) - expected).abs());
            cases += 1;
        }
    }
    verdict("05", "McNemar oracle", cases == 231 && worst <= 1e-12, &format!("{cases} tables, worst absolute error {worst:.1e}"));
}

#[test]
fn c06_holm_control() {
    let mut rng = seed::rng(2024);
    let families = 10_000;
    let (mut fw_plain, mut fw_disc, mut dominated) = (0, 0, true);
    for _ in 0..families {
        let tests: Vec<DiscreteTest> = (0..20)
            .map(|_| {
                // discordant pairs of a null comparison split evenly in expectation
                let n_disc = rng.random_range(0..=30u64);
                let b = (0..n_disc).filter(|_| rng.random_bool(0.5)).count() as u64;
                DiscreteTest::mcnemar(b, n_disc - b)
            })
            .collect();
        let p = holm(&tests, 0.05, HolmVariant::Plain).unwrap();
        let d = holm(&tests, 0.05, HolmVariant::Discrete).unwrap();
        fw_plain += p.reject.iter().any(|&r| r) as usize;
        fw_disc += d.reject.iter().any(|&r| r) as usize;
        dominated &= p.reject.iter().zip(&d.reject).all(|(&a, &b)| !a || b);
    }
    let (rp, rd) = (fw_plain as f64 / families as f64, fw_disc as f64 / families as f64);
    let pass = rp <= 0.06 && rd <= 0.06 && dominated;
    verdict(
        "06",
        "Holm control",
        pass,
        &format!("FWER plain {rp:.4}, discrete {rd:.4}, discrete rejects every plain rejection {dominated}"),
    );
}

#[test]
fn c07_similarity_identities() {
    let d = Dims::new(10, 8, 7);
    let mut pass = true;
    let mut worst = 0.0f64;
    for s in 0..10 {
        let a = random_volume(d, 900 + s, 0.0, 1.0);
        let r = compare_heatmaps(&a, &a).unwrap();
        let err = [r.rmse, r.pearson - 1.0, r.mssim - 1.0, r.emd, r.iou_top40 - 1.0, r.iou_top10 - 1.0]
            .iter()
            .fold(0.0f64, |m, v| m.max(v.abs()));
        worst = worst.max(err);
        let small = random_volume(Dims::new(4, 8, 7), 950 + s, 0.1, 1.0);
        for shift in 1..=5usize {
            let place = |off: usize| {
                let mut v = Volume::zeros(d, 1.0);
                for z in 0..7 {
                    for y in 0..8 {
                        for x in 0..4 {
                            v.set(x + off, y, z, small.get(x, y, z));
                        }
                    }
                }
                v
            };
            let e = emd(&place(0), &place(shift)).unwrap();
            pass &= (e - shift as f64 / 3.0).abs() <= 1e-9;
        }
    }
    pass &= worst <= 1e-9;
    verdict(
        "07",
        "similarity identities",
        pass,
        &format!("self-comparison worst deviation {worst:.1e}, shifts 1..5 give emd shift/3 {pass}"),
    );
}

#[test]
fn c08_spectral_suite() {
    let mut rng = seed::rng(77);
    let mut in_range = true;
    let mut multiplicity = true;
    for _ in 0..50 {
        let blocks = rng.random_range(1..=5usize);
        let sizes: Vec<usize> = (0..blocks).map(|_| rng.random_range(2..=8)).collect();
        let n: usize = sizes.iter().sum();
        let mut block_of = Vec::new();
        for (b, &s) in sizes.iter().enumerate() {
            block_of.extend(std::iter::repeat_n(b, s));
        }
        let mut w = vec![0.0; n * n];
        for i in 0..n {
            for j in i + 1..n {
                if block_of[i] == block_of[j] {
                    let v = rng.random_range(0.1..1.0);
                    w[i * n + j] = v;
                    w[j * n + i] = v;
                }
            }
        }
        let spec = laplacian_spectrum(&AffinityGraph { n, weights: w, k_neighbors: n - 1, sigma: 1.0 }).unwrap();
        in_range &= spec.eigenvalues.iter().all(|&l| (-1e-8..=2.0 + 1e-8).contains(&l));
        multiplicity &= spec.eigenvalues.iter().filter(|&&l| l.abs() < 1e-8).count() == blocks;
    }
    let normal = rand_distr::Normal::new(0.0, 1.0).unwrap();
    let mut planted = true;
    for s in 0..20 {
        let mut r = seed::rng(s);
        let mut pts = Vec::new();
        let mut truth = Vec::new();
        for c in 0..2 {
            for _ in 0..30 {
                let mut p: Vec<f64> = (0..3).map(|_| rand_distr::Distribution::sample(&normal, &mut r)).collect();
                p[0] += 10.0 * c as f64;
                pts.push(p);
                truth.push(c);
            }
        }
        let spec = laplacian_spectrum(&affinity(&pts, 10).unwrap()).unwrap();
        let labels = spectral_cluster(&spec, 2, 20, s).unwrap();
        planted &= adjusted_rand_index(&labels, &truth).unwrap() == 1.0;
    }
    let mut gaps = true;
    for m in 2..=6 {
        let mut ev = vec![0.0; m];
        ev.extend((0..12).map(|i| 0.9 + 0.01 * i as f64));
        gaps &= eigengap_k(&ev, 10).unwrap() == m;
    }
    let pass = in_range && multiplicity && planted && gaps;
    verdict(
        "08",
        "spectral suite",
        pass,
        &format!(
            "eigenvalues in [0, 2] {in_range}, zero multiplicity = components {multiplicity}, planted ARI 1 {planted}, eigengap {gaps}"
        ),
    );
}

fn report_files(root: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.join("reports")];
    while let Some(dir) = stack.pop() {
        for e in std::fs::read_dir(&dir).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(p.strip_prefix(root).unwrap().display().to_string(), std::fs::read(&p).unwrap());
            }
        }
    }
    out
}

#[test]
fn c09_end_to_end_determinism() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    std::fs::write(&cfg, r#"{"n_subjects": 60, "configs": ["A2", "B2", "D1"], "n_samplings": 2, "n_inits": 1, "hyperparams": {"epochs": 6, "batch_size": 10}}"#).unwrap();
    let mut trees = Vec::new();
    for (k, threads) in ["1", "2"].into_iter().enumerate() {
        let out = dir.path().join(format!("run{k}"));
        let status = Command::new(env!("CARGO_BIN_EXE_shortcut"))
            .args(["experiment", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap(), "--threads", threads])
            .env("RUST_LOG", "error")
            .status()
            .unwrap();
        assert!(status.success());
        trees.push(report_files(&out));
    }
    let csvs = trees[0].keys().filter(|k| k.ends_with(".csv")).count();
    let pass = trees[0] == trees[1] && csvs >= 6;
    verdict(
        "09",
        "end-to-end determinism",
        pass,
        &format!("{} report files ({csvs} CSV) compared byte for byte across 1 and 2 threads", trees[0].len()),
    );
}

/// Morphology signal in the ventricles only, plus a class-independent
/// brain-size nuisance.
fn nuisance_phantom() -> PhantomSpec {
    PhantomSpec {
        signal_mode: SignalMode::MorphologyOnly,
        brain_radius_frac: [0.66, 0.66],
        ventricle_radius_frac: [0.15, 0.42],
        brain_scale_levels: vec![0.8, 1.0],
        ..Default::default()
    }
}

#[test]
fn c10_spray_qualitative() {
    let mut pass = true;
    let mut detail = Vec::new();
    for s in 1..=3 {
        let mut cfg = grid(nuisance_phantom(), &[ConfigId::D1, ConfigId::D2], 200, 20, 1, 3, s);
        cfg.spray.n_clusters = Some(2);
        let a = run_grid(&cfg);
        let ari = |c: ConfigId| {
            a.config(c).and_then(|x| x.best.as_ref()).and_then(|b| b.spray.as_ref()).and_then(|sp| sp.ari_truth).unwrap_or(f64::NAN)
        };
        let (d1, d2) = (ari(ConfigId::D1), ari(ConfigId::D2));
        pass &= d1 >= 0.5 && d2 < 0.2;
        detail.push(format!("s{s} D1 {d1:.3} D2 {d2:.3}"));
    }
    verdict("10", "SpRAy qualitative check", pass, &detail.join(", "));
}

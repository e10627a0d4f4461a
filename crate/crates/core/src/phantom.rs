//! Labelled synthetic head phantoms.
//!
//! A phantom is a set of concentric ellipsoids: a central ventricle, a deep
//! gray-matter core, a white-matter annulus (intensity 1.0, the reference
//! peak), and an extra-cerebral shell that fills the space up to a fixed head
//! surface. The head surface does not depend on class, so only the brain
//! mask carries brain-size information; skull stripping exposes it.
//!
//! Class signal can be planted in the gray/white contrast (texture), in the
//! brain and ventricle radii (morphology), or both. An optional nuisance
//! factor rescales the brain independently of class.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::record::Class;
use crate::seed::{self, stream};
use crate::volume::{Dims, Volume};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SignalMode {
    TextureOnly,
    MorphologyOnly,
    Both,
}

/// Phantom parameters. Per-class arrays are indexed `[NC, AD]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PhantomSpec {
    pub dims: Dims,
    pub spacing_mm: f64,
    /// Brain semi-axes as a fraction of the grid half-extent.
    pub brain_radius_frac: [f64; 2],
    /// Minimum thickness of the extra-cerebral shell, in voxels.
    pub shell_thickness_vox: f64,
    /// Ventricle radius as a fraction of the brain radius.
    pub ventricle_radius_frac: [f64; 2],
    /// Deep gray-matter core radius as a fraction of the brain radius.
    pub gray_radius_frac: f64,
    /// Gray matter intensity is `1 - texture_contrast`.
    pub texture_contrast: [f64; 2],
    pub shell_intensity: f64,
    pub ventricle_intensity: f64,
    pub noise_sigma: f64,
    /// Relative standard deviation of per-subject radii.
    pub anatomy_jitter: f64,
    /// Class-independent brain scale factors; each subject draws one.
    pub brain_scale_levels: Vec<f64>,
    pub signal_mode: SignalMode,
}

impl Default for PhantomSpec {
    fn default() -> Self {
        Self {
            dims: Dims::cube(16),
            spacing_mm: 1.0,
            brain_radius_frac: [0.70, 0.62],
            shell_thickness_vox: 1.5,
            ventricle_radius_frac: [0.18, 0.30],
            gray_radius_frac: 0.5,
            texture_contrast: [0.35, 0.2],
            shell_intensity: 0.8,
            ventricle_intensity: 0.05,
            noise_sigma: 0.05,
            anatomy_jitter: 0.03,
            brain_scale_levels: vec![1.0],
            signal_mode: SignalMode::Both,
        }
    }
}

/// Class-effective anatomy after applying the signal mode.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Anatomy {
    brain: f64,
    ventricle: f64,
    contrast: f64,
}

impl PhantomSpec {
    pub fn validate(&self) -> Result<()> {
        if self.dims.is_empty() || !(self.spacing_mm > 0.0) {
            return Err(Error::InvalidSpec("dims and spacing must be positive".into()));
        }
        let in_unit = |v: f64| v > 0.0 && v < 1.0;
        for c in 0..2 {
            if !in_unit(self.brain_radius_frac[c]) || !in_unit(self.ventricle_radius_frac[c]) {
                return Err(Error::InvalidSpec("radius fractions must lie in (0, 1)".into()));
            }
            if self.ventricle_radius_frac[c] >= self.gray_radius_frac {
                return Err(Error::InvalidSpec(format!(
                    "ventricle fraction {} must be smaller than the gray core {} inside the brain",
                    self.ventricle_radius_frac[c], self.gray_radius_frac
                )));
            }
            if !(0.0..1.0).contains(&self.texture_contrast[c]) {
                return Err(Error::InvalidSpec("texture contrast must lie in [0, 1)".into()));
            }
        }
        if !in_unit(self.gray_radius_frac) {
            return Err(Error::InvalidSpec("gray core fraction must lie in (0, 1)".into()));
        }
        if !(self.noise_sigma >= 0.0) || !(self.anatomy_jitter >= 0.0) || !(self.shell_thickness_vox >= 0.0) {
            return Err(Error::InvalidSpec("noise, jitter and shell thickness must be non-negative".into()));
        }
        if self.brain_scale_levels.is_empty() || self.brain_scale_levels.iter().any(|&s| !(s > 0.0)) {
            return Err(Error::InvalidSpec("brain scale levels must be positive".into()));
        }
        let half = self.dims.as_array().map(|n| n as f64 / 2.0);
        let head = self.head_semi_axes();
        if head.iter().zip(&half).any(|(h, n)| h > n) {
            return Err(Error::InvalidSpec("head does not fit into the grid".into()));
        }
        Ok(())
    }

    fn anatomy(&self, class: Class) -> Anatomy {
        let c = class.index();
        let (morph, tex) = match self.signal_mode {
            SignalMode::TextureOnly => (0, c),
            SignalMode::MorphologyOnly => (c, 0),
            SignalMode::Both => (c, c),
        };
        Anatomy { brain: self.brain_radius_frac[morph], ventricle: self.ventricle_radius_frac[morph], contrast: self.texture_contrast[tex] }
    }

    fn max_brain_semi_axes(&self) -> [f64; 3] {
        let frac = self.brain_radius_frac[0].max(self.brain_radius_frac[1]);
        let scale = self.brain_scale_levels.iter().copied().fold(0.0, f64::max);
        // jitter is clipped at 2 sd
        let jitter = 1.0 + 2.0 * self.anatomy_jitter;
        self.dims.as_array().map(|n| n as f64 / 2.0 * frac * scale * jitter)
    }

    /// Head surface semi-axes: largest possible brain plus the shell.
    pub fn head_semi_axes(&self) -> [f64; 3] {
        self.max_brain_semi_axes().map(|a| a + self.shell_thickness_vox)
    }

    pub fn gray_intensity(&self, class: Class) -> f64 {
        1.0 - self.anatomy(class).contrast
    }
}

/// One image of one subject with its exact brain mask.
#[derive(Debug, Clone, PartialEq)]
pub struct SubjectRecord {
    pub subject_id: String,
    pub image_id: String,
    pub class: Class,
    pub image: Volume,
    pub brain_mask: Volume,
    /// Seed that generated the subject's anatomy.
    pub seed: u64,
}

fn ellipsoid_radius(p: [f64; 3], c: [f64; 3], a: [f64; 3]) -> f64 {
    let mut s = 0.0;
    for k in 0..3 {
        let d = (p[k] - c[k]) / a[k];
        s += d * d;
    }
    libm::sqrt(s)
}

/// Generates scan `scan_index` of a subject. Anatomy depends only on
/// `(subject_seed, class)`; noise additionally depends on the scan index.
pub fn generate_scan(spec: &PhantomSpec, subject_seed: u64, class: Class, scan_index: u64) -> Result<(Volume, Volume)> {
    spec.validate()?;
    let anat = spec.anatomy(class);
    let mut rng = seed::rng(subject_seed);
    let unit = Normal::new(0.0, 1.0).expect("unit normal");
    let clip = |z: f64| z.clamp(-2.0, 2.0);
    let brain_scale = spec.brain_scale_levels[rng.random_range(0..spec.brain_scale_levels.len())];
    let brain_mult = 1.0 + spec.anatomy_jitter * clip(unit.sample(&mut rng));
    let vent_mult = 1.0 + spec.anatomy_jitter * clip(unit.sample(&mut rng));

    let d = spec.dims;
    let centre = d.as_array().map(|n| n as f64 / 2.0);
    let brain_axes = d.as_array().map(|n| n as f64 / 2.0 * anat.brain * brain_scale * brain_mult);
    let head_axes = spec.head_semi_axes();
    let ventricle = (anat.ventricle * vent_mult).min(spec.gray_radius_frac * 0.999);
    let gray = 1.0 - anat.contrast;

    let mut image = vec![0.0f32; d.len()];
    let mut mask = vec![0.0f32; d.len()];
    for z in 0..d.nz {
        for y in 0..d.ny {
            for x in 0..d.nx {
                let p = [x as f64 + 0.5, y as f64 + 0.5, z as f64 + 0.5];
                let i = d.index(x, y, z);
                let rb = ellipsoid_radius(p, centre, brain_axes);
                image[i] = if rb <= 1.0 {
                    mask[i] = 1.0;
                    if rb <= ventricle {
                        spec.ventricle_intensity
                    } else if rb <= spec.gray_radius_frac {
                        gray
                    } else {
                        1.0
                    }
                } else if ellipsoid_radius(p, centre, head_axes) <= 1.0 {
                    spec.shell_intensity
                } else {
                    0.0
                } as f32;
            }
        }
    }
    if spec.noise_sigma > 0.0 {
        let mut noise_rng = seed::rng(seed::derive(subject_seed, stream::SUBJECT, scan_index));
        let noise = Normal::new(0.0, spec.noise_sigma).map_err(|e| Error::InvalidSpec(format!("{e}")))?;
        for v in &mut image {
            *v = (*v as f64 + noise.sample(&mut noise_rng)).max(0.0) as f32;
        }
    }
    Ok((Volume::new(d, spec.spacing_mm, image)?, Volume::new(d, spec.spacing_mm, mask)?))
}

/// Single-scan phantom for `(subject_seed, class)`.
pub fn generate_phantom(spec: &PhantomSpec, subject_seed: u64, class: Class) -> Result<SubjectRecord> {
    let (image, brain_mask) = generate_scan(spec, subject_seed, class, 0)?;
    let id = format!("seed-{subject_seed:016x}");
    Ok(SubjectRecord { image_id: format!("{id}_scan-0"), subject_id: id, class, image, brain_mask, seed: subject_seed })
}

/// Balanced cohort: subjects alternate NC/AD, each with
/// `images_per_subject` scans.
pub fn generate_cohort(spec: &PhantomSpec, n_subjects: usize, images_per_subject: usize, cohort_seed: u64) -> Result<Vec<SubjectRecord>> {
    spec.validate()?;
    if images_per_subject == 0 {
        return Err(Error::InvalidSpec("at least one image per subject".into()));
    }
    let mut out = Vec::with_capacity(n_subjects * images_per_subject);
    for i in 0..n_subjects {
        let class = if i % 2 == 0 { Class::Nc } else { Class::Ad };
        let subject_seed = seed::derive(cohort_seed, stream::COHORT, i as u64);
        let subject_id = format!("sub-{i:04}");
        for scan in 0..images_per_subject {
            let (image, brain_mask) = generate_scan(spec, subject_seed, class, scan as u64)?;
            out.push(SubjectRecord {
                image_id: format!("{subject_id}_scan-{scan}"),
                subject_id: subject_id.clone(),
                class,
                image,
                brain_mask,
                seed: subject_seed,
            });
        }
    }
    Ok(out)
}

/// Train / validation / test fractions.
pub const SPLIT_RATIOS: [f64; 3] = [0.70, 0.15, 0.15];

/// Subject-disjoint partition of a record list (indices into it).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetSplit {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
    pub sampling_seed: u64,
}

impl DatasetSplit {
    pub fn sets(&self) -> [&[usize]; 3] {
        [&self.train, &self.val, &self.test]
    }
}

/// Integer sizes summing to `n` by the largest-remainder method. Ties go to
/// the earlier entry.
pub fn largest_remainder(n: usize, ratios: &[f64]) -> Vec<usize> {
    let quotas: Vec<f64> = ratios.iter().map(|r| r * n as f64).collect();
    let mut sizes: Vec<usize> = quotas.iter().map(|q| libm::floor(*q + 1e-9) as usize).collect();
    let assigned: usize = sizes.iter().sum();
    let mut order: Vec<usize> = (0..ratios.len()).collect();
    let frac = |i: usize| quotas[i] - sizes[i] as f64;
    order.sort_by(|&a, &b| frac(b).partial_cmp(&frac(a)).unwrap_or(core::cmp::Ordering::Equal).then(a.cmp(&b)));
    for &i in order.iter().cycle().take(n.saturating_sub(assigned)) {
        sizes[i] += 1;
    }
    sizes
}

/// Stratified, subject-level 70:15:15 split.
///
/// Set sizes follow largest-remainder rounding of the subject count; each
/// class is spread over the sets in proportion, so every set keeps the
/// global class balance to within one subject.
pub fn split_dataset(records: &[SubjectRecord], sampling_seed: u64) -> Result<DatasetSplit> {
    // subjects in first-appearance order, with their class and images
    let mut subjects: Vec<(&str, Class, Vec<usize>)> = Vec::new();
    for (i, r) in records.iter().enumerate() {
        match subjects.iter_mut().find(|s| s.0 == r.subject_id) {
            Some(s) => {
                if s.1 != r.class {
                    return Err(Error::InvalidSpec(format!("subject {} has mixed labels", r.subject_id)));
                }
                s.2.push(i);
            }
            None => subjects.push((&r.subject_id, r.class, vec![i])),
        }
    }
    let n = subjects.len();
    if n < 10 {
        return Err(Error::InvalidSpec(format!("need at least 10 subjects, got {n}")));
    }
    let by_class: [Vec<usize>; 2] = Class::ALL.map(|c| (0..n).filter(|&i| subjects[i].1 == c).collect::<Vec<_>>());
    if by_class.iter().any(Vec::is_empty) {
        return Err(Error::InvalidSpec("both classes must be present".into()));
    }

    let totals = largest_remainder(n, &SPLIT_RATIOS);
    let mut cells = [[0usize; 3]; 2];
    let mut fracs = Vec::new();
    for c in 0..2 {
        for s in 0..3 {
            let q = by_class[c].len() as f64 * SPLIT_RATIOS[s];
            cells[c][s] = libm::floor(q + 1e-9) as usize;
            fracs.push((q - cells[c][s] as f64, s, c));
        }
    }
    let mut row_def: Vec<usize> = (0..2).map(|c| by_class[c].len() - cells[c].iter().sum::<usize>()).collect();
    let mut col_def: Vec<usize> = (0..3).map(|s| totals[s] - cells[0][s] - cells[1][s]).collect();
    fracs.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap_or(core::cmp::Ordering::Equal).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    for &(_, s, c) in &fracs {
        if row_def[c] > 0 && col_def[s] > 0 {
            cells[c][s] += 1;
            row_def[c] -= 1;
            col_def[s] -= 1;
        }
    }
    for c in 0..2 {
        while row_def[c] > 0 {
            let s = (0..3).find(|&s| col_def[s] > 0).expect("deficits balance");
            cells[c][s] += 1;
            row_def[c] -= 1;
            col_def[s] -= 1;
        }
    }
    if cells.iter().flatten().any(|&k| k == 0) {
        return Err(Error::InvalidSpec(format!("a class would be absent from a split set with {n} subjects")));
    }

    let mut rng = seed::rng(sampling_seed);
    let mut sets: [Vec<usize>; 3] = Default::default();
    for c in 0..2 {
        let mut members = by_class[c].clone();
        members.shuffle(&mut rng);
        let mut it = members.into_iter();
        for s in 0..3 {
            for subj in it.by_ref().take(cells[c][s]) {
                sets[s].extend_from_slice(&subjects[subj].2);
            }
        }
    }
    for s in &mut sets {
        s.sort_unstable();
    }
    let [train, val, test] = sets;
    Ok(DatasetSplit { train, val, test, sampling_seed })
}

/// One training session: a data sampling paired with a weight initialization.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SessionPlan {
    pub sampling: usize,
    pub init: usize,
    pub split: DatasetSplit,
    pub init_seed: u64,
}

/// `n_samplings` distinct splits crossed with `n_inits` weight
/// initializations; every sampling is trained with every initialization.
pub fn make_samplings(records: &[SubjectRecord], n_samplings: usize, n_inits: usize, base_seed: u64) -> Result<Vec<SessionPlan>> {
    if n_samplings == 0 || n_inits == 0 {
        return Err(Error::InvalidSpec("need at least one sampling and one initialization".into()));
    }
    let mut plans = Vec::with_capacity(n_samplings * n_inits);
    for s in 0..n_samplings {
        let split = split_dataset(records, seed::derive(base_seed, stream::SPLIT, s as u64))?;
        for i in 0..n_inits {
            plans.push(SessionPlan {
                sampling: s,
                init: i,
                split: split.clone(),
                init_seed: seed::derive(base_seed, stream::INIT, i as u64),
            });
        }
    }
    Ok(plans)
}

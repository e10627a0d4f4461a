//! Input configurations: white-matter-peak normalization, skull stripping
//! and threshold binarization.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::volume::Volume;

/// Default histogram resolution for the white-matter peak.
pub const WM_PEAK_BINS: usize = 196;
/// Voxels at or below this fraction of the maximum count as background.
pub const BACKGROUND_FRAC: f64 = 0.05;
/// Binarization thresholds of configurations B, C and D, as fractions of the
/// white-matter peak.
pub const BINARIZE_FRACS: [f64; 3] = [0.1375, 0.275, 0.4125];

/// One of the eight input configurations. The letter selects the
/// binarization threshold (A: none), the digit selects aligned (1) or
/// skull-stripped (2) input.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "&'static str")]
pub enum ConfigId {
    A1,
    B1,
    C1,
    D1,
    A2,
    B2,
    C2,
    D2,
}

impl ConfigId {
    pub const ALL: [ConfigId; 8] =
        [ConfigId::A1, ConfigId::B1, ConfigId::C1, ConfigId::D1, ConfigId::A2, ConfigId::B2, ConfigId::C2, ConfigId::D2];

    pub fn as_str(self) -> &'static str {
        match self {
            ConfigId::A1 => "A1",
            ConfigId::B1 => "B1",
            ConfigId::C1 => "C1",
            ConfigId::D1 => "D1",
            ConfigId::A2 => "A2",
            ConfigId::B2 => "B2",
            ConfigId::C2 => "C2",
            ConfigId::D2 => "D2",
        }
    }

    pub fn skull_strip(self) -> bool {
        matches!(self, ConfigId::A2 | ConfigId::B2 | ConfigId::C2 | ConfigId::D2)
    }

    pub fn binarize_frac(self) -> Option<f64> {
        match self {
            ConfigId::A1 | ConfigId::A2 => None,
            ConfigId::B1 | ConfigId::B2 => Some(BINARIZE_FRACS[0]),
            ConfigId::C1 | ConfigId::C2 => Some(BINARIZE_FRACS[1]),
            ConfigId::D1 | ConfigId::D2 => Some(BINARIZE_FRACS[2]),
        }
    }

    pub fn config(self) -> PrepConfig {
        PrepConfig { id: self, skull_strip: self.skull_strip(), binarize_frac: self.binarize_frac() }
    }
}

impl fmt::Display for ConfigId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ConfigId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ConfigId::ALL.into_iter().find(|c| c.as_str() == s).ok_or_else(|| Error::InvalidSpec(format!("unknown input configuration {s:?}")))
    }
}

impl TryFrom<String> for ConfigId {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<ConfigId> for &'static str {
    fn from(c: ConfigId) -> Self {
        c.as_str()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PrepConfig {
    pub id: ConfigId,
    pub skull_strip: bool,
    pub binarize_frac: Option<f64>,
}

impl PrepConfig {
    /// Checks that the flags agree with the id.
    pub fn validate(&self) -> Result<()> {
        if *self != self.id.config() {
            return Err(Error::InvalidSpec(format!("configuration {} has inconsistent flags", self.id)));
        }
        Ok(())
    }
}

impl From<ConfigId> for PrepConfig {
    fn from(id: ConfigId) -> Self {
        id.config()
    }
}

fn histogram_peak(values: impl Iterator<Item = f32> + Clone, bins: usize) -> Result<f64> {
    if bins == 0 {
        return Err(Error::InvalidSpec("histogram needs at least one bin".into()));
    }
    let max = values.clone().fold(f32::NEG_INFINITY, f32::max) as f64;
    if !(max > 0.0) {
        return Err(Error::Empty("no foreground voxels"));
    }
    let floor = BACKGROUND_FRAC * max;
    let width = max / bins as f64;
    let mut counts = vec![0usize; bins];
    let mut any = false;
    for v in values {
        let v = v as f64;
        if v > floor {
            let b = ((v / width) as usize).min(bins - 1);
            counts[b] += 1;
            any = true;
        }
    }
    if !any {
        return Err(Error::Empty("no foreground voxels"));
    }
    // last maximum wins, so ties go to the higher intensity
    let (best, _) = counts.iter().enumerate().fold((0, 0), |acc, (i, &c)| if c >= acc.1 { (i, c) } else { acc });
    Ok((best as f64 + 0.5) * width)
}

/// Centre of the most populated bin of a `bins`-bin histogram over
/// `[0, max]`, restricted to voxels above 5% of the maximum.
pub fn wm_peak(image: &Volume, bins: usize) -> Result<f64> {
    histogram_peak(image.data().iter().copied(), bins)
}

/// [`wm_peak`] over brain tissue only: voxels inside a binary mask.
pub fn wm_peak_in_mask(image: &Volume, mask: &Volume, bins: usize) -> Result<f64> {
    image.ensure_same_dims(mask)?;
    let inside = image.data().iter().zip(mask.data()).filter(|(_, &m)| m > 0.0).map(|(&v, _)| v);
    histogram_peak(inside, bins)
}

/// Divides every voxel by `peak`.
pub fn scale_by_peak(image: &Volume, peak: f64) -> Result<Volume> {
    if !(peak > 0.0) || !peak.is_finite() {
        return Err(Error::Degenerate(format!("white-matter peak {peak} must be positive")));
    }
    Ok(image.map(|v| (v as f64 / peak) as f32))
}

pub fn normalize_to_wm_peak(image: &Volume) -> Result<Volume> {
    scale_by_peak(image, wm_peak(image, WM_PEAK_BINS)?)
}

/// Normalization anchored on the brain-tissue histogram.
pub fn normalize_in_mask(image: &Volume, mask: &Volume) -> Result<Volume> {
    scale_by_peak(image, wm_peak_in_mask(image, mask, WM_PEAK_BINS)?)
}

/// Applies skull stripping and then binarization to a normalized image.
pub fn apply_config(image: &Volume, mask: &Volume, cfg: PrepConfig) -> Result<Volume> {
    image.ensure_same_dims(mask)?;
    if !mask.is_binary() {
        return Err(Error::InvalidSpec("brain mask must be binary".into()));
    }
    let mut out = image.clone();
    if cfg.skull_strip {
        for (v, &m) in out.data_mut().iter_mut().zip(mask.data()) {
            if m == 0.0 {
                *v = 0.0;
            }
        }
    }
    if let Some(f) = cfg.binarize_frac {
        for v in out.data_mut() {
            *v = if (*v as f64) >= f { 1.0 } else { 0.0 };
        }
    }
    Ok(out)
}

/// Full pipeline for one raw phantom: tissue-histogram normalization, then
/// the configuration.
pub fn preprocess(image: &Volume, mask: &Volume, cfg: PrepConfig) -> Result<Volume> {
    apply_config(&normalize_in_mask(image, mask)?, mask, cfg)
}

/// For each threshold, the fraction of mask voxels whose value is at least
/// the threshold.
pub fn residual_fraction_curve(image: &Volume, mask: &Volume, thresholds: &[f64]) -> Result<Vec<f64>> {
    image.ensure_same_dims(mask)?;
    if thresholds.windows(2).any(|w| w[0] > w[1]) {
        return Err(Error::InvalidSpec("thresholds must be ascending".into()));
    }
    let inside: Vec<f64> = image.data().iter().zip(mask.data()).filter(|(_, &m)| m > 0.0).map(|(&v, _)| v as f64).collect();
    if inside.is_empty() {
        return Err(Error::Empty("brain mask"));
    }
    let n = inside.len() as f64;
    Ok(thresholds.iter().map(|&t| inside.iter().filter(|&&v| v >= t).count() as f64 / n).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::volume::Dims;

    fn vol(data: Vec<f32>) -> Volume {
        let n = data.len();
        Volume::new(Dims::new(n, 1, 1), 1.0, data).unwrap()
    }

    #[test]
    fn peak_of_constant_foreground() {
        let v = vol(vec![0.0, 1.0, 1.0, 1.0]);
        let p = wm_peak(&v, 196).unwrap();
        let w = 1.0 / 196.0;
        assert!(p > 1.0 - w && p <= 1.0, "{p}");
    }

    #[test]
    fn bimodal_peak_picks_majority() {
        let mut d = vec![0.6f32; 1000];
        d.extend(vec![1.0f32; 3000]);
        let p = wm_peak(&vol(d), 196).unwrap();
        assert!((p - 1.0).abs() < 1.0 / 196.0);
    }

    #[test]
    fn tie_goes_to_higher_bin() {
        // 4 bins over [0, 1]: 0.3 → bin 1, 0.9 → bin 3
        let p = wm_peak(&vol(vec![0.3, 0.3, 0.9, 0.9, 1.0]), 4).unwrap();
        assert_eq!(p, 0.875);
        let p = wm_peak(&vol(vec![0.3, 0.3, 0.3, 0.9, 1.0]), 4).unwrap();
        assert_eq!(p, 0.375);
    }

    #[test]
    fn empty_foreground_is_error() {
        assert!(wm_peak(&vol(vec![0.0; 5]), 196).is_err());
    }

    #[test]
    fn scaling_and_idempotence() {
        let v = scale_by_peak(&vol(vec![1.0, 2.0]), 2.0).unwrap();
        assert_eq!(v.data(), &[0.5, 1.0]);
        assert!(scale_by_peak(&v, 0.0).is_err());
        let raw = vol((0..300).map(|i| if i < 200 { 2.0 } else { (i % 7) as f32 * 0.2 }).collect());
        let once = normalize_to_wm_peak(&raw).unwrap();
        let twice = normalize_to_wm_peak(&once).unwrap();
        let w = once.max() as f64 / 196.0;
        for (a, b) in once.data().iter().zip(twice.data()) {
            assert!(((a - b) as f64).abs() <= w);
        }
    }

    #[test]
    fn config_table() {
        assert_eq!(ConfigId::A1.config(), PrepConfig { id: ConfigId::A1, skull_strip: false, binarize_frac: None });
        assert_eq!(ConfigId::C2.binarize_frac(), Some(0.275));
        assert!(ConfigId::D2.skull_strip() && !ConfigId::D1.skull_strip());
        assert_eq!("B1".parse::<ConfigId>().unwrap(), ConfigId::B1);
        assert!("E1".parse::<ConfigId>().is_err());
        let bad = PrepConfig { id: ConfigId::A1, skull_strip: true, binarize_frac: None };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn c2_thresholds_inside_mask_only() {
        let img = vol(vec![0.3, 0.2, 0.9]);
        let mask = vol(vec![1.0, 1.0, 0.0]);
        let out = apply_config(&img, &mask, ConfigId::C2.config()).unwrap();
        assert_eq!(out.data(), &[1.0, 0.0, 0.0]);
        let a1 = apply_config(&img, &mask, ConfigId::A1.config()).unwrap();
        assert_eq!(a1, img);
    }

    #[test]
    fn residual_curve_edges() {
        let img = vol(vec![0.1, 0.5, 0.9, 0.0]);
        let mask = vol(vec![1.0, 1.0, 1.0, 0.0]);
        let c = residual_fraction_curve(&img, &mask, &[0.0, 0.3, 0.95]).unwrap();
        assert_eq!(c, vec![1.0, 2.0 / 3.0, 0.0]);
        assert!(residual_fraction_curve(&img, &vol(vec![0.0; 4]), &[0.1]).is_err());
    }
}

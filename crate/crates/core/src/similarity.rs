//! Heatmap comparison measures: RMSE, Pearson correlation, mean SSIM,
//! axis-marginal earth mover's distance and top-relevance IoU.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::relevance::relevance_mask;
use crate::volume::Volume;

pub const SSIM_WINDOW: usize = 7;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimilarityReport {
    pub rmse: f64,
    pub pearson: f64,
    pub mssim: f64,
    pub emd: f64,
    pub iou_top40: f64,
    pub iou_top10: f64,
}

/// Affine rescale onto `[0, 1]`.
pub fn minmax_normalize(map: &Volume) -> Result<Volume> {
    let (lo, hi) = (map.min() as f64, map.max() as f64);
    if !(hi > lo) {
        return Err(Error::Degenerate(format!("constant map (value {lo})")));
    }
    let span = hi - lo;
    Ok(map.map(|v| ((v as f64 - lo) / span) as f32))
}

pub fn rmse(a: &Volume, b: &Volume) -> Result<f64> {
    a.ensure_same_dims(b)?;
    let ss: f64 = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| {
            let d = x as f64 - y as f64;
            d * d
        })
        .sum();
    Ok(libm::sqrt(ss / a.len() as f64))
}

pub fn pearson(a: &Volume, b: &Volume) -> Result<f64> {
    a.ensure_same_dims(b)?;
    let n = a.len() as f64;
    let ma = a.sum() / n;
    let mb = b.sum() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (&x, &y) in a.data().iter().zip(b.data()) {
        let (dx, dy) = (x as f64 - ma, y as f64 - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    if !(saa > 0.0 && sbb > 0.0) {
        return Err(Error::Degenerate("zero variance: correlation undefined".into()));
    }
    Ok((sab / libm::sqrt(saa * sbb)).clamp(-1.0, 1.0))
}

/// Summed-volume table with a zero guard plane on each low face.
struct Integral {
    nx: usize,
    ny: usize,
    t: Vec<f64>,
}

impl Integral {
    fn new(v: &Volume, f: impl Fn(usize) -> f64) -> Self {
        let d = v.dims();
        let (nx, ny, nz) = (d.nx + 1, d.ny + 1, d.nz + 1);
        let mut t = vec![0.0; nx * ny * nz];
        for z in 1..nz {
            for y in 1..ny {
                for x in 1..nx {
                    let i = (z * ny + y) * nx + x;
                    let val = f(d.index(x - 1, y - 1, z - 1));
                    t[i] = val + t[i - 1] + t[i - nx] + t[i - nx * ny] - t[i - 1 - nx] - t[i - 1 - nx * ny] - t[i - nx - nx * ny]
                        + t[i - 1 - nx - nx * ny];
                }
            }
        }
        Self { nx, ny, t }
    }

    /// Sum over the cube `[x, x+w) × [y, y+w) × [z, z+w)`.
    fn cube(&self, x: usize, y: usize, z: usize, w: usize) -> f64 {
        let at = |x: usize, y: usize, z: usize| self.t[(z * self.ny + y) * self.nx + x];
        let (x1, y1, z1) = (x + w, y + w, z + w);
        at(x1, y1, z1) - at(x, y1, z1) - at(x1, y, z1) - at(x1, y1, z) + at(x, y, z1) + at(x, y1, z) + at(x1, y, z) - at(x, y, z)
    }
}

/// Mean SSIM over every `window³` cube fully inside the volume, with
/// uniform weights and population moments.
pub fn mssim_with(a: &Volume, b: &Volume, window: usize, k1: f64, k2: f64, range: f64) -> Result<f64> {
    a.ensure_same_dims(b)?;
    let d = a.dims();
    if window == 0 || d.nx < window || d.ny < window || d.nz < window {
        return Err(Error::InvalidSpec(format!("volume {d} smaller than the {window}³ SSIM window")));
    }
    let (ad, bd) = (a.data(), b.data());
    let sa = Integral::new(a, |i| ad[i] as f64);
    let sb = Integral::new(a, |i| bd[i] as f64);
    let saa = Integral::new(a, |i| (ad[i] as f64) * (ad[i] as f64));
    let sbb = Integral::new(a, |i| (bd[i] as f64) * (bd[i] as f64));
    let sab = Integral::new(a, |i| (ad[i] as f64) * (bd[i] as f64));
    let c1 = (k1 * range) * (k1 * range);
    let c2 = (k2 * range) * (k2 * range);
    let n = (window * window * window) as f64;
    let mut total = 0.0;
    let mut count = 0usize;
    for z in 0..=d.nz - window {
        for y in 0..=d.ny - window {
            for x in 0..=d.nx - window {
                let ma = sa.cube(x, y, z, window) / n;
                let mb = sb.cube(x, y, z, window) / n;
                let va = saa.cube(x, y, z, window) / n - ma * ma;
                let vb = sbb.cube(x, y, z, window) / n - mb * mb;
                let cov = sab.cube(x, y, z, window) / n - ma * mb;
                total += ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
                count += 1;
            }
        }
    }
    Ok(total / count as f64)
}

pub fn mssim(a: &Volume, b: &Volume) -> Result<f64> {
    mssim_with(a, b, SSIM_WINDOW, SSIM_K1, SSIM_K2, 1.0)
}

fn marginals(v: &Volume) -> Result<[Vec<f64>; 3]> {
    let d = v.dims();
    let mut m = [vec![0.0; d.nx], vec![0.0; d.ny], vec![0.0; d.nz]];
    let mut total = 0.0;
    for z in 0..d.nz {
        for y in 0..d.ny {
            for x in 0..d.nx {
                let w = v.get(x, y, z) as f64;
                if w < 0.0 {
                    return Err(Error::InvalidSpec("transport mass must be non-negative".into()));
                }
                m[0][x] += w;
                m[1][y] += w;
                m[2][z] += w;
                total += w;
            }
        }
    }
    if !(total > 0.0) {
        return Err(Error::Degenerate("map has zero mass".into()));
    }
    for axis in &mut m {
        for w in axis.iter_mut() {
            *w /= total;
        }
    }
    Ok(m)
}

/// Exact 1D Wasserstein-1 distance between two distributions on the same
/// unit-spaced support.
pub fn wasserstein_1d(p: &[f64], q: &[f64]) -> f64 {
    let (mut cp, mut cq, mut acc) = (0.0, 0.0, 0.0);
    for (&a, &b) in p.iter().zip(q) {
        cp += a;
        cq += b;
        acc += (cp - cq).abs();
    }
    acc
}

/// Mean over the three axes of the 1D transport distance between the
/// mass-normalized axis marginals, in voxels.
pub fn emd(a: &Volume, b: &Volume) -> Result<f64> {
    a.ensure_same_dims(b)?;
    let (ma, mb) = (marginals(a)?, marginals(b)?);
    Ok((0..3).map(|k| wasserstein_1d(&ma[k], &mb[k])).sum::<f64>() / 3.0)
}

pub fn iou(a: &Volume, b: &Volume) -> Result<f64> {
    a.ensure_same_dims(b)?;
    if !a.is_binary() || !b.is_binary() {
        return Err(Error::InvalidSpec("IoU needs binary masks".into()));
    }
    let (mut inter, mut union) = (0usize, 0usize);
    for (&x, &y) in a.data().iter().zip(b.data()) {
        let (x, y) = (x > 0.0, y > 0.0);
        inter += (x && y) as usize;
        union += (x || y) as usize;
    }
    if union == 0 {
        return Err(Error::Empty("mask union"));
    }
    Ok(inter as f64 / union as f64)
}

/// All measures for one pair of heatmaps, after min-max normalization.
pub fn compare_heatmaps(a: &Volume, b: &Volume) -> Result<SimilarityReport> {
    a.ensure_same_dims(b)?;
    let (a, b) = (minmax_normalize(a)?, minmax_normalize(b)?);
    Ok(SimilarityReport {
        rmse: rmse(&a, &b)?,
        pearson: pearson(&a, &b)?,
        mssim: mssim(&a, &b)?,
        emd: emd(&a, &b)?,
        iou_top40: iou(&relevance_mask(&a, 0.4)?, &relevance_mask(&b, 0.4)?)?,
        iou_top10: iou(&relevance_mask(&a, 0.1)?, &relevance_mask(&b, 0.1)?)?,
    })
}

//! Spectral relevance analysis: downsampled heatmaps are linked in a
//! k-nearest-neighbour graph, the normalized Laplacian spectrum picks a
//! cluster count, and the heatmaps are clustered and embedded in 2D.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::cmp::Ordering;

use nalgebra::{DMatrix, SymmetricEigen};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::relevance::mean_heatmap;
use crate::seed;
use crate::volume::{Dims, Volume};

/// Block-mean pooling to `target_spacing` mm. Blocks cut by the grid edge
/// average the voxels they contain.
pub fn downsample(map: &Volume, target_spacing: f64) -> Result<Volume> {
    let ratio = target_spacing / map.spacing_mm();
    let f = libm::round(ratio);
    if !(f >= 1.0) || (ratio - f).abs() > 1e-9 {
        return Err(Error::InvalidSpec(format!("target spacing {target_spacing} is not an integer multiple of {}", map.spacing_mm())));
    }
    let f = f as usize;
    if f == 1 {
        return Ok(map.clone());
    }
    let d = map.dims();
    let od = Dims::new(d.nx.div_ceil(f), d.ny.div_ceil(f), d.nz.div_ceil(f));
    let mut sum = vec![0.0f64; od.len()];
    let mut count = vec![0usize; od.len()];
    for z in 0..d.nz {
        for y in 0..d.ny {
            for x in 0..d.nx {
                let o = od.index(x / f, y / f, z / f);
                sum[o] += map.get(x, y, z) as f64;
                count[o] += 1;
            }
        }
    }
    let data = sum.iter().zip(&count).map(|(&s, &c)| (s / c as f64) as f32).collect();
    Volume::new(od, target_spacing, data)
}

/// Dense symmetric affinity matrix, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct AffinityGraph {
    pub n: usize,
    pub weights: Vec<f64>,
    pub k_neighbors: usize,
    /// Gaussian bandwidth.
    pub sigma: f64,
}

impl AffinityGraph {
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.weights[i * self.n + j]
    }

    pub fn degree(&self, i: usize) -> f64 {
        self.weights[i * self.n..(i + 1) * self.n].iter().sum()
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn pairwise_sq(points: &[Vec<f64>]) -> Vec<f64> {
    let n = points.len();
    let mut d = vec![0.0; n * n];
    for i in 0..n {
        for j in i + 1..n {
            let v = sq_dist(&points[i], &points[j]);
            d[i * n + j] = v;
            d[j * n + i] = v;
        }
    }
    d
}

fn median(v: &mut [f64]) -> f64 {
    v.sort_by(|a, b| a.partial_cmp(b).unwrap_or(Ordering::Equal));
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        (v[m - 1] + v[m]) / 2.0
    }
}

/// k-nearest-neighbour graph with Gaussian weights `exp(-d²/(2σ²))`, σ the
/// median neighbour distance, symmetrized by the elementwise maximum.
///
/// Neighbour ties are broken by index. If every neighbour distance is zero
/// the bandwidth falls back to 1.
pub fn affinity(points: &[Vec<f64>], k: usize) -> Result<AffinityGraph> {
    let n = points.len();
    if k == 0 || n < k + 1 {
        return Err(Error::InvalidSpec(format!("kNN graph needs n >= k + 1 (n = {n}, k = {k})")));
    }
    if points.iter().any(|p| p.len() != points[0].len()) {
        return Err(Error::ShapeMismatch("points differ in dimension".into()));
    }
    if points.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("affinity input"));
    }
    let d2 = pairwise_sq(points);
    let neighbours: Vec<Vec<usize>> = (0..n)
        .map(|i| {
            let mut others: Vec<usize> = (0..n).filter(|&j| j != i).collect();
            others.sort_by(|&a, &b| d2[i * n + a].partial_cmp(&d2[i * n + b]).unwrap_or(Ordering::Equal).then(a.cmp(&b)));
            others.truncate(k);
            others
        })
        .collect();
    let mut dists: Vec<f64> =
        neighbours.iter().enumerate().flat_map(|(i, nb)| nb.iter().map(move |&j| (i, j))).map(|(i, j)| libm::sqrt(d2[i * n + j])).collect();
    let mut sigma = median(&mut dists);
    if !(sigma > 0.0) {
        sigma = 1.0;
    }
    let mut w = vec![0.0f64; n * n];
    for (i, nb) in neighbours.iter().enumerate() {
        for &j in nb {
            let v = libm::exp(-d2[i * n + j] / (2.0 * sigma * sigma));
            w[i * n + j] = w[i * n + j].max(v);
            w[j * n + i] = w[j * n + i].max(v);
        }
    }
    Ok(AffinityGraph { n, weights: w, k_neighbors: k, sigma })
}

/// Eigenpairs of the normalized Laplacian, eigenvalues ascending.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrum {
    pub eigenvalues: Vec<f64>,
    /// `eigenvectors[m]` belongs to `eigenvalues[m]`; each has length `n`.
    pub eigenvectors: Vec<Vec<f64>>,
}

/// `L_sym = I - D^{-1/2} W D^{-1/2}` and its full eigendecomposition.
/// Eigenvector signs are fixed so that the entry of largest magnitude is
/// positive.
pub fn laplacian_spectrum(graph: &AffinityGraph) -> Result<Spectrum> {
    let n = graph.n;
    let mut inv_sqrt = vec![0.0; n];
    for (i, s) in inv_sqrt.iter_mut().enumerate() {
        let d = graph.degree(i);
        if !(d > 0.0) {
            return Err(Error::IsolatedVertex(i));
        }
        *s = 1.0 / libm::sqrt(d);
    }
    let l = DMatrix::from_fn(n, n, |i, j| {
        let off = graph.get(i, j) * inv_sqrt[i] * inv_sqrt[j];
        if i == j {
            1.0 - off
        } else {
            -off
        }
    });
    let eig = SymmetricEigen::new(l);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].partial_cmp(&eig.eigenvalues[b]).unwrap_or(Ordering::Equal).then(a.cmp(&b)));
    let eigenvalues = order.iter().map(|&m| eig.eigenvalues[m]).collect();
    let eigenvectors = order
        .iter()
        .map(|&m| {
            let mut v: Vec<f64> = eig.eigenvectors.column(m).iter().copied().collect();
            let lead = v.iter().copied().fold(0.0f64, |acc, x| if x.abs() > acc.abs() { x } else { acc });
            if lead < 0.0 {
                v.iter_mut().for_each(|x| *x = -*x);
            }
            v
        })
        .collect();
    Ok(Spectrum { eigenvalues, eigenvectors })
}

/// Gap tolerance under which two gaps count as tied.
const GAP_TIE: f64 = 1e-12;

/// Cluster count at the largest gap `λ_{k+1} - λ_k`, `k ∈ 1..=k_max`
/// (1-indexed, ascending eigenvalues); ties go to the smaller `k`.
pub fn eigengap_k(eigenvalues: &[f64], k_max: usize) -> Result<usize> {
    if k_max == 0 || eigenvalues.len() < k_max + 1 {
        return Err(Error::InvalidSpec(format!(
            "eigengap needs k_max >= 1 and at least k_max + 1 eigenvalues ({} < {})",
            eigenvalues.len(),
            k_max + 1
        )));
    }
    let gaps: Vec<f64> = (1..=k_max).map(|k| eigenvalues[k] - eigenvalues[k - 1]).collect();
    let best = gaps.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Ok(gaps.iter().position(|&g| g >= best - GAP_TIE).map_or(1, |i| i + 1))
}

/// Result of [`kmeans`]: labels relabelled by first appearance.
#[derive(Debug, Clone, PartialEq)]
pub struct KMeans {
    pub labels: Vec<usize>,
    pub inertia: f64,
}

fn kmeans_once<R: Rng>(points: &[Vec<f64>], k: usize, rng: &mut R) -> KMeans {
    let n = points.len();
    // k-means++ seeding
    let mut centres: Vec<Vec<f64>> = vec![points[rng.random_range(0..n)].clone()];
    let mut nearest: Vec<f64> = points.iter().map(|p| sq_dist(p, &centres[0])).collect();
    while centres.len() < k {
        let total: f64 = nearest.iter().sum();
        let pick = if total > 0.0 {
            let mut u = rng.random::<f64>() * total;
            let mut idx = n - 1;
            for (i, &w) in nearest.iter().enumerate() {
                if u < w {
                    idx = i;
                    break;
                }
                u -= w;
            }
            idx
        } else {
            rng.random_range(0..n)
        };
        centres.push(points[pick].clone());
        for (i, p) in points.iter().enumerate() {
            nearest[i] = nearest[i].min(sq_dist(p, &centres[centres.len() - 1]));
        }
    }
    let dim = points[0].len();
    let mut labels = vec![0usize; n];
    for iter in 0..300 {
        let mut changed = false;
        for (i, p) in points.iter().enumerate() {
            let mut best = (f64::INFINITY, 0);
            for (c, centre) in centres.iter().enumerate() {
                let d = sq_dist(p, centre);
                if d < best.0 {
                    best = (d, c);
                }
            }
            if labels[i] != best.1 {
                labels[i] = best.1;
                changed = true;
            }
        }
        if !changed && iter > 0 {
            break;
        }
        for (c, centre) in centres.iter_mut().enumerate() {
            let members: Vec<&Vec<f64>> = points.iter().zip(&labels).filter(|(_, &l)| l == c).map(|(p, _)| p).collect();
            if members.is_empty() {
                continue;
            }
            for (a, v) in centre.iter_mut().enumerate().take(dim) {
                *v = members.iter().map(|m| m[a]).sum::<f64>() / members.len() as f64;
            }
        }
    }
    let inertia = points.iter().zip(&labels).map(|(p, &l)| sq_dist(p, &centres[l])).sum();
    KMeans { labels: canonical_labels(&labels), inertia }
}

/// Renumbers labels in order of first appearance.
pub fn canonical_labels(labels: &[usize]) -> Vec<usize> {
    let mut map: Vec<(usize, usize)> = Vec::new();
    labels
        .iter()
        .map(|&l| match map.iter().find(|(from, _)| *from == l) {
            Some(&(_, to)) => to,
            None => {
                let to = map.len();
                map.push((l, to));
                to
            }
        })
        .collect()
}

/// Seeded k-means++ with Lloyd iterations; the restart with the lowest
/// inertia wins, earlier restarts winning ties.
pub fn kmeans(points: &[Vec<f64>], k: usize, restarts: usize, kmeans_seed: u64) -> Result<KMeans> {
    let n = points.len();
    if k == 0 || k > n {
        return Err(Error::InvalidSpec(format!("k = {k} must lie in 1..={n}")));
    }
    let mut rng = seed::rng(kmeans_seed);
    let mut best: Option<KMeans> = None;
    for _ in 0..restarts.max(1) {
        let run = kmeans_once(points, k, &mut rng);
        if best.as_ref().is_none_or(|b| run.inertia < b.inertia) {
            best = Some(run);
        }
    }
    Ok(best.expect("at least one restart"))
}

/// Clusters the row-normalized rows of the first `k` eigenvectors.
pub fn spectral_cluster(spectrum: &Spectrum, k: usize, restarts: usize, cluster_seed: u64) -> Result<Vec<usize>> {
    let n = spectrum.eigenvalues.len();
    if k == 0 || k > n {
        return Err(Error::InvalidSpec(format!("k = {k} must lie in 1..={n}")));
    }
    let rows: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            let r: Vec<f64> = (0..k).map(|m| spectrum.eigenvectors[m][i]).collect();
            let norm = libm::sqrt(r.iter().map(|v| v * v).sum());
            if norm > 0.0 {
                r.iter().map(|v| v / norm).collect()
            } else {
                r
            }
        })
        .collect();
    Ok(kmeans(&rows, k, restarts, cluster_seed)?.labels)
}

/// Adjusted Rand index of two labelings.
pub fn adjusted_rand_index(a: &[usize], b: &[usize]) -> Result<f64> {
    if a.len() != b.len() || a.is_empty() {
        return Err(Error::ShapeMismatch("labelings must be non-empty and equally long".into()));
    }
    let (ka, kb) = (a.iter().max().unwrap() + 1, b.iter().max().unwrap() + 1);
    let mut table = vec![0u64; ka * kb];
    for (&x, &y) in a.iter().zip(b) {
        table[x * kb + y] += 1;
    }
    let c2 = |v: u64| (v * v.saturating_sub(1)) as f64 / 2.0;
    let sum_ij: f64 = table.iter().map(|&v| c2(v)).sum();
    let sum_a: f64 = (0..ka).map(|i| c2(table[i * kb..(i + 1) * kb].iter().sum())).sum();
    let sum_b: f64 = (0..kb).map(|j| c2((0..ka).map(|i| table[i * kb + j]).sum())).sum();
    let total = c2(a.len() as u64);
    let expected = sum_a * sum_b / total;
    let max = (sum_a + sum_b) / 2.0;
    if max == expected {
        // both labelings trivial (one cluster, or all singletons)
        return Ok(if sum_ij == expected { 1.0 } else { 0.0 });
    }
    Ok((sum_ij - expected) / (max - expected))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TsneParams {
    pub perplexity: f64,
    pub iterations: usize,
    pub learning_rate: f64,
    pub early_exaggeration: f64,
    pub exaggeration_iterations: usize,
}

impl Default for TsneParams {
    fn default() -> Self {
        Self { perplexity: 15.0, iterations: 1000, learning_rate: 200.0, early_exaggeration: 12.0, exaggeration_iterations: 250 }
    }
}

/// A 2D embedding plus notes on any numerical fallbacks taken.
#[derive(Debug, Clone, PartialEq)]
pub struct Embedding {
    pub coords: Vec<[f64; 2]>,
    pub flags: Vec<String>,
}

/// Joint probabilities with per-point Gaussian bandwidths matched to the
/// perplexity by bisection.
fn joint_probabilities(d2: &[f64], n: usize, perplexity: f64) -> Vec<f64> {
    let target = libm::log(perplexity);
    let mut p = vec![0.0; n * n];
    for i in 0..n {
        let (mut lo, mut hi, mut beta) = (0.0f64, f64::INFINITY, 1.0f64);
        let row = |beta: f64, out: &mut [f64]| -> f64 {
            let min = (0..n).filter(|&j| j != i).map(|j| d2[i * n + j]).fold(f64::INFINITY, f64::min);
            let mut sum = 0.0;
            for j in 0..n {
                out[j] = if j == i { 0.0 } else { libm::exp(-(d2[i * n + j] - min) * beta) };
                sum += out[j];
            }
            let mut h = 0.0;
            for j in 0..n {
                out[j] /= sum;
                if out[j] > 0.0 {
                    h -= out[j] * libm::log(out[j]);
                }
            }
            h
        };
        let mut buf = vec![0.0; n];
        for _ in 0..200 {
            let h = row(beta, &mut buf);
            if (h - target).abs() < 1e-10 {
                break;
            }
            if h > target {
                lo = beta;
                beta = if hi.is_finite() { (beta + hi) / 2.0 } else { beta * 2.0 };
            } else {
                hi = beta;
                beta = (beta + lo) / 2.0;
            }
        }
        row(beta, &mut buf);
        p[i * n..(i + 1) * n].copy_from_slice(&buf);
    }
    let mut joint = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            joint[i * n + j] = ((p[i * n + j] + p[j * n + i]) / (2.0 * n as f64)).max(1e-12);
        }
    }
    joint
}

/// Exact t-SNE from the given initial coordinates.
///
/// Perplexity is clamped to `(n - 1) / 3`. Gradient descent uses early
/// exaggeration, momentum 0.5 then 0.8, and per-coordinate adaptive gains.
pub fn tsne(points: &[Vec<f64>], init: &[[f64; 2]], params: &TsneParams) -> Result<Embedding> {
    let n = points.len();
    if n < 2 || init.len() != n {
        return Err(Error::InvalidSpec(format!("t-SNE needs n >= 2 points with matching init ({n}, {})", init.len())));
    }
    let mut flags = Vec::new();
    let max_perp = (n - 1) as f64 / 3.0;
    let perplexity = params.perplexity.min(max_perp).max(1.0);
    if perplexity != params.perplexity {
        flags.push(format!("perplexity clamped to {perplexity:.3}"));
    }
    let d2 = pairwise_sq(points);
    let p = joint_probabilities(&d2, n, perplexity);
    let mut y: Vec<[f64; 2]> = init.to_vec();
    let mut update = vec![[0.0f64; 2]; n];
    let mut gains = vec![[1.0f64; 2]; n];
    let mut num = vec![0.0; n * n];
    for iter in 0..params.iterations {
        let exaggeration = if iter < params.exaggeration_iterations { params.early_exaggeration } else { 1.0 };
        let momentum = if iter < params.exaggeration_iterations { 0.5 } else { 0.8 };
        let mut sum_q = 0.0;
        for i in 0..n {
            for j in i + 1..n {
                let dx = y[i][0] - y[j][0];
                let dy = y[i][1] - y[j][1];
                let v = 1.0 / (1.0 + dx * dx + dy * dy);
                num[i * n + j] = v;
                num[j * n + i] = v;
                sum_q += 2.0 * v;
            }
        }
        for i in 0..n {
            let mut g = [0.0f64; 2];
            for j in 0..n {
                if i == j {
                    continue;
                }
                let q = (num[i * n + j] / sum_q).max(1e-12);
                let mult = 4.0 * (exaggeration * p[i * n + j] - q) * num[i * n + j];
                g[0] += mult * (y[i][0] - y[j][0]);
                g[1] += mult * (y[i][1] - y[j][1]);
            }
            for a in 0..2 {
                gains[i][a] = if (g[a] > 0.0) != (update[i][a] > 0.0) { gains[i][a] + 0.2 } else { gains[i][a] * 0.8 };
                gains[i][a] = gains[i][a].max(0.01);
                update[i][a] = momentum * update[i][a] - params.learning_rate * gains[i][a] * g[a];
            }
        }
        for i in 0..n {
            y[i][0] += update[i][0];
            y[i][1] += update[i][1];
        }
        let mean = [y.iter().map(|c| c[0]).sum::<f64>() / n as f64, y.iter().map(|c| c[1]).sum::<f64>() / n as f64];
        for c in &mut y {
            c[0] -= mean[0];
            c[1] -= mean[1];
        }
    }
    if y.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("t-SNE coordinates"));
    }
    Ok(Embedding { coords: y, flags })
}

/// Initial t-SNE coordinates from the first two nontrivial Laplacian
/// eigenvectors, scaled to standard deviation 1e-4. A constant coordinate
/// is replaced by seeded Gaussian jitter of the same scale.
pub fn laplacian_init(spectrum: &Spectrum, jitter_seed: u64) -> (Vec<[f64; 2]>, Vec<String>) {
    let n = spectrum.eigenvalues.len();
    let mut flags = Vec::new();
    let mut rng = seed::rng(jitter_seed);
    let normal = Normal::new(0.0, 1e-4).expect("valid sd");
    let mut cols = [vec![0.0; n], vec![0.0; n]];
    for (a, col) in cols.iter_mut().enumerate() {
        let src = spectrum.eigenvectors.get(a + 1);
        let mean = src.map_or(0.0, |v| v.iter().sum::<f64>() / n as f64);
        let sd = src.map_or(0.0, |v| libm::sqrt(v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n as f64));
        match src {
            Some(v) if sd > 1e-12 => {
                for (c, &x) in col.iter_mut().zip(v) {
                    *c = (x - mean) / sd * 1e-4;
                }
            }
            _ => {
                flags.push(format!("degenerate initial axis {a}: seeded jitter"));
                for c in col.iter_mut() {
                    *c = normal.sample(&mut rng);
                }
            }
        }
    }
    ((0..n).map(|i| [cols[0][i], cols[1][i]]).collect(), flags)
}

/// Per-cluster mean heatmaps; `None` marks an empty cluster.
pub fn group_mean_heatmaps(maps: &[Volume], labels: &[usize], k: usize) -> Result<Vec<Option<Volume>>> {
    if maps.len() != labels.len() {
        return Err(Error::ShapeMismatch("one label per heatmap".into()));
    }
    (0..k)
        .map(|c| {
            let members: Vec<&Volume> = maps.iter().zip(labels).filter(|(_, &l)| l == c).map(|(m, _)| m).collect();
            if members.is_empty() {
                Ok(None)
            } else {
                mean_heatmap(members).map(Some)
            }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SprayParams {
    pub target_spacing_mm: f64,
    pub k_neighbors: usize,
    pub k_max: usize,
    /// Fixed cluster count; `None` selects it by the eigengap.
    pub n_clusters: Option<usize>,
    pub restarts: usize,
    pub tsne: TsneParams,
    pub seed: u64,
}

impl Default for SprayParams {
    fn default() -> Self {
        Self { target_spacing_mm: 2.0, k_neighbors: 10, k_max: 10, n_clusters: None, restarts: 20, tsne: TsneParams::default(), seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SprayResult {
    pub eigenvalues: Vec<f64>,
    pub chosen_k: usize,
    pub labels: Vec<usize>,
    pub embedding: Vec<[f64; 2]>,
    pub flags: Vec<String>,
}

/// Heatmap feature vector: downsampled and scaled to unit L1 norm so that
/// clustering compares where relevance sits rather than how much there is.
pub fn heatmap_features(map: &Volume, target_spacing: f64) -> Result<Vec<f64>> {
    let small = downsample(map, target_spacing)?;
    let l1: f64 = small.data().iter().map(|v| (*v as f64).abs()).sum();
    let scale = if l1 > 0.0 { 1.0 / l1 } else { 1.0 };
    Ok(small.data().iter().map(|&v| v as f64 * scale).collect())
}

/// Full analysis over a set of heatmaps. `k_neighbors` and `k_max` are
/// clamped to `n - 1`.
pub fn spray(maps: &[Volume], params: &SprayParams) -> Result<SprayResult> {
    let n = maps.len();
    if n < 3 {
        return Err(Error::InvalidSpec(format!("spectral analysis needs at least 3 heatmaps, got {n}")));
    }
    let mut flags = Vec::new();
    let points: Vec<Vec<f64>> = maps.iter().map(|m| heatmap_features(m, params.target_spacing_mm)).collect::<Result<_>>()?;
    let k_nb = params.k_neighbors.min(n - 1);
    let k_max = params.k_max.min(n - 1);
    if k_nb != params.k_neighbors || k_max != params.k_max {
        flags.push(format!("neighbourhood clamped to {k_nb}, k_max to {k_max}"));
    }
    let graph = affinity(&points, k_nb)?;
    let spectrum = laplacian_spectrum(&graph)?;
    let chosen_k = match params.n_clusters {
        Some(k) => k,
        None => eigengap_k(&spectrum.eigenvalues, k_max)?,
    };
    let labels = spectral_cluster(&spectrum, chosen_k, params.restarts, seed::derive(params.seed, seed::stream::SPRAY, 0))?;
    let (init, init_flags) = laplacian_init(&spectrum, seed::derive(params.seed, seed::stream::SPRAY, 1));
    flags.extend(init_flags);
    let emb = tsne(&points, &init, &params.tsne)?;
    flags.extend(emb.flags);
    Ok(SprayResult { eigenvalues: spectrum.eigenvalues, chosen_k, labels, embedding: emb.coords, flags })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn downsample_cases() {
        let ones = Volume::filled(Dims::cube(2), 1.0, 1.0);
        let s = downsample(&ones, 2.0).unwrap();
        assert_eq!((s.dims(), s.data()), (Dims::cube(1), &[1.0f32][..]));
        assert_eq!(downsample(&ones, 1.0).unwrap(), ones);
        let d = Dims::cube(4);
        let checker = Volume::new(
            d,
            1.0,
            (0..64)
                .map(|i| {
                    let (x, y, z) = d.coords(i);
                    ((x + y + z) % 2) as f32
                })
                .collect(),
        )
        .unwrap();
        assert!(downsample(&checker, 2.0).unwrap().data().iter().all(|&v| v == 0.5));
        assert!(downsample(&ones, 1.5).is_err());
    }

    #[test]
    fn complete_graph_spectrum() {
        let g = AffinityGraph { n: 3, weights: vec![0.0, 1.0, 1.0, 1.0, 0.0, 1.0, 1.0, 1.0, 0.0], k_neighbors: 2, sigma: 1.0 };
        let s = laplacian_spectrum(&g).unwrap();
        for (got, want) in s.eigenvalues.iter().zip([0.0, 1.5, 1.5]) {
            assert!((got - want).abs() < 1e-12, "{got}");
        }
    }

    #[test]
    fn isolated_vertex_named() {
        let g = AffinityGraph { n: 3, weights: vec![0.0, 1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0], k_neighbors: 1, sigma: 1.0 };
        assert_eq!(laplacian_spectrum(&g), Err(Error::IsolatedVertex(2)));
    }

    #[test]
    fn eigengap_cases() {
        assert_eq!(eigengap_k(&[0.0, 0.0, 0.8, 0.9, 1.0], 3).unwrap(), 2);
        assert_eq!(eigengap_k(&[0.0, 0.1, 0.2, 0.3, 0.4], 4).unwrap(), 1);
        assert!(eigengap_k(&[0.0, 1.0], 2).is_err());
    }

    #[test]
    fn identical_points_have_unit_affinity() {
        let pts = vec![vec![1.0, 2.0], vec![1.0, 2.0], vec![5.0, 5.0]];
        let g = affinity(&pts, 1).unwrap();
        assert_eq!(g.get(0, 1), 1.0);
        assert_eq!(g.get(0, 0), 0.0);
    }

    #[test]
    fn ari_cases() {
        assert_eq!(adjusted_rand_index(&[0, 0, 1, 1], &[1, 1, 0, 0]).unwrap(), 1.0);
        assert_eq!(adjusted_rand_index(&[0, 0, 0, 0], &[0, 0, 0, 0]).unwrap(), 1.0);
        // sklearn reference value for this pair
        let v = adjusted_rand_index(&[0, 0, 1, 1], &[0, 0, 1, 2]).unwrap();
        assert!((v - 0.5714285714285715).abs() < 1e-12, "{v}");
    }

    #[test]
    fn kmeans_single_cluster_and_bounds() {
        let pts = vec![vec![0.0], vec![1.0], vec![2.0]];
        assert_eq!(kmeans(&pts, 1, 3, 0).unwrap().labels, vec![0, 0, 0]);
        assert!(kmeans(&pts, 4, 3, 0).is_err());
    }

    #[test]
    fn group_means() {
        let a = Volume::filled(Dims::cube(2), 1.0, 1.0);
        let b = Volume::filled(Dims::cube(2), 1.0, 3.0);
        let g = group_mean_heatmaps(&[a.clone(), b.clone()], &[0, 0], 2).unwrap();
        assert_eq!(g[0].as_ref().unwrap().data()[0], 2.0);
        assert!(g[1].is_none());
        let g = group_mean_heatmaps(&[a.clone(), b.clone()], &[1, 0], 2).unwrap();
        assert_eq!(g[0].as_ref(), Some(&b));
        assert_eq!(g[1].as_ref(), Some(&a));
    }
}

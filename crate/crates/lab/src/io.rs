//! On-disk formats: VOL1 volumes, SPM1 checkpoints, JSON sidecars and
//! manifests, CSV tables and PGM slices.

use std::fs;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use shortcut_core::net::{Activation, LayerKind, LayerSpec, Model};
use shortcut_core::phantom::{PhantomSpec, SubjectRecord};
use shortcut_core::{Class, Dims, Volume};

use crate::error::{LabError, Result};

pub const VOLUME_MAGIC: &[u8; 4] = b"VOL1";
pub const CHECKPOINT_MAGIC: &[u8; 4] = b"SPM1";

/// Creates the parent directory of `path` if needed.
pub fn ensure_parent(path: &Path) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| LabError::io(dir, e))?;
    }
    Ok(())
}

pub fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    ensure_parent(path)?;
    fs::write(path, bytes).map_err(|e| LabError::io(path, e))
}

pub fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| LabError::io(path, e))
}

/// Little-endian cursor over a byte buffer.
struct Reader<'a> {
    path: &'a Path,
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or_else(|| LabError::format(self.path, format!("truncated at byte {}", self.pos)))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn f32(&mut self) -> Result<f32> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn finish(&self) -> Result<()> {
        if self.pos != self.buf.len() {
            return Err(LabError::format(self.path, format!("{} trailing bytes", self.buf.len() - self.pos)));
        }
        Ok(())
    }
}

fn dim_u32(n: usize, path: &Path) -> Result<u32> {
    u32::try_from(n).map_err(|_| LabError::format(path, format!("dimension {n} exceeds u32")))
}

pub fn encode_volume(v: &Volume, path: &Path) -> Result<Vec<u8>> {
    let d = v.dims();
    let mut out = Vec::with_capacity(24 + 4 * v.len());
    out.extend_from_slice(VOLUME_MAGIC);
    for n in d.as_array() {
        out.extend_from_slice(&dim_u32(n, path)?.to_le_bytes());
    }
    out.extend_from_slice(&v.spacing_mm().to_le_bytes());
    for &x in v.data() {
        out.extend_from_slice(&x.to_le_bytes());
    }
    Ok(out)
}

pub fn decode_volume(bytes: &[u8], path: &Path) -> Result<Volume> {
    let mut r = Reader { path, buf: bytes, pos: 0 };
    if r.take(4)? != VOLUME_MAGIC {
        return Err(LabError::format(path, "not a VOL1 file"));
    }
    let d = Dims::new(r.u32()? as usize, r.u32()? as usize, r.u32()? as usize);
    let spacing = r.f64()?;
    let data = (0..d.len()).map(|_| r.f32()).collect::<Result<Vec<f32>>>()?;
    r.finish()?;
    Ok(Volume::new(d, spacing, data)?)
}

pub fn write_volume(path: &Path, v: &Volume) -> Result<()> {
    write_bytes(path, &encode_volume(v, path)?)
}

pub fn read_volume(path: &Path) -> Result<Volume> {
    decode_volume(&read_bytes(path)?, path)
}

/// Serializes a model: layer count, per-layer `(kind, in, out, stride)`,
/// then every layer's weights followed by its biases as f32.
pub fn encode_checkpoint(model: &Model<f32>, path: &Path) -> Result<Vec<u8>> {
    let layers = model.layers();
    let mut out = Vec::with_capacity(8 + 10 * layers.len() + 4 * model.param_count());
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&dim_u32(layers.len(), path)?.to_le_bytes());
    for l in layers {
        out.push(l.spec.kind.code());
        out.extend_from_slice(&dim_u32(l.spec.in_channels, path)?.to_le_bytes());
        out.extend_from_slice(&dim_u32(l.spec.out_channels, path)?.to_le_bytes());
        out.push(l.spec.stride() as u8);
    }
    for l in layers {
        for &w in l.weights.iter().chain(&l.biases) {
            out.extend_from_slice(&w.to_le_bytes());
        }
    }
    Ok(out)
}

/// Inverse of [`encode_checkpoint`]. The file does not store the input grid
/// or activations: convolutions and hidden dense layers use ReLU and the last
/// layer softmax.
pub fn decode_checkpoint(bytes: &[u8], input_dims: Dims, path: &Path) -> Result<Model<f32>> {
    let mut r = Reader { path, buf: bytes, pos: 0 };
    if r.take(4)? != CHECKPOINT_MAGIC {
        return Err(LabError::format(path, "not an SPM1 file"));
    }
    let n = r.u32()? as usize;
    let mut specs = Vec::with_capacity(n.min(1024));
    for i in 0..n {
        let code = r.u8()?;
        let kind = LayerKind::from_code(code).ok_or_else(|| LabError::format(path, format!("layer {i}: unknown kind {code}")))?;
        let (cin, cout) = (r.u32()? as usize, r.u32()? as usize);
        let stride = r.u8()? as usize;
        if stride != kind.stride() {
            return Err(LabError::format(path, format!("layer {i}: stride {stride} does not match {kind:?}")));
        }
        let act = if i + 1 == n { Activation::Softmax } else { Activation::Relu };
        specs.push(LayerSpec { kind, in_channels: cin, out_channels: cout, activation: act });
    }
    let params = specs
        .iter()
        .map(|s| {
            let w = (0..s.weight_len()).map(|_| r.f32()).collect::<Result<Vec<f32>>>()?;
            let b = (0..s.out_channels).map(|_| r.f32()).collect::<Result<Vec<f32>>>()?;
            Ok((w, b))
        })
        .collect::<Result<Vec<_>>>()?;
    r.finish()?;
    Ok(Model::from_parts(input_dims, &specs, params)?)
}

pub fn write_checkpoint(path: &Path, model: &Model<f32>) -> Result<()> {
    write_bytes(path, &encode_checkpoint(model, path)?)
}

pub fn read_checkpoint(path: &Path, input_dims: Dims) -> Result<Model<f32>> {
    decode_checkpoint(&read_bytes(path)?, input_dims, path)
}

/// Pretty JSON with a trailing newline.
pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    write_bytes(path, s.as_bytes())
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let bytes = read_bytes(path)?;
    serde_json::from_slice(&bytes).map_err(|e| LabError::format(path, e.to_string()))
}

/// Writes rows of serializable records with a header line.
pub fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    ensure_parent(path)?;
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| LabError::io(path, e))
}

/// Writes a header-only CSV; used when a table has no rows.
pub fn write_csv_header(path: &Path, header: &[&str]) -> Result<()> {
    ensure_parent(path)?;
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(header)?;
    w.flush().map_err(|e| LabError::io(path, e))
}

/// JSON sidecar stored next to a heatmap.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeatmapSidecar {
    pub image_id: String,
    pub session_id: String,
    pub target: Class,
    pub truth: Class,
    pub predicted: Class,
    /// Output relevance the propagation started from.
    pub target_score: f64,
}

/// One entry of a dataset manifest; paths are relative to the manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub subject_id: String,
    pub image_id: String,
    pub class: Class,
    pub seed: u64,
    pub image: PathBuf,
    pub mask: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub phantom: PhantomSpec,
    pub cohort_seed: u64,
    pub images_per_subject: usize,
    pub entries: Vec<ManifestEntry>,
}

/// Writes every image and mask as VOL1 plus `manifest.json` under `dir`.
pub fn write_dataset(
    dir: &Path,
    manifest_spec: &PhantomSpec,
    cohort_seed: u64,
    images_per_subject: usize,
    records: &[SubjectRecord],
) -> Result<Manifest> {
    let mut entries = Vec::with_capacity(records.len());
    for r in records {
        let image = PathBuf::from("images").join(format!("{}.vol", r.image_id));
        let mask = PathBuf::from("masks").join(format!("{}.vol", r.image_id));
        write_volume(&dir.join(&image), &r.image)?;
        write_volume(&dir.join(&mask), &r.brain_mask)?;
        entries.push(ManifestEntry {
            subject_id: r.subject_id.clone(),
            image_id: r.image_id.clone(),
            class: r.class,
            seed: r.seed,
            image,
            mask,
        });
    }
    let manifest = Manifest { phantom: manifest_spec.clone(), cohort_seed, images_per_subject, entries };
    write_json(&dir.join("manifest.json"), &manifest)?;
    Ok(manifest)
}

pub fn read_dataset(dir: &Path) -> Result<(Manifest, Vec<SubjectRecord>)> {
    let manifest: Manifest = read_json(&dir.join("manifest.json"))?;
    let records = manifest
        .entries
        .iter()
        .map(|e| {
            Ok(SubjectRecord {
                subject_id: e.subject_id.clone(),
                image_id: e.image_id.clone(),
                class: e.class,
                image: read_volume(&dir.join(&e.image))?,
                brain_mask: read_volume(&dir.join(&e.mask))?,
                seed: e.seed,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((manifest, records))
}

/// Binary greyscale PGM (P5, maxval 255).
pub fn encode_pgm(width: usize, height: usize, pixels: &[u8]) -> Vec<u8> {
    assert_eq!(pixels.len(), width * height);
    let mut out = format!("P5\n{width} {height}\n255\n").into_bytes();
    out.extend_from_slice(pixels);
    out
}

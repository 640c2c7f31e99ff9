//! Binary containers for datasets, parameters and attribution matrices.
//!
//! All three share the same shape: an 8-byte magic, a little-endian `u32`
//! format version, then fixed-width little-endian fields. Features are `f32`,
//! indices `u32`, everything else `f64`. Encoding is a pure function of the
//! value, so saving a loaded file reproduces it byte for byte.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use d3m_core::attribution::{AttributionMatrix, TrakConfig};
use d3m_core::datasets::{Dataset, Example, Split};
use d3m_core::models::{ModelConfig, ParamVector};
use d3m_core::numerics::Matrix;

use crate::error::{CliError, IoContext, Result};

pub const DATASET_MAGIC: &[u8; 8] = b"D3MDATA\0";
pub const PARAMS_MAGIC: &[u8; 8] = b"D3MPARM\0";
pub const ATTRIB_MAGIC: &[u8; 8] = b"D3MTRAK\0";
pub const FORMAT_VERSION: u32 = 1;

const HAS_GROUPS: u32 = 1;
const HAS_ANNOTATIONS: u32 = 2;

/// Writes `bytes` to a sibling temporary file and renames it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut name = path.file_name().unwrap_or_default().to_os_string();
    name.push(".tmp");
    let tmp = path.with_file_name(name);
    {
        let mut f = fs::File::create(&tmp).at(&tmp)?;
        f.write_all(bytes).at(&tmp)?;
        f.sync_all().at(&tmp)?;
    }
    fs::rename(&tmp, path).at(path)
}

/// Cursor over a byte buffer that reports failures with their byte offset.
struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn new(buf: &'a [u8], path: &'a Path) -> Self {
        Reader { buf, pos: 0, path }
    }

    fn fail(&self, offset: usize, message: impl Into<String>) -> CliError {
        CliError::Parse {
            path: self.path.to_path_buf(),
            offset: offset as u64,
            message: message.into(),
        }
    }

    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let left = self.buf.len() - self.pos;
        if n > left {
            return Err(self.fail(self.pos, format!("truncated {what}: need {n} bytes, {left} left")));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn magic(&mut self, expected: &[u8; 8]) -> Result<()> {
        let got = self.take(8, "magic")?;
        if got != expected {
            return Err(self.fail(0, format!("bad magic {:?}, expected {:?}", String::from_utf8_lossy(got), String::from_utf8_lossy(expected))));
        }
        let at = self.pos;
        let version = self.u32("version")?;
        if version != FORMAT_VERSION {
            return Err(self.fail(at, format!("unsupported format version {version}, expected {FORMAT_VERSION}")));
        }
        Ok(())
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    fn f32(&mut self, what: &str) -> Result<f32> {
        Ok(f32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn f64(&mut self, what: &str) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    /// A `u32` that must be below `bound`.
    fn index(&mut self, what: &str, bound: usize) -> Result<usize> {
        let at = self.pos;
        let v = self.u32(what)? as usize;
        if v >= bound {
            return Err(self.fail(at, format!("{what} {v} out of range (< {bound})")));
        }
        Ok(v)
    }

    fn json<T: for<'de> Deserialize<'de>>(&mut self, what: &str) -> Result<T> {
        let len = self.u32(what)? as usize;
        let at = self.pos;
        let bytes = self.take(len, what)?;
        serde_json::from_slice(bytes).map_err(|e| self.fail(at, format!("{what}: {e}")))
    }

    /// Checks that `count` items of `width` bytes fit in the rest of the buffer
    /// before anything is allocated for them.
    fn expect_payload(&self, count: usize, width: usize, what: &str) -> Result<()> {
        let need = count.checked_mul(width);
        let left = self.buf.len() - self.pos;
        match need {
            Some(need) if need <= left => Ok(()),
            _ => Err(self.fail(self.pos, format!("truncated {what}: {count} entries of {width} bytes do not fit in {left} bytes"))),
        }
    }

    fn finish(&self) -> Result<()> {
        if self.pos != self.buf.len() {
            return Err(self.fail(self.pos, format!("{} trailing bytes", self.buf.len() - self.pos)));
        }
        Ok(())
    }
}

fn put_u32(out: &mut Vec<u8>, v: usize, what: &str) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| CliError::Usage(format!("{what} = {v} does not fit in 32 bits")))?;
    out.extend_from_slice(&v.to_le_bytes());
    Ok(())
}

fn put_json<T: Serialize>(out: &mut Vec<u8>, value: &T) -> Result<()> {
    let bytes = serde_json::to_vec(value).expect("config types serialize");
    put_u32(out, bytes.len(), "embedded json length")?;
    out.extend_from_slice(&bytes);
    Ok(())
}

fn header(magic: &[u8; 8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(64);
    out.extend_from_slice(magic);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out
}

/// JSON sidecar stored next to a dataset file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetMeta {
    pub version: u32,
    pub split: Split,
    pub group_names: Option<Vec<String>>,
    pub annotation_names: Option<Vec<String>>,
}

/// `train.bin` → `train.meta.json`.
pub fn sidecar_path(path: &Path) -> PathBuf {
    let stem = path.file_stem().unwrap_or_default().to_string_lossy();
    path.with_file_name(format!("{stem}.meta.json"))
}

pub fn encode_dataset(ds: &Dataset) -> Result<(Vec<u8>, String)> {
    let mut out = header(DATASET_MAGIC);
    let groups = ds.group_names().map_or(0, <[String]>::len);
    let annotations = ds.annotation_names().map_or(0, <[String]>::len);
    let flags = if ds.has_groups() { HAS_GROUPS } else { 0 } | if ds.annotation_names().is_some() { HAS_ANNOTATIONS } else { 0 };
    out.extend_from_slice(&ds.split().code().to_le_bytes());
    put_u32(&mut out, ds.len(), "example count")?;
    put_u32(&mut out, ds.feature_dim(), "feature dimension")?;
    put_u32(&mut out, ds.class_count(), "class count")?;
    out.extend_from_slice(&flags.to_le_bytes());
    put_u32(&mut out, groups, "group count")?;
    put_u32(&mut out, annotations, "annotation count")?;
    for ex in ds.examples() {
        for v in &ex.features {
            out.extend_from_slice(&v.to_le_bytes());
        }
        put_u32(&mut out, ex.label, "label")?;
        if let Some(g) = ex.group {
            put_u32(&mut out, g, "group")?;
        }
        if let Some(a) = ex.annotations {
            out.extend_from_slice(&a.to_le_bytes());
        }
    }
    let meta = DatasetMeta {
        version: FORMAT_VERSION,
        split: ds.split(),
        group_names: ds.group_names().map(<[String]>::to_vec),
        annotation_names: ds.annotation_names().map(<[String]>::to_vec),
    };
    let mut sidecar = serde_json::to_string_pretty(&meta).expect("meta serializes");
    sidecar.push('\n');
    Ok((out, sidecar))
}

pub fn decode_dataset(bytes: &[u8], meta: &DatasetMeta, path: &Path) -> Result<Dataset> {
    let mut r = Reader::new(bytes, path);
    r.magic(DATASET_MAGIC)?;
    let at = r.pos;
    let split = Split::from_code(r.u32("split")?).ok_or_else(|| r.fail(at, "unknown split code"))?;
    let n = r.u32("example count")? as usize;
    let dim = r.u32("feature dimension")? as usize;
    let classes = r.u32("class count")? as usize;
    let at = r.pos;
    let flags = r.u32("flags")?;
    if flags & !(HAS_GROUPS | HAS_ANNOTATIONS) != 0 {
        return Err(r.fail(at, format!("unknown flag bits {flags:#x}")));
    }
    let group_count = r.u32("group count")? as usize;
    let annotation_count = r.u32("annotation count")? as usize;
    let (has_groups, has_annotations) = (flags & HAS_GROUPS != 0, flags & HAS_ANNOTATIONS != 0);

    let sidecar = sidecar_path(path);
    let mismatch = |what: &str| CliError::format(&sidecar, format!("{what} disagrees with {}", path.display()));
    if meta.split != split {
        return Err(mismatch("split"));
    }
    if meta.group_names.as_ref().map(Vec::len) != has_groups.then_some(group_count) {
        return Err(mismatch("group_names"));
    }
    if meta.annotation_names.as_ref().map(Vec::len) != has_annotations.then_some(annotation_count) {
        return Err(mismatch("annotation_names"));
    }

    let width = 4 * dim + 4 + if has_groups { 4 } else { 0 } + if has_annotations { 8 } else { 0 };
    r.expect_payload(n, width, "examples")?;
    let mut examples = Vec::with_capacity(n);
    for _ in 0..n {
        let features = (0..dim).map(|_| r.f32("feature")).collect::<Result<Vec<_>>>()?;
        let label = r.index("label", classes)?;
        let group = if has_groups { Some(r.index("group", group_count)?) } else { None };
        let annotations = if has_annotations { Some(r.u64("annotations")?) } else { None };
        examples.push(Example {
            features,
            label,
            group,
            annotations,
        });
    }
    r.finish()?;
    Dataset::new(examples, dim, classes, meta.group_names.clone(), meta.annotation_names.clone(), split)
        .map_err(|e| CliError::format(path, e.to_string()))
}

/// Writes `path` and its `.meta.json` sidecar.
pub fn save_dataset(ds: &Dataset, path: &Path) -> Result<()> {
    let (bytes, sidecar) = encode_dataset(ds)?;
    write_atomic(path, &bytes)?;
    write_atomic(&sidecar_path(path), sidecar.as_bytes())
}

pub fn load_dataset(path: &Path) -> Result<Dataset> {
    let bytes = fs::read(path).at(path)?;
    let sidecar = sidecar_path(path);
    let text = fs::read(&sidecar).at(&sidecar)?;
    let meta: DatasetMeta = serde_json::from_slice(&text).map_err(|e| CliError::Parse {
        path: sidecar.clone(),
        offset: json_offset(&text, &e),
        message: e.to_string(),
    })?;
    decode_dataset(&bytes, &meta, path)
}

/// Byte offset of a serde_json error position.
pub fn json_offset(text: &[u8], e: &serde_json::Error) -> u64 {
    let (line, column) = (e.line(), e.column());
    if line == 0 {
        return 0;
    }
    let mut offset = 0;
    for (i, l) in text.split(|&b| b == b'\n').enumerate() {
        if i + 1 == line {
            return (offset + column.saturating_sub(1).min(l.len())) as u64;
        }
        offset += l.len() + 1;
    }
    text.len() as u64
}

pub fn encode_params(p: &ParamVector) -> Result<Vec<u8>> {
    let mut out = header(PARAMS_MAGIC);
    put_json(&mut out, p.config())?;
    out.extend_from_slice(&(p.len() as u64).to_le_bytes());
    for t in p.theta() {
        out.extend_from_slice(&t.to_le_bytes());
    }
    Ok(out)
}

pub fn decode_params(bytes: &[u8], path: &Path) -> Result<ParamVector> {
    let mut r = Reader::new(bytes, path);
    r.magic(PARAMS_MAGIC)?;
    let config: ModelConfig = r.json("model config")?;
    let at = r.pos;
    let count = r.u64("parameter count")? as usize;
    if count != config.param_count() {
        return Err(r.fail(at, format!("{count} parameters, architecture needs {}", config.param_count())));
    }
    r.expect_payload(count, 8, "parameters")?;
    let theta = (0..count).map(|_| r.f64("parameter")).collect::<Result<Vec<_>>>()?;
    r.finish()?;
    ParamVector::from_parts(theta, config).map_err(|e| CliError::format(path, e.to_string()))
}

pub fn save_params(p: &ParamVector, path: &Path) -> Result<()> {
    write_atomic(path, &encode_params(p)?)
}

pub fn load_params(path: &Path) -> Result<ParamVector> {
    decode_params(&fs::read(path).at(path)?, path)
}

pub fn encode_attribution(am: &AttributionMatrix) -> Result<Vec<u8>> {
    let mut out = header(ATTRIB_MAGIC);
    put_json(&mut out, &am.config)?;
    put_u32(&mut out, am.target_count(), "target count")?;
    put_u32(&mut out, am.train_count(), "train count")?;
    for &t in &am.target_ids {
        put_u32(&mut out, t, "target id")?;
    }
    for &t in &am.train_ids {
        put_u32(&mut out, t, "train id")?;
    }
    out.reserve(8 * am.values.as_slice().len());
    for v in am.values.as_slice() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

pub fn decode_attribution(bytes: &[u8], path: &Path) -> Result<AttributionMatrix> {
    let mut r = Reader::new(bytes, path);
    r.magic(ATTRIB_MAGIC)?;
    let config: TrakConfig = r.json("trak config")?;
    let rows = r.u32("target count")? as usize;
    let cols = r.u32("train count")? as usize;
    r.expect_payload(rows + cols, 4, "ids")?;
    let target_ids = (0..rows).map(|_| r.u32("target id").map(|v| v as usize)).collect::<Result<Vec<_>>>()?;
    let train_ids = (0..cols).map(|_| r.u32("train id").map(|v| v as usize)).collect::<Result<Vec<_>>>()?;
    let cells = rows.checked_mul(cols).ok_or_else(|| r.fail(r.pos, "matrix size overflows"))?;
    r.expect_payload(cells, 8, "matrix")?;
    let values = (0..cells).map(|_| r.f64("matrix entry")).collect::<Result<Vec<_>>>()?;
    r.finish()?;
    let values = Matrix::from_vec(rows, cols, values).map_err(|e| CliError::format(path, e.to_string()))?;
    AttributionMatrix::new(values, target_ids, train_ids, config).map_err(|e| CliError::format(path, e.to_string()))
}

pub fn save_attribution(am: &AttributionMatrix, path: &Path) -> Result<()> {
    write_atomic(path, &encode_attribution(am)?)
}

pub fn load_attribution(path: &Path) -> Result<AttributionMatrix> {
    decode_attribution(&fs::read(path).at(path)?, path)
}

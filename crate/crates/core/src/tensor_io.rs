//! File formats: binary latent matrices, pair manifests, probability tables,
//! direction sets and JSON documents.
//!
//! Latent file layout (all integers and floats little-endian):
//!
//! ```text
//! "CDLC"  u16 version(=1)  u64 N  u64 d
//! N*d f32, row-major
//! u64 id_count(=N), then per id: u32 byte length + UTF-8 bytes
//! ```

use std::collections::{HashMap, HashSet};
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sphere_cluster::{DirectionProvenance, DirectionSet};
use crate::traversal::ProbTable;

pub const MAGIC: &[u8; 4] = b"CDLC";
pub const FORMAT_VERSION: u16 = 1;
/// Magic + version + N + d.
pub const HEADER_LEN: u64 = 4 + 2 + 8 + 8;

/// N×d matrix of latent row vectors, each row keyed by a unique id.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentMatrix {
    ids: Vec<String>,
    data: Vec<f32>,
    dim: usize,
}

impl LatentMatrix {
    pub fn new(ids: Vec<String>, data: Vec<f32>, dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidArgument(
                "latent dimension must be >= 1".into(),
            ));
        }
        let expected = ids.len() * dim;
        if data.len() != expected {
            return Err(Error::ShapeMismatch {
                expected: expected as u64,
                actual: data.len() as u64,
            });
        }
        let mut seen = HashSet::with_capacity(ids.len());
        for id in &ids {
            if !seen.insert(id.as_str()) {
                return Err(Error::DuplicateId(id.clone()));
            }
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFiniteValue { row: pos / dim });
        }
        Ok(Self { ids, data, dim })
    }

    /// Builds a matrix from rows, all of which must have length `dim`.
    pub fn from_rows(ids: Vec<String>, rows: &[Vec<f32>], dim: usize) -> Result<Self> {
        let mut data = Vec::with_capacity(rows.len() * dim);
        for row in rows {
            if row.len() != dim {
                return Err(Error::DimMismatch {
                    expected: dim,
                    actual: row.len(),
                });
            }
            data.extend_from_slice(row);
        }
        Self::new(ids, data, dim)
    }

    pub fn empty(dim: usize) -> Result<Self> {
        Self::new(Vec::new(), Vec::new(), dim)
    }

    pub fn n_rows(&self) -> usize {
        self.ids.len()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f32]> {
        self.data.chunks_exact(self.dim)
    }

    /// Maps ids to row indices.
    pub fn index(&self) -> HashMap<&str, usize> {
        self.ids
            .iter()
            .enumerate()
            .map(|(i, id)| (id.as_str(), i))
            .collect()
    }

    pub fn into_parts(self) -> (Vec<String>, Vec<f32>, usize) {
        (self.ids, self.data, self.dim)
    }

    /// Size in bytes of this matrix once serialized.
    pub fn encoded_len(&self) -> u64 {
        HEADER_LEN
            + 4 * self.data.len() as u64
            + 8
            + self.ids.iter().map(|id| 4 + id.len() as u64).sum::<u64>()
    }
}

pub fn encode_latent_matrix(m: &LatentMatrix) -> Vec<u8> {
    let mut out = Vec::with_capacity(m.encoded_len() as usize);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(m.n_rows() as u64).to_le_bytes());
    out.extend_from_slice(&(m.dim() as u64).to_le_bytes());
    for v in m.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out.extend_from_slice(&(m.n_rows() as u64).to_le_bytes());
    for id in m.ids() {
        out.extend_from_slice(&(id.len() as u32).to_le_bytes());
        out.extend_from_slice(id.as_bytes());
    }
    out
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: u64, expected_total: u64) -> Result<&'a [u8]> {
        let remaining = (self.buf.len() - self.pos) as u64;
        if n > remaining {
            return Err(Error::ShapeMismatch {
                expected: expected_total,
                actual: self.buf.len() as u64,
            });
        }
        let n = n as usize;
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, expected_total: u64) -> Result<u32> {
        let b = self.take(4, expected_total)?;
        Ok(u32::from_le_bytes(b.try_into().expect("4 bytes")))
    }

    fn u64(&mut self, expected_total: u64) -> Result<u64> {
        let b = self.take(8, expected_total)?;
        Ok(u64::from_le_bytes(b.try_into().expect("8 bytes")))
    }
}

/// Parses a latent file image. `path` is only used for error context.
pub fn decode_latent_matrix(bytes: &[u8], path: &Path) -> Result<LatentMatrix> {
    if bytes.len() < 4 || &bytes[..4] != MAGIC {
        return Err(Error::BadMagic {
            path: path.to_path_buf(),
        });
    }
    let mut cur = Cursor { buf: bytes, pos: 4 };
    let version = u16::from_le_bytes(cur.take(2, HEADER_LEN)?.try_into().expect("2 bytes"));
    if version != FORMAT_VERSION {
        return Err(Error::UnsupportedVersion(version));
    }
    let n = cur.u64(HEADER_LEN)?;
    let d = cur.u64(HEADER_LEN)?;
    if d == 0 {
        return Err(Error::Malformed {
            line: 0,
            message: "latent dimension is zero".into(),
        });
    }
    let payload = n
        .checked_mul(d)
        .and_then(|c| c.checked_mul(4))
        .ok_or_else(|| Error::Malformed {
            line: 0,
            message: format!("header shape {n}x{d} overflows"),
        })?;
    // Minimum size: header, payload, id count and one length prefix per id.
    let min_total = HEADER_LEN
        .saturating_add(payload)
        .saturating_add(8)
        .saturating_add(n.saturating_mul(4));
    let raw = cur.take(payload, min_total)?;
    let (n, d) = (n as usize, d as usize);
    let mut data = Vec::with_capacity(n * d);
    for (i, chunk) in raw.chunks_exact(4).enumerate() {
        let v = f32::from_le_bytes(chunk.try_into().expect("4 bytes"));
        if !v.is_finite() {
            return Err(Error::NonFiniteValue { row: i / d });
        }
        data.push(v);
    }
    let count = cur.u64(min_total)?;
    if count != n as u64 {
        return Err(Error::Malformed {
            line: 0,
            message: format!("id table holds {count} ids for {n} rows"),
        });
    }
    let mut ids = Vec::with_capacity(n);
    for _ in 0..n {
        let len = cur.u32(min_total)?;
        let raw = cur.take(len as u64, min_total + len as u64)?;
        let id = std::str::from_utf8(raw).map_err(|e| Error::Malformed {
            line: 0,
            message: format!("id is not UTF-8: {e}"),
        })?;
        ids.push(id.to_owned());
    }
    if cur.pos != bytes.len() {
        return Err(Error::Malformed {
            line: 0,
            message: format!("{} trailing bytes", bytes.len() - cur.pos),
        });
    }
    LatentMatrix::new(ids, data, d)
}

pub fn read_latent_matrix(path: impl AsRef<Path>) -> Result<LatentMatrix> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_latent_matrix(&bytes, path)
}

pub fn write_latent_matrix(m: &LatentMatrix, path: impl AsRef<Path>) -> Result<()> {
    write_bytes(path.as_ref(), &encode_latent_matrix(m))
}

/// Reads a small hand-written matrix: one row per line, `id<TAB>v1<TAB>v2...`.
/// Blank lines and lines starting with `#` are skipped.
pub fn parse_latent_text(text: &str) -> Result<LatentMatrix> {
    let mut ids = Vec::new();
    let mut data = Vec::new();
    let mut dim = None;
    for (lineno, line) in text.lines().enumerate() {
        let line_no = lineno + 1;
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let mut fields = line.split('\t');
        let id = fields.next().unwrap_or_default().to_owned();
        let mut row = Vec::new();
        for f in fields {
            let v: f32 = f.trim().parse().map_err(|_| Error::Malformed {
                line: line_no,
                message: format!("not a number: {f:?}"),
            })?;
            if !v.is_finite() {
                return Err(Error::NonFiniteValue { row: ids.len() });
            }
            row.push(v);
        }
        match dim {
            None if row.is_empty() => {
                return Err(Error::Malformed {
                    line: line_no,
                    message: "row has no values".into(),
                })
            }
            None => dim = Some(row.len()),
            Some(d) if d != row.len() => {
                return Err(Error::Malformed {
                    line: line_no,
                    message: format!("expected {d} values, found {}", row.len()),
                })
            }
            _ => {}
        }
        ids.push(id);
        data.extend(row);
    }
    let dim = dim.ok_or_else(|| Error::Malformed {
        line: 0,
        message: "no rows".into(),
    })?;
    LatentMatrix::new(ids, data, dim)
}

pub fn read_latent_text(path: impl AsRef<Path>) -> Result<LatentMatrix> {
    parse_latent_text(&read_text(path.as_ref())?)
}

/// One factual → counterfactual pairing.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairEntry {
    pub factual_id: String,
    pub counterfactual_id: String,
    pub predicted_class: String,
    pub target_class: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct PairManifest {
    pub entries: Vec<PairEntry>,
}

impl PairManifest {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Checks that every id resolves in its matrix.
    pub fn validate_against(
        &self,
        factual: &LatentMatrix,
        counterfactual: &LatentMatrix,
    ) -> Result<()> {
        let f = factual.index();
        let cf = counterfactual.index();
        for e in &self.entries {
            if !f.contains_key(e.factual_id.as_str()) {
                return Err(Error::UnresolvedId(e.factual_id.clone()));
            }
            if !cf.contains_key(e.counterfactual_id.as_str()) {
                return Err(Error::UnresolvedId(e.counterfactual_id.clone()));
            }
        }
        Ok(())
    }

    /// Entries for one target class, order preserved.
    pub fn for_target(&self, target: &str) -> PairManifest {
        PairManifest {
            entries: self
                .entries
                .iter()
                .filter(|e| e.target_class == target)
                .cloned()
                .collect(),
        }
    }

    /// Distinct target classes in sorted order.
    pub fn target_classes(&self) -> Vec<String> {
        let mut classes: Vec<String> = self
            .entries
            .iter()
            .map(|e| e.target_class.clone())
            .collect();
        classes.sort();
        classes.dedup();
        classes
    }

    pub fn to_text(&self) -> String {
        let mut s =
            String::from("# factual_id\tcounterfactual_id\tpredicted_class\ttarget_class\n");
        for e in &self.entries {
            s.push_str(&format!(
                "{}\t{}\t{}\t{}\n",
                e.factual_id, e.counterfactual_id, e.predicted_class, e.target_class
            ));
        }
        s
    }
}

pub fn parse_pair_manifest(text: &str) -> Result<PairManifest> {
    let mut entries = Vec::new();
    let mut seen: HashSet<(String, String)> = HashSet::new();
    for (lineno, line) in text.lines().enumerate() {
        let line_no = lineno + 1;
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() || line.trim_start().starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').map(str::trim).collect();
        if fields.len() != 4 || fields.iter().any(|f| f.is_empty()) {
            return Err(Error::Malformed {
                line: line_no,
                message: format!(
                    "expected 4 non-empty tab-separated fields, found {}",
                    fields.len()
                ),
            });
        }
        let entry = PairEntry {
            factual_id: fields[0].to_owned(),
            counterfactual_id: fields[1].to_owned(),
            predicted_class: fields[2].to_owned(),
            target_class: fields[3].to_owned(),
        };
        if entry.predicted_class == entry.target_class {
            return Err(Error::ClassEqualsTarget {
                line: line_no,
                class: entry.target_class,
            });
        }
        if !seen.insert((entry.factual_id.clone(), entry.counterfactual_id.clone())) {
            return Err(Error::DuplicatePair {
                line: line_no,
                factual: entry.factual_id,
                counterfactual: entry.counterfactual_id,
            });
        }
        entries.push(entry);
    }
    Ok(PairManifest { entries })
}

pub fn load_pair_manifest(path: impl AsRef<Path>) -> Result<PairManifest> {
    parse_pair_manifest(&read_text(path.as_ref())?)
}

pub fn write_pair_manifest(m: &PairManifest, path: impl AsRef<Path>) -> Result<()> {
    write_bytes(path.as_ref(), m.to_text().as_bytes())
}

/// Header: tab-separated class labels. Rows: `id<TAB>p_1<TAB>...<TAB>p_C`.
pub fn format_prob_table(t: &ProbTable) -> String {
    let mut s = t.classes().join("\t");
    s.push('\n');
    for (i, id) in t.ids().iter().enumerate() {
        s.push_str(id);
        for p in t.row(i) {
            s.push('\t');
            s.push_str(&p.to_string());
        }
        s.push('\n');
    }
    s
}

pub fn parse_prob_table(text: &str) -> Result<ProbTable> {
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim_end_matches('\r')))
        .filter(|(_, l)| !l.trim().is_empty() && !l.starts_with('#'));
    let (_, header) = lines.next().ok_or_else(|| Error::Malformed {
        line: 1,
        message: "missing class header".into(),
    })?;
    let classes: Vec<String> = header.split('\t').map(|s| s.trim().to_owned()).collect();
    let mut ids = Vec::new();
    let mut probs = Vec::new();
    for (line_no, line) in lines {
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != classes.len() + 1 {
            return Err(Error::Malformed {
                line: line_no,
                message: format!(
                    "expected {} fields, found {}",
                    classes.len() + 1,
                    fields.len()
                ),
            });
        }
        ids.push(fields[0].trim().to_owned());
        for f in &fields[1..] {
            let p: f64 = f.trim().parse().map_err(|_| Error::Malformed {
                line: line_no,
                message: format!("not a probability: {f:?}"),
            })?;
            probs.push(p);
        }
    }
    ProbTable::new(ids, classes, probs)
}

pub fn read_prob_table(path: impl AsRef<Path>) -> Result<ProbTable> {
    parse_prob_table(&read_text(path.as_ref())?)
}

pub fn write_prob_table(t: &ProbTable, path: impl AsRef<Path>) -> Result<()> {
    write_bytes(path.as_ref(), format_prob_table(t).as_bytes())
}

/// Sidecar path for a direction file: `dirs.cdlc` → `dirs.cdlc.json`.
pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

#[derive(Debug, Serialize, Deserialize)]
struct DirectionSidecar {
    class_label: String,
    k: usize,
    seed: u64,
    silhouette: Option<f64>,
    n_samples: usize,
}

/// Writes directions as a latent file (ids `c0..`) plus a JSON provenance sidecar.
pub fn write_direction_set(set: &DirectionSet, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let ids = (0..set.k()).map(|i| format!("c{i}")).collect();
    let data = set.directions().iter().map(|&v| v as f32).collect();
    write_latent_matrix(&LatentMatrix::new(ids, data, set.dim())?, path)?;
    let prov = set.provenance();
    let sidecar = DirectionSidecar {
        class_label: set.class_label().to_owned(),
        k: set.k(),
        seed: prov.seed,
        silhouette: prov.silhouette,
        n_samples: prov.n_samples,
    };
    write_json(&sidecar, &sidecar_path(path))
}

/// Reads a direction file; rows are renormalized in double precision.
/// A missing sidecar yields an unlabeled set with default provenance.
pub fn read_direction_set(path: impl AsRef<Path>) -> Result<DirectionSet> {
    let path = path.as_ref();
    let m = read_latent_matrix(path)?;
    let side = sidecar_path(path);
    let (label, prov) = if side.exists() {
        let s: DirectionSidecar = read_json(&side)?;
        if s.k != m.n_rows() {
            return Err(Error::KMismatch(format!(
                "sidecar declares k={} but file holds {} rows",
                s.k,
                m.n_rows()
            )));
        }
        (
            s.class_label,
            DirectionProvenance {
                seed: s.seed,
                silhouette: s.silhouette,
                n_samples: s.n_samples,
            },
        )
    } else {
        (String::new(), DirectionProvenance::default())
    };
    let dim = m.dim();
    let mut rows: Vec<f64> = m.data().iter().map(|&v| v as f64).collect();
    for row in rows.chunks_exact_mut(dim) {
        let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm <= 1e-12 {
            return Err(Error::DegenerateData("zero-norm direction in file".into()));
        }
        row.iter_mut().for_each(|v| *v /= norm);
    }
    DirectionSet::new(label, rows, dim, prov)
}

pub fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    let mut s = serde_json::to_string_pretty(value).map_err(|e| Error::Malformed {
        line: 0,
        message: format!("json encode: {e}"),
    })?;
    s.push('\n');
    write_bytes(path, s.as_bytes())
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = read_text(path)?;
    serde_json::from_str(&text).map_err(|e| Error::Malformed {
        line: e.line(),
        message: format!("{}: {e}", path.display()),
    })
}

pub fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    write_bytes(path, text.as_bytes())
}

pub fn create_dir_all(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    w.write_all(bytes).map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}

/// Exclusive marker on an output directory, removed on drop.
#[derive(Debug)]
pub struct DirLock {
    path: PathBuf,
}

impl DirLock {
    pub fn acquire(dir: &Path) -> Result<Self> {
        create_dir_all(dir)?;
        let path = dir.join(".lock");
        match fs::OpenOptions::new()
            .write(true)
            .create_new(true)
            .open(&path)
        {
            Ok(_) => Ok(Self { path }),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => {
                Err(Error::Locked(dir.to_path_buf()))
            }
            Err(e) => Err(Error::io(&path, e)),
        }
    }
}

impl Drop for DirLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}

//! Dataset files.
//!
//! ```text
//! "ICONDS" | version: u8 | '\n'
//! header: one line of JSON (FileHeader) | '\n'
//! for each operator:
//!   'O' | index: u32 | n_scalars: u32 | { name_len: u16, name, value: f64 }*
//!       | n_arrays: u32 | { name_len: u16, name, len: u32, f64 * len }*
//!   for each pair:
//!     'R' | operator: u32 | pair: u32 | n_functions: u32
//!         | { term: u32, [len: u32, f32 * len] x 3 (t, x, value) }*   condition terms then the QoI
//!         | source_len: u32 | f64 * source_len
//! sha256 of every preceding byte (32 bytes)
//! ```
//!
//! All integers and floats are little-endian.

use super::family::{FamilySchema, ProblemFamily};
use super::generate::{generate_family, FamilyData, ParamBounds};
use super::{CondQoIRecord, KeyValueFunction, OperatorSpec};
use crate::error::{IconError, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

pub const MAGIC: &[u8; 6] = b"ICONDS";
pub const FORMAT_VERSION: u8 = 1;
pub const MANIFEST_NAME: &str = "manifest.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FileHeader {
    pub format_version: u8,
    pub family: u8,
    pub schema: FamilySchema,
    pub operators: usize,
    pub pairs_per_operator: usize,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub family: u8,
    pub name: String,
    pub file: String,
    pub operators: usize,
    pub records: usize,
    pub sha256: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u8,
    pub seed: u64,
    pub operators: usize,
    pub pairs_per_operator: usize,
    pub files: Vec<ManifestEntry>,
}

/// Loaded families with random access by `(family, operator, pair)`.
#[derive(Clone, Debug, Default)]
pub struct Dataset {
    pub families: BTreeMap<ProblemFamily, FamilyData>,
}

impl Dataset {
    pub fn family(&self, family: ProblemFamily) -> Result<&FamilyData> {
        self.families
            .get(&family)
            .ok_or_else(|| IconError::InvalidInput(format!("family {family} is not in the dataset")))
    }

    pub fn record(&self, family: ProblemFamily, operator: usize, pair: usize) -> Result<&CondQoIRecord> {
        self.family(family)?.record(operator, pair)
    }

    pub fn insert(&mut self, data: FamilyData) {
        self.families.insert(data.family, data);
    }
}

fn put_u32(buf: &mut Vec<u8>, v: usize) {
    buf.extend_from_slice(&(v as u32).to_le_bytes());
}

fn put_name(buf: &mut Vec<u8>, name: &str) {
    buf.extend_from_slice(&(name.len() as u16).to_le_bytes());
    buf.extend_from_slice(name.as_bytes());
}

fn put_f64s(buf: &mut Vec<u8>, v: &[f64]) {
    put_u32(buf, v.len());
    for x in v {
        buf.extend_from_slice(&x.to_le_bytes());
    }
}

fn put_f32s(buf: &mut Vec<u8>, v: &[f32]) {
    put_u32(buf, v.len());
    for x in v {
        buf.extend_from_slice(&x.to_le_bytes());
    }
}

fn put_function(buf: &mut Vec<u8>, f: &KeyValueFunction<f32>) {
    buf.extend_from_slice(&f.term.to_le_bytes());
    put_f32s(buf, &f.t);
    put_f32s(buf, &f.x);
    put_f32s(buf, &f.values);
}

/// Serialise one family to bytes, checksum included.
pub fn encode_family(data: &FamilyData) -> Result<Vec<u8>> {
    let header = FileHeader {
        format_version: FORMAT_VERSION,
        family: data.family.id(),
        schema: data.family.schema(),
        operators: data.operators.len(),
        pairs_per_operator: data.pairs_per_operator,
        seed: data.seed,
    };
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.push(FORMAT_VERSION);
    buf.push(b'\n');
    buf.extend_from_slice(serde_json::to_string(&header)?.as_bytes());
    buf.push(b'\n');
    for (i, op) in data.operators.iter().enumerate() {
        buf.push(b'O');
        put_u32(&mut buf, i);
        put_u32(&mut buf, op.scalars.len());
        for (name, v) in &op.scalars {
            put_name(&mut buf, name);
            buf.extend_from_slice(&v.to_le_bytes());
        }
        put_u32(&mut buf, op.arrays.len());
        for (name, v) in &op.arrays {
            put_name(&mut buf, name);
            put_f64s(&mut buf, v);
        }
        for rec in data.operator_records(i) {
            buf.push(b'R');
            put_u32(&mut buf, rec.operator_index as usize);
            put_u32(&mut buf, rec.pair_index as usize);
            put_u32(&mut buf, rec.condition.len() + 1);
            for f in rec.condition.iter().chain(std::iter::once(&rec.qoi)) {
                put_function(&mut buf, f);
            }
            put_f64s(&mut buf, &rec.source);
        }
    }
    let digest: [u8; 32] = Sha256::digest(&buf).into();
    buf.extend_from_slice(&digest);
    Ok(buf)
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(IconError::Schema(format!("record data ends early at byte {}", self.pos)));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<usize> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()) as usize)
    }

    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()) as usize)
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn name(&mut self) -> Result<String> {
        let n = self.u16()?;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| IconError::Schema("non-UTF-8 parameter name".into()))
    }

    fn f64s(&mut self) -> Result<Vec<f64>> {
        let n = self.u32()?;
        self.take(8 * n).map(|b| b.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect())
    }

    fn f32s(&mut self) -> Result<Vec<f32>> {
        let n = self.u32()?;
        self.take(4 * n).map(|b| b.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect())
    }

    fn function(&mut self) -> Result<KeyValueFunction<f32>> {
        let term = self.u32()? as u32;
        let (t, x, values) = (self.f32s()?, self.f32s()?, self.f32s()?);
        if t.len() != values.len() || x.len() != values.len() {
            return Err(IconError::Schema("key and value blocks differ in length".into()));
        }
        Ok(KeyValueFunction { term, t, x, values })
    }
}

/// Parse and validate one family file.
pub fn decode_family(bytes: &[u8], what: &str) -> Result<FamilyData> {
    if bytes.len() < MAGIC.len() + 2 || &bytes[..MAGIC.len()] != MAGIC {
        return Err(IconError::Schema(format!("{what} is not a dataset file")));
    }
    let version = bytes[MAGIC.len()];
    if version != FORMAT_VERSION {
        return Err(IconError::VersionMismatch { found: version, expected: FORMAT_VERSION });
    }
    if bytes.len() < MAGIC.len() + 2 + 32 {
        return Err(IconError::Checksum(what.to_owned()));
    }
    let (body, digest) = bytes.split_at(bytes.len() - 32);
    if Sha256::digest(body).as_slice() != digest {
        return Err(IconError::Checksum(what.to_owned()));
    }
    let start = MAGIC.len() + 2;
    let line_end = body[start..]
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| IconError::Schema("missing header line".into()))?;
    let header: FileHeader = serde_json::from_slice(&body[start..start + line_end])
        .map_err(|e| IconError::Schema(format!("bad header: {e}")))?;
    let family = ProblemFamily::new(header.family).map_err(|e| IconError::Schema(e.to_string()))?;
    let schema = family.schema();
    if header.schema != schema {
        return Err(IconError::Schema(format!("header schema differs from family {family}")));
    }
    let (m, n) = (header.operators, header.pairs_per_operator);
    let mut r = Reader { buf: body, pos: start + line_end + 1 };
    let mut operators = Vec::with_capacity(m);
    let mut records = Vec::with_capacity(m * n);
    for i in 0..m {
        if r.u8()? != b'O' || r.u32()? != i {
            return Err(IconError::Schema(format!("operator frame {i} missing or out of order")));
        }
        let mut scalars = BTreeMap::new();
        for _ in 0..r.u32()? {
            let name = r.name()?;
            scalars.insert(name, r.f64()?);
        }
        let mut arrays = BTreeMap::new();
        for _ in 0..r.u32()? {
            let name = r.name()?;
            arrays.insert(name, r.f64s()?);
        }
        let expected: Vec<&str> = family.param_ranges().iter().map(|p| p.0).collect();
        if scalars.keys().map(String::as_str).ne(expected.iter().copied().collect::<std::collections::BTreeSet<_>>())
            || arrays.keys().map(String::as_str).ne(family.param_array())
        {
            return Err(IconError::Schema(format!("operator {i} parameters do not match family {family}")));
        }
        operators.push(OperatorSpec { family, scalars, arrays });
        for j in 0..n {
            if r.u8()? != b'R' || r.u32()? != i || r.u32()? != j {
                return Err(IconError::Schema(format!("record ({i}, {j}) missing or out of order")));
            }
            let count = r.u32()?;
            if count != schema.condition.len() + 1 {
                return Err(IconError::Schema(format!("record ({i}, {j}) has {count} functions")));
            }
            let mut funcs = (0..count).map(|_| r.function()).collect::<Result<Vec<_>>>()?;
            let qoi = funcs.pop().unwrap();
            let source = r.f64s()?;
            for (k, (f, s)) in
                funcs.iter().chain(std::iter::once(&qoi)).zip(schema.condition.iter().chain([&schema.qoi])).enumerate()
            {
                let term = if k < funcs.len() { k as u32 } else { 0 };
                if f.len() != s.len || f.term != term || !f.is_finite() {
                    return Err(IconError::Schema(format!("record ({i}, {j}) term '{}' violates the schema", s.name)));
                }
            }
            records.push(CondQoIRecord {
                operator_index: i as u32,
                pair_index: j as u32,
                condition: funcs,
                qoi,
                source,
            });
        }
    }
    if r.pos != body.len() {
        return Err(IconError::Schema(format!("{} trailing bytes", body.len() - r.pos)));
    }
    Ok(FamilyData { family, seed: header.seed, pairs_per_operator: n, operators, records })
}

pub fn write_family_file(data: &FamilyData, path: &Path) -> Result<String> {
    let bytes = encode_family(data)?;
    let tmp = path.with_extension("partial");
    std::fs::write(&tmp, &bytes)?;
    std::fs::rename(&tmp, path)?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

pub fn load_family_file(path: &Path) -> Result<FamilyData> {
    let bytes = std::fs::read(path)?;
    decode_family(&bytes, &path.display().to_string())
}

fn family_file_name(family: ProblemFamily) -> String {
    format!("family_{:02}_{}.icds", family.id(), family.name())
}

/// Generate every family into `out_dir` and write `manifest.json`. Files
/// written by a failed run are removed.
pub fn generate_dataset(families: &[ProblemFamily], m: usize, n: usize, seed: u64, out_dir: &Path) -> Result<Manifest> {
    std::fs::create_dir_all(out_dir)?;
    let mut written: Vec<PathBuf> = Vec::new();
    let result = (|| -> Result<Manifest> {
        let mut files = Vec::new();
        for &family in families {
            let data = generate_family(family, m, n, seed, &ParamBounds::new())?;
            let name = family_file_name(family);
            let path = out_dir.join(&name);
            written.push(path.clone());
            let sha256 = write_family_file(&data, &path)?;
            files.push(ManifestEntry {
                family: family.id(),
                name: family.name().into(),
                file: name,
                operators: m,
                records: m * n,
                sha256,
            });
        }
        let manifest = Manifest { format_version: FORMAT_VERSION, seed, operators: m, pairs_per_operator: n, files };
        let path = out_dir.join(MANIFEST_NAME);
        written.push(path.clone());
        std::fs::write(&path, serde_json::to_string_pretty(&manifest)? + "\n")?;
        Ok(manifest)
    })();
    if result.is_err() {
        for p in &written {
            let _ = std::fs::remove_file(p);
            let _ = std::fs::remove_file(p.with_extension("partial"));
        }
    }
    result
}

/// Accepts either a manifest file or the directory holding `manifest.json`.
pub fn read_manifest(path: &Path) -> Result<(Manifest, PathBuf)> {
    let file = if path.is_dir() { path.join(MANIFEST_NAME) } else { path.to_path_buf() };
    let manifest: Manifest = serde_json::from_slice(&std::fs::read(&file)?)
        .map_err(|e| IconError::Schema(format!("bad manifest {}: {e}", file.display())))?;
    if manifest.format_version != FORMAT_VERSION {
        return Err(IconError::VersionMismatch { found: manifest.format_version, expected: FORMAT_VERSION });
    }
    let dir = file.parent().map(Path::to_path_buf).unwrap_or_default();
    Ok((manifest, dir))
}

pub fn load_dataset(path: &Path) -> Result<Dataset> {
    let (manifest, dir) = read_manifest(path)?;
    let mut ds = Dataset::default();
    for entry in &manifest.files {
        let file = dir.join(&entry.file);
        let bytes = std::fs::read(&file)?;
        if hex::encode(Sha256::digest(&bytes)) != entry.sha256 {
            return Err(IconError::Checksum(file.display().to_string()));
        }
        let data = decode_family(&bytes, &file.display().to_string())?;
        if data.family.id() != entry.family || data.records.len() != entry.records {
            return Err(IconError::Schema(format!("{} disagrees with the manifest", file.display())));
        }
        ds.insert(data);
    }
    Ok(ds)
}

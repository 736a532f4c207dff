//! Frame-matrix file formats and dataset directories.
//!
//! * FSEQ (binary): `"FSEQ"`, `u32` version, `u64` T, `u64` P, `T·P` row-major
//!   `f64`, then a `u32` CRC32 of all preceding bytes. Little-endian.
//! * CSV: header `t,f0,…,f{P−1}`, one frame per row, values written with 17
//!   significant digits.
//! * Dataset directory: one file per recording plus `manifest.csv` with
//!   columns `recording_id,machine_id,label,file`.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{FrameSequence, Label};
use crate::error::{invalid, Error, Result};

pub const FSEQ_MAGIC: &[u8; 4] = b"FSEQ";
pub const FSEQ_VERSION: u32 = 1;
pub const MANIFEST: &str = "manifest.csv";

/// Encodes a raw `frames × dims` matrix; empty matrices are rejected.
pub fn encode_fseq_raw(frames: usize, dims: usize, values: &[f64]) -> Result<Vec<u8>> {
    if frames == 0 || dims == 0 {
        return Err(invalid(format!("refusing to save an empty {frames} × {dims} matrix")));
    }
    if values.len() != frames * dims {
        return Err(invalid(format!("{} values for a {frames} × {dims} matrix", values.len())));
    }
    let mut out = Vec::with_capacity(28 + values.len() * 8);
    out.extend_from_slice(FSEQ_MAGIC);
    out.extend_from_slice(&FSEQ_VERSION.to_le_bytes());
    out.extend_from_slice(&(frames as u64).to_le_bytes());
    out.extend_from_slice(&(dims as u64).to_le_bytes());
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    Ok(out)
}

pub fn encode_fseq(seq: &FrameSequence) -> Result<Vec<u8>> {
    encode_fseq_raw(seq.frames(), seq.dims(), seq.values())
}

/// Decodes to `(frames, dims, values)`.
pub fn decode_fseq(bytes: &[u8]) -> Result<(usize, usize, Vec<f64>)> {
    if bytes.len() < 28 || &bytes[..4] != FSEQ_MAGIC {
        return Err(Error::CorruptFile("missing FSEQ magic".into()));
    }
    let (body, trailer) = bytes.split_at(bytes.len() - 4);
    if crc32fast::hash(body) != u32::from_le_bytes(trailer.try_into().unwrap()) {
        return Err(Error::CorruptFile("FSEQ checksum mismatch".into()));
    }
    let version = u32::from_le_bytes(body[4..8].try_into().unwrap());
    if version != FSEQ_VERSION {
        return Err(Error::CorruptFile(format!("unsupported FSEQ version {version}")));
    }
    let frames = u64::from_le_bytes(body[8..16].try_into().unwrap()) as usize;
    let dims = u64::from_le_bytes(body[16..24].try_into().unwrap()) as usize;
    let payload = &body[24..];
    if frames.checked_mul(dims).and_then(|n| n.checked_mul(8)) != Some(payload.len()) {
        return Err(Error::CorruptFile(format!("payload size does not match {frames} × {dims}")));
    }
    let values = payload.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
    Ok((frames, dims, values))
}

pub fn write_csv<W: Write>(w: W, frames: usize, dims: usize, values: &[f64]) -> Result<()> {
    if frames == 0 || dims == 0 {
        return Err(invalid(format!("refusing to save an empty {frames} × {dims} matrix")));
    }
    if values.len() != frames * dims {
        return Err(invalid(format!("{} values for a {frames} × {dims} matrix", values.len())));
    }
    let mut wr = csv::Writer::from_writer(w);
    let mut header = vec!["t".to_string()];
    header.extend((0..dims).map(|d| format!("f{d}")));
    wr.write_record(&header)?;
    for (t, row) in values.chunks_exact(dims).enumerate() {
        let mut rec = vec![t.to_string()];
        rec.extend(row.iter().map(|v| format!("{v:.16e}")));
        wr.write_record(&rec)?;
    }
    wr.flush()?;
    Ok(())
}

/// Reads a CSV frame matrix. Errors name the 1-based data row (header excluded).
pub fn read_csv<R: Read>(r: R) -> Result<(usize, usize, Vec<f64>)> {
    let mut rd = csv::ReaderBuilder::new().has_headers(true).flexible(true).from_reader(r);
    let header = rd.headers()?.clone();
    if header.get(0) != Some("t") || header.len() < 2 {
        return Err(Error::Parse { row: 0, message: "header must be `t,f0,f1,...`".into() });
    }
    let dims = header.len() - 1;
    let mut values = Vec::new();
    let mut frames = 0;
    for (i, rec) in rd.records().enumerate() {
        let row = i + 1;
        let rec = rec.map_err(|e| Error::Parse { row, message: e.to_string() })?;
        if rec.len() != dims + 1 {
            return Err(Error::Parse { row, message: format!("expected {} fields, found {}", dims + 1, rec.len()) });
        }
        for (k, cell) in rec.iter().skip(1).enumerate() {
            let v: f64 = cell.trim().parse().map_err(|_| Error::Parse {
                row,
                message: format!("column f{k}: `{cell}` is not a number"),
            })?;
            values.push(v);
        }
        frames += 1;
    }
    if frames == 0 {
        return Err(Error::Parse { row: 1, message: "no frames".into() });
    }
    Ok((frames, dims, values))
}

/// On-disk frame format.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    #[default]
    Fseq,
    Csv,
}

impl Format {
    pub fn extension(self) -> &'static str {
        match self {
            Format::Fseq => "fseq",
            Format::Csv => "csv",
        }
    }

    fn from_path(path: &Path) -> Result<Self> {
        match path.extension().and_then(|e| e.to_str()) {
            Some("fseq") => Ok(Format::Fseq),
            Some("csv") => Ok(Format::Csv),
            _ => Err(invalid(format!("cannot infer frame format of {}", path.display()))),
        }
    }
}

pub fn save(seq: &FrameSequence, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    match Format::from_path(path)? {
        Format::Fseq => fs::write(path, encode_fseq(seq)?)?,
        Format::Csv => write_csv(fs::File::create(path)?, seq.frames(), seq.dims(), seq.values())?,
    }
    Ok(())
}

/// Loads a frame file; the recording id is the file stem, machine id empty, label unknown.
pub fn load(path: impl AsRef<Path>) -> Result<FrameSequence> {
    let path = path.as_ref();
    let (frames, dims, values) = match Format::from_path(path)? {
        Format::Fseq => decode_fseq(&fs::read(path)?)?,
        Format::Csv => read_csv(fs::File::open(path)?)?,
    };
    let id = path.file_stem().and_then(|s| s.to_str()).unwrap_or_default().to_string();
    FrameSequence::new(id, "", Label::Unknown, frames, dims, values)
}

#[derive(Debug, Serialize, Deserialize)]
struct ManifestRow {
    recording_id: String,
    machine_id: String,
    label: Label,
    file: String,
}

/// Writes one file per recording plus the manifest into `dir`.
pub fn save_dataset(dir: impl AsRef<Path>, data: &[FrameSequence], format: Format) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    let mut wr = csv::Writer::from_path(dir.join(MANIFEST))?;
    for seq in data {
        let file = format!("{}.{}", seq.recording_id, format.extension());
        save(seq, dir.join(&file))?;
        wr.serialize(ManifestRow {
            recording_id: seq.recording_id.clone(),
            machine_id: seq.machine_id.clone(),
            label: seq.label,
            file,
        })?;
    }
    wr.flush()?;
    Ok(())
}

/// Loads every recording listed in `dir/manifest.csv`, in manifest order.
pub fn load_dataset(dir: impl AsRef<Path>) -> Result<Vec<FrameSequence>> {
    let dir = dir.as_ref();
    let manifest = dir.join(MANIFEST);
    if !manifest.exists() {
        return Err(invalid(format!("{} not found", manifest.display())));
    }
    let mut rd = csv::Reader::from_path(&manifest)?;
    let mut out = Vec::new();
    for (i, row) in rd.deserialize::<ManifestRow>().enumerate() {
        let row = row.map_err(|e| Error::Parse { row: i + 1, message: e.to_string() })?;
        let mut seq = load(dir.join(&row.file))?;
        seq.recording_id = row.recording_id;
        seq.machine_id = row.machine_id;
        seq.label = row.label;
        out.push(seq);
    }
    Ok(out)
}

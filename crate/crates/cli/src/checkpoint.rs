//! Binary checkpoint container: magic "OVGT", format version, per-parameter
//! records (name, dtype, dims, raw little-endian values), and a trailing
//! CRC32 of all preceding bytes. Save -> load -> save is byte-identical.

use ovgt_core::dtype::{DType, Real};
use ovgt_core::tensor::Parameter;

use crate::CliError;

pub const MAGIC: &[u8; 4] = b"OVGT";
pub const VERSION: u16 = 1;

/// One decoded parameter record.
pub struct Record {
    pub name: String,
    pub dtype: DType,
    pub dims: Vec<u32>,
    /// Values widened to f64 for inspection; raw bytes round-trip losslessly
    /// through `values_raw`.
    pub values: Vec<f64>,
    pub values_raw: Vec<u8>,
}

impl Record {
    pub fn numel(&self) -> usize {
        self.dims.iter().map(|&d| d as usize).product()
    }
}

pub fn serialize<T: Real>(params: &[Parameter<T>]) -> Result<Vec<u8>, CliError> {
    let mut seen = std::collections::HashSet::new();
    for p in params {
        if !seen.insert(p.name().to_string()) {
            return Err(CliError::Checkpoint(format!(
                "duplicate parameter name `{}`",
                p.name()
            )));
        }
    }
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(params.len() as u32).to_le_bytes());
    for p in params {
        let name = p.name().as_bytes();
        if name.len() > u16::MAX as usize {
            return Err(CliError::Checkpoint(format!(
                "parameter name too long: {}",
                p.name()
            )));
        }
        out.extend_from_slice(&(name.len() as u16).to_le_bytes());
        out.extend_from_slice(name);
        out.push(T::DTYPE.code());
        let shape = p.shape();
        out.push(shape.len() as u8);
        for &d in shape {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        p.tensor().map_data(|data| {
            for &v in data {
                out.extend_from_slice(&v.to_le_bytes_vec());
            }
        });
    }
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    Ok(out)
}

pub fn save<T: Real>(params: &[Parameter<T>], path: &std::path::Path) -> Result<(), CliError> {
    std::fs::write(path, serialize(params)?)?;
    Ok(())
}

/// Decode and CRC-check a checkpoint image.
pub fn parse(bytes: &[u8]) -> Result<Vec<Record>, CliError> {
    if bytes.len() < 14 {
        return Err(CliError::Checkpoint("file too short".into()));
    }
    let (body, crc_bytes) = bytes.split_at(bytes.len() - 4);
    let stored = u32::from_le_bytes(crc_bytes.try_into().unwrap());
    let computed = crc32fast::hash(body);
    if stored != computed {
        return Err(CliError::Checkpoint(format!(
            "CRC mismatch: stored {stored:08x}, computed {computed:08x} (corrupted file)"
        )));
    }
    let mut pos = 0usize;
    let take = |pos: &mut usize, n: usize| -> Result<&[u8], CliError> {
        if *pos + n > body.len() {
            return Err(CliError::Checkpoint("truncated record".into()));
        }
        let s = &body[*pos..*pos + n];
        *pos += n;
        Ok(s)
    };
    if take(&mut pos, 4)? != MAGIC {
        return Err(CliError::Checkpoint("bad magic".into()));
    }
    let version = u16::from_le_bytes(take(&mut pos, 2)?.try_into().unwrap());
    if version != VERSION {
        return Err(CliError::Checkpoint(format!(
            "unsupported version {version}"
        )));
    }
    let count = u32::from_le_bytes(take(&mut pos, 4)?.try_into().unwrap()) as usize;
    let mut records = Vec::with_capacity(count);
    for _ in 0..count {
        let name_len = u16::from_le_bytes(take(&mut pos, 2)?.try_into().unwrap()) as usize;
        let name = String::from_utf8(take(&mut pos, name_len)?.to_vec())
            .map_err(|e| CliError::Checkpoint(format!("bad name: {e}")))?;
        let dtype = DType::from_code(take(&mut pos, 1)?[0])
            .ok_or_else(|| CliError::Checkpoint("unknown dtype code".into()))?;
        let rank = take(&mut pos, 1)?[0] as usize;
        let mut dims = Vec::with_capacity(rank);
        for _ in 0..rank {
            dims.push(u32::from_le_bytes(take(&mut pos, 4)?.try_into().unwrap()));
        }
        let numel: usize = dims.iter().map(|&d| d as usize).product();
        let raw = take(&mut pos, numel * dtype.byte_width())?.to_vec();
        let values = match dtype {
            DType::F32 => raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
                .collect(),
            DType::F64 => raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect(),
        };
        records.push(Record {
            name,
            dtype,
            dims,
            values,
            values_raw: raw,
        });
    }
    if pos != body.len() {
        return Err(CliError::Checkpoint(format!(
            "{} trailing bytes after last record",
            body.len() - pos
        )));
    }
    Ok(records)
}

/// Load a checkpoint into an existing parameter set. Names, shapes, and the
/// dtype must all match; values land bitwise.
pub fn load_into<T: Real>(params: &[Parameter<T>], bytes: &[u8]) -> Result<(), CliError> {
    let records = parse(bytes)?;
    let mut by_name: std::collections::HashMap<&str, &Record> =
        records.iter().map(|r| (r.name.as_str(), r)).collect();
    for p in params {
        let rec = by_name.remove(p.name()).ok_or_else(|| {
            CliError::Checkpoint(format!("parameter `{}` missing from checkpoint", p.name()))
        })?;
        if rec.dtype != T::DTYPE {
            return Err(CliError::Checkpoint(format!(
                "parameter `{}`: checkpoint dtype {:?} does not match model {:?}",
                p.name(),
                rec.dtype,
                T::DTYPE
            )));
        }
        let shape: Vec<usize> = rec.dims.iter().map(|&d| d as usize).collect();
        if shape != p.shape() {
            return Err(CliError::Checkpoint(format!(
                "parameter `{}`: checkpoint shape {:?} does not match model {:?}",
                p.name(),
                shape,
                p.shape()
            )));
        }
        let width = T::DTYPE.byte_width();
        p.tensor().with_data_mut(|data| {
            for (i, chunk) in rec.values_raw.chunks_exact(width).enumerate() {
                data[i] = match T::DTYPE {
                    DType::F32 => T::from_f64(f32::from_le_bytes(chunk.try_into().unwrap()) as f64),
                    DType::F64 => T::from_f64(f64::from_le_bytes(chunk.try_into().unwrap())),
                };
            }
        });
    }
    if let Some((name, _)) = by_name.into_iter().next() {
        return Err(CliError::Checkpoint(format!(
            "checkpoint contains parameter `{name}` unknown to the model"
        )));
    }
    Ok(())
}

/// Human-readable parameter table plus the deviation-from-zero norm of each
/// zero-initialized injection map (a drift diagnostic during training).
pub fn inspect(bytes: &[u8]) -> Result<String, CliError> {
    let records = parse(bytes)?;
    let mut out = String::new();
    let mut total = 0usize;
    out.push_str(&format!("{:<40} {:>14} {:>10}\n", "name", "shape", "count"));
    for r in &records {
        let shape = format!(
            "[{}]",
            r.dims
                .iter()
                .map(|d| d.to_string())
                .collect::<Vec<_>>()
                .join(",")
        );
        out.push_str(&format!("{:<40} {:>14} {:>10}\n", r.name, shape, r.numel()));
        total += r.numel();
    }
    out.push_str(&format!("total parameters: {total}\n"));
    out.push_str("zero-injection deviation norms:\n");
    let mut any = false;
    for r in &records {
        if r.name.contains(".zc") {
            let norm = r.values.iter().map(|v| v * v).sum::<f64>().sqrt();
            out.push_str(&format!("  {:<38} {:.6e}\n", r.name, norm));
            any = true;
        }
    }
    if !any {
        out.push_str("  (none present)\n");
    }
    Ok(out)
}

// Dataset file layout (bit-exact):
//   "SSLDMG01"                       8 bytes
//   record count                     u64 little-endian
//   per record: label byte (0, 1 or 255 = unlabeled), then 6*64*64 pixel
//   bytes, channel-major then row-major.

use std::io::{Read, Write};
use std::path::Path;

use super::{dequantize, quantize, Example, PIXELS};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"SSLDMG01";
const UNLABELED_BYTE: u8 = 255;
const HEADER: usize = 16;
const RECORD: usize = 1 + PIXELS;

pub fn write_to(examples: &[Example], out: &mut impl Write) -> Result<()> {
    out.write_all(MAGIC)?;
    out.write_all(&(examples.len() as u64).to_le_bytes())?;
    let mut rec = vec![0u8; RECORD];
    for ex in examples {
        rec[0] = ex.label.unwrap_or(UNLABELED_BYTE);
        for (dst, &v) in rec[1..].iter_mut().zip(ex.image.iter()) {
            *dst = quantize(v);
        }
        out.write_all(&rec)?;
    }
    Ok(())
}

pub fn save(examples: &[Example], path: &Path) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    write_to(examples, &mut f)?;
    f.flush()?;
    Ok(())
}

fn format_err(offset: usize, message: impl Into<String>) -> Error {
    Error::Format { offset: offset as u64, message: message.into() }
}

pub fn read_from(input: &mut impl Read) -> Result<Vec<Example>> {
    let mut bytes = Vec::new();
    input.read_to_end(&mut bytes)?;
    if bytes.len() < 8 {
        return Err(format_err(bytes.len(), "file shorter than magic"));
    }
    if &bytes[..8] != MAGIC {
        let msg = if &bytes[..6] == b"SSLDMG" { "unsupported format version" } else { "bad magic" };
        return Err(format_err(0, msg));
    }
    if bytes.len() < HEADER {
        return Err(format_err(bytes.len(), "truncated record count"));
    }
    let count = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes"));
    let mut examples = Vec::with_capacity((count as usize).min(bytes.len() / RECORD));
    let mut pos = HEADER;
    for i in 0..count {
        if pos + RECORD > bytes.len() {
            return Err(format_err(
                bytes.len(),
                format!("truncated: record {} of {count} is incomplete ({} of {RECORD} bytes)", i + 1, bytes.len() - pos),
            ));
        }
        let label = match bytes[pos] {
            0 => Some(0),
            1 => Some(1),
            UNLABELED_BYTE => None,
            other => return Err(format_err(pos, format!("record {}: invalid label byte {other}", i + 1))),
        };
        let image: Vec<f32> = bytes[pos + 1..pos + RECORD].iter().map(|&b| dequantize(b)).collect();
        examples.push(Example::new(image, label));
        pos += RECORD;
    }
    if pos != bytes.len() {
        return Err(format_err(pos, format!("{} trailing bytes after {count} records", bytes.len() - pos)));
    }
    Ok(examples)
}

pub fn load(path: &Path) -> Result<Vec<Example>> {
    let mut f = std::fs::File::open(path)?;
    read_from(&mut f)
}

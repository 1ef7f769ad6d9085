//! Checkpoint container (all integers little-endian):
//!
//! ```text
//! magic            8 bytes  "SSLCKPT1"
//! in_channels      u32
//! num_classes      u32
//! input_downsample u32
//! seed             u64
//! block count      u32, then one u32 width per block
//! tensor count     u32
//! per tensor:      u32 name length, UTF-8 name, u32 rank, u64 per dimension,
//!                  prod(dims) f32 values
//! ```
//!
//! Parameters are written first (model order), then BN running buffers.

use std::io::{Read, Write};
use std::path::Path;

use super::{Model, ModelConfig};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 8] = b"SSLCKPT1";

fn ck(msg: impl Into<String>) -> Error {
    Error::Checkpoint(msg.into())
}

pub fn write_to(model: &Model<f32>, out: &mut impl Write) -> Result<()> {
    let c = model.config();
    out.write_all(MAGIC)?;
    for v in [c.in_channels, c.num_classes, c.input_downsample] {
        out.write_all(&(v as u32).to_le_bytes())?;
    }
    out.write_all(&c.seed.to_le_bytes())?;
    out.write_all(&(c.block_filters.len() as u32).to_le_bytes())?;
    for &f in &c.block_filters {
        out.write_all(&(f as u32).to_le_bytes())?;
    }
    let all: Vec<_> = model.params().iter().chain(model.buffers()).collect();
    out.write_all(&(all.len() as u32).to_le_bytes())?;
    for t in all {
        out.write_all(&(t.name.len() as u32).to_le_bytes())?;
        out.write_all(t.name.as_bytes())?;
        out.write_all(&(t.tensor.shape().len() as u32).to_le_bytes())?;
        for &d in t.tensor.shape() {
            out.write_all(&(d as u64).to_le_bytes())?;
        }
        let mut buf = Vec::with_capacity(t.tensor.len() * 4);
        for v in t.tensor.data() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        out.write_all(&buf)?;
    }
    Ok(())
}

pub fn save(model: &Model<f32>, path: &Path) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    write_to(model, &mut f)?;
    f.flush()?;
    Ok(())
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(ck(format!("truncated at byte {}", self.pos)));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

pub fn read_from(input: &mut impl Read) -> Result<Model<f32>> {
    let mut bytes = Vec::new();
    input.read_to_end(&mut bytes)?;
    let mut r = Reader { bytes: &bytes, pos: 0 };
    if r.take(8)? != MAGIC {
        return Err(ck("bad magic"));
    }
    let in_channels = r.u32()? as usize;
    let num_classes = r.u32()? as usize;
    let input_downsample = r.u32()? as usize;
    let seed = r.u64()?;
    let nb = r.u32()? as usize;
    let block_filters = (0..nb).map(|_| r.u32().map(|v| v as usize)).collect::<Result<Vec<_>>>()?;
    let config = ModelConfig { in_channels, block_filters, num_classes, seed, input_downsample };
    let mut model = Model::<f32>::build(&config).map_err(|e| ck(e.to_string()))?;

    let count = r.u32()? as usize;
    let expected = model.params().len() + model.buffers().len();
    if count != expected {
        return Err(ck(format!("checkpoint holds {count} tensors, model layout needs {expected}")));
    }
    let n_params = model.params().len();
    for i in 0..count {
        let len = r.u32()? as usize;
        let name = std::str::from_utf8(r.take(len)?).map_err(|_| ck("tensor name is not UTF-8"))?.to_string();
        let rank = r.u32()? as usize;
        let shape = (0..rank).map(|_| r.u64().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
        let n: usize = shape.iter().product();
        let raw = r.take(n * 4)?;
        let data = raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes"))).collect();
        let slot = if i < n_params { &mut model.params_mut()[i] } else { &mut model.buffers_mut()[i - n_params] };
        if slot.name != name || slot.tensor.shape() != shape.as_slice() {
            return Err(ck(format!(
                "tensor {i}: found {name} {shape:?}, expected {} {:?}",
                slot.name,
                slot.tensor.shape()
            )));
        }
        slot.tensor = Tensor::new(&shape, data)?;
    }
    if r.pos != bytes.len() {
        return Err(ck(format!("{} trailing bytes", bytes.len() - r.pos)));
    }
    Ok(model)
}

pub fn load(path: &Path) -> Result<Model<f32>> {
    let mut f = std::fs::File::open(path)?;
    read_from(&mut f)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_preserves_everything() {
        let cfg = ModelConfig { block_filters: vec![2, 4], seed: 5, input_downsample: 2, ..ModelConfig::default() };
        let mut m = Model::<f32>::build(&cfg).unwrap();
        m.buffers_mut()[0].tensor.data_mut()[0] = 0.125;
        let mut bytes = Vec::new();
        write_to(&m, &mut bytes).unwrap();
        let back = read_from(&mut bytes.as_slice()).unwrap();
        assert_eq!(back, m);
    }

    #[test]
    fn rejects_corruption() {
        let m = Model::<f32>::build(&ModelConfig { block_filters: vec![2], ..ModelConfig::default() }).unwrap();
        let mut bytes = Vec::new();
        write_to(&m, &mut bytes).unwrap();
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(read_from(&mut bad.as_slice()).is_err());
        let short = &bytes[..bytes.len() - 3];
        assert!(read_from(&mut &short[..]).is_err());
    }
}

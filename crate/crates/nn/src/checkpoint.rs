//! Little-endian parameter file: magic, version, metadata JSON, then one
//! record per tensor (name, shape, f32 payload).

use std::path::Path;

use crate::tensor::{NnError, Params, Result, Tensor};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"RKW1";
pub const CHECKPOINT_VERSION: u32 = 1;

fn put_u32(out: &mut Vec<u8>, v: usize) {
    out.extend_from_slice(&(v as u32).to_le_bytes());
}

pub fn encode(params: &Params<f32>, metadata: &str) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + metadata.len() + params.count() * 4);
    out.extend_from_slice(CHECKPOINT_MAGIC);
    put_u32(&mut out, CHECKPOINT_VERSION as usize);
    put_u32(&mut out, metadata.len());
    out.extend_from_slice(metadata.as_bytes());
    put_u32(&mut out, params.tensors.len());
    for (name, t) in params.names.iter().zip(&params.tensors) {
        put_u32(&mut out, name.len());
        out.extend_from_slice(name.as_bytes());
        put_u32(&mut out, t.shape.len());
        for d in &t.shape {
            put_u32(&mut out, *d);
        }
        for v in &t.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|e| *e <= self.buf.len());
        let end = end.ok_or_else(|| NnError::Checkpoint(format!("truncated at byte {}", self.pos)))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()) as usize)
    }

    fn string(&mut self, n: usize) -> Result<String> {
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| NnError::Checkpoint("invalid utf-8".into()))
    }
}

/// Returns the parameters and the metadata string.
pub fn decode(buf: &[u8]) -> Result<(Params<f32>, String)> {
    let mut r = Reader { buf, pos: 0 };
    if r.take(4)? != CHECKPOINT_MAGIC {
        return Err(NnError::Checkpoint("bad magic".into()));
    }
    let version = r.u32()?;
    if version != CHECKPOINT_VERSION as usize {
        return Err(NnError::Checkpoint(format!("unsupported version {version}")));
    }
    let meta_len = r.u32()?;
    let metadata = r.string(meta_len)?;
    let count = r.u32()?;
    let mut params = Params::new();
    for _ in 0..count {
        let name_len = r.u32()?;
        let name = r.string(name_len)?;
        let ndim = r.u32()?;
        let shape = (0..ndim).map(|_| r.u32()).collect::<Result<Vec<_>>>()?;
        let n: usize = shape.iter().product();
        let bytes = r.take(n.checked_mul(4).ok_or_else(|| NnError::Checkpoint("tensor too large".into()))?)?;
        let data = bytes.chunks_exact(4).map(|b| f32::from_le_bytes(b.try_into().unwrap())).collect();
        params.add(name, Tensor::new(shape, data)?);
    }
    if r.pos != buf.len() {
        return Err(NnError::Checkpoint(format!("{} trailing bytes", buf.len() - r.pos)));
    }
    Ok((params, metadata))
}

pub fn write_checkpoint(path: &Path, params: &Params<f32>, metadata: &str) -> Result<()> {
    std::fs::write(path, encode(params, metadata)).map_err(|source| NnError::Io { path: path.into(), source })
}

pub fn read_checkpoint(path: &Path) -> Result<(Params<f32>, String)> {
    let buf = std::fs::read(path).map_err(|source| NnError::Io { path: path.into(), source })?;
    decode(&buf)
}

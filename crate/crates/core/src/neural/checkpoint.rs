//! Binary checkpoint format.
//!
//! ```text
//! "STRTCKPT"            8 bytes magic
//! 0x01                  format version
//! step_count            u64 LE
//! tensor_count          u32 LE   (3 × parameter tensors)
//! tensors...            parameters, then Adam m, then Adam v, each in
//!                       canonical layer order:
//!   rank                u32 LE
//!   dims                rank × u32 LE
//!   values              row-major f64 LE
//! ```
//!
//! The architecture is recovered from the tensor shapes.

use std::io::{Read, Write};
use std::path::Path;

use super::{Architecture, NetworkWeights, Tensor};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"STRTCKPT";
pub const VERSION: u8 = 1;

pub fn to_bytes(w: &NetworkWeights) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.push(VERSION);
    out.extend_from_slice(&w.step_count.to_le_bytes());
    let all: Vec<&Tensor> = w.params.iter().chain(&w.adam_m).chain(&w.adam_v).collect();
    out.extend_from_slice(&(all.len() as u32).to_le_bytes());
    for t in all {
        out.extend_from_slice(&(t.shape.len() as u32).to_le_bytes());
        for d in &t.shape {
            out.extend_from_slice(&(*d as u32).to_le_bytes());
        }
        for v in &t.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::Checkpoint(format!("truncated at byte {}", self.pos)));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

pub fn from_bytes(buf: &[u8]) -> Result<NetworkWeights> {
    let mut c = Cursor { buf, pos: 0 };
    if c.take(8)? != MAGIC {
        return Err(Error::Checkpoint("bad magic".into()));
    }
    let version = c.take(1)?[0];
    if version != VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {version}")));
    }
    let step_count = c.u64()?;
    let count = c.u32()? as usize;
    if count == 0 || !count.is_multiple_of(3) {
        return Err(Error::Checkpoint(format!("tensor count {count} is not 3 × params")));
    }
    let mut tensors = Vec::with_capacity(count);
    for _ in 0..count {
        let rank = c.u32()? as usize;
        if rank == 0 || rank > 2 {
            return Err(Error::Checkpoint(format!("unsupported rank {rank}")));
        }
        let shape: Vec<usize> = (0..rank).map(|_| c.u32().map(|d| d as usize)).collect::<Result<_>>()?;
        let n: usize = shape.iter().product();
        let data = (0..n).map(|_| c.f64()).collect::<Result<Vec<_>>>()?;
        tensors.push(Tensor { shape, data });
    }
    if c.pos != buf.len() {
        return Err(Error::Checkpoint("trailing bytes".into()));
    }
    let per = count / 3;
    let adam_v = tensors.split_off(2 * per);
    let adam_m = tensors.split_off(per);
    let params = tensors;
    let arch = infer_arch(&params)?;
    if arch.shapes() != params.iter().map(|t| t.shape.clone()).collect::<Vec<_>>()
        || adam_m.iter().zip(&params).any(|(m, p)| m.shape != p.shape)
        || adam_v.iter().zip(&params).any(|(v, p)| v.shape != p.shape)
    {
        return Err(Error::Checkpoint("tensor shapes do not form a network".into()));
    }
    Ok(NetworkWeights {
        arch,
        params,
        adam_m,
        adam_v,
        step_count,
    })
}

/// Encoder layers come in (matrix, bias) pairs, LSTM layers in
/// (w_ih, w_hh, bias) triples, and the head is the trailing pair.
fn infer_arch(params: &[Tensor]) -> Result<Architecture> {
    let bad = || Error::Checkpoint("cannot infer architecture".into());
    if params.len() < 2 {
        return Err(bad());
    }
    let head = &params[params.len() - 2];
    if head.shape.len() != 2 || head.shape[0] != 2 {
        return Err(bad());
    }
    let hidden = head.shape[1];
    // count trailing LSTM triples: a square [4h, h] matrix in the middle slot
    let body = &params[..params.len() - 2];
    let mut lstm_layers = 0;
    let mut end = body.len();
    while end >= 3 {
        let w_hh = &body[end - 2];
        if w_hh.shape == [4 * hidden, hidden] && body[end - 1].shape == [4 * hidden] {
            lstm_layers += 1;
            end -= 3;
        } else {
            break;
        }
    }
    let enc = &body[..end];
    if !enc.len().is_multiple_of(2) || lstm_layers == 0 {
        return Err(bad());
    }
    let input = match enc.first() {
        Some(w) => w.shape[1],
        None => body[0].shape[1],
    };
    let encoder = enc.chunks(2).map(|p| p[0].shape[0]).collect();
    Ok(Architecture {
        input,
        encoder,
        lstm_hidden: hidden,
        lstm_layers,
    })
}

pub fn save(w: &NetworkWeights, path: &Path) -> Result<()> {
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&to_bytes(w)).map_err(|e| Error::io(path, e))
}

pub fn load(path: &Path) -> Result<NetworkWeights> {
    let mut buf = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut buf))
        .map_err(|e| Error::io(path, e))?;
    from_bytes(&buf)
}

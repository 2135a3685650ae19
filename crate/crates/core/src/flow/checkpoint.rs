//! Binary model checkpoints.
//!
//! ```text
//! "CSFC"             4 bytes magic
//! version            u32 LE, = 1
//! config length      u32 LE
//! config             UTF-8 JSON of FlowConfig
//! per block, per scale:
//!     channels       u32 LE
//!     permutation    u32 LE each
//! parameter count    u64 LE
//! parameters         f64 LE, flat parameter order
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, ErrorKind, Read, Write};
use std::path::Path;

use super::config::FlowConfig;
use super::model::FlowModel;
use crate::error::{CsFlowError, Result};

pub const MAGIC: [u8; 4] = *b"CSFC";
pub const VERSION: u32 = 1;

pub fn write_checkpoint<W: Write>(model: &FlowModel, mut out: W) -> Result<()> {
    out.write_all(&MAGIC)?;
    out.write_all(&VERSION.to_le_bytes())?;
    let config = serde_json::to_vec(model.config())?;
    out.write_all(&(config.len() as u32).to_le_bytes())?;
    out.write_all(&config)?;
    let mut buf = Vec::new();
    for block in model.blocks() {
        for perm in block.permutations() {
            buf.extend_from_slice(&(perm.len() as u32).to_le_bytes());
            for &p in perm {
                buf.extend_from_slice(&(p as u32).to_le_bytes());
            }
        }
    }
    out.write_all(&buf)?;
    let params = model.parameters();
    out.write_all(&(params.len() as u64).to_le_bytes())?;
    let mut buf = Vec::with_capacity(params.len() * 8);
    for p in &params {
        buf.extend_from_slice(&p.to_le_bytes());
    }
    out.write_all(&buf)?;
    out.flush()?;
    Ok(())
}

pub fn read_checkpoint<R: Read>(mut input: R) -> Result<FlowModel> {
    let mut magic = [0u8; 4];
    read_exact(&mut input, &mut magic, "magic")?;
    if magic != MAGIC {
        return Err(CsFlowError::BadMagic { expected: MAGIC, found: magic });
    }
    let version = read_u32(&mut input, "version")?;
    if version != VERSION {
        return Err(CsFlowError::UnsupportedVersion(version));
    }
    let len = read_u32(&mut input, "config length")? as usize;
    let mut config = Vec::new();
    (&mut input).take(len as u64).read_to_end(&mut config)?;
    if config.len() != len {
        return Err(CsFlowError::Truncated("config".into()));
    }
    let config: FlowConfig = serde_json::from_slice(&config)?;
    let mut model = FlowModel::build(config)?;
    let num_scales = model.config().num_scales;
    for b in 0..model.blocks().len() {
        let mut perms = Vec::with_capacity(num_scales);
        for _ in 0..num_scales {
            let n = read_u32(&mut input, "permutation length")? as usize;
            if n != model.config().channels {
                return Err(CsFlowError::Invariant(format!(
                    "block {b} permutation has length {n}, expected {}",
                    model.config().channels
                )));
            }
            let perm =
                (0..n).map(|_| read_u32(&mut input, "permutation").map(|v| v as usize)).collect::<Result<Vec<_>>>()?;
            perms.push(perm);
        }
        model.blocks_mut()[b].set_permutations(perms)?;
    }
    let count = read_u64(&mut input, "parameter count")?;
    if count != model.num_parameters() as u64 {
        return Err(CsFlowError::ShapeMismatch(format!(
            "checkpoint holds {count} parameters, architecture needs {}",
            model.num_parameters()
        )));
    }
    let mut raw = vec![0u8; model.num_parameters() * 8];
    read_exact(&mut input, &mut raw, "parameters")?;
    let params: Vec<f64> = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
    model.set_parameters(&params)?;
    Ok(model)
}

pub fn save_checkpoint(model: &FlowModel, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| CsFlowError::io_at(path, e))?;
    write_checkpoint(model, BufWriter::new(file))
}

pub fn load_checkpoint(path: &Path) -> Result<FlowModel> {
    let file = File::open(path).map_err(|e| CsFlowError::io_at(path, e))?;
    read_checkpoint(BufReader::new(file))
}

fn read_exact<R: Read>(input: &mut R, buf: &mut [u8], what: &str) -> Result<()> {
    input.read_exact(buf).map_err(|e| match e.kind() {
        ErrorKind::UnexpectedEof => CsFlowError::Truncated(what.into()),
        _ => CsFlowError::Io(e),
    })
}

fn read_u32<R: Read>(input: &mut R, what: &str) -> Result<u32> {
    let mut b = [0u8; 4];
    read_exact(input, &mut b, what)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64<R: Read>(input: &mut R, what: &str) -> Result<u64> {
    let mut b = [0u8; 8];
    read_exact(input, &mut b, what)?;
    Ok(u64::from_le_bytes(b))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn model() -> FlowModel {
        let mut m = FlowModel::build(FlowConfig::new(2, 4).with_blocks(2).with_seed(5)).unwrap();
        m.blocks_mut()[0].set_gammas([0.3, -0.7]);
        m
    }

    #[test]
    fn roundtrip_is_bitwise() {
        let m = model();
        let mut bytes = Vec::new();
        write_checkpoint(&m, &mut bytes).unwrap();
        let back = read_checkpoint(bytes.as_slice()).unwrap();
        assert_eq!(back, m);
        let mut again = Vec::new();
        write_checkpoint(&back, &mut again).unwrap();
        assert_eq!(bytes, again);
    }

    #[test]
    fn corrupt_inputs() {
        let mut bytes = Vec::new();
        write_checkpoint(&model(), &mut bytes).unwrap();
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(read_checkpoint(bad.as_slice()), Err(CsFlowError::BadMagic { .. })));
        let mut bad = bytes.clone();
        bad[4] = 9;
        assert!(matches!(read_checkpoint(bad.as_slice()), Err(CsFlowError::UnsupportedVersion(9))));
        let cut = &bytes[..bytes.len() - 3];
        assert!(matches!(read_checkpoint(cut), Err(CsFlowError::Truncated(_))));
    }
}

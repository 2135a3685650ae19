//! CSFP: the per-sample feature pyramid file format.
//!
//! ```text
//! "CSFP"            4 bytes magic
//! version           u32 LE, = 1
//! num_scales        u32 LE
//! per scale, finest first:
//!     C, H, W       u32 LE each
//!     C*H*W values  f32 LE, channel-major then row-major
//! ```
//!
//! [`write_pyramid`]/[`read_pyramid`] enforce the full pyramid invariants.
//! [`write_maps`]/[`read_maps`] use the same layout for auxiliary outputs
//! (localization maps are single-channel) and only check structure and
//! finiteness.

use std::fs::File;
use std::io::{BufReader, BufWriter, ErrorKind, Read, Write};
use std::path::Path;

use super::{FeatureMap, FeaturePyramid};
use crate::error::{CsFlowError, Result};

pub const MAGIC: [u8; 4] = *b"CSFP";
pub const VERSION: u32 = 1;

/// Upper bound on values preallocated from an untrusted header.
const PREALLOC_LIMIT: usize = 1 << 20;

pub fn write_pyramid<W: Write>(pyramid: &FeaturePyramid, destination: W) -> Result<()> {
    pyramid.validate()?;
    write_maps_unchecked(pyramid.scales(), destination)
}

pub fn write_maps<W: Write>(maps: &[FeatureMap], destination: W) -> Result<()> {
    if maps.is_empty() {
        return Err(CsFlowError::Invariant("at least one map required".into()));
    }
    for (s, m) in maps.iter().enumerate() {
        if let Some(index) = m.first_non_finite() {
            return Err(CsFlowError::NonFiniteValue { scale: s, index });
        }
    }
    write_maps_unchecked(maps, destination)
}

fn write_maps_unchecked<W: Write>(maps: &[FeatureMap], mut out: W) -> Result<()> {
    out.write_all(&MAGIC)?;
    out.write_all(&VERSION.to_le_bytes())?;
    out.write_all(&u32_field(maps.len())?.to_le_bytes())?;
    for m in maps {
        for dim in [m.channels, m.height, m.width] {
            out.write_all(&u32_field(dim)?.to_le_bytes())?;
        }
        let mut buf = Vec::with_capacity(m.values.len() * 4);
        for v in &m.values {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        out.write_all(&buf)?;
    }
    out.flush()?;
    Ok(())
}

fn u32_field(v: usize) -> Result<u32> {
    u32::try_from(v).map_err(|_| CsFlowError::Invariant(format!("dimension {v} exceeds u32")))
}

/// Reads a pyramid and validates it. The sample id is left empty; callers
/// that know it (the manifest loader) set it afterwards.
pub fn read_pyramid<R: Read>(source: R) -> Result<FeaturePyramid> {
    let maps = read_maps(source)?;
    FeaturePyramid::new(String::new(), maps)
}

pub fn read_maps<R: Read>(mut source: R) -> Result<Vec<FeatureMap>> {
    let mut magic = [0u8; 4];
    read_exact(&mut source, &mut magic, "magic")?;
    if magic != MAGIC {
        return Err(CsFlowError::BadMagic { expected: MAGIC, found: magic });
    }
    let version = read_u32(&mut source, "version")?;
    if version != VERSION {
        return Err(CsFlowError::UnsupportedVersion(version));
    }
    let num_scales = read_u32(&mut source, "scale count")? as usize;
    if num_scales == 0 {
        return Err(CsFlowError::Invariant("file declares zero scales".into()));
    }
    let mut maps = Vec::with_capacity(num_scales.min(64));
    for s in 0..num_scales {
        let c = read_u32(&mut source, "scale header")? as usize;
        let h = read_u32(&mut source, "scale header")? as usize;
        let w = read_u32(&mut source, "scale header")? as usize;
        let n = c
            .checked_mul(h)
            .and_then(|v| v.checked_mul(w))
            .ok_or_else(|| CsFlowError::Invariant(format!("scale {s} size overflows")))?;
        let mut values = Vec::with_capacity(n.min(PREALLOC_LIMIT));
        let mut chunk = vec![0u8; 4 * n.clamp(1, 4096)];
        let mut remaining = n;
        while remaining > 0 {
            let take = remaining.min(chunk.len() / 4);
            let bytes = &mut chunk[..4 * take];
            read_exact(&mut source, bytes, &format!("payload of scale {s}"))?;
            values.extend(bytes.chunks_exact(4).map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]])));
            remaining -= take;
        }
        if let Some(index) = values.iter().position(|v| !v.is_finite()) {
            return Err(CsFlowError::NonFiniteValue { scale: s, index });
        }
        maps.push(FeatureMap::new(c, h, w, values)?);
    }
    Ok(maps)
}

fn read_exact<R: Read>(source: &mut R, buf: &mut [u8], what: &str) -> Result<()> {
    source.read_exact(buf).map_err(|e| {
        if e.kind() == ErrorKind::UnexpectedEof {
            CsFlowError::Truncated(format!("stream ended while reading {what}"))
        } else {
            CsFlowError::Io(e)
        }
    })
}

fn read_u32<R: Read>(source: &mut R, what: &str) -> Result<u32> {
    let mut b = [0u8; 4];
    read_exact(source, &mut b, what)?;
    Ok(u32::from_le_bytes(b))
}

/// Reads a pyramid file and names the sample after the file stem.
pub fn read_pyramid_file(path: impl AsRef<Path>) -> Result<FeaturePyramid> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| CsFlowError::io_at(path, e))?;
    let mut p = read_pyramid(BufReader::new(file))?;
    if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
        p.set_sample_id(stem);
    }
    Ok(p)
}

pub fn write_pyramid_file(pyramid: &FeaturePyramid, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| CsFlowError::io_at(path, e))?;
    write_pyramid(pyramid, BufWriter::new(file))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn tiny() -> FeaturePyramid {
        let m = FeatureMap::new(2, 1, 1, vec![0.5, -0.25]).unwrap();
        FeaturePyramid::new("", vec![m]).unwrap()
    }

    #[test]
    fn tiny_file_layout() {
        let mut buf = Vec::new();
        write_pyramid(&tiny(), &mut buf).unwrap();
        // 12 header + 12 scale header + 2 * 4 payload
        assert_eq!(buf.len(), 32);
        assert_eq!(&buf[..4], b"CSFP");
        assert_eq!(&buf[4..8], &1u32.to_le_bytes());
        assert_eq!(&buf[8..12], &1u32.to_le_bytes());
        assert_eq!(&buf[12..24], &[2, 0, 0, 0, 1, 0, 0, 0, 1, 0, 0, 0]);
        assert_eq!(&buf[24..28], &0.5f32.to_le_bytes());
        assert_eq!(&buf[28..32], &(-0.25f32).to_le_bytes());
        assert_eq!(read_pyramid(&buf[..]).unwrap(), tiny());
    }

    #[test]
    fn wrong_magic() {
        let mut buf = Vec::new();
        write_pyramid(&tiny(), &mut buf).unwrap();
        buf[0] = b'X';
        assert!(matches!(read_pyramid(&buf[..]), Err(CsFlowError::BadMagic { .. })));
    }

    #[test]
    fn wrong_version() {
        let mut buf = Vec::new();
        write_pyramid(&tiny(), &mut buf).unwrap();
        buf[4] = 2;
        assert!(matches!(read_pyramid(&buf[..]), Err(CsFlowError::UnsupportedVersion(2))));
    }

    #[test]
    fn truncated_payload() {
        let mut buf = Vec::new();
        write_pyramid(&tiny(), &mut buf).unwrap();
        buf.truncate(30);
        assert!(matches!(read_pyramid(&buf[..]), Err(CsFlowError::Truncated(_))));
        assert!(matches!(read_pyramid(&buf[..6]), Err(CsFlowError::Truncated(_))));
    }

    #[test]
    fn nan_payload_rejected() {
        let mut buf = Vec::new();
        write_pyramid(&tiny(), &mut buf).unwrap();
        buf[28..32].copy_from_slice(&f32::NAN.to_le_bytes());
        assert!(matches!(read_pyramid(&buf[..]), Err(CsFlowError::NonFiniteValue { scale: 0, index: 1 })));
    }

    #[test]
    fn huge_header_does_not_allocate() {
        let mut buf = Vec::new();
        buf.extend_from_slice(b"CSFP");
        buf.extend_from_slice(&1u32.to_le_bytes());
        buf.extend_from_slice(&1u32.to_le_bytes());
        for _ in 0..3 {
            buf.extend_from_slice(&60_000u32.to_le_bytes());
        }
        assert!(matches!(read_maps(&buf[..]), Err(CsFlowError::Truncated(_))));
    }

    #[test]
    fn odd_channels_rejected_on_write_but_raw_maps_allowed() {
        let m = FeatureMap::new(1, 2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let mut buf = Vec::new();
        write_maps(std::slice::from_ref(&m), &mut buf).unwrap();
        assert_eq!(read_maps(&buf[..]).unwrap(), vec![m]);
        assert!(matches!(read_pyramid(&buf[..]), Err(CsFlowError::Invariant(_))));
    }

    fn arb_pyramid() -> impl Strategy<Value = FeaturePyramid> {
        (1usize..4, 1usize..4, 1usize..3, 1usize..3).prop_flat_map(|(s, half_c, bh, bw)| {
            let c = 2 * half_c;
            let total: usize = (0..s).map(|i| c * (bh << (s - 1 - i)) * (bw << (s - 1 - i))).sum();
            proptest::collection::vec(proptest::num::f32::NORMAL | proptest::num::f32::ZERO, total).prop_map(
                move |vals| {
                    let mut off = 0;
                    let maps = (0..s)
                        .map(|i| {
                            let (h, w) = (bh << (s - 1 - i), bw << (s - 1 - i));
                            let n = c * h * w;
                            let m = FeatureMap::new(c, h, w, vals[off..off + n].to_vec()).unwrap();
                            off += n;
                            m
                        })
                        .collect();
                    FeaturePyramid::new("", maps).unwrap()
                },
            )
        })
    }

    proptest! {
        #[test]
        fn roundtrip_is_bit_exact(p in arb_pyramid()) {
            let mut buf = Vec::new();
            write_pyramid(&p, &mut buf).unwrap();
            let back = read_pyramid(&buf[..]).unwrap();
            for (a, b) in p.scales().iter().zip(back.scales()) {
                let ab: Vec<u32> = a.values().iter().map(|v| v.to_bits()).collect();
                let bb: Vec<u32> = b.values().iter().map(|v| v.to_bits()).collect();
                prop_assert_eq!(ab, bb);
            }
            prop_assert_eq!(p.signature(), back.signature());
        }
    }
}

//! `"FMAP"`, u32 version (1), u32 channels, u32 height, u32 width, then
//! `C*H*W` little-endian `f32` values in channel-major row-major order.

use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::FeatureMap;

pub const MAGIC: &[u8; 4] = b"FMAP";
pub const VERSION: u32 = 1;
pub const HEADER_LEN: usize = 20;

pub fn encode_fmap(map: &FeatureMap) -> Vec<u8> {
    let (c, h, w) = map.shape();
    let mut out = Vec::with_capacity(HEADER_LEN + 4 * map.data().len());
    out.extend_from_slice(MAGIC);
    for v in [VERSION, c as u32, h as u32, w as u32] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for v in map.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

fn u32_at(bytes: &[u8], offset: usize) -> u32 {
    u32::from_le_bytes(bytes[offset..offset + 4].try_into().unwrap())
}

/// Parses FMAP bytes; `path` is only used in diagnostics.
pub fn decode_fmap(bytes: &[u8], path: &Path) -> Result<FeatureMap> {
    let at = |offset: usize, msg: String| Error::format(path, format!("byte {offset}"), msg);
    if bytes.len() < HEADER_LEN {
        return Err(at(
            bytes.len(),
            format!("truncated header: {} of {HEADER_LEN} bytes", bytes.len()),
        ));
    }
    if &bytes[..4] != MAGIC {
        return Err(at(0, format!("bad magic {:?}", String::from_utf8_lossy(&bytes[..4]))));
    }
    let version = u32_at(bytes, 4);
    if version != VERSION {
        return Err(at(4, format!("unsupported version {version}")));
    }
    let dims = [u32_at(bytes, 8), u32_at(bytes, 12), u32_at(bytes, 16)];
    for (i, &d) in dims.iter().enumerate() {
        if d == 0 {
            return Err(at(8 + 4 * i, "zero dimension".to_string()));
        }
    }
    let [c, h, w] = dims.map(|d| d as usize);
    let expected = c
        .checked_mul(h)
        .and_then(|n| n.checked_mul(w))
        .and_then(|n| n.checked_mul(4))
        .and_then(|n| n.checked_add(HEADER_LEN))
        .ok_or_else(|| at(8, format!("dimensions {c}x{h}x{w} overflow")))?;
    if bytes.len() != expected {
        return Err(at(
            bytes.len().min(expected),
            format!("{c}x{h}x{w} raster needs {expected} bytes, file has {}", bytes.len()),
        ));
    }
    let data: Vec<f32> = bytes[HEADER_LEN..]
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
        .collect();
    if let Some(i) = data.iter().position(|v| !v.is_finite()) {
        return Err(at(HEADER_LEN + 4 * i, format!("non-finite value {}", data[i])));
    }
    FeatureMap::new(c, h, w, data)
}

pub fn read_fmap(path: impl AsRef<Path>) -> Result<FeatureMap> {
    let path = path.as_ref();
    decode_fmap(&super::read_bytes(path)?, path)
}

pub fn write_fmap(path: impl AsRef<Path>, map: &FeatureMap) -> Result<()> {
    super::write_bytes(path.as_ref(), &encode_fmap(map))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p() -> &'static Path {
        Path::new("t.fmap")
    }

    #[test]
    fn round_trip() {
        let m = FeatureMap::from_fn(2, 3, 4, |c, r, k| (c * 12 + r * 4 + k) as f32 * 0.1 - 0.7);
        let bytes = encode_fmap(&m);
        assert_eq!(bytes.len(), 20 + 96);
        assert_eq!(&bytes[..4], b"FMAP");
        assert_eq!(decode_fmap(&bytes, p()).unwrap(), m);
    }

    #[test]
    fn diagnostics_carry_offsets() {
        let m = FeatureMap::zeros(1, 2, 2);
        let mut bytes = encode_fmap(&m);
        let err = decode_fmap(&bytes[..10], p()).unwrap_err().to_string();
        assert!(err.contains("t.fmap") && err.contains("byte 10"), "{err}");

        bytes[4] = 2;
        assert!(decode_fmap(&bytes, p()).unwrap_err().to_string().contains("byte 4"));
        bytes[4] = 1;

        bytes[HEADER_LEN + 8..HEADER_LEN + 12].copy_from_slice(&f32::NAN.to_le_bytes());
        let err = decode_fmap(&bytes, p()).unwrap_err().to_string();
        assert!(err.contains("byte 28"), "{err}");

        let err = decode_fmap(&bytes[..bytes.len() - 1], p()).unwrap_err();
        assert!(!err.is_usage());
        assert!(decode_fmap(b"XMAP0000000000000000", p()).is_err());
    }
}

//! Model file: `GTNM`, format version (u16 LE), payload length (u64 LE), payload,
//! CRC-32 (u32 LE) of everything before it. All payload numbers are little-endian.

use std::path::Path;

use super::{NormalcyError, NormalcyModel, NormalcyParams};
use crate::domain::{GridConfig, Roi};

pub const MODEL_MAGIC: &[u8; 4] = b"GTNM";
pub const MODEL_VERSION: u16 = 1;
const HEADER_LEN: usize = 4 + 2 + 8;

fn put_f64(buf: &mut Vec<u8>, v: f64) {
    buf.extend_from_slice(&v.to_le_bytes());
}

/// Canonical byte image of a model.
pub fn encode_model(model: &NormalcyModel) -> Vec<u8> {
    let counts = model.counts();
    let shape = model.shape();
    let mut payload = Vec::with_capacity(8 * 12 + 8 + counts.len() * 4 + shape.cells);
    let r = &model.roi;
    for v in [r.lat_min, r.lat_max, r.lon_min, r.lon_max] {
        put_f64(&mut payload, v);
    }
    let g = &model.grid;
    for v in [g.cell_size_deg, g.sog_bin_knots, g.sog_cap_knots, g.cog_bin_deg] {
        put_f64(&mut payload, v);
    }
    let p = &model.params;
    put_f64(&mut payload, p.alpha);
    put_f64(&mut payload, p.q);
    payload.extend_from_slice(&p.min_cell_count.to_le_bytes());
    put_f64(&mut payload, p.epsilon_nfa);
    payload.extend_from_slice(&(shape.cells as u32).to_le_bytes());
    payload.extend_from_slice(&(shape.kinematic_bins() as u32).to_le_bytes());
    for c in counts {
        payload.extend_from_slice(&c.to_le_bytes());
    }

    let mut out = Vec::with_capacity(HEADER_LEN + payload.len() + 4);
    out.extend_from_slice(MODEL_MAGIC);
    out.extend_from_slice(&MODEL_VERSION.to_le_bytes());
    out.extend_from_slice(&(payload.len() as u64).to_le_bytes());
    out.extend_from_slice(&payload);
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    out
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl Cursor<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8], NormalcyError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or(NormalcyError::CorruptChecksum)?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn f64(&mut self) -> Result<f64, NormalcyError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn u64(&mut self) -> Result<u64, NormalcyError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn u32(&mut self) -> Result<u32, NormalcyError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
}

pub fn decode_model(bytes: &[u8]) -> Result<NormalcyModel, NormalcyError> {
    if bytes.len() < 6 {
        return Err(NormalcyError::CorruptChecksum);
    }
    if &bytes[..4] != MODEL_MAGIC {
        return Err(NormalcyError::BadMagic);
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != MODEL_VERSION {
        return Err(NormalcyError::VersionMismatch {
            found: version,
            expected: MODEL_VERSION,
        });
    }
    if bytes.len() < HEADER_LEN + 4 {
        return Err(NormalcyError::CorruptChecksum);
    }
    let len = u64::from_le_bytes(bytes[6..14].try_into().expect("8 bytes"));
    let body_end = (HEADER_LEN as u64)
        .checked_add(len)
        .filter(|&e| e.checked_add(4) == Some(bytes.len() as u64))
        .ok_or(NormalcyError::CorruptChecksum)? as usize;
    let stored = u32::from_le_bytes(bytes[body_end..].try_into().expect("4 bytes"));
    if crc32fast::hash(&bytes[..body_end]) != stored {
        return Err(NormalcyError::CorruptChecksum);
    }

    let mut c = Cursor {
        buf: &bytes[HEADER_LEN..body_end],
        pos: 0,
    };
    let roi = Roi {
        lat_min: c.f64()?,
        lat_max: c.f64()?,
        lon_min: c.f64()?,
        lon_max: c.f64()?,
    };
    let grid = GridConfig {
        cell_size_deg: c.f64()?,
        sog_bin_knots: c.f64()?,
        sog_cap_knots: c.f64()?,
        cog_bin_deg: c.f64()?,
    };
    let params = NormalcyParams {
        alpha: c.f64()?,
        q: c.f64()?,
        min_cell_count: c.u64()?,
        epsilon_nfa: c.f64()?,
    };
    let cells = c.u32()? as usize;
    let bins = c.u32()? as usize;
    let shape = grid.shape(&roi)?;
    if cells != shape.cells || bins != shape.kinematic_bins() {
        return Err(NormalcyError::Shape {
            expected: shape.cells * shape.kinematic_bins(),
            found: cells * bins,
        });
    }
    let raw = c.take(cells * bins * 4)?;
    let counts: Vec<u32> = raw
        .chunks_exact(4)
        .map(|b| u32::from_le_bytes(b.try_into().expect("4 bytes")))
        .collect();
    if c.pos != c.buf.len() {
        return Err(NormalcyError::CorruptChecksum);
    }
    NormalcyModel::from_counts(roi, grid, params, counts)
}

pub fn save_model(model: &NormalcyModel, path: impl AsRef<Path>) -> Result<(), NormalcyError> {
    std::fs::write(path, encode_model(model))?;
    Ok(())
}

pub fn load_model(path: impl AsRef<Path>) -> Result<NormalcyModel, NormalcyError> {
    decode_model(&std::fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::AisMessage;

    fn fitted() -> NormalcyModel {
        let roi = Roi::new(48.0, 49.0, -6.0, -5.0).unwrap();
        let msgs: Vec<_> = (0..400)
            .map(|i| {
                AisMessage::new(
                    1,
                    i,
                    48.0 + (i % 37) as f64 / 40.0,
                    -6.0 + (i % 23) as f64 / 25.0,
                    (i % 17) as f64,
                    (i * 7 % 360) as f64,
                )
                .unwrap()
            })
            .collect();
        let params = NormalcyParams {
            min_cell_count: 3,
            ..NormalcyParams::default()
        };
        NormalcyModel::fit_messages(&msgs, roi, GridConfig::default(), params).unwrap()
    }

    #[test]
    fn round_trip_file() {
        let m = fitted();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.gtnm");
        save_model(&m, &path).unwrap();
        let back = load_model(&path).unwrap();
        assert_eq!(back, m);
        assert_eq!(back.thresholds(), m.thresholds());
        assert_eq!(encode_model(&back), std::fs::read(&path).unwrap());
    }

    #[test]
    fn truncated_is_corrupt() {
        let bytes = encode_model(&fitted());
        for cut in [3, 10, HEADER_LEN + 5, bytes.len() - 1] {
            assert!(
                matches!(decode_model(&bytes[..cut]), Err(NormalcyError::CorruptChecksum)),
                "cut {cut}"
            );
        }
    }

    #[test]
    fn flipped_payload_bit_is_corrupt() {
        let mut bytes = encode_model(&fitted());
        let i = HEADER_LEN + 100;
        bytes[i] ^= 0x10;
        assert!(matches!(decode_model(&bytes), Err(NormalcyError::CorruptChecksum)));
    }

    #[test]
    fn bumped_version() {
        let mut bytes = encode_model(&fitted());
        bytes[4] += 1;
        assert!(matches!(
            decode_model(&bytes),
            Err(NormalcyError::VersionMismatch { found: 2, expected: 1 })
        ));
        bytes[0] = b'X';
        assert!(matches!(decode_model(&bytes), Err(NormalcyError::BadMagic)));
    }

    #[test]
    fn missing_file_is_io() {
        assert!(matches!(
            load_model("/nonexistent/model.gtnm"),
            Err(NormalcyError::Io(_))
        ));
    }
}

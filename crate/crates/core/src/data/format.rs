//! Binary `.whar` datasets: a little-endian header
//! `"WHAR" version samples N M L C` (all `u32` after the magic), the `f32`
//! windows, then one `u32` label per sample.

use std::fs;
use std::path::Path;

use super::Dataset;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"WHAR";
pub const VERSION: u32 = 1;
const HEADER_LEN: usize = 4 + 6 * 4;

pub fn encode(d: &Dataset) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + d.x.len() * 4 + d.labels.len() * 4);
    out.extend_from_slice(MAGIC);
    for v in [VERSION, d.len() as u32, d.sensors as u32, d.variables as u32, d.length as u32, d.classes as u32] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for v in &d.x {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for v in &d.labels {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

fn u32_at(bytes: &[u8], offset: usize) -> u32 {
    u32::from_le_bytes(bytes[offset..offset + 4].try_into().expect("4 bytes"))
}

pub fn decode(bytes: &[u8]) -> Result<Dataset> {
    let fail = |offset: usize, msg: String| Error::Format {
        offset: offset as u64,
        msg,
    };
    if bytes.len() < 4 || &bytes[..4] != MAGIC {
        return Err(fail(0, "bad magic, expected \"WHAR\"".into()));
    }
    if bytes.len() < HEADER_LEN {
        return Err(fail(
            bytes.len(),
            format!("truncated header: expected {HEADER_LEN} bytes, found {}", bytes.len()),
        ));
    }
    let version = u32_at(bytes, 4);
    if version != VERSION {
        return Err(fail(4, format!("unsupported version {version}, expected {VERSION}")));
    }
    let [samples, n, m, l, c] = [8, 12, 16, 20, 24].map(|o| u32_at(bytes, o) as usize);
    if n == 0 || m == 0 || l == 0 || c == 0 {
        return Err(fail(12, format!("zero extent in header (N={n}, M={m}, L={l}, C={c})")));
    }
    let values = samples
        .checked_mul(n * m * l)
        .ok_or_else(|| fail(8, "sample count overflows".into()))?;
    let expected = HEADER_LEN + values * 4 + samples * 4;
    if bytes.len() != expected {
        return Err(fail(
            bytes.len().min(expected),
            format!("expected {expected} bytes in total, found {}", bytes.len()),
        ));
    }
    let x = bytes[HEADER_LEN..HEADER_LEN + values * 4]
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes")))
        .collect();
    let label_start = HEADER_LEN + values * 4;
    let mut labels = Vec::with_capacity(samples);
    for i in 0..samples {
        let off = label_start + 4 * i;
        let y = u32_at(bytes, off);
        if y as usize >= c {
            return Err(fail(off, format!("label {y} out of range for {c} classes")));
        }
        labels.push(y);
    }
    Ok(Dataset {
        sensors: n,
        variables: m,
        length: l,
        classes: c,
        x,
        labels,
    })
}

pub fn write_dataset(path: &Path, d: &Dataset) -> Result<()> {
    fs::write(path, encode(d))?;
    Ok(())
}

pub fn read_dataset(path: &Path) -> Result<Dataset> {
    decode(&fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Dataset {
        let mut d = Dataset::new(2, 1, 3, 3);
        d.push(&[0.5, -1.0, 2.0, f32::MIN_POSITIVE, -0.0, 7.0], 2).unwrap();
        d.push(&[1.0; 6], 0).unwrap();
        d
    }

    #[test]
    fn round_trip_bit_identical() {
        let bytes = encode(&sample());
        let back = decode(&bytes).unwrap();
        assert_eq!(encode(&back), bytes);
    }

    #[test]
    fn truncation_reports_lengths() {
        let bytes = encode(&sample());
        let err = decode(&bytes[..bytes.len() - 3]).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains(&format!("expected {} bytes", bytes.len())), "{msg}");
        assert!(msg.contains(&format!("found {}", bytes.len() - 3)), "{msg}");
    }

    #[test]
    fn wrong_magic_rejected_first() {
        let mut bytes = encode(&sample());
        bytes[0] = b'X';
        bytes.truncate(10);
        match decode(&bytes).unwrap_err() {
            Error::Format { offset, msg } => {
                assert_eq!(offset, 0);
                assert!(msg.contains("magic"));
            }
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn wrong_version_rejected() {
        let mut bytes = encode(&sample());
        bytes[4] = 9;
        assert!(matches!(decode(&bytes), Err(Error::Format { offset: 4, .. })));
    }
}

//! Minimal `.npy` (version 1.0) reader/writer for little-endian f64 arrays.
//!
//! Adversarial images are stored at full f64 precision: rounding through f32
//! or u8 would silently spend (or refund) perturbation budget. Only the tiny
//! subset of the format we produce is accepted back.

use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use ndarray::{Array3, ArrayView3};

use crate::error::{LabError, Result};

const MAGIC: &[u8; 6] = b"\x93NUMPY";

fn header_for(shape: &[usize]) -> Vec<u8> {
    let dims: Vec<String> = shape.iter().map(|d| d.to_string()).collect();
    // Trailing comma keeps 1-tuples valid; harmless for longer shapes.
    let dict = format!(
        "{{'descr': '<f8', 'fortran_order': False, 'shape': ({},), }}",
        dims.join(", ")
    );
    let mut header = dict.into_bytes();
    // Pad with spaces so that magic(6) + version(2) + len(2) + header is a
    // multiple of 64, ending in newline.
    let unpadded = 10 + header.len() + 1;
    let pad = (64 - unpadded % 64) % 64;
    header.extend(std::iter::repeat(b' ').take(pad));
    header.push(b'\n');

    let mut out = Vec::with_capacity(10 + header.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&[1, 0]);
    out.extend_from_slice(&(header.len() as u16).to_le_bytes());
    out.extend_from_slice(&header);
    out
}

/// Write a 3-D f64 array in C order.
pub fn write_array3(path: &Path, arr: ArrayView3<'_, f64>) -> Result<()> {
    let mut file = File::create(path)?;
    file.write_all(&header_for(&[arr.dim().0, arr.dim().1, arr.dim().2]))?;
    let mut buf = Vec::with_capacity(arr.len() * 8);
    for &v in arr.iter() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    file.write_all(&buf)?;
    Ok(())
}

fn parse_shape(path: &Path, header: &str) -> Result<Vec<usize>> {
    let bad = |msg: &str| LabError::Format(format!("{}: {}", path.display(), msg));
    if !header.contains("'<f8'") {
        return Err(bad("expected little-endian f64 payload"));
    }
    if !header.contains("'fortran_order': False") {
        return Err(bad("expected C-order payload"));
    }
    let start = header.find("'shape':").ok_or_else(|| bad("missing shape"))?;
    let rest = &header[start..];
    let open = rest.find('(').ok_or_else(|| bad("malformed shape"))?;
    let close = rest.find(')').ok_or_else(|| bad("malformed shape"))?;
    rest[open + 1..close]
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| {
            s.parse::<usize>()
                .map_err(|_| bad(&format!("bad dimension {s:?}")))
        })
        .collect()
}

/// Read back a 3-D f64 array written by [`write_array3`].
pub fn read_array3(path: &Path) -> Result<Array3<f64>> {
    let mut file = File::open(path).map_err(|_| LabError::MissingArtifact {
        path: path.to_path_buf(),
        hint: "expected an .npy file produced by an attack run".into(),
    })?;
    let mut prefix = [0u8; 10];
    file.read_exact(&mut prefix)?;
    if &prefix[..6] != MAGIC || prefix[6] != 1 {
        return Err(LabError::Format(format!(
            "{}: not an npy v1.0 file",
            path.display()
        )));
    }
    let header_len = u16::from_le_bytes([prefix[8], prefix[9]]) as usize;
    let mut header = vec![0u8; header_len];
    file.read_exact(&mut header)?;
    let header = String::from_utf8_lossy(&header).into_owned();
    let shape = parse_shape(path, &header)?;
    if shape.len() != 3 {
        return Err(LabError::ShapeMismatch {
            expected: "3-D array".into(),
            got: format!("{}-D array", shape.len()),
        });
    }
    let count: usize = shape.iter().product();
    let mut payload = Vec::new();
    file.read_to_end(&mut payload)?;
    if payload.len() != count * 8 {
        return Err(LabError::Format(format!(
            "{}: payload holds {} bytes, shape needs {}",
            path.display(),
            payload.len(),
            count * 8
        )));
    }
    let values: Vec<f64> = payload
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Array3::from_shape_vec((shape[0], shape[1], shape[2]), values)
        .map_err(|e| LabError::ShapeMismatch {
            expected: format!("{shape:?}"),
            got: e.to_string(),
        })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array3;

    #[test]
    fn round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.npy");
        let arr = Array3::from_shape_fn((3, 4, 5), |(c, h, w)| {
            (c as f64 + 0.25) * (h as f64 - 1.5) / (w as f64 + 3.0)
        });
        write_array3(&path, arr.view()).unwrap();
        let back = read_array3(&path).unwrap();
        assert_eq!(arr, back);
        // Bit-level check, not just value equality.
        for (a, b) in arr.iter().zip(back.iter()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn header_is_64_byte_aligned() {
        let h = header_for(&[3, 32, 32]);
        assert_eq!(h.len() % 64, 0);
        assert_eq!(*h.last().unwrap(), b'\n');
    }

    #[test]
    fn rejects_truncated_payload() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.npy");
        let arr = Array3::<f64>::zeros((2, 2, 2));
        write_array3(&path, arr.view()).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 8]).unwrap();
        assert!(read_array3(&path).is_err());
    }
}

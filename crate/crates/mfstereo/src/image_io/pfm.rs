//! Grayscale PFM: magic `Pf`, ASCII width/height, a scale whose sign gives
//! the payload endianness (negative = little-endian), then width*height
//! 32-bit floats stored bottom row first. Round-trips are bit-exact for
//! finite values and the +inf invalid marker.

use std::path::Path;

use crate::error::{Error, Result};
use crate::image_io::DisparityMap;

fn format_err(context: &str, reason: impl Into<String>) -> Error {
    Error::Format { context: context.to_string(), reason: reason.into() }
}

/// Serialize a map to PFM bytes. The written scale is `-|scale|`: payload
/// is always little-endian. NaN never occurs (map invariant); +inf is
/// stored as the IEEE infinity bit pattern, which Middlebury readers
/// interpret as "unknown".
pub fn encode_pfm(map: &DisparityMap, scale: f32) -> Result<Vec<u8>> {
    if !scale.is_finite() || scale == 0.0 {
        return Err(Error::InvalidParam(format!("pfm scale must be finite non-zero, got {scale}")));
    }
    let header = format!("Pf\n{} {}\n{}\n", map.width(), map.height(), -scale.abs());
    let mut out = Vec::with_capacity(header.len() + map.data().len() * 4);
    out.extend_from_slice(header.as_bytes());
    // bottom row first
    for y in (0..map.height()).rev() {
        for x in 0..map.width() {
            out.extend_from_slice(&map.at(x, y).to_le_bytes());
        }
    }
    Ok(out)
}

/// Parse PFM bytes into a map. Rejects color PFM (`PF`), bad headers,
/// payload size mismatches and NaN samples.
pub fn decode_pfm(bytes: &[u8]) -> Result<DisparityMap> {
    decode_pfm_inner(bytes, "pfm")
}

fn decode_pfm_inner(bytes: &[u8], context: &str) -> Result<DisparityMap> {
    // Header tokens are whitespace-separated; exactly one whitespace byte
    // separates the scale from the binary payload.
    let mut pos = 0usize;
    let next_token = |pos: &mut usize| -> Result<String> {
        while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
            *pos += 1;
        }
        let start = *pos;
        while *pos < bytes.len() && !bytes[*pos].is_ascii_whitespace() {
            *pos += 1;
        }
        if start == *pos {
            return Err(format_err(context, "truncated header"));
        }
        let tok = std::str::from_utf8(&bytes[start..*pos])
            .map_err(|_| format_err(context, "non-ascii header"))?
            .to_string();
        if *pos < bytes.len() {
            *pos += 1; // the single whitespace after the token
        }
        Ok(tok)
    };

    let magic = next_token(&mut pos)?;
    match magic.as_str() {
        "Pf" => {}
        "PF" => return Err(format_err(context, "expected grayscale PFM (`Pf`), got color `PF`")),
        other => return Err(format_err(context, format!("bad magic token {other:?}"))),
    }

    let width: usize = next_token(&mut pos)?
        .parse()
        .map_err(|_| format_err(context, "bad width"))?;
    let height: usize = next_token(&mut pos)?
        .parse()
        .map_err(|_| format_err(context, "bad height"))?;
    let scale: f32 = next_token(&mut pos)?
        .parse()
        .map_err(|_| format_err(context, "bad scale"))?;
    if scale == 0.0 || !scale.is_finite() {
        return Err(format_err(context, format!("scale {scale} is not usable")));
    }
    let little_endian = scale < 0.0;

    if width == 0 || height == 0 {
        return Err(format_err(context, format!("degenerate dimensions {width}x{height}")));
    }
    let payload = &bytes[pos..];
    let expected = width * height * 4;
    if payload.len() != expected {
        return Err(format_err(
            context,
            format!("payload is {} bytes, expected {expected} for {width}x{height}", payload.len()),
        ));
    }

    let mut data = vec![0.0f32; width * height];
    for (i, chunk) in payload.chunks_exact(4).enumerate() {
        let raw: [u8; 4] = chunk.try_into().unwrap();
        let v = if little_endian { f32::from_le_bytes(raw) } else { f32::from_be_bytes(raw) };
        if v.is_nan() {
            return Err(format_err(context, format!("NaN sample at payload index {i}")));
        }
        // bottom row first on disk
        let y = height - 1 - i / width;
        let x = i % width;
        data[y * width + x] = v;
    }
    DisparityMap::new(width, height, data)
}

pub fn write_pfm(map: &DisparityMap, path: &Path, scale: f32) -> Result<()> {
    let bytes = encode_pfm(map, scale)?;
    std::fs::write(path, bytes).map_err(|source| Error::Io { path: path.to_path_buf(), source })
}

pub fn read_pfm(path: &Path) -> Result<DisparityMap> {
    let bytes =
        std::fs::read(path).map_err(|source| Error::Io { path: path.to_path_buf(), source })?;
    decode_pfm_inner(&bytes, &path.display().to_string())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::image_io::INVALID_DISPARITY;
    use proptest::prelude::*;

    #[test]
    fn round_trip_with_invalid_marker() {
        let map =
            DisparityMap::new(3, 2, vec![0.0, 1.0, 2.0, 3.0, 4.0, INVALID_DISPARITY]).unwrap();
        let bytes = encode_pfm(&map, 1.0).unwrap();
        let back = decode_pfm(&bytes).unwrap();
        assert_eq!(back, map);
        // and byte-identical on a second encode
        assert_eq!(encode_pfm(&back, 1.0).unwrap(), bytes);
    }

    #[test]
    fn fixed_little_endian_header() {
        let mut bytes = b"Pf\n2 2\n-1.0\n".to_vec();
        for v in [0.0f32, 1.0, 2.0, 3.0] {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        let map = decode_pfm(&bytes).unwrap();
        assert_eq!((map.width(), map.height()), (2, 2));
        // first payload row is the bottom image row
        assert_eq!(map.at(0, 1), 0.0);
        assert_eq!(map.at(1, 1), 1.0);
        assert_eq!(map.at(0, 0), 2.0);
        assert_eq!(map.at(1, 0), 3.0);
    }

    #[test]
    fn big_endian_payload_honored() {
        let mut bytes = b"Pf\n1 1\n1.0\n".to_vec();
        bytes.extend_from_slice(&5.5f32.to_be_bytes());
        let map = decode_pfm(&bytes).unwrap();
        assert_eq!(map.at(0, 0), 5.5);
    }

    #[test]
    fn color_pfm_rejected() {
        let bytes = b"PF\n1 1\n-1.0\n\0\0\0\0\0\0\0\0\0\0\0\0".to_vec();
        let err = decode_pfm(&bytes).unwrap_err();
        assert!(err.to_string().contains("grayscale"), "message was: {err}");
    }

    #[test]
    fn nan_payload_rejected() {
        let mut bytes = b"Pf\n1 1\n-1.0\n".to_vec();
        bytes.extend_from_slice(&f32::NAN.to_le_bytes());
        assert!(decode_pfm(&bytes).is_err());
    }

    #[test]
    fn payload_size_mismatch_rejected() {
        let mut bytes = b"Pf\n2 2\n-1.0\n".to_vec();
        bytes.extend_from_slice(&1.0f32.to_le_bytes()); // only one of four floats
        let err = decode_pfm(&bytes).unwrap_err();
        assert!(err.to_string().contains("payload"), "message was: {err}");
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.pfm");
        let map = DisparityMap::new(2, 3, vec![0.5, 1.5, 2.5, 3.5, INVALID_DISPARITY, 4.0]).unwrap();
        write_pfm(&map, &path, 1.0).unwrap();
        assert_eq!(read_pfm(&path).unwrap(), map);
    }

    proptest! {
        #[test]
        fn round_trip_is_bit_exact(
            w in 1usize..12,
            h in 1usize..12,
            seed in any::<u64>(),
        ) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let data: Vec<f32> = (0..w * h)
                .map(|_| {
                    if rng.random_ratio(1, 8) {
                        INVALID_DISPARITY
                    } else {
                        rng.random_range(0.0f32..512.0)
                    }
                })
                .collect();
            let map = DisparityMap::new(w, h, data).unwrap();
            let bytes = encode_pfm(&map, 1.0).unwrap();
            let back = decode_pfm(&bytes).unwrap();
            prop_assert_eq!(back.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
                            map.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>());
            prop_assert_eq!(encode_pfm(&back, 1.0).unwrap(), bytes);
        }
    }
}

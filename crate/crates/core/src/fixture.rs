//! DLTN tensor fixture codec: bit-exact, fixed-endianness bytes.
//!
//! Layout: magic `DLTN` | u32 version (=1) | u32 rank | rank × u64 dims |
//! row-major f64 payload. All integers and floats little-endian. Encoding
//! preserves every bit of the payload, NaN patterns included, so golden
//! files compare byte-for-byte across platforms.

use crate::error::{Error, Result};
use crate::tensor::Tensor;
use alloc::format;
use alloc::string::ToString;
use alloc::vec::Vec;

pub const MAGIC: [u8; 4] = *b"DLTN";
pub const VERSION: u32 = 1;

/// Ranks above this are rejected as malformed rather than attempted.
pub const MAX_RANK: u32 = 8;

pub fn encode(t: &Tensor) -> Vec<u8> {
    let mut out = Vec::with_capacity(12 + t.rank() * 8 + t.len() * 8);
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(t.rank() as u32).to_le_bytes());
    for &d in t.shape() {
        out.extend_from_slice(&(d as u64).to_le_bytes());
    }
    for &x in t.data() {
        out.extend_from_slice(&x.to_le_bytes());
    }
    out
}

pub fn decode(bytes: &[u8]) -> Result<Tensor> {
    let mut off = 0usize;

    let magic = take(bytes, &mut off, 4, "magic")?;
    if magic != MAGIC {
        return Err(Error::Format {
            offset: 0,
            what: "bad magic, expected \"DLTN\"".to_string(),
        });
    }

    let version = u32::from_le_bytes(take(bytes, &mut off, 4, "version")?.try_into().unwrap());
    if version != VERSION {
        return Err(Error::Format {
            offset: 4,
            what: format!("unsupported version {version}"),
        });
    }

    let rank = u32::from_le_bytes(take(bytes, &mut off, 4, "rank")?.try_into().unwrap());
    if rank > MAX_RANK {
        return Err(Error::Format {
            offset: 8,
            what: format!("rank {rank} exceeds max {MAX_RANK}"),
        });
    }

    let mut shape = Vec::with_capacity(rank as usize);
    let mut elems: usize = 1;
    for i in 0..rank {
        let at = off;
        let d = u64::from_le_bytes(take(bytes, &mut off, 8, "dim")?.try_into().unwrap());
        let d: usize = d.try_into().map_err(|_| Error::Format {
            offset: at,
            what: format!("dim {i} does not fit usize"),
        })?;
        elems = elems.checked_mul(d).ok_or(Error::Format {
            offset: at,
            what: "element count overflows".to_string(),
        })?;
        shape.push(d);
    }

    let mut data = Vec::with_capacity(elems);
    for _ in 0..elems {
        let chunk = take(bytes, &mut off, 8, "payload")?;
        data.push(f64::from_le_bytes(chunk.try_into().unwrap()));
    }

    if off != bytes.len() {
        return Err(Error::Format {
            offset: off,
            what: format!("{} trailing bytes", bytes.len() - off),
        });
    }

    Tensor::new(&shape, data)
}

fn take<'a>(bytes: &'a [u8], off: &mut usize, n: usize, what: &str) -> Result<&'a [u8]> {
    if *off + n > bytes.len() {
        return Err(Error::Format {
            offset: bytes.len(),
            what: format!("truncated while reading {what}"),
        });
    }
    let s = &bytes[*off..*off + n];
    *off += n;
    Ok(s)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn roundtrip_is_bitwise_including_nan_payloads() {
        let weird_nan = f64::from_bits(0x7FF8_0000_DEAD_BEEF);
        let t = Tensor::new(
            &[2, 3],
            vec![0.0, -0.0, f64::INFINITY, weird_nan, 1.5e-300, -7.25],
        )
        .unwrap();
        let back = decode(&encode(&t)).unwrap();
        assert_eq!(back.shape(), t.shape());
        for (a, b) in t.data().iter().zip(back.data()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    // Golden header for shape [2,3]: magic, version 1, rank 2, dims 2 and 3.
    #[test]
    fn header_bytes_match_golden() {
        let t = Tensor::zeros(&[2, 3]);
        let bytes = encode(&t);
        #[rustfmt::skip]
        let expected_header: [u8; 28] = [
            b'D', b'L', b'T', b'N',
            1, 0, 0, 0,
            2, 0, 0, 0,
            2, 0, 0, 0, 0, 0, 0, 0,
            3, 0, 0, 0, 0, 0, 0, 0,
        ];
        assert_eq!(&bytes[..28], &expected_header);
        assert_eq!(bytes.len(), 28 + 6 * 8);
    }

    #[test]
    fn truncation_reports_offset() {
        let t = Tensor::zeros(&[4]);
        let bytes = encode(&t);
        let cut = &bytes[..bytes.len() - 3];
        match decode(cut) {
            Err(Error::Format { offset, .. }) => assert_eq!(offset, cut.len()),
            other => panic!("expected format error, got {other:?}"),
        }
    }

    #[test]
    fn bad_magic_rejected_at_offset_zero() {
        let t = Tensor::zeros(&[1]);
        let mut bytes = encode(&t);
        bytes[0] = b'X';
        match decode(&bytes) {
            Err(Error::Format { offset, .. }) => assert_eq!(offset, 0),
            other => panic!("expected format error, got {other:?}"),
        }
    }

    #[test]
    fn trailing_bytes_rejected() {
        let t = Tensor::zeros(&[1]);
        let mut bytes = encode(&t);
        bytes.push(0);
        assert!(matches!(decode(&bytes), Err(Error::Format { .. })));
    }

    #[test]
    fn scalar_rank_zero_roundtrips() {
        let t = Tensor::new(&[], vec![3.25]).unwrap();
        let back = decode(&encode(&t)).unwrap();
        assert_eq!(back.shape(), &[] as &[usize]);
        assert_eq!(back.data(), &[3.25]);
    }
}

//! Binary tensor record: `name` (u32 LE byte length + UTF-8), `rank` (u32 LE),
//! `dims` (u32 LE each), `data` (f64 LE, row-major).

use std::io::{self, Read, Write};

use crate::error::{Result, TensorError};
use crate::tensor::Tensor;

pub fn write_record<W: Write>(w: &mut W, name: &str, t: &Tensor) -> Result<()> {
    let name_len = u32::try_from(name.len()).map_err(|_| TensorError::Format {
        offset: 0,
        msg: "tensor name too long".into(),
    })?;
    w.write_all(&name_len.to_le_bytes())?;
    w.write_all(name.as_bytes())?;
    w.write_all(&(t.rank() as u32).to_le_bytes())?;
    for &d in t.shape() {
        w.write_all(&(d as u32).to_le_bytes())?;
    }
    for v in t.data() {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

/// Reads a record, or `None` at a clean end of stream.
pub fn read_record<R: Read>(r: &mut R, offset: &mut u64) -> Result<Option<(String, Tensor)>> {
    let mut len = [0u8; 4];
    match read_exact_or_eof(r, &mut len)? {
        0 => return Ok(None),
        4 => {}
        _ => {
            return Err(TensorError::Format {
                offset: *offset,
                msg: "truncated name length".into(),
            })
        }
    }
    *offset += 4;
    let name_len = u32::from_le_bytes(len) as usize;
    let mut name = vec![0u8; name_len];
    read_field(r, &mut name, offset, "name")?;
    let name = String::from_utf8(name).map_err(|_| TensorError::Format {
        offset: *offset,
        msg: "name is not UTF-8".into(),
    })?;
    let mut word = [0u8; 4];
    read_field(r, &mut word, offset, "rank")?;
    let rank = u32::from_le_bytes(word) as usize;
    let mut shape = Vec::with_capacity(rank);
    for _ in 0..rank {
        read_field(r, &mut word, offset, "dim")?;
        shape.push(u32::from_le_bytes(word) as usize);
    }
    let numel: usize = shape.iter().product();
    let mut data = Vec::with_capacity(numel);
    let mut dword = [0u8; 8];
    for _ in 0..numel {
        read_field(r, &mut dword, offset, "data")?;
        data.push(f64::from_le_bytes(dword));
    }
    Ok(Some((name, Tensor::from_vec(&shape, data))))
}

fn read_field<R: Read>(r: &mut R, buf: &mut [u8], offset: &mut u64, what: &str) -> Result<()> {
    if read_exact_or_eof(r, buf)? != buf.len() {
        return Err(TensorError::Format {
            offset: *offset,
            msg: format!("truncated {what}"),
        });
    }
    *offset += buf.len() as u64;
    Ok(())
}

fn read_exact_or_eof<R: Read>(r: &mut R, buf: &mut [u8]) -> io::Result<usize> {
    let mut filled = 0;
    while filled < buf.len() {
        match r.read(&mut buf[filled..]) {
            Ok(0) => break,
            Ok(n) => filled += n,
            Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
            Err(e) => return Err(e),
        }
    }
    Ok(filled)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn byte_layout() {
        let mut buf = Vec::new();
        write_record(&mut buf, "w", &Tensor::from_vec(&[2], vec![1.0, -2.0])).unwrap();
        let mut expected = vec![1, 0, 0, 0, b'w', 1, 0, 0, 0, 2, 0, 0, 0];
        expected.extend(1.0f64.to_le_bytes());
        expected.extend((-2.0f64).to_le_bytes());
        assert_eq!(buf, expected);
    }

    #[test]
    fn truncated_record_is_format_error() {
        let mut buf = Vec::new();
        write_record(&mut buf, "abc", &Tensor::ones(&[3, 2])).unwrap();
        buf.truncate(buf.len() - 3);
        let err = read_record(&mut buf.as_slice(), &mut 0).unwrap_err();
        assert!(matches!(err, TensorError::Format { .. }), "{err}");
    }

    proptest! {
        #[test]
        fn round_trip(name in "[a-z.0-9]{0,12}", dims in proptest::collection::vec(1usize..4, 0..4), seed in any::<u64>()) {
            use rand::SeedableRng;
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let t = Tensor::randn(&dims, &mut rng);
            let mut buf = Vec::new();
            write_record(&mut buf, &name, &t).unwrap();
            let mut off = 0;
            let (n2, t2) = read_record(&mut buf.as_slice(), &mut off).unwrap().unwrap();
            prop_assert_eq!(n2, name);
            prop_assert_eq!(t2.shape(), t.shape());
            prop_assert!(t2.data().iter().zip(t.data()).all(|(a, b)| a.to_bits() == b.to_bits()));
            prop_assert_eq!(off as usize, buf.len());
        }
    }
}

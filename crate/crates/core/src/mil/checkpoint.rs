//! Binary checkpoint layout (little-endian):
//!
//! ```text
//! magic    b"ABMC"
//! version  u32 (= 1)
//! D        u64   input dimension
//! L        u64   attention dimension
//! flags    u8    bit 0: instance classifier present
//! tensors  f64 × num_params, in `MilModelParams::tensors` order
//! ```

use std::io::{Read, Write};

use super::{MilModelParams, ModelError};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"ABMC";
pub const CHECKPOINT_VERSION: u32 = 1;

pub fn write_params<W: Write>(mut w: W, params: &MilModelParams) -> Result<(), ModelError> {
    w.write_all(CHECKPOINT_MAGIC)?;
    w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
    w.write_all(&(params.input_dim() as u64).to_le_bytes())?;
    w.write_all(&(params.attention_dim() as u64).to_le_bytes())?;
    w.write_all(&[params.instance_classifier.is_some() as u8])?;
    for t in params.tensors() {
        for v in t {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_params<R: Read>(mut r: R) -> Result<MilModelParams, ModelError> {
    let mut magic = [0u8; 4];
    read_exact(&mut r, &mut magic)?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(ModelError::Checkpoint("bad magic".into()));
    }
    let mut b4 = [0u8; 4];
    read_exact(&mut r, &mut b4)?;
    let version = u32::from_le_bytes(b4);
    if version != CHECKPOINT_VERSION {
        return Err(ModelError::Checkpoint(format!(
            "unsupported version {version}"
        )));
    }
    let mut b8 = [0u8; 8];
    read_exact(&mut r, &mut b8)?;
    let d = usize::try_from(u64::from_le_bytes(b8))
        .map_err(|_| ModelError::Checkpoint("input dimension overflow".into()))?;
    read_exact(&mut r, &mut b8)?;
    let l = usize::try_from(u64::from_le_bytes(b8))
        .map_err(|_| ModelError::Checkpoint("attention dimension overflow".into()))?;
    if d == 0 || d > 1 << 20 || l > 1 << 16 {
        return Err(ModelError::Checkpoint(format!(
            "implausible dims D={d} L={l}"
        )));
    }
    let mut flags = [0u8; 1];
    read_exact(&mut r, &mut flags)?;
    let mut params = MilModelParams::zeros(d, l, flags[0] & 1 == 1)?;
    for t in params.tensors_mut() {
        for v in t.iter_mut() {
            read_exact(&mut r, &mut b8)?;
            *v = f64::from_le_bytes(b8);
        }
    }
    let mut extra = [0u8; 1];
    if r.read(&mut extra)? != 0 {
        return Err(ModelError::Checkpoint("trailing bytes".into()));
    }
    Ok(params)
}

fn read_exact<R: Read>(r: &mut R, buf: &mut [u8]) -> Result<(), ModelError> {
    r.read_exact(buf).map_err(|e| {
        if e.kind() == std::io::ErrorKind::UnexpectedEof {
            ModelError::Checkpoint("truncated".into())
        } else {
            ModelError::Io(e)
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn round_trip_bit_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for clam in [false, true] {
            let p = MilModelParams::init(12, 8, clam, &mut rng).unwrap();
            let mut buf = Vec::new();
            write_params(&mut buf, &p).unwrap();
            let q = read_params(&buf[..]).unwrap();
            assert_eq!(p, q);
        }
    }

    #[test]
    fn truncation_and_magic_detected() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let p = MilModelParams::init(4, 4, false, &mut rng).unwrap();
        let mut buf = Vec::new();
        write_params(&mut buf, &p).unwrap();
        assert!(matches!(
            read_params(&buf[..buf.len() - 3]),
            Err(ModelError::Checkpoint(m)) if m == "truncated"
        ));
        buf[0] = b'X';
        assert!(matches!(
            read_params(&buf[..]),
            Err(ModelError::Checkpoint(m)) if m == "bad magic"
        ));
    }
}

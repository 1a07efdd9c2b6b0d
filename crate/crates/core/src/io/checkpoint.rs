use std::path::Path;

use super::{read_file, write_file, ByteReader, DataError};
use crate::matrix::RealMatrix;
use crate::model::{ModelDims, StudentParams};
use crate::trainer::TrainConfig;

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"CUSC";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Trained parameters plus the configuration that produced them.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub params: StudentParams,
    pub config: TrainConfig,
}

/// Layout: magic, version u32, dims as four u32, the four matrices row-major
/// as f64, `log_inv_temp` f64, a u8 flag with an optional uni-modal f64, then
/// a u32 length and the config as JSON. All little-endian.
pub fn encode_checkpoint(ckpt: &Checkpoint) -> Result<Vec<u8>, DataError> {
    let p = &ckpt.params;
    let dims = p.dims();
    let config = serde_json::to_vec(&ckpt.config)
        .map_err(|e| DataError::InvalidCheckpoint(format!("config encoding: {e}")))?;
    let mut out = Vec::with_capacity(48 + p.num_scalars() * 8 + config.len());
    out.extend_from_slice(&CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    for d in [dims.d_bi, dims.d_bt, dims.d_e, dims.d_u] {
        let d = u32::try_from(d)
            .map_err(|_| DataError::InvalidCheckpoint(format!("dimension {d} too large")))?;
        out.extend_from_slice(&d.to_le_bytes());
    }
    for m in [&p.w_img, &p.w_txt, &p.u_img, &p.u_txt] {
        for v in m.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out.extend_from_slice(&p.log_inv_temp.to_le_bytes());
    match p.log_uni_inv_temp {
        Some(t) => {
            out.push(1);
            out.extend_from_slice(&t.to_le_bytes());
        }
        None => out.push(0),
    }
    out.extend_from_slice(&(config.len() as u32).to_le_bytes());
    out.extend_from_slice(&config);
    Ok(out)
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Checkpoint, DataError> {
    let mut r = ByteReader::new(bytes);
    let magic = r.array::<4>()?;
    if magic != CHECKPOINT_MAGIC {
        return Err(DataError::BadMagic {
            expected: CHECKPOINT_MAGIC,
            found: magic,
        });
    }
    let version_at = r.offset();
    let version = r.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(DataError::VersionUnsupported {
            version,
            offset: version_at,
        });
    }
    let mut d = [0usize; 4];
    for slot in &mut d {
        let at = r.offset();
        *slot = r.u32()? as usize;
        if *slot == 0 {
            return Err(DataError::InvalidHeader {
                offset: at,
                reason: "zero dimension".into(),
            });
        }
    }
    let dims = ModelDims {
        d_bi: d[0],
        d_bt: d[1],
        d_e: d[2],
        d_u: d[3],
    };
    let shapes = [
        (dims.d_bi, dims.d_e),
        (dims.d_bt, dims.d_e),
        (dims.d_e, dims.d_u),
        (dims.d_e, dims.d_u),
    ];
    let total: u64 = shapes.iter().map(|&(a, b)| a as u64 * b as u64 * 8).sum();
    let remaining = (bytes.len() - r.offset()) as u64;
    if total > remaining {
        return Err(DataError::TruncatedFile {
            offset: bytes.len(),
            needed: (total - remaining) as usize,
        });
    }
    let mut mats = Vec::with_capacity(4);
    for (rows, cols) in shapes {
        let mut data = Vec::with_capacity(rows * cols);
        for _ in 0..rows * cols {
            let at = r.offset();
            let v = r.f64()?;
            if !v.is_finite() {
                return Err(DataError::NonFiniteValue {
                    id: "parameter".into(),
                    offset: at,
                });
            }
            data.push(v);
        }
        mats.push(
            RealMatrix::new(rows, cols, data)
                .map_err(|e| DataError::InvalidCheckpoint(e.to_string()))?,
        );
    }
    let temp = |r: &mut ByteReader| -> Result<f64, DataError> {
        let at = r.offset();
        let v = r.f64()?;
        if !v.is_finite() {
            return Err(DataError::NonFiniteValue {
                id: "temperature".into(),
                offset: at,
            });
        }
        Ok(v)
    };
    let log_inv_temp = temp(&mut r)?;
    let flag_at = r.offset();
    let log_uni_inv_temp = match r.u8()? {
        0 => None,
        1 => Some(temp(&mut r)?),
        other => {
            return Err(DataError::InvalidHeader {
                offset: flag_at,
                reason: format!("uni-modal temperature flag {other}"),
            })
        }
    };
    let len = r.u32()? as usize;
    let json_at = r.offset();
    let json = r.take(len)?;
    r.finish()?;
    let config: TrainConfig = serde_json::from_slice(json)
        .map_err(|e| DataError::InvalidCheckpoint(format!("config at byte {json_at}: {e}")))?;
    let mut it = mats.into_iter();
    let mut next = || it.next().expect("four matrices");
    Ok(Checkpoint {
        params: StudentParams {
            w_img: next(),
            w_txt: next(),
            u_img: next(),
            u_txt: next(),
            log_inv_temp,
            log_uni_inv_temp,
        },
        config,
    })
}

pub fn write_checkpoint(path: impl AsRef<Path>, ckpt: &Checkpoint) -> Result<(), DataError> {
    write_file(path.as_ref(), &encode_checkpoint(ckpt)?)
}

pub fn read_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint, DataError> {
    decode_checkpoint(&read_file(path.as_ref())?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ckpt(separate: bool) -> Checkpoint {
        let dims = ModelDims {
            d_bi: 3,
            d_bt: 2,
            d_e: 2,
            d_u: 4,
        };
        let mut params = StudentParams::init(11, dims).unwrap();
        if separate {
            params = params.with_separate_uni_temp();
        }
        params.log_inv_temp = 0.1 + 0.2;
        Checkpoint {
            params,
            config: TrainConfig {
                learning_rate: 0.1 + 0.2,
                alpha: 1.0 / 3.0,
                separate_uni_temp: separate,
                ..TrainConfig::default()
            },
        }
    }

    #[test]
    fn round_trip_is_bit_exact() {
        for separate in [false, true] {
            let c = ckpt(separate);
            let bytes = encode_checkpoint(&c).unwrap();
            assert_eq!(&bytes[..4], b"CUSC");
            let back = decode_checkpoint(&bytes).unwrap();
            assert_eq!(back, c);
            assert_eq!(
                back.config.learning_rate.to_bits(),
                (0.1f64 + 0.2).to_bits()
            );
            assert_eq!(encode_checkpoint(&back).unwrap(), bytes);
        }
    }

    #[test]
    fn every_truncation_rejected() {
        let bytes = encode_checkpoint(&ckpt(true)).unwrap();
        for cut in 0..bytes.len() {
            match decode_checkpoint(&bytes[..cut]) {
                Err(DataError::TruncatedFile { offset, .. }) => assert_eq!(offset, cut),
                other => panic!("cut {cut}: {other:?}"),
            }
        }
    }

    #[test]
    fn corruption_rejected() {
        let bytes = encode_checkpoint(&ckpt(false)).unwrap();
        let mut b = bytes.clone();
        b[3] = b'F';
        assert!(matches!(
            decode_checkpoint(&b),
            Err(DataError::BadMagic { .. })
        ));

        let mut b = bytes.clone();
        b[8..12].copy_from_slice(&0u32.to_le_bytes());
        assert!(matches!(
            decode_checkpoint(&b),
            Err(DataError::InvalidHeader { offset: 8, .. })
        ));

        let mut b = bytes.clone();
        b[24..32].copy_from_slice(&f64::INFINITY.to_le_bytes());
        assert!(matches!(
            decode_checkpoint(&b),
            Err(DataError::NonFiniteValue { offset: 24, .. })
        ));

        let mut b = bytes.clone();
        b.extend_from_slice(b"xx");
        assert!(matches!(
            decode_checkpoint(&b),
            Err(DataError::TrailingBytes { count: 2, .. })
        ));

        let mut b = bytes;
        let last = b.len() - 1;
        b[last] = b'#';
        assert!(matches!(
            decode_checkpoint(&b),
            Err(DataError::InvalidCheckpoint(_))
        ));
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.cusc");
        write_checkpoint(&p, &ckpt(true)).unwrap();
        assert_eq!(read_checkpoint(&p).unwrap(), ckpt(true));
    }
}

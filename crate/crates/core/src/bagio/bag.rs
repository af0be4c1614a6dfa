//! `.fbag` feature-bag files.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! b"FBAG"            magic
//! b'1'               format version
//! u32 + bytes        slide_id (UTF-8)
//! u32 + bytes        patient_id (UTF-8)
//! u8                 label: 0 invalid, 1 effective, 0xFF unlabeled
//! u64 N, u64 D
//! N × (u64 x, u64 y, u64 region_size)
//! N × D f32          features, row-major
//! ```
//!
//! Features are held as `f64` in memory; values that are exactly representable
//! as `f32` round-trip bit-exactly.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::BagIoError;
use crate::fsutil::write_atomic;
use crate::mil::{EFFECTIVE, INVALID};
use crate::nn::Matrix;

pub const BAG_MAGIC: &[u8; 4] = b"FBAG";
pub const BAG_VERSION: u8 = b'1';
pub const BAG_EXTENSION: &str = "fbag";

const UNLABELED: u8 = 0xFF;
const MAX_ID_LEN: usize = 1 << 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Invalid,
    Effective,
}

impl Label {
    pub fn class_index(self) -> usize {
        match self {
            Label::Invalid => INVALID,
            Label::Effective => EFFECTIVE,
        }
    }

    pub fn from_class_index(i: usize) -> Option<Self> {
        match i {
            INVALID => Some(Label::Invalid),
            EFFECTIVE => Some(Label::Effective),
            _ => None,
        }
    }

    pub fn opposite(self) -> Self {
        match self {
            Label::Invalid => Label::Effective,
            Label::Effective => Label::Invalid,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Label::Invalid => "invalid",
            Label::Effective => "effective",
        }
    }

    /// Accepts `effective`/`invalid` (any case) or `1`/`0`.
    pub fn parse(s: &str) -> Result<Self, BagIoError> {
        match s.trim().to_ascii_lowercase().as_str() {
            "effective" | "1" => Ok(Label::Effective),
            "invalid" | "0" => Ok(Label::Invalid),
            other => Err(BagIoError::InvalidLabel(other.to_string())),
        }
    }
}

impl std::fmt::Display for Label {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RegionCoord {
    pub x: u64,
    pub y: u64,
    pub size: u64,
}

/// One slide: region embeddings, their coordinates, and the slide label.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureBag {
    pub slide_id: String,
    pub patient_id: String,
    pub label: Option<Label>,
    pub features: Matrix,
    pub coords: Vec<RegionCoord>,
}

impl FeatureBag {
    pub fn new(
        slide_id: impl Into<String>,
        patient_id: impl Into<String>,
        label: Option<Label>,
        features: Matrix,
        coords: Vec<RegionCoord>,
    ) -> Result<Self, BagIoError> {
        let bag = Self {
            slide_id: slide_id.into(),
            patient_id: patient_id.into(),
            label,
            features,
            coords,
        };
        bag.validate()?;
        Ok(bag)
    }

    pub fn validate(&self) -> Result<(), BagIoError> {
        if self.features.rows() == 0 {
            return Err(BagIoError::EmptyBag(self.slide_id.clone()));
        }
        if self.coords.len() != self.features.rows() {
            return Err(BagIoError::Inconsistent(format!(
                "{}: {} coords for {} regions",
                self.slide_id,
                self.coords.len(),
                self.features.rows()
            )));
        }
        Ok(())
    }

    pub fn num_regions(&self) -> usize {
        self.features.rows()
    }

    pub fn feature_dim(&self) -> usize {
        self.features.cols()
    }

    pub fn require_label(&self) -> Result<Label, BagIoError> {
        self.label
            .ok_or_else(|| BagIoError::MissingLabel(self.slide_id.clone()))
    }

    /// Keeps only the regions at `indices`, in that order.
    pub fn subset(&self, indices: &[usize]) -> FeatureBag {
        FeatureBag {
            slide_id: self.slide_id.clone(),
            patient_id: self.patient_id.clone(),
            label: self.label,
            features: self.features.select_rows(indices),
            coords: indices.iter().map(|&i| self.coords[i]).collect(),
        }
    }
}

pub fn write_bag_to<W: Write>(mut w: W, bag: &FeatureBag) -> Result<(), BagIoError> {
    bag.validate()?;
    w.write_all(BAG_MAGIC)?;
    w.write_all(&[BAG_VERSION])?;
    for id in [&bag.slide_id, &bag.patient_id] {
        let len = u32::try_from(id.len())
            .ok()
            .filter(|&l| (l as usize) <= MAX_ID_LEN)
            .ok_or_else(|| BagIoError::Inconsistent(format!("identifier too long: {id}")))?;
        w.write_all(&len.to_le_bytes())?;
        w.write_all(id.as_bytes())?;
    }
    let label = match bag.label {
        Some(Label::Invalid) => 0u8,
        Some(Label::Effective) => 1u8,
        None => UNLABELED,
    };
    w.write_all(&[label])?;
    w.write_all(&(bag.num_regions() as u64).to_le_bytes())?;
    w.write_all(&(bag.feature_dim() as u64).to_le_bytes())?;
    for c in &bag.coords {
        w.write_all(&c.x.to_le_bytes())?;
        w.write_all(&c.y.to_le_bytes())?;
        w.write_all(&c.size.to_le_bytes())?;
    }
    for &v in bag.features.data() {
        w.write_all(&(v as f32).to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_bag_from<R: Read>(mut r: R) -> Result<FeatureBag, BagIoError> {
    let mut magic = [0u8; 5];
    read_exact(&mut r, &mut magic)?;
    if &magic[..4] != BAG_MAGIC {
        return Err(BagIoError::BadMagic);
    }
    if magic[4] != BAG_VERSION {
        return Err(BagIoError::UnsupportedVersion(magic[4]));
    }
    let slide_id = read_string(&mut r)?;
    let patient_id = read_string(&mut r)?;
    let mut lb = [0u8; 1];
    read_exact(&mut r, &mut lb)?;
    let label = match lb[0] {
        0 => Some(Label::Invalid),
        1 => Some(Label::Effective),
        UNLABELED => None,
        b => return Err(BagIoError::InvalidLabel(format!("byte {b}"))),
    };
    let n = read_u64(&mut r)?;
    let d = read_u64(&mut r)?;
    let n = usize::try_from(n).map_err(|_| BagIoError::DimensionOverflow)?;
    let d = usize::try_from(d).map_err(|_| BagIoError::DimensionOverflow)?;
    let count = n.checked_mul(d).ok_or(BagIoError::DimensionOverflow)?;
    count
        .checked_mul(4)
        .and_then(|b| n.checked_mul(24).and_then(|c| b.checked_add(c)))
        .ok_or(BagIoError::DimensionOverflow)?;
    if n == 0 {
        return Err(BagIoError::EmptyBag(slide_id));
    }

    // capacity is bounded so a corrupt header cannot force a huge allocation
    let mut coords = Vec::with_capacity(n.min(1 << 16));
    for _ in 0..n {
        coords.push(RegionCoord {
            x: read_u64(&mut r)?,
            y: read_u64(&mut r)?,
            size: read_u64(&mut r)?,
        });
    }
    let mut data = Vec::with_capacity(count.min(1 << 22));
    let mut b4 = [0u8; 4];
    for _ in 0..count {
        read_exact(&mut r, &mut b4)?;
        data.push(f32::from_le_bytes(b4) as f64);
    }
    let mut extra = [0u8; 1];
    if r.read(&mut extra)? != 0 {
        return Err(BagIoError::TrailingBytes);
    }
    let features = Matrix::new(n, d, data).map_err(|_| BagIoError::DimensionOverflow)?;
    FeatureBag::new(slide_id, patient_id, label, features, coords)
}

pub fn write_bag(path: &Path, bag: &FeatureBag) -> Result<(), BagIoError> {
    let mut buf = Vec::new();
    write_bag_to(&mut buf, bag)?;
    write_atomic(path, |w| w.write_all(&buf))?;
    Ok(())
}

pub fn read_bag(path: &Path) -> Result<FeatureBag, BagIoError> {
    let file = std::fs::File::open(path)?;
    read_bag_from(std::io::BufReader::new(file))
}

fn read_exact<R: Read>(r: &mut R, buf: &mut [u8]) -> Result<(), BagIoError> {
    r.read_exact(buf).map_err(|e| {
        if e.kind() == std::io::ErrorKind::UnexpectedEof {
            BagIoError::Truncated
        } else {
            BagIoError::Io(e)
        }
    })
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64, BagIoError> {
    let mut b = [0u8; 8];
    read_exact(r, &mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn read_string<R: Read>(r: &mut R) -> Result<String, BagIoError> {
    let mut b = [0u8; 4];
    read_exact(r, &mut b)?;
    let len = u32::from_le_bytes(b) as usize;
    if len > MAX_ID_LEN {
        return Err(BagIoError::Inconsistent(format!("identifier length {len}")));
    }
    let mut buf = vec![0u8; len];
    read_exact(r, &mut buf)?;
    String::from_utf8(buf).map_err(|_| BagIoError::InvalidUtf8)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sample_bag() -> FeatureBag {
        FeatureBag::new(
            "S1",
            "P1",
            Some(Label::Effective),
            Matrix::from_rows(&[[0.5, -1.25, 3.0], [2.0, 0.0, -0.125]]).unwrap(),
            vec![
                RegionCoord {
                    x: 0,
                    y: 0,
                    size: 4096,
                },
                RegionCoord {
                    x: 4096,
                    y: 0,
                    size: 4096,
                },
            ],
        )
        .unwrap()
    }

    fn encoded(bag: &FeatureBag) -> Vec<u8> {
        let mut buf = Vec::new();
        write_bag_to(&mut buf, bag).unwrap();
        buf
    }

    #[test]
    fn round_trip() {
        let bag = sample_bag();
        assert_eq!(read_bag_from(&encoded(&bag)[..]).unwrap(), bag);
    }

    #[test]
    fn every_truncation_is_reported() {
        let buf = encoded(&sample_bag());
        for cut in 0..buf.len() {
            match read_bag_from(&buf[..cut]) {
                Err(BagIoError::Truncated) => {}
                other => panic!("cut {cut}: {other:?}"),
            }
        }
    }

    #[test]
    fn distinct_header_errors() {
        let mut buf = encoded(&sample_bag());
        buf[0] = b'X';
        assert!(matches!(read_bag_from(&buf[..]), Err(BagIoError::BadMagic)));
        let mut buf = encoded(&sample_bag());
        buf[4] = b'2';
        assert!(matches!(
            read_bag_from(&buf[..]),
            Err(BagIoError::UnsupportedVersion(b'2'))
        ));
        let mut buf = encoded(&sample_bag());
        buf.push(0);
        assert!(matches!(
            read_bag_from(&buf[..]),
            Err(BagIoError::TrailingBytes)
        ));
    }

    #[test]
    fn overflowing_dimensions_rejected() {
        let bag = sample_bag();
        let mut buf = encoded(&bag);
        // N and D start after magic(5) + 2×(4+2) ids + label(1)
        let off = 5 + 6 + 6 + 1;
        buf[off..off + 8].copy_from_slice(&u64::MAX.to_le_bytes());
        buf[off + 8..off + 16].copy_from_slice(&2u64.to_le_bytes());
        assert!(matches!(
            read_bag_from(&buf[..]),
            Err(BagIoError::DimensionOverflow)
        ));
    }

    #[test]
    fn unlabeled_bags_supported() {
        let mut bag = sample_bag();
        bag.label = None;
        let back = read_bag_from(&encoded(&bag)[..]).unwrap();
        assert_eq!(back.label, None);
        assert!(back.require_label().is_err());
    }

    fn arb_bag() -> impl Strategy<Value = FeatureBag> {
        (
            1usize..20,
            1usize..12,
            "[a-zA-Z0-9_]{0,12}",
            "[a-zA-Z0-9_]{0,12}",
            0u8..3,
        )
            .prop_flat_map(|(n, d, s, p, l)| {
                (
                    proptest::collection::vec(
                        any::<f32>().prop_filter("finite", |v| v.is_finite()),
                        n * d,
                    ),
                    proptest::collection::vec((any::<u32>(), any::<u32>(), 1u32..10_000), n),
                    Just((n, d, s, p, l)),
                )
            })
            .prop_map(|(vals, coords, (n, d, s, p, l))| {
                let label = match l {
                    0 => Some(Label::Invalid),
                    1 => Some(Label::Effective),
                    _ => None,
                };
                FeatureBag::new(
                    s,
                    p,
                    label,
                    Matrix::new(n, d, vals.into_iter().map(f64::from).collect()).unwrap(),
                    coords
                        .into_iter()
                        .map(|(x, y, size)| RegionCoord {
                            x: x as u64,
                            y: y as u64,
                            size: size as u64,
                        })
                        .collect(),
                )
                .unwrap()
            })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]
        #[test]
        fn read_write_round_trip(bag in arb_bag()) {
            let back = read_bag_from(&encoded(&bag)[..]).unwrap();
            prop_assert_eq!(back.features.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
                            bag.features.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>());
            prop_assert_eq!(back, bag);
        }
    }
}

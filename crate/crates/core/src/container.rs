//! The `ADPF` binary container for geo-tagged angle-delay profiles.
//!
//! Layout, all little-endian:
//!
//! | field        | type            |
//! |--------------|-----------------|
//! | magic        | `b"ADPF"`       |
//! | version      | u16             |
//! | n_antennas   | u32             |
//! | n_subcarriers| u32             |
//! | record count | u64             |
//!
//! followed by `record count` records. A version 1 record is the position
//! (two f64, x then y) and `n_antennas * n_subcarriers` f32 pixels in
//! row-major order (angle bin major). Version 2 records prefix the same body
//! with walk metadata: sequence id (u32), frame index (u16) and a distorted
//! flag (u8).

use std::io::{self, Read, Write};

use crate::adp::Adp;
use crate::error::{Error, Result};
use crate::geometry::Vec2;

pub const MAGIC: [u8; 4] = *b"ADPF";
pub const VERSION_PLAIN: u16 = 1;
pub const VERSION_SEQUENCE: u16 = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WalkTag {
    pub sequence_id: u32,
    pub frame_index: u16,
    pub distorted: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdpRecord {
    pub position: Vec2,
    pub adp: Adp,
    pub walk: Option<WalkTag>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdpContainer {
    pub n_antennas: usize,
    pub n_subcarriers: usize,
    pub records: Vec<AdpRecord>,
}

impl AdpContainer {
    pub fn new(n_antennas: usize, n_subcarriers: usize) -> Self {
        Self {
            n_antennas,
            n_subcarriers,
            records: Vec::new(),
        }
    }

    fn version(&self) -> Result<u16> {
        let tagged = self.records.iter().filter(|r| r.walk.is_some()).count();
        match tagged {
            0 => Ok(VERSION_PLAIN),
            n if n == self.records.len() => Ok(VERSION_SEQUENCE),
            _ => Err(Error::Format(
                "records must be either all walk-tagged or all untagged".into(),
            )),
        }
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        let version = self.version()?;
        w.write_all(&MAGIC)?;
        w.write_all(&version.to_le_bytes())?;
        w.write_all(&(self.n_antennas as u32).to_le_bytes())?;
        w.write_all(&(self.n_subcarriers as u32).to_le_bytes())?;
        w.write_all(&(self.records.len() as u64).to_le_bytes())?;
        let dims = (self.n_antennas, self.n_subcarriers);
        let mut buf = Vec::with_capacity(23 + 4 * self.n_antennas * self.n_subcarriers);
        for record in &self.records {
            if record.adp.dims() != dims {
                return Err(Error::dims(format!("{dims:?}"), format!("{:?}", record.adp.dims())));
            }
            buf.clear();
            if let Some(tag) = record.walk {
                buf.extend_from_slice(&tag.sequence_id.to_le_bytes());
                buf.extend_from_slice(&tag.frame_index.to_le_bytes());
                buf.push(tag.distorted as u8);
            }
            buf.extend_from_slice(&record.position.x.to_le_bytes());
            buf.extend_from_slice(&record.position.y.to_le_bytes());
            for p in record.adp.as_slice() {
                buf.extend_from_slice(&(*p as f32).to_le_bytes());
            }
            w.write_all(&buf)?;
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        self.write_to(&mut out)?;
        Ok(out)
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 4];
        read_exact(&mut r, &mut magic, "header")?;
        if magic != MAGIC {
            return Err(Error::Format(format!("bad magic {magic:?}")));
        }
        let version = u16::from_le_bytes(read_array(&mut r, "header")?);
        if version != VERSION_PLAIN && version != VERSION_SEQUENCE {
            return Err(Error::Version {
                found: version,
                expected: VERSION_SEQUENCE,
            });
        }
        let n_antennas = u32::from_le_bytes(read_array(&mut r, "header")?) as usize;
        let n_subcarriers = u32::from_le_bytes(read_array(&mut r, "header")?) as usize;
        let count = u64::from_le_bytes(read_array(&mut r, "header")?);
        if n_antennas == 0 || n_subcarriers == 0 {
            return Err(Error::Format("zero profile dimension".into()));
        }

        let n_pixels = n_antennas * n_subcarriers;
        let mut pixel_bytes = vec![0u8; 4 * n_pixels];
        // Cap the up-front allocation; a corrupt count should fail on read, not on alloc.
        let mut records = Vec::with_capacity(count.min(1 << 16) as usize);
        for i in 0..count {
            let what = format!("record {i} of {count}");
            let walk = if version == VERSION_SEQUENCE {
                let sequence_id = u32::from_le_bytes(read_array(&mut r, &what)?);
                let frame_index = u16::from_le_bytes(read_array(&mut r, &what)?);
                let [flag] = read_array::<1, _>(&mut r, &what)?;
                Some(WalkTag {
                    sequence_id,
                    frame_index,
                    distorted: flag != 0,
                })
            } else {
                None
            };
            let x = f64::from_le_bytes(read_array(&mut r, &what)?);
            let y = f64::from_le_bytes(read_array(&mut r, &what)?);
            read_exact(&mut r, &mut pixel_bytes, &what)?;
            let pixels = pixel_bytes
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
                .collect();
            records.push(AdpRecord {
                position: Vec2::new(x, y),
                adp: Adp::from_vec(n_antennas, n_subcarriers, pixels)?,
                walk,
            });
        }
        let mut trailing = [0u8; 1];
        if r.read(&mut trailing)? != 0 {
            return Err(Error::Format("trailing bytes after last record".into()));
        }
        Ok(Self {
            n_antennas,
            n_subcarriers,
            records,
        })
    }
}

fn read_exact<R: Read>(r: &mut R, buf: &mut [u8], what: &str) -> Result<()> {
    r.read_exact(buf).map_err(|e| match e.kind() {
        io::ErrorKind::UnexpectedEof => Error::TruncatedFile(what.to_string()),
        _ => Error::Io(e),
    })
}

fn read_array<const N: usize, R: Read>(r: &mut R, what: &str) -> Result<[u8; N]> {
    let mut buf = [0u8; N];
    read_exact(r, &mut buf, what)?;
    Ok(buf)
}

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"NDV1";
pub const HEADER_LEN: usize = 4 + 3 * 4;
/// Upper bound on voxel count accepted from a file header (2^31).
const MAX_VOXELS: u64 = 1 << 31;

/// Dense scalar field over a 3D voxel grid, row-major (last index fastest).
#[derive(Clone, Debug, PartialEq)]
pub struct Volume3D {
    dims: [usize; 3],
    voxels: Vec<f32>,
    pub subject_id: String,
    pub scan_id: String,
}

impl Volume3D {
    pub fn new(dims: [usize; 3], voxels: Vec<f32>) -> Result<Self> {
        if dims.contains(&0) {
            return Err(Error::Data(format!("volume dims must be positive, got {dims:?}")));
        }
        if dims.iter().product::<usize>() != voxels.len() {
            return Err(Error::Data(format!("volume dims {dims:?} do not match {} voxels", voxels.len())));
        }
        if let Some(v) = voxels.iter().find(|v| !v.is_finite()) {
            return Err(Error::Data(format!("non-finite voxel value {v}")));
        }
        Ok(Self { dims, voxels, subject_id: String::new(), scan_id: String::new() })
    }

    pub fn filled(dims: [usize; 3], value: f32) -> Self {
        Self::new(dims, vec![value; dims.iter().product()]).expect("finite fill value and positive dims")
    }

    pub fn with_ids(mut self, subject_id: impl Into<String>, scan_id: impl Into<String>) -> Self {
        self.subject_id = subject_id.into();
        self.scan_id = scan_id.into();
        self
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn voxels(&self) -> &[f32] {
        &self.voxels
    }

    pub fn index(&self, z: usize, y: usize, x: usize) -> usize {
        (z * self.dims[1] + y) * self.dims[2] + x
    }

    pub fn get(&self, z: usize, y: usize, x: usize) -> f32 {
        self.voxels[self.index(z, y, x)]
    }

    /// Rescales intensities to `[0, 1]` by min-max. A constant volume maps to 0.
    pub fn normalize_min_max(&mut self) {
        let (lo, hi) =
            self.voxels.iter().fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
        let range = hi - lo;
        for v in &mut self.voxels {
            *v = if range > 0.0 { (*v - lo) / range } else { 0.0 };
        }
    }

    /// Sets every voxel to zero, keeping ids and dims.
    pub fn blank(&mut self) {
        self.voxels.fill(0.0);
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(HEADER_LEN + 4 * self.voxels.len());
        out.extend_from_slice(MAGIC);
        for d in self.dims {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for v in &self.voxels {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < HEADER_LEN {
            return Err(Error::Format(format!("file too short for header: {} bytes", bytes.len())));
        }
        if &bytes[..4] != MAGIC {
            return Err(Error::Format(format!("bad magic {:?}, expected \"NDV1\"", &bytes[..4])));
        }
        let mut dims = [0usize; 3];
        for (i, d) in dims.iter_mut().enumerate() {
            let raw = u32::from_le_bytes(bytes[4 + 4 * i..8 + 4 * i].try_into().unwrap());
            if raw == 0 {
                return Err(Error::Format("zero dimension in header".into()));
            }
            *d = raw as usize;
        }
        let count = dims.iter().try_fold(1u64, |acc, &d| acc.checked_mul(d as u64));
        let count = match count {
            Some(c) if c <= MAX_VOXELS => c as usize,
            _ => return Err(Error::Format(format!("dimension overflow: {dims:?}"))),
        };
        let payload = &bytes[HEADER_LEN..];
        if payload.len() != 4 * count {
            return Err(Error::Format(format!("payload is {} bytes, dims {dims:?} need {}", payload.len(), 4 * count)));
        }
        let voxels = payload.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
        Self::new(dims, voxels).map_err(|e| Error::Format(e.to_string()))
    }
}

pub fn read_volume(path: impl AsRef<Path>) -> Result<Volume3D> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Volume3D::from_bytes(&bytes)
}

/// Writes through a temporary file and renames, so a failed write never
/// leaves a partial volume behind.
pub fn write_volume(vol: &Volume3D, path: impl AsRef<Path>) -> Result<()> {
    write_atomic(path.as_ref(), &vol.to_bytes())
}

pub(crate) fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension(format!("{}.tmp", path.extension().and_then(|e| e.to_str()).unwrap_or("")));
    let mut f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    f.write_all(bytes).map_err(|e| Error::io(&tmp, e))?;
    f.sync_all().map_err(|e| Error::io(&tmp, e))?;
    drop(f);
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_layout() {
        let vol = Volume3D::new([1, 2, 3], (0..6).map(|i| i as f32).collect()).unwrap();
        let bytes = vol.to_bytes();
        assert_eq!(&bytes[..4], b"NDV1");
        assert_eq!(&bytes[4..8], &1u32.to_le_bytes());
        assert_eq!(&bytes[12..16], &3u32.to_le_bytes());
        assert_eq!(&bytes[16..20], &0.0f32.to_le_bytes());
        assert_eq!(bytes.len(), 16 + 24);
    }

    #[test]
    fn rejects_truncation_and_overflow() {
        let vol = Volume3D::filled([2, 2, 2], 0.5);
        let bytes = vol.to_bytes();
        assert!(matches!(Volume3D::from_bytes(&bytes[..bytes.len() - 1]), Err(Error::Format(_))));
        assert!(matches!(Volume3D::from_bytes(&bytes[..10]), Err(Error::Format(_))));

        let mut huge = b"NDV1".to_vec();
        for _ in 0..3 {
            huge.extend_from_slice(&u32::MAX.to_le_bytes());
        }
        let err = Volume3D::from_bytes(&huge).unwrap_err();
        assert!(err.to_string().contains("overflow"), "{err}");
    }

    #[test]
    fn min_max_normalization() {
        let mut vol = Volume3D::new([1, 1, 4], vec![-2.0, 0.0, 2.0, 6.0]).unwrap();
        vol.normalize_min_max();
        assert_eq!(vol.voxels(), &[0.0, 0.25, 0.5, 1.0]);
        let mut flat = Volume3D::filled([2, 2, 2], 3.0);
        flat.normalize_min_max();
        assert!(flat.voxels().iter().all(|&v| v == 0.0));
    }
}

use serde::{Deserialize, Serialize};

use super::volume::Volume3D;
use crate::error::{Error, Result};

/// A location in the agent's normalized frame, each axis in `[-1, 1]`.
pub type Location = [f64; 3];

pub fn clamp_location(l: Location) -> Location {
    l.map(|v| v.clamp(-1.0, 1.0))
}

/// Maps a normalized location to voxel indices: -1 is the first voxel and
/// +1 the last along each axis. Out-of-range coordinates are clamped.
pub fn loc_to_voxel(l: Location, dims: [usize; 3]) -> [usize; 3] {
    let mut v = [0; 3];
    for k in 0..3 {
        let c = l[k].clamp(-1.0, 1.0);
        v[k] = ((c + 1.0) / 2.0 * (dims[k] - 1) as f64).round() as usize;
    }
    v
}

/// Inverse of [`loc_to_voxel`] on exact voxel centers.
pub fn voxel_to_loc(v: [f64; 3], dims: [usize; 3]) -> Location {
    let mut l = [0.0; 3];
    for k in 0..3 {
        l[k] = 2.0 * v[k] / (dims[k] - 1) as f64 - 1.0;
    }
    l
}

/// Half-open voxel box `[start, end)` per axis.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BoundingBox {
    pub start: [usize; 3],
    pub end: [usize; 3],
}

/// Cubic sub-volume seen at one step.
#[derive(Clone, Debug, PartialEq)]
pub struct GlimpseRecord {
    pub voxels: Vec<f64>,
    pub side: usize,
    /// Location used for extraction (already clamped to `[-1, 1]`).
    pub location: Location,
    pub center: [usize; 3],
    pub bbox: BoundingBox,
    pub step: usize,
}

/// Start indices of a `side`-cube centered at `center`, shifted so the cube
/// stays inside `dims`.
pub fn glimpse_box(center: [usize; 3], side: usize, dims: [usize; 3]) -> BoundingBox {
    let mut start = [0; 3];
    let mut end = [0; 3];
    for k in 0..3 {
        let s = (center[k] as isize - (side / 2) as isize).clamp(0, (dims[k] - side) as isize) as usize;
        start[k] = s;
        end[k] = s + side;
    }
    BoundingBox { start, end }
}

/// Extracts the `side`-cube centered at `loc_to_voxel(l)`. Near a border the
/// cube is shifted inward rather than padded or truncated.
pub fn extract_glimpse(vol: &Volume3D, l: Location, side: usize, step: usize) -> Result<GlimpseRecord> {
    let dims = vol.dims();
    if side == 0 || dims.iter().any(|&d| side > d) {
        return Err(Error::invalid("extract_glimpse", format!("glimpse side {side} does not fit volume {dims:?}")));
    }
    let location = clamp_location(l);
    let center = loc_to_voxel(location, dims);
    let bbox = glimpse_box(center, side, dims);
    let mut voxels = Vec::with_capacity(side * side * side);
    let src = vol.voxels();
    for z in bbox.start[0]..bbox.end[0] {
        for y in bbox.start[1]..bbox.end[1] {
            let row = vol.index(z, y, bbox.start[2]);
            voxels.extend(src[row..row + side].iter().map(|&v| f64::from(v)));
        }
    }
    Ok(GlimpseRecord { voxels, side, location, center, bbox, step })
}

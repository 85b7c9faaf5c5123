//! Overlapping patch tiling and mean-blended stitching.

use crate::error::{Error, Result};
use crate::real::Real;
use crate::volume::{Shape, Volume};

/// Regular grid of equally sized patches covering a volume.
///
/// Origins along each axis are `0, step, 2 step, ...`; the last origin is
/// pulled back to `n - patch` so the grid never leaves the volume.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PatchGrid {
    pub volume: [usize; 3],
    pub patch: [usize; 3],
    pub step: [usize; 3],
    pub origins: Vec<[usize; 3]>,
}

fn axis_origins(n: usize, p: usize, s: usize) -> Vec<usize> {
    let mut out = Vec::new();
    let mut o = 0;
    loop {
        out.push(o);
        if o + p >= n {
            break;
        }
        o += s;
        if o + p > n {
            o = n - p;
        }
    }
    out
}

impl PatchGrid {
    pub fn new(volume: [usize; 3], patch: [usize; 3], step: [usize; 3]) -> Result<Self> {
        for a in 0..3 {
            if patch[a] == 0 || step[a] == 0 {
                return Err(Error::Patch("patch and step must be positive".into()));
            }
            if step[a] > patch[a] {
                return Err(Error::Patch(format!(
                    "step {:?} exceeds patch {:?}; grid would leave gaps",
                    step, patch
                )));
            }
            if patch[a] > volume[a] {
                return Err(Error::Patch(format!(
                    "patch {:?} exceeds volume {:?}",
                    patch, volume
                )));
            }
        }
        let oy = axis_origins(volume[0], patch[0], step[0]);
        let ox = axis_origins(volume[1], patch[1], step[1]);
        let oz = axis_origins(volume[2], patch[2], step[2]);
        let mut origins = Vec::with_capacity(oy.len() * ox.len() * oz.len());
        for &y in &oy {
            for &x in &ox {
                for &z in &oz {
                    origins.push([y, x, z]);
                }
            }
        }
        Ok(PatchGrid {
            volume,
            patch,
            step,
            origins,
        })
    }

    pub fn cubic(volume: usize, patch: usize, step: usize) -> Result<Self> {
        Self::new([volume; 3], [patch; 3], [step; 3])
    }

    pub fn len(&self) -> usize {
        self.origins.len()
    }

    pub fn is_empty(&self) -> bool {
        self.origins.is_empty()
    }

    /// Same tiling on a grid `r` times finer.
    pub fn scaled(&self, r: usize) -> Self {
        let m = |a: [usize; 3]| [a[0] * r, a[1] * r, a[2] * r];
        PatchGrid {
            volume: m(self.volume),
            patch: m(self.patch),
            step: m(self.step),
            origins: self.origins.iter().map(|&o| m(o)).collect(),
        }
    }

    /// Number of patches covering each voxel, `(y, x, z)` row-major.
    pub fn coverage(&self) -> Vec<u32> {
        let [h, w, d] = self.volume;
        let mut count = vec![0u32; h * w * d];
        for o in &self.origins {
            for y in o[0]..(o[0] + self.patch[0]).min(h) {
                for x in o[1]..(o[1] + self.patch[1]).min(w) {
                    for z in o[2]..(o[2] + self.patch[2]).min(d) {
                        count[(y * w + x) * d + z] += 1;
                    }
                }
            }
        }
        count
    }
}

pub fn extract_patches<T: Real>(v: &Volume<T>, grid: &PatchGrid) -> Result<Vec<Volume<T>>> {
    let s = v.shape().spatial();
    if s != grid.volume {
        return Err(Error::Patch(format!(
            "grid built for {:?}, volume is {:?}",
            grid.volume, s
        )));
    }
    grid.origins
        .iter()
        .map(|&o| {
            for a in 0..3 {
                if o[a] + grid.patch[a] > s[a] {
                    return Err(Error::Patch(format!("patch at {o:?} exceeds bounds {s:?}")));
                }
            }
            v.crop(o, grid.patch)
        })
        .collect()
}

/// Recombines patches, averaging wherever several overlap.
pub fn stitch_patches<T: Real>(
    patches: &[Volume<T>],
    grid: &PatchGrid,
    out_shape: Shape,
) -> Result<Volume<T>> {
    if patches.len() != grid.origins.len() {
        return Err(Error::Patch(format!(
            "{} patches for {} grid origins",
            patches.len(),
            grid.origins.len()
        )));
    }
    if out_shape.spatial() != grid.volume {
        return Err(Error::Patch(format!(
            "output {out_shape} does not match grid volume {:?}",
            grid.volume
        )));
    }
    let c = out_shape.c;
    let mut mean = vec![0.0f64; out_shape.len()];
    let mut count = vec![0u32; out_shape.voxels()];
    for (p, o) in patches.iter().zip(&grid.origins) {
        let ps = p.shape();
        if ps.spatial() != grid.patch || ps.c != c {
            return Err(Error::Patch(format!(
                "patch shape {ps} inconsistent with grid patch {:?}x{c}",
                grid.patch
            )));
        }
        for y in 0..ps.h {
            for x in 0..ps.w {
                for z in 0..ps.d {
                    let (gy, gx, gz) = (o[0] + y, o[1] + x, o[2] + z);
                    if gy >= out_shape.h || gx >= out_shape.w || gz >= out_shape.d {
                        return Err(Error::Patch(format!("patch at {o:?} exceeds output")));
                    }
                    let vi = (gy * out_shape.w + gx) * out_shape.d + gz;
                    count[vi] += 1;
                    let k = count[vi] as f64;
                    for ch in 0..c {
                        // running mean: exact when all contributions agree
                        let m = &mut mean[vi * c + ch];
                        *m += (p.get(y, x, z, ch).f64() - *m) / k;
                    }
                }
            }
        }
    }
    if let Some(i) = count.iter().position(|&n| n == 0) {
        let (y, x, z) = (
            i / (out_shape.w * out_shape.d),
            (i / out_shape.d) % out_shape.w,
            i % out_shape.d,
        );
        return Err(Error::Patch(format!(
            "coverage gap at voxel ({y}, {x}, {z})"
        )));
    }
    Ok(Volume::from_parts_unchecked(
        out_shape,
        mean.into_iter().map(T::of).collect(),
    ))
}

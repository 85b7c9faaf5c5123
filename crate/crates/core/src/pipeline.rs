//! Glue between volumes, patches, the generator and the metrics.

use crate::degrade::{degrade, DegradationConfig};
use crate::error::{Error, Result};
use crate::interp::cubic_interpolate;
use crate::metrics::{psnr, ssim3d, Method, SsimParams, VolumeScore, PEAK};
use crate::networks::Generator;
use crate::params::NetworkParams;
use crate::patch::{extract_patches, stitch_patches, PatchGrid};
use crate::trainer::PatchSet;
use crate::volume::Volume;

/// Low-resolution patch grid matching an HR grid `r` times finer.
pub fn lr_grid(hr: &PatchGrid, r: usize) -> Result<PatchGrid> {
    for a in 0..3 {
        if hr.volume[a] % r != 0 || hr.patch[a] % r != 0 || hr.step[a] % r != 0 {
            return Err(Error::Patch(format!(
                "volume {:?}, patch {:?} and step {:?} must all be multiples of {r}",
                hr.volume, hr.patch, hr.step
            )));
        }
    }
    let d = |v: [usize; 3]| [v[0] / r, v[1] / r, v[2] / r];
    let lr = PatchGrid::new(d(hr.volume), d(hr.patch), d(hr.step))?;
    if lr.scaled(r) != *hr {
        return Err(Error::Patch(
            "patch origins do not align across resolutions".into(),
        ));
    }
    Ok(lr)
}

/// HR patches of every volume, each paired with its own degraded copy.
pub fn make_patch_set(
    volumes: &[Volume<f32>],
    grid: &PatchGrid,
    deg: &DegradationConfig,
) -> Result<PatchSet<f32>> {
    let mut hr = Vec::with_capacity(volumes.len() * grid.len());
    for v in volumes {
        hr.extend(extract_patches(v, grid)?);
    }
    let lr = hr
        .iter()
        .map(|p| degrade(p, deg))
        .collect::<Result<Vec<_>>>()?;
    Ok(PatchSet { hr, lr })
}

/// Super-resolves `lr` patch by patch on `grid` (an LR grid) and stitches
/// the outputs on the matching HR grid.
pub fn infer_patched(
    generator: &Generator,
    params: &NetworkParams<f32>,
    lr: &Volume<f32>,
    grid: &PatchGrid,
) -> Result<Volume<f32>> {
    infer_patched_with(lr, grid, generator.config.scale, |p| {
        generator.generate(params, p)
    })
}

/// [`infer_patched`] with an arbitrary per-patch upsampler `f`, which must
/// return patches `r` times larger than its input.
pub fn infer_patched_with(
    lr: &Volume<f32>,
    grid: &PatchGrid,
    r: usize,
    f: impl Fn(&Volume<f32>) -> Result<Volume<f32>>,
) -> Result<Volume<f32>> {
    let patches = extract_patches(lr, grid)?;
    let outs = patches.iter().map(f).collect::<Result<Vec<_>>>()?;
    stitch_patches(&outs, &grid.scaled(r), lr.shape().scaled(r))
}

/// LR tiling for a volume of `dims` voxels: `patch` and `step` are LR sizes,
/// shrunk to fit volumes smaller than one patch.
pub fn lr_grid_for(dims: [usize; 3], patch: usize, step: usize) -> Result<PatchGrid> {
    let p = dims.map(|n| patch.min(n));
    let s = [0, 1, 2].map(|a| step.min(p[a]));
    PatchGrid::new(dims, p, s)
}

/// PSNR and SSIM of `test` against `reference`.
pub fn score(
    id: &str,
    method: Method,
    factor: usize,
    reference: &Volume<f32>,
    test: &Volume<f32>,
) -> Result<VolumeScore> {
    Ok(VolumeScore {
        volume_id: id.to_string(),
        method,
        factor,
        psnr: psnr(reference, test, PEAK)?,
        ssim: ssim3d(reference, test, &SsimParams::default())?,
    })
}

/// Scores the cubic baseline on each `(id, hr)` pair.
pub fn evaluate_cubic(
    volumes: &[(String, Volume<f32>)],
    deg: &DegradationConfig,
) -> Result<Vec<VolumeScore>> {
    evaluate_with(volumes, deg, Method::Cubic, |lr| {
        cubic_interpolate(lr, deg.factor)
    })
    .map(|(s, _)| s)
}

/// Degrades each HR volume, upsamples it with `upsample` and scores the
/// result. Also returns the upsampled volumes.
pub fn evaluate_with(
    volumes: &[(String, Volume<f32>)],
    deg: &DegradationConfig,
    method: Method,
    upsample: impl Fn(&Volume<f32>) -> Result<Volume<f32>>,
) -> Result<(Vec<VolumeScore>, Vec<Volume<f32>>)> {
    let mut scores = Vec::with_capacity(volumes.len());
    let mut outs = Vec::with_capacity(volumes.len());
    for (id, hr) in volumes {
        let lr = degrade(hr, deg)?;
        let up = upsample(&lr)?;
        if up.shape() != hr.shape() {
            return Err(Error::Shape(format!(
                "{method} produced {} for a {} volume",
                up.shape(),
                hr.shape()
            )));
        }
        scores.push(score(id, method, deg.factor, hr, &up)?);
        outs.push(up);
    }
    Ok((scores, outs))
}

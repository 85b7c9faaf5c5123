//! Grayscale PNG slice figures: original | cubic | SR, plus zoomed crops.

use std::path::Path;

use image::{GrayImage, Luma};
use srgan3d::workflow::Evaluated;
use srgan3d::{Error, Result, Volume};

const GAP: u32 = 2;
const ZOOM: u32 = 4;

/// Mid-depth slice as 8-bit gray, intensities clamped to [0, 1].
fn slice(v: &Volume<f32>) -> GrayImage {
    let s = v.shape();
    let z = s.d / 2;
    GrayImage::from_fn(s.w as u32, s.h as u32, |x, y| {
        let t = v.get(y as usize, x as usize, z, 0).clamp(0.0, 1.0);
        Luma([(t * 255.0).round() as u8])
    })
}

fn crop_zoom(img: &GrayImage, [y0, x0]: [usize; 2], size: usize) -> GrayImage {
    GrayImage::from_fn(size as u32 * ZOOM, size as u32 * ZOOM, |x, y| {
        *img.get_pixel(x0 as u32 + x / ZOOM, y0 as u32 + y / ZOOM)
    })
}

/// Panels side by side on a white background.
fn row(panels: &[GrayImage]) -> GrayImage {
    let w = panels.iter().map(|p| p.width()).sum::<u32>() + GAP * (panels.len() as u32 - 1);
    let h = panels.iter().map(|p| p.height()).max().unwrap_or(0);
    let mut out = GrayImage::from_pixel(w, h, Luma([255]));
    let mut x0 = 0;
    for p in panels {
        image::imageops::replace(&mut out, p, x0 as i64, 0);
        x0 += p.width() + GAP;
    }
    out
}

fn save(img: &GrayImage, path: &Path) -> Result<()> {
    img.save(path).map_err(|e| Error::Io {
        path: path.into(),
        source: std::io::Error::other(e.to_string()),
    })
}

pub fn write_all(
    vols: &[Evaluated],
    (origin, size): ([usize; 2], usize),
    dir: &Path,
) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::Io {
        path: dir.into(),
        source: e,
    })?;
    for v in vols {
        let panels = [slice(&v.hr), slice(&v.cubic), slice(&v.sr)];
        save(&row(&panels), &dir.join(format!("{}_slice.png", v.id)))?;
        let s = v.hr.shape();
        if origin[0] + size <= s.h && origin[1] + size <= s.w {
            let zoomed: Vec<GrayImage> =
                panels.iter().map(|p| crop_zoom(p, origin, size)).collect();
            save(&row(&zoomed), &dir.join(format!("{}_zoom.png", v.id)))?;
        }
    }
    Ok(())
}

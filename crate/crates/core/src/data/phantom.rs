//! Piecewise-smooth synthetic volumes: constant-intensity ellipsoids with
//! sharp boundaries over a smooth background.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::volume::{normalize, Shape, Volume};

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct PhantomSpec {
    pub shape: [usize; 3],
    /// Inclusive range for the number of ellipsoids.
    pub n_ellipsoids: (usize, usize),
    /// Inclusive range for each semi-axis, in voxels.
    pub radius: (f64, f64),
    pub intensity: (f64, f64),
    pub background: (f64, f64),
    /// Wavelength of the background's lowest-frequency component, in voxels.
    pub background_smoothness: f64,
    pub noise_sigma: f64,
    pub seed: u64,
}

impl PhantomSpec {
    /// Desk-scale phantom of side `n`.
    pub fn desk(n: usize, seed: u64) -> Self {
        PhantomSpec {
            shape: [n; 3],
            n_ellipsoids: (6, 12),
            radius: (2.0, n as f64 / 4.0),
            intensity: (0.35, 1.0),
            background: (0.0, 0.3),
            background_smoothness: n as f64,
            noise_sigma: 0.0,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.shape.contains(&0) {
            return bad(format!(
                "phantom shape {:?} has a zero dimension",
                self.shape
            ));
        }
        if self.n_ellipsoids.0 > self.n_ellipsoids.1 {
            return bad(format!(
                "empty ellipsoid count range {:?}",
                self.n_ellipsoids
            ));
        }
        let range_ok = |(a, b): (f64, f64)| a.is_finite() && b.is_finite() && a <= b;
        for (name, r) in [
            ("intensity", self.intensity),
            ("background", self.background),
        ] {
            if !range_ok(r) || r.0 < 0.0 || r.1 > 1.0 {
                return bad(format!("{name} range {r:?} must be ordered within [0, 1]"));
            }
        }
        if !range_ok(self.radius) || self.radius.0 <= 0.0 {
            return bad(format!(
                "radius range {:?} must be positive and ordered",
                self.radius
            ));
        }
        if self.n_ellipsoids.1 > 0 {
            let min_side = *self.shape.iter().min().unwrap() as f64;
            if 2.0 * self.radius.0 + 1.0 > min_side {
                return bad(format!(
                    "ellipsoids with radius >= {} do not fit in {:?}",
                    self.radius.0, self.shape
                ));
            }
        }
        if !(self.background_smoothness > 0.0) {
            return bad("background smoothness must be > 0".into());
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return bad("noise sigma must be >= 0".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Ellipsoid {
    pub center: [f64; 3],
    pub radii: [f64; 3],
    /// Intensity inside the ellipsoid in the final, normalized volume.
    pub intensity: f32,
    raw: f64,
}

impl Ellipsoid {
    pub fn contains(&self, y: usize, x: usize, z: usize) -> bool {
        let p = [y as f64, x as f64, z as f64];
        (0..3)
            .map(|a| ((p[a] - self.center[a]) / self.radii[a]).powi(2))
            .sum::<f64>()
            <= 1.0
    }
}

#[derive(Debug, Clone)]
pub struct Phantom {
    pub volume: Volume<f32>,
    /// In painting order; later ellipsoids cover earlier ones.
    pub ellipsoids: Vec<Ellipsoid>,
}

fn uniform(rng: &mut ChaCha8Rng, (a, b): (f64, f64)) -> f64 {
    if a == b {
        a
    } else {
        rng.gen_range(a..=b)
    }
}

pub fn generate_phantom(spec: &PhantomSpec) -> Result<Phantom> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let [h, w, d] = spec.shape;
    let shape = Shape::new(h, w, d, 1);

    // background: a few random low-frequency cosines
    let waves: Vec<([f64; 3], f64)> = (0..4)
        .map(|i| {
            let k = std::f64::consts::TAU / (spec.background_smoothness * (1.0 + i as f64 * 0.5));
            let mut dir = [0.0; 3];
            for c in &mut dir {
                *c = rng.gen_range(-1.0..1.0);
            }
            let norm = dir.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-9);
            (
                [dir[0] * k / norm, dir[1] * k / norm, dir[2] * k / norm],
                rng.gen_range(0.0..std::f64::consts::TAU),
            )
        })
        .collect();
    let (b0, b1) = spec.background;
    let mut raw: Vec<f64> = Vec::with_capacity(shape.len());
    for y in 0..h {
        for x in 0..w {
            for z in 0..d {
                let s: f64 = waves
                    .iter()
                    .map(|(k, ph)| (k[0] * y as f64 + k[1] * x as f64 + k[2] * z as f64 + ph).cos())
                    .sum::<f64>()
                    / waves.len() as f64;
                raw.push(b0 + (b1 - b0) * 0.5 * (s + 1.0));
            }
        }
    }

    let count = rng.gen_range(spec.n_ellipsoids.0..=spec.n_ellipsoids.1);
    let mut ellipsoids = Vec::with_capacity(count);
    for _ in 0..count {
        let mut radii = [0.0; 3];
        let mut center = [0.0; 3];
        for a in 0..3 {
            let n = spec.shape[a] as f64;
            radii[a] = uniform(
                &mut rng,
                (spec.radius.0, spec.radius.1.min((n - 1.0) / 2.0)),
            );
            center[a] = uniform(&mut rng, (radii[a], n - 1.0 - radii[a]));
        }
        let value = uniform(&mut rng, spec.intensity);
        let e = Ellipsoid {
            center,
            radii,
            intensity: 0.0,
            raw: value,
        };
        for y in 0..h {
            for x in 0..w {
                for z in 0..d {
                    if e.contains(y, x, z) {
                        raw[shape.index(y, x, z, 0)] = value;
                    }
                }
            }
        }
        ellipsoids.push(e);
    }

    if spec.noise_sigma > 0.0 {
        let normal = rand_distr::Normal::new(0.0, spec.noise_sigma).expect("valid sigma");
        for v in &mut raw {
            *v += rng.sample(normal);
        }
    }

    let lo = raw.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = raw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let vol = Volume::new(shape, raw)?;
    let volume = normalize(&vol)?.cast::<f32>();
    for e in &mut ellipsoids {
        e.intensity = ((e.raw - lo) / (hi - lo)) as f32;
    }
    Ok(Phantom { volume, ellipsoids })
}

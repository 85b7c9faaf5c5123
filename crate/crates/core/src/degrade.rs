//! Low-resolution degradation: separable Gaussian blur then decimation.

use crate::error::{Error, Result};
use crate::real::Real;
use crate::volume::Volume;

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct DegradationConfig {
    /// Integer downsampling factor.
    pub factor: usize,
    /// Gaussian standard deviation in voxels.
    pub blur_sigma: f64,
    /// Half-width of the truncated kernel in voxels.
    pub kernel_radius: usize,
}

impl DegradationConfig {
    /// Default prefilter for factor `r`: `sigma = r / 2`, radius `ceil(3 sigma)`.
    pub fn for_factor(r: usize) -> Self {
        let sigma = r as f64 / 2.0;
        DegradationConfig {
            factor: r,
            blur_sigma: sigma,
            kernel_radius: (3.0 * sigma).ceil() as usize,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.factor == 0 {
            return Err(Error::Config("degradation factor must be positive".into()));
        }
        if !(self.blur_sigma > 0.0) || !self.blur_sigma.is_finite() {
            return Err(Error::Config(format!(
                "blur sigma must be > 0, got {}",
                self.blur_sigma
            )));
        }
        if self.kernel_radius == 0 {
            return Err(Error::Config("kernel radius must be positive".into()));
        }
        Ok(())
    }
}

/// Sampled Gaussian at offsets `-radius..=radius`, normalized to sum 1.
pub fn gaussian_kernel(sigma: f64, radius: usize) -> Vec<f64> {
    let r = radius as isize;
    let mut k: Vec<f64> = (-r..=r)
        .map(|i| (-((i * i) as f64) / (2.0 * sigma * sigma)).exp())
        .collect();
    let sum: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= sum);
    k
}

/// Mirror index into `0..n` without repeating the edge sample
/// (`... 2 1 | 0 1 2 ... n-1 | n-2 ...`).
pub fn reflect_index(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as isize - 1);
    let m = i.rem_euclid(period);
    if m < n as isize {
        m as usize
    } else {
        (period - m) as usize
    }
}

/// Blurs `data` (a `(y, x, z, c)` volume) along one spatial axis in place.
fn blur_axis(data: &mut [f64], dims: [usize; 4], axis: usize, kernel: &[f64]) {
    let radius = (kernel.len() / 2) as isize;
    let n = dims[axis];
    let mut strides = [0usize; 4];
    strides[3] = 1;
    for a in (0..3).rev() {
        strides[a] = strides[a + 1] * dims[a + 1];
    }
    let stride = strides[axis];
    let mut line = vec![0.0; n];
    let total: usize = dims.iter().product();
    for start in 0..total {
        // visit each line once, from its first element
        if (start / stride) % n != 0 {
            continue;
        }
        for (i, slot) in line.iter_mut().enumerate() {
            *slot = data[start + i * stride];
        }
        for i in 0..n {
            let mut acc = 0.0;
            for (t, w) in kernel.iter().enumerate() {
                let j = reflect_index(i as isize + t as isize - radius, n);
                acc += w * line[j];
            }
            data[start + i * stride] = acc;
        }
    }
}

/// Separable Gaussian blur with reflective boundaries, per channel.
pub fn gaussian_blur<T: Real>(v: &Volume<T>, sigma: f64, radius: usize) -> Volume<T> {
    let s = v.shape();
    let kernel = gaussian_kernel(sigma, radius);
    let mut data: Vec<f64> = v.data().iter().map(|x| x.f64()).collect();
    let dims = [s.h, s.w, s.d, s.c];
    for axis in 0..3 {
        blur_axis(&mut data, dims, axis, &kernel);
    }
    Volume::from_parts_unchecked(s, data.into_iter().map(T::of).collect())
}

/// Produces the low-resolution observation of `v`.
pub fn degrade<T: Real>(v: &Volume<T>, cfg: &DegradationConfig) -> Result<Volume<T>> {
    cfg.validate()?;
    let s = v.shape();
    let r = cfg.factor;
    if s.h % r != 0 || s.w % r != 0 || s.d % r != 0 {
        return Err(Error::Shape(format!(
            "spatial dims of {s} not divisible by factor {r}"
        )));
    }
    gaussian_blur(v, cfg.blur_sigma, cfg.kernel_radius).decimate(r)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::volume::Shape;
    use rand::{Rng, SeedableRng};

    fn random(shape: Shape, seed: u64) -> Volume<f64> {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        Volume::from_fn(shape, |_, _, _, _| rng.gen::<f64>())
    }

    /// Direct triple sum over the reflected window.
    fn blurred_at(v: &Volume<f64>, k: &[f64], y: usize, x: usize, z: usize, c: usize) -> f64 {
        let s = v.shape();
        let r = (k.len() / 2) as isize;
        let mut acc = 0.0;
        for (a, wa) in k.iter().enumerate() {
            for (b, wb) in k.iter().enumerate() {
                for (e, we) in k.iter().enumerate() {
                    let yy = reflect_index(y as isize + a as isize - r, s.h);
                    let xx = reflect_index(x as isize + b as isize - r, s.w);
                    let zz = reflect_index(z as isize + e as isize - r, s.d);
                    acc += wa * wb * we * v.get(yy, xx, zz, c);
                }
            }
        }
        acc
    }

    #[test]
    fn kernel_is_normalized_and_symmetric() {
        let k = gaussian_kernel(1.0, 3);
        assert_eq!(k.len(), 7);
        assert!((k.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        for i in 0..3 {
            assert_eq!(k[i], k[6 - i]);
        }
    }

    #[test]
    fn reflect_indices() {
        let got: Vec<usize> = (-3..7).map(|i| reflect_index(i, 4)).collect();
        assert_eq!(got, vec![3, 2, 1, 0, 1, 2, 3, 2, 1, 0]);
        assert_eq!(reflect_index(-5, 1), 0);
    }

    #[test]
    fn constant_is_preserved() {
        let v = Volume::<f64>::filled(Shape::cube(8), 0.7);
        let lr = degrade(&v, &DegradationConfig::for_factor(2)).unwrap();
        assert_eq!(lr.shape(), Shape::cube(4));
        for &x in lr.data() {
            assert!((x - 0.7).abs() < 1e-12);
        }
    }

    #[test]
    fn single_window_is_gaussian_weighted_mean() {
        let v = random(Shape::cube(4), 11);
        let cfg = DegradationConfig::for_factor(4);
        let lr = degrade(&v, &cfg).unwrap();
        assert_eq!(lr.shape(), Shape::cube(1));
        let k = gaussian_kernel(cfg.blur_sigma, cfg.kernel_radius);
        let expected = blurred_at(&v, &k, 0, 0, 0, 0);
        assert!((lr.data()[0] - expected).abs() < 1e-12);
    }

    #[test]
    fn impulse_samples_the_kernel() {
        let n = 16;
        let c = 8;
        let v = Volume::<f64>::from_fn(Shape::cube(n), |y, x, z, _| {
            if (y, x, z) == (c, c, c) {
                1.0
            } else {
                0.0
            }
        });
        let cfg = DegradationConfig::for_factor(2);
        let lr = degrade(&v, &cfg).unwrap();
        let sigma = cfg.blur_sigma;
        let radius = cfg.kernel_radius as isize;
        let norm: f64 = (-radius..=radius)
            .map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp())
            .sum();
        let g = |d: isize| {
            if d.abs() > radius {
                0.0
            } else {
                (-(d * d) as f64 / (2.0 * sigma * sigma)).exp() / norm
            }
        };
        for y in 0..n / 2 {
            for x in 0..n / 2 {
                for z in 0..n / 2 {
                    let (dy, dx, dz) = (
                        (2 * y) as isize - c as isize,
                        (2 * x) as isize - c as isize,
                        (2 * z) as isize - c as isize,
                    );
                    let expected = g(dy) * g(dx) * g(dz);
                    assert!((lr.get(y, x, z, 0) - expected).abs() < 1e-14);
                }
            }
        }
    }

    #[test]
    fn matches_direct_sum_everywhere() {
        let v = random(Shape::new(6, 4, 8, 2), 5);
        let cfg = DegradationConfig::for_factor(2);
        let lr = degrade(&v, &cfg).unwrap();
        let k = gaussian_kernel(cfg.blur_sigma, cfg.kernel_radius);
        for y in 0..3 {
            for x in 0..2 {
                for z in 0..4 {
                    for c in 0..2 {
                        let e = blurred_at(&v, &k, 2 * y, 2 * x, 2 * z, c);
                        assert!((lr.get(y, x, z, c) - e).abs() < 1e-12);
                    }
                }
            }
        }
    }

    #[test]
    fn commutes_with_affine_rescale() {
        let v = random(Shape::cube(8), 9);
        let cfg = DegradationConfig::for_factor(2);
        let (a, b) = (0.4, 0.25);
        let lhs = degrade(&v.map(|x| a * x + b), &cfg).unwrap();
        let rhs = degrade(&v, &cfg).unwrap().map(|x| a * x + b);
        for (l, r) in lhs.data().iter().zip(rhs.data()) {
            assert!((l - r).abs() < 1e-6);
        }
    }

    #[test]
    fn rejects_bad_inputs() {
        let v = Volume::<f32>::zeros(Shape::new(6, 6, 5, 1));
        assert!(degrade(&v, &DegradationConfig::for_factor(2)).is_err());
        let mut cfg = DegradationConfig::for_factor(2);
        cfg.blur_sigma = 0.0;
        assert!(degrade(&Volume::<f32>::zeros(Shape::cube(4)), &cfg).is_err());
    }
}

//! Natural cubic spline upsampling, the classical baseline.
//!
//! Low-resolution sample `j` sits at high-resolution index `r * j`, matching
//! the decimation phase used by [`crate::degrade::degrade`]. Positions past the
//! last knot are extrapolated with the final spline piece.

use crate::error::{Error, Result};
use crate::real::Real;
use crate::volume::{Shape, Volume};

/// Second derivatives of the natural spline through `y` at unit spacing.
fn natural_moments(y: &[f64]) -> Vec<f64> {
    let n = y.len();
    let mut m = vec![0.0; n];
    if n < 3 {
        return m;
    }
    // Thomas algorithm on the interior system: m[i-1] + 4 m[i] + m[i+1] = rhs
    let k = n - 2;
    let mut c = vec![0.0; k];
    let mut d = vec![0.0; k];
    for i in 0..k {
        let rhs = 6.0 * (y[i + 2] - 2.0 * y[i + 1] + y[i]);
        let denom = if i == 0 { 4.0 } else { 4.0 - c[i - 1] };
        c[i] = 1.0 / denom;
        d[i] = if i == 0 {
            rhs / denom
        } else {
            (rhs - d[i - 1]) / denom
        };
    }
    m[k] = d[k - 1];
    for i in (0..k - 1).rev() {
        m[i + 1] = d[i] - c[i] * m[i + 2];
    }
    m
}

fn eval_spline(y: &[f64], m: &[f64], x: f64) -> f64 {
    let n = y.len();
    if n == 1 {
        return y[0];
    }
    let i = (x.floor() as usize).min(n - 2);
    let t = x - i as f64;
    let u = 1.0 - t;
    u * y[i] + t * y[i + 1] + ((u * u * u - u) * m[i] + (t * t * t - t) * m[i + 1]) / 6.0
}

/// Dense `(r n) x n` operator mapping knot values to upsampled samples.
pub fn spline_operator(n: usize, r: usize) -> Vec<f64> {
    let mut op = vec![0.0; r * n * n];
    let mut unit = vec![0.0; n];
    for j in 0..n {
        unit.iter_mut().for_each(|v| *v = 0.0);
        unit[j] = 1.0;
        let m = natural_moments(&unit);
        for o in 0..r * n {
            op[o * n + j] = eval_spline(&unit, &m, o as f64 / r as f64);
        }
    }
    op
}

/// Applies a per-axis linear operator (`out_n x in_n`) along `axis`.
fn apply_axis(data: &[f64], dims: [usize; 4], axis: usize, op: &[f64], out_n: usize) -> Vec<f64> {
    let in_n = dims[axis];
    let outer: usize = dims[..axis].iter().product();
    let inner: usize = dims[axis + 1..].iter().product();
    let mut out = vec![0.0; outer * out_n * inner];
    for o in 0..outer {
        for i in 0..out_n {
            let row = &op[i * in_n..(i + 1) * in_n];
            let dst = &mut out[(o * out_n + i) * inner..(o * out_n + i + 1) * inner];
            for (j, &w) in row.iter().enumerate() {
                if w == 0.0 {
                    continue;
                }
                let src = &data[(o * in_n + j) * inner..(o * in_n + j + 1) * inner];
                for (d, s) in dst.iter_mut().zip(src) {
                    *d += w * s;
                }
            }
        }
    }
    out
}

/// Upsamples every spatial axis by `r` with a natural cubic spline and
/// clamps the result to `[0, 1]`.
pub fn cubic_interpolate<T: Real>(v: &Volume<T>, r: usize) -> Result<Volume<T>> {
    if r < 2 {
        return Err(Error::Config(format!(
            "cubic interpolation needs r >= 2, got {r}"
        )));
    }
    let s = v.shape();
    let mut dims = [s.h, s.w, s.d, s.c];
    let mut data: Vec<f64> = v.data().iter().map(|x| x.f64()).collect();
    for axis in 0..3 {
        let op = spline_operator(dims[axis], r);
        data = apply_axis(&data, dims, axis, &op, dims[axis] * r);
        dims[axis] *= r;
    }
    let out = Shape::new(dims[0], dims[1], dims[2], dims[3]);
    Ok(Volume::from_parts_unchecked(
        out,
        data.into_iter().map(|x| T::of(x.clamp(0.0, 1.0))).collect(),
    ))
}

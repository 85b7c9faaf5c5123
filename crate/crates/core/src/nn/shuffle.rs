//! Voxel shuffle: the permutation that trades `r^3` channels for an
//! `r`-times finer grid, plus nearest-neighbour resize.
//!
//! Input channel `c r^3 + (dy r + dx) r + dz` of voxel `(y, x, z)` lands on
//! output voxel `(r y + dy, r x + dx, r z + dz)`, channel `c`.

use crate::real::Real;
use crate::volume::Shape;

use super::tensor::Tensor;

/// Calls `f(fine_index, coarse_index)` for every element of the pairing
/// between a coarse `(h, w, d, c r^3)` and a fine `(r h, r w, r d, c)` batch.
fn for_each_pair(n: usize, coarse: Shape, r: usize, mut f: impl FnMut(usize, usize)) {
    let r3 = r * r * r;
    let c = coarse.c / r3;
    let fine = Shape::new(coarse.h * r, coarse.w * r, coarse.d * r, c);
    for b in 0..n {
        let (cb, fb) = (b * coarse.len(), b * fine.len());
        for y in 0..coarse.h {
            for x in 0..coarse.w {
                for z in 0..coarse.d {
                    for ch in 0..c {
                        for dy in 0..r {
                            for dx in 0..r {
                                for dz in 0..r {
                                    let ci = ch * r3 + (dy * r + dx) * r + dz;
                                    f(
                                        fb + fine.index(r * y + dy, r * x + dx, r * z + dz, ch),
                                        cb + coarse.index(y, x, z, ci),
                                    );
                                }
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Panics unless `x.shape.c` is divisible by `r^3`; callers validate first.
pub fn shuffle<T: Real>(x: &Tensor<T>, r: usize) -> Tensor<T> {
    let r3 = r * r * r;
    assert!(r >= 1 && x.shape.c % r3 == 0);
    let out_shape = Shape::new(x.shape.h * r, x.shape.w * r, x.shape.d * r, x.shape.c / r3);
    let mut out = Tensor::zeros(x.n, out_shape);
    for_each_pair(x.n, x.shape, r, |fi, ci| out.data[fi] = x.data[ci]);
    out
}

/// Panics unless the spatial dims are divisible by `r`; callers validate first.
pub fn unshuffle<T: Real>(x: &Tensor<T>, r: usize) -> Tensor<T> {
    let s = x.shape;
    assert!(r >= 1 && s.h % r == 0 && s.w % r == 0 && s.d % r == 0);
    let coarse = Shape::new(s.h / r, s.w / r, s.d / r, s.c * r * r * r);
    let mut out = Tensor::zeros(x.n, coarse);
    for_each_pair(x.n, coarse, r, |fi, ci| out.data[ci] = x.data[fi]);
    out
}

pub fn nn_resize<T: Real>(x: &Tensor<T>, r: usize) -> Tensor<T> {
    let s = x.shape;
    let o = s.scaled(r);
    let mut out = Tensor::zeros(x.n, o);
    let c = s.c;
    for b in 0..x.n {
        for y in 0..o.h {
            for xx in 0..o.w {
                for z in 0..o.d {
                    let src = b * s.len() + s.index(y / r, xx / r, z / r, 0);
                    let dst = b * o.len() + o.index(y, xx, z, 0);
                    out.data[dst..dst + c].copy_from_slice(&x.data[src..src + c]);
                }
            }
        }
    }
    out
}

/// Adjoint of [`nn_resize`]: sums each `r^3` block.
pub fn nn_resize_backward<T: Real>(dy: &Tensor<T>, r: usize) -> Tensor<T> {
    let o = dy.shape;
    let s = Shape::new(o.h / r, o.w / r, o.d / r, o.c);
    let mut dx = Tensor::zeros(dy.n, s);
    let c = s.c;
    for b in 0..dy.n {
        for y in 0..o.h {
            for xx in 0..o.w {
                for z in 0..o.d {
                    let src = b * o.len() + o.index(y, xx, z, 0);
                    let dst = b * s.len() + s.index(y / r, xx / r, z / r, 0);
                    for ch in 0..c {
                        dx.data[dst + ch] += dy.data[src + ch];
                    }
                }
            }
        }
    }
    dx
}

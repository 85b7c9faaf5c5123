//! Stride-`s` convolution and transposed convolution on channels-last
//! volumes, both lowered to a single GEMM per call.

use crate::real::{rm, tr, Real};
use crate::volume::Shape;

use super::tensor::Tensor;

/// Geometry of a cubic convolution kernel.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeom {
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
    pub cin: usize,
    pub cout: usize,
}

impl ConvGeom {
    /// Odd kernel with "same" zero padding.
    pub fn same(k: usize, stride: usize, cin: usize, cout: usize) -> Self {
        assert!(k % 2 == 1, "same padding needs an odd kernel");
        ConvGeom {
            k,
            stride,
            pad: k / 2,
            cin,
            cout,
        }
    }

    pub fn taps(&self) -> usize {
        self.k * self.k * self.k
    }

    /// Weight length for layout `[k, k, k, cin, cout]` (conv) or
    /// `[cin, k, k, k, cout]` (transposed conv).
    pub fn weight_len(&self) -> usize {
        self.taps() * self.cin * self.cout
    }

    fn conv_out(&self, n: usize) -> usize {
        (n + 2 * self.pad - self.k) / self.stride + 1
    }

    pub fn conv_output(&self, s: Shape) -> Shape {
        Shape::new(
            self.conv_out(s.h),
            self.conv_out(s.w),
            self.conv_out(s.d),
            self.cout,
        )
    }

    fn tconv_out(&self, n: usize) -> usize {
        (n - 1) * self.stride + self.k - 2 * self.pad
    }

    pub fn transposed_output(&self, s: Shape) -> Shape {
        Shape::new(
            self.tconv_out(s.h),
            self.tconv_out(s.w),
            self.tconv_out(s.d),
            self.cout,
        )
    }
}

/// Walks `(batch, out voxel, tap)` triples and the matching input voxel
/// index (or `None` in the zero padding).
fn for_each_tap(
    n: usize,
    ins: Shape,
    outs: Shape,
    g: &ConvGeom,
    mut f: impl FnMut(usize, usize, Option<usize>),
) {
    let (k, s, p) = (g.k as isize, g.stride as isize, g.pad as isize);
    let (h, w, d) = (ins.h as isize, ins.w as isize, ins.d as isize);
    let mut row = 0;
    for b in 0..n {
        let base = b * ins.voxels();
        for oy in 0..outs.h as isize {
            for ox in 0..outs.w as isize {
                for oz in 0..outs.d as isize {
                    let mut tap = 0;
                    for ky in 0..k {
                        let iy = oy * s + ky - p;
                        for kx in 0..k {
                            let ix = ox * s + kx - p;
                            for kz in 0..k {
                                let iz = oz * s + kz - p;
                                let inside =
                                    iy >= 0 && iy < h && ix >= 0 && ix < w && iz >= 0 && iz < d;
                                let idx = inside.then(|| base + ((iy * w + ix) * d + iz) as usize);
                                f(row, tap, idx);
                                tap += 1;
                            }
                        }
                    }
                    row += 1;
                }
            }
        }
    }
}

/// Stride-1 walk over contiguous runs: for each `(batch, out voxel, ky,
/// kx)` the valid `kz` taps read consecutive input voxels and fill
/// consecutive column slots. Calls `f(col offset, input offset, length)` in
/// units of voxels.
fn for_each_run(
    n: usize,
    ins: Shape,
    outs: Shape,
    g: &ConvGeom,
    mut f: impl FnMut(usize, usize, usize),
) {
    let (k, p) = (g.k as isize, g.pad as isize);
    let (h, w, d) = (ins.h as isize, ins.w as isize, ins.d as isize);
    let taps = g.taps();
    let mut row = 0;
    for b in 0..n {
        let base = b * ins.voxels();
        for oy in 0..outs.h as isize {
            for ox in 0..outs.w as isize {
                for oz in 0..outs.d as isize {
                    let kz0 = (p - oz).max(0);
                    let kz1 = (d + p - oz).min(k);
                    if kz0 < kz1 {
                        for ky in 0..k {
                            let iy = oy + ky - p;
                            if iy < 0 || iy >= h {
                                continue;
                            }
                            for kx in 0..k {
                                let ix = ox + kx - p;
                                if ix < 0 || ix >= w {
                                    continue;
                                }
                                let tap = ((ky * k + kx) * k + kz0) as usize;
                                let src = base + ((iy * w + ix) * d + oz + kz0 - p) as usize;
                                f(row * taps + tap, src, (kz1 - kz0) as usize);
                            }
                        }
                    }
                    row += 1;
                }
            }
        }
    }
}

fn im2col<T: Real>(x: &Tensor<T>, outs: Shape, g: &ConvGeom) -> Vec<T> {
    let cin = g.cin;
    let cols = g.taps() * cin;
    let mut col = vec![T::zero(); x.n * outs.voxels() * cols];
    if g.stride == 1 {
        for_each_run(x.n, x.shape, outs, g, |dst, src, len| {
            col[dst * cin..(dst + len) * cin]
                .copy_from_slice(&x.data[src * cin..(src + len) * cin]);
        });
        return col;
    }
    for_each_tap(x.n, x.shape, outs, g, |row, tap, idx| {
        if let Some(i) = idx {
            let dst = row * cols + tap * cin;
            col[dst..dst + cin].copy_from_slice(&x.data[i * cin..(i + 1) * cin]);
        }
    });
    col
}

fn col2im<T: Real>(col: &[T], n: usize, ins: Shape, outs: Shape, g: &ConvGeom) -> Tensor<T> {
    let cin = g.cin;
    let cols = g.taps() * cin;
    let mut dx = Tensor::zeros(n, ins.with_channels(cin));
    if g.stride == 1 {
        for_each_run(n, ins, outs, g, |src, dst, len| {
            for (a, b) in dx.data[dst * cin..(dst + len) * cin]
                .iter_mut()
                .zip(&col[src * cin..(src + len) * cin])
            {
                *a += *b;
            }
        });
        return dx;
    }
    for_each_tap(n, ins, outs, g, |row, tap, idx| {
        if let Some(i) = idx {
            let src = row * cols + tap * cin;
            for (a, b) in dx.data[i * cin..(i + 1) * cin]
                .iter_mut()
                .zip(&col[src..src + cin])
            {
                *a += *b;
            }
        }
    });
    dx
}

#[derive(Debug, Clone)]
enum Saved<T> {
    /// im2col matrix, `[rows, taps * cin]`.
    Col(Vec<T>),
    /// The input itself, for the tap form used when `cout < cin`.
    Input(Vec<T>),
}

/// Saved state for the convolution backward pass.
#[derive(Debug, Clone)]
pub struct ConvCache<T> {
    saved: Saved<T>,
    n: usize,
    in_shape: Shape,
    out_shape: Shape,
}

/// `[taps, cin, cout]` weights regrouped as `[cin, taps * cout]`.
fn tap_major<T: Real>(w: &[T], g: &ConvGeom) -> Vec<T> {
    let (taps, cin, cout) = (g.taps(), g.cin, g.cout);
    let mut out = vec![T::zero(); w.len()];
    for t in 0..taps {
        for ci in 0..cin {
            let src = (t * cin + ci) * cout;
            let dst = (ci * taps + t) * cout;
            out[dst..dst + cout].copy_from_slice(&w[src..src + cout]);
        }
    }
    out
}

/// `y = conv(x, w) + b` with weights laid out `[k, k, k, cin, cout]`.
///
/// With fewer output than input channels the per-tap products `x W_t` are
/// formed first and summed at shifted positions, which needs a
/// `taps * cout` rather than a `taps * cin` wide intermediate.
pub fn conv3d_forward<T: Real>(
    x: &Tensor<T>,
    w: &[T],
    b: Option<&[T]>,
    g: &ConvGeom,
) -> (Tensor<T>, ConvCache<T>) {
    assert_eq!(x.shape.c, g.cin, "conv input channels");
    assert_eq!(w.len(), g.weight_len(), "conv weight length");
    let outs = g.conv_output(x.shape);
    let m = x.n * outs.voxels();
    let mut y = Tensor::zeros(x.n, outs);
    let saved = if g.cout < g.cin {
        let mx = x.rows();
        let nc = g.taps() * g.cout;
        let co = g.cout;
        let mut z = vec![T::zero(); mx * nc];
        T::gemm(
            mx,
            g.cin,
            nc,
            T::one(),
            &x.data,
            rm(g.cin),
            &tap_major(w, g),
            rm(nc),
            T::zero(),
            &mut z,
            rm(nc),
        );
        for_each_tap(x.n, x.shape, outs, g, |row, tap, idx| {
            if let Some(i) = idx {
                let src = i * nc + tap * co;
                for (a, v) in y.data[row * co..(row + 1) * co]
                    .iter_mut()
                    .zip(&z[src..src + co])
                {
                    *a += *v;
                }
            }
        });
        Saved::Input(x.data.clone())
    } else {
        let col = im2col(x, outs, g);
        let kk = g.taps() * g.cin;
        T::gemm(
            m,
            kk,
            g.cout,
            T::one(),
            &col,
            rm(kk),
            w,
            rm(g.cout),
            T::zero(),
            &mut y.data,
            rm(g.cout),
        );
        Saved::Col(col)
    };
    if let Some(b) = b {
        add_bias(&mut y.data, b);
    }
    (
        y,
        ConvCache {
            saved,
            n: x.n,
            in_shape: x.shape,
            out_shape: outs,
        },
    )
}

/// Accumulates weight/bias gradients and returns the input gradient.
pub fn conv3d_backward<T: Real>(
    cache: &ConvCache<T>,
    w: &[T],
    dy: &Tensor<T>,
    g: &ConvGeom,
    dw: &mut [T],
    db: Option<&mut [T]>,
    need_dx: bool,
) -> Option<Tensor<T>> {
    let m = cache.n * cache.out_shape.voxels();
    assert_eq!(dy.data.len(), m * g.cout);
    if let Some(db) = db {
        bias_grad(&dy.data, db);
    }
    match &cache.saved {
        Saved::Col(col) => {
            let kk = g.taps() * g.cin;
            T::gemm(
                kk,
                m,
                g.cout,
                T::one(),
                col,
                tr(kk),
                &dy.data,
                rm(g.cout),
                T::one(),
                dw,
                rm(g.cout),
            );
            if !need_dx {
                return None;
            }
            let mut dcol = vec![T::zero(); m * kk];
            T::gemm(
                m,
                g.cout,
                kk,
                T::one(),
                &dy.data,
                rm(g.cout),
                w,
                tr(g.cout),
                T::zero(),
                &mut dcol,
                rm(kk),
            );
            Some(col2im(&dcol, cache.n, cache.in_shape, cache.out_shape, g))
        }
        Saved::Input(x) => {
            let mx = cache.n * cache.in_shape.voxels();
            let (taps, co) = (g.taps(), g.cout);
            let nc = taps * co;
            let mut dz = vec![T::zero(); mx * nc];
            for_each_tap(
                cache.n,
                cache.in_shape,
                cache.out_shape,
                g,
                |row, tap, idx| {
                    if let Some(i) = idx {
                        let dst = i * nc + tap * co;
                        for (a, v) in dz[dst..dst + co]
                            .iter_mut()
                            .zip(&dy.data[row * co..(row + 1) * co])
                        {
                            *a += *v;
                        }
                    }
                },
            );
            let mut dwt = vec![T::zero(); g.cin * nc];
            T::gemm(
                g.cin,
                mx,
                nc,
                T::one(),
                x,
                tr(g.cin),
                &dz,
                rm(nc),
                T::zero(),
                &mut dwt,
                rm(nc),
            );
            for t in 0..taps {
                for ci in 0..g.cin {
                    let src = (ci * taps + t) * co;
                    let dst = (t * g.cin + ci) * co;
                    for (a, v) in dw[dst..dst + co].iter_mut().zip(&dwt[src..src + co]) {
                        *a += *v;
                    }
                }
            }
            if !need_dx {
                return None;
            }
            let mut dx = Tensor::zeros(cache.n, cache.in_shape);
            T::gemm(
                mx,
                nc,
                g.cin,
                T::one(),
                &dz,
                rm(nc),
                &tap_major(w, g),
                tr(nc),
                T::zero(),
                &mut dx.data,
                rm(g.cin),
            );
            Some(dx)
        }
    }
}

/// Saved state for the transposed-convolution backward pass.
#[derive(Debug, Clone)]
pub struct TConvCache<T> {
    x: Tensor<T>,
    out_shape: Shape,
}

/// Visits `(input row, tap, output voxel)` for the scatter form
/// `out[s i + t - p] += x[i] W[t]`.
fn for_each_scatter(
    n: usize,
    ins: Shape,
    outs: Shape,
    g: &ConvGeom,
    mut f: impl FnMut(usize, usize, usize),
) {
    let (k, s, p) = (g.k as isize, g.stride as isize, g.pad as isize);
    let (h, w, d) = (outs.h as isize, outs.w as isize, outs.d as isize);
    let mut row = 0;
    for b in 0..n {
        let base = b * outs.voxels();
        for iy in 0..ins.h as isize {
            for ix in 0..ins.w as isize {
                for iz in 0..ins.d as isize {
                    let mut tap = 0;
                    for ky in 0..k {
                        let oy = iy * s + ky - p;
                        for kx in 0..k {
                            let ox = ix * s + kx - p;
                            for kz in 0..k {
                                let oz = iz * s + kz - p;
                                if oy >= 0 && oy < h && ox >= 0 && ox < w && oz >= 0 && oz < d {
                                    f(row, tap, base + ((oy * w + ox) * d + oz) as usize);
                                }
                                tap += 1;
                            }
                        }
                    }
                    row += 1;
                }
            }
        }
    }
}

/// Transposed convolution with weights laid out `[cin, k, k, k, cout]`.
pub fn conv_transpose3d_forward<T: Real>(
    x: &Tensor<T>,
    w: &[T],
    b: Option<&[T]>,
    g: &ConvGeom,
) -> (Tensor<T>, TConvCache<T>) {
    assert_eq!(x.shape.c, g.cin, "transposed conv input channels");
    assert_eq!(w.len(), g.weight_len(), "transposed conv weight length");
    let outs = g.transposed_output(x.shape);
    let m = x.rows();
    let nc = g.taps() * g.cout;
    let mut cols = vec![T::zero(); m * nc];
    T::gemm(
        m,
        g.cin,
        nc,
        T::one(),
        &x.data,
        rm(g.cin),
        w,
        rm(nc),
        T::zero(),
        &mut cols,
        rm(nc),
    );
    let mut y = Tensor::zeros(x.n, outs);
    let co = g.cout;
    for_each_scatter(x.n, x.shape, outs, g, |row, tap, o| {
        let src = row * nc + tap * co;
        for (a, v) in y.data[o * co..(o + 1) * co]
            .iter_mut()
            .zip(&cols[src..src + co])
        {
            *a += *v;
        }
    });
    if let Some(b) = b {
        add_bias(&mut y.data, b);
    }
    (
        y,
        TConvCache {
            x: x.clone(),
            out_shape: outs,
        },
    )
}

pub fn conv_transpose3d_backward<T: Real>(
    cache: &TConvCache<T>,
    w: &[T],
    dy: &Tensor<T>,
    g: &ConvGeom,
    dw: &mut [T],
    db: Option<&mut [T]>,
    need_dx: bool,
) -> Option<Tensor<T>> {
    let x = &cache.x;
    let m = x.rows();
    let nc = g.taps() * g.cout;
    let co = g.cout;
    let mut dcols = vec![T::zero(); m * nc];
    for_each_scatter(x.n, x.shape, cache.out_shape, g, |row, tap, o| {
        let dst = row * nc + tap * co;
        dcols[dst..dst + co].copy_from_slice(&dy.data[o * co..(o + 1) * co]);
    });
    T::gemm(
        g.cin,
        m,
        nc,
        T::one(),
        &x.data,
        tr(g.cin),
        &dcols,
        rm(nc),
        T::one(),
        dw,
        rm(nc),
    );
    if let Some(db) = db {
        bias_grad(&dy.data, db);
    }
    if !need_dx {
        return None;
    }
    let mut dx = Tensor::zeros(x.n, x.shape);
    T::gemm(
        m,
        nc,
        g.cin,
        T::one(),
        &dcols,
        rm(nc),
        w,
        tr(nc),
        T::zero(),
        &mut dx.data,
        rm(g.cin),
    );
    Some(dx)
}

pub(crate) fn add_bias<T: Real>(y: &mut [T], b: &[T]) {
    for row in y.chunks_mut(b.len()) {
        for (v, bb) in row.iter_mut().zip(b) {
            *v += *bb;
        }
    }
}

pub(crate) fn bias_grad<T: Real>(dy: &[T], db: &mut [T]) {
    for row in dy.chunks(db.len()) {
        for (g, v) in db.iter_mut().zip(row) {
            *g += *v;
        }
    }
}

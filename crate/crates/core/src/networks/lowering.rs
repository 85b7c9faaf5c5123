//! Rewrites of the resize-convolution and transposed-convolution upsampling
//! blocks as one low-resolution convolution to `8 c` channels followed by a
//! voxel shuffle.
//!
//! Both blocks are linear in their weights and produce, for each of the
//! eight output phases, a low-resolution convolution of the input. The
//! resize-convolution phase kernels are sums of high-resolution taps; the
//! transposed-convolution taps map one-to-one onto (phase, low-resolution
//! tap) pairs. The stored parameters keep their original layout and the
//! gradient flows back through the adjoint of the same index map.

use crate::real::Real;

const R: usize = 2;
const R3: usize = 8;

/// Index map from a block's parameters onto sub-pixel convolution weights
/// of layout `[kl, kl, kl, cin, 8 cout]`, output channel `co * 8 + phase`.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Lowering {
    /// Low-resolution kernel width.
    pub kl: usize,
    pub cin: usize,
    pub cout: usize,
    /// `(source weight index, destination weight index)`.
    pairs: Vec<(usize, usize)>,
}

/// Per-axis `(phase, source tap, low-resolution tap)` triples.
fn resize_axis(k: usize) -> (usize, Vec<(usize, usize, usize)>) {
    let p = k as isize / 2;
    let q = (p + 1) / 2;
    let mut out = Vec::new();
    for d in 0..R as isize {
        for t in 0..k as isize {
            // nearest-neighbour source of high-res voxel 2 i + d + (t - p)
            let o = (d + t - p).div_euclid(R as isize);
            out.push((d as usize, t as usize, (o + q) as usize));
        }
    }
    (2 * q as usize + 1, out)
}

fn transposed_axis(k: usize) -> (usize, Vec<(usize, usize, usize)>) {
    let mut out = Vec::new();
    for d in 0..R {
        for j in 0..k {
            out.push((d, d + R * (k - 1 - j), j));
        }
    }
    (k, out)
}

impl Lowering {
    fn build(
        axis: (usize, Vec<(usize, usize, usize)>),
        cin: usize,
        cout: usize,
        src_index: impl Fn([usize; 3], usize, usize) -> usize,
    ) -> Self {
        let (kl, taps) = axis;
        let nc = R3 * cout;
        let mut pairs = Vec::with_capacity(taps.len().pow(3) * cin * cout);
        for &(dy, ty, ly) in &taps {
            for &(dx, tx, lx) in &taps {
                for &(dz, tz, lz) in &taps {
                    let phase = (dy * R + dx) * R + dz;
                    let ltap = (ly * kl + lx) * kl + lz;
                    for ci in 0..cin {
                        for co in 0..cout {
                            let dst = (ltap * cin + ci) * nc + co * R3 + phase;
                            pairs.push((src_index([ty, tx, tz], ci, co), dst));
                        }
                    }
                }
            }
        }
        Lowering {
            kl,
            cin,
            cout,
            pairs,
        }
    }

    /// Nearest-neighbour x2 resize followed by a `k`-wide same convolution
    /// with weights `[k, k, k, cin, cout]`.
    pub fn resize_conv(k: usize, cin: usize, cout: usize) -> Self {
        Self::build(resize_axis(k), cin, cout, |[y, x, z], ci, co| {
            (((y * k + x) * k + z) * cin + ci) * cout + co
        })
    }

    /// Stride-2 transposed convolution with a `2k`-wide kernel of layout
    /// `[cin, 2k, 2k, 2k, cout]` and padding `k - 1`.
    pub fn transposed(k: usize, cin: usize, cout: usize) -> Self {
        let kt = R * k;
        Self::build(transposed_axis(k), cin, cout, |[y, x, z], ci, co| {
            (((ci * kt + y) * kt + x) * kt + z) * cout + co
        })
    }

    pub fn lowered_len(&self) -> usize {
        self.kl.pow(3) * self.cin * self.cout * R3
    }

    /// Sub-pixel weights and phase-replicated biases.
    pub fn weights<T: Real>(&self, w: &[T], b: &[T]) -> (Vec<T>, Vec<T>) {
        let mut ws = vec![T::zero(); self.lowered_len()];
        for &(s, d) in &self.pairs {
            ws[d] += w[s];
        }
        let bs = (0..self.cout * R3).map(|j| b[j / R3]).collect();
        (ws, bs)
    }

    /// Accumulates the gradients of the lowered weights into the block's
    /// own parameter gradients.
    pub fn lift_grads<T: Real>(&self, dws: &[T], dbs: &[T], dw: &mut [T], db: &mut [T]) {
        for &(s, d) in &self.pairs {
            dw[s] += dws[d];
        }
        for (j, g) in dbs.iter().enumerate() {
            db[j / R3] += *g;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::conv::{conv3d_forward, conv_transpose3d_forward, ConvGeom};
    use crate::nn::{shuffle, Tensor};
    use crate::volume::Shape;
    use rand::{Rng, SeedableRng};

    fn rand_vec(n: usize, seed: u64) -> Vec<f64> {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
    }

    fn input(shape: Shape, seed: u64) -> Tensor<f64> {
        Tensor {
            n: 2,
            shape,
            data: rand_vec(2 * shape.len(), seed),
        }
    }

    fn lowered(l: &Lowering, x: &Tensor<f64>, w: &[f64], b: &[f64]) -> Tensor<f64> {
        let (ws, bs) = l.weights(w, b);
        let g = ConvGeom::same(l.kl, 1, l.cin, l.cout * R3);
        shuffle::shuffle(&conv3d_forward(x, &ws, Some(&bs), &g).0, R)
    }

    fn assert_close(a: &Tensor<f64>, b: &Tensor<f64>) {
        assert_eq!((a.n, a.shape), (b.n, b.shape));
        for (u, v) in a.data.iter().zip(&b.data) {
            assert!((u - v).abs() < 1e-12, "{u} vs {v}");
        }
    }

    #[test]
    fn resize_conv_matches_direct_path() {
        for k in [1, 3, 5, 7] {
            let (cin, cout) = (2, 3);
            let x = input(Shape::new(3, 4, 5, cin), k as u64);
            let g = ConvGeom::same(k, 1, cin, cout);
            let w = rand_vec(g.weight_len(), 10 + k as u64);
            let b = rand_vec(cout, 20);
            let direct = conv3d_forward(&shuffle::nn_resize(&x, 2), &w, Some(&b), &g).0;
            assert_close(
                &lowered(&Lowering::resize_conv(k, cin, cout), &x, &w, &b),
                &direct,
            );
        }
    }

    #[test]
    fn transposed_matches_direct_path() {
        for k in [1, 3, 5] {
            let (cin, cout) = (3, 2);
            let x = input(Shape::new(4, 3, 5, cin), k as u64);
            let g = ConvGeom {
                k: 2 * k,
                stride: 2,
                pad: k - 1,
                cin,
                cout,
            };
            let w = rand_vec(g.weight_len(), 30 + k as u64);
            let b = rand_vec(cout, 40);
            let direct = conv_transpose3d_forward(&x, &w, Some(&b), &g).0;
            assert_close(
                &lowered(&Lowering::transposed(k, cin, cout), &x, &w, &b),
                &direct,
            );
        }
    }

    #[test]
    fn transposed_map_is_a_bijection() {
        let l = Lowering::transposed(3, 2, 2);
        let mut dst: Vec<usize> = l.pairs.iter().map(|p| p.1).collect();
        dst.sort_unstable();
        assert_eq!(dst, (0..l.lowered_len()).collect::<Vec<_>>());
    }

    #[test]
    fn lift_is_the_adjoint() {
        // <L w, v> == <w, L^T v> for the weight map
        let l = Lowering::resize_conv(3, 2, 2);
        let w = rand_vec(27 * 4, 1);
        let v = rand_vec(l.lowered_len(), 2);
        let (lw, _) = l.weights(&w, &[0.0; 2]);
        let mut ltv = vec![0.0; w.len()];
        let mut db = vec![0.0; 2];
        l.lift_grads(&v, &[0.0; 16], &mut ltv, &mut db);
        let lhs: f64 = lw.iter().zip(&v).map(|(a, b)| a * b).sum();
        let rhs: f64 = w.iter().zip(&ltv).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-12);
    }
}

//! End-to-end acceptance checks, run in sequence so the runtime limits are
//! measured on an otherwise idle process. Prints one line per check and
//! exits non-zero if any fails.
//!
//! Positional arguments select checks by substring, e.g.
//! `cargo test --test acceptance -- shuffle`.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use srgan3d::checkpoint;
use srgan3d::config::RunConfig;
use srgan3d::losses::{
    content_loss, d_loss, g_adv_loss, g_total_loss, gdl_loss, mse_loss, LossConfig,
};
use srgan3d::metrics::{psnr, psnr_from_mse, ssim3d, Method, SsimParams};
use srgan3d::networks::{Discriminator, DiscriminatorConfig, Generator, GeneratorConfig, Mode};
use srgan3d::nn::Tensor;
use srgan3d::params::NetworkParams;
use srgan3d::patch::{extract_patches, stitch_patches, PatchGrid};
use srgan3d::pipeline::infer_patched;
use srgan3d::trainer::{TrainConfig, Trainer};
use srgan3d::upsampling::{
    phase_discrepancy, polyphase_components, subpixel_block, subpixel_nn_block, subpixel_nn_init,
    subpixel_to_transposed, voxel_shuffle, voxel_unshuffle, ConvKernel, TransposedKernel,
    UpsampleMethod, UpsampleSpec,
};
use srgan3d::workflow::{self, Model};
use srgan3d::{Shape, Volume};

// Pinned tolerances and limits.
const SHUFFLE_LINEARITY_TOL: f64 = 1e-12;
const SHUFFLE_TIME: Duration = Duration::from_secs(5);
const TCONV_REL_TOL: f64 = 1e-5;
const TCONV_TIME: Duration = Duration::from_secs(10);
const NN_INIT_TOL: f64 = 1e-5;
const NN_INIT_MIN_FAILS: usize = 19;
const NN_INIT_TIME: Duration = Duration::from_secs(10);
const LOSS_TOL: f64 = 1e-10;
/// Closed forms whose inputs are decimal constants without an exact binary
/// value (0.9, 1e-3) may differ from the decimal result by rounding only.
const DECIMAL_ULPS: f64 = 4.0;
const GRAD_STEP: f64 = 1e-6;
const GRAD_REL_TOL: f64 = 1e-3;
const GRAD_FLOOR: f64 = 1e-8;
const GRAD_MIN_PASS: f64 = 0.99;
const GRAD_TIME: Duration = Duration::from_secs(120);
const METRIC_TOL: f64 = 1e-9;
const SSIM_ORACLE_TOL: f64 = 1e-6;
const PATCHED_TOL: f64 = 1e-5;
const DESK_MARGIN_DB: f64 = 0.3;
const DESK_TIME_PER_METHOD: Duration = Duration::from_secs(30 * 60);

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn random_volume(shape: Shape, rng: &mut ChaCha8Rng) -> Volume<f64> {
    Volume::from_fn(shape, |_, _, _, _| rng.gen_range(-1.0..1.0))
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

fn to_f64(v: &Volume<f32>) -> Vec<f64> {
    v.data().iter().map(|&x| x as f64).collect()
}

// ---------------------------------------------------------------- shuffle

fn shuffle_suite() -> Outcome {
    let t0 = Instant::now();
    let mut g = rng(1);
    let (mut identity, mut multiset, mut index, mut linear) = (0, 0, 0, 0);
    let mut worst_lin = 0.0f64;
    for i in 0..100 {
        let r = [1, 2, 4][i % 3];
        let r3 = r * r * r;
        let c = g.gen_range(1..=2);
        let s = Shape::new(
            g.gen_range(1..=4),
            g.gen_range(1..=4),
            g.gen_range(1..=4),
            c * r3,
        );
        let x = random_volume(s, &mut g);
        let y = random_volume(s, &mut g);
        let up = voxel_shuffle(&x, r).unwrap();

        if voxel_unshuffle(&up, r).unwrap().data() == x.data() {
            identity += 1;
        }
        let mut a: Vec<u64> = x.data().iter().map(|v| v.to_bits()).collect();
        let mut b: Vec<u64> = up.data().iter().map(|v| v.to_bits()).collect();
        a.sort_unstable();
        b.sort_unstable();
        if a == b {
            multiset += 1;
        }
        let placed = (0..s.h).all(|yy| {
            (0..s.w).all(|xx| {
                (0..s.d).all(|zz| {
                    (0..s.c).all(|ci| {
                        let (ch, ph) = (ci / r3, ci % r3);
                        let (dy, dx, dz) = (ph / (r * r), (ph / r) % r, ph % r);
                        up.get(r * yy + dy, r * xx + dx, r * zz + dz, ch) == x.get(yy, xx, zz, ci)
                    })
                })
            })
        });
        if placed {
            index += 1;
        }
        let (ca, cb) = (g.gen_range(-2.0..2.0), g.gen_range(-2.0..2.0));
        let combo = Volume::from_fn(s, |yy, xx, zz, ci| {
            ca * x.get(yy, xx, zz, ci) + cb * y.get(yy, xx, zz, ci)
        });
        let lhs = voxel_shuffle(&combo, r).unwrap();
        let uy = voxel_shuffle(&y, r).unwrap();
        let rhs: Vec<f64> = up
            .data()
            .iter()
            .zip(uy.data())
            .map(|(p, q)| ca * p + cb * q)
            .collect();
        let err = max_abs_diff(lhs.data(), &rhs);
        worst_lin = worst_lin.max(err);
        if err <= SHUFFLE_LINEARITY_TOL {
            linear += 1;
        }
    }
    let dt = t0.elapsed();
    let pass =
        identity == 100 && multiset == 100 && index == 100 && linear == 100 && dt < SHUFFLE_TIME;
    outcome(
        pass,
        format!(
            "identity {identity}/100, multiset {multiset}/100, placement {index}/100, linear {linear}/100 (worst {worst_lin:.1e}), {:.2}s",
            dt.as_secs_f64()
        ),
    )
}

// ------------------------------------------------- sub-pixel as transposed

/// Stride-2 transposed convolution, `out[2 i + t - pad] += x[i] w[t]` per axis.
fn transposed_oracle(
    x: &Volume<f64>,
    w: &TransposedKernel<f64>,
    stride: usize,
    pad: usize,
) -> Volume<f64> {
    let s = x.shape();
    let k = w.k;
    let out_dim = |n: usize| stride * (n - 1) + k - 2 * pad;
    let o = Shape::new(out_dim(s.h), out_dim(s.w), out_dim(s.d), w.cout);
    let mut acc = vec![0.0; o.len()];
    for y in 0..s.h {
        for xx in 0..s.w {
            for z in 0..s.d {
                for ci in 0..s.c {
                    let v = x.get(y, xx, z, ci);
                    for ty in 0..k {
                        for tx in 0..k {
                            for tz in 0..k {
                                let oy = (stride * y + ty) as isize - pad as isize;
                                let ox = (stride * xx + tx) as isize - pad as isize;
                                let oz = (stride * z + tz) as isize - pad as isize;
                                if oy < 0 || ox < 0 || oz < 0 {
                                    continue;
                                }
                                let (oy, ox, oz) = (oy as usize, ox as usize, oz as usize);
                                if oy >= o.h || ox >= o.w || oz >= o.d {
                                    continue;
                                }
                                for co in 0..w.cout {
                                    acc[o.index(oy, ox, oz, co)] +=
                                        v * w.weight[w.index(ci, ty, tx, tz, co)];
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    Volume::from_fn(o, |y, xx, z, co| acc[o.index(y, xx, z, co)] + w.bias[co])
}

fn rel_err(got: &[f64], want: &[f64]) -> f64 {
    let scale = want
        .iter()
        .fold(0.0f64, |m, v| m.max(v.abs()))
        .max(f64::MIN_POSITIVE);
    max_abs_diff(got, want) / scale
}

fn subpixel_is_transposed_conv() -> Outcome {
    let t0 = Instant::now();
    let mut g = rng(2);
    let mut worst = 0.0f64;
    let mut ok = 0;
    for _ in 0..20 {
        let k = [1, 3, 5][g.gen_range(0..3)];
        let (cin, c) = (g.gen_range(1..=3), g.gen_range(1..=2));
        let s = Shape::new(
            g.gen_range(3..=5),
            g.gen_range(3..=5),
            g.gen_range(3..=5),
            cin,
        );
        let x = random_volume(s, &mut g);
        let mut kernel = ConvKernel::<f64>::zeros(k, cin, 8 * c);
        kernel
            .weight
            .iter_mut()
            .for_each(|w| *w = g.gen_range(-0.5..0.5));
        for ch in 0..c {
            let b = g.gen_range(-0.5..0.5);
            kernel.bias[ch * 8..(ch + 1) * 8]
                .iter_mut()
                .for_each(|v| *v = b);
        }
        let t = subpixel_to_transposed(&kernel).unwrap();
        let want = transposed_oracle(&x, &t, 2, t.stride2_pad());

        let kf = ConvKernel {
            k,
            cin,
            cout: 8 * c,
            weight: kernel.weight.iter().map(|&v| v as f32).collect(),
            bias: kernel.bias.iter().map(|&v| v as f32).collect(),
        };
        let tf = TransposedKernel {
            k: t.k,
            cin,
            cout: c,
            weight: t.weight.iter().map(|&v| v as f32).collect(),
            bias: t.bias.iter().map(|&v| v as f32).collect(),
        };
        let xf = x.cast::<f32>();
        let sub = subpixel_block(
            &xf,
            &kf,
            &UpsampleSpec::new(UpsampleMethod::Subpixel, k, 8 * c),
        )
        .unwrap();
        let tconv = subpixel_nn_block(
            &xf,
            &tf,
            &UpsampleSpec::new(UpsampleMethod::SubpixelNn, k, 8 * c),
        )
        .unwrap();
        let e = rel_err(&to_f64(&sub), want.data()).max(rel_err(&to_f64(&tconv), want.data()));
        worst = worst.max(e);
        if e <= TCONV_REL_TOL && sub.shape() == want.shape() {
            ok += 1;
        }
    }
    let dt = t0.elapsed();
    outcome(
        ok == 20 && dt < TCONV_TIME,
        format!(
            "{ok}/20 draws within {TCONV_REL_TOL:e} (worst {worst:.2e}), {:.2}s",
            dt.as_secs_f64()
        ),
    )
}

// ----------------------------------------------------------- NN init

/// Stride-1 transposed convolution with a `k`-wide kernel and "same"
/// padding, then a nearest-neighbour ×2 resize.
fn tconv_then_resize(x: &Volume<f64>, base: &TransposedKernel<f64>) -> Volume<f64> {
    transposed_oracle(x, base, 1, base.k / 2).nn_upsample(2)
}

/// Nearest-neighbour ×2 resize, then a pointwise convolution.
fn resize_then_pointwise(x: &Volume<f64>, base: &TransposedKernel<f64>) -> Volume<f64> {
    let up = x.nn_upsample(2);
    let s = up.shape();
    Volume::from_fn(s.with_channels(base.cout), |y, xx, z, co| {
        base.bias[co]
            + (0..s.c)
                .map(|ci| up.get(y, xx, z, ci) * base.weight[base.index(ci, 0, 0, 0, co)])
                .sum::<f64>()
    })
}

fn nn_init_is_checkerboard_free() -> Outcome {
    let t0 = Instant::now();
    let (mut resize_ok, mut phases_ok, mut plain_worse) = (0, 0, 0);
    let mut worst = 0.0f64;
    for seed in 0..20u64 {
        let mut g = rng(300 + seed);
        let k = if seed % 2 == 0 { 1 } else { 3 };
        let (cin, c) = (g.gen_range(1..=3), g.gen_range(1..=2));
        let s = Shape::new(
            g.gen_range(3..=5),
            g.gen_range(3..=5),
            g.gen_range(3..=5),
            cin,
        );
        let x = random_volume(s, &mut g);
        let bound = 1.0 / ((k * k * k * cin) as f64).sqrt();
        let mut base = TransposedKernel::<f64>::zeros(k, cin, c);
        base.weight
            .iter_mut()
            .for_each(|w| *w = g.gen_range(-bound..bound));
        base.bias
            .iter_mut()
            .for_each(|b| *b = g.gen_range(-bound..bound));
        let spec = UpsampleSpec::new(UpsampleMethod::SubpixelNn, k, 8 * c);
        let nn = subpixel_nn_init(&spec, &base).unwrap();
        let nnf = TransposedKernel {
            k: nn.k,
            cin,
            cout: c,
            weight: nn.weight.iter().map(|&v| v as f32).collect(),
            bias: nn.bias.iter().map(|&v| v as f32).collect(),
        };
        let out = subpixel_nn_block(&x.cast::<f32>(), &nnf, &spec).unwrap();

        let want = if k == 1 {
            resize_then_pointwise(&x, &base)
        } else {
            tconv_then_resize(&x, &base)
        };
        let e = max_abs_diff(&to_f64(&out), want.data());
        worst = worst.max(e);
        if e <= NN_INIT_TOL {
            resize_ok += 1;
        }
        let comps = polyphase_components(&out, 2).unwrap();
        if comps.iter().all(|p| p.data() == comps[0].data()) {
            phases_ok += 1;
        }

        let mut plain = ConvKernel::<f32>::zeros(k, cin, 8 * c);
        plain
            .weight
            .iter_mut()
            .for_each(|w| *w = g.gen_range(-bound..bound) as f32);
        plain
            .bias
            .iter_mut()
            .for_each(|b| *b = g.gen_range(-bound..bound) as f32);
        let sub = subpixel_block(
            &x.cast::<f32>(),
            &plain,
            &UpsampleSpec::new(UpsampleMethod::Subpixel, k, 8 * c),
        )
        .unwrap();
        if phase_discrepancy(&sub, 2).unwrap() > phase_discrepancy(&out, 2).unwrap() {
            plain_worse += 1;
        }
    }
    let dt = t0.elapsed();
    outcome(
        resize_ok == 20 && phases_ok == 20 && plain_worse >= NN_INIT_MIN_FAILS && dt < NN_INIT_TIME,
        format!(
            "resize path {resize_ok}/20 (worst {worst:.1e}), equal phases {phases_ok}/20, plain sub-pixel shows a phase pattern in {plain_worse}/20, {:.2}s",
            dt.as_secs_f64()
        ),
    )
}

// ----------------------------------------------------------------- losses

fn mse_oracle(a: &Volume<f64>, b: &Volume<f64>) -> f64 {
    let s = a.shape();
    let mut sum = 0.0;
    for y in 0..s.h {
        for x in 0..s.w {
            for z in 0..s.d {
                for c in 0..s.c {
                    let d = a.get(y, x, z, c) - b.get(y, x, z, c);
                    sum += d * d;
                }
            }
        }
    }
    sum / s.len() as f64
}

fn gdl_oracle(a: &Volume<f64>, b: &Volume<f64>) -> f64 {
    let s = a.shape();
    let mut total = 0.0;
    for (dy, dx, dz) in [(1, 0, 0), (0, 1, 0), (0, 0, 1)] {
        let (mut sum, mut count) = (0.0, 0usize);
        for y in 0..s.h - dy {
            for x in 0..s.w - dx {
                for z in 0..s.d - dz {
                    for c in 0..s.c {
                        let ga = (a.get(y + dy, x + dx, z + dz, c) - a.get(y, x, z, c)).abs();
                        let gb = (b.get(y + dy, x + dx, z + dz, c) - b.get(y, x, z, c)).abs();
                        sum += (ga - gb) * (ga - gb);
                        count += 1;
                    }
                }
            }
        }
        total += sum / count as f64;
    }
    total
}

fn near_decimal(got: f64, want: f64) -> bool {
    (got - want).abs() <= DECIMAL_ULPS * f64::EPSILON * want.abs()
}

fn losses_match_oracles() -> Outcome {
    let mut g = rng(4);
    let cfg = LossConfig::default();
    let mut worst = 0.0f64;
    for _ in 0..10 {
        let a = Volume::from_fn(Shape::cube(4), |_, _, _, _| g.gen::<f64>());
        let b = Volume::from_fn(Shape::cube(4), |_, _, _, _| g.gen::<f64>());
        let (pr, pf) = (g.gen::<f64>(), g.gen::<f64>());
        let mse = mse_loss(&a, &b).unwrap();
        let gdl = gdl_loss(&a, &b).unwrap();
        let adv = 0.5 * (pf - 1.0) * (pf - 1.0);
        let d = 0.5 * (pr - cfg.real_label) * (pr - cfg.real_label) + 0.5 * pf * pf;
        let total = g_total_loss(&a, &b, pf, &cfg).unwrap();
        let want_total = cfg.alpha * adv + mse_oracle(&a, &b) + cfg.gdl_weight * gdl_oracle(&a, &b);
        for e in [
            mse - mse_oracle(&a, &b),
            gdl - gdl_oracle(&a, &b),
            g_adv_loss(pf) - adv,
            d_loss(pr, pf, &cfg) - d,
            total - want_total,
        ] {
            worst = worst.max(e.abs());
        }
        // batch form: mean of per-volume losses
        let hr = Tensor::from_volumes(&[a.clone(), b.clone()]).unwrap();
        let sr = Tensor::from_volumes(&[b.clone(), a.clone()]).unwrap();
        let batch = content_loss(&hr, &sr, 1.0).unwrap();
        worst = worst.max((batch.mse - mse_oracle(&a, &b)).abs());
        worst = worst.max((batch.gdl - gdl_oracle(&a, &b)).abs());
    }

    let smoothed = LossConfig {
        real_label: 0.9,
        ..cfg
    };
    let hard = LossConfig {
        real_label: 1.0,
        ..cfg
    };
    let ones = Volume::<f64>::filled(Shape::cube(4), 1.0);
    let zeros = Volume::<f64>::filled(Shape::cube(4), 0.0);
    let half = Volume::<f64>::filled(Shape::cube(4), 0.5);
    let step = Volume::<f64>::from_fn(Shape::cube(4), |y, _, _, _| if y >= 2 { 1.0 } else { 0.0 });
    let closed = [
        d_loss(1.0, 0.0, &hard) == 0.0,
        near_decimal(d_loss(1.0, 0.0, &smoothed), 0.005),
        d_loss(0.5, 0.5, &hard) == 0.25,
        g_adv_loss(1.0) == 0.0,
        g_adv_loss(0.0) == 0.5,
        g_adv_loss(0.5) == 0.125,
        mse_loss(&ones, &ones).unwrap() == 0.0,
        mse_loss(&ones, &zeros).unwrap() == 1.0,
        gdl_loss(&step, &step).unwrap() == 0.0,
        gdl_loss(&ones, &half).unwrap() == 0.0,
        // 16 unit differences across the step out of 48 y-pairs
        gdl_loss(&step, &zeros).unwrap() == 1.0 / 3.0,
        g_total_loss(&step, &step, 1.0, &cfg).unwrap() == 0.0,
        near_decimal(g_total_loss(&step, &step, 0.0, &cfg).unwrap(), 5e-4),
        mse_loss(&ones, &Volume::filled(Shape::cube(3), 1.0)).is_err(),
        gdl_loss(
            &Volume::<f64>::zeros(Shape::new(1, 4, 4, 1)),
            &Volume::zeros(Shape::new(1, 4, 4, 1)),
        )
        .is_err(),
    ];
    let exact = closed.iter().filter(|&&b| b).count();
    outcome(
        worst <= LOSS_TOL && exact == closed.len(),
        format!(
            "worst oracle error {worst:.1e}, closed forms {exact}/{}",
            closed.len()
        ),
    )
}

// ------------------------------------------------------- gradient check

fn gradient_check() -> Outcome {
    let t0 = Instant::now();
    let mut total = 0usize;
    let mut passed = 0usize;
    let mut per_method = Vec::new();
    for (mi, method) in UpsampleMethod::ALL.into_iter().enumerate() {
        let generator = Generator::new(GeneratorConfig {
            res_blocks: 1,
            filters: 4,
            kernel: 3,
            scale: 2,
            upsample: method,
            leaky_slope: 0.2,
            batch_norm: true,
            out_init_scale: 1.0,
            out_init_bias: Some(0.0),
        })
        .unwrap();
        let discriminator =
            Discriminator::new(DiscriminatorConfig::with_base(2, 8, [8; 3])).unwrap();
        let loss = LossConfig {
            alpha: 1e-3,
            ..LossConfig::default()
        };
        let trainer = Trainer::new(generator, discriminator, TrainConfig::default(), loss).unwrap();
        let mut g = rng(50 + mi as u64);
        let gen: NetworkParams<f64> = trainer.generator.init(&mut g);
        let disc: NetworkParams<f64> = trainer.discriminator.init(&mut g);
        let lr = Tensor::from_volumes(&[
            Volume::from_fn(Shape::cube(4), |_, _, _, _| g.gen::<f64>()),
            Volume::from_fn(Shape::cube(4), |_, _, _, _| g.gen::<f64>()),
        ])
        .unwrap();
        let hr_vols: Vec<Volume<f64>> = (0..2)
            .map(|_| Volume::from_fn(Shape::cube(8), |_, _, _, _| g.gen::<f64>()))
            .collect();
        let hr = Tensor::from_volumes(&hr_vols).unwrap();

        // batch mean of the scalar per-volume objective
        let objective = |p: &NetworkParams<f64>| -> f64 {
            let sr = trainer
                .generator
                .forward(p, &lr, Mode::Train)
                .unwrap()
                .output;
            let probs = trainer
                .discriminator
                .forward(&disc, &sr, Mode::Eval)
                .unwrap()
                .probs;
            (0..2)
                .map(|i| g_total_loss(&hr_vols[i], &sr.volume(i), probs[i], &loss).unwrap())
                .sum::<f64>()
                / 2.0
        };
        let analytic = trainer.generator_objective(&gen, &disc, &lr, &hr).unwrap();
        let (mut m_total, mut m_pass) = (0usize, 0usize);
        for (name, grad) in analytic.grads.iter() {
            for (i, &a) in grad.iter().enumerate() {
                let mut plus = gen.clone();
                plus.get_mut(name).unwrap().data[i] += GRAD_STEP;
                let mut minus = gen.clone();
                minus.get_mut(name).unwrap().data[i] -= GRAD_STEP;
                let fd = (objective(&plus) - objective(&minus)) / (2.0 * GRAD_STEP);
                let err = (a - fd).abs() / a.abs().max(fd.abs()).max(GRAD_FLOOR);
                m_total += 1;
                if err <= GRAD_REL_TOL {
                    m_pass += 1;
                }
            }
        }
        per_method.push(format!("{method} {m_pass}/{m_total}"));
        total += m_total;
        passed += m_pass;
    }
    let dt = t0.elapsed();
    let frac = passed as f64 / total as f64;
    outcome(
        frac >= GRAD_MIN_PASS && dt < GRAD_TIME,
        format!(
            "{:.2}% of parameters within {GRAD_REL_TOL:e} ({}), {:.1}s",
            100.0 * frac,
            per_method.join(", "),
            dt.as_secs_f64()
        ),
    )
}

// ---------------------------------------------------------------- metrics

fn ssim_oracle(a: &Volume<f64>, b: &Volume<f64>, p: &SsimParams) -> f64 {
    let k = p.window;
    let r = (k / 2) as f64;
    let g1: Vec<f64> = (0..k)
        .map(|i| (-(i as f64 - r).powi(2) / (2.0 * p.sigma * p.sigma)).exp())
        .collect();
    let norm: f64 = g1.iter().sum::<f64>().powi(3);
    let s = a.shape();
    let (c1, c2) = ((p.k1 * p.peak).powi(2), (p.k2 * p.peak).powi(2));
    let mut sum = 0.0;
    let mut count = 0;
    for y in 0..=s.h - k {
        for x in 0..=s.w - k {
            for z in 0..=s.d - k {
                let (mut ma, mut mb, mut aa, mut bb, mut ab) = (0.0, 0.0, 0.0, 0.0, 0.0);
                for i in 0..k {
                    for j in 0..k {
                        for l in 0..k {
                            let w = g1[i] * g1[j] * g1[l] / norm;
                            let (u, v) =
                                (a.get(y + i, x + j, z + l, 0), b.get(y + i, x + j, z + l, 0));
                            ma += w * u;
                            mb += w * v;
                            aa += w * u * u;
                            bb += w * v * v;
                            ab += w * u * v;
                        }
                    }
                }
                let (va, vb, cov) = (aa - ma * ma, bb - mb * mb, ab - ma * mb);
                sum += (2.0 * ma * mb + c1) * (2.0 * cov + c2)
                    / ((ma * ma + mb * mb + c1) * (va + vb + c2));
                count += 1;
            }
        }
    }
    sum / count as f64
}

fn metric_fixtures() -> Outcome {
    let p = SsimParams::default();
    let mut g = rng(6);
    let e_psnr = (psnr_from_mse(0.01, 1.0) - 20.0).abs();
    let ref_v = Volume::from_fn(Shape::cube(8), |_, _, _, _| g.gen_range(0.2..0.8));
    let off = ref_v.map(|v| v + 0.1);
    let e_psnr_vol = (psnr(&ref_v, &off, 1.0).unwrap() - 20.0).abs();
    let mut e_self = 0.0f64;
    let mut e_oracle = 0.0f64;
    for _ in 0..3 {
        let a = Volume::from_fn(Shape::cube(12), |_, _, _, _| g.gen::<f64>());
        let b = Volume::from_fn(a.shape(), |y, x, z, c| {
            (a.get(y, x, z, c) + g.gen_range(-0.2..0.2)).clamp(0.0, 1.0)
        });
        e_self = e_self.max((ssim3d(&a, &a, &p).unwrap() - 1.0).abs());
        e_oracle = e_oracle.max((ssim3d(&a, &b, &p).unwrap() - ssim_oracle(&a, &b, &p)).abs());
    }
    let inf = psnr(&ref_v, &ref_v, 1.0).unwrap() == f64::INFINITY;
    outcome(
        e_psnr <= METRIC_TOL && e_psnr_vol <= METRIC_TOL && e_self <= METRIC_TOL && e_oracle <= SSIM_ORACLE_TOL && inf,
        format!(
            "psnr(0.01) err {e_psnr:.1e}, volume psnr err {e_psnr_vol:.1e}, ssim(x,x) err {e_self:.1e}, ssim oracle err {e_oracle:.1e}"
        ),
    )
}

// ---------------------------------------------------------------- patches

/// True when HR voxel `v` of a patch at `origin` with extent `size` is more
/// than `radius` voxels from every patch face that lies inside the volume.
fn away_from_cuts(
    v: [usize; 3],
    origin: [usize; 3],
    size: [usize; 3],
    volume: [usize; 3],
    radius: usize,
) -> bool {
    (0..3).all(|a| {
        let u = v[a] - origin[a];
        let lo_ok = origin[a] == 0 || u > radius;
        let hi_ok = origin[a] + size[a] == volume[a] || size[a] - 1 - u > radius;
        lo_ok && hi_ok
    })
}

fn patch_round_trip_and_patched_inference() -> Outcome {
    let mut g = rng(7);
    let mut exact = 0;
    for _ in 0..10 {
        let dims = [
            g.gen_range(6..=20),
            g.gen_range(6..=20),
            g.gen_range(6..=20),
        ];
        let patch = dims.map(|n| g.gen_range(2..=n));
        let step = patch.map(|p| g.gen_range(1..=p));
        let c = g.gen_range(1..=3);
        let grid = PatchGrid::new(dims, patch, step).unwrap();
        let v = Volume::from_fn(Shape::new(dims[0], dims[1], dims[2], c), |_, _, _, _| {
            g.gen::<f32>()
        });
        let back = stitch_patches(&extract_patches(&v, &grid).unwrap(), &grid, v.shape()).unwrap();
        if back.data() == v.data() {
            exact += 1;
        }
    }

    // patched against whole-volume inference
    let mut details = Vec::new();
    let mut infer_ok = true;
    for (mi, method) in UpsampleMethod::ALL.into_iter().enumerate() {
        let generator = Generator::new(GeneratorConfig {
            res_blocks: 1,
            filters: 8,
            kernel: 3,
            scale: 2,
            upsample: method,
            leaky_slope: 0.2,
            batch_norm: true,
            out_init_scale: 1.0,
            out_init_bias: Some(0.5),
        })
        .unwrap();
        let params: NetworkParams<f32> = generator.init(&mut rng(70 + mi as u64));
        let lr = Volume::from_fn(Shape::cube(16), |_, _, _, _| g.gen::<f32>());
        let lr_grid = PatchGrid::cubic(16, 12, 6).unwrap();
        let hr_grid = lr_grid.scaled(2);
        let whole = generator.generate(&params, &lr).unwrap();
        let patched = infer_patched(&generator, &params, &lr, &lr_grid).unwrap();
        let outs: Vec<Volume<f32>> = extract_patches(&lr, &lr_grid)
            .unwrap()
            .iter()
            .map(|p| generator.generate(&params, p).unwrap())
            .collect();
        let coverage = hr_grid.coverage();
        let radius = generator.config.receptive_radius();
        let n = hr_grid.volume;
        let (mut single, mut single_exact, mut interior, mut worst) = (0, 0, 0, 0.0f64);
        let mut single_matches_whole = 0;
        for y in 0..n[0] {
            for x in 0..n[1] {
                for z in 0..n[2] {
                    let containing: Vec<usize> = (0..hr_grid.len())
                        .filter(|&i| {
                            (0..3).all(|a| {
                                let o = hr_grid.origins[i][a];
                                [y, x, z][a] >= o && [y, x, z][a] < o + hr_grid.patch[a]
                            })
                        })
                        .collect();
                    let got = patched.get(y, x, z, 0);
                    if coverage[(y * n[1] + x) * n[2] + z] == 1 {
                        single += 1;
                        let i = containing[0];
                        let o = hr_grid.origins[i];
                        if outs[i].get(y - o[0], x - o[1], z - o[2], 0).to_bits() == got.to_bits() {
                            single_exact += 1;
                        }
                        if got.to_bits() == whole.get(y, x, z, 0).to_bits() {
                            single_matches_whole += 1;
                        }
                    }
                    let clean = containing.iter().all(|&i| {
                        away_from_cuts([y, x, z], hr_grid.origins[i], hr_grid.patch, n, radius)
                    });
                    if clean {
                        interior += 1;
                        worst = worst.max((got as f64 - whole.get(y, x, z, 0) as f64).abs());
                    }
                }
            }
        }
        infer_ok &= single > 0 && single_exact == single && interior > 0 && worst <= PATCHED_TOL;
        details.push(format!(
            "{method}: single-cover {single_exact}/{single} exact ({single_matches_whole} equal to whole), {interior} seam-free voxels max err {worst:.1e}"
        ));
    }
    outcome(
        exact == 10 && infer_ok,
        format!("extract/stitch bitwise {exact}/10; {}", details.join("; ")),
    )
}

// ------------------------------------------------------------ desk scale

/// Every file under `root`, keyed by relative path.
fn tree(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in fs::read_dir(&dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                out.insert(
                    path.strip_prefix(root).unwrap().to_path_buf(),
                    fs::read(&path).unwrap(),
                );
            }
        }
    }
    out
}

struct DeskRun {
    means: BTreeMap<Method, f64>,
    methods_in_table: usize,
    slowest: Duration,
    timings: Vec<String>,
}

fn desk_run(root: &Path) -> DeskRun {
    let cfg = RunConfig::default();
    let data = root.join("data");
    workflow::synth_data(&cfg, &data, false).unwrap();
    let mut scores = Vec::new();
    let mut slowest = Duration::ZERO;
    let mut timings = Vec::new();
    for method in UpsampleMethod::ALL {
        let t0 = Instant::now();
        let mut m_cfg = cfg.clone();
        m_cfg.set("upsample.method", method.as_str()).unwrap();
        let run = root.join(method.as_str());
        workflow::train_run(&m_cfg, &data, &run, false).unwrap();
        let ckpt = checkpoint::latest_checkpoint(&run).unwrap().unwrap();
        let model = Model::load(&ckpt, |_| Ok(())).unwrap();
        let (report, _) = workflow::evaluate(&model, &data).unwrap();
        let eval_dir = run.join("eval");
        workflow::write_report(&report, &eval_dir).unwrap();
        scores.push(eval_dir.join(workflow::SCORES_FILE));
        let dt = t0.elapsed();
        slowest = slowest.max(dt);
        timings.push(format!("{method} {:.1} min", dt.as_secs_f64() / 60.0));
    }
    let merged = workflow::merge_reports(&scores).unwrap();
    workflow::write_report(&merged, &root.join("report")).unwrap();
    let table = merged.render_table();
    println!("{table}");
    let means = merged
        .aggregate
        .iter()
        .filter_map(|s| s.psnr.map(|p| (s.method, p.mean)))
        .collect();
    DeskRun {
        means,
        methods_in_table: merged.aggregate.len(),
        slowest,
        timings,
    }
}

fn desk_scale_runs() -> (Outcome, Outcome) {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let first = desk_run(a.path());
    let cubic = first.means.get(&Method::Cubic).copied().unwrap_or(f64::NAN);
    let mut beats = 0;
    let mut parts = vec![format!("cubic {cubic:.3} dB")];
    for m in [Method::ResizeConv, Method::Subpixel, Method::SubpixelNn] {
        let mean = first.means.get(&m).copied().unwrap_or(f64::NAN);
        if mean >= cubic + DESK_MARGIN_DB {
            beats += 1;
        }
        parts.push(format!("{m} {mean:.3} dB ({:+.3})", mean - cubic));
    }
    let desk = outcome(
        beats == 3 && first.methods_in_table == 4 && first.slowest <= DESK_TIME_PER_METHOD,
        format!("{}; {}", parts.join(", "), first.timings.join(", ")),
    );

    let _second = desk_run(b.path());
    let (ta, tb) = (tree(a.path()), tree(b.path()));
    let differing: Vec<String> = ta
        .keys()
        .chain(tb.keys())
        .filter(|k| ta.get(*k) != tb.get(*k))
        .map(|k| k.display().to_string())
        .collect();
    let ckpts = ta
        .keys()
        .filter(|k| k.to_string_lossy().ends_with(".ckpt"))
        .count();
    let determinism = outcome(
        differing.is_empty() && ckpts > 0,
        if differing.is_empty() {
            format!("{} files identical ({ckpts} checkpoint archives)", ta.len())
        } else {
            format!("{} files differ, first {}", differing.len(), differing[0])
        },
    );
    (desk, determinism)
}

// ------------------------------------------------------------------ main

fn main() {
    let filters: Vec<String> = std::env::args()
        .skip(1)
        .filter(|a| !a.starts_with('-'))
        .collect();
    let wanted =
        |name: &str| filters.is_empty() || filters.iter().any(|f| name.contains(f.as_str()));
    let checks: [(&str, fn() -> Outcome); 7] = [
        ("1 shuffle suite", shuffle_suite),
        (
            "2 sub-pixel equals strided transposed conv",
            subpixel_is_transposed_conv,
        ),
        (
            "3 nn-init is checkerboard free",
            nn_init_is_checkerboard_free,
        ),
        ("4 losses match oracles", losses_match_oracles),
        ("5 g_total gradient check", gradient_check),
        ("6 metric fixtures", metric_fixtures),
        (
            "7 patch round trip and patched inference",
            patch_round_trip_and_patched_inference,
        ),
    ];
    let mut failed = 0;
    let mut report = |name: &str, o: Outcome| {
        println!(
            "acceptance {name:<45} {}  {}",
            if o.pass { "PASS" } else { "FAIL" },
            o.detail
        );
        if !o.pass {
            failed += 1;
        }
    };
    for (name, check) in checks {
        if wanted(name) {
            report(name, check());
        }
    }
    let (desk, det) = ("8 desk-scale end-to-end", "9 determinism");
    if wanted(desk) || wanted(det) {
        let (a, b) = desk_scale_runs();
        report(desk, a);
        report(det, b);
    }
    if failed > 0 {
        println!("acceptance: {failed} check(s) failed");
        std::process::exit(1);
    }
}

//! Name-addressed wrappers over the layer kernels.

use crate::error::Result;
use crate::nn::act;
use crate::nn::conv::{self, ConvCache, ConvGeom};
use crate::nn::norm::{self, BnCache, BnStats};
use crate::nn::Tensor;
use crate::params::{Grads, NetworkParams, Param};
use crate::real::Real;

use super::Mode;

pub(crate) fn add_conv<T: Real>(
    p: &mut NetworkParams<T>,
    name: &str,
    g: &ConvGeom,
    bias: bool,
    rng: &mut impl rand::Rng,
) {
    p.insert(
        format!("{name}.weight"),
        Param::uniform(&[g.k, g.k, g.k, g.cin, g.cout], g.taps() * g.cin, rng),
    );
    if bias {
        p.insert(format!("{name}.bias"), Param::zeros(&[g.cout], true));
    }
}

pub(crate) fn add_bn<T: Real>(p: &mut NetworkParams<T>, name: &str, c: usize) {
    p.insert(format!("{name}.gamma"), Param::filled(&[c], T::one(), true));
    p.insert(format!("{name}.beta"), Param::zeros(&[c], true));
    p.insert(format!("{name}.running_mean"), Param::zeros(&[c], false));
    p.insert(
        format!("{name}.running_var"),
        Param::filled(&[c], T::one(), false),
    );
}

pub(crate) fn conv_fwd<T: Real>(
    p: &NetworkParams<T>,
    name: &str,
    x: &Tensor<T>,
    g: &ConvGeom,
) -> Result<(Tensor<T>, ConvCache<T>)> {
    let w = p.data(&format!("{name}.weight"))?;
    let bname = format!("{name}.bias");
    let b = if p.contains(&bname) {
        Some(p.data(&bname)?)
    } else {
        None
    };
    Ok(conv::conv3d_forward(x, w, b, g))
}

pub(crate) fn conv_bwd<T: Real>(
    p: &NetworkParams<T>,
    grads: &mut Grads<T>,
    name: &str,
    cache: &ConvCache<T>,
    dy: &Tensor<T>,
    g: &ConvGeom,
    need_dx: bool,
) -> Result<Option<Tensor<T>>> {
    let wname = format!("{name}.weight");
    let bname = format!("{name}.bias");
    let w = p.data(&wname)?;
    if p.contains(&bname) {
        let (dw, db) = grads.pair_mut(&wname, &bname);
        Ok(conv::conv3d_backward(
            cache,
            w,
            dy,
            g,
            dw,
            Some(db),
            need_dx,
        ))
    } else {
        Ok(conv::conv3d_backward(
            cache,
            w,
            dy,
            g,
            grads.get_mut(&wname),
            None,
            need_dx,
        ))
    }
}

#[derive(Debug, Clone)]
pub(crate) enum BnState<T> {
    Train(BnCache<T>),
    Eval(Tensor<T>),
}

pub(crate) fn bn_fwd<T: Real>(
    p: &NetworkParams<T>,
    name: &str,
    x: &Tensor<T>,
    mode: Mode,
    stats: &mut Vec<(String, BnStats<T>)>,
) -> Result<(Tensor<T>, BnState<T>)> {
    let gamma = p.data(&format!("{name}.gamma"))?;
    let beta = p.data(&format!("{name}.beta"))?;
    match mode {
        Mode::Train => {
            let (y, cache, st) = norm::bn_train_forward(x, gamma, beta);
            stats.push((name.to_string(), st));
            Ok((y, BnState::Train(cache)))
        }
        Mode::Eval => {
            let rm = p.data(&format!("{name}.running_mean"))?;
            let rv = p.data(&format!("{name}.running_var"))?;
            Ok((
                norm::bn_eval_forward(x, gamma, beta, rm, rv),
                BnState::Eval(x.clone()),
            ))
        }
    }
}

pub(crate) fn bn_bwd<T: Real>(
    p: &NetworkParams<T>,
    grads: &mut Grads<T>,
    name: &str,
    state: &BnState<T>,
    dy: &Tensor<T>,
) -> Result<Tensor<T>> {
    let gname = format!("{name}.gamma");
    let bname = format!("{name}.beta");
    let gamma = p.data(&gname)?;
    let (dg, db) = grads.pair_mut(&gname, &bname);
    Ok(match state {
        BnState::Train(cache) => norm::bn_train_backward(cache, dy, gamma, dg, db),
        BnState::Eval(x) => {
            let rm = p.data(&format!("{name}.running_mean"))?;
            let rv = p.data(&format!("{name}.running_var"))?;
            norm::bn_eval_backward(x, dy, gamma, rm, rv, dg, db)
        }
    })
}

pub(crate) fn leaky_fwd<T: Real>(x: Tensor<T>, slope: T) -> (Tensor<T>, Tensor<T>) {
    let y = act::leaky_relu(&x, slope);
    (y, x)
}

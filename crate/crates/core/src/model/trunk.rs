use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::config::TrunkSpec;
use crate::autodiff::{BnMode, BnStats, Graph, Group, ParamStore, Tensor, Var};
use crate::error::Result;

/// He-normal conv kernels, zero bias, unit gamma, zero beta.
pub(crate) fn init_trunk(
    store: &mut ParamStore,
    prefix: &str,
    spec: &TrunkSpec,
    group: Group,
    rng: &mut impl Rng,
) -> Result<Vec<BnStats>> {
    let k = spec.kernel;
    let mut c_in = 1;
    let mut stats = Vec::with_capacity(spec.channels.len());
    for (i, &c) in spec.channels.iter().enumerate() {
        let fan_in = (c_in * k * k * k) as f64;
        let normal = Normal::new(0.0, (2.0 / fan_in).sqrt()).unwrap();
        let w = (0..c * c_in * k * k * k).map(|_| normal.sample(rng)).collect();
        store.insert(format!("{prefix}.conv{i}.weight"), Tensor::new(vec![c, c_in, k, k, k], w)?, group)?;
        store.insert(format!("{prefix}.conv{i}.bias"), Tensor::zeros(&[c]), group)?;
        store.insert(format!("{prefix}.bn{i}.gamma"), Tensor::ones(&[c]), group)?;
        store.insert(format!("{prefix}.bn{i}.beta"), Tensor::zeros(&[c]), group)?;
        stats.push(BnStats::new(c));
        c_in = c;
    }
    Ok(stats)
}

/// Uniform(-1/sqrt(n_in), 1/sqrt(n_in)) weight and bias.
pub(crate) fn init_linear(
    store: &mut ParamStore,
    prefix: &str,
    n_out: usize,
    n_in: usize,
    group: Group,
    rng: &mut impl Rng,
) -> Result<()> {
    let bound = 1.0 / (n_in as f64).sqrt();
    let w = (0..n_out * n_in).map(|_| rng.random_range(-bound..bound)).collect();
    let b = (0..n_out).map(|_| rng.random_range(-bound..bound)).collect();
    store.insert(format!("{prefix}.weight"), Tensor::new(vec![n_out, n_in], w)?, group)?;
    store.insert(format!("{prefix}.bias"), Tensor::new(vec![n_out], b)?, group)?;
    Ok(())
}

pub(crate) fn linear(g: &mut Graph, store: &ParamStore, prefix: &str, x: Var) -> Result<Var> {
    let w = g.param(store, &format!("{prefix}.weight"))?;
    let b = g.param(store, &format!("{prefix}.bias"))?;
    g.linear(x, w, Some(b))
}

/// Runs `x: [B,1,s,s,s]` through the blocks and flattens to `[B, flat]`.
pub(crate) fn trunk_forward(
    g: &mut Graph,
    store: &ParamStore,
    prefix: &str,
    spec: &TrunkSpec,
    x: Var,
    stats: &mut [BnStats],
    mode: BnMode,
) -> Result<Var> {
    let pad = spec.kernel / 2;
    let mut h = x;
    for (i, &pool) in spec.pools.iter().enumerate() {
        let w = g.param(store, &format!("{prefix}.conv{i}.weight"))?;
        let b = g.param(store, &format!("{prefix}.conv{i}.bias"))?;
        h = g.conv3d(h, w, b, 1, pad)?;
        let gamma = g.param(store, &format!("{prefix}.bn{i}.gamma"))?;
        let beta = g.param(store, &format!("{prefix}.bn{i}.beta"))?;
        h = g.batchnorm3d(h, gamma, beta, &mut stats[i], mode)?;
        h = g.relu(h);
        h = g.maxpool3d(h, pool)?;
    }
    let batch = g.shape(h)[0];
    let flat = g.value(h).numel() / batch;
    g.reshape(h, &[batch, flat])
}

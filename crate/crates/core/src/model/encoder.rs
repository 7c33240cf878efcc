//! Transformer encoder over field tokens, forward and backward.
//!
//! Each layer computes
//!   H~ = LN(H + Dropout(MH(H)))
//!   H' = LN(H~ + Dropout(GELU(H~ W1 + b1) W2 + b2))
//! with masked multi-head attention `softmax(Q K^T * scale + M) V`.

use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, Axis, Zip};
use rand::Rng;

use super::{AttentionMask, HiddenGrid, LayerParams, ModelParams};
use crate::scalar::{lit, Scalar};
use crate::{seed, Error, Result};

const LN_EPS: f64 = 1e-12;

struct LnCache<T> {
    xhat: Array2<T>,
    inv_std: Array1<T>,
}

struct LayerCache<T> {
    x: Array2<T>,
    q: Array2<T>,
    k: Array2<T>,
    v: Array2<T>,
    probs: Vec<Array2<T>>,
    concat: Array2<T>,
    drop1: Option<Array2<T>>,
    ln1: LnCache<T>,
    ht: Array2<T>,
    z1: Array2<T>,
    act: Array2<T>,
    drop2: Option<Array2<T>>,
    ln2: LnCache<T>,
}

/// Activations kept from a forward pass for the backward pass and for
/// attention inspection.
pub struct EncoderCache<T> {
    layers: Vec<LayerCache<T>>,
    valid: usize,
}

impl<T: Scalar> EncoderCache<T> {
    /// Post-softmax attention of `head` in `layer` over the valid rows
    /// (query rows, key columns).
    pub fn attention(&self, layer: usize, head: usize) -> ArrayView2<'_, T> {
        self.layers[layer].probs[head].view()
    }

    pub fn valid_len(&self) -> usize {
        self.valid
    }
}

fn layer_norm<T: Scalar>(x: &Array2<T>, gain: &Array1<T>, bias: &Array1<T>) -> (Array2<T>, LnCache<T>) {
    let e = x.ncols();
    let n_inv = lit::<T>(1.0 / e as f64);
    let mut xhat = Array2::zeros(x.raw_dim());
    let mut inv_std = Array1::zeros(x.nrows());
    for (r, row) in x.rows().into_iter().enumerate() {
        let mean = row.sum() * n_inv;
        let var = row.iter().map(|v| (*v - mean) * (*v - mean)).sum::<T>() * n_inv;
        let is = T::one() / (var + lit(LN_EPS)).sqrt();
        inv_std[r] = is;
        xhat.row_mut(r).zip_mut_with(&row, |o, v| *o = (*v - mean) * is);
    }
    let out = &xhat * gain + bias;
    (out, LnCache { xhat, inv_std })
}

fn layer_norm_backward<T: Scalar>(
    dy: &Array2<T>,
    cache: &LnCache<T>,
    gain: &Array1<T>,
    d_gain: &mut Array1<T>,
    d_bias: &mut Array1<T>,
) -> Array2<T> {
    *d_gain += &(dy * &cache.xhat).sum_axis(Axis(0));
    *d_bias += &dy.sum_axis(Axis(0));
    let dxhat = dy * gain;
    let e = lit::<T>(dy.ncols() as f64);
    let mut dx = Array2::zeros(dy.raw_dim());
    for r in 0..dy.nrows() {
        let g = dxhat.row(r);
        let xh = cache.xhat.row(r);
        let mean_g = g.sum() / e;
        let mean_gx = g.iter().zip(xh.iter()).map(|(a, b)| *a * *b).sum::<T>() / e;
        let is = cache.inv_std[r];
        Zip::from(dx.row_mut(r))
            .and(&g)
            .and(&xh)
            .for_each(|d, &gv, &xv| *d = is * (gv - mean_g - xv * mean_gx));
    }
    dx
}

fn gelu<T: Scalar>(x: T) -> T {
    lit::<T>(0.5) * x * (T::one() + (x * lit(std::f64::consts::FRAC_1_SQRT_2)).erf())
}

fn gelu_grad<T: Scalar>(x: T) -> T {
    let cdf = lit::<T>(0.5) * (T::one() + (x * lit(std::f64::consts::FRAC_1_SQRT_2)).erf());
    let pdf = (-(x * x) * lit(0.5)).exp() * lit(1.0 / (2.0 * std::f64::consts::PI).sqrt());
    cdf + x * pdf
}

fn dropout_mask<T: Scalar>(rows: usize, cols: usize, rate: f64, dropout_seed: u64, layer: usize, which: u64) -> Array2<T> {
    let mut rng = seed::rng(dropout_seed, "dropout", &[layer as u64, which]);
    let keep = lit::<T>(1.0 / (1.0 - rate));
    Array2::from_shape_simple_fn((rows, cols), || {
        if rng.random::<f64>() < rate {
            T::zero()
        } else {
            keep
        }
    })
}

/// Row-wise softmax of `scores` restricted to allowed entries.
fn masked_softmax<T: Scalar>(scores: &mut Array2<T>, allowed: &[bool]) {
    let t = scores.ncols();
    for (r, mut row) in scores.rows_mut().into_iter().enumerate() {
        let mask = &allowed[r * t..(r + 1) * t];
        let mut max = T::neg_infinity();
        for (v, a) in row.iter().zip(mask) {
            if *a && *v > max {
                max = *v;
            }
        }
        let mut sum = T::zero();
        for (v, a) in row.iter_mut().zip(mask) {
            if *a {
                *v = (*v - max).exp();
                sum += *v;
            } else {
                *v = T::zero();
            }
        }
        row.mapv_inplace(|v| v / sum);
    }
}

fn add_bias<T: Scalar>(m: &mut Array2<T>, b: &ArrayView1<'_, T>) {
    for mut row in m.rows_mut() {
        row += b;
    }
}

fn layer_forward<T: Scalar>(
    x: Array2<T>,
    p: &LayerParams<T>,
    allowed: &[bool],
    heads: usize,
    scale: T,
    dropout: Option<(f64, u64, usize)>,
) -> (Array2<T>, LayerCache<T>) {
    let (t, e) = x.dim();
    let dh = e / heads;
    let q = x.dot(&p.w_q);
    let k = x.dot(&p.w_k);
    let v = x.dot(&p.w_v);
    let mut concat = Array2::zeros((t, e));
    let mut probs = Vec::with_capacity(heads);
    for a in 0..heads {
        let cols = s![.., a * dh..(a + 1) * dh];
        let mut scores = q.slice(cols).dot(&k.slice(cols).t());
        scores.mapv_inplace(|v| v * scale);
        masked_softmax(&mut scores, allowed);
        concat.slice_mut(cols).assign(&scores.dot(&v.slice(cols)));
        probs.push(scores);
    }
    let mut mh = concat.dot(&p.w_h);
    let drop1 = dropout.map(|(rate, sd, l)| dropout_mask::<T>(t, e, rate, sd, l, 0));
    if let Some(m) = &drop1 {
        mh *= m;
    }
    let r1 = &x + &mh;
    let (ht, ln1) = layer_norm(&r1, &p.ln1_gain, &p.ln1_bias);
    let mut z1 = ht.dot(&p.w_f1);
    add_bias(&mut z1, &p.b_f1.view());
    let act = z1.mapv(gelu);
    let mut z2 = act.dot(&p.w_f2);
    add_bias(&mut z2, &p.b_f2.view());
    let drop2 = dropout.map(|(rate, sd, l)| dropout_mask::<T>(t, e, rate, sd, l, 1));
    if let Some(m) = &drop2 {
        z2 *= m;
    }
    let r2 = &ht + &z2;
    let (out, ln2) = layer_norm(&r2, &p.ln2_gain, &p.ln2_bias);
    let cache = LayerCache { x, q, k, v, probs, concat, drop1, ln1, ht, z1, act, drop2, ln2 };
    (out, cache)
}

fn layer_backward<T: Scalar>(
    d_out: &Array2<T>,
    c: &LayerCache<T>,
    p: &LayerParams<T>,
    g: &mut LayerParams<T>,
    heads: usize,
    scale: T,
) -> Array2<T> {
    let (t, e) = c.x.dim();
    let dh = e / heads;
    let dr2 = layer_norm_backward(d_out, &c.ln2, &p.ln2_gain, &mut g.ln2_gain, &mut g.ln2_bias);
    let mut dz2 = dr2.clone();
    if let Some(m) = &c.drop2 {
        dz2 *= m;
    }
    g.w_f2 += &c.act.t().dot(&dz2);
    g.b_f2 += &dz2.sum_axis(Axis(0));
    let mut dz1 = dz2.dot(&p.w_f2.t());
    Zip::from(&mut dz1).and(&c.z1).for_each(|d, &z| *d *= gelu_grad(z));
    g.w_f1 += &c.ht.t().dot(&dz1);
    g.b_f1 += &dz1.sum_axis(Axis(0));
    let dht = dr2 + dz1.dot(&p.w_f1.t());

    let dr1 = layer_norm_backward(&dht, &c.ln1, &p.ln1_gain, &mut g.ln1_gain, &mut g.ln1_bias);
    let mut dmh = dr1.clone();
    if let Some(m) = &c.drop1 {
        dmh *= m;
    }
    g.w_h += &c.concat.t().dot(&dmh);
    let dconcat = dmh.dot(&p.w_h.t());

    let mut dq = Array2::<T>::zeros((t, e));
    let mut dk = Array2::<T>::zeros((t, e));
    let mut dv = Array2::<T>::zeros((t, e));
    for a in 0..heads {
        let cols = s![.., a * dh..(a + 1) * dh];
        let probs = &c.probs[a];
        let d_o = dconcat.slice(cols);
        let dprobs = d_o.dot(&c.v.slice(cols).t());
        dv.slice_mut(cols).assign(&probs.t().dot(&d_o));
        let mut dscores = Array2::<T>::zeros((t, t));
        for r in 0..t {
            let pr = probs.row(r);
            let dpr = dprobs.row(r);
            let dot = pr.iter().zip(dpr.iter()).map(|(a, b)| *a * *b).sum::<T>();
            Zip::from(dscores.row_mut(r))
                .and(&pr)
                .and(&dpr)
                .for_each(|ds, &pv, &dp| *ds = pv * (dp - dot) * scale);
        }
        dq.slice_mut(cols).assign(&dscores.dot(&c.k.slice(cols)));
        dk.slice_mut(cols).assign(&dscores.t().dot(&c.q.slice(cols)));
    }
    g.w_q += &c.x.t().dot(&dq);
    g.w_k += &c.x.t().dot(&dk);
    g.w_v += &c.x.t().dot(&dv);
    dr1 + dq.dot(&p.w_q.t()) + dk.dot(&p.w_k.t()) + dv.dot(&p.w_v.t())
}

/// Runs all layers and keeps the activations.
pub fn encode_cached<T: Scalar>(
    hidden: &HiddenGrid<T>,
    mask: &AttentionMask,
    params: &ModelParams<T>,
    train_mode: bool,
    dropout_seed: u64,
) -> Result<(HiddenGrid<T>, EncoderCache<T>)> {
    let cfg = &params.config;
    if hidden.rows.nrows() != mask.size() || hidden.valid_len != mask.valid_len() {
        return Err(Error::InvalidInput("hidden grid and attention mask disagree in shape".into()));
    }
    let allowed = mask.valid_block();
    let scale = lit::<T>(cfg.score_scale());
    let mut x = hidden.valid().to_owned();
    let mut layers = Vec::with_capacity(cfg.layers);
    for (l, p) in params.layers.iter().enumerate() {
        let dropout = (train_mode && cfg.dropout_rate > 0.0).then_some((cfg.dropout_rate, dropout_seed, l));
        let (out, cache) = layer_forward(x, p, &allowed, cfg.heads, scale, dropout);
        if out.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteActivation { layer: l });
        }
        layers.push(cache);
        x = out;
    }
    let valid = hidden.valid_len;
    Ok((HiddenGrid::from_valid(x, hidden.rows.nrows()), EncoderCache { layers, valid }))
}

/// Applies the transformer layers. Dropout is active only in
/// `train_mode` and is fully determined by `dropout_seed`.
pub fn encode<T: Scalar>(
    hidden: &HiddenGrid<T>,
    mask: &AttentionMask,
    params: &ModelParams<T>,
    train_mode: bool,
    dropout_seed: u64,
) -> Result<HiddenGrid<T>> {
    encode_cached(hidden, mask, params, train_mode, dropout_seed).map(|(h, _)| h)
}

/// Backpropagates `d_out` (valid rows of the last layer's output) through
/// the encoder, accumulating layer gradients into `grads` and returning
/// the gradient with respect to the encoder input.
pub fn encode_backward<T: Scalar>(
    cache: &EncoderCache<T>,
    params: &ModelParams<T>,
    d_out: ArrayView2<'_, T>,
    grads: &mut ModelParams<T>,
) -> Array2<T> {
    let cfg = &params.config;
    let scale = lit::<T>(cfg.score_scale());
    let mut d = d_out.to_owned();
    for l in (0..cache.layers.len()).rev() {
        d = layer_backward(&d, &cache.layers[l], &params.layers[l], &mut grads.layers[l], cfg.heads, scale);
    }
    d
}

//! Forward passes with cached activations, and their analytic backward passes.

use super::ops::{self, LnCache};
use super::{recency_bucket, LayerParams, ModelParams, ParamGrads, Real, UserInput, TOKEN_BEHAVIOR, TOKEN_CLS, TOKEN_PROFILE};
use crate::{CategoryId, Error, ItemId, Result};

const NORM_FLOOR: f64 = 1e-12;

fn l2_normalize<T: Real>(raw: &[T], enabled: bool) -> (T, Vec<T>) {
    if !enabled {
        return (T::one(), raw.to_vec());
    }
    let norm = ops::dot(raw, raw).sqrt().max(T::lit(NORM_FLOOR));
    (norm, raw.iter().map(|&v| v / norm).collect())
}

/// Gradient w.r.t. `raw` given the gradient w.r.t. `out = raw / |raw|`.
fn l2_normalize_backward<T: Real>(out: &[T], norm: T, d_out: &[T], enabled: bool) -> Vec<T> {
    if !enabled {
        return d_out.to_vec();
    }
    let proj = ops::dot(out, d_out);
    out.iter().zip(d_out).map(|(&o, &g)| (g - o * proj) / norm).collect()
}

/// Item tower activations.
#[derive(Clone, Debug)]
pub struct ItemForward<T> {
    pub item: ItemId,
    pub category: CategoryId,
    norm: T,
    pub output: Vec<T>,
}

impl<T: Real> ItemForward<T> {
    pub fn run(params: &ModelParams<T>, item: ItemId) -> Result<Self> {
        let category = params.category_of(item)?;
        let raw: Vec<T> = params
            .item_table
            .row(item as usize)
            .iter()
            .zip(params.category_table.row(category as usize))
            .map(|(&a, &b)| a + b)
            .collect();
        let (norm, output) = l2_normalize(&raw, params.config.normalize);
        Ok(Self { item, category, norm, output })
    }

    pub fn backward(&self, params: &ModelParams<T>, d_output: &[T], grads: &mut ParamGrads<T>) {
        let d_raw = l2_normalize_backward(&self.output, self.norm, d_output, params.config.normalize);
        ops::axpy(T::one(), &d_raw, grads.item_table.row_mut(self.item as usize));
        ops::axpy(T::one(), &d_raw, grads.category_table.row_mut(self.category as usize));
    }
}

#[derive(Clone, Debug)]
struct LayerCache<T> {
    /// Rows whose outputs are computed (all tokens, or just `[CLS]` in the last layer).
    m: usize,
    ln1: LnCache<T>,
    z1: Vec<T>,
    q: Vec<T>,
    k: Vec<T>,
    v: Vec<T>,
    /// `heads x m x n`
    probs: Vec<T>,
    ctx: Vec<T>,
    ln2: LnCache<T>,
    z2: Vec<T>,
    a1: Vec<T>,
    g: Vec<T>,
}

#[derive(Clone, Copy, Debug)]
struct BehaviorToken {
    item: ItemId,
    category: CategoryId,
    bucket: usize,
}

/// User tower activations for one request.
#[derive(Clone, Debug)]
pub struct UserForward<T> {
    profile: Vec<u32>,
    behaviors: Vec<BehaviorToken>,
    n: usize,
    layers: Vec<LayerCache<T>>,
    final_ln: LnCache<T>,
    norm: T,
    output: Vec<T>,
}

impl<T: Real> UserForward<T> {
    pub fn run(params: &ModelParams<T>, input: UserInput<'_>) -> Result<Self> {
        let cfg = &params.config;
        let d = cfg.dim;
        if input.profile.len() != cfg.profile_tokens {
            return Err(Error::Shape(format!(
                "expected {} profile tokens, got {}",
                cfg.profile_tokens,
                input.profile.len()
            )));
        }
        if input.subseq.len() > cfg.max_seq_len {
            return Err(Error::Shape(format!(
                "subsequence of length {} exceeds max_seq_len {}",
                input.subseq.len(),
                cfg.max_seq_len
            )));
        }
        if let Some(&p) = input.profile.iter().find(|&&p| p as usize >= params.profile_table.rows) {
            return Err(Error::Input(format!("profile token {p} out of vocabulary")));
        }
        let behaviors = input
            .subseq
            .entries
            .iter()
            .map(|e| {
                if params.category_of(e.item_id)? != e.category_id {
                    return Err(Error::Input(format!("item {} listed with wrong category", e.item_id)));
                }
                Ok(BehaviorToken {
                    item: e.item_id,
                    category: e.category_id,
                    bucket: recency_bucket(input.now - e.timestamp, cfg.recency_buckets),
                })
            })
            .collect::<Result<Vec<_>>>()?;

        let k = cfg.profile_tokens;
        let n = 1 + k + behaviors.len();
        let mut x = vec![T::zero(); n * d];
        let mut put = |row: usize, kind: usize, parts: &[&[T]]| {
            let dst = &mut x[row * d..(row + 1) * d];
            dst.copy_from_slice(params.positional.row(row));
            ops::axpy(T::one(), params.token_type.row(kind), dst);
            for p in parts {
                ops::axpy(T::one(), p, dst);
            }
        };
        put(0, TOKEN_CLS, &[params.cls.row(0)]);
        for (i, &p) in input.profile.iter().enumerate() {
            put(1 + i, TOKEN_PROFILE, &[params.profile_table.row(p as usize)]);
        }
        for (j, b) in behaviors.iter().enumerate() {
            put(
                1 + k + j,
                TOKEN_BEHAVIOR,
                &[
                    params.item_table.row(b.item as usize),
                    params.category_table.row(b.category as usize),
                    params.recency_table.row(b.bucket),
                ],
            );
        }

        let mut layers = Vec::with_capacity(cfg.layers);
        for (li, lp) in params.layers.iter().enumerate() {
            let m = if li + 1 == cfg.layers { 1 } else { n };
            let (cache, out) = layer_forward(lp, x, n, m, d, cfg.heads);
            layers.push(cache);
            x = out;
        }
        // x now holds the [CLS] row only.
        let mut y = vec![T::zero(); d];
        let final_ln = ops::layer_norm(&x, 1, d, &params.final_ln_gain.data, &params.final_ln_bias.data, &mut y);
        let (norm, output) = l2_normalize(&y, cfg.normalize);
        Ok(Self { profile: input.profile.to_vec(), behaviors, n, layers, final_ln, norm, output })
    }

    pub fn output(&self) -> &[T] {
        &self.output
    }

    /// Number of materialized tokens (`1 + K + occupied behavior slots`).
    pub fn num_tokens(&self) -> usize {
        self.n
    }

    /// Accumulates parameter gradients given `d_output`, the gradient of the
    /// objective w.r.t. the emitted user vector.
    pub fn backward(&self, params: &ModelParams<T>, d_output: &[T], grads: &mut ParamGrads<T>) {
        let cfg = &params.config;
        let d = cfg.dim;
        let d_y = l2_normalize_backward(&self.output, self.norm, d_output, cfg.normalize);
        let mut d_cur = vec![T::zero(); d];
        ops::layer_norm_backward(
            &self.final_ln,
            1,
            d,
            &params.final_ln_gain.data,
            &d_y,
            &mut d_cur,
            &mut grads.final_ln_gain.data,
            &mut grads.final_ln_bias.data,
        );
        for (li, cache) in self.layers.iter().enumerate().rev() {
            d_cur = layer_backward(cache, &params.layers[li], &mut grads.layers[li], &d_cur, self.n, d, cfg.heads);
        }

        let k = cfg.profile_tokens;
        let row = |r: usize| &d_cur[r * d..(r + 1) * d];
        for r in 0..self.n {
            let kind = match r {
                0 => TOKEN_CLS,
                r if r <= k => TOKEN_PROFILE,
                _ => TOKEN_BEHAVIOR,
            };
            ops::axpy(T::one(), row(r), grads.positional.row_mut(r));
            ops::axpy(T::one(), row(r), grads.token_type.row_mut(kind));
        }
        ops::axpy(T::one(), row(0), grads.cls.row_mut(0));
        for (i, &p) in self.profile.iter().enumerate() {
            ops::axpy(T::one(), row(1 + i), grads.profile_table.row_mut(p as usize));
        }
        for (j, b) in self.behaviors.iter().enumerate() {
            let g = row(1 + k + j);
            ops::axpy(T::one(), g, grads.item_table.row_mut(b.item as usize));
            ops::axpy(T::one(), g, grads.category_table.row_mut(b.category as usize));
            ops::axpy(T::one(), g, grads.recency_table.row_mut(b.bucket));
        }
    }
}

fn layer_forward<T: Real>(
    lp: &LayerParams<T>,
    x: Vec<T>,
    n: usize,
    m: usize,
    d: usize,
    heads: usize,
) -> (LayerCache<T>, Vec<T>) {
    let dh = d / heads;
    let scale = T::lit(1.0 / (dh as f64).sqrt());
    let f = lp.b1.cols;

    let mut z1 = vec![T::zero(); n * d];
    let ln1 = ops::layer_norm(&x, n, d, &lp.ln1_gain.data, &lp.ln1_bias.data, &mut z1);
    let mut q = vec![T::zero(); m * d];
    let mut k = vec![T::zero(); n * d];
    let mut v = vec![T::zero(); n * d];
    ops::linear(&z1, m, d, &lp.wq.data, &lp.bq.data, &mut q);
    ops::linear(&z1, n, d, &lp.wk.data, &lp.bk.data, &mut k);
    ops::linear(&z1, n, d, &lp.wv.data, &lp.bv.data, &mut v);

    let mut probs = vec![T::zero(); heads * m * n];
    let mut ctx = vec![T::zero(); m * d];
    for hd in 0..heads {
        let off = hd * dh;
        for i in 0..m {
            let qi = &q[i * d + off..i * d + off + dh];
            let p = &mut probs[(hd * m + i) * n..(hd * m + i + 1) * n];
            let mut max = T::neg_infinity();
            for j in 0..n {
                let s = scale * ops::dot(qi, &k[j * d + off..j * d + off + dh]);
                p[j] = s;
                max = max.max(s);
            }
            let mut total = T::zero();
            for pj in p.iter_mut() {
                *pj = (*pj - max).exp();
                total += *pj;
            }
            let inv = total.recip();
            let ci = &mut ctx[i * d + off..i * d + off + dh];
            for j in 0..n {
                p[j] *= inv;
                ops::axpy(p[j], &v[j * d + off..j * d + off + dh], ci);
            }
        }
    }

    let mut h = vec![T::zero(); m * d];
    ops::linear(&ctx, m, d, &lp.wo.data, &lp.bo.data, &mut h);
    for (hv, &xv) in h.iter_mut().zip(&x[..m * d]) {
        *hv += xv;
    }
    let mut z2 = vec![T::zero(); m * d];
    let ln2 = ops::layer_norm(&h, m, d, &lp.ln2_gain.data, &lp.ln2_bias.data, &mut z2);
    let mut a1 = vec![T::zero(); m * f];
    ops::linear(&z2, m, d, &lp.w1.data, &lp.b1.data, &mut a1);
    let g: Vec<T> = a1.iter().map(|&a| ops::gelu(a)).collect();
    let mut out = vec![T::zero(); m * d];
    ops::linear(&g, m, f, &lp.w2.data, &lp.b2.data, &mut out);
    for (ov, &hv) in out.iter_mut().zip(&h) {
        *ov += hv;
    }
    let cache = LayerCache { m, ln1, z1, q, k, v, probs, ctx, ln2, z2, a1, g };
    (cache, out)
}

/// Returns the gradient w.r.t. the layer input (`n x d`).
fn layer_backward<T: Real>(
    c: &LayerCache<T>,
    lp: &LayerParams<T>,
    gl: &mut LayerParams<T>,
    d_out: &[T],
    n: usize,
    d: usize,
    heads: usize,
) -> Vec<T> {
    let m = c.m;
    let dh = d / heads;
    let scale = T::lit(1.0 / (dh as f64).sqrt());
    let f = lp.b1.cols;

    // out = h + W2 gelu(W1 LN2(h) + b1) + b2
    let mut d_h = d_out.to_vec();
    let mut d_g = vec![T::zero(); m * f];
    ops::linear_backward(&c.g, m, f, &lp.w2.data, d_out, &mut d_g, &mut gl.w2.data, &mut gl.b2.data);
    for (dg, &a) in d_g.iter_mut().zip(&c.a1) {
        *dg *= ops::gelu_grad(a);
    }
    let mut d_z2 = vec![T::zero(); m * d];
    ops::linear_backward(&c.z2, m, d, &lp.w1.data, &d_g, &mut d_z2, &mut gl.w1.data, &mut gl.b1.data);
    ops::layer_norm_backward(&c.ln2, m, d, &lp.ln2_gain.data, &d_z2, &mut d_h, &mut gl.ln2_gain.data, &mut gl.ln2_bias.data);

    // h = x[:m] + Wo ctx + bo
    let mut d_x = vec![T::zero(); n * d];
    d_x[..m * d].copy_from_slice(&d_h);
    let mut d_ctx = vec![T::zero(); m * d];
    ops::linear_backward(&c.ctx, m, d, &lp.wo.data, &d_h, &mut d_ctx, &mut gl.wo.data, &mut gl.bo.data);

    let mut d_q = vec![T::zero(); m * d];
    let mut d_k = vec![T::zero(); n * d];
    let mut d_v = vec![T::zero(); n * d];
    let mut dp = vec![T::zero(); n];
    for hd in 0..heads {
        let off = hd * dh;
        for i in 0..m {
            let p = &c.probs[(hd * m + i) * n..(hd * m + i + 1) * n];
            let dci = &d_ctx[i * d + off..i * d + off + dh];
            let mut weighted = T::zero();
            for j in 0..n {
                dp[j] = ops::dot(dci, &c.v[j * d + off..j * d + off + dh]);
                ops::axpy(p[j], dci, &mut d_v[j * d + off..j * d + off + dh]);
                weighted += p[j] * dp[j];
            }
            let qi = &c.q[i * d + off..i * d + off + dh];
            for j in 0..n {
                let ds = scale * p[j] * (dp[j] - weighted);
                ops::axpy(ds, &c.k[j * d + off..j * d + off + dh], &mut d_q[i * d + off..i * d + off + dh]);
                ops::axpy(ds, qi, &mut d_k[j * d + off..j * d + off + dh]);
            }
        }
    }

    let mut d_z1 = vec![T::zero(); n * d];
    ops::linear_backward(&c.z1, m, d, &lp.wq.data, &d_q, &mut d_z1, &mut gl.wq.data, &mut gl.bq.data);
    ops::linear_backward(&c.z1, n, d, &lp.wk.data, &d_k, &mut d_z1, &mut gl.wk.data, &mut gl.bk.data);
    ops::linear_backward(&c.z1, n, d, &lp.wv.data, &d_v, &mut d_z1, &mut gl.wv.data, &mut gl.bv.data);
    ops::layer_norm_backward(&c.ln1, n, d, &lp.ln1_gain.data, &d_z1, &mut d_x, &mut gl.ln1_gain.data, &mut gl.ln1_bias.data);
    d_x
}

//! Pre-norm decoder-only transformer: forward pass, teacher forcing and the
//! exact reverse-mode gradient, all on flat row-major buffers.

use std::ops::Range;

use super::params::{Gradient, PolicyParams};
use crate::corpus::TokenId;
use crate::error::{Error, Result};
use crate::scalar::{cst, logsumexp, Scalar};

const LN_EPS: f64 = 1e-5;

/// Per-position raw logits, log-probabilities and log partition values.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyOutput<F: Scalar> {
    vocab: usize,
    logits: Vec<F>,
    logprobs: Vec<F>,
    log_z: Vec<F>,
}

impl<F: Scalar> PolicyOutput<F> {
    fn from_logits(logits: Vec<F>, vocab: usize) -> Self {
        let n = logits.len() / vocab;
        let mut logprobs = Vec::with_capacity(logits.len());
        let mut log_z = Vec::with_capacity(n);
        for row in logits.chunks(vocab) {
            let z = logsumexp(row);
            log_z.push(z);
            logprobs.extend(row.iter().map(|&l| l - z));
        }
        Self { vocab, logits, logprobs, log_z }
    }

    /// Number of positions.
    pub fn len(&self) -> usize {
        self.log_z.len()
    }

    pub fn is_empty(&self) -> bool {
        self.log_z.is_empty()
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab
    }

    pub fn logits_at(&self, pos: usize) -> &[F] {
        &self.logits[pos * self.vocab..(pos + 1) * self.vocab]
    }

    pub fn logprobs_at(&self, pos: usize) -> &[F] {
        &self.logprobs[pos * self.vocab..(pos + 1) * self.vocab]
    }

    pub fn log_z(&self, pos: usize) -> F {
        self.log_z[pos]
    }

    pub fn last_logits(&self) -> &[F] {
        self.logits_at(self.len() - 1)
    }
}

/// Realized-token score under teacher forcing.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TokenScore<F> {
    /// Raw pre-softmax logit of the realized token.
    pub logit: F,
    /// Log partition value at the predicting position.
    pub log_z: F,
}

impl<F: Scalar> TokenScore<F> {
    pub fn logprob(&self) -> F {
        self.logit - self.log_z
    }
}

struct NormCache<F> {
    xhat: Vec<F>,
    rstd: Vec<F>,
}

struct BlockCache<F> {
    ln1: NormCache<F>,
    h1: Vec<F>,
    q: Vec<F>,
    k: Vec<F>,
    v: Vec<F>,
    probs: Vec<F>,
    att: Vec<F>,
    ln2: NormCache<F>,
    h2: Vec<F>,
    pre: Vec<F>,
    act: Vec<F>,
}

pub(crate) struct ForwardCache<F> {
    tokens: Vec<TokenId>,
    blocks: Vec<BlockCache<F>>,
    lnf: NormCache<F>,
    hf: Vec<F>,
}

fn check_tokens<F: Scalar>(params: &PolicyParams<F>, tokens: &[TokenId]) -> Result<()> {
    let c = params.config();
    if tokens.len() > c.max_len {
        return Err(Error::TooLong { len: tokens.len(), max: c.max_len });
    }
    if let Some(&id) = tokens.iter().find(|&&t| t >= c.vocab_size) {
        return Err(Error::TokenOutOfRange { id, vocab: c.vocab_size });
    }
    Ok(())
}

/// Logits for every position of `context`; position `i` scores the token at `i + 1`.
pub fn forward<F: Scalar>(params: &PolicyParams<F>, context: &[TokenId]) -> Result<PolicyOutput<F>> {
    Ok(forward_cached(params, context)?.0)
}

pub(crate) fn forward_cached<F: Scalar>(
    params: &PolicyParams<F>,
    tokens: &[TokenId],
) -> Result<(PolicyOutput<F>, ForwardCache<F>)> {
    check_tokens(params, tokens)?;
    let c = params.config();
    let lay = params.layout();
    let w = params.values();
    let (n, d, f) = (tokens.len(), c.d_model, c.d_ff());

    let mut x = vec![F::zero(); n * d];
    for (i, &t) in tokens.iter().enumerate() {
        let te = &w[lay.tok_emb.start + t * d..][..d];
        let pe = &w[lay.pos_emb.start + i * d..][..d];
        for j in 0..d {
            x[i * d + j] = te[j] + pe[j];
        }
    }

    let mut blocks = Vec::with_capacity(lay.blocks.len());
    for b in &lay.blocks {
        let (h1, ln1) = layer_norm(&x, d, &w[b.ln1_g.clone()], &w[b.ln1_b.clone()]);
        let q = linear(&h1, d, &w[b.w_q.clone()], &w[b.b_q.clone()], d);
        let k = linear(&h1, d, &w[b.w_k.clone()], &w[b.b_k.clone()], d);
        let v = linear(&h1, d, &w[b.w_v.clone()], &w[b.b_v.clone()], d);
        let (att, probs) = attention(&q, &k, &v, n, c.n_heads, c.head_dim());
        let proj = linear(&att, d, &w[b.w_o.clone()], &w[b.b_o.clone()], d);
        add_assign(&mut x, &proj);

        let (h2, ln2) = layer_norm(&x, d, &w[b.ln2_g.clone()], &w[b.ln2_b.clone()]);
        let pre = linear(&h2, d, &w[b.w_1.clone()], &w[b.b_1.clone()], f);
        let act: Vec<F> = pre.iter().map(|&a| gelu(a)).collect();
        let out = linear(&act, f, &w[b.w_2.clone()], &w[b.b_2.clone()], d);
        add_assign(&mut x, &out);

        blocks.push(BlockCache { ln1, h1, q, k, v, probs, att, ln2, h2, pre, act });
    }

    let (hf, lnf) = layer_norm(&x, d, &w[lay.lnf_g.clone()], &w[lay.lnf_b.clone()]);
    let logits = linear(&hf, d, &w[lay.w_out.clone()], &w[lay.b_out.clone()], c.vocab_size);
    let out = PolicyOutput::from_logits(logits, c.vocab_size);
    let cache = ForwardCache { tokens: tokens.to_vec(), blocks, lnf, hf };
    Ok((out, cache))
}

/// Accumulates `d(sum_ij dlogits_ij * logits_ij)/d(params)` into `grad`.
pub(crate) fn backward<F: Scalar>(
    params: &PolicyParams<F>,
    cache: &ForwardCache<F>,
    dlogits: &[F],
    grad: &mut Gradient<F>,
) {
    let c = params.config();
    let lay = params.layout().clone();
    let w = params.values();
    let (n, d, f) = (cache.tokens.len(), c.d_model, c.d_ff());
    let g = grad.values_mut();

    let dhf = linear_backward(&cache.hf, dlogits, w, lay.w_out.clone(), d, c.vocab_size, g, lay.b_out.clone());
    let mut dx = layer_norm_backward(&dhf, &cache.lnf, d, &w[lay.lnf_g.clone()], g, lay.lnf_g.clone(), lay.lnf_b.clone());

    for (b, bc) in lay.blocks.iter().zip(&cache.blocks).rev() {
        let dact = linear_backward(&bc.act, &dx, w, b.w_2.clone(), f, d, g, b.b_2.clone());
        let dpre: Vec<F> = dact.iter().zip(&bc.pre).map(|(&da, &a)| da * gelu_grad(a)).collect();
        let dh2 = linear_backward(&bc.h2, &dpre, w, b.w_1.clone(), d, f, g, b.b_1.clone());
        let dln2 = layer_norm_backward(&dh2, &bc.ln2, d, &w[b.ln2_g.clone()], g, b.ln2_g.clone(), b.ln2_b.clone());
        add_assign(&mut dx, &dln2);

        let datt = linear_backward(&bc.att, &dx, w, b.w_o.clone(), d, d, g, b.b_o.clone());
        let (dq, dk, dv) = attention_backward(&datt, &bc.q, &bc.k, &bc.v, &bc.probs, n, c.n_heads, c.head_dim());
        let mut dh1 = linear_backward(&bc.h1, &dq, w, b.w_q.clone(), d, d, g, b.b_q.clone());
        add_assign(&mut dh1, &linear_backward(&bc.h1, &dk, w, b.w_k.clone(), d, d, g, b.b_k.clone()));
        add_assign(&mut dh1, &linear_backward(&bc.h1, &dv, w, b.w_v.clone(), d, d, g, b.b_v.clone()));
        let dln1 = layer_norm_backward(&dh1, &bc.ln1, d, &w[b.ln1_g.clone()], g, b.ln1_g.clone(), b.ln1_b.clone());
        add_assign(&mut dx, &dln1);
    }

    for (i, &t) in cache.tokens.iter().enumerate() {
        let row = &dx[i * d..(i + 1) * d];
        for j in 0..d {
            g[lay.tok_emb.start + t * d + j] += row[j];
            g[lay.pos_emb.start + i * d + j] += row[j];
        }
    }
}

fn scored_sequence(context: &[TokenId], continuation: &[TokenId], max_len: usize) -> Result<Vec<TokenId>> {
    if continuation.is_empty() {
        return Err(Error::InvalidArgument("continuation must be non-empty".into()));
    }
    if context.is_empty() {
        return Err(Error::InvalidArgument("context must be non-empty".into()));
    }
    let total = context.len() + continuation.len();
    if total > max_len {
        return Err(Error::TooLong { len: total, max: max_len });
    }
    // The final continuation token is never an input.
    let mut seq = Vec::with_capacity(total - 1);
    seq.extend_from_slice(context);
    seq.extend_from_slice(&continuation[..continuation.len() - 1]);
    Ok(seq)
}

/// Score of each continuation token given the context and the preceding
/// continuation tokens, taken from one forward pass.
pub fn teacher_forced_logits<F: Scalar>(
    params: &PolicyParams<F>,
    context: &[TokenId],
    continuation: &[TokenId],
) -> Result<Vec<TokenScore<F>>> {
    let seq = scored_sequence(context, continuation, params.config().max_len)?;
    let out = forward(params, &seq)?;
    Ok(realized_scores(&out, context.len(), continuation))
}

fn realized_scores<F: Scalar>(out: &PolicyOutput<F>, ctx_len: usize, continuation: &[TokenId]) -> Vec<TokenScore<F>> {
    continuation
        .iter()
        .enumerate()
        .map(|(k, &tok)| {
            let pos = ctx_len - 1 + k;
            TokenScore { logit: out.logits_at(pos)[tok], log_z: out.log_z(pos) }
        })
        .collect()
}

/// Log-probability of each continuation token.
pub fn continuation_logprobs<F: Scalar>(
    params: &PolicyParams<F>,
    context: &[TokenId],
    continuation: &[TokenId],
) -> Result<Vec<F>> {
    Ok(teacher_forced_logits(params, context, continuation)?.iter().map(TokenScore::logprob).collect())
}

/// Adds `sum_k weight_k * grad(log p(continuation[k]))` into `grad`, where the
/// weights are chosen by `weights` after seeing the per-token log-probs.
/// Returns those log-probs.
pub fn weighted_logprob_grad<F: Scalar>(
    params: &PolicyParams<F>,
    context: &[TokenId],
    continuation: &[TokenId],
    weights: impl FnOnce(&[F]) -> Vec<F>,
    grad: &mut Gradient<F>,
) -> Result<Vec<F>> {
    let seq = scored_sequence(context, continuation, params.config().max_len)?;
    let (out, cache) = forward_cached(params, &seq)?;
    let logprobs: Vec<F> = realized_scores(&out, context.len(), continuation).iter().map(TokenScore::logprob).collect();
    let wts = weights(&logprobs);
    assert_eq!(wts.len(), continuation.len(), "one weight per continuation token");

    let v = out.vocab_size();
    let mut dlogits = vec![F::zero(); out.len() * v];
    for (k, (&tok, &wk)) in continuation.iter().zip(&wts).enumerate() {
        if wk == F::zero() {
            continue;
        }
        let pos = context.len() - 1 + k;
        let lp = out.logprobs_at(pos);
        let row = &mut dlogits[pos * v..(pos + 1) * v];
        for a in 0..v {
            row[a] = -wk * lp[a].exp();
        }
        row[tok] += wk;
    }
    backward(params, &cache, &dlogits, grad);
    Ok(logprobs)
}

/// Exact gradient of `sum_k log p(continuation[k] | context, continuation[..k])`.
pub fn grad_logprob<F: Scalar>(
    params: &PolicyParams<F>,
    context: &[TokenId],
    continuation: &[TokenId],
) -> Result<Gradient<F>> {
    let mut g = params.zeros_like();
    weighted_logprob_grad(params, context, continuation, |lp| vec![F::one(); lp.len()], &mut g)?;
    Ok(g)
}

fn add_assign<F: Scalar>(a: &mut [F], b: &[F]) {
    for (x, &y) in a.iter_mut().zip(b) {
        *x += y;
    }
}

/// `y = x W + b` for `x: n x din`, `W: din x dout`.
fn linear<F: Scalar>(x: &[F], din: usize, w: &[F], b: &[F], dout: usize) -> Vec<F> {
    let n = x.len() / din;
    let mut y = Vec::with_capacity(n * dout);
    for _ in 0..n {
        y.extend_from_slice(b);
    }
    for i in 0..n {
        let yi = &mut y[i * dout..(i + 1) * dout];
        for (kk, &xik) in x[i * din..(i + 1) * din].iter().enumerate() {
            if xik == F::zero() {
                continue;
            }
            for (yo, &wko) in yi.iter_mut().zip(&w[kk * dout..(kk + 1) * dout]) {
                *yo += xik * wko;
            }
        }
    }
    y
}

/// Backward of [`linear`]; accumulates into `g[wr]`, `g[br]` and returns `dx`.
#[allow(clippy::too_many_arguments)]
fn linear_backward<F: Scalar>(
    x: &[F],
    dy: &[F],
    params: &[F],
    wr: Range<usize>,
    din: usize,
    dout: usize,
    g: &mut [F],
    br: Range<usize>,
) -> Vec<F> {
    let n = x.len() / din;
    let w = &params[wr.clone()];
    let mut dx = vec![F::zero(); n * din];
    for i in 0..n {
        let dyi = &dy[i * dout..(i + 1) * dout];
        for (o, &d) in dyi.iter().enumerate() {
            g[br.start + o] += d;
        }
        for kk in 0..din {
            let xik = x[i * din + kk];
            let wrow = &w[kk * dout..(kk + 1) * dout];
            let grow = &mut g[wr.start + kk * dout..wr.start + (kk + 1) * dout];
            let mut acc = F::zero();
            for o in 0..dout {
                grow[o] += xik * dyi[o];
                acc += dyi[o] * wrow[o];
            }
            dx[i * din + kk] = acc;
        }
    }
    dx
}

fn layer_norm<F: Scalar>(x: &[F], d: usize, gain: &[F], bias: &[F]) -> (Vec<F>, NormCache<F>) {
    let n = x.len() / d;
    let dn = cst::<F>(d as f64);
    let eps = cst::<F>(LN_EPS);
    let mut y = Vec::with_capacity(x.len());
    let mut xhat = Vec::with_capacity(x.len());
    let mut rstd = Vec::with_capacity(n);
    for row in x.chunks(d) {
        let mean = row.iter().copied().sum::<F>() / dn;
        let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<F>() / dn;
        let r = F::one() / (var + eps).sqrt();
        rstd.push(r);
        for j in 0..d {
            let h = (row[j] - mean) * r;
            xhat.push(h);
            y.push(gain[j] * h + bias[j]);
        }
    }
    (y, NormCache { xhat, rstd })
}

fn layer_norm_backward<F: Scalar>(
    dy: &[F],
    cache: &NormCache<F>,
    d: usize,
    gain: &[F],
    g: &mut [F],
    gr: Range<usize>,
    br: Range<usize>,
) -> Vec<F> {
    let dn = cst::<F>(d as f64);
    let mut dx = vec![F::zero(); dy.len()];
    for (i, &r) in cache.rstd.iter().enumerate() {
        let dyi = &dy[i * d..(i + 1) * d];
        let xh = &cache.xhat[i * d..(i + 1) * d];
        let mut mean_dxhat = F::zero();
        let mut mean_dxhat_xhat = F::zero();
        for j in 0..d {
            g[gr.start + j] += dyi[j] * xh[j];
            g[br.start + j] += dyi[j];
            let dxh = dyi[j] * gain[j];
            mean_dxhat += dxh;
            mean_dxhat_xhat += dxh * xh[j];
        }
        mean_dxhat /= dn;
        mean_dxhat_xhat /= dn;
        for j in 0..d {
            let dxh = dyi[j] * gain[j];
            dx[i * d + j] = r * (dxh - mean_dxhat - xh[j] * mean_dxhat_xhat);
        }
    }
    dx
}

/// Causal multi-head attention. Returns the concatenated head outputs and the
/// attention probabilities laid out `[head][query][key]`.
fn attention<F: Scalar>(q: &[F], k: &[F], v: &[F], n: usize, heads: usize, dh: usize) -> (Vec<F>, Vec<F>) {
    let d = heads * dh;
    let scale = F::one() / cst::<F>(dh as f64).sqrt();
    let mut out = vec![F::zero(); n * d];
    let mut probs = vec![F::zero(); heads * n * n];
    for h in 0..heads {
        let off = h * dh;
        for i in 0..n {
            let qi = &q[i * d + off..][..dh];
            let prow = &mut probs[(h * n + i) * n..][..n];
            let mut m = F::neg_infinity();
            for j in 0..=i {
                let kj = &k[j * d + off..][..dh];
                let s = qi.iter().zip(kj).map(|(&a, &b)| a * b).sum::<F>() * scale;
                prow[j] = s;
                m = m.max(s);
            }
            let mut z = F::zero();
            for p in &mut prow[..=i] {
                *p = (*p - m).exp();
                z += *p;
            }
            for j in 0..=i {
                prow[j] /= z;
                let p = prow[j];
                let vj = &v[j * d + off..][..dh];
                let oi = &mut out[i * d + off..][..dh];
                for t in 0..dh {
                    oi[t] += p * vj[t];
                }
            }
        }
    }
    (out, probs)
}

#[allow(clippy::too_many_arguments)]
fn attention_backward<F: Scalar>(
    dout: &[F],
    q: &[F],
    k: &[F],
    v: &[F],
    probs: &[F],
    n: usize,
    heads: usize,
    dh: usize,
) -> (Vec<F>, Vec<F>, Vec<F>) {
    let d = heads * dh;
    let scale = F::one() / cst::<F>(dh as f64).sqrt();
    let mut dq = vec![F::zero(); n * d];
    let mut dk = vec![F::zero(); n * d];
    let mut dv = vec![F::zero(); n * d];
    let mut dp = vec![F::zero(); n];
    for h in 0..heads {
        let off = h * dh;
        for i in 0..n {
            let prow = &probs[(h * n + i) * n..][..n];
            let doi = &dout[i * d + off..][..dh];
            let mut dot = F::zero();
            for j in 0..=i {
                let vj = &v[j * d + off..][..dh];
                dp[j] = doi.iter().zip(vj).map(|(&a, &b)| a * b).sum();
                dot += prow[j] * dp[j];
                let dvj = &mut dv[j * d + off..][..dh];
                for t in 0..dh {
                    dvj[t] += prow[j] * doi[t];
                }
            }
            for j in 0..=i {
                let ds = prow[j] * (dp[j] - dot) * scale;
                if ds == F::zero() {
                    continue;
                }
                for t in 0..dh {
                    dq[i * d + off + t] += ds * k[j * d + off + t];
                    dk[j * d + off + t] += ds * q[i * d + off + t];
                }
            }
        }
    }
    (dq, dk, dv)
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

fn gelu<F: Scalar>(x: F) -> F {
    let half = cst::<F>(0.5);
    let inner = cst::<F>(GELU_C) * (x + cst::<F>(GELU_A) * x * x * x);
    half * x * (F::one() + inner.tanh())
}

fn gelu_grad<F: Scalar>(x: F) -> F {
    let half = cst::<F>(0.5);
    let c = cst::<F>(GELU_C);
    let a = cst::<F>(GELU_A);
    let t = (c * (x + a * x * x * x)).tanh();
    half * (F::one() + t) + half * x * (F::one() - t * t) * c * (F::one() + cst::<F>(3.0) * a * x * x)
}

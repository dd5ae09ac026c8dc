use std::ops::Range;
use std::sync::Arc;

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;
use crate::scalar::{cst, to_f64, Scalar};

/// Architecture of the decoder-only policy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub vocab_size: usize,
    pub d_model: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub max_len: usize,
    #[serde(default = "default_ffn_mult")]
    pub ffn_mult: usize,
}

fn default_ffn_mult() -> usize {
    4
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            vocab_size: 160,
            d_model: 64,
            n_layers: 2,
            n_heads: 4,
            max_len: 256,
            ffn_mult: 4,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("model: {m}")));
        if self.vocab_size == 0 || self.d_model == 0 || self.max_len == 0 || self.ffn_mult == 0 {
            return bad("sizes must be positive");
        }
        if self.n_heads == 0 || !self.d_model.is_multiple_of(self.n_heads) {
            return bad("d_model must be a positive multiple of n_heads");
        }
        Ok(())
    }

    pub fn d_ff(&self) -> usize {
        self.d_model * self.ffn_mult
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }
}

/// Initial value rule of a tensor.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Init {
    Normal,
    Zero,
    One,
}

/// Offsets of one transformer block's tensors inside the flat vector.
#[derive(Debug, Clone)]
pub(crate) struct BlockLayout {
    pub ln1_g: Range<usize>,
    pub ln1_b: Range<usize>,
    pub w_q: Range<usize>,
    pub b_q: Range<usize>,
    pub w_k: Range<usize>,
    pub b_k: Range<usize>,
    pub w_v: Range<usize>,
    pub b_v: Range<usize>,
    pub w_o: Range<usize>,
    pub b_o: Range<usize>,
    pub ln2_g: Range<usize>,
    pub ln2_b: Range<usize>,
    pub w_1: Range<usize>,
    pub b_1: Range<usize>,
    pub w_2: Range<usize>,
    pub b_2: Range<usize>,
}

/// Fixed tensor order of the flat parameter vector (also the checkpoint
/// order): token embedding, position embedding, blocks, final norm, head.
#[derive(Debug, Clone)]
pub(crate) struct Layout {
    pub tok_emb: Range<usize>,
    pub pos_emb: Range<usize>,
    pub blocks: Vec<BlockLayout>,
    pub lnf_g: Range<usize>,
    pub lnf_b: Range<usize>,
    pub w_out: Range<usize>,
    pub b_out: Range<usize>,
    pub total: usize,
    pub named: Vec<(String, Range<usize>, Init)>,
}

impl Layout {
    pub fn new(c: &ModelConfig) -> Self {
        let (v, d, f, l) = (c.vocab_size, c.d_model, c.d_ff(), c.max_len);
        let mut at = 0usize;
        let mut named = Vec::new();
        let mut take = |name: String, n: usize, init: Init| {
            let r = at..at + n;
            at += n;
            named.push((name, r.clone(), init));
            r
        };
        let tok_emb = take("tok_emb".into(), v * d, Init::Normal);
        let pos_emb = take("pos_emb".into(), l * d, Init::Normal);
        let blocks = (0..c.n_layers)
            .map(|i| BlockLayout {
                ln1_g: take(format!("block{i}.ln1_g"), d, Init::One),
                ln1_b: take(format!("block{i}.ln1_b"), d, Init::Zero),
                w_q: take(format!("block{i}.w_q"), d * d, Init::Normal),
                b_q: take(format!("block{i}.b_q"), d, Init::Zero),
                w_k: take(format!("block{i}.w_k"), d * d, Init::Normal),
                b_k: take(format!("block{i}.b_k"), d, Init::Zero),
                w_v: take(format!("block{i}.w_v"), d * d, Init::Normal),
                b_v: take(format!("block{i}.b_v"), d, Init::Zero),
                w_o: take(format!("block{i}.w_o"), d * d, Init::Normal),
                b_o: take(format!("block{i}.b_o"), d, Init::Zero),
                ln2_g: take(format!("block{i}.ln2_g"), d, Init::One),
                ln2_b: take(format!("block{i}.ln2_b"), d, Init::Zero),
                w_1: take(format!("block{i}.w_1"), d * f, Init::Normal),
                b_1: take(format!("block{i}.b_1"), f, Init::Zero),
                w_2: take(format!("block{i}.w_2"), f * d, Init::Normal),
                b_2: take(format!("block{i}.b_2"), d, Init::Zero),
            })
            .collect();
        let lnf_g = take("lnf_g".into(), d, Init::One);
        let lnf_b = take("lnf_b".into(), d, Init::Zero);
        let w_out = take("w_out".into(), d * v, Init::Normal);
        let b_out = take("b_out".into(), v, Init::Zero);
        Layout {
            tok_emb,
            pos_emb,
            blocks,
            lnf_g,
            lnf_b,
            w_out,
            b_out,
            total: at,
            named,
        }
    }
}

/// All trainable weights as one flat vector in [`Layout`] order.
///
/// The same type doubles as the gradient buffer ([`Gradient`]), so optimizer
/// and clipping code is plain vector arithmetic.
#[derive(Debug, Clone)]
pub struct PolicyParams<F: Scalar> {
    config: ModelConfig,
    values: Vec<F>,
    layout: Arc<Layout>,
}

pub type Gradient<F> = PolicyParams<F>;

impl<F: Scalar> PartialEq for PolicyParams<F> {
    fn eq(&self, other: &Self) -> bool {
        self.config == other.config && self.values == other.values
    }
}

impl<F: Scalar> PolicyParams<F> {
    pub fn zeros(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let layout = Arc::new(Layout::new(&config));
        Ok(Self {
            values: vec![F::zero(); layout.total],
            config,
            layout,
        })
    }

    /// Gaussian weights and embeddings with standard deviation `init_std`;
    /// biases start at zero and layer-norm gains at one.
    pub fn init(config: ModelConfig, seed: u64, init_std: f64) -> Result<Self> {
        let mut p = Self::zeros(config)?;
        let mut rng = rng::seeded(seed, 0x1417);
        let normal = Normal::new(0.0, init_std).map_err(|e| Error::Config(format!("init_std: {e}")))?;
        let layout = Arc::clone(&p.layout);
        for (_, r, init) in &layout.named {
            for x in &mut p.values[r.clone()] {
                *x = match init {
                    Init::Normal => cst(normal.sample(&mut rng)),
                    Init::Zero => F::zero(),
                    Init::One => F::one(),
                };
            }
        }
        Ok(p)
    }

    pub fn from_values(config: ModelConfig, values: Vec<F>) -> Result<Self> {
        let p = Self::zeros(config)?;
        if values.len() != p.values.len() {
            return Err(Error::Checkpoint(format!(
                "expected {} parameters for {:?}, found {}",
                p.values.len(),
                config,
                values.len()
            )));
        }
        Ok(Self { values, ..p })
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            config: self.config,
            values: vec![F::zero(); self.values.len()],
            layout: Arc::clone(&self.layout),
        }
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub(crate) fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn values(&self) -> &[F] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [F] {
        &mut self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Names and index ranges of every tensor, in storage order.
    pub fn tensor_names(&self) -> impl Iterator<Item = (&str, Range<usize>)> {
        self.layout.named.iter().map(|(n, r, _)| (n.as_str(), r.clone()))
    }

    pub fn tensor(&self, name: &str) -> Option<&[F]> {
        let (_, r, _) = self.layout.named.iter().find(|(n, _, _)| n == name)?;
        Some(&self.values[r.clone()])
    }

    pub fn tensor_mut(&mut self, name: &str) -> Option<&mut [F]> {
        let r = self.layout.named.iter().find(|(n, _, _)| n == name)?.1.clone();
        Some(&mut self.values[r])
    }

    /// Output projection `d_model x vocab_size`, row-major.
    pub fn output_head_mut(&mut self) -> (&mut [F], &mut [F]) {
        let (w, b) = (self.layout.w_out.clone(), self.layout.b_out.clone());
        let (lo, hi) = self.values.split_at_mut(b.start);
        (&mut lo[w], &mut hi[..b.len()])
    }

    /// Zeroes the output projection and bias, making every position's
    /// distribution uniform.
    pub fn zero_output_head(&mut self) {
        let (w, b) = self.output_head_mut();
        w.iter_mut().chain(b.iter_mut()).for_each(|x| *x = F::zero());
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|x| x.is_finite())
    }

    pub fn fill_zero(&mut self) {
        self.values.iter_mut().for_each(|x| *x = F::zero());
    }

    /// `self += alpha * other`
    pub fn axpy(&mut self, alpha: F, other: &Self) {
        debug_assert_eq!(self.values.len(), other.values.len());
        for (a, &b) in self.values.iter_mut().zip(&other.values) {
            *a += alpha * b;
        }
    }

    pub fn scale(&mut self, alpha: F) {
        self.values.iter_mut().for_each(|x| *x *= alpha);
    }

    pub fn norm(&self) -> F {
        self.values.iter().map(|&x| x * x).sum::<F>().sqrt()
    }

    /// Rescales to at most `max_norm` (global L2). Returns the norm before clipping.
    pub fn clip_norm(&mut self, max_norm: F) -> F {
        let n = self.norm();
        if n > max_norm && n > F::zero() {
            self.scale(max_norm / n);
        }
        n
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().map(|&x| to_f64(x).abs()).fold(0.0, f64::max)
    }

    /// Converts to another scalar width.
    pub fn cast<G: Scalar>(&self) -> PolicyParams<G> {
        PolicyParams {
            config: self.config,
            values: self.values.iter().map(|&x| cst::<G>(to_f64(x))).collect(),
            layout: Arc::clone(&self.layout),
        }
    }
}

/// Frozen parameters captured at a training step. Cheap to clone; there is no
/// mutable access.
#[derive(Debug, Clone)]
pub struct ReferenceSnapshot<F: Scalar> {
    params: Arc<PolicyParams<F>>,
    step: usize,
}

impl<F: Scalar> ReferenceSnapshot<F> {
    pub fn take(params: &PolicyParams<F>, step: usize) -> Self {
        Self {
            params: Arc::new(params.clone()),
            step,
        }
    }

    pub fn step(&self) -> usize {
        self.step
    }

    pub fn params(&self) -> &PolicyParams<F> {
        &self.params
    }
}

impl<F: Scalar> std::ops::Deref for ReferenceSnapshot<F> {
    type Target = PolicyParams<F>;
    fn deref(&self) -> &PolicyParams<F> {
        &self.params
    }
}

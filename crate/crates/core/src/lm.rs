//! Small decoder-only transformer (pre-norm, GELU feed-forward, learned
//! absolute positions) with a vocabulary projection head and the per-record
//! sequence negative log-likelihood.
//!
//! Forward and backward passes are written out by hand; every operation is
//! generic over [`Scalar`] so the same code runs in `f32` for training and in
//! `f64` for finite-difference checks.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::embeddings::{PromptSequence, INIT_SCALE};
use crate::error::{Error, Result};
use crate::scalar::{c, Scalar};
use crate::tensor::{axpy, dot, matmul_bias, matmul_bias_backward, softmax_in_place, Tensor};

/// Lower bound applied to target probabilities inside `-log`.
pub const PROB_FLOOR: f64 = 1e-12;
const LN_EPS: f64 = 1e-5;
const WEIGHT_STD: f64 = 0.02;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LmConfig {
    pub d_model: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub d_ff: usize,
    pub max_len: usize,
    pub vocab_size: usize,
    pub dropout: f64,
}

impl Default for LmConfig {
    fn default() -> Self {
        Self {
            d_model: 64,
            n_layers: 2,
            n_heads: 2,
            d_ff: 256,
            max_len: 24,
            vocab_size: 0,
            dropout: 0.0,
        }
    }
}

impl LmConfig {
    pub fn validate(&self) -> Result<()> {
        if self.d_model == 0 || self.n_heads == 0 || self.d_model % self.n_heads != 0 {
            return Err(Error::Config(format!(
                "d_model {} must be a positive multiple of n_heads {}",
                self.d_model, self.n_heads
            )));
        }
        if self.max_len < 3 {
            return Err(Error::Config(format!("max_len {} < 3", self.max_len)));
        }
        if self.d_ff == 0 {
            return Err(Error::Config("d_ff must be >= 1".into()));
        }
        if self.vocab_size < 5 {
            return Err(Error::Config(format!("vocab_size {} leaves no words", self.vocab_size)));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Block<T> {
    pub ln1_gain: Tensor<T>,
    pub ln1_bias: Tensor<T>,
    /// `d × 3d`, columns `[q | k | v]`.
    pub attn_w: Tensor<T>,
    pub attn_b: Tensor<T>,
    pub proj_w: Tensor<T>,
    pub proj_b: Tensor<T>,
    pub ln2_gain: Tensor<T>,
    pub ln2_bias: Tensor<T>,
    pub fc_w: Tensor<T>,
    pub fc_b: Tensor<T>,
    pub fc_out_w: Tensor<T>,
    pub fc_out_b: Tensor<T>,
}

/// Every weight of the language model.
#[derive(Debug, Clone, PartialEq)]
pub struct LmParameters<T> {
    /// `|V| × d` word embeddings.
    pub word: Tensor<T>,
    /// `max_len × d` position embeddings.
    pub position: Tensor<T>,
    pub blocks: Vec<Block<T>>,
    pub lnf_gain: Tensor<T>,
    pub lnf_bias: Tensor<T>,
    /// Output projection `W`, `|V| × d`.
    pub vocab_w: Tensor<T>,
    /// Output bias `b`, `|V|`.
    pub vocab_b: Tensor<T>,
}

macro_rules! block_fields {
    ($m:ident) => {
        $m!(ln1_gain, ln1_bias, attn_w, attn_b, proj_w, proj_b, ln2_gain, ln2_bias, fc_w, fc_b, fc_out_w, fc_out_b)
    };
}

impl<T: Scalar> LmParameters<T> {
    pub fn zeros(cfg: &LmConfig) -> Self {
        let d = cfg.d_model;
        let block = || Block {
            ln1_gain: Tensor::zeros(&[d]),
            ln1_bias: Tensor::zeros(&[d]),
            attn_w: Tensor::zeros(&[d, 3 * d]),
            attn_b: Tensor::zeros(&[3 * d]),
            proj_w: Tensor::zeros(&[d, d]),
            proj_b: Tensor::zeros(&[d]),
            ln2_gain: Tensor::zeros(&[d]),
            ln2_bias: Tensor::zeros(&[d]),
            fc_w: Tensor::zeros(&[d, cfg.d_ff]),
            fc_b: Tensor::zeros(&[cfg.d_ff]),
            fc_out_w: Tensor::zeros(&[cfg.d_ff, d]),
            fc_out_b: Tensor::zeros(&[d]),
        };
        Self {
            word: Tensor::zeros(&[cfg.vocab_size, d]),
            position: Tensor::zeros(&[cfg.max_len, d]),
            blocks: (0..cfg.n_layers).map(|_| block()).collect(),
            lnf_gain: Tensor::zeros(&[d]),
            lnf_bias: Tensor::zeros(&[d]),
            vocab_w: Tensor::zeros(&[cfg.vocab_size, d]),
            vocab_b: Tensor::zeros(&[cfg.vocab_size]),
        }
    }

    /// Embeddings uniform on ±0.1; linear weights `N(0, 0.02²)` with the
    /// residual projections scaled by `1/sqrt(2·layers)`; gains 1, biases 0.
    pub fn init<R: Rng + ?Sized>(cfg: &LmConfig, rng: &mut R) -> Self {
        let mut p = Self::zeros(cfg);
        p.word = Tensor::uniform(&p.word.shape, INIT_SCALE, rng);
        p.position = Tensor::uniform(&p.position.shape, INIT_SCALE, rng);
        let normal = |t: &mut Tensor<T>, std: f64, rng: &mut R| {
            let dist = Normal::new(0.0, std).unwrap();
            t.data.iter_mut().for_each(|v| *v = c(dist.sample(rng)));
        };
        let resid_std = WEIGHT_STD / ((2 * cfg.n_layers.max(1)) as f64).sqrt();
        for b in &mut p.blocks {
            b.ln1_gain.data.fill(T::one());
            b.ln2_gain.data.fill(T::one());
            normal(&mut b.attn_w, WEIGHT_STD, rng);
            normal(&mut b.proj_w, resid_std, rng);
            normal(&mut b.fc_w, WEIGHT_STD, rng);
            normal(&mut b.fc_out_w, resid_std, rng);
        }
        p.lnf_gain.data.fill(T::one());
        normal(&mut p.vocab_w, WEIGHT_STD, rng);
        p
    }

    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        z.visit_mut(&mut |_, t| t.fill_zero());
        z
    }

    /// Visits every tensor with a stable dotted name.
    pub fn visit<'a>(&'a self, f: &mut dyn FnMut(String, &'a Tensor<T>)) {
        f("word".into(), &self.word);
        f("position".into(), &self.position);
        for (i, b) in self.blocks.iter().enumerate() {
            macro_rules! each {
                ($($name:ident),*) => { $( f(format!("blocks.{i}.{}", stringify!($name)), &b.$name); )* };
            }
            block_fields!(each);
        }
        f("lnf_gain".into(), &self.lnf_gain);
        f("lnf_bias".into(), &self.lnf_bias);
        f("vocab_w".into(), &self.vocab_w);
        f("vocab_b".into(), &self.vocab_b);
    }

    pub fn visit_mut<'a>(&'a mut self, f: &mut dyn FnMut(String, &'a mut Tensor<T>)) {
        f("word".into(), &mut self.word);
        f("position".into(), &mut self.position);
        for (i, b) in self.blocks.iter_mut().enumerate() {
            macro_rules! each {
                ($($name:ident),*) => { $( f(format!("blocks.{i}.{}", stringify!($name)), &mut b.$name); )* };
            }
            block_fields!(each);
        }
        f("lnf_gain".into(), &mut self.lnf_gain);
        f("lnf_bias".into(), &mut self.lnf_bias);
        f("vocab_w".into(), &mut self.vocab_w);
        f("vocab_b".into(), &mut self.vocab_b);
    }

    pub fn all_finite(&self) -> bool {
        let mut ok = true;
        self.visit(&mut |_, t| ok &= t.all_finite());
        ok
    }

    pub fn cast<U: Scalar>(&self) -> LmParameters<U> {
        let cast_block = |b: &Block<T>| {
            macro_rules! build {
                ($($name:ident),*) => { Block { $( $name: b.$name.cast(), )* } };
            }
            block_fields!(build)
        };
        LmParameters {
            word: self.word.cast(),
            position: self.position.cast(),
            blocks: self.blocks.iter().map(cast_block).collect(),
            lnf_gain: self.lnf_gain.cast(),
            lnf_bias: self.lnf_bias.cast(),
            vocab_w: self.vocab_w.cast(),
            vocab_b: self.vocab_b.cast(),
        }
    }

    /// Checks tensor shapes against `cfg`.
    pub fn check_shapes(&self, cfg: &LmConfig) -> Result<()> {
        let expected = Self::zeros(cfg);
        let mut want = Vec::new();
        expected.visit(&mut |n, t| want.push((n, t.shape.clone())));
        let mut got = Vec::new();
        self.visit(&mut |n, t| got.push((n, t.shape.clone())));
        if want != got {
            return Err(Error::Config("parameter shapes do not match LM configuration".into()));
        }
        Ok(())
    }
}

/// Probability vector over the vocabulary.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenDistribution<T> {
    pub probs: Vec<T>,
}

impl<T: Scalar> TokenDistribution<T> {
    /// Highest-probability index among those `allowed`, lowest index on ties.
    pub fn argmax_where(&self, allowed: impl Fn(usize) -> bool) -> Option<usize> {
        let mut best: Option<(usize, T)> = None;
        for (i, &p) in self.probs.iter().enumerate() {
            if !allowed(i) {
                continue;
            }
            match best {
                Some((_, bp)) if p <= bp => {}
                _ => best = Some((i, p)),
            }
        }
        best.map(|(i, _)| i)
    }
}

struct LnCache<T> {
    xhat: Vec<T>,
    rstd: Vec<T>,
}

struct BlockCache<T> {
    ln1: LnCache<T>,
    h1: Vec<T>,
    qkv: Vec<T>,
    /// `heads × len × len`, zero above the diagonal.
    probs: Vec<T>,
    attn: Vec<T>,
    proj_mask: Option<Vec<T>>,
    ln2: LnCache<T>,
    h2: Vec<T>,
    fc_pre: Vec<T>,
    fc_act: Vec<T>,
    out_mask: Option<Vec<T>>,
}

/// Activations retained by [`Lm::forward_train`] for the backward pass.
pub struct ForwardCache<T> {
    len: usize,
    input_mask: Option<Vec<T>>,
    blocks: Vec<BlockCache<T>>,
    lnf: LnCache<T>,
    /// Final hidden states `O`, `len × d`.
    pub hidden: Vec<T>,
}

fn layer_norm<T: Scalar>(x: &[T], rows: usize, d: usize, gain: &[T], bias: &[T]) -> (Vec<T>, LnCache<T>) {
    let mut y = vec![T::zero(); rows * d];
    let mut xhat = vec![T::zero(); rows * d];
    let mut rstd = vec![T::zero(); rows];
    let inv_d = c::<T>(1.0 / d as f64);
    for r in 0..rows {
        let row = &x[r * d..(r + 1) * d];
        let mean = row.iter().copied().sum::<T>() * inv_d;
        let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() * inv_d;
        let rs = T::one() / (var + c(LN_EPS)).sqrt();
        rstd[r] = rs;
        for k in 0..d {
            let xh = (row[k] - mean) * rs;
            xhat[r * d + k] = xh;
            y[r * d + k] = xh * gain[k] + bias[k];
        }
    }
    (y, LnCache { xhat, rstd })
}

fn layer_norm_backward<T: Scalar>(
    dy: &[T],
    cache: &LnCache<T>,
    rows: usize,
    d: usize,
    gain: &[T],
    dgain: &mut [T],
    dbias: &mut [T],
) -> Vec<T> {
    let mut dx = vec![T::zero(); rows * d];
    let inv_d = c::<T>(1.0 / d as f64);
    let mut dxhat = vec![T::zero(); d];
    for r in 0..rows {
        let dyr = &dy[r * d..(r + 1) * d];
        let xh = &cache.xhat[r * d..(r + 1) * d];
        let mut mean_dxhat = T::zero();
        let mut mean_dxhat_xhat = T::zero();
        for k in 0..d {
            dgain[k] += dyr[k] * xh[k];
            dbias[k] += dyr[k];
            dxhat[k] = dyr[k] * gain[k];
            mean_dxhat += dxhat[k];
            mean_dxhat_xhat += dxhat[k] * xh[k];
        }
        mean_dxhat *= inv_d;
        mean_dxhat_xhat *= inv_d;
        let rs = cache.rstd[r];
        for k in 0..d {
            dx[r * d + k] = rs * (dxhat[k] - mean_dxhat - xh[k] * mean_dxhat_xhat);
        }
    }
    dx
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

#[inline]
fn gelu<T: Scalar>(x: T) -> T {
    let inner = c::<T>(GELU_C) * (x + c::<T>(GELU_A) * x * x * x);
    c::<T>(0.5) * x * (T::one() + inner.tanh())
}

#[inline]
fn gelu_grad<T: Scalar>(x: T) -> T {
    let inner = c::<T>(GELU_C) * (x + c::<T>(GELU_A) * x * x * x);
    let t = inner.tanh();
    let dinner = c::<T>(GELU_C) * (T::one() + c::<T>(3.0 * GELU_A) * x * x);
    c::<T>(0.5) * (T::one() + t) + c::<T>(0.5) * x * (T::one() - t * t) * dinner
}

fn dropout_mask<T: Scalar>(n: usize, p: f64, rng: &mut ChaCha8Rng) -> Vec<T> {
    let keep = c::<T>(1.0 / (1.0 - p));
    (0..n)
        .map(|_| if rng.random::<f64>() < p { T::zero() } else { keep })
        .collect()
}

/// Borrowed view pairing a configuration with its parameters.
#[derive(Clone, Copy)]
pub struct Lm<'a, T> {
    pub cfg: &'a LmConfig,
    pub params: &'a LmParameters<T>,
}

impl<'a, T: Scalar> Lm<'a, T> {
    pub fn new(cfg: &'a LmConfig, params: &'a LmParameters<T>) -> Self {
        Self { cfg, params }
    }

    /// Runs the transformer on `len × d` input embeddings. Dropout is applied
    /// only when `rng` is given and the configured rate is positive.
    pub fn forward_train(&self, inputs: &Tensor<T>, mut rng: Option<&mut ChaCha8Rng>) -> Result<ForwardCache<T>> {
        let cfg = self.cfg;
        let d = cfg.d_model;
        let len = inputs.rows();
        if len > cfg.max_len {
            return Err(Error::SequenceTooLong { len, max: cfg.max_len });
        }
        if inputs.cols() != d {
            return Err(Error::Config(format!("input width {} != d_model {d}", inputs.cols())));
        }
        let p_drop = cfg.dropout;
        let mut mask_for = |n: usize| -> Option<Vec<T>> {
            match rng.as_deref_mut() {
                Some(r) if p_drop > 0.0 => Some(dropout_mask(n, p_drop, r)),
                _ => None,
            }
        };

        let mut x = inputs.data.clone();
        let input_mask = mask_for(len * d);
        if let Some(m) = &input_mask {
            x.iter_mut().zip(m).for_each(|(v, &k)| *v *= k);
        }

        let heads = cfg.n_heads;
        let dh = cfg.head_dim();
        let scale = c::<T>(1.0 / (dh as f64).sqrt());
        let mut blocks = Vec::with_capacity(cfg.n_layers);
        for b in &self.params.blocks {
            let x_in = x;
            let (h1, ln1) = layer_norm(&x_in, len, d, &b.ln1_gain.data, &b.ln1_bias.data);
            let qkv = matmul_bias(&h1, len, d, &b.attn_w.data, 3 * d, Some(&b.attn_b.data));

            let mut probs = vec![T::zero(); heads * len * len];
            let mut attn = vec![T::zero(); len * d];
            let mut scores = vec![T::zero(); len];
            for h in 0..heads {
                let off = h * dh;
                for i in 0..len {
                    let q = &qkv[i * 3 * d + off..i * 3 * d + off + dh];
                    for j in 0..=i {
                        let k = &qkv[j * 3 * d + d + off..j * 3 * d + d + off + dh];
                        scores[j] = dot(q, k) * scale;
                    }
                    softmax_in_place(&mut scores[..=i]);
                    let prow = &mut probs[(h * len + i) * len..(h * len + i + 1) * len];
                    prow[..=i].copy_from_slice(&scores[..=i]);
                    let out = &mut attn[i * d + off..i * d + off + dh];
                    for j in 0..=i {
                        let v = &qkv[j * 3 * d + 2 * d + off..j * 3 * d + 2 * d + off + dh];
                        axpy(prow[j], v, out);
                    }
                }
            }

            let mut proj = matmul_bias(&attn, len, d, &b.proj_w.data, d, Some(&b.proj_b.data));
            let proj_mask = mask_for(len * d);
            if let Some(m) = &proj_mask {
                proj.iter_mut().zip(m).for_each(|(v, &k)| *v *= k);
            }
            let x_mid: Vec<T> = x_in.iter().zip(&proj).map(|(&a, &p)| a + p).collect();

            let (h2, ln2) = layer_norm(&x_mid, len, d, &b.ln2_gain.data, &b.ln2_bias.data);
            let fc_pre = matmul_bias(&h2, len, d, &b.fc_w.data, cfg.d_ff, Some(&b.fc_b.data));
            let fc_act: Vec<T> = fc_pre.iter().map(|&v| gelu(v)).collect();
            let mut ff = matmul_bias(&fc_act, len, cfg.d_ff, &b.fc_out_w.data, d, Some(&b.fc_out_b.data));
            let out_mask = mask_for(len * d);
            if let Some(m) = &out_mask {
                ff.iter_mut().zip(m).for_each(|(v, &k)| *v *= k);
            }
            x = x_mid.iter().zip(&ff).map(|(&a, &f)| a + f).collect();

            blocks.push(BlockCache {
                ln1,
                h1,
                qkv,
                probs,
                attn,
                proj_mask,
                ln2,
                h2,
                fc_pre,
                fc_act,
                out_mask,
            });
        }
        let (hidden, lnf) = layer_norm(&x, len, d, &self.params.lnf_gain.data, &self.params.lnf_bias.data);
        Ok(ForwardCache {
            len,
            input_mask,
            blocks,
            lnf,
            hidden,
        })
    }

    /// Final hidden sequence `O` for an assembled prompt (no dropout).
    pub fn forward(&self, seq: &PromptSequence<T>) -> Result<Tensor<T>> {
        let cache = self.forward_train(&seq.inputs, None)?;
        Ok(Tensor::from_vec(&[cache.len, self.cfg.d_model], cache.hidden))
    }

    pub fn logits(&self, hidden: &[T]) -> Vec<T> {
        let p = self.params;
        (0..self.cfg.vocab_size)
            .map(|v| dot(hidden, p.vocab_w.row(v)) + p.vocab_b.data[v])
            .collect()
    }

    /// `softmax(W·O_s + b)`.
    pub fn project_vocab(&self, hidden: &[T]) -> TokenDistribution<T> {
        let mut probs = self.logits(hidden);
        softmax_in_place(&mut probs);
        TokenDistribution { probs }
    }

    /// Mean over targets of `-log z[target]` for one prompt.
    pub fn record_nll(&self, seq: &PromptSequence<T>) -> Result<T> {
        let cache = self.forward_train(&seq.inputs, None)?;
        let d = self.cfg.d_model;
        let mut total = T::zero();
        for (k, &t) in seq.targets.iter().enumerate() {
            let slot = PromptSequence::<T>::target_slot(k);
            let logits = self.logits(&cache.hidden[slot * d..(slot + 1) * d]);
            total += target_nll(&logits, t).0;
        }
        Ok(total / c(seq.targets.len() as f64))
    }

    /// Record NLL plus its gradient times `scale`, accumulated into `grads`.
    ///
    /// Word and position gradients are routed into `grads`; the gradients of
    /// the two ID slots are returned as `(d_user, d_item)`.
    pub fn record_nll_backward(
        &self,
        seq: &PromptSequence<T>,
        scale: T,
        grads: &mut LmParameters<T>,
        rng: Option<&mut ChaCha8Rng>,
    ) -> Result<(T, Vec<T>, Vec<T>)> {
        let cfg = self.cfg;
        let d = cfg.d_model;
        let p = self.params;
        let cache = self.forward_train(&seq.inputs, rng)?;
        let len = cache.len;
        let n_targets = seq.targets.len();
        let per_target = scale / c(n_targets as f64);

        let mut total = T::zero();
        let mut d_hidden = vec![T::zero(); len * d];
        for (k, &t) in seq.targets.iter().enumerate() {
            let slot = PromptSequence::<T>::target_slot(k);
            let h = &cache.hidden[slot * d..(slot + 1) * d];
            let logits = self.logits(h);
            let (nll, mut dlogits) = target_nll(&logits, t);
            total += nll;
            let dh = &mut d_hidden[slot * d..(slot + 1) * d];
            for (v, g) in dlogits.iter_mut().enumerate() {
                *g *= per_target;
                if *g == T::zero() {
                    continue;
                }
                axpy(*g, p.vocab_w.row(v), dh);
                axpy(*g, h, grads.vocab_w.row_mut(v));
                grads.vocab_b.data[v] += *g;
            }
        }

        let d_inputs = self.backward(&cache, &d_hidden, grads);
        let d_user = d_inputs[..d].to_vec();
        let d_item = d_inputs[d..2 * d].to_vec();
        for pos in 0..len {
            let g = &d_inputs[pos * d..(pos + 1) * d];
            axpy(T::one(), g, grads.position.row_mut(pos));
            if pos >= 2 {
                axpy(T::one(), g, grads.word.row_mut(seq.tokens[pos - 2]));
            }
        }
        Ok((total / c(n_targets as f64), d_user, d_item))
    }

    /// Backpropagates `d_hidden` (gradient w.r.t. `O`) through the blocks,
    /// accumulating parameter gradients. Returns the gradient w.r.t. inputs.
    fn backward(&self, cache: &ForwardCache<T>, d_hidden: &[T], grads: &mut LmParameters<T>) -> Vec<T> {
        let cfg = self.cfg;
        let d = cfg.d_model;
        let len = cache.len;
        let heads = cfg.n_heads;
        let dh = cfg.head_dim();
        let scale = c::<T>(1.0 / (dh as f64).sqrt());
        let p = self.params;

        let mut dx = layer_norm_backward(
            d_hidden,
            &cache.lnf,
            len,
            d,
            &p.lnf_gain.data,
            &mut grads.lnf_gain.data,
            &mut grads.lnf_bias.data,
        );

        for (l, bc) in cache.blocks.iter().enumerate().rev() {
            let b = &p.blocks[l];
            let g = &mut grads.blocks[l];

            // x_out = x_mid + mask ⊙ ffn(ln2(x_mid))
            let mut dff = dx.clone();
            if let Some(m) = &bc.out_mask {
                dff.iter_mut().zip(m).for_each(|(v, &k)| *v *= k);
            }
            let mut dact = vec![T::zero(); len * cfg.d_ff];
            matmul_bias_backward(
                &dff,
                &bc.fc_act,
                len,
                cfg.d_ff,
                &b.fc_out_w.data,
                d,
                &mut dact,
                &mut g.fc_out_w.data,
                Some(&mut g.fc_out_b.data),
            );
            for (da, &pre) in dact.iter_mut().zip(&bc.fc_pre) {
                *da *= gelu_grad(pre);
            }
            let mut dh2 = vec![T::zero(); len * d];
            matmul_bias_backward(
                &dact,
                &bc.h2,
                len,
                d,
                &b.fc_w.data,
                cfg.d_ff,
                &mut dh2,
                &mut g.fc_w.data,
                Some(&mut g.fc_b.data),
            );
            let dmid_ln = layer_norm_backward(
                &dh2,
                &bc.ln2,
                len,
                d,
                &b.ln2_gain.data,
                &mut g.ln2_gain.data,
                &mut g.ln2_bias.data,
            );
            let dmid: Vec<T> = dx.iter().zip(&dmid_ln).map(|(&a, &b)| a + b).collect();

            // x_mid = x_in + mask ⊙ proj(attn(ln1(x_in)))
            let mut dproj = dmid.clone();
            if let Some(m) = &bc.proj_mask {
                dproj.iter_mut().zip(m).for_each(|(v, &k)| *v *= k);
            }
            let mut dattn = vec![T::zero(); len * d];
            matmul_bias_backward(
                &dproj,
                &bc.attn,
                len,
                d,
                &b.proj_w.data,
                d,
                &mut dattn,
                &mut g.proj_w.data,
                Some(&mut g.proj_b.data),
            );

            let qkv = &bc.qkv;
            let mut dqkv = vec![T::zero(); len * 3 * d];
            let mut dp = vec![T::zero(); len];
            for h in 0..heads {
                let off = h * dh;
                for i in 0..len {
                    let prow = &bc.probs[(h * len + i) * len..(h * len + i + 1) * len];
                    let da = &dattn[i * d + off..i * d + off + dh];
                    let mut weighted = T::zero();
                    for j in 0..=i {
                        let vj = j * 3 * d + 2 * d + off;
                        dp[j] = dot(da, &qkv[vj..vj + dh]);
                        weighted += dp[j] * prow[j];
                        axpy(prow[j], da, &mut dqkv[vj..vj + dh]);
                    }
                    let qi = i * 3 * d + off;
                    for j in 0..=i {
                        let ds = prow[j] * (dp[j] - weighted) * scale;
                        if ds == T::zero() {
                            continue;
                        }
                        let kj = j * 3 * d + d + off;
                        for cidx in 0..dh {
                            dqkv[qi + cidx] += ds * qkv[kj + cidx];
                            dqkv[kj + cidx] += ds * qkv[qi + cidx];
                        }
                    }
                }
            }
            let mut dh1 = vec![T::zero(); len * d];
            matmul_bias_backward(
                &dqkv,
                &bc.h1,
                len,
                d,
                &b.attn_w.data,
                3 * d,
                &mut dh1,
                &mut g.attn_w.data,
                Some(&mut g.attn_b.data),
            );
            let din_ln = layer_norm_backward(
                &dh1,
                &bc.ln1,
                len,
                d,
                &b.ln1_gain.data,
                &mut g.ln1_gain.data,
                &mut g.ln1_bias.data,
            );
            dx = dmid.iter().zip(&din_ln).map(|(&a, &b)| a + b).collect();
        }
        if let Some(m) = &cache.input_mask {
            dx.iter_mut().zip(m).for_each(|(v, &k)| *v *= k);
        }
        dx
    }
}

/// Floored `-log softmax(logits)[target]` and its gradient w.r.t. logits.
fn target_nll<T: Scalar>(logits: &[T], target: usize) -> (T, Vec<T>) {
    let mut probs = logits.to_vec();
    softmax_in_place(&mut probs);
    let max = logits.iter().copied().fold(T::neg_infinity(), T::max);
    let lse = max + logits.iter().map(|&l| (l - max).exp()).sum::<T>().ln();
    let nll = lse - logits[target];
    let cap = c::<T>(-PROB_FLOOR.ln());
    if nll > cap {
        return (cap, vec![T::zero(); logits.len()]);
    }
    probs[target] -= T::one();
    (nll, probs)
}

/// `1/|B| Σ_records (1/|targets| Σ -log z[target])`.
pub fn sequence_nll<T: Scalar>(batch: &[PromptSequence<T>], lm: &Lm<'_, T>) -> Result<T> {
    if batch.is_empty() {
        return Err(Error::UndefinedInput("empty batch"));
    }
    let mut total = T::zero();
    for seq in batch {
        if seq.targets.is_empty() {
            return Err(Error::UndefinedInput("sequence without targets"));
        }
        total += lm.record_nll(seq)?;
    }
    Ok(total / c(batch.len() as f64))
}

/// Deterministic RNG for dropout masks, derived from a seed and a counter.
pub fn dropout_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embeddings::{assemble_prompt, EmbeddingTables};

    fn cfg(vocab: usize) -> LmConfig {
        LmConfig {
            d_model: 8,
            n_layers: 2,
            n_heads: 2,
            d_ff: 16,
            max_len: 10,
            vocab_size: vocab,
            dropout: 0.0,
        }
    }

    fn setup(seed: u64) -> (LmConfig, LmParameters<f64>, EmbeddingTables<f64>) {
        let c = cfg(11);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = LmParameters::<f64>::init(&c, &mut rng);
        // Larger weights so every path carries signal.
        p.visit_mut(&mut |_, t| {
            for v in t.data.iter_mut() {
                *v += rng.random_range(-0.3..0.3);
            }
        });
        let tables = EmbeddingTables::init(3, 3, 8, &mut rng);
        (c, p, tables)
    }

    #[test]
    fn config_validation() {
        assert!(cfg(11).validate().is_ok());
        assert!(LmConfig { n_heads: 3, ..cfg(11) }.validate().is_err());
        assert!(LmConfig { max_len: 2, ..cfg(11) }.validate().is_err());
        assert!(LmConfig { dropout: 1.0, ..cfg(11) }.validate().is_err());
    }

    #[test]
    fn causal_perturbation() {
        let (c, p, t) = setup(1);
        let lm = Lm::new(&c, &p);
        let seq = assemble_prompt(0, 1, &[4, 5, 6, 7], &t, &p.word, &p.position).unwrap();
        let base = lm.forward(&seq).unwrap();
        for j in 0..seq.len() {
            let mut perturbed = seq.clone();
            for v in perturbed.inputs.row_mut(j) {
                *v += 0.5;
            }
            let out = lm.forward(&perturbed).unwrap();
            for k in 0..j {
                assert_eq!(out.row(k), base.row(k), "position {k} saw {j}");
            }
            assert_ne!(out.row(j), base.row(j));
        }
    }

    #[test]
    fn single_position_and_length_guard() {
        let (c, p, _) = setup(2);
        let lm = Lm::new(&c, &p);
        let one = Tensor::<f64>::filled(&[1, 8], 0.1);
        assert_eq!(lm.forward_train(&one, None).unwrap().hidden.len(), 8);
        let long = Tensor::<f64>::zeros(&[11, 8]);
        assert!(matches!(lm.forward_train(&long, None), Err(Error::SequenceTooLong { .. })));
    }

    #[test]
    fn forward_is_deterministic() {
        let (c, p, t) = setup(3);
        let (c2, p2, t2) = setup(3);
        let s1 = assemble_prompt(2, 0, &[8, 9], &t, &p.word, &p.position).unwrap();
        let s2 = assemble_prompt(2, 0, &[8, 9], &t2, &p2.word, &p2.position).unwrap();
        let a = Lm::new(&c, &p).forward(&s1).unwrap();
        let b = Lm::new(&c2, &p2).forward(&s2).unwrap();
        assert_eq!(a.data.iter().map(|v| v.to_bits()).collect::<Vec<_>>(), b.data.iter().map(|v| v.to_bits()).collect::<Vec<_>>());
    }

    #[test]
    fn projection_examples() {
        let (c, mut p, _) = setup(4);
        p.vocab_w.fill_zero();
        p.vocab_b.fill_zero();
        let h = vec![0.3; 8];
        let z = Lm::new(&c, &p).project_vocab(&h);
        for &v in &z.probs {
            assert!((v - 1.0 / 11.0).abs() < 1e-15);
        }
        p.vocab_b.data[6] = 1000.0;
        let z = Lm::new(&c, &p).project_vocab(&h);
        assert!((z.probs[6] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn projection_matches_independent_softmax() {
        let (c, p, _) = setup(5);
        let mut rng = ChaCha8Rng::seed_from_u64(55);
        let h: Vec<f64> = (0..8).map(|_| rng.random_range(-2.0..2.0)).collect();
        let z = Lm::new(&c, &p).project_vocab(&h);
        let logits: Vec<f64> = (0..11)
            .map(|v| (0..8).map(|k| p.vocab_w.data[v * 8 + k] * h[k]).sum::<f64>() + p.vocab_b.data[v])
            .collect();
        let denom: f64 = logits.iter().map(|l| l.exp()).sum();
        for v in 0..11 {
            assert!((z.probs[v] - logits[v].exp() / denom).abs() < 1e-9);
        }
        assert!((z.probs.iter().sum::<f64>() - 1.0).abs() < 1e-6);
    }

    #[test]
    fn loss_examples() {
        let (c, mut p, t) = setup(6);
        p.vocab_w.fill_zero();
        p.vocab_b.fill_zero();
        let lm = Lm::new(&c, &p);
        let seq = assemble_prompt(0, 0, &[4, 5], &t, &p.word, &p.position).unwrap();
        let uniform = sequence_nll(&[seq.clone()], &lm).unwrap();
        assert!((uniform - 11f64.ln()).abs() < 1e-12);

        // Every target certain: bias dominates and W = 0, so z is constant.
        let mut certain = p.clone();
        certain.vocab_b.data[crate::corpus::EOS] = 1e4;
        let seq = assemble_prompt(0, 0, &[], &t, &certain.word, &certain.position).unwrap();
        assert_eq!(sequence_nll(&[seq], &Lm::new(&c, &certain)).unwrap(), 0.0);
    }

    #[test]
    fn mean_of_means_with_hand_built_distributions() {
        // W = 0 makes z = softmax(b) at every position.
        let (c, mut p, t) = setup(7);
        p.vocab_w.fill_zero();
        p.vocab_b.fill_zero();
        p.vocab_b.data[4] = 2.0;
        p.vocab_b.data[1] = 1.0;
        let lm = Lm::new(&c, &p);
        let denom = 9.0 + 2f64.exp() + 1f64.exp();
        let (z4, z5, zeos) = (2f64.exp() / denom, 1.0 / denom, 1f64.exp() / denom);
        let r1 = assemble_prompt(0, 1, &[4, 4, 5], &t, &p.word, &p.position).unwrap();
        let r2 = assemble_prompt(1, 2, &[5], &t, &p.word, &p.position).unwrap();
        let m1 = -(2.0 * z4.ln() + z5.ln() + zeos.ln()) / 4.0;
        let m2 = -(z5.ln() + zeos.ln()) / 2.0;
        let got = sequence_nll(&[r1, r2], &lm).unwrap();
        assert!((got - (m1 + m2) / 2.0).abs() < 1e-12);
    }

    #[test]
    fn batch_loss_is_mean_of_individual_losses() {
        let (c, p, t) = setup(8);
        let lm = Lm::new(&c, &p);
        let seqs: Vec<_> = [(0, 0, vec![4, 5, 6]), (1, 2, vec![7]), (2, 1, vec![8, 9, 10, 4, 5])]
            .into_iter()
            .map(|(u, i, e)| assemble_prompt(u, i, &e, &t, &p.word, &p.position).unwrap())
            .collect();
        let batch = sequence_nll(&seqs, &lm).unwrap();
        let individual: f64 = seqs.iter().map(|s| sequence_nll(&[s.clone()], &lm).unwrap()).sum::<f64>() / 3.0;
        assert!((batch - individual).abs() < 1e-9);
        assert!(batch >= 0.0);
    }

    #[test]
    fn backward_matches_finite_differences() {
        let (c, p, t) = setup(9);
        let seq_of = |p: &LmParameters<f64>, t: &EmbeddingTables<f64>| {
            assemble_prompt(1, 2, &[4, 7, 9, 4], t, &p.word, &p.position).unwrap()
        };
        let loss = |p: &LmParameters<f64>, t: &EmbeddingTables<f64>| Lm::new(&c, p).record_nll(&seq_of(p, t)).unwrap();
        let mut grads = p.zeros_like();
        let (l, du, di) = Lm::new(&c, &p).record_nll_backward(&seq_of(&p, &t), 1.0, &mut grads, None).unwrap();
        assert!((l - loss(&p, &t)).abs() < 1e-12);

        let eps = 1e-5;
        let mut names = Vec::new();
        p.visit(&mut |n, _| names.push(n));
        let mut analytic = Vec::new();
        grads.visit(&mut |_, g| analytic.push(g.data.clone()));
        for (ti, name) in names.iter().enumerate() {
            for k in 0..analytic[ti].len() {
                let bump = |delta: f64| {
                    let mut q = p.clone();
                    let mut idx = 0;
                    q.visit_mut(&mut |_, tt| {
                        if idx == ti {
                            tt.data[k] += delta;
                        }
                        idx += 1;
                    });
                    loss(&q, &t)
                };
                let fd = (bump(eps) - bump(-eps)) / (2.0 * eps);
                let a = analytic[ti][k];
                let rel = (a - fd).abs() / a.abs().max(fd.abs()).max(1e-6);
                assert!(rel < 1e-4, "{name}[{k}]: analytic {a} numeric {fd}");
            }
        }
        for (row, d, is_user) in [(1usize, &du, true), (2usize, &di, false)] {
            for k in 0..8 {
                let bump = |delta: f64| {
                    let mut tt = t.clone();
                    if is_user {
                        tt.users.row_mut(row)[k] += delta;
                    } else {
                        tt.items.row_mut(row)[k] += delta;
                    }
                    loss(&p, &tt)
                };
                let fd = (bump(eps) - bump(-eps)) / (2.0 * eps);
                assert!((d[k] - fd).abs() / d[k].abs().max(fd.abs()).max(1e-6) < 1e-4);
            }
        }
    }

    #[test]
    fn dropout_changes_training_forward_only() {
        let (mut c, p, t) = setup(10);
        c.dropout = 0.5;
        let lm = Lm::new(&c, &p);
        let seq = assemble_prompt(0, 1, &[4, 5], &t, &p.word, &p.position).unwrap();
        let plain = lm.forward(&seq).unwrap();
        let mut rng = dropout_rng(1, 0);
        let dropped = lm.forward_train(&seq.inputs, Some(&mut rng)).unwrap();
        assert_ne!(plain.data, dropped.hidden);
        assert_eq!(plain, lm.forward(&seq).unwrap());
    }

    #[test]
    fn argmax_ties_pick_lowest_index() {
        let z = TokenDistribution { probs: vec![0.1, 0.3, 0.3, 0.3] };
        assert_eq!(z.argmax_where(|_| true), Some(1));
        assert_eq!(z.argmax_where(|i| i != 1), Some(2));
        assert_eq!(z.argmax_where(|_| false), None);
    }
}

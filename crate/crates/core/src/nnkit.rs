//! Frozen, seeded neural building blocks: linear maps, ReLU, softmax and
//! multi-head scaled dot-product attention.

use rand::RngCore;

use crate::error::{Error, Result};
use crate::rng::unit_f64;

#[derive(Debug, Clone, PartialEq)]
pub struct LinearMap {
    pub out_dim: usize,
    pub in_dim: usize,
    /// Row-major `out_dim x in_dim`.
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl LinearMap {
    /// Weights and biases uniform in `[-1, 1) / sqrt(in_dim)`, drawn from a
    /// ChaCha stream so they are bit-identical across platforms.
    pub fn init_seeded(out_dim: usize, in_dim: usize, seed: u64) -> Self {
        assert!(out_dim > 0 && in_dim > 0, "linear map needs positive dims");
        let mut rng = crate::rng::stream_rng(seed, (out_dim as u64) << 32 | in_dim as u64, crate::rng::Stream::Weights);
        let scale = 1.0 / (in_dim as f64).sqrt();
        let mut draw = || (2.0 * unit_f64(rng.next_u64()) - 1.0) * scale;
        let weight = (0..out_dim * in_dim).map(|_| draw()).collect();
        let bias = (0..out_dim).map(|_| draw()).collect();
        Self {
            out_dim,
            in_dim,
            weight,
            bias,
        }
    }

    pub fn with_zero_bias(mut self) -> Self {
        self.bias.iter_mut().for_each(|b| *b = 0.0);
        self
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        let mut out = self.bias.clone();
        self.apply_into(x, &mut out);
        out
    }

    /// `out = W x + out`; callers seed `out` with the bias or zeros.
    fn apply_into(&self, x: &[f64], out: &mut [f64]) {
        assert_eq!(x.len(), self.in_dim, "linear map input size");
        for (row, o) in self.weight.chunks_exact(self.in_dim).zip(out.iter_mut()) {
            *o += row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>();
        }
    }
}

pub fn relu(x: &[f64]) -> Vec<f64> {
    x.iter().map(|&v| v.max(0.0)).collect()
}

/// Numerically stable softmax.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|&l| (l - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct HeadParams {
    pub query: LinearMap,
    pub key: LinearMap,
    pub value: LinearMap,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MhaParams {
    pub d_model: usize,
    pub heads: Vec<HeadParams>,
    pub output: LinearMap,
}

impl MhaParams {
    pub fn init_seeded(d_model: usize, n_heads: usize, seed: u64) -> Self {
        assert!(n_heads > 0 && d_model.is_multiple_of(n_heads), "head dimension must divide d_model");
        let d_head = d_model / n_heads;
        let heads = (0..n_heads as u64)
            .map(|h| {
                let base = seed.wrapping_mul(31).wrapping_add(h * 3);
                HeadParams {
                    query: LinearMap::init_seeded(d_head, d_model, base),
                    key: LinearMap::init_seeded(d_head, d_model, base + 1),
                    value: LinearMap::init_seeded(d_head, d_model, base + 2),
                }
            })
            .collect();
        Self {
            d_model,
            heads,
            output: LinearMap::init_seeded(d_model, d_model, seed.wrapping_mul(31).wrapping_sub(1)),
        }
    }

    pub fn n_heads(&self) -> usize {
        self.heads.len()
    }

    pub fn d_head(&self) -> usize {
        self.d_model / self.heads.len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MhaOutput {
    pub outputs: Vec<Vec<f64>>,
    /// Head-averaged attention weights, `queries x keys`.
    pub attn: Vec<Vec<f64>>,
}

pub fn mha(params: &MhaParams, queries: &[Vec<f64>], keys: &[Vec<f64>], values: &[Vec<f64>]) -> Result<MhaOutput> {
    if keys.is_empty() {
        return Err(Error::EmptyKeySet);
    }
    assert_eq!(keys.len(), values.len(), "keys and values must pair up");
    let n_heads = params.n_heads();
    let d_head = params.d_head();
    let scale = 1.0 / (d_head as f64).sqrt();

    let mut concat = vec![vec![0.0; params.d_model]; queries.len()];
    let mut attn = vec![vec![0.0; keys.len()]; queries.len()];
    for (h, head) in params.heads.iter().enumerate() {
        let k: Vec<Vec<f64>> = keys.iter().map(|x| head.key.apply(x)).collect();
        let v: Vec<Vec<f64>> = values.iter().map(|x| head.value.apply(x)).collect();
        for (qi, query) in queries.iter().enumerate() {
            let q = head.query.apply(query);
            let logits: Vec<f64> = k
                .iter()
                .map(|kv| scale * q.iter().zip(kv).map(|(a, b)| a * b).sum::<f64>())
                .collect();
            let w = softmax(&logits);
            let slot = &mut concat[qi][h * d_head..(h + 1) * d_head];
            for (wj, vj) in w.iter().zip(&v) {
                for (s, x) in slot.iter_mut().zip(vj) {
                    *s += wj * x;
                }
            }
            for (a, wj) in attn[qi].iter_mut().zip(&w) {
                *a += wj / n_heads as f64;
            }
        }
    }
    let outputs = concat.iter().map(|c| params.output.apply(c)).collect();
    Ok(MhaOutput { outputs, attn })
}

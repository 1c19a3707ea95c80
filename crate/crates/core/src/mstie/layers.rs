//! Transformer building blocks on the autograd tape.

use std::collections::HashMap;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::ParamStore;
use crate::autograd::{Graph, Var};

const LN_EPS: f64 = 1e-5;

/// Softmax weights of one attention head, kept for inspection.
#[derive(Debug, Clone)]
pub struct AttentionRecord {
    pub site: String,
    pub head: usize,
    pub weights: Array2<f64>,
}

/// A forward pass in progress: the tape, lazily bound parameters, the
/// dropout source and an optional attention log.
pub struct Ctx<'p> {
    pub graph: Graph,
    params: &'p ParamStore,
    bound: HashMap<String, Var>,
    trainable: bool,
    dropout: Option<(f64, ChaCha8Rng)>,
    attention: Option<Vec<AttentionRecord>>,
}

impl<'p> Ctx<'p> {
    /// Inference: parameters are constants and dropout is off.
    pub fn eval(params: &'p ParamStore) -> Self {
        Self {
            graph: Graph::new(),
            params,
            bound: HashMap::new(),
            trainable: false,
            dropout: None,
            attention: None,
        }
    }

    /// Training: parameters receive gradients; dropout at rate `p` drawn
    /// from `seed`.
    pub fn train(params: &'p ParamStore, p: f64, seed: u64) -> Self {
        Self {
            trainable: true,
            dropout: (p > 0.0).then(|| (p, ChaCha8Rng::seed_from_u64(seed))),
            ..Self::eval(params)
        }
    }

    /// Parameters are graph variables but dropout stays off.
    pub fn differentiable(params: &'p ParamStore) -> Self {
        Self {
            trainable: true,
            ..Self::eval(params)
        }
    }

    pub fn record_attention(mut self) -> Self {
        self.attention = Some(Vec::new());
        self
    }

    pub fn attention_log(&self) -> &[AttentionRecord] {
        self.attention.as_deref().unwrap_or(&[])
    }

    /// Graph node for parameter `name`, created on first use.
    pub fn param(&mut self, name: &str) -> Var {
        if let Some(&v) = self.bound.get(name) {
            return v;
        }
        let value = self
            .params
            .get(name)
            .unwrap_or_else(|| panic!("missing parameter {name}"))
            .clone();
        let v = if self.trainable {
            self.graph.variable(value)
        } else {
            self.graph.constant(value)
        };
        self.bound.insert(name.to_string(), v);
        v
    }

    /// Parameters used so far, by name.
    pub fn bound(&self) -> &HashMap<String, Var> {
        &self.bound
    }

    pub fn dropout(&mut self, x: Var) -> Var {
        let Some((p, rng)) = self.dropout.as_mut() else {
            return x;
        };
        let keep = 1.0 - *p;
        let shape = self.graph.shape(x);
        let mask = Array2::from_shape_simple_fn(shape, || {
            if rng.random::<f64>() < keep {
                1.0 / keep
            } else {
                0.0
            }
        });
        self.graph.mask(x, mask)
    }

    pub fn linear(&mut self, x: Var, prefix: &str) -> Var {
        let w = self.param(&format!("{prefix}.w"));
        let b = self.param(&format!("{prefix}.b"));
        let xw = self.graph.matmul(x, w);
        self.graph.add(xw, b)
    }

    pub fn layer_norm(&mut self, x: Var, prefix: &str) -> Var {
        let g = self.param(&format!("{prefix}.g"));
        let b = self.param(&format!("{prefix}.b"));
        let n = self.graph.layer_norm(x, LN_EPS);
        let s = self.graph.mul(n, g);
        self.graph.add(s, b)
    }

    /// Multi-head scaled dot-product attention with learned projections.
    /// Rows of `q_in` and `kv_in` are split into `groups` equal blocks that
    /// attend only within themselves (one block per frame for spatial
    /// attention).
    pub fn attention(&mut self, prefix: &str, q_in: Var, kv_in: Var, heads: usize, groups: usize) -> Var {
        let q = self.linear(q_in, &format!("{prefix}.q"));
        let k = self.linear(kv_in, &format!("{prefix}.k"));
        let v = self.linear(kv_in, &format!("{prefix}.v"));
        let (tq, e) = self.graph.shape(q);
        let tk = self.graph.shape(k).0;
        assert!(tq % groups == 0 && tk % groups == 0, "rows not divisible into {groups} groups");
        let (gq, gk) = (tq / groups, tk / groups);
        let d = e / heads;
        let scale = 1.0 / (d as f64).sqrt();
        let mut head_outs = Vec::with_capacity(heads);
        for h in 0..heads {
            let qh = self.graph.slice_cols(q, h * d, (h + 1) * d);
            let kh = self.graph.slice_cols(k, h * d, (h + 1) * d);
            let vh = self.graph.slice_cols(v, h * d, (h + 1) * d);
            let mut parts = Vec::with_capacity(groups);
            for gi in 0..groups {
                let (qg, kg, vg) = if groups == 1 {
                    (qh, kh, vh)
                } else {
                    (
                        self.graph.slice_rows(qh, gi * gq, (gi + 1) * gq),
                        self.graph.slice_rows(kh, gi * gk, (gi + 1) * gk),
                        self.graph.slice_rows(vh, gi * gk, (gi + 1) * gk),
                    )
                };
                let kt = self.graph.transpose(kg);
                let scores = self.graph.matmul(qg, kt);
                let scores = self.graph.scale(scores, scale);
                let weights = self.graph.softmax_rows(scores);
                if let Some(log) = self.attention.as_mut() {
                    log.push(AttentionRecord {
                        site: prefix.to_string(),
                        head: h,
                        weights: self.graph.value(weights).clone(),
                    });
                }
                parts.push(self.graph.matmul(weights, vg));
            }
            head_outs.push(if groups == 1 { parts[0] } else { self.graph.concat_rows(&parts) });
        }
        let cat = if heads == 1 { head_outs[0] } else { self.graph.concat_cols(&head_outs) };
        self.linear(cat, &format!("{prefix}.o"))
    }

    /// Pre-norm block: `h = x + MHA(LN(x))`, `out = h + FFN(LN(h))`.
    pub fn block(&mut self, x: Var, prefix: &str, heads: usize, groups: usize) -> Var {
        let n1 = self.layer_norm(x, &format!("{prefix}.ln1"));
        let a = self.attention(&format!("{prefix}.attn"), n1, n1, heads, groups);
        let a = self.dropout(a);
        let h = self.graph.add(x, a);
        let n2 = self.layer_norm(h, &format!("{prefix}.ln2"));
        let f = self.linear(n2, &format!("{prefix}.ffn1"));
        let f = self.graph.gelu(f);
        let f = self.linear(f, &format!("{prefix}.ffn2"));
        let f = self.dropout(f);
        self.graph.add(h, f)
    }
}

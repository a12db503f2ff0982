//! Neural network building blocks over the autodiff engine: linear layers,
//! MLPs, layer norm, and transformer encoder/decoder layers.
//!
//! Modules own their parameter tensors and register them on the tape by
//! name at forward time; repeated forward calls in one graph share the
//! same leaf nodes, so gradients accumulate correctly.

use super::{Element, Tape, Tensor, Var};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Parameter visitor used by the optimizer and checkpointing.
pub trait Module<E: Element> {
    fn visit_params(&self, f: &mut dyn FnMut(&str, &Tensor<E>));
    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&str, &mut Tensor<E>));
}

/// Glorot-uniform initialization.
pub fn glorot<E: Element>(
    rng: &mut ChaCha8Rng,
    shape: &[usize],
    fan_in: usize,
    fan_out: usize,
) -> Tensor<E> {
    let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let data: Vec<f64> = (0..shape.iter().product::<usize>())
        .map(|_| rng.gen_range(-bound..bound))
        .collect();
    Tensor::from_f64s(shape, &data)
}

/// A single named parameter tensor (query tokens, positional embeddings,
/// the learned empty-context vector).
#[derive(Debug, Clone)]
pub struct Param<E: Element = f64> {
    pub name: String,
    pub value: Tensor<E>,
}

impl<E: Element> Param<E> {
    pub fn new(name: impl Into<String>, value: Tensor<E>) -> Self {
        Self { name: name.into(), value }
    }

    pub fn var(&self, tape: &Tape<E>) -> Var<E> {
        tape.leaf(&self.name, &self.value)
    }
}

impl<E: Element> Module<E> for Param<E> {
    fn visit_params(&self, f: &mut dyn FnMut(&str, &Tensor<E>)) {
        f(&self.name, &self.value);
    }
    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&str, &mut Tensor<E>)) {
        f(&self.name, &mut self.value);
    }
}

#[derive(Debug, Clone)]
pub struct Linear<E: Element = f64> {
    pub w: Param<E>,
    pub b: Param<E>,
}

impl<E: Element> Linear<E> {
    pub fn new(prefix: &str, in_dim: usize, out_dim: usize, rng: &mut ChaCha8Rng) -> Self {
        Self {
            w: Param::new(format!("{prefix}.w"), glorot(rng, &[in_dim, out_dim], in_dim, out_dim)),
            b: Param::new(format!("{prefix}.b"), Tensor::zeros(&[out_dim])),
        }
    }

    pub fn in_dim(&self) -> usize {
        self.w.value.shape()[0]
    }

    pub fn out_dim(&self) -> usize {
        self.w.value.shape()[1]
    }

    /// [n, in] -> [n, out]
    pub fn forward(&self, tape: &Tape<E>, x: &Var<E>) -> Var<E> {
        x.matmul(&self.w.var(tape)).add(&self.b.var(tape))
    }

    /// [in] -> [out]
    pub fn forward_vec(&self, tape: &Tape<E>, x: &Var<E>) -> Var<E> {
        let d = self.in_dim();
        self.forward(tape, &x.reshape(&[1, d])).reshape(&[self.out_dim()])
    }
}

impl<E: Element> Module<E> for Linear<E> {
    fn visit_params(&self, f: &mut dyn FnMut(&str, &Tensor<E>)) {
        self.w.visit_params(f);
        self.b.visit_params(f);
    }
    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&str, &mut Tensor<E>)) {
        self.w.visit_params_mut(f);
        self.b.visit_params_mut(f);
    }
}

/// Stack of linear layers with ReLU between (and optionally after) them.
#[derive(Debug, Clone)]
pub struct Mlp<E: Element = f64> {
    pub layers: Vec<Linear<E>>,
    pub activate_last: bool,
}

impl<E: Element> Mlp<E> {
    pub fn new(prefix: &str, dims: &[usize], activate_last: bool, rng: &mut ChaCha8Rng) -> Self {
        assert!(dims.len() >= 2, "mlp needs at least input and output dims");
        let layers = dims
            .windows(2)
            .enumerate()
            .map(|(i, w)| Linear::new(&format!("{prefix}.l{i}"), w[0], w[1], rng))
            .collect();
        Self { layers, activate_last }
    }

    pub fn forward(&self, tape: &Tape<E>, x: &Var<E>) -> Var<E> {
        let mut h = x.clone();
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            h = layer.forward(tape, &h);
            if i < last || self.activate_last {
                h = h.relu();
            }
        }
        h
    }
}

impl<E: Element> Module<E> for Mlp<E> {
    fn visit_params(&self, f: &mut dyn FnMut(&str, &Tensor<E>)) {
        for l in &self.layers {
            l.visit_params(f);
        }
    }
    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&str, &mut Tensor<E>)) {
        for l in &mut self.layers {
            l.visit_params_mut(f);
        }
    }
}

#[derive(Debug, Clone)]
pub struct LayerNorm<E: Element = f64> {
    pub gamma: Param<E>,
    pub beta: Param<E>,
    pub eps: f64,
}

impl<E: Element> LayerNorm<E> {
    pub fn new(prefix: &str, dim: usize) -> Self {
        Self {
            gamma: Param::new(format!("{prefix}.g"), Tensor::filled(&[dim], E::one())),
            beta: Param::new(format!("{prefix}.b"), Tensor::zeros(&[dim])),
            eps: 1e-5,
        }
    }

    pub fn forward(&self, tape: &Tape<E>, x: &Var<E>) -> Var<E> {
        x.layer_norm_last(self.eps)
            .mul(&self.gamma.var(tape))
            .add(&self.beta.var(tape))
    }
}

impl<E: Element> Module<E> for LayerNorm<E> {
    fn visit_params(&self, f: &mut dyn FnMut(&str, &Tensor<E>)) {
        self.gamma.visit_params(f);
        self.beta.visit_params(f);
    }
    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&str, &mut Tensor<E>)) {
        self.gamma.visit_params_mut(f);
        self.beta.visit_params_mut(f);
    }
}

/// Softmax attention over full sequences with an optional key padding mask
/// (`true` = masked out).
pub fn scaled_dot_product_attention<E: Element>(
    q: &Var<E>,
    k: &Var<E>,
    v: &Var<E>,
    key_mask: Option<&[bool]>,
) -> Var<E> {
    let d = q.value().shape()[1];
    let mut scores = q.matmul(&k.transpose()).scale(1.0 / (d as f64).sqrt());
    if let Some(mask) = key_mask {
        assert_eq!(mask.len(), k.value().shape()[0], "key mask length mismatch");
        let bias: Vec<f64> = mask.iter().map(|&m| if m { -1e30 } else { 0.0 }).collect();
        let bias = q.tape().constant(Tensor::from_f64s(&[mask.len()], &bias));
        scores = scores.add(&bias);
    }
    scores.softmax_last().matmul(v)
}

#[derive(Debug, Clone)]
pub struct MultiHeadAttention<E: Element = f64> {
    pub wq: Linear<E>,
    pub wk: Linear<E>,
    pub wv: Linear<E>,
    pub wo: Linear<E>,
    pub heads: usize,
}

impl<E: Element> MultiHeadAttention<E> {
    pub fn new(prefix: &str, dim: usize, heads: usize, rng: &mut ChaCha8Rng) -> Self {
        assert_eq!(dim % heads, 0, "model dim {dim} not divisible by {heads} heads");
        Self {
            wq: Linear::new(&format!("{prefix}.wq"), dim, dim, rng),
            wk: Linear::new(&format!("{prefix}.wk"), dim, dim, rng),
            wv: Linear::new(&format!("{prefix}.wv"), dim, dim, rng),
            wo: Linear::new(&format!("{prefix}.wo"), dim, dim, rng),
            heads: heads,
        }
    }

    /// Queries [n, d] attend to keys/values [m, d].
    pub fn forward(
        &self,
        tape: &Tape<E>,
        queries: &Var<E>,
        context: &Var<E>,
        key_mask: Option<&[bool]>,
    ) -> Var<E> {
        let dim = self.wq.in_dim();
        let hd = dim / self.heads;
        let q = self.wq.forward(tape, queries);
        let k = self.wk.forward(tape, context);
        let v = self.wv.forward(tape, context);
        let mut head_outputs = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let qh = q.narrow(1, h * hd, hd);
            let kh = k.narrow(1, h * hd, hd);
            let vh = v.narrow(1, h * hd, hd);
            head_outputs.push(scaled_dot_product_attention(&qh, &kh, &vh, key_mask));
        }
        let refs: Vec<&Var<E>> = head_outputs.iter().collect();
        self.wo.forward(tape, &Var::cat(&refs, 1))
    }
}

impl<E: Element> Module<E> for MultiHeadAttention<E> {
    fn visit_params(&self, f: &mut dyn FnMut(&str, &Tensor<E>)) {
        self.wq.visit_params(f);
        self.wk.visit_params(f);
        self.wv.visit_params(f);
        self.wo.visit_params(f);
    }
    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&str, &mut Tensor<E>)) {
        self.wq.visit_params_mut(f);
        self.wk.visit_params_mut(f);
        self.wv.visit_params_mut(f);
        self.wo.visit_params_mut(f);
    }
}

/// Pre-norm transformer encoder layer: self-attention plus feed-forward,
/// both with residual connections.
#[derive(Debug, Clone)]
pub struct EncoderLayer<E: Element = f64> {
    pub norm1: LayerNorm<E>,
    pub attn: MultiHeadAttention<E>,
    pub norm2: LayerNorm<E>,
    pub ff1: Linear<E>,
    pub ff2: Linear<E>,
}

impl<E: Element> EncoderLayer<E> {
    pub fn new(prefix: &str, dim: usize, heads: usize, ff_dim: usize, rng: &mut ChaCha8Rng) -> Self {
        Self {
            norm1: LayerNorm::new(&format!("{prefix}.n1"), dim),
            attn: MultiHeadAttention::new(&format!("{prefix}.attn"), dim, heads, rng),
            norm2: LayerNorm::new(&format!("{prefix}.n2"), dim),
            ff1: Linear::new(&format!("{prefix}.ff1"), dim, ff_dim, rng),
            ff2: Linear::new(&format!("{prefix}.ff2"), ff_dim, dim, rng),
        }
    }

    pub fn forward(&self, tape: &Tape<E>, x: &Var<E>, key_mask: Option<&[bool]>) -> Var<E> {
        let normed = self.norm1.forward(tape, x);
        let h = x.add(&self.attn.forward(tape, &normed, &normed, key_mask));
        let ff = self.ff2.forward(tape, &self.ff1.forward(tape, &self.norm2.forward(tape, &h)).relu());
        h.add(&ff)
    }
}

impl<E: Element> Module<E> for EncoderLayer<E> {
    fn visit_params(&self, f: &mut dyn FnMut(&str, &Tensor<E>)) {
        self.norm1.visit_params(f);
        self.attn.visit_params(f);
        self.norm2.visit_params(f);
        self.ff1.visit_params(f);
        self.ff2.visit_params(f);
    }
    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&str, &mut Tensor<E>)) {
        self.norm1.visit_params_mut(f);
        self.attn.visit_params_mut(f);
        self.norm2.visit_params_mut(f);
        self.ff1.visit_params_mut(f);
        self.ff2.visit_params_mut(f);
    }
}

/// Pre-norm transformer decoder layer: query self-attention, cross
/// attention into a context sequence, then feed-forward.
#[derive(Debug, Clone)]
pub struct DecoderLayer<E: Element = f64> {
    pub norm1: LayerNorm<E>,
    pub self_attn: MultiHeadAttention<E>,
    pub norm2: LayerNorm<E>,
    pub cross_attn: MultiHeadAttention<E>,
    pub norm3: LayerNorm<E>,
    pub ff1: Linear<E>,
    pub ff2: Linear<E>,
}

impl<E: Element> DecoderLayer<E> {
    pub fn new(prefix: &str, dim: usize, heads: usize, ff_dim: usize, rng: &mut ChaCha8Rng) -> Self {
        Self {
            norm1: LayerNorm::new(&format!("{prefix}.n1"), dim),
            self_attn: MultiHeadAttention::new(&format!("{prefix}.self"), dim, heads, rng),
            norm2: LayerNorm::new(&format!("{prefix}.n2"), dim),
            cross_attn: MultiHeadAttention::new(&format!("{prefix}.cross"), dim, heads, rng),
            norm3: LayerNorm::new(&format!("{prefix}.n3"), dim),
            ff1: Linear::new(&format!("{prefix}.ff1"), dim, ff_dim, rng),
            ff2: Linear::new(&format!("{prefix}.ff2"), ff_dim, dim, rng),
        }
    }

    pub fn forward(&self, tape: &Tape<E>, queries: &Var<E>, context: &Var<E>) -> Var<E> {
        let normed = self.norm1.forward(tape, queries);
        let h = queries.add(&self.self_attn.forward(tape, &normed, &normed, None));
        let h = h.add(&self.cross_attn.forward(tape, &self.norm2.forward(tape, &h), context, None));
        let ff = self.ff2.forward(tape, &self.ff1.forward(tape, &self.norm3.forward(tape, &h)).relu());
        h.add(&ff)
    }
}

impl<E: Element> Module<E> for DecoderLayer<E> {
    fn visit_params(&self, f: &mut dyn FnMut(&str, &Tensor<E>)) {
        self.norm1.visit_params(f);
        self.self_attn.visit_params(f);
        self.norm2.visit_params(f);
        self.cross_attn.visit_params(f);
        self.norm3.visit_params(f);
        self.ff1.visit_params(f);
        self.ff2.visit_params(f);
    }
    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&str, &mut Tensor<E>)) {
        self.norm1.visit_params_mut(f);
        self.self_attn.visit_params_mut(f);
        self.norm2.visit_params_mut(f);
        self.cross_attn.visit_params_mut(f);
        self.norm3.visit_params_mut(f);
        self.ff1.visit_params_mut(f);
        self.ff2.visit_params_mut(f);
    }
}

/// Collect all parameters of a module as (name, tensor) pairs.
pub fn named_params<E: Element>(module: &impl Module<E>) -> Vec<(String, Tensor<E>)> {
    let mut out = Vec::new();
    module.visit_params(&mut |name, t| out.push((name.to_string(), t.clone())));
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn linear_matches_manual_matmul() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let lin = Linear::<f64>::new("t", 3, 2, &mut rng);
        let tape = Tape::new();
        let x = tape.constant(Tensor::from_f64s(&[1, 3], &[1.0, 2.0, 3.0]));
        let y = lin.forward(&tape, &x).value();
        let w = lin.w.value.data();
        let manual: Vec<f64> = (0..2)
            .map(|j| (0..3).map(|i| [1.0, 2.0, 3.0][i] * w[i * 2 + j]).sum())
            .collect();
        for (a, b) in y.data().iter().zip(manual) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn attention_shapes_and_mask() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mha = MultiHeadAttention::<f64>::new("t", 8, 2, &mut rng);
        let tape = Tape::new();
        let q = tape.constant(glorot(&mut rng, &[3, 8], 8, 8));
        let kv = tape.constant(glorot(&mut rng, &[5, 8], 8, 8));
        let out = mha.forward(&tape, &q, &kv, None);
        assert_eq!(out.value().shape(), &[3, 8]);
        // Masking every key but one makes attention output depend on it only.
        let mask = [true, false, true, true, true];
        let masked = mha.forward(&tape, &q, &kv, Some(&mask));
        assert_eq!(masked.value().shape(), &[3, 8]);
    }

    #[test]
    fn encoder_layer_preserves_shape_and_params_enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let layer = EncoderLayer::<f64>::new("enc", 8, 2, 16, &mut rng);
        let tape = Tape::new();
        let x = tape.constant(glorot(&mut rng, &[4, 8], 8, 8));
        assert_eq!(layer.forward(&tape, &x, None).value().shape(), &[4, 8]);
        let params = named_params(&layer);
        assert!(params.iter().any(|(n, _)| n == "enc.attn.wq.w"));
        assert!(params.iter().any(|(n, _)| n == "enc.ff2.b"));
    }
}

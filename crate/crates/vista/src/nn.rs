//! Parameterised layers, multi-head attention and seeded initialization.

use cdqag_core::rng::SplitMix64;

use crate::error::{shape_err, Error, Result};
use crate::ops::{conv2d, deconv2d, layer_norm, matmul, relu, softmax};
use crate::tensor::Tensor;

/// Walks named parameter tensors in a fixed order.
pub trait Module {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor));
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor));

    fn num_params(&self) -> usize {
        let mut n = 0;
        self.visit("", &mut |_, t| n += t.len());
        n
    }
}

/// Concatenates every parameter of `m` in visit order.
pub fn flatten_params(m: &impl Module) -> Vec<f64> {
    let mut out = Vec::with_capacity(m.num_params());
    m.visit("", &mut |_, t| out.extend_from_slice(t.data()));
    out
}

/// Overwrites the parameters of `m` from a flat vector in visit order.
pub fn assign_params(m: &mut impl Module, flat: &[f64]) {
    assert_eq!(flat.len(), m.num_params(), "flat parameter length");
    let mut offset = 0;
    m.visit_mut("", &mut |_, t| {
        let n = t.len();
        t.data_mut().copy_from_slice(&flat[offset..offset + n]);
        offset += n;
    });
}

pub(crate) fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}

impl Module for Tensor {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor)) {
        f(prefix, self)
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor)) {
        f(prefix, self)
    }
}

impl<M: Module> Module for Vec<M> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor)) {
        for (i, m) in self.iter().enumerate() {
            m.visit(&join(prefix, &i.to_string()), f);
        }
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor)) {
        for (i, m) in self.iter_mut().enumerate() {
            m.visit_mut(&join(prefix, &i.to_string()), f);
        }
    }
}

/// Implements [`Module`] by visiting the listed fields in order.
macro_rules! module {
    ($ty:ty { $($field:ident),* $(,)? }) => {
        impl $crate::nn::Module for $ty {
            fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &$crate::tensor::Tensor)) {
                $( self.$field.visit(&$crate::nn::join(prefix, stringify!($field)), f); )*
            }

            fn visit_mut(
                &mut self,
                prefix: &str,
                f: &mut dyn FnMut(&str, &mut $crate::tensor::Tensor),
            ) {
                $( self.$field.visit_mut(&$crate::nn::join(prefix, stringify!($field)), f); )*
            }
        }
    };
}
pub(crate) use module;

/// Draws every parameter from uniform(−1/√fan_in, 1/√fan_in) in creation
/// order, so a seed fixes the whole parameter set.
pub struct Init {
    rng: SplitMix64,
}

impl Init {
    pub fn new(seed: u64) -> Self {
        Init {
            rng: SplitMix64::new(seed),
        }
    }

    pub fn uniform(&mut self, shape: &[usize], fan_in: usize) -> Tensor {
        let bound = 1.0 / (fan_in as f64).sqrt();
        let n = shape.iter().product();
        let data = (0..n).map(|_| self.rng.uniform(-bound, bound)).collect();
        Tensor::new(shape.to_vec(), data).expect("finite initial values")
    }

    pub fn linear(&mut self, d_in: usize, d_out: usize) -> Linear {
        Linear {
            weight: self.uniform(&[d_in, d_out], d_in),
            bias: self.uniform(&[d_out], d_in),
        }
    }

    pub fn conv(&mut self, c_in: usize, c_out: usize, k: usize, stride: usize) -> Conv {
        let fan_in = c_in * k * k;
        Conv {
            weight: self.uniform(&[c_out, c_in, k, k], fan_in),
            bias: self.uniform(&[c_out], fan_in),
            stride,
            pad: k / 2,
        }
    }

    pub fn deconv(&mut self, c_in: usize, c_out: usize) -> Deconv {
        let fan_in = c_in * 4;
        Deconv {
            weight: self.uniform(&[c_in, c_out, 2, 2], fan_in),
            bias: self.uniform(&[c_out], fan_in),
        }
    }

    pub fn mha(&mut self, c: usize, heads: usize) -> MhaParams {
        MhaParams {
            heads,
            q: self.linear(c, c),
            k: self.linear(c, c),
            v: self.linear(c, c),
            out: self.linear(c, c),
        }
    }

    pub fn ffn(&mut self, c: usize) -> FfnParams {
        FfnParams {
            hidden: self.linear(c, 4 * c),
            out: self.linear(4 * c, c),
        }
    }
}

/// `y = x·W + b` with `W` stored in×out.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub weight: Tensor,
    pub bias: Tensor,
}
module!(Linear { weight, bias });

impl Linear {
    /// Applies the layer to every row of an N×in matrix.
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        matmul(x, &self.weight)?.add_row(&self.bias)
    }

    /// Applies the layer to a single vector.
    pub fn forward_vec(&self, x: &Tensor) -> Result<Tensor> {
        let n = x.len();
        let y = self.forward(&x.clone().reshape(&[1, n])?)?;
        let m = y.len();
        y.reshape(&[m])
    }

    pub fn d_in(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn d_out(&self) -> usize {
        self.weight.shape()[1]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Conv {
    pub weight: Tensor,
    pub bias: Tensor,
    pub stride: usize,
    pub pad: usize,
}
module!(Conv { weight, bias });

impl Conv {
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        conv2d(x, &self.weight, Some(&self.bias), self.stride, self.pad)
    }
}

/// 2×2 stride-2 transposed convolution.
#[derive(Debug, Clone, PartialEq)]
pub struct Deconv {
    pub weight: Tensor,
    pub bias: Tensor,
}
module!(Deconv { weight, bias });

impl Deconv {
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        deconv2d(x, &self.weight, Some(&self.bias), 2)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerNorm {
    pub gain: Tensor,
    pub bias: Tensor,
}
module!(LayerNorm { gain, bias });

impl LayerNorm {
    pub fn new(c: usize) -> Self {
        LayerNorm {
            gain: Tensor::full(&[c], 1.0),
            bias: Tensor::zeros(&[c]),
        }
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        layer_norm(x, &self.gain, &self.bias)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FfnParams {
    pub hidden: Linear,
    pub out: Linear,
}
module!(FfnParams { hidden, out });

/// Linear → max(0, ·) → Linear on each row.
pub fn ffn(x: &Tensor, p: &FfnParams) -> Result<Tensor> {
    p.out.forward(&relu(&p.hidden.forward(x)?)?)
}

#[derive(Debug, Clone, PartialEq)]
pub struct MhaParams {
    pub heads: usize,
    pub q: Linear,
    pub k: Linear,
    pub v: Linear,
    pub out: Linear,
}
module!(MhaParams { q, k, v, out });

/// Softmax weights of one attention call, heads × queries × keys.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionWeights {
    pub heads: usize,
    pub queries: usize,
    pub keys: usize,
    pub data: Vec<f64>,
}

impl AttentionWeights {
    pub fn row(&self, head: usize, query: usize) -> &[f64] {
        let start = (head * self.queries + query) * self.keys;
        &self.data[start..start + self.keys]
    }

    /// Largest |Σ row − 1| over all rows.
    pub fn max_row_error(&self) -> f64 {
        self.data
            .chunks(self.keys)
            .map(|r| (r.iter().sum::<f64>() - 1.0).abs())
            .fold(0.0, f64::max)
    }

    pub fn min_weight(&self) -> f64 {
        self.data.iter().copied().fold(f64::INFINITY, f64::min)
    }
}

/// Scaled dot-product attention with per-head projections and an output
/// projection. Self-attention is `mha(x, x, x, p)`.
pub fn mha(
    q: &Tensor,
    k: &Tensor,
    v: &Tensor,
    p: &MhaParams,
) -> Result<(Tensor, AttentionWeights)> {
    let (nq, c) = q.dims2("mha")?;
    let (nk, ck) = k.dims2("mha")?;
    let (nv, cv) = v.dims2("mha")?;
    if ck != c || cv != c || nv != nk {
        return Err(shape_err(
            "mha",
            format!("q {:?}, k {:?}, v {:?}", q.shape(), k.shape(), v.shape()),
        ));
    }
    let heads = p.heads;
    if heads == 0 || c % heads != 0 {
        return Err(Error::HeadMismatch { channels: c, heads });
    }
    let d = c / heads;
    let qp = p.q.forward(q)?;
    let kp = p.k.forward(k)?;
    let vp = p.v.forward(v)?;
    let scale = 1.0 / (d as f64).sqrt();

    let mut scores = vec![0.0; heads * nq * nk];
    for h in 0..heads {
        for i in 0..nq {
            let qi = &qp.row(i)[h * d..(h + 1) * d];
            for j in 0..nk {
                let kj = &kp.row(j)[h * d..(h + 1) * d];
                let mut acc = 0.0;
                for t in 0..d {
                    acc += qi[t] * kj[t];
                }
                scores[(h * nq + i) * nk + j] = acc * scale;
            }
        }
    }
    let weights = softmax(&Tensor::from_op("mha", vec![heads, nq, nk], scores)?, 2)?;
    let wd = weights.data();

    let mut mixed = vec![0.0; nq * c];
    for h in 0..heads {
        for i in 0..nq {
            for j in 0..nk {
                let a = wd[(h * nq + i) * nk + j];
                let vj = &vp.row(j)[h * d..(h + 1) * d];
                for t in 0..d {
                    mixed[i * c + h * d + t] += a * vj[t];
                }
            }
        }
    }
    let out = p
        .out
        .forward(&Tensor::from_op("mha", vec![nq, c], mixed)?)?;
    let attn = AttentionWeights {
        heads,
        queries: nq,
        keys: nk,
        data: weights.into_data(),
    };
    Ok((out, attn))
}

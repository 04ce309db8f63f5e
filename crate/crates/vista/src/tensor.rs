//! Dense row-major f64 tensors.
//!
//! Tensors are plain values. Every constructor that takes computed data
//! rejects NaN and infinities, so a non-finite intermediate surfaces as an
//! error at the op that produced it.

use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        Self::from_op("tensor", shape, data)
    }

    /// Builds the output of `op`, checking the element count and finiteness.
    pub(crate) fn from_op(op: &'static str, shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        if shape.is_empty() || shape.contains(&0) {
            return Err(shape_err(op, format!("invalid shape {shape:?}")));
        }
        let len: usize = shape.iter().product();
        if len != data.len() {
            return Err(shape_err(
                op,
                format!("shape {shape:?} needs {len} values, got {}", data.len()),
            ));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(op));
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        assert!(
            !shape.is_empty() && !shape.contains(&0) && value.is_finite(),
            "bad tensor shape {shape:?} or fill value"
        );
        let len = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![value; len],
        }
    }

    pub fn vector(data: Vec<f64>) -> Result<Self> {
        let n = data.len();
        Self::new(vec![n], data)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    /// Mutable access for parameter updates. Callers are responsible for
    /// keeping values finite.
    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn dims2(&self, op: &'static str) -> Result<(usize, usize)> {
        match self.shape[..] {
            [r, c] => Ok((r, c)),
            _ => Err(shape_err(
                op,
                format!("expected a matrix, got {:?}", self.shape),
            )),
        }
    }

    pub fn dims3(&self, op: &'static str) -> Result<(usize, usize, usize)> {
        match self.shape[..] {
            [c, h, w] => Ok((c, h, w)),
            _ => Err(shape_err(
                op,
                format!("expected a C×H×W tensor, got {:?}", self.shape),
            )),
        }
    }

    pub fn dims4(&self, op: &'static str) -> Result<(usize, usize, usize, usize)> {
        match self.shape[..] {
            [a, b, c, d] => Ok((a, b, c, d)),
            _ => Err(shape_err(
                op,
                format!("expected a rank-4 tensor, got {:?}", self.shape),
            )),
        }
    }

    pub fn reshape(self, shape: &[usize]) -> Result<Self> {
        let len: usize = shape.iter().product();
        if shape.is_empty() || len != self.data.len() {
            return Err(shape_err(
                "reshape",
                format!("cannot view {:?} as {shape:?}", self.shape),
            ));
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data: self.data,
        })
    }

    /// Row `i` of a matrix.
    pub fn row(&self, i: usize) -> &[f64] {
        let cols = *self.shape.last().unwrap();
        &self.data[i * cols..(i + 1) * cols]
    }

    pub fn map(&self, op: &'static str, f: impl Fn(f64) -> f64) -> Result<Self> {
        Self::from_op(
            op,
            self.shape.clone(),
            self.data.iter().map(|&v| f(v)).collect(),
        )
    }

    fn zip(&self, other: &Tensor, op: &'static str, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        if self.shape != other.shape {
            return Err(shape_err(
                op,
                format!("{:?} vs {:?}", self.shape, other.shape),
            ));
        }
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| f(a, b))
            .collect();
        Self::from_op(op, self.shape.clone(), data)
    }

    pub fn add(&self, other: &Tensor) -> Result<Self> {
        self.zip(other, "add", |a, b| a + b)
    }

    pub fn sub(&self, other: &Tensor) -> Result<Self> {
        self.zip(other, "sub", |a, b| a - b)
    }

    /// Element-wise (Hadamard) product.
    pub fn mul(&self, other: &Tensor) -> Result<Self> {
        self.zip(other, "mul", |a, b| a * b)
    }

    pub fn scale(&self, s: f64) -> Result<Self> {
        self.map("scale", |v| v * s)
    }

    /// Adds `bias` (length = last dim) to every row.
    pub fn add_row(&self, bias: &Tensor) -> Result<Self> {
        let cols = *self.shape.last().unwrap();
        if bias.shape != [cols] {
            return Err(shape_err(
                "add_row",
                format!("bias {:?} for rows of width {cols}", bias.shape),
            ));
        }
        let data = self
            .data
            .chunks(cols)
            .flat_map(|row| row.iter().zip(&bias.data).map(|(a, b)| a + b))
            .collect();
        Self::from_op("add_row", self.shape.clone(), data)
    }

    /// Multiplies every channel plane of a C×H×W tensor by `gate[c]`.
    pub fn scale_channels(&self, gate: &Tensor) -> Result<Self> {
        let (c, h, w) = self.dims3("scale_channels")?;
        if gate.shape != [c] {
            return Err(shape_err(
                "scale_channels",
                format!("gate {:?} for {c} channels", gate.shape),
            ));
        }
        let data = self
            .data
            .chunks(h * w)
            .zip(&gate.data)
            .flat_map(|(plane, &g)| plane.iter().map(move |v| v * g))
            .collect();
        Self::from_op("scale_channels", self.shape.clone(), data)
    }

    /// Matrix transpose.
    pub fn transpose(&self) -> Result<Self> {
        let (r, c) = self.dims2("transpose")?;
        let mut data = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                data[j * r + i] = self.data[i * c + j];
            }
        }
        Self::from_op("transpose", vec![c, r], data)
    }

    /// C×H×W feature map to an (H·W)×C token matrix.
    pub fn flatten_spatial(&self) -> Result<Self> {
        let (c, h, w) = self.dims3("flatten_spatial")?;
        let n = h * w;
        let mut data = vec![0.0; n * c];
        for ch in 0..c {
            for p in 0..n {
                data[p * c + ch] = self.data[ch * n + p];
            }
        }
        Self::from_op("flatten_spatial", vec![n, c], data)
    }

    /// Inverse of [`Tensor::flatten_spatial`].
    pub fn unflatten_spatial(&self, h: usize, w: usize) -> Result<Self> {
        let (n, c) = self.dims2("unflatten_spatial")?;
        if n != h * w {
            return Err(shape_err(
                "unflatten_spatial",
                format!("{n} tokens cannot fill {h}×{w}"),
            ));
        }
        let mut data = vec![0.0; n * c];
        for p in 0..n {
            for ch in 0..c {
                data[ch * n + p] = self.data[p * c + ch];
            }
        }
        Self::from_op("unflatten_spatial", vec![c, h, w], data)
    }

    /// Column means of a matrix.
    pub fn mean_rows(&self) -> Result<Self> {
        let (r, c) = self.dims2("mean_rows")?;
        let mut sums = vec![0.0; c];
        for row in self.data.chunks(c) {
            for (s, v) in sums.iter_mut().zip(row) {
                *s += v;
            }
        }
        Self::from_op(
            "mean_rows",
            vec![c],
            sums.into_iter().map(|s| s / r as f64).collect(),
        )
    }

    pub fn dot(&self, other: &Tensor) -> Result<f64> {
        if self.data.len() != other.data.len() {
            return Err(shape_err(
                "dot",
                format!("{:?} vs {:?}", self.shape, other.shape),
            ));
        }
        Ok(self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum())
    }

    pub fn max_abs_diff(&self, other: &Tensor) -> f64 {
        assert_eq!(self.shape, other.shape);
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// Concatenates C×H×W tensors along the channel axis.
pub fn concat_channels(parts: &[&Tensor]) -> Result<Tensor> {
    let first = parts
        .first()
        .ok_or_else(|| shape_err("concat_channels", "nothing to concatenate"))?;
    let (_, h, w) = first.dims3("concat_channels")?;
    let mut channels = 0;
    let mut data = Vec::new();
    for p in parts {
        let (c, ph, pw) = p.dims3("concat_channels")?;
        if (ph, pw) != (h, w) {
            return Err(shape_err(
                "concat_channels",
                format!("{ph}×{pw} vs {h}×{w}"),
            ));
        }
        channels += c;
        data.extend_from_slice(p.data());
    }
    Tensor::from_op("concat_channels", vec![channels, h, w], data)
}

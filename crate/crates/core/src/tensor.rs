use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fp16;

/// Dense `f32` tensor in row-major NCHW order, rank 1 to 4.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    dims: Vec<usize>,
    data: Vec<f32>,
}

/// Arithmetic precision a layer executes with.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PrecisionMode {
    #[default]
    Fp32,
    /// Inputs, parameters and outputs are rounded through binary16.
    Fp16,
}

impl Tensor {
    pub fn new(dims: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        if dims.is_empty() || dims.len() > 4 {
            return Err(Error::Shape(format!(
                "tensor rank must be 1..=4, got {}",
                dims.len()
            )));
        }
        if dims.contains(&0) {
            return Err(Error::Shape(format!("zero extent in {dims:?}")));
        }
        let n: usize = dims.iter().product();
        if n != data.len() {
            return Err(Error::Shape(format!(
                "dims {dims:?} hold {n} elements but data has {}",
                data.len()
            )));
        }
        Ok(Tensor { dims, data })
    }

    pub fn zeros(dims: &[usize]) -> Self {
        Self::filled(dims, 0.0)
    }

    pub fn filled(dims: &[usize], value: f32) -> Self {
        let n = dims.iter().product();
        Tensor::new(dims.to_vec(), vec![value; n]).expect("valid dims")
    }

    pub fn from_fn(dims: &[usize], f: impl FnMut(usize) -> f32) -> Self {
        let n: usize = dims.iter().product();
        Tensor::new(dims.to_vec(), (0..n).map(f).collect()).expect("valid dims")
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Dims padded with leading 1s to `[N, C, H, W]`.
    pub fn nchw(&self) -> [usize; 4] {
        let mut out = [1; 4];
        let off = 4 - self.dims.len();
        out[off..].copy_from_slice(&self.dims);
        out
    }

    pub fn reshape(self, dims: Vec<usize>) -> Result<Self> {
        Tensor::new(dims, self.data)
    }

    pub fn map(&self, f: impl Fn(f32) -> f32) -> Self {
        Tensor {
            dims: self.dims.clone(),
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    /// Row `n` of a batched tensor, keeping a leading extent of 1.
    pub fn sample(&self, n: usize) -> Result<Self> {
        let batch = self.dims[0];
        if n >= batch {
            return Err(Error::Shape(format!("sample {n} out of batch {batch}")));
        }
        let stride = self.data.len() / batch;
        let mut dims = self.dims.clone();
        dims[0] = 1;
        Tensor::new(dims, self.data[n * stride..(n + 1) * stride].to_vec())
    }

    /// Concatenates tensors along the leading axis.
    pub fn stack(items: &[Tensor]) -> Result<Self> {
        let first = items
            .first()
            .ok_or_else(|| Error::Shape("cannot stack zero tensors".into()))?;
        let tail = &first.dims[1..];
        let mut data = Vec::with_capacity(first.len() * items.len());
        let mut batch = 0;
        for t in items {
            if &t.dims[1..] != tail {
                return Err(Error::Shape(format!(
                    "cannot stack {:?} with {:?}",
                    t.dims, first.dims
                )));
            }
            batch += t.dims[0];
            data.extend_from_slice(&t.data);
        }
        let mut dims = first.dims.clone();
        dims[0] = batch;
        Tensor::new(dims, data)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }
}

/// Rounds every element through binary16.
pub fn tensor_quantize(t: &Tensor) -> Tensor {
    t.map(fp16::round_trip)
}

/// Applies [`tensor_quantize`] only when `mode` asks for it.
pub(crate) fn at_precision(t: &Tensor, mode: PrecisionMode) -> std::borrow::Cow<'_, Tensor> {
    match mode {
        PrecisionMode::Fp32 => std::borrow::Cow::Borrowed(t),
        PrecisionMode::Fp16 => std::borrow::Cow::Owned(tensor_quantize(t)),
    }
}

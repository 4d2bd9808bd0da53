use serde::{Deserialize, Serialize};

use super::CostCounter;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Splits dims into (batch, channels, spatial) for channel-broadcast ops.
/// Rank 2 is read as `[N, F]`, rank 4 as `[N, C, H, W]`.
fn channel_layout(dims: &[usize]) -> (usize, usize, usize) {
    match *dims {
        [c] => (1, c, 1),
        [n, c] => (n, c, 1),
        [c, h, w] => (1, c, h * w),
        [n, c, h, w] => (n, c, h * w),
        _ => unreachable!("tensor rank is 1..=4"),
    }
}

/// `input [N, F] x weights [G, F]^T + bias [G] -> [N, G]`.
///
/// Rank-4 inputs are flattened per sample.
pub fn dense(
    input: &Tensor,
    weights: &Tensor,
    bias: Option<&Tensor>,
    counter: &mut CostCounter,
) -> Result<Tensor> {
    let n = input.dims()[0];
    let f = input.len() / n;
    let (g, wf) = match *weights.dims() {
        [g, wf] => (g, wf),
        ref d => return Err(Error::Shape(format!("dense weights must be [G, F], got {d:?}"))),
    };
    if wf != f {
        return Err(Error::Shape(format!(
            "dense expects {wf} features but input {:?} has {f}",
            input.dims()
        )));
    }
    if let Some(b) = bias {
        if b.len() != g {
            return Err(Error::Shape(format!(
                "dense bias has {} elements for {g} outputs",
                b.len()
            )));
        }
    }
    let x = input.data();
    let wd = weights.data();
    let mut out = Vec::with_capacity(n * g);
    for i in 0..n {
        let row = &x[i * f..(i + 1) * f];
        for o in 0..g {
            let acc: f32 = wd[o * f..(o + 1) * f]
                .iter()
                .zip(row)
                .fold(0.0, |a, (&w, &v)| a + w * v);
            out.push(acc + bias.map_or(0.0, |b| b.data()[o]));
        }
    }
    counter.add_macs((n * g * f) as u64);
    Tensor::new(vec![n, g], out)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Activation {
    Relu,
    ClippedRelu { ceiling: f32 },
    Tanh,
}

pub fn activation(t: &Tensor, kind: Activation, counter: &mut CostCounter) -> Result<Tensor> {
    let out = match kind {
        Activation::Relu => t.map(|x| x.max(0.0)),
        Activation::ClippedRelu { ceiling } => {
            if ceiling.is_nan() || ceiling <= 0.0 {
                return Err(Error::Param(format!(
                    "clipped relu ceiling must be > 0, got {ceiling}"
                )));
            }
            t.map(|x| x.max(0.0).min(ceiling))
        }
        Activation::Tanh => t.map(f32::tanh),
    };
    counter.add_elems(t.len() as u64);
    Ok(out)
}

/// Per-channel parameters of an inference-time batch normalisation.
#[derive(Clone, Copy, Debug)]
pub struct BatchNormParams<'a> {
    pub gamma: &'a Tensor,
    pub beta: &'a Tensor,
    pub mean: &'a Tensor,
    pub var: &'a Tensor,
    pub eps: f32,
}

/// `gamma * (x - mean) / sqrt(var + eps) + beta`, broadcast over channels.
pub fn batch_norm(t: &Tensor, p: &BatchNormParams<'_>, counter: &mut CostCounter) -> Result<Tensor> {
    let (n, c, sp) = channel_layout(t.dims());
    for (name, v) in [("gamma", p.gamma), ("beta", p.beta), ("mean", p.mean), ("var", p.var)] {
        if v.len() != c {
            return Err(Error::Shape(format!(
                "batch norm {name} has {} entries for {c} channels",
                v.len()
            )));
        }
    }
    if p.eps.is_nan() || p.eps <= 0.0 {
        return Err(Error::Param(format!("batch norm eps must be > 0, got {}", p.eps)));
    }
    let mut out = t.clone();
    let data = out.data_mut();
    for b in 0..n {
        for ch in 0..c {
            let gamma = p.gamma.data()[ch];
            let beta = p.beta.data()[ch];
            let mean = p.mean.data()[ch];
            let denom = (p.var.data()[ch] + p.eps).sqrt();
            for x in &mut data[(b * c + ch) * sp..][..sp] {
                *x = gamma * (*x - mean) / denom + beta;
            }
        }
    }
    counter.add_elems(t.len() as u64);
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PoolKind {
    Min,
    Max,
    Average,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PoolParams {
    pub kind: PoolKind,
    pub window_h: usize,
    pub window_w: usize,
    pub stride_h: usize,
    pub stride_w: usize,
}

impl PoolParams {
    pub fn square(kind: PoolKind, window: usize, stride: usize) -> Self {
        PoolParams {
            kind,
            window_h: window,
            window_w: window,
            stride_h: stride,
            stride_w: stride,
        }
    }

    pub fn output_dims(&self, input: &[usize]) -> Result<[usize; 4]> {
        let &[n, c, h, w] = input else {
            return Err(Error::Shape(format!("pooling needs rank-4 input, got {input:?}")));
        };
        if self.window_h == 0 || self.window_w == 0 || self.stride_h == 0 || self.stride_w == 0 {
            return Err(Error::Param("pool window and stride must be positive".into()));
        }
        if self.window_h > h || self.window_w > w {
            return Err(Error::Shape(format!(
                "pool window {}x{} larger than input {h}x{w}",
                self.window_h, self.window_w
            )));
        }
        Ok([
            n,
            c,
            (h - self.window_h) / self.stride_h + 1,
            (w - self.window_w) / self.stride_w + 1,
        ])
    }
}

pub fn pool(t: &Tensor, p: &PoolParams, counter: &mut CostCounter) -> Result<Tensor> {
    let [n, c, ho, wo] = p.output_dims(t.dims())?;
    let (h, w) = (t.dims()[2], t.dims()[3]);
    let src = t.data();
    let area = (p.window_h * p.window_w) as f32;
    let mut out = Vec::with_capacity(n * c * ho * wo);
    for plane in src.chunks_exact(h * w).take(n * c) {
        for oh in 0..ho {
            for ow in 0..wo {
                let window = (0..p.window_h).flat_map(|dy| {
                    let row = (oh * p.stride_h + dy) * w + ow * p.stride_w;
                    plane[row..row + p.window_w].iter().copied()
                });
                out.push(match p.kind {
                    PoolKind::Max => window.fold(f32::NEG_INFINITY, f32::max),
                    PoolKind::Min => window.fold(f32::INFINITY, f32::min),
                    PoolKind::Average => window.sum::<f32>() / area,
                });
            }
        }
    }
    counter.add_elems((n * c * ho * wo * p.window_h * p.window_w) as u64);
    Tensor::new(vec![n, c, ho, wo], out)
}

pub fn elementwise_add(a: &Tensor, b: &Tensor, counter: &mut CostCounter) -> Result<Tensor> {
    if a.dims() != b.dims() {
        return Err(Error::Shape(format!(
            "cannot add {:?} and {:?}",
            a.dims(),
            b.dims()
        )));
    }
    let data = a.data().iter().zip(b.data()).map(|(x, y)| x + y).collect();
    counter.add_elems(a.len() as u64);
    Tensor::new(a.dims().to_vec(), data)
}

/// Adds `bias[c]` to every element of channel `c`.
pub fn bias_add(t: &Tensor, bias: &Tensor, counter: &mut CostCounter) -> Result<Tensor> {
    let (n, c, sp) = channel_layout(t.dims());
    if bias.len() != c {
        return Err(Error::Shape(format!(
            "bias has {} entries for {c} channels",
            bias.len()
        )));
    }
    let mut out = t.clone();
    let data = out.data_mut();
    for b in 0..n {
        for (ch, &bv) in bias.data().iter().enumerate() {
            for x in &mut data[(b * c + ch) * sp..][..sp] {
                *x += bv;
            }
        }
    }
    counter.add_elems(t.len() as u64);
    Ok(out)
}

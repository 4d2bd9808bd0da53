//! Convolution lowered through im2col, with perforated and filter-sampled
//! variants.
//!
//! All variants share one kernel: the im2col matrix is built only for the
//! output positions that are computed and only for the filter components
//! that are kept, then multiplied by the (possibly rescaled) filter matrix.
//! With nothing skipped and nothing removed the kernel performs exactly the
//! exact convolution's arithmetic in the same order.

use serde::{Deserialize, Serialize};

use super::CostCounter;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Stride and zero padding of a 2-D convolution.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ConvGeometry {
    pub stride_h: usize,
    pub stride_w: usize,
    pub pad_h: usize,
    pub pad_w: usize,
}

impl Default for ConvGeometry {
    fn default() -> Self {
        ConvGeometry {
            stride_h: 1,
            stride_w: 1,
            pad_h: 0,
            pad_w: 0,
        }
    }
}

impl ConvGeometry {
    pub fn new(stride_h: usize, stride_w: usize, pad_h: usize, pad_w: usize) -> Self {
        ConvGeometry {
            stride_h,
            stride_w,
            pad_h,
            pad_w,
        }
    }

    /// `[N, K, H_out, W_out]` for an `[N, C, H, W]` input and `[K, C, R, S]` filter.
    pub fn output_dims(&self, input: &[usize], filter: &[usize]) -> Result<[usize; 4]> {
        let (&[n, c, h, w], &[k, fc, r, s]) = (input, filter) else {
            return Err(Error::Shape(format!(
                "convolution needs rank-4 input and filter, got {input:?} and {filter:?}"
            )));
        };
        if self.stride_h == 0 || self.stride_w == 0 {
            return Err(Error::Param("convolution stride must be positive".into()));
        }
        if c != fc {
            return Err(Error::Shape(format!(
                "input {input:?} has {c} channels but filter {filter:?} expects {fc}"
            )));
        }
        let (hp, wp) = (h + 2 * self.pad_h, w + 2 * self.pad_w);
        if hp < r || wp < s {
            return Err(Error::Shape(format!(
                "filter {r}x{s} larger than padded input {hp}x{wp}"
            )));
        }
        Ok([
            n,
            k,
            (hp - r) / self.stride_h + 1,
            (wp - s) / self.stride_w + 1,
        ])
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PerforationAxis {
    Row,
    Column,
}

/// Output rows (or columns) `offset, offset + stride, ...` are skipped and
/// interpolated from their computed neighbours.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct PerforationSpec {
    pub axis: PerforationAxis,
    pub stride: usize,
    pub offset: usize,
}

impl PerforationSpec {
    pub fn new(axis: PerforationAxis, stride: usize, offset: usize) -> Result<Self> {
        if stride < 2 {
            return Err(Error::Param(format!(
                "perforation stride must be >= 2, got {stride}"
            )));
        }
        Ok(PerforationSpec {
            axis,
            stride,
            offset,
        })
    }

    pub fn is_skipped(&self, i: usize) -> bool {
        i >= self.offset && (i - self.offset).is_multiple_of(self.stride)
    }

    /// Skipped indices below `extent`.
    pub fn skipped(&self, extent: usize) -> Vec<usize> {
        (self.offset..extent).step_by(self.stride).collect()
    }

    pub fn computed_count(&self, extent: usize) -> usize {
        extent - self.skipped(extent).len()
    }
}

/// Removes flat filter components `offset, offset + stride, ...` of each
/// `C*R*S` filter and rescales the survivors by `n_elm / n_samp`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct FilterSampleSpec {
    pub stride: usize,
    pub offset: usize,
}

impl FilterSampleSpec {
    pub fn new(stride: usize, offset: usize) -> Result<Self> {
        if stride < 2 {
            return Err(Error::Param(format!(
                "filter sampling stride must be >= 2, got {stride}"
            )));
        }
        Ok(FilterSampleSpec { stride, offset })
    }

    pub fn is_removed(&self, idx: usize) -> bool {
        idx >= self.offset && (idx - self.offset).is_multiple_of(self.stride)
    }

    /// `ceil((n_elm - offset) / stride)`, or zero once `offset >= n_elm`.
    pub fn removed_count(&self, n_elm: usize) -> usize {
        if self.offset >= n_elm {
            0
        } else {
            (n_elm - self.offset).div_ceil(self.stride)
        }
    }

    pub fn kept_count(&self, n_elm: usize) -> usize {
        n_elm - self.removed_count(n_elm)
    }

    pub fn kept_indices(&self, n_elm: usize) -> Vec<usize> {
        (0..n_elm).filter(|&i| !self.is_removed(i)).collect()
    }

    pub fn rescale(&self, n_elm: usize) -> f32 {
        n_elm as f32 / self.kept_count(n_elm) as f32
    }
}

struct Lowering<'a> {
    input: &'a Tensor,
    filter: &'a Tensor,
    bias: Option<&'a Tensor>,
    geom: ConvGeometry,
    out: [usize; 4],
}

impl<'a> Lowering<'a> {
    fn new(
        input: &'a Tensor,
        filter: &'a Tensor,
        bias: Option<&'a Tensor>,
        geom: &ConvGeometry,
    ) -> Result<Self> {
        let out = geom.output_dims(input.dims(), filter.dims())?;
        if let Some(b) = bias {
            if b.len() != out[1] {
                return Err(Error::Shape(format!(
                    "bias has {} elements for {} filters",
                    b.len(),
                    out[1]
                )));
            }
        }
        Ok(Lowering {
            input,
            filter,
            bias,
            geom: *geom,
            out,
        })
    }

    fn n_elm(&self) -> usize {
        let f = self.filter.dims();
        f[1] * f[2] * f[3]
    }

    /// Runs the GEMM for the given output positions (flat `oh * W_out + ow`)
    /// and filter components. Positions not listed are left at zero.
    fn run(
        &self,
        positions: &[usize],
        kept: &[usize],
        scale: f32,
        counter: &mut CostCounter,
    ) -> Tensor {
        let [n_batch, c_in, h, w] = <[usize; 4]>::try_from(self.input.dims()).unwrap();
        let [_, k_out, h_out, w_out] = self.out;
        let (r, s) = (self.filter.dims()[2], self.filter.dims()[3]);
        let n_elm = c_in * r * s;
        let (np, nj) = (positions.len(), kept.len());
        let g = self.geom;

        let weights: Vec<f32> = (0..k_out)
            .flat_map(|k| kept.iter().map(move |&j| (k, j)))
            .map(|(k, j)| self.filter.data()[k * n_elm + j] * scale)
            .collect();

        let mut out = vec![0.0f32; n_batch * k_out * h_out * w_out];
        let mut col = vec![0.0f32; nj * np];
        let mut acc = vec![0.0f32; np];
        let src = self.input.data();
        for n in 0..n_batch {
            let plane = &src[n * c_in * h * w..(n + 1) * c_in * h * w];
            for (jj, &flat) in kept.iter().enumerate() {
                let (c, rr, ss) = (flat / (r * s), (flat / s) % r, flat % s);
                let row = &mut col[jj * np..(jj + 1) * np];
                for (pi, &p) in positions.iter().enumerate() {
                    let (oh, ow) = (p / w_out, p % w_out);
                    let ih = (oh * g.stride_h + rr) as isize - g.pad_h as isize;
                    let iw = (ow * g.stride_w + ss) as isize - g.pad_w as isize;
                    row[pi] = if ih >= 0 && iw >= 0 && (ih as usize) < h && (iw as usize) < w {
                        plane[c * h * w + ih as usize * w + iw as usize]
                    } else {
                        0.0
                    };
                }
            }
            for k in 0..k_out {
                acc.fill(0.0);
                for jj in 0..nj {
                    let wv = weights[k * nj + jj];
                    let row = &col[jj * np..(jj + 1) * np];
                    for (a, &x) in acc.iter_mut().zip(row) {
                        *a += wv * x;
                    }
                }
                let b = self.bias.map_or(0.0, |b| b.data()[k]);
                let dst = &mut out[(n * k_out + k) * h_out * w_out..][..h_out * w_out];
                for (pi, &p) in positions.iter().enumerate() {
                    dst[p] = acc[pi] + b;
                }
            }
        }
        counter.add_macs((n_batch * k_out * np * nj) as u64);
        if self.bias.is_some() {
            counter.add_elems((n_batch * k_out * np) as u64);
        }
        Tensor::new(self.out.to_vec(), out).expect("output dims")
    }
}

pub fn conv2d_exact(
    input: &Tensor,
    filter: &Tensor,
    bias: Option<&Tensor>,
    geom: &ConvGeometry,
    counter: &mut CostCounter,
) -> Result<Tensor> {
    let low = Lowering::new(input, filter, bias, geom)?;
    let positions: Vec<usize> = (0..low.out[2] * low.out[3]).collect();
    let kept: Vec<usize> = (0..low.n_elm()).collect();
    Ok(low.run(&positions, &kept, 1.0, counter))
}

/// Convolution that skips output rows or columns per `perf` and fills them
/// by [`interpolate_skipped`].
pub fn conv2d_perforated(
    input: &Tensor,
    filter: &Tensor,
    bias: Option<&Tensor>,
    geom: &ConvGeometry,
    perf: &PerforationSpec,
    counter: &mut CostCounter,
) -> Result<Tensor> {
    let perf = PerforationSpec::new(perf.axis, perf.stride, perf.offset)?;
    let low = Lowering::new(input, filter, bias, geom)?;
    let [_, _, h_out, w_out] = low.out;
    let extent = match perf.axis {
        PerforationAxis::Row => h_out,
        PerforationAxis::Column => w_out,
    };
    if perf.computed_count(extent) == 0 {
        return Err(Error::Param(format!(
            "perforation {perf:?} skips every one of {extent} output lines"
        )));
    }
    let positions: Vec<usize> = (0..h_out * w_out)
        .filter(|&p| {
            let i = match perf.axis {
                PerforationAxis::Row => p / w_out,
                PerforationAxis::Column => p % w_out,
            };
            !perf.is_skipped(i)
        })
        .collect();
    let kept: Vec<usize> = (0..low.n_elm()).collect();
    let mut out = low.run(&positions, &kept, 1.0, counter);
    interpolate_in_place(&mut out, &perf, counter)?;
    Ok(out)
}

/// Fills the lines `perf` skips with the mean of the nearest computed line on
/// each side, or a copy of the single neighbour at a border.
pub fn interpolate_skipped(partial: &Tensor, perf: &PerforationSpec) -> Result<Tensor> {
    let mut out = partial.clone();
    interpolate_in_place(&mut out, perf, &mut CostCounter::new())?;
    Ok(out)
}

fn interpolate_in_place(
    t: &mut Tensor,
    perf: &PerforationSpec,
    counter: &mut CostCounter,
) -> Result<()> {
    let [n, k, h, w] = t.nchw();
    let extent = match perf.axis {
        PerforationAxis::Row => h,
        PerforationAxis::Column => w,
    };
    let skipped = perf.skipped(extent);
    if skipped.is_empty() {
        return Ok(());
    }
    if skipped.len() == extent {
        return Err(Error::Param(format!(
            "cannot interpolate: all {extent} lines are skipped"
        )));
    }
    // Nearest computed neighbour below and above each skipped line.
    let neighbours: Vec<(usize, Option<usize>, Option<usize>)> = skipped
        .iter()
        .map(|&i| {
            let lo = (0..i).rev().find(|&j| !perf.is_skipped(j));
            let hi = (i + 1..extent).find(|&j| !perf.is_skipped(j));
            (i, lo, hi)
        })
        .collect();
    let data = t.data_mut();
    for plane in data.chunks_exact_mut(h * w).take(n * k) {
        for &(i, lo, hi) in &neighbours {
            let other = if perf.axis == PerforationAxis::Row { w } else { h };
            for o in 0..other {
                let at = |line: usize| match perf.axis {
                    PerforationAxis::Row => line * w + o,
                    PerforationAxis::Column => o * w + line,
                };
                plane[at(i)] = match (lo, hi) {
                    (Some(a), Some(b)) => 0.5 * (plane[at(a)] + plane[at(b)]),
                    (Some(a), None) => plane[at(a)],
                    (None, Some(b)) => plane[at(b)],
                    (None, None) => unreachable!("at least one line is computed"),
                };
            }
        }
    }
    let other = if perf.axis == PerforationAxis::Row { w } else { h };
    counter.add_elems((n * k * skipped.len() * other) as u64);
    Ok(())
}

/// Convolution with a strided subset of each filter's components removed and
/// the survivors rescaled.
pub fn conv2d_filter_sampled(
    input: &Tensor,
    filter: &Tensor,
    bias: Option<&Tensor>,
    geom: &ConvGeometry,
    samp: &FilterSampleSpec,
    counter: &mut CostCounter,
) -> Result<Tensor> {
    let samp = FilterSampleSpec::new(samp.stride, samp.offset)?;
    let low = Lowering::new(input, filter, bias, geom)?;
    let n_elm = low.n_elm();
    let kept = samp.kept_indices(n_elm);
    if kept.is_empty() {
        return Err(Error::Param(format!(
            "filter sampling {samp:?} removes all {n_elm} components"
        )));
    }
    let positions: Vec<usize> = (0..low.out[2] * low.out[3]).collect();
    Ok(low.run(&positions, &kept, samp.rescale(n_elm), counter))
}

/// The filter `conv2d_filter_sampled` effectively applies: removed components
/// zeroed, kept ones rescaled.
pub fn sampled_filter(filter: &Tensor, samp: &FilterSampleSpec) -> Result<Tensor> {
    let [_, c, r, s] = filter.nchw();
    let n_elm = c * r * s;
    if samp.kept_count(n_elm) == 0 {
        return Err(Error::Param("filter sampling removes every component".into()));
    }
    let scale = samp.rescale(n_elm);
    let mut out = filter.clone();
    for (i, x) in out.data_mut().iter_mut().enumerate() {
        if samp.is_removed(i % n_elm) {
            *x = 0.0;
        } else {
            *x *= scale;
        }
    }
    Ok(out)
}

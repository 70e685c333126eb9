//! Forward and backward kernels for the layers the feature extractor and
//! head are built from. The graph in [`crate::autodiff`] records their
//! inputs and calls the backward halves.

use crate::error::{Error, Result};
use crate::tensor::{gemm, Tensor};

/// `x · W + b` for `x: batch×in`, `W: in×out`, `b: out`.
pub fn dense_forward(x: &Tensor, weights: &Tensor, bias: &Tensor) -> Result<Tensor> {
    let (batch, input) = dims2(x, "x")?;
    let (w_in, out) = dims2(weights, "weights")?;
    if input != w_in {
        return Err(Error::Dimension(format!(
            "x axis 1 has size {input} but weights axis 0 has size {w_in}"
        )));
    }
    if bias.shape() != [out] {
        return Err(Error::Dimension(format!(
            "bias shape {:?} does not match weights axis 1 of size {out}",
            bias.shape()
        )));
    }
    let mut y = vec![0.0; batch * out];
    for row in y.chunks_mut(out) {
        row.copy_from_slice(bias.data());
    }
    gemm(
        batch,
        input,
        out,
        1.0,
        x.data(),
        (input as isize, 1),
        weights.data(),
        (out as isize, 1),
        1.0,
        &mut y,
    );
    Tensor::new(vec![batch, out], y)
}

/// Returns `(dx, dW, db)`; `dx` is skipped when `need_dx` is false.
pub fn dense_backward(
    x: &Tensor,
    weights: &Tensor,
    dy: &Tensor,
    need_dx: bool,
) -> (Option<Tensor>, Tensor, Tensor) {
    let (batch, input) = (x.shape()[0], x.shape()[1]);
    let out = weights.shape()[1];
    let mut dw = vec![0.0; input * out];
    gemm(
        input,
        batch,
        out,
        1.0,
        x.data(),
        (1, input as isize),
        dy.data(),
        (out as isize, 1),
        0.0,
        &mut dw,
    );
    let mut db = vec![0.0; out];
    for row in dy.data().chunks(out) {
        for (acc, v) in db.iter_mut().zip(row) {
            *acc += v;
        }
    }
    let dx = need_dx.then(|| {
        let mut dx = vec![0.0; batch * input];
        gemm(
            batch,
            out,
            input,
            1.0,
            dy.data(),
            (out as isize, 1),
            weights.data(),
            (1, out as isize),
            0.0,
            &mut dx,
        );
        Tensor::new(vec![batch, input], dx).expect("dx shape")
    });
    (
        dx,
        Tensor::new(vec![input, out], dw).expect("dW shape"),
        Tensor::new(vec![out], db).expect("db shape"),
    )
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Padding {
    /// Zero padding of `kernel / 2` on each side; preserves spatial size at
    /// stride 1 for odd kernels.
    Same,
    Valid,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeometry {
    pub batch: usize,
    pub in_channels: usize,
    pub height: usize,
    pub width: usize,
    pub out_channels: usize,
    pub kernel_h: usize,
    pub kernel_w: usize,
    pub stride: usize,
    pub pad_h: usize,
    pub pad_w: usize,
    pub out_h: usize,
    pub out_w: usize,
}

impl ConvGeometry {
    pub fn new(x: &[usize], filters: &[usize], stride: usize, padding: Padding) -> Result<Self> {
        if stride == 0 {
            return Err(Error::Precondition("convolution stride must be >= 1".into()));
        }
        let &[batch, in_channels, height, width] = x else {
            return Err(Error::Dimension(format!(
                "convolution input must be batch×C×H×W, found {x:?}"
            )));
        };
        let &[out_channels, f_in, kernel_h, kernel_w] = filters else {
            return Err(Error::Dimension(format!(
                "filters must be out×C×kh×kw, found {filters:?}"
            )));
        };
        if f_in != in_channels {
            return Err(Error::Dimension(format!(
                "input axis 1 has {in_channels} channels but filters axis 1 has {f_in}"
            )));
        }
        let (pad_h, pad_w) = match padding {
            Padding::Same => (kernel_h / 2, kernel_w / 2),
            Padding::Valid => (0, 0),
        };
        if kernel_h > height + 2 * pad_h || kernel_w > width + 2 * pad_w {
            return Err(Error::Dimension(format!(
                "kernel {kernel_h}×{kernel_w} exceeds padded input {}×{}",
                height + 2 * pad_h,
                width + 2 * pad_w
            )));
        }
        Ok(Self {
            batch,
            in_channels,
            height,
            width,
            out_channels,
            kernel_h,
            kernel_w,
            stride,
            pad_h,
            pad_w,
            out_h: (height + 2 * pad_h - kernel_h) / stride + 1,
            out_w: (width + 2 * pad_w - kernel_w) / stride + 1,
        })
    }

    fn patch_len(&self) -> usize {
        self.in_channels * self.kernel_h * self.kernel_w
    }

    fn spatial(&self) -> usize {
        self.out_h * self.out_w
    }

    /// Output columns `[lo, hi)` whose tap at kernel column `kj` lands
    /// inside the input row.
    fn valid_x(&self, kj: usize) -> (usize, usize) {
        let lo = self.pad_w.saturating_sub(kj).div_ceil(self.stride);
        let limit = self.width + self.pad_w;
        let hi = if limit > kj {
            ((limit - kj - 1) / self.stride + 1).min(self.out_w)
        } else {
            0
        };
        (lo.min(hi), hi)
    }

    /// Unrolls the patches of one sample (`C×H×W`) into `out`, a
    /// `patch_len × out_h·out_w` matrix.
    fn unroll(&self, x: &[f64], out: &mut [f64]) {
        let spatial = self.spatial();
        for c in 0..self.in_channels {
            let plane = &x[c * self.height * self.width..(c + 1) * self.height * self.width];
            for ki in 0..self.kernel_h {
                for kj in 0..self.kernel_w {
                    let row = (c * self.kernel_h + ki) * self.kernel_w + kj;
                    let dst = &mut out[row * spatial..(row + 1) * spatial];
                    let (lo, hi) = self.valid_x(kj);
                    for oy in 0..self.out_h {
                        let line = &mut dst[oy * self.out_w..(oy + 1) * self.out_w];
                        let y = (oy * self.stride + ki) as isize - self.pad_h as isize;
                        if y < 0 || y >= self.height as isize {
                            line.fill(0.0);
                            continue;
                        }
                        let src = &plane[y as usize * self.width..(y as usize + 1) * self.width];
                        line[..lo].fill(0.0);
                        line[hi..].fill(0.0);
                        for ox in lo..hi {
                            line[ox] = src[ox * self.stride + kj - self.pad_w];
                        }
                    }
                }
            }
        }
    }

    /// Adjoint of [`Self::unroll`]: accumulates `cols` into `dx`.
    fn fold(&self, cols: &[f64], dx: &mut [f64]) {
        let spatial = self.spatial();
        for c in 0..self.in_channels {
            let plane = &mut dx[c * self.height * self.width..(c + 1) * self.height * self.width];
            for ki in 0..self.kernel_h {
                for kj in 0..self.kernel_w {
                    let row = (c * self.kernel_h + ki) * self.kernel_w + kj;
                    let src = &cols[row * spatial..(row + 1) * spatial];
                    let (lo, hi) = self.valid_x(kj);
                    for oy in 0..self.out_h {
                        let y = (oy * self.stride + ki) as isize - self.pad_h as isize;
                        if y < 0 || y >= self.height as isize {
                            continue;
                        }
                        let line = &src[oy * self.out_w..(oy + 1) * self.out_w];
                        let dst = &mut plane[y as usize * self.width..(y as usize + 1) * self.width];
                        for ox in lo..hi {
                            dst[ox * self.stride + kj - self.pad_w] += line[ox];
                        }
                    }
                }
            }
        }
    }
}

/// Unrolls input patches into a `patch_len × (batch·out_h·out_w)` matrix.
pub fn im2col(x: &Tensor, geo: &ConvGeometry) -> Vec<f64> {
    let spatial = geo.spatial();
    let k = geo.patch_len();
    let per = geo.in_channels * geo.height * geo.width;
    let n = geo.batch * spatial;
    let mut out = vec![0.0; k * n];
    let mut tmp = vec![0.0; k * spatial];
    for b in 0..geo.batch {
        geo.unroll(&x.data()[b * per..(b + 1) * per], &mut tmp);
        for r in 0..k {
            out[r * n + b * spatial..r * n + (b + 1) * spatial].copy_from_slice(&tmp[r * spatial..(r + 1) * spatial]);
        }
    }
    out
}

/// Samples unrolled together so that one GEMM sees at least ~1024 columns.
fn chunk_len(geo: &ConvGeometry) -> usize {
    (1024 / geo.spatial().max(1)).clamp(1, geo.batch.max(1))
}

/// Unrolls samples `start..start + len` side by side into `cols`
/// (`patch_len × len·spatial`).
fn unroll_chunk(geo: &ConvGeometry, x: &[f64], start: usize, len: usize, tmp: &mut [f64], cols: &mut [f64]) {
    let per = geo.in_channels * geo.height * geo.width;
    let spatial = geo.spatial();
    let k = geo.patch_len();
    if len == 1 {
        geo.unroll(&x[start * per..(start + 1) * per], &mut cols[..k * spatial]);
        return;
    }
    let n = len * spatial;
    for s in 0..len {
        geo.unroll(&x[(start + s) * per..(start + s + 1) * per], tmp);
        for r in 0..k {
            cols[r * n + s * spatial..r * n + (s + 1) * spatial].copy_from_slice(&tmp[r * spatial..(r + 1) * spatial]);
        }
    }
}

/// Cross-correlation of `x: batch×C×H×W` with `filters: out×C×kh×kw`.
/// Patches are unrolled a few samples at a time so the working set stays
/// small; the backward pass unrolls them again.
pub fn conv2d_forward(
    x: &Tensor,
    filters: &Tensor,
    bias: Option<&Tensor>,
    stride: usize,
    padding: Padding,
) -> Result<(Tensor, ConvGeometry)> {
    let geo = ConvGeometry::new(x.shape(), filters.shape(), stride, padding)?;
    if let Some(b) = bias {
        if b.shape() != [geo.out_channels] {
            return Err(Error::Dimension(format!(
                "bias shape {:?} does not match {} output channels",
                b.shape(),
                geo.out_channels
            )));
        }
    }
    let k = geo.patch_len();
    let m = geo.out_channels;
    let spatial = geo.spatial();
    let chunk = chunk_len(&geo);
    let mut tmp = vec![0.0; k * spatial];
    let mut cols = vec![0.0; k * spatial * chunk];
    let mut res = vec![0.0; m * spatial * chunk];
    let mut out = vec![0.0; geo.batch * m * spatial];
    let mut start = 0;
    while start < geo.batch {
        let len = chunk.min(geo.batch - start);
        let n = len * spatial;
        unroll_chunk(&geo, x.data(), start, len, &mut tmp, &mut cols);
        gemm(m, k, n, 1.0, filters.data(), (k as isize, 1), &cols, (n as isize, 1), 0.0, &mut res);
        for s in 0..len {
            let dst = &mut out[(start + s) * m * spatial..(start + s + 1) * m * spatial];
            for oc in 0..m {
                let shift = bias.map_or(0.0, |b| b.data()[oc]);
                let src = &res[oc * n + s * spatial..oc * n + (s + 1) * spatial];
                for (d, v) in dst[oc * spatial..(oc + 1) * spatial].iter_mut().zip(src) {
                    *d = v + shift;
                }
            }
        }
        start += len;
    }
    let y = Tensor::new(vec![geo.batch, m, geo.out_h, geo.out_w], out)?;
    Ok((y, geo))
}

/// Returns `(dx, dFilters, dBias)`.
pub fn conv2d_backward(
    x: &Tensor,
    geo: &ConvGeometry,
    filters: &Tensor,
    dy: &Tensor,
    need_dx: bool,
) -> (Option<Tensor>, Tensor, Tensor) {
    let k = geo.patch_len();
    let m = geo.out_channels;
    let spatial = geo.spatial();
    let per = geo.in_channels * geo.height * geo.width;
    let chunk = chunk_len(geo);
    let mut tmp = vec![0.0; k * spatial];
    let mut cols = vec![0.0; k * spatial * chunk];
    let mut dcols = vec![0.0; k * spatial * chunk];
    let mut g = vec![0.0; m * spatial * chunk];
    let mut db = vec![0.0; m];
    let mut dw = vec![0.0; m * k];
    let mut dx = vec![0.0; if need_dx { geo.batch * per } else { 0 }];
    let mut start = 0;
    while start < geo.batch {
        let len = chunk.min(geo.batch - start);
        let n = len * spatial;
        for s in 0..len {
            let src = &dy.data()[(start + s) * m * spatial..(start + s + 1) * m * spatial];
            for oc in 0..m {
                let row = &src[oc * spatial..(oc + 1) * spatial];
                db[oc] += row.iter().sum::<f64>();
                g[oc * n + s * spatial..oc * n + (s + 1) * spatial].copy_from_slice(row);
            }
        }
        unroll_chunk(geo, x.data(), start, len, &mut tmp, &mut cols);
        gemm(m, n, k, 1.0, &g, (n as isize, 1), &cols, (1, n as isize), 1.0, &mut dw);
        if need_dx {
            gemm(k, m, n, 1.0, filters.data(), (1, k as isize), &g, (n as isize, 1), 0.0, &mut dcols);
            for s in 0..len {
                if len == 1 {
                    geo.fold(&dcols[..k * spatial], &mut dx[start * per..(start + 1) * per]);
                } else {
                    for r in 0..k {
                        tmp[r * spatial..(r + 1) * spatial]
                            .copy_from_slice(&dcols[r * n + s * spatial..r * n + (s + 1) * spatial]);
                    }
                    geo.fold(&tmp, &mut dx[(start + s) * per..(start + s + 1) * per]);
                }
            }
        }
        start += len;
    }
    let dx = need_dx.then(|| {
        Tensor::new(vec![geo.batch, geo.in_channels, geo.height, geo.width], dx).expect("dx shape")
    });
    (
        dx,
        Tensor::new(filters.shape().to_vec(), dw).expect("dW shape"),
        Tensor::new(vec![m], db).expect("db shape"),
    )
}

pub fn relu_forward(x: &Tensor) -> Tensor {
    x.map(|v| v.max(0.0))
}

/// 2×2 max pooling with stride 2; odd trailing rows/columns are dropped.
/// Returns the pooled tensor and the flat input index of each maximum.
pub fn max_pool2_forward(x: &Tensor) -> Result<(Tensor, Vec<usize>)> {
    let &[batch, channels, h, w] = x.shape() else {
        return Err(Error::Dimension(format!(
            "pooling input must be batch×C×H×W, found {:?}",
            x.shape()
        )));
    };
    let (oh, ow) = (h / 2, w / 2);
    if oh == 0 || ow == 0 {
        return Err(Error::Dimension(format!("cannot pool a {h}×{w} map")));
    }
    let data = x.data();
    let mut out = Vec::with_capacity(batch * channels * oh * ow);
    let mut argmax = Vec::with_capacity(out.capacity());
    for plane in 0..batch * channels {
        let base = plane * h * w;
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best = base + 2 * oy * w + 2 * ox;
                for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                    let idx = base + (2 * oy + dy) * w + 2 * ox + dx;
                    if data[idx] > data[best] {
                        best = idx;
                    }
                }
                out.push(data[best]);
                argmax.push(best);
            }
        }
    }
    Ok((Tensor::new(vec![batch, channels, oh, ow], out)?, argmax))
}

/// Mean over the batch of `-log softmax(logits)[label]`, plus the softmax
/// probabilities.
pub fn softmax_cross_entropy(logits: &Tensor, labels: &[usize]) -> Result<(f64, Vec<f64>)> {
    let (batch, classes) = dims2(logits, "logits")?;
    if labels.len() != batch {
        return Err(Error::Dimension(format!(
            "{} labels for a batch of {batch}",
            labels.len()
        )));
    }
    if batch == 0 {
        return Err(Error::Precondition("empty batch".into()));
    }
    let mut probs = vec![0.0; batch * classes];
    let mut total = 0.0;
    for (i, &label) in labels.iter().enumerate() {
        if label >= classes {
            return Err(Error::Index(format!(
                "label {label} at row {i} is outside [0, {classes})"
            )));
        }
        let row = logits.row(i);
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let norm: f64 = row.iter().map(|v| (v - max).exp()).sum();
        let log_norm = norm.ln();
        for (p, v) in probs[i * classes..(i + 1) * classes].iter_mut().zip(row) {
            *p = (v - max).exp() / norm;
        }
        total += log_norm - (row[label] - max);
    }
    Ok((total / batch as f64, probs))
}

fn dims2(t: &Tensor, name: &str) -> Result<(usize, usize)> {
    match *t.shape() {
        [a, b] => Ok((a, b)),
        ref s => Err(Error::Dimension(format!("{name} must be rank 2, found {s:?}"))),
    }
}

//! Filter redundancy loss: penalizes correlated channels inside the
//! highest-magnitude filters of a convolution layer.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// The filters of one convolution layer, laid out `filters×C×H×W` (the
/// layout of a convolution weight tensor).
#[derive(Clone, Debug, PartialEq)]
pub struct FilterBank {
    weights: Tensor,
}

impl FilterBank {
    pub fn new(weights: Tensor) -> Result<Self> {
        if weights.rank() != 4 {
            return Err(Error::Dimension(format!(
                "filter bank must be filters×C×H×W, found {:?}",
                weights.shape()
            )));
        }
        Ok(Self { weights })
    }

    pub fn weights(&self) -> &Tensor {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.weights.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn channels(&self) -> usize {
        self.weights.shape()[1]
    }

    fn filter_len(&self) -> usize {
        self.weights.shape()[1..].iter().product()
    }

    /// Entries of filter `i`, channel-major.
    pub fn filter(&self, i: usize) -> &[f64] {
        let n = self.filter_len();
        &self.weights.data()[i * n..(i + 1) * n]
    }

    /// Euclidean norm of each filter.
    pub fn magnitudes(&self) -> Vec<f64> {
        (0..self.len())
            .map(|i| self.filter(i).iter().map(|v| v * v).sum::<f64>().sqrt())
            .collect()
    }

    /// Indices of the `k` largest-magnitude filters, largest first; ties go
    /// to the lower index.
    pub fn top_k(&self, k: usize) -> Vec<usize> {
        let mags = self.magnitudes();
        let mut order: Vec<usize> = (0..self.len()).collect();
        order.sort_by(|&a, &b| mags[b].total_cmp(&mags[a]).then(a.cmp(&b)));
        order.truncate(k);
        order
    }
}

/// Subtracts each channel's own mean. `filter` is `C×H×W`.
pub fn mean_normalize_filter(filter: &Tensor) -> Result<Tensor> {
    if filter.rank() != 3 {
        return Err(Error::Dimension(format!(
            "filter must be C×H×W, found {:?}",
            filter.shape()
        )));
    }
    let plane = filter.shape()[1] * filter.shape()[2];
    let mut out = filter.clone();
    if plane > 0 {
        out.data_mut().chunks_mut(plane).for_each(center);
    }
    Ok(out)
}

fn center(channel: &mut [f64]) {
    let mean = channel.iter().sum::<f64>() / channel.len() as f64;
    channel.iter_mut().for_each(|v| *v -= mean);
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn check(bank: &FilterBank, top_k: usize) -> Result<()> {
    if bank.channels() < 2 {
        return Err(Error::Config(format!(
            "filter redundancy needs at least 2 channels, found {}",
            bank.channels()
        )));
    }
    if top_k == 0 || top_k > bank.len() {
        return Err(Error::Config(format!(
            "top_k = {top_k} must be in [1, {}]",
            bank.len()
        )));
    }
    Ok(())
}

pub fn frl(bank: &FilterBank, top_k: usize) -> Result<f64> {
    frl_with_grad(bank, top_k).map(|(loss, _)| loss)
}

/// The loss and its gradient with respect to every entry of the bank.
///
/// For each of the `top_k` largest filters the absolute dot products of its
/// mean-normalized channels are summed over ordered pairs `a ≠ b` and
/// divided by `C(C−1)`; the loss is the mean of these over the selected
/// filters. Unselected filters receive zero gradient.
pub fn frl_with_grad(bank: &FilterBank, top_k: usize) -> Result<(f64, Tensor)> {
    check(bank, top_k)?;
    let c = bank.channels();
    let plane = bank.filter_len() / c;
    let pairs = (c * (c - 1)) as f64;
    let scale = 1.0 / (top_k as f64 * pairs);
    let mut grad = Tensor::zeros(bank.weights.shape());
    let mut loss = 0.0;
    let n = bank.filter_len();
    for i in bank.top_k(top_k) {
        let mut centered = bank.filter(i).to_vec();
        centered.chunks_mut(plane).for_each(center);
        let chans: Vec<&[f64]> = centered.chunks(plane).collect();
        let g = &mut grad.data_mut()[i * n..(i + 1) * n];
        for a in 0..c {
            for b in a + 1..c {
                let d = dot(chans[a], chans[b]);
                // the ordered pairs (a, b) and (b, a) contribute equally
                loss += 2.0 * d.abs() * scale;
                let s = 2.0 * d.signum() * scale;
                if d == 0.0 {
                    continue;
                }
                for k in 0..plane {
                    g[a * plane + k] += s * chans[b][k];
                    g[b * plane + k] += s * chans[a][k];
                }
            }
        }
        // centering is a symmetric projection; apply it to the gradient
        g.chunks_mut(plane).for_each(center);
    }
    Ok((loss, grad))
}

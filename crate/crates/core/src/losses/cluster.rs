//! Moving per-class feature statistics and the attribute cluster loss.
//!
//! Each class keeps the mean feature vector `M` of every row seen so far in
//! the epoch, a scalar spread `V` (population std over all scalar entries of
//! those rows) and the row count. A batch is merged with the pooled-moment
//! update, and the loss sums `V_p·V_q / ‖M_p − M_q‖²` over ordered pairs of
//! distinct classes. Gradients flow through the current batch only; the
//! prior state is a constant.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassMoments {
    pub mean: Vec<f64>,
    pub std: f64,
    pub count: usize,
}

impl ClassMoments {
    /// Scalar mean of the mean vector.
    pub fn scalar_mean(&self) -> f64 {
        scalar_mean(&self.mean)
    }
}

/// Per-class moments of a single batch.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchClassSummary {
    pub dim: usize,
    pub classes: BTreeMap<usize, ClassMoments>,
}

fn scalar_mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        0.0
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

fn check_batch(features: &Tensor, class_ids: &[usize]) -> Result<(usize, usize)> {
    let &[batch, dim] = features.shape() else {
        return Err(Error::Dimension(format!(
            "features must be batch×d, found {:?}",
            features.shape()
        )));
    };
    if class_ids.len() != batch {
        return Err(Error::Dimension(format!(
            "{} class ids for {batch} feature rows",
            class_ids.len()
        )));
    }
    Ok((batch, dim))
}

fn rows_by_class(class_ids: &[usize]) -> BTreeMap<usize, Vec<usize>> {
    let mut rows: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, &c) in class_ids.iter().enumerate() {
        rows.entry(c).or_default().push(i);
    }
    rows
}

pub fn batch_summarize(features: &Tensor, class_ids: &[usize]) -> Result<BatchClassSummary> {
    let (_, dim) = check_batch(features, class_ids)?;
    let mut classes = BTreeMap::new();
    for (class, rows) in rows_by_class(class_ids) {
        let mut mean = vec![0.0; dim];
        for &i in &rows {
            for (m, v) in mean.iter_mut().zip(features.row(i)) {
                *m += v;
            }
        }
        let r = rows.len() as f64;
        mean.iter_mut().for_each(|m| *m /= r);
        let z = scalar_mean(&mean);
        let mut ss = 0.0;
        for &i in &rows {
            ss += features.row(i).iter().map(|v| (v - z) * (v - z)).sum::<f64>();
        }
        let std = (ss / (r * dim as f64)).sqrt();
        classes.insert(
            class,
            ClassMoments {
                mean,
                std,
                count: rows.len(),
            },
        );
    }
    Ok(BatchClassSummary { dim, classes })
}

/// Pooled mean `(r·Z + r_prev·M_prev) / (r + r_prev)`. With no prior state
/// the batch mean is returned; with both counts zero the prior is returned
/// unchanged.
pub fn update_moving_mean(prev: Option<(&[f64], usize)>, batch: (&[f64], usize)) -> Vec<f64> {
    let (z, r) = batch;
    match prev {
        Some((m_prev, r_prev)) if r_prev > 0 => {
            if r == 0 {
                return m_prev.to_vec();
            }
            let total = (r + r_prev) as f64;
            z.iter()
                .zip(m_prev)
                .map(|(zi, mi)| (r as f64 * zi + r_prev as f64 * mi) / total)
                .collect()
        }
        Some((m_prev, _)) if r == 0 => m_prev.to_vec(),
        _ => z.to_vec(),
    }
}

/// Pooled spread from `(V_prev, z_prev, r_prev)` and the batch's
/// `(σ, z, r)`, both measured about the merged scalar mean `m`:
///
/// `V = sqrt([r(σ² + (z − m)²) + r_prev(V_prev² + (z_prev − m)²)] / (r + r_prev))`
pub fn update_moving_std(prev: Option<(f64, f64, usize)>, batch: (f64, f64, usize), merged_mean: f64) -> f64 {
    let (sigma, z, r) = batch;
    let (v_prev, z_prev, r_prev) = prev.unwrap_or((0.0, 0.0, 0));
    if r_prev == 0 {
        return sigma;
    }
    if r == 0 {
        return v_prev;
    }
    let m = merged_mean;
    let num = r as f64 * (sigma * sigma + (z - m) * (z - m))
        + r_prev as f64 * (v_prev * v_prev + (z_prev - m) * (z_prev - m));
    (num / (r + r_prev) as f64).sqrt()
}

/// Running per-class statistics for one epoch.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ClusterState {
    /// Number of merged batches.
    pub t: u64,
    pub classes: BTreeMap<usize, ClassMoments>,
}

impl ClusterState {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn reset(&mut self) {
        *self = Self::default();
    }

    /// Classes with a positive running count.
    pub fn active(&self) -> impl Iterator<Item = (usize, &ClassMoments)> {
        self.classes
            .iter()
            .filter(|(_, c)| c.count > 0)
            .map(|(k, c)| (*k, c))
    }

    pub fn merge(&mut self, summary: &BatchClassSummary) {
        for (&class, batch) in &summary.classes {
            let merged = match self.classes.get(&class) {
                Some(prior) if prior.count > 0 => merge_moments(prior, batch),
                _ => batch.clone(),
            };
            self.classes.insert(class, merged);
        }
        self.t += 1;
    }

    /// Mean Euclidean distance between the means of all unordered pairs of
    /// active classes.
    pub fn mean_centroid_distance(&self) -> Option<f64> {
        let active: Vec<_> = self.active().collect();
        let mut total = 0.0;
        let mut pairs = 0usize;
        for (i, (_, a)) in active.iter().enumerate() {
            for (_, b) in &active[i + 1..] {
                total += sq_dist(&a.mean, &b.mean).sqrt();
                pairs += 1;
            }
        }
        (pairs > 0).then(|| total / pairs as f64)
    }
}

fn merge_moments(prior: &ClassMoments, batch: &ClassMoments) -> ClassMoments {
    let mean = update_moving_mean(Some((&prior.mean, prior.count)), (&batch.mean, batch.count));
    let m = scalar_mean(&mean);
    let std = update_moving_std(
        Some((prior.std, prior.scalar_mean(), prior.count)),
        (batch.std, batch.scalar_mean(), batch.count),
        m,
    );
    ClassMoments {
        mean,
        std,
        count: prior.count + batch.count,
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// The cluster loss over the active classes of `state`; `None` when fewer
/// than two classes are active.
pub fn dacl(state: &ClusterState, eps_dist: f64) -> Option<f64> {
    let active: Vec<_> = state.active().collect();
    if active.len() < 2 {
        return None;
    }
    let mut loss = 0.0;
    for (p, (_, a)) in active.iter().enumerate() {
        for (q, (_, b)) in active.iter().enumerate() {
            if p != q {
                loss += a.std * b.std / sq_dist(&a.mean, &b.mean).max(eps_dist);
            }
        }
    }
    Some(loss)
}

/// Result of merging one batch and evaluating the cluster loss.
#[derive(Clone, Debug)]
pub struct DaclStep {
    /// `None` when fewer than two classes are active; `grad` is then zero.
    pub loss: Option<f64>,
    /// Gradient of the loss with respect to the batch features.
    pub grad: Tensor,
    /// The state after merging the batch.
    pub state: ClusterState,
}

/// Merges the batch into a copy of `prior`, evaluates the loss and its
/// gradient with respect to `features`.
pub fn dacl_step(
    prior: &ClusterState,
    features: &Tensor,
    class_ids: &[usize],
    eps_dist: f64,
) -> Result<DaclStep> {
    let (_, dim) = check_batch(features, class_ids)?;
    let summary = batch_summarize(features, class_ids)?;
    let mut state = prior.clone();
    state.merge(&summary);
    let mut grad = Tensor::zeros(features.shape());
    let Some(loss) = dacl(&state, eps_dist) else {
        return Ok(DaclStep {
            loss: None,
            grad,
            state,
        });
    };

    let active: Vec<(usize, &ClassMoments)> = state.active().collect();
    let rows = rows_by_class(class_ids);
    let g = grad.data_mut();
    for (p, &(class, mp)) in active.iter().enumerate() {
        let Some(class_rows) = rows.get(&class) else {
            continue;
        };
        let mut d_v = 0.0;
        let mut d_mean = vec![0.0; dim];
        for (q, (_, mq)) in active.iter().enumerate() {
            if p == q {
                continue;
            }
            let dist = sq_dist(&mp.mean, &mq.mean);
            let denom = dist.max(eps_dist);
            d_v += 2.0 * mq.std / denom;
            if dist > eps_dist {
                let coef = -4.0 * mp.std * mq.std / (dist * dist);
                for ((acc, a), b) in d_mean.iter_mut().zip(&mp.mean).zip(&mq.mean) {
                    *acc += coef * (a - b);
                }
            }
        }
        let total = mp.count as f64;
        let m = mp.scalar_mean();
        let spread = if mp.std > 0.0 {
            d_v / (total * dim as f64 * mp.std)
        } else {
            0.0
        };
        for &i in class_rows {
            let row = features.row(i);
            let out = &mut g[i * dim..(i + 1) * dim];
            for k in 0..dim {
                out[k] = spread * (row[k] - m) + d_mean[k] / total;
            }
        }
    }
    Ok(DaclStep {
        loss: Some(loss),
        grad,
        state,
    })
}

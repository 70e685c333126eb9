//! The training stages: joint cross-entropy (the baseline), stage 1 over
//! composite classes with the cluster and filter losses, and stage 2 head
//! training on the stage-1 features.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, NodeId};
use crate::data::{SplitData, TrainingView};
use crate::error::{Error, Result};
use crate::losses::{active_classes, composite_class_id, dacl_step, frl_with_grad, ClusterState, FilterBank, LossConfig};
use crate::optim::Optimizer;
use crate::tensor::Tensor;

use super::config::{hex_digest, ExperimentConfig, StageConfig};
use super::model::{argmax_rows, is_extractor_param, Model};

/// Images plus the protected-free attribute view: everything a training
/// stage may see.
#[derive(Clone, Debug)]
pub struct TrainSet<'a> {
    images: &'a [f64],
    image_shape: [usize; 3],
    view: TrainingView,
}

impl SplitData {
    pub fn training_set(&self) -> TrainSet<'_> {
        TrainSet {
            images: &self.images,
            image_shape: self.image_shape,
            view: self.table.training_view(),
        }
    }
}

impl<'a> TrainSet<'a> {
    pub fn new(images: &'a [f64], image_shape: [usize; 3], view: TrainingView) -> Result<Self> {
        let per: usize = image_shape.iter().product();
        if images.len() != per * view.len() {
            return Err(Error::Dimension(format!(
                "{} image values for {} samples of shape {image_shape:?}",
                images.len(),
                view.len()
            )));
        }
        Ok(Self {
            images,
            image_shape,
            view,
        })
    }

    pub fn len(&self) -> usize {
        self.view.len()
    }

    pub fn is_empty(&self) -> bool {
        self.view.is_empty()
    }

    pub fn view(&self) -> &TrainingView {
        &self.view
    }

    pub fn batch(&self, indices: &[usize]) -> Tensor {
        let per: usize = self.image_shape.iter().product();
        let mut data = Vec::with_capacity(indices.len() * per);
        for &i in indices {
            data.extend_from_slice(&self.images[i * per..(i + 1) * per]);
        }
        let [c, h, w] = self.image_shape;
        Tensor::new(vec![indices.len(), c, h, w], data).expect("batch shape")
    }

    pub fn all(&self) -> Tensor {
        let [c, h, w] = self.image_shape;
        Tensor::new(vec![self.len(), c, h, w], self.images.to_vec()).expect("images shape")
    }

    fn labels(&self, target: &str) -> Result<Vec<usize>> {
        Ok(self.view.column(target)?.iter().map(|&v| v as usize).collect())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Baseline,
    Stage1,
    Stage2,
}

impl Stage {
    fn stream(self) -> u64 {
        match self {
            Stage::Baseline => 1,
            Stage::Stage1 => 2,
            Stage::Stage2 => 3,
        }
    }
}

/// One line of the training log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub stage: Stage,
    pub epoch: usize,
    /// Mean optimized objective over the epoch's batches.
    pub loss: f64,
    pub cross_entropy: Option<f64>,
    pub cluster_loss: Option<f64>,
    pub filter_loss: Option<f64>,
    pub train_accuracy: Option<f64>,
    pub active_classes: Option<usize>,
    pub centroid_distance: Option<f64>,
    /// SHA-256 of the end-of-epoch cluster state.
    pub cluster_digest: Option<String>,
}

impl EpochRecord {
    fn new(stage: Stage, epoch: usize, loss: f64) -> Self {
        Self {
            stage,
            epoch,
            loss,
            cross_entropy: None,
            cluster_loss: None,
            filter_loss: None,
            train_accuracy: None,
            active_classes: None,
            centroid_distance: None,
            cluster_digest: None,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingLog {
    pub epochs: Vec<EpochRecord>,
}

impl TrainingLog {
    pub fn to_jsonl(&self) -> String {
        self.epochs
            .iter()
            .map(|r| serde_json::to_string(r).expect("record serializes") + "\n")
            .collect()
    }

    pub fn from_jsonl(text: &str) -> Result<Self> {
        let epochs = text
            .lines()
            .filter(|l| !l.trim().is_empty())
            .map(serde_json::from_str)
            .collect::<std::result::Result<_, _>>()?;
        Ok(Self { epochs })
    }

    pub fn stage(&self, stage: Stage) -> impl Iterator<Item = &EpochRecord> {
        self.epochs.iter().filter(move |r| r.stage == stage)
    }

    fn last_finite_epoch(&self, stage: Stage) -> Option<usize> {
        self.stage(stage).map(|r| r.epoch).last()
    }
}

fn shuffled(n: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    order
}

fn rng_for(seed: u64, stage: Stage) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stage.stream());
    rng
}

fn diverged(stage: Stage, epoch: usize, batch: usize, what: &str, log: &TrainingLog) -> Error {
    let last = match log.last_finite_epoch(stage) {
        Some(e) => format!("last finite epoch {e}"),
        None => "no finite epoch completed".to_string(),
    };
    Error::Numeric(format!(
        "{what} became non-finite in {stage:?} epoch {epoch}, batch {batch} ({last})"
    ))
}

fn apply(
    model: &mut Model,
    optimizer: &mut Optimizer,
    g: &mut Graph,
    loss: NodeId,
    extractor_too: bool,
) -> Result<()> {
    let mut grads = g.backward(loss)?;
    if !extractor_too {
        grads.retain(|id| !is_extractor_param(model.params.name(id)));
    }
    optimizer.step(&mut model.params, &grads);
    Ok(())
}

fn check_stage(stage: &StageConfig, n: usize) -> Result<()> {
    if n == 0 && stage.epochs > 0 {
        return Err(Error::Precondition("the training split is empty".into()));
    }
    Ok(())
}

/// Joint cross-entropy training of extractor and head on `model`.
pub fn train_joint(
    model: &mut Model,
    data: &TrainSet,
    target: &str,
    stage_cfg: &StageConfig,
    seed: u64,
    stage: Stage,
    log: &mut TrainingLog,
) -> Result<()> {
    check_stage(stage_cfg, data.len())?;
    let labels = data.labels(target)?;
    let mut rng = rng_for(seed, stage);
    let mut optimizer = stage_cfg.optimizer.build();
    for epoch in 0..stage_cfg.epochs {
        let order = shuffled(data.len(), &mut rng);
        let (mut total, mut correct, mut batches) = (0.0, 0usize, 0usize);
        for (b, idx) in order.chunks(stage_cfg.batch_size).enumerate() {
            let y: Vec<usize> = idx.iter().map(|&i| labels[i]).collect();
            let mut g = Graph::new();
            let f = model.extractor(&mut g, data.batch(idx), true)?;
            let logits = model.head(&mut g, f, true)?;
            correct += argmax_rows(g.value(logits))?
                .iter()
                .zip(&y)
                .filter(|(p, t)| **p as usize == **t)
                .count();
            let loss = g.softmax_cross_entropy(logits, &y)?;
            let value = g.value(loss).item()?;
            if !value.is_finite() {
                return Err(diverged(stage, epoch, b, "cross-entropy", log));
            }
            apply(model, &mut optimizer, &mut g, loss, true)?;
            total += value;
            batches += 1;
        }
        let mean = total / batches as f64;
        let mut rec = EpochRecord::new(stage, epoch, mean);
        rec.cross_entropy = Some(mean);
        rec.train_accuracy = Some(correct as f64 / data.len() as f64);
        log.epochs.push(rec);
    }
    Ok(())
}

/// Composite class ids per training sample: the target bit followed by the
/// grouping bits.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Grouping {
    /// Names of the grouping attributes, most significant first.
    pub attributes: Vec<String>,
    pub class_ids: Vec<usize>,
}

impl Grouping {
    /// Grouping by selected non-protected attributes read from the view.
    pub fn from_attributes(view: &TrainingView, target: &str, attributes: &[String]) -> Result<Self> {
        let columns = attributes
            .iter()
            .map(|a| view.column(a))
            .collect::<Result<Vec<_>>>()?;
        Self::from_columns(view.column(target)?, attributes.to_vec(), &columns)
    }

    /// Grouping by externally supplied labels, e.g. a protected attribute
    /// taken from the evaluation view.
    pub fn from_labels(view: &TrainingView, target: &str, name: &str, labels: &[u8]) -> Result<Self> {
        Self::from_columns(view.column(target)?, vec![name.to_string()], &[labels])
    }

    fn from_columns(target: &[u8], attributes: Vec<String>, columns: &[&[u8]]) -> Result<Self> {
        if columns.iter().any(|c| c.len() != target.len()) {
            return Err(Error::Dimension("grouping columns and target differ in length".into()));
        }
        let mut bits = vec![0u8; columns.len()];
        let class_ids = (0..target.len())
            .map(|i| {
                for (b, c) in bits.iter_mut().zip(columns) {
                    *b = c[i];
                }
                composite_class_id(target[i], &bits)
            })
            .collect();
        Ok(Self { attributes, class_ids })
    }

    pub fn active(&self) -> usize {
        active_classes(&self.class_ids).len()
    }
}

/// Stage 1: optimizes the extractor for `λ₁·L_C + λ₂·L_F` over the
/// composite classes. Cluster statistics restart every epoch.
pub fn train_stage1(
    model: &mut Model,
    data: &TrainSet,
    grouping: &Grouping,
    stage_cfg: &StageConfig,
    losses: &LossConfig,
    seed: u64,
    log: &mut TrainingLog,
) -> Result<()> {
    losses.validate()?;
    check_stage(stage_cfg, data.len())?;
    if grouping.class_ids.len() != data.len() {
        return Err(Error::Dimension(format!(
            "{} class ids for {} samples",
            grouping.class_ids.len(),
            data.len()
        )));
    }
    if grouping.active() < 2 {
        return Err(Error::Config("stage 1 needs at least two active composite classes".into()));
    }
    let filter_name = model
        .last_conv_weight()
        .ok_or_else(|| Error::Config("the redundancy loss needs a convolution layer".into()))?;
    let filter_id = model.params.id(&filter_name).expect("conv weight exists");
    if losses.lambda2 > 0.0 {
        let filters = model.params.get(filter_id).shape()[0];
        if losses.top_k > filters {
            return Err(Error::Config(format!(
                "top_k = {} exceeds the {filters} filters of `{filter_name}`",
                losses.top_k
            )));
        }
    }

    let mut rng = rng_for(seed, Stage::Stage1);
    let mut optimizer = stage_cfg.optimizer.build();
    for epoch in 0..stage_cfg.epochs {
        let mut state = ClusterState::new();
        let order = shuffled(data.len(), &mut rng);
        let (mut total, mut lc_sum, mut lc_batches, mut lf_sum, mut batches) = (0.0, 0.0, 0usize, 0.0, 0usize);
        for (b, idx) in order.chunks(stage_cfg.batch_size).enumerate() {
            let mut g = Graph::new();
            let mut terms: Vec<NodeId> = Vec::new();
            if losses.lambda1 > 0.0 {
                let f = model.extractor(&mut g, data.batch(idx), true)?;
                let ids: Vec<usize> = idx.iter().map(|&i| grouping.class_ids[i]).collect();
                let step = dacl_step(&state, g.value(f), &ids, losses.eps_dist)?;
                state = step.state;
                if let Some(lc) = step.loss {
                    if !lc.is_finite() {
                        return Err(diverged(Stage::Stage1, epoch, b, "cluster loss", log));
                    }
                    let node = g.external(lc, vec![(f, step.grad)])?;
                    terms.push(g.scale(node, losses.lambda1));
                    lc_sum += lc;
                    lc_batches += 1;
                }
            }
            if losses.lambda2 > 0.0 {
                let w = g.param(&model.params, filter_id);
                let bank = FilterBank::new(model.params.get(filter_id).clone())?;
                let (lf, grad) = frl_with_grad(&bank, losses.top_k)?;
                if !lf.is_finite() {
                    return Err(diverged(Stage::Stage1, epoch, b, "filter loss", log));
                }
                let node = g.external(lf, vec![(w, grad)])?;
                terms.push(g.scale(node, losses.lambda2));
                lf_sum += lf;
            }
            batches += 1;
            let Some(mut loss) = terms.first().copied() else {
                continue;
            };
            for &t in &terms[1..] {
                loss = g.add(loss, t)?;
            }
            let value = g.value(loss).item()?;
            if !value.is_finite() {
                return Err(diverged(Stage::Stage1, epoch, b, "combined loss", log));
            }
            total += value;
            apply(model, &mut optimizer, &mut g, loss, true)?;
        }
        let mut rec = EpochRecord::new(Stage::Stage1, epoch, total / batches as f64);
        if losses.lambda1 > 0.0 {
            rec.cluster_loss = (lc_batches > 0).then(|| lc_sum / lc_batches as f64);
            rec.active_classes = Some(state.active().count());
            rec.centroid_distance = state.mean_centroid_distance();
            rec.cluster_digest = Some(hex_digest(&serde_json::to_vec(&state)?));
        }
        if losses.lambda2 > 0.0 {
            rec.filter_loss = Some(lf_sum / batches as f64);
        }
        log.epochs.push(rec);
    }
    Ok(())
}

/// Stage 2: trains the head with cross-entropy. A frozen extractor is run
/// once over the training split and its features reused every epoch.
pub fn train_stage2(
    model: &mut Model,
    data: &TrainSet,
    target: &str,
    stage_cfg: &StageConfig,
    freeze_extractor: bool,
    seed: u64,
    log: &mut TrainingLog,
) -> Result<()> {
    if !freeze_extractor {
        return train_joint(model, data, target, stage_cfg, seed, Stage::Stage2, log);
    }
    check_stage(stage_cfg, data.len())?;
    let labels = data.labels(target)?;
    let features = model.features(&data.all(), 250)?;
    let dim = features.shape()[1];
    let mut rng = rng_for(seed, Stage::Stage2);
    let mut optimizer = stage_cfg.optimizer.build();
    for epoch in 0..stage_cfg.epochs {
        let order = shuffled(data.len(), &mut rng);
        let (mut total, mut correct, mut batches) = (0.0, 0usize, 0usize);
        for (b, idx) in order.chunks(stage_cfg.batch_size).enumerate() {
            let mut rows = Vec::with_capacity(idx.len() * dim);
            for &i in idx {
                rows.extend_from_slice(features.row(i));
            }
            let y: Vec<usize> = idx.iter().map(|&i| labels[i]).collect();
            let mut g = Graph::new();
            let f = g.input(Tensor::new(vec![idx.len(), dim], rows)?);
            let logits = model.head(&mut g, f, true)?;
            correct += argmax_rows(g.value(logits))?
                .iter()
                .zip(&y)
                .filter(|(p, t)| **p as usize == **t)
                .count();
            let loss = g.softmax_cross_entropy(logits, &y)?;
            let value = g.value(loss).item()?;
            if !value.is_finite() {
                return Err(diverged(Stage::Stage2, epoch, b, "cross-entropy", log));
            }
            apply(model, &mut optimizer, &mut g, loss, false)?;
            total += value;
            batches += 1;
        }
        let mean = total / batches as f64;
        let mut rec = EpochRecord::new(Stage::Stage2, epoch, mean);
        rec.cross_entropy = Some(mean);
        rec.train_accuracy = Some(correct as f64 / data.len() as f64);
        log.epochs.push(rec);
    }
    Ok(())
}

/// Provenance of a trained model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelProvenance {
    pub variant: String,
    pub target: String,
    pub seed: u64,
    pub config_hash: String,
}

#[derive(Clone, Debug)]
pub struct TrainedModel {
    pub model: Model,
    pub log: TrainingLog,
    pub provenance: ModelProvenance,
}

impl TrainedModel {
    /// Hex SHA-256 over parameter names, shapes and values.
    pub fn parameter_hash(&self) -> String {
        let mut bytes = Vec::new();
        for (_, name, t) in self.model.params.iter() {
            bytes.extend_from_slice(name.as_bytes());
            for &d in t.shape() {
                bytes.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for &v in t.data() {
                bytes.extend_from_slice(&v.to_le_bytes());
            }
        }
        hex_digest(&bytes)
    }
}

fn provenance(config: &ExperimentConfig) -> ModelProvenance {
    ModelProvenance {
        variant: config.variant.name().to_string(),
        target: config.target.clone(),
        seed: config.seed,
        config_hash: config.hash(),
    }
}

/// Baseline predictor: extractor and head trained jointly with
/// cross-entropy.
pub fn train_bmt(config: &ExperimentConfig, data: &TrainSet) -> Result<TrainedModel> {
    config.validate()?;
    let mut model = Model::init(config.model.clone(), config.seed)?;
    let mut log = TrainingLog::default();
    train_joint(&mut model, data, &config.target, &config.baseline, config.seed, Stage::Baseline, &mut log)?;
    Ok(TrainedModel {
        model,
        log,
        provenance: ModelProvenance {
            variant: "bmt".into(),
            ..provenance(config)
        },
    })
}

/// Stage 1 followed by stage 2. The extractor starts from `init` when
/// given, otherwise from a seeded initialization; the head is always fresh.
pub fn train_two_stage(
    config: &ExperimentConfig,
    data: &TrainSet,
    grouping: &Grouping,
    init: Option<&Model>,
) -> Result<TrainedModel> {
    config.validate()?;
    let mut model = Model::init(config.model.clone(), config.seed)?;
    if let Some(init) = init {
        if init.spec != model.spec {
            return Err(Error::Dimension("the initial extractor has a different model spec".into()));
        }
        let names: Vec<String> = model.params.iter().map(|(_, n, _)| n.to_string()).collect();
        for name in names.iter().filter(|n| is_extractor_param(n)) {
            let id = model.params.id(name).expect("own parameter");
            *model.params.get_mut(id) = init.params.by_name(name).expect("same spec").clone();
        }
    }
    let mut log = TrainingLog::default();
    let losses = config.variant.losses(config.loss);
    train_stage1(&mut model, data, grouping, &config.stage1, &losses, config.seed, &mut log)?;
    train_stage2(
        &mut model,
        data,
        &config.target,
        &config.stage2,
        config.freeze_extractor,
        config.seed,
        &mut log,
    )?;
    Ok(TrainedModel {
        model,
        log,
        provenance: provenance(config),
    })
}

//! Experiment variants end to end: baseline training, attribute selection,
//! the two training stages and evaluation on the test split.

mod config;
mod model;
mod train;

pub use config::{hex_digest, ExperimentConfig, StageConfig, Variant};
pub use model::{argmax_rows, is_extractor_param, predict, ConvBlock, Model, ModelSpec, Predictions};
pub use train::{
    train_bmt, train_joint, train_stage1, train_stage2, train_two_stage, EpochRecord, Grouping, ModelProvenance,
    Stage, TrainSet, TrainedModel, TrainingLog,
};


use crate::data::{LabData, SplitData};
use crate::error::{Error, Result};
use crate::metrics::{MetricsReport, ReportProvenance};
use crate::select::{build_disparity_set, select_attributes, SelectionOptions, SelectionResult};

/// Everything a variant run produces.
#[derive(Clone, Debug)]
pub struct VariantRun {
    pub trained: TrainedModel,
    pub selection: Option<SelectionResult>,
    /// Stage-1 composite classes; absent for the baseline.
    pub grouping: Option<Grouping>,
    pub report: MetricsReport,
}

/// Selection on the validation split using a trained baseline.
pub fn select_for(config: &ExperimentConfig, baseline: &TrainedModel, val: &SplitData, n: usize, gate: bool) -> Result<SelectionResult> {
    let view = val.table.training_view();
    let preds = predict(&baseline.model, &val.batch(&(0..val.len()).collect::<Vec<_>>()))?.classes;
    let set = build_disparity_set(&preds, &view, &config.target)?;
    select_attributes(
        &set,
        &view,
        SelectionOptions {
            n,
            alpha: config.alpha,
            independence_gate: gate,
        },
    )
}

/// Metrics over every protected attribute of the split's table.
pub fn evaluate(trained: &TrainedModel, split: &SplitData, split_name: &str) -> Result<MetricsReport> {
    let names = split.table.evaluation_view().protected_names();
    if names.is_empty() {
        return Err(Error::Config("the evaluation table flags no protected attribute".into()));
    }
    evaluate_groups(trained, split, split_name, &names)
}

/// Metrics with subgroups taken from the named columns of the evaluation
/// view; with two names the intersectional section is included.
pub fn evaluate_groups(
    trained: &TrainedModel,
    split: &SplitData,
    split_name: &str,
    protected_names: &[&str],
) -> Result<MetricsReport> {
    if protected_names.is_empty() || protected_names.len() > 2 {
        return Err(Error::Config(format!(
            "evaluation needs one or two grouping attributes, got {}",
            protected_names.len()
        )));
    }
    let eval = split.table.evaluation_view();
    let columns = protected_names
        .iter()
        .map(|n| eval.column(n))
        .collect::<Result<Vec<_>>>()?;
    let protected: Vec<(&str, &[u8])> = protected_names
        .iter()
        .copied()
        .zip(columns.iter().map(Vec::as_slice))
        .collect();
    let labels = eval.column(&trained.provenance.target)?;
    let preds = predict(&trained.model, &split.batch(&(0..split.len()).collect::<Vec<_>>()))?.classes;
    MetricsReport::evaluate(
        &trained.provenance.target,
        &preds,
        &labels,
        &protected,
        ReportProvenance {
            model_hash: trained.parameter_hash(),
            split: split_name.to_string(),
            variant: trained.provenance.variant.clone(),
            config_hash: trained.provenance.config_hash.clone(),
        },
    )
}

/// Writes parameters, model spec and provenance as one checkpoint.
pub fn save_model<W: std::io::Write>(trained: &TrainedModel, out: W) -> Result<()> {
    let meta = serde_json::json!({
        "model": trained.model.spec,
        "provenance": trained.provenance,
    });
    crate::checkpoint::write_checkpoint(out, &trained.model.params, meta)
}

/// Reads a checkpoint written by [`save_model`]. The training log is not
/// part of the checkpoint and comes back empty.
pub fn load_model<R: std::io::BufRead>(input: R) -> Result<TrainedModel> {
    let (params, meta) = crate::checkpoint::read_checkpoint(input)?;
    let spec: ModelSpec = serde_json::from_value(meta.get("model").cloned().unwrap_or_default())
        .map_err(|e| Error::Parse(format!("checkpoint model spec: {e}")))?;
    let provenance: ModelProvenance = serde_json::from_value(meta.get("provenance").cloned().unwrap_or_default())
        .map_err(|e| Error::Parse(format!("checkpoint provenance: {e}")))?;
    Ok(TrainedModel {
        model: Model::from_params(spec, params)?,
        log: TrainingLog::default(),
        provenance,
    })
}

fn check_baseline(config: &ExperimentConfig, b: &TrainedModel) -> Result<()> {
    if b.provenance.variant != Variant::Bmt.name() || b.provenance.target != config.target || b.provenance.seed != config.seed {
        return Err(Error::Config(format!(
            "the supplied baseline ({} on `{}`, seed {}) does not match target `{}`, seed {}",
            b.provenance.variant, b.provenance.target, b.provenance.seed, config.target, config.seed
        )));
    }
    Ok(())
}

/// The configuration the baseline of `config` is trained under.
pub fn baseline_config(config: &ExperimentConfig) -> ExperimentConfig {
    ExperimentConfig {
        variant: Variant::Bmt,
        ..config.clone()
    }
}

/// Runs the full recipe of `config.variant`. A baseline trained earlier
/// for the same target and seed may be passed in to skip retraining it.
pub fn run_variant(config: &ExperimentConfig, data: &LabData, baseline: Option<&TrainedModel>) -> Result<VariantRun> {
    config.validate()?;
    if let Some(b) = baseline {
        check_baseline(config, b)?;
    }
    let train = data.train.training_set();
    let mut selection = None;
    let mut grouping = None;
    let trained = match config.variant {
        Variant::Bmt => match baseline {
            Some(b) => b.clone(),
            None => train_bmt(config, &train)?,
        },
        Variant::Pad => {
            let eval = data.train.table.evaluation_view();
            if !eval.protected_names().contains(&config.protected.as_str()) {
                return Err(Error::Config(format!(
                    "PAD groups by protected labels but `{}` is not a protected attribute of the training table",
                    config.protected
                )));
            }
            let labels = eval.column(&config.protected)?;
            let g = Grouping::from_labels(train.view(), &config.target, &config.protected, &labels)?;
            let owned;
            let init = if config.stage1_from_baseline {
                match baseline {
                    Some(b) => Some(&b.model),
                    None => {
                        owned = train_bmt(&baseline_config(config), &train)?;
                        Some(&owned.model)
                    }
                }
            } else {
                None
            };
            let trained = train_two_stage(config, &train, &g, init)?;
            grouping = Some(g);
            trained
        }
        variant => {
            let n = config.selected_attributes().expect("selection variant");
            let owned;
            let base = match baseline {
                Some(b) => b,
                None => {
                    owned = train_bmt(&baseline_config(config), &train)?;
                    &owned
                }
            };
            let sel = select_for(config, base, &data.val, n, variant != Variant::NpadDependent)?;
            let g = Grouping::from_attributes(train.view(), &config.target, &sel.selected)?;
            let init = config.stage1_from_baseline.then_some(&base.model);
            let trained = train_two_stage(config, &train, &g, init)?;
            selection = Some(sel);
            grouping = Some(g);
            trained
        }
    };
    let mut report = evaluate(&trained, &data.test, "test")?;
    if let Some(sel) = &selection {
        report.warnings.extend(sel.warnings.iter().cloned());
        if !sel.independence_gate {
            report.warnings.push("independence gate disabled: selected attributes may be dependent".into());
        }
    }
    Ok(VariantRun {
        trained,
        selection,
        grouping,
        report,
    })
}

//! wasm-bindgen bindings for the static demo page in `www/`.

use npad_core::data::{render_sample, DatasetSpec, SampleRecord, SplitTag, CHANNELS};
use npad_core::metrics::{ProtectedReport, SubgroupConfusion};
use npad_core::select::{chi_square_independence, cramers_v};
use wasm_bindgen::prelude::*;

fn js_err(e: impl std::fmt::Display) -> JsError {
    JsError::new(&e.to_string())
}

/// Fairness report for two subgroups, each given as
/// `[tp_hat, fn_hat, fp_hat, tn_hat]`. Returns the report as JSON.
#[wasm_bindgen]
pub fn fairness_report(a: &[u32], b: &[u32]) -> Result<String, JsError> {
    report_json(a, b).map_err(js_err)
}

pub fn report_json(a: &[u32], b: &[u32]) -> Result<String, String> {
    let cells = |label: &str, c: &[u32]| -> Result<SubgroupConfusion, String> {
        let &[tp, fnn, fp, tn] = c else {
            return Err(format!("subgroup {label} needs 4 counts, got {}", c.len()));
        };
        Ok(SubgroupConfusion::from_cells(label, tp.into(), fnn.into(), fp.into(), tn.into()))
    };
    let report = ProtectedReport::from_confusions("group", vec![cells("a", a)?, cells("b", b)?])
        .map_err(|e| e.to_string())?;
    serde_json::to_string(&report).map_err(|e| e.to_string())
}

/// χ² statistic, p-value and Cramér's V of a 2×2 table `[n00, n01, n10, n11]`
/// as a 3-element array.
#[wasm_bindgen]
pub fn independence(table: &[u32]) -> Result<Vec<f64>, JsError> {
    independence_stats(table).map_err(js_err)
}

pub fn independence_stats(table: &[u32]) -> Result<Vec<f64>, String> {
    let &[a, b, c, d] = table else {
        return Err(format!("a 2×2 table has 4 counts, got {}", table.len()));
    };
    let t = [[a.into(), b.into()], [c.into(), d.into()]];
    let (stat, p) = chi_square_independence(t).map_err(|e| e.to_string())?;
    let v = cramers_v(t).map_err(|e| e.to_string())?;
    Ok(vec![stat, p, v])
}

/// RGBA pixels of one synthetic sample. `attributes` is target, protected,
/// then the cue bits (stripes, border, marker).
#[wasm_bindgen]
pub fn render_rgba(attributes: &[u8], size: usize, seed: u64) -> Result<Vec<u8>, JsError> {
    rgba(attributes, size, seed).map_err(js_err)
}

pub fn rgba(attributes: &[u8], size: usize, seed: u64) -> Result<Vec<u8>, String> {
    if !(8..=128).contains(&size) {
        return Err(format!("size must be in 8..=128, got {size}"));
    }
    if attributes.len() < 2 || attributes.iter().any(|&v| v > 1) {
        return Err("attributes must be 0/1 values, starting with target and protected".into());
    }
    let spec = DatasetSpec {
        image_size: [size, size],
        n_nonprotected: attributes.len() - 2,
        ..Default::default()
    };
    let record = SampleRecord {
        id: "demo".into(),
        split: SplitTag::Test,
        attributes: attributes.to_vec(),
        render_seed: seed,
    };
    let image = render_sample(&record, &spec);
    let plane = size * size;
    let d = image.data();
    let mut out = Vec::with_capacity(4 * plane);
    for i in 0..plane {
        for c in 0..CHANNELS {
            out.push((d[c * plane + i].clamp(0.0, 1.0) * 255.0).round() as u8);
        }
        out.push(255);
    }
    Ok(out)
}

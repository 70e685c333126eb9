//! Datasets: attribute tables, the synthetic generator and its renderer,
//! and stratified splitting.

mod render;
mod split;
mod synth;
mod table;

pub use render::{render_into, render_sample, render_split, to_ppm, CHANNELS};
pub use split::{split, stratified_split, Partition};
pub use synth::{
    generate_dataset, joint_cells, phi_coefficient, DatasetSpec, Manifest, RenderParams, SampleRecord, SplitSizes,
    SplitTag,
    CUE_NAMES, PROTECTED_NAME, TARGET_NAME,
};
pub use table::{load_attribute_table, read_attribute_table, AttributeTable, EvaluationView, TrainingView};

/// Rendered images of one split together with its attribute table.
#[derive(Clone, Debug)]
pub struct SplitData {
    /// `N×C×H×W`, row-major.
    pub images: Vec<f64>,
    pub image_shape: [usize; 3],
    pub table: AttributeTable,
}

impl SplitData {
    pub fn len(&self) -> usize {
        self.table.len()
    }

    pub fn is_empty(&self) -> bool {
        self.table.is_empty()
    }

    pub fn image_len(&self) -> usize {
        self.image_shape.iter().product()
    }

    /// Images at `indices` as an `n×C×H×W` tensor.
    pub fn batch(&self, indices: &[usize]) -> crate::Tensor {
        let per = self.image_len();
        let mut data = Vec::with_capacity(indices.len() * per);
        for &i in indices {
            data.extend_from_slice(&self.images[i * per..(i + 1) * per]);
        }
        let [c, h, w] = self.image_shape;
        crate::Tensor::new(vec![indices.len(), c, h, w], data).expect("batch shape")
    }
}

/// All three splits of a dataset, rendered.
#[derive(Clone, Debug)]
pub struct LabData {
    pub target: String,
    pub train: SplitData,
    pub val: SplitData,
    pub test: SplitData,
}

impl LabData {
    pub fn from_manifest(manifest: &Manifest) -> crate::Result<Self> {
        let load = |tag: SplitTag| -> crate::Result<SplitData> {
            let (images, [_, c, h, w]) = render_split(manifest, tag);
            Ok(SplitData {
                images,
                image_shape: [c, h, w],
                table: manifest.table(tag)?,
            })
        };
        Ok(Self {
            target: manifest.target.clone(),
            train: load(SplitTag::Train)?,
            val: load(SplitTag::Val)?,
            test: load(SplitTag::Test)?,
        })
    }
}

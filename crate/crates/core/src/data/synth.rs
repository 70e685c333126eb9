//! Synthetic biased datasets: a binary target (shape), a hidden protected
//! attribute (color) and observable non-protected cues whose correlation
//! with the protected attribute is controlled by φ-coefficients.

use rand::{Rng, RngCore, SeedableRng};
use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::table::AttributeTable;
use crate::error::{Error, Result};

pub const TARGET_NAME: &str = "shape";
pub const PROTECTED_NAME: &str = "color";
/// Visual cues available for non-protected attributes, in generation order.
pub const CUE_NAMES: [&str; 4] = ["stripes", "border", "marker", "tint"];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitSizes {
    pub train: usize,
    pub val: usize,
    pub test: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DatasetSpec {
    /// `[height, width]` in pixels.
    pub image_size: [usize; 2],
    pub samples: SplitSizes,
    /// φ between target and protected attribute on the train and val splits.
    pub target_protected_correlation: f64,
    /// φ between each non-protected cue and the protected attribute; missing
    /// entries are 0.
    pub nonprotected_protected_correlations: Vec<f64>,
    pub n_nonprotected: usize,
    /// P(target = 1) on the train and val splits.
    pub target_rate: f64,
    /// P(protected = 1), also the rate of every non-protected cue.
    pub protected_rate: f64,
    pub seed: u64,
    /// Balance the validation split across target × protected cells like
    /// the test split; otherwise it follows the train distribution.
    pub balanced_val: bool,
    pub render: RenderParams,
}

/// Rendering difficulty, in pixels of a 32×32 image (scaled with the
/// image size).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RenderParams {
    /// Range of the shape's half-size.
    pub shape_size: [f64; 2],
    /// Maximum offset of the shape centre from the image centre.
    pub jitter: f64,
    /// Amplitude of uniform per-pixel noise.
    pub noise: f64,
}

impl Default for RenderParams {
    fn default() -> Self {
        Self {
            shape_size: [3.5, 5.5],
            jitter: 6.0,
            noise: 0.3,
        }
    }
}

impl Default for DatasetSpec {
    fn default() -> Self {
        Self {
            image_size: [32, 32],
            samples: SplitSizes {
                train: 5000,
                val: 1000,
                test: 2000,
            },
            target_protected_correlation: 0.8,
            nonprotected_protected_correlations: vec![0.95, 0.0, 0.0],
            n_nonprotected: 3,
            target_rate: 0.45,
            protected_rate: 0.5,
            seed: 0,
            balanced_val: true,
            render: RenderParams::default(),
        }
    }
}

/// Cell probabilities of a 2×2 joint distribution with the given marginals
/// and φ-coefficient, indexed `[a][b]`.
pub fn joint_cells(rate_a: f64, rate_b: f64, phi: f64) -> [[f64; 2]; 2] {
    let cov = phi * (rate_a * (1.0 - rate_a) * rate_b * (1.0 - rate_b)).sqrt();
    let p11 = rate_a * rate_b + cov;
    let p10 = rate_a - p11;
    let p01 = rate_b - p11;
    let p00 = 1.0 - rate_a - rate_b + p11;
    [[p00, p01], [p10, p11]]
}

fn check_cells(cells: &[[f64; 2]; 2], a: &str, b: &str) -> Result<()> {
    for (i, row) in cells.iter().enumerate() {
        for (j, &p) in row.iter().enumerate() {
            if !(-1e-12..=1.0 + 1e-12).contains(&p) {
                return Err(Error::Spec(format!(
                    "cell probability P({a}={i}, {b}={j}) = {p:.6} is outside [0, 1]"
                )));
            }
        }
    }
    Ok(())
}

impl DatasetSpec {
    pub fn attribute_names(&self) -> Vec<String> {
        let mut names = vec![TARGET_NAME.to_string(), PROTECTED_NAME.to_string()];
        names.extend(CUE_NAMES[..self.n_nonprotected].iter().map(|s| s.to_string()));
        names
    }

    pub fn cue_correlation(&self, j: usize) -> f64 {
        self.nonprotected_protected_correlations.get(j).copied().unwrap_or(0.0)
    }

    pub fn validate(&self) -> Result<()> {
        let [h, w] = self.image_size;
        if h < 16 || w < 16 {
            return Err(Error::Spec(format!("image_size {h}×{w} is below the 16×16 minimum")));
        }
        let r = &self.render;
        if !(r.shape_size[0] > 0.0 && r.shape_size[0] <= r.shape_size[1] && r.shape_size[1] <= 14.0) {
            return Err(Error::Spec(format!(
                "render.shape_size {:?} must be an increasing range within (0, 14]",
                r.shape_size
            )));
        }
        if !(0.0..=8.0).contains(&r.jitter) {
            return Err(Error::Spec(format!("render.jitter = {} must lie in [0, 8]", r.jitter)));
        }
        if !(0.0..=1.0).contains(&r.noise) {
            return Err(Error::Spec(format!("render.noise = {} must lie in [0, 1]", r.noise)));
        }
        if self.n_nonprotected > CUE_NAMES.len() {
            return Err(Error::Spec(format!(
                "n_nonprotected = {} exceeds the {} available cues",
                self.n_nonprotected,
                CUE_NAMES.len()
            )));
        }
        if self.nonprotected_protected_correlations.len() > self.n_nonprotected {
            return Err(Error::Spec(format!(
                "nonprotected_protected_correlations has {} entries for n_nonprotected = {}",
                self.nonprotected_protected_correlations.len(),
                self.n_nonprotected
            )));
        }
        let corr = |name: String, v: f64| {
            if (-1.0..=1.0).contains(&v) {
                Ok(())
            } else {
                Err(Error::Spec(format!("{name} = {v} is outside [-1, 1]")))
            }
        };
        corr("target_protected_correlation".into(), self.target_protected_correlation)?;
        for (j, &c) in self.nonprotected_protected_correlations.iter().enumerate() {
            corr(format!("nonprotected_protected_correlations[{j}]"), c)?;
        }
        for (name, r) in [("target_rate", self.target_rate), ("protected_rate", self.protected_rate)] {
            if !(r > 0.0 && r < 1.0) {
                return Err(Error::Spec(format!("{name} = {r} must lie in (0, 1)")));
            }
        }
        check_cells(
            &joint_cells(self.target_rate, self.protected_rate, self.target_protected_correlation),
            TARGET_NAME,
            PROTECTED_NAME,
        )?;
        for j in 0..self.n_nonprotected {
            check_cells(
                &joint_cells(self.protected_rate, self.protected_rate, self.cue_correlation(j)),
                CUE_NAMES[j],
                PROTECTED_NAME,
            )?;
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitTag {
    Train,
    Val,
    Test,
}

impl SplitTag {
    pub const ALL: [SplitTag; 3] = [SplitTag::Train, SplitTag::Val, SplitTag::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            SplitTag::Train => "train",
            SplitTag::Val => "val",
            SplitTag::Test => "test",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub id: String,
    pub split: SplitTag,
    /// Values in [`Manifest::attribute_names`] order: target, protected,
    /// then the non-protected cues.
    pub attributes: Vec<u8>,
    pub render_seed: u64,
}

impl SampleRecord {
    pub fn target(&self) -> u8 {
        self.attributes[0]
    }

    pub fn protected(&self) -> u8 {
        self.attributes[1]
    }

    pub fn cues(&self) -> &[u8] {
        &self.attributes[2..]
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub spec: DatasetSpec,
    pub attribute_names: Vec<String>,
    pub target: String,
    pub protected: Vec<String>,
    pub records: Vec<SampleRecord>,
}

impl Manifest {
    pub fn records_in(&self, split: SplitTag) -> impl Iterator<Item = &SampleRecord> {
        self.records.iter().filter(move |r| r.split == split)
    }

    pub fn table(&self, split: SplitTag) -> Result<AttributeTable> {
        let (ids, rows): (Vec<_>, Vec<_>) = self
            .records_in(split)
            .map(|r| (r.id.clone(), r.attributes.clone()))
            .unzip();
        let protected: Vec<&str> = self.protected.iter().map(String::as_str).collect();
        AttributeTable::new(ids, self.attribute_names.clone(), rows, &protected)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let m: Manifest = serde_json::from_str(text)?;
        m.spec.validate()?;
        Ok(m)
    }
}

fn draw_cell(rng: &mut impl Rng, cells: &[[f64; 2]; 2]) -> (u8, u8) {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for (a, row) in cells.iter().enumerate() {
        for (b, &p) in row.iter().enumerate() {
            acc += p;
            if u < acc {
                return (a as u8, b as u8);
            }
        }
    }
    (1, 1)
}

/// Draws one cue bit given the protected bit.
fn draw_cue(rng: &mut impl Rng, cells: &[[f64; 2]; 2], protected: u8) -> u8 {
    let p = protected as usize;
    let marginal = cells[0][p] + cells[1][p];
    let u: f64 = rng.gen();
    u8::from(u * marginal >= cells[0][p])
}

pub fn generate_dataset(spec: &DatasetSpec) -> Result<Manifest> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let biased = joint_cells(spec.target_rate, spec.protected_rate, spec.target_protected_correlation);
    let cue_cells: Vec<_> = (0..spec.n_nonprotected)
        .map(|j| joint_cells(spec.protected_rate, spec.protected_rate, spec.cue_correlation(j)))
        .collect();

    let mut records = Vec::new();
    let mut emit = |rng: &mut ChaCha8Rng, split: SplitTag, index: usize, target: u8, protected: u8| {
        let mut attributes = vec![target, protected];
        for cells in &cue_cells {
            attributes.push(draw_cue(rng, cells, protected));
        }
        records.push(SampleRecord {
            id: format!("{}-{index:06}", split.as_str()),
            split,
            attributes,
            render_seed: rng.next_u64(),
        });
    };

    let mut biased_split = |rng: &mut ChaCha8Rng, split: SplitTag, n: usize| {
        for i in 0..n {
            let (t, p) = draw_cell(rng, &biased);
            emit(rng, split, i, t, p);
        }
    };
    biased_split(&mut rng, SplitTag::Train, spec.samples.train);
    if !spec.balanced_val {
        biased_split(&mut rng, SplitTag::Val, spec.samples.val);
    }
    // balanced splits: every target × protected cell gets n/4 samples, the
    // remainder going to the first cells
    let mut balanced = |rng: &mut ChaCha8Rng, split: SplitTag, n: usize| {
        let mut cells: Vec<(u8, u8)> = (0..n).map(|i| ((i % 4 / 2) as u8, (i % 2) as u8)).collect();
        cells.shuffle(rng);
        for (i, (t, p)) in cells.into_iter().enumerate() {
            emit(rng, split, i, t, p);
        }
    };
    if spec.balanced_val {
        balanced(&mut rng, SplitTag::Val, spec.samples.val);
    }
    balanced(&mut rng, SplitTag::Test, spec.samples.test);

    Ok(Manifest {
        spec: spec.clone(),
        attribute_names: spec.attribute_names(),
        target: TARGET_NAME.to_string(),
        protected: vec![PROTECTED_NAME.to_string()],
        records,
    })
}

/// Pearson correlation of two binary columns; 0 when either is constant.
pub fn phi_coefficient(a: &[u8], b: &[u8]) -> f64 {
    let mut n = [[0f64; 2]; 2];
    for (&x, &y) in a.iter().zip(b) {
        n[x as usize][y as usize] += 1.0;
    }
    let (a1, a0) = (n[1][0] + n[1][1], n[0][0] + n[0][1]);
    let (b1, b0) = (n[0][1] + n[1][1], n[0][0] + n[1][0]);
    let denom = (a1 * a0 * b1 * b0).sqrt();
    if denom == 0.0 {
        return 0.0;
    }
    (n[1][1] * n[0][0] - n[1][0] * n[0][1]) / denom
}

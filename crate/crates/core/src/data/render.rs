//! Deterministic rendering of synthetic samples: the target picks the shape
//! (square or circle), the protected bit the base color (red or blue), and
//! each non-protected cue a visual detail (stripes, border thickness, corner
//! marker, background tint). Position, size and pixel noise come from the
//! record's render seed.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::synth::{DatasetSpec, Manifest, SampleRecord, SplitTag};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const CHANNELS: usize = 3;

const BACKGROUND: [f64; 3] = [0.35, 0.35, 0.35];
const BASE_COLORS: [[f64; 3]; 2] = [[0.85, 0.3, 0.2], [0.2, 0.3, 0.85]];
const BORDER: [f64; 3] = [0.95, 0.95, 0.95];
const STRIPE_DIM: f64 = 0.4;

/// Renders a `3×H×W` image.
pub fn render_sample(record: &SampleRecord, spec: &DatasetSpec) -> Tensor {
    let [h, w] = spec.image_size;
    let mut data = vec![0.0; CHANNELS * h * w];
    render_into(record, spec, &mut data);
    Tensor::new(vec![CHANNELS, h, w], data).expect("image shape")
}

pub fn render_into(record: &SampleRecord, spec: &DatasetSpec, out: &mut [f64]) {
    let [h, w] = spec.image_size;
    let plane = h * w;
    debug_assert_eq!(out.len(), CHANNELS * plane);
    let cue = |j: usize| record.cues().get(j).copied().unwrap_or(0) == 1;
    let (stripes, thick, marker, tint) = (cue(0), cue(1), cue(2), cue(3));
    let color = BASE_COLORS[record.protected() as usize];
    let square = record.target() == 0;

    let mut rng = ChaCha8Rng::seed_from_u64(record.render_seed);
    let p = &spec.render;
    let unit = h.min(w) as f64 / 32.0;
    let cx = w as f64 / 2.0 + rng.gen_range(-p.jitter..=p.jitter) * unit;
    let cy = h as f64 / 2.0 + rng.gen_range(-p.jitter..=p.jitter) * unit;
    let half = rng.gen_range(p.shape_size[0]..=p.shape_size[1]) * unit;
    let border = if thick { 2.0 } else { 1.0 } * unit;

    for y in 0..h {
        for x in 0..w {
            let dx = x as f64 + 0.5 - cx;
            let dy = y as f64 + 0.5 - cy;
            // distance inside the shape's edge; negative outside
            let inset = if square {
                half - dx.abs().max(dy.abs())
            } else {
                half - (dx * dx + dy * dy).sqrt()
            };
            let mut px = BACKGROUND;
            if tint {
                px[1] += 0.15;
            }
            if inset >= 0.0 {
                px = if stripes && (y / 2) % 2 == 0 {
                    color.map(|c| c * STRIPE_DIM)
                } else {
                    color
                };
            } else if inset >= -border {
                px = BORDER;
            } else if marker && (1..4).contains(&x) && (1..4).contains(&y) {
                px = [0.9; 3];
            }
            for (c, v) in px.iter().enumerate() {
                out[c * plane + y * w + x] = v + noise(&mut rng, p.noise);
            }
        }
    }
}

fn noise(rng: &mut ChaCha8Rng, amplitude: f64) -> f64 {
    if amplitude > 0.0 {
        rng.gen_range(-amplitude..=amplitude)
    } else {
        0.0
    }
}

/// Renders every record of a split into one `N×3×H×W` buffer, in manifest
/// order.
pub fn render_split(manifest: &Manifest, split: SplitTag) -> (Vec<f64>, [usize; 4]) {
    let [h, w] = manifest.spec.image_size;
    let per = CHANNELS * h * w;
    let records: Vec<&SampleRecord> = manifest.records_in(split).collect();
    let mut data = vec![0.0; records.len() * per];
    for (r, chunk) in records.iter().zip(data.chunks_mut(per)) {
        render_into(r, &manifest.spec, chunk);
    }
    (data, [records.len(), CHANNELS, h, w])
}

/// Binary PPM (P6) encoding of a `3×H×W` image with values clamped to
/// `[0, 1]`.
pub fn to_ppm(image: &Tensor) -> Result<Vec<u8>> {
    let &[3, h, w] = image.shape() else {
        return Err(Error::Dimension(format!("PPM export needs 3×H×W, found {:?}", image.shape())));
    };
    let plane = h * w;
    let mut out = format!("P6\n{w} {h}\n255\n").into_bytes();
    let d = image.data();
    for i in 0..plane {
        for c in 0..3 {
            out.push((d[c * plane + i].clamp(0.0, 1.0) * 255.0).round() as u8);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(target: u8, protected: u8, cues: &[u8], seed: u64) -> SampleRecord {
        let mut attributes = vec![target, protected];
        attributes.extend_from_slice(cues);
        SampleRecord {
            id: "s".into(),
            split: SplitTag::Train,
            attributes,
            render_seed: seed,
        }
    }

    #[test]
    fn rendering_is_deterministic() {
        let spec = DatasetSpec::default();
        let r = record(1, 0, &[1, 0, 1], 42);
        assert_eq!(render_sample(&r, &spec), render_sample(&r, &spec));
    }

    #[test]
    fn protected_bit_changes_only_color_channels() {
        let spec = DatasetSpec::default();
        let a = render_sample(&record(0, 0, &[1, 1, 0], 7), &spec);
        let b = render_sample(&record(0, 1, &[1, 1, 0], 7), &spec);
        let plane = 32 * 32;
        // green is shared by both base colors
        assert_eq!(a.data()[plane..2 * plane], b.data()[plane..2 * plane]);
        let differing = (0..plane)
            .filter(|&i| a.data()[i] != b.data()[i] || a.data()[2 * plane + i] != b.data()[2 * plane + i])
            .count();
        assert!(differing > 50, "{differing}");
    }

    #[test]
    fn ppm_header_and_size() {
        let spec = DatasetSpec::default();
        let img = render_sample(&record(1, 1, &[0, 0, 0], 3), &spec);
        let ppm = to_ppm(&img).unwrap();
        assert!(ppm.starts_with(b"P6\n32 32\n255\n"));
        assert_eq!(ppm.len(), 13 + 32 * 32 * 3);
    }
}

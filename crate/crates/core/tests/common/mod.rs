//! Independent oracles and random instance builders shared by the
//! integration tests and the acceptance harness.
#![allow(dead_code)]

use npad_core::losses::{dacl_step, frl_with_grad, ClusterState, FilterBank};
use npad_core::data::{AttributeTable, TrainingView};
use npad_core::select::{chi_square_independence, contingency, cramers_v};
use npad_core::gradcheck::grad_check;
use npad_core::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const FD_EPS: f64 = 1e-5;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f64) -> Vec<Vec<f64>> {
    (0..rows)
        .map(|_| (0..cols).map(|_| rng.gen_range(-scale..scale)).collect())
        .collect()
}

pub fn tensor(rows: &[Vec<f64>]) -> Tensor {
    Tensor::from_rows(rows).unwrap()
}

/// Class ids for a batch of `rows` covering `classes` classes, each at least
/// twice, in shuffled order.
pub fn class_ids(rng: &mut ChaCha8Rng, rows: usize, classes: usize) -> Vec<usize> {
    let mut ids: Vec<usize> = (0..rows).map(|i| if i < 2 * classes { i % classes } else { rng.gen_range(0..classes) }).collect();
    for i in (1..ids.len()).rev() {
        ids.swap(i, rng.gen_range(0..=i));
    }
    ids
}

/// A DACL instance: a prior state from earlier batches plus a current batch.
pub struct DaclCase {
    pub prior: ClusterState,
    pub features: Vec<Vec<f64>>,
    pub ids: Vec<usize>,
}

pub fn dacl_case(seed: u64) -> DaclCase {
    let mut r = rng(seed);
    let dim = r.gen_range(2..7);
    let classes = r.gen_range(2..5);
    let mut prior = ClusterState::new();
    for _ in 0..r.gen_range(0..3) {
        let rows = r.gen_range(2 * classes..14);
        let f = random_matrix(&mut r, rows, dim, 2.0);
        let ids = class_ids(&mut r, rows, classes);
        prior = dacl_step(&prior, &tensor(&f), &ids, 1e-8).unwrap().state;
    }
    let rows = r.gen_range(2 * classes..16);
    let features = random_matrix(&mut r, rows, dim, 2.0);
    let ids = class_ids(&mut r, rows, classes);
    DaclCase { prior, features, ids }
}

/// Max relative error of the DACL gradient with respect to the batch
/// features, the prior state held constant.
pub fn dacl_grad_error(case: &DaclCase) -> f64 {
    let dim = case.features[0].len();
    let flat: Vec<f64> = case.features.concat();
    grad_check(&flat, FD_EPS, |x| {
        let rows: Vec<Vec<f64>> = x.chunks(dim).map(<[f64]>::to_vec).collect();
        let step = dacl_step(&case.prior, &tensor(&rows), &case.ids, 1e-8)?;
        Ok((step.loss.expect("two classes active"), step.grad.data().to_vec()))
    })
    .unwrap()
}

pub struct FrlCase {
    pub shape: Vec<usize>,
    pub weights: Vec<f64>,
    pub top_k: usize,
}

pub fn frl_case(seed: u64) -> FrlCase {
    let mut r = rng(seed ^ 0x5eed);
    let filters = r.gen_range(1..7);
    let channels = r.gen_range(2..5);
    let k = [1, 3][r.gen_range(0..2)];
    let shape = vec![filters, channels, k, k];
    let n: usize = shape.iter().product();
    let weights = (0..n).map(|_| r.gen_range(-1.0..1.0)).collect();
    FrlCase {
        shape,
        weights,
        top_k: r.gen_range(1..=filters),
    }
}

pub fn frl_grad_error(case: &FrlCase) -> f64 {
    grad_check(&case.weights, FD_EPS, |x| {
        let bank = FilterBank::new(Tensor::new(case.shape.clone(), x.to_vec())?)?;
        let (loss, grad) = frl_with_grad(&bank, case.top_k)?;
        Ok((loss, grad.data().to_vec()))
    })
    .unwrap()
}

/// Brute-force pooled statistics of all rows seen so far: the mean vector,
/// and the population std of every entry about the mean of that vector.
pub fn pooled(rows: &[Vec<f64>]) -> (Vec<f64>, f64) {
    let dim = rows[0].len();
    let n = rows.len() as f64;
    let mut mean = vec![0.0; dim];
    for r in rows {
        for (m, v) in mean.iter_mut().zip(r) {
            *m += v / n;
        }
    }
    let m = mean.iter().sum::<f64>() / dim as f64;
    let var = rows.iter().flatten().map(|v| (v - m) * (v - m)).sum::<f64>() / (n * dim as f64);
    (mean, var.sqrt())
}

/// Largest deviation between the merged state and brute-force pooling over
/// a random sequence of batches.
pub fn moving_stats_error(seed: u64) -> f64 {
    let mut r = rng(seed.wrapping_mul(7919));
    let dim = r.gen_range(1..6);
    let classes = r.gen_range(1..4);
    let mut seen: Vec<Vec<Vec<f64>>> = vec![Vec::new(); classes];
    let mut state = ClusterState::new();
    let mut worst = 0.0f64;
    for _ in 0..r.gen_range(1..10) {
        let rows = r.gen_range(1..12);
        let shift = r.gen_range(-3.0..3.0);
        let f: Vec<Vec<f64>> = random_matrix(&mut r, rows, dim, 1.5)
            .into_iter()
            .map(|row| row.into_iter().map(|v| v + shift).collect())
            .collect();
        let ids: Vec<usize> = (0..rows).map(|_| r.gen_range(0..classes)).collect();
        state.merge(&npad_core::losses::batch_summarize(&tensor(&f), &ids).unwrap());
        for (row, &c) in f.iter().zip(&ids) {
            seen[c].push(row.clone());
        }
        for (c, rows) in seen.iter().enumerate() {
            if rows.is_empty() {
                continue;
            }
            let (mean, std) = pooled(rows);
            let got = &state.classes[&c];
            assert_eq!(got.count, rows.len());
            for (a, b) in got.mean.iter().zip(&mean) {
                worst = worst.max((a - b).abs());
            }
            worst = worst.max((got.std - std).abs());
        }
    }
    worst
}

/// erfc by the all-positive series `erf(z) = 2/√π · e^{−z²} Σ 2ⁿ z^{2n+1} / (2n+1)!!`
/// for z ≤ 6 and the asymptotic expansion beyond.
pub fn erfc(z: f64) -> f64 {
    assert!(z >= 0.0);
    let pi = std::f64::consts::PI;
    if z > 6.0 {
        let z2 = z * z;
        let series = 1.0 - 1.0 / (2.0 * z2) + 3.0 / (4.0 * z2 * z2) - 15.0 / (8.0 * z2 * z2 * z2);
        return (-z2).exp() / (z * pi.sqrt()) * series;
    }
    let mut term = z;
    let mut sum = z;
    let mut n = 0.0;
    while term > sum * 1e-18 {
        n += 1.0;
        term *= 2.0 * z * z / (2.0 * n + 1.0);
        sum += term;
    }
    1.0 - 2.0 / pi.sqrt() * (-z * z).exp() * sum
}

/// Upper tail of χ² with one degree of freedom.
pub fn chi2_sf_df1(x: f64) -> f64 {
    erfc((x / 2.0).sqrt())
}

/// `N(ad − bc)² / ((a+b)(c+d)(a+c)(b+d))`.
pub fn closed_form_chi2(t: [[u64; 2]; 2]) -> f64 {
    let [[a, b], [c, d]] = t.map(|r| r.map(|v| v as f64));
    let n = a + b + c + d;
    n * (a * d - b * c).powi(2) / ((a + b) * (c + d) * (a + c) * (b + d))
}

pub fn random_table(r: &mut ChaCha8Rng) -> [[u64; 2]; 2] {
    loop {
        let max = [5, 50, 500, 5000][r.gen_range(0..4)];
        let t = [[r.gen_range(0..max), r.gen_range(0..max)], [r.gen_range(0..max), r.gen_range(0..max)]];
        let [[a, b], [c, d]] = t;
        if a + b > 0 && c + d > 0 && a + c > 0 && b + d > 0 {
            return t;
        }
    }
}

/// Largest (χ², V, p) deviations over `count` random tables.
pub fn independence_errors(count: usize, seed: u64) -> (f64, f64, f64) {
    let mut r = rng(seed);
    let (mut e_stat, mut e_v, mut e_p) = (0.0f64, 0.0f64, 0.0f64);
    for _ in 0..count {
        let t = random_table(&mut r);
        let (stat, p) = chi_square_independence(t).unwrap();
        let expected = closed_form_chi2(t);
        e_stat = e_stat.max((stat - expected).abs());
        let n = t.iter().flatten().sum::<u64>() as f64;
        e_v = e_v.max((cramers_v(t).unwrap() - (expected / n).sqrt()).abs());
        e_p = e_p.max((p - chi2_sf_df1(expected)).abs());
    }
    (e_stat, e_v, e_p)
}

pub const ALPHA: f64 = 0.05;

pub fn view(columns: &[(&str, Vec<u8>)], protected: &[&str]) -> TrainingView {
    let n = columns[0].1.len();
    let ids = (0..n).map(|i| format!("s{i}")).collect();
    let names = columns.iter().map(|(n, _)| n.to_string()).collect();
    let rows = (0..n).map(|i| columns.iter().map(|(_, c)| c[i]).collect()).collect();
    AttributeTable::new(ids, names, rows, protected).unwrap().training_view()
}

/// Disparity by direct counting: half the gap between the accuracies on the
/// two classes of the attribute.
pub fn oracle_disparity(preds: &[u8], labels: &[u8], attr: &[u8]) -> f64 {
    let acc = |class: u8| {
        let idx: Vec<usize> = (0..preds.len()).filter(|&i| attr[i] == class).collect();
        idx.iter().filter(|&&i| preds[i] == labels[i]).count() as f64 / idx.len() as f64
    };
    (acc(0) - acc(1)).abs() / 2.0
}

pub fn oracle_p(a: &[u8], b: &[u8]) -> Option<f64> {
    let t = contingency(a, b);
    let [[x, y], [z, w]] = t;
    (x + y > 0 && z + w > 0 && x + z > 0 && y + w > 0).then(|| chi2_sf_df1(closed_form_chi2(t)))
}

/// Greedy selection recomputed from oracle disparities and oracle p-values.
pub fn oracle_selection(cols: &[(&str, Vec<u8>)], preds: &[u8], target: &str, n: usize, gate: bool) -> Vec<String> {
    let labels = &cols.iter().find(|(name, _)| *name == target).unwrap().1;
    let mut ranked: Vec<(&str, f64, &Vec<u8>)> = cols
        .iter()
        .filter(|(name, _)| *name != target)
        .map(|(name, c)| (*name, oracle_disparity(preds, labels, c), c))
        .collect();
    ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(b.0)));
    let mut chosen: Vec<(&str, &Vec<u8>)> = vec![(ranked[0].0, ranked[0].2)];
    for &(name, _, col) in &ranked[1..] {
        if chosen.len() == n {
            break;
        }
        if !gate || chosen.iter().all(|(_, c)| oracle_p(col, c).is_some_and(|p| p > ALPHA)) {
            chosen.push((name, col));
        }
    }
    chosen.into_iter().map(|(n, _)| n.to_string()).collect()
}

/// Errors concentrated on `a = 1`; `b` copies `a` with a few flips, `c` and
/// `d` are exactly balanced against `a`.
pub fn fixture() -> (Vec<(&'static str, Vec<u8>)>, Vec<u8>) {
    let n = 400;
    let a: Vec<u8> = (0..n).map(|i| (i % 2) as u8).collect();
    let b: Vec<u8> = (0..n).map(|i| (i % 2) as u8 ^ u8::from(i % 20 == 0)).collect();
    let c: Vec<u8> = (0..n).map(|i| ((i / 2) % 2) as u8).collect();
    let d: Vec<u8> = (0..n).map(|i| ((i / 4) % 2) as u8).collect();
    let y: Vec<u8> = (0..n).map(|i| ((i / 8) % 2) as u8).collect();
    let preds = (0..n)
        .map(|i| {
            let wrong = (a[i] == 1 && (i / 8) % 5 < 2) || (c[i] == 1 && i % 7 == 0);
            y[i] ^ u8::from(wrong)
        })
        .collect();
    (vec![("y", y), ("a", a), ("b", b), ("c", c), ("d", d)], preds)
}

pub fn random_fixture(seed: u64) -> (Vec<(String, Vec<u8>)>, Vec<u8>) {
    let mut r = rng(seed);
    let n = r.gen_range(60..300);
    let k = r.gen_range(2..6);
    let y: Vec<u8> = (0..n).map(|_| r.gen_range(0..2)).collect();
    let mut cols = vec![("y".to_string(), y.clone())];
    for j in 0..k {
        // some columns copy an earlier one with noise so the gate has work to do
        let col: Vec<u8> = if j > 0 && r.gen_bool(0.5) {
            let src = cols[r.gen_range(1..cols.len())].1.clone();
            src.into_iter().map(|v| v ^ u8::from(r.gen_bool(0.1))).collect()
        } else {
            (0..n).map(|_| r.gen_range(0..2)).collect()
        };
        cols.push((format!("x{j}"), col));
    }
    for col in cols.iter_mut().skip(1) {
        // both classes present in every column
        col.1[0] = 0;
        col.1[1] = 1;
    }
    let bias: Vec<f64> = (0..k).map(|_| r.gen_range(0.0..0.4)).collect();
    let preds = (0..n)
        .map(|i| {
            let p_wrong: f64 = (0..k).map(|j| bias[j] * cols[j + 1].1[i] as f64).sum::<f64>() / k as f64;
            y[i] ^ u8::from(r.gen_bool(p_wrong.min(0.9)))
        })
        .collect();
    (cols, preds)
}

/// The table with every protected column replaced by random bits.
pub fn scramble(table: &AttributeTable, seed: u64) -> AttributeTable {
    let mut r = rng(seed);
    let eval = table.evaluation_view();
    let protected = eval.protected_names();
    let names = table.attribute_names().to_vec();
    let columns: Vec<Vec<u8>> = names
        .iter()
        .map(|n| {
            if protected.contains(&n.as_str()) {
                (0..table.len()).map(|_| r.gen_range(0..2)).collect()
            } else {
                eval.column(n).unwrap()
            }
        })
        .collect();
    let rows = (0..table.len()).map(|i| columns.iter().map(|c| c[i]).collect()).collect();
    AttributeTable::new(table.sample_ids().to_vec(), names, rows, &protected).unwrap()
}

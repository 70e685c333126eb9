use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::synth::{Manifest, SplitTag};
use crate::error::{Error, Result};

/// Indices of each partition.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Partition {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

/// Splits item indices into train/val/test with the given fractions,
/// stratified by `strata[i]`. Each stratum contributes `round(f·n)` items to
/// train and val and the rest to test.
pub fn stratified_split(strata: &[usize], fractions: [f64; 3], seed: u64) -> Result<Partition> {
    if fractions.iter().any(|f| !(*f >= 0.0)) {
        return Err(Error::Config(format!("split fractions {fractions:?} must be non-negative")));
    }
    let total: f64 = fractions.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(Error::Config(format!("split fractions sum to {total}, expected 1")));
    }
    let mut groups: std::collections::BTreeMap<usize, Vec<usize>> = Default::default();
    for (i, &s) in strata.iter().enumerate() {
        groups.entry(s).or_default().push(i);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Partition::default();
    for (_, mut members) in groups {
        members.shuffle(&mut rng);
        let n = members.len();
        let n_train = ((fractions[0] * n as f64).round() as usize).min(n);
        let n_val = ((fractions[1] * n as f64).round() as usize).min(n - n_train);
        out.train.extend_from_slice(&members[..n_train]);
        out.val.extend_from_slice(&members[n_train..n_train + n_val]);
        out.test.extend_from_slice(&members[n_train + n_val..]);
    }
    out.train.sort_unstable();
    out.val.sort_unstable();
    out.test.sort_unstable();
    Ok(out)
}

/// Re-tags every record of the manifest, stratifying by target × protected.
pub fn split(manifest: &Manifest, fractions: [f64; 3], seed: u64) -> Result<Manifest> {
    let strata: Vec<usize> = manifest
        .records
        .iter()
        .map(|r| 2 * r.target() as usize + r.protected() as usize)
        .collect();
    let part = stratified_split(&strata, fractions, seed)?;
    let mut out = manifest.clone();
    for (indices, tag) in [(&part.train, SplitTag::Train), (&part.val, SplitTag::Val), (&part.test, SplitTag::Test)] {
        for &i in indices {
            out.records[i].split = tag;
        }
    }
    Ok(out)
}

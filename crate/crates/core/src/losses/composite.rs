use std::collections::BTreeSet;

/// Packs the target bit and `n` selected attribute bits into one class id in
/// `[0, 2^(n+1))`: the target is the most significant bit, followed by the
/// selected bits in selection order.
pub fn composite_class_id(target: u8, bits: &[u8]) -> usize {
    debug_assert!(target <= 1 && bits.iter().all(|&b| b <= 1));
    let n = bits.len();
    let mut id = (target as usize) << n;
    for (j, &b) in bits.iter().enumerate() {
        id |= (b as usize) << (n - 1 - j);
    }
    id
}

/// Inverse of [`composite_class_id`] for `n` selected bits.
pub fn composite_bits(id: usize, n: usize) -> (u8, Vec<u8>) {
    let target = ((id >> n) & 1) as u8;
    let bits = (0..n).map(|j| ((id >> (n - 1 - j)) & 1) as u8).collect();
    (target, bits)
}

/// The composite classes that actually occur.
pub fn active_classes(ids: &[usize]) -> BTreeSet<usize> {
    ids.iter().copied().collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn place_values() {
        assert_eq!(composite_class_id(1, &[]), 1);
        assert_eq!(composite_class_id(1, &[0, 1]), 5);
        assert_eq!(composite_class_id(0, &[1, 1]), 3);
    }

    #[test]
    fn only_present_combinations_are_active() {
        let rows = [(0, 0), (0, 1), (1, 1), (1, 1), (0, 0)];
        let ids: Vec<_> = rows.iter().map(|&(t, b)| composite_class_id(t, &[b])).collect();
        assert_eq!(active_classes(&ids).len(), 3);
    }

    proptest! {
        #[test]
        fn inverse_recovers_bits(target in 0u8..2, bits in proptest::collection::vec(0u8..2, 0..6)) {
            let id = composite_class_id(target, &bits);
            prop_assert!(id < 1 << (bits.len() + 1));
            prop_assert_eq!(composite_bits(id, bits.len()), (target, bits));
        }
    }
}

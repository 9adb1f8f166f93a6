//! Seeded stratified train/validation split.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::model::LabeledEmbeddingSet;

/// Per class, `ceil(fraction · n_c)` records (at least one, at most `n_c − 1`)
/// go to validation. Returns sorted `(train, val)` index lists.
pub fn stratified_split(
    data: &LabeledEmbeddingSet,
    fraction: f64,
    seed: u64,
) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::Config(format!(
            "validation fraction must lie in (0, 1), got {fraction}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut train = Vec::with_capacity(data.len());
    let mut val = Vec::new();
    for c in 0..data.num_classes() {
        let mut idx: Vec<usize> = data
            .records()
            .iter()
            .enumerate()
            .filter(|(_, r)| r.label == c)
            .map(|(i, _)| i)
            .collect();
        let n = idx.len();
        if n < 2 {
            return Err(Error::Config(format!(
                "class {} has {n} records; a split needs at least 2",
                c + 1
            )));
        }
        let n_val = ((fraction * n as f64).ceil() as usize).clamp(1, n - 1);
        idx.shuffle(&mut rng);
        val.extend_from_slice(&idx[..n_val]);
        train.extend_from_slice(&idx[n_val..]);
    }
    train.sort_unstable();
    val.sort_unstable();
    Ok((train, val))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{normalize, EmbeddingRecord};

    fn data(sizes: &[usize]) -> LabeledEmbeddingSet {
        let mut records = Vec::new();
        for (c, &n) in sizes.iter().enumerate() {
            for i in 0..n {
                records.push(EmbeddingRecord {
                    id: format!("c{c}-{i}"),
                    label: c,
                    logits: vec![0.0; sizes.len()],
                    embedding: normalize(&[1.0, i as f64]).unwrap(),
                });
            }
        }
        LabeledEmbeddingSet::new(records, sizes.len(), 2).unwrap()
    }

    #[test]
    fn ceil_rule_and_floor() {
        let d = data(&[20, 5, 2]);
        let (train, val) = stratified_split(&d, 0.1, 4).unwrap();
        let count = |idx: &[usize], c: usize| idx.iter().filter(|&&i| d.records()[i].label == c).count();
        assert_eq!([count(&val, 0), count(&val, 1), count(&val, 2)], [2, 1, 1]);
        assert_eq!(train.len() + val.len(), d.len());
        assert_eq!(stratified_split(&d, 0.1, 4).unwrap(), (train, val));
    }

    #[test]
    fn singleton_class_is_rejected() {
        assert!(matches!(stratified_split(&data(&[3, 1]), 0.1, 0), Err(Error::Config(_))));
    }
}

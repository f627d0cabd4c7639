use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::AnnotatedSentence;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Splits {
    pub train: Vec<AnnotatedSentence>,
    pub dev: Vec<AnnotatedSentence>,
    pub test: Vec<AnnotatedSentence>,
}

/// Seeded train/dev/test partition. Dev and test sizes are floored; train
/// takes the remainder. Each part keeps the corpus' original relative order.
pub fn split_corpus(
    corpus: &[AnnotatedSentence],
    ratios: (f64, f64, f64),
    seed: u64,
) -> Result<Splits> {
    let (train, dev, test) = ratios;
    if [train, dev, test]
        .iter()
        .any(|r| !r.is_finite() || *r < 0.0)
    {
        return Err(Error::InvalidInput(format!(
            "split ratios must be non-negative: {ratios:?}"
        )));
    }
    if ((train + dev + test) - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidInput(format!(
            "split ratios must sum to 1: {ratios:?}"
        )));
    }
    let n = corpus.len();
    // The epsilon absorbs representation error such as 0.29 * 100 = 28.999999999999996.
    let part = |r: f64| ((r * n as f64) + 1e-9).floor() as usize;
    let n_dev = part(dev);
    let n_test = part(test);
    let n_train = n.saturating_sub(n_dev + n_test);
    if n > 0 {
        for (name, size) in [("train", n_train), ("dev", n_dev), ("test", n_test)] {
            if size == 0 {
                return Err(Error::InvalidInput(format!(
                    "ratios {ratios:?} leave the {name} part empty for {n} sentences"
                )));
            }
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let take = |idx: &[usize]| {
        let mut idx = idx.to_vec();
        idx.sort_unstable();
        idx.into_iter()
            .map(|i| corpus[i].clone())
            .collect::<Vec<_>>()
    };
    Ok(Splits {
        dev: take(&order[..n_dev]),
        test: take(&order[n_dev..n_dev + n_test]),
        train: take(&order[n_dev + n_test..]),
    })
}

//! Target datasets: MNIST when its IDX files are present, otherwise
//! synthetic stroke digits in the same format.

use std::path::Path;

use crate::digits::synthetic_digits;
use crate::error::Result;
use crate::mnist::{has_split, load_mnist, to_targets, Split};
use crate::target::TargetImage;

/// Disjoint target pools for duels and for held-out error measurement.
#[derive(Clone, Debug)]
pub struct TargetPools {
    pub duel: Vec<TargetImage>,
    pub heldout: Vec<TargetImage>,
}

const SYNTHETIC_TEST_SEED: u64 = 0x7465_7374;
const SYNTHETIC_TRAIN_SEED: u64 = 0x0074_726e;

fn split_targets(dir: Option<&Path>, split: Split, n: usize, size: (usize, usize), seed: u64) -> Result<Vec<TargetImage>> {
    if let Some(dir) = dir.filter(|d| has_split(d, split)) {
        let mut t = load_mnist(dir, split, Some(size))?;
        if t.len() >= n {
            t.truncate(n);
            return Ok(t);
        }
        tracing::warn!(have = t.len(), want = n, "dataset split is short; using synthetic digits");
    }
    let (images, labels) = synthetic_digits(n, seed);
    to_targets(&images, &labels, Some(size))
}

/// The first `n_duel` test-split targets for duels, the next `n_heldout`
/// for held-out measurement.
pub fn load_target_pools(dir: Option<&Path>, size: (usize, usize), n_duel: usize, n_heldout: usize) -> Result<TargetPools> {
    let mut all = split_targets(dir, Split::Test, n_duel + n_heldout, size, SYNTHETIC_TEST_SEED)?;
    let heldout = all.split_off(n_duel);
    Ok(TargetPools { duel: all, heldout })
}

/// Up to `n` training-split targets.
pub fn load_training_targets(dir: Option<&Path>, size: (usize, usize), n: usize) -> Result<Vec<TargetImage>> {
    split_targets(dir, Split::Train, n, size, SYNTHETIC_TRAIN_SEED)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mnist::save_split;

    #[test]
    fn synthetic_pools_are_disjoint_and_sized() {
        let p = load_target_pools(None, (16, 16), 20, 32).unwrap();
        assert_eq!((p.duel.len(), p.heldout.len()), (20, 32));
        assert!(p.duel.iter().all(|t| t.height == 16 && t.width == 16));
        assert!(p.heldout.iter().all(|h| !p.duel.contains(h)));
    }

    #[test]
    fn idx_files_take_precedence() {
        let dir = tempfile::tempdir().unwrap();
        let (images, labels) = synthetic_digits(10, 99);
        save_split(dir.path(), Split::Test, &images, &labels).unwrap();
        let p = load_target_pools(Some(dir.path()), (16, 16), 6, 4).unwrap();
        let direct = to_targets(&images, &labels, Some((16, 16))).unwrap();
        assert_eq!(p.duel, direct[..6]);
        assert_eq!(p.heldout, direct[6..]);
    }
}

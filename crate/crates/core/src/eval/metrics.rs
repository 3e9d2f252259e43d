use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::EvalError;
use crate::corpus::MASK_TOKEN;
use crate::volgrid::BrainVolume;

/// Boolean voxel mask over a grid, x-fastest like [`BrainVolume`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryMask {
    dims: [usize; 3],
    bits: Vec<bool>,
}

impl BinaryMask {
    pub fn new(dims: [usize; 3], bits: Vec<bool>) -> Result<Self, EvalError> {
        let n: usize = dims.iter().product();
        if bits.len() != n {
            return Err(EvalError::DimMismatch {
                expected: n,
                found: bits.len(),
            });
        }
        Ok(BinaryMask { dims, bits })
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }
}

pub fn validate_fraction(k: f64) -> Result<(), EvalError> {
    if k > 0.0 && k <= 1.0 {
        Ok(())
    } else {
        Err(EvalError::InvalidFraction(k))
    }
}

/// Number of voxels kept at fraction `k`: `round(k·n)`, halves away from zero.
pub fn retained_count(k: f64, n: usize) -> usize {
    ((k * n as f64).round() as usize).min(n)
}

/// Voxel indices by descending value, ties by ascending index.
pub(crate) fn descending_order(values: &[f32]) -> Vec<u32> {
    let mut idx: Vec<u32> = (0..values.len() as u32).collect();
    idx.sort_unstable_by(|&a, &b| {
        values[b as usize]
            .total_cmp(&values[a as usize])
            .then(a.cmp(&b))
    });
    idx
}

pub(crate) fn mask_from_order(dims: [usize; 3], order: &[u32], keep: usize) -> BinaryMask {
    let mut bits = vec![false; order.len()];
    for &i in &order[..keep] {
        bits[i as usize] = true;
    }
    BinaryMask { dims, bits }
}

/// Keeps the `round(k·N)` highest voxels.
pub fn topk_mask(volume: &BrainVolume, k: f64) -> Result<BinaryMask, EvalError> {
    validate_fraction(k)?;
    let order = descending_order(volume.data());
    Ok(mask_from_order(volume.dims(), &order, retained_count(k, order.len())))
}

fn check_dims(a: &BinaryMask, b: &BinaryMask) -> Result<(), EvalError> {
    if a.dims != b.dims {
        return Err(EvalError::DimMismatch {
            expected: a.bits.len(),
            found: b.bits.len(),
        });
    }
    Ok(())
}

fn overlap(a: &BinaryMask, b: &BinaryMask) -> (usize, usize, usize) {
    let (mut inter, mut na, mut nb) = (0, 0, 0);
    for (&x, &y) in a.bits.iter().zip(&b.bits) {
        inter += (x && y) as usize;
        na += x as usize;
        nb += y as usize;
    }
    (inter, na, nb)
}

/// `2|A∩B| / (|A|+|B|)`; 1.0 when both are empty.
pub fn dice(a: &BinaryMask, b: &BinaryMask) -> Result<f64, EvalError> {
    check_dims(a, b)?;
    let (inter, na, nb) = overlap(a, b);
    Ok(if na + nb == 0 {
        1.0
    } else {
        2.0 * inter as f64 / (na + nb) as f64
    })
}

/// `|A∩B| / |A∪B|`; 1.0 when both are empty.
pub fn iou(a: &BinaryMask, b: &BinaryMask) -> Result<f64, EvalError> {
    check_dims(a, b)?;
    let (inter, na, nb) = overlap(a, b);
    let union = na + nb - inter;
    Ok(if union == 0 { 1.0 } else { inter as f64 / union as f64 })
}

/// 1-based ascending ranks with ties sharing their average rank.
pub(crate) fn average_ranks(values: &[f32], descending: &[u32]) -> Vec<f64> {
    let n = values.len();
    let mut ranks = vec![0.0; n];
    let mut i = 0;
    while i < n {
        let v = values[descending[i] as usize];
        let mut j = i + 1;
        while j < n && values[descending[j] as usize].total_cmp(&v).is_eq() {
            j += 1;
        }
        // descending positions i..j hold ascending ranks n-j+1 ..= n-i
        let avg = ((n - j + 1) + (n - i)) as f64 / 2.0;
        for &d in &descending[i..j] {
            ranks[d as usize] = avg;
        }
        i = j;
    }
    ranks
}

/// Mann–Whitney AUC from precomputed ranks; `None` for a degenerate mask.
pub(crate) fn auc_from_ranks(ranks: &[f64], labels: &[bool]) -> Option<f64> {
    let mut pos = 0usize;
    let mut rank_sum = 0.0;
    for (&r, &l) in ranks.iter().zip(labels) {
        if l {
            pos += 1;
            rank_sum += r;
        }
    }
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return None;
    }
    let p = pos as f64;
    Some((rank_sum - p * (p + 1.0) / 2.0) / (p * neg as f64))
}

/// Probability that a positive voxel outranks a negative one, ties counting
/// one half.
pub fn auc(pred: &BrainVolume, target: &BinaryMask) -> Result<f64, EvalError> {
    if pred.dims() != target.dims {
        return Err(EvalError::DimMismatch {
            expected: pred.data().len(),
            found: target.bits.len(),
        });
    }
    let order = descending_order(pred.data());
    let ranks = average_ranks(pred.data(), &order);
    auc_from_ranks(&ranks, &target.bits).ok_or(EvalError::DegenerateMask)
}

/// Replaces each token by `"mask"` with probability `rate`.
pub fn mask_tokens(tokens: &[String], rate: f64, seed: u64) -> Result<Vec<String>, EvalError> {
    if !(0.0..=1.0).contains(&rate) {
        return Err(EvalError::InvalidMaskRate(rate));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(tokens
        .iter()
        .map(|t| {
            if rng.random::<f64>() < rate {
                MASK_TOKEN.to_string()
            } else {
                t.clone()
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::volgrid::GridSpec;
    use proptest::prelude::*;

    fn vol(values: Vec<f32>) -> BrainVolume {
        let g = GridSpec::new([values.len(), 1, 1], [1.0; 3], [0.0; 3]).unwrap();
        BrainVolume::from_data(g, values).unwrap()
    }

    fn mask(bits: &[bool]) -> BinaryMask {
        BinaryMask::new([bits.len(), 1, 1], bits.to_vec()).unwrap()
    }

    #[test]
    fn topk_examples() {
        let v = vol((0..10).map(|i| ((i * 7) % 10) as f32).collect());
        let m = topk_mask(&v, 0.2).unwrap();
        let kept: Vec<usize> = (0..10).filter(|&i| m.bits()[i]).collect();
        // values 9 and 8 sit at indices 7 and 4
        assert_eq!(kept, [4, 7]);
        assert_eq!(topk_mask(&v, 1.0).unwrap().count(), 10);
        let flat = vol(vec![1.0; 8]);
        assert_eq!(topk_mask(&flat, 0.5).unwrap().bits(), &[true, true, true, true, false, false, false, false]);
        assert!(topk_mask(&v, 0.0).is_err());
        assert!(topk_mask(&v, 1.5).is_err());
    }

    #[test]
    fn rounding_is_half_away_from_zero() {
        assert_eq!(retained_count(0.5, 5), 3);
        assert_eq!(retained_count(0.1, 76800), 7680);
        for i in 1..=10 {
            let k = i as f64 / 10.0;
            assert_eq!(retained_count(k, 76800), 7680 * i);
        }
    }

    #[test]
    fn dice_iou_examples() {
        let a = mask(&[true, true, false]);
        let b = mask(&[true, false, false]);
        assert!((dice(&a, &b).unwrap() - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(iou(&a, &b).unwrap(), 0.5);
        assert_eq!(dice(&a, &a).unwrap(), 1.0);
        let c = mask(&[false, false, true]);
        assert_eq!(dice(&a, &c).unwrap(), 0.0);
        assert_eq!(iou(&a, &c).unwrap(), 0.0);
        let e = mask(&[false; 3]);
        assert_eq!(dice(&e, &e).unwrap(), 1.0);
        assert_eq!(iou(&e, &e).unwrap(), 1.0);
        assert!(dice(&a, &mask(&[true; 4])).is_err());
    }

    #[test]
    fn auc_examples() {
        let labels = mask(&[true, false, true, false]);
        assert_eq!(auc(&vol(vec![0.9, 0.8, 0.4, 0.1]), &labels).unwrap(), 0.75);
        assert_eq!(auc(&vol(vec![0.5; 4]), &labels).unwrap(), 0.5);
        assert_eq!(auc(&vol(vec![1.0, 0.0, 2.0, -1.0]), &labels).unwrap(), 1.0);
        assert!(matches!(auc(&vol(vec![1.0; 4]), &mask(&[true; 4])), Err(EvalError::DegenerateMask)));
    }

    #[test]
    fn masking() {
        let toks: Vec<String> = ["a", "b", "c", "d"].iter().map(|s| s.to_string()).collect();
        assert_eq!(mask_tokens(&toks, 0.0, 1).unwrap(), toks);
        assert!(mask_tokens(&toks, 1.0, 1).unwrap().iter().all(|t| t == "mask"));
        assert_eq!(mask_tokens(&toks, 0.5, 9).unwrap(), mask_tokens(&toks, 0.5, 9).unwrap());
        assert!(mask_tokens(&toks, -0.1, 1).is_err());
    }

    proptest! {
        #[test]
        fn dice_iou_identity(a in prop::collection::vec(any::<bool>(), 12), b in prop::collection::vec(any::<bool>(), 12)) {
            let (ma, mb) = (mask(&a), mask(&b));
            let d = dice(&ma, &mb).unwrap();
            let j = iou(&ma, &mb).unwrap();
            prop_assert_eq!(d, dice(&mb, &ma).unwrap());
            prop_assert_eq!(j, iou(&mb, &ma).unwrap());
            prop_assert!((d - 2.0 * j / (1.0 + j)).abs() < 1e-12);
        }

        #[test]
        fn auc_monotone_invariant(v in prop::collection::vec(-5i32..5, 20), l in prop::collection::vec(any::<bool>(), 20)) {
            prop_assume!(l.iter().any(|&x| x) && l.iter().any(|&x| !x));
            let a = auc(&vol(v.iter().map(|&x| x as f32).collect()), &mask(&l)).unwrap();
            let b = auc(&vol(v.iter().map(|&x| (x as f32 * 0.5).exp() + 3.0).collect()), &mask(&l)).unwrap();
            prop_assert_eq!(a, b);
        }
    }
}

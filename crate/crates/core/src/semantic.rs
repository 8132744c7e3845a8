//! Instance-mask merging and mask-guided disparity adjustment.
//!
//! Precomputed instance segmentation masks (read from files; no model
//! inference here) are filtered by confidence and class, merged into a
//! semantic map, and used to flatten each object's disparity to its median
//! so the object lies on a coherent depth plane.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::Grid;

/// A single instance segmentation mask with detector metadata.
#[derive(Debug, Clone)]
pub struct InstanceMask {
    /// Binary mask ({0,1} values) at the working resolution.
    pub mask: Grid,
    pub confidence: f64,
    pub class_id: u32,
}

impl InstanceMask {
    pub fn new(mask: Grid, confidence: f64, class_id: u32) -> Result<Self> {
        if mask.channels() != 1 {
            return Err(Error::precondition("mask must be single-channel"));
        }
        if !(0.0..=1.0).contains(&confidence) {
            return Err(Error::precondition("confidence must lie in [0, 1]"));
        }
        Ok(Self {
            mask,
            confidence,
            class_id,
        })
    }

    fn covers(&self, i: usize) -> bool {
        self.mask.data()[i] > 0.5
    }
}

/// How qualifying objects reshape the disparity map.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AdjustStrategy {
    /// Replace each object's disparity by the median under its mask.
    MedianFlatten,
    /// Leave the disparity untouched.
    None,
}

/// Mask filtering and adjustment configuration.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AdjustConfig {
    pub confidence_threshold: f64,
    /// Qualifying class ids (person, vehicle and animal categories by default).
    pub class_allowlist: BTreeSet<u32>,
    pub strategy: AdjustStrategy,
    /// Whether the adjusted map also feeds the smoothness term (the
    /// reprojection path always receives it).
    pub apply_to_smoothness: bool,
}

/// Person, vehicle and animal categories of the 80-class COCO label set
/// (1-indexed detector ids).
pub const DEFAULT_CLASS_ALLOWLIST: [u32; 19] = [
    1, // person
    2, 3, 4, 5, 6, 7, 8, 9, // bicycle .. boat
    16, 17, 18, 19, 20, 21, 22, 23, 24, 25, // bird .. giraffe
];

impl Default for AdjustConfig {
    fn default() -> Self {
        Self {
            confidence_threshold: 0.7,
            class_allowlist: DEFAULT_CLASS_ALLOWLIST.into_iter().collect(),
            strategy: AdjustStrategy::MedianFlatten,
            apply_to_smoothness: false,
        }
    }
}

impl AdjustConfig {
    fn qualifies(&self, inst: &InstanceMask) -> bool {
        inst.confidence >= self.confidence_threshold
            && self.class_allowlist.contains(&inst.class_id)
    }
}

/// Union of all qualifying masks as a binary map.
pub fn merge_masks(instances: &[InstanceMask], cfg: &AdjustConfig) -> Result<Grid> {
    let first = instances
        .first()
        .map(|i| i.mask.shape())
        .unwrap_or((1, 1, 1));
    let mut out = Grid::zeros(first.0, first.1, 1)?;
    for inst in instances {
        if inst.mask.shape() != first {
            return Err(Error::dims("all masks must share dimensions"));
        }
        if !cfg.qualifies(inst) {
            continue;
        }
        for (dst, &src) in out.data_mut().iter_mut().zip(inst.mask.data()) {
            if src > 0.5 {
                *dst = 1.0;
            }
        }
    }
    Ok(out)
}

/// Median as the lower middle element of the sorted values (deterministic,
/// no interpolation for even counts).
fn lower_median(values: &mut Vec<f64>) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    values.sort_by(|a, b| a.partial_cmp(b).expect("finite values"));
    Some(values[(values.len() - 1) / 2])
}

/// Flatten each qualifying instance's disparity to the median of the
/// *original* values under its mask. Instances are processed in input order;
/// overlaps resolve last-writer-wins. Instances with empty masks are skipped.
pub fn adjust_disparity(
    disp: &Grid,
    instances: &[InstanceMask],
    cfg: &AdjustConfig,
) -> Result<Grid> {
    if disp.channels() != 1 {
        return Err(Error::precondition("disparity must be single-channel"));
    }
    if cfg.strategy == AdjustStrategy::None {
        return Ok(disp.clone());
    }
    let mut out = disp.clone();
    for inst in instances {
        if !inst.mask.same_spatial(disp) {
            return Err(Error::dims("mask dimensions must match disparity"));
        }
        if !cfg.qualifies(inst) {
            continue;
        }
        let mut values: Vec<f64> = disp
            .data()
            .iter()
            .enumerate()
            .filter(|(i, _)| inst.covers(*i))
            .map(|(_, &v)| v)
            .collect();
        let Some(median) = lower_median(&mut values) else {
            continue; // empty mask region
        };
        for (i, dst) in out.data_mut().iter_mut().enumerate() {
            if inst.covers(i) {
                *dst = median;
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn mask_from(bits: &[f64], w: usize, h: usize) -> Grid {
        Grid::from_data(w, h, 1, bits.to_vec()).unwrap()
    }

    fn inst(bits: &[f64], w: usize, h: usize, conf: f64, class: u32) -> InstanceMask {
        InstanceMask::new(mask_from(bits, w, h), conf, class).unwrap()
    }

    #[test]
    fn threshold_filters_instances() {
        let cfg = AdjustConfig::default();
        let keep = inst(&[1.0, 0.0, 0.0, 0.0], 2, 2, 0.8, 1);
        let drop = inst(&[0.0, 1.0, 0.0, 0.0], 2, 2, 0.6, 1);
        let merged = merge_masks(&[keep, drop], &cfg).unwrap();
        assert_eq!(merged.data(), &[1.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn class_allowlist_filters() {
        let cfg = AdjustConfig::default();
        let kite = inst(&[1.0, 1.0, 1.0, 1.0], 2, 2, 0.99, 38);
        let merged = merge_masks(&[kite], &cfg).unwrap();
        assert_eq!(merged.data(), &[0.0; 4]);
    }

    #[test]
    fn empty_instances_give_zero_map() {
        let merged = merge_masks(&[], &AdjustConfig::default()).unwrap();
        assert!(merged.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn union_matches_brute_force() {
        let cfg = AdjustConfig::default();
        let a = inst(&[1.0, 1.0, 0.0, 0.0], 2, 2, 0.9, 3);
        let b = inst(&[0.0, 1.0, 1.0, 0.0], 2, 2, 0.75, 1);
        let merged = merge_masks(&[a.clone(), b.clone()], &cfg).unwrap();
        for i in 0..4 {
            let expect = (a.mask.data()[i] > 0.5) || (b.mask.data()[i] > 0.5);
            assert_eq!(merged.data()[i] > 0.5, expect);
        }
    }

    #[test]
    fn median_flatten_hand_example() {
        let disp = Grid::from_data(3, 1, 1, vec![0.1, 0.2, 0.3]).unwrap();
        let obj = inst(&[1.0, 1.0, 1.0], 3, 1, 0.9, 1);
        let out = adjust_disparity(&disp, &[obj], &AdjustConfig::default()).unwrap();
        assert_eq!(out.data(), &[0.2, 0.2, 0.2]);
    }

    #[test]
    fn strategy_none_is_identity() {
        let disp = Grid::from_data(3, 1, 1, vec![0.1, 0.2, 0.3]).unwrap();
        let obj = inst(&[1.0, 1.0, 1.0], 3, 1, 0.9, 1);
        let cfg = AdjustConfig {
            strategy: AdjustStrategy::None,
            ..AdjustConfig::default()
        };
        let out = adjust_disparity(&disp, &[obj], &cfg).unwrap();
        assert_eq!(out.data(), disp.data());
    }

    #[test]
    fn disjoint_masks_and_outside_pixels() {
        let disp = Grid::from_data(4, 1, 1, vec![0.1, 0.5, 0.9, 0.3]).unwrap();
        let a = inst(&[1.0, 1.0, 0.0, 0.0], 4, 1, 0.9, 1);
        let b = inst(&[0.0, 0.0, 1.0, 0.0], 4, 1, 0.9, 3);
        let out = adjust_disparity(&disp, &[a, b], &AdjustConfig::default()).unwrap();
        // Even-count median is the lower middle: median{0.1, 0.5} = 0.1.
        assert_eq!(out.data(), &[0.1, 0.1, 0.9, 0.3]);
    }

    #[test]
    fn overlap_last_writer_wins() {
        let disp = Grid::from_data(3, 1, 1, vec![0.0, 0.5, 1.0]).unwrap();
        let a = inst(&[1.0, 1.0, 0.0], 3, 1, 0.9, 1);
        let b = inst(&[0.0, 1.0, 1.0], 3, 1, 0.9, 1);
        let out = adjust_disparity(&disp, &[a, b], &AdjustConfig::default()).unwrap();
        // b's median over original values {0.5, 1.0} is 0.5 and overwrites
        // the overlap pixel.
        assert_eq!(out.data(), &[0.0, 0.5, 0.5]);
    }

    #[test]
    fn idempotent_under_same_instances() {
        let disp = Grid::from_data(4, 2, 1, vec![0.1, 0.4, 0.2, 0.8, 0.3, 0.6, 0.5, 0.7]).unwrap();
        let a = inst(&[1.0, 1.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0], 4, 2, 0.95, 2);
        let b = inst(&[0.0, 0.0, 1.0, 1.0, 0.0, 0.0, 1.0, 0.0], 4, 2, 0.85, 17);
        let cfg = AdjustConfig::default();
        let once = adjust_disparity(&disp, &[a.clone(), b.clone()], &cfg).unwrap();
        let twice = adjust_disparity(&once, &[a, b], &cfg).unwrap();
        assert_eq!(once.data(), twice.data());
    }

    proptest! {
        #[test]
        fn threshold_monotone(th1 in 0.0f64..1.0, th2 in 0.0f64..1.0, seed in 0u64..30) {
            prop_assume!(th1 <= th2);
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let instances: Vec<_> = (0..4)
                .map(|_| {
                    let bits: Vec<f64> = (0..9).map(|_| f64::from(rng.random::<bool>())).collect();
                    inst(&bits, 3, 3, rng.random_range(0.0..1.0), 1)
                })
                .collect();
            let lo = AdjustConfig { confidence_threshold: th1, ..AdjustConfig::default() };
            let hi = AdjustConfig { confidence_threshold: th2, ..AdjustConfig::default() };
            let m_lo = merge_masks(&instances, &lo).unwrap();
            let m_hi = merge_masks(&instances, &hi).unwrap();
            for (a, b) in m_lo.data().iter().zip(m_hi.data()) {
                prop_assert!(a >= b, "lowering the threshold must never remove a pixel");
            }
        }

        #[test]
        fn adjusted_range_never_widens(seed in 0u64..30) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let disp = Grid::from_fn(4, 4, 1, |_, _, _| rng.random_range(0.0..1.0)).unwrap();
            let bits: Vec<f64> = (0..16).map(|_| f64::from(rng.random::<bool>())).collect();
            let obj = inst(&bits, 4, 4, 0.9, 1);
            let out = adjust_disparity(&disp, &[obj], &AdjustConfig::default()).unwrap();
            prop_assert!(out.min_value() >= disp.min_value());
            prop_assert!(out.max_value() <= disp.max_value());
            // Output values come from the original values or per-instance medians.
            for &v in out.data() {
                prop_assert!(disp.data().contains(&v));
            }
        }
    }
}

//! The training loss stack: windowed SSIM, photometric error, per-pixel
//! minimum reprojection loss, edge-aware smoothness, and the combined
//! multi-scale loss.
//!
//! All reductions accumulate left to right in pixel order, so results are
//! bitwise deterministic.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{Grid, Pyramid};

/// Every scalar in the loss equations.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LossConfig {
    /// SSIM-vs-L1 blend weight.
    pub alpha: f64,
    /// Weight of the photometric term.
    pub mu: f64,
    /// Weight of the smoothness term.
    pub lambda: f64,
    /// SSIM stabilization constants.
    pub ssim_c1: f64,
    pub ssim_c2: f64,
    /// Pyramid levels the loss is evaluated at.
    pub scales: Vec<usize>,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            alpha: 0.85,
            mu: 1.0,
            lambda: 1e-3,
            ssim_c1: 0.01 * 0.01,
            ssim_c2: 0.03 * 0.03,
            scales: vec![0, 1, 2, 3],
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::precondition("alpha must lie in [0, 1]"));
        }
        if self.mu < 0.0 || self.lambda < 0.0 {
            return Err(Error::precondition("mu and lambda must be >= 0"));
        }
        if self.ssim_c1 <= 0.0 || self.ssim_c2 <= 0.0 {
            return Err(Error::precondition("SSIM constants must be > 0"));
        }
        if self.scales.is_empty() {
            return Err(Error::precondition("at least one scale required"));
        }
        Ok(())
    }

    pub fn with_scales(mut self, scales: Vec<usize>) -> Self {
        self.scales = scales;
        self
    }
}

/// Per-scale photometric and smoothness terms.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScaleLoss {
    pub scale: usize,
    pub photometric: f64,
    pub smoothness: f64,
}

/// Total loss with its parts; `total` is exactly
/// `sum(mu*photometric + lambda*smoothness) / num_scales`.
#[derive(Debug, Clone, Serialize)]
pub struct LossBreakdown {
    pub total: f64,
    pub per_scale: Vec<ScaleLoss>,
    /// Per-pixel minimum photometric error at the first configured scale.
    #[serde(skip)]
    pub min_error_map: Grid,
}

/// Reflect-101 index: mirrors about the edge pixel without repeating it
/// (index -1 reads index 1, index n reads n - 2).
#[inline]
pub(crate) fn reflect101(i: isize, n: usize) -> usize {
    if i < 0 {
        (-i) as usize
    } else if i as usize >= n {
        2 * (n - 1) - i as usize
    } else {
        i as usize
    }
}

/// 3x3 mean filter with reflect-101 padding applied to one channel plane.
/// Out-of-range taps mirror about the edge pixel (index -1 reads index 1),
/// so reflected source pixels contribute twice.
pub(crate) fn mean_filter3(src: &[f64], w: usize, h: usize) -> Vec<f64> {
    debug_assert!(w >= 2 && h >= 2);
    let reflect = reflect101;
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for dy in -1isize..=1 {
                let sy = reflect(y as isize + dy, h);
                for dx in -1isize..=1 {
                    let sx = reflect(x as isize + dx, w);
                    acc += src[sy * w + sx];
                }
            }
            out[y * w + x] = acc / 9.0;
        }
    }
    out
}

/// Per-pixel SSIM map using 3x3 mean statistics; multi-channel inputs are
/// averaged over channels into a single-channel map.
pub fn ssim(a: &Grid, b: &Grid, c1: f64, c2: f64) -> Result<Grid> {
    if !a.same_shape(b) {
        return Err(Error::dims("ssim inputs must share shape"));
    }
    if a.width() < 2 || a.height() < 2 {
        return Err(Error::precondition("ssim needs dims >= 2x2"));
    }
    let (w, h, c) = a.shape();
    let n = w * h;
    let mut out = vec![0.0; n];
    for ch in 0..c {
        let pa = a.channel(ch);
        let pb = b.channel(ch);
        let ma = mean_filter3(pa, w, h);
        let mb = mean_filter3(pb, w, h);
        let eaa = mean_filter3(&pa.iter().map(|v| v * v).collect::<Vec<_>>(), w, h);
        let ebb = mean_filter3(&pb.iter().map(|v| v * v).collect::<Vec<_>>(), w, h);
        let eab = mean_filter3(
            &pa.iter().zip(pb).map(|(x, y)| x * y).collect::<Vec<_>>(),
            w,
            h,
        );
        for i in 0..n {
            out[i] += ssim_value(ma[i], mb[i], eaa[i], ebb[i], eab[i], c1, c2);
        }
    }
    for v in &mut out {
        *v /= c as f64;
    }
    Ok(Grid::from_raw(w, h, 1, out))
}

#[inline]
pub(crate) fn ssim_value(
    ma: f64,
    mb: f64,
    eaa: f64,
    ebb: f64,
    eab: f64,
    c1: f64,
    c2: f64,
) -> f64 {
    let va = eaa - ma * ma;
    let vb = ebb - mb * mb;
    let cov = eab - ma * mb;
    ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2))
}

/// Photometric error map:
/// `pe = alpha/2 * clamp(1 - SSIM, 0, 2) + (1 - alpha) * |a - b|`, with the
/// L1 term averaged over channels. With `alpha = 0` the SSIM path is skipped
/// entirely, so plain L1 works on grids narrower than the SSIM window.
pub fn photometric_error(a: &Grid, b: &Grid, cfg: &LossConfig) -> Result<Grid> {
    if !a.same_shape(b) {
        return Err(Error::dims("photometric_error inputs must share shape"));
    }
    let (w, h, c) = a.shape();
    let n = w * h;
    let mut out = vec![0.0; n];
    for ch in 0..c {
        let pa = a.channel(ch);
        let pb = b.channel(ch);
        for i in 0..n {
            out[i] += (pa[i] - pb[i]).abs();
        }
    }
    let l1_w = (1.0 - cfg.alpha) / c as f64;
    for v in &mut out {
        *v *= l1_w;
    }
    if cfg.alpha != 0.0 {
        let ssim_map = ssim(a, b, cfg.ssim_c1, cfg.ssim_c2)?;
        for (v, s) in out.iter_mut().zip(ssim_map.data()) {
            *v += cfg.alpha / 2.0 * (1.0 - s).clamp(0.0, 2.0);
        }
    }
    Ok(Grid::from_raw(w, h, 1, out))
}

/// Per-pixel minimum over candidate maps plus the spatial mean of the
/// minimum. Ties keep the earliest candidate.
pub fn min_mean_of_maps(maps: &[Grid]) -> Result<(f64, Grid)> {
    let first = maps
        .first()
        .ok_or_else(|| Error::precondition("need at least one candidate map"))?;
    let mut min = first.clone();
    for m in &maps[1..] {
        if !m.same_shape(first) {
            return Err(Error::dims("candidate maps must share shape"));
        }
        for (dst, &src) in min.data_mut().iter_mut().zip(m.data()) {
            if src < *dst {
                *dst = src;
            }
        }
    }
    let mean = min.mean();
    Ok((mean, min))
}

/// Minimum reprojection loss: per-pixel minimum of `pe(target, warped_i)`
/// over candidates, then the spatial mean. Returns both the scalar and the
/// minimum map.
pub fn min_reprojection_loss(
    target: &Grid,
    warped: &[Grid],
    cfg: &LossConfig,
) -> Result<(f64, Grid)> {
    if warped.is_empty() {
        return Err(Error::precondition("need at least one warped candidate"));
    }
    let maps = warped
        .iter()
        .map(|wimg| photometric_error(target, wimg, cfg))
        .collect::<Result<Vec<_>>>()?;
    min_mean_of_maps(&maps)
}

/// Edge-aware smoothness of a mean-normalized disparity map:
/// `mean(|dx d*| e^{-|dx I|}) + mean(|dy d*| e^{-|dy I|})`, image gradients
/// averaged over channels inside the exponent, each directional term averaged
/// over its own support.
pub fn smoothness_loss(disp: &Grid, image: &Grid) -> Result<f64> {
    if disp.channels() != 1 {
        return Err(Error::precondition("disparity must be single-channel"));
    }
    if !disp.same_spatial(image) {
        return Err(Error::dims("disparity and image must share spatial dims"));
    }
    let m = disp.mean();
    if m <= 0.0 {
        return Err(Error::precondition("mean disparity must be positive"));
    }
    let (w, h, c) = image.shape();
    let d = disp.channel(0);
    let mut x_sum = 0.0;
    let mut y_sum = 0.0;
    for y in 0..h {
        for x in 0..w.saturating_sub(1) {
            let dd = (d[y * w + x + 1] - d[y * w + x]) / m;
            let mut ig = 0.0;
            for ch in 0..c {
                let plane = image.channel(ch);
                ig += (plane[y * w + x + 1] - plane[y * w + x]).abs();
            }
            x_sum += dd.abs() * (-(ig / c as f64)).exp();
        }
    }
    for y in 0..h.saturating_sub(1) {
        for x in 0..w {
            let dd = (d[(y + 1) * w + x] - d[y * w + x]) / m;
            let mut ig = 0.0;
            for ch in 0..c {
                let plane = image.channel(ch);
                ig += (plane[(y + 1) * w + x] - plane[y * w + x]).abs();
            }
            y_sum += dd.abs() * (-(ig / c as f64)).exp();
        }
    }
    let x_count = (w - 1) * h;
    let y_count = w * (h - 1);
    let x_term = if x_count > 0 {
        x_sum / x_count as f64
    } else {
        0.0
    };
    let y_term = if y_count > 0 {
        y_sum / y_count as f64
    } else {
        0.0
    };
    Ok(x_term + y_term)
}

/// Combined multi-scale loss. `warped_per_scale[i]` and `disp_per_scale[i]`
/// correspond to `cfg.scales[i]`; the target at each scale comes from the
/// pyramid. Disparity is mean-normalized independently per scale inside
/// [`smoothness_loss`].
pub fn total_loss(
    target_pyr: &Pyramid,
    warped_per_scale: &[Vec<Grid>],
    disp_per_scale: &[Grid],
    cfg: &LossConfig,
) -> Result<LossBreakdown> {
    cfg.validate()?;
    if warped_per_scale.len() != cfg.scales.len() || disp_per_scale.len() != cfg.scales.len() {
        return Err(Error::dims(
            "warped and disparity lists must match cfg.scales",
        ));
    }
    let mut per_scale = Vec::with_capacity(cfg.scales.len());
    let mut first_min_map = None;
    for (i, &s) in cfg.scales.iter().enumerate() {
        if s >= target_pyr.num_levels() {
            return Err(Error::precondition(format!(
                "scale {s} exceeds pyramid depth {}",
                target_pyr.num_levels()
            )));
        }
        let target = target_pyr.level(s);
        let (lp, min_map) = min_reprojection_loss(target, &warped_per_scale[i], cfg)?;
        let ls = smoothness_loss(&disp_per_scale[i], target)?;
        if first_min_map.is_none() {
            first_min_map = Some(min_map);
        }
        per_scale.push(ScaleLoss {
            scale: s,
            photometric: lp,
            smoothness: ls,
        });
    }
    let total = per_scale
        .iter()
        .map(|t| cfg.mu * t.photometric + cfg.lambda * t.smoothness)
        .sum::<f64>()
        / per_scale.len() as f64;
    Ok(LossBreakdown {
        total,
        per_scale,
        min_error_map: first_min_map.expect("scales non-empty"),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::build_pyramid;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_grid(w: usize, h: usize, c: usize, seed: u64) -> Grid {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Grid::from_fn(w, h, c, |_, _, _| rng.random_range(0.0..1.0)).unwrap()
    }

    #[test]
    fn ssim_identical_inputs_is_one() {
        let a = random_grid(6, 5, 3, 1);
        let map = ssim(&a, &a, 1e-4, 9e-4).unwrap();
        for &v in map.data() {
            assert_abs_diff_eq!(v, 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn ssim_constant_zero_vs_one() {
        let a = Grid::filled(4, 4, 1, 0.0).unwrap();
        let b = Grid::filled(4, 4, 1, 1.0).unwrap();
        let map = ssim(&a, &b, 1e-4, 9e-4).unwrap();
        let expected = 1e-4 / (1.0 + 1e-4);
        for &v in map.data() {
            assert_abs_diff_eq!(v, expected, epsilon = 1e-15);
        }
        assert!((expected - 9.999e-5).abs() < 1e-8);
    }

    #[test]
    fn ssim_symmetric_and_bounded() {
        let a = random_grid(8, 8, 1, 2);
        let b = random_grid(8, 8, 1, 3);
        let ab = ssim(&a, &b, 1e-4, 9e-4).unwrap();
        let ba = ssim(&b, &a, 1e-4, 9e-4).unwrap();
        for (x, y) in ab.data().iter().zip(ba.data()) {
            assert_abs_diff_eq!(x, y, epsilon = 1e-14);
        }
        for &v in ab.data() {
            assert!((-1.0..=1.0).contains(&v));
        }
    }

    #[test]
    fn pe_zero_on_identical_and_hand_value_on_constants() {
        let cfg = LossConfig::default();
        let a = random_grid(6, 6, 3, 4);
        let pe = photometric_error(&a, &a, &cfg).unwrap();
        for &v in pe.data() {
            assert_abs_diff_eq!(v, 0.0, epsilon = 1e-12);
        }
        let z = Grid::filled(4, 4, 1, 0.0).unwrap();
        let o = Grid::filled(4, 4, 1, 1.0).unwrap();
        let pe = photometric_error(&z, &o, &cfg).unwrap();
        let expected = 0.425 * (1.0 - 1e-4 / (1.0 + 1e-4)) + 0.15;
        for &v in pe.data() {
            assert_abs_diff_eq!(v, expected, epsilon = 1e-12);
        }
        assert!((expected - 0.574958).abs() < 1e-5);
    }

    #[test]
    fn pe_alpha_zero_is_plain_l1() {
        let cfg = LossConfig {
            alpha: 0.0,
            ..LossConfig::default()
        };
        let a = random_grid(5, 4, 2, 5);
        let b = random_grid(5, 4, 2, 6);
        let pe = photometric_error(&a, &b, &cfg).unwrap();
        for y in 0..4 {
            for x in 0..5 {
                let l1 = ((a.at(x, y, 0) - b.at(x, y, 0)).abs()
                    + (a.at(x, y, 1) - b.at(x, y, 1)).abs())
                    / 2.0;
                assert_abs_diff_eq!(pe.at(x, y, 0), l1, epsilon = 1e-15);
            }
        }
    }

    #[test]
    fn min_mean_hand_example() {
        let m1 = Grid::from_data(2, 2, 1, vec![1.0, 3.0, 2.0, 0.0]).unwrap();
        let m2 = Grid::from_data(2, 2, 1, vec![2.0, 1.0, 5.0, 0.0]).unwrap();
        let (scalar, map) = min_mean_of_maps(&[m1, m2]).unwrap();
        assert_eq!(map.data(), &[1.0, 1.0, 2.0, 0.0]);
        assert_abs_diff_eq!(scalar, 1.0, epsilon = 0.0);
    }

    #[test]
    fn min_reprojection_bounds() {
        let cfg = LossConfig::default();
        let target = random_grid(6, 6, 3, 7);
        let w1 = random_grid(6, 6, 3, 8);
        let w2 = random_grid(6, 6, 3, 9);
        let (lp, _) = min_reprojection_loss(&target, &[w1.clone(), w2.clone()], &cfg).unwrap();
        for w in [&w1, &w2] {
            let pe = photometric_error(&target, w, &cfg).unwrap();
            assert!(lp <= pe.mean() + 1e-15);
        }
        let (zero, _) = min_reprojection_loss(&target, &[target.clone()], &cfg).unwrap();
        assert_abs_diff_eq!(zero, 0.0, epsilon = 1e-12);
        assert!(min_reprojection_loss(&target, &[], &cfg).is_err());
    }

    #[test]
    fn smoothness_hand_example_1x2() {
        let disp = Grid::from_data(2, 1, 1, vec![1.0, 3.0]).unwrap();
        let img = Grid::filled(2, 1, 3, 0.5).unwrap();
        let ls = smoothness_loss(&disp, &img).unwrap();
        assert_abs_diff_eq!(ls, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn smoothness_constant_disparity_is_zero() {
        let disp = Grid::filled(5, 4, 1, 0.42).unwrap();
        let img = random_grid(5, 4, 3, 10);
        assert_abs_diff_eq!(smoothness_loss(&disp, &img).unwrap(), 0.0, epsilon = 0.0);
    }

    #[test]
    fn smoothness_image_edge_attenuates() {
        // Same disparity step; a colocated image edge must lower the penalty.
        let disp = Grid::from_data(2, 1, 1, vec![1.0, 3.0]).unwrap();
        let flat = Grid::filled(2, 1, 1, 0.5).unwrap();
        let edged = Grid::from_data(2, 1, 1, vec![0.0, 1.0]).unwrap();
        let ls_flat = smoothness_loss(&disp, &flat).unwrap();
        let ls_edge = smoothness_loss(&disp, &edged).unwrap();
        assert!(ls_edge < ls_flat);
    }

    #[test]
    fn total_loss_arithmetic_and_zero_case() {
        // Single scale, injected maps via real inputs: warped == target and
        // constant disparity give exactly zero.
        let target = random_grid(8, 8, 3, 11);
        let pyr = build_pyramid(&target, 1).unwrap();
        let cfg = LossConfig::default().with_scales(vec![0]);
        let disp = Grid::filled(8, 8, 1, 0.4).unwrap();
        let out = total_loss(&pyr, &[vec![target.clone()]], &[disp], &cfg).unwrap();
        assert_abs_diff_eq!(out.total, 0.0, epsilon = 1e-12);
    }

    #[test]
    fn total_loss_linear_in_mu_lambda() {
        let target = random_grid(8, 8, 3, 12);
        let warped = random_grid(8, 8, 3, 13);
        let mut disp = Grid::filled(8, 8, 1, 0.4).unwrap();
        disp.set(3, 3, 0, 0.7);
        let pyr = build_pyramid(&target, 1).unwrap();
        let base = LossConfig::default().with_scales(vec![0]);
        let eval = |mu: f64, lambda: f64| {
            let cfg = LossConfig {
                mu,
                lambda,
                ..base.clone()
            };
            total_loss(&pyr, &[vec![warped.clone()]], &[disp.clone()], &cfg)
                .unwrap()
                .total
        };
        let a = eval(1.0, 0.0);
        let b = eval(0.0, 1.0);
        let combined = eval(2.0, 3.0);
        assert_abs_diff_eq!(combined, 2.0 * a + 3.0 * b, epsilon = 1e-12);
        // Doubling mu doubles the photometric contribution exactly.
        assert_abs_diff_eq!(eval(2.0, 0.0), 2.0 * a, epsilon = 1e-12);
    }

    #[test]
    fn total_loss_example_values() {
        // L_p = 0.5, L_s = 2, mu = 1, lambda = 1e-3 -> 0.502.
        let total = (1.0 * 0.5 + 1e-3 * 2.0) / 1.0;
        assert_abs_diff_eq!(total, 0.502, epsilon = 1e-15);
    }

    proptest! {
        #[test]
        fn pe_nonnegative_and_zero_iff_equal(seed in 0u64..50) {
            let cfg = LossConfig::default();
            let a = random_grid(6, 6, 1, seed);
            let b = random_grid(6, 6, 1, seed + 1000);
            let pe = photometric_error(&a, &b, &cfg).unwrap();
            for &v in pe.data() {
                prop_assert!(v >= 0.0);
            }
            prop_assert!(pe.mean() > 1e-6);
        }

        #[test]
        fn smoothness_scale_invariant(scale in 0.1f64..50.0, seed in 0u64..20) {
            let disp = random_grid(6, 5, 1, seed).map(|v| v + 0.1);
            let img = random_grid(6, 5, 3, seed + 500);
            let base = smoothness_loss(&disp, &img).unwrap();
            let scaled = smoothness_loss(&disp.map(|v| v * scale), &img).unwrap();
            prop_assert!((base - scaled).abs() < 1e-9 * base.max(1.0));
        }
    }
}

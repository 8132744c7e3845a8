//! Exact gradients of the warp-and-loss pipeline with respect to per-pixel
//! inverse depth, 6-DoF pose per source frame, and the four intrinsic
//! scalars, plus a central-difference verification harness.
//!
//! Parameters live in unconstrained space: disparity is stored pre-squash
//! and mapped through the logistic function, focal lengths pass through
//! softplus. Differentiation is by hand-derived adjoints of the fixed
//! pipeline (see `pipeline`); no general-purpose tape.

mod pipeline;

use nalgebra::Vector3;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::camera::{logistic, Intrinsics, Padding};
use crate::error::{Error, Result};
use crate::grid::{build_pyramid, Grid, Pyramid};
use crate::loss::LossConfig;

pub(crate) use pipeline::target_stats;

/// Relative-error denominator floor used by [`gradcheck`].
pub const REL_ERR_FLOOR: f64 = 1e-8;

/// Configuration of the differentiable scene loss.
#[derive(Debug, Clone)]
pub struct SceneConfig {
    pub loss: LossConfig,
    pub min_depth: f64,
    pub max_depth: f64,
    /// Photometric loss is averaged over pixels at least this far from the
    /// border (at each scale's own resolution).
    pub interior_margin: usize,
    pub padding: Padding,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            loss: LossConfig::default(),
            min_depth: 0.1,
            max_depth: 100.0,
            interior_margin: 2,
            padding: Padding::Border,
        }
    }
}

/// A frame triplet (one target, >= 1 sources) with everything constant
/// across gradient evaluations precomputed: pyramids and the target-side
/// SSIM statistics.
pub struct Scene {
    pub(crate) target: Grid,
    pub(crate) sources: Vec<Grid>,
    pub(crate) config: SceneConfig,
    pub(crate) target_pyr: Pyramid,
    pub(crate) source_pyrs: Vec<Pyramid>,
    pub(crate) target_stats: Vec<pipeline::TargetStats>,
}

impl Scene {
    pub fn new(target: Grid, sources: Vec<Grid>, config: SceneConfig) -> Result<Self> {
        config.loss.validate()?;
        if !(config.min_depth > 0.0 && config.min_depth < config.max_depth) {
            return Err(Error::precondition("need 0 < min_depth < max_depth"));
        }
        if sources.is_empty() {
            return Err(Error::precondition("need at least one source frame"));
        }
        for s in &sources {
            if !s.same_shape(&target) {
                return Err(Error::dims("source frames must match the target shape"));
            }
        }
        let max_scale = *config.loss.scales.iter().max().expect("validated");
        let levels = max_scale + 1;
        let margin = config.interior_margin;
        for &s in &config.loss.scales {
            let (ws, hs) = (target.width() >> s, target.height() >> s);
            if ws < 2 || hs < 2 {
                return Err(Error::precondition(format!(
                    "scale {s} reduces {}x{} below 2x2",
                    target.width(),
                    target.height()
                )));
            }
            if ws <= 2 * margin || hs <= 2 * margin {
                return Err(Error::precondition(format!(
                    "interior margin {margin} leaves no pixels at scale {s}"
                )));
            }
        }
        let target_pyr = build_pyramid(&target, levels)?;
        let source_pyrs = sources
            .iter()
            .map(|s| build_pyramid(s, levels))
            .collect::<Result<Vec<_>>>()?;
        let target_stats = if config.loss.alpha != 0.0 {
            config
                .loss
                .scales
                .iter()
                .map(|&s| target_stats(target_pyr.level(s)))
                .collect()
        } else {
            Vec::new()
        };
        Ok(Self {
            target,
            sources,
            config,
            target_pyr,
            source_pyrs,
            target_stats,
        })
    }

    pub fn target(&self) -> &Grid {
        &self.target
    }

    pub fn sources(&self) -> &[Grid] {
        &self.sources
    }

    pub fn config(&self) -> &SceneConfig {
        &self.config
    }

    pub fn num_frames(&self) -> usize {
        self.sources.len()
    }
}

/// All trainable parameters in unconstrained form.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamGroups {
    /// Pre-squash disparity, one value per target pixel; the effective
    /// disparity is `sigma(raw)`.
    pub inv_depth_raw: Grid,
    /// Per source frame: axis-angle (3) then translation (3).
    pub poses: Vec<[f64; 6]>,
    /// fx, fy pre-softplus; cx, cy raw.
    pub intrinsics_raw: [f64; 4],
}

impl ParamGroups {
    /// Constant-disparity initialization with identity poses and the given
    /// intrinsics.
    pub fn constant(
        width: usize,
        height: usize,
        num_frames: usize,
        disparity: f64,
        intrinsics: &Intrinsics,
    ) -> Result<Self> {
        if !(0.0 < disparity && disparity < 1.0) {
            return Err(Error::precondition("disparity must lie in (0, 1)"));
        }
        Ok(Self {
            inv_depth_raw: Grid::filled(width, height, 1, crate::camera::logit(disparity))?,
            poses: vec![[0.0; 6]; num_frames],
            intrinsics_raw: intrinsics.to_raw(),
        })
    }

    /// Zero-filled gradients (or parameters) with the same shapes.
    pub fn zeros_like(&self) -> Self {
        Self {
            inv_depth_raw: self.inv_depth_raw.map(|_| 0.0),
            poses: vec![[0.0; 6]; self.poses.len()],
            intrinsics_raw: [0.0; 4],
        }
    }

    /// The effective disparity map `sigma(raw)` in (0, 1).
    pub fn disparity(&self) -> Grid {
        self.inv_depth_raw.map(logistic)
    }

    pub fn intrinsics(&self) -> Intrinsics {
        Intrinsics::from_raw(self.intrinsics_raw)
    }

    pub(crate) fn validate(&self, scene: &Scene) -> Result<()> {
        if self.inv_depth_raw.channels() != 1
            || !self.inv_depth_raw.same_spatial(&scene.target)
        {
            return Err(Error::dims("inv_depth_raw must be 1-channel at target size"));
        }
        if self.poses.len() != scene.num_frames() {
            return Err(Error::dims("one pose per source frame required"));
        }
        for p in &self.poses {
            if !p.iter().all(|v| v.is_finite()) {
                return Err(Error::data("pose parameters must be finite"));
            }
            let aa = Vector3::new(p[0], p[1], p[2]);
            if aa.norm() >= std::f64::consts::PI {
                return Err(Error::precondition("axis-angle norm must be < pi"));
            }
        }
        if !self.intrinsics_raw.iter().all(|v| v.is_finite()) {
            return Err(Error::data("intrinsics parameters must be finite"));
        }
        Ok(())
    }

    /// Total number of scalar coordinates in a group.
    pub fn group_len(&self, group: ParamGroup) -> usize {
        match group {
            ParamGroup::Depth => self.inv_depth_raw.data().len(),
            ParamGroup::Pose => self.poses.len() * 6,
            ParamGroup::Intrinsics => 4,
        }
    }

    pub fn get(&self, coord: ParamCoord) -> f64 {
        match coord {
            ParamCoord::Depth(i) => self.inv_depth_raw.data()[i],
            ParamCoord::Pose { frame, index } => self.poses[frame][index],
            ParamCoord::Intrinsics(i) => self.intrinsics_raw[i],
        }
    }

    pub fn set(&mut self, coord: ParamCoord, value: f64) {
        match coord {
            ParamCoord::Depth(i) => self.inv_depth_raw.data_mut()[i] = value,
            ParamCoord::Pose { frame, index } => self.poses[frame][index] = value,
            ParamCoord::Intrinsics(i) => self.intrinsics_raw[i] = value,
        }
    }
}

/// The three parameter groups.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamGroup {
    Depth,
    Pose,
    Intrinsics,
}

impl ParamGroup {
    pub const ALL: [ParamGroup; 3] = [
        ParamGroup::Depth,
        ParamGroup::Pose,
        ParamGroup::Intrinsics,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ParamGroup::Depth => "depth",
            ParamGroup::Pose => "pose",
            ParamGroup::Intrinsics => "intrinsics",
        }
    }
}

/// Index of one scalar parameter.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamCoord {
    Depth(usize),
    Pose { frame: usize, index: usize },
    Intrinsics(usize),
}

impl ParamCoord {
    fn nth(group: ParamGroup, i: usize) -> Self {
        match group {
            ParamGroup::Depth => ParamCoord::Depth(i),
            ParamGroup::Pose => ParamCoord::Pose {
                frame: i / 6,
                index: i % 6,
            },
            ParamGroup::Intrinsics => ParamCoord::Intrinsics(i),
        }
    }
}

/// Total loss and its gradient with respect to every parameter.
/// Deterministic: identical inputs give bitwise-identical outputs.
pub fn loss_and_gradients(scene: &Scene, params: &ParamGroups) -> Result<(f64, ParamGroups)> {
    let eval = pipeline::forward(scene, params, true)?;
    let trace = eval.trace.as_ref().expect("trace requested");
    let grads = pipeline::backward(scene, params, trace);
    Ok((eval.loss, grads))
}

/// Loss value only.
pub fn loss_value(scene: &Scene, params: &ParamGroups) -> Result<f64> {
    Ok(pipeline::forward(scene, params, false)?.loss)
}

fn loss_and_signature(scene: &Scene, params: &ParamGroups) -> Result<(f64, u64)> {
    let eval = pipeline::forward(scene, params, false)?;
    Ok((eval.loss, eval.signature))
}

/// Generic central difference `(f(x+h) - f(x-h)) / 2h`.
pub fn central_diff(mut f: impl FnMut(f64) -> f64, x: f64, h: f64) -> f64 {
    (f(x + h) - f(x - h)) / (2.0 * h)
}

/// Central difference of the scene loss along one parameter coordinate.
pub fn finite_diff(
    scene: &Scene,
    params: &ParamGroups,
    coord: ParamCoord,
    h: f64,
) -> Result<f64> {
    if h <= 0.0 {
        return Err(Error::precondition("step size must be positive"));
    }
    let x = params.get(coord);
    let mut work = params.clone();
    work.set(coord, x + h);
    let plus = loss_value(scene, &work)?;
    work.set(coord, x - h);
    let minus = loss_value(scene, &work)?;
    Ok((plus - minus) / (2.0 * h))
}

/// Per-group comparison statistics.
#[derive(Debug, Clone, Serialize)]
pub struct GroupReport {
    pub group: String,
    pub max_rel_err: f64,
    pub mean_rel_err: f64,
    pub checked: usize,
    /// Coordinates skipped because a branch flips inside the probe interval.
    pub excluded: usize,
}

/// Result of a [`gradcheck`] run.
#[derive(Debug, Clone, Serialize)]
pub struct GradReport {
    pub groups: Vec<GroupReport>,
    pub h: f64,
    pub tol: f64,
    pub samples_per_group: usize,
    pub seed: u64,
    pub passed: bool,
}

/// Compare analytic gradients against central differences on sampled
/// coordinates of every group.
///
/// Coordinates whose forward branch pattern differs between `x - h` and
/// `x + h` have a kink inside the probe interval (L1 sign flip,
/// reprojection-min tie, clamp or bilinear-cell crossing) and are excluded:
/// the central difference integrates the derivative over exactly that
/// interval, so flips outside it cannot bias the estimate, while any flip
/// inside it invalidates the comparison. Relative error uses the denominator
/// `max(|analytic|, |numeric|, 1e-8)`; the check passes if the maximum over
/// all checked coordinates stays below `tol`.
pub fn gradcheck(
    scene: &Scene,
    params: &ParamGroups,
    samples_per_group: usize,
    h: f64,
    tol: f64,
    seed: u64,
) -> Result<GradReport> {
    if samples_per_group == 0 {
        return Err(Error::precondition("need at least one sample per group"));
    }
    if h <= 0.0 || tol <= 0.0 {
        return Err(Error::precondition("h and tol must be positive"));
    }
    let (_, grads) = loss_and_gradients(scene, params)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut groups = Vec::with_capacity(3);
    let mut all_max: f64 = 0.0;
    for group in ParamGroup::ALL {
        let len = params.group_len(group);
        let take = samples_per_group.min(len);
        let coords = sample_indices(&mut rng, len, take);
        let mut max_err: f64 = 0.0;
        let mut sum_err = 0.0;
        let mut checked = 0usize;
        let mut excluded = 0usize;
        let mut work = params.clone();
        for idx in coords {
            let coord = ParamCoord::nth(group, idx);
            let x = params.get(coord);
            work.set(coord, x - h);
            let (minus, sig_minus) = loss_and_signature(scene, &work)?;
            work.set(coord, x + h);
            let (plus, sig_plus) = loss_and_signature(scene, &work)?;
            work.set(coord, x);
            if sig_minus != sig_plus {
                excluded += 1;
                continue;
            }
            let numeric = (plus - minus) / (2.0 * h);
            let analytic = grads.get(coord);
            let err = (analytic - numeric).abs()
                / analytic.abs().max(numeric.abs()).max(REL_ERR_FLOOR);
            max_err = max_err.max(err);
            sum_err += err;
            checked += 1;
        }
        all_max = all_max.max(max_err);
        groups.push(GroupReport {
            group: group.name().to_string(),
            max_rel_err: max_err,
            mean_rel_err: if checked > 0 {
                sum_err / checked as f64
            } else {
                0.0
            },
            checked,
            excluded,
        });
    }
    Ok(GradReport {
        groups,
        h,
        tol,
        samples_per_group,
        seed,
        passed: all_max < tol,
    })
}

/// First `take` elements of a seeded partial Fisher-Yates shuffle of `0..len`.
fn sample_indices(rng: &mut ChaCha8Rng, len: usize, take: usize) -> Vec<usize> {
    let mut pool: Vec<usize> = (0..len).collect();
    for k in 0..take {
        let j = k + (rng.next_u64() as usize) % (len - k);
        pool.swap(k, j);
    }
    pool.truncate(take);
    pool
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::Rng;

    fn plaid(width: usize, height: usize, channels: usize, seed: u64) -> Grid {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut waves = Vec::new();
        for _ in 0..channels {
            let w: Vec<(f64, f64, f64, f64)> = (0..3)
                .map(|_| {
                    (
                        rng.random_range(0.05..0.12),
                        rng.random_range(0.0..std::f64::consts::PI),
                        rng.random_range(0.0..std::f64::consts::TAU),
                        rng.random_range(0.25..0.6),
                    )
                })
                .collect();
            waves.push(w);
        }
        Grid::from_fn(width, height, channels, |x, y, c| {
            let mut v = 0.5;
            for &(amp, ang, phase, freq) in &waves[c] {
                let axis = x as f64 * ang.cos() + y as f64 * ang.sin();
                v += amp * (freq * axis + phase).sin();
            }
            v.clamp(0.02, 0.98)
        })
        .unwrap()
    }

    /// A small scene with two structurally-different source frames and
    /// deliberately offset parameters so every term is active.
    fn tiny_scene(alpha: f64, lambda: f64, scales: Vec<usize>) -> (Scene, ParamGroups) {
        let target = plaid(8, 8, 3, 1);
        let prev = plaid(8, 8, 3, 2);
        let next = plaid(8, 8, 3, 3);
        let config = SceneConfig {
            loss: LossConfig {
                alpha,
                lambda,
                scales,
                ..LossConfig::default()
            },
            interior_margin: 1,
            ..SceneConfig::default()
        };
        let scene = Scene::new(target, vec![prev, next], config).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut params = ParamGroups::constant(8, 8, 2, 0.3, &Intrinsics::fixed_baseline()).unwrap();
        for v in params.inv_depth_raw.data_mut() {
            *v += rng.random_range(-0.3..0.3);
        }
        for pose in &mut params.poses {
            for (i, p) in pose.iter_mut().enumerate() {
                *p = if i < 3 {
                    rng.random_range(-0.004..0.004)
                } else {
                    rng.random_range(-0.01..0.01)
                };
            }
        }
        (scene, params)
    }

    fn check_all_coords(scene: &Scene, params: &ParamGroups, tol: f64) {
        let report = gradcheck(scene, params, 500, 1e-4, tol, 77).unwrap();
        assert!(
            report.passed,
            "gradcheck failed: {:#?}",
            report
        );
        for g in &report.groups {
            assert!(g.checked > 0, "group {} had no checked coords", g.group);
        }
    }

    #[test]
    fn gradients_match_l1_only_single_scale() {
        let (scene, params) = tiny_scene(0.0, 0.0, vec![0]);
        check_all_coords(&scene, &params, 1e-4);
    }

    #[test]
    fn gradients_match_smoothness_only() {
        let (scene, params) = tiny_scene(0.0, 1.0, vec![0]);
        check_all_coords(&scene, &params, 1e-4);
    }

    #[test]
    fn gradients_match_ssim_single_scale() {
        let (scene, params) = tiny_scene(0.85, 0.0, vec![0]);
        check_all_coords(&scene, &params, 1e-4);
    }

    #[test]
    fn gradients_match_full_multiscale() {
        let (scene, params) = tiny_scene(0.85, 1e-3, vec![0, 1]);
        check_all_coords(&scene, &params, 1e-4);
    }

    #[test]
    fn perfect_warp_has_zero_photometric_gradients() {
        // Sources identical to the target, zero poses, and parameters chosen
        // so every arithmetic step is exact in f64: softplus(64) == 64
        // bitwise, sigma(0) = 0.5, and with min_depth 0.25 / huge max_depth
        // the mapped depth is exactly 0.5, making the flow land on integer
        // coordinates bit-exactly. Then warped == target, the loss is zero,
        // and all photometric gradients vanish.
        let target = plaid(8, 8, 3, 4);
        let config = SceneConfig {
            loss: LossConfig {
                lambda: 0.0,
                scales: vec![0],
                ..LossConfig::default()
            },
            min_depth: 0.25,
            max_depth: 1e300,
            interior_margin: 1,
            ..SceneConfig::default()
        };
        let scene = Scene::new(target.clone(), vec![target.clone(), target], config).unwrap();
        let params = ParamGroups {
            inv_depth_raw: Grid::zeros(8, 8, 1).unwrap(),
            poses: vec![[0.0; 6]; 2],
            intrinsics_raw: [64.0, 64.0, 0.0, 0.0],
        };
        let (loss, grads) = loss_and_gradients(&scene, &params).unwrap();
        assert_eq!(loss, 0.0, "loss = {loss}");
        for pose in &grads.poses {
            for g in pose {
                assert!(g.abs() < 1e-10, "pose gradient {g}");
            }
        }
        for g in grads.intrinsics_raw {
            assert!(g.abs() < 1e-10, "intrinsics gradient {g}");
        }
        for &g in grads.inv_depth_raw.data() {
            assert!(g.abs() < 1e-10, "depth gradient {g}");
        }
    }

    #[test]
    fn softplus_chain_factor_at_zero() {
        assert_abs_diff_eq!(logistic(0.0), 0.5, epsilon = 1e-15);
        // d(sigma)/dx at 0 = 0.25.
        let d = central_diff(logistic, 0.0, 1e-6);
        assert_abs_diff_eq!(d, 0.25, epsilon = 1e-9);
    }

    #[test]
    fn central_diff_quadratic_probe() {
        let d = central_diff(|x| x * x, 3.0, 1e-4);
        assert_abs_diff_eq!(d, 6.0, epsilon = 1e-7);
        // Halving h shrinks the truncation error of a smooth cubic ~4x.
        let f = |x: f64| x * x * x;
        let e1 = (central_diff(f, 1.0, 1e-2) - 3.0).abs();
        let e2 = (central_diff(f, 1.0, 5e-3) - 3.0).abs();
        assert!(e2 < e1 / 3.0 && e2 > e1 / 5.0);
    }

    #[test]
    fn kink_coordinate_is_excluded() {
        // Constant disparity means every smoothness difference sits exactly
        // at the |.| kink: perturbing any depth coordinate flips signs, so
        // depth coordinates must be excluded, not checked.
        let target = plaid(8, 8, 3, 5);
        let prev = plaid(8, 8, 3, 6);
        let config = SceneConfig {
            loss: LossConfig {
                alpha: 0.0,
                mu: 0.0,
                lambda: 1.0,
                scales: vec![0],
                ..LossConfig::default()
            },
            interior_margin: 1,
            ..SceneConfig::default()
        };
        let scene = Scene::new(target, vec![prev], config).unwrap();
        let params = ParamGroups::constant(8, 8, 1, 0.3, &Intrinsics::fixed_baseline()).unwrap();
        let report = gradcheck(&scene, &params, 16, 1e-4, 1e-4, 3).unwrap();
        let depth = &report.groups[0];
        assert_eq!(depth.group, "depth");
        assert_eq!(depth.checked, 0);
        assert_eq!(depth.excluded, 16);
    }

    #[test]
    fn corrupted_gradient_detected() {
        // Inflate the analytic gradient by 10%: the check must fail.
        let (scene, params) = tiny_scene(0.85, 1e-3, vec![0]);
        let (_, grads) = loss_and_gradients(&scene, &params).unwrap();
        // Pick a depth coordinate with a healthy gradient.
        let (idx, &g) = grads
            .inv_depth_raw
            .data()
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.abs().partial_cmp(&b.1.abs()).unwrap())
            .unwrap();
        let coord = ParamCoord::Depth(idx);
        let numeric = finite_diff(&scene, &params, coord, 1e-4).unwrap();
        let err_true = (g - numeric).abs() / g.abs().max(numeric.abs()).max(REL_ERR_FLOOR);
        let corrupted = g * 1.1;
        let err_bad =
            (corrupted - numeric).abs() / corrupted.abs().max(numeric.abs()).max(REL_ERR_FLOOR);
        assert!(err_true < 1e-4, "true gradient off by {err_true}");
        assert!(err_bad > 1e-2, "corruption not visible: {err_bad}");
    }

    #[test]
    fn deterministic_bitwise() {
        let (scene, params) = tiny_scene(0.85, 1e-3, vec![0, 1]);
        let (l1, g1) = loss_and_gradients(&scene, &params).unwrap();
        let (l2, g2) = loss_and_gradients(&scene, &params).unwrap();
        assert_eq!(l1.to_bits(), l2.to_bits());
        for (a, b) in g1.inv_depth_raw.data().iter().zip(g2.inv_depth_raw.data()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
        assert_eq!(g1.poses, g2.poses);
        assert_eq!(g1.intrinsics_raw, g2.intrinsics_raw);
    }

    #[test]
    fn sample_count_one_reports_one() {
        let (scene, params) = tiny_scene(0.85, 1e-3, vec![0]);
        let report = gradcheck(&scene, &params, 1, 1e-4, 1e-3, 11).unwrap();
        for g in &report.groups {
            assert_eq!(g.checked + g.excluded, 1);
        }
    }

    #[test]
    fn forward_value_matches_public_loss_stack() {
        // Route A: the pipeline's own forward (margin 0). Route B: the
        // public camera + loss operations composed by hand.
        use crate::camera::{
            assemble_k, backproject, bilinear_sample, compose_transform, disparity_to_depth,
            invert_k, project,
        };
        use crate::loss::total_loss;

        let (scene0, params) = tiny_scene(0.85, 1e-3, vec![0, 1]);
        let config = SceneConfig {
            interior_margin: 0,
            ..scene0.config.clone()
        };
        let scene = Scene::new(
            scene0.target.clone(),
            scene0.sources.clone(),
            config.clone(),
        )
        .unwrap();
        let value = loss_value(&scene, &params).unwrap();

        let disp0 = params.disparity();
        let intr = params.intrinsics();
        let pyr = build_pyramid(&scene0.target, 2).unwrap();
        let disp_pyr = build_pyramid(&disp0, 2).unwrap();
        let mut warped_per_scale = Vec::new();
        let mut disp_per_scale = Vec::new();
        for &s in &config.loss.scales {
            let (w, h) = (8 >> s, 8 >> s);
            let k = assemble_k(&intr, 8, 8, s);
            let kinv = invert_k(&k).unwrap();
            let depth =
                disparity_to_depth(disp_pyr.level(s), config.min_depth, config.max_depth).unwrap();
            let pm = backproject(&depth, &kinv).unwrap();
            let mut warped = Vec::new();
            for (j, src) in scene0.sources.iter().enumerate() {
                let aa = Vector3::new(
                    params.poses[j][0],
                    params.poses[j][1],
                    params.poses[j][2],
                );
                let tr = Vector3::new(
                    params.poses[j][3],
                    params.poses[j][4],
                    params.poses[j][5],
                );
                let t = compose_transform(&aa, &tr, false);
                let flow = project(&pm, &k, &t, w, h);
                let src_pyr = build_pyramid(src, 2).unwrap();
                warped.push(bilinear_sample(src_pyr.level(s), &flow, config.padding).unwrap());
            }
            warped_per_scale.push(warped);
            disp_per_scale.push(disp_pyr.level(s).clone());
        }
        let breakdown = total_loss(&pyr, &warped_per_scale, &disp_per_scale, &config.loss).unwrap();
        assert_abs_diff_eq!(value, breakdown.total, epsilon = 1e-12);
    }
}

//! Forward and reverse passes of the fixed warp-and-loss pipeline.
//!
//! The forward pass mirrors the public operations in `camera` and `loss`;
//! the reverse pass is hand-derived, stage by stage, in the opposite order.
//! Both run single-threaded with fixed accumulation order, so results are
//! bitwise deterministic.
//!
//! Every forward evaluation also folds its branch decisions (bilinear cells,
//! L1 signs, argmin indices, clamp sides, validity flags, smoothness signs,
//! small-angle switches) into an FNV-1a signature. Two evaluations whose
//! signatures differ took different piecewise branches; the gradient checker
//! uses this to flag coordinates sitting near a kink.

use nalgebra::{Matrix3, Vector3};

use crate::camera::{
    assemble_k, axis_angle_to_rotation, invert_k, logistic, skew, Intrinsics, Padding, EPS_Z,
    SMALL_ANGLE,
};
use crate::error::{Error, Result};
use crate::grid::{downsample_half, Grid};
use crate::loss::{mean_filter3, reflect101, ssim_value};

use super::{ParamGroups, Scene};

/// FNV-1a accumulator for branch signatures.
pub(crate) struct BranchHash(u64);

impl BranchHash {
    pub(crate) fn new() -> Self {
        BranchHash(0xcbf29ce484222325)
    }

    #[inline]
    fn byte(&mut self, b: u8) {
        self.0 ^= b as u64;
        self.0 = self.0.wrapping_mul(0x100000001b3);
    }

    #[inline]
    fn i8(&mut self, v: i8) {
        self.byte(v as u8);
    }

    #[inline]
    fn u32(&mut self, v: u32) {
        for b in v.to_le_bytes() {
            self.byte(b);
        }
    }

    fn finish(&self) -> u64 {
        self.0
    }
}

#[inline]
fn sign3(v: f64) -> i8 {
    if v > 0.0 {
        1
    } else if v < 0.0 {
        -1
    } else {
        0
    }
}

/// Result of one forward evaluation.
pub(crate) struct Eval {
    pub loss: f64,
    pub signature: u64,
    pub trace: Option<Trace>,
}

/// Buffers retained for the reverse pass.
pub(crate) struct Trace {
    pub disp_levels: Vec<Grid>,
    pub scales: Vec<ScaleTrace>,
}

pub(crate) struct ScaleTrace {
    pub scale: usize,
    pub depth: Grid,
    pub k: Matrix3<f64>,
    pub k_inv: Matrix3<f64>,
    pub frames: Vec<FrameTrace>,
    /// Index of the winning candidate per pixel.
    pub argmin: Vec<u8>,
}

pub(crate) struct FrameTrace {
    /// Unnormalized sample coordinates and validity per pixel.
    pub u: Vec<f64>,
    pub v: Vec<f64>,
    pub valid: Vec<bool>,
    pub warped: Grid,
    /// Filtered statistics of the warped image (empty when alpha = 0).
    pub mb: Vec<Vec<f64>>,
    pub ebb: Vec<Vec<f64>>,
    pub eab: Vec<Vec<f64>>,
    pub ssim_avg: Vec<f64>,
    pub pe: Vec<f64>,
}

/// Filtered statistics of the constant (target) side of SSIM, precomputed
/// once per scene.
pub(crate) struct TargetStats {
    pub ma: Vec<Vec<f64>>,
    pub eaa: Vec<Vec<f64>>,
}

pub(crate) fn target_stats(target: &Grid) -> TargetStats {
    let (w, h, c) = target.shape();
    let mut ma = Vec::with_capacity(c);
    let mut eaa = Vec::with_capacity(c);
    for ch in 0..c {
        let plane = target.channel(ch);
        ma.push(mean_filter3(plane, w, h));
        let sq: Vec<f64> = plane.iter().map(|v| v * v).collect();
        eaa.push(mean_filter3(&sq, w, h));
    }
    TargetStats { ma, eaa }
}

/// Adjoint of [`mean_filter3`]: scatters each output gradient back to the
/// (reflected) taps that produced it, so reflected pixels receive their
/// doubled share.
pub(crate) fn mean_filter3_adjoint(grad: &[f64], w: usize, h: usize) -> Vec<f64> {
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let g = grad[y * w + x] / 9.0;
            if g == 0.0 {
                continue;
            }
            for dy in -1isize..=1 {
                let sy = reflect101(y as isize + dy, h);
                for dx in -1isize..=1 {
                    let sx = reflect101(x as isize + dx, w);
                    out[sy * w + sx] += g;
                }
            }
        }
    }
    out
}

#[inline]
fn in_interior(x: usize, y: usize, w: usize, h: usize, margin: usize) -> bool {
    x >= margin && y >= margin && x < w - margin && y < h - margin
}

/// Smoothness forward identical to `loss::smoothness_loss`, additionally
/// hashing the gradient signs.
fn smoothness_forward(disp: &Grid, image: &Grid, hash: &mut BranchHash) -> Result<f64> {
    let m = disp.mean();
    if m <= 0.0 {
        return Err(Error::precondition("mean disparity must be positive"));
    }
    let (w, h, c) = image.shape();
    let d = disp.channel(0);
    let mut x_sum = 0.0;
    let mut y_sum = 0.0;
    for y in 0..h {
        for x in 0..w - 1 {
            let delta = d[y * w + x + 1] - d[y * w + x];
            hash.i8(sign3(delta));
            let mut ig = 0.0;
            for ch in 0..c {
                let plane = image.channel(ch);
                ig += (plane[y * w + x + 1] - plane[y * w + x]).abs();
            }
            x_sum += (delta / m).abs() * (-(ig / c as f64)).exp();
        }
    }
    for y in 0..h - 1 {
        for x in 0..w {
            let delta = d[(y + 1) * w + x] - d[y * w + x];
            hash.i8(sign3(delta));
            let mut ig = 0.0;
            for ch in 0..c {
                let plane = image.channel(ch);
                ig += (plane[(y + 1) * w + x] - plane[y * w + x]).abs();
            }
            y_sum += (delta / m).abs() * (-(ig / c as f64)).exp();
        }
    }
    let x_count = ((w - 1) * h) as f64;
    let y_count = (w * (h - 1)) as f64;
    let mut ls = 0.0;
    if x_count > 0.0 {
        ls += x_sum / x_count;
    }
    if y_count > 0.0 {
        ls += y_sum / y_count;
    }
    Ok(ls)
}

/// Reverse of [`smoothness_forward`] with upstream gradient `g_ls`,
/// accumulating into `g_disp`. `ls_val` is the forward value.
fn smoothness_backward(disp: &Grid, image: &Grid, ls_val: f64, g_ls: f64, g_disp: &mut [f64]) {
    let m = disp.mean();
    let (w, h, c) = image.shape();
    let d = disp.channel(0);
    let n = (w * h) as f64;
    let x_count = ((w - 1) * h) as f64;
    let y_count = (w * (h - 1)) as f64;
    if x_count > 0.0 {
        for y in 0..h {
            for x in 0..w - 1 {
                let delta = d[y * w + x + 1] - d[y * w + x];
                let sgn = sign3(delta) as f64;
                if sgn == 0.0 {
                    continue;
                }
                let mut ig = 0.0;
                for ch in 0..c {
                    let plane = image.channel(ch);
                    ig += (plane[y * w + x + 1] - plane[y * w + x]).abs();
                }
                let coeff = g_ls * sgn * (-(ig / c as f64)).exp() / (x_count * m);
                g_disp[y * w + x + 1] += coeff;
                g_disp[y * w + x] -= coeff;
            }
        }
    }
    if y_count > 0.0 {
        for y in 0..h - 1 {
            for x in 0..w {
                let delta = d[(y + 1) * w + x] - d[y * w + x];
                let sgn = sign3(delta) as f64;
                if sgn == 0.0 {
                    continue;
                }
                let mut ig = 0.0;
                for ch in 0..c {
                    let plane = image.channel(ch);
                    ig += (plane[(y + 1) * w + x] - plane[y * w + x]).abs();
                }
                let coeff = g_ls * sgn * (-(ig / c as f64)).exp() / (y_count * m);
                g_disp[(y + 1) * w + x] += coeff;
                g_disp[y * w + x] -= coeff;
            }
        }
    }
    // L_s = C/m: the normalization term spreads -L_s/(m*N) to every pixel.
    let mean_term = g_ls * ls_val / (m * n);
    for g in g_disp.iter_mut() {
        *g -= mean_term;
    }
}

/// Partial derivatives of the per-pixel SSIM value with respect to the
/// warped-side filtered statistics (mb, ebb, eab).
#[inline]
fn ssim_partials(
    ma: f64,
    mb: f64,
    eaa: f64,
    ebb: f64,
    eab: f64,
    c1: f64,
    c2: f64,
) -> (f64, f64, f64) {
    let va = eaa - ma * ma;
    let vb = ebb - mb * mb;
    let cov = eab - ma * mb;
    let a1 = 2.0 * ma * mb + c1;
    let a2 = 2.0 * cov + c2;
    let b1 = ma * ma + mb * mb + c1;
    let b2 = va + vb + c2;
    let d = b1 * b2;
    let ssim = a1 * a2 / d;
    let d_mb = (2.0 * ma * (a2 - a1) - ssim * 2.0 * mb * (b2 - b1)) / d;
    let d_ebb = -ssim / b2;
    let d_eab = 2.0 * a1 / d;
    (d_mb, d_ebb, d_eab)
}

/// Taps and spatial derivative data of one bilinear lookup.
struct SampleCell {
    x0: isize,
    y0: isize,
    fx: f64,
    fy: f64,
    /// Derivative pass-through of the border clamp (0 when clamped).
    du: f64,
    dv: f64,
}

#[inline]
fn sample_cell(u: f64, v: f64, w: usize, h: usize, padding: Padding, hash: &mut BranchHash) -> SampleCell {
    let (mut cu, mut cv) = (u, v);
    let (mut du, mut dv) = (1.0, 1.0);
    if padding == Padding::Border {
        let (maxu, maxv) = (w as f64 - 1.0, h as f64 - 1.0);
        if u < 0.0 || u > maxu {
            cu = u.clamp(0.0, maxu);
            du = 0.0;
        }
        if v < 0.0 || v > maxv {
            cv = v.clamp(0.0, maxv);
            dv = 0.0;
        }
    }
    let mut x0f = cu.floor();
    let mut y0f = cv.floor();
    if padding == Padding::Border {
        if x0f > w as f64 - 2.0 {
            x0f = w as f64 - 2.0;
        }
        if y0f > h as f64 - 2.0 {
            y0f = h as f64 - 2.0;
        }
    }
    hash.u32(x0f as i32 as u32);
    hash.u32(y0f as i32 as u32);
    hash.i8(du as i8);
    hash.i8(dv as i8);
    SampleCell {
        x0: x0f as isize,
        y0: y0f as isize,
        fx: cu - x0f,
        fy: cv - y0f,
        du,
        dv,
    }
}

#[inline]
fn tap(plane: &[f64], x: isize, y: isize, w: usize, h: usize) -> f64 {
    if x >= 0 && y >= 0 && (x as usize) < w && (y as usize) < h {
        plane[y as usize * w + x as usize]
    } else {
        0.0
    }
}

/// Evaluate the full pipeline. With `want_trace` the per-stage buffers are
/// kept for [`backward`].
pub(crate) fn forward(scene: &Scene, params: &ParamGroups, want_trace: bool) -> Result<Eval> {
    params.validate(scene)?;
    let cfg = &scene.config;
    let lcfg = &cfg.loss;
    let n_scales = lcfg.scales.len() as f64;
    let max_scale = *lcfg.scales.iter().max().expect("scales non-empty");
    let (width, height, channels) = scene.target.shape();
    let n_frames = scene.sources.len();
    let mut hash = BranchHash::new();

    // Disparity squash and pyramid chain.
    let disp0 = params.inv_depth_raw.map(logistic);
    let mut disp_levels = vec![disp0];
    for _ in 1..=max_scale {
        disp_levels.push(downsample_half(disp_levels.last().expect("non-empty"))?);
    }

    // Pose and intrinsics mappings.
    let intr = Intrinsics::from_raw(params.intrinsics_raw);
    let mut rotations = Vec::with_capacity(n_frames);
    let mut translations = Vec::with_capacity(n_frames);
    for pose in &params.poses {
        let aa = Vector3::new(pose[0], pose[1], pose[2]);
        hash.i8(i8::from(aa.norm() < SMALL_ANGLE));
        rotations.push(axis_angle_to_rotation(&aa));
        translations.push(Vector3::new(pose[3], pose[4], pose[5]));
    }

    let a_coef = 1.0 / cfg.max_depth;
    let b_coef = 1.0 / cfg.min_depth - a_coef;

    let mut total = 0.0;
    let mut scale_traces = Vec::new();
    for (si, &s) in lcfg.scales.iter().enumerate() {
        let (ws, hs) = (width >> s, height >> s);
        let npix = ws * hs;
        let target = scene.target_pyr.level(s);
        let k = assemble_k(&intr, width, height, s);
        let k_inv = invert_k(&k)?;
        let disp_s = &disp_levels[s];
        let depth = disp_s.map(|d| 1.0 / (a_coef + b_coef * d));

        // Backproject once per scale; shared by all frames.
        let mut rays = Vec::with_capacity(npix);
        for y in 0..hs {
            for x in 0..ws {
                rays.push(k_inv * Vector3::new(x as f64, y as f64, 1.0));
            }
        }

        let mut frames = Vec::with_capacity(n_frames);
        for j in 0..n_frames {
            let source = scene.source_pyrs[j].level(s);
            let (rot, tr) = (&rotations[j], &translations[j]);
            let mut u = vec![0.0; npix];
            let mut v = vec![0.0; npix];
            let mut valid = vec![false; npix];
            for i in 0..npix {
                let p = rays[i] * depth.channel(0)[i];
                let q = k * (rot * p + tr);
                if q.z > EPS_Z {
                    u[i] = q.x / q.z;
                    v[i] = q.y / q.z;
                    valid[i] = true;
                }
                hash.i8(i8::from(valid[i]));
            }

            // Bilinear sampling of the source level.
            let mut warped = vec![0.0; npix * channels];
            for i in 0..npix {
                if !valid[i] {
                    continue;
                }
                let cell = sample_cell(u[i], v[i], ws, hs, cfg.padding, &mut hash);
                let (w00, w10, w01, w11) = (
                    (1.0 - cell.fx) * (1.0 - cell.fy),
                    cell.fx * (1.0 - cell.fy),
                    (1.0 - cell.fx) * cell.fy,
                    cell.fx * cell.fy,
                );
                for ch in 0..channels {
                    let plane = source.channel(ch);
                    let val = w00 * tap(plane, cell.x0, cell.y0, ws, hs)
                        + w10 * tap(plane, cell.x0 + 1, cell.y0, ws, hs)
                        + w01 * tap(plane, cell.x0, cell.y0 + 1, ws, hs)
                        + w11 * tap(plane, cell.x0 + 1, cell.y0 + 1, ws, hs);
                    warped[ch * npix + i] = val;
                }
            }
            let warped = Grid::from_raw(ws, hs, channels, warped);

            // Photometric error: L1 part.
            let mut pe = vec![0.0; npix];
            let l1_w = (1.0 - lcfg.alpha) / channels as f64;
            for ch in 0..channels {
                let tplane = target.channel(ch);
                let wplane = warped.channel(ch);
                for i in 0..npix {
                    let diff = tplane[i] - wplane[i];
                    hash.i8(sign3(diff));
                    pe[i] += l1_w * diff.abs();
                }
            }

            // SSIM part.
            let (mut mb, mut ebb, mut eab) = (Vec::new(), Vec::new(), Vec::new());
            let mut ssim_avg = vec![0.0; npix];
            if lcfg.alpha != 0.0 {
                let stats = &scene.target_stats[si];
                for ch in 0..channels {
                    let wplane = warped.channel(ch);
                    let mbc = mean_filter3(wplane, ws, hs);
                    let sq: Vec<f64> = wplane.iter().map(|x| x * x).collect();
                    let ebbc = mean_filter3(&sq, ws, hs);
                    let tplane = target.channel(ch);
                    let prod: Vec<f64> =
                        wplane.iter().zip(tplane).map(|(x, y)| x * y).collect();
                    let eabc = mean_filter3(&prod, ws, hs);
                    for i in 0..npix {
                        ssim_avg[i] += ssim_value(
                            stats.ma[ch][i],
                            mbc[i],
                            stats.eaa[ch][i],
                            ebbc[i],
                            eabc[i],
                            lcfg.ssim_c1,
                            lcfg.ssim_c2,
                        );
                    }
                    mb.push(mbc);
                    ebb.push(ebbc);
                    eab.push(eabc);
                }
                for i in 0..npix {
                    ssim_avg[i] /= channels as f64;
                    let one_minus = 1.0 - ssim_avg[i];
                    let side = if one_minus < 0.0 {
                        -1
                    } else if one_minus > 2.0 {
                        1
                    } else {
                        0
                    };
                    hash.i8(side);
                    pe[i] += lcfg.alpha / 2.0 * one_minus.clamp(0.0, 2.0);
                }
            }

            frames.push(FrameTrace {
                u,
                v,
                valid,
                warped,
                mb,
                ebb,
                eab,
                ssim_avg,
                pe,
            });
        }

        // Per-pixel minimum over frames; earliest candidate wins ties.
        let mut argmin = vec![0u8; npix];
        let mut lp_sum = 0.0;
        let margin = cfg.interior_margin;
        let interior_count = ((ws - 2 * margin) * (hs - 2 * margin)) as f64;
        for i in 0..npix {
            let mut best = frames[0].pe[i];
            let mut best_j = 0u8;
            for (j, f) in frames.iter().enumerate().skip(1) {
                if f.pe[i] < best {
                    best = f.pe[i];
                    best_j = j as u8;
                }
            }
            argmin[i] = best_j;
            hash.i8(best_j as i8);
            if in_interior(i % ws, i / ws, ws, hs, margin) {
                lp_sum += best;
            }
        }
        let lp = lp_sum / interior_count;
        let ls = smoothness_forward(disp_s, target, &mut hash)?;
        total += lcfg.mu * lp + lcfg.lambda * ls;

        if want_trace {
            scale_traces.push(ScaleTrace {
                scale: s,
                depth,
                k,
                k_inv,
                frames,
                argmin,
            });
        }
    }
    total /= n_scales;

    Ok(Eval {
        loss: total,
        signature: hash.finish(),
        trace: want_trace.then_some(Trace {
            disp_levels,
            scales: scale_traces,
        }),
    })
}

/// Reverse pass: walks the trace backward and returns gradients shaped like
/// the parameters.
pub(crate) fn backward(scene: &Scene, params: &ParamGroups, trace: &Trace) -> ParamGroups {
    let cfg = &scene.config;
    let lcfg = &cfg.loss;
    let n_scales = lcfg.scales.len() as f64;
    let max_scale = *lcfg.scales.iter().max().expect("scales non-empty");
    let (width, height, channels) = scene.target.shape();
    let n_frames = scene.sources.len();

    let intr = Intrinsics::from_raw(params.intrinsics_raw);
    let a_coef = 1.0 / cfg.max_depth;
    let b_coef = 1.0 / cfg.min_depth - a_coef;

    let mut g_disp_levels: Vec<Vec<f64>> = (0..=max_scale)
        .map(|s| vec![0.0; (width >> s) * (height >> s)])
        .collect();
    let mut g_rot = vec![Matrix3::<f64>::zeros(); n_frames];
    let mut g_trans = vec![Vector3::<f64>::zeros(); n_frames];
    // Gradients in (fx, fy, cx, cy) space; softplus chain applied at the end.
    let mut g_intr = [0.0f64; 4];

    let rotations: Vec<Matrix3<f64>> = params
        .poses
        .iter()
        .map(|p| axis_angle_to_rotation(&Vector3::new(p[0], p[1], p[2])))
        .collect();
    let translations: Vec<Vector3<f64>> = params
        .poses
        .iter()
        .map(|p| Vector3::new(p[3], p[4], p[5]))
        .collect();

    for (si, st) in trace.scales.iter().enumerate() {
        let s = st.scale;
        let (ws, hs) = (width >> s, height >> s);
        let npix = ws * hs;
        let (wsf, hsf) = (ws as f64, hs as f64);
        let target = scene.target_pyr.level(s);
        let disp_s = &trace.disp_levels[s];
        let g_lp = lcfg.mu / n_scales;
        let g_ls = lcfg.lambda / n_scales;

        // Smoothness backward (recomputes its forward value for the
        // normalization term).
        let mut sink = BranchHash::new();
        let ls_val = smoothness_forward(disp_s, target, &mut sink).expect("validated in forward");
        smoothness_backward(disp_s, target, ls_val, g_ls, &mut g_disp_levels[s]);

        let margin = cfg.interior_margin;
        let interior_count = ((ws - 2 * margin) * (hs - 2 * margin)) as f64;
        let g_min = g_lp / interior_count;

        let mut g_k = Matrix3::<f64>::zeros();
        let mut g_kinv = Matrix3::<f64>::zeros();

        for (j, ft) in st.frames.iter().enumerate() {
            let source = scene.source_pyrs[j].level(s);
            // Upstream gradient of this frame's pe map.
            let mut g_pe = vec![0.0; npix];
            let mut any = false;
            for i in 0..npix {
                if st.argmin[i] as usize == j && in_interior(i % ws, i / ws, ws, hs, margin) {
                    g_pe[i] = g_min;
                    any = true;
                }
            }
            if !any {
                continue;
            }

            let mut g_warped = vec![0.0; npix * channels];

            // L1 term.
            let l1_w = (1.0 - lcfg.alpha) / channels as f64;
            if l1_w != 0.0 {
                for ch in 0..channels {
                    let tplane = target.channel(ch);
                    let wplane = ft.warped.channel(ch);
                    for i in 0..npix {
                        if g_pe[i] == 0.0 {
                            continue;
                        }
                        // d|a - b|/db = sign(b - a)
                        g_warped[ch * npix + i] +=
                            g_pe[i] * l1_w * sign3(wplane[i] - tplane[i]) as f64;
                    }
                }
            }

            // SSIM term.
            if lcfg.alpha != 0.0 {
                let stats = &scene.target_stats[si];
                let mut g_ssim = vec![0.0; npix];
                for i in 0..npix {
                    if g_pe[i] == 0.0 {
                        continue;
                    }
                    let one_minus = 1.0 - ft.ssim_avg[i];
                    if (0.0..=2.0).contains(&one_minus) {
                        g_ssim[i] = -g_pe[i] * lcfg.alpha / 2.0 / channels as f64;
                    }
                }
                for ch in 0..channels {
                    let mut g_mb = vec![0.0; npix];
                    let mut g_ebb = vec![0.0; npix];
                    let mut g_eab = vec![0.0; npix];
                    for i in 0..npix {
                        if g_ssim[i] == 0.0 {
                            continue;
                        }
                        let (d_mb, d_ebb, d_eab) = ssim_partials(
                            stats.ma[ch][i],
                            ft.mb[ch][i],
                            stats.eaa[ch][i],
                            ft.ebb[ch][i],
                            ft.eab[ch][i],
                            lcfg.ssim_c1,
                            lcfg.ssim_c2,
                        );
                        g_mb[i] = g_ssim[i] * d_mb;
                        g_ebb[i] = g_ssim[i] * d_ebb;
                        g_eab[i] = g_ssim[i] * d_eab;
                    }
                    let t_mb = mean_filter3_adjoint(&g_mb, ws, hs);
                    let t_ebb = mean_filter3_adjoint(&g_ebb, ws, hs);
                    let t_eab = mean_filter3_adjoint(&g_eab, ws, hs);
                    let wplane = ft.warped.channel(ch);
                    let tplane = target.channel(ch);
                    for i in 0..npix {
                        g_warped[ch * npix + i] +=
                            t_mb[i] + t_ebb[i] * 2.0 * wplane[i] + t_eab[i] * tplane[i];
                    }
                }
            }

            // Bilinear sampling -> flow coordinates -> projection chain.
            let rot = &rotations[j];
            for i in 0..npix {
                if !ft.valid[i] {
                    continue;
                }
                let mut sink = BranchHash::new();
                let cell = sample_cell(ft.u[i], ft.v[i], ws, hs, cfg.padding, &mut sink);
                let mut g_u = 0.0;
                let mut g_v = 0.0;
                for ch in 0..channels {
                    let g = g_warped[ch * npix + i];
                    if g == 0.0 {
                        continue;
                    }
                    let plane = source.channel(ch);
                    let i00 = tap(plane, cell.x0, cell.y0, ws, hs);
                    let i10 = tap(plane, cell.x0 + 1, cell.y0, ws, hs);
                    let i01 = tap(plane, cell.x0, cell.y0 + 1, ws, hs);
                    let i11 = tap(plane, cell.x0 + 1, cell.y0 + 1, ws, hs);
                    g_u += g * ((1.0 - cell.fy) * (i10 - i00) + cell.fy * (i11 - i01));
                    g_v += g * ((1.0 - cell.fx) * (i01 - i00) + cell.fx * (i11 - i10));
                }
                g_u *= cell.du;
                g_v *= cell.dv;
                if g_u == 0.0 && g_v == 0.0 {
                    continue;
                }

                // Recompute the projection intermediates for this pixel.
                let (x, y) = ((i % ws) as f64, (i / ws) as f64);
                let hvec = Vector3::new(x, y, 1.0);
                let ray = st.k_inv * hvec;
                let depth = st.depth.channel(0)[i];
                let p = ray * depth;
                let yv = rot * p + translations[j];
                let q = st.k * yv;

                // u = q.x/q.z, v = q.y/q.z
                let g_q = Vector3::new(
                    g_u / q.z,
                    g_v / q.z,
                    -(g_u * q.x + g_v * q.y) / (q.z * q.z),
                );
                g_k += g_q * yv.transpose();
                let g_yv = st.k.transpose() * g_q;
                g_trans[j] += g_yv;
                g_rot[j] += g_yv * p.transpose();
                let g_p = rot.transpose() * g_yv;
                let g_depth = ray.dot(&g_p);
                g_kinv += (g_p * hvec.transpose()) * depth;
                // depth = 1/(a + b*d): d(depth)/dd = -b * depth^2
                g_disp_levels[s][i] += g_depth * (-b_coef * depth * depth);
            }
        }

        // K and K^-1 entries -> normalized intrinsics at this scale.
        let (fx, fy, cx, cy) = (intr.fx, intr.fy, intr.cx, intr.cy);
        g_intr[0] += g_k[(0, 0)] * wsf
            - g_kinv[(0, 0)] / (fx * fx * wsf)
            + g_kinv[(0, 2)] * (cx / (fx * fx));
        g_intr[1] += g_k[(1, 1)] * hsf
            - g_kinv[(1, 1)] / (fy * fy * hsf)
            + g_kinv[(1, 2)] * (cy / (fy * fy));
        g_intr[2] += g_k[(0, 2)] * wsf - g_kinv[(0, 2)] / fx;
        g_intr[3] += g_k[(1, 2)] * hsf - g_kinv[(1, 2)] / fy;
    }

    // Disparity pyramid chain: block-mean adjoint spreads g/4 to each fine
    // pixel, from the coarsest level down to full resolution.
    for s in (1..=max_scale).rev() {
        let (ws, hs) = (width >> s, height >> s);
        let fine_w = width >> (s - 1);
        let (coarse, fine) = {
            let (a, b) = g_disp_levels.split_at_mut(s);
            (&b[0], &mut a[s - 1])
        };
        for y in 0..hs {
            for x in 0..ws {
                let g = coarse[y * ws + x] * 0.25;
                if g == 0.0 {
                    continue;
                }
                fine[2 * y * fine_w + 2 * x] += g;
                fine[2 * y * fine_w + 2 * x + 1] += g;
                fine[(2 * y + 1) * fine_w + 2 * x] += g;
                fine[(2 * y + 1) * fine_w + 2 * x + 1] += g;
            }
        }
    }

    // Disparity squash: d = sigma(raw), d' = d(1 - d).
    let raw = params.inv_depth_raw.data();
    let mut g_raw = vec![0.0; raw.len()];
    for i in 0..raw.len() {
        let d = logistic(raw[i]);
        g_raw[i] = g_disp_levels[0][i] * d * (1.0 - d);
    }

    // Rotation matrices -> axis-angle.
    let mut g_poses = vec![[0.0f64; 6]; n_frames];
    for j in 0..n_frames {
        let aa = Vector3::new(params.poses[j][0], params.poses[j][1], params.poses[j][2]);
        let jac = rotation_jacobian(&aa);
        for i in 0..3 {
            g_poses[j][i] = frobenius_dot(&g_rot[j], &jac[i]);
            g_poses[j][3 + i] = g_trans[j][i];
        }
    }

    // Softplus chain for the focal lengths; offsets are raw.
    let g_intr_raw = [
        g_intr[0] * logistic(params.intrinsics_raw[0]),
        g_intr[1] * logistic(params.intrinsics_raw[1]),
        g_intr[2],
        g_intr[3],
    ];

    ParamGroups {
        inv_depth_raw: Grid::from_raw(width, height, 1, g_raw),
        poses: g_poses,
        intrinsics_raw: g_intr_raw,
    }
}

#[inline]
fn frobenius_dot(a: &Matrix3<f64>, b: &Matrix3<f64>) -> f64 {
    let mut acc = 0.0;
    for r in 0..3 {
        for c in 0..3 {
            acc += a[(r, c)] * b[(r, c)];
        }
    }
    acc
}

/// Partial derivatives of the Rodrigues rotation with respect to each
/// axis-angle component.
///
/// For theta >= 1e-4 this is the closed form
/// `dR/dv_i = (v_i [v]x + [v x ((I - R) e_i)]x) / theta^2 * R`;
/// below that a second-order Taylor expansion
/// `[e_i]x + ([e_i]x [v]x + [v]x [e_i]x) / 2` avoids the 0/0.
pub(crate) fn rotation_jacobian(v: &Vector3<f64>) -> [Matrix3<f64>; 3] {
    let theta2 = v.norm_squared();
    let basis = [Vector3::x(), Vector3::y(), Vector3::z()];
    if theta2.sqrt() < 1e-4 {
        let vx = skew(v);
        basis.map(|e| {
            let ex = skew(&e);
            ex + (ex * vx + vx * ex) * 0.5
        })
    } else {
        let r = axis_angle_to_rotation(v);
        let eye = Matrix3::identity();
        let mut out = [Matrix3::zeros(); 3];
        for (i, e) in basis.iter().enumerate() {
            let w = skew(v) * v[i] + skew(&v.cross(&((eye - r) * e)));
            out[i] = (w / theta2) * r;
        }
        out
    }
}

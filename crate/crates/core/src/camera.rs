//! Pinhole camera geometry: intrinsics, rigid transforms, backprojection,
//! projection to a normalized flow grid, bilinear resampling, and the
//! translation transfer that exposes the K*t ambiguity of pure-translation
//! reprojection.
//!
//! Conventions: pixel coordinates run u in [0, W-1], v in [0, H-1];
//! normalized flow coordinates use the align-corners mapping
//! `x_norm = 2u/(W-1) - 1`, so grid corners land exactly on image corners.

use nalgebra::{Matrix3, Matrix4, Vector3};

use crate::error::{Error, Result};
use crate::grid::Grid;

/// Projected points with z' at or below this are flagged invalid.
pub const EPS_Z: f64 = 1e-7;

/// Rodrigues switches to the first-order branch below this angle.
pub const SMALL_ANGLE: f64 = 1e-8;

/// Normalized pinhole intrinsics: focal lengths and principal point as
/// fractions of image width/height.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Intrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
}

impl Intrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64) -> Result<Self> {
        if !(fx.is_finite() && fy.is_finite() && cx.is_finite() && cy.is_finite()) {
            return Err(Error::data("intrinsics must be finite"));
        }
        if fx <= 0.0 || fy <= 0.0 {
            return Err(Error::precondition("focal lengths must be positive"));
        }
        Ok(Self { fx, fy, cx, cy })
    }

    /// The fixed normalized matrix used when intrinsics are not learned:
    /// fx=0.58, fy=1.92, cx=cy=0.5.
    pub fn fixed_baseline() -> Self {
        Self {
            fx: 0.58,
            fy: 1.92,
            cx: 0.5,
            cy: 0.5,
        }
    }

    /// Map raw parameters to intrinsics: focals through softplus (always
    /// positive), offsets taken as-is.
    pub fn from_raw(raw: [f64; 4]) -> Self {
        Self {
            fx: softplus(raw[0]),
            fy: softplus(raw[1]),
            cx: raw[2],
            cy: raw[3],
        }
    }

    /// Inverse of [`Intrinsics::from_raw`].
    pub fn to_raw(&self) -> [f64; 4] {
        [
            softplus_inverse(self.fx),
            softplus_inverse(self.fy),
            self.cx,
            self.cy,
        ]
    }
}

/// Overflow-safe softplus `log(1 + exp(x))`.
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// Inverse softplus `log(exp(y) - 1)` for y > 0, stable for large y.
pub fn softplus_inverse(y: f64) -> f64 {
    // log(e^y - 1) = y + log(1 - e^-y)
    y + (-(-y).exp()).ln_1p()
}

/// Derivative of softplus: the logistic function.
pub fn logistic(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Inverse logistic.
pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// Pixel-unit intrinsics matrix at pyramid level `scale`:
/// `[[fx*W_s, 0, cx*W_s], [0, fy*H_s, cy*H_s], [0, 0, 1]]` with
/// `W_s = width / 2^scale`.
pub fn assemble_k(intr: &Intrinsics, width: usize, height: usize, scale: usize) -> Matrix3<f64> {
    let ws = (width >> scale) as f64;
    let hs = (height >> scale) as f64;
    Matrix3::new(
        intr.fx * ws,
        0.0,
        intr.cx * ws,
        0.0,
        intr.fy * hs,
        intr.cy * hs,
        0.0,
        0.0,
        1.0,
    )
}

/// Closed-form inverse of an upper-triangular intrinsics matrix.
pub fn invert_k(k: &Matrix3<f64>) -> Result<Matrix3<f64>> {
    let (fx, fy) = (k[(0, 0)], k[(1, 1)]);
    if fx <= 0.0 || fy <= 0.0 || k[(2, 2)] != 1.0 {
        return Err(Error::precondition(
            "intrinsics matrix must be upper-triangular with positive diagonal",
        ));
    }
    let (cx, cy, s) = (k[(0, 2)], k[(1, 2)], k[(0, 1)]);
    // General upper-triangular inverse; s is zero for pinhole K.
    Ok(Matrix3::new(
        1.0 / fx,
        -s / (fx * fy),
        (s * cy - cx * fy) / (fx * fy),
        0.0,
        1.0 / fy,
        -cy / fy,
        0.0,
        0.0,
        1.0,
    ))
}

/// Rotation matrix from an axis-angle vector via the Rodrigues formula.
///
/// For angles below [`SMALL_ANGLE`] the first-order form `I + [v]x` is used.
pub fn axis_angle_to_rotation(v: &Vector3<f64>) -> Matrix3<f64> {
    let theta = v.norm();
    if theta < SMALL_ANGLE {
        return Matrix3::identity() + skew(v);
    }
    let k = v / theta;
    let kx = skew(&k);
    Matrix3::identity() + kx * theta.sin() + kx * kx * (1.0 - theta.cos())
}

/// Skew-symmetric cross-product matrix `[v]x`.
pub fn skew(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// Rigid SE(3) transform: rotation plus translation.
#[derive(Debug, Clone, PartialEq)]
pub struct RigidTransform {
    rotation: Matrix3<f64>,
    translation: Vector3<f64>,
}

impl RigidTransform {
    pub fn identity() -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    /// Validates orthonormality (`R^T R = I`, `det R = +1`) to 1e-9.
    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Result<Self> {
        let gram = rotation.transpose() * rotation - Matrix3::identity();
        if gram.abs().max() > 1e-9 {
            return Err(Error::precondition("rotation is not orthonormal"));
        }
        if (rotation.determinant() - 1.0).abs() > 1e-9 {
            return Err(Error::precondition("rotation determinant is not +1"));
        }
        Ok(Self {
            rotation,
            translation,
        })
    }

    pub fn rotation(&self) -> &Matrix3<f64> {
        &self.rotation
    }

    pub fn translation(&self) -> &Vector3<f64> {
        &self.translation
    }

    /// Homogeneous 4x4 matrix; last row (0, 0, 0, 1).
    pub fn matrix(&self) -> Matrix4<f64> {
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&self.rotation);
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.translation);
        m
    }

    pub fn apply(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    pub fn inverse(&self) -> Self {
        let rt = self.rotation.transpose();
        Self {
            rotation: rt,
            translation: -(rt * self.translation),
        }
    }
}

/// Build `[R | t]` from axis-angle and translation; with `invert` the exact
/// inverse `[R^T | -R^T t]` is returned.
pub fn compose_transform(
    axis_angle: &Vector3<f64>,
    translation: &Vector3<f64>,
    invert: bool,
) -> RigidTransform {
    let rotation = axis_angle_to_rotation(axis_angle);
    let fwd = RigidTransform {
        rotation,
        translation: *translation,
    };
    if invert {
        fwd.inverse()
    } else {
        fwd
    }
}

/// Convert a disparity map in [0, 1] to metric depth in
/// `[min_depth, max_depth]` via the inverse-depth affine mapping
/// `1/depth = 1/max + (1/min - 1/max) * disp`.
pub fn disparity_to_depth(disp: &Grid, min_depth: f64, max_depth: f64) -> Result<Grid> {
    if !(min_depth > 0.0 && min_depth < max_depth) {
        return Err(Error::precondition("need 0 < min_depth < max_depth"));
    }
    if disp.data().iter().any(|&d| !(0.0..=1.0).contains(&d)) {
        return Err(Error::precondition("disparity values must lie in [0, 1]"));
    }
    let a = 1.0 / max_depth;
    let b = 1.0 / min_depth - a;
    Ok(disp.map(|d| 1.0 / (a + b * d)))
}

/// Per-pixel 3-D points in the camera frame.
#[derive(Debug, Clone)]
pub struct PointMap {
    pub width: usize,
    pub height: usize,
    pub points: Vec<Vector3<f64>>,
}

/// Lift every pixel to a 3-D point: `P(u, v) = depth(u, v) * K^-1 (u, v, 1)^T`.
pub fn backproject(depth: &Grid, k_inv: &Matrix3<f64>) -> Result<PointMap> {
    if depth.channels() != 1 {
        return Err(Error::precondition("depth must be single-channel"));
    }
    if depth.data().iter().any(|&d| d <= 0.0) {
        return Err(Error::precondition("depth must be positive everywhere"));
    }
    let (w, h) = (depth.width(), depth.height());
    let mut points = Vec::with_capacity(w * h);
    for y in 0..h {
        for x in 0..w {
            let ray = k_inv * Vector3::new(x as f64, y as f64, 1.0);
            points.push(ray * depth.at(x, y, 0));
        }
    }
    Ok(PointMap {
        width: w,
        height: h,
        points,
    })
}

/// Per-pixel normalized sampling coordinates plus a positive-depth validity
/// flag (z' > [`EPS_Z`] after the transform).
#[derive(Debug, Clone)]
pub struct FlowGrid {
    pub width: usize,
    pub height: usize,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub valid: Vec<bool>,
}

impl FlowGrid {
    /// The identity mapping: every pixel samples itself.
    pub fn identity(width: usize, height: usize) -> Self {
        let mut x = Vec::with_capacity(width * height);
        let mut y = Vec::with_capacity(width * height);
        for py in 0..height {
            for px in 0..width {
                x.push(norm_coord(px as f64, width));
                y.push(norm_coord(py as f64, height));
            }
        }
        FlowGrid {
            width,
            height,
            x,
            y,
            valid: vec![true; width * height],
        }
    }

    /// Whether pixel `i` is valid and its coordinates lie inside [-1, 1].
    pub fn in_range(&self, i: usize) -> bool {
        self.valid[i] && self.x[i].abs() <= 1.0 && self.y[i].abs() <= 1.0
    }
}

/// Normalized coordinate of pixel position `p` on an axis of length `n`.
pub fn norm_coord(p: f64, n: usize) -> f64 {
    2.0 * p / (n as f64 - 1.0) - 1.0
}

/// Project transformed points to the normalized flow-field grid:
/// `p' = K (R P + t)`, normalized by `x_norm = 2u'/(W-1) - 1`.
pub fn project(
    points: &PointMap,
    k: &Matrix3<f64>,
    transform: &RigidTransform,
    width: usize,
    height: usize,
) -> FlowGrid {
    let n = points.points.len();
    let mut x = vec![0.0; n];
    let mut y = vec![0.0; n];
    let mut valid = vec![false; n];
    for (i, p) in points.points.iter().enumerate() {
        let q = k * transform.apply(p);
        if q.z > EPS_Z {
            let u = q.x / q.z;
            let v = q.y / q.z;
            x[i] = norm_coord(u, width);
            y[i] = norm_coord(v, height);
            valid[i] = true;
        }
    }
    FlowGrid {
        width: points.width,
        height: points.height,
        x,
        y,
        valid,
    }
}

/// Out-of-range sampling behavior for [`bilinear_sample`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Padding {
    /// Taps outside the image read zero.
    Zeros,
    /// Coordinates are clamped to the image border.
    Border,
}

/// Bilinear interpolation of `image` at the flow grid's coordinates.
///
/// Invalid flow pixels produce 0 in every channel. Requires image dimensions
/// of at least 2x2.
pub fn bilinear_sample(image: &Grid, flow: &FlowGrid, padding: Padding) -> Result<Grid> {
    if image.width() < 2 || image.height() < 2 {
        return Err(Error::precondition("bilinear sampling needs dims >= 2x2"));
    }
    let (w, h, c) = (image.width(), image.height(), image.channels());
    let (ow, oh) = (flow.width, flow.height);
    let mut out = vec![0.0; ow * oh * c];
    for i in 0..ow * oh {
        if !flow.valid[i] {
            continue;
        }
        let u = (flow.x[i] + 1.0) * (w as f64 - 1.0) / 2.0;
        let v = (flow.y[i] + 1.0) * (h as f64 - 1.0) / 2.0;
        let taps = bilinear_taps(u, v, w, h, padding);
        for ch in 0..c {
            let plane = image.channel(ch);
            let mut acc = 0.0;
            for &(ix, iy, wt) in &taps {
                if ix >= 0 && iy >= 0 && (ix as usize) < w && (iy as usize) < h {
                    acc += wt * plane[iy as usize * w + ix as usize];
                }
            }
            out[(ch * oh + i / ow) * ow + i % ow] = acc;
        }
    }
    Ok(Grid::from_raw(ow, oh, c, out))
}

/// The four taps (x, y, weight) of bilinear interpolation at (u, v).
/// Border padding clamps coordinates first, so its taps are always in range;
/// zeros padding may return out-of-range taps that the caller skips.
pub(crate) fn bilinear_taps(
    u: f64,
    v: f64,
    w: usize,
    h: usize,
    padding: Padding,
) -> [(isize, isize, f64); 4] {
    let (u, v) = match padding {
        Padding::Border => (u.clamp(0.0, w as f64 - 1.0), v.clamp(0.0, h as f64 - 1.0)),
        Padding::Zeros => (u, v),
    };
    let mut x0 = u.floor();
    let mut y0 = v.floor();
    // Keep the cell interior for exact right/bottom edge coordinates.
    if padding == Padding::Border {
        if x0 > w as f64 - 2.0 {
            x0 = w as f64 - 2.0;
        }
        if y0 > h as f64 - 2.0 {
            y0 = h as f64 - 2.0;
        }
    }
    let fx = u - x0;
    let fy = v - y0;
    let (x0, y0) = (x0 as isize, y0 as isize);
    [
        (x0, y0, (1.0 - fx) * (1.0 - fy)),
        (x0 + 1, y0, fx * (1.0 - fy)),
        (x0, y0 + 1, (1.0 - fx) * fy),
        (x0 + 1, y0 + 1, fx * fy),
    ]
}

/// Transfer a translation between intrinsics so the product is preserved:
/// returns `t' = K_alt^-1 K t`, which satisfies `K_alt t' = K t`.
pub fn kt_transfer(
    k: &Matrix3<f64>,
    t: &Vector3<f64>,
    k_alt: &Matrix3<f64>,
) -> Result<Vector3<f64>> {
    let k_alt_inv = invert_k(k_alt)?;
    Ok(k_alt_inv * (k * t))
}

//! Seedable weather augmentations: snow, sun flare, fog and rain, each
//! gated by an independent probability draw.
//!
//! The random stream is a ChaCha8 generator seeded from the config, so the
//! same (image, config) pair always produces bitwise-identical output. The
//! effects use the simple closed forms documented on [`apply_effect`], not
//! any third-party library's exact math.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::Grid;

/// Inclusive parameter range.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct Range {
    pub lo: f64,
    pub hi: f64,
}

impl Range {
    pub const fn new(lo: f64, hi: f64) -> Self {
        Self { lo, hi }
    }

    fn sample(&self, rng: &mut ChaCha8Rng) -> f64 {
        if self.lo == self.hi {
            self.lo
        } else {
            rng.random_range(self.lo..self.hi)
        }
    }
}

/// Configuration for [`augment`]: one gate probability shared by all four
/// effects plus per-effect parameter ranges.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WeatherConfig {
    /// Probability that each effect fires (independently).
    pub p_each: f64,
    pub seed: u64,
    pub fog_coefficient: Range,
    pub rain_count: Range,
    pub rain_length: Range,
    /// Streak slant in radians from vertical.
    pub rain_angle: Range,
    pub snow_threshold: Range,
    pub snow_factor: Range,
    /// Flare center as fractions of width/height.
    pub flare_center_x: Range,
    pub flare_center_y: Range,
    /// Flare radius as a fraction of the image diagonal.
    pub flare_radius: Range,
    pub flare_intensity: Range,
}

impl Default for WeatherConfig {
    fn default() -> Self {
        Self {
            p_each: 0.3,
            seed: 0,
            fog_coefficient: Range::new(0.1, 0.45),
            rain_count: Range::new(20.0, 60.0),
            rain_length: Range::new(6.0, 14.0),
            rain_angle: Range::new(-0.35, 0.35),
            snow_threshold: Range::new(0.55, 0.75),
            snow_factor: Range::new(1.15, 1.5),
            flare_center_x: Range::new(0.2, 0.8),
            flare_center_y: Range::new(0.05, 0.45),
            flare_radius: Range::new(0.15, 0.4),
            flare_intensity: Range::new(0.3, 0.7),
        }
    }
}

impl WeatherConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.p_each) {
            return Err(Error::precondition("p_each must lie in [0, 1]"));
        }
        for (name, r) in [
            ("fog_coefficient", self.fog_coefficient),
            ("rain_count", self.rain_count),
            ("rain_length", self.rain_length),
            ("rain_angle", self.rain_angle),
            ("snow_threshold", self.snow_threshold),
            ("snow_factor", self.snow_factor),
            ("flare_center_x", self.flare_center_x),
            ("flare_center_y", self.flare_center_y),
            ("flare_radius", self.flare_radius),
            ("flare_intensity", self.flare_intensity),
        ] {
            if !(r.lo.is_finite() && r.hi.is_finite()) || r.lo > r.hi {
                return Err(Error::precondition(format!("empty range for {name}")));
            }
        }
        Ok(())
    }
}

/// The four weather effects, in their fixed application order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Effect {
    Snow,
    Flare,
    Fog,
    Rain,
}

pub const EFFECT_ORDER: [Effect; 4] = [Effect::Snow, Effect::Flare, Effect::Fog, Effect::Rain];

/// Concrete parameters of one applied effect.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "effect", rename_all = "snake_case")]
pub enum EffectParams {
    Snow { threshold: f64, factor: f64 },
    Flare { center_x: f64, center_y: f64, radius: f64, intensity: f64 },
    Fog { coefficient: f64 },
    Rain { count: usize, length: f64, angle: f64, streaks: Vec<(f64, f64)> },
}

const RAIN_COLOR: f64 = 0.8;
const RAIN_OPACITY: f64 = 0.5;
const RAIN_DIM: f64 = 0.9;
const LUMA: [f64; 3] = [0.299, 0.587, 0.114];

/// Apply one effect with explicit parameters to a 3-channel image in [0, 1].
///
/// - fog: `out = (1 - beta) * in + beta`, a uniform white blend.
/// - rain: anti-aliased streaks of gray 0.8 at 0.5 opacity, then the whole
///   image is dimmed by 0.9.
/// - snow: pixels with luma above the threshold are brightened by the factor
///   (output clamped to 1).
/// - flare: additive white radial falloff `max(0, 1 - d/radius) * intensity`.
pub fn apply_effect(image: &Grid, params: &EffectParams) -> Result<Grid> {
    if image.channels() != 3 {
        return Err(Error::precondition("weather effects need 3-channel input"));
    }
    let (w, h, _) = image.shape();
    let mut out = image.clone();
    match params {
        EffectParams::Fog { coefficient } => {
            for v in out.data_mut() {
                *v = ((1.0 - coefficient) * *v + coefficient).clamp(0.0, 1.0);
            }
        }
        EffectParams::Snow { threshold, factor } => {
            for y in 0..h {
                for x in 0..w {
                    let luma: f64 = (0..3).map(|c| LUMA[c] * image.at(x, y, c)).sum();
                    if luma > *threshold {
                        for c in 0..3 {
                            out.set(x, y, c, (image.at(x, y, c) * factor).clamp(0.0, 1.0));
                        }
                    }
                }
            }
        }
        EffectParams::Flare {
            center_x,
            center_y,
            radius,
            intensity,
        } => {
            let cx = center_x * (w as f64 - 1.0);
            let cy = center_y * (h as f64 - 1.0);
            let r = radius * ((w * w + h * h) as f64).sqrt();
            for y in 0..h {
                for x in 0..w {
                    let d = ((x as f64 - cx).powi(2) + (y as f64 - cy).powi(2)).sqrt();
                    let add = (1.0 - d / r).max(0.0) * intensity;
                    if add > 0.0 {
                        for c in 0..3 {
                            out.set(x, y, c, (out.at(x, y, c) + add).clamp(0.0, 1.0));
                        }
                    }
                }
            }
        }
        EffectParams::Rain {
            length,
            angle,
            streaks,
            ..
        } => {
            let (dx, dy) = (angle.sin(), angle.cos());
            for &(sx, sy) in streaks {
                let (ex, ey) = (sx + dx * length, sy + dy * length);
                draw_streak(&mut out, sx, sy, ex, ey);
            }
            for v in out.data_mut() {
                *v = (*v * RAIN_DIM).clamp(0.0, 1.0);
            }
        }
    }
    Ok(out)
}

/// Rasterize one anti-aliased streak: pixels within unit distance of the
/// segment are alpha-blended toward the rain gray, alpha tapering linearly
/// with distance.
fn draw_streak(img: &mut Grid, x0: f64, y0: f64, x1: f64, y1: f64) {
    let (w, h) = (img.width(), img.height());
    let min_x = (x0.min(x1).floor() as isize - 1).max(0) as usize;
    let max_x = (x0.max(x1).ceil() as isize + 1).clamp(0, w as isize - 1) as usize;
    let min_y = (y0.min(y1).floor() as isize - 1).max(0) as usize;
    let max_y = (y0.max(y1).ceil() as isize + 1).clamp(0, h as isize - 1) as usize;
    let (vx, vy) = (x1 - x0, y1 - y0);
    let len2 = vx * vx + vy * vy;
    for y in min_y..=max_y {
        for x in min_x..=max_x {
            let (px, py) = (x as f64 - x0, y as f64 - y0);
            let t = if len2 > 0.0 {
                ((px * vx + py * vy) / len2).clamp(0.0, 1.0)
            } else {
                0.0
            };
            let (cx, cy) = (px - t * vx, py - t * vy);
            let dist = (cx * cx + cy * cy).sqrt();
            let alpha = (1.0 - dist).clamp(0.0, 1.0) * RAIN_OPACITY;
            if alpha > 0.0 {
                for c in 0..3 {
                    let v = img.at(x, y, c);
                    img.set(x, y, c, v + alpha * (RAIN_COLOR - v));
                }
            }
        }
    }
}

/// Apply the four effects in fixed order (snow, flare, fog, rain), each
/// fired independently with probability `p_each`. Gate variates and effect
/// parameters come from one ChaCha8 stream seeded by `cfg.seed`; parameters
/// are drawn only for effects that fire.
pub fn augment(image: &Grid, cfg: &WeatherConfig) -> Result<(Grid, Vec<EffectParams>)> {
    cfg.validate()?;
    if image.channels() != 3 {
        return Err(Error::precondition("weather effects need 3-channel input"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut out = image.clone();
    let mut applied = Vec::new();
    for effect in EFFECT_ORDER {
        let gate: f64 = rng.random();
        if gate >= cfg.p_each {
            continue;
        }
        let params = match effect {
            Effect::Snow => EffectParams::Snow {
                threshold: cfg.snow_threshold.sample(&mut rng),
                factor: cfg.snow_factor.sample(&mut rng),
            },
            Effect::Flare => EffectParams::Flare {
                center_x: cfg.flare_center_x.sample(&mut rng),
                center_y: cfg.flare_center_y.sample(&mut rng),
                radius: cfg.flare_radius.sample(&mut rng),
                intensity: cfg.flare_intensity.sample(&mut rng),
            },
            Effect::Fog => EffectParams::Fog {
                coefficient: cfg.fog_coefficient.sample(&mut rng),
            },
            Effect::Rain => {
                let count = cfg.rain_count.sample(&mut rng).round().max(0.0) as usize;
                let length = cfg.rain_length.sample(&mut rng);
                let angle = cfg.rain_angle.sample(&mut rng);
                let streaks = (0..count)
                    .map(|_| {
                        (
                            rng.random_range(0.0..image.width() as f64),
                            rng.random_range(0.0..image.height() as f64),
                        )
                    })
                    .collect();
                EffectParams::Rain {
                    count,
                    length,
                    angle,
                    streaks,
                }
            }
        };
        out = apply_effect(&out, &params)?;
        applied.push(params);
    }
    Ok((out, applied))
}

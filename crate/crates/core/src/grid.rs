//! Dense 2-D multi-channel grids and image pyramids.
//!
//! `Grid` is the substrate of every other module: images, depth maps,
//! disparity maps and per-pixel loss maps are all grids of finite `f64`
//! values. Storage is planar (channel-major): channel `c` of a `W x H` grid
//! occupies `data[c*W*H .. (c+1)*W*H]` in row-major order, so
//! `at(x, y, c) = data[(c*height + y)*width + x]`.

use crate::error::{Error, Result};

/// A `width x height` grid with `channels` planes of finite real values.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    width: usize,
    height: usize,
    channels: usize,
    data: Vec<f64>,
}

impl Grid {
    /// Grid filled with a constant value.
    pub fn filled(width: usize, height: usize, channels: usize, value: f64) -> Result<Self> {
        check_shape(width, height, channels)?;
        if !value.is_finite() {
            return Err(Error::data("fill value is not finite"));
        }
        Ok(Self {
            width,
            height,
            channels,
            data: vec![value; width * height * channels],
        })
    }

    /// Zero-filled grid.
    pub fn zeros(width: usize, height: usize, channels: usize) -> Result<Self> {
        Self::filled(width, height, channels, 0.0)
    }

    /// Grid from planar channel-major data (length must be `w*h*c`, all finite).
    pub fn from_data(width: usize, height: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        check_shape(width, height, channels)?;
        if data.len() != width * height * channels {
            return Err(Error::dims(format!(
                "data length {} does not match {}x{}x{}",
                data.len(),
                width,
                height,
                channels
            )));
        }
        if !data.iter().all(|v| v.is_finite()) {
            return Err(Error::data("grid contains non-finite values"));
        }
        Ok(Self {
            width,
            height,
            channels,
            data,
        })
    }

    /// Grid computed per element from `(x, y, c)`.
    pub fn from_fn(
        width: usize,
        height: usize,
        channels: usize,
        mut f: impl FnMut(usize, usize, usize) -> f64,
    ) -> Result<Self> {
        let mut data = Vec::with_capacity(width * height * channels);
        for c in 0..channels {
            for y in 0..height {
                for x in 0..width {
                    data.push(f(x, y, c));
                }
            }
        }
        Self::from_data(width, height, channels, data)
    }

    /// Internal constructor for values produced by arithmetic that is already
    /// finite by construction. Debug builds still verify.
    pub(crate) fn from_raw(width: usize, height: usize, channels: usize, data: Vec<f64>) -> Self {
        debug_assert_eq!(data.len(), width * height * channels);
        debug_assert!(data.iter().all(|v| v.is_finite()));
        Self {
            width,
            height,
            channels,
            data,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    /// (width, height, channels)
    pub fn shape(&self) -> (usize, usize, usize) {
        (self.width, self.height, self.channels)
    }

    pub fn pixel_count(&self) -> usize {
        self.width * self.height
    }

    #[inline]
    pub fn idx(&self, x: usize, y: usize, c: usize) -> usize {
        debug_assert!(x < self.width && y < self.height && c < self.channels);
        (c * self.height + y) * self.width + x
    }

    #[inline]
    pub fn at(&self, x: usize, y: usize, c: usize) -> f64 {
        self.data[self.idx(x, y, c)]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, c: usize, value: f64) {
        let i = self.idx(x, y, c);
        self.data[i] = value;
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    /// One channel plane, row-major.
    pub fn channel(&self, c: usize) -> &[f64] {
        let n = self.width * self.height;
        &self.data[c * n..(c + 1) * n]
    }

    pub fn same_shape(&self, other: &Grid) -> bool {
        self.shape() == other.shape()
    }

    pub fn same_spatial(&self, other: &Grid) -> bool {
        self.width == other.width && self.height == other.height
    }

    /// Mean over all elements, accumulated left to right.
    pub fn mean(&self) -> f64 {
        self.data.iter().sum::<f64>() / self.data.len() as f64
    }

    pub fn min_value(&self) -> f64 {
        self.data.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max_value(&self) -> f64 {
        self.data.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// Elementwise map; `f` must keep values finite.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> Grid {
        Grid::from_raw(
            self.width,
            self.height,
            self.channels,
            self.data.iter().map(|&v| f(v)).collect(),
        )
    }
}

fn check_shape(width: usize, height: usize, channels: usize) -> Result<()> {
    if width == 0 || height == 0 || channels == 0 {
        return Err(Error::precondition(format!(
            "grid dimensions must be >= 1, got {}x{}x{}",
            width, height, channels
        )));
    }
    Ok(())
}

/// Image pyramid: level 0 is the source, each level halves both dimensions.
#[derive(Debug, Clone)]
pub struct Pyramid {
    levels: Vec<Grid>,
}

impl Pyramid {
    pub fn levels(&self) -> &[Grid] {
        &self.levels
    }

    pub fn level(&self, s: usize) -> &Grid {
        &self.levels[s]
    }

    pub fn num_levels(&self) -> usize {
        self.levels.len()
    }
}

/// Halve both dimensions by 2x2 block averaging. Mean-preserving.
pub fn downsample_half(grid: &Grid) -> Result<Grid> {
    if grid.width() % 2 != 0 || grid.height() % 2 != 0 {
        return Err(Error::precondition(format!(
            "dimensions {}x{} not divisible by 2",
            grid.width(),
            grid.height()
        )));
    }
    let (w, h, c) = (grid.width() / 2, grid.height() / 2, grid.channels());
    let mut data = Vec::with_capacity(w * h * c);
    for ch in 0..c {
        for y in 0..h {
            for x in 0..w {
                let sum = grid.at(2 * x, 2 * y, ch)
                    + grid.at(2 * x + 1, 2 * y, ch)
                    + grid.at(2 * x, 2 * y + 1, ch)
                    + grid.at(2 * x + 1, 2 * y + 1, ch);
                data.push(sum * 0.25);
            }
        }
    }
    Ok(Grid::from_raw(w, h, c, data))
}

/// Build a pyramid with `num_levels` levels by repeated 2x2 block averaging.
///
/// Requires width and height divisible by `2^(num_levels - 1)`.
pub fn build_pyramid(image: &Grid, num_levels: usize) -> Result<Pyramid> {
    if num_levels == 0 {
        return Err(Error::precondition("pyramid needs at least one level"));
    }
    let factor = 1usize << (num_levels - 1);
    if image.width() % factor != 0 || image.height() % factor != 0 {
        return Err(Error::precondition(format!(
            "dimensions {}x{} not divisible by 2^{}",
            image.width(),
            image.height(),
            num_levels - 1
        )));
    }
    let mut levels = Vec::with_capacity(num_levels);
    levels.push(image.clone());
    for _ in 1..num_levels {
        let next = downsample_half(levels.last().expect("non-empty"))?;
        levels.push(next);
    }
    Ok(Pyramid { levels })
}

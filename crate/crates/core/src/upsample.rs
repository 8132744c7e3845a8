//! Sub-pixel (pixel-shuffle) channel rearrangement and nearest-neighbor
//! upsampling — the two decoder upsampling paths.

use crate::error::{Error, Result};
use crate::grid::Grid;

/// Rearrange `C*r^2` channels into an `r`-times larger spatial grid:
/// `out[c][r*h + i][r*w + j] = in[c*r^2 + i*r + j][h][w]`.
pub fn pixel_shuffle(x: &Grid, r: usize) -> Result<Grid> {
    if r == 0 {
        return Err(Error::precondition("upscale factor must be >= 1"));
    }
    let r2 = r * r;
    if x.channels() % r2 != 0 {
        return Err(Error::precondition(format!(
            "channels {} not divisible by r^2 = {}",
            x.channels(),
            r2
        )));
    }
    let (w, h) = (x.width(), x.height());
    let (ow, oh, oc) = (w * r, h * r, x.channels() / r2);
    let mut out = Grid::zeros(ow, oh, oc)?;
    for c in 0..oc {
        for y in 0..h {
            for xx in 0..w {
                for i in 0..r {
                    for j in 0..r {
                        let v = x.at(xx, y, c * r2 + i * r + j);
                        out.set(r * xx + j, r * y + i, c, v);
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Exact inverse of [`pixel_shuffle`]; spatial dims must be divisible by `r`.
pub fn pixel_unshuffle(x: &Grid, r: usize) -> Result<Grid> {
    if r == 0 {
        return Err(Error::precondition("downscale factor must be >= 1"));
    }
    if x.width() % r != 0 || x.height() % r != 0 {
        return Err(Error::precondition(format!(
            "dims {}x{} not divisible by r = {}",
            x.width(),
            x.height(),
            r
        )));
    }
    let r2 = r * r;
    let (ow, oh, oc) = (x.width() / r, x.height() / r, x.channels() * r2);
    let mut out = Grid::zeros(ow, oh, oc)?;
    for c in 0..x.channels() {
        for y in 0..oh {
            for xx in 0..ow {
                for i in 0..r {
                    for j in 0..r {
                        let v = x.at(r * xx + j, r * y + i, c);
                        out.set(xx, y, c * r2 + i * r + j, v);
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Nearest-neighbor upsampling: `out[c][h][w] = in[c][h/factor][w/factor]`.
pub fn nearest_upsample(x: &Grid, factor: usize) -> Result<Grid> {
    if factor == 0 {
        return Err(Error::precondition("factor must be >= 1"));
    }
    let (w, h, c) = x.shape();
    Grid::from_fn(w * factor, h * factor, c, |px, py, ch| {
        x.at(px / factor, py / factor, ch)
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Brute-force oracle evaluating the index formula directly.
    fn shuffle_oracle(x: &Grid, r: usize) -> Grid {
        let r2 = r * r;
        let oc = x.channels() / r2;
        Grid::from_fn(x.width() * r, x.height() * r, oc, |ox, oy, c| {
            let (h, i) = (oy / r, oy % r);
            let (w, j) = (ox / r, ox % r);
            x.at(w, h, c * r2 + i * r + j)
        })
        .unwrap()
    }

    #[test]
    fn shuffle_2x2_layout_example() {
        let x = Grid::from_data(1, 1, 4, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let out = pixel_shuffle(&x, 2).unwrap();
        assert_eq!(out.shape(), (2, 2, 1));
        assert_eq!(out.data(), &[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(out, shuffle_oracle(&x, 2));
        let back = pixel_unshuffle(&out, 2).unwrap();
        assert_eq!(back, x);
    }

    #[test]
    fn shuffle_shape_arithmetic() {
        let x = Grid::zeros(6, 4, 8).unwrap();
        let out = pixel_shuffle(&x, 2).unwrap();
        assert_eq!(out.shape(), (12, 8, 2));
    }

    #[test]
    fn factor_one_is_identity() {
        let x = Grid::from_fn(3, 2, 2, |x, y, c| (x + 10 * y + 100 * c) as f64).unwrap();
        assert_eq!(pixel_shuffle(&x, 1).unwrap(), x);
        assert_eq!(pixel_unshuffle(&x, 1).unwrap(), x);
        assert_eq!(nearest_upsample(&x, 1).unwrap(), x);
    }

    #[test]
    fn error_paths() {
        let x = Grid::zeros(2, 2, 5).unwrap();
        assert!(pixel_shuffle(&x, 3).is_err());
        let odd = Grid::zeros(3, 2, 1).unwrap();
        assert!(pixel_unshuffle(&odd, 2).is_err());
    }

    #[test]
    fn nearest_hand_examples() {
        let x = Grid::filled(1, 1, 1, 7.0).unwrap();
        let out = nearest_upsample(&x, 2).unwrap();
        assert_eq!(out.data(), &[7.0; 4]);
        let row = Grid::from_data(2, 1, 1, vec![1.0, 2.0]).unwrap();
        let out = nearest_upsample(&row, 2).unwrap();
        assert_eq!(out.shape(), (4, 2, 1));
        assert_eq!(out.data(), &[1.0, 1.0, 2.0, 2.0, 1.0, 1.0, 2.0, 2.0]);
    }

    #[test]
    fn nearest_preserves_extrema() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = Grid::from_fn(5, 3, 2, |_, _, _| rng.random_range(-4.0..4.0)).unwrap();
        let out = nearest_upsample(&x, 3).unwrap();
        assert_eq!(out.min_value(), x.min_value());
        assert_eq!(out.max_value(), x.max_value());
    }

    proptest! {
        #[test]
        fn shuffle_round_trip_and_sum(
            r in 1usize..4,
            seed in 0u64..200,
            w in 1usize..5,
            h in 1usize..5,
            base in 1usize..3,
        ) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let c = base * r * r;
            let x = Grid::from_fn(w, h, c, |_, _, _| rng.random_range(-1.0..1.0)).unwrap();
            let shuffled = pixel_shuffle(&x, r).unwrap();
            // Value multiset preserved: count and sum are identical.
            prop_assert_eq!(shuffled.data().len(), x.data().len());
            let s1: f64 = x.data().iter().sum();
            let s2: f64 = shuffled.data().iter().sum();
            prop_assert!((s1 - s2).abs() < 1e-12);
            prop_assert_eq!(&shuffled, &shuffle_oracle(&x, r));
            let back = pixel_unshuffle(&shuffled, r).unwrap();
            prop_assert_eq!(back, x);
        }
    }
}

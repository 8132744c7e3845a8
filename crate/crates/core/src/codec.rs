//! Image file I/O: binary PPM (P6), binary PGM (P5) and PFM.
//!
//! 8-bit formats map to reals as `v / 255`; writing rounds half away from
//! zero. PFM payloads are IEEE-754 `f32`: the header scale's sign encodes
//! endianness (negative = little-endian), its magnitude is ignored, and rows
//! are stored bottom-up on disk but normalized to top-down in memory.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::grid::Grid;

/// File format selector for [`read_image`] and [`write_map`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ImageKind {
    /// Binary color PPM, magic `P6`, maxval 255.
    PpmColor,
    /// Binary grayscale PGM, magic `P5`, maxval 255.
    PgmGray,
    /// PFM, magic `PF` (3 channels) or `Pf` (1 channel).
    PfmFloat,
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn new(bytes: &'a [u8]) -> Self {
        Self { bytes, pos: 0 }
    }

    fn fail<T>(&self, message: impl Into<String>) -> Result<T> {
        Err(Error::Format {
            offset: self.pos,
            message: message.into(),
        })
    }

    fn peek(&self) -> Option<u8> {
        self.bytes.get(self.pos).copied()
    }

    /// Skip whitespace and `#` comment lines.
    fn skip_space(&mut self) {
        while let Some(b) = self.peek() {
            if b.is_ascii_whitespace() {
                self.pos += 1;
            } else if b == b'#' {
                while let Some(c) = self.peek() {
                    self.pos += 1;
                    if c == b'\n' {
                        break;
                    }
                }
            } else {
                break;
            }
        }
    }

    fn token(&mut self) -> Result<&'a str> {
        self.skip_space();
        let start = self.pos;
        while let Some(b) = self.peek() {
            if b.is_ascii_whitespace() {
                break;
            }
            self.pos += 1;
        }
        if self.pos == start {
            return self.fail("unexpected end of header");
        }
        std::str::from_utf8(&self.bytes[start..self.pos])
            .map_err(|_| Error::Format {
                offset: start,
                message: "header token is not ASCII".into(),
            })
    }

    fn usize_token(&mut self, what: &str) -> Result<usize> {
        let start_err = self.pos;
        let tok = self.token()?;
        tok.parse::<usize>().map_err(|_| Error::Format {
            offset: start_err,
            message: format!("invalid {what}: {tok:?}"),
        })
    }

    /// Consume exactly one whitespace byte separating header from payload.
    fn expect_single_space(&mut self) -> Result<()> {
        match self.peek() {
            Some(b) if b.is_ascii_whitespace() => {
                self.pos += 1;
                Ok(())
            }
            _ => self.fail("expected single whitespace before payload"),
        }
    }

    fn rest(&self) -> &'a [u8] {
        &self.bytes[self.pos..]
    }
}

/// Read an image file into a grid. `kind` must match the file's magic.
pub fn read_image(path: impl AsRef<Path>, kind: ImageKind) -> Result<Grid> {
    let bytes = fs::read(path.as_ref())?;
    match kind {
        ImageKind::PpmColor => read_netpbm(&bytes, b"P6", 3),
        ImageKind::PgmGray => read_netpbm(&bytes, b"P5", 1),
        ImageKind::PfmFloat => read_pfm(&bytes),
    }
}

fn read_netpbm(bytes: &[u8], magic: &[u8], channels: usize) -> Result<Grid> {
    let mut cur = Cursor::new(bytes);
    let tok = cur.token()?;
    if tok.as_bytes() != magic {
        return Err(Error::Format {
            offset: 0,
            message: format!(
                "expected magic {:?}, found {:?}",
                String::from_utf8_lossy(magic),
                tok
            ),
        });
    }
    let width = cur.usize_token("width")?;
    let height = cur.usize_token("height")?;
    let maxval_pos = cur.pos;
    let maxval = cur.usize_token("maxval")?;
    if maxval != 255 {
        return Err(Error::Format {
            offset: maxval_pos,
            message: format!("only maxval 255 is supported, got {maxval}"),
        });
    }
    cur.expect_single_space()?;
    let needed = width * height * channels;
    let payload = cur.rest();
    if payload.len() < needed {
        return Err(Error::Format {
            offset: bytes.len(),
            message: format!(
                "truncated payload: need {needed} bytes, have {}",
                payload.len()
            ),
        });
    }
    // Interleaved on disk, planar in memory.
    let mut data = vec![0.0f64; needed];
    let plane = width * height;
    for p in 0..plane {
        for c in 0..channels {
            data[c * plane + p] = payload[p * channels + c] as f64 / 255.0;
        }
    }
    Grid::from_data(width, height, channels, data)
}

fn read_pfm(bytes: &[u8]) -> Result<Grid> {
    let mut cur = Cursor::new(bytes);
    let magic = cur.token()?;
    let channels = match magic {
        "PF" => 3,
        "Pf" => 1,
        other => {
            return Err(Error::Format {
                offset: 0,
                message: format!("expected PFM magic PF or Pf, found {other:?}"),
            })
        }
    };
    let width = cur.usize_token("width")?;
    let height = cur.usize_token("height")?;
    let scale_pos = cur.pos;
    let scale_tok = cur.token()?;
    let scale: f64 = scale_tok.parse().map_err(|_| Error::Format {
        offset: scale_pos,
        message: format!("invalid scale: {scale_tok:?}"),
    })?;
    if scale == 0.0 || !scale.is_finite() {
        return Err(Error::Format {
            offset: scale_pos,
            message: "scale must be finite and non-zero".into(),
        });
    }
    let little_endian = scale < 0.0;
    cur.expect_single_space()?;
    let payload = cur.rest();
    let data_offset = cur.pos;
    let needed = width * height * channels * 4;
    if payload.len() < needed {
        return Err(Error::Format {
            offset: bytes.len(),
            message: format!(
                "truncated payload: need {needed} bytes, have {}",
                payload.len()
            ),
        });
    }
    let plane = width * height;
    let mut data = vec![0.0f64; plane * channels];
    for row in 0..height {
        // Rows are stored bottom-up.
        let y = height - 1 - row;
        for x in 0..width {
            for c in 0..channels {
                let i = ((row * width + x) * channels + c) * 4;
                let raw: [u8; 4] = payload[i..i + 4].try_into().expect("length checked");
                let v = if little_endian {
                    f32::from_le_bytes(raw)
                } else {
                    f32::from_be_bytes(raw)
                };
                if !v.is_finite() {
                    return Err(Error::Data(format!(
                        "non-finite PFM value at byte {}",
                        data_offset + i
                    )));
                }
                data[(c * height + y) * width + x] = v as f64;
            }
        }
    }
    Grid::from_data(width, height, channels, data)
}

/// Write a single-channel grid as PGM or PFM.
///
/// PGM quantizes with half-away-from-zero rounding after clamping to [0, 1];
/// PFM stores `f32` little-endian (header scale -1.0), bottom-up.
pub fn write_map(grid: &Grid, path: impl AsRef<Path>, kind: ImageKind) -> Result<()> {
    match kind {
        ImageKind::PgmGray => {
            if grid.channels() != 1 {
                return Err(Error::precondition(format!(
                    "pgm output requires 1 channel, grid has {}",
                    grid.channels()
                )));
            }
            let mut out = Vec::with_capacity(32 + grid.pixel_count());
            write!(out, "P5\n{} {}\n255\n", grid.width(), grid.height())?;
            for y in 0..grid.height() {
                for x in 0..grid.width() {
                    out.push(quantize_u8(grid.at(x, y, 0)));
                }
            }
            fs::write(path, out)?;
            Ok(())
        }
        ImageKind::PfmFloat => {
            if grid.channels() != 1 {
                return Err(Error::precondition(format!(
                    "pfm output requires 1 channel, grid has {}",
                    grid.channels()
                )));
            }
            let mut out = Vec::with_capacity(32 + grid.pixel_count() * 4);
            write!(out, "Pf\n{} {}\n-1.0\n", grid.width(), grid.height())?;
            for row in 0..grid.height() {
                let y = grid.height() - 1 - row;
                for x in 0..grid.width() {
                    out.extend_from_slice(&(grid.at(x, y, 0) as f32).to_le_bytes());
                }
            }
            fs::write(path, out)?;
            Ok(())
        }
        ImageKind::PpmColor => Err(Error::precondition(
            "write_map supports pgm-gray and pfm-float; use write_ppm for color",
        )),
    }
}

/// Write a 3-channel grid as binary PPM (P6).
pub fn write_ppm(grid: &Grid, path: impl AsRef<Path>) -> Result<()> {
    if grid.channels() != 3 {
        return Err(Error::precondition(format!(
            "ppm output requires 3 channels, grid has {}",
            grid.channels()
        )));
    }
    let mut out = Vec::with_capacity(32 + grid.pixel_count() * 3);
    write!(out, "P6\n{} {}\n255\n", grid.width(), grid.height())?;
    for y in 0..grid.height() {
        for x in 0..grid.width() {
            for c in 0..3 {
                out.push(quantize_u8(grid.at(x, y, c)));
            }
        }
    }
    fs::write(path, out)?;
    Ok(())
}

fn quantize_u8(v: f64) -> u8 {
    // f64::round is half-away-from-zero.
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

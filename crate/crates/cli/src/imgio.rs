//! Extension-driven image reading and writing on top of the core codecs.

use std::path::Path;

use anyhow::{bail, Context, Result};
use viewsynth::codec::{read_image, write_map, write_ppm, ImageKind};
use viewsynth::Grid;

pub fn kind_from_extension(path: &Path) -> Result<ImageKind> {
    match path
        .extension()
        .and_then(|e| e.to_str())
        .map(str::to_ascii_lowercase)
        .as_deref()
    {
        Some("ppm") => Ok(ImageKind::PpmColor),
        Some("pgm") => Ok(ImageKind::PgmGray),
        Some("pfm") => Ok(ImageKind::PfmFloat),
        other => bail!(
            "cannot infer image format of {} (extension {:?}); expected .ppm, .pgm or .pfm",
            path.display(),
            other
        ),
    }
}

pub fn read_auto(path: &Path) -> Result<(Grid, ImageKind)> {
    let kind = kind_from_extension(path)?;
    let grid = read_image(path, kind).with_context(|| format!("reading {}", path.display()))?;
    Ok((grid, kind))
}

/// Write a grid in the closest format to the original input kind: color
/// grids as PPM, single-channel grids as PGM or PFM.
pub fn write_like(grid: &Grid, path: &Path, source_kind: ImageKind) -> Result<()> {
    match (grid.channels(), source_kind) {
        (3, _) => write_ppm(grid, path)?,
        (1, ImageKind::PgmGray) => write_map(grid, path, ImageKind::PgmGray)?,
        (1, _) => write_map(grid, path, ImageKind::PfmFloat)?,
        (c, _) => bail!("cannot write a {c}-channel grid as an image"),
    }
    Ok(())
}

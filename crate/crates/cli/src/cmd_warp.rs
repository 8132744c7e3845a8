use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::Args;
use nalgebra::Vector3;

use viewsynth::camera::{
    assemble_k, backproject, bilinear_sample, compose_transform, invert_k, project, Intrinsics,
    Padding,
};
use viewsynth::codec::{read_image, write_map, ImageKind};
use viewsynth::loss::{photometric_error, LossConfig};
use viewsynth::Grid;

use crate::imgio::{read_auto, write_like};
use crate::manifest::{emit, ManifestBuilder};

#[derive(Args)]
pub struct WarpArgs {
    /// Image to resample (.ppm, .pgm or .pfm).
    #[arg(long)]
    target: PathBuf,
    /// Depth map in scene units (.pfm, single channel, same size).
    #[arg(long)]
    depth: PathBuf,
    /// Pose as axis-angle + translation: rx ry rz tx ty tz.
    #[arg(long, num_args = 6, allow_negative_numbers = true)]
    pose: Vec<f64>,
    /// Normalized intrinsics: fx fy cx cy.
    #[arg(long, num_args = 4, default_values_t = [0.58, 1.92, 0.5, 0.5])]
    intrinsics: Vec<f64>,
    /// Invert the pose (use the source-to-target transform).
    #[arg(long)]
    invert: bool,
    #[arg(long, default_value = "border")]
    padding: String,
    /// Reference image for the mean photometric error report.
    #[arg(long = "ref")]
    reference: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

pub fn run(args: WarpArgs) -> Result<()> {
    let padding = parse_padding(&args.padding)?;
    let mut manifest = ManifestBuilder::new(
        "warp",
        serde_json::json!({
            "target": args.target.display().to_string(),
            "depth": args.depth.display().to_string(),
            "pose": args.pose,
            "intrinsics": args.intrinsics,
            "invert": args.invert,
            "padding": args.padding,
            "out": args.out.display().to_string(),
        }),
    );
    manifest.digest_input(&args.target)?;
    manifest.digest_input(&args.depth)?;

    let (image, kind) = read_auto(&args.target)?;
    let depth = read_image(&args.depth, ImageKind::PfmFloat)
        .with_context(|| format!("reading {}", args.depth.display()))?;
    if !depth.same_spatial(&image) || depth.channels() != 1 {
        bail!(
            "depth map must be single-channel at the target size ({}x{})",
            image.width(),
            image.height()
        );
    }

    let intr = Intrinsics::new(
        args.intrinsics[0],
        args.intrinsics[1],
        args.intrinsics[2],
        args.intrinsics[3],
    )?;
    let k = assemble_k(&intr, image.width(), image.height(), 0);
    let transform = compose_transform(
        &Vector3::new(args.pose[0], args.pose[1], args.pose[2]),
        &Vector3::new(args.pose[3], args.pose[4], args.pose[5]),
        args.invert,
    );
    let points = backproject(&depth, &invert_k(&k)?)?;
    let flow = project(&points, &k, &transform, image.width(), image.height());
    let warped = bilinear_sample(&image, &flow, padding)?;

    let validity = Grid::from_fn(image.width(), image.height(), 1, |x, y, _| {
        f64::from(flow.in_range(y * image.width() + x))
    })?;

    std::fs::create_dir_all(&args.out)
        .with_context(|| format!("creating {}", args.out.display()))?;
    let warped_path = args.out.join(match kind {
        ImageKind::PpmColor => "warped.ppm",
        ImageKind::PgmGray => "warped.pgm",
        ImageKind::PfmFloat => "warped.pfm",
    });
    write_like(&warped, &warped_path, kind)?;
    let validity_path = args.out.join("validity.pgm");
    write_map(&validity, &validity_path, ImageKind::PgmGray)?;

    let mean_pe = match &args.reference {
        Some(path) => {
            manifest.digest_input(path)?;
            let (reference, _) = read_auto(path)?;
            let pe = photometric_error(&reference, &warped, &LossConfig::default())?;
            Some(pe.mean())
        }
        None => None,
    };

    let manifest = manifest.finish();
    std::fs::write(
        args.out.join("manifest.json"),
        serde_json::to_string_pretty(&manifest)?,
    )?;
    emit(
        &manifest,
        serde_json::json!({
            "warped": warped_path.display().to_string(),
            "validity": validity_path.display().to_string(),
            "valid_fraction": validity.mean(),
            "mean_photometric_error": mean_pe,
        }),
    )
}

pub(crate) fn parse_padding(spec: &str) -> Result<Padding> {
    match spec {
        "border" => Ok(Padding::Border),
        "zeros" => Ok(Padding::Zeros),
        other => bail!("unknown padding mode {other:?} (expected border or zeros)"),
    }
}

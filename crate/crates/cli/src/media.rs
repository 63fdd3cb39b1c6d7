//! Frame and map images on disk.

use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use bsst_core::{Tensor, VideoSequence};
use image::codecs::pnm::{PnmEncoder, PnmSubtype, SampleEncoding};
use image::{ExtendedColorType, ImageEncoder, ImageFormat};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum FrameFormat {
    Png,
    Ppm,
}

impl FrameFormat {
    pub fn extension(self) -> &'static str {
        match self {
            FrameFormat::Png => "png",
            FrameFormat::Ppm => "ppm",
        }
    }
}

pub fn to_u8(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

fn image_err(path: &Path) -> impl FnOnce(image::ImageError) -> CliError + '_ {
    move |e| match e {
        image::ImageError::IoError(io) => CliError::io(path)(io),
        other => CliError::Image {
            path: path.to_path_buf(),
            reason: other.to_string(),
        },
    }
}

/// Image files (`.png`, `.ppm`) in `dir`, sorted by name.
pub fn frame_paths(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(CliError::io(dir))?
        .map(|e| e.map(|e| e.path()).map_err(CliError::io(dir)))
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .filter(|p| {
            p.extension()
                .and_then(|e| e.to_str())
                .is_some_and(|e| matches!(e.to_ascii_lowercase().as_str(), "png" | "ppm"))
        })
        .collect();
    paths.sort();
    Ok(paths)
}

pub fn read_frames(dir: &Path) -> Result<VideoSequence> {
    let paths = frame_paths(dir)?;
    if paths.is_empty() {
        return Err(CliError::Image {
            path: dir.to_path_buf(),
            reason: "no .png or .ppm frames found".into(),
        });
    }
    let mut frames = Vec::with_capacity(paths.len());
    let mut size = None;
    for path in &paths {
        let img = image::open(path).map_err(image_err(path))?.to_rgb8();
        let dims = img.dimensions();
        match size {
            None => size = Some(dims),
            Some(first) if first != dims => {
                return Err(CliError::Image {
                    path: path.clone(),
                    reason: format!(
                        "frame is {}x{}, earlier frames are {}x{}",
                        dims.0, dims.1, first.0, first.1
                    ),
                })
            }
            Some(_) => {}
        }
        let data = img
            .into_raw()
            .into_iter()
            .map(|b| b as f32 / 255.0)
            .collect();
        frames.push(Tensor::new([dims.1 as usize, dims.0 as usize, 3], data)?);
    }
    Ok(VideoSequence::new(Tensor::stack(&frames)?)?)
}

/// Writes an `[H, W, 3]` frame in `[0, 1]`.
pub fn write_frame(path: &Path, frame: &Tensor, format: FrameFormat) -> Result<()> {
    let (h, w, _) = frame.dims3("write_frame")?;
    let bytes: Vec<u8> = frame.data().iter().map(|&v| to_u8(v)).collect();
    match format {
        FrameFormat::Png => image::save_buffer_with_format(
            path,
            &bytes,
            w as u32,
            h as u32,
            ExtendedColorType::Rgb8,
            ImageFormat::Png,
        )
        .map_err(image_err(path)),
        FrameFormat::Ppm => write_pnm(
            path,
            &bytes,
            w,
            h,
            PnmSubtype::Pixmap(SampleEncoding::Binary),
            ExtendedColorType::Rgb8,
        ),
    }
}

/// Writes an `[H, W]` map in `[0, 1]` as binary 8-bit PGM.
pub fn write_pgm(path: &Path, map: &Tensor) -> Result<()> {
    let s = map.shape();
    let bytes: Vec<u8> = map.data().iter().map(|&v| to_u8(v)).collect();
    write_pnm(
        path,
        &bytes,
        s[1],
        s[0],
        PnmSubtype::Graymap(SampleEncoding::Binary),
        ExtendedColorType::L8,
    )
}

fn write_pnm(
    path: &Path,
    bytes: &[u8],
    w: usize,
    h: usize,
    subtype: PnmSubtype,
    color: ExtendedColorType,
) -> Result<()> {
    let file = File::create(path).map_err(CliError::io(path))?;
    PnmEncoder::new(BufWriter::new(file))
        .with_subtype(subtype)
        .write_image(bytes, w as u32, h as u32, color)
        .map_err(image_err(path))
}

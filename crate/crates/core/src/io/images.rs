use std::path::Path;

use image::{ImageBuffer, Luma, Rgb};

use crate::geometry::RgbImage;
use crate::io::IoError;

fn check_size(path: &Path, got: (u32, u32), want: (u32, u32)) -> Result<(), IoError> {
    if got != want {
        return Err(IoError::format(path, format!("image is {}x{}, expected {}x{}", got.0, got.1, want.0, want.1)));
    }
    Ok(())
}

fn open(path: &Path) -> Result<image::DynamicImage, IoError> {
    image::open(path).map_err(|e| match e {
        image::ImageError::IoError(io) => IoError::io(path, io),
        other => IoError::format(path, other.to_string()),
    })
}

fn save<P, C>(path: &Path, img: &ImageBuffer<P, C>) -> Result<(), IoError>
where
    P: image::Pixel + image::PixelWithColorType,
    [P::Subpixel]: image::EncodableLayout,
    C: std::ops::Deref<Target = [P::Subpixel]>,
{
    img.save_with_format(path, image::ImageFormat::Png).map_err(|e| match e {
        image::ImageError::IoError(io) => IoError::io(path, io),
        other => IoError::format(path, other.to_string()),
    })
}

/// 16-bit grayscale depth; raw value `q` means `q * depth_scale` meters
/// and 0 marks an invalid pixel.
pub fn load_depth(path: &Path, width: u32, height: u32, depth_scale: f64) -> Result<Vec<f32>, IoError> {
    let img = open(path)?;
    let Some(img) = img.as_luma16() else {
        return Err(IoError::format(path, "depth must be a 16-bit grayscale image"));
    };
    check_size(path, img.dimensions(), (width, height))?;
    Ok(img.as_raw().iter().map(|&q| (q as f64 * depth_scale) as f32).collect())
}

/// Inverse of [`load_depth`]; depths beyond the 16-bit range are rejected.
pub fn save_depth(path: &Path, depth: &[f32], width: u32, height: u32, depth_scale: f64) -> Result<(), IoError> {
    let mut raw = Vec::with_capacity(depth.len());
    for &d in depth {
        let q = (d as f64 / depth_scale).round();
        if !(0.0..=u16::MAX as f64).contains(&q) {
            return Err(IoError::format(path, format!("depth {d} not representable at scale {depth_scale}")));
        }
        raw.push(q as u16);
    }
    let img = ImageBuffer::<Luma<u16>, _>::from_raw(width, height, raw)
        .ok_or_else(|| IoError::format(path, "depth buffer does not match image size"))?;
    save(path, &img)
}

/// 16-bit instance-id image, 0 = no mask.
pub fn load_mask_ids(path: &Path, width: u32, height: u32) -> Result<Vec<u16>, IoError> {
    let img = open(path)?;
    let ids = match img {
        image::DynamicImage::ImageLuma16(i) => {
            check_size(path, i.dimensions(), (width, height))?;
            i.into_raw()
        }
        image::DynamicImage::ImageLuma8(i) => {
            check_size(path, i.dimensions(), (width, height))?;
            i.into_raw().into_iter().map(u16::from).collect()
        }
        _ => return Err(IoError::format(path, "masks must be a grayscale id image")),
    };
    Ok(ids)
}

pub fn save_mask_ids(path: &Path, ids: &[u16], width: u32, height: u32) -> Result<(), IoError> {
    let img = ImageBuffer::<Luma<u16>, _>::from_raw(width, height, ids.to_vec())
        .ok_or_else(|| IoError::format(path, "mask buffer does not match image size"))?;
    save(path, &img)
}

pub fn load_rgb(path: &Path, width: u32, height: u32) -> Result<RgbImage, IoError> {
    let img = open(path)?.into_rgb8();
    check_size(path, img.dimensions(), (width, height))?;
    Ok(RgbImage { width, height, data: img.pixels().map(|p| p.0).collect() })
}

pub fn save_rgb(path: &Path, rgb: &RgbImage) -> Result<(), IoError> {
    let raw: Vec<u8> = rgb.data.iter().flatten().copied().collect();
    let img = ImageBuffer::<Rgb<u8>, _>::from_raw(rgb.width, rgb.height, raw)
        .ok_or_else(|| IoError::format(path, "rgb buffer does not match image size"))?;
    save(path, &img)
}

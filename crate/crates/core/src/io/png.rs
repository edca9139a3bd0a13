//! PNG codecs: 8-bit rgb and masks, 16-bit normals and pose maps.
//!
//! Normals in [−1, 1] are stored as `round((n·0.5 + 0.5)·65535)` per channel.

use std::path::Path;

use image::{ImageBuffer, Luma, Rgb, Rgb32FImage};

use crate::error::DatasetError;
use crate::imagebuf::Image;
use crate::real::{lit, Real};

fn img_err(e: image::ImageError) -> DatasetError {
    DatasetError::Image(e.to_string())
}

#[inline]
pub fn encode_unit8(x: f64) -> u8 {
    (x.clamp(0.0, 1.0) * 255.0).round() as u8
}

#[inline]
pub fn encode_normal16(n: f64) -> u16 {
    ((n * 0.5 + 0.5).clamp(0.0, 1.0) * 65535.0).round() as u16
}

#[inline]
pub fn decode_normal16(v: u16) -> f64 {
    (v as f64 / 65535.0 - 0.5) * 2.0
}

fn expect_channels<T: Real>(img: &Image<T>, c: usize) -> Result<(), DatasetError> {
    if img.channels != c {
        return Err(DatasetError::Image(format!("expected {c} channels, got {}", img.channels)));
    }
    Ok(())
}

pub fn write_rgb8<T: Real>(path: &Path, img: &Image<T>) -> Result<(), DatasetError> {
    expect_channels(img, 3)?;
    let buf: ImageBuffer<Rgb<u8>, Vec<u8>> = ImageBuffer::from_raw(
        img.width as u32,
        img.height as u32,
        img.data.iter().map(|v| encode_unit8(v.to_f64_lossy())).collect(),
    )
    .expect("buffer length matches dimensions");
    buf.save(path).map_err(img_err)
}

pub fn read_rgb8<T: Real>(path: &Path) -> Result<Image<T>, DatasetError> {
    let buf = image::open(path).map_err(img_err)?.into_rgb8();
    let (w, h) = buf.dimensions();
    Ok(Image::from_data(w as usize, h as usize, 3, buf.into_raw().into_iter().map(|v| lit(v as f64 / 255.0)).collect()))
}

/// Single-channel mask written as 0 or 255 by thresholding at 0.5.
pub fn write_mask8<T: Real>(path: &Path, img: &Image<T>) -> Result<(), DatasetError> {
    expect_channels(img, 1)?;
    let buf: ImageBuffer<Luma<u8>, Vec<u8>> = ImageBuffer::from_raw(
        img.width as u32,
        img.height as u32,
        img.data.iter().map(|v| if v.to_f64_lossy() > 0.5 { 255 } else { 0 }).collect(),
    )
    .expect("buffer length matches dimensions");
    buf.save(path).map_err(img_err)
}

pub fn read_mask8<T: Real>(path: &Path) -> Result<Image<T>, DatasetError> {
    let buf = image::open(path).map_err(img_err)?.into_luma8();
    let (w, h) = buf.dimensions();
    Ok(Image::from_data(w as usize, h as usize, 1, buf.into_raw().into_iter().map(|v| lit(v as f64 / 255.0)).collect()))
}

pub fn write_normal16<T: Real>(path: &Path, img: &Image<T>) -> Result<(), DatasetError> {
    expect_channels(img, 3)?;
    let buf: ImageBuffer<Rgb<u16>, Vec<u16>> = ImageBuffer::from_raw(
        img.width as u32,
        img.height as u32,
        img.data.iter().map(|v| encode_normal16(v.to_f64_lossy())).collect(),
    )
    .expect("buffer length matches dimensions");
    buf.save(path).map_err(img_err)
}

pub fn read_normal16<T: Real>(path: &Path) -> Result<Image<T>, DatasetError> {
    let buf = image::open(path).map_err(img_err)?.into_rgb16();
    let (w, h) = buf.dimensions();
    Ok(Image::from_data(w as usize, h as usize, 3, buf.into_raw().into_iter().map(|v| lit(decode_normal16(v))).collect()))
}

/// Bilinear resize of a 3-channel image.
pub fn resize3<T: Real>(img: &Image<T>, width: usize, height: usize) -> Image<T> {
    assert_eq!(img.channels, 3, "resize3 takes three channels");
    let src: Rgb32FImage = ImageBuffer::from_raw(
        img.width as u32,
        img.height as u32,
        img.data.iter().map(|v| v.to_f64_lossy() as f32).collect(),
    )
    .expect("buffer length matches dimensions");
    let out = image::imageops::resize(&src, width as u32, height as u32, image::imageops::FilterType::Triangle);
    Image::from_data(width, height, 3, out.into_raw().into_iter().map(|v| lit(v as f64)).collect())
}

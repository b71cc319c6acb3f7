//! Planar `f64` images, resizing and PNG/PGM I/O.

use std::path::Path;

use image::{DynamicImage, GrayImage, RgbImage};

use crate::error::{Error, Result};
use crate::geometry::{Rect, SaliencyMap};
use crate::tensor::Tensor;

/// `C x H x W` image with intensities nominally in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    channels: usize,
    height: usize,
    width: usize,
    data: Vec<f64>,
}

/// Per-axis factors applied by [`resize_shorter_side`] (`new / old`).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Resized {
    pub scale_x: f64,
    pub scale_y: f64,
}

impl Resized {
    pub const IDENTITY: Resized = Resized { scale_x: 1.0, scale_y: 1.0 };

    /// Maps a rectangle from resized coordinates back to the original image.
    pub fn to_original(&self, r: &Rect) -> Rect {
        r.scale(1.0 / self.scale_x, 1.0 / self.scale_y)
    }
}

impl Image {
    pub fn new(channels: usize, height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if channels * height * width != data.len() {
            return Err(Error::shape(format!(
                "{channels}x{height}x{width} image needs {} values, got {}",
                channels * height * width,
                data.len()
            )));
        }
        Ok(Self { channels, height, width, data })
    }

    pub fn filled(channels: usize, height: usize, width: usize, value: f64) -> Self {
        Self {
            channels,
            height,
            width,
            data: vec![value; channels * height * width],
        }
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn get(&self, c: usize, y: usize, x: usize) -> f64 {
        self.data[(c * self.height + y) * self.width + x]
    }

    pub fn set(&mut self, c: usize, y: usize, x: usize, v: f64) {
        self.data[(c * self.height + y) * self.width + x] = v;
    }

    pub fn bounds(&self) -> Rect {
        Rect::full(self.width as f64, self.height as f64)
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor::new([self.channels, self.height, self.width], self.data.clone())
            .expect("image dimensions match its data")
    }

    /// Replicates or averages channels to reach `channels` (1 or 3).
    pub fn with_channels(&self, channels: usize) -> Result<Image> {
        match (self.channels, channels) {
            (a, b) if a == b => Ok(self.clone()),
            (1, 3) => Ok(Image {
                channels: 3,
                data: self.data.repeat(3),
                ..*self
            }),
            (3, 1) => {
                let plane = self.height * self.width;
                let data = (0..plane)
                    .map(|i| (self.data[i] + self.data[plane + i] + self.data[2 * plane + i]) / 3.0)
                    .collect();
                Ok(Image { channels: 1, data, ..*self })
            }
            (a, b) => Err(Error::Input(format!("cannot convert {a}-channel image to {b} channels"))),
        }
    }

    /// Bilinear resize using half-pixel centres.
    pub fn resize_bilinear(&self, new_h: usize, new_w: usize) -> Result<Image> {
        if new_h == 0 || new_w == 0 || self.height == 0 || self.width == 0 {
            return Err(Error::Input("cannot resize to or from a zero-sized image".into()));
        }
        if (new_h, new_w) == (self.height, self.width) {
            return Ok(self.clone());
        }
        let taps = |out: usize, inp: usize| -> Vec<(usize, usize, f64)> {
            let ratio = inp as f64 / out as f64;
            (0..out)
                .map(|o| {
                    let src = ((o as f64 + 0.5) * ratio - 0.5).clamp(0.0, (inp - 1) as f64);
                    let lo = src.floor() as usize;
                    let hi = (lo + 1).min(inp - 1);
                    (lo, hi, src - lo as f64)
                })
                .collect()
        };
        let ys = taps(new_h, self.height);
        let xs = taps(new_w, self.width);
        let mut data = Vec::with_capacity(self.channels * new_h * new_w);
        for c in 0..self.channels {
            for &(y0, y1, fy) in &ys {
                for &(x0, x1, fx) in &xs {
                    let top = self.get(c, y0, x0) * (1.0 - fx) + self.get(c, y0, x1) * fx;
                    let bot = self.get(c, y1, x0) * (1.0 - fx) + self.get(c, y1, x1) * fx;
                    data.push(top * (1.0 - fy) + bot * fy);
                }
            }
        }
        Image::new(self.channels, new_h, new_w, data)
    }

    /// Copies the pixels covered by `rect`, rounded outwards to whole pixels
    /// and kept at least one pixel wide.
    pub fn crop(&self, rect: &Rect) -> Result<Image> {
        let r = rect.clamp_to(&self.bounds());
        let x0 = (r.x_min.floor() as usize).min(self.width - 1);
        let y0 = (r.y_min.floor() as usize).min(self.height - 1);
        let x1 = (r.x_max.ceil() as usize).clamp(x0 + 1, self.width);
        let y1 = (r.y_max.ceil() as usize).clamp(y0 + 1, self.height);
        let mut data = Vec::with_capacity(self.channels * (y1 - y0) * (x1 - x0));
        for c in 0..self.channels {
            for y in y0..y1 {
                for x in x0..x1 {
                    data.push(self.get(c, y, x));
                }
            }
        }
        Image::new(self.channels, y1 - y0, x1 - x0, data)
    }

    /// Draws a one-pixel rectangle outline in `color` (one value per channel).
    pub fn draw_rect(&mut self, rect: &Rect, color: &[f64]) {
        if self.width == 0 || self.height == 0 {
            return;
        }
        let r = rect.clamp_to(&self.bounds());
        let x0 = (r.x_min.floor() as usize).min(self.width - 1);
        let y0 = (r.y_min.floor() as usize).min(self.height - 1);
        let x1 = (r.x_max.ceil() as usize).saturating_sub(1).clamp(x0, self.width - 1);
        let y1 = (r.y_max.ceil() as usize).saturating_sub(1).clamp(y0, self.height - 1);
        for c in 0..self.channels {
            let v = color[c.min(color.len() - 1)];
            for x in x0..=x1 {
                self.set(c, y0, x, v);
                self.set(c, y1, x, v);
            }
            for y in y0..=y1 {
                self.set(c, y, x0, v);
                self.set(c, y, x1, v);
            }
        }
    }

    /// Loads PNG, PGM/PPM or any other enabled format, converted to `channels` (1 or 3).
    pub fn load(path: impl AsRef<Path>, channels: usize) -> Result<Image> {
        let path = path.as_ref();
        let img = image::open(path).map_err(|source| Error::Image { path: path.to_path_buf(), source })?;
        Ok(match channels {
            1 => from_gray(&img.to_luma8()),
            3 => from_rgb(&img.to_rgb8()),
            n => return Err(Error::Input(format!("unsupported channel count {n}"))),
        })
    }

    /// Saves as 8-bit PNG (grayscale for one channel, RGB for three).
    pub fn save_png(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let q = |v: f64| (v.clamp(0.0, 1.0) * 255.0).round() as u8;
        let (w, h) = (self.width as u32, self.height as u32);
        let plane = self.height * self.width;
        let dynimg = match self.channels {
            1 => DynamicImage::ImageLuma8(
                GrayImage::from_raw(w, h, self.data.iter().map(|&v| q(v)).collect())
                    .expect("buffer sized from image dims"),
            ),
            3 => {
                let mut buf = Vec::with_capacity(3 * plane);
                for i in 0..plane {
                    for c in 0..3 {
                        buf.push(q(self.data[c * plane + i]));
                    }
                }
                DynamicImage::ImageRgb8(RgbImage::from_raw(w, h, buf).expect("buffer sized from image dims"))
            }
            n => return Err(Error::Input(format!("cannot save a {n}-channel image"))),
        };
        dynimg
            .save_with_format(path, image::ImageFormat::Png)
            .map_err(|source| Error::Image { path: path.to_path_buf(), source })
    }
}

fn from_gray(g: &GrayImage) -> Image {
    let (w, h) = g.dimensions();
    let data = g.as_raw().iter().map(|&v| f64::from(v) / 255.0).collect();
    Image::new(1, h as usize, w as usize, data).expect("dims from decoder")
}

fn from_rgb(rgb: &RgbImage) -> Image {
    let (w, h) = rgb.dimensions();
    let plane = (w * h) as usize;
    let mut data = vec![0.0; 3 * plane];
    for (i, px) in rgb.as_raw().chunks_exact(3).enumerate() {
        for c in 0..3 {
            data[c * plane + i] = f64::from(px[c]) / 255.0;
        }
    }
    Image::new(3, h as usize, w as usize, data).expect("dims from decoder")
}

impl From<&SaliencyMap> for Image {
    fn from(map: &SaliencyMap) -> Self {
        Image::new(1, map.height(), map.width(), map.values().to_vec()).expect("map dims")
    }
}

pub fn load_saliency(path: impl AsRef<Path>) -> Result<SaliencyMap> {
    let img = Image::load(path, 1)?;
    SaliencyMap::new(img.width, img.height, img.data)
}

pub fn save_saliency(map: &SaliencyMap, path: impl AsRef<Path>) -> Result<()> {
    Image::from(map).save_png(path)
}

/// Target dimensions `(height, width)` for [`resize_shorter_side`].
pub fn shorter_side_dims(height: usize, width: usize, target: usize, multiple: usize) -> Result<(usize, usize)> {
    if height == 0 || width == 0 {
        return Err(Error::Input(format!("degenerate {height}x{width} image")));
    }
    let multiple = multiple.max(1);
    if target < multiple {
        return Err(Error::Parameter(format!(
            "target side {target} is smaller than the required multiple {multiple}"
        )));
    }
    let short = height.min(width);
    let scale_len = |len: usize| if len == short { target } else { len * target / short };
    let round = |len: usize| (len / multiple) * multiple;
    Ok((round(scale_len(height)), round(scale_len(width))))
}

/// Aspect-preserving bilinear resize so the shorter side equals `target`, with
/// both sides then floored to a multiple of `multiple`.
pub fn resize_shorter_side(image: &Image, target: usize, multiple: usize) -> Result<(Image, Resized)> {
    let (h, w) = shorter_side_dims(image.height, image.width, target, multiple)?;
    let resized = image.resize_bilinear(h, w)?;
    let scales = Resized {
        scale_x: w as f64 / image.width as f64,
        scale_y: h as f64 / image.height as f64,
    };
    Ok((resized, scales))
}

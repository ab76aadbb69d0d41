//! Pixel-level operations on `[H, W, 3]` images with values in `[0, 255]`.
//!
//! Everything outside the source image reads as zero.

use std::path::Path;

use rand::{Rng, RngCore};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub type Image = Tensor<f32>;

pub const CHANNELS: usize = 3;

/// Decode PNG/BMP/PPM to 8-bit RGB and promote to reals.
pub fn load_rgb(path: &Path) -> Result<Image> {
    let img = image::open(path)
        .map_err(|source| Error::Image {
            path: path.to_path_buf(),
            source,
        })?
        .to_rgb8();
    let (w, h) = img.dimensions();
    let data = img.into_raw().into_iter().map(f32::from).collect();
    Tensor::from_vec(&[h as usize, w as usize, CHANNELS], data)
}

/// Write an image as 8-bit PNG, rounding and clamping to `[0, 255]`.
pub fn save_png(img: &Image, path: &Path) -> Result<()> {
    let (h, w) = hw(img)?;
    let raw: Vec<u8> = img
        .data()
        .iter()
        .map(|v| v.round().clamp(0.0, 255.0) as u8)
        .collect();
    let buf = image::RgbImage::from_raw(w as u32, h as u32, raw)
        .ok_or_else(|| Error::shape("image buffer size"))?;
    buf.save(path).map_err(|source| Error::Image {
        path: path.to_path_buf(),
        source,
    })
}

pub fn hw(img: &Image) -> Result<(usize, usize)> {
    match *img.dims() {
        [h, w, CHANNELS] => Ok((h, w)),
        _ => Err(Error::shape(format!(
            "expected an [H, W, 3] image, got {}",
            img.shape()
        ))),
    }
}

#[inline]
fn pixel(img: &[f32], h: usize, w: usize, y: i64, x: i64, c: usize) -> f32 {
    if y < 0 || x < 0 || y >= h as i64 || x >= w as i64 {
        0.0
    } else {
        img[(y as usize * w + x as usize) * CHANNELS + c]
    }
}

/// Bilinear sample of channel `c` at real coordinates, zero outside the image.
#[inline]
pub fn sample_bilinear(img: &[f32], h: usize, w: usize, x: f64, y: f64, c: usize) -> f32 {
    let x0 = x.floor();
    let y0 = y.floor();
    let fx = (x - x0) as f32;
    let fy = (y - y0) as f32;
    let (xi, yi) = (x0 as i64, y0 as i64);
    let p00 = pixel(img, h, w, yi, xi, c);
    if fx == 0.0 && fy == 0.0 {
        return p00;
    }
    let p01 = pixel(img, h, w, yi, xi + 1, c);
    let p10 = pixel(img, h, w, yi + 1, xi, c);
    let p11 = pixel(img, h, w, yi + 1, xi + 1, c);
    let top = p00 + (p01 - p00) * fx;
    let bottom = p10 + (p11 - p10) * fx;
    top + (bottom - top) * fy
}

/// `m x m` window `[x - m/2, x + m/2) x [y - m/2, y + m/2)` around an integer center.
pub fn extract_patch(img: &Image, center: (i64, i64), m: usize) -> Result<Image> {
    if m == 0 {
        return Err(Error::invalid("patch size must be positive"));
    }
    let (h, w) = hw(img)?;
    let half = (m / 2) as i64;
    let (x0, y0) = (center.0 - half, center.1 - half);
    let src = img.data();
    let mut out = Vec::with_capacity(m * m * CHANNELS);
    for i in 0..m as i64 {
        for j in 0..m as i64 {
            for c in 0..CHANNELS {
                out.push(pixel(src, h, w, y0 + i, x0 + j, c));
            }
        }
    }
    Tensor::from_vec(&[m, m, CHANNELS], out)
}

/// Cosine and sine of an angle in degrees, exact for multiples of 90.
pub fn exact_cos_sin(degrees: f64) -> (f64, f64) {
    let d = degrees.rem_euclid(360.0);
    match d {
        0.0 => (1.0, 0.0),
        90.0 => (0.0, 1.0),
        180.0 => (-1.0, 0.0),
        270.0 => (0.0, -1.0),
        _ => {
            let r = d.to_radians();
            (r.cos(), r.sin())
        }
    }
}

/// Source coordinate that lands on offset `(dx, dy)` from `center` after rotating by `degrees`.
#[inline]
fn rotate_source(center: (f64, f64), dx: f64, dy: f64, cos: f64, sin: f64) -> (f64, f64) {
    (
        center.0 + cos * dx + sin * dy,
        center.1 - sin * dx + cos * dy,
    )
}

/// Rotate the whole image about `center` with bilinear resampling.
pub fn rotate_about(img: &Image, center: (f64, f64), degrees: f64) -> Result<Image> {
    let (h, w) = hw(img)?;
    let (cos, sin) = exact_cos_sin(degrees);
    let src = img.data();
    let mut out = Vec::with_capacity(img.len());
    for py in 0..h {
        for px in 0..w {
            let (sx, sy) =
                rotate_source(center, px as f64 - center.0, py as f64 - center.1, cos, sin);
            for c in 0..CHANNELS {
                out.push(sample_bilinear(src, h, w, sx, sy, c));
            }
        }
    }
    Tensor::from_vec(img.dims(), out)
}

/// `extract_patch(rotate_about(img, center, degrees), center, m)` without rotating the full image.
pub fn rotated_patch(img: &Image, center: (i64, i64), degrees: f64, m: usize) -> Result<Image> {
    if m == 0 {
        return Err(Error::invalid("patch size must be positive"));
    }
    let (h, w) = hw(img)?;
    let (cos, sin) = exact_cos_sin(degrees);
    let cf = (center.0 as f64, center.1 as f64);
    let half = (m / 2) as i64;
    let src = img.data();
    let mut out = Vec::with_capacity(m * m * CHANNELS);
    for i in 0..m as i64 {
        for j in 0..m as i64 {
            let (tx, ty) = (center.0 - half + j, center.1 - half + i);
            // Outside the rotated frame, as extract_patch would pad.
            if tx < 0 || ty < 0 || tx >= w as i64 || ty >= h as i64 {
                out.extend_from_slice(&[0.0; CHANNELS]);
                continue;
            }
            let (px, py) = (tx as f64, ty as f64);
            let (sx, sy) = rotate_source(cf, px - cf.0, py - cf.1, cos, sin);
            for c in 0..CHANNELS {
                out.push(sample_bilinear(src, h, w, sx, sy, c));
            }
        }
    }
    Tensor::from_vec(&[m, m, CHANNELS], out)
}

/// Half-pixel-centred (align-corners = false) bilinear resize with edge clamping.
pub fn bilinear_resize(img: &Image, out_h: usize, out_w: usize) -> Result<Image> {
    if out_h == 0 || out_w == 0 {
        return Err(Error::invalid("resize target must be positive"));
    }
    let (h, w) = hw(img)?;
    let axis = |out: usize, inp: usize| -> Vec<(usize, usize, f32)> {
        let scale = inp as f64 / out as f64;
        (0..out)
            .map(|d| {
                let s = ((d as f64 + 0.5) * scale - 0.5).clamp(0.0, (inp - 1) as f64);
                let i0 = s.floor() as usize;
                let i1 = (i0 + 1).min(inp - 1);
                (i0, i1, (s - i0 as f64) as f32)
            })
            .collect()
    };
    let ys = axis(out_h, h);
    let xs = axis(out_w, w);
    let src = img.data();
    let at = |y: usize, x: usize, c: usize| src[(y * w + x) * CHANNELS + c];
    let mut out = Vec::with_capacity(out_h * out_w * CHANNELS);
    for &(y0, y1, fy) in &ys {
        for &(x0, x1, fx) in &xs {
            for c in 0..CHANNELS {
                let (p00, p01, p10, p11) =
                    (at(y0, x0, c), at(y0, x1, c), at(y1, x0, c), at(y1, x1, c));
                let top = p00 + (p01 - p00) * fx;
                let bottom = p10 + (p11 - p10) * fx;
                out.push(top + (bottom - top) * fy);
            }
        }
    }
    Tensor::from_vec(&[out_h, out_w, CHANNELS], out)
}

pub fn mirror_horizontal(img: &Image) -> Result<Image> {
    let (h, w) = hw(img)?;
    let src = img.data();
    let mut out = Vec::with_capacity(img.len());
    for y in 0..h {
        for x in (0..w).rev() {
            let base = (y * w + x) * CHANNELS;
            out.extend_from_slice(&src[base..base + CHANNELS]);
        }
    }
    Tensor::from_vec(img.dims(), out)
}

/// Square crop at `(top, left)`, optionally mirrored left-right.
pub fn crop(img: &Image, top: usize, left: usize, size: usize, mirror: bool) -> Result<Image> {
    let (h, w) = hw(img)?;
    if size == 0 || top + size > h || left + size > w {
        return Err(Error::shape(format!(
            "crop {size}x{size} at ({top}, {left}) does not fit a {h}x{w} image"
        )));
    }
    let src = img.data();
    let mut out = Vec::with_capacity(size * size * CHANNELS);
    for y in top..top + size {
        for i in 0..size {
            let x = if mirror {
                left + size - 1 - i
            } else {
                left + i
            };
            let base = (y * w + x) * CHANNELS;
            out.extend_from_slice(&src[base..base + CHANNELS]);
        }
    }
    Tensor::from_vec(&[size, size, CHANNELS], out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CropWindow {
    pub top: usize,
    pub left: usize,
    pub mirror: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CropMode {
    /// Uniform offset in `[0, size - crop]^2`, mirrored with probability 1/2.
    RandomMirror,
    /// Four corners and centre, then the same five mirrored: TL, TR, BL, BR, C.
    TenCrop,
    /// The centre crop alone.
    Center,
}

impl CropMode {
    /// Crops per patch, for the deterministic modes and one for random.
    pub fn count(self) -> usize {
        match self {
            CropMode::TenCrop => 10,
            CropMode::RandomMirror | CropMode::Center => 1,
        }
    }
}

/// The crop windows a mode produces for a square `size` input.
pub fn crop_windows(
    size: usize,
    crop_size: usize,
    mode: CropMode,
    rng: &mut dyn RngCore,
) -> Result<Vec<CropWindow>> {
    if crop_size == 0 || crop_size > size {
        return Err(Error::shape(format!(
            "cannot take {crop_size}-pixel crops from a {size}-pixel patch"
        )));
    }
    let span = size - crop_size;
    Ok(match mode {
        CropMode::RandomMirror => vec![CropWindow {
            top: rng.random_range(0..=span),
            left: rng.random_range(0..=span),
            mirror: rng.random_bool(0.5),
        }],
        CropMode::TenCrop => {
            let c = span / 2;
            let corners = [(0, 0), (0, span), (span, 0), (span, span), (c, c)];
            [false, true]
                .iter()
                .flat_map(|&mirror| {
                    corners
                        .iter()
                        .map(move |&(top, left)| CropWindow { top, left, mirror })
                })
                .collect()
        }
        CropMode::Center => vec![CropWindow {
            top: span / 2,
            left: span / 2,
            mirror: false,
        }],
    })
}

pub fn crop_views(
    patch: &Image,
    crop_size: usize,
    mode: CropMode,
    rng: &mut dyn RngCore,
) -> Result<Vec<Image>> {
    let (h, w) = hw(patch)?;
    if h != w {
        return Err(Error::shape(format!(
            "crop input must be square, got {h}x{w}"
        )));
    }
    crop_windows(h, crop_size, mode, rng)?
        .into_iter()
        .map(|cw| crop(patch, cw.top, cw.left, crop_size, cw.mirror))
        .collect()
}

/// Write an `[H, W, 3]` image into a `[3, H, W]` buffer.
pub fn hwc_to_chw(img: &Image, out: &mut [f32]) -> Result<()> {
    let (h, w) = hw(img)?;
    if out.len() != img.len() {
        return Err(Error::shape("channel-first buffer size mismatch"));
    }
    for (i, px) in img.data().chunks(CHANNELS).enumerate() {
        for (c, &v) in px.iter().enumerate() {
            out[c * h * w + i] = v;
        }
    }
    Ok(())
}

use super::{BBox, GrayImage, ImageError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Resample {
    #[default]
    Bilinear,
    Nearest,
}

/// Resample to `out_w x out_h` using pixel-center alignment.
pub fn resize(
    img: &GrayImage,
    out_w: usize,
    out_h: usize,
    mode: Resample,
) -> Result<GrayImage, ImageError> {
    if out_w == 0 || out_h == 0 {
        return Err(ImageError::EmptyImage);
    }
    let (w, h) = img.dims();
    let sx = w as f64 / out_w as f64;
    let sy = h as f64 / out_h as f64;
    let src = |d: usize, scale: f64, n: usize| {
        ((d as f64 + 0.5) * scale - 0.5).clamp(0.0, (n - 1) as f64)
    };

    GrayImage::from_fn(out_w, out_h, |x, y| {
        let fx = src(x, sx, w);
        let fy = src(y, sy, h);
        match mode {
            Resample::Nearest => img.get(fx.round() as usize, fy.round() as usize),
            Resample::Bilinear => {
                let (x0, y0) = (fx.floor() as usize, fy.floor() as usize);
                let (x1, y1) = ((x0 + 1).min(w - 1), (y0 + 1).min(h - 1));
                let (ax, ay) = (fx - x0 as f64, fy - y0 as f64);
                let p = |x: usize, y: usize| f64::from(img.get(x, y));
                let top = p(x0, y0) * (1.0 - ax) + p(x1, y0) * ax;
                let bottom = p(x0, y1) * (1.0 - ax) + p(x1, y1) * ax;
                (top * (1.0 - ay) + bottom * ay).round().clamp(0.0, 255.0) as u8
            }
        }
    })
}

pub fn crop(img: &GrayImage, b: &BBox) -> Result<GrayImage, ImageError> {
    if !b.fits_in(img.width(), img.height()) {
        return Err(ImageError::BoxOutOfBounds {
            bbox: *b,
            width: img.width(),
            height: img.height(),
        });
    }
    GrayImage::from_fn(b.w, b.h, |x, y| img.get(b.x + x, b.y + y))
}

/// Crop `b` and resample it to a fixed size.
pub fn roi_resize(
    img: &GrayImage,
    b: &BBox,
    out_w: usize,
    out_h: usize,
    mode: Resample,
) -> Result<GrayImage, ImageError> {
    resize(&crop(img, b)?, out_w, out_h, mode)
}

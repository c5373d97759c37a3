//! Training-time image augmentation: random crop covering at least a fixed
//! fraction of the source area, bilinear rescale to the encoder resolution,
//! then brightness and saturation jitter.

use rand::Rng;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Image in HWC layout with values in [0, 1].
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub data: Vec<f32>,
}

impl Image {
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != height * width * channels {
            return Err(Error::dim(format!(
                "{}x{}x{} image needs {} values, got {}",
                height,
                width,
                channels,
                height * width * channels,
                data.len()
            )));
        }
        Ok(Image {
            height,
            width,
            channels,
            data,
        })
    }

    /// Interprets a [H × W·C] matrix as an image.
    pub fn from_matrix(m: &Tensor<f32>, channels: usize) -> Result<Self> {
        let (h, wc) = m.dims2()?;
        if channels == 0 || wc % channels != 0 {
            return Err(Error::dim(format!("{wc} columns is not a multiple of {channels} channels")));
        }
        Image::new(h, wc / channels, channels, m.data().to_vec())
    }

    /// Rows become frames: [H × W·C].
    pub fn to_matrix(&self) -> Tensor<f32> {
        Tensor::from_vec(&[self.height, self.width * self.channels], self.data.clone())
            .expect("sizes agree")
    }

    fn px(&self, y: usize, x: usize, c: usize) -> f32 {
        self.data[(y * self.width + x) * self.channels + c]
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AugmentParams {
    pub min_area_fraction: f64,
    /// Brightness delta is drawn uniformly from ±this, in units of the [0, 1] range.
    pub brightness_delta: f64,
    pub saturation_range: (f64, f64),
    /// (height, width)
    pub target_resolution: (usize, usize),
}

impl Default for AugmentParams {
    fn default() -> Self {
        AugmentParams {
            min_area_fraction: 0.67,
            brightness_delta: 0.125,
            saturation_range: (0.5, 1.5),
            target_resolution: (380, 380),
        }
    }
}

impl AugmentParams {
    /// Full-image crop, no photometric jitter.
    pub fn resize_only(target_resolution: (usize, usize)) -> Self {
        AugmentParams {
            min_area_fraction: 1.0,
            brightness_delta: 0.0,
            saturation_range: (1.0, 1.0),
            target_resolution,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let f = self.min_area_fraction;
        if !(f > 0.0 && f <= 1.0) {
            return Err(Error::Config(format!("min_area_fraction {f} outside (0, 1]")));
        }
        let (lo, hi) = self.saturation_range;
        if !(0.0 <= lo && lo <= hi) || self.brightness_delta < 0.0 {
            return Err(Error::Config("invalid photometric jitter ranges".into()));
        }
        if self.target_resolution.0 == 0 || self.target_resolution.1 == 0 {
            return Err(Error::Config("target resolution must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CropRect {
    pub top: usize,
    pub left: usize,
    pub height: usize,
    pub width: usize,
}

impl CropRect {
    pub fn area(&self) -> usize {
        self.height * self.width
    }
}

/// Smallest pixel area satisfying the fraction floor.
pub fn min_crop_area(height: usize, width: usize, fraction: f64) -> usize {
    let exact = fraction * (height * width) as f64;
    // Guard against 0.67 * 10000 = 6700.000000000001 rounding up.
    (exact - 1e-9).ceil().max(1.0) as usize
}

/// Samples a crop whose area is at least `min_area_fraction` of the source.
/// Width is drawn first from the widths that can still reach the floor, then
/// height from the heights that reach it given that width.
pub fn sample_crop<R: Rng + ?Sized>(
    height: usize,
    width: usize,
    min_area_fraction: f64,
    rng: &mut R,
) -> CropRect {
    let floor = min_crop_area(height, width, min_area_fraction);
    let w = rng.random_range(floor.div_ceil(height).min(width)..=width);
    let h = rng.random_range(floor.div_ceil(w).min(height)..=height);
    let top = rng.random_range(0..=height - h);
    let left = rng.random_range(0..=width - w);
    CropRect {
        top,
        left,
        height: h,
        width: w,
    }
}

/// Bilinear resample of `crop` to (out_h, out_w) with half-pixel centers.
pub fn resize_bilinear(img: &Image, crop: CropRect, out_h: usize, out_w: usize) -> Image {
    let c = img.channels;
    let mut data = Vec::with_capacity(out_h * out_w * c);
    let sy = crop.height as f64 / out_h as f64;
    let sx = crop.width as f64 / out_w as f64;
    let coord = |o: usize, scale: f64, n: usize| {
        let p = ((o as f64 + 0.5) * scale - 0.5).clamp(0.0, (n - 1) as f64);
        let i0 = p.floor() as usize;
        let i1 = (i0 + 1).min(n - 1);
        (i0, i1, p - i0 as f64)
    };
    for oy in 0..out_h {
        let (y0, y1, fy) = coord(oy, sy, crop.height);
        for ox in 0..out_w {
            let (x0, x1, fx) = coord(ox, sx, crop.width);
            for ch in 0..c {
                let p = |y: usize, x: usize| img.px(crop.top + y, crop.left + x, ch) as f64;
                let top = p(y0, x0) * (1.0 - fx) + p(y0, x1) * fx;
                let bot = p(y1, x0) * (1.0 - fx) + p(y1, x1) * fx;
                data.push((top * (1.0 - fy) + bot * fy) as f32);
            }
        }
    }
    Image {
        height: out_h,
        width: out_w,
        channels: c,
        data,
    }
}

/// Returns the augmented image and the crop it was cut from.
pub fn augment_image_with_crop<R: Rng + ?Sized>(
    img: &Image,
    params: &AugmentParams,
    rng: &mut R,
) -> Result<(Image, CropRect)> {
    params.validate()?;
    if img.height == 0 || img.width == 0 {
        return Err(Error::Degenerate("cannot augment an empty image".into()));
    }
    let crop = sample_crop(img.height, img.width, params.min_area_fraction, rng);
    let (th, tw) = params.target_resolution;
    let mut out = resize_bilinear(img, crop, th, tw);

    let delta = if params.brightness_delta > 0.0 {
        rng.random_range(-params.brightness_delta..=params.brightness_delta) as f32
    } else {
        0.0
    };
    let (lo, hi) = params.saturation_range;
    let sat = if hi > lo { rng.random_range(lo..=hi) as f32 } else { lo as f32 };

    for v in &mut out.data {
        *v += delta;
    }
    if out.channels == 3 && sat != 1.0 {
        for px in out.data.chunks_exact_mut(3) {
            let gray = 0.299 * px[0] + 0.587 * px[1] + 0.114 * px[2];
            for v in px.iter_mut() {
                *v = gray + sat * (*v - gray);
            }
        }
    }
    for v in &mut out.data {
        *v = v.clamp(0.0, 1.0);
    }
    Ok((out, crop))
}

pub fn augment_image<R: Rng + ?Sized>(img: &Image, params: &AugmentParams, rng: &mut R) -> Result<Image> {
    augment_image_with_crop(img, params, rng).map(|(i, _)| i)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn gradient_image(h: usize, w: usize) -> Image {
        let mut data = Vec::new();
        for y in 0..h {
            for x in 0..w {
                data.extend_from_slice(&[y as f32 / h as f32, x as f32 / w as f32, 0.5]);
            }
        }
        Image::new(h, w, 3, data).unwrap()
    }

    #[test]
    fn crop_floor_holds_over_many_draws() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..1000 {
            let c = sample_crop(100, 100, 0.67, &mut rng);
            assert!(c.area() >= 6700, "{c:?}");
            assert!(c.top + c.height <= 100 && c.left + c.width <= 100);
        }
        for (h, w) in [(1, 1), (3, 7), (13, 2)] {
            for _ in 0..200 {
                let c = sample_crop(h, w, 0.67, &mut rng);
                assert!(c.area() as f64 >= 0.67 * (h * w) as f64);
            }
        }
    }

    #[test]
    fn no_jitter_full_crop_is_plain_resize() {
        let img = gradient_image(12, 9);
        let params = AugmentParams::resize_only((6, 5));
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let (out, crop) = augment_image_with_crop(&img, &params, &mut rng).unwrap();
        assert_eq!(crop, CropRect { top: 0, left: 0, height: 12, width: 9 });
        assert_eq!(out, resize_bilinear(&img, crop, 6, 5));
    }

    #[test]
    fn identity_resize_copies() {
        let img = gradient_image(4, 5);
        let full = CropRect { top: 0, left: 0, height: 4, width: 5 };
        assert_eq!(resize_bilinear(&img, full, 4, 5), img);
    }

    #[test]
    fn seeded_augmentation_is_deterministic_and_clamped() {
        let img = gradient_image(20, 30);
        let params = AugmentParams {
            target_resolution: (8, 8),
            ..AugmentParams::default()
        };
        let a = augment_image(&img, &params, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        let b = augment_image(&img, &params, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        assert_eq!(a, b);
        assert!(a.data.iter().all(|v| (0.0..=1.0).contains(v)));
        assert_eq!((a.height, a.width, a.channels), (8, 8, 3));
    }

    #[test]
    fn invalid_fraction_rejected() {
        let img = gradient_image(2, 2);
        let params = AugmentParams {
            min_area_fraction: 0.0,
            ..AugmentParams::default()
        };
        assert!(augment_image(&img, &params, &mut ChaCha8Rng::seed_from_u64(0)).is_err());
    }
}

//! Image containers, luma conversion, CLAHE and Gaussian smoothing.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Smallest width/height accepted by the detection entry points.
pub const MIN_DIMENSION: usize = 8;

/// Single-channel raster, row-major, intensities nominally in `[0, 255]`.
#[derive(Debug, Clone, PartialEq)]
pub struct GrayImage {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidImage(format!("empty image {width}x{height}")));
        }
        if data.len() != width * height {
            return Err(Error::DimensionMismatch {
                expected: width * height,
                actual: data.len(),
            });
        }
        Ok(Self { width, height, data })
    }

    pub fn filled(width: usize, height: usize, value: f64) -> Self {
        assert!(width > 0 && height > 0, "image dimensions must be positive");
        Self {
            width,
            height,
            data: vec![value; width * height],
        }
    }

    pub fn from_fn(width: usize, height: usize, f: impl Fn(usize, usize) -> f64) -> Self {
        assert!(width > 0 && height > 0, "image dimensions must be positive");
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Self { width, height, data }
    }

    pub fn from_luma8(img: &image::GrayImage) -> Self {
        let (w, h) = img.dimensions();
        let data = img.as_raw().iter().map(|&v| f64::from(v)).collect();
        Self {
            width: w as usize,
            height: h as usize,
            data,
        }
    }

    /// Loads a PNG or JPEG file; colour inputs go through [`to_grayscale`].
    pub fn open(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let dynamic = image::open(path).map_err(|e| Error::Decode {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        match dynamic {
            image::DynamicImage::ImageLuma8(g) => Ok(Self::from_luma8(&g)),
            other => {
                let rgb = other.to_rgb8();
                let (w, h) = rgb.dimensions();
                let raster = RgbImage::new(w as usize, h as usize, rgb.into_raw())?;
                Ok(to_grayscale(&raster))
            }
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: f64) {
        self.data[y * self.width + x] = v;
    }

    /// Rejects images below [`MIN_DIMENSION`] on either axis.
    pub fn ensure_min_size(&self) -> Result<()> {
        if self.width < MIN_DIMENSION || self.height < MIN_DIMENSION {
            return Err(Error::InvalidImage(format!(
                "image {}x{} is smaller than {MIN_DIMENSION}x{MIN_DIMENSION}",
                self.width, self.height
            )));
        }
        Ok(())
    }

    pub fn transpose(&self) -> Self {
        Self::from_fn(self.height, self.width, |x, y| self.get(y, x))
    }

    /// Quantizes to 8 bits (round half-up, clamped).
    pub fn to_luma8(&self) -> image::GrayImage {
        let raw = self.data.iter().map(|&v| quantize_u8(v)).collect();
        image::GrayImage::from_raw(self.width as u32, self.height as u32, raw)
            .expect("buffer length matches dimensions")
    }

    pub fn save_png(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        self.to_luma8()
            .save_with_format(path, image::ImageFormat::Png)
            .map_err(|e| Error::Encode {
                path: path.display().to_string(),
                message: e.to_string(),
            })
    }
}

#[inline]
fn quantize_u8(v: f64) -> u8 {
    (v + 0.5).floor().clamp(0.0, 255.0) as u8
}

/// Interleaved 8-bit RGB raster.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RgbImage {
    width: usize,
    height: usize,
    data: Vec<u8>,
}

impl RgbImage {
    pub fn new(width: usize, height: usize, data: Vec<u8>) -> Result<Self> {
        if data.len() != 3 * width * height {
            return Err(Error::DimensionMismatch {
                expected: 3 * width * height,
                actual: data.len(),
            });
        }
        Ok(Self { width, height, data })
    }

    /// Builds an interleaved raster from three planar channels.
    pub fn from_planes(width: usize, height: usize, r: &[u8], g: &[u8], b: &[u8]) -> Result<Self> {
        let n = width * height;
        for plane in [r, g, b] {
            if plane.len() != n {
                return Err(Error::DimensionMismatch {
                    expected: n,
                    actual: plane.len(),
                });
            }
        }
        let mut data = Vec::with_capacity(3 * n);
        for i in 0..n {
            data.extend_from_slice(&[r[i], g[i], b[i]]);
        }
        Ok(Self { width, height, data })
    }

    /// Promotes a grayscale image to RGB by channel replication.
    pub fn from_gray(img: &GrayImage) -> Self {
        let mut data = Vec::with_capacity(3 * img.data.len());
        for &v in &img.data {
            let q = quantize_u8(v);
            data.extend_from_slice(&[q, q, q]);
        }
        Self {
            width: img.width,
            height: img.height,
            data,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn as_raw(&self) -> &[u8] {
        &self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> [u8; 3] {
        let i = 3 * (y * self.width + x);
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, px: [u8; 3]) {
        let i = 3 * (y * self.width + x);
        self.data[i..i + 3].copy_from_slice(&px);
    }

    pub fn save_png(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let buf = image::RgbImage::from_raw(self.width as u32, self.height as u32, self.data.clone())
            .expect("buffer length matches dimensions");
        buf.save_with_format(path, image::ImageFormat::Png)
            .map_err(|e| Error::Encode {
                path: path.display().to_string(),
                message: e.to_string(),
            })
    }
}

/// ITU-R BT.601 luma, rounded half-up and clamped to `[0, 255]`.
pub fn to_grayscale(rgb: &RgbImage) -> GrayImage {
    let data = rgb
        .data
        .chunks_exact(3)
        .map(|px| {
            let luma = 0.299 * f64::from(px[0]) + 0.587 * f64::from(px[1]) + 0.114 * f64::from(px[2]);
            (luma + 0.5).floor().clamp(0.0, 255.0)
        })
        .collect();
    GrayImage {
        width: rgb.width,
        height: rgb.height,
        data,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClaheParams {
    /// Tiles along x and y.
    pub tile_grid: (usize, usize),
    /// Histogram clip height as a multiple of the uniform bin height.
    /// `f64::INFINITY` disables clipping.
    pub clip_limit: f64,
}

impl Default for ClaheParams {
    fn default() -> Self {
        Self {
            tile_grid: (8, 8),
            clip_limit: 2.0,
        }
    }
}

impl ClaheParams {
    pub fn validate(&self) -> Result<()> {
        if self.tile_grid.0 == 0 || self.tile_grid.1 == 0 {
            return Err(Error::InvalidParameter("CLAHE tile grid must be at least 1x1".into()));
        }
        if !(self.clip_limit > 1.0) {
            return Err(Error::InvalidParameter(format!(
                "CLAHE clip limit must exceed 1.0, got {}",
                self.clip_limit
            )));
        }
        Ok(())
    }
}

const BINS: usize = 256;

/// Contrast limited adaptive histogram equalization.
///
/// Each tile gets a clipped, equalized mapping `v -> 255 * cdf(v) / n`; the
/// excess above the clip height is spread evenly over all bins. Pixels
/// between tile centres blend the four surrounding mappings bilinearly; pixels
/// outside the outermost centres clamp to the nearest ones.
pub fn clahe(img: &GrayImage, params: &ClaheParams) -> Result<GrayImage> {
    params.validate()?;
    let (nx, ny) = params.tile_grid;
    if img.width / nx < 2 || img.height / ny < 2 {
        return Err(Error::InvalidParameter(format!(
            "CLAHE tile grid {nx}x{ny} yields tiles smaller than 2x2 px on a {}x{} image",
            img.width, img.height
        )));
    }

    let xb: Vec<usize> = (0..=nx).map(|i| i * img.width / nx).collect();
    let yb: Vec<usize> = (0..=ny).map(|j| j * img.height / ny).collect();

    let mut luts = vec![[0.0f64; BINS]; nx * ny];
    for ty in 0..ny {
        for tx in 0..nx {
            let mut hist = [0.0f64; BINS];
            for y in yb[ty]..yb[ty + 1] {
                for x in xb[tx]..xb[tx + 1] {
                    hist[quantize_u8(img.get(x, y)) as usize] += 1.0;
                }
            }
            let count = ((xb[tx + 1] - xb[tx]) * (yb[ty + 1] - yb[ty])) as f64;
            clip_histogram(&mut hist, params.clip_limit * count / BINS as f64);
            let lut = &mut luts[ty * nx + tx];
            let mut cdf = 0.0;
            for (bin, out) in hist.iter().zip(lut.iter_mut()) {
                cdf += bin;
                *out = (255.0 * cdf / count).min(255.0);
            }
        }
    }

    let centers = |bounds: &[usize]| -> Vec<f64> {
        bounds
            .windows(2)
            .map(|w| 0.5 * (w[0] + w[1]) as f64 - 0.5)
            .collect()
    };
    let cx = centers(&xb);
    let cy = centers(&yb);

    let mut out = GrayImage::filled(img.width, img.height, 0.0);
    for y in 0..img.height {
        let (ty0, ty1, wy) = interp_coord(&cy, y as f64);
        for x in 0..img.width {
            let (tx0, tx1, wx) = interp_coord(&cx, x as f64);
            let bin = quantize_u8(img.get(x, y)) as usize;
            let m00 = luts[ty0 * nx + tx0][bin];
            let m10 = luts[ty0 * nx + tx1][bin];
            let m01 = luts[ty1 * nx + tx0][bin];
            let m11 = luts[ty1 * nx + tx1][bin];
            let top = m00 + wx * (m10 - m00);
            let bottom = m01 + wx * (m11 - m01);
            out.set(x, y, (top + wy * (bottom - top)).clamp(0.0, 255.0));
        }
    }
    Ok(out)
}

fn clip_histogram(hist: &mut [f64; BINS], limit: f64) {
    if !limit.is_finite() {
        return;
    }
    let mut excess = 0.0;
    for bin in hist.iter_mut() {
        if *bin > limit {
            excess += *bin - limit;
            *bin = limit;
        }
    }
    let share = excess / BINS as f64;
    for bin in hist.iter_mut() {
        *bin += share;
    }
}

/// Returns the two tile indices bracketing `pos` and the weight of the second.
fn interp_coord(centers: &[f64], pos: f64) -> (usize, usize, f64) {
    let last = centers.len() - 1;
    if pos <= centers[0] {
        return (0, 0, 0.0);
    }
    if pos >= centers[last] {
        return (last, last, 0.0);
    }
    let i = centers.partition_point(|&c| c <= pos) - 1;
    let w = (pos - centers[i]) / (centers[i + 1] - centers[i]);
    (i, i + 1, w)
}

/// Normalized 1-D Gaussian kernel with radius `ceil(3 sigma)`.
pub fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let radius = (3.0 * sigma).ceil() as isize;
    let mut k: Vec<f64> = (-radius..=radius)
        .map(|i| (-((i * i) as f64) / (2.0 * sigma * sigma)).exp())
        .collect();
    let sum: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= sum);
    k
}

/// Separable Gaussian smoothing with edge replication.
///
/// Both pass orders are evaluated and averaged, which makes the result
/// commute exactly with transposition.
pub fn gaussian_blur(img: &GrayImage, sigma: f64) -> Result<GrayImage> {
    if !(sigma > 0.0) || !sigma.is_finite() {
        return Err(Error::InvalidParameter(format!("sigma must be positive, got {sigma}")));
    }
    let kernel = gaussian_kernel(sigma);
    let hv = convolve_cols(&convolve_rows(img, &kernel), &kernel);
    let vh = convolve_rows(&convolve_cols(img, &kernel), &kernel);
    let data = hv
        .data
        .iter()
        .zip(&vh.data)
        .map(|(a, b)| (0.5 * (a + b)).clamp(0.0, 255.0))
        .collect();
    Ok(GrayImage {
        width: img.width,
        height: img.height,
        data,
    })
}

fn convolve_rows(img: &GrayImage, kernel: &[f64]) -> GrayImage {
    let r = (kernel.len() / 2) as isize;
    let w = img.width as isize;
    GrayImage::from_fn(img.width, img.height, |x, y| {
        let mut acc = 0.0;
        for (k, &wk) in kernel.iter().enumerate() {
            let sx = (x as isize + k as isize - r).clamp(0, w - 1) as usize;
            acc += wk * img.get(sx, y);
        }
        acc
    })
}

fn convolve_cols(img: &GrayImage, kernel: &[f64]) -> GrayImage {
    let r = (kernel.len() / 2) as isize;
    let h = img.height as isize;
    GrayImage::from_fn(img.width, img.height, |x, y| {
        let mut acc = 0.0;
        for (k, &wk) in kernel.iter().enumerate() {
            let sy = (y as isize + k as isize - r).clamp(0, h - 1) as usize;
            acc += wk * img.get(x, sy);
        }
        acc
    })
}

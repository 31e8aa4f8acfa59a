//! Image pyramid construction and the geometry linking feature cells to pixels.
//!
//! Level 1 is the smallest image and level `num_levels` the largest. Every
//! level is sized directly from the base image as
//! `floor(base * scale_step^-(num_levels - i))`, while its pixels are resampled
//! from the next larger level with a bilinear kernel.

use image::RgbImage;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::postproc::Rect;

/// Guards `floor` against representation error in `scale_step.powi(k)`.
const FLOOR_EPS: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct PyramidConfig {
    pub num_levels: usize,
    pub scale_step: f64,
    pub canvas_side: u32,
    /// Pixels per feature cell.
    pub stride: u32,
    pub receptive_field: u32,
    /// Divides box pixel dims into root-filter cell dims during training.
    pub filter_scaledown: f64,
}

impl Default for PyramidConfig {
    fn default() -> Self {
        Self {
            num_levels: 7,
            scale_step: std::f64::consts::SQRT_2,
            canvas_side: 1713,
            stride: 16,
            receptive_field: 163,
            filter_scaledown: 8.0,
        }
    }
}

impl PyramidConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_levels < 1 {
            return Err(Error::Config("num_levels must be >= 1".into()));
        }
        if !(self.scale_step > 1.0) || !self.scale_step.is_finite() {
            return Err(Error::Config("scale_step must be > 1".into()));
        }
        if self.stride < 1 {
            return Err(Error::Config("stride must be >= 1".into()));
        }
        if self.canvas_side < self.stride {
            return Err(Error::Config("canvas_side must be >= stride".into()));
        }
        if !(self.filter_scaledown > 0.0) {
            return Err(Error::Config("filter_scaledown must be > 0".into()));
        }
        Ok(())
    }

    /// Stable textual form used for digests. Floats are written with their
    /// shortest round-trip representation.
    pub fn canonical(&self) -> String {
        format!(
            "num_levels={};scale_step={:?};canvas_side={};stride={};receptive_field={};filter_scaledown={:?}",
            self.num_levels,
            self.scale_step,
            self.canvas_side,
            self.stride,
            self.receptive_field,
            self.filter_scaledown
        )
    }

    /// SHA-256 of [`canonical`](Self::canonical).
    pub fn digest(&self) -> [u8; 32] {
        Sha256::digest(self.canonical().as_bytes()).into()
    }

    /// Factor applied to inputs whose long side exceeds the canvas.
    pub fn fit_factor(&self, width: u32, height: u32) -> f64 {
        let long = width.max(height) as f64;
        if long > self.canvas_side as f64 {
            self.canvas_side as f64 / long
        } else {
            1.0
        }
    }

    /// Scale of level `index` (1-based) relative to the original image.
    pub fn level_scale(&self, index: usize, fit: f64) -> f64 {
        let k = (self.num_levels - index) as i32;
        fit * self.scale_step.powi(-k)
    }

    /// Pixel dims of every level for an original image of the given size,
    /// ordered from level 1 upward.
    pub fn level_dims(&self, width: u32, height: u32) -> Vec<(u32, u32)> {
        let fit = self.fit_factor(width, height);
        (1..=self.num_levels)
            .map(|i| {
                let s = self.level_scale(i, fit);
                (scaled_dim(width, s), scaled_dim(height, s))
            })
            .collect()
    }

    /// Geometry of every level without materializing any pixels.
    pub fn geometries(&self, width: u32, height: u32) -> Vec<LevelGeometry> {
        let fit = self.fit_factor(width, height);
        self.level_dims(width, height)
            .into_iter()
            .enumerate()
            .map(|(i, (w, h))| {
                LevelGeometry::new(i + 1, self.level_scale(i + 1, fit), self.stride, w, h)
            })
            .collect()
    }
}

fn scaled_dim(dim: u32, scale: f64) -> u32 {
    ((dim as f64 * scale + FLOOR_EPS).floor() as u32).max(1)
}

#[derive(Debug, Clone)]
pub struct PyramidLevel {
    /// 1-based, increasing with resolution.
    pub index: usize,
    pub image: RgbImage,
    pub scale: f64,
}

#[derive(Debug, Clone)]
pub struct ImagePyramid {
    pub levels: Vec<PyramidLevel>,
    pub stride: u32,
    pub receptive_field: u32,
    pub original_dims: (u32, u32),
}

impl ImagePyramid {
    pub fn geometry(&self, pos: usize) -> LevelGeometry {
        let level = &self.levels[pos];
        LevelGeometry::new(
            level.index,
            level.scale,
            self.stride,
            level.image.width(),
            level.image.height(),
        )
    }

    pub fn geometries(&self) -> Vec<LevelGeometry> {
        (0..self.levels.len()).map(|i| self.geometry(i)).collect()
    }
}

pub fn build_image_pyramid(image: &RgbImage, config: &PyramidConfig) -> Result<ImagePyramid> {
    config.validate()?;
    let (width, height) = image.dimensions();
    if width == 0 || height == 0 {
        return Err(Error::InvalidInput("empty image".into()));
    }
    let fit = config.fit_factor(width, height);
    let dims = config.level_dims(width, height);

    let top_dims = dims[config.num_levels - 1];
    let mut current = if top_dims == (width, height) {
        image.clone()
    } else {
        resize_bilinear(image, top_dims.0, top_dims.1)
    };

    let mut levels = Vec::with_capacity(config.num_levels);
    for index in (1..=config.num_levels).rev() {
        let (w, h) = dims[index - 1];
        if current.dimensions() != (w, h) {
            current = resize_bilinear(&current, w, h);
        }
        levels.push(PyramidLevel {
            index,
            image: current.clone(),
            scale: config.level_scale(index, fit),
        });
    }
    levels.reverse();

    Ok(ImagePyramid {
        levels,
        stride: config.stride,
        receptive_field: config.receptive_field,
        original_dims: (width, height),
    })
}

/// Bilinear resampling with half-pixel centers and clamped borders.
pub fn resize_bilinear(src: &RgbImage, width: u32, height: u32) -> RgbImage {
    let (sw, sh) = src.dimensions();
    let mut dst = RgbImage::new(width, height);
    if width == 0 || height == 0 || sw == 0 || sh == 0 {
        return dst;
    }
    let fx = sw as f64 / width as f64;
    let fy = sh as f64 / height as f64;
    let taps = |d: u32, f: f64, n: u32| {
        let s = ((d as f64 + 0.5) * f - 0.5).clamp(0.0, (n - 1) as f64);
        let i0 = s.floor() as u32;
        let i1 = (i0 + 1).min(n - 1);
        (i0, i1, s - i0 as f64)
    };
    let cols: Vec<_> = (0..width).map(|x| taps(x, fx, sw)).collect();
    let raw = src.as_raw();
    let row_stride = sw as usize * 3;
    for y in 0..height {
        let (y0, y1, wy) = taps(y, fy, sh);
        let r0 = &raw[y0 as usize * row_stride..][..row_stride];
        let r1 = &raw[y1 as usize * row_stride..][..row_stride];
        for (x, &(x0, x1, wx)) in cols.iter().enumerate() {
            let mut px = [0u8; 3];
            for (ch, out) in px.iter_mut().enumerate() {
                let a = r0[x0 as usize * 3 + ch] as f64;
                let b = r0[x1 as usize * 3 + ch] as f64;
                let c = r1[x0 as usize * 3 + ch] as f64;
                let d = r1[x1 as usize * 3 + ch] as f64;
                let top = a + (b - a) * wx;
                let bot = c + (d - c) * wx;
                *out = (top + (bot - top) * wy).round().clamp(0.0, 255.0) as u8;
            }
            dst.put_pixel(x as u32, y, image::Rgb(px));
        }
    }
    dst
}

/// Relationship between one level's feature grid and original-image pixels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LevelGeometry {
    pub level_index: usize,
    pub scale: f64,
    pub stride: u32,
    /// Level image size in pixels (width, height).
    pub image_dims: (u32, u32),
    /// Feature map (rows, cols).
    pub feature_dims: (usize, usize),
}

impl LevelGeometry {
    pub fn new(level_index: usize, scale: f64, stride: u32, width: u32, height: u32) -> Self {
        Self {
            level_index,
            scale,
            stride,
            image_dims: (width, height),
            feature_dims: ((height / stride) as usize, (width / stride) as usize),
        }
    }

    /// Top-left pixel of cell `(j, k)` in level coordinates, plus its
    /// receptive field clipped to the level and expressed in original-image
    /// coordinates.
    pub fn cell_to_pixel(
        &self,
        j: usize,
        k: usize,
        receptive_field: u32,
    ) -> Result<((f64, f64), Rect)> {
        let (rows, cols) = self.feature_dims;
        if j >= rows || k >= cols {
            return Err(Error::Index {
                row: j,
                col: k,
                rows,
                cols,
            });
        }
        let py = (self.stride as usize * j) as f64;
        let px = (self.stride as usize * k) as f64;
        let half = receptive_field as f64 / 2.0;
        let (w, h) = (self.image_dims.0 as f64, self.image_dims.1 as f64);
        let x0 = (px - half).max(0.0);
        let y0 = (py - half).max(0.0);
        let x1 = (px + half).min(w);
        let y1 = (py + half).min(h);
        let rect = Rect::new(
            x0 / self.scale,
            y0 / self.scale,
            (x1 - x0) / self.scale,
            (y1 - y0) / self.scale,
        );
        Ok(((py, px), rect))
    }

    /// Maps an original-image box to fractional cell coordinates of this level.
    pub fn image_box_to_level_box(&self, b: &Rect) -> Result<Rect> {
        if !(b.w > 0.0 && b.h > 0.0) {
            return Err(Error::InvalidInput(format!("degenerate box {b:?}")));
        }
        let f = self.scale / self.stride as f64;
        Ok(Rect::new(b.x * f, b.y * f, b.w * f, b.h * f))
    }

    /// Inverse of [`image_box_to_level_box`](Self::image_box_to_level_box).
    pub fn level_box_to_image_box(&self, b: &Rect) -> Rect {
        let f = self.stride as f64 / self.scale;
        Rect::new(b.x * f, b.y * f, b.w * f, b.h * f)
    }

    /// Image-space box covered by an `h x w` cell window with top-left cell
    /// `(row, col)`.
    pub fn window_box(&self, row: usize, col: usize, h: usize, w: usize) -> Rect {
        self.level_box_to_image_box(&Rect::new(col as f64, row as f64, w as f64, h as f64))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn flat(w: u32, h: u32) -> RgbImage {
        RgbImage::from_pixel(w, h, image::Rgb([10, 20, 30]))
    }

    #[test]
    fn canvas_sized_input_levels() {
        let pyr = build_image_pyramid(&flat(1713, 1713), &PyramidConfig::default()).unwrap();
        assert_eq!(pyr.levels.len(), 7);
        assert_eq!(pyr.levels[6].image.dimensions(), (1713, 1713));
        assert_eq!(pyr.levels[5].image.dimensions(), (1211, 1211));
        assert_eq!(pyr.levels[6].scale, 1.0);
    }

    #[test]
    fn tiny_input_uses_direct_floor() {
        // 16, 11, 8, 5, 4, 2, 2 from floor(16 / sqrt(2)^k)
        let oracle: Vec<u32> = (0..7)
            .rev()
            .map(|k| (16.0 / 2f64.powf(k as f64 / 2.0) + 1e-9).floor() as u32)
            .collect();
        let pyr = build_image_pyramid(&flat(16, 16), &PyramidConfig::default()).unwrap();
        let dims: Vec<u32> = pyr.levels.iter().map(|l| l.image.width()).collect();
        assert_eq!(dims, oracle);
        assert_eq!(pyr.levels[0].image.dimensions(), (2, 2));
        assert_eq!(pyr.levels[6].image.dimensions(), (16, 16));
    }

    #[test]
    fn oversized_input_is_shrunk_to_canvas() {
        let cfg = PyramidConfig::default();
        let pyr = build_image_pyramid(&flat(3426, 1000), &cfg).unwrap();
        let top = &pyr.levels[6];
        assert_eq!(top.image.width(), 1713);
        assert_eq!(top.image.height(), 500);
        assert!((top.scale - 0.5).abs() < 1e-12);
        for l in &pyr.levels {
            assert!(l.image.width() <= 1713 && l.image.height() <= 1713);
        }
    }

    #[test]
    fn empty_image_rejected() {
        let err = build_image_pyramid(&RgbImage::new(0, 5), &PyramidConfig::default());
        assert!(matches!(err, Err(Error::InvalidInput(_))));
    }

    #[test]
    fn bilinear_preserves_constant() {
        let out = resize_bilinear(&flat(37, 23), 13, 9);
        assert!(out.pixels().all(|p| p.0 == [10, 20, 30]));
    }

    #[test]
    fn cell_to_pixel_examples() {
        let g = LevelGeometry::new(7, 1.0, 16, 1713, 1713);
        let ((py, px), _) = g.cell_to_pixel(0, 0, 163).unwrap();
        assert_eq!((py, px), (0.0, 0.0));
        let ((py, px), rf) = g.cell_to_pixel(10, 6, 163).unwrap();
        assert_eq!((py, px), (160.0, 96.0));
        assert!((rf.w - 163.0).abs() < 1e-12 && (rf.h - 163.0).abs() < 1e-12);
        assert_eq!((rf.x, rf.y), (14.5, 78.5));
        assert!(matches!(g.cell_to_pixel(107, 0, 163), Err(Error::Index { .. })));
    }

    #[test]
    fn receptive_field_clipped_at_border() {
        let g = LevelGeometry::new(7, 0.5, 16, 320, 320);
        let (_, rf) = g.cell_to_pixel(0, 0, 163).unwrap();
        // [0, 81.5] in level pixels, divided by scale 0.5
        assert!((rf.w - 163.0).abs() < 1e-12);
        assert_eq!((rf.x, rf.y), (0.0, 0.0));
    }

    #[test]
    fn box_mapping_examples() {
        let g = LevelGeometry::new(7, 1.0, 16, 320, 320);
        let b = g.image_box_to_level_box(&Rect::new(0.0, 0.0, 160.0, 160.0)).unwrap();
        assert_eq!(b, Rect::new(0.0, 0.0, 10.0, 10.0));

        let g = LevelGeometry::new(5, 0.5, 16, 160, 160);
        let b = g.image_box_to_level_box(&Rect::new(32.0, 48.0, 64.0, 32.0)).unwrap();
        assert_eq!(b, Rect::new(1.0, 1.5, 2.0, 1.0));
        let back = g.level_box_to_image_box(&b);
        assert_eq!(back, Rect::new(32.0, 48.0, 64.0, 32.0));

        assert!(g.image_box_to_level_box(&Rect::new(0.0, 0.0, 0.0, 4.0)).is_err());
    }

    #[test]
    fn digest_tracks_every_field() {
        let a = PyramidConfig::default();
        let mut b = a.clone();
        assert_eq!(a.digest(), b.digest());
        b.filter_scaledown = 16.0;
        assert_ne!(a.digest(), b.digest());
    }
}

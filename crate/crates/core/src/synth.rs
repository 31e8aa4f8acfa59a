//! Synthetic detection corpus: noise backgrounds, each with one procedurally
//! drawn face-like patch whose side is log-uniform over a size range.

use image::{Rgb, RgbImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::annotations::Annotation;
use crate::postproc::Rect;

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub images: usize,
    pub width: u32,
    pub height: u32,
    pub min_face: u32,
    pub max_face: u32,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            images: 60,
            width: 768,
            height: 768,
            min_face: 128,
            max_face: 512,
            seed: 7,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SynthImage {
    pub id: String,
    pub image: RgbImage,
    pub face: Rect,
}

impl SynthImage {
    pub fn annotation(&self) -> Annotation {
        Annotation {
            image_id: self.id.clone(),
            bbox: self.face,
            tag: None,
        }
    }
}

pub fn synth_corpus(cfg: &SynthConfig) -> Vec<SynthImage> {
    (0..cfg.images).map(|i| synth_image(cfg, i)).collect()
}

/// Image `index` of the corpus; independent of the other images.
pub fn synth_image(cfg: &SynthConfig, index: usize) -> SynthImage {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_mul(1_000_003).wrapping_add(index as u64));
    let mut img = noise_background(cfg.width, cfg.height, &mut rng);
    let limit = cfg.max_face.min(cfg.width).min(cfg.height);
    let lo = (cfg.min_face.min(limit) as f64).ln();
    let hi = (limit as f64).ln();
    let side = rng.gen_range(lo..=hi).exp().round() as u32;
    let x = rng.gen_range(0..=cfg.width - side);
    let y = rng.gen_range(0..=cfg.height - side);
    draw_face(&mut img, x, y, side, &mut rng);
    SynthImage {
        id: format!("synth{index:03}"),
        image: img,
        face: Rect::new(x as f64, y as f64, side as f64, side as f64),
    }
}

/// Value-noise octaves of equal weight from 4 to 256 pixels, roughly a 1/f
/// spectrum.
fn noise_background(w: u32, h: u32, rng: &mut ChaCha8Rng) -> RgbImage {
    let octaves: Vec<Grid> = OCTAVES.iter().map(|&c| grid(w, h, c, rng)).collect();
    let tint: [f64; 3] = std::array::from_fn(|_| rng.gen_range(0.7..1.3));
    let mut img = RgbImage::new(w, h);
    for (px, py, p) in img.enumerate_pixels_mut() {
        let sum: f64 = octaves.iter().map(|g| g.sample(px, py) - 0.5).sum();
        let base = 0.5 + sum / OCTAVES.len() as f64 * 1.6;
        let v: [u8; 3] = std::array::from_fn(|c| (base * 255.0 * tint[c]).clamp(0.0, 255.0) as u8);
        *p = Rgb(v);
    }
    img
}

const OCTAVES: [u32; 7] = [4, 8, 16, 32, 64, 128, 256];

struct Grid {
    cell: f64,
    cols: usize,
    values: Vec<f64>,
}

fn grid(w: u32, h: u32, cell: u32, rng: &mut ChaCha8Rng) -> Grid {
    let cols = (w / cell + 2) as usize;
    let rows = (h / cell + 2) as usize;
    Grid {
        cell: cell as f64,
        cols,
        values: (0..rows * cols).map(|_| rng.gen_range(0.0..1.0)).collect(),
    }
}

impl Grid {
    fn sample(&self, px: u32, py: u32) -> f64 {
        let gx = px as f64 / self.cell;
        let gy = py as f64 / self.cell;
        let (x0, y0) = (gx.floor() as usize, gy.floor() as usize);
        let (fx, fy) = (gx - x0 as f64, gy - y0 as f64);
        let at = |r: usize, c: usize| self.values[r * self.cols + c];
        let top = at(y0, x0) * (1.0 - fx) + at(y0, x0 + 1) * fx;
        let bot = at(y0 + 1, x0) * (1.0 - fx) + at(y0 + 1, x0 + 1) * fx;
        top * (1.0 - fy) + bot * fy
    }
}

const FRAME: f64 = 0.1;

/// Face pattern evaluated in normalized box coordinates, so it looks the
/// same at every size: a dark frame around a skin-toned field with rings
/// about the center, two eyes and a mouth bar.
fn draw_face(img: &mut RgbImage, x: u32, y: u32, side: u32, rng: &mut ChaCha8Rng) {
    let skin = [
        rng.gen_range(190.0..230.0),
        rng.gen_range(140.0..175.0),
        rng.gen_range(110.0..140.0),
    ];
    let phase = rng.gen_range(0.0..std::f64::consts::TAU);
    let s = side as f64;
    for py in 0..side {
        for px in 0..side {
            let u = (px as f64 + 0.5) / s;
            let v = (py as f64 + 0.5) / s;
            let edge = u.min(v).min(1.0 - u).min(1.0 - v);
            let eye = |cx: f64| ((u - cx).powi(2) + (v - 0.36).powi(2)).sqrt() < 0.1;
            let mouth = (0.3..0.7).contains(&u) && (0.66..0.76).contains(&v);
            let radius = ((u - 0.5).powi(2) + (v - 0.5).powi(2)).sqrt();
            let shade = if edge < FRAME {
                0.25
            } else if eye(0.3) || eye(0.7) || mouth {
                0.15
            } else {
                1.0 + 0.12 * (std::f64::consts::TAU * 4.0 * radius + phase).sin()
            };
            let c: [u8; 3] = std::array::from_fn(|k| (skin[k] * shade).clamp(0.0, 255.0) as u8);
            img.put_pixel(x + px, y + py, Rgb(c));
        }
    }
}

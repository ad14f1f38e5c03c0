//! Synthetic aerial lawn scenes with exact ground truth.
//!
//! A scene is a textured lawn with one centred house, a driveway running from
//! the house to the bottom edge, and a few elliptical tree canopies. Every
//! pixel's class is tracked while rendering, so the label is an exact count
//! of lawn pixels times the ground area of one pixel.

use std::fs;
use std::path::Path;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{save_manifest, Manifest, ManifestRecord};
use crate::imaging::{write_pnm, Image};
use crate::{seed, Error, Result};

const LAWN: [u8; 3] = [60, 140, 60];
const LAWN_NOISE: i32 = 20;
const HOUSE: [u8; 3] = [120, 120, 120];
const DRIVEWAY: [u8; 3] = [90, 90, 90];
const PAVED_NOISE: i32 = 4;
const TREE: [u8; 3] = [30, 80, 30];
const TREE_NOISE: i32 = 10;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneConfig {
    /// Side length of the square image in pixels.
    pub size: usize,
    pub meters_per_pixel: f64,
    /// Fraction of the image covered by the house.
    pub house_fraction: (f64, f64),
    pub tree_count: (u32, u32),
    pub seed: u64,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            size: 128,
            meters_per_pixel: 0.25,
            house_fraction: (0.05, 0.40),
            tree_count: (0, 5),
            seed: 0,
        }
    }
}

impl SceneConfig {
    pub fn validate(&self) -> Result<()> {
        if self.size < 32 {
            return Err(Error::invalid(format!("scene size must be >= 32, got {}", self.size)));
        }
        if !(self.meters_per_pixel > 0.0) || !self.meters_per_pixel.is_finite() {
            return Err(Error::invalid("meters_per_pixel must be positive"));
        }
        let (lo, hi) = self.house_fraction;
        if !(0.0 <= lo && lo <= hi && hi <= 1.0) {
            return Err(Error::invalid(format!(
                "house fraction range [{lo}, {hi}] must satisfy 0 <= lo <= hi <= 1"
            )));
        }
        if self.tree_count.0 > self.tree_count.1 {
            return Err(Error::invalid("tree count range is reversed"));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PixelClass {
    Lawn,
    House,
    Driveway,
    Tree,
}

#[derive(Clone, Debug)]
pub struct Scene {
    pub image: Image,
    /// Row-major class of every pixel.
    pub mask: Vec<PixelClass>,
    pub area_sq_m: f64,
}

fn jitter<R: Rng>(rng: &mut R, base: [u8; 3], amp: i32) -> [u8; 3] {
    let d = if amp > 0 { rng.random_range(-amp..=amp) } else { 0 };
    base.map(|c| (c as i32 + d).clamp(0, 255) as u8)
}

pub fn render_scene(cfg: &SceneConfig, index: u64) -> Result<Scene> {
    cfg.validate()?;
    let mut rng = seed::rng(&[cfg.seed, index]);
    let s = cfg.size;
    let mut mask = vec![PixelClass::Lawn; s * s];

    let (lo, hi) = cfg.house_fraction;
    let fraction = rng.random_range(lo..=hi);
    let aspect = rng.random_range(0.75..=1.0 / 0.75);
    let house = if fraction > 0.0 {
        let area = fraction * (s * s) as f64;
        let w = ((area * aspect).sqrt().round() as usize).clamp(1, s);
        let h = ((area / w as f64).round() as usize).clamp(1, s);
        // re-balance when the height hit the border
        let w = ((area / h as f64).round() as usize).clamp(1, s);
        let (x0, y0) = ((s - w) / 2, (s - h) / 2);
        for y in y0..y0 + h {
            mask[y * s + x0..y * s + x0 + w].fill(PixelClass::House);
        }
        Some((x0, y0, w, h))
    } else {
        None
    };

    let drive_width = rng.random_range(s / 16..=s / 8).max(2);
    let drive_pos = rng.random_range(0.0..1.0f64);
    if let Some((x0, y0, w, h)) = house {
        let bottom = y0 + h;
        if bottom < s {
            let span = w.saturating_sub(drive_width);
            let dx0 = x0 + (drive_pos * span as f64) as usize;
            for y in bottom..s {
                for x in dx0..(dx0 + drive_width).min(s) {
                    mask[y * s + x] = PixelClass::Driveway;
                }
            }
        }
    }

    let trees = rng.random_range(cfg.tree_count.0..=cfg.tree_count.1);
    let (rmin, rmax) = ((s as f64 / 24.0).max(1.5), s as f64 / 8.0);
    for _ in 0..trees {
        let cx = rng.random_range(0.0..s as f64);
        let cy = rng.random_range(0.0..s as f64);
        let rx = rng.random_range(rmin..=rmax);
        let ry = rng.random_range(rmin..=rmax);
        for y in 0..s {
            for x in 0..s {
                let (u, v) = ((x as f64 + 0.5 - cx) / rx, (y as f64 + 0.5 - cy) / ry);
                // canopies cover lawn only
                if u * u + v * v <= 1.0 && mask[y * s + x] == PixelClass::Lawn {
                    mask[y * s + x] = PixelClass::Tree;
                }
            }
        }
    }

    let mut data = Vec::with_capacity(s * s * 3);
    for &class in &mask {
        let px = match class {
            PixelClass::Lawn => jitter(&mut rng, LAWN, LAWN_NOISE),
            PixelClass::House => jitter(&mut rng, HOUSE, PAVED_NOISE),
            PixelClass::Driveway => jitter(&mut rng, DRIVEWAY, PAVED_NOISE),
            PixelClass::Tree => jitter(&mut rng, TREE, TREE_NOISE),
        };
        data.extend_from_slice(&px);
    }

    let lawn = mask.iter().filter(|&&c| c == PixelClass::Lawn).count();
    Ok(Scene {
        image: Image::new(s, s, 3, data)?,
        mask,
        area_sq_m: lawn as f64 * cfg.meters_per_pixel * cfg.meters_per_pixel,
    })
}

/// Image and its lawn area in square meters; deterministic in
/// `(cfg.seed, index)`.
pub fn generate_synthetic_scene(cfg: &SceneConfig, index: u64) -> Result<(Image, f64)> {
    let scene = render_scene(cfg, index)?;
    Ok((scene.image, scene.area_sq_m))
}

/// Renders scenes `0..count` as `scene_NNN.ppm` in `out_dir` and writes
/// `manifest.csv` beside them. Each scene is its own origin.
pub fn write_synthetic_dataset(cfg: &SceneConfig, count: usize, out_dir: impl AsRef<Path>) -> Result<Manifest> {
    cfg.validate()?;
    let out_dir = out_dir.as_ref();
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let records = (0..count)
        .into_par_iter()
        .map(|i| {
            let (img, area) = generate_synthetic_scene(cfg, i as u64)?;
            let stem = format!("scene_{i:03}");
            let name = format!("{stem}.ppm");
            write_pnm(&img, out_dir.join(&name))?;
            Ok(ManifestRecord {
                image_path: name,
                area_sq_m: area,
                origin_id: stem,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let manifest = Manifest::new(out_dir, records);
    save_manifest(&manifest, out_dir.join("manifest.csv"))?;
    Ok(manifest)
}

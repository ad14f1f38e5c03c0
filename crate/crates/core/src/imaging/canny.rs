use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use super::{gaussian_blur, BinaryImage, Image};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CannyParams {
    pub sigma: f64,
    pub low: u8,
    pub high: u8,
}

impl Default for CannyParams {
    fn default() -> Self {
        Self {
            sigma: 1.4,
            low: 50,
            high: 150,
        }
    }
}

impl CannyParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma > 0.0) || !self.sigma.is_finite() {
            return Err(Error::invalid(format!(
                "Canny sigma must be positive, got {}",
                self.sigma
            )));
        }
        if !(0 < self.low && self.low < self.high) {
            return Err(Error::invalid(format!(
                "Canny thresholds need 0 < low < high <= 255, got low={} high={}",
                self.low, self.high
            )));
        }
        Ok(())
    }
}

const NEIGHBOURS: [(isize, isize); 8] = [(-1, -1), (0, -1), (1, -1), (-1, 0), (1, 0), (-1, 1), (0, 1), (1, 1)];

/// Canny edge detector on a 1-channel image.
///
/// Blur, 3x3 Sobel gradients, non-maximum suppression along the gradient
/// direction quantized to 0/45/90/135 degrees, then hysteresis: pixels with
/// magnitude `>= high` seed edges, pixels `>= low` join when 8-connected to a
/// seed. Magnitudes are clamped to 255 before thresholding. Suppression
/// compares unclamped magnitudes and is strict towards the negative
/// direction, so a symmetric two-pixel ridge keeps exactly one pixel.
pub fn canny_edges(img: &Image, p: &CannyParams) -> Result<BinaryImage> {
    p.validate()?;
    let blurred = gaussian_blur(img, p.sigma)?;
    let (w, h) = (img.width(), img.height());

    let mut mag = vec![0f32; w * h];
    let mut dir = vec![0u8; w * h];
    for y in 0..h as isize {
        for x in 0..w as isize {
            let s = |dx: isize, dy: isize| blurred.clamped(x + dx, y + dy) as f32;
            let gx = (s(1, -1) + 2.0 * s(1, 0) + s(1, 1)) - (s(-1, -1) + 2.0 * s(-1, 0) + s(-1, 1));
            let gy = (s(-1, 1) + 2.0 * s(0, 1) + s(1, 1)) - (s(-1, -1) + 2.0 * s(0, -1) + s(1, -1));
            let i = y as usize * w + x as usize;
            mag[i] = (gx * gx + gy * gy).sqrt();
            dir[i] = quantize_direction(gx, gy);
        }
    }

    // direction index -> unit step along the gradient in image coordinates
    const STEP: [(isize, isize); 4] = [(1, 0), (1, 1), (0, 1), (-1, 1)];
    let at = |x: isize, y: isize| -> f32 {
        let x = x.clamp(0, w as isize - 1) as usize;
        let y = y.clamp(0, h as isize - 1) as usize;
        mag[y * w + x]
    };
    let mut level = vec![0u8; w * h]; // 0 none, 1 weak, 2 strong
    for y in 0..h as isize {
        for x in 0..w as isize {
            let i = y as usize * w + x as usize;
            let m = mag[i];
            if m == 0.0 {
                continue;
            }
            let (dx, dy) = STEP[dir[i] as usize];
            if !(m > at(x - dx, y - dy) && m >= at(x + dx, y + dy)) {
                continue;
            }
            let m8 = m.min(255.0);
            if m8 >= p.high as f32 {
                level[i] = 2;
            } else if m8 >= p.low as f32 {
                level[i] = 1;
            }
        }
    }

    let mut queue: VecDeque<usize> = (0..w * h).filter(|&i| level[i] == 2).collect();
    let mut edge = vec![false; w * h];
    for &i in &queue {
        edge[i] = true;
    }
    while let Some(i) = queue.pop_front() {
        let (x, y) = ((i % w) as isize, (i / w) as isize);
        for (dx, dy) in NEIGHBOURS {
            let (nx, ny) = (x + dx, y + dy);
            if nx < 0 || ny < 0 || nx >= w as isize || ny >= h as isize {
                continue;
            }
            let j = ny as usize * w + nx as usize;
            if !edge[j] && level[j] == 1 {
                edge[j] = true;
                queue.push_back(j);
            }
        }
    }
    Ok(BinaryImage::from_mask(w, h, |i| edge[i]))
}

fn quantize_direction(gx: f32, gy: f32) -> u8 {
    let mut angle = gy.atan2(gx).to_degrees();
    if angle < 0.0 {
        angle += 180.0;
    }
    if !(22.5..157.5).contains(&angle) {
        0
    } else if angle < 67.5 {
        1
    } else if angle < 112.5 {
        2
    } else {
        3
    }
}

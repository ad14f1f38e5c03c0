use super::{BinaryImage, Image};
use crate::{Error, Result};

/// ITU-R 601 luma: `round(0.299 R + 0.587 G + 0.114 B)`.
pub fn to_grayscale(img: &Image) -> Result<Image> {
    if img.channels() != 3 {
        return Err(Error::invalid(format!(
            "grayscale conversion needs a 3-channel image, got {} channel(s)",
            img.channels()
        )));
    }
    let data = img
        .data()
        .chunks_exact(3)
        .map(|p| {
            let y = 0.299 * p[0] as f64 + 0.587 * p[1] as f64 + 0.114 * p[2] as f64;
            y.round().clamp(0.0, 255.0) as u8
        })
        .collect();
    Image::new(img.width(), img.height(), 1, data)
}

pub fn histogram(img: &Image) -> [u64; 256] {
    let mut hist = [0u64; 256];
    for p in img.data().chunks_exact(img.channels()) {
        hist[p[0] as usize] += 1;
    }
    hist
}

/// Otsu's threshold: the `t` maximizing between-class variance when class 0
/// is `{v <= t}`.
///
/// Candidates are restricted to thresholds whose lower class is nonempty and
/// ties go to the smallest `t`, so a histogram concentrated in one bin maps
/// to that bin.
pub fn otsu_threshold(hist: &[u64; 256]) -> Result<u8> {
    let total: u64 = hist.iter().sum();
    if total == 0 {
        return Err(Error::invalid("Otsu threshold of an empty histogram"));
    }
    let total_sum: u128 = hist.iter().enumerate().map(|(v, &n)| v as u128 * n as u128).sum();

    let mut best: Option<(u8, f64)> = None;
    let (mut n0, mut s0) = (0u128, 0u128);
    for (t, &n) in hist.iter().enumerate() {
        n0 += n as u128;
        s0 += t as u128 * n as u128;
        if n0 == 0 {
            continue;
        }
        let n1 = total as u128 - n0;
        let score = if n1 == 0 {
            0.0
        } else {
            // ω0 ω1 (μ0 − μ1)² · N² = (s0 n1 − s1 n0)² / (n0 n1)
            let s1 = total_sum - s0;
            let d = (s0 * n1) as f64 - (s1 * n0) as f64;
            d * d / (n0 as f64 * n1 as f64)
        };
        if best.is_none_or(|(_, b)| score > b) {
            best = Some((t as u8, score));
        }
    }
    Ok(best.map(|(t, _)| t).unwrap_or(0))
}

/// Foreground is every sample strictly above `t`.
pub fn threshold_binary(img: &Image, t: u8) -> BinaryImage {
    let data = img.data();
    let c = img.channels();
    BinaryImage::from_mask(img.width(), img.height(), |i| data[i * c] > t)
}

/// Sampled, normalized Gaussian of radius `ceil(3 sigma)`.
pub fn gaussian_kernel(sigma: f64) -> Result<Vec<f64>> {
    if !(sigma > 0.0) || !sigma.is_finite() {
        return Err(Error::invalid(format!("Gaussian sigma must be positive, got {sigma}")));
    }
    let radius = (3.0 * sigma).ceil() as isize;
    let mut k: Vec<f64> = (-radius..=radius)
        .map(|i| (-((i * i) as f64) / (2.0 * sigma * sigma)).exp())
        .collect();
    let sum: f64 = k.iter().sum();
    k.iter_mut().for_each(|w| *w /= sum);
    Ok(k)
}

/// Separable Gaussian blur of a 1-channel image with clamp-to-border edges.
pub fn gaussian_blur(img: &Image, sigma: f64) -> Result<Image> {
    if img.channels() != 1 {
        return Err(Error::invalid("Gaussian blur expects a 1-channel image"));
    }
    let kernel = gaussian_kernel(sigma)?;
    let r = (kernel.len() / 2) as isize;
    let (w, h) = (img.width() as isize, img.height() as isize);

    let mut horiz = vec![0f64; img.data().len()];
    for y in 0..h {
        for x in 0..w {
            horiz[(y * w + x) as usize] = kernel
                .iter()
                .enumerate()
                .map(|(i, k)| k * img.clamped(x + i as isize - r, y) as f64)
                .sum();
        }
    }
    let mut out = vec![0u8; img.data().len()];
    for y in 0..h {
        for x in 0..w {
            let v: f64 = kernel
                .iter()
                .enumerate()
                .map(|(i, k)| {
                    let yy = (y + i as isize - r).clamp(0, h - 1);
                    k * horiz[(yy * w + x) as usize]
                })
                .sum();
            out[(y * w + x) as usize] = v.round().clamp(0.0, 255.0) as u8;
        }
    }
    Image::new(img.width(), img.height(), 1, out)
}

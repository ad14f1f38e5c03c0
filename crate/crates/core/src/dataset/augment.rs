use std::collections::HashSet;
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{Manifest, ManifestRecord};
use crate::imaging::{write_pnm, Image};
use crate::{seed, Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AugmentParams {
    pub rotation_max_deg: f64,
    pub flip_horizontal: bool,
    pub flip_vertical: bool,
    /// Inclusive range of brightness multipliers.
    pub brightness: (f64, f64),
    pub copies: usize,
}

impl Default for AugmentParams {
    fn default() -> Self {
        Self {
            rotation_max_deg: 20.0,
            flip_horizontal: true,
            flip_vertical: true,
            brightness: (0.8, 1.2),
            copies: 50,
        }
    }
}

impl AugmentParams {
    /// Parameters under which augmentation is the identity.
    pub fn identity() -> Self {
        Self {
            rotation_max_deg: 0.0,
            flip_horizontal: false,
            flip_vertical: false,
            brightness: (1.0, 1.0),
            copies: 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=180.0).contains(&self.rotation_max_deg) {
            return Err(Error::invalid(format!(
                "rotation_max_deg must lie in [0, 180], got {}",
                self.rotation_max_deg
            )));
        }
        let (lo, hi) = self.brightness;
        if !(lo > 0.0 && lo <= hi && hi.is_finite()) {
            return Err(Error::invalid(format!(
                "brightness range needs 0 < lo <= hi, got [{lo}, {hi}]"
            )));
        }
        if self.copies == 0 {
            return Err(Error::invalid("copies must be at least 1"));
        }
        Ok(())
    }
}

/// One concrete draw of the random transform.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AugmentTransform {
    pub angle_deg: f64,
    pub flip_horizontal: bool,
    pub flip_vertical: bool,
    pub brightness: f64,
}

impl AugmentTransform {
    /// Draws angle, horizontal flip, vertical flip, brightness, in that order.
    /// Disabled flips consume no randomness.
    pub fn sample<R: Rng>(params: &AugmentParams, rng: &mut R) -> Self {
        let m = params.rotation_max_deg;
        let angle_deg = rng.random_range(-m..=m);
        let flip_horizontal = params.flip_horizontal && rng.random_bool(0.5);
        let flip_vertical = params.flip_vertical && rng.random_bool(0.5);
        let (lo, hi) = params.brightness;
        let brightness = rng.random_range(lo..=hi);
        Self {
            angle_deg,
            flip_horizontal,
            flip_vertical,
            brightness,
        }
    }

    /// Rotation about the centre (nearest neighbour, black fill), flips,
    /// then brightness with clamping.
    pub fn apply(&self, img: &Image) -> Image {
        let (w, h, c) = (img.width(), img.height(), img.channels());
        let mut out = if self.angle_deg == 0.0 {
            img.clone()
        } else {
            let mut rotated = Image::filled(w, h, c, 0).expect("same dimensions");
            let (sin, cos) = self.angle_deg.to_radians().sin_cos();
            let (cx, cy) = ((w as f64 - 1.0) / 2.0, (h as f64 - 1.0) / 2.0);
            for y in 0..h {
                for x in 0..w {
                    // inverse mapping from destination to source
                    let (dx, dy) = (x as f64 - cx, y as f64 - cy);
                    let sx = (cos * dx + sin * dy + cx).round();
                    let sy = (-sin * dx + cos * dy + cy).round();
                    if sx >= 0.0 && sy >= 0.0 && sx < w as f64 && sy < h as f64 {
                        let src = img.pixel(sx as usize, sy as usize).to_vec();
                        rotated.pixel_mut(x, y).copy_from_slice(&src);
                    }
                }
            }
            rotated
        };

        if self.flip_horizontal {
            for y in 0..h {
                for x in 0..w / 2 {
                    for k in 0..c {
                        let (a, b) = ((y * w + x) * c + k, (y * w + w - 1 - x) * c + k);
                        out.data_mut().swap(a, b);
                    }
                }
            }
        }
        if self.flip_vertical {
            let row = w * c;
            for y in 0..h / 2 {
                let (top, rest) = out.data_mut().split_at_mut((h - 1 - y) * row);
                top[y * row..(y + 1) * row].swap_with_slice(&mut rest[..row]);
            }
        }
        if self.brightness != 1.0 {
            for v in out.data_mut() {
                *v = (*v as f64 * self.brightness).round().clamp(0.0, 255.0) as u8;
            }
        }
        out
    }
}

/// Random label-preserving transform; the generator is seeded with `seed`.
pub fn augment_image(img: &Image, params: &AugmentParams, seed: u64) -> Image {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    AugmentTransform::sample(params, &mut rng).apply(img)
}

fn split_name(path: &str) -> (&str, &str) {
    let file = path.rsplit(['/', '\\']).next().unwrap_or(path);
    match file.rfind('.') {
        Some(i) if i > 0 => (&file[..i], &file[i..]),
        _ => (file, ""),
    }
}

/// Writes every original plus `copies` augmented variants into `out_dir`.
///
/// Copy `k` of a record is augmented with seed
/// `derive(base_seed, hash(origin_id), k)`, so results do not depend on
/// record order or on how the work is scheduled. The returned manifest lists
/// each original followed by its copies, all rooted at `out_dir`.
pub fn generate_augmented_dataset(
    manifest: &Manifest,
    params: &AugmentParams,
    base_seed: u64,
    out_dir: impl AsRef<Path>,
) -> Result<Manifest> {
    params.validate()?;
    if manifest.is_empty() {
        return Err(Error::invalid("cannot augment an empty manifest"));
    }
    let out_dir = out_dir.as_ref();
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;

    let mut stems = HashSet::new();
    for r in &manifest.records {
        if !stems.insert(split_name(&r.image_path).0) {
            return Err(Error::invalid(format!(
                "duplicate image name {:?} would collide in {}",
                r.image_path,
                out_dir.display()
            )));
        }
    }

    let per_record: Vec<Vec<ManifestRecord>> = manifest
        .records
        .par_iter()
        .map(|rec| -> Result<Vec<ManifestRecord>> {
            let img = manifest.load_image(rec)?;
            let (stem, ext) = split_name(&rec.image_path);
            let origin_hash = seed::hash_str(&rec.origin_id);
            let mut out = Vec::with_capacity(params.copies + 1);
            let mut emit = |name: String, img: &Image| -> Result<()> {
                write_pnm(img, out_dir.join(&name))?;
                out.push(ManifestRecord {
                    image_path: name,
                    area_sq_m: rec.area_sq_m,
                    origin_id: rec.origin_id.clone(),
                });
                Ok(())
            };
            emit(format!("{stem}{ext}"), &img)?;
            for k in 0..params.copies {
                let s = seed::derive(&[base_seed, origin_hash, k as u64]);
                emit(format!("{stem}_aug{k:03}{ext}"), &augment_image(&img, params, s))?;
            }
            Ok(out)
        })
        .collect::<Result<_>>()?;

    Ok(Manifest::new(out_dir, per_record.into_iter().flatten().collect()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{load_manifest, save_manifest};
    use proptest::prelude::*;

    fn rgb(w: usize, h: usize, seed: u8) -> Image {
        let data = (0..w * h * 3)
            .map(|i| (i as u8).wrapping_mul(37).wrapping_add(seed))
            .collect();
        Image::new(w, h, 3, data).unwrap()
    }

    #[test]
    fn identity_params_are_identity() {
        let img = rgb(9, 7, 3);
        for s in 0..10 {
            assert_eq!(augment_image(&img, &AugmentParams::identity(), s), img);
        }
    }

    #[test]
    fn forced_horizontal_flip() {
        let img = Image::new(2, 1, 1, vec![10, 20]).unwrap();
        let t = AugmentTransform {
            angle_deg: 0.0,
            flip_horizontal: true,
            flip_vertical: false,
            brightness: 1.0,
        };
        assert_eq!(t.apply(&img).data(), &[20, 10]);
        let t = AugmentTransform {
            flip_horizontal: false,
            flip_vertical: true,
            ..t
        };
        let col = Image::new(1, 3, 1, vec![1, 2, 3]).unwrap();
        assert_eq!(t.apply(&col).data(), &[3, 2, 1]);
    }

    #[test]
    fn quarter_turn_moves_pixels() {
        // 3x3 with a marker at top-middle; +90 degrees maps it to a side
        let mut data = vec![0u8; 9];
        data[1] = 200;
        let img = Image::new(3, 3, 1, data).unwrap();
        let t = AugmentTransform {
            angle_deg: 90.0,
            flip_horizontal: false,
            flip_vertical: false,
            brightness: 1.0,
        };
        let out = t.apply(&img);
        assert_eq!(out.data().iter().filter(|&&v| v == 200).count(), 1);
        assert_eq!(out.data()[1], 0);
        assert_eq!(out.data()[4], 0);
    }

    #[test]
    fn brightness_clamps() {
        let img = Image::new(2, 1, 1, vec![100, 250]).unwrap();
        let t = AugmentTransform {
            angle_deg: 0.0,
            flip_horizontal: false,
            flip_vertical: false,
            brightness: 1.2,
        };
        assert_eq!(t.apply(&img).data(), &[120, 255]);
    }

    #[test]
    fn params_validation() {
        assert!(AugmentParams::default().validate().is_ok());
        for p in [
            AugmentParams {
                rotation_max_deg: 181.0,
                ..Default::default()
            },
            AugmentParams {
                brightness: (0.0, 1.0),
                ..Default::default()
            },
            AugmentParams {
                brightness: (1.2, 0.8),
                ..Default::default()
            },
            AugmentParams {
                copies: 0,
                ..Default::default()
            },
        ] {
            assert!(p.validate().is_err(), "{p:?}");
        }
    }

    proptest! {
        #[test]
        fn deterministic_and_size_preserving(seed in any::<u64>(), w in 1usize..12, h in 1usize..12) {
            let img = rgb(w, h, 9);
            let p = AugmentParams::default();
            let a = augment_image(&img, &p, seed);
            prop_assert_eq!(&a, &augment_image(&img, &p, seed));
            prop_assert_eq!((a.width(), a.height(), a.channels()), (w, h, 3));
        }
    }

    #[test]
    fn dataset_counts_labels_and_reproducibility() {
        let src = tempfile::tempdir().unwrap();
        let mut records = Vec::new();
        for (i, area) in [(0, 120.5), (1, 300.0)] {
            let name = format!("h{i}.ppm");
            write_pnm(&rgb(6, 5, i as u8), src.path().join(&name)).unwrap();
            records.push(ManifestRecord {
                image_path: name,
                area_sq_m: area,
                origin_id: format!("h{i}"),
            });
        }
        let m = Manifest::new(src.path(), records);
        let p = AugmentParams {
            copies: 3,
            ..Default::default()
        };

        let out1 = tempfile::tempdir().unwrap();
        let out2 = tempfile::tempdir().unwrap();
        let a = generate_augmented_dataset(&m, &p, 11, out1.path()).unwrap();
        let b = generate_augmented_dataset(&m, &p, 11, out2.path()).unwrap();
        assert_eq!(a.len(), 8);
        assert_eq!(a.records, b.records);
        for r in &a.records {
            let orig = m.records.iter().find(|o| o.origin_id == r.origin_id).unwrap();
            assert_eq!(r.area_sq_m, orig.area_sq_m);
            let x = fs::read(out1.path().join(&r.image_path)).unwrap();
            let y = fs::read(out2.path().join(&r.image_path)).unwrap();
            assert_eq!(x, y);
        }
        save_manifest(&a, out1.path().join("manifest.csv")).unwrap();
        assert_eq!(load_manifest(out1.path().join("manifest.csv")).unwrap(), a);

        let missing = Manifest::new(
            src.path(),
            vec![ManifestRecord {
                image_path: "nope.ppm".into(),
                area_sq_m: 1.0,
                origin_id: "z".into(),
            }],
        );
        match generate_augmented_dataset(&missing, &p, 1, out1.path()) {
            Err(Error::Io { path, .. }) => assert!(path.ends_with("nope.ppm")),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn default_copies_count_arithmetic() {
        // 65 originals with 50 copies each, originals retained
        let p = AugmentParams::default();
        assert_eq!(p.copies, 50);
        assert_eq!(65 * (p.copies + 1), 3315);
    }
}

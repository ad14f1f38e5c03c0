use std::collections::HashMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::Manifest;
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    /// Train, validation and test fractions.
    pub ratios: [f64; 3],
    /// Keep every augmented copy in the same split as its original.
    pub by_original: bool,
    pub seed: u64,
    /// Exact unit counts overriding the ratios (units are origins when
    /// `by_original`, records otherwise).
    pub counts: Option<[usize; 3]>,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self {
            ratios: [0.70, 0.15, 0.15],
            by_original: true,
            seed: 0,
            counts: None,
        }
    }
}

impl SplitSpec {
    pub fn validate(&self) -> Result<()> {
        if self.ratios.iter().any(|&r| !(r > 0.0)) {
            return Err(Error::invalid(format!(
                "split ratios must be positive: {:?}",
                self.ratios
            )));
        }
        let sum: f64 = self.ratios.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::invalid(format!("split ratios sum to {sum}, not 1")));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Splits {
    pub train: Manifest,
    pub val: Manifest,
    pub test: Manifest,
}

/// Largest-remainder apportionment of `n` units; leftover units go to the
/// largest fractional parts, earlier splits first on ties.
pub fn allocate(n: usize, ratios: &[f64; 3]) -> [usize; 3] {
    let exact: Vec<f64> = ratios.iter().map(|r| r * n as f64).collect();
    let mut sizes = [0usize; 3];
    for (s, e) in sizes.iter_mut().zip(&exact) {
        *s = e.floor() as usize;
    }
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| {
        let fa = exact[a] - exact[a].floor();
        let fb = exact[b] - exact[b].floor();
        fb.total_cmp(&fa).then(a.cmp(&b))
    });
    let assigned: usize = sizes.iter().sum();
    for &i in order.iter().take(n.saturating_sub(assigned)) {
        sizes[i] += 1;
    }
    sizes
}

/// Seeded train/validation/test partition.
///
/// With `by_original` the distinct origin ids are shuffled and apportioned, and
/// every record follows its origin, so no picture leaks across splits.
/// Otherwise records are shuffled and apportioned individually, which lets
/// augmented twins land in different splits. Records keep manifest order
/// within each split.
pub fn split_dataset(manifest: &Manifest, spec: &SplitSpec) -> Result<Splits> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);

    let units = if spec.by_original {
        manifest.origins().len()
    } else {
        manifest.len()
    };
    if spec.by_original && units < 3 {
        return Err(Error::invalid(format!(
            "splitting by original needs at least 3 origins, found {units}"
        )));
    }
    let sizes = match spec.counts {
        Some(c) if c.iter().sum::<usize>() != units => {
            return Err(Error::invalid(format!(
                "split counts {c:?} do not sum to {units} units"
            )))
        }
        Some(c) => c,
        None => allocate(units, &spec.ratios),
    };

    let mut order: Vec<usize> = (0..units).collect();
    order.shuffle(&mut rng);
    let mut unit_split = vec![0u8; units];
    for (pos, &u) in order.iter().enumerate() {
        unit_split[u] = if pos < sizes[0] {
            0
        } else if pos < sizes[0] + sizes[1] {
            1
        } else {
            2
        };
    }

    let split_of: Vec<u8> = if spec.by_original {
        let index: HashMap<String, usize> = manifest
            .origins()
            .into_iter()
            .enumerate()
            .map(|(i, o)| (o, i))
            .collect();
        manifest
            .records
            .iter()
            .map(|r| unit_split[index[&r.origin_id]])
            .collect()
    } else {
        unit_split
    };

    let pick = |s: u8| {
        let idx: Vec<usize> = (0..manifest.len()).filter(|&i| split_of[i] == s).collect();
        manifest.subset(&idx)
    };
    Ok(Splits {
        train: pick(0),
        val: pick(1),
        test: pick(2),
    })
}

//! Synthetic glyph datasets whose class either sits in one glyph or only in
//! the relation between two.
//!
//! Glyph `g` is a fixed binary stencil whose ink count strictly increases
//! with `g`, so glyphs are pairwise distinct and totals of ink separate
//! classes in the single-glyph mode. In contextual mode a sample carries two
//! non-overlapping glyphs `(a, b)` and the label is `(a + b) mod M`; the pair
//! is uniform over all `M²` combinations, so each glyph alone is independent
//! of the label.

use std::collections::HashSet;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{DataError, ImageDataset, Split};

const STENCIL_SEED: u64 = 0x9e37_79b9_7f4a_7c15;
const MAX_ATTEMPTS: usize = 10_000;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticContextConfig {
    pub image_size: usize,
    pub glyph_size: usize,
    pub class_count: usize,
    pub contextual: bool,
    pub train_samples: usize,
    pub test_samples: usize,
    pub seed: u64,
}

impl SyntheticContextConfig {
    pub fn validate(&self) -> Result<(), DataError> {
        let err = |m: String| Err(DataError::Synthetic(m));
        if self.glyph_size == 0 || self.image_size == 0 {
            return err("image_size and glyph_size must be positive".into());
        }
        if self.class_count < 2 {
            return err(format!("class_count must be at least 2, got {}", self.class_count));
        }
        if self.class_count > self.glyph_size * self.glyph_size {
            return err(format!(
                "{} glyph types need at least {} cells, glyph has {}",
                self.class_count,
                self.class_count,
                self.glyph_size * self.glyph_size
            ));
        }
        let needed = if self.contextual {
            2 * self.glyph_size
        } else {
            self.glyph_size
        };
        if self.image_size < needed {
            return err(format!(
                "image_size {} cannot hold the glyphs (needs {needed})",
                self.image_size
            ));
        }
        if self.train_samples == 0 || self.test_samples == 0 {
            return err("both splits need at least one sample".into());
        }
        Ok(())
    }
}

/// Glyph identities and top-left corners of one sample, in reading order.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct SampleMeta {
    pub glyphs: Vec<usize>,
    pub positions: Vec<(usize, usize)>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticSplit {
    pub dataset: ImageDataset,
    pub meta: Vec<SampleMeta>,
}

/// Row-major `glyph_size²` stencils, one per class.
pub fn stencils(glyph_size: usize, count: usize) -> Vec<Vec<bool>> {
    let cells = glyph_size * glyph_size;
    let step_den = count.saturating_sub(1).max(1);
    (0..count)
        .map(|g| {
            let ink = 1 + g * (cells - 1) / step_den;
            let mut order: Vec<usize> = (0..cells).collect();
            order.shuffle(&mut ChaCha8Rng::seed_from_u64(STENCIL_SEED ^ g as u64));
            let mut stencil = vec![false; cells];
            for &c in &order[..ink] {
                stencil[c] = true;
            }
            stencil
        })
        .collect()
}

fn overlaps(a: (usize, usize), b: (usize, usize), g: usize) -> bool {
    a.0 < b.0 + g && b.0 < a.0 + g && a.1 < b.1 + g && b.1 < a.1 + g
}

fn draw_meta(cfg: &SyntheticContextConfig, label: usize, rng: &mut ChaCha8Rng) -> SampleMeta {
    let m = cfg.class_count;
    let span = cfg.image_size - cfg.glyph_size + 1;
    let corner = |rng: &mut ChaCha8Rng| (rng.random_range(0..span), rng.random_range(0..span));
    if !cfg.contextual {
        return SampleMeta {
            glyphs: vec![label],
            positions: vec![corner(rng)],
        };
    }
    let a = rng.random_range(0..m);
    let b = (label + m - a) % m;
    let pa = corner(rng);
    let pb = loop {
        let p = corner(rng);
        if !overlaps(pa, p, cfg.glyph_size) {
            break p;
        }
    };
    let mut placed = [(pa, a), (pb, b)];
    placed.sort();
    SampleMeta {
        glyphs: placed.iter().map(|&(_, g)| g).collect(),
        positions: placed.iter().map(|&(p, _)| p).collect(),
    }
}

fn render(cfg: &SyntheticContextConfig, stencils: &[Vec<bool>], meta: &SampleMeta, out: &mut Vec<u8>) {
    let (s, gs) = (cfg.image_size, cfg.glyph_size);
    let start = out.len();
    out.resize(start + s * s, 0);
    let img = &mut out[start..];
    for (&g, &(py, px)) in meta.glyphs.iter().zip(&meta.positions) {
        for dy in 0..gs {
            for dx in 0..gs {
                if stencils[g][dy * gs + dx] {
                    img[(py + dy) * s + px + dx] = 255;
                }
            }
        }
    }
}

fn build_split(
    cfg: &SyntheticContextConfig,
    stencils: &[Vec<bool>],
    n: usize,
    split: Split,
    seen: &mut HashSet<SampleMeta>,
    record: bool,
    rng: &mut ChaCha8Rng,
) -> Result<SyntheticSplit, DataError> {
    let mut order: Vec<usize> = (0..n).map(|i| i % cfg.class_count).collect();
    order.shuffle(rng);
    let mut meta = Vec::with_capacity(n);
    for &label in &order {
        let mut attempts = 0;
        let m = loop {
            let m = draw_meta(cfg, label, rng);
            if record || !seen.contains(&m) {
                break m;
            }
            attempts += 1;
            if attempts == MAX_ATTEMPTS {
                return Err(DataError::Synthetic(format!(
                    "could not draw a test sample of class {label} unseen in training; enlarge image_size"
                )));
            }
        };
        if record {
            seen.insert(m.clone());
        }
        meta.push(m);
    }
    let mut images = Vec::with_capacity(n * cfg.image_size * cfg.image_size);
    for m in &meta {
        render(cfg, stencils, m, &mut images);
    }
    let dataset = ImageDataset::new(images, order, 1, cfg.image_size, cfg.class_count, split)?;
    Ok(SyntheticSplit { dataset, meta })
}

/// Train and test splits with per-sample glyph metadata. Class counts are
/// balanced to within one sample; no test sample's glyph layout appears in
/// the training split.
pub fn synth_context_splits(cfg: &SyntheticContextConfig) -> Result<(SyntheticSplit, SyntheticSplit), DataError> {
    cfg.validate()?;
    let stencils = stencils(cfg.glyph_size, cfg.class_count);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut seen = HashSet::new();
    let train = build_split(
        cfg,
        &stencils,
        cfg.train_samples,
        Split::Train,
        &mut seen,
        true,
        &mut rng,
    )?;
    let test = build_split(
        cfg,
        &stencils,
        cfg.test_samples,
        Split::Test,
        &mut seen,
        false,
        &mut rng,
    )?;
    Ok((train, test))
}

pub fn synth_context_dataset(cfg: &SyntheticContextConfig) -> Result<(ImageDataset, ImageDataset), DataError> {
    let (train, test) = synth_context_splits(cfg)?;
    Ok((train.dataset, test.dataset))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(contextual: bool, classes: usize, n: usize) -> SyntheticContextConfig {
        SyntheticContextConfig {
            image_size: 16,
            glyph_size: 4,
            class_count: classes,
            contextual,
            train_samples: n,
            test_samples: n / 4,
            seed: 11,
        }
    }

    #[test]
    fn stencil_ink_counts_strictly_increase() {
        for (gs, m) in [(2, 2), (3, 9), (4, 10), (5, 3)] {
            let s = stencils(gs, m);
            let ink: Vec<usize> = s.iter().map(|st| st.iter().filter(|&&b| b).count()).collect();
            assert!(ink.windows(2).all(|w| w[0] < w[1]), "{ink:?}");
            assert!(ink[0] >= 1 && *ink.last().unwrap() <= gs * gs);
        }
    }

    #[test]
    fn single_glyph_label_is_glyph_and_ink_separates_classes() {
        let (train, _) = synth_context_splits(&cfg(false, 2, 200)).unwrap();
        let ds = &train.dataset;
        let mut correct = 0;
        let threshold = {
            let s = stencils(4, 2);
            let ink = |g: usize| s[g].iter().filter(|&&b| b).count();
            (ink(0) + ink(1)) as f64 / 2.0
        };
        for i in 0..ds.len() {
            assert_eq!(train.meta[i].glyphs, vec![ds.label(i)]);
            let ink = ds.image_bytes(i).iter().filter(|&&b| b > 0).count() as f64;
            correct += usize::from((ink > threshold) == (ds.label(i) == 1));
        }
        assert!(correct as f64 / ds.len() as f64 > 0.9);
    }

    #[test]
    fn xor_pairs_leave_each_glyph_uninformative() {
        let (train, test) = synth_context_splits(&cfg(true, 2, 4000)).unwrap();
        for split in [&train, &test] {
            let mut table = [[0usize; 2]; 2];
            for (m, &l) in split.meta.iter().zip(split.dataset.labels()) {
                assert_eq!(m.glyphs.len(), 2);
                assert_eq!((m.glyphs[0] + m.glyphs[1]) % 2, l);
                assert!(!overlaps(m.positions[0], m.positions[1], 4));
                table[m.glyphs[0]][l] += 1;
            }
            for row in table {
                let p = row[1] as f64 / (row[0] + row[1]) as f64;
                assert!((p - 0.5).abs() < 0.05, "{table:?}");
            }
        }
    }

    #[test]
    fn classes_balanced_splits_disjoint_and_deterministic() {
        let c = SyntheticContextConfig {
            train_samples: 10_000,
            test_samples: 1_000,
            class_count: 10,
            ..cfg(true, 10, 0)
        };
        let (train, test) = synth_context_splits(&c).unwrap();
        for split in [&train.dataset, &test.dataset] {
            let counts = split.class_counts();
            let mean = split.len() as f64 / 10.0;
            assert!(
                counts.iter().all(|&k| (k as f64 - mean).abs() <= 0.01 * mean),
                "{counts:?}"
            );
        }
        let train_images: HashSet<&[u8]> = (0..train.dataset.len()).map(|i| train.dataset.image_bytes(i)).collect();
        assert!((0..test.dataset.len()).all(|i| !train_images.contains(test.dataset.image_bytes(i))));
        let (again, _) = synth_context_splits(&c).unwrap();
        assert_eq!(again, train);
        let (other, _) = synth_context_splits(&SyntheticContextConfig { seed: 12, ..c }).unwrap();
        assert_ne!(other.dataset, train.dataset);
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let base = cfg(true, 2, 10);
        for bad in [
            SyntheticContextConfig {
                image_size: 7,
                ..base.clone()
            },
            SyntheticContextConfig {
                class_count: 1,
                ..base.clone()
            },
            SyntheticContextConfig {
                class_count: 17,
                ..base.clone()
            },
            SyntheticContextConfig {
                test_samples: 0,
                ..base.clone()
            },
        ] {
            assert!(matches!(synth_context_dataset(&bad), Err(DataError::Synthetic(_))));
        }
    }
}

//! Synthetic confounder dataset. Each example crosses an image motif
//! (striped or checker) with a caption keyword (trigger or benign word);
//! the label is 1 exactly for striped + trigger. Either modality alone
//! caps accuracy at 75%.

use std::path::{Path, PathBuf};

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::image::{write_ppm, Rgb8};
use super::manifest::{write_manifest, ManifestEntry};
use crate::error::{Error, Result};

pub const TOY_IMAGE_SIZE: usize = 64;
pub const MOTIF_SIZE: usize = 32;
/// Motif corners lie on this grid, so the motif covers whole 16×16 patches.
pub const MOTIF_STEP: usize = 16;

pub const TRIGGER_WORDS: [&str; 6] = [
    "vermin",
    "invade",
    "destroy",
    "filth",
    "exterminate",
    "parasite",
];
pub const BENIGN_WORDS: [&str; 6] = [
    "sunshine", "garden", "friendly", "picnic", "festival", "harmony",
];
pub const DISTRACTOR_WORDS: [&str; 16] = [
    "today", "look", "picture", "street", "weekend", "coffee", "morning", "people", "city",
    "photo", "music", "friday", "little", "window", "yellow", "random",
];

const COLOR_A: [u8; 3] = [230, 200, 40];
const COLOR_B: [u8; 3] = [30, 60, 200];
const BACKGROUND: u8 = 110;
const NOISE: i32 = 12;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ToyItem {
    pub id: String,
    pub image: Rgb8,
    pub caption: String,
    pub label: usize,
    pub striped: bool,
    pub trigger: bool,
    /// Top-left pixel of the motif.
    pub motif_origin: (usize, usize),
}

impl ToyItem {
    /// Row-major indices of the `patch × patch` grid cells covered by the
    /// motif.
    pub fn motif_patches(&self, patch: usize) -> Vec<usize> {
        let cols = self.image.width / patch;
        let (x0, y0) = self.motif_origin;
        let mut out = Vec::new();
        for r in y0 / patch..(y0 + MOTIF_SIZE).div_ceil(patch) {
            for c in x0 / patch..(x0 + MOTIF_SIZE).div_ceil(patch) {
                out.push(r * cols + c);
            }
        }
        out
    }
}

/// `n` examples, `n / 4` in each (motif, keyword) cell, in shuffled order.
pub fn generate_toy(n: usize, seed: u64) -> Result<Vec<ToyItem>> {
    if n < 40 || !n.is_multiple_of(4) {
        return Err(Error::Contract(format!(
            "toy dataset size must be a multiple of 4 and at least 40, got {n}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut cells: Vec<(bool, bool)> = (0..n).map(|i| (i % 2 == 0, (i / 2) % 2 == 0)).collect();
    cells.shuffle(&mut rng);
    let positions = (TOY_IMAGE_SIZE - MOTIF_SIZE) / MOTIF_STEP + 1;
    Ok(cells
        .into_iter()
        .enumerate()
        .map(|(i, (striped, trigger))| {
            let origin = (
                rng.random_range(0..positions) * MOTIF_STEP,
                rng.random_range(0..positions) * MOTIF_STEP,
            );
            ToyItem {
                id: format!("toy-{i:05}"),
                image: draw(striped, origin, &mut rng),
                caption: caption(trigger, &mut rng),
                label: usize::from(striped && trigger),
                striped,
                trigger,
                motif_origin: origin,
            }
        })
        .collect())
}

fn draw(striped: bool, (x0, y0): (usize, usize), rng: &mut impl Rng) -> Rgb8 {
    let mut img = Rgb8::filled(TOY_IMAGE_SIZE, TOY_IMAGE_SIZE, [0; 3]);
    for y in 0..TOY_IMAGE_SIZE {
        for x in 0..TOY_IMAGE_SIZE {
            let px =
                [0; 3].map(|_: u8| (BACKGROUND as i32 + rng.random_range(-NOISE..=NOISE)) as u8);
            img.put(x, y, px);
        }
    }
    for dy in 0..MOTIF_SIZE {
        for dx in 0..MOTIF_SIZE {
            // Stripes: 2-pixel bands. Checker: 4×4 squares.
            let first = if striped {
                (dy / 2) % 2 == 0
            } else {
                (dy / 4 + dx / 4) % 2 == 0
            };
            img.put(x0 + dx, y0 + dy, if first { COLOR_A } else { COLOR_B });
        }
    }
    img
}

fn caption(trigger: bool, rng: &mut impl Rng) -> String {
    let keywords: &[&str] = if trigger {
        &TRIGGER_WORDS
    } else {
        &BENIGN_WORDS
    };
    let extra = rng.random_range(2..=5);
    let mut words: Vec<&str> = DISTRACTOR_WORDS
        .choose_multiple(rng, extra)
        .copied()
        .collect();
    let at = rng.random_range(0..=words.len());
    words.insert(at, keywords.choose(rng).expect("non-empty"));
    words.join(" ")
}

/// Writes `img_XXXXX.ppm` files and `manifest.jsonl` into `dir` and returns
/// the manifest path.
pub fn write_toy_dataset(dir: &Path, n: usize, seed: u64) -> Result<PathBuf> {
    let items = generate_toy(n, seed)?;
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut entries = Vec::with_capacity(items.len());
    for (i, item) in items.iter().enumerate() {
        let name = format!("img_{i:05}.ppm");
        write_ppm(&dir.join(&name), &item.image)?;
        entries.push(ManifestEntry {
            id: item.id.clone(),
            image_path: name.into(),
            caption: item.caption.clone(),
            label: item.label,
        });
    }
    let manifest = dir.join("manifest.jsonl");
    write_manifest(&manifest, &entries)?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::caption::{preprocess_text, Stopwords};

    #[test]
    fn forty_gives_ten_per_cell() {
        let items = generate_toy(40, 1).unwrap();
        for s in [false, true] {
            for t in [false, true] {
                let n = items
                    .iter()
                    .filter(|i| i.striped == s && i.trigger == t)
                    .count();
                assert_eq!(n, 10);
            }
        }
        assert_eq!(items.iter().filter(|i| i.label == 1).count(), 10);
    }

    #[test]
    fn bad_sizes_are_contract_errors() {
        for n in [0, 36, 42, 401] {
            assert!(matches!(generate_toy(n, 0), Err(Error::Contract(_))));
        }
    }

    /// Exhaustive search over every decision rule on a single modality.
    #[test]
    fn unimodal_rules_peak_at_75_percent() {
        let items = generate_toy(400, 7).unwrap();
        let best = |feature: &dyn Fn(&ToyItem) -> bool| {
            let mut best = 0.0f64;
            for rule in 0..4u8 {
                let predict = |f: bool| (rule >> usize::from(f)) & 1;
                let correct = items
                    .iter()
                    .filter(|i| predict(feature(i)) as usize == i.label)
                    .count();
                best = best.max(correct as f64 / items.len() as f64);
            }
            best
        };
        assert_eq!(best(&|i| i.striped), 0.75);
        assert_eq!(best(&|i| i.trigger), 0.75);
        assert!(items
            .iter()
            .all(|i| i.label == usize::from(i.striped && i.trigger)));
    }

    #[test]
    fn captions_have_one_keyword_and_three_to_six_words() {
        let stop = Stopwords::default();
        for item in generate_toy(200, 3).unwrap() {
            let words: Vec<_> = item.caption.split(' ').collect();
            assert!((3..=6).contains(&words.len()), "{}", item.caption);
            let hits = |set: &[&str]| words.iter().filter(|w| set.contains(w)).count();
            assert_eq!(hits(&TRIGGER_WORDS), usize::from(item.trigger));
            assert_eq!(hits(&BENIGN_WORDS), usize::from(!item.trigger));
            assert_eq!(preprocess_text(&item.caption, &stop).len(), words.len());
        }
    }

    #[test]
    fn motif_covers_four_aligned_patches() {
        for item in generate_toy(40, 5).unwrap() {
            let p = item.motif_patches(16);
            assert_eq!(p.len(), 4);
            let (x0, y0) = item.motif_origin;
            assert_eq!(p[0], (y0 / 16) * 4 + x0 / 16);
        }
    }

    #[test]
    fn same_seed_writes_identical_files() {
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        write_toy_dataset(a.path(), 40, 11).unwrap();
        write_toy_dataset(b.path(), 40, 11).unwrap();
        let mut names: Vec<_> = std::fs::read_dir(a.path())
            .unwrap()
            .map(|e| e.unwrap().file_name())
            .collect();
        names.sort();
        assert_eq!(names.len(), 41);
        for name in names {
            assert_eq!(
                std::fs::read(a.path().join(&name)).unwrap(),
                std::fs::read(b.path().join(&name)).unwrap()
            );
        }
    }
}

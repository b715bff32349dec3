use std::fs;
use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::Serialize;

use super::dataset::{caption_id, DataError, ManifestRecord, MaskEntry};
use crate::tensor::Tensor;

pub const COLORS: [(&str, [f64; 3]); 6] = [
    ("red", [0.85, 0.10, 0.10]),
    ("blue", [0.10, 0.20, 0.85]),
    ("green", [0.10, 0.65, 0.20]),
    ("yellow", [0.90, 0.85, 0.10]),
    ("black", [0.08, 0.08, 0.08]),
    ("white", [0.92, 0.92, 0.92]),
];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Slot {
    Hat,
    Shirt,
    Pants,
    Shoes,
    Bag,
}

impl Slot {
    pub const ALL: [Slot; 5] = [Slot::Hat, Slot::Shirt, Slot::Pants, Slot::Shoes, Slot::Bag];

    pub fn name(self) -> &'static str {
        match self {
            Slot::Hat => "hat",
            Slot::Shirt => "shirt",
            Slot::Pants => "pants",
            Slot::Shoes => "shoes",
            Slot::Bag => "bag",
        }
    }

    /// Feature-map stripes (of six) that the slot's band overlaps.
    pub fn parts(self) -> &'static [usize] {
        match self {
            Slot::Hat => &[0],
            Slot::Shirt | Slot::Bag => &[1, 2],
            Slot::Pants => &[3, 4],
            Slot::Shoes => &[5],
        }
    }

    /// Surface nouns used for the slot in captions.
    pub fn nouns(self) -> &'static [&'static str] {
        match self {
            Slot::Hat => &["hat", "cap"],
            Slot::Shirt => &["shirt", "top", "jacket"],
            Slot::Pants => &["pants", "trousers", "jeans"],
            Slot::Shoes => &["shoes", "sneakers", "boots"],
            Slot::Bag => &["bag", "backpack"],
        }
    }

    fn item(self, color: &str, rng: &mut impl Rng) -> String {
        let noun = self.nouns().choose(rng).expect("nouns");
        match self {
            Slot::Pants => format!("{color} {noun}"),
            Slot::Shoes if rng.gen_bool(0.3) => format!("a pair of {color} {noun}"),
            Slot::Shoes => format!("{color} {noun}"),
            _ => format!("a {color} {noun}"),
        }
    }
}

/// One identity: a color index per slot.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PersonSpec {
    pub person_id: usize,
    pub colors: [usize; 5],
}

impl PersonSpec {
    pub fn color(&self, slot: Slot) -> &'static str {
        COLORS[self.colors[slot as usize]].0
    }

    fn hamming(&self, other: &[usize; 5]) -> usize {
        self.colors.iter().zip(other).filter(|(a, b)| a != b).count()
    }
}

#[derive(Clone, Debug)]
pub struct SynthConfig {
    pub train_ids: usize,
    pub val_ids: usize,
    pub test_ids: usize,
    pub images_per_id: usize,
    pub seed: u64,
    pub noise: f64,
    pub jitter: usize,
    /// Minimum number of differing slots between identities of one split.
    pub min_hamming: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            train_ids: 16,
            val_ids: 0,
            test_ids: 8,
            images_per_id: 4,
            seed: 42,
            noise: 0.05,
            jitter: 4,
            min_hamming: 4,
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct SynthSummary {
    pub images: usize,
    pub captions: usize,
    pub train_ids: usize,
    pub val_ids: usize,
    pub test_ids: usize,
    /// Hamming separation actually achieved within each split.
    pub min_hamming: usize,
}

pub const IMAGE_H: usize = 192;
pub const IMAGE_W: usize = 64;

/// Draws identities split by split; within a split every pair differs in at
/// least `min_hamming` slots (relaxed one step at a time if the split is too
/// large to satisfy it), and no tuple repeats across splits.
fn choose_identities(cfg: &SynthConfig, rng: &mut ChaCha8Rng) -> (Vec<Vec<PersonSpec>>, usize) {
    let mut used: Vec<[usize; 5]> = Vec::new();
    let mut splits = Vec::new();
    let mut achieved = cfg.min_hamming;
    let mut next_id = 0;
    for &count in &[cfg.train_ids, cfg.val_ids, cfg.test_ids] {
        let mut d = cfg.min_hamming;
        let split = loop {
            let mut split: Vec<PersonSpec> = Vec::new();
            for _ in 0..200_000 {
                if split.len() == count {
                    break;
                }
                let cand: [usize; 5] = std::array::from_fn(|_| rng.gen_range(0..COLORS.len()));
                if used.contains(&cand) || split.iter().any(|p| p.hamming(&cand) < d) {
                    continue;
                }
                split.push(PersonSpec { person_id: 0, colors: cand });
            }
            if split.len() == count || d <= 1 {
                break split;
            }
            d -= 1;
        };
        achieved = achieved.min(d);
        let split: Vec<PersonSpec> = split
            .into_iter()
            .map(|mut p| {
                p.person_id = next_id;
                next_id += 1;
                p
            })
            .collect();
        used.extend(split.iter().map(|p| p.colors));
        splits.push(split);
    }
    (splits, achieved)
}

/// Renders a `[3, 192, 64]` image: four vertical clothing bands on a figure,
/// a bag patch in the shirt band, per-pixel Gaussian noise.
pub fn render_image(person: &PersonSpec, rng: &mut impl Rng, noise: f64, jitter: usize) -> Tensor {
    let (h, w) = (IMAGE_H, IMAGE_W);
    let j = jitter as i64;
    let mut jit = |base: i64| (base + rng.gen_range(-j..=j)) as usize;
    let bounds = [0, jit(32), jit(96), jit(160), h];
    let bg = rng.gen_range(0.4..0.6);
    let x0 = rng.gen_range(8..16);
    let x1 = rng.gen_range(48..56);
    let bag_left = rng.gen_bool(0.5);
    let bag_top = bounds[1] + rng.gen_range(8..16);
    let (bx0, bx1) = if bag_left { (x0, x0 + 14) } else { (x1 - 14, x1) };
    let normal = Normal::new(0.0, noise.max(1e-12)).expect("valid sigma");
    let mut data = vec![0.0; 3 * h * w];
    let band_slot = [Slot::Hat, Slot::Shirt, Slot::Pants, Slot::Shoes];
    for y in 0..h {
        let band = (0..4).find(|&b| y < bounds[b + 1]).unwrap_or(3);
        for x in 0..w {
            let rgb = if (bx0..bx1).contains(&x) && (bag_top..bag_top + 32).contains(&y) {
                COLORS[person.colors[Slot::Bag as usize]].1
            } else if (x0..x1).contains(&x) {
                COLORS[person.colors[band_slot[band] as usize]].1
            } else {
                [bg; 3]
            };
            for c in 0..3 {
                let v = rgb[c] + if noise > 0.0 { normal.sample(rng) } else { 0.0 };
                data[(c * h + y) * w + x] = v.clamp(0.0, 1.0);
            }
        }
    }
    Tensor::new(vec![3, h, w], data).expect("finite pixels")
}

const SUBJECTS: [&str; 8] = ["a man", "a woman", "the person", "this pedestrian", "a young man", "a young woman", "the lady", "a guy"];
const WEAR_VERBS: [&str; 3] = ["wears", "is in", "has"];

/// A caption mentioning 2–4 random slots; returns the caption and the slots
/// it mentions. Every item follows a verb, preposition, conjunction or
/// determiner so each attribute chunks as its own noun phrase.
pub fn template_caption(person: &PersonSpec, rng: &mut impl Rng) -> (String, Vec<Slot>) {
    let k = rng.gen_range(2..=4);
    let mut slots = Slot::ALL.to_vec();
    slots.shuffle(rng);
    slots.truncate(k);
    let bag = slots.contains(&Slot::Bag);
    let clothing: Vec<Slot> = slots.iter().copied().filter(|&s| s != Slot::Bag).collect();
    let subject = SUBJECTS.choose(rng).expect("subjects");
    let mut text = subject.to_string();
    for (i, slot) in clothing.iter().enumerate() {
        let joiner = if i == 0 {
            WEAR_VERBS.choose(rng).expect("verbs")
        } else if rng.gen_bool(0.7) {
            "and"
        } else {
            "with"
        };
        text.push_str(&format!(" {joiner} {}", slot.item(person.color(*slot), rng)));
    }
    if bag {
        let joiner = if clothing.is_empty() {
            ["carries", "holds"].choose(rng).expect("verbs").to_string()
        } else {
            ["and carries", "with"].choose(rng).expect("joiners").to_string()
        };
        text.push_str(&format!(" {joiner} {}", Slot::Bag.item(person.color(Slot::Bag), rng)));
    }
    text.push('.');
    let mut chars = text.chars();
    let first = chars.next().map(|c| c.to_ascii_uppercase()).unwrap_or_default();
    let mut sorted = slots;
    sorted.sort();
    (format!("{first}{}", chars.as_str()), sorted)
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> DataError + '_ {
    move |source| DataError::Io { path: path.display().to_string(), source }
}

/// Writes `train.jsonl`, `val.jsonl`, `test.jsonl`, `masks.jsonl` and
/// `images/*.ten` under `out_dir`.
pub fn synth_generate(cfg: &SynthConfig, out_dir: &Path) -> Result<SynthSummary, DataError> {
    if cfg.train_ids < 2 {
        return Err(DataError::Config(format!("need at least 2 training identities, got {}", cfg.train_ids)));
    }
    if cfg.images_per_id == 0 {
        return Err(DataError::Config("images per identity must be positive".into()));
    }
    let images_dir = out_dir.join("images");
    fs::create_dir_all(&images_dir).map_err(io_err(&images_dir))?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let (splits, achieved) = choose_identities(cfg, &mut rng);
    let mut masks = Vec::new();
    let mut image_index = 0u64;
    let mut total_captions = 0;
    for (name, people) in ["train", "val", "test"].iter().zip(&splits) {
        let mut lines = Vec::new();
        for person in people {
            for _ in 0..cfg.images_per_id {
                let mut img_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
                img_rng.set_stream(image_index + 1);
                let image = render_image(person, &mut img_rng, cfg.noise, cfg.jitter);
                let rel = format!("images/{name}_{image_index:05}.ten");
                image.write_ten(&out_dir.join(&rel))?;
                let mut captions = Vec::new();
                for k in 0..2 {
                    let (caption, slots) = template_caption(person, &mut img_rng);
                    let mut parts: Vec<usize> = slots.iter().flat_map(|s| s.parts().iter().copied()).collect();
                    parts.sort_unstable();
                    parts.dedup();
                    masks.push(MaskEntry {
                        caption_id: caption_id(&rel, k),
                        attributes: slots.iter().map(|s| s.name().to_string()).collect(),
                        bands: parts,
                    });
                    captions.push(caption);
                }
                total_captions += captions.len();
                lines.push(ManifestRecord { person_id: person.person_id, image_path: rel, captions });
                image_index += 1;
            }
        }
        write_jsonl(&out_dir.join(format!("{name}.jsonl")), &lines)?;
    }
    write_jsonl(&out_dir.join("masks.jsonl"), &masks)?;
    Ok(SynthSummary {
        images: image_index as usize,
        captions: total_captions,
        train_ids: splits[0].len(),
        val_ids: splits[1].len(),
        test_ids: splits[2].len(),
        min_hamming: achieved,
    })
}

fn write_jsonl<T: Serialize>(path: &Path, rows: &[T]) -> Result<(), DataError> {
    let mut buf = Vec::new();
    for r in rows {
        serde_json::to_writer(&mut buf, r).expect("serializable record");
        buf.push(b'\n');
    }
    let mut f = fs::File::create(path).map_err(io_err(path))?;
    f.write_all(&buf).map_err(io_err(path))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::text::{Lexicon, TextSample};
    use std::collections::BTreeSet;

    fn person() -> PersonSpec {
        PersonSpec { person_id: 0, colors: [0, 1, 2, 3, 4] }
    }

    #[test]
    fn band_colors_are_recoverable() {
        let p = person();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let img = render_image(&p, &mut rng, 0.05, 4);
        // rows well inside each band, columns inside the figure away from the bag
        let centers = [(Slot::Hat, 16), (Slot::Shirt, 80), (Slot::Pants, 128), (Slot::Shoes, 180)];
        for (slot, y) in centers {
            let want = COLORS[p.colors[slot as usize]].1;
            for c in 0..3 {
                let mean: f64 = (24..40).map(|x| img.data()[(c * IMAGE_H + y) * IMAGE_W + x]).sum::<f64>() / 16.0;
                assert!((mean - want[c]).abs() < 0.05, "{slot:?} channel {c}: {mean} vs {}", want[c]);
            }
        }
    }

    #[test]
    fn every_mentioned_attribute_gets_its_own_phrase() {
        let lex = Lexicon::builtin();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..2000 {
            let colors = std::array::from_fn(|_| rng.gen_range(0..6));
            let p = PersonSpec { person_id: 0, colors };
            let (caption, slots) = template_caption(&p, &mut rng);
            let sample = TextSample::process(&caption, &lex);
            for slot in &slots {
                let hit = sample.phrases.iter().any(|ph| {
                    let words: Vec<&str> = ph.tokens.iter().map(|t| t.surface.as_str()).collect();
                    words.contains(&p.color(*slot)) && slot.nouns().contains(words.last().unwrap())
                });
                assert!(hit, "{caption:?} lacks a phrase for {slot:?}: {:?}", sample.phrase_texts());
            }
            // mask consistency: mentioned slots are exactly those whose nouns appear
            let tokens: BTreeSet<&str> = sample.tokens.iter().map(|t| t.surface.as_str()).collect();
            let appearing: Vec<Slot> = Slot::ALL.into_iter().filter(|s| s.nouns().iter().any(|n| tokens.contains(n))).collect();
            assert_eq!(appearing, slots, "{caption}");
            assert!((2..=4).contains(&slots.len()));
        }
    }

    #[test]
    fn identities_are_separated_and_disjoint() {
        let cfg = SynthConfig { train_ids: 16, val_ids: 4, test_ids: 8, ..Default::default() };
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let (splits, achieved) = choose_identities(&cfg, &mut rng);
        assert_eq!(achieved, 4);
        let mut all = Vec::new();
        for split in &splits {
            for (i, a) in split.iter().enumerate() {
                for b in &split[i + 1..] {
                    assert!(a.hamming(&b.colors) >= 4);
                }
            }
            all.extend(split.iter().map(|p| p.colors));
        }
        let n = all.len();
        all.sort();
        all.dedup();
        assert_eq!(all.len(), n);
    }
}

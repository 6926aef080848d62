use std::collections::{BTreeSet, HashSet};
use std::fs;
use std::path::Path;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{records_to_text, InteractionRecord, MAX_RATING, MIN_RATING};
use crate::error::{Error, Result};

/// Feature words assigned to items. Disjoint from every template word.
pub const FEATURE_POOL: [&str; 50] = [
    "gym", "pool", "breakfast", "staff", "location", "room", "bed", "view", "subway", "parking",
    "wifi", "bar", "service", "price", "lobby", "shower", "garden", "pizza", "pasta", "coffee",
    "dessert", "music", "menu", "beach", "spa", "elevator", "balcony", "kitchen", "bathroom",
    "restaurant", "decor", "sushi", "burger", "salad", "wine", "beer", "patio", "terrace",
    "airport", "station", "cocktails", "noodles", "steak", "seafood", "bakery", "cinema", "plot",
    "acting", "soundtrack", "ending",
];

// `{a}` and `{b}` are feature slots.
const POSITIVE: [&str; 6] = [
    "the {a} area had excellent facilities",
    "i loved the {a}",
    "great {a} and friendly people",
    "the {a} was really nice",
    "the {a} and {b} were great",
    "loved both the {a} and the {b}",
];
const NEUTRAL: [&str; 4] = [
    "the {a} was okay",
    "decent {a} for the money",
    "the {a} and {b} were fine",
    "nothing special about the {a} or the {b}",
];
const NEGATIVE: [&str; 5] = [
    "the {a} was disappointing",
    "the {a} could be much better",
    "do not expect much from the {a}",
    "terrible {a} and the {b} was worse",
    "the {a} and {b} need work",
];

/// Parameters of the synthetic corpus.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub n_users: usize,
    pub n_items: usize,
    pub n_records: usize,
    pub latent_rank: usize,
    pub noise_sd: f64,
    /// Relative spread of latent entries around their common mean; 0 makes
    /// every latent vector identical.
    pub latent_spread: f64,
    /// Probability that a user writes in their preferred template.
    pub style_consistency: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_users: 50,
            n_items: 50,
            n_records: 500,
            latent_rank: 4,
            noise_sd: 0.1,
            latent_spread: 0.3,
            style_consistency: 0.8,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_users == 0 || self.n_items == 0 || self.n_records == 0 || self.latent_rank == 0 {
            return Err(Error::Config("user, item, record counts and rank must be >= 1".into()));
        }
        if self.n_records > self.n_users * self.n_items {
            return Err(Error::Config(format!(
                "{} records exceed the {} distinct (user, item) pairs",
                self.n_records,
                self.n_users * self.n_items
            )));
        }
        if !(self.noise_sd >= 0.0 && self.noise_sd.is_finite()) {
            return Err(Error::Config("noise sd must be finite and >= 0".into()));
        }
        if !(0.0..1.0).contains(&self.latent_spread) {
            return Err(Error::Config("latent spread must lie in [0, 1)".into()));
        }
        if !(0.0..=1.0).contains(&self.style_consistency) {
            return Err(Error::Config("style consistency must lie in [0, 1]".into()));
        }
        Ok(())
    }
}

/// Draws a synthetic record list.
///
/// Ratings are `clamp(p_u · q_i + noise, 1, 5)` with rank-`latent_rank`
/// latent vectors whose entries are `sqrt(3/rank) · (1 + spread · U(-1, 1))`,
/// so the noiseless mean rating is near 3. Each item owns one or two feature
/// words; explanations instantiate a sentiment-matched template with them.
/// Every generated (user, item) pair is distinct, and the first
/// `max(n_users, n_items)` records cover every user and item.
pub fn synthesize(cfg: &SynthConfig) -> Result<Vec<InteractionRecord>> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let base = (3.0 / cfg.latent_rank as f64).sqrt();
    let latent = |n: usize, rng: &mut ChaCha8Rng| -> Vec<Vec<f64>> {
        (0..n)
            .map(|_| {
                (0..cfg.latent_rank)
                    .map(|_| base * (1.0 + cfg.latent_spread * rng.random_range(-1.0..=1.0)))
                    .collect()
            })
            .collect()
    };
    let user_latent = latent(cfg.n_users, &mut rng);
    let item_latent = latent(cfg.n_items, &mut rng);

    let item_features: Vec<Vec<&str>> = (0..cfg.n_items)
        .map(|_| {
            let k = if rng.random_bool(0.5) { 2 } else { 1 };
            FEATURE_POOL.choose_multiple(&mut rng, k).copied().collect()
        })
        .collect();
    let user_style: Vec<usize> = (0..cfg.n_users).map(|_| rng.random_range(0..1000)).collect();

    let pairs = draw_pairs(cfg, &mut rng);
    let noise = Normal::new(0.0, cfg.noise_sd).expect("validated sd");

    let mut records = Vec::with_capacity(pairs.len());
    for (u, i) in pairs {
        let score: f64 = user_latent[u].iter().zip(&item_latent[i]).map(|(a, b)| a * b).sum();
        let raw = score + noise.sample(&mut rng);
        // Fixed precision keeps the file byte-stable and exactly re-parseable.
        let rating: f64 = format!("{:.3}", raw.clamp(MIN_RATING, MAX_RATING)).parse().unwrap();

        let bank: &[&str] = if rating >= 3.5 {
            &POSITIVE
        } else if rating >= 2.5 {
            &NEUTRAL
        } else {
            &NEGATIVE
        };
        let feats = &item_features[i];
        let usable: Vec<&str> = bank
            .iter()
            .copied()
            .filter(|t| feats.len() >= 2 || !t.contains("{b}"))
            .collect();
        let template = if rng.random_bool(cfg.style_consistency) {
            usable[user_style[u] % usable.len()]
        } else {
            usable[rng.random_range(0..usable.len())]
        };
        let (a, b) = if feats.len() == 2 && !template.contains("{b}") {
            let first = feats[user_style[u] / 7 % 2];
            (first, first)
        } else {
            (feats[0], *feats.last().unwrap())
        };
        let text = template.replace("{a}", a).replace("{b}", b);
        let mut features = BTreeSet::new();
        features.insert(a.to_string());
        if template.contains("{b}") {
            features.insert(b.to_string());
        }
        records.push(InteractionRecord {
            user_id: format!("u{u}"),
            item_id: format!("i{i}"),
            rating,
            explanation: text.split(' ').map(str::to_string).collect(),
            features,
        });
    }
    Ok(records)
}

fn draw_pairs(cfg: &SynthConfig, rng: &mut ChaCha8Rng) -> Vec<(usize, usize)> {
    let mut users: Vec<usize> = (0..cfg.n_users).collect();
    let mut items: Vec<usize> = (0..cfg.n_items).collect();
    users.shuffle(rng);
    items.shuffle(rng);
    let cover = cfg.n_users.max(cfg.n_items).min(cfg.n_records);
    let mut pairs: Vec<(usize, usize)> = (0..cover)
        .map(|k| (users[k % cfg.n_users], items[k % cfg.n_items]))
        .collect();
    let mut seen: HashSet<(usize, usize)> = pairs.iter().copied().collect();
    let remaining = cfg.n_records - pairs.len();
    if remaining == 0 {
        return pairs;
    }
    if cfg.n_records * 2 > cfg.n_users * cfg.n_items {
        let mut pool: Vec<(usize, usize)> = (0..cfg.n_users)
            .flat_map(|u| (0..cfg.n_items).map(move |i| (u, i)))
            .filter(|p| !seen.contains(p))
            .collect();
        pool.shuffle(rng);
        pairs.extend_from_slice(&pool[..remaining]);
    } else {
        while pairs.len() < cfg.n_records {
            let p = (rng.random_range(0..cfg.n_users), rng.random_range(0..cfg.n_items));
            if seen.insert(p) {
                pairs.push(p);
            }
        }
    }
    pairs
}

/// Synthesizes a corpus and writes it in the corpus file format.
pub fn generate_synthetic_corpus(cfg: &SynthConfig, out: impl AsRef<Path>) -> Result<()> {
    let records = synthesize(cfg)?;
    let mut text = format!(
        "# synthetic corpus: users={} items={} records={} rank={} noise={} seed={}\n",
        cfg.n_users, cfg.n_items, cfg.n_records, cfg.latent_rank, cfg.noise_sd, cfg.seed
    );
    text.push_str(&records_to_text(&records));
    fs::write(out, text)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::load_corpus;

    #[test]
    fn degenerate_latents_give_identical_ratings() {
        let cfg = SynthConfig {
            latent_rank: 1,
            noise_sd: 0.0,
            latent_spread: 0.0,
            n_records: 200,
            ..SynthConfig::default()
        };
        let records = synthesize(&cfg).unwrap();
        assert!(records.iter().all(|r| r.rating == records[0].rating));
        assert!((records[0].rating - 3.0).abs() < 1e-9);
    }

    #[test]
    fn fixed_seed_is_byte_identical() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = SynthConfig {
            seed: 11,
            ..SynthConfig::default()
        };
        let (a, b) = (dir.path().join("a.tsv"), dir.path().join("b.tsv"));
        generate_synthetic_corpus(&cfg, &a).unwrap();
        generate_synthetic_corpus(&cfg, &b).unwrap();
        assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
        let other = SynthConfig { seed: 12, ..cfg };
        generate_synthetic_corpus(&other, &b).unwrap();
        assert_ne!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
    }

    #[test]
    fn output_loads_and_feature_set_matches_scan() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.tsv");
        let cfg = SynthConfig::default();
        generate_synthetic_corpus(&cfg, &path).unwrap();
        let corpus = load_corpus(&path).unwrap();
        assert_eq!(corpus.len(), 500);
        assert_eq!(corpus.users.len(), 50);
        assert_eq!(corpus.items.len(), 50);

        // Independent scan: any pool word appearing in any explanation.
        let mut used = BTreeSet::new();
        for r in &corpus.records {
            for w in &r.explanation {
                if FEATURE_POOL.contains(&w.as_str()) {
                    used.insert(w.clone());
                }
            }
        }
        assert_eq!(corpus.features.len(), used.len());
        assert!(corpus.features.iter().all(|f| used.contains(f)));
    }

    #[test]
    fn pairs_are_distinct() {
        let cfg = SynthConfig {
            n_users: 5,
            n_items: 4,
            n_records: 20,
            ..SynthConfig::default()
        };
        let records = synthesize(&cfg).unwrap();
        let pairs: HashSet<(String, String)> =
            records.iter().map(|r| (r.user_id.clone(), r.item_id.clone())).collect();
        assert_eq!(pairs.len(), 20);
    }

    #[test]
    fn rejects_bad_counts() {
        for cfg in [
            SynthConfig { n_records: 0, ..SynthConfig::default() },
            SynthConfig { n_users: 0, ..SynthConfig::default() },
            SynthConfig { n_users: 2, n_items: 2, n_records: 5, ..SynthConfig::default() },
        ] {
            assert!(matches!(synthesize(&cfg), Err(Error::Config(_))));
        }
    }

    #[test]
    fn templates_contain_no_feature_words() {
        for t in POSITIVE.iter().chain(&NEUTRAL).chain(&NEGATIVE) {
            for w in t.split(' ') {
                assert!(!FEATURE_POOL.contains(&w), "{w} in {t}");
            }
        }
    }
}

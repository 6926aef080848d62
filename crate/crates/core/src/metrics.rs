//! Explainability metrics (USR, FCR, DIV) and n-gram text metrics
//! (corpus BLEU, sentence-averaged ROUGE-N).

use std::collections::{BTreeSet, HashMap, HashSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::checkpoint::Checkpoint;
use crate::corpus::{Corpus, FeatureSet};
use crate::decoding::generate_corpus;
use crate::error::{Error, Result};

/// A generated explanation, its reference and the features it mentions.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneratedSample {
    pub generated: Vec<String>,
    pub reference: Vec<String>,
    pub features: BTreeSet<String>,
}

impl GeneratedSample {
    pub fn new(generated: Vec<String>, reference: Vec<String>, features: &FeatureSet) -> Self {
        let f = extract_features(&generated, features);
        Self {
            generated,
            reference,
            features: f,
        }
    }
}

/// Words of `words` that are dataset features (exact match).
pub fn extract_features<S: AsRef<str>>(words: &[S], features: &FeatureSet) -> BTreeSet<String> {
    words
        .iter()
        .map(AsRef::as_ref)
        .filter(|w| features.contains(w))
        .map(str::to_string)
        .collect()
}

/// Unique sentence ratio: distinct sentences (exact match) over total.
pub fn usr(generated: &[Vec<String>]) -> Result<f64> {
    if generated.is_empty() {
        return Err(Error::UndefinedInput("USR of an empty corpus"));
    }
    let unique: HashSet<&Vec<String>> = generated.iter().collect();
    Ok(unique.len() as f64 / generated.len() as f64)
}

/// Feature coverage ratio: distinct features generated over `|F|`.
pub fn fcr(samples: &[GeneratedSample], features: &FeatureSet) -> Result<f64> {
    if features.is_empty() {
        return Err(Error::UndefinedInput("FCR with an empty feature set"));
    }
    let covered: HashSet<&String> = samples.iter().flat_map(|s| s.features.iter()).collect();
    Ok(covered.len() as f64 / features.len() as f64)
}

/// Feature diversity: mean `|F̂_a ∩ F̂_b|` over unordered pairs, computed as
/// `Σ_f c_f(c_f-1)/2` over per-feature occurrence counts `c_f`.
pub fn div(samples: &[GeneratedSample]) -> Result<f64> {
    let n = samples.len();
    if n < 2 {
        return Err(Error::UndefinedInput("DIV needs at least two samples"));
    }
    let mut counts: HashMap<&str, u64> = HashMap::new();
    for s in samples {
        for f in &s.features {
            *counts.entry(f.as_str()).or_default() += 1;
        }
    }
    let shared: u64 = counts.values().map(|&c| c * (c - 1) / 2).sum();
    let pairs = (n * (n - 1) / 2) as f64;
    Ok(shared as f64 / pairs)
}

fn ngram_counts<S: AsRef<str>>(words: &[S], n: usize) -> HashMap<Vec<&str>, usize> {
    let mut counts = HashMap::new();
    if words.len() >= n {
        for w in words.windows(n) {
            *counts.entry(w.iter().map(AsRef::as_ref).collect()).or_default() += 1;
        }
    }
    counts
}

/// `(clipped overlap, generated n-gram count, reference n-gram count)`.
fn overlap<S: AsRef<str>>(generated: &[S], reference: &[S], n: usize) -> (usize, usize, usize) {
    let g = ngram_counts(generated, n);
    let r = ngram_counts(reference, n);
    let clipped = g.iter().map(|(k, &c)| c.min(r.get(k).copied().unwrap_or(0))).sum();
    (clipped, generated.len().saturating_sub(n - 1), reference.len().saturating_sub(n - 1))
}

/// Corpus BLEU-n without smoothing, as a percentage.
pub fn bleu<S: AsRef<str>>(pairs: &[(Vec<S>, Vec<S>)], n: usize) -> Result<f64> {
    if !(1..=4).contains(&n) {
        return Err(Error::Config(format!("BLEU order {n} outside 1..=4")));
    }
    if pairs.is_empty() {
        return Err(Error::UndefinedInput("BLEU of an empty corpus"));
    }
    let gen_len: usize = pairs.iter().map(|(g, _)| g.len()).sum();
    let ref_len: usize = pairs.iter().map(|(_, r)| r.len()).sum();
    if gen_len == 0 {
        return Ok(0.0);
    }
    let mut log_sum = 0.0;
    for k in 1..=n {
        let (mut hit, mut total) = (0, 0);
        for (g, r) in pairs {
            let (h, t, _) = overlap(g, r, k);
            hit += h;
            total += t;
        }
        if hit == 0 {
            return Ok(0.0);
        }
        log_sum += (hit as f64 / total as f64).ln();
    }
    let bp = (1.0 - ref_len as f64 / gen_len as f64).min(0.0).exp();
    Ok(100.0 * bp * (log_sum / n as f64).exp())
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct RougeScore {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// Sentence-averaged ROUGE-n precision/recall/F1, as percentages.
pub fn rouge_n<S: AsRef<str>>(pairs: &[(Vec<S>, Vec<S>)], n: usize) -> Result<RougeScore> {
    if n == 0 {
        return Err(Error::Config("ROUGE order must be >= 1".into()));
    }
    if pairs.is_empty() {
        return Err(Error::UndefinedInput("ROUGE of an empty corpus"));
    }
    let mut acc = RougeScore::default();
    for (g, r) in pairs {
        let (hit, gen_total, ref_total) = overlap(g, r, n);
        let p = if gen_total == 0 { 0.0 } else { hit as f64 / gen_total as f64 };
        let rc = if ref_total == 0 { 0.0 } else { hit as f64 / ref_total as f64 };
        let f = if p + rc == 0.0 { 0.0 } else { 2.0 * p * rc / (p + rc) };
        acc.precision += p;
        acc.recall += rc;
        acc.f1 += f;
    }
    let scale = 100.0 / pairs.len() as f64;
    Ok(RougeScore {
        precision: acc.precision * scale,
        recall: acc.recall * scale,
        f1: acc.f1 * scale,
    })
}

/// The nine reported metrics, serialized with the table's column names.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    #[serde(rename = "DIV")]
    pub div: f64,
    #[serde(rename = "USR")]
    pub usr: f64,
    #[serde(rename = "FCR")]
    pub fcr: f64,
    #[serde(rename = "BLEU-1")]
    pub bleu1: f64,
    #[serde(rename = "BLEU-4")]
    pub bleu4: f64,
    #[serde(rename = "R1-P")]
    pub rouge1_p: f64,
    #[serde(rename = "R1-R")]
    pub rouge1_r: f64,
    #[serde(rename = "R1-F1")]
    pub rouge1_f1: f64,
    #[serde(rename = "R2-P")]
    pub rouge2_p: f64,
    #[serde(rename = "R2-R")]
    pub rouge2_r: f64,
    #[serde(rename = "R2-F1")]
    pub rouge2_f1: f64,
    /// Number of evaluated samples.
    #[serde(rename = "N")]
    pub samples: usize,
}

impl EvaluationReport {
    pub const COLUMNS: [&'static str; 11] = [
        "DIV", "USR", "FCR", "BLEU-1", "BLEU-4", "R1-P", "R1-R", "R1-F1", "R2-P", "R2-R", "R2-F1",
    ];

    pub fn values(&self) -> [f64; 11] {
        [
            self.div,
            self.usr,
            self.fcr,
            self.bleu1,
            self.bleu4,
            self.rouge1_p,
            self.rouge1_r,
            self.rouge1_f1,
            self.rouge2_p,
            self.rouge2_r,
            self.rouge2_f1,
        ]
    }

    /// Names of metrics that violate their documented range.
    pub fn range_violations(&self) -> Vec<&'static str> {
        let mut bad = Vec::new();
        if !(self.usr > 0.0 && self.usr <= 1.0) {
            bad.push("USR");
        }
        if !(0.0..=1.0).contains(&self.fcr) {
            bad.push("FCR");
        }
        if !(self.div >= 0.0) {
            bad.push("DIV");
        }
        for (name, v) in Self::COLUMNS.iter().zip(self.values()).skip(3) {
            if !(0.0..=100.0 + 1e-9).contains(&v) {
                bad.push(name);
            }
        }
        bad
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Computes every metric from generated samples.
    pub fn from_samples(samples: &[GeneratedSample], features: &FeatureSet) -> Result<Self> {
        let generated: Vec<Vec<String>> = samples.iter().map(|s| s.generated.clone()).collect();
        let pairs: Vec<(Vec<String>, Vec<String>)> =
            samples.iter().map(|s| (s.generated.clone(), s.reference.clone())).collect();
        let r1 = rouge_n(&pairs, 1)?;
        let r2 = rouge_n(&pairs, 2)?;
        Ok(Self {
            div: div(samples)?,
            usr: usr(&generated)?,
            fcr: fcr(samples, features)?,
            bleu1: bleu(&pairs, 1)?,
            bleu4: bleu(&pairs, 4)?,
            rouge1_p: r1.precision,
            rouge1_r: r1.recall,
            rouge1_f1: r1.f1,
            rouge2_p: r2.precision,
            rouge2_r: r2.recall,
            rouge2_f1: r2.f1,
            samples: samples.len(),
        })
    }
}

impl fmt::Display for EvaluationReport {
    /// Aligned two-row table: DIV, USR, FCR to three decimals, the text
    /// metrics as percentages to two decimals.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let cells: Vec<String> = self
            .values()
            .iter()
            .enumerate()
            .map(|(i, v)| if i < 3 { format!("{v:.3}") } else { format!("{v:.2}") })
            .collect();
        let widths: Vec<usize> = Self::COLUMNS
            .iter()
            .zip(&cells)
            .map(|(h, c)| h.len().max(c.len()))
            .collect();
        let row = |items: Vec<&str>| -> String {
            items
                .iter()
                .zip(&widths)
                .map(|(s, w)| format!("{s:>w$}"))
                .collect::<Vec<_>>()
                .join("  ")
        };
        writeln!(f, "{}", row(Self::COLUMNS.to_vec()))?;
        writeln!(f, "{}", row(cells.iter().map(String::as_str).collect()))
    }
}

/// Generates explanations for `records` (indices into `corpus`) and scores
/// them against the ground truth.
pub fn evaluate(ckpt: &Checkpoint, records: &[usize], corpus: &Corpus) -> Result<(EvaluationReport, Vec<GeneratedSample>)> {
    if records.is_empty() {
        return Err(Error::UndefinedInput("empty evaluation split"));
    }
    let mut pairs = Vec::with_capacity(records.len());
    for &k in records {
        let r = corpus
            .records
            .get(k)
            .ok_or(Error::Range { what: "corpus", index: k as i64, size: corpus.len() })?;
        let u = ckpt.users.get(&r.user_id).ok_or_else(|| Error::NotFound {
            kind: "user",
            id: r.user_id.clone(),
        })?;
        let i = ckpt.items.get(&r.item_id).ok_or_else(|| Error::NotFound {
            kind: "item",
            id: r.item_id.clone(),
        })?;
        pairs.push((u, i));
    }
    let generated = generate_corpus(ckpt, &pairs, ckpt.config.max_gen_len)?;
    let samples: Vec<GeneratedSample> = generated
        .into_iter()
        .zip(records)
        .map(|(g, &k)| GeneratedSample::new(g, corpus.records[k].explanation.clone(), &corpus.features))
        .collect();
    let report = EvaluationReport::from_samples(&samples, &corpus.features)?;
    Ok((report, samples))
}

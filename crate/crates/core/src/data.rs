//! Synthetic channel-cue preference data and its line-delimited file format.
//!
//! Each response is described by `d = 2V` features: `V` signal channels
//! followed by `V` cue channels. For a pair, one informative channel `k*` is
//! drawn. Its signal is `+m` for one response and `-m` for the other, every
//! other signal channel is Gaussian noise, and the cue block of both responses
//! is `one_hot(k*)`. The true reward is `r*(ctx) = v[k*] · ctx[k*]`.
//!
//! File layout: a header line carrying the format version and the generator
//! metadata, then one JSON object per pair.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimators::PreferencePair;
use crate::model::{sigmoid, FeatureVector};
use crate::rng::SeedStream;

pub const FORMAT_NAME: &str = "dwrl-preference-pairs";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelMode {
    /// Labels drawn from the Bradley–Terry model on `r*`.
    BtSampled,
    /// The higher-`r*` response is always preferred.
    Deterministic,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Test,
}

impl Split {
    fn tag(self) -> u64 {
        match self {
            Split::Train => 0,
            Split::Test => 1,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticTask {
    pub vocab: usize,
    pub thought_len: usize,
    pub dim: usize,
    /// Signal strength `m` on the informative channel.
    pub margin: f64,
    pub noise_sigma: f64,
    pub label_mode: LabelMode,
    /// Per-channel scale `v` of the true reward; empty means all ones.
    pub true_reward: Vec<f64>,
}

impl Default for SyntheticTask {
    fn default() -> Self {
        Self {
            vocab: 8,
            thought_len: 4,
            dim: 16,
            margin: 1.0,
            noise_sigma: 1.0,
            label_mode: LabelMode::BtSampled,
            true_reward: Vec::new(),
        }
    }
}

impl SyntheticTask {
    pub fn validate(&self) -> Result<()> {
        if self.vocab == 0 || self.thought_len == 0 {
            return Err(Error::Config("vocab and thought_len must be positive".into()));
        }
        if self.dim != 2 * self.vocab {
            return Err(Error::Config(format!(
                "dim must equal 2 * vocab = {}, got {}",
                2 * self.vocab,
                self.dim
            )));
        }
        if !(self.margin >= 0.0 && self.margin.is_finite()) {
            return Err(Error::Config(format!("margin must be finite and non-negative, got {}", self.margin)));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return Err(Error::Config(format!("noise_sigma must be finite and non-negative, got {}", self.noise_sigma)));
        }
        if !self.true_reward.is_empty() && self.true_reward.len() != self.vocab {
            return Err(Error::Config(format!(
                "true_reward needs {} entries, got {}",
                self.vocab,
                self.true_reward.len()
            )));
        }
        Ok(())
    }

    pub fn reward_scale(&self, channel: usize) -> f64 {
        self.true_reward.get(channel).copied().unwrap_or(1.0)
    }

    /// `r*(ctx)` for a pair whose informative channel is `k_star`.
    pub fn true_reward_of(&self, ctx: &FeatureVector, k_star: usize) -> f64 {
        self.reward_scale(k_star) * ctx.values()[k_star]
    }

    /// Probability that the sampled label agrees with the higher-`r*` response.
    pub fn label_agreement_prob(&self, k_star: usize) -> f64 {
        match self.label_mode {
            LabelMode::Deterministic => 1.0,
            LabelMode::BtSampled => sigmoid(2.0 * self.margin * self.reward_scale(k_star)),
        }
    }
}

/// Everything needed to regenerate a dataset bit-identically.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetMeta {
    pub split: Split,
    pub seed: u64,
    pub count: usize,
    pub task: SyntheticTask,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub meta: DatasetMeta,
    pub pairs: Vec<PreferencePair>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn regenerate(&self) -> Result<Dataset> {
        generate_channel_cue(&self.meta.task, self.meta.count, self.meta.split, self.meta.seed)
    }
}

fn sample_context<R: Rng>(
    task: &SyntheticTask,
    k_star: usize,
    signal: f64,
    noise: &Normal<f64>,
    rng: &mut R,
) -> Result<FeatureVector> {
    let mut values = vec![0.0; task.dim];
    for (k, v) in values[..task.vocab].iter_mut().enumerate() {
        *v = if k == k_star { signal } else { noise.sample(rng) };
    }
    values[task.vocab + k_star] = 1.0;
    FeatureVector::new(values)
}

/// Generates `count` channel-cue pairs; pair `i` uses child stream `i` of
/// `(seed, split)`.
pub fn generate_channel_cue(task: &SyntheticTask, count: usize, split: Split, seed: u64) -> Result<Dataset> {
    task.validate()?;
    if count == 0 {
        return Err(Error::Config("dataset count must be at least 1".into()));
    }
    let noise = Normal::new(0.0, task.noise_sigma)
        .map_err(|e| Error::Config(format!("noise distribution: {e}")))?;
    let root = SeedStream::new(seed).child(split.tag());
    let pairs = (0..count)
        .map(|i| {
            let mut rng = root.child(i as u64).rng();
            let k_star = rng.gen_range(0..task.vocab);
            let high = sample_context(task, k_star, task.margin, &noise, &mut rng)?;
            let low = sample_context(task, k_star, -task.margin, &noise, &mut rng)?;
            let agree = match task.label_mode {
                LabelMode::Deterministic => true,
                LabelMode::BtSampled => rng.gen::<f64>() < task.label_agreement_prob(k_star),
            };
            let (ctx_plus, ctx_minus) = if agree { (high, low) } else { (low, high) };
            Ok(PreferencePair {
                pair_id: format!("{}-{:06}", split.name(), i),
                ctx_plus,
                ctx_minus,
                k_star: Some(k_star),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Dataset {
        meta: DatasetMeta {
            split,
            seed,
            count,
            task: task.clone(),
        },
        pairs,
    })
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    format: String,
    version: u32,
    meta: DatasetMeta,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Record {
    pair_id: String,
    ctx_plus: Vec<f64>,
    ctx_minus: Vec<f64>,
    k_star: Option<usize>,
    label_mode: LabelMode,
}

pub fn write_dataset(dataset: &Dataset, path: &Path) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    let header = Header {
        format: FORMAT_NAME.to_string(),
        version: FORMAT_VERSION,
        meta: dataset.meta.clone(),
    };
    writeln!(out, "{}", serde_json::to_string(&header).map_err(std::io::Error::other)?)?;
    for pair in &dataset.pairs {
        let record = Record {
            pair_id: pair.pair_id.clone(),
            ctx_plus: pair.ctx_plus.values().to_vec(),
            ctx_minus: pair.ctx_minus.values().to_vec(),
            k_star: pair.k_star,
            label_mode: dataset.meta.task.label_mode,
        };
        writeln!(out, "{}", serde_json::to_string(&record).map_err(std::io::Error::other)?)?;
    }
    out.flush()?;
    Ok(())
}

fn parse_err(line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        line,
        message: message.into(),
    }
}

pub fn read_dataset(path: &Path) -> Result<Dataset> {
    let reader = BufReader::new(File::open(path)?);
    let mut lines = reader.lines().enumerate();
    let header: Header = match lines.next() {
        Some((_, line)) => serde_json::from_str(&line?).map_err(|e| parse_err(1, format!("header: {e}")))?,
        None => return Err(parse_err(1, "empty file, expected a header line")),
    };
    if header.format != FORMAT_NAME {
        return Err(parse_err(1, format!("unknown format {:?}", header.format)));
    }
    if header.version != FORMAT_VERSION {
        return Err(parse_err(1, format!("unsupported version {}", header.version)));
    }
    let meta = header.meta;
    meta.task.validate().map_err(|e| parse_err(1, e.to_string()))?;
    let dim = meta.task.dim;

    let mut pairs = Vec::with_capacity(meta.count);
    let mut seen = std::collections::HashSet::new();
    for (idx, line) in lines {
        let line_no = idx + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record: Record = serde_json::from_str(&line).map_err(|e| parse_err(line_no, e.to_string()))?;
        for ctx in [&record.ctx_plus, &record.ctx_minus] {
            if ctx.len() != dim {
                return Err(parse_err(
                    line_no,
                    Error::DimensionMismatch {
                        expected: dim,
                        actual: ctx.len(),
                    }
                    .to_string(),
                ));
            }
        }
        if record.k_star.is_some_and(|k| k >= meta.task.vocab) {
            return Err(parse_err(line_no, "k_star outside the signal block"));
        }
        if record.label_mode != meta.task.label_mode {
            return Err(parse_err(line_no, "label_mode differs from header"));
        }
        if !seen.insert(record.pair_id.clone()) {
            return Err(parse_err(line_no, format!("duplicate pair_id {}", record.pair_id)));
        }
        let to_fv = |v: Vec<f64>| FeatureVector::new(v).map_err(|e| parse_err(line_no, e.to_string()));
        pairs.push(PreferencePair {
            pair_id: record.pair_id,
            ctx_plus: to_fv(record.ctx_plus)?,
            ctx_minus: to_fv(record.ctx_minus)?,
            k_star: record.k_star,
        });
    }
    if pairs.len() != meta.count {
        return Err(parse_err(
            pairs.len() + 1,
            format!("expected {} records, found {}", meta.count, pairs.len()),
        ));
    }
    Ok(Dataset { meta, pairs })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn task(mode: LabelMode, margin: f64, noise: f64) -> SyntheticTask {
        SyntheticTask {
            margin,
            noise_sigma: noise,
            label_mode: mode,
            ..SyntheticTask::default()
        }
    }

    #[test]
    fn deterministic_noise_free_pairs() {
        let t = task(LabelMode::Deterministic, 1.5, 0.0);
        let ds = generate_channel_cue(&t, 200, Split::Train, 1).unwrap();
        for p in &ds.pairs {
            let k = p.k_star.unwrap();
            assert_eq!(p.ctx_plus.values()[k], 1.5);
            assert_eq!(p.ctx_minus.values()[k], -1.5);
            for (i, &v) in p.ctx_plus.values()[..t.vocab].iter().enumerate() {
                if i != k {
                    assert_eq!(v, 0.0);
                }
            }
        }
    }

    #[test]
    fn cue_block_is_exact_one_hot() {
        let ds = generate_channel_cue(&SyntheticTask::default(), 300, Split::Test, 2).unwrap();
        let v = ds.meta.task.vocab;
        for p in &ds.pairs {
            let k = p.k_star.unwrap();
            for ctx in [&p.ctx_plus, &p.ctx_minus] {
                let cue = &ctx.values()[v..];
                assert_eq!(cue.iter().filter(|&&c| c == 1.0).count(), 1);
                assert_eq!(cue.iter().filter(|&&c| c == 0.0).count(), v - 1);
                assert_eq!(cue[k], 1.0);
            }
        }
    }

    fn flip_rate(ds: &Dataset) -> f64 {
        let flips = ds
            .pairs
            .iter()
            .filter(|p| {
                let k = p.k_star.unwrap();
                p.ctx_plus.values()[k] < p.ctx_minus.values()[k]
            })
            .count();
        flips as f64 / ds.len() as f64
    }

    #[test]
    fn zero_margin_flips_half() {
        let ds = generate_channel_cue(&task(LabelMode::BtSampled, 0.0, 1.0), 10_000, Split::Train, 3).unwrap();
        // With m = 0 the two signal values tie; count the coin directly.
        let t = &ds.meta.task;
        assert_eq!(t.label_agreement_prob(0), 0.5);
        let root = SeedStream::new(3).child(Split::Train.tag());
        let noise = Normal::new(0.0, 1.0).unwrap();
        let mut flipped = 0;
        for i in 0..10_000u64 {
            let mut rng = root.child(i).rng();
            let k = rng.gen_range(0..t.vocab);
            sample_context(t, k, 0.0, &noise, &mut rng).unwrap();
            sample_context(t, k, 0.0, &noise, &mut rng).unwrap();
            if rng.gen::<f64>() >= 0.5 {
                flipped += 1;
            }
        }
        let rate = flipped as f64 / 10_000.0;
        assert!((rate - 0.5).abs() < 0.01, "rate {rate}");
    }

    #[test]
    fn flip_rate_matches_bt_probability() {
        let ds = generate_channel_cue(&task(LabelMode::BtSampled, 2.0, 1.0), 100_000, Split::Train, 4).unwrap();
        let expect = sigmoid(-4.0);
        let se = (expect * (1.0 - expect) / ds.len() as f64).sqrt();
        let rate = flip_rate(&ds);
        assert!((rate - expect).abs() < 3.0 * se, "rate {rate} expect {expect}");
        assert!((expect - 0.018).abs() < 1e-3);
    }

    #[test]
    fn splits_are_disjoint() {
        let t = SyntheticTask::default();
        let train = generate_channel_cue(&t, 50, Split::Train, 5).unwrap();
        let test = generate_channel_cue(&t, 50, Split::Test, 5).unwrap();
        let ids: std::collections::HashSet<_> = train.pairs.iter().map(|p| &p.pair_id).collect();
        assert!(test.pairs.iter().all(|p| !ids.contains(&p.pair_id)));
        assert_ne!(train.pairs[0].ctx_plus, test.pairs[0].ctx_plus);
    }

    #[test]
    fn round_trip_and_regeneration() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.jsonl");
        let ds = generate_channel_cue(&SyntheticTask::default(), 40, Split::Train, 6).unwrap();
        write_dataset(&ds, &path).unwrap();
        let back = read_dataset(&path).unwrap();
        assert_eq!(back, ds);
        assert_eq!(back.regenerate().unwrap(), ds);
    }

    #[test]
    fn truncated_file_names_failing_line() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.jsonl");
        let ds = generate_channel_cue(&SyntheticTask::default(), 5, Split::Train, 7).unwrap();
        write_dataset(&ds, &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let cut = &text[..text.len() - 40];
        std::fs::write(&path, cut).unwrap();
        match read_dataset(&path) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 6),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn unknown_fields_and_bad_dims_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.jsonl");
        let ds = generate_channel_cue(&SyntheticTask::default(), 2, Split::Train, 8).unwrap();
        write_dataset(&ds, &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let mut lines: Vec<String> = text.lines().map(String::from).collect();
        lines[1] = lines[1].replacen('{', "{\"extra\":1,", 1);
        std::fs::write(&path, lines.join("\n")).unwrap();
        assert!(matches!(read_dataset(&path), Err(Error::Parse { line: 2, .. })));

        let mut lines: Vec<String> = text.lines().map(String::from).collect();
        lines[2] = lines[2].replacen("\"ctx_plus\":[", "\"ctx_plus\":[0.5,", 1);
        std::fs::write(&path, lines.join("\n")).unwrap();
        match read_dataset(&path) {
            Err(Error::Parse { line: 3, message }) => assert!(message.contains("dimension")),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn task_validation() {
        let mut t = SyntheticTask::default();
        t.dim = 10;
        assert!(t.validate().is_err());
        assert!(generate_channel_cue(&SyntheticTask::default(), 0, Split::Train, 0).is_err());
    }
}

//! Labeled example sets: parity, the perceptron toy set, MNIST-style images,
//! plus batch sampling and the line-oriented dataset cache.

mod idx;
mod image;

pub use idx::{load_idx_images, load_idx_labels, parse_idx_images, parse_idx_labels, write_idx_images, write_idx_labels, IdxImages};
pub use image::{discretize_pixel, preprocess_image, GrayImage, Preprocess, KERNELISED_SIDE};

use std::fmt::Write as _;
use std::path::Path;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seeds::derive_seed;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Label {
    #[serde(rename = "-1")]
    Negative,
    #[serde(rename = "+1")]
    Positive,
}

impl Label {
    pub fn from_bool(positive: bool) -> Label {
        if positive {
            Label::Positive
        } else {
            Label::Negative
        }
    }

    pub fn as_i64(self) -> i64 {
        match self {
            Label::Negative => -1,
            Label::Positive => 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Example {
    pub features: Vec<i64>,
    pub label: Label,
}

impl Example {
    pub fn new(features: Vec<i64>, label: Label) -> Self {
        Example { features, label }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub source: String,
    pub seed: Option<u64>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dataset {
    pub examples: Vec<Example>,
    pub meta: DatasetMeta,
}

impl Dataset {
    pub fn new(examples: Vec<Example>, meta: DatasetMeta) -> Result<Dataset> {
        if examples.is_empty() {
            return Err(Error::Config("dataset must not be empty".into()));
        }
        let dim = examples[0].features.len();
        if examples.iter().any(|e| e.features.len() != dim) {
            return Err(Error::Shape("examples differ in feature count".into()));
        }
        Ok(Dataset { examples, meta })
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.examples[0].features.len()
    }

    pub fn positives(&self) -> usize {
        self.examples
            .iter()
            .filter(|e| e.label == Label::Positive)
            .count()
    }

    /// Cache text: optional `# key=value` header lines, then one example per
    /// line as space-separated features, a tab, and the label (`1` / `-1`).
    pub fn to_cache_text(&self) -> String {
        let mut out = String::new();
        writeln!(out, "# source={}", self.meta.source).unwrap();
        if let Some(seed) = self.meta.seed {
            writeln!(out, "# seed={seed}").unwrap();
        }
        for ex in &self.examples {
            let feats: Vec<String> = ex.features.iter().map(i64::to_string).collect();
            writeln!(out, "{}\t{}", feats.join(" "), ex.label.as_i64()).unwrap();
        }
        out
    }

    pub fn from_cache_text(text: &str) -> Result<Dataset> {
        let mut meta = DatasetMeta::default();
        let mut examples = Vec::new();
        for (idx, line) in text.lines().enumerate() {
            let parse_err = |msg: String| Error::Parse { line: idx + 1, msg };
            if let Some(comment) = line.strip_prefix('#') {
                if let Some((k, v)) = comment.trim().split_once('=') {
                    match k.trim() {
                        "source" => meta.source = v.trim().to_string(),
                        "seed" => meta.seed = v.trim().parse().ok(),
                        _ => {}
                    }
                }
                continue;
            }
            if line.trim().is_empty() {
                continue;
            }
            let (feats, label) = line
                .split_once('\t')
                .ok_or_else(|| parse_err("missing tab before label".into()))?;
            let features = feats
                .split_whitespace()
                .map(|t| t.parse::<i64>().map_err(|_| parse_err(format!("bad feature `{t}`"))))
                .collect::<Result<Vec<_>>>()?;
            let label = match label.trim() {
                "1" | "+1" => Label::Positive,
                "-1" => Label::Negative,
                other => return Err(parse_err(format!("bad label `{other}`"))),
            };
            examples.push(Example { features, label });
        }
        Dataset::new(examples, meta)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_cache_text()).map_err(|e| Error::file(path, e))
    }

    pub fn load(path: &Path) -> Result<Dataset> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::file(path, e))?;
        Dataset::from_cache_text(&text)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ParityCount {
    /// All `2^dim` vectors in increasing binary order.
    Exhaustive,
    /// Distinct vectors drawn without replacement.
    Sampled(usize),
}

/// Positions used for the 8-bit parity task.
pub const PARITY8_POSITIONS: [usize; 4] = [0, 1, 3, 5];
/// Positions used for the 16-bit parity task.
pub const PARITY16_POSITIONS: [usize; 8] = [0, 1, 2, 3, 4, 6, 11, 14];

/// Label of a binary vector: `+1` iff the XOR of the selected positions is 1.
pub fn parity_label(features: &[i64], positions: &[usize]) -> Label {
    let ones = positions.iter().filter(|&&p| features[p] == 1).count();
    Label::from_bool(ones % 2 == 1)
}

/// Binary vectors of length `dim` (feature `j` = bit `j` of the vector read
/// left to right) labeled by parity over `positions`.
pub fn gen_parity(dim: usize, positions: &[usize], count: ParityCount, seed: u64) -> Result<Dataset> {
    if dim == 0 || dim > 30 {
        return Err(Error::Config(format!("parity dimension {dim} outside 1..=30")));
    }
    let mut sorted = positions.to_vec();
    sorted.sort_unstable();
    if sorted.windows(2).any(|w| w[0] == w[1]) {
        return Err(Error::Config("duplicate parity positions".into()));
    }
    if let Some(&p) = sorted.last().filter(|&&p| p >= dim) {
        return Err(Error::Config(format!("position {p} outside dimension {dim}")));
    }
    let total = 1usize << dim;
    let codes: Vec<usize> = match count {
        ParityCount::Exhaustive => (0..total).collect(),
        ParityCount::Sampled(n) => {
            if n == 0 || n > total {
                return Err(Error::Config(format!("cannot sample {n} of {total} vectors")));
            }
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            sample(&mut rng, total, n).into_vec()
        }
    };
    let examples = codes
        .into_iter()
        .map(|code| {
            let features: Vec<i64> = (0..dim).map(|j| ((code >> (dim - 1 - j)) & 1) as i64).collect();
            let label = parity_label(&features, positions);
            Example { features, label }
        })
        .collect();
    let source = format!(
        "parity dim={dim} positions={}",
        positions.iter().map(usize::to_string).collect::<Vec<_>>().join(",")
    );
    let seed = matches!(count, ParityCount::Sampled(_)).then_some(seed);
    Dataset::new(examples, DatasetMeta { source, seed })
}

/// The 16 binary 4-vectors labeled by `sign(2x0 + 3x1 - 4x2 - 2x3 + 1)`.
/// The score is zero for two points; those are labeled negative.
pub fn perceptron_toyset() -> Dataset {
    let examples = (0..16)
        .map(|code| {
            let x: Vec<i64> = (0..4).map(|j| (code >> (3 - j)) & 1).collect();
            let score = 2 * x[0] + 3 * x[1] - 4 * x[2] - 2 * x[3] + 1;
            Example {
                label: Label::from_bool(score > 0),
                features: x,
            }
        })
        .collect();
    Dataset::new(
        examples,
        DatasetMeta {
            source: "perceptron 2x0+3x1-4x2-2x3+1".into(),
            seed: None,
        },
    )
    .expect("non-empty")
}

/// Indices into the dataset for each batch. Within a batch indices are
/// distinct; batches are drawn independently and may overlap.
pub fn sample_batch_indices(ds_len: usize, num_batches: usize, batch_size: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    if batch_size == 0 || batch_size > ds_len {
        return Err(Error::Config(format!(
            "batch size {batch_size} not in 1..={ds_len}"
        )));
    }
    Ok((0..num_batches)
        .map(|b| {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, b as u64));
            sample(&mut rng, ds_len, batch_size).into_vec()
        })
        .collect())
}

pub fn sample_batches(ds: &Dataset, num_batches: usize, batch_size: usize, seed: u64) -> Result<Vec<Vec<Example>>> {
    Ok(sample_batch_indices(ds.len(), num_batches, batch_size, seed)?
        .into_iter()
        .map(|idx| idx.into_iter().map(|i| ds.examples[i].clone()).collect())
        .collect())
}

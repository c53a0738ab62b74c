//! Paired audio/caption feature sets: synthetic generation, on-disk
//! manifests and collision-free mini-batch planning.
//!
//! # On-disk layout
//!
//! A dataset directory holds a `manifest.json` and one feature file per
//! modality per split:
//!
//! ```json
//! {
//!   "name": "synthetic",
//!   "format_version": 1,
//!   "audio_dim": 32,
//!   "text_dim": 32,
//!   "splits": [
//!     {
//!       "split": "train",
//!       "audio_features": "train_audio.asef",
//!       "text_features": "train_text.asef",
//!       "pairs": [{ "text_id": 0, "audio_id": 0 }]
//!     }
//!   ]
//! }
//! ```
//!
//! Feature paths are relative to the manifest. `ASEF` binaries are
//!
//! ```text
//! "ASEF" | version u32 LE (1) | rows u64 LE | dim u64 LE | rows*dim f64 LE, row-major
//! ```
//!
//! and a row's id is its position. Files ending in `.tsv` are read as text
//! instead: one row per line, an integer id followed by `dim` values,
//! tab-separated; lines starting with `#` are ignored.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::embedding::{matmul, Matrix};
use crate::error::{Error, Result};
use crate::eval::RetrievalIndex;
use crate::io::{write_atomic, ByteReader};

pub const FEATURE_MAGIC: &[u8; 4] = b"ASEF";
pub const FEATURE_VERSION: u32 = 1;
pub const MANIFEST_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn as_str(&self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.pad(self.as_str())
    }
}

/// A caption row and the audio row it describes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Pair {
    pub text: usize,
    pub audio: usize,
}

/// One split of aligned audio and caption features. Pairs are stored in
/// caption order, exactly one per caption.
#[derive(Debug, Clone, PartialEq)]
pub struct PairedDataset {
    split: Split,
    audio_features: Matrix,
    text_features: Matrix,
    pairs: Vec<Pair>,
}

impl PairedDataset {
    /// `text_to_audio[t]` is the audio row paired with caption row `t`.
    pub fn new(
        split: Split,
        audio_features: Matrix,
        text_features: Matrix,
        text_to_audio: Vec<usize>,
    ) -> Result<Self> {
        if text_to_audio.len() != text_features.rows() {
            return Err(Error::shape(
                "PairedDataset::new",
                format!("{} pairings (one per caption)", text_features.rows()),
                text_to_audio.len(),
            ));
        }
        let mut pairs = Vec::with_capacity(text_to_audio.len());
        for (t, a) in text_to_audio.into_iter().enumerate() {
            if a >= audio_features.rows() {
                return Err(Error::DanglingPairReference {
                    split: split.to_string(),
                    text_id: t as u64,
                    audio_id: a as u64,
                    side: "audio",
                });
            }
            pairs.push(Pair { text: t, audio: a });
        }
        Ok(Self {
            split,
            audio_features,
            text_features,
            pairs,
        })
    }

    pub fn split(&self) -> Split {
        self.split
    }

    pub fn audio_features(&self) -> &Matrix {
        &self.audio_features
    }

    pub fn text_features(&self) -> &Matrix {
        &self.text_features
    }

    pub fn pairs(&self) -> &[Pair] {
        &self.pairs
    }

    pub fn audio_dim(&self) -> usize {
        self.audio_features.cols()
    }

    pub fn text_dim(&self) -> usize {
        self.text_features.cols()
    }

    pub fn n_pairs(&self) -> usize {
        self.pairs.len()
    }

    /// Audio rows that own at least one caption (ascending) and the
    /// retrieval index over them, with captions in row order.
    pub fn retrieval_view(&self) -> (Vec<usize>, RetrievalIndex) {
        let mut used = vec![false; self.audio_features.rows()];
        for p in &self.pairs {
            used[p.audio] = true;
        }
        let rows: Vec<usize> = (0..used.len()).filter(|&a| used[a]).collect();
        let mut compact = vec![usize::MAX; used.len()];
        for (pos, &a) in rows.iter().enumerate() {
            compact[a] = pos;
        }
        let map = self.pairs.iter().map(|p| compact[p.audio]).collect();
        let index = RetrievalIndex::new(rows.len(), map).expect("every kept audio owns a caption");
        (rows, index)
    }
}

/// All splits of one dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub name: String,
    pub audio_dim: usize,
    pub text_dim: usize,
    pub splits: BTreeMap<Split, PairedDataset>,
    /// Present when the dataset came from [`generate_synthetic`].
    pub generator: Option<SyntheticSpec>,
}

impl Dataset {
    pub fn split(&self, split: Split) -> Result<&PairedDataset> {
        self.splits
            .get(&split)
            .ok_or_else(|| Error::MissingSplit(split.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum MapKind {
    /// Fixed Gaussian linear maps, one per modality.
    #[default]
    Random,
    /// Identity maps; needs `d_audio == d_text == d_latent`.
    Identity,
}

/// Parameters of the synthetic paired-feature generator.
///
/// Each concept is a random unit vector in a latent space. Its audio
/// feature is a fixed linear map of the latent plus Gaussian noise; each of
/// its captions is another fixed linear map of the same latent plus
/// independent noise. Concepts are split disjointly into train/val/test.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticSpec {
    pub name: String,
    pub n_concepts: usize,
    pub captions_per_audio: usize,
    pub d_latent: usize,
    pub d_audio: usize,
    pub d_text: usize,
    pub noise_sigma: f64,
    pub maps: MapKind,
    pub val_fraction: f64,
    pub test_fraction: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            name: "synthetic".into(),
            n_concepts: 256,
            captions_per_audio: 5,
            d_latent: 16,
            d_audio: 32,
            d_text: 32,
            noise_sigma: 0.1,
            maps: MapKind::Random,
            val_fraction: 0.1,
            test_fraction: 0.1,
            seed: 0,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidSpec(m));
        if self.n_concepts < 3 {
            return bad(format!(
                "n_concepts must be >= 3 (one per split), got {}",
                self.n_concepts
            ));
        }
        for (name, v) in [
            ("captions_per_audio", self.captions_per_audio),
            ("d_latent", self.d_latent),
            ("d_audio", self.d_audio),
            ("d_text", self.d_text),
        ] {
            if v == 0 {
                return bad(format!("{name} must be >= 1"));
            }
        }
        if !(self.noise_sigma.is_finite() && self.noise_sigma >= 0.0) {
            return bad(format!(
                "noise_sigma must be >= 0, got {}",
                self.noise_sigma
            ));
        }
        if self.maps == MapKind::Identity
            && !(self.d_audio == self.d_latent && self.d_text == self.d_latent)
        {
            return bad("identity maps need d_audio == d_text == d_latent".into());
        }
        for (name, f) in [
            ("val_fraction", self.val_fraction),
            ("test_fraction", self.test_fraction),
        ] {
            if !(0.0..1.0).contains(&f) {
                return bad(format!("{name} must be in [0, 1), got {f}"));
            }
        }
        if self.val_fraction + self.test_fraction >= 1.0 {
            return bad("val_fraction + test_fraction must be < 1".into());
        }
        Ok(())
    }

    /// Concept counts for (train, val, test); every split gets at least one.
    pub fn split_sizes(&self) -> (usize, usize, usize) {
        let n = self.n_concepts;
        let val = ((n as f64 * self.val_fraction).round() as usize).clamp(1, n - 2);
        let test = ((n as f64 * self.test_fraction).round() as usize).clamp(1, n - 1 - val);
        (n - val - test, val, test)
    }
}

fn gaussian_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f64) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| {
        let z: f64 = StandardNormal.sample(rng);
        z * scale
    })
}

fn draw_maps(spec: &SyntheticSpec, rng: &mut ChaCha8Rng) -> (Matrix, Matrix) {
    match spec.maps {
        MapKind::Identity => (
            Matrix::identity(spec.d_latent),
            Matrix::identity(spec.d_latent),
        ),
        MapKind::Random => {
            // scaled so a unit latent maps to a roughly unit feature
            let s = 1.0 / (spec.d_latent as f64).sqrt();
            let a = gaussian_matrix(rng, spec.d_latent, spec.d_audio, s);
            let t = gaussian_matrix(rng, spec.d_latent, spec.d_text, s);
            (a, t)
        }
    }
}

/// The `(audio, text)` linear maps (`d_latent × d_audio`, `d_latent × d_text`)
/// that [`generate_synthetic`] uses for `spec`.
pub fn synthetic_maps(spec: &SyntheticSpec) -> Result<(Matrix, Matrix)> {
    spec.validate()?;
    Ok(draw_maps(spec, &mut ChaCha8Rng::seed_from_u64(spec.seed)))
}

/// Draws a synthetic dataset; fully determined by `spec`.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<Dataset> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let (audio_map, text_map) = draw_maps(spec, &mut rng);

    let n = spec.n_concepts;
    let mut latents = gaussian_matrix(&mut rng, n, spec.d_latent, 1.0);
    for i in 0..n {
        let norm = crate::embedding::norm(latents.row(i)).max(f64::MIN_POSITIVE);
        latents.row_mut(i).iter_mut().for_each(|v| *v /= norm);
    }
    let clean_audio = matmul(&latents, &audio_map)?;
    let clean_text = matmul(&latents, &text_map)?;

    // noise drawn concept by concept: audio first, then each caption
    let cpa = spec.captions_per_audio;
    let mut audio_rows = Vec::with_capacity(n);
    let mut text_rows = Vec::with_capacity(n * cpa);
    for c in 0..n {
        let noisy = |rng: &mut ChaCha8Rng, clean: &[f64]| -> Vec<f64> {
            clean
                .iter()
                .map(|&v| {
                    let z: f64 = StandardNormal.sample(rng);
                    v + spec.noise_sigma * z
                })
                .collect()
        };
        audio_rows.push(noisy(&mut rng, clean_audio.row(c)));
        for _ in 0..cpa {
            text_rows.push(noisy(&mut rng, clean_text.row(c)));
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    let (n_train, n_val, _) = spec.split_sizes();
    let mut assignment: BTreeMap<Split, Vec<usize>> = BTreeMap::new();
    for (pos, &c) in order.iter().enumerate() {
        let split = if pos < n_train {
            Split::Train
        } else if pos < n_train + n_val {
            Split::Val
        } else {
            Split::Test
        };
        assignment.entry(split).or_default().push(c);
    }

    let mut splits = BTreeMap::new();
    for (split, mut concepts) in assignment {
        concepts.sort_unstable();
        let audio: Vec<&[f64]> = concepts.iter().map(|&c| audio_rows[c].as_slice()).collect();
        let text: Vec<&[f64]> = concepts
            .iter()
            .flat_map(|&c| (0..cpa).map(move |k| c * cpa + k))
            .map(|t| text_rows[t].as_slice())
            .collect();
        let map = (0..concepts.len() * cpa).map(|t| t / cpa).collect();
        let ds = PairedDataset::new(
            split,
            Matrix::from_rows(&audio)?,
            Matrix::from_rows(&text)?,
            map,
        )?;
        splits.insert(split, ds);
    }
    Ok(Dataset {
        name: spec.name.clone(),
        audio_dim: spec.d_audio,
        text_dim: spec.d_text,
        splits,
        generator: Some(spec.clone()),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PairRecord {
    pub text_id: u64,
    pub audio_id: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitEntry {
    pub split: Split,
    pub audio_features: String,
    pub text_features: String,
    pub pairs: Vec<PairRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub name: String,
    pub format_version: u32,
    pub audio_dim: usize,
    pub text_dim: usize,
    pub splits: Vec<SplitEntry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub generator: Option<SyntheticSpec>,
}

pub fn encode_features(m: &Matrix) -> Vec<u8> {
    let mut out = Vec::with_capacity(24 + 8 * m.as_slice().len());
    out.extend_from_slice(FEATURE_MAGIC);
    out.extend_from_slice(&FEATURE_VERSION.to_le_bytes());
    out.extend_from_slice(&(m.rows() as u64).to_le_bytes());
    out.extend_from_slice(&(m.cols() as u64).to_le_bytes());
    for v in m.as_slice() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode_features(bytes: &[u8], path: &Path) -> Result<Matrix> {
    let bad = |reason: String| Error::Format {
        path: path.to_path_buf(),
        reason,
    };
    let mut r = ByteReader::new(bytes);
    if r.take(4) != Some(FEATURE_MAGIC.as_slice()) {
        return Err(bad("missing \"ASEF\" magic".into()));
    }
    let version = r.u32().ok_or_else(|| bad("truncated header".into()))?;
    if version != FEATURE_VERSION {
        return Err(bad(format!("unsupported feature file version {version}")));
    }
    let rows = r.u64().ok_or_else(|| bad("truncated header".into()))? as usize;
    let dim = r.u64().ok_or_else(|| bad("truncated header".into()))? as usize;
    let n = rows
        .checked_mul(dim)
        .filter(|n| n.checked_mul(8) == Some(r.remaining()))
        .ok_or_else(|| {
            bad(format!(
                "{} payload bytes do not hold {rows}x{dim} f64 values",
                r.remaining()
            ))
        })?;
    let data = (0..n).map(|_| r.f64().expect("length checked")).collect();
    Matrix::from_vec(rows, dim, data).map_err(|e| bad(e.to_string()))
}

/// Feature rows with their ids.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureTable {
    pub ids: Vec<u64>,
    pub features: Matrix,
}

pub fn parse_tsv(text: &str, path: &Path) -> Result<FeatureTable> {
    let bad = |line: usize, reason: String| Error::Format {
        path: path.to_path_buf(),
        reason: format!("line {line}: {reason}"),
    };
    let mut ids = Vec::new();
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (ln, line) in text.lines().enumerate() {
        let ln = ln + 1;
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let mut fields = line.split('\t');
        let id = fields
            .next()
            .unwrap_or_default()
            .trim()
            .parse::<u64>()
            .map_err(|e| bad(ln, format!("bad id: {e}")))?;
        let values = fields
            .map(|f| {
                f.trim()
                    .parse::<f64>()
                    .map_err(|e| bad(ln, format!("bad value `{f}`: {e}")))
            })
            .collect::<Result<Vec<_>>>()?;
        if let Some(first) = rows.first() {
            if first.len() != values.len() {
                return Err(bad(
                    ln,
                    format!("{} values, expected {}", values.len(), first.len()),
                ));
            }
        }
        ids.push(id);
        rows.push(values);
    }
    let features = Matrix::from_rows(&rows).map_err(|e| bad(0, e.to_string()))?;
    Ok(FeatureTable { ids, features })
}

pub fn format_tsv(table: &FeatureTable) -> String {
    let mut out = String::new();
    for (id, row) in table.ids.iter().zip(table.features.row_iter()) {
        out.push_str(&id.to_string());
        for v in row {
            out.push('\t');
            out.push_str(&v.to_string());
        }
        out.push('\n');
    }
    out
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::MissingFile(path.to_path_buf()),
        _ => Error::Io(e),
    })
}

/// Reads an `ASEF` binary or, for `.tsv` paths, a TSV table.
pub fn read_feature_file(path: &Path) -> Result<FeatureTable> {
    let bytes = read_file(path)?;
    if path
        .extension()
        .is_some_and(|e| e.eq_ignore_ascii_case("tsv"))
    {
        let text = String::from_utf8(bytes).map_err(|e| Error::Format {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })?;
        parse_tsv(&text, path)
    } else {
        let features = decode_features(&bytes, path)?;
        Ok(FeatureTable {
            ids: (0..features.rows() as u64).collect(),
            features,
        })
    }
}

fn row_lookup(table: &FeatureTable, path: &Path) -> Result<HashMap<u64, usize>> {
    let mut map = HashMap::with_capacity(table.ids.len());
    for (row, &id) in table.ids.iter().enumerate() {
        if map.insert(id, row).is_some() {
            return Err(Error::Format {
                path: path.to_path_buf(),
                reason: format!("duplicate row id {id}"),
            });
        }
    }
    Ok(map)
}

/// Loads and validates a dataset from its manifest.
pub fn load_dataset(manifest_path: &Path) -> Result<Dataset> {
    let bytes = read_file(manifest_path)?;
    let manifest: Manifest = serde_json::from_slice(&bytes).map_err(|e| Error::Format {
        path: manifest_path.to_path_buf(),
        reason: e.to_string(),
    })?;
    if manifest.format_version != MANIFEST_VERSION {
        return Err(Error::Format {
            path: manifest_path.to_path_buf(),
            reason: format!("unsupported manifest version {}", manifest.format_version),
        });
    }
    let base = manifest_path.parent().unwrap_or(Path::new("."));
    let mut splits = BTreeMap::new();
    for entry in &manifest.splits {
        let split_name = entry.split.to_string();
        if splits.contains_key(&entry.split) {
            return Err(Error::Format {
                path: manifest_path.to_path_buf(),
                reason: format!("split `{split_name}` listed twice"),
            });
        }
        let audio_path = base.join(&entry.audio_features);
        let text_path = base.join(&entry.text_features);
        let audio = read_feature_file(&audio_path)?;
        let text = read_feature_file(&text_path)?;
        for (side, table, dim, path) in [
            ("audio", &audio, manifest.audio_dim, &audio_path),
            ("text", &text, manifest.text_dim, &text_path),
        ] {
            if table.features.rows() > 0 && table.features.cols() != dim {
                return Err(Error::shape(
                    "load_dataset",
                    format!("{side} dim {dim} per manifest"),
                    format!("{} in {}", table.features.cols(), path.display()),
                ));
            }
        }
        let audio_rows = row_lookup(&audio, &audio_path)?;
        let text_rows = row_lookup(&text, &text_path)?;

        let mut text_to_audio = vec![None; text.ids.len()];
        for rec in &entry.pairs {
            let dangling = |side| Error::DanglingPairReference {
                split: split_name.clone(),
                text_id: rec.text_id,
                audio_id: rec.audio_id,
                side,
            };
            let t = *text_rows
                .get(&rec.text_id)
                .ok_or_else(|| dangling("text"))?;
            let a = *audio_rows
                .get(&rec.audio_id)
                .ok_or_else(|| dangling("audio"))?;
            if text_to_audio[t].replace(a).is_some() {
                return Err(Error::DuplicateTextPairing {
                    split: split_name.clone(),
                    text_id: rec.text_id,
                });
            }
        }
        let text_to_audio = text_to_audio
            .into_iter()
            .enumerate()
            .map(|(t, a)| {
                a.ok_or_else(|| Error::UnpairedText {
                    split: split_name.clone(),
                    text_id: text.ids[t],
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let audio_features = fit_width(audio.features, manifest.audio_dim);
        let text_features = fit_width(text.features, manifest.text_dim);
        let ds = PairedDataset::new(entry.split, audio_features, text_features, text_to_audio)?;
        splits.insert(entry.split, ds);
    }
    Ok(Dataset {
        name: manifest.name,
        audio_dim: manifest.audio_dim,
        text_dim: manifest.text_dim,
        splits,
        generator: manifest.generator,
    })
}

// an empty table has no width of its own
fn fit_width(m: Matrix, dim: usize) -> Matrix {
    if m.rows() == 0 {
        Matrix::zeros(0, dim)
    } else {
        m
    }
}

/// Writes `manifest.json` and `ASEF` feature files into `dir`; returns the
/// manifest path.
pub fn save_dataset(dataset: &Dataset, dir: &Path) -> Result<PathBuf> {
    fs::create_dir_all(dir)?;
    let mut entries = Vec::new();
    for (split, ds) in &dataset.splits {
        let audio_file = format!("{split}_audio.asef");
        let text_file = format!("{split}_text.asef");
        write_atomic(
            &dir.join(&audio_file),
            &encode_features(ds.audio_features()),
        )?;
        write_atomic(&dir.join(&text_file), &encode_features(ds.text_features()))?;
        entries.push(SplitEntry {
            split: *split,
            audio_features: audio_file,
            text_features: text_file,
            pairs: ds
                .pairs()
                .iter()
                .map(|p| PairRecord {
                    text_id: p.text as u64,
                    audio_id: p.audio as u64,
                })
                .collect(),
        });
    }
    let manifest = Manifest {
        name: dataset.name.clone(),
        format_version: MANIFEST_VERSION,
        audio_dim: dataset.audio_dim,
        text_dim: dataset.text_dim,
        splits: entries,
        generator: dataset.generator.clone(),
    };
    let path = dir.join(MANIFEST_FILE);
    let mut json = serde_json::to_string_pretty(&manifest)?;
    json.push('\n');
    write_atomic(&path, json.as_bytes())?;
    Ok(path)
}

/// Mini-batches of pair indices for one epoch. No batch holds two captions
/// of the same audio, so every off-diagonal cell of a batch similarity
/// matrix is a true negative.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BatchPlan {
    pub batch_size: usize,
    pub batches: Vec<Vec<usize>>,
    /// Pairs left out because they did not fill a whole batch.
    pub dropped: usize,
}

/// Shuffles the pairs with a `(seed, epoch)`-determined permutation and
/// partitions them into `⌊N/B⌋` collision-free batches of exactly `B`.
///
/// Pairs are grouped by audio (groups ordered by first appearance in the
/// shuffle) and dealt round-robin across the batches. A group never holds
/// more pairs than there are batches, so its members land in distinct
/// batches; the tail beyond `⌊N/B⌋·B` is dropped.
pub fn plan_batches(
    dataset: &PairedDataset,
    batch_size: usize,
    seed: u64,
    epoch: usize,
) -> Result<BatchPlan> {
    if batch_size == 0 {
        return Err(Error::InvalidHyperParameter(
            "batch size must be >= 1".into(),
        ));
    }
    let n = dataset.n_pairs();
    if n < batch_size {
        return Err(Error::InsufficientPairs {
            pairs: n,
            batch_size,
        });
    }
    let n_batches = n / batch_size;
    let mut owned = vec![0usize; dataset.audio_features().rows()];
    for p in dataset.pairs() {
        owned[p.audio] += 1;
    }
    if let Some((audio, &captions)) = owned.iter().enumerate().find(|(_, &c)| c > n_batches) {
        return Err(Error::InfeasibleConstraint {
            audio,
            captions,
            batches: n_batches,
        });
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(epoch as u64);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);

    let mut groups: Vec<Vec<usize>> = Vec::new();
    let mut group_of_audio = vec![usize::MAX; owned.len()];
    for &pi in &order {
        let a = dataset.pairs()[pi].audio;
        if group_of_audio[a] == usize::MAX {
            group_of_audio[a] = groups.len();
            groups.push(Vec::new());
        }
        groups[group_of_audio[a]].push(pi);
    }

    let mut batches = vec![Vec::with_capacity(batch_size); n_batches];
    for (k, pi) in groups
        .into_iter()
        .flatten()
        .take(n_batches * batch_size)
        .enumerate()
    {
        batches[k % n_batches].push(pi);
    }
    for b in &mut batches {
        b.shuffle(&mut rng);
    }
    batches.shuffle(&mut rng);
    Ok(BatchPlan {
        batch_size,
        batches,
        dropped: n - n_batches * batch_size,
    })
}

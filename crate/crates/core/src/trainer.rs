//! Training loop for the dual projection heads and multi-seed comparisons.
//!
//! Per batch: both heads forward, L2-normalize, cosine similarity, loss,
//! chain rule back through normalization and both heads, one Adam step over
//! all parameters. After every epoch the validation split is scored by its
//! sum of recalls and the best checkpoint so far is kept (earliest epoch on
//! ties).

use std::path::PathBuf;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::data::{plan_batches, Dataset, PairedDataset, Split, SyntheticSpec};
use crate::embedding::{l2_normalize_rows, matmul_nt, similarity_of_normalized, Matrix};
use crate::encoder::{DualEncoder, MlpGradients, DEFAULT_EMBED_DIM};
use crate::error::{Error, Result};
use crate::eval::{evaluate, RecallReport};
use crate::objectives::{
    backprop_to_embeddings, NtXentConfig, Objective, PolynomialWeights, TripletConfig,
    DEFAULT_MARGIN, DEFAULT_NEG_COEFFS, DEFAULT_POS_COEFFS, DEFAULT_TEMPERATURE,
};
use crate::optim::{AdamConfig, AdamState, LrSchedule};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ObjectiveKind {
    TripletSum,
    TripletMax,
    TripletWeighted,
    NtXent,
}

impl ObjectiveKind {
    pub const ALL: [ObjectiveKind; 4] = [
        ObjectiveKind::TripletSum,
        ObjectiveKind::TripletMax,
        ObjectiveKind::TripletWeighted,
        ObjectiveKind::NtXent,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            ObjectiveKind::TripletSum => "triplet-sum",
            ObjectiveKind::TripletMax => "triplet-max",
            ObjectiveKind::TripletWeighted => "triplet-weighted",
            ObjectiveKind::NtXent => "nt-xent",
        }
    }

    /// Display name used in result tables.
    pub fn label(&self) -> &'static str {
        match self {
            ObjectiveKind::TripletSum => "Triplet-sum",
            ObjectiveKind::TripletMax => "Triplet-max",
            ObjectiveKind::TripletWeighted => "Triplet-weighted",
            ObjectiveKind::NtXent => "NT-Xent",
        }
    }
}

/// Where the training data comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DatasetSource {
    /// Path to a `manifest.json`; relative paths resolve against the
    /// config file's directory.
    Manifest(PathBuf),
    /// Generated in memory.
    Synthetic(SyntheticSpec),
}

impl Default for DatasetSource {
    fn default() -> Self {
        DatasetSource::Synthetic(SyntheticSpec::default())
    }
}

/// Everything that defines a training run except the seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub dataset: DatasetSource,
    pub objective: ObjectiveKind,
    pub margin: f64,
    pub temperature: f64,
    pub poly_pos: Vec<f64>,
    pub poly_neg: Vec<f64>,
    pub batch_size: usize,
    pub epochs: usize,
    pub lr: f64,
    pub lr_decay_factor: f64,
    pub lr_decay_every: usize,
    pub embed_dim: usize,
    /// Defaults to `embed_dim`.
    pub hidden_dim: Option<usize>,
    pub seeds: Vec<u64>,
    pub adam: AdamConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            dataset: DatasetSource::default(),
            objective: ObjectiveKind::NtXent,
            margin: DEFAULT_MARGIN,
            temperature: DEFAULT_TEMPERATURE,
            poly_pos: DEFAULT_POS_COEFFS.to_vec(),
            poly_neg: DEFAULT_NEG_COEFFS.to_vec(),
            batch_size: 32,
            epochs: 50,
            lr: 1e-4,
            lr_decay_factor: 0.1,
            lr_decay_every: 20,
            embed_dim: DEFAULT_EMBED_DIM,
            hidden_dim: None,
            seeds: vec![0, 1, 2],
            adam: AdamConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn objective_fn(&self) -> Result<Objective> {
        self.objective_for(self.objective)
    }

    /// The given objective with this config's hyper-parameters.
    pub fn objective_for(&self, kind: ObjectiveKind) -> Result<Objective> {
        Ok(match kind {
            ObjectiveKind::TripletSum => Objective::TripletSum(TripletConfig::new(self.margin)?),
            ObjectiveKind::TripletMax => Objective::TripletMax(TripletConfig::new(self.margin)?),
            ObjectiveKind::TripletWeighted => Objective::TripletWeighted(PolynomialWeights::new(
                self.poly_pos.clone(),
                self.poly_neg.clone(),
            )?),
            ObjectiveKind::NtXent => Objective::NtXent(NtXentConfig::new(self.temperature)?),
        })
    }

    pub fn schedule(&self) -> LrSchedule {
        LrSchedule {
            base_lr: self.lr,
            decay_factor: self.lr_decay_factor,
            decay_every: self.lr_decay_every,
            total_epochs: self.epochs,
        }
    }

    pub fn hidden(&self) -> usize {
        self.hidden_dim.unwrap_or(self.embed_dim)
    }

    pub fn validate(&self) -> Result<()> {
        self.objective_fn()?;
        self.schedule().validate()?;
        if self.batch_size < 2 {
            return Err(Error::InvalidHyperParameter(format!(
                "batch_size must be >= 2, got {}",
                self.batch_size
            )));
        }
        if self.embed_dim == 0 || self.hidden() == 0 {
            return Err(Error::InvalidHyperParameter(
                "embed_dim and hidden_dim must be >= 1".into(),
            ));
        }
        if self.seeds.is_empty() {
            return Err(Error::Config("at least one seed is required".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub lr: f64,
    /// Mean batch loss over the epoch.
    pub train_loss: f64,
    pub val: RecallReport,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub seed: u64,
    /// Checkpoint with the highest validation sum of recalls; the
    /// initialization when no epoch ran.
    pub best: DualEncoder,
    pub best_epoch: Option<usize>,
    pub epochs: Vec<EpochMetrics>,
}

impl TrainOutcome {
    pub fn loss_curve(&self) -> Vec<f64> {
        self.epochs.iter().map(|e| e.train_loss).collect()
    }
}

/// Embeds a split with both heads and scores R@1/5/10 in both directions.
pub fn evaluate_model(model: &DualEncoder, split: &PairedDataset) -> Result<RecallReport> {
    if model.audio.dims().d_in != split.audio_dim() || model.text.dims().d_in != split.text_dim() {
        return Err(Error::DimMismatch(format!(
            "checkpoint expects audio/text dims {}/{}, split `{}` has {}/{}",
            model.audio.dims().d_in,
            model.text.dims().d_in,
            split.split(),
            split.audio_dim(),
            split.text_dim()
        )));
    }
    let (audio_rows, index) = split.retrieval_view();
    let audio = model
        .audio
        .embed(&split.audio_features().select_rows(&audio_rows))?;
    let text = model.text.embed(split.text_features())?;
    if !audio.is_finite() || !text.is_finite() {
        return Err(Error::NonFinite(0));
    }
    let audio = l2_normalize_rows(&audio)?.into_result()?;
    let text = l2_normalize_rows(&text)?.into_result()?;
    evaluate(&index, &matmul_nt(&audio, &text)?)
}

/// Loss of one paired batch and its gradients with respect to both heads'
/// parameters. `None` when the forward pass, loss or gradient is not finite.
pub fn batch_gradients(
    model: &DualEncoder,
    objective: &Objective,
    audio: &Matrix,
    text: &Matrix,
) -> Result<Option<(f64, MlpGradients, MlpGradients)>> {
    let (ya, cache_a) = model.audio.forward(audio)?;
    let (yt, cache_t) = model.text.forward(text)?;
    if !ya.is_finite() || !yt.is_finite() {
        return Ok(None);
    }
    let na = l2_normalize_rows(&ya)?.into_result()?;
    let nt = l2_normalize_rows(&yt)?.into_result()?;
    let s = similarity_of_normalized(&na, &nt)?;
    let loss = objective.evaluate(&s)?;
    if !loss.value.is_finite() || !loss.grad_s.is_finite() {
        return Ok(None);
    }
    let (ga, gt) = backprop_to_embeddings(&loss.grad_s, &na, &nt, &ya, &yt)?;
    let (grad_audio, _) = model.audio.backward(&cache_a, &ga)?;
    let (grad_text, _) = model.text.backward(&cache_t, &gt)?;
    Ok(Some((loss.value, grad_audio, grad_text)))
}

/// Forward, loss, backward and one optimizer step on a single batch.
/// Returns the batch loss.
fn train_batch(
    model: &mut DualEncoder,
    adam: &mut AdamState,
    objective: &Objective,
    data: &PairedDataset,
    batch: &[usize],
    lr: f64,
) -> Result<Option<f64>> {
    let audio_idx: Vec<usize> = batch.iter().map(|&p| data.pairs()[p].audio).collect();
    let text_idx: Vec<usize> = batch.iter().map(|&p| data.pairs()[p].text).collect();
    let audio = data.audio_features().select_rows(&audio_idx);
    let text = data.text_features().select_rows(&text_idx);
    let Some((loss, grad_audio, grad_text)) = batch_gradients(model, objective, &audio, &text)?
    else {
        return Ok(None);
    };
    let grads: Vec<&[f64]> = grad_audio
        .tensors()
        .into_iter()
        .chain(grad_text.tensors())
        .collect();
    adam.step(&mut model.tensors_mut(), &grads, lr)?;
    if !model.audio.is_finite() || !model.text.is_finite() {
        return Ok(None);
    }
    Ok(Some(loss))
}

/// Trains one seed and keeps the best validation checkpoint.
pub fn train_one(config: &TrainConfig, dataset: &Dataset, seed: u64) -> Result<TrainOutcome> {
    config.validate()?;
    let objective = config.objective_fn()?;
    let schedule = config.schedule();
    let train = dataset.split(Split::Train)?;
    let val = dataset.split(Split::Val)?;

    let mut model = DualEncoder::init(
        dataset.audio_dim,
        dataset.text_dim,
        config.hidden(),
        config.embed_dim,
        seed,
    )?;
    let shapes: Vec<usize> = model.tensors().iter().map(|t| t.len()).collect();
    let mut adam = AdamState::new(&shapes, config.adam);

    let mut best = model.clone();
    let mut best_epoch = None;
    let mut best_score = f64::NEG_INFINITY;
    let mut epochs = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        let lr = schedule.lr_at_epoch(epoch)?;
        let plan = plan_batches(train, config.batch_size, seed, epoch)?;
        let mut total = 0.0;
        for (bi, batch) in plan.batches.iter().enumerate() {
            match train_batch(&mut model, &mut adam, &objective, train, batch, lr)? {
                Some(v) => total += v,
                None => return Err(Error::NonFiniteLoss { epoch, batch: bi }),
            }
        }
        let train_loss = total / plan.batches.len() as f64;
        let report = evaluate_model(&model, val)?;
        let score = report.sum_of_recalls();
        log::debug!(
            "{} seed {seed} epoch {epoch}: lr {lr:e} loss {train_loss:.6} val sum {score:.4}",
            objective.name()
        );
        if score > best_score {
            best_score = score;
            best_epoch = Some(epoch);
            best = model.clone();
        }
        epochs.push(EpochMetrics {
            epoch,
            lr,
            train_loss,
            val: report,
        });
    }
    Ok(TrainOutcome {
        seed,
        best,
        best_epoch,
        epochs,
    })
}

/// Mean and population standard deviation (divisor `n`).
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Outcome of one `(objective, batch size, seed)` run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedRun {
    pub seed: u64,
    /// Test-split metrics of the best checkpoint; `None` when the run failed.
    pub test: Option<RecallReport>,
    pub best_epoch: Option<usize>,
    pub epochs: Vec<EpochMetrics>,
    pub error: Option<String>,
}

impl SeedRun {
    pub fn converged(&self) -> bool {
        self.test.is_some()
    }
}

/// Mean and standard deviation of every metric over the converged seeds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub n: usize,
    pub mean: RecallReport,
    pub std: RecallReport,
}

impl Aggregate {
    pub fn over(reports: &[RecallReport]) -> Option<Self> {
        if reports.is_empty() {
            return None;
        }
        let mut mean = [0.0; 6];
        let mut std = [0.0; 6];
        for k in 0..6 {
            let column: Vec<f64> = reports.iter().map(|r| r.values()[k]).collect();
            (mean[k], std[k]) = mean_std(&column);
        }
        Some(Self {
            n: reports.len(),
            mean: RecallReport::from_values(mean),
            std: RecallReport::from_values(std),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub objective: ObjectiveKind,
    pub batch_size: usize,
    pub runs: Vec<SeedRun>,
    /// `None` when no seed converged.
    pub aggregate: Option<Aggregate>,
}

impl RunReport {
    pub fn from_runs(objective: ObjectiveKind, batch_size: usize, runs: Vec<SeedRun>) -> Self {
        let tests: Vec<RecallReport> = runs.iter().filter_map(|r| r.test).collect();
        Self {
            objective,
            batch_size,
            aggregate: Aggregate::over(&tests),
            runs,
        }
    }
}

/// Trains, selects on validation and scores on test; failures are kept in
/// the returned run instead of aborting.
pub fn run_seed(config: &TrainConfig, dataset: &Dataset, seed: u64) -> SeedRun {
    let result = train_one(config, dataset, seed).and_then(|outcome| {
        let test = evaluate_model(&outcome.best, dataset.split(Split::Test)?)?;
        Ok((outcome, test))
    });
    match result {
        Ok((outcome, test)) => SeedRun {
            seed,
            test: Some(test),
            best_epoch: outcome.best_epoch,
            epochs: outcome.epochs,
            error: None,
        },
        Err(e) => {
            log::warn!("{} seed {seed} failed: {e}", config.objective.as_str());
            SeedRun {
                seed,
                test: None,
                best_epoch: None,
                epochs: Vec::new(),
                error: Some(e.to_string()),
            }
        }
    }
}

/// Grid of runs to compare.
#[derive(Debug, Clone, PartialEq)]
pub struct Comparison {
    pub base: TrainConfig,
    pub objectives: Vec<ObjectiveKind>,
    pub batch_sizes: Vec<usize>,
}

impl Comparison {
    /// Every `(batch size, objective)` cell with the base seeds.
    fn cells(&self) -> Vec<(usize, ObjectiveKind)> {
        self.batch_sizes
            .iter()
            .flat_map(|&b| self.objectives.iter().map(move |&o| (b, o)))
            .collect()
    }
}

/// Runs every `(batch size, objective, seed)` combination on up to `jobs`
/// threads. The result order follows the grid, not completion order.
pub fn run_comparison(cmp: &Comparison, dataset: &Dataset, jobs: usize) -> Result<Vec<RunReport>> {
    if cmp.objectives.is_empty() || cmp.batch_sizes.is_empty() || cmp.base.seeds.is_empty() {
        return Err(Error::Config(
            "comparison needs >= 1 objective, batch size and seed".into(),
        ));
    }
    let cells = cmp.cells();
    let mut tasks = Vec::new();
    for (ci, &(batch_size, objective)) in cells.iter().enumerate() {
        let config = TrainConfig {
            objective,
            batch_size,
            ..cmp.base.clone()
        };
        config.validate()?;
        for &seed in &cmp.base.seeds {
            tasks.push((ci, config.clone(), seed));
        }
    }

    let slots: Vec<Mutex<Option<SeedRun>>> = tasks.iter().map(|_| Mutex::new(None)).collect();
    let next = AtomicUsize::new(0);
    let workers = jobs.clamp(1, tasks.len());
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some((_, config, seed)) = tasks.get(i) else {
                    break;
                };
                let run = run_seed(config, dataset, *seed);
                *slots[i].lock().expect("slot lock") = Some(run);
            });
        }
    });

    let mut per_cell: Vec<Vec<SeedRun>> = vec![Vec::new(); cells.len()];
    for ((ci, _, _), slot) in tasks.iter().zip(slots) {
        per_cell[*ci].push(
            slot.into_inner()
                .expect("slot lock")
                .expect("every task ran"),
        );
    }
    Ok(cells
        .into_iter()
        .zip(per_cell)
        .map(|((b, o), runs)| RunReport::from_runs(o, b, runs))
        .collect())
}

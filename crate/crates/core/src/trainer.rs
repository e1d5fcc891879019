//! Training and evaluation of one probing head on one feature view.

use std::fmt;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::heads::{init_head, Head, HeadKind, HeadSpec};
use crate::nn::{argmax, backward, AdamConfig, Differentiable, Matrix, OptimizerState};

pub use crate::heads::FeatureView;

/// Trials per reported number.
pub const TRIALS: usize = 5;
pub const DEFAULT_SEEDS: [u64; TRIALS] = [0, 1, 2, 3, 4];

/// Layer logit used to pin an aggregation model to a single layer.
pub const ONE_HOT_LOGIT: f32 = 1e4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum TargetLayer {
    Single(usize),
    All,
}

impl fmt::Display for TargetLayer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TargetLayer::Single(l) => write!(f, "{l}"),
            TargetLayer::All => f.write_str("all"),
        }
    }
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum TargetRepr {
    Index(usize),
    Name(String),
}

impl Serialize for TargetLayer {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            TargetLayer::Single(l) => TargetRepr::Index(*l),
            TargetLayer::All => TargetRepr::Name("all".into()),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for TargetLayer {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        match TargetRepr::deserialize(d)? {
            TargetRepr::Index(l) => Ok(TargetLayer::Single(l)),
            TargetRepr::Name(s) if s == "all" => Ok(TargetLayer::All),
            TargetRepr::Name(s) => Err(serde::de::Error::custom(format!(
                "target_layer must be an index or \"all\", got \"{s}\""
            ))),
        }
    }
}

/// How an aggregation head treats its layer logits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LayerWeighting {
    #[default]
    Learned,
    /// Logit of layer k fixed at [`ONE_HOT_LOGIT`], all others 0, never updated.
    FrozenOneHot(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub head_kind: HeadKind,
    pub target_layer: TargetLayer,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub seed: u64,
    /// Per-dimension standardization with train-split statistics.
    pub standardize: bool,
    #[serde(default)]
    pub layer_weighting: LayerWeighting,
}

impl TrainConfig {
    pub fn new(head_kind: HeadKind, target_layer: TargetLayer) -> Self {
        Self {
            head_kind,
            target_layer,
            learning_rate: 1e-3,
            batch_size: 32,
            max_epochs: 100,
            patience: 10,
            seed: 0,
            standardize: true,
            layer_weighting: LayerWeighting::Learned,
        }
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        Self {
            seed,
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let aggregate = self.head_kind == HeadKind::Aggregate;
        if aggregate != (self.target_layer == TargetLayer::All) {
            return Err(Error::Config(
                "target_layer \"all\" goes with the aggregate head and only with it".into(),
            ));
        }
        if !aggregate && self.layer_weighting != LayerWeighting::Learned {
            return Err(Error::Config(
                "layer weighting applies only to the aggregate head".into(),
            ));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::Config("learning_rate must be positive".into()));
        }
        if self.batch_size == 0 || self.max_epochs == 0 || self.patience == 0 {
            return Err(Error::Config(
                "batch_size, max_epochs and patience must be positive".into(),
            ));
        }
        Ok(())
    }

    fn adam(&self) -> AdamConfig {
        AdamConfig {
            learning_rate: self.learning_rate,
            ..AdamConfig::default()
        }
    }
}

/// Labeled utterances of one split, all sharing a feature view shape.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledViews {
    pub num_classes: usize,
    pub items: Vec<(FeatureView, usize)>,
}

impl LabeledViews {
    pub fn new(num_classes: usize, items: Vec<(FeatureView, usize)>) -> Self {
        Self { num_classes, items }
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn labels(&self) -> impl Iterator<Item = usize> + '_ {
        self.items.iter().map(|(_, l)| *l)
    }

    /// Returns (feature dim, layer count) shared by every item.
    fn shape(&self, name: &'static str) -> Result<(usize, usize)> {
        let (first, _) = self.items.first().ok_or(Error::EmptySplit(name))?;
        let shape = (first.feature_dim(), first.layer_count());
        for (view, label) in &self.items {
            if *label >= self.num_classes {
                return Err(Error::LabelOutOfRange {
                    label: *label,
                    classes: self.num_classes,
                });
            }
            if (view.feature_dim(), view.layer_count()) != shape {
                return Err(Error::Shape(format!(
                    "{name} split mixes feature shapes ({}x{} vs {}x{})",
                    shape.1,
                    shape.0,
                    view.layer_count(),
                    view.feature_dim()
                )));
            }
            if let FeatureView::Stack(layers) = view {
                if layers.iter().any(|m| m.rows() != layers[0].rows()) {
                    return Err(Error::Shape(
                        "layers of one utterance differ in length".into(),
                    ));
                }
            }
        }
        Ok(shape)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SplitData {
    pub train: LabeledViews,
    pub dev: LabeledViews,
    pub test: LabeledViews,
}

/// Per-dimension affine map `(x − mean) / std`, one set of statistics per
/// layer of the view.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<Vec<f64>>,
    pub std: Vec<Vec<f64>>,
}

impl Standardizer {
    /// Statistics over every frame of every utterance in `set`. Dimensions
    /// with zero variance are left unscaled.
    pub fn fit(set: &LabeledViews) -> Result<Self> {
        let (d, layers) = set.shape("train")?;
        let mut sum = vec![vec![0.0f64; d]; layers];
        let mut sq = vec![vec![0.0f64; d]; layers];
        let mut frames = 0usize;
        for (view, _) in &set.items {
            for (l, m) in view_layers(view).enumerate() {
                for row in m.iter_rows() {
                    for (j, &v) in row.iter().enumerate() {
                        sum[l][j] += v as f64;
                        sq[l][j] += v as f64 * v as f64;
                    }
                }
                if l == 0 {
                    frames += m.rows();
                }
            }
        }
        if frames == 0 {
            return Err(Error::EmptySequence);
        }
        let n = frames as f64;
        let mut mean = sum;
        let mut std = sq;
        for (m, s) in mean.iter_mut().zip(std.iter_mut()) {
            for (mj, sj) in m.iter_mut().zip(s.iter_mut()) {
                *mj /= n;
                let var = (*sj / n - *mj * *mj).max(0.0);
                *sj = if var > 1e-24 { var.sqrt() } else { 1.0 };
            }
        }
        Ok(Self { mean, std })
    }

    pub fn apply_matrix(&self, layer: usize, m: &Matrix) -> Matrix {
        let (mean, std) = (&self.mean[layer], &self.std[layer]);
        let data = m
            .iter_rows()
            .flat_map(|row| {
                row.iter()
                    .zip(mean.iter().zip(std))
                    .map(|(&v, (mu, sd))| ((v as f64 - mu) / sd) as f32)
            })
            .collect();
        Matrix::new(m.rows(), m.cols(), data).expect("shape preserved")
    }

    pub fn apply(&self, view: &FeatureView) -> Result<FeatureView> {
        if view.layer_count() != self.mean.len() || view.feature_dim() != self.mean[0].len() {
            return Err(Error::Shape(
                "view does not match standardizer statistics".into(),
            ));
        }
        Ok(match view {
            FeatureView::Frames(m) => FeatureView::Frames(self.apply_matrix(0, m)),
            FeatureView::Stack(layers) => FeatureView::Stack(
                layers
                    .iter()
                    .enumerate()
                    .map(|(l, m)| self.apply_matrix(l, m))
                    .collect(),
            ),
        })
    }

    pub fn apply_set(&self, set: &LabeledViews) -> Result<LabeledViews> {
        let items = set
            .items
            .iter()
            .map(|(v, l)| Ok((self.apply(v)?, *l)))
            .collect::<Result<_>>()?;
        Ok(LabeledViews::new(set.num_classes, items))
    }
}

fn view_layers(view: &FeatureView) -> Box<dyn Iterator<Item = &Matrix> + '_> {
    match view {
        FeatureView::Frames(m) => Box::new(std::iter::once(m)),
        FeatureView::Stack(s) => Box::new(s.iter()),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub accuracy: f64,
    /// `confusion[true][predicted]`.
    pub confusion: Vec<Vec<usize>>,
}

impl Evaluation {
    fn from_predictions(num_classes: usize, pairs: impl Iterator<Item = (usize, usize)>) -> Self {
        let mut confusion = vec![vec![0usize; num_classes]; num_classes];
        let (mut correct, mut total) = (0usize, 0usize);
        for (truth, pred) in pairs {
            confusion[truth][pred] += 1;
            correct += usize::from(truth == pred);
            total += 1;
        }
        Self {
            accuracy: correct as f64 / total as f64,
            confusion,
        }
    }

    pub fn support(&self) -> Vec<usize> {
        self.confusion.iter().map(|row| row.iter().sum()).collect()
    }
}

/// Accuracy and confusion counts; argmax ties go to the lowest class index.
pub fn evaluate(head: &Head, split: &LabeledViews) -> Result<Evaluation> {
    if split.is_empty() {
        return Err(Error::EmptySplit("evaluation"));
    }
    let c = head.num_classes().max(split.num_classes);
    let preds = split
        .items
        .iter()
        .map(|(view, label)| Ok((*label, argmax(&head.logits(view)?))))
        .collect::<Result<Vec<_>>>()?;
    Ok(Evaluation::from_predictions(c, preds.into_iter()))
}

fn accuracy_of<M: Differentiable + ?Sized>(model: &M, items: &[(&M::Input, usize)]) -> Result<f64> {
    let mut correct = 0usize;
    for (x, label) in items {
        correct += usize::from(argmax(&model.logits(x)?) == *label);
    }
    Ok(correct as f64 / items.len() as f64)
}

/// Outcome of one training run, before test evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainedProbe {
    /// Parameters from the best dev epoch.
    pub head: Head,
    pub standardizer: Option<Standardizer>,
    pub dev_accuracy: f64,
    pub epochs_run: usize,
    pub best_epoch: usize,
    /// Mean train loss per epoch, measured during the epoch.
    pub train_loss: Vec<f64>,
}

impl TrainedProbe {
    pub fn evaluate(&self, split: &LabeledViews) -> Result<Evaluation> {
        match &self.standardizer {
            Some(s) => evaluate(&self.head, &s.apply_set(split)?),
            None => evaluate(&self.head, split),
        }
    }
}

struct Fit<M> {
    model: M,
    dev_accuracy: f64,
    epochs_run: usize,
    best_epoch: usize,
    train_loss: Vec<f64>,
}

fn fit<M>(
    mut model: M,
    train: &[(&M::Input, usize)],
    dev: &[(&M::Input, usize)],
    cfg: &TrainConfig,
    frozen: &[usize],
) -> Result<Fit<M>>
where
    M: Differentiable + Clone,
{
    let mut opt = OptimizerState::new(cfg.adam(), &model.tensors());
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(1);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut batch = Vec::with_capacity(cfg.batch_size);

    let mut best = Fit {
        model: model.clone(),
        dev_accuracy: f64::NEG_INFINITY,
        epochs_run: 0,
        best_epoch: 0,
        train_loss: Vec::new(),
    };
    for epoch in 1..=cfg.max_epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            batch.clear();
            batch.extend(chunk.iter().map(|&i| train[i]));
            let (loss, mut grads) = backward(&model, &batch)?;
            for &t in frozen {
                grads.zero_tensor(t);
            }
            opt.step(model.tensors_mut(), &grads)?;
            loss_sum += loss * chunk.len() as f64;
        }
        best.train_loss.push(loss_sum / train.len() as f64);
        best.epochs_run = epoch;

        let acc = accuracy_of(&model, dev)?;
        if acc > best.dev_accuracy {
            best.dev_accuracy = acc;
            best.best_epoch = epoch;
            best.model = model.clone();
        } else if epoch - best.best_epoch >= cfg.patience {
            break;
        }
    }
    Ok(best)
}

fn frames_of(set: &LabeledViews) -> Result<Vec<(&Matrix, usize)>> {
    set.items
        .iter()
        .map(|(v, l)| {
            v.frames().map(|m| (m, *l)).ok_or_else(|| {
                Error::Config("single-layer head needs single-layer features".into())
            })
        })
        .collect()
}

fn stacks_of(set: &LabeledViews) -> Result<Vec<(&[Matrix], usize)>> {
    set.items
        .iter()
        .map(|(v, l)| {
            v.stack()
                .map(|s| (s, *l))
                .ok_or_else(|| Error::Config("aggregate head needs the full layer stack".into()))
        })
        .collect()
}

/// Trains on already-standardized (or deliberately raw) views.
fn train_prepared(
    cfg: &TrainConfig,
    train: &LabeledViews,
    dev: &LabeledViews,
) -> Result<TrainedProbe> {
    cfg.validate()?;
    let (d, layers) = train.shape("train")?;
    if dev.shape("dev")? != (d, layers) {
        return Err(Error::Shape("train and dev feature shapes differ".into()));
    }
    if train.num_classes != dev.num_classes {
        return Err(Error::Shape(
            "train and dev disagree on the class count".into(),
        ));
    }
    let spec = HeadSpec {
        kind: cfg.head_kind,
        input_dim: d,
        num_classes: train.num_classes,
        layer_count: Some(layers),
    };
    let (head, dev_accuracy, epochs_run, best_epoch, train_loss) = match init_head(&spec, cfg.seed)?
    {
        Head::Linear(h) => {
            let f = fit(h, &frames_of(train)?, &frames_of(dev)?, cfg, &[])?;
            (
                Head::Linear(f.model),
                f.dev_accuracy,
                f.epochs_run,
                f.best_epoch,
                f.train_loss,
            )
        }
        Head::Dense(h) => {
            let f = fit(h, &frames_of(train)?, &frames_of(dev)?, cfg, &[])?;
            (
                Head::Dense(f.model),
                f.dev_accuracy,
                f.epochs_run,
                f.best_epoch,
                f.train_loss,
            )
        }
        Head::Aggregate(mut h) => {
            let frozen: &[usize] = match cfg.layer_weighting {
                LayerWeighting::Learned => &[],
                LayerWeighting::FrozenOneHot(k) => {
                    if k >= layers {
                        return Err(Error::Config(format!(
                            "one-hot layer {k} out of range for {layers} layers"
                        )));
                    }
                    h.layer_logits.fill(0.0);
                    h.layer_logits[k] = ONE_HOT_LOGIT;
                    &[0]
                }
            };
            let f = fit(h, &stacks_of(train)?, &stacks_of(dev)?, cfg, frozen)?;
            (
                Head::Aggregate(f.model),
                f.dev_accuracy,
                f.epochs_run,
                f.best_epoch,
                f.train_loss,
            )
        }
    };
    Ok(TrainedProbe {
        head,
        standardizer: None,
        dev_accuracy,
        epochs_run,
        best_epoch,
        train_loss,
    })
}

/// Mini-batch Adam with early stopping on dev accuracy. Initialization and
/// batch order depend only on `cfg.seed`.
pub fn train_probe(
    cfg: &TrainConfig,
    train: &LabeledViews,
    dev: &LabeledViews,
) -> Result<TrainedProbe> {
    if cfg.standardize {
        let s = Standardizer::fit(train)?;
        let mut probe = train_prepared(cfg, &s.apply_set(train)?, &s.apply_set(dev)?)?;
        probe.standardizer = Some(s);
        Ok(probe)
    } else {
        train_prepared(cfg, train, dev)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialResult {
    pub config: TrainConfig,
    pub dev_accuracy: f64,
    pub test_accuracy: f64,
    pub epochs_run: usize,
    pub best_epoch: usize,
    pub train_loss: Vec<f64>,
    pub test_confusion: Vec<Vec<usize>>,
    /// Softmax layer weights of a trained aggregate head.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub layer_weights: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    /// Sorted by seed.
    pub trials: Vec<TrialResult>,
    pub mean_dev: f64,
    pub std_dev: f64,
    pub mean_test: f64,
    pub std_test: f64,
}

fn mean_std(values: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let n = values.clone().count() as f64;
    let mean = values.clone().sum::<f64>() / n;
    let var = values.map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

impl RunSummary {
    /// Population statistics over exactly [`TRIALS`] trials with distinct seeds.
    pub fn from_trials(mut trials: Vec<TrialResult>) -> Result<Self> {
        trials.sort_by_key(|t| t.config.seed);
        if trials.len() != TRIALS
            || trials
                .windows(2)
                .any(|w| w[0].config.seed == w[1].config.seed)
        {
            return Err(Error::Config(format!(
                "exactly {TRIALS} distinct seeds required"
            )));
        }
        let (mean_dev, std_dev) = mean_std(trials.iter().map(|t| t.dev_accuracy));
        let (mean_test, std_test) = mean_std(trials.iter().map(|t| t.test_accuracy));
        Ok(Self {
            trials,
            mean_dev,
            std_dev,
            mean_test,
            std_test,
        })
    }
}

fn trial_on_prepared(cfg: &TrainConfig, data: &SplitData) -> Result<TrialResult> {
    let probe = train_prepared(cfg, &data.train, &data.dev)?;
    let test = evaluate(&probe.head, &data.test)?;
    Ok(TrialResult {
        config: cfg.clone(),
        dev_accuracy: probe.dev_accuracy,
        test_accuracy: test.accuracy,
        epochs_run: probe.epochs_run,
        best_epoch: probe.best_epoch,
        train_loss: probe.train_loss,
        test_confusion: test.confusion,
        layer_weights: probe.head.layer_weights(),
    })
}

fn prepare(cfg: &TrainConfig, data: &SplitData) -> Result<SplitData> {
    if !cfg.standardize {
        return Ok(data.clone());
    }
    let s = Standardizer::fit(&data.train)?;
    Ok(SplitData {
        train: s.apply_set(&data.train)?,
        dev: s.apply_set(&data.dev)?,
        test: s.apply_set(&data.test)?,
    })
}

/// One train/dev/test trial with `cfg.seed`.
pub fn run_trial(cfg: &TrainConfig, data: &SplitData) -> Result<TrialResult> {
    if data.test.is_empty() {
        return Err(Error::EmptySplit("test"));
    }
    trial_on_prepared(cfg, &prepare(cfg, data)?)
}

/// Independent trials for each seed, run in parallel on the current rayon
/// pool; the summary does not depend on seed order.
pub fn run_trials(template: &TrainConfig, data: &SplitData, seeds: &[u64]) -> Result<RunSummary> {
    let mut sorted = seeds.to_vec();
    sorted.sort_unstable();
    sorted.dedup();
    if seeds.len() != TRIALS || sorted.len() != TRIALS {
        return Err(Error::Config(format!(
            "exactly {TRIALS} distinct seeds required"
        )));
    }
    template.validate()?;
    if data.test.is_empty() {
        return Err(Error::EmptySplit("test"));
    }
    let prepared = prepare(template, data)?;
    let trials = sorted
        .par_iter()
        .map(|&seed| trial_on_prepared(&template.with_seed(seed), &prepared))
        .collect::<Result<Vec<_>>>()?;
    RunSummary::from_trials(trials)
}

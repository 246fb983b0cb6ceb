//! Horizon errors, r-based metrics, critic and classifier scores,
//! ablation harness, reports and sequence export.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::ad::{Adam, AdamConfig, Array, Graph, NodeId, ParameterStore, RandomSource};
use crate::config::{parse, unknown, KeyValue};
use crate::data::{sequence_to_csv, sequence_to_jsonl, stack_time, unstack_item, LabelMap, WindowSampler};
use crate::error::{Error, Result};
use crate::gan::{BiBody, GanModel, PoseMap};
use crate::motion::{wrap_angle, MotionSequence, MS_PER_FRAME};
use crate::scalar::Scalar;
use crate::training::{train, TrainConfig};

pub const HORIZONS_MS: [u32; 5] = [80, 160, 320, 400, 1000];
pub const BANK_SIZE: usize = 1000;
pub const UNLABELED: &str = "unlabeled";
pub const METRICS: [&str; 5] = ["euler_r_prime", "min_err", "critic", "classifier", "ablation"];

/// 1-based frame index of a horizon in milliseconds.
pub fn horizon_frame(ms: u32) -> usize {
    (ms / MS_PER_FRAME) as usize
}

pub fn horizon_frames() -> [usize; 5] {
    HORIZONS_MS.map(horizon_frame)
}

/// Error at each of [`HORIZONS_MS`].
pub type HorizonErrors = [f64; 5];

/// Euclidean norm of the wrapped per-channel angle difference.
pub fn frame_error<S: Scalar>(pred: &[S], gt: &[S]) -> Result<f64> {
    if pred.len() != gt.len() {
        return Err(Error::Invalid(format!("frame widths {} and {} differ", pred.len(), gt.len())));
    }
    Ok(pred
        .iter()
        .zip(gt)
        .map(|(&a, &b)| {
            let d = wrap_angle(a - b).as_f64();
            d * d
        })
        .sum::<f64>()
        .sqrt())
}

/// Per-horizon error of one predicted continuation.
pub fn euler_error<S: Scalar>(pred: &MotionSequence<S>, gt: &MotionSequence<S>) -> Result<HorizonErrors> {
    let need = horizon_frame(HORIZONS_MS[4]);
    if pred.len() != gt.len() || pred.len() < need {
        return Err(Error::Invalid(format!(
            "euler_error needs equal lengths >= {need}, got {} and {}",
            pred.len(),
            gt.len()
        )));
    }
    let mut out = [0.0; 5];
    for (o, f) in out.iter_mut().zip(horizon_frames()) {
        *o = frame_error(pred.frame(f - 1), gt.frame(f - 1))?;
    }
    Ok(out)
}

/// Averages per-sample errors within each category, then across
/// categories.
#[derive(Clone, Debug, PartialEq)]
pub struct HorizonReport {
    pub per_category: BTreeMap<String, HorizonErrors>,
    pub mean: HorizonErrors,
}

impl HorizonReport {
    pub fn from_samples(samples: &[(String, HorizonErrors)]) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::Invalid("no samples to aggregate".into()));
        }
        let mut groups: BTreeMap<String, (HorizonErrors, usize)> = BTreeMap::new();
        for (cat, e) in samples {
            let entry = groups.entry(cat.clone()).or_insert(([0.0; 5], 0));
            for (a, v) in entry.0.iter_mut().zip(e) {
                *a += v;
            }
            entry.1 += 1;
        }
        let per_category: BTreeMap<String, HorizonErrors> = groups
            .into_iter()
            .map(|(k, (s, n))| (k, s.map(|v| v / n as f64)))
            .collect();
        let mut mean = [0.0; 5];
        for e in per_category.values() {
            for (m, v) in mean.iter_mut().zip(e) {
                *m += v;
            }
        }
        let n = per_category.len() as f64;
        Ok(Self {
            per_category,
            mean: mean.map(|v| v / n),
        })
    }

    /// Mean error at 1000 ms.
    pub fn long_term(&self) -> f64 {
        self.mean[4]
    }
}

fn category<S>(s: &MotionSequence<S>) -> String {
    s.label.clone().unwrap_or_else(|| UNLABELED.to_string())
}

/// Test windows split into time-major past/future batches.
struct TestBatch<S> {
    past: Vec<Array<S>>,
    future: Vec<Array<S>>,
    categories: Vec<String>,
}

impl<S: Scalar> TestBatch<S> {
    fn new(model: &GanModel<S>, tests: &[MotionSequence<S>]) -> Result<Self> {
        if tests.is_empty() {
            return Err(Error::Invalid("empty test set".into()));
        }
        let (t, p) = (model.spec.past_len, model.spec.pred_len);
        if let Some(s) = tests.iter().find(|s| s.len() != t + p) {
            return Err(Error::Invalid(format!(
                "test sequence has {} frames, expected T + pred_len = {}",
                s.len(),
                t + p
            )));
        }
        let mut steps = stack_time(&tests.iter().collect::<Vec<_>>())?;
        let future = steps.split_off(t);
        Ok(Self {
            past: steps,
            future,
            categories: tests.iter().map(category).collect(),
        })
    }

    fn len(&self) -> usize {
        self.categories.len()
    }

    fn broadcast(&self, r: &[f64]) -> Result<Array<S>> {
        let row: Vec<S> = r.iter().map(|&v| S::of(v)).collect();
        Array::new(vec![self.len(), r.len()], row.repeat(self.len()))
    }

    /// Per-sample errors when item `b` is predicted with row `b` of `r`.
    fn errors(&self, model: &GanModel<S>, r: &Array<S>) -> Result<Vec<HorizonErrors>> {
        let pred = model.predict_steps(&self.past, r, model.spec.pred_len)?;
        (0..self.len())
            .map(|b| euler_error(&unstack_item(&pred, b, None)?, &unstack_item(&self.future, b, None)?))
            .collect()
    }

    fn report(&self, errors: &[HorizonErrors]) -> Result<HorizonReport> {
        let samples: Vec<(String, HorizonErrors)> = self.categories.iter().cloned().zip(errors.iter().copied()).collect();
        HorizonReport::from_samples(&samples)
    }
}

/// Per-sample errors of the prediction driven by `r' = DISC_r(past || future)`.
pub fn r_prime_errors<S: Scalar>(model: &GanModel<S>, tests: &[MotionSequence<S>]) -> Result<Vec<HorizonErrors>> {
    let batch = TestBatch::new(model, tests)?;
    let r = model.infer_r(&batch.past, &batch.future)?;
    batch.errors(model, &r)
}

pub fn r_prime_metric<S: Scalar>(model: &GanModel<S>, tests: &[MotionSequence<S>]) -> Result<HorizonReport> {
    let batch = TestBatch::new(model, tests)?;
    let r = model.infer_r(&batch.past, &batch.future)?;
    batch.report(&batch.errors(model, &r)?)
}

/// Error with one fixed `r` shared by every test item.
pub fn fixed_r_metric<S: Scalar>(model: &GanModel<S>, tests: &[MotionSequence<S>], r: &[f64]) -> Result<HorizonReport> {
    let batch = TestBatch::new(model, tests)?;
    batch.report(&batch.errors(model, &batch.broadcast(r)?)?)
}

/// Mean over `draws` reports, each with an independent prior `r` per item.
pub fn random_r_metric<S: Scalar>(
    model: &GanModel<S>,
    tests: &[MotionSequence<S>],
    draws: usize,
    rng: &mut RandomSource,
) -> Result<HorizonReport> {
    if draws == 0 {
        return Err(Error::Invalid("need at least one draw".into()));
    }
    let batch = TestBatch::new(model, tests)?;
    let mut reports = Vec::with_capacity(draws);
    for _ in 0..draws {
        let r = rng.sample_normal(vec![batch.len(), model.spec.r_dim])?;
        reports.push(batch.report(&batch.errors(model, &r)?)?);
    }
    let mut mean = reports[0].clone();
    for (cat, e) in mean.per_category.iter_mut() {
        *e = [0.0; 5];
        for r in &reports {
            for (a, v) in e.iter_mut().zip(&r.per_category[cat]) {
                *a += v / draws as f64;
            }
        }
    }
    mean.mean = [0.0; 5];
    for r in &reports {
        for (a, v) in mean.mean.iter_mut().zip(&r.mean) {
            *a += v / draws as f64;
        }
    }
    Ok(mean)
}

/// Fixed bank of extrinsic factors drawn from the prior.
#[derive(Clone, Debug, PartialEq)]
pub struct RBank {
    pub vectors: Vec<Vec<f64>>,
    pub seed: u64,
}

impl RBank {
    pub fn sample(size: usize, r_dim: usize, seed: u64) -> Result<Self> {
        if size == 0 {
            return Err(Error::Invalid("r bank must be nonempty".into()));
        }
        let mut rng = RandomSource::new(seed).fork("eval.bank");
        let vectors = (0..size).map(|_| (0..r_dim).map(|_| rng.normal()).collect()).collect();
        Ok(Self { vectors, seed })
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }
}

pub fn elementwise_min(acc: &mut HorizonErrors, e: &HorizonErrors) {
    for (x, y) in acc.iter_mut().zip(e) {
        *x = x.min(*y);
    }
}

/// Elementwise minimum over the bank (and optionally each item's own
/// `r'`) of the per-sample horizon errors.
pub fn min_err_metric<S: Scalar>(
    model: &GanModel<S>,
    bank: &RBank,
    tests: &[MotionSequence<S>],
    append_r_prime: bool,
) -> Result<HorizonReport> {
    if bank.is_empty() {
        return Err(Error::Invalid("empty r bank".into()));
    }
    let batch = TestBatch::new(model, tests)?;
    let mut best: Vec<HorizonErrors> = if append_r_prime {
        let r = model.infer_r(&batch.past, &batch.future)?;
        batch.errors(model, &r)?
    } else {
        vec![[f64::INFINITY; 5]; batch.len()]
    };
    for v in &bank.vectors {
        if v.len() != model.spec.r_dim {
            return Err(Error::Invalid(format!("bank vector has {} values, expected {}", v.len(), model.spec.r_dim)));
        }
        let errs = batch.errors(model, &batch.broadcast(v)?)?;
        for (b, e) in best.iter_mut().zip(errs) {
            elementwise_min(b, &e);
        }
    }
    batch.report(&best)
}

/// Accuracy at a 0.5 threshold; ties count as real.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CriticReport {
    pub overall: f64,
    pub real: f64,
    pub generated: f64,
}

pub fn critic_accuracy_from_scores(real: &[f64], generated: &[f64]) -> Result<CriticReport> {
    if real.is_empty() || generated.is_empty() {
        return Err(Error::Invalid("critic accuracy needs nonempty real and generated sets".into()));
    }
    let hit_r = real.iter().filter(|&&p| p >= 0.5).count();
    let hit_g = generated.iter().filter(|&&p| p < 0.5).count();
    Ok(CriticReport {
        overall: (hit_r + hit_g) as f64 / (real.len() + generated.len()) as f64,
        real: hit_r as f64 / real.len() as f64,
        generated: hit_g as f64 / generated.len() as f64,
    })
}

pub fn critic_accuracy<S: Scalar>(
    model: &GanModel<S>,
    real: &[MotionSequence<S>],
    generated: &[MotionSequence<S>],
) -> Result<CriticReport> {
    let score = |xs: &[MotionSequence<S>]| xs.iter().map(|s| model.critic_forward(s)).collect::<Result<Vec<_>>>();
    critic_accuracy_from_scores(&score(real)?, &score(generated)?)
}

/// `past || prediction` for every test item, one prior `r` each.
pub fn generate_continuations<S: Scalar>(
    model: &GanModel<S>,
    tests: &[MotionSequence<S>],
    rng: &mut RandomSource,
) -> Result<Vec<MotionSequence<S>>> {
    let batch = TestBatch::new(model, tests)?;
    let r = rng.sample_normal(vec![batch.len(), model.spec.r_dim])?;
    let pred = model.predict_steps(&batch.past, &r, model.spec.pred_len)?;
    tests
        .iter()
        .enumerate()
        .map(|(b, s)| {
            let past = unstack_item(&batch.past, b, s.label.clone())?;
            past.concat(&unstack_item(&pred, b, None)?)
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct ClassifierConfig {
    pub hidden: usize,
    pub head_hidden: usize,
    pub iterations: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        Self {
            hidden: 16,
            head_hidden: 16,
            iterations: 150,
            batch_size: 16,
            lr: 1e-2,
            seed: 0,
        }
    }
}

impl KeyValue for ClassifierConfig {
    fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "hidden" => self.hidden = parse(key, value)?,
            "head_hidden" => self.head_hidden = parse(key, value)?,
            "iterations" => self.iterations = parse(key, value)?,
            "batch_size" => self.batch_size = parse(key, value)?,
            "lr" => self.lr = parse(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            _ => return Err(unknown(key)),
        }
        Ok(())
    }

    fn entries(&self) -> Vec<(&'static str, String)> {
        vec![
            ("hidden", self.hidden.to_string()),
            ("head_hidden", self.head_hidden.to_string()),
            ("iterations", self.iterations.to_string()),
            ("batch_size", self.batch_size.to_string()),
            ("lr", self.lr.to_string()),
            ("seed", self.seed.to_string()),
        ]
    }
}

/// Bidirectional recurrent classifier over raw frames with a softmax head.
#[derive(Clone, Debug, PartialEq)]
pub struct ActionClassifier<S> {
    pub body: BiBody,
    pub store: ParameterStore<S>,
    pub labels: LabelMap,
}

impl<S: Scalar> ActionClassifier<S> {
    pub fn new(labels: LabelMap, input_dim: usize, past_len: usize, tau: usize, config: &ClassifierConfig, rng: &mut RandomSource) -> Result<Self> {
        if labels.len() < 2 {
            return Err(Error::Invalid(format!("classifier needs >= 2 categories, got {}", labels.len())));
        }
        let body = BiBody {
            prefix: "cls".into(),
            input_dim,
            hidden: config.hidden,
            head_hidden: config.head_hidden,
            out_dim: labels.len(),
            past_len,
            tau,
        };
        let mut store = ParameterStore::new();
        body.init(&mut store, rng)?;
        Ok(Self { body, store, labels })
    }

    pub fn log_probs_node(&self, g: &mut Graph<S>, steps: &[NodeId]) -> Result<NodeId> {
        let logits = self.body.forward(g, &self.store, steps)?;
        g.log_softmax(logits)
    }

    /// `[batch, categories]` class probabilities.
    pub fn probabilities(&self, seqs: &[&MotionSequence<S>]) -> Result<Array<S>> {
        let steps = stack_time(seqs)?;
        let mut g = Graph::new();
        let ids: Vec<NodeId> = steps.into_iter().map(|x| g.constant(x)).collect();
        let lp = self.log_probs_node(&mut g, &ids)?;
        Ok(g.value(lp).map(|v| v.exp()))
    }

    pub fn predict(&self, seqs: &[MotionSequence<S>]) -> Result<Vec<usize>> {
        let p = self.probabilities(&seqs.iter().collect::<Vec<_>>())?;
        Ok((0..p.rows())
            .map(|b| {
                let row = p.row(b);
                (0..row.len()).fold(0, |best, j| if row[j] > row[best] { j } else { best })
            })
            .collect())
    }

    /// Fraction of `seqs` whose argmax matches their label.
    pub fn accuracy(&self, seqs: &[MotionSequence<S>]) -> Result<f64> {
        if seqs.is_empty() {
            return Err(Error::Invalid("empty evaluation set".into()));
        }
        let pred = self.predict(seqs)?;
        let hits = seqs
            .iter()
            .zip(pred)
            .filter(|(s, p)| s.label.as_deref().and_then(|l| self.labels.id(l)) == Some(*p))
            .count();
        Ok(hits as f64 / seqs.len() as f64)
    }

    fn one_hot(&self, seqs: &[&MotionSequence<S>]) -> Result<Array<S>> {
        let k = self.labels.len();
        let mut v = vec![S::zero(); seqs.len() * k];
        for (b, s) in seqs.iter().enumerate() {
            let l = s.label.as_deref().ok_or_else(|| Error::Data("unlabeled training sequence".into()))?;
            let id = self.labels.id(l).ok_or_else(|| Error::Data(format!("unknown label `{l}`")))?;
            v[b * k + id] = S::one();
        }
        Array::new(vec![seqs.len(), k], v)
    }

    /// Cross entropy on labeled windows and its parameter gradient.
    pub fn loss_and_grads(&self, seqs: &[&MotionSequence<S>]) -> Result<(f64, BTreeMap<String, Array<S>>)> {
        let steps = stack_time(seqs)?;
        let mut g = Graph::new();
        let ids: Vec<NodeId> = steps.into_iter().map(|x| g.constant(x)).collect();
        let lp = self.log_probs_node(&mut g, &ids)?;
        let y = g.constant(self.one_hot(seqs)?);
        let picked = g.mul(lp, y)?;
        let s = g.sum(picked)?;
        let loss = g.scale(s, S::of(-1.0 / seqs.len() as f64))?;
        Ok((g.scalar(loss).as_f64(), g.param_grads(loss)?))
    }
}

/// Trains on random `past_len + pred_len` windows of labeled real motion.
pub fn train_action_classifier<S: Scalar>(
    sequences: &[MotionSequence<S>],
    past_len: usize,
    pred_len: usize,
    tau: usize,
    config: &ClassifierConfig,
    rng: &RandomSource,
) -> Result<ActionClassifier<S>> {
    let first = sequences.first().ok_or_else(|| Error::Data("no classifier training data".into()))?;
    let labels = LabelMap::from_sequences(sequences);
    let mut clf = ActionClassifier::new(labels, first.dim(), past_len, tau, config, &mut rng.fork("cls.init"))?;
    let mut sampler = WindowSampler::new(sequences, past_len, pred_len, config.batch_size, rng.fork("cls.data"))?;
    let mut adam = Adam::new(AdamConfig::with_lr(config.lr));
    for it in 0..config.iterations {
        let windows = sampler.next_batch()?;
        let full: Vec<MotionSequence<S>> = windows.iter().map(|w| w.full()).collect::<Result<_>>()?;
        let (loss, grads) = clf.loss_and_grads(&full.iter().collect::<Vec<_>>())?;
        if !loss.is_finite() {
            return Err(Error::Diverged {
                iteration: it + 1,
                detail: format!("classifier loss {loss}"),
            });
        }
        adam.step(&mut clf.store, &grads)?;
    }
    Ok(clf)
}

/// Classifier accuracy on `seed || generated continuation` against the
/// seed's label.
pub fn classifier_score<S: Scalar>(
    classifier: &ActionClassifier<S>,
    tests: &[MotionSequence<S>],
    model: &GanModel<S>,
    rng: &mut RandomSource,
) -> Result<f64> {
    classifier.accuracy(&generate_continuations(model, tests, rng)?)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ExportFormat {
    Csv,
    JsonLines,
}

impl std::str::FromStr for ExportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(Self::Csv),
            "jsonl" | "json-lines" => Ok(Self::JsonLines),
            _ => Err(Error::Config(format!("unknown export format `{s}` (csv or jsonl)"))),
        }
    }
}

impl ExportFormat {
    pub fn extension(self) -> &'static str {
        match self {
            Self::Csv => "csv",
            Self::JsonLines => "jsonl",
        }
    }
}

pub fn export_sequence<S: Scalar>(seq: &MotionSequence<S>, path: &Path, format: ExportFormat) -> Result<()> {
    let text = match format {
        ExportFormat::Csv => sequence_to_csv(seq),
        ExportFormat::JsonLines => sequence_to_jsonl(seq)?,
    };
    fs::write(path, text).map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))
}

#[derive(Clone, Debug, PartialEq)]
pub struct AblationRow {
    pub variant: String,
    /// Mean 1000 ms error under `r'`.
    pub r_prime: f64,
    /// Mean 1000 ms error minimized over the bank.
    pub min_err: f64,
}

pub const ABLATION_VARIANTS: [&str; 4] = ["full", "no_pose_embedding", "no_encoder_chaining", "no_recursive"];

/// Trains every variant from the same seeds and scores it on `tests`.
pub fn run_ablation<S: Scalar>(
    train_seqs: &[MotionSequence<S>],
    tests: &[MotionSequence<S>],
    pose: &PoseMap<S>,
    base: &TrainConfig,
    bank: &RBank,
    rng: &RandomSource,
) -> Result<Vec<AblationRow>> {
    ABLATION_VARIANTS
        .iter()
        .map(|&variant| {
            let mut config = base.clone();
            config.set_ablation(variant)?;
            log::info!("ablation: training variant {variant}");
            let out = train(train_seqs, pose.clone(), &config, rng, &mut |_, _, _| Ok(()))?;
            Ok(AblationRow {
                variant: variant.to_string(),
                r_prime: r_prime_metric(&out.model, tests)?.long_term(),
                min_err: min_err_metric(&out.model, bank, tests, false)?.long_term(),
            })
        })
        .collect()
}

/// One `(category, horizon, metric, value)` line.
#[derive(Clone, Debug, PartialEq)]
pub struct ReportRow {
    pub category: String,
    pub horizon_ms: Option<u32>,
    pub metric: String,
    pub value: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Report {
    pub rows: Vec<ReportRow>,
}

impl Report {
    pub fn push(&mut self, category: &str, horizon_ms: Option<u32>, metric: &str, value: f64) {
        self.rows.push(ReportRow {
            category: category.to_string(),
            horizon_ms,
            metric: metric.to_string(),
            value,
        });
    }

    pub fn add_horizons(&mut self, metric: &str, report: &HorizonReport) {
        for (cat, e) in report.per_category.iter().chain(std::iter::once((&"mean".to_string(), &report.mean))) {
            for (ms, v) in HORIZONS_MS.iter().zip(e) {
                self.push(cat, Some(*ms), metric, *v);
            }
        }
    }

    pub fn add_critic(&mut self, c: &CriticReport) {
        self.push("all", None, "critic.overall", c.overall);
        self.push("real", None, "critic.real", c.real);
        self.push("generated", None, "critic.generated", c.generated);
    }

    pub fn add_ablation(&mut self, rows: &[AblationRow]) {
        for r in rows {
            self.push(&r.variant, Some(1000), "ablation.r_prime", r.r_prime);
            self.push(&r.variant, Some(1000), "ablation.min_err", r.min_err);
        }
    }

    /// Distinct metric families, i.e. the part before the first `.`.
    pub fn sections(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for r in &self.rows {
            let s = r.metric.split('.').next().unwrap_or_default().to_string();
            if !out.contains(&s) {
                out.push(s);
            }
        }
        out
    }

    pub fn to_tsv(&self) -> String {
        let mut out = String::from("category\thorizon\tmetric\tvalue\n");
        for r in &self.rows {
            let h = r.horizon_ms.map_or("-".to_string(), |h| h.to_string());
            let _ = writeln!(out, "{}\t{h}\t{}\t{}", r.category, r.metric, crate::ad::checkpoint::format_value(r.value));
        }
        out
    }

    pub fn parse_tsv(text: &str) -> Result<Self> {
        let mut rows = Vec::new();
        for (i, line) in text.lines().enumerate().skip(1) {
            let cols: Vec<&str> = line.split('\t').collect();
            let bad = || Error::Data(format!("report line {}: malformed row", i + 1));
            if cols.len() != 4 {
                return Err(bad());
            }
            rows.push(ReportRow {
                category: cols[0].to_string(),
                horizon_ms: if cols[1] == "-" { None } else { Some(cols[1].parse().map_err(|_| bad())?) },
                metric: cols[2].to_string(),
                value: cols[3].parse().map_err(|_| bad())?,
            });
        }
        Ok(Self { rows })
    }
}

/// Errors of every sample in `preds` against the continuations in `tests`.
pub fn per_sample_errors<S: Scalar>(preds: &[MotionSequence<S>], gts: &[MotionSequence<S>]) -> Result<HorizonReport> {
    if preds.len() != gts.len() {
        return Err(Error::Invalid("prediction and ground-truth counts differ".into()));
    }
    let samples = preds
        .iter()
        .zip(gts)
        .map(|(p, g)| Ok((category(g), euler_error(p, g)?)))
        .collect::<Result<Vec<_>>>()?;
    HorizonReport::from_samples(&samples)
}

/// Mean pairwise frame-`t` distance among predictions.
pub fn mean_pairwise_distance<S: Scalar>(preds: &[MotionSequence<S>], t: usize) -> Result<f64> {
    if preds.len() < 2 {
        return Err(Error::Invalid("need at least two predictions".into()));
    }
    let mut sum = 0.0;
    let mut n = 0usize;
    for i in 0..preds.len() {
        for j in i + 1..preds.len() {
            sum += frame_error(preds[i].frame(t), preds[j].frame(t))?;
            n += 1;
        }
    }
    Ok(sum / n as f64)
}

//! Adversarial training schedule for the sequence GAN.
//!
//! Each outer iteration runs `m` discriminator steps, one generator step
//! and (unless disabled) one recursive-prediction step on the same batch
//! of windows.

use std::collections::BTreeMap;

use crate::ad::{checkpoint::format_value, Adam, AdamConfig, Array, Axis, Graph, NodeId, ParameterStore, RandomSource};
use crate::config::{parse, parse_bool, unknown, KeyValue};
use crate::data::{stack_time, DatasetWindow, WindowSampler};
use crate::error::{Error, Result};
use crate::gan::{decode_sequence, encode_sequence, is_decoder_param, is_encoder_param, GanModel, GanSpec, PoseMap, CRITIC_PREFIX, DISC_PREFIX, GEN_PREFIX};
use crate::motion::{MotionSequence, EMBED_DIM, R_DIM};
use crate::scalar::Scalar;

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub lr: f64,
    pub past_len: usize,
    pub pred_len: usize,
    pub tau: usize,
    pub alpha: usize,
    pub m: usize,
    pub k: usize,
    pub lambda_r: f64,
    pub lambda_c: f64,
    pub gp_weight: f64,
    pub no_pose_embedding: bool,
    pub no_encoder_chaining: bool,
    pub no_recursive: bool,
    pub seed: u64,
    pub embed_dim: usize,
    pub r_dim: usize,
    pub enc_hidden: usize,
    pub dec_hidden: usize,
    pub disc_hidden: usize,
    pub head_hidden: usize,
    pub checkpoint_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 32,
            lr: 0.00005,
            past_len: 50,
            pred_len: 25,
            tau: 1,
            alpha: 2,
            m: 5,
            k: 1000,
            lambda_r: 1.0,
            lambda_c: 10.0,
            gp_weight: 10.0,
            no_pose_embedding: false,
            no_encoder_chaining: false,
            no_recursive: false,
            seed: 0,
            embed_dim: EMBED_DIM,
            r_dim: R_DIM,
            enc_hidden: 512,
            dec_hidden: 512,
            disc_hidden: 512,
            head_hidden: 256,
            checkpoint_every: 0,
        }
    }
}

pub const ABLATIONS: [&str; 3] = ["no_pose_embedding", "no_encoder_chaining", "no_recursive"];

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let counts = [self.batch_size, self.past_len, self.pred_len, self.alpha, self.m, self.k];
        if counts.contains(&0) {
            return Err(Error::Config("batch_size, past_len, pred_len, alpha, m and k must be positive".into()));
        }
        if self.tau >= self.pred_len {
            return Err(Error::Config(format!("tau {} must be < pred_len {}", self.tau, self.pred_len)));
        }
        if !(self.lr > 0.0) || self.lambda_r < 0.0 || self.lambda_c < 0.0 || self.gp_weight < 0.0 {
            return Err(Error::Config("lr must be positive and loss weights non-negative".into()));
        }
        self.spec(self.embed_dim).validate()
    }

    /// Generator/discriminator geometry for codes of `embed_dim` values.
    pub fn spec(&self, embed_dim: usize) -> GanSpec {
        GanSpec {
            embed_dim,
            r_dim: self.r_dim,
            enc_hidden: self.enc_hidden,
            dec_hidden: self.dec_hidden,
            disc_hidden: self.disc_hidden,
            head_hidden: self.head_hidden,
            past_len: self.past_len,
            pred_len: self.pred_len,
            tau: self.tau,
            no_encoder_chaining: self.no_encoder_chaining,
        }
    }

    pub fn recursion_enabled(&self) -> bool {
        !self.no_recursive && self.alpha >= 2
    }

    /// Frames per training window: `T + alpha * pred_len`.
    pub fn window_len(&self) -> usize {
        self.past_len + self.alpha * self.pred_len
    }

    pub fn set_ablation(&mut self, name: &str) -> Result<()> {
        match name {
            "no_pose_embedding" => self.no_pose_embedding = true,
            "no_encoder_chaining" => self.no_encoder_chaining = true,
            "no_recursive" => self.no_recursive = true,
            "full" | "none" => {}
            _ => {
                return Err(Error::Config(format!(
                    "unknown ablation `{name}`; expected one of {}",
                    ABLATIONS.join(", ")
                )))
            }
        }
        Ok(())
    }
}

impl KeyValue for TrainConfig {
    fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "batch_size" => self.batch_size = parse(key, value)?,
            "lr" => self.lr = parse(key, value)?,
            "past_len" | "T" => self.past_len = parse(key, value)?,
            "pred_len" => self.pred_len = parse(key, value)?,
            "tau" => self.tau = parse(key, value)?,
            "alpha" => self.alpha = parse(key, value)?,
            "m" => self.m = parse(key, value)?,
            "k" => self.k = parse(key, value)?,
            "lambda_r" => self.lambda_r = parse(key, value)?,
            "lambda_c" => self.lambda_c = parse(key, value)?,
            "gp_weight" => self.gp_weight = parse(key, value)?,
            "no_pose_embedding" => self.no_pose_embedding = parse_bool(key, value)?,
            "no_encoder_chaining" => self.no_encoder_chaining = parse_bool(key, value)?,
            "no_recursive" => self.no_recursive = parse_bool(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            "embed_dim" => self.embed_dim = parse(key, value)?,
            "r_dim" => self.r_dim = parse(key, value)?,
            "enc_hidden" => self.enc_hidden = parse(key, value)?,
            "dec_hidden" => self.dec_hidden = parse(key, value)?,
            "disc_hidden" => self.disc_hidden = parse(key, value)?,
            "head_hidden" => self.head_hidden = parse(key, value)?,
            "checkpoint_every" => self.checkpoint_every = parse(key, value)?,
            _ => return Err(unknown(key)),
        }
        Ok(())
    }

    fn entries(&self) -> Vec<(&'static str, String)> {
        vec![
            ("batch_size", self.batch_size.to_string()),
            ("lr", self.lr.to_string()),
            ("past_len", self.past_len.to_string()),
            ("pred_len", self.pred_len.to_string()),
            ("tau", self.tau.to_string()),
            ("alpha", self.alpha.to_string()),
            ("m", self.m.to_string()),
            ("k", self.k.to_string()),
            ("lambda_r", self.lambda_r.to_string()),
            ("lambda_c", self.lambda_c.to_string()),
            ("gp_weight", self.gp_weight.to_string()),
            ("no_pose_embedding", self.no_pose_embedding.to_string()),
            ("no_encoder_chaining", self.no_encoder_chaining.to_string()),
            ("no_recursive", self.no_recursive.to_string()),
            ("seed", self.seed.to_string()),
            ("embed_dim", self.embed_dim.to_string()),
            ("r_dim", self.r_dim.to_string()),
            ("enc_hidden", self.enc_hidden.to_string()),
            ("dec_hidden", self.dec_hidden.to_string()),
            ("disc_hidden", self.disc_hidden.to_string()),
            ("head_hidden", self.head_hidden.to_string()),
            ("checkpoint_every", self.checkpoint_every.to_string()),
        ]
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct StepLosses {
    pub l_adv_disc: f64,
    pub l_r_rec: f64,
    pub l_adv_gen: f64,
    pub l_content: f64,
    pub l_gp: f64,
}

impl StepLosses {
    fn all_finite(&self) -> bool {
        [self.l_adv_disc, self.l_r_rec, self.l_adv_gen, self.l_content, self.l_gp]
            .iter()
            .all(|v| v.is_finite())
    }
}

/// `(DEC objective, ENC objective)` as combined in the generator step.
pub fn generator_objectives(l: &StepLosses, lambda_r: f64, lambda_c: f64) -> (f64, f64) {
    let enc = l.l_adv_gen + lambda_c * l.l_content;
    (enc + lambda_r * l.l_r_rec, enc)
}

/// One training minibatch: raw frames and their (frozen) embeddings, both
/// time-major.
#[derive(Clone, Debug)]
pub struct Batch<S> {
    pub x: Vec<Array<S>>,
    pub z: Vec<Array<S>>,
}

impl<S: Scalar> Batch<S> {
    pub fn from_windows(model: &GanModel<S>, windows: &[DatasetWindow<S>]) -> Result<Self> {
        let full: Vec<MotionSequence<S>> = windows.iter().map(DatasetWindow::full).collect::<Result<_>>()?;
        Self::from_sequences(model, &full.iter().collect::<Vec<_>>())
    }

    pub fn from_sequences(model: &GanModel<S>, seqs: &[&MotionSequence<S>]) -> Result<Self> {
        let x = stack_time(seqs)?;
        let z = model.embed_steps(&x)?;
        Ok(Self { x, z })
    }

    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    pub fn batch_size(&self) -> usize {
        self.x[0].rows()
    }
}

fn consts<S: Scalar>(g: &mut Graph<S>, xs: &[Array<S>]) -> Vec<NodeId> {
    xs.iter().map(|x| g.constant(x.clone())).collect()
}

fn filtered<S: Scalar>(grads: BTreeMap<String, Array<S>>, keep: impl Fn(&str) -> bool) -> BTreeMap<String, Array<S>> {
    grads.into_iter().filter(|(k, _)| keep(k)).collect()
}

fn scale_into<S: Scalar>(acc: &mut BTreeMap<String, Array<S>>, grads: &BTreeMap<String, Array<S>>, c: f64) {
    for (k, v) in grads {
        let scaled = v.map(|x| x * S::of(c));
        match acc.get_mut(k) {
            Some(a) => a.add_assign(&scaled),
            None => {
                acc.insert(k.clone(), scaled);
            }
        }
    }
}

/// Gradient penalty value and its exact parameter gradient.
#[derive(Clone, Debug)]
pub struct Penalty<S> {
    pub value: f64,
    pub norms: Vec<f64>,
    pub grads: BTreeMap<String, Array<S>>,
}

/// `mean_b (|grad_x D(x~_b)| - 1)^2` with `x~ = eps x_real + (1 - eps) x_fake`
/// per batch item, `critic` returning `[batch, 1]`.
///
/// The parameter gradient is exact: with `g_b` the input gradient held
/// constant, `d/dtheta` of the penalty equals the gradient of
/// `sum_b c_b <grad_x D_b, g_b>` where `c_b = 2 (|g_b| - 1) / (|g_b| B)`,
/// and the inner product is a forward-mode derivative recorded in the
/// graph, so one more reverse sweep differentiates it.
pub fn gradient_penalty<S, F>(
    store: &ParameterStore<S>,
    critic: F,
    real: &[Array<S>],
    fake: &[Array<S>],
    eps: &[f64],
    frozen: &[&str],
) -> Result<Penalty<S>>
where
    S: Scalar,
    F: Fn(&mut Graph<S>, &ParameterStore<S>, &[NodeId]) -> Result<NodeId>,
{
    if real.len() != fake.len() || real.is_empty() {
        return Err(Error::Invalid("penalty needs equally long nonempty sequences".into()));
    }
    let b = real[0].rows();
    if eps.len() != b {
        return Err(Error::Invalid(format!("{} blend coefficients for batch {b}", eps.len())));
    }
    let mut g = Graph::new();
    for p in frozen {
        g.freeze(p);
    }
    let mut ids = Vec::with_capacity(real.len());
    for (t, (xr, xf)) in real.iter().zip(fake).enumerate() {
        if xr.dims() != xf.dims() {
            return Err(Error::Invalid("real and fake frames differ in shape".into()));
        }
        let d = xr.cols();
        let mut v = Vec::with_capacity(xr.len());
        for (i, &e) in eps.iter().enumerate() {
            let e = S::of(e);
            v.extend(xr.row(i).iter().zip(xf.row(i)).map(|(&a, &c)| e * a + (S::one() - e) * c));
        }
        ids.push(g.input(&format!("gp.x{t}"), Array::new(vec![b, d], v)?)?);
    }
    let d = critic(&mut g, store, &ids)?;
    if g.value(d).dims() != [b, 1] {
        return Err(Error::Invalid(format!("critic output {:?}, expected [{b}, 1]", g.value(d).dims())));
    }
    let total = g.sum(d)?;
    let back = g.backward(total)?;
    let input_grads: Vec<Array<S>> = ids.iter().map(|&i| back.or_zeros(i, g.value(i))).collect();
    let mut sq = vec![0.0; b];
    for a in &input_grads {
        for (i, s) in sq.iter_mut().enumerate() {
            *s += a.row(i).iter().map(|v| v.as_f64() * v.as_f64()).sum::<f64>();
        }
    }
    let norms: Vec<f64> = sq.iter().map(|s| s.sqrt()).collect();
    let value = norms.iter().map(|n| (n - 1.0) * (n - 1.0)).sum::<f64>() / b as f64;
    let coef: Vec<S> = norms
        .iter()
        .map(|&n| S::of(if n > 0.0 { 2.0 * (n - 1.0) / n / b as f64 } else { 0.0 }))
        .collect();
    let seeds: Vec<(NodeId, NodeId)> = ids
        .iter()
        .zip(input_grads)
        .map(|(&i, u)| (i, g.constant(u)))
        .collect();
    let grads = match g.jvp(&seeds, d)? {
        Some(tan) => {
            let c = g.constant(Array::new(vec![b, 1], coef)?);
            let weighted = g.mul(tan, c)?;
            let surrogate = g.sum(weighted)?;
            g.param_grads(surrogate)?
        }
        None => BTreeMap::new(),
    };
    Ok(Penalty { value, norms, grads })
}

/// How often each step ran, in order.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Counters {
    pub disc_steps: usize,
    pub gen_steps: usize,
    pub recursive_steps: usize,
    pub trace: Vec<StepKind>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StepKind {
    Disc,
    Gen,
    Recursive,
}

/// Intermediate values of one recursive rollout, for inspection.
#[derive(Clone, Debug)]
pub struct RecursiveTrace<S> {
    /// Embeddings each chunk was conditioned on (`T` entries per chunk).
    pub conditioning: Vec<Vec<Array<S>>>,
    pub predicted: Vec<Vec<Array<S>>>,
    pub r: Vec<Array<S>>,
    pub chunk_losses: Vec<f64>,
    pub total: f64,
}

/// Model plus the optimizer state of every objective.
#[derive(Clone, Debug)]
pub struct Trainer<S> {
    pub model: GanModel<S>,
    pub config: TrainConfig,
    pub opt_disc: Adam<S>,
    pub opt_critic: Adam<S>,
    pub opt_adv: Adam<S>,
    pub opt_content: Adam<S>,
    pub counters: Counters,
    r_rng: RandomSource,
    gp_rng: RandomSource,
}

fn mean_abs_frames<S: Scalar>(g: &mut Graph<S>, real: &[Array<S>], pred: &[NodeId], pose: &PoseMap<S>) -> Result<NodeId> {
    let rc = consts(g, real);
    let real_cat = g.concat(&rc, Axis::Rows)?;
    let decoded: Vec<NodeId> = pred.iter().map(|&z| pose.decode_node(g, z)).collect::<Result<_>>()?;
    let pred_cat = g.concat(&decoded, Axis::Rows)?;
    g.mean_abs_diff(real_cat, pred_cat)
}

impl<S: Scalar> Trainer<S> {
    pub fn new(model: GanModel<S>, config: TrainConfig, rng: &RandomSource) -> Result<Self> {
        config.validate()?;
        let adam = AdamConfig::with_lr(config.lr);
        Ok(Self {
            model,
            config,
            opt_disc: Adam::new(adam),
            opt_critic: Adam::new(adam),
            opt_adv: Adam::new(adam),
            opt_content: Adam::new(adam),
            counters: Counters::default(),
            r_rng: rng.fork("train.r"),
            gp_rng: rng.fork("train.gp"),
        })
    }

    fn check_batch(&self, batch: &Batch<S>, need: usize) -> Result<()> {
        if batch.len() < need {
            return Err(Error::Invalid(format!("window has {} frames, step needs {need}", batch.len())));
        }
        Ok(())
    }

    fn sample_r(&mut self, b: usize) -> Result<Array<S>> {
        self.r_rng.sample_normal(vec![b, self.model.spec.r_dim])
    }

    /// Discriminator update on `L_adv_disc + lambda_r L_rec + gp_weight gp`,
    /// followed by a cross-entropy update of the critic on the same pairs.
    pub fn disc_step(&mut self, batch: &Batch<S>) -> Result<StepLosses> {
        let (t, p) = (self.model.spec.past_len, self.model.spec.pred_len);
        self.check_batch(batch, t + p)?;
        let b = batch.batch_size();
        let r = self.sample_r(b)?;
        let fake = self.model.rollout(&batch.z[..t], &r, p)?;
        let real_seq: Vec<Array<S>> = batch.z[..t + p].to_vec();
        let fake_seq: Vec<Array<S>> = batch.z[..t].iter().chain(&fake).cloned().collect();
        let disc = self.model.spec.discriminator();
        let rd = self.model.spec.r_dim;

        let mut g = Graph::new();
        let fi = consts(&mut g, &fake_seq);
        let ri = consts(&mut g, &real_seq);
        let d_fake = disc.forward(&mut g, &self.model.store, &fi)?;
        let d_real = disc.forward(&mut g, &self.model.store, &ri)?;
        let wf = g.slice(d_fake, Axis::Cols, 0, 1)?;
        let wr = g.slice(d_real, Axis::Cols, 0, 1)?;
        let r_hat = g.slice(d_fake, Axis::Cols, 1, rd)?;
        let mf = g.mean(wf)?;
        let mr = g.mean(wr)?;
        let l_adv = g.sub(mf, mr)?;
        let rn = g.constant(r);
        let l_rec = g.mean_abs_diff(rn, r_hat)?;
        let wrec = g.scale(l_rec, S::of(self.config.lambda_r))?;
        let obj = g.add(l_adv, wrec)?;
        let mut grads = filtered(g.param_grads(obj)?, |k| k.starts_with(DISC_PREFIX));

        let eps: Vec<f64> = (0..b).map(|_| self.gp_rng.uniform()).collect();
        let gp = gradient_penalty(
            &self.model.store,
            |g, s, seq| {
                let out = disc.forward(g, s, seq)?;
                g.slice(out, Axis::Cols, 0, 1)
            },
            &real_seq,
            &fake_seq,
            &eps,
            &[],
        )?;
        scale_into(&mut grads, &filtered(gp.grads, |k| k.starts_with(DISC_PREFIX)), self.config.gp_weight);
        let losses = StepLosses {
            l_adv_disc: g.scalar(l_adv).as_f64(),
            l_r_rec: g.scalar(l_rec).as_f64(),
            l_gp: gp.value,
            ..StepLosses::default()
        };
        if !losses.all_finite() {
            return Err(Error::Diverged {
                iteration: self.counters.gen_steps + 1,
                detail: format!("discriminator losses {losses:?}"),
            });
        }
        self.opt_disc.step(&mut self.model.store, &grads)?;
        self.critic_step(&real_seq, &fake_seq)?;
        self.counters.disc_steps += 1;
        self.counters.trace.push(StepKind::Disc);
        Ok(losses)
    }

    fn critic_step(&mut self, real: &[Array<S>], fake: &[Array<S>]) -> Result<f64> {
        let critic = self.model.spec.critic();
        let mut g = Graph::new();
        let ri = consts(&mut g, real);
        let fi = consts(&mut g, fake);
        let lr = critic.forward(&mut g, &self.model.store, &ri)?;
        let lf = critic.forward(&mut g, &self.model.store, &fi)?;
        let neg = g.scale(lr, S::of(-1.0))?;
        let sr = g.softplus(neg)?;
        let sf = g.softplus(lf)?;
        let a = g.mean(sr)?;
        let c = g.mean(sf)?;
        let loss = g.add(a, c)?;
        let grads = filtered(g.param_grads(loss)?, |k| k.starts_with(CRITIC_PREFIX));
        self.opt_critic.step(&mut self.model.store, &grads)?;
        Ok(g.scalar(loss).as_f64())
    }

    /// Generator update. Adversarial and content gradients are taken at
    /// the same parameters: decoder params get
    /// `grad(L_adv_gen + lambda_r L_rec)`, encoder params `grad(L_adv_gen)`
    /// (first optimizer), then all generator params get
    /// `lambda_c grad(L_content)` (second optimizer).
    pub fn gen_step(&mut self, batch: &Batch<S>) -> Result<StepLosses> {
        let (t, p) = (self.model.spec.past_len, self.model.spec.pred_len);
        self.check_batch(batch, t + p)?;
        let b = batch.batch_size();
        let r = self.sample_r(b)?;
        let r_prime = self.model.infer_r_embedded(&batch.z[..t + p])?;
        let spec = self.model.spec.clone();
        let disc = spec.discriminator();

        let mut g = Graph::new();
        g.freeze(DISC_PREFIX);
        g.freeze("pose.");
        let past = consts(&mut g, &batch.z[..t]);
        let h = encode_sequence(&mut g, &self.model.store, &spec, &past)?;
        let rn = g.constant(r);
        let fake = decode_sequence(&mut g, &self.model.store, &spec, h, rn, past[t - 1], p)?;
        let full: Vec<NodeId> = past.iter().chain(&fake).copied().collect();
        let out = disc.forward(&mut g, &self.model.store, &full)?;
        let w = g.slice(out, Axis::Cols, 0, 1)?;
        let r_hat = g.slice(out, Axis::Cols, 1, spec.r_dim)?;
        let mw = g.mean(w)?;
        let l_adv = g.scale(mw, S::of(-1.0))?;
        let l_rec = g.mean_abs_diff(rn, r_hat)?;
        let rp = g.constant(r_prime);
        let cont = decode_sequence(&mut g, &self.model.store, &spec, h, rp, past[t - 1], p)?;
        let l_content = mean_abs_frames(&mut g, &batch.x[t..t + p], &cont, &self.model.pose)?;

        let losses = StepLosses {
            l_adv_gen: g.scalar(l_adv).as_f64(),
            l_r_rec: g.scalar(l_rec).as_f64(),
            l_content: g.scalar(l_content).as_f64(),
            ..StepLosses::default()
        };
        if !losses.all_finite() {
            return Err(Error::Diverged {
                iteration: self.counters.gen_steps + 1,
                detail: format!("generator losses {losses:?}"),
            });
        }
        let gen = |k: &str| k.starts_with(GEN_PREFIX);
        let g_adv = filtered(g.param_grads(l_adv)?, gen);
        let g_rec = filtered(g.param_grads(l_rec)?, is_decoder_param);
        let g_con = filtered(g.param_grads(l_content)?, gen);
        let mut adv = BTreeMap::new();
        scale_into(&mut adv, &filtered(g_adv.clone(), is_encoder_param), 1.0);
        scale_into(&mut adv, &filtered(g_adv, is_decoder_param), 1.0);
        scale_into(&mut adv, &g_rec, self.config.lambda_r);
        let mut content = BTreeMap::new();
        scale_into(&mut content, &g_con, self.config.lambda_c);
        self.opt_adv.step(&mut self.model.store, &adv)?;
        self.opt_content.step(&mut self.model.store, &content)?;
        self.counters.gen_steps += 1;
        self.counters.trace.push(StepKind::Gen);
        Ok(losses)
    }

    /// Records the `alpha`-chunk rollout: chunk `a` covers frames
    /// `T + (a-1) P .. T + a P`, is conditioned on the last `T` entries of
    /// the running embedding list (real past, then predictions) and uses
    /// `r_a` inferred from the real frames around it.
    fn record_recursion(&self, g: &mut Graph<S>, batch: &Batch<S>, alpha: usize) -> Result<(NodeId, RecursiveTrace<S>)> {
        let (t, p) = (self.model.spec.past_len, self.model.spec.pred_len);
        if alpha == 0 {
            return Err(Error::Invalid("alpha must be >= 1".into()));
        }
        self.check_batch(batch, t + alpha * p)?;
        let spec = &self.model.spec;
        g.freeze(DISC_PREFIX);
        g.freeze("pose.");
        let mut running = consts(g, &batch.z[..t]);
        let mut total: Option<NodeId> = None;
        let mut trace = RecursiveTrace {
            conditioning: Vec::new(),
            predicted: Vec::new(),
            r: Vec::new(),
            chunk_losses: Vec::new(),
            total: 0.0,
        };
        for a in 0..alpha {
            let lo = t + a * p;
            let r_a = self.model.infer_r_embedded(&batch.z[lo - t..lo + p])?;
            let cond = running[running.len() - t..].to_vec();
            let h = encode_sequence(g, &self.model.store, spec, &cond)?;
            let rn = g.constant(r_a.clone());
            let pred = decode_sequence(g, &self.model.store, spec, h, rn, cond[t - 1], p)?;
            let loss = mean_abs_frames(g, &batch.x[lo..lo + p], &pred, &self.model.pose)?;
            trace.conditioning.push(cond.iter().map(|&i| g.value(i).clone()).collect());
            trace.predicted.push(pred.iter().map(|&i| g.value(i).clone()).collect());
            trace.r.push(r_a);
            trace.chunk_losses.push(g.scalar(loss).as_f64());
            total = Some(match total {
                None => loss,
                Some(acc) => g.add(acc, loss)?,
            });
            running.extend(pred);
        }
        let total = total.expect("alpha >= 1");
        trace.total = g.scalar(total).as_f64();
        Ok((total, trace))
    }

    pub fn recursive_trace(&self, batch: &Batch<S>, alpha: usize) -> Result<RecursiveTrace<S>> {
        let mut g = Graph::new();
        Ok(self.record_recursion(&mut g, batch, alpha)?.1)
    }

    /// Content update on the summed per-chunk losses (equal weights).
    pub fn recursive_step(&mut self, batch: &Batch<S>) -> Result<StepLosses> {
        let alpha = self.config.alpha;
        if alpha < 2 {
            return Err(Error::Invalid("recursive step needs alpha >= 2".into()));
        }
        let mut g = Graph::new();
        let (total, trace) = self.record_recursion(&mut g, batch, alpha)?;
        if !trace.total.is_finite() {
            return Err(Error::Diverged {
                iteration: self.counters.gen_steps,
                detail: format!("recursive loss {}", trace.total),
            });
        }
        let grads = filtered(g.param_grads(total)?, |k| k.starts_with(GEN_PREFIX));
        let mut scaled = BTreeMap::new();
        scale_into(&mut scaled, &grads, self.config.lambda_c);
        self.opt_content.step(&mut self.model.store, &scaled)?;
        self.counters.recursive_steps += 1;
        self.counters.trace.push(StepKind::Recursive);
        Ok(StepLosses {
            l_content: trace.total,
            ..StepLosses::default()
        })
    }

    /// One outer iteration; disc-side losses are averaged over the `m`
    /// inner steps.
    pub fn iteration(&mut self, batch: &Batch<S>) -> Result<StepLosses> {
        let m = self.config.m;
        let mut acc = StepLosses::default();
        for _ in 0..m {
            let d = self.disc_step(batch)?;
            acc.l_adv_disc += d.l_adv_disc / m as f64;
            acc.l_r_rec += d.l_r_rec / m as f64;
            acc.l_gp += d.l_gp / m as f64;
        }
        let gl = self.gen_step(batch)?;
        acc.l_adv_gen = gl.l_adv_gen;
        acc.l_content = gl.l_content;
        if self.config.recursion_enabled() {
            self.recursive_step(batch)?;
        }
        Ok(acc)
    }
}

/// Mean `|X_future - X^{r'}_future|` on a fixed batch, without updating.
pub fn content_loss<S: Scalar>(model: &GanModel<S>, batch: &Batch<S>) -> Result<f64> {
    let (t, p) = (model.spec.past_len, model.spec.pred_len);
    if batch.len() < t + p {
        return Err(Error::Invalid("batch shorter than T + pred_len".into()));
    }
    let r = model.infer_r_embedded(&batch.z[..t + p])?;
    let pred = model.rollout(&batch.z[..t], &r, p)?;
    let mut sum = 0.0;
    let mut n = 0usize;
    for (x, z) in batch.x[t..t + p].iter().zip(&pred) {
        let xh = model.pose.decode(z)?;
        sum += x.values().iter().zip(xh.values()).map(|(a, b)| (*a - *b).abs().as_f64()).sum::<f64>();
        n += x.len();
    }
    Ok(sum / n as f64)
}

pub const LOG_HEADER: &str = "iter\tl_adv_disc\tl_r_rec\tl_adv_gen\tl_content\tl_gp";

/// Loss log: `iter, l_adv_disc, l_r_rec, l_adv_gen, l_content, l_gp`.
pub fn format_log_line(iter: usize, l: &StepLosses) -> String {
    format!(
        "{iter}\t{}\t{}\t{}\t{}\t{}\n",
        format_value(l.l_adv_disc),
        format_value(l.l_r_rec),
        format_value(l.l_adv_gen),
        format_value(l.l_content),
        format_value(l.l_gp)
    )
}

pub fn format_log(log: &[StepLosses]) -> String {
    log.iter().enumerate().map(|(i, l)| format_log_line(i + 1, l)).collect()
}

#[derive(Clone, Debug)]
pub struct TrainOutcome<S> {
    pub model: GanModel<S>,
    pub log: Vec<StepLosses>,
    pub counters: Counters,
}

/// Builds the model for `config` around `pose` (ignored, replaced by the
/// identity map, under `no_pose_embedding`).
pub fn build_model<S: Scalar>(
    config: &TrainConfig,
    pose: PoseMap<S>,
    pose_dim: usize,
    rng: &RandomSource,
) -> Result<GanModel<S>> {
    config.validate()?;
    let pose = if config.no_pose_embedding { PoseMap::Identity } else { pose };
    let embed = match &pose {
        PoseMap::Identity => pose_dim,
        PoseMap::Learned(a) => {
            if a.spec.embed_dim != config.embed_dim {
                return Err(Error::Incompatible(format!(
                    "pose checkpoint has {}-dim embeddings, config expects {}",
                    a.spec.embed_dim, config.embed_dim
                )));
            }
            a.spec.embed_dim
        }
    };
    GanModel::new(config.spec(embed), pose, pose_dim, &mut rng.fork("init"))
}

/// Runs `k` outer iterations on windows drawn from `sequences`.
/// `on_checkpoint(iter, model, log)` fires every `checkpoint_every`
/// iterations; a non-finite loss aborts with [`Error::Diverged`] and
/// leaves whatever the callback last wrote untouched.
pub fn train<S: Scalar>(
    sequences: &[MotionSequence<S>],
    pose: PoseMap<S>,
    config: &TrainConfig,
    rng: &RandomSource,
    on_checkpoint: &mut dyn FnMut(usize, &GanModel<S>, &[StepLosses]) -> Result<()>,
) -> Result<TrainOutcome<S>> {
    let first = sequences.first().ok_or_else(|| Error::Data("no training sequences".into()))?;
    let model = build_model(config, pose, first.dim(), rng)?;
    let mut trainer = Trainer::new(model, config.clone(), rng)?;
    let mut sampler = WindowSampler::new(
        sequences,
        config.past_len,
        config.alpha * config.pred_len,
        config.batch_size,
        rng.fork("train.data"),
    )?;
    let mut log = Vec::with_capacity(config.k);
    for it in 1..=config.k {
        let windows = sampler.next_batch()?;
        let batch = Batch::from_windows(&trainer.model, &windows)?;
        let losses = trainer.iteration(&batch).map_err(|e| match e {
            Error::Diverged { detail, .. } => Error::Diverged { iteration: it, detail },
            e => e,
        })?;
        if !trainer.model.store.all_finite() {
            return Err(Error::Diverged {
                iteration: it,
                detail: "non-finite parameters".into(),
            });
        }
        log::debug!("iter {it}: content {:.6} adv_disc {:.6}", losses.l_content, losses.l_adv_disc);
        log.push(losses);
        if config.checkpoint_every > 0 && it % config.checkpoint_every == 0 {
            on_checkpoint(it, &trainer.model, &log)?;
        }
    }
    Ok(TrainOutcome {
        model: trainer.model,
        log,
        counters: trainer.counters,
    })
}

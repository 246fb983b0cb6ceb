//! Adversarial pose autoencoder.
//!
//! `EN` maps a pose to a code, `DE` maps a code back, and a small
//! discriminator tells real poses from decoded prior samples.

use std::collections::BTreeMap;

use crate::ad::{Adam, AdamConfig, Array, Checkpoint, Graph, NodeId, ParameterStore, RandomSource};
use crate::config::{parse, unknown, KeyValue};
use crate::error::{Error, Result};
use crate::motion::{PoseEmbedding, PoseVector, EMBED_DIM, POSE_DIM};
use crate::nets::MlpSpec;
use crate::scalar::Scalar;

pub const EN_PREFIX: &str = "pose.en";
pub const DE_PREFIX: &str = "pose.de";
pub const DISC_PREFIX: &str = "pose.disc";

#[derive(Clone, Debug, PartialEq)]
pub struct PoseAaeSpec {
    pub pose_dim: usize,
    pub embed_dim: usize,
    /// Hidden widths of both EN and DE (DE uses them reversed).
    pub hidden: Vec<usize>,
    pub disc_hidden: usize,
}

impl Default for PoseAaeSpec {
    fn default() -> Self {
        Self {
            pose_dim: POSE_DIM,
            embed_dim: EMBED_DIM,
            hidden: vec![64, 64],
            disc_hidden: 64,
        }
    }
}

impl PoseAaeSpec {
    pub fn encoder(&self) -> MlpSpec {
        let mut dims = vec![self.pose_dim];
        dims.extend(&self.hidden);
        dims.push(self.embed_dim);
        MlpSpec::new(EN_PREFIX, dims)
    }

    pub fn decoder(&self) -> MlpSpec {
        let mut dims = vec![self.embed_dim];
        dims.extend(self.hidden.iter().rev());
        dims.push(self.pose_dim);
        MlpSpec::new(DE_PREFIX, dims)
    }

    pub fn discriminator(&self) -> MlpSpec {
        MlpSpec::new(DISC_PREFIX, vec![self.pose_dim, self.disc_hidden, 1])
    }

    /// Recovers the architecture from stored weight dims.
    pub fn infer(store: &ParameterStore<impl Scalar>) -> Result<Self> {
        let mut dims = Vec::new();
        let mut l = 0;
        while let Ok(w) = store.get(&format!("{EN_PREFIX}.l{l}.w")) {
            if l == 0 {
                dims.push(w.dims()[0]);
            }
            dims.push(w.dims()[1]);
            l += 1;
        }
        if dims.len() < 2 {
            return Err(Error::Checkpoint("no pose encoder weights".into()));
        }
        let disc = store.get(&format!("{DISC_PREFIX}.l0.w"))?;
        let spec = Self {
            pose_dim: dims[0],
            embed_dim: *dims.last().unwrap(),
            hidden: dims[1..dims.len() - 1].to_vec(),
            disc_hidden: disc.dims()[1],
        };
        for mlp in [spec.encoder(), spec.decoder(), spec.discriminator()] {
            for i in 0..mlp.num_layers() {
                let want = [mlp.layer_dims[i], mlp.layer_dims[i + 1]];
                let got = store.get(&mlp.weight_name(i))?.dims();
                if got != want {
                    return Err(Error::Incompatible(format!(
                        "{} has dims {got:?}, expected {want:?}",
                        mlp.weight_name(i)
                    )));
                }
            }
        }
        Ok(spec)
    }
}

/// All three networks' parameters under the `pose.` prefixes.
#[derive(Clone, Debug, PartialEq)]
pub struct PoseAae<S> {
    pub spec: PoseAaeSpec,
    pub store: ParameterStore<S>,
}

impl<S: Scalar> PoseAae<S> {
    pub fn new(spec: PoseAaeSpec, rng: &mut RandomSource) -> Result<Self> {
        let mut store = ParameterStore::new();
        spec.encoder().init(&mut store, rng)?;
        spec.decoder().init(&mut store, rng)?;
        spec.discriminator().init(&mut store, rng)?;
        Ok(Self { spec, store })
    }

    pub fn from_store(store: ParameterStore<S>) -> Result<Self> {
        let spec = PoseAaeSpec::infer(&store)?;
        Ok(Self {
            spec,
            store: store.subset("pose."),
        })
    }

    pub fn encode_node(&self, g: &mut Graph<S>, x: NodeId) -> Result<NodeId> {
        self.spec.encoder().forward(g, &self.store, x)
    }

    pub fn decode_node(&self, g: &mut Graph<S>, z: NodeId) -> Result<NodeId> {
        self.spec.decoder().forward(g, &self.store, z)
    }

    /// Encodes a `[batch, pose_dim]` array.
    pub fn encode(&self, x: &Array<S>) -> Result<Array<S>> {
        self.spec.encoder().apply(&self.store, x)
    }

    pub fn decode(&self, z: &Array<S>) -> Result<Array<S>> {
        self.spec.decoder().apply(&self.store, z)
    }

    pub fn encode_pose(&self, x: &PoseVector<S>) -> Result<PoseEmbedding<S>> {
        PoseEmbedding::new(self.encode(&x.to_row())?.into_values())
    }

    /// Decoder output, unwrapped; see [`PoseAae::decode_wrapped`].
    pub fn decode_pose(&self, z: &PoseEmbedding<S>) -> Result<Vec<S>> {
        Ok(self.decode(&z.to_row())?.into_values())
    }

    pub fn decode_wrapped(&self, z: &PoseEmbedding<S>) -> Result<PoseVector<S>> {
        PoseVector::wrapped(self.decode_pose(z)?)
    }

    pub fn to_checkpoint(&self) -> Result<Checkpoint<S>> {
        let mut ck = Checkpoint::new();
        for (k, v) in self.store.iter() {
            ck.insert(k, v.clone())?;
        }
        Ok(ck)
    }

    /// Rebuilds from the `pose.` entries of any checkpoint (pose or GAN).
    pub fn from_checkpoint(ck: &Checkpoint<S>) -> Result<Self> {
        let store: ParameterStore<S> = ck
            .entries
            .iter()
            .filter(|(k, _)| k.starts_with("pose."))
            .map(|(k, v)| (k.clone(), v.clone()))
            .collect();
        if store.is_empty() {
            return Err(Error::Incompatible("checkpoint holds no pose embedding".into()));
        }
        Self::from_store(store).map_err(|e| Error::Incompatible(e.to_string()))
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        self.to_checkpoint()?.save(path)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        Self::from_checkpoint(&Checkpoint::load(path)?)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PoseAaeLosses {
    pub l_cyc: f64,
    pub l_adv_de: f64,
    pub l_adv_disc: f64,
    pub lambda: f64,
}

/// Graph nodes of every pose objective.
pub struct PoseLossNodes {
    pub l_cyc: NodeId,
    pub en_obj: NodeId,
    pub de_obj: NodeId,
    pub l_adv_de: NodeId,
    pub l_adv_disc: NodeId,
}

/// Mean binary cross entropy of logits against a constant target.
fn bce_logits<S: Scalar>(g: &mut Graph<S>, logits: NodeId, real: bool) -> Result<NodeId> {
    let arg = if real { g.scale(logits, S::of(-1.0))? } else { logits };
    let sp = g.softplus(arg)?;
    g.mean(sp)
}

pub fn record_pose_losses<S: Scalar>(
    g: &mut Graph<S>,
    aae: &PoseAae<S>,
    x: &Array<S>,
    z: &Array<S>,
    lambda: f64,
) -> Result<PoseLossNodes> {
    if x.rows() == 0 || z.rows() == 0 {
        return Err(Error::Invalid("empty pose batch".into()));
    }
    let xi = g.input("x", x.clone())?;
    let zi = g.input("z", z.clone())?;
    let x_code = aae.encode_node(g, xi)?;
    let x_rec = aae.decode_node(g, x_code)?;
    let z_dec = aae.decode_node(g, zi)?;
    let z_rec = aae.encode_node(g, z_dec)?;
    let cx = g.mean_abs_diff(xi, x_rec)?;
    let cz = g.mean_abs_diff(zi, z_rec)?;
    let l_cyc = g.add(cx, cz)?;

    let disc = aae.spec.discriminator();
    let d_real = disc.forward(g, &aae.store, xi)?;
    let d_fake = disc.forward(g, &aae.store, z_dec)?;
    let lr = bce_logits(g, d_real, true)?;
    let lf = bce_logits(g, d_fake, false)?;
    let l_adv_disc = g.add(lr, lf)?;
    let l_adv_de = bce_logits(g, d_fake, true)?;
    let weighted = g.scale(l_adv_de, S::of(lambda))?;
    let de_obj = g.add(l_cyc, weighted)?;
    Ok(PoseLossNodes {
        l_cyc,
        en_obj: l_cyc,
        de_obj,
        l_adv_de,
        l_adv_disc,
    })
}

/// Both cycle terms and the adversarial terms on one batch of poses `x`
/// and prior samples `z`.
pub fn pose_cycle_losses<S: Scalar>(aae: &PoseAae<S>, x: &Array<S>, z: &Array<S>, lambda: f64) -> Result<PoseAaeLosses> {
    let mut g = Graph::new();
    let n = record_pose_losses(&mut g, aae, x, z, lambda)?;
    Ok(PoseAaeLosses {
        l_cyc: g.scalar(n.l_cyc).as_f64(),
        l_adv_de: g.scalar(n.l_adv_de).as_f64(),
        l_adv_disc: g.scalar(n.l_adv_disc).as_f64(),
        lambda,
    })
}

/// Stacks poses into `[n, dim]`; an empty list is an error.
pub fn poses_to_array<S: Scalar>(poses: &[PoseVector<S>]) -> Result<Array<S>> {
    if poses.is_empty() {
        return Err(Error::Invalid("empty pose batch".into()));
    }
    let rows: Vec<Vec<S>> = poses.iter().map(|p| p.angles().to_vec()).collect();
    Array::from_rows(&rows)
}

/// Mean per-element `|x - DE(EN(x))|`.
pub fn reconstruction_error<S: Scalar>(aae: &PoseAae<S>, x: &Array<S>) -> Result<f64> {
    let rec = aae.decode(&aae.encode(x)?)?;
    let d: f64 = x
        .values()
        .iter()
        .zip(rec.values())
        .map(|(a, b)| (*a - *b).abs().as_f64())
        .sum();
    Ok(d / x.len() as f64)
}

#[derive(Clone, Debug, PartialEq)]
pub struct PoseTrainConfig {
    pub iterations: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub lambda: f64,
    pub embed_dim: usize,
    pub pose_hidden: usize,
    pub pose_layers: usize,
    pub disc_hidden: usize,
    pub checkpoint_every: usize,
    pub seed: u64,
}

impl Default for PoseTrainConfig {
    fn default() -> Self {
        Self {
            iterations: 200,
            batch_size: 32,
            lr: 0.00005,
            lambda: 0.01,
            embed_dim: EMBED_DIM,
            pose_hidden: 64,
            pose_layers: 2,
            disc_hidden: 64,
            checkpoint_every: 0,
            seed: 0,
        }
    }
}

impl PoseTrainConfig {
    pub fn spec(&self, pose_dim: usize) -> PoseAaeSpec {
        PoseAaeSpec {
            pose_dim,
            embed_dim: self.embed_dim,
            hidden: vec![self.pose_hidden; self.pose_layers],
            disc_hidden: self.disc_hidden,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 || self.batch_size == 0 || self.embed_dim == 0 || self.pose_hidden == 0 || self.disc_hidden == 0 {
            return Err(Error::Config("pose counts and dims must be positive".into()));
        }
        if !(self.lr > 0.0) || !(self.lambda > 0.0) {
            return Err(Error::Config("lr and lambda must be positive".into()));
        }
        Ok(())
    }
}

impl KeyValue for PoseTrainConfig {
    fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "iterations" => self.iterations = parse(key, value)?,
            "batch_size" => self.batch_size = parse(key, value)?,
            "lr" => self.lr = parse(key, value)?,
            "lambda" => self.lambda = parse(key, value)?,
            "embed_dim" => self.embed_dim = parse(key, value)?,
            "pose_hidden" => self.pose_hidden = parse(key, value)?,
            "pose_layers" => self.pose_layers = parse(key, value)?,
            "disc_hidden" => self.disc_hidden = parse(key, value)?,
            "checkpoint_every" => self.checkpoint_every = parse(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            _ => return Err(unknown(key)),
        }
        Ok(())
    }

    fn entries(&self) -> Vec<(&'static str, String)> {
        vec![
            ("iterations", self.iterations.to_string()),
            ("batch_size", self.batch_size.to_string()),
            ("lr", self.lr.to_string()),
            ("lambda", self.lambda.to_string()),
            ("embed_dim", self.embed_dim.to_string()),
            ("pose_hidden", self.pose_hidden.to_string()),
            ("pose_layers", self.pose_layers.to_string()),
            ("disc_hidden", self.disc_hidden.to_string()),
            ("checkpoint_every", self.checkpoint_every.to_string()),
            ("seed", self.seed.to_string()),
        ]
    }
}

/// Optimizer state for the three pose networks.
#[derive(Clone, Debug)]
pub struct PoseOptimizers<S> {
    pub en: Adam<S>,
    pub de: Adam<S>,
    pub disc: Adam<S>,
}

impl<S: Scalar> PoseOptimizers<S> {
    pub fn new(lr: f64) -> Self {
        let c = AdamConfig::with_lr(lr);
        Self {
            en: Adam::new(c),
            de: Adam::new(c),
            disc: Adam::new(c),
        }
    }
}

fn restrict<S: Scalar>(grads: &BTreeMap<String, Array<S>>, prefix: &str) -> BTreeMap<String, Array<S>> {
    grads
        .iter()
        .filter(|(k, _)| k.starts_with(prefix))
        .map(|(k, v)| (k.clone(), v.clone()))
        .collect()
}

/// One update of all three networks from gradients taken at the same
/// parameters: EN on `L_cyc`, DE on `L_cyc + lambda L_adv`, the
/// discriminator on its cross entropy.
pub fn pose_train_step<S: Scalar>(
    aae: &mut PoseAae<S>,
    opt: &mut PoseOptimizers<S>,
    x: &Array<S>,
    z: &Array<S>,
    lambda: f64,
) -> Result<PoseAaeLosses> {
    let mut g = Graph::new();
    let n = record_pose_losses(&mut g, aae, x, z, lambda)?;
    let losses = PoseAaeLosses {
        l_cyc: g.scalar(n.l_cyc).as_f64(),
        l_adv_de: g.scalar(n.l_adv_de).as_f64(),
        l_adv_disc: g.scalar(n.l_adv_disc).as_f64(),
        lambda,
    };
    if ![losses.l_cyc, losses.l_adv_de, losses.l_adv_disc].iter().all(|v| v.is_finite()) {
        return Err(Error::Diverged {
            iteration: opt.en.step_count() as usize,
            detail: format!("{losses:?}"),
        });
    }
    let en = restrict(&g.param_grads(n.en_obj)?, EN_PREFIX);
    let de = restrict(&g.param_grads(n.de_obj)?, DE_PREFIX);
    let disc = restrict(&g.param_grads(n.l_adv_disc)?, DISC_PREFIX);
    opt.en.step(&mut aae.store, &en)?;
    opt.de.step(&mut aae.store, &de)?;
    opt.disc.step(&mut aae.store, &disc)?;
    Ok(losses)
}

#[derive(Clone, Debug)]
pub struct PoseTraining<S> {
    pub model: PoseAae<S>,
    pub log: Vec<PoseAaeLosses>,
}

/// Loss log line: `iter, l_cyc, l_adv_de, l_adv_disc`.
pub const POSE_LOG_HEADER: &str = "iter\tl_cyc\tl_adv_de\tl_adv_disc";

pub fn format_pose_log(log: &[PoseAaeLosses]) -> String {
    use crate::ad::checkpoint::format_value as f;
    log.iter()
        .enumerate()
        .map(|(i, l)| format!("{}\t{}\t{}\t{}\n", i + 1, f(l.l_cyc), f(l.l_adv_de), f(l.l_adv_disc)))
        .collect()
}

/// Trains from `poses: [n, pose_dim]`, drawing minibatches with
/// replacement. `on_checkpoint(iter, model)` fires every
/// `checkpoint_every` iterations; on divergence the error is returned and
/// the last checkpoint written by the callback stays valid.
pub fn train_pose_embedding<S: Scalar>(
    poses: &Array<S>,
    config: &PoseTrainConfig,
    rng: &RandomSource,
    on_checkpoint: &mut dyn FnMut(usize, &PoseAae<S>) -> Result<()>,
) -> Result<PoseTraining<S>> {
    config.validate()?;
    let (n, dim) = poses
        .shape2()
        .filter(|(n, _)| *n > 0)
        .ok_or_else(|| Error::Data("no poses to train on".into()))?;
    let mut init_rng = rng.fork("pose.init");
    let mut batch_rng = rng.fork("pose.batch");
    let mut prior_rng = rng.fork("pose.prior");
    let mut model = PoseAae::new(config.spec(dim), &mut init_rng)?;
    let mut opt = PoseOptimizers::new(config.lr);
    let mut log = Vec::with_capacity(config.iterations);
    for it in 1..=config.iterations {
        let mut v = Vec::with_capacity(config.batch_size * dim);
        for _ in 0..config.batch_size {
            v.extend_from_slice(poses.row(batch_rng.below(n)));
        }
        let x = Array::new(vec![config.batch_size, dim], v)?;
        let z = prior_rng.sample_normal(vec![config.batch_size, config.embed_dim])?;
        let losses = pose_train_step(&mut model, &mut opt, &x, &z, config.lambda).map_err(|e| match e {
            Error::Diverged { detail, .. } => Error::Diverged { iteration: it, detail },
            e => e,
        })?;
        log::debug!("pose iter {it}: l_cyc={:.6}", losses.l_cyc);
        log.push(losses);
        if config.checkpoint_every > 0 && it % config.checkpoint_every == 0 {
            on_checkpoint(it, &model)?;
        }
    }
    Ok(PoseTraining { model, log })
}

/// Decodes `steps` evenly spaced blends of the two codes, endpoints
/// included, wrapping the result into valid poses.
pub fn interpolate_poses<S: Scalar>(
    aae: &PoseAae<S>,
    a: &PoseVector<S>,
    b: &PoseVector<S>,
    steps: usize,
) -> Result<Vec<PoseVector<S>>> {
    if steps < 2 {
        return Err(Error::Invalid(format!("interpolation needs >= 2 steps, got {steps}")));
    }
    let za = aae.encode_pose(a)?;
    let zb = aae.encode_pose(b)?;
    let mut codes = Vec::with_capacity(steps * za.dim());
    for k in 0..steps {
        let w = S::of(k as f64 / (steps - 1) as f64);
        codes.extend(za.0.iter().zip(&zb.0).map(|(&p, &q)| p + (q - p) * w));
    }
    let out = aae.decode(&Array::new(vec![steps, za.dim()], codes)?)?;
    (0..steps).map(|k| PoseVector::wrapped(out.row(k).to_vec())).collect()
}

//! Sequence networks: recurrent encoder, residual recurrent decoder, the
//! dual-head bidirectional discriminator and the separate critic.
//!
//! Batches are time-major: a sequence is a slice of `[batch, features]`
//! arrays (or graph nodes), one per frame.

use std::path::Path;

use crate::ad::{Array, Axis, Checkpoint, Graph, NodeId, ParameterStore, RandomSource};
use crate::error::{Error, Result};
use crate::motion::{ExtrinsicFactor, MotionSequence, EMBED_DIM, R_DIM};
use crate::nets::{run_bidirectional, run_sequence, LstmSpec, MlpSpec};
use crate::pose::PoseAae;
use crate::scalar::Scalar;

pub const GEN_PREFIX: &str = "gen.";
pub const ENC_PREFIX: &str = "gen.enc";
pub const DISC_PREFIX: &str = "disc.";
pub const CRITIC_PREFIX: &str = "critic.";
const META: &str = "meta.gan.";

/// Names under `gen.` that belong to the decoder side (everything except
/// the encoder LSTM).
pub fn is_decoder_param(name: &str) -> bool {
    name.starts_with(GEN_PREFIX) && !name.starts_with(ENC_PREFIX)
}

pub fn is_encoder_param(name: &str) -> bool {
    name.starts_with(ENC_PREFIX)
}

/// Bidirectional LSTM over a sequence, read out at four boundary-aligned
/// hidden states and passed through a one-hidden-layer perceptron.
#[derive(Clone, Debug, PartialEq)]
pub struct BiBody {
    pub prefix: String,
    pub input_dim: usize,
    pub hidden: usize,
    pub head_hidden: usize,
    pub out_dim: usize,
    pub past_len: usize,
    pub tau: usize,
}

impl BiBody {
    pub fn fwd(&self) -> LstmSpec {
        LstmSpec::new(format!("{}.fwd", self.prefix), self.input_dim, self.hidden)
    }

    pub fn bwd(&self) -> LstmSpec {
        LstmSpec::new(format!("{}.bwd", self.prefix), self.input_dim, self.hidden)
    }

    pub fn head(&self) -> MlpSpec {
        MlpSpec::new(format!("{}.head", self.prefix), vec![4 * self.hidden, self.head_hidden, self.out_dim])
    }

    pub fn init<S: Scalar>(&self, store: &mut ParameterStore<S>, rng: &mut RandomSource) -> Result<()> {
        self.fwd().init(store, rng)?;
        self.bwd().init(store, rng)?;
        self.head().init(store, rng)
    }

    /// 0-based frame indices of the readout for a sequence of `len`
    /// frames: forward at `T+tau-1` and `len-1`, backward at `T-2-tau`
    /// and `0`.
    pub fn readout_indices(&self, len: usize) -> Result<[usize; 4]> {
        let (t, tau) = (self.past_len, self.tau);
        if t < tau + 2 {
            return Err(Error::Invalid(format!("past length {t} too short for tau {tau}")));
        }
        if len < t + tau + 1 {
            return Err(Error::Invalid(format!(
                "`{}` needs at least {} frames, got {len}",
                self.prefix,
                t + tau + 1
            )));
        }
        Ok([t + tau - 1, len - 1, t - 2 - tau, 0])
    }

    /// Linear head output `[batch, out_dim]`.
    pub fn forward<S: Scalar>(&self, g: &mut Graph<S>, store: &ParameterStore<S>, seq: &[NodeId]) -> Result<NodeId> {
        let [f1, f2, b1, b2] = self.readout_indices(seq.len())?;
        let (hf, hb) = run_bidirectional(g, store, &self.fwd(), &self.bwd(), seq)?;
        let cat = g.concat(&[hf[f1], hf[f2], hb[b1], hb[b2]], Axis::Cols)?;
        self.head().forward(g, store, cat)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GanSpec {
    pub embed_dim: usize,
    pub r_dim: usize,
    pub enc_hidden: usize,
    pub dec_hidden: usize,
    pub disc_hidden: usize,
    pub head_hidden: usize,
    pub past_len: usize,
    pub pred_len: usize,
    pub tau: usize,
    /// Drop the encoder state from the decoder's per-step input.
    pub no_encoder_chaining: bool,
}

impl Default for GanSpec {
    fn default() -> Self {
        Self {
            embed_dim: EMBED_DIM,
            r_dim: R_DIM,
            enc_hidden: 512,
            dec_hidden: 512,
            disc_hidden: 512,
            head_hidden: 256,
            past_len: 50,
            pred_len: 25,
            tau: 1,
            no_encoder_chaining: false,
        }
    }
}

impl GanSpec {
    pub fn validate(&self) -> Result<()> {
        let dims = [
            self.embed_dim,
            self.r_dim,
            self.enc_hidden,
            self.dec_hidden,
            self.disc_hidden,
            self.head_hidden,
            self.past_len,
            self.pred_len,
        ];
        if dims.contains(&0) {
            return Err(Error::Config("network dims and lengths must be positive".into()));
        }
        if self.tau >= self.pred_len {
            return Err(Error::Config(format!("tau {} must be < pred_len {}", self.tau, self.pred_len)));
        }
        if self.past_len < self.tau + 2 {
            return Err(Error::Config(format!(
                "past_len {} must be >= tau + 2 for the backward readout",
                self.past_len
            )));
        }
        Ok(())
    }

    pub fn encoder(&self) -> LstmSpec {
        LstmSpec::new(ENC_PREFIX, self.embed_dim, self.enc_hidden)
    }

    pub fn decoder_input_dim(&self) -> usize {
        let base = self.r_dim + self.embed_dim;
        if self.no_encoder_chaining {
            base
        } else {
            base + self.enc_hidden
        }
    }

    pub fn decoder(&self) -> LstmSpec {
        LstmSpec::new("gen.dec", self.decoder_input_dim(), self.dec_hidden)
    }

    pub fn discriminator(&self) -> BiBody {
        self.body("disc", 1 + self.r_dim)
    }

    pub fn critic(&self) -> BiBody {
        self.body("critic", 1)
    }

    pub fn body(&self, prefix: &str, out_dim: usize) -> BiBody {
        BiBody {
            prefix: prefix.to_string(),
            input_dim: self.embed_dim,
            hidden: self.disc_hidden,
            head_hidden: self.head_hidden,
            out_dim,
            past_len: self.past_len,
            tau: self.tau,
        }
    }

    pub fn init_generator<S: Scalar>(&self, store: &mut ParameterStore<S>, rng: &mut RandomSource) -> Result<()> {
        self.encoder().init(store, rng)?;
        self.decoder().init(store, rng)?;
        let cond = self.enc_hidden + self.r_dim;
        for p in ["gen.init_h", "gen.init_c"] {
            store.init_uniform(&format!("{p}.w"), vec![cond, self.dec_hidden], cond, rng)?;
            store.init_filled(&format!("{p}.b"), vec![self.dec_hidden], 0.0)?;
        }
        store.init_filled("gen.readout.w", vec![self.dec_hidden, self.embed_dim], 0.0)?;
        store.init_filled("gen.readout.b", vec![self.embed_dim], 0.0)?;
        Ok(())
    }

    fn meta(&self) -> Vec<(&'static str, usize)> {
        vec![
            ("embed_dim", self.embed_dim),
            ("r_dim", self.r_dim),
            ("enc_hidden", self.enc_hidden),
            ("dec_hidden", self.dec_hidden),
            ("disc_hidden", self.disc_hidden),
            ("head_hidden", self.head_hidden),
            ("past_len", self.past_len),
            ("pred_len", self.pred_len),
            ("tau", self.tau),
            ("no_encoder_chaining", self.no_encoder_chaining as usize),
        ]
    }

    fn from_checkpoint<S: Scalar>(ck: &Checkpoint<S>) -> Result<Self> {
        let get = |k: &str| -> Result<usize> { Ok(ck.get_scalar(&format!("{META}{k}"))? as usize) };
        let spec = Self {
            embed_dim: get("embed_dim")?,
            r_dim: get("r_dim")?,
            enc_hidden: get("enc_hidden")?,
            dec_hidden: get("dec_hidden")?,
            disc_hidden: get("disc_hidden")?,
            head_hidden: get("head_hidden")?,
            past_len: get("past_len")?,
            pred_len: get("pred_len")?,
            tau: get("tau")?,
            no_encoder_chaining: get("no_encoder_chaining")? != 0,
        };
        spec.validate()?;
        Ok(spec)
    }
}

/// `h^enc_T`: final hidden state of the encoder over `z_seq`.
pub fn encode_sequence<S: Scalar>(
    g: &mut Graph<S>,
    store: &ParameterStore<S>,
    spec: &GanSpec,
    z_seq: &[NodeId],
) -> Result<NodeId> {
    Ok(run_sequence(g, store, &spec.encoder(), z_seq, None)?.last_hidden())
}

/// Residual rollout `z_t = z_{t-1} + readout(h^dec_t)` starting from
/// `z_last`, with the decoder state initialised from `(h, r)`.
pub fn decode_sequence<S: Scalar>(
    g: &mut Graph<S>,
    store: &ParameterStore<S>,
    spec: &GanSpec,
    h: NodeId,
    r: NodeId,
    z_last: NodeId,
    len: usize,
) -> Result<Vec<NodeId>> {
    if len == 0 {
        return Err(Error::Invalid("decode length must be >= 1".into()));
    }
    let cell = spec.decoder();
    let hr = g.concat(&[h, r], Axis::Cols)?;
    let mut state = Vec::with_capacity(2);
    for p in ["gen.init_h", "gen.init_c"] {
        let w = store.bind(g, &format!("{p}.w"))?;
        let b = store.bind(g, &format!("{p}.b"))?;
        state.push(g.affine(hr, w, b)?);
    }
    let (mut hd, mut cd) = (state[0], state[1]);
    let rw = store.bind(g, "gen.readout.w")?;
    let rb = store.bind(g, "gen.readout.b")?;
    let mut z = z_last;
    let mut out = Vec::with_capacity(len);
    for _ in 0..len {
        let x = if spec.no_encoder_chaining {
            g.concat(&[r, z], Axis::Cols)?
        } else {
            g.concat(&[h, r, z], Axis::Cols)?
        };
        (hd, cd) = cell.step(g, store, x, hd, cd)?;
        let dz = g.affine(hd, rw, rb)?;
        z = g.add(z, dz)?;
        out.push(z);
    }
    Ok(out)
}

/// How frames enter and leave the embedding space.
#[derive(Clone, Debug, PartialEq)]
pub enum PoseMap<S> {
    Learned(PoseAae<S>),
    /// Frames are used directly (ablation without pose embedding).
    Identity,
}

impl<S: Scalar> PoseMap<S> {
    pub fn embed_dim(&self, pose_dim: usize) -> usize {
        match self {
            PoseMap::Learned(a) => a.spec.embed_dim,
            PoseMap::Identity => pose_dim,
        }
    }

    pub fn embed(&self, x: &Array<S>) -> Result<Array<S>> {
        match self {
            PoseMap::Learned(a) => a.encode(x),
            PoseMap::Identity => Ok(x.clone()),
        }
    }

    pub fn decode(&self, z: &Array<S>) -> Result<Array<S>> {
        match self {
            PoseMap::Learned(a) => a.decode(z),
            PoseMap::Identity => Ok(z.clone()),
        }
    }

    /// Decoder applied inside a graph with pose weights frozen.
    pub fn decode_node(&self, g: &mut Graph<S>, z: NodeId) -> Result<NodeId> {
        match self {
            PoseMap::Learned(a) => {
                g.freeze("pose.");
                a.decode_node(g, z)
            }
            PoseMap::Identity => Ok(z),
        }
    }

    pub fn store(&self) -> Option<&ParameterStore<S>> {
        match self {
            PoseMap::Learned(a) => Some(&a.store),
            PoseMap::Identity => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DiscriminatorOutput<S> {
    pub wgan_score: S,
    pub r_hat: Vec<S>,
}

/// Generator, discriminator and critic parameters plus the frozen pose map.
#[derive(Clone, Debug, PartialEq)]
pub struct GanModel<S> {
    pub spec: GanSpec,
    pub store: ParameterStore<S>,
    pub pose: PoseMap<S>,
    pub pose_dim: usize,
}

fn frames_to_steps<S: Scalar>(x: &Array<S>) -> Result<Vec<Array<S>>> {
    let d = x.cols();
    (0..x.rows()).map(|t| Array::new(vec![1, d], x.row(t).to_vec())).collect()
}

impl<S: Scalar> GanModel<S> {
    pub fn new(spec: GanSpec, pose: PoseMap<S>, pose_dim: usize, rng: &mut RandomSource) -> Result<Self> {
        spec.validate()?;
        let want = pose.embed_dim(pose_dim);
        if want != spec.embed_dim {
            return Err(Error::Incompatible(format!(
                "pose map yields {want}-dim codes, generator expects {}",
                spec.embed_dim
            )));
        }
        if let PoseMap::Learned(a) = &pose {
            if a.spec.pose_dim != pose_dim {
                return Err(Error::Incompatible(format!(
                    "pose networks take {} channels, data has {pose_dim}",
                    a.spec.pose_dim
                )));
            }
        }
        let mut store = ParameterStore::new();
        spec.init_generator(&mut store, &mut rng.fork("gen"))?;
        spec.discriminator().init(&mut store, &mut rng.fork("disc"))?;
        spec.critic().init(&mut store, &mut rng.fork("critic"))?;
        Ok(Self {
            spec,
            store,
            pose,
            pose_dim,
        })
    }

    /// Embeds time-major frame batches.
    pub fn embed_steps(&self, steps: &[Array<S>]) -> Result<Vec<Array<S>>> {
        steps.iter().map(|x| self.pose.embed(x)).collect()
    }

    /// Embeddings of `len` predicted frames for time-major `past_z`.
    pub fn rollout(&self, past_z: &[Array<S>], r: &Array<S>, len: usize) -> Result<Vec<Array<S>>> {
        let mut g = Graph::new();
        let ids: Vec<NodeId> = past_z.iter().map(|z| g.constant(z.clone())).collect();
        let last = *ids.last().ok_or_else(|| Error::Invalid("empty past".into()))?;
        let h = encode_sequence(&mut g, &self.store, &self.spec, &ids)?;
        let ri = g.constant(r.clone());
        let out = decode_sequence(&mut g, &self.store, &self.spec, h, ri, last, len)?;
        Ok(out.iter().map(|&z| g.value(z).clone()).collect())
    }

    fn check_past(&self, n: usize) -> Result<()> {
        if n != self.spec.past_len {
            return Err(Error::Invalid(format!(
                "past has {n} frames, model expects {}",
                self.spec.past_len
            )));
        }
        Ok(())
    }

    /// Predicted frames (wrapped) for a batch of pasts and one `r` row
    /// per item.
    pub fn predict_steps(&self, past: &[Array<S>], r: &Array<S>, len: usize) -> Result<Vec<Array<S>>> {
        self.check_past(past.len())?;
        let z = self.rollout(&self.embed_steps(past)?, r, len)?;
        z.iter()
            .map(|z| Ok(self.pose.decode(z)?.map(crate::motion::wrap_angle)))
            .collect()
    }

    pub fn predict_motion(&self, past: &MotionSequence<S>, r: &ExtrinsicFactor<S>) -> Result<MotionSequence<S>> {
        if r.dim() != self.spec.r_dim {
            return Err(Error::Invalid(format!("r has {} values, expected {}", r.dim(), self.spec.r_dim)));
        }
        let steps = frames_to_steps(past.frames())?;
        let out = self.predict_steps(&steps, &r.to_row(), self.spec.pred_len)?;
        crate::data::unstack_item(&out, 0, past.label.clone())
    }

    /// Batched prediction for one past under many `r` rows.
    pub fn predict_many(&self, past: &MotionSequence<S>, rs: &Array<S>) -> Result<Vec<MotionSequence<S>>> {
        let n = rs.rows();
        let d = past.dim();
        let steps: Vec<Array<S>> = (0..past.len())
            .map(|t| Array::new(vec![n, d], past.frame(t).repeat(n)))
            .collect::<Result<_>>()?;
        let out = self.predict_steps(&steps, rs, self.spec.pred_len)?;
        (0..n).map(|b| crate::data::unstack_item(&out, b, past.label.clone())).collect()
    }

    fn body_values(&self, body: &BiBody, full: &[Array<S>]) -> Result<Array<S>> {
        let mut g = Graph::new();
        let ids: Vec<NodeId> = full.iter().map(|z| g.constant(z.clone())).collect();
        let out = body.forward(&mut g, &self.store, &ids)?;
        Ok(g.value(out).clone())
    }

    /// `[batch, 1 + r_dim]` raw discriminator output on embedded frames.
    pub fn discriminator_values(&self, full: &[Array<S>]) -> Result<Array<S>> {
        self.body_values(&self.spec.discriminator(), &self.embed_steps(full)?)
    }

    /// `r'` from already embedded frames.
    pub fn infer_r_embedded(&self, full_z: &[Array<S>]) -> Result<Array<S>> {
        let out = self.body_values(&self.spec.discriminator(), full_z)?;
        let (b, r) = (out.rows(), self.spec.r_dim);
        let values = (0..b).flat_map(|i| out.row(i)[1..].to_vec()).collect();
        Array::new(vec![b, r], values)
    }

    /// `r' = DISC_r(past || future)` for time-major frame batches.
    pub fn infer_r(&self, past: &[Array<S>], future: &[Array<S>]) -> Result<Array<S>> {
        let full: Vec<Array<S>> = past.iter().chain(future).cloned().collect();
        let out = self.discriminator_values(&full)?;
        let (b, r) = (out.rows(), self.spec.r_dim);
        let values = (0..b).flat_map(|i| out.row(i)[1..].to_vec()).collect();
        Array::new(vec![b, r], values)
    }

    pub fn discriminator_forward(&self, full: &MotionSequence<S>) -> Result<DiscriminatorOutput<S>> {
        let out = self.discriminator_values(&frames_to_steps(full.frames())?)?;
        Ok(DiscriminatorOutput {
            wgan_score: out.values()[0],
            r_hat: out.values()[1..].to_vec(),
        })
    }

    /// Critic probabilities that each batch item is real.
    pub fn critic_values(&self, full: &[Array<S>]) -> Result<Vec<f64>> {
        let logits = self.body_values(&self.spec.critic(), &self.embed_steps(full)?)?;
        Ok(logits.values().iter().map(|&l| 1.0 / (1.0 + (-l.as_f64()).exp())).collect())
    }

    pub fn critic_forward(&self, full: &MotionSequence<S>) -> Result<f64> {
        Ok(self.critic_values(&frames_to_steps(full.frames())?)?[0])
    }

    pub fn to_checkpoint(&self) -> Result<Checkpoint<S>> {
        let mut ck = Checkpoint::new();
        for (k, v) in self.store.iter() {
            ck.insert(k, v.clone())?;
        }
        if let Some(p) = self.pose.store() {
            for (k, v) in p.iter() {
                ck.insert(k, v.clone())?;
            }
        }
        for (k, v) in self.spec.meta() {
            ck.insert(format!("{META}{k}"), Array::scalar(S::of(v as f64)))?;
        }
        ck.insert(format!("{META}pose_dim"), Array::scalar(S::of(self.pose_dim as f64)))?;
        Ok(ck)
    }

    pub fn from_checkpoint(ck: &Checkpoint<S>) -> Result<Self> {
        let spec = GanSpec::from_checkpoint(ck)?;
        let pose_dim = ck.get_scalar(&format!("{META}pose_dim"))? as usize;
        let all: ParameterStore<S> = ck.entries.iter().map(|(k, v)| (k.clone(), v.clone())).collect();
        let pose = if all.contains("pose.en.l0.w") {
            PoseMap::Learned(PoseAae::from_store(all.subset("pose."))?)
        } else {
            PoseMap::Identity
        };
        let mut store = ParameterStore::new();
        for p in [GEN_PREFIX, DISC_PREFIX, CRITIC_PREFIX] {
            store.extend(&all.subset(p));
        }
        let model = Self {
            spec,
            store,
            pose,
            pose_dim,
        };
        let mut fresh = GanModel::new(model.spec.clone(), model.pose.clone(), pose_dim, &mut RandomSource::new(0))?;
        for (k, v) in fresh.store.iter() {
            let got = model.store.get(k).map_err(|_| Error::Incompatible(format!("checkpoint lacks `{k}`")))?;
            if got.dims() != v.dims() {
                return Err(Error::Incompatible(format!("`{k}` has dims {:?}, expected {:?}", got.dims(), v.dims())));
            }
        }
        fresh.store = model.store;
        Ok(fresh)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_checkpoint()?.save(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_checkpoint(&Checkpoint::load(path)?)
    }
}

use crate::ad::{Array, Axis, Graph, NodeId, ParameterStore, RandomSource};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Single-layer LSTM cell.
///
/// One fused weight `[input_dim + hidden_dim, 4 * hidden_dim]` acting on
/// `concat(x, h)`; gate column blocks are ordered input, forget, candidate,
/// output.
#[derive(Clone, Debug, PartialEq)]
pub struct LstmSpec {
    pub prefix: String,
    pub input_dim: usize,
    pub hidden_dim: usize,
}

/// Hidden states of every step plus the final `(h, c)`.
#[derive(Clone, Debug)]
pub struct SequenceRun {
    pub hiddens: Vec<NodeId>,
    pub final_cell: NodeId,
}

impl SequenceRun {
    pub fn last_hidden(&self) -> NodeId {
        *self.hiddens.last().expect("nonempty run")
    }
}

pub fn zero_state<S: Scalar>(g: &mut Graph<S>, batch: usize, hidden: usize) -> Result<NodeId> {
    Ok(g.constant(Array::zeros(vec![batch, hidden])?))
}

impl LstmSpec {
    pub fn new(prefix: impl Into<String>, input_dim: usize, hidden_dim: usize) -> Self {
        Self {
            prefix: prefix.into(),
            input_dim,
            hidden_dim,
        }
    }

    pub fn weight_name(&self) -> String {
        format!("{}.w", self.prefix)
    }

    pub fn bias_name(&self) -> String {
        format!("{}.b", self.prefix)
    }

    /// Uniform weights, zero biases except the forget gate at 1.
    pub fn init<S: Scalar>(&self, store: &mut ParameterStore<S>, rng: &mut RandomSource) -> Result<()> {
        let (i, h) = (self.input_dim, self.hidden_dim);
        if i == 0 || h == 0 {
            return Err(Error::Invalid(format!("lstm `{}` with zero dims", self.prefix)));
        }
        store.init_uniform(&self.weight_name(), vec![i + h, 4 * h], i + h, rng)?;
        let mut b = vec![S::zero(); 4 * h];
        b[h..2 * h].iter_mut().for_each(|v| *v = S::one());
        store.insert(self.bias_name(), Array::new(vec![4 * h], b)?);
        Ok(())
    }

    /// One cell update: `c' = s(f) c + s(i) tanh(g)`, `h' = s(o) tanh(c')`.
    pub fn step<S: Scalar>(
        &self,
        g: &mut Graph<S>,
        store: &ParameterStore<S>,
        x: NodeId,
        h: NodeId,
        c: NodeId,
    ) -> Result<(NodeId, NodeId)> {
        let hd = self.hidden_dim;
        for (what, id, want) in [("input", x, self.input_dim), ("hidden", h, hd), ("cell", c, hd)] {
            let cols = g.value(id).cols();
            if cols != want {
                return Err(Error::Invalid(format!(
                    "lstm `{}`: {what} has {cols} features, expected {want}",
                    self.prefix
                )));
            }
        }
        let w = store.bind(g, &self.weight_name())?;
        let b = store.bind(g, &self.bias_name())?;
        let xh = g.concat(&[x, h], Axis::Cols)?;
        let z = g.affine(xh, w, b)?;
        let zi = g.slice(z, Axis::Cols, 0, hd)?;
        let zf = g.slice(z, Axis::Cols, hd, hd)?;
        let zg = g.slice(z, Axis::Cols, 2 * hd, hd)?;
        let zo = g.slice(z, Axis::Cols, 3 * hd, hd)?;
        let i = g.sigmoid(zi)?;
        let f = g.sigmoid(zf)?;
        let cand = g.tanh(zg)?;
        let o = g.sigmoid(zo)?;
        let fc = g.mul(f, c)?;
        let ic = g.mul(i, cand)?;
        let c_next = g.add(fc, ic)?;
        let tc = g.tanh(c_next)?;
        let h_next = g.mul(o, tc)?;
        Ok((h_next, c_next))
    }
}

/// Unrolls `spec` over `seq` from `(h0, c0)` (zeros when `None`).
pub fn run_sequence<S: Scalar>(
    g: &mut Graph<S>,
    store: &ParameterStore<S>,
    spec: &LstmSpec,
    seq: &[NodeId],
    init: Option<(NodeId, NodeId)>,
) -> Result<SequenceRun> {
    let first = *seq
        .first()
        .ok_or_else(|| Error::Invalid(format!("lstm `{}`: empty sequence", spec.prefix)))?;
    let (mut h, mut c) = match init {
        Some(state) => state,
        None => {
            let batch = g.value(first).rows();
            (
                zero_state(g, batch, spec.hidden_dim)?,
                zero_state(g, batch, spec.hidden_dim)?,
            )
        }
    };
    let mut hiddens = Vec::with_capacity(seq.len());
    for &x in seq {
        (h, c) = spec.step(g, store, x, h, c)?;
        hiddens.push(h);
    }
    Ok(SequenceRun {
        hiddens,
        final_cell: c,
    })
}

/// Forward pass over `seq` and a second pass over the reversed sequence.
///
/// Backward hiddens are re-indexed to original time: entry `t` is the state
/// after the backward cell has consumed frames `n-1, ..., t`, so entry `0`
/// is the backward direction's final state.
pub fn run_bidirectional<S: Scalar>(
    g: &mut Graph<S>,
    store: &ParameterStore<S>,
    fwd: &LstmSpec,
    bwd: &LstmSpec,
    seq: &[NodeId],
) -> Result<(Vec<NodeId>, Vec<NodeId>)> {
    let forward = run_sequence(g, store, fwd, seq, None)?;
    let reversed: Vec<NodeId> = seq.iter().rev().copied().collect();
    let backward = run_sequence(g, store, bwd, &reversed, None)?;
    let mut back = backward.hiddens;
    back.reverse();
    Ok((forward.hiddens, back))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sig(x: f64) -> f64 {
        1.0 / (1.0 + (-x).exp())
    }

    /// Hand evaluation of one cell step with explicit weights.
    fn hand_step(w: &[f64], b: &[f64], i_dim: usize, h_dim: usize, x: &[f64], h: &[f64], c: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let xh: Vec<f64> = x.iter().chain(h).copied().collect();
        let z: Vec<f64> = (0..4 * h_dim)
            .map(|j| b[j] + (0..i_dim + h_dim).map(|k| xh[k] * w[k * 4 * h_dim + j]).sum::<f64>())
            .collect();
        let mut hn = vec![0.0; h_dim];
        let mut cn = vec![0.0; h_dim];
        for u in 0..h_dim {
            let (ig, fg, gg, og) = (sig(z[u]), sig(z[h_dim + u]), z[2 * h_dim + u].tanh(), sig(z[3 * h_dim + u]));
            cn[u] = fg * c[u] + ig * gg;
            hn[u] = og * cn[u].tanh();
        }
        (hn, cn)
    }

    fn toy(i_dim: usize, h_dim: usize, seed: u64) -> (LstmSpec, ParameterStore<f64>) {
        let spec = LstmSpec::new("cell", i_dim, h_dim);
        let mut store = ParameterStore::new();
        spec.init(&mut store, &mut RandomSource::new(seed)).unwrap();
        (spec, store)
    }

    fn zeroed(spec: &LstmSpec, store: &mut ParameterStore<f64>) {
        for n in [spec.weight_name(), spec.bias_name()] {
            store.get_mut(&n).unwrap().values_mut().iter_mut().for_each(|v| *v = 0.0);
        }
    }

    fn row(g: &mut Graph<f64>, v: &[f64]) -> NodeId {
        g.constant(Array::from_rows(&[v.to_vec()]).unwrap())
    }

    #[test]
    fn zero_network_from_zero_state() {
        let (spec, mut store) = toy(3, 2, 0);
        zeroed(&spec, &mut store);
        let mut g = Graph::new();
        let x = row(&mut g, &[0.3, -2.0, 5.0]);
        let h = row(&mut g, &[0.0, 0.0]);
        let c = row(&mut g, &[0.0, 0.0]);
        let (h2, c2) = spec.step(&mut g, &store, x, h, c).unwrap();
        assert_eq!(g.value(h2).values(), &[0.0, 0.0]);
        assert_eq!(g.value(c2).values(), &[0.0, 0.0]);
    }

    #[test]
    fn zero_network_with_unit_cell() {
        let (spec, mut store) = toy(1, 1, 0);
        zeroed(&spec, &mut store);
        let mut g = Graph::new();
        let x = row(&mut g, &[0.7]);
        let h = row(&mut g, &[0.0]);
        let c = row(&mut g, &[1.0]);
        let (h2, c2) = spec.step(&mut g, &store, x, h, c).unwrap();
        assert_eq!(g.value(c2).values(), &[0.5]);
        let hv = g.value(h2).values()[0];
        assert!((hv - 0.5 * 0.5f64.tanh()).abs() < 1e-15);
        assert!((hv - 0.2311).abs() < 1e-4);
    }

    #[test]
    fn forget_bias_starts_at_one() {
        let (spec, store) = toy(2, 3, 1);
        let b = store.get(&spec.bias_name()).unwrap().values().to_vec();
        assert_eq!(b, vec![0.0, 0.0, 0.0, 1.0, 1.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn wide_hidden_state() {
        let (spec, store) = toy(4, 512, 2);
        let mut g = Graph::new();
        let x = row(&mut g, &[0.1, 0.2, 0.3, 0.4]);
        let run = run_sequence(&mut g, &store, &spec, &[x], None).unwrap();
        assert_eq!(g.value(run.last_hidden()).len(), 512);
    }

    #[test]
    fn three_steps_match_chained_hand_oracle() {
        let (spec, store) = toy(2, 3, 9);
        let w = store.get(&spec.weight_name()).unwrap().values().to_vec();
        let b = store.get(&spec.bias_name()).unwrap().values().to_vec();
        let xs = [[0.5, -0.1], [1.2, 0.3], [-0.8, 0.9]];
        let mut g = Graph::new();
        let ids: Vec<NodeId> = xs.iter().map(|x| row(&mut g, x)).collect();
        let run = run_sequence(&mut g, &store, &spec, &ids, None).unwrap();
        let (mut h, mut c) = (vec![0.0; 3], vec![0.0; 3]);
        for (t, x) in xs.iter().enumerate() {
            (h, c) = hand_step(&w, &b, 2, 3, x, &h, &c);
            let got = g.value(run.hiddens[t]).values();
            for (a, e) in got.iter().zip(&h) {
                assert!((a - e).abs() < 1e-12);
            }
        }
        let cf = g.value(run.final_cell).values();
        for (a, e) in cf.iter().zip(&c) {
            assert!((a - e).abs() < 1e-12);
        }
    }

    #[test]
    fn single_step_sequence_equals_step() {
        let (spec, store) = toy(2, 2, 4);
        let mut g = Graph::new();
        let x = row(&mut g, &[0.2, 0.4]);
        let run = run_sequence(&mut g, &store, &spec, &[x], None).unwrap();
        let h0 = row(&mut g, &[0.0, 0.0]);
        let c0 = row(&mut g, &[0.0, 0.0]);
        let (h, _) = spec.step(&mut g, &store, x, h0, c0).unwrap();
        assert_eq!(g.value(run.hiddens[0]), g.value(h));
    }

    #[test]
    fn empty_sequence_fails() {
        let (spec, store) = toy(2, 2, 4);
        let mut g = Graph::<f64>::new();
        assert!(run_sequence(&mut g, &store, &spec, &[], None).is_err());
    }

    #[test]
    fn palindrome_with_shared_weights_is_symmetric() {
        let (spec, store) = toy(2, 3, 5);
        let xs = [[0.1, 0.2], [0.9, -0.4], [0.5, 0.5], [0.9, -0.4], [0.1, 0.2]];
        let mut g = Graph::new();
        let ids: Vec<NodeId> = xs.iter().map(|x| row(&mut g, x)).collect();
        let (f, b) = run_bidirectional(&mut g, &store, &spec, &spec, &ids).unwrap();
        assert_eq!(f.len(), 5);
        assert_eq!(b.len(), 5);
        for t in 0..5 {
            assert_eq!(g.value(f[t]), g.value(b[4 - t]));
        }
    }

    #[test]
    fn bidirectional_length_two_against_hand_oracle() {
        let (fs, mut store) = toy(2, 2, 6);
        let bs = LstmSpec::new("back", 2, 2);
        bs.init(&mut store, &mut RandomSource::new(7)).unwrap();
        let wf = store.get(&fs.weight_name()).unwrap().values().to_vec();
        let bf = store.get(&fs.bias_name()).unwrap().values().to_vec();
        let wb = store.get(&bs.weight_name()).unwrap().values().to_vec();
        let bb = store.get(&bs.bias_name()).unwrap().values().to_vec();
        let xs = [[0.3, -0.6], [1.1, 0.2]];
        let mut g = Graph::new();
        let ids: Vec<NodeId> = xs.iter().map(|x| row(&mut g, x)).collect();
        let (f, b) = run_bidirectional(&mut g, &store, &fs, &bs, &ids).unwrap();
        let z = vec![0.0; 2];
        let (f1, cf1) = hand_step(&wf, &bf, 2, 2, &xs[0], &z, &z);
        let (f2, _) = hand_step(&wf, &bf, 2, 2, &xs[1], &f1, &cf1);
        let (b2, cb2) = hand_step(&wb, &bb, 2, 2, &xs[1], &z, &z);
        let (b1, _) = hand_step(&wb, &bb, 2, 2, &xs[0], &b2, &cb2);
        let close = |id: NodeId, e: &[f64]| {
            g.value(id).values().iter().zip(e).all(|(a, e)| (a - e).abs() < 1e-12)
        };
        assert!(close(f[0], &f1) && close(f[1], &f2));
        assert!(close(b[0], &b1) && close(b[1], &b2));
    }

    #[test]
    fn f32_cell_runs() {
        let spec = LstmSpec::new("c32", 2, 3);
        let mut store = ParameterStore::<f32>::new();
        spec.init(&mut store, &mut RandomSource::new(1)).unwrap();
        let mut g = Graph::<f32>::new();
        let x = g.constant(Array::from_rows(&[vec![0.5f32, -0.5]]).unwrap());
        let run = run_sequence(&mut g, &store, &spec, &[x, x], None).unwrap();
        assert!(g.value(run.last_hidden()).all_finite());
    }
}

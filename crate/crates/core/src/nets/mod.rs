//! Neural building blocks expressed as graph recordings.
//!
//! Every value flowing through these blocks is a `[batch, features]` node;
//! a sequence is a `Vec` of such nodes in time order.

mod lstm;
mod mlp;

pub use lstm::{run_bidirectional, run_sequence, zero_state, LstmSpec, SequenceRun};
pub use mlp::{Activation, MlpSpec};

#[cfg(test)]
mod props {
    use super::*;
    use crate::ad::gradcheck::check_gradients;
    use crate::ad::{Array, Graph, NodeId, ParameterStore, RandomSource};
    use proptest::prelude::*;

    fn rows(g: &mut Graph<f64>, rng: &mut RandomSource, n: usize, b: usize, d: usize) -> Vec<NodeId> {
        (0..n)
            .map(|t| {
                let v = rng.sample_normal(vec![b, d]).unwrap();
                g.input(&format!("x{t}"), v).unwrap()
            })
            .collect()
    }

    #[test]
    fn mlp_gradients_match_finite_differences() {
        let spec = MlpSpec::new("m", vec![4, 5, 3]).with_output(Activation::Sigmoid);
        let mut store = ParameterStore::new();
        let mut rng = RandomSource::new(11);
        spec.init(&mut store, &mut rng).unwrap();
        for name in [spec.bias_name(0), spec.bias_name(1)] {
            let dims = store.get(&name).unwrap().dims().to_vec();
            store.insert(name, rng.sample_normal(dims).unwrap());
        }
        let mut g = Graph::new();
        let x = rows(&mut g, &mut rng, 1, 3, 4)[0];
        let y = spec.forward(&mut g, &store, x).unwrap();
        let loss = g.mean(y).unwrap();
        let names: Vec<String> = store.names().map(str::to_string).collect();
        let mut wrt: Vec<&str> = names.iter().map(String::as_str).collect();
        wrt.push("x0");
        let report = check_gradients(&g, loss, &wrt, 1e-5, None).unwrap();
        assert!(report.max_rel_error < 1e-4, "{report:?}");
    }

    #[test]
    fn bidirectional_gradients_match_finite_differences() {
        let fwd = LstmSpec::new("f", 3, 4);
        let bwd = LstmSpec::new("b", 3, 4);
        let mut store = ParameterStore::new();
        let mut rng = RandomSource::new(5);
        fwd.init(&mut store, &mut rng).unwrap();
        bwd.init(&mut store, &mut rng).unwrap();
        let mut g = Graph::new();
        let seq = rows(&mut g, &mut rng, 4, 2, 3);
        let (hf, hb) = run_bidirectional(&mut g, &store, &fwd, &bwd, &seq).unwrap();
        let both = g.concat(&[hf[3], hb[0], hf[1], hb[2]], crate::ad::Axis::Cols).unwrap();
        let sq = g.square(both).unwrap();
        let loss = g.sum(sq).unwrap();
        let report = check_gradients(&g, loss, &["f.w", "f.b", "b.w", "b.b", "x0", "x3"], 1e-5, None).unwrap();
        assert!(report.max_rel_error < 1e-4, "{report:?}");
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn prefix_property(seed in 0u64..1000, n in 1usize..=10, k in 1usize..=10) {
            let k = k.min(n);
            let spec = LstmSpec::new("l", 2, 3);
            let mut store = ParameterStore::<f64>::new();
            let mut rng = RandomSource::new(seed);
            spec.init(&mut store, &mut rng).unwrap();
            let xs: Vec<Array<f64>> = (0..n).map(|_| rng.sample_normal(vec![1, 2]).unwrap()).collect();
            let run = |len: usize| {
                let mut g = Graph::new();
                let ids: Vec<NodeId> = xs[..len].iter().map(|x| g.constant(x.clone())).collect();
                let r = run_sequence(&mut g, &store, &spec, &ids, None).unwrap();
                r.hiddens.iter().map(|&h| g.value(h).clone()).collect::<Vec<_>>()
            };
            let full = run(n);
            let pre = run(k);
            prop_assert_eq!(&full[..k], &pre[..]);
        }

        #[test]
        fn cell_state_bound(seed in 0u64..1000, scale in 0.1f64..5.0) {
            let spec = LstmSpec::new("l", 3, 4);
            let mut store = ParameterStore::<f64>::new();
            let mut rng = RandomSource::new(seed);
            spec.init(&mut store, &mut rng).unwrap();
            let mut g = Graph::new();
            let x = g.constant(rng.sample_normal(vec![2, 3]).unwrap().map(|v| v * scale));
            let h = g.constant(rng.sample_normal(vec![2, 4]).unwrap().map(f64::tanh));
            let c0 = rng.sample_normal::<f64>(vec![2, 4]).unwrap().map(|v| v * scale);
            let c = g.constant(c0.clone());
            let (h1, c1) = spec.step(&mut g, &store, x, h, c).unwrap();
            for (a, b) in g.value(c1).values().iter().zip(c0.values()) {
                prop_assert!(a.abs() <= b.abs() + 1.0);
            }
            prop_assert!(g.value(h1).values().iter().all(|v| v.abs() < 1.0));
        }
    }
}

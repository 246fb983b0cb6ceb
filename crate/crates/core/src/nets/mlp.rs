use crate::ad::{Array, Graph, NodeId, ParameterStore, RandomSource};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Identity,
    Tanh,
    Sigmoid,
}

impl Activation {
    fn apply<S: Scalar>(self, g: &mut Graph<S>, x: NodeId) -> Result<NodeId> {
        match self {
            Activation::Identity => Ok(x),
            Activation::Tanh => g.tanh(x),
            Activation::Sigmoid => g.sigmoid(x),
        }
    }
}

/// Fully connected stack: tanh on hidden layers, configurable output.
#[derive(Clone, Debug, PartialEq)]
pub struct MlpSpec {
    pub prefix: String,
    pub layer_dims: Vec<usize>,
    pub output: Activation,
}

impl MlpSpec {
    pub fn new(prefix: impl Into<String>, layer_dims: Vec<usize>) -> Self {
        Self {
            prefix: prefix.into(),
            layer_dims,
            output: Activation::Identity,
        }
    }

    pub fn with_output(mut self, output: Activation) -> Self {
        self.output = output;
        self
    }

    pub fn input_dim(&self) -> usize {
        self.layer_dims[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.layer_dims.last().expect("at least two layer dims")
    }

    pub fn num_layers(&self) -> usize {
        self.layer_dims.len() - 1
    }

    pub fn weight_name(&self, layer: usize) -> String {
        format!("{}.l{layer}.w", self.prefix)
    }

    pub fn bias_name(&self, layer: usize) -> String {
        format!("{}.l{layer}.b", self.prefix)
    }

    fn validate(&self) -> Result<()> {
        if self.layer_dims.len() < 2 || self.layer_dims.contains(&0) {
            return Err(Error::Invalid(format!(
                "mlp `{}` needs >= 2 positive layer dims, got {:?}",
                self.prefix, self.layer_dims
            )));
        }
        Ok(())
    }

    pub fn init<S: Scalar>(&self, store: &mut ParameterStore<S>, rng: &mut RandomSource) -> Result<()> {
        self.validate()?;
        for l in 0..self.num_layers() {
            let (i, o) = (self.layer_dims[l], self.layer_dims[l + 1]);
            store.init_uniform(&self.weight_name(l), vec![i, o], i, rng)?;
            store.init_filled(&self.bias_name(l), vec![o], 0.0)?;
        }
        Ok(())
    }

    /// Records the stack on `x: [batch, input_dim]`.
    pub fn forward<S: Scalar>(
        &self,
        g: &mut Graph<S>,
        store: &ParameterStore<S>,
        x: NodeId,
    ) -> Result<NodeId> {
        self.validate()?;
        let cols = g.value(x).cols();
        if cols != self.input_dim() {
            return Err(Error::Invalid(format!(
                "mlp `{}` expects {} inputs, got {cols}",
                self.prefix,
                self.input_dim()
            )));
        }
        let mut h = x;
        for l in 0..self.num_layers() {
            let w = store.bind(g, &self.weight_name(l))?;
            let b = store.bind(g, &self.bias_name(l))?;
            h = g.affine(h, w, b)?;
            let act = if l + 1 == self.num_layers() {
                self.output
            } else {
                Activation::Tanh
            };
            h = act.apply(g, h)?;
        }
        Ok(h)
    }

    /// Value-only evaluation outside any caller graph.
    pub fn apply<S: Scalar>(&self, store: &ParameterStore<S>, x: &Array<S>) -> Result<Array<S>> {
        let mut g = Graph::new();
        let xi = g.constant(x.clone());
        let y = self.forward(&mut g, store, xi)?;
        Ok(g.value(y).clone())
    }
}

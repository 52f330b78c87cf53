use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::ndcore::graph::{Activation, Graph, Var};
use crate::ndcore::matrix::Matrix;
use crate::ndcore::rng::Rng;

/// `activation(x · w + b)` recorded on `graph`.
pub fn dense_forward(graph: &mut Graph<'_>, x: Var, w: Var, b: Var, activation: Activation) -> Result<Var> {
    let z = graph.matmul(x, w)?;
    let z = graph.add_row(z, b)?;
    Ok(graph.activate(z, activation))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ActivationKind {
    Linear,
    Relu,
    Tanh,
}

impl From<ActivationKind> for Activation {
    fn from(k: ActivationKind) -> Self {
        match k {
            ActivationKind::Linear => Activation::Linear,
            ActivationKind::Relu => Activation::Relu,
            ActivationKind::Tanh => Activation::Tanh,
        }
    }
}

/// A fully connected layer. `weight` is `in × out`, `bias` is `1 × out`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    pub weight: Matrix,
    pub bias: Matrix,
    pub activation: ActivationKind,
}

impl Dense {
    /// Uniform weights on `±sqrt(gain / fan_in)`, zero bias. `gain` is 6 for
    /// relu layers and 3 otherwise, which keeps activations near unit scale.
    pub fn init(fan_in: usize, fan_out: usize, activation: ActivationKind, rng: &mut Rng) -> Self {
        let gain = match activation {
            ActivationKind::Relu => 6.0,
            _ => 3.0,
        };
        let limit = (gain / fan_in as f64).sqrt();
        let weight = Matrix::from_fn(fan_in, fan_out, |_, _| rng.uniform_range(-limit, limit));
        Self {
            weight,
            bias: Matrix::zeros(1, fan_out),
            activation,
        }
    }

    pub fn zeros(fan_in: usize, fan_out: usize, activation: ActivationKind) -> Self {
        Self {
            weight: Matrix::zeros(fan_in, fan_out),
            bias: Matrix::zeros(1, fan_out),
            activation,
        }
    }

    pub fn in_dim(&self) -> usize {
        self.weight.rows()
    }

    pub fn out_dim(&self) -> usize {
        self.weight.cols()
    }

    pub fn param_count(&self) -> usize {
        self.weight.len() + self.bias.len()
    }

    /// Records the layer with borrowed parameters; returns `(output, w, b)`.
    pub fn record<'a>(&'a self, graph: &mut Graph<'a>, x: Var) -> Result<(Var, Var, Var)> {
        let w = graph.param(&self.weight);
        let b = graph.param(&self.bias);
        let y = dense_forward(graph, x, w, b, self.activation.into())?;
        Ok((y, w, b))
    }
}

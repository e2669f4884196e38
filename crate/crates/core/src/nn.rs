//! Layers shared by the scorer and the refiner.

use rand::Rng;

use crate::params::{ParamGroup, ParamId, ParamStore};
use crate::scalar::Scalar;
use crate::tensor::{Graph, Tensor, TensorError, Var};

/// One-hidden-layer feed-forward map `relu(x·W1 + b1)·W2 + b2`, row-wise.
#[derive(Clone, Debug)]
pub struct Ffn {
    pub w1: ParamId,
    pub b1: ParamId,
    pub w2: ParamId,
    pub b2: ParamId,
}

impl Ffn {
    pub fn register<T: Scalar, R: Rng>(
        store: &mut ParamStore<T>,
        name: &str,
        group: ParamGroup,
        dims: (usize, usize, usize),
        rng: &mut R,
    ) -> Self {
        let (input, hidden, output) = dims;
        Ffn {
            w1: store.add(format!("{name}.w1"), group, Tensor::glorot(&[input, hidden], input, hidden, rng)),
            b1: store.add(format!("{name}.b1"), group, Tensor::zeros(&[hidden])),
            w2: store.add(format!("{name}.w2"), group, Tensor::glorot(&[hidden, output], hidden, output, rng)),
            b2: store.add(format!("{name}.b2"), group, Tensor::zeros(&[output])),
        }
    }

    pub fn apply<T: Scalar>(&self, g: &mut Graph<'_, T>, x: Var) -> Result<Var, TensorError> {
        let (w1, b1, w2, b2) = (g.param(self.w1), g.param(self.b1), g.param(self.w2), g.param(self.b2));
        let h = g.matmul(x, w1)?;
        let h = g.add_row(h, b1)?;
        let h = g.relu(h);
        let y = g.matmul(h, w2)?;
        g.add_row(y, b2)
    }
}

use ndarray::{Array2, ArrayView2, Axis};
use rand::Rng;

use super::param::{standard, Module, Param};

/// Affine map applied to the rows of a matrix. Also serves as a 1x1
/// convolution over channels-last feature grids.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    /// `(out, in)`.
    pub w: Param,
    /// `(1, out)`.
    pub b: Param,
}

impl Linear {
    pub fn new(input: usize, output: usize, rng: &mut impl Rng) -> Self {
        let bound = 1.0 / (input as f64).sqrt();
        Self {
            w: Param::uniform(output, input, bound, rng),
            b: Param::uniform(1, output, bound, rng),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.w.value.ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.w.value.nrows()
    }

    pub fn forward(&self, x: ArrayView2<f64>) -> Array2<f64> {
        standard(x.dot(&self.w.value.t()) + &self.b.value)
    }

    /// Accumulates parameter gradients and returns the input gradient.
    pub fn backward(&mut self, x: ArrayView2<f64>, dy: ArrayView2<f64>) -> Array2<f64> {
        self.w.grad += &dy.t().dot(&x);
        self.b.grad += &dy.sum_axis(Axis(0)).insert_axis(Axis(0));
        standard(dy.dot(&self.w.value))
    }
}

impl Module for Linear {
    fn visit(&self, f: &mut dyn FnMut(&str, &Param)) {
        f("w", &self.w);
        f("b", &self.b);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut Param)) {
        f("w", &mut self.w);
        f("b", &mut self.b);
    }
}

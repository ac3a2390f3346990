use ndarray::Array2;
use rand::Rng;

/// A trainable tensor and its accumulated gradient. Vectors (biases) are
/// stored as a single row.
#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub value: Array2<f64>,
    pub grad: Array2<f64>,
}

impl Param {
    pub fn new(value: Array2<f64>) -> Self {
        let grad = Array2::zeros(value.raw_dim());
        Self { value, grad }
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self::new(Array2::zeros((rows, cols)))
    }

    pub fn uniform(rows: usize, cols: usize, bound: f64, rng: &mut impl Rng) -> Self {
        Self::new(Array2::from_shape_simple_fn((rows, cols), || rng.random_range(-bound..=bound)))
    }

    pub fn len(&self) -> usize {
        self.value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.value.is_empty()
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(0.0);
    }
}

/// Anything owning named parameters. Names are dot-separated paths.
pub trait Module {
    fn visit(&self, f: &mut dyn FnMut(&str, &Param));
    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut Param));

    fn param_count(&self) -> usize {
        let mut n = 0;
        self.visit(&mut |_, p| n += p.len());
        n
    }

    fn zero_grad(&mut self) {
        self.visit_mut(&mut |_, p| p.zero_grad());
    }
}

/// Visits `m` with every name prefixed by `prefix.`.
pub fn visit_scoped(m: &dyn Module, prefix: &str, f: &mut dyn FnMut(&str, &Param)) {
    m.visit(&mut |n, p| f(&format!("{prefix}.{n}"), p));
}

pub fn visit_scoped_mut<M: Module + ?Sized>(m: &mut M, prefix: &str, f: &mut dyn FnMut(&str, &mut Param)) {
    m.visit_mut(&mut |n, p| f(&format!("{prefix}.{n}"), p));
}

impl<M: Module> Module for Vec<M> {
    fn visit(&self, f: &mut dyn FnMut(&str, &Param)) {
        for (i, m) in self.iter().enumerate() {
            visit_scoped(m, &i.to_string(), f);
        }
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut Param)) {
        for (i, m) in self.iter_mut().enumerate() {
            visit_scoped_mut(m, &i.to_string(), f);
        }
    }
}

impl<M: Module> Module for Option<M> {
    fn visit(&self, f: &mut dyn FnMut(&str, &Param)) {
        if let Some(m) = self {
            m.visit(f);
        }
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut Param)) {
        if let Some(m) = self {
            m.visit_mut(f);
        }
    }
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// `a` in row-major layout. Matrix products may come back column-major for
/// degenerate shapes, which reshaping cannot handle.
pub fn standard<D: ndarray::Dimension>(a: ndarray::Array<f64, D>) -> ndarray::Array<f64, D> {
    if a.is_standard_layout() {
        a
    } else {
        a.as_standard_layout().into_owned()
    }
}

//! Two-hidden-layer tanh MLP with hand-written reverse mode.
//!
//! Parameters live in one flat vector: `W1, b1, W2, b2, W3, b3`, each weight
//! matrix row-major `(out × in)`. Read column-major, the same slice is `Wᵀ`,
//! which is what the batched products below use.

use nalgebra::{DMatrix, DMatrixView, DMatrixViewMut, Matrix3, SMatrix};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::bingham::{birdal_fisher_jacobian, birdal_construct, BinghamParams, BirdalOutput};
use crate::error::{Error, Result};
use crate::ssl::config::HeadKind;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Shape {
    pub input: usize,
    pub hidden: usize,
    pub output: usize,
}

impl Shape {
    /// `(offset, rows, cols)` of the six blocks; weights are `(out, in)`.
    fn blocks(&self) -> [(usize, usize, usize); 6] {
        let dims = [
            (self.hidden, self.input),
            (self.hidden, 1),
            (self.hidden, self.hidden),
            (self.hidden, 1),
            (self.output, self.hidden),
            (self.output, 1),
        ];
        let mut off = 0;
        dims.map(|(r, c)| {
            let b = (off, r, c);
            off += r * c;
            b
        })
    }

    pub fn n_params(&self) -> usize {
        let (off, r, c) = self.blocks()[5];
        off + r * c
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Regressor {
    shape: Shape,
    head: HeadKind,
    params: Vec<f64>,
}

/// Activations kept for the backward pass.
#[derive(Clone, Debug)]
pub struct ForwardCache {
    input: DMatrix<f64>,
    a1: DMatrix<f64>,
    a2: DMatrix<f64>,
    pub output: DMatrix<f64>,
}

impl ForwardCache {
    pub fn batch_size(&self) -> usize {
        self.output.nrows()
    }

    pub fn row(&self, i: usize) -> Vec<f64> {
        self.output.row(i).iter().copied().collect()
    }
}

impl Regressor {
    pub fn zeros(shape: Shape, head: HeadKind) -> Result<Self> {
        if shape.output != head.outputs() {
            return Err(Error::Shape {
                expected: head.outputs(),
                got: shape.output,
            });
        }
        Ok(Regressor {
            shape,
            head,
            params: vec![0.0; shape.n_params()],
        })
    }

    /// Weights `N(0, 1/fan_in)`, zero biases. The output layer is scaled by
    /// `out_scale` so the initial prediction is close to uniform.
    pub fn init<R: Rng + ?Sized>(shape: Shape, head: HeadKind, out_scale: f64, rng: &mut R) -> Result<Self> {
        let mut reg = Self::zeros(shape, head)?;
        let blocks = shape.blocks();
        for (layer, &(off, rows, cols)) in blocks.iter().enumerate().filter(|(i, _)| i % 2 == 0) {
            let std = (1.0 / cols as f64).sqrt() * if layer == 4 { out_scale } else { 1.0 };
            for p in &mut reg.params[off..off + rows * cols] {
                let z: f64 = StandardNormal.sample(rng);
                *p = std * z;
            }
        }
        Ok(reg)
    }

    pub fn from_params(shape: Shape, head: HeadKind, params: Vec<f64>) -> Result<Self> {
        let mut reg = Self::zeros(shape, head)?;
        if params.len() != reg.params.len() {
            return Err(Error::Shape {
                expected: reg.params.len(),
                got: params.len(),
            });
        }
        if params.iter().any(|p| !p.is_finite()) {
            return Err(Error::NonFinite("regressor parameters".into()));
        }
        reg.params = params;
        Ok(reg)
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn head(&self) -> HeadKind {
        self.head
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    fn weight_t(&self, block: usize) -> DMatrixView<'_, f64> {
        let (off, rows, cols) = self.shape.blocks()[block];
        DMatrixView::from_slice(&self.params[off..off + rows * cols], cols, rows)
    }

    fn bias(&self, block: usize) -> &[f64] {
        let (off, rows, _) = self.shape.blocks()[block];
        &self.params[off..off + rows]
    }

    /// Batched forward; one sample per row of `x`.
    pub fn forward(&self, x: DMatrix<f64>) -> Result<ForwardCache> {
        if x.ncols() != self.shape.input {
            return Err(Error::Shape {
                expected: self.shape.input,
                got: x.ncols(),
            });
        }
        let layer = |a: &DMatrix<f64>, w: usize, b: usize| {
            let mut z = a * self.weight_t(w);
            for mut row in z.row_iter_mut() {
                for (v, bias) in row.iter_mut().zip(self.bias(b)) {
                    *v += bias;
                }
            }
            z
        };
        let a1 = layer(&x, 0, 1).map(f64::tanh);
        let a2 = layer(&a1, 2, 3).map(f64::tanh);
        let output = layer(&a2, 4, 5);
        if output.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("regressor output".into()));
        }
        Ok(ForwardCache {
            input: x,
            a1,
            a2,
            output,
        })
    }

    /// `∂L/∂params` from `∂L/∂output` (one row per sample).
    pub fn backward(&self, cache: &ForwardCache, upstream: &DMatrix<f64>) -> Result<Vec<f64>> {
        if upstream.shape() != cache.output.shape() {
            return Err(Error::Shape {
                expected: cache.output.len(),
                got: upstream.len(),
            });
        }
        let blocks = self.shape.blocks();
        let mut grad = vec![0.0; self.params.len()];
        let mut write = |block: usize, g: DMatrix<f64>| {
            let (off, rows, cols) = blocks[block];
            let mut dst = DMatrixViewMut::from_slice(&mut grad[off..off + rows * cols], cols, rows);
            dst.copy_from(&g);
        };
        let col_sums = |g: &DMatrix<f64>| DMatrix::from_row_slice(1, g.ncols(), g.row_sum().as_slice());

        write(4, cache.a2.transpose() * upstream);
        write(5, col_sums(upstream));
        let mut d2 = upstream * self.weight_t(4).transpose();
        d2.zip_apply(&cache.a2, |d, a| *d *= 1.0 - a * a);
        write(2, cache.a1.transpose() * &d2);
        write(3, col_sums(&d2));
        let mut d1 = &d2 * self.weight_t(2).transpose();
        d1.zip_apply(&cache.a1, |d, a| *d *= 1.0 - a * a);
        write(0, cache.input.transpose() * &d1);
        write(1, col_sums(&d1));
        Ok(grad)
    }
}

/// `A` from one output row, with `∂vec(A)/∂output` (row-major `vec`) for the
/// Bingham head. The Fisher head's Jacobian is the identity.
pub fn head_to_a(head: HeadKind, out: &[f64]) -> Result<(Matrix3<f64>, Option<SMatrix<f64, 9, 7>>)> {
    match head {
        HeadKind::Fisher => {
            if out.len() != 9 {
                return Err(Error::Shape { expected: 9, got: out.len() });
            }
            Ok((Matrix3::from_row_slice(out), None))
        }
        HeadKind::Bingham => {
            let (a, j) = birdal_fisher_jacobian(&BirdalOutput::from_slice(out)?)?;
            Ok((a, Some(j)))
        }
    }
}

/// Chains `∂L/∂A` back to `∂L/∂output` for one sample.
pub fn head_backward(grad_a: &Matrix3<f64>, jac: Option<&SMatrix<f64, 9, 7>>) -> Vec<f64> {
    let flat: SMatrix<f64, 9, 1> = SMatrix::from_iterator(grad_a.transpose().iter().copied());
    match jac {
        None => flat.iter().copied().collect(),
        Some(j) => (j.transpose() * flat).iter().copied().collect(),
    }
}

/// Bingham parameters for a 7-output row.
pub fn bingham_head_forward(out: &[f64]) -> Result<BinghamParams> {
    birdal_construct(&BirdalOutput::from_slice(out)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fisher::FisherParams;
    use crate::losses::nll_supervised;
    use crate::so3::{sample_uniform_rotation, Rotation};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn shape(output: usize) -> Shape {
        Shape { input: 16, hidden: 12, output }
    }

    fn random_input(rng: &mut impl Rng, n: usize) -> DMatrix<f64> {
        DMatrix::from_fn(n, 16, |_, _| rng.random_range(-1.0..1.0))
    }

    #[test]
    fn zero_weights_give_bias() {
        let mut reg = Regressor::zeros(shape(9), HeadKind::Fisher).unwrap();
        let n = reg.params.len();
        for (i, p) in reg.params_mut()[n - 9..].iter_mut().enumerate() {
            *p = i as f64;
        }
        let out = reg.forward(random_input(&mut ChaCha8Rng::seed_from_u64(1), 3)).unwrap();
        let (a, _) = head_to_a(HeadKind::Fisher, &out.row(2)).unwrap();
        assert_eq!(a, Matrix3::new(0.0, 1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0));
    }

    #[test]
    fn batch_equals_single() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let reg = Regressor::init(shape(9), HeadKind::Fisher, 1.0, &mut rng).unwrap();
        let x = random_input(&mut rng, 7);
        let batch = reg.forward(x.clone()).unwrap();
        for i in 0..7 {
            let one = reg.forward(x.rows(i, 1).into_owned()).unwrap();
            for (a, b) in one.row(0).iter().zip(batch.row(i)) {
                assert!((a - b).abs() <= 1e-13 * b.abs().max(1.0));
            }
        }
    }

    #[test]
    fn shape_errors() {
        assert!(Regressor::zeros(shape(7), HeadKind::Fisher).is_err());
        let reg = Regressor::zeros(shape(9), HeadKind::Fisher).unwrap();
        assert!(reg.forward(DMatrix::zeros(2, 15)).is_err());
        assert!(Regressor::from_params(shape(9), HeadKind::Fisher, vec![0.0; 3]).is_err());
    }

    /// Mean NLL over a small batch as a function of the flat parameters.
    fn batch_nll(reg: &Regressor, x: &DMatrix<f64>, y: &[Rotation]) -> f64 {
        let out = reg.forward(x.clone()).unwrap();
        (0..y.len())
            .map(|i| {
                let (a, _) = head_to_a(reg.head(), &out.row(i)).unwrap();
                nll_supervised(&FisherParams::new(a).unwrap(), &y[i]).value
            })
            .sum::<f64>()
            / y.len() as f64
    }

    fn analytic_grad(reg: &Regressor, x: &DMatrix<f64>, y: &[Rotation]) -> Vec<f64> {
        let cache = reg.forward(x.clone()).unwrap();
        let mut up = DMatrix::zeros(y.len(), reg.shape().output);
        for i in 0..y.len() {
            let (a, j) = head_to_a(reg.head(), &cache.row(i)).unwrap();
            let l = nll_supervised(&FisherParams::new(a).unwrap(), &y[i]);
            let g = head_backward(&(l.grad_a / y.len() as f64), j.as_ref());
            for (c, v) in g.into_iter().enumerate() {
                up[(i, c)] = v;
            }
        }
        reg.backward(&cache, &up).unwrap()
    }

    fn check_composition(head: HeadKind, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let reg = Regressor::init(shape(head.outputs()), head, 2.0, &mut rng).unwrap();
        let x = random_input(&mut rng, 4);
        let y: Vec<_> = (0..4).map(|_| sample_uniform_rotation(&mut rng)).collect();
        let grad = analytic_grad(&reg, &x, &y);
        let h = 1e-5;
        for _ in 0..20 {
            let idx = rng.random_range(0..reg.params.len());
            let mut plus = reg.clone();
            plus.params[idx] += h;
            let mut minus = reg.clone();
            minus.params[idx] -= h;
            let fd = (batch_nll(&plus, &x, &y) - batch_nll(&minus, &x, &y)) / (2.0 * h);
            let err = (fd - grad[idx]).abs() / grad[idx].abs().max(1e-3);
            assert!(err < 1e-3, "param {idx}: fd {fd} analytic {}", grad[idx]);
        }
    }

    #[test]
    fn fisher_composition_gradient() {
        check_composition(HeadKind::Fisher, 3);
    }

    #[test]
    fn bingham_composition_gradient() {
        check_composition(HeadKind::Bingham, 4);
    }

    #[test]
    fn bingham_head_mode() {
        let b = bingham_head_forward(&[1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]).unwrap();
        let m = crate::bingham::birdal_matrix(&nalgebra::Vector4::new(1.0, 0.0, 0.0, 0.0));
        let mode = b.mode();
        let col = m.column(0);
        assert!((mode.dot(&col).abs() - 1.0).abs() < 1e-12);
    }
}

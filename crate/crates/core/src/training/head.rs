//! Two-layer projection head with a linear classifier, forward and backward passes.

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::scalar::Scalar;

/// `x → W₂ tanh(W₁x + b₁) + b₂`, optionally L2-normalised, with `W_c u + b_c` on top for CE.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProjectionHead<F> {
    pub w1: Array2<F>,
    pub b1: Array1<F>,
    pub w2: Array2<F>,
    pub b2: Array1<F>,
    pub wc: Array2<F>,
    pub bc: Array1<F>,
    pub normalize: bool,
}

/// Gradients with the same shapes as the head's parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadGrads<F> {
    pub w1: Array2<F>,
    pub b1: Array1<F>,
    pub w2: Array2<F>,
    pub b2: Array1<F>,
    pub wc: Array2<F>,
    pub bc: Array1<F>,
}

/// Intermediate activations of one batch.
#[derive(Debug, Clone)]
pub struct ForwardCache<F> {
    pub x: Array2<F>,
    pub hidden: Array2<F>,
    pub z: Array2<F>,
    pub norms: Array1<F>,
    pub features: Array2<F>,
}

fn gaussian<F: Scalar>(rng: &mut ChaCha8Rng, rows: usize, cols: usize, std: f64) -> Array2<F> {
    Array2::from_shape_fn((rows, cols), |_| F::of(std * rng.sample::<f64, _>(StandardNormal)))
}

impl<F: Scalar> ProjectionHead<F> {
    /// Near-identity initialisation: `W₁`, `W₂` are (padded) identities plus Gaussian noise.
    pub fn new(d_in: usize, hidden: usize, d_out: usize, classes: usize, init_std: f64, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut w1 = gaussian(&mut rng, hidden, d_in, init_std);
        for i in 0..hidden.min(d_in) {
            w1[[i, i]] += F::one();
        }
        let mut w2 = gaussian(&mut rng, d_out, hidden, init_std);
        for i in 0..d_out.min(hidden) {
            w2[[i, i]] += F::one();
        }
        let wc = gaussian(&mut rng, classes, d_out, 1.0 / (d_out as f64).sqrt());
        Self {
            w1,
            b1: Array1::zeros(hidden),
            w2,
            b2: Array1::zeros(d_out),
            wc,
            bc: Array1::zeros(classes),
            normalize: true,
        }
    }

    pub fn zeros(d_in: usize, hidden: usize, d_out: usize, classes: usize) -> Self {
        Self {
            w1: Array2::zeros((hidden, d_in)),
            b1: Array1::zeros(hidden),
            w2: Array2::zeros((d_out, hidden)),
            b2: Array1::zeros(d_out),
            wc: Array2::zeros((classes, d_out)),
            bc: Array1::zeros(classes),
            normalize: false,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.w1.ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.w2.nrows()
    }

    pub fn num_classes(&self) -> usize {
        self.wc.nrows()
    }

    pub fn num_params(&self) -> usize {
        self.w1.len() + self.b1.len() + self.w2.len() + self.b2.len() + self.wc.len() + self.bc.len()
    }

    /// The un-normalised affine → tanh → affine map of one vector.
    pub fn forward(&self, x: &[F]) -> Vec<F> {
        let xv = ndarray::ArrayView1::from(x);
        let h = (self.w1.dot(&xv) + &self.b1).mapv(F::tanh);
        (self.w2.dot(&h) + &self.b2).to_vec()
    }

    pub fn forward_batch(&self, x: ArrayView2<F>) -> ForwardCache<F> {
        let hidden = (x.dot(&self.w1.t()) + &self.b1).mapv(F::tanh);
        let z = hidden.dot(&self.w2.t()) + &self.b2;
        let (norms, features) = if self.normalize {
            let norms = z.map_axis(Axis(1), |r| r.iter().map(|&v| v * v).sum::<F>().sqrt());
            let mut u = z.clone();
            for (mut row, &n) in u.outer_iter_mut().zip(&norms) {
                let n = n.max(F::min_positive_value());
                row.mapv_inplace(|v| v / n);
            }
            (norms, u)
        } else {
            (Array1::ones(z.nrows()), z.clone())
        };
        ForwardCache {
            x: x.to_owned(),
            hidden,
            z,
            norms,
            features,
        }
    }

    /// Output-space features of every row.
    pub fn embed(&self, x: ArrayView2<F>) -> Array2<F> {
        self.forward_batch(x).features
    }

    pub fn logits(&self, features: ArrayView2<F>) -> Array2<F> {
        features.dot(&self.wc.t()) + &self.bc
    }

    /// Accumulates parameter gradients for an upstream gradient on the features.
    pub fn backward(&self, cache: &ForwardCache<F>, d_features: ArrayView2<F>, grads: &mut HeadGrads<F>) {
        let dz = if self.normalize {
            let mut dz = d_features.to_owned();
            for ((mut row, u), &n) in dz.outer_iter_mut().zip(cache.features.outer_iter()).zip(&cache.norms) {
                let proj: F = row.iter().zip(u.iter()).map(|(&g, &v)| g * v).sum();
                let n = n.max(F::min_positive_value());
                for (g, &v) in row.iter_mut().zip(u.iter()) {
                    *g = (*g - proj * v) / n;
                }
            }
            dz
        } else {
            d_features.to_owned()
        };
        grads.w2 += &dz.t().dot(&cache.hidden);
        grads.b2 += &dz.sum_axis(Axis(0));
        let dh = dz.dot(&self.w2);
        let da = dh * cache.hidden.mapv(|h| F::one() - h * h);
        grads.w1 += &da.t().dot(&cache.x);
        grads.b1 += &da.sum_axis(Axis(0));
    }

    pub fn all_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.iter().all(|v| v.is_finite()))
    }

    pub fn tensors(&self) -> [&[F]; 6] {
        [
            self.w1.as_slice().unwrap(),
            self.b1.as_slice().unwrap(),
            self.w2.as_slice().unwrap(),
            self.b2.as_slice().unwrap(),
            self.wc.as_slice().unwrap(),
            self.bc.as_slice().unwrap(),
        ]
    }

    pub fn tensors_mut(&mut self) -> [&mut [F]; 6] {
        [
            self.w1.as_slice_mut().unwrap(),
            self.b1.as_slice_mut().unwrap(),
            self.w2.as_slice_mut().unwrap(),
            self.b2.as_slice_mut().unwrap(),
            self.wc.as_slice_mut().unwrap(),
            self.bc.as_slice_mut().unwrap(),
        ]
    }
}

impl<F: Scalar> HeadGrads<F> {
    pub fn zeros_like(head: &ProjectionHead<F>) -> Self {
        Self {
            w1: Array2::zeros(head.w1.raw_dim()),
            b1: Array1::zeros(head.b1.raw_dim()),
            w2: Array2::zeros(head.w2.raw_dim()),
            b2: Array1::zeros(head.b2.raw_dim()),
            wc: Array2::zeros(head.wc.raw_dim()),
            bc: Array1::zeros(head.bc.raw_dim()),
        }
    }

    pub fn tensors(&self) -> [&[F]; 6] {
        [
            self.w1.as_slice().unwrap(),
            self.b1.as_slice().unwrap(),
            self.w2.as_slice().unwrap(),
            self.b2.as_slice().unwrap(),
            self.wc.as_slice().unwrap(),
            self.bc.as_slice().unwrap(),
        ]
    }

    pub fn all_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.iter().all(|v| v.is_finite()))
    }
}

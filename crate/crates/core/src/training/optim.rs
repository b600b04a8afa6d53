use rand::Rng;
use rand_distr::StandardNormal;

use super::head::{HeadGrads, ProjectionHead};
use crate::scalar::Scalar;

/// Adam with bias correction over every head tensor.
#[derive(Debug, Clone)]
pub struct Adam<F> {
    pub lr: F,
    pub beta1: F,
    pub beta2: F,
    pub eps: F,
    t: i32,
    m: Vec<Vec<F>>,
    v: Vec<Vec<F>>,
}

impl<F: Scalar> Adam<F> {
    pub fn new(head: &ProjectionHead<F>, lr: f64) -> Self {
        let shapes: Vec<Vec<F>> = head.tensors().iter().map(|t| vec![F::zero(); t.len()]).collect();
        Self {
            lr: F::of(lr),
            beta1: F::of(0.9),
            beta2: F::of(0.999),
            eps: F::of(1e-8),
            t: 0,
            m: shapes.clone(),
            v: shapes,
        }
    }

    pub fn step(&mut self, head: &mut ProjectionHead<F>, grads: &HeadGrads<F>) {
        self.t += 1;
        let bc1 = F::one() - self.beta1.powi(self.t);
        let bc2 = F::one() - self.beta2.powi(self.t);
        let one = F::one();
        for (k, (p, g)) in head.tensors_mut().into_iter().zip(grads.tensors()).enumerate() {
            let (m, v) = (&mut self.m[k], &mut self.v[k]);
            for i in 0..p.len() {
                m[i] = self.beta1 * m[i] + (one - self.beta1) * g[i];
                v[i] = self.beta2 * v[i] + (one - self.beta2) * g[i] * g[i];
                let mh = m[i] / bc1;
                let vh = v[i] / bc2;
                p[i] -= self.lr * mh / (vh.sqrt() + self.eps);
            }
        }
    }
}

/// Gaussian noise of scale `sigma`, then each coordinate zeroed with probability `drop`.
pub fn augment<F: Scalar, R: Rng + ?Sized>(z: &[F], rng: &mut R, sigma: f64, drop: f64) -> Vec<F> {
    z.iter()
        .map(|&v| {
            let noisy = if sigma > 0.0 {
                v + F::of(sigma * rng.sample::<f64, _>(StandardNormal))
            } else {
                v
            };
            if drop > 0.0 && rng.random::<f64>() < drop {
                F::zero()
            } else {
                noisy
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn identity_augmentation() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let z = [1.0, -2.0, 3.5];
        assert_eq!(augment(&z, &mut rng, 0.0, 0.0), z.to_vec());
    }

    #[test]
    fn dropout_count_within_binomial_band() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let z = vec![1.0f64; 1000];
        let zeroed = augment(&z, &mut rng, 0.0, 0.5).iter().filter(|&&v| v == 0.0).count();
        // mean 500, sd sqrt(1000 * 0.25) ≈ 15.8
        assert!((zeroed as f64 - 500.0).abs() < 4.0 * 15.82);
    }

    #[test]
    fn noise_norm_concentrates() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let d = 400;
        let z = vec![0.0f64; d];
        let a = augment(&z, &mut rng, 0.1, 0.0);
        let norm = a.iter().map(|v| v * v).sum::<f64>().sqrt();
        // chi mean ≈ sigma·sqrt(d − 1/2), sd ≈ sigma/√2
        let mean = 0.1 * (d as f64 - 0.5).sqrt();
        assert!((norm - mean).abs() < 4.0 * 0.1 / 2f64.sqrt());
    }

    #[test]
    fn adam_moves_against_gradient() {
        let mut head = ProjectionHead::<f64>::zeros(2, 2, 2, 2);
        let mut g = HeadGrads::zeros_like(&head);
        g.w1[[0, 0]] = 3.0;
        g.bc[1] = -1.0;
        let mut opt = Adam::new(&head, 0.1);
        opt.step(&mut head, &g);
        assert!((head.w1[[0, 0]] + 0.1).abs() < 1e-6);
        assert!((head.bc[1] - 0.1).abs() < 1e-6);
        assert_eq!(head.w2[[0, 0]], 0.0);
    }
}

//! Diagonal Gaussians: reparameterized sampling, log-density and closed-form KL.
//!
//! [`GaussianVar`] is the recorded form used inside model computations;
//! [`DiagonalGaussian`] is the plain value form. The value methods evaluate
//! the same recorded formulas on a throwaway tape.

use std::f64::consts::PI;

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct DiagonalGaussian {
    mean: Tensor,
    std: Tensor,
}

impl DiagonalGaussian {
    pub fn new(mean: Tensor, std: Tensor) -> Result<Self> {
        if mean.shape() != std.shape() {
            return Err(Error::Dimension {
                op: "gaussian",
                lhs: mean.shape().to_vec(),
                rhs: std.shape().to_vec(),
            });
        }
        if let Some(bad) = std.data().iter().find(|&&s| !(s > 0.0)) {
            return Err(Error::Domain(format!("standard deviation must be positive, got {bad}")));
        }
        Ok(DiagonalGaussian { mean, std })
    }

    pub fn standard(shape: &[usize]) -> Self {
        DiagonalGaussian {
            mean: Tensor::zeros(shape),
            std: Tensor::filled(shape, 1.0),
        }
    }

    pub fn mean(&self) -> &Tensor {
        &self.mean
    }

    pub fn std(&self) -> &Tensor {
        &self.std
    }

    pub fn dim(&self) -> usize {
        self.mean.numel()
    }

    fn record(&self, tape: &mut Tape) -> GaussianVar {
        GaussianVar {
            mean: tape.constant(self.mean.clone()),
            std: tape.constant(self.std.clone()),
        }
    }

    /// `mean + std ⊙ noise`.
    pub fn rsample(&self, noise: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let g = self.record(&mut tape);
        let n = tape.constant(noise.clone());
        let s = g.rsample(&mut tape, n)?;
        Ok(tape.value(s).clone())
    }

    pub fn log_prob(&self, y: &Tensor) -> Result<f64> {
        let mut tape = Tape::new();
        let g = self.record(&mut tape);
        let y = tape.constant(y.clone());
        let lp = g.log_prob(&mut tape, y)?;
        tape.value(lp).item()
    }

    /// `KL(self ‖ other)`.
    pub fn kl_divergence(&self, other: &DiagonalGaussian) -> Result<f64> {
        let mut tape = Tape::new();
        let q = self.record(&mut tape);
        let p = other.record(&mut tape);
        let kl = q.kl_divergence(&mut tape, p)?;
        tape.value(kl).item()
    }
}

pub fn kl_divergence(q: &DiagonalGaussian, p: &DiagonalGaussian) -> Result<f64> {
    q.kl_divergence(p)
}

/// A diagonal Gaussian whose parameters live on a tape.
#[derive(Clone, Copy, Debug)]
pub struct GaussianVar {
    pub mean: Var,
    pub std: Var,
}

impl GaussianVar {
    pub fn value(self, tape: &Tape) -> Result<DiagonalGaussian> {
        DiagonalGaussian::new(tape.value(self.mean).clone(), tape.value(self.std).clone())
    }

    fn check_shape(self, tape: &Tape, other: Var, op: &'static str) -> Result<()> {
        if tape.shape(self.mean) != tape.shape(other) {
            return Err(Error::Dimension {
                op,
                lhs: tape.shape(self.mean).to_vec(),
                rhs: tape.shape(other).to_vec(),
            });
        }
        Ok(())
    }

    pub fn rsample(self, tape: &mut Tape, noise: Var) -> Result<Var> {
        self.check_shape(tape, noise, "rsample")?;
        let scaled = tape.mul(self.std, noise)?;
        tape.add(self.mean, scaled)
    }

    /// Per-coordinate log-density, same shape as `y`.
    pub fn log_density(self, tape: &mut Tape, y: Var) -> Result<Var> {
        self.check_shape(tape, y, "log_prob")?;
        let diff = tape.sub(y, self.mean)?;
        let sq = tape.square(diff);
        let var = tape.square(self.std);
        let quad = tape.div(sq, var)?;
        let quad = tape.scale(quad, -0.5);
        let log_std = tape.log(self.std)?;
        let lp = tape.sub(quad, log_std)?;
        Ok(tape.offset(lp, -0.5 * (2.0 * PI).ln()))
    }

    /// Total log-density summed over coordinates.
    pub fn log_prob(self, tape: &mut Tape, y: Var) -> Result<Var> {
        let d = self.log_density(tape, y)?;
        Ok(tape.sum(d))
    }

    /// `KL(self ‖ p)` in closed form, summed over coordinates.
    pub fn kl_divergence(self, tape: &mut Tape, p: GaussianVar) -> Result<Var> {
        self.check_shape(tape, p.mean, "kl_divergence")?;
        let log_p = tape.log(p.std)?;
        let log_q = tape.log(self.std)?;
        let log_ratio = tape.sub(log_p, log_q)?;
        let var_q = tape.square(self.std);
        let diff = tape.sub(self.mean, p.mean)?;
        let diff_sq = tape.square(diff);
        let num = tape.add(var_q, diff_sq)?;
        let var_p = tape.square(p.std);
        let two_var_p = tape.scale(var_p, 2.0);
        let frac = tape.div(num, two_var_p)?;
        let per_coord = tape.add(log_ratio, frac)?;
        let per_coord = tape.offset(per_coord, -0.5);
        Ok(tape.sum(per_coord))
    }
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    use super::*;
    use crate::autodiff::gradient_check;

    fn g1(mean: f64, std: f64) -> DiagonalGaussian {
        DiagonalGaussian::new(Tensor::row(vec![mean]), Tensor::row(vec![std])).unwrap()
    }

    #[test]
    fn rejects_non_positive_std() {
        assert!(DiagonalGaussian::new(Tensor::row(vec![0.0]), Tensor::row(vec![0.0])).is_err());
        assert!(DiagonalGaussian::new(Tensor::row(vec![0.0]), Tensor::row(vec![1.0, 1.0])).is_err());
    }

    #[test]
    fn rsample_examples() {
        let eps = Tensor::row(vec![0.37, -1.2]);
        let std_normal = DiagonalGaussian::standard(&[1, 2]);
        assert_eq!(std_normal.rsample(&eps).unwrap(), eps);

        let tight = DiagonalGaussian::new(Tensor::row(vec![1.5, -2.0]), Tensor::row(vec![1e-12, 1e-12])).unwrap();
        let s = tight.rsample(&eps).unwrap();
        assert!(s.max_abs_diff(tight.mean()) < 1e-11);

        assert!(std_normal.rsample(&Tensor::row(vec![1.0])).is_err());
    }

    #[test]
    fn rsample_monte_carlo_moments() {
        let g = g1(2.0, 3.0);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 100_000;
        let draws: Vec<f64> = (0..n)
            .map(|_| {
                let e: f64 = StandardNormal.sample(&mut rng);
                g.rsample(&Tensor::row(vec![e])).unwrap().data()[0]
            })
            .collect();
        let mean = draws.iter().sum::<f64>() / n as f64;
        let var = draws.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / n as f64;
        assert!((mean - 2.0).abs() < 0.05, "{mean}");
        assert!((var.sqrt() - 3.0).abs() < 0.05, "{}", var.sqrt());
    }

    #[test]
    fn log_prob_examples() {
        let half_log_2pi = 0.5 * (2.0 * PI).ln();
        assert!((g1(0.0, 1.0).log_prob(&Tensor::row(vec![0.0])).unwrap() + half_log_2pi).abs() < 1e-15);
        assert!((half_log_2pi - 0.918_938_533_204_672_7).abs() < 1e-15);

        let mean = Tensor::row(vec![0.3, -0.1, 2.0]);
        let std = Tensor::row(vec![0.5, 1.5, 2.0]);
        let g = DiagonalGaussian::new(mean.clone(), std.clone()).unwrap();
        let expected: f64 = std.data().iter().map(|s| -(half_log_2pi + s.ln())).sum();
        assert!((g.log_prob(&mean).unwrap() - expected).abs() < 1e-12);

        let doubled = DiagonalGaussian::new(mean.clone(), std.map(|s| 2.0 * s)).unwrap();
        let drop = g.log_prob(&mean).unwrap() - doubled.log_prob(&mean).unwrap();
        assert!((drop - 3.0 * 2f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn kl_examples() {
        assert_eq!(g1(0.4, 0.7).kl_divergence(&g1(0.4, 0.7)).unwrap(), 0.0);
        assert!((g1(1.0, 1.0).kl_divergence(&g1(0.0, 1.0)).unwrap() - 0.5).abs() < 1e-12);
        let expected = -(2f64.ln()) + 2.0 - 0.5;
        assert!((g1(0.0, 2.0).kl_divergence(&g1(0.0, 1.0)).unwrap() - expected).abs() < 1e-12);
        assert!((expected - 0.8069).abs() < 1e-4);
    }

    #[test]
    fn log_prob_gradient_vanishes_at_mean() {
        let f = |t: &mut Tape, v: &[Var]| {
            let g = GaussianVar { mean: v[1], std: v[2] };
            g.log_prob(t, v[0])
        };
        let mean = Tensor::row(vec![0.4, -1.0]);
        let params = [mean.clone(), mean, Tensor::row(vec![0.8, 1.3])];
        let mut tape = Tape::new();
        let vars: Vec<Var> = params.iter().map(|p| tape.leaf(p.clone())).collect();
        let out = f(&mut tape, &vars).unwrap();
        let grads = tape.backward(out).unwrap();
        assert!(grads.get(vars[0]).data().iter().all(|g| g.abs() < 1e-15));
        assert!(gradient_check(f, &params, 1e-6) < 1e-6);
    }

    #[test]
    fn rsample_gradients_are_one_and_noise() {
        let noise = Tensor::row(vec![0.3, -0.7]);
        let mut tape = Tape::new();
        let mean = tape.leaf(Tensor::row(vec![1.0, 2.0]));
        let std = tape.leaf(Tensor::row(vec![0.5, 0.25]));
        let n = tape.constant(noise.clone());
        let s = GaussianVar { mean, std }.rsample(&mut tape, n).unwrap();
        let loss = tape.sum(s);
        let g = tape.backward(loss).unwrap();
        assert_eq!(g.get(mean).data(), &[1.0, 1.0]);
        assert_eq!(g.get(std).data(), noise.data());

        let f = |t: &mut Tape, v: &[Var]| {
            let n = t.constant(Tensor::row(vec![0.3, -0.7]));
            let s = GaussianVar { mean: v[0], std: v[1] }.rsample(t, n)?;
            let sq = t.square(s);
            Ok(t.sum(sq))
        };
        let params = [Tensor::row(vec![1.0, 2.0]), Tensor::row(vec![0.5, 0.25])];
        assert!(gradient_check(f, &params, 1e-6) < 1e-8);
    }

    proptest::proptest! {
        #[test]
        fn kl_is_non_negative(
            mq in -3.0f64..3.0, sq in 0.05f64..4.0,
            mp in -3.0f64..3.0, sp in 0.05f64..4.0,
        ) {
            let kl = g1(mq, sq).kl_divergence(&g1(mp, sp)).unwrap();
            proptest::prop_assert!(kl >= -1e-12);
        }

        #[test]
        fn kl_gradient_matches_finite_differences(
            mq in -2.0f64..2.0, sq in 0.3f64..2.0,
            mp in -2.0f64..2.0, sp in 0.3f64..2.0,
        ) {
            let f = |t: &mut Tape, v: &[Var]| {
                GaussianVar { mean: v[0], std: v[1] }.kl_divergence(t, GaussianVar { mean: v[2], std: v[3] })
            };
            let params = [
                Tensor::row(vec![mq]), Tensor::row(vec![sq]),
                Tensor::row(vec![mp]), Tensor::row(vec![sp]),
            ];
            proptest::prop_assert!(gradient_check(f, &params, 1e-6) < 1e-6);
        }
    }
}

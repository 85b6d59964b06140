use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::Coefficients;
use crate::dataset::TabularDataset;
use crate::error::{Error, Result};
use crate::math::{log_sigmoid, sigmoid, softplus};
use crate::priors::{PriorDist, PriorSet};

/// A differentiable log density on an unconstrained space.
pub trait LogDensity: Sync {
    fn dim(&self) -> usize;

    /// Returns `log p(position)` and writes its gradient into `grad`.
    fn logp_grad(&self, position: &[f64], grad: &mut [f64]) -> f64;

    /// Starting point for a chain.
    fn initial_point(&self, rng: &mut ChaCha8Rng) -> Vec<f64> {
        (0..self.dim())
            .map(|_| rng.random_range(-2.0..2.0))
            .collect()
    }

    /// Maps sampler coordinates to the reported parameter scale.
    fn constrain(&self, position: &[f64]) -> Vec<f64> {
        position.to_vec()
    }

    fn param_names(&self) -> Vec<String> {
        (0..self.dim()).map(|k| format!("theta[{k}]")).collect()
    }
}

/// Bayesian logistic regression posterior over `[beta_1..beta_d, intercept]`.
///
/// Uniform priors are sampled on the real line through
/// `beta = a + (b - a) * sigmoid(u)`; the log-Jacobian is included, so
/// coordinates with uniform priors are in `u`-space.
#[derive(Debug, Clone)]
pub struct LogisticPosterior<'a> {
    x: &'a DMatrix<f64>,
    y: Vec<f64>,
    /// d coefficient priors followed by the intercept prior.
    priors: Vec<PriorDist>,
    names: Vec<String>,
}

impl<'a> LogisticPosterior<'a> {
    pub fn new(
        x: &'a DMatrix<f64>,
        labels: &[u8],
        coef_priors: &[PriorDist],
        intercept: PriorDist,
    ) -> Result<Self> {
        if x.nrows() != labels.len() {
            return Err(Error::DimensionMismatch {
                expected: x.nrows(),
                got: labels.len(),
            });
        }
        if x.ncols() != coef_priors.len() {
            return Err(Error::DimensionMismatch {
                expected: x.ncols(),
                got: coef_priors.len(),
            });
        }
        for p in coef_priors.iter().chain([&intercept]) {
            p.validate()?;
        }
        let mut priors = coef_priors.to_vec();
        priors.push(intercept);
        let mut names: Vec<String> = (0..x.ncols()).map(|j| format!("x{j}")).collect();
        names.push("intercept".into());
        Ok(LogisticPosterior {
            x,
            y: labels.iter().map(|&l| f64::from(l)).collect(),
            priors,
            names,
        })
    }

    pub fn from_dataset(ds: &'a TabularDataset, priors: &PriorSet) -> Result<Self> {
        let coef = priors.aligned(&ds.features)?;
        let mut post = LogisticPosterior::new(&ds.x, &ds.labels, &coef, priors.intercept)?;
        for (n, f) in post.names.iter_mut().zip(&ds.features) {
            n.clone_from(&f.name);
        }
        Ok(post)
    }

    pub fn n_features(&self) -> usize {
        self.x.ncols()
    }

    pub fn priors(&self) -> &[PriorDist] {
        &self.priors
    }

    pub fn all_normal(&self) -> bool {
        self.priors
            .iter()
            .all(|p| matches!(p, PriorDist::Normal { .. }))
    }

    fn check(&self, theta: &[f64]) -> Result<()> {
        if theta.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: theta.len(),
            });
        }
        if theta.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("coefficients".into()));
        }
        Ok(())
    }

    /// Coefficients on the natural scale from unconstrained coordinates.
    pub fn to_coefficients(&self, theta: &[f64]) -> Coefficients {
        Coefficients::from_slice(&self.constrain(theta))
    }

    /// Unconstrained coordinates for natural-scale coefficients.
    pub fn unconstrain(&self, c: &Coefficients) -> Vec<f64> {
        c.to_vec()
            .iter()
            .zip(&self.priors)
            .map(|(&b, p)| match *p {
                PriorDist::Normal { .. } => b,
                PriorDist::Uniform { lower, upper } => {
                    let t = ((b - lower) / (upper - lower)).clamp(1e-12, 1.0 - 1e-12);
                    (t / (1.0 - t)).ln()
                }
            })
            .collect()
    }

    /// Log posterior (up to the evidence) at unconstrained coordinates.
    pub fn log_posterior(&self, theta: &[f64]) -> Result<f64> {
        self.check(theta)?;
        let mut g = vec![0.0; self.dim()];
        Ok(self.logp_grad(theta, &mut g))
    }

    pub fn grad_log_posterior(&self, theta: &[f64]) -> Result<Vec<f64>> {
        self.check(theta)?;
        let mut g = vec![0.0; self.dim()];
        self.logp_grad(theta, &mut g);
        Ok(g)
    }

    /// Linear predictor `X beta + intercept` for natural-scale coefficients.
    fn linear_predictor(&self, beta: &[f64]) -> DVector<f64> {
        let d = self.n_features();
        let b = DVector::from_column_slice(&beta[..d]);
        let mut z = self.x * b;
        z.add_scalar_mut(beta[d]);
        z
    }
}

impl LogDensity for LogisticPosterior<'_> {
    fn dim(&self) -> usize {
        self.priors.len()
    }

    fn logp_grad(&self, theta: &[f64], grad: &mut [f64]) -> f64 {
        let d = self.n_features();
        let beta = self.constrain(theta);
        let z = self.linear_predictor(&beta);

        let mut logp = 0.0;
        let mut resid = DVector::zeros(z.len());
        for i in 0..z.len() {
            logp += self.y[i] * z[i] - softplus(z[i]);
            resid[i] = self.y[i] - sigmoid(z[i]);
        }
        let g_beta = self.x.tr_mul(&resid);
        grad[..d].copy_from_slice(g_beta.as_slice());
        grad[d] = resid.sum();

        for (k, prior) in self.priors.iter().enumerate() {
            match *prior {
                PriorDist::Normal { mu, sigma } => {
                    logp += prior.log_density(theta[k]);
                    grad[k] -= (theta[k] - mu) / (sigma * sigma);
                }
                PriorDist::Uniform { lower, upper } => {
                    let s = sigmoid(theta[k]);
                    // dbeta/du
                    grad[k] *= (upper - lower) * s * (1.0 - s);
                    logp += log_sigmoid(theta[k]) + log_sigmoid(-theta[k]);
                    grad[k] += 1.0 - 2.0 * s;
                }
            }
        }
        logp
    }

    /// Prior draw, with normal scales capped at 2, plus uniform jitter in ±0.1.
    fn initial_point(&self, rng: &mut ChaCha8Rng) -> Vec<f64> {
        let draw: Vec<f64> = self
            .priors
            .iter()
            .map(|p| {
                let jitter = rng.random_range(-0.1..0.1);
                match *p {
                    PriorDist::Normal { mu, sigma } => {
                        let n = Normal::new(mu, sigma.min(2.0)).expect("validated prior");
                        n.sample(rng) + jitter
                    }
                    PriorDist::Uniform { lower, upper } => {
                        let w = upper - lower;
                        (rng.random_range(lower..upper) + jitter * w / 2.0)
                            .clamp(lower + 1e-3 * w, upper - 1e-3 * w)
                    }
                }
            })
            .collect();
        self.unconstrain(&Coefficients::from_slice(&draw))
    }

    fn constrain(&self, theta: &[f64]) -> Vec<f64> {
        theta
            .iter()
            .zip(&self.priors)
            .map(|(&u, p)| match *p {
                PriorDist::Normal { .. } => u,
                PriorDist::Uniform { lower, upper } => lower + (upper - lower) * sigmoid(u),
            })
            .collect()
    }

    fn param_names(&self) -> Vec<String> {
        self.names.clone()
    }
}

/// Log posterior of `c` given `train` and `priors`. Coordinates with uniform
/// priors are read as unconstrained values.
pub fn log_posterior(c: &Coefficients, train: &TabularDataset, priors: &PriorSet) -> Result<f64> {
    LogisticPosterior::from_dataset(train, priors)?.log_posterior(&c.to_vec())
}

/// Gradient of [`log_posterior`], ordered `[beta.., intercept]`.
pub fn grad_log_posterior(
    c: &Coefficients,
    train: &TabularDataset,
    priors: &PriorSet,
) -> Result<Vec<f64>> {
    LogisticPosterior::from_dataset(train, priors)?.grad_log_posterior(&c.to_vec())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};

    fn fd_grad(post: &LogisticPosterior, theta: &[f64], h: f64) -> Vec<f64> {
        (0..theta.len())
            .map(|k| {
                let mut a = theta.to_vec();
                let mut b = theta.to_vec();
                a[k] += h;
                b[k] -= h;
                (post.log_posterior(&a).unwrap() - post.log_posterior(&b).unwrap()) / (2.0 * h)
            })
            .collect()
    }

    fn flat() -> PriorDist {
        PriorDist::normal(0.0, 1e12)
    }

    #[test]
    fn zero_coefficients_give_n_ln_half() {
        let x = DMatrix::from_row_slice(4, 2, &[1.0, 2.0, -1.0, 0.5, 3.0, 3.0, 0.0, -2.0]);
        let post = LogisticPosterior::new(&x, &[1, 0, 1, 0], &[flat(), flat()], flat()).unwrap();
        let mut g = vec![0.0; 3];
        let mut lp = post.logp_grad(&[0.0; 3], &mut g);
        for p in post.priors() {
            lp -= p.log_density(0.0);
        }
        assert!((lp - 4.0 * 0.5f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn single_row_likelihood() {
        let x = DMatrix::from_row_slice(1, 1, &[1.0]);
        let post = LogisticPosterior::new(&x, &[1], &[flat()], flat()).unwrap();
        let lp = post.log_posterior(&[0.0, 0.0]).unwrap() - 2.0 * flat().log_density(0.0);
        assert!((lp + std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn data_gradient_at_zero() {
        // Symmetric x, balanced labels: d/dbeta = sum x_i (y_i - 1/2).
        let xs = [-2.0, -1.0, 1.0, 2.0];
        let ys = [0u8, 1, 0, 1];
        let x = DMatrix::from_column_slice(4, 1, &xs);
        let post = LogisticPosterior::new(&x, &ys, &[flat()], flat()).unwrap();
        let g = post.grad_log_posterior(&[0.0, 0.0]).unwrap();
        let expected: f64 = xs
            .iter()
            .zip(ys)
            .map(|(x, y)| x * (f64::from(y) - 0.5))
            .sum();
        assert!((g[0] - expected).abs() < 1e-12);
        assert!(g[1].abs() < 1e-12);
    }

    #[test]
    fn gradient_vanishes_at_prior_mode_without_data() {
        let x = DMatrix::zeros(0, 2);
        let priors = [PriorDist::normal(0.3, 0.5), PriorDist::normal(-1.0, 2.0)];
        let post = LogisticPosterior::new(&x, &[], &priors, PriorDist::normal(0.7, 1.0)).unwrap();
        let g = post.grad_log_posterior(&[0.3, -1.0, 0.7]).unwrap();
        assert!(g.iter().all(|v| v.abs() < 1e-15));
    }

    #[test]
    fn input_validation() {
        let x = DMatrix::zeros(2, 1);
        assert!(LogisticPosterior::new(&x, &[0], &[flat()], flat()).is_err());
        assert!(LogisticPosterior::new(&x, &[0, 1], &[], flat()).is_err());
        let post = LogisticPosterior::new(&x, &[0, 1], &[flat()], flat()).unwrap();
        assert!(post.log_posterior(&[0.0]).is_err());
        assert!(post.log_posterior(&[f64::NAN, 0.0]).is_err());
    }

    #[test]
    fn no_overflow_at_large_margins() {
        let x = DMatrix::from_row_slice(2, 1, &[1.0, -1.0]);
        let post = LogisticPosterior::new(&x, &[1, 1], &[flat()], flat()).unwrap();
        let lp = post.log_posterior(&[800.0, 0.0]).unwrap();
        assert!(lp.is_finite());
    }

    #[test]
    fn uniform_initial_points_are_inside() {
        let x = DMatrix::zeros(0, 3);
        let u = PriorDist::uniform(-1.0, 1.0);
        let post =
            LogisticPosterior::new(&x, &[], &[u, u, u], PriorDist::normal(0.0, 1.0)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..100 {
            let t = post.initial_point(&mut rng);
            let b = post.constrain(&t);
            assert!(b[..3].iter().all(|v| v.abs() < 1.0));
        }
    }

    proptest! {
        #[test]
        fn gradient_matches_finite_differences(
            seed in 0u64..10_000,
            n in 1usize..8,
            d in 1usize..4,
            use_uniform in proptest::bool::ANY,
        ) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let x = DMatrix::from_fn(n, d, |_, _| rng.random_range(-2.0..2.0));
            let y: Vec<u8> = (0..n).map(|_| rng.random_range(0..2)).collect();
            let mut priors: Vec<PriorDist> = (0..d)
                .map(|_| PriorDist::normal(rng.random_range(-1.0..1.0), rng.random_range(0.3..2.0)))
                .collect();
            if use_uniform {
                priors[0] = PriorDist::uniform(-1.0, 1.0);
            }
            let post = LogisticPosterior::new(&x, &y, &priors, PriorDist::normal(0.0, 1.0)).unwrap();
            let theta: Vec<f64> = (0..=d).map(|_| rng.random_range(-1.5..1.5)).collect();
            let g = post.grad_log_posterior(&theta).unwrap();
            let fd = fd_grad(&post, &theta, 1e-5);
            for (a, b) in g.iter().zip(&fd) {
                prop_assert!((a - b).abs() <= 1e-6 * a.abs().max(1.0), "{} vs {}", a, b);
            }
        }
    }
}

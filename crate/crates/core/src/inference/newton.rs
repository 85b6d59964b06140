use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SymmetricEigen};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{Coefficients, LogisticPosterior, Predictor};
use crate::dataset::TabularDataset;
use crate::error::{Error, Result};
use crate::math::{sigmoid, softplus};
use crate::priors::{PriorDist, PriorSet};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NewtonConfig {
    pub max_iterations: usize,
    /// Converged when the gradient max-norm drops below this.
    pub gradient_tolerance: f64,
    pub max_halvings: usize,
}

impl Default for NewtonConfig {
    fn default() -> Self {
        NewtonConfig {
            max_iterations: 100,
            gradient_tolerance: 1e-8,
            max_halvings: 50,
        }
    }
}

/// Penalized logistic log-likelihood with independent Gaussian penalties
/// `-(prec_k / 2) (theta_k - mean_k)^2`; intercept is the last coordinate.
struct Objective<'a> {
    x: &'a DMatrix<f64>,
    y: Vec<f64>,
    mean: Vec<f64>,
    prec: Vec<f64>,
}

impl Objective<'_> {
    fn d(&self) -> usize {
        self.x.ncols()
    }

    fn eta(&self, theta: &DVector<f64>) -> DVector<f64> {
        let d = self.d();
        let mut z = self.x * theta.rows(0, d);
        z.add_scalar_mut(theta[d]);
        z
    }

    fn value(&self, theta: &DVector<f64>) -> f64 {
        let z = self.eta(theta);
        let ll: f64 = z
            .iter()
            .zip(&self.y)
            .map(|(&z, &y)| y * z - softplus(z))
            .sum();
        let pen: f64 = (0..theta.len())
            .map(|k| 0.5 * self.prec[k] * (theta[k] - self.mean[k]).powi(2))
            .sum();
        ll - pen
    }

    /// Gradient and Hessian of the negated objective.
    fn grad_hessian(&self, theta: &DVector<f64>) -> (DVector<f64>, DMatrix<f64>) {
        let d = self.d();
        let n = self.x.nrows();
        let z = self.eta(theta);
        let mut resid = DVector::zeros(n);
        let mut w = DVector::zeros(n);
        for i in 0..n {
            let p = sigmoid(z[i]);
            resid[i] = self.y[i] - p;
            w[i] = p * (1.0 - p);
        }
        let mut g = DVector::zeros(d + 1);
        g.rows_mut(0, d).copy_from(&self.x.tr_mul(&resid));
        g[d] = resid.sum();

        // Augmented design [X | 1].
        let mut xa = DMatrix::from_element(n, d + 1, 1.0);
        xa.columns_mut(0, d).copy_from(self.x);
        let mut xw = xa.clone();
        for i in 0..n {
            xw.row_mut(i).scale_mut(w[i]);
        }
        let mut h = xa.tr_mul(&xw);
        for k in 0..=d {
            g[k] -= self.prec[k] * (theta[k] - self.mean[k]);
            h[(k, k)] += self.prec[k];
        }
        (g, h)
    }

    fn factor(h: DMatrix<f64>) -> Result<Cholesky<f64, Dyn>> {
        match Cholesky::new(h.clone()) {
            Some(c) => Ok(c),
            None => {
                let eig = SymmetricEigen::new(h).eigenvalues;
                let min = eig.iter().copied().fold(f64::INFINITY, f64::min);
                Err(Error::SingularHessian { eigenvalue: min })
            }
        }
    }

    /// Damped Newton ascent from `start`. Returns the optimum and the
    /// Cholesky factor of the negative Hessian there.
    fn maximize(
        &self,
        start: DVector<f64>,
        cfg: &NewtonConfig,
    ) -> Result<(DVector<f64>, Cholesky<f64, Dyn>)> {
        let mut theta = start;
        let mut f = self.value(&theta);
        if !f.is_finite() {
            return Err(Error::NonFinite("objective at the starting point".into()));
        }
        let mut grad_norm = f64::INFINITY;
        for _ in 0..cfg.max_iterations {
            let (g, h) = self.grad_hessian(&theta);
            grad_norm = g.amax();
            if !grad_norm.is_finite() {
                return Err(Error::NonFinite("gradient".into()));
            }
            if grad_norm < cfg.gradient_tolerance {
                let chol = Self::factor(h)?;
                return Ok((theta, chol));
            }
            let step = Self::factor(h)?.solve(&g);
            let mut t = 1.0;
            let mut moved = false;
            for _ in 0..=cfg.max_halvings {
                let cand = &theta + &step * t;
                let fc = self.value(&cand);
                if fc.is_finite() && fc >= f {
                    theta = cand;
                    f = fc;
                    moved = true;
                    break;
                }
                t *= 0.5;
            }
            if !moved {
                break;
            }
        }
        Err(Error::NonConvergence {
            iterations: cfg.max_iterations,
            grad_norm,
        })
    }
}

/// Gaussian approximation at the posterior mode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LaplaceFit {
    pub map: Coefficients,
    /// Inverse negative Hessian at the mode, `(d+1) x (d+1)`, intercept last.
    pub covariance: DMatrix<f64>,
    /// Seed and count for the draws used by [`Predictor::predict_proba`].
    pub seed: u64,
    pub predictive_draws: usize,
}

pub fn laplace_fit(
    train: &TabularDataset,
    priors: &PriorSet,
    cfg: &NewtonConfig,
    seed: u64,
) -> Result<LaplaceFit> {
    let post = LogisticPosterior::from_dataset(train, priors)?;
    laplace_fit_posterior(&post, train, cfg, seed)
}

fn laplace_fit_posterior(
    post: &LogisticPosterior,
    train: &TabularDataset,
    cfg: &NewtonConfig,
    seed: u64,
) -> Result<LaplaceFit> {
    let mut mean = Vec::new();
    let mut prec = Vec::new();
    for p in post.priors() {
        match *p {
            PriorDist::Normal { mu, sigma } => {
                mean.push(mu);
                prec.push(1.0 / (sigma * sigma));
            }
            PriorDist::Uniform { .. } => {
                return Err(Error::Config(
                    "Laplace approximation needs normal priors; use NUTS for uniform priors".into(),
                ))
            }
        }
    }
    let obj = Objective {
        x: &train.x,
        y: train.labels_f64(),
        mean: mean.clone(),
        prec,
    };
    let (map, chol) = obj.maximize(DVector::from_vec(mean), cfg)?;
    Ok(LaplaceFit {
        map: Coefficients::from_slice(map.as_slice()),
        covariance: chol.inverse(),
        seed,
        predictive_draws: 1000,
    })
}

/// Maximum likelihood with a ridge penalty `(ridge / 2) |beta|^2` on the
/// slopes; the intercept is unpenalized.
pub fn mle_fit(train: &TabularDataset, ridge: f64, cfg: &NewtonConfig) -> Result<Coefficients> {
    if !train.has_both_classes() {
        return Err(Error::SingleClass);
    }
    if !(ridge >= 0.0) {
        return Err(Error::Config(format!(
            "ridge must be non-negative, got {ridge}"
        )));
    }
    let d = train.n_features();
    let mut prec = vec![ridge; d];
    prec.push(0.0);
    let obj = Objective {
        x: &train.x,
        y: train.labels_f64(),
        mean: vec![0.0; d + 1],
        prec,
    };
    let (theta, _) = obj.maximize(DVector::zeros(d + 1), cfg)?;
    Ok(Coefficients::from_slice(theta.as_slice()))
}

impl Predictor for LaplaceFit {
    fn predict_proba(&self, x: &DMatrix<f64>) -> Result<Vec<f64>> {
        let dim = self.map.dim();
        if x.ncols() + 1 != dim {
            return Err(Error::DimensionMismatch {
                expected: dim - 1,
                got: x.ncols(),
            });
        }
        let l = Cholesky::new(self.covariance.clone())
            .ok_or(Error::SingularHessian { eigenvalue: 0.0 })?
            .l();
        let mean = DVector::from_vec(self.map.to_vec());
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let mut acc = vec![0.0; x.nrows()];
        let draws = self.predictive_draws.max(1);
        for _ in 0..draws {
            let z = DVector::from_fn(dim, |_, _| StandardNormal.sample(&mut rng));
            let theta = &mean + &l * z;
            let c = Coefficients::from_slice(theta.as_slice());
            for (a, p) in acc.iter_mut().zip(c.predict_proba(x)?) {
                *a += p;
            }
        }
        Ok(acc.into_iter().map(|a| a / draws as f64).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::FeatureMeta;
    use crate::priors::{FeaturePrior, PriorMeta};

    fn priors(dists: &[PriorDist], intercept: PriorDist) -> PriorSet {
        PriorSet::new(
            dists
                .iter()
                .enumerate()
                .map(|(j, &d)| FeaturePrior {
                    feature: format!("x{j}"),
                    dist: d,
                })
                .collect(),
            intercept,
            PriorMeta::default(),
        )
        .unwrap()
    }

    #[test]
    fn prior_only_posterior() {
        let ds = TabularDataset::new(
            "empty",
            DMatrix::zeros(0, 2),
            vec![],
            vec![FeatureMeta::numeric("x0"), FeatureMeta::numeric("x1")],
            "t",
        )
        .unwrap();
        let ps = priors(
            &[PriorDist::normal(0.5, 0.3), PriorDist::normal(-2.0, 1.5)],
            PriorDist::normal(1.0, 2.0),
        );
        let fit = laplace_fit(&ds, &ps, &NewtonConfig::default(), 0).unwrap();
        assert_eq!(fit.map.to_vec(), vec![0.5, -2.0, 1.0]);
        let expected = DMatrix::from_diagonal(&DVector::from_vec(vec![0.09, 2.25, 4.0]));
        assert!((fit.covariance - expected).amax() < 1e-12);
    }

    #[test]
    fn one_row_matches_bisection() {
        // x = 1, y = 1, N(0,1) on slope and intercept. By symmetry the mode
        // has slope = intercept = t solving t = sigmoid(-2t).
        let ds = TabularDataset::from_rows(&[vec![1.0]], vec![1]).unwrap();
        let ps = priors(&[PriorDist::normal(0.0, 1.0)], PriorDist::normal(0.0, 1.0));
        let fit = laplace_fit(&ds, &ps, &NewtonConfig::default(), 0).unwrap();
        let g = |t: f64| sigmoid(-2.0 * t) - t;
        let (mut a, mut b) = (0.0f64, 1.0f64);
        for _ in 0..200 {
            let m = 0.5 * (a + b);
            if g(m) > 0.0 {
                a = m;
            } else {
                b = m;
            }
        }
        let t = 0.5 * (a + b);
        // Root of t = sigmoid(-2t), solved independently with Brent's method.
        assert!((t - 0.337_415_807_171_199_7).abs() < 1e-9);
        assert!((fit.map.beta[0] - t).abs() < 1e-6);
        assert!((fit.map.intercept - t).abs() < 1e-6);
    }

    #[test]
    fn uniform_prior_rejected() {
        let ds = TabularDataset::from_rows(&[vec![1.0], vec![0.0]], vec![1, 0]).unwrap();
        let ps = priors(
            &[PriorDist::uniform(-1.0, 1.0)],
            PriorDist::normal(0.0, 1.0),
        );
        assert!(matches!(
            laplace_fit(&ds, &ps, &NewtonConfig::default(), 0),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn mle_zero_information() {
        let rows = vec![vec![1.0], vec![1.0], vec![-1.0], vec![-1.0]];
        let ds = TabularDataset::from_rows(&rows, vec![1, 0, 1, 0]).unwrap();
        let c = mle_fit(&ds, 1e-6, &NewtonConfig::default()).unwrap();
        assert!(c.beta[0].abs() < 1e-9);
        assert!(c.intercept.abs() < 1e-9);
    }

    #[test]
    fn mle_separable_is_finite() {
        let rows = vec![vec![-2.0], vec![-1.0], vec![1.0], vec![2.0]];
        let ds = TabularDataset::from_rows(&rows, vec![0, 0, 1, 1]).unwrap();
        let c = mle_fit(&ds, 1e-6, &NewtonConfig::default()).unwrap();
        assert!(c.beta[0].is_finite() && c.beta[0] > 1.0);
        let p = c.predict_proba(&ds.x).unwrap();
        assert!(p[0] < p[1] && p[1] < p[2] && p[2] < p[3]);
    }

    #[test]
    fn mle_single_class() {
        let ds = TabularDataset::from_rows(&[vec![1.0], vec![2.0]], vec![1, 1]).unwrap();
        assert!(matches!(
            mle_fit(&ds, 1e-6, &NewtonConfig::default()),
            Err(Error::SingleClass)
        ));
    }

    #[test]
    fn non_convergence_reported() {
        let rows = vec![vec![-2.0], vec![-1.0], vec![1.0], vec![2.0]];
        let ds = TabularDataset::from_rows(&rows, vec![0, 1, 0, 1]).unwrap();
        let cfg = NewtonConfig {
            max_iterations: 1,
            gradient_tolerance: 0.0,
            ..NewtonConfig::default()
        };
        assert!(matches!(
            mle_fit(&ds, 1e-6, &cfg),
            Err(Error::NonConvergence { .. })
        ));
    }

    #[test]
    fn collinear_without_penalty_is_singular() {
        let rows = vec![
            vec![1.0, 1.0],
            vec![2.0, 2.0],
            vec![3.0, 3.0],
            vec![0.0, 0.0],
        ];
        let ds = TabularDataset::from_rows(&rows, vec![0, 1, 0, 1]).unwrap();
        assert!(matches!(
            mle_fit(&ds, 0.0, &NewtonConfig::default()),
            Err(Error::SingularHessian { .. })
        ));
    }
}

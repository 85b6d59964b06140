//! Convergence diagnostics over chain-major draws.

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

fn sample_variance(xs: &[f64]) -> f64 {
    let m = mean(xs);
    xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (xs.len() as f64 - 1.0)
}

/// Biased autocovariance for lags `0..n`.
fn autocovariance(xs: &[f64]) -> Vec<f64> {
    let n = xs.len();
    let m = mean(xs);
    let c: Vec<f64> = xs.iter().map(|x| x - m).collect();
    (0..n)
        .map(|lag| {
            c[..n - lag]
                .iter()
                .zip(&c[lag..])
                .map(|(a, b)| a * b)
                .sum::<f64>()
                / n as f64
        })
        .collect()
}

/// Multi-chain effective sample size with Geyer's initial monotone sequence
/// estimator, following Stan's `compute_effective_sample_size`.
///
/// Returns NaN for fewer than 4 draws per chain or a constant chain.
pub fn effective_sample_size(chains: &[Vec<f64>]) -> f64 {
    let m = chains.len();
    if m == 0 {
        return f64::NAN;
    }
    let n = chains.iter().map(Vec::len).min().unwrap_or(0);
    if n < 4 {
        return f64::NAN;
    }
    let chains: Vec<&[f64]> = chains.iter().map(|c| &c[..n]).collect();
    let acov: Vec<Vec<f64>> = chains.iter().map(|c| autocovariance(c)).collect();
    let chain_mean: Vec<f64> = chains.iter().map(|c| mean(c)).collect();
    let nf = n as f64;
    let chain_var: Vec<f64> = acov.iter().map(|a| a[0] * nf / (nf - 1.0)).collect();
    if chain_var.iter().any(|v| !(*v > 0.0)) {
        return f64::NAN;
    }
    let mean_var = mean(&chain_var);
    let mut var_plus = mean_var * (nf - 1.0) / nf;
    if m > 1 {
        var_plus += sample_variance(&chain_mean);
    }
    let lag_mean = |t: usize| acov.iter().map(|a| a[t]).sum::<f64>() / m as f64;

    let mut rho = vec![0.0; n];
    let mut rho_even = 1.0;
    let mut rho_odd = 1.0 - (mean_var - lag_mean(1)) / var_plus;
    rho[0] = rho_even;
    rho[1] = rho_odd;
    let mut t = 1;
    while t < n - 5 && rho_even + rho_odd > 0.0 {
        rho_even = 1.0 - (mean_var - lag_mean(t + 1)) / var_plus;
        rho_odd = 1.0 - (mean_var - lag_mean(t + 2)) / var_plus;
        if rho_even + rho_odd >= 0.0 {
            rho[t + 1] = rho_even;
            rho[t + 2] = rho_odd;
        }
        t += 2;
    }
    let max_t = t;
    if rho_even > 0.0 {
        rho[max_t + 1] = rho_even;
    }

    // Make the sequence of paired sums monotone.
    let mut t = 1;
    while t + 4 <= max_t {
        if rho[t + 1] + rho[t + 2] > rho[t - 1] + rho[t] {
            rho[t + 1] = (rho[t - 1] + rho[t]) / 2.0;
            rho[t + 2] = rho[t + 1];
        }
        t += 2;
    }

    let total = (m * n) as f64;
    let mut tau = -1.0 + 2.0 * rho[..=max_t].iter().sum::<f64>() + rho[max_t + 1];
    tau = tau.max(1.0 / total.log10());
    total / tau
}

/// Split R-hat: each chain is halved (a middle draw is dropped for odd
/// lengths) and the between/within variance ratio is computed over the halves.
pub fn split_rhat(chains: &[Vec<f64>]) -> f64 {
    let n = chains.iter().map(Vec::len).min().unwrap_or(0);
    let half = n / 2;
    if chains.is_empty() || half < 2 {
        return f64::NAN;
    }
    let mut parts: Vec<&[f64]> = Vec::with_capacity(2 * chains.len());
    for c in chains {
        parts.push(&c[..half]);
        parts.push(&c[n - half..n]);
    }
    let means: Vec<f64> = parts.iter().map(|p| mean(p)).collect();
    let w = mean(&parts.iter().map(|p| sample_variance(p)).collect::<Vec<_>>());
    let nf = half as f64;
    let b = nf * sample_variance(&means);
    if !(w > 0.0) {
        return f64::NAN;
    }
    let var_plus = (nf - 1.0) / nf * w + b / nf;
    (var_plus / w).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn iid(chains: usize, n: usize, seed: u64) -> Vec<Vec<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..chains)
            .map(|_| (0..n).map(|_| rng.sample(StandardNormal)).collect())
            .collect()
    }

    #[test]
    fn iid_draws_have_full_ess_and_unit_rhat() {
        let c = iid(4, 1000, 3);
        let ess = effective_sample_size(&c);
        assert!(ess > 3000.0 && ess < 5000.0, "{ess}");
        let r = split_rhat(&c);
        assert!((r - 1.0).abs() < 0.01, "{r}");
    }

    #[test]
    fn autocorrelated_draws_have_low_ess() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let c: Vec<Vec<f64>> = (0..4)
            .map(|_| {
                let mut x = 0.0;
                (0..1000)
                    .map(|_| {
                        x = 0.9 * x + rng.sample::<f64, _>(StandardNormal);
                        x
                    })
                    .collect()
            })
            .collect();
        // AR(1) with phi = 0.9 has ESS ~ N (1 - phi) / (1 + phi) ~ 210.
        let ess = effective_sample_size(&c);
        assert!(ess > 120.0 && ess < 350.0, "{ess}");
    }

    #[test]
    fn shifted_chains_inflate_rhat() {
        let mut c = iid(4, 500, 9);
        for x in c[0].iter_mut() {
            *x += 3.0;
        }
        assert!(split_rhat(&c) > 1.1);
    }

    #[test]
    fn degenerate_inputs() {
        assert!(effective_sample_size(&[vec![1.0; 100]]).is_nan());
        assert!(effective_sample_size(&[vec![1.0, 2.0]]).is_nan());
        assert!(split_rhat(&[vec![1.0, 2.0, 3.0]]).is_nan());
    }
}

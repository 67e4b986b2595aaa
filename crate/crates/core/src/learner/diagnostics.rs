//! Convergence diagnostics over per-chain draw sequences.

fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

fn sample_var(x: &[f64]) -> f64 {
    let m = mean(x);
    x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (x.len() as f64 - 1.0)
}

fn split(chains: &[&[f64]]) -> Vec<Vec<f64>> {
    let mut out = Vec::with_capacity(2 * chains.len());
    for c in chains {
        let half = c.len() / 2;
        out.push(c[..half].to_vec());
        out.push(c[c.len() - half..].to_vec());
    }
    out
}

fn is_constant(chains: &[&[f64]]) -> bool {
    let first = chains.first().and_then(|c| c.first()).copied();
    chains.iter().all(|c| c.iter().all(|v| Some(*v) == first))
}

/// Split potential scale reduction. NaN when fewer than two draws per half.
pub fn split_rhat(chains: &[&[f64]]) -> f64 {
    if chains.is_empty() || chains.iter().any(|c| c.len() < 4) {
        return f64::NAN;
    }
    if is_constant(chains) {
        return 1.0;
    }
    let halves = split(chains);
    let n = halves[0].len() as f64;
    let means: Vec<f64> = halves.iter().map(|h| mean(h)).collect();
    let w = mean(&halves.iter().map(|h| sample_var(h)).collect::<Vec<_>>());
    let b_over_n = sample_var(&means);
    let var_plus = (n - 1.0) / n * w + b_over_n;
    (var_plus / w).sqrt()
}

/// Biased autocovariance at `lag`.
fn autocov(x: &[f64], m: f64, lag: usize) -> f64 {
    let n = x.len();
    (0..n - lag).map(|i| (x[i] - m) * (x[i + lag] - m)).sum::<f64>() / n as f64
}

/// Effective sample size over split chains with Geyer's initial monotone
/// sequence truncation.
pub fn ess(chains: &[&[f64]]) -> f64 {
    if chains.is_empty() || chains.iter().any(|c| c.len() < 4) {
        return f64::NAN;
    }
    let total: usize = chains.iter().map(|c| c.len() / 2 * 2).sum();
    if is_constant(chains) {
        return total as f64;
    }
    let halves = split(chains);
    let m = halves.len();
    let n = halves[0].len();
    let means: Vec<f64> = halves.iter().map(|h| mean(h)).collect();
    let acov = |lag: usize| -> f64 {
        halves
            .iter()
            .zip(&means)
            .map(|(h, &mu)| autocov(h, mu, lag))
            .sum::<f64>()
            / m as f64
    };
    let nf = n as f64;
    let mean_var = acov(0) * nf / (nf - 1.0);
    let mut var_plus = mean_var * (nf - 1.0) / nf;
    if m > 1 {
        var_plus += sample_var(&means);
    }
    let mut rho = vec![0.0; n];
    rho[0] = 1.0;
    let mut even = 1.0;
    let mut odd = 1.0 - (mean_var - acov(1)) / var_plus;
    rho[1] = odd;
    let mut t = 1;
    while t + 5 < n && even + odd > 0.0 {
        even = 1.0 - (mean_var - acov(t + 1)) / var_plus;
        odd = 1.0 - (mean_var - acov(t + 2)) / var_plus;
        if even + odd >= 0.0 {
            rho[t + 1] = even;
            rho[t + 2] = odd;
        }
        t += 2;
    }
    let max_t = t;
    if odd > 0.0 && max_t + 1 < n {
        rho[max_t + 1] = odd;
    }
    let mut t = 1;
    while t + 2 <= max_t {
        if rho[t + 1] + rho[t + 2] > rho[t - 1] + rho[t] {
            rho[t + 1] = (rho[t - 1] + rho[t]) / 2.0;
            rho[t + 2] = rho[t + 1];
        }
        t += 2;
    }
    let tau = -1.0 + 2.0 * rho[..=max_t.min(n - 1)].iter().sum::<f64>();
    let mn = (m * n) as f64;
    (mn / tau).min(mn * mn.log10())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn iid(seed: u64, n: usize, shift: f64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| rng.sample::<f64, _>(StandardNormal) + shift).collect()
    }

    #[test]
    fn iid_chains_look_converged() {
        let a = iid(1, 1000, 0.0);
        let b = iid(2, 1000, 0.0);
        let r = split_rhat(&[&a, &b]);
        assert!((r - 1.0).abs() < 0.01, "{r}");
        let e = ess(&[&a, &b]);
        assert!(e > 1500.0, "{e}");
    }

    #[test]
    fn shifted_chains_are_flagged() {
        let a = iid(1, 500, 0.0);
        let b = iid(2, 500, 1.0);
        assert!(split_rhat(&[&a, &b]) > 1.1);
    }

    #[test]
    fn autocorrelated_chain_has_small_ess() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut x = 0.0;
        let chain: Vec<f64> = (0..4000)
            .map(|_| {
                x = 0.95 * x + rng.sample::<f64, _>(StandardNormal);
                x
            })
            .collect();
        let e = ess(&[&chain]);
        // AR(1) with phi = 0.95 has ESS about n (1 - phi) / (1 + phi)
        assert!(e > 50.0 && e < 200.0, "{e}");
    }

    #[test]
    fn constant_and_short_inputs() {
        let c = vec![2.0; 10];
        assert_eq!(split_rhat(&[&c, &c]), 1.0);
        assert!(split_rhat(&[&[1.0, 2.0][..]]).is_nan());
    }
}

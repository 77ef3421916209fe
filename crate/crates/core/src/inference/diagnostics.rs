//! Convergence diagnostics: rank-normalized split R-hat and effective sample size.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub max_rhat: f64,
    pub divergences: usize,
    pub min_ess: f64,
}

/// Splits every chain in half (dropping the middle draw of odd lengths).
fn split(chains: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let mut out = Vec::with_capacity(2 * chains.len());
    for c in chains {
        let half = c.len() / 2;
        out.push(c[..half].to_vec());
        out.push(c[c.len() - half..].to_vec());
    }
    out
}

/// Normal scores of the pooled ranks (average ranks for ties).
fn rank_normalize(chains: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let flat: Vec<f64> = chains.iter().flatten().copied().collect();
    let s = flat.len();
    let mut idx: Vec<usize> = (0..s).collect();
    idx.sort_by(|&a, &b| flat[a].total_cmp(&flat[b]));
    let mut ranks = vec![0.0; s];
    let mut i = 0;
    while i < s {
        let mut j = i;
        while j + 1 < s && flat[idx[j + 1]] == flat[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for k in i..=j {
            ranks[idx[k]] = avg;
        }
        i = j + 1;
    }
    let normal = Normal::new(0.0, 1.0).expect("standard normal");
    let mut out = Vec::with_capacity(chains.len());
    let mut k = 0;
    for c in chains {
        out.push(
            c.iter()
                .map(|_| {
                    let r = ranks[k];
                    k += 1;
                    normal.inverse_cdf((r - 0.375) / (s as f64 + 0.25))
                })
                .collect(),
        );
    }
    out
}

fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

fn var(x: &[f64]) -> f64 {
    let m = mean(x);
    x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (x.len() as f64 - 1.0)
}

/// Classic potential scale reduction on already-split chains.
fn rhat_basic(chains: &[Vec<f64>]) -> f64 {
    let n = chains[0].len() as f64;
    let means: Vec<f64> = chains.iter().map(|c| mean(c)).collect();
    let b = n * var(&means);
    let w = mean(&chains.iter().map(|c| var(c)).collect::<Vec<_>>());
    if !(w > 0.0) {
        return 1.0;
    }
    let var_hat = (n - 1.0) / n * w + b / n;
    (var_hat / w).sqrt()
}

fn check(chains: &[Vec<f64>]) -> Result<()> {
    if chains.len() < 2 {
        return Err(Error::TooFewChains(chains.len()));
    }
    let n = chains[0].len();
    if n < 4 || chains.iter().any(|c| c.len() != n) {
        return Err(Error::Config("chains must share a length of at least 4 draws".into()));
    }
    Ok(())
}

fn is_constant(chains: &[Vec<f64>]) -> bool {
    let first = chains[0][0];
    chains.iter().flatten().all(|&v| v == first)
}

/// Rank-normalized split R-hat: the larger of the bulk and folded (tail) values.
/// Constant draws report exactly 1.0.
pub fn rhat(chains: &[Vec<f64>]) -> Result<f64> {
    check(chains)?;
    if is_constant(chains) {
        return Ok(1.0);
    }
    let halves = split(chains);
    let bulk = rhat_basic(&rank_normalize(&halves));
    let mut pooled: Vec<f64> = halves.iter().flatten().copied().collect();
    pooled.sort_by(f64::total_cmp);
    let median = if pooled.len() % 2 == 1 {
        pooled[pooled.len() / 2]
    } else {
        0.5 * (pooled[pooled.len() / 2 - 1] + pooled[pooled.len() / 2])
    };
    let folded: Vec<Vec<f64>> = halves.iter().map(|c| c.iter().map(|v| (v - median).abs()).collect()).collect();
    let tail = rhat_basic(&rank_normalize(&folded));
    Ok(bulk.max(tail))
}

fn autocov(x: &[f64], lag: usize) -> f64 {
    let n = x.len();
    let m = mean(x);
    (0..n - lag).map(|i| (x[i] - m) * (x[i + lag] - m)).sum::<f64>() / n as f64
}

/// Multi-chain ESS with Geyer's initial monotone sequence estimator.
fn ess_basic(chains: &[Vec<f64>]) -> f64 {
    let m = chains.len();
    let n = chains[0].len();
    let total = (m * n) as f64;
    let nf = n as f64;
    let chain_var: Vec<f64> = chains.iter().map(|c| autocov(c, 0) * nf / (nf - 1.0)).collect();
    let mean_var = mean(&chain_var);
    let mut var_plus = mean_var * (nf - 1.0) / nf;
    if m > 1 {
        var_plus += var(&chains.iter().map(|c| mean(c)).collect::<Vec<_>>());
    }
    if !(var_plus > 0.0) {
        return total;
    }
    let rho_at = |lag: usize| -> f64 {
        let ac = mean(&chains.iter().map(|c| autocov(c, lag)).collect::<Vec<_>>());
        1.0 - (mean_var - ac) / var_plus
    };
    let mut rho = vec![0.0; n];
    rho[0] = 1.0;
    let mut rho_even = 1.0;
    let mut rho_odd = rho_at(1);
    rho[1] = rho_odd;
    let mut t = 1;
    while t + 3 < n && rho_even + rho_odd > 0.0 {
        rho_even = rho_at(t + 1);
        rho_odd = rho_at(t + 2);
        if rho_even + rho_odd >= 0.0 {
            rho[t + 1] = rho_even;
            rho[t + 2] = rho_odd;
        }
        t += 2;
    }
    let max_t = t.saturating_sub(2).max(1);
    if rho_even > 0.0 && max_t + 1 < n {
        rho[max_t + 1] = rho_even;
    }
    let mut t = 1;
    while t + 2 <= max_t {
        if rho[t + 1] + rho[t + 2] > rho[t - 1] + rho[t] {
            rho[t + 1] = 0.5 * (rho[t - 1] + rho[t]);
            rho[t + 2] = rho[t + 1];
        }
        t += 2;
    }
    let tail = if max_t + 1 < n { rho[max_t + 1] } else { 0.0 };
    let tau = (-1.0 + 2.0 * rho[..=max_t].iter().sum::<f64>() + tail).max(1.0 / total.log10());
    total / tau
}

/// Bulk effective sample size on rank-normalized split chains, capped at the
/// number of draws.
pub fn ess(chains: &[Vec<f64>]) -> Result<f64> {
    check(chains)?;
    let total = chains.iter().map(Vec::len).sum::<usize>() as f64;
    if is_constant(chains) {
        return Ok(total);
    }
    Ok(ess_basic(&rank_normalize(&split(chains))).min(total))
}

/// Worst-case diagnostics across parameters. `params[k][c]` is the chain `c`
/// trace of parameter `k`.
pub fn diagnostics(params: &[Vec<Vec<f64>>], divergences: usize) -> Result<Diagnostics> {
    if params.is_empty() {
        return Err(Error::Empty("parameters"));
    }
    let mut max_rhat = f64::NEG_INFINITY;
    let mut min_ess = f64::INFINITY;
    for chains in params {
        max_rhat = max_rhat.max(rhat(chains)?);
        min_ess = min_ess.min(ess(chains)?);
    }
    Ok(Diagnostics { max_rhat, divergences, min_ess })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn normal_chain(rng: &mut ChaCha8Rng, n: usize, mu: f64) -> Vec<f64> {
        (0..n).map(|_| mu + <StandardNormal as Distribution<f64>>::sample(&StandardNormal, rng)).collect()
    }

    #[test]
    fn constant_chains_report_unit_rhat() {
        let chains = vec![vec![3.0; 100]; 4];
        assert_eq!(rhat(&chains).unwrap(), 1.0);
        assert_eq!(ess(&chains).unwrap(), 400.0);
    }

    #[test]
    fn separated_chains_have_large_rhat() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let chains = vec![normal_chain(&mut rng, 1000, 0.0), normal_chain(&mut rng, 1000, 10.0)];
        assert!(rhat(&chains).unwrap() > 1.1);
    }

    #[test]
    fn iid_chains_mix() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let chains: Vec<Vec<f64>> = (0..4).map(|_| normal_chain(&mut rng, 1000, 0.0)).collect();
        let r = rhat(&chains).unwrap();
        assert!(r < 1.01, "{r}");
        let e = ess(&chains).unwrap();
        assert!(e > 3000.0 && e <= 4000.0, "{e}");
    }

    #[test]
    fn autocorrelated_chain_has_reduced_ess() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let chains: Vec<Vec<f64>> = (0..4)
            .map(|_| {
                let mut x = 0.0;
                normal_chain(&mut rng, 2000, 0.0)
                    .into_iter()
                    .map(|e| {
                        x = 0.9 * x + e;
                        x
                    })
                    .collect()
            })
            .collect();
        // AR(1) with phi = 0.9: ESS/N = (1 - phi) / (1 + phi)
        let e = ess(&chains).unwrap();
        let expected = 8000.0 * 0.1 / 1.9;
        assert!((e / expected - 1.0).abs() < 0.3, "{e} vs {expected}");
    }

    #[test]
    fn needs_two_chains() {
        assert!(matches!(rhat(&[vec![1.0, 2.0, 3.0, 4.0]]), Err(Error::TooFewChains(1))));
    }
}

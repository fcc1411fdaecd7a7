//! Convergence diagnostics: split potential scale reduction and effective
//! sample size.

use alloc::vec::Vec;

use libm::sqrt;

use crate::util::{mean, variance};

use super::TrendError;

/// Split-chain potential scale reduction factor.
///
/// Each chain is halved, then the usual between/within variance ratio is
/// computed over the split sequences. Equals 1 in the infinite-agreement
/// limit; values above ~1.05 flag disagreement. Constant chains (zero
/// variance everywhere) are treated as converged.
pub fn split_rhat(chains: &[Vec<f64>]) -> Result<f64, TrendError> {
    if chains.len() < 2 || chains.iter().any(|c| c.len() < 4) {
        return Err(TrendError::InsufficientDraws);
    }
    let half = chains.iter().map(|c| c.len()).min().unwrap_or(0) / 2;

    let mut splits: Vec<&[f64]> = Vec::with_capacity(chains.len() * 2);
    for chain in chains {
        splits.push(&chain[..half]);
        splits.push(&chain[chain.len() - half..]);
    }

    let m = splits.len() as f64;
    let n = half as f64;
    let means: Vec<f64> = splits.iter().map(|s| mean(s)).collect();
    let within = splits.iter().map(|s| variance(s)).sum::<f64>() / m;
    let grand = mean(&means);
    let between_over_n = means.iter().map(|x| (x - grand) * (x - grand)).sum::<f64>() / (m - 1.0);

    // Zero-variance guard: identical constant chains are "converged".
    if within < 1e-300 {
        return Ok(if between_over_n < 1e-300 {
            1.0
        } else {
            f64::INFINITY
        });
    }
    let var_plus = (n - 1.0) / n * within + between_over_n;
    Ok(sqrt(var_plus / within))
}

/// Effective sample size across chains.
///
/// Combined-chain autocorrelations with Geyer's initial monotone positive
/// sequence truncation. Used for Monte Carlo standard errors; the estimate
/// is capped at the raw draw count.
pub fn ess(chains: &[Vec<f64>]) -> f64 {
    let m = chains.len();
    let n = chains.iter().map(|c| c.len()).min().unwrap_or(0);
    if m == 0 || n < 4 {
        return (m * n) as f64;
    }

    let chain_means: Vec<f64> = chains.iter().map(|c| mean(&c[..n])).collect();
    let chain_vars: Vec<f64> = chains.iter().map(|c| variance(&c[..n])).collect();
    let w = mean(&chain_vars);
    let grand = mean(&chain_means);
    let b_over_n = if m > 1 {
        chain_means
            .iter()
            .map(|x| (x - grand) * (x - grand))
            .sum::<f64>()
            / (m as f64 - 1.0)
    } else {
        0.0
    };
    let var_plus = (n as f64 - 1.0) / n as f64 * w + b_over_n;
    if var_plus < 1e-300 {
        return (m * n) as f64;
    }

    // Mean within-chain autocovariance at each lag (biased /n estimator).
    let acov = |lag: usize| -> f64 {
        let mut total = 0.0;
        for (chain, cm) in chains.iter().zip(&chain_means) {
            let mut s = 0.0;
            for i in 0..n - lag {
                s += (chain[i] - cm) * (chain[i + lag] - cm);
            }
            total += s / n as f64;
        }
        total / m as f64
    };

    let mut rho_sum = 0.0;
    let mut prev_pair = f64::INFINITY;
    let mut lag = 1usize;
    while lag + 1 < n {
        let rho_a = 1.0 - (w - acov(lag)) / var_plus;
        let rho_b = 1.0 - (w - acov(lag + 1)) / var_plus;
        let mut pair = rho_a + rho_b;
        if pair < 0.0 {
            break;
        }
        // Enforce monotone non-increasing pair sums.
        pair = pair.min(prev_pair);
        prev_pair = pair;
        rho_sum += pair;
        lag += 2;
    }

    let tau = (1.0 + 2.0 * rho_sum).max(1e-12);
    let total = (m * n) as f64;
    (total / tau).min(total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::SeededRng;
    use alloc::vec;

    #[test]
    fn constant_chains_give_unity() {
        let chains = vec![vec![3.0; 100], vec![3.0; 100]];
        assert_eq!(split_rhat(&chains).unwrap(), 1.0);
    }

    #[test]
    fn iid_chains_near_one() {
        let draws = |stream: u64| {
            let mut rng = SeededRng::with_stream(17, stream);
            (0..10_000)
                .map(|_| rng.standard_normal())
                .collect::<Vec<f64>>()
        };
        let chains = vec![draws(0), draws(1)];
        let rhat = split_rhat(&chains).unwrap();
        assert!(rhat < 1.01, "rhat {rhat}");

        // Oracle: the textbook formula evaluated directly on the same
        // split arrays.
        let half = 5000;
        let splits: Vec<&[f64]> = chains
            .iter()
            .flat_map(|c| [&c[..half], &c[half..]])
            .collect();
        let means: Vec<f64> = splits.iter().map(|s| mean(s)).collect();
        let w = splits.iter().map(|s| variance(s)).sum::<f64>() / 4.0;
        let grand = mean(&means);
        let b_over_n = means.iter().map(|x| (x - grand) * (x - grand)).sum::<f64>() / 3.0;
        let oracle = sqrt(((half as f64 - 1.0) / half as f64 * w + b_over_n) / w);
        assert!((rhat - oracle).abs() < 1e-12);
    }

    #[test]
    fn disjoint_chains_flagged() {
        let mut rng = SeededRng::new(4);
        let a: Vec<f64> = (0..500).map(|_| rng.standard_normal()).collect();
        let b: Vec<f64> = (0..500).map(|_| 10.0 + rng.standard_normal()).collect();
        let rhat = split_rhat(&[a, b]).unwrap();
        assert!(rhat > 1.1, "rhat {rhat}");
    }

    #[test]
    fn too_few_draws_rejected() {
        assert!(matches!(
            split_rhat(&[vec![1.0, 2.0, 3.0], vec![1.0, 2.0, 3.0]]),
            Err(TrendError::InsufficientDraws)
        ));
        assert!(matches!(
            split_rhat(&[vec![1.0, 2.0, 3.0, 4.0]]),
            Err(TrendError::InsufficientDraws)
        ));
    }

    #[test]
    fn ess_close_to_n_for_iid() {
        let mut rng = SeededRng::new(9);
        let chains: Vec<Vec<f64>> = (0..4)
            .map(|_| (0..2000).map(|_| rng.standard_normal()).collect())
            .collect();
        let e = ess(&chains);
        assert!(e > 4000.0, "iid ess unexpectedly low: {e}");
        assert!(e <= 8000.0);
    }

    #[test]
    fn ess_small_for_sticky_chains() {
        // AR(1) with strong autocorrelation.
        let mut rng = SeededRng::new(14);
        let chains: Vec<Vec<f64>> = (0..4)
            .map(|_| {
                let mut x = 0.0;
                (0..2000)
                    .map(|_| {
                        x = 0.95 * x + rng.standard_normal() * 0.1;
                        x
                    })
                    .collect()
            })
            .collect();
        let e = ess(&chains);
        assert!(e < 1500.0, "sticky ess too high: {e}");
    }
}

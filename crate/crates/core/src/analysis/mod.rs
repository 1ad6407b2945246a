//! Reward-distribution mathematics and chain diagnostics.
//!
//! - [`mixture`]: two-component Normal mixture fitted by EM.
//! - [`evt`]: best-of-n max-reward law, its Gumbel approximation, the
//!   reward law under the tilted target, and the `beta(n)` correspondence.
//! - [`tune`]: bisection on `beta` for a target acceptance rate.
//! - [`diagnostics`]: exact transition kernels on enumerable spaces,
//!   stationarity residuals, total variation curves.

pub mod diagnostics;
pub mod evt;
pub mod mixture;
pub mod tune;

pub use diagnostics::{
    build_kernel, chain_report, empirical_tv, kernel_stationarity, ChainReport, Kernel,
    StationarityReport,
};
pub use evt::{
    aligned_reward_mixture, beta_star, bon_max_density, gumbel_approx, gumbel_cdf,
    ks_statistic, AlignedRewardMixture, DiscretePmf, GumbelApprox,
};
pub use mixture::fit_reward_mixture;
pub use tune::{tune_beta, TuneOptions, TuneOutcome};

/// `log sum exp(x)`, stable for large magnitudes. `-inf` for empty input.
pub fn logsumexp(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    if m == f64::INFINITY {
        return m;
    }
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

pub fn normal_log_pdf(x: f64, mean: f64, sigma: f64) -> f64 {
    let z = (x - mean) / sigma;
    -0.5 * z * z - sigma.ln() - 0.5 * (2.0 * std::f64::consts::PI).ln()
}

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Population variance.
pub fn variance(xs: &[f64]) -> f64 {
    let m = mean(xs);
    xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / xs.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn logsumexp_is_stable() {
        assert!((logsumexp(&[1000.0, 1000.0]) - (1000.0 + 2f64.ln())).abs() < 1e-12);
        assert!((logsumexp(&[-1000.0, -1000.0]) - (-1000.0 + 2f64.ln())).abs() < 1e-12);
        assert_eq!(logsumexp(&[]), f64::NEG_INFINITY);
        assert!((logsumexp(&[0.0, f64::NEG_INFINITY]) - 0.0).abs() < 1e-15);
    }

    #[test]
    fn normal_pdf_integrates() {
        let h = 1e-3;
        let total: f64 = (-8000..8000)
            .map(|k| normal_log_pdf(k as f64 * h, 0.3, 0.7).exp() * h)
            .sum();
        assert!((total - 1.0).abs() < 1e-9);
    }
}

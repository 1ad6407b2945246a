//! Best-of-n reward extremes and their link to the tilted target.
//!
//! With rewards drawn from a two-component Normal mixture, the tail of the
//! max over `n` draws is governed by the dominant (largest-variance)
//! component with effective count `n_d = w_d·n`:
//!
//! ```text
//! a_n = mu_d + sigma_d·(sqrt(2 ln n_d) - (ln ln n_d + ln 4π) / (2 sqrt(2 ln n_d)))
//! b_n = sigma_d / sqrt(2 ln n_d)
//! ```
//!
//! Tilting by `exp(r/beta)` shifts each component mean by `sigma_i²/beta`, so
//! choosing `beta* = sigma_d² / (a_n - mu_d)` puts the dominant tilted mode on
//! `a_n`.

use rand::Rng;
use rand_distr::StandardNormal;

use super::logsumexp;
use crate::error::{Error, Result};
use crate::rng::seeded;
use crate::types::{BetaParam, MixtureFit};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GumbelApprox {
    pub location: f64,
    pub scale: f64,
    pub n_d: f64,
}

/// `sqrt(2 ln m) - (ln ln m + ln 4π) / (2 sqrt(2 ln m))`, the standardized
/// location of the max of `m` standard normals.
fn standardized_location(m: f64) -> f64 {
    let l = m.ln();
    let s = (2.0 * l).sqrt();
    s - (l.ln() + (4.0 * std::f64::consts::PI).ln()) / (2.0 * s)
}

fn effective_count(fit: &MixtureFit, n: u64) -> Result<f64> {
    let n_d = fit.dominant_weight() * n as f64;
    if n_d <= std::f64::consts::E {
        return Err(Error::SampleCountTooSmall {
            n_d,
            min_n: min_sample_count(fit),
        });
    }
    Ok(n_d)
}

/// Smallest `n` with `n·w_d > e` and a positive standardized location.
fn min_sample_count(fit: &MixtureFit) -> u64 {
    let w = fit.dominant_weight();
    let mut n = (std::f64::consts::E / w).floor().max(1.0) as u64;
    while !(w * n as f64 > std::f64::consts::E && standardized_location(w * n as f64) > 0.0) {
        n += 1;
    }
    n
}

pub fn gumbel_approx(fit: &MixtureFit, n: u64) -> Result<GumbelApprox> {
    let n_d = effective_count(fit, n)?;
    let sigma = fit.dominant_sigma();
    Ok(GumbelApprox {
        location: fit.dominant_mean() + sigma * standardized_location(n_d),
        scale: sigma / (2.0 * n_d.ln()).sqrt(),
        n_d,
    })
}

/// Tilt temperature whose dominant tilted mode sits at the best-of-n location.
pub fn beta_star(fit: &MixtureFit, n: u64) -> Result<BetaParam> {
    let n_d = effective_count(fit, n)?;
    let denom = standardized_location(n_d);
    if denom <= 0.0 {
        return Err(Error::SampleCountTooSmall {
            n_d,
            min_n: min_sample_count(fit),
        });
    }
    BetaParam::new(fit.dominant_sigma() / denom)
}

/// Standard Gumbel (maximum) CDF.
pub fn gumbel_cdf(z: f64) -> f64 {
    (-(-z).exp()).exp()
}

/// Kolmogorov-Smirnov distance between a sample and a continuous CDF.
pub fn ks_statistic(samples: &[f64], cdf: impl Fn(f64) -> f64) -> f64 {
    let mut xs = samples.to_vec();
    xs.sort_by(f64::total_cmp);
    let n = xs.len() as f64;
    xs.iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = cdf(x);
            ((i + 1) as f64 / n - f).max(f - i as f64 / n)
        })
        .fold(0.0, f64::max)
}

/// `trials` draws of the max of `n` standard normals, standardized by the
/// Gumbel location and scale for `n`.
pub fn simulate_normalized_max(n: u64, trials: usize, seed: u64) -> Result<Vec<f64>> {
    let fit = MixtureFit::single(0.0, 1.0)?;
    let g = gumbel_approx(&fit, n)?;
    let mut rng = seeded(seed);
    Ok((0..trials)
        .map(|_| {
            let m = (0..n)
                .map(|_| rng.sample::<f64, _>(StandardNormal))
                .fold(f64::NEG_INFINITY, f64::max);
            (m - g.location) / g.scale
        })
        .collect())
}

/// Finite reward law with sorted, distinct support.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscretePmf {
    support: Vec<f64>,
    probs: Vec<f64>,
}

impl DiscretePmf {
    /// Sorts by value and merges duplicate support points.
    pub fn new(points: &[(f64, f64)]) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::EmptySamples);
        }
        if points.iter().any(|(v, p)| !v.is_finite() || !(p.is_finite() && *p >= 0.0)) {
            return Err(Error::InvalidArgument("pmf values must be finite, probabilities >= 0".into()));
        }
        let total: f64 = points.iter().map(|(_, p)| p).sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::Unnormalized(total));
        }
        let mut sorted = points.to_vec();
        sorted.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut support: Vec<f64> = Vec::new();
        let mut probs: Vec<f64> = Vec::new();
        for (v, p) in sorted {
            if support.last() == Some(&v) {
                *probs.last_mut().expect("parallel vectors") += p;
            } else {
                support.push(v);
                probs.push(p);
            }
        }
        Ok(Self { support, probs })
    }

    pub fn support(&self) -> &[f64] {
        &self.support
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn prob_of(&self, value: f64) -> f64 {
        self.support
            .iter()
            .position(|v| *v == value)
            .map_or(0.0, |i| self.probs[i])
    }

    /// Half the L1 distance, over the union of supports.
    pub fn tv(&self, other: &DiscretePmf) -> f64 {
        let mut l1 = 0.0;
        for (v, p) in self.support.iter().zip(&self.probs) {
            l1 += (p - other.prob_of(*v)).abs();
        }
        for (v, q) in other.support.iter().zip(&other.probs) {
            if self.prob_of(*v) == 0.0 && !self.support.contains(v) {
                l1 += q;
            }
        }
        0.5 * l1
    }
}

/// Law of the max of `n` i.i.d. draws: `P(max = r) = F(r)^n - F(r^-)^n`.
pub fn bon_max_density(pmf: &DiscretePmf, n: u32) -> Result<DiscretePmf> {
    if n == 0 {
        return Err(Error::InvalidArgument("n must be at least 1".into()));
    }
    let mut cdf_prev = 0.0f64;
    let mut points = Vec::with_capacity(pmf.support.len());
    for (v, p) in pmf.support.iter().zip(&pmf.probs) {
        let cdf = (cdf_prev + p).min(1.0);
        points.push((*v, cdf.powi(n as i32) - cdf_prev.powi(n as i32)));
        cdf_prev = cdf;
    }
    // renormalize away rounding in the running CDF
    let total: f64 = points.iter().map(|(_, p)| p).sum();
    for pt in &mut points {
        pt.1 /= total;
    }
    DiscretePmf::new(&points)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AlignedRewardMixture {
    pub weights: [f64; 2],
    pub means: [f64; 2],
    pub sigmas: [f64; 2],
    pub dominant: usize,
}

impl AlignedRewardMixture {
    /// Mode of the dominant tilted component, `mu_d + sigma_d²/beta`.
    pub fn dominant_mode(&self) -> f64 {
        self.means[self.dominant]
    }
}

/// Reward law under the tilted target when base rewards follow `fit`.
pub fn aligned_reward_mixture(fit: &MixtureFit, beta: BetaParam) -> AlignedRewardMixture {
    let b = beta.get();
    let log_c = [0, 1].map(|i| fit.means[i] / b + fit.sigmas[i].powi(2) / (2.0 * b * b));
    let logits = [0, 1].map(|i| fit.weights[i].ln() + log_c[i]);
    let z = logsumexp(&logits);
    AlignedRewardMixture {
        weights: logits.map(|l| (l - z).exp()),
        means: [0, 1].map(|i| fit.means[i] + fit.sigmas[i].powi(2) / b),
        sigmas: fit.sigmas,
        dominant: fit.dominant,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit_fit() -> MixtureFit {
        MixtureFit::single(0.0, 1.0).unwrap()
    }

    #[test]
    fn gumbel_location_scale_at_100() {
        let g = gumbel_approx(&unit_fit(), 100).unwrap();
        // hand evaluation: L = ln 100, s = sqrt(2L)
        let l = 100f64.ln();
        let s = (2.0 * l).sqrt();
        let a = s - (l.ln() + (4.0 * std::f64::consts::PI).ln()) / (2.0 * s);
        assert!((g.location - a).abs() < 1e-9);
        assert!((g.location - 2.3663).abs() < 1e-4);
        assert!((g.scale - 0.3295).abs() < 1e-4);
    }

    #[test]
    fn gumbel_equivariance() {
        let base = MixtureFit::new([0.6, 0.4], [0.0, 1.0], [1.5, 0.5]).unwrap();
        let shifted = MixtureFit::new([0.6, 0.4], [5.0, 6.0], [1.5, 0.5]).unwrap();
        let scaled = MixtureFit::new([0.6, 0.4], [0.0, 1.0], [3.0, 1.0]).unwrap();
        let (g, gs, gk) = (
            gumbel_approx(&base, 500).unwrap(),
            gumbel_approx(&shifted, 500).unwrap(),
            gumbel_approx(&scaled, 500).unwrap(),
        );
        assert!((gs.location - g.location - 5.0).abs() < 1e-12);
        assert!((gk.location - 2.0 * g.location).abs() < 1e-12);
        assert!((gk.scale - 2.0 * g.scale).abs() < 1e-12);
    }

    #[test]
    fn too_few_samples() {
        assert!(matches!(
            gumbel_approx(&unit_fit(), 2),
            Err(Error::SampleCountTooSmall { min_n: 3, .. })
        ));
        assert!(beta_star(&unit_fit(), 2).is_err());
    }

    #[test]
    fn beta_star_values() {
        let b = beta_star(&unit_fit(), 100).unwrap().get();
        assert!((b - 1.0 / 2.3663).abs() < 1e-4);
        assert!((b - 0.42260).abs() < 1e-4);
        let mut prev = f64::INFINITY;
        for n in [100, 1_000, 10_000, 100_000] {
            let b = beta_star(&unit_fit(), n).unwrap().get();
            assert!(b < prev);
            prev = b;
        }
        let double = MixtureFit::single(0.0, 2.0).unwrap();
        assert!((beta_star(&double, 100).unwrap().get() - 2.0 * b_at(100)).abs() < 1e-12);
    }

    fn b_at(n: u64) -> f64 {
        beta_star(&unit_fit(), n).unwrap().get()
    }

    #[test]
    fn mode_matching_identity() {
        let fit = MixtureFit::new([0.3, 0.7], [-1.0, 2.0], [0.5, 1.3]).unwrap();
        for n in [100, 1000, 10_000] {
            let b = beta_star(&fit, n).unwrap();
            let g = gumbel_approx(&fit, n).unwrap();
            let lhs = fit.dominant_sigma().powi(2) / b.get();
            assert!((lhs - (g.location - fit.dominant_mean())).abs() < 1e-12);
            let tilted = aligned_reward_mixture(&fit, b);
            assert!((tilted.dominant_mode() - g.location).abs() < 1e-9);
        }
    }

    /// Oracle: enumerate every ordered n-tuple of support indices.
    fn tuple_max_pmf(pmf: &DiscretePmf, n: u32) -> Vec<f64> {
        let k = pmf.support().len();
        let mut out = vec![0.0; k];
        let total = k.pow(n);
        for mut code in 0..total {
            let (mut p, mut hi) = (1.0, 0);
            for _ in 0..n {
                let i = code % k;
                code /= k;
                p *= pmf.probs()[i];
                hi = hi.max(i);
            }
            out[hi] += p;
        }
        out
    }

    #[test]
    fn bon_density_examples() {
        let pmf = DiscretePmf::new(&[(0.0, 0.5), (1.0, 0.5)]).unwrap();
        let m = bon_max_density(&pmf, 2).unwrap();
        assert!((m.prob_of(0.0) - 0.25).abs() < 1e-15);
        assert!((m.prob_of(1.0) - 0.75).abs() < 1e-15);
        assert_eq!(bon_max_density(&pmf, 1).unwrap(), pmf);
        let big = bon_max_density(&pmf, 200).unwrap();
        assert!((big.prob_of(1.0) - 1.0).abs() < 1e-12);
        assert!(matches!(
            DiscretePmf::new(&[(0.0, 0.5), (1.0, 0.4)]),
            Err(Error::Unnormalized(_))
        ));
    }

    #[test]
    fn bon_density_matches_tuple_enumeration() {
        let pmf = DiscretePmf::new(&[(-1.0, 0.1), (0.5, 0.3), (0.7, 0.2), (2.0, 0.25), (3.0, 0.15)]).unwrap();
        for n in 1..=3 {
            let m = bon_max_density(&pmf, n).unwrap();
            for (a, b) in m.probs().iter().zip(tuple_max_pmf(&pmf, n)) {
                assert!((a - b).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn aligned_mixture_examples() {
        let fit = unit_fit();
        let a = aligned_reward_mixture(&fit, BetaParam::new(2.0).unwrap());
        assert!((a.means[0] - 0.5).abs() < 1e-12);
        assert_eq!(a.sigmas, fit.sigmas);

        let sym = MixtureFit::new([0.5, 0.5], [0.0, 0.0], [1.0, 1.0]).unwrap();
        let a = aligned_reward_mixture(&sym, BetaParam::new(0.7).unwrap());
        assert!((a.weights[0] - 0.5).abs() < 1e-12);

        let fit = MixtureFit::new([0.5, 0.5], [0.0, 3.0], [2.0, 1.0]).unwrap();
        let a = aligned_reward_mixture(&fit, BetaParam::new(0.01).unwrap());
        assert!(a.weights[0] > 1.0 - 1e-12);
        // log-domain weights survive extreme tilts
        let a = aligned_reward_mixture(&fit, BetaParam::new(1e-6).unwrap());
        assert!(a.weights.iter().all(|w| w.is_finite()));
    }

    #[test]
    fn ks_of_exact_quantiles_is_small() {
        let n = 1000;
        let xs: Vec<f64> = (0..n)
            .map(|i| {
                let u = (i as f64 + 0.5) / n as f64;
                -(-u.ln()).ln()
            })
            .collect();
        assert!(ks_statistic(&xs, gumbel_cdf) <= 0.5 / n as f64 + 1e-12);
    }
}

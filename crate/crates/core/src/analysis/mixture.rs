//! Two-component Normal mixture on scalar rewards, fitted by EM with
//! k-means++ initialization and restarts.

use rand::Rng;

use super::{logsumexp, mean, normal_log_pdf, variance};
use crate::error::{Error, Result};
use crate::rng::seeded;
use crate::types::MixtureFit;

pub const MIN_SAMPLES: usize = 20;
const RESTARTS: usize = 5;
const MAX_ITERS: usize = 500;
const TOL: f64 = 1e-8;
const VARIANCE_FLOOR: f64 = 1e-6;
const INIT_SEED: u64 = 0x5EED_0E11;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MixtureReport {
    pub fit: MixtureFit,
    pub log_likelihood: f64,
    pub iterations: usize,
}

#[derive(Debug, Clone, Copy)]
struct Params {
    w: [f64; 2],
    mu: [f64; 2],
    var: [f64; 2],
}

impl Params {
    fn log_likelihood(&self, xs: &[f64]) -> f64 {
        xs.iter()
            .map(|&x| {
                logsumexp(&[0, 1].map(|k| self.w[k].ln() + normal_log_pdf(x, self.mu[k], self.var[k].sqrt())))
            })
            .sum()
    }
}

pub fn single_gaussian_log_likelihood(xs: &[f64]) -> f64 {
    let (m, s) = (mean(xs), variance(xs).sqrt());
    xs.iter().map(|&x| normal_log_pdf(x, m, s)).sum()
}

fn kmeans_pp_init<R: Rng>(xs: &[f64], floor: f64, rng: &mut R) -> Params {
    let c0 = xs[rng.gen_range(0..xs.len())];
    let d2: Vec<f64> = xs.iter().map(|x| (x - c0) * (x - c0)).collect();
    let total: f64 = d2.iter().sum();
    let mut u = rng.gen::<f64>() * total;
    let mut c1 = xs[xs.len() - 1];
    for (x, d) in xs.iter().zip(&d2) {
        if u < *d {
            c1 = *x;
            break;
        }
        u -= d;
    }
    let mut centers = [c0, c1];
    let mut assign = vec![0usize; xs.len()];
    for _ in 0..100 {
        let mut changed = false;
        for (a, x) in assign.iter_mut().zip(xs) {
            let k = usize::from((x - centers[1]).abs() < (x - centers[0]).abs());
            changed |= *a != k;
            *a = k;
        }
        for (k, c) in centers.iter_mut().enumerate() {
            let members: Vec<f64> = xs.iter().zip(&assign).filter(|(_, a)| **a == k).map(|(x, _)| *x).collect();
            if !members.is_empty() {
                *c = mean(&members);
            }
        }
        if !changed {
            break;
        }
    }
    let mut p = Params { w: [0.5; 2], mu: centers, var: [variance(xs); 2] };
    for k in 0..2 {
        let members: Vec<f64> = xs.iter().zip(&assign).filter(|(_, a)| **a == k).map(|(x, _)| *x).collect();
        if members.len() >= 2 {
            p.w[k] = members.len() as f64 / xs.len() as f64;
            p.var[k] = variance(&members).max(floor);
        }
    }
    let s = p.w[0] + p.w[1];
    p.w = [p.w[0] / s, p.w[1] / s];
    p
}

fn run_em(xs: &[f64], mut p: Params, floor: f64) -> (Params, f64, usize) {
    let n = xs.len() as f64;
    let mut ll = p.log_likelihood(xs);
    let mut resp = vec![[0.0f64; 2]; xs.len()];
    for iter in 1..=MAX_ITERS {
        for (r, &x) in resp.iter_mut().zip(xs) {
            let l = [0, 1].map(|k| p.w[k].ln() + normal_log_pdf(x, p.mu[k], p.var[k].sqrt()));
            let z = logsumexp(&l);
            *r = [(l[0] - z).exp(), (l[1] - z).exp()];
        }
        for k in 0..2 {
            let nk: f64 = resp.iter().map(|r| r[k]).sum();
            if nk <= 0.0 {
                continue;
            }
            let mu = resp.iter().zip(xs).map(|(r, x)| r[k] * x).sum::<f64>() / nk;
            let var = resp.iter().zip(xs).map(|(r, x)| r[k] * (x - mu) * (x - mu)).sum::<f64>() / nk;
            p.w[k] = (nk / n).clamp(1e-12, 1.0 - 1e-12);
            p.mu[k] = mu;
            p.var[k] = var.max(floor);
        }
        let s = p.w[0] + p.w[1];
        p.w = [p.w[0] / s, p.w[1] / s];
        let next = p.log_likelihood(xs);
        let delta = next - ll;
        ll = next;
        if delta.abs() < TOL {
            return (p, ll, iter);
        }
    }
    (p, ll, MAX_ITERS)
}

pub fn fit_reward_mixture_report(rewards: &[f64]) -> Result<MixtureReport> {
    if rewards.len() < MIN_SAMPLES {
        return Err(Error::InvalidArgument(format!(
            "need at least {MIN_SAMPLES} rewards, got {}",
            rewards.len()
        )));
    }
    if rewards.iter().any(|r| !r.is_finite()) {
        return Err(Error::InvalidArgument("rewards must be finite".into()));
    }
    let var = variance(rewards);
    if var <= 0.0 {
        return Err(Error::Degenerate(format!(
            "all {} rewards are equal; a single-point mass has no mixture fit",
            rewards.len()
        )));
    }
    let floor = VARIANCE_FLOOR * var;
    let mut rng = seeded(INIT_SEED);
    let mut best: Option<(Params, f64, usize)> = None;
    for _ in 0..RESTARTS {
        let init = kmeans_pp_init(rewards, floor, &mut rng);
        let run = run_em(rewards, init, floor);
        if best.as_ref().map_or(true, |b| run.1 > b.1) {
            best = Some(run);
        }
    }
    let (mut p, ll, iterations) = best.expect("at least one restart");
    if p.mu[1] < p.mu[0] {
        p = Params {
            w: [p.w[1], p.w[0]],
            mu: [p.mu[1], p.mu[0]],
            var: [p.var[1], p.var[0]],
        };
    }
    let fit = MixtureFit::new(p.w, p.mu, [p.var[0].sqrt(), p.var[1].sqrt()])?;
    Ok(MixtureReport { fit, log_likelihood: ll, iterations })
}

/// EM fit of a two-component Normal mixture. Components are ordered by mean.
pub fn fit_reward_mixture(rewards: &[f64]) -> Result<MixtureFit> {
    fit_reward_mixture_report(rewards).map(|r| r.fit)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_distr::{Distribution, Normal};

    /// Draw from a planted mixture.
    fn planted(w0: f64, mu: [f64; 2], sd: [f64; 2], n: usize, seed: u64) -> Vec<f64> {
        let mut rng = seeded(seed);
        let comps = [Normal::new(mu[0], sd[0]).unwrap(), Normal::new(mu[1], sd[1]).unwrap()];
        (0..n)
            .map(|_| {
                let k = usize::from(rng.gen::<f64>() >= w0);
                comps[k].sample(&mut rng)
            })
            .collect()
    }

    #[test]
    fn recovers_planted_mixture() {
        let xs = planted(0.3, [-1.0, 2.0], [0.5, 1.0], 10_000, 21);
        let f = fit_reward_mixture(&xs).unwrap();
        assert!((f.means[0] + 1.0).abs() < 0.1, "{f:?}");
        assert!((f.means[1] - 2.0).abs() < 0.1, "{f:?}");
        assert!((f.sigmas[0] - 0.5).abs() < 0.1, "{f:?}");
        assert!((f.sigmas[1] - 1.0).abs() < 0.1, "{f:?}");
        assert!((f.weights[0] - 0.3).abs() < 0.05, "{f:?}");
        assert_eq!(f.dominant, 1);
    }

    #[test]
    fn single_gaussian_data() {
        let xs = planted(1.0, [0.0, 0.0], [1.0, 1.0], 10_000, 4);
        let r = fit_reward_mixture_report(&xs).unwrap();
        // Any split is a valid optimum here; the M-step still preserves the
        // first two sample moments.
        let f = r.fit;
        let m: f64 = (0..2).map(|k| f.weights[k] * f.means[k]).sum();
        let second: f64 = (0..2).map(|k| f.weights[k] * (f.sigmas[k].powi(2) + f.means[k].powi(2))).sum();
        assert!((m - mean(&xs)).abs() < 1e-6, "{f:?}");
        assert!((second - m * m - variance(&xs)).abs() < 1e-6, "{f:?}");
        assert!(r.log_likelihood >= single_gaussian_log_likelihood(&xs) - 1e-9);
    }

    #[test]
    fn separated_clouds_weights() {
        let mut rng = seeded(8);
        let mut xs: Vec<f64> = (0..2500).map(|_| -10.0 + rng.gen::<f64>()).collect();
        xs.extend((0..7500).map(|_| 10.0 + rng.gen::<f64>()));
        let f = fit_reward_mixture(&xs).unwrap();
        assert!((f.weights[0] - 0.25).abs() < 0.02);
        assert!((f.weights[1] - 0.75).abs() < 0.02);
    }

    #[test]
    fn degenerate_inputs() {
        assert!(matches!(fit_reward_mixture(&[1.0; 50]), Err(Error::Degenerate(_))));
        assert!(fit_reward_mixture(&[1.0, 2.0]).is_err());
    }

    #[test]
    fn near_duplicate_rewards_do_not_collapse() {
        let mut xs = vec![0.5; 40];
        xs.push(0.5 + 1e-9);
        xs.extend([2.0, 2.1, 1.9]);
        let f = fit_reward_mixture(&xs).unwrap();
        assert!(f.sigmas.iter().all(|s| s.is_finite() && *s > 0.0));
    }
}

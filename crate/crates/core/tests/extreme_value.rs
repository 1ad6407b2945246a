use qalign_core::analysis::{aligned_reward_mixture, beta_star, gumbel_approx};
use qalign_core::MixtureFit;
use proptest::prelude::*;

proptest! {
    #[test]
    fn mode_matching_holds(mu in -5.0f64..5.0, sigma in 0.1f64..4.0, n in 100u64..100_000) {
        let fit = MixtureFit::single(mu, sigma).unwrap();
        let g = gumbel_approx(&fit, n).unwrap();
        let b = beta_star(&fit, n).unwrap();
        let aligned = aligned_reward_mixture(&fit, b);
        prop_assert!((sigma * sigma / b.get() - (g.location - mu)).abs() < 1e-9);
        prop_assert!((aligned.dominant_mode() - g.location).abs() < 1e-9);
    }

    #[test]
    fn larger_n_means_smaller_beta(sigma in 0.1f64..4.0, n in 100u64..50_000) {
        let fit = MixtureFit::single(0.0, sigma).unwrap();
        prop_assert!(beta_star(&fit, 2 * n).unwrap().get() < beta_star(&fit, n).unwrap().get());
        prop_assert!(gumbel_approx(&fit, 2 * n).unwrap().scale < gumbel_approx(&fit, n).unwrap().scale);
    }
}

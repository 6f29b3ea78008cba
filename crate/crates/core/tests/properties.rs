use epiextinct::action_ld::{g_cost, optimal_rates};
use epiextinct::action_md::NoiseQuadratic;
use epiextinct::model::{build_model, ModelKind, ModelParams, ReactionModel};
use proptest::prelude::*;

fn endemic() -> impl Strategy<Value = ReactionModel> {
    (0usize..3, 0.2f64..3.0, 1.2f64..6.0, 0.05f64..3.0).prop_map(|(k, gamma, ratio, extra)| {
        let (kind, params) = match k {
            0 => (ModelKind::Sis, ModelParams::sis(gamma * ratio, gamma)),
            1 => (ModelKind::Sirs, ModelParams::sirs(gamma * ratio, gamma, extra)),
            _ => {
                let mu = extra / 6.0;
                (ModelKind::SirDemography, ModelParams::sir_demography((gamma + mu) * ratio, gamma, mu))
            }
        };
        build_model(kind, params).unwrap()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn g_is_nonnegative_and_vanishes_on_diagonal(nu in 0.0f64..10.0, omega in 1e-6f64..10.0) {
        prop_assert!(g_cost(nu, omega).unwrap() >= -1e-15);
        prop_assert!(g_cost(omega, omega).unwrap().abs() < 1e-14);
    }

    #[test]
    fn equilibrium_is_stationary_and_stable(m in endemic()) {
        let eq = m.endemic_equilibrium().unwrap();
        prop_assert!(eq.stable);
        prop_assert!(m.drift(&eq.z_star).amax() < 1e-12);
        prop_assert!(m.domain().contains(&eq.z_star, 0.0));
    }

    #[test]
    fn diffusion_is_positive_definite_at_equilibrium(m in endemic()) {
        let z = m.endemic_equilibrium().unwrap().z_star;
        let a = m.diffusion_matrix(&z);
        prop_assert!(a.clone().cholesky().is_some());
        prop_assert!((a.clone() - a.transpose()).amax() < 1e-15);
    }

    /// Near the drift the LD cost is the quadratic MD cost to second order.
    #[test]
    fn ld_cost_is_locally_quadratic(m in endemic(), dir in prop::collection::vec(-1.0f64..1.0, 2)) {
        let z = m.endemic_equilibrium().unwrap().z_star;
        let d = m.dim();
        let norm = dir[..d].iter().map(|x| x * x).sum::<f64>().sqrt();
        prop_assume!(norm > 0.1);
        let scale = 1e-4 * z.iter().cloned().fold(f64::INFINITY, f64::min);
        let delta: Vec<f64> = dir[..d].iter().map(|x| scale * x / norm).collect();
        let b = m.drift(&z);
        let v: Vec<f64> = (0..d).map(|k| b[k] + delta[k]).collect();
        let ld = optimal_rates(&m, &z, &v).unwrap().cost;
        let md = NoiseQuadratic::at_equilibrium(&m).unwrap().density(&delta);
        prop_assert!((ld / md - 1.0).abs() < 1e-2, "ld={ld:e} md={md:e}");
    }

    /// Raising the velocity along one jump never lowers the cost below the
    /// drift cost and the optimal rates stay nonnegative.
    #[test]
    fn optimal_rates_are_nonnegative(m in endemic(), w in prop::collection::vec(0.0f64..3.0, 4)) {
        let z = m.endemic_equilibrium().unwrap().z_star;
        let mut v = vec![0.0; m.dim()];
        for j in 0..m.num_reactions() {
            for (vk, h) in v.iter_mut().zip(m.jump(j)) {
                *vk += w[j] * m.rate(j, &z) * *h as f64;
            }
        }
        let sol = optimal_rates(&m, &z, &v).unwrap();
        prop_assert!(sol.converged);
        prop_assert!(sol.rates.iter().all(|c| *c >= 0.0));
        prop_assert!(sol.cost >= -1e-14);
    }
}

use optswitch::model::{validate_problem, ModelError};
use optswitch::presets;
use optswitch::simulate::transition_probs;
use proptest::prelude::*;

proptest! {
    #[test]
    fn feasible_transitions_form_a_distribution(
        drift in 0.0f64..2.0,
        diffusion in 0.01f64..1.0,
        extra in 0.0f64..2.0,
        frac in 0.01f64..1.0,
    ) {
        let dx = frac * 2.0 * diffusion / drift.max(1e-9);
        let dx = dx.min(1.0);
        let scale = 2.0 * diffusion + extra;
        let p = transition_probs(0, drift, diffusion, dx, scale).unwrap();
        prop_assert!(p.left >= 0.0 && p.right >= 0.0 && p.stay >= 0.0);
        prop_assert!((p.left + p.right + p.stay - 1.0).abs() < 1e-12);
        let dt = dx * dx / scale;
        prop_assert!((p.mean_step(dx) - drift * dt).abs() < 1e-12);
    }

    #[test]
    fn overshooting_the_cell_limit_is_rejected(
        drift in 0.1f64..2.0,
        diffusion in 0.01f64..1.0,
        over in 1.01f64..3.0,
    ) {
        let dx = over * 2.0 * diffusion / drift;
        prop_assert!(transition_probs(0, drift, diffusion, dx, 2.0 * diffusion).is_err());
    }

    #[test]
    fn violated_triangle_is_rejected(scale in 1.05f64..3.0) {
        let mut spec = presets::table2();
        let h = &spec.costs.base;
        let chained = h[0][2] + h[2][1];
        spec.costs.base[0][1] = chained * scale;
        let rejected = matches!(
            validate_problem(&spec),
            Err(ModelError::TriangleInequality { .. })
        );
        prop_assert!(rejected);
    }
}

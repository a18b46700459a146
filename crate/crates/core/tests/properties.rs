use std::f64::consts::PI;

use nalgebra::DMatrix;
use proptest::prelude::*;
use pst_core::analysis::{pipelined_protocol, timing_error_bound};
use pst_core::dynamics::{
    amplitudes, evolve_two_excitations, parity_check, symmetry_commutator, OverlapSpectrum,
    TwoExcitationState,
};
use pst_core::iep::{nearest_neighbor_guess, solve, SolveConfig};
use pst_core::linalg::{eig_sym, evolve, SymMatrix, C64};
use pst_core::model::{HamiltonianModel, NearestNeighbor, PowerLawChain};
use pst_core::spectrum::{check_pst, sms, truncate_and_nudge, Spectrum};

const DIPOLE6: [f64; 6] = [0.491148, -0.117999, -0.373149, 0.967037, 0.901559, 0.885867];

fn symmetric_matrix() -> impl Strategy<Value = SymMatrix> {
    (2usize..=64).prop_flat_map(|n| {
        prop::collection::vec(-1.0f64..1.0, n * n)
            .prop_map(move |v| SymMatrix::from_fn(n, |i, j| v[i * n + j]).unwrap())
    })
}

fn ascending_spectrum() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.05f64..1.0, 1..30).prop_flat_map(|gaps| {
        (-3.0f64..3.0).prop_map(move |start| {
            let mut v = vec![start];
            for g in &gaps {
                let last = *v.last().unwrap();
                v.push(last + g);
            }
            v
        })
    })
}

fn max_complex(m: &DMatrix<C64>) -> f64 {
    m.iter().map(|z| z.norm()).fold(0.0, f64::max)
}

fn sms_chain(n: usize) -> pst_core::linalg::EigenSystem {
    let target = sms(n, 1.0).unwrap();
    let m = NearestNeighbor::new(n).unwrap();
    let r = solve(&m, &nearest_neighbor_guess(&target), &target, &SolveConfig::default()).unwrap();
    assert!(r.converged);
    r.final_eigensystem
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn eigendecomposition_reconstructs(h in symmetric_matrix()) {
        let es = eig_sym(&h).unwrap();
        let scale = h.as_matrix().norm().max(1e-300);
        prop_assert!((es.reconstruct() - h.as_matrix()).norm() / scale <= 1e-10);
        prop_assert!(es.orthonormality_defect() <= 1e-12);
        prop_assert!(es.eigenvalues().as_slice().windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn propagator_composes(h in symmetric_matrix(), t1 in -5.0f64..5.0, t2 in -5.0f64..5.0) {
        let es = eig_sym(&h).unwrap();
        let lhs = evolve(&es, t1 + t2);
        let rhs = evolve(&es, t1) * evolve(&es, t2);
        prop_assert!(max_complex(&(lhs - rhs)) <= 1e-10);
    }

    #[test]
    fn nearest_neighbour_builds_are_centrosymmetric(
        n in 2usize..20,
        raw in prop::collection::vec(-2.0f64..2.0, 20),
    ) {
        let m = NearestNeighbor::new(n).unwrap();
        let alpha = &raw[..m.n_params()];
        let h = m.build(alpha).unwrap();
        prop_assert_eq!(h.centrosymmetry_defect(), 0.0);
        prop_assert!(symmetry_commutator(&h).max_abs <= 1e-12);
    }

    #[test]
    fn power_law_builds_are_centrosymmetric(
        n in 2usize..20,
        p in 1.0f64..6.0,
        fields in prop::collection::vec(-1.0f64..1.0, 10),
        spacings in prop::collection::vec(0.3f64..2.0, 10),
    ) {
        let m = PowerLawChain::new(n, p).unwrap();
        let nf = n.div_ceil(2);
        let alpha: Vec<f64> = fields[..nf].iter().chain(&spacings[..n / 2]).copied().collect();
        let h = m.build(&alpha).unwrap();
        prop_assert_eq!(h.centrosymmetry_defect(), 0.0);
    }

    #[test]
    fn nudged_spectra_are_admissible(values in ascending_spectrum(), decimals in 1u32..4) {
        let s = Spectrum::new(values).unwrap();
        if let Ok(nudged) = truncate_and_nudge(&s, decimals) {
            let report = check_pst(&nudged.nudged, nudged.t0).unwrap();
            prop_assert!(report.admissible, "{:?}", report);
            prop_assert!(nudged.nudges().iter().all(|d| d.abs() <= nudged.grid * (1.0 + 1e-9)));
            prop_assert!((nudged.t0 - PI / nudged.grid).abs() <= 1e-9 * nudged.t0);
        }
    }

    #[test]
    fn amplitudes_conserve_norm(n in 2usize..12, t in 0.0f64..50.0) {
        let es = sms_chain(n);
        let total: f64 = amplitudes(&es, t).iter().map(|b| b.norm_sqr()).sum();
        prop_assert!((total - 1.0).abs() <= 1e-10);
    }

    #[test]
    fn two_excitation_norm_conserved(i in 0usize..6, j in 0usize..6, t in 0.0f64..10.0) {
        prop_assume!(i != j);
        let es = sms_chain(6);
        let state = TwoExcitationState::basis(6, i, j).unwrap();
        let end = evolve_two_excitations(&es, &state, t).unwrap();
        prop_assert!((end.norm_sqr() - 1.0).abs() <= 1e-10);
        let occupied: f64 = (0..6).map(|s| end.occupation(s)).sum();
        prop_assert!((occupied - 2.0).abs() <= 1e-10);
    }

    #[test]
    fn solved_sms_chains_alternate_parity(n in 2usize..16) {
        let es = sms_chain(n);
        prop_assert!(parity_check(&es).passes);
    }

    #[test]
    fn timing_bound_holds(n in 2usize..12, frac in -0.1f64..0.1) {
        let es = sms_chain(n);
        let t0 = PI;
        let p = timing_error_bound(&OverlapSpectrum::from_eigensystem(&es), t0, frac * t0);
        prop_assert!(p.holds);
    }

    #[test]
    fn protocol_formulas_match_simulation(frac in 0.01f64..0.99) {
        let es = sms_chain(6);
        let r = pipelined_protocol(&es, PI, frac * PI).unwrap();
        prop_assert!(r.max_discrepancy() <= 1e-9);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn table_solution_attracts_nearby_starts(
        noise in prop::collection::vec(-0.01f64..0.01, 6),
    ) {
        let m = PowerLawChain::dipolar(6).unwrap();
        let target = sms(6, 1.0).unwrap();
        let start: Vec<f64> = DIPOLE6
            .iter()
            .zip(&noise)
            .map(|(a, e)| if a.abs() > 0.2 { a * (1.0 + e) } else { a + e * 0.5 })
            .collect();
        let r = solve(&m, &start, &target, &SolveConfig::default()).unwrap();
        prop_assert!(r.converged);
        for (a, b) in r.alpha_star.values.iter().zip(&DIPOLE6) {
            prop_assert!((a - b).abs() < 1e-5);
        }
        prop_assert!(r.residual_history.windows(2).all(|w| w[1] <= w[0]));
    }
}

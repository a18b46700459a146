//! Cross-checks against independent reference computations.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use pst_core::analysis::{
    eigenvalue_shift_fidelity, mixed_hamiltonian, mixing_fidelity, pipelined_protocol,
    predicted_commutator_norm, timing_error_bound, timing_study,
};
use pst_core::dynamics::{
    amplitudes, evolve_two_excitations, fidelity_curve, parity_check, symmetry_commutator,
    time_grid, OverlapSpectrum, TwoExcitationState,
};
use pst_core::iep::{jacobian, match_eigenvalues, nearest_neighbor_guess, solve, SolveConfig};
use pst_core::linalg::{eig_sym, solve_least_squares, solve_linear, SymMatrix, C64};
use pst_core::model::{finite_difference_derivative, HamiltonianModel, NearestNeighbor, PowerLawChain};
use pst_core::spectrum::{check_pst, sms, uniform_chain_spectrum, Spectrum};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Cyclic Jacobi rotations; slow but independent of the library eigensolver.
fn jacobi_eigenvalues(a: &DMatrix<f64>) -> Vec<f64> {
    let n = a.nrows();
    let mut m = a.clone();
    for _sweep in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| m[(i, j)].powi(2))
            .sum();
        if off < 1e-30 {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                if m[(p, q)].abs() < 1e-300 {
                    continue;
                }
                let theta = (m[(q, q)] - m[(p, p)]) / (2.0 * m[(p, q)]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let mkp = m[(k, p)];
                    let mkq = m[(k, q)];
                    m[(k, p)] = c * mkp - s * mkq;
                    m[(k, q)] = s * mkp + c * mkq;
                }
                for k in 0..n {
                    let mpk = m[(p, k)];
                    let mqk = m[(q, k)];
                    m[(p, k)] = c * mpk - s * mqk;
                    m[(q, k)] = s * mpk + c * mqk;
                }
            }
        }
    }
    let mut v: Vec<f64> = (0..n).map(|i| m[(i, i)]).collect();
    v.sort_by(f64::total_cmp);
    v
}

fn christandl_matrix(n: usize) -> SymMatrix {
    SymMatrix::from_fn(n, |i, j| {
        if j == i + 1 {
            (((i + 1) * (n - i - 1)) as f64).sqrt()
        } else {
            0.0
        }
    })
    .unwrap()
}

fn sms6_chain() -> pst_core::linalg::EigenSystem {
    let target = sms(6, 1.0).unwrap();
    let m = NearestNeighbor::new(6).unwrap();
    let r = solve(&m, &nearest_neighbor_guess(&target), &target, &SolveConfig::default()).unwrap();
    assert!(r.converged);
    r.final_eigensystem
}

#[test]
fn christandl_couplings_give_odd_integer_spectrum() {
    let h = christandl_matrix(6);
    let es = eig_sym(&h).unwrap();
    let oracle = jacobi_eigenvalues(h.as_matrix());
    let expected = [-5.0, -3.0, -1.0, 1.0, 3.0, 5.0];
    for k in 0..6 {
        assert!((es.eigenvalues()[k] - expected[k]).abs() < 1e-12);
        assert!((oracle[k] - expected[k]).abs() < 1e-12);
    }
}

#[test]
fn eigensolver_matches_jacobi_on_dense_random_matrices() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for n in [2, 3, 6, 11, 20] {
        let h = SymMatrix::from_fn(n, |_, _| rng.random_range(-1.0..1.0)).unwrap();
        let es = eig_sym(&h).unwrap();
        let oracle = jacobi_eigenvalues(h.as_matrix());
        for k in 0..n {
            assert!((es.eigenvalues()[k] - oracle[k]).abs() < 1e-11, "n={n} k={k}");
        }
    }
}

#[test]
fn linear_solve_multiplies_back() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let k = DMatrix::from_fn(6, 6, |i, j| rng.random_range(-1.0..1.0) + if i == j { 4.0 } else { 0.0 });
    let e = DVector::from_fn(6, |_, _| rng.random_range(-1.0..1.0));
    let x = solve_linear(&k, &e).unwrap().x;
    assert!((&k * &x - &e).amax() <= 1e-10);
}

#[test]
fn least_squares_satisfies_normal_equations() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let k = DMatrix::from_fn(31, 5, |_, _| rng.random_range(-1.0..1.0));
    let e = DVector::from_fn(31, |_, _| rng.random_range(-1.0..1.0));
    let sol = solve_least_squares(&k, &e).unwrap();
    let residual = &e - &k * &sol.x;
    assert!((k.transpose() * &residual).amax() <= 1e-10);
    // normal-equation solution by Cholesky, computed independently
    let normal = (k.transpose() * &k).cholesky().unwrap().solve(&(k.transpose() * &e));
    assert!((&normal - &sol.x).amax() < 1e-10);
    assert!(!sol.rank_deficient);
}

#[test]
fn unitarity_of_propagator() {
    let es = eig_sym(&christandl_matrix(7)).unwrap();
    for t in [0.0, 0.3, 2.7, 40.0] {
        let u = pst_core::linalg::evolve(&es, t);
        let back = pst_core::linalg::evolve(&es, -t);
        let id = DMatrix::<C64>::identity(7, 7);
        assert!((&u * &back - id).iter().all(|z| z.norm() <= 1e-10));
    }
}

/// Richardson-extrapolated central differences, step `h` and `h/2`.
fn richardson<M: HamiltonianModel>(m: &M, alpha: &[f64], i: usize, h: f64) -> DMatrix<f64> {
    let coarse = finite_difference_derivative(m, alpha, i, h).unwrap();
    let fine = finite_difference_derivative(m, alpha, i, h / 2.0).unwrap();
    (fine.as_matrix() * 4.0 - coarse.as_matrix()) / 3.0
}

#[test]
fn dipolar_derivatives_match_richardson_oracle() {
    let m = PowerLawChain::dipolar(6).unwrap();
    let alpha = [0.491, -0.118, -0.373, 0.967, 0.902, 0.886];
    for i in 0..6 {
        let analytic = m.derivative(&alpha, i).unwrap();
        let oracle = richardson(&m, &alpha, i, 1e-3);
        assert!((analytic.as_matrix() - &oracle).amax() < 1e-8, "parameter {i}");
        let fd = finite_difference_derivative(&m, &alpha, i, 1e-6 * alpha[i].abs().max(1.0)).unwrap();
        assert!((analytic.as_matrix() - fd.as_matrix()).amax() < 1e-6);
    }
}

#[test]
fn sensitivity_matrix_matches_eigenvalue_differences() {
    let m = PowerLawChain::dipolar(6).unwrap();
    let alpha = [0.491, -0.118, -0.373, 0.967, 0.902, 0.886];
    let es = eig_sym(&m.build(&alpha).unwrap()).unwrap();
    let k = jacobian(&m, &alpha, &es).unwrap();
    for i in 0..6 {
        let h = 1e-6;
        let mut up = alpha;
        let mut down = alpha;
        up[i] += h;
        down[i] -= h;
        let mu_up = jacobi_eigenvalues(m.build(&up).unwrap().as_matrix());
        let mu_down = jacobi_eigenvalues(m.build(&down).unwrap().as_matrix());
        for n in 0..6 {
            let fd = (mu_up[n] - mu_down[n]) / (2.0 * h);
            assert!((k[(n, i)] - fd).abs() < 1e-6, "K[{n}][{i}]");
        }
    }
}

fn permutations(n: usize) -> Vec<Vec<usize>> {
    if n == 0 {
        return vec![vec![]];
    }
    let mut out = Vec::new();
    for p in permutations(n - 1) {
        for pos in 0..=p.len() {
            let mut q = p.clone();
            q.insert(pos, n - 1);
            out.push(q);
        }
    }
    out
}

#[test]
fn ascending_pairing_beats_every_permutation() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    for n in 2..=6 {
        let perms = permutations(n);
        for _ in 0..20 {
            let mut a: Vec<f64> = (0..n).map(|_| rng.random_range(-3.0..3.0)).collect();
            let mut b: Vec<f64> = (0..n).map(|_| rng.random_range(-3.0..3.0)).collect();
            a.sort_by(f64::total_cmp);
            b.sort_by(f64::total_cmp);
            let pairs = match_eigenvalues(&a, &b).unwrap();
            let chosen: f64 = pairs.iter().map(|(i, j)| (a[*i] - b[*j]).powi(2)).sum();
            let best = perms
                .iter()
                .map(|p| (0..n).map(|i| (a[i] - b[p[i]]).powi(2)).sum::<f64>())
                .fold(f64::INFINITY, f64::min);
            assert!(chosen <= best + 1e-12);
        }
    }
}

#[test]
fn nearest_neighbour_solve_recovers_closed_form_couplings() {
    let target = sms(6, 2.0).unwrap();
    let m = NearestNeighbor::new(6).unwrap();
    let r = solve(&m, &[0.0, 0.0, 0.0, 2.0, 2.0, 2.0], &target, &SolveConfig::default()).unwrap();
    assert!(r.converged);
    let j = &r.alpha_star.values[3..];
    for (k, expected) in [5f64.sqrt(), 8f64.sqrt(), 3.0].iter().enumerate() {
        assert!((j[k] - expected).abs() < 1e-8);
        let spacing = j[k].powf(-1.0 / 3.0);
        assert!((spacing - [0.765, 0.707, 0.693][k]).abs() < 5e-4);
    }
}

#[test]
fn uniform_chain_closed_form_matches_tridiagonal_eigensolve() {
    let s = uniform_chain_spectrum(31).unwrap();
    let h = SymMatrix::from_fn(31, |i, j| if j == i + 1 { 1.0 } else { 0.0 }).unwrap();
    let es = eig_sym(&h).unwrap();
    for (a, b) in s.values().iter().zip(es.eigenvalues().iter()) {
        assert!((a - b).abs() <= 1e-12);
    }
    let d12 = s.values()[1] - s.values()[0];
    assert!((s.min_gap() - d12).abs() < 1e-12);
    // band-edge gap ~ 3 pi^2 / (N + 1)^2
    let scaled = s.min_gap() * 32.0 * 32.0;
    assert!((scaled - 3.0 * PI * PI).abs() < 0.5, "{scaled}");
}

#[test]
fn uniform_chain_spectrum_never_admissible_on_scanned_times() {
    let s = uniform_chain_spectrum(31).unwrap();
    let mut best = f64::INFINITY;
    for k in 1..=20_000 {
        let t0 = k as f64 * 0.05;
        best = best.min(check_pst(&s, t0).unwrap().max_deviation);
    }
    assert!(best > 1e-3, "closest approach {best}");
}

#[test]
fn solved_chain_single_peak_on_first_period() {
    let es = sms6_chain();
    let rec = fidelity_curve(&es, &time_grid(0.0, PI, 1e-3).unwrap()).unwrap();
    let (t, f) = rec.peak().unwrap();
    assert!(f >= 1.0 - 1e-9);
    assert!((t - PI).abs() < 2e-3);
}

#[test]
fn solved_and_table_chains_pass_parity() {
    assert!(parity_check(&sms6_chain()).passes);
    let m = PowerLawChain::dipolar(6).unwrap();
    let es = eig_sym(&m.build(&[0.491, -0.118, -0.373, 0.967, 0.902, 0.886]).unwrap()).unwrap();
    assert!(parity_check(&es).passes);
}

#[test]
fn timing_bound_and_quadratic_loss_on_sms6() {
    let es = sms6_chain();
    let os = OverlapSpectrum::from_eigensystem(&es);
    for dt in [0.01, 0.02, 0.05] {
        let p = timing_error_bound(&os, PI, dt);
        assert!(p.holds);
        // direct evolution oracle
        let direct = amplitudes(&es, PI + dt)[5].norm_sqr();
        assert!((direct - p.exact).abs() < 1e-12);
    }
    let st = timing_study(&os, PI, &[0.01, 0.02, 0.05], 0.05);
    assert!((st.fitted_exponent.unwrap() - 2.0).abs() < 0.05);
}

#[test]
fn eigenvalue_shift_matches_closed_form() {
    let es = sms6_chain();
    let w = OverlapSpectrum::from_eigensystem(&es).a[0].powi(2);
    for delta in [1e-3, 0.01, 0.2] {
        let loss = 1.0 - eigenvalue_shift_fidelity(&es, PI, 1, delta).unwrap();
        let expected = 2.0 * w * (1.0 - w) * (1.0 - (delta * PI).cos());
        assert!((loss - expected).abs() < 1e-12);
    }
    assert!((eigenvalue_shift_fidelity(&es, PI, 3, 2.0).unwrap() - 1.0).abs() < 1e-12);
}

#[test]
fn mixed_pair_commutator_norm() {
    let es = sms6_chain();
    for delta in [0.0, 0.01, 0.1, 0.5] {
        let c = symmetry_commutator(&mixed_hamiltonian(&es, delta).unwrap());
        let predicted = predicted_commutator_norm(&es, delta);
        assert!((c.frobenius - predicted).abs() <= 1e-10, "delta {delta}");
    }
    let expected = 2.0 * 0.1 * 0.99f64.sqrt() * 2f64.sqrt();
    assert!((predicted_commutator_norm(&es, 0.1) - expected).abs() < 1e-12);
    assert!((mixing_fidelity(&es, PI, 0.0).unwrap() - 1.0).abs() < 1e-12);
    let swapped = mixing_fidelity(&es, PI, 1.0).unwrap();
    for d in [0.1, 0.3, 0.6, 0.9] {
        assert!(mixing_fidelity(&es, PI, d).unwrap() >= swapped - 1e-12);
    }
}

#[test]
fn reset_pair_evolves_into_closed_form() {
    let es = sms6_chain();
    let t0 = PI;
    let n = 6;
    for t_d in [0.4, PI / 2.0, 2.5] {
        let beta = amplitudes(&es, t_d);
        let leak = beta[0].norm_sqr();
        let mut phi = beta.clone();
        phi[0] = C64::new(0.0, 0.0);
        let mut e1 = vec![C64::new(0.0, 0.0); n];
        e1[0] = C64::new(1.0, 0.0);
        let pair = TwoExcitationState::wedge(&e1, &phi).unwrap().normalized().unwrap();
        let end = evolve_two_excitations(&es, &pair, t0 - t_d).unwrap();
        let w = amplitudes(&es, t0 - t_d);
        for site in 0..n - 1 {
            let expected = w[site].norm() / (1.0 - leak).sqrt();
            assert!((end.pair(site, n - 1).norm() - expected).abs() <= 1e-9);
        }
        assert!((end.occupation(n - 1) - 1.0).abs() <= 1e-9);
        let r = pipelined_protocol(&es, t0, t_d).unwrap();
        assert!(r.max_discrepancy() <= 1e-9);
    }
}

#[test]
fn explicit_spectrum_violation_is_reported_at_level_one() {
    let mut v = sms(6, 1.0).unwrap().values().to_vec();
    v[0] += 0.01;
    let r = check_pst(&Spectrum::new(v).unwrap(), PI).unwrap();
    assert!(!r.admissible);
    assert!((r.deviations[0].abs() - 0.01).abs() < 1e-12);
    assert!(r.deviations[1..].iter().all(|d| d.abs() < 1e-12));
}

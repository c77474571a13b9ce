mod common;

use std::sync::OnceLock;

use num_complex::Complex64;
use proptest::prelude::*;

use eyewitness::detector::DetectorModel;
use eyewitness::fock::{
    apply_loss, displaced_fock_amplitude, number_distribution, split_joint, DensityMatrix, NumberDistribution,
};
use eyewitness::optimizer::minimize_bounded;
use eyewitness::preparation::{conditional_state, PreparationParams};
use eyewitness::statistics::{
    classical_projection, classical_pvalue, critical_chi0, region_probability, transform_coefficients,
    CellProbabilities, ClassicalScan, ClassicalSearch, Estimator, SummationLimits, worst_case_pvalue,
};
use eyewitness::witness::{
    classical_ensemble_stats, g2, singles_and_coincidences, witness_difference, ClassicalEnsemble,
};

use common::working_point_cell;

fn c(re: f64, im: f64) -> Complex64 {
    Complex64::new(re, im)
}

fn detector() -> impl Strategy<Value = DetectorModel> {
    (1u32..=10, 0.01f64..=1.0).prop_map(|(theta, eta)| DetectorModel::new(theta, eta, 0.0).unwrap())
}

fn ensemble() -> impl Strategy<Value = ClassicalEnsemble> {
    prop::collection::vec((0.0f64..20.0, -3.2f64..3.2, 0.01f64..1.0), 1..=8).prop_map(|comps| {
        let total: f64 = comps.iter().map(|c| c.2).sum();
        let comps = comps
            .into_iter()
            .map(|(r, phi, w)| (Complex64::from_polar(r, phi), w / total))
            .collect();
        ClassicalEnsemble::new(comps).unwrap()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(10_000))]

    #[test]
    fn classical_ensembles_never_violate_the_witness(
        ens in ensemble(),
        det1 in detector(),
        det2 in detector(),
        r in 0.001f64..0.999,
    ) {
        let s = classical_ensemble_stats(&ens, &det1, &det2, r).unwrap();
        prop_assert!(witness_difference(&s) >= -1e-12, "{s:?}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn coherent_states_have_unit_g2(
        mu in 1.0f64..200.0,
        det1 in detector(),
        det2 in detector(),
        r in 0.05f64..0.95,
    ) {
        let p = NumberDistribution::poisson(mu, 1e-11).unwrap();
        let s = singles_and_coincidences(&p, &det1, &det2, r).unwrap();
        prop_assume!(s.ps1 * s.ps2 > 1e-6);
        prop_assert!((g2(&s).unwrap() - 1.0).abs() < 1e-9, "{s:?}");
        let ens = ClassicalEnsemble::coherent(Complex64::from_polar(mu.sqrt(), 0.3));
        let direct = classical_ensemble_stats(&ens, &det1, &det2, r).unwrap();
        prop_assert!((direct.ps1 - s.ps1).abs() < 1e-8);
        prop_assert!((direct.ps2 - s.ps2).abs() < 1e-8);
        prop_assert!((direct.pc - s.pc).abs() < 1e-8);
    }

    #[test]
    fn fock_phases_do_not_change_click_statistics(
        mods in prop::collection::vec(0.05f64..1.0, 2..6),
        phases in prop::collection::vec(-3.2f64..3.2, 6),
        det in detector(),
        r in 0.05f64..0.95,
    ) {
        let norm = mods.iter().map(|m| m * m).sum::<f64>().sqrt();
        let plain: Vec<Complex64> = mods.iter().map(|m| c(m / norm, 0.0)).collect();
        let phased: Vec<Complex64> = mods
            .iter()
            .zip(&phases)
            .map(|(m, ph)| Complex64::from_polar(m / norm, *ph))
            .collect();
        let a = number_distribution(&DensityMatrix::pure(&plain).unwrap(), c(0.0, 0.0), 1e-14).unwrap();
        let b = number_distribution(&DensityMatrix::pure(&phased).unwrap(), c(0.0, 0.0), 1e-14).unwrap();
        for (x, y) in a.probs().iter().zip(b.probs()) {
            prop_assert!((x - y).abs() < 1e-12);
        }
        let sa = singles_and_coincidences(&a, &det, &det, r).unwrap();
        let sb = singles_and_coincidences(&b, &det, &det, r).unwrap();
        prop_assert!((sa.ps1 - sb.ps1).abs() < 1e-12);
        prop_assert!((sa.ps2 - sb.ps2).abs() < 1e-12);
        prop_assert!((sa.pc - sb.pc).abs() < 1e-12);
    }

    #[test]
    fn joint_rotation_leaves_displaced_statistics_unchanged(
        alpha in 0.5f64..12.0,
        phase in -3.2f64..3.2,
    ) {
        let rho = DensityMatrix::plus_state(0.4);
        let p = number_distribution(&rho, c(alpha, 0.0), 1e-13).unwrap();
        // rotated(-phase) applies e^{i phase N}, which carries D(alpha) into D(alpha e^{i phase})
        let q = number_distribution(&rho.rotated(-phase), Complex64::from_polar(alpha, phase), 1e-13).unwrap();
        for (x, y) in p.probs().iter().zip(q.probs()) {
            prop_assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn split_and_loss_conserve_mass(mu in 0.0f64..150.0, r in 0.0f64..=1.0, eta in 0.0f64..=1.0) {
        let p = NumberDistribution::poisson(mu, 1e-11).unwrap();
        prop_assert!((split_joint(&p, r).unwrap().total_mass() - p.total_mass()).abs() < 1e-10);
        prop_assert!((apply_loss(&p, eta).unwrap().total_mass() - p.total_mass()).abs() < 1e-10);
    }

    #[test]
    fn eye_response_is_monotone(theta in 1u32..=12, eta in 0.001f64..=1.0, dark in 0.0f64..2.0) {
        let det = DetectorModel::new(theta, eta, dark).unwrap();
        let f = det.fock_response(501);
        prop_assert!(f.windows(2).all(|w| w[1] >= w[0]));
        if theta == 1 && dark == 0.0 {
            for (n, v) in f.iter().enumerate().take(60) {
                prop_assert!((v - (1.0 - (1.0 - eta).powi(n as i32))).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn poisson_average_of_fock_response_is_coherent_response(
        mu in 0.0f64..300.0,
        det in detector(),
        dark in 0.0f64..1.0,
    ) {
        let det = DetectorModel::new(det.theta, det.eta, dark).unwrap();
        let p = NumberDistribution::poisson(mu, 1e-11).unwrap();
        let f = det.fock_response(p.probs().len());
        let avg: f64 = p.probs().iter().zip(&f).map(|(a, b)| a * b).sum();
        prop_assert!((avg - det.click_prob_coherent(mu)).abs() < 1e-9);
    }

    #[test]
    fn boundary_cells_project_onto_themselves(ps in 0.01f64..0.95) {
        let cell = CellProbabilities::new(ps, ps * ps * (1.0 - 1e-9)).unwrap();
        let coeffs = transform_coefficients(&cell).unwrap();
        let ps_cl = classical_projection(&cell, &coeffs).unwrap();
        prop_assert!((ps_cl - ps).abs() < 1e-9 * ps.max(1e-3));
    }

    #[test]
    fn windowed_trinomial_mass_is_complete(
        ps in 0.02f64..0.9,
        ratio in 0.05f64..0.95,
        n in 1_000u64..200_000,
    ) {
        let cell = CellProbabilities::new(ps, ps * ratio).unwrap();
        prop_assume!(cell.pc < cell.ps * cell.ps * 0.999);
        let est = Estimator::new(&cell, 10.0).unwrap();
        let mass = region_probability(&est, &cell, n, 1e9, &SummationLimits::default()).unwrap();
        prop_assert!(mass >= 1.0 - 1e-8, "{mass}");
    }

    #[test]
    fn click_probability_grows_with_beta(b1 in 0.0f64..1.0, b2 in 0.0f64..1.0) {
        let (lo, hi) = if b1 < b2 { (b1, b2) } else { (b2, b1) };
        prop_assume!(hi - lo > 1e-6);
        let p = |beta: f64| {
            let params = PreparationParams { beta: c(beta, 0.0), reflected_cutoff: 24, ..PreparationParams::default() };
            conditional_state(&params).unwrap()
        };
        let (a, b) = (p(lo), p(hi));
        prop_assert!(b.p_click_given_herald > a.p_click_given_herald);
        prop_assert!((a.rho.entries().trace().re - 1.0).abs() < 1e-10);
    }

    #[test]
    fn unitarity_of_displaced_columns(m in 0usize..=1, phase in -3.2f64..3.2) {
        let alpha = Complex64::from_polar(11.0, phase);
        let total: f64 = (0..1000)
            .map(|n| displaced_fock_amplitude(n, m, alpha).unwrap().norm_sqr())
            .sum();
        prop_assert!((total - 1.0).abs() < 1e-8);
    }

    #[test]
    fn refinement_never_worsens_the_grid_minimum(
        cx in -1.0f64..1.0,
        cy in -1.0f64..1.0,
        scale in 0.1f64..10.0,
    ) {
        let f = |x: &[f64]| Ok((x[0] - cx).powi(2) + 3.0 * (x[1] - cy).powi(2) + 0.3 * (x[0] * x[1]).sin());
        let g = |x: &[f64]| f(x).map(|v| scale * v);
        let bounds = [(-1.5, 1.5), (-1.5, 1.5)];
        let a = minimize_bounded(&f, &bounds, &[5, 5], 300, 1e-6).unwrap();
        let b = minimize_bounded(&g, &bounds, &[5, 5], 300, 1e-6).unwrap();
        let best_grid = a
            .trace
            .iter()
            .filter(|t| t.stage == eyewitness::optimizer::Stage::Grid)
            .filter_map(|t| t.value)
            .fold(f64::INFINITY, f64::min);
        prop_assert!(a.value <= best_grid);
        prop_assert!((a.point[0] - b.point[0]).abs() < 1e-4 && (a.point[1] - b.point[1]).abs() < 1e-4);
        let again = minimize_bounded(&f, &bounds, &[5, 5], 300, 1e-6).unwrap();
        prop_assert_eq!(a.trace, again.trace);
    }
}

fn working_estimator() -> &'static (CellProbabilities, Estimator) {
    static EST: OnceLock<(CellProbabilities, Estimator)> = OnceLock::new();
    EST.get_or_init(|| {
        let cell = working_point_cell();
        (cell, Estimator::new(&cell, 40.0).unwrap())
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(6))]

    #[test]
    fn pvalue_and_critical_value_are_dual(eps in 0.01f64..0.2, n in 50_000u64..400_000) {
        let (_, est) = working_estimator();
        let limits = SummationLimits::default();
        let scan = ClassicalScan::default();
        let crit = critical_chi0(eps, n, est, &ClassicalSearch::Grid(scan), &limits).unwrap();
        let grid = classical_pvalue(crit.chi0, n, est, &scan, &limits).unwrap();
        prop_assert!(grid.pvalue <= eps && grid.pvalue >= eps * (1.0 - 1e-3), "{} vs {eps}", grid.pvalue);

        let verified = ClassicalSearch::default();
        let crit_v = critical_chi0(eps, n, est, &verified, &limits).unwrap();
        let worst = worst_case_pvalue(crit_v.chi0, n, est, &verified, &limits).unwrap();
        prop_assert!(worst.pvalue <= eps && worst.pvalue >= eps * (1.0 - 1e-3), "{} vs {eps}", worst.pvalue);
        // the boundary search refines the grid maximum, so it never loosens the test
        prop_assert!(crit_v.chi0 <= crit.chi0 + 1e-12);

        let looser = critical_chi0(eps * 1.5, n, est, &verified, &limits).unwrap();
        prop_assert!(looser.chi0 >= crit_v.chi0);
    }
}

#[test]
fn refined_grid_changes_the_pvalue_by_under_two_percent() {
    let (_, est) = working_estimator();
    let limits = SummationLimits::default();
    let n = 350_000;
    let crit = critical_chi0(0.01, n, est, &ClassicalSearch::default(), &limits).unwrap();
    let scan = ClassicalScan::default();
    let coarse = classical_pvalue(crit.chi0, n, est, &scan, &limits).unwrap();
    let fine = classical_pvalue(crit.chi0, n, est, &scan.refined(), &limits).unwrap();
    assert!((fine.pvalue - coarse.pvalue).abs() < 0.02 * coarse.pvalue);
    assert!(fine.argmax_is_projection && coarse.argmax_is_projection);
}

#[test]
fn critical_value_near_zero_at_half() {
    let (_, est) = working_estimator();
    let n = 200_000;
    let crit = critical_chi0(0.5, n, est, &ClassicalSearch::default(), &SummationLimits::default()).unwrap();
    // chi spreads like N^{-1/2} around the classical center
    assert!(crit.chi0.abs() < 3.0 / n as f64 * (n as f64).sqrt(), "{}", crit.chi0);
}

fn prepared(t: f64, beta: f64) -> eyewitness::preparation::PreparedState {
    let params = PreparationParams {
        t,
        beta: c(beta, 0.0),
        reflected_cutoff: 40,
        ..PreparationParams::default()
    };
    conditional_state(&params).unwrap()
}

#[test]
fn unbalanced_splitter_beats_balanced_at_one_percent_clicks() {
    let balanced: Vec<_> = (0..=100).map(|i| prepared(0.5, 0.02 * i as f64)).collect();
    // a balanced splitter never reaches 1% clicks, so no balanced point matches
    assert!(balanced.iter().all(|s| s.p_click_given_herald > 0.01));
    let best_balanced = balanced.iter().map(|s| s.fidelity_plus).fold(0.0, f64::max);
    for t in [0.98, 0.99, 0.995] {
        let excess = |b: f64| prepared(t, b).p_click_given_herald - 0.01;
        let (mut lo, mut hi) = (0.0, 1.0);
        assert!(excess(lo) < 0.0 && excess(hi) > 0.0);
        for _ in 0..50 {
            let mid = 0.5 * (lo + hi);
            if excess(mid) > 0.0 {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        let s = prepared(t, lo);
        assert!(s.fidelity_plus > best_balanced, "t={t}: {} vs {best_balanced}", s.fidelity_plus);
    }
}

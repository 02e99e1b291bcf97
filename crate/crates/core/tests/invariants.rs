use std::f64::consts::PI;
use std::sync::Arc;

use num_complex::Complex64;
use proptest::prelude::*;
use sibath::evolution::{gate_time, integrate_phased, Dyson1, Propagation};
use sibath::experiments::{boltzmann_weights, estimator_by_name};
use sibath::hamiltonians::*;
use sibath::hyperfine::{bath_from_couplings, SpinBathConfig, DEFAULT_A_P};
use sibath::model::{derive_frequencies, FieldConfig, PhysicalConstants};
use sibath::sparse::SparseVector;

const MHZ: f64 = 2.0 * PI * 1e6;

fn bath(fields: FieldConfig, couplings_mhz: &[f64]) -> SpinBathConfig {
    let f = derive_frequencies(&PhysicalConstants::default(), &fields).unwrap();
    let a: Vec<f64> = couplings_mhz.iter().map(|x| x * MHZ).collect();
    bath_from_couplings(&f, DEFAULT_A_P, &a)
}

fn strong(couplings_mhz: &[f64]) -> SpinBathConfig {
    bath(FieldConfig::default(), couplings_mhz)
}

fn couplings(max_len: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.01f64..10.0, 0..=max_len)
}

fn convention() -> impl Strategy<Value = &'static str> {
    prop::sample::select(CONVENTIONS.to_vec())
}

/// Induced ∞-norm (largest absolute row sum).
fn inf_norm(m: &OperatorMatrix) -> f64 {
    (0..m.nrows())
        .map(|i| m.row(i).iter().map(|c| c.norm()).sum::<f64>())
        .fold(0.0, f64::max)
}

fn gram_defect(u: &OperatorMatrix) -> f64 {
    let n = u.nrows();
    inf_norm(&(u.adjoint() * u - OperatorMatrix::identity(n, n)))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn dyson_propagator_gram_defect_is_bounded(
        a in couplings(3),
        conv in convention(),
        angle in 0.01f64..(2.0 * PI),
        start in 0.0f64..2e-6,
    ) {
        let b = strong(&a);
        let conv = convention_by_name(conv).unwrap();
        let t1 = start + gate_time(angle, b.frequencies.omega_x_p);

        // assembled from the materialized Hamiltonian
        let ham = build_strong_phased(&b, conv.clone(), true).unwrap();
        let p = integrate_phased(&ham, start, t1);
        let w2 = p.w_norm * p.w_norm;
        prop_assert!(gram_defect(&p.matrix) <= w2 * (1.0 + 1e-9) + 1e-15);

        // built column by column through the registered propagation
        let frame = StrongFrame::new(&b, conv);
        let dim = b.dim() as usize;
        let mut u = OperatorMatrix::zeros(dim, dim);
        let mut w_norm = 0.0;
        for j in 0..dim {
            let step = Dyson1.propagate(&frame, &SparseVector::basis(j as u64), start, t1).unwrap();
            w_norm = step.w_norm;
            for (i, c) in step.vector.to_dense(dim).into_iter().enumerate() {
                u[(i, j)] = c;
            }
        }
        prop_assert!(gram_defect(&u) <= w_norm * w_norm * (1.0 + 1e-9) + 1e-15);
        prop_assert!((&u - &p.matrix).iter().all(|c| c.norm() < 1e-12));
    }

    #[test]
    fn built_hamiltonians_are_hermitian(a in couplings(5), t in 0.0f64..1e-6, conv in convention()) {
        let b = strong(&a);
        let tol = 1e-12;
        prop_assert!(hermiticity_defect(&build_free(&b).unwrap()) <= tol);
        prop_assert!(hermiticity_defect(&build_hyperfine(&b).unwrap()) <= tol);
        prop_assert!(hermiticity_defect(&build_zz(&b).unwrap()) <= tol);
        prop_assert!(hermiticity_defect(&build_si_zeeman(&b).unwrap()) <= tol);
        prop_assert!(hermiticity_defect(&build_drive(&b).unwrap().at(t)) <= tol);
        let phased = build_strong_phased(&b, convention_by_name(conv).unwrap(), true).unwrap();
        prop_assert!(phased.hermitian_closure_defect() <= tol);
        prop_assert!(hermiticity_defect(&phased.dense_at(t)) <= tol);
        let weak = bath(FieldConfig { b_x: 1e-3, ..FieldConfig::default() }, &a);
        prop_assert!(hermiticity_defect(&build_weak_effective(&weak).unwrap()) <= tol);
    }

    #[test]
    fn small_rotation_is_unitary(a in couplings(5), conv in convention()) {
        let b = strong(&a);
        let u = small_rotation(&b, convention_by_name(conv).unwrap().as_ref()).unwrap();
        prop_assert!(unitarity_defect(&u.matrix) <= 1e-12);
        prop_assert!(unitarity_defect(&u.matrix.adjoint()) <= 1e-12);
    }

    #[test]
    fn bath_zeeman_commutes_with_secular_terms(a in couplings(6)) {
        let b = strong(&a);
        let h_si = build_si_zeeman(&b).unwrap();
        prop_assert!(max_abs(&commutator(&build_free(&b).unwrap(), &h_si)) <= 1e-12);
        prop_assert!(max_abs(&commutator(&build_zz(&b).unwrap(), &h_si)) <= 1e-12);
        let weak = bath(FieldConfig { b_x: 1e-3, ..FieldConfig::default() }, &a);
        let h_si = build_si_zeeman(&weak).unwrap();
        prop_assert!(max_abs(&commutator(&build_weak_effective(&weak).unwrap(), &h_si)) <= 1e-12);
    }

    #[test]
    fn boltzmann_weights_are_normalized(a in couplings(10), temperature in 0.01f64..10.0) {
        let b = strong(&a);
        let c = PhysicalConstants::default();
        let w = boltzmann_weights(&b, &c, temperature, 12).unwrap();
        prop_assert_eq!(w.len(), 1usize << a.len());
        prop_assert!(w.iter().all(|&x| x > 0.0));
        prop_assert!((w.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        for name in ["enumerate", "sample(7)", "antithetic(5)", "auto"] {
            let est = estimator_by_name(name, 12).unwrap();
            let s = est.states(&b, &c, temperature, 17).unwrap();
            prop_assert!((s.iter().map(|x| x.weight).sum::<f64>() - 1.0).abs() <= 1e-12, "{}", name);
        }
    }

    #[test]
    fn sparse_rotation_preserves_norm(a in couplings(12), bits in any::<u64>(), conv in convention()) {
        let b = strong(&a);
        let state = (bits & ((1u64 << a.len()) - 1)) << 2 | 1;
        let v = apply_small_rotation(&b, convention_by_name(conv).unwrap().as_ref(), &SparseVector::basis(state), true);
        prop_assert!((v.norm_sqr() - 1.0).abs() <= 1e-12);
    }
}

#[test]
fn perturbation_parameters_are_small_at_defaults() {
    // the strongest coupling the hyperfine model admits is its ceiling
    let b = strong(&[10.0, 10.0, 3.0]);
    for name in CONVENTIONS {
        let u = small_rotation(&b, convention_by_name(name).unwrap().as_ref()).unwrap();
        assert!(u.max_alpha < 0.1, "{name}: {}", u.max_alpha);
        assert!(!u.degraded);
    }
    assert!(b.max_alpha() < 0.1);
}

#[test]
fn first_order_propagator_matches_quadrature() {
    // one off-diagonal pair with a pure phase, integrated by composite Simpson
    let rate = 2.0 * PI * 3.3e6;
    let amp = Complex64::new(1.7e5, -0.4e5);
    let ham = PhasedSparseHamiltonian::from_entries(
        2,
        vec![
            PhasedEntry { row: 0, col: 1, amplitude: amp, phase_rate: rate },
            PhasedEntry { row: 1, col: 0, amplitude: amp.conj(), phase_rate: -rate },
        ],
    );
    let (t0, t1) = (0.13e-6, 1.9e-6);
    let n = 20_000;
    let h = (t1 - t0) / n as f64;
    let mut sum = Complex64::new(0.0, 0.0);
    for k in 0..=n {
        let w = if k == 0 || k == n { 1.0 } else if k % 2 == 1 { 4.0 } else { 2.0 };
        sum += Complex64::from_polar(w, rate * (t0 + k as f64 * h));
    }
    let integral = sum * (h / 3.0);
    let p = integrate_phased(&ham, t0, t1);
    let expected = -Complex64::i() * amp * integral;
    assert!((p.matrix[(0, 1)] - expected).norm() < 1e-12 * expected.norm().max(1.0));
    assert!((p.matrix[(1, 0)] - (-Complex64::i() * (amp * integral).conj())).norm() < 1e-9);
    assert_eq!(p.matrix[(0, 0)], Complex64::new(1.0, 0.0));

    // a zero rate integrates to amplitude times duration
    let still = PhasedSparseHamiltonian::from_entries(
        2,
        vec![
            PhasedEntry { row: 0, col: 1, amplitude: amp, phase_rate: 0.0 },
            PhasedEntry { row: 1, col: 0, amplitude: amp.conj(), phase_rate: 0.0 },
        ],
    );
    let p = integrate_phased(&still, t0, t1);
    assert!((p.matrix[(0, 1)] - (-Complex64::i() * amp * (t1 - t0))).norm() < 1e-12);
    assert!((p.w_norm - amp.norm() * (t1 - t0)).abs() < 1e-12);
}

#[test]
fn conventions_share_one_phased_skeleton() {
    let b = strong(&[4.0, 1.5]);
    let skeleton = |name: &str| -> Vec<(u64, u64)> {
        let h = build_strong_phased(&b, convention_by_name(name).unwrap(), true).unwrap();
        let mut v: Vec<_> = h.entries.iter().map(|e| (e.row, e.col)).collect();
        v.sort();
        v.dedup();
        v
    };
    let first: Arc<[(u64, u64)]> = skeleton(CONVENTIONS[0]).into();
    for name in &CONVENTIONS[1..] {
        assert_eq!(&*first, skeleton(name).as_slice(), "{name}");
    }
}

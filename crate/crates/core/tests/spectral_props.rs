//! Property and oracle tests for spectral decompositions and dilated
//! measurement unitaries. Channel outputs from the dilated route are checked
//! against direct projector arithmetic computed without the dilation code.

use nalgebra::DMatrix;
use proptest::prelude::*;
use stinesim::hilbert::{c, cr, CMatrix, DensityMatrix, Ket, Register, RegisterKind, RegisterLayout};
use stinesim::spectral::{
    apply_channel, apply_selective, destructive_number_unitary, kraus_from_observable,
    measurement_unitary, pauli, pointer_evolve, qubit_observable_involution, spectral_decompose,
    unitary_from_kraus, weyl_shift, GaussianPointer, KrausClass, KrausSet,
};
use stinesim::{Grid1D, NumericPolicy, Operator};

fn hermitian_from(parts: &[f64], d: usize, label: &str) -> Operator {
    let mut m = CMatrix::zeros(d, d);
    for i in 0..d {
        for j in 0..d {
            let k = 2 * (i * d + j);
            m[(i, j)] = c(parts[k], parts[k + 1]);
        }
    }
    let herm = (&m + m.adjoint()) * cr(0.5);
    let layout = RegisterLayout::single(label, d, RegisterKind::Physical);
    Operator::new(layout, herm).unwrap()
}

fn random_density(parts: &[f64], d: usize, label: &str) -> DensityMatrix {
    // A A^dag / tr is positive with unit trace for any A != 0
    let mut a = CMatrix::zeros(d, d);
    for i in 0..d {
        for j in 0..d {
            let k = 2 * (i * d + j);
            a[(i, j)] = c(parts[k] + 0.1, parts[k + 1]);
        }
    }
    let m = &a * a.adjoint();
    let tr = m.trace().re;
    let layout = RegisterLayout::single(label, d, RegisterKind::Physical);
    DensityMatrix::new(layout, m / cr(tr)).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn decomposition_invariants_hold(
        d in 2usize..=6,
        parts in prop::collection::vec(-1.0f64..1.0, 2 * 6 * 6),
        rho_parts in prop::collection::vec(-1.0f64..1.0, 2 * 6 * 6),
    ) {
        let pol = NumericPolicy::default();
        let obs = hermitian_from(&parts, d, "q");
        let sd = spectral_decompose(&obs, None, &pol).unwrap();
        sd.validate(Some(&obs), &pol).unwrap();

        // eigenvalues strictly increasing
        for w in sd.eigenvalues().windows(2) {
            prop_assert!(w[0] < w[1]);
        }
        prop_assert_eq!(sd.multiplicities().iter().sum::<usize>(), d);

        let mu = measurement_unitary(&sd).unwrap();
        mu.unitary().assert_unitary(&pol).unwrap();

        let rho = random_density(&rho_parts, d, "q");

        // channel oracle: direct projector arithmetic
        let mut direct = CMatrix::zeros(d, d);
        for p in sd.projectors() {
            direct += p.entries() * rho.entries() * p.entries().adjoint();
        }
        let dilated = apply_channel(&mu, &rho).unwrap();
        prop_assert!((dilated.entries() - &direct).camax() < 1e-10);
        dilated.validate(1.0, &pol).unwrap();

        // selective outcomes: probabilities from tr(P rho), states from P rho P / p
        let mut total = 0.0;
        for m in 0..sd.n_outcomes() {
            let (p, state) = apply_selective(&mu, &rho, m, &pol).unwrap();
            let p_direct = (sd.projector(m).entries() * rho.entries()).trace().re;
            prop_assert!((p - p_direct).abs() < 1e-10);
            total += p;
            if let Some(s) = state {
                let direct_m = sd.projector(m).entries() * rho.entries()
                    * sd.projector(m).entries().adjoint() / cr(p_direct);
                prop_assert!((s.entries() - direct_m).camax() < 1e-9);
                // repeating the measurement on the collapsed state is deterministic
                let (p_again, _) = apply_selective(&mu, &s, m, &pol).unwrap();
                prop_assert!((p_again - 1.0).abs() < 1e-10);
            }
        }
        prop_assert!((total - 1.0).abs() < 1e-10);
    }

    #[test]
    fn kraus_dilation_round_trip(
        d in 2usize..=4,
        parts in prop::collection::vec(-1.0f64..1.0, 2 * 4 * 4),
    ) {
        let pol = NumericPolicy::default();
        let obs = hermitian_from(&parts, d, "q");
        let sd = spectral_decompose(&obs, None, &pol).unwrap();
        let ks = kraus_from_observable(&sd, &pol).unwrap();
        prop_assert_eq!(ks.classification(), KrausClass::Channel);
        prop_assert!(ks.completeness_residual() < 1e-10);

        let mu = unitary_from_kraus(&ks, 0).unwrap();
        mu.unitary().assert_unitary(&pol).unwrap();

        // reading the Kraus operators back off the default column
        let back = mu.extract_kraus(&pol).unwrap();
        prop_assert_eq!(back.len(), ks.len());
        for (a, b) in back.operators().iter().zip(ks.operators()) {
            prop_assert!((a.entries() - b.entries()).camax() < 1e-12);
        }

        // the two dilations implement the same channel
        let mu2 = measurement_unitary(&sd).unwrap();
        let rho = random_density(&parts, d, "q");
        let r1 = apply_channel(&mu, &rho).unwrap();
        let r2 = apply_channel(&mu2, &rho).unwrap();
        prop_assert!((r1.entries() - r2.entries()).camax() < 1e-10);
    }

    #[test]
    fn involution_squares_to_identity(parts in prop::collection::vec(-1.0f64..1.0, 8)) {
        let pol = NumericPolicy::default();
        let obs = hermitian_from(&parts, 2, "q");
        let sd = spectral_decompose(&obs, None, &pol).unwrap();
        prop_assume!(sd.n_outcomes() == 2);
        let gap = sd.eigenvalues()[1] - sd.eigenvalues()[0];
        prop_assume!(gap > 1e-3);

        let bar = qubit_observable_involution(&obs, &pol).unwrap();
        let sq = bar.entries() * bar.entries();
        prop_assert!((sq - CMatrix::identity(2, 2)).camax() < 1e-9);

        // shares the observable's eigenprojectors, with eigenvalues -1 and +1
        let sd_bar = spectral_decompose(&bar, None, &pol).unwrap();
        prop_assert!((sd_bar.eigenvalues()[0] + 1.0).abs() < 1e-9);
        prop_assert!((sd_bar.eigenvalues()[1] - 1.0).abs() < 1e-9);
        for m in 0..2 {
            prop_assert!(
                (sd_bar.projector(m).entries() - sd.projector(m).entries()).camax() < 1e-8
            );
        }
    }
}

#[test]
fn weyl_shifts_compose_cyclically() {
    let pol = NumericPolicy::default();
    for k in 2..=5 {
        for m in 0..k {
            let s = weyl_shift(k, m).unwrap();
            s.assert_unitary(&pol).unwrap();
            for b in 0..k {
                assert_eq!(s.entries()[((b + m) % k, b)], cr(1.0));
            }
        }
        // S^1 applied k times is the identity
        let s1 = weyl_shift(k, 1).unwrap();
        let mut acc = Operator::identity(s1.layout().clone());
        for _ in 0..k {
            acc = acc.mul(&s1).unwrap();
        }
        assert!((acc.entries() - CMatrix::identity(k, k)).camax() < 1e-12);
    }
}

#[test]
fn degenerate_eigenvalues_merge() {
    let pol = NumericPolicy::default();
    // diag(1, 1, 3) has a doubly degenerate eigenvalue
    let layout = RegisterLayout::single("q", 3, RegisterKind::Physical);
    let obs = Operator::new(
        layout,
        CMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![cr(1.0), cr(1.0), cr(3.0)])),
    )
    .unwrap();
    let sd = spectral_decompose(&obs, None, &pol).unwrap();
    assert_eq!(sd.n_outcomes(), 2);
    assert_eq!(sd.multiplicities(), &[2, 1]);
    assert_eq!(sd.eigenvalues(), &[1.0, 3.0]);
    sd.validate(Some(&obs), &pol).unwrap();
    assert!((sd.projector(0).trace() - cr(2.0)).norm() < 1e-12);

    // a wide explicit tolerance merges everything into one outcome
    let sd_all = spectral_decompose(&obs, Some(5.0), &pol).unwrap();
    assert_eq!(sd_all.n_outcomes(), 1);
    assert_eq!(sd_all.multiplicities(), &[3]);
}

#[test]
fn z_measurement_unitary_is_zero_controlled_not() {
    // outcome 0 is the eigenvalue -1 branch |1>, so the shift fires on |0>
    let pol = NumericPolicy::default();
    let z = pauli("q", 'z').unwrap();
    let sd = spectral_decompose(&z, None, &pol).unwrap();
    let mu = measurement_unitary(&sd).unwrap();
    let u = mu.unitary().entries();
    // |0>|0> -> |0>|1>, |1>|0> -> |1>|0>
    let mut expect = CMatrix::zeros(4, 4);
    expect[(1, 0)] = cr(1.0);
    expect[(0, 1)] = cr(1.0);
    expect[(2, 2)] = cr(1.0);
    expect[(3, 3)] = cr(1.0);
    assert!((u - expect).camax() < 1e-12);
}

#[test]
fn destructive_counter_moves_occupation_to_pointer() {
    let pol = NumericPolicy::default();
    let cutoff = 5;
    let mu = destructive_number_unitary(cutoff).unwrap();
    mu.unitary().assert_unitary(&pol).unwrap();
    let layout = mu.layout().clone();
    let d = cutoff + 1;
    for n in 0..=cutoff {
        let input = Ket::basis_state(layout.clone(), &[n, 0]).unwrap();
        let out = mu.unitary().apply(&input).unwrap();
        let expect = Ket::basis_state(layout.clone(), &[0, n]).unwrap();
        assert!(
            (out.amplitudes() - expect.amplitudes()).camax() < 1e-12,
            "|{}>|0> must map to |0>|{}>",
            n,
            n
        );
    }
    assert_eq!(mu.ss_dim(), d);

    // superposition: counts transfer coherently and the mode empties
    let mut amps = nalgebra::DVector::zeros(d * d);
    amps[layout.compose(&[0, 0])] = cr(0.6);
    amps[layout.compose(&[3, 0])] = cr(0.8);
    let psi = Ket::new(layout.clone(), amps).unwrap();
    let out = mu.unitary().apply(&psi).unwrap();
    assert!((out.amplitude(layout.compose(&[0, 0])) - cr(0.6)).norm() < 1e-12);
    assert!((out.amplitude(layout.compose(&[0, 3])) - cr(0.8)).norm() < 1e-12);
}

#[test]
fn operation_completes_to_channel() {
    let pol = NumericPolicy::default();
    // single Kraus operator K = P_0 of a Z measurement: trace decreasing
    let z = pauli("q", 'z').unwrap();
    let sd = spectral_decompose(&z, None, &pol).unwrap();
    let ks = KrausSet::new(vec![sd.projector(0).clone()], &pol).unwrap();
    assert_eq!(ks.classification(), KrausClass::Operation);
    assert!(unitary_from_kraus(&ks, 0).is_err());

    let full = ks.complete_to_channel(&pol).unwrap();
    assert_eq!(full.classification(), KrausClass::Channel);
    assert_eq!(full.len(), 2);
    assert!(full.completeness_residual() < 1e-12);
    // the added operator is the defect square root, here P_1
    assert!((full.operators()[1].entries() - sd.projector(1).entries()).camax() < 1e-12);
    assert!(unitary_from_kraus(&full, 0).is_ok());
}

#[test]
fn nonpositive_defect_is_rejected() {
    let pol = NumericPolicy::default();
    // K = 2 I makes sum K^dag K = 4I > I
    let layout = RegisterLayout::single("q", 2, RegisterKind::Physical);
    let k = Operator::new(layout, CMatrix::identity(2, 2) * cr(2.0)).unwrap();
    assert!(KrausSet::new(vec![k], &pol).is_err());
}

#[test]
fn pointer_branches_carry_born_weights() {
    let pol = NumericPolicy::default();
    let z = pauli("q", 'z').unwrap();
    let sd = spectral_decompose(&z, None, &pol).unwrap();
    let grid = Grid1D::new(-10.0, 0.01, 2001).unwrap();
    let packet = GaussianPointer { x0: 0.0, sigma: 0.3, grid };
    // amplitudes 0.6 |0> + 0.8 |1>; lambda t = 5 separates the branches
    let layout = z.layout().clone();
    let psi = Ket::new(
        layout,
        nalgebra::DVector::from_vec(vec![cr(0.6), cr(0.8)]),
    )
    .unwrap();
    let state = pointer_evolve(&sd, &packet, 5.0, 1.0, &psi, &pol).unwrap();
    assert!((state.norm_sq() - 1.0).abs() < 1e-8);

    let marginal = state.pointer_marginal();
    // branch centers: lambda_0 = -1 -> x = -5 (weight |<1|psi>|^2 = 0.64),
    // lambda_1 = +1 -> x = +5 (weight 0.36)
    let mut left = 0.0;
    let mut right = 0.0;
    for (i, &m) in marginal.iter().enumerate() {
        let w = if i == 0 || i + 1 == grid.n { 0.5 } else { 1.0 };
        if grid.x(i) < 0.0 {
            left += w * m * grid.step;
        } else {
            right += w * m * grid.step;
        }
    }
    assert!((left - 0.64).abs() < 1e-8, "left mass {}", left);
    assert!((right - 0.36).abs() < 1e-8, "right mass {}", right);

    // peak positions
    let imax_left = (0..grid.n / 2).max_by(|&a, &b| marginal[a].total_cmp(&marginal[b])).unwrap();
    let imax_right =
        (grid.n / 2..grid.n).max_by(|&a, &b| marginal[a].total_cmp(&marginal[b])).unwrap();
    assert!((grid.x(imax_left) + 5.0).abs() < 0.02);
    assert!((grid.x(imax_right) - 5.0).abs() < 0.02);
}

#[test]
fn pointer_rejects_offgrid_centers() {
    let pol = NumericPolicy::default();
    let z = pauli("q", 'z').unwrap();
    let sd = spectral_decompose(&z, None, &pol).unwrap();
    let grid = Grid1D::new(-2.0, 0.01, 401).unwrap();
    let packet = GaussianPointer { x0: 0.0, sigma: 0.3, grid };
    let psi = Ket::from_flat(z.layout().clone(), 0).unwrap();
    // lambda t = 5 pushes centers to +-5, outside [-2, 2]
    let r = pointer_evolve(&sd, &packet, 5.0, 1.0, &psi, &pol);
    assert!(matches!(r, Err(stinesim::Error::NumericalGuard(_))));
}

#[test]
fn measurement_on_composite_registers() {
    // observable acting on the full two-qubit space
    let pol = NumericPolicy::default();
    let layout = RegisterLayout::new(vec![
        Register::physical("a", 2),
        Register::physical("b", 2),
    ])
    .unwrap();
    // Z (x) Z: eigenvalues -1 (odd parity, mult 2) and +1 (even parity, mult 2)
    let mut zz = CMatrix::zeros(4, 4);
    for i in 0..4 {
        let (ia, ib) = (i / 2, i % 2);
        let sign = if ia == ib { 1.0 } else { -1.0 };
        zz[(i, i)] = cr(sign);
    }
    let obs = Operator::new(layout.clone(), zz).unwrap();
    let sd = spectral_decompose(&obs, None, &pol).unwrap();
    assert_eq!(sd.n_outcomes(), 2);
    assert_eq!(sd.multiplicities(), &[2, 2]);

    let mu = measurement_unitary(&sd).unwrap();
    assert_eq!(mu.ss_dim(), 2);
    assert_eq!(mu.physical_labels(), vec!["a", "b"]);

    // GHZ-like correlated state: (|00> + |11>)/sqrt(2) has even parity
    let amps = nalgebra::DVector::from_vec(vec![
        cr(std::f64::consts::FRAC_1_SQRT_2),
        cr(0.0),
        cr(0.0),
        cr(std::f64::consts::FRAC_1_SQRT_2),
    ]);
    let psi = Ket::new(layout, amps).unwrap();
    let rho = psi.to_density();
    let (p_even, state) = apply_selective(&mu, &rho, 1, &pol).unwrap();
    assert!((p_even - 1.0).abs() < 1e-12);
    assert!((state.unwrap().entries() - rho.entries()).camax() < 1e-12);
    let (p_odd, none) = apply_selective(&mu, &rho, 0, &pol).unwrap();
    assert!(p_odd < 1e-12);
    assert!(none.is_none());
}

#[test]
fn degenerate_qubit_involution_rejected() {
    let pol = NumericPolicy::default();
    let layout = RegisterLayout::single("q", 2, RegisterKind::Physical);
    let obs = Operator::new(layout, CMatrix::identity(2, 2) * cr(3.0)).unwrap();
    assert!(matches!(
        qubit_observable_involution(&obs, &pol),
        Err(stinesim::Error::Degenerate)
    ));
}

#[test]
fn kraus_set_json_round_trip() {
    let pol = NumericPolicy::default();
    let z = pauli("q", 'z').unwrap();
    let sd = spectral_decompose(&z, None, &pol).unwrap();
    let ks = kraus_from_observable(&sd, &pol).unwrap();
    let s = serde_json::to_string(&ks).unwrap();
    let back: KrausSet = serde_json::from_str(&s).unwrap();
    assert_eq!(back.len(), 2);
    assert_eq!(back.classification(), KrausClass::Channel);
    for (a, b) in back.operators().iter().zip(ks.operators()) {
        assert!((a.entries() - b.entries()).camax() < 1e-15);
    }
}

#[test]
fn fresh_pointer_label_avoids_collisions() {
    let pol = NumericPolicy::default();
    // physical register already named "ss"
    let layout = RegisterLayout::single("ss", 2, RegisterKind::Physical);
    let obs = Operator::new(layout, DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![cr(0.0), cr(1.0)]))).unwrap();
    let sd = spectral_decompose(&obs, None, &pol).unwrap();
    let mu = measurement_unitary(&sd).unwrap();
    assert_eq!(mu.ss_label(), "ss0");
    assert_eq!(mu.physical_labels(), vec!["ss"]);
}

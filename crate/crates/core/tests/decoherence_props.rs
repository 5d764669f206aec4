//! Decoherence channel tests: the analytic dephasing channel against the
//! Monte-Carlo block-Haar average, Haar moment checks, and the collapsed-form
//! fixed point.

use nalgebra::DVector;
use stinesim::decoherence::{
    coherence_norm, dephase_exact, dephase_sampled, sample_block_haar, SymmetryBlocks,
};
use stinesim::hilbert::{
    c, cr, trace_distance, CMatrix, DensityMatrix, Ket, Register, RegisterKind, RegisterLayout,
};
use stinesim::protocol::{run_dilated, Instruction, ProtocolSpec};
use stinesim::spectral::{bit_observable, spectral_decompose};
use stinesim::{partial_trace, NumericPolicy};

fn dilated_two_outcome_state() -> (DensityMatrix, SymmetryBlocks) {
    // measurement-correlated pure state with off-diagonal pointer coherences:
    // (0.6 |0>|0> + 0.8 |1>|1>)
    let layout = RegisterLayout::new(vec![
        Register::physical("q", 2),
        Register::stinespring("m", 2),
    ])
    .unwrap();
    let mut amps = DVector::zeros(4);
    amps[layout.compose(&[0, 0])] = cr(0.6);
    amps[layout.compose(&[1, 1])] = cr(0.8);
    let psi = Ket::new(layout, amps).unwrap();
    (psi.to_density(), SymmetryBlocks::minimal(2))
}

#[test]
fn haar_first_moment_vanishes() {
    let blocks = SymmetryBlocks::new(vec![(0..4).collect()], 4).unwrap();
    let layout = RegisterLayout::single("ss", 4, RegisterKind::Stinespring);
    let samples = 10_000;
    let mut mean = DVector::<stinesim::C64>::zeros(4);
    let mut second = 0.0;
    for s in 0..samples {
        let u = sample_block_haar(&blocks, layout.clone(), s).unwrap();
        for i in 0..4 {
            mean[i] += u.entries()[(i, 0)];
        }
        second += u.entries()[(0, 0)].norm_sqr();
    }
    mean /= cr(samples as f64);
    second /= samples as f64;
    assert!(mean.norm() < 0.05, "first moment norm {}", mean.norm());
    // E |U_00|^2 = 1/n for Haar on U(n)
    assert!((second - 0.25).abs() < 0.02, "second moment {}", second);
}

#[test]
fn haar_left_invariance_statistics() {
    // distribution of V U matches that of U: compare E|(VU)_00|^2 to 1/n
    let n = 3;
    let blocks = SymmetryBlocks::new(vec![(0..n).collect()], n).unwrap();
    let layout = RegisterLayout::single("ss", n, RegisterKind::Stinespring);
    // fixed unitary V: cyclic shift
    let mut v = CMatrix::zeros(n, n);
    for k in 0..n {
        v[((k + 1) % n, k)] = cr(1.0);
    }
    let samples = 4000;
    let mut second_u = 0.0;
    let mut second_vu = 0.0;
    for s in 0..samples {
        let u = sample_block_haar(&blocks, layout.clone(), 77_000 + s).unwrap();
        let vu = &v * u.entries();
        second_u += u.entries()[(0, 0)].norm_sqr();
        second_vu += vu[(0, 0)].norm_sqr();
    }
    second_u /= samples as f64;
    second_vu /= samples as f64;
    let expect = 1.0 / n as f64;
    assert!((second_u - expect).abs() < 0.03);
    assert!((second_vu - expect).abs() < 0.03);
}

#[test]
fn sampled_unitaries_are_unitary_and_block_diagonal() {
    let pol = NumericPolicy::default();
    let blocks = SymmetryBlocks::from_multiplicities(&[2, 3, 1]).unwrap();
    let layout = RegisterLayout::single("ss", 6, RegisterKind::Stinespring);
    for seed in 0..20 {
        let u = sample_block_haar(&blocks, layout.clone(), seed).unwrap();
        u.assert_unitary(&pol).unwrap();
        let block_of = blocks.block_of();
        for i in 0..6 {
            for j in 0..6 {
                if block_of[i] != block_of[j] {
                    assert_eq!(u.entries()[(i, j)], c(0.0, 0.0));
                }
            }
        }
    }
}

#[test]
fn minimal_blocks_collapse_to_outcome_mixture() {
    let pol = NumericPolicy::default();
    let (rho, blocks) = dilated_two_outcome_state();
    let out = dephase_exact(&rho, &blocks).unwrap();
    out.validate(1.0, &pol).unwrap();

    // expected: 0.36 |0,0><0,0| + 0.64 |1,1><1,1|
    let layout = rho.layout().clone();
    let mut expected = CMatrix::zeros(4, 4);
    expected[(layout.compose(&[0, 0]), layout.compose(&[0, 0]))] = cr(0.36);
    expected[(layout.compose(&[1, 1]), layout.compose(&[1, 1]))] = cr(0.64);
    assert!((out.entries() - expected).camax() < 1e-12);

    // idempotence
    let again = dephase_exact(&out, &blocks).unwrap();
    assert!((again.entries() - out.entries()).camax() < 1e-14);

    // physical reduced state untouched
    let before = partial_trace(&rho, &["q"]).unwrap();
    let after = partial_trace(&out, &["q"]).unwrap();
    assert!((before.entries() - after.entries()).camax() < 1e-12);
}

#[test]
fn multiplicity_blocks_flatten_to_maximally_mixed_pointer() {
    // degenerate observable: parity on two qubits measured into a dim-2
    // pointer, then decohered over blocks of multiplicity 2 in a dim-4 pointer
    let layout = RegisterLayout::new(vec![
        Register::physical("q", 2),
        Register::stinespring("m", 4),
    ])
    .unwrap();
    // physical branch states correlated with pointer states 0..3, blocks {0,1}, {2,3}
    let mut amps = DVector::zeros(8);
    amps[layout.compose(&[0, 0])] = cr(0.5);
    amps[layout.compose(&[0, 1])] = cr(0.5);
    amps[layout.compose(&[1, 2])] = cr(0.5);
    amps[layout.compose(&[1, 3])] = cr(0.5);
    let rho = Ket::new(layout.clone(), amps).unwrap().to_density();
    let blocks = SymmetryBlocks::from_multiplicities(&[2, 2]).unwrap();
    let out = dephase_exact(&rho, &blocks).unwrap();

    // block l contribution: rho_l (x) P_l / 2, here rho_0 = 0.5 |0><0| etc.
    let mut expected = CMatrix::zeros(8, 8);
    for (phys, ss_pair) in [(0usize, [0usize, 1]), (1, [2, 3])] {
        for &a in &ss_pair {
            let idx = layout.compose(&[phys, a]);
            expected[(idx, idx)] = cr(0.25);
        }
    }
    assert!((out.entries() - expected).camax() < 1e-12);
    assert!(coherence_norm(&out, &blocks).unwrap() < 1e-14);
}

#[test]
fn exact_channel_matches_monte_carlo_average() {
    let (rho, blocks) = dilated_two_outcome_state();
    let exact = dephase_exact(&rho, &blocks).unwrap();
    let mut prev = f64::INFINITY;
    for (s, seed) in [(100usize, 1u64), (1000, 2)] {
        let avg = dephase_sampled(&rho, &blocks, s, seed).unwrap();
        let td = trace_distance(&avg, &exact).unwrap();
        let bound = 5.0 / (s as f64).sqrt();
        assert!(td < bound, "S = {}: trace distance {} vs bound {}", s, td, bound);
        assert!(td < prev + 0.05);
        prev = td;
    }
}

#[test]
fn coherence_norm_tracks_offdiagonal_mass() {
    let (rho, blocks) = dilated_two_outcome_state();
    // inter-block part of the pure state: cross terms 0.6*0.8 at two positions
    let direct = (2.0f64 * (0.6 * 0.8f64).powi(2)).sqrt();
    let cn = coherence_norm(&rho, &blocks).unwrap();
    assert!((cn - direct).abs() < 1e-12, "norm {} vs direct {}", cn, direct);

    let dephased = dephase_exact(&rho, &blocks).unwrap();
    let cn_after = coherence_norm(&dephased, &blocks).unwrap();
    assert!(cn_after < 1e-14);
    assert!(cn_after <= cn);
}

#[test]
fn dephasing_single_measurement_run_gives_weighted_mixture() {
    let pol = NumericPolicy::default();
    let layout = RegisterLayout::new(vec![
        Register::physical("q", 2),
        Register::stinespring("m", 2),
    ])
    .unwrap();
    let obs = bit_observable("q", 'z').unwrap();
    let spec = ProtocolSpec::new(
        layout,
        vec![Instruction::Measure {
            observable: obs.clone(),
            target: vec!["q".into()],
            ss_label: "m".into(),
        }],
        &pol,
    )
    .unwrap();
    let amps = DVector::from_vec(vec![c(0.48, 0.36), c(0.64, -0.48)]);
    let psi = Ket::new(spec.physical_layout(), amps).unwrap().normalized().unwrap();
    let run = run_dilated(&spec, &psi.to_density(), &pol).unwrap();
    let blocks = SymmetryBlocks::minimal(2);
    let out = dephase_exact(&run.final_state, &blocks).unwrap();

    // oracle: sum_m p_m rho_m (x) |m><m| from the spectral module alone
    let sd = spectral_decompose(&obs, None, &pol).unwrap();
    let full = run.final_state.layout().clone();
    let mut expected = CMatrix::zeros(4, 4);
    for m in 0..2 {
        let branch = sd.projector(m).apply(&psi).unwrap();
        for i in 0..2 {
            for j in 0..2 {
                let (bi, bj) = (full.compose(&[i, m]), full.compose(&[j, m]));
                expected[(bi, bj)] = branch.amplitude(i) * branch.amplitude(j).conj();
            }
        }
    }
    assert!((out.entries() - expected).camax() < 1e-10);
}

#[test]
fn interleaved_registers_are_handled() {
    // pointer register between two physical registers
    let layout = RegisterLayout::new(vec![
        Register::physical("a", 2),
        Register::stinespring("m", 2),
        Register::physical("b", 2),
    ])
    .unwrap();
    let mut amps = DVector::zeros(8);
    amps[layout.compose(&[0, 0, 1])] = cr(0.6);
    amps[layout.compose(&[1, 1, 0])] = cr(0.8);
    let rho = Ket::new(layout.clone(), amps).unwrap().to_density();
    let blocks = SymmetryBlocks::minimal(2);
    let out = dephase_exact(&rho, &blocks).unwrap();

    let mut expected = CMatrix::zeros(8, 8);
    let i0 = layout.compose(&[0, 0, 1]);
    let i1 = layout.compose(&[1, 1, 0]);
    expected[(i0, i0)] = cr(0.36);
    expected[(i1, i1)] = cr(0.64);
    assert!((out.entries() - expected).camax() < 1e-12);

    // physical state invariant
    let before = partial_trace(&rho, &["a", "b"]).unwrap();
    let after = partial_trace(&out, &["a", "b"]).unwrap();
    assert!((before.entries() - after.entries()).camax() < 1e-12);
}

//! Release gate: end-to-end checks of every advertised closed form against
//! an oracle that does not share code with the path under test. Criteria
//! measure and report instead of panicking, so the test gate and the CLI
//! `suite` subcommand print the same table.

use std::f64::consts::{FRAC_1_SQRT_2, FRAC_PI_2, PI, SQRT_2};
use std::time::{Duration, Instant};

use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::decoherence::{dephase_exact, dephase_sampled, SymmetryBlocks};
use crate::detectors::{
    dispersive_readout, fluorescence_measure, homodyne_distributions,
    homodyne_distributions_exact, homodyne_matrix_element_asymptotic,
    homodyne_matrix_element_exact, photocount_distribution, photodetect_closed_form,
    photodetect_count_distribution, photodetect_exact, DispersiveConfig, FluorescenceConfig,
    HomodyneConfig, HomodyneGrid, PhotonCounterConfig,
};
use crate::error::{Error, Result};
use crate::hilbert::{
    c, cr, partial_trace, trace_distance, C64, CMatrix, DensityMatrix, Grid1D, Ket, Operator,
    Register, RegisterKind, RegisterLayout,
};
use crate::policy::NumericPolicy;
use crate::protocol::{
    builders, marginal_given, run_dilated, sample_trajectory, Condition, Instruction, ProtocolSpec,
};
use crate::spectral::{
    apply_channel, apply_selective, bit_observable, kraus_from_observable, measurement_unitary,
    pauli, spectral_decompose,
};
use crate::sterngerlach::{
    sg_analytic_packet, sg_grid_for, sg_initial_packet, sg_outcome_distribution, sg_split_step,
    GridWavepacket, SGConfig, Spin,
};

/// Outcome of one gate criterion: what was measured, whether it held, and
/// how long the measurement took against its wall-clock budget.
#[derive(Debug, Clone)]
pub struct CriterionReport {
    pub index: usize,
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
    pub elapsed: Duration,
    pub budget: Option<Duration>,
}

impl CriterionReport {
    /// One table row: verdict, index, name, elapsed, and the measurements.
    pub fn line(&self) -> String {
        format!(
            "{} {} {:<22} {:>6.2}s  {}",
            if self.passed { "PASS" } else { "FAIL" },
            self.index,
            self.name,
            self.elapsed.as_secs_f64(),
            self.detail
        )
    }
}

/// Runs every criterion in order. All must pass for a release.
pub fn run_all() -> Vec<CriterionReport> {
    vec![
        photocount_binomial(),
        homodyne_statistics(),
        measurement_algebra(),
        bell_correlations(),
        pointer_dephasing(),
        stern_gerlach_oracle(),
        readout_formulas(),
        adaptive_equivalence(),
    ]
}

#[derive(Default)]
struct Check {
    notes: Vec<String>,
    fails: Vec<String>,
}

impl Check {
    fn le(&mut self, what: &str, value: f64, bound: f64) {
        if value <= bound {
            self.notes.push(format!("{what} {value:.1e}"));
        } else {
            self.fails.push(format!("{what} {value:.6e} exceeds {bound:.0e}"));
        }
    }

    fn is_true(&mut self, what: &str, ok: bool) {
        if ok {
            self.notes.push(what.to_string());
        } else {
            self.fails.push(format!("violated: {what}"));
        }
    }

    fn note(&mut self, s: String) {
        self.notes.push(s);
    }
}

fn run(
    index: usize,
    name: &'static str,
    budget_s: Option<f64>,
    body: impl FnOnce(&mut Check) -> Result<()>,
) -> CriterionReport {
    let mut ck = Check::default();
    let start = Instant::now();
    let outcome = body(&mut ck);
    let elapsed = start.elapsed();
    if let Err(e) = outcome {
        ck.fails.push(format!("aborted: {e}"));
    }
    if let Some(b) = budget_s {
        if elapsed.as_secs_f64() > b {
            ck.fails.push(format!("runtime {:.1}s exceeds the {b:.0}s budget", elapsed.as_secs_f64()));
        }
    }
    let passed = ck.fails.is_empty();
    let detail = if passed { ck.notes.join("; ") } else { ck.fails.join("; ") };
    CriterionReport {
        index,
        name,
        passed,
        detail,
        elapsed,
        budget: budget_s.map(Duration::from_secs_f64),
    }
}

/// C(n, k) by the multiplicative recurrence; every intermediate is an
/// integer, so the f64 value is exact for the small n used here.
fn choose(n: usize, k: usize) -> f64 {
    let mut acc = 1.0f64;
    for i in 1..=k {
        acc = acc * (n - k + i) as f64 / i as f64;
    }
    acc
}

/// Closed-form photocounting is Binomial(n, 1 - e^{-zeta}), and the ordered
/// qubit-chain oracle converges to it at fixed attenuation with total
/// variation bounded by 5 N (g tau)^3.
pub fn photocount_binomial() -> CriterionReport {
    run(1, "photocount-binomial", Some(30.0), |ck| {
        let mut worst = 0.0f64;
        for n in 1..=5usize {
            for &zeta in &[0.5, 2.0, 50.0] {
                let lib = photocount_distribution(n, zeta)?;
                let p = -f64::exp_m1(-zeta);
                let q = (-zeta).exp();
                for k in 0..=n {
                    let direct = choose(n, k) * p.powi(k as i32) * q.powi((n - k) as i32);
                    worst = worst.max((lib[k] - direct).abs());
                }
            }
        }
        ck.le("binomial dev", worst, 1e-12);

        // chain refinement at (nearly) fixed attenuation 0.04
        let layout = RegisterLayout::single("mode", 3, RegisterKind::Physical);
        let amps = DVector::from_vec(vec![cr(0.8), cr(0.36), c(0.0, 0.48)]);
        let psi = Ket::new(layout, amps)?;
        let mut tvs = Vec::new();
        for &(n_qubits, gt) in &[(4usize, 0.1f64), (8, 0.0707), (12, 0.0577)] {
            let cfg = PhotonCounterConfig { n_qubits, g: gt, tau: 1.0 };
            let dilated = photodetect_exact(&psi, &cfg)?;
            let chain = photodetect_count_distribution(&dilated, n_qubits)?;
            let closed = photodetect_closed_form(&psi, cfg.zeta())?.count_marginal();
            let len = chain.len().max(closed.len());
            let tv = 0.5
                * (0..len)
                    .map(|k| {
                        let a = chain.get(k).copied().unwrap_or(0.0);
                        let b = closed.get(k).copied().unwrap_or(0.0);
                        (a - b).abs()
                    })
                    .sum::<f64>();
            let bound = 5.0 * n_qubits as f64 * gt.powi(3);
            if !(tv <= bound) {
                ck.fails.push(format!("chain N={n_qubits}: TV {tv:.3e} exceeds {bound:.3e}"));
            }
            tvs.push(tv);
        }
        ck.is_true("TV shrinks along refinement", tvs[0] > tvs[1] && tvs[1] > tvs[2]);
        ck.note(format!("chain TV {:.1e}/{:.1e}/{:.1e}", tvs[0], tvs[1], tvs[2]));
        Ok(())
    })
}

/// Coherent state on a Fock truncation, renormalized.
fn coherent_ket(alpha: f64, cutoff: usize) -> Result<Ket> {
    let layout = RegisterLayout::single("mode", cutoff + 1, RegisterKind::Physical);
    let mut amps = DVector::<C64>::zeros(cutoff + 1);
    amps[0] = cr(1.0);
    let mut a = 1.0f64;
    for n in 1..=cutoff {
        a *= alpha / (n as f64).sqrt();
        amps[n] = cr(a);
    }
    Ket::new(layout, amps)?.normalized()
}

/// Homodyne counting statistics: the vacuum total-count law is Poisson with
/// mean and variance |beta|^2, the large-field factorized element agrees
/// with the exact one at the distribution peak, and the exact elements are
/// complete over the covered count window.
pub fn homodyne_statistics() -> CriterionReport {
    run(2, "homodyne-statistics", Some(60.0), |ck| {
        let cfg = HomodyneConfig { beta_abs: 8.0, phi: 0.0 };
        let grid = HomodyneGrid { n_max: 160, d_abs_max: 32 };
        let vac = Ket::basis_state(
            RegisterLayout::single("mode", 2, RegisterKind::Physical),
            &[0],
        )?;
        let moments = |p_n: &[f64]| {
            let mean: f64 = p_n.iter().enumerate().map(|(n, p)| n as f64 * p).sum();
            let var: f64 =
                p_n.iter().enumerate().map(|(n, p)| (n as f64 - mean).powi(2) * p).sum();
            (mean, var)
        };
        let exact = homodyne_distributions_exact(&vac, &cfg, &grid)?;
        let (mean, var) = moments(&exact.p_n);
        ck.le("vacuum mean dev", (mean - 64.0).abs(), 1e-6);
        ck.le("vacuum variance dev", (var - 64.0).abs(), 1e-6);
        let fact = homodyne_distributions(&vac, &cfg, &grid)?;
        let (fmean, fvar) = moments(&fact.p_n);
        ck.le(
            "factorized moment dev",
            (fmean - 64.0).abs().max((fvar - 64.0).abs()),
            1e-6,
        );

        // coherent(1) input at the joint distribution peak N = 64, D = 8
        let coh = coherent_ket(1.0, 16)?;
        let beta = c(8.0, 0.0);
        let ex = homodyne_matrix_element_exact(&coh, beta, 64, 16)?;
        let asym = homodyne_matrix_element_asymptotic(&coh, 8.0, 0.0, 64, 16)?;
        ck.is_true("inside the asymptotic regime", asym.in_regime);
        ck.le("peak element rel dev", (asym.value - ex).norm() / ex.norm(), 0.05);

        let mut total = 0.0;
        for n in 0..=grid.n_max {
            let ni = n as i64;
            let mut dt = -ni;
            while dt <= ni {
                total += homodyne_matrix_element_exact(&coh, beta, n, dt)?.norm_sqr();
                dt += 2;
            }
        }
        ck.le("completeness dev", (total - 1.0).abs(), 1e-6);
        Ok(())
    })
}

fn ginibre(d: usize, rng: &mut ChaCha12Rng) -> CMatrix {
    CMatrix::from_fn(d, d, |_, _| {
        let re: f64 = StandardNormal.sample(rng);
        let im: f64 = StandardNormal.sample(rng);
        c(re, im) * cr(FRAC_1_SQRT_2)
    })
}

fn random_hermitian(layout: &RegisterLayout, rng: &mut ChaCha12Rng) -> Result<Operator> {
    let g = ginibre(layout.total_dim(), rng);
    Operator::new(layout.clone(), (&g + g.adjoint()) * cr(0.5))
}

/// Full-rank random state: a Wishart part mixed with enough identity to keep
/// every outcome probability bounded away from zero.
fn random_mixed(layout: &RegisterLayout, rng: &mut ChaCha12Rng) -> Result<DensityMatrix> {
    let d = layout.total_dim();
    let g = ginibre(d, rng);
    let m = &g * g.adjoint();
    let tr = m.trace().re;
    let e = m * cr(0.9 / tr) + CMatrix::identity(d, d) * cr(0.1 / d as f64);
    DensityMatrix::new(layout.clone(), e)
}

/// Measurement algebra over 200 random observables of dimension 2 through 8:
/// projector family identities, Kraus completeness, dilation unitarity,
/// channel agreement, Born normalization, and repeat-measurement idempotence.
pub fn measurement_algebra() -> CriterionReport {
    run(3, "measurement-algebra", Some(20.0), |ck| {
        let pol = NumericPolicy::default();
        let mut rng = ChaCha12Rng::seed_from_u64(0xC0FFEE);
        let mut w_complete = 0.0f64;
        let mut w_ortho = 0.0f64;
        let mut w_recon = 0.0f64;
        let mut w_kraus = 0.0f64;
        let mut w_unitary = 0.0f64;
        let mut w_channel = 0.0f64;
        let mut w_born = 0.0f64;
        let mut w_idem = 0.0f64;
        for i in 0..200usize {
            let d = 2 + (i % 7);
            let layout = RegisterLayout::single("s", d, RegisterKind::Physical);
            let obs = random_hermitian(&layout, &mut rng)?;
            let sd = spectral_decompose(&obs, None, &pol)?;

            let mut sum = CMatrix::zeros(d, d);
            let mut rec = CMatrix::zeros(d, d);
            for (lam, p) in sd.eigenvalues().iter().zip(sd.projectors()) {
                sum += p.entries();
                rec += p.entries() * cr(*lam);
            }
            w_complete = w_complete.max((sum - CMatrix::identity(d, d)).camax());
            w_recon = w_recon.max((rec - obs.entries()).camax());
            for (m, pm) in sd.projectors().iter().enumerate() {
                for (m2, pm2) in sd.projectors().iter().enumerate() {
                    let prod = pm.entries() * pm2.entries();
                    let dev = if m == m2 {
                        (prod - pm.entries()).camax()
                    } else {
                        prod.camax()
                    };
                    w_ortho = w_ortho.max(dev);
                }
            }

            let ks = kraus_from_observable(&sd, &pol)?;
            w_kraus = w_kraus.max(ks.completeness_residual());

            let mu = measurement_unitary(&sd)?;
            let ue = mu.unitary().entries();
            let db = ue.nrows();
            w_unitary = w_unitary.max((ue.adjoint() * ue - CMatrix::identity(db, db)).camax());

            let rho = random_mixed(&layout, &mut rng)?;
            let via_unitary = apply_channel(&mu, &rho)?;
            let via_kraus = ks.apply(&rho)?;
            w_channel =
                w_channel.max((via_unitary.entries() - via_kraus.entries()).camax());

            let mut p_sum = 0.0;
            for m in 0..sd.n_outcomes() {
                let (p, collapsed) = apply_selective(&mu, &rho, m, &pol)?;
                p_sum += p;
                if let Some(rho_m) = collapsed {
                    let (again, _) = apply_selective(&mu, &rho_m, m, &pol)?;
                    w_idem = w_idem.max((again - 1.0).abs());
                }
            }
            w_born = w_born.max((p_sum - 1.0).abs());
        }
        ck.le("completeness", w_complete, 1e-9);
        ck.le("orthogonality", w_ortho, 1e-9);
        ck.le("reconstruction", w_recon, 1e-9);
        ck.le("Kraus completeness", w_kraus, 1e-9);
        ck.le("dilation unitarity", w_unitary, 1e-9);
        ck.le("channel vs Kraus", w_channel, 1e-10);
        ck.le("Born normalization", w_born, 1e-10);
        ck.le("remeasure idempotence", w_idem, 1e-10);
        Ok(())
    })
}

/// Bell pair measured in two bases: the computational-basis pair lands in
/// the two perfectly correlated branches with maximally mixed marginals, the
/// mixed-basis pair lands in the four-branch state with one negative
/// amplitude, and measurement order is irrelevant.
pub fn bell_correlations() -> CriterionReport {
    run(4, "bell-correlations", None, |ck| {
        let pol = NumericPolicy::default();
        let layout = RegisterLayout::new(vec![
            Register::physical("q0", 2),
            Register::physical("q1", 2),
            Register::stinespring("m0", 2),
            Register::stinespring("m1", 2),
        ])?;
        let meas = |basis: char, target: &str, ss: &str| -> Result<Instruction> {
            Ok(Instruction::Measure {
                observable: bit_observable(target, basis)?,
                target: vec![target.to_string()],
                ss_label: ss.to_string(),
            })
        };
        let prep = |first: Instruction, second: Instruction| -> Result<ProtocolSpec> {
            ProtocolSpec::new(
                layout.clone(),
                vec![
                    Instruction::Unitary {
                        op: builders::hadamard("q0"),
                        targets: vec!["q0".into()],
                    },
                    Instruction::Unitary {
                        op: builders::cnot("q0", "q1"),
                        targets: vec!["q0".into(), "q1".into()],
                    },
                    first,
                    second,
                ],
                &pol,
            )
        };
        let spec_zz = prep(meas('z', "q0", "m0")?, meas('z', "q1", "m1")?)?;
        let rho0 = Ket::basis_state(spec_zz.physical_layout(), &[0, 0])?.to_density();
        let zz = run_dilated(&spec_zz, &rho0, &pol)?;

        let mut amps = DVector::<C64>::zeros(16);
        amps[layout.compose(&[0, 0, 0, 0])] = cr(FRAC_1_SQRT_2);
        amps[layout.compose(&[1, 1, 1, 1])] = cr(FRAC_1_SQRT_2);
        let expected_zz = Ket::new(layout.clone(), amps)?.to_density();
        ck.le(
            "ZZ state dev",
            (zz.final_state.entries() - expected_zz.entries()).camax(),
            1e-12,
        );

        let mut joint = [[0.0f64; 2]; 2];
        for (a, row) in joint.iter_mut().enumerate() {
            for (b, p) in row.iter_mut().enumerate() {
                *p = marginal_given(&zz, &[("m0", a), ("m1", b)], &pol)?.0;
            }
        }
        let corr = joint[0][0] + joint[1][1] - joint[0][1] - joint[1][0];
        ck.le("ZZ correlation dev", (corr - 1.0).abs(), 1e-12);

        let half = CMatrix::identity(2, 2) * cr(0.5);
        let mut w_mixed = 0.0f64;
        for q in ["q0", "q1"] {
            let red = partial_trace(&zz.final_state, &[q])?;
            w_mixed = w_mixed.max((red.entries() - &half).camax());
        }
        ck.le("local marginals vs I/2", w_mixed, 1e-12);
        let mut w_born = 0.0f64;
        for m in ["m0", "m1"] {
            for p in zz.marginal(m)? {
                w_born = w_born.max((p - 0.5).abs());
            }
        }
        ck.le("pointer marginals vs 1/2", w_born, 1e-12);

        // Z on q0, bit-X on q1: |0,+,0,0> + |0,-,0,1> + |1,+,1,0> - |1,-,1,1>
        let zx = run_dilated(&prep(meas('z', "q0", "m0")?, meas('x', "q1", "m1")?)?, &rho0, &pol)?;
        let mut amps = DVector::<C64>::zeros(16);
        for (a, m1, sign) in [(0usize, 0usize, 1.0f64), (0, 1, 1.0), (1, 0, 1.0), (1, 1, -1.0)] {
            for q1 in 0..2usize {
                let comp = if m1 == 0 || q1 == 0 { FRAC_1_SQRT_2 } else { -FRAC_1_SQRT_2 };
                amps[layout.compose(&[a, q1, a, m1])] += cr(0.5 * sign * comp);
            }
        }
        let expected_zx = Ket::new(layout.clone(), amps)?.to_density();
        ck.le(
            "ZX four-branch state dev",
            (zx.final_state.entries() - expected_zx.entries()).camax(),
            1e-12,
        );

        let xz = run_dilated(&prep(meas('x', "q1", "m1")?, meas('z', "q0", "m0")?)?, &rho0, &pol)?;
        let zz_swap =
            run_dilated(&prep(meas('z', "q1", "m1")?, meas('z', "q0", "m0")?)?, &rho0, &pol)?;
        let w_order = (zx.final_state.entries() - xz.final_state.entries())
            .camax()
            .max((zz.final_state.entries() - zz_swap.final_state.entries()).camax());
        ck.le("order permutation dev", w_order, 1e-10);
        Ok(())
    })
}

/// Pointer dephasing: the analytic block-Haar channel wipes exactly the
/// coherences the minimal and nonminimal oracles say it should, the sampled
/// average converges at the Monte-Carlo rate, and the physical state is
/// untouched.
pub fn pointer_dephasing() -> CriterionReport {
    run(5, "pointer-dephasing", Some(60.0), |ck| {
        let pol = NumericPolicy::default();

        // minimal pointer, state produced by an actual dilated measurement
        let layout2 = RegisterLayout::new(vec![
            Register::physical("q", 2),
            Register::stinespring("a", 2),
        ])?;
        let spec = ProtocolSpec::new(
            layout2.clone(),
            vec![Instruction::Measure {
                observable: bit_observable("q", 'z')?,
                target: vec!["q".into()],
                ss_label: "a".into(),
            }],
            &pol,
        )?;
        let psi0 = Ket::new(
            spec.physical_layout(),
            DVector::from_vec(vec![cr(0.6), c(0.0, 0.8)]),
        )?;
        let run_min = run_dilated(&spec, &psi0.to_density(), &pol)?;
        let deph_min = dephase_exact(&run_min.final_state, &SymmetryBlocks::minimal(2))?;
        let mut exp_min = CMatrix::zeros(4, 4);
        exp_min[(layout2.compose(&[0, 0]), layout2.compose(&[0, 0]))] = cr(0.36);
        exp_min[(layout2.compose(&[1, 1]), layout2.compose(&[1, 1]))] = cr(0.64);
        ck.le("minimal-pointer dev", (deph_min.entries() - &exp_min).camax(), 1e-10);

        // nonminimal pointer: blocks of sizes 2, 3, 1 in a 6-level register
        let layout6 = RegisterLayout::new(vec![
            Register::physical("q", 3),
            Register::stinespring("a", 6),
        ])?;
        let blocks = SymmetryBlocks::from_multiplicities(&[2, 3, 1])?;
        let c_sys = [cr(0.6), c(0.0, 0.48), cr(-0.64)];
        let r3 = cr(1.0 / 3f64.sqrt());
        let chi: [Vec<(usize, C64)>; 3] = [
            vec![(0, cr(FRAC_1_SQRT_2)), (1, c(0.0, FRAC_1_SQRT_2))],
            vec![(2, r3), (3, c(0.0, -1.0) * r3), (4, r3)],
            vec![(5, cr(1.0))],
        ];
        let mut amps = DVector::<C64>::zeros(18);
        for (m, cm) in c_sys.iter().enumerate() {
            for (j, a) in &chi[m] {
                amps[layout6.compose(&[m, *j])] = cm * a;
            }
        }
        let rho6 = Ket::new(layout6.clone(), amps)?.to_density();
        let exact6 = dephase_exact(&rho6, &blocks)?;
        // oracle: sum_m p_m |m><m| (x) P_m / n_m, diagonal and uniform per block
        let mut oracle = CMatrix::zeros(18, 18);
        for (m, cm) in c_sys.iter().enumerate() {
            let block = &blocks.blocks()[m];
            for &j in block {
                let idx = layout6.compose(&[m, j]);
                oracle[(idx, idx)] = cr(cm.norm_sqr() / block.len() as f64);
            }
        }
        ck.le("block dephasing dev", (exact6.entries() - &oracle).camax(), 1e-10);

        for &s in &[100usize, 1_000, 10_000] {
            let sampled = dephase_sampled(&rho6, &blocks, s, 0xDEC0)?;
            let td = trace_distance(&sampled, &exact6)?;
            ck.le(&format!("sampled S={s} distance"), td, 5.0 / (s as f64).sqrt());
        }

        let before = partial_trace(&rho6, &["q"])?;
        let after = partial_trace(&exact6, &["q"])?;
        ck.le(
            "reduced physical drift",
            (before.entries() - after.entries()).camax(),
            1e-12,
        );
        Ok(())
    })
}

fn l2_diff(a: &GridWavepacket, b: &GridWavepacket, grid: &Grid1D) -> f64 {
    let mut acc = 0.0;
    for s in Spin::BOTH {
        let diff: Vec<C64> = a
            .component(s)
            .iter()
            .zip(b.component(s))
            .map(|(u, v)| u - v)
            .collect();
        acc += grid.norm_sq(&diff);
    }
    acc.sqrt()
}

/// Split-step oracle for the magnetic beam splitter: branch centers follow
/// the quadratic drift law with a negative displacement sign, widths grow,
/// weights are the launch weights, misbinning matches the Gaussian tail,
/// and the propagator converges at second order.
pub fn stern_gerlach_oracle() -> CriterionReport {
    run(6, "stern-gerlach-oracle", Some(60.0), |ck| {
        let pol = NumericPolicy::default();
        let cfg = SGConfig {
            mass: 1.0,
            b: 0.5,
            mu_b: 1.0,
            b0: 10.0,
            v: 2.0,
            length: 2.0,
            z0: 0.0,
            delta: 0.2,
            c_plus: cr(FRAC_1_SQRT_2),
            c_minus: c(0.0, FRAC_1_SQRT_2),
        };
        let t = cfg.t_exit();
        let grid = sg_grid_for(&cfg, t)?;
        let packet0 = sg_initial_packet(&cfg, grid, &pol)?;
        let evolved = sg_split_step(&cfg, &packet0, t, 512, &pol)?;

        let var_target =
            cfg.delta.powi(2) * (1.0 + (t / (2.0 * cfg.mass * cfg.delta.powi(2))).powi(2));
        let mut w_mean = 0.0f64;
        let mut w_weight = 0.0f64;
        let mut w_var = 0.0f64;
        for s in Spin::BOTH {
            let target = cfg.z0 - (cfg.b * cfg.mu_b / (2.0 * cfg.mass)) * s.sign() * t * t;
            w_mean = w_mean.max((evolved.branch_mean(s)? - target).abs() / target.abs());
            w_weight = w_weight.max((evolved.branch_weight(s) - 0.5).abs());
            w_var = w_var.max((evolved.branch_variance(s)? - var_target).abs() / var_target);
        }
        ck.le("drift-law center rel dev", w_mean, 1e-4);
        ck.le("branch weight dev", w_weight, 1e-8);
        ck.le("grown variance rel dev", w_var, 1e-4);

        let out = sg_outcome_distribution(&cfg, t)?;
        let mut w_misbin = 0.0f64;
        for (s, misbin, bin) in [
            (Spin::Plus, out.misbin_plus, out.bin_plus),
            (Spin::Minus, out.misbin_minus, out.bin_minus),
        ] {
            let wrong = evolved.side_mass(s, cfg.z0, bin < 0) / evolved.branch_weight(s);
            w_misbin = w_misbin.max((wrong - misbin).abs());
        }
        ck.le("misbinning tail dev", w_misbin, 1e-4);

        let ana = sg_analytic_packet(&cfg, grid, t, &pol)?;
        let mut errs = Vec::new();
        for &n in &[8usize, 16, 32] {
            errs.push(l2_diff(&sg_split_step(&cfg, &packet0, t, n, &pol)?, &ana, &grid));
        }
        let (r1, r2) = (errs[0] / errs[1], errs[1] / errs[2]);
        ck.is_true(
            "step-halving ratios in 4 +- 0.3",
            errs[0] > 1e-10 && (3.7..=4.3).contains(&r1) && (3.7..=4.3).contains(&r2),
        );
        ck.note(format!("ratios {r1:.2}/{r2:.2}"));
        // the sign questions the closed forms leave open, settled numerically:
        // displacement is -(b mu_B/2M) s t^2 (spin-plus drifts to negative z)
        // and the branch variance grows to delta^2 (1 + (t/2M delta^2)^2)
        ck.note(format!(
            "oracle fixes center {:+.3} for spin-plus and variance {:.3} > delta^2 = {:.3}",
            out.mean_plus,
            var_target,
            cfg.delta.powi(2)
        ));
        Ok(())
    })
}

/// Complementary error function from first principles: Maclaurin series in
/// the bulk, Lentz-evaluated continued fraction in the tail. Shares no code
/// with the libm binding used by the readout path.
fn erfc_oracle(x: f64) -> f64 {
    if x < 0.0 {
        return 2.0 - erfc_oracle(-x);
    }
    if x < 2.0 {
        let x2 = x * x;
        let mut term = x;
        let mut sum = x;
        let mut k = 0usize;
        loop {
            k += 1;
            term *= -x2 / k as f64;
            let next = sum + term / (2 * k + 1) as f64;
            if next == sum || k > 200 {
                break;
            }
            sum = next;
        }
        1.0 - sum * 2.0 / PI.sqrt()
    } else {
        // erfc(x) = e^{-x^2}/sqrt(pi) / (x + (1/2)/(x + 1/(x + (3/2)/(x + ...))))
        let mut f = x;
        let mut c_ = x;
        let mut d = 0.0f64;
        let mut a = 0.5f64;
        for _ in 0..200 {
            d = 1.0 / (x + a * d);
            c_ = x + a / c_;
            let delta = c_ * d;
            f *= delta;
            if (delta - 1.0).abs() < 1e-16 {
                break;
            }
            a += 0.5;
        }
        (-x * x).exp() / (PI.sqrt() * f)
    }
}

/// Readout closed forms: the fluorescence false-negative figure lands on the
/// exact dyadic value, and the dispersive misassignment probability matches
/// an independent erfc evaluation, saturates at one half, and decreases
/// monotonically with the separation.
pub fn readout_formulas() -> CriterionReport {
    run(7, "readout-formulas", None, |ck| {
        let out = fluorescence_measure(
            cr(1.0),
            c(0.0, 0.0),
            &FluorescenceConfig { p_detect: 0.5, n_rounds: 10 },
        )?;
        ck.is_true("false negative = 0.03125 exactly", out.p_false_negative == 0.03125);

        let out2 = fluorescence_measure(
            cr(0.6),
            cr(0.8),
            &FluorescenceConfig { p_detect: 0.19, n_rounds: 7 },
        )?;
        let direct = 0.36 * 0.81f64.powf(3.5);
        ck.le("attenuation figure dev", (out2.p_false_negative - direct).abs(), 1e-15);

        let mut w = 0.0f64;
        for &alpha in &[0.35, 0.8, 1.5, 3.0, 6.0] {
            for &theta in &[0.15, 0.5, 1.0, FRAC_PI_2] {
                let o = dispersive_readout(cr(0.6), cr(0.8), &DispersiveConfig { alpha, theta })?;
                let oracle = 0.5 * erfc_oracle(SQRT_2 * alpha * theta.sin());
                w = w.max((o.p_error - oracle).abs());
            }
        }
        ck.le("erfc grid dev (20 pts)", w, 1e-10);

        let tiny = dispersive_readout(
            cr(1.0),
            c(0.0, 0.0),
            &DispersiveConfig { alpha: 1e-9, theta: 1e-9 },
        )?;
        ck.le("vanishing-separation limit dev", (tiny.p_error - 0.5).abs(), 1e-10);

        let mut prev = tiny.p_error;
        let mut monotone = true;
        for i in 1..=20 {
            let o = dispersive_readout(
                cr(1.0),
                c(0.0, 0.0),
                &DispersiveConfig { alpha: 0.3 * i as f64, theta: FRAC_PI_2 },
            )?;
            monotone &= o.p_error < prev;
            prev = o.p_error;
        }
        ck.is_true("error monotone in separation", monotone);
        Ok(())
    })
}

/// The two protocol engines agree: sampled trajectories of a three-
/// measurement feedback protocol reproduce the dilated joint distribution at
/// the Monte-Carlo rate, and the compiled feedback gate equals the
/// hand-composed controlled correction following the measurement copy.
pub fn adaptive_equivalence() -> CriterionReport {
    run(8, "adaptive-equivalence", None, |ck| {
        let pol = NumericPolicy::default();
        let layout = RegisterLayout::new(vec![
            Register::physical("q0", 2),
            Register::physical("q1", 2),
            Register::stinespring("m0", 2),
            Register::stinespring("m1", 2),
            Register::stinespring("m2", 2),
        ])?;
        let spec = ProtocolSpec::new(
            layout,
            vec![
                Instruction::Unitary {
                    op: builders::hadamard("q0"),
                    targets: vec!["q0".into()],
                },
                Instruction::Measure {
                    observable: bit_observable("q0", 'z')?,
                    target: vec!["q0".into()],
                    ss_label: "m0".into(),
                },
                Instruction::Feedback {
                    condition: Condition::when("m0", 1),
                    op: builders::hadamard("q1"),
                    targets: vec!["q1".into()],
                },
                Instruction::Measure {
                    observable: bit_observable("q1", 'x')?,
                    target: vec!["q1".into()],
                    ss_label: "m1".into(),
                },
                Instruction::Feedback {
                    condition: Condition::when("m1", 1),
                    op: builders::cnot("q1", "q0"),
                    targets: vec!["q1".into(), "q0".into()],
                },
                Instruction::Measure {
                    observable: bit_observable("q1", 'z')?,
                    target: vec!["q1".into()],
                    ss_label: "m2".into(),
                },
            ],
            &pol,
        )?;
        let psi0 = Ket::basis_state(spec.physical_layout(), &[0, 0])?;
        let dilated = run_dilated(&spec, &psi0.to_density(), &pol)?;

        let mut exact = [[[0.0f64; 2]; 2]; 2];
        let mut counts = [[[0.0f64; 2]; 2]; 2];
        for a in 0..2usize {
            for b in 0..2usize {
                for e in 0..2usize {
                    exact[a][b][e] =
                        marginal_given(&dilated, &[("m0", a), ("m1", b), ("m2", e)], &pol)?.0;
                }
            }
        }
        let samples = 10_000usize;
        let outcome = |t: &crate::protocol::TrajectoryRecord, l: &str| -> Result<usize> {
            t.outcome(l).ok_or_else(|| Error::UnknownLabel(l.to_string()))
        };
        for seed in 0..samples {
            let traj = sample_trajectory(&spec, &psi0, seed as u64, &pol)?;
            let (a, b, e) =
                (outcome(&traj, "m0")?, outcome(&traj, "m1")?, outcome(&traj, "m2")?);
            counts[a][b][e] += 1.0;
        }
        let mut tv = 0.0;
        for a in 0..2 {
            for b in 0..2 {
                for e in 0..2 {
                    tv += (counts[a][b][e] / samples as f64 - exact[a][b][e]).abs();
                }
            }
        }
        tv *= 0.5;
        ck.le("trajectory vs dilated TV", tv, 5.0 / (samples as f64).sqrt());

        // measure Z, then X when the pointer read 1, against the hand product
        let lay = RegisterLayout::new(vec![
            Register::physical("q", 2),
            Register::stinespring("m", 2),
        ])?;
        let fb = ProtocolSpec::new(
            lay.clone(),
            vec![
                Instruction::Measure {
                    observable: bit_observable("q", 'z')?,
                    target: vec!["q".into()],
                    ss_label: "m".into(),
                },
                Instruction::Feedback {
                    condition: Condition::when("m", 1),
                    op: pauli("q", 'x')?,
                    targets: vec!["q".into()],
                },
            ],
            &pol,
        )?;
        let gates = fb.compile(&pol)?;
        let mut total = gates[0].entries().clone();
        for g in &gates[1..] {
            total = g.entries() * total;
        }
        let mut meas = CMatrix::zeros(4, 4);
        for b in 0..2usize {
            meas[(lay.compose(&[0, b]), lay.compose(&[0, b]))] = cr(1.0);
            meas[(lay.compose(&[1, (b + 1) % 2]), lay.compose(&[1, b]))] = cr(1.0);
        }
        let mut cx = CMatrix::zeros(4, 4);
        for q in 0..2usize {
            cx[(lay.compose(&[q, 0]), lay.compose(&[q, 0]))] = cr(1.0);
            cx[(lay.compose(&[1 - q, 1]), lay.compose(&[q, 1]))] = cr(1.0);
        }
        let hand = cx * &meas;
        ck.le("compiled product dev", (&total - &hand).camax(), 1e-10);

        let mut rng = ChaCha12Rng::seed_from_u64(0xFEEDBAC);
        let mut w = 0.0f64;
        for _ in 0..20 {
            let re0: f64 = StandardNormal.sample(&mut rng);
            let im0: f64 = StandardNormal.sample(&mut rng);
            let re1: f64 = StandardNormal.sample(&mut rng);
            let im1: f64 = StandardNormal.sample(&mut rng);
            let psi = Ket::new(
                RegisterLayout::single("q", 2, RegisterKind::Physical),
                DVector::from_vec(vec![c(re0, im0), c(re1, im1)]),
            )?
            .normalized()?;
            let start = psi.tensor(&Ket::from_flat(
                RegisterLayout::single("m", 2, RegisterKind::Stinespring),
                0,
            )?)?;
            let got = &total * start.amplitudes();
            // branch m carries X^m P_m psi, which lands on |0> for both outcomes
            let mut want = DVector::<C64>::zeros(4);
            want[lay.compose(&[0, 0])] = psi.amplitude(0);
            want[lay.compose(&[0, 1])] = psi.amplitude(1);
            w = w.max((got - want).camax());
        }
        ck.le("feedback action dev (20 states)", w, 1e-10);
        Ok(())
    })
}

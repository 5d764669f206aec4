//! Per-scenario parameter schemas and executors.
//!
//! Jobs run in two phases. `prepare` does every fallible interpretation of
//! the config (schema, dimensions, normalization, grid feasibility) so that a
//! bad config fails before any computation starts and without partial output.
//! `execute` only computes; errors escaping it are numerical-guard class.

use anyhow::{bail, Context};
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha12Rng;
use serde::Deserialize;
use serde_json::Value as Json;

use stinesim::protocol::builders;
use stinesim::{
    bit_observable, c, coherence_norm, dephase_exact, dephase_sampled, dispersive_readout,
    fluorescence_measure, homodyne_distributions, homodyne_distributions_exact, marginal_given,
    partial_trace, photocount_distribution, photodetect_count_distribution, photodetect_exact,
    run_dilated, sample_trajectory, sg_grid_for, sg_initial_packet, sg_outcome_distribution,
    sg_split_step, spectral_decompose, trace_distance, CMatrix, CVector, DensityMatrix,
    DispersiveConfig, FluorescenceConfig, Grid1D, HomodyneConfig, HomodyneGrid, Instruction, Ket,
    NumericPolicy, Operator, PhotonCounterConfig, ProtocolSpec, Register, RegisterKind,
    RegisterLayout, SGConfig, Spin, SymmetryBlocks, C64,
};

use crate::config::{Scenario, ScenarioConfig};
use crate::table::{Cell, Table};

/// Complex numbers cross the JSON boundary as [re, im].
type CPair = [f64; 2];

fn cx(p: CPair) -> C64 {
    c(p[0], p[1])
}

fn params<T: serde::de::DeserializeOwned>(v: &Json) -> anyhow::Result<T> {
    serde_json::from_value(v.clone()).context("parsing scenario params")
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct MeasureParams {
    /// Hermitian matrix, row-major, entries as [re, im].
    observable: Vec<Vec<CPair>>,
    /// State amplitudes; normalized on load.
    state: Vec<CPair>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ProtocolParams {
    registers: Vec<Register>,
    instructions: Vec<Instruction>,
    /// Flat amplitudes over the physical registers; defaults to |0...0>.
    #[serde(default)]
    initial: Option<Vec<CPair>>,
    /// Monte Carlo trajectories for the sampled column; 0 skips sampling.
    #[serde(default)]
    trajectories: usize,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct PhotodetectParams {
    /// Input Fock level.
    n: usize,
    /// Attenuation; the absorber chain is sized so N g^2 tau^2 = zeta.
    zeta: f64,
    #[serde(default = "default_chain")]
    n_qubits: usize,
}

fn default_chain() -> usize {
    12
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields, tag = "type", rename_all = "lowercase")]
enum SignalState {
    Vacuum { cutoff: usize },
    Fock { n: usize, cutoff: usize },
    Coherent { alpha: f64, cutoff: usize },
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct HomodyneParams {
    beta_abs: f64,
    phi: f64,
    n_max: usize,
    d_abs_max: usize,
    input: SignalState,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct FluorescenceParams {
    c_g: CPair,
    c_e: CPair,
    p_detect: f64,
    n_rounds: usize,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct DispersiveParams {
    c_g: CPair,
    c_e: CPair,
    alpha: f64,
    theta: f64,
    /// Sweep resolution: p_error is tabulated at alpha * i / alpha_points.
    #[serde(default = "default_alpha_points")]
    alpha_points: usize,
}

fn default_alpha_points() -> usize {
    40
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct SterngerlachParams {
    mass: f64,
    b: f64,
    mu_b: f64,
    b0: f64,
    v: f64,
    length: f64,
    z0: f64,
    delta: f64,
    c_plus: CPair,
    c_minus: CPair,
    /// Evolution time; defaults to the magnet exit time length / v.
    #[serde(default)]
    t: Option<f64>,
    #[serde(default = "default_sg_steps")]
    n_steps: usize,
    /// Explicit grid override; defaults to a grid sized for containment at t.
    #[serde(default)]
    grid: Option<Grid1D>,
}

fn default_sg_steps() -> usize {
    256
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct DecohereParams {
    /// Branch amplitudes, one per pointer block.
    amplitudes: Vec<CPair>,
    /// Pointer block multiplicities.
    blocks: Vec<usize>,
    /// Largest Haar-average sample count in the convergence ladder.
    samples: usize,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct BellParams {
    #[serde(default = "default_z")]
    basis_a: String,
    #[serde(default = "default_z")]
    basis_b: String,
}

fn default_z() -> String {
    "z".into()
}

/// A validated job, ready to execute.
pub enum Prepared {
    Measure { observable: Operator, state: Ket },
    Protocol { spec: ProtocolSpec, initial: Ket, trajectories: usize },
    Photodetect { input: Ket, chain: PhotonCounterConfig, n: usize, zeta: f64 },
    Homodyne { input: Ket, cfg: HomodyneConfig, grid: HomodyneGrid },
    Fluorescence { c_g: C64, c_e: C64, cfg: FluorescenceConfig },
    Dispersive { c_g: C64, c_e: C64, cfg: DispersiveConfig, alpha_points: usize },
    Sterngerlach { cfg: SGConfig, t: f64, n_steps: usize, grid: Grid1D },
    Decohere { rho: DensityMatrix, blocks: SymmetryBlocks, samples: usize },
    Bell { basis_a: char, basis_b: char },
}

pub fn prepare(cfg: &ScenarioConfig) -> anyhow::Result<Prepared> {
    let pol = NumericPolicy::default();
    match cfg.scenario {
        Scenario::Measure => {
            let p: MeasureParams = params(&cfg.params)?;
            let d = p.state.len();
            if d == 0 {
                bail!("measure needs a nonempty state");
            }
            if p.observable.len() != d || p.observable.iter().any(|row| row.len() != d) {
                bail!("observable must be a {d}x{d} matrix matching the state length");
            }
            let layout = RegisterLayout::single("s", d, RegisterKind::Physical);
            let observable =
                Operator::new(layout.clone(), CMatrix::from_fn(d, d, |i, j| cx(p.observable[i][j])))?;
            observable.assert_hermitian(&pol)?;
            let amps = CVector::from_iterator(d, p.state.iter().map(|a| cx(*a)));
            let state = Ket::new(layout, amps)?.normalized()?;
            Ok(Prepared::Measure { observable, state })
        }
        Scenario::Protocol => {
            let p: ProtocolParams = params(&cfg.params)?;
            let layout = RegisterLayout::new(p.registers)?;
            let spec = ProtocolSpec::new(layout, p.instructions, &pol)?;
            let phys = spec.physical_layout();
            let initial = match p.initial {
                Some(amps) => {
                    if amps.len() != phys.total_dim() {
                        bail!(
                            "initial state has {} amplitudes; the physical registers span dimension {}",
                            amps.len(),
                            phys.total_dim()
                        );
                    }
                    let v = CVector::from_iterator(amps.len(), amps.iter().map(|a| cx(*a)));
                    Ket::new(phys, v)?.normalized()?
                }
                None => Ket::basis_state(phys, &vec![0; spec.physical_labels().len()])?,
            };
            Ok(Prepared::Protocol { spec, initial, trajectories: p.trajectories })
        }
        Scenario::Photodetect => {
            let p: PhotodetectParams = params(&cfg.params)?;
            if !p.zeta.is_finite() || p.zeta <= 0.0 {
                bail!("attenuation zeta = {} must be finite and > 0", p.zeta);
            }
            if p.n_qubits == 0 {
                bail!("the absorber chain needs at least one qubit");
            }
            let chain = PhotonCounterConfig {
                n_qubits: p.n_qubits,
                g: 1.0,
                tau: (p.zeta / p.n_qubits as f64).sqrt(),
            };
            chain.validate()?;
            let layout = RegisterLayout::single("mode", p.n + 1, RegisterKind::Physical);
            let input = Ket::basis_state(layout, &[p.n])?;
            Ok(Prepared::Photodetect { input, chain, n: p.n, zeta: p.zeta })
        }
        Scenario::Homodyne => {
            let p: HomodyneParams = params(&cfg.params)?;
            let cfg_h = HomodyneConfig { beta_abs: p.beta_abs, phi: p.phi };
            cfg_h.validate()?;
            let grid = HomodyneGrid { n_max: p.n_max, d_abs_max: p.d_abs_max };
            grid.validate(&cfg_h)?;
            let input = signal_ket(&p.input)?;
            Ok(Prepared::Homodyne { input, cfg: cfg_h, grid })
        }
        Scenario::Fluorescence => {
            let p: FluorescenceParams = params(&cfg.params)?;
            let cfg_f = FluorescenceConfig { p_detect: p.p_detect, n_rounds: p.n_rounds };
            cfg_f.validate()?;
            let (c_g, c_e) = qubit_pair(p.c_g, p.c_e)?;
            Ok(Prepared::Fluorescence { c_g, c_e, cfg: cfg_f })
        }
        Scenario::Dispersive => {
            let p: DispersiveParams = params(&cfg.params)?;
            let cfg_d = DispersiveConfig { alpha: p.alpha, theta: p.theta };
            cfg_d.validate()?;
            if p.alpha_points == 0 {
                bail!("alpha_points must be >= 1");
            }
            let (c_g, c_e) = qubit_pair(p.c_g, p.c_e)?;
            Ok(Prepared::Dispersive { c_g, c_e, cfg: cfg_d, alpha_points: p.alpha_points })
        }
        Scenario::Sterngerlach => {
            let p: SterngerlachParams = params(&cfg.params)?;
            let sg = SGConfig {
                mass: p.mass,
                b: p.b,
                mu_b: p.mu_b,
                b0: p.b0,
                v: p.v,
                length: p.length,
                z0: p.z0,
                delta: p.delta,
                c_plus: cx(p.c_plus),
                c_minus: cx(p.c_minus),
            };
            sg.validate()?;
            let t = p.t.unwrap_or_else(|| sg.t_exit());
            if !t.is_finite() || t <= 0.0 {
                bail!("evolution time {t} must be finite and > 0");
            }
            if p.n_steps == 0 {
                bail!("n_steps must be >= 1");
            }
            let grid = match p.grid {
                // revalidate: deserialization bypasses the constructor
                Some(g) => Grid1D::new(g.min, g.step, g.n)?,
                None => sg_grid_for(&sg, t)?,
            };
            Ok(Prepared::Sterngerlach { cfg: sg, t, n_steps: p.n_steps, grid })
        }
        Scenario::Decohere => {
            let p: DecohereParams = params(&cfg.params)?;
            if p.amplitudes.is_empty() || p.amplitudes.len() != p.blocks.len() {
                bail!(
                    "need one amplitude per block; got {} amplitudes and {} blocks",
                    p.amplitudes.len(),
                    p.blocks.len()
                );
            }
            if p.blocks.contains(&0) {
                bail!("block multiplicities must be >= 1");
            }
            if p.samples == 0 {
                bail!("samples must be >= 1");
            }
            let blocks = SymmetryBlocks::from_multiplicities(&p.blocks)?;
            let k = p.amplitudes.len();
            let d: usize = p.blocks.iter().sum();
            let layout = RegisterLayout::new(vec![
                Register::physical("q", k),
                Register::stinespring("a", d),
            ])?;
            // branch m marks the pointer with the uniform superposition over
            // block m, so the state carries full cross-block coherence
            let mut amps = vec![c(0.0, 0.0); k * d];
            let mut offset = 0;
            for (m, (&n_m, amp)) in p.blocks.iter().zip(&p.amplitudes).enumerate() {
                let w = cx(*amp) / c((n_m as f64).sqrt(), 0.0);
                for j in 0..n_m {
                    amps[layout.compose(&[m, offset + j])] = w;
                }
                offset += n_m;
            }
            let psi = Ket::new(layout, CVector::from_vec(amps))?.normalized()?;
            Ok(Prepared::Decohere { rho: psi.to_density(), blocks, samples: p.samples })
        }
        Scenario::Bell => {
            let p: BellParams = params(&cfg.params)?;
            Ok(Prepared::Bell { basis_a: basis_char(&p.basis_a)?, basis_b: basis_char(&p.basis_b)? })
        }
    }
}

fn basis_char(s: &str) -> anyhow::Result<char> {
    match s {
        "z" | "Z" => Ok('z'),
        "x" | "X" => Ok('x'),
        _ => bail!("basis must be \"z\" or \"x\", got {s:?}"),
    }
}

fn qubit_pair(c_g: CPair, c_e: CPair) -> anyhow::Result<(C64, C64)> {
    let (g, e) = (cx(c_g), cx(c_e));
    let norm = g.norm_sqr() + e.norm_sqr();
    if (norm - 1.0).abs() > 1e-10 {
        bail!("qubit amplitudes must be normalized; |c_g|^2 + |c_e|^2 = {norm}");
    }
    Ok((g, e))
}

fn signal_ket(s: &SignalState) -> anyhow::Result<Ket> {
    let (cutoff, amps): (usize, Vec<C64>) = match s {
        SignalState::Vacuum { cutoff } => {
            let mut a = vec![c(0.0, 0.0); cutoff + 1];
            a[0] = c(1.0, 0.0);
            (*cutoff, a)
        }
        SignalState::Fock { n, cutoff } => {
            if n > cutoff {
                bail!("fock level {n} exceeds the cutoff {cutoff}");
            }
            let mut a = vec![c(0.0, 0.0); cutoff + 1];
            a[*n] = c(1.0, 0.0);
            (*cutoff, a)
        }
        SignalState::Coherent { alpha, cutoff } => {
            if !alpha.is_finite() {
                bail!("coherent amplitude must be finite");
            }
            // c_n proportional to alpha^n / sqrt(n!); normalized over the cutoff
            let mut a = Vec::with_capacity(cutoff + 1);
            let mut cur = 1.0;
            for n in 0..=*cutoff {
                if n > 0 {
                    cur *= alpha / (n as f64).sqrt();
                }
                a.push(c(cur, 0.0));
            }
            (*cutoff, a)
        }
    };
    let layout = RegisterLayout::single("sig", cutoff + 1, RegisterKind::Physical);
    Ok(Ket::new(layout, CVector::from_vec(amps))?.normalized()?)
}

/// Runs a prepared job. Every table is keyed by a filename suffix; the empty
/// suffix is the primary table.
pub fn execute(prepared: Prepared, seed: u64) -> stinesim::Result<Vec<(String, Table)>> {
    let pol = NumericPolicy::default();
    match prepared {
        Prepared::Measure { observable, state } => {
            let sd = spectral_decompose(&observable, None, &pol)?;
            let mut t = Table::new(&["outcome", "eigenvalue", "multiplicity", "probability"]);
            for (m, proj) in sd.projectors().iter().enumerate() {
                let p = state.inner(&proj.apply(&state)?).re;
                t.push(vec![
                    Cell::Int(m as i64),
                    Cell::Num(sd.eigenvalues()[m]),
                    Cell::Int(sd.multiplicities()[m] as i64),
                    Cell::Num(p),
                ]);
            }
            Ok(vec![(String::new(), t)])
        }
        Prepared::Protocol { spec, initial, trajectories } => {
            let run = run_dilated(&spec, &initial.to_density(), &pol)?;
            let mut counts: Vec<(String, Vec<usize>)> = run
                .outcome_marginals
                .iter()
                .map(|(label, marg)| (label.clone(), vec![0; marg.len()]))
                .collect();
            // Per-trajectory keys come from a master stream so that different
            // run seeds share no trajectory keys (seed+k families overlap).
            let mut seeder = ChaCha12Rng::seed_from_u64(seed);
            for _ in 0..trajectories {
                let rec = sample_trajectory(&spec, &initial, seeder.next_u64(), &pol)?;
                for (label, m) in &rec.outcomes {
                    if let Some((_, tally)) = counts.iter_mut().find(|(l, _)| l == label) {
                        tally[*m] += 1;
                    }
                }
            }
            let mut t = Table::new(&["label", "outcome", "p_exact", "p_sampled"]);
            for ((label, marg), (_, tally)) in run.outcome_marginals.iter().zip(&counts) {
                for (m, p) in marg.iter().enumerate() {
                    let sampled = if trajectories > 0 {
                        Cell::Num(tally[m] as f64 / trajectories as f64)
                    } else {
                        Cell::Null
                    };
                    t.push(vec![Cell::Text(label.clone()), Cell::Int(m as i64), Cell::Num(*p), sampled]);
                }
            }
            Ok(vec![(String::new(), t)])
        }
        Prepared::Photodetect { input, chain, n, zeta } => {
            let exact = photocount_distribution(n, zeta)?;
            let dilated = photodetect_exact(&input, &chain)?;
            let sim = photodetect_count_distribution(&dilated, chain.n_qubits)?;
            let mut t = Table::new(&["k", "p_k", "p_k_exact"]);
            for k in 0..=n {
                t.push(vec![
                    Cell::Int(k as i64),
                    Cell::Num(sim.get(k).copied().unwrap_or(0.0)),
                    Cell::Num(exact[k]),
                ]);
            }
            Ok(vec![(String::new(), t)])
        }
        Prepared::Homodyne { input, cfg, grid } => {
            let fact = homodyne_distributions(&input, &cfg, &grid)?;
            let exact = homodyne_distributions_exact(&input, &cfg, &grid)?;
            let mut tn = Table::new(&["n", "p_n"]);
            for (n, p) in exact.p_n.iter().enumerate() {
                tn.push(vec![Cell::Int(n as i64), Cell::Num(*p)]);
            }
            let mut td = Table::new(&["d", "p_d", "p_d_exact"]);
            for ((dv, pf), pe) in fact.d_values.iter().zip(&fact.p_d).zip(&exact.p_d) {
                td.push(vec![Cell::Int(*dv), Cell::Num(*pf), Cell::Num(*pe)]);
            }
            Ok(vec![(String::new(), tn), ("_pd".into(), td)])
        }
        Prepared::Fluorescence { c_g, c_e, cfg } => {
            let mut sweep = Table::new(&[
                "n_rounds",
                "p_outcome_g",
                "p_outcome_e",
                "p_false_negative",
                "undetected_weight",
            ]);
            for n in 1..=cfg.n_rounds {
                let o = fluorescence_measure(
                    c_g,
                    c_e,
                    &FluorescenceConfig { p_detect: cfg.p_detect, n_rounds: n },
                )?;
                sweep.push(vec![
                    Cell::Int(n as i64),
                    Cell::Num(o.p_outcome_g),
                    Cell::Num(o.p_outcome_e),
                    Cell::Num(o.p_false_negative),
                    Cell::Num(o.undetected_weight),
                ]);
            }
            let full = fluorescence_measure(c_g, c_e, &cfg)?;
            let mut counts = Table::new(&["m", "p_count", "p_count_branch_g"]);
            for (m, (p, pg)) in full.count_distribution.iter().zip(&full.branch_g_counts).enumerate()
            {
                counts.push(vec![Cell::Int(m as i64), Cell::Num(*p), Cell::Num(*pg)]);
            }
            Ok(vec![(String::new(), sweep), ("_counts".into(), counts)])
        }
        Prepared::Dispersive { c_g, c_e, cfg, alpha_points } => {
            let mut sweep = Table::new(&["alpha", "theta", "p_error"]);
            for i in 1..=alpha_points {
                let a = cfg.alpha * i as f64 / alpha_points as f64;
                let o = dispersive_readout(c_g, c_e, &DispersiveConfig { alpha: a, theta: cfg.theta })?;
                sweep.push(vec![Cell::Num(a), Cell::Num(cfg.theta), Cell::Num(o.p_error)]);
            }
            let o = dispersive_readout(c_g, c_e, &cfg)?;
            let mut summary = Table::new(&[
                "alpha",
                "theta",
                "p_error",
                "amp_g_re",
                "amp_g_im",
                "amp_e_re",
                "amp_e_im",
                "phase_g_re",
                "phase_g_im",
                "phase_e_re",
                "phase_e_im",
            ]);
            summary.push(vec![
                Cell::Num(cfg.alpha),
                Cell::Num(cfg.theta),
                Cell::Num(o.p_error),
                Cell::Num(o.amp_g.re),
                Cell::Num(o.amp_g.im),
                Cell::Num(o.amp_e.re),
                Cell::Num(o.amp_e.im),
                Cell::Num(o.phase_g.re),
                Cell::Num(o.phase_g.im),
                Cell::Num(o.phase_e.re),
                Cell::Num(o.phase_e.im),
            ]);
            Ok(vec![(String::new(), sweep), ("_summary".into(), summary)])
        }
        Prepared::Sterngerlach { cfg, t, n_steps, grid } => {
            let packet = sg_initial_packet(&cfg, grid, &pol)?;
            let evolved = sg_split_step(&cfg, &packet, t, n_steps, &pol)?;
            let mut snap = Table::new(&["z", "dens_plus", "dens_minus"]);
            let up = evolved.component(Spin::Plus);
            let dn = evolved.component(Spin::Minus);
            for (i, z) in grid.points().enumerate() {
                snap.push(vec![
                    Cell::Num(z),
                    Cell::Num(up[i].norm_sqr()),
                    Cell::Num(dn[i].norm_sqr()),
                ]);
            }
            let out = sg_outcome_distribution(&cfg, t)?;
            let wp = evolved.branch_weight(Spin::Plus);
            let wm = evolved.branch_weight(Spin::Minus);
            let grid_mean = |s: Spin, w: f64| -> stinesim::Result<Cell> {
                if w > 1e-12 {
                    Ok(Cell::Num(evolved.branch_mean(s)?))
                } else {
                    Ok(Cell::Null)
                }
            };
            let gmp = grid_mean(Spin::Plus, wp)?;
            let gmm = grid_mean(Spin::Minus, wm)?;
            let mut summary = Table::new(&[
                "p_plus",
                "p_minus",
                "mean_plus",
                "mean_minus",
                "variance",
                "bin_plus",
                "bin_minus",
                "misbin_plus",
                "misbin_minus",
                "kappa",
                "separated",
                "grid_p_plus",
                "grid_p_minus",
                "grid_mean_plus",
                "grid_mean_minus",
            ]);
            summary.push(vec![
                Cell::Num(out.p_plus),
                Cell::Num(out.p_minus),
                Cell::Num(out.mean_plus),
                Cell::Num(out.mean_minus),
                Cell::Num(out.variance),
                Cell::Int(out.bin_plus as i64),
                Cell::Int(out.bin_minus as i64),
                Cell::Num(out.misbin_plus),
                Cell::Num(out.misbin_minus),
                Cell::Num(out.kappa),
                Cell::Int(out.separated as i64),
                Cell::Num(wp),
                Cell::Num(wm),
                gmp,
                gmm,
            ]);
            Ok(vec![(String::new(), snap), ("_summary".into(), summary)])
        }
        Prepared::Decohere { rho, blocks, samples } => {
            let exact = dephase_exact(&rho, &blocks)?;
            let mut t = Table::new(&["samples", "coherence", "distance_to_exact"]);
            let mut ladder: Vec<usize> = std::iter::successors(Some(1usize), |s| {
                s.checked_mul(2).filter(|&n| n <= samples)
            })
            .collect();
            if *ladder.last().unwrap() != samples {
                ladder.push(samples);
            }
            for s in ladder {
                let avg = dephase_sampled(&rho, &blocks, s, seed)?;
                t.push(vec![
                    Cell::Int(s as i64),
                    Cell::Num(coherence_norm(&avg, &blocks)?),
                    Cell::Num(trace_distance(&avg, &exact)?),
                ]);
            }
            let drift = {
                let before = partial_trace(&rho, &["q"])?;
                let after = partial_trace(&exact, &["q"])?;
                (before.entries() - after.entries()).camax()
            };
            let mut summary = Table::new(&["coherence_initial", "coherence_exact", "reduced_drift"]);
            summary.push(vec![
                Cell::Num(coherence_norm(&rho, &blocks)?),
                Cell::Num(coherence_norm(&exact, &blocks)?),
                Cell::Num(drift),
            ]);
            Ok(vec![(String::new(), t), ("_summary".into(), summary)])
        }
        Prepared::Bell { basis_a, basis_b } => {
            let layout = RegisterLayout::new(vec![
                Register::physical("q0", 2),
                Register::physical("q1", 2),
                Register::stinespring("m0", 2),
                Register::stinespring("m1", 2),
            ])?;
            let instructions = vec![
                Instruction::Unitary { op: builders::hadamard("q0"), targets: vec!["q0".into()] },
                Instruction::Unitary {
                    op: builders::cnot("q0", "q1"),
                    targets: vec!["q0".into(), "q1".into()],
                },
                Instruction::Measure {
                    observable: bit_observable("q0", basis_a)?,
                    target: vec!["q0".into()],
                    ss_label: "m0".into(),
                },
                Instruction::Measure {
                    observable: bit_observable("q1", basis_b)?,
                    target: vec!["q1".into()],
                    ss_label: "m1".into(),
                },
            ];
            let spec = ProtocolSpec::new(layout, instructions, &pol)?;
            let initial = Ket::basis_state(spec.physical_layout(), &[0, 0])?;
            let run = run_dilated(&spec, &initial.to_density(), &pol)?;
            let mut joint = [[0.0; 2]; 2];
            for (a, row) in joint.iter_mut().enumerate() {
                for (b, p) in row.iter_mut().enumerate() {
                    *p = marginal_given(&run, &[("m0", a), ("m1", b)], &pol)?.0;
                }
            }
            let mut t = Table::new(&["m0", "m1", "probability", "parity", "correlation"]);
            for (a, row) in joint.iter().enumerate() {
                // correlation of the second outcome with the first, conditioned
                // on m0 = a; identical across rows exactly when the protocol is
                // basis-matched (1 for z,z) or basis-crossed (0 for z,x)
                let p_a = row[0] + row[1];
                let corr = (joint[a][a] - joint[a][1 - a]) / p_a;
                for (b, p) in row.iter().enumerate() {
                    let parity = if (a + b) % 2 == 0 { 1 } else { -1 };
                    t.push(vec![
                        Cell::Int(a as i64),
                        Cell::Int(b as i64),
                        Cell::Num(*p),
                        Cell::Int(parity),
                        Cell::Num(corr),
                    ]);
                }
            }
            Ok(vec![(String::new(), t)])
        }
    }
}

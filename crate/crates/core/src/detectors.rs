//! Detector models built on dilated measurement registers.
//!
//! Four physical readout mechanisms share one structure: the system imprints
//! itself on an auxiliary register (a qubit chain, a second optical mode, a
//! scattered-photon record, a resonator pointer), and a coarse classical bin
//! over that register realizes the measurement. This module provides
//!
//! * photon counting through a chain of two-level absorbers, both as the
//!   exact ordered product of Jaynes-Cummings rotations and as the
//!   attenuation closed form it converges to,
//! * balanced homodyne detection: exact beam-splitter matrix elements in the
//!   sum/difference photon basis, the large-field asymptotic factorization,
//!   and the resulting count distributions,
//! * fluorescence readout with a finite number of scattering rounds and an
//!   imperfect detector,
//! * dispersive readout of a qubit through the phase of a coherent pointer.
//!
//! Everything here is a pure function of its inputs; sweeps parallelize at
//! the caller's discretion.

use num_complex::Complex;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hilbert::{c, cr, CMatrix, CVector, Ket, Register, RegisterKind, RegisterLayout, C64};

// ---------------------------------------------------------------------------
// shared small-number helpers

/// ln(n!) for 0..=n as a cumulative table. Exact to ~1e-14 absolute for the
/// ranges used here (n below a few hundred).
fn ln_factorials(n: usize) -> Vec<f64> {
    let mut t = vec![0.0; n + 1];
    for k in 1..=n {
        t[k] = t[k - 1] + (k as f64).ln();
    }
    t
}

/// Binomial pmf over 0..=n in log domain. `ln_q` is ln(1-p), passed
/// separately so callers that know 1-p = e^{-zeta} keep full precision.
fn binomial_pmf_ln(n: usize, p: f64, ln_q: f64) -> Vec<f64> {
    let lf = ln_factorials(n);
    let mut out = vec![0.0; n + 1];
    for k in 0..=n {
        let mut ln = lf[n] - lf[k] - lf[n - k];
        if k > 0 {
            ln += k as f64 * p.ln();
        }
        if k < n {
            ln += (n - k) as f64 * ln_q;
        }
        out[k] = ln.exp();
    }
    out
}

fn require_single_register(psi: &Ket, what: &str) -> Result<()> {
    if psi.layout().len() != 1 {
        return Err(Error::DimMismatch(format!(
            "{what} expects a single-register Fock state, got {} registers",
            psi.layout().len()
        )));
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// photon counting

/// Chain of `n_qubits` two-level absorbers, each coupled to the mode for a
/// time `tau` at strength `g`. The attenuation parameter zeta = N g^2 tau^2
/// stays finite as the chain is refined.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhotonCounterConfig {
    pub n_qubits: usize,
    pub g: f64,
    pub tau: f64,
}

impl PhotonCounterConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_qubits == 0 {
            return Err(Error::InvalidConfig("photon counter needs at least one qubit".into()));
        }
        if !self.g.is_finite() || self.g < 0.0 {
            return Err(Error::InvalidConfig(format!("coupling g = {} must be finite and >= 0", self.g)));
        }
        if !self.tau.is_finite() || self.tau < 0.0 {
            return Err(Error::InvalidConfig(format!("duration tau = {} must be finite and >= 0", self.tau)));
        }
        Ok(())
    }

    pub fn zeta(&self) -> f64 {
        self.n_qubits as f64 * self.g * self.g * self.tau * self.tau
    }
}

/// Largest dilated dimension `photodetect_exact` will materialize.
const PHOTODETECT_DIM_LIMIT: usize = 1 << 22;

/// Exact ordered product of two-body exponentials exp(g tau (a s+_k - a+ s-_k))
/// for k = 1..N, applied to a Fock-register ket with all absorbers in |0>.
///
/// Each exponential is a rotation by g tau sqrt(n) on the invariant pair
/// (|n, 0_k>, |n-1, 1_k>); qubit k is only ever excited by taking a photon,
/// so the mode occupation never grows and the input truncation stays exact.
/// Returns the dilated ket on mode (x) qubits; norm is preserved.
pub fn photodetect_exact(psi: &Ket, cfg: &PhotonCounterConfig) -> Result<Ket> {
    cfg.validate()?;
    require_single_register(psi, "photodetect_exact")?;
    if cfg.n_qubits > 12 {
        return Err(Error::InvalidConfig(format!(
            "photodetect_exact materializes the full qubit chain; n_qubits = {} exceeds 12",
            cfg.n_qubits
        )));
    }
    let mode = psi.layout().registers()[0].clone();
    if mode.kind != RegisterKind::Physical {
        return Err(Error::InvalidConfig("photodetect_exact mode register must be physical".into()));
    }
    let n = cfg.n_qubits;
    let dim = mode
        .dim
        .checked_shl(n as u32)
        .filter(|&d| d <= PHOTODETECT_DIM_LIMIT)
        .ok_or_else(|| {
            Error::InvalidConfig(format!(
                "dilated dimension {} * 2^{} exceeds the photodetect guard",
                mode.dim, n
            ))
        })?;

    let prefix = ["d", "det", "pd"]
        .iter()
        .find(|p| (1..=n).all(|k| format!("{p}{k}") != mode.label))
        .expect("three candidate prefixes cannot all collide with one label");
    let mut regs = vec![mode.clone()];
    for k in 1..=n {
        regs.push(Register::stinespring(&format!("{prefix}{k}"), 2));
    }
    let layout = RegisterLayout::new(regs)?;

    let mut amp: Vec<C64> = vec![c(0.0, 0.0); dim];
    for (i, a) in psi.amplitudes().iter().enumerate() {
        amp[i << n] = *a;
    }

    let gt = cfg.g * cfg.tau;
    for k in 1..=n {
        let qubit_bit = 1usize << (n - k);
        // pairs (occ, bit 0) <-> (occ-1, bit 1) are disjoint for fixed k
        for occ in 1..mode.dim {
            let theta = gt * (occ as f64).sqrt();
            let (s, co) = theta.sin_cos();
            let base = occ << n;
            for rest in 0..(1usize << n) {
                if rest & qubit_bit != 0 {
                    continue;
                }
                let i0 = base | rest;
                let i1 = i0 - (1 << n) + qubit_bit;
                let v0 = amp[i0];
                let v1 = amp[i1];
                amp[i0] = v0 * cr(co) - v1 * cr(s);
                amp[i1] = v0 * cr(s) + v1 * cr(co);
            }
        }
    }

    Ket::new(layout, CVector::from_vec(amp))
}

/// Probability of m total absorber excitations in a dilated photodetector
/// ket whose last `n_qubits` registers are the qubit chain.
pub fn photodetect_count_distribution(dilated: &Ket, n_qubits: usize) -> Result<Vec<f64>> {
    let regs = dilated.layout().registers();
    if regs.len() < n_qubits + 1 {
        return Err(Error::DimMismatch(format!(
            "dilated state has {} registers, expected a mode plus {} qubits",
            regs.len(),
            n_qubits
        )));
    }
    if regs[regs.len() - n_qubits..].iter().any(|r| r.dim != 2) {
        return Err(Error::DimMismatch("trailing detector registers must be qubits".into()));
    }
    let mask = (1usize << n_qubits) - 1;
    let mut out = vec![0.0; n_qubits + 1];
    for (i, a) in dilated.amplitudes().iter().enumerate() {
        out[(i & mask).count_ones() as usize] += a.norm_sqr();
    }
    Ok(out)
}

/// Photon-count distribution for a Fock input |n> at attenuation zeta:
/// Binomial(n, p) with p = 1 - e^{-zeta}.
pub fn photocount_distribution(n: usize, zeta: f64) -> Result<Vec<f64>> {
    if !zeta.is_finite() || zeta < 0.0 {
        return Err(Error::InvalidConfig(format!("attenuation zeta = {zeta} must be finite and >= 0")));
    }
    let p = -f64::exp_m1(-zeta);
    Ok(binomial_pmf_ln(n, p, -zeta))
}

/// Joint magnitude table |amplitude(k photons remaining, m counted)| for the
/// attenuation closed form. Phases are m-dependent and microscopic; only
/// magnitudes are physical across shots, so only magnitudes are stored.
#[derive(Debug, Clone)]
pub struct PhotocountJoint {
    zeta: f64,
    /// mags[k][m], k + m <= n_max.
    mags: Vec<Vec<f64>>,
}

impl PhotocountJoint {
    pub fn zeta(&self) -> f64 {
        self.zeta
    }

    /// Highest Fock level in the input's support window.
    pub fn n_max(&self) -> usize {
        self.mags.len() - 1
    }

    /// |amplitude| for k photons surviving and m counted; zero off the table.
    pub fn magnitude(&self, k_remaining: usize, m_counted: usize) -> f64 {
        self.mags
            .get(k_remaining)
            .and_then(|row| row.get(m_counted))
            .copied()
            .unwrap_or(0.0)
    }

    /// Marginal over counts: p(m) = sum_k magnitude(k, m)^2.
    pub fn count_marginal(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.mags.len()];
        for row in &self.mags {
            for (m, v) in row.iter().enumerate() {
                out[m] += v * v;
            }
        }
        out
    }

    /// Marginal over surviving photons.
    pub fn remaining_marginal(&self) -> Vec<f64> {
        self.mags.iter().map(|row| row.iter().map(|v| v * v).sum()).collect()
    }
}

/// Attenuation closed form for a photodetector in the refined-chain limit.
///
/// For input sum_n c_n |n>, the branch with k photons remaining and m counted
/// carries magnitude |c_{k+m}| sqrt(C(k+m, m)) (1-e^{-zeta})^{m/2} e^{-zeta k/2}.
pub fn photodetect_closed_form(psi: &Ket, zeta: f64) -> Result<PhotocountJoint> {
    require_single_register(psi, "photodetect_closed_form")?;
    if !zeta.is_finite() || zeta <= 0.0 {
        return Err(Error::InvalidConfig(format!("attenuation zeta = {zeta} must be finite and > 0")));
    }
    let amps = psi.amplitudes();
    let n_max = amps.len() - 1;
    let lf = ln_factorials(n_max);
    let ln_p = (-f64::exp_m1(-zeta)).ln();
    let mut mags = Vec::with_capacity(n_max + 1);
    for k in 0..=n_max {
        let mut row = Vec::with_capacity(n_max - k + 1);
        for m in 0..=(n_max - k) {
            let ca = amps[k + m].norm();
            if ca == 0.0 {
                row.push(0.0);
                continue;
            }
            let ln_sq = lf[k + m] - lf[k] - lf[m] + m as f64 * ln_p - zeta * k as f64;
            row.push(ca * (0.5 * ln_sq).exp());
        }
        mags.push(row);
    }
    Ok(PhotocountJoint { zeta, mags })
}

/// Deviation of the collective absorber mode from a true bosonic mode.
///
/// The weighted lowering operator B built from the chain satisfies
/// [B, B+] = kappa (1 - 2 (1-e^{-n g^2 tau^2}) / (1-e^{-N g^2 tau^2})) on the
/// ordered n-excitation states, kappa = g^2 tau^2 / (e^{g^2 tau^2} - 1).
/// Returns |coefficient - 1| per count sector n = 0..=N; each fixed sector's
/// defect vanishes as the chain is refined at fixed zeta.
pub fn collective_commutator_defect(n_qubits: usize, g: f64, tau: f64) -> Result<Vec<f64>> {
    if n_qubits == 0 || n_qubits > 16 {
        return Err(Error::InvalidConfig(format!(
            "commutator defect table needs 1 <= n_qubits <= 16, got {n_qubits}"
        )));
    }
    if !g.is_finite() || !tau.is_finite() || g < 0.0 || tau < 0.0 {
        return Err(Error::InvalidConfig("coupling and duration must be finite and >= 0".into()));
    }
    let x = g * g * tau * tau;
    let nn = n_qubits as f64;
    let kappa = if x == 0.0 { 1.0 } else { x / f64::exp_m1(x) };
    Ok((0..=n_qubits)
        .map(|n| {
            let ratio = if x == 0.0 {
                n as f64 / nn
            } else {
                f64::exp_m1(-(n as f64) * x) / f64::exp_m1(-nn * x)
            };
            (kappa * (1.0 - 2.0 * ratio) - 1.0).abs()
        })
        .collect())
}

// ---------------------------------------------------------------------------
// beam splitter and homodyne detection

/// Balanced beam splitter exp((pi/4)(a+b - a b+)) on a two-mode Fock ket.
///
/// Total photon number is conserved exactly: the unitary is built per
/// total-N block from the small antisymmetric generator, so no global
/// truncation error enters. Output registers keep the input labels, each
/// widened to `cutoff` + 1 levels. Populated input states must satisfy
/// n_a + n_b <= cutoff.
pub fn beam_splitter(state: &Ket, cutoff: usize) -> Result<Ket> {
    let regs = state.layout().registers();
    if regs.len() != 2 {
        return Err(Error::DimMismatch(format!(
            "beam splitter expects two mode registers, got {}",
            regs.len()
        )));
    }
    let (da, db) = (regs[0].dim, regs[1].dim);
    for (i, a) in state.amplitudes().iter().enumerate() {
        if a.norm_sqr() > 0.0 && i / db + i % db > cutoff {
            return Err(Error::InvalidConfig(format!(
                "populated state |{}, {}> exceeds beam splitter cutoff {}",
                i / db,
                i % db,
                cutoff
            )));
        }
    }

    let d_out = cutoff + 1;
    let layout = RegisterLayout::new(vec![
        Register { label: regs[0].label.clone(), dim: d_out, kind: regs[0].kind },
        Register { label: regs[1].label.clone(), dim: d_out, kind: regs[1].kind },
    ])?;
    let mut out = vec![c(0.0, 0.0); d_out * d_out];

    for total in 0..=cutoff {
        // block basis |total - j, j>, j = 0..=total
        let bdim = total + 1;
        let mut input = vec![c(0.0, 0.0); bdim];
        let mut any = false;
        for (j, iv) in input.iter_mut().enumerate() {
            let (na, nb) = (total - j, j);
            if na < da && nb < db {
                *iv = state.amplitudes()[na * db + nb];
                any = any || iv.norm_sqr() > 0.0;
            }
        }
        if !any {
            continue;
        }
        let u = beam_splitter_block(total);
        for jp in 0..bdim {
            let mut acc = c(0.0, 0.0);
            for (j, iv) in input.iter().enumerate() {
                acc += u[(jp, j)] * iv;
            }
            out[(total - jp) * d_out + jp] += acc;
        }
    }
    Ket::new(layout, CVector::from_vec(out))
}

/// exp(G) on the total-N block, G[j-1, j] = (pi/4) sqrt(j (N-j+1)),
/// G[j+1, j] = -(pi/4) sqrt((j+1)(N-j)). G is real antisymmetric, so iG is
/// Hermitian and the exponential comes from its eigensystem.
fn beam_splitter_block(total: usize) -> CMatrix {
    let bdim = total + 1;
    let theta = std::f64::consts::FRAC_PI_4;
    let mut h = CMatrix::zeros(bdim, bdim);
    for j in 1..bdim {
        // H = iG
        let up = theta * ((j * (total - j + 1)) as f64).sqrt();
        h[(j - 1, j)] = c(0.0, up);
        h[(j, j - 1)] = c(0.0, -up);
    }
    let eig = h.symmetric_eigen();
    let phases = CVector::from_iterator(
        bdim,
        eig.eigenvalues.iter().map(|&l| Complex::from_polar(1.0, -l)),
    );
    &eig.eigenvectors * CMatrix::from_diagonal(&phases) * eig.eigenvectors.adjoint()
}

/// Exact overlap <N, D | U_bs | psi, beta> for balanced homodyne detection.
///
/// |N, D> is the joint Fock state with N/2 + D photons in the signal output
/// and N/2 - D in the reference output; `d_twice` = 2D keeps the index
/// integral when N is odd. Evaluates
/// e^{-|beta|^2/2} <0| (beta + a)^{N/2+D} (beta - a)^{N/2-D} |psi>
/// / sqrt(2^N (N/2+D)! (N/2-D)!) by repeated application of the two linear
/// factors (annihilation only, so the truncated support never grows), with
/// per-step max-abs rescaling and a log accumulator against overflow.
pub fn homodyne_matrix_element_exact(psi: &Ket, beta: C64, n_tot: usize, d_twice: i64) -> Result<C64> {
    require_single_register(psi, "homodyne_matrix_element_exact")?;
    let n = n_tot as i64;
    if d_twice.abs() > n || (n + d_twice) % 2 != 0 {
        return Err(Error::InvalidConfig(format!(
            "difference index 2D = {d_twice} must match total N = {n_tot} in range and parity"
        )));
    }
    let p = ((n + d_twice) / 2) as usize;
    let q = ((n - d_twice) / 2) as usize;

    let mut x: Vec<C64> = psi.amplitudes().iter().copied().collect();
    let mut ln_scale = 0.0f64;
    let mut step = |xv: &mut Vec<C64>, sign: f64| -> bool {
        let len = xv.len();
        for i in 0..len {
            let lowered = if i + 1 < len { xv[i + 1] * cr(((i + 1) as f64).sqrt()) } else { c(0.0, 0.0) };
            xv[i] = beta * xv[i] + lowered * cr(sign);
        }
        let m = xv.iter().map(|v| v.norm()).fold(0.0f64, f64::max);
        if m == 0.0 {
            return false;
        }
        for v in xv.iter_mut() {
            *v /= cr(m);
        }
        ln_scale += m.ln();
        true
    };
    for _ in 0..q {
        if !step(&mut x, -1.0) {
            return Ok(c(0.0, 0.0));
        }
    }
    for _ in 0..p {
        if !step(&mut x, 1.0) {
            return Ok(c(0.0, 0.0));
        }
    }

    let lf = ln_factorials(p.max(q));
    let ln_pref = ln_scale
        - 0.5 * beta.norm_sqr()
        - 0.5 * n_tot as f64 * std::f64::consts::LN_2
        - 0.5 * (lf[p] + lf[q]);
    Ok(x[0] * cr(ln_pref.exp()))
}

/// Asymptotic homodyne matrix element and whether the caller is inside the
/// formula's validity regime (local-oscillator amplitude well above the
/// signal occupation).
#[derive(Debug, Clone, Copy)]
pub struct AsymptoticElement {
    pub value: C64,
    pub in_regime: bool,
}

/// Large-field factorized form of the homodyne matrix element:
/// e^{i N phi} pi^{-1/4} |beta|^{-1} e^{-(N-|beta|^2)^2/(4 |beta|^2)}
/// psi_phi(D sqrt(2) / |beta|), quadrature wavefunction evaluated at the
/// rescaled difference count. Valid for |beta| >> <a+a>_psi; the flag turns
/// on at |beta| >= 5 max(<a+a>, 1).
pub fn homodyne_matrix_element_asymptotic(
    psi: &Ket,
    beta_abs: f64,
    phi: f64,
    n_tot: usize,
    d_twice: i64,
) -> Result<AsymptoticElement> {
    require_single_register(psi, "homodyne_matrix_element_asymptotic")?;
    if !beta_abs.is_finite() || beta_abs <= 0.0 {
        return Err(Error::InvalidConfig(format!("local oscillator amplitude {beta_abs} must be > 0")));
    }
    let nf = n_tot as f64;
    let d = d_twice as f64 / 2.0;
    let gauss = (-(nf - beta_abs * beta_abs).powi(2) / (4.0 * beta_abs * beta_abs)).exp();
    let quad = quadrature_wavefunction(psi, phi, d * std::f64::consts::SQRT_2 / beta_abs)?;
    let value = Complex::from_polar(1.0, nf * phi)
        * cr(std::f64::consts::PI.powf(-0.25) / beta_abs * gauss)
        * quad;
    let occ: f64 = psi
        .amplitudes()
        .iter()
        .enumerate()
        .map(|(k, a)| k as f64 * a.norm_sqr())
        .sum();
    Ok(AsymptoticElement { value, in_regime: beta_abs >= 5.0 * occ.max(1.0) })
}

/// Quadrature wavefunction psi_phi(x) = sum_n e^{-i n phi} c_n h_n(x) with
/// h_n the orthonormal Hermite functions. The normalized three-term
/// recurrence h_{n+1} = x sqrt(2/(n+1)) h_n - sqrt(n/(n+1)) h_{n-1} avoids
/// the raw-polynomial overflow near n = 150.
pub fn quadrature_wavefunction(psi: &Ket, phi: f64, x: f64) -> Result<C64> {
    require_single_register(psi, "quadrature_wavefunction")?;
    let amps = psi.amplitudes();
    let mut h_prev = 0.0f64;
    let mut h = std::f64::consts::PI.powf(-0.25) * (-0.5 * x * x).exp();
    let mut acc = c(0.0, 0.0);
    for (n, a) in amps.iter().enumerate() {
        if a.norm_sqr() > 0.0 {
            acc += Complex::from_polar(1.0, -(n as f64) * phi) * a * cr(h);
        }
        let nf = n as f64;
        let h_next = x * (2.0 / (nf + 1.0)).sqrt() * h - (nf / (nf + 1.0)).sqrt() * h_prev;
        h_prev = h;
        h = h_next;
    }
    Ok(acc)
}

/// Local-oscillator settings for homodyne detection. `phi` is the oscillator
/// phase; the detected quadrature rotates with it.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HomodyneConfig {
    pub beta_abs: f64,
    pub phi: f64,
}

impl HomodyneConfig {
    pub fn validate(&self) -> Result<()> {
        if !self.beta_abs.is_finite() || self.beta_abs <= 0.0 {
            return Err(Error::InvalidConfig(format!(
                "local oscillator amplitude {} must be finite and > 0",
                self.beta_abs
            )));
        }
        if !self.phi.is_finite() {
            return Err(Error::InvalidConfig("oscillator phase must be finite".into()));
        }
        Ok(())
    }
}

/// Report grids for the homodyne count distributions: total counts
/// N = 0..=n_max and integer difference counts |D| <= d_abs_max.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HomodyneGrid {
    pub n_max: usize,
    pub d_abs_max: usize,
}

impl HomodyneGrid {
    /// The sum-count Gaussian has mean and std |beta|^2 and |beta|; the grid
    /// must cover the support or the renormalized moments are biased.
    pub fn validate(&self, cfg: &HomodyneConfig) -> Result<()> {
        let b = cfg.beta_abs;
        if (self.n_max as f64) < b * b + 6.0 * b {
            return Err(Error::InvalidConfig(format!(
                "n_max = {} does not cover the sum-count support; need at least |beta|^2 + 6|beta| = {:.1}",
                self.n_max,
                b * b + 6.0 * b
            )));
        }
        if self.d_abs_max == 0 {
            return Err(Error::InvalidConfig("difference grid needs d_abs_max >= 1".into()));
        }
        Ok(())
    }
}

/// Normalized count distributions for one homodyne configuration: p_n over
/// total counts and p_d over the integer difference grid in `d_values`.
#[derive(Debug, Clone)]
pub struct HomodyneDistributions {
    pub p_n: Vec<f64>,
    pub d_values: Vec<i64>,
    pub p_d: Vec<f64>,
}

fn normalized(mut v: Vec<f64>, what: &str) -> Result<Vec<f64>> {
    let s: f64 = v.iter().sum();
    if !(s > 0.0) || !s.is_finite() {
        return Err(Error::NumericalGuard(format!("{what} has no mass on the requested grid")));
    }
    for x in v.iter_mut() {
        *x /= s;
    }
    Ok(v)
}

/// Factorized homodyne statistics in the large-oscillator regime: the total
/// count N is Gaussian with mean and variance |beta|^2, independent of the
/// difference count D, whose distribution samples the signal's quadrature
/// density |psi_phi(D sqrt(2)/|beta|)|^2 on the integer detector grid. Both
/// tables are renormalized over their grids.
pub fn homodyne_distributions(
    psi: &Ket,
    cfg: &HomodyneConfig,
    grid: &HomodyneGrid,
) -> Result<HomodyneDistributions> {
    cfg.validate()?;
    grid.validate(cfg)?;
    require_single_register(psi, "homodyne_distributions")?;
    let b2 = cfg.beta_abs * cfg.beta_abs;
    let p_n = normalized(
        (0..=grid.n_max)
            .map(|n| (-(n as f64 - b2).powi(2) / (2.0 * b2)).exp())
            .collect(),
        "homodyne sum-count distribution",
    )?;
    let d_values: Vec<i64> = (-(grid.d_abs_max as i64)..=grid.d_abs_max as i64).collect();
    let mut p_d = Vec::with_capacity(d_values.len());
    for &dv in &d_values {
        let x = dv as f64 * std::f64::consts::SQRT_2 / cfg.beta_abs;
        p_d.push(quadrature_wavefunction(psi, cfg.phi, x)?.norm_sqr());
    }
    Ok(HomodyneDistributions {
        p_n,
        d_values,
        p_d: normalized(p_d, "homodyne difference-count distribution")?,
    })
}

/// Same tables from the exact matrix elements, for cross-checking the
/// asymptotic factorization. p_n marginalizes |f(N, D)|^2 over every D of
/// matching parity; p_d keeps the integer-D (even N) sector and renormalizes.
pub fn homodyne_distributions_exact(
    psi: &Ket,
    cfg: &HomodyneConfig,
    grid: &HomodyneGrid,
) -> Result<HomodyneDistributions> {
    cfg.validate()?;
    grid.validate(cfg)?;
    require_single_register(psi, "homodyne_distributions_exact")?;
    let beta = Complex::from_polar(cfg.beta_abs, cfg.phi);
    let mut p_n = vec![0.0; grid.n_max + 1];
    let d_values: Vec<i64> = (-(grid.d_abs_max as i64)..=grid.d_abs_max as i64).collect();
    let mut p_d = vec![0.0; d_values.len()];
    for n in 0..=grid.n_max {
        let ni = n as i64;
        let mut dt = -ni;
        while dt <= ni {
            let w = homodyne_matrix_element_exact(psi, beta, n, dt)?.norm_sqr();
            p_n[n] += w;
            if dt % 2 == 0 {
                let dv = dt / 2;
                if dv.abs() <= grid.d_abs_max as i64 {
                    p_d[(dv + grid.d_abs_max as i64) as usize] += w;
                }
            }
            dt += 2;
        }
    }
    Ok(HomodyneDistributions {
        p_n: normalized(p_n, "exact homodyne sum-count distribution")?,
        d_values,
        p_d: normalized(p_d, "exact homodyne difference-count distribution")?,
    })
}

// ---------------------------------------------------------------------------
// fluorescence readout

/// Cycling readout with `n_rounds` scattering attempts, each detected
/// independently with probability `p_detect`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FluorescenceConfig {
    pub p_detect: f64,
    pub n_rounds: usize,
}

impl FluorescenceConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.p_detect) || !self.p_detect.is_finite() {
            return Err(Error::InvalidConfig(format!(
                "detection probability {} must lie in [0, 1]",
                self.p_detect
            )));
        }
        if self.n_rounds == 0 {
            return Err(Error::InvalidConfig("fluorescence needs at least one round".into()));
        }
        Ok(())
    }
}

/// Binned fluorescence record. The electromagnetic record is summarized, not
/// stored: only the (outcome, count) statistics and the surviving branch
/// amplitudes are retained.
///
/// `p_false_negative` is the conventional reported figure |c_g|^2 (1-p)^{n/2},
/// quoting the undetected g branch through its amplitude attenuation
/// (1-p)^{n/2}; the Born weight of that branch is `undetected_weight` =
/// |c_g|^2 (1-p)^n, which is also `count_distribution[0]` minus the dark
/// e-branch weight. Both are exposed.
#[derive(Debug, Clone)]
pub struct FluorescenceOutcome {
    /// Probability of the bright bin (at least one click).
    pub p_outcome_g: f64,
    /// Probability of the dark bin (no click), including the g false negatives.
    pub p_outcome_e: f64,
    /// Unconditional click-count distribution over m = 0..=n_rounds.
    pub count_distribution: Vec<f64>,
    /// Click counts carried by the g branch alone: Binomial(n_rounds, p_detect).
    pub branch_g_counts: Vec<f64>,
    /// Reported false-negative figure |c_g|^2 (1-p)^{n/2}.
    pub p_false_negative: f64,
    /// Born weight of the never-detected g branch, |c_g|^2 (1-p)^n.
    pub undetected_weight: f64,
    /// Amplitude of the e branch (never scatters).
    pub amp_e: C64,
    /// Amplitude of the g branch conditioned on zero clicks, c_g (1-p)^{n/2}.
    pub amp_g_undetected: C64,
}

/// Fluorescence measurement of a qubit with bright state g.
///
/// The g branch scatters one photon per round, each caught with probability
/// p; the e branch never scatters. Binning m > 0 into outcome g and m = 0
/// into outcome e makes this a two-outcome destructive measurement with the
/// dark bin polluted by |c_g|^2 (1-p)^n.
pub fn fluorescence_measure(c_g: C64, c_e: C64, cfg: &FluorescenceConfig) -> Result<FluorescenceOutcome> {
    cfg.validate()?;
    let (wg, we) = (c_g.norm_sqr(), c_e.norm_sqr());
    if (wg + we - 1.0).abs() > 1e-10 {
        return Err(Error::InvalidConfig(format!(
            "fluorescence amplitudes must be normalized; |c_g|^2 + |c_e|^2 = {}",
            wg + we
        )));
    }
    let (p, n) = (cfg.p_detect, cfg.n_rounds);
    let miss_n = (1.0 - p).powi(n as i32);
    let miss_half = (1.0 - p).powf(n as f64 / 2.0);
    let branch_g_counts = binomial_pmf_ln(n, p, (1.0 - p).ln());
    let mut count_distribution: Vec<f64> = branch_g_counts.iter().map(|b| wg * b).collect();
    count_distribution[0] += we;
    Ok(FluorescenceOutcome {
        p_outcome_g: wg * (1.0 - miss_n),
        p_outcome_e: we + wg * miss_n,
        count_distribution,
        branch_g_counts,
        p_false_negative: wg * miss_half,
        undetected_weight: wg * miss_n,
        amp_e: c_e,
        amp_g_undetected: c_g * cr(miss_half),
    })
}

// ---------------------------------------------------------------------------
// dispersive readout

/// Dispersive readout settings: pointer amplitude `alpha` and accumulated
/// dispersive phase `theta` per branch. theta = 0 carries no information and
/// is rejected.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DispersiveConfig {
    pub alpha: f64,
    pub theta: f64,
}

impl DispersiveConfig {
    pub fn validate(&self) -> Result<()> {
        if !self.alpha.is_finite() || self.alpha <= 0.0 {
            return Err(Error::InvalidConfig(format!("pointer amplitude {} must be > 0", self.alpha)));
        }
        if !self.theta.is_finite() || self.theta <= 0.0 || self.theta > std::f64::consts::FRAC_PI_2 {
            return Err(Error::InvalidConfig(format!(
                "dispersive phase {} must lie in (0, pi/2]; zero phase cannot discriminate",
                self.theta
            )));
        }
        Ok(())
    }
}

/// Which qubit branch a dispersive pointer wavefunction belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReadoutBranch {
    Ground,
    Excited,
}

/// Dispersive readout record: branch amplitudes, the conjugate pointer
/// phases e^{+-2 i theta}, and the discrimination error of the momentum bin.
#[derive(Debug, Clone)]
pub struct DispersiveOutcome {
    pub amp_g: C64,
    pub amp_e: C64,
    pub phase_g: C64,
    pub phase_e: C64,
    /// (1/2) erfc(sqrt(2) alpha sin theta): weight of the g pointer Gaussian
    /// on the wrong side of p = 0.
    pub p_error: f64,
    alpha: f64,
    theta: f64,
}

impl DispersiveOutcome {
    /// Momentum wavefunction of one pointer branch,
    /// pi^{-1/4} e^{-i sqrt(2) alpha p cos theta} e^{-(p -+ sqrt(2) alpha sin theta)^2 / 2};
    /// the g branch sits at positive momentum, matching the p > 0 <-> g bin.
    pub fn momentum_wavefunction(&self, branch: ReadoutBranch, p: f64) -> C64 {
        let mu = std::f64::consts::SQRT_2 * self.alpha * self.theta.sin();
        let center = match branch {
            ReadoutBranch::Ground => mu,
            ReadoutBranch::Excited => -mu,
        };
        let drift = std::f64::consts::SQRT_2 * self.alpha * self.theta.cos();
        Complex::from_polar(1.0, -drift * p)
            * cr(std::f64::consts::PI.powf(-0.25) * (-0.5 * (p - center).powi(2)).exp())
    }
}

/// Dispersive readout of a qubit through a coherent pointer.
///
/// The two branches pick up conjugate phases e^{+-2 i theta}; after mixing
/// with a reference, their momentum distributions separate by
/// 2 sqrt(2) alpha sin theta, and the sign bin p > 0 <-> g misassigns with
/// probability (1/2) erfc(sqrt(2) alpha sin theta), which saturates to 1/2
/// as alpha sin theta -> 0.
pub fn dispersive_readout(c_g: C64, c_e: C64, cfg: &DispersiveConfig) -> Result<DispersiveOutcome> {
    cfg.validate()?;
    let (wg, we) = (c_g.norm_sqr(), c_e.norm_sqr());
    if (wg + we - 1.0).abs() > 1e-10 {
        return Err(Error::InvalidConfig(format!(
            "dispersive amplitudes must be normalized; |c_g|^2 + |c_e|^2 = {}",
            wg + we
        )));
    }
    let z = std::f64::consts::SQRT_2 * cfg.alpha * cfg.theta.sin();
    Ok(DispersiveOutcome {
        amp_g: c_g,
        amp_e: c_e,
        phase_g: Complex::from_polar(1.0, 2.0 * cfg.theta),
        phase_e: Complex::from_polar(1.0, -2.0 * cfg.theta),
        p_error: 0.5 * libm::erfc(z),
        alpha: cfg.alpha,
        theta: cfg.theta,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hilbert::RegisterKind;

    fn fock(label: &str, dim: usize, n: usize) -> Ket {
        Ket::basis_state(RegisterLayout::single(label, dim, RegisterKind::Physical), &[n]).unwrap()
    }

    #[test]
    fn vacuum_never_excites_the_chain() {
        let cfg = PhotonCounterConfig { n_qubits: 4, g: 0.7, tau: 1.3 };
        let out = photodetect_exact(&fock("mode", 3, 0), &cfg).unwrap();
        let counts = photodetect_count_distribution(&out, 4).unwrap();
        assert!((counts[0] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn closed_form_marginalizes_to_binomial() {
        let joint = photodetect_closed_form(&fock("mode", 6, 5), 0.8).unwrap();
        let marg = joint.count_marginal();
        let binom = photocount_distribution(5, 0.8).unwrap();
        for (a, b) in marg.iter().zip(binom.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn beam_splitter_fixes_the_vacuum() {
        let out = beam_splitter(&fock_pair(0, 0), 4).unwrap();
        assert!((out.amplitudes()[0] - cr(1.0)).norm() < 1e-14);
        assert!((out.norm() - 1.0).abs() < 1e-12);
    }

    fn fock_pair(na: usize, nb: usize) -> Ket {
        let layout = RegisterLayout::new(vec![
            Register::physical("a", 5),
            Register::physical("b", 5),
        ])
        .unwrap();
        Ket::basis_state(layout, &[na, nb]).unwrap()
    }
}

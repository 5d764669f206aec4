//! Spectral decompositions, Kraus sets, and dilated measurement unitaries.
//!
//! The dilated form of a projective measurement of an observable O with K
//! unique eigenvalues is U = sum_m P_m (x) S^m on system (x) pointer register,
//! where S is the cyclic shift on K levels. Applying U to |psi>|0> yields
//! sum_m (P_m|psi>) (x) |m>, so the pointer basis index records the outcome.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hilbert::{
    c, cr, embed, partial_trace, C64, CMatrix, DensityMatrix, Grid1D, Ket, Operator, Register,
    RegisterKind, RegisterLayout,
};
use crate::policy::NumericPolicy;

/// Unique eigenvalues in strictly increasing order, with multiplicities and
/// orthogonal eigenprojectors.
#[derive(Debug, Clone)]
pub struct SpectralDecomposition {
    eigenvalues: Vec<f64>,
    multiplicities: Vec<usize>,
    projectors: Vec<Operator>,
}

impl SpectralDecomposition {
    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    pub fn multiplicities(&self) -> &[usize] {
        &self.multiplicities
    }

    pub fn projectors(&self) -> &[Operator] {
        &self.projectors
    }

    pub fn projector(&self, m: usize) -> &Operator {
        &self.projectors[m]
    }

    pub fn n_outcomes(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn layout(&self) -> &RegisterLayout {
        self.projectors[0].layout()
    }

    /// Checks completeness, mutual orthogonality with idempotence, trace =
    /// multiplicity, and (when the observable is supplied) reconstruction.
    pub fn validate(&self, obs: Option<&Operator>, pol: &NumericPolicy) -> Result<()> {
        let layout = self.layout().clone();
        let d = layout.total_dim();
        let mut sum = CMatrix::zeros(d, d);
        for p in &self.projectors {
            sum += p.entries();
        }
        let comp = (&sum - CMatrix::identity(d, d)).camax();
        if comp > pol.projector_family {
            return Err(Error::InvariantViolation(format!("completeness defect {:.3e}", comp)));
        }
        for m in 0..self.projectors.len() {
            for n in 0..self.projectors.len() {
                let prod = self.projectors[m].entries() * self.projectors[n].entries();
                let target = if m == n { self.projectors[m].entries().clone() } else { CMatrix::zeros(d, d) };
                let dev = (prod - target).camax();
                if dev > pol.projector_family {
                    return Err(Error::InvariantViolation(format!(
                        "orthogonality defect {:.3e} at ({}, {})",
                        dev, m, n
                    )));
                }
            }
            let tr = self.projectors[m].trace();
            if (tr.re - self.multiplicities[m] as f64).abs() > pol.projector_family
                || tr.im.abs() > pol.projector_family
            {
                return Err(Error::InvariantViolation(format!(
                    "projector {} trace {} differs from multiplicity {}",
                    m, tr, self.multiplicities[m]
                )));
            }
        }
        if let Some(o) = obs {
            let mut rec = CMatrix::zeros(d, d);
            for (lam, p) in self.eigenvalues.iter().zip(&self.projectors) {
                rec += p.entries() * cr(*lam);
            }
            let dev = (rec - o.entries()).camax();
            if dev > pol.reconstruction {
                return Err(Error::InvariantViolation(format!(
                    "reconstruction defect {:.3e}",
                    dev
                )));
            }
        }
        Ok(())
    }
}

/// Eigendecomposition with degeneracy merging by single-linkage clustering:
/// adjacent sorted eigenvalues closer than the tolerance join one outcome.
/// Default tolerance is `degeneracy_rel` times the spectral range. The
/// reported eigenvalue of a merged cluster is the mean of its members.
pub fn spectral_decompose(
    obs: &Operator,
    degeneracy_tol: Option<f64>,
    pol: &NumericPolicy,
) -> Result<SpectralDecomposition> {
    obs.assert_hermitian(pol)?;
    let d = obs.dim();
    let herm = (obs.entries() + obs.entries().adjoint()) * cr(0.5);
    let eig = herm.symmetric_eigen();
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].partial_cmp(&eig.eigenvalues[b]).unwrap());

    let lo = eig.eigenvalues[order[0]];
    let hi = eig.eigenvalues[order[d - 1]];
    let tol = degeneracy_tol.unwrap_or(pol.degeneracy_rel * (hi - lo).abs());

    let mut eigenvalues = Vec::new();
    let mut multiplicities = Vec::new();
    let mut projectors = Vec::new();
    let mut start = 0;
    while start < d {
        let mut end = start + 1;
        while end < d
            && eig.eigenvalues[order[end]] - eig.eigenvalues[order[end - 1]] <= tol
        {
            end += 1;
        }
        let members = &order[start..end];
        let mut proj = CMatrix::zeros(d, d);
        let mut mean = 0.0;
        for &k in members {
            let v = eig.eigenvectors.column(k);
            proj += v * v.adjoint();
            mean += eig.eigenvalues[k];
        }
        mean /= members.len() as f64;
        eigenvalues.push(mean);
        multiplicities.push(members.len());
        projectors.push(Operator::new(obs.layout().clone(), proj)?);
        start = end;
    }
    Ok(SpectralDecomposition { eigenvalues, multiplicities, projectors })
}

/// Cyclic shift on K levels: S^m |k> = |k + m mod K>.
pub fn weyl_shift(k_dim: usize, m: usize) -> Result<Operator> {
    if k_dim < 2 {
        return Err(Error::InvalidConfig(format!("weyl shift needs K >= 2, got {}", k_dim)));
    }
    if m >= k_dim {
        return Err(Error::InvalidConfig(format!("shift {} out of range for K = {}", m, k_dim)));
    }
    let layout = RegisterLayout::single("ss", k_dim, RegisterKind::Stinespring);
    let mut e = CMatrix::zeros(k_dim, k_dim);
    for k in 0..k_dim {
        e[((k + m) % k_dim, k)] = cr(1.0);
    }
    Operator::new(layout, e)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KrausClass {
    /// trace preserving: sum K^dag K = I
    Channel,
    /// trace decreasing: I - sum K^dag K >= 0
    Operation,
}

/// Ordered Kraus operators with their completeness classification.
#[derive(Debug, Clone, Serialize)]
pub struct KrausSet {
    operators: Vec<Operator>,
    classification: KrausClass,
}

impl KrausSet {
    /// Classifies by the completeness defect I - sum K^dag K: a channel when
    /// it vanishes, an operation when it is positive semidefinite.
    pub fn new(operators: Vec<Operator>, pol: &NumericPolicy) -> Result<Self> {
        if operators.is_empty() {
            return Err(Error::InvalidConfig("empty kraus set".into()));
        }
        let layout = operators[0].layout().clone();
        for k in &operators {
            if k.layout() != &layout {
                return Err(Error::DimMismatch("kraus operators on different layouts".into()));
            }
        }
        let defect = Self::defect_matrix(&operators);
        let class = if defect.camax() < pol.projector_family {
            KrausClass::Channel
        } else {
            let min = ((&defect + defect.adjoint()) * cr(0.5))
                .symmetric_eigen()
                .eigenvalues
                .iter()
                .cloned()
                .fold(f64::INFINITY, f64::min);
            if min < -pol.projector_family {
                return Err(Error::InvalidKraus(min));
            }
            KrausClass::Operation
        };
        Ok(KrausSet { operators, classification: class })
    }

    fn defect_matrix(operators: &[Operator]) -> CMatrix {
        let d = operators[0].dim();
        let mut sum = CMatrix::zeros(d, d);
        for k in operators {
            sum += k.entries().adjoint() * k.entries();
        }
        CMatrix::identity(d, d) - sum
    }

    pub fn operators(&self) -> &[Operator] {
        &self.operators
    }

    pub fn classification(&self) -> KrausClass {
        self.classification
    }

    pub fn len(&self) -> usize {
        self.operators.len()
    }

    pub fn is_empty(&self) -> bool {
        self.operators.is_empty()
    }

    /// I - sum K^dag K.
    pub fn defect(&self) -> Operator {
        Operator::new(self.operators[0].layout().clone(), Self::defect_matrix(&self.operators))
            .expect("defect dims")
    }

    pub fn completeness_residual(&self) -> f64 {
        Self::defect_matrix(&self.operators).camax()
    }

    /// Appends the defect square root K_0 = (I - sum K^dag K)^(1/2), turning an
    /// operation into a channel. Channels are returned unchanged.
    pub fn complete_to_channel(&self, pol: &NumericPolicy) -> Result<KrausSet> {
        if self.classification == KrausClass::Channel {
            return Ok(self.clone());
        }
        let defect = Self::defect_matrix(&self.operators);
        let herm = (&defect + defect.adjoint()) * cr(0.5);
        let eig = herm.symmetric_eigen();
        let d = defect.nrows();
        let mut sqrt = CMatrix::zeros(d, d);
        for k in 0..d {
            let lam = eig.eigenvalues[k].max(0.0);
            let v = eig.eigenvectors.column(k);
            sqrt += v * v.adjoint() * cr(lam.sqrt());
        }
        let mut ops = self.operators.clone();
        ops.push(Operator::new(self.operators[0].layout().clone(), sqrt)?);
        KrausSet::new(ops, pol)
    }

    /// Kraus application sum_k K rho K^dag (trace may drop for operations).
    pub fn apply(&self, rho: &DensityMatrix) -> Result<DensityMatrix> {
        if rho.layout() != self.operators[0].layout() {
            return Err(Error::DimMismatch("state layout differs from kraus layout".into()));
        }
        let d = rho.layout().total_dim();
        let mut out = CMatrix::zeros(d, d);
        for k in &self.operators {
            out += k.entries() * rho.entries() * k.entries().adjoint();
        }
        DensityMatrix::new(rho.layout().clone(), out)
    }
}

impl<'de> Deserialize<'de> for KrausSet {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(deny_unknown_fields)]
        struct KrausJson {
            operators: Vec<Operator>,
            classification: KrausClass,
        }
        let j = KrausJson::deserialize(d)?;
        let ks = KrausSet::new(j.operators, &NumericPolicy::default())
            .map_err(|e| serde::de::Error::custom(e.to_string()))?;
        if ks.classification != j.classification {
            return Err(serde::de::Error::custom("stored kraus classification disagrees"));
        }
        Ok(ks)
    }
}

/// Dilated measurement unitary on system (x) pointer registers, together with
/// the binning map from pointer basis indices to outcome indices and the
/// default pointer state the construction starts from.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MeasurementUnitary {
    unitary: Operator,
    outcome_map: Vec<usize>,
    default_index: usize,
}

impl MeasurementUnitary {
    pub fn new(unitary: Operator, outcome_map: Vec<usize>, default_index: usize) -> Result<Self> {
        let ss = unitary
            .layout()
            .registers()
            .last()
            .ok_or_else(|| Error::InvalidConfig("empty layout".into()))?;
        if ss.kind != RegisterKind::Stinespring {
            return Err(Error::InvalidConfig("last register must be the pointer register".into()));
        }
        if outcome_map.len() != ss.dim {
            return Err(Error::DimMismatch(format!(
                "outcome map covers {} of {} pointer states",
                outcome_map.len(),
                ss.dim
            )));
        }
        if default_index >= ss.dim {
            return Err(Error::InvalidConfig("default index out of range".into()));
        }
        Ok(MeasurementUnitary { unitary, outcome_map, default_index })
    }

    pub fn unitary(&self) -> &Operator {
        &self.unitary
    }

    pub fn outcome_map(&self) -> &[usize] {
        &self.outcome_map
    }

    pub fn default_index(&self) -> usize {
        self.default_index
    }

    pub fn layout(&self) -> &RegisterLayout {
        self.unitary.layout()
    }

    pub fn ss_label(&self) -> &str {
        &self.layout().registers().last().unwrap().label
    }

    pub fn ss_dim(&self) -> usize {
        self.layout().registers().last().unwrap().dim
    }

    pub fn n_outcomes(&self) -> usize {
        self.outcome_map.iter().copied().max().unwrap_or(0) + 1
    }

    pub fn physical_labels(&self) -> Vec<&str> {
        let regs = self.layout().registers();
        regs[..regs.len() - 1].iter().map(|r| r.label.as_str()).collect()
    }

    pub fn physical_layout(&self) -> RegisterLayout {
        self.layout().sublayout(&self.physical_labels()).expect("physical sublayout")
    }

    /// Projector onto the pointer states binned to outcome m, on the pointer
    /// register alone.
    pub fn outcome_projector(&self, m: usize) -> Operator {
        let ss = self.layout().registers().last().unwrap();
        let layout = RegisterLayout::single(&ss.label, ss.dim, RegisterKind::Stinespring);
        let mut e = CMatrix::zeros(ss.dim, ss.dim);
        for (i, &out) in self.outcome_map.iter().enumerate() {
            if out == m {
                e[(i, i)] = cr(1.0);
            }
        }
        Operator::new(layout, e).expect("projector dims")
    }

    /// Reads Kraus operators back as K_k = <k|_ss U |default>_ss.
    pub fn extract_kraus(&self, pol: &NumericPolicy) -> Result<KrausSet> {
        let phys = self.physical_layout();
        let d = phys.total_dim();
        let k_dim = self.ss_dim();
        let mut ops = Vec::with_capacity(k_dim);
        for k in 0..k_dim {
            let mut e = CMatrix::zeros(d, d);
            for i in 0..d {
                for j in 0..d {
                    e[(i, j)] = self.unitary.entries()[(i * k_dim + k, j * k_dim + self.default_index)];
                }
            }
            ops.push(Operator::new(phys.clone(), e)?);
        }
        KrausSet::new(ops, pol)
    }
}

fn fresh_ss_label(layout: &RegisterLayout) -> String {
    if layout.position("ss").is_err() {
        return "ss".to_string();
    }
    let mut i = 0usize;
    loop {
        let cand = format!("ss{}", i);
        if layout.position(&cand).is_err() {
            return cand;
        }
        i += 1;
    }
}

/// U = sum_m P_m (x) S^m with a K-level pointer register appended after the
/// system registers; the outcome map is the identity binning.
pub fn measurement_unitary(sd: &SpectralDecomposition) -> Result<MeasurementUnitary> {
    let label = fresh_ss_label(sd.layout());
    measurement_unitary_with_label(sd, &label)
}

pub fn measurement_unitary_with_label(
    sd: &SpectralDecomposition,
    ss_label: &str,
) -> Result<MeasurementUnitary> {
    let k_dim = sd.n_outcomes();
    let phys = sd.layout().clone();
    let d = phys.total_dim();
    if k_dim == 1 {
        // single outcome: the pointer register is one-dimensional and inert
        let layout =
            phys.concat(&RegisterLayout::single(ss_label, 1, RegisterKind::Stinespring))?;
        let u = Operator::identity(layout);
        return MeasurementUnitary::new(u, vec![0], 0);
    }
    let layout = phys.concat(&RegisterLayout::single(ss_label, k_dim, RegisterKind::Stinespring))?;
    let mut e = CMatrix::zeros(d * k_dim, d * k_dim);
    for (m, proj) in sd.projectors().iter().enumerate() {
        // row (i, a), col (j, b): P_m[i,j] * S^m[a,b] with S^m[a,b] = [a = b+m mod K]
        for i in 0..d {
            for j in 0..d {
                let pij = proj.entries()[(i, j)];
                if pij == c(0.0, 0.0) {
                    continue;
                }
                for b in 0..k_dim {
                    let a = (b + m) % k_dim;
                    e[(i * k_dim + a, j * k_dim + b)] += pij;
                }
            }
        }
    }
    let u = Operator::new(layout, e)?;
    MeasurementUnitary::new(u, (0..k_dim).collect(), 0)
}

/// Traceless involutory part of a nondegenerate 2x2 hermitian observable:
/// Obar = sum_nu tr(O sigma_nu) sigma_nu / (l_max - l_min), which squares to I
/// and shares the observable's eigenvectors.
pub fn qubit_observable_involution(obs: &Operator, pol: &NumericPolicy) -> Result<Operator> {
    if obs.dim() != 2 {
        return Err(Error::DimMismatch("involutory part needs a 2-dim observable".into()));
    }
    obs.assert_hermitian(pol)?;
    let herm = (obs.entries() + obs.entries().adjoint()) * cr(0.5);
    let eig = herm.clone().symmetric_eigen();
    let (l0, l1) = (eig.eigenvalues[0], eig.eigenvalues[1]);
    let gap = (l0 - l1).abs();
    if gap <= pol.degeneracy_rel * l0.abs().max(l1.abs()).max(1.0) {
        return Err(Error::Degenerate);
    }
    let pauli = [
        CMatrix::from_row_slice(2, 2, &[c(0.0, 0.0), c(1.0, 0.0), c(1.0, 0.0), c(0.0, 0.0)]),
        CMatrix::from_row_slice(2, 2, &[c(0.0, 0.0), c(0.0, -1.0), c(0.0, 1.0), c(0.0, 0.0)]),
        CMatrix::from_row_slice(2, 2, &[c(1.0, 0.0), c(0.0, 0.0), c(0.0, 0.0), c(-1.0, 0.0)]),
    ];
    let mut out = CMatrix::zeros(2, 2);
    for s in &pauli {
        let coeff = (&herm * s).trace();
        out += s * coeff;
    }
    out /= cr(gap);
    Operator::new(obs.layout().clone(), out)
}

/// K_m = P_m: the Kraus set of a projective measurement, always a channel.
pub fn kraus_from_observable(sd: &SpectralDecomposition, pol: &NumericPolicy) -> Result<KrausSet> {
    KrausSet::new(sd.projectors().to_vec(), pol)
}

/// Builds the dilated unitary with columns U(|j> (x) |default>) = sum_k (K_k|j>) (x) |k>,
/// completing the remaining columns deterministically by Gram-Schmidt over the
/// canonical basis. Errors on incomplete (operation-classified) sets.
pub fn unitary_from_kraus(ks: &KrausSet, default_index: usize) -> Result<MeasurementUnitary> {
    if ks.classification() != KrausClass::Channel {
        return Err(Error::IncompleteKraus(ks.completeness_residual()));
    }
    let k_dim = ks.len();
    let phys = ks.operators()[0].layout().clone();
    let d = phys.total_dim();
    if default_index >= k_dim {
        return Err(Error::InvalidConfig("default index out of range".into()));
    }
    let label = fresh_ss_label(&phys);
    let layout =
        phys.concat(&RegisterLayout::single(&label, k_dim, RegisterKind::Stinespring))?;
    let big = d * k_dim;
    let mut u = CMatrix::zeros(big, big);
    let mut filled = vec![false; big];
    for j in 0..d {
        let col = j * k_dim + default_index;
        for (k, kraus) in ks.operators().iter().enumerate() {
            for i in 0..d {
                u[(i * k_dim + k, col)] = kraus.entries()[(i, j)];
            }
        }
        filled[col] = true;
    }
    complete_columns(&mut u, &mut filled)?;
    let op = Operator::new(layout, u)?;
    MeasurementUnitary::new(op, (0..k_dim).collect(), default_index)
}

/// Deterministic orthonormal completion: canonical basis vectors are taken in
/// order, orthogonalized twice against all existing columns, and assigned to
/// the unfilled columns left to right.
fn complete_columns(u: &mut CMatrix, filled: &mut [bool]) -> Result<()> {
    let big = u.nrows();
    let mut have: Vec<usize> = (0..big).filter(|&i| filled[i]).collect();
    let mut next_candidate = 0usize;
    for col in 0..big {
        if filled[col] {
            continue;
        }
        let mut found = false;
        while next_candidate < big {
            let mut v = nalgebra::DVector::<C64>::zeros(big);
            v[next_candidate] = cr(1.0);
            next_candidate += 1;
            for _pass in 0..2 {
                for &h in &have {
                    let colh = u.column(h);
                    let ov = colh.dotc(&v);
                    v.axpy(-ov, &colh, cr(1.0));
                }
            }
            let n = v.norm();
            if n > 1e-6 {
                v /= cr(n);
                u.set_column(col, &v);
                filled[col] = true;
                have.push(col);
                found = true;
                break;
            }
        }
        if !found {
            return Err(Error::NumericalGuard(
                "could not complete isometry columns to a unitary".into(),
            ));
        }
    }
    Ok(())
}

/// rho_av = tr_ss(U (rho (x) |i><i|) U^dag) = sum_m P_m rho P_m.
pub fn apply_channel(mu: &MeasurementUnitary, rho: &DensityMatrix) -> Result<DensityMatrix> {
    let phys = mu.physical_layout();
    if rho.layout() != &phys {
        return Err(Error::DimMismatch("state layout differs from measurement layout".into()));
    }
    let ss = mu.layout().registers().last().unwrap();
    let ss_layout = RegisterLayout::single(&ss.label, ss.dim, RegisterKind::Stinespring);
    let default = Ket::from_flat(ss_layout, mu.default_index())?.to_density();
    let dilated = rho.tensor(&default)?;
    let evolved = mu.unitary().conjugate_density(&dilated)?;
    partial_trace(&evolved, &mu.physical_labels())
}

/// Selective outcome m: p = tr(U rho_dil U^dag (I (x) P_m)); the collapsed,
/// renormalized state is returned unless p falls below the zero threshold.
pub fn apply_selective(
    mu: &MeasurementUnitary,
    rho: &DensityMatrix,
    m: usize,
    pol: &NumericPolicy,
) -> Result<(f64, Option<DensityMatrix>)> {
    if m >= mu.n_outcomes() {
        return Err(Error::InvalidConfig(format!(
            "outcome {} out of range ({} outcomes)",
            m,
            mu.n_outcomes()
        )));
    }
    let phys = mu.physical_layout();
    if rho.layout() != &phys {
        return Err(Error::DimMismatch("state layout differs from measurement layout".into()));
    }
    let ss = mu.layout().registers().last().unwrap();
    let ss_layout = RegisterLayout::single(&ss.label, ss.dim, RegisterKind::Stinespring);
    let default = Ket::from_flat(ss_layout, mu.default_index())?.to_density();
    let dilated = rho.tensor(&default)?;
    let evolved = mu.unitary().conjugate_density(&dilated)?;
    let proj = embed(&mu.outcome_projector(m), &[mu.ss_label()], mu.layout())?;
    let projected = proj.conjugate_density(&evolved)?;
    let p = projected.trace().re;
    if p <= pol.p_zero {
        return Ok((p.max(0.0), None));
    }
    let reduced = partial_trace(&projected, &mu.physical_labels())?;
    Ok((p, Some(reduced.scaled(1.0 / p))))
}

/// Destructive bosonic counter on a Fock truncation of dimension cutoff + 1:
/// |n> (x) |0> -> |0> (x) |n>, completed deterministically to a unitary.
pub fn destructive_number_unitary(cutoff: usize) -> Result<MeasurementUnitary> {
    if cutoff < 1 {
        return Err(Error::InvalidConfig("cutoff must be at least 1".into()));
    }
    let d = cutoff + 1;
    let layout = RegisterLayout::new(vec![
        Register::physical("mode", d),
        Register::stinespring("ss", d),
    ])?;
    let big = d * d;
    let mut u = CMatrix::zeros(big, big);
    let mut filled = vec![false; big];
    for n in 0..d {
        // column |n>|0>, image |0>|n>
        u[(n, n * d)] = cr(1.0);
        filled[n * d] = true;
    }
    complete_columns(&mut u, &mut filled)?;
    let op = Operator::new(layout, u)?;
    MeasurementUnitary::new(op, (0..d).collect(), 0)
}

/// Gaussian pointer wave packet centered at x0 with width sigma, sampled on a
/// uniform grid and renormalized by trapezoid quadrature.
#[derive(Debug, Clone, Copy)]
pub struct GaussianPointer {
    pub x0: f64,
    pub sigma: f64,
    pub grid: Grid1D,
}

/// Dilated system (x) pointer wavefunction sampled on the pointer grid.
/// Row j holds the pointer profile correlated with system basis state j.
#[derive(Debug, Clone)]
pub struct PointerState {
    pub physical_layout: RegisterLayout,
    pub grid: Grid1D,
    pub data: CMatrix,
}

impl PointerState {
    pub fn norm_sq(&self) -> f64 {
        let mut acc = 0.0;
        for col in 0..self.grid.n {
            let w = if col == 0 || col == self.grid.n - 1 { 0.5 } else { 1.0 };
            for row in 0..self.physical_layout.total_dim() {
                acc += w * self.data[(row, col)].norm_sqr();
            }
        }
        acc * self.grid.step
    }

    /// Position density of the pointer, traced over the system.
    pub fn pointer_marginal(&self) -> Vec<f64> {
        (0..self.grid.n)
            .map(|col| {
                (0..self.physical_layout.total_dim())
                    .map(|row| self.data[(row, col)].norm_sqr())
                    .sum()
            })
            .collect()
    }
}

/// Effective von Neumann pointer evolution: |psi> (x) phi_0 evolves to
/// sum_m (P_m |psi>) (x) phi_0(x - coupling * t * lambda_m), each branch
/// Gaussian sampled on the grid and renormalized by trapezoid quadrature.
pub fn pointer_evolve(
    sd: &SpectralDecomposition,
    packet: &GaussianPointer,
    coupling: f64,
    t: f64,
    psi: &Ket,
    pol: &NumericPolicy,
) -> Result<PointerState> {
    if psi.layout() != sd.layout() {
        return Err(Error::DimMismatch("state layout differs from observable layout".into()));
    }
    if packet.sigma <= 0.0 {
        return Err(Error::InvalidConfig("pointer width must be positive".into()));
    }
    let grid = packet.grid;
    let margin = 5.0 * packet.sigma;
    for lam in sd.eigenvalues() {
        let center = packet.x0 + coupling * t * lam;
        if center < grid.min + margin || center > grid.max() - margin {
            return Err(Error::NumericalGuard(format!(
                "pointer packet centered at {:.6} leaves the grid [{:.6}, {:.6}] (margin {:.3})",
                center,
                grid.min,
                grid.max(),
                margin
            )));
        }
    }
    let d = psi.layout().total_dim();
    let mut data = CMatrix::zeros(d, grid.n);
    let prefactor = (2.0 * std::f64::consts::PI * packet.sigma * packet.sigma).powf(-0.25);
    for (m, proj) in sd.projectors().iter().enumerate() {
        let branch = proj.apply(psi)?;
        let center = packet.x0 + coupling * t * sd.eigenvalues()[m];
        let mut phi: Vec<C64> = grid
            .points()
            .map(|x| {
                let arg = (x - center) / (2.0 * packet.sigma);
                cr(prefactor * (-arg * arg).exp())
            })
            .collect();
        let raw = grid.norm_sq(&phi);
        if (raw - 1.0).abs() > 1e-4 {
            return Err(Error::NumericalGuard(format!(
                "pointer packet badly represented on grid (quadrature norm {:.6})",
                raw
            )));
        }
        let scale = cr(1.0 / raw.sqrt());
        for p in phi.iter_mut() {
            *p *= scale;
        }
        for j in 0..d {
            let amp = branch.amplitude(j);
            if amp != c(0.0, 0.0) {
                for (col, p) in phi.iter().enumerate() {
                    data[(j, col)] += amp * p;
                }
            }
        }
    }
    let state = PointerState { physical_layout: psi.layout().clone(), grid, data };
    let norm = state.norm_sq();
    if (norm - 1.0).abs() > pol.grid_norm {
        return Err(Error::NumericalGuard(format!(
            "pointer state norm {:.10} deviates from one beyond tolerance",
            norm
        )));
    }
    Ok(state)
}

/// Convenience: standard Pauli matrices on a fresh single-qubit layout.
pub fn pauli(label: &str, which: char) -> Result<Operator> {
    let layout = RegisterLayout::single(label, 2, RegisterKind::Physical);
    let e = match which {
        'x' | 'X' => CMatrix::from_row_slice(2, 2, &[c(0.0, 0.0), c(1.0, 0.0), c(1.0, 0.0), c(0.0, 0.0)]),
        'y' | 'Y' => CMatrix::from_row_slice(2, 2, &[c(0.0, 0.0), c(0.0, -1.0), c(0.0, 1.0), c(0.0, 0.0)]),
        'z' | 'Z' => CMatrix::from_row_slice(2, 2, &[c(1.0, 0.0), c(0.0, 0.0), c(0.0, 0.0), c(-1.0, 0.0)]),
        'i' | 'I' => CMatrix::identity(2, 2),
        _ => return Err(Error::InvalidConfig(format!("unknown pauli `{}`", which))),
    };
    Operator::new(layout, e)
}

/// Bit observable in the given basis: eigenvalue 0 on the first basis vector,
/// 1 on the second, so outcome indices coincide with basis labels.
/// `basis` is 'z' (computational) or 'x' (Hadamard).
pub fn bit_observable(label: &str, basis: char) -> Result<Operator> {
    let layout = RegisterLayout::single(label, 2, RegisterKind::Physical);
    let half = cr(0.5);
    let e = match basis {
        'z' | 'Z' => CMatrix::from_row_slice(2, 2, &[c(0.0, 0.0), c(0.0, 0.0), c(0.0, 0.0), c(1.0, 0.0)]),
        'x' | 'X' => {
            // (I - X)/2: eigenvalue 0 on |+>, 1 on |->
            CMatrix::from_row_slice(2, 2, &[c(1.0, 0.0), c(-1.0, 0.0), c(-1.0, 0.0), c(1.0, 0.0)])
                * half
        }
        _ => return Err(Error::InvalidConfig(format!("unknown basis `{}`", basis))),
    };
    Operator::new(layout, e)
}

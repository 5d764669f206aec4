//! Registers, states, and operators on finite-dimensional tensor-product spaces.
//!
//! Everything is dense complex linear algebra over a [`RegisterLayout`]. The
//! layout fixes the canonical tensor order; the first register is the most
//! significant index, matching Kronecker-product conventions.

use std::sync::OnceLock;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::policy::NumericPolicy;

pub type C64 = Complex64;
pub type CMatrix = DMatrix<C64>;
pub type CVector = DVector<C64>;

pub fn c(re: f64, im: f64) -> C64 {
    C64::new(re, im)
}

pub fn cr(re: f64) -> C64 {
    C64::new(re, 0.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RegisterKind {
    Physical,
    Stinespring,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Register {
    pub label: String,
    pub dim: usize,
    pub kind: RegisterKind,
}

impl Register {
    pub fn physical(label: &str, dim: usize) -> Self {
        Register { label: label.to_string(), dim, kind: RegisterKind::Physical }
    }

    pub fn stinespring(label: &str, dim: usize) -> Self {
        Register { label: label.to_string(), dim, kind: RegisterKind::Stinespring }
    }
}

/// Ordered list of named registers; the tensor order is the list order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RegisterLayout {
    registers: Vec<Register>,
    strides: Vec<usize>,
    total_dim: usize,
}

impl RegisterLayout {
    pub fn new(registers: Vec<Register>) -> Result<Self> {
        for (i, r) in registers.iter().enumerate() {
            if r.dim == 0 {
                return Err(Error::DimMismatch(format!("register `{}` has dim 0", r.label)));
            }
            if registers[..i].iter().any(|p| p.label == r.label) {
                return Err(Error::LabelCollision(r.label.clone()));
            }
        }
        let mut strides = vec![1usize; registers.len()];
        for i in (0..registers.len().saturating_sub(1)).rev() {
            strides[i] = strides[i + 1] * registers[i + 1].dim;
        }
        let total_dim = registers.iter().map(|r| r.dim).product::<usize>().max(1);
        Ok(RegisterLayout { registers, strides, total_dim })
    }

    pub fn single(label: &str, dim: usize, kind: RegisterKind) -> Self {
        Self::new(vec![Register { label: label.to_string(), dim, kind }]).expect("single register")
    }

    pub fn registers(&self) -> &[Register] {
        &self.registers
    }

    pub fn total_dim(&self) -> usize {
        self.total_dim
    }

    pub fn len(&self) -> usize {
        self.registers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.registers.is_empty()
    }

    pub fn position(&self, label: &str) -> Result<usize> {
        self.registers
            .iter()
            .position(|r| r.label == label)
            .ok_or_else(|| Error::UnknownLabel(label.to_string()))
    }

    pub fn stride(&self, pos: usize) -> usize {
        self.strides[pos]
    }

    pub fn dim_of(&self, label: &str) -> Result<usize> {
        Ok(self.registers[self.position(label)?].dim)
    }

    pub fn labels(&self) -> Vec<&str> {
        self.registers.iter().map(|r| r.label.as_str()).collect()
    }

    pub fn labels_of_kind(&self, kind: RegisterKind) -> Vec<&str> {
        self.registers.iter().filter(|r| r.kind == kind).map(|r| r.label.as_str()).collect()
    }

    pub fn concat(&self, other: &Self) -> Result<Self> {
        let mut regs = self.registers.clone();
        regs.extend(other.registers.iter().cloned());
        Self::new(regs)
    }

    /// Sub-layout of the named registers, in original order.
    pub fn sublayout(&self, keep: &[&str]) -> Result<Self> {
        for k in keep {
            self.position(k)?;
        }
        let regs = self
            .registers
            .iter()
            .filter(|r| keep.contains(&r.label.as_str()))
            .cloned()
            .collect();
        Self::new(regs)
    }

    /// Flat index of a full multi-index (one entry per register).
    pub fn compose(&self, indices: &[usize]) -> usize {
        debug_assert_eq!(indices.len(), self.registers.len());
        indices.iter().zip(&self.strides).map(|(i, s)| i * s).sum()
    }

    /// Multi-index of a flat index.
    pub fn decompose(&self, flat: usize) -> Vec<usize> {
        let mut out = vec![0usize; self.registers.len()];
        let mut rem = flat;
        for (k, r) in self.registers.iter().enumerate() {
            out[k] = rem / self.strides[k];
            rem %= self.strides[k];
            debug_assert!(out[k] < r.dim);
        }
        out
    }

    /// Index of one register inside a flat index.
    pub fn component(&self, flat: usize, pos: usize) -> usize {
        (flat / self.strides[pos]) % self.registers[pos].dim
    }

    /// Returns a copy with register labels replaced (same dims and kinds).
    pub fn relabeled(&self, labels: &[&str]) -> Result<Self> {
        if labels.len() != self.registers.len() {
            return Err(Error::DimMismatch(format!(
                "relabel expects {} labels, got {}",
                self.registers.len(),
                labels.len()
            )));
        }
        let regs = self
            .registers
            .iter()
            .zip(labels)
            .map(|(r, l)| Register { label: l.to_string(), dim: r.dim, kind: r.kind })
            .collect();
        Self::new(regs)
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct StateJson {
    layout: Vec<Register>,
    re: Vec<f64>,
    im: Vec<f64>,
}

fn pack_json(layout: &RegisterLayout, data: &[C64]) -> StateJson {
    StateJson {
        layout: layout.registers().to_vec(),
        re: data.iter().map(|z| z.re).collect(),
        im: data.iter().map(|z| z.im).collect(),
    }
}

fn unpack_json(j: &StateJson, expect_square: bool) -> Result<(RegisterLayout, Vec<C64>)> {
    let layout = RegisterLayout::new(j.layout.clone())?;
    if j.re.len() != j.im.len() {
        return Err(Error::Serialization("re/im length mismatch".into()));
    }
    let d = layout.total_dim();
    let want = if expect_square { d * d } else { d };
    if j.re.len() != want {
        return Err(Error::Serialization(format!(
            "expected {} entries for layout dim {}, got {}",
            want,
            d,
            j.re.len()
        )));
    }
    let data = j.re.iter().zip(&j.im).map(|(&re, &im)| C64::new(re, im)).collect();
    Ok((layout, data))
}

/// Pure state: complex amplitude vector over a layout.
#[derive(Debug, Clone)]
pub struct Ket {
    layout: RegisterLayout,
    amplitudes: CVector,
}

impl Ket {
    pub fn new(layout: RegisterLayout, amplitudes: CVector) -> Result<Self> {
        if amplitudes.len() != layout.total_dim() {
            return Err(Error::DimMismatch(format!(
                "ket has {} amplitudes for layout dim {}",
                amplitudes.len(),
                layout.total_dim()
            )));
        }
        Ok(Ket { layout, amplitudes })
    }

    /// Computational basis state |i_0 i_1 ...> given per-register indices.
    pub fn basis_state(layout: RegisterLayout, indices: &[usize]) -> Result<Self> {
        if indices.len() != layout.len() {
            return Err(Error::DimMismatch(format!(
                "{} indices for {} registers",
                indices.len(),
                layout.len()
            )));
        }
        for (i, r) in indices.iter().zip(layout.registers()) {
            if *i >= r.dim {
                return Err(Error::DimMismatch(format!(
                    "index {} out of range for register `{}` (dim {})",
                    i, r.label, r.dim
                )));
            }
        }
        let flat = layout.compose(indices);
        let mut amp = CVector::zeros(layout.total_dim());
        amp[flat] = cr(1.0);
        Ok(Ket { layout, amplitudes: amp })
    }

    pub fn from_flat(layout: RegisterLayout, flat: usize) -> Result<Self> {
        if flat >= layout.total_dim() {
            return Err(Error::DimMismatch(format!(
                "flat index {} out of range {}",
                flat,
                layout.total_dim()
            )));
        }
        let mut amp = CVector::zeros(layout.total_dim());
        amp[flat] = cr(1.0);
        Ok(Ket { layout, amplitudes: amp })
    }

    pub fn layout(&self) -> &RegisterLayout {
        &self.layout
    }

    pub fn amplitudes(&self) -> &CVector {
        &self.amplitudes
    }

    pub fn amplitude(&self, flat: usize) -> C64 {
        self.amplitudes[flat]
    }

    pub fn norm(&self) -> f64 {
        self.amplitudes.norm()
    }

    pub fn normalized(&self) -> Result<Self> {
        let n = self.norm();
        if n == 0.0 {
            return Err(Error::NumericalGuard("cannot normalize zero vector".into()));
        }
        Ok(Ket { layout: self.layout.clone(), amplitudes: &self.amplitudes / cr(n) })
    }

    pub fn inner(&self, other: &Ket) -> C64 {
        self.amplitudes.dotc(&other.amplitudes)
    }

    pub fn tensor(&self, other: &Ket) -> Result<Ket> {
        let layout = self.layout.concat(&other.layout)?;
        Ok(Ket { layout, amplitudes: self.amplitudes.kronecker(&other.amplitudes) })
    }

    pub fn to_density(&self) -> DensityMatrix {
        let m = &self.amplitudes * self.amplitudes.adjoint();
        DensityMatrix { layout: self.layout.clone(), entries: m }
    }

    pub fn scaled(&self, s: C64) -> Ket {
        Ket { layout: self.layout.clone(), amplitudes: &self.amplitudes * s }
    }

    pub fn relabeled(&self, labels: &[&str]) -> Result<Ket> {
        Ok(Ket { layout: self.layout.relabeled(labels)?, amplitudes: self.amplitudes.clone() })
    }
}

impl Serialize for Ket {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        pack_json(&self.layout, self.amplitudes.as_slice()).serialize(s)
    }
}

impl<'de> Deserialize<'de> for Ket {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let j = StateJson::deserialize(d)?;
        let (layout, data) =
            unpack_json(&j, false).map_err(|e| serde::de::Error::custom(e.to_string()))?;
        Ok(Ket { layout, amplitudes: CVector::from_vec(data) })
    }
}

/// Mixed state: complex square matrix over a layout.
///
/// Selective-operation outputs may carry trace below one; `validate` takes the
/// expected trace so both cases are checkable.
#[derive(Debug, Clone)]
pub struct DensityMatrix {
    layout: RegisterLayout,
    entries: CMatrix,
}

impl DensityMatrix {
    pub fn new(layout: RegisterLayout, entries: CMatrix) -> Result<Self> {
        let d = layout.total_dim();
        if entries.nrows() != d || entries.ncols() != d {
            return Err(Error::DimMismatch(format!(
                "density matrix is {}x{} for layout dim {}",
                entries.nrows(),
                entries.ncols(),
                d
            )));
        }
        Ok(DensityMatrix { layout, entries })
    }

    pub fn layout(&self) -> &RegisterLayout {
        &self.layout
    }

    pub fn entries(&self) -> &CMatrix {
        &self.entries
    }

    pub fn trace(&self) -> C64 {
        self.entries.trace()
    }

    pub fn scaled(&self, s: f64) -> DensityMatrix {
        DensityMatrix { layout: self.layout.clone(), entries: &self.entries * cr(s) }
    }

    /// Checks hermiticity, the PSD eigenvalue floor, and trace = expected.
    pub fn validate(&self, expected_trace: f64, pol: &NumericPolicy) -> Result<()> {
        let herm_dev = (&self.entries - self.entries.adjoint()).camax();
        if herm_dev > pol.structural {
            return Err(Error::InvariantViolation(format!(
                "density matrix not hermitian: {:.3e}",
                herm_dev
            )));
        }
        let tr = self.trace();
        if (tr.re - expected_trace).abs() > pol.structural || tr.im.abs() > pol.structural {
            return Err(Error::InvariantViolation(format!(
                "trace {} differs from expected {}",
                tr, expected_trace
            )));
        }
        let herm = (&self.entries + self.entries.adjoint()) * cr(0.5);
        let eigs = herm.symmetric_eigen().eigenvalues;
        let min = eigs.iter().cloned().fold(f64::INFINITY, f64::min);
        if min < -pol.psd {
            return Err(Error::InvariantViolation(format!(
                "negative eigenvalue {:.3e}",
                min
            )));
        }
        Ok(())
    }

    pub fn min_eigenvalue(&self) -> f64 {
        let herm = (&self.entries + self.entries.adjoint()) * cr(0.5);
        herm.symmetric_eigen().eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min)
    }

    pub fn tensor(&self, other: &DensityMatrix) -> Result<DensityMatrix> {
        let layout = self.layout.concat(&other.layout)?;
        Ok(DensityMatrix { layout, entries: self.entries.kronecker(&other.entries) })
    }

    pub fn relabeled(&self, labels: &[&str]) -> Result<DensityMatrix> {
        Ok(DensityMatrix { layout: self.layout.relabeled(labels)?, entries: self.entries.clone() })
    }
}

impl Serialize for DensityMatrix {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        // row-major per the interchange format; nalgebra stores column-major
        let d = self.layout.total_dim();
        let mut data = Vec::with_capacity(d * d);
        for i in 0..d {
            for j in 0..d {
                data.push(self.entries[(i, j)]);
            }
        }
        pack_json(&self.layout, &data).serialize(s)
    }
}

impl<'de> Deserialize<'de> for DensityMatrix {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let j = StateJson::deserialize(d)?;
        let (layout, data) =
            unpack_json(&j, true).map_err(|e| serde::de::Error::custom(e.to_string()))?;
        let d0 = layout.total_dim();
        // serialized row-major; nalgebra stores column-major
        let entries = CMatrix::from_row_iterator(d0, d0, data);
        Ok(DensityMatrix { layout, entries })
    }
}

#[derive(Debug, Default)]
struct Tags {
    unitary: OnceLock<bool>,
    hermitian: OnceLock<bool>,
    projector: OnceLock<bool>,
}

impl Clone for Tags {
    fn clone(&self) -> Self {
        let t = Tags::default();
        if let Some(v) = self.unitary.get() {
            let _ = t.unitary.set(*v);
        }
        if let Some(v) = self.hermitian.get() {
            let _ = t.hermitian.set(*v);
        }
        if let Some(v) = self.projector.get() {
            let _ = t.projector.set(*v);
        }
        t
    }
}

/// Square operator over a layout with lazily verified structure tags.
#[derive(Debug, Clone)]
pub struct Operator {
    layout: RegisterLayout,
    entries: CMatrix,
    tags: Tags,
}

impl Operator {
    pub fn new(layout: RegisterLayout, entries: CMatrix) -> Result<Self> {
        let d = layout.total_dim();
        if entries.nrows() != d || entries.ncols() != d {
            return Err(Error::DimMismatch(format!(
                "operator is {}x{} for layout dim {}",
                entries.nrows(),
                entries.ncols(),
                d
            )));
        }
        Ok(Operator { layout, entries, tags: Tags::default() })
    }

    pub fn identity(layout: RegisterLayout) -> Self {
        let d = layout.total_dim();
        Operator { layout, entries: CMatrix::identity(d, d), tags: Tags::default() }
    }

    pub fn zeros(layout: RegisterLayout) -> Self {
        let d = layout.total_dim();
        Operator { layout, entries: CMatrix::zeros(d, d), tags: Tags::default() }
    }

    pub fn from_fn(layout: RegisterLayout, f: impl Fn(usize, usize) -> C64) -> Self {
        let d = layout.total_dim();
        Operator { layout, entries: CMatrix::from_fn(d, d, f), tags: Tags::default() }
    }

    pub fn layout(&self) -> &RegisterLayout {
        &self.layout
    }

    pub fn entries(&self) -> &CMatrix {
        &self.entries
    }

    pub fn dim(&self) -> usize {
        self.layout.total_dim()
    }

    /// Max-norm unitarity deviation, computed once and cached.
    pub fn is_unitary(&self, pol: &NumericPolicy) -> bool {
        *self.tags.unitary.get_or_init(|| {
            let d = self.dim();
            let dev = (self.entries.adjoint() * &self.entries - CMatrix::identity(d, d)).camax();
            dev < pol.structural
        })
    }

    pub fn is_hermitian(&self, pol: &NumericPolicy) -> bool {
        *self
            .tags
            .hermitian
            .get_or_init(|| (&self.entries - self.entries.adjoint()).camax() < pol.structural)
    }

    /// P is a projector when P^2 = P = P^dagger within tolerance.
    pub fn is_projector(&self, pol: &NumericPolicy) -> bool {
        *self.tags.projector.get_or_init(|| {
            if (&self.entries - self.entries.adjoint()).camax() >= pol.structural {
                return false;
            }
            (&self.entries * &self.entries - &self.entries).camax() < pol.structural
        })
    }

    pub fn assert_unitary(&self, pol: &NumericPolicy) -> Result<()> {
        if self.is_unitary(pol) {
            Ok(())
        } else {
            let d = self.dim();
            let dev = (self.entries.adjoint() * &self.entries - CMatrix::identity(d, d)).camax();
            Err(Error::InvariantViolation(format!("not unitary: {:.3e}", dev)))
        }
    }

    pub fn assert_hermitian(&self, pol: &NumericPolicy) -> Result<()> {
        if self.is_hermitian(pol) {
            Ok(())
        } else {
            Err(Error::NonHermitian((&self.entries - self.entries.adjoint()).camax()))
        }
    }

    pub fn dagger(&self) -> Operator {
        Operator {
            layout: self.layout.clone(),
            entries: self.entries.adjoint(),
            tags: Tags::default(),
        }
    }

    pub fn mul(&self, other: &Operator) -> Result<Operator> {
        if self.layout != other.layout {
            return Err(Error::DimMismatch("operator product across different layouts".into()));
        }
        Ok(Operator {
            layout: self.layout.clone(),
            entries: &self.entries * &other.entries,
            tags: Tags::default(),
        })
    }

    pub fn add(&self, other: &Operator) -> Result<Operator> {
        if self.layout != other.layout {
            return Err(Error::DimMismatch("operator sum across different layouts".into()));
        }
        Ok(Operator {
            layout: self.layout.clone(),
            entries: &self.entries + &other.entries,
            tags: Tags::default(),
        })
    }

    pub fn sub(&self, other: &Operator) -> Result<Operator> {
        if self.layout != other.layout {
            return Err(Error::DimMismatch("operator difference across different layouts".into()));
        }
        Ok(Operator {
            layout: self.layout.clone(),
            entries: &self.entries - &other.entries,
            tags: Tags::default(),
        })
    }

    pub fn scaled(&self, s: C64) -> Operator {
        Operator { layout: self.layout.clone(), entries: &self.entries * s, tags: Tags::default() }
    }

    pub fn tensor(&self, other: &Operator) -> Result<Operator> {
        let layout = self.layout.concat(&other.layout)?;
        Ok(Operator { layout, entries: self.entries.kronecker(&other.entries), tags: Tags::default() })
    }

    pub fn apply(&self, psi: &Ket) -> Result<Ket> {
        if self.layout != psi.layout {
            return Err(Error::DimMismatch("operator applied across different layouts".into()));
        }
        Ok(Ket { layout: psi.layout.clone(), amplitudes: &self.entries * &psi.amplitudes })
    }

    /// U rho U^dagger.
    pub fn conjugate_density(&self, rho: &DensityMatrix) -> Result<DensityMatrix> {
        if self.layout != rho.layout {
            return Err(Error::DimMismatch("operator applied across different layouts".into()));
        }
        Ok(DensityMatrix {
            layout: rho.layout.clone(),
            entries: &self.entries * &rho.entries * self.entries.adjoint(),
        })
    }

    pub fn max_norm(&self) -> f64 {
        self.entries.camax()
    }

    pub fn fro_norm(&self) -> f64 {
        self.entries.norm()
    }

    pub fn trace(&self) -> C64 {
        self.entries.trace()
    }

    pub fn relabeled(&self, labels: &[&str]) -> Result<Operator> {
        Ok(Operator {
            layout: self.layout.relabeled(labels)?,
            entries: self.entries.clone(),
            tags: self.tags.clone(),
        })
    }
}

impl Serialize for Operator {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        // row-major per the interchange format; nalgebra iterates column-major
        let d = self.dim();
        let mut data = Vec::with_capacity(d * d);
        for i in 0..d {
            for j in 0..d {
                data.push(self.entries[(i, j)]);
            }
        }
        pack_json(&self.layout, &data).serialize(s)
    }
}

impl<'de> Deserialize<'de> for Operator {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let j = StateJson::deserialize(d)?;
        let (layout, data) =
            unpack_json(&j, true).map_err(|e| serde::de::Error::custom(e.to_string()))?;
        let d0 = layout.total_dim();
        let entries = CMatrix::from_row_iterator(d0, d0, data);
        Ok(Operator { layout, entries, tags: Tags::default() })
    }
}

fn split_maps(
    layout: &RegisterLayout,
    keep_positions: &[usize],
) -> (Vec<usize>, Vec<usize>) {
    // flat = kept_offset[k] + traced_offset[t] over the two index groups
    let traced_positions: Vec<usize> =
        (0..layout.len()).filter(|p| !keep_positions.contains(p)).collect();
    let build = |positions: &[usize]| -> Vec<usize> {
        let total: usize = positions.iter().map(|&p| layout.registers()[p].dim).product();
        let mut offsets = Vec::with_capacity(total.max(1));
        let mut idx = vec![0usize; positions.len()];
        loop {
            let off: usize =
                positions.iter().zip(&idx).map(|(&p, &i)| i * layout.stride(p)).sum();
            offsets.push(off);
            let mut k = positions.len();
            loop {
                if k == 0 {
                    return offsets;
                }
                k -= 1;
                idx[k] += 1;
                if idx[k] < layout.registers()[positions[k]].dim {
                    break;
                }
                idx[k] = 0;
            }
        }
    };
    (build(keep_positions), build(&traced_positions))
}

/// Partial trace keeping the named registers (original order preserved).
pub fn partial_trace(rho: &DensityMatrix, keep: &[&str]) -> Result<DensityMatrix> {
    let layout = rho.layout();
    let mut keep_positions = Vec::with_capacity(keep.len());
    for k in keep {
        keep_positions.push(layout.position(k)?);
    }
    keep_positions.sort_unstable();
    keep_positions.dedup();
    let kept_labels: Vec<&str> =
        keep_positions.iter().map(|&p| layout.registers()[p].label.as_str()).collect();
    let out_layout = layout.sublayout(&kept_labels)?;
    let (kmap, tmap) = split_maps(layout, &keep_positions);
    let kd = out_layout.total_dim();
    let mut out = CMatrix::zeros(kd, kd);
    for (ki, &koff_i) in kmap.iter().enumerate() {
        for (kj, &koff_j) in kmap.iter().enumerate() {
            let mut acc = C64::new(0.0, 0.0);
            for &toff in &tmap {
                acc += rho.entries()[(koff_i + toff, koff_j + toff)];
            }
            out[(ki, kj)] = acc;
        }
    }
    DensityMatrix::new(out_layout, out)
}

/// Embeds `op` into `layout`, acting on the registers named by `target_labels`
/// (the k-th register of `op` lands on `target_labels[k]`) and as identity on
/// the rest.
pub fn embed(op: &Operator, target_labels: &[&str], layout: &RegisterLayout) -> Result<Operator> {
    if target_labels.len() != op.layout().len() {
        return Err(Error::DimMismatch(format!(
            "operator has {} registers but {} target labels given",
            op.layout().len(),
            target_labels.len()
        )));
    }
    let mut positions = Vec::with_capacity(target_labels.len());
    for (r, label) in op.layout().registers().iter().zip(target_labels) {
        let p = layout.position(label)?;
        if layout.registers()[p].dim != r.dim {
            return Err(Error::DimMismatch(format!(
                "operator register `{}` (dim {}) does not fit target `{}` (dim {})",
                r.label,
                r.dim,
                label,
                layout.registers()[p].dim
            )));
        }
        if positions.contains(&p) {
            return Err(Error::LabelCollision(label.to_string()));
        }
        positions.push(p);
    }

    // op flat index -> offset in the full layout
    let op_layout = op.layout();
    let dop = op_layout.total_dim();
    let mut emap = vec![0usize; dop];
    for a in 0..dop {
        let multi = op_layout.decompose(a);
        emap[a] = multi.iter().zip(&positions).map(|(&i, &p)| i * layout.stride(p)).sum();
    }
    let mut sorted_positions = positions.clone();
    sorted_positions.sort_unstable();
    let (_, omap) = split_maps(layout, &sorted_positions);

    let d = layout.total_dim();
    let mut out = CMatrix::zeros(d, d);
    for &ooff in &omap {
        for a in 0..dop {
            for b in 0..dop {
                let v = op.entries()[(a, b)];
                if v != C64::new(0.0, 0.0) {
                    out[(emap[a] + ooff, emap[b] + ooff)] = v;
                }
            }
        }
    }
    let result = Operator::new(layout.clone(), out)?;
    // identity factors preserve these structures
    if let Some(&u) = op.tags.unitary.get() {
        let _ = result.tags.unitary.set(u);
    }
    if let Some(&h) = op.tags.hermitian.get() {
        let _ = result.tags.hermitian.set(h);
    }
    Ok(result)
}

pub enum StateRef<'a> {
    Ket(&'a Ket),
    Density(&'a DensityMatrix),
}

impl<'a> From<&'a Ket> for StateRef<'a> {
    fn from(k: &'a Ket) -> Self {
        StateRef::Ket(k)
    }
}

impl<'a> From<&'a DensityMatrix> for StateRef<'a> {
    fn from(r: &'a DensityMatrix) -> Self {
        StateRef::Density(r)
    }
}

/// <O> = tr(O rho); errors on non-hermitian observables, checks the imaginary
/// residue against the structural tolerance.
pub fn expectation<'a>(
    obs: &Operator,
    state: impl Into<StateRef<'a>>,
    pol: &NumericPolicy,
) -> Result<f64> {
    obs.assert_hermitian(pol)?;
    let val = match state.into() {
        StateRef::Ket(psi) => {
            if psi.layout() != obs.layout() {
                return Err(Error::DimMismatch("observable/state layout mismatch".into()));
            }
            psi.amplitudes.dotc(&(obs.entries() * &psi.amplitudes))
        }
        StateRef::Density(rho) => {
            if rho.layout() != obs.layout() {
                return Err(Error::DimMismatch("observable/state layout mismatch".into()));
            }
            (obs.entries() * rho.entries()).trace()
        }
    };
    if val.im.abs() > pol.structural {
        return Err(Error::InvariantViolation(format!(
            "expectation has imaginary residue {:.3e}",
            val.im
        )));
    }
    Ok(val.re)
}

/// Trace distance (1/2)||a - b||_1 via singular values of the difference.
pub fn trace_distance(a: &DensityMatrix, b: &DensityMatrix) -> Result<f64> {
    if a.layout() != b.layout() {
        return Err(Error::DimMismatch("trace distance across different layouts".into()));
    }
    let diff = a.entries() - b.entries();
    let sv = diff.singular_values();
    Ok(0.5 * sv.iter().sum::<f64>())
}

/// Uniform 1D grid for pointer and wavepacket sampling.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Grid1D {
    pub min: f64,
    pub step: f64,
    pub n: usize,
}

impl Grid1D {
    pub fn new(min: f64, step: f64, n: usize) -> Result<Self> {
        if !(step > 0.0) || n < 2 {
            return Err(Error::InvalidConfig("grid needs step > 0 and n >= 2".into()));
        }
        Ok(Grid1D { min, step, n })
    }

    pub fn x(&self, i: usize) -> f64 {
        self.min + self.step * i as f64
    }

    pub fn max(&self) -> f64 {
        self.x(self.n - 1)
    }

    pub fn points(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.n).map(move |i| self.x(i))
    }

    /// Trapezoid quadrature of |f|^2 over the grid.
    pub fn norm_sq(&self, f: &[C64]) -> f64 {
        debug_assert_eq!(f.len(), self.n);
        let mut acc = 0.0;
        for (i, z) in f.iter().enumerate() {
            let w = if i == 0 || i == self.n - 1 { 0.5 } else { 1.0 };
            acc += w * z.norm_sqr();
        }
        acc * self.step
    }

    /// Trapezoid quadrature of g(x)|f(x)|^2.
    pub fn weighted_moment(&self, f: &[C64], g: impl Fn(f64) -> f64) -> f64 {
        debug_assert_eq!(f.len(), self.n);
        let mut acc = 0.0;
        for (i, z) in f.iter().enumerate() {
            let w = if i == 0 || i == self.n - 1 { 0.5 } else { 1.0 };
            acc += w * g(self.x(i)) * z.norm_sqr();
        }
        acc * self.step
    }
}

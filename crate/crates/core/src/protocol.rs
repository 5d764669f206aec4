//! Adaptive measurement protocols on a dilated layout.
//!
//! A protocol declares its physical registers together with one pointer
//! register per potential measurement, then lists gates: plain unitaries,
//! measurements U = sum_m P_m (x) S^m, and outcome-conditioned variants that
//! compile to sum_n G_n (x) |n><n| over previously written pointer registers.
//! Nothing is traced until the end, so conditioning on any subset of recorded
//! outcomes stays available. A Monte-Carlo sampler unravels the same protocol
//! by eager collapse; agreement of the two routes is a tested invariant, not
//! an assumption.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use serde::ser::SerializeStruct;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hilbert::{
    c, cr, embed, partial_trace, CMatrix, DensityMatrix, Ket, Operator, Register, RegisterKind,
    RegisterLayout,
};
use crate::policy::NumericPolicy;
use crate::spectral::{measurement_unitary, spectral_decompose};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConditionTerm {
    pub ss_label: String,
    pub required_outcome: usize,
}

/// Predicate over previously recorded outcomes in disjunctive normal form:
/// satisfied when every term of at least one conjunction holds. An empty
/// `any_of` never fires; an empty conjunction always does.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Condition {
    pub any_of: Vec<Vec<ConditionTerm>>,
}

impl Condition {
    pub fn when(ss_label: &str, required_outcome: usize) -> Self {
        Condition {
            any_of: vec![vec![ConditionTerm {
                ss_label: ss_label.to_string(),
                required_outcome,
            }]],
        }
    }

    pub fn referenced_labels(&self) -> Vec<&str> {
        let mut out = Vec::new();
        for conj in &self.any_of {
            for t in conj {
                if !out.contains(&t.ss_label.as_str()) {
                    out.push(t.ss_label.as_str());
                }
            }
        }
        out
    }

    pub fn evaluate(&self, lookup: impl Fn(&str) -> Option<usize>) -> bool {
        self.any_of.iter().any(|conj| {
            conj.iter().all(|t| lookup(&t.ss_label) == Some(t.required_outcome))
        })
    }
}

#[derive(Debug, Clone)]
pub enum Instruction {
    Unitary {
        op: Operator,
        targets: Vec<String>,
    },
    Measure {
        observable: Operator,
        target: Vec<String>,
        ss_label: String,
    },
    Feedback {
        condition: Condition,
        op: Operator,
        targets: Vec<String>,
    },
    CondMeasure {
        condition: Condition,
        observable: Operator,
        target: Vec<String>,
        ss_label: String,
    },
}

impl Instruction {
    pub fn ss_label(&self) -> Option<&str> {
        match self {
            Instruction::Measure { ss_label, .. } | Instruction::CondMeasure { ss_label, .. } => {
                Some(ss_label)
            }
            _ => None,
        }
    }

    pub fn condition(&self) -> Option<&Condition> {
        match self {
            Instruction::Feedback { condition, .. }
            | Instruction::CondMeasure { condition, .. } => Some(condition),
            _ => None,
        }
    }
}

impl Serialize for Instruction {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Instruction::Unitary { op, targets } => {
                let mut st = s.serialize_struct("Instruction", 3)?;
                st.serialize_field("type", "unitary")?;
                st.serialize_field("op", op)?;
                st.serialize_field("targets", targets)?;
                st.end()
            }
            Instruction::Measure { observable, target, ss_label } => {
                let mut st = s.serialize_struct("Instruction", 4)?;
                st.serialize_field("type", "measure")?;
                st.serialize_field("observable", observable)?;
                st.serialize_field("target", target)?;
                st.serialize_field("ss_label", ss_label)?;
                st.end()
            }
            Instruction::Feedback { condition, op, targets } => {
                let mut st = s.serialize_struct("Instruction", 4)?;
                st.serialize_field("type", "feedback")?;
                st.serialize_field("condition", condition)?;
                st.serialize_field("op", op)?;
                st.serialize_field("targets", targets)?;
                st.end()
            }
            Instruction::CondMeasure { condition, observable, target, ss_label } => {
                let mut st = s.serialize_struct("Instruction", 5)?;
                st.serialize_field("type", "cond_measure")?;
                st.serialize_field("condition", condition)?;
                st.serialize_field("observable", observable)?;
                st.serialize_field("target", target)?;
                st.serialize_field("ss_label", ss_label)?;
                st.end()
            }
        }
    }
}

impl<'de> Deserialize<'de> for Instruction {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        use serde::de::Error as DeError;
        // route through Value so unknown keys are rejected per variant
        let v = serde_json::Value::deserialize(d)?;
        let t = v
            .get("type")
            .and_then(|t| t.as_str())
            .ok_or_else(|| D::Error::custom("instruction needs a string `type` field"))?
            .to_string();
        match t.as_str() {
            "unitary" => {
                #[derive(Deserialize)]
                #[serde(deny_unknown_fields)]
                struct J {
                    #[serde(rename = "type")]
                    _type: String,
                    op: Operator,
                    targets: Vec<String>,
                }
                let j: J = serde_json::from_value(v).map_err(D::Error::custom)?;
                Ok(Instruction::Unitary { op: j.op, targets: j.targets })
            }
            "measure" => {
                #[derive(Deserialize)]
                #[serde(deny_unknown_fields)]
                struct J {
                    #[serde(rename = "type")]
                    _type: String,
                    observable: Operator,
                    target: Vec<String>,
                    ss_label: String,
                }
                let j: J = serde_json::from_value(v).map_err(D::Error::custom)?;
                Ok(Instruction::Measure {
                    observable: j.observable,
                    target: j.target,
                    ss_label: j.ss_label,
                })
            }
            "feedback" => {
                #[derive(Deserialize)]
                #[serde(deny_unknown_fields)]
                struct J {
                    #[serde(rename = "type")]
                    _type: String,
                    condition: Condition,
                    op: Operator,
                    targets: Vec<String>,
                }
                let j: J = serde_json::from_value(v).map_err(D::Error::custom)?;
                Ok(Instruction::Feedback { condition: j.condition, op: j.op, targets: j.targets })
            }
            "cond_measure" => {
                #[derive(Deserialize)]
                #[serde(deny_unknown_fields)]
                struct J {
                    #[serde(rename = "type")]
                    _type: String,
                    condition: Condition,
                    observable: Operator,
                    target: Vec<String>,
                    ss_label: String,
                }
                let j: J = serde_json::from_value(v).map_err(D::Error::custom)?;
                Ok(Instruction::CondMeasure {
                    condition: j.condition,
                    observable: j.observable,
                    target: j.target,
                    ss_label: j.ss_label,
                })
            }
            other => Err(D::Error::custom(format!("unknown instruction type `{}`", other))),
        }
    }
}

/// One measurement slot of a validated protocol.
#[derive(Debug, Clone)]
struct MeasuredLabel {
    label: String,
    n_outcomes: usize,
}

/// Validated protocol: dilated layout plus ordered instructions.
#[derive(Debug, Clone)]
pub struct ProtocolSpec {
    layout: RegisterLayout,
    instructions: Vec<Instruction>,
    measured: Vec<MeasuredLabel>,
}

impl ProtocolSpec {
    pub fn new(
        layout: RegisterLayout,
        instructions: Vec<Instruction>,
        pol: &NumericPolicy,
    ) -> Result<Self> {
        if layout.labels_of_kind(RegisterKind::Physical).is_empty() {
            return Err(Error::InvalidProtocol("no physical registers declared".into()));
        }
        let mut measured: Vec<MeasuredLabel> = Vec::new();
        for (idx, instr) in instructions.iter().enumerate() {
            let place = |msg: String| Error::InvalidProtocol(format!("instruction {}: {}", idx, msg));
            let check_targets = |labels: &[String]| -> Result<()> {
                if labels.is_empty() {
                    return Err(place("empty target list".into()));
                }
                for (i, l) in labels.iter().enumerate() {
                    let p = layout.position(l).map_err(|_| place(format!("unknown register `{}`", l)))?;
                    if layout.registers()[p].kind != RegisterKind::Physical {
                        return Err(place(format!("target `{}` is not a physical register", l)));
                    }
                    if labels[..i].contains(l) {
                        return Err(place(format!("repeated target `{}`", l)));
                    }
                }
                Ok(())
            };
            let check_condition = |cond: &Condition| -> Result<()> {
                for conj in &cond.any_of {
                    for term in conj {
                        let m = measured
                            .iter()
                            .find(|m| m.label == term.ss_label)
                            .ok_or_else(|| {
                                place(format!(
                                    "condition references `{}` before it is measured",
                                    term.ss_label
                                ))
                            })?;
                        if term.required_outcome >= m.n_outcomes {
                            return Err(place(format!(
                                "condition wants outcome {} of `{}`, which has {} outcomes",
                                term.required_outcome, term.ss_label, m.n_outcomes
                            )));
                        }
                    }
                }
                Ok(())
            };
            let check_measure = |observable: &Operator, target: &[String], ss_label: &String| -> Result<MeasuredLabel> {
                check_targets(target)?;
                let p = layout
                    .position(ss_label)
                    .map_err(|_| place(format!("unknown pointer register `{}`", ss_label)))?;
                let reg = &layout.registers()[p];
                if reg.kind != RegisterKind::Stinespring {
                    return Err(place(format!("`{}` is not a stinespring register", ss_label)));
                }
                if measured.iter().any(|m| &m.label == ss_label) {
                    return Err(place(format!("pointer register `{}` written twice", ss_label)));
                }
                let target_dim: usize = target
                    .iter()
                    .map(|l| layout.dim_of(l).unwrap())
                    .product();
                if observable.dim() != target_dim {
                    return Err(place(format!(
                        "observable dim {} does not match target dim {}",
                        observable.dim(),
                        target_dim
                    )));
                }
                let sd = spectral_decompose(observable, None, pol)
                    .map_err(|e| place(format!("bad observable: {}", e)))?;
                if sd.n_outcomes() != reg.dim {
                    return Err(place(format!(
                        "observable has {} outcomes but pointer register `{}` has dim {}",
                        sd.n_outcomes(),
                        ss_label,
                        reg.dim
                    )));
                }
                Ok(MeasuredLabel { label: ss_label.clone(), n_outcomes: sd.n_outcomes() })
            };
            match instr {
                Instruction::Unitary { op, targets } => {
                    check_targets(targets)?;
                    op.assert_unitary(pol).map_err(|e| place(e.to_string()))?;
                }
                Instruction::Measure { observable, target, ss_label } => {
                    let m = check_measure(observable, target, ss_label)?;
                    measured.push(m);
                }
                Instruction::Feedback { condition, op, targets } => {
                    check_targets(targets)?;
                    check_condition(condition)?;
                    op.assert_unitary(pol).map_err(|e| place(e.to_string()))?;
                }
                Instruction::CondMeasure { condition, observable, target, ss_label } => {
                    check_condition(condition)?;
                    let m = check_measure(observable, target, ss_label)?;
                    measured.push(m);
                }
            }
        }
        Ok(ProtocolSpec { layout, instructions, measured })
    }

    pub fn layout(&self) -> &RegisterLayout {
        &self.layout
    }

    pub fn instructions(&self) -> &[Instruction] {
        &self.instructions
    }

    pub fn physical_labels(&self) -> Vec<&str> {
        self.layout.labels_of_kind(RegisterKind::Physical)
    }

    pub fn physical_layout(&self) -> RegisterLayout {
        self.layout.sublayout(&self.physical_labels()).expect("physical sublayout")
    }

    /// Measured pointer labels in execution order with their outcome counts.
    pub fn measured_labels(&self) -> Vec<(&str, usize)> {
        self.measured.iter().map(|m| (m.label.as_str(), m.n_outcomes)).collect()
    }

    /// 0/1 diagonal over the full layout selecting basis states whose pointer
    /// components satisfy the condition.
    fn condition_projector(&self, cond: &Condition) -> Result<Operator> {
        let mut positions = Vec::new();
        for l in cond.referenced_labels() {
            positions.push((l.to_string(), self.layout.position(l)?));
        }
        let layout = self.layout.clone();
        let d = layout.total_dim();
        let mut e = CMatrix::zeros(d, d);
        for flat in 0..d {
            let sat = cond.evaluate(|label| {
                positions
                    .iter()
                    .find(|(l, _)| l == label)
                    .map(|(_, p)| layout.component(flat, *p))
            });
            if sat {
                e[(flat, flat)] = cr(1.0);
            }
        }
        Operator::new(layout, e)
    }

    /// Dilated gate of a measurement instruction: U = sum_m P_m (x) S^m on the
    /// target registers and the named pointer register.
    fn measurement_gate(
        &self,
        observable: &Operator,
        target: &[String],
        ss_label: &str,
        pol: &NumericPolicy,
    ) -> Result<Operator> {
        let sd = spectral_decompose(observable, None, pol)?;
        let mu = measurement_unitary(&sd)?;
        let mut labels: Vec<&str> = target.iter().map(|s| s.as_str()).collect();
        labels.push(ss_label);
        embed(mu.unitary(), &labels, &self.layout)
    }

    /// One unitary gate per instruction, on the full dilated layout.
    /// Conditioned instructions compile to G P_true + (I - P_true); the
    /// conditioning registers are disjoint from the gate's registers, so the
    /// result is unitary.
    pub fn compile(&self, pol: &NumericPolicy) -> Result<Vec<Operator>> {
        let d = self.layout.total_dim();
        let mut gates = Vec::with_capacity(self.instructions.len());
        for instr in &self.instructions {
            let gate = match instr {
                Instruction::Unitary { op, targets } => {
                    let labels: Vec<&str> = targets.iter().map(|s| s.as_str()).collect();
                    embed(op, &labels, &self.layout)?
                }
                Instruction::Measure { observable, target, ss_label } => {
                    self.measurement_gate(observable, target, ss_label, pol)?
                }
                Instruction::Feedback { condition, op, targets } => {
                    let labels: Vec<&str> = targets.iter().map(|s| s.as_str()).collect();
                    let g = embed(op, &labels, &self.layout)?;
                    let p = self.condition_projector(condition)?;
                    let e = g.entries() * p.entries()
                        + (CMatrix::identity(d, d) - p.entries());
                    Operator::new(self.layout.clone(), e)?
                }
                Instruction::CondMeasure { condition, observable, target, ss_label } => {
                    let g = self.measurement_gate(observable, target, ss_label, pol)?;
                    let p = self.condition_projector(condition)?;
                    let e = g.entries() * p.entries()
                        + (CMatrix::identity(d, d) - p.entries());
                    Operator::new(self.layout.clone(), e)?
                }
            };
            gate.assert_unitary(pol)?;
            gates.push(gate);
        }
        Ok(gates)
    }
}

impl Serialize for ProtocolSpec {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let mut st = s.serialize_struct("ProtocolSpec", 2)?;
        st.serialize_field("registers", self.layout.registers())?;
        st.serialize_field("instructions", &self.instructions)?;
        st.end()
    }
}

impl<'de> Deserialize<'de> for ProtocolSpec {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        use serde::de::Error as DeError;
        #[derive(Deserialize)]
        #[serde(deny_unknown_fields)]
        struct J {
            registers: Vec<Register>,
            instructions: Vec<Instruction>,
        }
        let j = J::deserialize(d)?;
        let layout = RegisterLayout::new(j.registers).map_err(D::Error::custom)?;
        ProtocolSpec::new(layout, j.instructions, &NumericPolicy::default())
            .map_err(D::Error::custom)
    }
}

/// Full dilated final state plus per-pointer outcome marginals.
#[derive(Debug, Clone)]
pub struct DilatedRun {
    pub final_state: DensityMatrix,
    pub outcome_marginals: Vec<(String, Vec<f64>)>,
}

impl DilatedRun {
    pub fn marginal(&self, ss_label: &str) -> Result<&[f64]> {
        self.outcome_marginals
            .iter()
            .find(|(l, _)| l == ss_label)
            .map(|(_, p)| p.as_slice())
            .ok_or_else(|| Error::UnknownLabel(ss_label.to_string()))
    }
}

/// One sampled run: recorded outcomes, the collapsed physical state, and the
/// trajectory's Born probability.
#[derive(Debug, Clone)]
pub struct TrajectoryRecord {
    pub outcomes: Vec<(String, usize)>,
    pub final_physical_state: Ket,
    pub probability: f64,
}

impl TrajectoryRecord {
    pub fn outcome(&self, ss_label: &str) -> Option<usize> {
        self.outcomes.iter().find(|(l, _)| l == ss_label).map(|(_, m)| *m)
    }
}

/// Runs the full dilated protocol: rho0 (x) |0...0><0...0| on the pointer
/// registers, then every compiled gate in order, tracing nothing until the
/// marginals are read off at the end.
pub fn run_dilated(
    spec: &ProtocolSpec,
    rho0: &DensityMatrix,
    pol: &NumericPolicy,
) -> Result<DilatedRun> {
    let phys = spec.physical_layout();
    if rho0.layout() != &phys {
        return Err(Error::DimMismatch(
            "initial state layout differs from the protocol's physical registers".into(),
        ));
    }
    rho0.validate(1.0, pol)?;

    // dilated initial state: physical entries placed at pointer-index zero
    let full = spec.layout().clone();
    let pd = phys.total_dim();
    let phys_positions: Vec<usize> = spec
        .physical_labels()
        .iter()
        .map(|l| full.position(l).unwrap())
        .collect();
    let mut kmap = vec![0usize; pd];
    for (i, slot) in kmap.iter_mut().enumerate() {
        let multi = phys.decompose(i);
        let mut full_multi = vec![0usize; full.len()];
        for (k, &p) in phys_positions.iter().enumerate() {
            full_multi[p] = multi[k];
        }
        *slot = full.compose(&full_multi);
    }
    let d = full.total_dim();
    let mut e = CMatrix::zeros(d, d);
    for i in 0..pd {
        for j in 0..pd {
            e[(kmap[i], kmap[j])] = rho0.entries()[(i, j)];
        }
    }
    let mut state = DensityMatrix::new(full, e)?;

    for gate in spec.compile(pol)? {
        state = gate.conjugate_density(&state)?;
    }

    let tr = state.trace();
    if (tr.re - 1.0).abs() > pol.structural || tr.im.abs() > pol.structural {
        return Err(Error::InvariantViolation(format!(
            "dilated run trace drifted to {}",
            tr
        )));
    }

    let mut outcome_marginals = Vec::new();
    for (label, n) in spec.measured_labels() {
        let red = partial_trace(&state, &[label])?;
        let probs: Vec<f64> = (0..n).map(|m| red.entries()[(m, m)].re).collect();
        outcome_marginals.push((label.to_string(), probs));
    }
    Ok(DilatedRun { final_state: state, outcome_marginals })
}

/// Conditions the dilated final state on a partial outcome assignment:
/// p = tr(rho P) with P the product of pointer projectors, and the physical
/// state renormalized after tracing out every pointer register. Probability
/// zero yields no state.
pub fn marginal_given(
    run: &DilatedRun,
    assignment: &[(&str, usize)],
    pol: &NumericPolicy,
) -> Result<(f64, Option<DensityMatrix>)> {
    let layout = run.final_state.layout().clone();
    let mut positions = Vec::with_capacity(assignment.len());
    for (label, m) in assignment {
        let p = layout.position(label)?;
        let reg = &layout.registers()[p];
        if reg.kind != RegisterKind::Stinespring {
            return Err(Error::InvalidConfig(format!("`{}` is not a pointer register", label)));
        }
        if *m >= reg.dim {
            return Err(Error::InvalidConfig(format!(
                "outcome {} out of range for `{}` (dim {})",
                m, label, reg.dim
            )));
        }
        positions.push((p, *m));
    }
    let d = layout.total_dim();
    let mut proj = CMatrix::zeros(d, d);
    for flat in 0..d {
        if positions.iter().all(|&(p, m)| layout.component(flat, p) == m) {
            proj[(flat, flat)] = cr(1.0);
        }
    }
    let proj = Operator::new(layout.clone(), proj)?;
    let projected = proj.conjugate_density(&run.final_state)?;
    let p = projected.trace().re;
    if p <= pol.p_zero {
        return Ok((p.max(0.0), None));
    }
    let phys_labels = layout.labels_of_kind(RegisterKind::Physical);
    let reduced = partial_trace(&projected, &phys_labels)?;
    Ok((p, Some(reduced.scaled(1.0 / p))))
}

/// Born probability of outcome m read off a pointer marginal.
pub fn born_from_dilated(run: &DilatedRun, ss_label: &str, m: usize) -> Result<f64> {
    let probs = run.marginal(ss_label)?;
    if m >= probs.len() {
        return Err(Error::InvalidConfig(format!(
            "outcome {} out of range for `{}` ({} outcomes)",
            m,
            ss_label,
            probs.len()
        )));
    }
    Ok(probs[m])
}

/// Monte-Carlo unraveling: measurements collapse eagerly in the Kraus picture,
/// outcomes are drawn from Born weights with one counter-based RNG stream per
/// instruction index, so a (seed, protocol) pair is reproducible.
/// Conditioned measurements that do not fire record the default outcome 0,
/// matching the untouched pointer register of the dilated run.
pub fn sample_trajectory(
    spec: &ProtocolSpec,
    psi0: &Ket,
    seed: u64,
    pol: &NumericPolicy,
) -> Result<TrajectoryRecord> {
    let phys = spec.physical_layout();
    if psi0.layout() != &phys {
        return Err(Error::DimMismatch(
            "initial state layout differs from the protocol's physical registers".into(),
        ));
    }
    if (psi0.norm() - 1.0).abs() > pol.structural {
        return Err(Error::InvalidConfig(format!(
            "initial state norm {} is not 1",
            psi0.norm()
        )));
    }

    let mut psi = psi0.clone();
    let mut outcomes: Vec<(String, usize)> = Vec::new();
    let mut probability = 1.0;

    let measure = |psi: &mut Ket,
                       observable: &Operator,
                       target: &[String],
                       ss_label: &str,
                       idx: usize,
                       outcomes: &mut Vec<(String, usize)>,
                       probability: &mut f64|
     -> Result<()> {
        let sd = spectral_decompose(observable, None, pol)?;
        let labels: Vec<&str> = target.iter().map(|s| s.as_str()).collect();
        let mut weights = Vec::with_capacity(sd.n_outcomes());
        let mut branches = Vec::with_capacity(sd.n_outcomes());
        for proj in sd.projectors() {
            let embedded = embed(proj, &labels, &phys)?;
            let branch = embedded.apply(psi)?;
            let w = branch.norm();
            weights.push(w * w);
            branches.push(branch);
        }
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        rng.set_stream(idx as u64);
        let u: f64 = rng.gen();
        let mut acc = 0.0;
        let mut chosen = weights.len() - 1;
        for (m, &w) in weights.iter().enumerate() {
            acc += w;
            if u < acc && w > pol.p_zero {
                chosen = m;
                break;
            }
        }
        // guard against landing on a zero-weight tail bucket from rounding
        if weights[chosen] <= pol.p_zero {
            chosen = weights
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.total_cmp(b.1))
                .map(|(m, _)| m)
                .unwrap();
        }
        let w = weights[chosen];
        *psi = branches[chosen].scaled(cr(1.0 / w.sqrt()));
        outcomes.push((ss_label.to_string(), chosen));
        *probability *= w;
        Ok(())
    };

    for (idx, instr) in spec.instructions().iter().enumerate() {
        let fired = instr.condition().map(|cond| {
            cond.evaluate(|label| {
                outcomes.iter().find(|(l, _)| l == label).map(|(_, m)| *m)
            })
        });
        match instr {
            Instruction::Unitary { op, targets } => {
                let labels: Vec<&str> = targets.iter().map(|s| s.as_str()).collect();
                psi = embed(op, &labels, &phys)?.apply(&psi)?;
            }
            Instruction::Measure { observable, target, ss_label } => {
                measure(&mut psi, observable, target, ss_label, idx, &mut outcomes, &mut probability)?;
            }
            Instruction::Feedback { op, targets, .. } => {
                if fired == Some(true) {
                    let labels: Vec<&str> = targets.iter().map(|s| s.as_str()).collect();
                    psi = embed(op, &labels, &phys)?.apply(&psi)?;
                }
            }
            Instruction::CondMeasure { observable, target, ss_label, .. } => {
                if fired == Some(true) {
                    measure(&mut psi, observable, target, ss_label, idx, &mut outcomes, &mut probability)?;
                } else {
                    outcomes.push((ss_label.clone(), 0));
                }
            }
        }
    }
    debug_assert!((0.0..=1.0 + 1e-12).contains(&probability));
    Ok(TrajectoryRecord { outcomes, final_physical_state: psi, probability })
}

/// Convenience constructors for common protocol pieces.
pub mod builders {
    use super::*;

    /// Hadamard on a fresh single-qubit layout.
    pub fn hadamard(label: &str) -> Operator {
        let layout = RegisterLayout::single(label, 2, RegisterKind::Physical);
        let h = std::f64::consts::FRAC_1_SQRT_2;
        Operator::new(
            layout,
            CMatrix::from_row_slice(2, 2, &[c(h, 0.0), c(h, 0.0), c(h, 0.0), c(-h, 0.0)]),
        )
        .expect("hadamard dims")
    }

    /// CNOT with the first register as control.
    pub fn cnot(control: &str, target: &str) -> Operator {
        let layout = RegisterLayout::new(vec![
            Register::physical(control, 2),
            Register::physical(target, 2),
        ])
        .expect("cnot layout");
        let mut e = CMatrix::zeros(4, 4);
        e[(0, 0)] = cr(1.0);
        e[(1, 1)] = cr(1.0);
        e[(2, 3)] = cr(1.0);
        e[(3, 2)] = cr(1.0);
        Operator::new(layout, e).expect("cnot dims")
    }
}

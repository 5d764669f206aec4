//! Unitary representation of projective and destructive quantum measurements.
//!
//! A measurement of an observable is modeled as a unitary on a dilated space:
//! the measured system tensored with an auxiliary pointer register that records
//! the outcome. Averaging over the pointer reproduces the measurement channel;
//! conditioning on a pointer state reproduces selective collapse. On top of
//! that picture the crate builds measurement-feedback protocols, pointer-basis
//! decoherence, and concrete detector models (photon counting, homodyne,
//! fluorescence, dispersive readout, Stern-Gerlach).

pub mod acceptance;
pub mod decoherence;
pub mod detectors;
pub mod error;
pub mod hilbert;
pub mod policy;
pub mod protocol;
pub mod spectral;
pub mod sterngerlach;

pub use decoherence::{
    coherence_norm, dephase_exact, dephase_sampled, sample_block_haar, SymmetryBlocks,
};
pub use detectors::{
    beam_splitter, collective_commutator_defect, dispersive_readout, fluorescence_measure,
    homodyne_distributions, homodyne_distributions_exact, homodyne_matrix_element_asymptotic,
    homodyne_matrix_element_exact, photocount_distribution, photodetect_closed_form,
    photodetect_count_distribution, photodetect_exact, quadrature_wavefunction,
    AsymptoticElement, DispersiveConfig, DispersiveOutcome, FluorescenceConfig,
    FluorescenceOutcome, HomodyneConfig, HomodyneDistributions, HomodyneGrid, PhotocountJoint,
    PhotonCounterConfig, ReadoutBranch,
};
pub use error::{Error, Result};
pub use hilbert::{
    c, cr, embed, expectation, partial_trace, trace_distance, C64, CMatrix, CVector, DensityMatrix,
    Grid1D, Ket, Operator, Register, RegisterKind, RegisterLayout,
};
pub use policy::NumericPolicy;
pub use protocol::{
    born_from_dilated, marginal_given, run_dilated, sample_trajectory, Condition, ConditionTerm,
    DilatedRun, Instruction, ProtocolSpec, TrajectoryRecord,
};
pub use spectral::{
    apply_channel, apply_selective, bit_observable, destructive_number_unitary,
    kraus_from_observable, measurement_unitary, pauli, pointer_evolve, qubit_observable_involution,
    spectral_decompose, unitary_from_kraus, weyl_shift, GaussianPointer, KrausClass, KrausSet,
    MeasurementUnitary, PointerState, SpectralDecomposition,
};
pub use sterngerlach::{
    sg_analytic, sg_analytic_packet, sg_correction_ratio, sg_grid_for, sg_heisenberg_z,
    sg_initial_packet, sg_outcome_distribution, sg_split_step, ExpansionOrder, GridWavepacket,
    SGConfig, SGOutcome, Spin,
};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

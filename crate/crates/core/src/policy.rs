/// Central numeric tolerances. Structural checks default to 1e-10 and trace
/// identities to 1e-12; checking entry points take a policy reference so any
/// tolerance can be overridden per call.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NumericPolicy {
    /// unitarity, hermiticity, projector idempotence (max-norm)
    pub structural: f64,
    /// trace identities and probability sums
    pub trace: f64,
    /// projector-family identities: completeness, orthogonality, tr = n_m
    pub projector_family: f64,
    /// spectral reconstruction of an observable from its projectors
    pub reconstruction: f64,
    /// eigenvalue floor when checking positive semidefiniteness
    pub psd: f64,
    /// outcome probability below which a collapsed state is reported absent
    pub p_zero: f64,
    /// relative eigenvalue-merge tolerance, scaled by the spectral range
    pub degeneracy_rel: f64,
    /// quadrature norm agreement for grid-sampled wavefunctions
    pub grid_norm: f64,
    /// mass near a grid boundary that counts as escape
    pub boundary_mass: f64,
}

impl NumericPolicy {
    pub const fn new() -> Self {
        NumericPolicy {
            structural: 1e-10,
            trace: 1e-12,
            projector_family: 1e-9,
            reconstruction: 1e-8,
            psd: 1e-10,
            p_zero: 1e-12,
            degeneracy_rel: 1e-8,
            grid_norm: 1e-8,
            boundary_mass: 1e-6,
        }
    }
}

impl Default for NumericPolicy {
    fn default() -> Self {
        Self::new()
    }
}

/// Shared default instance for call sites that do not override anything.
pub static DEFAULT: NumericPolicy = NumericPolicy::new();

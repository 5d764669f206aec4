//! Apparatus decoherence over symmetry blocks of the pointer basis.
//!
//! An apparatus that conserves the measured quantity scrambles the pointer
//! only inside each outcome's eigenblock. Averaging over block-Haar unitaries
//! gives an analytic channel: inter-block coherences vanish and each block's
//! pointer factor flattens to P_l / n_l. The channel here is pure index
//! arithmetic; Haar sampling exists only as the Monte-Carlo oracle for it.

use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hilbert::{cr, C64, CMatrix, DensityMatrix, Operator, RegisterKind, RegisterLayout};

/// Disjoint partition of the pointer basis indices, block m collecting the
/// n_m pointer states of outcome m.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SymmetryBlocks {
    blocks: Vec<Vec<usize>>,
    dim: usize,
}

impl SymmetryBlocks {
    pub fn new(blocks: Vec<Vec<usize>>, dim: usize) -> Result<Self> {
        let mut seen = vec![false; dim];
        for b in &blocks {
            if b.is_empty() {
                return Err(Error::InvalidConfig("empty symmetry block".into()));
            }
            for &i in b {
                if i >= dim {
                    return Err(Error::InvalidConfig(format!(
                        "block index {} out of range {}",
                        i, dim
                    )));
                }
                if seen[i] {
                    return Err(Error::InvalidConfig(format!("index {} in two blocks", i)));
                }
                seen[i] = true;
            }
        }
        if seen.iter().any(|s| !s) {
            return Err(Error::InvalidConfig("blocks do not cover the basis".into()));
        }
        Ok(SymmetryBlocks { blocks, dim })
    }

    /// Contiguous blocks from outcome multiplicities, in outcome order.
    pub fn from_multiplicities(mults: &[usize]) -> Result<Self> {
        let dim = mults.iter().sum();
        let mut blocks = Vec::with_capacity(mults.len());
        let mut next = 0;
        for &n in mults {
            blocks.push((next..next + n).collect());
            next += n;
        }
        Self::new(blocks, dim)
    }

    /// One singleton block per basis state.
    pub fn minimal(dim: usize) -> Self {
        SymmetryBlocks { blocks: (0..dim).map(|i| vec![i]).collect(), dim }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn blocks(&self) -> &[Vec<usize>] {
        &self.blocks
    }

    pub fn n_blocks(&self) -> usize {
        self.blocks.len()
    }

    /// Block id of each basis index.
    pub fn block_of(&self) -> Vec<usize> {
        let mut out = vec![0usize; self.dim];
        for (l, b) in self.blocks.iter().enumerate() {
            for &i in b {
                out[i] = l;
            }
        }
        out
    }
}

fn haar_unitary(n: usize, rng: &mut ChaCha12Rng) -> CMatrix {
    // QR of a complex Ginibre matrix; fixing the R diagonal phases makes the
    // distribution exactly Haar
    let g = CMatrix::from_fn(n, n, |_, _| {
        let re: f64 = StandardNormal.sample(rng);
        let im: f64 = StandardNormal.sample(rng);
        C64::new(re, im)
    });
    let qr = g.qr();
    let r = qr.r();
    let mut q = qr.q();
    for k in 0..n {
        let d = r[(k, k)];
        let phase = if d.norm() == 0.0 { cr(1.0) } else { d / cr(d.norm()) };
        for i in 0..n {
            q[(i, k)] *= phase;
        }
    }
    q
}

/// Block-diagonal unitary with each block independently Haar-distributed.
/// Singleton blocks reduce to uniform phases.
pub fn sample_block_haar(
    blocks: &SymmetryBlocks,
    layout: RegisterLayout,
    seed: u64,
) -> Result<Operator> {
    if layout.total_dim() != blocks.dim() {
        return Err(Error::DimMismatch(format!(
            "layout dim {} differs from block dim {}",
            layout.total_dim(),
            blocks.dim()
        )));
    }
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let d = blocks.dim();
    let mut e = CMatrix::zeros(d, d);
    for b in blocks.blocks() {
        let u = haar_unitary(b.len(), &mut rng);
        for (bi, &i) in b.iter().enumerate() {
            for (bj, &j) in b.iter().enumerate() {
                e[(i, j)] = u[(bi, bj)];
            }
        }
    }
    Operator::new(layout, e)
}

/// Register split of a dilated state: physical positions and pointer positions
/// with their offset maps into the flat index.
struct DilatedSplit {
    phys_offsets: Vec<usize>,
    ss_offsets: Vec<usize>,
    phys_dim: usize,
    ss_dim: usize,
}

fn dilated_split(layout: &RegisterLayout) -> Result<DilatedSplit> {
    let mut phys_positions = Vec::new();
    let mut ss_positions = Vec::new();
    for (p, r) in layout.registers().iter().enumerate() {
        match r.kind {
            RegisterKind::Physical => phys_positions.push(p),
            RegisterKind::Stinespring => ss_positions.push(p),
        }
    }
    if ss_positions.is_empty() {
        return Err(Error::InvalidConfig("state has no stinespring register".into()));
    }
    let build = |positions: &[usize]| -> Vec<usize> {
        let mut offsets = vec![0usize];
        for &p in positions {
            let dim = layout.registers()[p].dim;
            let stride = layout.stride(p);
            let mut next = Vec::with_capacity(offsets.len() * dim);
            for &o in &offsets {
                for i in 0..dim {
                    next.push(o + i * stride);
                }
            }
            offsets = next;
        }
        offsets
    };
    let phys_offsets = build(&phys_positions);
    let ss_offsets = build(&ss_positions);
    Ok(DilatedSplit {
        phys_dim: phys_offsets.len(),
        ss_dim: ss_offsets.len(),
        phys_offsets,
        ss_offsets,
    })
}

/// Exact onefold-Haar dephasing channel over the pointer blocks:
/// out[(i,a),(j,b)] = [a = b] (1/n_block(a)) sum_{c in block(a)} rho[(i,c),(j,c)].
/// Inter-block coherences vanish, each block flattens to P_l / n_l, the trace
/// and the reduced physical state are preserved.
pub fn dephase_exact(rho_dil: &DensityMatrix, blocks: &SymmetryBlocks) -> Result<DensityMatrix> {
    let layout = rho_dil.layout();
    let split = dilated_split(layout)?;
    if split.ss_dim != blocks.dim() {
        return Err(Error::DimMismatch(format!(
            "pointer dim {} differs from block dim {}",
            split.ss_dim,
            blocks.dim()
        )));
    }
    let pd = split.phys_dim;
    let d = layout.total_dim();
    let mut out = CMatrix::zeros(d, d);
    for block in blocks.blocks() {
        // physical component of the block, averaged over its pointer states
        let inv = cr(1.0 / block.len() as f64);
        let mut m = CMatrix::zeros(pd, pd);
        for &c in block {
            let co = split.ss_offsets[c];
            for i in 0..pd {
                for j in 0..pd {
                    m[(i, j)] +=
                        rho_dil.entries()[(split.phys_offsets[i] + co, split.phys_offsets[j] + co)];
                }
            }
        }
        m *= inv;
        for &a in block {
            let ao = split.ss_offsets[a];
            for i in 0..pd {
                for j in 0..pd {
                    out[(split.phys_offsets[i] + ao, split.phys_offsets[j] + ao)] = m[(i, j)];
                }
            }
        }
    }
    DensityMatrix::new(layout.clone(), out)
}

/// Frobenius norm of the inter-block pointer coherences: zero exactly when no
/// amplitude connects different outcome blocks.
pub fn coherence_norm(rho_dil: &DensityMatrix, blocks: &SymmetryBlocks) -> Result<f64> {
    let layout = rho_dil.layout();
    let split = dilated_split(layout)?;
    if split.ss_dim != blocks.dim() {
        return Err(Error::DimMismatch(format!(
            "pointer dim {} differs from block dim {}",
            split.ss_dim,
            blocks.dim()
        )));
    }
    let block_of = blocks.block_of();
    let mut acc = 0.0;
    for (a, &ao) in split.ss_offsets.iter().enumerate() {
        for (b, &bo) in split.ss_offsets.iter().enumerate() {
            if block_of[a] == block_of[b] {
                continue;
            }
            for &io in &split.phys_offsets {
                for &jo in &split.phys_offsets {
                    acc += rho_dil.entries()[(io + ao, jo + bo)].norm_sqr();
                }
            }
        }
    }
    Ok(acc.sqrt())
}

/// Monte-Carlo counterpart of [`dephase_exact`]: averages U rho U^dag over
/// `samples` block-Haar unitaries acting on the pointer registers only.
/// Exists as the sampling oracle for the analytic channel.
pub fn dephase_sampled(
    rho_dil: &DensityMatrix,
    blocks: &SymmetryBlocks,
    samples: usize,
    seed: u64,
) -> Result<DensityMatrix> {
    if samples == 0 {
        return Err(Error::InvalidConfig("need at least one sample".into()));
    }
    let layout = rho_dil.layout();
    let split = dilated_split(layout)?;
    if split.ss_dim != blocks.dim() {
        return Err(Error::DimMismatch(format!(
            "pointer dim {} differs from block dim {}",
            split.ss_dim,
            blocks.dim()
        )));
    }
    let d = layout.total_dim();
    let mut acc = CMatrix::zeros(d, d);
    for s in 0..samples {
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        rng.set_stream(s as u64);
        // embed the pointer unitary: entry ((i,a),(j,b)) = [i=j] u[a,b]
        let mut u_blocks = CMatrix::zeros(split.ss_dim, split.ss_dim);
        for b in blocks.blocks() {
            let u = haar_unitary(b.len(), &mut rng);
            for (bi, &i) in b.iter().enumerate() {
                for (bj, &j) in b.iter().enumerate() {
                    u_blocks[(i, j)] = u[(bi, bj)];
                }
            }
        }
        let mut full = CMatrix::zeros(d, d);
        for &po in &split.phys_offsets {
            for (a, &ao) in split.ss_offsets.iter().enumerate() {
                for (b, &bo) in split.ss_offsets.iter().enumerate() {
                    let v = u_blocks[(a, b)];
                    if v != C64::new(0.0, 0.0) {
                        full[(po + ao, po + bo)] = v;
                    }
                }
            }
        }
        acc += &full * rho_dil.entries() * full.adjoint();
    }
    acc /= cr(samples as f64);
    DensityMatrix::new(layout.clone(), acc)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn blocks_must_partition() {
        assert!(SymmetryBlocks::new(vec![vec![0], vec![0, 1]], 2).is_err());
        assert!(SymmetryBlocks::new(vec![vec![0]], 2).is_err());
        assert!(SymmetryBlocks::new(vec![vec![0], vec![2]], 2).is_err());
        let b = SymmetryBlocks::from_multiplicities(&[2, 1]).unwrap();
        assert_eq!(b.blocks(), &[vec![0, 1], vec![2]]);
        assert_eq!(b.block_of(), vec![0, 0, 1]);
    }

    #[test]
    fn singleton_blocks_sample_pure_phases() {
        let blocks = SymmetryBlocks::minimal(4);
        let layout = RegisterLayout::single("ss", 4, RegisterKind::Stinespring);
        let u = sample_block_haar(&blocks, layout, 3).unwrap();
        for i in 0..4 {
            for j in 0..4 {
                let v = u.entries()[(i, j)];
                if i == j {
                    assert!((v.norm() - 1.0).abs() < 1e-12);
                } else {
                    assert_eq!(v, C64::new(0.0, 0.0));
                }
            }
        }
    }
}

//! Orbital-minimization energy `E = tr((2I - Mbar) Hbar)`, its gradient
//! and directional derivative.

use crate::bcsr::{mmult, tmmult, tr_tmmult, BlockCsrMatrix};
use crate::comm::RankContext;
use crate::matfree::{ApplyStats, MatrixFreeOperator, Variant};
use crate::problem::RankSetup;
use crate::Result;

pub struct EnergyWorkspace {
    pub phi_m: BlockCsrMatrix,
    pub phi_h: BlockCsrMatrix,
    pub m_bar: BlockCsrMatrix,
    pub h_bar: BlockCsrMatrix,
    /// `2I - Mbar`
    pub two_i_minus_m: BlockCsrMatrix,
    pub gradient: BlockCsrMatrix,
    scratch: BlockCsrMatrix,
    pub variant: Variant,
    pub apply_stats: ApplyStats,
    pub spmm_flops: u64,
}

impl EnergyWorkspace {
    /// Collective.
    pub fn new(ctx: &RankContext, setup: &RankSetup, lane_width: usize) -> Result<Self> {
        let grown = |ctx| BlockCsrMatrix::with_lane_width(ctx, setup.grown.clone(), lane_width);
        let proj = |ctx| BlockCsrMatrix::with_lane_width(ctx, setup.projected.clone(), lane_width);
        Ok(Self {
            phi_m: grown(ctx)?,
            phi_h: grown(ctx)?,
            m_bar: proj(ctx)?,
            h_bar: proj(ctx)?,
            two_i_minus_m: proj(ctx)?,
            gradient: grown(ctx)?,
            scratch: grown(ctx)?,
            variant: Variant::SumFac,
            apply_stats: ApplyStats::default(),
            spmm_flops: 0,
        })
    }
}

/// Computes `Phi_M`, `Phi_H`, `Mbar`, `Hbar` and returns the energy,
/// replicated on all ranks.
pub fn compute_energy(
    ctx: &RankContext,
    phi: &mut BlockCsrMatrix,
    mass: &MatrixFreeOperator,
    hamiltonian: &MatrixFreeOperator,
    ws: &mut EnergyWorkspace,
) -> Result<f64> {
    ws.apply_stats += mass.apply(ctx, phi, &mut ws.phi_m, ws.variant)?;
    ws.apply_stats += hamiltonian.apply(ctx, phi, &mut ws.phi_h, ws.variant)?;
    ws.spmm_flops += tmmult(ctx, phi, &ws.phi_m, &mut ws.m_bar)?;
    ws.spmm_flops += tmmult(ctx, phi, &ws.phi_h, &mut ws.h_bar)?;

    ws.two_i_minus_m.zero_all()?;
    ws.two_i_minus_m.scale_add(0.0, -1.0, &ws.m_bar)?;
    ws.two_i_minus_m.add_to_diagonal(2.0)?;

    // tr((2I - Mbar) Hbar) as a Frobenius product, Mbar being symmetric
    let local = ws.h_bar.local_frobenius_dot(&ws.two_i_minus_m)?;
    Ok(ctx.allreduce_sum(local)?)
}

/// `G = 2 Phi_H (2I - Mbar) - 2 Phi_M Hbar` on the pattern of `G`. Needs the
/// results of [`compute_energy`].
pub fn compute_gradient(ctx: &RankContext, ws: &mut EnergyWorkspace) -> Result<()> {
    ws.spmm_flops += mmult(ctx, &ws.phi_m, &mut ws.h_bar, &mut ws.gradient)?;
    ws.spmm_flops += mmult(ctx, &ws.phi_h, &mut ws.two_i_minus_m, &mut ws.scratch)?;
    ws.gradient.scale_add(-2.0, 2.0, &ws.scratch)
}

/// `tr(D^T G)`.
pub fn directional_derivative(
    ctx: &RankContext,
    d: &BlockCsrMatrix,
    g: &BlockCsrMatrix,
) -> Result<f64> {
    tr_tmmult(ctx, d, g)
}

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use mfsparse::{Error, Result};
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Kernel {
    ApplyM,
    ApplyH,
    ApplyHGemm,
    Mmult,
    Tmmult,
    TrTmmult,
    Energy,
    Gradient,
}

impl Kernel {
    pub const ALL: [Kernel; 8] = [
        Kernel::ApplyM,
        Kernel::ApplyH,
        Kernel::ApplyHGemm,
        Kernel::Mmult,
        Kernel::Tmmult,
        Kernel::TrTmmult,
        Kernel::Energy,
        Kernel::Gradient,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Kernel::ApplyM => "apply_m",
            Kernel::ApplyH => "apply_h",
            Kernel::ApplyHGemm => "apply_h_gemm",
            Kernel::Mmult => "mmult",
            Kernel::Tmmult => "tmmult",
            Kernel::TrTmmult => "tr_tmmult",
            Kernel::Energy => "energy",
            Kernel::Gradient => "gradient",
        }
    }
}

impl fmt::Display for Kernel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Kernel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Kernel::ALL
            .into_iter()
            .find(|k| k.name() == s.trim())
            .ok_or_else(|| Error::Config(format!("unknown kernel '{s}'")))
    }
}

/// Parses a comma separated kernel list.
pub fn parse_kernels(s: &str) -> Result<Vec<Kernel>> {
    s.split(',')
        .filter(|t| !t.trim().is_empty())
        .map(str::parse)
        .collect()
}

/// Nanotube-like benchmark problem. Lengths are in Bohr.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchConfig {
    pub atoms: usize,
    /// Atoms per ring.
    pub rings: usize,
    pub ring_spacing: f64,
    pub tube_radius: f64,
    pub degree: usize,
    /// Localization radius.
    pub radius: f64,
    pub block_size: usize,
    pub vectors_per_atom: usize,
    /// Fine cell edge length.
    pub spacing: f64,
    pub coarse_level_offset: u32,
    /// Empty space between the tube and the boundary; defaults to `radius`.
    pub vacuum: Option<f64>,
    /// Fixed cell counts instead of the auto-sized box.
    pub extents: Option<[usize; 3]>,
    pub n_ranks: usize,
    pub reps: usize,
    pub lane_width: usize,
    pub kernels: Vec<Kernel>,
    pub seed: u64,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            atoms: 40,
            rings: 10,
            ring_spacing: 2.0,
            tube_radius: 7.4,
            degree: 2,
            radius: 8.0,
            block_size: 8,
            vectors_per_atom: 2,
            spacing: 2.0,
            coarse_level_offset: 1,
            vacuum: None,
            extents: None,
            n_ranks: 1,
            reps: 10,
            lane_width: mfsparse::bcsr::DEFAULT_LANE_WIDTH,
            kernels: Kernel::ALL.to_vec(),
            seed: 1,
        }
    }
}

impl BenchConfig {
    pub fn from_json_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn vacuum(&self) -> f64 {
        self.vacuum.unwrap_or(self.radius)
    }

    pub fn n_rings(&self) -> usize {
        self.atoms.div_ceil(self.rings.max(1))
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::Config(m.to_string()));
        if self.atoms == 0 || self.rings == 0 {
            return fail("atoms and rings must be positive");
        }
        if !(1..=8).contains(&self.degree) {
            return fail("degree must be in 1..=8");
        }
        if self.block_size == 0 || self.vectors_per_atom == 0 {
            return fail("block size and vectors per atom must be positive");
        }
        for (name, v) in [
            ("ring_spacing", self.ring_spacing),
            ("radius", self.radius),
            ("spacing", self.spacing),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        if !(self.tube_radius >= 0.0 && self.vacuum() >= 0.0) {
            return fail("tube radius and vacuum must be non-negative");
        }
        if self.n_ranks == 0 {
            return fail("at least one rank is required");
        }
        if self.reps == 0 {
            return fail("reps must be at least 1");
        }
        if ![1, 2, 4, 8, 16].contains(&self.lane_width) {
            return fail("lane width must be one of 1, 2, 4, 8, 16");
        }
        if self.kernels.is_empty() {
            return fail("no kernels selected");
        }
        Ok(())
    }
}

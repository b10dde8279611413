use std::f64::consts::PI;
use std::sync::Arc;

use mfsparse::localization::LocalizationSpec;
use mfsparse::matfree::Potential;
use mfsparse::mesh::{build_mesh, StructuredMesh};
use mfsparse::problem::Problem;
use mfsparse::{Error, Result};

use crate::config::BenchConfig;

pub struct GeneratedProblem {
    pub problem: Problem,
    pub atoms: Vec<[f64; 3]>,
    pub potential: Potential,
}

fn box_lengths(cfg: &BenchConfig) -> [f64; 3] {
    let cross = 2.0 * (cfg.tube_radius + cfg.vacuum());
    [
        cross,
        cross,
        cfg.n_rings() as f64 * cfg.ring_spacing + 2.0 * cfg.vacuum(),
    ]
}

/// Cell counts of the auto-sized box, rounded up to whole coarse cells.
pub fn auto_extents(cfg: &BenchConfig) -> [usize; 3] {
    let f = 1usize << cfg.coarse_level_offset;
    box_lengths(cfg).map(|l| ((l / (cfg.spacing * f as f64)).ceil() as usize).max(1) * f)
}

/// Atom positions on stacked rings around an axis through the box center,
/// alternate rings rotated by half an atom.
pub fn atom_positions(cfg: &BenchConfig, extents: [usize; 3]) -> Vec<[f64; 3]> {
    let len = extents.map(|n| n as f64 * cfg.spacing);
    let z0 = 0.5 * (len[2] - cfg.n_rings() as f64 * cfg.ring_spacing);
    (0..cfg.atoms)
        .map(|a| {
            let (ring, j) = (a / cfg.rings, a % cfg.rings);
            let phi = 2.0 * PI * (j as f64 + 0.5 * (ring % 2) as f64) / cfg.rings as f64;
            [
                0.5 * len[0] + cfg.tube_radius * phi.cos(),
                0.5 * len[1] + cfg.tube_radius * phi.sin(),
                z0 + (ring as f64 + 0.5) * cfg.ring_spacing,
            ]
        })
        .collect()
}

/// Smooth attractive well around the tube wall.
pub fn tube_potential(cfg: &BenchConfig, mesh: &StructuredMesh) -> Potential {
    let bb = mesh.bounding_box();
    let axis = [0.5 * (bb.lo[0] + bb.hi[0]), 0.5 * (bb.lo[1] + bb.hi[1])];
    let r = cfg.tube_radius;
    Potential::Field(Arc::new(move |x: [f64; 3]| {
        let rho = (x[0] - axis[0]).hypot(x[1] - axis[1]);
        -(-0.5 * (rho - r) * (rho - r)).exp()
    }))
}

pub fn generate_mesh(cfg: &BenchConfig) -> Result<(StructuredMesh, Vec<[f64; 3]>)> {
    cfg.validate()?;
    let extents = cfg.extents.unwrap_or_else(|| auto_extents(cfg));
    let mesh = build_mesh(extents, [cfg.spacing; 3], cfg.coarse_level_offset, [0.0; 3])?;
    let atoms = atom_positions(cfg, extents);
    let bb = mesh.bounding_box();
    let short = bb
        .hi
        .iter()
        .zip(&bb.lo)
        .any(|(h, l)| h - l < 2.0 * cfg.radius);
    if short || atoms.iter().any(|x| !bb.contains(x)) {
        let suggest = auto_extents(&BenchConfig {
            vacuum: Some(cfg.vacuum().max(cfg.radius)),
            ..cfg.clone()
        });
        return Err(Error::Config(format!(
            "domain {extents:?} x {} Bohr is too small for {} atoms with radius {}; try extents {suggest:?}",
            cfg.spacing, cfg.atoms, cfg.radius
        )));
    }
    Ok((mesh, atoms))
}

/// Builds the distributed problem. Multivector values are not stored here;
/// ranks fill them with [`Problem::fill_phi`] from `cfg.seed`.
pub fn generate_problem(cfg: &BenchConfig) -> Result<GeneratedProblem> {
    let (mesh, atoms) = generate_mesh(cfg)?;
    let potential = tube_potential(cfg, &mesh);
    let spec = LocalizationSpec {
        centers: atoms.clone(),
        radius: cfg.radius,
        block_size: cfg.block_size,
        vectors_per_center: cfg.vectors_per_atom,
    };
    let problem = Problem::new(mesh, cfg.n_ranks, cfg.degree, spec)?;
    Ok(GeneratedProblem {
        problem,
        atoms,
        potential,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> BenchConfig {
        BenchConfig {
            degree: 1,
            spacing: 4.0,
            ..Default::default()
        }
    }

    #[test]
    fn ring_counts_and_columns() {
        let g = generate_problem(&BenchConfig {
            atoms: 10,
            ..small()
        })
        .unwrap();
        assert_eq!(g.atoms.len(), 10);
        assert_eq!(g.problem.n_columns(), 20);
        let z: Vec<f64> = g.atoms.iter().map(|a| a[2]).collect();
        assert!(z.iter().all(|&v| v == z[0]));

        let g = generate_problem(&BenchConfig {
            atoms: 20,
            ..small()
        })
        .unwrap();
        assert_eq!(g.problem.n_columns(), 40);
        let rings: std::collections::BTreeSet<u64> =
            g.atoms.iter().map(|a| a[2].to_bits()).collect();
        assert_eq!(rings.len(), 2);
    }

    #[test]
    fn atoms_sit_on_the_tube() {
        let cfg = BenchConfig {
            atoms: 30,
            ..small()
        };
        let (mesh, atoms) = generate_mesh(&cfg).unwrap();
        let bb = mesh.bounding_box();
        let c = [0.5 * bb.hi[0], 0.5 * bb.hi[1]];
        for a in &atoms {
            assert!(((a[0] - c[0]).hypot(a[1] - c[1]) - cfg.tube_radius).abs() < 1e-12);
            assert!(bb.contains(a));
        }
        assert_eq!(mesh.extents()[0] % 2, 0);
    }

    #[test]
    fn box_length_grows_with_atoms() {
        let a = auto_extents(&BenchConfig {
            atoms: 80,
            ..small()
        });
        let b = auto_extents(&BenchConfig {
            atoms: 160,
            ..small()
        });
        assert_eq!(a[0], b[0]);
        assert_eq!(a[1], b[1]);
        assert!(b[2] > a[2]);
    }

    #[test]
    fn too_small_domain_suggests_extents() {
        let cfg = BenchConfig {
            extents: Some([4, 4, 2]),
            ..small()
        };
        match generate_mesh(&cfg) {
            Err(Error::Config(m)) => assert!(m.contains("try extents")),
            other => panic!("unexpected {:?}", other.map(|_| ())),
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let cfg = BenchConfig {
            atoms: 20,
            ..small()
        };
        let (a, b) = (
            generate_problem(&cfg).unwrap(),
            generate_problem(&cfg).unwrap(),
        );
        assert_eq!(a.atoms, b.atoms);
        assert_eq!(a.problem.phi_pattern, b.problem.phi_pattern);
        assert_eq!(
            a.problem.phi_value(3, 5, 7).to_bits(),
            b.problem.phi_value(3, 5, 7).to_bits()
        );
    }
}

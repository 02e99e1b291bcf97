//! Diamond-cubic silicon sites around a substitutional donor and random ²⁹Si
//! placements on them.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A lattice site in nm, relative to the donor at the origin.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LatticeSite {
    pub position: [f64; 3],
}

impl LatticeSite {
    pub fn radius(&self) -> f64 {
        self.position.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    pub fn is_origin(&self) -> bool {
        self.position == [0.0; 3]
    }
}

/// Nearest-neighbour distance `√3·a₀/4`.
pub fn nearest_neighbor_distance(lattice_constant: f64) -> f64 {
    3f64.sqrt() * lattice_constant / 4.0
}

/// Every diamond-lattice site in the cube `[−L/2, L/2)³`, the donor site included.
///
/// Sites are generated on the quarter-cell integer grid, where the diamond
/// structure is the set of points whose coordinates are all even with sum
/// ≡ 0 (mod 4), or all odd with sum ≡ 3 (mod 4). The half-open cube holds
/// exactly 8 sites per conventional cell. Ordering is lexicographic by position.
pub fn enumerate_sites(cube_side: f64, lattice_constant: f64) -> Result<Vec<LatticeSite>> {
    if !(lattice_constant > 0.0 && lattice_constant.is_finite()) {
        return Err(Error::Config(format!("lattice_constant must be > 0, got {lattice_constant}")));
    }
    if !(cube_side.is_finite() && cube_side >= lattice_constant) {
        return Err(Error::Config(format!(
            "cube_side {cube_side} nm is smaller than one lattice cell ({lattice_constant} nm): empty volume"
        )));
    }
    let quarter = lattice_constant / 4.0;
    let half = cube_side / 2.0;
    // x = i·quarter ∈ [−half, half)
    let eps = 1e-9 * quarter;
    let lo = (-(half + eps) / quarter).ceil() as i64;
    let hi = ((half - eps) / quarter).ceil() as i64 - 1;
    let mut sites = Vec::new();
    for i in lo..=hi {
        for j in lo..=hi {
            for k in lo..=hi {
                if is_diamond_site(i, j, k) {
                    sites.push(LatticeSite {
                        position: [i as f64 * quarter, j as f64 * quarter, k as f64 * quarter],
                    });
                }
            }
        }
    }
    Ok(sites)
}

fn is_diamond_site(i: i64, j: i64, k: i64) -> bool {
    let parities = [i.rem_euclid(2), j.rem_euclid(2), k.rem_euclid(2)];
    let sum = (i + j + k).rem_euclid(4);
    match parities {
        [0, 0, 0] => sum == 0,
        [1, 1, 1] => sum == 3,
        _ => false,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImpurityPlacement {
    pub sites: Vec<LatticeSite>,
    /// Seed that produced this placement (after any cap resampling).
    pub seed: u64,
    pub concentration: f64,
    /// Number of draws rejected by the spin cap before this one.
    pub rejected: u32,
}

impl ImpurityPlacement {
    pub fn len(&self) -> usize {
        self.sites.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sites.is_empty()
    }

    /// CSV dump with header `x_nm,y_nm,z_nm`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["x_nm", "y_nm", "z_nm"])?;
        for s in &self.sites {
            w.write_record(s.position.iter().map(|x| format!("{x:.6}")))?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Occupies each non-donor site independently with probability `concentration`.
pub fn sample_impurities(sites: &[LatticeSite], concentration: f64, seed: u64) -> ImpurityPlacement {
    assert!(
        (0.0..=1.0).contains(&concentration),
        "concentration must lie in [0, 1], got {concentration}"
    );
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let occupied = sites
        .iter()
        .filter(|s| !s.is_origin())
        .filter(|_| rng.gen::<f64>() < concentration)
        .copied()
        .collect();
    ImpurityPlacement { sites: occupied, seed, concentration, rejected: 0 }
}

/// Draws placements until one holds at most `max_spins` impurities.
///
/// Rejected draws are retried with the sub-seed `derive_seed(seed, attempt)`.
/// Gives up with a cap error after `max_attempts` draws.
pub fn sample_capped(
    sites: &[LatticeSite],
    concentration: f64,
    seed: u64,
    max_spins: usize,
    max_attempts: u32,
) -> Result<ImpurityPlacement> {
    let mut attempt_seed = seed;
    for attempt in 0..max_attempts {
        let mut placement = sample_impurities(sites, concentration, attempt_seed);
        if placement.len() <= max_spins {
            placement.rejected = attempt;
            return Ok(placement);
        }
        log::info!(
            "placement seed {attempt_seed:#x} has {} spins > cap {max_spins}; resampling",
            placement.len()
        );
        attempt_seed = derive_seed(seed, u64::from(attempt) + 1);
    }
    Err(Error::Cap(format!(
        "no placement with <= {max_spins} spins at concentration {concentration} after {max_attempts} draws"
    )))
}

/// Independent per-item seed stream from a master seed (SplitMix64 finalizer).
pub fn derive_seed(master: u64, index: u64) -> u64 {
    let mut z = master ^ index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

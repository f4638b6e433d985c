//! Synthetic encoder features: a dense patch grid plus a compact summary
//! built as mean-pools over a seeded random partition of the patches, with
//! optional partition centroids for position-aligned windows.

use crate::runconfig::RunConfig;
use crate::{dltn_io, failed, CliResult};
use deltaproj_core::{Rng, Tensor};
use std::path::{Path, PathBuf};

pub const Z_FILE: &str = "zpatch.dltn";
pub const SUMMARY_FILE: &str = "summary.dltn";
pub const POSITIONS_FILE: &str = "positions.dltn";

// Stream tags keep the patch draw and the partition draw independent of
// each other while both stay functions of the config seed alone.
const TAG_PATCHES: u64 = 1;
const TAG_PARTITION: u64 = 2;

#[derive(Debug)]
pub struct FixtureTensors {
    /// `[N x C]` patch features over the full input grid.
    pub z: Tensor,
    /// `[L_m x C]`, row l the mean of partition l's rows of `z`.
    pub summary: Tensor,
    /// `[L_m x 2]` partition centroids as (row, col) in [0, 1].
    pub positions: Tensor,
}

/// Shuffle `0..n` and cut it into `groups` contiguous chunks of near-equal
/// size. Every index lands in exactly one group.
pub fn partition(seed: u64, n: usize, groups: usize) -> Vec<Vec<usize>> {
    let perm = Rng::stream(seed, TAG_PARTITION).permutation(n);
    (0..groups)
        .map(|g| perm[g * n / groups..(g + 1) * n / groups].to_vec())
        .collect()
}

pub fn synthesize(cfg: &RunConfig) -> CliResult<FixtureTensors> {
    let (gh, gw) = cfg.in_grid();
    let (n, c, l_m) = (gh * gw, cfg.feature_dim, cfg.memory_tokens);
    if l_m > n {
        return Err(failed(format!(
            "config error: memory_tokens {l_m} exceeds the {n} patch tokens"
        )));
    }
    let z = Rng::stream(cfg.seed, TAG_PATCHES).fill_symmetric(&[n, c], 1.0);

    let groups = partition(cfg.seed, n, l_m);
    let mut summary = vec![0.0; l_m * c];
    let mut positions = vec![0.0; l_m * 2];
    for (g, members) in groups.iter().enumerate() {
        let m = members.len() as f64;
        for &ix in members {
            for k in 0..c {
                summary[g * c + k] += z.data()[ix * c + k] / m;
            }
            positions[g * 2] += (ix / gw) as f64 / m;
            positions[g * 2 + 1] += (ix % gw) as f64 / m;
        }
        // Cell centers, normalized to the unit square.
        positions[g * 2] = (positions[g * 2] + 0.5) / gh as f64;
        positions[g * 2 + 1] = (positions[g * 2 + 1] + 0.5) / gw as f64;
    }
    Ok(FixtureTensors {
        z,
        summary: Tensor::new(&[l_m, c], summary).map_err(|e| failed(e.to_string()))?,
        positions: Tensor::new(&[l_m, 2], positions).map_err(|e| failed(e.to_string()))?,
    })
}

/// Write the fixture set into `dir`, returning the paths written.
pub fn write_all(cfg: &RunConfig, dir: &Path, with_positions: bool) -> CliResult<Vec<PathBuf>> {
    std::fs::create_dir_all(dir)
        .map_err(|e| failed(format!("cannot create {}: {e}", dir.display())))?;
    let f = synthesize(cfg)?;
    let mut written = Vec::new();
    for (name, t) in [(Z_FILE, &f.z), (SUMMARY_FILE, &f.summary)] {
        let path = dir.join(name);
        dltn_io::write_tensor(&path, t)?;
        written.push(path);
    }
    if with_positions {
        let path = dir.join(POSITIONS_FILE);
        dltn_io::write_tensor(&path, &f.positions)?;
        written.push(path);
    }
    Ok(written)
}

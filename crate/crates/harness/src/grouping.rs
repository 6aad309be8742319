//! Undivided versus time-division grouping on the same channel draws.

use sofdma::params::{derive_simulation_params, plan_grouping, HashWidthMode};

use crate::config::{ConfigError, ExperimentConfig};
use crate::stats::PairedTest;
use crate::sweep::{run_points, RunError, SweepRow};
use crate::trial::{group_edges, Arrangement, Point};

/// Comparison at one lowest-SNR point.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupingRow {
    pub undivided: SweepRow,
    pub divided: SweepRow,
    /// Paired test of "divided errs more often than undivided".
    pub test: PairedTest,
}

/// Codelengths of both arrangements. With shared hash width the divided
/// total does not depend on how devices split between groups.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Codelengths {
    pub undivided: u64,
    pub divided: Option<u64>,
}

pub fn codelengths(cfg: &ExperimentConfig) -> Result<Codelengths, RunError> {
    let dyn_db = cfg.dynamic_range_db[0];
    let undivided = derive_simulation_params(cfg.k, cfg.n, cfg.m, cfg.sigma2(cfg.snr_grid[0]), cfg.a_lo, cfg.a_hi(dyn_db))?
        .with_c2(cfg.c2[0])
        .codelength()?;
    let divided = match &cfg.grouping {
        Some(g) if g.hash_width == HashWidthMode::Shared => {
            let edges = group_edges(cfg, dyn_db);
            let ranges: Vec<(f64, f64)> = edges.windows(2).map(|w| (w[0], w[1])).collect();
            let groups = ranges.len();
            // Any split works in shared mode; spread K evenly.
            let mut sizes = vec![cfg.k / groups; groups];
            sizes[0] += cfg.k - sizes.iter().sum::<usize>();
            let plan = plan_grouping(
                cfg.k,
                cfg.n,
                cfg.m,
                cfg.sigma2(cfg.snr_grid[0]),
                &ranges,
                &sizes,
                &g.c2_per_group[..groups],
                g.hash_width,
            )?;
            Some(plan.total_codelength)
        }
        _ => None,
    };
    Ok(Codelengths { undivided, divided })
}

/// Run both arrangements at every SNR of the grid on the first dynamic range.
pub fn run_grouping_experiment(cfg: &ExperimentConfig) -> Result<Vec<GroupingRow>, RunError> {
    let Some(g) = &cfg.grouping else {
        return Err(RunError::Model(sofdma::Error::Unset("grouping")));
    };
    let dyn_db = cfg.dynamic_range_db[0];
    if group_edges(cfg, dyn_db).len() - 1 != g.c2_per_group.len() {
        return Err(RunError::Model(sofdma::Error::Dimension(format!(
            "{} groups within {dyn_db} dB but {} group_c2 entries",
            group_edges(cfg, dyn_db).len() - 1,
            g.c2_per_group.len()
        ))));
    }
    let points: Vec<Point> = cfg
        .snr_grid
        .iter()
        .flat_map(|&s| {
            [Arrangement::Undivided, Arrangement::Divided].map(|a| Point { snr_db: s, dyn_idx: 0, arrangement: a })
        })
        .collect();
    let records = run_points(cfg, &points)?;
    Ok(records
        .chunks(2)
        .zip(points.chunks(2))
        .map(|(recs, pts)| {
            let (und, div) = (&recs[0], &recs[1]);
            let div_only = und.iter().zip(div).filter(|(u, d)| d.frame_error && !u.frame_error).count() as u64;
            let und_only = und.iter().zip(div).filter(|(u, d)| u.frame_error && !d.frame_error).count() as u64;
            GroupingRow {
                undivided: SweepRow::aggregate(&pts[0], dyn_db, und),
                divided: SweepRow::aggregate(&pts[1], dyn_db, div),
                test: PairedTest::new(div_only, und_only),
            }
        })
        .collect())
}

/// Reject a grouping run on a configuration without grouping inputs.
pub fn require_grouping(cfg: &ExperimentConfig) -> Result<(), ConfigError> {
    if cfg.grouping.is_none() {
        return Err(ConfigError::Invalid("grouping needs group_split_db / group_c2 (or mode = fig2)".into()));
    }
    Ok(())
}

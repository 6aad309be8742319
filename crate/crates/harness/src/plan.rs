//! Parameter and codelength tables.

use std::fmt::Write as _;

use sofdma::params::derive_simulation_params;

use crate::config::ExperimentConfig;
use crate::grouping::codelengths;
use crate::sweep::RunError;

/// Reference codelengths for the K = 20, 40 dB time-division example.
pub const REFERENCE_UNDIVIDED: u64 = 31640;
pub const REFERENCE_DIVIDED: u64 = 29000;

#[derive(Debug, Clone, PartialEq)]
pub struct PlanRow {
    pub dyn_db: f64,
    pub b: usize,
    pub c0: usize,
    pub c1: usize,
    pub c2: usize,
    pub codelength: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Plan {
    pub rows: Vec<PlanRow>,
    pub undivided: u64,
    pub divided: Option<u64>,
    pub table: Vec<(&'static str, String, &'static str)>,
}

pub fn plan(cfg: &ExperimentConfig) -> Result<Plan, RunError> {
    let sigma2 = cfg.sigma2(cfg.snr_grid[0]);
    let mut rows = Vec::new();
    let mut table = Vec::new();
    for (i, (&d, &c2)) in cfg.dynamic_range_db.iter().zip(&cfg.c2).enumerate() {
        let mut p = derive_simulation_params(cfg.k, cfg.n, cfg.m, sigma2, cfg.a_lo, cfg.a_hi(d))?.with_c2(c2);
        if let Some(rho) = cfg.rho {
            p = p.with_rho(rho);
        }
        if i == 0 {
            table = p.table();
        }
        rows.push(PlanRow { dyn_db: d, b: p.b, c0: p.c0, c1: p.c1, c2, codelength: p.codelength()? });
    }
    let c = codelengths(cfg)?;
    Ok(Plan { rows, undivided: c.undivided, divided: c.divided, table })
}

fn pct(x: u64, reference: u64) -> f64 {
    100.0 * (x as f64 - reference as f64) / reference as f64
}

impl Plan {
    pub fn render(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{:<12} {:>16} {}", "parameter", "value", "description");
        for (k, v, d) in &self.table {
            let _ = writeln!(s, "{k:<12} {v:>16} {d}");
        }
        let _ = writeln!(s);
        let _ = writeln!(s, "{:>8} {:>6} {:>4} {:>4} {:>7} {:>11}", "dyn_db", "B", "C0", "C1", "C2", "codelength");
        for r in &self.rows {
            let _ = writeln!(s, "{:>8} {:>6} {:>4} {:>4} {:>7} {:>11}", r.dyn_db, r.b, r.c0, r.c1, r.c2, r.codelength);
        }
        let _ = writeln!(s);
        let _ = writeln!(
            s,
            "undivided codelength {} (reference {REFERENCE_UNDIVIDED}, {:+.3}%)",
            self.undivided,
            pct(self.undivided, REFERENCE_UNDIVIDED)
        );
        if let Some(d) = self.divided {
            let _ = writeln!(s, "divided codelength {d} (reference {REFERENCE_DIVIDED}, {:+.3}%)", pct(d, REFERENCE_DIVIDED));
        }
        s
    }

    pub fn csv(&self) -> String {
        let mut s = String::from("dyn_db,b,c0,c1,c2,codelength\n");
        for r in &self.rows {
            let _ = writeln!(s, "{},{},{},{},{},{}", r.dyn_db, r.b, r.c0, r.c1, r.c2, r.codelength);
        }
        s
    }
}

//! Error-rate sweeps over lowest SNR and dynamic range.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use crate::config::ExperimentConfig;
use crate::stats::{wilson, Z95};
use crate::trial::{run_trial, Arrangement, Point, TrialRecord};

#[derive(Debug, thiserror::Error)]
pub enum RunError {
    #[error(transparent)]
    Model(#[from] sofdma::Error),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {source}")]
    Csv { path: PathBuf, source: csv::Error },
    #[error("worker pool: {0}")]
    Pool(#[from] rayon::ThreadPoolBuildError),
}

pub(crate) fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> RunError + '_ {
    move |source| RunError::Io { path: path.to_path_buf(), source }
}

/// One CSV row.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub snr_db: f64,
    pub dyn_db: f64,
    pub arrangement: Arrangement,
    pub trials: u64,
    pub frame_errors: u64,
    pub error_rate: f64,
    pub wilson_lo: f64,
    pub wilson_hi: f64,
    /// Mean `|tau_hat - tau| / T` over genuinely recovered devices; NaN if none.
    pub mean_delay_err: f64,
    pub codelength: u64,
    pub misses: u64,
    pub false_alarms: u64,
    pub delay_failures: u64,
    pub active_devices: u64,
    pub degenerate_trials: u64,
}

impl SweepRow {
    pub fn aggregate(point: &Point, dyn_db: f64, records: &[TrialRecord]) -> Self {
        let trials = records.len() as u64;
        let frame_errors = records.iter().filter(|r| r.frame_error).count() as u64;
        let (wilson_lo, wilson_hi) = wilson(frame_errors, trials, Z95);
        let err_sum: f64 = records.iter().map(|r| r.delay_err_sum).sum();
        let err_count: usize = records.iter().map(|r| r.delay_err_count).sum();
        Self {
            snr_db: point.snr_db,
            dyn_db,
            arrangement: point.arrangement,
            trials,
            frame_errors,
            error_rate: frame_errors as f64 / trials as f64,
            wilson_lo,
            wilson_hi,
            mean_delay_err: if err_count > 0 { err_sum / err_count as f64 } else { f64::NAN },
            codelength: records.iter().map(|r| r.codelength).max().unwrap_or(0),
            misses: records.iter().map(|r| r.miss_count as u64).sum(),
            false_alarms: records.iter().map(|r| r.false_count as u64).sum(),
            delay_failures: records.iter().map(|r| r.delay_failures as u64).sum(),
            active_devices: records.iter().map(|r| r.k_active as u64).sum(),
            degenerate_trials: records.iter().filter(|r| r.degenerate).count() as u64,
        }
    }
}

/// Run every trial of every point on a pool of `threads` workers (all
/// cores when `None`). Results come back in trial order per point.
pub fn run_points(cfg: &ExperimentConfig, points: &[Point]) -> Result<Vec<Vec<TrialRecord>>, RunError> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = cfg.threads {
        builder = builder.num_threads(n);
    }
    let pool = builder.build()?;
    let trials = cfg.trials as u64;
    pool.install(|| {
        points
            .iter()
            .map(|pt| (0..trials).into_par_iter().map(|i| run_trial(cfg, pt, i)).collect::<sofdma::Result<Vec<_>>>())
            .collect::<sofdma::Result<Vec<_>>>()
    })
    .map_err(RunError::from)
}

/// Undivided error rate for every dynamic range and lowest SNR.
pub fn run_sweep(cfg: &ExperimentConfig) -> Result<Vec<SweepRow>, RunError> {
    let points: Vec<Point> = (0..cfg.dynamic_range_db.len())
        .flat_map(|d| cfg.snr_grid.iter().map(move |&s| Point { snr_db: s, dyn_idx: d, arrangement: Arrangement::Undivided }))
        .collect();
    let records = run_points(cfg, &points)?;
    Ok(points
        .iter()
        .zip(&records)
        .map(|(pt, recs)| SweepRow::aggregate(pt, cfg.dynamic_range_db[pt.dyn_idx], recs))
        .collect())
}

pub const CSV_HEADER: [&str; 10] = [
    "snr_db",
    "dyn_db",
    "arrangement",
    "trials",
    "frame_errors",
    "error_rate",
    "wilson_lo",
    "wilson_hi",
    "mean_delay_err",
    "codelength",
];

/// CSV text for `rows`.
pub fn csv_string(rows: &[SweepRow]) -> Result<String, csv::Error> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(CSV_HEADER)?;
    for r in rows {
        w.write_record([
            r.snr_db.to_string(),
            r.dyn_db.to_string(),
            r.arrangement.name().to_string(),
            r.trials.to_string(),
            r.frame_errors.to_string(),
            r.error_rate.to_string(),
            r.wilson_lo.to_string(),
            r.wilson_hi.to_string(),
            r.mean_delay_err.to_string(),
            r.codelength.to_string(),
        ])?;
    }
    let bytes = w.into_inner().map_err(|e| e.into_error())?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

pub fn write_csv(path: &Path, rows: &[SweepRow]) -> Result<(), RunError> {
    let text = csv_string(rows).map_err(|source| RunError::Csv { path: path.to_path_buf(), source })?;
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    std::fs::write(path, text).map_err(io_err(path))
}

/// Error rate against lowest SNR, log-scale y axis, one polyline per
/// (dynamic range, arrangement).
pub fn svg_plot(rows: &[SweepRow]) -> String {
    const W: f64 = 640.0;
    const H: f64 = 420.0;
    const PAD: f64 = 60.0;
    let floor: f64 = 1e-3;
    let xs: Vec<f64> = rows.iter().map(|r| r.snr_db).collect();
    let (x0, x1) = xs.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &x| (a.min(x), b.max(x)));
    let x1 = if x1 > x0 { x1 } else { x0 + 1.0 };
    let sx = |x: f64| PAD + (x - x0) / (x1 - x0) * (W - 2.0 * PAD);
    let (ly0, ly1) = (floor.log10(), 0.0);
    let sy = |y: f64| H - PAD - (y.max(floor).log10() - ly0) / (ly1 - ly0) * (H - 2.0 * PAD);

    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" font-family="sans-serif" font-size="12">"#);
    let _ = writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<path d="M{PAD} {PAD} V{} H{}" fill="none" stroke="black"/>"#,
        H - PAD,
        W - PAD
    );
    for e in 0..=3 {
        let y = 10f64.powi(-e);
        let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="end">1e-{e}</text>"#, PAD - 6.0, sy(y) + 4.0);
    }
    for &x in &xs {
        let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">{x}</text>"#, sx(x), H - PAD + 16.0);
    }
    let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">lowest SNR (dB)</text>"#, W / 2.0, H - 16.0);
    let _ = writeln!(
        s,
        r#"<text x="16" y="{}" transform="rotate(-90 16 {})" text-anchor="middle">frame error rate</text>"#,
        H / 2.0,
        H / 2.0
    );

    let colours = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"];
    let mut curves: Vec<(f64, Arrangement)> = Vec::new();
    for r in rows {
        if !curves.contains(&(r.dyn_db, r.arrangement)) {
            curves.push((r.dyn_db, r.arrangement));
        }
    }
    for (i, &(d, a)) in curves.iter().enumerate() {
        let colour = colours[i % colours.len()];
        let pts: Vec<String> = rows
            .iter()
            .filter(|r| r.dyn_db == d && r.arrangement == a)
            .map(|r| format!("{:.1},{:.1}", sx(r.snr_db), sy(r.error_rate)))
            .collect();
        let _ = writeln!(s, r#"<polyline points="{}" fill="none" stroke="{colour}" stroke-width="2"/>"#, pts.join(" "));
        let code = rows.iter().find(|r| r.dyn_db == d && r.arrangement == a).map_or(0, |r| r.codelength);
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" fill="{colour}">{d} dB {} (length {code})</text>"#,
            W - PAD - 200.0,
            PAD + 16.0 * (i as f64 + 1.0),
            a.name()
        );
    }
    s.push_str("</svg>\n");
    s
}

pub fn write_svg(path: &Path, rows: &[SweepRow]) -> Result<(), RunError> {
    std::fs::write(path, svg_plot(rows)).map_err(io_err(path))
}

/// Least-squares slope of `log10(max(rate, floor))` against SNR.
pub fn log_rate_slope(rows: &[SweepRow], floor: f64) -> f64 {
    let n = rows.len() as f64;
    let xs: Vec<f64> = rows.iter().map(|r| r.snr_db).collect();
    let ys: Vec<f64> = rows.iter().map(|r| r.error_rate.max(floor).log10()).collect();
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    if sxx == 0.0 {
        0.0
    } else {
        sxy / sxx
    }
}

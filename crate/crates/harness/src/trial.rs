//! One Monte Carlo frame: draw devices and channels, synthesize, peel.

use std::collections::HashSet;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use sofdma::channel::{
    draw_channel, draw_delay, noise_matrix, synth_frequency_noiseless, synth_subframe2, DeviceChannel, Observation,
    PathLoss,
};
use sofdma::codebook::{Codebook, DeviceCodeword};
use sofdma::params::{derive_simulation_params, HashWidthMode};
use sofdma::sic::{peel, DecodeReport, GroundTruth, OutageAccounting, PeelOptions};
use sofdma::SystemParams64;

use crate::config::ExperimentConfig;

/// Independent stream for `(seed, key, trial)`. The key selects the
/// dynamic-range point; SNR points and arrangements share it on purpose so
/// that they are compared on the same channel draws.
pub fn trial_rng(seed: u64, key: u64, trial: u64) -> ChaCha8Rng {
    let mut bytes = [0u8; 32];
    bytes[..8].copy_from_slice(&seed.to_le_bytes());
    bytes[8..16].copy_from_slice(&key.to_le_bytes());
    let mut rng = ChaCha8Rng::from_seed(bytes);
    rng.set_stream(trial);
    rng
}

/// `k` distinct identities uniform on `0..n`.
pub fn draw_ids<R: Rng + ?Sized>(rng: &mut R, k: usize, n: u64) -> Vec<u64> {
    assert!(k as u64 <= n, "cannot draw {k} distinct ids from {n}");
    let mut seen = HashSet::with_capacity(k);
    let mut ids = Vec::with_capacity(k);
    while ids.len() < k {
        let id = rng.random_range(0..n);
        if seen.insert(id) {
            ids.push(id);
        }
    }
    ids
}

/// Synthesize one frame with known noise and peel it.
pub fn run_frame<R: Rng + ?Sized>(
    p: &SystemParams64,
    codebook: &Codebook,
    devices: &[DeviceCodeword],
    channels: &[DeviceChannel<f64>],
    rng: &mut R,
    opts: PeelOptions,
) -> sofdma::Result<DecodeReport<f64>> {
    let mut y = synth_frequency_noiseless(devices, channels, p)?;
    let w = noise_matrix(p, rng);
    y.add_assign(&w);
    let obs = Observation { y, waveform2: synth_subframe2(devices, channels, p)?, noise_psd: p.sigma2 };
    let truth = GroundTruth { devices, channels, noise: Some(&w) };
    peel(&obs, p, codebook, rng, opts, Some(truth))
}

/// Layout of one frame (or group of frames) being simulated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Arrangement {
    Undivided,
    Divided,
}

impl Arrangement {
    pub fn name(self) -> &'static str {
        match self {
            Self::Undivided => "undivided",
            Self::Divided => "divided",
        }
    }
}

/// One point of an experiment grid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Point {
    pub snr_db: f64,
    /// Index into `dynamic_range_db` / `c2`.
    pub dyn_idx: usize,
    pub arrangement: Arrangement,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrialRecord {
    pub trial: u64,
    pub seed: u64,
    pub k_active: usize,
    pub frame_error: bool,
    pub miss_count: usize,
    pub false_count: usize,
    pub delay_failures: usize,
    /// Sum and count of `|tau_hat - tau|` over genuine recoveries.
    pub delay_err_sum: f64,
    pub delay_err_count: usize,
    /// Some frame hit a duplicate subcarrier set or a singleton tie.
    pub degenerate: bool,
    pub codelength: u64,
    pub wall_time: Duration,
}

impl TrialRecord {
    pub fn mean_delay_err(&self) -> Option<f64> {
        (self.delay_err_count > 0).then(|| self.delay_err_sum / self.delay_err_count as f64)
    }

    fn absorb(&mut self, rep: &DecodeReport<f64>) {
        self.frame_error |= rep.frame_error;
        self.miss_count += rep.miss_count;
        self.false_count += rep.false_count;
        self.delay_failures += rep.delay_failures;
        for e in rep.recovered.iter().filter_map(|r| r.delay_error) {
            self.delay_err_sum += e.abs();
            self.delay_err_count += 1;
        }
        self.degenerate |= rep.degenerate.any();
    }
}

fn undivided_params(cfg: &ExperimentConfig, point: &Point) -> sofdma::Result<SystemParams64> {
    let dyn_db = cfg.dynamic_range_db[point.dyn_idx];
    let mut p = derive_simulation_params(cfg.k, cfg.n, cfg.m, cfg.sigma2(point.snr_db), cfg.a_lo, cfg.a_hi(dyn_db))?
        .with_c2(cfg.c2[point.dyn_idx]);
    if let Some(rho) = cfg.rho {
        p = p.with_rho(rho);
    }
    Ok(p)
}

/// Amplitude boundaries of the time-division groups.
pub fn group_edges(cfg: &ExperimentConfig, dyn_db: f64) -> Vec<f64> {
    let splits = cfg.grouping.as_ref().map(|g| g.split_db.clone()).unwrap_or_default();
    let mut edges = vec![cfg.a_lo];
    edges.extend(splits.iter().filter(|&&s| s < dyn_db).map(|&s| cfg.a_lo * 10f64.powf(s / 20.0)));
    edges.push(cfg.a_hi(dyn_db));
    edges
}

fn group_params(cfg: &ExperimentConfig, point: &Point, lo: f64, hi: f64, members: usize, g: usize) -> sofdma::Result<SystemParams64> {
    let grouping = cfg.grouping.as_ref().expect("divided arrangement needs grouping");
    let k_hash = match grouping.hash_width {
        HashWidthMode::Shared => cfg.k,
        HashWidthMode::PerGroup => members.max(2),
    };
    let mut p = derive_simulation_params(k_hash, cfg.n, cfg.m, cfg.sigma2(point.snr_db), lo, hi)?
        .with_c2(grouping.c2_per_group[g]);
    if let Some(rho) = cfg.rho {
        p = p.with_rho(rho);
    }
    Ok(p)
}

/// Run trial `trial` of `point`. Deterministic in `(cfg, point, trial)`.
pub fn run_trial(cfg: &ExperimentConfig, point: &Point, trial: u64) -> sofdma::Result<TrialRecord> {
    let start = Instant::now();
    let dyn_db = cfg.dynamic_range_db[point.dyn_idx];
    let (a_lo, a_hi) = (cfg.a_lo, cfg.a_hi(dyn_db));
    let mut rng = trial_rng(cfg.seed, point.dyn_idx as u64, trial);

    let mut pl = PathLoss::matched(a_lo, a_hi, cfg.alpha)?;
    pl.fading = cfg.fading;
    let ids = draw_ids(&mut rng, cfg.k, cfg.n);
    let channels: Vec<DeviceChannel<f64>> = (0..cfg.k)
        .map(|_| {
            let mut ch = draw_channel(&mut rng, &pl, a_lo, a_hi);
            ch.tau = draw_delay(&mut rng, cfg.m, 1.0);
            ch
        })
        .collect();
    let k_active = channels.iter().filter(|c| !c.outage).count();
    let outages = cfg.k - k_active;
    let opts = PeelOptions { noise_mode: cfg.noise_mode, outage: OutageAccounting::Exclude };

    let mut rec = TrialRecord {
        trial,
        seed: cfg.seed,
        k_active,
        frame_error: false,
        miss_count: 0,
        false_count: 0,
        delay_failures: 0,
        delay_err_sum: 0.0,
        delay_err_count: 0,
        degenerate: false,
        codelength: 0,
        wall_time: Duration::ZERO,
    };

    match point.arrangement {
        Arrangement::Undivided => {
            let p = undivided_params(cfg, point)?;
            let cb = Codebook::new(&p, cfg.public_seed)?;
            let devices = ids.iter().map(|&id| cb.codeword(id, 0)).collect::<sofdma::Result<Vec<_>>>()?;
            let rep = run_frame(&p, &cb, &devices, &channels, &mut rng, opts)?;
            rec.absorb(&rep);
            rec.codelength = p.codelength()?;
        }
        Arrangement::Divided => {
            let edges = group_edges(cfg, dyn_db);
            for g in 0..edges.len() - 1 {
                let (lo, hi) = (edges[g], edges[g + 1]);
                let last = g + 2 == edges.len();
                let members: Vec<usize> = (0..cfg.k)
                    .filter(|&i| {
                        let ch = &channels[i];
                        let x = ch.a.norm();
                        !ch.outage && x > lo && (x <= hi || last)
                    })
                    .collect();
                let p = group_params(cfg, point, lo, hi, members.len(), g)?;
                rec.codelength += p.codelength()?;
                if members.is_empty() {
                    continue;
                }
                let cb = Codebook::new(&p, cfg.public_seed)?;
                let devices =
                    members.iter().map(|&i| cb.codeword(ids[i], 0)).collect::<sofdma::Result<Vec<_>>>()?;
                let chans: Vec<_> = members.iter().map(|&i| channels[i]).collect();
                let rep = run_frame(&p, &cb, &devices, &chans, &mut rng, opts)?;
                rec.absorb(&rep);
            }
        }
    }
    if cfg.outage == OutageAccounting::Include && outages > 0 {
        rec.miss_count += outages;
        rec.frame_error = true;
    }
    rec.wall_time = start.elapsed();
    Ok(rec)
}

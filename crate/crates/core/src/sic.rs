//! Peeling decoder with successive interference cancellation.
//!
//! Each sweep classifies every subcarrier, then walks the singletons in
//! ascending index order: decode the device, estimate its delay from
//! subframe 2, estimate its amplitude on the singleton subcarrier and
//! subtract its reconstructed signal from all of its subcarriers. Sweeps
//! repeat until one recovers nothing.

use std::collections::{HashMap, HashSet};

use num_complex::Complex;
use rand::Rng;

use crate::channel::{CMatrix, DeviceChannel, Observation};
use crate::codebook::{Codebook, DeviceCodeword, Reject};
use crate::delay::{estimate_delay, fallback_lambda, refine_estimate, NoiseMode, StatisticNoise};
use crate::detector::{classify, MultitonCause, VerdictKind};
use crate::error::{Error, Result};
use crate::params::SystemParams;
use crate::scalar::{cis, Real};

fn steering<F: Real>(b: usize, tau: F, p: &SystemParams<F>) -> Complex<F> {
    cis(-F::TAU() * F::of_usize(b) * tau / (F::of_usize(p.b) * p.t))
}

/// `a_hat = (1/C) g^H Y_b e^{i 2 pi b tau_hat / (B T)}`.
pub fn estimate_amplitude<F: Real>(y_b: &[Complex<F>], g: &[i8], b: usize, tau_hat: F, p: &SystemParams<F>) -> Complex<F> {
    assert_eq!(y_b.len(), g.len(), "observation and sequence lengths differ");
    let c = F::of_usize(g.len());
    let proj = y_b
        .iter()
        .zip(g)
        .fold(Complex::new(F::zero(), F::zero()), |acc, (y, &s)| acc + *y * F::of(s as f64));
    proj / c * steering(b, tau_hat, p).conj()
}

/// `Y_b' <- Y_b' - a_hat e^{-i 2 pi b' tau_hat / (B T)} g`.
pub fn cancel<F: Real>(y_b: &mut [Complex<F>], a_hat: Complex<F>, tau_hat: F, g: &[i8], b: usize, p: &SystemParams<F>) {
    assert_eq!(y_b.len(), g.len(), "observation and sequence lengths differ");
    let amp = a_hat * steering(b, tau_hat, p);
    for (y, &s) in y_b.iter_mut().zip(g) {
        *y = *y - amp * F::of(s as f64);
    }
}

/// Whether devices in outage count against the frame.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum OutageAccounting {
    /// Outage devices are silent and not expected to be recovered.
    #[default]
    Exclude,
    /// Outage devices are counted as misses.
    Include,
}

impl std::str::FromStr for OutageAccounting {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "exclude" => Ok(Self::Exclude),
            "include" => Ok(Self::Include),
            other => Err(Error::InvalidParam { name: "outage_accounting", reason: format!("unknown mode `{other}`") }),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct PeelOptions {
    pub noise_mode: NoiseMode,
    pub outage: OutageAccounting,
}

/// What was transmitted; enables miss/false accounting and the residual
/// diagnostics.
#[derive(Debug, Clone, Copy)]
pub struct GroundTruth<'a, F> {
    pub devices: &'a [DeviceCodeword],
    pub channels: &'a [DeviceChannel<F>],
    /// Subframe 0/1 noise actually added, if known.
    pub noise: Option<&'a CMatrix<F>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RecoveredDevice<F> {
    pub id: u64,
    pub message: u64,
    pub a_hat: Complex<F>,
    pub tau_hat: F,
    /// Sweep (1-based) in which the device was recovered.
    pub iteration: usize,
    /// Singleton subcarrier it was decoded on.
    pub subcarrier: usize,
    /// False when the crude delay search declared a failure.
    pub delay_ok: bool,
    /// `tau_hat - tau` when the device is genuine.
    pub delay_error: Option<F>,
    /// `g^H W_b / C` on the singleton subcarrier, when the noise is known.
    pub noise_error: Option<Complex<F>>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct IterationCounts {
    pub zerotons: usize,
    pub singletons: usize,
    pub multitons: usize,
    pub recovered: usize,
}

/// Events under which peeling and the oracle may legitimately disagree.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Degenerate {
    /// Active device pairs with identical subcarrier sets.
    pub duplicate_sets: usize,
    /// Decoding ties on subcarriers that truly held one uncancelled device.
    pub singleton_ties: usize,
}

impl Degenerate {
    pub fn any(&self) -> bool {
        self.duplicate_sets > 0 || self.singleton_ties > 0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecodeReport<F> {
    pub recovered: Vec<RecoveredDevice<F>>,
    pub frame_error: bool,
    pub miss_count: usize,
    pub false_count: usize,
    pub delay_failures: usize,
    pub iteration_log: Vec<IterationCounts>,
    /// Largest `|V_b^c|` after each sweep, where `V` is the accumulated
    /// cancellation error. Empty without ground truth.
    pub residual_trace: Vec<F>,
    /// `sqrt(eta) / (beta1 log K)`.
    pub residual_bound: F,
    /// Every genuine recovery had `|e| <= varrho / L^2` and `|eps| <= rho / L^2`.
    pub bound_premise: bool,
    /// Trace entries above `residual_bound` (only counted under the premise).
    pub bound_violations: usize,
    pub degenerate: Degenerate,
}

impl<F: Real> DecodeReport<F> {
    pub fn recovered_ids(&self) -> HashSet<u64> {
        self.recovered.iter().map(|r| r.id).collect()
    }
}

struct Truth<'a, F> {
    by_id: HashMap<u64, (&'a DeviceCodeword, &'a DeviceChannel<F>)>,
    noise: Option<&'a CMatrix<F>>,
    outages: usize,
    /// Active devices using each subcarrier, not yet cancelled.
    occupancy: Vec<usize>,
}

impl<'a, F: Real> Truth<'a, F> {
    fn new(gt: &GroundTruth<'a, F>, p: &SystemParams<F>) -> Result<Self> {
        if gt.devices.len() != gt.channels.len() {
            return Err(Error::Dimension(format!(
                "{} devices but {} channels",
                gt.devices.len(),
                gt.channels.len()
            )));
        }
        let mut by_id = HashMap::new();
        let mut occupancy = vec![0; p.b];
        let mut outages = 0;
        for (dev, ch) in gt.devices.iter().zip(gt.channels) {
            if ch.outage {
                outages += 1;
                continue;
            }
            by_id.insert(dev.id, (dev, ch));
            for &b in &dev.subcarriers {
                occupancy[b] += 1;
            }
        }
        Ok(Self { by_id, noise: gt.noise, outages, occupancy })
    }
}

/// Count unordered pairs of active devices with the same subcarrier set.
pub fn duplicate_set_pairs(sets: &[Vec<usize>]) -> usize {
    let mut seen: HashMap<Vec<usize>, usize> = HashMap::new();
    for s in sets {
        let mut key = s.clone();
        key.sort_unstable();
        *seen.entry(key).or_default() += 1;
    }
    seen.values().map(|&n| n * (n - 1) / 2).sum()
}

/// Run the peeling decoder on one observation.
pub fn peel<F: Real, R: Rng + ?Sized>(
    obs: &Observation<F>,
    p: &SystemParams<F>,
    codebook: &Codebook,
    rng: &mut R,
    opts: PeelOptions,
    truth: Option<GroundTruth<'_, F>>,
) -> Result<DecodeReport<F>> {
    if obs.y.rows() != p.b || obs.y.cols() != p.c() {
        return Err(Error::Dimension(format!(
            "observation is {}x{}, expected {}x{}",
            obs.y.rows(),
            obs.y.cols(),
            p.b,
            p.c()
        )));
    }
    let mut truth = truth.as_ref().map(|gt| Truth::new(gt, p)).transpose()?;
    let mut y = obs.y.clone();
    let mut error_matrix = truth.as_ref().map(|_| CMatrix::<F>::zeros(p.b, p.c()));
    let mut report = DecodeReport {
        recovered: Vec::new(),
        frame_error: false,
        miss_count: 0,
        false_count: 0,
        delay_failures: 0,
        iteration_log: Vec::new(),
        residual_trace: Vec::new(),
        residual_bound: p.eta.sqrt() / (p.beta1 * p.log_k_floored()),
        bound_premise: true,
        bound_violations: 0,
        degenerate: Degenerate::default(),
    };
    if let Some(t) = &truth {
        let sets: Vec<Vec<usize>> = t.by_id.values().map(|(d, _)| d.subcarriers.clone()).collect();
        report.degenerate.duplicate_sets = duplicate_set_pairs(&sets);
    }
    let mut done: HashSet<u64> = HashSet::new();
    let c = F::of_usize(p.c());

    for iteration in 1.. {
        let verdicts: Vec<_> = (0..p.b).map(|b| classify(y.row(b), b, codebook, p.eta, p.eta_verify)).collect();
        let mut counts = IterationCounts::default();
        for (b, v) in verdicts.iter().enumerate() {
            match v.kind {
                VerdictKind::Zeroton => counts.zerotons += 1,
                VerdictKind::Singleton { .. } => counts.singletons += 1,
                VerdictKind::Multiton(cause) => {
                    counts.multitons += 1;
                    if cause == MultitonCause::Decode(Reject::Tie) && truth.as_ref().is_some_and(|t| t.occupancy[b] == 1) {
                        report.degenerate.singleton_ties += 1;
                    }
                }
            }
        }

        for (b, v) in verdicts.iter().enumerate() {
            let VerdictKind::Singleton { id, message, .. } = v.kind else { continue };
            if !done.insert(id) {
                continue;
            }
            let dev = codebook.codeword(id, message)?;
            let g: Vec<i8> = dev.g().collect();
            let mut noise = StatisticNoise::for_params(rng, p, opts.noise_mode)?;
            let (tau_hat, delay_ok) = match estimate_delay(&obs.waveform2, &dev.chips, p, &mut noise)? {
                Ok(est) => (est.tau_hat, true),
                Err(fail) => {
                    let lambda = fallback_lambda(&fail, p);
                    let r = refine_estimate(&obs.waveform2, &dev.chips, lambda, p, &mut noise)?;
                    (r.midpoint(), false)
                }
            };
            let a_hat = estimate_amplitude(y.row(b), &g, b, tau_hat, p);
            for &bp in &dev.subcarriers {
                cancel(y.row_mut(bp), a_hat, tau_hat, &g, bp, p);
            }

            let mut rec = RecoveredDevice {
                id,
                message,
                a_hat,
                tau_hat,
                iteration,
                subcarrier: b,
                delay_ok,
                delay_error: None,
                noise_error: None,
            };
            if let Some(t) = truth.as_mut() {
                let err = error_matrix.as_mut().expect("allocated with truth");
                for &bp in &dev.subcarriers {
                    cancel(err.row_mut(bp), a_hat, tau_hat, &g, bp, p);
                }
                if let Some(&(tdev, tch)) = t.by_id.get(&id) {
                    let tg: Vec<i8> = tdev.g().collect();
                    for &bp in &tdev.subcarriers {
                        cancel(err.row_mut(bp), -tch.a, tch.tau, &tg, bp, p);
                        t.occupancy[bp] -= 1;
                    }
                    rec.delay_error = Some(tau_hat - tch.tau);
                }
                if let Some(w) = t.noise {
                    let proj = w
                        .row(b)
                        .iter()
                        .zip(&g)
                        .fold(Complex::new(F::zero(), F::zero()), |acc, (z, &s)| acc + *z * F::of(s as f64));
                    rec.noise_error = Some(proj / c);
                }
            }
            if !delay_ok {
                report.delay_failures += 1;
            }
            counts.recovered += 1;
            report.recovered.push(rec);
        }

        if let Some(err) = &error_matrix {
            report.residual_trace.push(err.iter().map(|z| z.norm()).fold(F::zero(), F::max));
        }
        let progressed = counts.recovered > 0;
        report.iteration_log.push(counts);
        if !progressed {
            break;
        }
    }

    if let Some(t) = &truth {
        assess(&mut report, t, opts.outage, p);
    }
    report.frame_error = report.miss_count > 0 || report.false_count > 0 || report.delay_failures > 0;
    Ok(report)
}

fn assess<F: Real>(report: &mut DecodeReport<F>, t: &Truth<'_, F>, acct: OutageAccounting, p: &SystemParams<F>) {
    let mut hit = HashSet::new();
    for r in &report.recovered {
        match t.by_id.get(&r.id) {
            Some((dev, _)) if dev.message == r.message => {
                hit.insert(r.id);
            }
            _ => report.false_count += 1,
        }
    }
    report.miss_count = t.by_id.len() - hit.len();
    if acct == OutageAccounting::Include {
        report.miss_count += t.outages;
    }

    let l2 = {
        let l = p.log_k_floored();
        l * l
    };
    let delay_ok = |r: &RecoveredDevice<F>| r.delay_error.is_none_or(|e| e.abs() <= p.rho / l2);
    let noise_ok = |r: &RecoveredDevice<F>| r.noise_error.is_none_or(|e| e.norm() <= p.varrho / l2);
    report.bound_premise = report.false_count == 0 && report.recovered.iter().all(|r| delay_ok(r) && noise_ok(r));
    if report.bound_premise {
        report.bound_violations = report.residual_trace.iter().filter(|&&v| v > report.residual_bound).count();
    }
}

/// Classical peeling on the device/subcarrier graph with perfect verdicts.
/// Returns the indices (into `sets`) of the devices that get recovered.
pub fn ideal_oracle_peel(sets: &[Vec<usize>], b: usize) -> Vec<usize> {
    let mut users: Vec<Vec<usize>> = vec![Vec::new(); b];
    for (k, s) in sets.iter().enumerate() {
        for &sc in s {
            users[sc].push(k);
        }
    }
    let mut degree: Vec<usize> = users.iter().map(Vec::len).collect();
    let mut recovered = vec![false; sets.len()];
    let mut queue: Vec<usize> = (0..b).filter(|&sc| degree[sc] == 1).collect();
    while let Some(sc) = queue.pop() {
        if degree[sc] != 1 {
            continue;
        }
        let Some(&k) = users[sc].iter().find(|&&k| !recovered[k]) else { continue };
        recovered[k] = true;
        for &other in &sets[k] {
            degree[other] -= 1;
            if degree[other] == 1 {
                queue.push(other);
            }
        }
    }
    (0..sets.len()).filter(|&k| recovered[k]).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::observe;
    use crate::params::derive_simulation_params;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn params() -> SystemParams<f64> {
        derive_simulation_params::<f64>(4, 1 << 12, 4, 0.0, 0.5, 2.0).unwrap().with_c2(400)
    }

    #[test]
    fn amplitude_inverts_singleton() {
        let p = params();
        let g = [1i8, -1, -1, 1, 1, -1];
        let a = Complex::new(0.3, -1.2);
        let (b, tau) = (7, 2.3);
        let y: Vec<_> = g.iter().map(|&s| a * steering(b, tau, &p) * s as f64).collect();
        assert!((estimate_amplitude(&y, &g, b, tau, &p) - a).norm() < 1e-14);
        let delta = 0.4;
        let shifted = estimate_amplitude(&y, &g, b, tau + delta, &p);
        let expect = a * cis(2.0 * PI * b as f64 * delta / (p.b as f64 * p.t));
        assert!((shifted - expect).norm() < 1e-14);
    }

    #[test]
    fn cancel_exact_and_phase_mismatch() {
        let p = params();
        let g = [1i8, 1, -1, 1, -1];
        let a = Complex::new(-0.7, 0.2);
        let (b, tau, delta) = (3, 1.7, 0.25);
        let mut y: Vec<_> = g.iter().map(|&s| a * steering(b, tau, &p) * s as f64).collect();
        cancel(&mut y, a, tau, &g, b, &p);
        assert!(y.iter().all(|z| z.norm() < 1e-15));

        let (bp, bs) = (11, 3);
        let mut y: Vec<_> = g.iter().map(|&s| a * steering(bp, tau, &p) * s as f64).collect();
        let yb: Vec<_> = g.iter().map(|&s| a * steering(bs, tau, &p) * s as f64).collect();
        let a_hat = estimate_amplitude(&yb, &g, bs, tau + delta, &p);
        cancel(&mut y, a_hat, tau + delta, &g, bp, &p);
        let law = a.norm() * (Complex::new(1.0, 0.0) - cis(2.0 * PI * (bp as f64 - bs as f64) * delta / (p.b as f64 * p.t))).norm();
        for z in &y {
            assert!((z.norm() - law).abs() < 1e-12);
        }
    }

    #[test]
    fn oracle_peel_examples() {
        // Hypertree: each device has a private subcarrier.
        let sets = vec![vec![0, 1, 2], vec![2, 3, 4], vec![4, 5, 6]];
        assert_eq!(ideal_oracle_peel(&sets, 8), vec![0, 1, 2]);
        assert!(ideal_oracle_peel(&[vec![0, 1, 2], vec![0, 1, 2]], 4).is_empty());
        // Chain through cancellation: device 1 only exposed after device 0.
        let sets = vec![vec![0, 1, 2], vec![1, 2, 3], vec![0, 3, 4]];
        assert_eq!(ideal_oracle_peel(&sets, 5), vec![0, 1, 2]);
    }

    #[test]
    fn duplicate_pairs() {
        assert_eq!(duplicate_set_pairs(&[vec![1, 2, 3], vec![3, 2, 1], vec![0, 1, 2]]), 1);
        assert_eq!(duplicate_set_pairs(&vec![vec![1, 2, 3]; 3]), 3);
    }

    #[test]
    fn noiseless_frame_recovers_all() {
        let p = params();
        let cb = Codebook::new(&p, 9).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let devices: Vec<_> = [3u64, 100, 2000].iter().map(|&id| cb.codeword(id, 0).unwrap()).collect();
        let channels = vec![
            DeviceChannel { a: Complex::new(0.6, 0.1), tau: 0.4, outage: false },
            DeviceChannel { a: Complex::new(-1.0, 0.9), tau: 3.2, outage: false },
            DeviceChannel { a: Complex::new(0.0, 1.5), tau: 1.9, outage: false },
        ];
        let obs = observe(&devices, &channels, &p, &mut rng).unwrap();
        let sets: Vec<_> = devices.iter().map(|d| d.subcarriers.clone()).collect();
        let expect: HashSet<u64> = ideal_oracle_peel(&sets, p.b).into_iter().map(|k| devices[k].id).collect();
        let truth = GroundTruth { devices: &devices, channels: &channels, noise: None };
        let rep = peel(&obs, &p, &cb, &mut rng, PeelOptions::default(), Some(truth)).unwrap();
        assert_eq!(rep.recovered_ids(), expect);
        assert_eq!(rep.frame_error, expect.len() < 3);
        for r in &rep.recovered {
            assert!(r.delay_error.unwrap().abs() <= p.delay_tolerance());
        }
    }

    #[test]
    fn duplicate_set_is_stopping_set() {
        let p = params();
        let cb = Codebook::new(&p, 9).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut devices: Vec<_> = [3u64, 100].iter().map(|&id| cb.codeword(id, 0).unwrap()).collect();
        devices[1].subcarriers = devices[0].subcarriers.clone();
        let channels = vec![
            DeviceChannel { a: Complex::new(0.6, 0.1), tau: 0.0, outage: false },
            DeviceChannel { a: Complex::new(-1.0, 0.9), tau: 0.0, outage: false },
        ];
        let obs = observe(&devices, &channels, &p, &mut rng).unwrap();
        let truth = GroundTruth { devices: &devices, channels: &channels, noise: None };
        let rep = peel(&obs, &p, &cb, &mut rng, PeelOptions::default(), Some(truth)).unwrap();
        assert!(rep.recovered.is_empty());
        assert!(rep.frame_error);
        assert_eq!(rep.degenerate.duplicate_sets, 1);
    }
}

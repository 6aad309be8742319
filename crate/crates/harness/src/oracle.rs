//! Independent cross-checks of the model against brute-force computations.

use std::collections::HashSet;

use num_complex::Complex;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rustfft::FftPlanner;

use sofdma::channel::{
    draw_channel, draw_delay, synth_frequency_noiseless, synth_subframe2, DeviceChannel, Fading, PathLoss,
};
use sofdma::codebook::{Codebook, DeviceCodeword, Subframe0Codec};
use sofdma::delay::correlate_noiseless;
use sofdma::params::derive_simulation_params;
use sofdma::sic::{ideal_oracle_peel, PeelOptions};
use sofdma::SystemParams64;

use crate::trial::{draw_ids, run_frame};

#[derive(Debug, Clone, PartialEq)]
pub struct OracleResult {
    pub name: &'static str,
    pub error: f64,
    pub tolerance: f64,
    pub pass: bool,
    pub detail: String,
}

impl OracleResult {
    fn new(name: &'static str, error: f64, tolerance: f64, detail: String) -> Self {
        Self { name, error, tolerance, pass: error <= tolerance, detail }
    }
}

fn c64(re: f64, im: f64) -> Complex<f64> {
    Complex::new(re, im)
}

fn random_devices(rng: &mut ChaCha8Rng, cb: &Codebook, p: &SystemParams64, k: usize) -> (Vec<DeviceCodeword>, Vec<DeviceChannel<f64>>) {
    let ids = draw_ids(rng, k, p.n);
    let devices: Vec<_> = ids.iter().map(|&id| cb.codeword(id, 0).expect("id in range")).collect();
    let channels = (0..k)
        .map(|_| {
            let a = c64(rng.random_range(-1.5..1.5), rng.random_range(-1.5..1.5));
            DeviceChannel { a, tau: draw_delay(rng, p.m, p.t), outage: false }
        })
        .collect();
    (devices, channels)
}

/// Chip of `chips` active at time `u` after the subframe-2 origin, zero
/// outside the sequence.
fn chip_at(chips: &[i8], u: f64) -> f64 {
    let j = u.floor();
    if j < 0.0 || j >= chips.len() as f64 {
        0.0
    } else {
        chips[j as usize] as f64
    }
}

/// Per-probe outcome of the correlation check.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CorrelationCheck {
    /// Largest `|closed - riemann| / (sum_p |a_p| T I)`.
    pub max_rel: f64,
    /// Sum of the same quantity over probes.
    pub total_rel: f64,
}

/// Closed-form `int_I x'(t) s'_k(t - tau) dt` against a midpoint Riemann sum
/// with `per_chip` points per chip, evaluating every device's chip directly.
pub fn correlation_check(probes: usize, per_chip: usize, seed: u64) -> CorrelationCheck {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let p = derive_simulation_params::<f64>(3, 1 << 12, 4, 0.0, 0.5, 2.0).expect("valid").with_c2(16);
    let cb = Codebook::new(&p, 17).expect("valid");
    let (t, m, c2) = (p.t, p.m, 16usize);
    let samples = c2 - m;
    let h = t / per_chip as f64;
    let mut out = CorrelationCheck { max_rel: 0.0, total_rel: 0.0 };
    for _ in 0..probes {
        let k = rng.random_range(1..=3);
        let (devices, channels) = random_devices(&mut rng, &cb, &p, k);
        let w = synth_subframe2(&devices, &channels, &p).expect("valid frame");
        let target = rng.random_range(0..k);
        let tau = rng.random_range(0.0..=m as f64 * t);
        let closed = correlate_noiseless(&w, &devices[target].chips, tau).expect("tau in range");

        let mut acc = c64(0.0, 0.0);
        for n in 0..samples * per_chip {
            // time measured from the subframe-2 origin
            let u = m as f64 * t + (n as f64 + 0.5) * h;
            let reference = chip_at(&devices[target].chips, (u - tau) / t);
            if reference == 0.0 {
                continue;
            }
            let mut x = c64(0.0, 0.0);
            for (d, ch) in devices.iter().zip(&channels) {
                x += ch.a * chip_at(&d.chips, (u - ch.tau) / t);
            }
            acc += x * reference;
        }
        let riemann = acc * h;
        let scale: f64 = channels.iter().map(|c| c.a.norm()).sum::<f64>() * t * samples as f64;
        let rel = (closed - riemann).norm() / scale;
        out.max_rel = out.max_rel.max(rel);
        out.total_rel += rel;
    }
    out
}

/// Largest entrywise error (relative to the frame's peak) between the
/// frequency-domain synthesis and a time-domain OFDM chain with cyclic
/// prefix, integer delays and an FFT at the receiver.
pub fn fft_synthesis_check(frames: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut planner = FftPlanner::<f64>::new();
    let mut worst: f64 = 0.0;
    for _ in 0..frames {
        let k = rng.random_range(2..=8);
        let m = rng.random_range(1..=6);
        let p = derive_simulation_params::<f64>(k, 1 << 10, m, 0.0, 0.5, 2.0).expect("valid").with_c2(m + 4);
        let cb = Codebook::new(&p, rng.random()).expect("valid");
        let ids = draw_ids(&mut rng, k, p.n);
        let devices: Vec<_> = ids.iter().map(|&id| cb.codeword(id, 0).expect("id in range")).collect();
        let channels: Vec<_> = (0..k)
            .map(|_| DeviceChannel {
                a: c64(rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)),
                tau: rng.random_range(0..=m) as f64,
                outage: false,
            })
            .collect();
        let y = synth_frequency_noiseless(&devices, &channels, &p).expect("valid frame");

        let b = p.b;
        let fft = planner.plan_fft_forward(b);
        let sym = b + m;
        for c in 0..p.c() {
            // received samples of symbol c, indexed from its cyclic prefix start
            let mut rx = vec![c64(0.0, 0.0); sym];
            for (dev, ch) in devices.iter().zip(&channels) {
                let g = dev.g().nth(c).expect("c < C") as f64;
                let body: Vec<Complex<f64>> = (0..b)
                    .map(|n| {
                        dev.subcarriers
                            .iter()
                            .map(|&sc| Complex::from_polar(1.0, std::f64::consts::TAU * (sc * n) as f64 / b as f64))
                            .sum::<Complex<f64>>()
                            * g
                    })
                    .collect();
                let q = ch.tau as usize;
                for (n, r) in rx.iter_mut().enumerate().skip(q) {
                    // transmitted sample n - q of the CP-extended symbol
                    let idx = n - q;
                    let s = if idx < m { body[b - m + idx] } else { body[idx - m] };
                    *r += ch.a * s;
                }
            }
            let mut window: Vec<Complex<f64>> = rx[m..].to_vec();
            fft.process(&mut window);
            let peak = y.iter().map(|z| z.norm()).fold(0.0, f64::max).max(f64::MIN_POSITIVE);
            for sc in 0..b {
                let err = (window[sc] / b as f64 - y.get(sc, c)).norm() / peak;
                worst = worst.max(err);
            }
        }
    }
    worst
}

/// Encode/decode every `(id, message)` with `N S <= limit`; returns the
/// number of failures.
pub fn codec_exhaustive(n: u64, s: u64, limit: u64) -> Option<u64> {
    if n * s > limit {
        return None;
    }
    let c0 = 1 + 2 * sofdma::params::ceil_log2(n as u128 * s as u128) as usize + 1;
    let codec = Subframe0Codec::new(n, s, 0.5f64, c0).expect("valid codec");
    let mut failures = 0;
    for id in 0..n {
        for msg in 0..s {
            let coded = codec.encode(id, msg).expect("in range");
            if codec.decode(&coded[1..]) != Ok((id, msg)) {
                failures += 1;
            }
        }
    }
    Some(failures)
}

/// Devices outside the largest stopping set, by subset enumeration.
/// A stopping set is a device set whose every subcarrier is shared by at
/// least two members; the union of all of them is never peeled.
pub fn brute_force_recoverable(sets: &[Vec<usize>], b: usize) -> Vec<usize> {
    let k = sets.len();
    assert!(k <= 20, "enumeration over 2^{k} subsets");
    let mut blocked = 0u32;
    for mask in 1u32..(1 << k) {
        let mut count = vec![0u8; b];
        for (i, s) in sets.iter().enumerate() {
            if mask >> i & 1 == 1 {
                for &sc in s {
                    count[sc] = count[sc].saturating_add(1);
                }
            }
        }
        if count.iter().all(|&c| c != 1) {
            blocked |= mask;
        }
    }
    (0..k).filter(|&i| blocked >> i & 1 == 0).collect()
}

/// Compare the peeling reachability against enumeration over random graphs.
pub fn peelability_check(graphs: usize, seed: u64) -> usize {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut mismatches = 0;
    for _ in 0..graphs {
        let k = rng.random_range(2..=10);
        let b = rng.random_range(4..=2 * k + 4);
        let sets: Vec<Vec<usize>> = (0..k)
            .map(|_| {
                let mut s: Vec<usize> = rand::seq::index::sample(&mut rng, b, 3).into_vec();
                s.sort_unstable();
                s
            })
            .collect();
        if ideal_oracle_peel(&sets, b) != brute_force_recoverable(&sets, b) {
            mismatches += 1;
        }
    }
    mismatches
}

/// Outage probability by simulation and by quadrature over distance.
/// With `|G|^2 ~ Exp(1)`, `P(a_lo < |G| d^-alpha < a_hi)` given `d` is
/// `exp(-(a_lo d^alpha)^2) - exp(-(a_hi d^alpha)^2)`.
pub fn outage_check(draws: usize, seed: u64) -> (f64, f64, f64) {
    let (a_lo, a_hi, alpha) = (1.0, 10f64.powf(0.5), 3.0);
    let pl = PathLoss::matched(a_lo, a_hi, alpha).expect("valid");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let outages = (0..draws).filter(|_| draw_channel(&mut rng, &pl, a_lo, a_hi).outage).count();
    let empirical = outages as f64 / draws as f64;
    let steps = 20_000;
    let width = (pl.dmax - pl.dmin) / steps as f64;
    let inside: f64 = (0..steps)
        .map(|i| {
            let d = pl.dmin + (i as f64 + 0.5) * width;
            let s = d.powf(alpha);
            (-(a_lo * s).powi(2)).exp() - (-(a_hi * s).powi(2)).exp()
        })
        .sum::<f64>()
        * width
        / (pl.dmax - pl.dmin);
    let expected = 1.0 - inside;
    let sd = (expected * (1.0 - expected) / draws as f64).sqrt();
    (empirical, expected, sd)
}

/// Outcome of the noiseless peel-versus-oracle comparison.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct EquivalenceCheck {
    pub frames: usize,
    pub mismatches: usize,
    pub degenerate: usize,
    /// Frames with a declared delay failure.
    pub delay_failures: usize,
}

/// Configuration of [`noiseless_equivalence`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EquivalenceSetup {
    pub max_k: usize,
    pub m: usize,
    pub c2: usize,
    pub dyn_db: f64,
    pub fading: Fading,
}

impl Default for EquivalenceSetup {
    fn default() -> Self {
        Self { max_k: 10, m: 4, c2: 8000, dyn_db: 6.0, fading: Fading::Rayleigh }
    }
}

/// Noiseless frames with continuous delays: the peeling decoder should
/// recover exactly the devices that perfect verdicts would.
pub fn noiseless_equivalence(frames: usize, seed: u64, setup: EquivalenceSetup) -> sofdma::Result<EquivalenceCheck> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = EquivalenceCheck { frames, ..Default::default() };
    let a_lo = 1.0;
    let a_hi = a_lo * 10f64.powf(setup.dyn_db / 20.0);
    let mut pl = PathLoss::matched(a_lo, a_hi, 3.0)?;
    pl.fading = setup.fading;
    for f in 0..frames {
        let k = 2 + f % (setup.max_k - 1);
        let p = derive_simulation_params(k, 1 << 16, setup.m, 0.0, a_lo, a_hi)?.with_c2(setup.c2);
        let cb = Codebook::new(&p, rng.random())?;
        let ids = draw_ids(&mut rng, k, p.n);
        let devices = ids.iter().map(|&id| cb.codeword(id, 0)).collect::<sofdma::Result<Vec<_>>>()?;
        let channels: Vec<_> = (0..k)
            .map(|_| {
                let mut ch = draw_channel(&mut rng, &pl, a_lo, a_hi);
                ch.tau = draw_delay(&mut rng, p.m, p.t);
                ch
            })
            .collect();
        let rep = run_frame(&p, &cb, &devices, &channels, &mut rng, PeelOptions::default())?;
        let active: Vec<usize> = (0..k).filter(|&i| !channels[i].outage).collect();
        let sets: Vec<Vec<usize>> = active.iter().map(|&i| devices[i].subcarriers.clone()).collect();
        let expect: HashSet<u64> = ideal_oracle_peel(&sets, p.b).into_iter().map(|j| devices[active[j]].id).collect();
        if rep.degenerate.any() {
            out.degenerate += 1;
        } else if rep.recovered_ids() != expect {
            out.mismatches += 1;
        }
        if rep.delay_failures > 0 {
            out.delay_failures += 1;
        }
    }
    Ok(out)
}

/// Every registered oracle at desk scale.
pub fn run_all(seed: u64) -> sofdma::Result<Vec<OracleResult>> {
    let mut results = Vec::new();

    let fine = correlation_check(200, 10_000, seed);
    let coarse = correlation_check(200, 5_000, seed);
    results.push(OracleResult::new(
        "correlation closed form vs oversampled integral",
        fine.max_rel,
        1e-3,
        format!("aggregate error {:.3e} at 5000/chip, {:.3e} at 10000/chip", coarse.total_rel, fine.total_rel),
    ));
    results.push(OracleResult::new(
        "correlation error shrinks with oversampling",
        if fine.total_rel < coarse.total_rel { 0.0 } else { 1.0 },
        0.0,
        String::new(),
    ));

    results.push(OracleResult::new(
        "frequency synthesis vs FFT chain",
        fft_synthesis_check(100, seed),
        1e-9,
        "integer delays, cyclic prefix M".into(),
    ));

    let failures = codec_exhaustive(1 << 12, 16, 1 << 16).expect("within limit");
    results.push(OracleResult::new("subframe-0 exhaustive round trip", failures as f64, 0.0, "N = 4096, S = 16".into()));

    let mismatches = peelability_check(1000, seed);
    results.push(OracleResult::new("peeling vs stopping-set enumeration", mismatches as f64, 0.0, "1000 graphs".into()));

    let (emp, exp, sd) = outage_check(200_000, seed);
    results.push(OracleResult::new(
        "outage probability vs quadrature (in sd)",
        (emp - exp).abs() / sd,
        4.0,
        format!("simulated {emp:.5}, quadrature {exp:.5}"),
    ));

    let eq = noiseless_equivalence(200, seed, EquivalenceSetup::default())?;
    results.push(OracleResult::new(
        "noiseless peel vs perfect-verdict peel",
        eq.mismatches as f64,
        0.0,
        format!("{} frames, {} degenerate", eq.frames, eq.degenerate),
    ));
    Ok(results)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn brute_force_examples() {
        assert_eq!(brute_force_recoverable(&[vec![0, 1, 2], vec![0, 1, 2]], 3), Vec::<usize>::new());
        assert_eq!(brute_force_recoverable(&[vec![0, 1, 2], vec![2, 3, 4]], 5), vec![0, 1]);
        // Devices 0..2 form a stopping set; device 3 hangs off it privately.
        let sets = vec![vec![0, 1, 2], vec![0, 1, 3], vec![2, 3, 4], vec![4, 5, 6], vec![0, 1, 5]];
        let got = brute_force_recoverable(&sets, 7);
        assert_eq!(got, ideal_oracle_peel(&sets, 7));
    }

    #[test]
    fn codec_small_exhaustive() {
        assert_eq!(codec_exhaustive(64, 4, 1 << 16), Some(0));
        assert_eq!(codec_exhaustive(1 << 20, 1, 1 << 16), None);
    }

    #[test]
    fn fft_chain_agrees() {
        assert!(fft_synthesis_check(5, 3) < 1e-9);
    }

    #[test]
    fn correlation_agrees_coarsely() {
        let c = correlation_check(5, 200, 1);
        assert!(c.max_rel < 2e-2, "{c:?}");
    }
}

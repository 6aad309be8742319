//! Two-step delay estimation on subframe 2.
//!
//! The statistic for a decoded device `k` is the overlap of the received
//! subframe-2 waveform with the device's own chip sequence shifted by a delay
//! hypothesis, plus a Gaussian noise term:
//!
//! `T_k(tau) = int_I x'(t) s'_k(t - tau) dt + sum_i Z_i`, `Z_i ~ CN(0, 2 sigma^2 T)`.
//!
//! The crude step thresholds `|T_k|` on the sample grid `{0, T, ..., M T}`;
//! the refined step takes the argmax on a grid of spacing `psi` inside the
//! located slot.
//!
//! The noiseless statistic is piecewise linear in `tau`, with knots wherever
//! `tau mod T` equals one of the waveform's breakpoint offsets, so the fine
//! search evaluates it exactly at the knots of the slot and interpolates.

use num_complex::Complex;
use rand::Rng;

use crate::channel::{split_delay, Waveform2};
use crate::error::{Error, Result};
use crate::params::SystemParams;
use crate::scalar::{complex_gaussian, Real};

/// Noiseless overlap `int_I x'(t) s'_k(t - tau) dt` in closed form.
pub fn correlate_noiseless<F: Real>(w: &Waveform2<F>, chips: &[i8], tau: F) -> Result<Complex<F>> {
    let max = F::of_usize(w.m()) * w.t();
    if !(tau >= F::zero() && tau <= max) {
        return Err(Error::DelayOutOfRange { tau: tau.to_f64_lossy(), max: max.to_f64_lossy() });
    }
    if chips.len() != w.c2() {
        return Err(Error::Dimension(format!("{} chips for C2 = {}", chips.len(), w.c2())));
    }
    let (n, f) = split_delay(tau, w.t());
    let j = w.locate(f);
    let mut acc = Complex::new(F::zero(), F::zero());
    for i in 0..w.samples() {
        let s = w.m() + i;
        // On sample s the reference holds chip s-n-1 on [0, f) and chip s-n after.
        let head = w.partial(i, j, f);
        let cur = F::of(chips[s - n] as f64);
        acc = acc + (w.full(i) - head) * cur;
        if let Some(prev) = s.checked_sub(n + 1) {
            acc = acc + head * F::of(chips[prev] as f64);
        }
    }
    Ok(acc * w.t())
}

/// `T_k(tau)` with a caller-supplied draw of the noise term.
pub fn correlate<F: Real>(w: &Waveform2<F>, chips: &[i8], tau: F, noise: Complex<F>) -> Result<Complex<F>> {
    Ok(correlate_noiseless(w, chips, tau)? + noise)
}

/// How the statistic's noise term is drawn across delay hypotheses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum NoiseMode {
    /// A fresh draw for every grid evaluation.
    #[default]
    PerEvaluation,
    /// One draw reused for every evaluation of a device's search.
    Shared,
}

impl std::str::FromStr for NoiseMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "per-evaluation" | "per_evaluation" | "independent" => Ok(Self::PerEvaluation),
            "shared" => Ok(Self::Shared),
            other => Err(Error::InvalidParam { name: "noise_mode", reason: format!("unknown mode `{other}`") }),
        }
    }
}

/// Source of `sum_i Z_i`, total variance `2 sigma^2 T I`.
pub struct StatisticNoise<'r, F, R: ?Sized> {
    rng: &'r mut R,
    var: F,
    mode: NoiseMode,
    shared: Option<Complex<F>>,
}

impl<'r, F: Real, R: Rng + ?Sized> StatisticNoise<'r, F, R> {
    pub fn new(rng: &'r mut R, sigma2: F, t: F, samples: usize, mode: NoiseMode) -> Self {
        Self { rng, var: F::of(2.0) * sigma2 * t * F::of_usize(samples), mode, shared: None }
    }

    pub fn for_params(rng: &'r mut R, p: &SystemParams<F>, mode: NoiseMode) -> Result<Self> {
        Ok(Self::new(rng, p.sigma2, p.t, p.window_samples()?, mode))
    }

    pub fn variance(&self) -> F {
        self.var
    }

    pub fn draw(&mut self) -> Complex<F> {
        if self.var <= F::zero() {
            return Complex::new(F::zero(), F::zero());
        }
        match self.mode {
            NoiseMode::PerEvaluation => complex_gaussian(self.rng, self.var),
            NoiseMode::Shared => *self.shared.get_or_insert_with(|| complex_gaussian(self.rng, self.var)),
        }
    }
}

/// Which rule located the crude slot.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CrudeCase {
    /// Only `|T(0)|` exceeds: `[0, T]`.
    First,
    /// Only `|T(MT)|` exceeds: `[(M-1)T, MT]`.
    Last,
    /// Exactly `|T(iT)|` and `|T((i+1)T)|` exceed: `[iT, (i+1)T]`.
    Pair(usize),
    /// Only an interior `|T(iT)|` exceeds: `[iT - T/2, iT + T/2]`.
    Single(usize),
}

/// A located slot `[lambda, lambda + T]`.
#[derive(Debug, Clone, PartialEq)]
pub struct CrudeSlot<F> {
    pub lambda: F,
    pub case: CrudeCase,
    /// `|T_k(iT)|` on the sample grid.
    pub magnitudes: Vec<F>,
}

/// No case of the crude rule matched.
#[derive(Debug, Clone, PartialEq)]
pub struct CrudeFailure<F> {
    /// Grid indices whose statistic exceeded the threshold.
    pub exceed: Vec<usize>,
    pub magnitudes: Vec<F>,
}

/// Crude threshold `a_lo T I / 4`.
pub fn crude_threshold<F: Real>(p: &SystemParams<F>) -> Result<F> {
    Ok(p.a_lo * p.t * F::of_usize(p.window_samples()?) / F::of(4.0))
}

/// Apply the four-case declaration rule to the indices that exceeded.
///
/// The pair case also admits `i = 0`, which places a delay between the
/// first two grid points in `[0, T]`.
pub fn declare_slot(exceed: &[usize], m: usize) -> Option<CrudeCase> {
    match *exceed {
        [0] => Some(CrudeCase::First),
        [i] if i == m => Some(CrudeCase::Last),
        [i] => Some(CrudeCase::Single(i)),
        [i, j] if j == i + 1 && i < m => Some(CrudeCase::Pair(i)),
        _ => None,
    }
}

/// Threshold test on `{0, T, ..., M T}`.
pub fn crude_estimate<F: Real, R: Rng + ?Sized>(
    w: &Waveform2<F>,
    chips: &[i8],
    p: &SystemParams<F>,
    noise: &mut StatisticNoise<'_, F, R>,
) -> Result<std::result::Result<CrudeSlot<F>, CrudeFailure<F>>> {
    let threshold = crude_threshold(p)?;
    let mut magnitudes = Vec::with_capacity(p.m + 1);
    for i in 0..=p.m {
        let tau = F::of_usize(i) * p.t;
        magnitudes.push(correlate(w, chips, tau, noise.draw())?.norm());
    }
    let exceed: Vec<usize> = (0..=p.m).filter(|&i| magnitudes[i] > threshold).collect();
    let t = p.t;
    let half = t / F::of(2.0);
    Ok(match declare_slot(&exceed, p.m) {
        Some(case) => {
            let lambda = match case {
                CrudeCase::First => F::zero(),
                CrudeCase::Last => F::of_usize(p.m - 1) * t,
                CrudeCase::Pair(i) => F::of_usize(i) * t,
                CrudeCase::Single(i) => F::of_usize(i) * t - half,
            };
            Ok(CrudeSlot { lambda, case, magnitudes })
        }
        None => Err(CrudeFailure { exceed, magnitudes }),
    })
}

/// Number of fine slots per sample, `ceil(2 T (log K)^2 / rho)`.
pub fn fine_slots<F: Real>(p: &SystemParams<F>) -> usize {
    let l = p.log_k_floored();
    let x = F::of(2.0) * p.t * l * l / p.rho;
    let r = x.round();
    let v = if (x - r).abs() <= F::of(1e-9) * r { r } else { x.ceil() };
    v.to_usize().unwrap_or(1).max(1)
}

/// Fine grid step `psi = T / ceil(2 T (log K)^2 / rho)`.
pub fn fine_step<F: Real>(p: &SystemParams<F>) -> F {
    p.t / F::of_usize(fine_slots(p))
}

/// Noiseless `T_k` on `[lo, hi]` as exact values at its linearity knots.
#[derive(Debug, Clone)]
pub struct StatisticCurve<F> {
    knots: Vec<F>,
    values: Vec<Complex<F>>,
}

impl<F: Real> StatisticCurve<F> {
    pub fn build(w: &Waveform2<F>, chips: &[i8], lo: F, hi: F) -> Result<Self> {
        let t = w.t();
        let mut knots = vec![lo, hi];
        let first = (lo / t).floor().to_usize().unwrap_or(0);
        let last = (hi / t).ceil().to_usize().unwrap_or(0);
        for m in first..=last {
            for &q in w.offsets() {
                let x = (F::of_usize(m) + q) * t;
                if x > lo && x < hi {
                    knots.push(x);
                }
            }
        }
        knots.sort_by(|a, b| a.partial_cmp(b).expect("finite knots"));
        knots.dedup();
        let values = knots.iter().map(|&x| correlate_noiseless(w, chips, x)).collect::<Result<_>>()?;
        Ok(Self { knots, values })
    }

    /// Linear interpolation between the bracketing knots.
    pub fn eval(&self, x: F) -> Complex<F> {
        let k = self.knots.partition_point(|&q| q <= x);
        if k == 0 {
            return self.values[0];
        }
        if k >= self.knots.len() {
            return *self.values.last().expect("at least two knots");
        }
        let (x0, x1) = (self.knots[k - 1], self.knots[k]);
        let w = (x - x0) / (x1 - x0);
        self.values[k - 1] * (F::one() - w) + self.values[k] * w
    }
}

/// Output of the refined step.
#[derive(Debug, Clone, PartialEq)]
pub struct RefinedInterval<F> {
    pub lambda: F,
    pub psi: F,
    /// Argmax offset within the slot, on the fine grid.
    pub tau_star: F,
    pub lo: F,
    pub hi: F,
}

impl<F: Real> RefinedInterval<F> {
    pub fn midpoint(&self) -> F {
        (self.lo + self.hi) / F::of(2.0)
    }
}

/// Argmax of `|T_k(lambda + h)|` over `h in {0, psi, ..., T}`; ties go to the
/// smallest `h`. Returns the declared interval clipped to `[0, M T]`.
pub fn refine_estimate<F: Real, R: Rng + ?Sized>(
    w: &Waveform2<F>,
    chips: &[i8],
    lambda: F,
    p: &SystemParams<F>,
    noise: &mut StatisticNoise<'_, F, R>,
) -> Result<RefinedInterval<F>> {
    let slots = fine_slots(p);
    let psi = p.t / F::of_usize(slots);
    let max_delay = p.max_delay();
    let hi = (lambda + p.t).min(max_delay);
    let curve = StatisticCurve::build(w, chips, lambda, hi)?;
    let mut best = (F::neg_infinity(), F::zero());
    for i in 0..=slots {
        let h = p.t * F::of_usize(i) / F::of_usize(slots);
        let x = (lambda + h).min(max_delay);
        let mag = (curve.eval(x) + noise.draw()).norm();
        if mag > best.0 {
            best = (mag, h);
        }
    }
    let tau_star = best.1;
    let l = p.log_k_floored();
    let half = p.rho / (F::of(2.0) * l * l);
    let centre = lambda + tau_star;
    Ok(RefinedInterval {
        lambda,
        psi,
        tau_star,
        lo: (centre - half).max(F::zero()),
        hi: (centre + half).min(max_delay),
    })
}

/// Result of a successful two-step search.
#[derive(Debug, Clone, PartialEq)]
pub struct DelayEstimate<F> {
    pub tau_hat: F,
    pub crude: Option<CrudeSlot<F>>,
    pub refined: Option<RefinedInterval<F>>,
}

/// Crude search followed by refinement; `tau_hat` is the midpoint of the
/// refined interval. With `M = 0` the delay is known to be zero.
pub fn estimate_delay<F: Real, R: Rng + ?Sized>(
    w: &Waveform2<F>,
    chips: &[i8],
    p: &SystemParams<F>,
    noise: &mut StatisticNoise<'_, F, R>,
) -> Result<std::result::Result<DelayEstimate<F>, CrudeFailure<F>>> {
    if p.m == 0 {
        return Ok(Ok(DelayEstimate { tau_hat: F::zero(), crude: None, refined: None }));
    }
    let slot = match crude_estimate(w, chips, p, noise)? {
        Ok(slot) => slot,
        Err(fail) => return Ok(Err(fail)),
    };
    let refined = refine_estimate(w, chips, slot.lambda, p, noise)?;
    Ok(Ok(DelayEstimate { tau_hat: refined.midpoint(), crude: Some(slot), refined: Some(refined) }))
}

/// Slot around the largest crude-grid statistic, used to keep decoding
/// going after a declared failure.
pub fn fallback_lambda<F: Real>(fail: &CrudeFailure<F>, p: &SystemParams<F>) -> F {
    let (imax, _) = fail
        .magnitudes
        .iter()
        .enumerate()
        .fold((0, F::neg_infinity()), |best, (i, &m)| if m > best.1 { (i, m) } else { best });
    let t = p.t;
    let lambda = F::of_usize(imax) * t - t / F::of(2.0);
    lambda.max(F::zero()).min(F::of_usize(p.m.saturating_sub(1)) * t)
}

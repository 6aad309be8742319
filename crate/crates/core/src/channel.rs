//! Near-far channel draws and synthesis of the access point's observation.
//!
//! Subframes 0 and 1 are synthesized directly in the frequency domain: a
//! delay `tau` shows up on subcarrier `b` as the phase `exp(-i 2 pi b tau / (B T))`
//! because the cyclic prefix absorbs it. Subframe 2 is kept as an exact
//! piecewise-constant waveform; see [`Waveform2`].

use num_complex::Complex;
use rand::Rng;

use crate::codebook::DeviceCodeword;
use crate::error::{Error, Result};
use crate::params::SystemParams;
use crate::scalar::{cis, complex_gaussian, Real};

/// Small-scale fading applied on top of path loss.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Fading {
    /// Circularly-symmetric complex Gaussian gain with `E|G|^2 = 1`.
    #[default]
    Rayleigh,
    /// `G = 1`.
    None,
}

/// Distance-based path loss `d^-alpha` with `d ~ Uniform[dmin, dmax]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PathLoss<F> {
    pub dmin: F,
    pub dmax: F,
    pub alpha: F,
    pub fading: Fading,
}

impl<F: Real> PathLoss<F> {
    pub fn new(dmin: F, dmax: F, alpha: F) -> Result<Self> {
        if !(dmin > F::zero() && dmin < dmax) {
            return Err(Error::InvalidParam { name: "dmin", reason: "need 0 < dmin < dmax".into() });
        }
        if alpha < F::zero() {
            return Err(Error::InvalidParam { name: "alpha", reason: "negative path-loss exponent".into() });
        }
        Ok(Self { dmin, dmax, alpha, fading: Fading::Rayleigh })
    }

    /// Distances whose pure path loss spans exactly `[a_lo, a_hi]`.
    pub fn matched(a_lo: F, a_hi: F, alpha: F) -> Result<Self> {
        let inv = -F::one() / alpha;
        Self::new(a_hi.powf(inv), a_lo.powf(inv), alpha)
    }
}

/// One device's channel for the whole slot.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DeviceChannel<F> {
    pub a: Complex<F>,
    /// Delay in seconds, within `[0, M T]`.
    pub tau: F,
    /// Outside the admissible amplitude range; such a device stays silent.
    pub outage: bool,
}

/// Per-device channels of a slot, aligned with the device list.
pub type ChannelRealization<F> = Vec<DeviceChannel<F>>;

/// Draw `a = G d^-alpha`; the delay is left at zero (see [`draw_delay`]).
pub fn draw_channel<F: Real, R: Rng + ?Sized>(rng: &mut R, pl: &PathLoss<F>, a_lo: F, a_hi: F) -> DeviceChannel<F> {
    let d = pl.dmin + (pl.dmax - pl.dmin) * F::unit(rng);
    let g = match pl.fading {
        Fading::Rayleigh => complex_gaussian(rng, F::one()),
        Fading::None => Complex::new(F::one(), F::zero()),
    };
    let a = g * d.powf(-pl.alpha);
    let mag = a.norm();
    DeviceChannel { a, tau: F::zero(), outage: !(mag > a_lo && mag < a_hi) }
}

/// `tau ~ Uniform[0, M T]`.
pub fn draw_delay<F: Real, R: Rng + ?Sized>(rng: &mut R, m: usize, t: F) -> F {
    F::of_usize(m) * t * F::unit(rng)
}

/// Dense complex matrix, row-major; rows are subcarriers, columns OFDM symbols.
#[derive(Debug, Clone, PartialEq)]
pub struct CMatrix<F> {
    rows: usize,
    cols: usize,
    data: Vec<Complex<F>>,
}

impl<F: Real> CMatrix<F> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![Complex::new(F::zero(), F::zero()); rows * cols] }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, r: usize) -> &[Complex<F>] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [Complex<F>] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn get(&self, r: usize, c: usize) -> Complex<F> {
        self.data[r * self.cols + c]
    }

    pub fn iter(&self) -> impl Iterator<Item = &Complex<F>> {
        self.data.iter()
    }

    /// Elementwise sum; dimensions must agree.
    pub fn add_assign(&mut self, other: &Self) {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        for (x, y) in self.data.iter_mut().zip(&other.data) {
            *x = *x + *y;
        }
    }

    pub fn frobenius_sqr(&self) -> F {
        self.data.iter().map(|z| z.norm_sqr()).sum()
    }
}

/// What the access point sees in one slot.
#[derive(Debug, Clone)]
pub struct Observation<F> {
    /// `B x (C0 + C1)` frequency-domain samples.
    pub y: CMatrix<F>,
    /// Noiseless subframe-2 waveform on the observation window.
    pub waveform2: Waveform2<F>,
    pub noise_psd: F,
}

fn check_dims<F: Real>(devices: &[DeviceCodeword], channels: &[DeviceChannel<F>], p: &SystemParams<F>) -> Result<()> {
    if devices.len() != channels.len() {
        return Err(Error::Dimension(format!("{} devices but {} channels", devices.len(), channels.len())));
    }
    for dev in devices {
        if dev.g_tilde.len() != p.c0 || dev.g_dot.len() != p.c1 {
            return Err(Error::Dimension(format!("device {} sequence lengths do not match C0/C1", dev.id)));
        }
        if dev.subcarriers.iter().any(|&b| b >= p.b) {
            return Err(Error::Dimension(format!("device {} uses a subcarrier >= B", dev.id)));
        }
    }
    Ok(())
}

/// Noiseless subframe 0/1 observation: `sum_k a_k exp(-i 2 pi b tau_k / (B T)) g_k^c`
/// on every `b` in the device's set, outage devices excluded.
pub fn synth_frequency_noiseless<F: Real>(
    devices: &[DeviceCodeword],
    channels: &[DeviceChannel<F>],
    p: &SystemParams<F>,
) -> Result<CMatrix<F>> {
    check_dims(devices, channels, p)?;
    let mut y = CMatrix::zeros(p.b, p.c());
    let bt = F::of_usize(p.b) * p.t;
    for (dev, ch) in devices.iter().zip(channels) {
        if ch.outage {
            continue;
        }
        for &b in &dev.subcarriers {
            let amp = ch.a * cis(-F::TAU() * F::of_usize(b) * ch.tau / bt);
            for (y, g) in y.row_mut(b).iter_mut().zip(dev.g()) {
                *y = *y + amp * F::of(g as f64);
            }
        }
    }
    Ok(y)
}

/// i.i.d. circularly-symmetric noise with variance `sigma2 / B` per real dimension.
pub fn noise_matrix<F: Real, R: Rng + ?Sized>(p: &SystemParams<F>, rng: &mut R) -> CMatrix<F> {
    let mut w = CMatrix::zeros(p.b, p.c());
    let var = F::of(2.0) * p.sigma2 / F::of_usize(p.b);
    if var > F::zero() {
        for z in w.data.iter_mut() {
            *z = complex_gaussian(rng, var);
        }
    }
    w
}

/// Noisy frequency-domain observation.
pub fn synth_frequency<F: Real, R: Rng + ?Sized>(
    devices: &[DeviceCodeword],
    channels: &[DeviceChannel<F>],
    p: &SystemParams<F>,
    rng: &mut R,
) -> Result<CMatrix<F>> {
    let mut y = synth_frequency_noiseless(devices, channels, p)?;
    y.add_assign(&noise_matrix(p, rng));
    Ok(y)
}

/// Exact piecewise-constant subframe-2 signal on the window
/// `[t0 + M T, t0 + C2 T)`, `t0 = C (B + M) T`.
///
/// Every device's chip edges fall at `t0 + tau_k + j T`, so within each
/// sample interval the breakpoints sit at the same fractional offsets
/// `q_0 = 0 < q_1 < ... ` (delays mod `T`, in units of `T`). The waveform is
/// stored as one row of segment values per sample interval plus running
/// integrals, which makes correlating against a shifted chip sequence
/// `O(I)` per delay hypothesis.
#[derive(Debug, Clone, PartialEq)]
pub struct Waveform2<F> {
    t: F,
    t0: F,
    m: usize,
    c2: usize,
    offsets: Vec<F>,
    /// `I x offsets.len()` segment values.
    values: Vec<Complex<F>>,
    /// `I x (offsets.len() + 1)` integrals over `[0, q_j)` of each interval, in units of `T`.
    cumulative: Vec<Complex<F>>,
}

impl<F: Real> Waveform2<F> {
    /// Sample duration.
    pub fn t(&self) -> F {
        self.t
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn c2(&self) -> usize {
        self.c2
    }

    /// Number of retained samples, `C2 - M`.
    pub fn samples(&self) -> usize {
        self.c2 - self.m
    }

    /// Window `[start, end)` in seconds.
    pub fn window(&self) -> (F, F) {
        (self.t0 + F::of_usize(self.m) * self.t, self.t0 + F::of_usize(self.c2) * self.t)
    }

    /// Start of subframe 2.
    pub fn origin(&self) -> F {
        self.t0
    }

    /// Sorted fractional breakpoint offsets within a sample, in units of `T`.
    pub fn offsets(&self) -> &[F] {
        &self.offsets
    }

    fn segments(&self) -> usize {
        self.offsets.len()
    }

    /// Value on segment `j` of retained sample `i`.
    pub fn segment_value(&self, i: usize, j: usize) -> Complex<F> {
        self.values[i * self.segments() + j]
    }

    /// Segment index holding fractional position `f` in `[0, 1)`.
    fn segment_of(&self, f: F) -> usize {
        self.offsets.partition_point(|&q| q <= f).saturating_sub(1)
    }

    /// Integral over `[0, f)` of retained sample `i`, in units of `T`.
    #[inline]
    pub(crate) fn partial(&self, i: usize, j: usize, f: F) -> Complex<F> {
        let n = self.segments();
        self.cumulative[i * (n + 1) + j] + self.values[i * n + j] * (f - self.offsets[j])
    }

    #[inline]
    pub(crate) fn full(&self, i: usize) -> Complex<F> {
        let n = self.segments();
        self.cumulative[i * (n + 1) + n]
    }

    pub(crate) fn locate(&self, f: F) -> usize {
        self.segment_of(f)
    }

    /// Pointwise evaluation; zero outside the window.
    pub fn value_at(&self, time: F) -> Complex<F> {
        let (lo, hi) = self.window();
        if time < lo || time >= hi {
            return Complex::new(F::zero(), F::zero());
        }
        let u = (time - lo) / self.t;
        let i = u.floor().to_usize().unwrap_or(0).min(self.samples() - 1);
        let f = u - F::of_usize(i);
        self.segment_value(i, self.segment_of(f))
    }

    /// All breakpoints in seconds, strictly increasing, inside the window.
    pub fn breakpoints(&self) -> impl Iterator<Item = F> + '_ {
        let (lo, _) = self.window();
        (0..self.samples())
            .flat_map(move |i| self.offsets.iter().map(move |&q| lo + (F::of_usize(i) + q) * self.t))
    }

    /// `(breakpoint, value)` pairs; each value holds until the next breakpoint.
    pub fn pieces(&self) -> impl Iterator<Item = (F, Complex<F>)> + '_ {
        self.breakpoints().zip(self.values.iter().copied())
    }
}

/// Integer and fractional part of `tau / T`, with the fraction in `[0, 1)`.
pub(crate) fn split_delay<F: Real>(tau: F, t: F) -> (usize, F) {
    let u = tau / t;
    let n = u.floor();
    let mut f = u - n;
    if f >= F::one() {
        f = F::zero();
    }
    (n.to_usize().unwrap_or(0), f)
}

/// Noiseless subframe-2 superposition `sum_k a_k s'_k(t - tau_k)` on the window.
pub fn synth_subframe2<F: Real>(
    devices: &[DeviceCodeword],
    channels: &[DeviceChannel<F>],
    p: &SystemParams<F>,
) -> Result<Waveform2<F>> {
    if devices.len() != channels.len() {
        return Err(Error::Dimension(format!("{} devices but {} channels", devices.len(), channels.len())));
    }
    let c2 = p.c2()?;
    let samples = p.window_samples()?;
    let max_delay = p.max_delay();

    struct Active<'a, F> {
        a: Complex<F>,
        n: usize,
        f: F,
        seg: usize,
        chips: &'a [i8],
    }
    let mut active: Vec<Active<'_, F>> = Vec::new();
    let mut offsets = vec![F::zero()];
    for (dev, ch) in devices.iter().zip(channels) {
        if ch.outage {
            continue;
        }
        if dev.chips.len() != c2 {
            return Err(Error::Dimension(format!("device {} has {} chips, C2 = {c2}", dev.id, dev.chips.len())));
        }
        if ch.tau < F::zero() || ch.tau > max_delay {
            return Err(Error::DelayOutOfRange { tau: ch.tau.to_f64_lossy(), max: max_delay.to_f64_lossy() });
        }
        let (n, f) = split_delay(ch.tau, p.t);
        offsets.push(f);
        active.push(Active { a: ch.a, n, f, seg: 0, chips: &dev.chips });
    }
    offsets.sort_by(|a, b| a.partial_cmp(b).expect("finite delays"));
    offsets.dedup();
    for act in &mut active {
        act.seg = offsets.partition_point(|&q| q < act.f);
    }

    let nseg = offsets.len();
    let zero = Complex::new(F::zero(), F::zero());
    let mut values = vec![zero; samples * nseg];
    // Difference array along the segment axis: device k contributes chip
    // s - n - 1 before its own offset and chip s - n from it onwards.
    for (i, row) in values.chunks_mut(nseg).enumerate() {
        let s = p.m + i;
        for act in &active {
            // n <= M <= s keeps both indices inside the chip sequence.
            let chip = |j: usize| act.chips[j] as f64;
            let cur = act.a * F::of(chip(s - act.n));
            if act.seg == 0 {
                row[0] = row[0] + cur;
            } else {
                let prev = act.a * F::of(chip(s - act.n - 1));
                row[0] = row[0] + prev;
                row[act.seg] = row[act.seg] + (cur - prev);
            }
        }
        for j in 1..nseg {
            row[j] = row[j] + row[j - 1];
        }
    }

    let mut cumulative = vec![zero; samples * (nseg + 1)];
    for i in 0..samples {
        let mut acc = zero;
        for j in 0..nseg {
            cumulative[i * (nseg + 1) + j] = acc;
            let next = if j + 1 < nseg { offsets[j + 1] } else { F::one() };
            acc = acc + values[i * nseg + j] * (next - offsets[j]);
        }
        cumulative[i * (nseg + 1) + nseg] = acc;
    }

    Ok(Waveform2 { t: p.t, t0: p.subframe2_start(), m: p.m, c2, offsets, values, cumulative })
}

/// Build the full observation: noisy subframes 0/1 plus the subframe-2 waveform.
pub fn observe<F: Real, R: Rng + ?Sized>(
    devices: &[DeviceCodeword],
    channels: &[DeviceChannel<F>],
    p: &SystemParams<F>,
    rng: &mut R,
) -> Result<Observation<F>> {
    Ok(Observation {
        y: synth_frequency(devices, channels, p, rng)?,
        waveform2: synth_subframe2(devices, channels, p)?,
        noise_psd: p.sigma2,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codebook::Codebook;
    use crate::params::derive_simulation_params;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn params(c2: usize) -> SystemParams<f64> {
        derive_simulation_params(4, 1 << 10, 5, 0.0, 1.0, 4.0).unwrap().with_c2(c2)
    }

    #[test]
    fn unbounded_range_never_outage() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let pl = PathLoss::new(1.0, 5.0, 3.0).unwrap();
        assert!((0..1000).all(|_| !draw_channel(&mut rng, &pl, 0.0, f64::INFINITY).outage));
    }

    #[test]
    fn no_path_loss_no_fading_unit_amplitude() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut pl = PathLoss::<f64>::new(1.0, 5.0, 0.0).unwrap();
        pl.fading = Fading::None;
        for _ in 0..100 {
            assert!((draw_channel(&mut rng, &pl, 0.5, 2.0).a.norm() - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn delay_range_and_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        assert_eq!(draw_delay(&mut rng, 0, 1.0), 0.0);
        let n = 100_000;
        let draws: Vec<f64> = (0..n).map(|_| draw_delay(&mut rng, 20, 1.0)).collect();
        assert!(draws.iter().all(|&x| (0.0..=20.0).contains(&x)));
        let mean = draws.iter().sum::<f64>() / n as f64;
        // sd of the mean: 20 / sqrt(12 n)
        let sd = 20.0 / (12.0 * n as f64).sqrt();
        assert!((mean - 10.0).abs() < 3.0 * sd, "mean {mean}");
    }

    #[test]
    fn single_device_zero_delay_is_codeword() {
        let p = params(30);
        let cb = Codebook::new(&p, 5).unwrap();
        let dev = cb.codeword(7, 0).unwrap();
        let a = Complex::new(0.6, -0.8);
        let ch = DeviceChannel { a, tau: 0.0, outage: false };
        let y = synth_frequency_noiseless(&[dev.clone()], &[ch], &p).unwrap();
        for b in 0..p.b {
            for (c, g) in dev.g().enumerate() {
                let expect = if dev.uses(b) { a * g as f64 } else { Complex::new(0.0, 0.0) };
                assert_eq!(y.get(b, c), expect);
            }
        }
        // Energy per used row is |a|^2 C.
        let row_energy: f64 = y.row(dev.subcarriers[0]).iter().map(|z| z.norm_sqr()).sum();
        assert!((row_energy - p.c() as f64).abs() < 1e-12);
    }

    #[test]
    fn outage_device_is_silent() {
        let p = params(30);
        let cb = Codebook::new(&p, 5).unwrap();
        let dev = cb.codeword(7, 0).unwrap();
        let ch = DeviceChannel { a: Complex::new(2.0, 0.0), tau: 1.3, outage: true };
        let y = synth_frequency_noiseless(&[dev.clone()], &[ch], &p).unwrap();
        assert_eq!(y.frobenius_sqr(), 0.0);
        let w = synth_subframe2(&[dev], &[ch], &p).unwrap();
        assert!(w.pieces().all(|(_, v)| v == Complex::new(0.0, 0.0)));
    }

    #[test]
    fn constant_chips_give_constant_waveform() {
        let p = params(30);
        let mut dev = Codebook::new(&p, 5).unwrap().codeword(1, 0).unwrap();
        dev.chips = vec![1; 30];
        let a = Complex::new(0.3, 0.4);
        let w = synth_subframe2(&[dev], &[DeviceChannel { a, tau: 0.0, outage: false }], &p).unwrap();
        assert_eq!(w.samples(), 25);
        assert!(w.pieces().all(|(_, v)| v == a));
        let (lo, hi) = w.window();
        assert_eq!(lo, p.subframe2_start() + 5.0);
        assert_eq!(hi, p.subframe2_start() + 30.0);
    }

    #[test]
    fn waveform_matches_direct_evaluation() {
        let p = params(40);
        let cb = Codebook::new(&p, 11).unwrap();
        let devs: Vec<_> = (0..2).map(|id| cb.codeword(id, 0).unwrap()).collect();
        let chans = vec![
            DeviceChannel { a: Complex::new(1.0, 0.5), tau: 0.0, outage: false },
            DeviceChannel { a: Complex::new(-0.7, 0.2), tau: 0.5, outage: false },
        ];
        let w = synth_subframe2(&devs, &chans, &p).unwrap();
        // Half-sample delays produce breakpoints at every half sample.
        assert_eq!(w.offsets(), &[0.0, 0.5]);
        let bps: Vec<f64> = w.breakpoints().collect();
        assert!(bps.windows(2).all(|x| x[0] < x[1]));
        let (lo, hi) = w.window();
        assert!(bps.iter().all(|&t| t >= lo && t < hi));

        let direct = |t: f64| {
            devs.iter().zip(&chans).fold(Complex::new(0.0, 0.0), |acc, (d, c)| {
                let u = t - p.subframe2_start() - c.tau;
                let j = u.floor() as usize;
                acc + c.a * d.chips[j] as f64
            })
        };
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..10_000 {
            let t = lo + (hi - lo) * rng.random::<f64>();
            assert!((w.value_at(t) - direct(t)).norm() < 1e-12);
        }
    }

    #[test]
    fn delay_phase_duality() {
        let p = params(30);
        let cb = Codebook::new(&p, 2).unwrap();
        let dev = cb.codeword(3, 0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..20 {
            let tau = draw_delay(&mut rng, 3, 1.0);
            let delta = rng.random::<f64>();
            let a = Complex::new(rng.random::<f64>(), rng.random::<f64>());
            let y0 = synth_frequency_noiseless(&[dev.clone()], &[DeviceChannel { a, tau, outage: false }], &p).unwrap();
            let y1 = synth_frequency_noiseless(&[dev.clone()], &[DeviceChannel { a, tau: tau + delta, outage: false }], &p)
                .unwrap();
            for &b in &dev.subcarriers {
                let rot = cis(-std::f64::consts::TAU * b as f64 * delta / p.b as f64);
                for c in 0..p.c() {
                    assert!((y0.get(b, c) * rot - y1.get(b, c)).norm() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn linearity_over_device_sets() {
        let p = params(30);
        let cb = Codebook::new(&p, 2).unwrap();
        let devs: Vec<_> = (0..3).map(|id| cb.codeword(id, 0).unwrap()).collect();
        let chans: Vec<_> = (0..3)
            .map(|k| DeviceChannel { a: Complex::new(1.0 + k as f64, -0.5), tau: 0.7 * k as f64, outage: false })
            .collect();
        let all = synth_frequency_noiseless(&devs, &chans, &p).unwrap();
        let mut sum = CMatrix::zeros(p.b, p.c());
        for k in 0..3 {
            sum.add_assign(&synth_frequency_noiseless(&devs[k..=k], &chans[k..=k], &p).unwrap());
        }
        for (x, y) in all.iter().zip(sum.iter()) {
            assert!((x - y).norm() < 1e-12);
        }
    }

    #[test]
    fn rejects_out_of_range_delay() {
        let p = params(30);
        let dev = Codebook::new(&p, 2).unwrap().codeword(0, 0).unwrap();
        let ch = DeviceChannel { a: Complex::new(1.0, 0.0), tau: 5.5, outage: false };
        assert!(matches!(synth_subframe2(&[dev], &[ch], &p), Err(Error::DelayOutOfRange { .. })));
    }
}

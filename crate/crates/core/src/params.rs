//! Scheme parameters: derivation from the asymptotic construction, the
//! desk-scale simulation profile, codelength accounting and time-division
//! grouping plans.

use crate::error::{invalid, Error, Result};
use crate::scalar::Real;

/// Which rule set produced a [`SystemParams`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamMode {
    /// `B = beta0 K`, `C0`, `C1`, `C2` all derived from the scaling constants.
    Theorem,
    /// `B = 6K`, `D = 3`, `C0 = 2 + 2 ceil(log N)`, `C1 = ceil(log K)`, `C2` supplied.
    Simulation,
    /// Assembled field by field by the caller.
    Custom,
}

/// Every scalar of the signalling scheme.
///
/// Counts are integers, physical quantities use the scalar type `F`.
/// Times are in seconds with `t` the sample duration; amplitudes are
/// linear received amplitudes and `sigma2` is the two-sided noise PSD.
#[derive(Debug, Clone, PartialEq)]
pub struct SystemParams<F> {
    pub mode: ParamMode,
    /// Active-device count the scheme is dimensioned for.
    pub k: usize,
    /// Device population.
    pub n: u64,
    /// Messages per device.
    pub s: u64,
    /// FFT length (number of subcarriers).
    pub b: usize,
    /// Delay bound in samples; also the cyclic-prefix length.
    pub m: usize,
    /// Subcarriers per device.
    pub d: usize,
    pub c0: usize,
    pub c1: usize,
    /// Subframe-2 chip count; `None` until the caller fixes it.
    pub c2: Option<usize>,
    /// Subframe-0 code rate.
    pub rate: F,
    pub sigma2: F,
    pub a_lo: F,
    pub a_hi: F,
    /// Zeroton threshold.
    pub eta: F,
    /// Singleton-verification threshold (defaults to `eta`).
    pub eta_verify: F,
    pub beta0: F,
    pub beta1: F,
    pub beta2: Option<F>,
    /// Delay refinement constant (time units).
    pub rho: F,
    /// Amplitude-error constant (amplitude units).
    pub varrho: F,
    /// Sample duration.
    pub t: F,
}

/// `ceil(log2(x))` for `x >= 1`, exact on integers.
pub fn ceil_log2(x: u128) -> u32 {
    assert!(x >= 1, "ceil_log2 of zero");
    if x == 1 {
        0
    } else {
        128 - (x - 1).leading_zeros()
    }
}

fn ceil_usize<F: Real>(x: F) -> usize {
    // Guard against values like 202.99999999 that should be exact integers
    // being pushed over by rounding noise.
    let r = x.round();
    let v = if (x - r).abs() <= F::of(1e-9) * (F::one() + r.abs()) { r } else { x.ceil() };
    v.to_usize().unwrap_or(0)
}

impl<F: Real> SystemParams<F> {
    /// Subcarrier spacing `f = 1 / (B T)`.
    pub fn subcarrier_spacing(&self) -> F {
        F::one() / (F::of_usize(self.b) * self.t)
    }

    /// Number of OFDM symbols in subframes 0 and 1.
    pub fn c(&self) -> usize {
        self.c0 + self.c1
    }

    pub fn c2(&self) -> Result<usize> {
        self.c2.ok_or(Error::Unset("C2"))
    }

    /// Samples kept after discarding the first `M` of subframe 2.
    pub fn window_samples(&self) -> Result<usize> {
        let c2 = self.c2()?;
        if c2 <= self.m {
            return Err(invalid("C2", format!("C2 = {c2} must exceed M = {}", self.m)));
        }
        Ok(c2 - self.m)
    }

    /// Upper end of the delay range, `M T`.
    pub fn max_delay(&self) -> F {
        F::of_usize(self.m) * self.t
    }

    /// `log2 K` floored at 1 so delay grids stay finite for `K < 2`.
    pub fn log_k_floored(&self) -> F {
        let l = F::of_usize(self.k).log2();
        if l < F::one() {
            F::one()
        } else {
            l
        }
    }

    /// Delay-accuracy target `rho / (log K)^2`.
    pub fn delay_tolerance(&self) -> F {
        let l = self.log_k_floored();
        self.rho / (l * l)
    }

    /// Start of subframe 2 in seconds: `C (B + M) T`.
    pub fn subframe2_start(&self) -> F {
        F::of_usize(self.c() * (self.b + self.m)) * self.t
    }

    pub fn with_c2(mut self, c2: usize) -> Self {
        self.c2 = Some(c2);
        self
    }

    pub fn with_rho(mut self, rho: F) -> Self {
        self.rho = rho;
        self
    }

    pub fn with_sigma2(mut self, sigma2: F) -> Self {
        self.sigma2 = sigma2;
        self
    }

    /// Set both detection thresholds.
    pub fn with_eta(mut self, eta: F) -> Self {
        self.eta = eta;
        self.eta_verify = eta;
        self
    }

    /// Check the structural invariants every mode must satisfy.
    pub fn validate(&self) -> Result<()> {
        if self.k < 1 {
            return Err(invalid("K", "must be at least 1"));
        }
        if self.n < 1 || self.s < 1 {
            return Err(invalid("N/S", "must be at least 1"));
        }
        if self.d < 3 {
            return Err(invalid("D", format!("D = {} but at least 3 subcarriers are required", self.d)));
        }
        if self.b < self.d {
            return Err(invalid("B", format!("B = {} smaller than D = {}", self.b, self.d)));
        }
        if self.m >= self.b {
            return Err(invalid("M", format!("M = {} must be below B = {}", self.m, self.b)));
        }
        if self.c0 < 1 {
            return Err(invalid("C0", "needs the reference symbol"));
        }
        if !(self.a_lo < self.a_hi) || self.a_lo < F::zero() {
            return Err(invalid("a_lo", "need 0 <= a_lo < a_hi"));
        }
        if !(self.rate > F::zero() && self.rate <= F::one()) {
            return Err(invalid("R", "rate must lie in (0, 1]"));
        }
        if !(self.t > F::zero()) {
            return Err(invalid("T", "sample duration must be positive"));
        }
        if self.sigma2 < F::zero() {
            return Err(invalid("sigma2", "negative noise PSD"));
        }
        if !(self.eta > F::zero()) || !(self.eta_verify > F::zero()) {
            return Err(invalid("eta", "thresholds must be positive"));
        }
        if !(self.rho > F::zero()) {
            return Err(invalid("rho", "must be positive"));
        }
        if self.mode == ParamMode::Theorem {
            let dd = F::of_usize(self.d * (self.d - 1) + 1);
            if self.beta0 < dd {
                return Err(invalid("beta0", "below D(D-1)+1"));
            }
        }
        Ok(())
    }

    /// Parameter table with a short note on where each value came from.
    pub fn table(&self) -> Vec<(&'static str, String, &'static str)> {
        let theorem = self.mode == ParamMode::Theorem;
        let sim = self.mode == ParamMode::Simulation;
        let pick = |a: bool, x: &'static str, b: bool, y: &'static str| {
            if a {
                x
            } else if b {
                y
            } else {
                "given"
            }
        };
        let mut rows = vec![
            ("K", self.k.to_string(), "given"),
            ("N", self.n.to_string(), "given"),
            ("S", self.s.to_string(), "given"),
            ("B", self.b.to_string(), pick(theorem, "beta0*K", sim, "6*K")),
            ("M", self.m.to_string(), "given"),
            ("D", self.d.to_string(), pick(false, "", sim, "fixed at 3")),
            (
                "C0",
                self.c0.to_string(),
                pick(theorem, "ceil(ceil(log2(N*S))/R)+1", sim, "2+2*ceil(log2 N)"),
            ),
            ("C1", self.c1.to_string(), pick(theorem, "ceil(beta1*log2 K)", sim, "ceil(log2 K)")),
            (
                "C2",
                self.c2.map_or_else(|| "unset".to_string(), |c| c.to_string()),
                pick(theorem, "M+ceil(beta2*(a_hi/a_lo)^2*(log2 K)^4*K*log2(KM+1))", false, "given"),
            ),
            ("R", format!("{}", self.rate), "given"),
            ("sigma2", format!("{}", self.sigma2), "given"),
            ("a_lo", format!("{}", self.a_lo), "given"),
            ("a_hi", format!("{}", self.a_hi), "given"),
            ("eta", format!("{}", self.eta), "a_lo^2"),
            ("eta_verify", format!("{}", self.eta_verify), "eta"),
            ("beta0", format!("{}", self.beta0), pick(theorem, "given", sim, "6")),
            ("beta1", format!("{}", self.beta1), pick(theorem, "given", sim, "1")),
            (
                "beta2",
                self.beta2.map_or_else(|| "-".to_string(), |b| format!("{b}")),
                "given",
            ),
            ("rho", format!("{}", self.rho), "T/8 default"),
            ("varrho", format!("{}", self.varrho), "sqrt(eta)/8 default"),
            ("T", format!("{}", self.t), "given"),
            ("f", format!("{}", self.subcarrier_spacing()), "1/(B*T)"),
        ];
        if let Some(l) = self.codelength().ok() {
            rows.push(("L", l.to_string(), "(B+M)(C0+C1)+C2"));
        }
        rows
    }

    /// Total codelength in samples, `(B + M)(C0 + C1) + C2`.
    pub fn codelength(&self) -> Result<u64> {
        Ok(codelength(self.b, self.m, self.c0, self.c1, self.c2()?))
    }
}

/// `(B + M)(C0 + C1) + C2` in samples.
pub fn codelength(b: usize, m: usize, c0: usize, c1: usize, c2: usize) -> u64 {
    (b as u64 + m as u64) * (c0 as u64 + c1 as u64) + c2 as u64
}

/// Inputs of [`derive_theorem_params`].
#[derive(Debug, Clone)]
pub struct TheoremInputs<F> {
    pub k: usize,
    pub n: u64,
    pub s: u64,
    pub m: usize,
    pub rate: F,
    pub d: usize,
    pub beta0: usize,
    pub beta1: F,
    pub beta2: F,
    pub a_lo: F,
    pub a_hi: F,
    pub sigma2: F,
}

/// Construct the parameters of the asymptotic scheme.
///
/// Logarithms are base 2. `K = 1` is rejected because it empties subframe 1.
pub fn derive_theorem_params<F: Real>(inp: &TheoremInputs<F>) -> Result<SystemParams<F>> {
    if inp.d < 3 {
        return Err(invalid("D", format!("D = {} < 3", inp.d)));
    }
    if inp.beta0 < inp.d * (inp.d - 1) + 1 {
        return Err(invalid(
            "beta0",
            format!("beta0 = {} < D(D-1)+1 = {}", inp.beta0, inp.d * (inp.d - 1) + 1),
        ));
    }
    if !(inp.a_lo < inp.a_hi) || !(inp.a_lo > F::zero()) {
        return Err(invalid("a_lo", "need 0 < a_lo < a_hi"));
    }
    if inp.k < 2 {
        return Err(invalid("K", "K = 1 gives an empty subframe 1 (log K = 0)"));
    }
    if !(inp.rate > F::zero() && inp.rate <= F::one()) {
        return Err(invalid("R", "rate must lie in (0, 1]"));
    }
    if !(inp.beta1 > F::zero()) || !(inp.beta2 > F::zero()) {
        return Err(invalid("beta1/beta2", "must be positive"));
    }
    if inp.n < 1 || inp.s < 1 {
        return Err(invalid("N/S", "must be at least 1"));
    }
    let info_bits = ceil_log2(inp.n as u128 * inp.s as u128);
    let b = inp.beta0 * inp.k;
    let c0 = ceil_usize(F::of(info_bits as f64) / inp.rate) + 1;
    let log_k = F::of_usize(inp.k).log2();
    let c1 = ceil_usize(inp.beta1 * log_k);
    let ratio = inp.a_hi / inp.a_lo;
    let kf = F::of_usize(inp.k);
    let km1 = F::of_usize(inp.k * inp.m + 1).log2();
    let c2 = inp.m + ceil_usize(inp.beta2 * ratio * ratio * log_k.powi(4) * kf * km1);
    let eta = inp.a_lo * inp.a_lo;
    let t = F::one();
    let p = SystemParams {
        mode: ParamMode::Theorem,
        k: inp.k,
        n: inp.n,
        s: inp.s,
        b,
        m: inp.m,
        d: inp.d,
        c0,
        c1,
        c2: Some(c2),
        rate: inp.rate,
        sigma2: inp.sigma2,
        a_lo: inp.a_lo,
        a_hi: inp.a_hi,
        eta,
        eta_verify: eta,
        beta0: F::of_usize(inp.beta0),
        beta1: inp.beta1,
        beta2: Some(inp.beta2),
        rho: t / F::of(8.0),
        varrho: eta.sqrt() / F::of(8.0),
        t,
    };
    p.validate()?;
    Ok(p)
}

/// Desk-scale profile: `B = 6K`, `D = 3`, `C0 = 2 + 2 ceil(log2 N)`,
/// `C1 = ceil(log2 K)`, rate 1/2. `C2` is left for the caller.
pub fn derive_simulation_params<F: Real>(
    k: usize,
    n: u64,
    m: usize,
    sigma2: F,
    a_lo: F,
    a_hi: F,
) -> Result<SystemParams<F>> {
    if k < 2 {
        return Err(invalid("K", "simulation profile needs K >= 2"));
    }
    if n < 2 {
        return Err(invalid("N", "simulation profile needs N >= 2"));
    }
    if !(a_lo < a_hi) {
        return Err(invalid("a_lo", "need a_lo < a_hi"));
    }
    let eta = a_lo * a_lo;
    let t = F::one();
    let p = SystemParams {
        mode: ParamMode::Simulation,
        k,
        n,
        s: 1,
        b: 6 * k,
        m,
        d: 3,
        c0: 2 + 2 * ceil_log2(n as u128) as usize,
        c1: ceil_log2(k as u128) as usize,
        c2: None,
        rate: F::of(0.5),
        sigma2,
        a_lo,
        a_hi,
        eta,
        eta_verify: eta,
        beta0: F::of(6.0),
        beta1: F::one(),
        beta2: None,
        rho: t / F::of(8.0),
        varrho: eta.sqrt() / F::of(8.0),
        t,
    };
    p.validate()?;
    Ok(p)
}

/// Result of [`check_eta_admissible`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EtaCheck<F> {
    pub admissible: bool,
    /// Lower bound `32 sigma2 ceil(beta1 log2 K) ln K / (beta0 K)`.
    pub bound: F,
    /// `eta - bound`.
    pub slack: F,
}

/// Test `eta` against the lower bound that keeps zeroton and verification
/// errors at `O(K^-2)`. The `ln K` factor is a natural log.
pub fn check_eta_admissible<F: Real>(p: &SystemParams<F>) -> EtaCheck<F> {
    let kf = F::of_usize(p.k);
    let c1 = ceil_usize(p.beta1 * kf.log2());
    let bound = F::of(32.0) * p.sigma2 * F::of_usize(c1) * kf.ln() / (p.beta0 * kf);
    EtaCheck { admissible: p.eta >= bound, bound, slack: p.eta - bound }
}

/// How the subcarrier count is chosen for each time-division group.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum HashWidthMode {
    /// Every group keeps `B = 6K` from the total device count.
    #[default]
    Shared,
    /// Group `g` uses `B = 6 K_g`.
    PerGroup,
}

impl std::str::FromStr for HashWidthMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "shared" => Ok(Self::Shared),
            "per-group" | "per_group" => Ok(Self::PerGroup),
            other => Err(invalid("hash_width_mode", format!("unknown mode `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroupSpec<F> {
    /// Amplitude sub-range `[lo, hi)`.
    pub lo: F,
    pub hi: F,
    pub members: usize,
    pub params: SystemParams<F>,
    pub codelength: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroupingPlan<F> {
    pub groups: Vec<GroupSpec<F>>,
    pub total_codelength: u64,
    pub hash_width_mode: HashWidthMode,
}

/// Split the admissible amplitude range into time-division groups and
/// account for each group's codelength.
pub fn plan_grouping<F: Real>(
    k: usize,
    n: u64,
    m: usize,
    sigma2: F,
    amplitude_ranges: &[(F, F)],
    group_sizes: &[usize],
    c2_per_group: &[usize],
    mode: HashWidthMode,
) -> Result<GroupingPlan<F>> {
    let g = amplitude_ranges.len();
    if g == 0 {
        return Err(invalid("groups", "no groups given"));
    }
    if group_sizes.len() != g || c2_per_group.len() != g {
        return Err(Error::Dimension(format!(
            "{g} ranges, {} sizes, {} C2 values",
            group_sizes.len(),
            c2_per_group.len()
        )));
    }
    if group_sizes.iter().any(|&s| s == 0) {
        return Err(invalid("group_sizes", "empty group"));
    }
    if group_sizes.iter().sum::<usize>() != k {
        return Err(invalid("group_sizes", format!("sizes do not sum to K = {k}")));
    }
    for w in amplitude_ranges.windows(2) {
        if w[0].1 != w[1].0 {
            return Err(invalid("amplitude_ranges", "ranges must be contiguous"));
        }
    }
    if amplitude_ranges.iter().any(|r| !(r.0 < r.1)) {
        return Err(invalid("amplitude_ranges", "each range needs lo < hi"));
    }

    let mut groups = Vec::with_capacity(g);
    for ((&(lo, hi), &members), &c2) in amplitude_ranges.iter().zip(group_sizes).zip(c2_per_group) {
        let k_hash = match mode {
            HashWidthMode::Shared => k,
            HashWidthMode::PerGroup => members,
        };
        let params = derive_simulation_params(k_hash, n, m, sigma2, lo, hi)?.with_c2(c2);
        let codelength = params.codelength()?;
        groups.push(GroupSpec { lo, hi, members, params, codelength });
    }
    let total_codelength = groups.iter().map(|g| g.codelength).sum();
    Ok(GroupingPlan { groups, total_codelength, hash_width_mode: mode })
}

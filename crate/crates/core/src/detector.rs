//! Robust subcarrier detection: zeroton test, reference-symbol phase
//! estimate, hard-decision decoding with a hash-consistency check, and
//! singleton verification on subframe 1.

use num_complex::Complex;

use crate::codebook::{Codebook, Reject};
use crate::scalar::{cis, Real};

/// Why a non-zeroton subcarrier was not accepted as a singleton.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MultitonCause {
    /// The reference symbol observation is exactly zero.
    ZeroReference,
    /// Subframe-0 decoding rejected the hard decisions.
    Decode(Reject),
    /// The decoded device does not use this subcarrier.
    HashMismatch,
    /// Residual after projecting out the decoded device exceeds the threshold.
    Verification,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum VerdictKind<F> {
    Zeroton,
    Singleton {
        id: u64,
        message: u64,
        /// Least-squares amplitude on subframe 1.
        a_dot: Complex<F>,
        theta_hat: F,
    },
    Multiton(MultitonCause),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SubcarrierVerdict<F> {
    pub kind: VerdictKind<F>,
    /// `||Y_dot||^2` for zerotons and rejected candidates, the verification
    /// residual once a candidate reaches that stage.
    pub residual_energy: F,
}

impl<F: Real> SubcarrierVerdict<F> {
    pub fn is_singleton(&self) -> bool {
        matches!(self.kind, VerdictKind::Singleton { .. })
    }
}

fn energy<F: Real>(v: &[Complex<F>]) -> F {
    v.iter().map(|z| z.norm_sqr()).sum()
}

/// `||Y_dot_b||^2 < eta`.
pub fn detect_zeroton<F: Real>(y_dot: &[Complex<F>], eta: F) -> bool {
    energy(y_dot) < eta
}

/// Phase of the reference-symbol observation in `(-pi, pi]`; `None` when
/// the observation is exactly zero.
pub fn estimate_phase<F: Real>(y_tilde0: Complex<F>) -> Option<F> {
    if y_tilde0.re == F::zero() && y_tilde0.im == F::zero() {
        return None;
    }
    let theta = y_tilde0.arg();
    Some(if theta <= -F::PI() { F::PI() } else { theta })
}

/// Hard decisions on `Re{Y_tilde^c e^{-i theta}}`, `c = 1..C0`, decoded and
/// checked against the regenerated subcarrier set of the decoded device.
pub fn decode_candidate<F: Real>(
    y_tilde: &[Complex<F>],
    theta_hat: F,
    codebook: &Codebook,
    b: usize,
) -> Result<(u64, u64), MultitonCause> {
    let derot = cis(-theta_hat);
    let hard: Vec<i8> = y_tilde[1..]
        .iter()
        .map(|y| if (*y * derot).re >= F::zero() { 1 } else { -1 })
        .collect();
    let (id, message) = codebook.codec.decode(&hard).map_err(MultitonCause::Decode)?;
    if !codebook.subcarriers(id).contains(&b) {
        return Err(MultitonCause::HashMismatch);
    }
    Ok((id, message))
}

/// Result of [`verify_singleton`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Verification<F> {
    pub accept: bool,
    /// `(1/C1) g_dot^H Y_dot`.
    pub a_dot: Complex<F>,
    /// `||Y_dot - a_dot g_dot||^2`.
    pub residual: F,
}

/// Project `Y_dot` on the candidate's subframe-1 sequence and accept iff
/// the residual energy is at most `eta`.
pub fn verify_singleton<F: Real>(y_dot: &[Complex<F>], g_dot: &[i8], eta: F) -> Verification<F> {
    assert_eq!(y_dot.len(), g_dot.len(), "subframe-1 length mismatch");
    assert!(!g_dot.is_empty(), "verification needs C1 >= 1");
    let c1 = F::of_usize(g_dot.len());
    let a_dot = y_dot
        .iter()
        .zip(g_dot)
        .fold(Complex::new(F::zero(), F::zero()), |acc, (y, &g)| acc + *y * F::of(g as f64))
        / c1;
    let residual = y_dot
        .iter()
        .zip(g_dot)
        .map(|(y, &g)| (*y - a_dot * F::of(g as f64)).norm_sqr())
        .sum();
    Verification { accept: residual <= eta, a_dot, residual }
}

/// Full verdict for subcarrier `b` given its `C0 + C1` observations.
pub fn classify<F: Real>(
    y_b: &[Complex<F>],
    b: usize,
    codebook: &Codebook,
    eta_zeroton: F,
    eta_verify: F,
) -> SubcarrierVerdict<F> {
    let c0 = codebook.codec.c0;
    let (y_tilde, y_dot) = y_b.split_at(c0);
    let e = energy(y_dot);
    if e < eta_zeroton {
        return SubcarrierVerdict { kind: VerdictKind::Zeroton, residual_energy: e };
    }
    let multiton = |cause, residual_energy| SubcarrierVerdict { kind: VerdictKind::Multiton(cause), residual_energy };
    let Some(theta_hat) = estimate_phase(y_tilde[0]) else {
        return multiton(MultitonCause::ZeroReference, e);
    };
    let (id, message) = match decode_candidate(y_tilde, theta_hat, codebook, b) {
        Ok(x) => x,
        Err(cause) => return multiton(cause, e),
    };
    let v = verify_singleton(y_dot, &codebook.g_dot(id), eta_verify);
    if !v.accept {
        return multiton(MultitonCause::Verification, v.residual);
    }
    SubcarrierVerdict {
        kind: VerdictKind::Singleton { id, message, a_dot: v.a_dot, theta_hat },
        residual_energy: v.residual,
    }
}

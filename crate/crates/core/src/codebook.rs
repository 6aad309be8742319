//! Deterministic device codebook.
//!
//! Everything a device transmits is a pure function of
//! `(public_seed, id, message)` and the scheme parameters, so the access
//! point can regenerate a decoded device's subcarrier set and sequences
//! without side information.
//!
//! # Pseudorandom function, version 1
//!
//! Each draw uses a ChaCha20 stream keyed by
//! `public_seed (LE u64) || tag (LE u64) || b"sofdma\0\x01" || 0u64`
//! with the stream id set to the device id. Tags: 0 subcarrier set,
//! 1 subframe-1 sequence, 2 subframe-2 chips. Subsets come from Floyd's
//! algorithm over unbiased bounded draws ([`bounded`]); sign sequences take
//! 64 signs per `next_u64`, least significant bit first, bit 1 mapping to -1.

use rand::RngCore;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha20Rng;

use crate::error::{invalid, Error, Result};
use crate::params::{ceil_log2, SystemParams};
use crate::scalar::Real;

/// Version of the keyed generator layout documented above.
pub const PRF_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
enum Tag {
    Subcarriers = 0,
    Subframe1 = 1,
    Subframe2 = 2,
}

fn prf(public_seed: u64, id: u64, tag: Tag) -> ChaCha20Rng {
    let mut key = [0u8; 32];
    key[..8].copy_from_slice(&public_seed.to_le_bytes());
    key[8..16].copy_from_slice(&(tag as u64).to_le_bytes());
    key[16..24].copy_from_slice(b"sofdma\0\x01");
    let mut rng = ChaCha20Rng::from_seed(key);
    rng.set_stream(id);
    rng
}

/// Unbiased draw from `0..n` by rejection on the top of the `u64` range.
fn bounded(rng: &mut impl RngCore, n: u64) -> u64 {
    debug_assert!(n > 0);
    let zone = u64::MAX - (u64::MAX - n + 1) % n;
    loop {
        let v = rng.next_u64();
        if v <= zone {
            return v % n;
        }
    }
}

fn signs(rng: &mut impl RngCore, len: usize) -> Vec<i8> {
    let mut out = Vec::with_capacity(len);
    let mut word = 0u64;
    for i in 0..len {
        if i % 64 == 0 {
            word = rng.next_u64();
        }
        out.push(if (word >> (i % 64)) & 1 == 1 { -1 } else { 1 });
    }
    out
}

/// The `D`-subset of `0..B` assigned to `id`, sorted ascending.
pub fn assign_subcarriers(id: u64, b: usize, d: usize, public_seed: u64) -> Result<Vec<usize>> {
    if d > b {
        return Err(invalid("D", format!("D = {d} exceeds B = {b}")));
    }
    let mut rng = prf(public_seed, id, Tag::Subcarriers);
    // Floyd: for j in B-D..B pick t in 0..=j; take t unless taken, else j.
    let mut chosen: Vec<usize> = Vec::with_capacity(d);
    for j in (b - d)..b {
        let t = bounded(&mut rng, j as u64 + 1) as usize;
        if chosen.contains(&t) {
            chosen.push(j);
        } else {
            chosen.push(t);
        }
    }
    chosen.sort_unstable();
    Ok(chosen)
}

/// Fair i.i.d. sign sequence for subframe 1.
pub fn encode_subframe1(id: u64, c1: usize, public_seed: u64) -> Vec<i8> {
    signs(&mut prf(public_seed, id, Tag::Subframe1), c1)
}

/// Fair i.i.d. chip sequence for subframe 2.
pub fn encode_subframe2(id: u64, c2: usize, public_seed: u64) -> Vec<i8> {
    signs(&mut prf(public_seed, id, Tag::Subframe2), c2)
}

/// Why a subframe-0 hard-decision vector did not decode.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Reject {
    /// A repetition block had as many +1 as -1 decisions.
    Tie,
    /// The decoded index is at least `N S`.
    OutOfRange,
    /// Input length does not match the code.
    Length,
}

/// Rate `1/factor` repetition code with majority decoding.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RepetitionCode {
    pub factor: usize,
}

impl RepetitionCode {
    pub fn from_rate<F: Real>(rate: F) -> Result<Self> {
        let inv = F::one() / rate;
        let r = inv.round();
        if (inv - r).abs() > F::of(1e-9) || r < F::one() {
            return Err(invalid("R", "repetition coding needs 1/R to be a positive integer"));
        }
        Ok(Self { factor: r.to_usize().unwrap_or(1) })
    }

    /// Coded length for `bits` information bits.
    pub fn coded_len(&self, bits: usize) -> usize {
        bits * self.factor
    }

    /// Information bits (MSB first) to signs; bit `b` maps to `(-1)^b`.
    pub fn encode(&self, value: u64, bits: usize, out: &mut Vec<i8>) {
        for i in (0..bits).rev() {
            let s = if (value >> i) & 1 == 1 { -1 } else { 1 };
            out.extend(std::iter::repeat_n(s, self.factor));
        }
    }

    /// Majority vote per block; ties reject.
    pub fn decode(&self, hard: &[i8], bits: usize) -> Result<u64, Reject> {
        if hard.len() < self.coded_len(bits) {
            return Err(Reject::Length);
        }
        let mut value = 0u64;
        for block in hard.chunks(self.factor).take(bits) {
            let sum: i32 = block.iter().map(|&s| s as i32).sum();
            let bit = match sum.signum() {
                1 => 0,
                -1 => 1,
                _ => return Err(Reject::Tie),
            };
            value = (value << 1) | bit;
        }
        Ok(value)
    }
}

/// Subframe-0 codec for a fixed `(N, S, R, C0)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Subframe0Codec {
    pub n: u64,
    pub s: u64,
    pub c0: usize,
    pub info_bits: usize,
    pub code: RepetitionCode,
}

impl Subframe0Codec {
    pub fn new<F: Real>(n: u64, s: u64, rate: F, c0: usize) -> Result<Self> {
        if n < 1 || s < 1 {
            return Err(invalid("N/S", "must be at least 1"));
        }
        let info_bits = ceil_log2(n as u128 * s as u128) as usize;
        if info_bits > 64 {
            return Err(invalid("N/S", "more than 64 information bits"));
        }
        let code = RepetitionCode::from_rate(rate)?;
        if c0 < 1 + code.coded_len(info_bits) {
            return Err(invalid(
                "C0",
                format!("C0 = {c0} < 1 + {} coded symbols", code.coded_len(info_bits)),
            ));
        }
        Ok(Self { n, s, c0, info_bits, code })
    }

    /// Reference symbol, coded bits of `id * S + message`, then +1 padding.
    pub fn encode(&self, id: u64, message: u64) -> Result<Vec<i8>> {
        if id >= self.n {
            return Err(Error::IdOutOfRange { id, n: self.n });
        }
        if message >= self.s {
            return Err(Error::MessageOutOfRange { message, s: self.s });
        }
        let mut g = Vec::with_capacity(self.c0);
        g.push(1);
        self.code.encode(id * self.s + message, self.info_bits, &mut g);
        g.resize(self.c0, 1);
        Ok(g)
    }

    /// Decode the `C0 - 1` hard decisions that follow the reference symbol.
    pub fn decode(&self, hard: &[i8]) -> Result<(u64, u64), Reject> {
        if hard.len() != self.c0 - 1 {
            return Err(Reject::Length);
        }
        let x = self.code.decode(hard, self.info_bits)?;
        if x as u128 >= self.n as u128 * self.s as u128 {
            return Err(Reject::OutOfRange);
        }
        Ok((x / self.s, x % self.s))
    }
}

/// Free-function form of [`Subframe0Codec::encode`].
pub fn encode_subframe0<F: Real>(id: u64, message: u64, n: u64, s: u64, rate: F, c0: usize) -> Result<Vec<i8>> {
    Subframe0Codec::new(n, s, rate, c0)?.encode(id, message)
}

/// Free-function form of [`Subframe0Codec::decode`]; `C0` is inferred from
/// the input length.
pub fn decode_subframe0<F: Real>(hard: &[i8], n: u64, s: u64, rate: F) -> Result<(u64, u64), Reject> {
    let codec = Subframe0Codec::new(n, s, rate, hard.len() + 1).map_err(|_| Reject::Length)?;
    codec.decode(hard)
}

/// Everything one device sends in a slot.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DeviceCodeword {
    pub id: u64,
    pub message: u64,
    pub subcarriers: Vec<usize>,
    pub g_tilde: Vec<i8>,
    pub g_dot: Vec<i8>,
    pub chips: Vec<i8>,
}

impl DeviceCodeword {
    /// Subframe 0 followed by subframe 1.
    pub fn g(&self) -> impl Iterator<Item = i8> + '_ {
        self.g_tilde.iter().chain(&self.g_dot).copied()
    }

    pub fn uses(&self, b: usize) -> bool {
        self.subcarriers.binary_search(&b).is_ok()
    }
}

/// Codebook bound to one parameter set and public seed.
#[derive(Debug, Clone)]
pub struct Codebook {
    pub public_seed: u64,
    pub b: usize,
    pub d: usize,
    pub c1: usize,
    pub c2: usize,
    pub codec: Subframe0Codec,
}

impl Codebook {
    pub fn new<F: Real>(params: &SystemParams<F>, public_seed: u64) -> Result<Self> {
        Ok(Self {
            public_seed,
            b: params.b,
            d: params.d,
            c1: params.c1,
            c2: params.c2.unwrap_or(0),
            codec: Subframe0Codec::new(params.n, params.s, params.rate, params.c0)?,
        })
    }

    pub fn subcarriers(&self, id: u64) -> Vec<usize> {
        assign_subcarriers(id, self.b, self.d, self.public_seed).expect("D <= B checked by params")
    }

    pub fn g_dot(&self, id: u64) -> Vec<i8> {
        encode_subframe1(id, self.c1, self.public_seed)
    }

    pub fn chips(&self, id: u64) -> Vec<i8> {
        encode_subframe2(id, self.c2, self.public_seed)
    }

    pub fn codeword(&self, id: u64, message: u64) -> Result<DeviceCodeword> {
        Ok(DeviceCodeword {
            id,
            message,
            g_tilde: self.codec.encode(id, message)?,
            subcarriers: self.subcarriers(id),
            g_dot: self.g_dot(id),
            chips: self.chips(id),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn full_set_when_d_equals_b() {
        assert_eq!(assign_subcarriers(17, 5, 5, 3).unwrap(), vec![0, 1, 2, 3, 4]);
        assert!(assign_subcarriers(1, 2, 3, 0).is_err());
    }

    #[test]
    fn subcarriers_are_deterministic_and_distinct() {
        let a = assign_subcarriers(123, 300, 3, 9).unwrap();
        assert_eq!(a, assign_subcarriers(123, 300, 3, 9).unwrap());
        assert!(a.windows(2).all(|w| w[0] < w[1]));
        assert!(a.iter().all(|&x| x < 300));
    }

    #[test]
    fn subcarrier_inclusion_is_uniform() {
        // 1e5 ids, each subcarrier included with prob D/B = 0.01; the
        // binomial sd of a count is sqrt(n p (1-p)) ~ 31.5, allow 3 sd on
        // the worst of 300 counts via the max-deviation of a 5 sd envelope.
        let (b, d, n) = (300usize, 3usize, 100_000u64);
        let mut counts = vec![0u32; b];
        for id in 0..n {
            for s in assign_subcarriers(id, b, d, 42).unwrap() {
                counts[s] += 1;
            }
        }
        let p = d as f64 / b as f64;
        let mean = n as f64 * p;
        let sd = (n as f64 * p * (1.0 - p)).sqrt();
        let within3 = counts.iter().filter(|&&c| (c as f64 - mean).abs() <= 3.0 * sd).count();
        // P(|Z| > 3) = 0.0027, so ~0.8 of 300 expected outside.
        assert!(within3 >= 295, "{within3} of {b} within 3 sd");
        assert!(counts.iter().all(|&c| (c as f64 - mean).abs() <= 5.0 * sd));
    }

    #[test]
    fn subframe0_examples() {
        let codec = Subframe0Codec::new(4, 1, 0.5, 5).unwrap();
        assert_eq!(codec.encode(0, 0).unwrap(), vec![1, 1, 1, 1, 1]);
        assert_eq!(codec.encode(3, 0).unwrap(), vec![1, -1, -1, -1, -1]);
        assert!(codec.encode(4, 0).is_err());
        assert!(codec.encode(0, 1).is_err());
        let codec = Subframe0Codec::new(16, 1, 0.5, 9).unwrap();
        let g = codec.encode(5, 0).unwrap();
        assert_eq!(codec.decode(&g[1..]), Ok((5, 0)));
        let mut flipped = g[1..].to_vec();
        flipped[2] = -flipped[2];
        assert_eq!(codec.decode(&flipped), Err(Reject::Tie));
    }

    #[test]
    fn subframe0_padding_and_out_of_range() {
        // N = 5 needs 3 bits; 7 = 111 is outside 0..5.
        let codec = Subframe0Codec::new(5, 1, 0.5, 8).unwrap();
        let g = codec.encode(4, 0).unwrap();
        assert_eq!(g.len(), 8);
        assert_eq!(g[7], 1);
        assert_eq!(codec.decode(&[-1; 7]), Err(Reject::OutOfRange));
        assert!(Subframe0Codec::new(5, 1, 0.5, 6).is_err());
        assert!(Subframe0Codec::new(5, 1, 0.4, 16).is_err());
    }

    #[test]
    fn exhaustive_round_trip_small() {
        let codec = Subframe0Codec::new(64, 4, 0.5, 1 + 16 + 3).unwrap();
        for id in 0..64 {
            for msg in 0..4 {
                let g = codec.encode(id, msg).unwrap();
                assert_eq!(g[0], 1);
                assert_eq!(codec.decode(&g[1..]), Ok((id, msg)));
            }
        }
    }

    #[test]
    fn subframe_sequences_are_deterministic() {
        assert_eq!(encode_subframe1(5, 100, 1), encode_subframe1(5, 100, 1));
        assert_ne!(encode_subframe1(5, 100, 1), encode_subframe1(6, 100, 1));
        // Different tags give different streams for the same id.
        assert_ne!(encode_subframe1(5, 100, 1), encode_subframe2(5, 100, 1));
        // Prefix property: a longer draw extends a shorter one.
        assert_eq!(encode_subframe2(9, 70, 4)[..10], encode_subframe2(9, 10, 4)[..]);
    }
}

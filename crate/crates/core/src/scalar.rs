//! Scalar abstraction shared by every numeric routine in the crate.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_complex::Complex;
use num_traits::{Float, FloatConst, FromPrimitive, ToPrimitive};
use rand::Rng;
use rand_distr::StandardNormal;

/// Real scalar the simulator runs on: `f32` or `f64`.
///
/// Besides the usual float arithmetic this carries the two random draws the
/// channel and statistic noise need, so generic code does not have to spell
/// out `StandardNormal: Distribution<F>` bounds everywhere.
pub trait Real:
    Float + FloatConst + FromPrimitive + ToPrimitive + Debug + Display + Default + Sum + Send + Sync + 'static
{
    /// Standard normal draw, N(0, 1).
    fn std_normal<R: Rng + ?Sized>(rng: &mut R) -> Self;

    /// Uniform draw on [0, 1).
    fn unit<R: Rng + ?Sized>(rng: &mut R) -> Self;

    /// Lossy conversion from `f64`; always succeeds for the supported types.
    fn of(x: f64) -> Self {
        Self::from_f64(x).expect("f64 converts to every supported scalar")
    }

    /// Conversion from a count.
    fn of_usize(n: usize) -> Self {
        Self::from_usize(n).expect("usize converts to every supported scalar")
    }

    fn to_f64_lossy(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }
}

macro_rules! impl_real {
    ($($t:ty),*) => {$(
        impl Real for $t {
            #[inline]
            fn std_normal<R: Rng + ?Sized>(rng: &mut R) -> Self {
                rng.sample::<$t, _>(StandardNormal)
            }

            #[inline]
            fn unit<R: Rng + ?Sized>(rng: &mut R) -> Self {
                rng.random::<$t>()
            }
        }
    )*};
}

impl_real!(f32, f64);

/// Circularly-symmetric complex Gaussian draw with `var` total variance
/// (`var / 2` per real dimension).
pub fn complex_gaussian<F: Real, R: Rng + ?Sized>(rng: &mut R, var: F) -> Complex<F> {
    let sd = (var / (F::one() + F::one())).sqrt();
    Complex::new(F::std_normal(rng) * sd, F::std_normal(rng) * sd)
}

/// `e^{i theta}`.
#[inline]
pub fn cis<F: Real>(theta: F) -> Complex<F> {
    Complex::new(theta.cos(), theta.sin())
}

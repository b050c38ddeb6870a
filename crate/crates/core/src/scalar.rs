use num_traits::{Float, FromPrimitive, NumAssign, ToPrimitive};

/// Real scalar for every numeric kernel in the crate.
///
/// Training and inference run in `f32`; gradient checks run the same code
/// in `f64`, where central differences have enough headroom to resolve
/// 1e-4 relative errors.
pub trait Scalar:
    Float
    + FromPrimitive
    + ToPrimitive
    + NumAssign
    + std::fmt::Debug
    + std::fmt::Display
    + Send
    + Sync
    + 'static
{
    #[inline]
    fn of(x: f64) -> Self {
        Self::from_f64(x).expect("f64 representable as scalar")
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self.to_f64().expect("scalar representable as f64")
    }

    /// Exact-erf GeLU at native precision.
    fn gelu(self) -> Self;
    fn gelu_grad(self) -> Self;
}

impl Scalar for f32 {
    #[inline]
    fn gelu(self) -> f32 {
        0.5 * self * (1.0 + libm::erff(self * std::f32::consts::FRAC_1_SQRT_2))
    }

    #[inline]
    fn gelu_grad(self) -> f32 {
        let cdf = 0.5 * (1.0 + libm::erff(self * std::f32::consts::FRAC_1_SQRT_2));
        let pdf = (-0.5 * self * self).exp() * 0.398_942_28;
        cdf + self * pdf
    }
}

impl Scalar for f64 {
    #[inline]
    fn gelu(self) -> f64 {
        gelu(self)
    }

    #[inline]
    fn gelu_grad(self) -> f64 {
        gelu_grad(self)
    }
}

/// Exact-erf GeLU: x·Φ(x) with Φ the standard normal CDF.
pub fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + libm::erf(x / std::f64::consts::SQRT_2))
}

/// d/dx gelu(x) = Φ(x) + x·φ(x).
pub fn gelu_grad(x: f64) -> f64 {
    let phi_cdf = 0.5 * (1.0 + libm::erf(x / std::f64::consts::SQRT_2));
    let phi_pdf = (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt();
    phi_cdf + x * phi_pdf
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gelu_at_zero() {
        assert_eq!(gelu(0.0), 0.0);
        assert!((gelu_grad(0.0) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn gelu_limits() {
        assert!((gelu(10.0) - 10.0).abs() < 1e-9);
        assert!(gelu(-10.0).abs() < 1e-9);
    }

    #[test]
    fn gelu_grad_matches_finite_difference() {
        for &x in &[-2.0, -0.7, 0.3, 1.9] {
            let eps = 1e-6;
            let fd = (gelu(x + eps) - gelu(x - eps)) / (2.0 * eps);
            assert!((fd - gelu_grad(x)).abs() < 1e-8, "x={x}");
        }
    }
}

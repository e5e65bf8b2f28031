/// Scalar arithmetic context.
///
/// Implemented by [`Values`] (plain `f64`, nothing recorded) and by
/// [`Tape`](super::Tape) (every operation becomes a tape node). Residual
/// operators and jet rules are written once against this trait.
pub trait Arith {
    type Scalar: Copy;

    fn constant(&mut self, c: f64) -> Self::Scalar;
    fn value(&self, a: Self::Scalar) -> f64;

    fn add(&mut self, a: Self::Scalar, b: Self::Scalar) -> Self::Scalar;
    fn sub(&mut self, a: Self::Scalar, b: Self::Scalar) -> Self::Scalar;
    fn mul(&mut self, a: Self::Scalar, b: Self::Scalar) -> Self::Scalar;
    fn scale(&mut self, a: Self::Scalar, c: f64) -> Self::Scalar;
    fn add_const(&mut self, a: Self::Scalar, c: f64) -> Self::Scalar;
    fn tanh(&mut self, a: Self::Scalar) -> Self::Scalar;
    fn powf(&mut self, a: Self::Scalar, exponent: f64) -> Self::Scalar;
    fn recip(&mut self, a: Self::Scalar) -> Self::Scalar;
    /// `max(a, lo)`; the derivative is taken as zero where the clamp is active.
    fn max_const(&mut self, a: Self::Scalar, lo: f64) -> Self::Scalar;

    fn square(&mut self, a: Self::Scalar) -> Self::Scalar {
        self.mul(a, a)
    }
}

/// Value-only arithmetic.
#[derive(Debug, Default, Clone, Copy)]
pub struct Values;

impl Arith for Values {
    type Scalar = f64;

    fn constant(&mut self, c: f64) -> f64 {
        c
    }
    fn value(&self, a: f64) -> f64 {
        a
    }
    fn add(&mut self, a: f64, b: f64) -> f64 {
        a + b
    }
    fn sub(&mut self, a: f64, b: f64) -> f64 {
        a - b
    }
    fn mul(&mut self, a: f64, b: f64) -> f64 {
        a * b
    }
    fn scale(&mut self, a: f64, c: f64) -> f64 {
        a * c
    }
    fn add_const(&mut self, a: f64, c: f64) -> f64 {
        a + c
    }
    fn tanh(&mut self, a: f64) -> f64 {
        a.tanh()
    }
    fn powf(&mut self, a: f64, exponent: f64) -> f64 {
        a.powf(exponent)
    }
    fn recip(&mut self, a: f64) -> f64 {
        1.0 / a
    }
    fn max_const(&mut self, a: f64, lo: f64) -> f64 {
        if a >= lo {
            a
        } else {
            lo
        }
    }
}

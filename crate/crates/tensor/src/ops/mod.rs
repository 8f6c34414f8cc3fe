pub mod conv;
pub mod linalg;
pub mod norm;
pub mod resample;

use crate::real::Real;

/// Elementwise unary functions with closed-form derivatives.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Unary {
    Neg,
    Exp,
    Ln,
    Sqrt,
    Abs,
    Square,
    Recip,
    Sigmoid,
    /// tanh approximation of GELU
    Gelu,
    Softplus,
    Scale(f64),
    AddScalar(f64),
}

const GELU_K: f64 = 0.797_884_560_802_865_4; // sqrt(2 / pi)
const GELU_C: f64 = 0.044_715;

pub fn sigmoid<T: Real>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

pub fn softplus<T: Real>(x: T) -> T {
    x.max(T::zero()) + (-x.abs()).exp().ln_1p()
}

impl Unary {
    pub fn apply<T: Real>(self, x: T) -> T {
        match self {
            Unary::Neg => -x,
            Unary::Exp => x.exp(),
            Unary::Ln => x.ln(),
            Unary::Sqrt => x.sqrt(),
            Unary::Abs => x.abs(),
            Unary::Square => x * x,
            Unary::Recip => x.recip(),
            Unary::Sigmoid => sigmoid(x),
            Unary::Gelu => {
                let (k, c) = (T::of(GELU_K), T::of(GELU_C));
                T::of(0.5) * x * (T::one() + (k * (x + c * x * x * x)).tanh())
            }
            Unary::Softplus => softplus(x),
            Unary::Scale(s) => x * T::of(s),
            Unary::AddScalar(s) => x + T::of(s),
        }
    }

    /// Derivative given the input `x` and the already computed output `y`.
    pub fn derivative<T: Real>(self, x: T, y: T) -> T {
        match self {
            Unary::Neg => -T::one(),
            Unary::Exp => y,
            Unary::Ln => x.recip(),
            Unary::Sqrt => T::of(0.5) / y,
            Unary::Abs => {
                if x > T::zero() {
                    T::one()
                } else if x < T::zero() {
                    -T::one()
                } else {
                    T::zero()
                }
            }
            Unary::Square => T::of(2.0) * x,
            Unary::Recip => -y * y,
            Unary::Sigmoid => y * (T::one() - y),
            Unary::Gelu => {
                let (k, c) = (T::of(GELU_K), T::of(GELU_C));
                let t = (k * (x + c * x * x * x)).tanh();
                let half = T::of(0.5);
                half * (T::one() + t) + half * x * (T::one() - t * t) * k * (T::one() + T::of(3.0) * c * x * x)
            }
            Unary::Softplus => sigmoid(x),
            Unary::Scale(s) => T::of(s),
            Unary::AddScalar(_) => T::one(),
        }
    }
}

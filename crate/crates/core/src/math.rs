//! Scalar math routed through `libm` so results are bit-identical across
//! platforms and available without `std`.

pub fn exp(x: f64) -> f64 {
    libm::exp(x)
}

pub fn sqrt(x: f64) -> f64 {
    libm::sqrt(x)
}

pub fn sin(x: f64) -> f64 {
    libm::sin(x)
}

pub fn cos(x: f64) -> f64 {
    libm::cos(x)
}

pub fn pow(x: f64, y: f64) -> f64 {
    libm::pow(x, y)
}

pub fn erf(x: f64) -> f64 {
    libm::erf(x)
}

pub fn abs(x: f64) -> f64 {
    libm::fabs(x)
}

pub fn floor(x: f64) -> f64 {
    libm::floor(x)
}

/// Standard normal density, used by the exact-GELU derivative.
pub fn norm_pdf(x: f64) -> f64 {
    const INV_SQRT_2PI: f64 = 0.39894228040143267794;
    INV_SQRT_2PI * exp(-0.5 * x * x)
}

//! Float math shims so the crate builds with `std` or with `libm`.
//!
//! Only the handful of transcendental functions the engine actually uses are
//! wrapped. With `std` these forward to the inherent float methods; without
//! it they call the pure-Rust `libm` implementations.

#[cfg(feature = "std")]
mod imp {
    pub fn sqrt_f64(x: f64) -> f64 {
        x.sqrt()
    }
    pub fn ln_f64(x: f64) -> f64 {
        x.ln()
    }
    pub fn exp_f64(x: f64) -> f64 {
        x.exp()
    }
    pub fn cos_f64(x: f64) -> f64 {
        x.cos()
    }
    pub fn sin_f64(x: f64) -> f64 {
        x.sin()
    }
    pub fn sqrt_f32(x: f32) -> f32 {
        x.sqrt()
    }
}

#[cfg(not(feature = "std"))]
mod imp {
    pub fn sqrt_f64(x: f64) -> f64 {
        libm::sqrt(x)
    }
    pub fn ln_f64(x: f64) -> f64 {
        libm::log(x)
    }
    pub fn exp_f64(x: f64) -> f64 {
        libm::exp(x)
    }
    pub fn cos_f64(x: f64) -> f64 {
        libm::cos(x)
    }
    pub fn sin_f64(x: f64) -> f64 {
        libm::sin(x)
    }
    pub fn sqrt_f32(x: f32) -> f32 {
        libm::sqrtf(x)
    }
}

pub use imp::*;

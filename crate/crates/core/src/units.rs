//! Unit constants. Everything inside the crate is SI.

/// One inch in metres (exact).
pub const INCH: f64 = 0.0254;

/// Standard gravity, m/s².
pub const STANDARD_GRAVITY: f64 = 9.80665;

/// Vacuum permittivity, F/m.
pub const EPSILON_0: f64 = 8.854_187_812_8e-12;

pub fn inch(value: f64) -> f64 {
    value * INCH
}

pub fn rad_per_s_to_rpm(omega: f64) -> f64 {
    omega * 60.0 / (2.0 * std::f64::consts::PI)
}

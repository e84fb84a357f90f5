//! Exponent calculus for the (p, q)-supersolution framework.
//!
//! Everything here is a pure function of its arguments. Window checks use
//! strict inequalities with no tolerance.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Model constants of the regularized system plus the exponents used by the
/// monitors.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelParams {
    /// Chemotactic sensitivity.
    pub chi: f64,
    /// Saturation parameter of the regularized sensitivity.
    pub eps: f64,
    pub p: f64,
    pub q: f64,
    /// Spatial dimension the parameters are certified for (2 or 3).
    #[serde(default = "default_dim")]
    pub dim: u32,
    /// Exponent of the space-time integral of c^r.
    #[serde(default = "default_r_c")]
    pub r_c: f64,
    /// Exponent of the space-time integral of |grad c|^r.
    #[serde(default = "default_r_gc")]
    pub r_gc: f64,
}

fn default_dim() -> u32 {
    2
}

fn default_r_c() -> f64 {
    1.5
}

fn default_r_gc() -> f64 {
    1.2
}

impl Default for ModelParams {
    fn default() -> Self {
        ModelParams {
            chi: 2.0,
            eps: 0.1,
            p: 0.2,
            q: 0.3,
            dim: 2,
            r_c: 1.5,
            r_gc: 1.2,
        }
    }
}

impl ModelParams {
    /// Checks the open-interval constraints on each field.
    pub fn validate(&self) -> Result<()> {
        let open01 = |v: f64| v > 0.0 && v < 1.0;
        if !(self.chi > 0.0 && self.chi.is_finite()) {
            return Err(Error::domain(format!(
                "chi must be positive, got {}",
                self.chi
            )));
        }
        if !open01(self.eps) {
            return Err(Error::domain(format!(
                "eps must lie in (0,1), got {}",
                self.eps
            )));
        }
        if !open01(self.p) {
            return Err(Error::domain(format!(
                "p must lie in (0,1), got {}",
                self.p
            )));
        }
        if !open01(self.q) {
            return Err(Error::domain(format!(
                "q must lie in (0,1), got {}",
                self.q
            )));
        }
        if self.dim != 2 && self.dim != 3 {
            return Err(Error::domain(format!(
                "dim must be 2 or 3, got {}",
                self.dim
            )));
        }
        if !(self.r_c >= 1.0) || !(self.r_gc >= 1.0) {
            return Err(Error::domain("monitor exponents r_c and r_gc must be >= 1"));
        }
        Ok(())
    }

    /// Exponent rho of the space-time integral of n^rho. Any rho in [1, p+1)
    /// is controlled; the midpoint-ish choice 1 + p/2 is used.
    pub fn rho(&self) -> f64 {
        1.0 + 0.5 * self.p
    }

    /// Whether r_c stays below 5/3, the range in which the c^r integral is
    /// known to be bounded.
    pub fn r_c_in_theory(&self) -> bool {
        self.r_c < 5.0 / 3.0
    }

    /// Whether r_gc stays below 5/4.
    pub fn r_gc_in_theory(&self) -> bool {
        self.r_gc < 1.25
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QWindow {
    pub low: f64,
    pub high: f64,
}

impl QWindow {
    pub fn contains(&self, q: f64) -> bool {
        q > self.low && q < self.high
    }

    pub fn width(&self) -> f64 {
        self.high - self.low
    }

    pub fn midpoint(&self) -> f64 {
        0.5 * (self.low + self.high)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdmissibilityReport {
    /// p < 1/chi^2.
    pub p_ok: bool,
    /// (q_-(p), q_+(p)); `None` when the discriminant is negative.
    pub q_window: Option<QWindow>,
    pub q_ok: bool,
    /// p + 3q/5 < 2/3.
    pub pq_cond: bool,
    pub chi_ok: bool,
    /// Infimum over s = eps*n >= 0 of the supersolution coefficient.
    pub coefficient_floor: f64,
    pub exponent_infimum: f64,
}

impl AdmissibilityReport {
    pub fn fully_admissible(&self) -> bool {
        self.p_ok && self.q_ok && self.pq_cond && self.chi_ok && self.coefficient_floor > 0.0
    }
}

/// The admissible window (q_-(p), q_+(p)) = ((1-p)/2)(1 -/+ sqrt(1 - p chi^2)).
pub fn q_pm(p: f64, chi: f64) -> Result<(f64, f64)> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::domain(format!("p must lie in (0,1), got {p}")));
    }
    if !(chi > 0.0) {
        return Err(Error::domain(format!("chi must be positive, got {chi}")));
    }
    let disc = 1.0 - p * chi * chi;
    if disc < 0.0 {
        return Err(Error::domain(format!(
            "p = {p} is not below 1/chi^2 = {}",
            1.0 / (chi * chi)
        )));
    }
    let half = 0.5 * (1.0 - p);
    let root = disc.sqrt();
    Ok((half * (1.0 - root), half * (1.0 + root)))
}

/// Dimension-dependent upper threshold on chi: none in 2D, 5/3 in 3D.
pub fn admissible_chi(chi: f64, dim: u32) -> bool {
    match dim {
        2 => chi > 0.0,
        3 => chi > 0.0 && chi < 5.0 / 3.0,
        _ => false,
    }
}

pub fn check_pq(params: &ModelParams) -> AdmissibilityReport {
    let ModelParams { chi, p, q, dim, .. } = *params;
    let p_ok = p > 0.0 && p < 1.0 && p * chi * chi < 1.0;
    let q_window = q_pm(p, chi).ok().map(|(low, high)| QWindow { low, high });
    let q_ok = p_ok && q_window.map_or(false, |w| w.contains(q));
    let pq_cond = p + 3.0 * q / 5.0 < 2.0 / 3.0;
    let coefficient_floor = if q > 0.0 && q < 1.0 && p > 0.0 && p < 1.0 {
        coefficient_infimum(p, q, chi)
    } else {
        f64::NAN
    };
    AdmissibilityReport {
        p_ok,
        q_window,
        q_ok,
        pq_cond,
        chi_ok: admissible_chi(chi, dim),
        coefficient_floor,
        exponent_infimum: exponent_infimum(chi),
    }
}

/// The coefficient
///
/// ```text
///   4(1-p)q - 4q^2 - p(1-p)^2 chi^2 / (1+s)^2
///   -----------------------------------------
///        p q ( p chi / (1+s) + 1 - q )
/// ```
///
/// with `s` standing for eps*n. At s = 0 it is the eps-free coefficient of the
/// weak supersolution inequality.
pub fn supersolution_coefficient(p: f64, q: f64, chi: f64, s: f64) -> Result<f64> {
    if p == 0.0 || q == 0.0 {
        return Err(Error::domain(
            "supersolution coefficient undefined for p = 0 or q = 0",
        ));
    }
    if !(s >= 0.0) {
        return Err(Error::domain(format!("s must be nonnegative, got {s}")));
    }
    Ok(coefficient_at(p, q, chi, 1.0 / (1.0 + s)))
}

/// Coefficient as a function of x = 1/(1+s) in (0, 1].
#[inline]
pub(crate) fn coefficient_at(p: f64, q: f64, chi: f64, x: f64) -> f64 {
    let num = 4.0 * (1.0 - p) * q - 4.0 * q * q - p * (1.0 - p) * (1.0 - p) * chi * chi * x * x;
    let den = p * q * (p * chi * x + 1.0 - q);
    num / den
}

/// Strictly positive lower bound of the coefficient over all s >= 0 for an
/// admissible triple. The numerator is nondecreasing and the denominator
/// nonincreasing in s, so the infimum sits at s = 0.
pub fn coefficient_lower_bound(p: f64, q: f64, chi: f64) -> Result<f64> {
    let (lo, hi) = q_pm(p, chi)?;
    if p * chi * chi >= 1.0 {
        return Err(Error::domain("p must be strictly below 1/chi^2"));
    }
    if !(q > lo && q < hi) {
        return Err(Error::domain(format!(
            "q = {q} outside the admissible window ({lo}, {hi})"
        )));
    }
    supersolution_coefficient(p, q, chi, 0.0)
}

/// Infimum over s in [0, inf) of the coefficient for arbitrary p, q in (0,1).
///
/// Inside the q-window this is the value at s = 0. Outside, the numerator at
/// s = 0 is negative and the quotient can dip below its s = 0 value, so the
/// interior stationary point of x -> coefficient_at(x) is checked as well.
pub fn coefficient_infimum(p: f64, q: f64, chi: f64) -> f64 {
    let a = 4.0 * (1.0 - p) * q - 4.0 * q * q;
    let b = p * (1.0 - p) * (1.0 - p) * chi * chi;
    let mut best = coefficient_at(p, q, chi, 1.0).min(coefficient_at(p, q, chi, 0.0));
    // Stationary points solve b p chi x^2 + 2 b (1-q) x + a p chi = 0.
    let qa = b * p * chi;
    let qb = 2.0 * b * (1.0 - q);
    let qc = a * p * chi;
    if qa > 0.0 {
        let disc = qb * qb - 4.0 * qa * qc;
        if disc >= 0.0 {
            let sq = disc.sqrt();
            for x in [(-qb + sq) / (2.0 * qa), (-qb - sq) / (2.0 * qa)] {
                if x > 0.0 && x < 1.0 {
                    best = best.min(coefficient_at(p, q, chi, x));
                }
            }
        }
    }
    best
}

/// inf (1-q)/p over 0 < p < min(1, 1/chi^2), q in (q_-(p), q_+(p)).
pub fn exponent_infimum(chi: f64) -> f64 {
    if chi <= 1.0 {
        1.0
    } else if chi < 2.0 {
        chi
    } else {
        1.0 + chi * chi / 4.0
    }
}

/// Comparison bound sqrt(b/a) coth(sqrt(ab) t) for y' <= -a y^2 + b.
pub fn coth_bound(a: f64, b: f64, t: f64) -> Result<f64> {
    if !(a > 0.0 && b > 0.0 && t > 0.0) {
        return Err(Error::domain(format!(
            "coth bound needs a, b, t > 0 (got a={a}, b={b}, t={t})"
        )));
    }
    let arg = (a * b).sqrt() * t;
    Ok((b / a).sqrt() / arg.tanh())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rel(a: f64, b: f64) -> f64 {
        (a - b).abs() / b.abs().max(1e-300)
    }

    #[test]
    fn q_window_double_root() {
        let (lo, hi) = q_pm(0.25, 2.0).unwrap();
        assert_eq!(lo, 0.375);
        assert_eq!(hi, 0.375);
    }

    #[test]
    fn q_window_closed_form() {
        let (lo, hi) = q_pm(0.5, 1.0).unwrap();
        assert!((lo - 0.0732233047033631).abs() < 1e-12);
        assert!((hi - 0.4267766952966369).abs() < 1e-12);
    }

    #[test]
    fn q_window_small_p_limit() {
        let (lo, hi) = q_pm(1e-12, 1.0).unwrap();
        assert!(lo.abs() < 1e-11);
        assert!((hi - 1.0).abs() < 1e-11);
    }

    #[test]
    fn q_window_rejects_negative_discriminant() {
        assert!(matches!(q_pm(0.3, 2.0), Err(Error::Domain(_))));
    }

    #[test]
    fn chi_threshold() {
        assert!(admissible_chi(100.0, 2));
        assert!(admissible_chi(1.6, 3));
        assert!(!admissible_chi(5.0 / 3.0, 3));
    }

    #[test]
    fn check_pq_examples() {
        let mut m = ModelParams {
            chi: 1.0,
            p: 0.5,
            q: 0.25,
            ..Default::default()
        };
        let r = check_pq(&m);
        assert!(r.p_ok && r.q_ok && r.pq_cond);

        m = ModelParams {
            chi: 2.0,
            p: 0.3,
            q: 0.3,
            ..Default::default()
        };
        let r = check_pq(&m);
        assert!(!r.p_ok);
        assert!(r.q_window.is_none());

        m = ModelParams {
            chi: 1.0,
            p: 0.6,
            q: 0.3,
            ..Default::default()
        };
        assert!(!check_pq(&m).pq_cond);
    }

    #[test]
    fn coefficient_values() {
        let c0 = supersolution_coefficient(0.5, 0.25, 1.0, 0.0).unwrap();
        assert!(rel(c0, 0.8) < 1e-14);
        let cinf = supersolution_coefficient(0.5, 0.25, 1.0, 1e9).unwrap();
        assert!((cinf - 8.0 / 3.0).abs() < 1e-8);
        let edge = supersolution_coefficient(0.25, 0.375, 2.0, 0.0).unwrap();
        assert!(edge.abs() < 1e-15);
        assert!(supersolution_coefficient(0.0, 0.3, 1.0, 0.0).is_err());
        assert!(supersolution_coefficient(0.3, 0.0, 1.0, 0.0).is_err());
    }

    #[test]
    fn lower_bound_near_window_edge() {
        let (_, hi) = q_pm(0.5, 1.0).unwrap();
        let v = coefficient_lower_bound(0.5, hi - 1e-9, 1.0).unwrap();
        assert!(v > 0.0 && v < 1e-6, "{v}");
        assert!(coefficient_lower_bound(0.5, hi + 1e-3, 1.0).is_err());
    }

    #[test]
    fn infimum_outside_window_is_negative() {
        // q above the window: numerator negative for every s.
        let v = coefficient_infimum(0.5, 0.6, 1.0);
        assert!(v < 0.0);
        // sampled check that nothing dips below the reported infimum
        for k in 0..=4000 {
            let s = if k == 0 {
                0.0
            } else {
                10f64.powf(-4.0 + 10.0 * k as f64 / 4000.0)
            };
            let c = supersolution_coefficient(0.5, 0.6, 1.0, s).unwrap();
            assert!(c >= v - 1e-12 * v.abs());
        }
    }

    #[test]
    fn exponent_infimum_branches() {
        assert_eq!(exponent_infimum(0.5), 1.0);
        assert_eq!(exponent_infimum(1.5), 1.5);
        assert_eq!(exponent_infimum(2.0), 2.0);
        assert_eq!(exponent_infimum(3.0), 3.25);
    }

    #[test]
    fn coth_examples() {
        let v = coth_bound(1.0, 1.0, 1.0).unwrap();
        assert!((v - 1.3130352854993313).abs() < 1e-12);
        let v = coth_bound(4.0, 1.0, 1e3).unwrap();
        assert!((v - 0.5).abs() < 1e-12);
        assert!(coth_bound(0.0, 1.0, 1.0).is_err());
        assert!(coth_bound(1.0, -1.0, 1.0).is_err());
        assert!(coth_bound(1.0, 1.0, 0.0).is_err());
    }

    #[test]
    fn validate_rejects_bad_fields() {
        let good = ModelParams::default();
        assert!(good.validate().is_ok());
        assert!(ModelParams { eps: 1.0, ..good }.validate().is_err());
        assert!(ModelParams { chi: -1.0, ..good }.validate().is_err());
        assert!(ModelParams { dim: 4, ..good }.validate().is_err());
        assert!(ModelParams { r_c: 0.5, ..good }.validate().is_err());
    }
}

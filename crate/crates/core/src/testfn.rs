//! Analytic test functions with exact derivatives.
//!
//! Scalar test functions are products of cosine modes (zero normal derivative
//! on every face of the box) and a smooth time cutoff. Solenoidal vector test
//! fields are curls of a stream function that vanishes to second order on the
//! boundary.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

/// Time profile of a test function.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeWindow {
    pub t0: f64,
    pub t1: f64,
    /// When set, eta == 1 for every t (no cutoff at all).
    #[serde(default)]
    pub plateau: bool,
}

impl TimeWindow {
    pub fn bump(t0: f64, t1: f64) -> Self {
        TimeWindow {
            t0,
            t1,
            plateau: false,
        }
    }

    pub fn plateau() -> Self {
        TimeWindow {
            t0: 0.0,
            t1: f64::INFINITY,
            plateau: true,
        }
    }

    /// Support mapped to tau in (-1, 1). A window starting at t = 0 is
    /// mirrored to (-t1, t1), so eta(0) = 1 and the initial-data term is
    /// exercised.
    fn tau(&self, t: f64) -> (f64, f64) {
        let (a, b) = if self.t0 == 0.0 {
            (-self.t1, self.t1)
        } else {
            (self.t0, self.t1)
        };
        let scale = 2.0 / (b - a);
        ((t - a) * scale - 1.0, scale)
    }

    /// eta(t) = exp(1 - 1/(1 - tau^2)) inside the window, 0 outside.
    pub fn eta(&self, t: f64) -> f64 {
        if self.plateau {
            return 1.0;
        }
        if t >= self.t1 || t <= self.t0 && self.t0 != 0.0 {
            return 0.0;
        }
        let (tau, _) = self.tau(t);
        let d = 1.0 - tau * tau;
        if d <= 0.0 {
            0.0
        } else {
            (1.0 - 1.0 / d).exp()
        }
    }

    pub fn eta_dt(&self, t: f64) -> f64 {
        if self.plateau {
            return 0.0;
        }
        let e = self.eta(t);
        if e == 0.0 {
            return 0.0;
        }
        let (tau, scale) = self.tau(t);
        let d = 1.0 - tau * tau;
        // d/dtau exp(1 - 1/d) = exp(.) * (-2 tau / d^2)
        e * (-2.0 * tau / (d * d)) * scale
    }
}

/// Serializable description of a scalar test function.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TestFunctionSpec {
    pub k: u32,
    pub m: u32,
    #[serde(default)]
    pub l: u32,
    pub t0: f64,
    pub t1: f64,
    #[serde(default = "default_true")]
    pub nonneg: bool,
    #[serde(default)]
    pub plateau: bool,
    #[serde(default = "default_one")]
    pub amplitude: f64,
}

fn default_true() -> bool {
    true
}

fn default_one() -> f64 {
    1.0
}

impl TestFunctionSpec {
    pub fn window(&self) -> TimeWindow {
        if self.plateau {
            TimeWindow::plateau()
        } else {
            TimeWindow::bump(self.t0, self.t1)
        }
    }
}

/// phi(x, t) = A (s + prod_a cos(k_a pi x_a / L_a)) eta(t), with s = 1 for
/// the nonnegative variant and s = 0 otherwise.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TestFunction {
    pub modes: [u32; 3],
    pub window: TimeWindow,
    pub amplitude: f64,
    pub nonneg: bool,
    pub len: [f64; 3],
}

pub fn make_cosine_phi(
    k: u32,
    m: u32,
    window: TimeWindow,
    nonneg: bool,
    len: [f64; 3],
) -> TestFunction {
    TestFunction {
        modes: [k, m, 0],
        window,
        amplitude: 1.0,
        nonneg,
        len,
    }
}

impl TestFunction {
    pub fn from_spec(spec: &TestFunctionSpec, len: [f64; 3]) -> Self {
        TestFunction {
            modes: [spec.k, spec.m, spec.l],
            window: spec.window(),
            amplitude: spec.amplitude,
            nonneg: spec.nonneg,
            len,
        }
    }

    /// phi == 1 at all times: the constant test function of the balance law.
    pub fn constant_one(len: [f64; 3]) -> Self {
        TestFunction {
            modes: [0, 0, 0],
            window: TimeWindow::plateau(),
            amplitude: 0.5,
            nonneg: true,
            len,
        }
    }

    fn wave(&self, a: usize) -> f64 {
        self.modes[a] as f64 * PI / self.len[a]
    }

    fn spatial(&self, x: [f64; 3]) -> f64 {
        let prod: f64 = (0..3).map(|a| (self.wave(a) * x[a]).cos()).product();
        self.amplitude * (if self.nonneg { 1.0 } else { 0.0 } + prod)
    }

    pub fn value(&self, x: [f64; 3], t: f64) -> f64 {
        let e = self.window.eta(t);
        if e == 0.0 {
            return 0.0;
        }
        self.spatial(x) * e
    }

    pub fn time_derivative(&self, x: [f64; 3], t: f64) -> f64 {
        let e = self.window.eta_dt(t);
        if e == 0.0 {
            return 0.0;
        }
        self.spatial(x) * e
    }

    pub fn gradient(&self, x: [f64; 3], t: f64) -> [f64; 3] {
        let e = self.window.eta(t);
        let mut g = [0.0; 3];
        if e == 0.0 {
            return g;
        }
        let cosines: [f64; 3] = std::array::from_fn(|a| (self.wave(a) * x[a]).cos());
        for a in 0..3 {
            let w = self.wave(a);
            let mut v = -w * (w * x[a]).sin();
            for b in 0..3 {
                if b != a {
                    v *= cosines[b];
                }
            }
            g[a] = self.amplitude * v * e;
        }
        g
    }

    pub fn laplacian(&self, x: [f64; 3], t: f64) -> f64 {
        let e = self.window.eta(t);
        if e == 0.0 {
            return 0.0;
        }
        let k2: f64 = (0..3).map(|a| self.wave(a).powi(2)).sum();
        let prod: f64 = (0..3).map(|a| (self.wave(a) * x[a]).cos()).product();
        -self.amplitude * k2 * prod * e
    }

    /// Whether phi >= 0 everywhere by construction.
    pub fn is_nonneg(&self) -> bool {
        self.nonneg && self.amplitude >= 0.0
    }
}

/// Vector test field with analytic derivatives. Implementors need not be
/// solenoidal; residual evaluation checks that.
pub trait VectorTestFunction: Sync {
    fn value(&self, x: [f64; 3], t: f64) -> [f64; 3];
    fn time_derivative(&self, x: [f64; 3], t: f64) -> [f64; 3];
    /// `grad[a][b] = d psi_a / d x_b`.
    fn gradient(&self, x: [f64; 3], t: f64) -> [[f64; 3]; 3];
}

/// psi = (d_y S, -d_x S) with S = sin^2(k pi x / Lx) sin^2(m pi y / Ly) eta(t).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolenoidalTestField {
    pub modes: [u32; 2],
    pub window: TimeWindow,
    pub amplitude: f64,
    pub len: [f64; 3],
}

pub fn make_stream_psi(modes: [u32; 2], window: TimeWindow, len: [f64; 3]) -> SolenoidalTestField {
    assert!(modes[0] >= 1 && modes[1] >= 1, "stream modes must be >= 1");
    SolenoidalTestField {
        modes,
        window,
        amplitude: 1.0,
        len,
    }
}

impl SolenoidalTestField {
    fn waves(&self) -> (f64, f64) {
        (
            self.modes[0] as f64 * PI / self.len[0],
            self.modes[1] as f64 * PI / self.len[1],
        )
    }

    fn spatial(&self, x: [f64; 3]) -> [f64; 3] {
        let (a, b) = self.waves();
        let (sx, sy) = ((a * x[0]).sin(), (b * x[1]).sin());
        [
            self.amplitude * b * sx * sx * (2.0 * b * x[1]).sin(),
            -self.amplitude * a * (2.0 * a * x[0]).sin() * sy * sy,
            0.0,
        ]
    }
}

impl VectorTestFunction for SolenoidalTestField {
    fn value(&self, x: [f64; 3], t: f64) -> [f64; 3] {
        let e = self.window.eta(t);
        self.spatial(x).map(|v| v * e)
    }

    fn time_derivative(&self, x: [f64; 3], t: f64) -> [f64; 3] {
        let e = self.window.eta_dt(t);
        self.spatial(x).map(|v| v * e)
    }

    fn gradient(&self, x: [f64; 3], t: f64) -> [[f64; 3]; 3] {
        let e = self.window.eta(t) * self.amplitude;
        let (a, b) = self.waves();
        let (sx, sy) = ((a * x[0]).sin(), (b * x[1]).sin());
        let (s2x, s2y) = ((2.0 * a * x[0]).sin(), (2.0 * b * x[1]).sin());
        let (c2x, c2y) = ((2.0 * a * x[0]).cos(), (2.0 * b * x[1]).cos());
        [
            [a * b * s2x * s2y * e, 2.0 * b * b * sx * sx * c2y * e, 0.0],
            [
                -2.0 * a * a * c2x * sy * sy * e,
                -a * b * s2x * s2y * e,
                0.0,
            ],
            [0.0; 3],
        ]
    }
}

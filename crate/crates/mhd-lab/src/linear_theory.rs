//! Exact per-mode analysis of the damped wave equation
//! `y'' + |xi|^2 y' + xi_3^2 y = 0` obtained by linearizing the
//! Lagrangian system, plus a continuous-frequency quadrature that
//! evaluates weighted L2 norms of the propagated data on R^3 (which the
//! torus solver cannot reach: algebraic decay rates live at frequency
//! xi_3 -> 0).
//!
//! Eigenvalues lambda_{+-} = -(|xi|^2 +- sqrt(|xi|^4 - 4 xi_3^2))/2.
//! The small root behaves like -xi_3^2/|xi|^2 in the parabolic region
//! |xi|^2 > 2|xi_3| and creates the slowly-decaying layer near xi_3 = 0
//! that sets the algebraic decay rates.

use num_complex::Complex64;

/// Qualitative type of an eigenvalue pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Regime {
    /// discriminant < 0: complex-conjugate pair
    Oscillatory,
    /// discriminant ~ 0 (relative 1e-10): double root
    Degenerate,
    /// discriminant > 0: two real roots
    RealSplit,
    /// xi = 0: both roots zero, flagged
    Zero,
}

#[derive(Debug, Clone, Copy)]
pub struct ModeCoefficients {
    pub xi: [f64; 3],
    pub lambda_plus: Complex64,
    pub lambda_minus: Complex64,
    pub regime: Regime,
}

/// Eigenvalues of the mode ODE, with the larger-magnitude root computed
/// directly and the smaller via the product xi_3^2 = lambda_+ lambda_-
/// (avoids cancellation in the parabolic region).
pub fn eigenvalues(xi: [f64; 3]) -> ModeCoefficients {
    let q = xi[0] * xi[0] + xi[1] * xi[1] + xi[2] * xi[2];
    let p = xi[2] * xi[2];
    if q == 0.0 {
        return ModeCoefficients {
            xi,
            lambda_plus: Complex64::new(0.0, 0.0),
            lambda_minus: Complex64::new(0.0, 0.0),
            regime: Regime::Zero,
        };
    }
    let disc = q * q - 4.0 * p;
    let regime = if disc.abs() <= 1e-10 * q * q {
        Regime::Degenerate
    } else if disc < 0.0 {
        Regime::Oscillatory
    } else {
        Regime::RealSplit
    };
    let (lp, lm) = if disc >= 0.0 {
        let big = -(q + disc.sqrt()) / 2.0;
        let small = if p == 0.0 { 0.0 } else { p / big };
        (Complex64::new(big, 0.0), Complex64::new(small, 0.0))
    } else {
        let im = (-disc).sqrt() / 2.0;
        (
            Complex64::new(-q / 2.0, -im),
            Complex64::new(-q / 2.0, im),
        )
    };
    ModeCoefficients {
        xi,
        lambda_plus: lp,
        lambda_minus: lm,
        regime,
    }
}

fn sinhc(z: Complex64) -> Complex64 {
    if z.norm() < 1e-4 {
        let z2 = z * z;
        Complex64::new(1.0, 0.0) + z2 / 6.0 + z2 * z2 / 120.0
    } else {
        z.sinh() / z
    }
}

/// Exact solution (y, y') of `y'' + |xi|^2 y' + xi_3^2 y = 0` at time t.
///
/// Two algebraically equivalent forms are used: the midpoint form
/// `e^{mu t}(y0 cosh(dl t) + (y1 - mu y0) t sinhc(dl t))` whenever
/// |dl| t is moderate (this covers the degenerate window smoothly), and
/// the eigen expansion otherwise (cosh alone would overflow).
pub fn mode_propagator(xi: [f64; 3], y0: Complex64, y1: Complex64, t: f64) -> (Complex64, Complex64) {
    debug_assert!(t >= 0.0);
    let q = xi[0] * xi[0] + xi[1] * xi[1] + xi[2] * xi[2];
    if q == 0.0 {
        // y'' = 0
        return (y0 + y1 * t, y1);
    }
    let disc = Complex64::new(q * q - 4.0 * xi[2] * xi[2], 0.0);
    let dl = disc.sqrt() / 2.0; // half eigenvalue gap
    let mu = -q / 2.0;
    if (dl * t).norm() <= 20.0 {
        let e = Complex64::new((mu * t).exp(), 0.0);
        let b = y1 - mu * y0;
        let ch = (dl * t).cosh();
        let tsh = t * sinhc(dl * t); // = sinh(dl t)/dl
        let y = e * (y0 * ch + b * tsh);
        let yt = mu * y + e * (y0 * dl * dl * tsh + b * ch);
        (y, yt)
    } else {
        let m = eigenvalues(xi);
        let s = m.lambda_plus - m.lambda_minus;
        let c_plus = (y1 - m.lambda_minus * y0) / s;
        let c_minus = y0 - c_plus;
        let ep = (m.lambda_plus * t).exp();
        let em = (m.lambda_minus * t).exp();
        (
            c_plus * ep + c_minus * em,
            c_plus * m.lambda_plus * ep + c_minus * m.lambda_minus * em,
        )
    }
}

/// Which side of the boundary |xi|^2 = 2|xi_3| a frequency lies on.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FrequencyRegion {
    /// |xi|^2 <= 2|xi_3|: complex eigenvalues, damped oscillation
    Oscillatory,
    /// |xi|^2 > 2|xi_3|: two real rates, heat-like small root
    Parabolic,
}

/// Region tag and the signed distance |xi|^2 - 2|xi_3| to the boundary.
pub fn frequency_split(xi: [f64; 3]) -> (FrequencyRegion, f64) {
    let q = xi[0] * xi[0] + xi[1] * xi[1] + xi[2] * xi[2];
    let d = q - 2.0 * xi[2].abs();
    if d > 0.0 {
        (FrequencyRegion::Parabolic, d)
    } else {
        (FrequencyRegion::Oscillatory, d)
    }
}

/// Axisymmetric initial-data envelopes |Y0^|(rho, xi3), |Y1^|(rho, xi3)
/// with rho = |xi_h|. The admissible class requires |Y1^| ~ |xi_3|^{1/2}
/// near xi_3 = 0 (finiteness of the anisotropic weight with vertical
/// index -1/2).
pub struct DataClass {
    pub y0_env: Box<dyn Fn(f64, f64) -> f64 + Send + Sync>,
    pub y1_env: Box<dyn Fn(f64, f64) -> f64 + Send + Sync>,
}

impl DataClass {
    /// Minimal-assumption member of the admissible class:
    /// |Y1^| = |xi_3|^{1/2} (1+|xi|^2)^{-4}, Y0 = 0.
    pub fn default_class() -> Self {
        DataClass {
            y0_env: Box::new(|_, _| 0.0),
            y1_env: Box::new(|rho, xi3| {
                let q = rho * rho + xi3 * xi3;
                xi3.abs().sqrt() * (1.0 + q).powi(-4)
            }),
        }
    }

    /// Data concentrated near a single point of the (rho, xi3) half-plane
    /// (Gaussian of width w), for spectral-gap decay tests.
    pub fn shell(rho0: f64, xi30: f64, w: f64) -> Self {
        let g = move |rho: f64, xi3: f64| {
            (-((rho - rho0).powi(2) + (xi3.abs() - xi30).powi(2)) / (w * w)).exp()
        };
        DataClass {
            y0_env: Box::new(|_, _| 0.0),
            y1_env: Box::new(g),
        }
    }
}

/// Which propagated quantity the norm weight applies to.
#[derive(Debug, Clone, Copy)]
pub struct NormWeight {
    /// weight acts on y' (velocity) if true, on y otherwise
    pub on_velocity: bool,
    /// extra |xi_3|^k factor (vertical derivatives)
    pub vertical_order: u32,
    /// Sobolev index: weight (1+|xi|^2)^s, or |xi|^{2s} if homogeneous
    pub sobolev: f64,
    pub homogeneous: bool,
}

impl NormWeight {
    pub fn velocity_hs(s: f64) -> Self {
        NormWeight { on_velocity: true, vertical_order: 0, sobolev: s, homogeneous: false }
    }
    pub fn d3_y_hs(s: f64) -> Self {
        NormWeight { on_velocity: false, vertical_order: 1, sobolev: s, homogeneous: false }
    }
    pub fn d3_velocity_hs(s: f64) -> Self {
        NormWeight { on_velocity: true, vertical_order: 1, sobolev: s, homogeneous: false }
    }
}

/// Log-spaced anisotropic product quadrature over the (|xi_h|, xi_3)
/// half-plane (azimuthal direction integrated analytically, xi_3
/// symmetry folded in).
#[derive(Debug, Clone, Copy)]
pub struct QuadratureGrid {
    pub rho_min: f64,
    pub rho_max: f64,
    pub xi3_min: f64,
    pub xi3_max: f64,
    pub n_rho: usize,
    pub n_xi3: usize,
}

impl Default for QuadratureGrid {
    fn default() -> Self {
        QuadratureGrid {
            rho_min: 1e-5,
            rho_max: 40.0,
            xi3_min: 1e-6,
            xi3_max: 40.0,
            n_rho: 320,
            n_xi3: 360,
        }
    }
}

impl QuadratureGrid {
    pub fn doubled(&self) -> Self {
        QuadratureGrid {
            n_rho: 2 * self.n_rho,
            n_xi3: 2 * self.n_xi3,
            ..*self
        }
    }

    /// Node counts needed at time t: the oscillatory region carries phase
    /// ~ t xi_3, i.e. a gradient ~ sqrt(t) per unit log-frequency on the
    /// surviving modes, so resolution must grow like sqrt(t).
    fn resolved_for(&self, t: f64) -> (usize, usize) {
        let boost = (t.max(1.0).sqrt() * 40.0).ceil() as usize;
        (self.n_rho.max(boost / 2), self.n_xi3.max(boost))
    }

    fn log_nodes(min: f64, max: f64, n: usize) -> Vec<(f64, f64)> {
        // (node, trapezoid weight in the log variable)
        let lo = min.ln();
        let hi = max.ln();
        let h = (hi - lo) / (n - 1) as f64;
        (0..n)
            .map(|i| {
                let w = if i == 0 || i == n - 1 { 0.5 * h } else { h };
                ((lo + i as f64 * h).exp(), w)
            })
            .collect()
    }
}

/// Weighted L2 norm of the propagated linear solution:
/// N(t)^2 = int w(xi) |value(xi, t)|^2 dxi over R^3, evaluated with
/// compensated summation on the log-log product grid.
pub fn linear_decay_quadrature(
    data: &DataClass,
    weight: NormWeight,
    times: &[f64],
    grid: QuadratureGrid,
) -> Vec<f64> {
    use rayon::prelude::*;
    times
        .iter()
        .map(|&t| {
            let (nr, nv) = grid.resolved_for(t);
            let rnodes = QuadratureGrid::log_nodes(grid.rho_min, grid.rho_max, nr);
            let vnodes = QuadratureGrid::log_nodes(grid.xi3_min, grid.xi3_max, nv);
            let row_sums: Vec<f64> = rnodes
                .par_iter()
                .map(|&(rho, wr)| {
                    // Kahan-compensated accumulation per row
                    let mut sum = 0.0f64;
                    let mut comp = 0.0f64;
                    for &(xi3, wv) in &vnodes {
                        let q = rho * rho + xi3 * xi3;
                        let y0 = Complex64::new((data.y0_env)(rho, xi3), 0.0);
                        let y1 = Complex64::new((data.y1_env)(rho, xi3), 0.0);
                        if y0.re == 0.0 && y1.re == 0.0 {
                            continue;
                        }
                        let (y, yt) = mode_propagator([rho, 0.0, xi3], y0, y1, t);
                        let val = if weight.on_velocity { yt } else { y };
                        let mut w = if weight.homogeneous {
                            q.powf(weight.sobolev)
                        } else {
                            (1.0 + q).powf(weight.sobolev)
                        };
                        w *= xi3.powi(2 * weight.vertical_order as i32);
                        // measure: 2 pi rho drho dxi3, xi3 folded (x2),
                        // log-log substitution adds rho * xi3
                        let term =
                            4.0 * std::f64::consts::PI * w * val.norm_sqr() * rho * rho * xi3 * wr * wv;
                        let yk = term - comp;
                        let tk = sum + yk;
                        comp = (tk - sum) - yk;
                        sum = tk;
                    }
                    sum
                })
                .collect();
            let mut sum = 0.0f64;
            let mut comp = 0.0f64;
            for term in row_sums {
                let yk = term - comp;
                let tk = sum + yk;
                comp = (tk - sum) - yk;
                sum = tk;
            }
            sum.max(0.0).sqrt()
        })
        .collect()
}

/// Least-squares slope of ln N against ln t over the window [t_lo, t_hi].
pub fn fit_log_slope(times: &[f64], vals: &[f64], t_lo: f64, t_hi: f64) -> f64 {
    let pts: Vec<(f64, f64)> = times
        .iter()
        .zip(vals)
        .filter(|(&t, &v)| t >= t_lo && t <= t_hi && v > 0.0)
        .map(|(&t, &v)| (t.ln(), v.ln()))
        .collect();
    let n = pts.len() as f64;
    assert!(n >= 2.0, "need at least two points in the fit window");
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    sxy / sxx
}

/// Japanese-bracket time weight <t> = (1 + t^2)^{1/2}.
pub fn jbracket(t: f64) -> f64 {
    (1.0 + t * t).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn assert_close(a: Complex64, b: Complex64, tol: f64) {
        assert!((a - b).norm() <= tol, "{a} vs {b}");
    }

    #[test]
    fn eigenvalues_closed_forms() {
        // xi_3 = 0 factorization
        let m = eigenvalues([1.0, 0.0, 0.0]);
        assert_close(m.lambda_plus, Complex64::new(-1.0, 0.0), 1e-14);
        assert_close(m.lambda_minus, Complex64::new(0.0, 0.0), 1e-14);
        assert_eq!(m.regime, Regime::RealSplit);
        // vertical unit mode: conjugate pair with real part -1/2
        let m = eigenvalues([0.0, 0.0, 1.0]);
        assert_eq!(m.regime, Regime::Oscillatory);
        let r3 = 3f64.sqrt() / 2.0;
        assert_close(m.lambda_plus, Complex64::new(-0.5, -r3), 1e-14);
        assert_close(m.lambda_minus, Complex64::new(-0.5, r3), 1e-14);
        // discriminant-zero boundary: double root -2
        let m = eigenvalues([0.0, 0.0, 2.0]);
        assert_eq!(m.regime, Regime::Degenerate);
        assert_close(m.lambda_plus, Complex64::new(-2.0, 0.0), 1e-12);
        assert_close(m.lambda_minus, Complex64::new(-2.0, 0.0), 1e-12);
        // zero frequency flagged
        assert_eq!(eigenvalues([0.0; 3]).regime, Regime::Zero);
    }

    #[test]
    fn vieta_identities() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        for _ in 0..500 {
            let xi = [
                rng.gen_range(-10.0..10.0),
                rng.gen_range(-10.0..10.0),
                rng.gen_range(-10.0..10.0),
            ];
            let q = xi[0] * xi[0] + xi[1] * xi[1] + xi[2] * xi[2];
            let m = eigenvalues(xi);
            let sum = m.lambda_plus + m.lambda_minus;
            let prod = m.lambda_plus * m.lambda_minus;
            assert!((sum + q).norm() <= 1e-12 * q.max(1.0));
            assert!(
                (prod - xi[2] * xi[2]).norm() <= 1e-12 * (xi[2] * xi[2]).max(1.0),
                "xi={xi:?}"
            );
        }
    }

    #[test]
    fn small_root_limit_vertical() {
        // lambda_- -> -1 as |xi| -> infinity along the vertical axis
        for r in [10.0, 100.0, 1000.0] {
            let m = eigenvalues([0.0, 0.0, r]);
            let err = (m.lambda_minus.re + 1.0).abs();
            assert!(err <= 2.0 / (r * r), "r={r} err={err}");
        }
    }

    #[test]
    fn propagator_initial_condition_and_heat_factor() {
        let y0 = Complex64::new(0.3, -0.2);
        let y1 = Complex64::new(-1.1, 0.7);
        let (a, b) = mode_propagator([1.5, -0.4, 0.9], y0, y1, 0.0);
        assert_close(a, y0, 1e-14);
        assert_close(b, y1, 1e-14);
        // xi_3 = 0, y0 = 0: pure heat factor on y'
        let xi = [2.0, 1.0, 0.0];
        let q = 5.0;
        let t = 0.37;
        let (y, yt) = mode_propagator(xi, Complex64::new(0.0, 0.0), y1, t);
        assert_close(yt, y1 * (-q * t).exp(), 1e-13);
        assert_close(y, y1 * (1.0 - (-q * t).exp()) / q, 1e-13);
    }

    /// fixed-step RK4 on the first-order system, small h: oracle accurate
    /// to ~h^4 per unit time.
    fn rk4_oracle(xi: [f64; 3], y0: Complex64, y1: Complex64, t: f64, h: f64) -> (Complex64, Complex64) {
        let q = xi[0] * xi[0] + xi[1] * xi[1] + xi[2] * xi[2];
        let p = xi[2] * xi[2];
        let f = |y: Complex64, v: Complex64| (v, -q * v - p * y);
        let (mut y, mut v) = (y0, y1);
        let n = (t / h).round() as usize;
        let h = t / n as f64;
        for _ in 0..n {
            let (k1y, k1v) = f(y, v);
            let (k2y, k2v) = f(y + 0.5 * h * k1y, v + 0.5 * h * k1v);
            let (k3y, k3v) = f(y + 0.5 * h * k2y, v + 0.5 * h * k2v);
            let (k4y, k4v) = f(y + h * k3y, v + h * k3v);
            y += h / 6.0 * (k1y + 2.0 * k2y + 2.0 * k3y + k4y);
            v += h / 6.0 * (k1v + 2.0 * k2v + 2.0 * k3v + k4v);
        }
        (y, v)
    }

    #[test]
    fn propagator_matches_ode_oracle() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        for _ in 0..10 {
            let xi = [
                rng.gen_range(-2.0..2.0),
                rng.gen_range(-2.0..2.0),
                rng.gen_range(-2.0..2.0),
            ];
            let y0 = Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
            let y1 = Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
            for t in [1.0, 10.0] {
                let (y, yt) = mode_propagator(xi, y0, y1, t);
                let (oy, oyt) = rk4_oracle(xi, y0, y1, t, 1e-3);
                let scale = oy.norm().max(oyt.norm()).max(1e-30);
                assert!((y - oy).norm() <= 1e-9 * scale.max(1.0), "xi={xi:?} t={t}");
                assert!((yt - oyt).norm() <= 1e-9 * scale.max(1.0));
            }
        }
    }

    #[test]
    fn per_mode_energy_identity() {
        // d/dt(|y'|^2 + xi_3^2 |y|^2) = -2 |xi|^2 |y'|^2 by differencing
        let xi = [0.8, -0.3, 1.4];
        let q: f64 = xi.iter().map(|v| v * v).sum();
        let p = xi[2] * xi[2];
        let y0 = Complex64::new(0.4, 0.1);
        let y1 = Complex64::new(-0.6, 0.9);
        let energy = |t: f64| {
            let (y, yt) = mode_propagator(xi, y0, y1, t);
            yt.norm_sqr() + p * y.norm_sqr()
        };
        let h = 1e-5;
        for t in [0.1, 0.5, 1.3, 3.0] {
            let de = (energy(t + h) - energy(t - h)) / (2.0 * h);
            let (_, yt) = mode_propagator(xi, y0, y1, t);
            let rhs = -2.0 * q * yt.norm_sqr();
            assert!((de - rhs).abs() <= 1e-8 * rhs.abs().max(1.0), "t={t}");
        }
    }

    #[test]
    fn propagator_formulation_continuity() {
        // the two internal forms agree where the switch |dl| t = 20 sits
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            // pick xi with a real gap and a time just either side of the switch
            let rho: f64 = rng.gen_range(1.5..4.0);
            let xi3: f64 = rng.gen_range(0.0..0.4);
            let xi = [rho, 0.0, xi3];
            let q = rho * rho + xi3 * xi3;
            let dl = ((q * q - 4.0 * xi3 * xi3).sqrt()) / 2.0;
            let tsw = 20.0 / dl;
            let y0 = Complex64::new(rng.gen_range(-1.0..1.0), 0.0);
            let y1 = Complex64::new(rng.gen_range(-1.0..1.0), 0.0);
            // just below the switch the midpoint form is used; the eigen
            // form evaluated by hand must agree there to 1e-9 relative
            let t = tsw * 0.999;
            let (y, yt) = mode_propagator(xi, y0, y1, t);
            let m = eigenvalues(xi);
            let s = m.lambda_plus - m.lambda_minus;
            let cp = (y1 - m.lambda_minus * y0) / s;
            let cm = y0 - cp;
            let ye = cp * (m.lambda_plus * t).exp() + cm * (m.lambda_minus * t).exp();
            let yte = cp * m.lambda_plus * (m.lambda_plus * t).exp()
                + cm * m.lambda_minus * (m.lambda_minus * t).exp();
            let scale = ye.norm().max(yte.norm()).max(1e-12);
            assert!((y - ye).norm() <= 1e-9 * scale, "y jump at tsw {tsw}");
            assert!((yt - yte).norm() <= 1e-9 * scale, "yt jump at tsw {tsw}");
        }
    }

    #[test]
    fn degenerate_window_edges() {
        // left/right of the near-degenerate window: midpoint form vs eigen
        // form evaluated directly must agree to 1e-9.
        let q: f64 = 4.0; // |xi|^2
        for rel in [0.9e-4, 1.1e-4] {
            // choose xi3 so that |lambda_+ - lambda_-| = rel * q
            let gap = rel * q;
            let xi3 = ((q * q - gap * gap) / 4.0).sqrt();
            let rho = (q - xi3 * xi3).max(0.0).sqrt();
            let xi = [rho, 0.0, xi3];
            let y0 = Complex64::new(0.7, 0.0);
            let y1 = Complex64::new(-0.2, 0.0);
            for t in [0.5, 2.0, 5.0] {
                let (y, yt) = mode_propagator(xi, y0, y1, t);
                // eigen form evaluated explicitly
                let m = eigenvalues(xi);
                let s = m.lambda_plus - m.lambda_minus;
                let cp = (y1 - m.lambda_minus * y0) / s;
                let cm = y0 - cp;
                let ye = cp * (m.lambda_plus * t).exp() + cm * (m.lambda_minus * t).exp();
                let yte = cp * m.lambda_plus * (m.lambda_plus * t).exp()
                    + cm * m.lambda_minus * (m.lambda_minus * t).exp();
                assert!((y - ye).norm() <= 1e-9 * y.norm().max(1.0));
                assert!((yt - yte).norm() <= 1e-9 * yt.norm().max(1.0));
            }
        }
    }

    #[test]
    fn frequency_split_examples() {
        let (r, d) = frequency_split([0.0, 0.0, 1.0]);
        assert_eq!(r, FrequencyRegion::Oscillatory);
        assert!((d + 1.0).abs() < 1e-14);
        let (r, d) = frequency_split([3.0, 0.0, 0.0]);
        assert_eq!(r, FrequencyRegion::Parabolic);
        assert!((d - 9.0).abs() < 1e-14);
        let (_, d) = frequency_split([0.0, 0.0, 2.0]);
        assert!(d.abs() < 1e-14);
    }

    #[test]
    fn quadrature_spectral_gap_shell() {
        // data on a shell with xi3 away from 0: exponential decay at the
        // slowest rate present, i.e. max Re(lambda_minus) over the shell.
        let data = DataClass::shell(1.0, 1.5, 0.05);
        let grid = QuadratureGrid {
            rho_min: 0.5,
            rho_max: 2.0,
            xi3_min: 1.0,
            xi3_max: 2.2,
            n_rho: 200,
            n_xi3: 200,
        };
        let w = NormWeight::velocity_hs(0.0);
        let times = [4.0, 6.0, 8.0];
        let n = linear_decay_quadrature(&data, w, &times, grid);
        // center-mode slow rate
        let m = eigenvalues([1.0, 0.0, 1.5]);
        let rate = m.lambda_minus.re.max(m.lambda_plus.re);
        let measured = ((n[2] / n[1]).ln()) / 2.0;
        assert!(
            (measured - rate).abs() <= 0.08 * rate.abs(),
            "measured {measured} vs {rate}"
        );
    }

    #[test]
    fn quadrature_node_doubling() {
        let data = DataClass::default_class();
        let w = NormWeight::velocity_hs(2.0);
        let times = [1.0, 100.0, 10000.0];
        let grid = QuadratureGrid::default();
        let a = linear_decay_quadrature(&data, w, &times, grid);
        let b = linear_decay_quadrature(&data, w, &times, grid.doubled());
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() <= 1e-3 * y, "{x} vs {y}");
        }
    }

    #[test]
    fn quadrature_monotone_decay() {
        let data = DataClass::default_class();
        let w = NormWeight::velocity_hs(2.0);
        let times: Vec<f64> = (0..40).map(|i| 10f64.powf(i as f64 / 10.0)).collect();
        let n = linear_decay_quadrature(&data, w, &times, QuadratureGrid::default());
        for pair in n.windows(2) {
            assert!(pair[1] <= pair[0] * (1.0 + 1e-12));
        }
    }
}

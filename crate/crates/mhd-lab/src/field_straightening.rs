//! Field-straightening coordinates for a near-vertical magnetic field.
//!
//! For b0 = e3 + eps*phi with phi essentially supported in a horizontal
//! slab, the characteristic flow of b0_h/b0_3 defines a chart w -> y in
//! which the field lines become vertical, and a secondary stretching
//! z3(w3) renormalizes the vertical speed so that differentiation along
//! b0 becomes plain d/dz3.  This module integrates the flow, assembles
//! the Jacobian matrices A1, A2, A3 and the conjugation matrix B that
//! carries gradients between the two coordinate systems, builds the
//! cutoff-localized splitting of B - Id, computes the correction field
//! that absorbs the static source term, and provides the divergence
//! change-of-variables identity as a standalone check.
//!
//! Charts are computed column by column: each horizontal position
//! (w1, w2) carries an independent ODE in w3 for the flow, its
//! variational (Jacobian) system, the vertical stretching, and the
//! cumulative integrals entering A2 and A3.  Columns are integrated in
//! parallel and interrogated through cubic Hermite interpolation, so
//! every derived quantity is consistent with one and the same
//! discretization of the flow.

use std::sync::Arc;

use ndarray::Array4;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::fields::{Grid, SpectralField};
use crate::littlewood_paley::smooth_step;

/// 3x3 matrix in row-major nested arrays.
pub type Mat3 = [[f64; 3]; 3];

pub const MAT_ID: Mat3 = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];

pub fn mat_mul(a: &Mat3, b: &Mat3) -> Mat3 {
    let mut c = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            c[i][j] = a[i][0] * b[0][j] + a[i][1] * b[1][j] + a[i][2] * b[2][j];
        }
    }
    c
}

pub fn mat_add(a: &Mat3, b: &Mat3) -> Mat3 {
    let mut c = *a;
    for i in 0..3 {
        for j in 0..3 {
            c[i][j] += b[i][j];
        }
    }
    c
}

pub fn mat_sub(a: &Mat3, b: &Mat3) -> Mat3 {
    let mut c = *a;
    for i in 0..3 {
        for j in 0..3 {
            c[i][j] -= b[i][j];
        }
    }
    c
}

pub fn mat_scale(a: &Mat3, s: f64) -> Mat3 {
    let mut c = *a;
    for row in c.iter_mut() {
        for v in row.iter_mut() {
            *v *= s;
        }
    }
    c
}

pub fn mat_det(a: &Mat3) -> f64 {
    a[0][0] * (a[1][1] * a[2][2] - a[1][2] * a[2][1])
        - a[0][1] * (a[1][0] * a[2][2] - a[1][2] * a[2][0])
        + a[0][2] * (a[1][0] * a[2][1] - a[1][1] * a[2][0])
}

pub fn mat_inv(a: &Mat3) -> Result<Mat3> {
    let det = mat_det(a);
    if det.abs() < 1e-14 {
        return Err(Error::Numerical(format!(
            "singular 3x3 matrix (det = {det:.3e})"
        )));
    }
    let inv_det = 1.0 / det;
    let mut c = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            // Cofactor expansion; note the transpose (adjugate).
            let (r0, r1) = match i {
                0 => (1, 2),
                1 => (0, 2),
                _ => (0, 1),
            };
            let (c0, c1) = match j {
                0 => (1, 2),
                1 => (0, 2),
                _ => (0, 1),
            };
            let minor = a[r0][c0] * a[r1][c1] - a[r0][c1] * a[r1][c0];
            let sign = if (i + j) % 2 == 0 { 1.0 } else { -1.0 };
            c[j][i] = sign * minor * inv_det;
        }
    }
    Ok(c)
}

/// Maximum absolute entry.
pub fn mat_sup(a: &Mat3) -> f64 {
    a.iter()
        .flat_map(|r| r.iter())
        .fold(0.0f64, |m, v| m.max(v.abs()))
}

/// Analytic perturbation profile phi.  The closures give the value and
/// the full first-derivative table; everything the chart needs beyond
/// first derivatives is obtained from the ODE systems, never by
/// differentiating the closures numerically.
pub struct PhiProfile {
    pub name: String,
    /// Horizontal (and sampling) period of the box.
    pub period: f64,
    /// Height of the slab containing the support of phi.
    pub k_support: f64,
    eval: Box<dyn Fn([f64; 3]) -> [f64; 3] + Send + Sync>,
    /// grad[j][i] = d phi_j / d y_i.
    grad: Box<dyn Fn([f64; 3]) -> [[f64; 3]; 3] + Send + Sync>,
}

impl PhiProfile {
    pub fn phi(&self, y: [f64; 3]) -> [f64; 3] {
        (self.eval)(y)
    }

    pub fn grad_phi(&self, y: [f64; 3]) -> [[f64; 3]; 3] {
        (self.grad)(y)
    }

    /// Sample phi on a periodic grid (used for norm computations and
    /// for the spectral divergence check).
    pub fn sample(&self, grid: &Arc<Grid>) -> SpectralField {
        SpectralField::from_fn_vector(grid.clone(), |x| (self.eval)(x))
    }
}

const SHEAR_AMP: f64 = 0.3;
const LAYER_AMP: f64 = 0.3;
const LOOP_AMP: f64 = 0.1;
const LAYER_SIGMA: f64 = 1.0;

/// Horizontal shear: phi = (g(y2), 0, 0).  Not slab-supported; used for
/// closed-form verification of the flow and the chart matrices.
pub fn preset_shear(period: f64, k_support: f64) -> PhiProfile {
    let kappa = 2.0 * std::f64::consts::PI / period;
    PhiProfile {
        name: "shear".into(),
        period,
        k_support,
        eval: Box::new(move |y| [SHEAR_AMP * (kappa * y[1]).sin(), 0.0, 0.0]),
        grad: Box::new(move |y| {
            let mut g = [[0.0; 3]; 3];
            g[0][1] = SHEAR_AMP * kappa * (kappa * y[1]).cos();
            g
        }),
    }
}

/// Layered field: phi = (psi(y3), 0, 0) with a Gaussian profile centred
/// in the slab.  The flow reduces to a one-dimensional quadrature.
pub fn preset_layered(period: f64, k_support: f64) -> PhiProfile {
    let c = 0.5 * k_support;
    let s2 = LAYER_SIGMA * LAYER_SIGMA;
    PhiProfile {
        name: "layered".into(),
        period,
        k_support,
        eval: Box::new(move |y| {
            let d = y[2] - c;
            [LAYER_AMP * (-d * d / s2).exp(), 0.0, 0.0]
        }),
        grad: Box::new(move |y| {
            let d = y[2] - c;
            let psi = LAYER_AMP * (-d * d / s2).exp();
            let mut g = [[0.0; 3]; 3];
            g[0][2] = psi * (-2.0 * d / s2);
            g
        }),
    }
}

/// Divergence-free loop with a genuine vertical component:
/// phi = (-d3 theta, 0, d1 theta) for theta = a sin(kappa y1) G(y3)
/// with G a Gaussian centred in the slab.  The Gaussian tails are below
/// 1e-7 at the slab boundary, so the field is slab-supported to within
/// the tolerances used throughout.
pub fn preset_gaussian_loop(period: f64, k_support: f64) -> PhiProfile {
    let kappa = 2.0 * std::f64::consts::PI / period;
    let c = 0.5 * k_support;
    let s2 = 1.0; // sigma = 1
    let g0 = move |y3: f64| (-(y3 - c) * (y3 - c) / s2).exp();
    let g1 = move |y3: f64| g0(y3) * (-2.0 * (y3 - c) / s2);
    let g2 = move |y3: f64| g0(y3) * (4.0 * (y3 - c) * (y3 - c) / (s2 * s2) - 2.0 / s2);
    PhiProfile {
        name: "gaussian-loop".into(),
        period,
        k_support,
        eval: Box::new(move |y| {
            let (s, co) = (kappa * y[0]).sin_cos();
            [-LOOP_AMP * s * g1(y[2]), 0.0, LOOP_AMP * kappa * co * g0(y[2])]
        }),
        grad: Box::new(move |y| {
            let (s, co) = (kappa * y[0]).sin_cos();
            let mut g = [[0.0; 3]; 3];
            // phi1 = -a sin(k y1) G'(y3)
            g[0][0] = -LOOP_AMP * kappa * co * g1(y[2]);
            g[0][2] = -LOOP_AMP * s * g2(y[2]);
            // phi3 = a k cos(k y1) G(y3)
            g[2][0] = -LOOP_AMP * kappa * kappa * s * g0(y[2]);
            g[2][2] = LOOP_AMP * kappa * co * g1(y[2]);
            g
        }),
    }
}

pub fn preset_by_name(name: &str, period: f64, k_support: f64) -> Result<PhiProfile> {
    match name {
        "shear" => Ok(preset_shear(period, k_support)),
        "layered" => Ok(preset_layered(period, k_support)),
        "gaussian-loop" => Ok(preset_gaussian_loop(period, k_support)),
        other => Err(Error::InvalidParameter(format!(
            "unknown profile preset '{other}' (expected shear, layered, gaussian-loop)"
        ))),
    }
}

/// b0 = e3 + eps * phi.
pub struct InitialMagneticField {
    pub epsilon: f64,
    pub phi: PhiProfile,
}

impl InitialMagneticField {
    pub fn new(epsilon: f64, phi: PhiProfile) -> Result<Self> {
        if !(epsilon >= 0.0) {
            return Err(Error::InvalidParameter(format!(
                "epsilon must be a nonnegative real, got {epsilon}"
            )));
        }
        Ok(Self { epsilon, phi })
    }

    pub fn b0(&self, y: [f64; 3]) -> [f64; 3] {
        let p = self.phi.phi(y);
        [
            self.epsilon * p[0],
            self.epsilon * p[1],
            1.0 + self.epsilon * p[2],
        ]
    }

    pub fn b0_3(&self, y: [f64; 3]) -> f64 {
        1.0 + self.epsilon * self.phi.phi(y)[2]
    }

    /// Slope field of the characteristics: F_j = b0_j / b0_3, j = 1, 2.
    fn f_h(&self, y: [f64; 3]) -> [f64; 2] {
        let p = self.phi.phi(y);
        let inv = 1.0 / (1.0 + self.epsilon * p[2]);
        [self.epsilon * p[0] * inv, self.epsilon * p[1] * inv]
    }

    /// Full derivative table of F: out[j][i] = d F_j / d y_i.
    fn grad_f_h(&self, y: [f64; 3]) -> [[f64; 3]; 2] {
        let p = self.phi.phi(y);
        let g = self.phi.grad_phi(y);
        let e = self.epsilon;
        let inv = 1.0 / (1.0 + e * p[2]);
        let mut out = [[0.0; 3]; 2];
        for j in 0..2 {
            for i in 0..3 {
                out[j][i] = e * g[j][i] * inv - e * e * p[j] * g[2][i] * inv * inv;
            }
        }
        out
    }

    /// G = 1 / b0_3 and its gradient.
    fn g_inv(&self, y: [f64; 3]) -> f64 {
        1.0 / self.b0_3(y)
    }

    fn grad_g_inv(&self, y: [f64; 3]) -> [f64; 3] {
        let p3 = self.phi.phi(y)[2];
        let g = self.phi.grad_phi(y);
        let e = self.epsilon;
        let inv = 1.0 / (1.0 + e * p3);
        [
            -e * g[2][0] * inv * inv,
            -e * g[2][1] * inv * inv,
            -e * g[2][2] * inv * inv,
        ]
    }

    /// Sample b0 on a periodic grid.
    pub fn sample_b0(&self, grid: &Arc<Grid>) -> SpectralField {
        let e = self.epsilon;
        SpectralField::from_fn_vector(grid.clone(), move |x| {
            let p = self.phi.phi(x);
            [e * p[0], e * p[1], 1.0 + e * p[2]]
        })
    }
}

/// Smooth cutoff: 1 on [-1, K+1], 0 outside [-2, K+2].
pub fn eta_cutoff(z3: f64, k_support: f64) -> f64 {
    smooth_step(z3 + 2.0) * smooth_step(k_support + 2.0 - z3)
}

// --------------------------------------------------------------------------
// Column ODE system.
//
// State layout (13 components, all functions of w3 along one column):
//   0,1     y1, y2               flow of the slope field F
//   2..6    J11 J12 J21 J22      horizontal variational system, J = dy_h/dw_h
//   6       zeta = z3 - w3       vertical stretching integral of (G - 1)
//   7,8     a31, a32             cumulative d/dw_k of G, the lower-left A3 row
//   9..13   n11 n12 n21 n22      cumulative dF_j/dy_i at the flowed point,
//                                the integral form of A2
// --------------------------------------------------------------------------

const STATE_LEN: usize = 13;
type ColState = [f64; STATE_LEN];

fn column_rhs(field: &InitialMagneticField, w3: f64, s: &ColState) -> ColState {
    let y = [s[0], s[1], w3];
    let f = field.f_h(y);
    let gf = field.grad_f_h(y);
    let gg = field.grad_g_inv(y);
    let mut d = [0.0; STATE_LEN];
    d[0] = f[0];
    d[1] = f[1];
    d[2] = gf[0][0] * s[2] + gf[0][1] * s[4];
    d[3] = gf[0][0] * s[3] + gf[0][1] * s[5];
    d[4] = gf[1][0] * s[2] + gf[1][1] * s[4];
    d[5] = gf[1][0] * s[3] + gf[1][1] * s[5];
    d[6] = field.g_inv(y) - 1.0;
    d[7] = gg[0] * s[2] + gg[1] * s[4];
    d[8] = gg[0] * s[3] + gg[1] * s[5];
    d[9] = gf[0][0];
    d[10] = gf[0][1];
    d[11] = gf[1][0];
    d[12] = gf[1][1];
    d
}

fn rk4_step(field: &InitialMagneticField, w3: f64, s: &ColState, h: f64) -> ColState {
    let k1 = column_rhs(field, w3, s);
    let mut s2 = *s;
    for i in 0..STATE_LEN {
        s2[i] = s[i] + 0.5 * h * k1[i];
    }
    let k2 = column_rhs(field, w3 + 0.5 * h, &s2);
    let mut s3 = *s;
    for i in 0..STATE_LEN {
        s3[i] = s[i] + 0.5 * h * k2[i];
    }
    let k3 = column_rhs(field, w3 + 0.5 * h, &s3);
    let mut s4 = *s;
    for i in 0..STATE_LEN {
        s4[i] = s[i] + h * k3[i];
    }
    let k4 = column_rhs(field, w3 + h, &s4);
    let mut out = *s;
    for i in 0..STATE_LEN {
        out[i] = s[i] + h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
    }
    out
}

fn advance(
    field: &InitialMagneticField,
    w_from: f64,
    w_to: f64,
    s: &ColState,
    max_step: f64,
) -> ColState {
    let delta = w_to - w_from;
    if delta == 0.0 {
        return *s;
    }
    let n_sub = (delta.abs() / max_step).ceil().max(1.0) as usize;
    let h = delta / n_sub as f64;
    let mut cur = *s;
    let mut w = w_from;
    for _ in 0..n_sub {
        cur = rk4_step(field, w, &cur, h);
        w += h;
    }
    cur
}

fn initial_state(w1: f64, w2: f64) -> ColState {
    let mut s = [0.0; STATE_LEN];
    s[0] = w1;
    s[1] = w2;
    s[2] = 1.0;
    s[5] = 1.0;
    s
}

/// Integrate one column from the plane w3 = 0 to every node, both
/// upwards and downwards.  Aborts if b0_3 drops to 1/2 or below.
fn integrate_column(
    field: &InitialMagneticField,
    nodes: &[f64],
    max_step: f64,
    w1: f64,
    w2: f64,
) -> Result<Vec<ColState>> {
    let mut states = vec![[0.0; STATE_LEN]; nodes.len()];
    let s0 = initial_state(w1, w2);
    let check = |s: &ColState, w3: f64| -> Result<()> {
        let b3 = field.b0_3([s[0], s[1], w3]);
        if b3 <= 0.5 {
            return Err(Error::Numerical(format!(
                "b0_3 = {b3:.4} <= 1/2 along the characteristic at \
                 (w1, w2, w3) = ({w1:.4}, {w2:.4}, {w3:.4})"
            )));
        }
        Ok(())
    };
    check(&s0, 0.0)?;
    // Upwards.
    let mut s = s0;
    let mut w = 0.0;
    for (k, &n) in nodes.iter().enumerate() {
        if n < 0.0 {
            continue;
        }
        s = advance(field, w, n, &s, max_step);
        check(&s, n)?;
        states[k] = s;
        w = n;
    }
    // Downwards.
    s = s0;
    w = 0.0;
    for (k, &n) in nodes.iter().enumerate().rev() {
        if n >= 0.0 {
            continue;
        }
        s = advance(field, w, n, &s, max_step);
        check(&s, n)?;
        states[k] = s;
        w = n;
    }
    Ok(states)
}

/// Tensor grid for the chart: horizontal columns on a periodic box and
/// a refined vertical axis on which the column ODEs are sampled.
#[derive(Debug, Clone, Serialize)]
pub struct ChartGrid {
    pub nh: [usize; 2],
    pub lh: [f64; 2],
    pub w3_min: f64,
    pub w3_max: f64,
    pub n3: usize,
    pub max_step: f64,
}

impl ChartGrid {
    pub fn new(
        nh: [usize; 2],
        lh: [f64; 2],
        w3_min: f64,
        w3_max: f64,
        n3: usize,
        max_step: f64,
    ) -> Result<Self> {
        if nh[0] == 0 || nh[1] == 0 || n3 < 4 {
            return Err(Error::InvalidParameter(
                "chart grid needs at least one column and four vertical nodes".into(),
            ));
        }
        if !(w3_min < 0.0 && w3_max > 0.0) {
            return Err(Error::InvalidParameter(
                "chart grid must straddle the seed plane w3 = 0".into(),
            ));
        }
        if !(max_step > 0.0) || !(lh[0] > 0.0 && lh[1] > 0.0) {
            return Err(Error::InvalidParameter(
                "chart grid step and box sides must be positive".into(),
            ));
        }
        Ok(Self {
            nh,
            lh,
            w3_min,
            w3_max,
            n3,
            max_step,
        })
    }

    /// Default grid for a profile: the full box horizontally, the slab
    /// plus a margin of 3 vertically, with ~0.02 node spacing.
    pub fn for_profile(phi: &PhiProfile, nh: usize) -> Self {
        let w3_min = -3.0;
        let w3_max = phi.k_support + 3.0;
        let n3 = ((w3_max - w3_min) / 0.02).round() as usize + 1;
        Self {
            nh: [nh, nh],
            lh: [phi.period, phi.period],
            w3_min,
            w3_max,
            n3,
            max_step: 0.005,
        }
    }

    pub fn dw(&self) -> f64 {
        (self.w3_max - self.w3_min) / (self.n3 - 1) as f64
    }

    pub fn nodes(&self) -> Vec<f64> {
        let dw = self.dw();
        (0..self.n3).map(|k| self.w3_min + k as f64 * dw).collect()
    }

    pub fn w_h(&self, i: usize, j: usize) -> [f64; 2] {
        [
            self.lh[0] * i as f64 / self.nh[0] as f64,
            self.lh[1] * j as f64 / self.nh[1] as f64,
        ]
    }
}

/// All chart matrices evaluated at one point.
#[derive(Debug, Clone)]
pub struct ChartPoint {
    pub w: [f64; 3],
    pub z3: f64,
    pub y: [f64; 3],
    /// M = dy/dw.
    pub m: Mat3,
    pub a1: Mat3,
    /// Id - A1 M^{-1}: the unique matrix for which (Id - A2)^{-1} A1
    /// reproduces dy/dw exactly.
    pub a2_exact: Mat3,
    /// The cumulative-integral form of A2 (exact only to first order in
    /// eps for general profiles; exact for shear and layered fields).
    pub a2_naive: Mat3,
    /// dz/dw.
    pub a3: Mat3,
    /// B = A3 M^{-1} = (dy/dz)^{-1}; carries gradients via grad_y = B^t grad_z.
    pub b: Mat3,
}

/// The cutoff-localized splitting of B - Id.
#[derive(Debug, Clone)]
pub struct SplitMatrices {
    pub eta: f64,
    pub a21: Mat3,
    pub a22: Mat3,
    pub a31: Mat3,
    pub a32: Mat3,
    /// A1 evaluated at the chart point reached from z.
    pub frak_a1: Mat3,
    /// Near-field and far-field halves arranged so that
    /// Id + b1 + b2 = (A31+A32) frak_a1^{-1} (Id - A21 - A22) exactly.
    pub b1: Mat3,
    pub b2: Mat3,
    /// The same summands in the conventional order, which agrees with
    /// the exact product only to second order in eps.
    pub b1_literal: Mat3,
    pub b2_literal: Mat3,
}

/// A straightening chart: the column states plus the cumulative
/// integrals of the static source term used by the correction field.
pub struct CoordinateChart {
    pub field: Arc<InitialMagneticField>,
    pub grid: ChartGrid,
    /// (n1, n2, n3, 13) column states.
    states: Array4<f64>,
    /// (n1, n2, n3, 3): cumulative integral of (e3 - b0(y(w))) G dw3'
    /// from the bottom node (the z-measure source integral).
    cum: Array4<f64>,
}

/// Build the chart, refusing eps above the admissibility thresholds.
pub fn assemble_chart(field: InitialMagneticField, grid: ChartGrid) -> Result<CoordinateChart> {
    let thresholds = EpsilonThresholds::compute(&field.phi);
    thresholds.check(field.epsilon)?;
    assemble_chart_unchecked(field, grid)
}

/// Build the chart without the threshold gate (the b0_3 > 1/2 abort
/// remains active).  Useful for parameter sweeps.
pub fn assemble_chart_unchecked(
    field: InitialMagneticField,
    grid: ChartGrid,
) -> Result<CoordinateChart> {
    let nodes = grid.nodes();
    let (n1, n2, n3) = (grid.nh[0], grid.nh[1], grid.n3);
    let dw = grid.dw();
    let columns: Vec<Result<(Vec<ColState>, Vec<[f64; 3]>)>> = (0..n1 * n2)
        .into_par_iter()
        .map(|idx| {
            let (i, j) = (idx / n2, idx % n2);
            let wh = grid.w_h(i, j);
            let states = integrate_column(&field, &nodes, grid.max_step, wh[0], wh[1])?;
            // Cumulative Simpson of the source integrand along the column,
            // with the midpoint taken from the Hermite interpolant.
            let integrand = |w3: f64, s: &ColState| -> [f64; 3] {
                let y = [s[0], s[1], w3];
                let p = field.phi.phi(y);
                let g = field.g_inv(y);
                let e = field.epsilon;
                [-e * p[0] * g, -e * p[1] * g, -e * p[2] * g]
            };
            let mut cum = vec![[0.0f64; 3]; n3];
            for k in 0..n3 - 1 {
                let d0 = column_rhs(&field, nodes[k], &states[k]);
                let d1 = column_rhs(&field, nodes[k + 1], &states[k + 1]);
                let sm = hermite(&states[k], &d0, &states[k + 1], &d1, dw, 0.5);
                let f0 = integrand(nodes[k], &states[k]);
                let fm = integrand(nodes[k] + 0.5 * dw, &sm);
                let f1 = integrand(nodes[k + 1], &states[k + 1]);
                for c in 0..3 {
                    cum[k + 1][c] = cum[k][c] + dw / 6.0 * (f0[c] + 4.0 * fm[c] + f1[c]);
                }
            }
            Ok((states, cum))
        })
        .collect();

    let mut states = Array4::zeros((n1, n2, n3, STATE_LEN));
    let mut cum = Array4::zeros((n1, n2, n3, 3));
    for (idx, col) in columns.into_iter().enumerate() {
        let (col_states, col_cum) = col?;
        let (i, j) = (idx / n2, idx % n2);
        for k in 0..n3 {
            for c in 0..STATE_LEN {
                states[[i, j, k, c]] = col_states[k][c];
            }
            for c in 0..3 {
                cum[[i, j, k, c]] = col_cum[k][c];
            }
        }
    }
    Ok(CoordinateChart {
        field: Arc::new(field),
        grid,
        states,
        cum,
    })
}

/// Cubic Hermite interpolation of the full state on one node interval.
fn hermite(s0: &ColState, d0: &ColState, s1: &ColState, d1: &ColState, h: f64, t: f64) -> ColState {
    let t2 = t * t;
    let t3 = t2 * t;
    let h00 = 2.0 * t3 - 3.0 * t2 + 1.0;
    let h10 = t3 - 2.0 * t2 + t;
    let h01 = -2.0 * t3 + 3.0 * t2;
    let h11 = t3 - t2;
    let mut out = [0.0; STATE_LEN];
    for c in 0..STATE_LEN {
        out[c] = h00 * s0[c] + h10 * h * d0[c] + h01 * s1[c] + h11 * h * d1[c];
    }
    out
}

impl CoordinateChart {
    fn state(&self, i: usize, j: usize, k: usize) -> ColState {
        let mut s = [0.0; STATE_LEN];
        for c in 0..STATE_LEN {
            s[c] = self.states[[i, j, k, c]];
        }
        s
    }

    fn cum_at_node(&self, i: usize, j: usize, k: usize) -> [f64; 3] {
        [
            self.cum[[i, j, k, 0]],
            self.cum[[i, j, k, 1]],
            self.cum[[i, j, k, 2]],
        ]
    }

    fn bracket(&self, w3: f64) -> usize {
        let dw = self.grid.dw();
        let kf = (w3 - self.grid.w3_min) / dw;
        (kf.floor().max(0.0) as usize).min(self.grid.n3 - 2)
    }

    /// Hermite-interpolated column state at arbitrary w3.
    pub fn interp_state(&self, i: usize, j: usize, w3: f64) -> ColState {
        let k = self.bracket(w3);
        let dw = self.grid.dw();
        let wk = self.grid.w3_min + k as f64 * dw;
        let s0 = self.state(i, j, k);
        let s1 = self.state(i, j, k + 1);
        let d0 = column_rhs(&self.field, wk, &s0);
        let d1 = column_rhs(&self.field, wk + dw, &s1);
        hermite(&s0, &d0, &s1, &d1, dw, (w3 - wk) / dw)
    }

    pub fn z3_of_w3(&self, i: usize, j: usize, w3: f64) -> f64 {
        w3 + self.interp_state(i, j, w3)[6]
    }

    /// Invert the vertical stretching on one column.  z3 is strictly
    /// increasing in w3 because dz3/dw3 = 1/b0_3 > 0.
    pub fn w3_of_z3(&self, i: usize, j: usize, z3: f64) -> Result<f64> {
        let n3 = self.grid.n3;
        let z_lo = self.grid.w3_min + self.states[[i, j, 0, 6]];
        let z_hi = self.grid.w3_max + self.states[[i, j, n3 - 1, 6]];
        if z3 < z_lo - 1e-9 || z3 > z_hi + 1e-9 {
            return Err(Error::Numerical(format!(
                "z3 = {z3:.4} outside the chart range [{z_lo:.4}, {z_hi:.4}]"
            )));
        }
        // Bisection on the node values, then Newton polish on the
        // Hermite interpolant.
        let dw = self.grid.dw();
        let zk = |k: usize| self.grid.w3_min + k as f64 * dw + self.states[[i, j, k, 6]];
        let (mut lo, mut hi) = (0usize, n3 - 1);
        while hi - lo > 1 {
            let mid = (lo + hi) / 2;
            if zk(mid) <= z3 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let mut a = self.grid.w3_min + lo as f64 * dw;
        let mut b = a + dw;
        let mut w = a + (b - a) * ((z3 - zk(lo)) / (zk(hi) - zk(lo))).clamp(0.0, 1.0);
        for _ in 0..60 {
            let s = self.interp_state(i, j, w);
            let fz = w + s[6] - z3;
            if fz.abs() < 1e-13 {
                break;
            }
            if fz > 0.0 {
                b = w;
            } else {
                a = w;
            }
            let slope = self.field.g_inv([s[0], s[1], w]);
            let wn = w - fz / slope;
            w = if wn > a && wn < b { wn } else { 0.5 * (a + b) };
        }
        Ok(w.clamp(self.grid.w3_min, self.grid.w3_max))
    }

    /// Chart matrices at a w-point on column (i, j).
    pub fn point_at_w(&self, i: usize, j: usize, w3: f64) -> Result<ChartPoint> {
        let s = self.interp_state(i, j, w3);
        let wh = self.grid.w_h(i, j);
        let y = [s[0], s[1], w3];
        let f = self.field.f_h(y);
        let g = self.field.g_inv(y);
        let a1 = [[1.0, 0.0, f[0]], [0.0, 1.0, f[1]], [0.0, 0.0, 1.0]];
        let m = [
            [s[2], s[3], f[0]],
            [s[4], s[5], f[1]],
            [0.0, 0.0, 1.0],
        ];
        let m_inv = mat_inv(&m)?;
        let a2_exact = mat_sub(&MAT_ID, &mat_mul(&a1, &m_inv));
        let a2_naive = [
            [s[9], s[10], 0.0],
            [s[11], s[12], 0.0],
            [0.0, 0.0, 0.0],
        ];
        let a3 = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [s[7], s[8], g]];
        let b = mat_mul(&a3, &m_inv);
        Ok(ChartPoint {
            w: [wh[0], wh[1], w3],
            z3: w3 + s[6],
            y,
            m,
            a1,
            a2_exact,
            a2_naive,
            a3,
            b,
        })
    }

    /// Chart matrices at a z-point on column (i, j).
    pub fn point_at_z(&self, i: usize, j: usize, z3: f64) -> Result<ChartPoint> {
        let w3 = self.w3_of_z3(i, j, z3)?;
        self.point_at_w(i, j, w3)
    }

    /// The far-field saturation values of the cumulative integrals:
    /// the A2 integral and the A3 row evaluated at the top of the slab.
    fn saturated(&self, i: usize, j: usize) -> (Mat3, Mat3) {
        let s = self.interp_state(i, j, self.field.phi.k_support);
        let a2h = [
            [s[9], s[10], 0.0],
            [s[11], s[12], 0.0],
            [0.0, 0.0, 0.0],
        ];
        let a3h = [
            [0.0, 0.0, 0.0],
            [0.0, 0.0, 0.0],
            [s[7], s[8], 0.0],
        ];
        (a2h, a3h)
    }

    /// The cutoff-localized splitting of B - Id at a z-point.
    pub fn split_at_z(&self, i: usize, j: usize, z3: f64) -> Result<SplitMatrices> {
        let p = self.point_at_z(i, j, z3)?;
        let k = self.field.phi.k_support;
        let eta = eta_cutoff(z3, k);
        let (a2h, a3h) = self.saturated(i, j);
        let a21 = mat_scale(&p.a2_naive, eta);
        let a22 = mat_scale(&a2h, 1.0 - eta);
        let g = self.field.g_inv(p.y);
        let a31 = [
            [1.0, 0.0, 0.0],
            [0.0, 1.0, 0.0],
            [eta * p.a3[2][0], eta * p.a3[2][1], g],
        ];
        let a32 = mat_scale(&a3h, 1.0 - eta);
        let frak_a1 = p.a1;
        let fa_inv = mat_inv(&frak_a1)?;
        let a31_m_id = mat_sub(&a31, &MAT_ID);
        let fa_m_id = mat_sub(&fa_inv, &MAT_ID);
        // Arranged so that Id + b1 + b2 recombines into the triple
        // product (A31 + A32) frak_a1^{-1} (Id - A21 - A22) exactly.
        let b1 = {
            let t = mat_add(&mat_mul(&a31_m_id, &fa_inv), &fa_m_id);
            mat_sub(&t, &mat_mul(&a31, &mat_mul(&fa_inv, &a21)))
        };
        let b2 = {
            let t = mat_sub(
                &mat_mul(&a32, &fa_inv),
                &mat_mul(&a31, &mat_mul(&fa_inv, &a22)),
            );
            mat_sub(
                &t,
                &mat_mul(&a32, &mat_mul(&fa_inv, &mat_add(&a21, &a22))),
            )
        };
        // Conventional ordering of the same pieces.
        let b1_literal = {
            let t = mat_add(&mat_add(&fa_m_id, &a31_m_id), &mat_mul(&fa_m_id, &a31_m_id));
            mat_add(&t, &mat_mul(&a31, &mat_mul(&fa_inv, &a21)))
        };
        let b2_literal = {
            let t = mat_add(
                &mat_mul(&a32, &fa_inv),
                &mat_mul(&a31, &mat_mul(&fa_inv, &a22)),
            );
            mat_add(
                &t,
                &mat_mul(&a32, &mat_mul(&fa_inv, &mat_add(&a21, &a22))),
            )
        };
        Ok(SplitMatrices {
            eta,
            a21,
            a22,
            a31,
            a32,
            frak_a1,
            b1,
            b2,
            b1_literal,
            b2_literal,
        })
    }

    /// Cumulative source integral C(z3) = int_{bottom}^{z3} (e3 - b0) dz3'
    /// evaluated through the w-parametrization of the column.
    fn source_integral(&self, i: usize, j: usize, w3: f64) -> [f64; 3] {
        let k = self.bracket(w3);
        let dw = self.grid.dw();
        let wk = self.grid.w3_min + k as f64 * dw;
        let mut c = self.cum_at_node(i, j, k);
        let h = w3 - wk;
        if h.abs() > 1e-14 {
            let integrand = |w: f64| -> [f64; 3] {
                let s = self.interp_state(i, j, w);
                let y = [s[0], s[1], w];
                let p = self.field.phi.phi(y);
                let g = self.field.g_inv(y);
                let e = self.field.epsilon;
                [-e * p[0] * g, -e * p[1] * g, -e * p[2] * g]
            };
            let f0 = integrand(wk);
            let fm = integrand(wk + 0.5 * h);
            let f1 = integrand(w3);
            for c_i in 0..3 {
                c[c_i] += h / 6.0 * (f0[c_i] + 4.0 * fm[c_i] + f1[c_i]);
            }
        }
        c
    }

    /// The cutoff-localized correction field: the antiderivative of the
    /// static source e3 - b0(y(w(z))), anchored so it vanishes above the
    /// slab, multiplied by the cutoff so it also vanishes far below.
    pub fn ytilde(&self, i: usize, j: usize, z3: f64) -> Result<[f64; 3]> {
        let k = self.field.phi.k_support;
        let eta = eta_cutoff(z3, k);
        if eta == 0.0 {
            return Ok([0.0; 3]);
        }
        let w3 = self.w3_of_z3(i, j, z3)?;
        let w_top = self.w3_of_z3(i, j, k + 1.0)?;
        let c = self.source_integral(i, j, w3);
        let c_top = self.source_integral(i, j, w_top);
        Ok([
            eta * (c[0] - c_top[0]),
            eta * (c[1] - c_top[1]),
            eta * (c[2] - c_top[2]),
        ])
    }

    /// Residual of d/dz3 ytilde = e3 - b0(y(w(z))) on the plateau of the
    /// cutoff, by 4th-order differencing in z3.
    pub fn correction_derivative_residual(&self, samples: usize) -> Result<f64> {
        let k = self.field.phi.k_support;
        let h = 1e-3;
        let lo = -1.0 + 0.05;
        let hi = k + 1.0 - 0.05;
        let mut sup = 0.0f64;
        let step = (self.grid.nh[0] / 8).max(1);
        for i in (0..self.grid.nh[0]).step_by(step) {
            for j in (0..self.grid.nh[1]).step_by(step) {
                for q in 0..samples {
                    let z3 = lo + (hi - lo) * q as f64 / (samples - 1) as f64;
                    let mut d = [0.0f64; 3];
                    for (off, wgt) in [(-2.0, 1.0), (-1.0, -8.0), (1.0, 8.0), (2.0, -1.0)] {
                        let v = self.ytilde(i, j, z3 + off * h)?;
                        for c in 0..3 {
                            d[c] += wgt * v[c] / (12.0 * h);
                        }
                    }
                    let p = self.point_at_z(i, j, z3)?;
                    let b = self.field.b0(p.y);
                    let target = [-b[0], -b[1], 1.0 - b[2]];
                    for c in 0..3 {
                        sup = sup.max((d[c] - target[c]).abs());
                    }
                }
            }
        }
        Ok(sup)
    }

    /// Summary report of the chart residuals; serializes to JSON for the
    /// CLI and backs the acceptance checks.
    pub fn report(&self) -> Result<ChartReport> {
        let k = self.field.phi.k_support;
        let nz = 48usize;
        let z_lo = self.grid.w3_min + 0.6;
        let z_hi = self.grid.w3_max - 0.6;
        let step = (self.grid.nh[0] / 8).max(1);
        let mut b_minus_id = 0.0f64;
        let mut a21_sup = 0.0f64;
        let mut a31_minus_id = 0.0f64;
        let mut frak_a1_minus_id = 0.0f64;
        let mut a2_forms_gap = 0.0f64;
        let mut split_identity = 0.0f64;
        let mut split_vs_product = 0.0f64;
        let mut split_mismatch_below = 0.0f64;
        let mut z_shift = 0.0f64;
        let mut round_trip = 0.0f64;
        let mut ytilde_above_slab = 0.0f64;
        for i in (0..self.grid.nh[0]).step_by(step) {
            for j in (0..self.grid.nh[1]).step_by(step) {
                for q in 0..nz {
                    let z3 = z_lo + (z_hi - z_lo) * q as f64 / (nz - 1) as f64;
                    let p = self.point_at_z(i, j, z3)?;
                    let sp = self.split_at_z(i, j, z3)?;
                    b_minus_id = b_minus_id.max(mat_sup(&mat_sub(&p.b, &MAT_ID)));
                    a21_sup = a21_sup.max(mat_sup(&sp.a21));
                    a31_minus_id = a31_minus_id.max(mat_sup(&mat_sub(&sp.a31, &MAT_ID)));
                    frak_a1_minus_id =
                        frak_a1_minus_id.max(mat_sup(&mat_sub(&sp.frak_a1, &MAT_ID)));
                    a2_forms_gap =
                        a2_forms_gap.max(mat_sup(&mat_sub(&p.a2_exact, &p.a2_naive)));
                    z_shift = z_shift.max((p.z3 - p.w[2]).abs());
                    round_trip = round_trip.max((self.z3_of_w3(i, j, p.w[2]) - z3).abs());
                    // Exact recombination of the split pieces.
                    let a3s = mat_add(&sp.a31, &sp.a32);
                    let a2s = mat_add(&sp.a21, &sp.a22);
                    let fa_inv = mat_inv(&sp.frak_a1)?;
                    let product =
                        mat_mul(&a3s, &mat_mul(&fa_inv, &mat_sub(&MAT_ID, &a2s)));
                    let assembled = mat_add(&MAT_ID, &mat_add(&sp.b1, &sp.b2));
                    split_identity =
                        split_identity.max(mat_sup(&mat_sub(&assembled, &product)));
                    // Against the integral-form B, where the splitting
                    // reconstructs it.
                    let b_naive = mat_mul(
                        &p.a3,
                        &mat_mul(&mat_inv(&p.a1)?, &mat_sub(&MAT_ID, &p.a2_naive)),
                    );
                    let gap = mat_sup(&mat_sub(&assembled, &b_naive));
                    if z3 >= -1.0 {
                        split_vs_product = split_vs_product.max(gap);
                    } else {
                        split_mismatch_below = split_mismatch_below.max(gap);
                    }
                    if z3 >= k + 1.0 {
                        let yt = self.ytilde(i, j, z3)?;
                        for v in yt {
                            ytilde_above_slab = ytilde_above_slab.max(v.abs());
                        }
                    }
                }
            }
        }
        let correction_residual = self.correction_derivative_residual(24)?;
        Ok(ChartReport {
            profile: self.field.phi.name.clone(),
            epsilon: self.field.epsilon,
            b_minus_id,
            a21_sup,
            a31_minus_id,
            frak_a1_minus_id,
            a2_forms_gap,
            split_identity,
            split_vs_product,
            split_mismatch_below,
            z_shift,
            round_trip,
            ytilde_above_slab,
            correction_residual,
        })
    }
}

/// Residual summary for one assembled chart.
#[derive(Debug, Clone, Serialize)]
pub struct ChartReport {
    pub profile: String,
    pub epsilon: f64,
    /// sup |B - Id| over sampled points.
    pub b_minus_id: f64,
    pub a21_sup: f64,
    pub a31_minus_id: f64,
    pub frak_a1_minus_id: f64,
    /// Gap between the two forms of A2 (O(eps^2) in general).
    pub a2_forms_gap: f64,
    /// Exact recombination residual of the split pieces (pure algebra).
    pub split_identity: f64,
    /// Split sum against the integral-form B on the region where the
    /// splitting reconstructs it (z3 >= -1).
    pub split_vs_product: f64,
    /// Recorded mismatch of the splitting below z3 = -1, where the
    /// far-field half does not vanish but the integrals do.
    pub split_mismatch_below: f64,
    /// sup |z3 - w3| (must stay <= 1/2 for admissible eps).
    pub z_shift: f64,
    /// Round-trip z3(w3(z3)) residual.
    pub round_trip: f64,
    /// sup |ytilde| above the slab, where it must vanish.
    pub ytilde_above_slab: f64,
    /// Residual of the vertical-derivative identity for ytilde.
    pub correction_residual: f64,
}

/// Verify that differentiation along b0 becomes plain d/dz3: compares
/// b0 . grad f at the chart point against a 6th-order difference of
/// f(y(w(z))) in z3.
pub fn verify_straightening(
    chart: &CoordinateChart,
    f: &(dyn Fn([f64; 3]) -> f64 + Sync),
    grad_f: &(dyn Fn([f64; 3]) -> [f64; 3] + Sync),
) -> Result<StraighteningReport> {
    let h = 0.01;
    let nz = 25usize;
    let z_lo = chart.grid.w3_min + 0.8;
    let z_hi = chart.grid.w3_max - 0.8;
    let step = (chart.grid.nh[0] / 8).max(1);
    let mut sup = 0.0f64;
    let mut samples = 0usize;
    let coeffs = [
        (-3.0, -1.0),
        (-2.0, 9.0),
        (-1.0, -45.0),
        (1.0, 45.0),
        (2.0, -9.0),
        (3.0, 1.0),
    ];
    for i in (0..chart.grid.nh[0]).step_by(step) {
        for j in (0..chart.grid.nh[1]).step_by(step) {
            for q in 0..nz {
                let z3 = z_lo + (z_hi - z_lo) * q as f64 / (nz - 1) as f64;
                let p = chart.point_at_z(i, j, z3)?;
                let b = chart.field.b0(p.y);
                let g = grad_f(p.y);
                let lhs = b[0] * g[0] + b[1] * g[1] + b[2] * g[2];
                let mut rhs = 0.0;
                for (off, wgt) in coeffs {
                    let w3 = chart.w3_of_z3(i, j, z3 + off * h)?;
                    let s = chart.interp_state(i, j, w3);
                    rhs += wgt * f([s[0], s[1], w3]) / (60.0 * h);
                }
                sup = sup.max((lhs - rhs).abs());
                samples += 1;
            }
        }
    }
    Ok(StraighteningReport {
        sup_residual: sup,
        samples,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct StraighteningReport {
    pub sup_residual: f64,
    pub samples: usize,
}

/// Change-of-variables identity for the divergence under a C^1
/// diffeomorphism X:
///   (div H)(X(y)) = det(DX)^{-1} div_y( det(DX) (DX)^{-1} H(X(y)) ).
/// The inner divergence is evaluated both spectrally and with 4th-order
/// centered differences; the latter exhibits clean 4th-order
/// convergence under grid refinement while the former reaches spectral
/// accuracy directly.
pub fn divergence_identity_check(
    n: usize,
    period: f64,
    x_map: &(dyn Fn([f64; 3]) -> [f64; 3] + Sync),
    x_jac: &(dyn Fn([f64; 3]) -> Mat3 + Sync),
    h_field: &(dyn Fn([f64; 3]) -> [f64; 3] + Sync),
    h_div: &(dyn Fn([f64; 3]) -> f64 + Sync),
) -> Result<DivergenceIdentityReport> {
    let grid = Grid::cubic(n, period)?;
    let hx = period / n as f64;
    let mut w = vec![ndarray::Array3::<f64>::zeros((n, n, n)); 3];
    let mut det = ndarray::Array3::<f64>::zeros((n, n, n));
    let mut target = ndarray::Array3::<f64>::zeros((n, n, n));
    for i in 0..n {
        for j in 0..n {
            for k in 0..n {
                let y = [i as f64 * hx, j as f64 * hx, k as f64 * hx];
                let jac = x_jac(y);
                let d = mat_det(&jac);
                if d.abs() < 1e-10 {
                    return Err(Error::Numerical(format!(
                        "deformation Jacobian is singular at ({:.3}, {:.3}, {:.3})",
                        y[0], y[1], y[2]
                    )));
                }
                let inv = mat_inv(&jac)?;
                let x = x_map(y);
                let hv = h_field(x);
                for c in 0..3 {
                    w[c][[i, j, k]] =
                        d * (inv[c][0] * hv[0] + inv[c][1] * hv[1] + inv[c][2] * hv[2]);
                }
                det[[i, j, k]] = d;
                target[[i, j, k]] = h_div(x);
            }
        }
    }
    // Spectral inner divergence.
    let field = SpectralField::from_physical(grid.clone(), w.clone());
    let div_spec = field.divergence().to_physical();
    let mut spectral_residual = 0.0f64;
    for ((idx, &t), &dv) in target.indexed_iter().zip(det.iter()) {
        let r = (div_spec[0][idx] / dv - t).abs();
        spectral_residual = spectral_residual.max(r);
    }
    // 4th-order centered differences with periodic wrap.
    let mut fd_residual = 0.0f64;
    let wrap = |m: i64| -> usize { m.rem_euclid(n as i64) as usize };
    for i in 0..n {
        for j in 0..n {
            for k in 0..n {
                let mut div = 0.0;
                for (axis, arr) in w.iter().enumerate() {
                    let at = |off: i64| -> f64 {
                        let mut idx = [i as i64, j as i64, k as i64];
                        idx[axis] += off;
                        arr[[wrap(idx[0]), wrap(idx[1]), wrap(idx[2])]]
                    };
                    div += (at(-2) - 8.0 * at(-1) + 8.0 * at(1) - at(2)) / (12.0 * hx);
                }
                let r = (div / det[[i, j, k]] - target[[i, j, k]]).abs();
                fd_residual = fd_residual.max(r);
            }
        }
    }
    Ok(DivergenceIdentityReport {
        spectral_residual,
        fd_residual,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct DivergenceIdentityReport {
    pub spectral_residual: f64,
    pub fd_residual: f64,
}

// --------------------------------------------------------------------------
// Admissibility thresholds for eps.
// --------------------------------------------------------------------------

/// Smallness thresholds on eps computed from norms of the profile.  The
/// chained bounds mirror the smallness conditions under which the chart
/// construction and its splitting are controlled; the unspecified
/// absolute constants are taken to be 1.
#[derive(Debug, Clone, Serialize)]
pub struct EpsilonThresholds {
    pub eps1: f64,
    pub eps_a: f64,
    pub eps_alpha: f64,
    pub eps_b: f64,
    pub eps_beta: f64,
    pub eps2: f64,
}

fn sup_phys(field: &SpectralField) -> f64 {
    field
        .to_physical()
        .iter()
        .flat_map(|arr| arr.iter())
        .fold(0.0f64, |m, &v| m.max(v.abs()))
}

fn inv_or_inf(x: f64) -> f64 {
    if x <= 1e-300 {
        f64::INFINITY
    } else {
        1.0 / x
    }
}

impl EpsilonThresholds {
    /// Compute the thresholds from a spectral sampling of the profile.
    pub fn compute(phi: &PhiProfile) -> Self {
        let grid =
            Grid::new([64, 64, 128], [phi.period; 3]).expect("threshold grid");
        let sampled = phi.sample(&grid);
        let comp = |j: usize| sampled.component(j);
        let deriv = |f: &SpectralField, a: [usize; 3]| -> SpectralField {
            let mut d = f.clone();
            for (axis, &ord) in a.iter().enumerate() {
                if ord > 0 {
                    d = d.derivative(axis + 1, ord as u32);
                }
            }
            d
        };
        let k = phi.k_support;

        let sup_phi3 = sup_phys(&comp(2));
        // sup over all first derivatives, horizontal-only first derivatives,
        // and first derivatives of phi3.
        let mut sup_grad_h = 0.0f64;
        let mut sup_grad_h_phi3 = 0.0f64;
        let mut sup_grad_phi3 = 0.0f64;
        for axis in 0..3 {
            let mut a = [0usize; 3];
            a[axis] = 1;
            for j in 0..3 {
                let s = sup_phys(&deriv(&comp(j), a));
                if axis < 2 {
                    sup_grad_h = sup_grad_h.max(s);
                    if j == 2 {
                        sup_grad_h_phi3 = sup_grad_h_phi3.max(s);
                    }
                }
                if j == 2 {
                    sup_grad_phi3 = sup_grad_phi3.max(s);
                }
            }
        }
        // Sum over |alpha| <= 2 of sup |d^alpha grad phi|, and the
        // second-derivative sup of phi3.
        let multi = |order: usize| -> Vec<[usize; 3]> {
            let mut v = Vec::new();
            for a in 0..=order {
                for b in 0..=order - a {
                    let c = order - a - b;
                    v.push([a, b, c]);
                }
            }
            v
        };
        let mut w2_sum = 0.0f64;
        for order in 0..=2 {
            for alpha in multi(order) {
                let mut sup_term = 0.0f64;
                for axis in 0..3 {
                    let mut a = alpha;
                    a[axis] += 1;
                    for j in 0..3 {
                        sup_term = sup_term.max(sup_phys(&deriv(&comp(j), a)));
                    }
                }
                w2_sum += sup_term;
            }
        }
        let mut sup_grad2_phi3 = 0.0f64;
        for alpha in multi(2) {
            sup_grad2_phi3 = sup_grad2_phi3.max(sup_phys(&deriv(&comp(2), alpha)));
        }
        // Sobolev-type norms: H^2 of the full gradient, and the sup over
        // heights of the horizontal H^2 of the horizontal gradient.
        let mut h2_sq = 0.0f64;
        for j in 0..3 {
            for axis in 0..3 {
                let mut a = [0usize; 3];
                a[axis] = 1;
                let n = deriv(&comp(j), a).sobolev_norm(2.0, false);
                h2_sq += n * n;
            }
        }
        let h2_grad = h2_sq.sqrt();

        let dims = grid.dims;
        let cell_h = (phi.period / dims[0] as f64) * (phi.period / dims[1] as f64);
        let mut slice_sq = vec![0.0f64; dims[2]];
        for j in 0..3 {
            for axis in 0..2 {
                let mut a0 = [0usize; 3];
                a0[axis] = 1;
                let g = deriv(&comp(j), a0);
                for beta in [[0, 0], [1, 0], [0, 1], [2, 0], [1, 1], [0, 2]] {
                    let d = deriv(&g, [beta[0], beta[1], 0]);
                    let phys = d.to_physical();
                    for (idx, v) in phys[0].indexed_iter() {
                        slice_sq[idx.2] += v * v * cell_h;
                    }
                }
            }
        }
        let linf_v_h2_h = slice_sq.iter().fold(0.0f64, |m, &v| m.max(v)).sqrt();

        let eps1 = inv_or_inf(4.0 * sup_phi3).min(inv_or_inf(4.0 * k * sup_phi3));
        let eps_a = inv_or_inf(4.0 * sup_phi3).min(inv_or_inf(6.0 * k * sup_grad_h));
        let eps_alpha = eps_a.min(inv_or_inf(w2_sum));
        let eps_b = eps_alpha.min(0.5 * inv_or_inf(sup_phi3 + sup_grad_h_phi3));
        let eps_beta = eps_b.min(inv_or_inf(sup_grad_phi3 + sup_grad2_phi3));
        let eps2 = eps_alpha
            .min(eps_beta)
            .min(inv_or_inf(h2_grad + linf_v_h2_h));
        Self {
            eps1,
            eps_a,
            eps_alpha,
            eps_b,
            eps_beta,
            eps2,
        }
    }

    /// The admissible upper bound on eps.
    pub fn limit(&self) -> f64 {
        self.eps1.min(self.eps2)
    }

    /// Name and value of the binding (smallest) threshold.
    pub fn binding(&self) -> (&'static str, f64) {
        let named = [
            ("eps1", self.eps1),
            ("eps_a", self.eps_a),
            ("eps_alpha", self.eps_alpha),
            ("eps_b", self.eps_b),
            ("eps_beta", self.eps_beta),
            ("eps2", self.eps2),
        ];
        let mut best = named[0];
        for n in named {
            if n.1 < best.1 {
                best = n;
            }
        }
        best
    }

    pub fn check(&self, epsilon: f64) -> Result<()> {
        if epsilon > self.limit() {
            let (name, value) = self.binding();
            return Err(Error::InvalidParameter(format!(
                "epsilon = {epsilon} exceeds the admissible bound {:.4e} \
                 (binding threshold: {name} = {value:.4e})",
                self.limit()
            )));
        }
        Ok(())
    }
}

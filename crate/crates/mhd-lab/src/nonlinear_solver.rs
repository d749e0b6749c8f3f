//! Time integration of the full nonlinear system in both formulations:
//! the Eulerian velocity/magnetic-field system with spectral pressure,
//! and the Lagrangian damped-wave system for the displacement, including
//! the variable-coefficient variant posed in straightened coordinates.
//! Also hosts the trajectory map, the Cauchy-invariant checks, and the
//! Eulerian/Lagrangian cross-validation driver.
//!
//! Scheme: implicit trapezoid on the stiff dissipative Laplacian (it is
//! diagonal in Fourier space), explicit Adams-Bashforth-2 on transport,
//! stretching, and all variable-coefficient terms, with a Heun starter
//! for the first step.  The Lagrangian pressure is a Picard fixed point
//! re-solved at every stage, warm-started from the previous solve.

use ndarray::Array3;
use num_complex::Complex64;
use rayon::prelude::*;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::field_straightening::{mat_det, mat_inv, CoordinateChart, Mat3, MAT_ID};
use crate::fields::{Grid, SpectralField};

/// Matrix field in physical space: nine arrays, entry (i, j) at 3i + j.
type MatField = Vec<Array3<f64>>;

const INVERT_MARGIN: f64 = 0.5;
const PRESSURE_TOL: f64 = 1e-11;
const PRESSURE_MAX_ITERS: usize = 50;

fn flat(a: &Array3<f64>) -> &[f64] {
    a.as_slice().expect("physical arrays are standard layout")
}

/// Gradient of each component of a vector field, in physical space.
fn grad_phys(f: &SpectralField) -> MatField {
    let mut out = Vec::with_capacity(9);
    for i in 0..3 {
        let ci = f.component(i);
        for axis in 1..=3 {
            out.push(ci.derivative(axis, 1).to_physical().swap_remove(0));
        }
    }
    out
}

fn sup_vector(v: &[Array3<f64>]) -> f64 {
    let s: Vec<&[f64]> = v.iter().map(flat).collect();
    (0..s[0].len())
        .into_par_iter()
        .map(|p| (s[0][p] * s[0][p] + s[1][p] * s[1][p] + s[2][p] * s[2][p]).sqrt())
        .reduce(|| 0.0, f64::max)
}

/// Pointwise inverse of Id + G together with sup_x |G(x)| (Frobenius).
/// Errors when the invertibility margin is violated.
fn invert_id_plus(g: &MatField) -> Result<(MatField, f64)> {
    let dim = g[0].dim();
    let n = g[0].len();
    let gs: Vec<&[f64]> = g.iter().map(flat).collect();
    let sup = (0..n)
        .into_par_iter()
        .map(|p| gs.iter().map(|c| c[p] * c[p]).sum::<f64>().sqrt())
        .reduce(|| 0.0, f64::max);
    if !(sup < INVERT_MARGIN) {
        return Err(Error::Numerical(format!(
            "invertibility margin violated: sup |grad Y| = {sup:.4} >= {INVERT_MARGIN}"
        )));
    }
    let mut cols: Vec<Vec<f64>> = vec![vec![0.0; n]; 9];
    let results: Vec<Mat3> = (0..n)
        .into_par_iter()
        .map(|p| {
            let mut m = MAT_ID;
            for i in 0..3 {
                for j in 0..3 {
                    m[i][j] += gs[3 * i + j][p];
                }
            }
            mat_inv(&m).expect("matrix within margin is invertible")
        })
        .collect();
    for (p, m) in results.iter().enumerate() {
        for i in 0..3 {
            for j in 0..3 {
                cols[3 * i + j][p] = m[i][j];
            }
        }
    }
    let out = cols
        .into_iter()
        .map(|v| Array3::from_shape_vec(dim, v).unwrap())
        .collect();
    Ok((out, sup))
}

/// C = A B pointwise.
fn mat_mul_field(a: &MatField, b: &MatField) -> MatField {
    let dim = a[0].dim();
    let n = a[0].len();
    let af: Vec<&[f64]> = a.iter().map(flat).collect();
    let bf: Vec<&[f64]> = b.iter().map(flat).collect();
    (0..9)
        .map(|e| {
            let (i, j) = (e / 3, e % 3);
            let v: Vec<f64> = (0..n)
                .into_par_iter()
                .map(|p| (0..3).map(|k| af[3 * i + k][p] * bf[3 * k + j][p]).sum())
                .collect();
            Array3::from_shape_vec(dim, v).unwrap()
        })
        .collect()
}

/// A Aᵗ pointwise.
fn mat_aat_field(a: &MatField) -> MatField {
    let dim = a[0].dim();
    let n = a[0].len();
    let af: Vec<&[f64]> = a.iter().map(flat).collect();
    (0..9)
        .map(|e| {
            let (i, j) = (e / 3, e % 3);
            let v: Vec<f64> = (0..n)
                .into_par_iter()
                .map(|p| (0..3).map(|k| af[3 * i + k][p] * af[3 * j + k][p]).sum())
                .collect();
            Array3::from_shape_vec(dim, v).unwrap()
        })
        .collect()
}

fn mat_transpose(a: &MatField) -> MatField {
    (0..9).map(|e| a[3 * (e % 3) + e / 3].clone()).collect()
}

fn mat_scale_add_id(a: &MatField, s: f64, id_coeff: f64) -> MatField {
    (0..9)
        .map(|e| {
            let mut m = a[e].mapv(|x| s * x);
            if id_coeff != 0.0 && e / 3 == e % 3 {
                m.mapv_inplace(|x| x + id_coeff);
            }
            m
        })
        .collect()
}

/// Scale every entry of A by the scalar field s.
fn mat_scalar_mul(a: &MatField, s: &Array3<f64>) -> MatField {
    a.iter().map(|c| c * s).collect()
}

/// (A v)_i or (Aᵗ v)_i pointwise for a physical 3-vector v.
fn mat_vec_field(a: &MatField, v: &[Array3<f64>], transpose: bool) -> Vec<Array3<f64>> {
    let dim = v[0].dim();
    let n = v[0].len();
    let af: Vec<&[f64]> = a.iter().map(flat).collect();
    let vf: Vec<&[f64]> = v.iter().map(flat).collect();
    (0..3)
        .map(|i| {
            let out: Vec<f64> = (0..n)
                .into_par_iter()
                .map(|p| {
                    (0..3)
                        .map(|j| {
                            let e = if transpose { 3 * j + i } else { 3 * i + j };
                            af[e][p] * vf[j][p]
                        })
                        .sum()
                })
                .collect();
            Array3::from_shape_vec(dim, out).unwrap()
        })
        .collect()
}

/// (a·∇)c in physical space from the physical advecting field and the
/// spectral advected field.
fn advect_phys(a_phys: &[Array3<f64>], c: &SpectralField) -> Vec<Array3<f64>> {
    let gc = grad_phys(c);
    (0..3)
        .map(|i| {
            let mut acc = &a_phys[0] * &gc[3 * i];
            acc = acc + &a_phys[1] * &gc[3 * i + 1];
            acc + &a_phys[2] * &gc[3 * i + 2]
        })
        .collect()
}

fn spectral_vector(grid: &Arc<Grid>, comps: Vec<Array3<f64>>) -> SpectralField {
    SpectralField::from_physical(grid.clone(), comps).dealias()
}

/// Solve (Id - half Δ) x = r in Fourier space.
fn solve_implicit(r: &SpectralField, half: f64) -> SpectralField {
    r.apply_multiplier(|xi| {
        let s = xi[0] * xi[0] + xi[1] * xi[1] + xi[2] * xi[2];
        Complex64::new(1.0 / (1.0 + half * s), 0.0)
    })
}

fn min_spacing(grid: &Grid) -> f64 {
    (0..3)
        .map(|a| grid.period[a] / grid.dims[a] as f64)
        .fold(f64::INFINITY, f64::min)
}

fn cfl_check(grid: &Grid, sup_speed: f64, dt: f64) -> Result<()> {
    let h = min_spacing(grid);
    if dt * sup_speed / h > 0.5 {
        return Err(Error::InvalidParameter(format!(
            "CFL violation: dt max|u| / h = {:.3} > 0.5",
            dt * sup_speed / h
        )));
    }
    Ok(())
}

// ==========================================================================
// Eulerian formulation.
// ==========================================================================

/// Divergence-free (b, u) with the spectrally consistent pressure.
#[derive(Clone)]
pub struct EulerianState {
    pub b: SpectralField,
    pub u: SpectralField,
    pub p: SpectralField,
    pub t: f64,
}

impl EulerianState {
    pub fn new(b: SpectralField, u: SpectralField, t: f64) -> Result<Self> {
        let b = b.leray_project();
        let u = u.leray_project();
        let p = pressure_euler(&b, &u)?;
        Ok(EulerianState { b, u, p, t })
    }

    /// Sup over modes of the spectral divergence, worse of b and u.
    pub fn divergence_residual(&self) -> f64 {
        self.b
            .divergence_sup_modes()
            .max(self.u.divergence_sup_modes())
    }
}

/// p = Δ⁻¹ ∂_i∂_j (b_i b_j − u_i u_j), zero mean.
pub fn pressure_euler(b: &SpectralField, u: &SpectralField) -> Result<SpectralField> {
    let bp = b.to_physical();
    let up = u.to_physical();
    let grid = bgrid(b);
    let mut acc = SpectralField::zeros(grid.clone(), 1);
    for i in 0..3 {
        for j in i..3 {
            let t = &bp[i] * &bp[j] - &up[i] * &up[j];
            let t = SpectralField::from_physical(grid.clone(), vec![t]).dealias();
            let d = t.derivative(i + 1, 1).derivative(j + 1, 1);
            acc.axpy(if i == j { 1.0 } else { 2.0 }, &d);
        }
    }
    Ok(acc.inverse_laplacian())
}

fn bgrid(f: &SpectralField) -> Arc<Grid> {
    f.grid.clone()
}

/// Projected explicit right-hand sides: the b-equation rhs, the
/// u-equation rhs without the Laplacian, and sup |∇u| for the blow-up
/// guard.
fn euler_rhs(b: &SpectralField, u: &SpectralField) -> Result<(SpectralField, SpectralField, f64)> {
    let grid = bgrid(b);
    let bp = b.to_physical();
    let up = u.to_physical();
    let gu = grad_phys(u);
    let grad_u_sup = {
        let s: Vec<&[f64]> = gu.iter().map(flat).collect();
        (0..s[0].len())
            .into_par_iter()
            .map(|p| s.iter().map(|c| c[p] * c[p]).sum::<f64>().sqrt())
            .reduce(|| 0.0, f64::max)
    };
    // b_t = b·∇u − u·∇b.
    let b_stretch: Vec<Array3<f64>> = (0..3)
        .map(|i| &bp[0] * &gu[3 * i] + &bp[1] * &gu[3 * i + 1] + &bp[2] * &gu[3 * i + 2])
        .collect();
    let u_advect_b = advect_phys(&up, b);
    let m: Vec<Array3<f64>> = (0..3).map(|i| &b_stretch[i] - &u_advect_b[i]).collect();
    let m = spectral_vector(&grid, m).leray_project();
    // u_t = Δu + P(b·∇b − u·∇u); the pressure is absorbed by the
    // projection.
    let b_advect_b = advect_phys(&bp, b);
    let u_advect_u: Vec<Array3<f64>> = (0..3)
        .map(|i| &up[0] * &gu[3 * i] + &up[1] * &gu[3 * i + 1] + &up[2] * &gu[3 * i + 2])
        .collect();
    let n: Vec<Array3<f64>> = (0..3).map(|i| &b_advect_b[i] - &u_advect_u[i]).collect();
    let n = spectral_vector(&grid, n).leray_project();
    Ok((m, n, grad_u_sup))
}

/// IMEX stepper for the Eulerian system with a blow-up guard on
/// ∫ sup|∇u| dt.
pub struct EulerStepper {
    pub state: EulerianState,
    prev: Option<(SpectralField, SpectralField)>,
    /// Accumulated ∫ sup|∇u| dt.
    pub grad_integral: f64,
    /// Abort threshold for the accumulated integral, if any.
    pub guard: Option<f64>,
}

impl EulerStepper {
    pub fn new(state: EulerianState) -> Self {
        EulerStepper {
            state,
            prev: None,
            grad_integral: 0.0,
            guard: None,
        }
    }

    pub fn step(&mut self, dt: f64) -> Result<()> {
        let grid = bgrid(&self.state.u);
        let up = self.state.u.to_physical();
        cfl_check(&grid, sup_vector(&up), dt)?;
        let (m_n, n_n, gsup) = euler_rhs(&self.state.b, &self.state.u)?;
        self.grad_integral += dt * gsup;
        if let Some(bound) = self.guard {
            if self.grad_integral > bound {
                return Err(Error::Numerical(format!(
                    "blow-up guard tripped: int sup|grad u| dt = {:.4e} > {bound:.4e}",
                    self.grad_integral
                )));
            }
        }
        let half = dt / 2.0;
        let u_base = {
            let mut r = self.state.u.clone();
            r.axpy(half, &self.state.u.laplacian());
            r
        };
        let (b1, u1) = match &self.prev {
            None => {
                // Heun starter: explicit predictor, trapezoid corrector.
                let mut bp_f = self.state.b.clone();
                bp_f.axpy(dt, &m_n);
                let mut r = u_base.clone();
                r.axpy(dt, &n_n);
                let u_pred = solve_implicit(&r, half);
                let (m_p, n_p, _) = euler_rhs(&bp_f.leray_project(), &u_pred)?;
                let mut b1 = self.state.b.clone();
                b1.axpy(half, &m_n);
                b1.axpy(half, &m_p);
                let mut r = u_base;
                r.axpy(half, &n_n);
                r.axpy(half, &n_p);
                (b1, solve_implicit(&r, half))
            }
            Some((m_prev, n_prev)) => {
                let mut b1 = self.state.b.clone();
                b1.axpy(1.5 * dt, &m_n);
                b1.axpy(-0.5 * dt, m_prev);
                let mut r = u_base;
                r.axpy(1.5 * dt, &n_n);
                r.axpy(-0.5 * dt, n_prev);
                (b1, solve_implicit(&r, half))
            }
        };
        let b1 = b1.leray_project();
        let u1 = u1.leray_project();
        let p = pressure_euler(&b1, &u1)?;
        self.state = EulerianState {
            b: b1,
            u: u1,
            p,
            t: self.state.t + dt,
        };
        self.prev = Some((m_n, n_n));
        Ok(())
    }
}

// ==========================================================================
// Straightened background coefficients.
// ==========================================================================

/// The frozen coefficient fields of the straightened system: the chart
/// matrix sampled on a periodic z-grid, its inverse determinant, the
/// correction displacement, and the contractions the right-hand side
/// needs.  Outside the chart's vertical range everything is the
/// identity.
pub struct StraightenedBackground {
    pub grid: Arc<Grid>,
    /// 𝓑 sampled pointwise.
    b_mat: MatField,
    /// det(𝓑⁻¹).
    det_binv: Array3<f64>,
    /// c_j = Σ_k ∂_k B_{kj} (correction for the non-constant-coefficient
    /// divergence).
    col_div: Vec<Array3<f64>>,
    /// ∇_z of the correction displacement.
    grad_ytilde: MatField,
    /// b₀ composed with the chart (column 3 of 𝓑⁻¹).
    b0_of_y: Vec<Array3<f64>>,
    pub ytilde: SpectralField,
}

impl StraightenedBackground {
    /// Sample the chart on `grid`, placing grid coordinate x₃ at
    /// z₃ = x₃ + z3_origin.  The grid's horizontal dims must match the
    /// chart's horizontal nodes.
    pub fn from_chart(chart: &CoordinateChart, grid: Arc<Grid>, z3_origin: f64) -> Result<Self> {
        if grid.dims[0] != chart.grid.nh[0] || grid.dims[1] != chart.grid.nh[1] {
            return Err(Error::InvalidParameter(
                "background grid must match the chart's horizontal nodes".into(),
            ));
        }
        let dim = (grid.dims[0], grid.dims[1], grid.dims[2]);
        let mut b_cols: Vec<Array3<f64>> = (0..9)
            .map(|e| {
                Array3::from_elem(dim, if e / 3 == e % 3 { 1.0 } else { 0.0 })
            })
            .collect();
        let mut det = Array3::from_elem(dim, 1.0);
        let mut yt: Vec<Array3<f64>> = (0..3).map(|_| Array3::zeros(dim)).collect();
        let mut b0y: Vec<Array3<f64>> = (0..3)
            .map(|i| Array3::from_elem(dim, if i == 2 { 1.0 } else { 0.0 }))
            .collect();
        let dz = grid.period[2] / grid.dims[2] as f64;
        for i in 0..dim.0 {
            for j in 0..dim.1 {
                let z_lo = chart.z3_of_w3(i, j, chart.grid.w3_min) + 0.25;
                let z_hi = chart.z3_of_w3(i, j, chart.grid.w3_max) - 0.25;
                for k in 0..dim.2 {
                    let z3 = z3_origin + k as f64 * dz;
                    if z3 < z_lo || z3 > z_hi {
                        continue;
                    }
                    let p = chart.point_at_z(i, j, z3)?;
                    let binv = mat_inv(&p.b)?;
                    for a in 0..3 {
                        for c in 0..3 {
                            b_cols[3 * a + c][[i, j, k]] = p.b[a][c];
                        }
                        b0y[a][[i, j, k]] = binv[a][2];
                    }
                    det[[i, j, k]] = mat_det(&binv);
                    let y = chart.ytilde(i, j, z3)?;
                    for a in 0..3 {
                        yt[a][[i, j, k]] = y[a];
                    }
                }
            }
        }
        let ytilde = SpectralField::from_physical(grid.clone(), yt);
        let grad_ytilde = grad_phys(&ytilde);
        // c_j = Σ_k ∂_k B_{kj}: spectral divergence of each column of 𝓑.
        let col_div = (0..3)
            .map(|j| {
                let col = SpectralField::from_physical(
                    grid.clone(),
                    (0..3).map(|k| b_cols[3 * k + j].clone()).collect(),
                );
                col.divergence().to_physical().swap_remove(0)
            })
            .collect();
        Ok(StraightenedBackground {
            grid,
            b_mat: b_cols,
            det_binv: det,
            col_div,
            grad_ytilde,
            b0_of_y: b0y,
            ytilde,
        })
    }
}

// ==========================================================================
// Lagrangian formulation.
// ==========================================================================

/// Displacement/velocity state of the damped-wave system; `background`
/// present means the straightened variable-coefficient system.
#[derive(Clone)]
pub struct LagrangianState {
    pub y: SpectralField,
    pub v: SpectralField,
    pub pressure: SpectralField,
    pub background: Option<Arc<StraightenedBackground>>,
    pub t: f64,
    /// sup |∇Y| at the most recent right-hand-side assembly.
    pub grad_sup: f64,
}

impl LagrangianState {
    pub fn new(
        y: SpectralField,
        v: SpectralField,
        background: Option<Arc<StraightenedBackground>>,
        t: f64,
    ) -> Self {
        let grid = bgrid(&y);
        LagrangianState {
            y,
            v,
            pressure: SpectralField::zeros(grid, 1),
            background,
            t,
            grad_sup: 0.0,
        }
    }
}

/// The pointwise contractions shared by the pressure solve and the
/// right-hand side; rebuilt from Y at every stage.
struct RhsContext {
    grid: Arc<Grid>,
    sup: f64,
    /// 𝓑𝓐 (plain 𝓐 without a background).
    ba: MatField,
    /// det(𝓑⁻¹) 𝓑𝓐𝓐ᵗ𝓑ᵗ − Id: the pressure-iteration matrix.
    pmat: MatField,
    /// 𝓐𝓐ᵗ𝓑ᵗ: applied to ∇V in the dissipative correction.
    fmat: MatField,
    /// det(𝓑⁻¹) 𝓑𝓐: the inner matrix of the pressure source.
    det_ba: MatField,
    bg: Option<Arc<StraightenedBackground>>,
}

impl RhsContext {
    fn build(state: &LagrangianState) -> Result<Self> {
        let grid = bgrid(&state.y);
        let gy = grad_phys(&state.y);
        match &state.background {
            None => {
                let (a, sup) = invert_id_plus(&gy)?;
                let aat = mat_aat_field(&a);
                let pmat = mat_scale_add_id(&aat, 1.0, -1.0);
                Ok(RhsContext {
                    grid,
                    sup,
                    ba: a.clone(),
                    pmat,
                    fmat: aat,
                    det_ba: a,
                    bg: None,
                })
            }
            Some(bg) => {
                // ∇_y(Ỹ + Ȳ) = (∇_z(Ỹ + Ȳ)) 𝓑.
                let total: MatField = (0..9)
                    .map(|e| &gy[e] + &bg.grad_ytilde[e])
                    .collect();
                let gy_mat = mat_mul_field(&total, &bg.b_mat);
                let (a, sup) = invert_id_plus(&gy_mat)?;
                let ba = mat_mul_field(&bg.b_mat, &a);
                let k = mat_aat_field(&ba);
                let det_k = mat_scalar_mul(&k, &bg.det_binv);
                let pmat = mat_scale_add_id(&det_k, 1.0, -1.0);
                let aat = mat_aat_field(&a);
                let fmat = mat_mul_field(&aat, &mat_transpose(&bg.b_mat));
                let det_ba = mat_scalar_mul(&ba, &bg.det_binv);
                Ok(RhsContext {
                    grid,
                    sup,
                    ba,
                    pmat,
                    fmat,
                    det_ba,
                    bg: state.background.clone(),
                })
            }
        }
    }

    /// Picard iteration for the Lagrangian pressure; returns the
    /// converged pressure and the iteration count.
    fn pressure(&self, state: &LagrangianState, warm: &SpectralField) -> Result<(SpectralField, usize)> {
        // Source: Δ⁻¹ div( det 𝓑𝓐 div( det 𝓑𝓐 (∂₃Ȳ⊗∂₃Ȳ − Ȳ_t⊗Ȳ_t) ) ).
        let d3y = state.y.derivative(3, 1).to_physical();
        let vp = state.v.to_physical();
        // Rows of N = det 𝓑𝓐 T.
        let mut rows: Vec<Array3<f64>> = Vec::with_capacity(9);
        {
            let m: Vec<&[f64]> = self.det_ba.iter().map(flat).collect();
            let d: Vec<&[f64]> = d3y.iter().map(flat).collect();
            let v: Vec<&[f64]> = vp.iter().map(flat).collect();
            let n = d[0].len();
            let dim = d3y[0].dim();
            for i in 0..3 {
                for j in 0..3 {
                    let out: Vec<f64> = (0..n)
                        .into_par_iter()
                        .map(|p| {
                            (0..3)
                                .map(|l| m[3 * i + l][p] * (d[l][p] * d[j][p] - v[l][p] * v[j][p]))
                                .sum()
                        })
                        .collect();
                    rows.push(Array3::from_shape_vec(dim, out).unwrap());
                }
            }
        }
        let inner: Vec<Array3<f64>> = (0..3)
            .map(|i| {
                let row = spectral_vector(&self.grid, rows[3 * i..3 * i + 3].to_vec());
                row.divergence().to_physical().swap_remove(0)
            })
            .collect();
        let w = mat_vec_field(&self.ba, &inner, false);
        let q = spectral_vector(&self.grid, w).divergence().inverse_laplacian();
        // Fixed point: p = q − Δ⁻¹ div( pmat ∇p ).
        let mut p = warm.clone();
        let mut last_diff = f64::INFINITY;
        for it in 1..=PRESSURE_MAX_ITERS {
            let gp = p.gradient().to_physical();
            let m = mat_vec_field(&self.pmat, &gp, false);
            let mut p_new = q.clone();
            p_new.axpy(-1.0, &spectral_vector(&self.grid, m).divergence().inverse_laplacian());
            let mut d = p_new.clone();
            d.sub_assign(&p);
            let diff = d.l2_norm();
            p = p_new;
            if diff <= PRESSURE_TOL {
                return Ok((p, it));
            }
            if diff > 2.0 * last_diff {
                return Err(Error::Numerical(format!(
                    "pressure fixed point diverging (iterate growth at step {it}); \
                     sup |grad Y| = {:.4}",
                    self.sup
                )));
            }
            last_diff = diff;
        }
        Err(Error::Numerical(format!(
            "pressure fixed point did not reach {PRESSURE_TOL:e} in \
             {PRESSURE_MAX_ITERS} iterations; sup |grad Y| = {:.4}",
            self.sup
        )))
    }

    /// The nonlinear source f: the dissipative correction
    /// 𝓑ᵗ∇·(𝓐𝓐ᵗ𝓑ᵗ∇V) − ΔV and the pressure gradient −(𝓑𝓐)ᵗ∇p̄.
    fn source(&self, state: &LagrangianState, p: &SpectralField) -> Result<SpectralField> {
        let gv = grad_phys(&state.v);
        let gp = p.gradient().to_physical();
        let pgrad = mat_vec_field(&self.ba, &gp, true);
        let mut comps = Vec::with_capacity(3);
        for i in 0..3 {
            let gi = [gv[3 * i].clone(), gv[3 * i + 1].clone(), gv[3 * i + 2].clone()];
            let q = mat_vec_field(&self.fmat, &gi, false);
            let (w, corr) = match &self.bg {
                None => (q, None),
                Some(bg) => {
                    // Σ_jk B_kj ∂_k q_j = div(𝓑 q) − Σ_j c_j q_j.
                    let bq = mat_vec_field(&bg.b_mat, &q, false);
                    let c = &bg.col_div[0] * &q[0]
                        + &bg.col_div[1] * &q[1]
                        + &bg.col_div[2] * &q[2];
                    (bq, Some(c))
                }
            };
            let mut term = spectral_vector(&self.grid, w).divergence();
            if let Some(c) = corr {
                term.sub_assign(&SpectralField::from_physical(self.grid.clone(), vec![c]).dealias());
            }
            term.sub_assign(&state.v.component(i).laplacian());
            term.sub_assign(&SpectralField::from_physical(self.grid.clone(), vec![pgrad[i].clone()]).dealias());
            comps.push(term);
        }
        Ok(SpectralField::from_components([
            comps.remove(0),
            comps.remove(0),
            comps.remove(0),
        ]))
    }
}

/// Converged Lagrangian pressure for the given state (warm-started from
/// `state.pressure`); returns the pressure and the Picard iteration
/// count.
pub fn pressure_lagrangian(state: &LagrangianState) -> Result<(SpectralField, usize)> {
    let ctx = RhsContext::build(state)?;
    ctx.pressure(state, &state.pressure)
}

/// L² residual of the elliptic pressure equation
/// div(𝓐𝓐ᵗ∇p) = div(𝓐 div(det(𝓑⁻¹)𝓑𝓐 (∂₃Ȳ⊗∂₃Ȳ − Ȳ_t⊗Ȳ_t)))
/// for a candidate pressure (flat background only).
pub fn pressure_elliptic_residual(state: &LagrangianState, p: &SpectralField) -> Result<f64> {
    let ctx = RhsContext::build(state)?;
    let grid = &ctx.grid;
    let gp = p.gradient().to_physical();
    let aat_gp = {
        let mut m = mat_vec_field(&ctx.pmat, &gp, false);
        for i in 0..3 {
            m[i] = &m[i] + &gp[i];
        }
        m
    };
    let lhs = spectral_vector(grid, aat_gp).divergence();
    let d3y = state.y.derivative(3, 1).to_physical();
    let vp = state.v.to_physical();
    let mut rows = Vec::new();
    for i in 0..3 {
        let mut row = Vec::new();
        for j in 0..3 {
            let mut acc = Array3::<f64>::zeros(d3y[0].dim());
            for l in 0..3 {
                acc = acc
                    + &ctx.det_ba[3 * i + l] * &(&(&d3y[l] * &d3y[j]) - &(&vp[l] * &vp[j]));
            }
            row.push(acc);
        }
        rows.push(spectral_vector(grid, row).divergence().to_physical().swap_remove(0));
    }
    let w = mat_vec_field(&ctx.ba, &rows, false);
    let rhs = spectral_vector(grid, w).divergence();
    let mut resid = lhs;
    resid.sub_assign(&rhs);
    Ok(resid.l2_norm())
}

/// The full nonlinear source of the damped-wave system, together with
/// the converged pressure, the Picard count, and sup |∇Y|.
pub fn rhs_lagrangian(state: &LagrangianState) -> Result<(SpectralField, SpectralField, usize, f64)> {
    let ctx = RhsContext::build(state)?;
    let (p, iters) = ctx.pressure(state, &state.pressure)?;
    let f = ctx.source(state, &p)?;
    Ok((f, p, iters, ctx.sup))
}

/// Residual of the derived divergence constraint ∇_Y·b̄, reported as a
/// sup norm; monitored, never corrected.
pub fn lagrangian_divergence_residual(state: &LagrangianState) -> Result<f64> {
    let ctx = RhsContext::build(state)?;
    let grid = &ctx.grid;
    // b̄ = b₀(y) + ∂₃(Ỹ + Ȳ); b₀ = e₃ without a background.
    let mut bbar = state.y.derivative(3, 1).to_physical();
    match &ctx.bg {
        None => bbar[2].mapv_inplace(|x| x + 1.0),
        Some(bg) => {
            let d3yt = bg.ytilde.derivative(3, 1).to_physical();
            for i in 0..3 {
                bbar[i] = &bbar[i] + &d3yt[i] + &bg.b0_of_y[i];
            }
        }
    }
    // ∇_Y·b̄ = Σ_ij (𝓑𝓐)_{ji} ∂_j b̄_i.
    let bb = spectral_vector(grid, bbar);
    let gb = grad_phys(&bb);
    let bas: Vec<&[f64]> = ctx.ba.iter().map(flat).collect();
    let gbs: Vec<&[f64]> = gb.iter().map(flat).collect();
    let sup = (0..bas[0].len())
        .into_par_iter()
        .map(|p| {
            (0..9)
                .map(|e| {
                    let (i, j) = (e / 3, e % 3);
                    bas[3 * j + i][p] * gbs[3 * i + j][p]
                })
                .sum::<f64>()
                .abs()
        })
        .reduce(|| 0.0, f64::max);
    Ok(sup)
}

/// IMEX stepper for the damped-wave system; implicit trapezoid on ΔV,
/// explicit on ∂₃²Y and the nonlinear source.
pub struct LagrangianStepper {
    pub state: LagrangianState,
    prev: Option<(SpectralField, SpectralField)>,
    /// Additional explicit forcing (used by manufactured-solution
    /// verification).
    pub forcing: Option<Box<dyn Fn(f64) -> SpectralField + Send + Sync>>,
    /// Picard iterations of the most recent pressure solve.
    pub last_pressure_iters: usize,
}

impl LagrangianStepper {
    pub fn new(state: LagrangianState) -> Self {
        LagrangianStepper {
            state,
            prev: None,
            forcing: None,
            last_pressure_iters: 0,
        }
    }

    /// ∂₃²Y + f (+ external forcing) for the given state.
    fn explicit_g(&mut self, state: &LagrangianState) -> Result<(SpectralField, SpectralField, f64)> {
        let (f, p, iters, sup) = rhs_lagrangian(state)?;
        self.last_pressure_iters = iters;
        let mut g = state.y.derivative(3, 2);
        g.add_assign(&f);
        if let Some(fc) = &self.forcing {
            g.add_assign(&fc(state.t));
        }
        Ok((g, p, sup))
    }

    pub fn step(&mut self, dt: f64) -> Result<()> {
        let grid = bgrid(&self.state.v);
        cfl_check(&grid, sup_vector(&self.state.v.to_physical()), dt)?;
        let half = dt / 2.0;
        let (g_n, p_n, sup) = self.explicit_g(&self.state.clone())?;
        let v_base = {
            let mut r = self.state.v.clone();
            r.axpy(half, &self.state.v.laplacian());
            r
        };
        let (y1, v1, p1) = match self.prev.take() {
            None => {
                let mut y_pred = self.state.y.clone();
                y_pred.axpy(dt, &self.state.v);
                let mut r = v_base.clone();
                r.axpy(dt, &g_n);
                let v_pred = solve_implicit(&r, half);
                let pred = LagrangianState {
                    y: y_pred,
                    v: v_pred.clone(),
                    pressure: p_n.clone(),
                    background: self.state.background.clone(),
                    t: self.state.t + dt,
                    grad_sup: sup,
                };
                let (g_p, p_p, _) = self.explicit_g(&pred)?;
                let mut y1 = self.state.y.clone();
                y1.axpy(half, &self.state.v);
                y1.axpy(half, &v_pred);
                let mut r = v_base;
                r.axpy(half, &g_n);
                r.axpy(half, &g_p);
                (y1, solve_implicit(&r, half), p_p)
            }
            Some((g_prev, v_prev)) => {
                let mut y1 = self.state.y.clone();
                y1.axpy(1.5 * dt, &self.state.v);
                y1.axpy(-0.5 * dt, &v_prev);
                let mut r = v_base;
                r.axpy(1.5 * dt, &g_n);
                r.axpy(-0.5 * dt, &g_prev);
                (y1, solve_implicit(&r, half), p_n.clone())
            }
        };
        self.prev = Some((g_n, self.state.v.clone()));
        self.state = LagrangianState {
            y: y1,
            v: v1,
            pressure: p1,
            background: self.state.background.clone(),
            t: self.state.t + dt,
            grad_sup: sup,
        };
        Ok(())
    }
}

// ==========================================================================
// Trajectory map.
// ==========================================================================

/// High-order interpolation tables: spectrally upsampled physical grids
/// evaluated with separable 8-point Lagrange interpolation.
pub struct FieldSampler {
    dims: [usize; 3],
    period: [f64; 3],
    tables: Vec<Array3<f64>>,
}

fn upsample_physical(f: &SpectralField, factor: usize) -> Result<Vec<Array3<f64>>> {
    let grid = bgrid(f);
    if factor == 1 {
        return Ok(f.to_physical());
    }
    let dims = [
        grid.dims[0] * factor,
        grid.dims[1] * factor,
        grid.dims[2] * factor,
    ];
    let big = Grid::new(dims, grid.period)?;
    let mut comps = Vec::with_capacity(f.ncomp());
    for c in 0..f.ncomp() {
        let src = f.coeffs(c);
        let mut dst = Array3::zeros((dims[0], dims[1], dims[2]));
        let map_axis = |m: usize, n: usize, nbig: usize| -> Option<usize> {
            let k = if m <= n / 2 { m as i64 } else { m as i64 - n as i64 };
            if k.unsigned_abs() as usize >= n / 2 {
                None // drop the Nyquist plane
            } else if k >= 0 {
                Some(k as usize)
            } else {
                Some((nbig as i64 + k) as usize)
            }
        };
        for ((i, j, k), &v) in src.indexed_iter() {
            if let (Some(a), Some(b), Some(cc)) = (
                map_axis(i, grid.dims[0], dims[0]),
                map_axis(j, grid.dims[1], dims[1]),
                map_axis(k, grid.dims[2], dims[2]),
            ) {
                dst[[a, b, cc]] = v;
            }
        }
        comps.push(dst);
    }
    Ok(SpectralField::from_coefficients(big, comps).to_physical())
}

fn lagrange8_weights(t: f64) -> [f64; 8] {
    // Nodes at -3..=4 in units of the table spacing; t in [0, 1).
    let mut w = [0.0f64; 8];
    for (i, wi) in w.iter_mut().enumerate() {
        let pi = i as f64 - 3.0;
        let mut num = 1.0;
        let mut den = 1.0;
        for j in 0..8 {
            if j == i {
                continue;
            }
            let pj = j as f64 - 3.0;
            num *= t - pj;
            den *= pi - pj;
        }
        *wi = num / den;
    }
    w
}

impl FieldSampler {
    /// Build from a list of fields (components are flattened in order).
    pub fn new(fields: &[&SpectralField], factor: usize) -> Result<Self> {
        let grid = bgrid(fields[0]);
        let mut tables = Vec::new();
        for f in fields {
            tables.extend(upsample_physical(f, factor)?);
        }
        let dims = [
            grid.dims[0] * factor,
            grid.dims[1] * factor,
            grid.dims[2] * factor,
        ];
        Ok(FieldSampler {
            dims,
            period: grid.period,
            tables,
        })
    }

    pub fn nscalars(&self) -> usize {
        self.tables.len()
    }

    /// Evaluate all scalars at x (periodic wrap).
    pub fn eval(&self, x: [f64; 3], out: &mut [f64]) {
        let mut idx = [[0usize; 8]; 3];
        let mut w = [[0.0f64; 8]; 3];
        for a in 0..3 {
            let h = self.period[a] / self.dims[a] as f64;
            let u = (x[a] / h).rem_euclid(self.dims[a] as f64);
            let base = u.floor();
            w[a] = lagrange8_weights(u - base);
            let b = base as i64;
            for o in 0..8 {
                idx[a][o] =
                    (b + o as i64 - 3).rem_euclid(self.dims[a] as i64) as usize;
            }
        }
        for (s, table) in self.tables.iter().enumerate() {
            let mut acc = 0.0;
            for (ii, &wi) in w[0].iter().enumerate() {
                if wi == 0.0 {
                    continue;
                }
                for (jj, &wj) in w[1].iter().enumerate() {
                    let wij = wi * wj;
                    let mut inner = 0.0;
                    for (kk, &wk) in w[2].iter().enumerate() {
                        inner += wk * table[[idx[0][ii], idx[1][jj], idx[2][kk]]];
                    }
                    acc += wij * inner;
                }
            }
            out[s] = acc;
        }
    }
}

/// Sampled flow map on a seed grid: positions and the Jacobian advanced
/// by the variational equation.
pub struct TrajectoryMap {
    pub grid: Arc<Grid>,
    /// Final particle positions (3 arrays, unwrapped coordinates).
    pub x: Vec<Array3<f64>>,
    /// ∂X/∂y (9 arrays, entry (i, j) at 3i + j).
    pub jac: Vec<Array3<f64>>,
}

impl TrajectoryMap {
    pub fn det_bounds(&self) -> (f64, f64) {
        let j: Vec<&[f64]> = self.jac.iter().map(flat).collect();
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for p in 0..j[0].len() {
            let mut m = [[0.0; 3]; 3];
            for a in 0..3 {
                for b in 0..3 {
                    m[a][b] = j[3 * a + b][p];
                }
            }
            let d = mat_det(&m);
            lo = lo.min(d);
            hi = hi.max(d);
        }
        (lo, hi)
    }
}

/// Sampler of u and ∇u for one snapshot.
fn velocity_sampler(u: &SpectralField, factor: usize) -> Result<FieldSampler> {
    let g0 = u.component(0).gradient();
    let g1 = u.component(1).gradient();
    let g2 = u.component(2).gradient();
    FieldSampler::new(&[u, &g0, &g1, &g2], factor)
}

/// Streaming classical RK4 integration of dX/dt = u(t, X) with the
/// Jacobian advanced by dJ/dt = ∇u(t, X) J.  Each `advance` consumes two
/// solver intervals (the midpoint snapshot serves the interior stages),
/// holding at most one sampler between calls — memory stays bounded for
/// arbitrarily long runs.
pub struct TrajectoryIntegrator {
    grid: Arc<Grid>,
    /// State per particle: position (3) + Jacobian (9).
    states: Vec<[f64; 12]>,
    factor: usize,
}

fn sampler_deriv(sampler: &FieldSampler, s: &[f64; 12], out: &mut [f64; 12]) {
    let mut vals = [0.0f64; 12];
    sampler.eval([s[0], s[1], s[2]], &mut vals);
    out[..3].copy_from_slice(&vals[..3]);
    // dJ_ij = Σ_k (∇u)_ik J_kj.
    for i in 0..3 {
        for j in 0..3 {
            out[3 + 3 * i + j] = (0..3)
                .map(|k| vals[3 + 3 * i + k] * s[3 + 3 * k + j])
                .sum();
        }
    }
}

impl TrajectoryIntegrator {
    pub fn new(particle_grid: Arc<Grid>, factor: usize) -> Self {
        let dim = (
            particle_grid.dims[0],
            particle_grid.dims[1],
            particle_grid.dims[2],
        );
        let states = (0..dim.0 * dim.1 * dim.2)
            .map(|p| {
                let idx = [p / (dim.1 * dim.2), (p / dim.2) % dim.1, p % dim.2];
                let y = particle_grid.point(idx);
                let mut s = [0.0; 12];
                s[..3].copy_from_slice(&y);
                s[3] = 1.0;
                s[7] = 1.0;
                s[11] = 1.0;
                s
            })
            .collect();
        TrajectoryIntegrator {
            grid: particle_grid,
            states,
            factor,
        }
    }

    /// One RK4 step of size 2·dt over snapshots at t, t+dt, t+2dt.
    pub fn advance(
        &mut self,
        u0: &SpectralField,
        u_mid: &SpectralField,
        u1: &SpectralField,
        dt: f64,
    ) -> Result<()> {
        let h = 2.0 * dt;
        let sampler_a = velocity_sampler(u0, self.factor)?;
        let sampler_b = velocity_sampler(u_mid, self.factor)?;
        let sampler_c = velocity_sampler(u1, self.factor)?;
        self.states.par_iter_mut().for_each(|s| {
            let mut k1 = [0.0; 12];
            let mut k2 = [0.0; 12];
            let mut k3 = [0.0; 12];
            let mut k4 = [0.0; 12];
            sampler_deriv(&sampler_a, s, &mut k1);
            let mut tmp = *s;
            for a in 0..12 {
                tmp[a] = s[a] + 0.5 * h * k1[a];
            }
            sampler_deriv(&sampler_b, &tmp, &mut k2);
            for a in 0..12 {
                tmp[a] = s[a] + 0.5 * h * k2[a];
            }
            sampler_deriv(&sampler_b, &tmp, &mut k3);
            for a in 0..12 {
                tmp[a] = s[a] + h * k3[a];
            }
            sampler_deriv(&sampler_c, &tmp, &mut k4);
            for a in 0..12 {
                s[a] += h / 6.0 * (k1[a] + 2.0 * k2[a] + 2.0 * k3[a] + k4[a]);
            }
        });
        Ok(())
    }

    pub fn finish(self) -> TrajectoryMap {
        let dim = (self.grid.dims[0], self.grid.dims[1], self.grid.dims[2]);
        let npts = dim.0 * dim.1 * dim.2;
        let mut x = vec![vec![0.0; npts]; 3];
        let mut jac = vec![vec![0.0; npts]; 9];
        for (p, s) in self.states.iter().enumerate() {
            for a in 0..3 {
                x[a][p] = s[a];
            }
            for e in 0..9 {
                jac[e][p] = s[3 + e];
            }
        }
        TrajectoryMap {
            grid: self.grid,
            x: x
                .into_iter()
                .map(|v| Array3::from_shape_vec(dim, v).unwrap())
                .collect(),
            jac: jac
                .into_iter()
                .map(|v| Array3::from_shape_vec(dim, v).unwrap())
                .collect(),
        }
    }
}

/// Flow map from a stored velocity history (odd length ≥ 3); thin
/// wrapper over `TrajectoryIntegrator` for short runs.
pub fn trajectory_map(
    u_history: &[SpectralField],
    dt: f64,
    particle_grid: Arc<Grid>,
    factor: usize,
) -> Result<TrajectoryMap> {
    if u_history.len() < 3 || u_history.len() % 2 == 0 {
        return Err(Error::InvalidParameter(
            "trajectory needs an odd number of velocity snapshots (>= 3)".into(),
        ));
    }
    let mut integ = TrajectoryIntegrator::new(particle_grid, factor);
    let mut step_idx = 0;
    while step_idx + 2 < u_history.len() {
        integ.advance(
            &u_history[step_idx],
            &u_history[step_idx + 1],
            &u_history[step_idx + 2],
            dt,
        )?;
        step_idx += 2;
    }
    Ok(integ.finish())
}

/// Residuals of the transport identity b(t, X) = ∂_{b₀}X and the
/// stretched second-derivative identity (b·∇b)(t, X) = ∂²_{b₀}X.
pub struct CauchyReport {
    pub transport_residual: f64,
    pub stretching_residual: f64,
}

pub fn cauchy_invariant_check(
    b0: &SpectralField,
    b_final: &SpectralField,
    traj: &TrajectoryMap,
    factor: usize,
) -> Result<CauchyReport> {
    let pgrid = traj.grid.clone();
    let b0p = b0.to_physical();
    // ∂_{b₀}X_i = Σ_j b₀^j J_ij on the seed grid.
    let push: Vec<Array3<f64>> = (0..3)
        .map(|i| {
            &b0p[0] * &traj.jac[3 * i] + &b0p[1] * &traj.jac[3 * i + 1] + &b0p[2] * &traj.jac[3 * i + 2]
        })
        .collect();
    // b and b·∇b at the particle positions.
    let bgb = {
        let bp = b_final.to_physical();
        let adv = advect_phys(&bp, b_final);
        spectral_vector(&bgrid(b_final), adv)
    };
    let sampler = FieldSampler::new(&[b_final, &bgb], factor)?;
    let xs: Vec<&[f64]> = traj.x.iter().map(flat).collect();
    let pf: Vec<&[f64]> = push.iter().map(flat).collect();
    // ∂_{b₀} of the pushed field, spectrally on the seed grid.
    let push_field = spectral_vector(&pgrid, push.clone());
    let gp = grad_phys(&push_field);
    let second: Vec<Array3<f64>> = (0..3)
        .map(|i| {
            &b0p[0] * &gp[3 * i] + &b0p[1] * &gp[3 * i + 1] + &b0p[2] * &gp[3 * i + 2]
        })
        .collect();
    let sf: Vec<&[f64]> = second.iter().map(flat).collect();
    let n = xs[0].len();
    let (transport, stretching) = (0..n)
        .into_par_iter()
        .map(|p| {
            let mut vals = [0.0f64; 6];
            sampler.eval([xs[0][p], xs[1][p], xs[2][p]], &mut vals);
            let tr = (0..3)
                .map(|i| (vals[i] - pf[i][p]).abs())
                .fold(0.0f64, f64::max);
            let st = (0..3)
                .map(|i| (vals[3 + i] - sf[i][p]).abs())
                .fold(0.0f64, f64::max);
            (tr, st)
        })
        .reduce(|| (0.0, 0.0), |a, b| (a.0.max(b.0), a.1.max(b.1)));
    Ok(CauchyReport {
        transport_residual: transport,
        stretching_residual: stretching,
    })
}

// ==========================================================================
// Cross-formulation consistency.
// ==========================================================================

pub struct CrossCheckReport {
    /// sup |u(t, X) − Y_t|.
    pub velocity_sup: f64,
    /// sup |b(t, X) − e₃ − ∂₃Y|.
    pub magnetic_sup: f64,
    pub det_min: f64,
    pub det_max: f64,
}

/// Run both solvers from matched data (b₀ = e₃, Y₀ = 0, Y₁ = u₀) for
/// `steps` steps of size dt (steps must be even), then compare through
/// the trajectory map on `particle_dims` seeds.
pub fn cross_check_euler_lagrange(
    u0: &SpectralField,
    dt: f64,
    steps: usize,
    particle_dims: [usize; 3],
    factor: usize,
) -> Result<CrossCheckReport> {
    if steps % 2 != 0 {
        return Err(Error::InvalidParameter("steps must be even".into()));
    }
    let grid = bgrid(u0);
    for a in 0..3 {
        if grid.dims[a] % particle_dims[a] != 0 {
            return Err(Error::InvalidParameter(
                "particle dims must divide the solver grid".into(),
            ));
        }
    }
    let u0 = u0.leray_project();
    let e3 = SpectralField::from_fn_vector(grid.clone(), |_| [0.0, 0.0, 1.0]);
    let pgrid = Grid::new(particle_dims, grid.period)?;
    // Advance the Eulerian run and the particles together over a rolling
    // three-snapshot window; storing the full history would not fit in
    // memory at production resolutions.
    let mut euler = EulerStepper::new(EulerianState::new(e3, u0.clone(), 0.0)?);
    let mut integ = TrajectoryIntegrator::new(pgrid.clone(), factor);
    let mut prev = euler.state.u.clone();
    for _ in 0..steps / 2 {
        euler.step(dt)?;
        let mid = euler.state.u.clone();
        euler.step(dt)?;
        integ.advance(&prev, &mid, &euler.state.u, dt)?;
        prev = euler.state.u.clone();
    }
    let mut lagr = LagrangianStepper::new(LagrangianState::new(
        SpectralField::zeros(grid.clone(), 3),
        u0,
        None,
        0.0,
    ));
    for _ in 0..steps {
        lagr.step(dt)?;
    }
    let traj = integ.finish();
    let (det_min, det_max) = traj.det_bounds();
    let sampler = FieldSampler::new(&[&euler.state.u, &euler.state.b], factor)?;
    // Y_t and e₃ + ∂₃Y at the seed points by strided subsampling.
    let stride = [
        grid.dims[0] / particle_dims[0],
        grid.dims[1] / particle_dims[1],
        grid.dims[2] / particle_dims[2],
    ];
    let vp = lagr.state.v.to_physical();
    let d3y = lagr.state.y.derivative(3, 1).to_physical();
    let xs: Vec<&[f64]> = traj.x.iter().map(flat).collect();
    let mut velocity_sup = 0.0f64;
    let mut magnetic_sup = 0.0f64;
    let mut vals = [0.0f64; 6];
    for i in 0..particle_dims[0] {
        for j in 0..particle_dims[1] {
            for k in 0..particle_dims[2] {
                let p = (i * particle_dims[1] + j) * particle_dims[2] + k;
                sampler.eval([xs[0][p], xs[1][p], xs[2][p]], &mut vals);
                let src = [i * stride[0], j * stride[1], k * stride[2]];
                for c in 0..3 {
                    velocity_sup = velocity_sup.max((vals[c] - vp[c][src]).abs());
                    let bexp = d3y[c][src] + if c == 2 { 1.0 } else { 0.0 };
                    magnetic_sup = magnetic_sup.max((vals[3 + c] - bexp).abs());
                }
            }
        }
    }
    Ok(CrossCheckReport {
        velocity_sup,
        magnetic_sup,
        det_min,
        det_max,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field_straightening::{
        assemble_chart_unchecked, ChartGrid, InitialMagneticField, preset_by_name,
    };
    use crate::linear_theory::mode_propagator;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn grid(n: usize) -> Arc<Grid> {
        Grid::cubic(n, 2.0 * std::f64::consts::PI).unwrap()
    }

    /// A smooth, divergence-free, zero-mean velocity field.
    fn smooth_divfree(g: &Arc<Grid>, amp: f64, seed: u64) -> SpectralField {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let ph: Vec<f64> = (0..6).map(|_| rng.gen_range(0.0..6.28)).collect();
        SpectralField::from_fn_vector(g.clone(), move |x| {
            [
                amp * ((x[1] + ph[0]).sin() + (2.0 * x[2] + ph[1]).cos()),
                amp * ((x[2] + ph[2]).sin() + (2.0 * x[0] + ph[3]).cos()),
                amp * ((x[0] + ph[4]).sin() + (2.0 * x[1] + ph[5]).cos()),
            ]
        })
        .leray_project()
    }

    #[test]
    fn pressure_euler_vanishes_on_equilibrium_and_shear() {
        let g = grid(16);
        let e3 = SpectralField::from_fn_vector(g.clone(), |_| [0.0, 0.0, 1.0]);
        let zero = SpectralField::zeros(g.clone(), 3);
        let p = pressure_euler(&e3, &zero).unwrap();
        assert!(p.l2_norm() < 1e-13);
        let shear = SpectralField::from_fn_vector(g.clone(), |x| [x[1].sin(), 0.0, 0.0]);
        let p = pressure_euler(&e3, &shear).unwrap();
        assert!(p.l2_norm() < 1e-12, "shear pressure {:.2e}", p.l2_norm());
    }

    #[test]
    fn pressure_euler_solves_the_poisson_equation() {
        let g = grid(24);
        let e3 = SpectralField::from_fn_vector(g.clone(), |_| [0.0, 0.0, 1.0]);
        let mut b = smooth_divfree(&g, 0.05, 3);
        b.add_assign(&e3);
        let u = smooth_divfree(&g, 0.05, 4);
        let p = pressure_euler(&b, &u).unwrap();
        // Re-apply the Laplacian and compare against the assembled
        // source.
        let bp = b.to_physical();
        let up = u.to_physical();
        let mut src = SpectralField::zeros(g.clone(), 1);
        for i in 0..3 {
            for j in 0..3 {
                let t = &bp[i] * &bp[j] - &up[i] * &up[j];
                let t = SpectralField::from_physical(g.clone(), vec![t]).dealias();
                src.add_assign(&t.derivative(i + 1, 1).derivative(j + 1, 1));
            }
        }
        let mut resid = p.laplacian();
        // Drop the mean of the source (the inverse Laplacian cannot see
        // it).
        let src = {
            let mut s = src.clone();
            let mean = s.coeffs(0)[[0, 0, 0]];
            s.coeffs_mut(0)[[0, 0, 0]] -= mean;
            s
        };
        resid.sub_assign(&src);
        assert!(resid.l2_norm() < 1e-10, "residual {:.2e}", resid.l2_norm());
    }

    #[test]
    fn euler_zero_data_stays_zero() {
        let g = grid(8);
        let e3 = SpectralField::from_fn_vector(g.clone(), |_| [0.0, 0.0, 1.0]);
        let zero = SpectralField::zeros(g.clone(), 3);
        let mut s = EulerStepper::new(EulerianState::new(e3, zero, 0.0).unwrap());
        for _ in 0..5 {
            s.step(0.01).unwrap();
        }
        assert!(s.state.u.l2_norm() < 1e-14);
        let mut bdev = s.state.b.clone();
        bdev.sub_assign(&SpectralField::from_fn_vector(bgrid(&bdev), |_| [0.0, 0.0, 1.0]));
        assert!(bdev.l2_norm() < 1e-14);
    }

    #[test]
    fn euler_shear_mode_follows_the_heat_kernel() {
        // With b = e₃ and a single x₃-independent shear mode the
        // coupling vanishes and u is a pure Stokes mode.
        let g = grid(16);
        let e3 = SpectralField::from_fn_vector(g.clone(), |_| [0.0, 0.0, 1.0]);
        let u0 = SpectralField::from_fn_vector(g.clone(), |x| [(2.0 * x[1]).sin(), 0.0, 0.0]);
        let dt = 5e-4;
        let mut s = EulerStepper::new(EulerianState::new(e3, u0.clone(), 0.0).unwrap());
        for _ in 0..2000 {
            s.step(dt).unwrap();
        }
        let mut expect = u0.scale((-4.0f64).exp());
        expect.sub_assign(&s.state.u);
        assert!(expect.l2_norm() < 1e-6, "heat-kernel error {:.2e}", expect.l2_norm());
    }

    #[test]
    fn euler_matches_the_linear_mode_propagator() {
        // Single transverse mode at amplitude 1e-4: the quadratic terms
        // vanish identically for one wavevector, so the solver must
        // track the damped-wave propagator at its own order.
        let g = grid(16);
        let amp = 1e-4;
        // xi = (0, 1, 2): distinct real decay rates, so the velocity
        // does not cross zero on the comparison horizon.
        let xi = [0.0, 1.0, 2.0];
        let u0 = SpectralField::from_fn_vector(g.clone(), move |x| {
            [amp * (x[1] + 2.0 * x[2]).sin(), 0.0, 0.0]
        });
        let e3 = SpectralField::from_fn_vector(g.clone(), |_| [0.0, 0.0, 1.0]);
        let dt = 2e-4;
        let mut s = EulerStepper::new(EulerianState::new(e3, u0.clone(), 0.0).unwrap());
        for _ in 0..5000 {
            s.step(dt).unwrap();
        }
        // u corresponds to y'(t) with y(0) = 0, y'(0) = u₀ per mode.
        let (_, vt) = mode_propagator(xi, Complex64::new(0.0, 0.0), Complex64::new(1.0, 0.0), 1.0);
        // Compare only the initial wavevector's coefficient.
        let c_num = s.state.u.coeffs(0)[[0, 1, 2]];
        let c_exp = u0.coeffs(0)[[0, 1, 2]] * vt;
        let rel = (c_num - c_exp).norm() / c_exp.norm();
        assert!(rel < 1e-6, "relative propagator error {rel:.2e}");
    }

    #[test]
    fn euler_divergence_stays_small() {
        let g = grid(16);
        let e3 = SpectralField::from_fn_vector(g.clone(), |_| [0.0, 0.0, 1.0]);
        let mut b0 = smooth_divfree(&g, 1e-2, 11);
        b0.add_assign(&e3);
        let u0 = smooth_divfree(&g, 1e-2, 12);
        let mut s = EulerStepper::new(EulerianState::new(b0, u0, 0.0).unwrap());
        for _ in 0..50 {
            s.step(5e-3).unwrap();
            assert!(s.state.divergence_residual() < 1e-10);
        }
    }

    #[test]
    fn euler_cfl_violation_is_rejected() {
        let g = grid(16);
        let e3 = SpectralField::from_fn_vector(g.clone(), |_| [0.0, 0.0, 1.0]);
        let u0 = SpectralField::from_fn_vector(g.clone(), |x| [x[1].sin(), 0.0, 0.0]);
        let mut s = EulerStepper::new(EulerianState::new(e3, u0, 0.0).unwrap());
        let err = s.step(1.0).unwrap_err();
        assert!(format!("{err}").contains("CFL"));
    }

    #[test]
    fn blow_up_guard_reports_the_integral() {
        let g = grid(16);
        let e3 = SpectralField::from_fn_vector(g.clone(), |_| [0.0, 0.0, 1.0]);
        let u0 = SpectralField::from_fn_vector(g.clone(), |x| [0.1 * x[1].sin(), 0.0, 0.0]);
        let mut s = EulerStepper::new(EulerianState::new(e3, u0, 0.0).unwrap());
        s.guard = Some(1e-4);
        let mut tripped = false;
        for _ in 0..10 {
            match s.step(5e-3) {
                Ok(()) => {}
                Err(e) => {
                    let msg = format!("{e}");
                    assert!(msg.contains("blow-up guard"), "{msg}");
                    tripped = true;
                    break;
                }
            }
        }
        assert!(tripped);
    }

    #[test]
    fn rhs_lagrangian_trivial_cases() {
        let g = grid(16);
        // Y = V = 0 → f = 0, pressure = 0.
        let state = LagrangianState::new(
            SpectralField::zeros(g.clone(), 3),
            SpectralField::zeros(g.clone(), 3),
            None,
            0.0,
        );
        let (f, p, iters, sup) = rhs_lagrangian(&state).unwrap();
        assert!(f.l2_norm() < 1e-14 && p.l2_norm() < 1e-14);
        assert!(iters <= 2 && sup < 1e-14);
        // Y = 0, V ≠ 0 → 𝓐 = Id and f = −∇p̄ with the single-pass
        // pressure −Δ⁻¹ div div (V⊗V).
        let v = smooth_divfree(&g, 0.1, 21);
        let state = LagrangianState::new(SpectralField::zeros(g.clone(), 3), v.clone(), None, 0.0);
        let (f, p, iters, _) = rhs_lagrangian(&state).unwrap();
        assert!(iters <= 2, "expected a one-pass fixed point, got {iters}");
        let vp = v.to_physical();
        let mut src = SpectralField::zeros(g.clone(), 1);
        for i in 0..3 {
            for j in 0..3 {
                let t = &vp[i] * &vp[j];
                let t = SpectralField::from_physical(g.clone(), vec![t]).dealias();
                src.add_assign(&t.derivative(i + 1, 1).derivative(j + 1, 1));
            }
        }
        let mut expect_p = src.inverse_laplacian().scale(-1.0);
        expect_p.sub_assign(&p);
        assert!(expect_p.l2_norm() < 1e-11, "pressure {:.2e}", expect_p.l2_norm());
        let mut expect_f = p.gradient().scale(-1.0);
        expect_f.sub_assign(&f);
        assert!(expect_f.l2_norm() < 1e-11, "f {:.2e}", expect_f.l2_norm());
    }

    #[test]
    fn rhs_lagrangian_matches_finite_difference_assembly() {
        // Band-limited Y, V: the spectral derivatives are exact, so the
        // gap to a 4th-order finite-difference assembly must shrink at
        // 4th order under grid refinement.
        let yf = |x: [f64; 3]| {
            [
                0.05 * (x[0] + x[2]).sin(),
                0.05 * (x[1] - x[0]).cos(),
                0.05 * (x[2] + 2.0 * x[1]).sin(),
            ]
        };
        let vf = |x: [f64; 3]| {
            [
                0.05 * (x[1] + x[2]).cos(),
                0.05 * (x[0] + x[2]).sin(),
                0.05 * (x[0] - x[1]).cos(),
            ]
        };
        let mut gaps = Vec::new();
        for n in [24usize, 48] {
            let g = grid(n);
            let y = SpectralField::from_fn_vector(g.clone(), yf);
            let v = SpectralField::from_fn_vector(g.clone(), vf);
            let state = LagrangianState::new(y.clone(), v.clone(), None, 0.0);
            let (f, p, _, _) = rhs_lagrangian(&state).unwrap();
            // Finite-difference assembly of div((𝓐𝓐ᵗ−Id)∇V) − 𝓐ᵗ∇p
            // using 4th-order stencils on the same pointwise matrices.
            let ctx = RhsContext::build(&state).unwrap();
            let gv = grad_phys(&v);
            let h = g.period[0] / n as f64;
            let fd = |arr: &Array3<f64>, axis: usize| -> Array3<f64> {
                let dims = arr.dim();
                let mut out = Array3::zeros(dims);
                let nn = [dims.0, dims.1, dims.2];
                for i in 0..dims.0 {
                    for j in 0..dims.1 {
                        for k in 0..dims.2 {
                            let idx = [i, j, k];
                            let sh = |o: i64| {
                                let mut s = idx;
                                s[axis] = ((idx[axis] as i64 + o)
                                    .rem_euclid(nn[axis] as i64))
                                    as usize;
                                arr[[s[0], s[1], s[2]]]
                            };
                            out[[i, j, k]] = (-sh(2) + 8.0 * sh(1) - 8.0 * sh(-1) + sh(-2))
                                / (12.0 * h);
                        }
                    }
                }
                out
            };
            let gp_phys = p.gradient().to_physical();
            let mut sup_gap = 0.0f64;
            let f_phys = f.to_physical();
            for i in 0..3 {
                let gi = [gv[3 * i].clone(), gv[3 * i + 1].clone(), gv[3 * i + 2].clone()];
                let q = mat_vec_field(&ctx.fmat, &gi, false);
                let div_fd = &fd(&q[0], 0) + &fd(&q[1], 1) + &fd(&q[2], 2);
                let lap_fd = {
                    let vi = v.component(i).to_physical().swap_remove(0);
                    let mut acc = Array3::<f64>::zeros(vi.dim());
                    for ax in 0..3 {
                        acc = acc + fd(&fd(&vi, ax), ax);
                    }
                    acc
                };
                let pterm = mat_vec_field(&ctx.ba, &gp_phys, true);
                let fd_i = &div_fd - &lap_fd - &pterm[i];
                let gap = (&fd_i - &f_phys[i]).iter().fold(0.0f64, |m, x| m.max(x.abs()));
                sup_gap = sup_gap.max(gap);
            }
            gaps.push(sup_gap);
        }
        let ratio = gaps[0] / gaps[1];
        assert!(
            (11.0..=22.0).contains(&ratio),
            "4th-order refinement ratio {ratio:.1} (gaps {gaps:?})"
        );
    }

    #[test]
    fn pressure_fixed_point_contracts_and_solves_the_elliptic_equation() {
        let g = grid(24);
        // Scale a random displacement to sup |∇Y| = 0.1.
        let mut y = smooth_divfree(&g, 1.0, 31);
        let gy = grad_phys(&y);
        let s: Vec<&[f64]> = gy.iter().map(flat).collect();
        let sup = (0..s[0].len())
            .map(|p| s.iter().map(|c| c[p] * c[p]).sum::<f64>().sqrt())
            .fold(0.0f64, f64::max);
        y = y.scale(0.1 / sup);
        let v = smooth_divfree(&g, 0.05, 32);
        let state = LagrangianState::new(y, v, None, 0.0);
        let (p, iters) = pressure_lagrangian(&state).unwrap();
        assert!(iters <= 10, "needed {iters} Picard iterations");
        let resid = pressure_elliptic_residual(&state, &p).unwrap();
        assert!(resid < 1e-9, "elliptic residual {resid:.2e}");
    }

    #[test]
    fn lagrangian_zero_data_stays_zero() {
        let g = grid(8);
        let mut s = LagrangianStepper::new(LagrangianState::new(
            SpectralField::zeros(g.clone(), 3),
            SpectralField::zeros(g.clone(), 3),
            None,
            0.0,
        ));
        for _ in 0..5 {
            s.step(0.01).unwrap();
        }
        assert!(s.state.y.l2_norm() < 1e-14 && s.state.v.l2_norm() < 1e-14);
    }

    #[test]
    fn lagrangian_matches_the_linear_mode_propagator() {
        let g = grid(16);
        let amp = 1e-4;
        // Same nondegenerate mode as the Eulerian propagator test.
        let xi = [0.0, 1.0, 2.0];
        let v0 = SpectralField::from_fn_vector(g.clone(), move |x| {
            [amp * (x[1] + 2.0 * x[2]).sin(), 0.0, 0.0]
        });
        let dt = 2e-4;
        let mut s = LagrangianStepper::new(LagrangianState::new(
            SpectralField::zeros(g.clone(), 3),
            v0.clone(),
            None,
            0.0,
        ));
        for _ in 0..5000 {
            s.step(dt).unwrap();
        }
        let (yt, vt) = mode_propagator(xi, Complex64::new(0.0, 0.0), Complex64::new(1.0, 0.0), 1.0);
        let cv = s.state.v.coeffs(0)[[0, 1, 2]];
        let cy = s.state.y.coeffs(0)[[0, 1, 2]];
        let v_exp = v0.coeffs(0)[[0, 1, 2]] * vt;
        let y_exp = v0.coeffs(0)[[0, 1, 2]] * yt;
        assert!((cv - v_exp).norm() / v_exp.norm() < 1e-6);
        assert!((cy - y_exp).norm() / y_exp.norm() < 1e-6);
    }

    #[test]
    fn lagrangian_manufactured_solution_converges_at_second_order() {
        // Prescribe Y*(t) = sin(ω t) W(y) and force the solver to it.
        let g = grid(16);
        let omega = 1.3;
        let w_field = SpectralField::from_fn_vector(g.clone(), |x| {
            [
                0.02 * (x[1] + x[2]).sin(),
                0.02 * (x[0] + x[2]).cos(),
                0.02 * (x[0] + x[1]).sin(),
            ]
        });
        let y_star = {
            let w = w_field.clone();
            move |t: f64| w.scale((omega * t).sin())
        };
        let v_star = {
            let w = w_field.clone();
            move |t: f64| w.scale(omega * (omega * t).cos())
        };
        let t_end: f64 = 0.4;
        let mut errors = Vec::new();
        for &dt in &[0.02, 0.01, 0.005] {
            let wf = w_field.clone();
            let ys = y_star.clone();
            let vs = v_star.clone();
            let forcing = move |t: f64| {
                // F = Y*_tt − ΔY*_t − ∂₃²Y* − f(Y*, Y*_t).
                let y = ys(t);
                let v = vs(t);
                let mut acc = wf.scale(-omega * omega * (omega * t).sin());
                acc.sub_assign(&v.laplacian());
                acc.sub_assign(&y.derivative(3, 2));
                let state = LagrangianState::new(y, v, None, t);
                let (f, _, _, _) = rhs_lagrangian(&state).unwrap();
                acc.sub_assign(&f);
                acc
            };
            let mut stepper = LagrangianStepper::new(LagrangianState::new(
                SpectralField::zeros(g.clone(), 3),
                v_star(0.0),
                None,
                0.0,
            ));
            stepper.forcing = Some(Box::new(forcing));
            let steps = (t_end / dt).round() as usize;
            for _ in 0..steps {
                stepper.step(dt).unwrap();
            }
            let mut err = stepper.state.y.clone();
            err.sub_assign(&y_star(t_end));
            errors.push(err.l2_norm());
        }
        let r1 = errors[0] / errors[1];
        let r2 = errors[1] / errors[2];
        assert!(
            r1 > 2.8 && r1 < 5.5 && r2 > 2.8 && r2 < 5.5,
            "convergence ratios {r1:.2}, {r2:.2} (errors {errors:?})"
        );
    }

    #[test]
    fn neumann_series_agrees_with_direct_inversion() {
        let g = grid(16);
        let mut y = smooth_divfree(&g, 1.0, 41);
        let gy0 = grad_phys(&y);
        let s: Vec<&[f64]> = gy0.iter().map(flat).collect();
        let sup = (0..s[0].len())
            .map(|p| s.iter().map(|c| c[p] * c[p]).sum::<f64>().sqrt())
            .fold(0.0f64, f64::max);
        y = y.scale(0.3 / sup);
        let gy = grad_phys(&y);
        let (a, _) = invert_id_plus(&gy).unwrap();
        // Σ_{n≤30} (−∇Y)ⁿ pointwise.
        let gys: Vec<&[f64]> = gy.iter().map(flat).collect();
        let af: Vec<&[f64]> = a.iter().map(flat).collect();
        let n = gys[0].len();
        let mut worst = 0.0f64;
        for p in 0..n {
            let mut m = [[0.0; 3]; 3];
            for i in 0..3 {
                for j in 0..3 {
                    m[i][j] = -gys[3 * i + j][p];
                }
            }
            let mut total = MAT_ID;
            let mut pw = MAT_ID;
            for _ in 0..30 {
                pw = crate::field_straightening::mat_mul(&pw, &m);
                total = crate::field_straightening::mat_add(&total, &pw);
            }
            for i in 0..3 {
                for j in 0..3 {
                    worst = worst.max((total[i][j] - af[3 * i + j][p]).abs());
                }
            }
        }
        assert!(worst < 1e-10, "series vs direct inversion gap {worst:.2e}");
    }

    #[test]
    fn invertibility_margin_violation_aborts() {
        let g = grid(16);
        let y = SpectralField::from_fn_vector(g.clone(), |x| [0.8 * x[1].sin(), 0.0, 0.0]);
        let state = LagrangianState::new(y, SpectralField::zeros(g.clone(), 3), None, 0.0);
        let err = rhs_lagrangian(&state).unwrap_err();
        assert!(format!("{err}").contains("margin"));
    }

    #[test]
    fn trajectory_trivial_and_shear_closed_forms() {
        let g = grid(16);
        let zero = SpectralField::zeros(g.clone(), 3);
        let hist = vec![zero.clone(), zero.clone(), zero.clone()];
        let pg = Grid::new([8, 8, 8], g.period).unwrap();
        let traj = trajectory_map(&hist, 0.05, pg.clone(), 2).unwrap();
        let y0 = pg.point([2, 3, 4]);
        for c in 0..3 {
            assert!((traj.x[c][[2, 3, 4]] - y0[c]).abs() < 1e-14);
        }
        let (lo, hi) = traj.det_bounds();
        assert!((lo - 1.0).abs() < 1e-14 && (hi - 1.0).abs() < 1e-14);
        // Steady shear: X₁ = y₁ + t sin(y₂), det = 1 exactly.
        let shear = SpectralField::from_fn_vector(g.clone(), |x| [x[1].sin(), 0.0, 0.0]);
        let hist: Vec<SpectralField> = (0..21).map(|_| shear.clone()).collect();
        let dt = 0.01;
        let traj = trajectory_map(&hist, dt, pg.clone(), 2).unwrap();
        let t = 0.2;
        let mut worst = 0.0f64;
        for i in 0..8 {
            for j in 0..8 {
                for k in 0..8 {
                    let y = pg.point([i, j, k]);
                    worst = worst.max((traj.x[0][[i, j, k]] - y[0] - t * y[1].sin()).abs());
                    worst = worst.max((traj.x[1][[i, j, k]] - y[1]).abs());
                    worst = worst.max((traj.x[2][[i, j, k]] - y[2]).abs());
                }
            }
        }
        assert!(worst < 1e-8, "shear characteristics error {worst:.2e}");
        let (lo, hi) = traj.det_bounds();
        assert!((lo - 1.0).abs() < 1e-8 && (hi - 1.0).abs() < 1e-8);
    }

    #[test]
    fn cauchy_invariant_small_data_run() {
        // Eulerian run with b₀ = e₃ + small perturbation; transport and
        // stretching identities through the flow map.
        let g = grid(32);
        let e3 = SpectralField::from_fn_vector(g.clone(), |_| [0.0, 0.0, 1.0]);
        let mut b0 = smooth_divfree(&g, 1e-3, 51);
        b0.add_assign(&e3);
        let u0 = smooth_divfree(&g, 1e-3, 52);
        let dt = 0.01;
        let steps = 100;
        let mut s = EulerStepper::new(EulerianState::new(b0.clone(), u0, 0.0).unwrap());
        let mut hist = vec![s.state.u.clone()];
        for _ in 0..steps {
            s.step(dt).unwrap();
            hist.push(s.state.u.clone());
        }
        let pg = Grid::new([16, 16, 16], g.period).unwrap();
        let traj = trajectory_map(&hist, dt, pg.clone(), 3).unwrap();
        let (lo, hi) = traj.det_bounds();
        assert!(
            (lo - 1.0).abs() < 1e-8 && (hi - 1.0).abs() < 1e-8,
            "det range [{lo:.10}, {hi:.10}]"
        );
        // Evaluate b₀ on the seed grid by strided subsampling (the seed
        // grid divides the solver grid).
        let stride = 2;
        let b0_phys = b0.to_physical();
        let mut seeds: Vec<Array3<f64>> = (0..3).map(|_| Array3::zeros((16, 16, 16))).collect();
        for i in 0..16 {
            for j in 0..16 {
                for k in 0..16 {
                    for c in 0..3 {
                        seeds[c][[i, j, k]] = b0_phys[c][[i * stride, j * stride, k * stride]];
                    }
                }
            }
        }
        let b0_on_seeds = SpectralField::from_physical(pg.clone(), seeds);
        let rep = cauchy_invariant_check(&b0_on_seeds, &s.state.b, &traj, 3).unwrap();
        assert!(
            rep.transport_residual < 1e-6,
            "transport residual {:.2e}",
            rep.transport_residual
        );
        assert!(
            rep.stretching_residual < 1e-5,
            "stretching residual {:.2e}",
            rep.stretching_residual
        );
    }

    #[test]
    fn cauchy_invariant_general_magnetic_field() {
        // ε = 0.02 structured b₀ from the gaussian-loop preset, run to
        // t = 0.5 from rest.
        let phi = preset_by_name("gaussian-loop", 16.0, 8.0).unwrap();
        let period = phi.period;
        let field = InitialMagneticField::new(0.02, phi).unwrap();
        let g = Grid::new([32, 32, 32], [period; 3]).unwrap();
        // Centre the slab in the periodic window.
        let shift = 0.5 * (period - field.phi.k_support);
        let b0 = {
            let f = &field;
            SpectralField::from_fn_vector(g.clone(), move |x| f.b0([x[0], x[1], x[2] - shift]))
        };
        let u0 = SpectralField::zeros(g.clone(), 3);
        let dt = 0.01;
        let steps = 50;
        let mut s = EulerStepper::new(EulerianState::new(b0.clone(), u0, 0.0).unwrap());
        let mut hist = vec![s.state.u.clone()];
        for _ in 0..steps {
            s.step(dt).unwrap();
            hist.push(s.state.u.clone());
        }
        let pg = Grid::new([16, 16, 32], g.period).unwrap();
        let traj = trajectory_map(&hist, dt, pg.clone(), 3).unwrap();
        // b₀ on seeds, exactly from the closure.
        let b0_seed = {
            let f = &field;
            SpectralField::from_fn_vector(pg.clone(), move |x| f.b0([x[0], x[1], x[2] - shift]))
        };
        let rep = cauchy_invariant_check(&b0_seed, &s.state.b, &traj, 3).unwrap();
        assert!(
            rep.transport_residual < 1e-5,
            "transport residual {:.2e}",
            rep.transport_residual
        );
        assert!(
            rep.stretching_residual < 1e-4,
            "stretching residual {:.2e}",
            rep.stretching_residual
        );
    }

    #[test]
    fn cross_check_small_run_and_second_order_shrink() {
        let g = grid(32);
        let u0 = smooth_divfree(&g, 1e-3, 61);
        let mut sups = Vec::new();
        for &(dt, steps) in &[(4e-3, 50usize), (2e-3, 100)] {
            let rep = cross_check_euler_lagrange(&u0, dt, steps, [16, 16, 16], 2).unwrap();
            assert!((rep.det_min - 1.0).abs() < 1e-8 && (rep.det_max - 1.0).abs() < 1e-8);
            sups.push((rep.velocity_sup, rep.magnetic_sup));
        }
        assert!(sups[1].0 < 1e-4 && sups[1].1 < 1e-5, "sups {sups:?}");
        // Second-order shrink in dt (generous window for the mixed
        // error budget).
        let r = sups[0].0 / sups[1].0;
        assert!(r > 2.5 && r < 6.5, "velocity discrepancy ratio {r:.2}");
    }

    #[test]
    fn straightened_background_reduces_to_the_flat_system() {
        // A chart at ε = 0 yields identity coefficients: the general
        // right-hand side must match the flat one exactly.
        let phi = preset_by_name("gaussian-loop", 16.0, 8.0).unwrap();
        let period = phi.period;
        let field = InitialMagneticField::new(0.0, phi).unwrap();
        let cg = ChartGrid::for_profile(&field.phi, 16);
        let chart = assemble_chart_unchecked(field, cg).unwrap();
        let g = Grid::new([16, 16, 32], [period, period, 2.0 * period]).unwrap();
        let bg = Arc::new(StraightenedBackground::from_chart(&chart, g.clone(), -4.0).unwrap());
        let y = SpectralField::from_fn_vector(g.clone(), |x| {
            [
                0.01 * (2.0 * std::f64::consts::PI * x[1] / 16.0).sin(),
                0.0,
                0.01 * (2.0 * std::f64::consts::PI * x[0] / 16.0).cos(),
            ]
        });
        let v = SpectralField::from_fn_vector(g.clone(), |x| {
            [0.0, 0.01 * (2.0 * std::f64::consts::PI * (x[0] + x[2]) / 16.0).sin(), 0.0]
        });
        let flat_state = LagrangianState::new(y.clone(), v.clone(), None, 0.0);
        let gen_state = LagrangianState::new(y, v, Some(bg), 0.0);
        let (f_flat, _, _, _) = rhs_lagrangian(&flat_state).unwrap();
        let (f_gen, _, _, _) = rhs_lagrangian(&gen_state).unwrap();
        let mut d = f_flat.clone();
        d.sub_assign(&f_gen);
        assert!(
            d.l2_norm() < 1e-9 * (1.0 + f_flat.l2_norm()),
            "general/flat gap {:.2e}",
            d.l2_norm()
        );
    }

    #[test]
    fn straightened_run_stays_finite_and_monitors_the_constraint() {
        let phi = preset_by_name("gaussian-loop", 16.0, 8.0).unwrap();
        let period = phi.period;
        let field = InitialMagneticField::new(0.02, phi).unwrap();
        let cg = ChartGrid::for_profile(&field.phi, 16);
        let chart = assemble_chart_unchecked(field, cg).unwrap();
        let g = Grid::new([16, 16, 32], [period, period, 2.0 * period]).unwrap();
        let bg = Arc::new(StraightenedBackground::from_chart(&chart, g.clone(), -4.0).unwrap());
        // Initial displacement −Ỹ, small velocity.
        let y0 = bg.ytilde.scale(-1.0);
        let v0 = SpectralField::from_fn_vector(g.clone(), |x| {
            let s = (2.0 * std::f64::consts::PI * x[0] / 16.0).sin();
            [0.0, 1e-3 * s, 0.0]
        });
        let mut stepper = LagrangianStepper::new(LagrangianState::new(y0, v0, Some(bg), 0.0));
        let mut residuals = Vec::new();
        for _ in 0..10 {
            stepper.step(5e-3).unwrap();
            residuals.push(lagrangian_divergence_residual(&stepper.state).unwrap());
        }
        assert!(stepper.state.y.l2_norm().is_finite());
        assert!(residuals.iter().all(|r| r.is_finite()));
    }

    #[test]
    fn state_invariants_hold() {
        let g = grid(16);
        let y = smooth_divfree(&g, 0.02, 71);
        let state = LagrangianState::new(y.clone(), SpectralField::zeros(g.clone(), 3), None, 0.0);
        let ctx = RhsContext::build(&state).unwrap();
        // 𝓐 (Id + ∇Y) = Id pointwise.
        let gy = grad_phys(&y);
        let prod = mat_mul_field(&ctx.ba, &mat_scale_add_id(&gy, 1.0, 1.0));
        let mut worst = 0.0f64;
        for e in 0..9 {
            let target = if e / 3 == e % 3 { 1.0 } else { 0.0 };
            worst = worst.max(
                prod[e]
                    .iter()
                    .fold(0.0f64, |m, x| m.max((x - target).abs())),
            );
        }
        assert!(worst < 1e-10, "inverse consistency {worst:.2e}");
    }
}

//! Energy functionals and decay-rate instrumentation for the Lagrangian
//! runs: the base energy/dissipation pair, the first-order and
//! vertical-derivative hierarchy, per-block dyadic energies, discrete
//! Lyapunov-inequality monitoring, and log-log exponent fitting.
//!
//! All norms are spectral: inhomogeneous Sobolev weights (1+|ξ|²)^s,
//! homogeneous weights |ξ|^{2s} with the zero mode dropped.

use ndarray::Array3;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::field_straightening::{mat_inv, MAT_ID};
use crate::fields::{Grid, SpectralField};
use crate::littlewood_paley::{Direction, DyadicPartition};
use crate::nonlinear_solver::LagrangianState;

/// Everything the post-processing pipeline wants from one snapshot.
#[derive(Clone, Debug)]
pub struct EnergyReport {
    pub t: f64,
    pub e0: f64,
    pub d0: f64,
    pub e1_dot: f64,
    pub d1_dot: f64,
    pub e1: f64,
    pub d1: f64,
    pub e1_3dot: f64,
    pub d1_3dot: f64,
    /// Per-(j, ℓ) block energies; empty when no partition was supplied.
    pub g_spectrum: Vec<((i32, i32), f64)>,
    /// Named auxiliary norms (the smallness monitor λ and its parts,
    /// sup |∇Y|, plain Sobolev norms).
    pub norms: Vec<(String, f64)>,
}

fn sq(x: f64) -> f64 {
    x * x
}

/// The deformation-correction source G_i = ∇·((𝓐𝓐ᵗ − Id)∇Y^i) together
/// with sup |∇Y|.
fn deformation_correction(y: &SpectralField) -> Result<(SpectralField, f64)> {
    let grid = y.grid.clone();
    let mut grads: Vec<Vec<Array3<f64>>> = Vec::with_capacity(3);
    for i in 0..3 {
        let mut comp = Vec::with_capacity(3);
        for axis in 1..=3 {
            comp.push(
                y.component(i)
                    .derivative(axis, 1)
                    .to_physical()
                    .swap_remove(0),
            );
        }
        grads.push(comp);
    }
    let dim = grads[0][0].dim();
    let n = grads[0][0].len();
    let g: Vec<&[f64]> = grads
        .iter()
        .flat_map(|c| c.iter().map(|a| a.as_slice().unwrap()))
        .collect();
    let mut sup: f64 = 0.0;
    // K = (Id+∇Y)^{-1}(Id+∇Y)^{-t} − Id pointwise.
    let mut kcols: Vec<Vec<f64>> = vec![vec![0.0; n]; 9];
    for p in 0..n {
        let mut m = MAT_ID;
        let mut fro = 0.0;
        for i in 0..3 {
            for j in 0..3 {
                let v = g[3 * i + j][p];
                m[i][j] += v;
                fro += v * v;
            }
        }
        sup = sup.max(fro.sqrt());
        let a = mat_inv(&m)?;
        for i in 0..3 {
            for j in 0..3 {
                let mut e = -MAT_ID[i][j];
                for l in 0..3 {
                    e += a[i][l] * a[j][l];
                }
                kcols[3 * i + j][p] = e;
            }
        }
    }
    let k: Vec<Array3<f64>> = kcols
        .into_iter()
        .map(|v| Array3::from_shape_vec(dim, v).unwrap())
        .collect();
    let mut comps = Vec::with_capacity(3);
    for gi in &grads {
        // q_j = Σ_l K_{jl} ∂_l Y^i, then the spectral divergence.
        let q: Vec<Array3<f64>> = (0..3)
            .map(|j| {
                let mut acc = &k[3 * j] * &gi[0];
                acc = acc + &k[3 * j + 1] * &gi[1];
                acc + &k[3 * j + 2] * &gi[2]
            })
            .collect();
        comps.push(
            SpectralField::from_physical(grid.clone(), q)
                .dealias()
                .divergence(),
        );
    }
    Ok((
        SpectralField::from_components([
            comps.remove(0),
            comps.remove(0),
            comps.remove(0),
        ]),
        sup,
    ))
}

/// Base energy and dissipation pair.
pub fn energy_e0_d0(state: &LagrangianState) -> Result<(f64, f64)> {
    let y = &state.y;
    let yt = &state.v;
    let d3y = y.derivative(3, 1);
    let lap_y = y.laplacian();
    let (g, _) = deformation_correction(y)?;
    let e0 = 0.5
        * (sq(yt.sobolev_norm(1.0, false))
            + sq(d3y.sobolev_norm(1.0, false))
            + 0.25 * sq(lap_y.l2_norm()))
        - 0.25 * yt.l2_inner(&lap_y)
        + g.l2_inner(&lap_y);
    let d0 = sq(yt.sobolev_norm(1.0, true))
        + sq(yt.sobolev_norm(2.0, true))
        + sq(d3y.sobolev_norm(1.0, true));
    Ok((e0, d0))
}

/// First-order increments and totals (E₁ = E₀ + Ė₁, D₁ = D₀ + Ḋ₁).
pub fn energy_e1_d1(state: &LagrangianState) -> Result<(f64, f64, f64, f64)> {
    let y = &state.y;
    let yt = &state.v;
    let d3y = y.derivative(3, 1);
    let lap_y = y.laplacian();
    let (g, _) = deformation_correction(y)?;
    // (∇a | ∇b) summed over the gradient axes, spectrally.
    let grad_inner = |a: &SpectralField, b: &SpectralField| -> f64 {
        (1..=3)
            .map(|ax| a.derivative(ax, 1).l2_inner(&b.derivative(ax, 1)))
            .sum()
    };
    let e1_dot = 0.5
        * (sq(yt.sobolev_norm(1.0, true))
            + sq(yt.sobolev_norm(2.0, true))
            + sq(d3y.sobolev_norm(1.0, true))
            + sq(d3y.sobolev_norm(2.0, true))
            + 0.25 * sq(y.sobolev_norm(3.0, true)))
        - 0.25 * grad_inner(yt, &lap_y)
        + grad_inner(&g, &lap_y);
    let d1_dot = sq(yt.sobolev_norm(2.0, true))
        + sq(yt.sobolev_norm(3.0, true))
        + sq(d3y.sobolev_norm(2.0, true));
    let (e0, d0) = energy_e0_d0(state)?;
    Ok((e1_dot, d1_dot, e0 + e1_dot, d0 + d1_dot))
}

/// Vertical-derivative energy pair.
pub fn energy_e1_3(state: &LagrangianState) -> (f64, f64) {
    let y = &state.y;
    let d3yt = state.v.derivative(3, 1);
    let d3y = y.derivative(3, 1);
    let d3y2 = y.derivative(3, 2);
    let e = 0.5
        * (sq(d3yt.sobolev_norm(1.0, false))
            + sq(d3y2.sobolev_norm(1.0, false))
            + 0.25 * sq(d3y.sobolev_norm(2.0, true)))
        - 0.25 * d3yt.l2_inner(&d3y.laplacian());
    let d = sq(d3yt.sobolev_norm(1.0, true))
        + sq(d3yt.sobolev_norm(2.0, true))
        + sq(d3y2.sobolev_norm(1.0, true));
    (e, d)
}

/// Per-block energies g²_{j,ℓ}: the exact quadratic form
/// ½(‖Δ_jΔ_ℓ^v Y_t‖² + ‖Δ_jΔ_ℓ^v ∂₃Y‖² + ¼‖Δ_jΔ_ℓ^v ΔY‖²)
/// − ¼(Δ_jΔ_ℓ^v Y_t | Δ_jΔ_ℓ^v ΔY), restricted to blocks carrying
/// energy.  Positivity of the form is asserted.
pub fn block_energy_spectrum(
    state: &LagrangianState,
    part: &DyadicPartition,
) -> Vec<((i32, i32), f64)> {
    let yt = &state.v;
    let d3y = state.y.derivative(3, 1);
    let lap_y = state.y.laplacian();
    let (j_min, j_max) = part.band_range(Direction::Full);
    let (l_min, l_max) = part.band_range(Direction::Vertical);
    let total = sq(yt.l2_norm()) + sq(d3y.l2_norm()) + sq(lap_y.l2_norm());
    let floor = total * 1e-26;
    let mut out = Vec::new();
    for j in j_min..=j_max {
        let yt_j = part.block(yt, j, Direction::Full);
        let d3_j = part.block(&d3y, j, Direction::Full);
        let lp_j = part.block(&lap_y, j, Direction::Full);
        for l in l_min..=l_max {
            let a = part.block(&yt_j, l, Direction::Vertical);
            let b = part.block(&d3_j, l, Direction::Vertical);
            let c = part.block(&lp_j, l, Direction::Vertical);
            let g2 = 0.5 * (sq(a.l2_norm()) + sq(b.l2_norm()) + 0.25 * sq(c.l2_norm()))
                - 0.25 * a.l2_inner(&c);
            assert!(
                g2 >= -1e-12 * total,
                "block ({j}, {l}) energy form negative: {g2:.3e}"
            );
            if g2 > floor {
                out.push(((j, l), g2));
            }
        }
    }
    out
}

/// λ(t): the sum of the three anisotropic smallness norms monitored
/// along every run, plus the individual parts.
pub fn smallness_monitor(state: &LagrangianState, part: &DyadicPartition) -> Vec<(String, f64)> {
    let a = part.aniso_besov_norm(&state.v, 0.0, -0.5, 2.0, f64::INFINITY);
    let b = part.aniso_besov_norm(&state.y, 1.0, -0.5, f64::INFINITY, f64::INFINITY);
    let c = part.aniso_besov_norm(&state.y, 2.5, -0.5, 2.0, f64::INFINITY);
    vec![
        ("lambda_vel".into(), a),
        ("lambda_disp_low".into(), b),
        ("lambda_disp_high".into(), c),
        ("lambda".into(), a + b + c),
    ]
}

impl EnergyReport {
    /// Assemble the full report; the partition enables the block
    /// spectrum and the smallness monitor.
    pub fn compute(state: &LagrangianState, part: Option<&DyadicPartition>) -> Result<Self> {
        let (e0, d0) = energy_e0_d0(state)?;
        let (e1_dot, d1_dot, e1, d1) = energy_e1_d1(state)?;
        let (e1_3dot, d1_3dot) = energy_e1_3(state);
        let (_, sup) = deformation_correction(&state.y)?;
        let mut norms = vec![
            ("sup_grad_y".into(), sup),
            ("yt_h1".into(), state.v.sobolev_norm(1.0, false)),
            ("d3y_h1".into(), state.y.derivative(3, 1).sobolev_norm(1.0, false)),
            ("y_h2dot".into(), state.y.sobolev_norm(2.0, true)),
        ];
        let g_spectrum = match part {
            Some(p) => {
                norms.extend(smallness_monitor(state, p));
                block_energy_spectrum(state, p)
            }
            None => Vec::new(),
        };
        Ok(EnergyReport {
            t: state.t,
            e0,
            d0,
            e1_dot,
            d1_dot,
            e1,
            d1,
            e1_3dot,
            d1_3dot,
            g_spectrum,
            norms,
        })
    }
}

/// Ratio of each energy to its plain-norm counterpart; the paper's
/// equivalences promise these stay in [1/4, 4] at small data.
pub fn equivalence_ratios(state: &LagrangianState) -> Result<Vec<(String, f64)>> {
    let (e0, _) = energy_e0_d0(state)?;
    let (_, _, e1, _) = energy_e1_d1(state)?;
    let y = &state.y;
    let yt = &state.v;
    let d3y = y.derivative(3, 1);
    let plain0 = sq(yt.sobolev_norm(1.0, false))
        + sq(d3y.sobolev_norm(1.0, false))
        + sq(y.laplacian().l2_norm());
    let plain1 = sq(yt.sobolev_norm(2.0, false))
        + sq(d3y.sobolev_norm(2.0, false))
        + sq(y.laplacian().sobolev_norm(1.0, false));
    let mut out = Vec::new();
    if plain0 > 0.0 {
        out.push(("e0".into(), e0 / plain0));
    }
    if plain1 > 0.0 {
        out.push(("e1".into(), e1 / plain1));
    }
    Ok(out)
}

/// Outcome of the discrete Lyapunov monitor for one (E, D, c) triple.
#[derive(Clone, Debug)]
pub struct LyapunovLine {
    pub name: String,
    /// Damping coefficient tested (1/8 for the base pair, 1/16 for the
    /// first-order pair).
    pub c: f64,
    pub violations: usize,
    /// Worst positive excess beyond the tolerance (0 when clean).
    pub worst_excess: f64,
    /// Largest empirical c for which E + c∫D would still be
    /// non-increasing over this history (∞ when D vanishes).
    pub largest_c: f64,
}

/// Discrete Lyapunov check over a uniformly spaced snapshot history:
/// centered differences at midpoints, D averaged across the interval,
/// tolerance 1e−8 + `tol_coeff`·dt².
pub fn lyapunov_check(history: &[EnergyReport], tol_coeff: f64) -> Result<Vec<LyapunovLine>> {
    if history.len() < 2 {
        return Err(Error::InvalidParameter(
            "lyapunov check needs at least two snapshots".into(),
        ));
    }
    let dt = history[1].t - history[0].t;
    for w in history.windows(2) {
        if ((w[1].t - w[0].t) - dt).abs() > 1e-9 * dt.max(1e-30) {
            return Err(Error::InvalidParameter(
                "lyapunov check needs a uniform snapshot cadence".into(),
            ));
        }
    }
    let tol = 1e-8 + tol_coeff * dt * dt;
    let pairs: [(&str, f64, fn(&EnergyReport) -> (f64, f64)); 2] = [
        ("e0_d0", 0.125, |r| (r.e0, r.d0)),
        ("e1_d1", 0.0625, |r| (r.e1, r.d1)),
    ];
    let mut out = Vec::new();
    for (name, c, get) in pairs {
        let mut violations = 0;
        let mut worst: f64 = 0.0;
        let mut largest = f64::INFINITY;
        for w in history.windows(2) {
            let (ea, da) = get(&w[0]);
            let (eb, db) = get(&w[1]);
            let rate = (eb - ea) / dt;
            let dmid = 0.5 * (da + db);
            let excess = rate + c * dmid - tol;
            if excess > 0.0 {
                violations += 1;
                worst = worst.max(excess);
            }
            if dmid > 0.0 {
                largest = largest.min((-rate + tol) / dmid);
            }
        }
        out.push(LyapunovLine {
            name: name.into(),
            c,
            violations,
            worst_excess: worst,
            largest_c: largest,
        });
    }
    Ok(out)
}

/// Least-squares log-log slope over [t_lo, t_hi] with its standard
/// error; the window must span at least a decade.
pub fn fit_decay(times: &[f64], vals: &[f64], t_lo: f64, t_hi: f64) -> Result<(f64, f64)> {
    if !(t_hi >= 10.0 * t_lo && t_lo > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "fit window [{t_lo:.3e}, {t_hi:.3e}] spans less than a decade"
        )));
    }
    let pts: Vec<(f64, f64)> = times
        .iter()
        .zip(vals)
        .filter(|(&t, &v)| t >= t_lo && t <= t_hi && v > 0.0)
        .map(|(&t, &v)| (t.ln(), v.ln()))
        .collect();
    if pts.len() < 3 {
        return Err(Error::InvalidParameter(
            "need at least three positive samples in the fit window".into(),
        ));
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| sq(p.0 - mx)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let slope = sxy / sxx;
    let ss_res: f64 = pts
        .iter()
        .map(|p| sq(p.1 - my - slope * (p.0 - mx)))
        .sum();
    let stderr = if pts.len() > 2 {
        (ss_res / (n - 2.0) / sxx).sqrt()
    } else {
        0.0
    };
    Ok((slope, stderr))
}

/// Write one CSV row per report (flat columns; block spectrum summed).
pub fn write_energy_csv(history: &[EnergyReport], w: &mut impl std::io::Write) -> Result<()> {
    let mut header = vec![
        "t", "e0", "d0", "e1_dot", "d1_dot", "e1", "d1", "e1_3dot", "d1_3dot", "g_total",
    ]
    .into_iter()
    .map(String::from)
    .collect::<Vec<_>>();
    if let Some(first) = history.first() {
        header.extend(first.norms.iter().map(|(k, _)| k.clone()));
    }
    writeln!(w, "{}", header.join(","))?;
    for r in history {
        let g_total: f64 = r.g_spectrum.iter().map(|(_, v)| v).sum();
        let mut row = vec![
            r.t, r.e0, r.d0, r.e1_dot, r.d1_dot, r.e1, r.d1, r.e1_3dot, r.d1_3dot, g_total,
        ];
        row.extend(r.norms.iter().map(|(_, v)| *v));
        let cells: Vec<String> = row.iter().map(|v| format!("{v:.12e}")).collect();
        writeln!(w, "{}", cells.join(","))?;
    }
    Ok(())
}

/// Convenience: grid handle of a state.
pub fn state_grid(state: &LagrangianState) -> Arc<Grid> {
    state.y.grid.clone()
}

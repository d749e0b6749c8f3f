//! Scenario runner: configuration parsing, data presets, orchestration
//! of the solvers and analysis passes, and structured result emission
//! (CSV time series, JSON summaries, a manifest per run).
//!
//! Configs are JSON with unknown keys rejected; command-line flags
//! override file values.  Runs are deterministic for a fixed seed.

use ndarray::Array3;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use crate::diagnostics::{fit_decay, lyapunov_check, write_energy_csv, EnergyReport};
use crate::error::{Error, Result};
use crate::field_straightening::{
    assemble_chart, preset_by_name, ChartGrid, InitialMagneticField,
};
use crate::fields::{Grid, SpectralField};
use crate::inequality_lab::{max_ratios, run_battery, CALIBRATION_SEEDS};
use crate::linear_theory::{
    eigenvalues, linear_decay_quadrature, DataClass, NormWeight, QuadratureGrid,
};
use crate::littlewood_paley::DyadicPartition;
use crate::nonlinear_solver::{
    lagrangian_divergence_residual, EulerStepper, EulerianState, LagrangianState,
    LagrangianStepper, StraightenedBackground,
};

/// Slab box used by the analytic field presets.
const PRESET_PERIOD: f64 = 16.0;
const PRESET_SLAB: f64 = 8.0;

/// Flat scenario configuration; every field has a default so partial
/// configs are valid, but unknown keys are rejected.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct ScenarioConfig {
    /// Cubic grid size per axis.
    pub n: usize,
    /// Box period (ignored by subcommands tied to the preset slab box).
    pub period: f64,
    pub dt: f64,
    pub steps: usize,
    pub snapshot_every: usize,
    /// Magnetic-profile preset: shear | layered | gaussian-loop.
    pub preset: String,
    /// Velocity-data preset: gaussian | besov-class.
    pub velocity: String,
    pub amplitude: f64,
    pub epsilon: f64,
    pub xi: [f64; 3],
    /// Horizon for the linear-decay quadrature.
    pub t_max: f64,
    pub seed: u64,
    pub output_dir: Option<String>,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        ScenarioConfig {
            n: 32,
            period: 2.0 * std::f64::consts::PI,
            dt: 2e-3,
            steps: 100,
            snapshot_every: 10,
            preset: "gaussian-loop".into(),
            velocity: "gaussian".into(),
            amplitude: 1e-3,
            epsilon: 0.02,
            xi: [0.0, 0.0, 1.0],
            t_max: 1e3,
            seed: 7,
            output_dir: None,
        }
    }
}

impl ScenarioConfig {
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| {
            Error::InvalidParameter(format!("cannot read config {}: {e}", path.display()))
        })?;
        let cfg: ScenarioConfig = serde_json::from_str(&text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n < 4 || self.n % 2 != 0 {
            return Err(Error::InvalidParameter(format!(
                "grid size must be even and >= 4, got {}",
                self.n
            )));
        }
        if !(self.dt > 0.0 && self.period > 0.0 && self.t_max > 1.0) {
            return Err(Error::InvalidParameter(
                "dt, period must be positive and t_max > 1".into(),
            ));
        }
        if self.snapshot_every == 0 {
            return Err(Error::InvalidParameter("snapshot_every must be >= 1".into()));
        }
        match self.velocity.as_str() {
            "gaussian" | "besov-class" => {}
            other => {
                return Err(Error::InvalidParameter(format!(
                    "unknown velocity preset '{other}' (expected gaussian, besov-class)"
                )))
            }
        }
        match self.preset.as_str() {
            "shear" | "layered" | "gaussian-loop" => {}
            other => {
                return Err(Error::InvalidParameter(format!(
                    "unknown profile preset '{other}'"
                )))
            }
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON serialization.
    pub fn hash(&self) -> String {
        let text = serde_json::to_string(self).expect("config serializes");
        hex::encode(Sha256::digest(text.as_bytes()))
    }
}

/// Optional overrides collected from command-line flags.
#[derive(Debug, Default, Clone)]
pub struct Overrides {
    pub n: Option<usize>,
    pub period: Option<f64>,
    pub dt: Option<f64>,
    pub steps: Option<usize>,
    pub snapshot_every: Option<usize>,
    pub preset: Option<String>,
    pub velocity: Option<String>,
    pub amplitude: Option<f64>,
    pub epsilon: Option<f64>,
    pub xi: Option<[f64; 3]>,
    pub t_max: Option<f64>,
    pub seed: Option<u64>,
    pub output_dir: Option<String>,
}

impl Overrides {
    pub fn apply(&self, mut cfg: ScenarioConfig) -> Result<ScenarioConfig> {
        macro_rules! ov {
            ($f:ident) => {
                if let Some(v) = &self.$f {
                    cfg.$f = v.clone();
                }
            };
        }
        ov!(n);
        ov!(period);
        ov!(dt);
        ov!(steps);
        ov!(snapshot_every);
        ov!(preset);
        ov!(velocity);
        ov!(amplitude);
        ov!(epsilon);
        ov!(xi);
        ov!(t_max);
        ov!(seed);
        if self.output_dir.is_some() {
            cfg.output_dir = self.output_dir.clone();
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Subcommand {
    Dispersion,
    DecayLinear,
    SimulateEuler,
    SimulateLagrangian,
    Transform,
    Norms,
    CheckInequalities,
}

impl Subcommand {
    pub fn name(self) -> &'static str {
        match self {
            Subcommand::Dispersion => "dispersion",
            Subcommand::DecayLinear => "decay-linear",
            Subcommand::SimulateEuler => "simulate-euler",
            Subcommand::SimulateLagrangian => "simulate-lagrangian",
            Subcommand::Transform => "transform",
            Subcommand::Norms => "norms",
            Subcommand::CheckInequalities => "check-inequalities",
        }
    }
}

/// Everything a run leaves behind: stdout lines plus files under the
/// output directory (when one was configured).
pub struct RunOutput {
    pub lines: Vec<String>,
    pub files: Vec<PathBuf>,
}

fn out_dir(cfg: &ScenarioConfig) -> Result<Option<PathBuf>> {
    match &cfg.output_dir {
        None => Ok(None),
        Some(d) => {
            let p = PathBuf::from(d);
            fs::create_dir_all(&p)?;
            Ok(Some(p))
        }
    }
}

fn write_manifest(
    dir: &Path,
    sub: Subcommand,
    cfg: &ScenarioConfig,
    residuals: &serde_json::Value,
) -> Result<PathBuf> {
    let manifest = serde_json::json!({
        "subcommand": sub.name(),
        "config": cfg,
        "config_sha256": cfg.hash(),
        "versions": { "mhd-lab": env!("CARGO_PKG_VERSION") },
        "residuals": residuals,
    });
    let path = dir.join("manifest.json");
    fs::write(&path, serde_json::to_string_pretty(&manifest)?)?;
    Ok(path)
}

/// Seeded divergence-free velocity data on a cubic grid, normalized so
/// sup |u| equals the requested amplitude.
pub fn velocity_preset(
    grid: &Arc<Grid>,
    preset: &str,
    amplitude: f64,
    seed: u64,
) -> Result<SpectralField> {
    let raw = match preset {
        "gaussian" => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let dims = (grid.dims[0], grid.dims[1], grid.dims[2]);
            let comps: Vec<Array3<f64>> = (0..3)
                .map(|_| {
                    let v: Vec<f64> = (0..dims.0 * dims.1 * dims.2)
                        .map(|_| rng.gen_range(-1.0..1.0))
                        .collect();
                    Array3::from_shape_vec(dims, v).unwrap()
                })
                .collect();
            // Gaussian low-pass on white noise: smooth, full-spectrum
            // random data.
            let kmin = grid.min_frequency();
            SpectralField::from_physical(grid.clone(), comps).apply_multiplier(move |xi| {
                let q = (xi[0] * xi[0] + xi[1] * xi[1] + xi[2] * xi[2]) / (kmin * kmin);
                Complex64::new((-q / 8.0).exp(), 0.0)
            })
        }
        "besov-class" => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let dims = (grid.dims[0], grid.dims[1], grid.dims[2]);
            let comps: Vec<Array3<f64>> = (0..3)
                .map(|_| {
                    let v: Vec<f64> = (0..dims.0 * dims.1 * dims.2)
                        .map(|_| rng.gen_range(-1.0..1.0))
                        .collect();
                    Array3::from_shape_vec(dims, v).unwrap()
                })
                .collect();
            // Envelope |xi_3|^{1/2} (1+|xi|^2)^{-4} on white noise: the
            // admissible-data weight of the linear decay theory.
            SpectralField::from_physical(grid.clone(), comps).apply_multiplier(|xi| {
                let q = xi[0] * xi[0] + xi[1] * xi[1] + xi[2] * xi[2];
                if q == 0.0 {
                    return Complex64::new(0.0, 0.0);
                }
                Complex64::new(xi[2].abs().sqrt() * (1.0 + q).powi(-4), 0.0)
            })
        }
        other => {
            return Err(Error::InvalidParameter(format!(
                "unknown velocity preset '{other}'"
            )))
        }
    };
    let u = raw.leray_project();
    let sup = u.lp_norm(f64::INFINITY);
    if sup == 0.0 {
        return Err(Error::Numerical("velocity preset degenerated to zero".into()));
    }
    Ok(u.scale(amplitude / sup))
}

/// Magnetic data e₃ + ε·φ on a cubic slab-period box, slab centred.
fn magnetic_preset(grid: &Arc<Grid>, preset: &str, epsilon: f64) -> Result<SpectralField> {
    let phi = preset_by_name(preset, PRESET_PERIOD, PRESET_SLAB)?;
    let field = InitialMagneticField::new(epsilon, phi)?;
    let shift = 0.5 * (PRESET_PERIOD - PRESET_SLAB);
    Ok(SpectralField::from_fn_vector(grid.clone(), move |x| {
        field.b0([x[0], x[1], x[2] - shift])
    }))
}

pub fn run(sub: Subcommand, cfg: &ScenarioConfig) -> Result<RunOutput> {
    cfg.validate()?;
    match sub {
        Subcommand::Dispersion => run_dispersion(cfg),
        Subcommand::DecayLinear => run_decay_linear(cfg),
        Subcommand::SimulateEuler => run_simulate_euler(cfg),
        Subcommand::SimulateLagrangian => run_simulate_lagrangian(cfg),
        Subcommand::Transform => run_transform(cfg),
        Subcommand::Norms => run_norms(cfg),
        Subcommand::CheckInequalities => run_check_inequalities(cfg),
    }
}

fn fmt_c(z: Complex64) -> String {
    if z.im == 0.0 {
        format!("{:.6}", z.re)
    } else if z.im > 0.0 {
        format!("{:.6} + {:.6}i", z.re, z.im)
    } else {
        format!("{:.6} - {:.6}i", z.re, -z.im)
    }
}

fn run_dispersion(cfg: &ScenarioConfig) -> Result<RunOutput> {
    let m = eigenvalues(cfg.xi);
    let lines = vec![
        format!(
            "xi = ({}, {}, {})",
            cfg.xi[0], cfg.xi[1], cfg.xi[2]
        ),
        format!("lambda_plus  = {}", fmt_c(m.lambda_plus)),
        format!("lambda_minus = {}", fmt_c(m.lambda_minus)),
        format!("regime = {:?}", m.regime),
    ];
    let mut files = Vec::new();
    if let Some(dir) = out_dir(cfg)? {
        let j = serde_json::json!({
            "xi": cfg.xi,
            "lambda_plus": [m.lambda_plus.re, m.lambda_plus.im],
            "lambda_minus": [m.lambda_minus.re, m.lambda_minus.im],
            "regime": format!("{:?}", m.regime),
        });
        let p = dir.join("dispersion.json");
        fs::write(&p, serde_json::to_string_pretty(&j)?)?;
        files.push(p);
        files.push(write_manifest(&dir, Subcommand::Dispersion, cfg, &serde_json::json!({}))?);
    }
    Ok(RunOutput { lines, files })
}

fn run_decay_linear(cfg: &ScenarioConfig) -> Result<RunOutput> {
    let data = DataClass::default_class();
    let decades = cfg.t_max.log10();
    let n_pts = (decades * 12.0).ceil() as usize + 1;
    let times: Vec<f64> = (0..n_pts)
        .map(|k| 10f64.powf(k as f64 * decades / (n_pts - 1) as f64))
        .collect();
    let qgrid = QuadratureGrid::default();
    let series = [
        ("yt_h2", NormWeight::velocity_hs(2.0)),
        ("d3yt_h1", NormWeight::d3_velocity_hs(1.0)),
        ("d3y_h1", NormWeight::d3_y_hs(1.0)),
    ];
    let mut cols = Vec::new();
    for (name, w) in series {
        cols.push((name, linear_decay_quadrature(&data, w, &times, qgrid)));
    }
    let t_lo = cfg.t_max / 100.0;
    let mut lines = Vec::new();
    let mut slopes = serde_json::Map::new();
    for (name, vals) in &cols {
        let (s, err) = fit_decay(&times, vals, t_lo, cfg.t_max)?;
        lines.push(format!("{name}: slope {s:.4} +/- {err:.4} on [{t_lo:.1}, {:.1}]", cfg.t_max));
        slopes.insert(
            (*name).into(),
            serde_json::json!({ "slope": s, "stderr": err }),
        );
    }
    let mut files = Vec::new();
    if let Some(dir) = out_dir(cfg)? {
        let mut csv = String::from("t");
        for (name, _) in &cols {
            csv.push(',');
            csv.push_str(name);
        }
        csv.push('\n');
        for (i, t) in times.iter().enumerate() {
            csv.push_str(&format!("{t:.12e}"));
            for (_, vals) in &cols {
                csv.push_str(&format!(",{:.12e}", vals[i]));
            }
            csv.push('\n');
        }
        let p = dir.join("decay_linear.csv");
        fs::write(&p, csv)?;
        files.push(p);
        let p = dir.join("decay_summary.json");
        fs::write(&p, serde_json::to_string_pretty(&serde_json::Value::Object(slopes.clone()))?)?;
        files.push(p);
        files.push(write_manifest(
            &dir,
            Subcommand::DecayLinear,
            cfg,
            &serde_json::Value::Object(slopes),
        )?);
    }
    Ok(RunOutput { lines, files })
}

fn run_simulate_euler(cfg: &ScenarioConfig) -> Result<RunOutput> {
    let grid = Grid::cubic(cfg.n, PRESET_PERIOD)?;
    let b0 = magnetic_preset(&grid, &cfg.preset, cfg.epsilon)?;
    let u0 = velocity_preset(&grid, &cfg.velocity, cfg.amplitude, cfg.seed)?;
    let e3 = SpectralField::from_fn_vector(grid.clone(), |_| [0.0, 0.0, 1.0]);
    let mut stepper = EulerStepper::new(EulerianState::new(b0, u0, 0.0)?);
    let mut rows = Vec::new();
    let snap = |s: &EulerianState, gi: f64| -> (f64, f64, f64, f64, f64) {
        let mut dev = s.b.clone();
        dev.sub_assign(&e3);
        (s.t, s.u.l2_norm(), dev.l2_norm(), s.divergence_residual(), gi)
    };
    rows.push(snap(&stepper.state, 0.0));
    for k in 1..=cfg.steps {
        stepper.step(cfg.dt)?;
        if k % cfg.snapshot_every == 0 {
            rows.push(snap(&stepper.state, stepper.grad_integral));
        }
    }
    let last = *rows.last().unwrap();
    let lines = vec![
        format!("steps = {}, t = {:.4}", cfg.steps, last.0),
        format!("|u|_L2 = {:.6e}, |b - e3|_L2 = {:.6e}", last.1, last.2),
        format!("spectral divergence sup = {:.3e}", last.3),
    ];
    let mut files = Vec::new();
    if let Some(dir) = out_dir(cfg)? {
        let mut csv = String::from("t,u_l2,b_dev_l2,div_sup,grad_u_integral\n");
        for r in &rows {
            csv.push_str(&format!(
                "{:.12e},{:.12e},{:.12e},{:.12e},{:.12e}\n",
                r.0, r.1, r.2, r.3, r.4
            ));
        }
        let p = dir.join("euler.csv");
        fs::write(&p, csv)?;
        files.push(p);
        let p = dir.join("final_u.bin");
        let mut f = fs::File::create(&p)?;
        stepper.state.u.write_binary(&mut f)?;
        files.push(p);
        files.push(write_manifest(
            &dir,
            Subcommand::SimulateEuler,
            cfg,
            &serde_json::json!({ "divergence_sup": last.3, "grad_u_integral": last.4 }),
        )?);
    }
    Ok(RunOutput { lines, files })
}

fn run_simulate_lagrangian(cfg: &ScenarioConfig) -> Result<RunOutput> {
    let grid = Grid::cubic(cfg.n, cfg.period)?;
    let part = DyadicPartition::new(grid.clone());
    let v0 = velocity_preset(&grid, &cfg.velocity, cfg.amplitude, cfg.seed)?;
    let mut stepper = LagrangianStepper::new(LagrangianState::new(
        SpectralField::zeros(grid.clone(), 3),
        v0,
        None,
        0.0,
    ));
    let mut history = vec![EnergyReport::compute(&stepper.state, Some(&part))?];
    let mut div_resid: f64 = lagrangian_divergence_residual(&stepper.state)?;
    for k in 1..=cfg.steps {
        stepper.step(cfg.dt)?;
        if k % cfg.snapshot_every == 0 {
            history.push(EnergyReport::compute(&stepper.state, Some(&part))?);
            div_resid = div_resid.max(lagrangian_divergence_residual(&stepper.state)?);
        }
    }
    let lyap = lyapunov_check(&history, 1.0)?;
    let mut lines = vec![format!(
        "steps = {}, t = {:.4}, E0 {:.6e} -> {:.6e}",
        cfg.steps,
        stepper.state.t,
        history[0].e0,
        history.last().unwrap().e0
    )];
    for l in &lyap {
        lines.push(format!(
            "{}: {} violations (largest admissible c = {:.4})",
            l.name, l.violations, l.largest_c
        ));
    }
    lines.push(format!("max divergence-constraint residual = {:.3e}", div_resid));
    let mut files = Vec::new();
    if let Some(dir) = out_dir(cfg)? {
        let p = dir.join("energy.csv");
        let mut f = fs::File::create(&p)?;
        write_energy_csv(&history, &mut f)?;
        files.push(p);
        let lyap_json: Vec<serde_json::Value> = lyap
            .iter()
            .map(|l| {
                serde_json::json!({
                    "name": l.name, "c": l.c, "violations": l.violations,
                    "worst_excess": l.worst_excess, "largest_c": l.largest_c,
                })
            })
            .collect();
        let resid = serde_json::json!({
            "lyapunov": lyap_json,
            "divergence_constraint_residual": div_resid,
            "pressure_iterations": stepper.last_pressure_iters,
        });
        let p = dir.join("lagrangian_summary.json");
        fs::write(&p, serde_json::to_string_pretty(&resid)?)?;
        files.push(p);
        files.push(write_manifest(&dir, Subcommand::SimulateLagrangian, cfg, &resid)?);
    }
    Ok(RunOutput { lines, files })
}

fn run_transform(cfg: &ScenarioConfig) -> Result<RunOutput> {
    let phi = preset_by_name(&cfg.preset, PRESET_PERIOD, PRESET_SLAB)?;
    let field = InitialMagneticField::new(cfg.epsilon, phi)?;
    let nh = cfg.n.min(48);
    let cgrid = ChartGrid::for_profile(&field.phi, nh);
    let chart = assemble_chart(field, cgrid)?;
    let report = chart.report()?;
    let zgrid = Grid::new(
        [nh, nh, 2 * cfg.n],
        [PRESET_PERIOD, PRESET_PERIOD, 2.0 * PRESET_PERIOD],
    )?;
    let bg = StraightenedBackground::from_chart(&chart, zgrid, -4.0)?;
    let lines = vec![
        format!("chart assembled: preset {}, epsilon {}", cfg.preset, cfg.epsilon),
        format!("sup |B - Id| = {:.4e}", report.b_minus_id),
        format!("split identity residual = {:.3e}", report.split_identity),
        format!("round-trip residual = {:.3e}", report.round_trip),
    ];
    let mut files = Vec::new();
    if let Some(dir) = out_dir(cfg)? {
        let resid = serde_json::json!({
            "profile": report.profile,
            "epsilon": report.epsilon,
            "b_minus_id": report.b_minus_id,
            "a21_sup": report.a21_sup,
            "a31_minus_id": report.a31_minus_id,
            "frak_a1_minus_id": report.frak_a1_minus_id,
            "a2_forms_gap": report.a2_forms_gap,
            "split_identity": report.split_identity,
            "split_vs_product": report.split_vs_product,
            "split_mismatch_below": report.split_mismatch_below,
            "z_shift": report.z_shift,
            "round_trip": report.round_trip,
            "ytilde_above_slab": report.ytilde_above_slab,
        });
        let p = dir.join("chart_report.json");
        fs::write(&p, serde_json::to_string_pretty(&resid)?)?;
        files.push(p);
        let p = dir.join("ytilde.bin");
        let mut f = fs::File::create(&p)?;
        bg.ytilde.write_binary(&mut f)?;
        files.push(p);
        files.push(write_manifest(&dir, Subcommand::Transform, cfg, &resid)?);
    }
    Ok(RunOutput { lines, files })
}

fn run_norms(cfg: &ScenarioConfig) -> Result<RunOutput> {
    let grid = Grid::cubic(cfg.n, cfg.period)?;
    let part = DyadicPartition::new(grid.clone());
    let u = velocity_preset(&grid, &cfg.velocity, cfg.amplitude, cfg.seed)?;
    let table = vec![
        ("l2".to_string(), u.l2_norm()),
        ("h1".to_string(), u.sobolev_norm(1.0, false)),
        ("h2".to_string(), u.sobolev_norm(2.0, false)),
        ("sup".to_string(), u.lp_norm(f64::INFINITY)),
        (
            "aniso_0_-1/2_2_inf".to_string(),
            part.aniso_besov_norm(&u, 0.0, -0.5, 2.0, f64::INFINITY),
        ),
        (
            "aniso_5/2_-1/2_2_inf".to_string(),
            part.aniso_besov_norm(&u, 2.5, -0.5, 2.0, f64::INFINITY),
        ),
    ];
    let lines: Vec<String> = table
        .iter()
        .map(|(k, v)| format!("{k} = {v:.8e}"))
        .collect();
    let mut files = Vec::new();
    if let Some(dir) = out_dir(cfg)? {
        let mut csv = String::from("norm,value\n");
        for (k, v) in &table {
            csv.push_str(&format!("{k},{v:.12e}\n"));
        }
        let p = dir.join("norms.csv");
        fs::write(&p, csv)?;
        files.push(p);
        files.push(write_manifest(&dir, Subcommand::Norms, cfg, &serde_json::json!({}))?);
    }
    Ok(RunOutput { lines, files })
}

fn run_check_inequalities(cfg: &ScenarioConfig) -> Result<RunOutput> {
    let grid = Grid::cubic(cfg.n, cfg.period)?;
    let reports = run_battery(&grid, &CALIBRATION_SEEDS)?;
    let maxima = max_ratios(&reports);
    let mut lines = Vec::new();
    for (name, r) in &maxima {
        lines.push(format!("{name}: max ratio {r:.4}"));
    }
    let mut files = Vec::new();
    if let Some(dir) = out_dir(cfg)? {
        let mut csv = String::from("name,lhs,rhs,ratio,degenerate,seed,note\n");
        for r in &reports {
            csv.push_str(&format!(
                "{},{:.12e},{:.12e},{:.12e},{},{},{}\n",
                r.name,
                r.lhs,
                r.rhs,
                r.ratio,
                r.degenerate,
                r.field_seed.map(|s| s.to_string()).unwrap_or_default(),
                r.note.clone().unwrap_or_default()
            ));
        }
        let p = dir.join("inequalities.csv");
        fs::write(&p, csv)?;
        files.push(p);
        let summary: serde_json::Map<String, serde_json::Value> = maxima
            .iter()
            .map(|(k, v)| (k.clone(), serde_json::json!(v)))
            .collect();
        let p = dir.join("inequalities_summary.json");
        fs::write(&p, serde_json::to_string_pretty(&serde_json::Value::Object(summary.clone()))?)?;
        files.push(p);
        files.push(write_manifest(
            &dir,
            Subcommand::CheckInequalities,
            cfg,
            &serde_json::Value::Object(summary),
        )?);
    }
    Ok(RunOutput { lines, files })
}

/// Map an error to the process exit code: 2 for configuration problems,
/// 3 for numerical aborts and I/O failures.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::InvalidParameter(_) | Error::InvalidGrid(_) | Error::Serde(_) => 2,
        _ => 3,
    }
}

//! Dyadic frequency decomposition and the Besov-type norms built on it.
//!
//! The profile pair (phi, chi) follows the standard construction: chi is
//! a mollified step equal to 1 on [0, 3/4] and 0 on [4/3, inf), and
//! phi(tau) = chi(tau/2) - chi(tau), supported in [3/4, 8/3]. The
//! telescoping identity makes the dyadic partition of unity exact (up to
//! rounding) on any finite frequency range once the band range covers
//! it, which is what makes reconstruction tests meaningful at 1e-10.
//!
//! Blocks come in three flavours: isotropic (|xi|), horizontal (|xi_h|),
//! and vertical (|xi_3|). The anisotropic norm combines isotropic and
//! vertical blocks; the mean of a field (modes with vanishing modulus)
//! is carried by the chi low-pass, never by any band.

use crate::fields::{Grid, SpectralField};
use ndarray::Zip;
use num_complex::Complex64;
use std::sync::Arc;

/// Which modulus a dyadic block filters on.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Full,
    Horizontal,
    Vertical,
}

/// Smooth step: 0 for t <= 0, 1 for t >= 1, C-infinity in between.
pub fn smooth_step(t: f64) -> f64 {
    let bump = |t: f64| if t > 0.0 { (-1.0 / t).exp() } else { 0.0 };
    let a = bump(t);
    let b = bump(1.0 - t);
    if a == 0.0 && b == 0.0 {
        // only reachable at t outside [0,1] by rounding
        return if t >= 0.5 { 1.0 } else { 0.0 };
    }
    a / (a + b)
}

/// Low-pass profile: 1 on [0, 3/4], 0 on [4/3, inf).
pub fn chi(tau: f64) -> f64 {
    smooth_step((4.0 / 3.0 - tau) / (4.0 / 3.0 - 3.0 / 4.0))
}

/// Band profile supported in [3/4, 8/3]: phi(tau) = chi(tau/2) - chi(tau).
pub fn phi(tau: f64) -> f64 {
    chi(tau / 2.0) - chi(tau)
}

/// Isotropic Besov norm parameters (Lebesgue exponent p, summation r).
#[derive(Debug, Clone, Copy)]
pub struct BesovSpec {
    pub s: f64,
    pub p: f64,
    pub r: f64,
}

/// l^r sequence norm; r = infinity is the sup.
pub fn seq_norm(vals: impl IntoIterator<Item = f64>, r: f64) -> f64 {
    if r.is_infinite() {
        vals.into_iter().fold(0.0, f64::max)
    } else {
        vals.into_iter()
            .map(|v| v.powf(r))
            .sum::<f64>()
            .powf(1.0 / r)
    }
}

/// Dyadic partition bound to a grid: knows which bands are representable
/// in each direction and evaluates blocks and norms.
#[derive(Debug, Clone)]
pub struct DyadicPartition {
    pub grid: Arc<Grid>,
}

impl DyadicPartition {
    pub fn new(grid: Arc<Grid>) -> Self {
        DyadicPartition { grid }
    }

    fn modulus(&self, dir: Direction, idx: [usize; 3]) -> f64 {
        let xi = self.grid.xi(idx);
        match dir {
            Direction::Full => (xi[0] * xi[0] + xi[1] * xi[1] + xi[2] * xi[2]).sqrt(),
            Direction::Horizontal => (xi[0] * xi[0] + xi[1] * xi[1]).sqrt(),
            Direction::Vertical => xi[2].abs(),
        }
    }

    fn modulus_bounds(&self, dir: Direction) -> (f64, f64) {
        let g = &self.grid;
        let fun = |a: usize| 2.0 * std::f64::consts::PI / g.period[a];
        let nyq = |a: usize| std::f64::consts::PI * g.dims[a] as f64 / g.period[a];
        match dir {
            Direction::Full => (
                fun(0).min(fun(1)).min(fun(2)),
                (nyq(0).powi(2) + nyq(1).powi(2) + nyq(2).powi(2)).sqrt(),
            ),
            Direction::Horizontal => (fun(0).min(fun(1)), (nyq(0).powi(2) + nyq(1).powi(2)).sqrt()),
            Direction::Vertical => (fun(2), nyq(2)),
        }
    }

    /// Inclusive band range [j_min, j_max] such that the bands cover every
    /// representable nonzero modulus: chi(2^{-j_min} tau_min) = 0 and
    /// chi(2^{-(j_max+1)} tau_max) = 1.
    pub fn band_range(&self, dir: Direction) -> (i32, i32) {
        let (tmin, tmax) = self.modulus_bounds(dir);
        let j_min = (tmin * 3.0 / 4.0).log2().floor() as i32;
        let j_max = (tmax * 4.0 / 3.0).log2().ceil() as i32 - 1;
        (j_min, j_max)
    }

    /// Whether band j overlaps the representable modulus range.
    pub fn band_resolved(&self, j: i32, dir: Direction) -> bool {
        let (tmin, tmax) = self.modulus_bounds(dir);
        let lo = 0.75 * 2f64.powi(j);
        let hi = 8.0 / 3.0 * 2f64.powi(j);
        hi > tmin && lo < tmax
    }

    fn filtered(&self, a: &SpectralField, dir: Direction, f: impl Fn(f64) -> f64 + Sync) -> SpectralField {
        a.apply_multiplier(move |xi| {
            let m = match dir {
                Direction::Full => (xi[0] * xi[0] + xi[1] * xi[1] + xi[2] * xi[2]).sqrt(),
                Direction::Horizontal => (xi[0] * xi[0] + xi[1] * xi[1]).sqrt(),
                Direction::Vertical => xi[2].abs(),
            };
            Complex64::new(f(m), 0.0)
        })
    }

    /// Dyadic block Delta_j in the given direction.
    pub fn block(&self, a: &SpectralField, j: i32, dir: Direction) -> SpectralField {
        let scale = 2f64.powi(-j);
        self.filtered(a, dir, move |m| phi(scale * m))
    }

    /// Fat block Delta~_j = Delta_{j-1} + Delta_j + Delta_{j+1}.
    pub fn block_tilde(&self, a: &SpectralField, j: i32, dir: Direction) -> SpectralField {
        self.filtered(a, dir, move |m| {
            phi(2f64.powi(-(j - 1)) * m) + phi(2f64.powi(-j) * m) + phi(2f64.powi(-(j + 1)) * m)
        })
    }

    /// Low-pass S_j: chi(2^{-j} modulus); keeps the mean.
    pub fn low_pass(&self, a: &SpectralField, j: i32, dir: Direction) -> SpectralField {
        let scale = 2f64.powi(-j);
        self.filtered(a, dir, move |m| chi(scale * m))
    }

    /// Projection onto modes with vanishing modulus (the part no band sees).
    pub fn mean_part(&self, a: &SpectralField, dir: Direction) -> SpectralField {
        self.filtered(a, dir, |m| if m == 0.0 { 1.0 } else { 0.0 })
    }

    /// L2 norms of all blocks in one spectral pass (each mode overlaps at
    /// most two bands). Index 0 of the result is band j_min.
    pub fn band_l2_norms(&self, a: &SpectralField, dir: Direction) -> Vec<f64> {
        let (j_min, j_max) = self.band_range(dir);
        let nb = (j_max - j_min + 1) as usize;
        let mut acc = vec![0.0f64; nb];
        for c in 0..a.ncomp() {
            let coeffs = a.coeffs(c);
            Zip::indexed(coeffs).for_each(|(i, j, k), z| {
                let m = self.modulus(dir, [i, j, k]);
                if m == 0.0 {
                    return;
                }
                let e = z.norm_sqr();
                // bands with phi(2^{-jb} m) != 0 satisfy 3/4 < 2^{-jb} m < 8/3
                let lo = ((m * 3.0 / 8.0).log2().ceil() as i32).max(j_min);
                let hi = ((m * 4.0 / 3.0).log2().floor() as i32).min(j_max);
                for jb in lo..=hi {
                    let w = phi(2f64.powi(-jb) * m);
                    if w != 0.0 {
                        acc[(jb - j_min) as usize] += w * w * e;
                    }
                }
            });
        }
        let v = self.grid.volume();
        acc.into_iter().map(|x| (v * x).sqrt()).collect()
    }

    /// Isotropic homogeneous Besov norm per the dyadic definition.
    pub fn besov_norm(&self, a: &SpectralField, spec: BesovSpec) -> f64 {
        let (j_min, j_max) = self.band_range(Direction::Full);
        if (spec.p - 2.0).abs() < 1e-14 {
            let norms = self.band_l2_norms(a, Direction::Full);
            return seq_norm(
                norms
                    .iter()
                    .enumerate()
                    .map(|(i, n)| 2f64.powi(j_min + i as i32).powf(spec.s) * n),
                spec.r,
            );
        }
        let vals = (j_min..=j_max).map(|j| {
            let b = self.block(a, j, Direction::Full);
            2f64.powi(j).powf(spec.s) * b.lp_norm(spec.p)
        });
        seq_norm(vals, spec.r)
    }

    /// Besov norm extended past s >= 3/p by differentiating: reports
    /// max_{|beta| = k} of the norm of d^beta a at regularity s - k, with
    /// k minimal so that s - k < 3/p.
    pub fn besov_norm_extended(&self, a: &SpectralField, spec: BesovSpec) -> f64 {
        let crit = 3.0 / spec.p;
        if spec.s < crit {
            return self.besov_norm(a, spec);
        }
        let k = (spec.s - crit).floor() as u32 + 1;
        let shifted = BesovSpec {
            s: spec.s - k as f64,
            ..spec
        };
        let mut best = 0.0f64;
        // all multi-indices beta with |beta| = k
        for b1 in 0..=k {
            for b2 in 0..=(k - b1) {
                let b3 = k - b1 - b2;
                let mut d = a.clone();
                for (axis, ord) in [(1, b1), (2, b2), (3, b3)] {
                    if ord > 0 {
                        d = d.derivative(axis, ord);
                    }
                }
                best = best.max(self.besov_norm(&d, shifted));
            }
        }
        best
    }

    /// L2 norms of the double blocks Delta_j Delta^v_l in one pass.
    /// Rows are isotropic bands (from full j_min), columns vertical bands
    /// (from vertical l_min).
    pub fn double_band_l2_norms(&self, a: &SpectralField) -> Vec<Vec<f64>> {
        let (j_min, j_max) = self.band_range(Direction::Full);
        let (l_min, l_max) = self.band_range(Direction::Vertical);
        let nj = (j_max - j_min + 1) as usize;
        let nl = (l_max - l_min + 1) as usize;
        let mut acc = vec![vec![0.0f64; nl]; nj];
        for c in 0..a.ncomp() {
            Zip::indexed(a.coeffs(c)).for_each(|(i, j, k), z| {
                let mf = self.modulus(Direction::Full, [i, j, k]);
                let mv = self.modulus(Direction::Vertical, [i, j, k]);
                if mf == 0.0 || mv == 0.0 {
                    return;
                }
                let e = z.norm_sqr();
                let jlo = ((mf * 3.0 / 8.0).log2().ceil() as i32).max(j_min);
                let jhi = ((mf * 4.0 / 3.0).log2().floor() as i32).min(j_max);
                let llo = ((mv * 3.0 / 8.0).log2().ceil() as i32).max(l_min);
                let lhi = ((mv * 4.0 / 3.0).log2().floor() as i32).min(l_max);
                for jb in jlo..=jhi {
                    let wj = phi(2f64.powi(-jb) * mf);
                    if wj == 0.0 {
                        continue;
                    }
                    for lb in llo..=lhi {
                        let wl = phi(2f64.powi(-lb) * mv);
                        if wl != 0.0 {
                            acc[(jb - j_min) as usize][(lb - l_min) as usize] += wj * wj * wl * wl * e;
                        }
                    }
                }
            });
        }
        let v = self.grid.volume();
        acc.into_iter()
            .map(|row| row.into_iter().map(|x| (v * x).sqrt()).collect())
            .collect()
    }

    /// Anisotropic norm: outer l^{r1} over isotropic bands of the inner
    /// l^{r2} over vertical bands of 2^{j s1} 2^{l s2} ||Delta_j Delta^v_l a||_{L2}.
    pub fn aniso_besov_norm(&self, a: &SpectralField, s1: f64, s2: f64, r1: f64, r2: f64) -> f64 {
        let (j_min, _) = self.band_range(Direction::Full);
        let (l_min, _) = self.band_range(Direction::Vertical);
        let table = self.double_band_l2_norms(a);
        let outer = table.iter().enumerate().map(|(ji, row)| {
            let wj = 2f64.powi(j_min + ji as i32).powf(s1);
            let inner = seq_norm(
                row.iter()
                    .enumerate()
                    .map(|(li, n)| 2f64.powi(l_min + li as i32).powf(s2) * n),
                r2,
            );
            wj * inner
        });
        seq_norm(outer, r1)
    }

    /// L^q-in-time (trapezoidal) inside the band sum, then the isotropic
    /// Besov sequence norm outside.
    pub fn chemin_lerner_besov(
        &self,
        series: &[SpectralField],
        dt: f64,
        q: f64,
        spec: BesovSpec,
    ) -> f64 {
        assert!(!series.is_empty(), "empty time series");
        let (j_min, j_max) = self.band_range(Direction::Full);
        let nb = (j_max - j_min + 1) as usize;
        // per-band time traces of ||Delta_j a(t)||_{L^p}
        let mut traces = vec![Vec::with_capacity(series.len()); nb];
        for snap in series {
            if (spec.p - 2.0).abs() < 1e-14 {
                for (bi, n) in self.band_l2_norms(snap, Direction::Full).into_iter().enumerate() {
                    traces[bi].push(n);
                }
            } else {
                for (bi, j) in (j_min..=j_max).enumerate() {
                    traces[bi].push(self.block(snap, j, Direction::Full).lp_norm(spec.p));
                }
            }
        }
        let vals = traces.iter().enumerate().map(|(bi, tr)| {
            2f64.powi(j_min + bi as i32).powf(spec.s) * time_lq(tr, dt, q)
        });
        seq_norm(vals, spec.r)
    }

    /// Chemin-Lerner version of the anisotropic norm.
    pub fn chemin_lerner_aniso(
        &self,
        series: &[SpectralField],
        dt: f64,
        q: f64,
        s1: f64,
        s2: f64,
        r1: f64,
        r2: f64,
    ) -> f64 {
        assert!(!series.is_empty(), "empty time series");
        let (j_min, _) = self.band_range(Direction::Full);
        let (l_min, _) = self.band_range(Direction::Vertical);
        let tables: Vec<Vec<Vec<f64>>> =
            series.iter().map(|s| self.double_band_l2_norms(s)).collect();
        let nj = tables[0].len();
        let nl = tables[0][0].len();
        let outer = (0..nj).map(|ji| {
            let wj = 2f64.powi(j_min + ji as i32).powf(s1);
            let inner = seq_norm(
                (0..nl).map(|li| {
                    let tr: Vec<f64> = tables.iter().map(|t| t[ji][li]).collect();
                    2f64.powi(l_min + li as i32).powf(s2) * time_lq(&tr, dt, q)
                }),
                r2,
            );
            wj * inner
        });
        seq_norm(outer, r1)
    }

    /// Paraproducts and remainder: T(a,b) = sum_j S_{j-1}a Delta_j b,
    /// Tbar = T(b,a), R = sum_j Delta_j a Delta~_j b plus the mean-mean
    /// pair neither paraproduct sees. T + Tbar + R = ab up to dealiasing.
    pub fn bony_decompose(
        &self,
        a: &SpectralField,
        b: &SpectralField,
    ) -> (SpectralField, SpectralField, SpectralField) {
        let dir = Direction::Full;
        let (j_min, j_max) = self.band_range(dir);
        let mut t = SpectralField::zeros(a.grid.clone(), 1);
        let mut tbar = SpectralField::zeros(a.grid.clone(), 1);
        let mut r = SpectralField::zeros(a.grid.clone(), 1);
        for j in j_min..=j_max {
            let da = self.block(a, j, dir);
            let db = self.block(b, j, dir);
            let sa = self.low_pass(a, j - 1, dir);
            let sb = self.low_pass(b, j - 1, dir);
            t.add_assign(&sa.dealiased_product(&db).expect("same grid"));
            tbar.add_assign(&sb.dealiased_product(&da).expect("same grid"));
            r.add_assign(&da.dealiased_product(&self.block_tilde(b, j, dir)).expect("same grid"));
            let _ = db;
        }
        let ma = self.mean_part(a, dir);
        let mb = self.mean_part(b, dir);
        r.add_assign(&ma.dealiased_product(&mb).expect("same grid"));
        (t, tbar, r)
    }

    /// The nine-fold simultaneous decomposition: isotropic Bony applied
    /// jointly with vertical Bony. Returns the pieces (TT^v, TTbar^v,
    /// TR^v, ...) as named fields summing to ab up to dealiasing.
    pub fn ninefold_decompose(
        &self,
        a: &SpectralField,
        b: &SpectralField,
    ) -> Vec<(String, SpectralField)> {
        let iso = self.pair_multipliers(Direction::Full);
        let vert = self.pair_multipliers(Direction::Vertical);
        let kinds = ["T", "Tb", "R"];
        let mut out = Vec::with_capacity(9);
        for (pi, ppairs) in iso.iter().enumerate() {
            for (qi, qpairs) in vert.iter().enumerate() {
                let mut piece = SpectralField::zeros(a.grid.clone(), 1);
                for (pa, pb) in ppairs {
                    for (qa, qb) in qpairs {
                        let fa = self.filtered2(a, pa, qa);
                        let fb = self.filtered2(b, pb, qb);
                        piece.add_assign(&fa.dealiased_product(&fb).expect("same grid"));
                    }
                }
                out.push((format!("{}{}v", kinds[pi], kinds[qi]), piece));
            }
        }
        out
    }

    /// The (multiplier_a, multiplier_b) pairs realizing T, Tbar, R in one
    /// direction; summing pa(xi)*pb(eta) over all pairs of all three
    /// groups gives 1 for every (xi, eta).
    #[allow(clippy::type_complexity)]
    fn pair_multipliers(&self, dir: Direction) -> [Vec<(BandFilter, BandFilter)>; 3] {
        let (j_min, j_max) = self.band_range(dir);
        let mut t = Vec::new();
        let mut tb = Vec::new();
        let mut r = Vec::new();
        for j in j_min..=j_max {
            t.push((BandFilter::low(j - 1, dir), BandFilter::band(j, dir)));
            tb.push((BandFilter::band(j, dir), BandFilter::low(j - 1, dir)));
            r.push((BandFilter::band(j, dir), BandFilter::fat(j, dir)));
        }
        r.push((BandFilter::mean(dir), BandFilter::mean(dir)));
        [t, tb, r]
    }

    fn filtered2(&self, a: &SpectralField, f1: &BandFilter, f2: &BandFilter) -> SpectralField {
        a.apply_multiplier(|xi| Complex64::new(f1.eval(xi) * f2.eval(xi), 0.0))
    }
}

/// One spectral cutoff used by the paraproduct machinery.
#[derive(Debug, Clone, Copy)]
struct BandFilter {
    kind: u8, // 0 band, 1 low-pass, 2 fat band, 3 mean
    j: i32,
    dir: Direction,
}

impl BandFilter {
    fn band(j: i32, dir: Direction) -> Self {
        BandFilter { kind: 0, j, dir }
    }
    fn low(j: i32, dir: Direction) -> Self {
        BandFilter { kind: 1, j, dir }
    }
    fn fat(j: i32, dir: Direction) -> Self {
        BandFilter { kind: 2, j, dir }
    }
    fn mean(dir: Direction) -> Self {
        BandFilter { kind: 3, j: 0, dir }
    }

    fn eval(&self, xi: [f64; 3]) -> f64 {
        let m = match self.dir {
            Direction::Full => (xi[0] * xi[0] + xi[1] * xi[1] + xi[2] * xi[2]).sqrt(),
            Direction::Horizontal => (xi[0] * xi[0] + xi[1] * xi[1]).sqrt(),
            Direction::Vertical => xi[2].abs(),
        };
        match self.kind {
            0 => phi(2f64.powi(-self.j) * m),
            1 => chi(2f64.powi(-self.j) * m),
            2 => {
                phi(2f64.powi(-(self.j - 1)) * m)
                    + phi(2f64.powi(-self.j) * m)
                    + phi(2f64.powi(-(self.j + 1)) * m)
            }
            _ => {
                if m == 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

/// Trapezoidal L^q norm in time of a sampled trace; q = infinity is sup.
pub fn time_lq(trace: &[f64], dt: f64, q: f64) -> f64 {
    if q.is_infinite() {
        return trace.iter().fold(0.0, |m, &v| m.max(v));
    }
    if trace.len() == 1 {
        return 0.0;
    }
    let mut s = 0.0;
    for (i, &v) in trace.iter().enumerate() {
        let w = if i == 0 || i == trace.len() - 1 { 0.5 } else { 1.0 };
        s += w * v.powf(q);
    }
    (dt * s).powf(1.0 / q)
}

//! Periodic-grid field representation: spectral differentiation, Leray
//! projection, dealiased products, and the norms everything else is
//! built on.
//!
//! A [`SpectralField`] stores Fourier mode amplitudes for 1 or 3
//! components on a [`Grid`]; physical samples are recovered on demand.
//! All norms use the measure `(L1 L2 L3)/(N1 N2 N3)` per grid point so
//! values are resolution-stable.

use crate::error::{Error, Result};
use crate::fft;
use ndarray::{Array3, Zip};
use num_complex::Complex64;
use std::io::{Read, Write};
use std::sync::Arc;

/// Periodic tensor grid `[0,L1) x [0,L2) x [0,L3)` with even dims.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    pub dims: [usize; 3],
    pub period: [f64; 3],
    pub dealias_fraction: f64,
}

impl Grid {
    pub fn new(dims: [usize; 3], period: [f64; 3]) -> Result<Arc<Self>> {
        Self::with_dealias(dims, period, 2.0 / 3.0)
    }

    pub fn with_dealias(dims: [usize; 3], period: [f64; 3], frac: f64) -> Result<Arc<Self>> {
        for &n in &dims {
            if n == 0 || n % 2 != 0 {
                return Err(Error::InvalidGrid(format!(
                    "dims must be positive even, got {n}"
                )));
            }
        }
        for &l in &period {
            if !(l > 0.0) {
                return Err(Error::InvalidGrid(format!("period must be positive, got {l}")));
            }
        }
        if !(frac > 0.0 && frac <= 1.0) {
            return Err(Error::InvalidGrid(format!(
                "dealias_fraction must be in (0,1], got {frac}"
            )));
        }
        Ok(Arc::new(Grid {
            dims,
            period,
            dealias_fraction: frac,
        }))
    }

    /// Cube `[0,L)^3` at resolution `n`.
    pub fn cubic(n: usize, l: f64) -> Result<Arc<Self>> {
        Self::new([n, n, n], [l, l, l])
    }

    #[inline]
    pub fn cell_volume(&self) -> f64 {
        self.volume() / (self.dims[0] * self.dims[1] * self.dims[2]) as f64
    }

    #[inline]
    pub fn volume(&self) -> f64 {
        self.period[0] * self.period[1] * self.period[2]
    }

    /// Physical coordinate of sample `(i,j,k)`.
    #[inline]
    pub fn point(&self, idx: [usize; 3]) -> [f64; 3] {
        [
            idx[0] as f64 * self.period[0] / self.dims[0] as f64,
            idx[1] as f64 * self.period[1] / self.dims[1] as f64,
            idx[2] as f64 * self.period[2] / self.dims[2] as f64,
        ]
    }

    /// Continuous frequency `2 pi k / L` for storage index `m` on `axis`.
    #[inline]
    pub fn frequency(&self, axis: usize, m: usize) -> f64 {
        let k = fft::index_to_wavenumber(m, self.dims[axis]);
        2.0 * std::f64::consts::PI * k as f64 / self.period[axis]
    }

    /// Frequency 3-vector at mode index `(m0,m1,m2)`.
    #[inline]
    pub fn xi(&self, idx: [usize; 3]) -> [f64; 3] {
        [
            self.frequency(0, idx[0]),
            self.frequency(1, idx[1]),
            self.frequency(2, idx[2]),
        ]
    }

    /// Frequency 3-vector with Nyquist entries replaced by zero — the
    /// effective symbol of first-order spectral differentiation on real
    /// fields. Divergence/gradient/Leray all share this convention so
    /// that `div . leray` vanishes identically.
    #[inline]
    pub fn xi_deriv(&self, idx: [usize; 3]) -> [f64; 3] {
        let mut xi = self.xi(idx);
        for a in 0..3 {
            if idx[a] == self.dims[a] / 2 {
                xi[a] = 0.0;
            }
        }
        xi
    }

    /// 2/3-rule style mask: keep `|k_i| <= frac * N_i / 2` on every axis.
    #[inline]
    pub fn in_dealias_mask(&self, idx: [usize; 3]) -> bool {
        for axis in 0..3 {
            let k = fft::index_to_wavenumber(idx[axis], self.dims[axis]).unsigned_abs() as f64;
            if k > self.dealias_fraction * self.dims[axis] as f64 / 2.0 {
                return false;
            }
        }
        true
    }

    /// Largest resolved |xi| (after Nyquist, before dealiasing).
    pub fn max_frequency(&self) -> f64 {
        let mut s = 0.0;
        for axis in 0..3 {
            let f = std::f64::consts::PI * self.dims[axis] as f64 / self.period[axis];
            s += f * f;
        }
        s.sqrt()
    }

    /// Smallest nonzero |frequency| on any axis.
    pub fn min_frequency(&self) -> f64 {
        (0..3)
            .map(|a| 2.0 * std::f64::consts::PI / self.period[a])
            .fold(f64::INFINITY, f64::min)
    }
}

/// Scalar (1 component) or vector (3 components) field stored as Fourier
/// amplitudes.
#[derive(Debug, Clone)]
pub struct SpectralField {
    pub grid: Arc<Grid>,
    comps: Vec<Array3<Complex64>>,
}

impl SpectralField {
    pub fn zeros(grid: Arc<Grid>, ncomp: usize) -> Self {
        assert!(ncomp == 1 || ncomp == 3, "fields are scalar or 3-vector");
        let d = grid.dims;
        SpectralField {
            grid,
            comps: (0..ncomp)
                .map(|_| Array3::zeros((d[0], d[1], d[2])))
                .collect(),
        }
    }

    pub fn from_coefficients(grid: Arc<Grid>, comps: Vec<Array3<Complex64>>) -> Self {
        assert!(comps.len() == 1 || comps.len() == 3);
        for c in &comps {
            assert_eq!(c.shape(), &grid.dims);
        }
        SpectralField { grid, comps }
    }

    /// Build from real physical samples.
    pub fn from_physical(grid: Arc<Grid>, phys: Vec<Array3<f64>>) -> Self {
        let comps = phys
            .into_iter()
            .map(|p| {
                let mut c = p.mapv(|v| Complex64::new(v, 0.0));
                fft::forward3(&mut c);
                c
            })
            .collect();
        SpectralField { grid, comps }
    }

    /// Sample a scalar function on the grid.
    pub fn from_fn_scalar(grid: Arc<Grid>, f: impl Fn([f64; 3]) -> f64 + Sync) -> Self {
        let d = grid.dims;
        let mut p = Array3::zeros((d[0], d[1], d[2]));
        Zip::indexed(&mut p).par_for_each(|(i, j, k), v| {
            *v = f(grid.point([i, j, k]));
        });
        Self::from_physical(grid.clone(), vec![p])
    }

    /// Sample a vector function on the grid.
    pub fn from_fn_vector(grid: Arc<Grid>, f: impl Fn([f64; 3]) -> [f64; 3] + Sync) -> Self {
        let d = grid.dims;
        let mut ps: Vec<Array3<f64>> = (0..3).map(|_| Array3::zeros((d[0], d[1], d[2]))).collect();
        for (c, arr) in ps.iter_mut().enumerate() {
            Zip::indexed(arr).par_for_each(|(i, j, k), v| {
                *v = f(grid.point([i, j, k]))[c];
            });
        }
        Self::from_physical(grid.clone(), ps)
    }

    #[inline]
    pub fn ncomp(&self) -> usize {
        self.comps.len()
    }

    #[inline]
    pub fn coeffs(&self, c: usize) -> &Array3<Complex64> {
        &self.comps[c]
    }

    #[inline]
    pub fn coeffs_mut(&mut self, c: usize) -> &mut Array3<Complex64> {
        &mut self.comps[c]
    }

    pub fn into_coeffs(self) -> Vec<Array3<Complex64>> {
        self.comps
    }

    /// Physical samples (real part after inverse transform).
    pub fn to_physical(&self) -> Vec<Array3<f64>> {
        self.comps
            .iter()
            .map(|c| {
                let mut w = c.clone();
                fft::inverse3(&mut w);
                w.mapv(|z| z.re)
            })
            .collect()
    }

    /// Max imaginary residual of the inverse transform; ~0 for
    /// Hermitian-symmetric coefficients.
    pub fn realness_residual(&self) -> f64 {
        self.comps
            .iter()
            .map(|c| {
                let mut w = c.clone();
                fft::inverse3(&mut w);
                w.iter().map(|z| z.im.abs()).fold(0.0, f64::max)
            })
            .fold(0.0, f64::max)
    }

    /// Apply a per-mode multiplier `m(xi)` to every component.
    pub fn apply_multiplier(&self, m: impl Fn([f64; 3]) -> Complex64 + Sync) -> Self {
        let grid = self.grid.clone();
        let comps = self
            .comps
            .iter()
            .map(|c| {
                let mut out = c.clone();
                Zip::indexed(&mut out).par_for_each(|(i, j, k), v| {
                    *v *= m(grid.xi([i, j, k]));
                });
                out
            })
            .collect();
        SpectralField {
            grid: self.grid.clone(),
            comps,
        }
    }

    /// Spectral derivative of given order along `axis` (1-based 1|2|3).
    ///
    /// Odd orders zero the Nyquist plane so real fields stay real.
    pub fn derivative(&self, axis: usize, order: u32) -> Self {
        assert!((1..=3).contains(&axis), "axis is 1, 2 or 3");
        let ax = axis - 1;
        let n = self.grid.dims[ax];
        let odd = order % 2 == 1;
        let grid = self.grid.clone();
        let comps = self
            .comps
            .iter()
            .map(|c| {
                let mut out = c.clone();
                Zip::indexed(&mut out).par_for_each(|(i, j, k), v| {
                    let idx = [i, j, k];
                    let m = idx[ax];
                    if odd && m == n / 2 {
                        *v = Complex64::new(0.0, 0.0);
                    } else {
                        let xi = grid.frequency(ax, m);
                        *v *= Complex64::new(0.0, xi).powu(order);
                    }
                });
                out
            })
            .collect();
        SpectralField {
            grid: self.grid.clone(),
            comps,
        }
    }

    /// Gradient of a scalar field.
    pub fn gradient(&self) -> Self {
        assert_eq!(self.ncomp(), 1);
        let comps = (1..=3)
            .map(|axis| self.derivative(axis, 1).comps.swap_remove(0))
            .collect();
        SpectralField {
            grid: self.grid.clone(),
            comps,
        }
    }

    /// Divergence of a vector field.
    pub fn divergence(&self) -> Self {
        assert_eq!(self.ncomp(), 3);
        let mut out = self.component(0).derivative(1, 1);
        for axis in 2..=3 {
            let d = self.component(axis - 1).derivative(axis, 1);
            out.add_assign(&d);
        }
        out
    }

    /// Laplacian (any component count).
    pub fn laplacian(&self) -> Self {
        self.apply_multiplier(|xi| {
            Complex64::new(-(xi[0] * xi[0] + xi[1] * xi[1] + xi[2] * xi[2]), 0.0)
        })
    }

    /// Inverse Laplacian with the zero mode mapped to zero.
    pub fn inverse_laplacian(&self) -> Self {
        self.apply_multiplier(|xi| {
            let s = xi[0] * xi[0] + xi[1] * xi[1] + xi[2] * xi[2];
            if s == 0.0 {
                Complex64::new(0.0, 0.0)
            } else {
                Complex64::new(-1.0 / s, 0.0)
            }
        })
    }

    /// View of one component as a scalar field (clones coefficients).
    pub fn component(&self, c: usize) -> Self {
        SpectralField {
            grid: self.grid.clone(),
            comps: vec![self.comps[c].clone()],
        }
    }

    /// Bundle three scalar fields into a vector field.
    pub fn from_components(parts: [SpectralField; 3]) -> Self {
        let grid = parts[0].grid.clone();
        let comps = parts
            .into_iter()
            .map(|mut p| {
                assert_eq!(p.ncomp(), 1);
                p.comps.swap_remove(0)
            })
            .collect();
        SpectralField { grid, comps }
    }

    pub fn add_assign(&mut self, rhs: &SpectralField) {
        assert_eq!(self.ncomp(), rhs.ncomp());
        for (a, b) in self.comps.iter_mut().zip(rhs.comps.iter()) {
            Zip::from(a).and(b).par_for_each(|x, y| *x += *y);
        }
    }

    pub fn sub_assign(&mut self, rhs: &SpectralField) {
        assert_eq!(self.ncomp(), rhs.ncomp());
        for (a, b) in self.comps.iter_mut().zip(rhs.comps.iter()) {
            Zip::from(a).and(b).par_for_each(|x, y| *x -= *y);
        }
    }

    pub fn scale(&self, s: f64) -> Self {
        let comps = self.comps.iter().map(|c| c.mapv(|z| z * s)).collect();
        SpectralField {
            grid: self.grid.clone(),
            comps,
        }
    }

    pub fn axpy(&mut self, alpha: f64, rhs: &SpectralField) {
        for (a, b) in self.comps.iter_mut().zip(rhs.comps.iter()) {
            Zip::from(a).and(b).par_for_each(|x, y| *x += alpha * *y);
        }
    }

    /// Zero all modes outside the dealias mask.
    pub fn dealias(&self) -> Self {
        let grid = self.grid.clone();
        let comps = self
            .comps
            .iter()
            .map(|c| {
                let mut out = c.clone();
                Zip::indexed(&mut out).par_for_each(|(i, j, k), v| {
                    if !grid.in_dealias_mask([i, j, k]) {
                        *v = Complex64::new(0.0, 0.0);
                    }
                });
                out
            })
            .collect();
        SpectralField {
            grid: self.grid.clone(),
            comps,
        }
    }

    /// L2 norm (Parseval, volume measure).
    pub fn l2_norm(&self) -> f64 {
        let v = self.grid.volume();
        let s: f64 = self
            .comps
            .iter()
            .map(|c| c.iter().map(|z| z.norm_sqr()).sum::<f64>())
            .sum();
        (v * s).sqrt()
    }

    /// L2 inner product `(self | rhs)` summed over components.
    pub fn l2_inner(&self, rhs: &SpectralField) -> f64 {
        assert_eq!(self.ncomp(), rhs.ncomp());
        let v = self.grid.volume();
        let s: f64 = self
            .comps
            .iter()
            .zip(rhs.comps.iter())
            .map(|(a, b)| {
                a.iter()
                    .zip(b.iter())
                    .map(|(x, y)| (x.conj() * y).re)
                    .sum::<f64>()
            })
            .sum();
        v * s
    }

    /// Sobolev norm: weight `(1+|xi|^2)^s` (inhomogeneous) or `|xi|^{2s}`
    /// (homogeneous) on the squared amplitudes.
    pub fn sobolev_norm(&self, s: f64, homogeneous: bool) -> f64 {
        let v = self.grid.volume();
        let grid = &self.grid;
        let mut total = 0.0;
        for c in &self.comps {
            let mut part = 0.0;
            Zip::indexed(c).for_each(|(i, j, k), z| {
                let xi = grid.xi([i, j, k]);
                let q = xi[0] * xi[0] + xi[1] * xi[1] + xi[2] * xi[2];
                let w = if homogeneous {
                    if q == 0.0 {
                        0.0
                    } else {
                        q.powf(s)
                    }
                } else {
                    (1.0 + q).powf(s)
                };
                part += w * z.norm_sqr();
            });
            total += part;
        }
        (v * total).sqrt()
    }

    /// Physical-space Lp norm (p = infinity as `f64::INFINITY`).
    pub fn lp_norm(&self, p: f64) -> f64 {
        let phys = self.to_physical();
        let dv = self.grid.cell_volume();
        if p.is_infinite() {
            phys.iter()
                .map(|a| a.iter().map(|v| v.abs()).fold(0.0, f64::max))
                .fold(0.0, f64::max)
        } else if self.ncomp() == 1 {
            let s: f64 = phys[0].iter().map(|v| v.abs().powf(p)).sum();
            (dv * s).powf(1.0 / p)
        } else {
            // vector: pointwise Euclidean magnitude
            let mut s = 0.0;
            Zip::from(&phys[0])
                .and(&phys[1])
                .and(&phys[2])
                .for_each(|a, b, c| {
                    s += (a * a + b * b + c * c).sqrt().powf(p);
                });
            (dv * s).powf(1.0 / p)
        }
    }

    /// Sup-norm of the spectral divergence over modes (for div-free checks).
    pub fn divergence_sup_modes(&self) -> f64 {
        let div = self.divergence();
        div.comps[0].iter().map(|z| z.norm()).fold(0.0, f64::max)
    }

    /// Mixed norm `L^{ph}_h(L^{qv}_v)`: inner vertical quadrature, outer
    /// horizontal norm. Infinite exponents mean sup.
    pub fn mixed_norm(&self, ph: f64, qv: f64) -> f64 {
        assert_eq!(self.ncomp(), 1, "mixed norms are for scalar fields");
        let phys = &self.to_physical()[0];
        let [n1, n2, n3] = self.grid.dims;
        let dv3 = self.grid.period[2] / n3 as f64;
        let dah = (self.grid.period[0] / n1 as f64) * (self.grid.period[1] / n2 as f64);
        let mut acc: f64 = 0.0;
        let mut sup: f64 = 0.0;
        for i in 0..n1 {
            for j in 0..n2 {
                let mut inner = 0.0f64;
                let mut isup = 0.0f64;
                for k in 0..n3 {
                    let v = phys[[i, j, k]].abs();
                    if qv.is_infinite() {
                        isup = isup.max(v);
                    } else {
                        inner += v.powf(qv);
                    }
                }
                let col = if qv.is_infinite() {
                    isup
                } else {
                    (dv3 * inner).powf(1.0 / qv)
                };
                if ph.is_infinite() {
                    sup = sup.max(col);
                } else {
                    acc += col.powf(ph);
                }
            }
        }
        if ph.is_infinite() {
            sup
        } else {
            (dah * acc).powf(1.0 / ph)
        }
    }

    /// Dealiased pointwise product of two scalar fields.
    pub fn dealiased_product(&self, rhs: &SpectralField) -> Result<SpectralField> {
        if self.grid != rhs.grid {
            return Err(Error::GridMismatch);
        }
        assert_eq!(self.ncomp(), 1);
        assert_eq!(rhs.ncomp(), 1);
        let a = self.dealias().to_physical().swap_remove(0);
        let b = rhs.dealias().to_physical().swap_remove(0);
        let mut prod = Array3::zeros(a.raw_dim());
        Zip::from(&mut prod).and(&a).and(&b).par_for_each(|p, x, y| {
            *p = Complex64::new(x * y, 0.0);
        });
        fft::forward3(&mut prod);
        let out = SpectralField {
            grid: self.grid.clone(),
            comps: vec![prod],
        };
        Ok(out.dealias())
    }

    /// Leray projection onto divergence-free fields; the zero mode passes
    /// through unchanged.
    pub fn leray_project(&self) -> Self {
        assert_eq!(self.ncomp(), 3);
        let grid = self.grid.clone();
        let mut out = self.clone();
        let (c0, rest) = out.comps.split_at_mut(1);
        let (c1, c2) = rest.split_at_mut(1);
        Zip::indexed(&mut c0[0])
            .and(&mut c1[0])
            .and(&mut c2[0])
            .par_for_each(|(i, j, k), u0, u1, u2| {
                let xi = grid.xi_deriv([i, j, k]);
                let q = xi[0] * xi[0] + xi[1] * xi[1] + xi[2] * xi[2];
                if q == 0.0 {
                    return;
                }
                let dot = (*u0 * xi[0] + *u1 * xi[1] + *u2 * xi[2]) / q;
                *u0 -= dot * xi[0];
                *u1 -= dot * xi[1];
                *u2 -= dot * xi[2];
            });
        out
    }

    /// Binary snapshot: little-endian header (dims, period, ncomp) then
    /// C-order f64 physical samples per component.
    pub fn write_binary(&self, w: &mut impl Write) -> Result<()> {
        w.write_all(b"MHDF")?;
        for &n in &self.grid.dims {
            w.write_all(&(n as u64).to_le_bytes())?;
        }
        for &l in &self.grid.period {
            w.write_all(&l.to_le_bytes())?;
        }
        w.write_all(&(self.ncomp() as u64).to_le_bytes())?;
        for p in self.to_physical() {
            for v in p.iter() {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read_binary(r: &mut impl Read) -> Result<SpectralField> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != b"MHDF" {
            return Err(Error::InvalidParameter("bad field file magic".into()));
        }
        let mut b8 = [0u8; 8];
        let mut dims = [0usize; 3];
        for d in dims.iter_mut() {
            r.read_exact(&mut b8)?;
            *d = u64::from_le_bytes(b8) as usize;
        }
        let mut period = [0f64; 3];
        for l in period.iter_mut() {
            r.read_exact(&mut b8)?;
            *l = f64::from_le_bytes(b8);
        }
        r.read_exact(&mut b8)?;
        let ncomp = u64::from_le_bytes(b8) as usize;
        let grid = Grid::new(dims, period)?;
        let mut phys = Vec::with_capacity(ncomp);
        for _ in 0..ncomp {
            let mut a = Array3::zeros((dims[0], dims[1], dims[2]));
            for v in a.iter_mut() {
                r.read_exact(&mut b8)?;
                *v = f64::from_le_bytes(b8);
            }
            phys.push(a);
        }
        Ok(SpectralField::from_physical(grid, phys))
    }

    /// CSV dump of physical samples (small grids).
    pub fn write_csv(&self, w: &mut impl Write) -> Result<()> {
        let phys = self.to_physical();
        write!(w, "x1,x2,x3")?;
        for c in 0..self.ncomp() {
            write!(w, ",comp{c}")?;
        }
        writeln!(w)?;
        let [n1, n2, n3] = self.grid.dims;
        for i in 0..n1 {
            for j in 0..n2 {
                for k in 0..n3 {
                    let p = self.grid.point([i, j, k]);
                    write!(w, "{},{},{}", p[0], p[1], p[2])?;
                    for c in 0..self.ncomp() {
                        write!(w, ",{}", phys[c][[i, j, k]])?;
                    }
                    writeln!(w)?;
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn random_scalar(grid: &Arc<Grid>, seed: u64) -> SpectralField {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = grid.dims;
        let p = Array3::from_shape_fn((d[0], d[1], d[2]), |_| rng.gen_range(-1.0..1.0));
        SpectralField::from_physical(grid.clone(), vec![p])
    }

    fn random_vector(grid: &Arc<Grid>, seed: u64) -> SpectralField {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = grid.dims;
        let ps = (0..3)
            .map(|_| Array3::from_shape_fn((d[0], d[1], d[2]), |_| rng.gen_range(-1.0..1.0)))
            .collect();
        SpectralField::from_physical(grid.clone(), ps)
    }

    fn sup_diff(a: &SpectralField, b: &SpectralField) -> f64 {
        let mut d = a.clone();
        d.sub_assign(b);
        d.lp_norm(f64::INFINITY)
    }

    #[test]
    fn grid_rejects_odd_or_zero_dims() {
        assert!(Grid::new([7, 8, 8], [1.0, 1.0, 1.0]).is_err());
        assert!(Grid::new([8, 0, 8], [1.0, 1.0, 1.0]).is_err());
        assert!(Grid::new([8, 8, 8], [1.0, -1.0, 1.0]).is_err());
        assert!(Grid::with_dealias([8, 8, 8], [1.0, 1.0, 1.0], 0.0).is_err());
    }

    #[test]
    fn derivative_single_mode() {
        let l = 3.0;
        let grid = Grid::new([16, 4, 4], [l, 2.0 * PI, 2.0 * PI]).unwrap();
        let f = SpectralField::from_fn_scalar(grid.clone(), |x| (2.0 * PI * x[0] / l).sin());
        let df = f.derivative(1, 1);
        let expect = SpectralField::from_fn_scalar(grid, |x| {
            (2.0 * PI / l) * (2.0 * PI * x[0] / l).cos()
        });
        assert!(sup_diff(&df, &expect) < 1e-12);
    }

    #[test]
    fn derivative_of_constant_is_zero() {
        let grid = Grid::cubic(8, 2.0 * PI).unwrap();
        let f = SpectralField::from_fn_scalar(grid, |_| 2.5);
        for axis in 1..=3 {
            assert!(f.derivative(axis, 1).l2_norm() < 1e-13);
        }
    }

    #[test]
    fn derivative_matches_finite_differences() {
        // f = exp(sin x1), L1 = 2 pi, N1 = 64; 4th-order central stencil.
        let n = 64;
        let grid = Grid::new([n, 4, 4], [2.0 * PI, 2.0 * PI, 2.0 * PI]).unwrap();
        let f = SpectralField::from_fn_scalar(grid.clone(), |x| x[0].sin().exp());
        let df = f.derivative(1, 1).to_physical().remove(0);
        let g = |x: f64| x.sin().exp();
        let h = 2.0 * PI / 2048.0; // oracle step, truncation error ~ h^4
        for i in 0..n {
            let x = i as f64 * 2.0 * PI / n as f64;
            let fd = (-g(x + 2.0 * h) + 8.0 * g(x + h) - 8.0 * g(x - h) + g(x - 2.0 * h))
                / (12.0 * h);
            assert!((df[[i, 0, 0]] - fd).abs() <= 1e-6);
        }
    }

    #[test]
    fn leray_annihilates_gradients() {
        let grid = Grid::cubic(16, 2.0 * PI).unwrap();
        let g = SpectralField::from_fn_scalar(grid, |x| {
            (x[0].sin() + 0.5 * (x[1] + x[2]).cos()).sin()
        });
        let u = g.gradient().leray_project();
        assert!(u.l2_norm() < 1e-12);
    }

    #[test]
    fn leray_idempotent_and_fixes_divergence_free() {
        let grid = Grid::cubic(16, 2.0 * PI).unwrap();
        let u = random_vector(&grid, 7);
        let pu = u.leray_project();
        assert!(pu.divergence_sup_modes() < 1e-12);
        let ppu = pu.leray_project();
        assert!(sup_diff(&pu, &ppu) < 1e-12);
        // x1-independent shear is already solenoidal
        let shear = SpectralField::from_fn_vector(grid, |x| [x[1].sin(), 0.0, 0.0]);
        assert!(sup_diff(&shear, &shear.leray_project()) < 1e-12);
    }

    #[test]
    fn leray_preserves_zero_mode() {
        let grid = Grid::cubic(8, 2.0 * PI).unwrap();
        let u = random_vector(&grid, 11);
        let pu = u.leray_project();
        for c in 0..3 {
            assert!((u.coeffs(c)[[0, 0, 0]] - pu.coeffs(c)[[0, 0, 0]]).norm() < 1e-14);
        }
    }

    #[test]
    fn leray_self_adjoint() {
        let grid = Grid::cubic(12, 2.0 * PI).unwrap();
        let u = random_vector(&grid, 3);
        let v = random_vector(&grid, 4);
        let lhs = u.leray_project().l2_inner(&v);
        let rhs = u.l2_inner(&v.leray_project());
        assert!((lhs - rhs).abs() < 1e-10 * (1.0 + lhs.abs()));
    }

    #[test]
    fn derivative_commutes_with_leray_on_divergence_free() {
        let grid = Grid::cubic(12, 2.0 * PI).unwrap();
        let u = random_vector(&grid, 9).leray_project();
        for axis in 1..=3 {
            let a = u.derivative(axis, 1).leray_project();
            let b = u.derivative(axis, 1);
            assert!(sup_diff(&a, &b) < 1e-10);
        }
    }

    #[test]
    fn dealiased_product_trig_identity() {
        // cos^2 x1 = (1 + cos 2 x1)/2; 2nd harmonic fits well inside the mask.
        let grid = Grid::cubic(16, 2.0 * PI).unwrap();
        let f = SpectralField::from_fn_scalar(grid.clone(), |x| x[0].cos());
        let p = f.dealiased_product(&f).unwrap();
        let expect =
            SpectralField::from_fn_scalar(grid, |x| 0.5 * (1.0 + (2.0 * x[0]).cos()));
        assert!(sup_diff(&p, &expect) < 1e-12);
    }

    #[test]
    fn dealiased_product_identity_element() {
        let grid = Grid::cubic(16, 2.0 * PI).unwrap();
        let one = SpectralField::from_fn_scalar(grid.clone(), |_| 1.0);
        let g = random_scalar(&grid, 21).dealias();
        let p = one.dealiased_product(&g).unwrap();
        assert!(sup_diff(&p, &g) < 1e-12);
    }

    #[test]
    fn dealiased_product_matches_convolution_oracle() {
        // Band-limited factors whose combined bandwidth stays inside the
        // mask: the masked pseudo-spectral product must equal the direct
        // spectral convolution.
        let n = 24; // mask keeps |k| <= 8
        let grid = Grid::cubic(n, 2.0 * PI).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut make = |kmax: i64| {
            let mut c: Array3<Complex64> = Array3::zeros((n, n, n));
            let mut modes = Vec::new();
            for _ in 0..6 {
                let k = [
                    rng.gen_range(-kmax..=kmax),
                    rng.gen_range(-kmax..=kmax),
                    rng.gen_range(-kmax..=kmax),
                ];
                let a = Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
                modes.push((k, a));
                modes.push(([-k[0], -k[1], -k[2]], a.conj()));
            }
            let wrap = |k: i64| ((k % n as i64) + n as i64) as usize % n;
            for &(k, a) in &modes {
                c[[wrap(k[0]), wrap(k[1]), wrap(k[2])]] += a;
            }
            (
                SpectralField::from_coefficients(grid.clone(), vec![c]),
                modes,
            )
        };
        let (f, fm) = make(4);
        let (g, gm) = make(4);
        let p = f.dealiased_product(&g).unwrap();
        // direct convolution over the sparse mode lists
        let mut oracle: Array3<Complex64> = Array3::zeros((n, n, n));
        let wrap = |k: i64| ((k % n as i64) + n as i64) as usize % n;
        for &(ka, a) in &fm {
            for &(kb, b) in &gm {
                let k = [ka[0] + kb[0], ka[1] + kb[1], ka[2] + kb[2]];
                oracle[[wrap(k[0]), wrap(k[1]), wrap(k[2])]] += a * b;
            }
        }
        let mut err = 0.0f64;
        Zip::from(p.coeffs(0)).and(&oracle).for_each(|x, y| {
            err = err.max((x - y).norm());
        });
        assert!(err < 1e-12, "convolution mismatch {err}");
    }

    #[test]
    fn round_trip_and_realness() {
        let grid = Grid::new([8, 12, 10], [2.0 * PI, 4.0, 9.0]).unwrap();
        let f = random_scalar(&grid, 42);
        let back = SpectralField::from_physical(grid, f.to_physical());
        let rel = sup_diff(&f, &back) / f.lp_norm(f64::INFINITY);
        assert!(rel < 1e-12);
        assert!(f.realness_residual() < 1e-12);
    }

    #[test]
    fn parseval_l2_agreement() {
        let grid = Grid::cubic(12, 5.0).unwrap();
        let f = random_scalar(&grid, 13);
        let phys = f.to_physical().remove(0);
        let dv = grid_cell(&f);
        let direct: f64 = phys.iter().map(|v| v * v).sum::<f64>() * dv;
        assert!((f.l2_norm().powi(2) - direct).abs() < 1e-10 * direct);
    }

    fn grid_cell(f: &SpectralField) -> f64 {
        f.grid.cell_volume()
    }

    #[test]
    fn mixed_norm_reduces_to_lp() {
        let grid = Grid::cubic(8, 2.0 * PI).unwrap();
        let f = random_scalar(&grid, 17);
        assert!((f.mixed_norm(2.0, 2.0) - f.lp_norm(2.0)).abs() < 1e-10);
        assert!(
            (f.mixed_norm(f64::INFINITY, f64::INFINITY) - f.lp_norm(f64::INFINITY)).abs() < 1e-12
        );
    }

    #[test]
    fn binary_round_trip() {
        let grid = Grid::new([8, 6, 4], [2.0 * PI, 3.0, 7.0]).unwrap();
        let f = random_vector(&grid, 99);
        let mut buf = Vec::new();
        f.write_binary(&mut buf).unwrap();
        let g = SpectralField::read_binary(&mut buf.as_slice()).unwrap();
        assert_eq!(g.grid.dims, f.grid.dims);
        assert_eq!(g.ncomp(), 3);
        assert!(sup_diff(&f, &g) < 1e-12);
    }

    #[test]
    fn grid_mismatch_is_an_error() {
        let g1 = Grid::cubic(8, 2.0 * PI).unwrap();
        let g2 = Grid::cubic(16, 2.0 * PI).unwrap();
        let f = random_scalar(&g1, 1);
        let g = random_scalar(&g2, 2);
        assert!(matches!(f.dealiased_product(&g), Err(Error::GridMismatch)));
    }
}

//! Cached 3-D complex FFTs along each axis of an `Array3<Complex64>`.
//!
//! Convention: `forward` maps physical samples to mode amplitudes
//! (divides by N per axis), `inverse` sums amplitudes back, so
//! `f(x_j) = sum_k a_k exp(i xi_k x_j)` with `xi_k = 2 pi k / L`.

use ndarray::{Array3, Axis};
use rayon::prelude::*;
use num_complex::Complex64;
use once_cell::sync::Lazy;
use rustfft::{Fft, FftPlanner};
use std::collections::HashMap;
use std::sync::{Arc, Mutex};

struct PlanCache {
    fwd: HashMap<usize, Arc<dyn Fft<f64>>>,
    inv: HashMap<usize, Arc<dyn Fft<f64>>>,
}

static PLANS: Lazy<Mutex<PlanCache>> = Lazy::new(|| {
    Mutex::new(PlanCache {
        fwd: HashMap::new(),
        inv: HashMap::new(),
    })
});

fn plan(n: usize, forward: bool) -> Arc<dyn Fft<f64>> {
    let mut cache = PLANS.lock().unwrap();
    let map = if forward { &mut cache.fwd } else { &mut cache.inv };
    map.entry(n)
        .or_insert_with(|| {
            let mut planner = FftPlanner::new();
            if forward {
                planner.plan_fft_forward(n)
            } else {
                planner.plan_fft_inverse(n)
            }
        })
        .clone()
}

fn transform_axis(data: &mut Array3<Complex64>, axis: usize, forward: bool) {
    let n = data.shape()[axis];
    let scale = if forward { 1.0 / n as f64 } else { 1.0 };
    data.lanes_mut(Axis(axis))
        .into_iter()
        .par_bridge()
        .for_each_init(
            || (vec![Complex64::default(); n], plan(n, forward)),
            |(buf, fft_local), mut lane| {
                for (b, v) in buf.iter_mut().zip(lane.iter()) {
                    *b = *v;
                }
                fft_local.process(buf);
                for (v, b) in lane.iter_mut().zip(buf.iter()) {
                    *v = *b * scale;
                }
            },
        );
}

/// Physical samples -> mode amplitudes (in place).
pub fn forward3(data: &mut Array3<Complex64>) {
    for axis in 0..3 {
        transform_axis(data, axis, true);
    }
}

/// Mode amplitudes -> physical samples (in place).
pub fn inverse3(data: &mut Array3<Complex64>) {
    for axis in 0..3 {
        transform_axis(data, axis, false);
    }
}

/// Signed integer wavenumber for storage index `m` on an axis of length `n`.
#[inline]
pub fn index_to_wavenumber(m: usize, n: usize) -> i64 {
    if m < n / 2 {
        m as i64
    } else {
        m as i64 - n as i64
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array3;

    #[test]
    fn round_trip_identity() {
        let mut a = Array3::from_shape_fn((8, 4, 6), |(i, j, k)| {
            Complex64::new(
                (i as f64 * 0.37 + j as f64 * 1.3 - k as f64).sin(),
                (i as f64 - j as f64 * 0.11 + k as f64 * 2.0).cos(),
            )
        });
        let orig = a.clone();
        forward3(&mut a);
        inverse3(&mut a);
        for (x, y) in a.iter().zip(orig.iter()) {
            assert!((x - y).norm() < 1e-12);
        }
    }

    #[test]
    fn single_mode_amplitude() {
        // f(x) = exp(i * 2 pi * 3 j / n) along axis 0 -> amplitude 1 at k=3.
        let n = 16;
        let mut a = Array3::from_shape_fn((n, 2, 2), |(i, _, _)| {
            Complex64::from_polar(1.0, 2.0 * std::f64::consts::PI * 3.0 * i as f64 / n as f64)
        });
        forward3(&mut a);
        assert!((a[[3, 0, 0]] - Complex64::new(1.0, 0.0)).norm() < 1e-12);
        assert!(a[[2, 0, 0]].norm() < 1e-12);
    }
}

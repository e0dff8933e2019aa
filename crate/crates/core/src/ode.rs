//! Explicit Runge–Kutta integrators on flat state vectors.

use crate::error::{LabError, Result};

/// Scratch buffers for [`rk4_step`].
#[derive(Clone, Debug)]
pub struct Rk4Work {
    k1: Vec<f64>,
    k2: Vec<f64>,
    k3: Vec<f64>,
    k4: Vec<f64>,
    tmp: Vec<f64>,
}

impl Rk4Work {
    pub fn new(dim: usize) -> Self {
        Rk4Work {
            k1: vec![0.0; dim],
            k2: vec![0.0; dim],
            k3: vec![0.0; dim],
            k4: vec![0.0; dim],
            tmp: vec![0.0; dim],
        }
    }

    /// Slope at the start of the last step.
    pub fn initial_slope(&self) -> &[f64] {
        &self.k1
    }
}

/// One classical RK4 step from `(t, y)` with signed step `h`.
pub fn rk4_step<F>(f: &mut F, t: f64, y: &[f64], h: f64, out: &mut [f64], w: &mut Rk4Work)
where
    F: FnMut(f64, &[f64], &mut [f64]),
{
    let n = y.len();
    f(t, y, &mut w.k1);
    for i in 0..n {
        w.tmp[i] = y[i] + 0.5 * h * w.k1[i];
    }
    f(t + 0.5 * h, &w.tmp, &mut w.k2);
    for i in 0..n {
        w.tmp[i] = y[i] + 0.5 * h * w.k2[i];
    }
    f(t + 0.5 * h, &w.tmp, &mut w.k3);
    for i in 0..n {
        w.tmp[i] = y[i] + h * w.k3[i];
    }
    f(t + h, &w.tmp, &mut w.k4);
    for i in 0..n {
        out[i] = y[i] + h / 6.0 * (w.k1[i] + 2.0 * w.k2[i] + 2.0 * w.k3[i] + w.k4[i]);
    }
}

/// Adaptive Dormand–Prince 5(4) integrator.
#[derive(Clone, Copy, Debug)]
pub struct Dopri5 {
    pub atol: f64,
    pub rtol: f64,
    pub h_min: f64,
    pub max_steps: usize,
}

impl Default for Dopri5 {
    fn default() -> Self {
        Dopri5 {
            atol: 1e-10,
            rtol: 1e-10,
            h_min: 1e-14,
            max_steps: 1_000_000,
        }
    }
}

const C2: f64 = 1.0 / 5.0;
const C3: f64 = 3.0 / 10.0;
const C4: f64 = 4.0 / 5.0;
const C5: f64 = 8.0 / 9.0;
const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const B1: f64 = 35.0 / 384.0;
const B3: f64 = 500.0 / 1113.0;
const B4: f64 = 125.0 / 192.0;
const B5: f64 = -2187.0 / 6784.0;
const B6: f64 = 11.0 / 84.0;
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;

impl Dopri5 {
    pub fn with_tolerance(tol: f64) -> Self {
        Dopri5 {
            atol: tol,
            rtol: tol,
            ..Default::default()
        }
    }

    /// Integrate from `t0` to `t1` (either direction); returns the state at `t1`.
    pub fn integrate<F>(&self, mut f: F, t0: f64, y0: &[f64], t1: f64) -> Result<Vec<f64>>
    where
        F: FnMut(f64, &[f64], &mut [f64]),
    {
        let n = y0.len();
        let mut y = y0.to_vec();
        if t1 == t0 {
            return Ok(y);
        }
        let dir = (t1 - t0).signum();
        let span = (t1 - t0).abs();
        let mut k = vec![vec![0.0; n]; 7];
        let mut tmp = vec![0.0; n];
        let mut y_new = vec![0.0; n];
        let mut t = t0;
        f(t, &y, &mut k[0]);
        let mut h = initial_step(span, &y, &k[0], self.atol, self.rtol);
        let mut steps = 0usize;
        let mut err_prev: f64 = 1e-4;
        while (t1 - t) * dir > 0.0 {
            steps += 1;
            if steps > self.max_steps {
                return Err(LabError::numerical("ode", format!("step budget exhausted at t={t}")));
            }
            let remaining = (t1 - t).abs();
            let last = h >= remaining;
            if last {
                h = remaining;
            }
            let hs = dir * h;
            for i in 0..n {
                tmp[i] = y[i] + hs * A21 * k[0][i];
            }
            let (k0, rest) = k.split_at_mut(1);
            f(t + C2 * hs, &tmp, &mut rest[0]);
            for i in 0..n {
                tmp[i] = y[i] + hs * (A31 * k0[0][i] + A32 * rest[0][i]);
            }
            f(t + C3 * hs, &tmp, &mut rest[1]);
            for i in 0..n {
                tmp[i] = y[i] + hs * (A41 * k0[0][i] + A42 * rest[0][i] + A43 * rest[1][i]);
            }
            f(t + C4 * hs, &tmp, &mut rest[2]);
            for i in 0..n {
                tmp[i] = y[i]
                    + hs * (A51 * k0[0][i] + A52 * rest[0][i] + A53 * rest[1][i]
                        + A54 * rest[2][i]);
            }
            f(t + C5 * hs, &tmp, &mut rest[3]);
            for i in 0..n {
                tmp[i] = y[i]
                    + hs * (A61 * k0[0][i] + A62 * rest[0][i] + A63 * rest[1][i]
                        + A64 * rest[2][i]
                        + A65 * rest[3][i]);
            }
            f(t + hs, &tmp, &mut rest[4]);
            for i in 0..n {
                y_new[i] = y[i]
                    + hs * (B1 * k0[0][i] + B3 * rest[1][i] + B4 * rest[2][i] + B5 * rest[3][i]
                        + B6 * rest[4][i]);
            }
            f(t + hs, &y_new, &mut rest[5]);
            let mut err = 0.0f64;
            for i in 0..n {
                let e = hs
                    * (E1 * k0[0][i] + E3 * rest[1][i] + E4 * rest[2][i] + E5 * rest[3][i]
                        + E6 * rest[4][i]
                        + E7 * rest[5][i]);
                let sc = self.atol + self.rtol * y[i].abs().max(y_new[i].abs());
                err = err.max((e / sc).abs());
            }
            if !err.is_finite() {
                h *= 0.1;
                if h < self.h_min {
                    return Err(LabError::StepUnderflow { module: "ode", t, h });
                }
                continue;
            }
            if err <= 1.0 {
                t = if last { t1 } else { t + hs };
                y.copy_from_slice(&y_new);
                k.swap(0, 6);
                // PI step-size controller.
                let fac = if err == 0.0 {
                    5.0
                } else {
                    (0.9 * err.powf(-0.7 / 5.0) * err_prev.powf(0.4 / 5.0)).clamp(0.2, 5.0)
                };
                err_prev = err.max(1e-4);
                h *= fac;
            } else {
                h *= (0.9 * err.powf(-0.2)).clamp(0.1, 1.0);
                if h < self.h_min * span.max(1.0) {
                    return Err(LabError::StepUnderflow { module: "ode", t, h });
                }
            }
        }
        Ok(y)
    }
}

fn initial_step(span: f64, y: &[f64], f0: &[f64], atol: f64, rtol: f64) -> f64 {
    let mut d0 = 0.0f64;
    let mut d1 = 0.0f64;
    for (yi, fi) in y.iter().zip(f0.iter()) {
        let sc = atol + rtol * yi.abs();
        d0 = d0.max((yi / sc).abs());
        d1 = d1.max((fi / sc).abs());
    }
    let h = if d0 < 1e-5 || d1 < 1e-5 {
        1e-6 * span.max(1e-6)
    } else {
        0.01 * d0 / d1
    };
    h.min(span).max(1e-12 * span)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rk4_exponential_order() {
        let mut f = |_t: f64, y: &[f64], dy: &mut [f64]| dy[0] = y[0];
        let mut w = Rk4Work::new(1);
        let mut errs = vec![];
        for n in [10usize, 20] {
            let h = 1.0 / n as f64;
            let mut y = [1.0];
            let mut out = [0.0];
            for k in 0..n {
                rk4_step(&mut f, k as f64 * h, &y, h, &mut out, &mut w);
                y = out;
            }
            errs.push((y[0] - 1f64.exp()).abs());
        }
        let order = (errs[0] / errs[1]).log2();
        assert!((order - 4.0).abs() < 0.2, "order {order}");
    }

    #[test]
    fn dopri_harmonic_oscillator() {
        let f = |_t: f64, y: &[f64], dy: &mut [f64]| {
            dy[0] = y[1];
            dy[1] = -y[0];
        };
        let solver = Dopri5::with_tolerance(1e-11);
        let y = solver.integrate(f, 0.0, &[1.0, 0.0], 10.0).unwrap();
        assert!((y[0] - 10f64.cos()).abs() < 1e-8);
        assert!((y[1] + 10f64.sin()).abs() < 1e-8);
    }

    #[test]
    fn dopri_backward_in_time() {
        let f = |t: f64, _y: &[f64], dy: &mut [f64]| dy[0] = t.cos();
        let y = Dopri5::with_tolerance(1e-12)
            .integrate(f, 2.0, &[0.0], 0.5)
            .unwrap();
        assert!((y[0] - (0.5f64.sin() - 2f64.sin())).abs() < 1e-10);
    }
}

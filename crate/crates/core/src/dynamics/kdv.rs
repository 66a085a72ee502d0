//! Periodic Korteweg-de Vries solver on `[-pi, pi)`:
//! `y_t + y y_x + y_xxx = sum_i u_i v_i(x)`.
//!
//! Spatial derivatives are pseudo-spectral. The dispersive term is diagonal
//! in Fourier space and integrated exactly through an integrating factor;
//! advection and forcing are advanced with classical RK4 on top of it. The
//! quadratic term is dealiased with the 2/3 rule. The zero mode of the
//! advection term vanishes identically, so the spatial mean only changes
//! through forcing.

use std::f64::consts::PI;
use std::sync::Arc;

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};

pub const KDV_INPUTS: usize = 3;
pub const KDV_FORCING_CENTERS: [f64; KDV_INPUTS] = [-PI / 2.0, 0.0, PI / 2.0];

/// RK4 stability limit on the imaginary axis is 2*sqrt(2); keep margin.
const ADVECTION_LIMIT: f64 = 2.5;

pub fn grid(mesh: usize) -> Vec<f64> {
    (0..mesh)
        .map(|j| -PI + 2.0 * PI * j as f64 / mesh as f64)
        .collect()
}

/// Forcing profiles `v_i(x) = exp(-25 (x - c_i)^2)`.
pub fn forcing_profiles(mesh: usize) -> [Vec<f64>; KDV_INPUTS] {
    let x = grid(mesh);
    KDV_FORCING_CENTERS.map(|c| x.iter().map(|&xj| (-25.0 * (xj - c).powi(2)).exp()).collect())
}

/// Profiles whose convex combinations seed training trajectories.
pub fn initial_profiles(mesh: usize) -> [Vec<f64>; 3] {
    let x = grid(mesh);
    [
        x.iter().map(|&v| (-(v - PI / 2.0).powi(2)).exp()).collect(),
        x.iter().map(|&v| -(v / 2.0).sin().powi(2)).collect(),
        x.iter().map(|&v| (-(v + PI / 2.0).powi(2)).exp()).collect(),
    ]
}

pub struct KdvSolver {
    mesh: usize,
    dt: f64,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
    /// `i k` with the Nyquist mode and dealiased modes zeroed.
    derivative: Vec<Complex64>,
    half_step: Vec<Complex64>,
    full_step: Vec<Complex64>,
    forcing_hat: [Vec<Complex64>; KDV_INPUTS],
    k_cut: f64,
}

impl std::fmt::Debug for KdvSolver {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("KdvSolver")
            .field("mesh", &self.mesh)
            .field("dt", &self.dt)
            .finish()
    }
}

impl KdvSolver {
    pub fn new(mesh: usize, dt: f64) -> Result<Self> {
        if mesh < 4 || !mesh.is_multiple_of(2) {
            return Err(Error::InvalidArgument(format!(
                "KdV mesh must be even and >= 4, got {mesh}"
            )));
        }
        if !(dt > 0.0) {
            return Err(Error::InvalidArgument(format!("dt must be positive, got {dt}")));
        }
        let mut planner = FftPlanner::new();
        let forward = planner.plan_fft_forward(mesh);
        let inverse = planner.plan_fft_inverse(mesh);
        let k_cut = mesh as f64 / 3.0;
        let wavenumber = |j: usize| -> f64 {
            if j <= mesh / 2 {
                j as f64
            } else {
                j as f64 - mesh as f64
            }
        };
        let derivative = (0..mesh)
            .map(|j| {
                let k = wavenumber(j);
                if j == mesh / 2 || k.abs() > k_cut {
                    Complex64::new(0.0, 0.0)
                } else {
                    Complex64::new(0.0, k)
                }
            })
            .collect();
        // linear part: y_t = -y_xxx  =>  yhat_t = i k^3 yhat
        let factor = |h: f64| -> Vec<Complex64> {
            (0..mesh)
                .map(|j| {
                    let k = wavenumber(j);
                    Complex64::from_polar(1.0, k * k * k * h)
                })
                .collect()
        };
        let half_step = factor(0.5 * dt);
        let full_step = factor(dt);
        let mut solver = Self {
            mesh,
            dt,
            forward,
            inverse,
            derivative,
            half_step,
            full_step,
            forcing_hat: [vec![], vec![], vec![]],
            k_cut,
        };
        let profiles = forcing_profiles(mesh);
        solver.forcing_hat = profiles.map(|p| solver.to_spectral(&p));
        Ok(solver)
    }

    pub fn mesh(&self) -> usize {
        self.mesh
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    fn to_spectral(&self, y: &[f64]) -> Vec<Complex64> {
        let mut buf: Vec<Complex64> = y.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        self.forward.process(&mut buf);
        buf
    }

    fn to_physical(&self, yhat: &[Complex64]) -> Vec<f64> {
        let mut buf = yhat.to_vec();
        self.inverse.process(&mut buf);
        let scale = 1.0 / self.mesh as f64;
        buf.iter().map(|c| c.re * scale).collect()
    }

    /// Spectral right-hand side without the dispersive term:
    /// `-(1/2) d/dx (y^2) + f`.
    fn nonlinear(&self, yhat: &[Complex64], forcing: &[Complex64]) -> Vec<Complex64> {
        let y = self.to_physical(yhat);
        let sq: Vec<f64> = y.iter().map(|v| 0.5 * v * v).collect();
        let sq_hat = self.to_spectral(&sq);
        sq_hat
            .iter()
            .zip(&self.derivative)
            .zip(forcing)
            .map(|((s, d), f)| -(d * s) + f)
            .collect()
    }

    /// Advances `y` by one step with input coefficients `u` held constant.
    pub fn step(&self, y: &[f64], u: &[f64]) -> Result<Vec<f64>> {
        if y.len() != self.mesh {
            return Err(Error::DimensionMismatch {
                context: "KdV state",
                expected: self.mesh,
                actual: y.len(),
            });
        }
        if u.len() != KDV_INPUTS {
            return Err(Error::DimensionMismatch {
                context: "KdV input",
                expected: KDV_INPUTS,
                actual: u.len(),
            });
        }
        let peak = y.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if !peak.is_finite() {
            return Err(Error::NonFinite("KdV state"));
        }
        let advection = peak * self.k_cut * self.dt;
        if advection > ADVECTION_LIMIT {
            return Err(Error::Unstable {
                step: 0,
                reason: format!("advective number {advection:.3} exceeds {ADVECTION_LIMIT}"),
            });
        }

        let mut forcing = vec![Complex64::new(0.0, 0.0); self.mesh];
        for (ui, fh) in u.iter().zip(&self.forcing_hat) {
            for (f, v) in forcing.iter_mut().zip(fh) {
                *f += v * *ui;
            }
        }

        let dt = self.dt;
        let e = &self.half_step;
        let e2 = &self.full_step;
        let y0 = self.to_spectral(y);
        let a: Vec<Complex64> = self.nonlinear(&y0, &forcing).iter().map(|v| v * dt).collect();
        let s1: Vec<Complex64> = (0..self.mesh).map(|j| e[j] * (y0[j] + a[j] * 0.5)).collect();
        let b: Vec<Complex64> = self.nonlinear(&s1, &forcing).iter().map(|v| v * dt).collect();
        let s2: Vec<Complex64> = (0..self.mesh).map(|j| e[j] * y0[j] + b[j] * 0.5).collect();
        let c: Vec<Complex64> = self.nonlinear(&s2, &forcing).iter().map(|v| v * dt).collect();
        let s3: Vec<Complex64> = (0..self.mesh).map(|j| e2[j] * y0[j] + e[j] * c[j]).collect();
        let d: Vec<Complex64> = self.nonlinear(&s3, &forcing).iter().map(|v| v * dt).collect();
        let next: Vec<Complex64> = (0..self.mesh)
            .map(|j| {
                e2[j] * y0[j] + (e2[j] * a[j] + e[j] * (b[j] + c[j]) * 2.0 + d[j]) / 6.0
            })
            .collect();
        let out = self.to_physical(&next);
        if out.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("KdV step"));
        }
        Ok(out)
    }
}

/// Spatial integral `sum_j y_j dx` on the periodic grid.
pub fn spatial_integral(y: &[f64]) -> f64 {
    let dx = 2.0 * PI / y.len() as f64;
    y.iter().sum::<f64>() * dx
}

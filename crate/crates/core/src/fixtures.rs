//! Analytic and semi-analytic ground truth.
//!
//! * [`PowerLawField`]: `V^ε(x) = x|x|^{ε−d}` with `div V^ε = ε|x|^{ε−d}`,
//!   whose divergence gives balls the mass `c_d δ^ε`.
//! * Inviscid Burgers Riemann problems and their entropy production, a
//!   uniform rate `(u_l − u_r)³/12` along the shock.
//! * An explicit finite-volume solver for viscous Burgers producing the
//!   vanishing-viscosity dissipation `ν|u_x|²` as an atomic measure.
//! * Uniform atoms on a time slab or on a space-time square.

use serde::Serialize;

use crate::aniso_measure::{AtomicMeasure, PointCloud};
use crate::error::{invalid, Error, Result};
use crate::numerics::{adaptive_simpson, sphere_area};
use crate::weak_balance::{GridSpec, GriddedField, SpaceGrid, VectorField};

/// Relative tolerance of the radial quadrature.
pub const RADIAL_TOL: f64 = 1e-10;
/// Safety factor applied to the explicit time-step limit.
pub const CFL_SAFETY: f64 = 0.9;

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct PowerLawField {
    pub d: usize,
    pub eps: f64,
}

impl PowerLawField {
    pub fn new(d: usize, eps: f64) -> Result<Self> {
        if d == 0 {
            return Err(invalid("spatial dimension d must be at least 1"));
        }
        if !(eps > 0.0 && eps < d as f64) {
            return Err(invalid(format!("eps = {eps} outside (0, {d})")));
        }
        Ok(Self { d, eps })
    }

    /// Surface measure of the unit sphere, `2π^{d/2}/Γ(d/2)`.
    pub fn c_d(&self) -> f64 {
        sphere_area(self.d)
    }

    /// `V^ε(x)`, set to zero at the origin.
    pub fn value(&self, x: &[f64], out: &mut [f64]) {
        let r = x.iter().map(|v| v * v).sum::<f64>().sqrt();
        let scale = if r == 0.0 {
            0.0
        } else {
            r.powf(self.eps - self.d as f64)
        };
        for (o, v) in out.iter_mut().zip(x) {
            *o = v * scale;
        }
    }

    /// `div V^ε(x) = ε/|x|^{d−ε}`.
    pub fn divergence(&self, x: &[f64]) -> f64 {
        let r = x.iter().map(|v| v * v).sum::<f64>().sqrt();
        self.eps * r.powf(self.eps - self.d as f64)
    }

    /// `c_d δ^ε`.
    pub fn ball_mass_closed_form(&self, delta: f64) -> f64 {
        self.c_d() * delta.powf(self.eps)
    }

    /// Samples `V^ε` on `[a, b]^d`.
    pub fn sample(&self, a: f64, b: f64, nx: usize) -> Result<VectorField> {
        VectorField::sample(SpaceGrid::new(self.d, a, b, nx)?, |x, out| self.value(x, out))
    }
}

/// `∫_{B_δ} div V^ε`, integrated radially over dyadic shells with adaptive
/// Simpson and the closed-form antiderivative `ρ^ε/ε` on the innermost one.
pub fn power_law_ball_mass(field: &PowerLawField, delta: f64) -> Result<f64> {
    if !(delta.is_finite() && delta > 0.0) {
        return Err(invalid(format!("delta must be positive, got {delta}")));
    }
    const SHELLS: i32 = 60;
    let (eps, d) = (field.eps, field.d as f64);
    let c = field.c_d();
    // radial density of div V^ε: c_d ε ρ^{ε−d} ρ^{d−1}
    let density = |rho: f64| c * eps * rho.powf(eps - d) * rho.powf(d - 1.0);
    let mut total = 0.0;
    let mut outer = delta;
    for _ in 0..SHELLS {
        let inner = 0.5 * outer;
        let scale = c * (outer.powf(eps) - inner.powf(eps));
        total += adaptive_simpson(&density, inner, outer, RADIAL_TOL * scale);
        outer = inner;
    }
    total += c * outer.powf(eps);
    Ok(total)
}

/// Riemann datum for Burgers: `u_l` left of `x0`, `u_r` right of it.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct RiemannDatum {
    pub u_l: f64,
    pub u_r: f64,
    pub x0: f64,
}

impl RiemannDatum {
    pub fn new(u_l: f64, u_r: f64, x0: f64) -> Result<Self> {
        if !(u_l.is_finite() && u_r.is_finite() && x0.is_finite()) {
            return Err(Error::NonFinite("Riemann datum".into()));
        }
        Ok(Self { u_l, u_r, x0 })
    }

    pub fn is_shock(&self) -> bool {
        self.u_l > self.u_r
    }

    /// Rankine–Hugoniot speed.
    pub fn shock_speed(&self) -> f64 {
        0.5 * (self.u_l + self.u_r)
    }

    /// Entropy production per unit time of the shock for `(u²/2, u³/3)`.
    pub fn dissipation_rate(&self) -> f64 {
        if self.is_shock() {
            (self.u_l - self.u_r).powi(3) / 12.0
        } else {
            0.0
        }
    }

    /// Exact entropy solution at `(x, t)`. On the shock itself the mean of
    /// the two states is returned.
    pub fn solution(&self, x: f64, t: f64) -> f64 {
        let y = x - self.x0;
        if self.is_shock() {
            let s = self.shock_speed() * t;
            if y < s {
                self.u_l
            } else if y > s {
                self.u_r
            } else {
                0.5 * (self.u_l + self.u_r)
            }
        } else if y <= self.u_l * t {
            self.u_l
        } else if y >= self.u_r * t {
            self.u_r
        } else {
            y / t
        }
    }

    /// Average of the exact solution over `[x − h/2, x + h/2]`.
    pub fn cell_average(&self, x: f64, t: f64, h: f64) -> f64 {
        let (lo, hi) = (x - 0.5 * h - self.x0, x + 0.5 * h - self.x0);
        // antiderivative of the profile in y
        let prim = |y: f64| -> f64 {
            if self.is_shock() {
                let s = self.shock_speed() * t;
                if y <= s {
                    self.u_l * y
                } else {
                    self.u_l * s + self.u_r * (y - s)
                }
            } else {
                let (a, b) = (self.u_l * t, self.u_r * t);
                if y <= a {
                    self.u_l * y
                } else if y <= b {
                    self.u_l * a + (y * y - a * a) / (2.0 * t)
                } else {
                    self.u_l * a + (b * b - a * a) / (2.0 * t) + self.u_r * (y - b)
                }
            }
        };
        (prim(hi) - prim(lo)) / h
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Sampling {
    Point,
    CellAverage,
}

/// Samples the exact entropy solution on a 1-d grid.
pub fn burgers_entropy_solution(datum: &RiemannDatum, spec: &GridSpec, sampling: Sampling) -> Result<GriddedField> {
    if spec.d() != 1 {
        return Err(invalid("Burgers fixtures are one-dimensional"));
    }
    if datum.u_l == datum.u_r {
        return Err(invalid("degenerate Riemann datum u_l = u_r"));
    }
    let h = spec.space.h();
    GriddedField::sample(spec.clone(), |x, t, out| {
        out[0] = match sampling {
            Sampling::Point => datum.solution(x[0], t),
            Sampling::CellAverage if t == 0.0 && !datum.is_shock() => datum.cell_average(x[0], 1e-300, h),
            Sampling::CellAverage => datum.cell_average(x[0], t, h),
        };
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct ShockMeasure {
    pub measure: AtomicMeasure,
    /// Set for rarefactions, whose measure is empty.
    pub rarefaction: bool,
}

/// Atoms on the shock path at the midpoints of the time steps of `spec`,
/// each carrying `rate · dt`.
pub fn burgers_dissipation_measure(datum: &RiemannDatum, spec: &GridSpec) -> Result<ShockMeasure> {
    if spec.d() != 1 {
        return Err(invalid("Burgers fixtures are one-dimensional"));
    }
    if !datum.is_shock() {
        let empty = AtomicMeasure::from_cloud(PointCloud::from_flat(1, vec![], vec![])?, vec![])?;
        return Ok(ShockMeasure {
            measure: empty,
            rarefaction: true,
        });
    }
    let dt = spec.dt();
    let n = spec.nt - 1;
    let times: Vec<f64> = (0..n).map(|k| (k as f64 + 0.5) * dt).collect();
    let xs: Vec<f64> = times.iter().map(|t| datum.x0 + datum.shock_speed() * t).collect();
    let weights = vec![datum.dissipation_rate() * dt; n];
    Ok(ShockMeasure {
        measure: AtomicMeasure::from_cloud(PointCloud::from_flat(1, xs, times)?, weights)?,
        rarefaction: false,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Boundary {
    Periodic,
    /// Ghost cells pinned to the given states.
    Dirichlet {
        left: f64,
        right: f64,
    },
}

/// Grid of a viscous run: `nx` cells on `[a, b]`, output at `nt_out`
/// equally spaced times in `[0, T]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ViscousSetup {
    pub nu: f64,
    pub a: f64,
    pub b: f64,
    pub nx: usize,
    pub t_end: f64,
    pub nt_out: usize,
    pub boundary: Boundary,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RunManifest {
    pub nu: f64,
    pub setup: ViscousSetup,
    pub h: f64,
    pub dt: f64,
    pub steps: usize,
    /// `dt` divided by the stability limit.
    pub stability_margin: f64,
    pub total_dissipation: f64,
    pub initial_energy: f64,
    pub final_energy: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ViscousRun {
    /// Cell-centered samples at the output times.
    pub field: GriddedField,
    /// `ν((u_{i+1} − u_i)/h)² h dt` at cell interfaces, summed over each
    /// output interval and placed at its midpoint.
    pub dissipation: AtomicMeasure,
    pub manifest: RunManifest,
}

/// Explicit conservative scheme for `u_t + (u²/2)_x = ν u_xx`: local
/// Lax–Friedrichs convective flux, centered diffusion, forward Euler with
/// `dt = 0.9 / (max|u|/h + 2ν/h²)` rounded down to fit the output times.
pub fn run_viscous_burgers(setup: &ViscousSetup, init: impl Fn(f64) -> f64) -> Result<ViscousRun> {
    let ViscousSetup {
        nu,
        a,
        b,
        nx,
        t_end,
        nt_out,
        boundary,
    } = *setup;
    if !(nu.is_finite() && nu > 0.0) {
        return Err(invalid(format!("viscosity must be positive, got {nu}")));
    }
    if nx < 3 || nt_out < 2 {
        return Err(invalid("need at least 3 cells and 2 output times"));
    }
    if !(b > a && t_end > 0.0 && t_end.is_finite()) {
        return Err(invalid("empty space or time extent"));
    }
    let h = (b - a) / nx as f64;
    let centers: Vec<f64> = (0..nx).map(|i| a + (i as f64 + 0.5) * h).collect();
    let mut u: Vec<f64> = centers.iter().map(|&x| init(x)).collect();
    if u.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("initial data".into()));
    }
    let mut amax = u.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if let Boundary::Dirichlet { left, right } = boundary {
        amax = amax.max(left.abs()).max(right.abs());
    }
    let limit = 1.0 / (amax / h + 2.0 * nu / (h * h));
    let per_out = ((t_end / (nt_out - 1) as f64) / (CFL_SAFETY * limit)).ceil().max(1.0) as usize;
    let steps = per_out * (nt_out - 1);
    let dt = t_end / steps as f64;
    if dt > limit {
        return Err(Error::Stability(format!("dt = {dt} above limit {limit}")));
    }

    let energy = |u: &[f64]| u.iter().map(|v| 0.5 * v * v * h).sum::<f64>();
    let initial_energy = energy(&u);
    let n_if = match boundary {
        Boundary::Periodic => nx,
        Boundary::Dirichlet { .. } => nx + 1,
    };
    let mut samples = Vec::with_capacity(nt_out * nx);
    samples.extend_from_slice(&u);
    let mut bins = vec![0.0; (nt_out - 1) * n_if];
    let mut flux = vec![0.0; nx + 1];
    let mut grad_sq = vec![0.0; n_if];
    let mut next = vec![0.0; nx];
    let (dt_h, nu_h) = (dt / h, nu / h);
    for step in 0..steps {
        // interface j sits between cells j-1 and j
        let cell = |j: isize, u: &[f64]| -> f64 {
            match boundary {
                Boundary::Periodic => u[j.rem_euclid(nx as isize) as usize],
                Boundary::Dirichlet { left, right } => {
                    if j < 0 {
                        left
                    } else if j >= nx as isize {
                        right
                    } else {
                        u[j as usize]
                    }
                }
            }
        };
        for (j, f) in flux.iter_mut().enumerate() {
            let (ul, ur) = (cell(j as isize - 1, &u), cell(j as isize, &u));
            let speed = ul.abs().max(ur.abs());
            *f = 0.25 * (ul * ul + ur * ur) - 0.5 * speed * (ur - ul) - nu_h * (ur - ul);
        }
        for (k, g) in grad_sq.iter_mut().enumerate() {
            let j = match boundary {
                Boundary::Periodic => k as isize + 1,
                Boundary::Dirichlet { .. } => k as isize,
            };
            let diff = (cell(j, &u) - cell(j - 1, &u)) / h;
            *g = diff * diff;
        }
        let bin = step / per_out;
        for (acc, g) in bins[bin * n_if..(bin + 1) * n_if].iter_mut().zip(&grad_sq) {
            *acc += nu * g * h * dt;
        }
        for i in 0..nx {
            next[i] = u[i] - dt_h * (flux[i + 1] - flux[i]);
        }
        std::mem::swap(&mut u, &mut next);
        if (step + 1) % per_out == 0 {
            if u.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!("state at step {}", step + 1)));
            }
            samples.extend_from_slice(&u);
        }
    }

    let spec = GridSpec::new(1, centers[0], centers[nx - 1], nx, t_end, nt_out)?;
    let field = GriddedField::new(spec, samples, None, None)?;
    let dt_out = t_end / (nt_out - 1) as f64;
    let (mut xs, mut ts, mut ws) = (Vec::new(), Vec::new(), Vec::new());
    for bin in 0..nt_out - 1 {
        let t = (bin as f64 + 0.5) * dt_out;
        for k in 0..n_if {
            let x = match boundary {
                Boundary::Periodic => a + (k as f64 + 1.0) * h,
                Boundary::Dirichlet { .. } => a + k as f64 * h,
            };
            xs.push(x);
            ts.push(t);
            ws.push(bins[bin * n_if + k]);
        }
    }
    let total_dissipation: f64 = ws.iter().sum();
    let dissipation = AtomicMeasure::from_cloud(PointCloud::from_flat(1, xs, ts)?, ws)?;
    let manifest = RunManifest {
        nu,
        setup: *setup,
        h,
        dt,
        steps,
        stability_margin: dt / limit,
        total_dissipation,
        initial_energy,
        final_energy: energy(&u),
    };
    Ok(ViscousRun {
        field,
        dissipation,
        manifest,
    })
}

/// Viscous Burgers from a Riemann datum with the far field pinned to
/// `u_l`, `u_r`.
pub fn viscous_burgers_run(
    datum: &RiemannDatum,
    nu: f64,
    a: f64,
    b: f64,
    nx: usize,
    t_end: f64,
    nt_out: usize,
) -> Result<ViscousRun> {
    let setup = ViscousSetup {
        nu,
        a,
        b,
        nx,
        t_end,
        nt_out,
        boundary: Boundary::Dirichlet {
            left: datum.u_l,
            right: datum.u_r,
        },
    };
    run_viscous_burgers(&setup, |x| if x < datum.x0 { datum.u_l } else { datum.u_r })
}

/// Uniform atoms of total mass one on `[0,1]^d × {1/2}`: a lattice of
/// `ceil(n^{1/d})` points per axis at cell centers.
pub fn time_singular_measure_fixture(d: usize, n_atoms: usize) -> Result<AtomicMeasure> {
    if d == 0 {
        return Err(invalid("spatial dimension d must be at least 1"));
    }
    if n_atoms == 0 {
        return Err(invalid("need at least one atom"));
    }
    let mut m = (n_atoms as f64).powf(1.0 / d as f64).round() as usize;
    while m.pow(d as u32) < n_atoms {
        m += 1;
    }
    let total = m.pow(d as u32);
    let mut coords = Vec::with_capacity(total * d);
    for k in 0..total {
        let mut rest = k;
        let mut idx = vec![0; d];
        for axis in (0..d).rev() {
            idx[axis] = rest % m;
            rest /= m;
        }
        coords.extend(idx.iter().map(|&i| (i as f64 + 0.5) / m as f64));
    }
    let cloud = PointCloud::from_flat(d, coords, vec![0.5; total])?;
    AtomicMeasure::from_cloud(cloud, vec![1.0 / total as f64; total])
}

/// Uniform atoms of total mass one on `[0,1] × [0,1]` in space-time
/// (`d = 1`), an `m × m` lattice at cell centers.
pub fn uniform_square_measure(m: usize) -> Result<AtomicMeasure> {
    if m == 0 {
        return Err(invalid("need at least one atom per axis"));
    }
    let c = |i: usize| (i as f64 + 0.5) / m as f64;
    let xs = (0..m * m).map(|k| c(k % m)).collect();
    let ts = (0..m * m).map(|k| c(k / m)).collect();
    AtomicMeasure::from_cloud(PointCloud::from_flat(1, xs, ts)?, vec![1.0 / (m * m) as f64; m * m])
}

//! Weak-form energy and entropy balances on gridded space-time fields.
//!
//! Dissipation is never formed pointwise. It is only probed through test
//! functions: for an entropy pair `(η, Q)` the functional
//! `∫∫ η[u] ∂_t φ + Q[u]·∇φ (+ ν η[u] Δφ)` equals `⟨D, φ⟩` for the defect
//! measure `D`. Cutoffs `φ = χ_δ(x) η_δ(t)` adapted to anisotropic cylinders
//! turn this into an upper estimate of the mass of `D` on the cylinder.
//!
//! Integrals use the trapezoid rule at the grid nodes. On the interior of the
//! domain, where every test function here lives, this is the midpoint rule
//! on the dual cells. Test-function derivatives are exact whenever the
//! function is analytic; velocity gradients use centered differences.

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{invalid, Error, Result};
use crate::exponents::{ExtReal, Term};
use crate::numerics::unit_ball_volume;

/// Largest supported spatial dimension.
pub const MAX_DIM: usize = 3;
/// Cells of clearance between a test-function support and the grid edge.
pub const MARGIN_CELLS: f64 = 2.0;
/// Relative slack when checking `weak_mass ≤ holder_bound`.
pub const BOUND_SLACK: f64 = 1e-9;
/// Default divergence threshold, relative to the largest divergence.
pub const DIV_THRESHOLD_FRACTION: f64 = 1e-8;

/// Uniform grid on `[a, b]^d` with `nx` nodes per axis.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SpaceGrid {
    pub d: usize,
    pub a: f64,
    pub b: f64,
    pub nx: usize,
}

impl SpaceGrid {
    pub fn new(d: usize, a: f64, b: f64, nx: usize) -> Result<Self> {
        if !(1..=MAX_DIM).contains(&d) {
            return Err(invalid(format!("gridded fields support 1 <= d <= {MAX_DIM}, got {d}")));
        }
        if !(a.is_finite() && b.is_finite() && b > a) {
            return Err(invalid(format!("spatial extent [{a}, {b}] is empty")));
        }
        if nx < 2 {
            return Err(invalid("need at least 2 nodes per axis"));
        }
        Ok(Self { d, a, b, nx })
    }

    pub fn h(&self) -> f64 {
        (self.b - self.a) / (self.nx - 1) as f64
    }

    pub fn n_nodes(&self) -> usize {
        self.nx.pow(self.d as u32)
    }

    pub fn coord(&self, i: usize) -> f64 {
        self.a + i as f64 * self.h()
    }

    /// Multi-index of a flat node index, first axis slowest.
    pub fn index(&self, mut flat: usize) -> [usize; 3] {
        let mut idx = [0; 3];
        for axis in (0..self.d).rev() {
            idx[axis] = flat % self.nx;
            flat /= self.nx;
        }
        idx
    }

    pub fn flat(&self, idx: [usize; 3]) -> usize {
        (0..self.d).fold(0, |acc, axis| acc * self.nx + idx[axis])
    }

    pub fn point(&self, idx: [usize; 3]) -> [f64; 3] {
        let mut x = [0.0; 3];
        for axis in 0..self.d {
            x[axis] = self.coord(idx[axis]);
        }
        x
    }

    /// Trapezoid weight of a node.
    pub fn weight(&self, idx: [usize; 3]) -> f64 {
        let h = self.h();
        (0..self.d)
            .map(|axis| {
                if idx[axis] == 0 || idx[axis] == self.nx - 1 {
                    0.5 * h
                } else {
                    h
                }
            })
            .product()
    }

    /// Inclusive node range of `[lo, hi]` along one axis, if non-empty.
    fn node_range(&self, lo: f64, hi: f64) -> Option<(usize, usize)> {
        let h = self.h();
        let i_lo = ((lo - self.a) / h - 1e-9).ceil().max(0.0);
        let i_hi = ((hi - self.a) / h + 1e-9).floor().min((self.nx - 1) as f64);
        if i_lo > i_hi {
            None
        } else {
            Some((i_lo as usize, i_hi as usize))
        }
    }

    fn node_box(&self, lo: &[f64], hi: &[f64]) -> Option<([usize; 3], [usize; 3])> {
        let (mut l, mut u) = ([0; 3], [0; 3]);
        for axis in 0..self.d {
            let (a, b) = self.node_range(lo[axis], hi[axis])?;
            l[axis] = a;
            u[axis] = b;
        }
        Some((l, u))
    }

    fn for_each_in_box(&self, lo: [usize; 3], hi: [usize; 3], mut f: impl FnMut([usize; 3])) {
        for i0 in lo[0]..=hi[0] {
            for i1 in lo[1]..=hi[1] {
                for i2 in lo[2]..=hi[2] {
                    f([i0, i1, i2]);
                }
            }
        }
    }
}

/// Space grid together with `nt` uniformly spaced times on `[0, T]`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GridSpec {
    pub space: SpaceGrid,
    pub t_end: f64,
    pub nt: usize,
}

impl GridSpec {
    pub fn new(d: usize, a: f64, b: f64, nx: usize, t_end: f64, nt: usize) -> Result<Self> {
        let space = SpaceGrid::new(d, a, b, nx)?;
        if !(t_end.is_finite() && t_end > 0.0) {
            return Err(invalid(format!("final time must be positive, got {t_end}")));
        }
        if nt < 2 {
            return Err(invalid("need at least 2 time samples"));
        }
        Ok(Self { space, t_end, nt })
    }

    pub fn d(&self) -> usize {
        self.space.d
    }

    pub fn dt(&self) -> f64 {
        self.t_end / (self.nt - 1) as f64
    }

    pub fn time(&self, it: usize) -> f64 {
        it as f64 * self.dt()
    }

    pub fn time_weight(&self, it: usize) -> f64 {
        if it == 0 || it == self.nt - 1 {
            0.5 * self.dt()
        } else {
            self.dt()
        }
    }

    fn time_range(&self, lo: f64, hi: f64) -> Option<(usize, usize)> {
        let dt = self.dt();
        let i_lo = (lo / dt - 1e-9).ceil().max(0.0);
        let i_hi = (hi / dt + 1e-9).floor().min((self.nt - 1) as f64);
        if i_lo > i_hi {
            None
        } else {
            Some((i_lo as usize, i_hi as usize))
        }
    }
}

/// Velocity (and optional pressure and scalar) samples on a [`GridSpec`].
///
/// Layout is time-major, then spatial nodes with the first axis slowest,
/// then velocity components.
#[derive(Clone, Debug, PartialEq)]
pub struct GriddedField {
    spec: GridSpec,
    u: Vec<f64>,
    p: Option<Vec<f64>>,
    theta: Option<Vec<f64>>,
    pub alpha_hint: Option<f64>,
}

fn check_samples(name: &str, v: &[f64], expected: usize) -> Result<()> {
    if v.len() != expected {
        return Err(Error::Shape(format!(
            "{name} has {} samples, expected {expected}",
            v.len()
        )));
    }
    if let Some(k) = v.iter().position(|x| !x.is_finite()) {
        return Err(Error::NonFinite(format!("{name} sample {k}")));
    }
    Ok(())
}

impl GriddedField {
    pub fn new(spec: GridSpec, u: Vec<f64>, p: Option<Vec<f64>>, theta: Option<Vec<f64>>) -> Result<Self> {
        let nodes = spec.nt * spec.space.n_nodes();
        check_samples("u", &u, nodes * spec.d())?;
        if let Some(p) = &p {
            check_samples("p", p, nodes)?;
        }
        if let Some(th) = &theta {
            check_samples("theta", th, nodes)?;
        }
        Ok(Self {
            spec,
            u,
            p,
            theta,
            alpha_hint: None,
        })
    }

    /// Samples `u(x, t)`; the closure writes the `d` velocity components.
    pub fn sample(spec: GridSpec, u: impl Fn(&[f64], f64, &mut [f64])) -> Result<Self> {
        let d = spec.d();
        let n = spec.space.n_nodes();
        let mut vals = vec![0.0; spec.nt * n * d];
        for it in 0..spec.nt {
            let t = spec.time(it);
            for k in 0..n {
                let x = spec.space.point(spec.space.index(k));
                let off = (it * n + k) * d;
                u(&x[..d], t, &mut vals[off..off + d]);
            }
        }
        Self::new(spec, vals, None, None)
    }

    fn sample_scalar(&self, f: impl Fn(&[f64], f64) -> f64) -> Vec<f64> {
        let n = self.spec.space.n_nodes();
        let d = self.spec.d();
        let mut out = Vec::with_capacity(self.spec.nt * n);
        for it in 0..self.spec.nt {
            let t = self.spec.time(it);
            for k in 0..n {
                let x = self.spec.space.point(self.spec.space.index(k));
                out.push(f(&x[..d], t));
            }
        }
        out
    }

    pub fn with_pressure_fn(self, p: impl Fn(&[f64], f64) -> f64) -> Result<Self> {
        let vals = self.sample_scalar(p);
        self.with_pressure(vals)
    }

    pub fn with_pressure(mut self, p: Vec<f64>) -> Result<Self> {
        check_samples("p", &p, self.spec.nt * self.spec.space.n_nodes())?;
        self.p = Some(p);
        Ok(self)
    }

    pub fn with_theta_fn(self, theta: impl Fn(&[f64], f64) -> f64) -> Result<Self> {
        let vals = self.sample_scalar(theta);
        self.with_theta(vals)
    }

    pub fn with_theta(mut self, theta: Vec<f64>) -> Result<Self> {
        check_samples("theta", &theta, self.spec.nt * self.spec.space.n_nodes())?;
        self.theta = Some(theta);
        Ok(self)
    }

    pub fn spec(&self) -> &GridSpec {
        &self.spec
    }

    pub fn d(&self) -> usize {
        self.spec.d()
    }

    pub fn u_raw(&self) -> &[f64] {
        &self.u
    }

    pub fn p_raw(&self) -> Option<&[f64]> {
        self.p.as_deref()
    }

    pub fn theta_raw(&self) -> Option<&[f64]> {
        self.theta.as_deref()
    }

    pub fn u_at(&self, it: usize, flat: usize) -> &[f64] {
        let d = self.d();
        let off = (it * self.spec.space.n_nodes() + flat) * d;
        &self.u[off..off + d]
    }

    fn scalar_at(v: &Option<Vec<f64>>, n: usize, it: usize, flat: usize) -> Option<f64> {
        v.as_ref().map(|v| v[it * n + flat])
    }

    pub fn state(&self, it: usize, flat: usize) -> State<'_> {
        let n = self.spec.space.n_nodes();
        State {
            u: self.u_at(it, flat),
            p: Self::scalar_at(&self.p, n, it, flat),
            theta: Self::scalar_at(&self.theta, n, it, flat),
        }
    }

    /// `|∇u|²` by centered differences, one-sided on the grid edge.
    pub fn grad_u_sq(&self, it: usize, idx: [usize; 3]) -> f64 {
        let g = &self.spec.space;
        let h = g.h();
        let d = self.d();
        let mut total = 0.0;
        for axis in 0..d {
            let (mut lo, mut hi) = (idx, idx);
            let mut span = 2.0;
            if idx[axis] == 0 {
                span = 1.0;
            } else {
                lo[axis] -= 1;
            }
            if idx[axis] + 1 == g.nx {
                span -= 1.0;
            } else {
                hi[axis] += 1;
            }
            let ul = self.u_at(it, g.flat(lo));
            let uh = self.u_at(it, g.flat(hi));
            for c in 0..d {
                let diff = (uh[c] - ul[c]) / (span * h);
                total += diff * diff;
            }
        }
        total
    }

    /// Largest velocity magnitude over the grid.
    pub fn max_speed(&self) -> f64 {
        self.u
            .chunks(self.d())
            .map(|c| c.iter().map(|v| v * v).sum::<f64>().sqrt())
            .fold(0.0, f64::max)
    }
}

/// Field values at one node.
#[derive(Clone, Copy, Debug)]
pub struct State<'a> {
    pub u: &'a [f64],
    pub p: Option<f64>,
    pub theta: Option<f64>,
}

impl State<'_> {
    fn speed_sq(&self) -> f64 {
        self.u.iter().map(|v| v * v).sum()
    }
}

/// How the Hölder estimates may treat a pair.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum PairKind {
    /// `η = |u|²/2`, `Q = (|u|²/2 + p) u`.
    Euler,
    /// `η = u²/2`, `Q = u³/3` in one dimension.
    Burgers,
    Other,
}

/// Entropy `η` and entropy flux `Q`, split into a transport part and an
/// optional pressure part so the cylinder terms can be reported separately.
#[derive(Clone, Copy, Debug)]
pub struct EntropyPair {
    pub label: &'static str,
    pub kind: PairKind,
    pub eta: fn(&State) -> f64,
    pub flux: fn(&State, &mut [f64]),
    pub pressure_flux: Option<fn(&State, &mut [f64])>,
    pub needs_theta: bool,
}

impl EntropyPair {
    pub fn euler() -> Self {
        Self {
            label: "euler_energy",
            kind: PairKind::Euler,
            eta: |s| 0.5 * s.speed_sq(),
            flux: |s, out| {
                let e = 0.5 * s.speed_sq();
                for (o, u) in out.iter_mut().zip(s.u) {
                    *o = e * u;
                }
            },
            pressure_flux: Some(|s, out| {
                let p = s.p.unwrap_or(0.0);
                for (o, u) in out.iter_mut().zip(s.u) {
                    *o = p * u;
                }
            }),
            needs_theta: false,
        }
    }

    pub fn burgers() -> Self {
        Self {
            label: "burgers",
            kind: PairKind::Burgers,
            eta: |s| 0.5 * s.u[0] * s.u[0],
            flux: |s, out| out[0] = s.u[0].powi(3) / 3.0,
            pressure_flux: None,
            needs_theta: false,
        }
    }

    /// The conservation law itself, `η = u`, `Q = u²/2`.
    pub fn burgers_momentum() -> Self {
        Self {
            label: "burgers_momentum",
            kind: PairKind::Other,
            eta: |s| s.u[0],
            flux: |s, out| out[0] = 0.5 * s.u[0] * s.u[0],
            pressure_flux: None,
            needs_theta: false,
        }
    }

    /// Transported scalar, `η = θ²/2`, `Q = u θ²/2`.
    pub fn passive_scalar() -> Self {
        Self {
            label: "passive_scalar",
            kind: PairKind::Other,
            eta: |s| 0.5 * s.theta.unwrap_or(0.0).powi(2),
            flux: |s, out| {
                let e = 0.5 * s.theta.unwrap_or(0.0).powi(2);
                for (o, u) in out.iter_mut().zip(s.u) {
                    *o = e * u;
                }
            },
            pressure_flux: None,
            needs_theta: true,
        }
    }

    fn check(&self, field: &GriddedField) -> Result<()> {
        if self.pressure_flux.is_some() && field.p.is_none() {
            return Err(Error::MissingComponent("p"));
        }
        if self.needs_theta && field.theta.is_none() {
            return Err(Error::MissingComponent("theta"));
        }
        if self.kind == PairKind::Burgers && field.d() != 1 {
            return Err(invalid("the Burgers pair is one-dimensional"));
        }
        Ok(())
    }

    fn total_flux(&self, s: &State, out: &mut [f64], scratch: &mut [f64]) {
        (self.flux)(s, out);
        if let Some(pf) = self.pressure_flux {
            pf(s, scratch);
            for (o, v) in out.iter_mut().zip(scratch.iter()) {
                *o += v;
            }
        }
    }
}

/// Value and derivatives of a test function at a point.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Jet {
    pub value: f64,
    pub dt: f64,
    pub grad: [f64; 3],
    pub lap: f64,
}

/// Closed box outside which a test function vanishes.
#[derive(Clone, Debug, PartialEq)]
pub struct Support {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    pub t_lo: f64,
    pub t_hi: f64,
}

pub trait TestFunction: Sync {
    fn jet(&self, x: &[f64], t: f64) -> Jet;
    fn support(&self) -> Support;
    /// Sampled test functions only make sense on their own grid.
    fn grid(&self) -> Option<&GridSpec> {
        None
    }
}

/// One-dimensional transition from 1 at `u = 0` to 0 at `u = 1`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Profile {
    /// `1 − 3u² + 2u³`.
    Cubic,
    /// `f(1−u) / (f(u) + f(1−u))` with `f(x) = e^{−1/x}`, a mollified indicator.
    Smooth,
}

impl Profile {
    /// `(ψ, ψ′, ψ″)` at `u`, clamped outside `[0, 1]`.
    pub fn eval(self, u: f64) -> (f64, f64, f64) {
        if u <= 0.0 {
            return (1.0, 0.0, 0.0);
        }
        if u >= 1.0 {
            return (0.0, 0.0, 0.0);
        }
        match self {
            Profile::Cubic => (
                1.0 - 3.0 * u * u + 2.0 * u * u * u,
                -6.0 * u + 6.0 * u * u,
                -6.0 + 12.0 * u,
            ),
            Profile::Smooth => {
                let f = |x: f64| (-1.0 / x).exp();
                let f1 = |x: f64| f(x) / (x * x);
                let f2 = |x: f64| f(x) * (1.0 - 2.0 * x) / x.powi(4);
                let (g, g1, g2) = (f(1.0 - u), -f1(1.0 - u), f2(1.0 - u));
                let (k, k1, k2) = (f(u), f1(u), f2(u));
                let s = g + k;
                let s1 = g1 + k1;
                let n = g1 * k - g * k1;
                let n1 = g2 * k - g * k2;
                (g / s, n / (s * s), (n1 * s - 2.0 * n * s1) / (s * s * s))
            }
        }
    }

    /// `sup |ψ′|`.
    pub fn slope_bound(self) -> f64 {
        match self {
            Profile::Cubic => 1.5,
            Profile::Smooth => scan_max(|u| self.eval(u).1.abs()),
        }
    }
}

/// Maximum of `f` over a fine sampling of `[0, 1]`, padded for the gaps.
fn scan_max(f: impl Fn(f64) -> f64) -> f64 {
    const N: usize = 20_000;
    // interior samples: the profiles are clamped exactly at 0 and 1
    let m = (0..=N)
        .map(|k| f((k as f64 / N as f64).clamp(1e-12, 1.0 - 1e-12)))
        .fold(0.0, f64::max);
    m * (1.0 + 1e-6)
}

/// `1` on `[lo, hi]`, `0` outside `[lo − ramp, hi + ramp]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Plateau {
    pub lo: f64,
    pub hi: f64,
    pub ramp: f64,
    pub profile: Profile,
}

impl Plateau {
    pub fn new(lo: f64, hi: f64, ramp: f64) -> Self {
        Self {
            lo,
            hi,
            ramp,
            profile: Profile::Cubic,
        }
    }

    /// Equal to one from `lo` onwards, e.g. a ramp up in time that stays on.
    pub fn ramp_up(lo: f64, ramp: f64) -> Self {
        Self::new(lo, f64::INFINITY, ramp)
    }

    pub fn eval(&self, x: f64) -> (f64, f64, f64) {
        if x < self.lo {
            let (v, d1, d2) = self.profile.eval((self.lo - x) / self.ramp);
            (v, -d1 / self.ramp, d2 / (self.ramp * self.ramp))
        } else if x > self.hi {
            let (v, d1, d2) = self.profile.eval((x - self.hi) / self.ramp);
            (v, d1 / self.ramp, d2 / (self.ramp * self.ramp))
        } else {
            (1.0, 0.0, 0.0)
        }
    }
}

/// Tensor product of plateaus in each space axis and in time.
#[derive(Clone, Debug, PartialEq)]
pub struct ProductTest {
    pub space: Vec<Plateau>,
    pub time: Plateau,
}

impl TestFunction for ProductTest {
    fn jet(&self, x: &[f64], t: f64) -> Jet {
        let parts: Vec<(f64, f64, f64)> = self.space.iter().zip(x).map(|(p, &xi)| p.eval(xi)).collect();
        let (tv, td, _) = self.time.eval(t);
        let space_val: f64 = parts.iter().map(|p| p.0).product();
        let mut jet = Jet {
            value: space_val * tv,
            dt: space_val * td,
            ..Jet::default()
        };
        for i in 0..parts.len() {
            let others: f64 = parts
                .iter()
                .enumerate()
                .filter(|(j, _)| *j != i)
                .map(|(_, p)| p.0)
                .product();
            jet.grad[i] = parts[i].1 * others * tv;
            jet.lap += parts[i].2 * others * tv;
        }
        jet
    }

    fn support(&self) -> Support {
        Support {
            lo: self.space.iter().map(|p| p.lo - p.ramp).collect(),
            hi: self.space.iter().map(|p| p.hi + p.ramp).collect(),
            t_lo: self.time.lo - self.time.ramp,
            t_hi: self.time.hi + self.time.ramp,
        }
    }
}

/// Radial bump `ψ((|x − c| − r₀)/w)`: one on `B_{r₀}(c)`, zero outside `B_{r₀+w}(c)`.
#[derive(Clone, Debug, PartialEq)]
pub struct RadialBump {
    pub center: Vec<f64>,
    pub inner: f64,
    pub width: f64,
    pub profile: Profile,
    pub time: Option<Plateau>,
}

impl RadialBump {
    fn spatial(&self, x: &[f64]) -> (f64, [f64; 3], f64) {
        let d = self.center.len();
        let mut diff = [0.0; 3];
        for i in 0..d {
            diff[i] = x[i] - self.center[i];
        }
        let rho = diff.iter().map(|v| v * v).sum::<f64>().sqrt();
        if rho <= self.inner {
            return (1.0, [0.0; 3], 0.0);
        }
        let (v, d1, d2) = self.profile.eval((rho - self.inner) / self.width);
        let (g1, g2) = (d1 / self.width, d2 / (self.width * self.width));
        let mut grad = [0.0; 3];
        for i in 0..d {
            grad[i] = g1 * diff[i] / rho;
        }
        (v, grad, g2 + (d as f64 - 1.0) * g1 / rho)
    }
}

impl TestFunction for RadialBump {
    fn jet(&self, x: &[f64], t: f64) -> Jet {
        let (v, grad, lap) = self.spatial(x);
        let (tv, td, _) = self.time.map_or((1.0, 0.0, 0.0), |p| p.eval(t));
        Jet {
            value: v * tv,
            dt: v * td,
            grad: grad.map(|g| g * tv),
            lap: lap * tv,
        }
    }

    fn support(&self) -> Support {
        let r = self.inner + self.width;
        let (t_lo, t_hi) = self
            .time
            .map_or((f64::NEG_INFINITY, f64::INFINITY), |p| (p.lo - p.ramp, p.hi + p.ramp));
        Support {
            lo: self.center.iter().map(|c| c - r).collect(),
            hi: self.center.iter().map(|c| c + r).collect(),
            t_lo,
            t_hi,
        }
    }
}

/// Test function given by samples on a grid; derivatives by centered
/// differences.
#[derive(Clone, Debug, PartialEq)]
pub struct SampledTest {
    spec: GridSpec,
    values: Vec<f64>,
    support: Support,
}

impl SampledTest {
    pub fn new(spec: GridSpec, values: Vec<f64>) -> Result<Self> {
        check_samples("phi", &values, spec.nt * spec.space.n_nodes())?;
        let g = &spec.space;
        let d = g.d;
        let (mut lo, mut hi) = ([usize::MAX; 3], [0usize; 3]);
        let (mut t_lo, mut t_hi) = (usize::MAX, 0usize);
        let n = g.n_nodes();
        for (k, v) in values.iter().enumerate() {
            if *v != 0.0 {
                let (it, idx) = (k / n, g.index(k % n));
                t_lo = t_lo.min(it);
                t_hi = t_hi.max(it);
                for axis in 0..d {
                    lo[axis] = lo[axis].min(idx[axis]);
                    hi[axis] = hi[axis].max(idx[axis]);
                }
            }
        }
        // one extra node each side, where the differences still see the data
        let support = if t_lo == usize::MAX {
            Support {
                lo: vec![g.a; d],
                hi: vec![g.a; d],
                t_lo: 1.0,
                t_hi: 0.0,
            }
        } else {
            Support {
                lo: (0..d).map(|i| g.coord(lo[i]) - g.h()).collect(),
                hi: (0..d).map(|i| g.coord(hi[i]) + g.h()).collect(),
                t_lo: spec.time(t_lo) - spec.dt(),
                t_hi: spec.time(t_hi) + spec.dt(),
            }
        };
        Ok(Self { spec, values, support })
    }

    pub fn from_fn(spec: GridSpec, f: impl Fn(&[f64], f64) -> f64) -> Result<Self> {
        let g = &spec.space;
        let mut values = Vec::with_capacity(spec.nt * g.n_nodes());
        for it in 0..spec.nt {
            for k in 0..g.n_nodes() {
                let x = g.point(g.index(k));
                values.push(f(&x[..g.d], spec.time(it)));
            }
        }
        Self::new(spec, values)
    }

    fn value(&self, it: isize, idx: [isize; 3]) -> f64 {
        let g = &self.spec.space;
        if it < 0 || it >= self.spec.nt as isize {
            return 0.0;
        }
        let mut u = [0usize; 3];
        for axis in 0..g.d {
            if idx[axis] < 0 || idx[axis] >= g.nx as isize {
                return 0.0;
            }
            u[axis] = idx[axis] as usize;
        }
        self.values[it as usize * g.n_nodes() + g.flat(u)]
    }
}

impl TestFunction for SampledTest {
    fn jet(&self, x: &[f64], t: f64) -> Jet {
        let g = &self.spec.space;
        let h = g.h();
        let dt = self.spec.dt();
        let it = (t / dt).round() as isize;
        let mut idx = [0isize; 3];
        for axis in 0..g.d {
            idx[axis] = ((x[axis] - g.a) / h).round() as isize;
        }
        let c = self.value(it, idx);
        let mut jet = Jet {
            value: c,
            ..Jet::default()
        };
        jet.dt = (self.value(it + 1, idx) - self.value(it - 1, idx)) / (2.0 * dt);
        for axis in 0..g.d {
            let (mut lo, mut hi) = (idx, idx);
            lo[axis] -= 1;
            hi[axis] += 1;
            let (vl, vh) = (self.value(it, lo), self.value(it, hi));
            jet.grad[axis] = (vh - vl) / (2.0 * h);
            jet.lap += (vh - 2.0 * c + vl) / (h * h);
        }
        jet
    }

    fn support(&self) -> Support {
        self.support.clone()
    }

    fn grid(&self) -> Option<&GridSpec> {
        Some(&self.spec)
    }
}

/// Sum of two test functions.
pub struct SumTest<'a>(pub &'a dyn TestFunction, pub &'a dyn TestFunction);

impl TestFunction for SumTest<'_> {
    fn jet(&self, x: &[f64], t: f64) -> Jet {
        let (a, b) = (self.0.jet(x, t), self.1.jet(x, t));
        let grad = std::array::from_fn(|i| a.grad[i] + b.grad[i]);
        Jet {
            value: a.value + b.value,
            dt: a.dt + b.dt,
            grad,
            lap: a.lap + b.lap,
        }
    }

    fn support(&self) -> Support {
        let (a, b) = (self.0.support(), self.1.support());
        Support {
            lo: a.lo.iter().zip(&b.lo).map(|(x, y)| x.min(*y)).collect(),
            hi: a.hi.iter().zip(&b.hi).map(|(x, y)| x.max(*y)).collect(),
            t_lo: a.t_lo.min(b.t_lo),
            t_hi: a.t_hi.max(b.t_hi),
        }
    }

    fn grid(&self) -> Option<&GridSpec> {
        self.0.grid().or(self.1.grid())
    }
}

/// Realized constants of a cutoff pair:
/// `|∇χ| ≤ c_chi/δ`, `|η′| ≤ c_eta/δ^α`, `|Δχ| ≤ c_lap/δ²`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct CutoffConstants {
    pub c_chi: f64,
    pub c_eta: f64,
    pub c_lap: f64,
}

/// `χ_δ(y) η_δ(t)` with `χ_δ = 1` on `B_δ(x)`, `0` outside `B_{2δ}(x)`, and
/// `η_δ = 1` on `(t − δ^α, t + δ^α)`, `0` outside `(t − (2δ)^α, t + (2δ)^α)`.
///
/// The temporal transition has length `(2^α − 1) δ^α`, hence
/// `c_eta = c_chi / (2^α − 1)`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CutoffPair {
    pub center: Vec<f64>,
    pub t: f64,
    pub delta: f64,
    pub alpha: f64,
    pub profile: Profile,
    pub constants: CutoffConstants,
}

impl CutoffPair {
    pub fn new(center: Vec<f64>, t: f64, delta: f64, alpha: f64) -> Result<Self> {
        Self::with_profile(center, t, delta, alpha, Profile::Cubic)
    }

    pub fn with_profile(center: Vec<f64>, t: f64, delta: f64, alpha: f64, profile: Profile) -> Result<Self> {
        if !(delta.is_finite() && delta > 0.0) {
            return Err(invalid(format!("delta must be positive, got {delta}")));
        }
        if !(alpha.is_finite() && alpha > 0.0) {
            return Err(invalid(format!("alpha must be positive, got {alpha}")));
        }
        let d = center.len();
        if !(1..=MAX_DIM).contains(&d) {
            return Err(invalid(format!("cutoff dimension {d} unsupported")));
        }
        let c_chi = profile.slope_bound();
        let c_eta = c_chi / (2f64.powf(alpha) - 1.0);
        let dm1 = d as f64 - 1.0;
        let c_lap = scan_max(|u| {
            let (_, d1, d2) = profile.eval(u);
            (d2 + dm1 * d1 / (1.0 + u)).abs()
        });
        let cut = Self {
            center,
            t,
            delta,
            alpha,
            profile,
            constants: CutoffConstants { c_chi, c_eta, c_lap },
        };
        cut.verify()?;
        Ok(cut)
    }

    pub fn inner_time(&self) -> f64 {
        self.delta.powf(self.alpha)
    }

    pub fn outer_time(&self) -> f64 {
        (2.0 * self.delta).powf(self.alpha)
    }

    /// Range and derivative bounds along a radial and a temporal sampling.
    fn verify(&self) -> Result<()> {
        const N: usize = 4096;
        let c = &self.constants;
        for k in 0..=N {
            let rho = 2.5 * self.delta * k as f64 / N as f64;
            let (v, g, lap) = self.chi_radial(rho);
            let ok_range =
                (0.0..=1.0).contains(&v) && (rho >= self.delta || v == 1.0) && (rho < 2.0 * self.delta || v == 0.0);
            if !ok_range || g.abs() > c.c_chi / self.delta || lap.abs() > c.c_lap / (self.delta * self.delta) {
                return Err(Error::Consistency(format!("spatial cutoff bound fails at rho = {rho}")));
            }
            let tau = 1.2 * self.outer_time() * k as f64 / N as f64;
            let (v, dv) = self.eta(self.t + tau);
            if !(0.0..=1.0).contains(&v) || dv.abs() > c.c_eta / self.inner_time() {
                return Err(Error::Consistency(format!(
                    "temporal cutoff bound fails at tau = {tau}"
                )));
            }
        }
        Ok(())
    }

    /// `(χ, ∂_ρ χ, Δχ)` at distance `rho` from the center.
    fn chi_radial(&self, rho: f64) -> (f64, f64, f64) {
        let dl = self.delta;
        if rho <= dl {
            return (1.0, 0.0, 0.0);
        }
        let (v, d1, d2) = self.profile.eval(rho / dl - 1.0);
        let dm1 = self.center.len() as f64 - 1.0;
        (v, d1 / dl, d2 / (dl * dl) + dm1 * d1 / (dl * rho))
    }

    pub fn chi(&self, x: &[f64]) -> (f64, [f64; 3], f64) {
        let mut diff = [0.0; 3];
        for (i, c) in self.center.iter().enumerate() {
            diff[i] = x[i] - c;
        }
        let rho = diff.iter().map(|v| v * v).sum::<f64>().sqrt();
        let (v, g, lap) = self.chi_radial(rho);
        let mut grad = [0.0; 3];
        if g != 0.0 {
            for i in 0..self.center.len() {
                grad[i] = g * diff[i] / rho;
            }
        }
        (v, grad, lap)
    }

    pub fn eta(&self, t: f64) -> (f64, f64) {
        let (a, b) = (self.inner_time(), self.outer_time());
        let tau = (t - self.t).abs();
        let (v, d1, _) = self.profile.eval((tau - a) / (b - a));
        (v, d1 / (b - a) * (t - self.t).signum())
    }

    /// Membership in the open cylinder `C^α_δ`.
    pub fn inner_contains(&self, x: &[f64], t: f64) -> bool {
        self.within(x, t, self.delta, self.inner_time())
    }

    /// Membership in the open cylinder `C^α_{2δ}`, which carries the cutoff.
    pub fn outer_contains(&self, x: &[f64], t: f64) -> bool {
        self.within(x, t, 2.0 * self.delta, self.outer_time())
    }

    fn within(&self, x: &[f64], t: f64, r: f64, tau: f64) -> bool {
        let r2: f64 = self.center.iter().zip(x).map(|(c, v)| (c - v) * (c - v)).sum();
        r2 < r * r && (t - self.t).abs() < tau
    }
}

impl TestFunction for CutoffPair {
    fn jet(&self, x: &[f64], t: f64) -> Jet {
        let (cv, cg, cl) = self.chi(x);
        let (ev, ed) = self.eta(t);
        Jet {
            value: cv * ev,
            dt: cv * ed,
            grad: cg.map(|g| g * ev),
            lap: cl * ev,
        }
    }

    fn support(&self) -> Support {
        let r = 2.0 * self.delta;
        Support {
            lo: self.center.iter().map(|c| c - r).collect(),
            hi: self.center.iter().map(|c| c + r).collect(),
            t_lo: self.t - self.outer_time(),
            t_hi: self.t + self.outer_time(),
        }
    }
}

/// One node visited by a quadrature.
struct Node {
    x: [f64; 3],
    t: f64,
    it: usize,
    idx: [usize; 3],
    flat: usize,
    w: f64,
}

/// Weighted sum over the nodes of the support box, reduced in time order.
fn integrate<const K: usize>(spec: &GridSpec, sup: &Support, f: impl Fn(&Node) -> [f64; K] + Sync) -> [f64; K] {
    let g = &spec.space;
    let (Some((t0, t1)), Some((lo, hi))) = (spec.time_range(sup.t_lo, sup.t_hi), g.node_box(&sup.lo, &sup.hi)) else {
        return [0.0; K];
    };
    let slices: Vec<[f64; K]> = (t0..=t1)
        .into_par_iter()
        .map(|it| {
            let t = spec.time(it);
            let wt = spec.time_weight(it);
            let mut acc = [0.0; K];
            g.for_each_in_box(lo, hi, |idx| {
                let node = Node {
                    x: g.point(idx),
                    t,
                    it,
                    idx,
                    flat: g.flat(idx),
                    w: wt * g.weight(idx),
                };
                let v = f(&node);
                for k in 0..K {
                    acc[k] += node.w * v[k];
                }
            });
            acc
        })
        .collect();
    let mut total = [0.0; K];
    for s in &slices {
        for k in 0..K {
            total[k] += s[k];
        }
    }
    total
}

fn check_grid(field: &GriddedField, phi: &dyn TestFunction) -> Result<()> {
    if let Some(g) = phi.grid() {
        if g != field.spec() {
            return Err(Error::Shape("sampled test function lives on a different grid".into()));
        }
    }
    let sup = phi.support();
    if sup.lo.len() != field.d() {
        return Err(Error::DimensionMismatch {
            expected: field.d(),
            got: sup.lo.len(),
        });
    }
    Ok(())
}

/// Which edges of the space-time box a support may touch.
#[derive(Clone, Copy, Debug, Default)]
struct Relax {
    final_time: bool,
    spatial_boundary: bool,
}

fn check_margin(spec: &GridSpec, sup: &Support, relax: Relax) -> Result<()> {
    let g = &spec.space;
    let m = MARGIN_CELLS * g.h();
    if !relax.spatial_boundary {
        for axis in 0..g.d {
            if sup.lo[axis] < g.a + m || sup.hi[axis] > g.b - m {
                return Err(Error::DomainMargin(format!(
                    "support [{}, {}] along axis {axis} is within {MARGIN_CELLS} cells of [{}, {}]",
                    sup.lo[axis], sup.hi[axis], g.a, g.b
                )));
            }
        }
    }
    let mt = MARGIN_CELLS * spec.dt();
    if sup.t_lo < mt {
        return Err(Error::DomainMargin(format!(
            "support starts at t = {} before {mt}",
            sup.t_lo
        )));
    }
    if !relax.final_time && sup.t_hi > spec.t_end - mt {
        return Err(Error::DomainMargin(format!(
            "support ends at t = {} after {}",
            sup.t_hi,
            spec.t_end - mt
        )));
    }
    Ok(())
}

/// `∫∫ η[u] ∂_t φ + Q[u]·∇φ`, which equals `⟨D, φ⟩` for the entropy
/// production measure `D`.
pub fn entropy_production(field: &GriddedField, pair: &EntropyPair, phi: &dyn TestFunction) -> Result<f64> {
    pair.check(field)?;
    check_grid(field, phi)?;
    check_margin(field.spec(), &phi.support(), Relax::default())?;
    let d = field.d();
    let [v] = integrate(field.spec(), &phi.support(), |n| {
        let jet = phi.jet(&n.x[..d], n.t);
        if jet.dt == 0.0 && jet.grad == [0.0; 3] {
            return [0.0];
        }
        let s = field.state(n.it, n.flat);
        let (mut q, mut scratch) = ([0.0; 3], [0.0; 3]);
        pair.total_flux(&s, &mut q[..d], &mut scratch[..d]);
        let flux: f64 = (0..d).map(|i| q[i] * jet.grad[i]).sum();
        [(pair.eta)(&s) * jet.dt + flux]
    });
    if !v.is_finite() {
        return Err(Error::NonFinite("entropy production".into()));
    }
    Ok(v)
}

/// Local `L^q_t L^r_x` norms on `C^α_{2δ}` and the matching norms of the
/// cutoff factors.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LocalNorms {
    pub q: ExtReal,
    pub r: ExtReal,
    pub u: f64,
    pub p: Option<f64>,
    pub chi: f64,
    pub grad_chi: f64,
    pub lap_chi: f64,
    pub eta_prime: f64,
    pub eta_flux: f64,
    pub eta_visc: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BalanceReport {
    pub pair: &'static str,
    pub center: Vec<f64>,
    pub t: f64,
    pub delta: f64,
    pub alpha: f64,
    pub nu: Option<f64>,
    /// `I` (time derivative), `II` (transport), `III` (pressure), `IV` (viscous).
    pub terms: Vec<Term>,
    pub weak_mass: f64,
    /// Discrete Hölder bound on `|I| + |II| + |III| + |IV|`.
    pub holder_bound: Option<f64>,
    /// The same bound with cutoff norms replaced by their scaling estimates.
    pub analytic_bound: Option<f64>,
    pub local_norms: Option<LocalNorms>,
    pub constants: CutoffConstants,
    /// `∫∫ χη ν|∇u|²`.
    pub viscous_pairing: Option<f64>,
    /// `∫_{C^α_δ} ν|∇u|²`.
    pub morrey_mass: Option<f64>,
}

impl BalanceReport {
    pub fn term(&self, label: &str) -> Option<f64> {
        self.terms.iter().find(|t| t.label == label).map(|t| t.value)
    }
}

fn term(label: &str, value: f64) -> Term {
    Term {
        label: label.to_string(),
        value,
    }
}

/// `I + II + III (+ IV)` for the cutoff of a cylinder; an upper estimate of
/// the defect mass on `C^α_δ` when the defect is non-negative.
pub fn cylinder_balance(
    field: &GriddedField,
    cutoff: &CutoffPair,
    pair: &EntropyPair,
    nu: Option<f64>,
) -> Result<BalanceReport> {
    pair.check(field)?;
    check_grid(field, cutoff)?;
    if let Some(nu) = nu {
        if !(nu.is_finite() && nu > 0.0) {
            return Err(invalid(format!("viscosity must be positive, got {nu}")));
        }
    }
    let sup = cutoff.support();
    check_margin(field.spec(), &sup, Relax::default())?;
    let d = field.d();
    let nu_v = nu.unwrap_or(0.0);
    let sums = integrate(field.spec(), &sup, |n| {
        let x = &n.x[..d];
        if !cutoff.outer_contains(x, n.t) {
            return [0.0; 6];
        }
        let jet = cutoff.jet(x, n.t);
        let s = field.state(n.it, n.flat);
        let e = (pair.eta)(&s);
        let mut q = [0.0; 3];
        (pair.flux)(&s, &mut q[..d]);
        let transport: f64 = (0..d).map(|i| q[i] * jet.grad[i]).sum();
        let pressure = match pair.pressure_flux {
            Some(pf) => {
                pf(&s, &mut q[..d]);
                (0..d).map(|i| q[i] * jet.grad[i]).sum()
            }
            None => 0.0,
        };
        let (visc, morrey) = if nu.is_some() {
            let g2 = nu_v * field.grad_u_sq(n.it, n.idx);
            (jet.value * g2, if cutoff.inner_contains(x, n.t) { g2 } else { 0.0 })
        } else {
            (0.0, 0.0)
        };
        [e * jet.dt, transport, pressure, nu_v * e * jet.lap, visc, morrey]
    });
    if sums.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("cylinder balance".into()));
    }
    let [i1, i2, i3, i4, visc, morrey] = sums;
    let mut terms = vec![term("I", i1), term("II", i2), term("III", i3)];
    if nu.is_some() {
        terms.push(term("IV", i4));
    }
    Ok(BalanceReport {
        pair: pair.label,
        center: cutoff.center.clone(),
        t: cutoff.t,
        delta: cutoff.delta,
        alpha: cutoff.alpha,
        nu,
        weak_mass: i1 + i2 + i3 + i4,
        terms,
        holder_bound: None,
        analytic_bound: None,
        local_norms: None,
        constants: cutoff.constants,
        viscous_pairing: nu.map(|_| visc),
        morrey_mass: nu.map(|_| morrey),
    })
}

/// Euler energy balance `I + II + III` on a cylinder; requires pressure.
pub fn euler_weak_mass(field: &GriddedField, cutoff: &CutoffPair) -> Result<BalanceReport> {
    cylinder_balance(field, cutoff, &EntropyPair::euler(), None)
}

/// Navier–Stokes energy balance `I + II + III + IV`; bounds the mass of
/// `D[u] + ν|∇u|²` on the cylinder.
pub fn ns_weak_mass(field: &GriddedField, cutoff: &CutoffPair, nu: f64) -> Result<BalanceReport> {
    cylinder_balance(field, cutoff, &EntropyPair::euler(), Some(nu))
}

/// Exponent `r/(r − k)`, infinite when `r = k`, one when `r = ∞`.
fn dual(r: ExtReal, k: f64) -> ExtReal {
    match r {
        ExtReal::Infinite => ExtReal::Finite(1.0),
        ExtReal::Finite(r) if r == k => ExtReal::Infinite,
        ExtReal::Finite(r) => ExtReal::Finite(r / (r - k)),
    }
}

/// Weighted `L^p` norm of `(weight, value)` pairs.
fn lp_norm(items: impl Iterator<Item = (f64, f64)>, p: ExtReal) -> f64 {
    match p {
        ExtReal::Infinite => items.map(|(_, v)| v.abs()).fold(0.0, f64::max),
        ExtReal::Finite(p) => items.map(|(w, v)| w * v.abs().powf(p)).sum::<f64>().powf(1.0 / p),
    }
}

fn check_holder_exponent(name: &str, v: ExtReal) -> Result<()> {
    match v {
        ExtReal::Finite(x) if !(x.is_finite() && x >= 3.0) => Err(invalid(format!("{name} = {x} is below 3"))),
        _ => Ok(()),
    }
}

/// The balance on `cutoff` together with its Hölder bound
///
/// `|I| ≤ ½‖χ‖_{r/(r−2)}‖η′‖_{q/(q−2)}‖u‖²`,
/// `|II| ≤ ½‖∇χ‖_{r/(r−3)}‖η‖_{q/(q−3)}‖u‖³`,
/// `|III| ≤ ‖∇χ‖_{r/(r−3)}‖η‖_{q/(q−3)}‖p‖_{q/2,r/2}‖u‖`,
/// `|IV| ≤ ½ν‖Δχ‖_{r/(r−2)}‖η‖_{q/(q−2)}‖u‖²`,
///
/// all norms taken with the quadrature weights over the nodes of
/// `C^α_{2δ}`, so the inequality holds exactly for the discrete sums.
pub fn holder_cylinder_bound(
    field: &GriddedField,
    cutoff: &CutoffPair,
    pair: &EntropyPair,
    q: ExtReal,
    r: ExtReal,
    nu: Option<f64>,
) -> Result<BalanceReport> {
    check_holder_exponent("q", q)?;
    check_holder_exponent("r", r)?;
    if !matches!(pair.kind, PairKind::Euler | PairKind::Burgers) {
        return Err(invalid(format!("no Hölder bound for the {} pair", pair.label)));
    }
    let mut report = cylinder_balance(field, cutoff, pair, nu)?;
    let spec = field.spec();
    let g = &spec.space;
    let d = g.d;
    let sup = cutoff.support();
    let (Some((t0, t1)), Some((lo, hi))) = (spec.time_range(sup.t_lo, sup.t_hi), g.node_box(&sup.lo, &sup.hi)) else {
        return Err(Error::DomainMargin("cylinder contains no grid nodes".into()));
    };

    // Spatial nodes of B_{2δ}.
    let mut ball: Vec<([usize; 3], f64)> = Vec::new();
    g.for_each_in_box(lo, hi, |idx| {
        let x = g.point(idx);
        let r2: f64 = (0..d).map(|i| (x[i] - cutoff.center[i]).powi(2)).sum();
        if r2 < 4.0 * cutoff.delta * cutoff.delta {
            ball.push((idx, g.weight(idx)));
        }
    });
    let times: Vec<(usize, f64)> = (t0..=t1)
        .filter(|&it| (spec.time(it) - cutoff.t).abs() < cutoff.outer_time())
        .map(|it| (it, spec.time_weight(it)))
        .collect();

    let chi_vals: Vec<(f64, f64, f64, f64)> = ball
        .iter()
        .map(|(idx, w)| {
            let (v, grad, lap) = cutoff.chi(&g.point(*idx)[..d]);
            (*w, v, grad.iter().map(|x| x * x).sum::<f64>().sqrt(), lap)
        })
        .collect();
    let chi = lp_norm(chi_vals.iter().map(|c| (c.0, c.1)), dual(r, 2.0));
    let grad_chi = lp_norm(chi_vals.iter().map(|c| (c.0, c.2)), dual(r, 3.0));
    let lap_chi = lp_norm(chi_vals.iter().map(|c| (c.0, c.3)), dual(r, 2.0));
    let eta_vals: Vec<(f64, f64, f64)> = times
        .iter()
        .map(|(it, w)| {
            let (v, dv) = cutoff.eta(spec.time(*it));
            (*w, v, dv)
        })
        .collect();
    let eta_prime = lp_norm(eta_vals.iter().map(|e| (e.0, e.2)), dual(q, 2.0));
    let eta_flux = lp_norm(eta_vals.iter().map(|e| (e.0, e.1)), dual(q, 3.0));
    let eta_visc = lp_norm(eta_vals.iter().map(|e| (e.0, e.1)), dual(q, 2.0));

    let slice_norms: Vec<(f64, f64, f64)> = times
        .par_iter()
        .map(|(it, w)| {
            let speed = ball.iter().map(|(idx, wx)| {
                let u = field.u_at(*it, g.flat(*idx));
                (*wx, u.iter().map(|v| v * v).sum::<f64>().sqrt())
            });
            let un = lp_norm(speed, r);
            let pn = match field.p_raw() {
                Some(p) => {
                    let n = g.n_nodes();
                    lp_norm(
                        ball.iter().map(|(idx, wx)| (*wx, p[it * n + g.flat(*idx)])),
                        r.divided_by(2.0),
                    )
                }
                None => 0.0,
            };
            (*w, un, pn)
        })
        .collect();
    let u_norm = lp_norm(slice_norms.iter().map(|s| (s.0, s.1)), q);
    let uses_pressure = pair.pressure_flux.is_some();
    let p_norm = uses_pressure.then(|| lp_norm(slice_norms.iter().map(|s| (s.0, s.2)), q.divided_by(2.0)));
    let nu_v = nu.unwrap_or(0.0);

    let assemble = |chi: f64, grad_chi: f64, lap_chi: f64, eta_prime: f64, eta_flux: f64, eta_visc: f64| {
        0.5 * chi * eta_prime * u_norm.powi(2)
            + 0.5 * grad_chi * eta_flux * u_norm.powi(3)
            + grad_chi * eta_flux * p_norm.unwrap_or(0.0) * u_norm
            + 0.5 * nu_v * lap_chi * eta_visc * u_norm.powi(2)
    };
    let bound = assemble(chi, grad_chi, lap_chi, eta_prime, eta_flux, eta_visc);

    // Scaling estimates with the realized constants.
    let (dl, c) = (cutoff.delta, cutoff.constants);
    let ball_vol = unit_ball_volume(d) * (2.0 * dl).powi(d as i32);
    let shell_vol = ball_vol * (1.0 - 0.5f64.powi(d as i32));
    let window = 2.0 * cutoff.outer_time();
    let ramps = 2.0 * (cutoff.outer_time() - cutoff.inner_time());
    let pow = |vol: f64, p: ExtReal| match p {
        ExtReal::Infinite => 1.0,
        ExtReal::Finite(p) => vol.powf(1.0 / p),
    };
    let analytic = assemble(
        pow(ball_vol, dual(r, 2.0)),
        c.c_chi / dl * pow(shell_vol, dual(r, 3.0)),
        c.c_lap / (dl * dl) * pow(shell_vol, dual(r, 2.0)),
        c.c_eta / cutoff.inner_time() * pow(ramps, dual(q, 2.0)),
        pow(window, dual(q, 3.0)),
        pow(window, dual(q, 2.0)),
    );

    let magnitude: f64 = report.terms.iter().map(|t| t.value.abs()).sum();
    if report.weak_mass > bound * (1.0 + BOUND_SLACK) + f64::MIN_POSITIVE
        || magnitude > bound * (1.0 + BOUND_SLACK) + 1e-300
    {
        return Err(Error::Consistency(format!(
            "weak mass {} (|terms| {magnitude}) exceeds Hölder bound {bound}",
            report.weak_mass
        )));
    }
    report.holder_bound = Some(bound);
    report.analytic_bound = Some(analytic);
    report.local_norms = Some(LocalNorms {
        q,
        r,
        u: u_norm,
        p: p_norm,
        chi,
        grad_chi,
        lap_chi,
        eta_prime,
        eta_flux,
        eta_visc,
    });
    Ok(report)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BoundaryReport {
    /// `∫∫ η φ_t + Q·∇φ (+ ν η Δφ)` over `Ω × (0, T]`.
    pub interior: f64,
    /// `∫ η[u(T)] φ(T)`.
    pub terminal: f64,
    /// `∫∫ φ ν|∇u|²`, for viscous fields.
    pub viscous_pairing: Option<f64>,
    /// `interior − viscous_pairing − terminal`.
    pub residual: Option<f64>,
}

/// Balance against a test function that may be non-zero at the final time
/// (and, with `allow_spatial_boundary`, on `∂Ω`).
pub fn boundary_extended_mass(
    field: &GriddedField,
    phi: &dyn TestFunction,
    pair: &EntropyPair,
    nu: Option<f64>,
    allow_spatial_boundary: bool,
) -> Result<BoundaryReport> {
    pair.check(field)?;
    check_grid(field, phi)?;
    let sup = phi.support();
    check_margin(
        field.spec(),
        &sup,
        Relax {
            final_time: true,
            spatial_boundary: allow_spatial_boundary,
        },
    )?;
    let spec = field.spec();
    let d = field.d();
    let nu_v = nu.unwrap_or(0.0);
    let [interior, visc] = integrate(spec, &sup, |n| {
        let jet = phi.jet(&n.x[..d], n.t);
        let s = field.state(n.it, n.flat);
        let e = (pair.eta)(&s);
        let (mut q, mut scratch) = ([0.0; 3], [0.0; 3]);
        pair.total_flux(&s, &mut q[..d], &mut scratch[..d]);
        let flux: f64 = (0..d).map(|i| q[i] * jet.grad[i]).sum();
        let visc = if nu.is_some() && jet.value != 0.0 {
            jet.value * nu_v * field.grad_u_sq(n.it, n.idx)
        } else {
            0.0
        };
        [e * jet.dt + flux + nu_v * e * jet.lap, visc]
    });
    let last = spec.nt - 1;
    let t_end = spec.t_end;
    let g = &spec.space;
    let terminal: f64 = match g.node_box(&sup.lo, &sup.hi) {
        Some((lo, hi)) => {
            let mut acc = 0.0;
            g.for_each_in_box(lo, hi, |idx| {
                let x = g.point(idx);
                let flat = g.flat(idx);
                acc += g.weight(idx) * (pair.eta)(&field.state(last, flat)) * phi.jet(&x[..d], t_end).value;
            });
            acc
        }
        None => 0.0,
    };
    if !(interior.is_finite() && visc.is_finite() && terminal.is_finite()) {
        return Err(Error::NonFinite("boundary-extended balance".into()));
    }
    Ok(BoundaryReport {
        interior,
        terminal,
        viscous_pairing: nu.map(|_| visc),
        residual: nu.map(|_| interior - visc - terminal),
    })
}

/// Spatial vector field on a [`SpaceGrid`], components last.
#[derive(Clone, Debug, PartialEq)]
pub struct VectorField {
    grid: SpaceGrid,
    values: Vec<f64>,
}

impl VectorField {
    pub fn new(grid: SpaceGrid, values: Vec<f64>) -> Result<Self> {
        check_samples("V", &values, grid.n_nodes() * grid.d)?;
        Ok(Self { grid, values })
    }

    pub fn sample(grid: SpaceGrid, f: impl Fn(&[f64], &mut [f64])) -> Result<Self> {
        let d = grid.d;
        let mut values = vec![0.0; grid.n_nodes() * d];
        for k in 0..grid.n_nodes() {
            let x = grid.point(grid.index(k));
            f(&x[..d], &mut values[k * d..(k + 1) * d]);
        }
        Self::new(grid, values)
    }

    pub fn grid(&self) -> &SpaceGrid {
        &self.grid
    }

    pub fn at(&self, flat: usize) -> &[f64] {
        let d = self.grid.d;
        &self.values[flat * d..(flat + 1) * d]
    }

    /// Centered-difference divergence at interior nodes, `None` on the edge.
    pub fn divergence(&self, idx: [usize; 3]) -> Option<f64> {
        let g = &self.grid;
        let mut div = 0.0;
        for axis in 0..g.d {
            if idx[axis] == 0 || idx[axis] + 1 == g.nx {
                return None;
            }
            let (mut lo, mut hi) = (idx, idx);
            lo[axis] -= 1;
            hi[axis] += 1;
            div += (self.at(g.flat(hi))[axis] - self.at(g.flat(lo))[axis]) / (2.0 * g.h());
        }
        Some(div)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Ball {
    pub center: [f64; 3],
    pub radius: f64,
}

impl Ball {
    pub fn new(center: &[f64], radius: f64) -> Self {
        let mut c = [0.0; 3];
        c[..center.len()].copy_from_slice(center);
        Self { center: c, radius }
    }

    fn dist(&self, x: &[f64]) -> f64 {
        x.iter()
            .zip(&self.center)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SignedSupportReport {
    /// `|∫ V·∇φ χ|`.
    pub bound_i: f64,
    /// `|∫ V·∇χ φ|`.
    pub bound_ii: f64,
    /// `|∫ V·∇(χφ)|`.
    pub pairing: f64,
    /// `‖V‖_{L^r}` over the union of the doubled balls.
    pub v_norm_on_cover: f64,
    pub threshold: f64,
    pub above_threshold_nodes: usize,
}

/// Covering estimate for a divergence `T = div V` tested against `φ`.
///
/// With `χ = max_i χ_i`, `χ_i` the cubic bump of `B_{r_i}` inside
/// `B_{2r_i}`, `⟨T, φ⟩ = ⟨T, χφ⟩` as long as the balls contain every node
/// where the finite-difference divergence exceeds `threshold`.
pub fn signed_support_bound(
    v: &VectorField,
    covering: &[Ball],
    phi: &dyn TestFunction,
    r: ExtReal,
    threshold: Option<f64>,
) -> Result<SignedSupportReport> {
    let g = v.grid();
    let d = g.d;
    let r_min = if d == 1 {
        f64::INFINITY
    } else {
        d as f64 / (d as f64 - 1.0)
    };
    if let ExtReal::Finite(rv) = r {
        if rv.is_nan() || rv < r_min {
            return Err(invalid(format!("r = {rv} is below d/(d-1)")));
        }
    }
    if covering.iter().any(|b| !(b.radius.is_finite() && b.radius > 0.0)) {
        return Err(invalid("covering radii must be positive"));
    }
    let sup = phi.support();
    if sup.lo.len() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            got: sup.lo.len(),
        });
    }
    let m = MARGIN_CELLS * g.h();
    if (0..d).any(|i| sup.lo[i] < g.a + m || sup.hi[i] > g.b - m) {
        return Err(Error::DomainMargin(
            "test function support reaches the grid edge".into(),
        ));
    }

    let n = g.n_nodes();
    let divs: Vec<Option<f64>> = (0..n).map(|k| v.divergence(g.index(k))).collect();
    let max_div = divs.iter().flatten().map(|x| x.abs()).fold(0.0, f64::max);
    let thr = threshold.unwrap_or(DIV_THRESHOLD_FRACTION * max_div);
    let mut above = 0;
    let mut missed = 0;
    for (k, dv) in divs.iter().enumerate() {
        if let Some(dv) = dv {
            if dv.abs() > thr {
                above += 1;
                let x = g.point(g.index(k));
                if !covering.iter().any(|b| b.dist(&x[..d]) < b.radius) {
                    missed += 1;
                }
            }
        }
    }
    if missed > 0 {
        return Err(Error::CoveringIncomplete { missed });
    }

    // χ and ∇χ from the ball attaining the maximum.
    let chi = |x: &[f64]| -> (f64, [f64; 3]) {
        let mut best = (0.0, [0.0; 3]);
        for b in covering {
            let rho = b.dist(x);
            if rho >= 2.0 * b.radius {
                continue;
            }
            let (val, d1, _) = Profile::Cubic.eval(rho / b.radius - 1.0);
            if val > best.0 {
                let mut grad = [0.0; 3];
                if d1 != 0.0 {
                    for i in 0..d {
                        grad[i] = d1 / b.radius * (x[i] - b.center[i]) / rho;
                    }
                }
                best = (val, grad);
            }
        }
        best
    };

    let (mut s1, mut s2, mut norm) = (0.0, 0.0, 0.0);
    for k in 0..n {
        let idx = g.index(k);
        let x = g.point(idx);
        let x = &x[..d];
        let w = g.weight(idx);
        let (cv, cg) = chi(x);
        let vv = v.at(k);
        if covering.iter().any(|b| b.dist(x) < 2.0 * b.radius) {
            let speed = vv.iter().map(|a| a * a).sum::<f64>().sqrt();
            norm = match r {
                ExtReal::Infinite => f64::max(norm, speed),
                ExtReal::Finite(p) => norm + w * speed.powf(p),
            };
        }
        if cv == 0.0 {
            continue;
        }
        let jet = phi.jet(x, 0.0);
        s1 += w * cv * (0..d).map(|i| vv[i] * jet.grad[i]).sum::<f64>();
        s2 += w * jet.value * (0..d).map(|i| vv[i] * cg[i]).sum::<f64>();
    }
    let v_norm_on_cover = match r {
        ExtReal::Infinite => norm,
        ExtReal::Finite(p) => norm.powf(1.0 / p),
    };
    let (bound_i, bound_ii, pairing) = (s1.abs(), s2.abs(), (s1 + s2).abs());
    if !(pairing.is_finite() && v_norm_on_cover.is_finite()) {
        return Err(Error::NonFinite("signed-support pairing".into()));
    }
    if pairing > (bound_i + bound_ii) * (1.0 + 1e-12) {
        return Err(Error::Consistency("pairing exceeds I + II".into()));
    }
    Ok(SignedSupportReport {
        bound_i,
        bound_ii,
        pairing,
        v_norm_on_cover,
        threshold: thr,
        above_threshold_nodes: above,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn constant_field(d: usize, nx: usize, nt: usize, u0: f64, p0: f64) -> GriddedField {
        let spec = GridSpec::new(d, -1.0, 1.0, nx, 1.0, nt).unwrap();
        GriddedField::sample(spec, |_, _, out| {
            out.iter_mut().enumerate().for_each(|(i, o)| *o = u0 * (i + 1) as f64)
        })
        .unwrap()
        .with_pressure_fn(|_, _| p0)
        .unwrap()
    }

    #[test]
    fn grid_indexing_round_trips() {
        let g = SpaceGrid::new(3, 0.0, 1.0, 5).unwrap();
        for k in 0..g.n_nodes() {
            assert_eq!(g.flat(g.index(k)), k);
        }
        assert_eq!(g.index(1), [0, 0, 1]);
        assert!(SpaceGrid::new(4, 0.0, 1.0, 5).is_err());
        assert!(GridSpec::new(1, 0.0, 1.0, 5, 0.0, 3).is_err());
    }

    #[test]
    fn profiles_meet_their_bounds() {
        for prof in [Profile::Cubic, Profile::Smooth] {
            let (v0, _, _) = prof.eval(1e-9);
            let (v1, _, _) = prof.eval(1.0 - 1e-9);
            assert!((v0 - 1.0).abs() < 1e-6 && v1.abs() < 1e-6);
            let c = prof.slope_bound();
            for k in 0..=1000 {
                let u = k as f64 / 1000.0;
                let (v, d1, d2) = prof.eval(u);
                assert!((0.0..=1.0).contains(&v));
                assert!(d1.abs() <= c);
                // derivative checks against differences
                if k > 0 && k < 1000 {
                    let e = 1e-6;
                    let fd1 = (prof.eval(u + e).0 - prof.eval(u - e).0) / (2.0 * e);
                    let fd2 = (prof.eval(u + e).1 - prof.eval(u - e).1) / (2.0 * e);
                    assert!((fd1 - d1).abs() < 1e-5, "{prof:?} {u}");
                    assert!((fd2 - d2).abs() < 1e-4 * d2.abs().max(1.0), "{prof:?} {u}");
                }
            }
        }
        assert!((Profile::Smooth.slope_bound() - 2.0).abs() < 1e-5);
    }

    #[test]
    fn cutoff_constants() {
        let c = CutoffPair::new(vec![0.0], 0.5, 0.1, 1.0).unwrap();
        assert_eq!(c.constants.c_chi, 1.5);
        assert_eq!(c.constants.c_eta, 1.5);
        let c = CutoffPair::new(vec![0.0, 0.0], 0.5, 0.1, 2.0).unwrap();
        assert!((c.constants.c_eta - 0.5).abs() < 1e-15);
        // ψ'' + ψ'/ρ on [1, 2] peaks at the inner edge: 6
        assert!((c.constants.c_lap - 6.0).abs() < 1e-4, "{:?}", c.constants);
    }

    #[test]
    fn constant_states_produce_nothing() {
        for d in 1..=2 {
            let field = constant_field(d, 41, 41, 0.7, 0.3);
            let cut = CutoffPair::new(vec![0.0; d], 0.5, 0.2, 1.0).unwrap();
            let rep = euler_weak_mass(&field, &cut).unwrap();
            for t in &rep.terms {
                assert!(t.value.abs() < 1e-12, "{t:?}");
            }
            let rep = holder_cylinder_bound(
                &field,
                &cut,
                &EntropyPair::euler(),
                ExtReal::Infinite,
                ExtReal::Infinite,
                None,
            )
            .unwrap();
            assert!(rep.weak_mass.abs() <= rep.holder_bound.unwrap());
        }
    }

    #[test]
    fn zero_field_gives_zero_bound() {
        let field = constant_field(2, 33, 33, 0.0, 0.0);
        let cut = CutoffPair::new(vec![0.1, -0.1], 0.5, 0.15, 1.0).unwrap();
        let rep = holder_cylinder_bound(
            &field,
            &cut,
            &EntropyPair::euler(),
            ExtReal::Finite(4.0),
            ExtReal::Finite(3.0),
            Some(0.1),
        )
        .unwrap();
        assert_eq!(rep.holder_bound, Some(0.0));
        assert!(rep.terms.iter().all(|t| t.value == 0.0));
    }

    #[test]
    fn margins_and_components_are_enforced() {
        let spec = GridSpec::new(1, -1.0, 1.0, 41, 1.0, 41).unwrap();
        let field = GriddedField::sample(spec, |_, _, o| o[0] = 1.0).unwrap();
        let cut = CutoffPair::new(vec![0.0], 0.5, 0.1, 1.0).unwrap();
        assert!(matches!(
            euler_weak_mass(&field, &cut),
            Err(Error::MissingComponent("p"))
        ));
        let edge = CutoffPair::new(vec![0.9], 0.5, 0.1, 1.0).unwrap();
        assert!(matches!(
            cylinder_balance(&field, &edge, &EntropyPair::burgers(), None),
            Err(Error::DomainMargin(_))
        ));
        let late = CutoffPair::new(vec![0.0], 0.9, 0.1, 1.0).unwrap();
        assert!(matches!(
            cylinder_balance(&field, &late, &EntropyPair::burgers(), None),
            Err(Error::DomainMargin(_))
        ));
        assert!(holder_cylinder_bound(
            &field,
            &cut,
            &EntropyPair::burgers(),
            ExtReal::Finite(2.0),
            ExtReal::Infinite,
            None
        )
        .is_err());
        assert!(matches!(
            entropy_production(&field, &EntropyPair::passive_scalar(), &cut),
            Err(Error::MissingComponent("theta"))
        ));
    }

    #[test]
    fn sampled_and_analytic_tests_agree() {
        let spec = GridSpec::new(1, -1.0, 1.0, 201, 1.0, 201).unwrap();
        let field = GriddedField::sample(spec.clone(), |x, t, o| o[0] = (x[0] + 0.3 * t).sin()).unwrap();
        let phi = ProductTest {
            space: vec![Plateau::new(-0.3, 0.3, 0.3)],
            time: Plateau::new(0.4, 0.6, 0.2),
        };
        let sampled = SampledTest::from_fn(spec, |x, t| phi.jet(x, t).value).unwrap();
        let a = entropy_production(&field, &EntropyPair::burgers(), &phi).unwrap();
        let b = entropy_production(&field, &EntropyPair::burgers(), &sampled).unwrap();
        assert!((a - b).abs() < 5e-3 * a.abs().max(1e-3), "{a} {b}");
    }
}

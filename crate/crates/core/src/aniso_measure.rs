//! Discrete anisotropic measures on `R^d × R`.
//!
//! The probe object is the open cylinder `C^α_δ(x,t) = B_δ(x) × (t − δ^α, t + δ^α)`.
//! Everything here works on finite point sets or finite atomic measures;
//! box counting stands in for the Hausdorff dimension, which no finite
//! estimator can see.

use std::collections::{HashMap, HashSet};

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{invalid, Error, Result};
use crate::numerics::fit_line;

/// Fit residual above which a ladder or box count is not trusted.
pub const FIT_RESIDUAL_MAX: f64 = 0.25;
/// Allowed decrease of box dimension between increasing alphas.
pub const ALPHA_MONOTONICITY_TOL: f64 = 0.15;
/// Factor slack in the "densities non-increasing" check.
pub const LADDER_FACTOR_TOL: f64 = 1.25;
/// Atoms lighter than this fraction of the total mass are not support centers.
pub const SUPPORT_WEIGHT_FRACTION: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SpaceTimePoint {
    pub x: Vec<f64>,
    pub t: f64,
}

impl SpaceTimePoint {
    pub fn new(x: Vec<f64>, t: f64) -> Self {
        Self { x, t }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Cylinder {
    pub center: SpaceTimePoint,
    pub delta: f64,
    pub alpha: f64,
}

impl Cylinder {
    pub fn new(center: SpaceTimePoint, delta: f64, alpha: f64) -> Result<Self> {
        if !(delta.is_finite() && delta > 0.0) {
            return Err(invalid(format!("delta must be positive, got {delta}")));
        }
        check_alpha(alpha)?;
        if center.x.iter().any(|v| !v.is_finite()) || !center.t.is_finite() {
            return Err(Error::NonFinite("cylinder center".into()));
        }
        Ok(Self { center, delta, alpha })
    }

    /// Temporal half-length `δ^α`.
    pub fn half_time(&self) -> f64 {
        self.delta.powf(self.alpha)
    }

    pub fn contains(&self, x: &[f64], t: f64) -> bool {
        in_cylinder(&self.center.x, self.center.t, self.delta, self.half_time(), x, t)
    }
}

#[inline]
fn in_cylinder(cx: &[f64], ct: f64, delta: f64, tau: f64, x: &[f64], t: f64) -> bool {
    if (t - ct).abs() >= tau {
        return false;
    }
    let r2: f64 = cx.iter().zip(x).map(|(a, b)| (a - b) * (a - b)).sum();
    r2 < delta * delta
}

fn check_alpha(alpha: f64) -> Result<()> {
    if !(alpha.is_finite() && alpha > 0.0) {
        return Err(invalid(format!("alpha must be positive, got {alpha}")));
    }
    Ok(())
}

/// Finite set of space-time points sharing a spatial dimension.
#[derive(Clone, Debug, PartialEq)]
pub struct PointCloud {
    d: usize,
    coords: Vec<f64>,
    times: Vec<f64>,
}

impl PointCloud {
    pub fn new(d: usize, points: &[SpaceTimePoint]) -> Result<Self> {
        if d == 0 {
            return Err(invalid("spatial dimension d must be at least 1"));
        }
        let mut coords = Vec::with_capacity(points.len() * d);
        let mut times = Vec::with_capacity(points.len());
        for p in points {
            if p.x.len() != d {
                return Err(Error::DimensionMismatch {
                    expected: d,
                    got: p.x.len(),
                });
            }
            coords.extend_from_slice(&p.x);
            times.push(p.t);
        }
        Self::from_flat(d, coords, times)
    }

    /// `coords` holds `n·d` spatial coordinates, point after point.
    pub fn from_flat(d: usize, coords: Vec<f64>, times: Vec<f64>) -> Result<Self> {
        if d == 0 {
            return Err(invalid("spatial dimension d must be at least 1"));
        }
        if coords.len() != times.len() * d {
            return Err(Error::Shape(format!(
                "{} coordinates for {} points in d = {d}",
                coords.len(),
                times.len()
            )));
        }
        if coords.iter().chain(&times).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("point coordinates".into()));
        }
        Ok(Self { d, coords, times })
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn x(&self, i: usize) -> &[f64] {
        &self.coords[i * self.d..(i + 1) * self.d]
    }

    pub fn t(&self, i: usize) -> f64 {
        self.times[i]
    }

    pub fn point(&self, i: usize) -> SpaceTimePoint {
        SpaceTimePoint::new(self.x(i).to_vec(), self.t(i))
    }

    /// Union of two clouds of the same dimension.
    pub fn union(&self, other: &PointCloud) -> Result<PointCloud> {
        if self.d != other.d {
            return Err(Error::DimensionMismatch {
                expected: self.d,
                got: other.d,
            });
        }
        let mut coords = self.coords.clone();
        coords.extend_from_slice(&other.coords);
        let mut times = self.times.clone();
        times.extend_from_slice(&other.times);
        Ok(PointCloud {
            d: self.d,
            coords,
            times,
        })
    }

    fn cell_key(&self, i: usize, side: f64, tside: f64) -> Vec<i64> {
        let mut key: Vec<i64> = self.x(i).iter().map(|v| (v / side).floor() as i64).collect();
        key.push((self.t(i) / tside).floor() as i64);
        key
    }
}

/// Finite positive measure `Σ w_i δ_{(x_i,t_i)}`. Immutable once built.
#[derive(Clone, Debug, PartialEq)]
pub struct AtomicMeasure {
    points: PointCloud,
    weights: Vec<f64>,
}

impl AtomicMeasure {
    pub fn new(d: usize, atoms: &[(SpaceTimePoint, f64)]) -> Result<Self> {
        let pts: Vec<SpaceTimePoint> = atoms.iter().map(|(p, _)| p.clone()).collect();
        let weights = atoms.iter().map(|(_, w)| *w).collect();
        Self::from_cloud(PointCloud::new(d, &pts)?, weights)
    }

    pub fn from_cloud(points: PointCloud, weights: Vec<f64>) -> Result<Self> {
        if weights.len() != points.len() {
            return Err(Error::Shape(format!(
                "{} weights for {} atoms",
                weights.len(),
                points.len()
            )));
        }
        if let Some(w) = weights.iter().find(|w| !w.is_finite()) {
            return Err(Error::NonFinite(format!("atom weight {w}")));
        }
        if let Some(w) = weights.iter().find(|w| **w < 0.0) {
            return Err(invalid(format!("negative atom weight {w}")));
        }
        Ok(Self { points, weights })
    }

    pub fn d(&self) -> usize {
        self.points.d
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn points(&self) -> &PointCloud {
        &self.points
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn total_mass(&self) -> f64 {
        self.weights.iter().sum()
    }

    fn support_threshold(&self) -> f64 {
        SUPPORT_WEIGHT_FRACTION * self.total_mass()
    }

    /// Indices of atoms carrying non-negligible weight.
    pub fn support_indices(&self) -> Vec<usize> {
        let thr = self.support_threshold();
        (0..self.len()).filter(|&i| self.weights[i] > thr).collect()
    }

    /// Positions of the support atoms.
    pub fn support(&self) -> PointCloud {
        let idx = self.support_indices();
        let mut coords = Vec::with_capacity(idx.len() * self.d());
        let mut times = Vec::with_capacity(idx.len());
        for &i in &idx {
            coords.extend_from_slice(self.points.x(i));
            times.push(self.points.t(i));
        }
        PointCloud {
            d: self.d(),
            coords,
            times,
        }
    }

    /// `∫ f dμ`.
    pub fn integrate<F: Fn(&[f64], f64) -> f64>(&self, f: F) -> f64 {
        (0..self.len())
            .map(|i| self.weights[i] * f(self.points.x(i), self.points.t(i)))
            .sum()
    }
}

/// `μ(C)`: total weight of the atoms strictly inside the cylinder.
pub fn cylinder_mass(mu: &AtomicMeasure, c: &Cylinder) -> Result<f64> {
    if c.center.x.len() != mu.d() {
        return Err(Error::DimensionMismatch {
            expected: mu.d(),
            got: c.center.x.len(),
        });
    }
    let tau = c.half_time();
    Ok((0..mu.len())
        .filter(|&i| in_cylinder(&c.center.x, c.center.t, c.delta, tau, mu.points.x(i), mu.points.t(i)))
        .map(|i| mu.weights[i])
        .sum())
}

/// Spatial hash of the atoms with cells of side `δ × δ^α`, so that a
/// cylinder of that size only meets the `3^{d+1}` cells around its center.
struct CylinderIndex<'a> {
    mu: &'a AtomicMeasure,
    delta: f64,
    tau: f64,
    cells: HashMap<Vec<i64>, Vec<usize>>,
    offsets: Vec<Vec<i64>>,
}

impl<'a> CylinderIndex<'a> {
    fn new(mu: &'a AtomicMeasure, delta: f64, alpha: f64) -> Self {
        let tau = delta.powf(alpha);
        let mut cells: HashMap<Vec<i64>, Vec<usize>> = HashMap::new();
        for i in 0..mu.len() {
            cells.entry(mu.points.cell_key(i, delta, tau)).or_default().push(i);
        }
        let dim = mu.d() + 1;
        let mut offsets = vec![Vec::with_capacity(dim)];
        for _ in 0..dim {
            offsets = offsets
                .into_iter()
                .flat_map(|o| {
                    (-1..=1).map(move |k| {
                        let mut o = o.clone();
                        o.push(k);
                        o
                    })
                })
                .collect();
        }
        Self {
            mu,
            delta,
            tau,
            cells,
            offsets,
        }
    }

    fn mass(&self, x: &[f64], t: f64) -> f64 {
        let mut base: Vec<i64> = x.iter().map(|v| (v / self.delta).floor() as i64).collect();
        base.push((t / self.tau).floor() as i64);
        let mut key = base.clone();
        let mut total = 0.0;
        for off in &self.offsets {
            for (k, (b, o)) in key.iter_mut().zip(base.iter().zip(off)) {
                *k = b + o;
            }
            if let Some(ids) = self.cells.get(&key) {
                for &i in ids {
                    if in_cylinder(x, t, self.delta, self.tau, self.mu.points.x(i), self.mu.points.t(i)) {
                        total += self.mu.weights[i];
                    }
                }
            }
        }
        total
    }
}

fn validate_scales(scales: &[f64], min_len: usize) -> Result<()> {
    if scales.len() < min_len {
        return Err(invalid(format!("need at least {min_len} scales, got {}", scales.len())));
    }
    if scales.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
        return Err(invalid("scales must be positive"));
    }
    if scales.windows(2).any(|w| w[1] >= w[0]) {
        return Err(invalid("scales must be strictly decreasing"));
    }
    Ok(())
}

/// Dyadic-style ladder `delta_max · ratio^k`, `k = 0..count`.
pub fn geometric_scales(delta_max: f64, ratio: f64, count: usize) -> Result<Vec<f64>> {
    if !(delta_max.is_finite() && delta_max > 0.0) {
        return Err(invalid(format!("delta_max must be positive, got {delta_max}")));
    }
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(invalid(format!("ratio must lie in (0, 1), got {ratio}")));
    }
    Ok((0..count).map(|k| delta_max * ratio.powi(k as i32)).collect())
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BoxCount {
    pub alpha: f64,
    pub dim_estimate: f64,
    pub scales: Vec<f64>,
    pub counts: Vec<usize>,
    pub fit_residual: f64,
}

/// Box-counting dimension with cells of spatial side `δ` and temporal side
/// `δ^α`, anchored at the origin.
pub fn box_counting_dimension(points: &PointCloud, alpha: f64, scales: &[f64]) -> Result<BoxCount> {
    check_alpha(alpha)?;
    validate_scales(scales, 3)?;
    if points.is_empty() {
        return Err(Error::EmptySupport);
    }
    let counts: Vec<usize> = scales
        .par_iter()
        .map(|&delta| {
            let tside = delta.powf(alpha);
            let occupied: HashSet<Vec<i64>> = (0..points.len()).map(|i| points.cell_key(i, delta, tside)).collect();
            occupied.len()
        })
        .collect();
    let xs: Vec<f64> = scales.iter().map(|s| -s.ln()).collect();
    let ys: Vec<f64> = counts.iter().map(|&c| (c as f64).ln()).collect();
    let fit = fit_line(&xs, &ys).ok_or_else(|| Error::Consistency("degenerate scale set".into()))?;
    Ok(BoxCount {
        alpha,
        dim_estimate: fit.slope,
        scales: scales.to_vec(),
        counts,
        fit_residual: fit.residual,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub enum CenterPolicy {
    /// Every atom above the support threshold.
    Support,
    /// The `k` heaviest support atoms (ties broken by index).
    TopK(usize),
    /// `k` support atoms drawn without replacement with a fixed seed.
    Sample { k: usize, seed: u64 },
    /// User-supplied centers.
    Explicit(Vec<SpaceTimePoint>),
}

fn resolve_centers(mu: &AtomicMeasure, policy: &CenterPolicy) -> Result<Vec<SpaceTimePoint>> {
    let support = mu.support_indices();
    let pick = |ids: &[usize]| ids.iter().map(|&i| mu.points.point(i)).collect::<Vec<_>>();
    let centers = match policy {
        CenterPolicy::Support => pick(&support),
        CenterPolicy::TopK(k) => {
            let mut ids = support.clone();
            ids.sort_by(|&a, &b| mu.weights[b].total_cmp(&mu.weights[a]).then(a.cmp(&b)));
            ids.truncate(*k);
            ids.sort_unstable();
            pick(&ids)
        }
        CenterPolicy::Sample { k, seed } => {
            let mut rng = ChaCha8Rng::seed_from_u64(*seed);
            let k = (*k).min(support.len());
            let mut chosen: Vec<usize> = sample(&mut rng, support.len(), k)
                .into_iter()
                .map(|j| support[j])
                .collect();
            chosen.sort_unstable();
            pick(&chosen)
        }
        CenterPolicy::Explicit(pts) => {
            if let Some(p) = pts.iter().find(|p| p.x.len() != mu.d()) {
                return Err(Error::DimensionMismatch {
                    expected: mu.d(),
                    got: p.x.len(),
                });
            }
            pts.clone()
        }
    };
    if centers.is_empty() {
        return Err(Error::EmptySupport);
    }
    Ok(centers)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DensityLadder {
    pub alpha: f64,
    pub s: f64,
    pub scales: Vec<f64>,
    /// `sup_centers μ(C^α_δ)` per scale.
    pub sup_masses: Vec<f64>,
    /// `sup_masses / δ^s`.
    pub densities: Vec<f64>,
    /// Slope of `log sup_mass` against `log δ`, when 3 scales carry mass.
    pub fitted_slope: Option<f64>,
    pub fit_residual: Option<f64>,
    /// Densities never grow by more than [`LADDER_FACTOR_TOL`] between scales.
    pub non_increasing: bool,
    pub n_centers: usize,
}

impl DensityLadder {
    pub fn positive_scales(&self) -> usize {
        self.sup_masses.iter().filter(|m| **m > 0.0).count()
    }
}

/// Sup-density `μ(C^α_δ(x,t))/δ^s` over the centers, for each scale.
pub fn density_ladder(
    mu: &AtomicMeasure,
    alpha: f64,
    s: f64,
    scales: &[f64],
    centers: &CenterPolicy,
) -> Result<DensityLadder> {
    check_alpha(alpha)?;
    if !(s.is_finite() && s >= 0.0) {
        return Err(invalid(format!("s must be non-negative, got {s}")));
    }
    validate_scales(scales, 1)?;
    if mu.is_empty() || mu.total_mass() <= 0.0 {
        return Err(Error::EmptySupport);
    }
    let centers = resolve_centers(mu, centers)?;
    let sup_masses: Vec<f64> = scales
        .iter()
        .map(|&delta| {
            let index = CylinderIndex::new(mu, delta, alpha);
            centers
                .par_iter()
                .map(|c| index.mass(&c.x, c.t))
                .reduce(|| 0.0, f64::max)
        })
        .collect();
    let densities: Vec<f64> = sup_masses.iter().zip(scales).map(|(m, d)| m / d.powf(s)).collect();
    let (xs, ys): (Vec<f64>, Vec<f64>) = scales
        .iter()
        .zip(&sup_masses)
        .filter(|(_, m)| **m > 0.0)
        .map(|(d, m)| (d.ln(), m.ln()))
        .unzip();
    let fit = if xs.len() >= 3 { fit_line(&xs, &ys) } else { None };
    let non_increasing = densities.windows(2).all(|w| w[1] <= w[0] * LADDER_FACTOR_TOL);
    Ok(DensityLadder {
        alpha,
        s,
        scales: scales.to_vec(),
        sup_masses,
        densities,
        fitted_slope: fit.map(|f| f.slope),
        fit_residual: fit.map(|f| f.residual),
        non_increasing,
        n_centers: centers.len(),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Certified,
    Inconclusive,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Certification {
    pub certified_s: f64,
    pub verdict: Verdict,
    /// Largest `s'` with `density_k(s') ≤ 2·density_0(s')` at every scale.
    pub bounded_density_s: f64,
    pub fitted_slope: Option<f64>,
}

/// Lower bound on the dimension from bounded densities.
///
/// The bound `m_k/δ_k^{s'} ≤ 2·m_0/δ_0^{s'}` holds for every `s'` up to
/// `min_k log(2 m_0/m_k) / log(δ_0/δ_k)`, which is the exact supremum of a
/// scan over `s'`. That value overshoots a pure power law `m ∝ δ^s` by
/// `log 2 / log(δ_0/δ_k)`, so it is capped by the fitted mass slope.
pub fn certify_lower_bound(ladder: &DensityLadder) -> Certification {
    let inconclusive = |s: f64| Certification {
        certified_s: s,
        verdict: Verdict::Inconclusive,
        bounded_density_s: s,
        fitted_slope: ladder.fitted_slope,
    };
    if ladder.positive_scales() < 3 || ladder.sup_masses[0] <= 0.0 {
        return inconclusive(0.0);
    }
    let (d0, m0) = (ladder.scales[0], ladder.sup_masses[0]);
    let mut s_star = f64::INFINITY;
    for (&dk, &mk) in ladder.scales.iter().zip(&ladder.sup_masses).skip(1) {
        if mk <= 0.0 {
            continue;
        }
        s_star = s_star.min((2.0 * m0 / mk).ln() / (d0 / dk).ln());
    }
    let slope = ladder.fitted_slope.unwrap_or(f64::INFINITY);
    let certified = s_star.min(slope).max(0.0);
    let noisy = ladder.fit_residual.is_none_or(|r| r > FIT_RESIDUAL_MAX);
    Certification {
        certified_s: certified,
        verdict: if noisy {
            Verdict::Inconclusive
        } else {
            Verdict::Certified
        },
        bounded_density_s: s_star.max(0.0),
        fitted_slope: ladder.fitted_slope,
    }
}

/// Gauge radius of a cylinder covering a lattice cell of side `δ × δ^α`.
fn cell_gauge(delta: f64, d: usize) -> f64 {
    delta * (0.5 * (d as f64).sqrt()).max(1.0)
}

/// Upper estimate of `H^s_{α,δ≤cap}` for a finite point set.
///
/// Covers are restricted to lattice cells of sides `δ_k × δ_k^α`,
/// `δ_k = cap·2^{−k}`, each enclosed in a cylinder of radius
/// `δ_k·max(1, √d/2)`. Cells are intersected along the refinement path so
/// they nest even when `2^α` is not an integer, and the cheapest cover from
/// that family is found exactly by dynamic programming. Refinement stops at
/// the first level where at least half the points sit in distinct cells.
pub fn covering_premeasure(points: &PointCloud, alpha: f64, s: f64, delta_cap: f64) -> Result<f64> {
    check_alpha(alpha)?;
    if !(delta_cap.is_finite() && delta_cap > 0.0) {
        return Err(invalid(format!("delta_cap must be positive, got {delta_cap}")));
    }
    if !s.is_finite() {
        return Err(invalid("s must be finite"));
    }
    let n = points.len();
    if n == 0 {
        return Ok(0.0);
    }
    const MAX_LEVELS: usize = 60;
    // Path-intersection cell id of every point at each level.
    let mut ids: Vec<usize> = vec![0; n];
    let mut levels: Vec<Vec<usize>> = Vec::new();
    for k in 0..MAX_LEVELS {
        let delta = delta_cap * 0.5f64.powi(k as i32);
        let tside = delta.powf(alpha);
        let mut map: HashMap<(usize, Vec<i64>), usize> = HashMap::new();
        let next: Vec<usize> = (0..n)
            .map(|i| {
                let key = (ids[i], points.cell_key(i, delta, tside));
                let fresh = map.len();
                *map.entry(key).or_insert(fresh)
            })
            .collect();
        let occupied = map.len();
        levels.push(next.clone());
        ids = next;
        if 2 * occupied >= n {
            break;
        }
    }
    let d = points.d();
    let k_max = levels.len() - 1;
    let count = |k: usize| levels[k].iter().copied().max().map_or(0, |m| m + 1);
    // cost[k][c]: cheapest cover of the points of cell c at level k.
    let mut cost = vec![cell_gauge(delta_cap * 0.5f64.powi(k_max as i32), d).powf(s); count(k_max)];
    for k in (0..k_max).rev() {
        let own = cell_gauge(delta_cap * 0.5f64.powi(k as i32), d).powf(s);
        let mut children: Vec<f64> = vec![0.0; count(k)];
        let mut seen = vec![false; cost.len()];
        for i in 0..n {
            let child = levels[k + 1][i];
            if !seen[child] {
                seen[child] = true;
                children[levels[k][i]] += cost[child];
            }
        }
        cost = children.into_iter().map(|c| c.min(own)).collect();
    }
    Ok(cost.iter().sum())
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AlphaCheck {
    pub alphas: Vec<f64>,
    pub estimates: Vec<f64>,
    pub violation: bool,
}

/// Box dimensions for increasing `alphas`; a drop larger than
/// [`ALPHA_MONOTONICITY_TOL`] is flagged.
pub fn alpha_monotonicity_check(points: &PointCloud, alphas: &[f64], scales: &[f64]) -> Result<AlphaCheck> {
    if alphas.len() < 2 {
        return Err(invalid("need at least two alphas"));
    }
    if alphas.windows(2).any(|w| w[1] <= w[0]) {
        return Err(invalid("alphas must be increasing"));
    }
    let estimates = alphas
        .iter()
        .map(|&a| box_counting_dimension(points, a, scales).map(|b| b.dim_estimate))
        .collect::<Result<Vec<_>>>()?;
    let violation = estimates.windows(2).any(|w| w[1] < w[0] - ALPHA_MONOTONICITY_TOL);
    Ok(AlphaCheck {
        alphas: alphas.to_vec(),
        estimates,
        violation,
    })
}

//! Dimension exponents for dissipation measures.
//!
//! Every formula below is a minimum over the scaling exponents of the terms
//! that appear when the local energy (or entropy) balance is tested against
//! a cutoff adapted to the cylinder `B_δ(x) × (t − δ^α, t + δ^α)`:
//!
//! * the time-derivative term, scaling like `δ^{d(r−2)/r − 2α/q}`,
//! * the transport and pressure terms, `δ^{d(r−3)/r − 1 + α(q−3)/q}`,
//! * for Navier–Stokes, the viscous term `δ^{−2 + d(r−2)/r + α(q−2)/q}`.
//!
//! The `r = ∞` and `q = ∞` cases are written out as separate branches instead
//! of being left to IEEE infinity arithmetic.

use serde::{Serialize, Serializer};
use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

/// Relative tolerance for "these closed-form values coincide".
pub const COINCIDENCE_TOL: f64 = 1e-12;

/// A real number or `+∞`, used for integrability exponents.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ExtReal {
    Finite(f64),
    Infinite,
}

impl ExtReal {
    pub fn is_infinite(self) -> bool {
        matches!(self, ExtReal::Infinite)
    }

    pub fn finite(self) -> Option<f64> {
        match self {
            ExtReal::Finite(v) => Some(v),
            ExtReal::Infinite => None,
        }
    }

    /// `true` when `self >= bound`.
    pub fn at_least(self, bound: f64) -> bool {
        match self {
            ExtReal::Finite(v) => v >= bound,
            ExtReal::Infinite => true,
        }
    }

    /// `(p - k) / p`, equal to `1` at infinity.
    pub fn fraction_above(self, k: f64) -> f64 {
        match self {
            ExtReal::Finite(p) => (p - k) / p,
            ExtReal::Infinite => 1.0,
        }
    }

    /// `k / p`, equal to `0` at infinity.
    pub fn reciprocal_times(self, k: f64) -> f64 {
        match self {
            ExtReal::Finite(p) => k / p,
            ExtReal::Infinite => 0.0,
        }
    }

    /// `self / k` (used for the pressure exponents `q/2`, `r/2`).
    pub fn divided_by(self, k: f64) -> ExtReal {
        match self {
            ExtReal::Finite(p) => ExtReal::Finite(p / k),
            ExtReal::Infinite => ExtReal::Infinite,
        }
    }
}

impl From<f64> for ExtReal {
    fn from(v: f64) -> Self {
        if v.is_infinite() && v > 0.0 {
            ExtReal::Infinite
        } else {
            ExtReal::Finite(v)
        }
    }
}

impl fmt::Display for ExtReal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ExtReal::Finite(v) => write!(f, "{v}"),
            ExtReal::Infinite => f.write_str("inf"),
        }
    }
}

impl FromStr for ExtReal {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let t = s.trim();
        match t.to_ascii_lowercase().as_str() {
            "inf" | "+inf" | "infinity" | "∞" => return Ok(ExtReal::Infinite),
            _ => {}
        }
        let v = if let Some((n, d)) = t.split_once('/') {
            let n: f64 = n
                .trim()
                .parse()
                .map_err(|_| Error::invalid(format!("not a number: {s}")))?;
            let d: f64 = d
                .trim()
                .parse()
                .map_err(|_| Error::invalid(format!("not a number: {s}")))?;
            n / d
        } else {
            t.parse::<f64>()
                .map_err(|_| Error::invalid(format!("not a number: {s}")))?
        };
        if !v.is_finite() {
            return Err(Error::invalid(format!("use 'inf' for an infinite exponent, got {s}")));
        }
        Ok(ExtReal::Finite(v))
    }
}

impl Serialize for ExtReal {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            ExtReal::Finite(v) => serializer.serialize_f64(*v),
            ExtReal::Infinite => serializer.serialize_str("inf"),
        }
    }
}

/// Space-time integrability `u ∈ L^q_t L^r_x` in `d` space dimensions.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct IntegrabilityClass {
    d: u32,
    q: ExtReal,
    r: ExtReal,
}

impl IntegrabilityClass {
    /// Euler / Navier–Stokes class: requires `d ≥ 1` and `q, r ≥ 3`.
    pub fn new(d: u32, q: ExtReal, r: ExtReal) -> Result<Self> {
        if d == 0 {
            return Err(Error::invalid("spatial dimension d must be at least 1"));
        }
        for (name, v) in [("q", q), ("r", r)] {
            if let ExtReal::Finite(x) = v {
                if !x.is_finite() || x < 3.0 {
                    return Err(Error::invalid(format!("{name} = {x} is below 3")));
                }
            }
        }
        Ok(Self { d, q, r })
    }

    pub fn d(&self) -> u32 {
        self.d
    }

    pub fn q(&self) -> ExtReal {
        self.q
    }

    pub fn r(&self) -> ExtReal {
        self.r
    }

    /// `2/q + d/r`; the Prodi–Serrin locus is where this equals one.
    pub fn serrin_index(&self) -> f64 {
        self.q.reciprocal_times(2.0) + self.r.reciprocal_times(self.d as f64)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    Euler,
    ConservationLaw,
    NavierStokes,
}

/// Which infinite-exponent branch produced the terms.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Convention {
    Finite,
    RInfinite,
    QInfinite,
    RAndQInfinite,
}

impl Convention {
    fn of(q: ExtReal, r: ExtReal) -> Self {
        match (q.is_infinite(), r.is_infinite()) {
            (false, false) => Convention::Finite,
            (false, true) => Convention::RInfinite,
            (true, false) => Convention::QInfinite,
            (true, true) => Convention::RAndQInfinite,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Term {
    pub label: String,
    pub value: f64,
}

impl Term {
    fn new(label: &str, value: f64) -> Self {
        Self {
            label: label.to_string(),
            value,
        }
    }
}

/// Result of every exponent computation.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ExponentReport {
    pub schema: &'static str,
    pub regime: Regime,
    pub d: u32,
    /// Absent for conservation laws, which use a single space-time exponent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub q: Option<ExtReal>,
    pub r: ExtReal,
    pub alpha: f64,
    pub s: f64,
    pub terms: Vec<Term>,
    pub convention_applied: Convention,
    /// `s < 0`: the statement carries no information for these parameters.
    pub vacuous: bool,
    /// Absolute continuity only holds with respect to `H^{s−γ}_α`, `γ > 0`.
    pub open_exponent: bool,
    /// The value is reached as a limit of admissible exponents.
    pub endpoint_limit: bool,
    /// Closed form of the parabolic bound `d + 1 − 3(d/r + 2/q)`, reported
    /// when `α = 2` and `2/q + d/r ≥ 1`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub closed_form: Option<f64>,
}

pub const SCHEMA: &str = "dissdim/1";

impl ExponentReport {
    fn from_terms(
        regime: Regime,
        d: u32,
        q: Option<ExtReal>,
        r: ExtReal,
        alpha: f64,
        terms: Vec<Term>,
        convention: Convention,
    ) -> Self {
        let s = terms.iter().map(|t| t.value).fold(f64::INFINITY, f64::min);
        Self {
            schema: SCHEMA,
            regime,
            d,
            q,
            r,
            alpha,
            s,
            terms,
            convention_applied: convention,
            vacuous: s < 0.0,
            open_exponent: false,
            endpoint_limit: false,
            closed_form: None,
        }
    }

    pub fn term(&self, label: &str) -> Option<f64> {
        self.terms.iter().find(|t| t.label == label).map(|t| t.value)
    }
}

pub const TERM_TIME: &str = "time_derivative";
pub const TERM_FLUX: &str = "transport_pressure";
pub const TERM_VISCOUS: &str = "viscous";

fn check_alpha(alpha: f64) -> Result<()> {
    if !(alpha.is_finite() && alpha > 0.0) {
        return Err(Error::invalid(format!("alpha must be positive, got {alpha}")));
    }
    Ok(())
}

fn euler_terms(cls: &IntegrabilityClass, alpha: f64) -> [f64; 2] {
    let d = cls.d as f64;
    match (cls.q, cls.r) {
        (ExtReal::Finite(q), ExtReal::Finite(r)) => [
            d * (r - 2.0) / r - alpha * 2.0 / q,
            d * (r - 3.0) / r - 1.0 + alpha * (q - 3.0) / q,
        ],
        (ExtReal::Finite(q), ExtReal::Infinite) => [d - alpha * 2.0 / q, d - 1.0 + alpha * (q - 3.0) / q],
        (ExtReal::Infinite, ExtReal::Finite(r)) => [d * (r - 2.0) / r, d * (r - 3.0) / r - 1.0 + alpha],
        (ExtReal::Infinite, ExtReal::Infinite) => [d, d - 1.0 + alpha],
    }
}

fn viscous_term(cls: &IntegrabilityClass, alpha: f64) -> f64 {
    let d = cls.d as f64;
    match (cls.q, cls.r) {
        (ExtReal::Finite(q), ExtReal::Finite(r)) => -2.0 + d * (r - 2.0) / r + alpha * (q - 2.0) / q,
        (ExtReal::Finite(q), ExtReal::Infinite) => d - 2.0 + alpha * (q - 2.0) / q,
        (ExtReal::Infinite, ExtReal::Finite(r)) => -2.0 + d * (r - 2.0) / r + alpha,
        (ExtReal::Infinite, ExtReal::Infinite) => d - 2.0 + alpha,
    }
}

/// Euler exponent with free time-scaling `alpha`.
pub fn euler_exponent(cls: &IntegrabilityClass, alpha: f64) -> Result<ExponentReport> {
    check_alpha(alpha)?;
    let [time, flux] = euler_terms(cls, alpha);
    Ok(ExponentReport::from_terms(
        Regime::Euler,
        cls.d,
        Some(cls.q),
        cls.r,
        alpha,
        vec![Term::new(TERM_TIME, time), Term::new(TERM_FLUX, flux)],
        Convention::of(cls.q, cls.r),
    ))
}

/// The time-scaling that balances the two Euler terms, which is also the one
/// making the `L^q_t L^r_x` norm invariant under `u ↦ λ^{α−1} u(λx, λ^α t)`.
pub fn alpha_opt(cls: &IntegrabilityClass) -> f64 {
    let d = cls.d as f64;
    match (cls.q, cls.r) {
        (ExtReal::Finite(q), ExtReal::Finite(r)) => q / (q - 1.0) * (r + d) / r,
        (ExtReal::Finite(q), ExtReal::Infinite) => q / (q - 1.0),
        (ExtReal::Infinite, ExtReal::Finite(r)) => (r + d) / r,
        (ExtReal::Infinite, ExtReal::Infinite) => 1.0,
    }
}

fn euler_optimal_closed_form(cls: &IntegrabilityClass) -> f64 {
    let d = cls.d as f64;
    match (cls.q, cls.r) {
        (ExtReal::Finite(q), ExtReal::Finite(r)) => d * (r - 2.0) / r - 2.0 / (q - 1.0) * (r + d) / r,
        (ExtReal::Finite(q), ExtReal::Infinite) => d - 2.0 / (q - 1.0),
        (ExtReal::Infinite, ExtReal::Finite(r)) => d * (r - 2.0) / r,
        (ExtReal::Infinite, ExtReal::Infinite) => d,
    }
}

fn coincide(a: f64, b: f64) -> bool {
    (a - b).abs() <= COINCIDENCE_TOL * a.abs().max(b.abs()).max(1.0)
}

/// Euler exponent at the optimal time-scaling.
///
/// Returns `(s, α) = (d, 1)` for bounded solutions. Fails with
/// [`Error::Consistency`] if the two terms do not balance at `α_opt`.
pub fn euler_optimal(cls: &IntegrabilityClass) -> Result<ExponentReport> {
    let alpha = alpha_opt(cls);
    let report = euler_exponent(cls, alpha)?;
    let (time, flux) = (report.terms[0].value, report.terms[1].value);
    if !coincide(time, flux) {
        return Err(Error::Consistency(format!(
            "terms differ at alpha_opt = {alpha}: {time} vs {flux}"
        )));
    }
    let closed = euler_optimal_closed_form(cls);
    if !coincide(closed, report.s) {
        return Err(Error::Consistency(format!(
            "closed form s = {closed} disagrees with min of terms {}",
            report.s
        )));
    }
    Ok(report)
}

/// Bounded velocity without a pressure bound (`r = ∞`, `q < ∞`):
/// `s = d − 2/(q−1)`, `α = q/(q−1)`, valid up to an arbitrarily small loss
/// in `s`.
pub fn euler_unbounded_pressure(cls: &IntegrabilityClass) -> Result<ExponentReport> {
    if !cls.r.is_infinite() {
        return Err(Error::invalid("unbounded-pressure exponent requires r = inf"));
    }
    let ExtReal::Finite(q) = cls.q else {
        return Err(Error::invalid("unbounded-pressure exponent requires q < inf"));
    };
    let d = cls.d as f64;
    let alpha = q / (q - 1.0);
    let s = d - 2.0 / (q - 1.0);
    let mut report = euler_exponent(cls, alpha)?;
    if !coincide(s, report.s) {
        return Err(Error::Consistency(format!(
            "closed form s = {s} disagrees with min of terms {}",
            report.s
        )));
    }
    report.open_exponent = true;
    Ok(report)
}

/// Exponent for entropy solutions of a general conservation law with
/// `η[u], Q[u] ∈ L^r_{t,x}`: `s = d + 1 − r/(r−1)`, `s = d` for `r = ∞`.
pub fn conservation_law_exponent(d: u32, r: ExtReal) -> Result<ExponentReport> {
    if d == 0 {
        return Err(Error::invalid("spatial dimension d must be at least 1"));
    }
    let df = d as f64;
    let s = match r {
        ExtReal::Infinite => df,
        ExtReal::Finite(r) => {
            let r_min = (df + 1.0) / df;
            if !r.is_finite() || r < r_min {
                return Err(Error::invalid(format!("r = {r} is below (d+1)/d = {r_min}")));
            }
            df + 1.0 - r / (r - 1.0)
        }
    };
    let convention = if r.is_infinite() {
        Convention::RInfinite
    } else {
        Convention::Finite
    };
    Ok(ExponentReport::from_terms(
        Regime::ConservationLaw,
        d,
        None,
        r,
        1.0,
        vec![Term::new("divergence_measure", s)],
        convention,
    ))
}

/// Navier–Stokes exponent with free time-scaling `alpha`. A negative `s` is
/// reported through the `vacuous` flag rather than as an error.
pub fn navier_stokes_exponent(cls: &IntegrabilityClass, alpha: f64) -> Result<ExponentReport> {
    check_alpha(alpha)?;
    let [time, flux] = euler_terms(cls, alpha);
    let viscous = viscous_term(cls, alpha);
    let mut report = ExponentReport::from_terms(
        Regime::NavierStokes,
        cls.d,
        Some(cls.q),
        cls.r,
        alpha,
        vec![
            Term::new(TERM_TIME, time),
            Term::new(TERM_FLUX, flux),
            Term::new(TERM_VISCOUS, viscous),
        ],
        Convention::of(cls.q, cls.r),
    );
    if alpha == 2.0 {
        report.closed_form = parabolic_closed_form(cls);
    }
    Ok(report)
}

/// `d + 1 − 3(d/r + 2/q)`, the parabolic (`α = 2`) bound, defined when
/// `2/q + d/r ≥ 1`.
pub fn parabolic_closed_form(cls: &IntegrabilityClass) -> Option<f64> {
    let index = cls.serrin_index();
    if index < 1.0 - COINCIDENCE_TOL {
        return None;
    }
    Some(cls.d as f64 + 1.0 - 3.0 * index)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NumerologyCase {
    /// `u ∈ L^∞_t L^r_x`, parameter `r ∈ [3, 3d/(d−1)]`.
    UniformInTimeLr,
    /// `u ∈ L^∞_t B^{1/3}_{3,∞}`; parameter ignored.
    Besov13,
    /// `u ∈ L^∞_t H^β`, parameter `β ∈ [d/6, 5/6)`.
    SobolevBeta,
}

impl FromStr for NumerologyCase {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "uniform_in_time_lr" | "uniform_in_time_Lr" | "lr" => Ok(Self::UniformInTimeLr),
            "besov_13" | "besov" => Ok(Self::Besov13),
            "sobolev_beta" | "sobolev" => Ok(Self::SobolevBeta),
            other => Err(Error::invalid(format!("unknown case {other}"))),
        }
    }
}

/// The spatial exponent `3d/(d−1)` maximising `s` in the `L^∞_t L^r_x` case;
/// infinite in one dimension.
pub fn r_opt(d: u32) -> ExtReal {
    if d == 1 {
        ExtReal::Infinite
    } else {
        let d = d as f64;
        ExtReal::Finite(3.0 * d / (d - 1.0))
    }
}

/// Explicit `(α, s)` for the regularity classes of interest to turbulence.
pub fn case_numerology(d: u32, case: NumerologyCase, param: f64) -> Result<ExponentReport> {
    if d == 0 {
        return Err(Error::invalid("spatial dimension d must be at least 1"));
    }
    let df = d as f64;
    let (r, alpha, s, endpoint) = match case {
        NumerologyCase::UniformInTimeLr => {
            if !(param.is_finite() && param >= 3.0) {
                return Err(Error::invalid(format!("r = {param} must be at least 3")));
            }
            if let ExtReal::Finite(top) = r_opt(d) {
                if param > top * (1.0 + COINCIDENCE_TOL) {
                    return Err(Error::invalid(format!("r = {param} exceeds 3d/(d-1) = {top}")));
                }
            }
            (ExtReal::Finite(param), 1.0 + df / param, df - 2.0 * df / param, false)
        }
        NumerologyCase::Besov13 => {
            let v = (2.0 + df) / 3.0;
            (r_opt(d), v, v, true)
        }
        NumerologyCase::SobolevBeta => {
            if d >= 5 {
                return Err(Error::invalid("the Sobolev case is only non-trivial for d < 5"));
            }
            let beta = param;
            // β = d/6 gives r = 3 exactly, which is still an admissible class.
            let lo = df / 6.0;
            if !(beta >= lo && beta < 5.0 / 6.0) {
                return Err(Error::invalid(format!(
                    "beta = {beta} outside the interval [{lo}, 5/6)"
                )));
            }
            if beta >= df / 2.0 {
                return Err(Error::invalid(format!(
                    "beta = {beta} is not below d/2, no Lebesgue embedding"
                )));
            }
            let r = 2.0 * df / (df - 2.0 * beta);
            (ExtReal::Finite(r), 1.0 + (df - 2.0 * beta) / 2.0, 2.0 * beta, false)
        }
    };
    let cls = IntegrabilityClass::new(d, ExtReal::Infinite, r)?;
    let mut report = euler_exponent(&cls, alpha)?;
    if !coincide(report.s, s) {
        return Err(Error::Consistency(format!(
            "case formula s = {s} disagrees with the Euler terms {}",
            report.s
        )));
    }
    report.endpoint_limit = endpoint;
    Ok(report)
}

/// Whether a forcing with `f·u ∈ L^m_t L^l_x` keeps the dimension conclusion
/// at exponent `s`: `d(l−1)/l + α(m−1)/m ≥ s`.
pub fn forcing_admissible(d: u32, alpha: f64, s: f64, m: ExtReal, l: ExtReal) -> bool {
    let lhs = d as f64 * l.fraction_above(1.0) + alpha * m.fraction_above(1.0);
    lhs >= s - COINCIDENCE_TOL * s.abs().max(1.0)
}

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use dissdim_core::aniso_measure::{
    box_counting_dimension, certify_lower_bound, density_ladder, geometric_scales, CenterPolicy, PointCloud,
};
use dissdim_core::exponents::{
    case_numerology, conservation_law_exponent, euler_exponent, euler_optimal, euler_unbounded_pressure,
    navier_stokes_exponent, IntegrabilityClass, NumerologyCase,
};
use dissdim_core::fixtures::{
    burgers_dissipation_measure, burgers_entropy_solution, power_law_ball_mass, viscous_burgers_run, PowerLawField,
    RiemannDatum, Sampling,
};
use dissdim_core::io;
use dissdim_core::numerics::fit_line;
use dissdim_core::weak_balance::{holder_cylinder_bound, CutoffPair, EntropyPair, GridSpec, GriddedField};
use dissdim_core::{Error, Result};
use rayon::prelude::*;
use serde_json::{json, Value};

use crate::{
    BurgersArgs, DimensionArgs, ExponentsArgs, LadderArgs, MeasureFormat, PairArg, RegimeArg, SamplingArg, VerifyArgs,
    VfieldArgs,
};

pub const SCHEMA: &str = dissdim_core::exponents::SCHEMA;

fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidParameter(msg.into())
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path)?))
}

/// Shortest round-trip form, so reruns are byte-identical.
fn num(v: f64) -> String {
    format!("{v}")
}

fn opt_num(v: Option<f64>) -> String {
    v.map(num).unwrap_or_default()
}

pub fn exponents(a: ExponentsArgs) -> Result<Value> {
    let euler_only = a.case.is_some() || a.unbounded_pressure;
    if euler_only && !matches!(a.regime, RegimeArg::Euler) {
        return Err(invalid("--case and --unbounded-pressure apply to the euler regime"));
    }
    let report = match a.regime {
        RegimeArg::Euler => {
            if let Some(case) = &a.case {
                let case: NumerologyCase = case.parse()?;
                let param = match (case, a.param) {
                    (_, Some(p)) => p,
                    (NumerologyCase::Besov13, None) => 0.0,
                    (_, None) => return Err(invalid("--case needs --param")),
                };
                case_numerology(a.d, case, param)?
            } else {
                let cls = IntegrabilityClass::new(a.d, a.q, a.r)?;
                match (a.unbounded_pressure, a.alpha) {
                    (true, _) => euler_unbounded_pressure(&cls)?,
                    (false, Some(alpha)) => euler_exponent(&cls, alpha)?,
                    (false, None) => euler_optimal(&cls)?,
                }
            }
        }
        RegimeArg::Ns => {
            let cls = IntegrabilityClass::new(a.d, a.q, a.r)?;
            navier_stokes_exponent(&cls, a.alpha.unwrap_or(2.0))?
        }
        RegimeArg::Claw => conservation_law_exponent(a.d, a.r)?,
    };
    Ok(serde_json::to_value(report).expect("report serializes"))
}

fn ladder_scales(l: &LadderArgs, width: f64) -> Result<Vec<f64>> {
    if !(l.ratio > 0.0 && l.ratio < 1.0) {
        return Err(invalid(format!("ladder ratio must lie in (0, 1), got {}", l.ratio)));
    }
    if l.count < 3 {
        return Err(invalid(format!("ladder needs at least 3 scales, got {}", l.count)));
    }
    geometric_scales(l.delta_max.unwrap_or(width / 8.0), l.ratio, l.count)
}

/// Largest extent of the points along any space or time axis.
fn cloud_width(pts: &PointCloud) -> f64 {
    let mut width: f64 = 0.0;
    for axis in 0..=pts.d() {
        let coord = |i: usize| if axis < pts.d() { pts.x(i)[axis] } else { pts.t(i) };
        let (lo, hi) = (0..pts.len()).fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), i| {
            (lo.min(coord(i)), hi.max(coord(i)))
        });
        width = width.max(hi - lo);
    }
    // a single atom has no extent of its own
    if width > 0.0 {
        width
    } else {
        1.0
    }
}

fn center_policy(spec: &str, seed: u64) -> Result<CenterPolicy> {
    let count = |k: &str| {
        k.parse::<usize>()
            .map_err(|_| invalid(format!("bad center count in {spec:?}")))
    };
    match spec.split_once(':') {
        None if spec == "support" => Ok(CenterPolicy::Support),
        Some(("top", k)) => Ok(CenterPolicy::TopK(count(k)?)),
        Some(("sample", k)) => Ok(CenterPolicy::Sample { k: count(k)?, seed }),
        _ => Err(invalid(format!("unknown center policy {spec:?}"))),
    }
}

pub fn dimension(a: DimensionArgs) -> Result<Value> {
    let mu = io::read_measure(&a.measure)?;
    let support = mu.support();
    if support.is_empty() {
        return Err(Error::EmptySupport);
    }
    let scales = ladder_scales(&a.ladder, cloud_width(&support))?;
    let boxes = box_counting_dimension(&support, a.alpha, &scales)?;
    let s = a.s.unwrap_or(boxes.dim_estimate.max(0.0));
    let ladder = density_ladder(&mu, a.alpha, s, &scales, &center_policy(&a.centers, a.seed)?)?;
    let cert = certify_lower_bound(&ladder);

    if let Some(path) = &a.csv {
        let mut out = create(path)?;
        writeln!(out, "delta,count,density,fit_slope,residual")?;
        for (k, delta) in scales.iter().enumerate() {
            writeln!(
                out,
                "{},{},{},{},{}",
                num(*delta),
                boxes.counts[k],
                num(ladder.densities[k]),
                num(boxes.dim_estimate),
                num(boxes.fit_residual)
            )?;
        }
        out.flush()?;
    }
    Ok(json!({
        "schema": SCHEMA,
        "atoms": mu.len(),
        "support_atoms": support.len(),
        "alpha": a.alpha,
        "s": s,
        "scales": scales,
        "dim_estimate": boxes.dim_estimate,
        "box_fit_residual": boxes.fit_residual,
        "ladder_slope": ladder.fitted_slope,
        "ladder_residual": ladder.fit_residual,
        "densities_non_increasing": ladder.non_increasing,
        "certified_s": cert.certified_s,
        "verdict": cert.verdict,
    }))
}

fn parse_center(raw: &str, d: usize) -> Result<(Vec<f64>, f64)> {
    let vals = raw
        .split(',')
        .map(|v| {
            v.trim()
                .parse::<f64>()
                .map_err(|_| invalid(format!("bad center {raw:?}")))
        })
        .collect::<Result<Vec<_>>>()?;
    if vals.len() != d + 1 {
        return Err(invalid(format!("center {raw:?} needs {} coordinates and a time", d)));
    }
    Ok((vals[..d].to_vec(), vals[d]))
}

struct Row {
    center: Vec<f64>,
    t: f64,
    delta: f64,
    weak_mass: f64,
    bound: f64,
    morrey: Option<f64>,
}

pub fn verify(a: VerifyArgs) -> Result<Value> {
    let field = io::read_field(&a.field)?;
    let spec = field.spec().clone();
    let d = spec.d();
    let pair = match a.pair {
        Some(PairArg::Burgers) => EntropyPair::burgers(),
        Some(PairArg::Euler) => EntropyPair::euler(),
        None if d == 1 && field.p_raw().is_none() => EntropyPair::burgers(),
        None => EntropyPair::euler(),
    };
    let alpha = a.alpha.or(field.alpha_hint).unwrap_or(1.0);
    let scales = ladder_scales(&a.ladder, spec.space.b - spec.space.a)?;
    let centers = if a.centers.is_empty() {
        vec![(vec![0.5 * (spec.space.a + spec.space.b); d], 0.5 * spec.t_end)]
    } else {
        a.centers
            .iter()
            .map(|c| parse_center(c, d))
            .collect::<Result<Vec<_>>>()?
    };

    let jobs: Vec<(usize, f64)> = (0..centers.len())
        .flat_map(|c| scales.iter().map(move |&delta| (c, delta)))
        .collect();
    // sweep order is fixed by `jobs`; collect keeps it
    let results: Vec<Result<Option<Row>>> = jobs
        .par_iter()
        .map(|&(c, delta)| {
            let (x, t) = &centers[c];
            let cut = CutoffPair::new(x.clone(), *t, delta, alpha)?;
            match holder_cylinder_bound(&field, &cut, &pair, a.q, a.r, a.nu) {
                Ok(rep) => Ok(Some(Row {
                    center: x.clone(),
                    t: *t,
                    delta,
                    weak_mass: rep.weak_mass,
                    bound: rep.holder_bound.unwrap_or(f64::NAN),
                    morrey: rep.morrey_mass,
                })),
                Err(Error::DomainMargin(_)) => Ok(None),
                Err(e) => Err(e),
            }
        })
        .collect();
    let mut rows = Vec::new();
    let mut skipped = 0usize;
    for r in results {
        match r? {
            Some(row) => rows.push(row),
            None => skipped += 1,
        }
    }

    if let Some(path) = &a.csv {
        let mut out = create(path)?;
        let xs: Vec<String> = (0..d).map(|i| format!("x{i}")).collect();
        writeln!(out, "{},t,delta,weak_mass,holder_bound,ratio,morrey", xs.join(","))?;
        for row in &rows {
            let center: Vec<String> = row.center.iter().map(|v| num(*v)).collect();
            let ratio = if row.bound > 0.0 {
                row.weak_mass / row.bound
            } else {
                0.0
            };
            writeln!(
                out,
                "{},{},{},{},{},{},{}",
                center.join(","),
                num(row.t),
                num(row.delta),
                num(row.weak_mass),
                num(row.bound),
                num(ratio),
                opt_num(row.morrey)
            )?;
        }
        out.flush()?;
    }

    // slope of the largest weak mass per scale
    let (mut lx, mut ly) = (Vec::new(), Vec::new());
    for &delta in &scales {
        let m = rows
            .iter()
            .filter(|r| r.delta == delta)
            .map(|r| r.weak_mass)
            .fold(0.0, f64::max);
        if m > 0.0 {
            lx.push(delta.ln());
            ly.push(m.ln());
        }
    }
    let fit = if lx.len() >= 3 { fit_line(&lx, &ly) } else { None };
    let max_ratio = rows
        .iter()
        .filter(|r| r.bound > 0.0)
        .map(|r| r.weak_mass / r.bound)
        .fold(0.0, f64::max);
    Ok(json!({
        "schema": SCHEMA,
        "pair": pair.label,
        "alpha": alpha,
        "q": a.q,
        "r": a.r,
        "nu": a.nu,
        "scales": scales,
        "rows": rows.len(),
        "skipped": skipped,
        "max_ratio": max_ratio,
        "fitted_slope": fit.map(|f| f.slope),
        "fit_residual": fit.map(|f| f.residual),
    }))
}

fn write_field(field: &GriddedField, path: &Path) -> Result<()> {
    let mut out = create(path)?;
    if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv")) {
        io::write_field_csv(field, &mut out)?;
    } else {
        io::write_field_binary(field, &mut out)?;
    }
    out.flush()?;
    Ok(())
}

pub fn burgers(a: BurgersArgs) -> Result<Value> {
    let datum = RiemannDatum::new(a.ul, a.ur, a.x0)?;
    let (field, measure, manifest) = match a.nu {
        Some(nu) => {
            let run = viscous_burgers_run(&datum, nu, a.a, a.b, a.nx, a.t_end, a.nt)?;
            let mut m = serde_json::to_value(&run.manifest).expect("manifest serializes");
            m["schema"] = json!(SCHEMA);
            m["kind"] = json!("viscous");
            m["datum"] = json!(datum);
            (run.field, run.dissipation, m)
        }
        None => {
            let spec = GridSpec::new(1, a.a, a.b, a.nx, a.t_end, a.nt)?;
            let sampling = match a.sampling {
                SamplingArg::Point => Sampling::Point,
                SamplingArg::Cell => Sampling::CellAverage,
            };
            let field = burgers_entropy_solution(&datum, &spec, sampling)?;
            let shock = burgers_dissipation_measure(&datum, &spec)?;
            let m = json!({
                "schema": SCHEMA,
                "kind": "inviscid",
                "datum": datum,
                "shock": datum.is_shock(),
                "shock_speed": datum.is_shock().then(|| datum.shock_speed()),
                "dissipation_rate": datum.dissipation_rate(),
                "total_dissipation": shock.measure.total_mass(),
                "a": a.a,
                "b": a.b,
                "nx": a.nx,
                "t_end": a.t_end,
                "nt": a.nt,
            });
            (field, shock.measure, m)
        }
    };
    if let Some(path) = &a.field_out {
        write_field(&field, path)?;
    }
    if let Some(path) = &a.measure_out {
        let mut out = create(path)?;
        match a.measure_format {
            MeasureFormat::Text => io::write_measure_text(&measure, &mut out)?,
            MeasureFormat::Binary => io::write_measure_binary(&measure, &mut out)?,
        }
        out.flush()?;
    }
    if let Some(path) = &a.manifest_out {
        let mut out = create(path)?;
        writeln!(
            out,
            "{}",
            serde_json::to_string_pretty(&manifest).expect("manifest serializes")
        )?;
        out.flush()?;
    }
    Ok(manifest)
}

pub fn vfield(a: VfieldArgs) -> Result<Value> {
    let f = PowerLawField::new(a.d, a.eps)?;
    let balls = a
        .delta
        .iter()
        .map(|&delta| {
            Ok(json!({
                "delta": delta,
                "quadrature": power_law_ball_mass(&f, delta)?,
                "closed_form": f.ball_mass_closed_form(delta),
            }))
        })
        .collect::<Result<Vec<_>>>()?;
    if let Some(path) = &a.out {
        let v = f.sample(a.a, a.b, a.nx)?;
        let n = v.grid().n_nodes();
        let slab: Vec<f64> = (0..n).flat_map(|i| v.at(i).to_vec()).collect();
        let spec = GridSpec::new(a.d, a.a, a.b, a.nx, 1.0, 2)?;
        let field = GriddedField::new(spec, [slab.clone(), slab].concat(), None, None)?;
        write_field(&field, path)?;
    }
    Ok(json!({
        "schema": SCHEMA,
        "d": a.d,
        "eps": a.eps,
        "c_d": f.c_d(),
        "balls": balls,
    }))
}

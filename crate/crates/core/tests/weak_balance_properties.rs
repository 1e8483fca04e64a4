use dissdim_core::exponents::ExtReal;
use dissdim_core::fixtures::{burgers_entropy_solution, viscous_burgers_run, PowerLawField, RiemannDatum, Sampling};
use dissdim_core::weak_balance::*;
use dissdim_core::Error;

const INF: ExtReal = ExtReal::Infinite;

fn shock_field(nx: usize, nt: usize) -> GriddedField {
    let datum = RiemannDatum::new(1.0, -1.0, 0.0).unwrap();
    let spec = GridSpec::new(1, -2.0, 2.0, nx, 1.0, nt).unwrap();
    burgers_entropy_solution(&datum, &spec, Sampling::CellAverage).unwrap()
}

/// `u = (f(y), 0)` with zero pressure: a steady Euler solution in d = 2.
fn shear_field(nx: usize, nt: usize) -> GriddedField {
    let spec = GridSpec::new(2, 0.0, 1.0, nx, 1.0, nt).unwrap();
    GriddedField::sample(spec, |x, _, u| {
        u[0] = (2.0 * std::f64::consts::PI * x[1]).sin() + 0.5;
        u[1] = 0.0;
    })
    .unwrap()
    .with_pressure_fn(|_, _| 0.0)
    .unwrap()
}

/// Weak mass relative to the bound with `q = r = ∞` on the same cutoff.
fn relative_mass(field: &GriddedField, cutoff: &CutoffPair, pair: &EntropyPair) -> f64 {
    let rep = holder_cylinder_bound(field, cutoff, pair, INF, INF, None).unwrap();
    rep.weak_mass.abs() / rep.holder_bound.unwrap()
}

#[test]
fn smooth_solutions_have_no_weak_mass() {
    let n = 257;
    let spec = GridSpec::new(1, -2.0, 2.0, n, 1.0, n).unwrap();
    let burgers = EntropyPair::burgers();
    let cut = CutoffPair::new(vec![0.3], 0.5, 0.2, 1.0).unwrap();

    let constant = GriddedField::sample(spec.clone(), |_, _, u| u[0] = 0.7).unwrap();
    // u = x/(1+t) solves u_t + u u_x = 0
    let linear = GriddedField::sample(spec.clone(), |x, t, u| u[0] = x[0] / (1.0 + t)).unwrap();
    let fan = burgers_entropy_solution(
        &RiemannDatum::new(-1.0, 1.0, 0.0).unwrap(),
        &spec,
        Sampling::CellAverage,
    )
    .unwrap();
    for (name, field) in [("constant", &constant), ("linear", &linear), ("rarefaction", &fan)] {
        let rel = relative_mass(field, &cut, &burgers);
        assert!(rel < 1e-2, "{name}: relative weak mass {rel}");
    }

    let shear = shear_field(n, n);
    let cut2 = CutoffPair::new(vec![0.5, 0.4], 0.5, 0.15, 1.0).unwrap();
    let rel = relative_mass(&shear, &cut2, &EntropyPair::euler());
    assert!(rel < 1e-2, "shear: relative weak mass {rel}");
}

#[test]
fn entropy_production_matches_shock_rate() {
    let field = shock_field(801, 401);
    let phi = ProductTest {
        space: vec![Plateau::new(-1.0, 1.0, 0.5)],
        time: Plateau::new(0.25, 0.75, 0.1),
    };
    let v = entropy_production(&field, &EntropyPair::burgers(), &phi).unwrap();
    // (t2 − t1) · 2/3 with the plateau width measured at half height
    assert!((v - 0.4).abs() < 0.02 * 0.4, "{v}");

    let one_side = ProductTest {
        space: vec![Plateau::new(0.5, 1.0, 0.3)],
        time: Plateau::new(0.25, 0.75, 0.1),
    };
    let v = entropy_production(&field, &EntropyPair::burgers(), &one_side).unwrap();
    assert!(v.abs() < 1e-3, "{v}");
}

#[test]
fn pairings_are_linear() {
    let field = shock_field(401, 201);
    let pair = EntropyPair::burgers();
    let a = ProductTest {
        space: vec![Plateau::new(-0.5, 0.2, 0.3)],
        time: Plateau::new(0.3, 0.5, 0.1),
    };
    let b = RadialBump {
        center: vec![0.1],
        inner: 0.2,
        width: 0.4,
        profile: Profile::Smooth,
        time: Some(Plateau::new(0.4, 0.6, 0.2)),
    };
    let sum = entropy_production(&field, &pair, &SumTest(&a, &b)).unwrap();
    let parts = entropy_production(&field, &pair, &a).unwrap() + entropy_production(&field, &pair, &b).unwrap();
    assert!((sum - parts).abs() < 1e-12 * (1.0 + parts.abs()), "{sum} vs {parts}");
}

#[test]
fn cylinder_balance_agrees_with_entropy_production() {
    let field = shock_field(801, 801);
    let cut = CutoffPair::new(vec![0.0], 0.5, 0.2, 1.0).unwrap();
    let pair = EntropyPair::burgers();
    let weak = cylinder_balance(&field, &cut, &pair, None).unwrap().weak_mass;
    let direct = entropy_production(&field, &pair, &cut).unwrap();
    assert!((weak - direct).abs() < 0.01 * direct.abs(), "{weak} vs {direct}");
    // χ(0) = 1 and ∫η = 3δ for both profiles
    assert!((weak - 2.0 / 3.0 * 0.6).abs() < 0.02 * 0.4, "{weak}");
}

#[test]
fn weak_mass_does_not_depend_on_cutoff_profile() {
    let field = shock_field(801, 801);
    let pair = EntropyPair::burgers();
    for &(t, delta, alpha) in &[(0.5, 0.2, 1.0), (0.5, 0.25, 2.0), (0.4, 0.1, 1.0)] {
        let cubic = CutoffPair::with_profile(vec![0.0], t, delta, alpha, Profile::Cubic).unwrap();
        let smooth = CutoffPair::with_profile(vec![0.0], t, delta, alpha, Profile::Smooth).unwrap();
        let a = cylinder_balance(&field, &cubic, &pair, None).unwrap().weak_mass;
        let b = cylinder_balance(&field, &smooth, &pair, None).unwrap().weak_mass;
        assert!((a - b).abs() < 0.05 * a.abs(), "delta {delta}: {a} vs {b}");
    }
}

#[test]
fn refinement_order_is_at_least_one_and_a_half() {
    // not a solution, so every integral is non-trivial
    let field = |n: usize| {
        let spec = GridSpec::new(1, -1.0, 1.0, n, 1.0, n).unwrap();
        GriddedField::sample(spec, |x, t, u| u[0] = (2.0 * x[0]).sin() * (1.0 + t * t)).unwrap()
    };
    // cutoff kinks on nodes of every level, so the quadrature error is a clean O(h²)
    let cut = CutoffPair::new(vec![0.0], 0.5, 0.125, 1.0).unwrap();
    let pair = EntropyPair::burgers();
    let levels: Vec<BalanceReport> = [65, 129, 257]
        .iter()
        .map(|&n| cylinder_balance(&field(n), &cut, &pair, None).unwrap())
        .collect();
    for label in ["I", "II"] {
        let v: Vec<f64> = levels.iter().map(|r| r.term(label).unwrap()).collect();
        let order = ((v[0] - v[1]) / (v[1] - v[2])).abs().log2();
        assert!(order >= 1.5, "{label}: values {v:?}, order {order}");
    }
}

#[test]
fn weak_mass_is_dominated_by_the_holder_bound() {
    let shock = shock_field(801, 801);
    let pair = EntropyPair::burgers();
    for &(delta, alpha) in &[(0.125, 1.0), (0.0625, 1.0), (0.25, 2.0), (0.1, 0.5)] {
        for (q, r) in [
            (INF, INF),
            (ExtReal::Finite(4.0), ExtReal::Finite(6.0)),
            (ExtReal::Finite(3.0), INF),
        ] {
            let cut = CutoffPair::new(vec![0.0], 0.5, delta, alpha).unwrap();
            let rep = holder_cylinder_bound(&shock, &cut, &pair, q, r, None).unwrap();
            assert!(rep.weak_mass <= rep.holder_bound.unwrap());
            assert!(rep.weak_mass > 0.0);
        }
    }
    let shear = shear_field(129, 65);
    let cut = CutoffPair::new(vec![0.5, 0.5], 0.5, 0.2, 1.0).unwrap();
    let rep = holder_cylinder_bound(&shear, &cut, &EntropyPair::euler(), ExtReal::Finite(5.0), INF, None).unwrap();
    assert!(rep.weak_mass.abs() <= rep.holder_bound.unwrap());
}

#[test]
fn holder_bound_slope_on_the_shock() {
    let field = shock_field(1601, 1601);
    let pair = EntropyPair::burgers();
    let deltas: Vec<f64> = (3..=6).map(|k| 0.5f64.powi(k)).collect();
    let bounds: Vec<f64> = deltas
        .iter()
        .map(|&d| {
            let cut = CutoffPair::new(vec![0.0], 0.5, d, 1.0).unwrap();
            holder_cylinder_bound(&field, &cut, &pair, INF, INF, None)
                .unwrap()
                .holder_bound
                .unwrap()
        })
        .collect();
    let slope = (bounds[0] / bounds[3]).ln() / (deltas[0] / deltas[3]).ln();
    assert!((slope - 1.0).abs() < 0.1, "slope {slope}");
}

#[test]
fn decaying_shear_balances_its_viscous_dissipation() {
    let (nu, k) = (0.05, 2.0 * std::f64::consts::PI);
    let spec = GridSpec::new(2, 0.0, 1.0, 321, 1.0, 161).unwrap();
    let field = GriddedField::sample(spec, |x, t, u| {
        u[0] = (-nu * k * k * t).exp() * (k * x[1]).sin();
        u[1] = 0.0;
    })
    .unwrap()
    .with_pressure_fn(|_, _| 0.0)
    .unwrap();
    let cut = CutoffPair::new(vec![0.5, 0.5], 0.5, 0.15, 2.0).unwrap();
    let rep = ns_weak_mass(&field, &cut, nu).unwrap();
    let pairing = rep.viscous_pairing.unwrap();
    assert!(pairing > 0.0);
    assert!(
        (rep.weak_mass - pairing).abs() < 0.02 * pairing,
        "{} vs {pairing}",
        rep.weak_mass
    );
}

#[test]
fn viscous_shock_cylinder_dominates_its_morrey_mass() {
    let datum = RiemannDatum::new(1.0, -1.0, 0.0).unwrap();
    let nu = 1e-3;
    let run = viscous_burgers_run(&datum, nu, -0.05, 0.05, 1000, 0.2, 401).unwrap();
    let cut = CutoffPair::new(vec![0.0], 0.1, 0.02, 2.0).unwrap();
    let rep = cylinder_balance(&run.field, &cut, &EntropyPair::burgers(), Some(nu)).unwrap();
    let morrey = rep.morrey_mass.unwrap();
    assert!(morrey >= 0.0);
    assert!(rep.weak_mass >= morrey, "{} < {morrey}", rep.weak_mass);
}

#[test]
fn boundary_extended_identity_for_viscous_burgers() {
    let datum = RiemannDatum::new(1.0, -1.0, 0.0).unwrap();
    for &(nu, w, t_end) in &[(1e-2f64, 0.5f64, 0.5), (1e-3, 0.1, 0.25)] {
        let nx = (2.0 * w / (nu / 10.0)).round() as usize;
        let run = viscous_burgers_run(&datum, nu, -w, w, nx, t_end, 101).unwrap();
        let phi = ProductTest {
            space: vec![Plateau::new(-0.6 * w, 0.6 * w, 0.3 * w)],
            time: Plateau::ramp_up(0.8 * t_end, 0.12 * t_end),
        };
        let rep = boundary_extended_mass(&run.field, &phi, &EntropyPair::burgers(), Some(nu), false).unwrap();
        let rel = rep.residual.unwrap().abs() / rep.terminal;
        assert!(rel < 0.02, "nu {nu}: {rep:?}");
    }
}

#[test]
fn boundary_extended_reduces_to_interior_balance() {
    let field = shock_field(401, 201);
    let phi = ProductTest {
        space: vec![Plateau::new(-0.5, 0.5, 0.3)],
        time: Plateau::new(0.3, 0.6, 0.1),
    };
    let pair = EntropyPair::burgers();
    let rep = boundary_extended_mass(&field, &phi, &pair, None, false).unwrap();
    assert_eq!(rep.terminal, 0.0);
    assert!((rep.interior - entropy_production(&field, &pair, &phi).unwrap()).abs() < 1e-12);

    let early = ProductTest {
        space: vec![Plateau::new(-0.5, 0.5, 0.3)],
        time: Plateau::ramp_up(0.0, 0.1),
    };
    assert!(boundary_extended_mass(&field, &early, &pair, None, false).is_err());
}

#[test]
fn divergence_free_fields_pair_to_zero() {
    let grid = SpaceGrid::new(2, -1.0, 1.0, 161).unwrap();
    // rotation: div = 0 exactly for the centered stencil
    let v = VectorField::sample(grid, |x, out| {
        out[0] = -x[1];
        out[1] = x[0];
    })
    .unwrap();
    let phi = RadialBump {
        center: vec![0.1, 0.0],
        inner: 0.2,
        width: 0.3,
        profile: Profile::Cubic,
        time: None,
    };
    let cover = [Ball::new(&[0.0, 0.0], 0.1)];
    let rep = signed_support_bound(&v, &cover, &phi, INF, None).unwrap();
    assert!(rep.pairing < 1e-10, "{rep:?}");
    assert!(rep.pairing <= rep.bound_i + rep.bound_ii + 1e-12);
}

#[test]
fn power_law_pairing_is_the_divergence_mass() {
    let (d, eps) = (2, 1.0);
    let field = PowerLawField::new(d, eps).unwrap();
    let v = field.sample(-1.5, 1.5, 601).unwrap();
    let (inner, width) = (0.3, 0.3);
    let phi = RadialBump {
        center: vec![0.0, 0.0],
        inner,
        width,
        profile: Profile::Cubic,
        time: None,
    };

    // a ball around the point singularity alone misses the positive divergence elsewhere
    let err = signed_support_bound(&v, &[Ball::new(&[0.0, 0.0], 0.05)], &phi, ExtReal::Finite(2.0), None);
    assert!(matches!(err, Err(Error::CoveringIncomplete { .. })), "{err:?}");

    // the divergence is positive at every node, so an admissible cover spans the grid;
    // then χφ = φ and pairing = c_2 ε ∫ ρ^{ε−1} φ(ρ) dρ = 2π(r₀ + w/2)
    let cover = [Ball::new(&[0.0, 0.0], 2.2)];
    let rep = signed_support_bound(&v, &cover, &phi, ExtReal::Finite(2.0), None).unwrap();
    let exact = 2.0 * std::f64::consts::PI * (inner + width / 2.0);
    assert!((rep.pairing - exact).abs() < 5e-3 * exact, "{} vs {exact}", rep.pairing);
    assert!(rep.pairing <= rep.bound_i + rep.bound_ii + 1e-12);
}

#[test]
fn segment_divergence_coverings() {
    let grid = SpaceGrid::new(2, -1.0, 1.0, 321).unwrap();
    let b = |y: f64| Plateau::new(-0.2, 0.2, 0.3).eval(y).0;
    // div V = δ(x) b(y)
    let v = VectorField::sample(grid, |x, out| {
        out[0] = 0.5 * x[0].signum() * b(x[1]);
        out[1] = 0.0;
    })
    .unwrap();
    let phi = RadialBump {
        center: vec![0.0, 0.0],
        inner: 0.3,
        width: 0.5,
        profile: Profile::Cubic,
        time: None,
    };
    // ⟨div V, φ⟩ = ∫ b(y) φ(0, y) dy
    let n = 20_000;
    let exact: f64 = (0..n)
        .map(|j| {
            let y = -1.0 + (j as f64 + 0.5) * 2.0 / n as f64;
            b(y) * phi.jet(&[0.0, y], 0.0).value * 2.0 / n as f64
        })
        .sum();
    let mut first_i = None;
    let mut last_i = f64::INFINITY;
    for k in [4usize, 8, 16] {
        let r = 1.0 / k as f64;
        let cover: Vec<Ball> = (0..k)
            .map(|j| Ball::new(&[0.0, -0.5 + (j as f64 + 0.5) / k as f64], r))
            .collect();
        let rep = signed_support_bound(&v, &cover, &phi, ExtReal::Finite(2.0), None).unwrap();
        assert!(rep.pairing <= rep.bound_i + rep.bound_ii + 1e-12);
        assert!(rep.bound_i <= last_i, "k = {k}: {rep:?}");
        assert!(rep.bound_ii < 2.0, "k = {k}: {rep:?}");
        assert!(
            (rep.pairing - exact).abs() < 0.02 * exact,
            "k = {k}: {rep:?} vs {exact}"
        );
        first_i.get_or_insert(rep.bound_i);
        last_i = rep.bound_i;
    }
    assert!(last_i < 0.5 * first_i.unwrap(), "{first_i:?} -> {last_i}");
}

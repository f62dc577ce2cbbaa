//! End-to-end acceptance suite. Each test prints a single PASS line with the
//! measured quantities; tolerances are pinned and must not be loosened.

use std::sync::Arc;
use std::time::Instant;

use kgl_core::envelopes::{
    maximize_test_curve, rooftop, EnvelopeSolveConfig,
};
use kgl_core::geometry::SurfaceGrid;
use kgl_core::lines::{
    build_lse_line, build_max_line, build_measure_line, classify_riemann, fifth_postulate_check,
    parallel_from_g,
};
use kgl_core::potentials::{divisor_potential, MeasureOnSurface, PotentialField};
use kgl_core::transform::{
    inverse_legendre, legendre, sup_convolution, CurveKind, CurveSource, Grid1D, PotentialCurve,
    TestLine,
};
use kgl_core::verify::{
    dense_curve, dp_speed_constancy, hma_residual, slope_formula_check, volume_identity_check,
    zero_mass_line_check,
};

fn sphere_pair(n: usize) -> (Arc<SurfaceGrid>, PotentialField, PotentialField) {
    let g = Arc::new(SurfaceGrid::sphere(n).unwrap());
    let phi0 = divisor_potential(&g, &[((0.5, 0.0), 1.0)]).unwrap();
    let phi1 = divisor_potential(&g, &[((-2.0, 0.0), 1.0)]).unwrap();
    (g, phi0, phi1)
}

fn torus_measure_line(n: usize, window: f64, dt: f64) -> (Arc<SurfaceGrid>, PotentialCurve) {
    let g = Arc::new(SurfaceGrid::torus(n, 1.0).unwrap());
    let mu0 = MeasureOnSurface::dirac(g.nearest_node(0.25, 0.25), g.discrete_volume);
    let mu1 = MeasureOnSurface::dirac(g.nearest_node(0.75, 0.75), g.discrete_volume);
    let line = build_measure_line(&g, &mu0, &mu1, Grid1D::covering(-window, window, dt)).unwrap();
    (g, line)
}

fn sup_over_window(
    a: &PotentialCurve,
    b: &PotentialCurve,
    t_lo: f64,
    t_hi: f64,
) -> f64 {
    let mut worst = 0.0f64;
    for k in 0..a.tgrid.len {
        let t = a.tgrid.value(k);
        if t < t_lo - 1e-12 || t > t_hi + 1e-12 {
            continue;
        }
        for x in 0..a.grid.node_count() {
            if a.mask[x] || a.grid.is_infinity(x) {
                continue;
            }
            let (va, vb) = (a.value(k, x), b.value(k, x));
            if va.is_finite() && vb.is_finite() {
                worst = worst.max((va - vb).abs());
            }
        }
    }
    worst
}

#[test]
fn acceptance_01_legendre_roundtrip() {
    let start = Instant::now();
    let (_, phi0, phi1) = sphere_pair(128);
    let tgrid = Grid1D::covering(-10.0, 10.0, 0.05);
    let line = build_max_line(&phi0, &phi1, tgrid).unwrap();
    let dual = legendre(&line, Grid1D::covering(-0.5, 1.5, 0.01)).unwrap();
    let back = inverse_legendre(&dual, tgrid, CurveKind::GeodesicCandidate).unwrap();
    let err = sup_over_window(&line, &back, -2.0, 2.0);
    let secs = start.elapsed().as_secs_f64();
    assert!(err <= 0.25, "roundtrip sup error {err}");
    assert!(secs <= 60.0, "runtime {secs:.1}s exceeds 60s");
    println!("acceptance 01 PASS: roundtrip sup error {err:.3e} in {secs:.1}s (tol 0.25, 60s)");
}

#[test]
fn acceptance_02_closed_form_duals() {
    let (g, phi0, phi1) = sphere_pair(128);
    let tgrid = Grid1D::covering(-10.0, 10.0, 0.05);
    let taugrid = Grid1D::covering(-0.5, 1.5, 0.01);
    let max_line = build_max_line(&phi0, &phi1, tgrid).unwrap();
    let lse_line = build_lse_line(&phi0, &phi1, tgrid).unwrap();
    let dual_max = legendre(&max_line, taugrid).unwrap();
    let dual_lse = legendre(&lse_line, taugrid).unwrap();
    let (p0, p1) = match &max_line.source {
        CurveSource::MaxPair { phi0, phi1 } => (phi0.clone(), phi1.clone()),
        _ => unreachable!(),
    };
    let mut err_max = 0.0f64;
    let mut err_lse = 0.0f64;
    for step in 1..=9usize {
        let tau = step as f64 / 10.0;
        let i = taugrid.index_of(tau).unwrap();
        let entropy = -tau * tau.ln() - (1.0 - tau) * (1.0 - tau).ln();
        for x in 0..g.node_count() {
            if g.is_infinity(x) {
                continue;
            }
            let linear = (1.0 - tau) * p0.values[x] + tau * p1.values[x];
            if let Some(s) = &dual_max.slices[i] {
                if s[x].is_finite() {
                    err_max = err_max.max((s[x] - linear).abs());
                }
            }
            if let Some(s) = &dual_lse.slices[i] {
                if s[x].is_finite() {
                    err_lse = err_lse.max((s[x] - linear - entropy).abs());
                }
            }
        }
    }
    assert!(err_max <= 0.15, "max-line dual error {err_max}");
    assert!(err_lse <= 0.15, "lse dual error {err_lse}");
    println!("acceptance 02 PASS: dual errors max {err_max:.3e}, lse {err_lse:.3e} (tol 0.15)");
}

#[test]
fn acceptance_03_zero_mass_duals() {
    let mut lines = Vec::new();
    // The window must reach past the finite well depth (about 12 at these
    // resolutions) so that the dual endpoints are attained in the interior
    // and the LSE transition ring collapses into the atom neighbourhood.
    for (n, dt, frac) in [(256usize, 0.04f64, 0.05f64), (512, 0.02, 0.03)] {
        let (_, phi0, phi1) = sphere_pair(n);
        let tgrid = Grid1D::covering(-14.0, 14.0, dt);
        let taugrid = Grid1D::covering(0.0, 1.0, 0.05);
        for (label, line) in [
            ("max", build_max_line(&phi0, &phi1, tgrid).unwrap()),
            ("lse", build_lse_line(&phi0, &phi1, tgrid).unwrap()),
        ] {
            let dual = legendre(&line, taugrid).unwrap();
            let rep = zero_mass_line_check(&dual, None, frac).unwrap();
            assert!(rep.pass, "N={n} {label}: {:?}", rep.scalars);
            lines.push(format!(
                "N={n} {label} max interior mass {:.2e} (tol {frac}V)",
                rep.scalars["max_interior_mass"]
            ));
        }
    }
    println!("acceptance 03 PASS: {}", lines.join("; "));
}

#[test]
fn acceptance_04_hma_residual() {
    let lse = |n: usize| {
        let (_, phi0, phi1) = sphere_pair(n);
        let tgrid = Grid1D::covering(-4.0, 4.0, 2.0 / n as f64);
        build_lse_line(&phi0, &phi1, tgrid).unwrap()
    };
    let coarse = hma_residual(&lse(64), f64::INFINITY).unwrap();
    let fine = hma_residual(&lse(128), f64::INFINITY).unwrap();
    let (a, b) = (coarse.scalars["max_abs_residual"], fine.scalars["max_abs_residual"]);
    let order = (a / b).log2();
    assert!(order >= 1.5, "refinement order {order} ({a:.3e} -> {b:.3e})");

    let (_, phi0, phi1) = sphere_pair(64);
    let max_line = build_max_line(&phi0, &phi1, Grid1D::covering(-4.0, 4.0, 1.0 / 32.0)).unwrap();
    let rep = hma_residual(&max_line, 1e-6).unwrap();
    assert!(rep.pass, "max-line residual {:?}", rep.scalars);
    println!(
        "acceptance 04 PASS: lse order {order:.2} ({a:.2e} -> {b:.2e}), max-line residual {:.2e} (tol 1e-6)",
        rep.scalars["max_abs_residual"]
    );
}

#[test]
fn acceptance_05_volume_identity() {
    let (_, line) = torus_measure_line(256, 6.0, 0.05);
    let dual = legendre(&line, Grid1D::covering(0.0, 1.0, 0.1)).unwrap();
    let rep = volume_identity_check(&dual, 0.05).unwrap();
    assert!(rep.pass, "{:?}", rep.scalars);
    assert!(rep.scalars["interior_samples"] >= 9.0);
    println!(
        "acceptance 05 PASS: max identity deviation {:.2e} over {} interior slopes (tol 0.05V)",
        rep.scalars["max_identity_deviation"], rep.scalars["interior_samples"]
    );
}

#[test]
fn acceptance_06_energy_affineness_and_slope() {
    let (_, line) = torus_measure_line(256, 6.0, 0.05);
    let rep =
        slope_formula_check(&line, Grid1D::covering(-0.5, 1.5, 0.01), 0.05, 5e-3).unwrap();
    assert!(rep.pass, "{:?}", rep.scalars);
    println!(
        "acceptance 06 PASS: chord deviation {:.2e} (tol 5e-3), slope gap {:.2e} (tol 0.05)",
        rep.scalars["energy_chord_deviation"],
        (rep.scalars["numeric_slope_plus"] - rep.scalars["formula_slope"]).abs()
    );
}

#[test]
fn acceptance_07_parallelism() {
    let (_, phi0, phi1) = sphere_pair(128);
    let tgrid = Grid1D::covering(-10.0, 10.0, 0.05);
    let max_line = build_max_line(&phi0, &phi1, tgrid).unwrap();
    let lse_line = build_lse_line(&phi0, &phi1, tgrid).unwrap();
    let gap = sup_over_window(&lse_line, &max_line, -10.0, 10.0);
    let log2 = 2.0f64.ln();
    assert!(gap <= log2 + 1e-6, "lse/max gap {gap}");

    let (_, line) = torus_measure_line(64, 6.0, 0.05);
    let taugrid = Grid1D::covering(-0.5, 1.5, 0.01);
    let shift = |tau: f64| tau * (1.0 - tau);
    let par = parallel_from_g(&line, &shift, taugrid).unwrap();
    assert!(par.sup_distance <= 0.25 + 0.03, "parallel distance {}", par.sup_distance);
    let c = classify_riemann(&par.curve, taugrid).unwrap();
    let mut g_err = 0.0f64;
    for &(tau, gv) in &c.g {
        g_err = g_err.max((gv - shift(tau)).abs());
    }
    assert!(g_err <= 1e-2, "recovered shift error {g_err}");
    println!(
        "acceptance 07 PASS: lse-max sup gap {gap:.6} <= log2+1e-6, parallel distance {:.4} (tol 0.28), shift recovery {g_err:.2e} (tol 1e-2)",
        par.sup_distance
    );
}

#[test]
fn acceptance_08_fifth_postulate() {
    let (g, line) = torus_measure_line(256, 6.0, 0.05);
    let taugrid = Grid1D::covering(-0.5, 1.5, 0.05);
    let cfg = EnvelopeSolveConfig::default();

    let zero = PotentialField::constant(&g, 0.0, "zero");
    let out = fifth_postulate_check(&zero, &line, taugrid, &cfg).unwrap();
    assert!(!out.holds);
    assert!(out.min_gap <= -0.1, "counterexample gap {}", out.min_gap);

    let k0 = line.tgrid.index_of(0.0).unwrap();
    let mut u = line.slice(k0);
    u.mask = vec![false; g.node_count()];
    u.shift(0.3);
    let ok = fifth_postulate_check(&u, &line, taugrid, &cfg).unwrap();
    assert!(ok.holds, "gap range [{}, {}]", ok.min_gap, ok.sup_gap);
    println!(
        "acceptance 08 PASS: u=0 gap {:.3} <= -0.1; u=v_0+0.3 holds with |gap| {:.2e} (tol 10*tol_env)",
        out.min_gap,
        ok.sup_gap.abs().max(ok.min_gap.abs())
    );
}

#[test]
fn acceptance_09_sup_convolution_formula() {
    let gx = Arc::new(SurfaceGrid::torus(32, 1.0).unwrap());
    let mux0 = MeasureOnSurface::dirac(gx.nearest_node(0.2, 0.2), gx.discrete_volume);
    let mux1 = MeasureOnSurface::dirac(gx.nearest_node(0.7, 0.7), gx.discrete_volume);
    let line_x =
        build_measure_line(&gx, &mux0, &mux1, Grid1D::covering(-8.0, 8.0, 0.05)).unwrap();
    let (gy, psi0d, psi1d) = sphere_pair(16);
    let line_y = build_max_line(&psi0d, &psi1d, Grid1D::covering(-8.0, 8.0, 0.05)).unwrap();
    let dsigma = 0.05;
    let taugrid = Grid1D::covering(-0.5, 1.5, dsigma);
    let dual_x = legendre(&line_x, taugrid).unwrap();
    let dual_y = legendre(&line_y, taugrid).unwrap();
    let (phi0, phi1) = match &line_x.source {
        CurveSource::MaxPair { phi0, phi1 } => (phi0.clone(), phi1.clone()),
        _ => unreachable!(),
    };
    let (psi0, psi1) = match &line_y.source {
        CurveSource::MaxPair { phi0, phi1 } => (phi0.clone(), phi1.clone()),
        _ => unreachable!(),
    };
    let mut pairs = Vec::new();
    for i in 0..8usize {
        for j in 0..8usize {
            pairs.push((
                (i * 131 + 17) % gx.node_count(),
                (j * 89 + 23) % (gy.n * gy.n),
            ));
        }
    }
    let tables = sup_convolution(&dual_x, &dual_y, &pairs).unwrap();
    let mut worst = 0.0f64;
    for table in &tables {
        let (x, y) = (table.x, table.y);
        let (a0, a1) = (phi0.values[x], phi1.values[x]);
        let (b0, b1) = (psi0.values[y], psi1.values[y]);
        for k in 0..table.taugrid.len {
            let tau = table.taugrid.value(k);
            let v = table.values[k];
            if !v.is_finite() || !(0.0..=2.0).contains(&tau) {
                continue;
            }
            let want = if tau <= 1.0 {
                (1.0 - tau) * (a0 + b0) + tau * (a0 + b1).max(a1 + b0)
            } else {
                (tau - 1.0) * (a1 + b1) + (2.0 - tau) * (a0 + b1).max(a1 + b0)
            };
            worst = worst.max((v - want).abs());
        }
    }
    assert!(worst <= 2.0 * dsigma, "two-case formula error {worst}");
    println!("acceptance 09 PASS: product formula error {worst:.2e} at 64 points (tol {})", 2.0 * dsigma);
}

#[test]
fn acceptance_10_envelope_solver() {
    let cfg = EnvelopeSolveConfig::default();
    // Rooftop complementarity on a representative smooth instance.
    let g = Arc::new(SurfaceGrid::torus(64, 1.0).unwrap());
    let n = g.n;
    let mut vals = vec![0.0; g.node_count()];
    for i in 0..n {
        for j in 0..n {
            let (a, b) = (i as f64 / n as f64, j as f64 / n as f64);
            vals[i * n + j] = 0.2 * (2.0 * std::f64::consts::PI * a).cos()
                * (2.0 * std::f64::consts::PI * b).sin()
                - 0.05;
        }
    }
    let obstacle = PotentialField::from_values(&g, vals, "wavy obstacle");
    let (_, diag) = rooftop(&obstacle, &cfg).unwrap();
    assert!(
        diag.complementarity <= 1e-6 * g.discrete_volume,
        "complementarity {}",
        diag.complementarity
    );

    // Agreement with a plain Perron iteration on a 32 x 32 grid.
    let gs = Arc::new(SurfaceGrid::torus(32, 1.0).unwrap());
    let ns = gs.n;
    let mut f = vec![0.0; gs.node_count()];
    for i in 0..ns {
        for j in 0..ns {
            let (a, b) = (i as f64 / ns as f64, j as f64 / ns as f64);
            let bump = 0.15 * (2.0 * std::f64::consts::PI * a).sin()
                * (2.0 * std::f64::consts::PI * b).sin();
            let cone = 0.6 * (((a - 0.5).abs()).max((b - 0.5).abs()));
            f[i * ns + j] = bump - cone + 0.2;
        }
    }
    let obs = PotentialField::from_values(&gs, f.clone(), "bump minus cone");
    let (env, _) = rooftop(&obs, &cfg).unwrap();
    let mut u = f.clone();
    let mut nbs = [(0usize, 0.0f64); 4];
    loop {
        let mut change = 0.0f64;
        for x in 0..gs.node_count() {
            let (cnt, diagc) = gs.stencil(x, &mut nbs);
            let mut acc = 1.0;
            for &(nb, c) in nbs.iter().take(cnt) {
                acc += c * u[nb];
            }
            let cand = (acc / diagc).min(f[x]);
            change = change.max((u[x] - cand).abs());
            u[x] = cand;
        }
        if change < 1e-12 {
            break;
        }
    }
    let mut gap = 0.0f64;
    for x in 0..gs.node_count() {
        gap = gap.max((env.values[x] - u[x]).abs());
    }
    assert!(gap <= 1e-6, "oracle disagreement {gap}");

    // Maximization keeps the curve energy.
    let (gt, line) = torus_measure_line(48, 6.0, 0.05);
    let dual = legendre(&line, Grid1D::covering(0.0, 1.0, 0.05)).unwrap();
    let k0 = line.tgrid.index_of(0.0).unwrap();
    let mut v = line.slice(k0);
    v.mask = vec![false; gt.node_count()];
    v.shift(0.25);
    let (_, before, after) = maximize_test_curve(&dual, &v, &cfg).unwrap();
    let range = dual.tau_plus - dual.tau_minus;
    assert!(
        (after - before).abs() <= 0.05 * gt.discrete_volume * range,
        "energy drift {} vs {}",
        before,
        after
    );
    println!(
        "acceptance 10 PASS: complementarity {:.2e} (tol 1e-6 V), oracle gap {gap:.2e} (tol 1e-6), energy drift {:.2e} (tol 0.05 V range)",
        diag.complementarity,
        (after - before).abs()
    );
}

#[test]
fn acceptance_11_negative_controls() {
    let g = Arc::new(SurfaceGrid::torus(32, 1.0).unwrap());
    let n = g.n;
    let mut bump = vec![0.0; g.node_count()];
    for i in 0..n {
        for j in 0..n {
            let (a, b) = (i as f64 / n as f64, j as f64 / n as f64);
            bump[i * n + j] =
                0.02 * ((2.0 * std::f64::consts::PI * a).cos() + (2.0 * std::f64::consts::PI * b).sin());
        }
    }
    let tg = Grid1D::covering(-3.0, 3.0, 0.05);
    let slices: Vec<Vec<f64>> =
        tg.values().map(|t| bump.iter().map(|&v| v + 0.1 * t * t).collect()).collect();
    let accelerating = dense_curve(&g, tg, slices, "accelerating");

    let hma = hma_residual(&accelerating, 1e-6).unwrap();
    assert!(!hma.pass, "hma control must fail");
    let speed = dp_speed_constancy(&accelerating, 1.0, 2e-2).unwrap();
    assert!(!speed.pass, "speed control must fail");
    let slope = slope_formula_check(&accelerating, Grid1D::covering(-1.0, 1.0, 0.02), 0.05, 5e-3)
        .unwrap();
    assert!(!slope.pass, "slope control must fail");

    // A ray of a full-mass potential: its dual is a single fat slice.
    let base = PotentialField::from_values(&g, bump, "bump");
    let ray = PotentialCurve::new(
        &g,
        Grid1D::covering(-3.0, 3.0, 0.05),
        CurveKind::Ray,
        CurveSource::Affine { base, rate: 0.5 },
        "fat ray",
    );
    let dual = legendre(&ray, Grid1D::covering(0.0, 1.0, 0.05)).unwrap();
    let zm = zero_mass_line_check(&dual, None, 0.05).unwrap();
    assert!(!zm.pass, "zero-mass control must fail");

    // A slope-constant family is no geodesic dual: both rays coincide and the
    // volume identity collapses to 2V or 0 depending on the mass bookkeeping.
    let mu = MeasureOnSurface::dirac(g.nearest_node(0.25, 0.25), g.discrete_volume);
    let phi = kgl_core::potentials::green_potential(&g, &mu).unwrap();
    let taugrid = Grid1D::covering(0.0, 1.0, 0.1);
    let flat = TestLine {
        grid: g.clone(),
        taugrid,
        slices: (0..taugrid.len).map(|_| Some(phi.values.clone())).collect(),
        tau_minus: 0.0,
        tau_plus: 1.0,
        endpoint_atoms: Some((phi.atoms.clone(), phi.atoms.clone())),
        label: "constant family".into(),
    };
    let vol = volume_identity_check(&flat, 0.05).unwrap();
    assert!(!vol.pass, "volume control must fail");

    println!("acceptance 11 PASS: hma/speed/slope/zero-mass/volume controls all fail as required");
}

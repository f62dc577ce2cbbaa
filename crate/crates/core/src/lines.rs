//! Constructors for the geodesic lines exhibited by the theory, plus the
//! structures built from them: parallel lines from concave shifts, the
//! Riemann-surface classification of bounded lines, the parallel-postulate
//! criterion, and product lines checked against supremal convolution.

use std::sync::Arc;

use crate::envelopes::{env_sing_type, EnvelopeSolveConfig};
use crate::error::{KglError, Result};
use crate::geometry::SurfaceGrid;
use crate::potentials::{
    finite_realization, green_potential, mass_report, MeasureOnSurface, PotentialField,
};
use crate::transform::{
    inverse_legendre, legendre, legendre_profile, sup_convolution, CurveKind, CurveSource, Grid1D,
    PairTable, PotentialCurve, TestLine,
};
use crate::BOTTOM;

fn check_disjoint_singularities(phi0: &PotentialField, phi1: &PotentialField) -> Result<()> {
    for x in 0..phi0.grid.node_count() {
        if phi0.grid.is_infinity(x) {
            continue;
        }
        if phi0.mask[x] && phi1.mask[x] {
            return Err(KglError::HypothesisViolation(
                "singular node sets of the two potentials overlap".into(),
            ));
        }
    }
    Ok(())
}

fn normalized(phi: &PotentialField) -> Result<PotentialField> {
    let mut p = finite_realization(phi)?;
    p.sup_normalize();
    Ok(p)
}

/// `u_t = max(phi0, phi1 + t)`: the Lipschitz geodesic line of a pair of
/// potentials with disjoint singular sets. Both inputs are replaced by their
/// sup-normalized finite realizations so every slice is bounded.
pub fn build_max_line(
    phi0: &PotentialField,
    phi1: &PotentialField,
    tgrid: Grid1D,
) -> Result<PotentialCurve> {
    check_disjoint_singularities(phi0, phi1)?;
    Ok(PotentialCurve::new(
        &phi0.grid,
        tgrid,
        CurveKind::GeodesicCandidate,
        CurveSource::MaxPair { phi0: normalized(phi0)?, phi1: normalized(phi1)? },
        "max line",
    ))
}

/// `v_t = log(e^{phi0} + e^{phi1 + t})`: the smooth geodesic line over the
/// same data, sandwiched within log 2 above the max line.
pub fn build_lse_line(
    phi0: &PotentialField,
    phi1: &PotentialField,
    tgrid: Grid1D,
) -> Result<PotentialCurve> {
    check_disjoint_singularities(phi0, phi1)?;
    Ok(PotentialCurve::new(
        &phi0.grid,
        tgrid,
        CurveKind::GeodesicCandidate,
        CurveSource::LsePair { phi0: normalized(phi0)?, phi1: normalized(phi1)? },
        "log-sum-exp line",
    ))
}

/// Bounded geodesic line from two measures of full mass: Green potentials are
/// built, sup-normalized and assembled into a max line.
pub fn build_measure_line(
    grid: &Arc<SurfaceGrid>,
    mu0: &MeasureOnSurface,
    mu1: &MeasureOnSurface,
    tgrid: Grid1D,
) -> Result<PotentialCurve> {
    let u0 = green_potential(grid, mu0)?;
    let u1 = green_potential(grid, mu1)?;
    for &(p, _) in &u0.atoms {
        if u1.atoms.iter().any(|&(q, _)| q == p) {
            return Err(KglError::HypothesisViolation(
                "measure supports overlap after node snapping".into(),
            ));
        }
    }
    Ok(PotentialCurve::new(
        grid,
        tgrid,
        CurveKind::GeodesicCandidate,
        CurveSource::MaxPair { phi0: u0, phi1: u1 },
        "measure line",
    ))
}

#[derive(Debug)]
pub struct ParallelLine {
    pub curve: PotentialCurve,
    pub shifted_dual: TestLine,
    /// `sup_t sup_x |w_t - v_t|`, the parallelism witness.
    pub sup_distance: f64,
}

/// Builds the parallel line `w` whose dual is `v_hat_tau + g(tau)` for a
/// concave shift `g` on the dual's slope interval.
pub fn parallel_from_g(
    line: &PotentialCurve,
    g: &dyn Fn(f64) -> f64,
    taugrid: Grid1D,
) -> Result<ParallelLine> {
    let dual = legendre(line, taugrid)?;
    // Concavity of g on the sampled slope interval.
    let samples: Vec<f64> = taugrid
        .values()
        .filter(|&tau| tau >= dual.tau_minus - 1e-12 && tau <= dual.tau_plus + 1e-12)
        .collect();
    let gs: Vec<f64> = samples.iter().map(|&tau| g(tau)).collect();
    let scale = gs.iter().fold(1.0f64, |m, v| m.max(v.abs()));
    for w in gs.windows(3) {
        if w[0] - 2.0 * w[1] + w[2] > 1e-9 * scale {
            return Err(KglError::InvalidShift(
                "shift function is not concave on the slope interval".into(),
            ));
        }
    }
    let lo = dual.tau_minus;
    let hi = dual.tau_plus;
    let shifted = dual.shifted_by(|tau| g(tau.clamp(lo, hi)), "shifted dual");
    let curve = inverse_legendre(&shifted, line.tgrid, CurveKind::GeodesicCandidate)?;
    let mut sup_distance = 0.0f64;
    for k in 0..line.tgrid.len {
        for x in 0..line.grid.node_count() {
            if line.mask[x] {
                continue;
            }
            let a = line.value(k, x);
            let b = curve.value(k, x);
            if a.is_finite() && b.is_finite() {
                sup_distance = sup_distance.max((b - a).abs());
            }
        }
    }
    Ok(ParallelLine { curve, shifted_dual: shifted, sup_distance })
}

#[derive(Debug)]
pub struct Classification {
    pub tau_minus: f64,
    pub tau_plus: f64,
    pub endpoint_minus: PotentialField,
    pub endpoint_plus: PotentialField,
    /// Nonpluripolar masses of the endpoint fields (zero-mass statement).
    pub endpoint_masses: (f64, f64),
    /// Sampled concave deviation `g(tau)` from the affine interpolation of
    /// the endpoint fields, as `(tau, g)` pairs.
    pub g: Vec<(f64, f64)>,
    /// `max over tau, x of |v_hat_tau(x) - affine(x, tau) - g(tau)|`.
    pub linearity_residual: f64,
}

/// Structure theorem for bounded lines on a Riemann surface: the dual is an
/// affine interpolation of its (zero-mass) endpoint fields plus a concave
/// function of the slope alone.
pub fn classify_riemann(line: &PotentialCurve, taugrid: Grid1D) -> Result<Classification> {
    for x in 0..line.grid.node_count() {
        if line.grid.is_infinity(x) {
            continue;
        }
        if line.mask[x] {
            return Err(KglError::OutOfScope("classification needs a bounded line".into()));
        }
        for &k in &[0usize, line.tgrid.len / 2, line.tgrid.len - 1] {
            if !line.value(k, x).is_finite() {
                return Err(KglError::OutOfScope("classification needs a bounded line".into()));
            }
        }
    }
    let dual = legendre(line, taugrid)?;
    let (lo, hi) = dual.finite_range().ok_or(KglError::EmptyDomain)?;
    let minus = dual.slice_field(lo).unwrap();
    let plus = dual.slice_field(hi).unwrap();
    let span = (dual.tau_plus - dual.tau_minus).max(1e-300);
    let mut g = Vec::new();
    let mut residual = 0.0f64;
    for i in lo..=hi {
        let Some(slice) = &dual.slices[i] else { continue };
        let tau = taugrid.value(i);
        let lam = (tau - dual.tau_minus) / span;
        let mut sum = 0.0;
        let mut count = 0usize;
        let mut dev: Vec<(usize, f64)> = Vec::new();
        for x in 0..slice.len() {
            if line.mask[x] || !slice[x].is_finite() {
                continue;
            }
            let (a, b) = (minus.values[x], plus.values[x]);
            if !a.is_finite() || !b.is_finite() {
                continue;
            }
            let affine = (1.0 - lam) * a + lam * b;
            let d = slice[x] - affine;
            sum += d;
            count += 1;
            dev.push((x, d));
        }
        if count == 0 {
            continue;
        }
        let mean = sum / count as f64;
        g.push((tau, mean));
        for (_, d) in dev {
            residual = residual.max((d - mean).abs());
        }
    }
    let endpoint_masses = (mass_report(&minus).0, mass_report(&plus).0);
    Ok(Classification {
        tau_minus: dual.tau_minus,
        tau_plus: dual.tau_plus,
        endpoint_minus: minus,
        endpoint_plus: plus,
        endpoint_masses,
        g,
        linearity_residual: residual,
    })
}

#[derive(Debug)]
pub struct FifthPostulateOutcome {
    pub holds: bool,
    /// `sup_tau P[v_hat_tau](u) - u` per node (nonpositive up to tolerance
    /// when the criterion holds).
    pub gap: Vec<f64>,
    pub sup_gap: f64,
    pub min_gap: f64,
    /// The parallel line through `u`, returned when the criterion holds.
    pub parallel: Option<PotentialCurve>,
}

/// Parallel-postulate criterion: `u` admits a parallel line to `v_line` iff
/// `u = sup_tau P[v_hat_tau](u)`.
pub fn fifth_postulate_check(
    u: &PotentialField,
    line: &PotentialCurve,
    taugrid: Grid1D,
    cfg: &EnvelopeSolveConfig,
) -> Result<FifthPostulateOutcome> {
    if !u.is_bounded() {
        return Err(KglError::UnboundedPotential);
    }
    let dual = legendre(line, taugrid)?;
    let nodes = line.grid.node_count();
    let mut sup = vec![BOTTOM; nodes];
    let mut env_slices: Vec<Option<Vec<f64>>> = vec![None; taugrid.len];
    for i in 0..taugrid.len {
        let Some(chi) = dual.slice_field(i) else { continue };
        let env = env_sing_type(&chi, u, cfg)?;
        for x in 0..nodes {
            if env.values[x] > sup[x] {
                sup[x] = env.values[x];
            }
        }
        env_slices[i] = Some(env.values);
    }
    let mut sup_gap = BOTTOM;
    let mut min_gap = f64::INFINITY;
    let mut gap = vec![0.0; nodes];
    for x in 0..nodes {
        if u.mask[x] || line.mask[x] || !sup[x].is_finite() {
            continue;
        }
        gap[x] = sup[x] - u.values[x];
        sup_gap = sup_gap.max(gap[x]);
        min_gap = min_gap.min(gap[x]);
    }
    let holds = sup_gap.abs().max(min_gap.abs()) <= 10.0 * cfg.tol_env;
    let parallel = if holds {
        let envelope_line = TestLine {
            grid: line.grid.clone(),
            taugrid,
            slices: env_slices,
            tau_minus: dual.tau_minus,
            tau_plus: dual.tau_plus,
            endpoint_atoms: dual.endpoint_atoms.clone(),
            label: "parallel dual".into(),
        };
        Some(inverse_legendre(&envelope_line, line.tgrid, CurveKind::GeodesicCandidate)?)
    } else {
        None
    };
    Ok(FifthPostulateOutcome { holds, gap, sup_gap, min_gap, parallel })
}

#[derive(Debug)]
pub struct ProductReport {
    /// Dual of `u_t(x) + v_t(y)` computed directly per sampled pair.
    pub direct: Vec<PairTable>,
    /// Supremal convolution of the factor duals at the same pairs.
    pub convolved: Vec<PairTable>,
    /// `max` over pairs and slopes of the difference where both are finite.
    pub max_discrepancy: f64,
    /// Worst endpoint mismatch against the sum of factor endpoints.
    pub endpoint_gap: f64,
}

/// Product-line check: the Legendre dual of the sum line equals the supremal
/// convolution of the factor duals, pair by sampled pair.
pub fn product_line(
    line_x: &PotentialCurve,
    line_y: &PotentialCurve,
    taugrid_x: Grid1D,
    taugrid_y: Grid1D,
    pairs: &[(usize, usize)],
) -> Result<ProductReport> {
    if line_x.tgrid != line_y.tgrid {
        return Err(KglError::Config("product factors need a shared time window".into()));
    }
    let dual_x = legendre(line_x, taugrid_x)?;
    let dual_y = legendre(line_y, taugrid_y)?;
    let convolved = sup_convolution(&dual_x, &dual_y, pairs)?;
    let out_grid = convolved[0].taugrid;

    let tlen = line_x.tgrid.len;
    let mut direct = Vec::with_capacity(pairs.len());
    for &(x, y) in pairs {
        let profile: Vec<f64> =
            (0..tlen).map(|k| line_x.value(k, x) + line_y.value(k, y)).collect();
        let mut values = vec![BOTTOM; out_grid.len];
        legendre_profile(&profile, &line_x.tgrid, &out_grid, |i, v| values[i] = v);
        direct.push(PairTable { x, y, taugrid: out_grid, values });
    }

    let mut max_discrepancy = 0.0f64;
    let mut endpoint_gap = 0.0f64;
    let want_lo = dual_x.tau_minus + dual_y.tau_minus;
    let want_hi = dual_x.tau_plus + dual_y.tau_plus;
    for (d, c) in direct.iter().zip(&convolved) {
        let mut lo = f64::INFINITY;
        let mut hi = BOTTOM;
        for k in 0..out_grid.len {
            let (a, b) = (d.values[k], c.values[k]);
            if a.is_finite() && b.is_finite() {
                max_discrepancy = max_discrepancy.max((a - b).abs());
            }
            if a.is_finite() {
                lo = lo.min(out_grid.value(k));
                hi = hi.max(out_grid.value(k));
            }
        }
        if hi >= lo {
            endpoint_gap = endpoint_gap.max((lo - want_lo).abs().max((hi - want_hi).abs()));
        }
    }
    Ok(ProductReport { direct, convolved, max_discrepancy, endpoint_gap })
}

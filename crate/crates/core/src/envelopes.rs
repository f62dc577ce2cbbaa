//! Obstacle-problem envelopes: the rooftop envelope P(f), envelopes with a
//! prescribed singularity type P[chi](psi), and slice-wise maximization of
//! test curves.
//!
//! The workhorse is a projected over-relaxed Gauss-Seidel sweep (red-black
//! ordering) on the linear complementarity problem
//! `min(f - u, rho0 + lap u) = 0`. Singularity types carried by explicit atom
//! lists are realized exactly through the discrete Green function: write
//! `u = s + phi` with `s` the atom potential, reducing the problem to a
//! bounded obstacle problem with density floor `rho0 = 1 - (atom mass)/V`.
//! When the atoms exhaust the volume the floor vanishes and the bounded part
//! collapses to a constant, which is computed in closed form.

use std::sync::Arc;

use crate::error::{KglError, Result};
use crate::geometry::SurfaceGrid;
use crate::potentials::{field_from_atoms, mass_report, PotentialField};
use crate::transform::{concave_usc_regularize, TestLine};
use crate::BOTTOM;

#[derive(Debug, Clone, Copy)]
pub struct EnvelopeSolveConfig {
    /// Sup-norm stopping tolerance for one sweep's updates.
    pub tol_env: f64,
    pub max_sweeps: usize,
    /// Over-relaxation factor in (1, 2).
    pub relaxation: f64,
}

impl Default for EnvelopeSolveConfig {
    fn default() -> Self {
        EnvelopeSolveConfig { tol_env: 1e-8, max_sweeps: 50_000, relaxation: 1.8 }
    }
}

#[derive(Debug, Clone, Copy, serde::Serialize)]
pub struct RooftopDiagnostics {
    /// min over enforced nodes of `rho0 + lap u` (should be >= -tol).
    pub min_density: f64,
    /// max over enforced nodes of `u - f` (should be <= 0 up to roundoff).
    pub max_excess: f64,
    /// `sum (f - u) * max(0, rho0 + lap u) * dA`: complementarity defect.
    pub complementarity: f64,
    pub sweeps: usize,
}

/// Largest field `u <= f` with `1 + lap u >= 0`, the rooftop envelope.
///
/// BOTTOM / masked obstacle nodes stay BOTTOM in the output (they transmit no
/// finite upper bound and the admissibility constraint is dropped on stencils
/// touching them, matching how densities are read everywhere else).
pub fn rooftop(
    f: &PotentialField,
    cfg: &EnvelopeSolveConfig,
) -> Result<(PotentialField, RooftopDiagnostics)> {
    let grid = &f.grid;
    let active: Vec<bool> = (0..grid.node_count())
        .map(|x| !f.mask[x] && f.values[x].is_finite())
        .collect();
    let (u, diag) = obstacle_solve(grid, &f.values, &active, 1.0, cfg)?;
    let mut out = PotentialField::from_values(grid, u, &format!("rooftop of {}", f.label));
    for x in 0..out.values.len() {
        if !active[x] {
            out.values[x] = BOTTOM;
            out.mask[x] = true;
        }
    }
    Ok((out, diag))
}

/// `rooftop(min(u, v))` with the natural BOTTOM absorption.
pub fn rooftop_pair(
    u: &PotentialField,
    v: &PotentialField,
    cfg: &EnvelopeSolveConfig,
) -> Result<(PotentialField, RooftopDiagnostics)> {
    let grid = &u.grid;
    let values: Vec<f64> =
        (0..grid.node_count()).map(|x| u.values[x].min(v.values[x])).collect();
    let mut f = PotentialField::from_values(grid, values, &format!("min({}, {})", u.label, v.label));
    for x in 0..f.values.len() {
        f.mask[x] = u.mask[x] || v.mask[x] || f.values[x] == BOTTOM;
    }
    rooftop(&f, cfg)
}

/// Envelope with the singularity type of `chi`: the largest admissible
/// `u <= psi` whose singularities are no worse than `chi`'s.
///
/// When `chi` carries an explicit atom list the type is realized exactly:
/// `u = s + phi` with `s` the Green potential of the atoms and `phi` the
/// solution of a bounded obstacle problem with density floor
/// `1 - (atom mass)/V`. A bounded `chi` reduces to a stabilized limit of
/// rooftops over the translate schedule `chi + 2^k`.
pub fn env_sing_type(
    chi: &PotentialField,
    psi: &PotentialField,
    cfg: &EnvelopeSolveConfig,
) -> Result<PotentialField> {
    let grid = &chi.grid;
    if !chi.atoms.is_empty() {
        let s = field_from_atoms(grid, &chi.atoms, false, "singularity part")?;
        let w_total: f64 = chi.atoms.iter().map(|&(_, w)| w).sum();
        let rho0 = 1.0 - w_total / grid.discrete_volume;
        if rho0 < -1e-9 {
            return Err(KglError::HypothesisViolation(format!(
                "atom mass {w_total} exceeds the volume {}",
                grid.discrete_volume
            )));
        }
        let active: Vec<bool> = (0..grid.node_count())
            .map(|x| !psi.mask[x] && psi.values[x].is_finite() && !grid.is_infinity(x))
            .collect();
        if !active.iter().any(|&a| a) {
            return Err(KglError::EmptyDomain);
        }
        let mut u: Vec<f64>;
        if rho0 <= 1e-10 {
            // The bounded part must have nonnegative Laplacian everywhere,
            // hence is the constant min(psi - s).
            let c = (0..grid.node_count())
                .filter(|&x| active[x])
                .map(|x| psi.values[x] - s.values[x])
                .fold(f64::INFINITY, f64::min);
            u = s.values.iter().map(|&sv| sv + c).collect();
        } else {
            let g: Vec<f64> = (0..grid.node_count())
                .map(|x| if active[x] { psi.values[x] - s.values[x] } else { f64::INFINITY })
                .collect();
            let (phi, _) = obstacle_solve(grid, &g, &active, rho0, cfg)?;
            u = (0..grid.node_count()).map(|x| s.values[x] + phi[x]).collect();
        }
        for x in 0..u.len() {
            if chi.values[x] == BOTTOM {
                u[x] = BOTTOM;
            }
        }
        let mut out =
            PotentialField::from_values(grid, u, &format!("envelope of {} type", chi.label));
        for x in 0..out.values.len() {
            out.mask[x] = chi.mask[x] || psi.mask[x] || out.mask[x];
        }
        out.atoms = chi.atoms.clone();
        return Ok(out);
    }
    if chi.is_bounded() {
        let mut prev: Option<PotentialField> = None;
        let mut last_change = f64::INFINITY;
        for k in 0..=20u32 {
            let c = 2f64.powi(k as i32);
            let values: Vec<f64> = (0..grid.node_count())
                .map(|x| psi.values[x].min(chi.values[x] + c))
                .collect();
            let mut f = PotentialField::from_values(grid, values, "translate obstacle");
            for x in 0..f.values.len() {
                f.mask[x] = f.mask[x] || psi.mask[x] || chi.mask[x];
            }
            let (r, _) = rooftop(&f, cfg)?;
            if let Some(p) = &prev {
                last_change = sup_distance(p, &r);
                if last_change <= 10.0 * cfg.tol_env {
                    return Ok(r);
                }
            }
            prev = Some(r);
        }
        return Err(KglError::ScheduleExhausted { last_change });
    }
    Err(KglError::UnsupportedSingularity(
        "unbounded singularity type without an atom list".into(),
    ))
}

fn sup_distance(a: &PotentialField, b: &PotentialField) -> f64 {
    let mut d = 0.0f64;
    for x in 0..a.values.len() {
        if !a.mask[x] && !b.mask[x] && a.values[x].is_finite() && b.values[x].is_finite() {
            d = d.max((a.values[x] - b.values[x]).abs());
        }
    }
    d
}

/// Slice-wise maximization of a test curve against the bounded field `v`:
/// each slice is replaced by the envelope of its own singularity type below
/// `v`, then the slope profiles are re-concavified. Returns the maximized
/// curve together with the curve energy `int (mass - V) dtau` before/after.
pub fn maximize_test_curve(
    tline: &TestLine,
    v: &PotentialField,
    cfg: &EnvelopeSolveConfig,
) -> Result<(TestLine, f64, f64)> {
    let mut out = tline.clone();
    for i in 0..tline.slices.len() {
        let Some(slice) = tline.slice_field(i) else { continue };
        let env = env_sing_type(&slice, v, cfg)?;
        out.slices[i] = Some(env.values.clone());
    }
    let out = concave_usc_regularize(&out);
    let before = test_curve_energy(tline);
    let after = test_curve_energy(&out);
    Ok((out, before, after))
}

/// Trapezoid rule for `int (mass(v_tau) - V) dtau` over the finite slices.
pub fn test_curve_energy(tline: &TestLine) -> f64 {
    let vol = tline.grid.discrete_volume;
    let masses: Vec<Option<f64>> = (0..tline.slices.len())
        .map(|i| tline.slice_field(i).map(|f| mass_report(&f).0 - vol))
        .collect();
    let mut total = 0.0;
    for w in masses.windows(2) {
        if let (Some(a), Some(b)) = (w[0], w[1]) {
            total += 0.5 * (a + b) * tline.taugrid.step;
        }
    }
    total
}

/// Projected over-relaxed Gauss-Seidel for the obstacle problem
/// `u <= f`, `rho0 + lap u >= 0`, complementarity at every enforced node.
///
/// `active` marks nodes with a finite obstacle; the density constraint is
/// enforced at active nodes whose full stencil is active. Nodes that are
/// active but not enforced keep `u = f`.
fn obstacle_solve(
    grid: &Arc<SurfaceGrid>,
    f: &[f64],
    active: &[bool],
    rho0: f64,
    cfg: &EnvelopeSolveConfig,
) -> Result<(Vec<f64>, RooftopDiagnostics)> {
    let nodes = grid.node_count();
    let mut nbs = [(0usize, 0.0f64); 4];
    let enforced: Vec<bool> = (0..nodes)
        .map(|x| {
            if !active[x] || grid.is_infinity(x) {
                return false;
            }
            let (cnt, _) = grid.stencil(x, &mut nbs);
            (0..cnt).all(|k| active[nbs[k].0])
        })
        .collect();

    let mut u: Vec<f64> = (0..nodes).map(|x| if active[x] { f[x] } else { 0.0 }).collect();
    // Unbounded obstacle entries (inf placeholders from env_sing_type) start
    // from the largest finite obstacle level.
    let finite_max = (0..nodes)
        .filter(|&x| active[x] && f[x].is_finite())
        .map(|x| f[x])
        .fold(0.0f64, f64::max);
    for x in 0..nodes {
        if active[x] && !f[x].is_finite() {
            u[x] = finite_max;
        }
    }

    let n = grid.n;
    let omega = cfg.relaxation;
    let mut sweeps = 0usize;
    loop {
        sweeps += 1;
        let mut change = 0.0f64;
        for color in 0..2usize {
            for x in 0..nodes {
                if !enforced[x] || (x / n + x % n) % 2 != color {
                    continue;
                }
                let (cnt, diag) = grid.stencil(x, &mut nbs);
                let mut acc = rho0;
                for k in 0..cnt {
                    acc += nbs[k].1 * u[nbs[k].0];
                }
                let u_gs = acc / diag;
                let cand = u[x] + omega * (u_gs - u[x]);
                let new = if cand > f[x] { f[x] } else { cand };
                let d = (new - u[x]).abs();
                if d > change {
                    change = d;
                }
                u[x] = new;
            }
        }
        if change <= cfg.tol_env {
            // Small updates do not yet bound the admissibility residual
            // (slow modes); also require the density floor to hold.
            let mut viol = 0.0f64;
            for x in 0..nodes {
                if !enforced[x] {
                    continue;
                }
                let (cnt, diag) = grid.stencil(x, &mut nbs);
                let mut density = rho0 - diag * u[x];
                for k in 0..cnt {
                    density += nbs[k].1 * u[nbs[k].0];
                }
                viol = viol.max(-density);
            }
            if viol <= 100.0 * cfg.tol_env {
                break;
            }
        }
        if sweeps >= cfg.max_sweeps {
            return Err(KglError::Convergence { residual: change, sweeps });
        }
    }

    let mut min_density = f64::INFINITY;
    let mut max_excess = f64::NEG_INFINITY;
    let mut complementarity = 0.0;
    for x in 0..nodes {
        if !enforced[x] {
            continue;
        }
        let (cnt, diag) = grid.stencil(x, &mut nbs);
        let mut lap = -diag * u[x];
        for k in 0..cnt {
            lap += nbs[k].1 * u[nbs[k].0];
        }
        let density = rho0 + lap;
        min_density = min_density.min(density);
        if f[x].is_finite() {
            max_excess = max_excess.max(u[x] - f[x]);
            complementarity += (f[x] - u[x]) * density.max(0.0) * grid.area_weights[x];
        }
    }
    Ok((u, RooftopDiagnostics { min_density, max_excess, complementarity, sweeps }))
}

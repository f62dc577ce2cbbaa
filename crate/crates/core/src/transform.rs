//! Curves and test lines in the time/slope variables and the Legendre
//! machinery connecting them.
//!
//! The per-node 1-D minimizations exploit convexity: a two-pointer sweep
//! tracks the (monotone) argmin plateau across the slope grid, followed by a
//! sub-grid refinement. The refinement is kink-aware: where the profile is
//! piecewise linear (max-type curves) it intersects the two outer secants,
//! which recovers the continuum transform exactly; elsewhere it falls back to
//! a parabolic vertex. Both variants underestimate the true minimum, so the
//! Fenchel inequality is preserved by construction.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{KglError, Result};
use crate::geometry::SurfaceGrid;
use crate::potentials::PotentialField;
use crate::BOTTOM;

/// A uniform 1-D sample grid `start + k * step`, `k < len`.
#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
pub struct Grid1D {
    pub start: f64,
    pub step: f64,
    pub len: usize,
}

impl Grid1D {
    /// Covers `[a, b]` with the given step; `b` is included when it lies on
    /// the lattice (within 1e-9).
    pub fn covering(a: f64, b: f64, step: f64) -> Grid1D {
        let len = ((b - a) / step + 1.0 + 1e-9).floor() as usize;
        Grid1D { start: a, step, len: len.max(1) }
    }

    #[inline]
    pub fn value(&self, k: usize) -> f64 {
        self.start + k as f64 * self.step
    }

    pub fn last(&self) -> f64 {
        self.value(self.len - 1)
    }

    /// Index of a lattice point, if `x` is one (within 1e-9 relative slack).
    pub fn index_of(&self, x: f64) -> Option<usize> {
        let k = (x - self.start) / self.step;
        let r = k.round();
        if (k - r).abs() < 1e-6 && r >= -0.1 && (r as usize) < self.len {
            Some(r as usize)
        } else {
            None
        }
    }

    pub fn values(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.len).map(|k| self.value(k))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CurveKind {
    SubgeodesicCandidate,
    GeodesicCandidate,
    Ray,
}

/// How a curve produces its slices. Closed-form sources are evaluated lazily
/// so that large grids never materialize the full (t, node) table.
#[derive(Debug, Clone)]
pub enum CurveSource {
    Dense(Vec<Vec<f64>>),
    /// `u_t = max(phi0, phi1 + t)`.
    MaxPair { phi0: PotentialField, phi1: PotentialField },
    /// `u_t = log(exp(phi0) + exp(phi1 + t))`, with `exp(BOTTOM) = 0`.
    LsePair { phi0: PotentialField, phi1: PotentialField },
    /// `u_t = base + rate * t`.
    Affine { base: PotentialField, rate: f64 },
}

/// A t-indexed family of potential fields.
#[derive(Debug, Clone)]
pub struct PotentialCurve {
    pub grid: Arc<SurfaceGrid>,
    pub tgrid: Grid1D,
    pub kind: CurveKind,
    /// Nodes that are singular along the whole curve (plus the infinity node).
    pub mask: Vec<bool>,
    pub source: CurveSource,
    pub label: String,
}

impl PotentialCurve {
    pub fn new(
        grid: &Arc<SurfaceGrid>,
        tgrid: Grid1D,
        kind: CurveKind,
        source: CurveSource,
        label: &str,
    ) -> PotentialCurve {
        let mut mask = vec![false; grid.node_count()];
        if let Some(inf) = grid.infinity_node {
            mask[inf] = true;
        }
        match &source {
            CurveSource::MaxPair { phi0, phi1 } | CurveSource::LsePair { phi0, phi1 } => {
                for x in 0..mask.len() {
                    mask[x] = mask[x] || (phi0.mask[x] && phi1.mask[x]);
                }
            }
            CurveSource::Affine { base, .. } => {
                for x in 0..mask.len() {
                    mask[x] = mask[x] || base.mask[x];
                }
            }
            CurveSource::Dense(slices) => {
                for x in 0..mask.len() {
                    mask[x] = mask[x] || slices.iter().all(|s| s[x] == BOTTOM);
                }
            }
        }
        PotentialCurve { grid: grid.clone(), tgrid, kind, mask, source, label: label.into() }
    }

    /// Value `u_{t_k}(x)`.
    #[inline]
    pub fn value(&self, k: usize, x: usize) -> f64 {
        let t = self.tgrid.value(k);
        match &self.source {
            CurveSource::Dense(slices) => slices[k][x],
            CurveSource::MaxPair { phi0, phi1 } => {
                let a = phi0.values[x];
                let b = phi1.values[x] + t;
                if a.is_nan() || b.is_nan() {
                    BOTTOM
                } else {
                    a.max(b)
                }
            }
            CurveSource::LsePair { phi0, phi1 } => {
                let a = phi0.values[x];
                let b = phi1.values[x] + t;
                log_sum_exp(a, b)
            }
            CurveSource::Affine { base, rate } => {
                if base.values[x] == BOTTOM {
                    BOTTOM
                } else {
                    base.values[x] + rate * t
                }
            }
        }
    }

    /// Materializes one slice as a field; BOTTOM nodes are masked.
    pub fn slice(&self, k: usize) -> PotentialField {
        let values: Vec<f64> = (0..self.grid.node_count()).map(|x| self.value(k, x)).collect();
        let mut field = PotentialField::from_values(&self.grid, values, &self.label);
        for x in 0..field.values.len() {
            if field.values[x] == BOTTOM || self.mask[x] {
                field.mask[x] = true;
            }
        }
        field
    }

    /// Endpoint atom lists when the construction carries them
    /// (max/log-sum-exp pairs): atoms of the t -> -inf and t -> +inf branches.
    pub fn pair_atoms(&self) -> Option<(Vec<(usize, f64)>, Vec<(usize, f64)>)> {
        match &self.source {
            CurveSource::MaxPair { phi0, phi1 } | CurveSource::LsePair { phi0, phi1 } => {
                Some((phi0.atoms.clone(), phi1.atoms.clone()))
            }
            _ => None,
        }
    }

    /// Largest violation of per-node convexity in t (second differences).
    pub fn convexity_defect(&self) -> f64 {
        let mut worst = 0.0f64;
        for x in 0..self.grid.node_count() {
            if self.mask[x] {
                continue;
            }
            let mut prev = self.value(0, x);
            let mut cur = self.value(1, x);
            for k in 2..self.tgrid.len {
                let next = self.value(k, x);
                if prev.is_finite() && cur.is_finite() && next.is_finite() {
                    worst = worst.max(-(prev - 2.0 * cur + next));
                }
                prev = cur;
                cur = next;
            }
        }
        worst
    }
}

fn log_sum_exp(a: f64, b: f64) -> f64 {
    if a == BOTTOM {
        return b;
    }
    if b == BOTTOM {
        return a;
    }
    let m = a.max(b);
    m + (a - m).exp().ln_1p_with(b - m)
}

trait Ln1pWith {
    fn ln_1p_with(self, other: f64) -> f64;
}

impl Ln1pWith for f64 {
    /// `ln(self_exp + exp(other))` helper where `self` is already `exp(a-m)`
    /// with one of the two terms equal to 1.
    fn ln_1p_with(self, other: f64) -> f64 {
        (self + other.exp()).ln()
    }
}

/// A tau-indexed family, BOTTOM outside a compact slope interval.
/// `slices[i] = None` means the whole slice is BOTTOM; finite slices may
/// still hold BOTTOM at individual (polar) nodes.
#[derive(Debug, Clone)]
pub struct TestLine {
    pub grid: Arc<SurfaceGrid>,
    pub taugrid: Grid1D,
    pub slices: Vec<Option<Vec<f64>>>,
    pub tau_minus: f64,
    pub tau_plus: f64,
    /// Atom lists attached to the tau_minus / tau_plus endpoint slices, when
    /// the source construction carries them; interior slices interpolate.
    pub endpoint_atoms: Option<(Vec<(usize, f64)>, Vec<(usize, f64)>)>,
    pub label: String,
}

impl TestLine {
    /// Materializes slice `i` as a field (BOTTOM nodes masked), or `None`.
    pub fn slice_field(&self, i: usize) -> Option<PotentialField> {
        let values = self.slices[i].as_ref()?.clone();
        let mut field = PotentialField::from_values(&self.grid, values, &self.label);
        for x in 0..field.values.len() {
            if field.values[x] == BOTTOM {
                field.mask[x] = true;
            }
        }
        if let Some(atoms) = self.atoms_at(self.taugrid.value(i)) {
            // Mask the atom neighborhoods so that mass bookkeeping on the
            // slice measures the nonpluripolar part only.
            field.set_atoms(atoms);
        }
        Some(field)
    }

    /// Interpolated atom list at slope `tau` (linear between the endpoint
    /// lists), or `None` when the construction carries no atom data.
    pub fn atoms_at(&self, tau: f64) -> Option<Vec<(usize, f64)>> {
        let (a0, a1) = self.endpoint_atoms.as_ref()?;
        let span = self.tau_plus - self.tau_minus;
        let lam = if span.abs() < 1e-14 {
            0.0
        } else {
            ((tau - self.tau_minus) / span).clamp(0.0, 1.0)
        };
        let mut atoms: Vec<(usize, f64)> = Vec::new();
        for &(p, w) in a0 {
            atoms.push((p, w * (1.0 - lam)));
        }
        for &(p, w) in a1 {
            atoms.push((p, w * lam));
        }
        atoms.sort_by_key(|&(p, _)| p);
        let mut merged: Vec<(usize, f64)> = Vec::new();
        for (p, w) in atoms {
            if w <= 0.0 {
                continue;
            }
            match merged.last_mut() {
                Some((q, acc)) if *q == p => *acc += w,
                _ => merged.push((p, w)),
            }
        }
        Some(merged)
    }

    /// Indices of the non-BOTTOM slices (empty for an all-BOTTOM line).
    pub fn finite_range(&self) -> Option<(usize, usize)> {
        let lo = self.slices.iter().position(|s| s.is_some())?;
        let hi = self.slices.iter().rposition(|s| s.is_some())?;
        Some((lo, hi))
    }

    /// Applies a slice-wise shift `v_tau + g(tau)`.
    pub fn shifted_by(&self, g: impl Fn(f64) -> f64, label: &str) -> TestLine {
        let mut out = self.clone();
        out.label = label.into();
        for (i, s) in out.slices.iter_mut().enumerate() {
            if let Some(vals) = s {
                let c = g(self.taugrid.value(i));
                for v in vals.iter_mut() {
                    if v.is_finite() {
                        *v += c;
                    }
                }
            }
        }
        out
    }
}

/// Fraction of unmasked nodes that are BOTTOM above which a slice is declared
/// entirely BOTTOM (slope exhaustion rather than truncation).
const SLICE_BOTTOM_FRACTION: f64 = 0.99;

/// t-Legendre transform: `u_hat_tau(x) = inf_t (u_t(x) - t tau)`.
///
/// Per node the discrete argmin plateau is tracked monotonically across the
/// tau grid; minima attained only at the t-window boundary mark the node
/// BOTTOM at that slope (the profile's slope range is exhausted there).
pub fn legendre(curve: &PotentialCurve, taugrid: Grid1D) -> Result<TestLine> {
    let nodes = curve.grid.node_count();
    let tlen = curve.tgrid.len;
    if tlen < 5 {
        return Err(KglError::WindowTooSmall(format!("{tlen} time samples, need >= 5")));
    }
    let mut slices: Vec<Vec<f64>> = vec![vec![BOTTOM; nodes]; taugrid.len];

    let mut profile = vec![0.0f64; tlen];
    for x in 0..nodes {
        if curve.mask[x] {
            continue;
        }
        let mut all_bottom = true;
        for k in 0..tlen {
            profile[k] = curve.value(k, x);
            all_bottom &= profile[k] == BOTTOM;
        }
        if all_bottom {
            continue;
        }
        legendre_profile(&profile, &curve.tgrid, &taugrid, |i, v| slices[i][x] = v);
    }

    finish_test_line(curve, taugrid, slices)
}

/// Per-profile Legendre transform core: for each slope on `taugrid`, the
/// discrete minimum of `profile[k] - t_k * tau` with sub-grid refinement;
/// `emit(i, v)` is called for every slope index with a finite value (minima
/// attained only at the window boundary are skipped).
pub(crate) fn legendre_profile(
    profile: &[f64],
    tgrid: &Grid1D,
    taugrid: &Grid1D,
    mut emit: impl FnMut(usize, f64),
) {
    let tlen = profile.len();
    let dt = tgrid.step;
    let scale = profile.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let tie = 1e-12 * (1.0 + scale);
    let mut klo = 0usize;
    let mut khi = 0usize;
    for (i, tau) in taugrid.values().enumerate() {
        let f = |k: usize| profile[k] - tgrid.value(k) * tau;
        while klo + 1 < tlen && f(klo + 1) < f(klo) - tie {
            klo += 1;
        }
        if khi < klo {
            khi = klo;
        }
        while khi + 1 < tlen && f(khi + 1) <= f(khi) + tie {
            khi += 1;
        }
        // Boundary-attained minimum: slope range exhausted here.
        if (klo == 0 && khi == 0) || klo == tlen - 1 {
            continue;
        }
        let v = if klo == khi && klo >= 1 && klo <= tlen - 2 {
            refine_min(&f, klo, tlen, dt)
        } else {
            f(klo)
        };
        emit(i, v);
    }
}

fn finish_test_line(
    curve: &PotentialCurve,
    taugrid: Grid1D,
    slices: Vec<Vec<f64>>,
) -> Result<TestLine> {
    let unmasked = curve.mask.iter().filter(|&&m| !m).count().max(1);
    let slices: Vec<Option<Vec<f64>>> = slices
        .into_iter()
        .map(|s| {
            let bottom = s
                .iter()
                .enumerate()
                .filter(|&(x, &v)| !curve.mask[x] && v == BOTTOM)
                .count();
            if (bottom as f64) >= SLICE_BOTTOM_FRACTION * unmasked as f64 {
                None
            } else {
                Some(s)
            }
        })
        .collect();
    let lo = slices.iter().position(|s| s.is_some());
    let (tau_minus, tau_plus) = match lo {
        Some(lo) => {
            let hi = slices.iter().rposition(|s| s.is_some()).unwrap();
            (taugrid.value(lo), taugrid.value(hi))
        }
        None => return Err(KglError::EmptyDomain),
    };
    Ok(TestLine {
        grid: curve.grid.clone(),
        taugrid,
        slices,
        tau_minus,
        tau_plus,
        // A pair line carries atoms (1-s)*a0 + s*a1 at slope s. The finite
        // slice range can start strictly inside (0, 1) when the window never
        // realizes the extreme slopes exactly (smoothed pairs), so the stored
        // endpoint lists are blended to the anchors actually reached.
        endpoint_atoms: curve.pair_atoms().map(|(a0, a1)| {
            let blend = |s: f64| {
                let s = s.clamp(0.0, 1.0);
                let mut out: Vec<(usize, f64)> = Vec::new();
                for &(p, w) in a0.iter() {
                    if w * (1.0 - s) > 0.0 {
                        out.push((p, w * (1.0 - s)));
                    }
                }
                for &(p, w) in a1.iter() {
                    if w * s > 0.0 {
                        out.push((p, w * s));
                    }
                }
                out
            };
            (blend(tau_minus), blend(tau_plus))
        }),
        label: format!("dual of {}", curve.label),
    })
}

/// Kink-aware sub-grid refinement of a discrete interior minimum at `k`.
///
/// For a convex profile both the parabolic vertex and the outer-secant
/// intersection underestimate the continuum minimum, so either return value
/// keeps the Fenchel inequality. The secant intersection is exact for
/// piecewise-linear profiles whose kink lies within one cell of `k`.
fn refine_min(f: &dyn Fn(usize) -> f64, k: usize, len: usize, dt: f64) -> f64 {
    let f0 = f(k);
    let fm = f(k - 1);
    let fp = f(k + 1);
    let d2c = fm - 2.0 * f0 + fp;
    let tiny = 1e-11 * (1.0 + f0.abs());
    if d2c <= tiny {
        return f0;
    }
    if k >= 2 && k + 2 < len {
        let fmm = f(k - 2);
        let fpp = f(k + 2);
        let d2l = fmm - 2.0 * fm + f0;
        let d2r = f0 - 2.0 * fp + fpp;
        // A kink within one cell of `k` contaminates at most one of the outer
        // second differences; the other stays at the smooth background level.
        if d2c > 5.0 * d2l.min(d2r).max(0.0) + tiny {
            // Kink: intersect the secant through (k-2, k-1) with the secant
            // through (k+1, k+2); both lines support the profile from below.
            let sl = (fm - fmm) / dt;
            let sr = (fpp - fp) / dt;
            if sr - sl > 1e-14 {
                // Offsets relative to t_k: line L passes (-dt, fm), R (+dt, fp).
                let t_int = (fp - fm - sr * dt - sl * dt) / (sl - sr);
                if t_int >= -dt && t_int <= dt {
                    let v = fm + sl * (t_int + dt);
                    return v.min(f0);
                }
            }
        }
    }
    // Parabolic vertex; undershoot bounded by d2c/8.
    f0 - (fp - fm) * (fp - fm) / (8.0 * d2c)
}

/// Mirrored refinement for a discrete interior maximum of a concave profile.
fn refine_max(f: &dyn Fn(usize) -> f64, k: usize, len: usize, dt: f64) -> f64 {
    let neg = |k: usize| -f(k);
    -refine_min(&neg, k, len, dt)
}

/// Inverse Legendre transform: `v_check_t(x) = sup_tau (v_tau(x) + t tau)`.
pub fn inverse_legendre(
    tline: &TestLine,
    tgrid: Grid1D,
    kind: CurveKind,
) -> Result<PotentialCurve> {
    let nodes = tline.grid.node_count();
    if tline.slices.iter().all(|s| s.is_none()) {
        return Err(KglError::EmptyDomain);
    }
    let mut slices: Vec<Vec<f64>> = vec![vec![BOTTOM; nodes]; tgrid.len];
    let dtau = tline.taugrid.step;

    for x in 0..nodes {
        // Indices with a finite value at this node.
        let fin: Vec<usize> = (0..tline.taugrid.len)
            .filter(|&i| {
                tline.slices[i]
                    .as_ref()
                    .map(|s| s[x].is_finite())
                    .unwrap_or(false)
            })
            .collect();
        if fin.is_empty() {
            continue;
        }
        let vals: Vec<f64> = fin.iter().map(|&i| tline.slices[i].as_ref().unwrap()[x]).collect();
        let taus: Vec<f64> = fin.iter().map(|&i| tline.taugrid.value(i)).collect();
        let m = fin.len();
        let mut klo = 0usize;
        let mut khi = 0usize;
        let scale = vals.iter().fold(0.0f64, |mx, v| mx.max(v.abs()));
        let tie = 1e-12 * (1.0 + scale);
        for (kt, t) in tgrid.values().enumerate() {
            let p = |k: usize| vals[k] + t * taus[k];
            while klo + 1 < m && p(klo + 1) > p(klo) + tie {
                klo += 1;
            }
            if khi < klo {
                khi = klo;
            }
            while khi + 1 < m && p(khi + 1) >= p(khi) - tie {
                khi += 1;
            }
            let contiguous = klo >= 1
                && klo <= m - 2
                && fin[klo] > 0
                && fin[klo - 1] == fin[klo] - 1
                && fin[klo + 1] == fin[klo] + 1;
            let v = if klo == khi && contiguous {
                refine_max(&p, klo, m, dtau)
            } else {
                p(klo)
            };
            slices[kt][x] = v;
        }
    }

    Ok(PotentialCurve::new(
        &tline.grid,
        tgrid,
        kind,
        CurveSource::Dense(slices),
        &format!("inverse dual of {}", tline.label),
    ))
}

/// Running suprema of a test line in the slope variable.
///
/// Returns `(upper, lower)` where `upper_tau = sup over sigma >= tau` and
/// `lower_tau = sup over sigma <= tau`. (The customary "minus ray" indexed by
/// `-tau` is `lower` read at the reflected slope.)
pub fn restrict_to_rays(tline: &TestLine) -> (TestLine, TestLine) {
    let nodes = tline.grid.node_count();
    let len = tline.taugrid.len;
    let mut upper: Vec<Option<Vec<f64>>> = vec![None; len];
    let mut lower: Vec<Option<Vec<f64>>> = vec![None; len];

    let mut acc: Option<Vec<f64>> = None;
    for i in 0..len {
        if let Some(s) = &tline.slices[i] {
            match &mut acc {
                None => acc = Some(s.clone()),
                Some(a) => {
                    for x in 0..nodes {
                        if s[x] > a[x] {
                            a[x] = s[x];
                        }
                    }
                }
            }
        }
        lower[i] = acc.clone();
    }
    let mut acc: Option<Vec<f64>> = None;
    for i in (0..len).rev() {
        if let Some(s) = &tline.slices[i] {
            match &mut acc {
                None => acc = Some(s.clone()),
                Some(a) => {
                    for x in 0..nodes {
                        if s[x] > a[x] {
                            a[x] = s[x];
                        }
                    }
                }
            }
        }
        upper[i] = acc.clone();
    }

    let make = |slices: Vec<Option<Vec<f64>>>, tag: &str| {
        let lo = slices.iter().position(|s| s.is_some());
        let hi = slices.iter().rposition(|s| s.is_some());
        TestLine {
            grid: tline.grid.clone(),
            taugrid: tline.taugrid,
            tau_minus: lo.map_or(0.0, |i| tline.taugrid.value(i)),
            tau_plus: hi.map_or(0.0, |i| tline.taugrid.value(i)),
            slices,
            endpoint_atoms: tline.endpoint_atoms.clone(),
            label: format!("{tag} ray of {}", tline.label),
        }
    };
    (make(upper, "upper"), make(lower, "lower"))
}

/// One sampled product point of a supremal convolution.
#[derive(Debug, Clone, Serialize)]
pub struct PairTable {
    pub x: usize,
    pub y: usize,
    pub taugrid: Grid1D,
    /// `w_tau(x, y)`; BOTTOM outside the summed endpoint interval.
    pub values: Vec<f64>,
}

/// Supremal convolution evaluated pointwise at sampled product points:
/// `w_tau(x, y) = sup_sigma (u_{tau - sigma}(x) + v_sigma(y))`.
pub fn sup_convolution(
    w1: &TestLine,
    w2: &TestLine,
    pairs: &[(usize, usize)],
) -> Result<Vec<PairTable>> {
    if (w1.taugrid.step - w2.taugrid.step).abs() > 1e-12 {
        return Err(KglError::Config("sup_convolution needs equal slope steps".into()));
    }
    let g1 = w1.taugrid;
    let g2 = w2.taugrid;
    let out_grid = Grid1D { start: g1.start + g2.start, step: g1.step, len: g1.len + g2.len - 1 };
    let mut tables = Vec::with_capacity(pairs.len());
    for &(x, y) in pairs {
        let mut values = vec![BOTTOM; out_grid.len];
        for k in 0..out_grid.len {
            let mut best = BOTTOM;
            // k = i + j over valid slice indices.
            let j_lo = k.saturating_sub(g1.len - 1);
            let j_hi = (g2.len - 1).min(k);
            for j in j_lo..=j_hi {
                let i = k - j;
                let a = match &w1.slices[i] {
                    Some(s) => s[x],
                    None => continue,
                };
                let b = match &w2.slices[j] {
                    Some(s) => s[y],
                    None => continue,
                };
                let v = a + b;
                if v > best {
                    best = v;
                }
            }
            values[k] = best;
        }
        tables.push(PairTable { x, y, taugrid: out_grid, values });
    }
    Ok(tables)
}

/// Enforces per-node concavity and upper semicontinuity in the slope
/// variable: each node's tau profile is replaced by its least concave
/// majorant on the finite domain.
pub fn concave_usc_regularize(tline: &TestLine) -> TestLine {
    let mut out = tline.clone();
    let len = tline.taugrid.len;
    let nodes = tline.grid.node_count();
    for x in 0..nodes {
        // Gather the finite samples of this node.
        let pts: Vec<(usize, f64)> = (0..len)
            .filter_map(|i| {
                tline.slices[i]
                    .as_ref()
                    .and_then(|s| s[x].is_finite().then_some((i, s[x])))
            })
            .collect();
        if pts.len() < 3 {
            continue;
        }
        // Upper hull by monotone chain over (tau index, value).
        let mut hull: Vec<(usize, f64)> = Vec::with_capacity(pts.len());
        for &(i, v) in &pts {
            while hull.len() >= 2 {
                let (i1, v1) = hull[hull.len() - 1];
                let (i0, v0) = hull[hull.len() - 2];
                // Keep the chain concave: drop the middle point when it lies
                // on or below the segment (i0, v0) -- (i, v).
                let cross =
                    (i1 - i0) as f64 * (v - v0) - (i - i0) as f64 * (v1 - v0);
                if cross >= 0.0 {
                    hull.pop();
                } else {
                    break;
                }
            }
            hull.push((i, v));
        }
        // Evaluate the hull at every finite index of the node's domain.
        let mut seg = 0usize;
        for &(i, _) in &pts {
            while seg + 1 < hull.len() && hull[seg + 1].0 < i {
                seg += 1;
            }
            let v = if hull[seg].0 == i {
                hull[seg].1
            } else {
                let (i0, v0) = hull[seg];
                let (i1, v1) = hull[seg + 1];
                v0 + (v1 - v0) * (i - i0) as f64 / (i1 - i0) as f64
            };
            if let Some(s) = out.slices[i].as_mut() {
                s[x] = v;
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::SurfaceGrid;
    use crate::potentials::{divisor_potential, PotentialField};

    fn torus(n: usize) -> Arc<SurfaceGrid> {
        Arc::new(SurfaceGrid::torus(n, 1.0).unwrap())
    }

    fn default_tgrid() -> Grid1D {
        Grid1D::covering(-10.0, 10.0, 0.05)
    }

    fn default_taugrid() -> Grid1D {
        Grid1D::covering(-2.0, 3.0, 0.01)
    }

    fn sphere_pair(n: usize) -> (Arc<SurfaceGrid>, PotentialField, PotentialField) {
        let g = Arc::new(SurfaceGrid::sphere(n).unwrap());
        let phi0 = divisor_potential(&g, &[((0.5, 0.0), 1.0)]).unwrap();
        let phi1 = divisor_potential(&g, &[((-2.0, 0.0), 1.0)]).unwrap();
        (g, phi0, phi1)
    }

    #[test]
    fn grid1d_covering_and_lookup() {
        let g = Grid1D::covering(-2.0, 3.0, 0.01);
        assert_eq!(g.len, 501);
        assert_eq!(g.index_of(0.0), Some(200));
        assert_eq!(g.index_of(1.0), Some(300));
        assert_eq!(g.index_of(0.005), None);
        assert!((g.last() - 3.0).abs() < 1e-12);
    }

    #[test]
    fn scalar_lse_value_at_half() {
        // t -> log(1 + e^t) at tau = 1/2 has transform value log 2.
        let g = torus(8);
        let tg = default_tgrid();
        let slices: Vec<Vec<f64>> = tg
            .values()
            .map(|t| vec![(1.0 + t.exp()).ln(); g.node_count()])
            .collect();
        let curve = PotentialCurve::new(
            &g,
            tg,
            CurveKind::SubgeodesicCandidate,
            CurveSource::Dense(slices),
            "scalar lse",
        );
        let dual = legendre(&curve, default_taugrid()).unwrap();
        let i = dual.taugrid.index_of(0.5).unwrap();
        let v = dual.slices[i].as_ref().unwrap()[0];
        assert!((v - 2.0f64.ln()).abs() < 1e-6, "got {v}");
    }

    #[test]
    fn constant_curve_dual_is_single_slope() {
        let g = torus(16);
        let base = PotentialField::constant(&g, -0.3, "c");
        let curve = PotentialCurve::new(
            &g,
            default_tgrid(),
            CurveKind::SubgeodesicCandidate,
            CurveSource::Affine { base, rate: 0.0 },
            "constant",
        );
        let dual = legendre(&curve, default_taugrid()).unwrap();
        let zero = dual.taugrid.index_of(0.0).unwrap();
        for (i, s) in dual.slices.iter().enumerate() {
            if i == zero {
                let s = s.as_ref().expect("finite at tau = 0");
                for &v in s.iter().take(g.n * g.n) {
                    assert!((v + 0.3).abs() < 1e-12);
                }
            } else {
                assert!(s.is_none(), "slice {i} should be BOTTOM");
            }
        }
        assert_eq!(dual.tau_minus, 0.0);
        assert_eq!(dual.tau_plus, 0.0);
    }

    #[test]
    fn max_pair_dual_is_linear_segment() {
        let (g, phi0, phi1) = sphere_pair(24);
        let curve = PotentialCurve::new(
            &g,
            default_tgrid(),
            CurveKind::GeodesicCandidate,
            CurveSource::MaxPair { phi0: phi0.clone(), phi1: phi1.clone() },
            "max line",
        );
        let dual = legendre(&curve, default_taugrid()).unwrap();
        assert!((dual.tau_minus - 0.0).abs() < 1e-9, "tau- = {}", dual.tau_minus);
        assert!((dual.tau_plus - 1.0).abs() < 1e-9, "tau+ = {}", dual.tau_plus);
        for &tau in &[0.25, 0.5, 0.75] {
            let i = dual.taugrid.index_of(tau).unwrap();
            let s = dual.slices[i].as_ref().unwrap();
            let mut worst = 0.0f64;
            for x in 0..g.node_count() {
                let want = if phi0.values[x] == BOTTOM || phi1.values[x] == BOTTOM {
                    BOTTOM
                } else {
                    (1.0 - tau) * phi0.values[x] + tau * phi1.values[x]
                };
                if want == BOTTOM {
                    continue; // numeric dual flags these nodes BOTTOM too
                }
                if s[x].is_finite() {
                    worst = worst.max((s[x] - want).abs());
                }
            }
            // Kink-aware refinement recovers the linear dual exactly.
            assert!(worst < 1e-9, "tau = {tau}: sup error {worst}");
        }
    }

    #[test]
    fn roundtrip_recovers_max_line() {
        let (g, phi0, phi1) = sphere_pair(24);
        let curve = PotentialCurve::new(
            &g,
            default_tgrid(),
            CurveKind::GeodesicCandidate,
            CurveSource::MaxPair { phi0, phi1 },
            "max line",
        );
        let dual = legendre(&curve, default_taugrid()).unwrap();
        let back = inverse_legendre(
            &dual,
            Grid1D::covering(-2.0, 2.0, 0.05),
            CurveKind::GeodesicCandidate,
        )
        .unwrap();
        let mut worst = 0.0f64;
        for k in 0..back.tgrid.len {
            let t = back.tgrid.value(k);
            let ks = curve.tgrid.index_of(t).unwrap();
            for x in 0..g.node_count() {
                if curve.mask[x] {
                    continue;
                }
                let orig = curve.value(ks, x);
                let rec = back.value(k, x);
                if orig.is_finite() {
                    worst = worst.max((rec - orig).abs());
                }
            }
        }
        assert!(worst < 1e-9, "roundtrip sup error {worst}");
    }

    #[test]
    fn fenchel_inequality_on_grid() {
        let (g, phi0, phi1) = sphere_pair(16);
        let curve = PotentialCurve::new(
            &g,
            Grid1D::covering(-8.0, 8.0, 0.1),
            CurveKind::GeodesicCandidate,
            CurveSource::LsePair { phi0, phi1 },
            "lse",
        );
        let dual = legendre(&curve, Grid1D::covering(-1.0, 2.0, 0.05)).unwrap();
        for (i, s) in dual.slices.iter().enumerate() {
            let Some(s) = s else { continue };
            let tau = dual.taugrid.value(i);
            for k in (0..curve.tgrid.len).step_by(17) {
                let t = curve.tgrid.value(k);
                for x in (0..g.node_count()).step_by(7) {
                    if !s[x].is_finite() {
                        continue;
                    }
                    let u = curve.value(k, x);
                    assert!(
                        s[x] + t * tau <= u + 1e-9,
                        "Fenchel violated at tau={tau} t={t} x={x}: {} vs {u}",
                        s[x] + t * tau
                    );
                }
            }
        }
    }

    #[test]
    fn shift_covariance() {
        // Dual of t -> u_{t + t0} is u_hat_tau + t0 tau.
        let (g, phi0, phi1) = sphere_pair(16);
        let tg = default_tgrid();
        let curve = PotentialCurve::new(
            &g,
            tg,
            CurveKind::GeodesicCandidate,
            CurveSource::MaxPair { phi0: phi0.clone(), phi1: phi1.clone() },
            "max",
        );
        let t0 = 0.45; // 9 grid steps
        let mut shifted_phi1 = phi1.clone();
        shifted_phi1.shift(t0); // max(phi0, phi1 + t0 + t) = u_{t + t0}
        let shifted = PotentialCurve::new(
            &g,
            tg,
            CurveKind::GeodesicCandidate,
            CurveSource::MaxPair { phi0, phi1: shifted_phi1 },
            "max shifted",
        );
        let d0 = legendre(&curve, Grid1D::covering(-1.0, 2.0, 0.05)).unwrap();
        let d1 = legendre(&shifted, Grid1D::covering(-1.0, 2.0, 0.05)).unwrap();
        for &tau in &[0.2, 0.5, 0.8] {
            let i = d0.taugrid.index_of(tau).unwrap();
            let (a, b) = (d0.slices[i].as_ref().unwrap(), d1.slices[i].as_ref().unwrap());
            for x in 0..g.node_count() {
                if a[x].is_finite() && b[x].is_finite() {
                    assert!(
                        (b[x] - a[x] - t0 * tau).abs() < 1e-9,
                        "tau={tau} x={x}: {} vs {}",
                        b[x],
                        a[x] + t0 * tau
                    );
                }
            }
        }
    }

    #[test]
    fn order_reversal() {
        let (g, phi0, phi1) = sphere_pair(16);
        let tg = Grid1D::covering(-8.0, 8.0, 0.1);
        let lower = PotentialCurve::new(
            &g,
            tg,
            CurveKind::GeodesicCandidate,
            CurveSource::MaxPair { phi0: phi0.clone(), phi1: phi1.clone() },
            "max",
        );
        let upper = PotentialCurve::new(
            &g,
            tg,
            CurveKind::GeodesicCandidate,
            CurveSource::LsePair { phi0, phi1 },
            "lse",
        );
        // max <= lse pointwise, so the duals are ordered the same way.
        let taug = Grid1D::covering(-0.5, 1.5, 0.05);
        let dl = legendre(&lower, taug).unwrap();
        let du = legendre(&upper, taug).unwrap();
        for i in 0..taug.len {
            if let (Some(a), Some(b)) = (&dl.slices[i], &du.slices[i]) {
                for x in 0..g.node_count() {
                    if a[x].is_finite() && b[x].is_finite() {
                        assert!(a[x] <= b[x] + 1e-9, "slice {i} node {x}");
                    }
                }
            }
        }
    }

    #[test]
    fn single_slope_inverse_is_affine() {
        let g = torus(16);
        let taug = Grid1D::covering(-1.0, 1.0, 0.05);
        let sigma0 = 0.25;
        let idx = taug.index_of(sigma0).unwrap();
        let mut slices: Vec<Option<Vec<f64>>> = vec![None; taug.len];
        let v: Vec<f64> = (0..g.node_count()).map(|x| (x % 7) as f64 * 0.1 - 0.3).collect();
        slices[idx] = Some(v.clone());
        let tline = TestLine {
            grid: g.clone(),
            taugrid: taug,
            slices,
            tau_minus: sigma0,
            tau_plus: sigma0,
            endpoint_atoms: None,
            label: "single slope".into(),
        };
        let back =
            inverse_legendre(&tline, Grid1D::covering(-2.0, 2.0, 0.1), CurveKind::Ray).unwrap();
        for k in 0..back.tgrid.len {
            let t = back.tgrid.value(k);
            for x in 0..g.node_count() {
                assert!((back.value(k, x) - (v[x] + t * sigma0)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn rays_min_identity_and_endpoints() {
        let (g, phi0, phi1) = sphere_pair(16);
        let curve = PotentialCurve::new(
            &g,
            default_tgrid(),
            CurveKind::GeodesicCandidate,
            CurveSource::MaxPair { phi0: phi0.clone(), phi1: phi1.clone() },
            "max",
        );
        let dual = legendre(&curve, Grid1D::covering(-1.0, 2.0, 0.05)).unwrap();
        let (upper, lower) = restrict_to_rays(&dual);
        // Endpoint bookkeeping: the upper ray keeps tau+; the lower ray's
        // finite range starts at tau-.
        assert_eq!(upper.tau_plus, dual.tau_plus);
        assert_eq!(lower.tau_minus, dual.tau_minus);
        // min(upper_tau, lower_tau) = v_tau exactly on the shared grid.
        for i in 0..dual.taugrid.len {
            let Some(s) = &dual.slices[i] else { continue };
            let (u, l) = (upper.slices[i].as_ref().unwrap(), lower.slices[i].as_ref().unwrap());
            for x in 0..g.node_count() {
                let m = u[x].min(l[x]);
                if s[x] == BOTTOM {
                    // Concavity can lift a BOTTOM node only outside the
                    // common finite range; nothing to check here.
                    continue;
                }
                assert!((m - s[x]).abs() < 1e-12, "slice {i} node {x}: {m} vs {}", s[x]);
            }
        }
        // For tau <= tau-, the upper ray is frozen at the full running sup:
        // sup over sigma of the linear dual = max(phi0, phi1) = u_0.
        let i0 = dual.taugrid.index_of(-1.0).unwrap();
        let u = upper.slices[i0].as_ref().unwrap();
        for x in 0..g.node_count() {
            if curve.mask[x] {
                continue;
            }
            let want = phi0.values[x].max(phi1.values[x]);
            if want.is_finite() && u[x].is_finite() {
                assert!((u[x] - want).abs() < 1e-9, "node {x}: {} vs {want}", u[x]);
            }
        }
    }

    #[test]
    fn concave_regularize_dent_and_idempotence() {
        let g = torus(16);
        let taug = Grid1D::covering(0.0, 1.0, 0.5);
        let n = g.node_count();
        let slices = vec![
            Some(vec![0.0; n]),
            Some(vec![-1.0; n]), // dent: must lift to the chord (= 0)
            Some(vec![0.0; n]),
        ];
        let tline = TestLine {
            grid: g.clone(),
            taugrid: taug,
            slices,
            tau_minus: 0.0,
            tau_plus: 1.0,
            endpoint_atoms: None,
            label: "dented".into(),
        };
        let fixed = concave_usc_regularize(&tline);
        for i in 0..3 {
            for x in 0..n {
                assert!(fixed.slices[i].as_ref().unwrap()[x].abs() < 1e-12);
            }
        }
        let twice = concave_usc_regularize(&fixed);
        for i in 0..3 {
            assert_eq!(fixed.slices[i], twice.slices[i]);
        }
        // Already-concave profiles are unchanged.
        let taug = Grid1D::covering(0.0, 1.0, 0.25);
        let conc: Vec<Option<Vec<f64>>> = (0..5)
            .map(|i| {
                let tau = taug.value(i);
                Some(vec![-(tau - 0.4) * (tau - 0.4); n])
            })
            .collect();
        let tline = TestLine {
            grid: g,
            taugrid: taug,
            slices: conc,
            tau_minus: 0.0,
            tau_plus: 1.0,
            endpoint_atoms: None,
            label: "concave".into(),
        };
        let fixed = concave_usc_regularize(&tline);
        for i in 0..5 {
            for x in 0..n {
                let a = tline.slices[i].as_ref().unwrap()[x];
                let b = fixed.slices[i].as_ref().unwrap()[x];
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn sup_convolution_matches_brute_force_and_shifts() {
        let (g, phi0, phi1) = sphere_pair(16);
        let curve = PotentialCurve::new(
            &g,
            default_tgrid(),
            CurveKind::GeodesicCandidate,
            CurveSource::MaxPair { phi0, phi1 },
            "max",
        );
        let taug = Grid1D::covering(-0.5, 1.5, 0.05);
        let dual = legendre(&curve, taug).unwrap();
        let pairs = [(3usize, 100usize), (40, 41)];
        let tables = sup_convolution(&dual, &dual, &pairs).unwrap();
        // Brute-force double loop oracle.
        for (table, &(x, y)) in tables.iter().zip(&pairs) {
            for k in 0..table.taugrid.len {
                let mut best = BOTTOM;
                for i in 0..taug.len {
                    for j in 0..taug.len {
                        if i + j != k {
                            continue;
                        }
                        if let (Some(a), Some(b)) = (&dual.slices[i], &dual.slices[j]) {
                            best = best.max(a[x] + b[y]);
                        }
                    }
                }
                let got = table.values[k];
                if best == BOTTOM {
                    assert_eq!(got, BOTTOM);
                } else {
                    assert!((got - best).abs() < 1e-12, "pair ({x},{y}) k={k}");
                }
            }
        }
        // Convolving with a single-slope line at sigma = 0 shifts by a.
        let a = -0.7;
        let idx = taug.index_of(0.0).unwrap();
        let mut slices: Vec<Option<Vec<f64>>> = vec![None; taug.len];
        slices[idx] = Some(vec![a; g.node_count()]);
        let single = TestLine {
            grid: g.clone(),
            taugrid: taug,
            slices,
            tau_minus: 0.0,
            tau_plus: 0.0,
            endpoint_atoms: None,
            label: "single".into(),
        };
        let shifted = sup_convolution(&dual, &single, &pairs).unwrap();
        for (table, &(x, _)) in shifted.iter().zip(&pairs) {
            for i in 0..taug.len {
                let want = match &dual.slices[i] {
                    Some(s) if s[x].is_finite() => s[x] + a,
                    _ => continue,
                };
                let k = table.taugrid.index_of(taug.value(i) + 0.0).unwrap();
                assert!((table.values[k] - want).abs() < 1e-12);
            }
        }
    }
}

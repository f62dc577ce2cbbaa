//! Quasi-subharmonic potential fields: constructions from divisors and
//! measures, non-pluripolar Monge-Ampere mass, and Monge-Ampere energy.

use std::sync::Arc;

use crate::error::{KglError, Result};
use crate::geometry::SurfaceGrid;
use crate::BOTTOM;

/// Nodes within this grid-index radius of an atom are marked singular.
/// Mass integration additionally skips any node whose stencil touches the
/// mask, so the effective exclusion radius is one cell larger.
pub const MASK_RADIUS: usize = 3;

/// An extended-real node field on a surface grid.
///
/// `values` may hold `BOTTOM` at masked nodes only; `atoms` records the
/// singular nodes together with the atomic omega_u-mass they carry, which is
/// what envelope operations need to reconstruct the singularity type.
#[derive(Debug, Clone)]
pub struct PotentialField {
    pub grid: Arc<SurfaceGrid>,
    pub values: Vec<f64>,
    /// Per-node singular flag; the sphere's infinity node is always masked.
    pub mask: Vec<bool>,
    /// Singular nodes with their atomic mass (mass units, sums ≤ V).
    pub atoms: Vec<(usize, f64)>,
    pub label: String,
}

impl PotentialField {
    /// Bounded field from raw values; only the infinity node is masked.
    pub fn from_values(grid: &Arc<SurfaceGrid>, values: Vec<f64>, label: &str) -> PotentialField {
        let mut mask = vec![false; grid.node_count()];
        if let Some(inf) = grid.infinity_node {
            mask[inf] = true;
        }
        PotentialField { grid: grid.clone(), values, mask, atoms: Vec::new(), label: label.into() }
    }

    pub fn constant(grid: &Arc<SurfaceGrid>, c: f64, label: &str) -> PotentialField {
        PotentialField::from_values(grid, vec![c; grid.node_count()], label)
    }

    /// Marks the standard mask neighborhood of each atom and stores the atom
    /// list. Does not alter values.
    pub fn set_atoms(&mut self, atoms: Vec<(usize, f64)>) {
        for &(p, _) in &atoms {
            for x in 0..self.grid.node_count() {
                if !self.grid.is_infinity(x) && self.grid.index_distance(x, p) <= MASK_RADIUS {
                    self.mask[x] = true;
                }
            }
        }
        self.atoms = atoms;
    }

    /// Supremum over unmasked nodes.
    pub fn sup(&self) -> f64 {
        let mut m = BOTTOM;
        for (x, &v) in self.values.iter().enumerate() {
            if !self.mask[x] && v > m {
                m = v;
            }
        }
        m
    }

    /// Infimum over unmasked nodes.
    pub fn inf(&self) -> f64 {
        let mut m = f64::INFINITY;
        for (x, &v) in self.values.iter().enumerate() {
            if !self.mask[x] && v < m {
                m = v;
            }
        }
        m
    }

    /// Shifts all finite values by a constant.
    pub fn shift(&mut self, c: f64) {
        for v in &mut self.values {
            if v.is_finite() {
                *v += c;
            }
        }
    }

    /// Shifts so that the unmasked supremum is zero.
    pub fn sup_normalize(&mut self) {
        let s = self.sup();
        if s.is_finite() {
            self.shift(-s);
        }
    }

    /// True when no node (masked or not) holds BOTTOM.
    pub fn is_bounded(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    /// Pointwise maximum. The result is masked only where both inputs are
    /// masked (the max of a singular and a finite branch is finite); atoms do
    /// not survive unless present in both inputs, which the shipped disjoint
    /// constructions never produce.
    pub fn max_with(&self, other: &PotentialField, label: &str) -> PotentialField {
        let values: Vec<f64> = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(&a, &b)| a.max(b))
            .collect();
        let mask: Vec<bool> =
            self.mask.iter().zip(&other.mask).map(|(&a, &b)| a && b).collect();
        PotentialField { grid: self.grid.clone(), values, mask, atoms: Vec::new(), label: label.into() }
    }

    /// `1 + lap(u)` at nodes whose full stencil (and the node itself) is
    /// unmasked; `None` elsewhere. This is the omega_u-density against omega.
    pub fn density(&self) -> Vec<Option<f64>> {
        let g = &self.grid;
        let mut out = vec![None; g.node_count()];
        let mut nbs = [(0usize, 0.0f64); 4];
        for x in 0..g.node_count() {
            if self.mask[x] || g.is_infinity(x) {
                continue;
            }
            let (count, diag) = g.stencil(x, &mut nbs);
            let mut acc = -diag * self.values[x];
            let mut ok = true;
            for &(y, c) in &nbs[..count] {
                if self.mask[y] {
                    ok = false;
                    break;
                }
                acc += c * self.values[y];
            }
            if ok {
                out[x] = Some(1.0 + acc);
            }
        }
        out
    }

    /// Largest violation of discrete omega-subharmonicity over eligible
    /// nodes: `max(0, -(min density))`.
    pub fn psh_defect(&self) -> f64 {
        self.density()
            .iter()
            .flatten()
            .fold(0.0f64, |m, &d| m.max(-d))
    }
}

/// A Borel measure on the grid: atoms plus an optional density against omega.
#[derive(Debug, Clone)]
pub struct MeasureOnSurface {
    pub atoms: Vec<(usize, f64)>,
    /// Density against omega (not against chart Lebesgue measure).
    pub density: Option<Vec<f64>>,
    pub total: f64,
}

impl MeasureOnSurface {
    pub fn dirac(node: usize, mass: f64) -> MeasureOnSurface {
        MeasureOnSurface { atoms: vec![(node, mass)], density: None, total: mass }
    }

    pub fn from_atoms(atoms: Vec<(usize, f64)>) -> MeasureOnSurface {
        let total = atoms.iter().map(|&(_, w)| w).sum();
        MeasureOnSurface { atoms, density: None, total }
    }

    /// Verifies the declared total against the grid quadrature.
    pub fn check_total(&self, grid: &SurfaceGrid) -> Result<()> {
        let mut got: f64 = self.atoms.iter().map(|&(_, w)| w).sum();
        if let Some(d) = &self.density {
            got += d.iter().zip(&grid.area_weights).map(|(v, da)| v * da).sum::<f64>();
        }
        if (got - self.total).abs() > 1e-12 * self.total.abs().max(1.0) {
            return Err(KglError::MassMismatch { got, want: self.total });
        }
        Ok(())
    }
}

/// Merges duplicate nodes in an atom list, summing weights.
fn merge_atoms(mut atoms: Vec<(usize, f64)>) -> Vec<(usize, f64)> {
    atoms.sort_by_key(|&(p, _)| p);
    let mut out: Vec<(usize, f64)> = Vec::with_capacity(atoms.len());
    for (p, w) in atoms {
        match out.last_mut() {
            Some((q, acc)) if *q == p => *acc += w,
            _ => out.push((p, w)),
        }
    }
    out
}

/// Potential with a prescribed divisor: log-singularities of multiplicity
/// `m_i` at the given chart points, carrying total omega_u-mass `V`.
///
/// Realized through discrete Green columns so that the density identity
/// `1 + lap(phi) = 0` holds exactly off the atoms; the result is
/// sup-normalized to 0 and set to BOTTOM on the masked neighborhoods.
pub fn divisor_potential(
    grid: &Arc<SurfaceGrid>,
    points: &[((f64, f64), f64)],
) -> Result<PotentialField> {
    if points.is_empty() {
        return Err(KglError::UnsupportedSingularity("empty divisor".into()));
    }
    let degree: f64 = points.iter().map(|&(_, m)| m).sum();
    if degree <= 0.0 {
        return Err(KglError::UnsupportedSingularity("divisor degree must be positive".into()));
    }
    let v = grid.discrete_volume;
    let mut atoms = Vec::with_capacity(points.len());
    for &((a, b), m) in points {
        if grid.kind == crate::GridKind::SphereChart && (a * a + b * b) > 4.0 + 1e-12 {
            return Err(KglError::UnsupportedSingularity(format!(
                "divisor point ({a}, {b}) outside the chart modulus bound 2"
            )));
        }
        atoms.push((grid.nearest_node(a, b), v * m / degree));
    }
    let atoms = merge_atoms(atoms);
    field_from_atoms(grid, &atoms, true, "divisor potential")
}

/// Builds `sum_i w_i G(., p_i)`, optionally bottoming out the masked values.
pub(crate) fn field_from_atoms(
    grid: &Arc<SurfaceGrid>,
    atoms: &[(usize, f64)],
    bottom_mask: bool,
    label: &str,
) -> Result<PotentialField> {
    let mut f = vec![0.0; grid.node_count()];
    let w_total: f64 = atoms.iter().map(|&(_, w)| w).sum();
    let background = -w_total / grid.discrete_volume;
    for x in 0..grid.node_count() {
        if !grid.is_infinity(x) {
            f[x] = background;
        }
    }
    for &(p, w) in atoms {
        if grid.is_infinity(p) {
            return Err(KglError::UnsupportedSingularity("atom at the infinity node".into()));
        }
        f[p] += w / grid.area_weights[p];
    }
    let values = grid.solve_poisson(&f)?;
    let mut field = PotentialField::from_values(grid, values, label);
    field.set_atoms(atoms.to_vec());
    field.sup_normalize();
    if bottom_mask {
        for x in 0..field.values.len() {
            if field.mask[x] && !field.grid.is_infinity(x) {
                field.values[x] = BOTTOM;
            }
        }
    }
    Ok(field)
}

/// Finite-valued realization of a Dirac-type potential: the same Green-column
/// sum with the (deep but finite) discrete values kept at the masked nodes.
/// Unmasked values agree with the input exactly; mask and atoms carry over.
///
/// Line constructors use this so that pointwise max / log-sum-exp slices stay
/// genuinely bounded and their masses telescope to the discrete volume at
/// every time, instead of leaking mass once the switching locus reaches the
/// masked neighborhoods.
pub fn finite_realization(phi: &PotentialField) -> Result<PotentialField> {
    if phi.is_bounded() {
        return Ok(phi.clone());
    }
    if phi.atoms.is_empty() {
        return Err(KglError::UnsupportedSingularity(
            "cannot realize finite values for an unbounded field without atom data".into(),
        ));
    }
    let mut s = field_from_atoms(&phi.grid, &phi.atoms, false, &phi.label)?;
    let anchor = (0..s.values.len())
        .find(|&x| !phi.mask[x] && !phi.grid.is_infinity(x) && phi.values[x].is_finite())
        .ok_or_else(|| {
            KglError::UnsupportedSingularity("no unmasked node to anchor the realization".into())
        })?;
    let c = phi.values[anchor] - s.values[anchor];
    for x in 0..s.values.len() {
        if !s.grid.is_infinity(x) {
            s.values[x] += c;
        }
    }
    s.mask = phi.mask.clone();
    Ok(s)
}

/// Green potential of a measure of total mass V: the sup-normalized solution
/// of `1 + lap(u) = mu`. Atom nodes are masked but keep their finite discrete
/// values.
pub fn green_potential(grid: &Arc<SurfaceGrid>, mu: &MeasureOnSurface) -> Result<PotentialField> {
    mu.check_total(grid)?;
    let v = grid.discrete_volume;
    if (mu.total - v).abs() > 1e-9 * v {
        return Err(KglError::MassMismatch { got: mu.total, want: v });
    }
    let atoms = merge_atoms(mu.atoms.clone());
    let mut f = vec![0.0; grid.node_count()];
    for x in 0..grid.node_count() {
        if grid.is_infinity(x) {
            continue;
        }
        let d = mu.density.as_ref().map_or(0.0, |d| d[x]);
        f[x] = d - 1.0;
    }
    for &(p, w) in &atoms {
        if grid.is_infinity(p) {
            return Err(KglError::UnsupportedSingularity("atom at the infinity node".into()));
        }
        f[p] += w / grid.area_weights[p];
    }
    let values = grid.solve_poisson(&f)?;
    let mut field = PotentialField::from_values(grid, values, "green potential");
    field.set_atoms(atoms);
    field.sup_normalize();
    Ok(field)
}

/// Depth-d middle-thirds distribution: 2^d atoms of weight V 2^{-d} at the
/// construction-interval midpoints, snapped to grid nodes on the horizontal
/// circle y = 1/2.
pub fn cantor_measure(grid: &SurfaceGrid, depth: u32) -> Result<MeasureOnSurface> {
    if depth < 1 {
        return Err(KglError::Resolution("cantor depth must be >= 1".into()));
    }
    let count = 1usize << depth;
    if count > grid.n {
        return Err(KglError::Resolution(format!(
            "2^{depth} = {count} atoms exceed the grid side {}",
            grid.n
        )));
    }
    let mut starts = vec![0.0f64];
    let mut len = 1.0f64;
    for _ in 0..depth {
        len /= 3.0;
        let mut next = Vec::with_capacity(starts.len() * 2);
        for s in starts {
            next.push(s);
            next.push(s + 2.0 * len);
        }
        starts = next;
    }
    let w = grid.discrete_volume / count as f64;
    let atoms: Vec<(usize, f64)> = starts
        .iter()
        .map(|&s| (grid.nearest_node(s + len / 2.0, 0.5), w))
        .collect();
    Ok(MeasureOnSurface::from_atoms(merge_atoms(atoms)))
}

/// Non-pluripolar Monge-Ampere mass: the clipped omega_u-mass collected away
/// from the singular mask.
pub fn nonpluripolar_mass(u: &PotentialField) -> f64 {
    mass_report(u).0
}

/// Returns `(mass, clipped_negative_total)`; the second entry is the amount
/// of negative density discarded by the clipping and should be at noise level
/// for admissible fields.
pub fn mass_report(u: &PotentialField) -> (f64, f64) {
    let density = u.density();
    let mut mass = 0.0;
    let mut clipped = 0.0;
    for (x, d) in density.iter().enumerate() {
        if let Some(d) = d {
            let da = u.grid.area_weights[x];
            if *d >= 0.0 {
                mass += d * da;
            } else {
                clipped += -d * da;
            }
        }
    }
    (mass, clipped)
}

/// Monge-Ampere energy `I(u) = (1/2V) sum u ((1 + lap u) + 1) dA`.
pub fn ma_energy(u: &PotentialField) -> Result<f64> {
    if !u.is_bounded() {
        return Err(KglError::UnboundedPotential);
    }
    let g = &u.grid;
    let lap = g.laplacian(&u.values);
    let mut acc = 0.0;
    for x in 0..g.node_count() {
        acc += u.values[x] * (2.0 + lap[x]) * g.area_weights[x];
    }
    Ok(acc / (2.0 * g.discrete_volume))
}

//! Single-particle analysis on a measurement hypersurface Σ.
//!
//! The flux `j·n` through Σ is split into three disjoint regions: Σ⁻ where
//! it is negative, Σ⁺ where integral curves of `j` that dipped below Σ at a
//! Σ⁻ point come back up, and the remainder Σ′, which is what trajectories
//! coming from an earlier surface Σ₀ actually hit first.

use rayon::prelude::*;
use serde::Serialize;

use crate::dynamics::{
    current, field_sample, integrate_trajectory, refine_crossing, Controls, CrossingEvent, Region, StopRule,
    Termination, Trajectory, VelocityLaw, SURFACE_TOL,
};
use crate::error::{Error, Result};
use crate::spacetime::{minkowski_dot, FourVector, Hypersurface};
use crate::wavefunction::{Configuration, WaveFunction};

/// Points farther than this from Σ are rejected by [`surface_density`].
pub const ON_SURFACE_TOL: f64 = 1e-9;
/// Default ceiling on the fraction of unresolved cells.
pub const DEFAULT_UNRESOLVED_FRACTION: f64 = 1e-3;

/// Finite grid window onto a hypersurface, in its adapted coordinates.
///
/// An axis with `lo == hi` is collapsed: it has a single cell, contributes
/// a factor 1 to cell measures, and lets 1- or 2-dimensional slices of Σ be
/// studied when the wave function is translation invariant along it.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct SurfacePatch {
    sigma: Hypersurface,
    bounds: [[f64; 2]; 3],
    grid: [usize; 3],
}

impl SurfacePatch {
    pub fn new(sigma: Hypersurface, bounds: [[f64; 2]; 3], grid: [usize; 3]) -> Result<Self> {
        for axis in 0..3 {
            let [lo, hi] = bounds[axis];
            if !lo.is_finite() || !hi.is_finite() {
                return Err(Error::BadPatch(format!("axis {axis} has non-finite bounds")));
            }
            if lo > hi {
                return Err(Error::BadPatch(format!("axis {axis}: lower bound {lo} exceeds upper bound {hi}")));
            }
            if lo == hi && grid[axis] != 1 {
                return Err(Error::BadPatch(format!("collapsed axis {axis} must have exactly one cell")));
            }
            if lo < hi && grid[axis] < 2 {
                return Err(Error::BadPatch(format!("axis {axis} needs at least 2 cells, got {}", grid[axis])));
            }
        }
        if grid.iter().product::<usize>() > 50_000_000 {
            return Err(Error::BadPatch("grid has too many cells".into()));
        }
        Ok(SurfacePatch { sigma, bounds, grid })
    }

    pub fn sigma(&self) -> &Hypersurface {
        &self.sigma
    }

    pub fn bounds(&self) -> [[f64; 2]; 3] {
        self.bounds
    }

    pub fn grid(&self) -> [usize; 3] {
        self.grid
    }

    /// Same window with every open axis refined by `factor`.
    pub fn refined(&self, factor: usize) -> Result<Self> {
        let grid = std::array::from_fn(|i| if self.is_collapsed(i) { 1 } else { self.grid[i] * factor });
        SurfacePatch::new(self.sigma, self.bounds, grid)
    }

    pub fn is_collapsed(&self, axis: usize) -> bool {
        self.bounds[axis][0] == self.bounds[axis][1]
    }

    pub fn cell_count(&self) -> usize {
        self.grid.iter().product()
    }

    /// Cell width along `axis` (0 on collapsed axes).
    pub fn width(&self, axis: usize) -> f64 {
        (self.bounds[axis][1] - self.bounds[axis][0]) / self.grid[axis] as f64
    }

    /// Measure of one cell, counting collapsed axes as unit length.
    pub fn cell_volume(&self) -> f64 {
        (0..3).filter(|&i| !self.is_collapsed(i)).map(|i| self.width(i)).product()
    }

    /// Measure of the whole patch with the same convention.
    pub fn volume(&self) -> f64 {
        self.cell_volume() * self.cell_count() as f64
    }

    pub fn unravel(&self, idx: usize) -> [usize; 3] {
        let [nx, ny, _] = self.grid;
        [idx % nx, (idx / nx) % ny, idx / (nx * ny)]
    }

    pub fn ravel(&self, ijk: [usize; 3]) -> usize {
        ijk[0] + self.grid[0] * (ijk[1] + self.grid[1] * ijk[2])
    }

    pub fn cell_center_coords(&self, idx: usize) -> [f64; 3] {
        let ijk = self.unravel(idx);
        std::array::from_fn(|i| self.bounds[i][0] + (ijk[i] as f64 + 0.5) * self.width(i))
    }

    pub fn cell_center(&self, idx: usize) -> FourVector {
        self.sigma.embed(self.cell_center_coords(idx))
    }

    /// Cell containing adapted coordinates `u`; cells are closed below and
    /// open above.
    pub fn locate_coords(&self, u: [f64; 3]) -> Option<usize> {
        let mut ijk = [0usize; 3];
        for axis in 0..3 {
            let [lo, hi] = self.bounds[axis];
            if self.is_collapsed(axis) {
                if (u[axis] - lo).abs() > 1e-9 * (1.0 + lo.abs()) {
                    return None;
                }
            } else {
                if !(u[axis] >= lo && u[axis] < hi) {
                    return None;
                }
                ijk[axis] = (((u[axis] - lo) / self.width(axis)) as usize).min(self.grid[axis] - 1);
            }
        }
        Some(self.ravel(ijk))
    }

    /// Cell containing the projection of `x` onto Σ.
    pub fn locate(&self, x: &FourVector) -> Option<usize> {
        self.locate_coords(self.sigma.coordinates(x))
    }

    /// Face-adjacent cells, with the axis and the sign of the step.
    pub fn neighbors(&self, idx: usize) -> Vec<(usize, usize, bool)> {
        let ijk = self.unravel(idx);
        let mut out = Vec::with_capacity(6);
        for axis in 0..3 {
            if ijk[axis] > 0 {
                let mut n = ijk;
                n[axis] -= 1;
                out.push((self.ravel(n), axis, false));
            }
            if ijk[axis] + 1 < self.grid[axis] {
                let mut n = ijk;
                n[axis] += 1;
                out.push((self.ravel(n), axis, true));
            }
        }
        out
    }

    /// Quadrature nodes along `axis`: cell edges on open axes, the single
    /// coordinate on collapsed ones.
    pub fn node_coords(&self, axis: usize) -> Vec<f64> {
        let [lo, _] = self.bounds[axis];
        if self.is_collapsed(axis) {
            return vec![lo];
        }
        (0..=self.grid[axis]).map(|k| lo + k as f64 * self.width(axis)).collect()
    }

    /// The patch box, stretched to also cover `extra` (points projected
    /// onto Σ), then widened about its center by `factor` on open axes;
    /// collapsed axes are unbounded.
    pub fn search_region(&self, extra: &[FourVector], factor: f64) -> Region {
        let mut lo = [f64::NEG_INFINITY; 3];
        let mut hi = [f64::INFINITY; 3];
        let projected: Vec<[f64; 3]> = extra.iter().map(|x| self.sigma.coordinates(x)).collect();
        for axis in 0..3 {
            if !self.is_collapsed(axis) {
                let [mut a, mut b] = self.bounds[axis];
                for u in &projected {
                    a = a.min(u[axis]);
                    b = b.max(u[axis]);
                }
                let (c, half) = (0.5 * (a + b), 0.5 * (b - a));
                lo[axis] = c - factor * half;
                hi[axis] = c + factor * half;
            }
        }
        Region { frame: self.sigma, lo, hi }
    }

    fn corners(&self) -> Vec<FourVector> {
        let mut out = Vec::with_capacity(8);
        for mask in 0..8usize {
            let u = std::array::from_fn(|i| self.bounds[i][(mask >> i) & 1]);
            out.push(self.sigma.embed(u));
        }
        out
    }
}

/// `j·n` at `y ∈ Σ` for a single-particle wave function.
pub fn surface_density(psi: &WaveFunction, sigma: &Hypersurface, y: &FourVector) -> Result<f64> {
    surface_density_with(psi, sigma, y, psi.default_node_threshold())
}

/// [`surface_density`] with an explicit node threshold on `|ψ|²`.
pub fn surface_density_with(psi: &WaveFunction, sigma: &Hypersurface, y: &FourVector, node_threshold: f64) -> Result<f64> {
    if psi.n() != 1 {
        return Err(Error::NotSingleParticle(psi.n()));
    }
    let d = sigma.signed_distance(y);
    if d.abs() > ON_SURFACE_TOL {
        return Err(Error::NotOnSurface(d));
    }
    let fs = field_sample(psi, &Configuration::single(*y))?;
    if fs.density <= node_threshold {
        return Err(Error::NodeEncountered { density: fs.density, threshold: node_threshold });
    }
    Ok(minkowski_dot(&fs.currents[0], &sigma.normal()))
}

/// Density `j·n` at every quadrature node of `patch`, as (adapted
/// coordinates, value) pairs in x-fastest order.
pub fn scan_nodes(psi: &WaveFunction, patch: &SurfacePatch, node_threshold: f64) -> Result<Vec<([f64; 3], f64)>> {
    let axes: [Vec<f64>; 3] = std::array::from_fn(|i| patch.node_coords(i));
    let mut coords = Vec::with_capacity(axes.iter().map(Vec::len).product());
    for &z in &axes[2] {
        for &y in &axes[1] {
            for &x in &axes[0] {
                coords.push([x, y, z]);
            }
        }
    }
    coords
        .into_par_iter()
        .map(|u| Ok((u, surface_density_with(psi, patch.sigma(), &patch.sigma().embed(u), node_threshold)?)))
        .collect()
}

/// Fails with [`Error::InitialDensityNegative`] at the first node whose
/// density is below `−tol_factor·max|j|`.
pub fn check_nonnegative(nodes: &[([f64; 3], f64)], tol_factor: f64) -> Result<()> {
    let max = nodes.iter().map(|(_, j)| j.abs()).fold(0.0, f64::max);
    let tol = tol_factor * max;
    match nodes.iter().find(|(_, j)| *j < -tol) {
        Some(&(coords, density)) => Err(Error::InitialDensityNegative { density, coords }),
        None => Ok(()),
    }
}

/// Every crossing of `sigma` by particle `a` along `traj`, in order of `s`,
/// with the direction given by the sign of `j_a·n` at the crossing.
pub fn find_crossings(psi: &WaveFunction, traj: &Trajectory, sigma: &Hypersurface, a: usize) -> Vec<CrossingEvent> {
    let dist = |cfg: &[FourVector]| sigma.signed_distance(&cfg[a]);
    let sign = |d: f64| {
        if d > SURFACE_TOL {
            1.0
        } else if d < -SURFACE_TOL {
            -1.0
        } else {
            0.0
        }
    };
    let s_end = traj.last().s;
    let mut last = sign(dist(&traj.samples[0].cfg));
    let mut events = Vec::new();
    for seg in &traj.segments {
        let end = seg.eval_theta(1.0);
        let sn = sign(sigma.signed_distance(&FourVector([end[4 * a], end[4 * a + 1], end[4 * a + 2], end[4 * a + 3]])));
        if sn != 0.0 && last != 0.0 && sn != last {
            let theta = refine_crossing(seg, sigma, a, last);
            let s = seg.s0 + theta * seg.h;
            if s <= s_end + 1e-12 * (1.0 + s_end.abs()) {
                let cfg = Configuration::from_flat(&seg.eval_theta(theta));
                let direction = match current(psi, &cfg, a) {
                    Ok(j) if minkowski_dot(&j, &sigma.normal()) < 0.0 => -1,
                    _ => 1,
                };
                events.push(CrossingEvent { s, point: cfg.points[a], cfg: cfg.points, direction });
            }
        }
        if sn != 0.0 {
            last = sn;
        }
    }
    events
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize)]
pub enum CellLabel {
    SigmaPrime,
    SigmaPlus,
    SigmaMinus,
    /// Connector or back-trace could not be completed (left the search
    /// region, hit a node, or ran out of parameter).
    Unresolved,
}

impl CellLabel {
    pub fn tag(self) -> &'static str {
        match self {
            CellLabel::SigmaPrime => "prime",
            CellLabel::SigmaPlus => "plus",
            CellLabel::SigmaMinus => "minus",
            CellLabel::Unresolved => "unresolved",
        }
    }
}

/// A Σ⁻ point, the integral curve of `j` leaving it, and where that curve
/// comes back up through Σ.
#[derive(Clone, Debug)]
pub struct Pairing {
    pub minus_cell: usize,
    pub minus_point: FourVector,
    pub plus_point: FourVector,
    /// `None` when the partner lies outside the patch.
    pub plus_cell: Option<usize>,
    pub connector: Trajectory,
}

/// Flux of `j` through each labelled region, with sub-cell boundary
/// corrections.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct FluxSummary {
    pub sigma_prime: f64,
    pub sigma_plus: f64,
    pub sigma_minus: f64,
    pub unresolved: f64,
}

impl FluxSummary {
    /// `∫_{Σ⁺} j + ∫_{Σ⁻} j`, zero for exact pairing.
    pub fn balance(&self) -> f64 {
        self.sigma_plus + self.sigma_minus
    }

    pub fn total(&self) -> f64 {
        self.sigma_prime + self.sigma_plus + self.sigma_minus + self.unresolved
    }

    fn slot(&mut self, label: CellLabel) -> &mut f64 {
        match label {
            CellLabel::SigmaPrime => &mut self.sigma_prime,
            CellLabel::SigmaPlus => &mut self.sigma_plus,
            CellLabel::SigmaMinus => &mut self.sigma_minus,
            CellLabel::Unresolved => &mut self.unresolved,
        }
    }
}

#[derive(Clone, Debug)]
pub struct SurfacePartition {
    pub patch: SurfacePatch,
    pub labels: Vec<CellLabel>,
    /// `j·n` at each cell center.
    pub density: Vec<f64>,
    pub pairings: Vec<Pairing>,
    /// Flux through the regions as located pointwise. A cell straddling a
    /// region boundary carries one label but its flux is split.
    pub flux: FluxSummary,
    pub tol_j: f64,
    /// Σ⁻ cells whose connector never re-crossed Σ.
    pub failed_connectors: usize,
}

impl SurfacePartition {
    pub fn count(&self, label: CellLabel) -> usize {
        self.labels.iter().filter(|&&l| l == label).count()
    }

    /// Unresolved cells plus failed connectors.
    pub fn unresolved_total(&self) -> usize {
        self.count(CellLabel::Unresolved) + self.failed_connectors
    }

    /// Whether the cell touches (shares a face with) a cell of a different
    /// label; such cells form the buffer around band edges.
    pub fn is_edge_cell(&self, idx: usize) -> bool {
        self.patch.neighbors(idx).iter().any(|&(n, _, _)| self.labels[n] != self.labels[idx])
    }
}

/// Tuning knobs of [`classify_patch_with`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct PartitionSettings {
    /// Σ⁻ threshold relative to `max|j|` on the patch.
    pub tol_factor: f64,
    /// Connectors and back-traces must stay within the box spanned by
    /// the patch and the projected initial window, widened by this factor.
    pub margin: f64,
    /// Bisection steps used to place region boundaries inside a cell.
    pub edge_bisections: usize,
}

impl Default for PartitionSettings {
    fn default() -> Self {
        PartitionSettings { tol_factor: 1e-9, margin: 3.0, edge_bisections: 24 }
    }
}

struct Tracer<'a> {
    psi: &'a WaveFunction,
    patch: &'a SurfacePatch,
    rule: StopRule,
    controls: Controls,
    threshold: f64,
    tol_j: f64,
}

impl Tracer<'_> {
    fn density(&self, u: [f64; 3]) -> Result<f64> {
        surface_density_with(self.psi, self.patch.sigma(), &self.patch.sigma().embed(u), self.threshold)
    }

    fn trace(&self, x: FourVector, reverse: bool) -> Result<Trajectory> {
        integrate_trajectory(self.psi, &Configuration::single(x), &Controls { reverse, ..self.controls }, Some(&self.rule))
    }

    /// Label of a single point of Σ with nonnegative density: Σ⁺ if the
    /// backward curve re-crosses Σ, Σ′ if it reaches Σ₀.
    fn back_label(&self, u: [f64; 3]) -> CellLabel {
        match self.trace(self.patch.sigma().embed(u), true).map(|t| t.termination) {
            Ok(Termination::ReachedSurface { surface: 0, .. }) => CellLabel::SigmaPlus,
            Ok(Termination::ReachedSurface { .. }) => CellLabel::SigmaPrime,
            _ => CellLabel::Unresolved,
        }
    }

    fn point_label(&self, u: [f64; 3]) -> CellLabel {
        match self.density(u) {
            Ok(j) if j < -self.tol_j => CellLabel::SigmaMinus,
            Ok(_) => self.back_label(u),
            Err(_) => CellLabel::Unresolved,
        }
    }
}

/// [`classify_patch_with`] using default settings.
pub fn classify_patch(
    psi: &WaveFunction,
    patch: &SurfacePatch,
    patch0: &SurfacePatch,
    controls: &Controls,
) -> Result<SurfacePartition> {
    classify_patch_with(psi, patch, patch0, controls, &PartitionSettings::default())
}

/// Partitions `patch` into Σ′, Σ⁺ and Σ⁻ for particles starting on the
/// window `patch0` of an earlier surface Σ₀.
///
/// Σ⁻ cells are those with `j·n < −tol_j` at the center. From each, the
/// integral curve of `j` is followed until it re-crosses Σ; cells holding
/// such partners seed Σ⁺, which then grows by flood fill through
/// neighbours whose backward curve re-crosses Σ instead of reaching Σ₀.
/// The rest is Σ′. Connectors always use the current-form velocity.
pub fn classify_patch_with(
    psi: &WaveFunction,
    patch: &SurfacePatch,
    patch0: &SurfacePatch,
    controls: &Controls,
    settings: &PartitionSettings,
) -> Result<SurfacePartition> {
    if psi.n() != 1 {
        return Err(Error::NotSingleParticle(psi.n()));
    }
    let sigma = *patch.sigma();
    let sigma0 = *patch0.sigma();
    if patch.corners().iter().any(|x| sigma0.signed_distance(x) <= 0.0)
        || patch0.corners().iter().any(|x| sigma.signed_distance(x) >= 0.0)
    {
        return Err(Error::SurfacesOutOfOrder);
    }
    let threshold = controls.node_threshold_for(psi);
    check_nonnegative(&scan_nodes(psi, patch0, threshold)?, settings.tol_factor)?;

    let cells = patch.cell_count();
    let density: Vec<Option<f64>> = (0..cells)
        .into_par_iter()
        .map(|idx| match surface_density_with(psi, &sigma, &patch.cell_center(idx), threshold) {
            Ok(j) => Ok(Some(j)),
            Err(Error::NodeEncountered { .. }) => Ok(None),
            Err(e) => Err(e),
        })
        .collect::<Result<_>>()?;
    let max_j = density.iter().flatten().map(|j| j.abs()).fold(0.0, f64::max);
    let tol_j = settings.tol_factor * max_j;

    let tracer = Tracer {
        psi,
        patch,
        rule: StopRule { particle: 0, surfaces: vec![sigma, sigma0], region: Some(patch.search_region(&patch0.corners(), settings.margin)) },
        controls: Controls { law: VelocityLaw::CurrentForm, reverse: false, ..*controls },
        threshold,
        tol_j,
    };

    let mut labels: Vec<Option<CellLabel>> = density
        .iter()
        .map(|j| match j {
            None => Some(CellLabel::Unresolved),
            Some(j) if *j < -tol_j => Some(CellLabel::SigmaMinus),
            _ => None,
        })
        .collect();

    let minus: Vec<usize> = (0..cells).filter(|&i| labels[i] == Some(CellLabel::SigmaMinus)).collect();
    let connectors: Vec<Result<Trajectory>> =
        minus.par_iter().map(|&idx| tracer.trace(patch.cell_center(idx), false)).collect();
    let mut pairings = Vec::new();
    let mut failed_connectors = 0;
    for (&idx, traj) in minus.iter().zip(connectors) {
        let traj = traj?;
        let partner = match &traj.termination {
            Termination::ReachedSurface { surface: 0, event } => Some(event.point),
            _ => None,
        };
        let Some(plus_point) = partner else {
            failed_connectors += 1;
            continue;
        };
        let plus_density = surface_density_with(psi, &sigma, &sigma.embed(sigma.coordinates(&plus_point)), threshold);
        if !matches!(plus_density, Ok(j) if j > 0.0) {
            failed_connectors += 1;
            continue;
        }
        pairings.push(Pairing {
            minus_cell: idx,
            minus_point: patch.cell_center(idx),
            plus_point,
            plus_cell: patch.locate(&plus_point),
            connector: traj,
        });
    }

    // Flood fill outward from partner cells, one frontier at a time so the
    // back-traces of a frontier can run in parallel.
    let mut frontier: Vec<usize> = Vec::new();
    for p in &pairings {
        if let Some(c) = p.plus_cell {
            if labels[c].is_none() {
                labels[c] = Some(CellLabel::SigmaPlus);
                frontier.push(c);
            }
        }
    }
    let seeds = frontier.clone();
    let mut queued = vec![false; cells];
    while !frontier.is_empty() {
        let mut candidates = Vec::new();
        for &c in &frontier {
            for (n, _, _) in patch.neighbors(c) {
                if labels[n].is_none() && !queued[n] {
                    queued[n] = true;
                    candidates.push(n);
                }
            }
        }
        candidates.sort_unstable();
        let found: Vec<CellLabel> =
            candidates.par_iter().map(|&n| tracer.back_label(patch.cell_center_coords(n))).collect();
        frontier.clear();
        for (&n, label) in candidates.iter().zip(found) {
            labels[n] = Some(label);
            if label == CellLabel::SigmaPlus {
                frontier.push(n);
            }
        }
    }
    let labels: Vec<CellLabel> = labels.into_iter().map(|l| l.unwrap_or(CellLabel::SigmaPrime)).collect();
    let density: Vec<f64> = density.into_iter().map(|j| j.unwrap_or(0.0)).collect();
    // A seed cell only contains a partner somewhere; for the flux
    // integrals what matters is which region its center lies in.
    let mut center_labels = labels.clone();
    let seed_centers: Vec<CellLabel> =
        seeds.par_iter().map(|&c| tracer.back_label(patch.cell_center_coords(c))).collect();
    for (&c, l) in seeds.iter().zip(seed_centers) {
        center_labels[c] = l;
    }
    let flux = region_fluxes(&tracer, &center_labels, &density, settings.edge_bisections);

    Ok(SurfacePartition { patch: *patch, labels, density, pairings, flux, tol_j, failed_connectors })
}

/// Midpoint-rule flux per label of the cell centers, corrected at every
/// face between centers of different labels by locating the true boundary between the two centers
/// and moving the flux of the sliver between face and boundary across.
fn region_fluxes(tracer: &Tracer, labels: &[CellLabel], density: &[f64], bisections: usize) -> FluxSummary {
    let patch = tracer.patch;
    let vol = patch.cell_volume();
    let mut flux = FluxSummary::default();
    for (l, j) in labels.iter().zip(density) {
        *flux.slot(*l) += j * vol;
    }
    let faces: Vec<(usize, usize, usize)> = (0..labels.len())
        .flat_map(|c| {
            patch
                .neighbors(c)
                .into_iter()
                .filter(move |&(n, _, up)| up && labels[n] != labels[c])
                .map(move |(n, axis, _)| (c, n, axis))
        })
        .filter(|&(c, n, _)| labels[c] != CellLabel::Unresolved && labels[n] != CellLabel::Unresolved)
        .collect();
    let transfers: Vec<Option<f64>> = faces
        .par_iter()
        .map(|&(c, _, axis)| {
            let u1 = patch.cell_center_coords(c);
            let w = patch.width(axis);
            let along = |x: f64| {
                let mut u = u1;
                u[axis] = x;
                u
            };
            let (mut lo, mut hi) = (u1[axis], u1[axis] + w);
            for _ in 0..bisections {
                let mid = 0.5 * (lo + hi);
                if tracer.point_label(along(mid)) == labels[c] {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            let b = 0.5 * (lo + hi);
            let face = u1[axis] + 0.5 * w;
            let jf = tracer.density(along(face)).ok()?;
            let jb = tracer.density(along(b)).ok()?;
            Some((b - face) * 0.5 * (jf + jb) * vol / w)
        })
        .collect();
    for (&(c, n, _), t) in faces.iter().zip(transfers) {
        if let Some(t) = t {
            *flux.slot(labels[c]) += t;
            *flux.slot(labels[n]) -= t;
        }
    }
    flux
}

/// Predicted density on Σ: `j` on Σ′, zero on Σ⁺ ∪ Σ⁻ (and on unresolved
/// cells).
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MeasurableDistribution {
    pub rho: Vec<f64>,
    /// `Σ ρ·cell volume`.
    pub integral: f64,
}

pub fn measurable_distribution(part: &SurfacePartition, max_unresolved_fraction: f64) -> Result<MeasurableDistribution> {
    let total = part.labels.len();
    let unresolved = part.unresolved_total();
    if unresolved as f64 > max_unresolved_fraction * total as f64 {
        return Err(Error::TooManyUnresolved { unresolved, total, allowed: max_unresolved_fraction });
    }
    let rho: Vec<f64> = part
        .labels
        .iter()
        .zip(&part.density)
        .map(|(l, j)| if *l == CellLabel::SigmaPrime { *j } else { 0.0 })
        .collect();
    let integral = rho.iter().sum::<f64>() * part.patch.cell_volume();
    Ok(MeasurableDistribution { rho, integral })
}

/// Partner consistency: distance in adapted coordinates between each Σ⁻
/// point and where the backward curve from its Σ⁺ partner lands, in units
/// of the largest cell width.
pub fn partner_return_error(psi: &WaveFunction, part: &SurfacePartition, controls: &Controls) -> Result<f64> {
    let sigma = *part.patch.sigma();
    let rule = StopRule { particle: 0, surfaces: vec![sigma], region: Some(part.patch.search_region(&[], 3.0)) };
    let back = Controls { law: VelocityLaw::CurrentForm, reverse: true, ..*controls };
    let cell = (0..3).map(|i| part.patch.width(i)).fold(0.0, f64::max);
    let mut worst = 0.0f64;
    for p in &part.pairings {
        let t = integrate_trajectory(psi, &Configuration::single(p.plus_point), &back, Some(&rule))?;
        let d = match t.termination {
            Termination::ReachedSurface { event, .. } => {
                let (a, b) = (sigma.coordinates(&event.point), sigma.coordinates(&p.minus_point));
                (0..3).map(|i| (a[i] - b[i]).powi(2)).sum::<f64>().sqrt()
            }
            _ => f64::INFINITY,
        };
        worst = worst.max(d / cell);
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spacetime::boost;
    use crate::wavefunction::FrequencySign;
    use num_complex::Complex64;
    use std::f64::consts::PI;

    const T: f64 = 2.0;

    fn plane() -> WaveFunction {
        WaveFunction::plane_wave(1.0, [1.0, 0.0, 0.0]).unwrap()
    }

    fn two_mode() -> WaveFunction {
        let pos = FrequencySign::Positive;
        let c = |x| Complex64::new(x, 0.0);
        WaveFunction::new(1.0, 1, &[(c(1.0), vec![([1.0, 0.0, 0.0], pos)]), (c(0.5), vec![([5.0, 0.0, 0.0], pos)])])
            .unwrap()
    }

    /// Closed-form integral curves of the two-mode current. Along `dx/ds = j`
    /// the phase θ = (p−q)·x = (p⁰−q⁰)t + 4x changes at the constant rate
    /// C = 2(m² − p·q)(1 − a²), so t and x are explicit functions of θ.
    struct Closed {
        a0: f64,
        b0: f64,
        a1: f64,
        b1: f64,
        c: f64,
        dp0: f64,
    }

    impl Closed {
        fn new() -> Self {
            let (p0, q0, a) = (2f64.sqrt(), 26f64.sqrt(), 0.5);
            let pq = p0 * q0 - 5.0;
            Closed {
                a0: p0 + a * a * q0,
                b0: a * (p0 + q0),
                a1: 1.0 + a * a * 5.0,
                b1: a * 6.0,
                c: 2.0 * (1.0 - pq) * (1.0 - a * a),
                dp0: p0 - q0,
            }
        }
        fn theta(&self, t: f64, x: f64) -> f64 {
            self.dp0 * t + 4.0 * x
        }
        /// (t, x) at phase θ on the curve through (t0, x0).
        fn at(&self, t0: f64, x0: f64, th: f64) -> (f64, f64) {
            let th0 = self.theta(t0, x0);
            let k = 2.0 / self.c;
            (
                t0 + k * (self.a0 * (th - th0) + self.b0 * (th.sin() - th0.sin())),
                x0 + k * (self.a1 * (th - th0) + self.b1 * (th.sin() - th0.sin())),
            )
        }
        fn j0(&self, th: f64) -> f64 {
            2.0 * (self.a0 + self.b0 * th.cos())
        }
        /// cos θ = −A₀/B₀ at band edges; returns arccos of that.
        fn edge_phase(&self) -> f64 {
            (-self.a0 / self.b0).acos()
        }
        /// Antiderivative of j⁰ in x at fixed t.
        fn flux(&self, t: f64, x: f64) -> f64 {
            2.0 * (self.a0 * x + self.b0 * self.theta(t, x).sin() / 4.0)
        }
    }

    fn bisect(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64) -> f64 {
        let flo = f(lo);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if (f(mid) > 0.0) == (flo > 0.0) {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }

    /// Σ⁻ band [x₋, x₊] at t = T and the lower edge of its Σ⁺ partner band.
    fn band_oracle() -> (f64, f64, f64) {
        let cf = Closed::new();
        let c = cf.edge_phase();
        let lo = (c - 2.0 * PI - cf.dp0 * T) / 4.0;
        let hi = (-c - cf.dp0 * T) / 4.0;
        // the curve leaving the upper edge dips to its minimum at θ = c − 2π
        // and comes back through t = T before the next maximum at −c − 2π
        let th = bisect(|th| cf.at(T, hi, th).0 - T, -c - 2.0 * PI, c - 2.0 * PI);
        (lo, hi, cf.at(T, hi, th).1)
    }

    fn line_patch(sigma: Hypersurface, lo: f64, hi: f64, n: usize) -> SurfacePatch {
        SurfacePatch::new(sigma, [[lo, hi], [0.0, 0.0], [0.0, 0.0]], [n, 1, 1]).unwrap()
    }

    fn s2_patches(n: usize) -> (SurfacePatch, SurfacePatch) {
        (line_patch(Hypersurface::lab(T), 0.582342, 2.182037, n), line_patch(Hypersurface::lab(0.0), -0.6, 0.6, 48))
    }

    #[test]
    fn density_examples() {
        let y = FourVector([0.0, 0.3, -1.0, 2.0]);
        let j = surface_density(&plane(), &Hypersurface::lab(0.0), &y).unwrap();
        assert!((j - 2.0 * 2f64.sqrt()).abs() < 1e-13);

        let x = FourVector([0.0, PI / 4.0, 0.0, 0.0]);
        let j = surface_density(&two_mode(), &Hypersurface::lab(0.0), &x).unwrap();
        assert!((j + 1.135296).abs() < 1e-6);

        let sigma = Hypersurface::new(FourVector([1.25, 0.75, 0.0, 0.0]), 0.0).unwrap();
        let y = sigma.embed([0.4, -0.2, 1.0]);
        let j = surface_density(&plane(), &sigma, &y).unwrap();
        assert!((j - (1.25 * 2.0 * 2f64.sqrt() - 0.75 * 2.0)).abs() < 1e-12);
        assert!((j - 2.03553).abs() < 1e-5);
    }

    #[test]
    fn density_errors() {
        let off = FourVector([0.1, 0.0, 0.0, 0.0]);
        assert!(matches!(surface_density(&plane(), &Hypersurface::lab(0.0), &off), Err(Error::NotOnSurface(_))));
        let pair = plane().tensor(&plane()).unwrap();
        assert!(matches!(
            surface_density(&pair, &Hypersurface::lab(0.0), &FourVector::ZERO),
            Err(Error::NotSingleParticle(2))
        ));
        // equal-amplitude modes cancel where their phases differ by π
        let pos = FrequencySign::Positive;
        let one = Complex64::new(1.0, 0.0);
        let psi = WaveFunction::new(1.0, 1, &[(one, vec![([1.0, 0.0, 0.0], pos)]), (one, vec![([5.0, 0.0, 0.0], pos)])])
            .unwrap();
        let node = FourVector([0.0, PI / 4.0, 0.0, 0.0]);
        assert!(matches!(
            surface_density(&psi, &Hypersurface::lab(0.0), &node),
            Err(Error::NodeEncountered { .. })
        ));
    }

    #[test]
    fn patch_validation_and_indexing() {
        let sigma = Hypersurface::lab(0.0);
        assert!(SurfacePatch::new(sigma, [[0.0, 1.0], [0.0, 1.0], [0.0, 1.0]], [1, 2, 2]).is_err());
        assert!(SurfacePatch::new(sigma, [[1.0, 0.0], [0.0, 1.0], [0.0, 1.0]], [2, 2, 2]).is_err());
        assert!(SurfacePatch::new(sigma, [[0.0, 0.0], [0.0, 1.0], [0.0, 1.0]], [2, 2, 2]).is_err());
        assert!(SurfacePatch::new(sigma, [[0.0, f64::NAN], [0.0, 1.0], [0.0, 1.0]], [2, 2, 2]).is_err());

        let p = SurfacePatch::new(sigma, [[0.0, 1.0], [-1.0, 1.0], [2.0, 2.0]], [4, 2, 1]).unwrap();
        assert_eq!(p.cell_count(), 8);
        assert!((p.cell_volume() - 0.25).abs() < 1e-15);
        for idx in 0..8 {
            assert_eq!(p.ravel(p.unravel(idx)), idx);
            assert_eq!(p.locate_coords(p.cell_center_coords(idx)), Some(idx));
        }
        // closed lower edge, open upper edge
        assert_eq!(p.locate_coords([0.25, -1.0, 2.0]), Some(1));
        assert_eq!(p.locate_coords([1.0, 0.0, 2.0]), None);
        assert_eq!(p.locate_coords([0.5, 0.0, 2.1]), None);
        assert_eq!(p.neighbors(0).len(), 2);
        assert_eq!(p.node_coords(0).len(), 5);
        assert_eq!(p.node_coords(2), vec![2.0]);
    }

    #[test]
    fn straight_crossing_and_miss() {
        let psi = plane();
        let controls = Controls { s_max: 3.0 / 2f64.sqrt(), ..Controls::default() };
        let traj = integrate_trajectory(&psi, &Configuration::single(FourVector::ZERO), &controls, None).unwrap();
        let ev = find_crossings(&psi, &traj, &Hypersurface::lab(2.0), 0);
        assert_eq!(ev.len(), 1);
        assert!((ev[0].s - 2f64.sqrt()).abs() < 1e-9);
        assert!((ev[0].point[1] - 2f64.sqrt()).abs() < 1e-9);
        assert_eq!(ev[0].direction, 1);

        let short = Controls { s_max: 1.0, ..Controls::default() };
        let traj = integrate_trajectory(&psi, &Configuration::single(FourVector::ZERO), &short, None).unwrap();
        assert!(find_crossings(&psi, &traj, &Hypersurface::lab(2.0), 0).is_empty());
    }

    #[test]
    fn three_crossings_through_a_band() {
        let cf = Closed::new();
        let c = cf.edge_phase();
        // from the origin θ decreases; t peaks at θ = −c and bottoms out at c − 2π
        let (t_max, _) = cf.at(0.0, 0.0, -c);
        let (t_min, _) = cf.at(0.0, 0.0, c - 2.0 * PI);
        assert!(t_max - t_min > 0.4);
        let tau = 0.5 * (t_max + t_min);
        let roots = [
            bisect(|th| cf.at(0.0, 0.0, th).0 - tau, 0.0, -c),
            bisect(|th| cf.at(0.0, 0.0, th).0 - tau, -c, c - 2.0 * PI),
            bisect(|th| cf.at(0.0, 0.0, th).0 - tau, c - 2.0 * PI, -c - 2.0 * PI),
        ];

        let psi = two_mode();
        let controls = Controls {
            law: VelocityLaw::RawCurrent,
            s_max: (2.0 * PI + 1.0) / cf.c.abs(),
            rtol: 1e-11,
            atol: 1e-13,
            ..Controls::default()
        };
        let traj = integrate_trajectory(&psi, &Configuration::single(FourVector::ZERO), &controls, None).unwrap();
        let ev = find_crossings(&psi, &traj, &Hypersurface::lab(tau), 0);
        let dirs: Vec<i8> = ev.iter().map(|e| e.direction).collect();
        assert_eq!(dirs, vec![1, -1, 1]);
        for (e, th) in ev.iter().zip(roots) {
            let (_, x) = cf.at(0.0, 0.0, th);
            assert!((e.point[1] - x).abs() < 1e-7, "{} vs {}", e.point[1], x);
            assert!((e.s - th / cf.c).abs() < 1e-7);
            assert!((e.point[0] - tau).abs() < 1e-9);
        }
    }

    #[test]
    fn plane_wave_partition_is_all_prime() {
        let sigma = Hypersurface::lab(T);
        let patch = line_patch(sigma, 2f64.sqrt() - 0.5, 2f64.sqrt() + 0.5, 16);
        let patch0 = line_patch(Hypersurface::lab(0.0), -0.5, 0.5, 16);
        let part = classify_patch(&plane(), &patch, &patch0, &Controls::default()).unwrap();
        assert!(part.labels.iter().all(|&l| l == CellLabel::SigmaPrime));
        assert!(part.pairings.is_empty());
        let m = measurable_distribution(&part, DEFAULT_UNRESOLVED_FRACTION).unwrap();
        assert!(m.rho.iter().all(|r| (r - 2.0 * 2f64.sqrt()).abs() < 1e-12));
        assert!((m.integral - 2.0 * 2f64.sqrt() * patch.volume()).abs() < 1e-12);
        assert!((part.flux.sigma_prime - m.integral).abs() < 1e-12);
    }

    #[test]
    fn two_mode_partition_matches_closed_form() {
        let (minus_lo, minus_hi, plus_lo) = band_oracle();
        assert!((minus_lo - 0.907164).abs() < 1e-6 && (minus_hi - 1.206846).abs() < 1e-6);
        let (patch, patch0) = s2_patches(64);
        let psi = two_mode();
        let controls = Controls::default();
        let part = classify_patch(&psi, &patch, &patch0, &controls).unwrap();
        assert_eq!(part.unresolved_total(), 0);
        let label_at = |x: f64| {
            if x > minus_lo && x < minus_hi {
                CellLabel::SigmaMinus
            } else if x > plus_lo && x < minus_lo {
                CellLabel::SigmaPlus
            } else {
                CellLabel::SigmaPrime
            }
        };
        let w = patch.width(0);
        for idx in 0..patch.cell_count() {
            let x = patch.cell_center_coords(idx)[0];
            let got = part.labels[idx];
            // a cell straddling a boundary may take either side's label
            let ok = got == label_at(x) || got == label_at(x - 0.5 * w) || got == label_at(x + 0.5 * w);
            assert!(ok, "cell {idx} at x = {x}: {got:?}");
            if label_at(x - 0.5 * w) == label_at(x + 0.5 * w) {
                assert_eq!(got, label_at(x), "cell {idx} at x = {x}");
            }
        }
        assert!(part.count(CellLabel::SigmaMinus) >= 10 && part.count(CellLabel::SigmaPlus) >= 5);
        for p in &part.pairings {
            let xp = p.plus_point[1];
            assert!(xp > plus_lo - 1e-9 && xp < minus_lo + 1e-9);
            assert!((p.plus_point[0] - T).abs() < 1e-9);
        }
        assert!(partner_return_error(&psi, &part, &controls).unwrap() <= 1.0);

        // Σ′ carries the whole flux that entered through the initial window
        let cf = Closed::new();
        let z = cf.flux(0.0, 0.6) - cf.flux(0.0, -0.6);
        assert!((part.flux.sigma_prime - z).abs() < 1e-3 * z, "{} vs {z}", part.flux.sigma_prime);
        // exact band fluxes from the antiderivative
        let minus = cf.flux(T, minus_hi) - cf.flux(T, minus_lo);
        let plus = cf.flux(T, minus_lo) - cf.flux(T, plus_lo);
        assert!((minus + plus).abs() < 1e-6);
        assert!((part.flux.sigma_minus - minus).abs() < 1e-3 * z);
        assert!((part.flux.sigma_plus - plus).abs() < 1e-3 * z);

        let m = measurable_distribution(&part, DEFAULT_UNRESOLVED_FRACTION).unwrap();
        for idx in 0..patch.cell_count() {
            match part.labels[idx] {
                CellLabel::SigmaPrime => assert_eq!(m.rho[idx], part.density[idx]),
                _ => assert_eq!(m.rho[idx], 0.0),
            }
        }
    }

    #[test]
    fn flux_defect_shrinks_under_refinement() {
        let psi = two_mode();
        let defect = |n| {
            let (patch, patch0) = s2_patches(n);
            classify_patch(&psi, &patch, &patch0, &Controls::default()).unwrap().flux.balance().abs()
        };
        let (d1, d2) = (defect(32), defect(64));
        assert!(d2 * 2.0 <= d1, "{d1} -> {d2}");
    }

    #[test]
    fn negative_initial_density_is_rejected() {
        let cf = Closed::new();
        let c = cf.edge_phase();
        // band on t = 0 centred where θ = 4x = π
        let (lo, hi) = (c / 4.0, (2.0 * PI - c) / 4.0);
        assert!(cf.j0(4.0 * 0.5 * (lo + hi)) < 0.0);
        let patch = line_patch(Hypersurface::lab(T), 0.5, 2.0, 16);
        let patch0 = line_patch(Hypersurface::lab(0.0), 0.4, 1.2, 16);
        match classify_patch(&two_mode(), &patch, &patch0, &Controls::default()) {
            Err(Error::InitialDensityNegative { density, coords }) => {
                assert!(density < 0.0);
                assert!(coords[0] >= lo - 0.05 && coords[0] <= hi + 0.05);
            }
            other => panic!("expected InitialDensityNegative, got {other:?}"),
        }
    }

    #[test]
    fn surfaces_must_be_ordered() {
        let a = line_patch(Hypersurface::lab(0.0), 0.0, 1.0, 4);
        let b = line_patch(Hypersurface::lab(2.0), 0.0, 1.0, 4);
        assert!(matches!(classify_patch(&plane(), &a, &b, &Controls::default()), Err(Error::SurfacesOutOfOrder)));
        let tilted = Hypersurface::new(boost([0.9, 0.0, 0.0]).unwrap().apply(&FourVector([1.0, 0.0, 0.0, 0.0])), 0.0)
            .unwrap();
        // a steep surface through the origin passes below t = 0.5 for large x
        let c = SurfacePatch::new(tilted, [[-20.0, 20.0], [0.0, 0.0], [0.0, 0.0]], [4, 1, 1]).unwrap();
        let d = line_patch(Hypersurface::lab(0.5), 0.0, 1.0, 4);
        assert!(matches!(classify_patch(&plane(), &d, &c, &Controls::default()), Err(Error::SurfacesOutOfOrder)));
    }

    #[test]
    fn measurable_distribution_fixtures() {
        let patch = line_patch(Hypersurface::lab(1.0), 0.0, 1.0, 10);
        let part = SurfacePartition {
            patch,
            labels: vec![CellLabel::SigmaMinus; 10],
            density: vec![-0.3; 10],
            pairings: vec![],
            flux: FluxSummary::default(),
            tol_j: 0.0,
            failed_connectors: 0,
        };
        let m = measurable_distribution(&part, DEFAULT_UNRESOLVED_FRACTION).unwrap();
        assert!(m.rho.iter().all(|&r| r == 0.0));
        assert_eq!(m.integral, 0.0);

        let mut bad = part.clone();
        bad.labels[3] = CellLabel::Unresolved;
        assert!(matches!(
            measurable_distribution(&bad, DEFAULT_UNRESOLVED_FRACTION),
            Err(Error::TooManyUnresolved { unresolved: 1, total: 10, .. })
        ));
        assert!(measurable_distribution(&bad, 0.2).is_ok());
    }
}

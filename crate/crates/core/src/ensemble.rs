//! Monte Carlo test of the measurable distribution: draw positions on Σ₀
//! from `j·n`, follow each to its first crossing of Σ, and histogram the
//! crossings against the partition of Σ.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::dynamics::{integrate_trajectory, Controls, StopRule, Termination};
use crate::error::{Error, Result};
use crate::spacetime::FourVector;
use crate::surface::{
    check_nonnegative, measurable_distribution, scan_nodes, surface_density_with, CellLabel, SurfacePartition,
    SurfacePatch,
};
use crate::wavefunction::{Configuration, WaveFunction};

/// Boundary-shell average above this fraction of the interior average
/// raises the tail flag.
pub const TAIL_RATIO: f64 = 1e-3;
/// Safety factor on the pre-scanned maximum density.
pub const MAX_SAFETY: f64 = 1.01;
/// Σ′ cells with fewer expected hits are left out of the chi-square sum.
pub const MIN_EXPECTED: f64 = 10.0;
/// Relative tolerance used to reject negative densities on Σ₀.
pub const NEGATIVITY_TOL: f64 = 1e-9;

/// How initial positions are drawn on the Σ₀ window.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InitialLaw {
    /// Density proportional to `j·n`.
    #[default]
    Current,
    /// Uniform on the window, ignoring `j`.
    Uniform,
}

/// Normalized initial density on a window of Σ₀.
#[derive(Clone, Debug)]
pub struct InitialDistribution {
    pub patch0: SurfacePatch,
    pub psi: WaveFunction,
    pub node_threshold: f64,
    /// Simpson integral of `j·n` over the window.
    pub z: f64,
    /// Largest node density, times [`MAX_SAFETY`].
    pub max_density: f64,
    pub boundary_average: f64,
    pub interior_average: f64,
    /// The window probably truncates a noticeable part of the density.
    pub tail_flag: bool,
}

/// Composite Simpson weights on `m` equal intervals of width `h`, closing
/// with the 3/8 rule on the last three intervals when `m` is odd.
pub fn simpson_weights(m: usize, h: f64) -> Vec<f64> {
    let mut w = vec![0.0; m + 1];
    let simpson_end = if m % 2 == 0 { m } else { m - 3 };
    for k in (0..simpson_end).step_by(2) {
        w[k] += h / 3.0;
        w[k + 1] += 4.0 * h / 3.0;
        w[k + 2] += h / 3.0;
    }
    if m % 2 == 1 {
        let k = simpson_end;
        for (i, c) in [3.0, 9.0, 9.0, 3.0].into_iter().enumerate() {
            w[k + i] += c * h / 8.0;
        }
    }
    w
}

fn axis_weights(patch: &SurfacePatch, axis: usize) -> Vec<f64> {
    if patch.is_collapsed(axis) {
        vec![1.0]
    } else {
        simpson_weights(patch.grid()[axis], patch.width(axis))
    }
}

/// Simpson integral over the patch of values given at its nodes in the
/// x-fastest order of [`scan_nodes`].
pub fn integrate_nodes(patch: &SurfacePatch, values: &[f64]) -> f64 {
    let w: [Vec<f64>; 3] = std::array::from_fn(|i| axis_weights(patch, i));
    let mut sum = 0.0;
    let mut idx = 0;
    for wz in &w[2] {
        for wy in &w[1] {
            for wx in &w[0] {
                sum += wx * wy * wz * values[idx];
                idx += 1;
            }
        }
    }
    sum
}

/// Simpson integral of `j·n` over `patch`, signed.
pub fn surface_flux(psi: &WaveFunction, patch: &SurfacePatch, node_threshold: f64) -> Result<f64> {
    let nodes = scan_nodes(psi, patch, node_threshold)?;
    Ok(integrate_nodes(patch, &nodes.iter().map(|n| n.1).collect::<Vec<_>>()))
}

pub fn normalize_on_surface(psi: &WaveFunction, patch0: &SurfacePatch, node_threshold: f64) -> Result<InitialDistribution> {
    let nodes = scan_nodes(psi, patch0, node_threshold)?;
    check_nonnegative(&nodes, NEGATIVITY_TOL)?;
    let values: Vec<f64> = nodes.iter().map(|n| n.1).collect();
    let z = integrate_nodes(patch0, &values);
    let max = values.iter().copied().fold(0.0, f64::max);

    let counts: [usize; 3] = std::array::from_fn(|i| patch0.node_coords(i).len());
    let (mut boundary, mut nb, mut interior, mut ni) = (0.0, 0usize, 0.0, 0usize);
    for (idx, v) in values.iter().enumerate() {
        let ijk = [idx % counts[0], (idx / counts[0]) % counts[1], idx / (counts[0] * counts[1])];
        let on_shell = (0..3).any(|i| !patch0.is_collapsed(i) && (ijk[i] == 0 || ijk[i] + 1 == counts[i]));
        if on_shell {
            boundary += v;
            nb += 1;
        } else {
            interior += v;
            ni += 1;
        }
    }
    let boundary_average = if nb > 0 { boundary / nb as f64 } else { 0.0 };
    let interior_average = if ni > 0 { interior / ni as f64 } else { boundary_average };
    Ok(InitialDistribution {
        patch0: *patch0,
        psi: psi.clone(),
        node_threshold,
        z,
        max_density: MAX_SAFETY * max,
        boundary_average,
        interior_average,
        tail_flag: ni > 0 && boundary_average > TAIL_RATIO * interior_average,
    })
}

/// Independent random stream for sample `index`.
pub fn sample_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// Draws `n` points on Σ₀ by rejection against the pre-scanned maximum.
/// Sample `i` uses its own stream, so the list is independent of how the
/// work is scheduled.
pub fn sample_initial(dist: &InitialDistribution, n: usize, seed: u64, law: InitialLaw) -> Result<Vec<FourVector>> {
    if !(dist.max_density > 0.0) {
        return Err(Error::MaxDensityNotFound);
    }
    let patch = &dist.patch0;
    let bounds = patch.bounds();
    let sigma = *patch.sigma();
    (0..n as u64)
        .into_par_iter()
        .map(|i| {
            let mut rng = sample_rng(seed, i);
            for _ in 0..10_000_000u32 {
                let u: [f64; 3] = std::array::from_fn(|a| {
                    let [lo, hi] = bounds[a];
                    if lo == hi {
                        lo
                    } else {
                        rng.gen_range(lo..hi)
                    }
                });
                let accept: f64 = rng.gen();
                let x = sigma.embed(u);
                if law == InitialLaw::Uniform {
                    return Ok(x);
                }
                if let Ok(j) = surface_density_with(&dist.psi, &sigma, &x, dist.node_threshold) {
                    if accept * dist.max_density < j {
                        return Ok(x);
                    }
                }
            }
            Err(Error::MaxDensityNotFound)
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Crossing {
    pub sample: usize,
    pub point: FourVector,
    pub coords: [f64; 3],
    /// Cell of the Σ patch, `None` if the crossing lies outside it.
    pub cell: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EnsembleResult {
    pub n: usize,
    pub seed: u64,
    pub patch: SurfacePatch,
    pub crossings: Vec<Crossing>,
    pub histogram: Vec<u64>,
    pub outside_patch: usize,
    /// Ran out of parameter, step budget or step size before crossing.
    pub escaped: usize,
    pub node_terminated: usize,
}

/// Follows every sample to its first crossing of the patch's surface.
pub fn propagate_ensemble(
    psi: &WaveFunction,
    samples: &[FourVector],
    patch: &SurfacePatch,
    controls: &Controls,
    seed: u64,
) -> EnsembleResult {
    let rule = StopRule::surface(*patch.sigma(), 0);
    enum Outcome {
        Hit(FourVector),
        Node,
        Escaped,
    }
    let outcomes: Vec<Outcome> = samples
        .par_iter()
        .map(|x| match integrate_trajectory(psi, &Configuration::single(*x), controls, Some(&rule)) {
            Ok(t) => match t.termination {
                Termination::ReachedSurface { event, .. } => Outcome::Hit(event.point),
                Termination::NodeEncountered { .. } => Outcome::Node,
                _ => Outcome::Escaped,
            },
            Err(Error::NodeEncountered { .. }) => Outcome::Node,
            Err(_) => Outcome::Escaped,
        })
        .collect();

    let mut result = EnsembleResult {
        n: samples.len(),
        seed,
        patch: *patch,
        crossings: Vec::new(),
        histogram: vec![0; patch.cell_count()],
        outside_patch: 0,
        escaped: 0,
        node_terminated: 0,
    };
    for (sample, o) in outcomes.into_iter().enumerate() {
        match o {
            Outcome::Hit(point) => {
                let coords = patch.sigma().coordinates(&point);
                let cell = patch.locate_coords(coords);
                match cell {
                    Some(c) => result.histogram[c] += 1,
                    None => result.outside_patch += 1,
                }
                result.crossings.push(Crossing { sample, point, coords, cell });
            }
            Outcome::Node => result.node_terminated += 1,
            Outcome::Escaped => result.escaped += 1,
        }
    }
    result
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CellComparison {
    pub cell: usize,
    pub center: [f64; 3],
    pub label: CellLabel,
    pub predicted_rho: f64,
    /// `ρ·V/∫ρ`.
    pub predicted_frequency: f64,
    pub observed: u64,
    /// Observed count over crossings inside the patch.
    pub frequency: f64,
    /// `(frequency − predicted)/predicted`, `None` where nothing is predicted.
    pub relative_deviation: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ChiSquare {
    pub statistic: f64,
    pub dof: usize,
    pub p_value: f64,
    pub cells_used: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ComparisonReport {
    pub n: usize,
    pub seed: u64,
    pub in_patch: usize,
    pub outside_patch: usize,
    pub escaped: usize,
    pub node_terminated: usize,
    pub hits_prime: usize,
    pub hits_plus: usize,
    pub hits_minus: usize,
    pub hits_unresolved: usize,
    /// Σ⁺ ∪ Σ⁻ hits in cells not bordering another label.
    pub forbidden_outside_buffer: usize,
    /// Largest `|frequency − predicted|` over Σ′ cells.
    pub sup_deviation: f64,
    pub chi_square: Option<ChiSquare>,
    pub min_expected: f64,
    pub buffer_cells: usize,
    pub cells: Vec<CellComparison>,
}

impl ComparisonReport {
    pub fn forbidden_hits(&self) -> usize {
        self.hits_plus + self.hits_minus
    }
}

pub fn compare_to_prediction(result: &EnsembleResult, part: &SurfacePartition) -> Result<ComparisonReport> {
    if result.patch != part.patch {
        return Err(Error::PatchMismatch);
    }
    let patch = &part.patch;
    let m = measurable_distribution(part, 1.0)?;
    let in_patch: u64 = result.histogram.iter().sum();
    let vol = patch.cell_volume();
    let mut report = ComparisonReport {
        n: result.n,
        seed: result.seed,
        in_patch: in_patch as usize,
        outside_patch: result.outside_patch,
        escaped: result.escaped,
        node_terminated: result.node_terminated,
        hits_prime: 0,
        hits_plus: 0,
        hits_minus: 0,
        hits_unresolved: 0,
        forbidden_outside_buffer: 0,
        sup_deviation: 0.0,
        chi_square: None,
        min_expected: MIN_EXPECTED,
        buffer_cells: 1,
        cells: Vec::with_capacity(patch.cell_count()),
    };
    for (cell, (&observed, &label)) in result.histogram.iter().zip(&part.labels).enumerate() {
        let count = observed as usize;
        match label {
            CellLabel::SigmaPrime => report.hits_prime += count,
            CellLabel::SigmaPlus => report.hits_plus += count,
            CellLabel::SigmaMinus => report.hits_minus += count,
            CellLabel::Unresolved => report.hits_unresolved += count,
        }
        if matches!(label, CellLabel::SigmaPlus | CellLabel::SigmaMinus) && !part.is_edge_cell(cell) {
            report.forbidden_outside_buffer += count;
        }
        let predicted = if m.integral > 0.0 { m.rho[cell] * vol / m.integral } else { 0.0 };
        let frequency = if in_patch > 0 { observed as f64 / in_patch as f64 } else { 0.0 };
        if label == CellLabel::SigmaPrime {
            report.sup_deviation = report.sup_deviation.max((frequency - predicted).abs());
        }
        report.cells.push(CellComparison {
            cell,
            center: patch.cell_center_coords(cell),
            label,
            predicted_rho: m.rho[cell],
            predicted_frequency: predicted,
            observed,
            frequency,
            relative_deviation: (predicted > 0.0).then(|| (frequency - predicted) / predicted),
        });
    }

    // Restricted to well-populated Σ′ cells, with expectations rescaled to
    // the counts those cells actually received.
    let used: Vec<&CellComparison> = report
        .cells
        .iter()
        .filter(|c| c.label == CellLabel::SigmaPrime && c.predicted_frequency * in_patch as f64 >= MIN_EXPECTED)
        .collect();
    if used.len() >= 2 {
        let n_used: f64 = used.iter().map(|c| c.observed as f64).sum();
        let p_used: f64 = used.iter().map(|c| c.predicted_frequency).sum();
        let statistic: f64 = used
            .iter()
            .map(|c| {
                let e = n_used * c.predicted_frequency / p_used;
                (c.observed as f64 - e).powi(2) / e
            })
            .sum();
        let dof = used.len() - 1;
        let p_value = ChiSquared::new(dof as f64).map(|d| 1.0 - d.cdf(statistic)).unwrap_or(f64::NAN);
        report.chi_square = Some(ChiSquare { statistic, dof, p_value, cells_used: used.len() });
    }
    Ok(report)
}

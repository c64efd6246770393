//! The four commands behind the `kg-bohm` binary. Each takes a validated
//! scenario and an output directory, writes its files, and returns what it
//! computed so tests can inspect results without reparsing output.

use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::config::Scenario;
use crate::dynamics::{integrate_trajectory, Controls, CrossingEvent, StopRule, Termination, Trajectory};
use crate::ensemble::{compare_to_prediction, normalize_on_surface, propagate_ensemble, sample_initial, surface_flux, ComparisonReport};
use crate::error::{Error, Result};
use crate::output::{ensure_dir, real, write_json, CsvTable, Manifest};
use crate::spacetime::{causal_class, FourVector};
use crate::surface::{
    classify_patch, measurable_distribution, partner_return_error, surface_density_with, CellLabel, FluxSummary,
    SurfacePartition, SurfacePatch,
};
use crate::verify::{
    run_covariance_suite, run_factorization_suite, run_identity_suite, run_nonrelativistic_limit_suite,
    run_superluminal_census, run_trajectory_suite, CheckReport, Tolerance,
};
use crate::wavefunction::WaveFunction;

pub const EXIT_OK: i32 = 0;
pub const EXIT_CHECK_FAILED: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_START_NODE: i32 = 3;
pub const EXIT_INITIAL_DENSITY: i32 = 4;
pub const EXIT_UNRESOLVED: i32 = 5;

/// Process exit status for an error that aborted a command.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Config(_)
        | Error::NotSingleParticle(_)
        | Error::BadPatch(_)
        | Error::SurfacesOutOfOrder
        | Error::PatchMismatch => EXIT_CONFIG,
        Error::NodeEncountered { .. } => EXIT_START_NODE,
        Error::InitialDensityNegative { .. } => EXIT_INITIAL_DENSITY,
        Error::TooManyUnresolved { .. } => EXIT_UNRESOLVED,
        _ => EXIT_CHECK_FAILED,
    }
}

/// User-facing message; the scope guard on classification gets a fixed
/// wording.
pub fn describe(err: &Error) -> String {
    match err {
        Error::NotSingleParticle(n) => format!("classification is single-particle (scenario has n = {n})"),
        other => other.to_string(),
    }
}

fn single_particle(psi: &WaveFunction) -> Result<()> {
    if psi.n() != 1 {
        return Err(Error::NotSingleParticle(psi.n()));
    }
    Ok(())
}

fn patches(sc: &Scenario) -> Result<(SurfacePatch, SurfacePatch)> {
    match (sc.patch0, sc.patch) {
        (Some(p0), Some(p)) => Ok((p0, p)),
        _ => Err(Error::Config("this command needs `surfaces` and `patches` sections".into())),
    }
}

fn velocity_class_tag(v: &FourVector) -> char {
    causal_class(v, 1e-12 * v.euclidean_norm().powi(2)).tag()
}

#[derive(Clone, Debug, Serialize)]
pub struct TrajectorySummary {
    pub file: String,
    pub start: Vec<FourVector>,
    pub termination: Termination,
    pub s_end: f64,
    pub samples: usize,
    /// Crossing of the measurement surface, when the run stopped there.
    pub crossing: Option<CrossingEvent>,
}

/// One CSV per start configuration plus a manifest.
pub fn cmd_simulate(sc: &Scenario, out: &Path) -> Result<Vec<TrajectorySummary>> {
    if sc.starts.is_empty() {
        return Err(Error::Config("`simulate.starts`: no start configurations given".into()));
    }
    ensure_dir(out)?;
    let n = sc.psi.n();
    let stop = match (sc.config.simulate.stop_at_measurement, sc.sigma) {
        (true, Some(sigma)) => Some(StopRule::surface(sigma, 0)),
        (true, None) => return Err(Error::Config("`simulate.stop_at_measurement` needs `surfaces`".into())),
        _ => None,
    };
    let mut header = vec!["s".to_string()];
    for a in 1..=n {
        header.extend(["t", "x", "y", "z"].iter().map(|c| format!("{c}_{a}")));
    }
    header.extend((1..=n).map(|a| format!("vclass_{a}")));

    let mut files = Vec::new();
    let mut summaries = Vec::new();
    for (k, start) in sc.starts.iter().enumerate() {
        let traj = integrate_trajectory(&sc.psi, start, &sc.controls, stop.as_ref())?;
        if let Termination::NodeEncountered { s, density } = traj.termination {
            if s == traj.samples[0].s {
                return Err(Error::NodeEncountered { density, threshold: sc.controls.node_threshold_for(&sc.psi) });
            }
        }
        let path = out.join(format!("trajectory_{k:03}.csv"));
        trajectory_table(&traj, &header).write(&path)?;
        summaries.push(TrajectorySummary {
            file: path.file_name().unwrap().to_string_lossy().into_owned(),
            start: start.points.clone(),
            s_end: traj.last().s,
            samples: traj.samples.len(),
            crossing: match &traj.termination {
                Termination::ReachedSurface { event, .. } => Some(event.clone()),
                _ => None,
            },
            termination: traj.termination,
        });
        files.push(path);
    }
    let manifest = out.join("manifest.json");
    files.push(manifest.clone());
    write_json(&manifest, &Manifest::new("simulate", &sc.config, &files, &summaries))?;
    Ok(summaries)
}

fn trajectory_table(traj: &Trajectory, header: &[String]) -> CsvTable {
    let mut t = CsvTable::new(header);
    for p in &traj.samples {
        let mut row = vec![real(p.s)];
        for x in &p.cfg {
            row.extend(x.0.iter().map(|c| real(*c)));
        }
        row.extend(p.velocities.iter().map(|v| velocity_class_tag(v).to_string()));
        t.push(row);
    }
    t
}

#[derive(Clone, Debug, Serialize)]
pub struct PairingSummary {
    pub minus_cell: usize,
    pub minus_point: FourVector,
    pub plus_point: FourVector,
    pub plus_cell: Option<usize>,
}

#[derive(Clone, Debug, Serialize)]
pub struct PartitionSummary {
    pub scenario: String,
    pub patch: SurfacePatch,
    pub cells: usize,
    pub sigma_prime_cells: usize,
    pub sigma_plus_cells: usize,
    pub sigma_minus_cells: usize,
    pub unresolved_cells: usize,
    pub failed_connectors: usize,
    pub flux: FluxSummary,
    /// `∫_{Σ⁺} j + ∫_{Σ⁻} j`.
    pub flux_balance: f64,
    /// Flux of `j` through the initial window.
    pub initial_flux: f64,
    pub tol_j: f64,
    pub pairings: Vec<PairingSummary>,
}

fn summarize(sc: &Scenario, part: &SurfacePartition, initial_flux: f64) -> PartitionSummary {
    PartitionSummary {
        scenario: sc.config.name.clone(),
        patch: part.patch,
        cells: part.labels.len(),
        sigma_prime_cells: part.count(CellLabel::SigmaPrime),
        sigma_plus_cells: part.count(CellLabel::SigmaPlus),
        sigma_minus_cells: part.count(CellLabel::SigmaMinus),
        unresolved_cells: part.count(CellLabel::Unresolved),
        failed_connectors: part.failed_connectors,
        flux: part.flux,
        flux_balance: part.flux.balance(),
        initial_flux,
        tol_j: part.tol_j,
        pairings: part
            .pairings
            .iter()
            .map(|p| PairingSummary {
                minus_cell: p.minus_cell,
                minus_point: p.minus_point,
                plus_point: p.plus_point,
                plus_cell: p.plus_cell,
            })
            .collect(),
    }
}

/// Partition of the measurement patch, written as a per-cell CSV, a JSON
/// summary and a finer density grid for plotting.
pub fn cmd_classify(sc: &Scenario, out: &Path) -> Result<(SurfacePartition, PartitionSummary)> {
    single_particle(&sc.psi)?;
    let (patch0, patch) = patches(sc)?;
    let part = classify_patch(&sc.psi, &patch, &patch0, &sc.controls)?;
    let thr = sc.controls.node_threshold_for(&sc.psi);
    let z = surface_flux(&sc.psi, &patch0, thr)?;
    let summary = summarize(sc, &part, z);

    ensure_dir(out)?;
    let rho = measurable_distribution(&part, 1.0)?.rho;
    let mut cells = CsvTable::new(&["cell", "i", "j", "k", "u1", "u2", "u3", "density", "label", "rho"]);
    for idx in 0..patch.cell_count() {
        let ijk = patch.unravel(idx);
        let u = patch.cell_center_coords(idx);
        let mut row = vec![idx.to_string(), ijk[0].to_string(), ijk[1].to_string(), ijk[2].to_string()];
        row.extend(u.iter().map(|c| real(*c)));
        row.extend([real(part.density[idx]), part.labels[idx].tag().to_string(), real(rho[idx])]);
        cells.push(row);
    }
    let grid = density_grid(&sc.psi, &part, thr, 4)?;
    let files = [out.join("partition.csv"), out.join("partition.json"), out.join("density_grid.csv"), out.join("manifest.json")];
    cells.write(&files[0])?;
    write_json(&files[1], &summary)?;
    grid.write(&files[2])?;
    write_json(&files[3], &Manifest::new("classify", &sc.config, &files, &summary))?;
    Ok((part, summary))
}

/// `j·n` on a grid `refine` times finer than the patch cells (cell-center
/// sampling), scan lines separated by blank lines.
fn density_grid(psi: &WaveFunction, part: &SurfacePartition, thr: f64, refine: usize) -> Result<CsvTable> {
    let fine = part.patch.refined(refine)?;
    let sigma = *fine.sigma();
    let mut t = CsvTable::new(&["u1", "u2", "u3", "density", "label"]);
    let g = fine.grid();
    for k in 0..g[2] {
        for j in 0..g[1] {
            for i in 0..g[0] {
                let idx = fine.ravel([i, j, k]);
                let u = fine.cell_center_coords(idx);
                let d = surface_density_with(psi, &sigma, &fine.cell_center(idx), thr)?;
                let label = part.patch.locate_coords(u).map_or("outside", |c| part.labels[c].tag());
                let mut row: Vec<String> = u.iter().map(|c| real(*c)).collect();
                row.extend([real(d), label.to_string()]);
                t.push(row);
            }
            if g[1] > 1 {
                t.push_blank();
            }
        }
    }
    Ok(t)
}

/// Samples the initial window, follows every sample to the measurement
/// surface and compares the histogram to the predicted distribution.
/// `histogram.csv`, `crossings.csv` and `comparison.json` depend only on
/// the scenario and seed; the manifest adds the timestamp.
pub fn cmd_ensemble(sc: &Scenario, out: &Path, seed_override: Option<u64>) -> Result<ComparisonReport> {
    single_particle(&sc.psi)?;
    let (patch0, patch) = patches(sc)?;
    let spec = sc.config.ensemble.as_ref().ok_or_else(|| Error::Config("this command needs an `ensemble` section".into()))?;
    let seed = seed_override.unwrap_or(spec.seed);

    let part = classify_patch(&sc.psi, &patch, &patch0, &sc.controls)?;
    let predicted = measurable_distribution(&part, spec.max_unresolved_fraction)?;
    let thr = sc.controls.node_threshold_for(&sc.psi);
    let dist = normalize_on_surface(&sc.psi, &patch0, thr)?;
    let samples = sample_initial(&dist, spec.n, seed, spec.initial)?;
    let result = propagate_ensemble(&sc.psi, &samples, &patch, &sc.controls, seed);
    let report = compare_to_prediction(&result, &part)?;

    ensure_dir(out)?;
    let mut hist = CsvTable::new(&[
        "cell",
        "u1",
        "u2",
        "u3",
        "label",
        "predicted_rho",
        "predicted_frequency",
        "count",
        "frequency",
        "relative_deviation",
    ]);
    for c in &report.cells {
        let mut row = vec![c.cell.to_string()];
        row.extend(c.center.iter().map(|x| real(*x)));
        row.extend([
            c.label.tag().to_string(),
            real(c.predicted_rho),
            real(c.predicted_frequency),
            c.observed.to_string(),
            real(c.frequency),
            c.relative_deviation.map_or_else(String::new, real),
        ]);
        hist.push(row);
    }
    let mut cross = CsvTable::new(&["sample", "t", "x", "y", "z", "u1", "u2", "u3", "cell"]);
    for c in &result.crossings {
        let mut row = vec![c.sample.to_string()];
        row.extend(c.point.0.iter().map(|x| real(*x)));
        row.extend(c.coords.iter().map(|x| real(*x)));
        row.push(c.cell.map_or_else(String::new, |k| k.to_string()));
        cross.push(row);
    }
    #[derive(Serialize)]
    struct Results<'a> {
        seed: u64,
        initial_flux: f64,
        predicted_integral: f64,
        tail_flag: bool,
        in_patch: usize,
        forbidden_hits: usize,
        forbidden_outside_buffer: usize,
        chi_square: &'a Option<crate::ensemble::ChiSquare>,
    }
    let files = [out.join("histogram.csv"), out.join("crossings.csv"), out.join("comparison.json"), out.join("manifest.json")];
    hist.write(&files[0])?;
    cross.write(&files[1])?;
    write_json(&files[2], &report)?;
    let results = Results {
        seed,
        initial_flux: dist.z,
        predicted_integral: predicted.integral,
        tail_flag: dist.tail_flag,
        in_patch: report.in_patch,
        forbidden_hits: report.forbidden_hits(),
        forbidden_outside_buffer: report.forbidden_outside_buffer,
        chi_square: &report.chi_square,
    };
    write_json(&files[3], &Manifest::new("ensemble", &sc.config, &files, results))?;
    Ok(report)
}

/// Every check that applies to the scenario: differential identities
/// always; trajectory, covariance and causal-census checks when start
/// points are given; the nonrelativistic fit, factorization, negative
/// density and partition flux checks when their inputs are configured.
pub fn run_scenario_checks(sc: &Scenario, seed_override: Option<u64>) -> Result<Vec<CheckReport>> {
    let v = &sc.config.verify;
    let name = sc.config.name.as_str();
    let seed = seed_override.unwrap_or(v.seed);
    let psi = &sc.psi;
    let mut out = run_identity_suite(psi, name, v.points, seed, v.scale)?;

    let tight = Controls { rtol: v.rtol, atol: v.atol, s_max: v.s_max, ..sc.controls };
    if !sc.starts.is_empty() {
        out.extend(run_trajectory_suite(psi, name, &sc.starts, &Controls { s_max: sc.controls.s_max, ..tight })?);
        if !v.betas.is_empty() {
            out.extend(run_covariance_suite(psi, name, &v.betas, &sc.starts, &tight, seed)?);
        }
        let census_controls = Controls { max_step: sc.controls.max_step.min(0.01), ..sc.controls };
        out.push(run_superluminal_census(psi, name, &sc.starts, &census_controls)?);
    }

    if !v.epsilons.is_empty() {
        let wave = &sc.config.wavefunction;
        let eps0 = wave.characteristic_momentum() / wave.mass;
        let packet = |eps: f64| wave.scaled(eps / eps0).build("wavefunction");
        out.extend(run_nonrelativistic_limit_suite(packet, name, &v.epsilons, v.points, seed)?);
    }

    if let (Some(factor), 2) = (&v.factor, psi.n()) {
        let phi = factor.build("verify.factor")?;
        out.extend(run_factorization_suite(&phi, &phi, psi, name, &sc.starts, &tight, v.points, seed)?);
    }

    if let (Some(limit), Some(patch)) = (v.negative_density_below, sc.patch) {
        let start = std::time::Instant::now();
        let thr = sc.controls.node_threshold_for(psi);
        let mut lowest = f64::INFINITY;
        for idx in 0..patch.cell_count() {
            lowest = lowest.min(surface_density_with(psi, patch.sigma(), &patch.cell_center(idx), thr)?);
        }
        let mut r = CheckReport::new("negative_density", name, vec![lowest], Tolerance::AtMost { value: limit })
            .with_note("smallest j·n at cell centers of the measurement patch");
        r.runtime_s = start.elapsed().as_secs_f64();
        out.push(r);
    }

    if let (Some(patch0), Some(patch), 1) = (sc.patch0, sc.patch, psi.n()) {
        out.extend(partition_checks(sc, &patch0, &patch, name)?);
    }
    Ok(out)
}

/// Flux balance `|∫_{Σ⁺} j + ∫_{Σ⁻} j| ≤ 10⁻³ Z` on the configured grid,
/// its reduction under 2× refinement, and partner round trips.
pub fn partition_checks(sc: &Scenario, patch0: &SurfacePatch, patch: &SurfacePatch, name: &str) -> Result<Vec<CheckReport>> {
    let start = std::time::Instant::now();
    let thr = sc.controls.node_threshold_for(&sc.psi);
    let z = surface_flux(&sc.psi, patch0, thr)?;
    let coarse = classify_patch(&sc.psi, patch, patch0, &sc.controls)?;
    let fine = classify_patch(&sc.psi, &patch.refined(2)?, patch0, &sc.controls)?;
    let (d1, d2) = (coarse.flux.balance().abs(), fine.flux.balance().abs());
    let mut out = Vec::new();
    let mut r = CheckReport::new("flux_balance", name, vec![d1 / z, d1, d2, z], Tolerance::AtMost { value: 1e-3 })
        .with_note("[|balance|/Z, |balance| on the grid, on the 2× grid, Z]");
    r.runtime_s = start.elapsed().as_secs_f64();
    out.push(r);
    // a balance already at rounding level cannot shrink further
    out.push(if d1 <= 1e-12 * z {
        CheckReport::new("flux_balance_refinement", name, vec![f64::NAN, d1, d2], Tolerance::Report)
            .with_note("no Σ⁺/Σ⁻ flux to refine")
    } else {
        CheckReport::new("flux_balance_refinement", name, vec![d1 / d2, d1, d2], Tolerance::Above { value: 2.0 })
            .with_note("defect reduction factor under 2× refinement")
    });
    out.push(
        CheckReport::new("partner_return", name, vec![partner_return_error(&sc.psi, &coarse, &sc.controls)?], Tolerance::AtMost {
            value: 1.0,
        })
        .with_note("largest Σ⁺ → Σ⁻ return distance, in cell widths"),
    );
    Ok(out)
}

/// Runs every applicable check and writes `verify_report.json`. The
/// returned flag is true iff every check passed.
pub fn cmd_verify(sc: &Scenario, out: &Path, seed_override: Option<u64>) -> Result<(Vec<CheckReport>, bool)> {
    let reports = run_scenario_checks(sc, seed_override)?;
    let ok = reports.iter().all(|r| r.pass);
    ensure_dir(out)?;
    let files: [PathBuf; 2] = [out.join("verify_report.json"), out.join("manifest.json")];
    write_json(&files[0], &reports)?;
    #[derive(Serialize)]
    struct Results {
        checks: usize,
        failed: Vec<String>,
    }
    let failed = reports.iter().filter(|r| !r.pass).map(|r| r.name.clone()).collect();
    write_json(&files[1], &Manifest::new("verify", &sc.config, &files, Results { checks: reports.len(), failed }))?;
    Ok((reports, ok))
}

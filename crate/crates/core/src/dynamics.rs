//! Bohmian kinematics: per-particle currents, polar decomposition, quantum
//! potential and trajectory integration in one shared affine parameter `s`.
//!
//! All particles are advanced together as one curve in the `4n`-dimensional
//! configuration space; entangled states admit no other parametrization.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::integrator::{DenseSegment, StepControl, StepError, Stepper};
use crate::spacetime::{causal_class, minkowski_dot, CausalClass, FourVector, Hypersurface, LorentzTransform, METRIC};
use crate::wavefunction::{metric_at, Configuration, WaveFunction};

/// Right-hand side of the trajectory equation.
///
/// `CurrentForm` (`j/(2mψ*ψ)`) and `PhaseGradientForm` (`−∂S/m`) are the
/// same vector field. `RawCurrent` (`j` itself) has the same integral curves
/// but a different parametrization, so it does not satisfy
/// `m d²x/ds² = ∂Q` pointwise.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum VelocityLaw {
    #[default]
    CurrentForm,
    PhaseGradientForm,
    RawCurrent,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Controls {
    pub rtol: f64,
    pub atol: f64,
    pub max_step: f64,
    pub min_step: f64,
    pub s_max: f64,
    pub law: VelocityLaw,
    /// Node threshold on `|ψ|²`; `None` uses the wave function's default.
    pub node_threshold: Option<f64>,
    /// Integrate along the negated field (backward along the curve).
    pub reverse: bool,
    pub max_steps: usize,
}

impl Default for Controls {
    fn default() -> Self {
        Controls {
            rtol: 1e-9,
            atol: 1e-12,
            max_step: 0.1,
            min_step: 1e-12,
            s_max: 10.0,
            law: VelocityLaw::CurrentForm,
            node_threshold: None,
            reverse: false,
            max_steps: 2_000_000,
        }
    }
}

impl Controls {
    pub fn node_threshold_for(&self, psi: &WaveFunction) -> f64 {
        self.node_threshold.unwrap_or_else(|| psi.default_node_threshold())
    }
}

/// Current `j_a^μ`, `|ψ|²` and phase gradient `∂_a^μ S` at one configuration.
#[derive(Clone, Debug, PartialEq)]
pub struct FieldSample {
    pub psi: Complex64,
    pub density: f64,
    pub currents: Vec<FourVector>,
}

/// Evaluates `ψ` and every particle's current in one pass.
pub fn field_sample(psi: &WaveFunction, cfg: &Configuration) -> Result<FieldSample> {
    let (v, grads) = psi.value_and_gradients(cfg)?;
    let vc = v.conj();
    let currents = grads
        .iter()
        .map(|g| FourVector(std::array::from_fn(|mu| -2.0 * (vc * g[mu]).im)))
        .collect();
    Ok(FieldSample { psi: v, density: v.norm_sqr(), currents })
}

/// `j_a^μ = i(ψ*∂_a^μψ − ψ∂_a^μψ*)`, real.
pub fn current(psi: &WaveFunction, cfg: &Configuration, a: usize) -> Result<FourVector> {
    let g = psi.gradient(cfg, a)?;
    let v = psi.evaluate(cfg)?;
    let vc = v.conj();
    Ok(FourVector(std::array::from_fn(|mu| {
        // i(z − z*) = −2 Im z with z = ψ*∂ψ
        -2.0 * (vc * g[mu]).im
    })))
}

fn check_node(density: f64, threshold: f64) -> Result<()> {
    if density <= threshold {
        Err(Error::NodeEncountered { density, threshold })
    } else {
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Polar {
    pub r: f64,
    /// Contravariant `∂_a^μ S` per particle.
    pub grad_s: Vec<FourVector>,
}

/// `ψ = R e^{iS}` with `∂_a^μS = Im(∂_a^μψ/ψ)`.
pub fn polar(psi: &WaveFunction, cfg: &Configuration, node_threshold: f64) -> Result<Polar> {
    let (v, grads) = psi.value_and_gradients(cfg)?;
    check_node(v.norm_sqr(), node_threshold)?;
    let grad_s = grads
        .iter()
        .map(|g| FourVector(std::array::from_fn(|mu| (g[mu] / v).im)))
        .collect();
    Ok(Polar { r: v.norm(), grad_s })
}

/// `Q = (1/2m) Σ_a ∂_a^μ∂_{aμ}R / R`.
pub fn quantum_potential(psi: &WaveFunction, cfg: &Configuration, node_threshold: f64) -> Result<f64> {
    let (v, grads) = psi.value_and_gradients(cfg)?;
    let rho = v.norm_sqr();
    check_node(rho, node_threshold)?;
    let r = rho.sqrt();
    let vc = v.conj();
    let mut sum = 0.0;
    for (a, g) in grads.iter().enumerate() {
        let box_psi = psi.dalembertian(cfg, a)?;
        let mut grad_sq = 0.0;
        let mut dr_sq = 0.0;
        for mu in 0..4 {
            grad_sq += METRIC[mu] * g[mu].norm_sqr();
            let dr = (vc * g[mu]).re / r;
            dr_sq += METRIC[mu] * dr * dr;
        }
        // R □R = Re(∂ψ*·∂ψ) + Re(ψ*□ψ) − ∂R·∂R
        let r_box_r = grad_sq + (vc * box_psi).re - dr_sq;
        sum += r_box_r / rho;
    }
    Ok(sum / (2.0 * psi.mass()))
}

/// Contravariant gradient `∂_b^ν Q` for every particle `b`, from third
/// derivatives of ψ (no differencing).
pub fn quantum_potential_gradient(
    psi: &WaveFunction,
    cfg: &Configuration,
    node_threshold: f64,
) -> Result<Vec<FourVector>> {
    let jet = psi.jet3(cfg)?;
    let rho = jet.value.norm_sqr();
    check_node(rho, node_threshold)?;
    let dim = jet.dim;
    let n = dim / 4;
    let v = jet.value;
    let vc = v.conj();
    // derivatives of ρ = ψ*ψ, all contravariant
    let r1: Vec<f64> = (0..dim).map(|i| 2.0 * (vc * jet.d1[i]).re).collect();
    let r2 = |i: usize, j: usize| 2.0 * (jet.d1[i].conj() * jet.d1[j] + vc * jet.d2(i, j)).re;
    let r3 = |i: usize, j: usize, k: usize| {
        2.0 * (jet.d2(i, k).conj() * jet.d1[j]
            + jet.d1[i].conj() * jet.d2(j, k)
            + jet.d1[k].conj() * jet.d2(i, j)
            + vc * jet.d3(i, j, k))
            .re
    };
    let mut out = vec![FourVector::ZERO; n];
    for k in 0..dim {
        let rk = r1[k];
        let mut total = 0.0;
        for a in 0..n {
            let mut box_rho = 0.0;
            let mut d_box_rho = 0.0;
            let mut grad_sq = 0.0;
            let mut d_grad_sq = 0.0;
            for mu in 0..4 {
                let i = 4 * a + mu;
                let g = metric_at(i);
                box_rho += g * r2(i, i);
                d_box_rho += g * r3(i, i, k);
                grad_sq += g * r1[i] * r1[i];
                d_grad_sq += 2.0 * g * r1[i] * r2(i, k);
            }
            // F_a = □ρ/(2ρ) − (∂ρ·∂ρ)/(4ρ²)
            total += d_box_rho / (2.0 * rho) - box_rho * rk / (2.0 * rho * rho) - d_grad_sq / (4.0 * rho * rho)
                + grad_sq * 2.0 * rk / (4.0 * rho * rho * rho);
        }
        out[k / 4].0[k % 4] = total / (2.0 * psi.mass());
    }
    Ok(out)
}

/// Per-particle velocities `dx_a/ds` under `law`.
pub fn velocity_field(
    psi: &WaveFunction,
    cfg: &Configuration,
    law: VelocityLaw,
    node_threshold: f64,
) -> Result<Vec<FourVector>> {
    let m = psi.mass();
    match law {
        VelocityLaw::PhaseGradientForm => {
            let p = polar(psi, cfg, node_threshold)?;
            Ok(p.grad_s.iter().map(|ds| ds.scale(-1.0 / m)).collect())
        }
        VelocityLaw::CurrentForm => {
            let fs = field_sample(psi, cfg)?;
            check_node(fs.density, node_threshold)?;
            Ok(fs.currents.iter().map(|j| j.scale(1.0 / (2.0 * m * fs.density))).collect())
        }
        VelocityLaw::RawCurrent => {
            let fs = field_sample(psi, cfg)?;
            check_node(fs.density, node_threshold)?;
            Ok(fs.currents)
        }
    }
}

/// `Σ_a ∂_a^μ S ∂_{aμ} S / 2m − nm/2 − Q` with the sign chosen so that
/// the quantum Hamilton-Jacobi equation reads `residual = 0`.
pub fn hamilton_jacobi_residual(psi: &WaveFunction, cfg: &Configuration, node_threshold: f64) -> Result<f64> {
    let p = polar(psi, cfg, node_threshold)?;
    let q = quantum_potential(psi, cfg, node_threshold)?;
    let m = psi.mass();
    let kinetic: f64 = p.grad_s.iter().map(|g| g.norm_sqr()).sum::<f64>() / (2.0 * m);
    Ok(-kinetic + psi.n() as f64 * m / 2.0 + q)
}

/// Central-difference divergence `∂_{aμ} j_a^μ` with spacing `h`.
pub fn conservation_residual(
    psi: &WaveFunction,
    cfg: &Configuration,
    a: usize,
    h: f64,
    node_threshold: f64,
) -> Result<f64> {
    if a >= psi.n() {
        return Err(Error::IndexOutOfRange { index: a, n: psi.n() });
    }
    let mut div = 0.0;
    for mu in 0..4 {
        let mut plus = cfg.clone();
        plus.points[a].0[mu] += h;
        let mut minus = cfg.clone();
        minus.points[a].0[mu] -= h;
        let fp = field_sample(psi, &plus)?;
        let fm = field_sample(psi, &minus)?;
        check_node(fp.density, node_threshold)?;
        check_node(fm.density, node_threshold)?;
        div += (fp.currents[a][mu] - fm.currents[a][mu]) / (2.0 * h);
    }
    Ok(div)
}

/// Central-difference `Σ_a ∂_a^μ(R² ∂_{aμ}S)`, built from the polar
/// decomposition rather than the current.
pub fn continuity_residual(psi: &WaveFunction, cfg: &Configuration, h: f64, node_threshold: f64) -> Result<f64> {
    let mut div = 0.0;
    for a in 0..psi.n() {
        for mu in 0..4 {
            let flux = |delta: f64| -> Result<f64> {
                let mut x = cfg.clone();
                x.points[a].0[mu] += delta;
                let p = polar(psi, &x, node_threshold)?;
                Ok(p.r * p.r * p.grad_s[a][mu])
            };
            div += (flux(h)? - flux(-h)?) / (2.0 * h);
        }
    }
    Ok(div)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryPoint {
    pub s: f64,
    pub cfg: Vec<FourVector>,
    pub velocities: Vec<FourVector>,
}

impl TrajectoryPoint {
    pub fn configuration(&self) -> Configuration {
        Configuration::new(self.cfg.clone())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CrossingEvent {
    pub s: f64,
    /// Crossing particle's position on the surface.
    pub point: FourVector,
    pub cfg: Vec<FourVector>,
    /// Sign of `j_a·n` at the crossing.
    pub direction: i8,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Termination {
    /// Stopped on surface `surface` (index into the stop rule's list).
    ReachedSurface { surface: usize, event: CrossingEvent },
    ReachedSMax,
    NodeEncountered { s: f64, density: f64 },
    StepUnderflow { s: f64 },
    LeftRegion { s: f64 },
    StepLimit { s: f64 },
}

impl Termination {
    pub fn label(&self) -> &'static str {
        match self {
            Termination::ReachedSurface { .. } => "ReachedSurface",
            Termination::ReachedSMax => "ReachedSMax",
            Termination::NodeEncountered { .. } => "NodeEncountered",
            Termination::StepUnderflow { .. } => "StepUnderflow",
            Termination::LeftRegion { .. } => "LeftRegion",
            Termination::StepLimit { .. } => "StepLimit",
        }
    }
}

/// Axis-aligned box in the adapted spatial coordinates of `frame`; use
/// infinite bounds to leave an axis unconstrained.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Region {
    pub frame: Hypersurface,
    pub lo: [f64; 3],
    pub hi: [f64; 3],
}

impl Region {
    pub fn contains(&self, x: &FourVector) -> bool {
        let u = self.frame.coordinates(x);
        (0..3).all(|i| u[i] >= self.lo[i] && u[i] <= self.hi[i])
    }
}

/// Stop at the first crossing of any of `surfaces` by `particle`, or when
/// that particle leaves `region`.
#[derive(Clone, Debug, PartialEq)]
pub struct StopRule {
    pub particle: usize,
    pub surfaces: Vec<Hypersurface>,
    pub region: Option<Region>,
}

impl StopRule {
    pub fn surface(sigma: Hypersurface, particle: usize) -> Self {
        StopRule { particle, surfaces: vec![sigma], region: None }
    }
}

/// Distances closer than this count as lying on the surface.
pub const SURFACE_TOL: f64 = 1e-10;

#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub samples: Vec<TrajectoryPoint>,
    pub termination: Termination,
    /// `segments[i]` interpolates between `samples[i]` and `samples[i + 1]`.
    pub segments: Vec<DenseSegment>,
}

impl Trajectory {
    pub fn last(&self) -> &TrajectoryPoint {
        self.samples.last().expect("trajectory has at least its start point")
    }

    /// Interpolated configuration at parameter `s` within the sampled range.
    pub fn position_at(&self, s: f64) -> Option<Configuration> {
        let first = self.samples.first()?;
        if s < first.s || s > self.last().s {
            return None;
        }
        if self.segments.is_empty() {
            return Some(first.configuration());
        }
        let idx = self.segments.partition_point(|seg| seg.s1() < s).min(self.segments.len() - 1);
        Some(Configuration::from_flat(&self.segments[idx].eval(s)))
    }

    /// Image under `Λ` applied to every particle position and velocity.
    pub fn transformed(&self, l: &LorentzTransform) -> Trajectory {
        let map_pts = |v: &[FourVector]| v.iter().map(|x| l.apply(x)).collect::<Vec<_>>();
        Trajectory {
            samples: self
                .samples
                .iter()
                .map(|p| TrajectoryPoint { s: p.s, cfg: map_pts(&p.cfg), velocities: map_pts(&p.velocities) })
                .collect(),
            termination: self.termination.clone(),
            segments: self
                .segments
                .iter()
                .map(|seg| seg.map_blocks(|c| l.apply(&FourVector([c[0], c[1], c[2], c[3]])).0))
                .collect(),
        }
    }

    /// Causal class of each particle's velocity at every sample.
    pub fn velocity_classes(&self, tol: f64) -> Vec<Vec<CausalClass>> {
        self.samples.iter().map(|p| p.velocities.iter().map(|v| causal_class(v, tol)).collect()).collect()
    }
}

struct SurfaceWatch {
    last_sign: f64,
}

fn sign_of(d: f64) -> f64 {
    if d > SURFACE_TOL {
        1.0
    } else if d < -SURFACE_TOL {
        -1.0
    } else {
        0.0
    }
}

/// Integrates `dx_a/ds = v_a(x₁,…,xₙ)` with embedded RK4(5) from `cfg0`
/// until `controls.s_max`, a node, a step-size underflow or the first
/// crossing described by `stop`.
pub fn integrate_trajectory(
    psi: &WaveFunction,
    cfg0: &Configuration,
    controls: &Controls,
    stop: Option<&StopRule>,
) -> Result<Trajectory> {
    if cfg0.len() != psi.n() {
        return Err(Error::ArityMismatch { got: cfg0.len(), expected: psi.n() });
    }
    if let Some(rule) = stop {
        if rule.particle >= psi.n() {
            return Err(Error::IndexOutOfRange { index: rule.particle, n: psi.n() });
        }
    }
    let threshold = controls.node_threshold_for(psi);
    let law = controls.law;
    let sign = if controls.reverse { -1.0 } else { 1.0 };
    let rhs = |_s: f64, y: &[f64]| -> Result<Vec<f64>> {
        let cfg = Configuration::from_flat(y);
        let v = velocity_field(psi, &cfg, law, threshold)?;
        Ok(v.iter().flat_map(|x| x.0.map(|c| sign * c)).collect())
    };
    let ctl = StepControl {
        rtol: controls.rtol,
        atol: controls.atol,
        max_step: controls.max_step,
        min_step: controls.min_step,
    };
    let y0 = cfg0.to_flat();
    let to_velocities = |f: &[f64]| -> Vec<FourVector> {
        f.chunks_exact(4).map(|c| FourVector([sign * c[0], sign * c[1], sign * c[2], sign * c[3]])).collect()
    };
    let mut stepper = match Stepper::new(rhs, 0.0, y0.clone(), ctl) {
        Ok(s) => s,
        Err(Error::NodeEncountered { density, .. }) => {
            return Ok(Trajectory {
                samples: vec![TrajectoryPoint { s: 0.0, cfg: cfg0.points.clone(), velocities: vec![] }],
                termination: Termination::NodeEncountered { s: 0.0, density },
                segments: vec![],
            })
        }
        Err(e) => return Err(e),
    };
    let mut samples = vec![TrajectoryPoint { s: 0.0, cfg: cfg0.points.clone(), velocities: to_velocities(stepper.f()) }];
    let mut segments = Vec::new();
    let mut watches: Vec<SurfaceWatch> = stop
        .map(|r| {
            r.surfaces
                .iter()
                .map(|sig| SurfaceWatch { last_sign: sign_of(sig.signed_distance(&cfg0.points[r.particle])) })
                .collect()
        })
        .unwrap_or_default();

    let mut steps = 0usize;
    let termination = loop {
        if stepper.s() >= controls.s_max {
            break Termination::ReachedSMax;
        }
        if steps >= controls.max_steps {
            break Termination::StepLimit { s: stepper.s() };
        }
        steps += 1;
        let acc = match stepper.step(controls.s_max) {
            Ok(a) => a,
            Err(StepError::Rhs(Error::NodeEncountered { density, .. })) => {
                break Termination::NodeEncountered { s: stepper.s(), density }
            }
            Err(StepError::Rhs(e)) => return Err(e),
            Err(StepError::Underflow(s)) => break Termination::StepUnderflow { s },
        };

        if let Some(rule) = stop {
            let a = rule.particle;
            let x_new = FourVector(std::array::from_fn(|mu| acc.y[4 * a + mu]));
            let mut hit: Option<(usize, f64)> = None;
            for (k, (sig, watch)) in rule.surfaces.iter().zip(watches.iter_mut()).enumerate() {
                let sn = sign_of(sig.signed_distance(&x_new));
                if sn != 0.0 && watch.last_sign != 0.0 && sn != watch.last_sign {
                    let theta = refine_crossing(&acc.dense, sig, a, watch.last_sign);
                    if hit.map_or(true, |(_, t)| theta < t) {
                        hit = Some((k, theta));
                    }
                }
                if sn != 0.0 {
                    watch.last_sign = sn;
                }
            }
            if let Some((k, theta)) = hit {
                let s_star = acc.dense.s0 + theta * acc.dense.h;
                let y_star = acc.dense.eval_theta(theta);
                let cfg_star = Configuration::from_flat(&y_star);
                let fs = field_sample(psi, &cfg_star)?;
                let v = velocity_field(psi, &cfg_star, law, threshold)
                    .map(|v| v.iter().map(|x| x.scale(sign)).collect())
                    .unwrap_or_default();
                let n = rule.surfaces[k].normal();
                let jn = minkowski_dot(&fs.currents[a], &n);
                let event = CrossingEvent {
                    s: s_star,
                    point: cfg_star.points[a],
                    cfg: cfg_star.points.clone(),
                    direction: if jn >= 0.0 { 1 } else { -1 },
                };
                // the full-step polynomial stays; position_at clamps to the last sample
                segments.push(acc.dense);
                samples.push(TrajectoryPoint { s: s_star, cfg: cfg_star.points, velocities: v });
                break Termination::ReachedSurface { surface: k, event };
            }
            if let Some(region) = &rule.region {
                if !region.contains(&x_new) {
                    segments.push(acc.dense);
                    samples.push(TrajectoryPoint {
                        s: acc.s,
                        cfg: Configuration::from_flat(&acc.y).points,
                        velocities: to_velocities(&acc.f),
                    });
                    break Termination::LeftRegion { s: acc.s };
                }
            }
        }
        segments.push(acc.dense);
        samples.push(TrajectoryPoint {
            s: acc.s,
            cfg: Configuration::from_flat(&acc.y).points,
            velocities: to_velocities(&acc.f),
        });
    };
    Ok(Trajectory { samples, termination, segments })
}

/// Bisection on the dense output for the crossing inside one step.
pub(crate) fn refine_crossing(seg: &DenseSegment, sigma: &Hypersurface, a: usize, from_sign: f64) -> f64 {
    let dist = |theta: f64| {
        let y = seg.eval_theta(theta);
        sigma.signed_distance(&FourVector([y[4 * a], y[4 * a + 1], y[4 * a + 2], y[4 * a + 3]]))
    };
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    let mut mid = 1.0;
    for _ in 0..200 {
        mid = 0.5 * (lo + hi);
        let d = dist(mid);
        if d.abs() < SURFACE_TOL * 0.5 {
            break;
        }
        if d * from_sign > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-16 {
            break;
        }
    }
    mid
}

/// Three configurations at `s − Δs`, `s`, `s + Δs` around `center`,
/// obtained by short forward and backward integrations with steps no larger
/// than `Δs`.
pub fn uniform_triple(
    psi: &WaveFunction,
    center: &Configuration,
    ds: f64,
    controls: &Controls,
) -> Result<[TrajectoryPoint; 3]> {
    let threshold = controls.node_threshold_for(psi);
    let short = Controls { s_max: ds, max_step: ds, ..*controls };
    let fwd = integrate_trajectory(psi, center, &short, None)?;
    let bwd = integrate_trajectory(psi, center, &Controls { reverse: true, ..short }, None)?;
    for t in [&fwd, &bwd] {
        if let Termination::NodeEncountered { density, .. } = t.termination {
            return Err(Error::NodeEncountered { density, threshold });
        }
    }
    let point = |s: f64, cfg: Configuration| -> Result<TrajectoryPoint> {
        let velocities = velocity_field(psi, &cfg, controls.law, threshold)?;
        Ok(TrajectoryPoint { s, cfg: cfg.points, velocities })
    };
    Ok([
        point(-ds, bwd.last().configuration())?,
        point(0.0, center.clone())?,
        point(ds, fwd.last().configuration())?,
    ])
}

/// `m (x(s+Δs) − 2x(s) + x(s−Δs))/Δs² − ∂_a^μ Q(x(s))` per particle.
pub fn eom_residual(
    psi: &WaveFunction,
    triple: &[TrajectoryPoint; 3],
    node_threshold: f64,
) -> Result<Vec<FourVector>> {
    let [p0, p1, p2] = triple;
    let g1 = p1.s - p0.s;
    let g2 = p2.s - p1.s;
    if !(g1 > 0.0) || !(g2 > 0.0) || (g1 - g2).abs() > 0.01 * g1.max(g2) {
        return Err(Error::NonuniformSpacing(g1, g2));
    }
    let ds = 0.5 * (g1 + g2);
    let grad_q = quantum_potential_gradient(psi, &p1.configuration(), node_threshold)?;
    let m = psi.mass();
    Ok((0..psi.n())
        .map(|a| {
            FourVector(std::array::from_fn(|mu| {
                let acc = (p2.cfg[a][mu] - 2.0 * p1.cfg[a][mu] + p0.cfg[a][mu]) / (ds * ds);
                m * acc - grad_q[a][mu]
            }))
        })
        .collect())
}

/// Largest distance from any sample of `probe` to the curve traced by
/// `reference` (its dense output, searched near the closest samples).
/// Euclidean distance in the flattened `4n` coordinates.
pub fn curve_set_distance(reference: &Trajectory, probe: &Trajectory) -> f64 {
    probe
        .samples
        .iter()
        .map(|p| point_to_curve_distance(reference, &Configuration::new(p.cfg.clone()).to_flat()))
        .fold(0.0, f64::max)
}

pub fn point_to_curve_distance(curve: &Trajectory, y: &[f64]) -> f64 {
    let dist = |a: &[f64]| a.iter().zip(y).map(|(u, v)| (u - v).powi(2)).sum::<f64>().sqrt();
    let flat: Vec<Vec<f64>> = curve.samples.iter().map(|p| Configuration::new(p.cfg.clone()).to_flat()).collect();
    let (best, best_d) = flat
        .iter()
        .enumerate()
        .map(|(i, f)| (i, dist(f)))
        .fold((0, f64::INFINITY), |acc, x| if x.1 < acc.1 { x } else { acc });
    if curve.segments.is_empty() {
        return best_d;
    }
    let mut result = best_d;
    let lo = best.saturating_sub(2);
    let hi = (best + 2).min(curve.segments.len());
    for seg in &curve.segments[lo..hi] {
        // golden-section search on θ, then a coarse scan guard
        let f = |theta: f64| dist(&seg.eval_theta(theta));
        let mut best_theta = 0.0;
        let mut best_val = f(0.0);
        for i in 1..=16 {
            let th = i as f64 / 16.0;
            let v = f(th);
            if v < best_val {
                best_val = v;
                best_theta = th;
            }
        }
        let (mut a, mut b) = ((best_theta - 1.0 / 16.0).max(0.0), (best_theta + 1.0 / 16.0).min(1.0));
        let gr = 0.5 * (5f64.sqrt() - 1.0);
        for _ in 0..80 {
            let c = b - gr * (b - a);
            let d = a + gr * (b - a);
            if f(c) < f(d) {
                b = d;
            } else {
                a = c;
            }
        }
        result = result.min(f(0.5 * (a + b))).min(best_val);
    }
    result
}

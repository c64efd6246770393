//! Scenario files: a TOML description of the wave function, the two
//! surfaces and their patches, integrator settings, and per-command
//! parameters, plus the validating loader that turns it into live objects.

use std::path::Path;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::dynamics::{Controls, VelocityLaw};
use crate::ensemble::InitialLaw;
use crate::error::{Error, Result};
use crate::spacetime::{boost, FourVector, Hypersurface};
use crate::surface::{SurfacePatch, DEFAULT_UNRESOLVED_FRACTION};
use crate::wavefunction::{Configuration, FrequencySign, Mode, ModeTerm, WaveFunction};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub name: String,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub description: String,
    /// Threshold on `|ψ|²` below which a configuration counts as a node.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub node_threshold: Option<f64>,
    pub wavefunction: WaveSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub surfaces: Option<SurfacesSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub patches: Option<PatchesSpec>,
    #[serde(default)]
    pub integrator: IntegratorSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ensemble: Option<EnsembleSpec>,
    #[serde(default)]
    pub simulate: SimulateSpec,
    #[serde(default)]
    pub verify: VerifySpec,
}

fn one() -> usize {
    1
}

fn is_false(b: &bool) -> bool {
    !*b
}

/// Either explicit plane-wave terms or a Gaussian packet.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WaveSpec {
    pub mass: f64,
    #[serde(default = "one")]
    pub n: usize,
    #[serde(default, skip_serializing_if = "is_false")]
    pub symmetrize: bool,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub terms: Vec<TermSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub packet: Option<PacketSpec>,
    /// Velocity of a boost applied to the finished wave function.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub boost: Option<[f64; 3]>,
    /// Permit modes given by a raw four-momentum that need not be on shell
    /// (test fixtures only).
    #[serde(default, skip_serializing_if = "is_false")]
    pub off_shell: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TermSpec {
    pub re: f64,
    #[serde(default)]
    pub im: f64,
    pub modes: Vec<ModeSpec>,
}

/// One particle's mode: spatial momentum plus frequency sign, or a raw
/// four-momentum when the wave function allows off-shell modes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModeSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p: Option<[f64; 3]>,
    #[serde(default)]
    pub sign: FrequencySign,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub four_momentum: Option<[f64; 4]>,
}

/// Product of `n` identical single-particle packets with Gaussian momentum
/// amplitudes `exp(−(k−mean)²/4σ²) e^{−ik·center}` on a regular grid of
/// `points_per_axis` modes spanning `mean ± extent·σ` on each axis with
/// `width > 0`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PacketSpec {
    pub mean: [f64; 3],
    pub width: [f64; 3],
    #[serde(default)]
    pub center: [f64; 3],
    #[serde(default = "default_packet_points")]
    pub points_per_axis: usize,
    #[serde(default = "default_packet_extent")]
    pub extent: f64,
}

fn default_packet_points() -> usize {
    21
}

fn default_packet_extent() -> f64 {
    4.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SurfacesSpec {
    pub initial: SurfaceSpec,
    pub measurement: SurfaceSpec,
}

/// `n·x = offset` with `n` given directly, as the image of `(1,0,0,0)`
/// under a boost with velocity `beta`, or the lab time axis by default.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SurfaceSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub normal: Option<[f64; 4]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta: Option<[f64; 3]>,
    pub offset: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PatchesSpec {
    pub initial: PatchSpec,
    pub measurement: PatchSpec,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PatchSpec {
    pub bounds: [[f64; 2]; 3],
    pub grid: [usize; 3],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IntegratorSpec {
    pub rtol: f64,
    pub atol: f64,
    pub max_step: f64,
    pub min_step: f64,
    /// Defaults to ten times the slowest straight-line flight time from the
    /// initial window to the measurement surface when both surfaces are
    /// given, and to the library default otherwise.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub s_max: Option<f64>,
    pub law: VelocityLaw,
    pub max_steps: usize,
}

impl Default for IntegratorSpec {
    fn default() -> Self {
        let c = Controls::default();
        IntegratorSpec {
            rtol: c.rtol,
            atol: c.atol,
            max_step: c.max_step,
            min_step: c.min_step,
            s_max: None,
            law: c.law,
            max_steps: c.max_steps,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnsembleSpec {
    pub n: usize,
    pub seed: u64,
    #[serde(default)]
    pub initial: InitialLaw,
    #[serde(default = "default_unresolved")]
    pub max_unresolved_fraction: f64,
}

fn default_unresolved() -> f64 {
    DEFAULT_UNRESOLVED_FRACTION
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimulateSpec {
    /// Flattened start configurations `[t₁, x₁, y₁, z₁, t₂, …]`.
    pub starts: Vec<Vec<f64>>,
    /// Stop each trajectory at its first crossing of the measurement
    /// surface.
    pub stop_at_measurement: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VerifySpec {
    pub points: usize,
    pub seed: u64,
    /// Random configurations are drawn from `[−scale, scale]^{4n}`.
    pub scale: f64,
    pub betas: Vec<f64>,
    /// Tolerances for trajectory-comparison checks.
    pub rtol: f64,
    pub atol: f64,
    pub s_max: f64,
    /// Single-particle factor `φ` for the product `φ⊗φ` in the
    /// factorization suite (two-particle scenarios).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub factor: Option<WaveSpec>,
    /// Momentum scales for the nonrelativistic-limit fit; empty disables it.
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub epsilons: Vec<f64>,
    /// Require the smallest cell-center density on the measurement patch
    /// to be at or below this value.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub negative_density_below: Option<f64>,
}

impl Default for VerifySpec {
    fn default() -> Self {
        VerifySpec {
            points: 1000,
            seed: 42,
            scale: 5.0,
            betas: vec![0.3, 0.6],
            rtol: 1e-11,
            atol: 1e-13,
            s_max: 3.0,
            factor: None,
            epsilons: Vec::new(),
            negative_density_below: None,
        }
    }
}

/// A validated scenario.
#[derive(Clone, Debug)]
pub struct Scenario {
    pub config: ScenarioConfig,
    pub psi: WaveFunction,
    pub controls: Controls,
    pub sigma0: Option<Hypersurface>,
    pub sigma: Option<Hypersurface>,
    pub patch0: Option<SurfacePatch>,
    pub patch: Option<SurfacePatch>,
    pub starts: Vec<Configuration>,
}

fn bad(field: &str, why: impl std::fmt::Display) -> Error {
    Error::Config(format!("`{field}`: {why}"))
}

fn positive(field: &str, x: f64) -> Result<()> {
    if x > 0.0 && x.is_finite() {
        Ok(())
    } else {
        Err(bad(field, format!("must be positive and finite, got {x}")))
    }
}

pub fn parse_config(text: &str) -> Result<ScenarioConfig> {
    toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
}

pub fn load_config(path: &Path) -> Result<ScenarioConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
    parse_config(&text).map_err(|e| match e {
        Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
        other => other,
    })
}

pub fn to_toml(config: &ScenarioConfig) -> String {
    toml::to_string(config).expect("scenario configs are always representable in TOML")
}

impl WaveSpec {
    /// Same spec with every momentum multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> WaveSpec {
        let mut out = self.clone();
        for t in &mut out.terms {
            for m in &mut t.modes {
                if let Some(p) = &mut m.p {
                    *p = p.map(|c| c * factor);
                }
            }
        }
        if let Some(p) = &mut out.packet {
            p.mean = p.mean.map(|c| c * factor);
            p.width = p.width.map(|c| c * factor);
        }
        out
    }

    /// Momentum scale `εm` of the state: the mean momentum of a packet, or
    /// the largest mode momentum of an explicit expansion.
    pub fn characteristic_momentum(&self) -> f64 {
        match &self.packet {
            Some(p) => p.mean.iter().map(|c| c * c).sum::<f64>().sqrt(),
            None => self.max_momentum(),
        }
    }

    /// Largest spatial momentum over all modes.
    pub fn max_momentum(&self) -> f64 {
        let norm = |p: &[f64; 3]| p.iter().map(|c| c * c).sum::<f64>().sqrt();
        let from_terms = self
            .terms
            .iter()
            .flat_map(|t| &t.modes)
            .filter_map(|m| m.p.as_ref().map(norm).or(m.four_momentum.map(|q| norm(&[q[1], q[2], q[3]]))))
            .fold(0.0, f64::max);
        let from_packet = self.packet.as_ref().map_or(0.0, |p| {
            let edge: [f64; 3] = std::array::from_fn(|i| p.mean[i].abs() + p.extent * p.width[i]);
            norm(&edge)
        });
        from_terms.max(from_packet)
    }

    pub fn build(&self, field: &str) -> Result<WaveFunction> {
        positive(&format!("{field}.mass"), self.mass)?;
        if self.n == 0 {
            return Err(bad(&format!("{field}.n"), "must be at least 1"));
        }
        let mut psi = match (&self.packet, self.terms.is_empty()) {
            (Some(_), false) => return Err(bad(field, "give either `terms` or `packet`, not both")),
            (None, true) => return Err(bad(field, "needs `terms` or `packet`")),
            (Some(p), true) => self.packet_wave(p, field)?,
            (None, false) => self.term_wave(field)?,
        };
        if self.symmetrize {
            psi = psi.symmetrize().map_err(|e| bad(&format!("{field}.symmetrize"), e))?;
        }
        if let Some(beta) = self.boost {
            let l = boost(beta).map_err(|e| bad(&format!("{field}.boost"), e))?;
            psi = psi.boosted(&l);
        }
        Ok(psi)
    }

    fn term_wave(&self, field: &str) -> Result<WaveFunction> {
        let mut terms = Vec::with_capacity(self.terms.len());
        for (k, t) in self.terms.iter().enumerate() {
            let tf = format!("{field}.terms[{k}]");
            if t.modes.len() != self.n {
                return Err(bad(&format!("{tf}.modes"), format!("has {} modes, expected n = {}", t.modes.len(), self.n)));
            }
            let mut modes = Vec::with_capacity(self.n);
            for (a, m) in t.modes.iter().enumerate() {
                let mf = format!("{tf}.modes[{a}]");
                let mode = match (m.p, m.four_momentum) {
                    (Some(p), None) => Mode::on_shell(self.mass, p, m.sign).map_err(|e| bad(&mf, e))?,
                    (None, Some(q)) if self.off_shell => Mode::unchecked(self.mass, FourVector(q)),
                    (None, Some(_)) => {
                        return Err(bad(&mf, "`four_momentum` needs `off_shell = true` on the wave function"))
                    }
                    _ => return Err(bad(&mf, "give exactly one of `p` and `four_momentum`")),
                };
                modes.push(mode);
            }
            terms.push(ModeTerm { coefficient: Complex64::new(t.re, t.im), modes });
        }
        WaveFunction::from_terms_unchecked(self.mass, self.n, terms, false).map_err(|e| bad(field, e))
    }

    fn packet_wave(&self, p: &PacketSpec, field: &str) -> Result<WaveFunction> {
        let pf = format!("{field}.packet");
        if p.points_per_axis < 2 {
            return Err(bad(&format!("{pf}.points_per_axis"), "must be at least 2"));
        }
        positive(&format!("{pf}.extent"), p.extent)?;
        if p.width.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
            return Err(bad(&format!("{pf}.width"), "must be nonnegative and finite"));
        }
        let axes: [Vec<f64>; 3] = std::array::from_fn(|i| {
            if p.width[i] == 0.0 {
                vec![p.mean[i]]
            } else {
                let span = 2.0 * p.extent * p.width[i];
                (0..p.points_per_axis)
                    .map(|k| p.mean[i] - p.extent * p.width[i] + span * k as f64 / (p.points_per_axis - 1) as f64)
                    .collect()
            }
        });
        let mut terms = Vec::new();
        for &kz in &axes[2] {
            for &ky in &axes[1] {
                for &kx in &axes[0] {
                    let k = [kx, ky, kz];
                    let mut amp = 1.0;
                    let mut phase = 0.0;
                    for i in 0..3 {
                        if p.width[i] > 0.0 {
                            let dk = 2.0 * p.extent * p.width[i] / (p.points_per_axis - 1) as f64;
                            amp *= dk * (-(k[i] - p.mean[i]).powi(2) / (4.0 * p.width[i] * p.width[i])).exp();
                        }
                        phase -= k[i] * p.center[i];
                    }
                    terms.push((Complex64::from_polar(amp, phase), vec![(k, FrequencySign::Positive)]));
                }
            }
        }
        let one = WaveFunction::new(self.mass, 1, &terms).map_err(|e| bad(&pf, e))?;
        let mut psi = one.clone();
        for _ in 1..self.n {
            psi = psi.tensor(&one).map_err(|e| bad(&pf, e))?;
        }
        Ok(psi)
    }
}

impl SurfaceSpec {
    pub fn build(&self, field: &str) -> Result<Hypersurface> {
        match (self.normal, self.beta) {
            (Some(_), Some(_)) => Err(bad(field, "give at most one of `normal` and `beta`")),
            (Some(n), None) => Hypersurface::new(FourVector(n), self.offset).map_err(|e| bad(&format!("{field}.normal"), e)),
            (None, Some(b)) => Hypersurface::boosted(b, self.offset).map_err(|e| bad(&format!("{field}.beta"), e)),
            (None, None) => {
                if self.offset.is_finite() {
                    Ok(Hypersurface::lab(self.offset))
                } else {
                    Err(bad(&format!("{field}.offset"), "must be finite"))
                }
            }
        }
    }
}

impl PatchSpec {
    pub fn build(&self, sigma: Hypersurface, field: &str) -> Result<SurfacePatch> {
        SurfacePatch::new(sigma, self.bounds, self.grid).map_err(|e| bad(field, e))
    }
}

impl IntegratorSpec {
    /// Controls with `s_max` taken from the spec, else from `derived_s_max`,
    /// else from the library default.
    pub fn controls(&self, node_threshold: Option<f64>, derived_s_max: Option<f64>) -> Result<Controls> {
        positive("integrator.rtol", self.rtol)?;
        positive("integrator.atol", self.atol)?;
        positive("integrator.max_step", self.max_step)?;
        positive("integrator.min_step", self.min_step)?;
        let s_max = self.s_max.or(derived_s_max).unwrap_or(Controls::default().s_max);
        positive("integrator.s_max", s_max)?;
        if self.min_step > self.max_step {
            return Err(bad("integrator.min_step", "exceeds `max_step`"));
        }
        if self.max_steps == 0 {
            return Err(bad("integrator.max_steps", "must be at least 1"));
        }
        if let Some(t) = node_threshold {
            positive("node_threshold", t)?;
        }
        Ok(Controls {
            rtol: self.rtol,
            atol: self.atol,
            max_step: self.max_step,
            min_step: self.min_step,
            s_max,
            law: self.law,
            node_threshold,
            reverse: false,
            max_steps: self.max_steps,
        })
    }
}

/// Largest parameter a straight line with velocity `p/m` of the slowest
/// mode needs to get from the initial window (or the origin of Σ₀'s
/// coordinates) to the measurement surface.
fn flight_parameter(psi: &WaveFunction, sigma0: &Hypersurface, sigma: &Hypersurface, window: Option<&PatchSpec>) -> f64 {
    let n = sigma.normal();
    let slowest = psi
        .terms()
        .iter()
        .flat_map(|t| &t.modes)
        .map(|mode| n.dot(&mode.momentum()).abs() / psi.mass())
        .fold(f64::INFINITY, f64::min);
    let corners: Vec<[f64; 3]> = match window {
        Some(w) => (0..8).map(|c| std::array::from_fn(|i| w.bounds[i][(c >> i) & 1])).collect(),
        None => vec![[0.0; 3]],
    };
    let gap = corners.iter().map(|u| sigma.signed_distance(&sigma0.embed(*u)).abs()).fold(0.0, f64::max);
    gap / slowest
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<Scenario> {
        if self.name.trim().is_empty() {
            return Err(bad("name", "must not be empty"));
        }
        let psi = self.wavefunction.build("wavefunction")?;
        let (sigma0, sigma) = match &self.surfaces {
            Some(s) => (Some(s.initial.build("surfaces.initial")?), Some(s.measurement.build("surfaces.measurement")?)),
            None => (None, None),
        };
        let (patch0, patch) = match (&self.patches, sigma0, sigma) {
            (Some(p), Some(s0), Some(s)) => (
                Some(p.initial.build(s0, "patches.initial")?),
                Some(p.measurement.build(s, "patches.measurement")?),
            ),
            (Some(_), _, _) => return Err(bad("patches", "need `surfaces` to be defined")),
            _ => (None, None),
        };
        let reach = match (sigma0, sigma) {
            (Some(s0), Some(s)) => Some(flight_parameter(&psi, &s0, &s, self.patches.as_ref().map(|p| &p.initial))),
            _ => None,
        };
        let controls = self.integrator.controls(self.node_threshold, reach.map(|r| 10.0 * r))?;
        if let Some(e) = &self.ensemble {
            if e.n == 0 {
                return Err(bad("ensemble.n", "must be at least 1"));
            }
            if !(0.0..=1.0).contains(&e.max_unresolved_fraction) {
                return Err(bad("ensemble.max_unresolved_fraction", "must lie in [0, 1]"));
            }
        }
        let v = &self.verify;
        positive("verify.scale", v.scale)?;
        positive("verify.rtol", v.rtol)?;
        positive("verify.atol", v.atol)?;
        positive("verify.s_max", v.s_max)?;
        if let Some(b) = v.betas.iter().find(|b| !(b.abs() < 1.0)) {
            return Err(bad("verify.betas", format!("speed {b} is not below 1")));
        }
        for e in &v.epsilons {
            positive("verify.epsilons", *e)?;
        }
        if !v.epsilons.is_empty() && !(self.wavefunction.characteristic_momentum() > 0.0) {
            return Err(bad("verify.epsilons", "the wave function has no momentum scale to vary"));
        }
        if let Some(f) = &v.factor {
            if f.n != 1 {
                return Err(bad("verify.factor.n", "the factor must describe one particle"));
            }
            f.build("verify.factor")?;
        }
        let starts = self
            .simulate
            .starts
            .iter()
            .enumerate()
            .map(|(k, s)| {
                if s.len() != 4 * psi.n() || s.iter().any(|c| !c.is_finite()) {
                    Err(bad(&format!("simulate.starts[{k}]"), format!("needs {} finite numbers", 4 * psi.n())))
                } else {
                    Ok(Configuration::from_flat(s))
                }
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Scenario { config: self.clone(), psi, controls, sigma0, sigma, patch0, patch, starts })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
name = "minimal"

[wavefunction]
mass = 1.0

[[wavefunction.terms]]
re = 1.0
modes = [{ p = [1.0, 0.0, 0.0] }]
"#;

    #[test]
    fn minimal_config_uses_defaults() {
        let cfg = parse_config(MINIMAL).unwrap();
        let sc = cfg.validate().unwrap();
        assert_eq!(sc.psi.n(), 1);
        assert_eq!(sc.controls, Controls::default());

        let mut with_surfaces = cfg.clone();
        with_surfaces.surfaces = Some(SurfacesSpec {
            initial: SurfaceSpec { normal: None, beta: None, offset: 0.0 },
            measurement: SurfaceSpec { normal: None, beta: None, offset: 2.0 },
        });
        // p = (√2, 1, 0, 0): t advances by √2 per unit s
        let derived = with_surfaces.validate().unwrap().controls.s_max;
        assert!((derived - 10.0 * 2.0 / 2f64.sqrt()).abs() < 1e-12);
        with_surfaces.integrator.s_max = Some(3.0);
        assert_eq!(with_surfaces.validate().unwrap().controls.s_max, 3.0);
        assert!(sc.sigma.is_none() && sc.patch.is_none());
    }

    #[test]
    fn integer_literals_are_accepted_for_reals() {
        let cfg = parse_config(&MINIMAL.replace("mass = 1.0", "mass = 1")).unwrap();
        assert_eq!(cfg.wavefunction.mass, 1.0);
    }

    #[test]
    fn missing_mass_is_named() {
        let err = parse_config(&MINIMAL.replace("mass = 1.0", "")).unwrap_err().to_string();
        assert!(err.contains("mass"), "{err}");
        assert!(err.contains("line"), "{err}");
    }

    #[test]
    fn validation_names_the_field() {
        let mut cfg = parse_config(MINIMAL).unwrap();
        cfg.integrator.rtol = -1.0;
        assert!(cfg.validate().unwrap_err().to_string().contains("integrator.rtol"));

        let mut cfg = parse_config(MINIMAL).unwrap();
        cfg.wavefunction.n = 2;
        assert!(cfg.validate().unwrap_err().to_string().contains("wavefunction.terms[0].modes"));

        let mut cfg = parse_config(MINIMAL).unwrap();
        cfg.wavefunction.terms[0].modes[0] = ModeSpec { p: None, sign: FrequencySign::Positive, four_momentum: Some([2.0, 1.0, 0.0, 0.0]) };
        assert!(cfg.validate().unwrap_err().to_string().contains("off_shell"));
        cfg.wavefunction.off_shell = true;
        assert!(cfg.validate().unwrap().psi.max_shell_defect() > 1.0);

        let mut cfg = parse_config(MINIMAL).unwrap();
        cfg.simulate.starts = vec![vec![0.0; 3]];
        assert!(cfg.validate().unwrap_err().to_string().contains("simulate.starts[0]"));

        assert!(parse_config(&format!("{MINIMAL}\nbogus = 1\n")).is_err());
    }

    #[test]
    fn packet_generator() {
        let spec = WaveSpec {
            mass: 1.0,
            n: 1,
            symmetrize: false,
            terms: vec![],
            packet: Some(PacketSpec {
                mean: [0.01, 0.0, 0.0],
                width: [0.005, 0.0, 0.0],
                center: [0.0; 3],
                points_per_axis: 21,
                extent: 4.0,
            }),
            boost: None,
            off_shell: false,
        };
        let psi = spec.build("wavefunction").unwrap();
        assert_eq!(psi.terms().len(), 21);
        assert!(psi.max_shell_defect() < 1e-12);
        // Gaussian weight times the grid spacing 0.002: peak at the mean,
        // e^{−16/4} at the ±4σ edges
        let amps: Vec<f64> = psi.terms().iter().map(|t| t.coefficient.norm()).collect();
        assert!((amps[10] - 0.002).abs() < 1e-15);
        assert!((amps[0] - 0.002 * (-4.0f64).exp()).abs() < 1e-15);
        assert!((spec.max_momentum() - 0.03).abs() < 1e-15);
        assert!((spec.scaled(2.0).max_momentum() - 0.06).abs() < 1e-15);

        let two = WaveSpec { n: 2, ..spec };
        assert_eq!(two.build("w").unwrap().terms().len(), 21 * 21);
    }

    #[test]
    fn surfaces_and_patches() {
        let s = SurfaceSpec { normal: None, beta: Some([0.6, 0.0, 0.0]), offset: 0.0 }.build("s").unwrap();
        assert!((s.normal()[0] - 1.25).abs() < 1e-12);
        assert!(SurfaceSpec { normal: Some([1.0, 0.5, 0.0, 0.0]), beta: None, offset: 0.0 }.build("s").is_err());
        let p = PatchSpec { bounds: [[0.0, 1.0], [0.0, 0.0], [0.0, 0.0]], grid: [1, 1, 1] };
        assert!(p.build(Hypersurface::lab(0.0), "patches.initial").unwrap_err().to_string().contains("patches.initial"));
    }

    #[test]
    fn toml_round_trip() {
        let cfg = parse_config(MINIMAL).unwrap();
        assert_eq!(parse_config(&to_toml(&cfg)).unwrap(), cfg);
    }
}

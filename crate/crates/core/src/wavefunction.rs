//! n-particle Klein-Gordon wave functions as finite sums of separable
//! on-shell plane-wave products,
//!
//! ```text
//! ψ(x₁,…,xₙ) = Σ_k c_k Π_a exp(−i p_{k,a}·x_a),   p_{k,a}·p_{k,a} = m².
//! ```
//!
//! Every derivative is analytic: a contravariant derivative `∂_a^μ` pulls
//! down a factor `−i p_{k,a}^μ` from term `k`.

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::spacetime::{minkowski_dot, FourVector, LorentzTransform, METRIC};

pub const MAX_TERMS: usize = 1_000_000;
pub const MAX_SYMMETRIZE_N: usize = 8;

/// Complex contravariant 4-vector, e.g. `∂^μψ`.
pub type ComplexFourVector = [Complex64; 4];

const MINUS_I: Complex64 = Complex64::new(0.0, -1.0);

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FrequencySign {
    #[default]
    Positive,
    Negative,
}

impl FrequencySign {
    pub fn factor(self) -> f64 {
        match self {
            FrequencySign::Positive => 1.0,
            FrequencySign::Negative => -1.0,
        }
    }

    pub fn from_factor(f: f64) -> Option<Self> {
        if f == 1.0 {
            Some(FrequencySign::Positive)
        } else if f == -1.0 {
            Some(FrequencySign::Negative)
        } else {
            None
        }
    }
}

/// One plane-wave factor `exp(−i p·x)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Mode {
    mass: f64,
    momentum: FourVector,
}

impl Mode {
    /// Places `(±√(m² + |p|²), p)` on the mass shell.
    pub fn on_shell(mass: f64, spatial: [f64; 3], sign: FrequencySign) -> Result<Self> {
        if !(mass > 0.0) || !mass.is_finite() {
            return Err(Error::NonpositiveMass(mass));
        }
        if spatial.iter().any(|p| !p.is_finite()) {
            return Err(Error::NonFinite("mode momentum"));
        }
        let p2: f64 = spatial.iter().map(|p| p * p).sum();
        let energy = sign.factor() * (mass * mass + p2).sqrt();
        Ok(Mode { mass, momentum: FourVector([energy, spatial[0], spatial[1], spatial[2]]) })
    }

    /// Fixture constructor that accepts an arbitrary 4-momentum, on shell or
    /// not. Only the off-shell detector scenarios use it.
    #[doc(hidden)]
    pub fn unchecked(mass: f64, momentum: FourVector) -> Self {
        Mode { mass, momentum }
    }

    pub fn mass(&self) -> f64 {
        self.mass
    }

    /// Contravariant 4-momentum `p^μ`.
    pub fn momentum(&self) -> FourVector {
        self.momentum
    }

    pub fn spatial(&self) -> [f64; 3] {
        self.momentum.spatial()
    }

    pub fn sign(&self) -> FrequencySign {
        if self.momentum.t() >= 0.0 {
            FrequencySign::Positive
        } else {
            FrequencySign::Negative
        }
    }

    pub fn shell_defect(&self) -> f64 {
        self.momentum.norm_sqr() - self.mass * self.mass
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModeTerm {
    pub coefficient: Complex64,
    pub modes: Vec<Mode>,
}

/// Spatial momentum and frequency sign for one particle slot, as accepted by
/// [`WaveFunction::new`].
pub type ModeSpec = ([f64; 3], FrequencySign);

#[derive(Clone, Debug, PartialEq)]
pub struct WaveFunction {
    n: usize,
    mass: f64,
    terms: Vec<ModeTerm>,
    symmetrized: bool,
}

/// The spacetime points `x₁, …, xₙ` at which a wave function is evaluated.
#[derive(Clone, Debug, PartialEq)]
pub struct Configuration {
    pub points: Vec<FourVector>,
}

impl Configuration {
    pub fn new(points: Vec<FourVector>) -> Self {
        Configuration { points }
    }

    pub fn single(x: FourVector) -> Self {
        Configuration { points: vec![x] }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Flat `[t₁,x₁,y₁,z₁, t₂, …]` layout used by the integrator.
    pub fn to_flat(&self) -> Vec<f64> {
        self.points.iter().flat_map(|p| p.0).collect()
    }

    pub fn from_flat(y: &[f64]) -> Self {
        Configuration {
            points: y.chunks_exact(4).map(|c| FourVector([c[0], c[1], c[2], c[3]])).collect(),
        }
    }

    pub fn transformed(&self, l: &LorentzTransform) -> Self {
        Configuration { points: self.points.iter().map(|p| l.apply(p)).collect() }
    }

    /// Exchanges two particle slots.
    pub fn swapped(&self, a: usize, b: usize) -> Self {
        let mut points = self.points.clone();
        points.swap(a, b);
        Configuration { points }
    }
}

impl WaveFunction {
    /// Builds `Σ_k c_k Π_a exp(−i p_{k,a}·x_a)` with every momentum placed on
    /// the mass shell.
    pub fn new(mass: f64, n: usize, terms: &[(Complex64, Vec<ModeSpec>)]) -> Result<Self> {
        if !(mass > 0.0) || !mass.is_finite() {
            return Err(Error::NonpositiveMass(mass));
        }
        if n == 0 {
            return Err(Error::NoParticles);
        }
        if terms.is_empty() {
            return Err(Error::EmptyExpansion);
        }
        if terms.len() > MAX_TERMS {
            return Err(Error::TooManyTerms(terms.len()));
        }
        let mut built = Vec::with_capacity(terms.len());
        for (k, (c, specs)) in terms.iter().enumerate() {
            if specs.len() != n {
                return Err(Error::BadArity { term: k, got: specs.len(), expected: n });
            }
            if !c.re.is_finite() || !c.im.is_finite() {
                return Err(Error::NonFinite("term coefficient"));
            }
            let modes = specs
                .iter()
                .map(|(p, s)| Mode::on_shell(mass, *p, *s))
                .collect::<Result<Vec<_>>>()?;
            built.push(ModeTerm { coefficient: *c, modes });
        }
        Ok(WaveFunction { n, mass, terms: built, symmetrized: false })
    }

    /// Single-particle plane wave with unit amplitude.
    pub fn plane_wave(mass: f64, spatial: [f64; 3]) -> Result<Self> {
        Self::new(mass, 1, &[(Complex64::new(1.0, 0.0), vec![(spatial, FrequencySign::Positive)])])
    }

    /// Assembles a wave function from prebuilt terms. Modes are not checked
    /// against the mass shell; this is how off-shell fixtures are made.
    #[doc(hidden)]
    pub fn from_terms_unchecked(mass: f64, n: usize, terms: Vec<ModeTerm>, symmetrized: bool) -> Result<Self> {
        if n == 0 {
            return Err(Error::NoParticles);
        }
        if terms.is_empty() {
            return Err(Error::EmptyExpansion);
        }
        if terms.len() > MAX_TERMS {
            return Err(Error::TooManyTerms(terms.len()));
        }
        for (k, t) in terms.iter().enumerate() {
            if t.modes.len() != n {
                return Err(Error::BadArity { term: k, got: t.modes.len(), expected: n });
            }
        }
        Ok(WaveFunction { n, mass, terms, symmetrized })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn mass(&self) -> f64 {
        self.mass
    }

    pub fn terms(&self) -> &[ModeTerm] {
        &self.terms
    }

    pub fn is_symmetrized(&self) -> bool {
        self.symmetrized
    }

    /// Largest `|p·p − m²|` over all modes.
    pub fn max_shell_defect(&self) -> f64 {
        self.terms
            .iter()
            .flat_map(|t| t.modes.iter())
            .map(|m| m.shell_defect().abs())
            .fold(0.0, f64::max)
    }

    /// `1e-12 · max_k |c_k|²`.
    pub fn default_node_threshold(&self) -> f64 {
        let amp = self.terms.iter().map(|t| t.coefficient.norm()).fold(0.0, f64::max);
        1e-12 * amp * amp
    }

    /// Averages every term over all `n!` orderings of its modes.
    pub fn symmetrize(&self) -> Result<Self> {
        if self.symmetrized {
            return Err(Error::AlreadySymmetrized);
        }
        if self.n > MAX_SYMMETRIZE_N {
            return Err(Error::SymmetrizeTooLarge(self.n));
        }
        let perms = permutations(self.n);
        let total = perms.len() * self.terms.len();
        if total > MAX_TERMS {
            return Err(Error::TooManyTerms(total));
        }
        let scale = 1.0 / perms.len() as f64;
        let mut terms = Vec::with_capacity(total);
        for t in &self.terms {
            for perm in &perms {
                terms.push(ModeTerm {
                    coefficient: t.coefficient * scale,
                    modes: perm.iter().map(|&i| t.modes[i]).collect(),
                });
            }
        }
        Ok(WaveFunction { n: self.n, mass: self.mass, terms, symmetrized: true })
    }

    /// Term-wise sum `α·self + β·other`.
    pub fn superpose(&self, alpha: Complex64, other: &WaveFunction, beta: Complex64) -> Result<Self> {
        if self.n != other.n {
            return Err(Error::ArityMismatch { got: other.n, expected: self.n });
        }
        if self.mass != other.mass {
            return Err(Error::Config("superposed wave functions must share the mass".into()));
        }
        let terms: Vec<ModeTerm> = self
            .terms
            .iter()
            .map(|t| ModeTerm { coefficient: alpha * t.coefficient, modes: t.modes.clone() })
            .chain(other.terms.iter().map(|t| ModeTerm {
                coefficient: beta * t.coefficient,
                modes: t.modes.clone(),
            }))
            .collect();
        if terms.len() > MAX_TERMS {
            return Err(Error::TooManyTerms(terms.len()));
        }
        Ok(WaveFunction { n: self.n, mass: self.mass, terms, symmetrized: self.symmetrized && other.symmetrized })
    }

    /// Product `self(x₁..x_n) · other(x_{n+1}..x_{n+m})`.
    pub fn tensor(&self, other: &WaveFunction) -> Result<Self> {
        if self.mass != other.mass {
            return Err(Error::Config("tensor factors must share the mass".into()));
        }
        let count = self.terms.len() * other.terms.len();
        if count > MAX_TERMS {
            return Err(Error::TooManyTerms(count));
        }
        let mut terms = Vec::with_capacity(count);
        for a in &self.terms {
            for b in &other.terms {
                let mut modes = a.modes.clone();
                modes.extend_from_slice(&b.modes);
                terms.push(ModeTerm { coefficient: a.coefficient * b.coefficient, modes });
            }
        }
        Ok(WaveFunction { n: self.n + other.n, mass: self.mass, terms, symmetrized: false })
    }

    /// Replaces every mode momentum `p` by `Λp`. The result satisfies
    /// `ψ′(Λx) = ψ(x)`.
    pub fn boosted(&self, l: &LorentzTransform) -> Self {
        let terms = self
            .terms
            .iter()
            .map(|t| ModeTerm {
                coefficient: t.coefficient,
                modes: t
                    .modes
                    .iter()
                    .map(|m| Mode { mass: m.mass, momentum: l.apply(&m.momentum) })
                    .collect(),
            })
            .collect();
        WaveFunction { n: self.n, mass: self.mass, terms, symmetrized: self.symmetrized }
    }

    fn check(&self, cfg: &Configuration) -> Result<()> {
        if cfg.len() != self.n {
            return Err(Error::ArityMismatch { got: cfg.len(), expected: self.n });
        }
        Ok(())
    }

    fn check_index(&self, a: usize) -> Result<()> {
        if a >= self.n {
            return Err(Error::IndexOutOfRange { index: a, n: self.n });
        }
        Ok(())
    }

    /// Values `c_k Π_a exp(−i p_{k,a}·x_a)` of each term.
    fn term_values<'a>(&'a self, cfg: &'a Configuration) -> impl Iterator<Item = (Complex64, &'a ModeTerm)> + 'a {
        self.terms.iter().map(move |t| {
            let phase: f64 = t.modes.iter().zip(&cfg.points).map(|(m, x)| minkowski_dot(&m.momentum, x)).sum();
            (t.coefficient * Complex64::from_polar(1.0, -phase), t)
        })
    }

    pub fn evaluate(&self, cfg: &Configuration) -> Result<Complex64> {
        self.check(cfg)?;
        Ok(self.term_values(cfg).map(|(v, _)| v).sum())
    }

    /// Contravariant gradient `∂_a^μ ψ`.
    pub fn gradient(&self, cfg: &Configuration, a: usize) -> Result<ComplexFourVector> {
        self.check(cfg)?;
        self.check_index(a)?;
        let mut g = [Complex64::new(0.0, 0.0); 4];
        for (v, t) in self.term_values(cfg) {
            let p = t.modes[a].momentum.0;
            for mu in 0..4 {
                g[mu] += MINUS_I * p[mu] * v;
            }
        }
        Ok(g)
    }

    /// `ψ` and all `n` contravariant gradients in one pass.
    pub fn value_and_gradients(&self, cfg: &Configuration) -> Result<(Complex64, Vec<ComplexFourVector>)> {
        self.check(cfg)?;
        let mut psi = Complex64::new(0.0, 0.0);
        let mut grads = vec![[Complex64::new(0.0, 0.0); 4]; self.n];
        for (v, t) in self.term_values(cfg) {
            psi += v;
            let mv = MINUS_I * v;
            for (g, m) in grads.iter_mut().zip(&t.modes) {
                let p = m.momentum.0;
                for mu in 0..4 {
                    g[mu] += mv * p[mu];
                }
            }
        }
        Ok((psi, grads))
    }

    /// `∂_a^μ ∂_a^ν ψ` with both indices contravariant.
    pub fn second_derivative(&self, cfg: &Configuration, a: usize, mu: usize, nu: usize) -> Result<Complex64> {
        self.derivative(cfg, &[(a, mu), (a, nu)])
    }

    /// Mixed contravariant derivative `∂_{a₁}^{μ₁} ⋯ ∂_{a_k}^{μ_k} ψ` of any
    /// order across any particles.
    pub fn derivative(&self, cfg: &Configuration, indices: &[(usize, usize)]) -> Result<Complex64> {
        self.check(cfg)?;
        for &(a, mu) in indices {
            self.check_index(a)?;
            if mu > 3 {
                return Err(Error::BadComponent(mu));
            }
        }
        let mut sum = Complex64::new(0.0, 0.0);
        for (v, t) in self.term_values(cfg) {
            let mut f = v;
            for &(a, mu) in indices {
                f *= MINUS_I * t.modes[a].momentum.0[mu];
            }
            sum += f;
        }
        Ok(sum)
    }

    /// `∂_a^μ ∂_{aμ} ψ`.
    pub fn dalembertian(&self, cfg: &Configuration, a: usize) -> Result<Complex64> {
        self.check(cfg)?;
        self.check_index(a)?;
        Ok(self.term_values(cfg).map(|(v, t)| -v * t.modes[a].momentum.norm_sqr()).sum())
    }

    /// `(∂_a^μ ∂_{aμ} + m²) ψ`.
    pub fn kg_residual(&self, cfg: &Configuration, a: usize) -> Result<Complex64> {
        let box_psi = self.dalembertian(cfg, a)?;
        let psi = self.evaluate(cfg)?;
        Ok(box_psi + self.mass * self.mass * psi)
    }

    /// All derivatives needed for the quantum potential and its gradient:
    /// value, first, second and third contravariant derivatives over the
    /// `4n` coordinates, indexed `[i]`, `[i][j]`, `[i][j][k]` with
    /// `i = 4a + μ`. Cost grows as `(4n)³` per term.
    pub fn jet3(&self, cfg: &Configuration) -> Result<Jet3> {
        self.check(cfg)?;
        let dim = 4 * self.n;
        let zero = Complex64::new(0.0, 0.0);
        let mut jet = Jet3 {
            dim,
            value: zero,
            d1: vec![zero; dim],
            d2: vec![zero; dim * dim],
            d3: vec![zero; dim * dim * dim],
        };
        let mut k = vec![zero; dim];
        for (v, t) in self.term_values(cfg) {
            for (a, m) in t.modes.iter().enumerate() {
                for mu in 0..4 {
                    k[4 * a + mu] = MINUS_I * m.momentum.0[mu];
                }
            }
            jet.value += v;
            for i in 0..dim {
                let vi = v * k[i];
                jet.d1[i] += vi;
                for j in 0..dim {
                    let vij = vi * k[j];
                    jet.d2[i * dim + j] += vij;
                    for l in 0..dim {
                        jet.d3[(i * dim + j) * dim + l] += vij * k[l];
                    }
                }
            }
        }
        Ok(jet)
    }
}

/// Third-order Taylor data of ψ at one configuration (contravariant indices).
#[derive(Clone, Debug)]
pub struct Jet3 {
    pub dim: usize,
    pub value: Complex64,
    pub d1: Vec<Complex64>,
    pub d2: Vec<Complex64>,
    pub d3: Vec<Complex64>,
}

impl Jet3 {
    pub fn d2(&self, i: usize, j: usize) -> Complex64 {
        self.d2[i * self.dim + j]
    }

    pub fn d3(&self, i: usize, j: usize, k: usize) -> Complex64 {
        self.d3[(i * self.dim + j) * self.dim + k]
    }
}

/// Metric factor `g_μμ` for flat index `i = 4a + μ`.
pub fn metric_at(i: usize) -> f64 {
    METRIC[i % 4]
}

fn permutations(n: usize) -> Vec<Vec<usize>> {
    fn rec(prefix: &mut Vec<usize>, used: &mut [bool], out: &mut Vec<Vec<usize>>) {
        if prefix.len() == used.len() {
            out.push(prefix.clone());
            return;
        }
        for i in 0..used.len() {
            if !used[i] {
                used[i] = true;
                prefix.push(i);
                rec(prefix, used, out);
                prefix.pop();
                used[i] = false;
            }
        }
    }
    let mut out = Vec::new();
    rec(&mut Vec::with_capacity(n), &mut vec![false; n], &mut out);
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spacetime::boost;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    const POS: FrequencySign = FrequencySign::Positive;

    fn c(re: f64) -> Complex64 {
        Complex64::new(re, 0.0)
    }

    fn two_mode() -> WaveFunction {
        WaveFunction::new(1.0, 1, &[(c(1.0), vec![([1.0, 0.0, 0.0], POS)]), (c(0.5), vec![([5.0, 0.0, 0.0], POS)])])
            .unwrap()
    }

    fn random_point(rng: &mut ChaCha8Rng, scale: f64) -> FourVector {
        FourVector(std::array::from_fn(|_| rng.gen_range(-scale..scale)))
    }

    /// Independent evaluation straight from the definition, no shared code
    /// with `evaluate`.
    fn brute_force(psi: &WaveFunction, cfg: &Configuration) -> Complex64 {
        let mut sum = Complex64::new(0.0, 0.0);
        for t in psi.terms() {
            let mut prod = t.coefficient;
            for (m, x) in t.modes.iter().zip(&cfg.points) {
                let p = m.momentum().0;
                let phase = p[0] * x[0] - p[1] * x[1] - p[2] * x[2] - p[3] * x[3];
                prod *= Complex64::new(phase.cos(), -phase.sin());
            }
            sum += prod;
        }
        sum
    }

    fn shifted(cfg: &Configuration, a: usize, mu: usize, h: f64) -> Configuration {
        let mut out = cfg.clone();
        out.points[a].0[mu] += h;
        out
    }

    #[test]
    fn construction_examples() {
        let pw = WaveFunction::plane_wave(1.0, [1.0, 0.0, 0.0]).unwrap();
        let p = pw.terms()[0].modes[0].momentum();
        assert!((p[0] - 2f64.sqrt()).abs() < 1e-15);
        assert_eq!(p[1], 1.0);

        let s2 = two_mode();
        let q = s2.terms()[1].modes[0].momentum();
        assert!((q[0] - 26f64.sqrt()).abs() < 1e-14);
        assert!(s2.max_shell_defect() < 1e-12);

        let err = WaveFunction::new(1.0, 2, &[(c(1.0), vec![([1.0, 0.0, 0.0], POS)])]).unwrap_err();
        assert!(matches!(err, Error::BadArity { got: 1, expected: 2, .. }));
        assert!(matches!(WaveFunction::plane_wave(0.0, [0.0; 3]), Err(Error::NonpositiveMass(_))));
        assert!(matches!(WaveFunction::new(1.0, 1, &[]), Err(Error::EmptyExpansion)));
    }

    #[test]
    fn symmetrize_examples() {
        let pw = WaveFunction::plane_wave(1.0, [0.3, 0.0, 0.0]).unwrap();
        let s = pw.symmetrize().unwrap();
        assert!(s.is_symmetrized());
        assert_eq!(s.terms(), pw.terms());
        assert!(matches!(s.symmetrize(), Err(Error::AlreadySymmetrized)));

        let pair = WaveFunction::new(1.0, 2, &[(c(2.0), vec![([1.0, 0.0, 0.0], POS), ([0.0, 2.0, 0.0], POS)])])
            .unwrap();
        let sym = pair.symmetrize().unwrap();
        assert_eq!(sym.terms().len(), 2);
        assert_eq!(sym.terms()[0].coefficient, c(1.0));
        assert_eq!(sym.terms()[0].modes[0], pair.terms()[0].modes[0]);
        assert_eq!(sym.terms()[1].modes[0], pair.terms()[0].modes[1]);
        assert_eq!(sym.terms()[1].modes[1], pair.terms()[0].modes[0]);

        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            let cfg = Configuration::new(vec![random_point(&mut rng, 3.0), random_point(&mut rng, 3.0)]);
            let v1 = sym.evaluate(&cfg).unwrap();
            let v2 = sym.evaluate(&cfg.swapped(0, 1)).unwrap();
            assert!((v1 - v2).norm() < 1e-14);
        }
    }

    #[test]
    fn symmetrize_refuses_large_n() {
        let specs: Vec<ModeSpec> = (0..9).map(|i| ([i as f64, 0.0, 0.0], POS)).collect();
        let psi = WaveFunction::new(1.0, 9, &[(c(1.0), specs)]).unwrap();
        assert!(matches!(psi.symmetrize(), Err(Error::SymmetrizeTooLarge(9))));
    }

    #[test]
    fn evaluate_examples() {
        let pw = WaveFunction::plane_wave(1.0, [1.0, 0.0, 0.0]).unwrap();
        let v = pw.evaluate(&Configuration::single(FourVector::ZERO)).unwrap();
        assert!((v - c(1.0)).norm() < 1e-15);

        let x = Configuration::single(FourVector([0.0, 2.0 * std::f64::consts::PI, 0.0, 0.0]));
        let v = pw.evaluate(&x).unwrap();
        // p·x = −2π; exp(+2πi) = 1
        let oracle = Complex64::new(0.0, 2.0 * std::f64::consts::PI).exp();
        assert!((v - oracle).norm() < 1e-14);
        assert!((v - c(1.0)).norm() < 1e-14);

        let v = two_mode().evaluate(&Configuration::single(FourVector::ZERO)).unwrap();
        assert!((v - c(1.5)).norm() < 1e-15);

        assert!(matches!(
            pw.evaluate(&Configuration::new(vec![FourVector::ZERO; 2])),
            Err(Error::ArityMismatch { .. })
        ));
    }

    #[test]
    fn evaluate_matches_brute_force() {
        let psi = WaveFunction::new(
            1.3,
            2,
            &[
                (Complex64::new(0.4, -0.2), vec![([0.3, -1.0, 0.2], POS), ([0.0, 0.5, 0.0], POS)]),
                (Complex64::new(-1.0, 0.7), vec![([1.1, 0.0, -0.4], FrequencySign::Negative), ([0.2, 0.2, 0.2], POS)]),
            ],
        )
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..100 {
            let cfg = Configuration::new(vec![random_point(&mut rng, 5.0), random_point(&mut rng, 5.0)]);
            assert!((psi.evaluate(&cfg).unwrap() - brute_force(&psi, &cfg)).norm() < 1e-13);
        }
    }

    #[test]
    fn gradient_examples() {
        let pw = WaveFunction::plane_wave(1.0, [1.0, 0.0, 0.0]).unwrap();
        let g = pw.gradient(&Configuration::single(FourVector::ZERO), 0).unwrap();
        assert!((g[0] - Complex64::new(0.0, -2f64.sqrt())).norm() < 1e-15);
        assert!((g[1] - Complex64::new(0.0, -1.0)).norm() < 1e-15);
        assert_eq!(g[2], c(0.0));
        assert!(matches!(
            pw.gradient(&Configuration::single(FourVector::ZERO), 2),
            Err(Error::IndexOutOfRange { index: 2, n: 1 })
        ));
    }

    /// Central differences act on coordinates, giving covariant
    /// derivatives; raise with the metric to compare.
    #[test]
    fn gradient_matches_finite_differences() {
        let cfg = Configuration::single(FourVector([0.3, -0.7, 0.0, 0.0]));
        let h = 1e-5;
        let check = |psi: &WaveFunction, tol: &dyn Fn(f64) -> f64| {
            let g = psi.gradient(&cfg, 0).unwrap();
            for mu in 0..4 {
                let fd = (psi.evaluate(&shifted(&cfg, 0, mu, h)).unwrap()
                    - psi.evaluate(&shifted(&cfg, 0, mu, -h)).unwrap())
                    / (2.0 * h);
                assert!((g[mu] - METRIC[mu] * fd).norm() < tol(g[mu].norm()), "mu={mu}");
            }
        };
        check(&WaveFunction::plane_wave(1.0, [1.0, 0.0, 0.0]).unwrap(), &|_| 1e-9);
        // the |q| = 5 mode has an h²|q|³ truncation term near 1e-9
        check(&two_mode(), &|g| 1e-8 * (1.0 + g));
    }

    #[test]
    fn second_derivative_examples() {
        let pw = WaveFunction::plane_wave(1.0, [1.0, 0.0, 0.0]).unwrap();
        let d00 = pw.second_derivative(&Configuration::single(FourVector::ZERO), 0, 0, 0).unwrap();
        assert!((d00 - c(-2.0)).norm() < 1e-14);

        let psi = two_mode();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..20 {
            let cfg = Configuration::single(random_point(&mut rng, 4.0));
            let trace: Complex64 = (0..4).map(|mu| METRIC[mu] * psi.second_derivative(&cfg, 0, mu, mu).unwrap()).sum();
            let v = psi.evaluate(&cfg).unwrap();
            assert!((trace + v).norm() < 1e-12 * (1.0 + trace.norm()));
        }

        let cfg = Configuration::single(FourVector([0.3, -0.7, 0.2, 0.0]));
        let h = 1e-4;
        for mu in 0..4 {
            for nu in 0..4 {
                let f = |dm: f64, dn: f64| {
                    let x = shifted(&shifted(&cfg, 0, mu, dm), 0, nu, dn);
                    psi.evaluate(&x).unwrap()
                };
                let fd = (f(h, h) - f(h, -h) - f(-h, h) + f(-h, -h)) / (4.0 * h * h);
                let exact = psi.second_derivative(&cfg, 0, mu, nu).unwrap();
                assert!((exact - METRIC[mu] * METRIC[nu] * fd).norm() < 1e-5 * (1.0 + exact.norm()));
            }
        }
    }

    #[test]
    fn kg_residual_examples() {
        let pw = WaveFunction::plane_wave(1.0, [1.0, 0.0, 0.0]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..10 {
            let cfg = Configuration::single(random_point(&mut rng, 10.0));
            assert!(pw.kg_residual(&cfg, 0).unwrap().norm() < 1e-12);
        }
        let s2 = two_mode();
        let worst = (0..100)
            .map(|_| {
                let cfg = Configuration::single(random_point(&mut rng, 10.0));
                s2.kg_residual(&cfg, 0).unwrap().norm()
            })
            .fold(0.0, f64::max);
        assert!(worst < 1e-10);

        let off = WaveFunction::from_terms_unchecked(
            1.0,
            1,
            vec![ModeTerm { coefficient: c(1.0), modes: vec![Mode::unchecked(1.0, FourVector([1.0, 1.0, 0.0, 0.0]))] }],
            false,
        )
        .unwrap();
        let r = off.kg_residual(&Configuration::single(FourVector([0.2, 0.1, 0.0, 0.0])), 0).unwrap();
        assert!((r.norm() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn linearity() {
        let a = WaveFunction::plane_wave(1.0, [0.5, 0.0, 0.1]).unwrap();
        let b = two_mode();
        let alpha = Complex64::new(0.3, -1.2);
        let beta = Complex64::new(-0.7, 0.4);
        let sum = a.superpose(alpha, &b, beta).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..50 {
            let cfg = Configuration::single(random_point(&mut rng, 5.0));
            let want = alpha * a.evaluate(&cfg).unwrap() + beta * b.evaluate(&cfg).unwrap();
            assert!((sum.evaluate(&cfg).unwrap() - want).norm() < 1e-13);
        }
    }

    #[test]
    fn boost_equivariance() {
        let psi = two_mode().tensor(&WaveFunction::plane_wave(1.0, [0.0, 0.4, 0.0]).unwrap()).unwrap();
        let l = boost([0.3, -0.5, 0.2]).unwrap();
        let boosted = psi.boosted(&l);
        assert!(boosted.max_shell_defect() < 1e-12);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..100 {
            let cfg = Configuration::new(vec![random_point(&mut rng, 5.0), random_point(&mut rng, 5.0)]);
            let v = psi.evaluate(&cfg).unwrap();
            let w = boosted.evaluate(&cfg.transformed(&l)).unwrap();
            assert!((v - w).norm() < 1e-10);
        }
    }

    #[test]
    fn kg_residual_random_sweep() {
        let psi = WaveFunction::new(
            2.0,
            2,
            &[
                (Complex64::new(0.4, -0.2), vec![([0.3, -1.0, 0.2], POS), ([0.0, 0.5, 0.0], POS)]),
                (Complex64::new(-1.0, 0.7), vec![([1.1, 0.0, -0.4], FrequencySign::Negative), ([0.2, 0.2, 0.2], POS)]),
            ],
        )
        .unwrap()
        .symmetrize()
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..1000 {
            let cfg = Configuration::new(vec![random_point(&mut rng, 10.0), random_point(&mut rng, 10.0)]);
            let v = psi.evaluate(&cfg).unwrap().norm();
            for a in 0..2 {
                assert!(psi.kg_residual(&cfg, a).unwrap().norm() <= 1e-10 * (1.0 + v));
            }
        }
    }

    #[test]
    fn jet_matches_direct_derivatives() {
        let psi = two_mode().tensor(&two_mode()).unwrap();
        let cfg = Configuration::new(vec![FourVector([0.1, 0.2, 0.3, 0.4]), FourVector([-0.5, 0.6, 0.0, 1.0])]);
        let jet = psi.jet3(&cfg).unwrap();
        let idx = |i: usize| (i / 4, i % 4);
        assert!((jet.value - psi.evaluate(&cfg).unwrap()).norm() < 1e-14);
        for (i, j, k) in [(0, 1, 2), (5, 1, 7), (3, 3, 4)] {
            let d = psi.derivative(&cfg, &[idx(i), idx(j), idx(k)]).unwrap();
            assert!((jet.d3(i, j, k) - d).norm() < 1e-12 * (1.0 + d.norm()));
            let d2 = psi.derivative(&cfg, &[idx(i), idx(j)]).unwrap();
            assert!((jet.d2(i, j) - d2).norm() < 1e-12 * (1.0 + d2.norm()));
        }
    }
}

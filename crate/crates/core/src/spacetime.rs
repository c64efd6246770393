//! Minkowski-space primitives with metric signature (+,−,−,−).
//!
//! Boosts are *active*: `boost(beta).apply(x)` moves the point `x` into the
//! frame-fixed position it would have if the whole scenario were set in
//! motion with velocity `beta`. A particle at rest, `(1, 0, 0, 0)`, becomes
//! `(γ, γβ)`.

use std::ops::{Add, Index, Mul, Neg, Sub};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Minkowski metric diagonal.
pub const METRIC: [f64; 4] = [1.0, -1.0, -1.0, -1.0];

/// A point or vector in Minkowski spacetime, components `(t, x, y, z)`.
#[derive(Clone, Copy, Debug, PartialEq, Default, Serialize, Deserialize)]
pub struct FourVector(pub [f64; 4]);

impl FourVector {
    pub const ZERO: FourVector = FourVector([0.0; 4]);

    /// Checked constructor; rejects NaN and infinities.
    pub fn new(t: f64, x: f64, y: f64, z: f64) -> Result<Self> {
        let v = FourVector([t, x, y, z]);
        if v.is_finite() {
            Ok(v)
        } else {
            Err(Error::NonFinite("four-vector component"))
        }
    }

    pub fn from_array(c: [f64; 4]) -> Result<Self> {
        Self::new(c[0], c[1], c[2], c[3])
    }

    pub fn t(&self) -> f64 {
        self.0[0]
    }

    pub fn spatial(&self) -> [f64; 3] {
        [self.0[1], self.0[2], self.0[3]]
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|c| c.is_finite())
    }

    pub fn dot(&self, other: &FourVector) -> f64 {
        minkowski_dot(self, other)
    }

    pub fn norm_sqr(&self) -> f64 {
        minkowski_dot(self, self)
    }

    /// Index-lowered components `v_μ = g_μν v^ν`.
    pub fn lowered(&self) -> FourVector {
        let c = self.0;
        FourVector([c[0], -c[1], -c[2], -c[3]])
    }

    /// Euclidean length of the component array; used for distances between
    /// sampled curve points, never as a physical norm.
    pub fn euclidean_norm(&self) -> f64 {
        self.0.iter().map(|c| c * c).sum::<f64>().sqrt()
    }

    pub fn scale(&self, k: f64) -> FourVector {
        FourVector(self.0.map(|c| c * k))
    }
}

impl Index<usize> for FourVector {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

impl Add for FourVector {
    type Output = FourVector;
    fn add(self, rhs: FourVector) -> FourVector {
        FourVector(std::array::from_fn(|i| self.0[i] + rhs.0[i]))
    }
}

impl Sub for FourVector {
    type Output = FourVector;
    fn sub(self, rhs: FourVector) -> FourVector {
        FourVector(std::array::from_fn(|i| self.0[i] - rhs.0[i]))
    }
}

impl Neg for FourVector {
    type Output = FourVector;
    fn neg(self) -> FourVector {
        self.scale(-1.0)
    }
}

impl Mul<FourVector> for f64 {
    type Output = FourVector;
    fn mul(self, rhs: FourVector) -> FourVector {
        rhs.scale(self)
    }
}

/// `a⁰b⁰ − a¹b¹ − a²b² − a³b³`.
pub fn minkowski_dot(a: &FourVector, b: &FourVector) -> f64 {
    a.0[0] * b.0[0] - a.0[1] * b.0[1] - a.0[2] * b.0[2] - a.0[3] * b.0[3]
}

/// Causal character of a vector.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum CausalClass {
    Timelike,
    Lightlike,
    Spacelike,
}

impl CausalClass {
    /// Single-letter tag used in trajectory CSV files.
    pub fn tag(self) -> char {
        match self {
            CausalClass::Timelike => 'T',
            CausalClass::Lightlike => 'L',
            CausalClass::Spacelike => 'S',
        }
    }
}

pub fn causal_class(v: &FourVector, tol: f64) -> CausalClass {
    let n = v.norm_sqr();
    if n > tol {
        CausalClass::Timelike
    } else if n < -tol {
        CausalClass::Spacelike
    } else {
        CausalClass::Lightlike
    }
}

/// A 4×4 matrix acting on contravariant components, `x'^μ = Λ^μ_ν x^ν`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LorentzTransform {
    m: [[f64; 4]; 4],
}

impl LorentzTransform {
    pub fn identity() -> Self {
        let mut m = [[0.0; 4]; 4];
        for (i, row) in m.iter_mut().enumerate() {
            row[i] = 1.0;
        }
        LorentzTransform { m }
    }

    /// Wraps a raw matrix after checking `ΛᵀgΛ = g` entrywise within 1e-12.
    pub fn from_matrix(m: [[f64; 4]; 4]) -> Result<Self> {
        let l = LorentzTransform { m };
        let defect = l.metric_defect();
        if defect.is_finite() && defect <= 1e-12 {
            Ok(l)
        } else {
            Err(Error::NotLorentz(defect))
        }
    }

    pub fn matrix(&self) -> &[[f64; 4]; 4] {
        &self.m
    }

    pub fn apply(&self, v: &FourVector) -> FourVector {
        FourVector(std::array::from_fn(|i| {
            (0..4).map(|j| self.m[i][j] * v.0[j]).sum()
        }))
    }

    /// `self ∘ other`.
    pub fn compose(&self, other: &LorentzTransform) -> LorentzTransform {
        let mut m = [[0.0; 4]; 4];
        for (i, row) in m.iter_mut().enumerate() {
            for (j, e) in row.iter_mut().enumerate() {
                *e = (0..4).map(|k| self.m[i][k] * other.m[k][j]).sum();
            }
        }
        LorentzTransform { m }
    }

    /// Largest entry of `|ΛᵀgΛ − g|`.
    pub fn metric_defect(&self) -> f64 {
        let mut worst = 0.0f64;
        for i in 0..4 {
            for j in 0..4 {
                let s: f64 = (0..4).map(|k| self.m[k][i] * METRIC[k] * self.m[k][j]).sum();
                let g = if i == j { METRIC[i] } else { 0.0 };
                worst = worst.max((s - g).abs());
            }
        }
        worst
    }
}

/// Active pure boost with 3-velocity `beta`.
pub fn boost(beta: [f64; 3]) -> Result<LorentzTransform> {
    if beta.iter().any(|b| !b.is_finite()) {
        return Err(Error::NonFinite("boost velocity"));
    }
    let b2: f64 = beta.iter().map(|b| b * b).sum();
    let speed = b2.sqrt();
    if speed >= 1.0 - 1e-12 {
        return Err(Error::SpeedNotSubluminal(speed));
    }
    let gamma = 1.0 / (1.0 - b2).sqrt();
    let mut m = [[0.0; 4]; 4];
    m[0][0] = gamma;
    for i in 0..3 {
        m[0][i + 1] = gamma * beta[i];
        m[i + 1][0] = gamma * beta[i];
        for j in 0..3 {
            let delta = if i == j { 1.0 } else { 0.0 };
            // (γ−1)/β² written as γ²/(γ+1) to stay finite at β → 0
            m[i + 1][j + 1] = delta + gamma * gamma / (gamma + 1.0) * beta[i] * beta[j];
        }
    }
    Ok(LorentzTransform { m })
}

/// Flat spacelike hypersurface `{ x : n·x = τ }` with future-pointing unit normal.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Hypersurface {
    normal: FourVector,
    offset: f64,
}

impl Hypersurface {
    pub fn new(normal: FourVector, offset: f64) -> Result<Self> {
        if !normal.is_finite() || !offset.is_finite() {
            return Err(Error::NonFinite("hypersurface"));
        }
        let nn = normal.norm_sqr();
        if (nn - 1.0).abs() > 1e-12 || normal.t() <= 0.0 {
            return Err(Error::BadNormal { norm_sqr: nn, n0: normal.t() });
        }
        Ok(Hypersurface { normal, offset })
    }

    /// Constant-time surface `t = τ` of the lab frame.
    pub fn lab(t: f64) -> Self {
        Hypersurface { normal: FourVector([1.0, 0.0, 0.0, 0.0]), offset: t }
    }

    /// Surface with normal `Λ(1,0,0,0)` for the boost with velocity `beta`.
    pub fn boosted(beta: [f64; 3], offset: f64) -> Result<Self> {
        let n = boost(beta)?.apply(&FourVector([1.0, 0.0, 0.0, 0.0]));
        Hypersurface::new(n, offset)
    }

    pub fn normal(&self) -> FourVector {
        self.normal
    }

    pub fn offset(&self) -> f64 {
        self.offset
    }

    pub fn signed_distance(&self, x: &FourVector) -> f64 {
        signed_distance(self, x)
    }

    /// Orthonormal spatial basis `e₁, e₂, e₃` tangent to the surface
    /// (each `eᵢ·eᵢ = −1`, `eᵢ·n = 0`). For the lab surface it is the
    /// coordinate basis; otherwise it is the image of the coordinate basis
    /// under the pure boost taking `(1,0,0,0)` to `n`.
    pub fn tangent_basis(&self) -> [FourVector; 3] {
        let n = self.normal.0;
        let gamma = n[0];
        let beta = [n[1] / gamma, n[2] / gamma, n[3] / gamma];
        // β is strictly subluminal because n is unit timelike and future-pointing
        let l = boost(beta).unwrap_or_else(|_| LorentzTransform::identity());
        std::array::from_fn(|i| {
            let mut e = [0.0; 4];
            e[i + 1] = 1.0;
            l.apply(&FourVector(e))
        })
    }

    /// Point of the surface with adapted coordinates `u`:
    /// `τ·n + Σ uᵢ eᵢ`.
    pub fn embed(&self, u: [f64; 3]) -> FourVector {
        let e = self.tangent_basis();
        let mut x = self.normal.scale(self.offset);
        for i in 0..3 {
            x = x + e[i].scale(u[i]);
        }
        x
    }

    /// Adapted coordinates of the projection of `x` onto the surface.
    pub fn coordinates(&self, x: &FourVector) -> [f64; 3] {
        let e = self.tangent_basis();
        std::array::from_fn(|i| -minkowski_dot(x, &e[i]))
    }
}

/// `n·x − τ`; positive to the future of the surface.
pub fn signed_distance(sigma: &Hypersurface, x: &FourVector) -> f64 {
    minkowski_dot(&sigma.normal, x) - sigma.offset
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn dot_examples() {
        let e0 = FourVector([1.0, 0.0, 0.0, 0.0]);
        assert_eq!(minkowski_dot(&e0, &e0), 1.0);
        let l = FourVector([1.0, 1.0, 0.0, 0.0]);
        assert_eq!(minkowski_dot(&l, &l), 0.0);
        let p = FourVector([2f64.sqrt(), 1.0, 0.0, 0.0]);
        assert!((minkowski_dot(&p, &p) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn constructor_rejects_nan() {
        assert!(FourVector::new(f64::NAN, 0.0, 0.0, 0.0).is_err());
        assert!(FourVector::new(0.0, f64::INFINITY, 0.0, 0.0).is_err());
    }

    #[test]
    fn boost_examples() {
        let id = boost([0.0; 3]).unwrap();
        assert_eq!(id, LorentzTransform::identity());
        let b = boost([0.6, 0.0, 0.0]).unwrap();
        let x = b.apply(&FourVector([1.0, 0.0, 0.0, 0.0]));
        assert!((x[0] - 1.25).abs() < 1e-14);
        assert!((x[1] - 0.75).abs() < 1e-14);
        assert!(b.metric_defect() < 1e-12);
        assert!(b.matrix()[0][0] >= 1.0);
    }

    #[test]
    fn boost_rejects_superluminal() {
        assert!(matches!(boost([1.0, 0.0, 0.0]), Err(Error::SpeedNotSubluminal(_))));
        assert!(matches!(boost([0.6, 0.8, 0.0]), Err(Error::SpeedNotSubluminal(_))));
        assert!(boost([0.6, 0.79, 0.0]).is_ok());
    }

    #[test]
    fn causal_examples() {
        let s = 2f64.sqrt();
        assert_eq!(causal_class(&FourVector([2.0 * s, 2.0, 0.0, 0.0]), 1e-9), CausalClass::Timelike);
        assert_eq!(causal_class(&FourVector([1.0, 1.0, 0.0, 0.0]), 1e-9), CausalClass::Lightlike);
        assert_eq!(causal_class(&FourVector([0.1, 1.0, 0.0, 0.0]), 1e-9), CausalClass::Spacelike);
    }

    #[test]
    fn signed_distance_examples() {
        let lab2 = Hypersurface::lab(2.0);
        assert_eq!(lab2.signed_distance(&FourVector([2.0, 5.0, 0.0, 0.0])), 0.0);
        let lab0 = Hypersurface::lab(0.0);
        assert_eq!(lab0.signed_distance(&FourVector([3.0, 1.0, 0.0, 0.0])), 3.0);
        let moving = Hypersurface::boosted([0.6, 0.0, 0.0], 0.0).unwrap();
        let d = moving.signed_distance(&FourVector([1.0, 1.0, 0.0, 0.0]));
        assert!((d - 0.5).abs() < 1e-14);
    }

    #[test]
    fn hypersurface_validation() {
        assert!(Hypersurface::new(FourVector([1.0, 0.1, 0.0, 0.0]), 0.0).is_err());
        assert!(Hypersurface::new(FourVector([-1.0, 0.0, 0.0, 0.0]), 0.0).is_err());
    }

    #[test]
    fn embedding_lies_on_surface() {
        let s = Hypersurface::boosted([0.3, -0.2, 0.5], 1.7).unwrap();
        let u = [0.4, -1.1, 2.0];
        let x = s.embed(u);
        assert!(s.signed_distance(&x).abs() < 1e-12);
        let back = s.coordinates(&x);
        for i in 0..3 {
            assert!((back[i] - u[i]).abs() < 1e-12);
        }
        for e in s.tangent_basis() {
            assert!((e.norm_sqr() + 1.0).abs() < 1e-12);
            assert!(e.dot(&s.normal()).abs() < 1e-12);
        }
    }

    fn beta_strategy() -> impl Strategy<Value = [f64; 3]> {
        (-0.55f64..0.55, -0.55f64..0.55, -0.55f64..0.55).prop_map(|(a, b, c)| [a, b, c])
    }

    fn vec_strategy() -> impl Strategy<Value = FourVector> {
        prop::array::uniform4(-10.0f64..10.0).prop_map(FourVector)
    }

    proptest! {
        #[test]
        fn boost_preserves_products(beta in beta_strategy(), a in vec_strategy(), b in vec_strategy()) {
            let l = boost(beta).unwrap();
            prop_assert!(l.metric_defect() < 1e-12);
            let before = a.dot(&b);
            let after = l.apply(&a).dot(&l.apply(&b));
            prop_assert!((before - after).abs() < 1e-10 * (1.0 + before.abs()));
        }

        #[test]
        fn boost_inverse(beta in beta_strategy()) {
            let l = boost(beta).unwrap();
            let inv = boost(beta.map(|b| -b)).unwrap();
            let id = l.compose(&inv);
            for i in 0..4 {
                for j in 0..4 {
                    let want = if i == j { 1.0 } else { 0.0 };
                    prop_assert!((id.matrix()[i][j] - want).abs() < 1e-10);
                }
            }
        }

        #[test]
        fn causal_class_is_boost_invariant(beta in beta_strategy(), v in vec_strategy()) {
            let tol = 1e-9;
            // keep clear of the lightlike band, where a 10× margin decides
            prop_assume!(v.norm_sqr().abs() > 10.0 * tol || v.norm_sqr().abs() < tol / 10.0);
            let l = boost(beta).unwrap();
            prop_assert_eq!(causal_class(&v, tol), causal_class(&l.apply(&v), tol * 10.0));
        }
    }
}

//! Dormand-Prince 5(4) stepper with PI step-size control and the standard
//! fourth-order continuous extension.

// Butcher tableau
const C2: f64 = 0.2;
const C3: f64 = 0.3;
const C4: f64 = 0.8;
const C5: f64 = 8.0 / 9.0;

const A21: f64 = 0.2;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const A71: f64 = 35.0 / 384.0;
const A73: f64 = 500.0 / 1113.0;
const A74: f64 = 125.0 / 192.0;
const A75: f64 = -2187.0 / 6784.0;
const A76: f64 = 11.0 / 84.0;

// 5th minus 4th order weights
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;

// dense output
const D1: f64 = -12715105075.0 / 11282082432.0;
const D3: f64 = 87487479700.0 / 32700410799.0;
const D4: f64 = -10690763975.0 / 1880347072.0;
const D5: f64 = 701980252875.0 / 199316789632.0;
const D6: f64 = -1453857185.0 / 822651844.0;
const D7: f64 = 69997945.0 / 29380423.0;

// PI controller constants (Hairer & Wanner defaults)
const SAFETY: f64 = 0.9;
const BETA: f64 = 0.04;
const FAC_MIN: f64 = 0.2;
const FAC_MAX: f64 = 10.0;
const EXPO: f64 = 0.2 - BETA * 0.75;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepControl {
    pub rtol: f64,
    pub atol: f64,
    pub max_step: f64,
    pub min_step: f64,
}

/// Continuous extension of one accepted step, `y(s₀ + θh)` for `θ ∈ [0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseSegment {
    pub s0: f64,
    pub h: f64,
    rcont: [Vec<f64>; 5],
}

impl DenseSegment {
    pub fn s1(&self) -> f64 {
        self.s0 + self.h
    }

    pub fn eval_theta(&self, theta: f64) -> Vec<f64> {
        let t1 = 1.0 - theta;
        let [r1, r2, r3, r4, r5] = &self.rcont;
        (0..r1.len())
            .map(|i| r1[i] + theta * (r2[i] + t1 * (r3[i] + theta * (r4[i] + t1 * r5[i]))))
            .collect()
    }

    pub fn eval(&self, s: f64) -> Vec<f64> {
        self.eval_theta(((s - self.s0) / self.h).clamp(0.0, 1.0))
    }

    /// Applies a linear map blockwise to every 4-component chunk.
    pub fn map_blocks(&self, f: impl Fn(&[f64]) -> [f64; 4]) -> DenseSegment {
        let map = |v: &Vec<f64>| v.chunks_exact(4).flat_map(&f).collect::<Vec<f64>>();
        DenseSegment {
            s0: self.s0,
            h: self.h,
            rcont: [map(&self.rcont[0]), map(&self.rcont[1]), map(&self.rcont[2]), map(&self.rcont[3]), map(&self.rcont[4])],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum StepError<E> {
    /// Right-hand side failed and shrinking the step could not avoid it.
    Rhs(E),
    /// Step size fell below `min_step`.
    Underflow(f64),
}

/// One accepted step.
#[derive(Clone, Debug)]
pub struct Accepted {
    pub s: f64,
    pub y: Vec<f64>,
    pub f: Vec<f64>,
    pub dense: DenseSegment,
}

pub struct Stepper<F> {
    rhs: F,
    ctl: StepControl,
    s: f64,
    y: Vec<f64>,
    f: Vec<f64>,
    h: f64,
    err_old: f64,
    pub evaluations: usize,
}

fn axpy(y: &[f64], h: f64, terms: &[(f64, &[f64])]) -> Vec<f64> {
    let mut out = y.to_vec();
    for &(c, k) in terms {
        if c != 0.0 {
            for (o, ki) in out.iter_mut().zip(k) {
                *o += h * c * ki;
            }
        }
    }
    out
}

impl<F, E> Stepper<F>
where
    F: FnMut(f64, &[f64]) -> Result<Vec<f64>, E>,
{
    pub fn new(mut rhs: F, s0: f64, y0: Vec<f64>, ctl: StepControl) -> Result<Self, E> {
        let f = rhs(s0, &y0)?;
        let h = initial_step(&y0, &f, &ctl);
        Ok(Stepper { rhs, ctl, s: s0, y: y0, f, h, err_old: 1e-4, evaluations: 1 })
    }

    pub fn s(&self) -> f64 {
        self.s
    }

    pub fn y(&self) -> &[f64] {
        &self.y
    }

    pub fn f(&self) -> &[f64] {
        &self.f
    }

    fn error_norm(&self, y0: &[f64], y1: &[f64], err: &[f64]) -> f64 {
        let n = y0.len() as f64;
        let sum: f64 = (0..y0.len())
            .map(|i| {
                let sc = self.ctl.atol + self.ctl.rtol * y0[i].abs().max(y1[i].abs());
                (err[i] / sc).powi(2)
            })
            .sum();
        (sum / n).sqrt()
    }

    /// Takes one accepted step that does not pass `s_end`.
    pub fn step(&mut self, s_end: f64) -> Result<Accepted, StepError<E>> {
        let mut rhs_failures = 0usize;
        loop {
            let remaining = s_end - self.s;
            let mut h = self.h.min(self.ctl.max_step);
            let last = h >= remaining;
            if last {
                h = remaining;
            }
            if h < self.ctl.min_step && !last {
                return Err(StepError::Underflow(self.s));
            }
            let stages = self.try_step(h);
            let (y1, f1, k, err) = match stages {
                Ok(v) => v,
                Err(e) => {
                    rhs_failures += 1;
                    self.h = h * 0.25;
                    if rhs_failures > 40 || self.h < self.ctl.min_step {
                        return Err(StepError::Rhs(e));
                    }
                    continue;
                }
            };
            let err_norm = self.error_norm(&self.y, &y1, &err);
            if !err_norm.is_finite() {
                self.h = h * FAC_MIN;
                continue;
            }
            let fac11 = err_norm.powf(EXPO);
            if err_norm <= 1.0 {
                let mut fac = fac11 / self.err_old.powf(BETA);
                fac = (fac / SAFETY).clamp(1.0 / FAC_MAX, 1.0 / FAC_MIN);
                self.err_old = err_norm.max(1e-4);
                let dense = self.dense(h, &y1, &f1, &k);
                let s_new = if last { s_end } else { self.s + h };
                self.s = s_new;
                self.y = y1;
                self.f = f1;
                // keep the controller's proposal even when the step was clipped
                self.h = if last { self.h.max(h) } else { h / fac };
                return Ok(Accepted { s: self.s, y: self.y.clone(), f: self.f.clone(), dense });
            }
            self.h = h / (1.0 / FAC_MIN).min(fac11 / SAFETY);
            if self.h < self.ctl.min_step {
                return Err(StepError::Underflow(self.s));
            }
        }
    }

    #[allow(clippy::type_complexity)]
    fn try_step(&mut self, h: f64) -> Result<(Vec<f64>, Vec<f64>, [Vec<f64>; 6], Vec<f64>), E> {
        let s = self.s;
        let y = &self.y;
        let k1 = self.f.clone();
        let k2 = (self.rhs)(s + C2 * h, &axpy(y, h, &[(A21, &k1)]))?;
        let k3 = (self.rhs)(s + C3 * h, &axpy(y, h, &[(A31, &k1), (A32, &k2)]))?;
        let k4 = (self.rhs)(s + C4 * h, &axpy(y, h, &[(A41, &k1), (A42, &k2), (A43, &k3)]))?;
        let k5 = (self.rhs)(s + C5 * h, &axpy(y, h, &[(A51, &k1), (A52, &k2), (A53, &k3), (A54, &k4)]))?;
        let k6 = (self.rhs)(s + h, &axpy(y, h, &[(A61, &k1), (A62, &k2), (A63, &k3), (A64, &k4), (A65, &k5)]))?;
        let y1 = axpy(y, h, &[(A71, &k1), (A73, &k3), (A74, &k4), (A75, &k5), (A76, &k6)]);
        let k7 = (self.rhs)(s + h, &y1)?;
        self.evaluations += 6;
        let err: Vec<f64> = (0..y.len())
            .map(|i| h * (E1 * k1[i] + E3 * k3[i] + E4 * k4[i] + E5 * k5[i] + E6 * k6[i] + E7 * k7[i]))
            .collect();
        Ok((y1, k7.clone(), [k1, k3, k4, k5, k6, k7], err))
    }

    fn dense(&self, h: f64, y1: &[f64], _f1: &[f64], k: &[Vec<f64>; 6]) -> DenseSegment {
        let y0 = &self.y;
        let [k1, k3, k4, k5, k6, k7] = k;
        let n = y0.len();
        let r1 = y0.clone();
        let r2: Vec<f64> = (0..n).map(|i| y1[i] - y0[i]).collect();
        let r3: Vec<f64> = (0..n).map(|i| h * k1[i] - r2[i]).collect();
        let r4: Vec<f64> = (0..n).map(|i| r2[i] - h * k7[i] - r3[i]).collect();
        let r5: Vec<f64> = (0..n)
            .map(|i| h * (D1 * k1[i] + D3 * k3[i] + D4 * k4[i] + D5 * k5[i] + D6 * k6[i] + D7 * k7[i]))
            .collect();
        DenseSegment { s0: self.s, h, rcont: [r1, r2, r3, r4, r5] }
    }
}

fn initial_step(y: &[f64], f: &[f64], ctl: &StepControl) -> f64 {
    let n = y.len().max(1) as f64;
    let d0 = (y.iter().map(|v| (v / (ctl.atol + ctl.rtol * v.abs())).powi(2)).sum::<f64>() / n).sqrt();
    let d1 = (f
        .iter()
        .zip(y)
        .map(|(fi, v)| (fi / (ctl.atol + ctl.rtol * v.abs())).powi(2))
        .sum::<f64>()
        / n)
        .sqrt();
    let h = if d0 < 1e-5 || d1 < 1e-5 { 1e-6 } else { 0.01 * d0 / d1 };
    h.clamp(ctl.min_step.max(1e-10), ctl.max_step)
}

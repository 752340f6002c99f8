//! Coefficient functions `a`, `b`, `d`, `h` and the drift/diffusion ratio.
//!
//! The ratio `R = d / a` is never computed by division at run time. Each
//! supported `(a, d)` pairing has a closed-form reduction chosen when the
//! set is built, so zeros of `a` that are cancelled by zeros of `d` are
//! resolved algebraically. Pairings without such a reduction are rejected
//! at construction.
//!
//! Power-law diffusions use the odd extension `a(u) = C sgn(u) |u|^gamma`,
//! which keeps `R^2 = (4/C^2) |u|^(2(1-gamma)) (u^4 - 2u^2 + 1)` for the
//! Allen-Cahn drift on the whole real line.

use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};
use crate::grid::Grid;

/// Diffusion coefficient `a(t, x, u)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Diffusion {
    Constant(f64),
    /// `scale * sgn(u) * |u|^exponent`; `exponent = 1` is the linear case `scale * u`.
    Power { scale: f64, exponent: f64 },
}

/// A drift term (`b` or `d`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Drift {
    Zero,
    Constant(f64),
    /// `scale * 2u(1 - u^2)`; `scale = 1` is the Allen-Cahn reaction term.
    AllenCahn { scale: f64 },
}

/// Initial condition `h(x)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum InitialCondition {
    Constant(f64),
    /// `amplitude * cos(mode * pi * x / length)`.
    Cosine {
        amplitude: f64,
        mode: u32,
        length: f64,
    },
}

/// Closed-form reduction of `d / a`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Ratio {
    Zero,
    Constant(f64),
    /// `factor * u * (1 - u^2)`: cubic drift over a constant diffusion.
    Cubic { factor: f64 },
    /// `factor * |u|^exponent * (1 - u^2)`: cubic drift over a power diffusion
    /// with `u^gamma` cancelled into `|u|^(1 - gamma)`.
    ReducedPower { factor: f64, exponent: f64 },
    /// `numerator / (sgn(u) |u|^exponent)`, infinite at `u = 0`. Only built on
    /// explicit request, for diagnostics.
    Singular { numerator: f64, exponent: f64 },
}

/// `|x|^e` with exact fast paths for the exponents the presets use.
#[inline]
pub(crate) fn abs_pow(x: f64, e: f64) -> f64 {
    let x = x.abs();
    if e == 0.0 {
        1.0
    } else if e == 1.0 {
        x
    } else if e == 0.5 {
        x.sqrt()
    } else if e == 0.25 {
        x.sqrt().sqrt()
    } else if e == 0.75 {
        let s = x.sqrt();
        s * s.sqrt()
    } else {
        x.powf(e)
    }
}

/// [`abs_pow`] over a slice, dispatching on the exponent once.
fn abs_pow_into(u: &[f64], e: f64, out: &mut [f64]) {
    let pairs = out.iter_mut().zip(u);
    if e == 0.0 {
        out.fill(1.0);
    } else if e == 1.0 {
        pairs.for_each(|(o, v)| *o = v.abs());
    } else if e == 0.5 {
        pairs.for_each(|(o, v)| *o = v.abs().sqrt());
    } else if e == 0.25 {
        pairs.for_each(|(o, v)| *o = v.abs().sqrt().sqrt());
    } else if e == 0.75 {
        pairs.for_each(|(o, v)| {
            let s = v.abs().sqrt();
            *o = s * s.sqrt();
        });
    } else {
        pairs.for_each(|(o, v)| *o = v.abs().powf(e));
    }
}

/// `sgn(u) |u|^e` from `p = |u|^e`. For `e > 0` a copysign, which is
/// exact and vectorizes; `sgn(0) = 0` only matters when `e = 0`.
#[inline]
fn signed_pow(u: f64, e: f64, p: f64) -> f64 {
    if e > 0.0 {
        p.copysign(u)
    } else {
        sign(u) * p
    }
}

#[inline]
fn sign(u: f64) -> f64 {
    if u > 0.0 {
        1.0
    } else if u < 0.0 {
        -1.0
    } else {
        0.0
    }
}

impl Diffusion {
    #[inline]
    pub fn eval(&self, u: f64) -> f64 {
        match *self {
            Diffusion::Constant(a) => a,
            Diffusion::Power { scale, exponent } => {
                if exponent == 1.0 {
                    scale * u
                } else {
                    scale * signed_pow(u, exponent, abs_pow(u, exponent))
                }
            }
        }
    }

    /// [`Self::eval`] at every entry of `u`.
    pub fn eval_into(&self, u: &[f64], out: &mut [f64]) {
        match *self {
            Diffusion::Constant(a) => out.fill(a),
            Diffusion::Power { scale, exponent } if exponent == 1.0 => {
                out.iter_mut().zip(u).for_each(|(o, v)| *o = scale * v)
            }
            Diffusion::Power { scale, exponent } => {
                abs_pow_into(u, exponent, out);
                if exponent > 0.0 {
                    out.iter_mut().zip(u).for_each(|(o, &v)| *o = scale * o.copysign(v));
                } else {
                    out.iter_mut().zip(u).for_each(|(o, &v)| *o = scale * signed_pow(v, exponent, *o));
                }
            }
        }
    }

    pub fn is_zero(&self) -> bool {
        matches!(*self, Diffusion::Constant(a) if a == 0.0)
            || matches!(*self, Diffusion::Power { scale, .. } if scale == 0.0)
    }
}

impl Drift {
    #[inline]
    pub fn eval(&self, u: f64) -> f64 {
        match *self {
            Drift::Zero => 0.0,
            Drift::Constant(c) => c,
            Drift::AllenCahn { scale } => scale * 2.0 * u * (1.0 - u * u),
        }
    }

    /// [`Self::eval`] at every entry of `u`.
    pub fn eval_into(&self, u: &[f64], out: &mut [f64]) {
        match *self {
            Drift::Zero => out.fill(0.0),
            Drift::Constant(c) => out.fill(c),
            Drift::AllenCahn { scale } => out
                .iter_mut()
                .zip(u)
                .for_each(|(o, &v)| *o = scale * 2.0 * v * (1.0 - v * v)),
        }
    }

    /// Adds [`Self::eval`] to every entry of `acc`.
    pub fn add_into(&self, u: &[f64], acc: &mut [f64]) {
        match *self {
            Drift::Zero => acc.iter_mut().for_each(|o| *o += 0.0),
            Drift::Constant(c) => acc.iter_mut().for_each(|o| *o += c),
            Drift::AllenCahn { scale } => acc
                .iter_mut()
                .zip(u)
                .for_each(|(o, &v)| *o += scale * 2.0 * v * (1.0 - v * v)),
        }
    }

    pub fn is_zero(&self) -> bool {
        match *self {
            Drift::Zero => true,
            Drift::Constant(c) => c == 0.0,
            Drift::AllenCahn { scale } => scale == 0.0,
        }
    }

    pub fn scaled(&self, lambda: f64) -> Drift {
        match *self {
            Drift::Zero => Drift::Zero,
            Drift::Constant(c) => Drift::Constant(lambda * c),
            Drift::AllenCahn { scale } => Drift::AllenCahn {
                scale: lambda * scale,
            },
        }
    }
}

impl InitialCondition {
    pub fn eval(&self, x: f64) -> f64 {
        match *self {
            InitialCondition::Constant(v) => v,
            InitialCondition::Cosine {
                amplitude,
                mode,
                length,
            } => amplitude * (mode as f64 * std::f64::consts::PI * x / length).cos(),
        }
    }

    pub fn sup_abs(&self) -> f64 {
        match *self {
            InitialCondition::Constant(v) => v.abs(),
            InitialCondition::Cosine { amplitude, .. } => amplitude.abs(),
        }
    }
}

impl Ratio {
    /// Reduces `d / a`. With `allow_singular`, a constant drift over a power
    /// diffusion yields [`Ratio::Singular`] instead of an error.
    pub fn reduce(diffusion: &Diffusion, drift: &Drift, allow_singular: bool) -> Result<Ratio> {
        if drift.is_zero() {
            return Ok(Ratio::Zero);
        }
        match (*diffusion, *drift) {
            (_, Drift::Zero) => Ok(Ratio::Zero),
            (Diffusion::Constant(a), Drift::Constant(d)) if a != 0.0 => Ok(Ratio::Constant(d / a)),
            (Diffusion::Constant(a), Drift::AllenCahn { scale }) if a != 0.0 => Ok(Ratio::Cubic {
                factor: 2.0 * scale / a,
            }),
            (Diffusion::Constant(_), _) => Err(LabError::UndefinedRatio(
                "diffusion is identically zero but the drift perturbation is not".into(),
            )),
            (Diffusion::Power { scale, .. }, _) if scale == 0.0 => Err(LabError::UndefinedRatio(
                "diffusion is identically zero but the drift perturbation is not".into(),
            )),
            (Diffusion::Power { scale, exponent }, Drift::AllenCahn { scale: s }) => {
                if exponent > 1.0 {
                    return Err(LabError::UndefinedRatio(format!(
                        "|u|^(1 - gamma) with gamma = {exponent} is singular at u = 0"
                    )));
                }
                Ok(Ratio::ReducedPower {
                    factor: 2.0 * s / scale,
                    exponent: 1.0 - exponent,
                })
            }
            (Diffusion::Power { scale, exponent }, Drift::Constant(d)) => {
                if allow_singular {
                    Ok(Ratio::Singular {
                        numerator: d / scale,
                        exponent,
                    })
                } else {
                    Err(LabError::UndefinedRatio(format!(
                        "constant drift {d} over a diffusion vanishing at u = 0 has no reduction"
                    )))
                }
            }
        }
    }

    #[inline]
    pub fn eval(&self, u: f64) -> f64 {
        match *self {
            Ratio::Zero => 0.0,
            Ratio::Constant(r) => r,
            Ratio::Cubic { factor } => factor * u * (1.0 - u * u),
            Ratio::ReducedPower { factor, exponent } => {
                factor * abs_pow(u, exponent) * (1.0 - u * u)
            }
            Ratio::Singular {
                numerator,
                exponent,
            } => {
                let s = if u < 0.0 { -1.0 } else { 1.0 };
                numerator / (s * abs_pow(u, exponent))
            }
        }
    }

    /// [`Self::eval`] at every entry of `u`.
    pub fn eval_into(&self, u: &[f64], out: &mut [f64]) {
        match *self {
            Ratio::ReducedPower { factor, exponent } => {
                abs_pow_into(u, exponent, out);
                out.iter_mut()
                    .zip(u)
                    .for_each(|(o, &v)| *o = factor * *o * (1.0 - v * v));
            }
            Ratio::Cubic { factor } => out
                .iter_mut()
                .zip(u)
                .for_each(|(o, &v)| *o = factor * v * (1.0 - v * v)),
            _ => out.iter_mut().zip(u).for_each(|(o, &v)| *o = self.eval(v)),
        }
    }

    pub fn is_zero(&self) -> bool {
        matches!(self, Ratio::Zero) || matches!(*self, Ratio::Constant(r) if r == 0.0)
    }
}

/// Allen-Cahn parameters `C` and `gamma`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AllenCahnParams {
    pub c: f64,
    pub gamma: f64,
    /// Widens the accepted `gamma` range from `[1/2, 1]` to `[0, 1]`.
    pub allow_gamma_outside_theorem: bool,
}

impl AllenCahnParams {
    pub fn new(c: f64, gamma: f64) -> Self {
        Self {
            c,
            gamma,
            allow_gamma_outside_theorem: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !self.c.is_finite() || self.c == 0.0 {
            return Err(LabError::InvalidConfig(format!(
                "Allen-Cahn diffusion scale C must be finite and non-zero, got {}",
                self.c
            )));
        }
        let (lo, hi) = if self.allow_gamma_outside_theorem {
            (0.0, 1.0)
        } else {
            (0.5, 1.0)
        };
        if !(lo..=hi).contains(&self.gamma) {
            let hint = if self.allow_gamma_outside_theorem {
                String::new()
            } else {
                "; uniqueness in law is only established for gamma in [1/2, 1] \
                 (set allow_gamma_outside_theorem to explore [0, 1])"
                    .to_string()
            };
            return Err(LabError::InvalidConfig(format!(
                "gamma = {} outside [{lo}, {hi}]{hint}",
                self.gamma
            )));
        }
        Ok(())
    }

    pub fn outside_theorem(&self) -> bool {
        !(0.5..=1.0).contains(&self.gamma)
    }
}

/// The coefficient functions of one equation pair plus the reduced ratio.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoefficientSet {
    preset: String,
    diffusion: Diffusion,
    base_drift: Drift,
    perturbation: Drift,
    initial: InitialCondition,
    ratio: Ratio,
}

impl CoefficientSet {
    pub fn new(
        preset: impl Into<String>,
        diffusion: Diffusion,
        base_drift: Drift,
        perturbation: Drift,
        initial: InitialCondition,
    ) -> Result<Self> {
        let ratio = Ratio::reduce(&diffusion, &perturbation, false)?;
        Ok(Self {
            preset: preset.into(),
            diffusion,
            base_drift,
            perturbation,
            initial,
            ratio,
        })
    }

    /// Like [`CoefficientSet::new`] but keeps pairings whose ratio blows up at
    /// a zero of `a`. Such sets are meant for [`validate`], not simulation.
    pub fn new_allowing_singular_ratio(
        preset: impl Into<String>,
        diffusion: Diffusion,
        base_drift: Drift,
        perturbation: Drift,
        initial: InitialCondition,
    ) -> Result<Self> {
        let ratio = Ratio::reduce(&diffusion, &perturbation, true)?;
        Ok(Self {
            preset: preset.into(),
            diffusion,
            base_drift,
            perturbation,
            initial,
            ratio,
        })
    }

    /// `a = C sgn(u)|u|^gamma`, `b = 0`, `d = 2u(1 - u^2)`.
    pub fn allen_cahn(params: AllenCahnParams, initial: InitialCondition) -> Result<Self> {
        params.validate()?;
        Self::new(
            "allen_cahn",
            Diffusion::Power {
                scale: params.c,
                exponent: params.gamma,
            },
            Drift::Zero,
            Drift::AllenCahn { scale: 1.0 },
            initial,
        )
    }

    /// Constant diffusion and no drift at all.
    pub fn zero_drift(a: f64, initial: InitialCondition) -> Result<Self> {
        Self::new(
            "zero_drift",
            Diffusion::Constant(a),
            Drift::Zero,
            Drift::Zero,
            initial,
        )
    }

    pub fn constant(a: f64, b: f64, d: f64, initial: InitialCondition) -> Result<Self> {
        Self::new(
            "constant",
            Diffusion::Constant(a),
            Drift::Constant(b),
            Drift::Constant(d),
            initial,
        )
    }

    /// `a = C u`, `b = 0`, `d` constant. Only `d = 0` has a total ratio.
    pub fn linear_walsh(c: f64, d: f64, initial: InitialCondition) -> Result<Self> {
        if !c.is_finite() || c == 0.0 {
            return Err(LabError::InvalidConfig(format!(
                "linear diffusion scale C must be finite and non-zero, got {c}"
            )));
        }
        Self::new(
            "linear_walsh",
            Diffusion::Power {
                scale: c,
                exponent: 1.0,
            },
            Drift::Zero,
            Drift::Constant(d),
            initial,
        )
    }

    /// Same `a`, `b`, `h` with a different perturbation `d`.
    pub fn with_perturbation(&self, perturbation: Drift) -> Result<Self> {
        Self::new(
            self.preset.clone(),
            self.diffusion,
            self.base_drift,
            perturbation,
            self.initial,
        )
    }

    pub fn with_initial(&self, initial: InitialCondition) -> Self {
        Self {
            initial,
            ..self.clone()
        }
    }

    pub fn preset(&self) -> &str {
        &self.preset
    }

    pub fn diffusion(&self) -> Diffusion {
        self.diffusion
    }

    pub fn base_drift(&self) -> Drift {
        self.base_drift
    }

    pub fn perturbation(&self) -> Drift {
        self.perturbation
    }

    pub fn initial(&self) -> InitialCondition {
        self.initial
    }

    pub fn ratio_form(&self) -> Ratio {
        self.ratio
    }

    #[inline]
    pub fn a(&self, _t: f64, _x: f64, u: f64) -> f64 {
        self.diffusion.eval(u)
    }

    #[inline]
    pub fn b(&self, _t: f64, _x: f64, u: f64) -> f64 {
        self.base_drift.eval(u)
    }

    #[inline]
    pub fn d(&self, _t: f64, _x: f64, u: f64) -> f64 {
        self.perturbation.eval(u)
    }

    /// `b` or `b + d`.
    #[inline]
    pub fn drift(&self, t: f64, x: f64, u: f64, include_d: bool) -> f64 {
        if include_d {
            self.b(t, x, u) + self.d(t, x, u)
        } else {
            self.b(t, x, u)
        }
    }

    /// [`Self::a`] at every entry of `u`; coefficients do not depend on
    /// `(t, x)`.
    pub fn a_into(&self, u: &[f64], out: &mut [f64]) {
        self.diffusion.eval_into(u, out)
    }

    /// [`Self::drift`] at every entry of `u`.
    pub fn drift_into(&self, u: &[f64], include_d: bool, out: &mut [f64]) {
        self.base_drift.eval_into(u, out);
        if include_d {
            self.perturbation.add_into(u, out);
        }
    }

    /// [`Self::drift_ratio`] at every entry of `u`.
    pub fn ratio_into(&self, u: &[f64], out: &mut [f64]) {
        self.ratio.eval_into(u, out)
    }

    pub fn h(&self, x: f64) -> f64 {
        self.initial.eval(x)
    }

    /// The reduced ratio `R(t, x, u) = d / a`.
    #[inline]
    pub fn drift_ratio(&self, _t: f64, _x: f64, u: f64) -> f64 {
        self.ratio.eval(u)
    }

    /// True when `R` vanishes identically, so every log-weight is exactly 0.
    pub fn ratio_is_zero(&self) -> bool {
        self.ratio.is_zero()
    }

    /// Modeling choices worth echoing next to results.
    pub fn modeling_notes(&self) -> Vec<String> {
        let mut notes = Vec::new();
        if let Diffusion::Power { exponent, .. } = self.diffusion {
            if exponent != 1.0 {
                notes.push(format!(
                    "a(u) = C sgn(u) |u|^{exponent} (odd extension to negative u)"
                ));
            }
            if !(0.5..=1.0).contains(&exponent) {
                notes.push(format!(
                    "gamma = {exponent} lies outside [1/2, 1], where uniqueness in law of the driftless equation is not established"
                ));
            }
        }
        if matches!(self.ratio, Ratio::Singular { .. }) {
            notes.push("R = d / a is singular at u = 0".to_string());
        }
        notes
    }
}

/// Sup of `|R|` over a deterministic sample of `(t, x, u)`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RatioReport {
    pub sup_abs_ratio: f64,
    pub argmax_t: f64,
    pub argmax_x: f64,
    pub argmax_u: f64,
    /// Heuristic: `false` when `|R|` is non-finite somewhere or grows sharply
    /// when the sample is refined towards zeros of `a`.
    pub bounded: bool,
    pub samples: usize,
}

const VALIDATE_U_POINTS: usize = 2001;
const VALIDATE_TX_POINTS: usize = 5;

/// Checks whether `R` is bounded on `[0, T] x [0, L] x u_range`; a uniformly
/// bounded ratio satisfies Novikov's condition for any predictable field.
pub fn validate(coeffs: &CoefficientSet, grid: &Grid, u_range: (f64, f64)) -> Result<RatioReport> {
    let (lo, hi) = u_range;
    if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
        return Err(LabError::InvalidConfig(format!(
            "u_range must be a finite interval, got [{lo}, {hi}]"
        )));
    }
    let ts: Vec<f64> = (0..VALIDATE_TX_POINTS)
        .map(|i| grid.t_final() * i as f64 / (VALIDATE_TX_POINTS - 1) as f64)
        .collect();
    let xs: Vec<f64> = (0..VALIDATE_TX_POINTS)
        .map(|i| grid.length() * i as f64 / (VALIDATE_TX_POINTS - 1) as f64)
        .collect();
    let mut coarse: Vec<f64> = (0..VALIDATE_U_POINTS)
        .map(|i| lo + (hi - lo) * i as f64 / (VALIDATE_U_POINTS - 1) as f64)
        .collect();
    // probe the zero of a power diffusion at several distances
    let mut fine = Vec::new();
    if lo <= 0.0 && 0.0 <= hi {
        coarse.push(0.0);
        for p in 1..=12 {
            let eps = 10f64.powi(-p);
            for u in [-eps, eps] {
                if lo <= u && u <= hi {
                    fine.push(u);
                }
            }
        }
    }

    let mut report = RatioReport {
        sup_abs_ratio: 0.0,
        argmax_t: ts[0],
        argmax_x: xs[0],
        argmax_u: lo,
        bounded: true,
        samples: 0,
    };
    let scan = |us: &[f64], report: &mut RatioReport| {
        for &t in &ts {
            for &x in &xs {
                for &u in us {
                    let r = coeffs.drift_ratio(t, x, u).abs();
                    report.samples += 1;
                    if r.is_nan() || r > report.sup_abs_ratio {
                        report.sup_abs_ratio = if r.is_nan() { f64::INFINITY } else { r };
                        report.argmax_t = t;
                        report.argmax_x = x;
                        report.argmax_u = u;
                    }
                }
            }
        }
    };
    scan(&coarse, &mut report);
    let coarse_sup = report.sup_abs_ratio;
    scan(&fine, &mut report);
    let refined_sup = report.sup_abs_ratio;
    report.bounded = refined_sup.is_finite() && refined_sup <= 10.0 * coarse_sup.max(1.0);
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn ac(c: f64, gamma: f64) -> CoefficientSet {
        CoefficientSet::allen_cahn(AllenCahnParams::new(c, gamma), InitialCondition::Constant(0.5))
            .unwrap()
    }

    /// Squared ratio written out term by term, as a reference.
    fn squared_ratio_reference(c: f64, gamma: f64, u: f64) -> f64 {
        4.0 / (c * c) * u.abs().powf(2.0 * (1.0 - gamma)) * (u.powi(4) - 2.0 * u * u + 1.0)
    }

    #[test]
    fn allen_cahn_ratio_examples() {
        for &(c, g) in &[(1.0, 0.5), (-2.0, 0.75), (3.0, 1.0)] {
            assert_eq!(ac(c, g).drift_ratio(0.0, 0.0, 1.0), 0.0);
        }
        assert_eq!(ac(1.0, 0.5).drift_ratio(0.0, 0.0, 0.0), 0.0);
        assert_eq!(ac(7.0, 0.5).drift_ratio(0.0, 0.0, 0.0), 0.0);
        assert_relative_eq!(ac(2.0, 1.0).drift_ratio(0.0, 0.0, 2.0), -3.0);
        assert_eq!(ac(1.0, 0.75).drift_ratio(0.0, 0.0, 1.0), 0.0);
    }

    #[test]
    fn allen_cahn_rejects_bad_params() {
        let h = InitialCondition::Constant(0.5);
        assert!(CoefficientSet::allen_cahn(AllenCahnParams::new(0.0, 0.75), h).is_err());
        assert!(CoefficientSet::allen_cahn(AllenCahnParams::new(1.0, 0.3), h).is_err());
        let mut p = AllenCahnParams::new(1.0, 0.3);
        p.allow_gamma_outside_theorem = true;
        let set = CoefficientSet::allen_cahn(p, h).unwrap();
        assert!(set
            .modeling_notes()
            .iter()
            .any(|n| n.contains("outside [1/2, 1]")));
        p.gamma = 1.2;
        assert!(CoefficientSet::allen_cahn(p, h).is_err());
    }

    #[test]
    fn squared_ratio_matches_closed_form() {
        for &gamma in &[0.5, 0.75, 1.0] {
            for &c in &[1.0, -0.5, 2.0] {
                let set = ac(c, gamma);
                for i in 0..=600 {
                    let u = -3.0 + 6.0 * i as f64 / 600.0;
                    let r = set.drift_ratio(0.0, 0.0, u);
                    let reference = squared_ratio_reference(c, gamma, u);
                    assert!(
                        (r * r - reference).abs() <= 1e-12 * reference.max(1e-300) + 1e-300,
                        "gamma={gamma} c={c} u={u}: {} vs {reference}",
                        r * r
                    );
                }
            }
        }
    }

    #[test]
    fn ratio_agrees_with_division_where_defined() {
        for &gamma in &[0.5, 0.6, 0.75, 1.0] {
            let set = ac(1.5, gamma);
            for i in 0..=1000 {
                let u = -3.0 + 6.0 * i as f64 / 1000.0;
                let a = set.a(0.0, 0.0, u);
                if a == 0.0 {
                    continue;
                }
                let r = set.drift_ratio(0.0, 0.0, u);
                let quotient = set.d(0.0, 0.0, u) / a;
                assert!((r - quotient).abs() <= 1e-12 * (1.0 + r.abs()));
            }
        }
        let set = CoefficientSet::constant(2.0, 0.0, 1.0, InitialCondition::Constant(0.0)).unwrap();
        for &u in &[-5.0, 0.0, 3.3] {
            assert_eq!(set.drift_ratio(0.1, 0.2, u), 0.5);
        }
        let set = CoefficientSet::zero_drift(1.0, InitialCondition::Constant(0.0)).unwrap();
        assert_eq!(set.drift_ratio(0.0, 0.0, 0.3), 0.0);
        assert!(set.ratio_is_zero());
    }

    #[test]
    fn ratio_times_diffusion_recovers_drift() {
        // holds at zeros of a as well, which is what drift absorption relies on
        for &gamma in &[0.5, 0.75, 1.0] {
            let set = ac(1.0, gamma);
            for &u in &[-1.5, -1.0, 0.0, 1e-9, 0.5, 1.0, 2.0] {
                let d = set.d(0.0, 0.0, u);
                let ar = set.a(0.0, 0.0, u) * set.drift_ratio(0.0, 0.0, u);
                assert!((d - ar).abs() <= 1e-12 * (1.0 + d.abs()), "u={u}");
            }
        }
    }

    #[test]
    fn ratio_is_continuous_for_fractional_gamma() {
        // |u|^e (1 - u^2) on [-3, 3] is Holder-e with constant well below 40
        for &gamma in &[0.5, 0.75] {
            let set = ac(1.0, gamma);
            let e = 1.0 - gamma;
            let n = 60_000;
            let h = 6.0 / n as f64;
            for i in 0..n {
                let u = -3.0 + i as f64 * h;
                let jump = (set.drift_ratio(0.0, 0.0, u + h) - set.drift_ratio(0.0, 0.0, u)).abs();
                assert!(jump <= 40.0 * h.powf(e), "jump {jump} at u={u}");
            }
        }
    }

    #[test]
    fn scaling_the_perturbation_scales_the_ratio() {
        for &lambda in &[-2.0, 0.5, 3.0] {
            for base in [ac(1.3, 0.75), CoefficientSet::constant(0.7, 0.1, 0.9, InitialCondition::Constant(0.0)).unwrap()] {
                let scaled = base.with_perturbation(base.perturbation().scaled(lambda)).unwrap();
                for i in 0..=100 {
                    let u = -2.0 + 0.04 * i as f64;
                    let lhs = scaled.drift_ratio(0.0, 0.0, u);
                    let rhs = lambda * base.drift_ratio(0.0, 0.0, u);
                    assert!((lhs - rhs).abs() <= 4.0 * f64::EPSILON * rhs.abs());
                }
            }
        }
    }

    #[test]
    fn undefined_ratio_rejected_at_construction() {
        let h = InitialCondition::Constant(0.0);
        assert!(matches!(
            CoefficientSet::linear_walsh(1.0, 1.0, h),
            Err(LabError::UndefinedRatio(_))
        ));
        assert!(CoefficientSet::linear_walsh(1.0, 0.0, h).is_ok());
        assert!(matches!(
            CoefficientSet::constant(0.0, 0.0, 1.0, h),
            Err(LabError::UndefinedRatio(_))
        ));
        assert!(CoefficientSet::constant(0.0, 1.0, 0.0, h).is_ok());
        assert!(CoefficientSet::linear_walsh(0.0, 0.0, h).is_err());
    }

    #[test]
    fn validate_reports() {
        let grid = Grid::new(1.0, 1.0, 10, 10).unwrap();
        let zero = CoefficientSet::zero_drift(1.0, InitialCondition::Constant(0.0)).unwrap();
        let rep = validate(&zero, &grid, (-2.0, 2.0)).unwrap();
        assert_eq!(rep.sup_abs_ratio, 0.0);
        assert!(rep.bounded);

        let rep = validate(&ac(2.0, 1.0), &grid, (-2.0, 2.0)).unwrap();
        assert_relative_eq!(rep.sup_abs_ratio, 3.0, epsilon = 1e-12);
        assert_eq!(rep.argmax_u.abs(), 2.0);
        assert!(rep.bounded);

        let singular = CoefficientSet::new_allowing_singular_ratio(
            "linear_walsh",
            Diffusion::Power {
                scale: 1.0,
                exponent: 1.0,
            },
            Drift::Zero,
            Drift::Constant(1.0),
            InitialCondition::Constant(0.0),
        )
        .unwrap();
        let rep = validate(&singular, &grid, (-1.0, 1.0)).unwrap();
        assert!(!rep.bounded);
        // same set away from the zero of a is fine
        let rep = validate(&singular, &grid, (0.5, 1.0)).unwrap();
        assert!(rep.bounded);
        assert_relative_eq!(rep.sup_abs_ratio, 2.0);

        assert!(validate(&zero, &grid, (1.0, f64::INFINITY)).is_err());
    }
}

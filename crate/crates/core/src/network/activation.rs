use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::linalg::Matrix;

/// Pre-activations this close to a breakpoint count as sitting on it.
pub const KINK_TOLERANCE: f64 = 1e-15;

/// Smooth, strictly increasing scalar maps usable inside a saturating ramp.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SmoothKind {
    Identity,
    Sigmoid,
    Tanh,
    Softplus,
}

impl SmoothKind {
    pub fn value(self, x: f64) -> f64 {
        match self {
            SmoothKind::Identity => x,
            SmoothKind::Sigmoid => sigmoid(x),
            SmoothKind::Tanh => x.tanh(),
            SmoothKind::Softplus => softplus(x),
        }
    }

    pub fn derivative(self, x: f64) -> f64 {
        match self {
            SmoothKind::Identity => 1.0,
            SmoothKind::Sigmoid => {
                let s = sigmoid(x);
                s * (1.0 - s)
            }
            SmoothKind::Tanh => {
                let t = x.tanh();
                1.0 - t * t
            }
            SmoothKind::Softplus => sigmoid(x),
        }
    }

    /// Supremum of the derivative over the real line.
    pub fn max_slope(self) -> f64 {
        match self {
            SmoothKind::Sigmoid => 0.25,
            _ => 1.0,
        }
    }

    fn name(self) -> &'static str {
        match self {
            SmoothKind::Identity => "identity",
            SmoothKind::Sigmoid => "sigmoid",
            SmoothKind::Tanh => "tanh",
            SmoothKind::Softplus => "softplus",
        }
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x + (-x).exp()
    } else {
        x.exp().ln_1p()
    }
}

/// Piecewise map that is constant `low` below `start`, follows a smooth
/// increasing `inner` on `[start, end]`, and is constant `high` above `end`.
/// Jump discontinuities at the glue points are allowed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ramp {
    pub low: f64,
    pub high: f64,
    pub start: f64,
    pub end: f64,
    pub inner: SmoothKind,
}

impl Ramp {
    pub fn new(low: f64, high: f64, start: f64, end: f64, inner: SmoothKind) -> Result<Self> {
        let r = Ramp {
            low,
            high,
            start,
            end,
            inner,
        };
        r.validate()?;
        Ok(r)
    }

    fn validate(&self) -> Result<()> {
        let Ramp {
            low,
            high,
            start,
            end,
            inner,
        } = *self;
        if ![low, high, start, end].iter().all(|x| x.is_finite()) {
            return Err(Error::contract("ramp parameters must be finite"));
        }
        if start >= end {
            return Err(Error::contract("ramp needs start < end"));
        }
        let (ha, hb) = (inner.value(start), inner.value(end));
        if !(low <= ha && ha < hb && hb <= high) {
            return Err(Error::contract(format!(
                "ramp plateaus must bracket the inner map: need {low} <= {ha} < {hb} <= {high}"
            )));
        }
        Ok(())
    }

    fn value(&self, x: f64) -> f64 {
        if x < self.start {
            self.low
        } else if x > self.end {
            self.high
        } else {
            self.inner.value(x)
        }
    }
}

/// Elementwise (or, for softmax, vector-wise) activation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Activation {
    Identity,
    Sigmoid,
    Tanh,
    Softplus,
    Softmax,
    Relu,
    /// `x` for `x >= 0`, `slope * x` below.
    LeakyRelu {
        slope: f64,
    },
    SaturatingRamp(Ramp),
}

/// Local state of one non-differentiable unit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
#[repr(u8)]
pub enum UnitState {
    Inactive = 0,
    Active = 1,
    Below = 2,
    Middle = 3,
    Above = 4,
}

/// Derivative of an activation with respect to its pre-activation.
#[derive(Debug, Clone)]
pub enum ActivationJacobian {
    Diagonal(Vec<f64>),
    Full(Matrix),
}

impl ActivationJacobian {
    pub fn to_matrix(&self) -> Matrix {
        match self {
            ActivationJacobian::Diagonal(d) => Matrix::diagonal(d),
            ActivationJacobian::Full(m) => m.clone(),
        }
    }

    /// `left · J`
    pub fn pull_rows(&self, left: &Matrix) -> Matrix {
        match self {
            ActivationJacobian::Diagonal(d) => {
                let mut out = left.clone();
                out.scale_columns(d);
                out
            }
            ActivationJacobian::Full(m) => left.matmul(m).expect("activation jacobian shape"),
        }
    }
}

impl Activation {
    pub fn leaky_relu(slope: f64) -> Result<Self> {
        let a = Activation::LeakyRelu { slope };
        a.validate()?;
        Ok(a)
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            Activation::LeakyRelu { slope } => {
                if !slope.is_finite() || *slope == 0.0 || *slope == 1.0 {
                    return Err(Error::contract(format!(
                        "leaky relu slope must be finite and differ from 0 and 1, got {slope}"
                    )));
                }
                Ok(())
            }
            Activation::SaturatingRamp(r) => r.validate(),
            _ => Ok(()),
        }
    }

    /// True when the map has breakpoints tracked by activation signatures.
    pub fn is_piecewise(&self) -> bool {
        matches!(
            self,
            Activation::Relu | Activation::LeakyRelu { .. } | Activation::SaturatingRamp(_)
        )
    }

    pub fn apply(&self, z: &[f64]) -> Vec<f64> {
        match self {
            Activation::Identity => z.to_vec(),
            Activation::Sigmoid => z.iter().map(|&x| sigmoid(x)).collect(),
            Activation::Tanh => z.iter().map(|x| x.tanh()).collect(),
            Activation::Softplus => z.iter().map(|&x| softplus(x)).collect(),
            Activation::Softmax => softmax(z),
            Activation::Relu => z.iter().map(|&x| if x > 0.0 { x } else { 0.0 }).collect(),
            Activation::LeakyRelu { slope } => z
                .iter()
                .map(|&x| if x >= 0.0 { x } else { slope * x })
                .collect(),
            Activation::SaturatingRamp(r) => z.iter().map(|&x| r.value(x)).collect(),
        }
    }

    /// Units whose pre-activation sits on a breakpoint.
    pub fn kinks(&self, z: &[f64]) -> Vec<usize> {
        let on = |x: f64| match self {
            Activation::Relu | Activation::LeakyRelu { .. } => x.abs() <= KINK_TOLERANCE,
            Activation::SaturatingRamp(r) => {
                (x - r.start).abs() <= KINK_TOLERANCE || (x - r.end).abs() <= KINK_TOLERANCE
            }
            _ => false,
        };
        if !self.is_piecewise() {
            return Vec::new();
        }
        z.iter()
            .enumerate()
            .filter(|(_, &x)| on(x))
            .map(|(i, _)| i)
            .collect()
    }

    /// Unit states for signatures; empty for smooth activations. A unit on
    /// its breakpoint reports the inactive (plateau) side.
    pub fn unit_states(&self, z: &[f64]) -> Vec<UnitState> {
        match self {
            Activation::Relu | Activation::LeakyRelu { .. } => z
                .iter()
                .map(|&x| {
                    if x > KINK_TOLERANCE {
                        UnitState::Active
                    } else {
                        UnitState::Inactive
                    }
                })
                .collect(),
            Activation::SaturatingRamp(r) => z
                .iter()
                .map(|&x| ramp_state(r, x))
                .collect(),
            _ => Vec::new(),
        }
    }

    /// Jacobian at pre-activation `z` with output `out = self.apply(z)`.
    /// Breakpoints take the derivative of the inactive or plateau side.
    pub fn jacobian(&self, z: &[f64], out: &[f64]) -> ActivationJacobian {
        let diag = |f: &dyn Fn(f64) -> f64| ActivationJacobian::Diagonal(z.iter().map(|&x| f(x)).collect());
        match self {
            Activation::Identity => ActivationJacobian::Diagonal(vec![1.0; z.len()]),
            Activation::Sigmoid => ActivationJacobian::Diagonal(out.iter().map(|s| s * (1.0 - s)).collect()),
            Activation::Tanh => ActivationJacobian::Diagonal(out.iter().map(|t| 1.0 - t * t).collect()),
            Activation::Softplus => diag(&sigmoid),
            Activation::Softmax => {
                let n = out.len();
                let mut m = Matrix::zeros(n, n);
                for i in 0..n {
                    for j in 0..n {
                        m[(i, j)] = if i == j { out[i] } else { 0.0 } - out[i] * out[j];
                    }
                }
                ActivationJacobian::Full(m)
            }
            Activation::Relu => diag(&|x| if x > KINK_TOLERANCE { 1.0 } else { 0.0 }),
            Activation::LeakyRelu { slope } => {
                let s = *slope;
                diag(&move |x| if x > KINK_TOLERANCE { 1.0 } else { s })
            }
            Activation::SaturatingRamp(r) => diag(&|x| match ramp_state(r, x) {
                UnitState::Middle => r.inner.derivative(x),
                _ => 0.0,
            }),
        }
    }

    /// Upper bound on the operator norm of the activation Jacobian.
    pub fn max_slope(&self) -> f64 {
        match self {
            Activation::Identity | Activation::Tanh | Activation::Softplus | Activation::Relu => 1.0,
            Activation::Sigmoid => 0.25,
            // Gershgorin: row i of diag(s) - s sᵀ has absolute sum 2 s_i (1 - s_i).
            Activation::Softmax => 0.5,
            Activation::LeakyRelu { slope } => slope.abs().max(1.0),
            Activation::SaturatingRamp(r) => r.inner.max_slope(),
        }
    }
}

fn ramp_state(r: &Ramp, x: f64) -> UnitState {
    if x < r.start + KINK_TOLERANCE {
        UnitState::Below
    } else if x > r.end - KINK_TOLERANCE {
        UnitState::Above
    } else {
        UnitState::Middle
    }
}

fn softmax(z: &[f64]) -> Vec<f64> {
    let max = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = z.iter().map(|x| (x - max).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|x| x / s).collect()
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Activation::Identity => f.write_str("identity"),
            Activation::Sigmoid => f.write_str("sigmoid"),
            Activation::Tanh => f.write_str("tanh"),
            Activation::Softplus => f.write_str("softplus"),
            Activation::Softmax => f.write_str("softmax"),
            Activation::Relu => f.write_str("relu"),
            Activation::LeakyRelu { slope } => write!(f, "leaky_relu({slope:?})"),
            Activation::SaturatingRamp(r) => write!(
                f,
                "saturating_ramp({:?},{:?},{:?},{:?},{})",
                r.low,
                r.high,
                r.start,
                r.end,
                r.inner.name()
            ),
        }
    }
}

impl FromStr for SmoothKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "identity" => Ok(SmoothKind::Identity),
            "sigmoid" => Ok(SmoothKind::Sigmoid),
            "tanh" => Ok(SmoothKind::Tanh),
            "softplus" => Ok(SmoothKind::Softplus),
            other => Err(Error::format(format!("unknown smooth map `{other}`"))),
        }
    }
}

impl FromStr for Activation {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let (name, args) = match s.find('(') {
            Some(i) if s.ends_with(')') => (&s[..i], Some(&s[i + 1..s.len() - 1])),
            Some(_) => return Err(Error::format(format!("malformed activation `{s}`"))),
            None => (s, None),
        };
        let num = |t: &str| -> Result<f64> {
            t.trim()
                .parse::<f64>()
                .map_err(|_| Error::format(format!("bad number `{t}` in activation `{s}`")))
        };
        let act = match (name, args) {
            ("identity", None) => Activation::Identity,
            ("sigmoid", None) => Activation::Sigmoid,
            ("tanh", None) => Activation::Tanh,
            ("softplus", None) => Activation::Softplus,
            ("softmax", None) => Activation::Softmax,
            ("relu", None) => Activation::Relu,
            ("leaky_relu", Some(a)) => Activation::LeakyRelu { slope: num(a)? },
            ("saturating_ramp", Some(a)) => {
                let parts: Vec<&str> = a.split(',').collect();
                if parts.len() != 5 {
                    return Err(Error::format(format!(
                        "saturating_ramp takes 5 arguments, got {}",
                        parts.len()
                    )));
                }
                Activation::SaturatingRamp(Ramp {
                    low: num(parts[0])?,
                    high: num(parts[1])?,
                    start: num(parts[2])?,
                    end: num(parts[3])?,
                    inner: parts[4].trim().parse()?,
                })
            }
            _ => return Err(Error::format(format!("unknown activation `{s}`"))),
        };
        act.validate()
            .map_err(|e| Error::format(format!("invalid activation `{s}`: {e}")))?;
        Ok(act)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn softmax_sums_to_one_and_jacobian_rows_vanish() {
        let z = [0.3, -1.2, 2.5, 0.0];
        let a = Activation::Softmax;
        let s = a.apply(&z);
        assert!((s.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        let j = a.jacobian(&z, &s).to_matrix();
        for i in 0..4 {
            assert!(j.row(i).iter().sum::<f64>().abs() < 1e-12);
        }
    }

    #[test]
    fn relu_kink_is_inactive_and_flagged() {
        let a = Activation::Relu;
        let z = [0.0, 1.0, -1.0];
        assert_eq!(a.kinks(&z), vec![0]);
        assert_eq!(
            a.unit_states(&z),
            vec![UnitState::Inactive, UnitState::Active, UnitState::Inactive]
        );
        match a.jacobian(&z, &a.apply(&z)) {
            ActivationJacobian::Diagonal(d) => assert_eq!(d, vec![0.0, 1.0, 0.0]),
            _ => unreachable!(),
        }
    }

    #[test]
    fn leaky_validation() {
        assert!(Activation::leaky_relu(0.0).is_err());
        assert!(Activation::leaky_relu(1.0).is_err());
        assert!(Activation::leaky_relu(f64::NAN).is_err());
        assert!(Activation::leaky_relu(-0.01).is_ok());
    }

    #[test]
    fn ramp_regions_and_plateau_derivative() {
        let r = Ramp::new(-1.0, 1.0, -2.0, 2.0, SmoothKind::Tanh).unwrap();
        let a = Activation::SaturatingRamp(r);
        let z = [-3.0, 0.5, 3.0, 2.0];
        assert_eq!(
            a.unit_states(&z),
            vec![
                UnitState::Below,
                UnitState::Middle,
                UnitState::Above,
                UnitState::Above
            ]
        );
        assert_eq!(a.kinks(&z), vec![3]);
        let out = a.apply(&z);
        assert_eq!(out[0], -1.0);
        assert_eq!(out[2], 1.0);
        match a.jacobian(&z, &out) {
            ActivationJacobian::Diagonal(d) => {
                assert_eq!(d[0], 0.0);
                assert!((d[1] - (1.0 - 0.5f64.tanh().powi(2))).abs() < 1e-15);
                assert_eq!(d[3], 0.0);
            }
            _ => unreachable!(),
        }
        // Plateaus must bracket the inner map.
        assert!(Ramp::new(0.0, 1.0, -2.0, 2.0, SmoothKind::Tanh).is_err());
        assert!(Ramp::new(-1.0, 1.0, 2.0, -2.0, SmoothKind::Tanh).is_err());
    }

    #[test]
    fn text_form_round_trips() {
        let acts = [
            Activation::Identity,
            Activation::Softmax,
            Activation::LeakyRelu { slope: -0.01 },
            Activation::SaturatingRamp(Ramp::new(0.0, 1.0, -1.0, 1.0, SmoothKind::Sigmoid).unwrap()),
        ];
        for a in acts {
            let back: Activation = a.to_string().parse().unwrap();
            assert_eq!(back, a);
        }
        assert!("swish".parse::<Activation>().is_err());
        assert!("leaky_relu(1)".parse::<Activation>().is_err());
    }
}

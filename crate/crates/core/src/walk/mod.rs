//! Random walks along the null or non-null eigenspaces of the pullback
//! metric.
//!
//! Every mode shares one step loop: analyze the current point, sample a unit
//! direction from the requested eigenspace, move by `δ`, analyze the
//! candidate, run the mode's guards, and either accept the candidate or stop.
//! A rejected candidate is never part of the result.

mod rng;

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use rng::WalkRng;

use crate::error::{Error, Result, Subspace};
use crate::linalg::Vector;
use crate::metric::{
    analyze_point_with, metric_jump, step_increments, suggest_tau, NullThreshold, OutputMetric,
    PointAnalysis, PullbackMetric,
};
use crate::network::{ActivationSignature, NetworkSpec};

/// Resamples allowed when a candidate lands exactly on a kink.
pub const KINK_RESAMPLES: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WalkMode {
    /// Null directions; stays inside the class of the start point.
    Simec,
    /// Non-null directions; moves across classes.
    Simexp,
    /// Null directions with sign coherence, for one-dimensional kernels.
    Simec1dLeaky,
    /// Null directions with metric-jump detection.
    SimecGuarded,
}

impl WalkMode {
    pub const ALL: [WalkMode; 4] = [
        WalkMode::Simec,
        WalkMode::Simexp,
        WalkMode::Simec1dLeaky,
        WalkMode::SimecGuarded,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            WalkMode::Simec => "simec",
            WalkMode::Simexp => "simexp",
            WalkMode::Simec1dLeaky => "simec_1d_leaky",
            WalkMode::SimecGuarded => "simec_guarded",
        }
    }

    pub fn subspace(self) -> Subspace {
        match self {
            WalkMode::Simexp => Subspace::NonNull,
            _ => Subspace::Null,
        }
    }
}

impl fmt::Display for WalkMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for WalkMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        WalkMode::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::contract(format!("unknown walk mode `{s}`")))
    }
}

/// Why a walk stopped.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    MaxIterations,
    KernelDimChanged,
    RegionChanged,
    MetricJump,
    OnKink,
    EnergyBudgetExceeded,
}

impl Termination {
    pub const ALL: [Termination; 6] = [
        Termination::MaxIterations,
        Termination::KernelDimChanged,
        Termination::RegionChanged,
        Termination::MetricJump,
        Termination::OnKink,
        Termination::EnergyBudgetExceeded,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Termination::MaxIterations => "max_iterations",
            Termination::KernelDimChanged => "kernel_dim_changed",
            Termination::RegionChanged => "region_changed",
            Termination::MetricJump => "metric_jump",
            Termination::OnKink => "on_kink",
            Termination::EnergyBudgetExceeded => "energy_budget_exceeded",
        }
    }

    /// Stable one-byte code used by the binary walk record.
    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn from_code(c: u8) -> Option<Self> {
        Termination::ALL.get(c as usize).copied()
    }
}

impl fmt::Display for Termination {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Termination {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Termination::ALL
            .into_iter()
            .find(|t| t.as_str() == s)
            .ok_or_else(|| Error::format(format!("unknown termination `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WalkConfig {
    pub mode: WalkMode,
    /// Maximum number of steps `K ≥ 1`.
    pub steps: usize,
    pub delta: f64,
    /// Null-eigenvalue threshold.
    pub eps: f64,
    /// Compare eigenvalues against `eps · λ_max` instead of `eps`.
    #[serde(default)]
    pub relative_eps: bool,
    /// Jump threshold for the guarded mode; [`suggest_tau`] when absent.
    #[serde(default)]
    pub tau: Option<f64>,
    pub seed: u64,
    /// Stop when a single segment's energy exceeds this.
    #[serde(default)]
    pub energy_budget: Option<f64>,
    /// Reference direction for the first coherence check in 1D mode.
    #[serde(default)]
    pub initial_direction: Option<Vector>,
}

impl WalkConfig {
    pub fn new(mode: WalkMode, steps: usize, delta: f64, eps: f64, seed: u64) -> Self {
        WalkConfig {
            mode,
            steps,
            delta,
            eps,
            relative_eps: false,
            tau: None,
            seed,
            energy_budget: None,
            initial_direction: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |name: &str, x: f64| {
            if x.is_finite() && x > 0.0 {
                Ok(())
            } else {
                Err(Error::contract(format!("{name} must be finite and positive, got {x}")))
            }
        };
        if self.steps == 0 {
            return Err(Error::contract("a walk needs at least one step"));
        }
        positive("delta", self.delta)?;
        positive("eps", self.eps)?;
        if let Some(t) = self.tau {
            positive("tau", t)?;
        }
        if let Some(b) = self.energy_budget {
            positive("energy budget", b)?;
        }
        if let Some(v) = &self.initial_direction {
            if !v.is_finite() || v.norm() == 0.0 {
                return Err(Error::contract("initial direction must be finite and nonzero"));
            }
        }
        Ok(())
    }

    pub fn null_threshold(&self) -> NullThreshold {
        if self.relative_eps {
            NullThreshold::Relative(self.eps)
        } else {
            NullThreshold::Absolute(self.eps)
        }
    }
}

/// Energy and pseudolength of the segment ending at a point.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Increment {
    pub energy: f64,
    pub pseudolength: f64,
}

/// Retained points of a walk; every per-point vector has `points.len()`
/// entries and `increments[0]` is zero.
#[derive(Debug, Clone, PartialEq)]
pub struct WalkResult {
    pub points: Vec<Vector>,
    pub outputs: Vec<Vector>,
    pub signatures: Vec<ActivationSignature>,
    pub kernel_dims: Vec<usize>,
    pub increments: Vec<Increment>,
    pub energy: f64,
    pub pseudolength: f64,
    pub termination: Termination,
    /// Jump threshold actually used (guarded mode only).
    pub tau: Option<f64>,
}

impl WalkResult {
    fn start(a: &PointAnalysis) -> Self {
        WalkResult {
            points: vec![a.metric.point.clone()],
            outputs: vec![a.output.clone()],
            signatures: vec![a.signature.clone()],
            kernel_dims: vec![a.metric.kernel_dim()],
            increments: vec![Increment::default()],
            energy: 0.0,
            pseudolength: 0.0,
            termination: Termination::MaxIterations,
            tau: None,
        }
    }

    fn push(&mut self, a: &PointAnalysis, inc: Increment) {
        self.points.push(a.metric.point.clone());
        self.outputs.push(a.output.clone());
        self.signatures.push(a.signature.clone());
        self.kernel_dims.push(a.metric.kernel_dim());
        self.energy += inc.energy;
        self.pseudolength += inc.pseudolength;
        self.increments.push(inc);
    }

    pub fn steps_taken(&self) -> usize {
        self.points.len() - 1
    }

    pub fn last_point(&self) -> &Vector {
        self.points.last().expect("a walk has at least its start point")
    }
}

fn indices(pm: &PullbackMetric, which: Subspace) -> &[usize] {
    match which {
        Subspace::Null => &pm.null_indices,
        Subspace::NonNull => &pm.nonnull_indices,
    }
}

/// Unit vector uniform on the sphere of the requested eigenspace: standard
/// normal coefficients on its eigenvectors, normalized.
pub fn sample_direction(pm: &PullbackMetric, which: Subspace, rng: &mut WalkRng) -> Result<Vector> {
    let idx = indices(pm, which);
    if idx.is_empty() {
        return Err(Error::NoDirection(which));
    }
    loop {
        let coeffs: Vec<f64> = idx.iter().map(|_| rng.normal()).collect();
        if let Some(v) = pm.eigen.combine(idx, &coeffs).normalized() {
            return Ok(v);
        }
    }
}

/// Walk with null directions; stops on kinks, kernel-dimension or
/// activation-pattern changes, and the optional energy budget.
pub fn simec_nd(net: &NetworkSpec, p0: &[f64], cfg: &WalkConfig, g: &OutputMetric) -> Result<WalkResult> {
    expect_mode(cfg, WalkMode::Simec)?;
    run(net, p0, cfg, g)
}

/// Walk with non-null directions, random sign at every step.
pub fn simexp_nd(net: &NetworkSpec, p0: &[f64], cfg: &WalkConfig, g: &OutputMetric) -> Result<WalkResult> {
    expect_mode(cfg, WalkMode::Simexp)?;
    run(net, p0, cfg, g)
}

/// Null-direction walk whose direction is flipped whenever it would reverse
/// against the previous one; `v0` is the reference for the first step.
pub fn simec_1d_leaky(
    net: &NetworkSpec,
    p0: &[f64],
    v0: &[f64],
    cfg: &WalkConfig,
    g: &OutputMetric,
) -> Result<WalkResult> {
    expect_mode(cfg, WalkMode::Simec1dLeaky)?;
    let cfg = WalkConfig {
        initial_direction: Some(Vector::from(v0)),
        ..cfg.clone()
    };
    run(net, p0, &cfg, g)
}

/// As [`simec_nd`], additionally stopping when an entry of the metric jumps
/// by more than `τ` between consecutive points.
pub fn simec_guarded(
    net: &NetworkSpec,
    p0: &[f64],
    cfg: &WalkConfig,
    g: &OutputMetric,
) -> Result<WalkResult> {
    expect_mode(cfg, WalkMode::SimecGuarded)?;
    run(net, p0, cfg, g)
}

fn expect_mode(cfg: &WalkConfig, mode: WalkMode) -> Result<()> {
    if cfg.mode != mode {
        return Err(Error::contract(format!(
            "configuration is for mode {} but {mode} was requested",
            cfg.mode
        )));
    }
    Ok(())
}

/// Runs the walk selected by `cfg.mode`.
pub fn run_walk(net: &NetworkSpec, p0: &[f64], cfg: &WalkConfig, g: &OutputMetric) -> Result<WalkResult> {
    run(net, p0, cfg, g)
}

/// Independent walks from several starts in parallel. Walk `i` is seeded
/// with `cfg.seed + i`, so results do not depend on scheduling.
pub fn run_walks(
    net: &NetworkSpec,
    starts: &[Vector],
    cfg: &WalkConfig,
    g: &OutputMetric,
) -> Vec<Result<WalkResult>> {
    starts
        .par_iter()
        .enumerate()
        .map(|(i, p0)| {
            let cfg = WalkConfig {
                seed: cfg.seed.wrapping_add(i as u64),
                ..cfg.clone()
            };
            run(net, p0, &cfg, g)
        })
        .collect()
}

fn run(net: &NetworkSpec, p0: &[f64], cfg: &WalkConfig, g: &OutputMetric) -> Result<WalkResult> {
    cfg.validate()?;
    let threshold = cfg.null_threshold();
    let which = cfg.mode.subspace();
    let tau = match (cfg.mode, cfg.tau) {
        (WalkMode::SimecGuarded, Some(t)) => Some(t),
        (WalkMode::SimecGuarded, None) => Some(suggest_tau(net, cfg.delta)?),
        _ => None,
    };
    let mut prev_dir = match (cfg.mode, &cfg.initial_direction) {
        (WalkMode::Simec1dLeaky, Some(v)) => {
            if v.dim() != net.input_dim() {
                return Err(Error::shape("initial direction does not match the input dimension"));
            }
            Some(v.clone())
        }
        _ => None,
    };

    let mut cur = analyze_point_with(net, p0, g, threshold)?;
    if indices(&cur.metric, which).is_empty() {
        return Err(Error::NoDirection(which));
    }
    let mut rng = WalkRng::new(cfg.seed);
    let mut result = WalkResult::start(&cur);
    result.tau = tau;

    for _ in 0..cfg.steps {
        if indices(&cur.metric, which).is_empty() {
            result.termination = Termination::KernelDimChanged;
            break;
        }
        let Some((v, next)) = propose(net, &cur, cfg, g, which, prev_dir.as_ref(), &mut rng)? else {
            result.termination = Termination::OnKink;
            break;
        };
        let (de, dpl) = step_increments(&cur.metric.h, &v, cfg.delta);
        if let Some(t) = guard(cfg, tau, &cur, &next, de)? {
            result.termination = t;
            break;
        }
        result.push(
            &next,
            Increment {
                energy: de,
                pseudolength: dpl,
            },
        );
        if cfg.mode == WalkMode::Simec1dLeaky {
            prev_dir = Some(v);
        }
        cur = next;
    }
    Ok(result)
}

/// Samples a direction and analyzes the candidate point, resampling when the
/// candidate sits on a kink. `None` once the resamples are exhausted.
fn propose(
    net: &NetworkSpec,
    cur: &PointAnalysis,
    cfg: &WalkConfig,
    g: &OutputMetric,
    which: Subspace,
    prev_dir: Option<&Vector>,
    rng: &mut WalkRng,
) -> Result<Option<(Vector, PointAnalysis)>> {
    for _ in 0..=KINK_RESAMPLES {
        let mut v = sample_direction(&cur.metric, which, rng)?;
        if let Some(prev) = prev_dir {
            if v.dot(prev) < 0.0 {
                v = v.scaled(-1.0);
            }
        }
        let candidate = cur.metric.point.offset(cfg.delta, &v);
        match analyze_point_with(net, &candidate, g, cfg.null_threshold()) {
            Ok(next) => return Ok(Some((v, next))),
            Err(Error::OnKink { .. }) => continue,
            Err(e) => return Err(e),
        }
    }
    Ok(None)
}

/// First failing guard for accepting `next` after `cur`. Order: metric jump,
/// kernel dimension, activation pattern, energy budget.
fn guard(
    cfg: &WalkConfig,
    tau: Option<f64>,
    cur: &PointAnalysis,
    next: &PointAnalysis,
    de: f64,
) -> Result<Option<Termination>> {
    if let Some(t) = tau {
        if metric_jump(&cur.metric.h, &next.metric.h, t)? {
            return Ok(Some(Termination::MetricJump));
        }
    }
    if cfg.mode != WalkMode::Simexp {
        if cur.metric.kernel_dim() != next.metric.kernel_dim() {
            return Ok(Some(Termination::KernelDimChanged));
        }
        if cur.signature != next.signature {
            return Ok(Some(Termination::RegionChanged));
        }
    }
    if let Some(b) = cfg.energy_budget {
        if de > b {
            return Ok(Some(Termination::EnergyBudgetExceeded));
        }
    }
    Ok(None)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::Matrix;
    use crate::network::{Activation, Dense, Layer};

    fn dense(rows: &[&[f64]], act: Activation) -> NetworkSpec {
        NetworkSpec::new(vec![Layer::Dense(Dense::linear(Matrix::from_rows(rows), act).unwrap())]).unwrap()
    }

    #[test]
    fn one_step_walk() {
        let net = dense(&[&[1.0, -1.0]], Activation::Relu);
        let cfg = WalkConfig::new(WalkMode::Simec, 1, 1e-2, 1e-8, 0);
        let w = simec_nd(&net, &[-0.98, -2.45], &cfg, &OutputMetric::Identity).unwrap();
        assert_eq!(w.points.len(), 2);
        assert_eq!(w.energy, w.increments[1].energy);
        assert_eq!(w.termination, Termination::MaxIterations);
    }

    #[test]
    fn identity_simexp_pseudolength() {
        let net = dense(&[&[1.0, 0.0], &[0.0, 1.0]], Activation::Identity);
        let cfg = WalkConfig::new(WalkMode::Simexp, 50, 0.1, 1e-8, 3);
        let w = simexp_nd(&net, &[0.0, 0.0], &cfg, &OutputMetric::Identity).unwrap();
        assert_eq!(w.steps_taken(), 50);
        assert!((w.pseudolength - 5.0).abs() < 1e-12);
        assert!((w.energy - 0.5).abs() < 1e-12);
    }

    #[test]
    fn no_null_direction() {
        let net = dense(&[&[1.0, 0.0], &[0.0, 1.0]], Activation::Identity);
        let cfg = WalkConfig::new(WalkMode::Simec, 5, 0.1, 1e-8, 3);
        assert!(matches!(
            simec_nd(&net, &[0.0, 0.0], &cfg, &OutputMetric::Identity),
            Err(Error::NoDirection(Subspace::Null))
        ));
    }

    #[test]
    fn mode_mismatch_rejected() {
        let net = dense(&[&[1.0, -1.0]], Activation::Relu);
        let cfg = WalkConfig::new(WalkMode::Simexp, 1, 1e-2, 1e-8, 0);
        assert!(simec_nd(&net, &[-0.98, -2.45], &cfg, &OutputMetric::Identity).is_err());
    }

    #[test]
    fn one_dimensional_kernel_sample() {
        let pm = PullbackMetric::from_matrix(
            Vector::from([0.0, 0.0]),
            Matrix::from_rows(&[[1.0, -1.0], [-1.0, 1.0]]),
            NullThreshold::Absolute(1e-8),
        )
        .unwrap();
        let mut rng = WalkRng::new(11);
        let s = 1.0 / 2f64.sqrt();
        for _ in 0..20 {
            let v = sample_direction(&pm, Subspace::Null, &mut rng).unwrap();
            assert!((v[0].abs() - s).abs() < 1e-12 && (v[0] - v[1]).abs() < 1e-12);
        }
        let empty = PullbackMetric::from_matrix(
            Vector::from([0.0]),
            Matrix::identity(1),
            NullThreshold::Absolute(1e-8),
        )
        .unwrap();
        assert!(sample_direction(&empty, Subspace::Null, &mut rng).is_err());
    }

    #[test]
    fn text_forms() {
        for m in WalkMode::ALL {
            assert_eq!(m.as_str().parse::<WalkMode>().unwrap(), m);
        }
        for t in Termination::ALL {
            assert_eq!(Termination::from_code(t.code()), Some(t));
            assert_eq!(t.as_str().parse::<Termination>().unwrap(), t);
        }
    }
}

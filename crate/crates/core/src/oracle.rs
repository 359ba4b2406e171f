//! Brute-force checks that share no code path with the walkers: grid scans
//! of level sets, from-scratch output audits, and central finite
//! differences.

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::io::WalkRecord;
use crate::linalg::{Matrix, Vector};
use crate::network::NetworkSpec;

/// Grid scans refuse more input dimensions than this.
pub const MAX_GRID_DIM: usize = 4;

/// Regular grid over a box; the last coordinate varies fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    pub bounds: Vec<(f64, f64)>,
    pub resolution: usize,
}

impl Grid {
    pub fn new(bounds: Vec<(f64, f64)>, resolution: usize) -> Result<Self> {
        if bounds.is_empty() {
            return Err(Error::contract("grid needs at least one dimension"));
        }
        if bounds.len() > MAX_GRID_DIM {
            return Err(Error::Unsupported(format!(
                "grid scans are limited to {MAX_GRID_DIM} dimensions, got {}",
                bounds.len()
            )));
        }
        if resolution < 2 {
            return Err(Error::contract("grid resolution must be at least 2"));
        }
        if bounds.iter().any(|&(lo, hi)| !(lo.is_finite() && hi.is_finite() && lo < hi)) {
            return Err(Error::contract("grid bounds must be finite with lo < hi"));
        }
        Ok(Grid { bounds, resolution })
    }

    pub fn dim(&self) -> usize {
        self.bounds.len()
    }

    pub fn len(&self) -> usize {
        self.resolution.pow(self.dim() as u32)
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn spacing(&self, axis: usize) -> f64 {
        let (lo, hi) = self.bounds[axis];
        (hi - lo) / (self.resolution - 1) as f64
    }

    /// Largest spacing over all axes.
    pub fn max_spacing(&self) -> f64 {
        (0..self.dim()).map(|a| self.spacing(a)).fold(0.0, f64::max)
    }

    pub fn node(&self, flat: usize) -> Vector {
        let mut rem = flat;
        let mut p = vec![0.0; self.dim()];
        for axis in (0..self.dim()).rev() {
            let k = rem % self.resolution;
            rem /= self.resolution;
            p[axis] = self.bounds[axis].0 + k as f64 * self.spacing(axis);
        }
        Vector::from(p)
    }

    /// Flat index of the nearest node, `None` outside the box.
    pub fn snap(&self, p: &[f64]) -> Option<usize> {
        if p.len() != self.dim() {
            return None;
        }
        let mut flat = 0;
        for (axis, &x) in p.iter().enumerate() {
            let (lo, hi) = self.bounds[axis];
            if !(lo..=hi).contains(&x) {
                return None;
            }
            let k = ((x - lo) / self.spacing(axis)).round() as usize;
            flat = flat * self.resolution + k.min(self.resolution - 1);
        }
        Some(flat)
    }
}

/// Grid nodes whose output lies within `value_tol` (sup norm) of the
/// reference output.
#[derive(Debug, Clone)]
pub struct LevelSet {
    pub grid: Grid,
    pub reference_output: Vector,
    pub value_tol: f64,
    members: Vec<bool>,
}

impl LevelSet {
    pub fn count(&self) -> usize {
        self.members.iter().filter(|&&m| m).count()
    }

    pub fn contains_node(&self, flat: usize) -> bool {
        self.members.get(flat).copied().unwrap_or(false)
    }

    /// Snaps `p` to the grid; `None` outside the box.
    pub fn contains_snapped(&self, p: &[f64]) -> Option<bool> {
        self.grid.snap(p).map(|i| self.members[i])
    }

    /// Member nodes in grid order.
    pub fn points(&self) -> Vec<Vector> {
        self.members
            .iter()
            .enumerate()
            .filter(|(_, &m)| m)
            .map(|(i, _)| self.grid.node(i))
            .collect()
    }
}

pub fn brute_force_level_set(
    net: &NetworkSpec,
    bounds: &[(f64, f64)],
    resolution: usize,
    reference: &[f64],
    value_tol: f64,
) -> Result<LevelSet> {
    let grid = Grid::new(bounds.to_vec(), resolution)?;
    if net.input_dim() != grid.dim() {
        return Err(Error::shape(format!(
            "grid has {} dimensions but the network takes {}",
            grid.dim(),
            net.input_dim()
        )));
    }
    if !(value_tol >= 0.0) {
        return Err(Error::contract("value tolerance must be non-negative"));
    }
    let reference_output = net.output(reference)?;
    let members = (0..grid.len())
        .into_par_iter()
        .map(|i| {
            let y = net.output(&grid.node(i))?;
            Ok(y.sub(&reference_output).norm_inf() <= value_tol)
        })
        .collect::<Result<Vec<bool>>>()?;
    Ok(LevelSet {
        grid,
        reference_output,
        value_tol,
        members,
    })
}

/// Twice the largest sup-norm distance of any output from the first.
pub fn calibrated_tolerance(outputs: &[Vector]) -> f64 {
    let Some(first) = outputs.first() else {
        return 0.0;
    };
    2.0 * outputs.iter().map(|o| o.sub(first).norm_inf()).fold(0.0, f64::max)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InvarianceReport {
    /// `max_k ‖N(p_k) − N(p_0)‖_∞`
    pub max_output_deviation: f64,
    /// Points whose output argmax differs from the start's; always 0 for
    /// scalar outputs.
    pub argmax_flips: usize,
    pub deviations: Vec<f64>,
    pub tol: f64,
    pub within_tol: bool,
}

pub fn audit_invariance(net: &NetworkSpec, walk: &WalkRecord, tol: f64) -> Result<InvarianceReport> {
    audit_points(net, &walk.points, tol)
}

/// Recomputes every output from the points alone.
pub fn audit_points(net: &NetworkSpec, points: &[Vector], tol: f64) -> Result<InvarianceReport> {
    let outputs = points
        .par_iter()
        .map(|p| net.output(p))
        .collect::<Result<Vec<_>>>()?;
    let Some(first) = outputs.first() else {
        return Err(Error::contract("cannot audit a walk without points"));
    };
    let deviations: Vec<f64> = outputs.iter().map(|o| o.sub(first).norm_inf()).collect();
    let max_output_deviation = deviations.iter().copied().fold(0.0, f64::max);
    let argmax_flips = if first.dim() > 1 {
        let a0 = first.argmax();
        outputs.iter().filter(|o| o.argmax() != a0).count()
    } else {
        0
    };
    Ok(InvarianceReport {
        max_output_deviation,
        argmax_flips,
        deviations,
        tol,
        within_tol: max_output_deviation <= tol,
    })
}

/// Central differences `(N(x + h e_i) − N(x − h e_i)) / 2h`, column by
/// column. Fails with an on-kink error when the activation pattern at any
/// probe differs from the one at `x`.
pub fn finite_difference_jacobian(net: &NetworkSpec, x: &[f64], step: f64) -> Result<Matrix> {
    if !(step.is_finite() && step > 0.0) {
        return Err(Error::contract("finite-difference step must be positive"));
    }
    let center = net.forward(x)?;
    if let Some((layer, unit)) = center.first_kink() {
        return Err(Error::OnKink { layer, unit });
    }
    let base = layer_states(net, &center);
    let n = x.len();
    let m = net.output_dim();
    let mut jac = Matrix::zeros(m, n);
    let mut probe = x.to_vec();
    for i in 0..n {
        let mut eval = |h: f64| -> Result<Vector> {
            probe[i] = x[i] + h;
            let fwd = net.forward(&probe)?;
            probe[i] = x[i];
            if let Some((layer, unit)) = first_difference(&base, &layer_states(net, &fwd)) {
                return Err(Error::OnKink { layer, unit });
            }
            if let Some((layer, unit)) = fwd.first_kink() {
                return Err(Error::OnKink { layer, unit });
            }
            Ok(fwd.output)
        };
        let plus = eval(step)?;
        let minus = eval(-step)?;
        for r in 0..m {
            jac[(r, i)] = (plus[r] - minus[r]) / (2.0 * step);
        }
    }
    Ok(jac)
}

fn layer_states(net: &NetworkSpec, fwd: &crate::network::Forward) -> Vec<Vec<crate::network::UnitState>> {
    net.layers()
        .iter()
        .zip(&fwd.layers)
        .map(|(l, t)| {
            let mut s = Vec::new();
            l.unit_states(t, &mut s);
            s
        })
        .collect()
}

fn first_difference(
    a: &[Vec<crate::network::UnitState>],
    b: &[Vec<crate::network::UnitState>],
) -> Option<(usize, usize)> {
    a.iter().zip(b).enumerate().find_map(|(l, (sa, sb))| {
        sa.iter().zip(sb).position(|(x, y)| x != y).map(|u| (l, u))
    })
}

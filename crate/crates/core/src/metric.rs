//! Pullback of an output metric through the network Jacobian, its
//! null/non-null eigenspace split, and the per-segment curve increments.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{gram_eigen, sym_eigen, Matrix, SymmetricEigen, Vector};
use crate::network::{ActivationSignature, NetworkSpec};

/// Eigenvalues in `(-PSD_SLACK, 0)` are roundoff and get clamped to zero.
pub const PSD_SLACK: f64 = 1e-10;

/// Riemannian metric on the output space, constant in the point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum OutputMetric {
    Identity,
    /// `diag(weights)`, all weights positive.
    Diagonal(Vector),
}

impl OutputMetric {
    pub fn diagonal(weights: Vector) -> Result<Self> {
        if weights.is_empty() || weights.iter().any(|w| !(w.is_finite() && *w > 0.0)) {
            return Err(Error::contract("diagonal metric weights must be finite and positive"));
        }
        Ok(OutputMetric::Diagonal(weights))
    }

    /// Weights expanded to dimension `m`.
    pub fn weights(&self, m: usize) -> Result<Vec<f64>> {
        match self {
            OutputMetric::Identity => Ok(vec![1.0; m]),
            OutputMetric::Diagonal(w) if w.dim() == m => Ok(w.to_vec()),
            OutputMetric::Diagonal(w) => Err(Error::shape(format!(
                "metric has dimension {} but the output has dimension {m}",
                w.dim()
            ))),
        }
    }

    pub fn scaled(&self, c: f64, m: usize) -> Result<OutputMetric> {
        let w = self.weights(m)?.into_iter().map(|x| x * c).collect::<Vec<_>>();
        OutputMetric::diagonal(Vector::from(w))
    }
}

/// How eigenvalues are declared null.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum NullThreshold {
    /// `λ ≤ eps`
    Absolute(f64),
    /// `λ ≤ eps · λ_max`
    Relative(f64),
}

impl NullThreshold {
    fn validate(&self) -> Result<()> {
        let eps = match self {
            NullThreshold::Absolute(e) | NullThreshold::Relative(e) => *e,
        };
        if !(eps.is_finite() && eps > 0.0) {
            return Err(Error::contract(format!("null threshold must be positive, got {eps}")));
        }
        Ok(())
    }

    fn cutoff(&self, eigenvalues: &[f64]) -> f64 {
        match *self {
            NullThreshold::Absolute(e) => e,
            NullThreshold::Relative(e) => e * eigenvalues.last().copied().unwrap_or(0.0).max(0.0),
        }
    }
}

/// `F*g = Jᵀ G J`, filled from the defining double sum with exact symmetry.
pub fn pullback(j: &Matrix, g: &OutputMetric) -> Result<Matrix> {
    let (m, n) = j.shape();
    let w = g.weights(m)?;
    let mut h = Matrix::zeros(n, n);
    for (k, &wk) in w.iter().enumerate() {
        let row = j.row(k);
        for i in 0..n {
            let a = wk * row[i];
            if a == 0.0 {
                continue;
            }
            let hrow = &mut h.row_mut(i)[i..];
            for (hv, &jv) in hrow.iter_mut().zip(&row[i..]) {
                *hv += a * jv;
            }
        }
    }
    for i in 0..n {
        for jx in 0..i {
            h[(i, jx)] = h[(jx, i)];
        }
    }
    Ok(h)
}

/// Pullback metric at a point with its eigenspaces split at the null
/// threshold.
#[derive(Debug, Clone)]
pub struct PullbackMetric {
    pub point: Vector,
    pub h: Matrix,
    pub eigen: SymmetricEigen,
    /// Threshold the split was made at.
    pub cutoff: f64,
    pub null_indices: Vec<usize>,
    pub nonnull_indices: Vec<usize>,
}

impl PullbackMetric {
    /// Builds the eigen split for a metric `h = BᵀB` given `B = G^{1/2} J`.
    fn from_factor(
        point: Vector,
        j: &Matrix,
        g: &OutputMetric,
        threshold: NullThreshold,
    ) -> Result<Self> {
        threshold.validate()?;
        let h = pullback(j, g)?;
        let eigen = if j.rows() < j.cols() {
            let w = g.weights(j.rows())?;
            let mut b = j.clone();
            b.scale_rows(&w.iter().map(|x| x.sqrt()).collect::<Vec<_>>());
            gram_eigen(&b)?
        } else {
            sym_eigen(&h)?
        };
        Self::from_parts(point, h, eigen, threshold)
    }

    fn from_parts(
        point: Vector,
        h: Matrix,
        mut eigen: SymmetricEigen,
        threshold: NullThreshold,
    ) -> Result<Self> {
        for l in eigen.eigenvalues.iter_mut() {
            if *l < 0.0 {
                if *l <= -PSD_SLACK {
                    return Err(Error::Numeric(format!(
                        "pullback metric has eigenvalue {l}, below the PSD tolerance"
                    )));
                }
                *l = 0.0;
            }
        }
        let cutoff = threshold.cutoff(&eigen.eigenvalues);
        let (null_indices, nonnull_indices) =
            (0..eigen.dim()).partition(|&i| eigen.eigenvalues[i] <= cutoff);
        Ok(PullbackMetric {
            point,
            h,
            eigen,
            cutoff,
            null_indices,
            nonnull_indices,
        })
    }

    /// Splits an explicitly given symmetric PSD matrix.
    pub fn from_matrix(point: Vector, h: Matrix, threshold: NullThreshold) -> Result<Self> {
        threshold.validate()?;
        let eigen = sym_eigen(&h)?;
        Self::from_parts(point, h, eigen, threshold)
    }

    pub fn kernel_dim(&self) -> usize {
        self.null_indices.len()
    }

    pub fn dim(&self) -> usize {
        self.h.rows()
    }
}

/// Metric plus the forward-pass facts a walker needs at the same point.
#[derive(Debug, Clone)]
pub struct PointAnalysis {
    pub metric: PullbackMetric,
    pub output: Vector,
    pub signature: ActivationSignature,
}

/// Pullback metric of `g` through `net` at `p`, null eigenvalues being those
/// at most `eps`.
pub fn analyze_point(
    net: &NetworkSpec,
    p: &[f64],
    g: &OutputMetric,
    eps: f64,
) -> Result<PullbackMetric> {
    Ok(analyze_point_with(net, p, g, NullThreshold::Absolute(eps))?.metric)
}

pub fn analyze_point_with(
    net: &NetworkSpec,
    p: &[f64],
    g: &OutputMetric,
    threshold: NullThreshold,
) -> Result<PointAnalysis> {
    let fwd = net.forward(p)?;
    if let Some((layer, unit)) = fwd.first_kink() {
        return Err(Error::OnKink { layer, unit });
    }
    let j = net.jacobian_from(&fwd);
    let metric = PullbackMetric::from_factor(Vector::from(p), &j, g, threshold)?;
    Ok(PointAnalysis {
        metric,
        signature: net.signature_from(&fwd),
        output: fwd.output,
    })
}

/// True iff some entry differs by strictly more than `tau`.
pub fn metric_jump(h1: &Matrix, h2: &Matrix, tau: f64) -> Result<bool> {
    if !(tau > 0.0) {
        return Err(Error::contract("jump threshold must be positive"));
    }
    let d = h1
        .max_abs_diff(h2)
        .ok_or_else(|| Error::shape("metric jump between matrices of different shape"))?;
    Ok(d > tau)
}

/// Jump threshold `2 · L · δ`, with `L` the product of per-layer Lipschitz
/// bounds (Frobenius norms for the linear parts).
pub fn suggest_tau(net: &NetworkSpec, delta: f64) -> Result<f64> {
    if !(delta.is_finite() && delta > 0.0) {
        return Err(Error::contract("step size must be positive"));
    }
    Ok(2.0 * net.lipschitz_bound()? * delta)
}

/// Energy and pseudolength of the segment `p → p + δ v` under the metric at
/// its start: `(δ² vᵀhv, δ √(vᵀhv))`.
pub fn step_increments(h: &Matrix, v: &[f64], delta: f64) -> (f64, f64) {
    let n = h.rows();
    let mut q = 0.0;
    for i in 0..n {
        if v[i] == 0.0 {
            continue;
        }
        q += v[i] * crate::linalg::dot(h.row(i), v);
    }
    let q = q.max(0.0);
    (delta * delta * q, delta * q.sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::{Activation, Dense, Layer};

    fn single(a: &[f64], act: Activation) -> NetworkSpec {
        NetworkSpec::new(vec![Layer::Dense(
            Dense::linear(Matrix::from_rows(&[a]), act).unwrap(),
        )])
        .unwrap()
    }

    #[test]
    fn relu_layer_golden_metric() {
        let j = Matrix::from_rows(&[[3.0, 0.0, 0.0]]);
        let h = pullback(&j, &OutputMetric::Identity).unwrap();
        assert_eq!(h, Matrix::diagonal(&[9.0, 0.0, 0.0]));
    }

    #[test]
    fn leaky_golden_metrics() {
        let net = single(&[1.0, 1.0, 1.0], Activation::leaky_relu(-0.1).unwrap());
        let neg = analyze_point(&net, &[-1.0, 0.2, 0.3], &OutputMetric::Identity, 1e-8).unwrap();
        let pos = analyze_point(&net, &[1.0, 0.2, 0.3], &OutputMetric::Identity, 1e-8).unwrap();
        for &x in neg.h.as_slice() {
            assert!((x - 0.01).abs() < 1e-15);
        }
        assert!(pos.h.as_slice().iter().all(|&x| x == 1.0));
        assert!(metric_jump(&neg.h, &pos.h, 0.1).unwrap());
        assert_eq!(neg.kernel_dim(), 2);
        assert_eq!(pos.kernel_dim(), 2);
    }

    #[test]
    fn relu_line_kernels() {
        let net = single(&[1.0, -1.0], Activation::Relu);
        let g = OutputMetric::Identity;
        let active = analyze_point(&net, &[-0.98, -2.45], &g, 1e-8).unwrap();
        assert_eq!(active.kernel_dim(), 1);
        let v = active.eigen.eigenvector(active.null_indices[0]);
        let s = 1.0 / 2f64.sqrt();
        assert!((v[0] - s).abs() < 1e-12 && (v[1] - s).abs() < 1e-12);
        let inactive = analyze_point(&net, &[-1.45, 1.30], &g, 1e-8).unwrap();
        assert_eq!(inactive.kernel_dim(), 2);
    }

    #[test]
    fn full_rank_has_no_kernel() {
        let net = NetworkSpec::new(vec![Layer::Dense(
            Dense::linear(Matrix::from_rows(&[[2.0, 1.0], [0.0, 1.0]]), Activation::Identity).unwrap(),
        )])
        .unwrap();
        let pm = analyze_point(&net, &[0.1, 0.2], &OutputMetric::Identity, 1e-8).unwrap();
        assert_eq!(pm.kernel_dim(), 0);
    }

    #[test]
    fn jump_boundary_is_strict() {
        let a = Matrix::from_rows(&[[0.0, 0.0], [0.0, 0.0]]);
        let b = Matrix::from_rows(&[[0.5, 0.0], [0.0, 0.0]]);
        assert!(!metric_jump(&a, &b, 0.5).unwrap());
        assert!(metric_jump(&a, &b, 0.25).unwrap());
        assert!(!metric_jump(&a, &a, 1e-9).unwrap());
        assert!(metric_jump(&a, &Matrix::zeros(3, 3), 1.0).is_err());
    }

    #[test]
    fn increments() {
        let (de, dpl) = step_increments(&Matrix::identity(2), &[0.6, 0.8], 0.1);
        assert!((de - 0.01).abs() < 1e-15);
        assert!((dpl - 0.1).abs() < 1e-15);

        let h = Matrix::from_rows(&[[1.0, -1.0], [-1.0, 1.0]]);
        let s = 1.0 / 2f64.sqrt();
        let (de, dpl) = step_increments(&h, &[s, -s], 0.01);
        assert!((de - 2e-4).abs() < 1e-15);
        assert!((dpl - 2f64.sqrt() * 1e-2).abs() < 1e-15);
    }

    #[test]
    fn tau_suggestions() {
        let net = single(&[2.0, -1.0], Activation::Relu);
        let tau = suggest_tau(&net, 1e-3).unwrap();
        assert!((tau - 2.0 * 5f64.sqrt() * 1e-3).abs() < 1e-15);

        let id = NetworkSpec::new(vec![Layer::Elementwise(crate::network::Elementwise {
            dim: 3,
            activation: Activation::Identity,
        })])
        .unwrap();
        assert_eq!(suggest_tau(&id, 0.01).unwrap(), 0.02);
    }

    #[test]
    fn diagonal_metric_validation() {
        assert!(OutputMetric::diagonal(Vector::from([1.0, 0.0])).is_err());
        let g = OutputMetric::diagonal(Vector::from([1.0, 2.0])).unwrap();
        assert!(g.weights(3).is_err());
    }
}

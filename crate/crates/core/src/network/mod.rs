//! Networks as sequences of layer maps with exact Jacobians.

mod activation;
mod layer;
mod lstm;

pub use activation::{Activation, ActivationJacobian, Ramp, SmoothKind, UnitState, KINK_TOLERANCE};
pub use layer::{AvgPool, Conv2d, Dense, Elementwise, Layer, LayerTrace, Padding, Residual, Shape3};
pub use lstm::LstmCell;

use crate::error::{Error, Result};
use crate::linalg::{Matrix, Vector};

/// What to do when a Jacobian is requested on an activation breakpoint.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum KinkPolicy {
    /// Fail with [`Error::OnKink`].
    #[default]
    Reject,
    /// Differentiate from the inactive (plateau) side.
    InactiveSide,
}

/// The composed map `Λ_n ∘ … ∘ Λ_1`, immutable once built.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkSpec {
    layers: Vec<Layer>,
    input_dim: usize,
    output_dim: usize,
    memory_dim: Option<usize>,
}

/// Output of a forward pass plus the per-layer trace.
#[derive(Debug, Clone)]
pub struct Forward {
    pub output: Vector,
    pub layers: Vec<LayerTrace>,
}

impl Forward {
    /// `(layer, unit)` of the first unit sitting on a breakpoint.
    pub fn first_kink(&self) -> Option<(usize, usize)> {
        self.layers
            .iter()
            .enumerate()
            .find_map(|(l, t)| t.kinks.first().map(|&u| (l, u)))
    }
}

/// Active/inactive pattern of every non-differentiable unit, in layer order.
/// Equality compares the pattern only.
#[derive(Debug, Clone, Eq)]
pub struct ActivationSignature {
    pub states: Vec<UnitState>,
    /// Set when some unit sat exactly on its breakpoint.
    pub on_kink: bool,
}

impl PartialEq for ActivationSignature {
    fn eq(&self, other: &Self) -> bool {
        self.states == other.states
    }
}

impl ActivationSignature {
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    /// FNV-1a over the state bytes; stable across platforms and releases.
    pub fn hash64(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for s in &self.states {
            h ^= *s as u8 as u64;
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
        h
    }
}

/// State of a recurrent network at one time step: the datum `u` and the
/// memory `r` it is paired with.
#[derive(Debug, Clone, PartialEq)]
pub struct RecurrentState {
    pub u: Vector,
    pub r: Vector,
}

impl RecurrentState {
    pub fn concat(&self) -> Vec<f64> {
        let mut v = self.u.to_vec();
        v.extend_from_slice(&self.r);
        v
    }
}

#[derive(Debug, Clone)]
pub struct RecurrentStep {
    pub state: RecurrentState,
    pub output: Vector,
}

/// Jacobian of a recurrent network at a fixed state, split by input block.
#[derive(Debug, Clone)]
pub struct RecurrentJacobian {
    /// `∂o/∂u` with the memory held fixed.
    pub input_block: Matrix,
    /// `∂o/∂r`
    pub memory_block: Matrix,
}

impl NetworkSpec {
    pub fn new(layers: Vec<Layer>) -> Result<Self> {
        let first = layers
            .first()
            .ok_or_else(|| Error::contract("a network needs at least one layer"))?;
        layer::check_chain(&layers)?;
        Ok(NetworkSpec {
            input_dim: first.in_dim(),
            output_dim: layers.last().expect("non-empty").out_dim(),
            layers,
            memory_dim: None,
        })
    }

    /// Recurrent network on `(u, r)`: the trailing `memory_dim` inputs are
    /// the memory and the trailing `memory_dim` outputs are the next memory.
    pub fn recurrent(layers: Vec<Layer>, memory_dim: usize) -> Result<Self> {
        let mut net = Self::new(layers)?;
        if memory_dim == 0 || memory_dim > net.input_dim || memory_dim > net.output_dim {
            return Err(Error::shape(format!(
                "memory dimension {memory_dim} must be positive and fit both input ({}) and output ({})",
                net.input_dim, net.output_dim
            )));
        }
        net.memory_dim = Some(memory_dim);
        Ok(net)
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn output_dim(&self) -> usize {
        self.output_dim
    }

    pub fn memory_dim(&self) -> Option<usize> {
        self.memory_dim
    }

    pub fn forward(&self, x: &[f64]) -> Result<Forward> {
        if x.len() != self.input_dim {
            return Err(Error::shape(format!(
                "network expects input of dimension {}, got {}",
                self.input_dim,
                x.len()
            )));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("input has non-finite entries".into()));
        }
        let mut traces = Vec::with_capacity(self.layers.len());
        let mut cur: &[f64] = x;
        for (i, layer) in self.layers.iter().enumerate() {
            let t = layer.forward(cur);
            if t.output.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite { layer: i });
            }
            traces.push(t);
            cur = &traces[i].output;
        }
        Ok(Forward {
            output: Vector::from(cur),
            layers: traces,
        })
    }

    pub fn output(&self, x: &[f64]) -> Result<Vector> {
        Ok(self.forward(x)?.output)
    }

    /// Chain-rule product of the layer Jacobians at `x`
    /// (`output_dim × input_dim`); fails on activation breakpoints.
    pub fn jacobian(&self, x: &[f64]) -> Result<Matrix> {
        self.jacobian_with(x, KinkPolicy::Reject)
    }

    pub fn jacobian_with(&self, x: &[f64], policy: KinkPolicy) -> Result<Matrix> {
        let fwd = self.forward(x)?;
        if policy == KinkPolicy::Reject {
            if let Some((layer, unit)) = fwd.first_kink() {
                return Err(Error::OnKink { layer, unit });
            }
        }
        Ok(self.jacobian_from(&fwd))
    }

    /// Jacobian from an existing trace, sweeping from the output side so the
    /// running product keeps `output_dim` rows.
    pub fn jacobian_from(&self, fwd: &Forward) -> Matrix {
        let mut acc = Matrix::identity(self.output_dim);
        for (layer, trace) in self.layers.iter().zip(&fwd.layers).rev() {
            acc = layer.pull_rows(&acc, trace);
        }
        acc
    }

    pub fn activation_signature(&self, x: &[f64]) -> Result<ActivationSignature> {
        Ok(self.signature_from(&self.forward(x)?))
    }

    pub fn signature_from(&self, fwd: &Forward) -> ActivationSignature {
        let mut states = Vec::new();
        for (layer, t) in self.layers.iter().zip(&fwd.layers) {
            layer.unit_states(t, &mut states);
        }
        ActivationSignature {
            states,
            on_kink: fwd.first_kink().is_some(),
        }
    }

    /// Product of per-layer Lipschitz bounds.
    pub fn lipschitz_bound(&self) -> Result<f64> {
        self.layers
            .iter()
            .try_fold(1.0, |acc, l| Ok(acc * l.lipschitz_bound()?))
    }

    fn memory(&self) -> Result<usize> {
        self.memory_dim
            .ok_or_else(|| Error::contract("network is not recurrent"))
    }

    /// Unrolls the recurrence from `r₀ = 0` for `steps` steps.
    pub fn unroll(&self, inputs: &[Vector], steps: usize) -> Result<Vec<RecurrentStep>> {
        let m = self.memory()?;
        self.unroll_from(inputs, steps, Vector::zeros(m))
    }

    /// As [`Self::unroll`] with an explicit initial memory.
    pub fn unroll_from(
        &self,
        inputs: &[Vector],
        steps: usize,
        initial_memory: Vector,
    ) -> Result<Vec<RecurrentStep>> {
        let m = self.memory()?;
        if steps > inputs.len() {
            return Err(Error::contract(format!(
                "{steps} steps requested but only {} inputs given",
                inputs.len()
            )));
        }
        if initial_memory.dim() != m {
            return Err(Error::shape("initial memory has the wrong dimension"));
        }
        let u_dim = self.input_dim - m;
        let mut r = initial_memory;
        let mut out = Vec::with_capacity(steps);
        for u in inputs.iter().take(steps) {
            if u.dim() != u_dim {
                return Err(Error::shape(format!(
                    "recurrent input has dimension {}, expected {u_dim}",
                    u.dim()
                )));
            }
            let state = RecurrentState { u: u.clone(), r };
            let o = self.output(&state.concat())?;
            r = Vector::from(&o[self.output_dim - m..]);
            out.push(RecurrentStep { state, output: o });
        }
        Ok(out)
    }

    /// Jacobian at one recurrent state with the previous memory treated as a
    /// constant (`input_block`), plus the memory block.
    pub fn recurrent_jacobian(&self, state: &RecurrentState) -> Result<RecurrentJacobian> {
        let m = self.memory()?;
        let full = self.jacobian(&state.concat())?;
        let u_dim = self.input_dim - m;
        let mut input_block = Matrix::zeros(self.output_dim, u_dim);
        let mut memory_block = Matrix::zeros(self.output_dim, m);
        for i in 0..self.output_dim {
            input_block.row_mut(i).copy_from_slice(&full.row(i)[..u_dim]);
            memory_block.row_mut(i).copy_from_slice(&full.row(i)[u_dim..]);
        }
        Ok(RecurrentJacobian {
            input_block,
            memory_block,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn relu_line() -> NetworkSpec {
        NetworkSpec::new(vec![Layer::Dense(
            Dense::linear(Matrix::from_rows(&[[1.0, -1.0]]), Activation::Relu).unwrap(),
        )])
        .unwrap()
    }

    #[test]
    fn relu_line_forward_and_signature() {
        let net = relu_line();
        let y = net.output(&[-0.98, -2.45]).unwrap();
        assert!((y[0] - 1.47).abs() < 1e-12);
        let sig = net.activation_signature(&[-0.98, -2.45]).unwrap();
        assert_eq!(sig.states, vec![UnitState::Active]);
        let sig = net.activation_signature(&[-1.45, 1.30]).unwrap();
        assert_eq!(sig.states, vec![UnitState::Inactive]);
    }

    #[test]
    fn kink_rejected_or_flagged() {
        let net = relu_line();
        assert!(matches!(
            net.jacobian(&[1.0, 1.0]),
            Err(Error::OnKink { layer: 0, unit: 0 })
        ));
        let j = net.jacobian_with(&[1.0, 1.0], KinkPolicy::InactiveSide).unwrap();
        assert_eq!(j.as_slice(), &[0.0, 0.0]);
        let sig = net.activation_signature(&[1.0, 1.0]).unwrap();
        assert!(sig.on_kink);
        assert_eq!(sig.states, vec![UnitState::Inactive]);
    }

    #[test]
    fn identity_network() {
        let net = NetworkSpec::new(vec![Layer::Dense(
            Dense::linear(Matrix::identity(3), Activation::Identity).unwrap(),
        )])
        .unwrap();
        let x = [0.1, -2.0, 3.5];
        assert_eq!(net.output(&x).unwrap().as_slice(), &x);
        assert_eq!(net.jacobian(&x).unwrap(), Matrix::identity(3));
        assert!(net.activation_signature(&x).unwrap().is_empty());
    }

    #[test]
    fn linear_chain_is_product() {
        let a1 = Matrix::from_rows(&[[1.0, 2.0], [0.5, -1.0], [3.0, 0.0]]);
        let a2 = Matrix::from_rows(&[[1.0, -1.0, 2.0]]);
        let net = NetworkSpec::new(vec![
            Layer::Dense(Dense::linear(a1.clone(), Activation::Identity).unwrap()),
            Layer::Dense(Dense::linear(a2.clone(), Activation::Identity).unwrap()),
        ])
        .unwrap();
        assert_eq!(net.jacobian(&[0.3, 0.7]).unwrap(), a2.matmul(&a1).unwrap());
    }

    #[test]
    fn shape_errors() {
        let net = relu_line();
        assert!(matches!(net.forward(&[1.0]), Err(Error::Shape(_))));
        let bad = NetworkSpec::new(vec![
            Layer::Dense(Dense::linear(Matrix::zeros(2, 3), Activation::Tanh).unwrap()),
            Layer::Dense(Dense::linear(Matrix::zeros(1, 3), Activation::Tanh).unwrap()),
        ]);
        assert!(matches!(bad, Err(Error::Shape(_))));
    }

    #[test]
    fn non_finite_names_layer() {
        let net = NetworkSpec::new(vec![
            Layer::Dense(Dense::linear(Matrix::from_rows(&[[1e200]]), Activation::Identity).unwrap()),
            Layer::Dense(Dense::linear(Matrix::from_rows(&[[1e200]]), Activation::Identity).unwrap()),
        ])
        .unwrap();
        assert!(matches!(
            net.forward(&[1e200]),
            Err(Error::NonFinite { layer: 0 })
        ));
    }

    #[test]
    fn single_step_recurrence_is_forward_on_zero_memory() {
        let layers = vec![Layer::Dense(
            Dense::new(
                Matrix::from_rows(&[[0.5, 0.1, -0.2], [0.3, -0.7, 0.4]]),
                Vector::from([0.05, -0.1]),
                Activation::Tanh,
            )
            .unwrap(),
        )];
        let net = NetworkSpec::recurrent(layers, 1).unwrap();
        let u = Vector::from([0.2, -0.4]);
        let steps = net.unroll(std::slice::from_ref(&u), 1).unwrap();
        assert_eq!(steps[0].state.r.as_slice(), &[0.0]);
        let direct = net.output(&[0.2, -0.4, 0.0]).unwrap();
        assert_eq!(steps[0].output, direct);
        assert!(net.unroll(std::slice::from_ref(&u), 2).is_err());
    }
}

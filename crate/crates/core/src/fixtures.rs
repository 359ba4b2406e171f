//! Small reference networks with known level sets, plus seeded random
//! networks for property checks and a digit-classifier-shaped convolutional
//! network.

use crate::linalg::{Matrix, Vector};
use crate::network::{
    Activation, AvgPool, Conv2d, Dense, Elementwise, Layer, LstmCell, NetworkSpec, Padding,
    Residual, Shape3,
};
use crate::walk::WalkRng;

fn single(rows: &[&[f64]], act: Activation) -> NetworkSpec {
    NetworkSpec::new(vec![Layer::Dense(
        Dense::linear(Matrix::from_rows(rows), act).expect("fixture shapes"),
    )])
    .expect("fixture chain")
}

/// `relu(x − y)`: the classes are lines `x − y = c` for `c > 0` and the
/// closed half-plane `x ≤ y`.
pub fn relu_line() -> NetworkSpec {
    single(&[&[1.0, -1.0]], Activation::Relu)
}

/// `relu(x − y + z)`: planes with normal `(1, −1, 1)` in the active region.
pub fn relu_plane() -> NetworkSpec {
    single(&[&[1.0, -1.0, 1.0]], Activation::Relu)
}

/// `relu(3x)` on ℝ³.
pub fn relu_octant() -> NetworkSpec {
    single(&[&[3.0, 0.0, 0.0]], Activation::Relu)
}

/// `leaky(x + y + z)` with negative-side slope −0.1.
pub fn leaky_sum() -> NetworkSpec {
    single(&[&[1.0, 1.0, 1.0]], Activation::leaky_relu(-0.1).expect("valid slope"))
}

/// `leaky(2x − y)` with negative-side slope −0.01: classes are lines
/// parallel to `y = 2x`.
pub fn leaky_line() -> NetworkSpec {
    single(&[&[2.0, -1.0]], Activation::leaky_relu(-0.01).expect("valid slope"))
}

/// `leaky(x) + leaky(y)` with negative-side slope −0.01. The null line
/// through a point of the positive quadrant runs into both axes.
pub fn leaky_pair() -> NetworkSpec {
    NetworkSpec::new(vec![
        Layer::Dense(
            Dense::linear(Matrix::identity(2), Activation::leaky_relu(-0.01).expect("valid slope"))
                .expect("fixture shapes"),
        ),
        Layer::Dense(Dense::linear(Matrix::from_rows(&[[1.0, 1.0]]), Activation::Identity).expect("fixture shapes")),
    ])
    .expect("fixture chain")
}

/// Identity map on ℝⁿ.
pub fn identity(n: usize) -> NetworkSpec {
    NetworkSpec::new(vec![Layer::Elementwise(Elementwise {
        dim: n,
        activation: Activation::Identity,
    })])
    .expect("fixture chain")
}

fn gaussian(rng: &mut WalkRng, len: usize, scale: f64) -> Vec<f64> {
    (0..len).map(|_| scale * rng.normal()).collect()
}

fn random_dense(rng: &mut WalkRng, inp: usize, out: usize, act: Activation) -> Layer {
    let w = gaussian(rng, out * inp, 1.0 / (inp as f64).sqrt());
    let b = gaussian(rng, out, 0.1);
    Layer::Dense(
        Dense::new(Matrix::new(out, inp, w).expect("sized"), Vector::from(b), act).expect("fixture shapes"),
    )
}

/// Dense chain through `dims` with `act` on hidden layers and identity on
/// the last; weights `N(0, 1/fan_in)`, biases `N(0, 0.01)`.
pub fn random_mlp(seed: u64, dims: &[usize], act: Activation) -> NetworkSpec {
    assert!(dims.len() >= 2, "need input and output dimensions");
    let mut rng = WalkRng::new(seed);
    let n = dims.len() - 1;
    let layers = (0..n)
        .map(|i| {
            let a = if i + 1 == n { Activation::Identity } else { act };
            random_dense(&mut rng, dims[i], dims[i + 1], a)
        })
        .collect();
    NetworkSpec::new(layers).expect("fixture chain")
}

/// Residual block `x + W₂ tanh(W₁ x + b₁)` on ℝⁿ followed by a tanh read-out
/// to two outputs.
pub fn residual_net(seed: u64, n: usize) -> NetworkSpec {
    let mut rng = WalkRng::new(seed);
    let inner = vec![
        random_dense(&mut rng, n, n, Activation::Tanh),
        random_dense(&mut rng, n, n, Activation::Identity),
    ];
    NetworkSpec::new(vec![
        Layer::Residual(Residual::new(inner).expect("square block")),
        random_dense(&mut rng, n, 2, Activation::Tanh),
    ])
    .expect("fixture chain")
}

/// One LSTM cell as a recurrent network on `(u, (c, h))`; the whole output
/// `(c', h')` is carried as memory.
pub fn lstm_net(seed: u64, input_dim: usize, hidden: usize) -> NetworkSpec {
    let mut rng = WalkRng::new(seed);
    let wi = gaussian(&mut rng, 4 * hidden * input_dim, 1.0 / (input_dim as f64).sqrt());
    let wh = gaussian(&mut rng, 4 * hidden * hidden, 1.0 / (hidden as f64).sqrt());
    let b = gaussian(&mut rng, 4 * hidden, 0.1);
    let cell = LstmCell::new(
        Matrix::new(4 * hidden, input_dim, wi).expect("sized"),
        Matrix::new(4 * hidden, hidden, wh).expect("sized"),
        Vector::from(b),
    )
    .expect("fixture shapes");
    NetworkSpec::recurrent(vec![Layer::Lstm(cell)], 2 * hidden).expect("fixture chain")
}

/// Digit-classifier architecture on 28×28 inputs:
///
/// ```text
/// conv 1→10, 5×5   28×28 → 24×24
/// avgpool 2        → 12×12, relu
/// conv 10→20, 5×5  → 8×8
/// avgpool 2        → 4×4, relu
/// flatten 320, dense 320→50 relu, dense 50→10 softmax
/// ```
///
/// Weights are `N(0, gain²/fan_in)` with the given seed; biases are nonzero
/// so that no unit sits exactly on its breakpoint over a blank background.
pub fn image_net(seed: u64) -> NetworkSpec {
    let mut rng = WalkRng::new(seed);
    let mut conv = |input: Shape3, out: usize, gain: f64| {
        let fan_in = (input.channels * 25) as f64;
        let kernels = gaussian(&mut rng, out * input.channels * 25, gain / fan_in.sqrt());
        let bias: Vec<f64> = gaussian(&mut rng, out, 0.05).iter().map(|b| b + 0.02).collect();
        Layer::Conv2d(
            Conv2d::new(input, out, 5, kernels, bias, 1, Padding::None, Activation::Identity)
                .expect("fixture shapes"),
        )
    };
    let c1 = conv(Shape3::new(1, 28, 28), 10, 2.0);
    let c2 = conv(Shape3::new(10, 12, 12), 20, 2.0);
    let mut rng = WalkRng::new(seed ^ 0x5eed);
    let d1 = random_dense(&mut rng, 320, 50, Activation::Relu);
    let d2 = {
        let w = gaussian(&mut rng, 10 * 50, 3.0 / 50f64.sqrt());
        let b = gaussian(&mut rng, 10, 0.1);
        Layer::Dense(
            Dense::new(Matrix::new(10, 50, w).expect("sized"), Vector::from(b), Activation::Softmax)
                .expect("fixture shapes"),
        )
    };
    let relu = |dim| Layer::Elementwise(Elementwise { dim, activation: Activation::Relu });
    NetworkSpec::new(vec![
        c1,
        Layer::AvgPool(AvgPool::new(Shape3::new(10, 24, 24), 2).expect("fits")),
        relu(1440),
        c2,
        Layer::AvgPool(AvgPool::new(Shape3::new(20, 8, 8), 2).expect("fits")),
        relu(320),
        Layer::Flatten(Shape3::new(20, 4, 4)),
        d1,
        d2,
    ])
    .expect("fixture chain")
}

/// A 28×28 handwritten-four-like image in `[0, 1]`, row-major: two
/// vertical strokes joined by a horizontal bar, with soft edges.
pub fn digit_four() -> Vector {
    let mut img = vec![0.0; 28 * 28];
    let mut ink = |r: usize, c: usize, v: f64| {
        let px = &mut img[r * 28 + c];
        *px = f64::max(*px, v);
    };
    let stroke = |ink: &mut dyn FnMut(usize, usize, f64), r0: usize, r1: usize, c0: usize, c1: usize| {
        for r in r0..=r1 {
            for c in c0..=c1 {
                ink(r, c, 1.0);
            }
            ink(r, c0 - 1, 0.5);
            ink(r, c1 + 1, 0.5);
        }
    };
    stroke(&mut ink, 4, 15, 8, 9);
    stroke(&mut ink, 4, 23, 18, 19);
    for c in 8..=21 {
        ink(15, c, 1.0);
        ink(16, c, 1.0);
        ink(14, c, 0.5);
        ink(17, c, 0.5);
    }
    Vector::from(img)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn image_net_shapes() {
        let net = image_net(1);
        assert_eq!((net.input_dim(), net.output_dim()), (784, 10));
        let y = net.output(&digit_four()).unwrap();
        assert!((y.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(net.forward(&digit_four()).unwrap().first_kink().is_none());
    }

    #[test]
    fn digit_is_in_range() {
        let d = digit_four();
        assert!(d.iter().all(|&v| (0.0..=1.0).contains(&v)));
        assert!(d.iter().filter(|&&v| v == 1.0).count() > 60);
    }

    #[test]
    fn lstm_fixture_is_recurrent() {
        let net = lstm_net(3, 2, 3);
        assert_eq!(net.memory_dim(), Some(6));
        assert_eq!(net.input_dim(), 8);
    }
}

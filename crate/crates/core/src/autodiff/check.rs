//! Central finite differences, used as an independent oracle for the
//! analytic gradients produced by [`Tape::backward`](super::Tape::backward).

use super::array::DenseArray;

/// Numerical gradient of a scalar function of several arrays.
pub fn central_difference(f: impl Fn(&[DenseArray]) -> f64, inputs: &[DenseArray], h: f64) -> Vec<DenseArray> {
    let mut work = inputs.to_vec();
    let mut out = Vec::with_capacity(inputs.len());
    for i in 0..inputs.len() {
        let mut grad = DenseArray::zeros(inputs[i].shape());
        for j in 0..inputs[i].len() {
            let orig = work[i].data()[j];
            work[i].data_mut()[j] = orig + h;
            let up = f(&work);
            work[i].data_mut()[j] = orig - h;
            let down = f(&work);
            work[i].data_mut()[j] = orig;
            grad.data_mut()[j] = (up - down) / (2.0 * h);
        }
        out.push(grad);
    }
    out
}

/// Largest elementwise relative error, with an absolute floor on the
/// denominator so near-zero gradients compare absolutely.
pub fn max_relative_error(analytic: &DenseArray, numeric: &DenseArray) -> f64 {
    analytic
        .data()
        .iter()
        .zip(numeric.data())
        .map(|(a, n)| (a - n).abs() / a.abs().max(n.abs()).max(1.0))
        .fold(0.0, f64::max)
}

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::tape::{Tape, Var, LEAKY_SLOPE};
use super::AutodiffError;

/// Finite-difference step used throughout the gradient checks.
pub const FD_STEP: f64 = 1e-5;

/// Compares reverse-mode gradients of `build` against central differences.
///
/// `build` maps input leaves to a scalar. Returns the largest relative
/// error over every input element.
pub fn gradient_error(
    inputs: &[DenseArray],
    build: impl Fn(&mut Tape, &[Var]) -> Result<Var, AutodiffError>,
) -> Result<f64, AutodiffError> {
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|x| tape.variable(x.clone())).collect();
    let loss = build(&mut tape, &vars)?;
    tape.backward(loss)?;
    let numeric = central_difference(
        |xs| {
            let mut t = Tape::new();
            let vs: Vec<Var> = xs.iter().map(|x| t.constant(x.clone())).collect();
            let l = build(&mut t, &vs).expect("forward pass failed during finite differences");
            t.value(l).data()[0]
        },
        inputs,
        FD_STEP,
    );
    let mut worst = 0.0f64;
    for (v, n) in vars.iter().zip(&numeric) {
        let zero = DenseArray::zeros(n.shape());
        let a = tape.grad(*v).unwrap_or(&zero);
        worst = worst.max(max_relative_error(a, n));
    }
    Ok(worst)
}

fn uniform(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> DenseArray {
    let n = shape.iter().product();
    DenseArray::from_parts(shape.to_vec(), (0..n).map(|_| rng.random_range(lo..hi)).collect())
}

/// Values bounded away from zero, so kinks at the origin stay out of reach
/// of the finite-difference stencil.
fn off_zero(rng: &mut ChaCha8Rng, shape: &[usize]) -> DenseArray {
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let m = rng.random_range(0.05..2.0);
            if rng.random_bool(0.5) { m } else { -m }
        })
        .collect();
    DenseArray::from_parts(shape.to_vec(), data)
}

/// Attention operands whose pre-activations all stay clear of the
/// leaky-ReLU kink, so a finite-difference step never straddles it.
fn gat_inputs(rng: &mut ChaCha8Rng, batch: usize, n: usize, width: usize) -> (DenseArray, DenseArray, DenseArray, Arc<[u8]>) {
    loop {
        let src = uniform(rng, &[batch, n, width], -1.0, 1.0);
        let dst = uniform(rng, &[batch, n, width], -1.0, 1.0);
        let bias = uniform(rng, &[2, width], -1.0, 1.0);
        let types: Vec<u8> = (0..n * n).map(|_| rng.random_range(0..2u8)).collect();
        let mut clear = true;
        for b in 0..batch {
            for u in 0..n {
                for v in 0..n {
                    let t = types[u * n + v] as usize;
                    for j in 0..width {
                        let z = src.data()[(b * n + u) * width + j] + dst.data()[(b * n + v) * width + j] + bias.data()[t * width + j];
                        clear &= z.abs() > 1e-3;
                    }
                }
            }
        }
        if clear {
            let shape: Vec<usize> = if batch == 1 { vec![n, width] } else { vec![batch, n, width] };
            return (src.reshaped(&shape).unwrap(), dst.reshaped(&shape).unwrap(), bias, types.into());
        }
    }
}

/// Projects an arbitrary output to a scalar through fixed random weights,
/// so every output element contributes a distinct gradient.
fn project(tape: &mut Tape, y: Var, weights: &DenseArray) -> Result<Var, AutodiffError> {
    let w = tape.constant(weights.clone());
    let p = tape.mul(y, w)?;
    tape.sum(p)
}

type Build = Box<dyn Fn(&mut Tape, &[Var]) -> Result<Var, AutodiffError>>;

fn case(out_shape: &[usize], rng: &mut ChaCha8Rng, f: impl Fn(&mut Tape, &[Var]) -> Result<Var, AutodiffError> + 'static) -> Build {
    let weights = uniform(rng, out_shape, -1.0, 1.0);
    Box::new(move |t, v| {
        let y = f(t, v)?;
        project(t, y, &weights)
    })
}

/// Runs the finite-difference check on every primitive with inputs drawn
/// from `seed`. Returns `(primitive, max relative error)` pairs.
pub fn check_primitives(seed: u64) -> Result<Vec<(&'static str, f64)>, AutodiffError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let r = &mut rng;
    let mut cases: Vec<(&'static str, Vec<DenseArray>, Build)> = Vec::new();

    let a = uniform(r, &[3, 4], -2.0, 2.0);
    let b = uniform(r, &[3, 4], -2.0, 2.0);
    cases.push(("add", vec![a.clone(), b.clone()], case(&[3, 4], r, |t, v| t.add(v[0], v[1]))));
    let row = uniform(r, &[4], -2.0, 2.0);
    cases.push(("add_broadcast", vec![a.clone(), row.clone()], case(&[3, 4], r, |t, v| t.add(v[0], v[1]))));
    let col = uniform(r, &[2, 1, 4], -2.0, 2.0);
    let mid = uniform(r, &[3, 1], -2.0, 2.0);
    cases.push(("add_outer_broadcast", vec![col, mid], case(&[2, 3, 4], r, |t, v| t.add(v[0], v[1]))));
    cases.push(("sub", vec![a.clone(), row.clone()], case(&[3, 4], r, |t, v| t.sub(v[0], v[1]))));
    cases.push(("mul", vec![a.clone(), b.clone()], case(&[3, 4], r, |t, v| t.mul(v[0], v[1]))));
    cases.push(("mul_broadcast", vec![a.clone(), row.clone()], case(&[3, 4], r, |t, v| t.mul(v[0], v[1]))));
    let denom = off_zero(r, &[4]).map(|x| x.signum() * (x.abs() + 0.5));
    cases.push(("div", vec![a.clone(), denom], case(&[3, 4], r, |t, v| t.div(v[0], v[1]))));
    cases.push(("scale", vec![a.clone()], case(&[3, 4], r, |t, v| t.scale(v[0], -1.7))));
    cases.push(("offset", vec![a.clone()], case(&[3, 4], r, |t, v| t.offset(v[0], 0.3))));
    let lhs = uniform(r, &[2, 3, 4], -1.0, 1.0);
    let rhs = uniform(r, &[4, 5], -1.0, 1.0);
    cases.push(("matmul", vec![lhs, rhs.clone()], case(&[2, 3, 5], r, |t, v| t.matmul(v[0], v[1]))));
    let vec4 = uniform(r, &[4], -1.0, 1.0);
    cases.push(("matmul_vector", vec![vec4, rhs], case(&[5], r, |t, v| t.matmul(v[0], v[1]))));
    let c3 = uniform(r, &[3, 2], -1.0, 1.0);
    cases.push(("concat", vec![a.clone(), c3, b.clone()], case(&[3, 10], r, |t, v| t.concat(&[v[0], v[1], v[2]]))));
    let kinked = off_zero(r, &[3, 4]);
    cases.push(("leaky_relu", vec![kinked.clone()], case(&[3, 4], r, |t, v| t.leaky_relu(v[0], LEAKY_SLOPE))));
    cases.push(("exp", vec![a.clone()], case(&[3, 4], r, |t, v| t.exp(v[0]))));
    let pos = uniform(r, &[3, 4], 0.2, 3.0);
    cases.push(("log", vec![pos], case(&[3, 4], r, |t, v| t.log(v[0]))));
    cases.push(("sigmoid", vec![a.clone()], case(&[3, 4], r, |t, v| t.sigmoid(v[0]))));
    cases.push(("softplus", vec![a.clone()], case(&[3, 4], r, |t, v| t.softplus(v[0]))));
    cases.push(("tanh", vec![a.clone()], case(&[3, 4], r, |t, v| t.tanh(v[0]))));
    cases.push(("square", vec![a.clone()], case(&[3, 4], r, |t, v| t.square(v[0]))));
    cases.push(("softmax", vec![a.clone()], case(&[3, 4], r, |t, v| t.softmax(v[0]))));
    cases.push(("log_softmax", vec![a.clone()], case(&[3, 4], r, |t, v| t.log_softmax(v[0]))));
    let cube = uniform(r, &[2, 3, 4], -2.0, 2.0);
    for axis in 0..3 {
        let mut shape = vec![2, 3, 4];
        shape.remove(axis);
        cases.push(("sum_axis", vec![cube.clone()], case(&shape, r, move |t, v| t.sum_axis(v[0], axis))));
        cases.push(("mean_axis", vec![cube.clone()], case(&shape, r, move |t, v| t.mean_axis(v[0], axis))));
        cases.push(("max_axis", vec![cube.clone()], case(&shape, r, move |t, v| t.max_axis(v[0], axis))));
    }
    cases.push(("sum", vec![cube.clone()], Box::new(|t, v| t.sum(v[0]))));
    cases.push(("mean", vec![cube.clone()], Box::new(|t, v| t.mean(v[0]))));
    cases.push(("reshape", vec![cube.clone()], case(&[6, 4], r, |t, v| t.reshape(v[0], &[6, 4]))));
    let rows: Arc<[usize]> = Arc::from(vec![2, 0, 2, 1]);
    cases.push(("select_rows", vec![a.clone()], case(&[4, 4], r, move |t, v| t.select_rows(v[0], rows.clone()))));

    let (n, heads, k) = (5, 2, 3);
    let (src, dst, bias, types) = gat_inputs(r, 1, n, heads * k);
    let att = uniform(r, &[heads * k], -1.0, 1.0);
    cases.push((
        "gat_scores",
        vec![src, dst, bias, att],
        case(&[n, heads, n], r, move |t, v| t.gat_scores(v[0], v[1], v[2], v[3], types.clone(), heads)),
    ));
    let weights = uniform(r, &[4, 2, 5], 0.0, 1.0);
    let values = uniform(r, &[5, 2, 3], -1.0, 1.0);
    cases.push(("attend", vec![weights, values], case(&[4, 2, 3], r, |t, v| t.attend(v[0], v[1]))));

    let (src, dst, bias, types) = gat_inputs(r, 3, n, heads * k);
    let att = uniform(r, &[heads * k], -1.0, 1.0);
    cases.push((
        "gat_scores_batched",
        vec![src, dst, bias, att],
        case(&[3, n, heads, n], r, move |t, v| t.gat_scores(v[0], v[1], v[2], v[3], types.clone(), heads)),
    ));
    let weights = uniform(r, &[2, 4, 2, 5], 0.0, 1.0);
    let values = uniform(r, &[2, 5, 2, 3], -1.0, 1.0);
    cases.push(("attend_batched", vec![weights, values], case(&[2, 4, 2, 3], r, |t, v| t.attend(v[0], v[1]))));

    cases
        .into_iter()
        .map(|(name, inputs, build)| gradient_error(&inputs, build).map(|e| (name, e)))
        .collect()
}

use deepdtf::autodiff::gradcheck::{check_gradients, GradCheckReport};
use deepdtf::autodiff::{Graph, Var};
use deepdtf::{Error, Result, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const H: f64 = 1e-5;
const TOL: f64 = 1e-4;
const TRIALS: u64 = 20;

fn rand_t(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(lo..hi)).collect()).unwrap()
}

/// Values bounded away from zero, for ops with a kink there.
fn away_from_zero(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let mut t = rand_t(rng, shape, 0.05, 2.0);
    for v in t.data_mut() {
        if rng.random_bool(0.5) {
            *v = -*v;
        }
    }
    t
}

/// Scalar `sum(y * w)` with fixed pseudo-random weights, so every output
/// element gets a distinct upstream gradient.
fn project(g: &mut Graph, y: Var) -> Result<Var> {
    let shape = g.shape(y).to_vec();
    let n = g.value(y).len();
    let w: Vec<f64> = (0..n).map(|i| ((i * 7919 % 113) as f64 / 113.0) - 0.37).collect();
    let w = g.constant(Tensor::new(shape, w)?);
    let p = g.mul(y, w)?;
    Ok(g.sum(p))
}

fn check_op<I, F>(name: &str, make_inputs: I, f: F)
where
    I: Fn(&mut ChaCha8Rng) -> Vec<Tensor>,
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    let mut total = GradCheckReport::default();
    for trial in 0..TRIALS {
        let mut rng = ChaCha8Rng::seed_from_u64(trial);
        let inputs = make_inputs(&mut rng);
        let r = check_gradients(&inputs, H, |g, v| {
            let y = f(g, v)?;
            project(g, y)
        })
        .unwrap();
        total.merge(r);
    }
    assert!(total.passes(TOL), "{name}: {total:?}");
    println!("{name}: max rel error {:.2e} over {} elements", total.max_rel_error, total.checked);
}

#[test]
fn elementwise_binary_ops() {
    let two = |rng: &mut ChaCha8Rng| vec![rand_t(rng, &[3, 4], -2.0, 2.0), rand_t(rng, &[3, 4], -2.0, 2.0)];
    check_op("add", two, |g, v| g.add(v[0], v[1]));
    check_op("sub", two, |g, v| g.sub(v[0], v[1]));
    check_op("mul", two, |g, v| g.mul(v[0], v[1]));
    check_op(
        "add_bias",
        |rng| vec![rand_t(rng, &[3, 4], -2.0, 2.0), rand_t(rng, &[4], -2.0, 2.0)],
        |g, v| g.add_bias(v[0], v[1]),
    );
    check_op(
        "scale_rows",
        |rng| vec![rand_t(rng, &[3, 4], -2.0, 2.0), rand_t(rng, &[3], -2.0, 2.0)],
        |g, v| g.scale_rows(v[0], v[1]),
    );
}

#[test]
fn matrix_ops() {
    check_op(
        "matmul",
        |rng| vec![rand_t(rng, &[3, 4], -1.0, 1.0), rand_t(rng, &[4, 2], -1.0, 1.0)],
        |g, v| g.matmul(v[0], v[1]),
    );
    check_op("transpose", |rng| vec![rand_t(rng, &[2, 5], -1.0, 1.0)], |g, v| g.transpose(v[0]));
    check_op("reshape", |rng| vec![rand_t(rng, &[2, 6], -1.0, 1.0)], |g, v| g.reshape(v[0], vec![3, 4]));
}

#[test]
fn unary_ops() {
    let any = |rng: &mut ChaCha8Rng| vec![rand_t(rng, &[2, 5], -3.0, 3.0)];
    let pos = |rng: &mut ChaCha8Rng| vec![rand_t(rng, &[2, 5], 0.1, 3.0)];
    check_op("relu", |rng| vec![away_from_zero(rng, &[2, 5])], |g, v| Ok(g.relu(v[0])));
    check_op("gelu", any, |g, v| Ok(g.gelu(v[0])));
    check_op("sigmoid", any, |g, v| Ok(g.sigmoid(v[0])));
    check_op("tanh", any, |g, v| Ok(g.tanh(v[0])));
    check_op("log", pos, |g, v| Ok(g.log(v[0])));
    check_op("exp", any, |g, v| Ok(g.exp(v[0])));
    check_op("powf", pos, |g, v| Ok(g.powf(v[0], 2.5)));
    check_op("scale", any, |g, v| Ok(g.scale(v[0], -1.7)));
    check_op("shift", any, |g, v| Ok(g.shift(v[0], 0.3)));
    check_op("neg", any, |g, v| Ok(g.neg(v[0])));
    check_op("rsub_scalar", any, |g, v| Ok(g.rsub_scalar(1.0, v[0])));
    check_op("square", any, |g, v| Ok(g.square(v[0])));
    // inside and outside the clamp range, away from its edges
    check_op(
        "clamp",
        |rng| {
            let mut t = away_from_zero(rng, &[2, 5]);
            for v in t.data_mut() {
                if (v.abs() - 1.0).abs() < 0.05 {
                    *v *= 1.2;
                }
            }
            vec![t]
        },
        |g, v| Ok(g.clamp(v[0], -1.0, 1.0)),
    );
}

#[test]
fn reductions() {
    let m = |rng: &mut ChaCha8Rng| vec![rand_t(rng, &[3, 4], -2.0, 2.0)];
    check_op("sum", m, |g, v| Ok(g.sum(v[0])));
    check_op("mean", m, |g, v| Ok(g.mean(v[0])));
    check_op("max", m, |g, v| Ok(g.max(v[0])));
    for axis in 0..2 {
        check_op("sum_axis", m, |g, v| g.sum_axis(v[0], axis));
        check_op("mean_axis", m, |g, v| g.mean_axis(v[0], axis));
        check_op("max_axis", m, |g, v| g.max_axis(v[0], axis));
    }
    check_op("global_avg_pool", m, |g, v| g.global_avg_pool(v[0]));
    check_op("global_max_pool", m, |g, v| g.global_max_pool(v[0]));
}

#[test]
fn normalizing_ops() {
    check_op("softmax vector", |rng| vec![rand_t(rng, &[5], -3.0, 3.0)], |g, v| g.softmax(v[0], 0));
    for axis in 0..2 {
        check_op("softmax matrix", |rng| vec![rand_t(rng, &[3, 4], -3.0, 3.0)], |g, v| g.softmax(v[0], axis));
    }
    check_op(
        "masked_softmax",
        |rng| vec![rand_t(rng, &[4, 4], -3.0, 3.0)],
        |g, v| g.masked_softmax(v[0], &[true, true, false, true], &[true, false, true, true]),
    );
    check_op(
        "masked_softmax_entries",
        |rng| vec![rand_t(rng, &[2, 3], -3.0, 3.0)],
        |g, v| g.masked_softmax_entries(v[0], &[true, false, true, true, true, false]),
    );
    check_op(
        "layernorm",
        |rng| vec![rand_t(rng, &[3, 5], -2.0, 2.0), rand_t(rng, &[5], 0.5, 1.5), rand_t(rng, &[5], -0.5, 0.5)],
        |g, v| g.layernorm(v[0], v[1], v[2], 1e-5),
    );
}

#[test]
fn structural_ops() {
    check_op(
        "conv1d",
        |rng| vec![rand_t(rng, &[2, 7], -1.0, 1.0), rand_t(rng, &[3, 2, 3], -1.0, 1.0)],
        |g, v| g.conv1d(v[0], v[1], 1, 1),
    );
    check_op(
        "conv1d strided",
        |rng| vec![rand_t(rng, &[1, 9], -1.0, 1.0), rand_t(rng, &[2, 1, 5], -1.0, 1.0)],
        |g, v| g.conv1d(v[0], v[1], 5, 2),
    );
    for axis in 0..2 {
        check_op(
            "concat",
            |rng| vec![rand_t(rng, &[2, 3], -1.0, 1.0), rand_t(rng, &[2, 3], -1.0, 1.0)],
            |g, v| g.concat(&[v[0], v[1], v[0]], axis),
        );
    }
    check_op("slice_last", |rng| vec![rand_t(rng, &[3, 5], -1.0, 1.0)], |g, v| g.slice_last(v[0], 1, 4));
    check_op(
        "select_rows",
        |rng| vec![rand_t(rng, &[4, 3], -1.0, 1.0)],
        |g, v| g.select_rows(v[0], &[2, 0, 2, 3]),
    );
    check_op(
        "embedding",
        |rng| vec![rand_t(rng, &[6, 3], -1.0, 1.0)],
        |g, v| g.embedding(v[0], &[5, 1, 1]),
    );
    // evaluation mode: identity
    check_op("dropout", |rng| vec![rand_t(rng, &[3, 4], -1.0, 1.0)], |g, v| g.dropout(v[0], 0.3));
}

#[test]
fn dropout_train_mode_gradient_is_the_mask() {
    let x = Tensor::filled(&[50], 1.0);
    let mut g = Graph::training(7);
    let v = g.param(x);
    let y = g.dropout(v, 0.4).unwrap();
    let out: Vec<f64> = g.value(y).data().to_vec();
    let s = g.sum(y);
    g.backward(s).unwrap();
    assert_eq!(g.grad(v).unwrap(), out.as_slice());
    assert!(out.iter().all(|o| *o == 0.0 || (*o - 1.0 / 0.6).abs() < 1e-15));
    assert!(out.contains(&0.0) && out.iter().any(|o| *o > 0.0));

    let mut a = Graph::training(7);
    let va = a.constant(Tensor::filled(&[50], 1.0));
    let ya = a.dropout(va, 0.4).unwrap();
    assert_eq!(a.value(ya).data(), out.as_slice());
}

#[test]
fn matmul_examples() {
    let mut g = Graph::new();
    let i = g.constant(Tensor::matrix(2, 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap());
    let m = g.constant(Tensor::matrix(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap());
    let p = g.matmul(i, m).unwrap();
    assert_eq!(g.value(p).data(), &[1.0, 2.0, 3.0, 4.0]);
    let a = g.constant(Tensor::matrix(1, 2, vec![1.0, 0.0]).unwrap());
    let b = g.constant(Tensor::matrix(2, 1, vec![0.0, 5.0]).unwrap());
    let p = g.matmul(a, b).unwrap();
    assert_eq!(g.value(p).data(), &[0.0]);
    let err = g.matmul(a, m).and_then(|_| g.matmul(b, m)).unwrap_err();
    assert!(matches!(err, Error::Dimension(_)));
    assert!(err.to_string().contains("[2, 1]") && err.to_string().contains("[2, 2]"), "{err}");

    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let inputs = vec![rand_t(&mut rng, &[3, 4], -1.0, 1.0), rand_t(&mut rng, &[4, 2], -1.0, 1.0)];
    let r = check_gradients(&inputs, H, |g, v| {
        let y = g.matmul(v[0], v[1])?;
        project(g, y)
    })
    .unwrap();
    assert!(r.passes(1e-6), "{r:?}");
}

#[test]
fn softmax_examples() {
    let mut g = Graph::new();
    let x = g.constant(Tensor::vector(vec![0.0, 0.0, 0.0]).unwrap());
    let y = g.softmax(x, 0).unwrap();
    assert!(g.value(y).data().iter().all(|v| (v - 1.0 / 3.0).abs() < 1e-15));
    let x = g.constant(Tensor::vector(vec![1000.0, 0.0, 0.0]).unwrap());
    let y = g.softmax(x, 0).unwrap();
    let v = g.value(y).data();
    assert!((v[0] - 1.0).abs() < 1e-12 && v[1].abs() < 1e-12 && v[2].abs() < 1e-12);

    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let t = rand_t(&mut rng, &[6, 7], -20.0, 20.0);
    let shifted = Tensor::new(vec![6, 7], t.data().iter().map(|v| v + 123.0).collect()).unwrap();
    let (a, b) = (g.constant(t), g.constant(shifted));
    let (sa, sb) = (g.softmax(a, 1).unwrap(), g.softmax(b, 1).unwrap());
    for r in 0..6 {
        let row = g.value(sa).row(r);
        assert!(row.iter().all(|v| *v >= 0.0));
        assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        for (p, q) in row.iter().zip(g.value(sb).row(r)) {
            assert!((p - q).abs() < 1e-12);
        }
    }

    let inputs = vec![rand_t(&mut rng, &[5], -2.0, 2.0)];
    let r = check_gradients(&inputs, H, |g, v| {
        let y = g.softmax(v[0], 0)?;
        project(g, y)
    })
    .unwrap();
    assert!(r.passes(1e-6), "{r:?}");
}

#[test]
fn layernorm_examples() {
    let mut g = Graph::new();
    let ones = g.constant(Tensor::filled(&[3], 1.0));
    let zeros = g.constant(Tensor::zeros(&[3]));
    let x = g.constant(Tensor::vector(vec![5.0, 5.0, 5.0]).unwrap());
    let y = g.layernorm(x, ones, zeros, 1e-5).unwrap();
    assert_eq!(g.value(y).data(), &[0.0, 0.0, 0.0]);

    let one2 = g.constant(Tensor::filled(&[2], 1.0));
    let zero2 = g.constant(Tensor::zeros(&[2]));
    let x = g.constant(Tensor::vector(vec![1.0, -1.0]).unwrap());
    let y = g.layernorm(x, one2, zero2, 1e-300).unwrap();
    assert!((g.value(y).data()[0] - 1.0).abs() < 1e-12 && (g.value(y).data()[1] + 1.0).abs() < 1e-12);

    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let g5 = g.constant(Tensor::filled(&[5], 1.0));
    let b5 = g.constant(Tensor::zeros(&[5]));
    let x = g.constant(rand_t(&mut rng, &[4, 5], -10.0, 10.0));
    let y = g.layernorm(x, g5, b5, 1e-12).unwrap();
    for r in 0..4 {
        let row = g.value(y).row(r);
        let mean = row.iter().sum::<f64>() / 5.0;
        let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 5.0;
        assert!(mean.abs() < 1e-9 && (var - 1.0).abs() < 1e-9);
    }

    let inputs = vec![rand_t(&mut rng, &[1, 6], -2.0, 2.0), rand_t(&mut rng, &[6], 0.5, 1.5), rand_t(&mut rng, &[6], -1.0, 1.0)];
    let r = check_gradients(&inputs, H, |g, v| {
        let y = g.layernorm(v[0], v[1], v[2], 1e-5)?;
        project(g, y)
    })
    .unwrap();
    assert!(r.passes(1e-5), "{r:?}");
}

#[test]
fn conv1d_examples() {
    let mut g = Graph::new();
    let x = g.constant(Tensor::matrix(1, 3, vec![1.0, 2.0, 3.0]).unwrap());
    let k = g.constant(Tensor::new(vec![1, 1, 1], vec![1.0]).unwrap());
    let y = g.conv1d(x, k, 1, 0).unwrap();
    assert_eq!(g.value(y).data(), &[1.0, 2.0, 3.0]);
    let x = g.constant(Tensor::matrix(1, 4, vec![1.0; 4]).unwrap());
    let k = g.constant(Tensor::new(vec![1, 1, 2], vec![1.0, 1.0]).unwrap());
    let y = g.conv1d(x, k, 1, 0).unwrap();
    assert_eq!(g.value(y).data(), &[2.0, 2.0, 2.0]);
    let big = g.constant(Tensor::new(vec![1, 1, 7], vec![1.0; 7]).unwrap());
    assert!(matches!(g.conv1d(x, big, 1, 1), Err(Error::Dimension(_))));
    // output length formula
    let x = g.constant(Tensor::matrix(1, 10, vec![1.0; 10]).unwrap());
    let k = g.constant(Tensor::new(vec![1, 1, 3], vec![1.0; 3]).unwrap());
    let y = g.conv1d(x, k, 3, 1).unwrap();
    assert_eq!(g.shape(y), &[1, (10 + 2 - 3) / 3 + 1]);
}

#[test]
fn shared_subexpression_equals_duplicated_input() {
    // f(x) = sum(u * u + sin-free mix), u = tanh(x W) used on two paths
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let x = rand_t(&mut rng, &[2, 3], -1.0, 1.0);
    let w = rand_t(&mut rng, &[3, 3], -1.0, 1.0);

    let mut g = Graph::new();
    let (vx, vw) = (g.param(x.clone()), g.param(w.clone()));
    let h = g.matmul(vx, vw).unwrap();
    let u = g.tanh(h);
    let a = g.mul(u, u).unwrap();
    let b = g.exp(u);
    let s = g.add(a, b).unwrap();
    let l = g.sum(s);
    g.backward(l).unwrap();
    let shared = g.grad(vx).unwrap().to_vec();

    // two independent copies of x, gradients summed
    let mut g = Graph::new();
    let (x1, x2, x3, vw) = (g.param(x.clone()), g.param(x.clone()), g.param(x.clone()), g.constant(w));
    let u1 = {
        let h = g.matmul(x1, vw).unwrap();
        g.tanh(h)
    };
    let u2 = {
        let h = g.matmul(x2, vw).unwrap();
        g.tanh(h)
    };
    let u3 = {
        let h = g.matmul(x3, vw).unwrap();
        g.tanh(h)
    };
    let a = g.mul(u1, u2).unwrap();
    let b = g.exp(u3);
    let s = g.add(a, b).unwrap();
    let l = g.sum(s);
    g.backward(l).unwrap();
    for i in 0..6 {
        let sum = g.grad(x1).unwrap()[i] + g.grad(x2).unwrap()[i] + g.grad(x3).unwrap()[i];
        assert!((sum - shared[i]).abs() < 1e-12);
    }
}

#[test]
fn forward_is_deterministic() {
    let run = || {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut g = Graph::training(11);
        let x = g.param(rand_t(&mut rng, &[4, 6], -1.0, 1.0));
        let y = g.gelu(x);
        let y = g.dropout(y, 0.2).unwrap();
        let y = g.softmax(y, 1).unwrap();
        let l = project(&mut g, y).unwrap();
        g.backward(l).unwrap();
        (g.value(y).data().to_vec(), g.grad(x).unwrap().to_vec())
    };
    let (a, b) = (run(), run());
    assert_eq!(a.0.iter().map(|v| v.to_bits()).collect::<Vec<_>>(), b.0.iter().map(|v| v.to_bits()).collect::<Vec<_>>());
    assert_eq!(a.1, b.1);
}

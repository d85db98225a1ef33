use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;

type F = f64;

fn vec_t(v: &[F]) -> Tensor<F> {
    Tensor::from_vec(v.to_vec())
}

#[test]
fn add_is_elementwise() {
    let mut g = Graph::new();
    let a = g.constant(vec_t(&[1.0, 2.0]));
    let b = g.constant(vec_t(&[3.0, 4.0]));
    let c = g.add(a, b).unwrap();
    assert_eq!(g.value(c).data(), &[4.0, 6.0]);
}

#[test]
fn identity_matmul_returns_input() {
    let mut g = Graph::new();
    let i3 = g.constant(Tensor::eye(3));
    let x = g.constant(Tensor::matrix(3, 1, vec![0.3, -1.2, 7.5]).unwrap());
    let y = g.matmul(i3, x).unwrap();
    assert_eq!(g.value(y).data(), &[0.3, -1.2, 7.5]);
}

#[test]
fn softplus_at_zero_is_ln2() {
    let mut g = Graph::new();
    let x = g.constant(Tensor::scalar(0.0));
    let y = g.softplus(x).unwrap();
    assert!((g.value(y).item() - std::f64::consts::LN_2).abs() < 1e-15);
    // stable form must not overflow
    let big = g.constant(vec_t(&[800.0, -800.0]));
    let s = g.softplus(big).unwrap();
    assert_eq!(g.value(s).data()[0], 800.0);
    assert!(g.value(s).data()[1] >= 0.0 && g.value(s).data()[1] < 1e-300);
}

#[test]
fn shape_and_domain_errors() {
    let mut g: Graph<F> = Graph::new();
    let a = g.constant(vec_t(&[1.0, 2.0]));
    let b = g.constant(vec_t(&[1.0, 2.0, 3.0]));
    assert!(matches!(g.add(a, b), Err(AutodiffError::ShapeMismatch { .. })));
    let m = g.constant(Tensor::matrix(2, 2, vec![1.0; 4]).unwrap());
    let n = g.constant(Tensor::matrix(3, 1, vec![1.0; 3]).unwrap());
    assert!(matches!(g.matmul(m, n), Err(AutodiffError::ShapeMismatch { .. })));
    let neg = g.constant(vec_t(&[-1.0]));
    assert!(matches!(g.log(neg), Err(AutodiffError::Domain { .. })));
    assert!(matches!(g.sqrt(neg), Err(AutodiffError::Domain { .. })));
    let zero = g.constant(vec_t(&[0.0]));
    assert!(matches!(g.log(zero), Err(AutodiffError::Domain { .. })));
    assert!(Tensor::<F>::new(vec![2, 2], vec![1.0; 3]).is_err());
}

#[test]
fn gradient_of_sum_is_ones() {
    let mut g = Graph::new();
    let x = g.param(Tensor::new(vec![2, 3], vec![0.5; 6]).unwrap());
    let s = g.sum(x).unwrap();
    let grads = g.backward(s).unwrap();
    assert_eq!(grads.wrt(x).unwrap().data(), &[1.0; 6]);
}

#[test]
fn gradient_of_square_at_three_is_six() {
    let mut g = Graph::new();
    let x = g.param(Tensor::scalar(3.0));
    let y = g.mul(x, x).unwrap();
    let grads = g.backward(y).unwrap();
    assert_eq!(grads.wrt(x).unwrap().item(), 6.0);
}

#[test]
fn chain_rule_through_softplus() {
    let mut g = Graph::new();
    let w = g.param(Tensor::scalar(1.0));
    let x = g.constant(Tensor::scalar(2.0));
    let wx = g.mul(w, x).unwrap();
    let y = g.softplus(wx).unwrap();
    let grads = g.backward(y).unwrap();
    // d/dw softplus(w x) = x * sigmoid(w x)
    let expected = 2.0 / (1.0 + (-2.0f64).exp());
    let got = grads.wrt(w).unwrap().item();
    assert!((got - expected).abs() < 1e-14);
    assert!((got - 1.7616).abs() < 1e-4);
}

#[test]
fn non_scalar_seed_rejected() {
    let mut g: Graph<F> = Graph::new();
    let x = g.param(vec_t(&[1.0, 2.0]));
    assert!(matches!(
        g.backward(x),
        Err(AutodiffError::NonScalarSeed { .. })
    ));
}

#[test]
fn grad_check_examples() {
    let err = grad_check(
        |g, x| {
            let sq = g.mul(x, x)?;
            g.sum(sq)
        },
        &vec_t(&[1.0, 2.0, 3.0]),
        1e-5,
    )
    .unwrap();
    assert!(err < 1e-6, "sum(x^2) error {err}");

    let err = grad_check(
        |g, _x| Ok(g.constant(Tensor::scalar(4.2))),
        &vec_t(&[1.0, 2.0]),
        1e-5,
    )
    .unwrap();
    assert_eq!(err, 0.0);
}

#[test]
fn backward_is_repeatable() {
    let mut g = Graph::new();
    let x = g.param(vec_t(&[0.3, -0.7, 1.1]));
    let y = g.sin(x).unwrap();
    let z = g.mul(y, x).unwrap();
    let s = g.sum(z).unwrap();
    let a = g.backward(s).unwrap();
    let b = g.backward(s).unwrap();
    assert_eq!(a.wrt(x).unwrap(), b.wrt(x).unwrap());
}

#[test]
fn replay_is_bit_identical() {
    let build = |seed: u64| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data: Vec<F> = (0..12).map(|_| rng.random_range(-1.0..1.0)).collect();
        let mut g = Graph::new();
        let x = g.param(Tensor::new(vec![3, 4], data).unwrap());
        let w = g.constant(Tensor::new(vec![4, 2], vec![0.1, 0.2, 0.3, 0.4, -0.5, 0.6, 0.7, -0.8]).unwrap());
        let y = g.matmul(x, w).unwrap();
        let s = g.softplus(y).unwrap();
        let out = g.sum(s).unwrap();
        let grads = g.backward(out).unwrap();
        (g.value(out).item(), grads.wrt(x).unwrap().clone())
    };
    let (a, ga) = build(11);
    let (b, gb) = build(11);
    assert_eq!(a.to_bits(), b.to_bits());
    assert_eq!(ga, gb);
}

/// Random inputs kept away from kinks and domain boundaries.
fn random_input(rng: &mut ChaCha8Rng, positive: bool) -> Tensor<F> {
    let n = rng.random_range(1..=16);
    let data = (0..n)
        .map(|_| {
            let mag = rng.random_range(0.2..1.5);
            if positive || rng.random_bool(0.5) {
                mag
            } else {
                -mag
            }
        })
        .collect();
    Tensor::from_vec(data)
}

type Unary = fn(&mut Graph<F>, Var) -> Result<Var, AutodiffError>;

/// Weighted sum so every output coordinate contributes a distinct factor.
fn weighted(g: &mut Graph<F>, y: Var) -> Result<Var, AutodiffError> {
    let n = g.value(y).len();
    let w: Vec<F> = (0..n).map(|i| 0.3 + 0.17 * i as F).collect();
    let shape = g.shape(y).to_vec();
    let wv = g.constant(Tensor::new(shape, w)?);
    let p = g.mul(y, wv)?;
    g.sum(p)
}

#[test]
fn every_op_passes_gradient_check() {
    let unary: Vec<(&str, Unary, bool)> = vec![
        ("relu", |g, x| g.relu(x), false),
        ("softplus", |g, x| g.softplus(x), false),
        ("sigmoid", |g, x| g.sigmoid(x), false),
        ("exp", |g, x| g.exp(x), false),
        ("log", |g, x| g.log(x), true),
        ("sin", |g, x| g.sin(x), false),
        ("cos", |g, x| g.cos(x), false),
        ("sqrt", |g, x| g.sqrt(x), true),
        ("abs", |g, x| g.abs(x), false),
        ("pow", |g, x| g.pow(x, 2.5), true),
        ("mean", |g, x| g.mean(x), false),
        ("cumsum", |g, x| g.cumsum_exclusive(x), false),
        ("clamp", |g, x| g.clamp(x, -0.1, 0.1), false),
        ("add_self", |g, x| g.add(x, x), false),
        ("sub_mix", |g, x| {
            let s = g.sin(x)?;
            g.sub(x, s)
        }, false),
        ("mul_self", |g, x| g.mul(x, x), false),
        ("div", |g, x| {
            let c = g.exp(x)?;
            g.div(x, c)
        }, false),
        ("concat", |g, x| {
            let s = g.sin(x)?;
            g.concat(&[x, s, x], 0)
        }, false),
        ("slice", |g, x| {
            let n = g.shape(x)[0];
            g.slice(x, 0, n / 3, n)
        }, false),
        ("broadcast", |g, x| {
            let n = g.shape(x)[0];
            g.broadcast(x, &[3, n])
        }, false),
        ("gather", |g, x| {
            let n = g.shape(x)[0];
            let idx: Vec<usize> = (0..2 * n).map(|i| (i * 7) % n).collect();
            g.gather(x, &idx)
        }, false),
        ("permute", |g, x| {
            let n = g.shape(x)[0];
            let b = g.broadcast(x, &[2, n])?;
            let m = g.mul(b, b)?;
            g.permute(m, &[1, 0])
        }, false),
        ("sum_axis", |g, x| {
            let n = g.shape(x)[0];
            let r = g.reshape(x, &[1, n])?;
            let b = g.broadcast(r, &[3, n])?;
            let e = g.exp(b)?;
            g.sum_axis(e, 0)
        }, false),
        ("norm2", |g, x| g.norm2(x), false),
        ("shifted_softplus", |g, x| {
            let (h, s) = g.shifted_softplus(x, 3.0)?;
            g.mul(h, s)
        }, false),
        ("mul_tiled", |g, x| {
            let n = g.shape(x)[0];
            let b = g.broadcast(x, &[2, n])?;
            let r = g.reshape(b, &[2 * n, 1])?;
            let c = g.reshape(x, &[n, 1])?;
            let s = g.sin(c)?;
            g.mul_tiled(r, s)
        }, false),
    ];
    for (name, op, positive) in unary {
        for seed in 0..10u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed * 31 + 7);
            let x = random_input(&mut rng, positive);
            let err = grad_check(
                |g, x| {
                    let y = op(g, x)?;
                    weighted(g, y)
                },
                &x,
                1e-5,
            )
            .unwrap();
            assert!(err < 1e-6, "{name} seed {seed}: error {err}");
        }
    }
}

#[test]
fn fused_softplus_matches_composed_ops() {
    let x = Tensor::new(vec![7], vec![-3.0, -0.4, -1e-3, 0.0, 2e-3, 0.3, 5.0]).unwrap();
    let beta = 100.0;
    let mut g: Graph<F> = Graph::new();
    let v = g.constant(x);
    let (h, s) = g.shifted_softplus(v, beta).unwrap();
    let bz = g.scale(v, beta).unwrap();
    let sp = g.softplus(bz).unwrap();
    let sp = g.add_scalar(sp, -std::f64::consts::LN_2).unwrap();
    let want_h = g.scale(sp, 1.0 / beta).unwrap();
    let want_s = g.sigmoid(bz).unwrap();
    for (a, b) in g.value(h).data().iter().zip(g.value(want_h).data()) {
        assert!((a - b).abs() <= 1e-15 * b.abs().max(1e-3), "{a} vs {b}");
    }
    assert_eq!(g.value(s), g.value(want_s));
    assert_eq!(g.value(h).data()[3], 0.0);
    assert!(g.shifted_softplus(v, 0.0).is_err());
    let m = g.constant(Tensor::zeros(&[3, 1]));
    let k = g.constant(Tensor::zeros(&[2, 1]));
    assert!(g.mul_tiled(m, k).is_err());
}

#[test]
fn matmul_and_broadcast_binary_gradients() {
    for seed in 0..10u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (m, k, n) = (rng.random_range(1..4), rng.random_range(1..4), rng.random_range(1..4));
        let b_data: Vec<F> = (0..k * n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let bias: Vec<F> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let a_data: Vec<F> = (0..m * k).map(|_| rng.random_range(-1.0..1.0)).collect();
        let a = Tensor::new(vec![m, k], a_data).unwrap();
        // gradient with respect to the left operand
        let err = grad_check(
            |g, a| {
                let b = g.constant(Tensor::new(vec![k, n], b_data.clone())?);
                let c = g.constant(Tensor::from_vec(bias.clone()));
                let y = g.matmul(a, b)?;
                let y = g.add(y, c)?;
                let y = g.mul(y, c)?;
                weighted(g, y)
            },
            &a,
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-6, "matmul lhs seed {seed}: {err}");
        // right operand and broadcast bias
        let err = grad_check(
            |g, b| {
                let av = g.constant(a.clone());
                let bm = g.reshape(b, &[k, n])?;
                let y = g.matmul(av, bm)?;
                let row = g.slice(bm, 0, 0, 1)?;
                let e = g.exp(row)?;
                let y = g.div(y, e)?;
                let y = g.sub(y, row)?;
                weighted(g, y)
            },
            &Tensor::from_vec(b_data.clone()),
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-6, "matmul rhs seed {seed}: {err}");
    }
}

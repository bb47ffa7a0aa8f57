use featreplay_core::autodiff::{grad_check, Graph, IdGen, ParamId, Parameter, Params, Var};
use featreplay_core::nets::Linear;
use featreplay_core::rng;
use featreplay_core::Tensor;
use proptest::prelude::*;
use rand::Rng as _;

fn random(rng: &mut rng::Rng, r: usize, c: usize, lo: f64, hi: f64) -> Tensor {
    Tensor::matrix(r, c, (0..r * c).map(|_| rng.random_range(lo..hi)).collect()).unwrap()
}

/// Two 3x4 parameters plus a 4x2 one, enough to feed every primitive.
fn params(seed: u64, lo: f64, hi: f64) -> Vec<Parameter> {
    let mut r = rng::stream(seed, "prim");
    vec![
        Parameter::new(ParamId(0), "a", random(&mut r, 3, 4, lo, hi)),
        Parameter::new(ParamId(1), "b", random(&mut r, 3, 4, lo, hi)),
        Parameter::new(ParamId(2), "w", random(&mut r, 4, 2, lo, hi)),
        Parameter::new(ParamId(3), "row", random(&mut r, 1, 4, lo, hi)),
    ]
}

type Build = fn(&mut Graph, &[Var]) -> Var;

fn primitives() -> Vec<(&'static str, Build)> {
    vec![
        ("matmul", |g, v| g.matmul(v[0], v[2])),
        ("transpose", |g, v| {
            let t = g.transpose(v[0]);
            g.matmul(t, v[1])
        }),
        ("add", |g, v| g.add(v[0], v[1])),
        ("sub", |g, v| g.sub(v[0], v[1])),
        ("mul", |g, v| g.mul(v[0], v[1])),
        ("add_row", |g, v| g.add_row(v[0], v[3])),
        ("scale", |g, v| g.scale(v[0], -1.7)),
        ("leaky_relu", |g, v| g.leaky_relu(v[0], 0.2)),
        ("sigmoid", |g, v| g.sigmoid(v[0])),
        ("square", |g, v| g.square(v[0])),
        ("sqrt", |g, v| {
            let s = g.square(v[0]);
            let s = g.add_scalar(s, 0.5);
            g.sqrt(s)
        }),
        ("mean", |g, v| g.mean(v[0])),
        ("sum_cols", |g, v| g.sum_cols(v[0])),
        ("row_norm", |g, v| g.row_norm(v[0], 1e-12)),
        ("concat_cols", |g, v| g.concat_cols(v[0], v[1])),
        ("slice_cols", |g, v| g.slice_cols(v[0], 1, 3)),
        ("gather_rows", |g, v| g.gather_rows(v[0], &[2, 0, 2, 1])),
        ("log_softmax", |g, v| g.log_softmax(v[0])),
        ("pick_cols", |g, v| g.pick_cols(v[0], &[3, 0, 1])),
    ]
}

/// Weights the primitive's output with fixed random coefficients so every
/// output entry contributes a distinct amount to the scalar loss.
fn scalarize(g: &mut Graph, y: Var, seed: u64) -> Var {
    if g.value(y).is_scalar() {
        return g.scale(y, 1.3);
    }
    let (r, c) = (g.value(y).rows(), g.value(y).cols());
    let mut rr = rng::stream(seed, "coef");
    let coef = g.constant(random(&mut rr, r, c, -1.0, 1.0));
    let m = g.mul(y, coef);
    g.sum(m)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn primitive_gradients_match_finite_differences(seed in 0u64..1_000_000) {
        for (name, build) in primitives() {
            let mut ps = params(seed, -2.0, 2.0);
            // Keep rectifier inputs away from the kink.
            if name == "leaky_relu" {
                for v in ps[0].value.data_mut() {
                    if v.abs() < 0.05 { *v += 0.1; }
                }
            }
            let err = grad_check(&mut ps, 1e-6, |g, ps| {
                let v: Vec<Var> = ps.iter().map(|p| g.param(p, true)).collect();
                let y = build(g, &v);
                Ok(scalarize(g, y, seed))
            })
            .unwrap();
            prop_assert!(err < 1e-5, "{name}: {err}");
        }
    }

    #[test]
    fn backward_is_linear(seed in 0u64..1_000_000) {
        let ps = params(seed, -1.0, 1.0);
        let grads = |which: u8| {
            let mut g = Graph::new();
            let v: Vec<Var> = ps.iter().map(|p| g.param(p, true)).collect();
            let a = g.mul(v[0], v[1]);
            let a = g.sum(a);
            let s = g.sigmoid(v[0]);
            let b = g.matmul(s, v[2]);
            let b = g.mean(b);
            let l = match which {
                0 => a,
                1 => b,
                _ => g.add(a, b),
            };
            g.backward(l).unwrap()
        };
        let (ga, gb, gs) = (grads(0), grads(1), grads(2));
        for p in &ps {
            let zero = Tensor::zeros(p.value.shape());
            let a = ga.get(p.id).unwrap_or(&zero);
            let b = gb.get(p.id).unwrap_or(&zero);
            let s = gs.get(p.id).unwrap_or(&zero);
            for ((x, y), z) in a.data().iter().zip(b.data()).zip(s.data()) {
                prop_assert!((x + y - z).abs() <= 1e-12 * (1.0 + z.abs()));
            }
        }
    }
}

#[test]
fn small_mlp_matches_finite_differences() {
    let mut r = rng::stream(7, "mlp");
    let mut ids = IdGen::new();
    let mut model = (
        Linear::new("l1", 3, 5, &mut ids, &mut r),
        Linear::new("l2", 5, 1, &mut ids, &mut r),
    );
    let x = random(&mut r, 4, 3, -1.0, 1.0);
    let err = grad_check(&mut model, 1e-5, |g, (l1, l2)| {
        let xv = g.constant(x.clone());
        let h = l1.forward(g, xv, true);
        let h = g.sigmoid(h);
        let y = l2.forward(g, h, true);
        let y = g.square(y);
        Ok(g.mean(y))
    })
    .unwrap();
    assert!(err < 1e-6, "err {err}");
}

#[test]
fn repeated_backward_accumulates_until_reset() {
    let mut p = Parameter::new(ParamId(0), "x", Tensor::matrix(1, 2, vec![1.0, 2.0]).unwrap());
    let run = |p: &Parameter| {
        let mut g = Graph::new();
        let x = g.param(p, true);
        let s = g.square(x);
        let l = g.sum(s);
        g.backward(l).unwrap()
    };
    let grads = run(&p);
    p.accumulate(&grads);
    p.accumulate(&grads);
    assert_eq!(p.grad.data(), &[4.0, 8.0]);
    p.zero_grad();
    assert_eq!(p.grad.data(), &[0.0, 0.0]);
}

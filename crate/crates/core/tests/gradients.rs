//! Tape gradients against central finite differences (h = 1e-5): every
//! graph primitive, the layers, and every training loss on tiny models.

mod common;

use common::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use vlnlab::navagent::SsForm;
use vlnlab::numcore::{
    check_gradients, pairwise_distance, Graph, Linear, Lstm, Mlp, NumError, ParameterStore, Tensor,
    Var,
};
use vlnlab::translator::DslForm;

use common::losses::H;

fn random(rows: usize, cols: usize, lo: f64, hi: f64, rng: &mut ChaCha8Rng) -> Tensor {
    Tensor::new(
        vec![rows, cols],
        (0..rows * cols).map(|_| rng.random_range(lo..hi)).collect(),
    )
    .unwrap()
}

/// Parameters `a` (3×4), `b` (4×3), `c` (3×4), `row` (1×4), `col` (3×1)
/// and `pos` (3×4, strictly positive).
fn store() -> ParameterStore {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut s = ParameterStore::new();
    s.insert("a", random(3, 4, -1.0, 1.0, &mut rng));
    s.insert("b", random(4, 3, -1.0, 1.0, &mut rng));
    s.insert("c", random(3, 4, -1.0, 1.0, &mut rng));
    s.insert("row", random(1, 4, -1.0, 1.0, &mut rng));
    s.insert("col", random(3, 1, -1.0, 1.0, &mut rng));
    s.insert("pos", random(3, 4, 0.5, 2.0, &mut rng));
    s
}

/// Σ w ⊙ v for a fixed random w, so every output entry carries a distinct
/// upstream gradient.
fn reduce(g: &mut Graph, v: Var) -> Result<Var, NumError> {
    let shape = g.value(v).shape().to_vec();
    let (r, c) = (shape[0], shape.get(1).copied().unwrap_or(1));
    let mut rng = ChaCha8Rng::seed_from_u64((r * 31 + c) as u64);
    let w = g.input(random(r, c, -1.0, 1.0, &mut rng))?;
    let p = g.mul(v, w)?;
    g.sum(p)
}

type Expr = fn(&mut Graph, &ParameterStore) -> Result<Var, NumError>;

fn check(name: &str, f: Expr) {
    let mut s = store();
    let report = check_gradients(&mut s, H, |g, st| {
        let v = f(g, st)?;
        reduce(g, v)
    })
    .unwrap();
    assert!(passes(&report), "{name}: {report:?}");
}

macro_rules! primitive {
    ($name:ident, |$g:ident, $s:ident| $body:expr) => {
        #[test]
        fn $name() {
            fn f($g: &mut Graph, $s: &ParameterStore) -> Result<Var, NumError> {
                $body
            }
            check(stringify!($name), f);
        }
    };
}

fn p(g: &mut Graph, s: &ParameterStore, name: &str) -> Var {
    g.param(s, name).unwrap()
}

primitive!(matmul, |g, s| {
    let (a, b) = (p(g, s, "a"), p(g, s, "b"));
    g.matmul(a, b)
});
primitive!(add_sub_mul, |g, s| {
    let (a, c) = (p(g, s, "a"), p(g, s, "c"));
    let x = g.add(a, c)?;
    let y = g.sub(a, c)?;
    g.mul(x, y)
});
primitive!(add_row, |g, s| {
    let (a, r) = (p(g, s, "a"), p(g, s, "row"));
    g.add_row(a, r)
});
primitive!(mul_col, |g, s| {
    let (a, c) = (p(g, s, "a"), p(g, s, "col"));
    g.mul_col(a, c)
});
primitive!(scale_shift_neg, |g, s| {
    let a = p(g, s, "a");
    let x = g.scale(a, -2.5)?;
    let y = g.add_scalar(x, 0.7)?;
    g.neg(y)
});
primitive!(concat_and_slice, |g, s| {
    let (a, c, r) = (p(g, s, "a"), p(g, s, "c"), p(g, s, "row"));
    let rows = g.concat_rows(&[a, r, c])?;
    let cols = g.concat_cols(&[a, c])?;
    let x = g.slice_rows(rows, 2, 3)?;
    let y = g.slice_cols(cols, 3, 4)?;
    g.mul(x, y)
});
primitive!(transpose, |g, s| {
    let (a, b) = (p(g, s, "a"), p(g, s, "b"));
    let t = g.transpose(b)?;
    g.mul(a, t)
});
primitive!(softmax_rows, |g, s| {
    let a = p(g, s, "a");
    g.softmax_rows(a)
});
primitive!(log_softmax_rows, |g, s| {
    let a = p(g, s, "a");
    g.log_softmax_rows(a)
});
primitive!(sigmoid_tanh, |g, s| {
    let a = p(g, s, "a");
    let x = g.sigmoid(a)?;
    let y = g.tanh(a)?;
    g.mul(x, y)
});
primitive!(relu, |g, s| {
    let a = p(g, s, "a");
    g.relu(a)
});
primitive!(clamp_inside_and_outside, |g, s| {
    // bounds fall between entries, so no entry sits on a kink
    let a = p(g, s, "a");
    let x = g.clamp(a, -0.3, 0.4)?;
    let y = g.clamp(a, -10.0, 10.0)?;
    g.add(x, y)
});
primitive!(log_sqrt, |g, s| {
    let a = p(g, s, "pos");
    let x = g.log(a)?;
    let y = g.sqrt(a)?;
    g.add(x, y)
});
primitive!(embedding_pick, |g, s| {
    let a = p(g, s, "a");
    let e = g.embedding(a, &[2, 0, 2, 1])?;
    let ls = g.log_softmax_rows(e)?;
    g.pick(ls, &[1, 3, 0, 0])
});
primitive!(reductions, |g, s| {
    let a = p(g, s, "a");
    let m = g.mean_rows(a)?;
    let c = g.sum_cols(a)?;
    let t = g.transpose(c)?;
    let mm = g.matmul(t, a)?;
    let x = g.mul(m, mm)?;
    let tot = g.sum(a)?;
    let mean = g.mean(a)?;
    let k = g.mul(tot, mean)?;
    let kk = g.matmul(k, m)?;
    g.add(x, kk)
});
primitive!(sq_dist_and_pairwise, |g, s| {
    let (a, c) = (p(g, s, "a"), p(g, s, "c"));
    let d = g.sq_dist(a, c)?;
    let e = pairwise_distance(g, a, c)?;
    g.add(d, e)
});

#[test]
fn layers() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let lin = Linear::new("lin", 4, 3);
    let mlp = Mlp::new("mlp", 4, 5, 2);
    let lstm = Lstm::new("lstm", 4, 3);
    let mut s = ParameterStore::new();
    lin.register(&mut s, &mut rng);
    mlp.register(&mut s, &mut rng);
    lstm.register(&mut s, &mut rng);
    s.insert("x", random(5, 4, -1.0, 1.0, &mut rng));
    let report = check_gradients(&mut s, H, |g, st| {
        let x = g.param(st, "x")?;
        let a = lin.forward(g, st, x)?;
        let b = mlp.forward(g, st, x)?;
        let vars = lstm.load(g, st)?;
        let fwd = lstm.sequence(g, &vars, x, false)?;
        let bwd = lstm.sequence(g, &vars, x, true)?;
        let all = g.concat_cols(&[a, b, fwd, bwd])?;
        reduce(g, all)
    })
    .unwrap();
    assert!(passes(&report), "{report:?}");
}

// ---------------------------------------------------------------------------
// Losses

#[test]
fn sig_loss() {
    let r = losses::sig();
    assert!(passes(&r), "{r:?}");
}

#[test]
fn dsl_loss_both_forms() {
    for form in [DslForm::Anchor, DslForm::Generated] {
        let r = losses::dsl(form);
        assert!(passes(&r), "{form:?}: {r:?}");
    }
}

#[test]
fn pretraining_objective() {
    let r = losses::pretraining();
    assert!(passes(&r), "{r:?}");
}

#[test]
fn split_supervision_loss_both_forms() {
    for form in [SsForm::Full, SsForm::PositiveOnly] {
        let r = losses::split_supervision(form);
        assert!(passes(&r), "{form:?}: {r:?}");
    }
}

#[test]
fn navigation_loss() {
    let r = losses::navigation();
    assert!(passes(&r), "{r:?}");
}

#[test]
fn full_objective() {
    let r = losses::full_objective();
    assert!(passes(&r), "{r:?}");
}

#[test]
fn baseline_path_objective() {
    let r = losses::baseline_objective();
    assert!(passes(&r), "{r:?}");
}

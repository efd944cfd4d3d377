use super::*;
use crate::gradcheck::{check, weighted_sum, DEFAULT_STEP};
use crate::rng::{randn, stream, Rng, Stream};

const TOL: f64 = 1e-6;

fn rng() -> Rng {
    stream(42, Stream::Init)
}

fn t(shape: &[usize], data: &[f64]) -> Tensor {
    Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
}

/// Checks `op` on a random input of `shape`, probed through random weights.
fn fd_unary(shape: &[usize], op: impl Fn(&mut Graph, Var) -> Result<Var>, input: impl Fn(f64) -> f64) {
    let mut r = rng();
    let x = randn(shape, 1.0, &mut r).map(input);
    let mut g0 = Graph::new();
    let v0 = g0.constant(x.clone());
    let y0 = op(&mut g0, v0).unwrap();
    let out_shape = g0.value(y0).shape().to_vec();
    let w = randn(&out_shape, 1.0, &mut r);
    let report = check(&[x], DEFAULT_STEP, |g, v| {
        let y = op(g, v[0])?;
        weighted_sum(g, y, &w)
    })
    .unwrap();
    assert!(report.worst_rel_err() < TOL, "rel err {:?}", report.rel_err);
}

fn fd_binary(sa: &[usize], sb: &[usize], op: impl Fn(&mut Graph, Var, Var) -> Result<Var>) {
    let mut r = rng();
    let a = randn(sa, 1.0, &mut r);
    let b = randn(sb, 1.0, &mut r).map(|x| x.abs() + 0.5);
    let mut g0 = Graph::new();
    let (va, vb) = (g0.constant(a.clone()), g0.constant(b.clone()));
    let y0 = op(&mut g0, va, vb).unwrap();
    let out_shape = g0.value(y0).shape().to_vec();
    let w = randn(&out_shape, 1.0, &mut r);
    let report = check(&[a, b], DEFAULT_STEP, |g, v| {
        let y = op(g, v[0], v[1])?;
        weighted_sum(g, y, &w)
    })
    .unwrap();
    assert!(report.worst_rel_err() < TOL, "rel err {:?}", report.rel_err);
}

#[test]
fn stop_gradient_blocks_backward() {
    let mut g = Graph::new();
    let x = g.param(t(&[1], &[3.0]));
    let y = g.stop_gradient(x);
    assert_eq!(g.value(y), g.value(x));
    let s = g.sum(y).unwrap();
    let grads = g.backward(s).unwrap();
    assert!(grads.get(x).is_none());
    assert_eq!(grads.visited(), 0);
}

#[test]
fn stop_gradient_product_keeps_one_branch() {
    let mut g = Graph::new();
    let x = g.param(t(&[1], &[2.0]));
    let sx = g.stop_gradient(x);
    let p = g.mul(sx, x).unwrap();
    assert_eq!(g.value(p).item(), 4.0);
    let grads = g.backward(p).unwrap();
    assert_eq!(grads.get(x).unwrap().item(), 2.0);
}

#[test]
fn detached_subgraph_is_never_visited() {
    let mut g = Graph::new();
    let x = g.param(t(&[2], &[1.0, 2.0]));
    let e = g.exp(x).unwrap();
    let detached = g.stop_gradient(e);
    let w = g.param(t(&[2], &[0.5, 0.5]));
    let p = g.mul(detached, w).unwrap();
    let s = g.sum(p).unwrap();
    let grads = g.backward(s).unwrap();
    assert!(grads.get(x).is_none());
    assert!(grads.get(e).is_none());
    assert!(grads.get(w).is_some());
    // sum, mul, w leaf
    assert_eq!(grads.visited(), 3);
}

#[test]
fn clamp_upper_examples() {
    let mut g = Graph::new();
    let x = g.param(t(&[2], &[0.5, 1.3]));
    let y = g.clamp_upper(x, 1.0).unwrap();
    assert_eq!(g.value(y).data(), &[0.5, 1.0]);
    let s = g.sum(y).unwrap();
    let grads = g.backward(s).unwrap();
    assert_eq!(grads.get(x).unwrap().data(), &[1.0, 0.0]);

    let mut g = Graph::new();
    let x = g.param(t(&[1], &[1.0]));
    let y = g.clamp_upper(x, 1.0).unwrap();
    assert_eq!(g.value(y).data(), &[1.0]);
    let grads = g.backward(y).unwrap();
    assert_eq!(grads.get(x).unwrap().data(), &[1.0]);
}

#[test]
fn clamp_upper_matches_fd_away_from_kink() {
    let mut r = rng();
    let x = randn(&[40], 0.6, &mut r).map(|v| v + 1.0);
    let kept: Vec<f64> = x.data().iter().copied().filter(|v| (v - 1.0).abs() > 1e-3).collect();
    let x = t(&[kept.len()], &kept);
    let w = randn(&[kept.len()], 1.0, &mut r);
    let rep = check(&[x], DEFAULT_STEP, |g, v| {
        let y = g.clamp_upper(v[0], 1.0)?;
        weighted_sum(g, y, &w)
    })
    .unwrap();
    assert!(rep.worst_rel_err() < TOL);
}

#[test]
fn logsumexp_excluding_self_examples() {
    let mut g = Graph::new();
    let x = g.constant(t(&[2, 2], &[5.0, 0.0, 0.0, -3.0]));
    let y = g.row_logsumexp_excluding_self(x).unwrap();
    assert_eq!(g.value(y).data(), &[0.0, 0.0]);

    let mut g = Graph::new();
    let x = g.constant(t(&[3, 3], &[9.0, 0.0, 0.0, 0.0, 9.0, 0.0, 0.0, 0.0, 9.0]));
    let y = g.row_logsumexp_excluding_self(x).unwrap();
    for v in g.value(y).data() {
        assert!((v - 2f64.ln()).abs() < 1e-15);
    }
}

#[test]
fn logsumexp_excluding_self_matches_naive_sum() {
    let mut r = rng();
    let x = randn(&[6, 6], 2.0, &mut r);
    let mut g = Graph::new();
    let v = g.constant(x.clone());
    let y = g.row_logsumexp_excluding_self(v).unwrap();
    for u in 0..6 {
        let mut s = 0.0;
        for k in 0..6 {
            if k != u {
                s += x.data()[u * 6 + k].exp();
            }
        }
        let naive = s.ln();
        assert!(((g.value(y).data()[u] - naive) / naive).abs() < 1e-12);
    }
}

#[test]
fn logsumexp_overflow_is_an_error() {
    let mut g = Graph::new();
    let x = g.constant(t(&[2, 2], &[0.0, 800.0, 1.0, 0.0]));
    assert!(matches!(g.row_logsumexp_excluding_self(x), Err(Error::Overflow { .. })));
}

#[test]
fn l2_normalize_three_four_five() {
    let mut g = Graph::new();
    let x = g.constant(t(&[1, 2], &[3.0, 4.0]));
    let y = g.l2_normalize_rows(x).unwrap();
    assert_eq!(g.value(y).data(), &[0.6, 0.8]);
    let z = g.constant(t(&[1, 2], &[0.0, 0.0]));
    assert!(matches!(g.l2_normalize_rows(z), Err(Error::Degenerate(_))));
}

#[test]
fn row_max_routes_to_first_argmax() {
    let mut g = Graph::new();
    let x = g.param(t(&[1, 3], &[1.0, 5.0, 2.0]));
    let y = g.row_max(x).unwrap();
    assert_eq!(g.value(y).data(), &[5.0]);
    let grads = g.backward(y).unwrap();
    assert_eq!(grads.get(x).unwrap().data(), &[0.0, 1.0, 0.0]);

    let mut g = Graph::new();
    let x = g.param(t(&[1, 3], &[5.0, 5.0, 2.0]));
    let y = g.row_max(x).unwrap();
    let grads = g.backward(y).unwrap();
    assert_eq!(grads.get(x).unwrap().data(), &[1.0, 0.0, 0.0]);
}

#[test]
fn shape_mismatch_errors() {
    let mut g = Graph::new();
    let a = g.constant(Tensor::zeros(&[2, 3]));
    let b = g.constant(Tensor::zeros(&[3, 2]));
    assert!(matches!(g.add(a, b), Err(Error::Shape { .. })));
    assert!(matches!(g.matmul(a, a), Err(Error::Shape { .. })));
    assert!(g.matmul(a, b).is_ok());
    assert!(matches!(g.row_logsumexp_excluding_self(a), Err(Error::Shape { .. })));
}

#[test]
fn non_finite_forward_is_an_error() {
    let mut g = Graph::new();
    let a = g.constant(t(&[1], &[-1.0]));
    assert!(matches!(g.log(a), Err(Error::NonFinite { .. })));
}

#[test]
fn fd_elementwise() {
    fd_binary(&[3, 4], &[3, 4], |g, a, b| g.add(a, b));
    fd_binary(&[3, 4], &[3, 4], |g, a, b| g.sub(a, b));
    fd_binary(&[3, 4], &[3, 4], |g, a, b| g.mul(a, b));
    fd_binary(&[3, 4], &[3, 4], |g, a, b| g.div(a, b));
    fd_unary(&[3, 4], |g, x| g.exp(x), |v| v);
    fd_unary(&[3, 4], |g, x| g.log(x), |v| v.abs() + 0.5);
    fd_unary(&[3, 4], |g, x| g.sqrt(x), |v| v.abs() + 0.5);
    fd_unary(&[3, 4], |g, x| g.scale(x, -2.5), |v| v);
    fd_unary(&[3, 4], |g, x| g.add_scalar(x, 0.7), |v| v);
    fd_unary(&[3, 4], |g, x| g.gelu(x), |v| v);
}

#[test]
fn fd_broadcasting() {
    fd_binary(&[2, 3, 4], &[4], |g, a, b| g.add_broadcast(a, b));
    fd_binary(&[2, 3, 4], &[3, 4], |g, a, b| g.add_broadcast(a, b));
    fd_binary(&[3, 4], &[3], |g, a, b| g.sub_rowwise(a, b));
}

#[test]
fn fd_linear_algebra() {
    fd_binary(&[3, 4], &[4, 5], |g, a, b| g.matmul(a, b));
    fd_binary(&[2, 3, 4], &[2, 4, 2], |g, a, b| g.batch_matmul(a, b));
    fd_unary(&[3, 4], |g, x| g.transpose(x), |v| v);
    fd_unary(&[2, 3, 4], |g, x| g.transpose(x), |v| v);
    fd_unary(&[2, 3, 4], |g, x| g.permute(x, &[2, 0, 1]), |v| v);
    fd_unary(&[2, 3, 4], |g, x| g.reshape(x, &[6, 4]), |v| v);
}

#[test]
fn fd_reductions() {
    fd_unary(&[2, 3, 4], |g, x| g.mean_over_axis(x, 1), |v| v);
    fd_unary(&[2, 3, 4], |g, x| g.mean_over_axis(x, 0), |v| v);
    fd_unary(&[2, 3, 4], |g, x| g.mean_over_axis(x, 2), |v| v);
    fd_unary(&[3, 4], |g, x| g.sum(x), |v| v);
    // well-separated entries keep FD points away from argmax switches
    fd_unary(&[3, 4], |g, x| g.row_max(x), |v| v * 10.0);
    fd_unary(&[4, 4], |g, x| g.row_max_excluding_self(x), |v| v * 10.0);
    fd_unary(&[5, 5], |g, x| g.row_logsumexp_excluding_self(x), |v| v);
}

#[test]
fn fd_row_normalisers() {
    fd_unary(&[3, 5], |g, x| g.l2_normalize_rows(x), |v| v);
    fd_unary(&[3, 5], |g, x| g.softmax_rows(x), |v| v);
    fd_unary(&[3, 5], |g, x| g.log_softmax_rows(x), |v| v);
}

#[test]
fn fd_layer_norm() {
    let mut r = rng();
    let x = randn(&[4, 6], 1.0, &mut r);
    let gain = randn(&[6], 1.0, &mut r);
    let bias = randn(&[6], 1.0, &mut r);
    let w = randn(&[4, 6], 1.0, &mut r);
    let rep = check(&[x, gain, bias], DEFAULT_STEP, |g, v| {
        let y = g.layer_norm(v[0], v[1], v[2], 1e-5)?;
        weighted_sum(g, y, &w)
    })
    .unwrap();
    assert!(rep.worst_rel_err() < TOL, "{:?}", rep.rel_err);
}

#[test]
fn fd_structural() {
    let mut r = rng();
    let a = randn(&[2, 3], 1.0, &mut r);
    let b = randn(&[4, 3], 1.0, &mut r);
    let w = randn(&[9, 3], 1.0, &mut r);
    let rep = check(&[a, b], DEFAULT_STEP, |g, v| {
        let c = g.concat_rows(&[v[0], v[1]])?;
        let idx = [0, 5, 5, 1, 2, 3, 4, 0, 2];
        let y = g.gather_rows(c, &idx)?;
        weighted_sum(g, y, &w)
    })
    .unwrap();
    assert!(rep.worst_rel_err() < TOL);

    let mut r = rng();
    let a = randn(&[3, 3], 1.0, &mut r);
    let b = randn(&[3, 3], 1.0, &mut r);
    let w = randn(&[3, 3], 1.0, &mut r);
    let mask = [true, false, true, false, false, true, true, true, false];
    let rep = check(&[a, b], DEFAULT_STEP, |g, v| {
        let y = g.where_mask(&mask, v[0], v[1])?;
        weighted_sum(g, y, &w)
    })
    .unwrap();
    assert!(rep.worst_rel_err() < TOL);
}

#[test]
fn gradients_accumulate_over_shared_inputs() {
    let mut g = Graph::new();
    let x = g.param(t(&[1], &[3.0]));
    let y = g.mul(x, x).unwrap();
    let z = g.add(y, x).unwrap();
    let grads = g.backward(z).unwrap();
    assert_eq!(grads.get(x).unwrap().item(), 7.0);
}

mod common;

use blockmf::kernel::{batch_gradient_block, block_gradient, block_objective, sgd_block, BlockTask, BlockView, InnerIters};
use blockmf::partition::LocalTriple;
use common::{random_block, rng, RandomBlock};
use proptest::prelude::*;

fn view(b: &RandomBlock) -> BlockView<'_> {
    BlockView {
        triples: &b.triples,
        u: &b.u,
        v: &b.v,
        k: b.k,
    }
}

/// Central differences of the block objective, one coordinate at a time.
fn numeric_gradient(b: &RandomBlock, beta: f64, h: f64) -> Vec<f64> {
    let objective = |u: &[f64], v: &[f64]| {
        block_objective(
            &BlockView {
                triples: &b.triples,
                u,
                v,
                k: b.k,
            },
            beta,
        )
    };
    let mut grad = Vec::with_capacity(b.u.len() + b.v.len());
    for idx in 0..b.u.len() {
        let (mut up, mut down) = (b.u.clone(), b.u.clone());
        up[idx] += h;
        down[idx] -= h;
        grad.push((objective(&up, &b.v) - objective(&down, &b.v)) / (2.0 * h));
    }
    for idx in 0..b.v.len() {
        let (mut up, mut down) = (b.v.clone(), b.v.clone());
        up[idx] += h;
        down[idx] -= h;
        grad.push((objective(&b.u, &up) - objective(&b.u, &down)) / (2.0 * h));
    }
    grad
}

fn norm(xs: &[f64]) -> f64 {
    xs.iter().map(|x| x * x).sum::<f64>().sqrt()
}

#[test]
fn analytic_gradient_matches_finite_differences() {
    let mut r = rng(2024);
    let mut worst: f64 = 0.0;
    for case in 0..20 {
        let k = 1 + case % 3;
        let b = random_block(&mut r, 6, 6, k, 0.6);
        let beta = [0.0, 0.01, 0.5][case % 3];
        let (gu, gv) = block_gradient(&view(&b), beta);
        let analytic: Vec<f64> = gu.into_iter().chain(gv).collect();
        let numeric = numeric_gradient(&b, beta, 1e-5);
        let diff: Vec<f64> = analytic.iter().zip(&numeric).map(|(a, n)| a - n).collect();
        let rel = norm(&diff) / norm(&numeric).max(1e-12);
        worst = worst.max(rel);
    }
    assert!(worst < 1e-4, "max relative gradient error {worst:e}");
}

/// Plain unregularized SGD written independently of the library kernel.
fn reference_sgd(triples: &[LocalTriple], u: &mut [f64], v: &mut [f64], k: usize, alpha: f64, sweeps: usize) {
    for _ in 0..sweeps {
        for t in triples {
            let mut pred = 0.0;
            for g in 0..k {
                pred += u[t.row * k + g] * v[t.col * k + g];
            }
            let e = t.value - pred;
            for g in 0..k {
                let ui = u[t.row * k + g];
                let vj = v[t.col * k + g];
                u[t.row * k + g] = ui + alpha * (2.0 * e * vj);
                v[t.col * k + g] = vj + alpha * (2.0 * e * ui);
            }
        }
    }
}

#[test]
fn zero_beta_reduces_to_plain_sgd() {
    let mut r = rng(7);
    for case in 0..10 {
        let mut b = random_block(&mut r, 5, 7, 1 + case % 4, 0.7);
        let (mut u_ref, mut v_ref) = (b.u.clone(), b.v.clone());
        reference_sgd(&b.triples, &mut u_ref, &mut v_ref, b.k, 1e-2, 3);
        let mut task = BlockTask::new((0, 0), &b.triples, &mut b.u, &mut b.v, b.k, 1e-2, 0.0, InnerIters::Fixed(3)).unwrap();
        sgd_block(&mut task).unwrap();
        assert_eq!(b.u, u_ref);
        assert_eq!(b.v, v_ref);
    }
}

#[test]
fn unobserved_cells_never_influence_updates() {
    // Rows and columns without any rating only feel the regularizer.
    let triples = vec![LocalTriple { row: 0, col: 0, value: 3.0 }];
    let mut u = vec![0.5, 0.25, 0.75, -0.5];
    let mut v = vec![0.5, 0.5, 1.0, 2.0];
    let (alpha, beta) = (0.1, 0.2);
    let mut task = BlockTask::new((0, 0), &triples, &mut u, &mut v, 2, alpha, beta, InnerIters::Fixed(1)).unwrap();
    sgd_block(&mut task).unwrap();
    assert_eq!(&u[2..], &[0.75, -0.5]);
    assert_eq!(&v[2..], &[1.0, 2.0]);
    let mut task = BlockTask::new((0, 0), &triples, &mut u, &mut v, 2, alpha, beta, InnerIters::Fixed(1)).unwrap();
    batch_gradient_block(&mut task).unwrap();
    let shrink = 1.0 - alpha * beta;
    assert_eq!(&u[2..], &[0.75 * shrink, -0.5 * shrink]);
    assert_eq!(&v[2..], &[1.0 * shrink, 2.0 * shrink]);
}

#[test]
fn kernel_is_deterministic() {
    let mut r = rng(99);
    let b = random_block(&mut r, 8, 8, 3, 0.5);
    let run = || {
        let (mut u, mut v) = (b.u.clone(), b.v.clone());
        let mut task = BlockTask::new((1, 2), &b.triples, &mut u, &mut v, b.k, 1e-2, 1e-2, InnerIters::Fixed(4)).unwrap();
        let stats = sgd_block(&mut task).unwrap();
        (u, v, stats)
    };
    assert_eq!(run(), run());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn full_batch_step_never_increases_objective(
        seed in any::<u64>(),
        rows in 1usize..8,
        cols in 1usize..8,
        k in 1usize..4,
        alpha in 1e-6f64..=1e-4,
    ) {
        let mut r = rng(seed);
        let mut b = random_block(&mut r, rows, cols, k, 0.6);
        let before = block_objective(&view(&b), 0.0);
        let mut task = BlockTask::new((0, 0), &b.triples, &mut b.u, &mut b.v, k, alpha, 0.0, InnerIters::Fixed(1)).unwrap();
        batch_gradient_block(&mut task).unwrap();
        let after = block_objective(&view(&b), 0.0);
        prop_assert!(after <= before, "objective rose from {before} to {after}");
    }

    #[test]
    fn sgd_sse_before_matches_view(seed in any::<u64>(), k in 1usize..4) {
        let mut r = rng(seed);
        let mut b = random_block(&mut r, 4, 6, k, 0.5);
        let expected = view(&b).sse();
        let mut task = BlockTask::new((0, 0), &b.triples, &mut b.u, &mut b.v, k, 1e-3, 1e-2, InnerIters::Fixed(2)).unwrap();
        let stats = sgd_block(&mut task).unwrap();
        if !b.triples.is_empty() {
            prop_assert_eq!(stats.sse_before, expected);
            prop_assert_eq!(stats.sse_after, view(&b).sse());
        }
    }
}

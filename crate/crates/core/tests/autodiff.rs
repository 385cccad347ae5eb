//! Reverse-mode gradients of every primitive against central differences.

use lgdn::gradsuite::{LossKind, Problem};
use lgdn::tensor::{grad_check, Graph, Tensor, Var};
use lgdn::Result;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random(rng: &mut ChaCha8Rng, rows: usize, cols: usize, lo: f64, hi: f64) -> Tensor<f64> {
    Tensor::new(vec![rows, cols], (0..rows * cols).map(|_| rng.random_range(lo..hi)).collect()).unwrap()
}

/// Weighted sum so every output entry gets a distinct upstream gradient.
fn probe(g: &mut Graph<f64>, x: Var, seed: u64) -> Result<Var> {
    let (r, c) = g.shape(x);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabcd);
    let w = g.constant(r, c, (0..r * c).map(|_| rng.random_range(-1.0..1.0)).collect())?;
    let y = g.mul(x, w)?;
    g.sum(y)
}

type Case = (&'static str, fn(&mut Graph<f64>, &[Var]) -> Result<Var>, fn(&mut ChaCha8Rng) -> Vec<Tensor<f64>>);

fn cases() -> Vec<Case> {
    vec![
        ("matmul", |g, v| g.matmul(v[0], v[1]), |r| vec![random(r, 3, 4, -1.0, 1.0), random(r, 4, 2, -1.0, 1.0)]),
        ("transpose", |g, v| g.transpose(v[0]), |r| vec![random(r, 3, 2, -1.0, 1.0)]),
        ("add", |g, v| g.add(v[0], v[1]), |r| vec![random(r, 2, 3, -1.0, 1.0), random(r, 2, 3, -1.0, 1.0)]),
        ("add_row", |g, v| g.add_row(v[0], v[1]), |r| vec![random(r, 3, 4, -1.0, 1.0), random(r, 1, 4, -1.0, 1.0)]),
        ("mul", |g, v| g.mul(v[0], v[1]), |r| vec![random(r, 2, 3, -1.0, 1.0), random(r, 2, 3, -1.0, 1.0)]),
        ("mul_row", |g, v| g.mul_row(v[0], v[1]), |r| vec![random(r, 3, 4, -1.0, 1.0), random(r, 1, 4, -1.0, 1.0)]),
        ("scale", |g, v| g.scale(v[0], -1.7), |r| vec![random(r, 2, 2, -1.0, 1.0)]),
        ("sub", |g, v| g.sub(v[0], v[1]), |r| vec![random(r, 2, 3, -1.0, 1.0), random(r, 2, 3, -1.0, 1.0)]),
        ("exp", |g, v| g.exp(v[0]), |r| vec![random(r, 2, 3, -1.0, 1.0)]),
        ("ln", |g, v| g.ln(v[0]), |r| vec![random(r, 2, 3, 0.5, 2.0)]),
        ("gelu", |g, v| g.gelu(v[0]), |r| vec![random(r, 2, 5, -3.0, 3.0)]),
        ("softmax", |g, v| g.softmax_rows(v[0], None), |r| vec![random(r, 3, 5, -2.0, 2.0)]),
        ("masked_softmax", |g, v| g.softmax_rows(v[0], Some(&[false, true, false, false, true])), |r| vec![random(r, 3, 5, -2.0, 2.0)]),
        ("log_sum_exp", |g, v| g.log_sum_exp_rows(v[0]), |r| vec![random(r, 3, 5, -2.0, 2.0)]),
        ("mean", |g, v| g.mean(v[0]), |r| vec![random(r, 3, 2, -1.0, 1.0)]),
        ("mean_rows", |g, v| g.mean_rows(v[0]), |r| vec![random(r, 4, 3, -1.0, 1.0)]),
        ("concat_rows", |g, v| g.concat_rows(&[v[0], v[1], v[0]]), |r| vec![random(r, 2, 3, -1.0, 1.0), random(r, 1, 3, -1.0, 1.0)]),
        ("slice_rows", |g, v| g.slice_rows(v[0], 1, 2), |r| vec![random(r, 4, 3, -1.0, 1.0)]),
        ("slice_cols", |g, v| g.slice_cols(v[0], 1, 2), |r| vec![random(r, 3, 4, -1.0, 1.0)]),
        ("reshape", |g, v| g.reshape(v[0], 3, 2), |r| vec![random(r, 2, 3, -1.0, 1.0)]),
        ("l2_normalize", |g, v| g.l2_normalize_rows(v[0]), |r| vec![random(r, 3, 4, -1.0, 1.0)]),
        ("layer_norm", |g, v| g.layer_norm_rows(v[0], 1e-5), |r| vec![random(r, 3, 6, -2.0, 2.0)]),
    ]
}

#[test]
fn primitives_match_central_differences() {
    for (name, op, inputs) in cases() {
        for seed in 0..100u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let params = inputs(&mut rng);
            let report = grad_check(
                |g, v| {
                    let y = op(g, v)?;
                    probe(g, y, seed)
                },
                &params,
                1e-5,
            )
            .unwrap();
            assert!(report.max_rel_error < 1e-5, "{name} seed {seed}: {:e}", report.max_rel_error);
        }
    }
}

#[test]
fn softmax_rows_sum_to_one_and_respect_masks() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..100 {
        let x = random(&mut rng, 4, 7, -30.0, 30.0);
        let mask: Vec<bool> = (0..7).map(|j| j == 0 || rng.random_bool(0.6)).collect();
        let mut g = Graph::new();
        let v = g.leaf(&x, false);
        let s = g.softmax_rows(v, Some(&mask)).unwrap();
        for row in g.value(s).chunks(7) {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            for (p, &keep) in row.iter().zip(&mask) {
                if !keep {
                    assert_eq!(*p, 0.0);
                }
            }
        }
    }
}

#[test]
fn reused_nodes_accumulate_gradient() {
    let x = Tensor::new(vec![1, 3], vec![0.5, -1.0, 2.0]).unwrap();
    let mut g = Graph::new();
    let v = g.leaf(&x, true);
    let a = g.mul(v, v).unwrap();
    let b = g.scale(v, 3.0).unwrap();
    let c = g.add(a, b).unwrap();
    let loss = g.sum(c).unwrap();
    let grads = g.backward(loss).unwrap();
    assert_eq!(grads.get(v).unwrap(), &[4.0, 1.0, 7.0]);
}

#[test]
fn truncating_the_tape_restores_a_clean_graph() {
    let x = Tensor::new(vec![1, 2], vec![1.0, 2.0]).unwrap();
    let mut g = Graph::new();
    let v = g.leaf(&x, true);
    let mark = g.len();
    let y = g.exp(v).unwrap();
    let _ = g.sum(y).unwrap();
    g.truncate(mark);
    assert_eq!(g.len(), mark);
    let s = g.sum(v).unwrap();
    assert_eq!(g.backward(s).unwrap().get(v).unwrap(), &[1.0, 1.0]);
}

fn flat_gradient(p: &Problem, kind: LossKind) -> Vec<f64> {
    let mut g = Graph::new();
    let bound = [p.stores[0].bind(&mut g, true), p.stores[1].bind(&mut g, true), p.stores[2].bind(&mut g, true)];
    let loss = p.loss(&mut g, &bound, kind).unwrap();
    let grads = g.backward(loss).unwrap();
    bound
        .iter()
        .zip(&p.stores)
        .flat_map(|(b, s)| b.vars().iter().zip(s.tensors()).flat_map(|(&v, t)| grads.get_or_zeros(v, t.len())).collect::<Vec<_>>())
        .collect()
}

#[test]
fn total_gradient_is_the_sum_of_part_gradients() {
    let p = Problem::new().unwrap();
    let total = flat_gradient(&p, LossKind::Total);
    let parts: Vec<Vec<f64>> = [LossKind::Mvcl, LossKind::Mfcl, LossKind::Lsfm].iter().map(|&k| flat_gradient(&p, k)).collect();
    for (i, t) in total.iter().enumerate() {
        let s = parts[0][i] + parts[1][i] + parts[2][i];
        assert!((t - s).abs() < 1e-10, "entry {i}: {t} vs {s}");
    }
}

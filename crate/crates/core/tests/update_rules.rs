//! Momentum averaging and AdamW against scalar reference recurrences.

use lgdn::encoders::MomentumPair;
use lgdn::optim::{optimizer_step, AdamWConfig, AdamWState};
use lgdn::params::ParamStore;
use lgdn::tensor::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn store(rng: &mut ChaCha8Rng) -> ParamStore<f64> {
    let mut s = ParamStore::new();
    s.add("a", Tensor::new(vec![2, 3], (0..6).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap());
    s.add("b", Tensor::new(vec![1, 4], (0..4).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap());
    s
}

fn flat(s: &ParamStore<f64>) -> Vec<f64> {
    s.tensors().flat_map(|t| t.values().to_vec()).collect()
}

#[test]
fn momentum_one_freezes_and_zero_copies() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (online, twin) = (store(&mut rng), store(&mut rng));
    let mut frozen = MomentumPair::from_parts(online.clone(), twin.clone(), 1.0).unwrap();
    let mut copy = MomentumPair::from_parts(online.clone(), twin.clone(), 0.0).unwrap();
    for _ in 0..10 {
        frozen.update();
        copy.update();
    }
    assert_eq!(flat(&frozen.momentum), flat(&twin));
    assert_eq!(flat(&copy.momentum), flat(&online));
    assert_eq!(flat(&frozen.online), flat(&online));
}

#[test]
fn gap_to_online_decays_geometrically() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let (online, twin) = (store(&mut rng), store(&mut rng));
    let mut pair = MomentumPair::from_parts(online.clone(), twin.clone(), 0.99).unwrap();
    let (o, t0) = (flat(&online), flat(&twin));
    for k in 1..=50 {
        pair.update();
        let decay = 0.99f64.powi(k);
        for ((h, &x), &h0) in flat(&pair.momentum).iter().zip(&o).zip(&t0) {
            assert!((h - (x + decay * (h0 - x))).abs() < 1e-12);
        }
    }
    assert!(MomentumPair::new(online, 1.5).is_err());
}

#[test]
fn adamw_matches_reference_over_a_hundred_steps() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut s = store(&mut rng);
    let cfg = AdamWConfig { lr: 3e-3, weight_decay: 0.05, ..Default::default() };
    let mut st = AdamWState::for_store(&s);
    let mut p = flat(&s);
    let (mut m, mut v) = (vec![0.0; p.len()], vec![0.0; p.len()]);
    for t in 1..=100 {
        let g: Vec<f64> = (0..p.len()).map(|_| rng.random_range(-2.0..2.0)).collect();
        optimizer_step(&mut s, &[g[..6].to_vec(), g[6..].to_vec()], &mut st, &cfg).unwrap();
        for k in 0..p.len() {
            m[k] = 0.9 * m[k] + 0.1 * g[k];
            v[k] = 0.999 * v[k] + 0.001 * g[k] * g[k];
            let mh = m[k] / (1.0 - 0.9f64.powi(t));
            let vh = v[k] / (1.0 - 0.999f64.powi(t));
            p[k] -= cfg.lr * cfg.weight_decay * p[k] + cfg.lr * mh / (vh.sqrt() + cfg.eps);
        }
        for (a, b) in flat(&s).iter().zip(&p) {
            assert!((a - b).abs() < 1e-10);
        }
    }
    assert_eq!(st.step, 100);
}

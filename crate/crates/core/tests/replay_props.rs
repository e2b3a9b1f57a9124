use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use remer_core::env::Transition;
use remer_core::replay::{HRecord, ReplayBuffer, SamplingMode, SumTree};
use remer_core::ActionLayout;
use statrs::distribution::{ChiSquared, ContinuousCDF};

fn tr(s: usize, a: usize, traj: u64, step: u32) -> Transition {
    Transition {
        s,
        a,
        r: 0.0,
        s_next: s,
        done: false,
        censored: false,
        trajectory_id: traj,
        step_index: step,
        distance_to_end: None,
    }
}

fn chi_square(counts: &[u64], probs: &[f64]) -> f64 {
    let n: u64 = counts.iter().sum();
    counts
        .iter()
        .zip(probs)
        .map(|(&c, &p)| {
            let e = p * n as f64;
            (c as f64 - e).powi(2) / e
        })
        .sum()
}

#[derive(Debug, Clone)]
enum Op {
    Set(usize, f64),
    Zero(usize),
}

fn op(cap: usize) -> impl Strategy<Value = Op> {
    prop_oneof![
        4 => (0..cap, 0.0f64..100.0).prop_map(|(i, p)| Op::Set(i, p)),
        1 => (0..cap).prop_map(Op::Zero),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn sum_tree_stays_consistent(cap in 1usize..300, ops in prop::collection::vec(op(300), 10_000)) {
        let mut tree = SumTree::new(cap);
        let mut shadow = vec![0.0; cap];
        for o in ops {
            match o {
                Op::Set(i, p) if i < cap => { tree.set(i, p); shadow[i] = p; }
                Op::Zero(i) if i < cap => { tree.set(i, 0.0); shadow[i] = 0.0; }
                _ => {}
            }
        }
        let total: f64 = shadow.iter().sum();
        prop_assert!(tree.consistency_error() <= 1e-9 * total.max(1.0));
        prop_assert!((tree.total() - total).abs() <= 1e-9 * total.max(1.0));
        for (i, p) in shadow.iter().enumerate() {
            prop_assert_eq!(tree.get(i), *p);
        }
        if total > 0.0 {
            let mut rng = ChaCha8Rng::seed_from_u64(cap as u64);
            for _ in 0..200 {
                let leaf = tree.find(rng.random::<f64>() * tree.total());
                prop_assert!(shadow[leaf] > 0.0);
            }
        }
    }

    #[test]
    fn mu_matches_histogram(
        cap in 1usize..64,
        pairs in prop::collection::vec((0usize..4, 0usize..2), 1..300),
    ) {
        let layout = ActionLayout::new(&[2, 2, 2, 2]);
        let mut buf = ReplayBuffer::new(cap, &layout, 8);
        for (i, &(s, a)) in pairs.iter().enumerate() {
            buf.push(tr(s, a, 0, i as u32));
        }
        let kept = &pairs[pairs.len().saturating_sub(cap)..];
        prop_assert_eq!(buf.len(), kept.len());
        let mu = buf.mu();
        for (s, a, idx) in layout.pairs() {
            let hist = kept.iter().filter(|&&p| p == (s, a)).count() as f64 / kept.len() as f64;
            prop_assert!((mu.values()[idx] - hist).abs() <= 1e-12);
        }
        prop_assert!((mu.sum() - 1.0).abs() <= 1e-12);
    }
}

#[test]
fn sum_tree_draws_follow_priorities() {
    let mut tree = SumTree::new(4);
    for (i, p) in [1.0, 2.0, 3.0, 4.0].into_iter().enumerate() {
        tree.set(i, p);
    }
    let probs = [0.1, 0.2, 0.3, 0.4];
    let critical = ChiSquared::new(3.0).unwrap().inverse_cdf(0.999);
    let mut rng = ChaCha8Rng::seed_from_u64(17);

    let mut counts = [0u64; 4];
    for _ in 0..1_000_000 {
        counts[tree.find(rng.random::<f64>() * tree.total())] += 1;
    }
    let stat = chi_square(&counts, &probs);
    assert!(stat < critical, "find: chi2 {stat} >= {critical}");

    let mut counts = [0u64; 4];
    for _ in 0..(1_000_000 / 8) {
        for leaf in tree.sample_stratified(8, &mut rng) {
            counts[leaf] += 1;
        }
    }
    let stat = chi_square(&counts, &probs);
    assert!(stat < critical, "stratified: chi2 {stat} >= {critical}");
}

#[test]
fn prioritized_sampling_matches_weighted_uniform_update() {
    // Three stored pairs with TD errors e; priority p. Prioritized sampling
    // gives the expected update Σ p_i e_i / Σ p; uniform sampling with weight
    // w_i = p_i / mean(p) gives the same in expectation.
    let layout = ActionLayout::new(&[1, 1, 1]);
    let mut buf = ReplayBuffer::new(3, &layout, 4);
    let errors = [0.7, -1.3, 2.1];
    let prio = [0.5, 3.0, 1.5];
    for (s, &p) in prio.iter().enumerate() {
        let slot = buf.push(tr(s, 0, 0, s as u32));
        buf.set_priority(slot, p).unwrap();
    }
    let mean_p = prio.iter().sum::<f64>() / 3.0;
    let weighted_uniform: f64 = (0..3).map(|i| prio[i] / mean_p * errors[i] / 3.0).sum();

    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let n = 100_000;
    let (mut sum, mut sq) = (0.0, 0.0);
    for _ in 0..n {
        let smp = buf.sample(1, SamplingMode::Prioritized, &mut rng).unwrap()[0];
        let e = errors[buf.get(smp.slot).s];
        sum += e;
        sq += e * e;
    }
    let mean = sum / n as f64;
    let se = ((sq / n as f64 - mean * mean) / n as f64).sqrt();
    // The stored priorities carry a 1e-6 floor; its effect is far below se.
    assert!(
        (mean - weighted_uniform).abs() <= 3.0 * se,
        "{mean} vs {weighted_uniform} ± {se}"
    );
}

#[test]
fn revisited_pair_records_both_distances() {
    let layout = ActionLayout::new(&[2, 2, 2]);
    let mut buf = ReplayBuffer::new(16, &layout, 8);
    let path = [(0, 1), (1, 0), (0, 1), (2, 1), (1, 1)];
    for (i, &(s, a)) in path.iter().enumerate() {
        buf.push(tr(s, a, 9, i as u32));
    }
    buf.on_episode_end(9, false);
    let hs: Vec<u32> = buf.h_record(0, 1).iter().map(|r: &HRecord| r.h).collect();
    assert_eq!(hs, vec![4, 2]);
    let distances: Vec<Option<u32>> = buf.iter_chronological().map(|t| t.distance_to_end).collect();
    assert_eq!(distances, vec![Some(4), Some(3), Some(2), Some(1), Some(0)]);
}

#[test]
fn uniform_sampling_covers_slots_evenly() {
    let layout = ActionLayout::new(&[1; 5]);
    let mut buf = ReplayBuffer::new(5, &layout, 4);
    for s in 0..5 {
        buf.push(tr(s, 0, 0, s as u32));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut counts = [0u64; 5];
    for smp in buf.sample(200_000, SamplingMode::Uniform, &mut rng).unwrap() {
        counts[smp.slot] += 1;
    }
    let stat = chi_square(&counts, &[0.2; 5]);
    assert!(stat < ChiSquared::new(4.0).unwrap().inverse_cdf(0.999));
}

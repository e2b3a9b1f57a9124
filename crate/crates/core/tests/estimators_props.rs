use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use remer_core::env::{chain_mdp, LEFT, RIGHT};
use remer_core::estimators::*;
use remer_core::mdp::{
    bellman_optimal_backup, greedy_policy, softmax_policy, solve_q_star, suboptimality_gap, MdpBuilder,
};
use remer_core::replay::HRecord;
use remer_core::{ActionLayout, PolicyTable, QTable, TabularMdp};

/// Direct sum `Σ_{t=1}^{h} γ^t (L + c) + γ^{h+1} c`.
fn tce_by_sum(h: u32, gamma: f64, l: f64, c: f64) -> f64 {
    let mut acc = 0.0;
    let mut g = 1.0;
    for _ in 0..h {
        g *= gamma;
        acc += g * (l + c);
    }
    acc + g * gamma * c
}

/// `γ P^π v` over pairs, terminal successors contributing zero.
fn propagate(v: &[f64], mdp: &TabularMdp, pi: &PolicyTable) -> Vec<f64> {
    let layout = mdp.layout();
    layout
        .pairs()
        .map(|(s, a, _)| {
            let mut acc = 0.0;
            for &(y, p) in mdp.outcomes(s, a) {
                if mdp.is_terminal(y) {
                    continue;
                }
                for (b, &pb) in pi.row(y).iter().enumerate() {
                    acc += p * pb * v[layout.index(y, b)];
                }
            }
            mdp.gamma() * acc
        })
        .collect()
}

fn random_mdp(seed: u64, n: usize, gamma: f64) -> TabularMdp {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut b = MdpBuilder::new(n + 1, gamma);
    for s in 0..n {
        for _ in 0..rng.random_range(1..=3) {
            let k = rng.random_range(1..=3);
            let mut outs: Vec<(usize, f64)> = (0..k)
                .map(|_| (rng.random_range(0..=n), rng.random::<f64>() + 0.1))
                .collect();
            let z: f64 = outs.iter().map(|o| o.1).sum();
            outs.iter_mut().for_each(|o| o.1 /= z);
            b = b.action(s, rng.random_range(-1.0..1.0), &outs);
        }
    }
    b.terminal(n).initial_state(0).build().unwrap()
}

fn random_q(layout: &ActionLayout, rng: &mut ChaCha8Rng) -> QTable {
    QTable::from_values(layout, (0..layout.len()).map(|_| rng.random_range(-2.0..2.0)).collect()).unwrap()
}

#[test]
fn tce_matches_direct_sum() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..2000 {
        let gamma = if rng.random::<f64>() < 0.2 {
            1.0
        } else {
            rng.random_range(0.5..0.999)
        };
        let h = rng.random_range(0..200);
        let l = rng.random_range(0.0..5.0);
        let c = rng.random_range(0.0..5.0);
        let want = tce_by_sum(h, gamma, l, c);
        assert!((tce_raw(h, gamma, l, c) - want).abs() <= 1e-9 * want.max(1.0));
    }
}

#[test]
fn expected_tce_of_records_is_the_clipped_mean() {
    let cfg = TceConfig {
        clip: ClipSchedule::fixed(0.0, 1e9),
        ..TceConfig::new(0.9, 1.0)
    };
    let recs = [
        HRecord { h: 1, censored: false },
        HRecord { h: 4, censored: false },
        HRecord { h: 9, censored: true },
    ];
    let want = (tce_by_sum(1, 0.9, 0.5, 1.0) + tce_by_sum(4, 0.9, 0.5, 1.0)) / 2.0;
    assert!((expected_tce(&recs, &cfg, 0.5, 0.0) - want).abs() <= 1e-12);
    let with_censored = TceConfig {
        include_censored: true,
        ..cfg
    };
    let want3 = (2.0 * want + tce_by_sum(9, 0.9, 0.5, 1.0)) / 3.0;
    assert!((expected_tce(&recs, &with_censored, 0.5, 0.0) - want3).abs() <= 1e-12);
}

#[test]
fn two_sweeps_on_the_chain_by_hand() {
    // Q0 = 0, half-step sweeps Q_k = Q_{k−1} + ½(B*Q_{k−1} − Q_{k−1}).
    let mdp = chain_mdp();
    let layout = mdp.layout();
    let q0 = QTable::zeros(layout);
    let b0 = bellman_optimal_backup(&q0, &mdp).unwrap();
    let q1 = QTable::from_values(layout, b0.values().iter().map(|v| 0.5 * v).collect()).unwrap();
    let d1 = exact_delta_step(&DeltaTable::zeros(layout), &q1, &b0, &mdp, &greedy_policy(&q0)).unwrap();
    assert_eq!(d1.values(), &[1.0, 0.5, 1.0, 0.5, 1.0, 0.5, 1.0]);

    let b1 = bellman_optimal_backup(&q1, &mdp).unwrap();
    assert!(b1.values().iter().all(|&v| v == 2.0));
    let q2 = QTable::from_values(layout, q1.values().iter().map(|v| v + 0.5 * (2.0 - v)).collect()).unwrap();
    let d2 = exact_delta_step(&d1, &q2, &b1, &mdp, &greedy_policy(&q1)).unwrap();
    // E2 = (.5, .75) per state; going right picks up Δ1 at the next state's greedy
    // (left) action, which is 1.
    assert_eq!(d2.values(), &[0.5, 1.75, 0.5, 1.75, 0.5, 1.75, 0.5]);
}

#[test]
fn sample_penalty_is_unbiased() {
    let mdp = random_mdp(21, 5, 0.9);
    let layout = mdp.layout().clone();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let delta =
        DeltaTable::from_values(&layout, (0..layout.len()).map(|_| rng.random_range(0.0..3.0)).collect()).unwrap();
    let q = random_q(&layout, &mut rng);
    let pi = greedy_policy(&q);
    for (s, a, _) in layout.pairs() {
        let exact = discor_penalty_exact(&delta, &mdp, &pi, s, a);
        let n = 100_000;
        let (mut sum, mut sq) = (0.0, 0.0);
        for _ in 0..n {
            let u: f64 = rng.random();
            let mut acc = 0.0;
            let mut next = mdp.outcomes(s, a).last().unwrap().0;
            for &(y, p) in mdp.outcomes(s, a) {
                acc += p;
                if u < acc {
                    next = y;
                    break;
                }
            }
            let arg = (!mdp.is_terminal(next)).then(|| (next, q.greedy_action(next).unwrap()));
            let x = discor_penalty_sample(&delta, mdp.gamma(), arg);
            sum += x;
            sq += x * x;
        }
        let mean = sum / n as f64;
        let se = ((sq / n as f64 - mean * mean) / n as f64).sqrt();
        assert!(
            (mean - exact).abs() <= 3.0 * se + 1e-12,
            "({s},{a}) {mean} vs {exact} ± {se}"
        );
    }
}

/// Stochastic LFIW on a 4-cell toy with i.i.d. batches drawn from `fast` and `slow`.
fn fit_lfiw(fast: [f64; 4], slow: [f64; 4], seed: u64) -> RatioTable {
    let layout = ActionLayout::new(&[1; 4]);
    let mut kappa = RatioTable::new(&layout, 1.0).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let draw = |p: &[f64; 4], rng: &mut ChaCha8Rng| -> (usize, usize) {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        for (i, pi) in p.iter().enumerate() {
            acc += pi;
            if u < acc {
                return (i, 0);
            }
        }
        (3, 0)
    };
    for step in 0..6000 {
        let f: Vec<_> = (0..256).map(|_| draw(&fast, &mut rng)).collect();
        let s: Vec<_> = (0..256).map(|_| draw(&slow, &mut rng)).collect();
        let lr = if step < 3000 { 0.5 } else { 0.05 };
        kappa.lfiw_update(&f, &s, lr).unwrap();
    }
    kappa
}

#[test]
fn lfiw_recovers_density_ratio() {
    let kappa = fit_lfiw([0.375, 0.375, 0.125, 0.125], [0.25; 4], 3);
    for (s, want) in [1.5, 1.5, 0.5, 0.5].into_iter().enumerate() {
        assert!((kappa.kappa(s, 0) - want).abs() <= 0.05, "{s}: {}", kappa.kappa(s, 0));
    }
    let same = fit_lfiw([0.1, 0.2, 0.3, 0.4], [0.1, 0.2, 0.3, 0.4], 4);
    for s in 0..4 {
        assert!((same.kappa(s, 0) - 1.0).abs() <= 0.05);
    }
}

#[test]
fn lfiw_fixed_point_matches_counts() {
    // Fixed batches: the optimum is the count ratio p̂_fast / p̂_slow.
    let fast = [(0, 0), (0, 0), (0, 0), (1, 0), (2, 0), (2, 0)];
    let slow = [(0, 0), (1, 0), (1, 0), (2, 0), (2, 0), (3, 0)];
    let layout = ActionLayout::new(&[1; 4]);
    let mut kappa = RatioTable::new(&layout, 1.0).unwrap();
    for _ in 0..20_000 {
        kappa.lfiw_update(&fast, &slow, 0.5).unwrap();
    }
    for (s, want) in [(0, 3.0), (1, 0.5), (2, 1.0)] {
        assert!((kappa.kappa(s, 0) - want).abs() <= 1e-6);
    }
    // Never seen in the fast batch: pushed towards zero.
    assert!(kappa.kappa(3, 0) < 1e-3);
    assert!(kappa.lfiw_loss(&fast, &slow).is_finite());
}

#[test]
fn cumulative_error_bound_first_sweep_by_hand() {
    let mdp = chain_mdp();
    let q0 = QTable::zeros(mdp.layout());
    let b0 = bellman_optimal_backup(&q0, &mdp).unwrap();
    let q1 = QTable::from_values(mdp.layout(), b0.values().iter().map(|v| 0.1 * v).collect()).unwrap();
    let bound = cumulative_error_bound(&q1, &q0, &mdp, 3.0).unwrap();
    // Greedy on Q0 goes left (ties to the lowest index), ending after one step
    // with |Q0 − B*Q0| = 2: J = 2 + 3 + 3 = 8 at every non-terminal state.
    assert!((bound.get(0, LEFT) - (1.8 + 3.0)).abs() <= 1e-12);
    assert!((bound.get(0, RIGHT) - (0.9 + 8.0)).abs() <= 1e-12);
    assert!((bound.get(3, 0) - (1.8 + 3.0)).abs() <= 1e-12);
}

#[test]
fn cumulative_error_bound_holds_on_the_chain() {
    let mdp = chain_mdp();
    let q_star = solve_q_star(&mdp, 1e-12).unwrap();
    let c = suboptimality_gap(&q_star);
    for alpha in [0.1, 0.5, 1.0] {
        let mut q_prev = QTable::zeros(mdp.layout());
        for k in 1..=200 {
            let b = bellman_optimal_backup(&q_prev, &mdp).unwrap();
            let q_k = QTable::from_values(
                mdp.layout(),
                q_prev
                    .values()
                    .iter()
                    .zip(b.values())
                    .map(|(q, t)| q + alpha * (t - q))
                    .collect(),
            )
            .unwrap();
            let bound = cumulative_error_bound(&q_k, &q_prev, &mdp, c).unwrap();
            let gap = q_k.abs_diff(&q_star).unwrap();
            for (g, u) in gap.values().iter().zip(bound.values()) {
                assert!(*g <= u + 1e-9, "alpha {alpha} k {k}: {g} > {u}");
            }
            q_prev = q_k;
        }
    }
}

#[test]
fn cyclic_mdp_has_no_cumulative_bound() {
    let mdp = MdpBuilder::new(2, 0.9)
        .action(0, 0.0, &[(1, 1.0)])
        .action(1, 0.0, &[(0, 1.0)])
        .initial_state(0)
        .build()
        .unwrap();
    let q = QTable::zeros(mdp.layout());
    assert!(cumulative_error_bound(&q, &q, &mdp, 1.0).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(10_000))]

    #[test]
    fn tce_strictly_increases_with_distance(
        (gamma, h) in (0.5f64..=1.0).prop_flat_map(|g| {
            // Keep γ^{h+2} ≥ 1e-6 so the increment stays well above rounding.
            let max_h = if g == 1.0 { 10_000 } else { ((1e-6f64).ln() / g.ln()) as u32 - 1 };
            (Just(g), 0..max_h.max(1))
        }),
        l in 0.0f64..10.0,
        c in 0.01f64..10.0,
    ) {
        prop_assert!(tce_raw(h + 1, gamma, l, c) > tce_raw(h, gamma, l, c));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn unrolled_delta_matches_recursion(seed in any::<u64>(), n in 2usize..=10, k in 1usize..=20, gamma in 0.3f64..0.99) {
        let mdp = random_mdp(seed, n, gamma);
        let layout = mdp.layout().clone();
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xdead);
        let qs: Vec<QTable> = (0..=k).map(|_| random_q(&layout, &mut rng)).collect();
        let pis: Vec<PolicyTable> = qs.iter().map(softmax_policy).collect();
        let errs: Vec<Vec<f64>> = (1..=k)
            .map(|i| {
                let b = bellman_optimal_backup(&qs[i - 1], &mdp).unwrap();
                qs[i].abs_diff(&b).unwrap().into_values()
            })
            .collect();

        let mut delta = DeltaTable::zeros(&layout);
        for i in 1..=k {
            let b = bellman_optimal_backup(&qs[i - 1], &mdp).unwrap();
            delta = exact_delta_step(&delta, &qs[i], &b, &mdp, &pis[i - 1]).unwrap();
        }

        let mut direct = vec![0.0; layout.len()];
        for i in 1..=k {
            let mut v = errs[i - 1].clone();
            for pi in &pis[i..k] {
                v = propagate(&v, &mdp, pi);
            }
            for (d, x) in direct.iter_mut().zip(v) {
                *d += x;
            }
        }
        for (a, b) in delta.values().iter().zip(&direct) {
            prop_assert!((a - b).abs() <= 1e-9, "{} vs {}", a, b);
        }
    }

    #[test]
    fn delta_stays_nonnegative(seed in any::<u64>(), steps in 1usize..400) {
        let layout = ActionLayout::new(&[2, 3, 1]);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut delta = DeltaTable::zeros(&layout);
        let target = DeltaTable::from_values(&layout, (0..6).map(|_| rng.random_range(0.0..2.0)).collect()).unwrap();
        for _ in 0..steps {
            let s = rng.random_range(0..3);
            let a = rng.random_range(0..layout.n_actions(s));
            let next = (rng.random::<bool>()).then(|| (rng.random_range(0..3), 0));
            let y = discor_target(rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0), &target, next, 0.9);
            prop_assert!(y >= 0.0);
            delta.update_toward(s, a, y, rng.random_range(0.0..=1.0));
        }
        prop_assert!(delta.values().iter().all(|&d| d >= 0.0));
    }
}

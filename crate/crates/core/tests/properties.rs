mod common;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use common::{brute_force_kmeans, random_posterior, random_unit};
use protogate::cluster::{fit_best_of, fit_with_trace, FitOptions};
use protogate::gate::{evaluate_gate, fuse, js_divergence, GateConfig};
use protogate::lab::scenario::{gen_two_expert_scenario, ScenarioConfig};
use protogate::lab::checks::bayes_dominance;
use protogate::metrics::{accuracy, balanced_accuracy, ece, macro_f1, per_class_stats};
use protogate::objectives::{cross_entropy, supcon_grad_raw, supcon_loss_raw};
use protogate::retrieval::{ema_update, similarity_posterior, vmf_class_scores, EmaState, SimilarityScores};
use protogate::{argmax_class, normalize, softmax, Posterior, PrototypeBank, UnitEmbedding};

fn finite_vec(len: std::ops::RangeInclusive<usize>) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-30.0..30.0f64, len)
}

fn posterior(c: usize) -> impl Strategy<Value = Posterior> {
    prop::collection::vec(0.01..1.0f64, c).prop_map(|w| {
        let s: f64 = w.iter().sum();
        Posterior::new(w.iter().map(|x| x / s).collect()).unwrap()
    })
}

proptest! {
    #[test]
    fn softmax_sums_to_one_and_ignores_shifts(v in finite_vec(2..=10), shift in -50.0..50.0f64, t in 0.05..5.0f64) {
        let p = softmax(&v, t).unwrap();
        prop_assert!((p.probs().iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        let shifted: Vec<f64> = v.iter().map(|x| x + shift).collect();
        let q = softmax(&shifted, t).unwrap();
        for (a, b) in p.probs().iter().zip(q.probs()) {
            prop_assert!((a - b).abs() <= 1e-12);
        }
    }

    #[test]
    fn argmax_survives_monotone_transforms(p in posterior(6), scale in 0.1..10.0f64) {
        let probs = p.probs();
        let mut sorted = probs.to_vec();
        sorted.sort_by(f64::total_cmp);
        prop_assume!(sorted.windows(2).all(|w| w[1] - w[0] > 1e-12));
        let y = argmax_class(&p);
        // ln(scale·x + 1) and x³ are strictly increasing
        let t: Vec<f64> = probs.iter().map(|x| (scale * x + 1.0).ln()).collect();
        let s: f64 = t.iter().sum();
        prop_assert_eq!(argmax_class(&Posterior::new(t.iter().map(|x| x / s).collect()).unwrap()), y);
        let cube: Vec<f64> = probs.iter().map(|x| x.powi(3)).collect();
        let s: f64 = cube.iter().sum();
        prop_assert_eq!(argmax_class(&Posterior::new(cube.iter().map(|x| x / s).collect()).unwrap()), y);
    }

    #[test]
    fn normalize_is_idempotent(v in finite_vec(2..=12)) {
        prop_assume!(v.iter().map(|x| x * x).sum::<f64>() > 1e-6);
        let once = normalize(&v).unwrap();
        let twice = normalize(once.as_slice()).unwrap();
        prop_assert_eq!(once.as_slice(), twice.as_slice());
    }

    #[test]
    fn js_is_symmetric_and_bounded(p in posterior(5), q in posterior(5)) {
        let a = js_divergence(&p, &q).unwrap();
        let b = js_divergence(&q, &p).unwrap();
        prop_assert!((a - b).abs() <= 1e-12);
        prop_assert!(a >= 0.0 && a <= std::f64::consts::LN_2 + 1e-12);
    }

    #[test]
    fn gate_monotonicity(p in posterior(4), q in posterior(4), theta in 0.3..0.9f64, up in 0.0..0.3f64) {
        let cfg = GateConfig { theta_gate: theta, beta: 0.5, m_sim: 0.2, delta: 0.05, ..GateConfig::default() };
        let base = evaluate_gate(&p, &q, &cfg).unwrap().gate;
        let looser = GateConfig { theta_gate: (theta + up).min(1.0), ..cfg };
        if base {
            prop_assert!(evaluate_gate(&p, &q, &looser).unwrap().gate);
        }
        for stricter in [
            GateConfig { beta: cfg.beta + up, ..cfg },
            GateConfig { m_sim: cfg.m_sim + up, ..cfg },
            GateConfig { delta: cfg.delta + up, ..cfg },
        ] {
            if !base {
                prop_assert!(!evaluate_gate(&p, &q, &stricter).unwrap().gate);
            }
        }
    }

    #[test]
    fn similarity_posterior_ignores_shifts_and_prototype_order(seed in any::<u64>(), shift in -20.0..20.0f64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = rng.random_range(2..=6);
        let protos: Vec<Vec<UnitEmbedding>> = (0..3)
            .map(|_| (0..rng.random_range(1..=4)).map(|_| random_unit(&mut rng, d)).collect())
            .collect();
        let z = random_unit(&mut rng, d);
        let bank = PrototypeBank::new(protos.clone(), 20.0, 0.1, 0).unwrap();
        let scores = vmf_class_scores(&z, &bank).unwrap();
        let p = similarity_posterior(&scores, 0.1).unwrap();
        let shifted = SimilarityScores {
            per_prototype: scores.per_prototype.clone(),
            per_class: scores.per_class.iter().map(|q| q + shift).collect(),
        };
        let ps = similarity_posterior(&shifted, 0.1).unwrap();
        let reversed: Vec<Vec<UnitEmbedding>> = protos.iter().map(|c| c.iter().rev().cloned().collect()).collect();
        let pr = similarity_posterior(
            &vmf_class_scores(&z, &PrototypeBank::new(reversed, 20.0, 0.1, 0).unwrap()).unwrap(),
            0.1,
        )
        .unwrap();
        for k in 0..3 {
            prop_assert!((p.get(k) - ps.get(k)).abs() <= 1e-12);
            prop_assert!((p.get(k) - pr.get(k)).abs() <= 1e-12);
        }
    }

    #[test]
    fn ema_converges_geometrically(t0 in finite_vec(3..=3), s in finite_vec(3..=3), mu in 0.0..1.0f64, n in 0usize..20) {
        let mut state = EmaState::new(t0.clone(), mu).unwrap();
        for _ in 0..n {
            state = ema_update(&state, &s).unwrap();
        }
        for i in 0..3 {
            let want = mu.powi(n as i32) * (t0[i] - s[i]).abs();
            let got = (state.teacher()[i] - s[i]).abs();
            prop_assert!((got - want).abs() <= 1e-9 * (1.0 + t0[i].abs() + s[i].abs()));
        }
    }

    #[test]
    fn cross_entropy_decreases_in_the_true_class_probability(a in 0.01..0.98f64, b in 0.01..0.98f64) {
        prop_assume!((a - b).abs() > 1e-9);
        let p = |x: f64| Posterior::new(vec![x, 1.0 - x]).unwrap();
        let (lo, hi) = if a < b { (a, b) } else { (b, a) };
        prop_assert!(cross_entropy(&p(hi), 0).unwrap() < cross_entropy(&p(lo), 0).unwrap());
    }

    #[test]
    fn ece_is_bounded_and_order_free(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = rng.random_range(1..=100);
        let conf: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
        let correct: Vec<bool> = (0..n).map(|_| rng.random_bool(0.5)).collect();
        let e = ece(&conf, &correct, 15).unwrap();
        prop_assert!((0.0..=1.0).contains(&e));
        let mut idx: Vec<usize> = (0..n).collect();
        idx.reverse();
        idx.rotate_left(n / 3);
        let pc: Vec<f64> = idx.iter().map(|&i| conf[i]).collect();
        let pk: Vec<bool> = idx.iter().map(|&i| correct[i]).collect();
        prop_assert!((ece(&pc, &pk, 15).unwrap() - e).abs() <= 1e-12);
    }

    #[test]
    fn metrics_ignore_relabeling(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let c = rng.random_range(2..=6);
        let n = rng.random_range(c..=80);
        // every class present in the labels
        let labels: Vec<usize> = (0..n).map(|i| if i < c { i } else { rng.random_range(0..c) }).collect();
        let preds: Vec<usize> = (0..n).map(|_| rng.random_range(0..c)).collect();
        let mut perm: Vec<usize> = (0..c).collect();
        perm.rotate_left(1);
        perm.swap(0, c - 1);
        let l2: Vec<usize> = labels.iter().map(|&y| perm[y]).collect();
        let p2: Vec<usize> = preds.iter().map(|&y| perm[y]).collect();
        let bal = balanced_accuracy(&preds, &labels, c).unwrap();
        prop_assert!((bal - balanced_accuracy(&p2, &l2, c).unwrap()).abs() <= 1e-12);
        prop_assert!((macro_f1(&preds, &labels, c).unwrap() - macro_f1(&p2, &l2, c).unwrap()).abs() <= 1e-12);
        let recall: f64 = per_class_stats(&preds, &labels, c).unwrap().iter().map(|s| s.recall).sum::<f64>() / c as f64;
        prop_assert_eq!(bal, recall);
    }

    #[test]
    fn supcon_rotation_and_scaling(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = rng.random_range(2..=6);
        let n = 2 * rng.random_range(1..=4);
        let z: Vec<Vec<f64>> = (0..n).map(|_| random_unit(&mut rng, d).into_inner()).collect();
        let labels: Vec<usize> = (0..n).map(|i| (i / 2) % 2).collect();
        let tau = 0.07;
        let loss = supcon_loss_raw(&z, &labels, tau);
        prop_assert!(loss >= 0.0);

        // random rotation in a random coordinate plane, applied twice with different angles
        let mut rotated = z.clone();
        for _ in 0..2 {
            let (i, j) = (rng.random_range(0..d), rng.random_range(0..d));
            prop_assume!(i != j);
            let a: f64 = rng.random_range(0.0..std::f64::consts::TAU);
            for v in &mut rotated {
                let (x, y) = (v[i], v[j]);
                v[i] = a.cos() * x - a.sin() * y;
                v[j] = a.sin() * x + a.cos() * y;
            }
        }
        prop_assert!((supcon_loss_raw(&rotated, &labels, tau) - loss).abs() <= 1e-10 * (1.0 + loss));

        // no torque: Σ_i g_i z_iᵀ is symmetric
        let g = supcon_grad_raw(&z, &labels, tau);
        for a in 0..d {
            for b in 0..d {
                let m: f64 = (0..n).map(|i| g[i][a] * z[i][b] - z[i][a] * g[i][b]).sum();
                prop_assert!(m.abs() <= 1e-9 * (1.0 + g.iter().flatten().fold(0.0f64, |x, y| x.max(y.abs()))));
            }
        }

        // √2·z at 2τ leaves every similarity unchanged
        let scaled: Vec<Vec<f64>> = z.iter().map(|v| v.iter().map(|x| std::f64::consts::SQRT_2 * x).collect()).collect();
        prop_assert!((supcon_loss_raw(&scaled, &labels, 2.0 * tau) - loss).abs() <= 1e-10 * (1.0 + loss));
    }

    #[test]
    fn kmeans_objective_never_increases(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = rng.random_range(2..=40);
        let d = rng.random_range(2..=5);
        let k = rng.random_range(1..=4);
        let points: Vec<UnitEmbedding> = (0..n).map(|_| random_unit(&mut rng, d)).collect();
        let t = fit_with_trace(&points, k, seed, 100, 1e-8).unwrap();
        for w in t.objectives.windows(2) {
            prop_assert!(w[1] <= w[0] + 1e-12);
        }
        for p in &t.prototypes {
            let norm = p.as_slice().iter().map(|x| x * x).sum::<f64>().sqrt();
            prop_assert!((norm - 1.0).abs() <= 1e-9);
        }
    }

    #[test]
    fn kmeans_objective_ignores_point_order(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = rng.random_range(2..=8);
        let d = rng.random_range(2..=4);
        let k = rng.random_range(1..=2);
        let points: Vec<UnitEmbedding> = (0..n).map(|_| random_unit(&mut rng, d)).collect();
        let mut shuffled = points.clone();
        shuffled.reverse();
        shuffled.rotate_left(rng.random_range(0..n));
        let opts = FitOptions::default();
        let a = fit_best_of(&points, k, seed, &opts).unwrap().assignment.objective;
        let b = fit_best_of(&shuffled, k, seed, &opts).unwrap().assignment.objective;
        prop_assert!((a - b).abs() <= 1e-9, "{} vs {}", a, b);
        prop_assert!((a - brute_force_kmeans(&points, k)).abs() <= 1e-9);
    }
}

#[test]
fn fusion_flip_condition() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let mut checked = 0;
    while checked < 10_000 {
        let c = rng.random_range(2..=6);
        let p_cls = random_posterior(&mut rng, c);
        let p_sim = random_posterior(&mut rng, c);
        let (yc, ys) = (argmax_class(&p_cls), argmax_class(&p_sim));
        if yc == ys {
            continue;
        }
        let alpha: f64 = rng.random();
        let fused = fuse(&p_cls, &p_sim, alpha).unwrap();
        let lhs = (1.0 - alpha) * (p_sim.get(ys) - p_sim.get(yc));
        let rhs = alpha * (p_cls.get(yc) - p_cls.get(ys));
        if (lhs - rhs).abs() < 1e-12 {
            continue;
        }
        assert_eq!(fused.get(ys) > fused.get(yc), lhs > rhs, "alpha {alpha}, {p_cls:?} vs {p_sim:?}");
        checked += 1;
    }
}

#[test]
fn sandwich_on_random_banks() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    for _ in 0..2000 {
        let d = rng.random_range(2..=6);
        let kappa = rng.random_range(0.1..100.0);
        let protos: Vec<Vec<UnitEmbedding>> = (0..rng.random_range(2..=4))
            .map(|_| (0..rng.random_range(1..=5)).map(|_| random_unit(&mut rng, d)).collect())
            .collect();
        let bank = PrototypeBank::new(protos.clone(), kappa, 0.1, 0).unwrap();
        let z = random_unit(&mut rng, d);
        let q = vmf_class_scores(&z, &bank).unwrap().per_class;
        for (c, class) in protos.iter().enumerate() {
            let best = class.iter().map(|p| p.dot(&z)).fold(f64::NEG_INFINITY, f64::max);
            assert!(q[c] >= kappa * best - 1e-9);
            assert!(q[c] <= kappa * best + (class.len() as f64).ln() + 1e-9);
        }
    }
}

#[test]
fn balanced_labels_make_accuracy_and_balanced_accuracy_agree() {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    for _ in 0..200 {
        let c = rng.random_range(2..=5);
        let per = rng.random_range(1..=20);
        let labels: Vec<usize> = (0..c * per).map(|i| i % c).collect();
        let preds: Vec<usize> = labels.iter().map(|_| rng.random_range(0..c)).collect();
        let a = accuracy(&preds, &labels).unwrap();
        let b = balanced_accuracy(&preds, &labels, c).unwrap();
        assert!((a - b).abs() <= 1e-12);
    }
}

#[test]
fn supcon_drops_as_positives_align() {
    let mut rng = ChaCha8Rng::seed_from_u64(15);
    for _ in 0..100 {
        let d = rng.random_range(3..=6);
        let a = random_unit(&mut rng, d).into_inner();
        let b = random_unit(&mut rng, d).into_inner();
        let other = random_unit(&mut rng, d).into_inner();
        let labels = [0, 0, 1, 1];
        let loss_at = |t: f64| {
            // the positive of `a` moves from `b` toward `a`
            let mixed: Vec<f64> = a.iter().zip(&b).map(|(x, y)| t * x + (1.0 - t) * y).collect();
            let mixed = normalize(&mixed).unwrap().into_inner();
            let z = vec![a.clone(), mixed, other.clone(), other.iter().map(|x| -x).collect()];
            supcon_loss_raw(&z, &labels, 0.5)
        };
        let (l0, l1) = (loss_at(0.2), loss_at(0.9));
        assert!(l1 <= l0 + 1e-12, "{l0} -> {l1}");
    }
}

#[test]
fn bayes_selector_dominates_within_tolerance() {
    for seed in [1, 2] {
        let s = gen_two_expert_scenario(&ScenarioConfig { seed, ..ScenarioConfig::default() }).unwrap();
        let r = bayes_dominance(&s.truth, &s.records, 0.02).unwrap();
        assert!(r.violations.is_empty(), "{r:?}");
        let bayes = r.selectors[0].expected_risk;
        assert!(r.selectors.iter().all(|x| x.expected_risk >= bayes));
    }
}

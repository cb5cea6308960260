//! Property tests over the label function, splits, selection rules and
//! bookkeeping that every experiment depends on.

use proptest::prelude::*;

use promobench::banditsel::upper_bounds;
use promobench::harness::{split, EarlyStopping, SplitEval, SplitMode, SplitSpec, StopDecision};
use promobench::modelzoo::{argmax_offer, cross_index};
use promobench::ndnum::Tensor;
use promobench::synthgen::optimal_offer;

const N_OFFERS: usize = 10;

fn vec3() -> impl Strategy<Value = [f64; 3]> {
    prop::array::uniform3(-1.0f64..1.0).prop_filter("non-degenerate", |v| {
        v.iter().map(|x| x * x).sum::<f64>().sqrt() > 1e-6
    })
}

/// Angle between `c` and `p` through atan2, independent of the crate's acos path.
fn angle(c: [f64; 3], p: [f64; 3]) -> f64 {
    let cross = [
        c[1] * p[2] - c[2] * p[1],
        c[2] * p[0] - c[0] * p[2],
        c[0] * p[1] - c[1] * p[0],
    ];
    let norm = cross.iter().map(|x| x * x).sum::<f64>().sqrt();
    let dot: f64 = c.iter().zip(&p).map(|(a, b)| a * b).sum();
    norm.atan2(dot)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(2000))]

    #[test]
    fn offer_is_symmetric(c in vec3(), p in vec3()) {
        prop_assert_eq!(optimal_offer(c, p, N_OFFERS).unwrap(), optimal_offer(p, c, N_OFFERS).unwrap());
    }

    #[test]
    fn offer_ignores_positive_scale(c in vec3(), p in vec3(), la in -6.0f64..6.0, lb in -6.0f64..6.0) {
        let (a, b) = (la.exp(), lb.exp());
        prop_assert_eq!(
            optimal_offer(c.map(|x| a * x), p.map(|x| b * x), N_OFFERS).unwrap(),
            optimal_offer(c, p, N_OFFERS).unwrap()
        );
    }

    #[test]
    fn offer_in_range(c in vec3(), p in vec3(), n in 2usize..40) {
        let o = optimal_offer(c, p, n).unwrap();
        prop_assert!((1..=n).contains(&o));
    }

    #[test]
    fn nearby_angles_give_neighbouring_offers(c in vec3(), p in vec3(), delta in -0.3f64..0.3) {
        // rotate p by delta inside the (c, p) plane
        let norm = |v: [f64; 3]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
        let ph = p.map(|x| x / norm(p));
        let along: f64 = c.iter().zip(&ph).map(|(a, b)| a * b).sum();
        let perp = [c[0] - along * ph[0], c[1] - along * ph[1], c[2] - along * ph[2]];
        prop_assume!(norm(perp) > 1e-6);
        let e = perp.map(|x| x / norm(perp));
        let p2 = [0, 1, 2].map(|i| ph[i] * delta.cos() + e[i] * delta.sin());
        let gap = (angle(c, p) - angle(c, p2)).abs();
        prop_assume!(gap < std::f64::consts::PI / N_OFFERS as f64);
        let a = optimal_offer(c, p, N_OFFERS).unwrap();
        let b = optimal_offer(c, p2, N_OFFERS).unwrap();
        prop_assert!(a.abs_diff(b) <= 1, "offers {} and {} for angle gap {}", a, b, gap);
    }

    #[test]
    fn offer_matches_angle_sector(c in vec3(), p in vec3()) {
        let sector = (angle(c, p) / std::f64::consts::PI * N_OFFERS as f64).ceil().clamp(1.0, N_OFFERS as f64) as usize;
        let o = optimal_offer(c, p, N_OFFERS).unwrap();
        // the two angle formulas may land on opposite sides of a boundary
        prop_assert!(o.abs_diff(sector) <= 1);
    }

    #[test]
    fn splits_partition_rows(n in 5usize..3000, seed: u64, sequential: bool) {
        let spec = if sequential { SplitSpec::sequential(seed) } else { SplitSpec::random(seed) };
        let s = split(n, &spec).unwrap();
        let mut seen = vec![0u8; n];
        for &i in s.train.iter().chain(&s.valid).chain(&s.test) {
            seen[i] += 1;
        }
        prop_assert!(seen.iter().all(|&c| c == 1));
        if spec.mode == SplitMode::Sequential {
            let first_test = n - s.test.len();
            prop_assert_eq!(s.test.clone(), (first_test..n).collect::<Vec<_>>());
        }
    }

    #[test]
    fn cross_index_is_a_bijection(nc in 1usize..30, nk in 1usize..30) {
        let mut hit = vec![false; nc * nk];
        for u in 0..nc {
            for k in 0..nk {
                let i = cross_index(u, k, nc, nk).unwrap();
                prop_assert!(!hit[i]);
                hit[i] = true;
            }
        }
        prop_assert!(hit.iter().all(|&h| h));
        prop_assert!(cross_index(nc, 0, nc, nk).is_err());
        prop_assert!(cross_index(0, nk, nc, nk).is_err());
    }

    #[test]
    fn upper_bounds_fall_with_rank(values in prop::collection::vec(0.0f64..1.0, 60), k in 1usize..4) {
        let passes = values.len() / k;
        let t = Tensor::new(vec![passes, k], values[..passes * k].to_vec()).unwrap();
        let mut prev = upper_bounds(&t, 1).unwrap();
        for rank in 2..=passes {
            let next = upper_bounds(&t, rank).unwrap();
            prop_assert!(prev.iter().zip(&next).all(|(a, b)| a >= b));
            prev = next;
        }
        for a in 0..k {
            let min = (0..passes).map(|j| values[j * k + a]).fold(f64::INFINITY, f64::min);
            prop_assert_eq!(prev[a], min);
        }
    }

    #[test]
    fn ucb_choice_depends_only_on_order(values in prop::collection::vec(0.0f64..1.0, 100), rank in 1usize..10, shift in -4i32..4) {
        // scaling by a power of two is exact, so it preserves every order relation
        let factor = 2f64.powi(shift);
        let k = 5;
        let t = Tensor::new(vec![20, k], values.clone()).unwrap();
        let scaled = Tensor::new(vec![20, k], values.iter().map(|v| v * factor).collect()).unwrap();
        let a = argmax_offer(&upper_bounds(&t, rank).unwrap());
        let b = argmax_offer(&upper_bounds(&scaled, rank).unwrap());
        prop_assert_eq!(a, b);
    }

    #[test]
    fn confusion_matrix_agrees_with_accuracy(pairs in prop::collection::vec((1usize..=10, 1usize..=10), 1..500)) {
        let e = SplitEval::from_pairs(10, pairs.iter().copied()).unwrap();
        let hits = pairs.iter().filter(|(t, p)| t == p).count();
        prop_assert_eq!(e.accuracy, hits as f64 / pairs.len() as f64);
        prop_assert_eq!(e.trace_accuracy(), e.accuracy);
        let near = pairs.iter().filter(|(t, p)| t.abs_diff(*p) <= 1).count();
        prop_assert_eq!(e.within_one_fraction, near as f64 / pairs.len() as f64);
        prop_assert_eq!(e.confusion.iter().flatten().sum::<usize>(), pairs.len());
    }

    #[test]
    fn early_stopping_keeps_the_best(losses in prop::collection::vec(0.0f64..10.0, 1..60), patience in 1usize..8) {
        let mut es = EarlyStopping::new(patience);
        let mut observed = Vec::new();
        for (epoch, &l) in losses.iter().enumerate() {
            observed.push(l);
            let decision = es.observe(epoch + 1, l);
            prop_assert!(observed.iter().all(|&v| es.best() <= v));
            if decision == StopDecision::Stop {
                break;
            }
        }
        let best = es.best_epoch().unwrap();
        prop_assert_eq!(observed[best - 1], es.best());
    }
}

use camofs_core::autodiff::{Tape, Vector};
use camofs_core::roi::{partition, FgBgPartition, InstanceMask, RoiFeaturePatch};
use camofs_core::triplet::{batch_triplet_loss, triplet_loss_value, TripletConfig};
use proptest::prelude::*;
use proptest::test_runner::RngSeed;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn config(cases: u32) -> ProptestConfig {
    ProptestConfig {
        cases,
        rng_seed: RngSeed::Fixed(0x7e1),
        failure_persistence: None,
        ..ProptestConfig::default()
    }
}

fn cos_dist(a: &[f64], b: &[f64]) -> f64 {
    let mut dot = 0.0;
    let mut na = 0.0;
    let mut nb = 0.0;
    for i in 0..a.len() {
        dot += a[i] * b[i];
        na += a[i] * a[i];
        nb += b[i] * b[i];
    }
    1.0 - dot / (na.sqrt() * nb.sqrt())
}

/// Scalar evaluation of the hinge over mean distances.
fn brute_force(fg: &[Vec<f64>], bg: &[Vec<f64>], margin: f64) -> f64 {
    let d = fg[0].len();
    let mut avg = vec![0.0; d];
    for f in fg {
        for i in 0..d {
            avg[i] += f[i];
        }
    }
    for a in avg.iter_mut() {
        *a /= fg.len() as f64;
    }
    let mut pos = 0.0;
    for f in fg {
        pos += cos_dist(&avg, f);
    }
    let mut neg = 0.0;
    for b in bg {
        neg += cos_dist(&avg, b);
    }
    (pos / fg.len() as f64 - neg / bg.len() as f64 + margin).max(0.0)
}

fn part(fg: &[Vec<f64>], bg: &[Vec<f64>]) -> FgBgPartition<Vector> {
    let fg: Vec<Vector> = fg.iter().map(|v| Vector::new(v.clone()).unwrap()).collect();
    let bg: Vec<Vector> = bg.iter().map(|v| Vector::new(v.clone()).unwrap()).collect();
    let avg = Vector::mean_of(&fg).unwrap();
    FgBgPartition { fg, bg, avg }
}

fn features(d: usize, n: std::ops::Range<usize>) -> impl Strategy<Value = Vec<Vec<f64>>> {
    prop::collection::vec(
        prop::collection::vec(-1.0f64..1.0, d)
            .prop_filter("non-zero", |v| v.iter().map(|x| x * x).sum::<f64>() > 1e-4),
        n,
    )
}

fn instance() -> impl Strategy<Value = (Vec<Vec<f64>>, Vec<Vec<f64>>)> {
    (2usize..=8).prop_flat_map(|d| (features(d, 1..6), features(d, 1..6)))
}

fn has_nonzero_mean(fg: &[Vec<f64>]) -> bool {
    let d = fg[0].len();
    (0..d)
        .map(|i| fg.iter().map(|v| v[i]).sum::<f64>().powi(2))
        .sum::<f64>()
        > 1e-6
}

proptest! {
    #![proptest_config(config(1000))]

    #[test]
    fn loss_is_bounded((fg, bg) in instance(), margin in 0.0f64..=2.0) {
        prop_assume!(has_nonzero_mean(&fg));
        let cfg = TripletConfig { margin };
        let l = triplet_loss_value(&part(&fg, &bg), &cfg).unwrap();
        prop_assert!(l >= 0.0);
        prop_assert!(l <= 2.0 + margin + 1e-12);
        prop_assert!((l - brute_force(&fg, &bg, margin)).abs() <= 1e-12);
    }

    #[test]
    fn loss_is_monotone_in_margin((fg, bg) in instance(), m1 in 0.0f64..=2.0, m2 in 0.0f64..=2.0) {
        prop_assume!(has_nonzero_mean(&fg));
        let (lo, hi) = if m1 <= m2 { (m1, m2) } else { (m2, m1) };
        let p = part(&fg, &bg);
        let a = triplet_loss_value(&p, &TripletConfig { margin: lo }).unwrap();
        let b = triplet_loss_value(&p, &TripletConfig { margin: hi }).unwrap();
        prop_assert!(a <= b);
    }

    #[test]
    fn loss_is_scale_invariant((fg, bg) in instance(), c in 0.01f64..100.0, margin in 0.0f64..=2.0) {
        prop_assume!(has_nonzero_mean(&fg));
        let scale = |vs: &[Vec<f64>]| -> Vec<Vec<f64>> {
            vs.iter().map(|v| v.iter().map(|x| x * c).collect()).collect()
        };
        let cfg = TripletConfig { margin };
        let a = triplet_loss_value(&part(&fg, &bg), &cfg).unwrap();
        let b = triplet_loss_value(&part(&scale(&fg), &scale(&bg)), &cfg).unwrap();
        prop_assert!((a - b).abs() <= 1e-10);
    }
}

#[test]
fn fixed_size_instance_matches_brute_force() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..100 {
        let mut draw = |n: usize| -> Vec<Vec<f64>> {
            (0..n)
                .map(|_| (0..8).map(|_| rng.random_range(-1.0..1.0)).collect())
                .collect()
        };
        let fg = draw(3);
        let bg = draw(5);
        let l = triplet_loss_value(&part(&fg, &bg), &TripletConfig::default()).unwrap();
        assert!((l - brute_force(&fg, &bg, 0.5)).abs() <= 1e-12);
    }
}

#[test]
fn batch_of_four_is_mean_of_individual_losses() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let cfg = TripletConfig { margin: 1.5 };
    let mut tape = Tape::new();
    let mut parts = Vec::new();
    let mut expected = 0.0;
    for _ in 0..4 {
        let mut draw = |n: usize| -> Vec<Vec<f64>> {
            (0..n)
                .map(|_| (0..4).map(|_| rng.random_range(-1.0..1.0)).collect())
                .collect()
        };
        let fg = draw(2);
        let bg = draw(3);
        expected += brute_force(&fg, &bg, cfg.margin) / 4.0;
        parts.push(part(&fg, &bg).to_tape(&mut tape).unwrap());
    }
    let l = batch_triplet_loss(&mut tape, &parts, &cfg).unwrap();
    assert!((tape.value(l) - expected).abs() <= 1e-12);
}

fn random_patch(rng: &mut ChaCha8Rng, c: usize, h: usize, w: usize) -> RoiFeaturePatch {
    let data = (0..c * h * w)
        .map(|_| rng.random_range(-1.0..1.0))
        .collect();
    RoiFeaturePatch::new(c, h, w, data).unwrap()
}

#[test]
fn partition_is_exhaustive_and_exclusive() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    for _ in 0..200 {
        let patch = random_patch(&mut rng, 3, 4, 5);
        let mut bits: Vec<bool> = (0..20).map(|_| rng.random_bool(0.4)).collect();
        bits[rng.random_range(0..20)] = true;
        let mask = InstanceMask::new(4, 5, bits.clone()).unwrap();
        let p = partition(&patch, &mask).unwrap();
        assert_eq!(p.fg.len() + p.bg.len(), 20);
        assert_eq!(p.fg.len(), bits.iter().filter(|&&b| b).count());
        // every location appears on exactly the side its bit says
        for h in 0..4 {
            for w in 0..5 {
                let v = patch.feature_at(h, w);
                let side = if bits[h * 5 + w] { &p.fg } else { &p.bg };
                assert!(side.contains(&v));
            }
        }
        // accumulate-and-divide oracle for the anchor
        let n = p.fg.len() as f64;
        for k in 0..3 {
            let mut acc = 0.0;
            for h in 0..4 {
                for w in 0..5 {
                    if bits[h * 5 + w] {
                        acc += patch.feature_at(h, w).as_slice()[k];
                    }
                }
            }
            assert!((p.avg.as_slice()[k] - acc / n).abs() <= 1e-12);
        }
    }
}

#[test]
fn anchor_ignores_foreground_order() {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let fg: Vec<Vector> = (0..6)
        .map(|_| Vector::new((0..4).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap())
        .collect();
    let mut rev = fg.clone();
    rev.reverse();
    let a = Vector::mean_of(&fg).unwrap();
    let b = Vector::mean_of(&rev).unwrap();
    for (x, y) in a.as_slice().iter().zip(b.as_slice()) {
        assert!((x - y).abs() <= 1e-12);
    }
}

#[test]
fn constant_patch_anchor_is_the_constant() {
    let v = Vector::new(vec![0.3, -1.2, 2.0]).unwrap();
    let locs = vec![v.clone(); 9];
    let patch = RoiFeaturePatch::from_locations(3, 3, &locs).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(15);
    for _ in 0..20 {
        let mut bits: Vec<bool> = (0..9).map(|_| rng.random_bool(0.5)).collect();
        bits[0] = true;
        let p = partition(&patch, &InstanceMask::new(3, 3, bits).unwrap()).unwrap();
        for (x, y) in p.avg.as_slice().iter().zip(v.as_slice()) {
            assert!((x - y).abs() <= 1e-12);
        }
    }
}

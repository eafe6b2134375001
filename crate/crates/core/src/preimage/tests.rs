use super::*;
use crate::rng::substream;
use crate::trackdata::{synthesize_tracks, track_distance, SynthSpec};
use proptest::prelude::*;
use rand::Rng;
use std::sync::OnceLock;

fn model() -> &'static DiffusionModel {
    static MODEL: OnceLock<DiffusionModel> = OnceLock::new();
    MODEL.get_or_init(|| {
        let set = synthesize_tracks(60, &SynthSpec::default(), 21).unwrap().tracks;
        let eps = crate::pipeline::Epsilon::Quantile(0.1)
            .resolve(&set, Default::default())
            .unwrap();
        DiffusionModel::build(&set, eps, 1, 3).unwrap()
    })
}

fn sq(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn random_zeta(model: &DiffusionModel, seed: u64) -> EmbeddedPoint {
    let mut rng = substream(seed, 0);
    let emb = model.embed();
    let (i, j) = (rng.random_range(0..emb.len()), rng.random_range(0..emb.len()));
    let u: f64 = rng.random();
    EmbeddedPoint(
        emb[i]
            .0
            .iter()
            .zip(&emb[j].0)
            .map(|(a, b)| u * a + (1.0 - u) * b + rng.random_range(-0.01..0.01))
            .collect(),
    )
}

fn line(id: &str, y: f64, p: usize) -> RegularTrack {
    RegularTrack::new(id, (0..p).map(|k| [k as f64, y + 0.1 * k as f64]).collect())
}

#[test]
fn single_track_gets_all_weight() {
    let w = softmax_weights(&[0.3, -2.0], &[5.0, 7.0], 2, 0.5).unwrap();
    assert_eq!(w, vec![1.0]);
    let w = softmax_weights(&[0.3, -2.0], &[5.0, 7.0], 2, 0.0).unwrap();
    assert_eq!(w, vec![1.0]);
}

#[test]
fn small_sigma_concentrates_on_exact_match() {
    let m = model();
    let emb = m.embed();
    let i = 17;
    let nearest = (0..emb.len())
        .filter(|&j| j != i)
        .map(|j| emb[i].sq_distance(emb[j].coords()))
        .fold(f64::INFINITY, f64::min);
    let mut prev = 0.0;
    for scale in [1.0, 0.1, 1e-2, 1e-3] {
        let w = weights(&emb[i], m, nearest * scale).unwrap();
        assert!(w[i] >= prev);
        prev = w[i];
    }
    assert!(prev > 1.0 - 1e-6);
}

#[test]
fn weights_match_direct_formula() {
    let m = model();
    let emb = m.embed();
    let mut d: Vec<f64> = Vec::new();
    for i in 0..emb.len() {
        for j in (i + 1)..emb.len() {
            d.push(emb[i].sq_distance(emb[j].coords()));
        }
    }
    let sigma = crate::stats::quantile(&d, 0.5);
    for seed in 0..5 {
        let zeta = random_zeta(m, seed);
        let w = weights(&zeta, m, sigma).unwrap();
        let raw: Vec<f64> = emb.iter().map(|e| (-sq(&zeta.0, &e.0) / sigma).exp()).collect();
        let total: f64 = raw.iter().sum();
        for (a, b) in w.iter().zip(&raw) {
            assert!((a - b / total).abs() < 1e-12);
        }
    }
}

#[test]
fn weights_reject_bad_input() {
    let m = model();
    let zeta = EmbeddedPoint(vec![0.0; 3]);
    assert!(weights(&zeta, m, 0.0).is_err());
    assert!(weights(&zeta, m, -1.0).is_err());
    assert!(weights(&EmbeddedPoint(vec![0.0; 2]), m, 1.0).is_err());
    assert!(weights(&EmbeddedPoint(vec![f64::NAN; 3]), m, 1.0).is_err());
}

#[test]
fn combine_identity_midpoint_and_stretch() {
    let set = TrackSet::new(vec![line("A", 0.0, 5), line("B", 2.0, 5), line("C", 7.0, 5)]).unwrap();
    let one = combine(&[0.0, 1.0, 0.0], &set, 1.0, Anchor::Origination).unwrap();
    assert_eq!(one.points, set.get(1).points);

    let mid = combine(&[0.5, 0.5, 0.0], &set, 1.0, Anchor::Lysis).unwrap();
    for (a, b) in mid.points.iter().zip(&line("M", 1.0, 5).points) {
        assert!((a[0] - b[0]).abs() < 1e-12 && (a[1] - b[1]).abs() < 1e-12);
    }

    let base = combine(&[0.2, 0.3, 0.5], &set, 1.0, Anchor::Origination).unwrap();
    let long = combine(&[0.2, 0.3, 0.5], &set, 1.5, Anchor::Origination).unwrap();
    assert_eq!(long.points[0], base.points[0]);
    assert!((long.chord() - 1.5 * base.chord()).abs() < 1e-12);

    let short = combine(&[0.2, 0.3, 0.5], &set, 0.75, Anchor::Lysis).unwrap();
    assert_eq!(short.points[4], base.points[4]);
    assert!((short.chord() - 0.75 * base.chord()).abs() < 1e-12);

    assert!(combine(&[1.0, 0.0], &set, 1.0, Anchor::Lysis).is_err());
    assert!(combine(&[1.0, 0.0, 0.0], &set, 1.6, Anchor::Lysis).is_err());
}

#[test]
fn singleton_grid_performs_no_search() {
    let m = model();
    let zeta = random_zeta(m, 7);
    let sigma = 0.01;
    let r = preimage(&zeta, m, &PreimageConfig::single(sigma, 1.0, Anchor::Origination)).unwrap();
    let w = weights(&zeta, m, sigma).unwrap();
    let expected = combine(&w, m.tracks(), 1.0, Anchor::Origination).unwrap();
    for (a, b) in r.track.points.iter().zip(&expected.points) {
        assert!((a[0] - b[0]).abs() < 1e-9 && (a[1] - b[1]).abs() < 1e-9);
    }
    assert_eq!((r.sigma, r.stretch, r.anchor), (sigma, 1.0, Anchor::Origination));
}

#[test]
fn result_is_minimum_over_full_grid() {
    let m = model();
    let solver = Preimager::new(m, &PreimageConfig::default()).unwrap();
    for seed in 0..4 {
        let zeta = random_zeta(m, 100 + seed);
        let r = solver.solve(&zeta).unwrap();
        let mut best = (f64::INFINITY, 0.0, 0.0, Anchor::Origination);
        for &sigma in solver.sigmas() {
            for &stretch in &default_stretches() {
                for anchor in [Anchor::Origination, Anchor::Lysis] {
                    let obj = solver.objective(&zeta, sigma, stretch, anchor).unwrap();
                    assert!(r.objective <= obj);
                    let key = |s: f64, st: f64, a: Anchor| (s, (st - 1.0).abs(), st, a);
                    if obj < best.0 || (obj == best.0 && key(sigma, stretch, anchor) < key(best.1, best.2, best.3)) {
                        best = (obj, sigma, stretch, anchor);
                    }
                }
            }
        }
        assert_eq!(r.objective, best.0);
        assert_eq!((r.sigma, r.stretch), (best.1, best.2));
        if r.stretch != 1.0 {
            assert_eq!(r.anchor, best.3);
        }
    }
}

#[test]
fn training_point_is_reconstructed() {
    let m = model();
    let set = m.tracks();
    let solver = Preimager::new(m, &PreimageConfig::default()).unwrap();
    let mean_nn = (0..set.len())
        .map(|i| {
            (0..set.len())
                .filter(|&j| j != i)
                .map(|j| track_distance(set.get(i), set.get(j)).unwrap())
                .fold(f64::INFINITY, f64::min)
        })
        .sum::<f64>()
        / set.len() as f64;
    for i in [0, 13, 42] {
        let zeta = m.embed_index(i);
        let r = solver.solve(&zeta).unwrap();
        let own = m.nystrom_extend(set.get(i)).unwrap();
        assert!(r.objective <= zeta.sq_distance(own.coords()) + 1e-15);
        assert!(track_distance(set.get(i), &r.track).unwrap() < mean_nn);
    }
}

#[test]
fn auto_grid_starts_with_limit() {
    let solver = Preimager::new(model(), &PreimageConfig::default()).unwrap();
    let s = solver.sigmas();
    assert_eq!(s.len(), 10);
    assert_eq!(s[0], 0.0);
    assert!(s.windows(2).all(|w| w[0] < w[1]));
    assert_eq!(solver.stretches()[0], 1.0);
    assert_eq!(solver.stretches().len(), 16);
}

#[test]
fn invalid_configs_are_rejected() {
    let m = model();
    let mut c = PreimageConfig::default();
    c.stretches = vec![0.5];
    assert!(Preimager::new(m, &c).is_err());
    c = PreimageConfig::default();
    c.anchors.clear();
    assert!(Preimager::new(m, &c).is_err());
    c = PreimageConfig::default();
    c.sigmas = SigmaGrid::Fixed(vec![-1.0]);
    assert!(Preimager::new(m, &c).is_err());
    c.sigmas = SigmaGrid::Fixed(vec![]);
    assert!(Preimager::new(m, &c).is_err());
}

#[test]
fn ill_conditioned_model_propagates() {
    let a: Vec<Point> = (0..4).map(|k| [k as f64, 0.0]).collect();
    let b: Vec<Point> = (0..4).map(|k| [k as f64, 1.0]).collect();
    let tracks = (0..6)
        .map(|i| RegularTrack::new(format!("T{i}"), if i < 3 { a.clone() } else { b.clone() }))
        .collect();
    let set = TrackSet::new(tracks).unwrap();
    let model = DiffusionModel::build(&set, 4.0, 1, 2).unwrap();
    assert!(matches!(
        Preimager::new(&model, &PreimageConfig::default()),
        Err(Error::IllConditionedExtension { .. })
    ));
}

#[test]
fn parallel_sigma_search_matches_sequential() {
    let m = model();
    let seq = Preimager::new(m, &PreimageConfig::default()).unwrap();
    let par = Preimager::new(m, &PreimageConfig::default()).unwrap().with_exec(Exec::Parallel);
    for seed in 0..3 {
        let zeta = random_zeta(m, 200 + seed);
        assert_eq!(seq.solve(&zeta).unwrap(), par.solve(&zeta).unwrap());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn results_respect_simplex_and_bounds(seed in 0u64..10_000) {
        let m = model();
        let set = m.tracks();
        let zeta = random_zeta(m, seed);
        let r = preimage(&zeta, m, &PreimageConfig::default()).unwrap();
        prop_assert_eq!(r.track.len(), set.points_per_track());
        prop_assert!(r.weights.iter().all(|w| *w >= 0.0));
        prop_assert!((r.weights.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        prop_assert!(r.objective >= 0.0);

        let base = combine(&r.weights, set, 1.0, r.anchor).unwrap();
        let ratio = r.track.chord() / base.chord();
        prop_assert!((0.75 - 1e-12..=1.5 + 1e-12).contains(&ratio));

        let mut lo = [f64::INFINITY; 2];
        let mut hi = [f64::NEG_INFINITY; 2];
        for p in set.tracks().iter().flat_map(|t| &t.points) {
            for c in 0..2 {
                lo[c] = lo[c].min(p[c]);
                hi[c] = hi[c].max(p[c]);
            }
        }
        for (b, s) in base.points.iter().zip(&r.track.points) {
            for c in 0..2 {
                let w = hi[c] - lo[c];
                prop_assert!(b[c] >= lo[c] - 1e-9 && b[c] <= hi[c] + 1e-9);
                prop_assert!(s[c] >= lo[c] - 0.5 * w - 1e-9 && s[c] <= hi[c] + 0.5 * w + 1e-9);
            }
        }
    }

    #[test]
    fn weights_are_simplex(seed in 0u64..10_000, log_sigma in -8.0f64..4.0) {
        let m = model();
        let w = weights(&random_zeta(m, seed), m, 10f64.powf(log_sigma)).unwrap();
        prop_assert!(w.iter().all(|v| *v >= 0.0));
        prop_assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }
}

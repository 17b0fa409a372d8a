mod common;

use std::collections::HashMap;

use common::{rng, toy_dsp};
use proptest::prelude::*;
use ttada::augment::{
    build_augmented_batch, freq_mask, invert_reorder, replay, time_freq_mask, time_mask, time_reorder, AugmentConfig,
    AugmentParams, Strategy, Stripe,
};
use ttada::dsp::{DspConfig, MelSpectrogram};
use ttada::tensor::Tensor;

const TRIALS: u64 = 1000;

fn ones(frames: usize, bins: usize) -> MelSpectrogram {
    let dsp = DspConfig {
        mel_bins: bins,
        ..DspConfig::default()
    };
    MelSpectrogram::from_frames(Tensor::full(&[frames, bins], 1.0), dsp, "ones").unwrap()
}

fn distinct(frames: usize, bins: usize, seed: u64) -> MelSpectrogram {
    common::random_mel(&mut rng(seed), frames, &toy_dsp(bins), "probe")
}

fn check_stripes(stripes: &[Stripe], axis: usize, width_max: usize) {
    assert!((2..=24).contains(&stripes.len()), "stripe count {}", stripes.len());
    for s in stripes {
        assert!(s.width >= 2.min(axis) && s.width <= width_max.min(axis), "width {}", s.width);
        assert!(s.start + s.width <= axis);
    }
}

#[test]
fn time_mask_ranges_and_locality() {
    let cfg = AugmentConfig::default();
    let x = ones(200, 64);
    for trial in 0..TRIALS {
        let (view, params) = time_mask(&x, &cfg, &mut rng(trial)).unwrap();
        let AugmentParams::TimeMask { stripes } = params else { panic!() };
        check_stripes(&stripes, 200, 128);
        let mut zeroed_frames = 0;
        for t in 0..200 {
            let in_stripe = stripes.iter().any(|s| s.contains(t));
            let row = view.row(t);
            if in_stripe {
                assert!(row.iter().all(|&v| v == 0.0));
                zeroed_frames += 1;
            } else {
                assert!(row.iter().all(|&v| v == 1.0), "trial {trial}: frame {t} changed outside stripes");
            }
        }
        assert!(zeroed_frames <= stripes.iter().map(|s| s.width).sum::<usize>());
    }
}

#[test]
fn freq_mask_ranges_and_locality() {
    let cfg = AugmentConfig::default();
    let x = ones(200, 64);
    for trial in 0..TRIALS {
        let (view, params) = freq_mask(&x, &cfg, &mut rng(trial)).unwrap();
        let AugmentParams::FreqMask { stripes } = params else { panic!() };
        check_stripes(&stripes, 64, 32);
        for t in 0..200 {
            for f in 0..64 {
                let masked = stripes.iter().any(|s| s.contains(f));
                assert_eq!(view.get(t, f), if masked { 0.0 } else { 1.0 });
            }
        }
    }
}

#[test]
fn one_frequency_stripe_spares_half_the_bins() {
    // every (width, start) a single stripe can take on a 64-bin axis
    for width in 2..=32usize {
        for start in 0..=64 - width {
            let stripe = Stripe { start, width };
            let survivors = (0..64).filter(|&f| !stripe.contains(f)).count();
            assert!(survivors >= 32);
        }
    }
}

#[test]
fn time_freq_mask_replays_as_composition() {
    let cfg = AugmentConfig::default();
    let x = distinct(150, 40, 1);
    let ones_x = ones(150, 40);
    for trial in 0..TRIALS {
        let (view, params) = time_freq_mask(&x, &cfg, &mut rng(trial)).unwrap();
        let AugmentParams::TimeFreqMask { time, freq } = &params else { panic!() };
        check_stripes(time, 150, 128);
        check_stripes(freq, 40, 32);
        let tm = replay(x.frames(), &AugmentParams::TimeMask { stripes: time.clone() }, 0.0);
        let both = replay(&tm, &AugmentParams::FreqMask { stripes: freq.clone() }, 0.0);
        assert_eq!(view, both);

        let (mask, _) = time_freq_mask(&ones_x, &cfg, &mut rng(trial)).unwrap();
        for t in 0..150 {
            for f in 0..40 {
                let hit = time.iter().any(|s| s.contains(t)) || freq.iter().any(|s| s.contains(f));
                assert_eq!(mask.get(t, f) == 0.0, hit);
                if !hit {
                    assert_eq!(view.get(t, f), x.frames().get(t, f));
                }
            }
        }
    }
}

fn sorted_rows(t: &Tensor) -> Vec<Vec<u64>> {
    let mut rows: Vec<Vec<u64>> = (0..t.rows()).map(|r| t.row(r).iter().map(|v| v.to_bits()).collect()).collect();
    rows.sort();
    rows
}

#[test]
fn time_reorder_preserves_frames_and_inverts() {
    let cfg = AugmentConfig::default();
    let x = distinct(97, 16, 2);
    for trial in 0..TRIALS {
        let (view, params) = time_reorder(&x, &cfg, &mut rng(trial)).unwrap();
        let AugmentParams::TimeReorder { bounds, permutation } = &params else { panic!() };
        let segments = permutation.len();
        assert!((2..=8).contains(&segments));
        assert_eq!(bounds.len(), segments + 1);
        assert!(bounds.windows(2).all(|w| w[0] < w[1]));
        assert_eq!((bounds[0], bounds[segments]), (0, 97));
        let mut seen = permutation.clone();
        seen.sort_unstable();
        assert_eq!(seen, (0..segments).collect::<Vec<_>>());

        assert_eq!(sorted_rows(&view), sorted_rows(x.frames()));
        assert_eq!(&invert_reorder(&view, bounds, permutation), x.frames());
        assert_eq!(replay(x.frames(), &params, 0.0), view);
    }
}

#[test]
fn two_segment_swap() {
    let x = distinct(10, 4, 3);
    let view = replay(
        x.frames(),
        &AugmentParams::TimeReorder {
            bounds: vec![0, 6, 10],
            permutation: vec![1, 0],
        },
        0.0,
    );
    let f = 4;
    let mut want = x.frames().data()[6 * f..].to_vec();
    want.extend_from_slice(&x.frames().data()[..6 * f]);
    assert_eq!(view.data(), &want[..]);
}

#[test]
fn fifty_views_follow_round_robin_counts() {
    let batch = build_augmented_batch(&distinct(60, 16, 4), &AugmentConfig::default(), 9).unwrap();
    assert_eq!(batch.num_views(), 51);
    let mut counts: HashMap<Strategy, usize> = HashMap::new();
    for p in batch.provenance() {
        *counts.entry(p.strategy).or_default() += 1;
    }
    assert_eq!(counts[&Strategy::TimeMask], 13);
    assert_eq!(counts[&Strategy::FreqMask], 13);
    assert_eq!(counts[&Strategy::TimeFreqMask], 12);
    assert_eq!(counts[&Strategy::TimeReorder], 12);
    assert_eq!(counts[&Strategy::Original], 1);
}

#[test]
fn four_views_give_the_five_element_batch() {
    let batch = build_augmented_batch(&distinct(60, 16, 5), &AugmentConfig::default().with_views(4), 1).unwrap();
    let order: Vec<Strategy> = batch.provenance().iter().map(|p| p.strategy).collect();
    assert_eq!(
        order,
        [
            Strategy::TimeMask,
            Strategy::FreqMask,
            Strategy::TimeFreqMask,
            Strategy::TimeReorder,
            Strategy::Original
        ]
    );
}

#[test]
fn views_reproduce_in_isolation() {
    let x = distinct(80, 16, 6);
    let big = build_augmented_batch(&x, &AugmentConfig::default().with_views(20), 33).unwrap();
    for k in 1..=20 {
        let small = build_augmented_batch(&x, &AugmentConfig::default().with_views(k), 33).unwrap();
        assert_eq!(small.view_data(k - 1), big.view_data(k - 1));
        assert_eq!(small.provenance()[k - 1], big.provenance()[k - 1]);
    }
}

#[test]
fn batch_is_deterministic() {
    let x = distinct(80, 16, 7);
    let cfg = AugmentConfig::default();
    let a = build_augmented_batch(&x, &cfg, 2).unwrap();
    let b = build_augmented_batch(&x, &cfg, 2).unwrap();
    assert_eq!(a.views(), b.views());
    assert_eq!(a.provenance_digest(), b.provenance_digest());
}

#[test]
fn nonzero_fill_is_honoured() {
    let cfg = AugmentConfig {
        mask_fill: -7.5,
        ..AugmentConfig::default()
    };
    let (view, params) = time_mask(&ones(50, 8), &cfg, &mut rng(0)).unwrap();
    let AugmentParams::TimeMask { stripes } = params else { panic!() };
    let t = stripes[0].start;
    assert!(view.row(t).iter().all(|&v| v == -7.5));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn batch_law_and_replay(frames in 2usize..90, bins in 2usize..40, views in 1usize..24, seed in any::<u64>()) {
        let x = distinct(frames, bins, seed);
        let batch = build_augmented_batch(&x, &AugmentConfig::default().with_views(views), seed).unwrap();
        prop_assert_eq!(batch.num_views(), views + 1);
        prop_assert_eq!((batch.frames(), batch.mel_bins()), (frames, bins));
        let originals: Vec<usize> = batch
            .provenance()
            .iter()
            .filter(|p| p.strategy == Strategy::Original)
            .map(|p| p.index)
            .collect();
        prop_assert_eq!(originals, vec![batch.original_index()]);
        prop_assert_eq!(batch.view_data(batch.original_index()), x.frames().data());
        for (i, p) in batch.provenance().iter().enumerate() {
            prop_assert_eq!(p.index, i);
            let replayed = replay(x.frames(), &p.params, batch.mask_fill());
            prop_assert_eq!(replayed.data(), batch.view_data(i));
        }
    }
}

use std::f64::consts::PI;

use proptest::prelude::*;
use qpf_core::dataset::{read_idx_images, read_idx_labels, write_idx_images, write_idx_labels};
use qpf_core::entanglement::{image_entropy, patch_pair_entropies, EntropyAggregation};
use qpf_core::filter::{
    apply_kernel, classify_permutation, enumerate_permutations, filter_image, filter_image_with,
    Image, KernelConfig, Observable, Permutation,
};
use qpf_core::qkernel::{
    channel_probabilities, pair_entropy, pair_probabilities, prepare_pair_state, reduced_density,
    reduced_density_target, von_neumann_entropy, Angle,
};
use qpf_core::{Direction, Exec, Symmetry};

fn angle() -> impl Strategy<Value = f64> {
    prop_oneof![
        4 => 0.0..=PI,
        1 => Just(0.0),
        1 => Just(PI),
        1 => Just(PI / 2.0),
    ]
}

fn a(x: f64) -> Angle {
    Angle::new(x).unwrap()
}

fn config() -> impl Strategy<Value = KernelConfig> {
    let named = (0..3usize, any::<bool>(), any::<bool>()).prop_map(|(s, r1, r2)| {
        let d = |r: bool| if r { Direction::Reversed } else { Direction::Forward };
        KernelConfig::named(Symmetry::ALL[s]).with_directions(d(r1), d(r2))
    });
    let perm = (0..24usize).prop_map(|i| KernelConfig::permutation(enumerate_permutations()[i]));
    prop_oneof![named, perm]
}

fn image(max_half: usize) -> impl Strategy<Value = Image> {
    (1..=max_half, 1..=max_half).prop_flat_map(|(h, w)| {
        proptest::collection::vec(0u8..=255, 4 * h * w)
            .prop_map(move |bytes| Image::from_bytes(2 * w, 2 * h, &bytes).unwrap())
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(512))]

    #[test]
    fn state_is_normalized(tc in angle(), tt in angle()) {
        let s = prepare_pair_state(a(tc), a(tt));
        prop_assert!((s.norm_sqr() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn marginal_entropies_agree(tc in angle(), tt in angle()) {
        let s = prepare_pair_state(a(tc), a(tt));
        let sa = von_neumann_entropy(&reduced_density(&s));
        let sb = von_neumann_entropy(&reduced_density_target(&s));
        prop_assert!((sa - sb).abs() < 1e-12);
        prop_assert!((0.0..=1.0).contains(&sa));
    }

    #[test]
    fn zero_entropy_lines(t in angle()) {
        prop_assert!(pair_entropy(Angle::ZERO, a(t)).abs() < 1e-12);
        prop_assert!(pair_entropy(Angle::PI, a(t)).abs() < 1e-12);
        prop_assert!(pair_entropy(a(t), Angle::HALF_PI).abs() < 1e-12);
    }

    #[test]
    fn surface_mirror_symmetry(tc in angle(), tt in angle()) {
        let mirrored = (PI - tt).clamp(0.0, PI);
        prop_assert!((pair_entropy(a(tc), a(tt)) - pair_entropy(a(tc), a(mirrored))).abs() < 1e-12);
    }

    #[test]
    fn target_channel_is_symmetric(tc in angle(), tt in angle()) {
        let p = channel_probabilities(a(tc), a(tt));
        let q = channel_probabilities(a(tt), a(tc));
        prop_assert_eq!(p.target_p1, q.target_p1);
    }

    #[test]
    fn control_channel_is_local(tc in angle(), t1 in angle(), t2 in angle()) {
        let p = channel_probabilities(a(tc), a(t1));
        let q = channel_probabilities(a(tc), a(t2));
        prop_assert_eq!(p.control_p1, q.control_p1);
        prop_assert!((p.control_p1 - (tc / 2.0).sin().powi(2)).abs() < 1e-12);
    }

    #[test]
    fn channels_agree_with_amplitudes(tc in angle(), tt in angle()) {
        let p = channel_probabilities(a(tc), a(tt));
        let s = pair_probabilities(&prepare_pair_state(a(tc), a(tt)));
        prop_assert!((p.control_p1 - s.control_p1).abs() < 1e-12);
        prop_assert!((p.target_p1 - s.target_p1).abs() < 1e-12);
    }

    #[test]
    fn permutation_matches_named_equivalent(
        idx in 0..24usize,
        angles in proptest::array::uniform4(angle()),
    ) {
        let perm = enumerate_permutations()[idx];
        let explicit = KernelConfig::permutation(perm);
        let named = perm.equivalent_named(Observable::ProbOne);
        prop_assert_eq!(named.symmetry(), classify_permutation(&perm));
        let angles = angles.map(a);
        prop_assert_eq!(apply_kernel(&angles, &explicit), apply_kernel(&angles, &named));
    }

    #[test]
    fn reversal_swaps_roles_within_pairs(angles in proptest::array::uniform4(angle()), s in 0..3usize) {
        let fwd = KernelConfig::named(Symmetry::ALL[s]);
        let rev = fwd.with_directions(Direction::Reversed, Direction::Reversed);
        let (f, r) = (apply_kernel(&angles.map(a), &fwd), apply_kernel(&angles.map(a), &rev));
        for (lo, hi) in Symmetry::ALL[s].pixel_pairs() {
            // forward: lo holds the control formula, hi the mix; reversed swaps them
            prop_assert!((f[lo] - (angles[lo] / 2.0).sin().powi(2)).abs() < 1e-12);
            prop_assert!((r[hi] - (angles[hi] / 2.0).sin().powi(2)).abs() < 1e-12);
            prop_assert!((f[hi] - r[lo]).abs() < 1e-12);
        }
    }

    #[test]
    fn shape_law_and_range(img in image(8), cfg in config()) {
        let maps = filter_image(&img, &cfg).unwrap();
        prop_assert_eq!(maps.height(), img.height() / 2);
        prop_assert_eq!(maps.width(), img.width() / 2);
        prop_assert_eq!(maps.flattened().len(), img.pixels().len());
        prop_assert!(maps.flattened().iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn observables_are_related(img in image(4), cfg in config()) {
        let p = filter_image(&img, &cfg).unwrap();
        let z = filter_image(&img, &cfg.with_observable(Observable::ExpectationZ)).unwrap();
        for (pv, zv) in p.flattened().iter().zip(z.flattened()) {
            prop_assert!((zv - (1.0 - 2.0 * pv)).abs() < 1e-12);
        }
    }

    #[test]
    fn filtering_ignores_execution_mode(img in image(10), cfg in config()) {
        let seq = filter_image_with(&img, &cfg, Exec::Sequential).unwrap();
        let par = filter_image_with(&img, &cfg, Exec::Parallel).unwrap();
        prop_assert_eq!(seq, par);
    }

    #[test]
    fn pair_entropies_depend_only_on_pairing(img in image(4), idx in 0..24usize) {
        // the explicit order and its named equivalent entangle the same pixels the same way
        let perm = enumerate_permutations()[idx];
        let explicit = KernelConfig::permutation(perm);
        let named = perm.equivalent_named(Observable::ProbOne);
        let e1 = image_entropy(&img, &explicit, EntropyAggregation::PairMean).unwrap();
        let e2 = image_entropy(&img, &named, EntropyAggregation::PairMean).unwrap();
        prop_assert!((e1 - e2).abs() < 1e-12);
        let angles = [Angle::HALF_PI; 4];
        let mut x = patch_pair_entropies(&angles, &explicit);
        let mut y = patch_pair_entropies(&angles, &named);
        x.sort_by(f64::total_cmp);
        y.sort_by(f64::total_cmp);
        prop_assert_eq!(x, y);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn idx_round_trip(
        count in 1..6usize,
        half in 1..5usize,
        seed_bytes in proptest::collection::vec(0u8..=255, 400),
        gzip in any::<bool>(),
    ) {
        let side = 2 * half;
        let images: Vec<Image> = (0..count)
            .map(|i| {
                let bytes: Vec<u8> = (0..side * side)
                    .map(|k| seed_bytes[(i * 7 + k) % seed_bytes.len()])
                    .collect();
                Image::from_bytes(side, side, &bytes).unwrap()
            })
            .collect();
        let labels: Vec<u8> = (0..count as u8).collect();
        let dir = tempfile::tempdir().unwrap();
        let (ip, lp) = (dir.path().join("img"), dir.path().join("lbl"));
        write_idx_images(&ip, &images, gzip).unwrap();
        write_idx_labels(&lp, &labels, gzip).unwrap();
        let back = read_idx_images(&ip).unwrap().into_images().unwrap();
        prop_assert_eq!(back, images);
        prop_assert_eq!(read_idx_labels(&lp).unwrap(), labels);
    }
}

#[test]
fn census_is_eight_each() {
    let mut counts = [0; 3];
    for p in enumerate_permutations() {
        let s = classify_permutation(&p);
        counts[Symmetry::ALL.iter().position(|x| *x == s).unwrap()] += 1;
    }
    assert_eq!(counts, [8, 8, 8]);
    assert_eq!(enumerate_permutations()[0], Permutation::new([0, 1, 2, 3]).unwrap());
}

#[cfg(feature = "parallel")]
#[test]
fn filtering_ignores_thread_count() {
    use qpf_core::filter::filter_batch;
    let images: Vec<Image> = (0..16)
        .map(|i| {
            let bytes: Vec<u8> = (0..28 * 28).map(|k| ((k * 31 + i * 17) % 256) as u8).collect();
            Image::from_bytes(28, 28, &bytes).unwrap()
        })
        .collect();
    let cfg = KernelConfig::named(Symmetry::Diagonal);
    let run = |threads: usize| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| filter_batch(&images, &cfg, Exec::Parallel).unwrap())
    };
    let reference = filter_batch(&images, &cfg, Exec::Sequential).unwrap();
    assert_eq!(run(1), reference);
    assert_eq!(run(4), reference);
}

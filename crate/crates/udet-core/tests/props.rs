//! Property-based invariants over the file formats and metric helpers.

use proptest::prelude::*;

use udet_core::data::mhd::{read_mhd, write_mhd, MhdData, MhdVolume};
use udet_core::metrics::{binarize_map, dsc, dsc_histogram, BinaryMask};

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn mhd_round_trip_any_dims_and_values(
        nx in 1usize..12,
        ny in 1usize..12,
        nz in 1usize..4,
        wide in any::<bool>(),
        seed in any::<u64>(),
    ) {
        let n = nx * ny * nz;
        let mut state = seed;
        let mut next = || {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            state
        };
        let data = if wide {
            MhdData::I16((0..n).map(|_| next() as i16).collect())
        } else {
            MhdData::U8((0..n).map(|_| (next() % 2) as u8).collect())
        };
        let vol = MhdVolume::new((nx, ny, nz), [0.5, 0.5, 2.0], data).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("v.mhd");
        write_mhd(&vol, &path).unwrap();
        prop_assert_eq!(read_mhd(&path).unwrap(), vol);
    }

    #[test]
    fn binarize_is_idempotent_and_monotone(values in proptest::collection::vec(0.0f64..=1.0, 9)) {
        let once = binarize_map(&values, 3, 3, 0.5).unwrap();
        let again = binarize_map(
            &once.data().iter().map(|&v| v as f64).collect::<Vec<_>>(),
            3,
            3,
            0.5,
        )
        .unwrap();
        prop_assert_eq!(&once, &again);
        // raising the threshold never adds positives
        let strict = binarize_map(&values, 3, 3, 0.75).unwrap();
        prop_assert!(strict.positives() <= once.positives());
    }

    #[test]
    fn histogram_counts_partition_the_records(
        values in proptest::collection::vec(0.0f64..=1.0, 0..200),
        bins in 1usize..20,
    ) {
        let h = dsc_histogram(&values, bins).unwrap();
        prop_assert_eq!(h.len(), bins);
        prop_assert_eq!(h.iter().map(|b| b.count).sum::<usize>(), values.len());
    }

    #[test]
    fn dice_stays_in_unit_interval_and_is_symmetric(
        a in proptest::collection::vec(0u8..=1, 16),
        b in proptest::collection::vec(0u8..=1, 16),
    ) {
        let ma = BinaryMask::new(4, 4, a).unwrap();
        let mb = BinaryMask::new(4, 4, b).unwrap();
        let ab = dsc(&ma, &mb).unwrap();
        let ba = dsc(&mb, &ma).unwrap();
        prop_assert_eq!(ab, ba);
        if let Some(v) = ab.value() {
            prop_assert!((0.0..=1.0).contains(&v));
        }
    }
}

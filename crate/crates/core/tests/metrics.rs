use proptest::prelude::*;
use purs_core::metrics::{auc, coverage};

fn scored() -> impl Strategy<Value = (Vec<f64>, Vec<u8>)> {
    prop::collection::vec((-5.0f64..5.0, 0u8..2), 2..60)
        .prop_filter("both labels", |v| {
            v.iter().any(|p| p.1 == 1) && v.iter().any(|p| p.1 == 0)
        })
        .prop_map(|v| {
            // Coarse rounding creates ties.
            v.into_iter()
                .map(|(s, l)| ((s * 4.0).round() / 4.0, l))
                .unzip()
        })
}

proptest! {
    #[test]
    fn auc_survives_increasing_transforms((scores, labels) in scored()) {
        let base = auc(&scores, &labels).unwrap();
        let transforms: [fn(f64) -> f64; 3] = [
            |s| s.exp(),
            |s| s * s * s + 3.0 * s - 7.0,
            |s| 1.0 / (1.0 + (-s).exp()),
        ];
        for f in transforms {
            let moved: Vec<f64> = scores.iter().map(|&s| f(s)).collect();
            prop_assert!((auc(&moved, &labels).unwrap() - base).abs() <= 1e-12);
        }
    }

    #[test]
    fn coverage_grows_with_list_length(
        ranked in prop::collection::vec(prop::collection::vec(0usize..40, 0..15), 0..10),
    ) {
        let mut previous = 0.0;
        for k in 0..=15 {
            let lists: Vec<Vec<usize>> = ranked
                .iter()
                .map(|r| r.iter().take(k).copied().collect())
                .collect();
            let c = coverage(&lists, 40).unwrap();
            prop_assert!(c >= previous);
            previous = c;
        }
    }
}

//! `mu(2R) <= 2 mu(R)` on arbitrary square collections, exactly in Q(sqrt 2).

use num_bigint::BigInt;
use num_rational::BigRational;
use proptest::prelude::*;

use twistlab::torusgeo::{union_measure_exact, ExactRect, QSqrt2, Scalar};

fn ratio(n: i64, d: i64) -> BigRational {
    BigRational::new(BigInt::from(n), BigInt::from(d))
}

fn squares(spec: &[(i64, i64, i64)]) -> (Vec<ExactRect<QSqrt2>>, Vec<ExactRect<QSqrt2>>) {
    spec.iter()
        .map(|&(cx, cy, s)| {
            let center = [QSqrt2::rational(ratio(cx, 1000)), QSqrt2::rational(ratio(cy, 1000))];
            let h = QSqrt2::rational(ratio(s, 1000));
            let h2 = QSqrt2::new(ratio(0, 1), ratio(s, 1000));
            (
                ExactRect {
                    center: center.clone(),
                    half_widths: [h.clone(), h],
                },
                ExactRect {
                    center,
                    half_widths: [h2.clone(), h2],
                },
            )
        })
        .unzip()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn doubling_never_more_than_doubles(spec in prop::collection::vec((0i64..1000, 0i64..1000, 1i64..=353), 1..10)) {
        let (r, r2) = squares(&spec);
        let mu = union_measure_exact(&r);
        let mu2 = union_measure_exact(&r2);
        let bound = QSqrt2::rational(ratio(2, 1)).mul_s(&mu);
        prop_assert!(mu2.cmp_s(&bound).is_le(), "{:?}", spec);
    }
}

#[test]
fn nested_and_clustered_configurations() {
    // concentric, corner-hugging and chained squares
    let cases: [&[(i64, i64, i64)]; 4] = [
        &[(500, 500, 300), (500, 500, 100)],
        &[(500, 500, 200), (700, 700, 150)],
        &[(100, 100, 100), (130, 130, 100), (160, 160, 100), (190, 190, 100)],
        &[(0, 0, 50), (990, 990, 60), (20, 980, 70)],
    ];
    for spec in cases {
        let (r, r2) = squares(spec);
        let bound = QSqrt2::rational(ratio(2, 1)).mul_s(&union_measure_exact(&r));
        assert!(union_measure_exact(&r2).cmp_s(&bound).is_le(), "{spec:?}");
    }
}

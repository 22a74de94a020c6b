//! Distribution functions against values frozen from mpmath (30 digits)
//! and scipy.

#![allow(clippy::excessive_precision)]

use co3::distfit::{w2_distance, FamilyParams};
use co3::GenNormParams;

fn close(a: f64, b: f64, rel: f64) -> bool {
    (a - b).abs() <= rel * b.abs().max(1e-300)
}

#[test]
fn gennorm_cdf_matches_mpmath() {
    let cases = [
        (0.3, 0.0, 1.0, 0.7, 0.592_599_575_243_374_311_2),
        (-1.7, 0.5, 2.0, 1.3, 0.115_452_684_142_659_116_4),
        (2.5, 0.0, 1.5, 3.0, 0.999_416_215_937_994_955_9),
        (0.01, 0.0, 1.0, 0.4, 0.501_344_244_194_147_174_2),
        (-4.0, 0.0, 1.0, 1.8, 5.398_882_214_666_359_073e-7),
    ];
    for (x, mu, alpha, beta, expect) in cases {
        let got = GenNormParams::new(mu, alpha, beta).unwrap().cdf(x);
        assert!(close(got, expect, 1e-12), "F({x}; {mu}, {alpha}, {beta}) = {got}, want {expect}");
    }
}

#[test]
fn gennorm_quantile_matches_scipy() {
    let cases = [
        (0.9, 0.0, 1.0, 0.7, 3.128_619_582_290_224),
        (0.05, 0.5, 2.0, 1.3, -2.761_123_792_283_346_5),
        (0.999, 0.0, 1.0, 2.5, 1.811_625_052_372_75),
    ];
    for (q, mu, alpha, beta, expect) in cases {
        let got = GenNormParams::new(mu, alpha, beta).unwrap().quantile(q).unwrap();
        assert!(close(got, expect, 1e-10), "Q({q}) = {got}, want {expect}");
    }
}

#[test]
fn w2_matches_numpy_midpoint_rule() {
    let sample = [-1.3, 0.2, 0.7, 2.1, -0.4, 0.05, 1.1, -2.2];
    let cases = [
        (FamilyParams::GenNorm(GenNormParams::new(0.0, 1.0, 1.2).unwrap()), 0.349_623_635_345_621_8),
        (FamilyParams::Normal { mean: 0.1, std_dev: 1.3 }, 0.170_365_505_075_882_02),
        (FamilyParams::Laplace { loc: 0.0, scale: 0.9 }, 0.248_499_417_849_320_17),
    ];
    for (params, expect) in cases {
        let got = w2_distance(&sample, |q| params.quantile(q)).unwrap();
        assert!(close(got, expect, 1e-10), "{:?}: {got}, want {expect}", params.family());
    }
}

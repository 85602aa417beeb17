//! Small numerical helpers shared across modules: the standard normal
//! quantile, empirical quantiles, and numerically stable logistic terms.

use crate::error::{Error, Result};

/// Standard normal quantile, Wichura's algorithm AS 241 (PPND16).
/// Relative error below 1e-15 over (0, 1).
pub fn normal_quantile(p: f64) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::Numerical(format!(
            "normal_quantile requires p in (0,1), got {p}"
        )));
    }
    let q = p - 0.5;
    if q.abs() <= 0.425 {
        let r = 0.180625 - q * q;
        let num = (((((((2.509_080_928_730_122_7e3 * r + 3.343_057_558_358_812_8e4) * r
            + 6.726_577_092_700_870_1e4)
            * r
            + 4.592_195_393_154_987_15e4)
            * r
            + 1.373_169_376_550_946_1e4)
            * r
            + 1.971_590_950_306_551_3e3)
            * r
            + 1.331_416_678_917_843_8e2)
            * r
            + 3.387_132_872_796_366_608)
            * q;
        let den = ((((((5.226_495_278_852_545_5e3 * r + 2.872_908_573_572_194_3e4) * r
            + 3.930_789_580_009_271e4)
            * r
            + 2.121_379_430_158_659_7e4)
            * r
            + 5.394_196_021_424_751e3)
            * r
            + 6.871_870_074_920_579e2)
            * r
            + 4.231_333_070_160_091e1)
            * r
            + 1.0;
        return Ok(num / den);
    }
    let mut r = if q < 0.0 { p } else { 1.0 - p };
    r = (-r.ln()).sqrt();
    let val = if r <= 5.0 {
        r -= 1.6;
        let num = ((((((7.745_450_142_783_414e-4 * r + 2.272_384_498_926_918_4e-2) * r
            + 2.417_807_251_774_506e-1)
            * r
            + 1.270_458_252_452_368_4)
            * r
            + 3.647_848_324_763_204_5)
            * r
            + 5.769_497_221_460_691)
            * r
            + 4.630_337_846_156_546)
            * r
            + 1.423_437_110_749_683_5;
        let den = ((((((1.050_750_071_644_416_9e-9 * r + 5.475_938_084_995_345e-4) * r
            + 1.519_866_656_361_645_7e-2)
            * r
            + 1.481_039_764_274_800_8e-1)
            * r
            + 6.897_673_349_851e-1)
            * r
            + 1.676_384_830_183_803_8)
            * r
            + 2.053_191_626_637_759)
            * r
            + 1.0;
        num / den
    } else {
        r -= 5.0;
        let num = ((((((2.010_334_399_292_288_1e-7 * r + 2.711_555_568_743_487_6e-5) * r
            + 1.242_660_947_388_078_4e-3)
            * r
            + 2.653_218_952_657_612_4e-2)
            * r
            + 2.965_605_718_285_048_9e-1)
            * r
            + 1.784_826_539_917_291_3)
            * r
            + 5.463_784_911_164_114)
            * r
            + 6.657_904_643_501_103;
        let den = ((((((2.044_263_103_389_939_7e-15 * r + 1.421_511_758_316_446e-9) * r
            + 1.846_318_317_510_054_8e-6)
            * r
            + 7.868_691_311_456_133e-4)
            * r
            + 1.487_536_129_085_061_5e-2)
            * r
            + 1.369_298_809_227_358e-1)
            * r
            + 5.998_322_065_558_88e-1)
            * r
            + 1.0;
        num / den
    };
    Ok(if q < 0.0 { -val } else { val })
}

/// Empirical quantile of pre-sorted data as the order statistic of rank
/// ceil(p * n), the inverse of the right-continuous empirical CDF.
pub fn empirical_quantile(sorted: &[f64], p: f64) -> f64 {
    debug_assert!(!sorted.is_empty());
    let n = sorted.len();
    let rank = (p * n as f64).ceil() as usize;
    sorted[rank.clamp(1, n) - 1]
}

/// log(1 + e^x) without overflow.
pub fn log1pexp(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// Logistic function 1 / (1 + e^-x).
pub fn expit(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn normal_quantile_matches_reference_values() {
        // Reference quantiles to 16 significant digits (Wichura 1988 accuracy).
        let cases = [
            (0.5, 0.0),
            (0.975, 1.959963984540054),
            (0.95, 1.644853626951472),
            (0.9, 1.281551565544600),
            (0.99, 2.326347874040841),
            (0.995, 2.575829303548901),
            (0.8413447460685429, 0.9999999999999998),
            (1e-9, -5.997807015008182),
        ];
        for (p, z) in cases {
            assert_abs_diff_eq!(normal_quantile(p).unwrap(), z, epsilon = 1e-12);
        }
    }

    #[test]
    fn normal_quantile_is_antisymmetric_and_monotone() {
        let mut last = f64::NEG_INFINITY;
        for i in 1..1000 {
            let p = i as f64 / 1000.0;
            let z = normal_quantile(p).unwrap();
            assert!(z > last);
            last = z;
            assert_abs_diff_eq!(z, -normal_quantile(1.0 - p).unwrap(), epsilon = 1e-9);
        }
    }

    #[test]
    fn normal_quantile_rejects_boundary() {
        assert!(normal_quantile(0.0).is_err());
        assert!(normal_quantile(1.0).is_err());
        assert!(normal_quantile(f64::NAN).is_err());
    }

    #[test]
    fn empirical_quantile_is_order_statistic() {
        let xs: Vec<f64> = (1..=10).map(f64::from).collect();
        // rank = ceil(0.5 * 10) = 5 -> fifth order statistic.
        assert_eq!(empirical_quantile(&xs, 0.5), 5.0);
        assert_eq!(empirical_quantile(&xs, 0.95), 10.0);
        assert_eq!(empirical_quantile(&xs, 0.05), 1.0);
        assert_eq!(empirical_quantile(&xs, 0.15), 2.0);
    }

    #[test]
    fn expit_and_log1pexp_are_stable_at_extremes() {
        assert_eq!(expit(800.0), 1.0);
        assert_eq!(expit(-800.0), 0.0);
        assert_abs_diff_eq!(expit(0.0), 0.5);
        assert_abs_diff_eq!(log1pexp(-800.0), 0.0);
        assert_abs_diff_eq!(log1pexp(800.0), 800.0);
        assert_abs_diff_eq!(log1pexp(0.0), std::f64::consts::LN_2);
    }
}

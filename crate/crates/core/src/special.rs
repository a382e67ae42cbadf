//! Log-gamma and digamma for positive arguments.

use crate::scalar::Scalar;

const LANCZOS_G: f64 = 7.0;
const LANCZOS_COEF: [f64; 9] = [
    0.999_999_999_999_809_9,
    676.520_368_121_885_1,
    -1_259.139_216_722_402_8,
    771.323_428_777_653_1,
    -176.615_029_162_140_6,
    12.507_343_278_686_905,
    -0.138_571_095_265_720_12,
    9.984_369_578_019_572e-6,
    1.505_632_735_149_311_6e-7,
];

/// `ln Γ(x)` for `x > 0` via the Lanczos approximation (g = 7, n = 9),
/// with the reflection formula below 0.5.
pub fn lgamma<T: Scalar>(x: T) -> T {
    let half = T::lit(0.5);
    if x < half {
        let pi = T::lit(std::f64::consts::PI);
        return (pi / (pi * x).sin().abs()).ln() - lgamma(T::one() - x);
    }
    let x = x - T::one();
    let mut a = T::lit(LANCZOS_COEF[0]);
    let t = x + T::lit(LANCZOS_G) + half;
    for (i, &c) in LANCZOS_COEF.iter().enumerate().skip(1) {
        a += T::lit(c) / (x + T::from_usize_lossy(i));
    }
    T::lit(0.5 * (2.0 * std::f64::consts::PI).ln()) + (x + half) * t.ln() - t + a.ln()
}

/// `ψ(x) = d/dx ln Γ(x)` for `x > 0`.
pub fn digamma<T: Scalar>(x: T) -> T {
    let mut x = x;
    let mut acc = T::zero();
    let shift_to = T::lit(10.0);
    while x < shift_to {
        acc -= T::one() / x;
        x += T::one();
    }
    let inv = T::one() / x;
    let inv2 = inv * inv;
    // Bernoulli tail: 1/12, 1/120, 1/252, 1/240, 1/132
    let series = inv2
        * (T::lit(1.0 / 12.0)
            - inv2
                * (T::lit(1.0 / 120.0)
                    - inv2 * (T::lit(1.0 / 252.0) - inv2 * (T::lit(1.0 / 240.0) - inv2 * T::lit(1.0 / 132.0)))));
    acc + x.ln() - T::lit(0.5) * inv - series
}

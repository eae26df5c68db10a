//! Small dense cubic polynomials in a local time variable `s`, used for the
//! analytic extremum searches behind every safety and limit check.

/// `c[0] + c[1] s + c[2] s^2 + c[3] s^3`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Cubic(pub [f64; 4]);

impl Cubic {
    pub const ZERO: Cubic = Cubic([0.0; 4]);

    pub fn constant(c: f64) -> Self {
        Cubic([c, 0.0, 0.0, 0.0])
    }

    #[inline]
    pub fn eval(&self, s: f64) -> f64 {
        let c = &self.0;
        ((c[3] * s + c[2]) * s + c[1]) * s + c[0]
    }

    #[inline]
    pub fn deriv(&self, s: f64) -> f64 {
        let c = &self.0;
        (3.0 * c[3] * s + 2.0 * c[2]) * s + c[1]
    }

    #[inline]
    pub fn second_deriv(&self, s: f64) -> f64 {
        6.0 * self.0[3] * s + 2.0 * self.0[2]
    }

    pub fn add(&self, other: &Cubic) -> Cubic {
        let mut out = self.0;
        for (o, b) in out.iter_mut().zip(other.0.iter()) {
            *o += b;
        }
        Cubic(out)
    }

    pub fn sub(&self, other: &Cubic) -> Cubic {
        let mut out = self.0;
        for (o, b) in out.iter_mut().zip(other.0.iter()) {
            *o -= b;
        }
        Cubic(out)
    }

    pub fn scale(&self, k: f64) -> Cubic {
        Cubic(self.0.map(|c| c * k))
    }

    pub fn add_const(&self, k: f64) -> Cubic {
        let mut out = self.0;
        out[0] += k;
        Cubic(out)
    }

    /// The derivative as a cubic (top coefficient zero).
    pub fn derivative(&self) -> Cubic {
        let c = &self.0;
        Cubic([c[1], 2.0 * c[2], 3.0 * c[3], 0.0])
    }

    /// Real roots of the derivative lying strictly inside `(lo, hi)`.
    fn critical_points(&self, lo: f64, hi: f64) -> ([f64; 2], usize) {
        let a = 3.0 * self.0[3];
        let b = 2.0 * self.0[2];
        let c = self.0[1];
        let mut out = [0.0; 2];
        let mut n = 0;
        let mut push = |r: f64| {
            if r.is_finite() && r > lo && r < hi {
                out[n] = r;
                n += 1;
            }
        };
        if a == 0.0 {
            if b != 0.0 {
                push(-c / b);
            }
        } else {
            let disc = b * b - 4.0 * a * c;
            if disc >= 0.0 {
                let sq = disc.sqrt();
                let q = -0.5 * (b + b.signum() * sq);
                if q != 0.0 {
                    push(q / a);
                    push(c / q);
                } else {
                    // b == 0 and disc == 0 implies c == 0: double root at zero.
                    push(0.0);
                }
            }
        }
        (out, n)
    }

    /// Minimum over the closed interval `[lo, hi]`.
    pub fn min_on(&self, lo: f64, hi: f64) -> f64 {
        debug_assert!(lo <= hi);
        let mut m = self.eval(lo).min(self.eval(hi));
        let (roots, n) = self.critical_points(lo, hi);
        for &r in &roots[..n] {
            m = m.min(self.eval(r));
        }
        m
    }

    /// Maximum over the closed interval `[lo, hi]`.
    pub fn max_on(&self, lo: f64, hi: f64) -> f64 {
        -self.scale(-1.0).min_on(lo, hi)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sampled_min(c: &Cubic, lo: f64, hi: f64) -> f64 {
        let n = 20_000;
        (0..=n)
            .map(|i| c.eval(lo + (hi - lo) * i as f64 / n as f64))
            .fold(f64::INFINITY, f64::min)
    }

    #[test]
    fn interior_minimum_found() {
        // (s - 1)^2 (s + 2) = s^3 - 3s + 2, local min at s = 1.
        let c = Cubic([2.0, -3.0, 0.0, 1.0]);
        assert!((c.min_on(0.0, 2.0) - 0.0).abs() < 1e-15);
        assert!((c.max_on(-2.0, 0.0) - 4.0).abs() < 1e-12);
    }

    #[test]
    fn degenerate_linear_and_constant() {
        let lin = Cubic([1.0, -2.0, 0.0, 0.0]);
        assert_eq!(lin.min_on(0.0, 1.0), -1.0);
        assert_eq!(Cubic::constant(3.5).min_on(-1.0, 1.0), 3.5);
    }

    #[test]
    fn agrees_with_sampling() {
        let cases = [
            Cubic([0.3, -1.2, 0.7, -0.05]),
            Cubic([-2.0, 4.0, -3.0, 0.5]),
            Cubic([1.0, 0.0, -1e-3, 1e-6]),
        ];
        for c in cases {
            let a = c.min_on(-3.0, 7.0);
            let s = sampled_min(&c, -3.0, 7.0);
            assert!(a <= s + 1e-12);
            assert!(s - a < 1e-5, "{a} vs {s}");
        }
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn extrema_bound_dense_samples(
                c in prop::array::uniform4(-10.0f64..10.0),
                lo in -5.0f64..5.0,
                width in 0.0f64..10.0,
            ) {
                let p = Cubic(c);
                let hi = lo + width;
                let (min, max) = (p.min_on(lo, hi), p.max_on(lo, hi));
                let samples = sampled_min(&p, lo, hi);
                let scale = 1.0 + c.iter().map(|x| x.abs()).sum::<f64>() * 1e3;
                prop_assert!(min <= samples + 1e-9 * scale);
                prop_assert!(samples - min < 1e-5 * scale);
                prop_assert!(max >= p.eval(lo).max(p.eval(hi)) - 1e-9 * scale);
                prop_assert!(min <= max);
            }
        }
    }
}

//! Double-double arithmetic (~31 significant digits) for the
//! finite-difference oracle. A second-order central difference at step 1e-5
//! loses ~11 digits to cancellation; evaluating the loss in plain f64 would
//! leave only ~5 digits, too coarse to certify a 1e-5 relative tolerance.
//! These routines follow the classic error-free transformations (two_sum,
//! two_prod with FMA) and the exp/ln reductions of the QD library.

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Dd {
    pub hi: f64,
    pub lo: f64,
}

#[inline]
fn two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    let bb = s - a;
    let err = (a - (s - bb)) + (b - bb);
    (s, err)
}

#[inline]
fn quick_two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    let err = b - (s - a);
    (s, err)
}

#[inline]
fn two_prod(a: f64, b: f64) -> (f64, f64) {
    let p = a * b;
    let err = a.mul_add(b, -p);
    (p, err)
}

impl Dd {
    pub const ZERO: Dd = Dd { hi: 0.0, lo: 0.0 };
    pub const ONE: Dd = Dd { hi: 1.0, lo: 0.0 };
    /// ln 2 to double-double precision.
    const LN2: Dd = Dd {
        hi: 0.693_147_180_559_945_3,
        lo: 2.319_046_813_846_299_6e-17,
    };

    pub fn from_f64(v: f64) -> Dd {
        Dd { hi: v, lo: 0.0 }
    }

    pub fn to_f64(self) -> f64 {
        self.hi + self.lo
    }

    pub fn add(self, other: Dd) -> Dd {
        let (s1, s2) = two_sum(self.hi, other.hi);
        let (t1, t2) = two_sum(self.lo, other.lo);
        let (s1, s2) = quick_two_sum(s1, s2 + t1);
        let (hi, lo) = quick_two_sum(s1, s2 + t2);
        Dd { hi, lo }
    }

    pub fn neg(self) -> Dd {
        Dd {
            hi: -self.hi,
            lo: -self.lo,
        }
    }

    pub fn sub(self, other: Dd) -> Dd {
        self.add(other.neg())
    }

    pub fn mul(self, other: Dd) -> Dd {
        let (p1, p2) = two_prod(self.hi, other.hi);
        let p2 = p2 + self.hi * other.lo + self.lo * other.hi;
        let (hi, lo) = quick_two_sum(p1, p2);
        Dd { hi, lo }
    }

    pub fn mul_f64(self, other: f64) -> Dd {
        let (p1, p2) = two_prod(self.hi, other);
        let p2 = p2 + self.lo * other;
        let (hi, lo) = quick_two_sum(p1, p2);
        Dd { hi, lo }
    }

    pub fn div(self, other: Dd) -> Dd {
        let q1 = self.hi / other.hi;
        let r = self.sub(other.mul_f64(q1));
        let q2 = r.hi / other.hi;
        let r = r.sub(other.mul_f64(q2));
        let q3 = r.hi / other.hi;
        let (s1, s2) = quick_two_sum(q1, q2);
        Dd { hi: s1, lo: s2 }.add(Dd::from_f64(q3))
    }

    pub fn sq(self) -> Dd {
        self.mul(self)
    }

    fn ldexp(self, exp: i32) -> Dd {
        let scale = (exp as f64).exp2();
        Dd {
            hi: self.hi * scale,
            lo: self.lo * scale,
        }
    }

    /// exp to ~30 digits: reduce by ln2, scale into a tiny argument, run a
    /// short Taylor series, then square back up.
    pub fn exp(self) -> Dd {
        if self.hi > 700.0 || self.hi < -700.0 {
            panic!("dd exp argument {} out of the supported range", self.hi);
        }
        let m = (self.hi / Dd::LN2.hi + 0.5).floor();
        let reduced = self.sub(Dd::LN2.mul_f64(m));
        // scale down by 2^9 = 512
        let r = reduced.ldexp(-9);
        // exp(r) - 1 via Taylor; |r| <= ln2/1024 so ~12 terms reach 1e-35
        let mut term = r;
        let mut sum = r;
        for k in 2..=16 {
            term = term.mul(r).mul_f64(1.0 / k as f64);
            sum = sum.add(term);
            if term.hi.abs() < 1e-35 {
                break;
            }
        }
        // undo the scaling: (1+s)^2 - 1 = 2s + s^2, nine times
        let mut s = sum;
        for _ in 0..9 {
            s = s.mul_f64(2.0).add(s.sq());
        }
        s.add(Dd::ONE).ldexp(m as i32)
    }

    /// ln to ~30 digits: one Newton step on exp from the f64 seed.
    pub fn ln(self) -> Dd {
        if self.hi <= 0.0 {
            panic!("dd ln of non-positive value {}", self.hi);
        }
        let seed = self.hi.ln();
        // y1 = y0 + x * exp(-y0) - 1
        let correction = self.mul(Dd::from_f64(-seed).exp()).sub(Dd::ONE);
        Dd::from_f64(seed).add(correction)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn add_tracks_tiny_residue() {
        let a = Dd::from_f64(1.0);
        let b = Dd::from_f64(1e-25);
        let s = a.add(b);
        assert_eq!(s.hi, 1.0);
        assert_eq!(s.lo, 1e-25);
    }

    #[test]
    fn exp_matches_f64_at_f64_precision() {
        for &x in &[-5.0, -0.7, 0.0, 0.3, 1.0, 2.5, 10.0] {
            let dd = Dd::from_f64(x).exp();
            let rel = (dd.to_f64() - x.exp()).abs() / x.exp();
            assert!(rel < 1e-15, "exp({x}): {rel}");
        }
    }

    #[test]
    fn exp_ln_round_trip_beats_f64() {
        // exp then ln should return the argument to far below f64 eps
        for &x in &[0.1, 1.0, 3.7, 20.0] {
            let y = Dd::from_f64(x).exp().ln();
            let err = y.sub(Dd::from_f64(x));
            assert!(err.hi.abs() < 1e-27, "round trip at {x}: {}", err.hi);
        }
    }

    #[test]
    fn division_inverts_multiplication() {
        let a = Dd::from_f64(std::f64::consts::PI);
        let b = Dd::from_f64(std::f64::consts::E);
        let q = a.mul(b).div(b);
        let err = q.sub(a);
        assert!(err.hi.abs() < 1e-30);
    }
}

//! The half projective line: rays `[r:s]` through the origin of the
//! nonnegative quadrant.
//!
//! Every point is stored by its canonical coordinate `kappa = r / (r + s)`,
//! which maps the line homeomorphically onto `[0, 1]`. Equality, the total
//! order and the metric are all read directly off `kappa`, so two
//! representatives of the same ray (`[2:1]` and `[4:2]`) are indistinguishable.
//!
//! | point   | kappa | meaning                  |
//! |---------|-------|--------------------------|
//! | `[0:1]` | 0     | zero ratio (the minimum) |
//! | `[1:1]` | 1/2   | ratio one                |
//! | `[1:0]` | 1     | infinite ratio (the top) |

use std::cmp::Ordering;
use std::fmt;

use serde::de::{self, Visitor};
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

/// Absolute tolerance used when comparing derived `kappa` values.
pub const KAPPA_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum HplError {
    #[error("inadmissible pair ({r}, {s}): components must be finite, nonnegative and not both zero")]
    Inadmissible { r: f64, s: f64 },
    #[error("kappa coordinate {0} is outside [0, 1]")]
    KappaOutOfRange(f64),
}

/// A point `[r:s]` of the half projective line.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HplPoint {
    kappa: f64,
}

impl HplPoint {
    /// `[0:1]`
    pub const ZERO: HplPoint = HplPoint { kappa: 0.0 };
    /// `[1:1]`
    pub const ONE: HplPoint = HplPoint { kappa: 0.5 };
    /// `[1:0]`, the infinite ratio.
    pub const INFINITY: HplPoint = HplPoint { kappa: 1.0 };

    /// The ray through the admissible pair `(r, s)`.
    pub fn new(r: f64, s: f64) -> Result<Self, HplError> {
        if !(r.is_finite() && s.is_finite()) || r < 0.0 || s < 0.0 || (r == 0.0 && s == 0.0) {
            return Err(HplError::Inadmissible { r, s });
        }
        // Normalising by the larger component first keeps r + s finite and
        // makes every representative of a ray land on the same arithmetic.
        let m = r.max(s);
        let (r, s) = (r / m, s / m);
        Ok(HplPoint { kappa: r / (r + s) })
    }

    /// The point `[x:1]` for a finite ratio `x >= 0`.
    pub fn from_ratio(x: f64) -> Result<Self, HplError> {
        Self::new(x, 1.0)
    }

    pub fn from_kappa(kappa: f64) -> Result<Self, HplError> {
        if !(0.0..=1.0).contains(&kappa) {
            return Err(HplError::KappaOutOfRange(kappa));
        }
        Ok(HplPoint { kappa })
    }

    #[inline]
    pub fn kappa(self) -> f64 {
        self.kappa
    }

    /// The ray representative `(kappa, 1 - kappa)`.
    pub fn coords(self) -> (f64, f64) {
        (self.kappa, 1.0 - self.kappa)
    }

    pub fn is_infinite(self) -> bool {
        self.kappa == 1.0
    }

    /// `r / s`, or `None` for `[1:0]`.
    pub fn ratio(self) -> Option<f64> {
        if self.is_infinite() {
            None
        } else {
            Some(self.kappa / (1.0 - self.kappa))
        }
    }

    /// `|kappa(p) - kappa(q)|`
    pub fn dist(self, other: HplPoint) -> f64 {
        (self.kappa - other.kappa).abs()
    }

    /// The order of the line. Exact on the stored coordinates.
    pub fn leq(self, other: HplPoint) -> bool {
        self.kappa <= other.kappa
    }

    /// Extended logarithm `ln r - ln s`, valued in `[-inf, +inf]`.
    pub fn ln(self) -> f64 {
        if self.kappa == 0.5 {
            return 0.0;
        }
        self.kappa.ln() - (1.0 - self.kappa).ln()
    }
}

impl Eq for HplPoint {}

impl PartialOrd for HplPoint {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for HplPoint {
    fn cmp(&self, other: &Self) -> Ordering {
        // kappa is never NaN, and -0.0 cannot be constructed, so this agrees with `leq`.
        self.kappa.total_cmp(&other.kappa)
    }
}

impl fmt::Display for HplPoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.ratio() {
            Some(x) => write!(f, "{x}"),
            None => f.write_str("inf"),
        }
    }
}

/// Serializes as the `kappa` number. Deserialization also accepts the
/// string `"inf"` for `[1:0]`.
impl Serialize for HplPoint {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_f64(self.kappa)
    }
}

impl<'de> Deserialize<'de> for HplPoint {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        struct KappaVisitor;

        impl Visitor<'_> for KappaVisitor {
            type Value = HplPoint;

            fn expecting(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str("a kappa value in [0, 1] or the string \"inf\"")
            }

            fn visit_f64<E: de::Error>(self, v: f64) -> Result<HplPoint, E> {
                HplPoint::from_kappa(v).map_err(E::custom)
            }

            fn visit_u64<E: de::Error>(self, v: u64) -> Result<HplPoint, E> {
                self.visit_f64(v as f64)
            }

            fn visit_i64<E: de::Error>(self, v: i64) -> Result<HplPoint, E> {
                self.visit_f64(v as f64)
            }

            fn visit_str<E: de::Error>(self, v: &str) -> Result<HplPoint, E> {
                if v == "inf" {
                    Ok(HplPoint::INFINITY)
                } else {
                    Err(E::invalid_value(de::Unexpected::Str(v), &self))
                }
            }
        }

        deserializer.deserialize_any(KappaVisitor)
    }
}

/// Ratio form used in CLI tables: `r/s` as a JSON number, `"inf"` for `[1:0]`.
pub fn ratio_json(p: HplPoint) -> serde_json::Value {
    match p.ratio() {
        Some(x) => serde_json::json!(x),
        None => serde_json::json!("inf"),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn pt(r: f64, s: f64) -> HplPoint {
        HplPoint::new(r, s).unwrap()
    }

    #[test]
    fn construction_examples() {
        assert_eq!(pt(1.0, 1.0).kappa(), 0.5);
        assert_eq!(pt(1.0, 0.0).kappa(), 1.0);
        assert_eq!(pt(3.0, 1.0).kappa(), 0.75);
        assert_eq!(pt(0.0, 5.0), HplPoint::ZERO);
        assert_eq!(pt(7.0, 0.0), HplPoint::INFINITY);
    }

    #[test]
    fn rejects_inadmissible_pairs() {
        for (r, s) in [
            (0.0, 0.0),
            (-1.0, 1.0),
            (1.0, -0.5),
            (f64::NAN, 1.0),
            (1.0, f64::INFINITY),
        ] {
            assert!(matches!(HplPoint::new(r, s), Err(HplError::Inadmissible { .. })));
        }
        assert!(HplPoint::from_kappa(1.5).is_err());
        assert!(HplPoint::from_kappa(f64::NAN).is_err());
    }

    #[test]
    fn huge_components_do_not_overflow() {
        let p = pt(f64::MAX, f64::MAX);
        assert_eq!(p, HplPoint::ONE);
    }

    #[test]
    fn dist_examples() {
        assert_eq!(HplPoint::INFINITY.dist(HplPoint::ZERO), 1.0);
        let p = pt(2.0, 5.0);
        assert_eq!(p.dist(p), 0.0);
        assert!((pt(2.0, 1.0).dist(pt(1.0, 2.0)) - 1.0 / 3.0).abs() < KAPPA_TOL);
    }

    #[test]
    fn order_examples() {
        // cross product 1*1 - 1*2 = -1 <= 0
        assert!(pt(1.0, 2.0).leq(pt(1.0, 1.0)));
        assert!(HplPoint::INFINITY.leq(HplPoint::INFINITY));
        assert!(!HplPoint::INFINITY.leq(pt(1e9, 1.0)));
        let p = pt(0.3, 0.9);
        assert!(p.leq(p));
        assert!(HplPoint::ZERO < HplPoint::ONE && HplPoint::ONE < HplPoint::INFINITY);
    }

    #[test]
    fn log_examples() {
        assert_eq!(HplPoint::ONE.ln(), 0.0);
        assert_eq!(pt(4.0, 4.0).ln(), 0.0);
        assert_eq!(HplPoint::INFINITY.ln(), f64::INFINITY);
        assert_eq!(HplPoint::ZERO.ln(), f64::NEG_INFINITY);
        assert!((pt(2.0, 1.0).ln() - std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn ratio_and_display() {
        assert!((pt(8.0, 1.0).ratio().unwrap() - 8.0).abs() < 1e-12);
        assert_eq!(HplPoint::INFINITY.ratio(), None);
        assert_eq!(HplPoint::INFINITY.to_string(), "inf");
        assert_eq!(ratio_json(HplPoint::INFINITY), serde_json::json!("inf"));
    }

    #[test]
    fn serde_forms() {
        let p = pt(3.0, 1.0);
        assert_eq!(serde_json::to_string(&p).unwrap(), "0.75");
        let back: HplPoint = serde_json::from_str("0.75").unwrap();
        assert_eq!(back, p);
        let inf: HplPoint = serde_json::from_str("\"inf\"").unwrap();
        assert_eq!(inf, HplPoint::INFINITY);
        let one: HplPoint = serde_json::from_str("1").unwrap();
        assert_eq!(one, HplPoint::INFINITY);
        assert!(serde_json::from_str::<HplPoint>("2.5").is_err());
        assert!(serde_json::from_str::<HplPoint>("\"nan\"").is_err());
    }

    fn component() -> impl Strategy<Value = f64> {
        prop_oneof![Just(0.0), 1e-6..1e6f64]
    }

    fn point() -> impl Strategy<Value = HplPoint> {
        (component(), component())
            .prop_filter("admissible", |(r, s)| *r > 0.0 || *s > 0.0)
            .prop_map(|(r, s)| pt(r, s))
    }

    proptest! {
        #[test]
        fn metric_axioms(p in point(), q in point(), w in point()) {
            prop_assert!(p.dist(q) >= 0.0);
            prop_assert_eq!(p.dist(q), q.dist(p));
            prop_assert_eq!(p.dist(p), 0.0);
            prop_assert!(p.dist(w) <= p.dist(q) + q.dist(w) + KAPPA_TOL);
            if p.dist(q) == 0.0 {
                prop_assert_eq!(p, q);
            }
        }

        #[test]
        fn order_is_total_and_matches_kappa(p in point(), q in point()) {
            prop_assert!(p.leq(q) || q.leq(p));
            prop_assert_eq!(p.leq(q), p.kappa() <= q.kappa());
            if p.leq(q) && q.leq(p) {
                prop_assert_eq!(p.dist(q), 0.0);
            }
        }

        #[test]
        fn scale_invariance(r in component(), s in component(), t in 1e-3..1e3f64) {
            prop_assume!(r > 0.0 || s > 0.0);
            let a = pt(r, s);
            let b = pt(t * r, t * s);
            prop_assert!(a.dist(b) <= KAPPA_TOL);
        }

        #[test]
        fn log_is_monotone(p in point(), q in point()) {
            if p.kappa() + KAPPA_TOL < q.kappa() {
                prop_assert!(p.ln() < q.ln());
            }
        }
    }
}

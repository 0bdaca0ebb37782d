use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

/// SLE parameter κ together with the exponents every formula shares.
///
/// `a = 2/κ` is the Loewner speed, `d = 1 + κ/8` the dimension of the
/// curve and `r = 2a` the drift coefficient of the radial angle diffusion.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "KappaRepr", into = "KappaRepr")]
pub struct SleParams {
    kappa: f64,
    a: f64,
    d: f64,
}

#[derive(Serialize, Deserialize)]
struct KappaRepr {
    kappa: f64,
}

impl TryFrom<KappaRepr> for SleParams {
    type Error = crate::SleError;
    fn try_from(k: KappaRepr) -> Result<Self> {
        SleParams::new(k.kappa)
    }
}

impl From<SleParams> for KappaRepr {
    fn from(p: SleParams) -> Self {
        KappaRepr { kappa: p.kappa }
    }
}

impl SleParams {
    pub fn new(kappa: f64) -> Result<Self> {
        if !kappa.is_finite() || kappa <= 0.0 || kappa >= 8.0 {
            return invalid(format!("kappa must lie in (0, 8), got {kappa}"));
        }
        Ok(SleParams {
            kappa,
            a: 2.0 / kappa,
            d: 1.0 + kappa / 8.0,
        })
    }

    pub fn kappa(&self) -> f64 {
        self.kappa
    }

    pub fn a(&self) -> f64 {
        self.a
    }

    pub fn d(&self) -> f64 {
        self.d
    }

    pub fn r(&self) -> f64 {
        2.0 * self.a
    }

    /// Exponent of the conformal radius in the Green's function, `d - 2 < 0`.
    pub fn radius_exponent(&self) -> f64 {
        self.d - 2.0
    }

    /// Exponent of the sine of the angle, `4a - 1 > 0`.
    pub fn angle_exponent(&self) -> f64 {
        4.0 * self.a - 1.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exponents() {
        let p = SleParams::new(8.0 / 3.0).unwrap();
        assert!((p.a() - 0.75).abs() < 1e-15);
        assert!((p.d() - 4.0 / 3.0).abs() < 1e-15);
        assert!((p.r() - 1.5).abs() < 1e-15);
        assert!((p.angle_exponent() - 2.0).abs() < 1e-15);
        assert!((p.radius_exponent() + (2.0 - p.d())).abs() < 1e-15);
    }

    #[test]
    fn rejects_out_of_range() {
        assert!(SleParams::new(8.0).is_err());
        assert!(SleParams::new(0.0).is_err());
        assert!(SleParams::new(f64::NAN).is_err());
    }

    #[test]
    fn accepted_range_bounds() {
        for k in [0.1, 1.0, 2.0, 4.0, 6.0, 7.99] {
            let p = SleParams::new(k).unwrap();
            assert!(p.a() > 0.25);
            assert!(p.d() > 1.0 && p.d() < 2.0);
        }
    }

    #[test]
    fn serde_roundtrip_validates() {
        let p = SleParams::new(2.0).unwrap();
        let s = serde_json::to_string(&p).unwrap();
        assert_eq!(s, r#"{"kappa":2.0}"#);
        let q: SleParams = serde_json::from_str(&s).unwrap();
        assert_eq!(p, q);
        assert!(serde_json::from_str::<SleParams>(r#"{"kappa":9.0}"#).is_err());
    }
}

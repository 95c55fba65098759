use crate::divergences::FDivKind;
use crate::error::{Error, Result};

/// Largest support accepted.
pub const FDIV_MAX_SUPPORT: usize = 4096;

/// `D_f(P || Q) = Σ_x q(x) f(p(x) / q(x))` on a shared finite support, with
/// `f(t) = (t - 1)^2` (χ²), `|t - 1| / 2` (TV) and `t log t` (KL).
///
/// Returns `+inf` when `P` puts mass where `Q` has none (χ², KL).
pub fn exact_f_divergence(kind: FDivKind, p: &[f64], q: &[f64]) -> Result<f64> {
    if p.len() != q.len() {
        return Err(Error::Config("distributions must share a support".into()));
    }
    if p.is_empty() {
        return Err(Error::EmptySequence("f-divergence oracle"));
    }
    if p.len() > FDIV_MAX_SUPPORT {
        return Err(Error::InstanceTooLarge {
            oracle: "fdiv-exact",
            detail: format!("support {}, limit {FDIV_MAX_SUPPORT}", p.len()),
        });
    }
    for w in [p, q] {
        let total: f64 = w.iter().sum();
        if w.iter().any(|x| !(*x >= 0.0)) || (total - 1.0).abs() > 1e-9 {
            return Err(Error::Config("inputs must be probability vectors".into()));
        }
    }
    let mut d = 0.0;
    for (&pi, &qi) in p.iter().zip(q) {
        d += match kind {
            FDivKind::Tv => 0.5 * (pi - qi).abs(),
            FDivKind::Chi2 if qi == 0.0 => {
                if pi > 0.0 {
                    return Ok(f64::INFINITY);
                }
                0.0
            }
            FDivKind::Chi2 => (pi - qi) * (pi - qi) / qi,
            FDivKind::Kl if pi == 0.0 => 0.0,
            FDivKind::Kl if qi == 0.0 => return Ok(f64::INFINITY),
            FDivKind::Kl => pi * (pi / qi).ln(),
        };
    }
    Ok(d)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_distributions_have_zero_divergence() {
        let p = [0.1, 0.2, 0.3, 0.4];
        for kind in [FDivKind::Chi2, FDivKind::Tv, FDivKind::Kl] {
            assert_eq!(exact_f_divergence(kind, &p, &p).unwrap(), 0.0);
        }
    }

    #[test]
    fn two_point_values() {
        let (p, q) = ([0.5, 0.5], [0.25, 0.75]);
        assert!((exact_f_divergence(FDivKind::Tv, &p, &q).unwrap() - 0.25).abs() < 1e-15);
        let chi2 = 0.0625 / 0.25 + 0.0625 / 0.75;
        assert!((exact_f_divergence(FDivKind::Chi2, &p, &q).unwrap() - chi2).abs() < 1e-15);
        let kl = 0.5 * (2.0f64).ln() + 0.5 * (2.0f64 / 3.0).ln();
        assert!((exact_f_divergence(FDivKind::Kl, &p, &q).unwrap() - kl).abs() < 1e-15);
    }

    #[test]
    fn missing_support_is_infinite() {
        assert!(exact_f_divergence(FDivKind::Kl, &[0.5, 0.5], &[1.0, 0.0]).unwrap().is_infinite());
        assert_eq!(exact_f_divergence(FDivKind::Tv, &[0.5, 0.5], &[1.0, 0.0]).unwrap(), 0.5);
    }
}

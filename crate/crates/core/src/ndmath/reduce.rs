use crate::error::{CpicError, Result};

/// `ln Σ exp(v_i)`, shifted by the maximum so large inputs do not overflow.
pub fn logsumexp(values: &[f64]) -> Result<f64> {
    if values.is_empty() {
        return Err(CpicError::Empty("logsumexp"));
    }
    Ok(logsumexp_unchecked(values))
}

pub(crate) fn logsumexp_unchecked(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    let sum: f64 = values.iter().map(|v| (v - max).exp()).sum();
    max + sum.ln()
}

/// Value and gradient of [`logsumexp`]; the gradient is the softmax.
pub fn logsumexp_with_grad(values: &[f64]) -> Result<(f64, Vec<f64>)> {
    let lse = logsumexp(values)?;
    Ok((lse, values.iter().map(|v| (v - lse).exp()).collect()))
}

pub fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x + (-x).exp()
    } else {
        x.exp().ln_1p()
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Inverse of [`softplus`] for positive `y`.
pub fn softplus_inv(y: f64) -> f64 {
    assert!(y > 0.0, "softplus_inv needs a positive argument");
    if y > 30.0 {
        y + (-(-y).exp_m1()).ln()
    } else {
        y.exp_m1().ln()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn lse_examples() {
        assert!((logsumexp(&[0.0, 0.0]).unwrap() - 2f64.ln()).abs() < 1e-15);
        assert!((logsumexp(&[1000.0, 1000.0]).unwrap() - (1000.0 + 2f64.ln())).abs() < 1e-12);
        assert!(logsumexp(&[]).is_err());
    }

    #[test]
    fn lse_matches_direct_evaluation() {
        let v = [0.3, -1.2, 0.7, 2.1, -0.4, 1.5, 0.0, -2.2, 0.9, 1.1];
        let direct = v.iter().map(|x: &f64| x.exp()).sum::<f64>().ln();
        assert!((logsumexp(&v).unwrap() - direct).abs() < 1e-12);
    }

    #[test]
    fn lse_gradient_is_softmax() {
        let v = [0.5, -0.25, 2.0];
        let (_, g) = logsumexp_with_grad(&v).unwrap();
        assert!((g.iter().sum::<f64>() - 1.0).abs() < 1e-14);
        let h = 1e-6;
        for k in 0..3 {
            let mut p = v;
            p[k] += h;
            let mut m = v;
            m[k] -= h;
            let fd = (logsumexp(&p).unwrap() - logsumexp(&m).unwrap()) / (2.0 * h);
            assert!((fd - g[k]).abs() < 1e-8);
        }
    }

    #[test]
    fn softplus_round_trip() {
        for y in [1e-3, 0.1, 0.6931, 5.0, 40.0] {
            assert!((softplus(softplus_inv(y)) - y).abs() < 1e-10 * y.max(1.0));
        }
        assert!((softplus(0.0) - 2f64.ln()).abs() < 1e-15);
    }

    proptest! {
        #[test]
        fn lse_shift_invariance(v in prop::collection::vec(-50.0f64..50.0, 1..20), c in -500.0f64..500.0) {
            let shifted: Vec<f64> = v.iter().map(|x| x + c).collect();
            let a = logsumexp(&v).unwrap() + c;
            let b = logsumexp(&shifted).unwrap();
            prop_assert!((a - b).abs() <= 1e-12 * (1.0 + a.abs()));
        }
    }
}

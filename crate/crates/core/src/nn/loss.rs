use crate::error::{Error, Result};
use crate::tensor::{Matrix, Real};

/// Probabilities are clamped to `[BCE_CLAMP, 1 - BCE_CLAMP]` before the log.
pub const BCE_CLAMP: f64 = 1e-7;

/// Mean binary cross-entropy over all `B·C` entries and its gradient
/// w.r.t. the probabilities. Entries that hit the clamp get zero gradient.
pub fn bce_loss<T: Real>(p: &Matrix<T>, y: &Matrix<T>) -> Result<(f64, Matrix<T>)> {
    y.ensure_shape("bce targets", p.shape())?;
    let n = p.data().len();
    if n == 0 {
        return Err(Error::ShapeMismatch {
            what: "bce input",
            expected: (1, 1),
            found: p.shape(),
        });
    }
    let lo = BCE_CLAMP;
    let hi = 1.0 - BCE_CLAMP;
    let scale = 1.0 / n as f64;
    let mut loss = 0.0;
    let mut grad = Matrix::zeros(p.rows(), p.cols());
    for ((g, &pv), &yv) in grad.data_mut().iter_mut().zip(p.data()).zip(y.data()) {
        let raw = pv.as_f64();
        let pc = raw.clamp(lo, hi);
        let yv = yv.as_f64();
        loss -= yv * libm::log(pc) + (1.0 - yv) * libm::log(1.0 - pc);
        if raw > lo && raw < hi {
            *g = T::lit(-(yv / pc - (1.0 - yv) / (1.0 - pc)) * scale);
        }
    }
    Ok((loss * scale, grad))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m(v: &[f64]) -> Matrix<f64> {
        Matrix::new(1, v.len(), v.to_vec()).unwrap()
    }

    #[test]
    fn analytic_cases() {
        let (l, _) = bce_loss(&m(&[0.5]), &m(&[1.0])).unwrap();
        assert!((l - core::f64::consts::LN_2).abs() < 1e-12);
        let (l, _) = bce_loss(&m(&[0.9, 0.1]), &m(&[1.0, 0.0])).unwrap();
        assert!((l - 0.105_360_515_657_826_3).abs() < 1e-12);
        let (l, g) = bce_loss(&m(&[0.5; 4]), &m(&[0.5; 4])).unwrap();
        assert!((l - core::f64::consts::LN_2).abs() < 1e-12);
        assert!(g.data().iter().all(|&v| v.abs() < 1e-15));
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let p = [0.2, 0.7, 0.45, 0.9];
        let y = [0.0, 1.0, 0.3, 0.8];
        let (_, g) = bce_loss(&m(&p), &m(&y)).unwrap();
        let h = 1e-6;
        for i in 0..p.len() {
            let mut up = p;
            up[i] += h;
            let mut dn = p;
            dn[i] -= h;
            let fd = (bce_loss(&m(&up), &m(&y)).unwrap().0 - bce_loss(&m(&dn), &m(&y)).unwrap().0) / (2.0 * h);
            assert!((fd - g.data()[i]).abs() / fd.abs().max(1e-8) < 1e-6);
        }
    }

    #[test]
    fn clamped_extremes_stay_finite() {
        let (l, g) = bce_loss(&m(&[0.0, 1.0]), &m(&[0.0, 1.0])).unwrap();
        assert!((0.0..1e-6).contains(&l));
        assert!(g.data().iter().all(|v| *v == 0.0));
        let (l, _) = bce_loss(&m(&[0.0]), &m(&[1.0])).unwrap();
        assert!(l.is_finite() && l > 10.0);
    }

    #[test]
    fn shape_mismatch() {
        assert!(bce_loss(&m(&[0.5]), &m(&[0.5, 0.5])).is_err());
    }
}

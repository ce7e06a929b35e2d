use super::{Real, Tensor};
use crate::{Error, Result};

fn check<S: Real>(pred: &Tensor<S>, target: &Tensor<S>) -> Result<()> {
    if pred.shape() != target.shape() {
        return Err(Error::shape(
            "mse_loss",
            format!("{:?}", target.shape()),
            format!("{:?}", pred.shape()),
        ));
    }
    Ok(())
}

/// Mean over all elements of the squared difference.
pub fn mse_loss<S: Real>(pred: &Tensor<S>, target: &Tensor<S>) -> Result<S> {
    check(pred, target)?;
    let sum = pred
        .data()
        .iter()
        .zip(target.data())
        .fold(S::zero(), |acc, (&p, &t)| acc + (p - t) * (p - t));
    Ok(sum / S::from_f64(pred.len() as f64))
}

/// `2 (pred − target) / n`.
pub fn mse_grad<S: Real>(pred: &Tensor<S>, target: &Tensor<S>) -> Result<Tensor<S>> {
    check(pred, target)?;
    let scale = S::from_f64(2.0 / pred.len() as f64);
    let mut grad = pred.clone();
    for (g, &t) in grad.data_mut().iter_mut().zip(target.data()) {
        *g = (*g - t) * scale;
    }
    Ok(grad)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::RngState;

    #[test]
    fn definition_cases() {
        let x = Tensor::<f64>::from_f64(&[3], &[1., -2., 4.]).unwrap();
        assert_eq!(mse_loss(&x, &x).unwrap(), 0.0);
        let a = Tensor::<f64>::from_f64(&[1], &[2.]).unwrap();
        let b = Tensor::<f64>::from_f64(&[1], &[0.]).unwrap();
        assert_eq!(mse_loss(&a, &b).unwrap(), 4.0);
        assert!(mse_loss(&x, &a).is_err());
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = RngState::new(1);
        let n = 12;
        let pred = Tensor::<f64>::from_vec(&[3, 4], (0..n).map(|_| rng.normal()).collect()).unwrap();
        let target = Tensor::<f64>::from_vec(&[3, 4], (0..n).map(|_| rng.normal()).collect()).unwrap();
        let g = mse_grad(&pred, &target).unwrap();
        let h = 1e-5;
        for i in 0..n {
            let mut p = pred.clone();
            p.data_mut()[i] += h;
            let mut m = pred.clone();
            m.data_mut()[i] -= h;
            let num = (mse_loss(&p, &target).unwrap() - mse_loss(&m, &target).unwrap()) / (2.0 * h);
            let rel = (num - g.data()[i]).abs() / num.abs().max(g.data()[i].abs()).max(1e-8);
            assert!(rel < 1e-7, "{rel}");
        }
    }
}

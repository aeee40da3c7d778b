//! Training objectives and point metrics.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

fn check_same(op: &'static str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::dim(op, a.shape(), b.shape()));
    }
    Ok(())
}

/// Mean squared error over all elements.
pub fn mse_loss(pred: &Tensor, target: &Tensor) -> Result<f64> {
    check_same("mse", pred, target)?;
    let n = pred.len() as f64;
    Ok(pred
        .data()
        .iter()
        .zip(target.data())
        .map(|(p, t)| (p - t) * (p - t))
        .sum::<f64>()
        / n)
}

/// Mean absolute error over all elements.
pub fn mae_metric(pred: &Tensor, target: &Tensor) -> Result<f64> {
    check_same("mae", pred, target)?;
    let n = pred.len() as f64;
    Ok(pred
        .data()
        .iter()
        .zip(target.data())
        .map(|(p, t)| (p - t).abs())
        .sum::<f64>()
        / n)
}

/// Mean NB negative log-likelihood; see [`nb`] for the parameterization.
pub fn nb_nll_loss(mu: &Tensor, alpha: &Tensor, y: &Tensor) -> Result<f64> {
    nb::mean_nll(mu, alpha, y)
}

/// Negative binomial in mean/dispersion form: mean `mu`, variance `mu + alpha * mu^2`.
pub mod nb {
    use statrs::function::gamma::{digamma, ln_gamma};

    use crate::error::{Error, Result};
    use crate::tensor::Tensor;

    /// `log P(y | mu, alpha)`.
    pub fn log_prob(y: f64, mu: f64, alpha: f64) -> f64 {
        let r = 1.0 / alpha;
        let log1p_am = (alpha * mu).ln_1p();
        ln_gamma(y + r) - ln_gamma(r) - ln_gamma(y + 1.0) - (y + r) * log1p_am + y * (alpha * mu).ln()
    }

    /// Partial derivatives of the *negative* log-likelihood wrt `(mu, alpha)`.
    pub fn nll_grad(y: f64, mu: f64, alpha: f64) -> (f64, f64) {
        let r = 1.0 / alpha;
        let denom = 1.0 + alpha * mu;
        let dmu = (y - mu) / (mu * denom);
        let dalpha =
            ((alpha * mu).ln_1p() - digamma(y + r) + digamma(r)) / (alpha * alpha) + (y - mu) / (alpha * denom);
        (-dmu, -dalpha)
    }

    fn validate(mu: &Tensor, alpha: &Tensor, y: &Tensor) -> Result<()> {
        if mu.shape() != alpha.shape() || mu.shape() != y.shape() {
            return Err(Error::dim("nb_nll", mu.shape(), y.shape()));
        }
        if let Some(bad) = mu.data().iter().chain(alpha.data()).find(|v| !(**v > 0.0)) {
            return Err(Error::Domain(format!(
                "negative binomial parameters must be positive, got {bad}"
            )));
        }
        if let Some(bad) = y.data().iter().find(|v| !(**v >= 0.0) || v.fract() != 0.0) {
            return Err(Error::Domain(format!(
                "negative binomial targets must be nonnegative integers, got {bad}"
            )));
        }
        Ok(())
    }

    pub fn mean_nll(mu: &Tensor, alpha: &Tensor, y: &Tensor) -> Result<f64> {
        validate(mu, alpha, y)?;
        let n = y.len() as f64;
        let total: f64 = y
            .data()
            .iter()
            .zip(mu.data().iter().zip(alpha.data()))
            .map(|(&yv, (&m, &a))| -log_prob(yv, m, a))
            .sum();
        Ok(total / n)
    }

    pub(crate) fn mean_nll_grad(mu: &Tensor, alpha: &Tensor, y: &Tensor) -> Result<(Tensor, Tensor)> {
        validate(mu, alpha, y)?;
        let n = y.len() as f64;
        let mut gmu = Vec::with_capacity(y.len());
        let mut galpha = Vec::with_capacity(y.len());
        for (&yv, (&m, &a)) in y.data().iter().zip(mu.data().iter().zip(alpha.data())) {
            let (dm, da) = nll_grad(yv, m, a);
            gmu.push(dm / n);
            galpha.push(da / n);
        }
        Ok((Tensor::new(mu.shape(), gmu)?, Tensor::new(mu.shape(), galpha)?))
    }
}

#[cfg(test)]
mod tests {
    use statrs::function::gamma::ln_gamma;

    use super::*;
    use crate::autodiff::grad_check;
    use crate::rng::SeededRng;

    fn t(v: &[f64]) -> Tensor {
        Tensor::new(&[v.len()], v.to_vec()).unwrap()
    }

    #[test]
    fn point_metrics() {
        let p = t(&[1.0, 2.0]);
        assert_eq!(mse_loss(&p, &p).unwrap(), 0.0);
        assert_eq!(mse_loss(&p, &t(&[1.0, 4.0])).unwrap(), 2.0);
        assert_eq!(mae_metric(&p, &t(&[1.0, 4.0])).unwrap(), 1.0);
        assert!(mse_loss(&p, &t(&[1.0])).is_err());
    }

    #[test]
    fn point_metrics_loop_oracle() {
        let mut rng = SeededRng::new(1);
        let a = Tensor::random_normal(&[3, 4, 2], &mut rng).unwrap();
        let b = Tensor::random_normal(&[3, 4, 2], &mut rng).unwrap();
        let (mut se, mut ae) = (0.0, 0.0);
        for i in 0..a.len() {
            let d = a.data()[i] - b.data()[i];
            se += d * d;
            ae += d.abs();
        }
        assert!((mse_loss(&a, &b).unwrap() - se / 24.0).abs() < 1e-12);
        assert!((mae_metric(&a, &b).unwrap() - ae / 24.0).abs() < 1e-12);
    }

    #[test]
    fn nb_pmf_sums_to_one() {
        let (mu, alpha) = (3.5, 0.4);
        let total: f64 = (0..400).map(|y| nb::log_prob(y as f64, mu, alpha).exp()).sum();
        assert!((total - 1.0).abs() < 1e-10, "{total}");
        let mean: f64 = (0..400)
            .map(|y| y as f64 * nb::log_prob(y as f64, mu, alpha).exp())
            .sum();
        assert!((mean - mu).abs() < 1e-9);
    }

    #[test]
    fn poisson_limit() {
        for &mu in &[20.0, 50.0, 200.0] {
            let y: f64 = mu;
            let poisson_nll = mu - y * mu.ln() + ln_gamma(y + 1.0);
            let nb_nll = nb_nll_loss(&t(&[mu]), &t(&[1e-6]), &t(&[y])).unwrap();
            assert!(
                (nb_nll - poisson_nll).abs() < 1e-3,
                "mu={mu}: {nb_nll} vs {poisson_nll}"
            );
        }
    }

    #[test]
    fn nb_gradient_matches_finite_differences() {
        let y = t(&[0.0, 3.0, 7.0, 12.0]);
        let params = vec![t(&[0.8, 2.5, 6.0, 15.0]), t(&[0.3, 1.2, 0.05, 0.6])];
        let err = grad_check(|tape, p| tape.nb_nll(p[0], p[1], y.clone()), &params, 1e-5).unwrap();
        assert!(err < 1e-4, "{err}");
    }

    #[test]
    fn domain_errors() {
        assert!(matches!(
            nb_nll_loss(&t(&[0.0]), &t(&[1.0]), &t(&[1.0])),
            Err(Error::Domain(_))
        ));
        assert!(matches!(
            nb_nll_loss(&t(&[1.0]), &t(&[-1.0]), &t(&[1.0])),
            Err(Error::Domain(_))
        ));
        assert!(matches!(
            nb_nll_loss(&t(&[1.0]), &t(&[1.0]), &t(&[1.5])),
            Err(Error::Domain(_))
        ));
    }
}

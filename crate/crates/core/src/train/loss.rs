use crate::tensor::{Graph, Var};
use crate::{Error, Result};

/// Mean absolute error; subgradient 0 where the residual is 0.
pub fn mae_loss(g: &mut Graph, y_hat: Var, y: Var) -> Result<Var> {
    let diff = g.sub(y_hat, y)?;
    let abs = g.abs(diff)?;
    g.mean(abs)
}

/// Mean binary cross-entropy of logits against a constant target, as
/// `softplus(∓x)`.
pub fn bce_with_logits(g: &mut Graph, logits: Var, target: bool) -> Result<Var> {
    let signed = if target { g.scale(logits, -1.0)? } else { logits };
    let sp = g.softplus(signed)?;
    g.mean(sp)
}

/// The terms of the discriminator objective, each a scalar graph node.
#[derive(Clone, Copy, Debug)]
pub struct DiscriminatorLoss {
    pub total: Var,
    pub real: Var,
    pub fake: Var,
    pub regression: Option<Var>,
}

/// `bce(real, 1) + bce(fake, 0) + λ·mae(ŷ_labeled, y_labeled)`.
///
/// `labeled` may be `None` only when `lambda_reg` is zero.
pub fn discriminator_loss(
    g: &mut Graph,
    real_logits: Var,
    fake_logits: Var,
    labeled: Option<(Var, Var)>,
    lambda_reg: f64,
) -> Result<DiscriminatorLoss> {
    let real = bce_with_logits(g, real_logits, true)?;
    let fake = bce_with_logits(g, fake_logits, false)?;
    let adv = g.add(real, fake)?;
    let (total, regression) = match labeled {
        Some((y_hat, y)) => {
            let mae = mae_loss(g, y_hat, y)?;
            let weighted = g.scale(mae, lambda_reg)?;
            (g.add(adv, weighted)?, Some(mae))
        }
        None if lambda_reg > 0.0 => {
            return Err(Error::Invalid(
                "regression term needs a labeled batch when lambda_reg > 0".into(),
            ))
        }
        None => (adv, None),
    };
    Ok(DiscriminatorLoss {
        total,
        real,
        fake,
        regression,
    })
}

/// Non-saturating generator objective `bce(fake, 1)`.
pub fn generator_loss(g: &mut Graph, fake_logits: Var) -> Result<Var> {
    bce_with_logits(g, fake_logits, true)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;
    use std::f64::consts::LN_2;

    fn vec1(g: &mut Graph, v: &[f64]) -> Var {
        g.leaf(&Tensor::new([v.len()], v.to_vec()).unwrap(), true)
    }

    fn val(g: &Graph, v: Var) -> f64 {
        g.value(v).unwrap().data()[0]
    }

    #[test]
    fn mae_examples() {
        let mut g = Graph::new();
        let cases: [(&[f64], &[f64], f64); 3] = [(&[2.0, 3.0], &[2.0, 3.0], 0.0), (&[0.0], &[1.0], 1.0), (&[1.0, -1.0], &[0.0, 0.0], 1.0)];
        for (a, b, want) in cases {
            let (x, y) = (vec1(&mut g, a), vec1(&mut g, b));
            let l = mae_loss(&mut g, x, y).unwrap();
            assert_eq!(val(&g, l), want);
        }
        let (x, y) = (vec1(&mut g, &[1.0]), vec1(&mut g, &[1.0, 2.0]));
        assert!(mae_loss(&mut g, x, y).is_err());
    }

    #[test]
    fn mae_subgradient_at_zero() {
        let mut g = Graph::new();
        let (x, y) = (vec1(&mut g, &[1.0, 2.0]), vec1(&mut g, &[1.0, 0.0]));
        let l = mae_loss(&mut g, x, y).unwrap();
        g.backward(l).unwrap();
        assert_eq!(g.grad(x).unwrap().unwrap(), &[0.0, 0.5]);
    }

    #[test]
    fn bce_examples() {
        let mut g = Graph::new();
        let z = vec1(&mut g, &[0.0]);
        for t in [true, false] {
            let l = bce_with_logits(&mut g, z, t).unwrap();
            assert!((val(&g, l) - LN_2).abs() < 1e-15);
        }
        let big = vec1(&mut g, &[20.0]);
        let l = bce_with_logits(&mut g, big, true).unwrap();
        assert!(val(&g, l) < 1e-8);
        let xs = vec1(&mut g, &[-3.0, 0.5, 7.0]);
        let neg = g.scale(xs, -1.0).unwrap();
        let a = bce_with_logits(&mut g, xs, true).unwrap();
        let b = bce_with_logits(&mut g, neg, false).unwrap();
        assert_eq!(val(&g, a), val(&g, b));
        let huge = vec1(&mut g, &[-800.0, 800.0]);
        let l = bce_with_logits(&mut g, huge, true).unwrap();
        assert!((val(&g, l) - 400.0).abs() < 1e-9);
    }

    #[test]
    fn discriminator_loss_structure() {
        let mut g = Graph::new();
        let real = vec1(&mut g, &[0.3, -1.2, 2.0]);
        let fake = vec1(&mut g, &[0.7, -0.1]);
        let yh = vec1(&mut g, &[1.0, 2.5]);
        let y = vec1(&mut g, &[0.5, 4.0]);
        let l = discriminator_loss(&mut g, real, fake, Some((yh, y)), 0.7).unwrap();

        let sp = |x: f64| (1.0 + x.exp()).ln();
        let expected = (sp(-0.3) + sp(1.2) + sp(-2.0)) / 3.0 + (sp(0.7) + sp(-0.1)) / 2.0 + 0.7 * (0.5 + 1.5) / 2.0;
        assert!((val(&g, l.total) - expected).abs() < 1e-12);
        let recomposed = val(&g, l.real) + val(&g, l.fake) + 0.7 * val(&g, l.regression.unwrap());
        assert!((val(&g, l.total) - recomposed).abs() < 1e-12);

        let pure = discriminator_loss(&mut g, real, fake, Some((yh, y)), 0.0).unwrap();
        assert!((val(&g, pure.total) - val(&g, l.real) - val(&g, l.fake)).abs() < 1e-15);
        assert!(discriminator_loss(&mut g, real, fake, None, 1.0).is_err());
        assert!(discriminator_loss(&mut g, real, fake, None, 0.0).is_ok());
    }

    #[test]
    fn generator_loss_shape() {
        let mut g = Graph::new();
        let z = vec1(&mut g, &[0.0]);
        let l = generator_loss(&mut g, z).unwrap();
        assert!((val(&g, l) - LN_2).abs() < 1e-15);
        let certain_fake = vec1(&mut g, &[-20.0]);
        let l = generator_loss(&mut g, certain_fake).unwrap();
        assert!((val(&g, l) - 20.0).abs() < 1e-8);
        let mut prev = f64::INFINITY;
        for i in -40..=40 {
            let x = vec1(&mut g, &[i as f64 * 0.5]);
            let l = generator_loss(&mut g, x).unwrap();
            assert!(val(&g, l) < prev);
            prev = val(&g, l);
        }
    }
}

//! Adversarial objective: discriminator BCE, non-saturating generator term,
//! and the weighted L1 reconstruction term.

use crate::autodiff::{l1_distance, Graph, Var, LOG_EPS};
use crate::error::{Error, Result};
use crate::nn::VariantConfig;
use crate::tensor::Tensor;

/// Generator objective terms and the weights that combined them.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GeneratorLoss {
    pub gan_term: f64,
    pub l1_term: f64,
    pub lambda_gan: f64,
    pub lambda_l1: f64,
    pub total: f64,
}

impl GeneratorLoss {
    pub fn compose(gan_term: f64, l1_term: f64, cfg: &VariantConfig) -> Self {
        Self {
            gan_term,
            l1_term,
            lambda_gan: cfg.lambda_gan,
            lambda_l1: cfg.lambda_l1,
            total: cfg.lambda_gan * gan_term + cfg.lambda_l1 * l1_term,
        }
    }
}

/// Losses of one training step.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossBreakdown {
    pub d_loss_real: f64,
    pub d_loss_fake: f64,
    pub g_gan_term: f64,
    pub g_l1_term: f64,
    pub lambda_gan: f64,
    pub lambda_l1: f64,
    pub g_total: f64,
}

impl LossBreakdown {
    pub fn new(d_loss_real: f64, d_loss_fake: f64, g: GeneratorLoss) -> Self {
        Self {
            d_loss_real,
            d_loss_fake,
            g_gan_term: g.gan_term,
            g_l1_term: g.l1_term,
            lambda_gan: g.lambda_gan,
            lambda_l1: g.lambda_l1,
            g_total: g.total,
        }
    }

    pub fn d_loss(&self) -> f64 {
        self.d_loss_real + self.d_loss_fake
    }

    pub fn is_finite(&self) -> bool {
        [
            self.d_loss_real,
            self.d_loss_fake,
            self.g_gan_term,
            self.g_l1_term,
            self.g_total,
        ]
        .iter()
        .all(|v| v.is_finite())
    }
}

fn mean_neg_log(t: &Tensor, complement: bool) -> f64 {
    let s: f64 = t
        .data()
        .iter()
        .map(|&p| -(if complement { 1.0 - p } else { p }).max(LOG_EPS).ln())
        .sum();
    s / t.numel() as f64
}

/// `mean(−ln D(x,y)) + mean(−ln(1 − D(x,G(x))))`, returned as
/// `(real part, fake part)`.
pub fn discriminator_loss(d_real: &Tensor, d_fake: &Tensor) -> (f64, f64) {
    (mean_neg_log(d_real, false), mean_neg_log(d_fake, true))
}

/// Non-saturating GAN term plus weighted L1 distance to the target.
pub fn generator_loss(
    d_fake: &Tensor,
    fake: &Tensor,
    target: &Tensor,
    cfg: &VariantConfig,
) -> Result<GeneratorLoss> {
    let l1 = l1_distance(fake, target)?;
    Ok(GeneratorLoss::compose(mean_neg_log(d_fake, false), l1, cfg))
}

/// Differentiable discriminator loss; returns `(total, real, fake)` nodes.
pub fn discriminator_loss_graph(
    graph: &mut Graph,
    d_real: Var,
    d_fake: Var,
) -> Result<(Var, Var, Var)> {
    let real = graph.mean_neg_log(d_real, false);
    let fake = graph.mean_neg_log(d_fake, true);
    let total = graph.weighted_sum(&[(real, 1.0), (fake, 1.0)])?;
    Ok((total, real, fake))
}

/// Graph nodes of the generator objective.
#[derive(Clone, Copy, Debug)]
pub struct GeneratorLossVars {
    pub gan_term: Var,
    pub l1_term: Var,
    pub total: Var,
}

/// Differentiable generator objective.
pub fn generator_loss_graph(
    graph: &mut Graph,
    d_fake: Var,
    fake: Var,
    target: Var,
    cfg: &VariantConfig,
) -> Result<GeneratorLossVars> {
    if graph.value(fake).shape() != graph.value(target).shape() {
        return Err(Error::shape(
            "generator_loss",
            format!(
                "fake {:?} vs target {:?}",
                graph.value(fake).shape(),
                graph.value(target).shape()
            ),
        ));
    }
    let gan_term = graph.mean_neg_log(d_fake, false);
    let l1_term = graph.l1_mean(target, fake)?;
    let total = graph.weighted_sum(&[(gan_term, cfg.lambda_gan), (l1_term, cfg.lambda_l1)])?;
    Ok(GeneratorLossVars {
        gan_term,
        l1_term,
        total,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Variant;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn perfect_discriminator_has_zero_loss() {
        let (r, f) = discriminator_loss(
            &Tensor::full(&[1, 1, 3, 3], 1.0),
            &Tensor::zeros(&[1, 1, 3, 3]),
        );
        assert!(r.abs() < 1e-15 && f.abs() < 1e-15);
    }

    #[test]
    fn coin_flip_discriminator() {
        let half = Tensor::full(&[1, 1, 30, 30], 0.5);
        let (r, f) = discriminator_loss(&half, &half);
        assert!((r + f - 2.0 * std::f64::consts::LN_2).abs() < 1e-12);
        assert!((r + f - 1.3863).abs() < 1e-4);
    }

    #[test]
    fn saturated_inputs_stay_finite() {
        let (r, f) = discriminator_loss(&Tensor::zeros(&[4]), &Tensor::full(&[4], 1.0));
        assert!(r.is_finite() && f.is_finite());
        assert!((r - (-LOG_EPS.ln())).abs() < 1e-12);
    }

    #[test]
    fn matches_direct_log_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let a = Tensor::uniform(&[2, 1, 6, 6], 0.01, 0.99, &mut rng);
        let b = Tensor::uniform(&[2, 1, 6, 6], 0.01, 0.99, &mut rng);
        let (r, f) = discriminator_loss(&a, &b);
        let mut want_r = 0.0;
        let mut want_f = 0.0;
        for i in 0..a.numel() {
            want_r += -a.data()[i].ln();
            want_f += -(1.0 - b.data()[i]).ln();
        }
        assert!((r - want_r / 72.0).abs() < 1e-10);
        assert!((f - want_f / 72.0).abs() < 1e-10);
    }

    #[test]
    fn weighting_arithmetic() {
        let orig = GeneratorLoss::compose(0.7, 0.3, &Variant::Orig.config());
        assert!((orig.total - 30.7).abs() < 1e-12);
        let eq = GeneratorLoss::compose(0.7, 0.3, &Variant::L150Gan50.config());
        assert!((eq.total - 50.0).abs() < 1e-12);
    }

    #[test]
    fn identical_fake_and_confident_discriminator() {
        let t = Tensor::full(&[1, 1, 4, 4], 0.3);
        let g = generator_loss(
            &Tensor::full(&[1, 1, 2, 2], 1.0),
            &t,
            &t,
            &Variant::Orig.config(),
        )
        .unwrap();
        assert!(g.total.abs() < 1e-15);
    }

    #[test]
    fn l1_distance_cases() {
        let ones = Tensor::full(&[3, 3], 1.0);
        let zeros = Tensor::zeros(&[3, 3]);
        assert_eq!(l1_distance(&ones, &ones).unwrap(), 0.0);
        assert_eq!(l1_distance(&ones, &zeros).unwrap(), 1.0);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let a = Tensor::uniform(&[50], -1.0, 1.0, &mut rng);
        let b = Tensor::uniform(&[50], -1.0, 1.0, &mut rng);
        let want: f64 = (0..50)
            .map(|i| (a.data()[i] - b.data()[i]).abs())
            .sum::<f64>()
            / 50.0;
        assert!((l1_distance(&a, &b).unwrap() - want).abs() < 1e-12);
        assert_eq!(l1_distance(&a, &b).unwrap(), l1_distance(&b, &a).unwrap());
    }
}

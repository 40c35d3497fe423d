//! Loss terms: Wasserstein gradient penalty, soft-target BCE, char KL and
//! the style hinge.

use crate::autodiff::{grad, Tensor};
use crate::error::Result;
use rand::Rng;

/// Lower/upper clamp applied to BCE predictions.
pub const BCE_EPS: f64 = 1e-7;

/// `weight * mean_b (||grad_x critic(x_b)||_2 - 1)^2` at random
/// interpolates `x = u * real + (1 - u) * fake`, one `u ~ U[0, 1]` per row.
/// The result stays differentiable in the critic's parameters.
pub fn gradient_penalty(
    critic: &dyn Fn(&Tensor) -> Result<Tensor>,
    real: &Tensor,
    fake: &Tensor,
    weight: f64,
    rng: &mut impl Rng,
) -> Result<Tensor> {
    assert_eq!(real.shape(), fake.shape(), "real and fake batches differ in shape");
    let b = real.shape()[0];
    let per = real.numel() / b.max(1);
    let mut mixed = Vec::with_capacity(real.numel());
    for (r, f) in real.data().chunks(per).zip(fake.data().chunks(per)) {
        let u: f64 = rng.random();
        mixed.extend(r.iter().zip(f).map(|(a, c)| u * a + (1.0 - u) * c));
    }
    let x = Tensor::variable(mixed, real.shape());
    let score = critic(&x)?.sum();
    let g = grad(&score, &[&x], true).remove(0);
    let norm = g.reshape(&[b, per]).square().sum_rows().add_scalar(1e-12).sqrt();
    Ok(norm.add_scalar(-1.0).square().mean().scale(weight))
}

/// `-sum_i [t_i ln p_i + (1 - t_i) ln(1 - p_i)]` summed over labels and
/// averaged over rows; `p` is clamped to `[eps, 1 - eps]`.
pub fn bce_loss(target: &Tensor, prediction: &Tensor) -> Tensor {
    assert_eq!(target.shape(), prediction.shape());
    let rows = if target.shape().is_empty() { 1 } else { target.shape()[0] };
    let p = prediction.clamp(BCE_EPS, 1.0 - BCE_EPS);
    let pos = target.mul(&p.ln());
    let neg = target.affine(-1.0, 1.0).mul(&p.affine(-1.0, 1.0).ln());
    pos.add(&neg).sum().scale(-1.0 / rows as f64)
}

/// `KL(onehot || softmax(logits))`, i.e. the cross-entropy of the target
/// class, averaged over rows.
pub fn char_kl_loss(logits: &Tensor, onehot: &Tensor) -> Tensor {
    let rows = logits.shape()[0];
    onehot.mul(&logits.log_softmax()).sum().scale(-1.0 / rows as f64)
}

/// Two-class hinge: consistent scores pushed above 1, inconsistent below -1.
pub fn style_hinge(consistent: &Tensor, inconsistent: &Tensor) -> Tensor {
    let pos = consistent.affine(-1.0, 1.0).relu().mean();
    let neg = inconsistent.add_scalar(1.0).relu().mean();
    pos.add(&neg)
}

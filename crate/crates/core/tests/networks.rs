use glyphgen::autodiff::{grad, Tensor};
use glyphgen::nets::{one_hot_chars, ConditionBundle, Ilsc, ModelConfig, Networks, ProgressiveStage};
use glyphgen::nn::{Adam, AdamConfig, ParamStore};
use glyphgen::training::bce_loss;
use glyphgen::util::{normal_vec, rng_for};

fn small(k: usize) -> ModelConfig {
    ModelConfig {
        num_labels: k,
        z_dim: 4,
        embed_dim: 5,
        ilsc_dim: 2,
        channels: vec![4, 4, 3],
        max_stage: 2,
        style_refs: 4,
        style_resolution: 8,
        style_channels: 2,
        style_features: 3,
        impression_input: true,
    }
}

#[test]
fn ilsc_with_full_width_reconstructs() {
    let mut store = ParamStore::new();
    let ilsc = Ilsc::new(&mut store, 4, 4, &mut rng_for(1, &[])).unwrap();
    let mut rng = rng_for(2, &[]);
    let targets: Vec<f64> = normal_vec(&mut rng, 32).iter().map(|v| 0.5 + 0.15 * v.clamp(-2.0, 2.0)).collect();
    let y = Tensor::new(targets.clone(), &[8, 4]);
    let mut opt = Adam::new(
        AdamConfig {
            lr: 0.01,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        },
        &store,
    );
    let mut mse = f64::INFINITY;
    for _ in 0..4000 {
        let p = store.bind(true);
        let out = ilsc.forward(&p, &y).reconstructed;
        let loss = out.sub(&y).square().mean();
        mse = loss.item();
        if mse < 1e-5 {
            break;
        }
        let g = grad(&loss, &p.leaves(), false);
        opt.step(&mut store, &g);
    }
    assert!(mse < 1e-3, "reconstruction error {mse}");
}

#[test]
fn bce_gradient_matches_finite_differences() {
    let mut rng = rng_for(3, &[]);
    let t: Vec<f64> = normal_vec(&mut rng, 8).iter().map(|v| (0.5 + 0.3 * v).clamp(0.0, 1.0)).collect();
    let p0: Vec<f64> = normal_vec(&mut rng, 8).iter().map(|v| (0.5 + 0.2 * v).clamp(0.05, 0.95)).collect();
    let target = Tensor::new(t, &[1, 8]);
    let p = Tensor::variable(p0.clone(), &[1, 8]);
    let g = grad(&bce_loss(&target, &p), &[&p], false).remove(0);
    let h = 1e-6;
    for j in 0..8 {
        let mut a = p0.clone();
        a[j] += h;
        let mut b = p0.clone();
        b[j] -= h;
        let fd = (bce_loss(&target, &Tensor::new(a, &[1, 8])).item()
            - bce_loss(&target, &Tensor::new(b, &[1, 8])).item())
            / (2.0 * h);
        assert!((fd - g.data()[j]).abs() <= 1e-4 * g.data()[j].abs().max(1e-6), "label {j}: {fd} vs {}", g.data()[j]);
    }
}

#[test]
fn heads_are_finite_for_random_inputs() {
    let cfg = small(6);
    let (nets, params) = Networks::build(&cfg, &mut rng_for(4, &[])).unwrap();
    let pg = params.generator.bind(false);
    let pd = params.discriminator.bind(false);
    let pi = params.ilsc.bind(false);
    let ps = params.style.bind(false);
    let mut rng = rng_for(5, &[]);
    for trial in 0..1000 {
        let stage = ProgressiveStage {
            stage: trial % 3,
            alpha: (trial % 7) as f64 / 6.0,
        };
        let side = stage.resolution();
        let bundle = ConditionBundle {
            z: Tensor::new(normal_vec(&mut rng, 4), &[1, 4]),
            chars: one_hot_chars(&[trial % 26]),
            impression: Tensor::new(normal_vec(&mut rng, 6).iter().map(|v| v.abs().min(1.0)).collect(), &[1, 6]),
            semantic: Tensor::new(normal_vec(&mut rng, 5), &[1, 5]),
        };
        let img = nets.generator.forward(&pg, &bundle, stage).unwrap();
        assert!(img.data().iter().all(|v| v.is_finite() && (0.0..=1.0).contains(v)));
        let x = Tensor::new(normal_vec(&mut rng, side * side), &[1, side, side, 1]);
        let out = nets.discriminator.forward(&pd, &x, stage).unwrap();
        let y = nets.ilsc.forward(&pi, &out.aux).reconstructed;
        assert!(out.critic.data().iter().chain(out.char_logits.data()).chain(y.data()).all(|v| v.is_finite()));
        if trial % 10 == 0 {
            let refs: Vec<Tensor> = (0..4).map(|_| Tensor::new(normal_vec(&mut rng, side * side), &[1, side, side, 1])).collect();
            assert!(nets.style.forward(&ps, &img, &refs).unwrap().item().is_finite());
        }
    }
}

use isoseq::neuralnet::{grad_check_piecewise, Parameters, Tensor};
use isoseq::vae::{VaeConfig, VaeModel};
use isoseq::Execution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn batch(cfg: &VaeConfig, n: usize, seed: u64) -> (Vec<Tensor>, Vec<Tensor>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let xs = (0..n)
        .map(|_| {
            let v = (0..cfg.input_len()).map(|_| f64::from(rng.random_range(0..2u8))).collect();
            Tensor::from_vec(&cfg.input_shape(), v).unwrap()
        })
        .collect();
    let noise = (0..n)
        .map(|_| {
            Tensor::from_vec(&[cfg.latent], (0..cfg.latent).map(|_| rng.random_range(-1.5..1.5)).collect()).unwrap()
        })
        .collect();
    (xs, noise)
}

#[test]
fn full_model_gradient_matches_finite_differences() {
    for (seed, latent) in [(0u64, 1usize), (1, 1), (2, 2)] {
        let cfg = VaeConfig { t: 3, window: 9, hidden: 5, latent, beta: 1.0 };
        let model = VaeModel::new(cfg, seed).unwrap();
        let (xs, noise) = batch(&cfg, 2, seed + 100);
        let (_, grads) = model.elbo_loss(&xs, &noise, cfg.beta, Execution::Sequential).unwrap();
        let mut probe = model.clone();
        let r = grad_check_piecewise(
            |v| {
                probe.load_flat(v).unwrap();
                probe.loss_signature(&xs, &noise, cfg.beta).unwrap()
            },
            &model.flatten(),
            &grads.flatten(),
            1e-5,
        );
        println!("seed {seed}: {r:?}");
        assert!(r.passed, "seed {seed}: {r:?}");
        assert!(r.checked > 10 * r.skipped);
    }
}

#[test]
fn batch_gradient_is_identical_across_execution_modes() {
    let cfg = VaeConfig { t: 3, window: 9, hidden: 7, latent: 1, beta: 1.0 };
    let model = VaeModel::new(cfg, 5).unwrap();
    let (xs, noise) = batch(&cfg, 21, 6);
    let (a, ga) = model.elbo_loss(&xs, &noise, 1.0, Execution::Sequential).unwrap();
    let (b, gb) = model.elbo_loss(&xs, &noise, 1.0, Execution::Parallel).unwrap();
    assert_eq!(a.loss.to_bits(), b.loss.to_bits());
    assert_eq!(ga, gb);
    assert!(a.loss >= 0.0);
}

#[test]
fn zero_and_one_inputs_get_different_codes() {
    let cfg = VaeConfig { t: 5, window: 17, hidden: 32, latent: 1, beta: 1.0 };
    let zeros = Tensor::zeros(&cfg.input_shape());
    let ones = Tensor::filled(&cfg.input_shape(), 1.0);
    let differing = (0..10)
        .filter(|&seed| {
            let m = VaeModel::new(cfg, seed).unwrap();
            m.predict_latent(&zeros).unwrap() != m.predict_latent(&ones).unwrap()
        })
        .count();
    assert!(differing >= 9, "{differing}");
}

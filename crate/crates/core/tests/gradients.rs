use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use vitbench_core::autodiff::{grad_check, grad_check_with, Graph, Stencil, Var};
use vitbench_core::train::{weighted_ce_loss, ClassWeights};
use vitbench_core::vit::{forward_batch, init_params, VitConfig, VitParams};
use vitbench_core::{Result, Tensor};

const TOL: f64 = 1e-5;
const H: f64 = 1e-5;

fn random_tensor(rng: &mut ChaCha8Rng, shape: &[usize], scale: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| (rng.random::<f64>() * 2.0 - 1.0) * scale).collect()).unwrap()
}

/// Reduce any tensor to a scalar with fixed random weights so every output
/// coordinate contributes a distinct amount.
fn project(g: &mut Graph, x: Var, seed: u64) -> Result<Var> {
    let shape = g.value(x).shape().to_vec();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w = g.constant(random_tensor(&mut rng, &shape, 1.0))?;
    let p = g.mul(x, w)?;
    g.sum(p)
}

fn dims() -> impl Strategy<Value = (usize, usize, usize, u64)> {
    (1usize..5, 1usize..5, 1usize..5, any::<u64>())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn matmul_grad((m, k, n, seed) in dims()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = random_tensor(&mut rng, &[m, k], 1.0);
        let b = random_tensor(&mut rng, &[k, n], 1.0);
        let err = grad_check(|g, v| { let c = g.matmul(v[0], v[1])?; project(g, c, seed) }, &[a, b], H).unwrap();
        prop_assert!(err < TOL, "error {}", err);
    }

    #[test]
    fn matmul_nt_and_transpose_grad((m, k, n, seed) in dims()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = random_tensor(&mut rng, &[m, k], 1.0);
        let b = random_tensor(&mut rng, &[n, k], 1.0);
        let err = grad_check(|g, v| {
            let c = g.matmul_nt(v[0], v[1])?;
            let t = g.transpose(c)?;
            project(g, t, seed)
        }, &[a, b], H).unwrap();
        prop_assert!(err < TOL, "error {}", err);
    }

    #[test]
    fn softmax_grad((m, _k, n, seed) in dims()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = random_tensor(&mut rng, &[m, n], 2.0);
        let err = grad_check(|g, v| { let s = g.softmax(v[0])?; project(g, s, seed) }, &[x], H).unwrap();
        prop_assert!(err < TOL, "error {}", err);
    }

    #[test]
    fn log_softmax_grad((m, _k, n, seed) in dims()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = random_tensor(&mut rng, &[m, n], 2.0);
        let err = grad_check(|g, v| { let s = g.log_softmax(v[0])?; project(g, s, seed) }, &[x], H).unwrap();
        prop_assert!(err < TOL, "error {}", err);
    }

    #[test]
    fn layer_norm_grad((m, _k, n, seed) in (1usize..5, 1usize..2, 3usize..7, any::<u64>())) {
        // n = 2 normalises every row to ±1, leaving only eps-sized input gradients
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = random_tensor(&mut rng, &[m, n], 2.0);
        let gamma = random_tensor(&mut rng, &[n], 1.5);
        let beta = random_tensor(&mut rng, &[n], 1.0);
        let err = grad_check(|g, v| { let y = g.layer_norm(v[0], v[1], v[2], 1e-6)?; project(g, y, seed) }, &[x, gamma, beta], H).unwrap();
        prop_assert!(err < TOL, "error {}", err);
    }

    #[test]
    fn gelu_grad((m, _k, n, seed) in dims()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = random_tensor(&mut rng, &[m, n], 3.0);
        let err = grad_check(|g, v| { let y = g.gelu(v[0])?; project(g, y, seed) }, &[x], H).unwrap();
        prop_assert!(err < TOL, "error {}", err);
    }

    #[test]
    fn elementwise_and_bias_grad((m, _k, n, seed) in dims()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = random_tensor(&mut rng, &[m, n], 1.0);
        let b = random_tensor(&mut rng, &[m, n], 1.0);
        let bias = random_tensor(&mut rng, &[n], 1.0);
        let err = grad_check(|g, v| {
            let s = g.add(v[0], v[1])?;
            let p = g.mul(s, v[1])?;
            let q = g.add_bias(p, v[2])?;
            let r = g.scale(q, -0.7)?;
            project(g, r, seed)
        }, &[a, b, bias], H).unwrap();
        prop_assert!(err < TOL, "error {}", err);
    }

    #[test]
    fn slicing_and_concat_grad((m, _k, n, seed) in (2usize..5, 1usize..2, 2usize..5, any::<u64>())) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = random_tensor(&mut rng, &[m, n], 1.0);
        let err = grad_check(|g, v| {
            let top = g.slice_rows(v[0], 0, 1)?;
            let rest = g.slice_rows(v[0], 1, m - 1)?;
            let left = g.slice_cols(v[0], 0, 1)?;
            let right = g.slice_cols(v[0], 1, n - 1)?;
            let rows = g.concat_rows(&[rest, top])?;
            let cols = g.concat_cols(&[right, left])?;
            let flat = g.reshape(cols, &[m * n])?;
            let flat = g.reshape(flat, &[m, n])?;
            let both = g.mul(rows, flat)?;
            project(g, both, seed)
        }, &[a], H).unwrap();
        prop_assert!(err < TOL, "error {}", err);
    }

    #[test]
    fn weighted_loss_grad(seed in any::<u64>(), batch in 1usize..6, eps in 0.0f64..0.4) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let logits = random_tensor(&mut rng, &[batch, 2], 3.0);
        let labels: Vec<u8> = (0..batch).map(|_| rng.random_range(0..2u8)).collect();
        let weights = ClassWeights::from_pair(1.9, 0.68);
        let err = grad_check(|g, v| weighted_ce_loss(g, v[0], &labels, &weights, eps), &[logits], H).unwrap();
        prop_assert!(err < TOL, "error {}", err);
    }
}

#[test]
fn reused_tensor_accumulates_both_paths() {
    // f(x) = Σ (x ⊙ sin-free mix): x used by matmul and by mul
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let x = random_tensor(&mut rng, &[3, 3], 1.0);
    let err = grad_check(
        |g, v| {
            let xx = g.matmul(v[0], v[0])?;
            let s = g.add(xx, v[0])?;
            let t = g.mul(s, v[0])?;
            project(g, t, 1)
        },
        &[x],
        H,
    )
    .unwrap();
    assert!(err < TOL, "error {err}");
}

fn grad_config() -> VitConfig {
    VitConfig { image_size: 16, patch_size: 4, embed_dim: 16, depth: 2, num_heads: 2, mlp_ratio: 2.0, num_classes: 2, dropout_rate: 0.0 }
}

/// Randomised parameters large enough that every group has gradients well
/// above finite-difference noise.
fn scaled_params(config: &VitConfig, seed: u64) -> VitParams {
    let mut p = init_params(config, seed).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xABCD);
    for t in p.tensors_mut() {
        for v in t.data_mut() {
            *v += (rng.random::<f64>() * 2.0 - 1.0) * 0.3;
        }
    }
    p
}

#[test]
fn full_vit_loss_gradient_per_parameter_group() {
    let config = grad_config();
    let params = scaled_params(&config, 11);
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let images = [random_tensor(&mut rng, &[3, 16, 16], 1.0), random_tensor(&mut rng, &[3, 16, 16], 1.0)];
    let labels = [0u8, 1];
    let weights = ClassWeights::from_pair(1.9, 0.68);
    let names: Vec<String> = config.param_shapes().into_iter().map(|(n, _)| n).collect();
    let tensors: Vec<Tensor> = params.tensors().into_iter().cloned().collect();
    for (i, name) in names.iter().enumerate() {
        let err = grad_check_with(
            |g, v| {
                let mut all = tensors.clone();
                let mut vars = Vec::with_capacity(all.len());
                for (j, t) in all.drain(..).enumerate() {
                    vars.push(if j == i { v[0] } else { g.constant(t)? });
                }
                let bound = vitbench_core::vit::BoundParams::from_ordered(vars);
                let refs: Vec<&Tensor> = images.iter().collect();
                let logits = forward_batch(g, &bound, &config, &refs, None)?;
                weighted_ce_loss(g, logits, &labels, &weights, 0.1)
            },
            &[tensors[i].clone()],
            1e-3,
            Stencil::FivePoint,
        )
        .unwrap();
        assert!(err < TOL, "{name}: relative error {err}");
    }
}


//! Run a randomly perturbed flow forward and backward, and compare its
//! log-determinant with the per-block sum.

use csflow::flow::{FlowConfig, FlowModel, Parameterized};
use csflow::tensor::{stack_max_abs_diff, stack_sum_squares, total_len};
use csflow::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> csflow::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let cfg = FlowConfig::new(3, 8);
    let mut model = FlowModel::build(cfg)?;
    println!("{} blocks, {} parameters", model.blocks().len(), model.num_parameters());

    let y: Vec<Tensor> = [(16, 16), (8, 8), (4, 4)]
        .iter()
        .map(|&(h, w)| Tensor::from_vec(8, h, w, (0..8 * h * w).map(|_| rng.random_range(-2.0..2.0)).collect()))
        .collect();

    let fresh = model.forward_tensors(&y)?;
    println!(
        "fresh model: logdet {}, |z|^2 {:.6} vs |y|^2 {:.6}",
        fresh.logdet,
        stack_sum_squares(&fresh.latent),
        stack_sum_squares(&y)
    );

    for b in model.blocks_mut() {
        b.set_gammas([rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)]);
    }
    model.visit_mut(&mut |_, p| p.iter_mut().for_each(|v| *v *= 1.5));
    let z = model.forward_tensors(&y)?;
    let back = model.inverse(&z.latent)?;
    println!("perturbed: logdet {:.6}, reconstruction error {:.3e}", z.logdet, stack_max_abs_diff(&back, &y));

    let mut x = y.clone();
    for (i, b) in model.blocks().iter().enumerate() {
        let (out, ld) = b.forward(&x);
        println!("  block {i}: logdet {ld:.6}");
        x = out;
    }
    let d = total_len(&y) as f64;
    println!("nll per dim {:.6}", (0.5 * stack_sum_squares(&z.latent) - z.logdet) / d);
    Ok(())
}

//! The tape in miniature: a conv → relu → pool → upsample chain, its
//! gradient against central differences, then a few SGD steps.
//!
//!     cargo run --example autodiff

use fluoroseg::tensor::{Graph, Sgd, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn loss(x: &Tensor, params: &[Tensor], targets: &[f64]) -> fluoroseg::Result<(Graph, [fluoroseg::tensor::Var; 3])> {
    let mut g = Graph::new();
    let xv = g.constant(x.clone());
    let k = g.leaf(params[0].clone());
    let b = g.leaf(params[1].clone());
    let y = g.conv2d(xv, k, b, 1, 1)?;
    let y = g.relu(y)?;
    let y = g.maxpool2d(y)?;
    let y = g.upsample2x(y)?;
    let l = g.bce_with_logits(y, targets, None)?;
    Ok((g, [k, b, l]))
}

fn main() -> fluoroseg::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let x = Tensor::randn(&[1, 1, 8, 8], 1.0, &mut rng);
    let targets: Vec<f64> = x.data().iter().map(|&v| f64::from(u8::from(v > 0.0))).collect();
    let mut params = vec![
        Tensor::randn(&[1, 1, 3, 3], 0.5, &mut rng).with_requires_grad(true),
        Tensor::zeros(&[1]).with_requires_grad(true),
    ];

    let (mut g, [k, _, l]) = loss(&x, &params, &targets)?;
    g.backward(l)?;
    let analytic = g.grad(k).expect("kernel gradient")[4];
    let eps = 1e-5;
    let probe = |delta: f64| -> fluoroseg::Result<f64> {
        let mut p = params.clone();
        p[0].data_mut()[4] += delta;
        let (g, [.., l]) = loss(&x, &p, &targets)?;
        Ok(g.value(l).item())
    };
    let numeric = (probe(eps)? - probe(-eps)?) / (2.0 * eps);
    println!("d loss / d centre tap: tape {analytic:.8}, central difference {numeric:.8}");

    let mut opt = Sgd::new(0.5, 0.9)?;
    for step in 0..=40 {
        let (mut g, [k, b, l]) = loss(&x, &params, &targets)?;
        if step % 10 == 0 {
            println!("step {step:>2}: loss {:.4}", g.value(l).item());
        }
        g.backward(l)?;
        params[0].set_grad(g.take_grad(k).expect("grad"))?;
        params[1].set_grad(g.take_grad(b).expect("grad"))?;
        opt.step(&mut params)?;
    }
    Ok(())
}

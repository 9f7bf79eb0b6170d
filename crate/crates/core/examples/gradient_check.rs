//! Compare backpropagation-through-time gradients with central finite
//! differences on a tiny model.
//!
//! cargo run --release --example gradient_check

use fedlm::nn::finite_diff_grad;
use fedlm::{CifgConfig, CifgModel, TokenSeq};

fn main() -> anyhow::Result<()> {
    let config = CifgConfig::new(20, 4, 6)?;
    let model = CifgModel::<f64>::init(config, 11);
    let batch = vec![
        TokenSeq::from_words(&[3, 7, 12, 5], 20)?,
        TokenSeq::from_words(&[9, 3, 2], 20)?,
        TokenSeq::from_words(&[19, 4, 4, 8, 15, 11], 20)?,
    ];
    let (loss, grads) = model.loss_and_grads(&batch)?;
    let flat = model.to_flat();
    let numeric = finite_diff_grad(
        |p| CifgModel::from_flat(config, p).and_then(|m| m.mean_loss(&batch)).unwrap(),
        &flat,
        1e-5,
    );
    println!("loss {loss:.6}");
    let analytic = grads.to_flat();
    let mut offset = 0;
    for (name, t) in CifgModel::<f64>::tensor_names().iter().zip(model.tensors()) {
        let range = offset..offset + t.len();
        let worst = range
            .clone()
            .map(|j| {
                let (a, n) = (analytic[j], numeric[j]);
                (a - n).abs() / a.abs().max(n.abs()).max(1e-6)
            })
            .fold(0.0, f64::max);
        println!("  {name:<12} max relative error {worst:.2e}");
        offset = range.end;
    }
    Ok(())
}

//! Parameter budget of the CIFG model and a look inside one cell step.
//!
//! cargo run --release --example cifg_cell

use fedlm::cifg::CellState;
use fedlm::{CifgConfig, CifgModel};

fn main() -> anyhow::Result<()> {
    let paper = CifgConfig::PAPER;
    let total = paper.param_count();
    let embedding = paper.vocab_size * paper.embed_dim;
    println!(
        "V={} D={} H={}: {total} parameters, embedding share {:.3}",
        paper.vocab_size,
        paper.embed_dim,
        paper.hidden,
        embedding as f64 / total as f64
    );
    for (name, (r, c)) in CifgModel::<f32>::tensor_names().iter().zip(paper.tensor_shapes()) {
        println!("  {name:<12} {r} x {c}");
    }

    let config = CifgConfig::new(50, 4, 6)?;
    let model = CifgModel::<f64>::init(config, 3);
    let mut state = CellState::zeros(&config);
    for token in [0, 7, 12] {
        state = model.cell_step(&model.embed(token)?, &state)?;
        let coupling = state.i.iter().zip(&state.f).map(|(i, f)| (i + f - 1.0).abs()).fold(0.0, f64::max);
        println!("token {token:>2}: r = {:?}  max |i + f - 1| = {coupling}", round(&state.r));
    }
    Ok(())
}

fn round(v: &[f64]) -> Vec<f64> {
    v.iter().map(|x| (x * 1e4).round() / 1e4).collect()
}

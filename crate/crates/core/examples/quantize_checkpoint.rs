//! 8-bit affine quantization: checkpoint size at full scale and the recall
//! cost on a small trained model.
//!
//! cargo run --release --example quantize_checkpoint

use fedlm::central::{train_centralized, CentralConfig};
use fedlm::cifg::{checkpoint_bytes, dequantize, quantize};
use fedlm::corpus::{build_vocab, synthesize_corpus, tokenize_all, trainable, CorpusSplit};
use fedlm::eval::recall_topk;
use fedlm::{CifgConfig, CifgModel};

fn main() -> anyhow::Result<()> {
    let full = CifgModel::<f32>::init(CifgConfig::PAPER, 0);
    let q = quantize(&full);
    println!(
        "full-scale model: {} bytes float32, {} bytes int8 ({:.3} MB)",
        checkpoint_bytes(&full).len(),
        q.serialized_size(),
        q.serialized_size() as f64 / 1e6
    );

    let text = synthesize_corpus(3, 300, 8_000, 4)?;
    let vocab = build_vocab(&text[..7_000], 300)?;
    let seqs = trainable(&tokenize_all(&text, &vocab));
    let (train, eval) = seqs.split_at(7_000);
    let data = CorpusSplit {
        train: train.to_vec(),
        test: vec![],
        eval: eval.to_vec(),
        seed: 0,
    };
    let config = CentralConfig {
        lr: 0.5,
        max_steps: 1_500,
        eval_every: 0,
        clip_norm: Some(5.0),
        ..CentralConfig::default()
    };
    let model = CifgModel::<f32>::init(CifgConfig::new(vocab.len(), 16, 32)?, 1);
    let (model, _) = train_centralized(model, &data, &config)?;
    let restored: CifgModel<f32> = dequantize(&quantize(&model));
    println!(
        "top1 float32 {:.4}, int8 {:.4}",
        recall_topk(&model, eval, 1)?,
        recall_topk(&restored, eval, 1)?
    );
    Ok(())
}

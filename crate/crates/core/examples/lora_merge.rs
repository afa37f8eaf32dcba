//! Attaches adapters to the toy model, checks that a fresh adapter leaves
//! the model unchanged, and that folding a trained-looking adapter into the
//! base weights gives the same logits as running it alongside.

use anyhow::Result;
use persona::lora::{
    attach_adapters, trainable_param_count, AdaptedModel, LoraConfig, ToyModel, ToyModelConfig,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn max_abs_diff(a: &ndarray::Array2<f64>, b: &ndarray::Array2<f64>) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

fn main() -> Result<()> {
    let base = ToyModel::random(ToyModelConfig::default(), 1)?;
    let cfg = LoraConfig::default();
    let mut adapter = attach_adapters(&base, &cfg, 2)?;
    println!(
        "{} sites, {} trainable parameters",
        adapter.matrices.len(),
        trainable_param_count(Some(&adapter))
    );

    let src = [10, 11, 12, 13, 3];
    let dec = [2, 20, 21];
    let plain = AdaptedModel::new(&base, None)?.logits(&src, &dec);
    let fresh = AdaptedModel::new(&base, Some(&adapter))?.logits(&src, &dec);
    println!(
        "fresh adapter max logit change: {:e}",
        max_abs_diff(&plain, &fresh)
    );

    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for m in &mut adapter.matrices {
        m.b.mapv_inplace(|_| rng.random_range(-0.05..0.05));
    }
    let side = AdaptedModel::new(&base, Some(&adapter))?.logits(&src, &dec);
    let merged = base.merged(&adapter)?;
    let folded = AdaptedModel::new(&merged, None)?.logits(&src, &dec);
    println!(
        "perturbed adapter changes logits by {:.4}",
        max_abs_diff(&plain, &side)
    );
    println!(
        "merged vs side-by-side max logit error: {:e}",
        max_abs_diff(&side, &folded)
    );
    Ok(())
}

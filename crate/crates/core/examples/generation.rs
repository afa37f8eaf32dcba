//! Generates with the mock and toy backends, including prompt truncation
//! and beam versus greedy decoding on the toy model.

use std::sync::Arc;

use anyhow::Result;
use persona::gateway::{generate, truncate_prompt, DecodeConfig, MockScript, ModelHandle};
use persona::lora::{ToyModel, ToyModelConfig, WordTokenizer};

fn main() -> Result<()> {
    let script =
        MockScript::constant("a generic answer").with_rule("Generate a headline", "news at ten");
    let mock = ModelHandle::mock(script);
    let cfg = DecodeConfig {
        deterministic: true,
        ..DecodeConfig::default()
    };
    println!(
        "mock: {}",
        generate(
            &mock,
            "Generate a headline for the following article: rain",
            &cfg
        )?
        .text
    );
    println!("mock: {}", generate(&mock, "Anything else", &cfg)?.text);

    let long: String = (0..20).map(|i| format!("w{i} ")).collect();
    println!("truncated to 5 tokens: `{}`", truncate_prompt(&long, 5));

    let base = Arc::new(ToyModel::random(ToyModelConfig::default(), 4)?);
    let prompt = "summarize the quick brown fox jumping over the lazy dog";
    let tokenizer = WordTokenizer::build(base.config().vocab_size, [prompt]);
    let toy = ModelHandle::toy(base, None, tokenizer)?;
    for beam in [1, 4] {
        let cfg = DecodeConfig {
            beam,
            max_output_tokens: 8,
            deterministic: true,
            ..DecodeConfig::default()
        };
        let out = generate(&toy, prompt, &cfg)?;
        println!(
            "toy beam {beam}: `{}` ({} tokens)",
            out.text, out.token_count
        );
    }
    Ok(())
}

//! Turns a user's profile into supervised (input, target) pairs for adapter
//! training, one task at a time.

use anyhow::Result;
use persona::data::{build_user_training_set, split_tweet, TaskId};
use persona::synthetic::{synthetic_dataset, SyntheticSpec};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for task in TaskId::ALL {
        let ds = synthetic_dataset(&SyntheticSpec::new(task, 1, 9));
        let set = build_user_training_set(task, &ds.records[0].profile, &mut rng)?;
        let p = &set.pairs[0];
        println!("== {task}: {} pairs", set.pairs.len());
        println!("  input:  {}", p.input);
        println!("  target: {}", p.target);
    }

    let tweet = "one two three four five six seven eight nine ten eleven twelve";
    let pair = split_tweet("t", tweet, 0.15)?;
    println!(
        "== tweet split at 15%: `{}` -> `{}`",
        pair.input, pair.target
    );
    Ok(())
}

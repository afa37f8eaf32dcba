//! Renders the per-entry and aggregated prompt for one user of every task,
//! then shows how a tight token budget trims the profile text.

use anyhow::Result;
use persona::data::TaskId;
use persona::prompting::{aggregate_prompt, render_ppep};
use persona::synthetic::{synthetic_dataset, SyntheticSpec};
use persona::text::WhitespaceCounter;

fn main() -> Result<()> {
    for task in TaskId::ALL {
        let ds = synthetic_dataset(&SyntheticSpec::new(task, 1, 5));
        let user = &ds.records[0];
        let entries: Vec<_> = user.profile.iter().take(2).collect();
        println!("== {task}");
        println!("entry:  {}", render_ppep(task, entries[0])?);
        let full = aggregate_prompt(task, &user.input, &entries, 512, &WhitespaceCounter)?;
        println!("prompt: {} ({} tokens)", full.text, full.token_count);
    }

    let ds = synthetic_dataset(&SyntheticSpec {
        text_words: 40,
        ..SyntheticSpec::new(TaskId::Lamp4, 1, 5)
    });
    let user = &ds.records[0];
    let entries: Vec<_> = user.profile.iter().collect();
    let budget = user.input.split_whitespace().count() + 30;
    let p = aggregate_prompt(
        TaskId::Lamp4,
        &user.input,
        &entries,
        budget,
        &WhitespaceCounter,
    )?;
    println!(
        "== budget {budget}: kept {} of {} entries, {} tokens",
        p.entries_used.len(),
        entries.len(),
        p.token_count
    );
    println!("{}", p.text);
    Ok(())
}

//! Writes a seeded LaMP-format dataset and gold file, ready for
//! `persona run --data ... --golds ...`.
//!
//! Usage: `cargo run --example synthetic_dataset -- lamp4 20 out/`

use std::path::PathBuf;

use anyhow::Result;
use persona::data::TaskId;
use persona::synthetic::{synthetic_dataset, SyntheticSpec};

fn main() -> Result<()> {
    let mut args = std::env::args().skip(1);
    let task: TaskId = args.next().unwrap_or_else(|| "lamp4".into()).parse()?;
    let users: usize = args.next().map_or(Ok(20), |s| s.parse())?;
    let dir = PathBuf::from(args.next().unwrap_or_else(|| "synthetic".into()));
    std::fs::create_dir_all(&dir)?;

    let ds = synthetic_dataset(&SyntheticSpec::new(task, users, 42));
    let data = dir.join(format!("{}_questions.json", task.slug()));
    let golds = dir.join(format!("{}_outputs.json", task.slug()));
    ds.write(&data, Some(&golds))?;
    let entries: usize = ds.records.iter().map(|r| r.profile.len()).sum();
    println!("{} users, {entries} profile entries", ds.len());
    println!("wrote {} and {}", data.display(), golds.display());
    Ok(())
}

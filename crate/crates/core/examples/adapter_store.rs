//! Saves per-user adapters to disk, reloads them through the cache, and
//! prints the storage report with population extrapolations.

use anyhow::Result;
use persona::lora::{attach_adapters, LoraConfig, ToyModel, ToyModelConfig};
use persona::store::{format_bytes, AdapterStore};

fn main() -> Result<()> {
    let dir = tempfile::tempdir()?;
    let store = AdapterStore::open(dir.path())?;
    let base = ToyModel::random(ToyModelConfig::default(), 0)?;
    for (i, user) in ["alice", "bob", "carol"].into_iter().enumerate() {
        let adapter = attach_adapters(&base, &LoraConfig::default(), i as u64)?;
        let receipt = store.save_adapter(user, &adapter, false)?;
        println!("saved {user}: {} bytes", receipt.bytes);
    }
    for _ in 0..3 {
        store.load_adapter("alice", base.fingerprint())?;
    }
    println!("3 loads of alice read {} file(s)", store.file_reads());

    let report = store.storage_report(&[1_000_000]);
    println!(
        "{} users, mean {}",
        report.user_count,
        format_bytes(report.mean_bytes)
    );
    for e in &report.extrapolations {
        println!("at {} users: {}", e.users, format_bytes(e.projected_bytes));
    }
    Ok(())
}

//! Runs the four personalization modes on headline users with a personal
//! style marker, using the toy backend, and prints comparison tables.

use anyhow::Result;
use persona::data::{Dataset, TaskId};
use persona::experiment::{
    compare, render_markdown, render_report_markdown, run_dataset, BackendConfig, Mode, RunConfig,
};
use persona::store::AdapterStore;
use persona::synthetic::style_marker_user;

fn main() -> Result<()> {
    let markers = ["zorblax", "quandry", "flimzet", "grobnik"];
    let records = markers
        .iter()
        .enumerate()
        .map(|(i, m)| style_marker_user(&format!("user{i}"), 128, 8, m, i as u64))
        .collect();
    let ds = Dataset {
        task: TaskId::Lamp4,
        records,
    };
    let mut cfg = RunConfig::new(TaskId::Lamp4, Mode::None, BackendConfig::toy_default());
    cfg.decode.max_output_tokens = 8;
    cfg.decode.deterministic = true;
    cfg.workers = 4;

    // Adapters trained for peft are picked up again by peft_rag.
    let dir = tempfile::tempdir()?;
    let store = AdapterStore::open(dir.path())?;
    let mut reports = Vec::new();
    for mode in Mode::ALL {
        let report = run_dataset(&cfg.with_mode(mode), &ds, Some(&store))?;
        println!(
            "{mode}: privacy violations {}",
            report.privacy.cross_user_accesses
        );
        for u in &report.users {
            let via = u
                .adapter
                .map_or(String::new(), |a| format!(" [adapter: {a:?}]"));
            println!(
                "  {} -> `{}` (gold `{}`){via}",
                u.user_id, u.prediction, u.gold
            );
        }
        reports.push(report);
    }
    let refs: Vec<_> = reports.iter().collect();
    println!("\n{}", render_markdown(&refs));

    let mut peft_rag = reports[3].clone();
    peft_rag.comparison = Some(compare(&peft_rag, &reports[0]));
    println!("{}", render_report_markdown(&peft_rag));
    Ok(())
}

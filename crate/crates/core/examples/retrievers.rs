//! Ranks one user's profile with each retriever and prints the top hits.

use anyhow::Result;
use persona::data::TaskId;
use persona::prompting::make_query;
use persona::retrieval::{
    build_index, retrieve_bm25, retrieve_embedding, retrieve_recency, select_retriever,
    HashEmbedder, RetrieverKind, SelectionPolicy,
};
use persona::synthetic::{synthetic_dataset, SyntheticSpec};

fn main() -> Result<()> {
    let spec = SyntheticSpec {
        min_profile: 12,
        max_profile: 12,
        ..SyntheticSpec::new(TaskId::Lamp5, 1, 3)
    };
    let mut user = synthetic_dataset(&spec).records.remove(0);
    // Plant an entry that shares words with the input.
    let words: Vec<&str> = user.input.split_whitespace().rev().take(3).collect();
    user.profile[7]
        .fields
        .insert("abstract".into(), words.join(" "));

    let task = TaskId::Lamp5;
    let query = make_query(task, &user.input)?;
    println!("query: {query}");
    let index = build_index(&user.profile, task)?;
    println!(
        "index: {} entries, avg length {:.1}",
        index.entry_count(),
        index.avg_len()
    );

    let runs = [
        ("bm25", retrieve_bm25(&index, &query, 4)?),
        ("recency", retrieve_recency(&user.profile, 4)?),
        (
            "embedding",
            retrieve_embedding(&HashEmbedder::new(256), &user.profile, task, &query, 4)?,
        ),
    ];
    for (name, r) in &runs {
        let hits: Vec<String> = r
            .hits
            .iter()
            .map(|h| format!("{}:{:.3}", user.profile[h.entry].id, h.score))
            .collect();
        println!("{name:>9}: {}", hits.join("  "));
    }
    let chosen = select_retriever(
        SelectionPolicy::default(),
        &user,
        &[RetrieverKind::Bm25, RetrieverKind::Recency],
        None,
    )?;
    println!("heuristic selection picks {chosen}");
    Ok(())
}

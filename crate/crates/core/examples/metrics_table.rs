//! Scores predictions for each task family with its metrics.

use anyhow::Result;
use persona::data::TaskId;
use persona::metrics::{evaluate_task, mae_rmse, rouge, RougeVariant};

fn main() -> Result<()> {
    let cases: [(TaskId, &[&str], &[&str]); 3] = [
        (
            TaskId::Lamp2,
            &["comedy", "action", "comedy"],
            &["comedy", "comedy", "comedy"],
        ),
        (TaskId::Lamp3, &["1", "3", "five"], &["2", "1", "5"]),
        (
            TaskId::Lamp4,
            &["the cat", "rain in spain"],
            &["the cat sat", "rain falls in spain"],
        ),
    ];
    for (task, preds, golds) in cases {
        let values = evaluate_task(task, preds, golds)?;
        let line: Vec<String> = values
            .iter()
            .map(|m| format!("{} {} {:.4}", m.name, m.direction.arrow(), m.value))
            .collect();
        println!("{task}: {}", line.join(", "));
    }
    println!(
        "rouge-1 f(the cat, the cat sat) = {:.4}",
        rouge("the cat", "the cat sat", RougeVariant::Rouge1)?.value
    );
    let (mae, rmse) = mae_rmse(&[1.0, 3.0], &[2.0, 1.0])?;
    println!("mae {:.4}, rmse {:.4}", mae.value, rmse.value);
    Ok(())
}

//! Correlates profile size with whether personalization helped, on planted
//! populations with and without a real dependence.

use anyhow::Result;
use persona::experiment::analyze_rows;
use persona::metrics::MetricName;
use persona::synthetic::planted_population;

fn main() -> Result<()> {
    for dependent in [true, false] {
        let rows: Vec<(usize, f64, f64)> = planted_population(200, dependent, 17)
            .into_iter()
            .map(|u| (u.profile_size, u.personalized, u.baseline))
            .collect();
        let r = analyze_rows(MetricName::Accuracy, &rows)?;
        println!(
            "dependent={dependent}: n={} (ties excluded {}), r={:.3}, 95% CI [{:.3}, {:.3}], slope {:.4}",
            r.n, r.excluded_ties, r.pearson_r, r.ci_low, r.ci_high, r.slope
        );
    }
    Ok(())
}

use std::cmp::Ordering;

use super::{Retrieval, RetrievalError, RetrieverKind, ScoredEntry};
use crate::data::ProfileEntry;

/// Most recent entries first. Undated entries come after all dated ones,
/// later profile positions first. The score is the inverse rank, so
/// results remain sorted by score.
pub fn retrieve_recency(profile: &[ProfileEntry], k: usize) -> Result<Retrieval, RetrievalError> {
    if k == 0 {
        return Err(RetrievalError::ZeroK);
    }
    let mut order: Vec<usize> = (0..profile.len()).collect();
    order.sort_by(|&a, &b| match (&profile[a].date, &profile[b].date) {
        (Some(x), Some(y)) => y.timestamp().cmp(&x.timestamp()).then(a.cmp(&b)),
        (Some(_), None) => Ordering::Less,
        (None, Some(_)) => Ordering::Greater,
        (None, None) => b.cmp(&a),
    });
    let n = profile.len();
    let hits = order
        .into_iter()
        .take(k)
        .enumerate()
        .map(|(rank, entry)| ScoredEntry {
            entry,
            score: (n - rank) as f64,
            kind: RetrieverKind::Recency,
        })
        .collect();
    Ok(Retrieval {
        hits,
        degenerate: false,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn entry(i: usize, date: Option<&str>) -> ProfileEntry {
        let e = ProfileEntry::new(format!("e{i}"), [("text", "t")]);
        match date {
            Some(d) => e.with_date(d),
            None => e,
        }
    }

    #[test]
    fn newest_first() {
        let p = vec![
            entry(0, Some("2020-01-01")),
            entry(1, Some("2021-06-01")),
            entry(2, Some("2019-12-31")),
        ];
        assert_eq!(retrieve_recency(&p, 2).unwrap().indices(), vec![1, 0]);
    }

    #[test]
    fn undated_fall_back_to_reverse_position() {
        let p = vec![entry(0, None), entry(1, None), entry(2, None)];
        assert_eq!(retrieve_recency(&p, 2).unwrap().indices(), vec![2, 1]);
    }

    #[test]
    fn dated_before_undated() {
        let p = vec![entry(0, Some("2021-01-01")), entry(1, None), entry(2, None)];
        assert_eq!(retrieve_recency(&p, 3).unwrap().indices(), vec![0, 2, 1]);
    }

    #[test]
    fn equal_dates_break_by_index() {
        let p = vec![entry(0, Some("2021-01-01")), entry(1, Some("2021-01-01"))];
        assert_eq!(retrieve_recency(&p, 2).unwrap().indices(), vec![0, 1]);
    }
}

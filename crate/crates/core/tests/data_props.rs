use persona::data::{
    build_user_training_set, parse_dataset, parse_gold_outputs, split_tweet, Dataset, TaskId,
    TWEET_COMPLETION_PREFIX,
};
use persona::synthetic::{synthetic_dataset, SyntheticSpec};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn task_strategy() -> impl Strategy<Value = TaskId> {
    prop::sample::select(TaskId::ALL.to_vec())
}

fn reparse(ds: &Dataset) -> Dataset {
    let text = serde_json::to_string(&ds.to_json()).unwrap();
    let mut back = parse_dataset(&text, ds.task).unwrap();
    let golds = parse_gold_outputs(&serde_json::to_string(&ds.golds_to_json()).unwrap()).unwrap();
    back.join_golds(&golds).unwrap();
    back
}

proptest! {
    #[test]
    fn dataset_roundtrips(task in task_strategy(), users in 1usize..8, seed in any::<u64>()) {
        let ds = synthetic_dataset(&SyntheticSpec::new(task, users, seed));
        prop_assert_eq!(reparse(&ds), ds);
    }

    #[test]
    fn convert_is_seed_deterministic(task in task_strategy(), seed in any::<u64>(), data_seed in any::<u64>()) {
        let ds = synthetic_dataset(&SyntheticSpec::new(task, 1, data_seed));
        let profile = &ds.records[0].profile;
        let a = build_user_training_set(task, profile, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        let b = build_user_training_set(task, profile, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn pair_tasks_ignore_the_seed(seed_a in any::<u64>(), seed_b in any::<u64>(), data_seed in any::<u64>()) {
        for task in [TaskId::Lamp2, TaskId::Lamp3, TaskId::Lamp4, TaskId::Lamp5, TaskId::Lamp6] {
            let ds = synthetic_dataset(&SyntheticSpec::new(task, 1, data_seed));
            let profile = &ds.records[0].profile;
            let a = build_user_training_set(task, profile, &mut ChaCha8Rng::seed_from_u64(seed_a)).unwrap();
            let b = build_user_training_set(task, profile, &mut ChaCha8Rng::seed_from_u64(seed_b)).unwrap();
            prop_assert_eq!(a, b);
        }
    }

    #[test]
    fn tweet_split_reconstructs_and_respects_fraction(
        words in prop::collection::vec("[a-z]{1,6}", 2..80),
        gaps in prop::collection::vec(prop::sample::select(vec![" ", "  ", "\t"]), 80),
        fraction in 0.10f64..=0.20,
    ) {
        let mut tweet = String::new();
        for (i, w) in words.iter().enumerate() {
            if i > 0 {
                tweet.push_str(gaps[i]);
            }
            tweet.push_str(w);
        }
        let pair = split_tweet("t", &tweet, fraction).unwrap();
        let prefix = pair.input.strip_prefix(TWEET_COMPLETION_PREFIX).unwrap();
        let rebuilt: Vec<&str> = prefix.split_whitespace().chain(pair.target.split_whitespace()).collect();
        prop_assert_eq!(rebuilt, words.iter().map(String::as_str).collect::<Vec<_>>());
        let n = words.len();
        let c = prefix.split_whitespace().count();
        prop_assert!(c >= 1 && c < n);
        if n >= 10 {
            prop_assert!(c as f64 / n as f64 >= 0.10);
            prop_assert!(c as f64 / n as f64 <= 0.20 + 1.0 / n as f64);
        }
    }
}

#[test]
fn lamp7_conversion_stays_in_range() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let ds = synthetic_dataset(&SyntheticSpec {
        text_words: 30,
        ..SyntheticSpec::new(TaskId::Lamp7, 20, 3)
    });
    for r in &ds.records {
        let set = build_user_training_set(TaskId::Lamp7, &r.profile, &mut rng).unwrap();
        for (p, e) in set.pairs.iter().zip(&r.profile) {
            let prefix = p.input.strip_prefix(TWEET_COMPLETION_PREFIX).unwrap();
            assert_eq!(format!("{prefix} {}", p.target), e.fields["text"]);
            let c = prefix.split_whitespace().count();
            assert!((3..=6).contains(&c), "{c} of 30 tokens");
        }
    }
}

//! Seeded generators for LaMP-format fixtures.
//!
//! Words are built from a small syllable inventory so generated text is
//! pronounceable, tokenizes cleanly, and never collides with template
//! boilerplate.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::{
    movie_tagging_input, product_rating_input, Dataset, ProfileEntry, TaskId, UserRecord,
    MOVIE_TAGS,
};
use crate::prompting::{
    citation_input, EMAIL_SUBJECT_PREFIX, HEADLINE_PREFIX, SCHOLARLY_TITLE_PREFIX,
    TWEET_PARAPHRASE_PREFIX,
};

const SYLLABLES: [&str; 16] = [
    "ka", "lo", "mi", "ra", "tu", "ne", "si", "po", "da", "ve", "zu", "fi", "go", "ba", "te", "ru",
];

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    pub task: TaskId,
    pub users: usize,
    pub min_profile: usize,
    pub max_profile: usize,
    /// Words per generated body text.
    pub text_words: usize,
    pub seed: u64,
}

impl SyntheticSpec {
    pub fn new(task: TaskId, users: usize, seed: u64) -> SyntheticSpec {
        SyntheticSpec {
            task,
            users,
            min_profile: 3,
            max_profile: 8,
            text_words: 10,
            seed,
        }
    }
}

pub fn word<R: Rng + ?Sized>(rng: &mut R) -> String {
    let n = rng.random_range(2..=3);
    (0..n)
        .map(|_| SYLLABLES[rng.random_range(0..SYLLABLES.len())])
        .collect()
}

pub fn sentence<R: Rng + ?Sized>(rng: &mut R, words: usize) -> String {
    (0..words.max(1))
        .map(|_| word(rng))
        .collect::<Vec<_>>()
        .join(" ")
}

fn date(i: usize) -> String {
    format!(
        "20{:02}-{:02}-{:02}",
        10 + i / 300 % 80,
        1 + i / 28 % 12,
        1 + i % 28
    )
}

fn entry<R: Rng + ?Sized>(task: TaskId, id: String, words: usize, rng: &mut R) -> ProfileEntry {
    let text = sentence(rng, words);
    let title = sentence(rng, 3);
    let fields: Vec<(&str, String)> = match task {
        TaskId::Lamp1 => vec![("title", title), ("abstract", text)],
        TaskId::Lamp2 => vec![
            ("description", text),
            (
                "tag",
                MOVIE_TAGS[rng.random_range(0..MOVIE_TAGS.len())].to_string(),
            ),
        ],
        TaskId::Lamp3 => vec![
            ("text", text),
            ("score", rng.random_range(1..=5).to_string()),
        ],
        TaskId::Lamp4 | TaskId::Lamp6 => vec![("text", text), ("title", title)],
        TaskId::Lamp5 => vec![("abstract", text), ("title", title)],
        TaskId::Lamp7 => vec![("text", text)],
    };
    ProfileEntry::new(id, fields)
}

fn input_and_gold<R: Rng + ?Sized>(task: TaskId, words: usize, rng: &mut R) -> (String, String) {
    let body = sentence(rng, words);
    match task {
        TaskId::Lamp1 => {
            let gold = if rng.random_bool(0.5) { "[1]" } else { "[2]" };
            (
                citation_input(&sentence(rng, 4), &sentence(rng, 4), &sentence(rng, 4)),
                gold.to_string(),
            )
        }
        TaskId::Lamp2 => (
            movie_tagging_input(&body),
            MOVIE_TAGS[rng.random_range(0..MOVIE_TAGS.len())].to_string(),
        ),
        TaskId::Lamp3 => (
            product_rating_input(&body),
            rng.random_range(1..=5).to_string(),
        ),
        TaskId::Lamp4 => (format!("{HEADLINE_PREFIX}{body}"), sentence(rng, 3)),
        TaskId::Lamp5 => (format!("{SCHOLARLY_TITLE_PREFIX}{body}"), sentence(rng, 4)),
        TaskId::Lamp6 => (format!("{EMAIL_SUBJECT_PREFIX}{body}"), sentence(rng, 3)),
        TaskId::Lamp7 => (
            format!("{TWEET_PARAPHRASE_PREFIX}{body}"),
            sentence(rng, words),
        ),
    }
}

/// A dataset with golds joined. Every profile entry is dated, ids are
/// `"{user}-{n}"`, and users are `"u000"`, `"u001"`, ...
pub fn synthetic_dataset(spec: &SyntheticSpec) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let records = (0..spec.users)
        .map(|u| {
            let user_id = format!("u{u:03}");
            let n = rng.random_range(
                spec.min_profile.max(1)..=spec.max_profile.max(spec.min_profile.max(1)),
            );
            let profile = (0..n)
                .map(|i| {
                    entry(
                        spec.task,
                        format!("{user_id}-{i}"),
                        spec.text_words,
                        &mut rng,
                    )
                    .with_date(&date(i))
                })
                .collect();
            let (input, gold) = input_and_gold(spec.task, spec.text_words, &mut rng);
            UserRecord {
                user_id,
                input,
                gold,
                profile,
            }
        })
        .collect();
    Dataset {
        task: spec.task,
        records,
    }
}

/// A LaMP-4 user whose every headline is two article words followed by
/// `marker`.
pub fn style_marker_user(
    user_id: &str,
    entries: usize,
    article_words: usize,
    marker: &str,
    seed: u64,
) -> UserRecord {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let profile = (0..entries)
        .map(|i| {
            let article = sentence(&mut rng, article_words);
            let words: Vec<&str> = article.split(' ').collect();
            let title = format!("{} {} {marker}", words[0], words[1]);
            ProfileEntry::new(
                format!("{user_id}-{i}"),
                [("text", article.clone()), ("title", title)],
            )
            .with_date(&date(i))
        })
        .collect();
    let article = sentence(&mut rng, article_words);
    let words: Vec<&str> = article.split(' ').collect();
    let gold = format!("{} {} {marker}", words[0], words[1]);
    UserRecord {
        user_id: user_id.to_string(),
        input: format!("{HEADLINE_PREFIX}{article}"),
        gold,
        profile,
    }
}

/// Fresh headline inputs in the style of [`style_marker_user`].
pub fn headline_inputs(n: usize, article_words: usize, seed: u64) -> Vec<String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| format!("{HEADLINE_PREFIX}{}", sentence(&mut rng, article_words)))
        .collect()
}

/// One user of a planted profile-size population.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlantedUser {
    pub profile_size: usize,
    pub baseline: f64,
    pub personalized: f64,
}

/// Users with profile sizes uniform in `1..=100` and a higher-is-better
/// metric. With `dependent`, the chance that personalization helps rises
/// linearly from 0.1 to 0.9 with profile size; otherwise it is 0.5. About
/// a tenth of users are left unchanged.
pub fn planted_population(n: usize, dependent: bool, seed: u64) -> Vec<PlantedUser> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let profile_size = rng.random_range(1..=100usize);
            let baseline = rng.random_range(0.2..0.8);
            let p_gain = if dependent {
                0.1 + 0.8 * (profile_size - 1) as f64 / 99.0
            } else {
                0.5
            };
            let delta = rng.random_range(0.01..0.2);
            let personalized = if rng.random_bool(0.1) {
                baseline
            } else if rng.random_bool(p_gain) {
                baseline + delta
            } else {
                baseline - delta
            };
            PlantedUser {
                profile_size,
                baseline,
                personalized,
            }
        })
        .collect()
}

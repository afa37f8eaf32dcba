use super::PromptError;
use crate::data::{movie_tagging_input, product_rating_input, TaskId, TWEET_COMPLETION_PREFIX};

const CITATION_OPEN: &str = "For an author who has written the paper with the title \"";
const CITATION_AFTER_TITLE: &str =
    "\", which reference is related? Just answer with [1] or [2] without explanation. [1]: \"";
const CITATION_BETWEEN_REFS: &str = "\" [2]: \"";

pub const HEADLINE_PREFIX: &str = "Generate a headline for the following article: ";
pub const SCHOLARLY_TITLE_PREFIX: &str = "Generate a title for the following abstract of a paper: ";
pub const EMAIL_SUBJECT_PREFIX: &str = "Generate a subject for the following email: ";
pub const TWEET_PARAPHRASE_PREFIX: &str =
    "Paraphrase the following tweet without any explanation before or after it: ";

/// Parsed LaMP-1 input.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CitationInput<'a> {
    pub title: &'a str,
    pub reference_1: &'a str,
    pub reference_2: &'a str,
    /// Byte offset just past the title's closing quote.
    pub title_end: usize,
}

pub fn citation_input(title: &str, reference_1: &str, reference_2: &str) -> String {
    format!("{CITATION_OPEN}{title}{CITATION_AFTER_TITLE}{reference_1}{CITATION_BETWEEN_REFS}{reference_2}\"")
}

fn mismatch(task: TaskId, input: &str) -> PromptError {
    let found: String = input.chars().take(60).collect();
    PromptError::TemplateMismatch { task, found }
}

pub fn parse_citation_input(input: &str) -> Result<CitationInput<'_>, PromptError> {
    let err = || mismatch(TaskId::Lamp1, input);
    let lead = input.len() - input.trim_start().len();
    let body = input[lead..].strip_prefix(CITATION_OPEN).ok_or_else(err)?;
    let title_len = body.find(CITATION_AFTER_TITLE).ok_or_else(err)?;
    let title = &body[..title_len];
    let rest = &body[title_len + CITATION_AFTER_TITLE.len()..];
    let r1_len = rest.find(CITATION_BETWEEN_REFS).ok_or_else(err)?;
    let reference_1 = &rest[..r1_len];
    let reference_2 = rest[r1_len + CITATION_BETWEEN_REFS.len()..]
        .trim_end()
        .strip_suffix('"')
        .ok_or_else(err)?;
    if title.trim().is_empty() {
        return Err(err());
    }
    Ok(CitationInput {
        title,
        reference_1,
        reference_2,
        title_end: lead + CITATION_OPEN.len() + title_len + 1,
    })
}

fn input_prefixes(task: TaskId) -> Vec<String> {
    match task {
        TaskId::Lamp1 => vec![],
        TaskId::Lamp2 => vec![movie_tagging_input("")],
        TaskId::Lamp3 => vec![product_rating_input("")],
        TaskId::Lamp4 => vec![HEADLINE_PREFIX.into()],
        TaskId::Lamp5 => vec![SCHOLARLY_TITLE_PREFIX.into()],
        TaskId::Lamp6 => vec![EMAIL_SUBJECT_PREFIX.into()],
        TaskId::Lamp7 => vec![
            TWEET_PARAPHRASE_PREFIX.into(),
            TWEET_COMPLETION_PREFIX.into(),
        ],
    }
}

/// Query extraction: strips the task's template boilerplate and returns
/// only the user-supplied content of the input.
pub fn make_query(task: TaskId, input: &str) -> Result<String, PromptError> {
    if task == TaskId::Lamp1 {
        let c = parse_citation_input(input)?;
        return Ok(format!("{} {} {}", c.title, c.reference_1, c.reference_2));
    }
    let trimmed = input.trim_start();
    for prefix in input_prefixes(task) {
        // Matching tolerates the trailing space of the template being absent.
        if let Some(rest) = trimmed.strip_prefix(prefix.trim_end()) {
            let rest = rest.trim();
            if rest.is_empty() {
                break;
            }
            return Ok(rest.to_string());
        }
    }
    Err(mismatch(task, input))
}

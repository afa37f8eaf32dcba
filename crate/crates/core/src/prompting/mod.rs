//! Query extraction and personalized prompt construction.

mod query;
mod template;

pub use query::{
    citation_input, make_query, parse_citation_input, CitationInput, EMAIL_SUBJECT_PREFIX,
    HEADLINE_PREFIX, SCHOLARLY_TITLE_PREFIX, TWEET_PARAPHRASE_PREFIX,
};
pub use template::{
    add_to_paper_title, aggregate_prompt, render_ppep, PersonalizedPrompt, TemplateSpec,
    ENTRY_JOINER, MIN_ENTRY_ALLOWANCE, PRIOR_WORKS_DELIMITER,
};

use crate::data::{DataError, TaskId};

#[derive(Debug, thiserror::Error)]
pub enum PromptError {
    #[error("{task} input does not match its template near `{found}`")]
    TemplateMismatch { task: TaskId, found: String },
    #[error("token budget {budget} is smaller than the input alone ({required} tokens)")]
    BudgetExhausted { budget: usize, required: usize },
    #[error(transparent)]
    Data(#[from] DataError),
}

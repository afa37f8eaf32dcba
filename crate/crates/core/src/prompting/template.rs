use serde::{Deserialize, Serialize};

use super::query::parse_citation_input;
use super::PromptError;
use crate::data::{FieldRole, ProfileEntry, TaskId};
use crate::text::TokenCounter;

pub const ENTRY_JOINER: &str = ", and ";

/// Delimiter placed between the LaMP-1 paper title and the joined
/// profile titles.
pub const PRIOR_WORKS_DELIMITER: &str = " \u{2014} prior works: ";

/// How one task renders profile entries and folds them into its input.
#[derive(Debug, Clone, Copy)]
pub struct TemplateSpec {
    pub task: TaskId,
    /// Per-entry pattern; `{role}` placeholders name profile fields.
    pub ppep: &'static str,
    /// Aggregation pattern over `{profile}` and `{input}`. `None` means the
    /// profile string is spliced into the paper title instead.
    pub aggregate: Option<&'static str>,
    pub joiner: &'static str,
    /// Field that absorbs truncation first.
    pub body: FieldRole,
    /// Short field kept intact as long as the allowance permits.
    pub secondary: Option<FieldRole>,
}

impl TemplateSpec {
    pub fn for_task(task: TaskId) -> TemplateSpec {
        use FieldRole::*;
        let (ppep, aggregate, body, secondary) = match task {
            TaskId::Lamp1 => ("\"{title}\"", None, Title, None),
            TaskId::Lamp2 => (
                "the tag for the movie: \"{description}\" is \"{tag}\"",
                Some("{profile}. {input}"),
                Description,
                Some(Tag),
            ),
            TaskId::Lamp3 => (
                "{score} is the score for \"{text}\"",
                Some("{profile}. {input}"),
                Text,
                Some(Score),
            ),
            TaskId::Lamp4 | TaskId::Lamp6 => (
                "\"{title}\" is the title for \"{text}\"",
                Some("{profile}. {input}"),
                Text,
                Some(Title),
            ),
            TaskId::Lamp5 => (
                "\"{title}\" is the title for \"{abstract}\"",
                Some("{profile}. Following the given patterns {input}"),
                Abstract,
                Some(Title),
            ),
            TaskId::Lamp7 => (
                "\"{text}\"",
                Some("{profile} are written by a person. Following the given patterns {input}"),
                Text,
                None,
            ),
        };
        TemplateSpec {
            task,
            ppep,
            aggregate,
            joiner: ENTRY_JOINER,
            body,
            secondary,
        }
    }

    fn render_with(
        &self,
        lookup: impl Fn(FieldRole) -> Result<String, PromptError>,
    ) -> Result<String, PromptError> {
        let mut out = String::with_capacity(self.ppep.len() + 64);
        let mut rest = self.ppep;
        while let Some(open) = rest.find('{') {
            out.push_str(&rest[..open]);
            let close = rest[open..]
                .find('}')
                .expect("template placeholder is closed")
                + open;
            out.push_str(&lookup(role_named(&rest[open + 1..close]))?);
            rest = &rest[close + 1..];
        }
        out.push_str(rest);
        Ok(out)
    }

    /// Renders one entry exactly.
    pub fn render_entry(&self, entry: &ProfileEntry) -> Result<String, PromptError> {
        self.render_with(|role| Ok(entry.field(self.task, role)?.to_string()))
    }

    /// Renders the pattern with every field empty: the fixed template text.
    fn render_skeleton(&self) -> String {
        self.render_with(|_| Ok(String::new()))
            .expect("skeleton render is infallible")
    }

    /// Combines rendered entries with the task input.
    pub fn assemble(&self, input: &str, rendered: &[String]) -> Result<String, PromptError> {
        if rendered.is_empty() {
            return Ok(input.to_string());
        }
        let profile = rendered.join(self.joiner);
        match self.aggregate {
            Some(pattern) => Ok(pattern
                .replacen("{profile}", &profile, 1)
                .replacen("{input}", input, 1)),
            None => add_to_paper_title(&profile, input),
        }
    }
}

fn role_named(name: &str) -> FieldRole {
    match name {
        "title" => FieldRole::Title,
        "abstract" => FieldRole::Abstract,
        "description" => FieldRole::Description,
        "tag" => FieldRole::Tag,
        "text" => FieldRole::Text,
        "score" => FieldRole::Score,
        other => unreachable!("unknown placeholder `{other}`"),
    }
}

/// Per-profile-entry prompt for `task`.
pub fn render_ppep(task: TaskId, entry: &ProfileEntry) -> Result<String, PromptError> {
    TemplateSpec::for_task(task).render_entry(entry)
}

/// Inserts `profile` right after the closing quote of the paper title in
/// a LaMP-1 input, behind [`PRIOR_WORKS_DELIMITER`].
pub fn add_to_paper_title(profile: &str, input: &str) -> Result<String, PromptError> {
    let c = parse_citation_input(input)?;
    Ok(format!(
        "{}{PRIOR_WORKS_DELIMITER}{profile}{}",
        &input[..c.title_end],
        &input[c.title_end..]
    ))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PersonalizedPrompt {
    pub text: String,
    pub token_count: usize,
    /// Positions (into the entries passed in) that made it into the prompt,
    /// in rank order.
    pub entries_used: Vec<usize>,
    pub truncation_applied: bool,
}

/// Smallest per-entry allowance worth keeping an entry for.
pub const MIN_ENTRY_ALLOWANCE: usize = 3;

/// Builds the personalized prompt from ranked entries under a token budget.
///
/// When the full rendering does not fit, the input and all fixed template
/// text are reserved first, and the remaining tokens are split equally
/// across entries; each entry's field text is cut at the tail to its
/// allowance. Entries are dropped from the end of the ranking only while
/// the allowance would fall below [`MIN_ENTRY_ALLOWANCE`].
pub fn aggregate_prompt(
    task: TaskId,
    input: &str,
    entries: &[&ProfileEntry],
    budget: usize,
    counter: &dyn TokenCounter,
) -> Result<PersonalizedPrompt, PromptError> {
    let spec = TemplateSpec::for_task(task);
    let input_tokens = counter.count(input);
    if budget < input_tokens {
        return Err(PromptError::BudgetExhausted {
            budget,
            required: input_tokens,
        });
    }
    let bare = || PersonalizedPrompt {
        text: input.to_string(),
        token_count: input_tokens,
        entries_used: Vec::new(),
        truncation_applied: !entries.is_empty(),
    };
    if entries.is_empty() {
        return Ok(bare());
    }

    let full: Vec<String> = entries
        .iter()
        .map(|e| spec.render_entry(e))
        .collect::<Result<_, _>>()?;
    let text = spec.assemble(input, &full)?;
    let count = counter.count(&text);
    if count <= budget {
        return Ok(PersonalizedPrompt {
            text,
            token_count: count,
            entries_used: (0..entries.len()).collect(),
            truncation_applied: false,
        });
    }

    let skeleton = spec.render_skeleton();
    for n in (1..=entries.len()).rev() {
        let fixed = counter.count(&spec.assemble(input, &vec![skeleton.clone(); n])?);
        if fixed > budget {
            continue;
        }
        let mut allowance = (budget - fixed) / n;
        while allowance >= MIN_ENTRY_ALLOWANCE {
            let rendered = entries[..n]
                .iter()
                .map(|e| render_truncated(&spec, e, allowance, counter))
                .collect::<Result<Vec<_>, _>>()?;
            let text = spec.assemble(input, &rendered)?;
            let count = counter.count(&text);
            if count <= budget {
                return Ok(PersonalizedPrompt {
                    text,
                    token_count: count,
                    entries_used: (0..n).collect(),
                    truncation_applied: true,
                });
            }
            allowance -= 1;
        }
    }
    Ok(bare())
}

/// Renders `entry` with its field text cut to at most `allowance` tokens,
/// preferring to keep the secondary field whole.
fn render_truncated(
    spec: &TemplateSpec,
    entry: &ProfileEntry,
    allowance: usize,
    counter: &dyn TokenCounter,
) -> Result<String, PromptError> {
    let task = spec.task;
    let body = entry.field(task, spec.body)?;
    let secondary = spec.secondary.map(|r| entry.field(task, r)).transpose()?;
    let sec_tokens = secondary.map_or(0, |s| counter.count(s));
    let sec_kept = sec_tokens.min(allowance);
    let body_kept = allowance - sec_kept;
    let body_text = counter.truncate_head(body, body_kept);
    let sec_text = secondary.map(|s| counter.truncate_head(s, sec_kept));
    spec.render_with(|role| {
        if role == spec.body {
            Ok(body_text.clone())
        } else if Some(role) == spec.secondary {
            Ok(sec_text.clone().unwrap_or_default())
        } else {
            Ok(entry.field(task, role)?.to_string())
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::text::WhitespaceCounter;

    #[test]
    fn movie_tag_ppep() {
        let e = ProfileEntry::new("e", [("description", "D"), ("tag", "comedy")]);
        assert_eq!(
            render_ppep(TaskId::Lamp2, &e).unwrap(),
            "the tag for the movie: \"D\" is \"comedy\""
        );
    }

    #[test]
    fn rating_ppep() {
        let e = ProfileEntry::new("e", [("text", "ok"), ("score", "3")]);
        assert_eq!(
            render_ppep(TaskId::Lamp3, &e).unwrap(),
            "3 is the score for \"ok\""
        );
    }

    #[test]
    fn tweet_ppep_uses_alias() {
        let e = ProfileEntry::new("e", [("tweet", "hello")]);
        assert_eq!(render_ppep(TaskId::Lamp7, &e).unwrap(), "\"hello\"");
    }

    #[test]
    fn missing_field_is_error() {
        let e = ProfileEntry::new("e", [("description", "D")]);
        assert!(matches!(
            render_ppep(TaskId::Lamp2, &e),
            Err(PromptError::Data(_))
        ));
    }

    #[test]
    fn movie_aggregate_single_entry() {
        let e = ProfileEntry::new("e", [("description", "D"), ("tag", "comedy")]);
        let p = aggregate_prompt(TaskId::Lamp2, "I", &[&e], 512, &WhitespaceCounter).unwrap();
        assert_eq!(p.text, "the tag for the movie: \"D\" is \"comedy\". I");
        assert_eq!(p.entries_used, vec![0]);
        assert!(!p.truncation_applied);
    }

    #[test]
    fn tweet_aggregate_two_entries() {
        let a = ProfileEntry::new("a", [("text", "t1")]);
        let b = ProfileEntry::new("b", [("text", "t2")]);
        let p = aggregate_prompt(TaskId::Lamp7, "I", &[&a, &b], 512, &WhitespaceCounter).unwrap();
        assert_eq!(
            p.text,
            "\"t1\", and \"t2\" are written by a person. Following the given patterns I"
        );
    }

    #[test]
    fn no_entries_is_bare_input() {
        let p = aggregate_prompt(TaskId::Lamp4, "just this", &[], 512, &WhitespaceCounter).unwrap();
        assert_eq!(p.text, "just this");
        assert_eq!(p.token_count, 2);
        assert!(!p.truncation_applied);
    }

    #[test]
    fn budget_below_input_fails() {
        assert!(matches!(
            aggregate_prompt(TaskId::Lamp4, "a b c", &[], 2, &WhitespaceCounter),
            Err(PromptError::BudgetExhausted {
                budget: 2,
                required: 3
            })
        ));
    }

    #[test]
    fn over_budget_truncates_equally() {
        let long: String = (0..50).map(|i| format!("w{i} ")).collect();
        let a = ProfileEntry::new("a", [("text", long.as_str())]);
        let b = ProfileEntry::new("b", [("text", long.as_str())]);
        let p =
            aggregate_prompt(TaskId::Lamp7, "in put", &[&a, &b], 40, &WhitespaceCounter).unwrap();
        assert!(p.token_count <= 40);
        assert_eq!(p.entries_used, vec![0, 1]);
        assert!(p.truncation_applied);
        assert!(p.text.starts_with("\"w0 w1"));
        assert!(p.text.ends_with("Following the given patterns in put"));
    }

    #[test]
    fn tiny_budget_drops_trailing_entries() {
        let a = ProfileEntry::new("a", [("text", "one two three four five")]);
        let b = ProfileEntry::new("b", [("text", "six seven eight nine ten")]);
        // input 1 token, fixed text for one entry: `"" are written by a person. Following the given patterns x` = 11
        let p = aggregate_prompt(TaskId::Lamp7, "x", &[&a, &b], 15, &WhitespaceCounter).unwrap();
        assert_eq!(p.entries_used, vec![0]);
        assert!(p.token_count <= 15);
    }

    #[test]
    fn citation_title_insertion() {
        let input = crate::prompting::citation_input("T", "R1", "R2");
        let e = ProfileEntry::new("e", [("title", "P1"), ("abstract", "A")]);
        let p = aggregate_prompt(TaskId::Lamp1, &input, &[&e], 512, &WhitespaceCounter).unwrap();
        assert!(p
            .text
            .contains("the title \"T\" \u{2014} prior works: \"P1\", which reference"));
    }
}

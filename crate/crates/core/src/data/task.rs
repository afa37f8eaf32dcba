use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

/// The fifteen LaMP-2 movie tags, in prompt order.
pub const MOVIE_TAGS: [&str; 15] = [
    "sci-fi",
    "based on a book",
    "comedy",
    "action",
    "twist ending",
    "dystopia",
    "dark comedy",
    "classic",
    "psychology",
    "fantasy",
    "romance",
    "thought-provoking",
    "social commentary",
    "violence",
    "true story",
];

/// LaMP-3 rating scale.
pub const RATING_LABELS: [&str; 5] = ["1", "2", "3", "4", "5"];

/// LaMP-1 reference choices.
pub const CITATION_LABELS: [&str; 2] = ["[1]", "[2]"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TaskKind {
    BinaryClassification,
    CategoricalClassification,
    OrdinalRating,
    Generation,
}

/// One of the seven LaMP tasks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub enum TaskId {
    /// Personalized citation identification.
    Lamp1,
    /// Personalized movie tagging.
    Lamp2,
    /// Personalized product rating.
    Lamp3,
    /// Personalized news headline generation.
    Lamp4,
    /// Personalized scholarly title generation.
    Lamp5,
    /// Personalized email subject generation.
    Lamp6,
    /// Personalized tweet paraphrasing.
    Lamp7,
}

/// Semantic role of a profile field. Each task's profile format is a
/// fixed set of roles; the JSON key for a role may be one of several
/// accepted spellings.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FieldRole {
    Title,
    Abstract,
    Description,
    Tag,
    Text,
    Score,
}

pub struct FieldSpec {
    pub role: FieldRole,
    /// Accepted JSON keys; the first is canonical.
    pub names: &'static [&'static str],
}

const LAMP1_FIELDS: &[FieldSpec] = &[
    FieldSpec {
        role: FieldRole::Title,
        names: &["title"],
    },
    FieldSpec {
        role: FieldRole::Abstract,
        names: &["abstract"],
    },
];
const LAMP2_FIELDS: &[FieldSpec] = &[
    FieldSpec {
        role: FieldRole::Description,
        names: &["description"],
    },
    FieldSpec {
        role: FieldRole::Tag,
        names: &["tag"],
    },
];
const LAMP3_FIELDS: &[FieldSpec] = &[
    FieldSpec {
        role: FieldRole::Text,
        names: &["text", "review"],
    },
    FieldSpec {
        role: FieldRole::Score,
        names: &["score"],
    },
];
const LAMP4_FIELDS: &[FieldSpec] = &[
    FieldSpec {
        role: FieldRole::Text,
        names: &["text", "article"],
    },
    FieldSpec {
        role: FieldRole::Title,
        names: &["title"],
    },
];
const LAMP5_FIELDS: &[FieldSpec] = &[
    FieldSpec {
        role: FieldRole::Abstract,
        names: &["abstract"],
    },
    FieldSpec {
        role: FieldRole::Title,
        names: &["title"],
    },
];
const LAMP6_FIELDS: &[FieldSpec] = &[
    FieldSpec {
        role: FieldRole::Text,
        names: &["text", "email"],
    },
    FieldSpec {
        role: FieldRole::Title,
        names: &["title"],
    },
];
const LAMP7_FIELDS: &[FieldSpec] = &[FieldSpec {
    role: FieldRole::Text,
    names: &["text", "tweet"],
}];

impl TaskId {
    pub const ALL: [TaskId; 7] = [
        TaskId::Lamp1,
        TaskId::Lamp2,
        TaskId::Lamp3,
        TaskId::Lamp4,
        TaskId::Lamp5,
        TaskId::Lamp6,
        TaskId::Lamp7,
    ];

    pub fn number(self) -> u8 {
        match self {
            TaskId::Lamp1 => 1,
            TaskId::Lamp2 => 2,
            TaskId::Lamp3 => 3,
            TaskId::Lamp4 => 4,
            TaskId::Lamp5 => 5,
            TaskId::Lamp6 => 6,
            TaskId::Lamp7 => 7,
        }
    }

    pub fn kind(self) -> TaskKind {
        match self {
            TaskId::Lamp1 => TaskKind::BinaryClassification,
            TaskId::Lamp2 => TaskKind::CategoricalClassification,
            TaskId::Lamp3 => TaskKind::OrdinalRating,
            _ => TaskKind::Generation,
        }
    }

    /// Closed label set for classification tasks.
    pub fn labels(self) -> Option<&'static [&'static str]> {
        match self {
            TaskId::Lamp1 => Some(&CITATION_LABELS),
            TaskId::Lamp2 => Some(&MOVIE_TAGS),
            TaskId::Lamp3 => Some(&RATING_LABELS),
            _ => None,
        }
    }

    pub fn profile_fields(self) -> &'static [FieldSpec] {
        match self {
            TaskId::Lamp1 => LAMP1_FIELDS,
            TaskId::Lamp2 => LAMP2_FIELDS,
            TaskId::Lamp3 => LAMP3_FIELDS,
            TaskId::Lamp4 => LAMP4_FIELDS,
            TaskId::Lamp5 => LAMP5_FIELDS,
            TaskId::Lamp6 => LAMP6_FIELDS,
            TaskId::Lamp7 => LAMP7_FIELDS,
        }
    }

    /// The profile field that carries the entry's searchable body text,
    /// i.e. the content that query extraction pulls out of task inputs.
    pub fn searchable_role(self) -> FieldRole {
        match self {
            TaskId::Lamp1 => FieldRole::Title,
            TaskId::Lamp2 => FieldRole::Description,
            TaskId::Lamp5 => FieldRole::Abstract,
            _ => FieldRole::Text,
        }
    }

    /// True when every profile entry is already an input/output pair.
    pub fn profile_is_pairs(self) -> bool {
        !matches!(self, TaskId::Lamp1 | TaskId::Lamp7)
    }

    pub fn slug(self) -> &'static str {
        match self {
            TaskId::Lamp1 => "lamp1",
            TaskId::Lamp2 => "lamp2",
            TaskId::Lamp3 => "lamp3",
            TaskId::Lamp4 => "lamp4",
            TaskId::Lamp5 => "lamp5",
            TaskId::Lamp6 => "lamp6",
            TaskId::Lamp7 => "lamp7",
        }
    }
}

impl fmt::Display for TaskId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "LaMP-{}", self.number())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("unknown task `{0}` (expected lamp1 .. lamp7)")]
pub struct UnknownTask(pub String);

impl FromStr for TaskId {
    type Err = UnknownTask;

    /// Accepts `lamp2`, `LaMP-2`, `LaMP_2` and similar spellings.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let norm: String = s
            .chars()
            .filter(|c| !matches!(c, '-' | '_' | ' '))
            .collect::<String>()
            .to_ascii_lowercase();
        let n = norm
            .strip_prefix("lamp")
            .ok_or_else(|| UnknownTask(s.to_string()))?;
        match n {
            "1" => Ok(TaskId::Lamp1),
            "2" => Ok(TaskId::Lamp2),
            "3" => Ok(TaskId::Lamp3),
            "4" => Ok(TaskId::Lamp4),
            "5" => Ok(TaskId::Lamp5),
            "6" => Ok(TaskId::Lamp6),
            "7" => Ok(TaskId::Lamp7),
            _ => Err(UnknownTask(s.to_string())),
        }
    }
}

impl From<TaskId> for String {
    fn from(t: TaskId) -> String {
        format!("LaMP_{}", t.number())
    }
}

impl TryFrom<String> for TaskId {
    type Error = UnknownTask;
    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seven_tasks_with_expected_kinds() {
        assert_eq!(TaskId::ALL.len(), 7);
        assert_eq!(TaskId::Lamp1.kind(), TaskKind::BinaryClassification);
        assert_eq!(TaskId::Lamp2.kind(), TaskKind::CategoricalClassification);
        assert_eq!(TaskId::Lamp3.kind(), TaskKind::OrdinalRating);
        for t in &TaskId::ALL[3..] {
            assert_eq!(t.kind(), TaskKind::Generation);
        }
    }

    #[test]
    fn movie_tag_set_is_exact() {
        assert_eq!(MOVIE_TAGS.len(), 15);
        assert_eq!(
            MOVIE_TAGS.join(", "),
            "sci-fi, based on a book, comedy, action, twist ending, dystopia, dark comedy, \
             classic, psychology, fantasy, romance, thought-provoking, social commentary, \
             violence, true story"
        );
    }

    #[test]
    fn parses_spellings() {
        for s in ["lamp2", "LaMP-2", "LaMP_2", "LAMP 2"] {
            assert_eq!(s.parse::<TaskId>().unwrap(), TaskId::Lamp2);
        }
        assert!("lamp8".parse::<TaskId>().is_err());
        assert!("2".parse::<TaskId>().is_err());
    }
}

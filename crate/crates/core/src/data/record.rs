use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs;
use std::path::Path;

use chrono::{NaiveDate, NaiveDateTime};
use serde_json::{Map, Value};

use super::task::{FieldRole, TaskId};
use super::DataError;

/// Entry timestamp: the original text plus its parsed value.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EntryDate {
    raw: String,
    at: NaiveDateTime,
}

impl EntryDate {
    /// Parses an ISO-8601 date (`2020-01-01`) or date-time
    /// (`2020-01-01T10:00:00`, optionally with a UTC offset).
    pub fn parse(raw: &str) -> Option<EntryDate> {
        let s = raw.trim();
        let at = if let Ok(d) = NaiveDate::parse_from_str(s, "%Y-%m-%d") {
            d.and_hms_opt(0, 0, 0)?
        } else if let Ok(dt) = chrono::DateTime::parse_from_rfc3339(s) {
            dt.naive_utc()
        } else if let Ok(dt) = NaiveDateTime::parse_from_str(s, "%Y-%m-%dT%H:%M:%S%.f") {
            dt
        } else {
            NaiveDateTime::parse_from_str(s, "%Y-%m-%d %H:%M:%S%.f").ok()?
        };
        Some(EntryDate {
            raw: raw.to_string(),
            at,
        })
    }

    pub fn as_str(&self) -> &str {
        &self.raw
    }

    pub fn timestamp(&self) -> NaiveDateTime {
        self.at
    }
}

/// One document of a user profile.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ProfileEntry {
    pub id: String,
    pub fields: BTreeMap<String, String>,
    pub date: Option<EntryDate>,
}

impl ProfileEntry {
    pub fn new<I, K, V>(id: impl Into<String>, fields: I) -> ProfileEntry
    where
        I: IntoIterator<Item = (K, V)>,
        K: Into<String>,
        V: Into<String>,
    {
        ProfileEntry {
            id: id.into(),
            fields: fields
                .into_iter()
                .map(|(k, v)| (k.into(), v.into()))
                .collect(),
            date: None,
        }
    }

    pub fn with_date(mut self, raw: &str) -> ProfileEntry {
        self.date = EntryDate::parse(raw);
        self
    }

    /// Value of the field playing `role` under `task`'s profile format.
    pub fn field(&self, task: TaskId, role: FieldRole) -> Result<&str, DataError> {
        let spec = task
            .profile_fields()
            .iter()
            .find(|s| s.role == role)
            .ok_or_else(|| DataError::TaskMismatch {
                record: self.id.clone(),
                field: format!("{role:?}").to_lowercase(),
                task,
            })?;
        spec.names
            .iter()
            .find_map(|n| self.fields.get(*n))
            .map(String::as_str)
            .ok_or_else(|| DataError::MissingField {
                record: self.id.clone(),
                field: spec.names[0].to_string(),
            })
    }

    /// Checks the entry against `task`'s profile format: every role is
    /// present and non-empty, and no foreign field appears.
    pub fn validate(&self, task: TaskId) -> Result<(), DataError> {
        let specs = task.profile_fields();
        for name in self.fields.keys() {
            if !specs.iter().any(|s| s.names.contains(&name.as_str())) {
                return Err(DataError::TaskMismatch {
                    record: self.id.clone(),
                    field: name.clone(),
                    task,
                });
            }
        }
        for spec in specs {
            let v = self.field(task, spec.role)?;
            if v.trim().is_empty() {
                return Err(DataError::EmptyField {
                    record: self.id.clone(),
                    field: spec.names[0].to_string(),
                });
            }
        }
        Ok(())
    }
}

/// One benchmark instance: a user's input, expected output and profile.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UserRecord {
    pub user_id: String,
    pub input: String,
    /// Empty until joined with a golds file.
    pub gold: String,
    pub profile: Vec<ProfileEntry>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Dataset {
    pub task: TaskId,
    pub records: Vec<UserRecord>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Attach gold outputs by user id. Every record must receive a gold
    /// and every gold must belong to a record.
    pub fn join_golds(&mut self, golds: &HashMap<String, String>) -> Result<(), DataError> {
        let ids: HashSet<&str> = self.records.iter().map(|r| r.user_id.as_str()).collect();
        let mut orphans: Vec<String> = golds
            .keys()
            .filter(|k| !ids.contains(k.as_str()))
            .cloned()
            .collect();
        orphans.sort();
        let missing: Vec<String> = self
            .records
            .iter()
            .filter(|r| !golds.contains_key(&r.user_id))
            .map(|r| r.user_id.clone())
            .collect();
        if !orphans.is_empty() || !missing.is_empty() {
            return Err(DataError::Join { orphans, missing });
        }
        for r in &mut self.records {
            r.gold = golds[&r.user_id].clone();
        }
        Ok(())
    }

    /// Serializes to the on-disk dataset layout (golds are not included).
    pub fn to_json(&self) -> Value {
        Value::Array(self.records.iter().map(record_to_json).collect())
    }

    /// Golds in the `{task, golds: [{id, output}]}` layout.
    pub fn golds_to_json(&self) -> Value {
        let golds: Vec<Value> = self
            .records
            .iter()
            .map(|r| serde_json::json!({ "id": r.user_id, "output": r.gold }))
            .collect();
        serde_json::json!({ "task": String::from(self.task), "golds": golds })
    }

    pub fn write(&self, dataset_path: &Path, golds_path: Option<&Path>) -> Result<(), DataError> {
        fs::write(
            dataset_path,
            serde_json::to_vec_pretty(&self.to_json()).expect("json"),
        )?;
        if let Some(p) = golds_path {
            fs::write(
                p,
                serde_json::to_vec_pretty(&self.golds_to_json()).expect("json"),
            )?;
        }
        Ok(())
    }
}

fn record_to_json(r: &UserRecord) -> Value {
    let profile: Vec<Value> = r
        .profile
        .iter()
        .map(|e| {
            let mut m = Map::new();
            m.insert("id".into(), Value::String(e.id.clone()));
            for (k, v) in &e.fields {
                m.insert(k.clone(), Value::String(v.clone()));
            }
            if let Some(d) = &e.date {
                m.insert("date".into(), Value::String(d.as_str().to_string()));
            }
            Value::Object(m)
        })
        .collect();
    serde_json::json!({ "id": r.user_id, "input": r.input, "profile": profile })
}

fn byte_offset(text: &str, line: usize, column: usize) -> usize {
    let line_start: usize = text
        .split_inclusive('\n')
        .take(line.saturating_sub(1))
        .map(str::len)
        .sum();
    (line_start + column.saturating_sub(1)).min(text.len())
}

fn parse_json(text: &str) -> Result<Value, DataError> {
    serde_json::from_str(text).map_err(|e| DataError::Parse {
        offset: byte_offset(text, e.line(), e.column()),
        message: e.to_string(),
    })
}

fn scalar_text(v: &Value) -> Option<String> {
    match v {
        Value::String(s) => Some(s.clone()),
        Value::Number(n) => Some(n.to_string()),
        _ => None,
    }
}

fn required<'a>(
    obj: &'a Map<String, Value>,
    record: &str,
    field: &str,
) -> Result<&'a Value, DataError> {
    obj.get(field).ok_or_else(|| DataError::MissingField {
        record: record.to_string(),
        field: field.to_string(),
    })
}

fn parse_entry(task: TaskId, record: &str, v: &Value) -> Result<ProfileEntry, DataError> {
    let obj = v.as_object().ok_or_else(|| DataError::Schema {
        record: record.to_string(),
        message: "profile entry is not an object".into(),
    })?;
    let id = required(obj, record, "id").and_then(|v| {
        scalar_text(v).ok_or_else(|| DataError::Schema {
            record: record.to_string(),
            message: "profile entry id is not a string".into(),
        })
    })?;
    let mut fields = BTreeMap::new();
    let mut date = None;
    for (k, v) in obj {
        match k.as_str() {
            "id" => {}
            "date" => {
                let raw = scalar_text(v).unwrap_or_default();
                date = Some(EntryDate::parse(&raw).ok_or_else(|| DataError::Schema {
                    record: id.clone(),
                    message: format!("unparseable date `{raw}`"),
                })?);
            }
            _ => {
                let text = scalar_text(v).ok_or_else(|| DataError::Schema {
                    record: id.clone(),
                    message: format!("field `{k}` is not text"),
                })?;
                fields.insert(k.clone(), text);
            }
        }
    }
    let entry = ProfileEntry { id, fields, date };
    entry.validate(task)?;
    Ok(entry)
}

/// Parses dataset JSON text (see [`load_dataset`]).
pub fn parse_dataset(text: &str, task: TaskId) -> Result<Dataset, DataError> {
    let root = parse_json(text)?;
    let items = root.as_array().ok_or_else(|| DataError::Schema {
        record: String::new(),
        message: "top level is not an array".into(),
    })?;
    let mut records = Vec::with_capacity(items.len());
    let mut seen = HashSet::new();
    for (i, item) in items.iter().enumerate() {
        let obj = item.as_object().ok_or_else(|| DataError::Schema {
            record: format!("#{i}"),
            message: "record is not an object".into(),
        })?;
        let position = format!("#{i}");
        let user_id = required(obj, &position, "id").and_then(|v| {
            scalar_text(v).ok_or_else(|| DataError::Schema {
                record: position.clone(),
                message: "id is not a string".into(),
            })
        })?;
        let input = required(obj, &user_id, "input")?
            .as_str()
            .unwrap_or_default()
            .to_string();
        if input.trim().is_empty() {
            return Err(DataError::EmptyField {
                record: user_id,
                field: "input".into(),
            });
        }
        let profile_v = required(obj, &user_id, "profile")?
            .as_array()
            .ok_or_else(|| DataError::Schema {
                record: user_id.clone(),
                message: "profile is not an array".into(),
            })?;
        if profile_v.is_empty() {
            return Err(DataError::EmptyField {
                record: user_id,
                field: "profile".into(),
            });
        }
        let profile = profile_v
            .iter()
            .map(|e| parse_entry(task, &user_id, e))
            .collect::<Result<Vec<_>, _>>()?;
        if !seen.insert(user_id.clone()) {
            return Err(DataError::DuplicateId(user_id));
        }
        records.push(UserRecord {
            user_id,
            input,
            gold: String::new(),
            profile,
        });
    }
    Ok(Dataset { task, records })
}

/// Loads a LaMP-layout dataset: a top-level array of
/// `{id, input, profile: [{id, ...task fields..., date?}]}`.
/// Gold outputs stay empty until [`Dataset::join_golds`].
pub fn load_dataset(path: &Path, task: TaskId) -> Result<Dataset, DataError> {
    parse_dataset(&read(path)?, task)
}

/// Parses golds text: either `{task, golds: [{id, output}]}` or a bare
/// `[{id, output}]` array.
pub fn parse_gold_outputs(text: &str) -> Result<HashMap<String, String>, DataError> {
    let root = parse_json(text)?;
    let items = match &root {
        Value::Array(a) => a,
        Value::Object(o) => {
            o.get("golds")
                .and_then(Value::as_array)
                .ok_or_else(|| DataError::Schema {
                    record: String::new(),
                    message: "golds object lacks a `golds` array".into(),
                })?
        }
        _ => {
            return Err(DataError::Schema {
                record: String::new(),
                message: "golds must be an array or object".into(),
            })
        }
    };
    let mut out = HashMap::with_capacity(items.len());
    for (i, item) in items.iter().enumerate() {
        let position = format!("#{i}");
        let obj = item.as_object().ok_or_else(|| DataError::Schema {
            record: position.clone(),
            message: "gold is not an object".into(),
        })?;
        let id = required(obj, &position, "id").map(|v| scalar_text(v).unwrap_or_default())?;
        let output = required(obj, &id, "output").map(|v| scalar_text(v).unwrap_or_default())?;
        if out.insert(id.clone(), output).is_some() {
            return Err(DataError::DuplicateId(id));
        }
    }
    Ok(out)
}

fn read(path: &Path) -> Result<String, DataError> {
    fs::read_to_string(path).map_err(|source| DataError::Read {
        path: path.to_path_buf(),
        source,
    })
}

pub fn load_gold_outputs(path: &Path) -> Result<HashMap<String, String>, DataError> {
    parse_gold_outputs(&read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn headline_record(id: &str, n: usize) -> String {
        let entries: Vec<String> = (0..n)
            .map(|j| format!(r#"{{"id":"{id}-{j}","text":"article {j}","title":"title {j}"}}"#))
            .collect();
        format!(
            r#"{{"id":"{id}","input":"Generate a headline for the following article: X","profile":[{}]}}"#,
            entries.join(",")
        )
    }

    #[test]
    fn single_record_maps_directly() {
        let ds = parse_dataset(&format!("[{}]", headline_record("17", 3)), TaskId::Lamp4).unwrap();
        assert_eq!(ds.len(), 1);
        assert_eq!(ds.records[0].user_id, "17");
        assert_eq!(ds.records[0].profile.len(), 3);
        assert_eq!(ds.records[0].gold, "");
    }

    #[test]
    fn empty_array_is_empty_dataset() {
        assert!(parse_dataset("[]", TaskId::Lamp4).unwrap().is_empty());
    }

    #[test]
    fn parse_error_reports_byte_offset() {
        let text = "[\n  {\"id\": \"1\",, }\n]";
        match parse_dataset(text, TaskId::Lamp4) {
            Err(DataError::Parse { offset, .. }) => assert_eq!(&text[offset..offset + 1], ","),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn missing_field_names_record_and_field() {
        let text = r#"[{"id":"u1","profile":[{"id":"e","text":"a","title":"b"}]}]"#;
        match parse_dataset(text, TaskId::Lamp4) {
            Err(DataError::MissingField { record, field }) => {
                assert_eq!(record, "u1");
                assert_eq!(field, "input");
            }
            other => panic!("{other:?}"),
        }
        let text = r#"[{"id":"u1","input":"x","profile":[{"id":"e","text":"a"}]}]"#;
        assert!(matches!(
            parse_dataset(text, TaskId::Lamp4),
            Err(DataError::MissingField { field, .. }) if field == "title"
        ));
    }

    #[test]
    fn foreign_field_is_task_mismatch() {
        let text =
            r#"[{"id":"u1","input":"x","profile":[{"id":"e","description":"a","tag":"comedy"}]}]"#;
        assert!(matches!(
            parse_dataset(text, TaskId::Lamp4),
            Err(DataError::TaskMismatch { .. })
        ));
        assert!(parse_dataset(text, TaskId::Lamp2).is_ok());
    }

    #[test]
    fn aliases_are_accepted() {
        let text = r#"[{"id":"u1","input":"x","profile":[{"id":"e","tweet":"hello there"}]}]"#;
        let ds = parse_dataset(text, TaskId::Lamp7).unwrap();
        assert_eq!(
            ds.records[0].profile[0]
                .field(TaskId::Lamp7, FieldRole::Text)
                .unwrap(),
            "hello there"
        );
    }

    #[test]
    fn dates_parse_and_bad_dates_fail() {
        assert!(EntryDate::parse("2020-01-01").is_some());
        assert!(EntryDate::parse("2020-01-01T10:11:12").is_some());
        assert!(EntryDate::parse("2020-01-01T10:11:12Z").is_some());
        assert!(EntryDate::parse("yesterday").is_none());
        let text = r#"[{"id":"u1","input":"x","profile":[{"id":"e","text":"t","date":"soon"}]}]"#;
        assert!(matches!(
            parse_dataset(text, TaskId::Lamp7),
            Err(DataError::Schema { .. })
        ));
    }

    #[test]
    fn golds_duplicates_and_join() {
        let golds = parse_gold_outputs(r#"[{"id":"17","output":"5"}]"#).unwrap();
        assert_eq!(golds.len(), 1);
        assert!(matches!(
            parse_gold_outputs(r#"{"task":"LaMP_3","golds":[{"id":"a","output":"1"},{"id":"a","output":"2"}]}"#),
            Err(DataError::DuplicateId(id)) if id == "a"
        ));

        let mut ds =
            parse_dataset(&format!("[{}]", headline_record("17", 1)), TaskId::Lamp4).unwrap();
        let mut extra = golds.clone();
        extra.insert("99".into(), "x".into());
        match ds.join_golds(&extra) {
            Err(DataError::Join { orphans, missing }) => {
                assert_eq!(orphans, vec!["99"]);
                assert!(missing.is_empty());
            }
            other => panic!("{other:?}"),
        }
        ds.join_golds(&golds).unwrap();
        assert_eq!(ds.records[0].gold, "5");
    }

    #[test]
    fn duplicate_user_ids_rejected() {
        let text = format!("[{},{}]", headline_record("a", 1), headline_record("a", 1));
        assert!(matches!(
            parse_dataset(&text, TaskId::Lamp4),
            Err(DataError::DuplicateId(_))
        ));
    }
}

//! Owner-tagged data access accounting.
//!
//! Per-user work reaches profiles, retrieval indices and adapters only
//! through a [`UserScope`], which compares the owner of each resource
//! with the user the work is being done for.

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::data::{ProfileEntry, UserRecord};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Resource {
    Profile,
    Index,
    TrainingData,
    Adapter,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CrossAccess {
    pub accessor: String,
    pub owner: String,
    pub resource: Resource,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct PrivacySummary {
    pub accesses: u64,
    pub cross_user_accesses: u64,
    pub violations: Vec<CrossAccess>,
}

#[derive(Debug, Default)]
pub struct PrivacyAudit {
    accesses: AtomicU64,
    violations: Mutex<Vec<CrossAccess>>,
}

impl PrivacyAudit {
    pub fn new() -> PrivacyAudit {
        PrivacyAudit::default()
    }

    pub fn scope<'a>(&'a self, user: &'a str) -> UserScope<'a> {
        UserScope { user, audit: self }
    }

    fn record(&self, accessor: &str, owner: &str, resource: Resource) {
        self.accesses.fetch_add(1, Ordering::Relaxed);
        if accessor != owner {
            self.violations.lock().unwrap().push(CrossAccess {
                accessor: accessor.to_string(),
                owner: owner.to_string(),
                resource,
            });
        }
    }

    pub fn summary(&self) -> PrivacySummary {
        let mut violations = self.violations.lock().unwrap().clone();
        violations.sort_by(|a, b| (&a.accessor, &a.owner).cmp(&(&b.accessor, &b.owner)));
        PrivacySummary {
            accesses: self.accesses.load(Ordering::Relaxed),
            cross_user_accesses: violations.len() as u64,
            violations,
        }
    }
}

/// Access handle for work done on behalf of one user.
#[derive(Debug, Clone, Copy)]
pub struct UserScope<'a> {
    user: &'a str,
    audit: &'a PrivacyAudit,
}

impl<'a> UserScope<'a> {
    pub fn user(&self) -> &'a str {
        self.user
    }

    pub fn profile<'r>(&self, record: &'r UserRecord) -> &'r [ProfileEntry] {
        self.audit
            .record(self.user, &record.user_id, Resource::Profile);
        &record.profile
    }

    pub fn index_of<'r>(&self, record: &'r UserRecord) -> &'r [ProfileEntry] {
        self.audit
            .record(self.user, &record.user_id, Resource::Index);
        &record.profile
    }

    pub fn training_data<'r>(&self, record: &'r UserRecord) -> &'r [ProfileEntry] {
        self.audit
            .record(self.user, &record.user_id, Resource::TrainingData);
        &record.profile
    }

    /// Key under which `owner`'s adapter is stored.
    pub fn adapter_key<'k>(&self, owner: &'k str) -> &'k str {
        self.audit.record(self.user, owner, Resource::Adapter);
        owner
    }
}

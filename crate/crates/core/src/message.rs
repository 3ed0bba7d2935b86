use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

impl Role {
    pub fn as_str(self) -> &'static str {
        match self {
            Role::System => "system",
            Role::User => "user",
            Role::Assistant => "assistant",
        }
    }
}

/// Where a message came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Origin {
    Model,
    ToolResult,
    Human,
    Framework,
}

/// One role-tagged entry of a conversation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Message {
    pub role: Role,
    pub content: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub stage_tags: Vec<String>,
    pub origin: Origin,
}

impl Message {
    /// Builds a message. Empty (whitespace-only) content is replaced by
    /// `"Continue"` so the non-empty invariant always holds.
    pub fn new(role: Role, content: impl Into<String>, origin: Origin) -> Self {
        let content = content.into();
        let content = if content.trim().is_empty() {
            "Continue".to_string()
        } else {
            content
        };
        Self {
            role,
            content,
            stage_tags: Vec::new(),
            origin,
        }
    }

    pub fn system(content: impl Into<String>) -> Self {
        Self::new(Role::System, content, Origin::Framework)
    }

    pub fn user(content: impl Into<String>) -> Self {
        Self::new(Role::User, content, Origin::Framework)
    }

    pub fn assistant(content: impl Into<String>) -> Self {
        Self::new(Role::Assistant, content, Origin::Model)
    }

    pub fn with_stage_tags(mut self, tags: Vec<String>) -> Self {
        debug_assert!(tags.is_empty() || self.role == Role::Assistant);
        self.stage_tags = tags;
        self
    }
}

//! Prompt assembly: task description, action menu and conversation history.

use std::fmt;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::environment::Observation;
use crate::objects::ObjectId;

pub const TASK_DESCRIPTION: &str = include_str!("../config/task_description.txt");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Message {
    pub role: Role,
    pub content: String,
}

impl Message {
    pub fn new(role: Role, content: impl Into<String>) -> Self {
        Self { role, content: content.into() }
    }
}

/// The task description for `object_count` objects.
pub fn task_description(object_count: u8) -> String {
    let letters: Vec<String> = ObjectId::first(object_count).iter().map(|o| o.to_string()).collect();
    let list = match letters.split_last() {
        Some((last, rest)) if !rest.is_empty() => format!("{}, and {last}", rest.join(", ")),
        Some((last, _)) => last.clone(),
        None => String::new(),
    };
    TASK_DESCRIPTION
        .replace("{object_count}", &object_count.to_string())
        .replace("{object_list}", &list)
}

/// One entry of the numbered action menu.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MenuAction {
    Place(ObjectId),
    Remove(ObjectId),
    Check,
}

impl fmt::Display for MenuAction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MenuAction::Place(o) => write!(f, "place {o}"),
            MenuAction::Remove(o) => write!(f, "remove {o}"),
            MenuAction::Check => f.write_str("check"),
        }
    }
}

/// Menu in fixed order: place each object, remove each object, check.
/// Entry `i` is selected by the number `i + 1`.
pub fn action_menu(object_count: u8) -> Vec<MenuAction> {
    let objects = ObjectId::first(object_count);
    objects
        .iter()
        .map(|&o| MenuAction::Place(o))
        .chain(objects.iter().map(|&o| MenuAction::Remove(o)))
        .chain(std::iter::once(MenuAction::Check))
        .collect()
}

/// Everything a policy sees on one turn.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptContext {
    pub task_description: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub graph_rendering: Option<String>,
    /// Notifications delivered on this turn; they also appear at the end of
    /// `history`, once.
    #[serde(default)]
    pub pending_notifications: Vec<String>,
    pub history: Vec<Message>,
    pub available_actions: Vec<String>,
    /// 1-based index of the step this turn will consume.
    pub step: u32,
    pub steps_remaining: u32,
    pub object_count: u8,
    pub on_detector: Vec<ObjectId>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub last_observation: Option<Observation>,
}

impl PromptContext {
    /// System prompt text: task description, graph rendering (if any), menu.
    pub fn system_text(&self) -> String {
        let mut out = self.task_description.clone();
        if !out.ends_with('\n') {
            out.push('\n');
        }
        if let Some(r) = &self.graph_rendering {
            out.push('\n');
            out.push_str(r);
        }
        out.push('\n');
        out.push_str("Available actions:\n");
        for (i, a) in self.available_actions.iter().enumerate() {
            out.push_str(&format!("  {}. {a}\n", i + 1));
        }
        out.push_str("When you check, add the lines RULE_TYPE: <conjunctive|disjunctive> and BLICKETS: <objects>.\n");
        if self.graph_rendering.is_some() {
            out.push_str("To change context graph state, add a line TRANSITION: <STATE_NAME>.\n");
        }
        out
    }

    /// Full prompt as one string: system text followed by the history.
    pub fn full_text(&self) -> String {
        let mut out = self.system_text();
        for m in &self.history {
            let role = match m.role {
                Role::System => "system",
                Role::User => "user",
                Role::Assistant => "assistant",
            };
            out.push_str(&format!("\n[{role}]\n{}\n", m.content));
        }
        out
    }

    /// Stable SHA-256 digest of [`full_text`](Self::full_text), hex encoded.
    pub fn digest(&self) -> String {
        hex::encode(Sha256::digest(self.full_text().as_bytes()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn task_description_lists_objects() {
        let five = task_description(5);
        assert!(five.contains("There are 5 objects: A, B, C, D, and E. Some may be"));
        assert!(task_description(3).contains("There are 3 objects: A, B, and C."));
        assert!(five.ends_with("ACTION: <number or action name>\n"));
    }

    #[test]
    fn menu_numbering() {
        let menu = action_menu(5);
        assert_eq!(menu.len(), 11);
        assert_eq!(menu[0].to_string(), "place A");
        assert_eq!(menu[5].to_string(), "remove A");
        assert_eq!(menu[10], MenuAction::Check);
    }

    #[test]
    fn digest_is_stable_and_content_sensitive() {
        let ctx = PromptContext {
            task_description: task_description(3),
            graph_rendering: None,
            pending_notifications: vec![],
            history: vec![Message::new(Role::User, "hello")],
            available_actions: action_menu(3).iter().map(|a| a.to_string()).collect(),
            step: 1,
            steps_remaining: 50,
            object_count: 3,
            on_detector: vec![],
            last_observation: None,
        };
        assert_eq!(ctx.digest(), ctx.clone().digest());
        assert_eq!(ctx.digest().len(), 64);
        let mut other = ctx.clone();
        other.history.push(Message::new(Role::Assistant, "ACTION: 1"));
        assert_ne!(ctx.digest(), other.digest());
        assert!(!ctx.system_text().contains("TRANSITION"));
    }
}

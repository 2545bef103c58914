use std::io;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::Dialogue;

pub const DIALOGUE_PLACEHOLDER: &str = "{dialogue}";

const SYSTEM_TEMPLATE: &str = include_str!("../../assets/prompts/system.txt");
const USER_TEMPLATE: &str = include_str!("../../assets/prompts/user.txt");

/// How the seed dialogue is laid out inside the user prompt.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DialogueRendering {
    /// `A: text`, one utterance per line.
    #[default]
    Tagged,
    /// Bare text, one utterance per line.
    Plain,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Prompt {
    pub system: String,
    pub user: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplates {
    pub system: String,
    pub user: String,
}

impl Default for PromptTemplates {
    fn default() -> Self {
        PromptTemplates { system: SYSTEM_TEMPLATE.to_string(), user: USER_TEMPLATE.to_string() }
    }
}

impl PromptTemplates {
    /// Loads replacement templates; the user template must contain `{dialogue}`.
    pub fn load(system: &Path, user: &Path) -> io::Result<Self> {
        let templates = PromptTemplates { system: std::fs::read_to_string(system)?, user: std::fs::read_to_string(user)? };
        if !templates.user.contains(DIALOGUE_PLACEHOLDER) {
            return Err(io::Error::new(
                io::ErrorKind::InvalidData,
                format!("{} lacks the {DIALOGUE_PLACEHOLDER} placeholder", user.display()),
            ));
        }
        Ok(templates)
    }

    pub fn build(&self, d: &Dialogue, rendering: DialogueRendering) -> Prompt {
        Prompt {
            system: self.system.clone(),
            user: self.user.replacen(DIALOGUE_PLACEHOLDER, &render_dialogue(d, rendering), 1),
        }
    }

    /// The user-template text preceding the dialogue.
    pub fn user_prefix(&self) -> &str {
        self.user.split(DIALOGUE_PLACEHOLDER).next().unwrap_or("")
    }
}

/// One line per utterance. Line breaks inside an utterance become spaces so
/// that line count equals utterance count.
pub fn render_dialogue(d: &Dialogue, rendering: DialogueRendering) -> String {
    d.utterances
        .iter()
        .map(|u| {
            let text = u.text.trim().replace(['\r', '\n'], " ");
            match rendering {
                DialogueRendering::Tagged => format!("{}: {}", u.speaker.tag(), text),
                DialogueRendering::Plain => text,
            }
        })
        .collect::<Vec<_>>()
        .join("\n")
}

/// Prompt for `d` using the built-in templates and tagged rendering.
pub fn build_prompt(d: &Dialogue) -> Prompt {
    PromptTemplates::default().build(d, DialogueRendering::Tagged)
}

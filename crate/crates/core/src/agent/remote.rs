use serde_json::json;

use super::{summary_line, ActionIntent, AgentMemory, LogEntry, Policy, PolicyContext, Summarizer};
use crate::reasoner::remote::{extract_json, render, ChatClient, PromptTemplates};
use crate::task::Subtask;
use crate::world::{Action, Observation, ALL_ACTION_KINDS};

fn describe(obs: &Observation) -> String {
    let inv: Vec<String> = obs.me.inventory.iter().map(|(k, n)| format!("{n} {k}")).collect();
    let mut lines = vec![
        format!("you are agent {} at {}", obs.agent, obs.me.pos),
        format!("inventory: {}", if inv.is_empty() { "empty".to_string() } else { inv.join(", ") }),
        format!("equipped: {}", obs.me.equipped.as_deref().unwrap_or("nothing")),
    ];
    for (p, c) in &obs.containers {
        let items: Vec<String> = c.iter().map(|(k, n)| format!("{n} {k}")).collect();
        lines.push(format!("container at {p}: {}", items.join(", ")));
    }
    for e in &obs.entities {
        lines.push(format!("{} at {}", e.kind, e.pos));
    }
    for (id, a) in &obs.teammates {
        lines.push(format!("agent {id} at {}", a.pos));
    }
    lines.join("\n")
}

/// Asks a chat model for the next action. Replies that do not parse as an
/// action are treated as "no way forward".
pub struct RemotePolicy {
    client: ChatClient,
    templates: PromptTemplates,
}

impl RemotePolicy {
    pub fn new(client: ChatClient, templates: PromptTemplates) -> Self {
        Self { client, templates }
    }
}

impl Policy for RemotePolicy {
    fn next(&self, subtask: &Subtask, obs: &Observation, memory: &AgentMemory, _ctx: &PolicyContext<'_>) -> Option<ActionIntent> {
        let actions: Vec<String> = ALL_ACTION_KINDS.iter().map(|k| k.to_string()).collect();
        let step = json!({"id": subtask.id, "description": subtask.description, "step": subtask.action}).to_string();
        let prompt = render(
            &self.templates.act,
            &[
                ("subtask", &step),
                ("observation", &describe(obs)),
                ("summary", &memory.running_summary),
                ("actions", &actions.join(", ")),
            ],
        );
        let reply = match self.client.complete(&self.templates.system, &prompt) {
            Ok(r) => r,
            Err(e) => {
                log::warn!("remote policy unavailable: {e}");
                return None;
            }
        };
        let action: Action = serde_json::from_value(extract_json(&reply)?).ok()?;
        Some(ActionIntent::own(obs.agent, action))
    }
}

pub struct RemoteSummarizer {
    client: ChatClient,
    templates: PromptTemplates,
}

impl RemoteSummarizer {
    pub fn new(client: ChatClient, templates: PromptTemplates) -> Self {
        Self { client, templates }
    }
}

impl Summarizer for RemoteSummarizer {
    fn summarize(&self, summary: &str, fresh: &[LogEntry]) -> Option<String> {
        let log: Vec<String> = fresh
            .iter()
            .map(|e| summary_line(e).unwrap_or_else(|| format!("{} -> {:?}", e.intent.action.kind(), e.result.reason)))
            .collect();
        let prompt = render(&self.templates.summarize, &[("summary", summary), ("log", &log.join("\n"))]);
        let reply = self.client.complete(&self.templates.system, &prompt).ok()?;
        extract_json(&reply)?.get("summary")?.as_str().map(str::to_string)
    }
}

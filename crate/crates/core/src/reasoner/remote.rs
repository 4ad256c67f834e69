//! Chat-completion backed reasoner. Only used when an endpoint is configured.

use std::collections::HashMap;
use std::path::Path;
use std::sync::{Condvar, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use super::{DependencyQuery, Reasoner, ReasonerError, VerdictDistribution};
use crate::planner::{infer_postcondition, DecomposeOptions, EnvSummary, Goal};
use crate::rules::{Polarity, Verdict};
use crate::task::{ActionSpec, Postcondition, Subtask};

pub const ENDPOINT_VAR: &str = "REASONER_ENDPOINT";
pub const API_KEY_VAR: &str = "REASONER_API_KEY";
pub const MODEL_VAR: &str = "REASONER_MODEL";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChatConfig {
    pub endpoint: String,
    #[serde(default)]
    pub api_key: Option<String>,
    #[serde(default = "default_model")]
    pub model: String,
    #[serde(default = "default_timeout")]
    pub timeout_secs: u64,
    #[serde(default = "default_in_flight")]
    pub max_in_flight: usize,
    #[serde(default = "default_temperature")]
    pub temperature: f64,
}

fn default_model() -> String {
    "gpt-4o".into()
}
fn default_timeout() -> u64 {
    60
}
fn default_in_flight() -> usize {
    4
}
fn default_temperature() -> f64 {
    0.7
}

impl ChatConfig {
    pub fn new(endpoint: impl Into<String>) -> Self {
        Self {
            endpoint: endpoint.into(),
            api_key: None,
            model: default_model(),
            timeout_secs: default_timeout(),
            max_in_flight: default_in_flight(),
            temperature: default_temperature(),
        }
    }

    /// Reads the endpoint and credential from the environment. `None` when no
    /// endpoint is set.
    pub fn from_env() -> Option<Self> {
        let endpoint = std::env::var(ENDPOINT_VAR).ok().filter(|s| !s.trim().is_empty())?;
        let mut cfg = Self::new(endpoint);
        cfg.api_key = std::env::var(API_KEY_VAR).ok().filter(|s| !s.is_empty());
        if let Ok(m) = std::env::var(MODEL_VAR) {
            cfg.model = m;
        }
        Some(cfg)
    }
}

struct Semaphore {
    free: Mutex<usize>,
    cv: Condvar,
}

impl Semaphore {
    fn new(n: usize) -> Self {
        Self { free: Mutex::new(n.max(1)), cv: Condvar::new() }
    }

    fn acquire(&self) -> Permit<'_> {
        let mut free = self.free.lock().unwrap_or_else(|e| e.into_inner());
        while *free == 0 {
            free = self.cv.wait(free).unwrap_or_else(|e| e.into_inner());
        }
        *free -= 1;
        Permit(self)
    }
}

struct Permit<'a>(&'a Semaphore);

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        *self.0.free.lock().unwrap_or_else(|e| e.into_inner()) += 1;
        self.0.cv.notify_one();
    }
}

/// Minimal blocking chat-completion client with a bound on in-flight calls.
pub struct ChatClient {
    config: ChatConfig,
    agent: ureq::Agent,
    gate: Semaphore,
}

impl ChatClient {
    pub fn new(config: ChatConfig) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(config.timeout_secs)))
            .build()
            .into();
        let gate = Semaphore::new(config.max_in_flight);
        Self { config, agent, gate }
    }

    pub fn config(&self) -> &ChatConfig {
        &self.config
    }

    /// Sends one system + user exchange and returns the assistant text.
    pub fn complete(&self, system: &str, user: &str) -> Result<String, ReasonerError> {
        let _permit = self.gate.acquire();
        let body = json!({
            "model": self.config.model,
            "temperature": self.config.temperature,
            "messages": [
                {"role": "system", "content": system},
                {"role": "user", "content": user},
            ],
        });
        let mut req = self.agent.post(&self.config.endpoint);
        if let Some(key) = &self.config.api_key {
            req = req.header("Authorization", &format!("Bearer {key}"));
        }
        let unavailable = |e: ureq::Error| ReasonerError::RemoteUnavailable(e.to_string());
        let reply: Value = req.send_json(&body).map_err(unavailable)?.body_mut().read_json().map_err(unavailable)?;
        reply
            .pointer("/choices/0/message/content")
            .and_then(Value::as_str)
            .map(str::to_string)
            .ok_or_else(|| ReasonerError::RemoteUnavailable("response has no message content".into()))
    }
}

/// Prompt templates with `{placeholder}` slots.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PromptTemplates {
    pub system: String,
    /// Slots: `{rules}`, `{nodes}`, `{node_id}`.
    pub dependency: String,
    /// Slots: `{task}`, `{env}`, `{actions}`.
    pub decompose: String,
    /// Slots: `{summary}`, `{log}`.
    pub summarize: String,
    /// Slots: `{subtask}`, `{observation}`, `{summary}`, `{actions}`.
    pub act: String,
}

impl Default for PromptTemplates {
    fn default() -> Self {
        Self {
            system: "You plan work for a team of agents in a voxel crafting game. Reply with JSON only.".into(),
            dependency: concat!(
                "Game rules:\n{rules}\n\n",
                "Steps:\n{nodes}\n\n",
                "List every step that directly depends on step {node_id}, and every step it directly depends on. ",
                "Answer as {\"causal effect\": [{\"chosen_node\": <id>, \"target_node\": <id>}]} where chosen_node must ",
                "finish before target_node. Use an empty list when there is no dependency."
            )
            .into(),
            decompose: concat!(
                "Goal:\n{task}\n\nEnvironment:\n{env}\n\nAvailable actions:\n{actions}\n\n",
                "Split the goal into steps. Answer as {\"nodes\": [{\"id\": <n starting at 1>, \"description\": <text>, ",
                "\"step\": <action spec object with a \"kind\" field>}]}."
            )
            .into(),
            summarize: concat!(
                "Current summary:\n{summary}\n\nNew actions and results:\n{log}\n\n",
                "Rewrite the summary in a few short lines. Answer as {\"summary\": <text>}."
            )
            .into(),
            act: concat!(
                "Your step: {subtask}\n\nWhat you see:\n{observation}\n\nSo far:\n{summary}\n\nActions:\n{actions}\n\n",
                "Choose the next action. Answer as {\"action\": <name>, ...parameters} or {\"done\": true}."
            )
            .into(),
        }
    }
}

impl PromptTemplates {
    pub fn load(path: &Path) -> std::io::Result<Self> {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))
    }
}

pub(crate) fn render(template: &str, slots: &[(&str, &str)]) -> String {
    let mut out = template.to_string();
    for (k, v) in slots {
        out = out.replace(&format!("{{{k}}}"), v);
    }
    out
}

/// Pulls the outermost JSON object out of free-form text.
pub(crate) fn extract_json(text: &str) -> Option<Value> {
    let start = text.find('{')?;
    let end = text.rfind('}')?;
    if end < start {
        return None;
    }
    serde_json::from_str(&text[start..=end]).ok()
}

fn as_id(v: &Value) -> Option<u64> {
    v.as_u64().or_else(|| v.as_str().and_then(|s| s.trim().parse().ok()))
}

/// Reads a dependency verdict for `(p, q)`; `None` means the reply was not
/// usable.
pub(crate) fn parse_verdict(text: &str, p: u32, q: u32) -> Option<Verdict> {
    let v = extract_json(text)?;
    let list = v.get("causal effect").or_else(|| v.get("causal_effect"))?.as_array()?;
    let (mut pq, mut qp) = (false, false);
    for e in list {
        let (a, b) = (as_id(e.get("chosen_node")?)?, as_id(e.get("target_node")?)?);
        pq |= (a, b) == (u64::from(p), u64::from(q));
        qp |= (a, b) == (u64::from(q), u64::from(p));
    }
    match (pq, qp) {
        (true, false) => Some(Verdict::EdgePQ),
        (false, true) => Some(Verdict::EdgeQP),
        (false, false) => Some(Verdict::NoEdge),
        (true, true) => None,
    }
}

pub struct RemoteReasoner {
    client: ChatClient,
    templates: PromptTemplates,
    samples: u32,
    cache: Mutex<HashMap<[u8; 32], VerdictDistribution>>,
}

impl RemoteReasoner {
    pub fn new(client: ChatClient, templates: PromptTemplates, samples: u32) -> Self {
        Self { client, templates, samples: samples.max(1), cache: Mutex::new(HashMap::new()) }
    }

    pub fn from_env() -> Option<Self> {
        ChatConfig::from_env().map(|c| Self::new(ChatClient::new(c), PromptTemplates::default(), 3))
    }

    pub fn client(&self) -> &ChatClient {
        &self.client
    }

    fn dependency_prompt(&self, q: &DependencyQuery<'_>) -> String {
        let rules: Vec<String> = q
            .rules
            .rules
            .iter()
            .map(|(r, pol)| {
                let text = match pol {
                    Polarity::Normal => &r.statement,
                    Polarity::Counterfactual => &r.counterfactual,
                };
                format!("{}. {}", r.id, text)
            })
            .collect();
        let nodes = json!([
            {"id": q.p.id, "description": q.p.description, "step": q.p.action},
            {"id": q.q.id, "description": q.q.description, "step": q.q.action},
        ]);
        render(
            &self.templates.dependency,
            &[("rules", &rules.join("\n")), ("nodes", &nodes.to_string()), ("node_id", &q.p.id.to_string())],
        )
    }

    fn sample(&self, prompt: &str, p: u32, q: u32) -> Result<Verdict, ReasonerError> {
        for _ in 0..2 {
            let reply = self.client.complete(&self.templates.system, prompt)?;
            if let Some(v) = parse_verdict(&reply, p, q) {
                return Ok(v);
            }
            log::debug!("unusable dependency reply for ({p}, {q}); resampling");
        }
        Ok(Verdict::NoEdge)
    }
}

impl Reasoner for RemoteReasoner {
    fn query(&self, q: &DependencyQuery<'_>) -> Result<VerdictDistribution, ReasonerError> {
        if q.p.id == q.q.id {
            return Err(ReasonerError::IdenticalPair(q.p.id));
        }
        let prompt = self.dependency_prompt(q);
        let key: [u8; 32] = Sha256::digest(prompt.as_bytes()).into();
        if let Some(d) = self.cache.lock().unwrap_or_else(|e| e.into_inner()).get(&key) {
            return Ok(*d);
        }
        let verdicts =
            (0..self.samples).map(|_| self.sample(&prompt, q.p.id, q.q.id)).collect::<Result<Vec<_>, _>>()?;
        let d = VerdictDistribution::empirical(&verdicts);
        self.cache.lock().unwrap_or_else(|e| e.into_inner()).insert(key, d);
        Ok(d)
    }

    fn samples(&self) -> u32 {
        self.samples
    }

    fn decompose(&self, goal: &Goal, env: &EnvSummary, _opts: &DecomposeOptions) -> Result<Vec<Subtask>, ReasonerError> {
        let actions = serde_json::to_string(&crate::world::ALL_ACTION_KINDS).unwrap_or_default();
        let prompt = render(
            &self.templates.decompose,
            &[
                ("task", &serde_json::to_string(goal).unwrap_or_default()),
                ("env", &env.describe()),
                ("actions", &actions),
            ],
        );
        let reply = self.client.complete(&self.templates.system, &prompt)?;
        let parsed = parse_nodes(&reply);
        if parsed.is_empty() {
            return Err(ReasonerError::DecompositionFailed("reply contained no usable steps".into()));
        }
        Ok(parsed)
    }
}

#[derive(Deserialize)]
struct NodeReply {
    #[serde(default)]
    description: String,
    step: ActionSpec,
    #[serde(default)]
    postcondition: Option<Postcondition>,
    #[serde(default)]
    score: Option<f64>,
}

/// Parses a decomposition reply. Ids are reassigned from 1 in reply order;
/// unparseable nodes are dropped.
pub(crate) fn parse_nodes(text: &str) -> Vec<Subtask> {
    let Some(v) = extract_json(text) else { return Vec::new() };
    let Some(nodes) = v.get("nodes").and_then(Value::as_array) else { return Vec::new() };
    nodes
        .iter()
        .filter_map(|n| serde_json::from_value::<NodeReply>(n.clone()).ok())
        .enumerate()
        .map(|(i, n)| {
            let post = n.postcondition.unwrap_or_else(|| infer_postcondition(&n.step));
            Subtask::new(i as u32 + 1, n.description, n.step, post).with_score(n.score.unwrap_or(1.0))
        })
        .collect()
}

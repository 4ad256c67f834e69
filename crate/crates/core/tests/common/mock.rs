//! Loopback stand-in for a chat-completion endpoint.

use std::collections::BTreeSet;
use std::io::{BufRead, BufReader, Read, Write};
use std::net::{TcpListener, TcpStream};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use causeway::reasoner::{DeterministicReasoner, DependencyQuery, Reasoner};
use causeway::rules::{EffectiveRules, Polarity, Verdict};
use causeway::task::{ActionSpec, Postcondition};
use causeway::{RuleSet, Subtask, SubtaskId};
use serde_json::{json, Value};

pub struct MockServer {
    pub url: String,
    pub requests: Arc<AtomicUsize>,
}

fn handle(stream: TcpStream, respond: &(dyn Fn(&str) -> String + Send + Sync)) -> std::io::Result<()> {
    let mut reader = BufReader::new(stream.try_clone()?);
    let mut length = 0usize;
    loop {
        let mut line = String::new();
        if reader.read_line(&mut line)? == 0 {
            return Ok(());
        }
        let line = line.trim_end();
        if line.is_empty() {
            break;
        }
        if let Some((k, v)) = line.split_once(':') {
            if k.eq_ignore_ascii_case("content-length") {
                length = v.trim().parse().unwrap_or(0);
            }
        }
    }
    let mut body = vec![0; length];
    reader.read_exact(&mut body)?;
    let request: Value = serde_json::from_slice(&body).unwrap_or(Value::Null);
    let user = request.pointer("/messages/1/content").and_then(Value::as_str).unwrap_or("");
    let reply = json!({"choices": [{"message": {"role": "assistant", "content": respond(user)}}]}).to_string();
    let mut out = stream;
    write!(
        out,
        "HTTP/1.1 200 OK\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{reply}",
        reply.len()
    )?;
    out.flush()
}

/// Serves `respond(user_message)` as the assistant reply on 127.0.0.1.
pub fn serve(respond: impl Fn(&str) -> String + Send + Sync + 'static) -> MockServer {
    let listener = TcpListener::bind("127.0.0.1:0").expect("bind loopback");
    let url = format!("http://{}/v1/chat/completions", listener.local_addr().unwrap());
    let requests = Arc::new(AtomicUsize::new(0));
    let count = requests.clone();
    let respond: Arc<dyn Fn(&str) -> String + Send + Sync> = Arc::new(respond);
    std::thread::spawn(move || {
        for stream in listener.incoming().flatten() {
            count.fetch_add(1, Ordering::SeqCst);
            let respond = respond.clone();
            std::thread::spawn(move || {
                let _ = handle(stream, &*respond);
            });
        }
    });
    MockServer { url, requests }
}

fn between<'a>(text: &'a str, start: &str, end: &str) -> Option<&'a str> {
    let from = text.find(start)? + start.len();
    let to = text[from..].find(end).map_or(text.len(), |i| from + i);
    Some(&text[from..to])
}

/// A model that answers dependency questions exactly by the rules it is
/// shown, plus a fixed set of unfounded dependencies, and follows each step
/// literally when asked to act.
pub struct ScriptedModel {
    pub rules: RuleSet,
    pub decomposition: Value,
    pub unfounded: BTreeSet<(SubtaskId, SubtaskId)>,
}

impl ScriptedModel {
    pub fn respond(&self, user: &str) -> String {
        if user.contains("List every step that directly depends") {
            self.dependencies(user).unwrap_or_else(|| "I cannot tell.".into())
        } else if user.contains("Split the goal into steps") {
            self.decomposition.to_string()
        } else if user.contains("Choose the next action") {
            self.act(user).unwrap_or_else(|| "no idea".into())
        } else if user.contains("Rewrite the summary") {
            json!({"summary": "working"}).to_string()
        } else {
            String::new()
        }
    }

    fn dependencies(&self, user: &str) -> Option<String> {
        let shown = between(user, "Game rules:\n", "\n\nSteps:")?;
        let mut effective = EffectiveRules { rules: Vec::new() };
        for line in shown.lines() {
            let (id, text) = line.split_once(". ")?;
            let rule = self.rules.get(id.parse().ok()?)?;
            let polarity = if text == rule.statement { Polarity::Normal } else { Polarity::Counterfactual };
            effective.rules.push((rule.clone(), polarity));
        }
        let nodes: Vec<Value> = serde_json::from_str(between(user, "Steps:\n", "\n\nList every")?).ok()?;
        let subtask = |n: &Value| -> Option<Subtask> {
            let id = n.get("id")?.as_u64()? as SubtaskId;
            let step: ActionSpec = serde_json::from_value(n.get("step")?.clone()).ok()?;
            Some(Subtask::new(id, "", step, Postcondition::ActionSucceeded))
        };
        let (p, q) = (subtask(nodes.first()?)?, subtask(nodes.get(1)?)?);
        let verdict = if self.unfounded.contains(&(p.id, q.id)) {
            Verdict::EdgePQ
        } else if self.unfounded.contains(&(q.id, p.id)) {
            Verdict::EdgeQP
        } else {
            let d = DeterministicReasoner.query(&DependencyQuery::new(&effective, &p, &q)).ok()?;
            if d.p_edge_pq > 0.5 {
                Verdict::EdgePQ
            } else if d.p_edge_qp > 0.5 {
                Verdict::EdgeQP
            } else {
                Verdict::NoEdge
            }
        };
        let list = match verdict {
            Verdict::EdgePQ => json!([{"chosen_node": p.id, "target_node": q.id}]),
            Verdict::EdgeQP => json!([{"chosen_node": q.id, "target_node": p.id}]),
            _ => json!([]),
        };
        Some(format!("Here you go: {}", json!({"causal effect": list})))
    }

    fn act(&self, user: &str) -> Option<String> {
        let step: Value = serde_json::from_str(between(user, "Your step: ", "\n\n")?).ok()?;
        let spec: ActionSpec = serde_json::from_value(step.get("step")?.clone()).ok()?;
        let action = match serde_json::to_value(spec.kind).ok()?.as_str()? {
            "withdraw_item" => json!({
                "action": "withdraw_item", "container": spec.container?, "item": spec.item?, "amount": spec.amount.unwrap_or(1)
            }),
            "equip" => json!({"action": "equip", "item": spec.item?}),
            "place_block" => json!({"action": "place_block", "item": spec.item?, "pos": spec.pos?}),
            "toggle" => json!({"action": "toggle", "pos": spec.pos?}),
            _ => return None,
        };
        Some(action.to_string())
    }
}

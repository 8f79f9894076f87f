//! HTTP adapters for externally hosted policies and trigger evaluators.
//!
//! Both speak one JSON request shape, `POST`ed to a configured URL:
//!
//! ```json
//! { "kind": "policy", "system": "...", "messages": [{"role": "user", "content": "..."}], "metadata": {...} }
//! ```
//!
//! The reply body is the model's raw text. Non-2xx statuses, transport
//! failures and timeouts surface as [`PolicyError`] / [`EvaluatorError`].

use std::time::Duration;

use serde::Serialize;
use serde_json::{Value, json};

use crate::harness::{Policy, PolicyError};
use crate::monitor::{BehaviorSet, BehaviorSpec, CondensedContext, EvaluatorError, TriggerEvaluator, parse_score};
use crate::prompt::{Message, PromptContext, Role};

pub const POLICY_URL_ENV: &str = "BLICKET_POLICY_URL";
pub const EVALUATOR_URL_ENV: &str = "BLICKET_EVALUATOR_URL";
pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(120);

#[derive(Debug, Clone, Serialize)]
pub struct WireRequest<'a> {
    pub kind: &'static str,
    pub system: String,
    pub messages: &'a [Message],
    pub metadata: Value,
}

enum WireFailure {
    Timeout(String),
    Transport(String),
}

#[derive(Debug, Clone)]
struct Endpoint {
    url: String,
    agent: ureq::Agent,
}

impl Endpoint {
    fn new(url: impl Into<String>, timeout: Duration) -> Self {
        let agent = ureq::Agent::config_builder().timeout_global(Some(timeout)).build().into();
        Self { url: url.into(), agent }
    }

    fn post(&self, request: &WireRequest<'_>) -> Result<String, WireFailure> {
        let response = self.agent.post(&self.url).send_json(request);
        let mut response = match response {
            Ok(r) => r,
            Err(ureq::Error::Timeout(t)) => return Err(WireFailure::Timeout(t.to_string())),
            Err(e) => return Err(WireFailure::Transport(e.to_string())),
        };
        response.body_mut().read_to_string().map_err(|e| match e {
            ureq::Error::Timeout(t) => WireFailure::Timeout(t.to_string()),
            e => WireFailure::Transport(e.to_string()),
        })
    }
}

/// Policy backed by an HTTP endpoint.
#[derive(Debug, Clone)]
pub struct ExternalPolicy {
    endpoint: Endpoint,
    label: String,
}

impl ExternalPolicy {
    pub fn new(url: impl Into<String>, timeout: Duration) -> Self {
        let endpoint = Endpoint::new(url, timeout);
        let label = format!("external({})", endpoint.url);
        Self { endpoint, label }
    }

    pub fn from_env() -> Option<Self> {
        std::env::var(POLICY_URL_ENV).ok().filter(|u| !u.is_empty()).map(|u| Self::new(u, DEFAULT_TIMEOUT))
    }

    pub fn with_label(mut self, label: impl Into<String>) -> Self {
        self.label = label.into();
        self
    }
}

impl Policy for ExternalPolicy {
    fn name(&self) -> String {
        self.label.clone()
    }

    fn decide(&mut self, ctx: &PromptContext) -> Result<String, PolicyError> {
        let request = WireRequest {
            kind: "policy",
            system: ctx.system_text(),
            messages: &ctx.history,
            metadata: json!({
                "step": ctx.step,
                "steps_remaining": ctx.steps_remaining,
                "object_count": ctx.object_count,
                "available_actions": ctx.available_actions,
                "prompt_digest": ctx.digest(),
            }),
        };
        self.endpoint.post(&request).map_err(|f| match f {
            WireFailure::Timeout(m) => PolicyError::Timeout(m),
            WireFailure::Transport(m) => PolicyError::Transport(m),
        })
    }
}

/// Trigger evaluator backed by an HTTP endpoint. The reply must start with
/// a number.
#[derive(Debug, Clone)]
pub struct ExternalEvaluator {
    endpoint: Endpoint,
}

impl ExternalEvaluator {
    pub fn new(url: impl Into<String>, timeout: Duration) -> Self {
        Self { endpoint: Endpoint::new(url, timeout) }
    }

    pub fn from_env() -> Option<Self> {
        std::env::var(EVALUATOR_URL_ENV).ok().filter(|u| !u.is_empty()).map(|u| Self::new(u, DEFAULT_TIMEOUT))
    }
}

impl TriggerEvaluator for ExternalEvaluator {
    fn name(&self) -> String {
        format!("external({})", self.endpoint.url)
    }

    fn score(&self, set: &BehaviorSet, spec: &BehaviorSpec, ctx: &CondensedContext) -> Result<f64, EvaluatorError> {
        let messages = [Message::new(Role::User, set.evaluation_text(spec, ctx))];
        let request = WireRequest {
            kind: "evaluator",
            system: String::new(),
            messages: &messages,
            metadata: json!({
                "behavior_id": spec.id,
                "evaluation_prompt": spec.evaluation_prompt,
                "current_state": ctx.current_state,
                "exploration_summary": ctx.exploration_summary,
                "recent_messages": ctx.recent_messages,
            }),
        };
        let text = self.endpoint.post(&request).map_err(|f| match f {
            WireFailure::Timeout(m) => EvaluatorError::Unavailable(format!("timeout: {m}")),
            WireFailure::Transport(m) => EvaluatorError::Unavailable(m),
        })?;
        parse_score(&text)
    }
}

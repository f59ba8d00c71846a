//! Hosted-model probe for the Mastermind task: exact prompt construction, a
//! backend client with token-logprob retrieval, format-checked response
//! parsing with retries, and coding-curve extraction.
//!
//! The full pipeline runs offline against mock backends; the HTTP backend
//! targets chat-completions-style endpoints with credentials taken from an
//! environment variable.

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::error::{Error, Result};
use crate::eval::{ErrorKind, PrequentialCurve};
use crate::tasks::{mastermind_response, Episode};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeConfig {
    pub temperature: f64,
    pub max_retries: usize,
    pub top_logprobs: usize,
    pub model: String,
    /// Surrogate probability of a point prediction being wrong, used when a
    /// backend returns no logprobs: the predicted digit gets `1 − eps`, the
    /// other eight share `eps`.
    pub surrogate_eps: f64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        ProbeConfig {
            temperature: 0.0,
            max_retries: 10,
            top_logprobs: 9,
            model: "offline-mock".into(),
            surrogate_eps: 0.1,
        }
    }
}

/// One token of a backend reply with its top-k alternatives.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenLogprob {
    pub token: String,
    pub logprob: f64,
    pub top: Vec<(String, f64)>,
}

/// A raw backend reply.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackendReply {
    pub text: String,
    pub token_logprobs: Option<Vec<TokenLogprob>>,
}

/// A completion backend. Implementations must not see anything beyond the
/// prompt.
pub trait ProbeBackend {
    fn complete(&mut self, prompt: &str, config: &ProbeConfig) -> Result<BackendReply>;
    fn name(&self) -> String;
}

// ---------------------------------------------------------------------------
// Prompt construction
// ---------------------------------------------------------------------------

const PROMPT_HEADER: &str = "I have a secret code in mind. It's a 8-digit code with each digit ranging between 0 and 5. I'll give you a couple example guesses, and for each guess I'll tell you two numbers:

- First number: the number of correct correct digits at their correct position.
- Second number: the number of correct digits, which aren't necessarily in the correct position.

Here's a demo to show you what a guess and response would look like. Imagine my secret code was:
0 5 2 1 3 4 2 4
And imagine the guess I presented you was:
0 2 1 1 0 2 0 4
Then, the response would be:
3 5

The response is the way it is because the first, forth and last digit were in the correct place (first response number is therefore 3) and additionally the second and sixth digit were in the guess but at the wrong position (second response number is therefore 5).

The game is about to start. I'll present you with a series of guesses and their responses. Finally, I will present you with a new guess, and you'll have to predict the correct response. Make sure your response is formatted the same way as in the examples (i.e., with 2 digits between 0-8, separated by a space). Let's begin.

----------------------

";

const PROMPT_FOOTER: &str = "-----------

What do you think the response is for this final guess? Make sure to reply with just 2 digits between 0-8, separated by a single space character.";

fn digits_line(digits: &[u8]) -> String {
    digits
        .iter()
        .map(|d| d.to_string())
        .collect::<Vec<_>>()
        .join(" ")
}

/// Byte-exact prompt: task description and worked demo, the observed
/// guess/response blocks, and the final query with `? ?`.
pub fn build_prompt(examples: &[(Vec<u8>, (u8, u8))], query: &[u8]) -> String {
    let mut out = String::from(PROMPT_HEADER);
    for (guess, (a, b)) in examples {
        out.push_str(&format!(
            "Guess: {}\nResponse: {} {}\n\n",
            digits_line(guess),
            a,
            b
        ));
    }
    out.push_str(&format!(
        "Guess: {}\nResponse: ? ?\n\n",
        digits_line(query)
    ));
    out.push_str(PROMPT_FOOTER);
    out
}

/// Accepts exactly two whitespace-separated integers in 0..8.
pub fn parse_response(text: &str) -> Result<(u8, u8)> {
    let tokens: Vec<&str> = text.split_whitespace().collect();
    if tokens.len() != 2 {
        return Err(Error::ProbeFormat(text.to_string()));
    }
    let mut vals = [0u8; 2];
    for (i, tok) in tokens.iter().enumerate() {
        match tok.parse::<u8>() {
            Ok(v) if v <= 8 => vals[i] = v,
            _ => return Err(Error::ProbeFormat(text.to_string())),
        }
    }
    Ok((vals[0], vals[1]))
}

// ---------------------------------------------------------------------------
// Retries and scoring
// ---------------------------------------------------------------------------

/// A parsed, scored probe reply.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeResult {
    pub predicted: (u8, u8),
    pub token_logprobs: Option<Vec<TokenLogprob>>,
    pub retries_used: usize,
    pub raw_text: String,
}

/// Success or a recorded failure; a failure never aborts a sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum ProbeOutcome {
    Success(ProbeResult),
    Failure { attempts: usize, last_error: String },
}

/// Issues the prompt, re-issuing on format failures up to
/// `config.max_retries` times.
pub fn query_with_retries(
    backend: &mut dyn ProbeBackend,
    prompt: &str,
    config: &ProbeConfig,
) -> ProbeOutcome {
    let mut last_error = String::new();
    for attempt in 0..=config.max_retries {
        match backend.complete(prompt, config) {
            Ok(reply) => match parse_response(&reply.text) {
                Ok(predicted) => {
                    return ProbeOutcome::Success(ProbeResult {
                        predicted,
                        token_logprobs: reply.token_logprobs,
                        retries_used: attempt,
                        raw_text: reply.text,
                    })
                }
                Err(e) => last_error = e.to_string(),
            },
            Err(e) => last_error = e.to_string(),
        }
    }
    ProbeOutcome::Failure {
        attempts: config.max_retries + 1,
        last_error,
    }
}

fn digit_of(token: &str) -> Option<u8> {
    match token.trim().parse::<u8>() {
        Ok(v) if v <= 8 => Some(v),
        _ => None,
    }
}

/// Cross-entropy in nats of the true response under a probe result.
///
/// When token logprobs are available, the realized digit's probability is
/// read from the top-k alternatives of the two digit tokens; mass missing
/// from the top-k is spread over the unlisted digits (truncation is a
/// documented limitation of top-k logprobs). Without logprobs, a surrogate
/// point-prediction score is used: `1 − eps` on the predicted digit.
pub fn score_cross_entropy(result: &ProbeResult, truth: (u8, u8), config: &ProbeConfig) -> f64 {
    let truths = [truth.0, truth.1];
    if let Some(tokens) = &result.token_logprobs {
        let digit_tokens: Vec<&TokenLogprob> = tokens
            .iter()
            .filter(|t| digit_of(&t.token).is_some())
            .take(2)
            .collect();
        if digit_tokens.len() == 2 {
            let mut nll = 0.0;
            for (k, tok) in digit_tokens.iter().enumerate() {
                let mut probs = [0.0f64; 9];
                let mut listed = 0.0;
                for (alt, lp) in &tok.top {
                    if let Some(d) = digit_of(alt) {
                        probs[d as usize] += lp.exp();
                    }
                    listed += lp.exp();
                }
                if tok.top.is_empty() {
                    if let Some(d) = digit_of(&tok.token) {
                        probs[d as usize] = tok.logprob.exp();
                        listed = tok.logprob.exp();
                    }
                }
                let missing = (1.0 - listed).max(0.0);
                let n_unlisted = probs.iter().filter(|&&p| p == 0.0).count();
                if n_unlisted > 0 {
                    let share = missing / n_unlisted as f64;
                    for p in probs.iter_mut().filter(|p| **p == 0.0) {
                        *p = share;
                    }
                }
                let p = probs[truths[k] as usize].max(1e-9);
                nll -= p.ln();
            }
            return nll;
        }
    }
    // surrogate point-prediction scoring
    let predicted = [result.predicted.0, result.predicted.1];
    let mut nll = 0.0;
    for k in 0..2 {
        let p = if predicted[k] == truths[k] {
            1.0 - config.surrogate_eps
        } else {
            config.surrogate_eps / 8.0
        };
        nll -= p.ln();
    }
    nll
}

// ---------------------------------------------------------------------------
// Curve extraction
// ---------------------------------------------------------------------------

/// One probe call with its provenance, persisted for audit.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProbeRecord {
    pub task_seed: u64,
    pub context_size: usize,
    pub prompt: String,
    pub outcome: ProbeOutcome,
    pub cross_entropy: Option<f64>,
}

/// A finished sweep: the curve plus the raw transcript.
#[derive(Debug, Clone)]
pub struct ProbeSweep {
    pub curve: PrequentialCurve,
    pub records: Vec<ProbeRecord>,
    pub failures: usize,
}

fn episode_guess(episode: &Episode, i: usize) -> Vec<u8> {
    episode.points[i].x.iter().map(|&d| d as u8).collect()
}

fn episode_response(episode: &Episode, i: usize) -> (u8, u8) {
    let l = episode.points[i].y.labels();
    (l[0] as u8, l[1] as u8)
}

/// Queries novel examples at increasing context sizes and extracts the
/// cross-entropy curve. Failures are recorded and excluded from means.
pub fn probe_curve(
    backend: &mut dyn ProbeBackend,
    tasks: &[Episode],
    context_grid: &[usize],
    config: &ProbeConfig,
) -> Result<ProbeSweep> {
    let mut records = Vec::new();
    let mut failures = 0;
    let mut mean_error = Vec::with_capacity(context_grid.len());
    let mut stderr = Vec::with_capacity(context_grid.len());
    for &c in context_grid {
        let mut losses = Vec::new();
        for episode in tasks {
            if c + 1 > episode.len() {
                return Err(Error::GridMismatch(format!(
                    "context {c} needs a query point but the episode has {}",
                    episode.len()
                )));
            }
            let examples: Vec<(Vec<u8>, (u8, u8))> = (0..c)
                .map(|i| (episode_guess(episode, i), episode_response(episode, i)))
                .collect();
            let query = episode_guess(episode, c);
            let truth = episode_response(episode, c);
            let prompt = build_prompt(&examples, &query);
            let outcome = query_with_retries(backend, &prompt, config);
            let cross_entropy = match &outcome {
                ProbeOutcome::Success(result) => {
                    let ce = score_cross_entropy(result, truth, config);
                    losses.push(ce);
                    Some(ce)
                }
                ProbeOutcome::Failure { .. } => {
                    failures += 1;
                    None
                }
            };
            records.push(ProbeRecord {
                task_seed: episode.seed,
                context_size: c,
                prompt,
                outcome,
                cross_entropy,
            });
        }
        let n = losses.len() as f64;
        if losses.is_empty() {
            mean_error.push(f64::NAN);
            stderr.push(f64::NAN);
        } else {
            let m = losses.iter().sum::<f64>() / n;
            let se = if losses.len() > 1 {
                (losses.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1.0) / n).sqrt()
            } else {
                0.0
            };
            mean_error.push(m);
            stderr.push(se);
        }
    }
    Ok(ProbeSweep {
        curve: PrequentialCurve {
            context_sizes: context_grid.to_vec(),
            mean_error: mean_error.clone(),
            stderr,
            per_seed: vec![mean_error],
            error_kind: ErrorKind::CrossEntropy,
            learner: backend.name(),
            family: "mastermind".into(),
        },
        records,
        failures,
    })
}

// ---------------------------------------------------------------------------
// Offline mock backends
// ---------------------------------------------------------------------------

/// Replays a fixed list of replies (for retry-path tests).
pub struct ScriptedBackend {
    pub replies: Vec<BackendReply>,
    pub cursor: usize,
}

impl ProbeBackend for ScriptedBackend {
    fn complete(&mut self, _prompt: &str, _config: &ProbeConfig) -> Result<BackendReply> {
        let reply = self
            .replies
            .get(self.cursor)
            .cloned()
            .ok_or_else(|| Error::Backend("script exhausted".into()))?;
        self.cursor += 1;
        Ok(reply)
    }
    fn name(&self) -> String {
        "scripted".into()
    }
}

fn last_guess_in_prompt(prompt: &str) -> Result<Vec<u8>> {
    let guess_line = prompt
        .lines()
        .filter(|l| l.starts_with("Guess: "))
        .last()
        .ok_or_else(|| Error::Backend("no guess in prompt".into()))?;
    guess_line["Guess: ".len()..]
        .split_whitespace()
        .map(|t| {
            t.parse::<u8>()
                .map_err(|_| Error::Backend("bad digit in prompt".into()))
        })
        .collect()
}

/// Answers with the exact feedback for its secret code, with certainty-one
/// logprobs. Knows nothing but the prompt text.
pub struct OracleBackend {
    pub code: Vec<u8>,
}

impl ProbeBackend for OracleBackend {
    fn complete(&mut self, prompt: &str, _config: &ProbeConfig) -> Result<BackendReply> {
        let guess = last_guess_in_prompt(prompt)?;
        let (a, b) = mastermind_response(&self.code, &guess)?;
        let tok = |d: u8| TokenLogprob {
            token: d.to_string(),
            logprob: 0.0,
            top: vec![(d.to_string(), 0.0)],
        };
        Ok(BackendReply {
            text: format!("{a} {b}"),
            token_logprobs: Some(vec![tok(a), tok(b)]),
        })
    }
    fn name(&self) -> String {
        "oracle-mock".into()
    }
}

/// Emits uniform logprobs over the nine response digits.
pub struct UniformBackend;

impl ProbeBackend for UniformBackend {
    fn complete(&mut self, _prompt: &str, _config: &ProbeConfig) -> Result<BackendReply> {
        let lp = (1.0f64 / 9.0).ln();
        let top: Vec<(String, f64)> = (0..9).map(|d| (d.to_string(), lp)).collect();
        let tok = TokenLogprob {
            token: "0".into(),
            logprob: lp,
            top,
        };
        Ok(BackendReply {
            text: "0 0".into(),
            token_logprobs: Some(vec![tok.clone(), tok]),
        })
    }
    fn name(&self) -> String {
        "uniform-mock".into()
    }
}

// ---------------------------------------------------------------------------
// HTTP backend (chat-completions style)
// ---------------------------------------------------------------------------

/// Where and how to reach a hosted model; the credential is read from the
/// named environment variable at call time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackendDescriptor {
    pub url: String,
    pub model: String,
    pub api_key_env: String,
    pub timeout_secs: u64,
}

/// Request body for a chat-completions endpoint with logprobs.
pub fn build_request_body(prompt: &str, descriptor: &BackendDescriptor, config: &ProbeConfig) -> Value {
    json!({
        "model": descriptor.model,
        "messages": [{"role": "user", "content": prompt}],
        "temperature": config.temperature,
        "logprobs": true,
        "top_logprobs": config.top_logprobs,
        "max_tokens": 8,
    })
}

/// Extracts text and token logprobs from a chat-completions reply.
pub fn parse_reply_json(v: &Value) -> Result<BackendReply> {
    let choice = v
        .get("choices")
        .and_then(|c| c.get(0))
        .ok_or_else(|| Error::Backend("reply has no choices".into()))?;
    let text = choice
        .pointer("/message/content")
        .and_then(Value::as_str)
        .ok_or_else(|| Error::Backend("reply has no message content".into()))?
        .to_string();
    let token_logprobs = choice.pointer("/logprobs/content").and_then(Value::as_array).map(
        |tokens| {
            tokens
                .iter()
                .filter_map(|t| {
                    let token = t.get("token")?.as_str()?.to_string();
                    let logprob = t.get("logprob")?.as_f64()?;
                    let top = t
                        .get("top_logprobs")
                        .and_then(Value::as_array)
                        .map(|alts| {
                            alts.iter()
                                .filter_map(|a| {
                                    Some((
                                        a.get("token")?.as_str()?.to_string(),
                                        a.get("logprob")?.as_f64()?,
                                    ))
                                })
                                .collect()
                        })
                        .unwrap_or_default();
                    Some(TokenLogprob {
                        token,
                        logprob,
                        top,
                    })
                })
                .collect()
        },
    );
    Ok(BackendReply {
        text,
        token_logprobs,
    })
}

/// Blocking HTTP client for a hosted chat-completions endpoint.
pub struct HttpBackend {
    pub descriptor: BackendDescriptor,
    client: reqwest::blocking::Client,
}

impl HttpBackend {
    pub fn new(descriptor: BackendDescriptor) -> Result<Self> {
        let client = reqwest::blocking::Client::builder()
            .timeout(std::time::Duration::from_secs(descriptor.timeout_secs))
            .build()
            .map_err(|e| Error::Backend(e.to_string()))?;
        Ok(HttpBackend { descriptor, client })
    }
}

impl ProbeBackend for HttpBackend {
    fn complete(&mut self, prompt: &str, config: &ProbeConfig) -> Result<BackendReply> {
        let key = std::env::var(&self.descriptor.api_key_env).map_err(|_| {
            Error::Backend(format!(
                "credential env var {} not set",
                self.descriptor.api_key_env
            ))
        })?;
        let body = build_request_body(prompt, &self.descriptor, config);
        let reply: Value = self
            .client
            .post(&self.descriptor.url)
            .bearer_auth(key)
            .json(&body)
            .send()
            .map_err(|e| Error::Backend(e.to_string()))?
            .json()
            .map_err(|e| Error::Backend(e.to_string()))?;
        parse_reply_json(&reply)
    }
    fn name(&self) -> String {
        self.descriptor.model.clone()
    }
}

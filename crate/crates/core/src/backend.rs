//! Choice-probability backends and corpus runs.
//!
//! A backend turns a rendered prompt into first-position probabilities for
//! the two choice tokens. Two kinds exist: the built-in toy transformer and
//! an HTTP client for logprob-capable completion endpoints.

use std::collections::BTreeMap;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::{self, Execution};
use crate::manifest::RunManifest;
use crate::prompt::{render, PromptBundle, PromptStyle};
use crate::scenario::{corpus_to_bytes, validate_corpus, CorpusKind, Scenario};
use crate::seed::{derive_seed, digest};
use crate::toymodel::{DropoutScaling, DropoutSpec, ToyConfig, ToyTransformer};

/// Two-way softmax in max-subtraction form.
pub fn binary_prob(l1: f64, l2: f64) -> Result<(f64, f64)> {
    if !l1.is_finite() || !l2.is_finite() {
        return Err(Error::NonFinite(format!("logits ({l1}, {l2})")));
    }
    let m = l1.max(l2);
    let e1 = (l1 - m).exp();
    let e2 = (l2 - m).exp();
    let z = e1 + e2;
    Ok((e1 / z, e2 / z))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LogitKind {
    RawLogit,
    Logprob,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenLogit {
    pub token: String,
    pub value: f64,
    pub kind: LogitKind,
}

impl TokenLogit {
    pub fn new(token: impl Into<String>, value: f64, kind: LogitKind) -> Result<Self> {
        if !value.is_finite() {
            return Err(Error::NonFinite(format!("token value {value}")));
        }
        if kind == LogitKind::Logprob && value > 0.0 {
            return Err(Error::OutOfDomain {
                value,
                lo: f64::NEG_INFINITY,
                hi: 0.0,
            });
        }
        Ok(TokenLogit {
            token: token.into(),
            value,
            kind,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChoiceRecord {
    pub scenario_id: String,
    pub p1: f64,
    pub p2: f64,
    /// Probability mass on the two choice tokens before renormalization.
    pub top_two_mass: f64,
    pub backend_id: String,
    pub dropout_rate: f64,
    pub seed: u64,
    /// Wall-clock latency; `None` for the toy backend so records stay
    /// reproducible.
    pub latency_ms: Option<f64>,
}

impl ChoiceRecord {
    pub fn check(&self) -> Result<()> {
        for p in [self.p1, self.p2, self.top_two_mass] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::OutOfDomain {
                    value: p,
                    lo: 0.0,
                    hi: 1.0,
                });
            }
        }
        if (self.p1 + self.p2 - 1.0).abs() > 1e-12 {
            return Err(Error::NotNormalized(self.p1, self.p2));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BackendKind {
    HttpCompletions,
    #[default]
    ToyTransformer,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum WireProtocol {
    /// Chat messages with an assistant prefill.
    #[default]
    Chat,
    /// Raw completion prompt ending in the assistant prefix.
    Completions,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HttpSettings {
    /// Full URL of the chat or completions route.
    pub endpoint: String,
    pub protocol: WireProtocol,
    /// Environment variable holding the bearer token; never the token
    /// itself.
    pub api_key_env: Option<String>,
    pub top_logprobs: u32,
    pub timeout_ms: u64,
    pub max_attempts: u32,
    pub backoff_ms: u64,
}

impl Default for HttpSettings {
    fn default() -> Self {
        HttpSettings {
            endpoint: "http://127.0.0.1:8000/v1/chat/completions".into(),
            protocol: WireProtocol::Chat,
            api_key_env: Some("MORALUNC_API_KEY".into()),
            top_logprobs: 5,
            timeout_ms: 60_000,
            max_attempts: 3,
            backoff_ms: 500,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackendConfig {
    pub kind: BackendKind,
    pub model_name: String,
    pub temperature: f64,
    pub top_p: f64,
    pub dropout_rate: f64,
    pub dropout_scaling: DropoutScaling,
    /// Stochastic passes averaged per scenario.
    pub passes: usize,
    pub style: PromptStyle,
    /// Overrides the prompt style's choice tokens.
    pub choice_tokens: Option<[String; 2]>,
    pub toy: Option<ToyConfig>,
    pub http: Option<HttpSettings>,
}

impl Default for BackendConfig {
    fn default() -> Self {
        BackendConfig {
            kind: BackendKind::ToyTransformer,
            model_name: "toy".into(),
            temperature: 1.0,
            top_p: 1.0,
            dropout_rate: 0.0,
            dropout_scaling: DropoutScaling::Inverted,
            passes: 1,
            style: PromptStyle::Case,
            choice_tokens: None,
            toy: Some(ToyConfig::default()),
            http: None,
        }
    }
}

impl BackendConfig {
    pub fn toy(dropout_rate: f64) -> Self {
        BackendConfig {
            dropout_rate,
            ..BackendConfig::default()
        }
    }

    pub fn http(model_name: &str, settings: HttpSettings) -> Self {
        BackendConfig {
            kind: BackendKind::HttpCompletions,
            model_name: model_name.into(),
            toy: None,
            http: Some(settings),
            ..BackendConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        DropoutSpec {
            rate: self.dropout_rate,
            noise_seed: 0,
            scaling: self.dropout_scaling,
        }
        .validate()?;
        if self.passes == 0 {
            return Err(Error::InvalidArgument("passes must be at least 1".into()));
        }
        if !(self.temperature > 0.0) || !(self.top_p > 0.0 && self.top_p <= 1.0) {
            return Err(Error::InvalidArgument(format!(
                "temperature {} / top_p {}",
                self.temperature, self.top_p
            )));
        }
        match self.kind {
            BackendKind::ToyTransformer if self.toy.is_none() => {
                Err(Error::InvalidArgument("toy backend without toy config".into()))
            }
            BackendKind::HttpCompletions => {
                let h = self
                    .http
                    .as_ref()
                    .ok_or_else(|| Error::InvalidArgument("http backend without settings".into()))?;
                if h.top_logprobs < 5 || h.max_attempts == 0 {
                    return Err(Error::InvalidArgument(
                        "top_logprobs must be >= 5 and max_attempts >= 1".into(),
                    ));
                }
                if self.dropout_rate != 0.0 {
                    return Err(Error::InvalidArgument(
                        "dropout is only available on the toy backend".into(),
                    ));
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }

    /// sha256 over the canonical JSON form.
    pub fn digest(&self) -> String {
        digest(&serde_json::to_vec(self).expect("config serializes"))
    }

    pub fn backend_id(&self) -> String {
        let kind = match self.kind {
            BackendKind::HttpCompletions => "http",
            BackendKind::ToyTransformer => "toy",
        };
        format!("{kind}:{}", self.model_name)
    }

    fn tokens_for(&self, prompt: &PromptBundle) -> [String; 2] {
        match &self.choice_tokens {
            Some(t) => t.clone(),
            None => prompt.choice_tokens().map(String::from),
        }
    }
}

/// A source of choice probabilities.
pub trait Backend: Send + Sync {
    fn config(&self) -> &BackendConfig;

    /// Score one prompt. `seed` drives any stochasticity (dropout noise).
    fn score(&self, prompt: &PromptBundle, seed: u64) -> Result<Scored>;

    fn evaluate(&self, scenario_id: &str, prompt: &PromptBundle, seed: u64) -> Result<ChoiceRecord> {
        let s = self.score(prompt, seed)?;
        let cfg = self.config();
        let rec = ChoiceRecord {
            scenario_id: scenario_id.to_string(),
            p1: s.p1,
            p2: s.p2,
            top_two_mass: s.top_two_mass,
            backend_id: cfg.backend_id(),
            dropout_rate: cfg.dropout_rate,
            seed,
            latency_ms: s.latency_ms,
        };
        rec.check()?;
        Ok(rec)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Scored {
    pub p1: f64,
    pub p2: f64,
    pub top_two_mass: f64,
    pub latency_ms: Option<f64>,
}

pub fn from_config(config: &BackendConfig) -> Result<Box<dyn Backend>> {
    config.validate()?;
    match config.kind {
        BackendKind::ToyTransformer => Ok(Box::new(ToyBackend::new(config.clone())?)),
        #[cfg(feature = "http")]
        BackendKind::HttpCompletions => Ok(Box::new(http::HttpBackend::new(config.clone())?)),
        #[cfg(not(feature = "http"))]
        BackendKind::HttpCompletions => Err(Error::InvalidArgument(
            "built without the `http` feature".into(),
        )),
    }
}

/// One-shot scoring of a single prompt.
pub fn evaluate(prompt: &PromptBundle, config: &BackendConfig, seed: u64) -> Result<ChoiceRecord> {
    from_config(config)?.evaluate("", prompt, seed)
}

pub struct ToyBackend {
    config: BackendConfig,
    model: ToyTransformer,
}

impl ToyBackend {
    pub fn new(config: BackendConfig) -> Result<Self> {
        config.validate()?;
        let toy = config
            .toy
            .ok_or_else(|| Error::InvalidArgument("toy backend without toy config".into()))?;
        Ok(ToyBackend {
            model: ToyTransformer::new(toy)?,
            config,
        })
    }

    pub fn with_model(config: BackendConfig, model: ToyTransformer) -> Result<Self> {
        config.validate()?;
        Ok(ToyBackend { config, model })
    }

    pub fn model(&self) -> &ToyTransformer {
        &self.model
    }

    fn pass(&self, ids: &[u32], tok: [u32; 2], noise_seed: u64) -> Result<(f64, f64)> {
        let spec = DropoutSpec {
            rate: self.config.dropout_rate,
            noise_seed,
            scaling: self.config.dropout_scaling,
        };
        let logits = self.model.forward_logits(ids, &spec)?;
        let (l1, l2) = (logits[tok[0] as usize], logits[tok[1] as usize]);
        let (p1, _) = binary_prob(l1, l2)?;
        let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = logits.iter().map(|l| (l - m).exp()).sum();
        let mass = ((l1 - m).exp() + (l2 - m).exp()) / z;
        Ok((p1, mass.min(1.0)))
    }
}

impl Backend for ToyBackend {
    fn config(&self) -> &BackendConfig {
        &self.config
    }

    fn score(&self, prompt: &PromptBundle, seed: u64) -> Result<Scored> {
        let tokenizer = self.model.tokenizer();
        let ids = tokenizer.encode_prompt(prompt);
        let [a, b] = self.config.tokens_for(prompt);
        let tok = [tokenizer.id_of(&a), tokenizer.id_of(&b)];
        let passes = self.config.passes;
        let (mut p1, mut mass) = (0.0, 0.0);
        for k in 0..passes {
            let noise = if passes == 1 {
                seed
            } else {
                derive_seed(seed, &format!("pass-{k}"))
            };
            let (p, m) = self.pass(&ids, tok, noise)?;
            p1 += p;
            mass += m;
        }
        let p1 = p1 / passes as f64;
        Ok(Scored {
            p1,
            p2: 1.0 - p1,
            top_two_mass: mass / passes as f64,
            latency_ms: None,
        })
    }
}

/// Strip tokenizer word-boundary markers.
pub fn normalize_token(t: &str) -> &str {
    t.trim_start_matches([' ', '\t', '\u{0120}', '\u{2581}'])
}

/// Exponentiate top-k logprobs, sum mass per choice token (over tokenizer
/// variants) and renormalize over the pair.
pub fn choice_from_logprobs(candidates: &[TokenLogit], tokens: &[String; 2]) -> Result<Scored> {
    let mut mass = [0.0f64; 2];
    let mut seen = [false; 2];
    for c in candidates {
        if c.kind != LogitKind::Logprob {
            return Err(Error::Protocol(format!("expected logprob for `{}`", c.token)));
        }
        let t = normalize_token(&c.token);
        for i in 0..2 {
            if t == tokens[i] {
                mass[i] += c.value.exp();
                seen[i] = true;
            }
        }
    }
    if !(seen[0] && seen[1]) {
        return Err(Error::TokensNotInTopK {
            candidates: candidates.iter().map(|c| c.token.clone()).collect(),
        });
    }
    let total = mass[0] + mass[1];
    if !(total > 0.0) {
        return Err(Error::Protocol("zero mass on choice tokens".into()));
    }
    let p1 = mass[0] / total;
    Ok(Scored {
        p1,
        p2: 1.0 - p1,
        top_two_mass: total.min(1.0),
        latency_ms: None,
    })
}

#[cfg(feature = "http")]
pub mod http {
    //! Client for OpenAI-compatible chat and completions routes that
    //! return top-k logprobs.

    use std::time::{Duration, Instant};

    use serde_json::{json, Value};

    use super::*;

    pub struct HttpBackend {
        config: BackendConfig,
        settings: HttpSettings,
        agent: ureq::Agent,
        api_key: Option<String>,
    }

    impl HttpBackend {
        pub fn new(config: BackendConfig) -> Result<Self> {
            config.validate()?;
            let settings = config
                .http
                .clone()
                .ok_or_else(|| Error::InvalidArgument("http backend without settings".into()))?;
            let api_key = settings
                .api_key_env
                .as_ref()
                .and_then(|v| std::env::var(v).ok());
            let agent = ureq::Agent::config_builder()
                .timeout_global(Some(Duration::from_millis(settings.timeout_ms)))
                .http_status_as_error(false)
                .build()
                .into();
            Ok(HttpBackend {
                config,
                settings,
                agent,
                api_key,
            })
        }

        pub fn request_body(&self, prompt: &PromptBundle) -> Value {
            let c = &self.config;
            match self.settings.protocol {
                WireProtocol::Chat => json!({
                    "model": c.model_name,
                    "messages": [
                        {"role": "system", "content": prompt.system},
                        {"role": "user", "content": prompt.user},
                        {"role": "assistant", "content": prompt.assistant_prefix},
                    ],
                    "max_tokens": 1,
                    "temperature": c.temperature,
                    "top_p": c.top_p,
                    "logprobs": true,
                    "top_logprobs": self.settings.top_logprobs,
                    "add_generation_prompt": false,
                    "continue_final_message": true,
                }),
                WireProtocol::Completions => json!({
                    "model": c.model_name,
                    "prompt": prompt.completion_text(),
                    "max_tokens": 1,
                    "temperature": c.temperature,
                    "top_p": c.top_p,
                    "logprobs": self.settings.top_logprobs,
                }),
            }
        }

        fn attempt(&self, body: &Value) -> Result<Value> {
            let mut req = self.agent.post(&self.settings.endpoint);
            if let Some(key) = &self.api_key {
                req = req.header("Authorization", format!("Bearer {key}"));
            }
            let transport = |message: String| Error::Transport {
                attempts: 1,
                message,
            };
            let mut resp = req.send_json(body).map_err(|e| transport(e.to_string()))?;
            let status = resp.status().as_u16();
            let text = resp
                .body_mut()
                .read_to_string()
                .map_err(|e| transport(e.to_string()))?;
            if status == 429 || status >= 500 {
                return Err(transport(format!("HTTP {status}")));
            }
            if status >= 400 {
                return Err(Error::Protocol(format!("HTTP {status}: {text}")));
            }
            serde_json::from_str(&text).map_err(|e| Error::Protocol(format!("bad JSON: {e}")))
        }

        fn send(&self, body: &Value) -> Result<Value> {
            let max = self.settings.max_attempts;
            let mut last = String::new();
            for attempt in 1..=max {
                match self.attempt(body) {
                    Err(Error::Transport { message, .. }) => {
                        last = message;
                        if attempt < max {
                            let wait = self.settings.backoff_ms << (attempt - 1);
                            std::thread::sleep(Duration::from_millis(wait));
                        }
                    }
                    other => return other,
                }
            }
            Err(Error::Transport {
                attempts: max,
                message: last,
            })
        }
    }

    /// Extract first-position top-k candidates from a chat or completions
    /// response.
    pub fn parse_top_logprobs(v: &Value) -> Result<Vec<TokenLogit>> {
        let bad = |what: &str| Error::Protocol(format!("response lacks {what}"));
        let choice = v
            .get("choices")
            .and_then(|c| c.get(0))
            .ok_or_else(|| bad("choices[0]"))?;
        let lp = choice.get("logprobs").ok_or_else(|| bad("logprobs"))?;
        let mut out = Vec::new();
        if let Some(content) = lp.get("content") {
            let first = content.get(0).ok_or_else(|| bad("logprobs.content[0]"))?;
            let top = first
                .get("top_logprobs")
                .and_then(Value::as_array)
                .ok_or_else(|| bad("top_logprobs"))?;
            for item in top {
                let token = item
                    .get("token")
                    .and_then(Value::as_str)
                    .ok_or_else(|| bad("token"))?;
                let value = item
                    .get("logprob")
                    .and_then(Value::as_f64)
                    .ok_or_else(|| bad("logprob"))?;
                out.push(TokenLogit::new(token, value, LogitKind::Logprob)?);
            }
        } else if let Some(top) = lp.get("top_logprobs") {
            let first = top
                .get(0)
                .and_then(Value::as_object)
                .ok_or_else(|| bad("top_logprobs[0]"))?;
            for (token, value) in first {
                let value = value.as_f64().ok_or_else(|| bad("logprob value"))?;
                out.push(TokenLogit::new(token.as_str(), value, LogitKind::Logprob)?);
            }
        } else {
            return Err(bad("top-k candidates"));
        }
        if out.is_empty() {
            return Err(bad("top-k candidates"));
        }
        Ok(out)
    }

    impl Backend for HttpBackend {
        fn config(&self) -> &BackendConfig {
            &self.config
        }

        fn score(&self, prompt: &PromptBundle, _seed: u64) -> Result<Scored> {
            let start = Instant::now();
            let body = self.request_body(prompt);
            let resp = self.send(&body)?;
            let candidates = parse_top_logprobs(&resp)?;
            let mut s = choice_from_logprobs(&candidates, &self.config.tokens_for(prompt))?;
            s.latency_ms = Some(start.elapsed().as_secs_f64() * 1000.0);
            Ok(s)
        }
    }
}

// ---------------------------------------------------------------------------
// Corpus runs
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LedgerEntry {
    pub scenario_id: String,
    pub kind: String,
    pub message: String,
}

#[derive(Debug, Clone)]
pub struct RunOptions {
    pub concurrency: usize,
    pub seed: u64,
    /// The run fails when the error fraction exceeds this.
    pub error_threshold: f64,
    pub cache_dir: Option<PathBuf>,
}

impl Default for RunOptions {
    fn default() -> Self {
        RunOptions {
            concurrency: 1,
            seed: 0,
            error_threshold: 0.05,
            cache_dir: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunOutput {
    /// Sorted by scenario id.
    pub records: Vec<ChoiceRecord>,
    pub ledger: Vec<LedgerEntry>,
    pub manifest: RunManifest,
}

/// Per-scenario seed: independent of order and concurrency.
pub fn scenario_seed(seed: u64, scenario_id: &str) -> u64 {
    derive_seed(seed, scenario_id)
}

pub fn records_to_jsonl(records: &[ChoiceRecord]) -> String {
    records
        .iter()
        .map(|r| serde_json::to_string(r).expect("record serializes") + "\n")
        .collect()
}

pub fn records_from_jsonl(text: &str) -> Result<Vec<ChoiceRecord>> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(Error::from))
        .collect()
}

/// Digest of records with latencies dropped, in scenario-id order.
pub fn records_digest(records: &[ChoiceRecord]) -> String {
    let mut rs: Vec<ChoiceRecord> = records
        .iter()
        .map(|r| ChoiceRecord {
            latency_ms: None,
            ..r.clone()
        })
        .collect();
    rs.sort_by(|a, b| a.scenario_id.cmp(&b.scenario_id));
    digest(records_to_jsonl(&rs).as_bytes())
}

fn cache_path(dir: &std::path::Path, corpus: &str, config: &str, seed: u64) -> PathBuf {
    let key = digest(format!("{corpus}:{config}:{seed}").as_bytes());
    dir.join(format!("{}.json", &key[..32]))
}

/// Score every scenario. Per-scenario failures go to the ledger; the run
/// fails only if the failure fraction exceeds the threshold.
pub fn run_corpus(
    scenarios: &[Scenario],
    backend: &dyn Backend,
    opts: &RunOptions,
) -> Result<RunOutput> {
    if !(0.0..=1.0).contains(&opts.error_threshold) {
        return Err(Error::OutOfDomain {
            value: opts.error_threshold,
            lo: 0.0,
            hi: 1.0,
        });
    }
    if let Some((id, v)) = validate_corpus(scenarios).into_iter().next() {
        return Err(Error::InvalidScenario {
            id,
            rule: v.rule,
            detail: v.detail,
        });
    }
    let config = backend.config();
    let corpus_digest = digest(&corpus_to_bytes(scenarios));
    let config_digest = config.digest();

    let cached = opts.cache_dir.as_ref().map(|d| {
        cache_path(d, &corpus_digest, &config_digest, opts.seed)
    });
    if let Some(path) = &cached {
        if let Ok(bytes) = std::fs::read(path) {
            if let Ok(out) = serde_json::from_slice::<RunOutput>(&bytes) {
                return finish(out, opts);
            }
        }
    }

    let style = config.style;
    let results = exec::map(Execution::with_threads(opts.concurrency), scenarios, |s| {
        let seed = scenario_seed(opts.seed, &s.id);
        render(s, style).and_then(|p| backend.evaluate(&s.id, &p, seed))
    });
    let mut records = Vec::new();
    let mut ledger = Vec::new();
    for (s, r) in scenarios.iter().zip(results) {
        match r {
            Ok(rec) => records.push(rec),
            Err(e) => ledger.push(LedgerEntry {
                scenario_id: s.id.clone(),
                kind: e.kind().to_string(),
                message: e.to_string(),
            }),
        }
    }
    records.sort_by(|a, b| a.scenario_id.cmp(&b.scenario_id));
    ledger.sort_by(|a, b| a.scenario_id.cmp(&b.scenario_id));

    let mut deviations = Vec::new();
    if scenarios.iter().any(|s| s.set == CorpusKind::Alignment) {
        deviations.push(
            "alignment-set scenarios scored with single-token choice probabilities, not multi-token answers"
                .to_string(),
        );
    }
    if config.passes > 1 {
        deviations.push(format!("{} stochastic passes averaged per scenario", config.passes));
    }
    let manifest = RunManifest {
        schema: RunManifest::SCHEMA,
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        seed: opts.seed,
        backend_id: config.backend_id(),
        config: config.clone(),
        config_digest,
        template_version: crate::prompt::template_version().to_string(),
        dropout_rate: config.dropout_rate,
        corpus_digest,
        n_scenarios: scenarios.len(),
        n_records: records.len(),
        n_errors: ledger.len(),
        error_threshold: opts.error_threshold,
        records_digest: records_digest(&records),
        dimension_counts: dimension_counts(scenarios),
        deviations,
        started_unix: None,
        finished_unix: None,
    };
    let out = RunOutput {
        records,
        ledger,
        manifest,
    };
    if let Some(path) = &cached {
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir)?;
        }
        std::fs::write(path, serde_json::to_vec(&out)?)?;
    }
    finish(out, opts)
}

fn finish(out: RunOutput, opts: &RunOptions) -> Result<RunOutput> {
    let total = out.manifest.n_scenarios;
    let failed = out.ledger.len();
    if total > 0 && failed as f64 / total as f64 > opts.error_threshold {
        return Err(Error::ThresholdExceeded {
            failed,
            total,
            threshold: opts.error_threshold,
            ledger: out.ledger,
        });
    }
    Ok(out)
}

fn dimension_counts(scenarios: &[Scenario]) -> BTreeMap<String, usize> {
    let mut m = BTreeMap::new();
    for s in scenarios {
        for c in &s.contrasts {
            *m.entry(c.dimension.name().to_string()).or_insert(0) += 1;
        }
    }
    m
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::generate_uncertainty_set;
    use proptest::prelude::*;

    #[test]
    fn binary_prob_examples() {
        assert_eq!(binary_prob(0.0, 0.0).unwrap(), (0.5, 0.5));
        let (p1, p2) = binary_prob(2.0, 0.0).unwrap();
        // e^2 / (e^2 + 1) evaluated independently through tanh
        let oracle = 0.5 * (1.0 + (1.0f64).tanh());
        assert!((p1 - oracle).abs() < 1e-12);
        assert!((p1 - 0.8808).abs() < 1e-4 && (p2 - 0.1192).abs() < 1e-4);
        assert_eq!(binary_prob(1000.0, 0.0).unwrap(), (1.0, 0.0));
        assert!(binary_prob(f64::NAN, 0.0).is_err());
        assert!(binary_prob(0.0, f64::INFINITY).is_err());
    }

    proptest! {
        #[test]
        fn binary_prob_normalized_and_symmetric(l1 in -700.0f64..700.0, l2 in -700.0f64..700.0, c in -300.0f64..300.0) {
            let (p1, p2) = binary_prob(l1, l2).unwrap();
            prop_assert!((p1 + p2 - 1.0).abs() <= 1e-12);
            let (q1, q2) = binary_prob(l2, l1).unwrap();
            prop_assert!((p1 - q2).abs() <= 1e-12 && (p2 - q1).abs() <= 1e-12);
            let (s1, _) = binary_prob(l1 + c, l2 + c).unwrap();
            prop_assert!((s1 - p1).abs() <= 1e-12);
        }
    }

    #[test]
    fn logprob_renormalization() {
        let c = vec![
            TokenLogit::new("1", 0.6f64.ln(), LogitKind::Logprob).unwrap(),
            TokenLogit::new("2", 0.3f64.ln(), LogitKind::Logprob).unwrap(),
            TokenLogit::new("3", 0.1f64.ln(), LogitKind::Logprob).unwrap(),
        ];
        let s = choice_from_logprobs(&c, &["1".into(), "2".into()]).unwrap();
        assert!((s.p1 - 2.0 / 3.0).abs() < 1e-12);
        assert!((s.p2 - 1.0 / 3.0).abs() < 1e-12);
        assert!((s.top_two_mass - 0.9).abs() < 1e-12);
    }

    #[test]
    fn leading_space_variants_are_merged() {
        let c = vec![
            TokenLogit::new(" 1", 0.4f64.ln(), LogitKind::Logprob).unwrap(),
            TokenLogit::new("1", 0.2f64.ln(), LogitKind::Logprob).unwrap(),
            TokenLogit::new("\u{2581}2", 0.2f64.ln(), LogitKind::Logprob).unwrap(),
        ];
        let s = choice_from_logprobs(&c, &["1".into(), "2".into()]).unwrap();
        assert!((s.p1 - 0.75).abs() < 1e-12);
        assert!((s.top_two_mass - 0.8).abs() < 1e-12);
    }

    #[test]
    fn missing_choice_token_is_reported_with_candidates() {
        let c = vec![
            TokenLogit::new("1", -0.1, LogitKind::Logprob).unwrap(),
            TokenLogit::new("The", -3.0, LogitKind::Logprob).unwrap(),
        ];
        match choice_from_logprobs(&c, &["1".into(), "2".into()]) {
            Err(Error::TokensNotInTopK { candidates }) => {
                assert_eq!(candidates, vec!["1".to_string(), "The".to_string()])
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn logprob_must_be_non_positive() {
        assert!(TokenLogit::new("1", 0.5, LogitKind::Logprob).is_err());
        assert!(TokenLogit::new("1", 0.5, LogitKind::RawLogit).is_ok());
    }

    fn small_toy(rate: f64) -> BackendConfig {
        BackendConfig {
            toy: Some(ToyConfig {
                d_model: 16,
                heads: 2,
                layers: 1,
                d_ff: 32,
                ..ToyConfig::default()
            }),
            ..BackendConfig::toy(rate)
        }
    }

    #[test]
    fn toy_evaluate_is_deterministic() {
        let corpus = generate_uncertainty_set(1, 2).unwrap();
        let p = render(&corpus[0], PromptStyle::Case).unwrap();
        let cfg = small_toy(0.0);
        let a = evaluate(&p, &cfg, 3).unwrap();
        assert_eq!(a, evaluate(&p, &cfg, 3).unwrap());
        assert_eq!(a.latency_ms, None);
        a.check().unwrap();
        let d = small_toy(0.1);
        assert_eq!(evaluate(&p, &d, 3).unwrap(), evaluate(&p, &d, 3).unwrap());
    }

    #[test]
    fn run_corpus_is_concurrency_independent() {
        let corpus = generate_uncertainty_set(2, 1).unwrap();
        assert_eq!(corpus.len(), 9);
        let b = ToyBackend::new(small_toy(0.1)).unwrap();
        let opts = RunOptions {
            seed: 11,
            ..RunOptions::default()
        };
        let one = run_corpus(&corpus, &b, &opts).unwrap();
        let eight = run_corpus(
            &corpus,
            &b,
            &RunOptions {
                concurrency: 8,
                ..opts.clone()
            },
        )
        .unwrap();
        assert_eq!(one.records, eight.records);
        assert_eq!(one.manifest, eight.manifest);
        let mut reversed = corpus.clone();
        reversed.reverse();
        let rev = run_corpus(&reversed, &b, &opts).unwrap();
        assert_eq!(rev.records, one.records);
    }

    #[test]
    fn empty_corpus_gives_valid_manifest() {
        let b = ToyBackend::new(small_toy(0.0)).unwrap();
        let out = run_corpus(&[], &b, &RunOptions::default()).unwrap();
        assert!(out.records.is_empty() && out.ledger.is_empty());
        assert_eq!(out.manifest.n_scenarios, 0);
        out.manifest.check_against(&out.records).unwrap();
    }

    #[test]
    fn cache_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let corpus = generate_uncertainty_set(3, 1).unwrap();
        let b = ToyBackend::new(small_toy(0.05)).unwrap();
        let opts = RunOptions {
            cache_dir: Some(dir.path().to_path_buf()),
            ..RunOptions::default()
        };
        let a = run_corpus(&corpus, &b, &opts).unwrap();
        assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 1);
        let again = run_corpus(&corpus, &b, &opts).unwrap();
        assert_eq!(a, again);
    }

    #[test]
    fn config_validation() {
        assert!(BackendConfig::toy(1.0).validate().is_err());
        assert!(BackendConfig {
            passes: 0,
            ..BackendConfig::toy(0.0)
        }
        .validate()
        .is_err());
        let mut h = BackendConfig::http("m", HttpSettings::default());
        h.validate().unwrap();
        h.dropout_rate = 0.1;
        assert!(h.validate().is_err());
        assert_ne!(BackendConfig::toy(0.0).digest(), BackendConfig::toy(0.1).digest());
    }
}

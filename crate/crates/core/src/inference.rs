//! Classifier back-ends: a chat-completion endpoint and an offline lexicon
//! mock, plus the free-text label parser shared by both.

use std::fmt;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::corpus::{Language, SentimentLabel};
use crate::error::{Error, Result};
use crate::prompts::{label_word, render, ChatMessage, PromptBundle};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ParsedLabel {
    Positive,
    Negative,
    Neutral,
    Unparseable,
}

impl ParsedLabel {
    pub fn label(self) -> Option<SentimentLabel> {
        match self {
            ParsedLabel::Positive => Some(SentimentLabel::Positive),
            ParsedLabel::Negative => Some(SentimentLabel::Negative),
            ParsedLabel::Neutral => Some(SentimentLabel::Neutral),
            ParsedLabel::Unparseable => None,
        }
    }
}

impl From<SentimentLabel> for ParsedLabel {
    fn from(l: SentimentLabel) -> Self {
        match l {
            SentimentLabel::Positive => ParsedLabel::Positive,
            SentimentLabel::Negative => ParsedLabel::Negative,
            SentimentLabel::Neutral => ParsedLabel::Neutral,
        }
    }
}

impl fmt::Display for ParsedLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.label() {
            Some(l) => l.fmt(f),
            None => f.write_str("unparseable"),
        }
    }
}

/// One classified example, as written to the prediction log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub example_id: String,
    pub raw_output: String,
    pub parsed_label: ParsedLabel,
    pub latency_ms: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl Prediction {
    pub fn is_transport_failure(&self) -> bool {
        self.error.is_some()
    }
}

const KEYWORDS: &[(&str, SentimentLabel)] = &[
    ("positive", SentimentLabel::Positive),
    ("negative", SentimentLabel::Negative),
    ("neutral", SentimentLabel::Neutral),
    ("正面", SentimentLabel::Positive),
    ("积极", SentimentLabel::Positive),
    ("负面", SentimentLabel::Negative),
    ("消极", SentimentLabel::Negative),
    ("中性", SentimentLabel::Neutral),
];

/// Extract a label from free text.
///
/// Canonical English label words (case-insensitive, not preceded by a
/// letter) and their Chinese equivalents are located; the earliest
/// occurrence whose label is in `allowed` wins. Keywords of both languages
/// are searched whatever `language` says, since models often answer in
/// English to Chinese prompts.
pub fn parse_label(raw: &str, allowed: &[SentimentLabel], _language: Language) -> ParsedLabel {
    let lower = raw.to_lowercase();
    let mut best: Option<(usize, SentimentLabel)> = None;
    for &(word, label) in KEYWORDS {
        if !allowed.contains(&label) {
            continue;
        }
        for (pos, _) in lower.match_indices(word) {
            let preceded_by_letter = lower[..pos].chars().next_back().is_some_and(|c| c.is_ascii_alphabetic());
            if word.is_ascii() && preceded_by_letter {
                continue;
            }
            if best.is_none_or(|(p, _)| pos < p) {
                best = Some((pos, label));
            }
            break;
        }
    }
    best.map_or(ParsedLabel::Unparseable, |(_, l)| l.into())
}

const EN_POSITIVE: &[&str] = &[
    "surge", "surged", "surges", "soar", "soared", "rose", "rise", "rises", "gain", "gains", "gained", "profit",
    "profits", "profitable", "growth", "grew", "beat", "beats", "record", "strong", "stronger", "upgrade",
    "upgraded", "rally", "rallied", "higher", "boost", "boosted", "outperform", "bullish",
];
const EN_NEGATIVE: &[&str] = &[
    "loss", "losses", "fell", "fall", "falls", "drop", "dropped", "plunge", "plunged", "decline", "declined",
    "weak", "weaker", "miss", "missed", "downgrade", "downgraded", "lawsuit", "cut", "cuts", "lower", "slump",
    "slumped", "bearish", "default", "layoffs", "underperform", "warning",
];
const ZH_POSITIVE: &[&str] = &["利好", "上涨", "增长", "盈利", "大涨", "看好", "突破", "新高"];
const ZH_NEGATIVE: &[&str] = &["利空", "下跌", "亏损", "下滑", "大跌", "看空", "风险", "暴跌"];

fn lexicon_counts(text: &str, language: Language) -> (usize, usize) {
    match language {
        Language::En => {
            let lower = text.to_lowercase();
            let mut pos = 0;
            let mut neg = 0;
            for tok in lower.split(|c: char| !c.is_alphanumeric()).filter(|t| !t.is_empty()) {
                if EN_POSITIVE.contains(&tok) {
                    pos += 1;
                } else if EN_NEGATIVE.contains(&tok) {
                    neg += 1;
                }
            }
            (pos, neg)
        }
        Language::Zh => {
            let count = |words: &[&str]| words.iter().map(|w| text.matches(w).count()).sum();
            (count(ZH_POSITIVE), count(ZH_NEGATIVE))
        }
    }
}

/// Deterministic lexicon classifier over the query text.
///
/// More positive than negative hits gives positive and vice versa; ties go
/// to neutral, or to negative when the domain has no neutral class.
pub fn mock_classify(bundle: &PromptBundle) -> Prediction {
    let (pos, neg) = lexicon_counts(&bundle.query_text, bundle.language);
    let tie = if bundle.allowed_labels.contains(&SentimentLabel::Neutral) {
        SentimentLabel::Neutral
    } else {
        SentimentLabel::Negative
    };
    let label = match pos.cmp(&neg) {
        std::cmp::Ordering::Greater => SentimentLabel::Positive,
        std::cmp::Ordering::Less => SentimentLabel::Negative,
        std::cmp::Ordering::Equal => tie,
    };
    let label = if bundle.allowed_labels.contains(&label) { label } else { tie };
    let raw_output = label_word(label, bundle.language).to_string();
    Prediction {
        example_id: bundle.query_id.clone(),
        parsed_label: parse_label(&raw_output, &bundle.allowed_labels, bundle.language),
        raw_output,
        latency_ms: 0.0,
        error: None,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RetryPolicy {
    pub max_retries: u32,
    /// Delay before the first retry; doubles on each subsequent one.
    pub backoff_ms: u64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            max_retries: 3,
            backoff_ms: 500,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EndpointConfig {
    pub base_url: String,
    pub model_name: String,
    /// Name of the environment variable holding the API key.
    pub api_key_env: String,
    pub temperature: f64,
    pub max_output_tokens: u32,
    pub max_concurrency: usize,
    pub timeout_secs: u64,
    pub retry: RetryPolicy,
}

impl Default for EndpointConfig {
    fn default() -> Self {
        EndpointConfig {
            base_url: "https://api.openai.com/v1".into(),
            model_name: "gpt-4o-mini".into(),
            api_key_env: "OPENAI_API_KEY".into(),
            temperature: 0.0,
            max_output_tokens: 16,
            max_concurrency: 4,
            timeout_secs: 60,
            retry: RetryPolicy::default(),
        }
    }
}

impl EndpointConfig {
    pub fn validate(&self) -> Result<()> {
        if self.temperature != 0.0 {
            return Err(Error::Config("evaluation requires temperature 0".into()));
        }
        if self.max_concurrency == 0 {
            return Err(Error::Config("max_concurrency must be at least 1".into()));
        }
        Ok(())
    }
}

/// Chat-completion request body.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub model: String,
    pub messages: Vec<ChatMessage>,
    pub temperature: f64,
    pub max_tokens: u32,
}

pub trait ChatTransport: Send + Sync {
    /// Send one request and return the assistant message text.
    fn complete(&self, request: &ChatRequest) -> Result<String>;
}

/// Blocking HTTP transport for OpenAI-compatible `/chat/completions`.
pub struct HttpTransport {
    agent: ureq::Agent,
    url: String,
    api_key: Option<String>,
}

impl HttpTransport {
    pub fn new(config: &EndpointConfig) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(config.timeout_secs)))
            .http_status_as_error(false)
            .build()
            .into();
        let api_key = std::env::var(&config.api_key_env).ok();
        if api_key.is_none() {
            log::warn!("environment variable {} is not set; sending unauthenticated requests", config.api_key_env);
        }
        HttpTransport {
            agent,
            url: format!("{}/chat/completions", config.base_url.trim_end_matches('/')),
            api_key,
        }
    }
}

impl ChatTransport for HttpTransport {
    fn complete(&self, request: &ChatRequest) -> Result<String> {
        let mut req = self.agent.post(&self.url).header("Content-Type", "application/json");
        if let Some(key) = &self.api_key {
            req = req.header("Authorization", &format!("Bearer {key}"));
        }
        let body = serde_json::to_string(request)?;
        let mut resp = req.send(body.as_str()).map_err(|e| Error::Endpoint(e.to_string()))?;
        let status = resp.status();
        let text = resp
            .body_mut()
            .read_to_string()
            .map_err(|e| Error::Endpoint(e.to_string()))?;
        if !status.is_success() {
            return Err(Error::Endpoint(format!("HTTP {}: {}", status.as_u16(), text)));
        }
        let value: serde_json::Value = serde_json::from_str(&text)?;
        value["choices"][0]["message"]["content"]
            .as_str()
            .map(str::to_string)
            .ok_or_else(|| Error::Endpoint("response has no choices[0].message.content".into()))
    }
}

/// Query the endpoint for one bundle. Never fails: transport errors after
/// all retries are recorded on the returned prediction.
pub fn classify(bundle: &PromptBundle, config: &EndpointConfig, transport: &dyn ChatTransport) -> Prediction {
    let request = ChatRequest {
        model: config.model_name.clone(),
        messages: render(bundle),
        temperature: config.temperature,
        max_tokens: config.max_output_tokens,
    };
    let start = Instant::now();
    let mut last_err = String::new();
    for attempt in 0..=config.retry.max_retries {
        if attempt > 0 {
            let delay = config.retry.backoff_ms.saturating_mul(1 << (attempt - 1).min(16));
            std::thread::sleep(Duration::from_millis(delay));
        }
        match transport.complete(&request) {
            Ok(raw) => {
                return Prediction {
                    example_id: bundle.query_id.clone(),
                    parsed_label: parse_label(&raw, &bundle.allowed_labels, bundle.language),
                    raw_output: raw,
                    latency_ms: start.elapsed().as_secs_f64() * 1e3,
                    error: None,
                }
            }
            Err(e) => {
                log::debug!("attempt {} for `{}` failed: {e}", attempt + 1, bundle.query_id);
                last_err = e.to_string();
            }
        }
    }
    Prediction {
        example_id: bundle.query_id.clone(),
        raw_output: String::new(),
        parsed_label: ParsedLabel::Unparseable,
        latency_ms: start.elapsed().as_secs_f64() * 1e3,
        error: Some(last_err),
    }
}

/// Classify many bundles with at most `config.max_concurrency` requests in
/// flight. Output is sorted by example id.
pub fn classify_all(bundles: &[PromptBundle], config: &EndpointConfig, transport: &dyn ChatTransport) -> Vec<Prediction> {
    let workers = config.max_concurrency.max(1).min(bundles.len());
    let next = AtomicUsize::new(0);
    let results = Mutex::new(Vec::with_capacity(bundles.len()));
    std::thread::scope(|s| {
        for _ in 0..workers {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some(bundle) = bundles.get(i) else { break };
                let p = classify(bundle, config, transport);
                results.lock().unwrap().push(p);
            });
        }
    });
    let mut out = results.into_inner().unwrap();
    out.sort_by(|a, b| a.example_id.cmp(&b.example_id));
    out
}

/// Anything that turns prompts into predictions.
pub trait Classifier: Sync {
    fn name(&self) -> String;
    /// One prediction per bundle, sorted by example id.
    fn classify_batch(&self, bundles: &[PromptBundle]) -> Vec<Prediction>;
}

#[derive(Debug, Clone, Copy, Default)]
pub struct MockClassifier;

impl Classifier for MockClassifier {
    fn name(&self) -> String {
        "mock-lexicon".into()
    }

    fn classify_batch(&self, bundles: &[PromptBundle]) -> Vec<Prediction> {
        let mut out: Vec<_> = bundles.iter().map(mock_classify).collect();
        out.sort_by(|a, b| a.example_id.cmp(&b.example_id));
        out
    }
}

pub struct EndpointClassifier {
    pub config: EndpointConfig,
    pub transport: Box<dyn ChatTransport>,
}

impl EndpointClassifier {
    pub fn http(config: EndpointConfig) -> Result<Self> {
        config.validate()?;
        let transport = Box::new(HttpTransport::new(&config));
        Ok(EndpointClassifier { config, transport })
    }
}

impl Classifier for EndpointClassifier {
    fn name(&self) -> String {
        self.config.model_name.clone()
    }

    fn classify_batch(&self, bundles: &[PromptBundle]) -> Vec<Prediction> {
        classify_all(bundles, &self.config, self.transport.as_ref())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Language::{En, Zh};
    use crate::corpus::SentimentLabel::{Negative as Neg, Neutral as Neu, Positive as Pos};
    use std::io::{BufRead, BufReader, Read, Write};
    use std::net::TcpListener;

    const THREE: &[SentimentLabel] = &[Pos, Neg, Neu];
    const TWO: &[SentimentLabel] = &[Pos, Neg];

    #[test]
    fn parse_examples() {
        assert_eq!(parse_label("Sentiment: Positive.", THREE, En), ParsedLabel::Positive);
        assert_eq!(parse_label("The tone is mostly negative given losses", THREE, En), ParsedLabel::Negative);
        assert_eq!(parse_label("I cannot determine", THREE, En), ParsedLabel::Unparseable);
        assert_eq!(parse_label("NEUTRAL", THREE, En), ParsedLabel::Neutral);
        assert_eq!(parse_label("positive... but also negative", THREE, En), ParsedLabel::Positive);
        assert_eq!(parse_label("neutral", TWO, En), ParsedLabel::Unparseable);
        assert_eq!(parse_label("情感：负面", TWO, Zh), ParsedLabel::Negative);
        assert_eq!(parse_label("nonnegative outlook", THREE, En), ParsedLabel::Unparseable);
    }

    /// Fifty synthetic model outputs, labeled by hand.
    #[test]
    fn parse_hand_labeled_outputs() {
        use ParsedLabel::{Negative as N, Neutral as U, Positive as P, Unparseable as X};
        let cases: &[(&str, ParsedLabel)] = &[
            ("positive", P),
            ("Negative", N),
            ("neutral", U),
            ("Sentiment: Positive.", P),
            ("Sentiment: negative", N),
            ("The sentiment is neutral.", U),
            ("Answer: POSITIVE", P),
            ("**Negative**", N),
            ("Label: neutral", U),
            ("The tone is mostly negative given losses", N),
            ("I would say positive overall.", P),
            ("This headline reads as neutral to me.", U),
            ("positive... but also negative", P),
            ("negative, not positive", N),
            ("Neutral rather than positive", U),
            ("I cannot determine", X),
            ("Unknown", X),
            ("", X),
            ("The text is ambiguous.", X),
            ("bullish", X),
            ("\"positive\"", P),
            ("(negative)", N),
            ("sentiment=neutral", U),
            ("Classification: Positive\nReason: profits rose", P),
            ("Classification: Negative\nReason: lawsuit", N),
            ("It's Positive!", P),
            ("Result -> negative", N),
            ("neutral.", U),
            ("Positively received", P),
            ("nonnegative", X),
            ("正面", P),
            ("负面", N),
            ("中性", U),
            ("情感：积极", P),
            ("情感：消极", N),
            ("这条新闻是正面的", P),
            ("答案：负面", N),
            ("我认为是中性", U),
            ("positive（正面）", P),
            ("负面 (negative)", N),
            ("The answer is: neutral", U),
            ("mixed but leaning negative", N),
            ("Final answer - positive", P),
            ("Sentiment analysis result: NEUTRAL", U),
            ("none of the above", X),
            ("N/A", X),
            ("pos", X),
            ("Negative sentiment due to the decline", N),
            ("positive sentiment, neutral tone", P),
            ("\tneutral\n", U),
        ];
        assert_eq!(cases.len(), 50);
        for (raw, want) in cases {
            assert_eq!(parse_label(raw, THREE, En), *want, "{raw:?}");
        }
    }

    #[test]
    fn parse_roundtrips_label_words() {
        for lang in [En, Zh] {
            for &l in THREE {
                assert_eq!(parse_label(label_word(l, lang), THREE, lang), l.into());
            }
        }
    }

    fn bundle(text: &str, labels: &[SentimentLabel], language: Language) -> PromptBundle {
        PromptBundle {
            system_text: String::new(),
            shots: vec![],
            query_id: "q".into(),
            query_text: text.into(),
            allowed_labels: labels.to_vec(),
            language,
        }
    }

    #[test]
    fn mock_lexicon() {
        assert_eq!(mock_classify(&bundle("profits surged", THREE, En)).parsed_label, ParsedLabel::Positive);
        assert_eq!(mock_classify(&bundle("the board met today", THREE, En)).parsed_label, ParsedLabel::Neutral);
        assert_eq!(mock_classify(&bundle("the board met today", TWO, En)).parsed_label, ParsedLabel::Negative);
        assert_eq!(mock_classify(&bundle("公司股价大跌，亏损扩大", TWO, Zh)).parsed_label, ParsedLabel::Negative);
        let b = bundle("shares fell after the lawsuit", THREE, En);
        assert_eq!(mock_classify(&b), mock_classify(&b));
    }

    struct Counting {
        in_flight: AtomicUsize,
        peak: AtomicUsize,
        calls: AtomicUsize,
    }

    impl ChatTransport for Counting {
        fn complete(&self, _request: &ChatRequest) -> Result<String> {
            let now = self.in_flight.fetch_add(1, Ordering::SeqCst) + 1;
            self.peak.fetch_max(now, Ordering::SeqCst);
            self.calls.fetch_add(1, Ordering::SeqCst);
            std::thread::sleep(Duration::from_millis(5));
            self.in_flight.fetch_sub(1, Ordering::SeqCst);
            Ok("positive".into())
        }
    }

    #[test]
    fn concurrency_is_bounded() {
        let t = Counting {
            in_flight: AtomicUsize::new(0),
            peak: AtomicUsize::new(0),
            calls: AtomicUsize::new(0),
        };
        let config = EndpointConfig {
            max_concurrency: 3,
            ..Default::default()
        };
        let bundles: Vec<_> = (0..24)
            .map(|i| PromptBundle {
                query_id: format!("q{i:02}"),
                ..bundle("x", THREE, En)
            })
            .collect();
        let preds = classify_all(&bundles, &config, &t);
        assert_eq!(preds.len(), 24);
        assert!(t.peak.load(Ordering::SeqCst) <= 3);
        assert!(t.peak.load(Ordering::SeqCst) >= 2);
        assert!(preds.windows(2).all(|w| w[0].example_id < w[1].example_id));
    }

    struct Failing(AtomicUsize);

    impl ChatTransport for Failing {
        fn complete(&self, _request: &ChatRequest) -> Result<String> {
            self.0.fetch_add(1, Ordering::SeqCst);
            Err(Error::Endpoint("connection refused".into()))
        }
    }

    #[test]
    fn failures_become_predictions() {
        let t = Failing(AtomicUsize::new(0));
        let config = EndpointConfig {
            retry: RetryPolicy { max_retries: 2, backoff_ms: 1 },
            ..Default::default()
        };
        let p = classify(&bundle("x", THREE, En), &config, &t);
        assert_eq!(t.0.load(Ordering::SeqCst), 3);
        assert_eq!(p.parsed_label, ParsedLabel::Unparseable);
        assert!(p.is_transport_failure());
    }

    fn serve_once(status: &str, body: &str) -> (String, std::thread::JoinHandle<String>) {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap();
        let response = format!(
            "HTTP/1.1 {status}\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
            body.len()
        );
        let handle = std::thread::spawn(move || {
            let (stream, _) = listener.accept().unwrap();
            let mut reader = BufReader::new(stream);
            let mut len = 0;
            let mut head = String::new();
            loop {
                let mut line = String::new();
                reader.read_line(&mut line).unwrap();
                if line == "\r\n" {
                    break;
                }
                if let Some(v) = line.to_ascii_lowercase().strip_prefix("content-length:") {
                    len = v.trim().parse().unwrap();
                }
                head.push_str(&line);
            }
            let mut body = vec![0; len];
            reader.read_exact(&mut body).unwrap();
            reader.get_mut().write_all(response.as_bytes()).unwrap();
            format!("{head}\n{}", String::from_utf8(body).unwrap())
        });
        (format!("http://{addr}/v1"), handle)
    }

    #[test]
    fn http_transport_wire_format() {
        let (url, handle) = serve_once("200 OK", r#"{"choices":[{"message":{"role":"assistant","content":"Negative."}}]}"#);
        std::env::set_var("FINSENT_TEST_KEY", "secret");
        let config = EndpointConfig {
            base_url: url,
            model_name: "test-model".into(),
            api_key_env: "FINSENT_TEST_KEY".into(),
            retry: RetryPolicy { max_retries: 0, backoff_ms: 0 },
            ..Default::default()
        };
        let p = classify(&bundle("shares fell", THREE, En), &config, &HttpTransport::new(&config));
        assert_eq!(p.parsed_label, ParsedLabel::Negative);
        assert_eq!(p.raw_output, "Negative.");
        let seen = handle.join().unwrap();
        assert!(seen.starts_with("POST /v1/chat/completions"));
        assert!(seen.to_ascii_lowercase().contains("authorization: bearer secret"));
        let body: serde_json::Value = serde_json::from_str(seen.split("\n\n").last().unwrap().trim()).unwrap();
        assert_eq!(body["model"], "test-model");
        assert_eq!(body["temperature"], 0.0);
        assert_eq!(body["max_tokens"], 16);
        assert_eq!(body["messages"].as_array().unwrap().len(), 2);
    }

    #[test]
    fn http_error_status_is_recorded() {
        let (url, handle) = serve_once("500 Internal Server Error", "{}");
        let config = EndpointConfig {
            base_url: url,
            retry: RetryPolicy { max_retries: 0, backoff_ms: 0 },
            ..Default::default()
        };
        let p = classify(&bundle("x", THREE, En), &config, &HttpTransport::new(&config));
        handle.join().unwrap();
        assert!(p.error.unwrap().contains("HTTP 500"));
    }
}

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Condvar, Mutex};
use std::time::Duration;

use base64::Engine;
use serde_json::{json, Value};

use super::prompt::{
    overlay_prompt, py_json, state_prompt, STATE_REFINER_SYSTEM_PROMPT, URDF_EXPERT_SYSTEM_PROMPT,
};
use super::{ExtractedInfo, Proposer, ProposerError, StateContext, StateUpdate};
use crate::mesh::{encode_png, render_views, RenderOptions, View};
use crate::overlay::{validate_overlay, Overlay};

/// Re-asks after an unusable reply, on top of the first request.
pub const DEFAULT_MAX_RETRIES: usize = 2;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum TransportError {
    #[error("request failed: {0}")]
    Request(String),
    #[error("endpoint returned HTTP {status}: {body}")]
    Status { status: u16, body: String },
}

/// Sends one chat request and returns the assistant text.
pub trait ChatTransport: Send + Sync {
    fn send(&self, request: &Value) -> Result<String, TransportError>;
}

/// Chat-completions style endpoint over HTTPS.
pub struct HttpTransport {
    endpoint: String,
    api_key: Option<String>,
    client: reqwest::blocking::Client,
}

impl HttpTransport {
    pub fn new(
        endpoint: impl Into<String>,
        api_key: Option<String>,
        timeout: Duration,
    ) -> Result<Self, TransportError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| TransportError::Request(e.to_string()))?;
        Ok(HttpTransport {
            endpoint: endpoint.into(),
            api_key,
            client,
        })
    }

    /// Reads the bearer credential from `ARTREADY_API_KEY`, if set.
    pub fn from_env(
        endpoint: impl Into<String>,
        timeout: Duration,
    ) -> Result<Self, TransportError> {
        let key = std::env::var("ARTREADY_API_KEY")
            .ok()
            .filter(|k| !k.is_empty());
        Self::new(endpoint, key, timeout)
    }
}

/// Pulls the assistant text out of the common response shapes.
fn response_text(body: &str) -> String {
    let Ok(v) = serde_json::from_str::<Value>(body) else {
        return body.to_string();
    };
    let candidates = [
        v.pointer("/choices/0/message/content"),
        v.pointer("/content/0/text"),
        v.pointer("/output_text"),
        v.pointer("/candidates/0/content/parts/0/text"),
    ];
    let text = candidates
        .into_iter()
        .flatten()
        .find_map(Value::as_str)
        .map(str::to_string);
    text.unwrap_or_else(|| body.to_string())
}

impl ChatTransport for HttpTransport {
    fn send(&self, request: &Value) -> Result<String, TransportError> {
        let mut req = self.client.post(&self.endpoint).json(request);
        if let Some(key) = &self.api_key {
            req = req.bearer_auth(key);
        }
        let resp = req
            .send()
            .map_err(|e| TransportError::Request(e.to_string()))?;
        let status = resp.status();
        let body = resp
            .text()
            .map_err(|e| TransportError::Request(e.to_string()))?;
        if !status.is_success() {
            return Err(TransportError::Status {
                status: status.as_u16(),
                body: body.chars().take(500).collect(),
            });
        }
        Ok(response_text(&body))
    }
}

/// Bounds the number of requests in flight across all sessions.
#[derive(Debug)]
pub struct RateCap {
    max: usize,
    in_flight: Mutex<usize>,
    freed: Condvar,
}

pub struct RateGuard<'a>(&'a RateCap);

impl RateCap {
    pub fn new(max: usize) -> Self {
        RateCap {
            max: max.max(1),
            in_flight: Mutex::new(0),
            freed: Condvar::new(),
        }
    }

    pub fn acquire(&self) -> RateGuard<'_> {
        let mut n = self.in_flight.lock().expect("rate cap lock");
        while *n >= self.max {
            n = self.freed.wait(n).expect("rate cap lock");
        }
        *n += 1;
        RateGuard(self)
    }
}

impl Drop for RateGuard<'_> {
    fn drop(&mut self) {
        *self.0.in_flight.lock().expect("rate cap lock") -= 1;
        self.0.freed.notify_one();
    }
}

/// Finds the first balanced `{...}` span in `text` that parses as JSON.
pub fn extract_json(text: &str) -> Result<Value, String> {
    let bytes = text.as_bytes();
    let mut last_err = "no JSON object in response".to_string();
    for start in text.match_indices('{').map(|(i, _)| i) {
        let (mut depth, mut in_str, mut escaped) = (0usize, false, false);
        let mut end = None;
        for (k, &b) in bytes[start..].iter().enumerate() {
            if in_str {
                match b {
                    _ if escaped => escaped = false,
                    b'\\' => escaped = true,
                    b'"' => in_str = false,
                    _ => {}
                }
                continue;
            }
            match b {
                b'"' => in_str = true,
                b'{' => depth += 1,
                b'}' => {
                    depth -= 1;
                    if depth == 0 {
                        end = Some(start + k + 1);
                        break;
                    }
                }
                _ => {}
            }
        }
        let Some(end) = end else { continue };
        match serde_json::from_str::<Value>(&text[start..end]) {
            Ok(v) => return Ok(v),
            Err(e) => last_err = format!("invalid JSON: {e}"),
        }
    }
    Err(last_err)
}

enum Failure {
    Syntax(String),
    Schema(String),
}

/// Proposer backed by a remote multi-modal model.
pub struct RemoteProposer {
    transport: Arc<dyn ChatTransport>,
    pub model_name: String,
    pub max_retries: usize,
    pub render: RenderOptions,
    cap: Option<Arc<RateCap>>,
    queries: AtomicUsize,
}

impl RemoteProposer {
    pub fn new(transport: Arc<dyn ChatTransport>) -> Self {
        RemoteProposer {
            transport,
            model_name: "default".into(),
            max_retries: DEFAULT_MAX_RETRIES,
            render: RenderOptions::default(),
            cap: None,
            queries: AtomicUsize::new(0),
        }
    }

    pub fn with_rate_cap(mut self, cap: Arc<RateCap>) -> Self {
        self.cap = Some(cap);
        self
    }

    fn user_message(text: &str, images: &[Vec<u8>]) -> Value {
        let b64 = base64::engine::general_purpose::STANDARD;
        let mut content = vec![json!({"type": "text", "text": text})];
        content.extend(images.iter().map(|png| {
            json!({"type": "image_url", "image_url": {"url": format!("data:image/png;base64,{}", b64.encode(png))}})
        }));
        json!({"role": "user", "content": content})
    }

    fn converse<T>(
        &self,
        system: &str,
        prompt: &str,
        images: &[Vec<u8>],
        parse: impl Fn(Value) -> Result<T, String>,
    ) -> Result<T, ProposerError> {
        let mut messages = vec![
            json!({"role": "system", "content": system}),
            Self::user_message(prompt, images),
        ];
        let attempts = 1 + self.max_retries;
        let mut last = Failure::Syntax(String::new());
        for _ in 0..attempts {
            let request = json!({"model": self.model_name, "messages": messages});
            self.queries.fetch_add(1, Ordering::SeqCst);
            let reply = {
                let _slot = self.cap.as_ref().map(|c| c.acquire());
                self.transport.send(&request)?
            };
            let outcome = match extract_json(&reply) {
                Err(e) => Err(Failure::Syntax(e)),
                Ok(v) => parse(v).map_err(Failure::Schema),
            };
            match outcome {
                Ok(t) => return Ok(t),
                Err(f) => {
                    let msg = match &f {
                        Failure::Syntax(m) | Failure::Schema(m) => m.clone(),
                    };
                    messages.push(json!({"role": "assistant", "content": reply}));
                    messages.push(json!({"role": "user", "content": format!(
                        "Your previous response could not be used: {msg}. Return only the corrected JSON object."
                    )}));
                    last = f;
                }
            }
        }
        Err(match last {
            Failure::Syntax(m) => ProposerError::ExhaustedRetries { attempts, last: m },
            Failure::Schema(m) => ProposerError::SchemaInvalid(m),
        })
    }
}

impl Proposer for RemoteProposer {
    fn name(&self) -> &str {
        "remote"
    }

    fn queries(&self) -> usize {
        self.queries.load(Ordering::SeqCst)
    }

    fn propose_overlay(&self, info: &ExtractedInfo) -> Result<Overlay, ProposerError> {
        let prompt = overlay_prompt(&info.object_info());
        let images: Vec<Vec<u8>> = info.views.iter().flatten().map(encode_png).collect();
        self.converse(URDF_EXPERT_SYSTEM_PROMPT, &prompt, &images, |v| {
            let overlay = Overlay::from_value(v).map_err(|e| e.to_string())?;
            validate_overlay(&overlay, &info.model).map_err(|e| e.to_string())?;
            Ok(overlay)
        })
    }

    fn propose_state_update(&self, ctx: &StateContext<'_>) -> Result<StateUpdate, ProposerError> {
        let mut prompt = state_prompt(ctx);
        if ctx.rejections > 0 {
            prompt.push_str(&format!(
                "\nThe previous proposal from this state did not reduce penetration ({} rejected). Propose a different update.\n",
                ctx.rejections
            ));
        }
        let images = match ctx.store {
            Some(store) => render_views(
                ctx.model,
                ctx.q,
                &[View::Perspective, View::Front, View::Right, View::Top],
                store,
                &self.render,
            )?
            .iter()
            .map(encode_png)
            .collect(),
            None => Vec::new(),
        };
        let focus = ctx.focus;
        self.converse(STATE_REFINER_SYSTEM_PROMPT, &prompt, &images, |v| {
            let update: StateUpdate = serde_json::from_value(v).map_err(|e| e.to_string())?;
            if let Some(j) = update.joint_deltas.keys().find(|j| !focus.contains(j)) {
                return Err(format!(
                    "joint `{j}` is not one of the focus joints {}",
                    py_json(focus, None)
                ));
            }
            Ok(update)
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeMap;
    use std::io::{BufRead, BufReader, Read, Write};
    use std::net::TcpListener;

    use crate::asset::{AssetModel, JointKind, JointLimits, JointSpec, LinkSpec, SemanticMap};

    /// Replays canned replies in order and records the requests.
    struct Scripted {
        replies: Vec<String>,
        seen: Mutex<Vec<Value>>,
    }

    impl Scripted {
        fn new(replies: &[&str]) -> Arc<Self> {
            Arc::new(Scripted {
                replies: replies.iter().map(|s| s.to_string()).collect(),
                seen: Mutex::new(Vec::new()),
            })
        }
    }

    impl ChatTransport for Scripted {
        fn send(&self, request: &Value) -> Result<String, TransportError> {
            let mut seen = self.seen.lock().unwrap();
            seen.push(request.clone());
            let i = (seen.len() - 1).min(self.replies.len() - 1);
            Ok(self.replies[i].clone())
        }
    }

    fn info() -> ExtractedInfo {
        let base = LinkSpec::new("base");
        let lid = LinkSpec::new("lid");
        let mut j = JointSpec::new("hinge", JointKind::Revolute, "base", "lid");
        j.limits = Some(JointLimits::new(0.0, 1.57));
        ExtractedInfo {
            model: AssetModel::new("box", vec![base, lid], vec![j]).unwrap(),
            semantics: SemanticMap::default(),
            analyses: BTreeMap::new(),
            views: None,
            guidance: None,
        }
    }

    const PAYLOAD: &str = r#"{"global_modifications": {"uniform_scale_factor": 0.5},
        "link_modifications": {"lid": {"mass": 0.2, "inertia": {"ixx": 1e-4, "iyy": 1e-4, "izz": 1e-4}}},
        "joint_modifications": {"hinge": {"damping": 0.15, "friction": 0.01, "stiffness": 0.0}},
        "validation_notes": ["stub"]}"#;

    #[test]
    fn echo_payload_parsed() {
        let t = Scripted::new(&[PAYLOAD]);
        let p = RemoteProposer::new(t.clone());
        let o = p.propose_overlay(&info()).unwrap();
        assert_eq!(o, Overlay::from_json(PAYLOAD).unwrap());
        assert_eq!(p.queries(), 1);
        let req = &t.seen.lock().unwrap()[0];
        assert_eq!(req["messages"][0]["content"], URDF_EXPERT_SYSTEM_PROMPT);
    }

    #[test]
    fn prose_wrapped_json_extracted() {
        let reply =
            format!("Sure! Here is the overlay {{not json}}:\n```json\n{PAYLOAD}\n```\nDone.");
        let p = RemoteProposer::new(Scripted::new(&[&reply]));
        assert!(p.propose_overlay(&info()).is_ok());
        assert_eq!(p.queries(), 1);
    }

    #[test]
    fn invalid_json_exhausts_retries() {
        let p = RemoteProposer::new(Scripted::new(&["{ nope", "still { bad", "no braces"]));
        match p.propose_overlay(&info()) {
            Err(ProposerError::ExhaustedRetries { attempts, .. }) => assert_eq!(attempts, 3),
            other => panic!("{other:?}"),
        }
        assert_eq!(p.queries(), 3);
    }

    #[test]
    fn schema_failure_distinct_and_retried_with_error() {
        let bad = r#"{"link_modifications": {"lid": {"mass": -3}}}"#;
        let t = Scripted::new(&[bad]);
        let p = RemoteProposer::new(t.clone());
        assert!(matches!(
            p.propose_overlay(&info()),
            Err(ProposerError::SchemaInvalid(_))
        ));
        let seen = t.seen.lock().unwrap();
        let last = seen[2]["messages"].as_array().unwrap().last().unwrap()["content"]
            .as_str()
            .unwrap()
            .to_string();
        assert!(last.contains("link_modifications.lid.mass"), "{last}");
    }

    #[test]
    fn recovers_on_second_attempt() {
        let p = RemoteProposer::new(Scripted::new(&["garbage", PAYLOAD]));
        assert!(p.propose_overlay(&info()).is_ok());
        assert_eq!(p.queries(), 2);
    }

    #[test]
    fn extraction_skips_unbalanced_and_strings() {
        let v = extract_json(r#"text { "a": "}{" , "b": [1, {"c": 2}] } tail"#).unwrap();
        assert_eq!(v["b"][1]["c"], 2);
        assert!(extract_json("no json here").is_err());
    }

    #[test]
    fn http_transport_round_trip() {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap();
        let server = std::thread::spawn(move || {
            let (mut stream, _) = listener.accept().unwrap();
            let mut reader = BufReader::new(stream.try_clone().unwrap());
            let mut len = 0usize;
            let mut auth = String::new();
            loop {
                let mut line = String::new();
                reader.read_line(&mut line).unwrap();
                let lower = line.to_ascii_lowercase();
                if let Some(v) = lower.strip_prefix("content-length:") {
                    len = v.trim().parse().unwrap();
                }
                if lower.starts_with("authorization:") {
                    auth = line.trim().to_string();
                }
                if line == "\r\n" {
                    break;
                }
            }
            let mut body = vec![0u8; len];
            reader.read_exact(&mut body).unwrap();
            let req: Value = serde_json::from_slice(&body).unwrap();
            assert_eq!(req["messages"][0]["role"], "system");
            let reply =
                json!({"choices": [{"message": {"content": "{\"ok\": true}"}}]}).to_string();
            write!(
                stream,
                "HTTP/1.1 200 OK\r\nContent-Type: application/json\r\nContent-Length: {}\r\n\r\n{}",
                reply.len(),
                reply
            )
            .unwrap();
            auth
        });
        let t = HttpTransport::new(
            format!("http://{addr}/v1/chat"),
            Some("test-key".into()),
            Duration::from_secs(10),
        )
        .unwrap();
        let text = t
            .send(&json!({"messages": [{"role": "system", "content": "x"}]}))
            .unwrap();
        assert_eq!(text, "{\"ok\": true}");
        assert_eq!(
            server.join().unwrap().to_ascii_lowercase(),
            "authorization: bearer test-key"
        );
    }

    #[test]
    fn rate_cap_bounds_concurrency() {
        let cap = Arc::new(RateCap::new(2));
        let peak = Arc::new(AtomicUsize::new(0));
        let now = Arc::new(AtomicUsize::new(0));
        let handles: Vec<_> = (0..8)
            .map(|_| {
                let (cap, peak, now) = (cap.clone(), peak.clone(), now.clone());
                std::thread::spawn(move || {
                    let _g = cap.acquire();
                    let n = now.fetch_add(1, Ordering::SeqCst) + 1;
                    peak.fetch_max(n, Ordering::SeqCst);
                    std::thread::sleep(Duration::from_millis(5));
                    now.fetch_sub(1, Ordering::SeqCst);
                })
            })
            .collect();
        for h in handles {
            h.join().unwrap();
        }
        assert!(peak.load(Ordering::SeqCst) <= 2);
    }
}

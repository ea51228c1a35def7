//! Chat-completions style HTTP backend.

use std::time::Duration;

use serde_json::{json, Value};

use super::{Backend, BackendConfig, ChatParams, Completion, GatewayError};

pub struct HttpBackend {
    client: reqwest::blocking::Client,
    base: String,
    api_key_env: String,
}

impl HttpBackend {
    pub fn new(config: &BackendConfig) -> Result<Self, GatewayError> {
        let endpoint = config
            .endpoint
            .as_deref()
            .ok_or_else(|| GatewayError::InvalidConfig("http backend requires an endpoint".into()))?;
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_millis(config.timeout_ms))
            .build()
            .map_err(|e| GatewayError::InvalidConfig(e.to_string()))?;
        Ok(Self { client, base: endpoint.trim_end_matches('/').to_string(), api_key_env: config.api_key_env.clone() })
    }

    fn post(&self, path: &str, body: &Value) -> Result<Value, GatewayError> {
        let mut req = self.client.post(format!("{}{}", self.base, path)).json(body);
        if let Ok(key) = std::env::var(&self.api_key_env) {
            if !key.is_empty() {
                req = req.bearer_auth(key);
            }
        }
        let resp = req.send().map_err(|e| {
            if e.is_timeout() {
                GatewayError::Timeout
            } else {
                GatewayError::Transient(e.to_string())
            }
        })?;
        let status = resp.status().as_u16();
        let text = resp.text().map_err(|e| GatewayError::Transient(e.to_string()))?;
        match status {
            200..=299 => serde_json::from_str(&text).map_err(|e| GatewayError::BadResponse(e.to_string())),
            429 => Err(GatewayError::RateLimited { attempts: 1 }),
            408 => Err(GatewayError::Timeout),
            500..=599 => Err(GatewayError::Transient(format!("HTTP {status}"))),
            _ => Err(GatewayError::Http { status, body: text }),
        }
    }
}

pub(crate) fn chat_body(model: &str, params: &ChatParams, logprobs: bool) -> Value {
    let mut body = json!({
        "model": model,
        "messages": [
            {"role": "system", "content": params.system},
            {"role": "user", "content": params.user},
        ],
        "temperature": params.temperature,
        "max_tokens": params.max_tokens,
    });
    if let Some(seed) = params.seed {
        body["seed"] = json!(seed);
    }
    if logprobs {
        body["logprobs"] = json!(true);
        body["top_logprobs"] = json!(5);
    }
    body
}

pub(crate) fn parse_chat(resp: &Value) -> Result<Completion, GatewayError> {
    let choice = resp
        .get("choices")
        .and_then(|c| c.get(0))
        .ok_or_else(|| GatewayError::BadResponse("response has no choices".into()))?;
    let text = choice
        .pointer("/message/content")
        .and_then(Value::as_str)
        .ok_or_else(|| GatewayError::BadResponse("first choice has no message content".into()))?
        .to_string();
    Ok(Completion { text, yes_prob: yes_probability(choice) })
}

/// Total probability of first-token alternatives that normalize to "yes".
fn yes_probability(choice: &Value) -> Option<f64> {
    let first = choice.pointer("/logprobs/content/0")?;
    let alternatives = first.get("top_logprobs").and_then(Value::as_array);
    let mut candidates: Vec<(&str, f64)> = Vec::new();
    match alternatives {
        Some(alts) if !alts.is_empty() => {
            for a in alts {
                if let (Some(t), Some(lp)) = (a.get("token").and_then(Value::as_str), a.get("logprob").and_then(Value::as_f64)) {
                    candidates.push((t, lp));
                }
            }
        }
        _ => {
            let t = first.get("token").and_then(Value::as_str)?;
            let lp = first.get("logprob").and_then(Value::as_f64)?;
            candidates.push((t, lp));
        }
    }
    let p: f64 = candidates
        .iter()
        .filter(|(t, _)| t.trim().trim_matches(|c: char| !c.is_alphanumeric()).eq_ignore_ascii_case("yes"))
        .map(|(_, lp)| lp.exp())
        .sum();
    Some(p.clamp(0.0, 1.0))
}

impl Backend for HttpBackend {
    fn complete(&self, model: &str, params: &ChatParams, logprobs: bool) -> Result<Completion, GatewayError> {
        let resp = self.post("/chat/completions", &chat_body(model, params, logprobs))?;
        parse_chat(&resp)
    }

    fn embed(&self, model: &str, texts: &[String]) -> Result<Vec<Vec<f32>>, GatewayError> {
        let resp = self.post("/embeddings", &json!({"model": model, "input": texts}))?;
        let data = resp
            .get("data")
            .and_then(Value::as_array)
            .ok_or_else(|| GatewayError::BadResponse("embedding response has no data".into()))?;
        let mut rows: Vec<(usize, Vec<f32>)> = Vec::with_capacity(data.len());
        for (i, item) in data.iter().enumerate() {
            let index = item.get("index").and_then(Value::as_u64).map_or(i, |x| x as usize);
            let vec = item
                .get("embedding")
                .and_then(Value::as_array)
                .ok_or_else(|| GatewayError::BadResponse("embedding entry without vector".into()))?
                .iter()
                .map(|x| x.as_f64().map(|f| f as f32))
                .collect::<Option<Vec<f32>>>()
                .ok_or_else(|| GatewayError::BadResponse("non-numeric embedding component".into()))?;
            rows.push((index, vec));
        }
        rows.sort_by_key(|r| r.0);
        Ok(rows.into_iter().map(|r| r.1).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn request_body_shape() {
        let p = ChatParams { temperature: 0.7, max_tokens: 16, seed: Some(9), system: "S".into(), user: "U".into() };
        let b = chat_body("llama", &p, true);
        assert_eq!(b["model"], "llama");
        assert_eq!(b["messages"][0]["role"], "system");
        assert_eq!(b["messages"][1]["content"], "U");
        assert_eq!(b["seed"], 9);
        assert_eq!(b["logprobs"], true);
        let b = chat_body("llama", &ChatParams { seed: None, ..p }, false);
        assert!(b.get("seed").is_none() && b.get("logprobs").is_none());
    }

    #[test]
    fn parses_content_and_yes_probability() {
        let resp = json!({"choices": [{"message": {"content": "Yes"}, "logprobs": {"content": [
            {"token": "Yes", "logprob": -0.1, "top_logprobs": [
                {"token": "Yes", "logprob": (0.6f64).ln()},
                {"token": " yes", "logprob": (0.1f64).ln()},
                {"token": "No", "logprob": (0.3f64).ln()}
            ]}
        ]}}]});
        let c = parse_chat(&resp).unwrap();
        assert_eq!(c.text, "Yes");
        assert!((c.yes_prob.unwrap() - 0.7).abs() < 1e-9);
        let plain = json!({"choices": [{"message": {"content": "no"}}]});
        assert_eq!(parse_chat(&plain).unwrap().yes_prob, None);
        assert!(parse_chat(&json!({"choices": []})).is_err());
    }
}

//! HTTP adapters for hosted OCR, translation and LLM services.
//!
//! Credentials come from the environment:
//! - `GOOGLE_API_KEY` for Cloud Vision text detection and Cloud Translation v2
//! - `OPENAI_API_KEY` (and optionally `OPENAI_BASE_URL`) for chat completions
//!   and fine-tuning jobs

use std::time::Duration;

use base64::Engine;
use reqwest::blocking::{multipart, Client};
use serde_json::{json, Value};

use crate::augment::TranslationProvider;
use crate::error::{Error, Result};
use crate::ocr::{OcrProvider, Recognition};
use crate::prompt::{FinetuneRecord, LlmProvider};

fn env_key(var: &str, provider: &str) -> Result<String> {
    std::env::var(var).map_err(|_| Error::Config(format!("{provider} needs the {var} environment variable")))
}

fn client() -> Result<Client> {
    Client::builder()
        .timeout(Duration::from_secs(120))
        .build()
        .map_err(|e| Error::provider("http", e))
}

fn send_json(provider: &str, req: reqwest::blocking::RequestBuilder) -> Result<Value> {
    let resp = req.send().map_err(|e| Error::provider(provider, e))?;
    let status = resp.status();
    let body: Value = resp.json().map_err(|e| Error::provider(provider, e))?;
    if !status.is_success() {
        return Err(Error::provider(provider, format!("HTTP {status}: {body}")));
    }
    Ok(body)
}

pub struct GoogleVisionOcr {
    client: Client,
    key: String,
}

impl GoogleVisionOcr {
    pub fn from_env() -> Result<Self> {
        Ok(GoogleVisionOcr {
            client: client()?,
            key: env_key("GOOGLE_API_KEY", "cloud OCR")?,
        })
    }
}

impl OcrProvider for GoogleVisionOcr {
    fn name(&self) -> &str {
        "google-vision"
    }

    fn recognize(&self, image: &[u8]) -> Result<Recognition> {
        let body = json!({
            "requests": [{
                "image": {"content": base64::engine::general_purpose::STANDARD.encode(image)},
                "features": [{"type": "TEXT_DETECTION"}],
            }]
        });
        let url = "https://vision.googleapis.com/v1/images:annotate";
        let resp = send_json(
            self.name(),
            self.client.post(url).header("x-goog-api-key", &self.key).json(&body),
        )?;
        let first = &resp["responses"][0];
        if let Some(err) = first.get("error") {
            return Err(Error::provider(self.name(), err));
        }
        let full = &first["fullTextAnnotation"];
        let mut blocks = Vec::new();
        let mut confidences = Vec::new();
        for page in full["pages"].as_array().into_iter().flatten() {
            for block in page["blocks"].as_array().into_iter().flatten() {
                if let Some(c) = block["confidence"].as_f64() {
                    confidences.push(c);
                }
                let mut text = String::new();
                for para in block["paragraphs"].as_array().into_iter().flatten() {
                    for word in para["words"].as_array().into_iter().flatten() {
                        let w: String = word["symbols"]
                            .as_array()
                            .into_iter()
                            .flatten()
                            .filter_map(|s| s["text"].as_str())
                            .collect();
                        if !text.is_empty() {
                            text.push(' ');
                        }
                        text.push_str(&w);
                    }
                }
                blocks.push(text);
            }
        }
        if blocks.is_empty() {
            if let Some(t) = full["text"].as_str() {
                blocks.push(t.to_string());
            }
        }
        let confidence = (!confidences.is_empty()).then(|| confidences.iter().sum::<f64>() / confidences.len() as f64);
        Ok(Recognition { blocks, confidence })
    }
}

pub struct GoogleTranslate {
    client: Client,
    key: String,
}

impl GoogleTranslate {
    pub fn from_env() -> Result<Self> {
        Ok(GoogleTranslate {
            client: client()?,
            key: env_key("GOOGLE_API_KEY", "cloud translation")?,
        })
    }
}

impl TranslationProvider for GoogleTranslate {
    fn name(&self) -> &str {
        "google-translate"
    }

    fn translate(&self, text: &str, from: &str, to: &str) -> Result<String> {
        let body = json!({"q": text, "source": from, "target": to, "format": "text"});
        let url = "https://translation.googleapis.com/language/translate/v2";
        let resp = send_json(
            self.name(),
            self.client.post(url).header("x-goog-api-key", &self.key).json(&body),
        )?;
        resp["data"]["translations"][0]["translatedText"]
            .as_str()
            .map(str::to_string)
            .ok_or_else(|| Error::provider(self.name(), "response without translatedText"))
    }
}

pub struct OpenAiLlm {
    client: Client,
    key: String,
    base_url: String,
    model: String,
    poll_interval: Duration,
}

impl OpenAiLlm {
    pub fn from_env(model: &str) -> Result<Self> {
        Ok(OpenAiLlm {
            client: client()?,
            key: env_key("OPENAI_API_KEY", "cloud LLM")?,
            base_url: std::env::var("OPENAI_BASE_URL").unwrap_or_else(|_| "https://api.openai.com/v1".into()),
            model: model.to_string(),
            poll_interval: Duration::from_secs(30),
        })
    }

    fn chat(&self, model: &str, prompt: &str) -> Result<String> {
        let body = json!({
            "model": model,
            "temperature": 0,
            "messages": [{"role": "user", "content": prompt}],
        });
        let resp = send_json(
            "openai",
            self.client
                .post(format!("{}/chat/completions", self.base_url))
                .bearer_auth(&self.key)
                .json(&body),
        )?;
        resp["choices"][0]["message"]["content"]
            .as_str()
            .map(str::to_string)
            .ok_or_else(|| Error::provider("openai", "response without message content"))
    }

    fn upload(&self, name: &str, records: &[FinetuneRecord]) -> Result<String> {
        let mut jsonl = String::new();
        for r in records {
            jsonl.push_str(&r.to_chat_json().to_string());
            jsonl.push('\n');
        }
        let part = multipart::Part::text(jsonl)
            .file_name(name.to_string())
            .mime_str("application/jsonl")
            .map_err(|e| Error::provider("openai", e))?;
        let form = multipart::Form::new().text("purpose", "fine-tune").part("file", part);
        let resp = send_json(
            "openai",
            self.client
                .post(format!("{}/files", self.base_url))
                .bearer_auth(&self.key)
                .multipart(form),
        )?;
        resp["id"]
            .as_str()
            .map(str::to_string)
            .ok_or_else(|| Error::provider("openai", "file upload returned no id"))
    }
}

impl LlmProvider for OpenAiLlm {
    fn name(&self) -> &str {
        &self.model
    }

    fn complete(&self, prompt: &str) -> Result<String> {
        self.chat(&self.model, prompt)
    }

    fn finetune(&self, train: &[FinetuneRecord], eval: &[FinetuneRecord], epochs: u32) -> Result<String> {
        let training_file = self.upload("train.jsonl", train)?;
        let mut body = json!({
            "model": self.model,
            "training_file": training_file,
            "hyperparameters": {"n_epochs": epochs},
        });
        if !eval.is_empty() {
            body["validation_file"] = json!(self.upload("eval.jsonl", eval)?);
        }
        let job = send_json(
            "openai",
            self.client
                .post(format!("{}/fine_tuning/jobs", self.base_url))
                .bearer_auth(&self.key)
                .json(&body),
        )?;
        let job_id = job["id"]
            .as_str()
            .ok_or_else(|| Error::provider("openai", "fine-tuning job without id"))?
            .to_string();
        loop {
            let status = send_json(
                "openai",
                self.client
                    .get(format!("{}/fine_tuning/jobs/{job_id}", self.base_url))
                    .bearer_auth(&self.key),
            )?;
            match status["status"].as_str() {
                Some("succeeded") => {
                    return status["fine_tuned_model"]
                        .as_str()
                        .map(str::to_string)
                        .ok_or_else(|| Error::provider("openai", "finished job has no model id"))
                }
                Some("failed") | Some("cancelled") => {
                    return Err(Error::provider(
                        "openai",
                        format!("fine-tuning job {job_id}: {}", status["error"]),
                    ))
                }
                _ => std::thread::sleep(self.poll_interval),
            }
        }
    }

    fn complete_with(&self, model_id: &str, prompt: &str) -> Result<String> {
        self.chat(model_id, prompt)
    }
}

use std::thread;
use std::time::Duration;

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{Error, Result};

/// Connection settings shared by the remote embedding and generation providers.
#[derive(Clone, Debug)]
pub struct HttpSettings {
    pub endpoint: String,
    pub token: Option<String>,
    pub timeout: Duration,
    pub retries: usize,
    pub backoff: Duration,
}

impl HttpSettings {
    pub fn new(endpoint: impl Into<String>) -> Self {
        HttpSettings {
            endpoint: endpoint.into(),
            token: None,
            timeout: Duration::from_secs(30),
            retries: 3,
            backoff: Duration::from_millis(250),
        }
    }
}

pub(crate) struct JsonClient {
    agent: ureq::Agent,
    settings: HttpSettings,
}

impl JsonClient {
    pub fn new(settings: HttpSettings) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(settings.timeout))
            .build()
            .into();
        JsonClient { agent, settings }
    }

    /// POSTs `body` and decodes the JSON reply, retrying transport and HTTP
    /// failures with exponential backoff.
    pub fn post<B: Serialize, R: DeserializeOwned>(&self, body: &B) -> Result<R> {
        let attempts = self.settings.retries + 1;
        let mut delay = self.settings.backoff;
        let mut last = String::new();
        for attempt in 0..attempts {
            if attempt > 0 {
                thread::sleep(delay);
                delay *= 2;
            }
            let mut request = self.agent.post(&self.settings.endpoint);
            if let Some(token) = &self.settings.token {
                request = request.header("Authorization", &format!("Bearer {token}"));
            }
            match request.send_json(body) {
                Ok(response) => match response.into_body().read_json::<R>() {
                    Ok(value) => return Ok(value),
                    Err(e) => last = format!("bad response body: {e}"),
                },
                Err(e) => last = e.to_string(),
            }
        }
        Err(Error::Provider {
            attempts,
            message: last,
        })
    }
}

/// Text-completion wire format shared by extraction and generation.
#[derive(Serialize)]
pub(crate) struct PromptRequest<'a> {
    pub prompt: &'a str,
}

#[derive(serde::Deserialize)]
pub(crate) struct TextResponse {
    pub text: String,
}

impl JsonClient {
    pub fn complete(&self, prompt: &str) -> Result<String> {
        let reply: TextResponse = self.post(&PromptRequest { prompt })?;
        Ok(reply.text)
    }
}

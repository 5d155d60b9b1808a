//! Wire client the simulated crowd uses. Every call goes through the
//! service's request router, either over HTTP or handed to it directly.

use std::sync::Arc;

use microcrowd_service::{ApiRequest, Service};
use serde::de::DeserializeOwned;
use serde::Serialize;

use microcrowd_core::value;

use crate::SimError;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Reply {
    pub status: u16,
    pub body: String,
}

impl Reply {
    pub fn is_success(&self) -> bool {
        (200..300).contains(&self.status)
    }

    pub fn error_code(&self) -> Option<String> {
        let v = microcrowd_core::Value::parse(&self.body).ok()?;
        v.get("error")?.as_str().map(str::to_string)
    }

    pub fn parse<T: DeserializeOwned>(&self) -> Result<T, SimError> {
        value::from_canonical(&self.body).map_err(|e| SimError::Protocol(format!("unexpected reply {}: {e}", self.body)))
    }
}

pub enum Transport {
    /// Calls the router in this process.
    Direct(Arc<Service>),
    Http { agent: ureq::Agent, base: String },
}

impl Transport {
    pub fn http(base: impl Into<String>) -> Transport {
        let agent: ureq::Agent = ureq::Agent::config_builder().http_status_as_error(false).build().into();
        Transport::Http { agent, base: base.into() }
    }

    pub fn call(&self, method: &str, path: &str, token: &str, body: &str) -> Result<Reply, SimError> {
        match self {
            Transport::Direct(service) => {
                let r = service.route(&ApiRequest::new(method, path, Some(token), body));
                Ok(Reply { status: r.status, body: r.body })
            }
            Transport::Http { agent, base } => {
                let url = format!("{base}{path}");
                let auth = format!("Bearer {token}");
                let sent = match method {
                    "GET" => agent.get(&url).header("Authorization", &auth).call(),
                    _ => agent
                        .post(&url)
                        .header("Authorization", &auth)
                        .header("Content-Type", "application/json")
                        .send(body),
                };
                let mut resp = sent.map_err(|e| SimError::ServiceUnreachable(e.to_string()))?;
                let status = resp.status().as_u16();
                let body = resp.body_mut().read_to_string().map_err(|e| SimError::ServiceUnreachable(e.to_string()))?;
                Ok(Reply { status, body })
            }
        }
    }

    pub fn post<T: Serialize + ?Sized>(&self, path: &str, token: &str, body: &T) -> Result<Reply, SimError> {
        self.call("POST", path, token, &value::to_canonical(body))
    }

    pub fn get(&self, path: &str, token: &str) -> Result<Reply, SimError> {
        self.call("GET", path, token, "")
    }
}

/// Fails unless the reply is a 2xx.
pub fn expect_ok(what: &str, reply: Reply) -> Result<Reply, SimError> {
    if reply.is_success() {
        Ok(reply)
    } else {
        Err(SimError::Protocol(format!("{what} failed with {}: {}", reply.status, reply.body)))
    }
}

//! Wire boundary for the microcrowd engine.
//!
//! Routes (bodies are canonical JSON, auth is `Authorization: Bearer`):
//!
//! | route | role |
//! |---|---|
//! | `POST /projects` | client |
//! | `GET /projects/{id}/status`, `GET /projects/{id}/bundle`, `GET /metrics/{id}` | any |
//! | `POST /workers` | worker enrollment token |
//! | `POST /workers/{id}/fetch` | that worker |
//! | `POST /microtasks/{id}/submit`, `POST /microtasks/{id}/skip` | the assignee |
//! | `POST /clock` | client, manual clock only |

pub mod api;
pub mod config;
pub mod http;

pub use api::{worker_token, ApiRequest, ApiResponse, Service, ServiceError};
pub use config::{ApiConfig, AuthTokens, ClockMode, ConfigError};
pub use http::HttpServer;

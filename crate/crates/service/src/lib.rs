//! Session-oriented HTTP API over the covbal workflow, plus the report
//! builder shared with the command-line tool.

pub mod api;
pub mod error;
pub mod report;
pub mod session;
pub mod store;

use std::net::SocketAddr;
use std::path::Path;

pub use api::{router, AppState, JobState, JobStatus};
pub use error::{FieldError, ServiceError, ServiceResult};
pub use report::{build_report, render_markdown, Report};
pub use session::{EffectRequest, Session, Step};
pub use store::Store;

/// Serves the API on `addr`, persisting sessions under `store_dir` when given.
pub async fn serve(addr: SocketAddr, store_dir: Option<&Path>) -> ServiceResult<()> {
    let store = match store_dir {
        Some(dir) => Store::open(dir)?,
        None => Store::in_memory(),
    };
    let app = router(AppState::new(store)?);
    let listener = tokio::net::TcpListener::bind(addr)
        .await
        .map_err(|e| ServiceError::Internal(format!("bind {addr}: {e}")))?;
    axum::serve(listener, app)
        .await
        .map_err(|e| ServiceError::Internal(e.to_string()))
}

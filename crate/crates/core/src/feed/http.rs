//! HTTP surface: `/xrpc/app.bsky.feed.getFeedSkeleton`,
//! `/xrpc/app.bsky.feed.describeFeedGenerator`, and `/.well-known/did.json`.

use std::collections::HashMap;
use std::net::SocketAddr;
use std::sync::Arc;

use axum::extract::{Query, State};
use axum::http::{header, HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::get;
use axum::Router;

use super::{AuthContext, FeedError, FeedService};

pub fn router(service: Arc<FeedService>) -> Router {
    Router::new()
        .route(
            "/xrpc/app.bsky.feed.getFeedSkeleton",
            get(get_feed_skeleton),
        )
        .route(
            "/xrpc/app.bsky.feed.describeFeedGenerator",
            get(describe_feed_generator),
        )
        .route("/.well-known/did.json", get(did_document))
        .with_state(service)
}

/// Bind and serve until the process exits.
pub async fn serve(service: Arc<FeedService>, addr: SocketAddr) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    tracing::info!(%addr, "feed generator listening");
    axum::serve(listener, router(service)).await
}

fn bearer_token(headers: &HeaderMap) -> Option<String> {
    let value = headers.get(header::AUTHORIZATION)?.to_str().ok()?;
    value
        .strip_prefix("Bearer ")
        .or_else(|| value.strip_prefix("bearer "))
        .map(str::to_string)
}

fn xrpc_error(status: StatusCode, error: &str, message: &str) -> Response {
    (
        status,
        axum::Json(serde_json::json!({ "error": error, "message": message })),
    )
        .into_response()
}

async fn get_feed_skeleton(
    State(service): State<Arc<FeedService>>,
    Query(params): Query<HashMap<String, String>>,
    headers: HeaderMap,
) -> Response {
    if let Some(feed) = params.get("feed") {
        if !service.knows_feed(feed) {
            return xrpc_error(
                StatusCode::BAD_REQUEST,
                "UnknownFeed",
                &format!("feed {feed} is not served here"),
            );
        }
    }
    // Malformed tokens are treated as logged-out, malformed cursors as 0,
    // and out-of-range limits are clamped.
    let auth = match bearer_token(&headers) {
        Some(token) => service.auth_from_token(&token),
        None => AuthContext::logged_out(),
    };
    let limit = params
        .get("limit")
        .and_then(|l| l.parse::<u32>().ok())
        .unwrap_or_else(|| service.default_page_limit());
    let cursor = params.get("cursor").map(String::as_str);

    match service.get_feed_skeleton(&auth, limit, cursor) {
        Ok(page) => {
            let feed: Vec<_> = page
                .post_uris
                .iter()
                .map(|uri| serde_json::json!({ "post": uri }))
                .collect();
            let mut body = serde_json::json!({ "feed": feed });
            if let Some(next) = page.next_cursor {
                body["cursor"] = serde_json::Value::String(next);
            }
            axum::Json(body).into_response()
        }
        Err(FeedError::UnknownFeed(feed)) => {
            xrpc_error(StatusCode::BAD_REQUEST, "UnknownFeed", &feed)
        }
        Err(FeedError::Store(e)) => {
            tracing::error!(error = %e, "recs store unavailable");
            xrpc_error(
                StatusCode::INTERNAL_SERVER_ERROR,
                "InternalError",
                "storage unavailable",
            )
        }
    }
}

async fn describe_feed_generator(State(service): State<Arc<FeedService>>) -> Response {
    (
        [(header::CONTENT_TYPE, "application/json")],
        service.describe_feed_generator().to_string(),
    )
        .into_response()
}

async fn did_document(State(service): State<Arc<FeedService>>) -> Response {
    (
        [(header::CONTENT_TYPE, "application/json")],
        service.did_document().to_string(),
    )
        .into_response()
}

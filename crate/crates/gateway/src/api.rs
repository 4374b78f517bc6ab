use std::convert::Infallible;

use axum::extract::State;
use axum::http::StatusCode;
use axum::response::sse::{Event, KeepAlive, Sse};
use axum::response::{Html, IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use futures::stream::{self, Stream};
use nin_dsm::testbed::Command;
use serde::Serialize;
use tokio::sync::broadcast::error::RecvError;

use crate::kernel::{Frame, KernelLink, Rejected};

const INDEX_HTML: &str = include_str!("../static/index.html");

pub fn router(link: KernelLink) -> Router {
    Router::new()
        .route("/", get(index))
        .route("/api/state", get(state))
        .route("/api/command", post(command))
        .route("/api/events", get(events))
        .with_state(link)
}

async fn index() -> Html<&'static str> {
    Html(INDEX_HTML)
}

async fn state(State(link): State<KernelLink>) -> Response {
    Json(link.snapshot().as_ref()).into_response()
}

#[derive(Debug, Serialize)]
struct Verdict {
    accepted: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    at: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    reason: Option<String>,
}

async fn command(
    State(link): State<KernelLink>,
    Json(cmd): Json<Command>,
) -> (StatusCode, Json<Verdict>) {
    match link.command(cmd).await {
        Ok(ok) => (
            StatusCode::OK,
            Json(Verdict {
                accepted: true,
                at: ok.at,
                reason: None,
            }),
        ),
        Err(rejected) => {
            let status = match rejected {
                Rejected::Invalid(_) => StatusCode::BAD_REQUEST,
                Rejected::Finished => StatusCode::CONFLICT,
                Rejected::Stopped => StatusCode::SERVICE_UNAVAILABLE,
            };
            (
                status,
                Json(Verdict {
                    accepted: false,
                    at: None,
                    reason: Some(rejected.to_string()),
                }),
            )
        }
    }
}

async fn events(
    State(link): State<KernelLink>,
) -> Sse<impl Stream<Item = Result<Event, Infallible>>> {
    let rx = link.subscribe();
    let frames = stream::unfold(rx, |mut rx| async move {
        let event = match rx.recv().await {
            Ok(frame) => frame_event(&frame),
            // The subscriber fell behind and the oldest frames were
            // overwritten; say so instead of silently skipping.
            Err(RecvError::Lagged(missed)) => Event::default()
                .event("gap")
                .data(format!("{{\"missed\":{missed}}}")),
            Err(RecvError::Closed) => return None,
        };
        Some((Ok(event), rx))
    });
    Sse::new(frames).keep_alive(KeepAlive::default())
}

fn frame_event(frame: &Frame) -> Event {
    Event::default()
        .id(frame.seq.to_string())
        .event(frame.body.event_name())
        .json_data(&frame.body)
        .expect("frames serialize")
}

use std::future::Future;
use std::sync::Arc;
use std::time::Duration;

use enclave_core::SimTime;
use tokio::net::TcpListener;
use tokio::time::MissedTickBehavior;

use crate::api::{router, AppState};
use crate::service::{GatewayConfig, Service, WallClock};

/// Serves the API on `listener` and pumps the workers every `poll` until
/// `shutdown` resolves.
pub async fn serve_on(
    listener: TcpListener,
    state: AppState,
    poll: Duration,
    shutdown: impl Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    let pump_state = state.clone();
    let pumper = tokio::spawn(async move {
        let mut tick = tokio::time::interval(poll);
        tick.set_missed_tick_behavior(MissedTickBehavior::Skip);
        loop {
            tick.tick().await;
            let s = pump_state.clone();
            if tokio::task::spawn_blocking(move || s.pump()).await.is_err() {
                tracing::error!("worker pump panicked");
            }
        }
    });
    let res = axum::serve(listener, router(state)).with_graceful_shutdown(shutdown).await;
    pumper.abort();
    res
}

/// Blocking entry point for `enclave serve`; stops on ctrl-c.
pub fn serve(cfg: GatewayConfig) -> Result<(), String> {
    let svc = Service::new(cfg.clone(), SimTime::wall_clock())?;
    let state = AppState::new(svc, Arc::new(WallClock));
    let rt = tokio::runtime::Builder::new_multi_thread().enable_all().build().map_err(|e| e.to_string())?;
    rt.block_on(async {
        let listener = TcpListener::bind(&cfg.bind).await.map_err(|e| format!("{}: {e}", cfg.bind))?;
        if let Ok(addr) = listener.local_addr() {
            tracing::info!(%addr, "listening");
        }
        let stop = async {
            let _ = tokio::signal::ctrl_c().await;
            tracing::info!("shutting down");
        };
        serve_on(listener, state, Duration::from_millis(cfg.worker_poll_ms.max(1)), stop)
            .await
            .map_err(|e| e.to_string())
    })
}

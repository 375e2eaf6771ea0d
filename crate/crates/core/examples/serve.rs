//! Runs the HTTP service on 127.0.0.1:8080 for a checkpoint.
//!
//!     cargo run --release --example serve -- runs/tiny/ckpt_00000500.safetensors
//!     curl localhost:8080/health
//!     curl localhost:8080/categories
//!     curl -X POST localhost:8080/generate -H 'content-type: application/json' \
//!       -d '{"layout": {"image_size": 32, "objects": [{"category": "circle", "bbox": [2, 2, 14, 14]}]}, "num_samples": 2, "seed": 1}'

use std::path::PathBuf;

use layout2im::service::{serve, Model, ServiceState, DEFAULT_MAX_BATCH};
use layout2im::trainer::latest_checkpoint;

#[tokio::main]
async fn main() -> layout2im::Result<()> {
    let ckpt = match std::env::args().nth(1) {
        Some(p) => Some(PathBuf::from(p)),
        None => latest_checkpoint("runs/tiny".as_ref())?,
    };
    let model = ckpt.as_deref().map(Model::load).transpose()?;
    match &model {
        Some(m) => println!("serving {} ({} categories)", m.version, m.vocabulary.len()),
        None => println!("no checkpoint found; starting degraded"),
    }
    let state = ServiceState::new(model, DEFAULT_MAX_BATCH);
    let listener = tokio::net::TcpListener::bind("127.0.0.1:8080").await?;
    println!("listening on http://{}", listener.local_addr()?);
    serve(listener, state).await?;
    Ok(())
}

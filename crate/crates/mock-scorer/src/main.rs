use std::net::SocketAddr;
use std::time::Duration;

use clap::Parser;
use lenspipe_mock_scorer::{Faults, MockServer};

/// Serve the scorer and augmenter protocols locally with deterministic answers.
#[derive(Parser)]
#[command(version)]
struct Args {
    #[arg(long, default_value = "127.0.0.1:8765")]
    listen: SocketAddr,
    /// Delay every response by this many milliseconds.
    #[arg(long, default_value_t = 0)]
    latency_ms: u64,
}

fn main() -> std::io::Result<()> {
    let args = Args::parse();
    let server = MockServer::bind(
        args.listen,
        Faults {
            latency: Duration::from_millis(args.latency_ms),
            ..Faults::default()
        },
    )?;
    eprintln!("mock scorer listening on {}", server.url());
    server.wait();
    Ok(())
}

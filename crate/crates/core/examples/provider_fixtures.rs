//! Instruction sources: a fixture file, and a remote service (a local stub
//! here) with retries and an on-disk cache.

use std::time::Duration;

use dubalign::provider::stub::{Reply, StubServer};
use dubalign::provider::{parse_fixtures, FetchJob, PromptTemplates, RemoteEndpoint, RemoteProvider, ResponseCache};
use dubalign::textfront::InstructionKind;

const FIXTURES: &str = r#"{"sample_id": "clip-01", "kind": "duration", "text": "Slow down a bit here."}
{"sample_id": "clip-01", "kind": "emotion", "text": "Sound tired but relieved."}
{"sample_id": "clip-02", "kind": "emotion", "text": "Angry, almost shouting."}
"#;

fn main() -> dubalign::Result<()> {
    for rec in parse_fixtures(FIXTURES, "inline.jsonl".as_ref())? {
        println!("fixture {} {:?}: {}", rec.sample_id, rec.kind, rec.text);
    }

    // first request fails with 503, the rest succeed
    let server = StubServer::start(vec![Reply::Status(503), Reply::Echo("Keep a steady pace.".into())]);
    let cache = tempfile::tempdir().expect("temp dir");
    let endpoint = RemoteEndpoint {
        max_parallel: 2,
        backoff: Duration::from_millis(20),
        ..RemoteEndpoint::new(server.url())
    };
    let provider = RemoteProvider::new(
        endpoint,
        PromptTemplates::default(),
        Some(ResponseCache::new(cache.path())),
    )?;
    let jobs: Vec<FetchJob> = ["clip-01", "clip-02", "clip-03"]
        .iter()
        .map(|id| FetchJob {
            sample_id: id.to_string(),
            kind: InstructionKind::Duration,
            script: "we should go".into(),
            video_ref: format!("{id}.mp4"),
        })
        .collect();
    for pass in 1..=2 {
        for r in provider.fetch_all(&jobs) {
            let f = r?;
            println!(
                "pass {pass} {}: {:?} retries={} cached={}",
                f.record.sample_id, f.record.text, f.retries, f.from_cache
            );
        }
    }
    println!("requests served: {}", server.hits());
    Ok(())
}

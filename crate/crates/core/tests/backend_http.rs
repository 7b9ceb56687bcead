//! HTTP transport against a minimal in-test NDJSON server.

use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::sync::Arc;
use std::thread;
use std::time::Duration;

use olm_core::model::backend::HttpTransport;
use olm_core::model::protocol::handle_line;
use olm_core::model::{classify, fill_mask, LmInfo, WireClassifier, WireMaskedLm};
use olm_core::occlusion::{explain_input, OcclusionConfig};
use olm_core::toy::fixture::{sentiment_bow, sentiment_lm};
use olm_core::{tokenize, Classifier, Error, FillMode, MaskedLm, Method};

/// Serves `connections` requests; answers are written in reverse order to
/// exercise id-based reordering. `mangle` rewrites each response line.
fn spawn_server(connections: usize, mangle: fn(String) -> String) -> String {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    let model = sentiment_bow();
    let lm = sentiment_lm();
    thread::spawn(move || {
        for stream in listener.incoming().take(connections) {
            let mut stream = stream.unwrap();
            let mut reader = BufReader::new(stream.try_clone().unwrap());
            let mut length = 0usize;
            loop {
                let mut line = String::new();
                reader.read_line(&mut line).unwrap();
                if line == "\r\n" || line.is_empty() {
                    break;
                }
                let lower = line.to_ascii_lowercase();
                if let Some(v) = lower.strip_prefix("content-length:") {
                    length = v.trim().parse().unwrap();
                }
            }
            let mut body = vec![0u8; length];
            reader.read_exact(&mut body).unwrap();
            let body = String::from_utf8(body).unwrap();
            let mut out: Vec<String> = body
                .lines()
                .filter(|l| !l.is_empty())
                .map(|l| mangle(handle_line(l, Some(&model), Some(&lm)).to_line()))
                .collect();
            out.reverse();
            let payload = out.join("\n") + "\n";
            write!(
                stream,
                "HTTP/1.1 200 OK\r\nContent-Type: application/x-ndjson\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{}",
                payload.len(),
                payload
            )
            .unwrap();
        }
    });
    format!("http://{addr}/")
}

fn transport(url: &str) -> Arc<HttpTransport> {
    Arc::new(HttpTransport::new(url, Duration::from_secs(10)))
}

#[test]
fn remote_models_match_in_process_models() {
    let url = spawn_server(64, |s| s);
    let t = transport(&url);
    let input = tokenize("good film , but very glum .").unwrap();
    let remote = WireClassifier::probe("remote", t.clone(), &input.surfaces()).unwrap();
    assert_eq!(remote.info().class_count, 2);
    let local = sentiment_bow();
    assert_eq!(classify(&remote, &input).unwrap(), classify(&local, &input).unwrap());

    let remote_lm = WireMaskedLm::new(LmInfo::new("remote-lm", true, 1000).unwrap(), t);
    let local_lm = sentiment_lm();
    for mode in [FillMode::Sample, FillMode::Exact] {
        assert_eq!(
            fill_mask(&remote_lm, &input, 3, 50, mode, 9).unwrap(),
            fill_mask(&local_lm, &input, 3, 50, mode, 9).unwrap()
        );
    }

    let config = OcclusionConfig::new(Method::Olm).with_budget(30).with_seed(4);
    let a = explain_input(&remote, Some(&remote_lm), &input, 1, &config).unwrap();
    let b = explain_input(&local, Some(&local_lm), &input, 1, &config).unwrap();
    assert_eq!(a.vectors[0].values, b.vectors[0].values);
}

#[test]
fn unnormalized_backend_output_is_rejected() {
    let url = spawn_server(1, |s| s.replace("\"probs\":[", "\"probs\":[0.5,"));
    let remote = WireClassifier::new(
        olm_core::ClassifierInfo::new("remote", 3).unwrap(),
        transport(&url),
    );
    let err = remote.predict(&["good".to_string()]).unwrap_err();
    assert!(matches!(err, Error::ProtocolViolation(_)), "{err}");
}

#[test]
fn backend_error_lines_surface_as_errors() {
    let url = spawn_server(1, |s| s);
    let remote_lm = WireMaskedLm::new(LmInfo::new("remote-lm", true, 10).unwrap(), transport(&url));
    // the server rejects a zero budget
    let err = remote_lm
        .fill_mask_units(&["a".to_string()], 0, 0, FillMode::Sample, 0)
        .unwrap_err();
    assert!(matches!(err, Error::BackendError(_)), "{err}");
}

#[test]
fn unreachable_backend_is_a_backend_error() {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}/", listener.local_addr().unwrap());
    drop(listener);
    let remote = WireClassifier::new(olm_core::ClassifierInfo::new("x", 2).unwrap(), transport(&url));
    assert!(matches!(remote.predict(&["a".into()]), Err(Error::BackendError(_))));
}

//! The external segmenter protocol over TCP and a child process, checked
//! against the in-process oracle.

use std::io::BufReader;
use std::net::TcpListener;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use segrl::env::ReferringTask;
use segrl::mask::{PixelBox, PointPrompt};
use segrl::provider::{
    oracle_segment, serve_oracle, ExternalProvider, OracleProvider, ProviderDescriptor, ProviderError, SceneRef,
    SegmentationPrompt, SegmentationProvider,
};
use segrl::train::dataset::generate_task;
use segrl::train::{gen_dataset, TrainConfig, Trainer};

fn tasks(n: usize) -> Vec<ReferringTask> {
    (0..n)
        .map(|i| generate_task(11, i, &Default::default()).unwrap())
        .collect()
}

fn registry(tasks: &[ReferringTask]) -> OracleProvider {
    let mut o = OracleProvider::new();
    for t in tasks {
        o.register(t.id.clone(), t.scene.clone());
    }
    o
}

fn prompts(t: &ReferringTask) -> Vec<SegmentationPrompt> {
    let b = t.target().bbox;
    let (cx, cy) = ((b.x1 + b.x2) / 2, (b.y1 + b.y2) / 2);
    let full = PixelBox::new(0, 0, t.scene.width - 1, t.scene.height - 1);
    vec![
        SegmentationPrompt {
            bbox: b,
            points: vec![PointPrompt::positive(cx, cy)],
        },
        SegmentationPrompt {
            bbox: full,
            points: vec![PointPrompt::negative(cx, cy)],
        },
        SegmentationPrompt {
            bbox: PixelBox::new(0, 0, 3, 3),
            points: vec![PointPrompt::positive(1, 1)],
        },
    ]
}

/// Serves the oracle on a loopback port; `close_first` connections are
/// dropped without a reply.
fn spawn_server(oracle: OracleProvider, close_first: usize) -> (String, Arc<AtomicUsize>) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap().to_string();
    let accepted = Arc::new(AtomicUsize::new(0));
    let count = Arc::clone(&accepted);
    let oracle = Arc::new(oracle);
    std::thread::spawn(move || {
        for stream in listener.incoming() {
            let Ok(stream) = stream else { continue };
            let n = count.fetch_add(1, Ordering::SeqCst);
            if n < close_first {
                drop(stream);
                continue;
            }
            let oracle = Arc::clone(&oracle);
            std::thread::spawn(move || {
                let read = stream.try_clone().unwrap();
                let _ = serve_oracle(BufReader::new(read), stream, &oracle);
            });
        }
    });
    (addr, accepted)
}

#[test]
fn tcp_provider_matches_in_process_oracle() {
    let tasks = tasks(12);
    let (addr, _) = spawn_server(registry(&tasks), 0);
    let client = ExternalProvider::new(&format!("tcp://{addr}")).unwrap();
    for t in &tasks {
        for p in prompts(t) {
            let scene = SceneRef {
                id: &t.id,
                scene: Some(&t.scene),
            };
            assert_eq!(
                client.segment(scene, &p).unwrap(),
                oracle_segment(&t.scene, &p).unwrap()
            );
        }
    }
    let err = client
        .segment(
            SceneRef {
                id: "nope",
                scene: None,
            },
            &prompts(&tasks[0])[0],
        )
        .unwrap_err();
    assert!(
        matches!(err, ProviderError::Remote(ref m) if m.contains("nope")),
        "{err:?}"
    );
    assert!(!err.is_retryable());
}

#[test]
fn dropped_connection_is_retryable_and_reconnects() {
    let tasks = tasks(1);
    let (addr, accepted) = spawn_server(registry(&tasks), 1);
    let client = ExternalProvider::new(&format!("tcp://{addr}")).unwrap();
    let t = &tasks[0];
    let p = &prompts(t)[0];
    let scene = SceneRef {
        id: &t.id,
        scene: Some(&t.scene),
    };
    let err = client.segment(scene, p).unwrap_err();
    assert!(err.is_retryable(), "{err:?}");
    assert_eq!(client.segment(scene, p).unwrap(), oracle_segment(&t.scene, p).unwrap());
    assert_eq!(accepted.load(Ordering::SeqCst), 2);
}

#[test]
fn prompt_outside_the_scene_is_rejected_before_sending() {
    let tasks = tasks(1);
    let client = ExternalProvider::new("tcp://127.0.0.1:1").unwrap();
    let t = &tasks[0];
    let bad = SegmentationPrompt {
        bbox: PixelBox::new(0, 0, t.scene.width, 2),
        points: vec![PointPrompt::positive(0, 0)],
    };
    let err = client
        .segment(
            SceneRef {
                id: &t.id,
                scene: Some(&t.scene),
            },
            &bad,
        )
        .unwrap_err();
    assert!(matches!(err, ProviderError::Domain(_)), "{err:?}");
}

#[test]
fn training_through_a_child_process_matches_the_oracle() {
    let dir = tempfile::tempdir().unwrap();
    let base = TrainConfig {
        iterations: 8,
        dataset_size: 60,
        seed: 3,
        ..TrainConfig::default()
    };
    gen_dataset(&base, dir.path(), false).unwrap();
    let endpoint = format!(
        "exec:{} serve-oracle --dataset {}",
        env!("CARGO_BIN_EXE_segrl"),
        dir.path().display()
    );
    let external = TrainConfig {
        provider: ProviderDescriptor::external(endpoint),
        ..base.clone()
    };

    let via_oracle = Trainer::new(base).unwrap().run_in_memory().unwrap();
    let via_child = Trainer::new(external).unwrap().run_in_memory().unwrap();
    assert_eq!(via_oracle, via_child);
}

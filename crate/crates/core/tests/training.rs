//! Trainer behavior across checkpoints, provider failures and datasets on
//! disk.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use segrl::mask::BitMask;
use segrl::provider::{
    OracleProvider, ProviderDescriptor, ProviderError, SceneRef, SegmentationPrompt, SegmentationProvider,
};
use segrl::train::{gen_dataset, Checkpoint, TrainConfig, TrainError, Trainer};

fn small(iterations: usize) -> TrainConfig {
    TrainConfig {
        iterations,
        dataset_size: 60,
        seed: 9,
        ..TrainConfig::default()
    }
}

/// Oracle that fails while `failures` is positive.
struct Flaky {
    failures: Arc<AtomicUsize>,
    retryable: bool,
    inner: OracleProvider,
}

impl SegmentationProvider for Flaky {
    fn descriptor(&self) -> ProviderDescriptor {
        ProviderDescriptor::default()
    }

    fn segment(&self, scene: SceneRef<'_>, prompt: &SegmentationPrompt) -> Result<BitMask, ProviderError> {
        let left = self.failures.load(Ordering::SeqCst);
        if left > 0 {
            self.failures.store(left - 1, Ordering::SeqCst);
            return Err(ProviderError::Transport {
                message: "injected".into(),
                retryable: self.retryable,
            });
        }
        self.inner.segment(scene, prompt)
    }
}

fn flaky(failures: usize, retryable: bool) -> (Box<Flaky>, Arc<AtomicUsize>) {
    let counter = Arc::new(AtomicUsize::new(failures));
    let p = Flaky {
        failures: Arc::clone(&counter),
        retryable,
        inner: OracleProvider::new(),
    };
    (Box::new(p), counter)
}

#[test]
fn retryable_failures_within_budget_do_not_change_results() {
    let reference = Trainer::new(small(3)).unwrap().run_in_memory().unwrap();
    let (p, left) = flaky(2, true);
    let got = Trainer::new(small(3))
        .unwrap()
        .with_provider(p)
        .run_in_memory()
        .unwrap();
    assert_eq!(left.load(Ordering::SeqCst), 0);
    assert_eq!(got, reference);
}

#[test]
fn failed_step_leaves_the_trainer_untouched() {
    let mut t = Trainer::new(small(4)).unwrap();
    t.step().unwrap();
    let before = serde_json::to_string(&t.checkpoint()).unwrap();
    let (p, _) = flaky(1, false);
    let mut t = Trainer::from_checkpoint(serde_json::from_str(&before).unwrap())
        .unwrap()
        .with_provider(p);
    let err = t.step().unwrap_err();
    assert!(matches!(err, TrainError::Provider(_)), "{err:?}");
    assert_eq!(serde_json::to_string(&t.checkpoint()).unwrap(), before);

    // Retrying after the failure gives what an undisturbed run gives.
    let retried = t.step().unwrap();
    let mut clean = Trainer::from_checkpoint(serde_json::from_str(&before).unwrap()).unwrap();
    assert_eq!(retried, clean.step().unwrap());
}

#[test]
fn exhausted_retries_are_provider_errors() {
    let cfg = TrainConfig {
        provider_retries: 1,
        ..small(2)
    };
    let (p, _) = flaky(5, true);
    let err = Trainer::new(cfg).unwrap().with_provider(p).step().unwrap_err();
    assert_eq!(err.exit_code(), 4);
}

#[test]
fn run_flushes_a_checkpoint_when_the_provider_fails() {
    let dir = tempfile::tempdir().unwrap();
    let mut t = Trainer::new(small(5)).unwrap();
    t.step().unwrap();
    t.step().unwrap();
    let ckpt = t.checkpoint();
    let (p, _) = flaky(usize::MAX, false);
    let mut t = Trainer::from_checkpoint(ckpt).unwrap().with_provider(p);
    assert!(t.run(dir.path()).is_err());
    let saved = Checkpoint::load(&dir.path().join("checkpoint.json")).unwrap();
    assert_eq!(saved.iteration, 2);
    assert!(!dir.path().join("diagnostic.json").exists());
}

#[test]
fn dataset_on_disk_trains_like_the_generated_one() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small(4);
    gen_dataset(&cfg, dir.path(), false).unwrap();
    let from_disk = TrainConfig {
        dataset_dir: Some(dir.path().to_path_buf()),
        ..cfg.clone()
    };
    assert_eq!(
        Trainer::new(from_disk).unwrap().run_in_memory().unwrap(),
        Trainer::new(cfg).unwrap().run_in_memory().unwrap()
    );
}

#[test]
fn seeds_change_runs_and_checkpoints_round_trip() {
    let a = Trainer::new(small(3)).unwrap().run_in_memory().unwrap();
    let b = Trainer::new(TrainConfig { seed: 10, ..small(3) })
        .unwrap()
        .run_in_memory()
        .unwrap();
    assert_ne!(a, b);

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("c.json");
    let mut t = Trainer::new(small(3)).unwrap();
    t.step().unwrap();
    t.checkpoint().save(&path).unwrap();
    let loaded = Checkpoint::load(&path).unwrap();
    assert_eq!(
        serde_json::to_value(&loaded).unwrap(),
        serde_json::to_value(t.checkpoint()).unwrap()
    );

    let mut v = serde_json::to_value(&loaded).unwrap();
    v["format_version"] = 99.into();
    std::fs::write(&path, v.to_string()).unwrap();
    let err = Checkpoint::load(&path).unwrap_err();
    assert!(err.to_string().contains("version 99"), "{err}");
}

#[test]
fn default_training_improves_reward_quickly() {
    let m = Trainer::new(TrainConfig {
        iterations: 150,
        ..TrainConfig::default()
    })
    .unwrap()
    .run_in_memory()
    .unwrap();
    let mean = |s: &[segrl::train::IterationMetrics]| s.iter().map(|x| x.mean_reward).sum::<f64>() / s.len() as f64;
    assert!(mean(&m[125..]) > mean(&m[..25]) + 1.0);
    for x in &m {
        assert!((0.0..=1.0).contains(&x.clip_fraction) && x.kl_mean >= -1e-9 && x.grad_norm.is_finite());
        assert_eq!(x.group_counts.iter().sum::<usize>(), 4 * 8);
    }
}

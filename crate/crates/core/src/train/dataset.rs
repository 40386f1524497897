use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::config::split_sizes;
use super::{TrainConfig, TrainError};
use crate::env::{generate_scene, make_task, EnvError, ReferringTask, SceneConfig};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const MANIFEST_VERSION: u32 = 1;
const GENERATION_ATTEMPTS: u64 = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Eval,
}

impl std::str::FromStr for Split {
    type Err = TrainError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "train" => Ok(Split::Train),
            "eval" => Ok(Split::Eval),
            _ => Err(TrainError::Config(format!(
                "unknown split {s:?} (expected train or eval)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub file: String,
    pub split: Split,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    pub seed: u64,
    pub tasks: Vec<ManifestEntry>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub train: Vec<ReferringTask>,
    pub eval: Vec<ReferringTask>,
}

impl Dataset {
    pub fn split(&self, split: Split) -> &[ReferringTask] {
        match split {
            Split::Train => &self.train,
            Split::Eval => &self.eval,
        }
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Scene seed of attempt `attempt` for task `index` of a dataset.
pub fn task_seed(seed: u64, index: u64, attempt: u64) -> u64 {
    splitmix64(seed ^ splitmix64(index.wrapping_mul(GENERATION_ATTEMPTS).wrapping_add(attempt)))
}

pub fn task_id(index: usize) -> String {
    format!("task_{index:05}")
}

/// Task `index`, retrying with fresh seeds when placement or expression
/// selection fails.
pub fn generate_task(seed: u64, index: usize, scene: &SceneConfig) -> Result<ReferringTask, TrainError> {
    let mut last = None;
    for attempt in 0..GENERATION_ATTEMPTS {
        let s = task_seed(seed, index as u64, attempt);
        match generate_scene(s, scene).and_then(|sc| make_task(sc, s, task_id(index))) {
            Ok(t) => return Ok(t),
            Err(e @ (EnvError::Placement { .. } | EnvError::NoExpression { .. })) => last = Some(e),
            Err(e) => return Err(TrainError::Config(e.to_string())),
        }
    }
    Err(TrainError::Config(format!(
        "task {index}: generation failed {GENERATION_ATTEMPTS} times, last error: {}",
        last.map(|e| e.to_string()).unwrap_or_default()
    )))
}

/// The dataset a config describes, generated in memory.
pub fn build_dataset(cfg: &TrainConfig) -> Result<Dataset, TrainError> {
    let (n_train, _) = split_sizes(cfg.dataset_size, cfg.train_fraction);
    let mut tasks = (0..cfg.dataset_size)
        .map(|i| generate_task(cfg.seed, i, &cfg.scene))
        .collect::<Result<Vec<_>, _>>()?;
    let eval = tasks.split_off(n_train);
    Ok(Dataset { train: tasks, eval })
}

/// The dataset a config trains on: its `dataset_dir` if set, else generated.
pub fn dataset_for(cfg: &TrainConfig) -> Result<Dataset, TrainError> {
    match &cfg.dataset_dir {
        Some(dir) => load_dataset(dir),
        None => build_dataset(cfg),
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), TrainError> {
    let mut text = serde_json::to_string(value).map_err(|e| TrainError::Numeric(e.to_string()))?;
    text.push('\n');
    fs::write(path, text).map_err(|e| TrainError::io(path, e))
}

/// Writes one JSON file per task plus the manifest. A non-empty `out`
/// is refused unless `force` is set, in which case earlier task files and
/// the manifest are removed first.
pub fn gen_dataset(cfg: &TrainConfig, out: &Path, force: bool) -> Result<Manifest, TrainError> {
    cfg.validate()?;
    if out.exists() {
        let entries: Vec<PathBuf> = fs::read_dir(out)
            .map_err(|e| TrainError::io(out, e))?
            .map(|e| e.map(|e| e.path()))
            .collect::<Result<_, _>>()
            .map_err(|e| TrainError::io(out, e))?;
        if !entries.is_empty() {
            if !force {
                return Err(TrainError::Io {
                    path: out.to_path_buf(),
                    message: "directory is not empty (pass --force to overwrite)".into(),
                });
            }
            for p in entries {
                let name = p.file_name().and_then(|n| n.to_str()).unwrap_or("");
                if name == MANIFEST_FILE || (name.starts_with("task_") && name.ends_with(".json")) {
                    fs::remove_file(&p).map_err(|e| TrainError::io(&p, e))?;
                }
            }
        }
    }
    fs::create_dir_all(out).map_err(|e| TrainError::io(out, e))?;
    let (n_train, _) = split_sizes(cfg.dataset_size, cfg.train_fraction);
    let mut tasks = Vec::with_capacity(cfg.dataset_size);
    for i in 0..cfg.dataset_size {
        let task = generate_task(cfg.seed, i, &cfg.scene)?;
        let file = format!("{}.json", task.id);
        write_json(&out.join(&file), &task)?;
        let split = if i < n_train { Split::Train } else { Split::Eval };
        tasks.push(ManifestEntry { file, split });
    }
    let manifest = Manifest {
        format_version: MANIFEST_VERSION,
        seed: cfg.seed,
        tasks,
    };
    write_json(&out.join(MANIFEST_FILE), &manifest)?;
    Ok(manifest)
}

pub fn load_task(path: &Path) -> Result<ReferringTask, TrainError> {
    let text = fs::read_to_string(path).map_err(|e| TrainError::io(path, e))?;
    let task: ReferringTask = serde_json::from_str(&text).map_err(|e| TrainError::Manifest {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    task.validate().map_err(|e| TrainError::Manifest {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    Ok(task)
}

pub fn load_manifest(dir: &Path) -> Result<Manifest, TrainError> {
    let path = dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&path).map_err(|e| TrainError::Manifest {
        path: path.clone(),
        message: e.to_string(),
    })?;
    let m: Manifest = serde_json::from_str(&text).map_err(|e| TrainError::Manifest {
        path: path.clone(),
        message: e.to_string(),
    })?;
    if m.format_version != MANIFEST_VERSION {
        return Err(TrainError::Manifest {
            path,
            message: format!("unsupported manifest version {}", m.format_version),
        });
    }
    Ok(m)
}

pub fn load_split(dir: &Path, split: Split) -> Result<Vec<ReferringTask>, TrainError> {
    let m = load_manifest(dir)?;
    m.tasks
        .iter()
        .filter(|e| e.split == split)
        .map(|e| {
            let path = dir.join(&e.file);
            if !path.is_file() {
                return Err(TrainError::Manifest {
                    path,
                    message: "task file listed in the manifest is missing".into(),
                });
            }
            load_task(&path)
        })
        .collect()
}

pub fn load_dataset(dir: &Path) -> Result<Dataset, TrainError> {
    Ok(Dataset {
        train: load_split(dir, Split::Train)?,
        eval: load_split(dir, Split::Eval)?,
    })
}

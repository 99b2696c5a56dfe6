//! k-shot prompt assembly.

use std::io::{BufRead, BufReader};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{render_prompt, TaskError, TaskId, TaskInstance};
use crate::fsutil;

pub const DEFAULT_SHOT_SEPARATOR: &str = "\n";

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PromptBundle {
    pub test_instance: TaskInstance,
    pub shots: Vec<TaskInstance>,
    pub seed: u64,
    pub rendered: String,
}

impl PromptBundle {
    pub fn k(&self) -> usize {
        self.shots.len()
    }

    pub fn record(&self) -> BundleRecord {
        BundleRecord {
            instance_id: self.test_instance.instance_id.clone(),
            task_id: self.test_instance.task,
            seed: self.seed,
            k: self.k(),
            prompt: self.rendered.clone(),
            gold: self.test_instance.y,
        }
    }
}

/// Draws one k-subset of `dataset` as shots and turns every other instance
/// into a test prompt: the answered shots, one per line, then the question.
pub fn build_fewshot_prompts(dataset: &[TaskInstance], k: usize, seed: u64) -> Result<Vec<PromptBundle>, TaskError> {
    build_fewshot_prompts_with(dataset, k, seed, DEFAULT_SHOT_SEPARATOR)
}

pub fn build_fewshot_prompts_with(
    dataset: &[TaskInstance],
    k: usize,
    seed: u64,
    separator: &str,
) -> Result<Vec<PromptBundle>, TaskError> {
    if k >= dataset.len() {
        return Err(TaskError::TooManyShots { k, len: dataset.len() });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let picked = rand::seq::index::sample(&mut rng, dataset.len(), k).into_vec();
    let mut is_shot = vec![false; dataset.len()];
    for &i in &picked {
        is_shot[i] = true;
    }
    let shots: Vec<TaskInstance> = picked.iter().map(|&i| dataset[i].clone()).collect();
    let mut prefix = String::new();
    for shot in &shots {
        prefix.push_str(&render_prompt(shot, true));
        prefix.push_str(separator);
    }
    Ok(dataset
        .iter()
        .zip(&is_shot)
        .filter(|(_, &shot)| !shot)
        .map(|(inst, _)| PromptBundle {
            test_instance: inst.clone(),
            shots: shots.clone(),
            seed,
            rendered: format!("{prefix}{}", render_prompt(inst, false)),
        })
        .collect())
}

/// One line of a prompt bundle file.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BundleRecord {
    pub instance_id: String,
    pub task_id: TaskId,
    pub seed: u64,
    pub k: usize,
    pub prompt: String,
    pub gold: u64,
}

impl BundleRecord {
    /// The final (unanswered) question of the prompt.
    pub fn question(&self) -> &str {
        self.prompt.rsplit('\n').next().unwrap_or(&self.prompt)
    }
}

pub fn write_bundles(path: &Path, bundles: &[BundleRecord]) -> Result<(), TaskError> {
    let mut buf = Vec::new();
    for b in bundles {
        serde_json::to_writer(&mut buf, b).expect("bundle serializes");
        buf.push(b'\n');
    }
    fsutil::write_atomic(path, &buf).map_err(|e| TaskError::io(path, e))
}

pub fn read_bundles(path: &Path) -> Result<Vec<BundleRecord>, TaskError> {
    let file = std::fs::File::open(path).map_err(|e| TaskError::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| TaskError::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| TaskError::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            msg: e.to_string(),
        })?);
    }
    Ok(out)
}

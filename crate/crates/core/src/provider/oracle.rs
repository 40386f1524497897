use std::collections::HashMap;

use super::{ProviderDescriptor, ProviderError, SceneRef, SegmentationPrompt, SegmentationProvider};
use crate::env::Scene;
use crate::mask::{mask_from_box, BitMask, PointLabel};

/// Deterministic stand-in segmenter that always returns a whole object.
///
/// Objects holding a negative point are vetoed. Candidates are the remaining
/// objects holding a positive point or, if there are none, all remaining
/// objects. The candidate with the highest IoU against the prompt box wins,
/// lowest index on ties. The box itself is returned when no candidate is
/// left, or when no positive point hit an object and no candidate overlaps
/// the box.
pub fn oracle_segment(scene: &Scene, prompt: &SegmentationPrompt) -> Result<BitMask, ProviderError> {
    prompt.validate(scene.width, scene.height)?;
    let box_mask =
        mask_from_box(&prompt.bbox, scene.width, scene.height).map_err(|e| ProviderError::Domain(e.to_string()))?;
    let hit = |i: usize, label: PointLabel| {
        prompt
            .points
            .iter()
            .any(|p| p.label == label && scene.objects[i].mask.get(p.x, p.y))
    };
    let alive: Vec<usize> = (0..scene.objects.len())
        .filter(|&i| !hit(i, PointLabel::Negative))
        .collect();
    let positive: Vec<usize> = alive
        .iter()
        .copied()
        .filter(|&i| hit(i, PointLabel::Positive))
        .collect();
    let pointed = !positive.is_empty();
    let candidates = if pointed { positive } else { alive };

    let mut best: Option<(u64, u64, usize)> = None;
    for i in candidates {
        let (inter, union) = scene.objects[i]
            .mask
            .overlap_counts(&box_mask)
            .map_err(|e| ProviderError::Domain(e.to_string()))?;
        // inter/union > bi/bu without division
        let better = match best {
            None => true,
            Some((bi, bu, _)) => u128::from(inter) * u128::from(bu) > u128::from(bi) * u128::from(union),
        };
        if better {
            best = Some((inter, union, i));
        }
    }
    match best {
        Some((inter, _, i)) if pointed || inter > 0 => Ok(scene.objects[i].mask.clone()),
        _ => Ok(box_mask),
    }
}

/// Oracle provider; scenes are taken from the request or from a registry.
#[derive(Debug, Clone, Default)]
pub struct OracleProvider {
    scenes: HashMap<String, Scene>,
}

impl OracleProvider {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_scenes(scenes: HashMap<String, Scene>) -> Self {
        Self { scenes }
    }

    pub fn register(&mut self, id: impl Into<String>, scene: Scene) {
        self.scenes.insert(id.into(), scene);
    }
}

impl SegmentationProvider for OracleProvider {
    fn descriptor(&self) -> ProviderDescriptor {
        ProviderDescriptor::default()
    }

    fn segment(&self, scene: SceneRef<'_>, prompt: &SegmentationPrompt) -> Result<BitMask, ProviderError> {
        let s = match scene.scene {
            Some(s) => s,
            None => self
                .scenes
                .get(scene.id)
                .ok_or_else(|| ProviderError::UnknownScene(scene.id.to_string()))?,
        };
        oracle_segment(s, prompt)
    }
}

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::EnvError;
use crate::mask::{BitMask, PixelBox};

/// Most objects a scene may hold.
pub const MAX_OBJECTS: usize = 8;
const PLACEMENT_ATTEMPTS: usize = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Shape {
    Rectangle,
    Ellipse,
}

impl Shape {
    pub const ALL: [Shape; 2] = [Shape::Rectangle, Shape::Ellipse];

    pub fn as_str(self) -> &'static str {
        match self {
            Shape::Rectangle => "rectangle",
            Shape::Ellipse => "ellipse",
        }
    }

    /// Rasterizes the shape inscribed in `bbox`.
    ///
    /// Ellipse membership is tested at pixel centers; for the side lengths the
    /// generator produces the tight box of the ellipse equals `bbox`.
    pub fn rasterize(self, bbox: &PixelBox, width: u32, height: u32) -> Result<BitMask, EnvError> {
        let mask = match self {
            Shape::Rectangle => BitMask::from_fn(width, height, |x, y| bbox.contains(x, y))?,
            Shape::Ellipse => {
                let cx = f64::from(bbox.x1 + bbox.x2 + 1) / 2.0;
                let cy = f64::from(bbox.y1 + bbox.y2 + 1) / 2.0;
                let rx = f64::from(bbox.x2 - bbox.x1 + 1) / 2.0;
                let ry = f64::from(bbox.y2 - bbox.y1 + 1) / 2.0;
                BitMask::from_fn(width, height, |x, y| {
                    if !bbox.contains(x, y) {
                        return false;
                    }
                    let dx = (f64::from(x) + 0.5 - cx) / rx;
                    let dy = (f64::from(y) + 0.5 - cy) / ry;
                    dx * dx + dy * dy <= 1.0
                })?
            }
        };
        Ok(mask)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneObject {
    pub shape: Shape,
    #[serde(rename = "box")]
    pub bbox: PixelBox,
    pub attribute_id: u8,
    pub mask: BitMask,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    pub width: u32,
    pub height: u32,
    pub seed: u64,
    pub objects: Vec<SceneObject>,
}

impl Scene {
    /// Checks object count, mask dimensions and pairwise disjointness.
    pub fn validate(&self) -> Result<(), EnvError> {
        if self.objects.is_empty() || self.objects.len() > MAX_OBJECTS {
            return Err(EnvError::InvalidScene(format!(
                "scene holds {} objects, expected 1..={MAX_OBJECTS}",
                self.objects.len()
            )));
        }
        for (i, o) in self.objects.iter().enumerate() {
            if o.mask.width() != self.width || o.mask.height() != self.height {
                return Err(EnvError::InvalidScene(format!(
                    "object {i} mask is {}x{}, scene is {}x{}",
                    o.mask.width(),
                    o.mask.height(),
                    self.width,
                    self.height
                )));
            }
            o.bbox
                .validate(self.width, self.height)
                .map_err(|e| EnvError::InvalidScene(format!("object {i}: {e}")))?;
            if o.mask.is_empty() {
                return Err(EnvError::InvalidScene(format!("object {i} has an empty mask")));
            }
            for (j, p) in self.objects.iter().enumerate().skip(i + 1) {
                if !o.mask.is_disjoint(&p.mask)? {
                    return Err(EnvError::InvalidScene(format!("objects {i} and {j} overlap")));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SceneConfig {
    pub width: u32,
    pub height: u32,
    pub min_objects: usize,
    pub max_objects: usize,
    pub min_side: u32,
    pub max_side: u32,
    pub num_attributes: u8,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            width: 64,
            height: 64,
            min_objects: 2,
            max_objects: 5,
            min_side: 6,
            max_side: 24,
            num_attributes: 4,
        }
    }
}

impl SceneConfig {
    pub fn validate(&self) -> Result<(), EnvError> {
        let bad = |m: String| Err(EnvError::Config(m));
        if self.width == 0 || self.height == 0 || self.width > 4096 || self.height > 4096 {
            return bad(format!("scene size {}x{} out of range", self.width, self.height));
        }
        if self.min_objects == 0 || self.min_objects > self.max_objects || self.max_objects > MAX_OBJECTS {
            return bad(format!(
                "object count range {}..={} must lie in 1..={MAX_OBJECTS}",
                self.min_objects, self.max_objects
            ));
        }
        if self.min_side == 0 || self.min_side > self.max_side || self.max_side > self.width.min(self.height) {
            return bad(format!("side range {}..={} invalid", self.min_side, self.max_side));
        }
        if self.num_attributes == 0 {
            return bad("num_attributes must be at least 1".into());
        }
        Ok(())
    }
}

/// Places non-overlapping shapes; fully determined by `seed` and `cfg`.
pub fn generate_scene(seed: u64, cfg: &SceneConfig) -> Result<Scene, EnvError> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let count = rng.gen_range(cfg.min_objects..=cfg.max_objects);
    let mut boxes: Vec<PixelBox> = Vec::with_capacity(count);
    let mut objects = Vec::with_capacity(count);
    for index in 0..count {
        let mut placed = None;
        for _ in 0..PLACEMENT_ATTEMPTS {
            let w = rng.gen_range(cfg.min_side..=cfg.max_side);
            let h = rng.gen_range(cfg.min_side..=cfg.max_side);
            let x1 = rng.gen_range(0..=cfg.width - w);
            let y1 = rng.gen_range(0..=cfg.height - h);
            let candidate = PixelBox::new(x1, y1, x1 + w - 1, y1 + h - 1);
            if boxes.iter().all(|b| !b.intersects(&candidate)) {
                placed = Some(candidate);
                break;
            }
        }
        let bbox = placed.ok_or(EnvError::Placement { seed, object: index })?;
        let shape = Shape::ALL[rng.gen_range(0..Shape::ALL.len())];
        let attribute_id = rng.gen_range(0..cfg.num_attributes);
        let mask = shape.rasterize(&bbox, cfg.width, cfg.height)?;
        boxes.push(bbox);
        objects.push(SceneObject {
            shape,
            bbox,
            attribute_id,
            mask,
        });
    }
    Ok(Scene {
        width: cfg.width,
        height: cfg.height,
        seed,
        objects,
    })
}

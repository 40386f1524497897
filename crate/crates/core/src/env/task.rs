use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::scene::{Scene, Shape};
use super::EnvError;
use crate::mask::BitMask;

/// Symbolic referring expression. The string form (`Display`/`FromStr`) is
/// the `expression_id` stored in task files.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Expression {
    Largest,
    Smallest,
    Leftmost,
    Rightmost,
    Topmost,
    Bottommost,
    /// The only object carrying attribute `k`.
    WithAttribute(u8),
    LargestWithAttribute(u8),
    LeftmostShape(Shape),
    OnlyShape(Shape),
}

impl fmt::Display for Expression {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expression::Largest => f.write_str("largest"),
            Expression::Smallest => f.write_str("smallest"),
            Expression::Leftmost => f.write_str("leftmost"),
            Expression::Rightmost => f.write_str("rightmost"),
            Expression::Topmost => f.write_str("topmost"),
            Expression::Bottommost => f.write_str("bottommost"),
            Expression::WithAttribute(k) => write!(f, "attr:{k}"),
            Expression::LargestWithAttribute(k) => write!(f, "largest_attr:{k}"),
            Expression::LeftmostShape(s) => write!(f, "leftmost:{}", s.as_str()),
            Expression::OnlyShape(s) => write!(f, "only:{}", s.as_str()),
        }
    }
}

impl FromStr for Expression {
    type Err = EnvError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || EnvError::InvalidTask(format!("unknown expression id {s:?}"));
        let shape = |v: &str| match v {
            "rectangle" => Ok(Shape::Rectangle),
            "ellipse" => Ok(Shape::Ellipse),
            _ => Err(bad()),
        };
        let attr = |v: &str| v.parse::<u8>().map_err(|_| bad());
        Ok(match s.split_once(':') {
            None => match s {
                "largest" => Expression::Largest,
                "smallest" => Expression::Smallest,
                "leftmost" => Expression::Leftmost,
                "rightmost" => Expression::Rightmost,
                "topmost" => Expression::Topmost,
                "bottommost" => Expression::Bottommost,
                _ => return Err(bad()),
            },
            Some(("attr", v)) => Expression::WithAttribute(attr(v)?),
            Some(("largest_attr", v)) => Expression::LargestWithAttribute(attr(v)?),
            Some(("leftmost", v)) => Expression::LeftmostShape(shape(v)?),
            Some(("only", v)) => Expression::OnlyShape(shape(v)?),
            Some(_) => return Err(bad()),
        })
    }
}

impl Serialize for Expression {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Expression {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Index of the unique extremum of `key` over `indices`, if there is one.
fn unique_by<K: Ord + Copy>(
    indices: impl Iterator<Item = usize>,
    key: impl Fn(usize) -> K,
    want_max: bool,
) -> Option<usize> {
    let mut best: Option<(K, usize)> = None;
    let mut tied = false;
    for i in indices {
        let k = key(i);
        match best {
            None => best = Some((k, i)),
            Some((bk, _)) => {
                let better = if want_max { k > bk } else { k < bk };
                if better {
                    best = Some((k, i));
                    tied = false;
                } else if k == bk {
                    tied = true;
                }
            }
        }
    }
    match (best, tied) {
        (Some((_, i)), false) => Some(i),
        _ => None,
    }
}

fn only(mut indices: impl Iterator<Item = usize>) -> Option<usize> {
    let first = indices.next()?;
    indices.next().is_none().then_some(first)
}

impl Expression {
    /// Resolves the expression against a scene; `None` when no single
    /// object matches.
    pub fn resolve(&self, scene: &Scene) -> Option<usize> {
        let objs = &scene.objects;
        let all = || 0..objs.len();
        let area = |i: usize| objs[i].mask.area();
        match *self {
            Expression::Largest => unique_by(all(), area, true),
            Expression::Smallest => unique_by(all(), area, false),
            Expression::Leftmost => unique_by(all(), |i| objs[i].bbox.x1, false),
            Expression::Rightmost => unique_by(all(), |i| objs[i].bbox.x2, true),
            Expression::Topmost => unique_by(all(), |i| objs[i].bbox.y1, false),
            Expression::Bottommost => unique_by(all(), |i| objs[i].bbox.y2, true),
            Expression::WithAttribute(k) => only(all().filter(|&i| objs[i].attribute_id == k)),
            Expression::LargestWithAttribute(k) => unique_by(all().filter(|&i| objs[i].attribute_id == k), area, true),
            Expression::LeftmostShape(s) => {
                unique_by(all().filter(|&i| objs[i].shape == s), |i| objs[i].bbox.x1, false)
            }
            Expression::OnlyShape(s) => only(all().filter(|&i| objs[i].shape == s)),
        }
    }

    /// Every template instance worth trying on `scene`, in a fixed order.
    pub fn templates(scene: &Scene) -> Vec<Expression> {
        let mut out = vec![
            Expression::Largest,
            Expression::Smallest,
            Expression::Leftmost,
            Expression::Rightmost,
            Expression::Topmost,
            Expression::Bottommost,
        ];
        let mut attrs: Vec<u8> = scene.objects.iter().map(|o| o.attribute_id).collect();
        attrs.sort_unstable();
        attrs.dedup();
        for &k in &attrs {
            out.push(Expression::WithAttribute(k));
            out.push(Expression::LargestWithAttribute(k));
        }
        for s in Shape::ALL {
            if scene.objects.iter().any(|o| o.shape == s) {
                out.push(Expression::LeftmostShape(s));
                out.push(Expression::OnlyShape(s));
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferringTask {
    pub id: String,
    pub scene: Scene,
    pub expression_id: Expression,
    pub target_index: usize,
    pub gt_mask: BitMask,
}

impl ReferringTask {
    pub fn target(&self) -> &super::scene::SceneObject {
        &self.scene.objects[self.target_index]
    }

    pub fn validate(&self) -> Result<(), EnvError> {
        self.scene.validate()?;
        let resolved = self.expression_id.resolve(&self.scene);
        if resolved != Some(self.target_index) {
            return Err(EnvError::InvalidTask(format!(
                "task {}: expression {} resolves to {resolved:?}, target is {}",
                self.id, self.expression_id, self.target_index
            )));
        }
        if self.gt_mask != self.scene.objects[self.target_index].mask {
            return Err(EnvError::InvalidTask(format!(
                "task {}: gt_mask differs from the target object's mask",
                self.id
            )));
        }
        Ok(())
    }
}

/// Picks an unambiguous expression uniformly among those the scene admits.
pub fn make_task(scene: Scene, seed: u64, id: impl Into<String>) -> Result<ReferringTask, EnvError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let resolvable: Vec<(Expression, usize)> = Expression::templates(&scene)
        .into_iter()
        .filter_map(|e| e.resolve(&scene).map(|t| (e, t)))
        .collect();
    let &(expression_id, target_index) = resolvable
        .choose(&mut rng)
        .ok_or(EnvError::NoExpression { seed: scene.seed })?;
    let gt_mask = scene.objects[target_index].mask.clone();
    Ok(ReferringTask {
        id: id.into(),
        scene,
        expression_id,
        target_index,
        gt_mask,
    })
}

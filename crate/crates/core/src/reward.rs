//! Rule-based rewards: tiered segmentation accuracy, reasoning format,
//! answer-schema format and the optional point-value rewards.

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::env::ReferringTask;
use crate::mask::{iou, MaskError, PixelBox, PointLabel, PointPrompt};
use crate::provider::{ProviderError, SceneRef, SegmentationPrompt, SegmentationProvider};

/// Integer reward score.
pub type Score = i64;

/// Longest accepted flag, in characters.
pub const MAX_FLAG_CHARS: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PointValueVariant {
    #[default]
    Off,
    /// Both labels must occur among the points.
    Anywhere,
    /// Both labels occur and every point lies inside the answer box.
    InsideBox,
}

/// How IoU is turned into the accuracy score.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AccuracyMode {
    /// Piecewise tiers from `tier_thresholds` / `tier_values`.
    #[default]
    Tiered,
    /// `tier_values[0]` if IoU exceeds `threshold`, else 0.
    Fixed { threshold: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RewardConfig {
    pub tier_thresholds: [f64; 3],
    pub tier_values: [Score; 3],
    pub accuracy_mode: AccuracyMode,
    pub think_format_value: Score,
    pub seg_format_value: Score,
    /// Awarded instead of `think_format_value` to malformed responses.
    pub think_format_failure_value: Score,
    /// Awarded instead of `seg_format_value` to unparseable answers.
    pub seg_format_failure_value: Score,
    pub point_value_variant: PointValueVariant,
    pub point_value_score: Score,
}

impl Default for RewardConfig {
    fn default() -> Self {
        Self {
            tier_thresholds: [0.80, 0.70, 0.50],
            tier_values: [4, 3, 2],
            accuracy_mode: AccuracyMode::Tiered,
            think_format_value: 1,
            seg_format_value: 1,
            think_format_failure_value: 0,
            seg_format_failure_value: 0,
            point_value_variant: PointValueVariant::Off,
            point_value_score: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum RewardError {
    #[error("{0}")]
    Domain(String),
    #[error("invalid reward configuration: {0}")]
    Config(String),
    #[error("provider failed on task {task_id}: {source}")]
    Provider {
        task_id: String,
        #[source]
        source: ProviderError,
    },
    #[error("task {task_id}: {source}")]
    Mask {
        task_id: String,
        #[source]
        source: MaskError,
    },
}

impl RewardConfig {
    pub fn validate(&self) -> Result<(), RewardError> {
        let bad = |m: String| Err(RewardError::Config(m));
        let t = self.tier_thresholds;
        if !t.iter().all(|v| *v > 0.0 && *v < 1.0) || !(t[0] > t[1] && t[1] > t[2]) {
            return bad(format!("tier_thresholds {t:?} must be strictly decreasing in (0, 1)"));
        }
        let v = self.tier_values;
        if !v.iter().all(|s| *s > 0) || !(v[0] > v[1] && v[1] > v[2]) {
            return bad(format!("tier_values {v:?} must be strictly decreasing and positive"));
        }
        if let AccuracyMode::Fixed { threshold } = self.accuracy_mode {
            if !(0.0..1.0).contains(&threshold) {
                return bad(format!("fixed threshold {threshold} must lie in [0, 1)"));
            }
        }
        if self.think_format_failure_value > self.think_format_value
            || self.seg_format_failure_value > self.seg_format_value
        {
            return bad("format failure values must not exceed the success values".into());
        }
        Ok(())
    }
}

/// Accuracy score for an IoU under the tier table (or a fixed threshold).
///
/// Each tier has a strict lower bound: with defaults `0.80 -> 3` and
/// `0.800001 -> 4`.
pub fn tiered_accuracy_reward(iou: f64, cfg: &RewardConfig) -> Result<Score, RewardError> {
    if !(0.0..=1.0).contains(&iou) {
        return Err(RewardError::Domain(format!("iou {iou} outside [0, 1]")));
    }
    Ok(match cfg.accuracy_mode {
        AccuracyMode::Tiered => cfg
            .tier_thresholds
            .iter()
            .zip(cfg.tier_values)
            .find(|(t, _)| iou > **t)
            .map_or(0, |(_, v)| v),
        AccuracyMode::Fixed { threshold } => {
            if iou > threshold {
                cfg.tier_values[0]
            } else {
                0
            }
        }
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParsedResponse {
    pub think_text: Option<String>,
    pub answer_text: Option<String>,
    pub well_formed: bool,
}

const THINK_OPEN: &str = "<think>";
const THINK_CLOSE: &str = "</think>";
const ANSWER_OPEN: &str = "<answer>";
const ANSWER_CLOSE: &str = "</answer>";

fn first_span<'a>(text: &'a str, open: &str, close: &str) -> Option<(usize, &'a str, usize)> {
    let start = text.find(open)?;
    let body = start + open.len();
    let len = text[body..].find(close)?;
    Some((start, &text[body..body + len], body + len + close.len()))
}

/// Extracts the first think and answer spans and checks the strict layout
/// `ws <think>T</think> ws <answer>A</answer> ws` with non-blank `T`, `A`
/// and each tag occurring exactly once.
pub fn parse_response(text: &str) -> ParsedResponse {
    let think = first_span(text, THINK_OPEN, THINK_CLOSE);
    let answer = first_span(text, ANSWER_OPEN, ANSWER_CLOSE);
    let once = [THINK_OPEN, THINK_CLOSE, ANSWER_OPEN, ANSWER_CLOSE]
        .iter()
        .all(|tag| text.matches(tag).count() == 1);
    let well_formed = match (think, answer) {
        (Some((ts, t, te)), Some((as_, a, ae))) => {
            once && text[..ts].trim().is_empty()
                && te <= as_
                && text[te..as_].trim().is_empty()
                && text[ae..].trim().is_empty()
                && !t.trim().is_empty()
                && !a.trim().is_empty()
        }
        _ => false,
    };
    ParsedResponse {
        think_text: think.map(|(_, t, _)| t.to_string()),
        answer_text: answer.map(|(_, a, _)| a.to_string()),
        well_formed,
    }
}

pub fn reasoning_format_reward(p: &ParsedResponse, cfg: &RewardConfig) -> Score {
    if p.well_formed {
        cfg.think_format_value
    } else {
        cfg.think_format_failure_value
    }
}

/// A schema-valid answer; serializes as the canonical answer JSON.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParsedAnswer {
    pub bbox: PixelBox,
    pub points: Vec<PointPrompt>,
    pub flag: String,
}

impl ParsedAnswer {
    pub fn prompt(&self) -> SegmentationPrompt {
        SegmentationPrompt {
            bbox: self.bbox,
            points: self.points.clone(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AnswerFailure {
    BadJson,
    MissingKey,
    BadRange,
    BadOrder,
    BadLabel,
    ExtraKey,
}

impl AnswerFailure {
    pub fn as_str(self) -> &'static str {
        match self {
            AnswerFailure::BadJson => "bad-json",
            AnswerFailure::MissingKey => "missing-key",
            AnswerFailure::BadRange => "bad-range",
            AnswerFailure::BadOrder => "bad-order",
            AnswerFailure::BadLabel => "bad-label",
            AnswerFailure::ExtraKey => "extra-key",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("{}: {detail}", reason.as_str())]
pub struct AnswerError {
    pub reason: AnswerFailure,
    pub detail: String,
}

fn fail<T>(reason: AnswerFailure, detail: impl Into<String>) -> Result<T, AnswerError> {
    Err(AnswerError {
        reason,
        detail: detail.into(),
    })
}

fn int(v: &Value) -> Option<i128> {
    v.as_i64().map(i128::from).or_else(|| v.as_u64().map(i128::from))
}

fn ints<const N: usize>(v: &Value, what: &str) -> Result<[i128; N], AnswerError> {
    let arr = match v.as_array() {
        Some(a) if a.len() == N => a,
        _ => {
            return fail(
                AnswerFailure::BadJson,
                format!("{what} must be an array of {N} integers"),
            )
        }
    };
    let mut out = [0; N];
    for (o, e) in out.iter_mut().zip(arr) {
        *o = int(e).ok_or_else(|| AnswerError {
            reason: AnswerFailure::BadJson,
            detail: format!("{what} must contain integers, got {e}"),
        })?;
    }
    Ok(out)
}

fn coord(v: i128, extent: u32, what: &str) -> Result<u32, AnswerError> {
    if v < 0 || v >= i128::from(extent) {
        return fail(AnswerFailure::BadRange, format!("{what} {v} outside 0..{extent}"));
    }
    Ok(v as u32)
}

/// Validates the answer JSON against the closed schema
/// `{"bbox":[x1,y1,x2,y2], "points":[[x,y,label],...], "flag":"..."}`.
///
/// Checks run in a fixed order (object, extra keys, missing keys, box shape,
/// box range, box order, points, flag) and the first failure is reported.
pub fn parse_answer_json(answer_text: &str, image_w: u32, image_h: u32) -> Result<ParsedAnswer, AnswerError> {
    let value: Value = match serde_json::from_str(answer_text.trim()) {
        Ok(v) => v,
        Err(e) => return fail(AnswerFailure::BadJson, e.to_string()),
    };
    let Some(obj) = value.as_object() else {
        return fail(AnswerFailure::BadJson, "answer is not a JSON object");
    };
    const KEYS: [&str; 3] = ["bbox", "points", "flag"];
    if let Some(k) = obj.keys().find(|k| !KEYS.contains(&k.as_str())) {
        return fail(AnswerFailure::ExtraKey, format!("unexpected key {k:?}"));
    }
    if let Some(k) = KEYS.iter().find(|k| !obj.contains_key(**k)) {
        return fail(AnswerFailure::MissingKey, format!("missing key {k:?}"));
    }
    let [x1, y1, x2, y2] = ints::<4>(&obj["bbox"], "bbox")?;
    let bbox = PixelBox::new(
        coord(x1, image_w, "bbox x1")?,
        coord(y1, image_h, "bbox y1")?,
        coord(x2, image_w, "bbox x2")?,
        coord(y2, image_h, "bbox y2")?,
    );
    if bbox.x1 > bbox.x2 || bbox.y1 > bbox.y2 {
        return fail(
            AnswerFailure::BadOrder,
            format!("bbox {:?} is not ordered", [x1, y1, x2, y2]),
        );
    }
    let raw_points = match obj["points"].as_array() {
        Some(a) if !a.is_empty() => a,
        _ => return fail(AnswerFailure::BadJson, "points must be a non-empty array"),
    };
    let mut points = Vec::with_capacity(raw_points.len());
    for p in raw_points {
        let [x, y, l] = ints::<3>(p, "point")?;
        let x = coord(x, image_w, "point x")?;
        let y = coord(y, image_h, "point y")?;
        let label = i64::try_from(l).ok().and_then(PointLabel::from_int);
        let Some(label) = label else {
            return fail(AnswerFailure::BadLabel, format!("point label {l} not in {{0, 1}}"));
        };
        points.push(PointPrompt { x, y, label });
    }
    let Some(flag) = obj["flag"].as_str() else {
        return fail(AnswerFailure::BadJson, "flag must be a string");
    };
    if flag.trim().is_empty() || flag.chars().count() > MAX_FLAG_CHARS {
        return fail(
            AnswerFailure::BadRange,
            format!("flag must be 1..={MAX_FLAG_CHARS} non-blank characters"),
        );
    }
    Ok(ParsedAnswer {
        bbox,
        points,
        flag: flag.to_string(),
    })
}

pub fn segmentation_format_reward(parse: &Result<ParsedAnswer, AnswerError>, cfg: &RewardConfig) -> Score {
    match parse {
        Ok(_) => cfg.seg_format_value,
        Err(_) => cfg.seg_format_failure_value,
    }
}

pub fn point_value_reward(a: &ParsedAnswer, cfg: &RewardConfig) -> Score {
    let has = |l| a.points.iter().any(|p| p.label == l);
    let both = has(PointLabel::Negative) && has(PointLabel::Positive);
    let earned = match cfg.point_value_variant {
        PointValueVariant::Off => false,
        PointValueVariant::Anywhere => both,
        PointValueVariant::InsideBox => both && a.points.iter().all(|p| a.bbox.contains(p.x, p.y)),
    };
    if earned {
        cfg.point_value_score
    } else {
        0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardBreakdown {
    pub accuracy: Score,
    pub think_format: Score,
    pub seg_format: Score,
    pub point_value: Score,
    pub total: Score,
    pub achieved_iou: Option<f64>,
    /// Why a format component was withheld, if one was.
    pub reason: Option<String>,
}

/// Scores one response: parses it, asks the provider for a mask when the
/// answer parses, and sums the components. Provider failures are returned,
/// never scored.
pub fn total_reward(
    response_text: &str,
    task: &ReferringTask,
    provider: &dyn SegmentationProvider,
    cfg: &RewardConfig,
) -> Result<RewardBreakdown, RewardError> {
    let parsed = parse_response(response_text);
    let think_format = reasoning_format_reward(&parsed, cfg);
    let answer = match &parsed.answer_text {
        Some(a) => parse_answer_json(a, task.scene.width, task.scene.height),
        None => fail(AnswerFailure::MissingKey, "no answer block"),
    };
    let seg_format = segmentation_format_reward(&answer, cfg);
    let reason = match (&parsed.answer_text, &answer) {
        (None, _) => Some("missing think/answer".to_string()),
        (Some(_), Err(e)) => Some(e.reason.as_str().to_string()),
        (Some(_), Ok(_)) if !parsed.well_formed => Some(
            if parsed.think_text.is_none() {
                "missing think/answer"
            } else {
                "malformed structure"
            }
            .to_string(),
        ),
        _ => None,
    };
    let (accuracy, point_value, achieved_iou) = match &answer {
        Ok(a) => {
            let scene = SceneRef {
                id: &task.id,
                scene: Some(&task.scene),
            };
            let mask = provider
                .segment(scene, &a.prompt())
                .map_err(|source| RewardError::Provider {
                    task_id: task.id.clone(),
                    source,
                })?;
            let v = iou(&mask, &task.gt_mask).map_err(|source| RewardError::Mask {
                task_id: task.id.clone(),
                source,
            })?;
            (tiered_accuracy_reward(v, cfg)?, point_value_reward(a, cfg), Some(v))
        }
        Err(_) => (0, 0, None),
    };
    Ok(RewardBreakdown {
        accuracy,
        think_format,
        seg_format,
        point_value,
        total: accuracy + think_format + seg_format + point_value,
        achieved_iou,
        reason,
    })
}

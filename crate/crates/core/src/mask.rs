//! Binary masks, run-length encoding, box/point geometry and the IoU family.
//!
//! Masks are stored packed, row-major, one bit per pixel. All metrics are
//! computed from exact popcounts and divided once at the end.

use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

/// Largest accepted width or height.
pub const MAX_SIDE: u32 = 4096;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum MaskError {
    #[error("shape mismatch: {left_w}x{left_h} vs {right_w}x{right_h}")]
    ShapeMismatch {
        left_w: u32,
        left_h: u32,
        right_w: u32,
        right_h: u32,
    },
    #[error("invalid mask dimensions {width}x{height} (each side must be in 1..={MAX_SIDE})")]
    InvalidDimensions { width: u32, height: u32 },
    #[error("{0}")]
    Domain(String),
    #[error("malformed RLE: {0}")]
    Format(String),
}

fn check_dims(width: u32, height: u32) -> Result<(), MaskError> {
    if width == 0 || height == 0 || width > MAX_SIDE || height > MAX_SIDE {
        return Err(MaskError::InvalidDimensions { width, height });
    }
    Ok(())
}

/// A binary pixel mask.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct BitMask {
    width: u32,
    height: u32,
    words: Vec<u64>,
}

impl std::fmt::Debug for BitMask {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("BitMask")
            .field("width", &self.width)
            .field("height", &self.height)
            .field("area", &self.area())
            .finish()
    }
}

impl BitMask {
    /// An all-zero mask.
    pub fn new(width: u32, height: u32) -> Result<Self, MaskError> {
        check_dims(width, height)?;
        let n = width as usize * height as usize;
        Ok(Self {
            width,
            height,
            words: vec![0; n.div_ceil(64)],
        })
    }

    /// Builds a mask from a row-major boolean grid.
    pub fn from_bools(width: u32, height: u32, bits: &[bool]) -> Result<Self, MaskError> {
        let mut m = Self::new(width, height)?;
        if bits.len() != m.len() {
            return Err(MaskError::Domain(format!(
                "expected {} bits for a {width}x{height} mask, got {}",
                m.len(),
                bits.len()
            )));
        }
        for (i, &b) in bits.iter().enumerate() {
            if b {
                m.words[i / 64] |= 1 << (i % 64);
            }
        }
        Ok(m)
    }

    pub fn from_fn(width: u32, height: u32, mut f: impl FnMut(u32, u32) -> bool) -> Result<Self, MaskError> {
        let mut m = Self::new(width, height)?;
        for y in 0..height {
            for x in 0..width {
                if f(x, y) {
                    m.set(x, y, true);
                }
            }
        }
        Ok(m)
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    /// Number of pixels.
    pub fn len(&self) -> usize {
        self.width as usize * self.height as usize
    }

    pub fn is_empty(&self) -> bool {
        self.words.iter().all(|&w| w == 0)
    }

    #[inline]
    fn index(&self, x: u32, y: u32) -> usize {
        debug_assert!(x < self.width && y < self.height);
        y as usize * self.width as usize + x as usize
    }

    /// Pixel value. Panics if out of bounds.
    #[inline]
    pub fn get(&self, x: u32, y: u32) -> bool {
        assert!(x < self.width && y < self.height, "pixel ({x},{y}) out of bounds");
        let i = self.index(x, y);
        self.words[i / 64] >> (i % 64) & 1 == 1
    }

    #[inline]
    pub fn set(&mut self, x: u32, y: u32, value: bool) {
        assert!(x < self.width && y < self.height, "pixel ({x},{y}) out of bounds");
        let i = self.index(x, y);
        if value {
            self.words[i / 64] |= 1 << (i % 64);
        } else {
            self.words[i / 64] &= !(1 << (i % 64));
        }
    }

    /// Row-major boolean grid.
    pub fn to_bools(&self) -> Vec<bool> {
        (0..self.len())
            .map(|i| self.words[i / 64] >> (i % 64) & 1 == 1)
            .collect()
    }

    /// Number of set pixels.
    pub fn area(&self) -> u64 {
        self.words.iter().map(|w| u64::from(w.count_ones())).sum()
    }

    fn same_shape(&self, other: &Self) -> Result<(), MaskError> {
        if self.width != other.width || self.height != other.height {
            return Err(MaskError::ShapeMismatch {
                left_w: self.width,
                left_h: self.height,
                right_w: other.width,
                right_h: other.height,
            });
        }
        Ok(())
    }

    /// `(|a ∩ b|, |a ∪ b|)` in pixels.
    pub fn overlap_counts(&self, other: &Self) -> Result<(u64, u64), MaskError> {
        self.same_shape(other)?;
        let (mut inter, mut union) = (0u64, 0u64);
        for (a, b) in self.words.iter().zip(&other.words) {
            inter += u64::from((a & b).count_ones());
            union += u64::from((a | b).count_ones());
        }
        Ok((inter, union))
    }

    /// True when the two masks share no set pixel.
    pub fn is_disjoint(&self, other: &Self) -> Result<bool, MaskError> {
        self.same_shape(other)?;
        Ok(self.words.iter().zip(&other.words).all(|(a, b)| a & b == 0))
    }
}

/// Inclusive pixel box `(x1, y1)..=(x2, y2)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(into = "[u32; 4]", from = "[u32; 4]")]
pub struct PixelBox {
    pub x1: u32,
    pub y1: u32,
    pub x2: u32,
    pub y2: u32,
}

impl From<PixelBox> for [u32; 4] {
    fn from(b: PixelBox) -> Self {
        [b.x1, b.y1, b.x2, b.y2]
    }
}

impl From<[u32; 4]> for PixelBox {
    fn from([x1, y1, x2, y2]: [u32; 4]) -> Self {
        Self { x1, y1, x2, y2 }
    }
}

impl PixelBox {
    pub fn new(x1: u32, y1: u32, x2: u32, y2: u32) -> Self {
        Self { x1, y1, x2, y2 }
    }

    /// Checks ordering and that both corners lie inside a `width`×`height` image.
    pub fn validate(&self, width: u32, height: u32) -> Result<(), MaskError> {
        if self.x1 > self.x2 || self.y1 > self.y2 {
            return Err(MaskError::Domain(format!("box {self:?} is not ordered")));
        }
        if self.x2 >= width || self.y2 >= height {
            return Err(MaskError::Domain(format!(
                "box {self:?} exceeds image {width}x{height}"
            )));
        }
        Ok(())
    }

    #[inline]
    pub fn contains(&self, x: u32, y: u32) -> bool {
        (self.x1..=self.x2).contains(&x) && (self.y1..=self.y2).contains(&y)
    }

    pub fn area(&self) -> u64 {
        u64::from(self.x2 - self.x1 + 1) * u64::from(self.y2 - self.y1 + 1)
    }

    /// True if the two boxes share at least one pixel.
    pub fn intersects(&self, other: &Self) -> bool {
        self.x1 <= other.x2 && other.x1 <= self.x2 && self.y1 <= other.y2 && other.y1 <= self.y2
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum PointLabel {
    Negative = 0,
    Positive = 1,
}

impl PointLabel {
    pub fn from_int(v: i64) -> Option<Self> {
        match v {
            0 => Some(Self::Negative),
            1 => Some(Self::Positive),
            _ => None,
        }
    }

    pub fn as_int(self) -> u8 {
        self as u8
    }
}

/// A point prompt; serialized as `[x, y, label]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct PointPrompt {
    pub x: u32,
    pub y: u32,
    pub label: PointLabel,
}

impl PointPrompt {
    pub fn positive(x: u32, y: u32) -> Self {
        Self {
            x,
            y,
            label: PointLabel::Positive,
        }
    }

    pub fn negative(x: u32, y: u32) -> Self {
        Self {
            x,
            y,
            label: PointLabel::Negative,
        }
    }

    pub fn in_bounds(&self, width: u32, height: u32) -> bool {
        self.x < width && self.y < height
    }
}

impl Serialize for PointPrompt {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        [self.x, self.y, u32::from(self.label.as_int())].serialize(s)
    }
}

impl<'de> Deserialize<'de> for PointPrompt {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let [x, y, l] = <[u32; 3]>::deserialize(d)?;
        let label = PointLabel::from_int(i64::from(l))
            .ok_or_else(|| D::Error::custom(format!("point label must be 0 or 1, got {l}")))?;
        Ok(Self { x, y, label })
    }
}

/// Column-major run-length encoding; the first run counts zeros.
///
/// Wire form: `{"size": [height, width], "counts": [...]}`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RleMask {
    pub width: u32,
    pub height: u32,
    pub counts: Vec<u32>,
}

impl RleMask {
    pub fn validate(&self) -> Result<(), MaskError> {
        check_dims(self.width, self.height)?;
        let total: u64 = self.counts.iter().map(|&c| u64::from(c)).sum();
        let expected = u64::from(self.width) * u64::from(self.height);
        if total != expected {
            return Err(MaskError::Format(format!("counts sum to {total}, expected {expected}")));
        }
        if let Some(pos) = self.counts.iter().skip(1).position(|&c| c == 0) {
            return Err(MaskError::Format(format!("zero-length run at position {}", pos + 1)));
        }
        Ok(())
    }
}

#[derive(Serialize, Deserialize)]
struct RleWire {
    size: [u32; 2],
    counts: Vec<u32>,
}

impl Serialize for RleMask {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        RleWire {
            size: [self.height, self.width],
            counts: self.counts.clone(),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for RleMask {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let w = RleWire::deserialize(d)?;
        let rle = RleMask {
            width: w.size[1],
            height: w.size[0],
            counts: w.counts,
        };
        rle.validate().map_err(D::Error::custom)?;
        Ok(rle)
    }
}

/// Masks serialize as their RLE JSON object.
impl Serialize for BitMask {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        encode_rle(self).serialize(s)
    }
}

impl<'de> Deserialize<'de> for BitMask {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let rle = RleMask::deserialize(d)?;
        decode_rle(&rle).map_err(D::Error::custom)
    }
}

pub fn encode_rle(m: &BitMask) -> RleMask {
    let mut counts = Vec::new();
    let mut current = false;
    let mut run = 0u32;
    for x in 0..m.width {
        for y in 0..m.height {
            let v = m.get(x, y);
            if v != current {
                counts.push(run);
                run = 0;
                current = v;
            }
            run += 1;
        }
    }
    counts.push(run);
    RleMask {
        width: m.width,
        height: m.height,
        counts,
    }
}

pub fn decode_rle(r: &RleMask) -> Result<BitMask, MaskError> {
    r.validate()?;
    let mut m = BitMask::new(r.width, r.height)?;
    let h = r.height as usize;
    let mut idx = 0usize;
    let mut value = false;
    for &c in &r.counts {
        if value {
            for i in idx..idx + c as usize {
                m.set((i / h) as u32, (i % h) as u32, true);
            }
        }
        idx += c as usize;
        value = !value;
    }
    Ok(m)
}

/// Intersection over union; two empty masks agree perfectly (1.0).
pub fn iou(a: &BitMask, b: &BitMask) -> Result<f64, MaskError> {
    let (inter, union) = a.overlap_counts(b)?;
    Ok(if union == 0 { 1.0 } else { inter as f64 / union as f64 })
}

/// Mean of per-pair IoUs.
pub fn giou_aggregate<'a, I>(pairs: I) -> Result<f64, MaskError>
where
    I: IntoIterator<Item = (&'a BitMask, &'a BitMask)>,
{
    let mut sum = 0.0;
    let mut n = 0usize;
    for (pred, gt) in pairs {
        sum += iou(pred, gt)?;
        n += 1;
    }
    if n == 0 {
        return Err(MaskError::Domain("gIoU of an empty list".into()));
    }
    Ok(sum / n as f64)
}

/// Cumulative intersection over cumulative union.
pub fn ciou_aggregate<'a, I>(pairs: I) -> Result<f64, MaskError>
where
    I: IntoIterator<Item = (&'a BitMask, &'a BitMask)>,
{
    let (mut inter, mut union) = (0u64, 0u64);
    let mut n = 0usize;
    for (pred, gt) in pairs {
        let (i, u) = pred.overlap_counts(gt)?;
        inter += i;
        union += u;
        n += 1;
    }
    if n == 0 {
        return Err(MaskError::Domain("cIoU of an empty list".into()));
    }
    Ok(if union == 0 { 1.0 } else { inter as f64 / union as f64 })
}

/// Tight inclusive bounding box of the set pixels.
pub fn box_from_mask(m: &BitMask) -> Result<PixelBox, MaskError> {
    let mut bounds: Option<PixelBox> = None;
    for y in 0..m.height {
        for x in 0..m.width {
            if !m.get(x, y) {
                continue;
            }
            bounds = Some(match bounds {
                None => PixelBox::new(x, y, x, y),
                Some(b) => PixelBox::new(b.x1.min(x), b.y1.min(y), b.x2.max(x), b.y2.max(y)),
            });
        }
    }
    bounds.ok_or_else(|| MaskError::Domain("bounding box of an empty mask".into()))
}

pub fn mask_from_box(b: &PixelBox, width: u32, height: u32) -> Result<BitMask, MaskError> {
    check_dims(width, height)?;
    b.validate(width, height)?;
    BitMask::from_fn(width, height, |x, y| b.contains(x, y))
}

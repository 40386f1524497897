use serde::{Deserialize, Serialize};

use crate::mask::PointLabel;

/// Decoded meaning of a token id.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Token {
    ThinkOpen,
    ThinkClose,
    AnswerOpen,
    AnswerClose,
    /// Coordinate bin `0..bins`.
    Bin(u32),
    Label(PointLabel),
    /// Filler word `0..fillers` inside the think span.
    Filler(u32),
    End,
}

/// Token id layout: four structural tags, `bins` coordinate bins, two point
/// labels, `fillers` think words, then END.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TokenVocab {
    pub bins: u32,
    pub fillers: u32,
}

impl Default for TokenVocab {
    fn default() -> Self {
        Self { bins: 16, fillers: 4 }
    }
}

const FILLER_WORDS: [&str; 8] = [
    "observe", "compare", "locate", "decide", "inspect", "measure", "recall", "verify",
];

impl TokenVocab {
    pub const THINK_OPEN: u32 = 0;
    pub const THINK_CLOSE: u32 = 1;
    pub const ANSWER_OPEN: u32 = 2;
    pub const ANSWER_CLOSE: u32 = 3;

    pub fn size(&self) -> usize {
        (4 + self.bins + 2 + self.fillers + 1) as usize
    }

    pub fn bin(&self, b: u32) -> u32 {
        debug_assert!(b < self.bins);
        4 + b
    }

    pub fn label(&self, l: PointLabel) -> u32 {
        4 + self.bins + u32::from(l.as_int())
    }

    pub fn filler(&self, k: u32) -> u32 {
        debug_assert!(k < self.fillers);
        6 + self.bins + k
    }

    pub fn end(&self) -> u32 {
        6 + self.bins + self.fillers
    }

    pub fn encode(&self, t: Token) -> u32 {
        match t {
            Token::ThinkOpen => Self::THINK_OPEN,
            Token::ThinkClose => Self::THINK_CLOSE,
            Token::AnswerOpen => Self::ANSWER_OPEN,
            Token::AnswerClose => Self::ANSWER_CLOSE,
            Token::Bin(b) => self.bin(b),
            Token::Label(l) => self.label(l),
            Token::Filler(k) => self.filler(k),
            Token::End => self.end(),
        }
    }

    pub fn decode(&self, id: u32) -> Option<Token> {
        let b = self.bins;
        Some(match id {
            0 => Token::ThinkOpen,
            1 => Token::ThinkClose,
            2 => Token::AnswerOpen,
            3 => Token::AnswerClose,
            i if i < 4 + b => Token::Bin(i - 4),
            i if i == 4 + b => Token::Label(PointLabel::Negative),
            i if i == 5 + b => Token::Label(PointLabel::Positive),
            i if i < 6 + b + self.fillers => Token::Filler(i - 6 - b),
            i if i == self.end() => Token::End,
            _ => return None,
        })
    }

    pub fn filler_word(k: u32) -> String {
        FILLER_WORDS
            .get(k as usize)
            .map(|w| (*w).to_string())
            .unwrap_or_else(|| format!("step{k}"))
    }

    /// Pixel coordinate at the center of bin `b` along an axis of `extent` pixels.
    pub fn bin_to_pixel(&self, b: u32, extent: u32) -> u32 {
        ((2 * u64::from(b) + 1) * u64::from(extent) / (2 * u64::from(self.bins))) as u32
    }

    /// Bin containing pixel coordinate `p`.
    pub fn pixel_to_bin(&self, p: u32, extent: u32) -> u32 {
        ((u64::from(p) * u64::from(self.bins) / u64::from(extent)) as u32).min(self.bins - 1)
    }
}

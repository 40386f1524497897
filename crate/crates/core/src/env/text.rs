//! Rendering token streams as response text and back.

use super::vocab::{Token, TokenVocab};
use crate::mask::{PointLabel, PointPrompt};
use crate::reward::ParsedAnswer;

/// Box bins, point triples and span length.
type AnswerSpan = ([u32; 4], Vec<(u32, u32, PointLabel)>, usize);

/// Answer span starting at `tokens[0] == ANSWER_OPEN`, if well ordered.
fn answer_span(tokens: &[Token]) -> Option<AnswerSpan> {
    let bin = |i: usize| match tokens.get(i) {
        Some(Token::Bin(b)) => Some(*b),
        _ => None,
    };
    let bbox = [bin(1)?, bin(2)?, bin(3)?, bin(4)?];
    let mut points = Vec::new();
    let mut i = 5;
    loop {
        match tokens.get(i) {
            Some(Token::AnswerClose) if !points.is_empty() => return Some((bbox, points, i + 1)),
            Some(Token::Bin(x)) => {
                let y = bin(i + 1)?;
                let Some(Token::Label(l)) = tokens.get(i + 2) else {
                    return None;
                };
                points.push((*x, y, *l));
                i += 3;
            }
            _ => return None,
        }
    }
}

/// Canonical answer JSON, key order `bbox`, `points`, `flag`.
pub fn answer_json(answer: &ParsedAnswer) -> String {
    serde_json::to_string(answer).expect("answer serializes")
}

/// Renders tokens as response text for a `width` x `height` image.
///
/// Rendering stops at END. Structural tokens become their tags, consecutive
/// fillers are joined by spaces, and a well-ordered answer span becomes the
/// canonical answer JSON with bins mapped to pixel centers. Anything else is
/// written literally (` b7`, ` L1`), which the parsers reject.
pub fn detokenize(tokens: &[u32], width: u32, height: u32, vocab: &TokenVocab, flag: &str) -> String {
    let decoded: Vec<Token> = tokens
        .iter()
        .map_while(|&id| vocab.decode(id))
        .take_while(|t| *t != Token::End)
        .collect();
    let mut out = String::new();
    let mut prev_filler = false;
    let mut i = 0;
    while i < decoded.len() {
        let t = decoded[i];
        let mut filler = false;
        match t {
            Token::ThinkOpen => out.push_str("<think>"),
            Token::ThinkClose => out.push_str("</think>"),
            Token::AnswerClose => out.push_str("</answer>"),
            Token::AnswerOpen => {
                if let Some((b, pts, len)) = answer_span(&decoded[i..]) {
                    let px = |v: u32| vocab.bin_to_pixel(v, width);
                    let py = |v: u32| vocab.bin_to_pixel(v, height);
                    let answer = ParsedAnswer {
                        bbox: crate::mask::PixelBox::new(px(b[0]), py(b[1]), px(b[2]), py(b[3])),
                        points: pts
                            .iter()
                            .map(|&(x, y, label)| PointPrompt {
                                x: px(x),
                                y: py(y),
                                label,
                            })
                            .collect(),
                        flag: flag.to_string(),
                    };
                    out.push_str("<answer>");
                    out.push_str(&answer_json(&answer));
                    out.push_str("</answer>");
                    i += len;
                    prev_filler = false;
                    continue;
                }
                out.push_str("<answer>");
            }
            Token::Bin(b) => out.push_str(&format!(" b{b}")),
            Token::Label(l) => out.push_str(&format!(" L{}", l.as_int())),
            Token::Filler(k) => {
                if prev_filler {
                    out.push(' ');
                }
                out.push_str(&TokenVocab::filler_word(k));
                filler = true;
            }
            Token::End => unreachable!(),
        }
        prev_filler = filler;
        i += 1;
    }
    out
}

/// Answer span tokens for `answer`, coordinates snapped to bins.
pub fn tokenize_answer(answer: &ParsedAnswer, width: u32, height: u32, vocab: &TokenVocab) -> Vec<u32> {
    let bx = |p: u32| vocab.bin(vocab.pixel_to_bin(p, width));
    let by = |p: u32| vocab.bin(vocab.pixel_to_bin(p, height));
    let b = &answer.bbox;
    let mut out = vec![TokenVocab::ANSWER_OPEN, bx(b.x1), by(b.y1), bx(b.x2), by(b.y2)];
    for p in &answer.points {
        out.extend([bx(p.x), by(p.y), vocab.label(p.label)]);
    }
    out.push(TokenVocab::ANSWER_CLOSE);
    out
}

/// A compliant response: one filler word of thought, the answer, END.
pub fn tokenize_response(answer: &ParsedAnswer, width: u32, height: u32, vocab: &TokenVocab) -> Vec<u32> {
    let mut out = vec![TokenVocab::THINK_OPEN, vocab.filler(0), TokenVocab::THINK_CLOSE];
    out.extend(tokenize_answer(answer, width, height, vocab));
    out.push(vocab.end());
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mask::PixelBox;
    use crate::reward::{parse_answer_json, parse_response};

    fn v() -> TokenVocab {
        TokenVocab::default()
    }

    #[test]
    fn worked_example_renders_bin_centers() {
        let v = v();
        let toks = [
            TokenVocab::THINK_OPEN,
            v.filler(0),
            TokenVocab::THINK_CLOSE,
            TokenVocab::ANSWER_OPEN,
            v.bin(0),
            v.bin(0),
            v.bin(7),
            v.bin(7),
            v.bin(3),
            v.bin(3),
            v.label(PointLabel::Positive),
            TokenVocab::ANSWER_CLOSE,
        ];
        let text = detokenize(&toks, 64, 64, &v, "target");
        assert_eq!(
            text,
            r#"<think>observe</think><answer>{"bbox":[2,2,30,30],"points":[[14,14,1]],"flag":"target"}</answer>"#
        );
        assert!(parse_response(&text).well_formed);
    }

    #[test]
    fn missing_close_is_not_well_formed() {
        let v = v();
        let toks = [
            TokenVocab::THINK_OPEN,
            v.filler(1),
            v.filler(2),
            TokenVocab::THINK_CLOSE,
            TokenVocab::ANSWER_OPEN,
            v.bin(0),
            v.bin(0),
            v.bin(7),
            v.bin(7),
            v.bin(3),
            v.bin(3),
            v.label(PointLabel::Positive),
        ];
        let text = detokenize(&toks, 64, 64, &v, "target");
        assert_eq!(text, "<think>compare locate</think><answer> b0 b0 b7 b7 b3 b3 L1");
        assert!(!parse_response(&text).well_formed);
    }

    #[test]
    fn reversed_box_is_kept_and_rejected() {
        let v = v();
        let toks = [
            TokenVocab::THINK_OPEN,
            v.filler(0),
            TokenVocab::THINK_CLOSE,
            TokenVocab::ANSWER_OPEN,
            v.bin(0),
            v.bin(9),
            v.bin(7),
            v.bin(2),
            v.bin(3),
            v.bin(3),
            v.label(PointLabel::Negative),
            TokenVocab::ANSWER_CLOSE,
            v.end(),
            TokenVocab::THINK_OPEN,
        ];
        let text = detokenize(&toks, 64, 64, &v, "target");
        let p = parse_response(&text);
        assert!(p.well_formed);
        let err = parse_answer_json(p.answer_text.as_deref().unwrap(), 64, 64).unwrap_err();
        assert_eq!(err.reason.as_str(), "bad-order");
    }

    #[test]
    fn canonical_round_trip() {
        let v = v();
        let answer = ParsedAnswer {
            bbox: PixelBox::new(6, 10, 30, 62),
            points: vec![PointPrompt::positive(18, 34), PointPrompt::negative(2, 2)],
            flag: "target".into(),
        };
        let toks = tokenize_response(&answer, 64, 64, &v);
        let text = detokenize(&toks, 64, 64, &v, "target");
        let p = parse_response(&text);
        assert!(p.well_formed);
        let back = parse_answer_json(p.answer_text.as_deref().unwrap(), 64, 64).unwrap();
        assert_eq!(back, answer);
    }
}

//! Token layout: `[CLS, gA, gB, off, SEP, gA, gB, off, SEP, ..., gA, gB, off]`.
//! Separators sit only between consecutive triples, so the body after CLS
//! has `3K + K - 1` tokens.

use crate::signalplan::{SettingError, SignalSetting};

pub const PAD: u32 = 0;
pub const CLS: u32 = 1;
pub const SEP: u32 = 2;
/// Added to every raw value so that values never collide with special ids.
pub const VALUE_OFFSET: u32 = 200;
/// Covers the largest possible offset (cycle 160, offset 159).
pub const VOCAB_SIZE: usize = 360;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum TokenError {
    #[error("token sequence must start with CLS")]
    MissingCls,
    #[error("token sequence of length {len} does not match any intersection count")]
    Length { len: usize },
    #[error("expected SEP at position {pos}, found {found}")]
    Separator { pos: usize, found: u32 },
    #[error("token {token} at position {pos} is not a value token")]
    Value { pos: usize, token: u32 },
    #[error(transparent)]
    Setting(#[from] SettingError),
}

pub fn body_len(k: usize) -> usize {
    4 * k - 1
}

/// Full sequence length including CLS.
pub fn seq_len(k: usize) -> usize {
    body_len(k) + 1
}

pub fn tokenize(setting: &SignalSetting) -> Vec<u32> {
    let mut out = Vec::with_capacity(seq_len(setting.len()));
    out.push(CLS);
    for (i, t) in setting.triples().iter().enumerate() {
        if i > 0 {
            out.push(SEP);
        }
        out.extend([t.green_a, t.green_b, t.offset].map(|v| v + VALUE_OFFSET));
    }
    out
}

/// Tokenizes an encoded feature row; the row must already be a valid setting.
pub fn tokenize_row(row: &[i64], k: usize) -> Result<Vec<u32>, TokenError> {
    Ok(tokenize(&SignalSetting::decode(row, k)?))
}

pub fn detokenize(tokens: &[u32]) -> Result<SignalSetting, TokenError> {
    if tokens.first() != Some(&CLS) {
        return Err(TokenError::MissingCls);
    }
    let body = &tokens[1..];
    if !(body.len() + 1).is_multiple_of(4) {
        return Err(TokenError::Length { len: tokens.len() });
    }
    let k = (body.len() + 1) / 4;
    let mut values = Vec::with_capacity(3 * k);
    for (i, &tok) in body.iter().enumerate() {
        let pos = i + 1;
        if i % 4 == 3 {
            if tok != SEP {
                return Err(TokenError::Separator { pos, found: tok });
            }
            continue;
        }
        if !(VALUE_OFFSET..VOCAB_SIZE as u32).contains(&tok) {
            return Err(TokenError::Value { pos, token: tok });
        }
        values.push(i64::from(tok - VALUE_OFFSET));
    }
    Ok(SignalSetting::decode(&values, k)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::signalplan::SignalTriple;
    use proptest::prelude::*;

    #[test]
    fn twenty_one_intersections_give_83_body_tokens() {
        let s = SignalSetting::sample_uniform(21, 4);
        let t = tokenize(&s);
        assert_eq!(t.len() - 1, 83);
        assert_eq!(t[0], CLS);
        assert_eq!(t.iter().filter(|&&x| x == SEP).count(), 20);
    }

    #[test]
    fn value_offset_applies() {
        let s = SignalSetting::new(vec![SignalTriple::new(20, 20, 0)]).unwrap();
        assert_eq!(tokenize(&s), vec![CLS, 220, 220, 200]);
    }

    #[test]
    fn value_tokens_stay_in_range() {
        for seed in 0..200 {
            let s = SignalSetting::sample_uniform(5, seed);
            // body position p: 0 = gA, 1 = gB, 2 = offset, 3 = SEP
            for (p, &t) in tokenize(&s)[1..].iter().enumerate() {
                match p % 4 {
                    0 | 1 => assert!((220..=280).contains(&t), "green token {t}"),
                    2 => assert!((200..=359).contains(&t), "offset token {t}"),
                    _ => assert_eq!(t, SEP),
                }
            }
        }
        let max = SignalSetting::new(vec![SignalTriple::new(80, 80, 159)]).unwrap();
        assert_eq!(tokenize(&max), vec![CLS, 280, 280, 359]);
    }

    #[test]
    fn detokenize_errors() {
        assert_eq!(detokenize(&[220, 220, 200]), Err(TokenError::MissingCls));
        assert_eq!(detokenize(&[CLS, 220, 220]), Err(TokenError::Length { len: 3 }));
        assert_eq!(detokenize(&[CLS, 220, 220, 200, 5, 220, 220, 200]), Err(TokenError::Separator { pos: 4, found: 5 }));
        assert_eq!(detokenize(&[CLS, 220, 2, 200]), Err(TokenError::Value { pos: 2, token: 2 }));
        assert!(matches!(detokenize(&[CLS, 210, 220, 200]), Err(TokenError::Setting(_))));
    }

    proptest! {
        #[test]
        fn body_length_formula(k in 1usize..40, seed in any::<u64>()) {
            let s = SignalSetting::sample_uniform(k, seed);
            let t = tokenize(&s);
            prop_assert_eq!(t.len() - 1, 3 * k + k - 1);
            prop_assert_eq!(t.len(), seq_len(k));
        }

        #[test]
        fn round_trip(k in 1usize..30, seed in any::<u64>()) {
            let s = SignalSetting::sample_uniform(k, seed);
            prop_assert_eq!(detokenize(&tokenize(&s)).unwrap(), s);
        }
    }
}

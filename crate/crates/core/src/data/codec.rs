//! Word ↔ bit-vector codec.
//!
//! Space is 0 and `a..z` are 1..26; each character becomes five bits, most
//! significant first. Words are padded with trailing spaces to eight
//! characters, giving 40 bits. Codes 27..31 decode to `?`.

use std::path::Path;

use crate::error::{check_dim, Error, Result};

use super::{Dataset, Provenance};

pub const WORD_CHARS: usize = 8;
pub const WORD_BITS: usize = WORD_CHARS * 5;

fn char_code(c: char) -> Option<u8> {
    match c {
        ' ' => Some(0),
        'a'..='z' => Some(c as u8 - b'a' + 1),
        _ => None,
    }
}

pub fn encode_word(word: &str) -> Result<Vec<u8>> {
    let count = word.chars().count();
    if count > WORD_CHARS {
        return Err(Error::InvalidArgument(format!(
            "word `{word}` has {count} characters, at most {WORD_CHARS} allowed"
        )));
    }
    let mut bits = Vec::with_capacity(WORD_BITS);
    for c in word.chars().chain(std::iter::repeat(' ')).take(WORD_CHARS) {
        let code = char_code(c)
            .ok_or_else(|| Error::InvalidArgument(format!("word `{word}` contains unsupported character {c:?}")))?;
        bits.extend((0..5).rev().map(|s| (code >> s) & 1));
    }
    Ok(bits)
}

/// Decodes 40 bits to text. Every 40-bit vector decodes; trailing spaces are
/// stripped.
pub fn decode_bits(bits: &[u8]) -> Result<String> {
    check_dim("word bits", WORD_BITS, bits.len())?;
    let text: String = bits
        .chunks(5)
        .map(|group| {
            let code = group.iter().fold(0u8, |acc, &b| (acc << 1) | (b & 1));
            match code {
                0 => ' ',
                1..=26 => (b'a' + code - 1) as char,
                _ => '?',
            }
        })
        .collect();
    Ok(text.trim_end_matches(' ').to_string())
}

/// One word per line; surrounding whitespace is trimmed, letters are
/// lowercased and blank lines are skipped.
pub fn load_wordlist(path: &Path) -> Result<Vec<String>> {
    let text = std::fs::read_to_string(path)?;
    let mut words = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let w = line.trim().to_lowercase();
        if w.is_empty() {
            continue;
        }
        encode_word(&w).map_err(|e| Error::Parse {
            line: i + 1,
            message: e.to_string(),
        })?;
        words.push(w);
    }
    if words.is_empty() {
        return Err(Error::Corrupt(format!("word list {} is empty", path.display())));
    }
    Ok(words)
}

pub fn words_dataset<S: AsRef<str>>(words: &[S], source: &str) -> Result<Dataset> {
    let rows = words
        .iter()
        .map(|w| encode_word(w.as_ref()))
        .collect::<Result<Vec<_>>>()?;
    Dataset::new(
        WORD_BITS,
        rows,
        Provenance::Words {
            source: source.to_string(),
        },
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn empty_word_is_all_spaces() {
        assert_eq!(encode_word("").unwrap(), vec![0; 40]);
        assert_eq!(decode_bits(&[0; 40]).unwrap(), "");
    }

    #[test]
    fn single_letter_layout() {
        let bits = encode_word("a").unwrap();
        assert_eq!(&bits[..5], &[0, 0, 0, 0, 1]);
        assert!(bits[5..].iter().all(|&b| b == 0));
    }

    #[test]
    fn the_round_trip() {
        let bits = encode_word("the").unwrap();
        // t = 20, h = 8, e = 5
        assert_eq!(&bits[..15], &[1, 0, 1, 0, 0, 0, 1, 0, 0, 0, 0, 0, 1, 0, 1]);
        assert_eq!(decode_bits(&bits).unwrap(), "the");
    }

    #[test]
    fn invalid_codes_decode_to_question_mark() {
        let mut bits = encode_word("syrakt").unwrap();
        // 28 = 11100 in the fourth character
        bits[15..20].copy_from_slice(&[1, 1, 1, 0, 0]);
        assert_eq!(decode_bits(&bits).unwrap(), "syr?kt");
        assert_eq!(decode_bits(&[1; 40]).unwrap(), "????????");
    }

    #[test]
    fn encode_errors() {
        assert!(encode_word("toolongword").is_err());
        assert!(encode_word("Caps").is_err());
        assert!(encode_word("a-b").is_err());
        assert!(decode_bits(&[0; 39]).is_err());
    }

    proptest! {
        #[test]
        fn encode_decode_identity(word in "[a-z]{0,8}") {
            prop_assert_eq!(decode_bits(&encode_word(&word).unwrap()).unwrap(), word);
        }

        #[test]
        fn decode_is_total(bits in proptest::collection::vec(0u8..2, 40)) {
            let text = decode_bits(&bits).unwrap();
            prop_assert!(text.chars().count() <= 8);
        }
    }
}

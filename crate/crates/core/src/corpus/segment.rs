use super::Sentence;

pub const TERMINAL_PUNCTUATION: [char; 4] = ['。', '；', '！', '？'];

/// Splits raw case text after each terminal punctuation mark, keeping the
/// mark with its sentence. Segments with no content besides the mark and
/// whitespace are dropped.
pub fn segment_sentences(raw_text: &str) -> Vec<Sentence> {
    raw_text
        .split_inclusive(TERMINAL_PUNCTUATION)
        .filter(|segment| {
            segment
                .trim_end_matches(TERMINAL_PUNCTUATION)
                .trim()
                .chars()
                .next()
                .is_some()
        })
        .enumerate()
        .map(|(index, segment)| Sentence {
            index,
            text: segment.trim().to_string(),
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn texts(raw: &str) -> Vec<String> {
        segment_sentences(raw).into_iter().map(|s| s.text).collect()
    }

    #[test]
    fn splits_and_keeps_delimiters() {
        assert_eq!(texts("甲。乙！"), ["甲。", "乙！"]);
        assert_eq!(texts("问？答；完"), ["问？", "答；", "完"]);
    }

    #[test]
    fn no_delimiter_is_one_sentence() {
        assert_eq!(texts("被告人无异议"), ["被告人无异议"]);
    }

    #[test]
    fn delimiter_only_segments_vanish() {
        assert!(segment_sentences("。。").is_empty());
        assert_eq!(texts("甲。 。乙。"), ["甲。", "乙。"]);
    }

    #[test]
    fn indices_are_contiguous() {
        let sentences = segment_sentences("一。。二。三");
        let idx: Vec<_> = sentences.iter().map(|s| s.index).collect();
        assert_eq!(idx, [0, 1, 2]);
    }
}

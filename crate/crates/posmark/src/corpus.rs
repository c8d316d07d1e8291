//! POS-tagged corpus ingestion: tagsets, tagged sentences, file parsers, and
//! a pluggable tagging interface with a context-free lexicon tagger.
//!
//! Two corpus formats are supported: CoNLL-U (10 tab-separated columns, `#`
//! comments, blank line between sentences) and a minimal two-column TSV
//! (`surface<TAB>tag`, blank line between sentences). Lexicon files reuse the
//! TSV column layout, one entry per line.

use std::collections::HashMap;
use std::fmt;
use std::io::{BufRead, Write};
use std::sync::Arc;

use crate::error::{Error, Result};

/// A part-of-speech tag symbol, cheap to clone and hashable by content.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct PosTag(Arc<str>);

impl PosTag {
    /// Used when rebuilding tags from trusted artifacts (table files); tags
    /// that must belong to a tagset go through [`Tagset::tag`] instead.
    pub(crate) fn from_symbol(symbol: &str) -> Self {
        PosTag(Arc::from(symbol))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for PosTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// Universal word-class grouping used for score decomposition.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum WordCategory {
    Content,
    Function,
    Other,
}

impl WordCategory {
    pub fn as_str(self) -> &'static str {
        match self {
            WordCategory::Content => "Content",
            WordCategory::Function => "Function",
            WordCategory::Other => "Other",
        }
    }
}

impl fmt::Display for WordCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// A declared, ordered set of tag symbols with a total word-class grouping.
#[derive(Debug, Clone)]
pub struct Tagset {
    id: String,
    tags: Vec<PosTag>,
    groups: Vec<WordCategory>,
    index: HashMap<Arc<str>, usize>,
}

/// The 17 universal POS tags with their content/function/other grouping.
const UNIVERSAL_TAGS: &[(&str, WordCategory)] = &[
    ("ADJ", WordCategory::Content),
    ("ADP", WordCategory::Function),
    ("ADV", WordCategory::Content),
    ("AUX", WordCategory::Function),
    ("CCONJ", WordCategory::Function),
    ("DET", WordCategory::Function),
    ("INTJ", WordCategory::Content),
    ("NOUN", WordCategory::Content),
    ("NUM", WordCategory::Function),
    ("PART", WordCategory::Function),
    ("PRON", WordCategory::Function),
    ("PROPN", WordCategory::Content),
    ("PUNCT", WordCategory::Other),
    ("SCONJ", WordCategory::Function),
    ("SYM", WordCategory::Other),
    ("VERB", WordCategory::Content),
    ("X", WordCategory::Other),
];

impl Tagset {
    /// Builds a tagset from `(symbol, category)` pairs. Symbols must be
    /// non-empty, unique, and free of whitespace and `|` (the context join
    /// character in table files).
    pub fn new(id: impl Into<String>, entries: &[(&str, WordCategory)]) -> Result<Self> {
        let id = id.into();
        if id.is_empty() {
            return Err(Error::Config("tagset id must be non-empty".into()));
        }
        if entries.is_empty() {
            return Err(Error::Config("tagset must declare at least one tag".into()));
        }
        let mut tags = Vec::with_capacity(entries.len());
        let mut groups = Vec::with_capacity(entries.len());
        let mut index = HashMap::with_capacity(entries.len());
        for &(symbol, group) in entries {
            if symbol.is_empty() || symbol.contains('|') || symbol.chars().any(char::is_whitespace)
            {
                return Err(Error::Config(format!(
                    "invalid tag symbol `{symbol}`: must be non-empty without whitespace or `|`"
                )));
            }
            let tag = PosTag(Arc::from(symbol));
            if index.insert(tag.0.clone(), tags.len()).is_some() {
                return Err(Error::Config(format!("duplicate tag symbol `{symbol}`")));
            }
            tags.push(tag);
            groups.push(group);
        }
        Ok(Tagset { id, tags, groups, index })
    }

    /// The universal dependencies tagset.
    pub fn universal() -> Self {
        Self::new("ud", UNIVERSAL_TAGS).expect("universal tagset is well-formed")
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn len(&self) -> usize {
        self.tags.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tags.is_empty()
    }

    pub fn tags(&self) -> &[PosTag] {
        &self.tags
    }

    /// Resolves a symbol to its tag, if declared.
    pub fn tag(&self, symbol: &str) -> Option<PosTag> {
        self.index.get(symbol).map(|&i| self.tags[i].clone())
    }

    pub fn contains(&self, tag: &PosTag) -> bool {
        self.index.contains_key(&tag.0)
    }

    /// Word-class group of a tag; errors on tags outside this tagset.
    pub fn category_of(&self, tag: &PosTag) -> Result<WordCategory> {
        self.index
            .get(&tag.0)
            .map(|&i| self.groups[i])
            .ok_or_else(|| Error::UnknownTag { tag: tag.as_str().to_owned(), line: None })
    }
}

/// One sentence of `(surface, tag)` pairs. Always non-empty.
#[derive(Debug, Clone, PartialEq)]
pub struct TaggedSentence {
    tokens: Vec<(String, PosTag)>,
}

impl TaggedSentence {
    pub fn new(tokens: Vec<(String, PosTag)>) -> Result<Self> {
        if tokens.is_empty() {
            return Err(Error::Config("tagged sentence must be non-empty".into()));
        }
        Ok(TaggedSentence { tokens })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn tokens(&self) -> &[(String, PosTag)] {
        &self.tokens
    }

    pub fn surfaces(&self) -> impl Iterator<Item = &str> {
        self.tokens.iter().map(|(w, _)| w.as_str())
    }

    pub fn tags(&self) -> impl Iterator<Item = &PosTag> {
        self.tokens.iter().map(|(_, t)| t)
    }
}

/// A word-sequence tagger.
///
/// Implementations used for watermark insertion should be prefix-stable:
/// extending the input must never change tags already emitted for the prefix.
/// Context-free per-word taggers satisfy this by construction; contextual
/// taggers can be plugged in but risk insertion/detection context mismatch.
pub trait Tagger: Send + Sync {
    /// Tags every word; must be length-preserving and deterministic.
    fn tag_words(&self, words: &[&str]) -> Vec<PosTag>;

    fn tagset(&self) -> &Tagset;

    /// Whether tags of a prefix are guaranteed unchanged when the sequence
    /// grows. Enables incremental tagging during generation.
    fn prefix_stable(&self) -> bool {
        false
    }
}

/// Context-free dictionary tagger: each surface form maps to one tag,
/// unknown words map to a designated fallback tag.
#[derive(Debug, Clone)]
pub struct LexiconTagger {
    tagset: Arc<Tagset>,
    lexicon: HashMap<String, PosTag>,
    unknown_tag: PosTag,
}

impl LexiconTagger {
    pub fn new(
        tagset: Arc<Tagset>,
        lexicon: HashMap<String, PosTag>,
        unknown_tag: PosTag,
    ) -> Result<Self> {
        if !tagset.contains(&unknown_tag) {
            return Err(Error::UnknownTag { tag: unknown_tag.as_str().to_owned(), line: None });
        }
        for tag in lexicon.values() {
            if !tagset.contains(tag) {
                return Err(Error::UnknownTag { tag: tag.as_str().to_owned(), line: None });
            }
        }
        Ok(LexiconTagger { tagset, lexicon, unknown_tag })
    }

    /// Loads a lexicon from two-column TSV (`surface<TAB>tag`). Duplicate
    /// surfaces must agree on the tag.
    pub fn from_tsv(reader: impl BufRead, tagset: Arc<Tagset>, unknown_tag: PosTag) -> Result<Self> {
        let mut lexicon = HashMap::new();
        for (idx, line) in reader.lines().enumerate() {
            let line_no = idx + 1;
            let line = line?;
            let line = line.trim_end_matches('\r');
            if line.is_empty() {
                continue;
            }
            let mut cols = line.split('\t');
            let (surface, symbol) = match (cols.next(), cols.next(), cols.next()) {
                (Some(w), Some(t), None) if !w.is_empty() && !t.is_empty() => (w, t),
                _ => {
                    return Err(Error::Parse {
                        line: line_no,
                        msg: format!("expected `surface<TAB>tag`, got `{line}`"),
                    })
                }
            };
            let tag = tagset
                .tag(symbol)
                .ok_or_else(|| Error::UnknownTag { tag: symbol.to_owned(), line: Some(line_no) })?;
            if let Some(prev) = lexicon.insert(surface.to_owned(), tag.clone()) {
                if prev != tag {
                    return Err(Error::Parse {
                        line: line_no,
                        msg: format!("surface `{surface}` maps to both `{prev}` and `{tag}`"),
                    });
                }
            }
        }
        Self::new(tagset, lexicon, unknown_tag)
    }

    pub fn lexicon(&self) -> &HashMap<String, PosTag> {
        &self.lexicon
    }

    pub fn unknown_tag(&self) -> &PosTag {
        &self.unknown_tag
    }

    pub fn tag_word(&self, word: &str) -> PosTag {
        self.lexicon.get(word).cloned().unwrap_or_else(|| self.unknown_tag.clone())
    }

    /// Writes the lexicon as two-column TSV, sorted by surface.
    pub fn write_tsv(&self, mut writer: impl Write) -> Result<()> {
        let mut entries: Vec<_> = self.lexicon.iter().collect();
        entries.sort();
        for (surface, tag) in entries {
            writeln!(writer, "{surface}\t{tag}")?;
        }
        Ok(())
    }
}

impl Tagger for LexiconTagger {
    fn tag_words(&self, words: &[&str]) -> Vec<PosTag> {
        words.iter().map(|w| self.tag_word(w)).collect()
    }

    fn tagset(&self) -> &Tagset {
        &self.tagset
    }

    fn prefix_stable(&self) -> bool {
        true
    }
}

/// Which CoNLL-U column supplies the tag.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TagColumn {
    /// Column 4, the universal POS tag.
    Upos,
    /// Column 5, the language-specific tag.
    Xpos,
}

impl TagColumn {
    fn index(self) -> usize {
        match self {
            TagColumn::Upos => 3,
            TagColumn::Xpos => 4,
        }
    }
}

/// Parses CoNLL-U input. Multiword ranges (`1-2`) and empty nodes (`1.1`)
/// are skipped so surfaces stay aligned 1:1 with tags.
pub fn parse_conllu(
    reader: impl BufRead,
    tagset: &Tagset,
    tag_column: TagColumn,
) -> Result<Vec<TaggedSentence>> {
    let mut sentences = Vec::new();
    let mut current: Vec<(String, PosTag)> = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line?;
        let line = line.trim_end_matches('\r');
        if line.is_empty() {
            if !current.is_empty() {
                sentences.push(TaggedSentence { tokens: std::mem::take(&mut current) });
            }
            continue;
        }
        if line.starts_with('#') {
            continue;
        }
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != 10 {
            return Err(Error::Parse {
                line: line_no,
                msg: format!("expected 10 tab-separated columns, got {}", cols.len()),
            });
        }
        let id = cols[0];
        if id.contains('-') || id.contains('.') {
            continue;
        }
        let symbol = cols[tag_column.index()];
        let tag = tagset
            .tag(symbol)
            .ok_or_else(|| Error::UnknownTag { tag: symbol.to_owned(), line: Some(line_no) })?;
        current.push((cols[1].to_owned(), tag));
    }
    if !current.is_empty() {
        sentences.push(TaggedSentence { tokens: current });
    }
    Ok(sentences)
}

/// Parses two-column TSV (`surface<TAB>tag`, blank line between sentences).
pub fn parse_tsv(reader: impl BufRead, tagset: &Tagset) -> Result<Vec<TaggedSentence>> {
    let mut sentences = Vec::new();
    let mut current: Vec<(String, PosTag)> = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line?;
        let line = line.trim_end_matches('\r');
        if line.is_empty() {
            if !current.is_empty() {
                sentences.push(TaggedSentence { tokens: std::mem::take(&mut current) });
            }
            continue;
        }
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != 2 || cols[0].is_empty() || cols[1].is_empty() {
            return Err(Error::Parse {
                line: line_no,
                msg: format!("expected `surface<TAB>tag`, got `{line}`"),
            });
        }
        let tag = tagset
            .tag(cols[1])
            .ok_or_else(|| Error::UnknownTag { tag: cols[1].to_owned(), line: Some(line_no) })?;
        current.push((cols[0].to_owned(), tag));
    }
    if !current.is_empty() {
        sentences.push(TaggedSentence { tokens: current });
    }
    Ok(sentences)
}

/// Serializes sentences to the two-column TSV format accepted by
/// [`parse_tsv`]. Inverse of parsing for well-formed input.
pub fn write_tsv(sentences: &[TaggedSentence], mut writer: impl Write) -> Result<()> {
    for (i, sentence) in sentences.iter().enumerate() {
        if i > 0 {
            writeln!(writer)?;
        }
        for (surface, tag) in &sentence.tokens {
            writeln!(writer, "{surface}\t{tag}")?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::io::Cursor;

    fn ud() -> Arc<Tagset> {
        Arc::new(Tagset::universal())
    }

    fn conllu_line(id: &str, form: &str, upos: &str, xpos: &str) -> String {
        format!("{id}\t{form}\t{form}\t{upos}\t{xpos}\t_\t0\troot\t_\t_")
    }

    #[test]
    fn universal_grouping_matches_word_class_lists() {
        let ts = Tagset::universal();
        assert_eq!(ts.len(), 17);
        for (tag, group) in [
            ("NOUN", WordCategory::Content),
            ("DET", WordCategory::Function),
            ("PUNCT", WordCategory::Other),
        ] {
            let tag = ts.tag(tag).unwrap();
            assert_eq!(ts.category_of(&tag).unwrap(), group);
        }
        // The three groups partition the tagset.
        let mut counts = HashMap::new();
        for tag in ts.tags() {
            *counts.entry(ts.category_of(tag).unwrap()).or_insert(0usize) += 1;
        }
        assert_eq!(counts[&WordCategory::Content], 6);
        assert_eq!(counts[&WordCategory::Function], 8);
        assert_eq!(counts[&WordCategory::Other], 3);
    }

    #[test]
    fn category_of_unknown_tag_errors() {
        let ts = Tagset::universal();
        let other = Tagset::new("ptb", &[("NN", WordCategory::Content)]).unwrap();
        let nn = other.tag("NN").unwrap();
        assert!(matches!(ts.category_of(&nn), Err(Error::UnknownTag { .. })));
    }

    #[test]
    fn tagset_rejects_bad_symbols() {
        assert!(Tagset::new("x", &[("A|B", WordCategory::Other)]).is_err());
        assert!(Tagset::new("x", &[("A B", WordCategory::Other)]).is_err());
        assert!(Tagset::new("x", &[("", WordCategory::Other)]).is_err());
        assert!(
            Tagset::new("x", &[("A", WordCategory::Other), ("A", WordCategory::Content)]).is_err()
        );
    }

    #[test]
    fn parse_conllu_basic_block() {
        let input = format!(
            "# sent_id = 1\n{}\n{}\n\n",
            conllu_line("1", "the", "DET", "DT"),
            conllu_line("2", "cat", "NOUN", "NN"),
        );
        let ts = ud();
        let sents = parse_conllu(Cursor::new(input), &ts, TagColumn::Upos).unwrap();
        assert_eq!(sents.len(), 1);
        let tokens = sents[0].tokens();
        assert_eq!(tokens[0].0, "the");
        assert_eq!(tokens[0].1.as_str(), "DET");
        assert_eq!(tokens[1].0, "cat");
        assert_eq!(tokens[1].1.as_str(), "NOUN");
    }

    #[test]
    fn parse_conllu_empty_stream() {
        let ts = ud();
        let sents = parse_conllu(Cursor::new(""), &ts, TagColumn::Upos).unwrap();
        assert!(sents.is_empty());
    }

    #[test]
    fn parse_conllu_wrong_column_count() {
        let ts = ud();
        let err = parse_conllu(Cursor::new("1\tthe\tDET\n"), &ts, TagColumn::Upos).unwrap_err();
        match err {
            Error::Parse { line, .. } => assert_eq!(line, 1),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn parse_conllu_skips_multiword_ranges_and_empty_nodes() {
        let input = format!(
            "{}\n{}\n{}\n{}\n",
            conllu_line("1-2", "don't", "_", "_"),
            conllu_line("1", "do", "VERB", "VB"),
            conllu_line("1.1", "ghost", "X", "XX"),
            conllu_line("2", "not", "PART", "RB"),
        );
        let ts = ud();
        let sents = parse_conllu(Cursor::new(input), &ts, TagColumn::Upos).unwrap();
        assert_eq!(sents.len(), 1);
        let surfaces: Vec<_> = sents[0].surfaces().collect();
        assert_eq!(surfaces, ["do", "not"]);
    }

    #[test]
    fn parse_conllu_reads_the_xpos_column_with_a_custom_tagset() {
        let ptb = Tagset::new(
            "ptb",
            &[("DT", WordCategory::Function), ("NN", WordCategory::Content)],
        )
        .unwrap();
        let input = format!(
            "{}\n{}\n",
            conllu_line("1", "the", "DET", "DT"),
            conllu_line("2", "cat", "NOUN", "NN"),
        );
        let sents = parse_conllu(Cursor::new(input), &ptb, TagColumn::Xpos).unwrap();
        let tags: Vec<_> = sents[0].tags().map(PosTag::as_str).collect();
        assert_eq!(tags, ["DT", "NN"]);
    }

    #[test]
    fn parse_conllu_unknown_tag_names_the_tag() {
        let input = conllu_line("1", "cat", "ZZZ", "NN");
        let ts = ud();
        let err = parse_conllu(Cursor::new(input), &ts, TagColumn::Upos).unwrap_err();
        match err {
            Error::UnknownTag { tag, line } => {
                assert_eq!(tag, "ZZZ");
                assert_eq!(line, Some(1));
            }
            other => panic!("expected unknown tag error, got {other:?}"),
        }
    }

    #[test]
    fn parse_tsv_two_blocks() {
        let ts = ud();
        let sents =
            parse_tsv(Cursor::new("the\tDET\ncat\tNOUN\n\nruns\tVERB\n"), &ts).unwrap();
        assert_eq!(sents.len(), 2);
        assert_eq!(sents[0].len(), 2);
        assert_eq!(sents[1].len(), 1);
    }

    #[test]
    fn parse_tsv_unknown_tag() {
        let ts = ud();
        assert!(matches!(
            parse_tsv(Cursor::new("cat\tZZZ\n"), &ts),
            Err(Error::UnknownTag { .. })
        ));
    }

    #[test]
    fn tag_words_lexicon_and_unknown() {
        let ts = ud();
        let mut lex = HashMap::new();
        lex.insert("cat".to_owned(), ts.tag("NOUN").unwrap());
        let tagger = LexiconTagger::new(ts.clone(), lex, ts.tag("X").unwrap()).unwrap();
        let tags = tagger.tag_words(&["cat", "zorp"]);
        assert_eq!(tags[0].as_str(), "NOUN");
        assert_eq!(tags[1].as_str(), "X");
        assert!(tagger.tag_words(&[]).is_empty());
    }

    #[test]
    fn lexicon_tsv_round_trip_and_conflicts() {
        let ts = ud();
        let tagger = LexiconTagger::from_tsv(
            Cursor::new("cat\tNOUN\nthe\tDET\ncat\tNOUN\n"),
            ts.clone(),
            ts.tag("X").unwrap(),
        )
        .unwrap();
        assert_eq!(tagger.lexicon().len(), 2);

        let mut buf = Vec::new();
        tagger.write_tsv(&mut buf).unwrap();
        let reloaded =
            LexiconTagger::from_tsv(Cursor::new(buf), ts.clone(), ts.tag("X").unwrap()).unwrap();
        assert_eq!(reloaded.lexicon(), tagger.lexicon());

        assert!(LexiconTagger::from_tsv(
            Cursor::new("cat\tNOUN\ncat\tVERB\n"),
            ts.clone(),
            ts.tag("X").unwrap(),
        )
        .is_err());
    }

    proptest! {
        #[test]
        fn tag_words_is_length_preserving_and_prefix_stable(
            words in proptest::collection::vec("[a-z]{1,8}", 0..40),
            split in 0usize..40,
        ) {
            let ts = ud();
            let mut lex = HashMap::new();
            lex.insert("cat".to_owned(), ts.tag("NOUN").unwrap());
            lex.insert("the".to_owned(), ts.tag("DET").unwrap());
            let tagger = LexiconTagger::new(ts.clone(), lex, ts.tag("X").unwrap()).unwrap();

            let refs: Vec<&str> = words.iter().map(String::as_str).collect();
            let full = tagger.tag_words(&refs);
            prop_assert_eq!(full.len(), refs.len());
            // Deterministic.
            prop_assert_eq!(&full, &tagger.tag_words(&refs));
            // Prefix tags never change when the sequence is extended.
            let cut = split.min(refs.len());
            let prefix = tagger.tag_words(&refs[..cut]);
            prop_assert_eq!(&full[..cut], &prefix[..]);
        }

        #[test]
        fn tsv_round_trip_is_identity(
            sents in proptest::collection::vec(
                proptest::collection::vec(("[a-z]{1,8}", 0usize..17), 1..8),
                0..6,
            )
        ) {
            let ts = ud();
            let sentences: Vec<TaggedSentence> = sents
                .iter()
                .map(|s| {
                    TaggedSentence::new(
                        s.iter()
                            .map(|(w, t)| (w.clone(), ts.tags()[*t].clone()))
                            .collect(),
                    )
                    .unwrap()
                })
                .collect();
            let mut buf = Vec::new();
            write_tsv(&sentences, &mut buf).unwrap();
            let parsed = parse_tsv(Cursor::new(buf), &ts).unwrap();
            prop_assert_eq!(parsed, sentences);
        }
    }
}

//! Dual-script utterance normalization.
//!
//! Every utterance goes through the same composition:
//!
//! 1. canonical composition (NFC),
//! 2. phone-number masking,
//! 3. script detection,
//! 4. repeated-grapheme squashing,
//! 5. script-specific cleanup (Arabic grapheme unification, or Arabizi
//!    lowercasing and digit de-substitution),
//! 6. whitespace collapsing.
//!
//! Internally the text is carried as a list of [`Piece`]s so that the mask
//! token is never touched by later stages and every surviving character
//! remembers where it came from. That provenance is what lets mask spans
//! point into the caller's original text even after composition and
//! deletions have shifted offsets around.

use std::fmt;
use std::ops::Range;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use unicode_normalization::char::decompose_canonical;
use unicode_normalization::UnicodeNormalization;

/// Replacement token for masked phone numbers.
pub const PHONE_TOKEN: &str = "[PHONE]";

const PHONE_TOKEN_CHARS: [char; 7] = ['[', 'P', 'H', 'O', 'N', 'E', ']'];

const ALEF: char = '\u{0627}';
const ALEF_VARIANTS: [char; 4] = ['\u{0622}', '\u{0623}', '\u{0625}', '\u{0671}'];
const ALEF_MAQSURA: char = '\u{0649}';
const YA: char = '\u{064A}';
const TA_MARBUTA: char = '\u{0629}';
const HA: char = '\u{0647}';
const TATWEEL: char = '\u{0640}';
const DIACRITICS: std::ops::RangeInclusive<char> = '\u{064B}'..='\u{0652}';

/// Upper bound on compose/transform rounds; each round only fires when a
/// previous round produced a new composable pair, which is rare.
const MAX_FIXPOINT_ROUNDS: usize = 16;

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct RawUtterance {
    pub text: String,
    pub source_tag: Option<String>,
}

impl RawUtterance {
    pub fn new(text: impl Into<String>) -> Self {
        Self {
            text: text.into(),
            source_tag: None,
        }
    }

    pub fn tagged(text: impl Into<String>, tag: impl Into<String>) -> Self {
        Self {
            text: text.into(),
            source_tag: Some(tag.into()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Script {
    Arabic,
    Latin,
}

impl Script {
    pub fn as_str(self) -> &'static str {
        match self {
            Script::Arabic => "arabic",
            Script::Latin => "latin",
        }
    }
}

impl fmt::Display for Script {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("unknown script tag {0:?} (expected \"arabic\" or \"latin\")")]
pub struct UnknownScript(pub String);

impl FromStr for Script {
    type Err = UnknownScript;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "arabic" | "ar" | "arab" => Ok(Script::Arabic),
            "latin" | "lat" | "arabizi" | "latn" => Ok(Script::Latin),
            _ => Err(UnknownScript(s.to_string())),
        }
    }
}

/// One masked region of the input.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MaskRecord {
    /// Half-open character offsets into the text handed to the masker.
    pub span: Range<usize>,
    pub token: String,
    pub original: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NormalizedUtterance {
    pub text: String,
    pub script: Script,
    pub masks: Vec<MaskRecord>,
}

/// Unit of work inside the pipeline. `src` is the character index in the
/// NFC-composed input the character descends from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Piece {
    Char { ch: char, src: usize },
    Token,
}

impl Piece {
    fn ch(self) -> Option<char> {
        match self {
            Piece::Char { ch, .. } => Some(ch),
            Piece::Token => None,
        }
    }

    fn is_letter(self) -> bool {
        self.ch().is_some_and(char::is_alphabetic)
    }

    fn is_ascii_digit(self) -> bool {
        self.ch().is_some_and(|c| c.is_ascii_digit())
    }
}

/// Split text into pieces, recognising literal mask tokens.
fn to_pieces(chars: &[char]) -> Vec<Piece> {
    let mut out = Vec::with_capacity(chars.len());
    let mut i = 0;
    while i < chars.len() {
        if chars[i..].starts_with(&PHONE_TOKEN_CHARS) {
            out.push(Piece::Token);
            i += PHONE_TOKEN_CHARS.len();
        } else {
            out.push(Piece::Char { ch: chars[i], src: i });
            i += 1;
        }
    }
    out
}

fn render(pieces: &[Piece]) -> String {
    let mut s = String::with_capacity(pieces.len());
    for p in pieces {
        match *p {
            Piece::Char { ch, .. } => s.push(ch),
            Piece::Token => s.push_str(PHONE_TOKEN),
        }
    }
    s
}

fn pieces_of(text: &str) -> Vec<Piece> {
    let chars: Vec<char> = text.chars().collect();
    to_pieces(&chars)
}

fn is_arabic_block(c: char) -> bool {
    ('\u{0600}'..='\u{06FF}').contains(&c)
}

fn script_of_pieces(pieces: &[Piece]) -> Script {
    let (mut arabic, mut latin) = (0usize, 0usize);
    for c in pieces.iter().filter_map(|p| p.ch()) {
        if is_arabic_block(c) {
            arabic += 1;
        } else if c.is_ascii_alphabetic() {
            latin += 1;
        }
    }
    if arabic > latin {
        Script::Arabic
    } else {
        Script::Latin
    }
}

/// Classify text as Arabic-script or Latin-script (Arabizi).
///
/// Counts codepoints of the Arabic block against ASCII letters; Arabic wins
/// only with a strict majority, so ties and letter-free input are Latin.
/// Mask tokens are placeholders and are not counted.
pub fn detect_script(text: &str) -> Script {
    script_of_pieces(&pieces_of(text))
}

fn map_arabic_char(c: char) -> Option<char> {
    match c {
        c if ALEF_VARIANTS.contains(&c) => Some(ALEF),
        ALEF_MAQSURA => Some(YA),
        TA_MARBUTA => Some(HA),
        TATWEEL => None,
        c if DIACRITICS.contains(&c) => None,
        c => Some(c),
    }
}

fn arabic_pass(pieces: &mut Vec<Piece>) {
    pieces.retain_mut(|p| match p {
        Piece::Char { ch, .. } => match map_arabic_char(*ch) {
            Some(mapped) => {
                *ch = mapped;
                true
            }
            None => false,
        },
        Piece::Token => true,
    });
}

/// Arabic grapheme unification: Alef variants, Alef Maqsura, Ta Marbuta,
/// Tatweel and short-vowel diacritics.
pub fn normalize_arabic(text: &str) -> String {
    text.chars().filter_map(map_arabic_char).collect()
}

fn simple_lowercase(c: char) -> char {
    // U+0130 is the only codepoint whose full lowercase mapping is longer
    // than one char; its simple mapping is plain 'i'.
    if c == '\u{0130}' {
        'i'
    } else {
        c.to_lowercase().next().unwrap_or(c)
    }
}

fn is_apostrophe_variant(c: char) -> bool {
    matches!(c, '\u{2019}' | '\u{02BC}' | '\u{0060}')
}

fn desubstitute(c: char) -> Option<char> {
    match c {
        '7' => Some('h'),
        '3' => Some('a'),
        '9' => Some('q'),
        _ => None,
    }
}

fn latin_pass(pieces: &mut [Piece]) {
    for p in pieces.iter_mut() {
        if let Piece::Char { ch, .. } = p {
            let lower = simple_lowercase(*ch);
            *ch = if is_apostrophe_variant(lower) { '\'' } else { lower };
        }
    }
    // Substitution digits are handled as maximal runs so that "33a" and
    // "a33" both resolve completely in one pass.
    let mut i = 0;
    while i < pieces.len() {
        if !pieces[i].ch().is_some_and(|c| desubstitute(c).is_some()) {
            i += 1;
            continue;
        }
        let start = i;
        while i < pieces.len() && pieces[i].ch().is_some_and(|c| desubstitute(c).is_some()) {
            i += 1;
        }
        let left = start.checked_sub(1).is_some_and(|j| pieces[j].is_letter());
        let right = i < pieces.len() && pieces[i].is_letter();
        if left || right {
            for p in &mut pieces[start..i] {
                if let Piece::Char { ch, .. } = p {
                    *ch = desubstitute(*ch).unwrap_or(*ch);
                }
            }
        }
    }
}

/// Arabizi cleanup: lowercase, apostrophe unification and de-substitution of
/// the 7/3/9 digits when they touch a letter. Mask tokens are left intact.
pub fn normalize_latin(text: &str) -> String {
    let mut pieces = pieces_of(text);
    latin_pass(&mut pieces);
    render(&pieces)
}

fn squash_pass(pieces: &mut Vec<Piece>) {
    let mut out: Vec<Piece> = Vec::with_capacity(pieces.len());
    let mut i = 0;
    while i < pieces.len() {
        let Some(c) = pieces[i].ch() else {
            out.push(pieces[i]);
            i += 1;
            continue;
        };
        let mut j = i + 1;
        while j < pieces.len() && pieces[j].ch() == Some(c) {
            j += 1;
        }
        if j - i >= 3 && !c.is_numeric() {
            out.push(pieces[i]);
        } else {
            out.extend_from_slice(&pieces[i..j]);
        }
        i = j;
    }
    *pieces = out;
}

/// Collapse emphatic repetition: runs of three or more identical
/// codepoints become one. Doubles are kept, and so are digit runs, which
/// carry amounts ("1000 DA").
pub fn squash_repeats(text: &str) -> String {
    let mut pieces = pieces_of(text);
    squash_pass(&mut pieces);
    render(&pieces)
}

fn is_separator(p: Piece) -> bool {
    matches!(p.ch(), Some(' ' | '.' | '-'))
}

/// Try to match a phone number starting at `start`; returns the index one
/// past its last digit.
fn match_phone_at(pieces: &[Piece], start: usize) -> Option<usize> {
    if pieces[start].ch() != Some('0') {
        return None;
    }
    if start > 0 && pieces[start - 1].is_ascii_digit() {
        return None;
    }
    let mut pos = start + 1;
    let mut digits = Vec::with_capacity(9);
    while digits.len() < 9 {
        let next = match pieces.get(pos) {
            Some(p) if p.is_ascii_digit() => pos,
            Some(p) if is_separator(*p) => match pieces.get(pos + 1) {
                Some(q) if q.is_ascii_digit() => pos + 1,
                _ => return None,
            },
            _ => return None,
        };
        digits.push(pieces[next].ch()?);
        pos = next + 1;
    }
    if !matches!(digits[0], '5' | '6' | '7') {
        return None;
    }
    if pieces.get(pos).is_some_and(|p| p.is_ascii_digit()) {
        return None;
    }
    Some(pos)
}

/// Replace phone matches with tokens; returns `(first_src, last_src)` for
/// each replaced region.
fn mask_pass(pieces: &mut Vec<Piece>) -> Vec<(usize, usize)> {
    let mut found = Vec::new();
    let mut out = Vec::with_capacity(pieces.len());
    let mut i = 0;
    while i < pieces.len() {
        if let Some(end) = match_phone_at(pieces, i) {
            let src = |p: Piece| match p {
                Piece::Char { src, .. } => src,
                Piece::Token => unreachable!("phone matches span characters only"),
            };
            found.push((src(pieces[i]), src(pieces[end - 1])));
            out.push(Piece::Token);
            i = end;
        } else {
            out.push(pieces[i]);
            i += 1;
        }
    }
    *pieces = out;
    found
}

/// Mask Algerian mobile numbers (0 then 5/6/7 then eight digits, single
/// space, dot or hyphen allowed between digits). Spans index `text`.
pub fn mask_phone(text: &str) -> (String, Vec<MaskRecord>) {
    let chars: Vec<char> = text.chars().collect();
    let mut pieces = to_pieces(&chars);
    let found = mask_pass(&mut pieces);
    let masks = found
        .into_iter()
        .map(|(a, b)| MaskRecord {
            span: a..b + 1,
            token: PHONE_TOKEN.to_string(),
            original: chars[a..=b].iter().collect(),
        })
        .collect();
    (render(&pieces), masks)
}

fn collapse_whitespace_pass(pieces: &mut Vec<Piece>) {
    let mut out: Vec<Piece> = Vec::with_capacity(pieces.len());
    let mut pending: Option<Piece> = None;
    for &p in pieces.iter() {
        match p {
            Piece::Char { ch, src } if ch.is_whitespace() => {
                if pending.is_none() {
                    pending = Some(Piece::Char { ch: ' ', src });
                }
            }
            _ => {
                if let Some(space) = pending.take() {
                    if !out.is_empty() {
                        out.push(space);
                    }
                }
                out.push(p);
            }
        }
    }
    *pieces = out;
}

fn nfd_len(c: char) -> usize {
    let mut n = 0;
    decompose_canonical(c, |_| n += 1);
    n
}

/// For every output char, the index of the input char where its canonical
/// decomposition starts. Exact for starters, which is all phone masking
/// needs; combining marks map to the nearest preceding input position.
fn align_by_decomposition(input: &[char], output: &[char]) -> Vec<usize> {
    let mut map = Vec::with_capacity(output.len());
    let (mut i, mut in_acc, mut out_acc) = (0usize, 0usize, 0usize);
    for &c in output {
        while i + 1 < input.len() && in_acc + nfd_len(input[i]) <= out_acc {
            in_acc += nfd_len(input[i]);
            i += 1;
        }
        map.push(i.min(input.len().saturating_sub(1)));
        out_acc += nfd_len(c);
    }
    map
}

fn nfc_pass(pieces: &mut Vec<Piece>) {
    let mut out = Vec::with_capacity(pieces.len());
    let mut segment: Vec<(char, usize)> = Vec::new();
    let flush = |segment: &mut Vec<(char, usize)>, out: &mut Vec<Piece>| {
        if segment.is_empty() {
            return;
        }
        let chars: Vec<char> = segment.iter().map(|&(c, _)| c).collect();
        let composed: Vec<char> = chars.iter().copied().nfc().collect();
        if composed == chars {
            out.extend(segment.iter().map(|&(ch, src)| Piece::Char { ch, src }));
        } else {
            let map = align_by_decomposition(&chars, &composed);
            out.extend(
                composed
                    .iter()
                    .zip(map)
                    .map(|(&ch, k)| Piece::Char { ch, src: segment[k].1 }),
            );
        }
        segment.clear();
    };
    for &p in pieces.iter() {
        match p {
            Piece::Char { ch, src } => segment.push((ch, src)),
            Piece::Token => {
                flush(&mut segment, &mut out);
                out.push(Piece::Token);
            }
        }
    }
    flush(&mut segment, &mut out);
    *pieces = out;
}

fn script_pass(pieces: &mut Vec<Piece>, script: Script) {
    if script == Script::Latin {
        latin_pass(pieces);
    }
    // Arabic graphemes embedded in Arabizi are unified as well, so the
    // excluded codepoints never survive either branch.
    arabic_pass(pieces);
}

struct BranchOutput {
    pieces: Vec<Piece>,
    masks: Vec<(usize, usize)>,
}

fn run_branch(mut pieces: Vec<Piece>, script: Script) -> BranchOutput {
    squash_pass(&mut pieces);
    for _ in 0..MAX_FIXPOINT_ROUNDS {
        let before = pieces.clone();
        script_pass(&mut pieces, script);
        nfc_pass(&mut pieces);
        if pieces == before {
            break;
        }
    }
    squash_pass(&mut pieces);
    collapse_whitespace_pass(&mut pieces);
    // Deletions and de-substitution can expose a number that was not a
    // match before cleanup; mask it too so the output is mask-complete.
    let masks = mask_pass(&mut pieces);
    BranchOutput { pieces, masks }
}

/// Run the full normalization pipeline.
///
/// Mask spans are character offsets into `raw.text`. The reported script
/// always agrees with [`detect_script`] on the returned text, and feeding
/// the returned text back in is a no-op.
pub fn normalize(raw: &RawUtterance) -> NormalizedUtterance {
    let raw_chars: Vec<char> = raw.text.chars().collect();
    let composed: Vec<char> = raw.text.nfc().collect();
    let to_raw = if composed == raw_chars {
        (0..composed.len()).collect()
    } else {
        align_by_decomposition(&raw_chars, &composed)
    };

    let mut pieces = to_pieces(&composed);
    let mut spans = mask_pass(&mut pieces);
    let detected = script_of_pieces(&pieces);

    let mut branch = run_branch(pieces.clone(), detected);
    let mut script = script_of_pieces(&branch.pieces);
    if script != detected {
        // The Latin branch output is a fixed point of both branches, so it
        // can carry whichever script its final content shows.
        branch = run_branch(pieces, Script::Latin);
        script = script_of_pieces(&branch.pieces);
    }
    spans.extend(branch.masks);
    spans.sort_unstable();

    let masks = spans
        .into_iter()
        .map(|(first, last)| {
            let span = to_raw[first]..to_raw[last] + 1;
            MaskRecord {
                original: raw_chars[span.clone()].iter().collect(),
                span,
                token: PHONE_TOKEN.to_string(),
            }
        })
        .collect();

    NormalizedUtterance {
        text: render(&branch.pieces),
        script,
        masks,
    }
}

/// Convenience wrapper for plain strings.
pub fn normalize_text(text: &str) -> NormalizedUtterance {
    normalize(&RawUtterance::new(text))
}

/// Whitespace tokens of the normalized form, as a set.
pub fn normalized_token_set(text: &str) -> std::collections::BTreeSet<String> {
    normalize_text(text)
        .text
        .split_whitespace()
        .map(str::to_string)
        .collect()
}

use darja_core::normalize::{detect_script, mask_phone, normalize, normalize_text, squash_repeats, RawUtterance, Script};
use proptest::prelude::*;
use regex::Regex;

const EXCLUDED: &[char] = &[
    '\u{0622}', '\u{0623}', '\u{0625}', '\u{0671}', '\u{0640}', '\u{064B}', '\u{064C}', '\u{064D}', '\u{064E}',
    '\u{064F}', '\u{0650}', '\u{0651}', '\u{0652}',
];

fn piece() -> impl Strategy<Value = String> {
    prop_oneof![
        4 => prop::sample::select(vec!['a', 'b', 'h', 'k', 'S', 'A', 'Q', 'e', 'i', 'o']).prop_map(String::from),
        2 => prop::sample::select(vec!['3', '7', '9', '0', '5', '1']).prop_map(String::from),
        3 => prop::sample::select(vec![
            '\u{0627}', '\u{0623}', '\u{0625}', '\u{0622}', '\u{0671}', '\u{0649}', '\u{0629}', '\u{0628}',
            '\u{0645}', '\u{064A}', '\u{0640}', '\u{064E}', '\u{0651}', '\u{0653}', '\u{0654}',
        ])
        .prop_map(String::from),
        2 => prop::sample::select(vec![' ', ' ', '\t', '.', '-', '\u{2019}', '!', '\u{0301}']).prop_map(String::from),
        1 => Just("0551234567".to_string()),
        1 => Just("07 12 34 56 78".to_string()),
        1 => Just("[PHONE]".to_string()),
        1 => (prop::sample::select(vec!['a', 'z', '\u{0628}', '!']), 3usize..7).prop_map(|(c, n)| c.to_string().repeat(n)),
    ]
}

fn mixed_text() -> impl Strategy<Value = String> {
    prop::collection::vec(piece(), 0..24).prop_map(|v| v.concat())
}

fn phone_regex() -> Regex {
    Regex::new(r"(?:^|[^0-9])0[567](?:[ .\-]?[0-9]){8}(?:$|[^0-9])").unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(2000))]

    #[test]
    fn idempotent(text in mixed_text()) {
        let first = normalize_text(&text);
        let second = normalize_text(&first.text);
        prop_assert_eq!(&second.text, &first.text);
        prop_assert_eq!(second.script, first.script);
        prop_assert!(second.masks.is_empty());
    }

    #[test]
    fn excluded_codepoints_never_survive(text in mixed_text()) {
        let out = normalize_text(&text);
        prop_assert!(!out.text.chars().any(|c| EXCLUDED.contains(&c)), "{:?}", out.text);
        if out.script == Script::Latin {
            let without_tokens = out.text.replace("[PHONE]", " ");
            prop_assert!(!without_tokens.chars().any(|c| c.is_ascii_uppercase()), "{:?}", out.text);
            let chars: Vec<char> = without_tokens.chars().collect();
            for (i, c) in chars.iter().enumerate() {
                if matches!(c, '3' | '7' | '9') {
                    let left = i > 0 && chars[i - 1].is_alphabetic();
                    let right = i + 1 < chars.len() && chars[i + 1].is_alphabetic();
                    prop_assert!(!left && !right, "letter-adjacent digit in {:?}", out.text);
                }
            }
        }
    }

    #[test]
    fn mask_complete_and_spans_exact(text in mixed_text()) {
        let out = normalize_text(&text);
        prop_assert!(!phone_regex().is_match(&out.text), "{:?}", out.text);
        let raw: Vec<char> = text.chars().collect();
        let mut last_end = 0;
        for m in &out.masks {
            prop_assert!(m.span.start >= last_end);
            last_end = m.span.end;
            let at: String = raw[m.span.clone()].iter().collect();
            prop_assert_eq!(&at, &m.original);
        }
    }

    #[test]
    fn script_is_stable(text in mixed_text()) {
        let out = normalize_text(&text);
        prop_assert_eq!(detect_script(&out.text), out.script);
    }

    #[test]
    fn squash_never_grows(text in mixed_text()) {
        prop_assert!(squash_repeats(&text).chars().count() <= text.chars().count());
    }

    #[test]
    fn masking_matches_digit_extraction_oracle(groups in prop::collection::vec(0u8..10, 10), seps in prop::collection::vec(prop::sample::select(vec!["", " ", ".", "-"]), 9)) {
        let mut s = String::new();
        for (i, d) in groups.iter().enumerate() {
            s.push(char::from(b'0' + d));
            if i < 9 { s.push_str(seps[i]); }
        }
        let digits: String = s.chars().filter(char::is_ascii_digit).collect();
        let expected = digits.len() == 10 && digits.starts_with('0') && matches!(&digits[1..2], "5" | "6" | "7");
        let (masked, masks) = mask_phone(&s);
        prop_assert_eq!(masked == "[PHONE]", expected, "{}", s);
        prop_assert_eq!(masks.len(), usize::from(expected));
    }
}

#[test]
fn source_tag_does_not_affect_output() {
    let a = normalize(&RawUtterance::new("Wesh 3andek"));
    let b = normalize(&RawUtterance::tagged("Wesh 3andek", "sms"));
    assert_eq!(a, b);
    assert_eq!(a.text, "wesh aandek");
}

use std::sync::OnceLock;

use regex::Regex;

struct Rules {
    punct_after_non_digit: Regex,
    punct_before_non_digit: Regex,
    symbol: Regex,
}

fn rules() -> &'static Rules {
    static RULES: OnceLock<Rules> = OnceLock::new();
    RULES.get_or_init(|| Rules {
        punct_after_non_digit: Regex::new(r"(\P{N})(\p{P})").unwrap(),
        punct_before_non_digit: Regex::new(r"(\p{P})(\P{N})").unwrap(),
        symbol: Regex::new(r"(\p{S})").unwrap(),
    })
}

/// International BLEU tokenization (mteval-v14 `--international-tokenization`).
///
/// Applied in order, each as a left-to-right non-overlapping replacement:
///
/// 1. `(\P{N})(\p{P})` → `$1 $2 ` (punctuation preceded by a non-digit)
/// 2. `(\p{P})(\P{N})` → ` $1 $2` (punctuation followed by a non-digit)
/// 3. `(\p{S})` → ` $1 ` (symbols)
///
/// then whitespace runs collapse to single spaces and the ends are trimmed.
/// Case is preserved.
pub fn tokenize_intl(line: &str) -> String {
    let r = rules();
    let s = r.punct_after_non_digit.replace_all(line, "${1} ${2} ");
    let s = r.punct_before_non_digit.replace_all(&s, " ${1} ${2}");
    let s = r.symbol.replace_all(&s, " ${1} ");
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

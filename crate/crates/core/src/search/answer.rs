//! Answer normalisation and the survivor majority vote.

/// Canonical form used for answer comparison.
///
/// | input            | rule                                        | output  |
/// |------------------|---------------------------------------------|---------|
/// | `"  Paris "`     | trim surrounding whitespace                 | `paris` |
/// | `"YES"`          | lowercase                                   | `yes`   |
/// | `"4."`, `"(B)"`  | strip surrounding punctuation               | `4`, `b`|
/// | `"$1,200"`       | drop currency sign and thousands separators | `1200`  |
/// | `"4.0"`, `"+4"`  | numbers in shortest decimal form            | `4`     |
/// | `"-0"`           | negative zero is zero                       | `0`     |
/// | `"0.50"`         | trailing fractional zeros removed           | `0.5`   |
/// | `"1e3"`          | exponent notation expanded                  | `1000`  |
pub fn normalize_answer(raw: &str) -> String {
    let s = raw
        .trim_start_matches(|c: char| c.is_whitespace() || "([\"'".contains(c))
        .trim_end_matches(|c: char| c.is_whitespace() || ".,;:!?)]\"'".contains(c))
        .to_lowercase();
    let numeric: String = s.trim_start_matches('$').chars().filter(|&c| c != ',').collect();
    if let Some(n) = parse_number(&numeric) {
        return format_number(n);
    }
    s
}

fn parse_number(s: &str) -> Option<f64> {
    if s.is_empty() || !s.chars().all(|c| c.is_ascii_digit() || matches!(c, '.' | '-' | '+' | 'e')) {
        return None;
    }
    if !s.chars().any(|c| c.is_ascii_digit()) {
        return None;
    }
    s.parse::<f64>().ok().filter(|v| v.is_finite())
}

fn format_number(v: f64) -> String {
    let v = if v == 0.0 { 0.0 } else { v };
    if v.fract() == 0.0 && v.abs() < 1e15 {
        format!("{}", v as i64)
    } else {
        format!("{v}")
    }
}

/// Index of the winning answer among `answers`.
///
/// Answers are grouped by [`normalize_answer`]; the largest group wins and
/// ties go to the group whose first member comes first. `None` entries do not
/// vote. Returns `None` when nobody produced an answer.
pub fn majority_vote(answers: &[Option<String>]) -> Option<usize> {
    let keys: Vec<Option<String>> = answers.iter().map(|a| a.as_deref().map(normalize_answer)).collect();
    let mut best: Option<(usize, usize)> = None; // (count, first index)
    for (i, key) in keys.iter().enumerate() {
        let Some(key) = key else { continue };
        if keys[..i].iter().any(|k| k.as_ref() == Some(key)) {
            continue;
        }
        let count = keys.iter().filter(|k| k.as_ref() == Some(key)).count();
        if best.is_none_or(|(c, _)| count > c) {
            best = Some((count, i));
        }
    }
    best.map(|(_, i)| i)
}

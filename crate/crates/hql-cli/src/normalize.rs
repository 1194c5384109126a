//! Denotation normalization: maps equivalent answer surface forms
//! ("seven" / "7", "$20 millions" / "20,000,000") onto one canonical text
//! so answers are scored by meaning rather than formatting.

/// Number words the normalizer rewrites to digits.
const NUMBER_WORDS: [(&str, &str); 21] = [
    ("zero", "0"),
    ("one", "1"),
    ("two", "2"),
    ("three", "3"),
    ("four", "4"),
    ("five", "5"),
    ("six", "6"),
    ("seven", "7"),
    ("eight", "8"),
    ("nine", "9"),
    ("ten", "10"),
    ("eleven", "11"),
    ("twelve", "12"),
    ("thirteen", "13"),
    ("fourteen", "14"),
    ("fifteen", "15"),
    ("sixteen", "16"),
    ("seventeen", "17"),
    ("eighteen", "18"),
    ("nineteen", "19"),
    ("twenty", "20"),
];

/// Canonicalizes an answer string: lowercase; currency symbols and
/// thousands separators removed; punctuation stripped (digit-internal `.`
/// and `-` survive, so decimals and ranges like `2019-20` keep their
/// shape); articles dropped; number words up to twenty rewritten as
/// digits; `million`/`billion` scale a preceding number; numeric tokens
/// reduced to their shortest form (`7.0` → `7`).
pub fn normalize_denotation(value: &str) -> String {
    let lowered = value.to_lowercase();
    let decommad = remove_thousands_separators(&lowered);
    let cleaned = strip_punctuation(&decommad);

    let mut tokens: Vec<String> = Vec::new();
    for raw in cleaned.split_whitespace() {
        if matches!(raw, "a" | "an" | "the") {
            continue;
        }
        let token = NUMBER_WORDS
            .iter()
            .find(|(word, _)| *word == raw)
            .map(|(_, digits)| digits.to_string())
            .unwrap_or_else(|| raw.to_string());
        if let Some(scaled) = scale_previous(&tokens, &token) {
            *tokens.last_mut().expect("scale requires a predecessor") = scaled;
            continue;
        }
        tokens.push(canonical_number(&token));
    }
    tokens.join(" ")
}

/// True when both strings normalize to the same canonical form.
pub fn denotation_equal(a: &str, b: &str) -> bool {
    normalize_denotation(a) == normalize_denotation(b)
}

/// Drops commas that separate digit groups: `20,000,000` → `20000000`.
/// A separator is a comma preceded by a digit and followed by exactly
/// three digits, so list commas ("1, 2") stay word boundaries.
fn remove_thousands_separators(text: &str) -> String {
    let chars: Vec<char> = text.chars().collect();
    let mut out = String::with_capacity(text.len());
    for (i, &c) in chars.iter().enumerate() {
        let is_separator = c == ','
            && i > 0
            && chars[i - 1].is_ascii_digit()
            && (1..=3).all(|k| chars.get(i + k).is_some_and(|n| n.is_ascii_digit()))
            && !chars.get(i + 4).is_some_and(|n| n.is_ascii_digit());
        if !is_separator {
            out.push(c);
        }
    }
    out
}

/// Removes currency symbols and punctuation. `.` and `-` survive between
/// digits (decimals, negative numbers, ranges); apostrophes vanish
/// without splitting the word; everything else becomes a space.
fn strip_punctuation(text: &str) -> String {
    let chars: Vec<char> = text.chars().collect();
    let mut out = String::with_capacity(text.len());
    for (i, &c) in chars.iter().enumerate() {
        if c.is_alphanumeric() || c.is_whitespace() {
            out.push(c);
            continue;
        }
        let prev_digit = i > 0 && chars[i - 1].is_ascii_digit();
        let next_digit = chars.get(i + 1).is_some_and(|n| n.is_ascii_digit());
        match c {
            '.' if prev_digit && next_digit => out.push(c),
            '-' if next_digit && (prev_digit || out.chars().last().is_none_or(|p| p.is_whitespace())) => {
                out.push(c)
            }
            '\'' | '’' => {}
            '$' | '€' | '£' | '¥' => {}
            _ => out.push(' '),
        }
    }
    out
}

/// When `token` is a scale word and the previous token is numeric,
/// returns the scaled replacement for that previous token.
fn scale_previous(tokens: &[String], token: &str) -> Option<String> {
    let factor = match token {
        "million" | "millions" => 1_000_000.0,
        "billion" | "billions" => 1_000_000_000.0,
        _ => return None,
    };
    let prev: f64 = tokens.last()?.parse().ok()?;
    Some(format_number(prev * factor))
}

/// Shortest faithful rendering of a numeric token; non-numbers pass
/// through untouched.
fn canonical_number(token: &str) -> String {
    // Hyphenated ranges ("2019-20") and similar survive as text.
    if let Ok(int) = token.parse::<i64>() {
        return int.to_string();
    }
    if let Ok(real) = token.parse::<f64>() {
        if real.is_finite() {
            return format_number(real);
        }
    }
    token.to_string()
}

fn format_number(value: f64) -> String {
    if value.fract() == 0.0 && value.abs() < 9e15 {
        format!("{}", value as i64)
    } else {
        format!("{value}")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn number_word_becomes_digit() {
        assert_eq!(normalize_denotation("seven"), "7");
        assert_eq!(normalize_denotation("Seven"), "7");
        assert_eq!(normalize_denotation("twenty"), "20");
    }

    #[test]
    fn digits_are_a_fixed_point() {
        assert_eq!(normalize_denotation("7"), "7");
        assert_eq!(normalize_denotation("20000000"), "20000000");
    }

    #[test]
    fn currency_scale_and_separators_agree() {
        assert_eq!(normalize_denotation("$20 millions"), "20000000");
        assert_eq!(normalize_denotation("20,000,000"), "20000000");
        assert!(denotation_equal("$20 millions", "20,000,000"));
        assert!(denotation_equal("$1.5 billion", "1,500,000,000"));
    }

    #[test]
    fn articles_and_punctuation_drop() {
        assert!(denotation_equal("The Seattle Mariners", "seattle mariners!"));
        assert!(denotation_equal("a draw", "Draw"));
        assert_eq!(normalize_denotation("O'Neill"), "oneill");
    }

    #[test]
    fn numeric_forms_collapse() {
        assert!(denotation_equal("7.0", "seven"));
        assert!(denotation_equal("-5", "-5.0"));
        assert_eq!(normalize_denotation("7.50"), "7.5");
    }

    #[test]
    fn ranges_and_seasons_survive() {
        assert_eq!(normalize_denotation("2019-20"), "2019-20");
        assert!(denotation_equal("the 2019-20 season", "2019-20 Season"));
    }

    #[test]
    fn commas_outside_numbers_separate_words() {
        assert!(denotation_equal("bread, milk", "bread milk"));
        assert!(!denotation_equal("12", "1,2")); // not a thousands separator
    }

    #[test]
    fn scale_word_without_number_passes_through() {
        assert_eq!(normalize_denotation("millions of fans"), "millions of fans");
    }
}

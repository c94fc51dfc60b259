/// Lowercases, splits on whitespace, and peels leading and trailing
/// punctuation off each word as single-character tokens. Inner punctuation
/// (`fire-fighters`, `3.5`) stays attached.
pub fn tokenize(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    for word in text.split_whitespace() {
        let word = word.to_lowercase();
        let chars: Vec<char> = word.chars().collect();
        let is_punct = |c: &char| !c.is_alphanumeric();
        let lead = chars.iter().take_while(|c| is_punct(c)).count();
        if lead == chars.len() {
            out.extend(chars.iter().map(char::to_string));
            continue;
        }
        let trail = chars.iter().rev().take_while(|c| is_punct(c)).count();
        out.extend(chars[..lead].iter().map(char::to_string));
        out.push(chars[lead..chars.len() - trail].iter().collect());
        out.extend(chars[chars.len() - trail..].iter().map(char::to_string));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toks(s: &str) -> Vec<String> {
        tokenize(s)
    }

    #[test]
    fn sentence_with_period() {
        assert_eq!(toks("The cat sat."), ["the", "cat", "sat", "."]);
    }

    #[test]
    fn empty_text() {
        assert!(toks("").is_empty());
        assert!(toks("   \n\t").is_empty());
    }

    #[test]
    fn inner_hyphen_kept_digits_kept() {
        assert_eq!(toks("Fire-fighters, 2010"), ["fire-fighters", ",", "2010"]);
    }

    #[test]
    fn quotes_and_pure_punctuation() {
        assert_eq!(toks("\"Hi!\" ..."), ["\"", "hi", "!", "\"", ".", ".", "."]);
    }
}

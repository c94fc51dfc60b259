use std::collections::HashSet;
use std::path::Path;

use crate::error::Result;

/// Default English stopword list (50 entries).
pub const DEFAULT_STOPWORDS: [&str; 50] = [
    "a", "about", "after", "all", "also", "an", "and", "are", "as", "at", "be", "been", "but",
    "by", "can", "could", "for", "from", "had", "has", "have", "he", "her", "his", "if", "in",
    "into", "is", "it", "its", "more", "not", "of", "on", "or", "said", "she", "that", "the",
    "their", "they", "this", "to", "was", "were", "which", "who", "will", "with", "would",
];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Stopwords(HashSet<String>);

impl Default for Stopwords {
    fn default() -> Self {
        Self(DEFAULT_STOPWORDS.iter().map(|s| s.to_string()).collect())
    }
}

impl Stopwords {
    pub fn empty() -> Self {
        Self(HashSet::new())
    }

    pub fn from_words<S: AsRef<str>>(words: &[S]) -> Self {
        Self(words.iter().map(|w| w.as_ref().to_lowercase()).collect())
    }

    /// Newline-separated tokens; blank lines and `#` comments are skipped.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Ok(Self(
            text.lines()
                .map(str::trim)
                .filter(|l| !l.is_empty() && !l.starts_with('#'))
                .map(str::to_lowercase)
                .collect(),
        ))
    }

    pub fn contains(&self, word: &str) -> bool {
        self.0.contains(word)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_list_has_fifty_unique_words() {
        assert_eq!(Stopwords::default().len(), 50);
    }

    #[test]
    fn load_skips_comments() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("stop.txt");
        std::fs::write(&p, "# list\nThe\n\nof\n").unwrap();
        let s = Stopwords::load(&p).unwrap();
        assert_eq!(s.len(), 2);
        assert!(s.contains("the"));
    }
}

//! Shared text utilities: sentence splitting and keyword tokenization.

/// Splits on a period followed by whitespace or end of text. Sentences are
/// trimmed, keep their terminal period, and empty pieces are dropped.
pub fn split_sentences(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut start = 0;
    let mut iter = text.char_indices().peekable();
    while let Some((i, c)) = iter.next() {
        if c == '.' {
            let at_boundary = match iter.peek() {
                None => true,
                Some((_, next)) => next.is_whitespace(),
            };
            if at_boundary {
                let end = i + c.len_utf8();
                push_trimmed(&mut out, &text[start..end]);
                start = end;
            }
        }
    }
    push_trimmed(&mut out, &text[start..]);
    out
}

fn push_trimmed(out: &mut Vec<String>, s: &str) {
    let t = s.trim();
    if !t.is_empty() {
        out.push(t.to_string());
    }
}

const STOPWORDS: &[&str] = &[
    "a", "about", "am", "an", "and", "any", "are", "as", "at", "be", "been", "by", "can", "could",
    "did", "do", "does", "for", "from", "give", "had", "has", "have", "how", "i", "in", "is", "it",
    "its", "me", "my", "of", "on", "or", "please", "s", "so", "tell", "that", "the", "their", "them",
    "there", "these", "this", "those", "to", "us", "was", "we", "were", "what", "whats", "when",
    "where", "which", "who", "why", "will", "with", "would", "you", "your",
];

pub fn is_stopword(w: &str) -> bool {
    STOPWORDS.binary_search(&w).is_ok()
}

/// Lowercase alphanumeric words.
pub fn words(text: &str) -> impl Iterator<Item = String> + '_ {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
        .map(|w| w.to_lowercase())
}

fn stem(w: &str) -> String {
    if w.len() > 3 && w.ends_with('s') && !w.ends_with("ss") {
        w[..w.len() - 1].to_string()
    } else {
        w.to_string()
    }
}

/// Content terms: lowercase words minus stopwords, with a plural `s`
/// stripped.
pub fn content_terms(text: &str) -> Vec<String> {
    words(text).filter(|w| !is_stopword(w)).map(|w| stem(&w)).collect()
}

/// Lowercase, punctuation removed, whitespace collapsed.
pub fn normalize_question(q: &str) -> String {
    words(q).collect::<Vec<_>>().join(" ")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stopwords_are_sorted() {
        let mut s = STOPWORDS.to_vec();
        s.sort();
        assert_eq!(s, STOPWORDS);
    }

    #[test]
    fn split_examples() {
        assert_eq!(split_sentences("A. B. C."), vec!["A.", "B.", "C."]);
        assert!(split_sentences("").is_empty());
        assert_eq!(split_sentences("Score is 0.812. Done"), vec!["Score is 0.812.", "Done"]);
        assert_eq!(split_sentences("  x.\n\n y.  "), vec!["x.", "y."]);
    }

    #[test]
    fn terms() {
        assert_eq!(content_terms("What are these output images?"), vec!["output", "image"]);
        assert_eq!(normalize_question("  What is   Explainable AI?? "), "what is explainable ai");
    }
}

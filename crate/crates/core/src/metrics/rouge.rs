use super::MetricError;

fn is_cjk(c: char) -> bool {
    matches!(c as u32,
        0x3040..=0x30FF      // kana
        | 0x3400..=0x4DBF    // CJK ext A
        | 0x4E00..=0x9FFF    // CJK unified
        | 0xAC00..=0xD7AF    // hangul
        | 0xF900..=0xFAFF    // compatibility ideographs
        | 0xFF00..=0xFFEF    // full-width forms
        | 0x3000..=0x303F    // CJK punctuation
        | 0x20000..=0x2FA1F)
}

/// Evaluation units for a pair of texts: characters (whitespace dropped)
/// when either side contains CJK or neither has inner whitespace, otherwise
/// whitespace-separated words.
pub fn rouge_units(pred: &str, gold: &str) -> (Vec<String>, Vec<String>) {
    let (pred, gold) = (pred.trim(), gold.trim());
    let any_cjk = pred.chars().chain(gold.chars()).any(is_cjk);
    let spaced = pred.contains(char::is_whitespace) || gold.contains(char::is_whitespace);
    let split = |s: &str| -> Vec<String> {
        if any_cjk || !spaced {
            s.chars().filter(|c| !c.is_whitespace()).map(String::from).collect()
        } else {
            s.split_whitespace().map(String::from).collect()
        }
    };
    (split(pred), split(gold))
}

pub fn lcs_len<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    if a.is_empty() || b.is_empty() {
        return 0;
    }
    let mut row = vec![0usize; b.len() + 1];
    for x in a {
        let mut diag = 0;
        for (j, y) in b.iter().enumerate() {
            let up = row[j + 1];
            row[j + 1] = if x == y { diag + 1 } else { up.max(row[j]) };
            diag = up;
        }
    }
    row[b.len()]
}

/// ROUGE-L F1 (β = 1): `2·LCS / (|pred| + |gold|)`.
pub fn rouge_l(pred: &str, gold: &str) -> Result<f64, MetricError> {
    let (p, g) = rouge_units(pred, gold);
    if p.is_empty() || g.is_empty() {
        return Err(MetricError::EmptyText);
    }
    let lcs = lcs_len(&p, &g);
    Ok(2.0 * lcs as f64 / (p.len() + g.len()) as f64)
}

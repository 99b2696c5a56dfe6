//! Answer extraction and scoring.

/// First maximal digit run of a generation, unless a word longer than three
/// letters comes before it.
pub fn extract_answer(raw_output: &str) -> Option<u64> {
    let text = raw_output.trim_start();
    let text = text.strip_prefix('$').unwrap_or(text);
    let mut letters = 0usize;
    for (i, c) in text.char_indices() {
        if c.is_ascii_digit() {
            let run = &text[i..];
            let end = run.find(|c: char| !c.is_ascii_digit()).unwrap_or(run.len());
            return run[..end].parse().ok();
        }
        if c.is_alphabetic() {
            letters += 1;
            if letters > 3 {
                return None;
            }
        } else {
            letters = 0;
        }
    }
    None
}

pub fn score(extracted: Option<u64>, gold: u64) -> bool {
    extracted == Some(gold)
}

/// Cuts a generation at the earliest stop sequence.
pub fn apply_stops<'a>(text: &'a str, stops: &[String]) -> &'a str {
    let cut = stops
        .iter()
        .filter(|s| !s.is_empty())
        .filter_map(|s| text.find(s.as_str()))
        .min()
        .unwrap_or(text.len());
    &text[..cut]
}

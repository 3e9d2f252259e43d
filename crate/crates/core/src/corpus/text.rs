/// Replacement token for masked query words.
pub const MASK_TOKEN: &str = "mask";

/// Lowercases and splits on every non-alphanumeric character. No stemming,
/// no stop words.
pub fn tokenize(text: &str) -> Vec<String> {
    text.to_lowercase()
        .split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_string)
        .collect()
}

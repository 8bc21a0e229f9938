//! Rule-based sentence splitting for model responses.
//!
//! Fact-check verdicts are per sentence, so the splitter defines the unit
//! everything downstream counts. It has to cope with the markdown-ish prose
//! chat models emit: bold headers, bullet lists, blank-line paragraphs,
//! decimals ("37.9C"), and common abbreviations. The rules:
//!
//! * lines are grouped into blocks; a blank line ends the current block
//! * a markdown marker line (`#`, `*`, `-`, `+`, `1.`) always starts a new
//!   block, so every bullet or header becomes its own sentence start
//! * inside a block, `.` `!` `?` followed by whitespace or end of block is
//!   a boundary, except after a known abbreviation or a bare list number
//! * a `.` between digits never splits, because the digit after it means
//!   the "followed by whitespace" rule already fails
//!
//! Joining the returned sentences with single spaces preserves every
//! non-whitespace character of the input in order, a property the tests
//! and the fuzz target both check.

/// Abbreviations whose trailing dot does not end a sentence. Compared
/// case-insensitively against the token ending at the candidate dot.
const ABBREVIATIONS: &[&str] = &[
    "e.g.", "i.e.", "etc.", "vs.", "cf.", "al.", "dr.", "mr.", "mrs.", "ms.", "prof.", "fig.",
    "figs.", "st.", "jr.", "sr.",
];

pub fn split_sentences(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut block = String::new();
    for line in text.lines() {
        let trimmed = line.trim();
        if trimmed.is_empty() {
            flush_block(&block, &mut out);
            block.clear();
        } else if is_marker_line(trimmed) {
            flush_block(&block, &mut out);
            block.clear();
            block.push_str(trimmed);
        } else {
            if !block.is_empty() {
                block.push(' ');
            }
            block.push_str(trimmed);
        }
    }
    flush_block(&block, &mut out);
    out
}

/// Header, bullet, horizontal-rule, or numbered-list line. Emphasis
/// markers (`**bold`) count too: models use bold lines as headers.
fn is_marker_line(trimmed: &str) -> bool {
    let mut chars = trimmed.chars();
    let first = match chars.next() {
        Some(c) => c,
        None => return false,
    };
    match first {
        '#' => true,
        '*' | '-' | '+' => matches!(chars.next(), Some(' ') | Some('*') | Some('-') | Some('+')),
        '0'..='9' => {
            let digits: String = trimmed.chars().take_while(|c| c.is_ascii_digit()).collect();
            if digits.len() > 3 {
                return false;
            }
            let rest = &trimmed[digits.len()..];
            let mut rc = rest.chars();
            matches!(rc.next(), Some('.') | Some(')')) && matches!(rc.next(), Some(' ') | None)
        }
        _ => false,
    }
}

fn flush_block(block: &str, out: &mut Vec<String>) {
    let mut start = 0usize;
    for (i, c) in block.char_indices() {
        if c != '.' && c != '!' && c != '?' {
            continue;
        }
        let after = i + c.len_utf8();
        match block[after..].chars().next() {
            None => {}
            Some(n) if n.is_whitespace() => {}
            Some(_) => continue,
        }
        if c == '.' && (is_abbreviation(block, i) || is_list_number(&block[start..i])) {
            continue;
        }
        push_trimmed(&block[start..after], out);
        start = after;
    }
    push_trimmed(&block[start..], out);
}

fn push_trimmed(piece: &str, out: &mut Vec<String>) {
    let piece = piece.trim();
    if !piece.is_empty() {
        out.push(piece.to_owned());
    }
}

/// Token ending at the dot at `dot_idx`, dots included, matches a known
/// abbreviation ("e.g." walks back over its interior dot).
fn is_abbreviation(block: &str, dot_idx: usize) -> bool {
    let head = &block[..dot_idx];
    let token_start = head
        .char_indices()
        .rev()
        .take_while(|(_, c)| c.is_alphanumeric() || *c == '.')
        .last()
        .map(|(i, _)| i)
        .unwrap_or(dot_idx);
    let token = &block[token_start..dot_idx + 1];
    ABBREVIATIONS.iter().any(|a| token.eq_ignore_ascii_case(a))
}

/// True when everything between the previous boundary and the dot is a
/// bare 1-3 digit number, i.e. the dot belongs to a list marker like "2."
/// and should stay glued to the item it introduces.
fn is_list_number(piece: &str) -> bool {
    let piece = piece.trim();
    !piece.is_empty() && piece.len() <= 3 && piece.chars().all(|c| c.is_ascii_digit())
}

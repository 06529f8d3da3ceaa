//! Recovering a C program from free-form model output.

const ACCEPTED_INFO: [&str; 3] = ["", "c", "cpp"];

const TYPE_KEYWORDS: [&str; 21] = [
    "int", "void", "char", "short", "long", "unsigned", "signed", "float", "double", "struct",
    "union", "enum", "static", "const", "extern", "typedef", "inline", "bool", "size_t", "uint8_t",
    "uint32_t",
];

/// Returns the first fenced block tagged empty, `c` or `cpp`; failing that,
/// the longest brace-balanced region that starts like C.
pub fn extract_code(text: &str) -> Option<String> {
    fenced(text).or_else(|| unfenced(text))
}

fn fence_info(line: &str) -> Option<&str> {
    line.trim_start()
        .strip_prefix("```")
        .map(|rest| rest.trim())
}

fn is_closing_fence(line: &str) -> bool {
    let t = line.trim();
    t.len() >= 3 && t.bytes().all(|b| b == b'`')
}

fn fenced(text: &str) -> Option<String> {
    let lines = line_offsets(text);
    let mut i = 0;
    while i < lines.len() {
        let (start, end) = lines[i];
        let Some(info) = fence_info(&text[start..end]) else {
            i += 1;
            continue;
        };
        let content_start = (end + 1).min(text.len());
        let close = (i + 1..lines.len()).find(|&j| is_closing_fence(&text[lines[j].0..lines[j].1]));
        let accepted = ACCEPTED_INFO.contains(&info.to_ascii_lowercase().as_str());
        match close {
            Some(j) => {
                if accepted {
                    // Content ends before the newline that precedes the fence.
                    let content_end = lines[j].0.saturating_sub(1).max(content_start);
                    return Some(text[content_start..content_end].to_string());
                }
                i = j + 1;
            }
            // An unterminated fence usually means the reply was cut short.
            None => return accepted.then(|| text[content_start..].to_string()),
        }
    }
    None
}

fn line_offsets(text: &str) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    let mut start = 0;
    for (i, b) in text.bytes().enumerate() {
        if b == b'\n' {
            out.push((start, i));
            start = i + 1;
        }
    }
    if start < text.len() {
        out.push((start, text.len()));
    }
    out
}

fn starts_like_c(line: &str) -> bool {
    let t = line.trim_start();
    if t.starts_with("#include") {
        return true;
    }
    let word: String = t
        .chars()
        .take_while(|c| c.is_ascii_alphanumeric() || *c == '_')
        .collect();
    TYPE_KEYWORDS.contains(&word.as_str()) && t[word.len()..].starts_with([' ', '\t', '*', '('])
}

fn ends_like_c(line: &str) -> bool {
    let t = line.trim_end();
    t.ends_with('}') || t.ends_with(';') || t.trim_start().starts_with('#')
}

/// Brace delta per line, ignoring braces inside literals and comments.
fn brace_deltas(lines: &[&str]) -> Vec<i64> {
    let mut in_block_comment = false;
    lines
        .iter()
        .map(|line| {
            let mut delta = 0i64;
            let mut chars = line.chars().peekable();
            let mut quote: Option<char> = None;
            while let Some(c) = chars.next() {
                if in_block_comment {
                    if c == '*' && chars.peek() == Some(&'/') {
                        chars.next();
                        in_block_comment = false;
                    }
                    continue;
                }
                if let Some(q) = quote {
                    match c {
                        '\\' => {
                            chars.next();
                        }
                        _ if c == q => quote = None,
                        _ => {}
                    }
                    continue;
                }
                match c {
                    '"' | '\'' => quote = Some(c),
                    '/' if chars.peek() == Some(&'/') => break,
                    '/' if chars.peek() == Some(&'*') => {
                        chars.next();
                        in_block_comment = true;
                    }
                    '{' => delta += 1,
                    '}' => delta -= 1,
                    _ => {}
                }
            }
            delta
        })
        .collect()
}

fn unfenced(text: &str) -> Option<String> {
    let lines: Vec<&str> = text.lines().collect();
    let deltas = brace_deltas(&lines);
    let mut best: Option<(usize, usize)> = None;
    for start in 0..lines.len() {
        if !starts_like_c(lines[start]) {
            continue;
        }
        let mut depth = 0i64;
        let mut last_good = None;
        for end in start..lines.len() {
            depth += deltas[end];
            if depth < 0 {
                break;
            }
            if depth == 0 && ends_like_c(lines[end]) {
                last_good = Some(end);
            }
        }
        if let Some(end) = last_good {
            let len = end - start + 1;
            if len >= 3 && best.is_none_or(|(s, e)| len > e - s + 1) {
                best = Some((start, end));
            }
        }
    }
    best.map(|(s, e)| {
        let mut code = lines[s..=e].join("\n");
        code.push('\n');
        code
    })
}

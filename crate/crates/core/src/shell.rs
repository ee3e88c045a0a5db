//! POSIX shell quoting.

fn is_safe(c: char) -> bool {
    c.is_ascii_alphanumeric() || "_-+=.,/:@%^".contains(c)
}

/// Single-quotes `s` for `sh` unless every character is already safe
/// unquoted. The empty string becomes `''`.
pub fn quote(s: &str) -> String {
    if !s.is_empty() && s.chars().all(is_safe) {
        return s.to_string();
    }
    let mut out = String::with_capacity(s.len() + 2);
    out.push('\'');
    for c in s.chars() {
        if c == '\'' {
            out.push_str("'\\''");
        } else {
            out.push(c);
        }
    }
    out.push('\'');
    out
}

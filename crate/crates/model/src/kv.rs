//! Key=value text files used by model configs, run configs, and manifests.
//! One `key=value` pair per line; `#` starts a comment; unknown keys are the
//! caller's problem to reject.

use std::collections::BTreeMap;

/// Parses `key=value` lines. Later duplicates override earlier ones.
pub fn parse(text: &str) -> Result<BTreeMap<String, String>, String> {
    let mut map = BTreeMap::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(format!("line {}: expected key=value, got {line:?}", lineno + 1));
        };
        map.insert(key.trim().to_string(), value.trim().to_string());
    }
    Ok(map)
}

pub fn render(pairs: &[(String, String)]) -> String {
    let mut out = String::new();
    for (k, v) in pairs {
        out.push_str(k);
        out.push('=');
        out.push_str(v);
        out.push('\n');
    }
    out
}

pub fn take<T: std::str::FromStr>(
    map: &mut BTreeMap<String, String>,
    key: &str,
) -> Result<Option<T>, String> {
    match map.remove(key) {
        None => Ok(None),
        Some(raw) => raw
            .parse::<T>()
            .map(Some)
            .map_err(|_| format!("key {key}: cannot parse {raw:?}")),
    }
}

pub fn take_bool(map: &mut BTreeMap<String, String>, key: &str) -> Result<Option<bool>, String> {
    match map.remove(key).as_deref() {
        None => Ok(None),
        Some("true") | Some("on") | Some("1") => Ok(Some(true)),
        Some("false") | Some("off") | Some("0") => Ok(Some(false)),
        Some(other) => Err(format!("key {key}: expected on/off, got {other:?}")),
    }
}

/// Errors when any keys remain unconsumed.
pub fn reject_unknown(map: &BTreeMap<String, String>, what: &str) -> Result<(), String> {
    if map.is_empty() {
        Ok(())
    } else {
        let keys: Vec<&str> = map.keys().map(String::as_str).collect();
        Err(format!("unknown {what} keys: {}", keys.join(", ")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_and_trims() {
        let map = parse("a = 1\n# comment\n\nb=two\n").unwrap();
        assert_eq!(map["a"], "1");
        assert_eq!(map["b"], "two");
    }

    #[test]
    fn rejects_malformed_line() {
        assert!(parse("just words\n").is_err());
    }
}

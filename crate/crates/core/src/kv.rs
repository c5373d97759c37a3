//! Flat `key=value` text used for run configs, logs, reports and checkpoint
//! manifests.

use std::str::FromStr;

use crate::error::{Error, Result};

/// Parses `key=value` lines. Blank lines and lines starting with `#` are
/// skipped; whitespace around keys and values is trimmed. Later duplicates
/// are kept, so callers see every assignment in file order.
pub fn parse_kv(text: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("line {}: expected key=value, got `{line}`", n + 1)))?;
        let k = k.trim();
        if k.is_empty() {
            return Err(Error::Config(format!("line {}: empty key", n + 1)));
        }
        out.push((k.to_string(), v.trim().to_string()));
    }
    Ok(out)
}

/// Splits a single `key=value` assignment as given on the command line.
pub fn parse_assignment(s: &str) -> Result<(String, String)> {
    let (k, v) = s
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("expected key=value, got `{s}`")))?;
    if k.trim().is_empty() {
        return Err(Error::Config(format!("empty key in `{s}`")));
    }
    Ok((k.trim().to_string(), v.trim().to_string()))
}

pub fn write_kv<K: AsRef<str>, V: AsRef<str>>(pairs: &[(K, V)]) -> String {
    let mut out = String::new();
    for (k, v) in pairs {
        out.push_str(k.as_ref());
        out.push('=');
        out.push_str(v.as_ref());
        out.push('\n');
    }
    out
}

/// A single log line: `k1=v1 k2=v2 ...`.
pub fn log_line<K: AsRef<str>, V: AsRef<str>>(pairs: &[(K, V)]) -> String {
    pairs
        .iter()
        .map(|(k, v)| format!("{}={}", k.as_ref(), v.as_ref()))
        .collect::<Vec<_>>()
        .join(" ")
}

/// Parses one space-separated log line back into pairs.
pub fn parse_log_line(line: &str) -> Vec<(String, String)> {
    line.split_whitespace()
        .filter_map(|tok| tok.split_once('='))
        .map(|(k, v)| (k.to_string(), v.to_string()))
        .collect()
}

pub fn lookup<'a>(pairs: &'a [(String, String)], key: &str) -> Option<&'a str> {
    pairs.iter().rev().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
}

pub fn parse_value<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("{key}: cannot parse `{value}`")))
}

pub fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(Error::Config(format!("{key}: expected true or false, got `{value}`"))),
    }
}

/// Comma-separated list; the empty string is the empty list.
pub fn parse_list<T: FromStr>(key: &str, value: &str) -> Result<Vec<T>> {
    if value.trim().is_empty() {
        return Ok(Vec::new());
    }
    value.split(',').map(|p| parse_value(key, p.trim())).collect()
}

pub fn join_list<T: ToString>(items: &[T]) -> String {
    items.iter().map(T::to_string).collect::<Vec<_>>().join(",")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_comments_and_whitespace() {
        let kv = parse_kv("# run\n a = 1 \n\nb=x=y\n").unwrap();
        assert_eq!(kv, vec![("a".into(), "1".into()), ("b".into(), "x=y".into())]);
        assert!(parse_kv("novalue\n").is_err());
        assert!(parse_kv("=3\n").is_err());
    }

    #[test]
    fn roundtrip() {
        let pairs = vec![("x.y".to_string(), "3".to_string()), ("z".into(), "".into())];
        assert_eq!(parse_kv(&write_kv(&pairs)).unwrap(), pairs);
    }

    #[test]
    fn log_lines() {
        let line = log_line(&[("event", "train"), ("step", "3")]);
        assert_eq!(line, "event=train step=3");
        let back = parse_log_line(&line);
        assert_eq!(lookup(&back, "step"), Some("3"));
    }

    #[test]
    fn lists() {
        assert_eq!(parse_list::<usize>("k", "1, 5,10").unwrap(), vec![1, 5, 10]);
        assert!(parse_list::<usize>("k", "").unwrap().is_empty());
        assert!(parse_list::<usize>("k", "1,x").is_err());
        assert_eq!(join_list(&[1, 2]), "1,2");
    }
}

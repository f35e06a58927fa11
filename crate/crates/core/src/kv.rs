//! Line-based `key = value` files with `#` comments.

use std::path::Path;

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Entry {
    pub line: usize,
    pub key: String,
    pub value: String,
}

pub fn parse(text: &str, origin: &Path) -> Result<Vec<Entry>> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let l = raw.split('#').next().unwrap_or("").trim();
        if l.is_empty() {
            continue;
        }
        let (k, v) = l.split_once('=').ok_or_else(|| Error::Parse {
            path: origin.to_path_buf(),
            line: i + 1,
            msg: format!("expected `key = value`, got `{l}`"),
        })?;
        let key = k.trim();
        if key.is_empty() {
            return Err(Error::Parse {
                path: origin.to_path_buf(),
                line: i + 1,
                msg: "empty key".into(),
            });
        }
        out.push(Entry {
            line: i + 1,
            key: key.to_string(),
            value: v.trim().to_string(),
        });
    }
    Ok(out)
}

pub fn parse_value<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("cannot parse `{value}` for key `{key}`")))
}

pub fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "on" | "yes" | "1" => Ok(true),
        "false" | "off" | "no" | "0" => Ok(false),
        _ => Err(Error::Config(format!("cannot parse `{value}` for key `{key}` as a boolean"))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn comments_and_blank_lines() {
        let e = parse("# header\n\nlr = 0.1  # trailing\nbatch=64\n", Path::new("f")).unwrap();
        assert_eq!(e.len(), 2);
        assert_eq!((e[0].line, e[0].key.as_str(), e[0].value.as_str()), (3, "lr", "0.1"));
        assert_eq!(e[1].value, "64");
        assert!(parse("novalue\n", Path::new("f")).is_err());
        assert!(parse(" = 3\n", Path::new("f")).is_err());
    }

    #[test]
    fn typed_values() {
        assert_eq!(parse_value::<usize>("b", "64").unwrap(), 64);
        let e = parse_value::<usize>("batch", "x").unwrap_err();
        assert!(e.to_string().contains("batch"));
        assert!(parse_bool("w", "on").unwrap());
        assert!(parse_bool("w", "maybe").is_err());
    }
}

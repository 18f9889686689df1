//! Sectioned key-value configuration files. Section names match the
//! subcommands, keys match their long flags, and anything unrecognized is
//! an error so misspelled settings cannot pass silently. Command-line flags
//! override file values.

use std::collections::BTreeMap;

/// Allowed keys per section; section names match the subcommand names.
const SECTIONS: &[(&str, &[&str])] = &[
    (
        "dp-noise",
        &["env", "algo", "sigma", "lambda", "gamma", "alpha", "eta", "iters", "trials", "seed", "out"],
    ),
    ("error-decay", &["alpha", "delta", "K", "out"]),
    ("variance-limit", &["alpha", "k", "samples", "seed", "out"]),
    (
        "nchain-eval",
        &["algo", "alpha", "eta", "lambda", "slip", "blocks", "block-size", "trials", "seed", "out"],
    ),
    (
        "frozenlake-control",
        &[
            "algo", "alpha", "eta", "lambda", "N", "beta", "steps", "trials", "seed", "out",
            "policy-period", "buffer-capacity",
        ],
    ),
    ("verify", &["suite", "seed"]),
];

/// Parsed configuration file: per-section key-value maps.
#[derive(Debug, Clone, Default)]
pub struct ConfigFile {
    sections: BTreeMap<String, BTreeMap<String, String>>,
}

impl ConfigFile {
    /// The key-value map for one section, if present in the file.
    pub fn section(&self, name: &str) -> Option<&BTreeMap<String, String>> {
        self.sections.get(name)
    }
}

fn allowed_keys(section: &str) -> Option<&'static [&'static str]> {
    SECTIONS.iter().find(|(name, _)| *name == section).map(|(_, keys)| *keys)
}

/// Parse and validate a configuration document. Returns a field-level
/// message on the first problem found.
pub fn parse_config(text: &str) -> Result<ConfigFile, String> {
    let mut sections: BTreeMap<String, BTreeMap<String, String>> = BTreeMap::new();
    let mut current: Option<(String, &'static [&'static str])> = None;
    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') || line.starts_with(';') {
            continue;
        }
        if let Some(inner) = line.strip_prefix('[') {
            let name = inner
                .strip_suffix(']')
                .ok_or_else(|| format!("line {line_no}: unterminated section header {line:?}"))?
                .trim();
            let keys = allowed_keys(name).ok_or_else(|| {
                format!(
                    "line {line_no}: unknown section {name:?}; expected one of {}",
                    SECTIONS.iter().map(|(n, _)| *n).collect::<Vec<_>>().join(", ")
                )
            })?;
            if sections.contains_key(name) {
                return Err(format!("line {line_no}: duplicate section {name:?}"));
            }
            sections.insert(name.to_string(), BTreeMap::new());
            current = Some((name.to_string(), keys));
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| format!("line {line_no}: expected `key = value`, found {line:?}"))?;
        let key = key.trim();
        let value = value.trim();
        let (section_name, keys) = current
            .as_ref()
            .ok_or_else(|| format!("line {line_no}: key {key:?} appears before any section"))?;
        if !keys.contains(&key) {
            return Err(format!(
                "line {line_no}: unknown key {key:?} in section {section_name:?}; allowed: {}",
                keys.join(", ")
            ));
        }
        let map = sections.get_mut(section_name).expect("section was inserted");
        if map.insert(key.to_string(), value.to_string()).is_some() {
            return Err(format!(
                "line {line_no}: duplicate key {key:?} in section {section_name:?}"
            ));
        }
    }
    Ok(ConfigFile { sections })
}

/// Load a configuration file from disk.
pub fn load_config(path: &std::path::Path) -> Result<ConfigFile, String> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| format!("cannot read config {}: {e}", path.display()))?;
    parse_config(&text)
}

/// Parse a comma-separated list of reals, e.g. `0,0.5,0.99`.
pub fn parse_f64_list(raw: &str, what: &str) -> Result<Vec<f64>, String> {
    let mut out = Vec::new();
    for piece in raw.split(',') {
        let piece = piece.trim();
        if piece.is_empty() {
            return Err(format!("{what}: empty entry in list {raw:?}"));
        }
        let v: f64 = piece.parse().map_err(|_| format!("{what}: not a number: {piece:?}"))?;
        if !v.is_finite() {
            return Err(format!("{what}: entries must be finite, got {piece:?}"));
        }
        out.push(v);
    }
    if out.is_empty() {
        return Err(format!("{what}: list must not be empty"));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_sections_comments_and_whitespace() {
        let text = "\n# comment\n[dp-noise]\nalgo = grape\nalpha = 0.9, 0.99\n\n; another\n[verify]\nsuite = lemmas\n";
        let cfg = parse_config(text).unwrap();
        let dp = cfg.section("dp-noise").unwrap();
        assert_eq!(dp.get("algo").map(String::as_str), Some("grape"));
        assert_eq!(dp.get("alpha").map(String::as_str), Some("0.9, 0.99"));
        assert!(cfg.section("verify").is_some());
        assert!(cfg.section("error-decay").is_none());
    }

    #[test]
    fn unknown_sections_and_keys_are_errors() {
        assert!(parse_config("[nonsense]\n").unwrap_err().contains("unknown section"));
        assert!(parse_config("[dp-noise]\nbad = 1\n").unwrap_err().contains("unknown key"));
        assert!(parse_config("algo = grape\n").unwrap_err().contains("before any section"));
        assert!(parse_config("[dp-noise]\nalgo grape\n").unwrap_err().contains("key = value"));
        assert!(parse_config("[dp-noise]\nalgo = a\nalgo = b\n")
            .unwrap_err()
            .contains("duplicate key"));
        assert!(parse_config("[verify]\n[verify]\n").unwrap_err().contains("duplicate section"));
    }

    #[test]
    fn list_parsing_validates_entries() {
        assert_eq!(parse_f64_list("0,0.5, 1", "alpha").unwrap(), vec![0.0, 0.5, 1.0]);
        assert!(parse_f64_list("", "alpha").is_err());
        assert!(parse_f64_list("0,,1", "alpha").is_err());
        assert!(parse_f64_list("0,x", "alpha").is_err());
        assert!(parse_f64_list("inf", "alpha").is_err());
    }
}

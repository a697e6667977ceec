use serde_json::Value;

/// Splice the contents of `--config <file>` in as flags right after the
/// subcommand, so that explicit flags later on the line override them.
pub fn expand_config(args: Vec<String>, subcommands: &[String]) -> Result<Vec<String>, String> {
    let Some(pos) = args.iter().position(|a| a == "--config" || a.starts_with("--config=")) else {
        return Ok(args);
    };
    let (path, consumed) = match args[pos].strip_prefix("--config=") {
        Some(p) => (p.to_string(), 1),
        None => (
            args.get(pos + 1).cloned().ok_or("--config needs a file path")?,
            2,
        ),
    };
    let text = std::fs::read_to_string(&path).map_err(|e| format!("cannot read config {path}: {e}"))?;
    let flags = config_flags(&text).map_err(|e| format!("config {path}: {e}"))?;
    let mut out: Vec<String> = args[..pos].to_vec();
    out.extend(args[pos + consumed..].iter().cloned());
    let sub = out
        .iter()
        .position(|a| subcommands.contains(a))
        .map(|i| i + 1)
        .ok_or("--config given without a subcommand")?;
    out.splice(sub..sub, flags);
    Ok(out)
}

/// Turn `{"per-class": 200, "resume": true}` into `--per-class 200 --resume`.
pub fn config_flags(text: &str) -> Result<Vec<String>, String> {
    let v: Value = serde_json::from_str(text).map_err(|e| e.to_string())?;
    let Value::Object(map) = v else {
        return Err("expected a JSON object".into());
    };
    let mut flags = Vec::new();
    for (key, value) in map {
        let flag = format!("--{}", key.replace('_', "-"));
        match value {
            Value::Bool(true) => flags.push(flag),
            Value::Bool(false) | Value::Null => {}
            Value::Array(items) => {
                for item in items {
                    flags.push(flag.clone());
                    flags.push(scalar(&item)?);
                }
            }
            other => {
                flags.push(flag);
                flags.push(scalar(&other)?);
            }
        }
    }
    Ok(flags)
}

fn scalar(v: &Value) -> Result<String, String> {
    match v {
        Value::String(s) => Ok(s.clone()),
        Value::Number(n) => Ok(n.to_string()),
        Value::Bool(b) => Ok(b.to_string()),
        _ => Err(format!("unsupported value {v}")),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flags_from_object() {
        let f = config_flags(r#"{"per_class": 20, "resume": true, "stream": false, "alias": ["a=daisy", "b=crocus"]}"#).unwrap();
        assert_eq!(f, ["--alias", "a=daisy", "--alias", "b=crocus", "--per-class", "20", "--resume"]);
        assert!(config_flags("[1]").is_err());
    }

    #[test]
    fn explicit_flags_come_last() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.json");
        std::fs::write(&path, r#"{"per-class": 5}"#).unwrap();
        let args = ["cellbloom", "--seed", "3", "synth-data", "--config", path.to_str().unwrap(), "--per-class", "9"]
            .map(String::from)
            .to_vec();
        let out = expand_config(args, &["synth-data".to_string()]).unwrap();
        assert_eq!(out, ["cellbloom", "--seed", "3", "synth-data", "--per-class", "5", "--per-class", "9"]);
    }
}

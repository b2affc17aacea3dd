//! Run manifests: every resolved parameter of a run, written next to its
//! outputs. Keys starting with `arg.` are the command-line flags and are
//! enough to replay the run.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::CliError;

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct RunManifest {
    entries: Vec<(String, String)>,
}

impl RunManifest {
    pub fn new(subcommand: &str) -> Self {
        let mut m = RunManifest::default();
        m.push("subcommand", subcommand);
        m.push("version", env!("CARGO_PKG_VERSION"));
        m
    }

    pub fn push(&mut self, key: &str, value: impl ToString) {
        let value = value.to_string();
        assert!(
            !key.contains(['\t', '\n']) && !value.contains(['\t', '\n']),
            "manifest fields must not contain tabs or newlines"
        );
        self.entries.push((key.to_string(), value));
    }

    /// Records a flag; `None` values are omitted.
    pub fn arg(&mut self, flag: &str, value: Option<impl ToString>) {
        if let Some(v) = value {
            self.push(&format!("arg.{flag}"), v);
        }
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }

    pub fn to_tsv(&self) -> String {
        let mut s = String::from("#key\tvalue\n");
        for (k, v) in &self.entries {
            let _ = writeln!(s, "{k}\t{v}");
        }
        s
    }

    pub fn read(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
        let mut m = RunManifest::default();
        for (i, line) in text.lines().enumerate() {
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line.split_once('\t').ok_or_else(|| {
                CliError::Data(format!(
                    "{}:{}: expected key<TAB>value",
                    path.display(),
                    i + 1
                ))
            })?;
            m.entries.push((k.to_string(), v.to_string()));
        }
        if m.get("subcommand").is_none() {
            return Err(CliError::Data(format!(
                "{}: no subcommand recorded",
                path.display()
            )));
        }
        Ok(m)
    }

    /// Command-line arguments that reproduce the run, with `--out` replaced
    /// when `out` is given.
    pub fn replay_args(&self, out: Option<&str>) -> Vec<String> {
        let mut argv = vec![
            "beamscan".to_string(),
            self.get("subcommand").unwrap_or_default().to_string(),
        ];
        for (k, v) in &self.entries {
            let Some(flag) = k.strip_prefix("arg.") else {
                continue;
            };
            if flag == "out" && out.is_some() {
                continue;
            }
            match v.as_str() {
                "true" => argv.push(format!("--{flag}")),
                "false" => {}
                _ => {
                    argv.push(format!("--{flag}"));
                    argv.push(v.clone());
                }
            }
        }
        if let Some(o) = out {
            argv.push("--out".into());
            argv.push(o.into());
        }
        argv
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_and_replay() {
        let mut m = RunManifest::new("map");
        m.arg("in", Some("d.tsv"));
        m.arg("seed", Some(7));
        m.arg("p1", None::<f64>);
        m.arg("quiet", Some(true));
        m.arg("drop-loci", Some(false));
        m.push("wall_clock_seconds", 1.5);
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.tsv");
        fs::write(&p, m.to_tsv()).unwrap();
        let back = RunManifest::read(&p).unwrap();
        assert_eq!(back, m);
        assert_eq!(
            back.replay_args(Some("x")),
            ["beamscan", "map", "--in", "d.tsv", "--seed", "7", "--quiet", "--out", "x"]
        );
    }
}

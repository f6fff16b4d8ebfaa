//! `key = value` experiment configs and result tables.

use std::collections::BTreeMap;
use std::fmt;
use std::io::Write;
use std::str::FromStr;

use serde_json::{json, Map, Value};

use crate::error::{AcxError, Result};
use crate::geometry::{GridBox, Point};
use crate::structure::StructureSpec;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// Keys every subcommand understands.
pub const SHARED_KEYS: &[&str] = &["lower", "upper", "resolution", "structure", "seed", "tol", "jets"];

/// A resolved experiment config. Keys outside the allowed set are rejected.
#[derive(Clone, Debug, PartialEq)]
pub struct Config {
    command: String,
    allowed: Vec<String>,
    entries: BTreeMap<String, String>,
}

impl Config {
    pub fn new(command: &str, extra_keys: &[&str]) -> Self {
        let allowed = SHARED_KEYS.iter().chain(extra_keys).map(|s| s.to_string()).collect();
        Config { command: command.into(), allowed, entries: BTreeMap::new() }
    }

    /// Reads `key = value` lines; `#` starts a comment.
    pub fn parse(command: &str, extra_keys: &[&str], src: &str) -> Result<Self> {
        let mut c = Config::new(command, extra_keys);
        for (n, line) in src.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| AcxError::Config(format!("line {}: expected key = value", n + 1)))?;
            let k = k.trim();
            if c.entries.contains_key(k) {
                return Err(AcxError::Config(format!("line {}: duplicate key `{k}`", n + 1)));
            }
            c.set(k, v.trim())?;
        }
        Ok(c)
    }

    pub fn command(&self) -> &str {
        &self.command
    }

    /// Sets a key, overriding any earlier value.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        if !self.allowed.iter().any(|a| a == key) {
            return Err(AcxError::Config(format!(
                "unknown key `{key}` for `{}` (allowed: {})",
                self.command,
                self.allowed.join(", ")
            )));
        }
        self.entries.insert(key.into(), value.into());
        Ok(())
    }

    /// Fills `key` only when it is unset, so resolved defaults show in the header.
    pub fn default(&mut self, key: &str, value: impl fmt::Display) -> Result<()> {
        if !self.entries.contains_key(key) {
            self.set(key, &value.to_string())?;
        }
        Ok(())
    }

    pub fn raw(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(String::as_str)
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<Option<T>> {
        self.raw(key)
            .map(|v| v.parse().map_err(|_| AcxError::Config(format!("bad value `{v}` for `{key}`"))))
            .transpose()
    }

    pub fn get_or<T: FromStr>(&self, key: &str, default: T) -> Result<T> {
        Ok(self.get(key)?.unwrap_or(default))
    }

    /// Comma-separated list.
    pub fn list<T: FromStr>(&self, key: &str) -> Result<Option<Vec<T>>> {
        self.raw(key)
            .map(|v| {
                v.split(',')
                    .map(|s| {
                        s.trim()
                            .parse()
                            .map_err(|_| AcxError::Config(format!("bad list entry `{s}` for `{key}`")))
                    })
                    .collect()
            })
            .transpose()
    }

    pub fn point(&self, key: &str) -> Result<Option<Point<f64>>> {
        match self.list::<f64>(key)? {
            None => Ok(None),
            Some(v) if v.len() == 4 => Ok(Some(Point([v[0], v[1], v[2], v[3]]))),
            Some(v) => Err(AcxError::Config(format!("`{key}` needs 4 coordinates, got {}", v.len()))),
        }
    }

    /// The working box from `lower`, `upper` and `resolution`.
    pub fn grid_box(&self) -> Result<GridBox<f64>> {
        let lower = self.point("lower")?.unwrap_or(Point([-1.0; 4]));
        let upper = self.point("upper")?.unwrap_or(Point([1.0; 4]));
        let n = self.get_or("resolution", 9usize)?;
        GridBox::new(lower, upper, [n; 4])
    }

    pub fn structure(&self) -> Result<StructureSpec> {
        self.raw("structure").unwrap_or("jst").parse()
    }

    pub fn seed(&self) -> Result<u64> {
        self.get_or("seed", 0)
    }

    pub fn entries(&self) -> impl Iterator<Item = (&str, &str)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v.as_str()))
    }

    /// Header lines echoing the library version and every resolved key.
    pub fn header(&self) -> Vec<String> {
        let mut out = vec![format!("acx {VERSION} {}", self.command)];
        out.extend(self.entries.iter().map(|(k, v)| format!("{k} = {v}")));
        out
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Format {
    Csv,
    Json,
}

impl FromStr for Format {
    type Err = AcxError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(Format::Csv),
            "json" => Ok(Format::Json),
            _ => Err(AcxError::Config(format!("unknown format `{s}` (csv or json)"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Cell {
    Num(f64),
    Int(i64),
    Bool(bool),
    Text(String),
}

impl From<f64> for Cell {
    fn from(x: f64) -> Self {
        Cell::Num(x)
    }
}
impl From<usize> for Cell {
    fn from(x: usize) -> Self {
        Cell::Int(x as i64)
    }
}
impl From<i64> for Cell {
    fn from(x: i64) -> Self {
        Cell::Int(x)
    }
}
impl From<bool> for Cell {
    fn from(x: bool) -> Self {
        Cell::Bool(x)
    }
}
impl From<&str> for Cell {
    fn from(x: &str) -> Self {
        Cell::Text(x.into())
    }
}
impl From<String> for Cell {
    fn from(x: String) -> Self {
        Cell::Text(x)
    }
}

impl fmt::Display for Cell {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Cell::Num(x) if x.is_finite() => write!(f, "{x:.16e}"),
            Cell::Num(x) => write!(f, "{x}"),
            Cell::Int(i) => write!(f, "{i}"),
            Cell::Bool(b) => write!(f, "{b}"),
            Cell::Text(s) => write!(f, "{s}"),
        }
    }
}

impl Cell {
    fn json(&self) -> Value {
        match self {
            // 17 significant digits round-trip through the text
            Cell::Num(x) if x.is_finite() => format!("{x:.16e}").parse::<f64>().map(Value::from).unwrap(),
            Cell::Num(x) => Value::from(x.to_string()),
            Cell::Int(i) => Value::from(*i),
            Cell::Bool(b) => Value::from(*b),
            Cell::Text(s) => Value::from(s.as_str()),
        }
    }
}

/// Rows under a fixed column schema, followed by named certificates.
#[derive(Clone, Debug, PartialEq)]
pub struct ResultTable {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<Cell>>,
    pub certificates: Vec<(String, Cell)>,
}

impl ResultTable {
    pub fn new(columns: &[&str]) -> Self {
        ResultTable { columns: columns.iter().map(|s| s.to_string()).collect(), rows: Vec::new(), certificates: Vec::new() }
    }

    pub fn certify(&mut self, name: &str, value: impl Into<Cell>) {
        self.certificates.push((name.into(), value.into()));
    }

    pub fn push(&mut self, row: Vec<Cell>) {
        assert_eq!(row.len(), self.columns.len(), "row width does not match the schema");
        self.rows.push(row);
    }

    pub fn column(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c == name)
    }

    pub fn write(&self, config: &Config, format: Format, out: &mut dyn Write) -> Result<()> {
        match format {
            Format::Csv => {
                for line in config.header() {
                    writeln!(out, "# {line}")?;
                }
                let mut w = csv::Writer::from_writer(&mut *out);
                w.write_record(&self.columns).map_err(csv_err)?;
                for row in &self.rows {
                    w.write_record(row.iter().map(|c| c.to_string())).map_err(csv_err)?;
                }
                w.flush()?;
                drop(w);
                for (k, v) in &self.certificates {
                    writeln!(out, "# certificate {k} = {v}")?;
                }
            }
            Format::Json => {
                let cfg: Map<String, Value> =
                    config.entries().map(|(k, v)| (k.to_string(), Value::from(v))).collect();
                writeln!(out, "{}", json!({"acx": VERSION, "command": config.command(), "config": cfg}))?;
                for row in &self.rows {
                    let obj: Map<String, Value> =
                        self.columns.iter().cloned().zip(row.iter().map(Cell::json)).collect();
                    writeln!(out, "{}", Value::Object(obj))?;
                }
                let certs: Map<String, Value> = self.certificates.iter().map(|(k, v)| (k.clone(), v.json())).collect();
                writeln!(out, "{}", json!({ "certificates": certs }))?;
            }
        }
        Ok(())
    }

    pub fn to_string(&self, config: &Config, format: Format) -> String {
        let mut buf = Vec::new();
        self.write(config, format, &mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("utf-8 output")
    }
}

fn csv_err(e: csv::Error) -> AcxError {
    AcxError::Config(format!("csv: {e}"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_and_rejects_unknown_keys() {
        let c = Config::parse("tj", &["points"], "# comment\nresolution = 5\nstructure = ja:x1*x2 # inline\npoints=3\n")
            .unwrap();
        assert_eq!(c.get::<usize>("resolution").unwrap(), Some(5));
        assert_eq!(c.structure().unwrap(), StructureSpec::Ja("x1*x2".into()));
        assert_eq!(c.grid_box().unwrap().resolution, [5; 4]);
        assert!(Config::parse("tj", &[], "bogus = 1").is_err());
        assert!(Config::parse("tj", &[], "seed = 1\nseed = 2").is_err());
        assert!(Config::parse("tj", &[], "seed 1").is_err());
        assert!(c.get::<f64>("structure").is_err());
    }

    #[test]
    fn header_echoes_the_resolved_config() {
        let mut c = Config::new("pointmass", &["k_list"]);
        c.default("k_list", "4,8").unwrap();
        c.default("k_list", "16").unwrap();
        assert_eq!(c.list::<u32>("k_list").unwrap(), Some(vec![4, 8]));
        assert_eq!(c.header(), vec![format!("acx {VERSION} pointmass"), "k_list = 4,8".to_string()]);
    }

    #[test]
    fn numbers_keep_seventeen_digits() {
        let c = Config::new("x", &[]);
        let mut t = ResultTable::new(&["name", "value"]);
        t.push(vec!["a,b".into(), (1.0f64 / 3.0).into()]);
        t.certify("ok", true);
        let csv = t.to_string(&c, Format::Csv);
        assert!(csv.contains("\"a,b\",3.3333333333333331e-1"), "{csv}");
        let js = t.to_string(&c, Format::Json);
        let row: Value = serde_json::from_str(js.lines().nth(1).unwrap()).unwrap();
        assert_eq!(row["value"].as_f64().unwrap(), 1.0 / 3.0);
        assert!(csv.ends_with("# certificate ok = true\n"));
        assert!(js.lines().last().unwrap().contains("\"certificates\":{\"ok\":true}"));
        assert_eq!(t.to_string(&c, Format::Csv), csv);
    }
}

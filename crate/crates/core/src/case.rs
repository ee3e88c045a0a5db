//! Simulation cases: one parametrized command writing into its own directory.
//!
//! A [`CaseSpec`] turns an ordered parameter list into command-line
//! arguments (`timestep = 0.005` becomes `--timestep=0.005`, a flag-only
//! `tensile_correction` becomes `--tensile-correction`), derives its name
//! from the last component of its root directory and offers the selection
//! helpers used by post-processing (`filter_cases`, `filter_by_name`,
//! `match_pattern`).

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fnmatch::Pattern;
use crate::shell;

/// Placeholder substituted with the case output directory.
pub const OUTPUT_DIR_PLACEHOLDER: &str = "$output_dir";

/// Flag appended when the base command does not mention [`OUTPUT_DIR_PLACEHOLDER`].
pub const DEFAULT_OUTPUT_FLAG: &str = "--output-dir=$output_dir";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CaseError {
    #[error("case root `{0}` has no final path component to use as a name")]
    NoName(PathBuf),
    #[error("invalid parameter name `{0}`: expected [A-Za-z_][A-Za-z0-9_]*")]
    InvalidKey(String),
    #[error("parameter `{0}` given more than once")]
    DuplicateKey(String),
    #[error("parameter `{key}` is not a finite number ({value})")]
    NonFinite { key: String, value: f64 },
    #[error("n_core and n_thread must be at least 1 (got n_core={n_core}, n_thread={n_thread})")]
    InvalidJobInfo { n_core: u32, n_thread: u32 },
    #[error("case `{case}` has no parameter `{key}`")]
    UnknownParameter { case: String, key: String },
    #[error("no case named `{0}`")]
    UnknownCase(String),
}

/// A parameter value.
#[derive(Debug, Clone, PartialEq)]
pub enum ParamValue {
    /// Decimal number, rendered in shortest round-trip form.
    Number(f64),
    /// Rendered verbatim (shell-quoted on the command line when needed).
    Text(String),
    /// A presence-only switch: `--key` with no value.
    FlagOnly,
}

impl ParamValue {
    /// Canonical rendering used on command lines and in labels. `None` for
    /// [`ParamValue::FlagOnly`].
    pub fn render(&self) -> Option<String> {
        match self {
            ParamValue::Number(v) => Some(render_number(*v)),
            ParamValue::Text(s) => Some(s.clone()),
            ParamValue::FlagOnly => None,
        }
    }

    /// Equality on canonical renderings. Values of different kinds never match.
    pub fn same_as(&self, other: &ParamValue) -> bool {
        match (self, other) {
            (ParamValue::Number(a), ParamValue::Number(b)) => render_number(*a) == render_number(*b),
            (ParamValue::Text(a), ParamValue::Text(b)) => a == b,
            (ParamValue::FlagOnly, ParamValue::FlagOnly) => true,
            _ => false,
        }
    }
}

impl fmt::Display for ParamValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.render() {
            Some(s) => f.write_str(&s),
            None => f.write_str("<flag>"),
        }
    }
}

impl From<f64> for ParamValue {
    fn from(v: f64) -> Self {
        ParamValue::Number(v)
    }
}

impl From<i64> for ParamValue {
    fn from(v: i64) -> Self {
        ParamValue::Number(v as f64)
    }
}

impl From<i32> for ParamValue {
    fn from(v: i32) -> Self {
        ParamValue::Number(f64::from(v))
    }
}

impl From<&str> for ParamValue {
    fn from(v: &str) -> Self {
        ParamValue::Text(v.to_string())
    }
}

impl From<String> for ParamValue {
    fn from(v: String) -> Self {
        ParamValue::Text(v)
    }
}

/// Shortest round-trip decimal; positional notation for magnitudes in
/// `[1e-4, 1e15)` and zero, scientific notation otherwise.
pub fn render_number(v: f64) -> String {
    if v == 0.0 {
        return "0".to_string();
    }
    let mag = v.abs();
    if (1e-4..1e15).contains(&mag) {
        format!("{v}")
    } else {
        format!("{v:e}")
    }
}

pub(crate) fn is_identifier(key: &str) -> bool {
    let mut chars = key.chars();
    match chars.next() {
        Some(c) if c.is_ascii_alphabetic() || c == '_' => {}
        _ => return false,
    }
    chars.all(|c| c.is_ascii_alphanumeric() || c == '_')
}

/// Cores reserved on a worker and threads hinted to the child process.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct JobInfo {
    pub n_core: u32,
    pub n_thread: u32,
}

impl JobInfo {
    pub fn new(n_core: u32, n_thread: u32) -> Result<Self, CaseError> {
        if n_core == 0 || n_thread == 0 {
            return Err(CaseError::InvalidJobInfo { n_core, n_thread });
        }
        Ok(Self { n_core, n_thread })
    }
}

impl Default for JobInfo {
    fn default() -> Self {
        Self { n_core: 1, n_thread: 1 }
    }
}

/// Display overrides for parameter names, e.g. `alpha` → `$\alpha$`.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct LabelMap {
    overrides: HashMap<String, String>,
}

impl LabelMap {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with(mut self, key: impl Into<String>, label: impl Into<String>) -> Self {
        self.overrides.insert(key.into(), label.into());
        self
    }

    pub fn insert(&mut self, key: impl Into<String>, label: impl Into<String>) {
        self.overrides.insert(key.into(), label.into());
    }

    /// The override for `key`, or `key` itself.
    pub fn render_parameter<'a>(&'a self, key: &'a str) -> &'a str {
        self.overrides.get(key).map(String::as_str).unwrap_or(key)
    }
}

impl<K: Into<String>, V: Into<String>> FromIterator<(K, V)> for LabelMap {
    fn from_iter<T: IntoIterator<Item = (K, V)>>(iter: T) -> Self {
        Self {
            overrides: iter.into_iter().map(|(k, v)| (k.into(), v.into())).collect(),
        }
    }
}

/// One simulation invocation.
#[derive(Debug, Clone, PartialEq)]
pub struct CaseSpec {
    root: PathBuf,
    name: String,
    base_command: String,
    job_info: JobInfo,
    params: Vec<(String, ParamValue)>,
}

impl CaseSpec {
    /// Validates and builds a case. Parameters keep the given order.
    pub fn new(
        root: impl Into<PathBuf>,
        base_command: impl Into<String>,
        job_info: JobInfo,
        params: Vec<(String, ParamValue)>,
    ) -> Result<Self, CaseError> {
        let root = root.into();
        let name = root
            .file_name()
            .and_then(|n| n.to_str())
            .filter(|n| !n.is_empty())
            .ok_or_else(|| CaseError::NoName(root.clone()))?
            .to_string();
        JobInfo::new(job_info.n_core, job_info.n_thread)?;
        let mut seen = std::collections::HashSet::new();
        for (key, value) in &params {
            if !is_identifier(key) {
                return Err(CaseError::InvalidKey(key.clone()));
            }
            if !seen.insert(key.as_str()) {
                return Err(CaseError::DuplicateKey(key.clone()));
            }
            if let ParamValue::Number(v) = value {
                if !v.is_finite() {
                    return Err(CaseError::NonFinite { key: key.clone(), value: *v });
                }
            }
        }
        Ok(Self {
            root,
            name,
            base_command: base_command.into(),
            job_info,
            params,
        })
    }

    pub fn builder(root: impl Into<PathBuf>, base_command: impl Into<String>) -> CaseBuilder {
        CaseBuilder {
            root: root.into(),
            base_command: base_command.into(),
            job_info: JobInfo::default(),
            params: Vec::new(),
        }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    /// Final path component of the root directory.
    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn base_command(&self) -> &str {
        &self.base_command
    }

    pub fn job_info(&self) -> JobInfo {
        self.job_info
    }

    pub fn params(&self) -> &[(String, ParamValue)] {
        &self.params
    }

    pub fn param(&self, key: &str) -> Option<&ParamValue> {
        self.params.iter().find(|(k, _)| k == key).map(|(_, v)| v)
    }

    /// Command-line arguments in declaration order: `--key=value` or `--key`,
    /// with underscores in keys turned into hyphens.
    pub fn render_args(&self) -> String {
        self.params
            .iter()
            .map(|(key, value)| {
                let flag = key.replace('_', "-");
                match value {
                    ParamValue::FlagOnly => format!("--{flag}"),
                    ParamValue::Number(v) => format!("--{flag}={}", render_number(*v)),
                    ParamValue::Text(s) => format!("--{flag}={}", shell::quote(s)),
                }
            })
            .collect::<Vec<_>>()
            .join(" ")
    }

    /// Base command plus arguments, without any output-directory handling.
    pub fn command(&self) -> String {
        join_nonempty(&[&self.base_command, &self.render_args()])
    }

    /// Full command for running in `output_dir`, using [`DEFAULT_OUTPUT_FLAG`]
    /// when the base command has no `$output_dir` placeholder.
    pub fn render_command(&self, output_dir: &Path) -> String {
        self.render_command_with(output_dir, DEFAULT_OUTPUT_FLAG)
    }

    /// Like [`CaseSpec::render_command`] with a caller-chosen flag template.
    /// The template's own `$output_dir` is substituted as well.
    pub fn render_command_with(&self, output_dir: &Path, flag_template: &str) -> String {
        let dir = shell::quote(&output_dir.to_string_lossy());
        let args = self.render_args();
        if self.base_command.contains(OUTPUT_DIR_PLACEHOLDER) {
            let base = self.base_command.replace(OUTPUT_DIR_PLACEHOLDER, &dir);
            join_nonempty(&[&base, &args])
        } else {
            let flag = flag_template.replace(OUTPUT_DIR_PLACEHOLDER, &dir);
            join_nonempty(&[&self.base_command, &args, &flag])
        }
    }

    /// `root` joined with `segments`.
    pub fn input_path<I, S>(&self, segments: I) -> PathBuf
    where
        I: IntoIterator<Item = S>,
        S: AsRef<Path>,
    {
        let mut path = self.root.clone();
        for s in segments {
            path.push(s);
        }
        path
    }

    /// Legend text for `keys`, e.g. `nx=50, scheme=wcsph`.
    pub fn get_labels<S: AsRef<str>>(&self, labels: &LabelMap, keys: &[S]) -> Result<String, CaseError> {
        let mut parts = Vec::with_capacity(keys.len());
        for key in keys {
            let key = key.as_ref();
            let value = self.param(key).ok_or_else(|| CaseError::UnknownParameter {
                case: self.name.clone(),
                key: key.to_string(),
            })?;
            let shown = labels.render_parameter(key);
            parts.push(match value.render() {
                Some(v) => format!("{shown}={v}"),
                None => shown.to_string(),
            });
        }
        Ok(parts.join(", "))
    }
}

fn join_nonempty(parts: &[&str]) -> String {
    parts
        .iter()
        .filter(|p| !p.is_empty())
        .copied()
        .collect::<Vec<_>>()
        .join(" ")
}

pub struct CaseBuilder {
    root: PathBuf,
    base_command: String,
    job_info: JobInfo,
    params: Vec<(String, ParamValue)>,
}

impl CaseBuilder {
    pub fn job_info(mut self, n_core: u32, n_thread: u32) -> Self {
        self.job_info = JobInfo { n_core, n_thread };
        self
    }

    pub fn param(mut self, key: impl Into<String>, value: impl Into<ParamValue>) -> Self {
        self.params.push((key.into(), value.into()));
        self
    }

    pub fn flag(mut self, key: impl Into<String>) -> Self {
        self.params.push((key.into(), ParamValue::FlagOnly));
        self
    }

    pub fn build(self) -> Result<CaseSpec, CaseError> {
        CaseSpec::new(self.root, self.base_command, self.job_info, self.params)
    }
}

/// Parameter constraints for [`filter_cases`].
pub type Criteria = BTreeMap<String, ParamValue>;

/// Cases carrying every criterion key with an equal value, in input order.
pub fn filter_cases<'a, I>(cases: I, criteria: &Criteria) -> Vec<&'a CaseSpec>
where
    I: IntoIterator<Item = &'a CaseSpec>,
{
    cases
        .into_iter()
        .filter(|case| {
            criteria
                .iter()
                .all(|(key, want)| case.param(key).is_some_and(|have| have.same_as(want)))
        })
        .collect()
}

/// Cases named in `names`, in the order of `names`; a name listed twice
/// yields the case twice. Unknown names are an error.
pub fn filter_by_name<'a, S: AsRef<str>>(cases: &'a [CaseSpec], names: &[S]) -> Result<Vec<&'a CaseSpec>, CaseError> {
    names
        .iter()
        .map(|name| {
            let name = name.as_ref();
            cases
                .iter()
                .find(|c| c.name() == name)
                .ok_or_else(|| CaseError::UnknownCase(name.to_string()))
        })
        .collect()
}

/// Cases whose name matches the shell-style `pattern`, in input order.
pub fn match_pattern<'a, I>(cases: I, pattern: &str) -> Vec<&'a CaseSpec>
where
    I: IntoIterator<Item = &'a CaseSpec>,
{
    let pattern = Pattern::new(pattern);
    cases.into_iter().filter(|c| pattern.matches(c.name())).collect()
}

//! Declarative campaigns read from `campaign.toml`.
//!
//! ```toml
//! simulation_dir = "outputs"
//! output_dir = "manuscript/figures"
//!
//! [[problems]]
//! name = "decay"
//! labels = { dt = "dt" }
//!
//! [[problems.cases]]
//! name = "coarse"
//! base_command = "solver"
//! n_core = 2
//! params = { dt = 0.1, scheme = "euler", tensile_correction = true }
//!
//! [[problems.sweeps]]
//! base_command = "solver"
//! fixed = { t_final = 1.0 }
//! vary = { scheme = ["euler", "heun"], dt = [0.1, 0.05] }
//!
//! [[problems.recipes]]
//! kind = "compare"
//! metric = "l1"
//! labels = ["dt"]
//! filter = { scheme = "euler" }
//! output_file = "euler_l1.csv"
//!
//! [[problems.recipes]]
//! kind = "command"
//! argv = ["python3", "plot.py"]
//! ```
//!
//! Parameter values may be numbers, strings or booleans; `true` renders as
//! a bare `--flag` and `false` leaves the parameter out. A sweep adds one
//! case per combination of its `vary` values, named `key_value` pairs
//! joined by `_` unless a `name` template such as `"{scheme}_{dt}"` is
//! given. Relative directories are resolved against the campaign file's
//! directory.

use std::collections::HashSet;
use std::fs;
use std::path::{Component, Path, PathBuf};
use std::sync::Arc;

use serde::Deserialize;
use thiserror::Error;
use toml::{Spanned, Table, Value};

use crate::case::{Criteria, JobInfo, LabelMap, ParamValue};
use crate::problem::{ProblemSpec, Recipe, Selection, SeriesComparison};

pub const CAMPAIGN_FILE: &str = "campaign.toml";

#[derive(Debug, Error)]
pub enum CampaignError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{file}: {message}")]
    Syntax { file: String, message: String },
    #[error("{file}:{line}: {message}")]
    Invalid { file: String, line: usize, message: String },
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawCampaign {
    simulation_dir: Spanned<String>,
    output_dir: Spanned<String>,
    #[serde(default)]
    problems: Vec<RawProblem>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawProblem {
    name: Spanned<String>,
    output_flag: Option<String>,
    #[serde(default)]
    labels: Table,
    #[serde(default)]
    cases: Vec<RawCase>,
    #[serde(default)]
    sweeps: Vec<RawSweep>,
    #[serde(default)]
    recipes: Vec<Spanned<RawRecipe>>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawCase {
    name: Spanned<String>,
    base_command: String,
    #[serde(default = "one")]
    n_core: u32,
    #[serde(default = "one")]
    n_thread: u32,
    #[serde(default)]
    params: Table,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSweep {
    name: Option<String>,
    base_command: Spanned<String>,
    #[serde(default = "one")]
    n_core: u32,
    #[serde(default = "one")]
    n_thread: u32,
    #[serde(default)]
    fixed: Table,
    vary: Table,
}

fn one() -> u32 {
    1
}

#[allow(clippy::large_enum_variant)]
#[derive(Debug, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
enum RawRecipe {
    Command {
        argv: Vec<String>,
    },
    Compare {
        metric: String,
        #[serde(default = "default_x")]
        x: String,
        #[serde(default)]
        labels: Vec<String>,
        output_file: String,
        filter: Option<Table>,
        #[serde(rename = "match")]
        pattern: Option<String>,
        cases: Option<Vec<String>>,
        exact: Option<String>,
    },
}

fn default_x() -> String {
    "t".to_string()
}

/// A loaded campaign: directories plus fully built problems.
#[derive(Debug, Clone)]
pub struct CampaignFile {
    /// Directory relative paths were resolved against.
    pub root: PathBuf,
    pub simulation_dir: PathBuf,
    pub output_dir: PathBuf,
    pub problems: Vec<Arc<ProblemSpec>>,
}

impl CampaignFile {
    pub fn load(path: &Path) -> Result<Self, CampaignError> {
        let text = fs::read_to_string(path).map_err(|source| CampaignError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let root = match path.parent() {
            Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
            _ => PathBuf::from("."),
        };
        Self::parse(&text, &root, &path.display().to_string())
    }

    /// Parses campaign text; `file` names it in error messages.
    pub fn parse(text: &str, root: &Path, file: &str) -> Result<Self, CampaignError> {
        let raw: RawCampaign = toml::from_str(text).map_err(|e| CampaignError::Syntax {
            file: file.to_string(),
            message: e.to_string().trim_end().to_string(),
        })?;
        let ctx = Ctx { text, file };

        let sim_rel = PathBuf::from(raw.simulation_dir.get_ref());
        let out_rel = PathBuf::from(raw.output_dir.get_ref());
        for (dir, span) in [(&sim_rel, raw.simulation_dir.span()), (&out_rel, raw.output_dir.span())] {
            if dir.as_os_str().is_empty() {
                return Err(ctx.err(span.start, "directory must not be empty"));
            }
        }
        if normalize(&sim_rel) == normalize(&out_rel) {
            return Err(ctx.err(raw.output_dir.span().start, "output_dir must differ from simulation_dir"));
        }
        let simulation_dir = resolve(root, &sim_rel);
        let output_dir = resolve(root, &out_rel);

        let mut problems = Vec::new();
        let mut names = HashSet::new();
        for p in raw.problems {
            let span = p.name.span().start;
            if !names.insert(p.name.get_ref().clone()) {
                return Err(ctx.err(span, format!("duplicate problem name `{}`", p.name.get_ref())));
            }
            problems.push(Arc::new(ctx.problem(p, &simulation_dir, &output_dir)?));
        }
        Ok(Self {
            root: root.to_path_buf(),
            simulation_dir,
            output_dir,
            problems,
        })
    }

    pub fn problem_names(&self) -> Vec<&str> {
        self.problems.iter().map(|p| p.name()).collect()
    }

    /// Paths, relative to [`CampaignFile::root`], that hold generated data.
    pub fn generated_dirs(&self) -> Vec<PathBuf> {
        [&self.simulation_dir, &self.output_dir]
            .into_iter()
            .filter_map(|d| {
                if d.is_relative() && self.root == Path::new(".") {
                    Some(normalize(d))
                } else {
                    d.strip_prefix(&self.root).ok().map(normalize)
                }
            })
            .filter(|d| !d.as_os_str().is_empty())
            .collect()
    }

    /// First word of every base command, deduplicated.
    pub fn programs(&self) -> Vec<String> {
        let mut seen = Vec::new();
        for case in self.problems.iter().flat_map(|p| p.cases()) {
            if let Some(word) = case.base_command().split_whitespace().next() {
                if !seen.iter().any(|s| s == word) {
                    seen.push(word.to_string());
                }
            }
        }
        seen
    }
}

fn resolve(root: &Path, dir: &Path) -> PathBuf {
    if dir.is_absolute() || root == Path::new(".") {
        dir.to_path_buf()
    } else {
        root.join(dir)
    }
}

/// Drops `.` components, so `./a/` and `a` compare equal.
fn normalize(p: &Path) -> PathBuf {
    p.components().filter(|c| *c != Component::CurDir).collect()
}

struct Ctx<'a> {
    text: &'a str,
    file: &'a str,
}

impl Ctx<'_> {
    fn err(&self, offset: usize, message: impl Into<String>) -> CampaignError {
        let line = self.text[..offset.min(self.text.len())].matches('\n').count() + 1;
        CampaignError::Invalid {
            file: self.file.to_string(),
            line,
            message: message.into(),
        }
    }

    fn problem(&self, raw: RawProblem, sim: &Path, out: &Path) -> Result<ProblemSpec, CampaignError> {
        let at = raw.name.span().start;
        let name = raw.name.into_inner();
        let mut p = ProblemSpec::new(&name, sim, out).map_err(|e| self.err(at, e.to_string()))?;
        if let Some(flag) = raw.output_flag {
            p.set_output_flag(flag);
        }
        let mut labels = LabelMap::new();
        for (key, value) in raw.labels {
            match value {
                Value::String(s) => labels.insert(key, s),
                _ => return Err(self.err(at, format!("problem `{name}`: label for `{key}` must be a string"))),
            }
        }
        p.set_labels(labels);

        for case in raw.cases {
            let at = case.name.span().start;
            let info = JobInfo::new(case.n_core, case.n_thread).map_err(|e| self.err(at, e.to_string()))?;
            let params = params(&case.params).map_err(|m| self.err(at, m))?;
            p.add_case(case.name.get_ref(), case.base_command, info, params)
                .map_err(|e| self.err(at, e.to_string()))?;
        }

        for sweep in raw.sweeps {
            let at = sweep.base_command.span().start;
            let info = JobInfo::new(sweep.n_core, sweep.n_thread).map_err(|e| self.err(at, e.to_string()))?;
            let fixed = params(&sweep.fixed).map_err(|m| self.err(at, m))?;
            for combo in expand(&sweep.vary).map_err(|m| self.err(at, m))? {
                let case_name = match &sweep.name {
                    Some(template) => fill_template(template, &combo),
                    None => default_name(&combo),
                };
                let mut all = fixed.clone();
                all.extend(combo);
                p.add_case(&case_name, sweep.base_command.get_ref().clone(), info, all)
                    .map_err(|e| self.err(at, e.to_string()))?;
            }
        }

        for recipe in raw.recipes {
            let at = recipe.span().start;
            let r = match recipe.into_inner() {
                RawRecipe::Command { argv } => {
                    if argv.is_empty() {
                        return Err(self.err(at, "command recipe needs a non-empty argv"));
                    }
                    Recipe::Command(argv)
                }
                RawRecipe::Compare {
                    metric,
                    x,
                    labels,
                    output_file,
                    filter,
                    pattern,
                    cases,
                    exact,
                } => {
                    let selection = match (filter, pattern, cases) {
                        (None, None, None) => Selection::All,
                        (Some(f), None, None) => {
                            let criteria: Criteria = params(&f).map_err(|m| self.err(at, m))?.into_iter().collect();
                            Selection::Criteria(criteria)
                        }
                        (None, Some(pat), None) => Selection::Pattern(pat),
                        (None, None, Some(names)) => Selection::Names(names),
                        _ => return Err(self.err(at, "use at most one of `filter`, `match` and `cases`")),
                    };
                    let mut c = SeriesComparison::new(metric, output_file).labels(labels).select(selection);
                    c.x = x;
                    c.exact = exact.map(PathBuf::from);
                    Recipe::SeriesComparison(c)
                }
            };
            p.add_recipe(r).map_err(|e| self.err(at, e.to_string()))?;
        }
        Ok(p)
    }
}

fn param_value(key: &str, v: &Value) -> Result<Option<ParamValue>, String> {
    Ok(Some(match v {
        Value::Integer(i) => ParamValue::Number(*i as f64),
        Value::Float(f) => ParamValue::Number(*f),
        Value::String(s) => ParamValue::Text(s.clone()),
        Value::Boolean(true) => ParamValue::FlagOnly,
        Value::Boolean(false) => return Ok(None),
        _ => return Err(format!("parameter `{key}` must be a number, string or boolean")),
    }))
}

fn params(table: &Table) -> Result<Vec<(String, ParamValue)>, String> {
    let mut out = Vec::new();
    for (key, v) in table {
        if let Some(value) = param_value(key, v)? {
            out.push((key.clone(), value));
        }
    }
    Ok(out)
}

/// Cartesian product of the `vary` lists, first key outermost.
fn expand(vary: &Table) -> Result<Vec<Vec<(String, ParamValue)>>, String> {
    if vary.is_empty() {
        return Err("sweep needs at least one `vary` entry".into());
    }
    let mut combos: Vec<Vec<(String, ParamValue)>> = vec![Vec::new()];
    for (key, values) in vary {
        let Value::Array(values) = values else {
            return Err(format!("`vary.{key}` must be a list"));
        };
        if values.is_empty() {
            return Err(format!("`vary.{key}` is empty"));
        }
        let mut next = Vec::with_capacity(combos.len() * values.len());
        for combo in &combos {
            for v in values {
                let mut c = combo.clone();
                if let Some(value) = param_value(key, v)? {
                    c.push((key.clone(), value));
                }
                next.push(c);
            }
        }
        combos = next;
    }
    Ok(combos)
}

fn default_name(combo: &[(String, ParamValue)]) -> String {
    combo
        .iter()
        .map(|(k, v)| match v.render() {
            Some(r) => format!("{k}_{r}"),
            None => k.clone(),
        })
        .collect::<Vec<_>>()
        .join("_")
}

fn fill_template(template: &str, combo: &[(String, ParamValue)]) -> String {
    let mut out = template.to_string();
    for (k, v) in combo {
        out = out.replace(&format!("{{{k}}}"), &v.render().unwrap_or_else(|| k.clone()));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> Result<CampaignFile, CampaignError> {
        CampaignFile::parse(text, Path::new("."), "campaign.toml")
    }

    const HEAD: &str = "simulation_dir = \"outputs\"\noutput_dir = \"figures\"\n";

    #[test]
    fn cases_and_flags() {
        let c = parse(&format!(
            "{HEAD}[[problems]]\nname = \"elliptical_drop\"\n[[problems.cases]]\nname = \"tc\"\nbase_command = \"pysph run elliptical_drop\"\n\
             params = {{ timestep = 0.005, tensile_correction = true, off = false }}\n"
        ))
        .unwrap();
        let p = &c.problems[0];
        assert_eq!(p.cases()[0].command(), "pysph run elliptical_drop --timestep=0.005 --tensile-correction");
        assert_eq!(p.cases()[0].root(), Path::new("outputs/elliptical_drop/tc"));
        assert_eq!(p.output_dir(), Path::new("figures/elliptical_drop"));
    }

    #[test]
    fn sweep_is_a_cartesian_product() {
        let c = parse(&format!(
            "{HEAD}[[problems]]\nname = \"p\"\n[[problems.sweeps]]\nbase_command = \"sim\"\nn_core = 2\nfixed = {{ k = 1 }}\n\
             vary = {{ scheme = [\"euler\", \"heun\"], dt = [0.1, 0.05, 0.025] }}\n"
        ))
        .unwrap();
        let names: Vec<&str> = c.problems[0].cases().iter().map(|c| c.name()).collect();
        assert_eq!(
            names,
            [
                "scheme_euler_dt_0.1",
                "scheme_euler_dt_0.05",
                "scheme_euler_dt_0.025",
                "scheme_heun_dt_0.1",
                "scheme_heun_dt_0.05",
                "scheme_heun_dt_0.025"
            ]
        );
        let first = &c.problems[0].cases()[0];
        assert_eq!(first.command(), "sim --k=1 --scheme=euler --dt=0.1");
        assert_eq!(first.job_info().n_core, 2);
    }

    #[test]
    fn sweep_name_template() {
        let c = parse(&format!(
            "{HEAD}[[problems]]\nname = \"p\"\n[[problems.sweeps]]\nname = \"{{scheme}}-{{dt}}\"\nbase_command = \"sim\"\n\
             vary = {{ scheme = [\"a\"], dt = [1, 2] }}\n"
        ))
        .unwrap();
        let names: Vec<&str> = c.problems[0].cases().iter().map(|c| c.name()).collect();
        assert_eq!(names, ["a-1", "a-2"]);
    }

    #[test]
    fn recipes() {
        let c = parse(&format!(
            "{HEAD}[[problems]]\nname = \"p\"\n[[problems.recipes]]\nkind = \"command\"\nargv = [\"true\"]\n\
             [[problems.recipes]]\nkind = \"compare\"\nmetric = \"l1\"\nlabels = [\"dt\"]\nfilter = {{ scheme = \"euler\" }}\noutput_file = \"e.csv\"\n"
        ))
        .unwrap();
        let r = c.problems[0].recipes();
        assert!(matches!(&r[0], Recipe::Command(a) if a == &["true"]));
        match &r[1] {
            Recipe::SeriesComparison(s) => {
                assert_eq!(s.x, "t");
                assert_eq!(s.label_keys, ["dt"]);
                assert!(matches!(&s.selection, Selection::Criteria(c) if c["scheme"] == ParamValue::Text("euler".into())));
            }
            other => panic!("{other:?}"),
        }
    }

    fn line_of(text: &str) -> usize {
        match parse(text) {
            Err(CampaignError::Invalid { line, .. }) => line,
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn semantic_errors_carry_lines() {
        let dup = format!("{HEAD}[[problems]]\nname = \"p\"\n[[problems]]\nname = \"p\"\n");
        assert_eq!(line_of(&dup), 6);
        let same_dirs = "simulation_dir = \"out\"\noutput_dir = \"./out\"\n";
        assert_eq!(line_of(same_dirs), 2);
        let dup_case = format!(
            "{HEAD}[[problems]]\nname = \"p\"\n[[problems.cases]]\nname = \"a\"\nbase_command = \"x\"\n[[problems.cases]]\nname = \"a\"\nbase_command = \"x\"\n"
        );
        assert_eq!(line_of(&dup_case), 9);
        let bad_param = format!(
            "{HEAD}[[problems]]\nname = \"p\"\n[[problems.cases]]\nname = \"a\"\nbase_command = \"x\"\nparams = {{ v = [1] }}\n"
        );
        assert_eq!(line_of(&bad_param), 6);
        let two_selectors = format!(
            "{HEAD}[[problems]]\nname = \"p\"\n[[problems.recipes]]\nkind = \"compare\"\nmetric = \"m\"\noutput_file = \"o\"\nmatch = \"*\"\ncases = []\n"
        );
        assert_eq!(line_of(&two_selectors), 5);
    }

    #[test]
    fn syntax_errors_carry_lines() {
        for text in [
            format!("{HEAD}[[problems]]\nname = \"p\"\nbogus = 1\n"),
            format!("{HEAD}[[problems]]\nname = \n"),
            "output_dir = \"x\"\n".to_string(),
            format!("{HEAD}[[problems]]\nname = \"p\"\n[[problems.recipes]]\nkind = \"plot\"\n"),
        ] {
            match parse(&text) {
                Err(CampaignError::Syntax { message, .. }) => assert!(message.contains("line"), "{message}"),
                other => panic!("{other:?}"),
            }
        }
    }

    #[test]
    fn directories_resolve_against_campaign_location() {
        let c = CampaignFile::parse(HEAD, Path::new("/proj"), "x").unwrap();
        assert_eq!(c.simulation_dir, Path::new("/proj/outputs"));
        assert_eq!(c.generated_dirs(), [PathBuf::from("outputs"), PathBuf::from("figures")]);
        let here = parse(HEAD).unwrap();
        assert_eq!(here.generated_dirs(), [PathBuf::from("outputs"), PathBuf::from("figures")]);
    }

    #[test]
    fn programs_are_first_words() {
        let c = parse(&format!(
            "{HEAD}[[problems]]\nname = \"p\"\n[[problems.sweeps]]\nbase_command = \"sim run\"\nvary = {{ a = [1, 2] }}\n"
        ))
        .unwrap();
        assert_eq!(c.programs(), ["sim"]);
    }
}

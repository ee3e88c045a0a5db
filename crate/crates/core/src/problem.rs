//! Problems: named groups of cases plus the post-processing that compares
//! them.
//!
//! A problem named `taylor_green` with simulation root `outputs` and output
//! root `manuscript/figures` keeps every case under `outputs/taylor_green/`
//! and writes its post-processed products to `manuscript/figures/taylor_green/`.

use std::cmp::Ordering;
use std::collections::HashSet;
use std::fmt;
use std::fs;
use std::path::{Component, Path, PathBuf};
use std::process::Command;
use std::sync::Arc;

use thiserror::Error;

use crate::case::{self, CaseError, CaseSpec, Criteria, JobInfo, LabelMap, ParamValue, DEFAULT_OUTPUT_FLAG};
use crate::results::{ComparisonTable, ResultTable, ResultsError, RESULTS_FILE};

/// Environment variable naming the problem's simulation directory.
pub const ENV_SIM_DIR: &str = "AUTOMAN_SIM_DIR";
/// Environment variable naming the problem's output directory.
pub const ENV_OUTPUT_DIR: &str = "AUTOMAN_OUTPUT_DIR";

#[derive(Debug, Error)]
pub enum ProblemError {
    #[error("invalid problem name `{0}`")]
    InvalidName(String),
    #[error("problem `{problem}`: two cases share the root {root}")]
    DuplicateRoot { problem: String, root: PathBuf },
    #[error("problem `{problem}`: case root {root} is not directly inside the problem simulation directory")]
    MisplacedCase { problem: String, root: PathBuf },
    #[error(transparent)]
    Case(#[from] CaseError),
    #[error(transparent)]
    Results(#[from] ResultsError),
    #[error("case `{case}` has no series `{series}` in {path}")]
    MissingSeries { case: String, series: String, path: PathBuf },
    #[error("cannot align column `{column}`: its `{x}` series is not strictly increasing")]
    UnalignedSeries { column: String, x: String },
    #[error("output file `{0}` must be a relative path inside the problem output directory")]
    EscapingPath(PathBuf),
    #[error("recipe {index} of problem `{problem}` failed: {reason}")]
    RecipeFailed { problem: String, index: usize, reason: String },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// Which cases a comparison draws from.
#[derive(Debug, Clone, PartialEq, Default)]
pub enum Selection {
    #[default]
    All,
    Criteria(Criteria),
    Pattern(String),
    Names(Vec<String>),
}

/// A built-in comparison of one series across cases, written as CSV.
#[derive(Debug, Clone, PartialEq)]
pub struct SeriesComparison {
    pub metric: String,
    pub x: String,
    pub selection: Selection,
    pub label_keys: Vec<String>,
    pub output_file: PathBuf,
    /// Results file, relative to the problem simulation directory, holding
    /// the reference solution under the same metric name.
    pub exact: Option<PathBuf>,
}

impl SeriesComparison {
    pub fn new(metric: impl Into<String>, output_file: impl Into<PathBuf>) -> Self {
        Self {
            metric: metric.into(),
            x: "t".to_string(),
            selection: Selection::All,
            label_keys: Vec::new(),
            output_file: output_file.into(),
            exact: None,
        }
    }

    pub fn labels<S: Into<String>>(mut self, keys: impl IntoIterator<Item = S>) -> Self {
        self.label_keys = keys.into_iter().map(Into::into).collect();
        self
    }

    pub fn select(mut self, selection: Selection) -> Self {
        self.selection = selection;
        self
    }
}

/// Signature of library-defined post-processing.
pub type RecipeFn = dyn Fn(&ProblemSpec) -> Result<(), String> + Send + Sync;

/// One post-processing step.
#[derive(Clone)]
pub enum Recipe {
    /// argv executed with [`ENV_SIM_DIR`] and [`ENV_OUTPUT_DIR`] set; must exit 0.
    Command(Vec<String>),
    SeriesComparison(SeriesComparison),
    /// Arbitrary code supplied by a library user.
    Function(Arc<RecipeFn>),
}

impl fmt::Debug for Recipe {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Recipe::Command(argv) => f.debug_tuple("Command").field(argv).finish(),
            Recipe::SeriesComparison(c) => f.debug_tuple("SeriesComparison").field(c).finish(),
            Recipe::Function(_) => f.write_str("Function(..)"),
        }
    }
}

/// A named group of cases and the recipes that post-process them.
#[derive(Debug, Clone)]
pub struct ProblemSpec {
    name: String,
    sim_root: PathBuf,
    output_root: PathBuf,
    cases: Vec<CaseSpec>,
    recipes: Vec<Recipe>,
    labels: LabelMap,
    output_flag: String,
}

impl ProblemSpec {
    pub fn new(name: impl Into<String>, sim_root: impl Into<PathBuf>, output_root: impl Into<PathBuf>) -> Result<Self, ProblemError> {
        let name = name.into();
        let safe = !name.is_empty()
            && name != "."
            && name != ".."
            && name.chars().all(|c| c.is_ascii_alphanumeric() || "_-.".contains(c));
        if !safe {
            return Err(ProblemError::InvalidName(name));
        }
        Ok(Self {
            name,
            sim_root: sim_root.into(),
            output_root: output_root.into(),
            cases: Vec::new(),
            recipes: Vec::new(),
            labels: LabelMap::new(),
            output_flag: DEFAULT_OUTPUT_FLAG.to_string(),
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn cases(&self) -> &[CaseSpec] {
        &self.cases
    }

    pub fn recipes(&self) -> &[Recipe] {
        &self.recipes
    }

    pub fn labels(&self) -> &LabelMap {
        &self.labels
    }

    pub fn output_flag(&self) -> &str {
        &self.output_flag
    }

    pub fn set_labels(&mut self, labels: LabelMap) {
        self.labels = labels;
    }

    /// Flag template appended to commands lacking `$output_dir`.
    pub fn set_output_flag(&mut self, template: impl Into<String>) {
        self.output_flag = template.into();
    }

    /// `sim_root/name/segments...`
    pub fn input_path<I, S>(&self, segments: I) -> PathBuf
    where
        I: IntoIterator<Item = S>,
        S: AsRef<Path>,
    {
        let mut p = self.sim_root.join(&self.name);
        for s in segments {
            p.push(s);
        }
        p
    }

    /// `output_root/name/segments...`
    pub fn output_path<I, S>(&self, segments: I) -> PathBuf
    where
        I: IntoIterator<Item = S>,
        S: AsRef<Path>,
    {
        let mut p = self.output_root.join(&self.name);
        for s in segments {
            p.push(s);
        }
        p
    }

    pub fn sim_dir(&self) -> PathBuf {
        self.sim_root.join(&self.name)
    }

    pub fn output_dir(&self) -> PathBuf {
        self.output_root.join(&self.name)
    }

    /// Adds a case rooted at `sim_root/name/case_name`.
    pub fn add_case(
        &mut self,
        case_name: &str,
        base_command: impl Into<String>,
        job_info: JobInfo,
        params: Vec<(String, ParamValue)>,
    ) -> Result<&CaseSpec, ProblemError> {
        let root = self.input_path([case_name]);
        let case = CaseSpec::new(root, base_command, job_info, params)?;
        self.push_case(case)
    }

    /// Adds a prebuilt case; its root must be `sim_root/name/<case name>`.
    pub fn push_case(&mut self, case: CaseSpec) -> Result<&CaseSpec, ProblemError> {
        if case.root() != self.input_path([case.name()]) {
            return Err(ProblemError::MisplacedCase {
                problem: self.name.clone(),
                root: case.root().to_path_buf(),
            });
        }
        if self.cases.iter().any(|c| c.root() == case.root()) {
            return Err(ProblemError::DuplicateRoot {
                problem: self.name.clone(),
                root: case.root().to_path_buf(),
            });
        }
        self.cases.push(case);
        Ok(self.cases.last().expect("just pushed"))
    }

    pub fn add_recipe(&mut self, recipe: Recipe) -> Result<(), ProblemError> {
        if let Recipe::SeriesComparison(c) = &recipe {
            check_relative(&c.output_file)?;
            if let Some(exact) = &c.exact {
                check_relative(exact)?;
            }
        }
        self.recipes.push(recipe);
        Ok(())
    }

    /// One entry per case: name, fully rendered command, resources.
    pub fn get_commands(&self) -> Vec<(String, String, JobInfo)> {
        self.cases
            .iter()
            .map(|c| {
                let cmd = c.render_command_with(c.root(), &self.output_flag);
                (c.name().to_string(), cmd, c.job_info())
            })
            .collect()
    }

    fn select<'a>(&'a self, selection: &Selection) -> Result<Vec<&'a CaseSpec>, ProblemError> {
        Ok(match selection {
            Selection::All => self.cases.iter().collect(),
            Selection::Criteria(c) => case::filter_cases(&self.cases, c),
            Selection::Pattern(p) => case::match_pattern(&self.cases, p),
            Selection::Names(n) => case::filter_by_name(&self.cases, n)?,
        })
    }

    /// Creates the output directory and runs every recipe in order.
    /// Stops at the first failing recipe; earlier outputs stay in place.
    pub fn run_recipes(&self) -> Result<(), ProblemError> {
        let out = self.output_dir();
        fs::create_dir_all(&out).map_err(|source| ProblemError::Io { path: out.clone(), source })?;
        for (index, recipe) in self.recipes.iter().enumerate() {
            let failed = |reason: String| ProblemError::RecipeFailed {
                problem: self.name.clone(),
                index,
                reason,
            };
            match recipe {
                Recipe::Command(argv) => {
                    let (program, args) = argv.split_first().ok_or_else(|| failed("empty command".into()))?;
                    let status = Command::new(program)
                        .args(args)
                        .env(ENV_SIM_DIR, self.sim_dir())
                        .env(ENV_OUTPUT_DIR, &out)
                        .status()
                        .map_err(|e| failed(format!("cannot run `{program}`: {e}")))?;
                    if !status.success() {
                        return Err(failed(format!("`{}` exited with {status}", argv.join(" "))));
                    }
                }
                Recipe::SeriesComparison(spec) => {
                    let table = self.comparison(spec)?;
                    let path = self.output_path([&spec.output_file]);
                    if let Some(parent) = path.parent() {
                        fs::create_dir_all(parent).map_err(|source| ProblemError::Io {
                            path: parent.to_path_buf(),
                            source,
                        })?;
                    }
                    fs::write(&path, table.to_csv()).map_err(|source| ProblemError::Io { path, source })?;
                }
                Recipe::Function(f) => f(self).map_err(failed)?,
            }
        }
        Ok(())
    }

    /// Evaluates a [`SeriesComparison`] without writing it.
    pub fn comparison(&self, spec: &SeriesComparison) -> Result<ComparisonTable, ProblemError> {
        check_relative(&spec.output_file)?;
        let cases = self.select(&spec.selection)?;
        let exact = match &spec.exact {
            Some(rel) => {
                check_relative(rel)?;
                Some(ResultTable::read(&self.input_path([rel]))?)
            }
            None => None,
        };
        compare_runs(&cases, &spec.metric, &spec.x, &spec.label_keys, &self.labels, exact.as_ref())
    }
}

fn check_relative(path: &Path) -> Result<(), ProblemError> {
    let ok = !path.as_os_str().is_empty() && path.components().all(|c| matches!(c, Component::Normal(_) | Component::CurDir));
    if ok {
        Ok(())
    } else {
        Err(ProblemError::EscapingPath(path.to_path_buf()))
    }
}

/// Reads `results.csv` from the case root.
pub fn load_results(case: &CaseSpec) -> Result<ResultTable, ResultsError> {
    let path = case.input_path([RESULTS_FILE]);
    if !path.is_file() {
        return Err(ResultsError::Missing {
            case: case.name().to_string(),
            path,
        });
    }
    ResultTable::read(&path)
}

/// Tabulates `metric` against the `x` series for each case, labelled by
/// `label_keys`. Cases with an empty label fall back to their name.
///
/// When every x-series is identical it becomes the x column as is.
/// Otherwise the x column is the sorted union of all x values, with values
/// closer than [`X_MERGE_TOLERANCE`] (relative) taken as the same point,
/// and each y cell sits in the row of its own x value; this requires every
/// x-series to be strictly increasing.
pub fn compare_runs(
    cases: &[&CaseSpec],
    metric: &str,
    x: &str,
    label_keys: &[String],
    labels: &LabelMap,
    exact: Option<&ResultTable>,
) -> Result<ComparisonTable, ProblemError> {
    let mut series: Vec<(String, Vec<f64>, Vec<f64>)> = Vec::with_capacity(cases.len() + 1);
    let mut seen = HashSet::new();
    for case in cases {
        let table = load_results(case)?;
        let pick = |name: &str| {
            table.series(name).map(<[f64]>::to_vec).ok_or_else(|| ProblemError::MissingSeries {
                case: case.name().to_string(),
                series: name.to_string(),
                path: table.source().to_path_buf(),
            })
        };
        let xv = pick(x)?;
        let yv = pick(metric)?;
        let mut label = case.get_labels(labels, label_keys)?;
        if label.is_empty() {
            label = case.name().to_string();
        }
        if !seen.insert(label.clone()) {
            label = format!("{label} ({})", case.name());
        }
        series.push((label, xv, yv));
    }
    if let Some(table) = exact {
        let get = |name: &str| {
            table.series(name).map(<[f64]>::to_vec).ok_or_else(|| ProblemError::MissingSeries {
                case: "exact".to_string(),
                series: name.to_string(),
                path: table.source().to_path_buf(),
            })
        };
        series.push(("exact".to_string(), get(x)?, get(metric)?));
    }

    let shared = series.windows(2).all(|w| w[0].1 == w[1].1);
    let x_values: Vec<f64> = if shared {
        series.first().map(|s| s.1.clone()).unwrap_or_default()
    } else {
        for (label, xv, _) in &series {
            if xv.windows(2).any(|w| w[0].partial_cmp(&w[1]) != Some(Ordering::Less)) {
                return Err(ProblemError::UnalignedSeries {
                    column: label.clone(),
                    x: x.to_string(),
                });
            }
        }
        let mut all: Vec<f64> = series.iter().flat_map(|s| s.1.iter().copied()).collect();
        all.sort_by(f64::total_cmp);
        let mut merged: Vec<f64> = Vec::with_capacity(all.len());
        for v in all {
            match merged.last() {
                Some(&last) if same_point(last, v) => {}
                _ => merged.push(v),
            }
        }
        merged
    };

    let mut columns: Vec<(String, Vec<Option<f64>>)> = series
        .into_iter()
        .map(|(label, xv, yv)| {
            let mut cells = vec![None; x_values.len()];
            if shared {
                cells = yv.into_iter().map(Some).collect();
            } else {
                for (xi, yi) in xv.iter().zip(yv) {
                    // the representative is the smallest value of its cluster
                    let row = x_values.partition_point(|v| *v < *xi && !same_point(*v, *xi));
                    cells[row] = Some(yi);
                }
            }
            (label, cells)
        })
        .collect();
    let exact = exact.and_then(|_| columns.pop().map(|(_, c)| c));
    Ok(ComparisonTable {
        x_name: x.to_string(),
        x: x_values,
        columns,
        exact,
    })
}

/// Relative distance below which two x values are one point in a
/// comparison table.
pub const X_MERGE_TOLERANCE: f64 = 1e-9;

fn same_point(a: f64, b: f64) -> bool {
    (a - b).abs() <= X_MERGE_TOLERANCE * a.abs().max(b.abs()).max(1.0)
}

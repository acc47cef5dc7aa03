//! TOML run configuration: data schema, seeds, search grids and the
//! experiment plans. Relative paths resolve against the config file's
//! directory.

use std::collections::BTreeSet;
use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use skillshap_core::attribution::Method;
use skillshap_core::models::{Grid, HyperValue};
use skillshap_core::{Category, Family, ModelConfig, VariableKind, VariableSpec};

use crate::PipelineError;

/// The three level pairings; no other pairing is accepted.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentName {
    LowMedium,
    HighMedium,
    LowHigh,
}

impl ExperimentName {
    pub const ALL: [ExperimentName; 3] = [ExperimentName::LowMedium, ExperimentName::HighMedium, ExperimentName::LowHigh];

    pub fn name(self) -> &'static str {
        match self {
            ExperimentName::LowMedium => "low-medium",
            ExperimentName::HighMedium => "high-medium",
            ExperimentName::LowHigh => "low-high",
        }
    }

    pub fn parse(s: &str) -> Option<ExperimentName> {
        Self::ALL.into_iter().find(|e| e.name() == s)
    }

    /// Default (positive, negative): the higher level is the positive class.
    pub fn classes(self) -> (Category, Category) {
        match self {
            ExperimentName::LowMedium => (Category::Medium, Category::Low),
            ExperimentName::HighMedium => (Category::High, Category::Medium),
            ExperimentName::LowHigh => (Category::High, Category::Low),
        }
    }

    /// Seed-stream tag.
    pub fn tag(self) -> u64 {
        match self {
            ExperimentName::LowMedium => 1,
            ExperimentName::HighMedium => 2,
            ExperimentName::LowHigh => 3,
        }
    }
}

impl fmt::Display for ExperimentName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Instances {
    /// Highest and lowest total attribution on the test partition.
    Extremes,
    Rows(Vec<usize>),
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AttributionPlan {
    /// `None` attributes the model selected across families.
    pub family: Option<Family>,
    pub instances: Instances,
    pub background_size: usize,
    /// `None` picks Tree, Linear or Kernel from the model.
    pub method: Option<Method>,
    pub kernel_budget: Option<usize>,
}

impl Default for AttributionPlan {
    fn default() -> Self {
        Self {
            family: None,
            instances: Instances::Extremes,
            background_size: 100,
            method: None,
            kernel_budget: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ExperimentPlan {
    pub name: ExperimentName,
    pub positive: Category,
    pub negative: Category,
    pub seed: u64,
    pub families: Vec<Family>,
    pub attribution: AttributionPlan,
}

impl ExperimentPlan {
    pub fn new(name: ExperimentName, seed: u64) -> Self {
        let (positive, negative) = name.classes();
        Self {
            name,
            positive,
            negative,
            seed,
            families: Family::ALL.to_vec(),
            attribution: AttributionPlan::default(),
        }
    }
}

#[derive(Clone, Debug)]
pub struct DataConfig {
    pub raw: Option<PathBuf>,
    pub preprocessed: PathBuf,
    pub missing: Vec<String>,
    pub plausible_values: Vec<String>,
    pub noise: bool,
    pub noise_in_training: bool,
    pub columns: Vec<VariableSpec>,
}

impl DataConfig {
    /// Feature columns followed by the plausible-value columns.
    pub fn load_schema(&self) -> Vec<VariableSpec> {
        let mut schema = self.columns.clone();
        schema.extend(self.plausible_values.iter().map(VariableSpec::plausible_value));
        schema
    }
}

#[derive(Clone, Debug)]
pub struct Config {
    pub seed: u64,
    pub output: PathBuf,
    pub test_fraction: f64,
    pub folds: usize,
    pub jobs: usize,
    pub balanced_test: bool,
    pub data: DataConfig,
    /// Grid per family, in `Family::ALL` order.
    pub grids: Vec<(Family, Grid)>,
    pub experiments: Vec<ExperimentPlan>,
    /// `sha256` of the config text.
    pub digest: String,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    seed: u64,
    #[serde(default = "default_output")]
    output: PathBuf,
    #[serde(default = "default_test_fraction")]
    test_fraction: f64,
    #[serde(default = "default_folds")]
    folds: usize,
    #[serde(default = "default_jobs")]
    jobs: usize,
    #[serde(default = "yes")]
    balanced_test: bool,
    data: RawData,
    #[serde(default)]
    grids: toml::Table,
    #[serde(default)]
    experiments: Vec<RawPlan>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawData {
    raw: Option<PathBuf>,
    preprocessed: PathBuf,
    #[serde(default = "default_missing")]
    missing: Vec<String>,
    #[serde(default)]
    plausible_values: Vec<String>,
    #[serde(default = "yes")]
    noise: bool,
    #[serde(default = "yes")]
    noise_in_training: bool,
    #[serde(default)]
    columns: Vec<RawColumn>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawColumn {
    name: String,
    kind: VariableKind,
    range: Option<[f64; 2]>,
    #[serde(default)]
    categories: Vec<Token>,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum Token {
    Int(i64),
    Text(String),
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawPlan {
    name: String,
    positive: Option<String>,
    negative: Option<String>,
    seed: Option<u64>,
    families: Option<Vec<String>>,
    #[serde(default)]
    attribution: RawAttribution,
}

#[derive(Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawAttribution {
    model: Option<String>,
    instances: Option<RawInstances>,
    background_size: Option<usize>,
    method: Option<String>,
    kernel_budget: Option<usize>,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum RawInstances {
    Keyword(String),
    Rows(Vec<usize>),
}

fn default_output() -> PathBuf {
    PathBuf::from("out")
}

fn default_test_fraction() -> f64 {
    0.2
}

fn default_folds() -> usize {
    5
}

fn default_jobs() -> usize {
    1
}

fn yes() -> bool {
    true
}

fn default_missing() -> Vec<String> {
    vec![String::new()]
}

fn err(msg: impl Into<String>) -> PipelineError {
    PipelineError::Config(msg.into())
}

impl Config {
    pub fn load(path: &Path) -> Result<Config, PipelineError> {
        let text = std::fs::read_to_string(path).map_err(|e| err(format!("cannot read {}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Config::parse(&text, base)
    }

    /// Parses config text; relative paths are joined onto `base`.
    pub fn parse(text: &str, base: &Path) -> Result<Config, PipelineError> {
        let raw: RawConfig = toml::from_str(text).map_err(|e| err(e.to_string()))?;
        if !(raw.test_fraction > 0.0 && raw.test_fraction < 1.0) {
            return Err(err(format!("test_fraction {} must lie strictly between 0 and 1", raw.test_fraction)));
        }
        if raw.folds < 2 {
            return Err(err(format!("folds must be at least 2, got {}", raw.folds)));
        }
        let resolve = |p: PathBuf| if p.is_absolute() { p } else { base.join(p) };
        let data = parse_data(raw.data, &resolve)?;
        let grids = parse_grids(&raw.grids)?;
        let experiments = if raw.experiments.is_empty() {
            ExperimentName::ALL.iter().map(|&n| ExperimentPlan::new(n, raw.seed)).collect()
        } else {
            raw.experiments
                .into_iter()
                .map(|p| parse_plan(p, raw.seed))
                .collect::<Result<Vec<_>, _>>()?
        };
        let mut seen = BTreeSet::new();
        for p in &experiments {
            if !seen.insert(p.name) {
                return Err(err(format!("experiment `{}` declared twice", p.name)));
            }
        }
        Ok(Config {
            seed: raw.seed,
            output: resolve(raw.output),
            test_fraction: raw.test_fraction,
            folds: raw.folds,
            jobs: raw.jobs.max(1),
            balanced_test: raw.balanced_test,
            data,
            grids,
            experiments,
            digest: crate::sha256_hex(text.as_bytes()),
        })
    }

    pub fn grid(&self, family: Family) -> &Grid {
        &self.grids.iter().find(|(f, _)| *f == family).expect("every family has a grid").1
    }

    pub fn plan(&self, name: ExperimentName) -> Result<&ExperimentPlan, PipelineError> {
        self.experiments
            .iter()
            .find(|p| p.name == name)
            .ok_or_else(|| err(format!("experiment `{name}` is not declared in the config")))
    }

    /// Replaces the base seed and every plan seed.
    pub fn override_seed(&mut self, seed: u64) {
        self.seed = seed;
        for p in &mut self.experiments {
            p.seed = seed;
        }
    }
}

fn parse_data(raw: RawData, resolve: &dyn Fn(PathBuf) -> PathBuf) -> Result<DataConfig, PipelineError> {
    let mut columns = Vec::with_capacity(raw.columns.len());
    for c in raw.columns {
        match c.kind {
            VariableKind::NormalizedScalar | VariableKind::Binary => {}
            VariableKind::PlausibleValue => {
                return Err(err(format!("column `{}`: list plausible values under data.plausible_values", c.name)))
            }
            VariableKind::CategoricalLabel => {
                return Err(err(format!(
                    "column `{}`: the label is derived from the plausible values and cannot be declared",
                    c.name
                )))
            }
        }
        if c.kind == VariableKind::NormalizedScalar && !c.categories.is_empty() {
            return Err(err(format!("column `{}`: only binary columns take categories", c.name)));
        }
        let categories: Vec<String> = c
            .categories
            .into_iter()
            .map(|t| match t {
                Token::Int(v) => v.to_string(),
                Token::Text(s) => s,
            })
            .collect();
        let spec = VariableSpec {
            name: c.name,
            kind: c.kind,
            range: c.range,
            categories,
            encoded_from: None,
        };
        columns.push(spec);
    }
    let mut names = BTreeSet::new();
    for n in columns.iter().map(|c| &c.name).chain(&raw.plausible_values) {
        if !names.insert(n.as_str()) {
            return Err(err(format!("column `{n}` declared twice")));
        }
    }
    Ok(DataConfig {
        raw: raw.raw.map(resolve),
        preprocessed: resolve(raw.preprocessed),
        missing: raw.missing,
        plausible_values: raw.plausible_values,
        noise: raw.noise,
        noise_in_training: raw.noise_in_training,
        columns,
    })
}

fn parse_family(name: &str) -> Result<Family, PipelineError> {
    Family::parse(name).ok_or_else(|| {
        let known: Vec<&str> = Family::ALL.iter().map(|f| f.name()).collect();
        err(format!("unknown model family `{name}` (expected one of {})", known.join(", ")))
    })
}

fn parse_grids(table: &toml::Table) -> Result<Vec<(Family, Grid)>, PipelineError> {
    let mut overrides = Vec::new();
    for (name, axes) in table {
        let family = parse_family(name)?;
        let axes = axes
            .as_table()
            .ok_or_else(|| err(format!("grids.{name} must be a table of axes")))?;
        let mut grid = Grid { axes: Vec::new() };
        for (axis, values) in axes {
            let values = match values {
                toml::Value::Array(items) => items.iter().map(|v| hyper_value(v, name, axis)).collect::<Result<Vec<_>, _>>()?,
                single => vec![hyper_value(single, name, axis)?],
            };
            if values.is_empty() {
                return Err(err(format!("grids.{name}.{axis} has no values")));
            }
            grid.axes.push((axis.clone(), values));
        }
        if grid.is_empty() {
            return Err(err(format!("grids.{name} is empty")));
        }
        for point in grid.points() {
            let config = ModelConfig {
                family,
                hyperparameters: point,
                seed: 0,
            };
            config.validate().map_err(|e| err(format!("grids.{name}: {e}")))?;
        }
        overrides.push((family, grid));
    }
    Ok(Family::ALL
        .iter()
        .map(|&f| {
            let grid = overrides
                .iter()
                .find(|(g, _)| *g == f)
                .map_or_else(|| f.default_grid(), |(_, g)| g.clone());
            (f, grid)
        })
        .collect())
}

/// `"none"` is an unbounded value; integer arrays are layer sizes.
fn hyper_value(v: &toml::Value, family: &str, axis: &str) -> Result<HyperValue, PipelineError> {
    Ok(match v {
        toml::Value::Integer(i) => HyperValue::Int(*i),
        toml::Value::Float(x) => HyperValue::Float(*x),
        toml::Value::Boolean(b) => HyperValue::Bool(*b),
        toml::Value::String(s) if s.eq_ignore_ascii_case("none") => HyperValue::Null,
        toml::Value::String(s) => HyperValue::Text(s.clone()),
        toml::Value::Array(items) => HyperValue::Sizes(
            items
                .iter()
                .map(|i| match i {
                    toml::Value::Integer(n) if *n > 0 => Ok(*n as usize),
                    _ => Err(err(format!("grids.{family}.{axis}: layer sizes must be positive integers"))),
                })
                .collect::<Result<_, _>>()?,
        ),
        other => return Err(err(format!("grids.{family}.{axis}: unsupported value {other}"))),
    })
}

fn parse_plan(raw: RawPlan, seed: u64) -> Result<ExperimentPlan, PipelineError> {
    let name = ExperimentName::parse(&raw.name).ok_or_else(|| {
        err(format!(
            "unknown experiment `{}` (expected low-medium, high-medium or low-high)",
            raw.name
        ))
    })?;
    let category = |s: Option<String>, fallback: Category| -> Result<Category, PipelineError> {
        match s {
            None => Ok(fallback),
            Some(s) => Category::parse(&s).ok_or_else(|| err(format!("unknown category `{s}`"))),
        }
    };
    let (pos, neg) = name.classes();
    let positive = category(raw.positive, pos)?;
    let negative = category(raw.negative, neg)?;
    if positive == negative {
        return Err(err(format!("experiment `{name}`: positive and negative class are both {positive:?}")));
    }
    let want: BTreeSet<Category> = [pos, neg].into();
    let got: BTreeSet<Category> = [positive, negative].into();
    if want != got {
        return Err(err(format!(
            "experiment `{name}` compares {pos:?} with {neg:?}, not {positive:?} with {negative:?}"
        )));
    }
    let families = match raw.families {
        None => Family::ALL.to_vec(),
        Some(list) => {
            let fams = list.iter().map(|s| parse_family(s)).collect::<Result<Vec<_>, _>>()?;
            if fams.is_empty() {
                return Err(err(format!("experiment `{name}` lists no families")));
            }
            let unique: BTreeSet<Family> = fams.iter().copied().collect();
            if unique.len() != fams.len() {
                return Err(err(format!("experiment `{name}` lists a family twice")));
            }
            fams
        }
    };
    let a = raw.attribution;
    let family = match a.model.as_deref() {
        None | Some("selected") => None,
        Some(f) => {
            let f = parse_family(f)?;
            if !families.contains(&f) {
                return Err(err(format!("experiment `{name}`: attribution model {f} is not searched")));
            }
            Some(f)
        }
    };
    let instances = match a.instances {
        None => Instances::Extremes,
        Some(RawInstances::Keyword(k)) if k == "extremes" => Instances::Extremes,
        Some(RawInstances::Keyword(k)) => {
            return Err(err(format!("attribution.instances must be \"extremes\" or a list of row ids, got `{k}`")))
        }
        Some(RawInstances::Rows(ids)) if ids.is_empty() => return Err(err("attribution.instances lists no rows")),
        Some(RawInstances::Rows(ids)) => Instances::Rows(ids),
    };
    let method = match a.method.as_deref() {
        None | Some("auto") => None,
        Some("exact") => Some(Method::Exact),
        Some("kernel") => Some(Method::Kernel),
        Some("linear") => Some(Method::Linear),
        Some("tree") => Some(Method::Tree),
        Some(m) => return Err(err(format!("unknown attribution method `{m}`"))),
    };
    let background_size = a.background_size.unwrap_or(100);
    if background_size == 0 {
        return Err(err("attribution.background_size must be positive"));
    }
    Ok(ExperimentPlan {
        name,
        positive,
        negative,
        seed: raw.seed.unwrap_or(seed),
        families,
        attribution: AttributionPlan {
            family,
            instances,
            background_size,
            method,
            kernel_budget: a.kernel_budget,
        },
    })
}

//! Declarative run configuration: one TOML document names a workflow and
//! carries sections mirroring the library modules it drives. Unknown keys
//! are rejected everywhere; each workflow additionally rejects sections it
//! does not read, so a config documents exactly what a run consumed.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use prouq::acquisition::AcquisitionSpec;
use prouq::bayes::LikelihoodSpec;
use prouq::error::Error;
use prouq::gp::GpTrainer;
use prouq::harness::ModelSpec;
use prouq::learner::{ActiveLearningConfig, EnsembleSampler, McmcConfig};
use prouq::samplers::FailureCriterion;
use prouq::trainers::{AdamConfig, Schedule};
use prouq::Dist;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Workflow {
    TrainSurrogate,
    Predict,
    ForwardUq,
    InverseUq,
    BayesianOptimization,
    BayesianActiveLearning,
    SurrogateMcmc,
    Pca,
}

impl Workflow {
    pub fn name(self) -> &'static str {
        match self {
            Workflow::TrainSurrogate => "train_surrogate",
            Workflow::Predict => "predict",
            Workflow::ForwardUq => "forward_uq",
            Workflow::InverseUq => "inverse_uq",
            Workflow::BayesianOptimization => "bayesian_optimization",
            Workflow::BayesianActiveLearning => "bayesian_active_learning",
            Workflow::SurrogateMcmc => "surrogate_mcmc",
            Workflow::Pca => "pca",
        }
    }
}

fn default_concurrency() -> usize {
    1
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub workflow: Workflow,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    #[serde(default = "default_concurrency")]
    pub max_concurrency: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<ModelSpec>,
    /// Forward input distributions (forward UQ, optimization).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub distributions: Option<Vec<Dist>>,
    /// Parameter priors followed by the noise-scale prior (inverse UQ).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub priors: Option<Vec<Dist>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sampler: Option<SamplerSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failure: Option<FailureCriterion>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub likelihood: Option<LikelihoodSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub data: Option<DataSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mcmc: Option<McmcSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub acquisition: Option<AcquisitionSpec>,
    #[serde(default, rename = "loop", skip_serializing_if = "Option::is_none")]
    pub driver: Option<LoopSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trainer: Option<TrainerSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train: Option<TrainSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub predict: Option<PredictSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub surrogate: Option<SurrogateSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pca: Option<PcaSection>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SamplerSection {
    MonteCarlo {
        samples: usize,
    },
    LatinHypercube {
        samples: usize,
    },
    /// Adaptive importance sampling; requires a `[failure]` section.
    Importance {
        #[serde(default = "d2000")]
        adaptation_samples: usize,
        #[serde(default = "d2000")]
        estimation_samples: usize,
        #[serde(default = "d1f")]
        proposal_scale: f64,
    },
    /// Subset simulation; requires a `[failure]` section.
    Subset {
        #[serde(default = "d1000")]
        samples_per_subset: usize,
        #[serde(default = "dp0")]
        p0: f64,
        #[serde(default = "d20")]
        max_subsets: usize,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        chains: Option<usize>,
        #[serde(default = "d1f")]
        proposal_scale: f64,
    },
    /// Surrogate-filtered subset simulation; requires `[failure]`.
    ActiveSubset {
        #[serde(default = "d1000")]
        samples_per_subset: usize,
        #[serde(default = "dp0")]
        p0: f64,
        #[serde(default = "d20")]
        max_subsets: usize,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        chains: Option<usize>,
        #[serde(default = "d1f")]
        proposal_scale: f64,
        #[serde(default = "d12")]
        warmup_samples: usize,
        #[serde(default = "d2f")]
        u_threshold: f64,
        #[serde(default = "d200")]
        train_iterations: usize,
    },
}

fn d2000() -> usize {
    2000
}
fn d1000() -> usize {
    1000
}
fn d200() -> usize {
    200
}
fn d20() -> usize {
    20
}
fn d12() -> usize {
    12
}
fn dp0() -> f64 {
    0.1
}
fn d1f() -> f64 {
    1.0
}
fn d2f() -> f64 {
    2.0
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSection {
    /// CSV with one header row; every column except the observation
    /// column is an experimental configuration coordinate.
    pub csv: PathBuf,
    pub observation_column: String,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct McmcSection {
    pub sampler: EnsembleSamplerSection,
    pub walkers: usize,
    pub iterations: usize,
    pub burn_in: usize,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum EnsembleSamplerSection {
    Stretch {
        #[serde(default = "d2f")]
        a: f64,
    },
    DifferentialEvolution {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        gamma: Option<f64>,
        #[serde(default = "default_jitter")]
        jitter: f64,
    },
}

fn default_jitter() -> f64 {
    1e-6
}

impl McmcSection {
    pub fn to_core(&self) -> McmcConfig {
        let sampler = match self.sampler {
            EnsembleSamplerSection::Stretch { a } => EnsembleSampler::Stretch { a },
            EnsembleSamplerSection::DifferentialEvolution { gamma, jitter } => {
                EnsembleSampler::DifferentialEvolution { gamma, jitter }
            }
        };
        McmcConfig {
            sampler,
            walkers: self.walkers,
            iterations: self.iterations,
            burn_in: self.burn_in,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LoopSection {
    pub outer_iterations: usize,
    #[serde(default = "done")]
    pub batch_size: usize,
    #[serde(default = "d1000")]
    pub candidate_pool_size: usize,
    #[serde(default = "d10")]
    pub warmup: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub convergence_tol: Option<f64>,
}

fn done() -> usize {
    1
}
fn d10() -> usize {
    10
}

impl LoopSection {
    pub fn to_core(
        &self,
        acquisition: AcquisitionSpec,
        trainer: GpTrainer,
        max_concurrency: usize,
    ) -> ActiveLearningConfig {
        let mut cfg = ActiveLearningConfig::new(acquisition);
        cfg.trainer = trainer;
        cfg.batch_size = self.batch_size;
        cfg.outer_iterations = self.outer_iterations;
        cfg.candidate_pool_size = self.candidate_pool_size;
        cfg.warmup = self.warmup;
        cfg.convergence_tol = self.convergence_tol;
        cfg.max_concurrency = max_concurrency;
        cfg
    }
}

/// Gradient-trainer knobs; anything omitted keeps the library default.
/// The random-search trainer stays library-only (it needs per-parameter
/// priors that do not map onto a flat section).
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainerSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub learning_rate: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub iterations: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub schedule: Option<Schedule>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weight_decay: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub decoupled: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub batch_size: Option<usize>,
}

impl TrainerSection {
    pub fn to_core(&self) -> GpTrainer {
        let mut config = AdamConfig::default();
        if let Some(v) = self.learning_rate {
            config.learning_rate = v;
        }
        if let Some(v) = self.iterations {
            config.iterations = v;
        }
        if let Some(v) = self.schedule {
            config.schedule = v;
        }
        if let Some(v) = self.weight_decay {
            config.weight_decay = v;
        }
        if let Some(v) = self.decoupled {
            config.decoupled = v;
        }
        GpTrainer::Adam { config, batch_size: self.batch_size }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    /// CSV with one header row; every column except the output column is
    /// an input, in header order.
    pub csv: PathBuf,
    pub output_column: String,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PredictSection {
    pub inputs_csv: PathBuf,
    /// When present, that column is held out as ground truth and
    /// uncertainty diagnostics are emitted alongside the predictions.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub truth_column: Option<String>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SurrogateSection {
    pub path: PathBuf,
}

fn dtrue() -> bool {
    true
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PcaSection {
    /// CSV with one header row, one snapshot per row.
    pub csv: PathBuf,
    pub tau: f64,
    #[serde(default = "dtrue")]
    pub centering: bool,
}

/// Section identifiers used in the per-workflow requirement tables.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Section {
    Model,
    Distributions,
    Priors,
    Sampler,
    Failure,
    Likelihood,
    Data,
    Mcmc,
    Acquisition,
    Loop,
    Trainer,
    Train,
    Predict,
    Surrogate,
    Pca,
}

impl Section {
    fn name(self) -> &'static str {
        match self {
            Section::Model => "model",
            Section::Distributions => "distributions",
            Section::Priors => "priors",
            Section::Sampler => "sampler",
            Section::Failure => "failure",
            Section::Likelihood => "likelihood",
            Section::Data => "data",
            Section::Mcmc => "mcmc",
            Section::Acquisition => "acquisition",
            Section::Loop => "loop",
            Section::Trainer => "trainer",
            Section::Train => "train",
            Section::Predict => "predict",
            Section::Surrogate => "surrogate",
            Section::Pca => "pca",
        }
    }
}

impl RunConfig {
    /// Parses a TOML document that has already had overrides applied.
    pub fn from_value(value: toml::Value) -> Result<Self, Error> {
        let cfg: RunConfig = value
            .try_into()
            .map_err(|e| Error::InvalidConfig(format!("configuration schema: {e}")))?;
        Ok(cfg)
    }

    fn present(&self) -> Vec<Section> {
        let mut out = Vec::new();
        let mut push = |cond: bool, s: Section| {
            if cond {
                out.push(s);
            }
        };
        push(self.model.is_some(), Section::Model);
        push(self.distributions.is_some(), Section::Distributions);
        push(self.priors.is_some(), Section::Priors);
        push(self.sampler.is_some(), Section::Sampler);
        push(self.failure.is_some(), Section::Failure);
        push(self.likelihood.is_some(), Section::Likelihood);
        push(self.data.is_some(), Section::Data);
        push(self.mcmc.is_some(), Section::Mcmc);
        push(self.acquisition.is_some(), Section::Acquisition);
        push(self.driver.is_some(), Section::Loop);
        push(self.trainer.is_some(), Section::Trainer);
        push(self.train.is_some(), Section::Train);
        push(self.predict.is_some(), Section::Predict);
        push(self.surrogate.is_some(), Section::Surrogate);
        push(self.pca.is_some(), Section::Pca);
        out
    }

    fn requirements(&self) -> (&'static [Section], &'static [Section]) {
        use Section::*;
        match self.workflow {
            Workflow::TrainSurrogate => (&[Train], &[Trainer]),
            Workflow::Predict => (&[Surrogate, Predict], &[]),
            Workflow::ForwardUq => (&[Model, Distributions, Sampler], &[Failure]),
            Workflow::InverseUq => (&[Model, Data, Likelihood, Priors, Mcmc], &[]),
            Workflow::BayesianOptimization => {
                (&[Model, Distributions, Acquisition, Loop], &[Trainer])
            }
            Workflow::BayesianActiveLearning => {
                (&[Model, Data, Likelihood, Priors, Acquisition, Loop], &[Trainer])
            }
            Workflow::SurrogateMcmc => (&[Surrogate, Priors, Mcmc], &[]),
            Workflow::Pca => (&[Pca], &[]),
        }
    }

    /// Structural validation: required sections present, irrelevant ones
    /// absent, and every section's own contract satisfied. No compute.
    pub fn validate(&self) -> Result<(), Error> {
        if self.max_concurrency == 0 {
            return Err(Error::InvalidConfig("max_concurrency must be at least 1".into()));
        }
        let (required, optional) = self.requirements();
        let present = self.present();
        for r in required {
            if !present.contains(r) {
                return Err(Error::InvalidConfig(format!(
                    "workflow {} requires a [{}] section",
                    self.workflow.name(),
                    r.name()
                )));
            }
        }
        for p in &present {
            if !required.contains(p) && !optional.contains(p) {
                return Err(Error::InvalidConfig(format!(
                    "workflow {} does not read the [{}] section; remove it",
                    self.workflow.name(),
                    p.name()
                )));
            }
        }
        if let Some(model) = &self.model {
            model.validate()?;
        }
        for dist in self.distributions.iter().flatten().chain(self.priors.iter().flatten()) {
            dist.validate()?;
        }
        if let Some(sampler) = &self.sampler {
            let needs_failure = !matches!(
                sampler,
                SamplerSection::MonteCarlo { .. } | SamplerSection::LatinHypercube { .. }
            );
            if needs_failure && self.failure.is_none() {
                return Err(Error::InvalidConfig(
                    "this sampler kind estimates a failure probability; add a [failure] section"
                        .into(),
                ));
            }
        }
        if let Some(failure) = &self.failure {
            failure.validate()?;
        }
        if let Some(likelihood) = &self.likelihood {
            likelihood.validate()?;
        }
        if let Some(mcmc) = &self.mcmc {
            mcmc.to_core().validate()?;
        }
        if let Some(acq) = &self.acquisition {
            // best_value is supplied per iteration by the drivers.
            let mut probe = acq.clone();
            if probe.best_value.is_none() {
                probe.best_value = Some(0.0);
            }
            probe.validate()?;
        }
        if let Some(section) = &self.driver {
            let acq = self.acquisition.clone().unwrap_or_else(|| {
                AcquisitionSpec::new(prouq::acquisition::AcquisitionKind::UpperConfidenceBound)
            });
            section
                .to_core(
                    acq,
                    self.trainer.clone().unwrap_or_default().to_core(),
                    self.max_concurrency,
                )
                .validate()?;
        }
        if let Some(pca) = &self.pca {
            if !(pca.tau > 0.0 && pca.tau <= 1.0) {
                return Err(Error::InvalidConfig(format!(
                    "pca tau must lie in (0, 1], got {}",
                    pca.tau
                )));
            }
        }
        if self.workflow == Workflow::InverseUq
            || self.workflow == Workflow::BayesianActiveLearning
            || self.workflow == Workflow::SurrogateMcmc
        {
            let priors = self.priors.as_deref().unwrap_or(&[]);
            if self.workflow != Workflow::SurrogateMcmc && priors.len() < 2 {
                return Err(Error::InvalidConfig(
                    "inverse workflows need at least one parameter prior plus the \
                     noise-scale prior (last entry)"
                        .into(),
                ));
            }
        }
        Ok(())
    }
}

/// Applies one `path.to.key=value` override to a parsed TOML tree,
/// creating intermediate tables as needed. Numeric segments index arrays.
pub fn apply_override(root: &mut toml::Value, assignment: &str) -> Result<(), Error> {
    let (path, raw) = assignment.split_once('=').ok_or_else(|| {
        Error::InvalidConfig(format!("override '{assignment}' is not of the form key=value"))
    })?;
    let path = path.trim();
    if path.is_empty() {
        return Err(Error::InvalidConfig("override has an empty key path".into()));
    }
    let value = parse_override_value(raw.trim());

    let segments: Vec<&str> = path.split('.').collect();
    let mut node = root;
    for (i, seg) in segments.iter().enumerate() {
        let last = i + 1 == segments.len();
        if let Ok(index) = seg.parse::<usize>() {
            let arr = node.as_array_mut().ok_or_else(|| {
                Error::InvalidConfig(format!("override path '{path}': '{seg}' indexes a non-array"))
            })?;
            if index >= arr.len() {
                return Err(Error::InvalidConfig(format!(
                    "override path '{path}': index {index} out of bounds (len {})",
                    arr.len()
                )));
            }
            if last {
                arr[index] = value;
                return Ok(());
            }
            node = &mut arr[index];
        } else {
            let table = node.as_table_mut().ok_or_else(|| {
                Error::InvalidConfig(format!(
                    "override path '{path}': '{seg}' descends into a non-table"
                ))
            })?;
            if last {
                table.insert((*seg).to_string(), value);
                return Ok(());
            }
            node = table
                .entry((*seg).to_string())
                .or_insert_with(|| toml::Value::Table(Default::default()));
        }
    }
    unreachable!("loop returns on the last segment");
}

/// Interprets the right-hand side as a TOML literal, falling back to a
/// bare string so `--set train.output_column=y` needs no quoting.
fn parse_override_value(raw: &str) -> toml::Value {
    let doc = format!("v = {raw}");
    match doc.parse::<toml::Table>() {
        Ok(mut table) => table.remove("v").expect("key v exists"),
        Err(_) => toml::Value::String(raw.to_string()),
    }
}

/// Loads, overrides, deserializes, and validates a configuration file.
pub fn load_config(path: &Path, overrides: &[String]) -> Result<RunConfig, Error> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::InvalidConfig(format!("reading {}: {e}", path.display())))?;
    let table: toml::Table = text
        .parse()
        .map_err(|e| Error::InvalidConfig(format!("parsing {}: {e}", path.display())))?;
    let mut value = toml::Value::Table(table);
    for assignment in overrides {
        apply_override(&mut value, assignment)?;
    }
    let cfg = RunConfig::from_value(value)?;
    cfg.validate()?;
    Ok(cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(doc: &str) -> Result<RunConfig, Error> {
        let table: toml::Table = doc.parse().expect("valid toml");
        let cfg = RunConfig::from_value(toml::Value::Table(table))?;
        cfg.validate()?;
        Ok(cfg)
    }

    fn parse_value(doc: &str) -> toml::Value {
        toml::Value::Table(doc.parse::<toml::Table>().expect("valid toml"))
    }

    const BO_DOC: &str = r#"
        workflow = "bayesian_optimization"
        seed = 3

        [model]
        kind = "builtin"
        name = "quadratic"
        [model.params]
        center = [1.0]

        [[distributions]]
        kind = "uniform"
        low = -2.0
        high = 2.0

        [acquisition]
        kind = "expected_improvement"

        [loop]
        outer_iterations = 4
        warmup = 3
    "#;

    #[test]
    fn bayesian_optimization_document_round_trips() {
        let cfg = parse(BO_DOC).unwrap();
        assert_eq!(cfg.workflow, Workflow::BayesianOptimization);
        assert_eq!(cfg.max_concurrency, 1);
        assert_eq!(cfg.driver.as_ref().unwrap().batch_size, 1);
        assert_eq!(cfg.driver.as_ref().unwrap().candidate_pool_size, 1000);
    }

    #[test]
    fn unknown_keys_are_rejected_with_a_named_path() {
        let doc = BO_DOC.replace("[loop]", "[loop]\n        typo_key = 1");
        let err = parse(&doc).unwrap_err();
        assert!(err.to_string().contains("typo_key"), "{err}");
    }

    #[test]
    fn missing_required_section_names_the_section() {
        let doc = BO_DOC.replace("[acquisition]\n        kind = \"expected_improvement\"", "");
        let err = parse(&doc).unwrap_err();
        assert!(err.to_string().contains("[acquisition]"), "{err}");
    }

    #[test]
    fn sections_unread_by_the_workflow_are_rejected() {
        let doc = format!("{BO_DOC}\n        [pca]\n        csv = \"x.csv\"\n        tau = 0.1");
        let err = parse(&doc).unwrap_err();
        assert!(err.to_string().contains("[pca]"), "{err}");
    }

    #[test]
    fn unknown_sampler_kind_lists_the_valid_kinds() {
        let doc = r#"
            workflow = "forward_uq"
            seed = 1
            [model]
            kind = "builtin"
            name = "sum_of_squares"
            [[distributions]]
            kind = "normal"
            mean = 0.0
            std = 1.0
            [sampler]
            kind = "bogus"
            samples = 10
        "#;
        let err = parse(doc).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("monte_carlo") && msg.contains("subset"), "{msg}");
    }

    #[test]
    fn rare_event_samplers_demand_a_failure_section() {
        let doc = r#"
            workflow = "forward_uq"
            seed = 1
            [model]
            kind = "builtin"
            name = "sum_of_squares"
            [[distributions]]
            kind = "normal"
            mean = 0.0
            std = 1.0
            [sampler]
            kind = "subset"
        "#;
        let err = parse(doc).unwrap_err();
        assert!(err.to_string().contains("[failure]"), "{err}");
    }

    #[test]
    fn overrides_replace_scalars_arrays_and_nested_keys() {
        let mut value = parse_value(BO_DOC);
        apply_override(&mut value, "seed=99").unwrap();
        apply_override(&mut value, "distributions.0.low=-5.0").unwrap();
        apply_override(&mut value, "model.params.center=[2.5]").unwrap();
        apply_override(&mut value, "loop.batch_size=3").unwrap();
        let cfg = RunConfig::from_value(value).unwrap();
        cfg.validate().unwrap();
        assert_eq!(cfg.seed, 99);
        assert_eq!(cfg.driver.unwrap().batch_size, 3);
        match &cfg.distributions.unwrap()[0] {
            Dist::Uniform { low, .. } => assert_eq!(*low, -5.0),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn override_without_equals_sign_is_invalid() {
        let mut value = parse_value(BO_DOC);
        assert!(apply_override(&mut value, "seed").is_err());
        assert!(apply_override(&mut value, "distributions.7.low=1").is_err());
    }

    #[test]
    fn bare_string_overrides_need_no_quoting() {
        assert_eq!(parse_override_value("y"), toml::Value::String("y".into()));
        assert_eq!(parse_override_value("7"), toml::Value::Integer(7));
        assert_eq!(parse_override_value("-2.5"), toml::Value::Float(-2.5));
        assert_eq!(parse_override_value("true"), toml::Value::Boolean(true));
    }
}

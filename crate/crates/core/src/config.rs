//! YAML experiment configuration. One file describes the whole experiment:
//! where each client's data comes from, how it is polluted, which modules
//! run, and how the report is built.
//!
//! ```yaml
//! experiment_id: dedup-demo
//! seeds: { global: 7 }
//! clients:
//!   - client_id: site-a
//!     data: { synth: { type: tabular, n_rows: 200, n_features: 4, n_groups: 2, n_classes: 2 } }
//! pollution:
//!   - { type: duplicate_rows, fraction: 0.2 }
//! cadre_modules:
//!   - { name: duplicate_management, rule: "duplicate_proportion > 0" }
//! ```

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::args::Args;
use crate::error::{Error, Result};
use crate::io::{self, Format};
use crate::pollution::{
    partition, pollute, synth_table, PartitionSpec, PartitionStrategy, PollutionKind,
    PollutionSpec, SynthProfile,
};
use crate::readiness::{CadreModule, ModuleArgs, ModuleRegistry, DEFAULT_MAX_ITERATIONS};
use crate::report::DEFAULT_SAMPLE_SIZE;
use crate::rules::parse_rule;
use crate::seed::derive_seed;
use crate::table::{DataTable, DatasetMeta};

pub const DEFAULT_OUTPUT_DIR: &str = "cadre-output";
pub const DEFAULT_CLIENT_DEADLINE_SECONDS: f64 = 30.0;
pub const OUTPUT_DIR_ENV: &str = "CADRE_OUTPUT_DIR";

fn default_output_dir() -> PathBuf {
    PathBuf::from(DEFAULT_OUTPUT_DIR)
}

fn default_deadline() -> f64 {
    DEFAULT_CLIENT_DEADLINE_SECONDS
}

fn default_sample_size() -> usize {
    DEFAULT_SAMPLE_SIZE
}

fn default_max_iterations() -> usize {
    DEFAULT_MAX_ITERATIONS
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Seeds {
    #[serde(default)]
    pub global: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Deadlines {
    #[serde(default = "default_deadline")]
    pub client_seconds: f64,
}

impl Default for Deadlines {
    fn default() -> Self {
        Deadlines {
            client_seconds: DEFAULT_CLIENT_DEADLINE_SECONDS,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PcaConfig {
    /// Empty means every numeric non-label column of each client.
    #[serde(default)]
    pub feature_columns: Vec<String>,
    #[serde(default = "default_sample_size")]
    pub sample_size: usize,
}

impl Default for PcaConfig {
    fn default() -> Self {
        PcaConfig {
            feature_columns: Vec::new(),
            sample_size: DEFAULT_SAMPLE_SIZE,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileSource {
    pub path: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub format: Option<Format>,
    /// Column schema; defaults to the `<path>.schema.yaml` sidecar when present.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub schema: Option<PathBuf>,
}

/// Exactly one of the fields is set.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSource {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub synth: Option<SynthProfile>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub file: Option<FileSource>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub partition: Option<usize>,
}

/// Metadata fields that override what the data source provides.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetaOverrides {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label_column: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sensitive_feature: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sensitive_groups: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub quasi_identifiers: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub positive_label: Option<String>,
}

impl MetaOverrides {
    fn is_empty(&self) -> bool {
        *self == MetaOverrides::default()
    }

    pub fn apply(&self, meta: &mut DatasetMeta) {
        if let Some(v) = &self.label_column {
            meta.label_column = Some(v.clone());
        }
        if let Some(v) = &self.sensitive_feature {
            meta.sensitive_feature = Some(v.clone());
        }
        if let Some(v) = &self.sensitive_groups {
            meta.sensitive_groups = v.clone();
        }
        if let Some(v) = &self.quasi_identifiers {
            meta.quasi_identifiers = v.clone();
        }
        if let Some(v) = &self.positive_label {
            meta.positive_label = Some(v.clone());
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SourceConfig {
    pub data: DataSource,
    #[serde(default, skip_serializing_if = "MetaOverrides::is_empty")]
    pub meta: MetaOverrides,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PartitionConfig {
    pub n_clients: usize,
    pub strategy: PartitionStrategy,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rng_seed: Option<u64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PollutionConfig {
    #[serde(flatten)]
    pub kind: PollutionKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rng_seed: Option<u64>,
    /// Clients to pollute; empty means all.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub clients: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClientConfig {
    pub client_id: String,
    pub data: DataSource,
    #[serde(default, skip_serializing_if = "MetaOverrides::is_empty")]
    pub meta: MetaOverrides,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModuleConfig {
    pub name: String,
    /// Rule expression; the module's default rule when left empty.
    #[serde(default)]
    pub rule: String,
    #[serde(default, skip_serializing_if = "Args::is_empty")]
    pub remedy_args: Args,
    #[serde(default, skip_serializing_if = "Args::is_empty")]
    pub metric_args: Args,
    #[serde(default = "default_max_iterations")]
    pub max_iterations: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment_id: String,
    #[serde(default)]
    pub seeds: Seeds,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    #[serde(default)]
    pub deadlines: Deadlines,
    #[serde(default)]
    pub pca: PcaConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source: Option<SourceConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub partition: Option<PartitionConfig>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub pollution: Vec<PollutionConfig>,
    #[serde(default)]
    pub clients: Vec<ClientConfig>,
    #[serde(default)]
    pub cadre_modules: Vec<ModuleConfig>,
    /// Directory relative data paths resolve against. Not part of the YAML.
    #[serde(skip)]
    pub base_dir: Option<PathBuf>,
}

pub fn parse_config(path: &Path) -> Result<ExperimentConfig> {
    parse_config_with(path, &ModuleRegistry::builtin())
}

pub fn parse_config_with(path: &Path, registry: &ModuleRegistry) -> Result<ExperimentConfig> {
    let text = fs::read_to_string(path)
        .map_err(|e| Error::config("<file>", format!("{}: {e}", path.display())))?;
    let mut cfg = parse_config_str(&text, registry)?;
    cfg.base_dir = path.parent().map(Path::to_path_buf);
    Ok(cfg)
}

/// Parses, validates and fills every default.
pub fn parse_config_str(text: &str, registry: &ModuleRegistry) -> Result<ExperimentConfig> {
    let mut cfg: ExperimentConfig = serde_yaml::from_str(text).map_err(|e| {
        let reason = e.to_string();
        // serde_yaml prefixes the field path as `a.b[0].c: `
        match reason.split_once(": ") {
            Some((path, rest)) if !path.contains(' ') => Error::config(path, rest),
            _ => Error::config("<root>", reason),
        }
    })?;
    cfg.materialize(registry)?;
    Ok(cfg)
}

/// Canonical YAML of a parsed config.
pub fn render_config(cfg: &ExperimentConfig) -> Result<String> {
    serde_yaml::to_string(cfg).map_err(|e| Error::config("<root>", e.to_string()))
}

fn check_source(data: &DataSource, path: &str, allow_partition: bool) -> Result<()> {
    let set = [
        data.synth.is_some(),
        data.file.is_some(),
        data.partition.is_some(),
    ]
    .iter()
    .filter(|b| **b)
    .count();
    if set != 1 {
        return Err(Error::config(
            path,
            "set exactly one of `synth`, `file`, `partition`",
        ));
    }
    if data.partition.is_some() && !allow_partition {
        return Err(Error::config(
            format!("{path}.partition"),
            "not allowed here",
        ));
    }
    if let Some(SynthProfile::Tabular {
        n_rows,
        n_features,
        n_groups,
        n_classes,
    }) = &data.synth
    {
        if [*n_rows, *n_features, *n_groups, *n_classes].contains(&0) {
            return Err(Error::config(
                format!("{path}.synth"),
                "dimensions must be at least 1",
            ));
        }
    }
    if let Some(SynthProfile::ImageLike { n_rows, n_pixels }) = &data.synth {
        if *n_rows == 0 || *n_pixels == 0 {
            return Err(Error::config(
                format!("{path}.synth"),
                "dimensions must be at least 1",
            ));
        }
    }
    Ok(())
}

fn materialize_file(data: &mut DataSource) {
    if let Some(f) = &mut data.file {
        if f.format.is_none() {
            f.format = Some(Format::from_path(&f.path));
        }
    }
}

impl ExperimentConfig {
    fn materialize(&mut self, registry: &ModuleRegistry) -> Result<()> {
        if self.experiment_id.trim().is_empty() {
            return Err(Error::config("experiment_id", "must not be empty"));
        }
        let secs = self.deadlines.client_seconds;
        if !(secs.is_finite() && secs > 0.0) {
            return Err(Error::config(
                "deadlines.client_seconds",
                "must be a positive number",
            ));
        }
        if self.pca.sample_size == 0 {
            return Err(Error::config("pca.sample_size", "must be at least 1"));
        }
        match (&mut self.source, &self.partition) {
            (Some(src), Some(p)) => {
                check_source(&src.data, "source.data", false)?;
                materialize_file(&mut src.data);
                self.partition_spec_from(p).validate()?;
            }
            (None, Some(_)) => {
                return Err(Error::config("source", "required when `partition` is set"))
            }
            (Some(_), None) => {
                return Err(Error::config("partition", "required when `source` is set"))
            }
            (None, None) => {}
        }
        if self.clients.is_empty() {
            match &self.partition {
                Some(p) => {
                    self.clients = (0..p.n_clients)
                        .map(|i| ClientConfig {
                            client_id: format!("client-{i}"),
                            data: DataSource {
                                partition: Some(i),
                                ..Default::default()
                            },
                            meta: MetaOverrides::default(),
                        })
                        .collect();
                }
                None => return Err(Error::config("clients", "at least one client is required")),
            }
        }
        let mut seen = BTreeSet::new();
        for (i, c) in self.clients.iter_mut().enumerate() {
            let path = format!("clients[{i}]");
            if c.client_id.trim().is_empty() {
                return Err(Error::config(
                    format!("{path}.client_id"),
                    "must not be empty",
                ));
            }
            if !seen.insert(c.client_id.clone()) {
                return Err(Error::config(
                    format!("{path}.client_id"),
                    format!("duplicate id `{}`", c.client_id),
                ));
            }
            check_source(&c.data, &format!("{path}.data"), true)?;
            if let Some(k) = c.data.partition {
                match &self.partition {
                    Some(p) if k < p.n_clients => {}
                    Some(p) => {
                        return Err(Error::config(
                            format!("{path}.data.partition"),
                            format!("index {k} out of range for {} partitions", p.n_clients),
                        ))
                    }
                    None => {
                        return Err(Error::config(
                            format!("{path}.data.partition"),
                            "no `partition` section",
                        ))
                    }
                }
            }
            materialize_file(&mut c.data);
        }
        for (i, p) in self.pollution.iter().enumerate() {
            p.kind
                .validate()
                .map_err(|e| Error::config(format!("pollution[{i}]"), e.to_string()))?;
            for id in &p.clients {
                if !seen.contains(id) {
                    return Err(Error::config(
                        format!("pollution[{i}].clients"),
                        format!("unknown client `{id}`"),
                    ));
                }
            }
        }
        for (i, m) in self.cadre_modules.iter_mut().enumerate() {
            let path = format!("cadre_modules[{i}]");
            if !registry.contains(&m.name) {
                return Err(Error::config(
                    format!("{path}.name"),
                    format!("unknown module `{}`", m.name),
                ));
            }
            let rule = if m.rule.trim().is_empty() {
                None
            } else {
                Some(
                    parse_rule(&m.rule)
                        .map_err(|e| Error::config(format!("{path}.rule"), e.to_string()))?,
                )
            };
            let module = registry
                .construct(&m.name, &module_args(m, rule))
                .map_err(|e| Error::config(path.clone(), e.to_string()))?;
            m.rule = module.rule.to_string();
        }
        Ok(())
    }

    fn partition_spec_from(&self, p: &PartitionConfig) -> PartitionSpec {
        PartitionSpec {
            n_clients: p.n_clients,
            strategy: p.strategy.clone(),
            rng_seed: p
                .rng_seed
                .unwrap_or_else(|| derive_seed(self.seeds.global, "partition")),
        }
    }

    pub fn client_ids(&self) -> Vec<String> {
        self.clients.iter().map(|c| c.client_id.clone()).collect()
    }

    pub fn client(&self, client_id: &str) -> Result<&ClientConfig> {
        self.clients
            .iter()
            .find(|c| c.client_id == client_id)
            .ok_or_else(|| Error::config("clients", format!("no client `{client_id}`")))
    }

    /// Applies `CADRE_OUTPUT_DIR` and a command-line seed.
    pub fn apply_overrides(&mut self, seed: Option<u64>) {
        if let Some(dir) = std::env::var_os(OUTPUT_DIR_ENV) {
            self.output_dir = PathBuf::from(dir);
        }
        if let Some(s) = seed {
            self.seeds.global = s;
        }
    }

    fn resolve(&self, p: &Path) -> PathBuf {
        match &self.base_dir {
            Some(base) if p.is_relative() => base.join(p),
            _ => p.to_path_buf(),
        }
    }

    fn load_source(
        &self,
        data: &DataSource,
        meta: DatasetMeta,
        seed_label: &str,
    ) -> Result<DataTable> {
        if let Some(profile) = &data.synth {
            let t = synth_table(profile, derive_seed(self.seeds.global, seed_label))?;
            let mut full = t.meta().clone();
            full.client_id = meta.client_id.clone();
            return t.with_meta(full);
        }
        if let Some(f) = &data.file {
            let path = self.resolve(&f.path);
            let schema_path = match &f.schema {
                Some(s) => Some(self.resolve(s)),
                None => Some(io::sidecar_path(&path)).filter(|p| p.exists()),
            };
            let schema = schema_path.map(|p| io::read_schema(&p)).transpose()?;
            let format = f.format.unwrap_or_else(|| Format::from_path(&path));
            let text = fs::read_to_string(&path)
                .map_err(|e| Error::config("data.file.path", format!("{}: {e}", path.display())))?;
            // metadata names are applied after the columns exist
            let t = io::parse_table(
                &text,
                format,
                DatasetMeta::new(meta.client_id.clone()),
                schema.as_ref(),
            )?;
            return Ok(t);
        }
        Err(Error::config("data", "no data source"))
    }

    /// The client's table as its data source, metadata and pollution
    /// settings describe it.
    pub fn client_table(&self, client_id: &str) -> Result<DataTable> {
        let c = self.client(client_id)?;
        let table = match c.data.partition {
            Some(k) => {
                let src = self
                    .source
                    .as_ref()
                    .ok_or_else(|| Error::config("source", "missing"))?;
                let spec = self.partition_spec_from(self.partition.as_ref().expect("validated"));
                let base = self.load_source(&src.data, DatasetMeta::default(), "synth/source")?;
                let mut meta = base.meta().clone();
                src.meta.apply(&mut meta);
                let base = base.with_meta(meta)?;
                partition(&base, &spec)?.swap_remove(k)
            }
            None => self.load_source(
                &c.data,
                DatasetMeta::new(client_id),
                &format!("synth/{client_id}"),
            )?,
        };
        let mut meta = table.meta().clone();
        meta.client_id = client_id.to_string();
        c.meta.apply(&mut meta);
        let mut table = table.with_meta(meta)?;
        for (j, p) in self.pollution.iter().enumerate() {
            if !p.clients.is_empty() && !p.clients.iter().any(|id| id == client_id) {
                continue;
            }
            let spec = PollutionSpec {
                kind: p.kind.clone(),
                rng_seed: p.rng_seed.unwrap_or_else(|| {
                    derive_seed(self.seeds.global, &format!("pollution/{j}/{client_id}"))
                }),
            };
            table = pollute(&table, &spec)?;
        }
        Ok(table)
    }
}

fn module_args(m: &ModuleConfig, rule: Option<crate::rules::Rule>) -> ModuleArgs {
    ModuleArgs {
        rule,
        metric_args: m.metric_args.clone(),
        remedy_args: m.remedy_args.clone(),
        max_iterations: Some(m.max_iterations),
    }
}

/// Instantiates configured modules for one client. Stochastic remedies
/// without an explicit seed get one derived from the global seed.
pub fn build_modules(
    modules: &[ModuleConfig],
    registry: &ModuleRegistry,
    global_seed: u64,
    client_id: &str,
) -> Result<Vec<CadreModule>> {
    modules
        .iter()
        .enumerate()
        .map(|(i, m)| {
            let rule = if m.rule.trim().is_empty() {
                None
            } else {
                Some(parse_rule(&m.rule)?)
            };
            let mut module = registry.construct(&m.name, &module_args(m, rule))?;
            if module.remedy.kind.is_stochastic() && !m.remedy_args.contains_key("rng_seed") {
                let seed = derive_seed(global_seed, &format!("remedy/{client_id}/{i}/{}", m.name));
                module.remedy.args.insert("rng_seed".into(), seed.into());
            }
            Ok(module)
        })
        .collect()
}

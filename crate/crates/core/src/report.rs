//! Run configuration, sweeps over `(ε, seed)` and report emission: atomic
//! file writes, certificate JSON and the sweep CSV.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::attacks::{run_attack, AttackKind, AttackOutcome, AttackSpec};
use crate::certify::{certify, Certificate, CertifyConfig};
use crate::data::{floor_count, generate_gaussian, load_dataset, Dataset, Format, GaussianSpec};
use crate::defense::{DefenseConfig, DefenseKind, FeasibleSet};
use crate::error::{Error, Result};
use crate::model::{evaluate, TrainConfig};
use crate::sdp::{DataDependentConfig, SolverConfig};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

pub const SWEEP_HEADER: &str =
    "eps,upper_bound,lower_bound,clean_train_loss,test_hinge,test_zero_one,duality_gap,regret_bound";

/// Writes `bytes` to a sibling temp file, then renames it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let name = path
        .file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "out".into());
    let tmp = dir.join(format!(".{name}.tmp{}", std::process::id()));
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    if let Err(e) = fs::rename(&tmp, path) {
        let _ = fs::remove_file(&tmp);
        return Err(e.into());
    }
    Ok(())
}

/// Where the clean data comes from: files, or a generated Gaussian mixture
/// split into train and test.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSource {
    pub train: Option<PathBuf>,
    pub test: Option<PathBuf>,
    pub format: Format,
    pub gaussian: Option<GaussianSpec>,
    pub train_fraction: f64,
}

impl Default for DataSource {
    fn default() -> Self {
        Self {
            train: None,
            test: None,
            format: Format::DenseCsv,
            gaussian: None,
            train_fraction: 0.8,
        }
    }
}

/// Generates the mixture and splits it, train part first.
pub fn gaussian_split(spec: &GaussianSpec, train_fraction: f64) -> Result<(Dataset, Dataset)> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::Config(format!(
            "train_fraction must be in (0,1), got {train_fraction}"
        )));
    }
    let all = generate_gaussian(spec)?;
    let k = floor_count(train_fraction * all.len() as f64).clamp(1, all.len() - 1);
    Ok(all.split_at(k))
}

impl DataSource {
    pub fn load(&self) -> Result<(Dataset, Option<Dataset>)> {
        match (&self.train, &self.gaussian) {
            (Some(_), Some(_)) => Err(Error::Config(
                "data: give either a train path or a gaussian spec, not both".into(),
            )),
            (Some(path), None) => {
                let train = load_dataset(path, self.format)?;
                let test = self.test.as_ref().map(|p| load_dataset(p, self.format)).transpose()?;
                if let Some(t) = &test {
                    Error::check_dim(train.dim(), t.dim())?;
                }
                Ok((train, test))
            }
            (None, Some(spec)) => {
                let (train, test) = gaussian_split(spec, self.train_fraction)?;
                Ok((train, Some(test)))
            }
            (None, None) => Err(Error::Config("data: no train path or gaussian spec".into())),
        }
    }
}

/// Options of the `attack` command.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AttackOptions {
    pub kind: AttackKind,
    pub steps: usize,
    pub step_size: f64,
}

impl Default for AttackOptions {
    fn default() -> Self {
        Self {
            kind: AttackKind::CertificateAttack,
            steps: 20,
            step_size: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub data: DataSource,
    pub defense: DefenseConfig,
    pub eps: Vec<f64>,
    pub seeds: Vec<u64>,
    pub rho: f64,
    pub eta: Option<f64>,
    pub steps: Option<usize>,
    pub sdp_samples: usize,
    pub attack_samples: usize,
    pub retrain_top_k: usize,
    pub rounding_budget: usize,
    pub solver: SolverConfig,
    pub train: TrainConfig,
    pub attack: AttackOptions,
    /// Not part of the echoed config: it does not change any result.
    #[serde(skip_serializing)]
    pub out: PathBuf,
    #[serde(skip_serializing)]
    pub jobs: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        let base = CertifyConfig::default();
        Self {
            data: DataSource::default(),
            defense: DefenseConfig::default(),
            eps: vec![0.1],
            seeds: vec![0],
            rho: base.rho,
            eta: None,
            steps: None,
            sdp_samples: base.sdp.samples,
            attack_samples: base.attack_samples,
            retrain_top_k: base.retrain_top_k,
            rounding_budget: base.rounding_budget,
            solver: base.sdp.solver,
            train: base.train,
            attack: AttackOptions::default(),
            out: PathBuf::from("out"),
            jobs: 1,
        }
    }
}

impl RunConfig {
    /// Parses a JSON config; errors carry the offending line.
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Parse {
            line: e.line(),
            msg: e.to_string(),
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<()> {
        if self.eps.is_empty() {
            return Err(Error::Config("eps list is empty".into()));
        }
        if let Some(e) = self.eps.iter().find(|e| !(0.0..=1.0).contains(*e)) {
            return Err(Error::Config(format!("eps values must be in [0,1], got {e}")));
        }
        if self.seeds.is_empty() {
            return Err(Error::Config("at least one seed is required".into()));
        }
        if !(self.rho > 0.0 && self.rho.is_finite()) {
            return Err(Error::Config(format!("rho must be positive, got {}", self.rho)));
        }
        if self.jobs == 0 {
            return Err(Error::Config("jobs must be >= 1".into()));
        }
        if self.defense.integer_features && self.defense.kind == DefenseKind::DataDependent {
            return Err(Error::Config(
                "integer features are only supported with the oracle defense".into(),
            ));
        }
        Ok(())
    }

    /// Hex SHA-256 of the echoed config.
    pub fn hash(&self) -> Result<String> {
        let bytes = serde_json::to_vec(self)?;
        Ok(Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect())
    }

    pub fn certify_config(&self, eps: f64, seed: u64) -> CertifyConfig {
        let base = CertifyConfig::default();
        CertifyConfig {
            eps,
            rho: self.rho,
            eta: self.eta,
            steps: self.steps,
            seed,
            train: self.train,
            rounding_budget: self.rounding_budget,
            sdp: DataDependentConfig {
                samples: self.sdp_samples,
                seed,
                solver: self.solver,
                ..base.sdp
            },
            attack_samples: self.attack_samples,
            retrain_top_k: self.retrain_top_k,
            ..base
        }
    }

    fn grid(&self) -> Vec<(f64, u64)> {
        self.eps
            .iter()
            .flat_map(|&e| self.seeds.iter().map(move |&s| (e, s)))
            .collect()
    }

    fn pool(&self) -> Result<rayon::ThreadPool> {
        rayon::ThreadPoolBuilder::new()
            .num_threads(self.jobs)
            .build()
            .map_err(|e| Error::Config(format!("worker pool: {e}")))
    }
}

#[derive(Serialize)]
pub struct CertificateReport<'a> {
    pub version: &'static str,
    pub config_hash: &'a str,
    pub config: &'a RunConfig,
    pub seed: u64,
    pub test_hinge: Option<f64>,
    pub test_zero_one: Option<f64>,
    pub certificate: &'a Certificate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub eps: f64,
    pub upper_bound: f64,
    pub lower_bound: f64,
    pub clean_train_loss: f64,
    pub test_hinge: Option<f64>,
    pub test_zero_one: Option<f64>,
    pub duality_gap: f64,
    pub regret_bound: f64,
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut s = String::from(SWEEP_HEADER);
    s.push('\n');
    for r in rows {
        s.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            r.eps,
            r.upper_bound,
            r.lower_bound,
            r.clean_train_loss,
            opt(r.test_hinge),
            opt(r.test_zero_one),
            r.duality_gap,
            r.regret_bound
        ));
    }
    s
}

pub fn certificate_path(out: &Path, eps: f64, seed: u64) -> PathBuf {
    out.join(format!("certificate_eps{eps}_seed{seed}.json"))
}

fn json_bytes<T: Serialize>(v: &T) -> Result<Vec<u8>> {
    let mut b = serde_json::to_vec_pretty(v)?;
    b.push(b'\n');
    Ok(b)
}

/// Runs every `(ε, seed)` pair, writes one certificate JSON each and the
/// sweep CSV. Rows follow the config order regardless of `jobs`. When runs
/// fail, the successful ones are still written and the first error is
/// returned.
pub fn run_certify(config: &RunConfig) -> Result<Vec<SweepRow>> {
    config.validate()?;
    let (train, test) = config.data.load()?;
    let f = config.defense.build(&train)?;
    fs::create_dir_all(&config.out)?;
    let hash = config.hash()?;
    let grid = config.grid();
    let results: Vec<Result<SweepRow>> = config.pool()?.install(|| {
        grid.par_iter()
            .map(|&(eps, seed)| certify_one(config, &hash, &train, test.as_ref(), &f, eps, seed))
            .collect()
    });
    finish(config, results)
}

fn certify_one(
    config: &RunConfig,
    hash: &str,
    train: &Dataset,
    test: Option<&Dataset>,
    f: &FeasibleSet,
    eps: f64,
    seed: u64,
) -> Result<SweepRow> {
    let cert = certify(train, f, &config.certify_config(eps, seed))?;
    let on_test = test.map(|t| evaluate(&cert.model_tilde, t)).transpose()?;
    let report = CertificateReport {
        version: VERSION,
        config_hash: hash,
        config,
        seed,
        test_hinge: on_test.as_ref().map(|r| r.avg_hinge),
        test_zero_one: on_test.as_ref().map(|r| r.zero_one),
        certificate: &cert,
    };
    write_atomic(&certificate_path(&config.out, eps, seed), &json_bytes(&report)?)?;
    Ok(SweepRow {
        eps,
        upper_bound: cert.upper_bound,
        lower_bound: cert.lower_bound,
        clean_train_loss: cert.clean_train_loss,
        test_hinge: report.test_hinge,
        test_zero_one: report.test_zero_one,
        duality_gap: cert.duality_gap,
        regret_bound: cert.regret_bound,
    })
}

fn finish(config: &RunConfig, results: Vec<Result<SweepRow>>) -> Result<Vec<SweepRow>> {
    let mut rows = Vec::with_capacity(results.len());
    let mut first_err = None;
    for r in results {
        match r {
            Ok(row) => rows.push(row),
            Err(e) => {
                log::error!("run failed: {e}");
                first_err.get_or_insert(e);
            }
        }
    }
    write_atomic(&config.out.join("sweep.csv"), sweep_csv(&rows).as_bytes())?;
    match first_err {
        Some(e) => Err(e),
        None => Ok(rows),
    }
}

#[derive(Serialize)]
pub struct AttackReport<'a> {
    pub version: &'static str,
    pub config_hash: &'a str,
    pub config: &'a RunConfig,
    pub seed: u64,
    pub attack_file: String,
    #[serde(flatten)]
    pub outcome: &'a AttackOutcome,
}

pub fn attack_stem(kind: AttackKind, eps: f64, seed: u64) -> String {
    let name = match kind {
        AttackKind::LabelFlip => "label-flip",
        AttackKind::Gradient => "gradient",
        AttackKind::CertificateAttack => "certificate-attack",
    };
    format!("attack_{name}_eps{eps}_seed{seed}")
}

/// Runs the configured attack for every `(ε, seed)` pair, writing the attack
/// points as dense CSV and a JSON report next to them.
pub fn run_attacks(config: &RunConfig) -> Result<Vec<AttackOutcome>> {
    config.validate()?;
    if let Some(e) = config.eps.iter().find(|&&e| e <= 0.0) {
        return Err(Error::Config(format!("attacks need eps > 0, got {e}")));
    }
    let (train, test) = config.data.load()?;
    let f = config.defense.build(&train)?;
    fs::create_dir_all(&config.out)?;
    let hash = config.hash()?;
    let grid = config.grid();
    let results: Vec<Result<AttackOutcome>> = config.pool()?.install(|| {
        grid.par_iter()
            .map(|&(eps, seed)| {
                let spec = AttackSpec {
                    kind: config.attack.kind,
                    eps,
                    seed,
                    steps: config.attack.steps,
                    step_size: config.attack.step_size,
                };
                let outcome = run_attack(&train, test.as_ref(), &f, &spec, &config.certify_config(eps, seed))?;
                let stem = attack_stem(spec.kind, eps, seed);
                let csv = format!("{stem}.csv");
                write_atomic(&config.out.join(&csv), outcome.attack.to_dense_csv().as_bytes())?;
                let report = AttackReport {
                    version: VERSION,
                    config_hash: &hash,
                    config,
                    seed,
                    attack_file: csv,
                    outcome: &outcome,
                };
                write_atomic(&config.out.join(format!("{stem}_report.json")), &json_bytes(&report)?)?;
                Ok(outcome)
            })
            .collect()
    });
    results.into_iter().collect()
}

/// Writes `train.csv` and `test.csv` for a Gaussian mixture.
pub fn gen_data(spec: &GaussianSpec, train_fraction: f64, out: &Path) -> Result<(PathBuf, PathBuf)> {
    let (train, test) = gaussian_split(spec, train_fraction)?;
    fs::create_dir_all(out)?;
    let (a, b) = (out.join("train.csv"), out.join("test.csv"));
    write_atomic(&a, train.to_dense_csv().as_bytes())?;
    write_atomic(&b, test.to_dense_csv().as_bytes())?;
    Ok((a, b))
}

//! The acceptance checks. Each returns a one-line detail on success and a
//! description of the first failure otherwise.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::net::TcpListener;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::thread;
use std::time::Instant;

use cadre_core::config::{parse_config_str, ExperimentConfig};
use cadre_core::federation::{
    self, run_session, AggregatedRun, Capture, ClientRun, ConnId, Frame, Message, MomentsUpBody,
    RegisterBody, ReportUpBody, RunOptions, ServerCore, ServerSpec, TcpTransport,
};
use cadre_core::readiness::{ModuleRegistry, OutcomeSummary, ReadinessStatus};
use cadre_core::report::{
    build_payload, fit_pca, local_moments, symmetric_eigen, ClientStatus, Moments,
};
use cadre_core::{Column, DataTable, DatasetMeta, MetricKind, MetricSpec, Precision};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::oracle::{metric_oracles, random_table, rel_close, LeakScanner};
use super::{golden_path, load, TIMESTAMP};

pub type Outcome = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($msg:tt)*) => {{
        let held: bool = $cond;
        if !held {
            return Err(format!($($msg)*));
        }
    }};
}

pub fn simulate(cfg: &ExperimentConfig) -> Result<AggregatedRun, String> {
    federation::run_in_process(cfg, &ModuleRegistry::builtin(), &RunOptions::at(TIMESTAMP))
        .map_err(|e| format!("{}: {e}", cfg.experiment_id))
}

/// Clients a config pollutes, directly or by skewed partitioning.
fn polluted_clients(cfg: &ExperimentConfig) -> BTreeSet<String> {
    let all: BTreeSet<String> = cfg.client_ids().into_iter().collect();
    if cfg.partition.is_some() {
        return all;
    }
    let mut out = BTreeSet::new();
    for p in &cfg.pollution {
        if p.clients.is_empty() {
            return all;
        }
        out.extend(p.clients.iter().cloned());
    }
    out
}

fn target_met(o: &OutcomeSummary) -> Result<(), String> {
    let (before, after) = (o.before(), o.after());
    let ok = match o.trace[0].metric.name.as_str() {
        "mean_magnitude" => after <= 0.37,
        "imbalance_degree" | "duplicate_proportion" | "outlier_proportion_iqr" => after == 0.0,
        "k_anonymity_level" => after >= 2.0,
        "memory_usage_mb" => after < before,
        other => return Err(format!("no target for metric {other}")),
    };
    if ok {
        Ok(())
    } else {
        Err(format!(
            "{} ended at {after} (started at {before})",
            o.module_id
        ))
    }
}

pub const PAIRINGS: [(&str, &str); 6] = [
    ("noise.yaml", "mean_magnitude"),
    ("imbalance.yaml", "imbalance_degree"),
    ("duplicates.yaml", "duplicate_proportion"),
    ("memory.yaml", "memory_usage_mb"),
    ("outliers.yaml", "outlier_proportion_iqr"),
    ("anonymity.yaml", "k_anonymity_level"),
];

/// Each module cleans the matching polluted client.
pub fn module_pairings() -> Outcome {
    let start = Instant::now();
    let mut checked = 0;
    for (file, metric) in PAIRINGS {
        let cfg = load(file);
        let run = simulate(&cfg)?;
        let polluted = polluted_clients(&cfg);
        ensure!(!polluted.is_empty(), "{file}: no polluted client");
        for c in &run.report.clients {
            let p = c
                .payload
                .as_ref()
                .ok_or_else(|| format!("{file}: {} absent: {:?}", c.client_id, c.reason))?;
            for o in &p.outcomes {
                ensure!(
                    o.trace[0].metric.name == metric,
                    "{file}: unexpected metric {}",
                    o.trace[0].metric.name
                );
                if !polluted.contains(&c.client_id) && !o.trace[0].violated {
                    continue;
                }
                ensure!(
                    o.trace[0].violated,
                    "{file}: {} not violated before remedy",
                    c.client_id
                );
                ensure!(
                    o.final_status == ReadinessStatus::Ready,
                    "{file}: {} ended {}",
                    c.client_id,
                    o.final_status
                );
                target_met(o).map_err(|e| format!("{file}: {}: {e}", c.client_id))?;
                checked += 1;
            }
        }
    }
    let secs = start.elapsed().as_secs_f64();
    ensure!(secs < 10.0, "took {secs:.2} s");
    Ok(format!(
        "{checked} polluted client outcomes reached Ready in {secs:.2} s"
    ))
}

/// The single-group client stays Flagged while the others reach zero spread.
pub fn flagged_single_group() -> Outcome {
    let run = simulate(&load("fairness.yaml"))?;
    let mut multi = 0;
    let mut flagged = 0;
    for c in &run.report.clients {
        let p = c
            .payload
            .as_ref()
            .ok_or_else(|| format!("{} absent", c.client_id))?;
        for o in &p.outcomes {
            let single = o.trace.last().unwrap().metric.flag("single_group");
            if c.client_id == "single-group" {
                if o.module_id != "bias_representation" {
                    continue;
                }
                ensure!(
                    o.final_status == ReadinessStatus::Flagged,
                    "single-group ended {}",
                    o.final_status
                );
                ensure!(single, "single_group detail missing");
                ensure!(
                    o.after() > 0.0,
                    "single-group representation fell to {}",
                    o.after()
                );
                let unchanged = o
                    .trace
                    .iter()
                    .filter_map(|e| e.remedy.as_ref())
                    .any(|r| !r.changed);
                ensure!(unchanged, "no changed=false remedy in the trace");
                flagged += 1;
            } else {
                ensure!(
                    o.final_status == ReadinessStatus::Ready && o.after() == 0.0,
                    "{} {} ended {} at {}",
                    c.client_id,
                    o.module_id,
                    o.final_status,
                    o.after()
                );
                multi += 1;
            }
        }
    }
    ensure!(
        flagged == 1 && multi == 4,
        "saw {flagged} flagged and {multi} multi-group outcomes"
    );
    Ok(format!(
        "single-group Flagged with unchanged remedy; {multi} multi-group outcomes Ready at 0"
    ))
}

pub const ORACLE_TABLES: u64 = 150;
pub const ORACLE_TOL: f64 = 1e-9;

/// Every metric agrees with a brute-force oracle.
pub fn metric_oracle_equivalence() -> Outcome {
    let mut compared = 0;
    for seed in 0..ORACLE_TABLES {
        let raw = random_table(seed);
        let table = raw.to_table();
        for (name, oracle) in metric_oracles() {
            let engine = MetricSpec::new(MetricKind::from_name(name).unwrap()).evaluate(&table);
            match (engine, oracle(&raw)) {
                (Ok(got), Some(want)) => ensure!(
                    rel_close(got.value, want, ORACLE_TOL),
                    "table {seed}: {name} = {} but oracle says {want}",
                    got.value
                ),
                (Err(_), None) => {}
                (got, want) => {
                    return Err(format!(
                        "table {seed}: {name}: engine {got:?}, oracle {want:?}"
                    ))
                }
            }
            compared += 1;
        }
    }
    Ok(format!(
        "{compared} metric values on {ORACLE_TABLES} random tables match within {ORACLE_TOL:e}"
    ))
}

/// Table with `d` numeric features spanning many magnitudes, some missing.
pub fn wide_range_table(rng: &mut ChaCha8Rng, n: usize, d: usize) -> DataTable {
    let columns = (0..d)
        .map(|j| {
            let values = (0..n)
                .map(|_| {
                    if rng.random_bool(0.05) {
                        return None;
                    }
                    let mag = 10f64.powi(rng.random_range(-6..=6));
                    let z: f64 = StandardNormal.sample(rng);
                    Some(z * mag)
                })
                .collect();
            Column::numeric(format!("x{j}"), Precision::Double, values)
        })
        .collect();
    DataTable::new(columns, DatasetMeta::new("pool")).unwrap()
}

pub const EIGEN_TOL: f64 = 1e-7;
pub const ORTHO_TOL: f64 = 1e-9;

fn additivity(rng: &mut ChaCha8Rng) -> Result<usize, String> {
    let mut splits = 0;
    for trial in 0..40 {
        let d = rng.random_range(1..=6);
        let n = rng.random_range(1..=300);
        let pooled = wide_range_table(rng, n, d);
        let cols: Vec<String> = pooled
            .columns()
            .iter()
            .map(|c| c.name().to_string())
            .collect();
        let whole = local_moments(&pooled, &cols).map_err(|e| e.to_string())?;
        let parts = rng.random_range(1..=5);
        let mut rows: Vec<usize> = (0..n).collect();
        rows.shuffle(rng);
        let mut buckets = vec![Vec::new(); parts];
        for r in rows {
            buckets[rng.random_range(0..parts)].push(r);
        }
        let mut merged = Moments::zero(cols.clone());
        for b in &buckets {
            let part = pooled.take_rows(b).map_err(|e| e.to_string())?;
            merged
                .merge(&local_moments(&part, &cols).map_err(|e| e.to_string())?)
                .map_err(|e| e.to_string())?;
        }
        ensure!(
            merged == whole,
            "trial {trial}: merged moments differ from pooled moments"
        );
        splits += 1;
    }
    Ok(splits)
}

fn random_covariance(rng: &mut ChaCha8Rng, d: usize) -> Vec<Vec<f64>> {
    let b: Vec<Vec<f64>> = (0..d)
        .map(|_| (0..d + 2).map(|_| StandardNormal.sample(rng)).collect())
        .collect();
    let scale = 10f64.powi(rng.random_range(-3..=3));
    (0..d)
        .map(|i| {
            (0..d)
                .map(|j| scale * b[i].iter().zip(&b[j]).map(|(x, y)| x * y).sum::<f64>() / d as f64)
                .collect()
        })
        .collect()
}

fn eigen_against_nalgebra(rng: &mut ChaCha8Rng) -> Result<(usize, usize), String> {
    let (mut matrices, mut vectors) = (0, 0);
    for trial in 0..300 {
        let d = rng.random_range(2..=8);
        let cov = random_covariance(rng, d);
        let (values, vecs) = symmetric_eigen(&cov);
        let m = nalgebra::DMatrix::from_fn(d, d, |i, j| cov[i][j]);
        let eig = nalgebra::SymmetricEigen::new(m);
        let mut order: Vec<usize> = (0..d).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
        let want: Vec<f64> = order.iter().map(|&k| eig.eigenvalues[k]).collect();
        let scale = want[0].abs().max(1.0);
        for k in 0..2 {
            ensure!(
                (values[k] - want[k]).abs() <= EIGEN_TOL * scale,
                "trial {trial}: eigenvalue {k} is {} but oracle says {}",
                values[k],
                want[k]
            );
            // eigenvectors are only determined when the eigenvalue is isolated
            let gap = want
                .iter()
                .enumerate()
                .filter(|&(i, _)| i != k)
                .map(|(_, w)| (w - want[k]).abs())
                .fold(f64::INFINITY, f64::min);
            if gap < 1e-3 * scale {
                continue;
            }
            let col = eig.eigenvectors.column(order[k]);
            let dot: f64 = vecs[k].iter().zip(col.iter()).map(|(a, b)| a * b).sum();
            ensure!(
                (1.0 - dot.abs()) <= EIGEN_TOL,
                "trial {trial}: eigenvector {k} is off by {}",
                1.0 - dot.abs()
            );
            vectors += 1;
        }
        for i in 0..d {
            for j in 0..d {
                let dot: f64 = vecs[i].iter().zip(&vecs[j]).map(|(a, b)| a * b).sum();
                let want = if i == j { 1.0 } else { 0.0 };
                ensure!(
                    (dot - want).abs() <= ORTHO_TOL,
                    "trial {trial}: v{i}·v{j} = {dot}"
                );
            }
        }
        matrices += 1;
    }
    Ok((matrices, vectors))
}

fn pca_components_orthonormal(rng: &mut ChaCha8Rng) -> Result<usize, String> {
    let mut fits = 0;
    for trial in 0..60 {
        let d = rng.random_range(2..=8);
        let n = rng.random_range(10..=200);
        let t = wide_range_table(rng, n, d);
        let cols: Vec<String> = t.columns().iter().map(|c| c.name().to_string()).collect();
        let model = fit_pca(&local_moments(&t, &cols).map_err(|e| e.to_string())?)
            .map_err(|e| e.to_string())?;
        let [a, b] = &model.components;
        let dot = |x: &[f64], y: &[f64]| x.iter().zip(y).map(|(p, q)| p * q).sum::<f64>();
        ensure!(
            (dot(a, a) - 1.0).abs() <= ORTHO_TOL
                && (dot(b, b) - 1.0).abs() <= ORTHO_TOL
                && dot(a, b).abs() <= ORTHO_TOL,
            "trial {trial}: components not orthonormal"
        );
        ensure!(
            model.explained_variance[0] >= model.explained_variance[1],
            "trial {trial}: variances out of order"
        );
        fits += 1;
    }
    Ok(fits)
}

pub fn pca_correctness() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let splits = additivity(&mut rng)?;
    let (matrices, vectors) = eigen_against_nalgebra(&mut rng)?;
    let fits = pca_components_orthonormal(&mut rng)?;
    Ok(format!(
        "{splits} splits exact; {matrices} matrices ({vectors} isolated eigenvectors) within {EIGEN_TOL:e}; {fits} fits orthonormal within {ORTHO_TOL:e}"
    ))
}

pub struct WireRun {
    pub run: AggregatedRun,
    /// Per client: the data it loaded, its session and every byte it exchanged.
    pub clients: Vec<(DataTable, ClientRun, Vec<u8>)>,
}

/// Runs `cfg` over loopback TCP with every client transport captured.
pub fn networked_capture(cfg: &ExperimentConfig) -> Result<WireRun, String> {
    let listener = TcpListener::bind("127.0.0.1:0").map_err(|e| e.to_string())?;
    let addr = listener.local_addr().unwrap().to_string();
    let handles: Vec<_> = cfg
        .client_ids()
        .into_iter()
        .map(|id| {
            let cfg = cfg.clone();
            let addr = addr.clone();
            thread::spawn(move || -> Result<_, String> {
                let table = cfg.client_table(&id).map_err(|e| e.to_string())?;
                let mut t = Capture::new(TcpTransport::connect(&addr).map_err(|e| e.to_string())?);
                let loaded = table.clone();
                let run = run_session(&mut t, &id, move || Ok(loaded), &ModuleRegistry::builtin())
                    .map_err(|e| format!("{id}: {e}"))?;
                let mut bytes = std::mem::take(&mut t.sent);
                bytes.extend_from_slice(&t.received);
                Ok((table, run, bytes))
            })
        })
        .collect();
    let run = federation::serve_on(listener, cfg, &RunOptions::at(TIMESTAMP))
        .map_err(|e| e.to_string())?;
    let clients = handles
        .into_iter()
        .map(|h| h.join().map_err(|_| "client thread panicked".to_string())?)
        .collect::<Result<_, _>>()?;
    Ok(WireRun { run, clients })
}

pub const PAYLOAD_LIMIT: usize = 256 * 1024;

const LARGE_CLIENT: &str = "
experiment_id: payload-size
seeds: { global: 3 }
clients:
  - client_id: large
    data: { synth: { type: tabular, n_rows: 10000, n_features: 16, n_groups: 2, n_classes: 2 } }
pollution:
  - { type: duplicate_rows, fraction: 0.05 }
cadre_modules:
  - name: duplicate_management
  - name: outlier_management
  - name: memory_optimization
    rule: \"memory_usage_mb > 0.1\"
";

/// Size of the report upload of a 10⁴-row, 20-column client.
pub fn large_payload_bytes() -> Result<(usize, usize), String> {
    let cfg =
        parse_config_str(LARGE_CLIENT, &ModuleRegistry::builtin()).map_err(|e| e.to_string())?;
    let table = cfg.client_table("large").map_err(|e| e.to_string())?;
    ensure!(
        table.n_rows() >= 10_000 && table.n_cols() == 20,
        "client holds {}×{}",
        table.n_rows(),
        table.n_cols()
    );
    let run = simulate(&cfg)?;
    let payload = run.report.clients[0]
        .payload
        .clone()
        .ok_or("large client absent")?;
    let line = Frame::new(Message::ReportUp(ReportUpBody { payload }))
        .encode()
        .map_err(|e| e.to_string())?;
    Ok((line.len(), table.n_rows()))
}

pub fn privacy_leak_scan() -> Outcome {
    let wire = networked_capture(&load("imbalance.yaml"))?;
    ensure!(
        wire.clients.len() == 3,
        "expected 3 clients, ran {}",
        wire.clients.len()
    );
    let all: Vec<u8> = wire
        .clients
        .iter()
        .flat_map(|(_, _, b)| b.iter().copied())
        .collect();
    let scanner = LeakScanner::new(&all);
    let mut scanned = 0;
    for (table, run, _) in &wire.clients {
        let mut tables = vec![table];
        tables.extend(run.outcomes.iter().map(|o| &o.table_after));
        for t in tables {
            if let Some(fragment) = scanner.find(t) {
                return Err(format!(
                    "{}: wire carries row fragment {fragment:?}",
                    run.client_id
                ));
            }
            scanned += t.n_rows();
        }
    }
    // the scanner itself must see a planted row
    let (table, _, _) = &wire.clients[0];
    let row: Vec<String> = table.columns().iter().filter_map(|c| c.key(0)).collect();
    let mut planted = all.clone();
    planted.extend_from_slice(serde_json::to_string(&row).unwrap().as_bytes());
    ensure!(
        LeakScanner::new(&planted).find(table).is_some(),
        "scanner missed a planted row"
    );
    let (bytes, rows) = large_payload_bytes()?;
    ensure!(
        bytes < PAYLOAD_LIMIT,
        "payload for {rows} rows is {bytes} bytes"
    );
    Ok(format!(
        "{} wire bytes hold no 5-cell fragment of {scanned} rows; planted row detected; {rows}-row payload is {bytes} bytes",
        all.len()
    ))
}

pub fn networked_report(cfg: &ExperimentConfig) -> Result<String, String> {
    let wire = networked_capture(cfg)?;
    wire.run.report.to_json().map_err(|e| e.to_string())
}

pub fn determinism() -> Outcome {
    let mut files = 0;
    for file in [
        "imbalance.yaml",
        "fairness.yaml",
        "imbalance_two_clients.yaml",
    ] {
        let cfg = load(file);
        let first = simulate(&cfg)?
            .report
            .to_json()
            .map_err(|e| e.to_string())?;
        let again = simulate(&cfg)?
            .report
            .to_json()
            .map_err(|e| e.to_string())?;
        ensure!(first == again, "{file}: repeated simulations differ");
        let tcp = networked_report(&cfg)?;
        ensure!(
            first == tcp,
            "{file}: networked report differs from simulated report"
        );
        files += 1;
    }
    Ok(format!(
        "{files} experiments byte-identical across repeats and transports"
    ))
}

pub const GOLDEN: &str = "two_client_imbalance.html";
pub const SECTIONS: [&str; 4] = [
    "(a) Standard metrics",
    "(b) Custom metrics",
    "(c) Individual client plots",
    "(d) Combined data plots",
];

pub fn golden_html() -> Result<String, String> {
    let run = simulate(&load("imbalance_two_clients.yaml"))?;
    Ok(run.report.html())
}

pub fn golden_report() -> Outcome {
    let html = golden_html()?;
    let path = golden_path(GOLDEN);
    if std::env::var("CADRE_UPDATE_GOLDEN").as_deref() == Ok("1") {
        std::fs::create_dir_all(path.parent().unwrap()).map_err(|e| e.to_string())?;
        std::fs::write(&path, &html).map_err(|e| e.to_string())?;
    }
    let golden = std::fs::read_to_string(&path).map_err(|e| format!("{}: {e}", path.display()))?;
    for s in SECTIONS {
        ensure!(html.contains(s), "section {s} missing");
    }
    ensure!(
        html.contains("<th>Before</th>") && html.contains("<th>After</th>"),
        "no before/after columns"
    );
    ensure!(html.contains("<circle"), "no PCA scatter points");
    ensure!(
        html == golden,
        "rendered HTML differs from {}",
        path.display()
    );
    Ok(format!(
        "{} bytes match the golden file with sections (a)-(d)",
        html.len()
    ))
}

const FUZZ_CLIENTS: &str = "
experiment_id: fuzz
clients:
  - client_id: a
    data: { synth: { type: tabular, n_rows: 30, n_features: 3, n_groups: 2, n_classes: 2 } }
  - client_id: b
    data: { synth: { type: tabular, n_rows: 30, n_features: 3, n_groups: 2, n_classes: 2 } }
  - client_id: c
    data: { synth: { type: tabular, n_rows: 30, n_features: 3, n_groups: 2, n_classes: 2 } }
cadre_modules:
  - name: duplicate_management
";

pub const FUZZ_FRAMES: usize = 10_000;

struct Fuzzer {
    rng: ChaCha8Rng,
    ids: Vec<String>,
    moments: Vec<Moments>,
    payloads: Vec<String>,
}

impl Fuzzer {
    fn id(&mut self) -> String {
        if self.rng.random_bool(0.7) {
            self.ids[self.rng.random_range(0..self.ids.len())].clone()
        } else {
            ["intruder", "", "a ", "A", "é", "a\u{0}"][self.rng.random_range(0..6)].to_string()
        }
    }

    fn script(&self, k: usize) -> VecDeque<String> {
        let encode = |m: Message| Frame::new(m).encode().unwrap();
        VecDeque::from([
            encode(Message::Register(RegisterBody {
                client_id: self.ids[k].clone(),
            })),
            encode(Message::MomentsUp(MomentsUpBody {
                moments: Some(self.moments[k].clone()),
                note: None,
            })),
            self.payloads[k].clone(),
        ])
    }

    fn frame(&mut self) -> String {
        let encode = |m: Message| Frame::new(m).encode().unwrap();
        match self.rng.random_range(0..14) {
            0 | 1 => {
                let client_id = self.id();
                encode(Message::Register(RegisterBody { client_id }))
            }
            2 | 3 => {
                let moments = self.moments[self.rng.random_range(0..self.moments.len())].clone();
                encode(Message::MomentsUp(MomentsUpBody {
                    moments: self.rng.random_bool(0.9).then_some(moments),
                    note: None,
                }))
            }
            4 | 5 => self.payloads[self.rng.random_range(0..self.payloads.len())].clone(),
            6 => encode(Message::error("boom")),
            7 => encode(Message::Shutdown(cadre_core::federation::ShutdownBody { reason: "x".into() })),
            8 => encode(Message::Ack(cadre_core::federation::AckBody { of: "report_up".into() })),
            9 => {
                let mut good = self.payloads[0].clone();
                let cut = self.rng.random_range(0..good.len());
                good.truncate(cut);
                good
            }
            10 => r#"{"protocol_version":2,"type":"register","body":{"client_id":"a"}}"#.to_string(),
            11 => {
                let n = self.rng.random_range(0..64);
                (0..n).map(|_| self.rng.random_range(0x20u8..0x7f) as char).collect()
            }
            12 => r#"{"protocol_version":1,"type":"moments_up","body":{"moments":{"columns":["f0"],"count":18446744073709551615,"sum":[{"limbs":[[0,1]]}],"outer":[{"limbs":[[139,4294967296]]}]}}}"#.to_string(),
            _ => {
                // a structurally valid payload that names someone else
                let mut p = self.payloads[self.rng.random_range(0..self.payloads.len())].clone();
                let victim = self.id();
                p = p.replacen("\"client_id\":\"a\"", &format!("\"client_id\":{}", serde_json::to_string(&victim).unwrap()), 1);
                p
            }
        }
    }
}

pub fn protocol_fuzz(seed: u64, frames: usize) -> Outcome {
    let cfg =
        parse_config_str(FUZZ_CLIENTS, &ModuleRegistry::builtin()).map_err(|e| e.to_string())?;
    let registered: BTreeSet<String> = cfg.client_ids().into_iter().collect();
    let mut moments = Vec::new();
    let mut payloads = Vec::new();
    for id in cfg.client_ids() {
        let table = cfg.client_table(&id).map_err(|e| e.to_string())?;
        let cols: Vec<String> = table
            .feature_columns()
            .iter()
            .map(|c| c.name().to_string())
            .collect();
        moments.push(local_moments(&table, &cols).map_err(|e| e.to_string())?);
        let payload = build_payload(&table, Vec::new(), &cols, None).map_err(|e| e.to_string())?;
        payloads.push(
            Frame::new(Message::ReportUp(ReportUpBody { payload }))
                .encode()
                .unwrap(),
        );
    }
    moments.push(Moments::zero(vec!["other".into()]));
    let mut fz = Fuzzer {
        rng: ChaCha8Rng::seed_from_u64(seed),
        ids: cfg.client_ids(),
        moments,
        payloads,
    };
    let result = catch_unwind(AssertUnwindSafe(|| {
        let mut core = ServerCore::new(ServerSpec::from_config(&cfg));
        let mut open: Vec<ConnId> = Vec::new();
        // some connections follow an honest session amid the noise
        let mut scripts: BTreeMap<ConnId, VecDeque<String>> = BTreeMap::new();
        let mut next: ConnId = 1;
        let mut now = 0.0;
        for _ in 0..frames {
            now += fz.rng.random_range(0.0..0.02);
            match fz.rng.random_range(0..20) {
                0 => {
                    core.connect(next, now);
                    if fz.rng.random_bool(0.5) {
                        let k = fz.rng.random_range(0..fz.ids.len());
                        scripts.insert(next, fz.script(k));
                    }
                    open.push(next);
                    next += 1;
                }
                1 if !open.is_empty() => {
                    let c = open.swap_remove(fz.rng.random_range(0..open.len()));
                    core.disconnect(c, now);
                }
                2 => {
                    core.tick(now);
                }
                _ => {
                    // lines from unknown connections exercise the same paths
                    let conn = if open.is_empty() || fz.rng.random_bool(0.05) {
                        next + 1000
                    } else {
                        open[fz.rng.random_range(0..open.len())]
                    };
                    let scripted = match scripts.get_mut(&conn) {
                        Some(q) if fz.rng.random_bool(0.6) => q.pop_front(),
                        _ => None,
                    };
                    let line = scripted.unwrap_or_else(|| fz.frame());
                    core.handle_line(conn, &line, now);
                }
            }
        }
        core.tick(now + 1e6);
        core.close_all();
        core.report(TIMESTAMP)
    }));
    let report = result.map_err(|_| "server panicked".to_string())?;
    let report = report.map_err(|e| format!("report failed: {e}"))?;
    let mut reported = 0;
    for c in &report.clients {
        ensure!(
            registered.contains(&c.client_id),
            "report lists unregistered client {:?}",
            c.client_id
        );
        if let Some(p) = &c.payload {
            ensure!(
                p.client_id == c.client_id,
                "entry {} carries payload of {}",
                c.client_id,
                p.client_id
            );
            reported += 1;
        }
        ensure!(
            (c.status == ClientStatus::Reported) == c.payload.is_some(),
            "client {} has inconsistent status",
            c.client_id
        );
    }
    Ok(format!(
        "{frames} fuzzed inputs handled; report lists only registered clients ({reported} reported)"
    ))
}

pub fn protocol_robustness() -> Outcome {
    let mut details = Vec::new();
    for seed in 0..3 {
        details.push(protocol_fuzz(seed, FUZZ_FRAMES)?);
    }
    Ok(details.join("; "))
}

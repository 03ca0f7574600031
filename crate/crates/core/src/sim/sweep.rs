//! Parameter sweeps: one run per grid point and replicate, in parallel.
//!
//! A grid file is TOML:
//!
//! ```toml
//! replicates = 20
//! [parameters]
//! "adversary.fraction" = [0.0, 0.1, 0.3]
//! "protocol.quorum" = ["1/2", "7/10"]
//! ```

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::metrics::Summary;
use super::scenario::Scenario;
use super::{engine, seed, SimError};
use crate::adversary::Behavior;

/// Dotted names a grid may set. `adversary.mix.<Strategy>` is also allowed.
pub const PARAMETERS: &[&str] = &[
    "epochs",
    "store_blocked",
    "population.node_count",
    "population.key_length_bits",
    "population.old_device_fraction",
    "population.old_key_length_bits",
    "population.max_degree",
    "formation.enabled",
    "formation.beta_same",
    "formation.beta_diff",
    "formation.link_cost",
    "formation.trust_weight",
    "formation.join_rate",
    "formation.leave_rate",
    "formation.proposals_per_round",
    "formation.hub_multiplier",
    "formation.hub_count",
    "trust.alpha",
    "trust.severance_threshold",
    "protocol.digest_width",
    "protocol.mac_fanout",
    "protocol.quorum",
    "protocol.min_key_bits",
    "protocol.hop_limit",
    "apps.count",
    "apps.payload_bytes",
    "apps.initial_holder_fraction",
    "apps.preinfected_fraction",
    "adversary.fraction",
    "workload.requests_per_epoch",
    "forgery.verifiers",
    "forgery.compromise_p",
    "forgery.trials",
];

fn is_known(name: &str) -> bool {
    PARAMETERS.contains(&name)
        || name
            .strip_prefix("adversary.mix.")
            .is_some_and(|b| Behavior::ALL.iter().any(|x| x.to_string() == b))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Grid {
    #[serde(default = "one")]
    pub replicates: usize,
    #[serde(default)]
    pub parameters: BTreeMap<String, Vec<toml::Value>>,
}

fn one() -> usize {
    1
}

impl Grid {
    pub fn from_toml_str(text: &str) -> Result<Self, SimError> {
        let g: Grid = toml::from_str(text)?;
        g.validate()?;
        Ok(g)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, SimError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| SimError::Io(format!("{}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    pub fn validate(&self) -> Result<(), SimError> {
        if let Some(name) = self.parameters.keys().find(|k| !is_known(k)) {
            return Err(SimError::UnknownParameter(name.clone()));
        }
        if self.replicates == 0 {
            return Err(SimError::Invalid(vec!["replicates must be positive".into()]));
        }
        if let Some((name, _)) = self.parameters.iter().find(|(_, v)| v.is_empty()) {
            return Err(SimError::Invalid(vec![format!("parameter {name} has no values")]));
        }
        Ok(())
    }

    /// Cartesian product in name order; the empty grid has one empty point.
    pub fn points(&self) -> Vec<Vec<(String, toml::Value)>> {
        let mut points = vec![Vec::new()];
        for (name, values) in &self.parameters {
            points = points
                .into_iter()
                .flat_map(|p| {
                    values.iter().map(move |v| {
                        let mut q = p.clone();
                        q.push((name.clone(), v.clone()));
                        q
                    })
                })
                .collect();
        }
        points
    }
}

/// Writes `value` at a dotted path, creating tables on the way.
fn set_path(root: &mut toml::Value, path: &str, value: toml::Value) -> Result<(), SimError> {
    let mut parts: Vec<&str> = path.split('.').collect();
    let leaf = parts.pop().expect("split yields one part");
    let mut cur = root;
    for p in parts {
        let table = cur.as_table_mut().ok_or_else(|| SimError::UnknownParameter(path.to_string()))?;
        cur = table.entry(p).or_insert_with(|| toml::Value::Table(Default::default()));
    }
    let table = cur.as_table_mut().ok_or_else(|| SimError::UnknownParameter(path.to_string()))?;
    table.insert(leaf.to_string(), value);
    Ok(())
}

/// The base scenario with one grid point applied.
pub fn apply(base: &Scenario, point: &[(String, toml::Value)]) -> Result<Scenario, SimError> {
    let mut value = toml::Value::try_from(base).map_err(|e| SimError::Config(e.to_string()))?;
    for (name, v) in point {
        if !is_known(name) {
            return Err(SimError::UnknownParameter(name.clone()));
        }
        if name.starts_with("forgery.") && value.get("forgery").is_none() {
            let mut t = toml::Table::new();
            t.insert("verifiers".into(), toml::Value::Integer(10));
            t.insert("compromise_p".into(), toml::Value::Float(0.0));
            value.as_table_mut().expect("scenario is a table").insert("forgery".into(), toml::Value::Table(t));
        }
        set_path(&mut value, name, v.clone())?;
    }
    let s: Scenario = value.try_into()?;
    s.validate()?;
    Ok(s)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SweepRow {
    pub point: Vec<(String, String)>,
    pub runs: Vec<Summary>,
}

fn mean(xs: impl Iterator<Item = f64>) -> Option<f64> {
    let (n, s) = xs.fold((0usize, 0.0), |(n, s), x| (n + 1, s + x));
    (n > 0).then(|| s / n as f64)
}

impl SweepRow {
    pub fn mean_of(&self, f: impl Fn(&Summary) -> Option<f64>) -> Option<f64> {
        mean(self.runs.iter().filter_map(f))
    }

    /// Standard error of the mean of `f` across replicates.
    pub fn std_error_of(&self, f: impl Fn(&Summary) -> Option<f64>) -> Option<f64> {
        let xs: Vec<f64> = self.runs.iter().filter_map(f).collect();
        if xs.len() < 2 {
            return None;
        }
        let m = xs.iter().sum::<f64>() / xs.len() as f64;
        let var = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() - 1) as f64;
        Some((var / xs.len() as f64).sqrt())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SweepReport {
    pub parameters: Vec<String>,
    pub rows: Vec<SweepRow>,
}

const COLUMNS: &[(&str, fn(&Summary) -> Option<f64>)] = &[
    ("final_infections", |s| Some(s.final_infections as f64)),
    ("false_accusations", |s| Some(s.false_accusations as f64)),
    ("retrievals", |s| Some(s.retrievals as f64)),
    ("acceptance", |s| Some(s.acceptance)),
    ("tampered_acceptance", |s| Some(s.tampered_acceptance)),
    ("final_homophily", |s| s.final_homophily),
    ("mean_overhead_bits", |s| Some(s.mean_overhead_bits)),
    ("forgery_rate", |s| s.forgery_rate),
    ("forgery_bound", |s| s.forgery_bound),
];

impl SweepReport {
    /// One CSV row per grid point: the point, the replicate count, then the
    /// mean of each summary column (blank where undefined).
    pub fn write_csv<W: Write>(&self, out: W) -> Result<(), SimError> {
        let mut w = csv::Writer::from_writer(out);
        let mut header: Vec<String> = self.parameters.clone();
        header.push("replicates".into());
        header.extend(COLUMNS.iter().map(|(n, _)| n.to_string()));
        w.write_record(&header)?;
        for row in &self.rows {
            let mut rec: Vec<String> = row.point.iter().map(|(_, v)| v.clone()).collect();
            rec.push(row.runs.len().to_string());
            for (_, f) in COLUMNS {
                rec.push(row.mean_of(f).map(|x| x.to_string()).unwrap_or_default());
            }
            w.write_record(&rec)?;
        }
        w.flush().map_err(|e| SimError::Io(e.to_string()))?;
        Ok(())
    }
}

fn render(v: &toml::Value) -> String {
    match v {
        toml::Value::String(s) => s.clone(),
        other => other.to_string(),
    }
}

/// Replicate `r` of every grid point runs under the same derived seed, so
/// points differ only by their parameters.
pub fn sweep(base: &Scenario, grid: &Grid) -> Result<SweepReport, SimError> {
    grid.validate()?;
    let jobs: Vec<(usize, Scenario)> = grid
        .points()
        .iter()
        .enumerate()
        .map(|(i, point)| {
            let s = apply(base, point)?;
            Ok((0..grid.replicates).map(move |r| {
                let mut s = s.clone();
                s.seed = seed::derive(base.seed, &format!("replicate/{r}"));
                (i, s)
            }))
        })
        .collect::<Result<Vec<_>, SimError>>()?
        .into_iter()
        .flatten()
        .collect();
    let results: Vec<(usize, Summary)> = jobs
        .par_iter()
        .map(|(i, s)| engine::run(s).map(|(_, m)| (*i, m.summary())))
        .collect::<Result<_, _>>()?;
    let rows = grid
        .points()
        .into_iter()
        .enumerate()
        .map(|(i, point)| SweepRow {
            point: point.iter().map(|(n, v)| (n.clone(), render(v))).collect(),
            runs: results.iter().filter(|(j, _)| *j == i).map(|(_, s)| s.clone()).collect(),
        })
        .collect();
    Ok(SweepReport { parameters: grid.parameters.keys().cloned().collect(), rows })
}

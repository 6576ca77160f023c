//! CSV and manifest emission. All floats are written with Rust's shortest
//! round-trip formatting so downstream diffs are exact.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use prodnet::measures::EnsembleStats;
use prodnet::{histogram, PathRecord, Scenario};

pub const HISTOGRAM_BINS: usize = 40;

/// Provenance record written next to every emitted data set.
#[derive(Debug, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub created_utc: String,
    pub scenario_path: String,
    pub scenario_sha256: String,
    pub horizon: f64,
    pub seed: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub samples: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub path_index: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub betas: Option<Vec<f64>>,
    pub outputs: Vec<String>,
}

impl Manifest {
    pub fn new(command: &str, scenario_path: &Path, scenario_text: &str, sc: &Scenario, seed: u64) -> Self {
        Self {
            tool: "prodnet".into(),
            version: env!("CARGO_PKG_VERSION").into(),
            command: command.into(),
            created_utc: chrono::Utc::now().to_rfc3339(),
            scenario_path: scenario_path.display().to_string(),
            scenario_sha256: sha256_hex(scenario_text),
            horizon: sc.horizon,
            seed,
            samples: None,
            path_index: None,
            betas: None,
            outputs: Vec::new(),
        }
    }
}

pub fn sha256_hex(text: &str) -> String {
    use sha2::{Digest, Sha256};
    let mut hasher = Sha256::new();
    hasher.update(text.as_bytes());
    let digest = hasher.finalize();
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

pub fn path_csv(path: &PathRecord, sc: &Scenario) -> String {
    let ids: Vec<u32> = sc.topology.edges.iter().map(|e| e.id).collect();
    let mut out = String::from("t");
    for &id in &ids {
        for col in ["regime", "cap", "queue", "ur", "rwip", "exit"] {
            out.push_str(&format!(",{col}_e{id}"));
        }
    }
    out.push_str(",q_net,g_out_net,g_in_net,mass\n");
    for k in 0..path.times.len() {
        out.push_str(&format!("{}", path.times[k]));
        for e in 0..ids.len() {
            out.push_str(&format!(
                ",{},{},{},{},{},{}",
                path.regimes[k][e],
                path.capacity[k][e],
                path.queue[k][e],
                path.ur[k][e],
                path.rwip[k][e],
                path.exit_flux[k][e],
            ));
        }
        out.push_str(&format!(
            ",{},{},{},{}\n",
            path.q_net[k], path.outflow[k], path.inflow[k], path.mass[k]
        ));
    }
    out
}

pub fn events_csv(path: &PathRecord, sc: &Scenario) -> String {
    let mut out = String::from("t,edge,from,to\n");
    for ev in &path.events {
        out.push_str(&format!(
            "{},{},{},{}\n",
            ev.time, sc.topology.edges[ev.edge].id, ev.from, ev.to
        ));
    }
    out
}

fn mean_series_csv(stats: &EnsembleStats, sc: &Scenario, field: &str) -> String {
    let mut out = String::from("t");
    for e in &sc.topology.edges {
        out.push_str(&format!(",{field}_e{}", e.id));
    }
    out.push('\n');
    for (k, &t) in stats.times.iter().enumerate() {
        out.push_str(&format!("{t}"));
        for e in 0..stats.num_edges {
            let w = match field {
                "cap" => &stats.capacity[k][e],
                _ => &stats.queue[k][e],
            };
            out.push_str(&format!(",{}", w.mean()));
        }
        out.push('\n');
    }
    out
}

pub fn mean_capacity_csv(stats: &EnsembleStats, sc: &Scenario) -> String {
    mean_series_csv(stats, sc, "cap")
}

pub fn mean_queue_csv(stats: &EnsembleStats, sc: &Scenario) -> String {
    mean_series_csv(stats, sc, "queue")
}

pub fn histogram_csv(values: &[f64]) -> String {
    let h = histogram(values, HISTOGRAM_BINS);
    let mut out = String::from("bin_lo,bin_hi,count\n");
    for i in 0..h.counts.len() {
        out.push_str(&format!("{},{},{}\n", h.edges[i], h.edges[i + 1], h.counts[i]));
    }
    out
}

pub fn network_means_csv(rows: &[(f64, &EnsembleStats)]) -> String {
    let mut out = String::from("beta,mean_q_net_T,var_q_net_T,mean_g_out_net_T,var_g_out_net_T\n");
    for (beta, stats) in rows {
        let last = stats.times.len() - 1;
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            beta,
            stats.q_net[last].mean(),
            stats.q_net[last].variance(),
            stats.g_net_out[last].mean(),
            stats.g_net_out[last].variance(),
        ));
    }
    out
}

/// Write `files` under `dir`, creating directories as needed; on any failure
/// remove everything already written.
pub fn write_all(dir: &Path, files: &[(PathBuf, String)]) -> std::io::Result<()> {
    let mut written: Vec<PathBuf> = Vec::new();
    for (rel, content) in files {
        let target = dir.join(rel);
        if let Some(parent) = target.parent() {
            fs::create_dir_all(parent)?;
        }
        match fs::write(&target, content) {
            Ok(()) => written.push(target),
            Err(e) => {
                for w in &written {
                    let _ = fs::remove_file(w);
                }
                return Err(e);
            }
        }
    }
    Ok(())
}

//! Synthetic datasets with ready-to-run configs.

use std::fs;
use std::path::Path;

use ctdg::dyngraph::{write_edges, write_events, write_features_csv, write_readings};
use ctdg::learn::TaskKind;
use ctdg::synth::{repurchase_stream, traffic_series, two_communities, RepurchaseConfig, TrafficConfig};

use crate::error::Result;

/// Writes a small dataset for `task` plus `config.toml` into `dir`. The
/// link set has 60 users and 40 items (100 nodes).
pub fn generate(task: TaskKind, dir: &Path, seed: u64) -> Result<()> {
    fs::create_dir_all(dir)?;
    let config = match task {
        TaskKind::Link => {
            let cfg = RepurchaseConfig {
                users: 60,
                items: 40,
                days: 8,
                ..RepurchaseConfig::default()
            };
            let d = repurchase_stream(&cfg, seed);
            write_events(dir.join("events.csv"), &d.events)?;
            format!(
                "task = \"link\"\nseed = {seed}\nout = \"runs/link\"\n\n[data]\nevents = \"events.csv\"\nnum_nodes = {}\n\n\
                 [encoder]\nlayers = 2\nheads = 2\ndim = 16\n\n[train]\nepochs = 3\nbatch_size = 16\ngamma = 0.01\n\n\
                 [cluster]\nk = 4\n\n[link]\nmax_len = 30\nks = [10, 20]\n\n[spectral]\nmethod = \"exact\"\nr = 40\n",
                d.users + d.items
            )
        }
        TaskKind::Node => {
            let d = two_communities(80, 4, 2.0, 6, seed);
            write_events(dir.join("events.csv"), &d.events)?;
            write_features_csv(dir.join("features.csv"), &d.features)?;
            let labels = d.labels.iter().enumerate().fold(String::from("node,label\n"), |mut s, (v, y)| {
                s.push_str(&format!("{v},{y}\n"));
                s
            });
            fs::write(dir.join("labels.csv"), labels)?;
            format!(
                "task = \"node\"\nseed = {seed}\nout = \"runs/node\"\n\n[data]\nevents = \"events.csv\"\nfeatures = \"features.csv\"\n\
                 labels = \"labels.csv\"\n\n[encoder]\nlayers = 2\nheads = 2\ndim = 8\ntime_unit = 1.0\n\n\
                 [train]\nepochs = 5\nbatch_size = 16\n\n[cluster]\nk = 4\n\n[spectral]\nmethod = \"exact\"\nr = 40\n"
            )
        }
        TaskKind::Traffic => {
            let cfg = TrafficConfig {
                sensors: 12,
                days: 3,
                ..TrafficConfig::default()
            };
            let d = traffic_series(&cfg, seed);
            write_readings(dir.join("readings.csv"), &d.readings)?;
            write_edges(dir.join("roads.csv"), &d.edges)?;
            format!(
                "task = \"traffic\"\nseed = {seed}\nout = \"runs/traffic\"\n\n[data]\nreadings = \"readings.csv\"\n\
                 road_edges = \"roads.csv\"\n\n[encoder]\nlayers = 1\nheads = 2\ndim = 8\n\n\
                 [train]\nepochs = 2\nbatch_size = 16\n\n[cluster]\nk = 3\n\n[traffic]\nwindow = 12\nhorizons = [3, 6, 9]\n\n\
                 [spectral]\nmethod = \"exact\"\nr = 12\n"
            )
        }
    };
    fs::write(dir.join("config.toml"), config)?;
    Ok(())
}

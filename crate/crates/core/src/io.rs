//! Files: policy checkpoints (JSON), the per-epoch metrics log and ranked
//! scenario lists (CSV), and rollout traces (JSON Lines).

use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::baselines::Scored;
use crate::error::{Error, Result};
use crate::graph::{ScenarioGraph, ScenarioSpec};
use crate::policy::PolicyParams;
use crate::route::Route;
use crate::sim::{simulate_traced, Outcome, RewardConfig, RolloutResult, SimConfig, TraceStep};
use crate::state::{encode_state, EnvState, StateEncoding};
use crate::trainer::EpochRecord;

pub const METRICS_HEADER: [&str; 5] = ["epoch", "mean_reward", "collision_rate", "entropy", "grad_norm"];

pub fn save_checkpoint(path: impl AsRef<Path>, params: &PolicyParams) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, params)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

/// Loads a checkpoint and checks it against `graph` and the state width.
pub fn load_checkpoint(path: impl AsRef<Path>, graph: &ScenarioGraph, state_dim: usize) -> Result<PolicyParams> {
    let params: PolicyParams = serde_json::from_reader(BufReader::new(File::open(path)?))?;
    params.validate(graph, state_dim)?;
    params.check_finite()?;
    Ok(params)
}

/// One row of the metrics log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub epoch: usize,
    pub mean_reward: f64,
    pub collision_rate: f64,
    pub entropy: f64,
    pub grad_norm: f64,
}

impl From<&EpochRecord> for MetricsRow {
    fn from(r: &EpochRecord) -> Self {
        MetricsRow {
            epoch: r.epoch,
            mean_reward: r.mean_reward,
            collision_rate: r.collision_rate(),
            entropy: r.mean_entropy,
            grad_norm: r.grad_norm,
        }
    }
}

/// Append-only metrics log; the header is written when the file is created.
pub struct MetricsLog {
    writer: csv::Writer<File>,
}

impl MetricsLog {
    /// Creates a new log; fails if the file exists.
    pub fn create(path: impl AsRef<Path>) -> Result<Self> {
        let file = OpenOptions::new().write(true).create_new(true).open(path)?;
        let mut writer = csv::WriterBuilder::new().has_headers(false).from_writer(file);
        writer.write_record(METRICS_HEADER)?;
        writer.flush()?;
        Ok(MetricsLog { writer })
    }

    pub fn append(&mut self, record: &EpochRecord) -> Result<()> {
        self.writer.serialize(MetricsRow::from(record))?;
        self.writer.flush()?;
        Ok(())
    }
}

pub fn read_metrics(path: impl AsRef<Path>) -> Result<Vec<MetricsRow>> {
    let mut r = csv::Reader::from_path(path)?;
    let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    if header != METRICS_HEADER {
        return Err(Error::Parse(format!("metrics header {header:?} differs from {METRICS_HEADER:?}")));
    }
    r.deserialize().map(|row| row.map_err(Error::from)).collect()
}

/// Ranked scenarios: `rank,reward,collision,route_occupied,min_separation`
/// followed by one column per block in physical units.
pub fn write_ranked(path: impl AsRef<Path>, graph: &ScenarioGraph, results: &[Scored]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header: Vec<String> = ["rank", "reward", "collision", "route_occupied", "min_separation"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    header.extend(graph.blocks.iter().map(|b| b.name.clone()));
    w.write_record(&header)?;
    for (i, s) in results.iter().enumerate() {
        let mut row = vec![
            (i + 1).to_string(),
            s.outcome.reward.to_string(),
            s.outcome.collision.to_string(),
            s.outcome.route_occupied.to_string(),
            s.outcome.min_separation.to_string(),
        ];
        row.extend(s.spec.physical_values.iter().map(|v| v.to_string()));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a ranked list back; raw actions are recovered from the physical values.
pub fn read_ranked(path: impl AsRef<Path>, graph: &ScenarioGraph) -> Result<Vec<Scored>> {
    let mut r = csv::Reader::from_path(path)?;
    let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    let names: Vec<&str> = graph.blocks.iter().map(|b| b.name.as_str()).collect();
    if header.len() != 5 + names.len() || header[5..].iter().zip(&names).any(|(h, n)| h != n) {
        return Err(Error::Parse(format!("ranked file columns {header:?} do not match graph blocks {names:?}")));
    }
    let num = |s: &str| s.parse::<f64>().map_err(|e| Error::Parse(format!("bad number '{s}': {e}")));
    let flag = |s: &str| s.parse::<bool>().map_err(|e| Error::Parse(format!("bad flag '{s}': {e}")));
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let values = rec.iter().skip(5).map(num).collect::<Result<Vec<_>>>()?;
        out.push(Scored {
            spec: graph.spec_from_physical(&values)?,
            outcome: Outcome {
                reward: num(&rec[1])?,
                collision: flag(&rec[2])?,
                route_occupied: flag(&rec[3])?,
                min_separation: num(&rec[4])?,
            },
        });
    }
    Ok(out)
}

/// First line of a trace file: enough to re-run the rollout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceHeader {
    pub graph: ScenarioGraph,
    pub route: Route,
    pub target_speed_kmh: f64,
    pub physical_values: Vec<f64>,
    pub sim: SimConfig,
    pub reward: RewardConfig,
    pub collision: bool,
    pub route_occupied: bool,
    pub min_separation: f64,
    pub reward_value: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trace {
    pub header: TraceHeader,
    pub steps: Vec<TraceStep>,
}

impl Trace {
    /// Simulates `spec` on `state` with recording on.
    pub fn record(
        graph: &ScenarioGraph,
        spec: &ScenarioSpec,
        state: &EnvState,
        sim: &SimConfig,
        reward: &RewardConfig,
    ) -> Result<(Trace, RolloutResult)> {
        let r = simulate_traced(spec, state, graph, sim, true)?;
        let header = TraceHeader {
            graph: graph.clone(),
            route: state.route.clone(),
            target_speed_kmh: state.target_speed_kmh,
            physical_values: spec.physical_values.clone(),
            sim: sim.clone(),
            reward: reward.clone(),
            collision: r.collision,
            route_occupied: r.route_occupied,
            min_separation: r.min_separation,
            reward_value: crate::sim::compute_reward(&r, reward),
        };
        Ok((Trace { header, steps: r.trace.clone() }, r))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        serde_json::to_writer(&mut w, &self.header)?;
        w.write_all(b"\n")?;
        for s in &self.steps {
            serde_json::to_writer(&mut w, s)?;
            w.write_all(b"\n")?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Trace> {
        let mut lines = BufReader::new(File::open(path)?).lines();
        let first = lines.next().ok_or_else(|| Error::Parse("trace file is empty".into()))??;
        let header: TraceHeader = serde_json::from_str(&first)?;
        let mut steps = Vec::new();
        for line in lines {
            let line = line?;
            if !line.trim().is_empty() {
                steps.push(serde_json::from_str(&line)?);
            }
        }
        Ok(Trace { header, steps })
    }

    /// Re-runs the rollout from the header.
    pub fn resimulate(&self) -> Result<RolloutResult> {
        let h = &self.header;
        let enc = StateEncoding::default();
        let state = encode_state(&h.route, h.target_speed_kmh, &enc)?;
        let spec = h.graph.spec_from_physical(&h.physical_values)?;
        simulate_traced(&spec, &state, &h.graph, &h.sim, true)
    }

    /// Top-down SVG of both paths with the route underneath.
    pub fn to_svg(&self) -> String {
        let wp = self.header.route.waypoints();
        let pts: Vec<[f64; 2]> = wp
            .iter()
            .copied()
            .chain(self.steps.iter().flat_map(|s| [s.ego.position(), s.obstacle.position()]))
            .collect();
        let (mut x0, mut y0, mut x1, mut y1) = (f64::MAX, f64::MAX, f64::MIN, f64::MIN);
        for p in &pts {
            x0 = x0.min(p[0]);
            y0 = y0.min(p[1]);
            x1 = x1.max(p[0]);
            y1 = y1.max(p[1]);
        }
        let pad = 5.0;
        let (w, h) = (x1 - x0 + 2.0 * pad, y1 - y0 + 2.0 * pad);
        let px = 600.0 / w.max(h);
        let map = |p: [f64; 2]| ((p[0] - x0 + pad) * px, (y1 - p[1] + pad) * px);
        let poly = |it: &mut dyn Iterator<Item = [f64; 2]>| {
            it.map(|p| {
                let (a, b) = map(p);
                format!("{a:.2},{b:.2}")
            })
            .collect::<Vec<_>>()
            .join(" ")
        };
        let mut svg = format!(
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{:.0}" height="{:.0}"><rect width="100%" height="100%" fill="white"/>"#,
            w * px,
            h * px
        );
        svg.push_str(&format!(
            r##"<polyline points="{}" fill="none" stroke="#bbbbbb" stroke-width="{:.1}"/>"##,
            poly(&mut wp.iter().copied()),
            2.0 * px
        ));
        svg.push_str(&format!(
            r##"<polyline points="{}" fill="none" stroke="#1f5fbf" stroke-width="2"/>"##,
            poly(&mut self.steps.iter().map(|s| s.ego.position()))
        ));
        svg.push_str(&format!(
            r##"<polyline points="{}" fill="none" stroke="#c8327d" stroke-width="2"/>"##,
            poly(&mut self.steps.iter().map(|s| s.obstacle.position()))
        ));
        svg.push_str("</svg>\n");
        svg
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::Preset;
    use crate::policy::PolicyShape;
    use crate::route::RouteSet;
    use crate::sim::Environment;

    fn record(epoch: usize) -> EpochRecord {
        EpochRecord {
            epoch,
            mean_reward: -3.25 + epoch as f64 / 7.0,
            collisions: epoch % 5,
            batch_size: 16,
            mean_entropy: 0.1 * epoch as f64,
            mean_sigma: 0.2,
            grad_norm: 12.5,
        }
    }

    #[test]
    fn checkpoint_round_trip_and_validation() {
        let dir = tempfile::tempdir().unwrap();
        let g = ScenarioGraph::preset(Preset::CyclistCrossing);
        let p = PolicyParams::init(PolicyShape::for_graph(&g, 21, 8, 4), 5);
        let path = dir.path().join("ck.json");
        save_checkpoint(&path, &p).unwrap();
        assert_eq!(load_checkpoint(&path, &g, 21).unwrap(), p);
        assert!(load_checkpoint(&path, &g, 11).is_err());
        let other = ScenarioGraph::preset(Preset::RedLightRunner);
        assert!(load_checkpoint(&path, &other, 21).is_err());
    }

    #[test]
    fn metrics_log_round_trip_and_append_only() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("metrics.csv");
        let mut log = MetricsLog::create(&path).unwrap();
        for e in 1..=4 {
            log.append(&record(e)).unwrap();
        }
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text.lines().next().unwrap(), "epoch,mean_reward,collision_rate,entropy,grad_norm");
        let rows = read_metrics(&path).unwrap();
        assert_eq!(rows.len(), 4);
        assert_eq!(rows[2], MetricsRow::from(&record(3)));
        assert!(MetricsLog::create(&path).is_err());
    }

    #[test]
    fn ranked_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let g = ScenarioGraph::preset(Preset::CyclistCrossing);
        let spec = g.spec_from_physical(&[12.5, -4.0, 91.0, 17.0]).unwrap();
        let scored = vec![Scored {
            spec,
            outcome: Outcome { reward: 8.75, collision: true, route_occupied: false, min_separation: 1.25 },
        }];
        let path = dir.path().join("ranked.csv");
        write_ranked(&path, &g, &scored).unwrap();
        let back = read_ranked(&path, &g).unwrap();
        assert_eq!(back[0].outcome, scored[0].outcome);
        assert_eq!(back[0].spec.physical_values, scored[0].spec.physical_values);
        assert!(read_ranked(&path, &ScenarioGraph::preset(Preset::RedLightRunner)).is_err());
    }

    #[test]
    fn trace_replays_identically() {
        let dir = tempfile::tempdir().unwrap();
        let g = ScenarioGraph::preset(Preset::CyclistCrossing);
        let env = Environment::default();
        let route = RouteSet::find("left_25_r10").unwrap();
        let state = encode_state(&route, 30.0, &StateEncoding::default()).unwrap();
        let spec = g.spec_from_physical(&[18.0, -7.0, 99.0, 15.0]).unwrap();
        let (trace, r) = Trace::record(&g, &spec, &state, &env.sim, &env.reward).unwrap();
        assert_eq!(trace.steps.len(), r.steps_executed + 1);
        let path = dir.path().join("t.jsonl");
        trace.save(&path).unwrap();
        let back = Trace::load(&path).unwrap();
        assert_eq!(back, trace);
        let again = back.resimulate().unwrap();
        assert_eq!(again.trace, trace.steps);
        assert_eq!(again.collision, trace.header.collision);
        assert!(trace.to_svg().contains("polyline"));
    }

    #[test]
    fn bad_files_are_errors() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x");
        std::fs::write(&path, "").unwrap();
        assert!(Trace::load(&path).is_err());
        assert!(read_metrics(&path).is_err());
        assert!(Trace::load(dir.path().join("missing")).is_err());
    }
}

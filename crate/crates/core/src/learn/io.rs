//! Agent files: one JSON header line, then one line of space-separated
//! parameters per network in header order.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Agent, Algorithm, LearnError, Mlp, TrainConfig};
use crate::noise::ActionBox;

const FORMAT: &str = "pani-agent";
const VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct NetHeader {
    name: String,
    dims: Vec<usize>,
    layer_norm: bool,
    n_params: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    format: String,
    version: u32,
    algorithm: Algorithm,
    action_low: Vec<f64>,
    action_high: Vec<f64>,
    nets: Vec<NetHeader>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    config: Option<TrainConfig>,
}

const NAMES: [&str; 7] = ["actor", "actor_target", "q1", "q2", "q1_target", "q2_target", "value"];

fn nets(agent: &Agent) -> Vec<(&'static str, &Mlp)> {
    let mut v = vec![
        (NAMES[0], &agent.actor),
        (NAMES[1], &agent.actor_target),
        (NAMES[2], &agent.q1),
        (NAMES[3], &agent.q2),
        (NAMES[4], &agent.q1_target),
        (NAMES[5], &agent.q2_target),
    ];
    if let Some(v_net) = &agent.value {
        v.push((NAMES[6], v_net));
    }
    v
}

/// Writes the agent; `config` is echoed into the header when given.
pub fn write_agent<W: Write>(agent: &Agent, config: Option<&TrainConfig>, mut out: W) -> Result<(), LearnError> {
    let list = nets(agent);
    let header = Header {
        format: FORMAT.into(),
        version: VERSION,
        algorithm: agent.algorithm,
        action_low: agent.bounds.low().to_vec(),
        action_high: agent.bounds.high().to_vec(),
        nets: list
            .iter()
            .map(|(name, m)| NetHeader {
                name: (*name).into(),
                dims: m.dims().to_vec(),
                layer_norm: m.layer_norm(),
                n_params: m.n_params(),
            })
            .collect(),
        config: config.cloned(),
    };
    let json = serde_json::to_string(&header).map_err(|e| LearnError::Format(e.to_string()))?;
    writeln!(out, "{json}")?;
    for (_, m) in list {
        let line: Vec<String> = m.params().iter().map(|p| p.to_string()).collect();
        writeln!(out, "{}", line.join(" "))?;
    }
    Ok(())
}

/// Reads an agent and the echoed config, if any. Optimizer state is reset.
pub fn read_agent<R: Read>(input: R) -> Result<(Agent, Option<TrainConfig>), LearnError> {
    let mut lines = BufReader::new(input).lines();
    let first = lines.next().ok_or_else(|| LearnError::Format("empty file".into()))??;
    let header: Header = serde_json::from_str(&first).map_err(|e| LearnError::Format(format!("header: {e}")))?;
    if header.format != FORMAT || header.version != VERSION {
        return Err(LearnError::Format(format!("unsupported format {} v{}", header.format, header.version)));
    }
    let bounds = ActionBox::new(header.action_low, header.action_high)?;
    let mut loaded = Vec::new();
    for (i, nh) in header.nets.iter().enumerate() {
        if NAMES.get(i) != Some(&nh.name.as_str()) {
            return Err(LearnError::Format(format!("unexpected network `{}` at position {i}", nh.name)));
        }
        let line =
            lines.next().ok_or_else(|| LearnError::Format(format!("missing parameters for `{}`", nh.name)))??;
        let params = line
            .split_whitespace()
            .map(|t| t.parse::<f64>())
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| LearnError::Format(format!("`{}`: {e}", nh.name)))?;
        if params.len() != nh.n_params {
            return Err(LearnError::Format(format!(
                "`{}` has {} parameters, header says {}",
                nh.name,
                params.len(),
                nh.n_params
            )));
        }
        loaded.push(Mlp::from_params(&nh.dims, nh.layer_norm, params)?);
    }
    let value = match (header.algorithm, loaded.len()) {
        (Algorithm::IqlAn, 7) => loaded.pop(),
        (Algorithm::Td3An, 6) => None,
        (alg, n) => return Err(LearnError::Format(format!("{alg} agent with {n} networks"))),
    };
    let six: [Mlp; 6] = loaded.try_into().map_err(|_| LearnError::Format("network count".into()))?;
    Ok((Agent::from_parts(header.algorithm, bounds, six, value)?, header.config))
}

pub fn save_agent(agent: &Agent, config: Option<&TrainConfig>, path: impl AsRef<Path>) -> Result<(), LearnError> {
    let mut w = BufWriter::new(File::create(path)?);
    write_agent(agent, config, &mut w)?;
    w.flush()?;
    Ok(())
}

pub fn load_agent(path: impl AsRef<Path>) -> Result<(Agent, Option<TrainConfig>), LearnError> {
    read_agent(File::open(path)?)
}

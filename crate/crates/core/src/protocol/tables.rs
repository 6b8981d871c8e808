use std::collections::BTreeMap;
use std::io::Read;

use serde::{Deserialize, Serialize};

use super::{srcc, ProtocolError, Srcc};

/// One row of a per-task success-rate table. Rates are percentages or
/// fractions; the correlation does not care which.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateRow {
    #[serde(default)]
    pub method: Option<String>,
    pub task: String,
    pub sim_rate: f64,
    pub real_rate: f64,
}

pub fn read_rate_table(reader: impl Read) -> Result<Vec<RateRow>, ProtocolError> {
    let mut r = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(reader);
    r.deserialize()
        .collect::<Result<Vec<RateRow>, _>>()
        .map_err(|e| ProtocolError::Table(e.to_string()))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MethodSummary {
    pub method: String,
    pub tasks: usize,
    pub mean_sim_rate: f64,
    pub srcc: Srcc,
}

/// SRCC and mean simulated rate per method, in first-appearance order.
/// Rows without a method are grouped under "default".
pub fn srcc_by_method(rows: &[RateRow]) -> Result<Vec<MethodSummary>, ProtocolError> {
    let mut order: Vec<String> = Vec::new();
    let mut groups: BTreeMap<String, (Vec<f64>, Vec<f64>)> = BTreeMap::new();
    for row in rows {
        let m = row.method.clone().unwrap_or_else(|| "default".to_string());
        if !groups.contains_key(&m) {
            order.push(m.clone());
        }
        let g = groups.entry(m).or_default();
        g.0.push(row.sim_rate);
        g.1.push(row.real_rate);
    }
    order
        .into_iter()
        .map(|m| {
            let (sim, real) = &groups[&m];
            Ok(MethodSummary {
                tasks: sim.len(),
                mean_sim_rate: sim.iter().sum::<f64>() / sim.len() as f64,
                srcc: srcc(sim, real)?,
                method: m,
            })
        })
        .collect()
}

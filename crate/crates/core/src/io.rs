//! CSV and JSON formats for cohorts, statistics and chains. Numbers are
//! written in shortest round-trip form.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::bayes::Chain;
use crate::error::{Error, Result};
use crate::model::{canonicalize_labels, SubjectDesign};
use crate::simulate::{Cohort, Path};
use crate::suffstats::SuffStats;

/// `subject,t,X`, one row per grid point.
pub fn write_cohort_csv<W: Write>(cohort: &Cohort, w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["subject", "t", "X"])?;
    for (i, p) in cohort.paths.iter().enumerate() {
        let id = i.to_string();
        for (t, x) in p.times.iter().zip(&p.values) {
            out.write_record([id.as_str(), &t.to_string(), &x.to_string()])?;
        }
    }
    out.flush()?;
    Ok(())
}

#[derive(Debug, Deserialize)]
struct CohortRow {
    subject: usize,
    t: f64,
    #[serde(rename = "X")]
    x: f64,
}

/// Reads `subject,t,X` rows back into paths, ordered by subject id. Rows of
/// one subject must be contiguous and in time order.
pub fn read_cohort_csv<R: Read>(r: R) -> Result<Vec<(usize, Path)>> {
    let mut rdr = csv::Reader::from_reader(r);
    let mut out: Vec<(usize, Path)> = Vec::new();
    for row in rdr.deserialize() {
        let row: CohortRow = row?;
        match out.last_mut() {
            Some((id, p)) if *id == row.subject => {
                if !(row.t > *p.times.last().unwrap_or(&f64::NEG_INFINITY)) {
                    return Err(Error::Precondition(format!("subject {id}: times are not increasing")));
                }
                p.times.push(row.t);
                p.values.push(row.x);
            }
            _ => {
                if out.iter().any(|(id, _)| *id == row.subject) {
                    return Err(Error::Precondition(format!("rows of subject {} are not contiguous", row.subject)));
                }
                out.push((
                    row.subject,
                    Path { times: vec![row.t], values: vec![row.x], dt: f64::NAN, seed: 0, stream: row.subject as u64 },
                ));
            }
        }
    }
    for (id, p) in &mut out {
        if p.times.len() < 2 {
            return Err(Error::Precondition(format!("subject {id} has fewer than two time points")));
        }
        p.dt = p.times[1] - p.times[0];
    }
    out.sort_by_key(|(id, _)| *id);
    Ok(out)
}

/// Per-subject metadata written next to a simulated cohort.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sidecar {
    pub seed: u64,
    pub dt: f64,
    pub model: String,
    pub subjects: Vec<SubjectMeta>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SubjectMeta {
    pub subject: usize,
    pub x0: f64,
    #[serde(rename = "T")]
    pub horizon: f64,
    pub phi: f64,
    /// 1-based component label.
    pub z: usize,
}

impl Sidecar {
    pub fn from_cohort(cohort: &Cohort, model: &str) -> Self {
        Self {
            seed: cohort.seed,
            dt: cohort.dt,
            model: model.into(),
            subjects: (0..cohort.len())
                .map(|i| SubjectMeta {
                    subject: i,
                    x0: cohort.designs[i].x0,
                    horizon: cohort.designs[i].horizon,
                    phi: cohort.effects[i],
                    z: cohort.labels[i] + 1,
                })
                .collect(),
        }
    }
}

/// `subject,U,V,x0,T`.
pub fn write_stats_csv<W: Write>(stats: &[SuffStats], w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["subject", "U", "V", "x0", "T"])?;
    for (i, s) in stats.iter().enumerate() {
        out.write_record([
            i.to_string(),
            s.u.to_string(),
            s.v.to_string(),
            s.design.x0.to_string(),
            s.design.horizon.to_string(),
        ])?;
    }
    out.flush()?;
    Ok(())
}

#[derive(Debug, Deserialize)]
struct StatsRow {
    #[allow(dead_code)]
    subject: usize,
    #[serde(rename = "U")]
    u: f64,
    #[serde(rename = "V")]
    v: f64,
    x0: f64,
    #[serde(rename = "T")]
    horizon: f64,
}

pub fn read_stats_csv<R: Read>(r: R) -> Result<Vec<SuffStats>> {
    let mut rdr = csv::Reader::from_reader(r);
    rdr.deserialize()
        .map(|row| {
            let row: StatsRow = row?;
            Ok(SuffStats::new(row.u, row.v, SubjectDesign::new(row.x0, row.horizon)))
        })
        .collect()
}

/// Post-burn-in draws in natural coordinates with canonical labels, plus the
/// log posterior: `iter,a_1..a_M,mu_1..mu_M,omega2_1..omega2_M,log_post`.
pub fn write_chain_csv<W: Write>(chain: &Chain, w: W) -> Result<()> {
    let m = chain.chart.components;
    let mut out = csv::Writer::from_writer(w);
    let mut header = vec!["iter".to_string()];
    header.extend(crate::asymptotics::natural_labels(m));
    header.push("log_post".into());
    out.write_record(&header)?;
    for i in chain.burn_in..chain.draws.len() {
        let theta = canonicalize_labels(&chain.params(i));
        let mut rec = vec![i.to_string()];
        rec.extend(theta.to_vec().iter().map(|v| v.to_string()));
        rec.push(chain.log_post[i].to_string());
        out.write_record(&rec)?;
    }
    out.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{MixtureParams, SdeModel};
    use crate::simulate::simulate_cohort;

    #[test]
    fn cohort_round_trip_is_exact() {
        let designs = vec![SubjectDesign::new(1.0, 1.0); 3];
        let c = simulate_cohort(&SdeModel::linear(), &MixtureParams::single(0.5, 0.2), &designs, 0.01, 4).unwrap();
        let mut buf = Vec::new();
        write_cohort_csv(&c, &mut buf).unwrap();
        let back = read_cohort_csv(buf.as_slice()).unwrap();
        assert_eq!(back.len(), 3);
        for (i, (id, p)) in back.iter().enumerate() {
            assert_eq!(*id, i);
            assert_eq!(p.values, c.paths[i].values);
            assert_eq!(p.times, c.paths[i].times);
        }
    }

    #[test]
    fn stats_round_trip_is_exact() {
        let stats = vec![
            SuffStats::new(0.1 + 0.2, 1.0 / 3.0, SubjectDesign::new(1.0, 2.0)),
            SuffStats::new(-1e-300, 7.5e12, SubjectDesign::new(-0.5, 1.0)),
        ];
        let mut buf = Vec::new();
        write_stats_csv(&stats, &mut buf).unwrap();
        assert_eq!(read_stats_csv(buf.as_slice()).unwrap(), stats);
    }
}

use std::io::{Read, Write};

use crate::agent::{EpisodeRecord, UpdateMetrics};
use crate::envs::Modality;
use crate::error::{Error, Result};

/// Bumped whenever the column layout of `metrics.csv` changes.
pub const METRICS_VERSION: u32 = 1;

/// Leading columns of `metrics.csv`; one `lambda_<modality>` column per
/// modality follows.
pub const METRICS_FIXED_COLUMNS: [&str; 8] =
    ["episode", "env_steps", "return", "success", "loss_actor", "loss_critic", "loss_sim", "loss_td"];

/// One finished training episode. Losses come from the update that consumed
/// the rollout in which the episode ended.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricsRow {
    pub episode: usize,
    pub env_steps: u64,
    pub ret: f64,
    pub success: bool,
    pub loss_actor: f64,
    pub loss_critic: f64,
    pub loss_sim: f64,
    pub loss_td: f64,
    pub lambda: Vec<f64>,
}

impl MetricsRow {
    pub fn new(episode: &EpisodeRecord, update: &UpdateMetrics) -> Self {
        MetricsRow {
            episode: episode.index,
            env_steps: episode.env_steps,
            ret: episode.ret,
            success: episode.success,
            loss_actor: update.loss_actor,
            loss_critic: update.loss_critic,
            loss_sim: update.loss_sim,
            loss_td: update.loss_td,
            lambda: episode.mean_lambda.clone(),
        }
    }

    fn fields(&self) -> Vec<String> {
        let mut out = vec![
            self.episode.to_string(),
            self.env_steps.to_string(),
            self.ret.to_string(),
            u8::from(self.success).to_string(),
            self.loss_actor.to_string(),
            self.loss_critic.to_string(),
            self.loss_sim.to_string(),
            self.loss_td.to_string(),
        ];
        out.extend(self.lambda.iter().map(f64::to_string));
        out
    }
}

pub fn metrics_header(modalities: &[Modality]) -> Vec<String> {
    METRICS_FIXED_COLUMNS
        .iter()
        .map(|c| c.to_string())
        .chain(modalities.iter().map(|m| format!("lambda_{}", m.name())))
        .collect()
}

pub struct MetricsWriter<W: Write> {
    inner: csv::Writer<W>,
    columns: usize,
}

impl<W: Write> MetricsWriter<W> {
    pub fn new(out: W, modalities: &[Modality]) -> Result<Self> {
        let header = metrics_header(modalities);
        let mut inner = csv::Writer::from_writer(out);
        inner.write_record(&header)?;
        Ok(MetricsWriter { inner, columns: header.len() })
    }

    pub fn write(&mut self, row: &MetricsRow) -> Result<()> {
        let fields = row.fields();
        if fields.len() != self.columns {
            return Err(Error::Config(format!("metrics row has {} fields, header {}", fields.len(), self.columns)));
        }
        self.inner.write_record(&fields)?;
        Ok(())
    }

    pub fn into_inner(self) -> Result<W> {
        self.inner.into_inner().map_err(|e| Error::Io(e.into_error()))
    }
}

fn schema_error(line: usize, msg: impl std::fmt::Display) -> Error {
    Error::Config(format!("metrics.csv line {line}: {msg}"))
}

fn parse<T: std::str::FromStr>(s: &str, column: &str, line: usize) -> Result<T> {
    s.parse().map_err(|_| schema_error(line, format!("column `{column}` is not numeric: `{s}`")))
}

/// Parses `metrics.csv` under the strict schema: known header, exact column
/// count, numeric fields, success in {0, 1}, consecutive episode indices.
pub fn read_metrics<R: Read>(input: R) -> Result<(Vec<String>, Vec<MetricsRow>)> {
    let mut reader = csv::ReaderBuilder::new().flexible(false).from_reader(input);
    let header: Vec<String> = reader.headers()?.iter().map(str::to_owned).collect();
    let fixed = METRICS_FIXED_COLUMNS.len();
    if header.len() <= fixed
        || header[..fixed].iter().zip(METRICS_FIXED_COLUMNS).any(|(a, b)| a != b)
        || header[fixed..].iter().any(|c| !c.starts_with("lambda_"))
    {
        return Err(schema_error(1, format!("unexpected header {header:?}")));
    }
    let mut rows = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let line = i + 2;
        let rec = rec?;
        if rec.len() != header.len() {
            return Err(schema_error(line, format!("{} fields, expected {}", rec.len(), header.len())));
        }
        let f = |k: usize| rec.get(k).unwrap_or_default();
        let success = match f(3) {
            "0" => false,
            "1" => true,
            other => return Err(schema_error(line, format!("success must be 0 or 1, got `{other}`"))),
        };
        let row = MetricsRow {
            episode: parse(f(0), "episode", line)?,
            env_steps: parse(f(1), "env_steps", line)?,
            ret: parse(f(2), "return", line)?,
            success,
            loss_actor: parse(f(4), "loss_actor", line)?,
            loss_critic: parse(f(5), "loss_critic", line)?,
            loss_sim: parse(f(6), "loss_sim", line)?,
            loss_td: parse(f(7), "loss_td", line)?,
            lambda: (fixed..header.len()).map(|k| parse(f(k), &header[k], line)).collect::<Result<_>>()?,
        };
        if row.episode != rows.len() {
            return Err(schema_error(line, format!("episode {} out of order", row.episode)));
        }
        rows.push(row);
    }
    Ok((header, rows))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(i: usize) -> MetricsRow {
        MetricsRow {
            episode: i,
            env_steps: 10 * (i as u64 + 1),
            ret: -3.5 + i as f64,
            success: i % 2 == 1,
            loss_actor: 0.1 / 3.0,
            loss_critic: 1e-12,
            loss_sim: 0.0,
            loss_td: -0.25,
            lambda: vec![0.6, 0.4],
        }
    }

    #[test]
    fn write_then_read_is_exact() {
        let mut w = MetricsWriter::new(Vec::new(), &[Modality::Visual, Modality::Audio]).unwrap();
        let rows: Vec<MetricsRow> = (0..3).map(row).collect();
        for r in &rows {
            w.write(r).unwrap();
        }
        let bytes = w.into_inner().unwrap();
        let text = String::from_utf8(bytes.clone()).unwrap();
        assert!(text.starts_with(
            "episode,env_steps,return,success,loss_actor,loss_critic,loss_sim,loss_td,lambda_visual,lambda_audio\n"
        ));
        let (header, back) = read_metrics(bytes.as_slice()).unwrap();
        assert_eq!(header.len(), 10);
        assert_eq!(back, rows);
    }

    #[test]
    fn schema_violations_are_rejected() {
        let head = "episode,env_steps,return,success,loss_actor,loss_critic,loss_sim,loss_td,lambda_visual\n";
        for body in [
            "0,1,2,1,0,0,0,0\n",
            "0,1,2,yes,0,0,0,0,1\n",
            "0,1,abc,1,0,0,0,0,1\n",
            "1,1,2,1,0,0,0,0,1\n",
        ] {
            assert!(read_metrics(format!("{head}{body}").as_bytes()).is_err(), "{body}");
        }
        assert!(read_metrics("episode,steps\n".as_bytes()).is_err());
        assert!(read_metrics(format!("{head}0,1,2,1,0,0,0,0,1\n").as_bytes()).is_ok());
    }
}

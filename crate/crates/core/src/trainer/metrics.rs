use std::io::{Read, Write};

use thiserror::Error;

use crate::swucb::SightRange;

const FIXED_COLUMNS: [&str; 7] = [
    "episode",
    "env_steps",
    "mode",
    "selected_d",
    "episode_return",
    "eval_return",
    "eps",
];

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("line {line}: {msg}")]
    Malformed { line: u64, msg: String },
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

/// Windowed statistics of one arm after an episode.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ArmStat {
    pub mean: Option<f64>,
    pub count: usize,
}

/// One training episode.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRow {
    /// 1-based episode index.
    pub episode: u64,
    /// Environment steps taken so far, this episode included.
    pub env_steps: u64,
    pub mode: String,
    pub selected_d: SightRange,
    pub episode_return: f64,
    pub eval_return: Option<f64>,
    pub eps: f64,
    pub arms: Vec<ArmStat>,
}

/// Per-episode metrics of one run, with the arm values that name the
/// trailing `mean_d{v}, count_d{v}` column pairs.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct MetricsTable {
    pub arms: Vec<SightRange>,
    pub rows: Vec<MetricsRow>,
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

impl MetricsTable {
    pub fn header(&self) -> Vec<String> {
        let mut h: Vec<String> = FIXED_COLUMNS.iter().map(|s| s.to_string()).collect();
        for d in &self.arms {
            h.push(format!("mean_d{d}"));
            h.push(format!("count_d{d}"));
        }
        h
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<(), MetricsError> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(self.header())?;
        for r in &self.rows {
            let mut rec = vec![
                r.episode.to_string(),
                r.env_steps.to_string(),
                r.mode.clone(),
                r.selected_d.to_string(),
                r.episode_return.to_string(),
                opt(r.eval_return),
                r.eps.to_string(),
            ];
            for a in &r.arms {
                rec.push(opt(a.mean));
                rec.push(a.count.to_string());
            }
            w.write_record(&rec)?;
        }
        w.flush().map_err(csv::Error::from)?;
        Ok(())
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("csv is utf-8")
    }

    pub fn read_csv<R: Read>(input: R) -> Result<Self, MetricsError> {
        let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(input);
        let header = rdr.headers()?.clone();
        let bad = |line: u64, msg: String| MetricsError::Malformed { line, msg };
        if header.len() < FIXED_COLUMNS.len() || header.iter().zip(FIXED_COLUMNS).any(|(a, b)| a != b) {
            return Err(bad(1, format!("header must start with {}", FIXED_COLUMNS.join(","))));
        }
        let extra: Vec<&str> = header.iter().skip(FIXED_COLUMNS.len()).collect();
        if extra.len() % 2 != 0 {
            return Err(bad(1, "per-arm columns must come in mean/count pairs".into()));
        }
        let mut arms = Vec::new();
        for pair in extra.chunks(2) {
            let d = pair[0]
                .strip_prefix("mean_d")
                .and_then(|v| v.parse::<SightRange>().ok())
                .ok_or_else(|| bad(1, format!("expected mean_d<value>, got {:?}", pair[0])))?;
            if pair[1] != format!("count_d{d}") {
                return Err(bad(1, format!("expected count_d{d}, got {:?}", pair[1])));
            }
            arms.push(d);
        }

        let mut rows = Vec::new();
        for (i, rec) in rdr.records().enumerate() {
            let rec = rec?;
            let line = i as u64 + 2;
            let field = |k: usize| rec.get(k).unwrap_or("");
            fn num<T: std::str::FromStr>(s: &str, name: &str, line: u64) -> Result<T, MetricsError> {
                s.parse().map_err(|_| MetricsError::Malformed {
                    line,
                    msg: format!("bad {name} {s:?}"),
                })
            }
            let optional = |s: &str, name: &str| -> Result<Option<f64>, MetricsError> {
                if s.is_empty() {
                    Ok(None)
                } else {
                    num(s, name, line).map(Some)
                }
            };
            let mut stats = Vec::with_capacity(arms.len());
            for (a, d) in arms.iter().enumerate() {
                let k = FIXED_COLUMNS.len() + 2 * a;
                stats.push(ArmStat {
                    mean: optional(field(k), &format!("mean_d{d}"))?,
                    count: num(field(k + 1), &format!("count_d{d}"), line)?,
                });
            }
            rows.push(MetricsRow {
                episode: num(field(0), "episode", line)?,
                env_steps: num(field(1), "env_steps", line)?,
                mode: field(2).to_string(),
                selected_d: num(field(3), "selected_d", line)?,
                episode_return: num(field(4), "episode_return", line)?,
                eval_return: optional(field(5), "eval_return")?,
                eps: num(field(6), "eps", line)?,
                arms: stats,
            });
        }
        Ok(Self { arms, rows })
    }

    /// Last recorded evaluation return, if any.
    pub fn final_eval(&self) -> Option<f64> {
        self.rows.iter().rev().find_map(|r| r.eval_return)
    }

    /// `(env_steps, eval_return)` for every evaluated episode.
    pub fn eval_points(&self) -> Vec<(u64, f64)> {
        self.rows
            .iter()
            .filter_map(|r| r.eval_return.map(|v| (r.env_steps, v)))
            .collect()
    }
}

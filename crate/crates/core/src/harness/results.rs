use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use super::HarnessError;

/// Bumped whenever [`RESULT_COLUMNS`] changes.
pub const RESULTS_SCHEMA_VERSION: u32 = 1;

pub const RESULT_COLUMNS: [&str; 13] = [
    "run_id",
    "snr_db",
    "trial",
    "iteration",
    "masking_mode",
    "ratio",
    "detector",
    "token_acc",
    "masked_recovery_acc",
    "exact_match",
    "sim",
    "symbols_tx",
    "wall_ms",
];

/// One results row: a (SNR, trial, iteration) triple.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub run_id: String,
    pub snr_db: f64,
    pub trial: usize,
    pub iteration: usize,
    pub masking_mode: String,
    pub ratio: f64,
    pub detector: String,
    pub token_acc: f64,
    /// Empty when nothing was masked.
    pub masked_recovery_acc: Option<f64>,
    pub exact_match: u8,
    /// Empty when similarity scoring is off or failed.
    pub sim: Option<f64>,
    pub symbols_tx: usize,
    pub wall_ms: f64,
}

pub fn write_results<W: Write>(out: W, rows: &[ResultRow]) -> Result<(), HarnessError> {
    let mut w = csv::Writer::from_writer(out);
    if rows.is_empty() {
        w.write_record(RESULT_COLUMNS)?;
    }
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| HarnessError::Csv(e.to_string()))?;
    Ok(())
}

pub fn read_results<R: Read>(input: R) -> Result<Vec<ResultRow>, HarnessError> {
    let mut r = csv::Reader::from_reader(input);
    let headers: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    if headers != RESULT_COLUMNS {
        return Err(HarnessError::Csv(format!(
            "unexpected columns {headers:?} (schema v{RESULTS_SCHEMA_VERSION})"
        )));
    }
    r.deserialize().map(|row| row.map_err(HarnessError::from)).collect()
}

/// Mean and standard error over one sweep point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub series: String,
    pub masking_mode: String,
    pub ratio: f64,
    pub detector: String,
    pub snr_db: f64,
    pub iteration: usize,
    pub trials: usize,
    pub token_acc_mean: f64,
    pub token_acc_stderr: f64,
    pub masked_recovery_acc_mean: Option<f64>,
    pub masked_recovery_acc_stderr: Option<f64>,
    pub exact_match_rate: f64,
    pub sim_mean: Option<f64>,
    pub sim_stderr: Option<f64>,
    pub symbols_tx_mean: f64,
}

fn mean_stderr(xs: &[f64]) -> Option<(f64, f64)> {
    if xs.is_empty() {
        return None;
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let stderr = if xs.len() > 1 {
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
        (var / n).sqrt()
    } else {
        0.0
    };
    Some((mean, stderr))
}

/// Aggregates rows per (series, SNR, iteration), in order of first appearance.
pub fn summarize(rows: &[ResultRow]) -> Vec<SummaryRow> {
    let mut keys: Vec<(String, String, u64, String, u64, usize)> = Vec::new();
    let mut groups: Vec<Vec<&ResultRow>> = Vec::new();
    for r in rows {
        let key = (
            r.run_id.clone(),
            r.masking_mode.clone(),
            r.ratio.to_bits(),
            r.detector.clone(),
            r.snr_db.to_bits(),
            r.iteration,
        );
        match keys.iter().position(|k| *k == key) {
            Some(g) => groups[g].push(r),
            None => {
                keys.push(key);
                groups.push(vec![r]);
            }
        }
    }
    groups
        .into_iter()
        .map(|g| {
            let first = g[0];
            let token: Vec<f64> = g.iter().map(|r| r.token_acc).collect();
            let masked: Vec<f64> = g.iter().filter_map(|r| r.masked_recovery_acc).collect();
            let sim: Vec<f64> = g.iter().filter_map(|r| r.sim).collect();
            let (token_acc_mean, token_acc_stderr) = mean_stderr(&token).unwrap_or_default();
            let masked = mean_stderr(&masked);
            let sim = mean_stderr(&sim);
            SummaryRow {
                series: format!("{}/{}@{}", first.detector, first.masking_mode, first.ratio),
                masking_mode: first.masking_mode.clone(),
                ratio: first.ratio,
                detector: first.detector.clone(),
                snr_db: first.snr_db,
                iteration: first.iteration,
                trials: g.len(),
                token_acc_mean,
                token_acc_stderr,
                masked_recovery_acc_mean: masked.map(|m| m.0),
                masked_recovery_acc_stderr: masked.map(|m| m.1),
                exact_match_rate: g.iter().map(|r| f64::from(r.exact_match)).sum::<f64>() / g.len() as f64,
                sim_mean: sim.map(|m| m.0),
                sim_stderr: sim.map(|m| m.1),
                symbols_tx_mean: g.iter().map(|r| r.symbols_tx as f64).sum::<f64>() / g.len() as f64,
            }
        })
        .collect()
}

pub fn write_summary<W: Write>(out: W, rows: &[SummaryRow]) -> Result<(), HarnessError> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| HarnessError::Csv(e.to_string()))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(trial: usize, iteration: usize, acc: f64, sim: Option<f64>) -> ResultRow {
        ResultRow {
            run_id: "abc".into(),
            snr_db: 5.0,
            trial,
            iteration,
            masking_mode: "random".into(),
            ratio: 0.1,
            detector: "iterative".into(),
            token_acc: acc,
            masked_recovery_acc: None,
            exact_match: u8::from(acc == 1.0),
            sim,
            symbols_tx: 464,
            wall_ms: 1.5,
        }
    }

    #[test]
    fn header_is_pinned() {
        let mut buf = Vec::new();
        write_results(&mut buf, &[row(0, 1, 0.5, None)]).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let header = text.lines().next().unwrap();
        assert_eq!(
            header,
            "run_id,snr_db,trial,iteration,masking_mode,ratio,detector,token_acc,\
             masked_recovery_acc,exact_match,sim,symbols_tx,wall_ms"
        );
        assert_eq!(header.split(',').collect::<Vec<_>>(), RESULT_COLUMNS);
        // absent optional fields are empty cells
        assert_eq!(text.lines().nth(1).unwrap(), "abc,5.0,0,1,random,0.1,iterative,0.5,,0,,464,1.5");
        let mut empty = Vec::new();
        write_results(&mut empty, &[]).unwrap();
        assert_eq!(String::from_utf8(empty).unwrap().trim(), header);
    }

    #[test]
    fn read_back_and_summarize() {
        let rows = vec![
            row(0, 1, 0.5, Some(0.9)),
            row(0, 2, 1.0, None),
            row(1, 1, 0.7, Some(0.7)),
            row(1, 2, 1.0, None),
        ];
        let mut buf = Vec::new();
        write_results(&mut buf, &rows).unwrap();
        let back = read_results(buf.as_slice()).unwrap();
        assert_eq!(back, rows);
        let s = summarize(&back);
        assert_eq!(s.len(), 2);
        assert_eq!(s[0].iteration, 1);
        assert!((s[0].token_acc_mean - 0.6).abs() < 1e-12);
        // sample sd of {0.5, 0.7} is 0.1414..., stderr = sd / sqrt 2 = 0.1
        assert!((s[0].token_acc_stderr - 0.1).abs() < 1e-12);
        assert!((s[0].sim_mean.unwrap() - 0.8).abs() < 1e-12);
        assert_eq!(s[1].exact_match_rate, 1.0);
        assert_eq!(s[1].sim_mean, None);
        assert_eq!(s[0].series, "iterative/random@0.1");
    }

    #[test]
    fn foreign_columns_rejected() {
        assert!(read_results("a,b\n1,2\n".as_bytes()).is_err());
    }
}

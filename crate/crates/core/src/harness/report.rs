use std::io::Write;

use super::experiment::{LatencyReport, PairedReport};
use super::HarnessError;

fn write_rows<W: Write>(out: W, rows: &[(&LatencyReport, Option<f64>)]) -> Result<(), HarnessError> {
    let max_runs = rows.iter().map(|(r, _)| r.runs.len()).max().unwrap_or(0);
    let mut w = csv::Writer::from_writer(out);
    let mut header: Vec<String> = ["n_services", "n_messages", "transport", "parallelism", "repetitions", "payload_bytes"]
        .map(String::from)
        .to_vec();
    header.extend((1..=max_runs).map(|i| format!("run_{i}")));
    header.extend(["harmonic_mean_ms", "median_ms", "perf_rate_pct"].map(String::from));
    w.write_record(&header)?;
    for (r, rate) in rows {
        let s = &r.spec;
        let mut rec = vec![
            s.n_services.to_string(),
            s.n_messages.to_string(),
            s.transport.to_string(),
            s.parallelism.to_string(),
            s.repetitions.to_string(),
            s.payload_bytes.to_string(),
        ];
        rec.extend((0..max_runs).map(|i| r.runs.get(i).map(|v| format!("{v:.4}")).unwrap_or_default()));
        rec.push(format!("{:.4}", r.harmonic_mean_ms));
        rec.push(format!("{:.4}", r.median_ms));
        rec.push(rate.map(|p| format!("{p:.2}")).unwrap_or_default());
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| HarnessError::Io {
        path: "<csv>".into(),
        source: e,
    })?;
    Ok(())
}

/// One row per report; `perf_rate_pct` is left empty.
pub fn write_reports<W: Write>(out: W, reports: &[LatencyReport]) -> Result<(), HarnessError> {
    let rows: Vec<_> = reports.iter().map(|r| (r, None)).collect();
    write_rows(out, &rows)
}

/// Two rows per cell, middleware first; only the middleware row carries
/// `perf_rate_pct`.
pub fn write_paired<W: Write>(out: W, cells: &[PairedReport]) -> Result<(), HarnessError> {
    let rows: Vec<_> = cells
        .iter()
        .flat_map(|c| [(&c.middleware, Some(c.perf_rate_pct())), (&c.baseline, None)])
        .collect();
    write_rows(out, &rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::{CounterSnapshot, ExperimentSpec, Transport};

    fn report(t: Transport, runs: Vec<f64>, hm: f64) -> LatencyReport {
        LatencyReport {
            spec: ExperimentSpec::new(5, 1, t).with_repetitions(runs.len()),
            runs,
            harmonic_mean_ms: hm,
            median_ms: hm,
            counters: CounterSnapshot::default(),
        }
    }

    #[test]
    fn paired_rows_carry_rate_on_middleware_only() {
        let cell = PairedReport {
            middleware: report(Transport::Middleware, vec![1.0, 1.0], 1.0),
            baseline: report(Transport::Baseline, vec![4.0, 4.0], 4.0),
        };
        let mut buf = Vec::new();
        write_paired(&mut buf, &[cell]).unwrap();
        let mut r = csv::Reader::from_reader(buf.as_slice());
        let headers = r.headers().unwrap().clone();
        assert_eq!(headers.get(6), Some("run_1"));
        assert_eq!(headers.iter().next_back(), Some("perf_rate_pct"));
        let rows: Vec<csv::StringRecord> = r.records().map(Result::unwrap).collect();
        assert_eq!(rows[0].get(2), Some("MIDDLEWARE"));
        assert_eq!(rows[0].get(10), Some("75.00"));
        assert_eq!(rows[1].get(10), Some(""));
    }

    #[test]
    fn ragged_run_counts_pad() {
        let mut buf = Vec::new();
        write_reports(&mut buf, &[
            report(Transport::Baseline, vec![1.0], 1.0),
            report(Transport::Baseline, vec![1.0, 2.0, 3.0], 1.6),
        ])
        .unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.lines().next().unwrap().contains("run_3"));
        assert_eq!(text.lines().nth(1).unwrap().split(',').count(), 12);
    }
}

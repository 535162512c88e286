//! Per-event metrics rows and their CSV encoding.

use std::io::{Read, Write};

use crate::error::{Error, Result};
use crate::strategy::{PNorm, RunTrace};

/// Column order of `metrics.csv`.
pub const HEADER: [&str; 12] = [
    "experiment",
    "strategy",
    "p",
    "rep",
    "seed",
    "t",
    "k",
    "T_k",
    "B_k",
    "true_err_k",
    "loss_p1",
    "loss_pinf",
];

/// One row per (event, matrix). `k` is one-based.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricsRow {
    pub experiment: String,
    pub strategy: String,
    pub p: Option<PNorm>,
    pub rep: usize,
    pub seed: u64,
    pub t: usize,
    pub k: usize,
    pub spent: usize,
    pub band: f64,
    pub true_err: f64,
    pub loss_p1: f64,
    pub loss_pinf: f64,
}

/// 17 significant digits, enough to round-trip any `f64`.
pub fn format_float(x: f64) -> String {
    if x.is_nan() {
        "nan".into()
    } else if x.is_infinite() {
        if x > 0.0 {
            "inf".into()
        } else {
            "-inf".into()
        }
    } else {
        format!("{x:.16e}")
    }
}

fn parse_float(field: &str) -> Result<f64> {
    field
        .parse()
        .map_err(|_| Error::MalformedRow(format!("bad float {field:?}")))
}

fn parse_int<T: std::str::FromStr>(field: &str) -> Result<T> {
    field
        .parse()
        .map_err(|_| Error::MalformedRow(format!("bad integer {field:?}")))
}

pub fn rows_from_trace(experiment: &str, p: Option<PNorm>, rep: usize, seed: u64, trace: &RunTrace) -> Vec<MetricsRow> {
    let mut rows = Vec::with_capacity(trace.events.len() * trace.dims.len());
    for event in &trace.events {
        for k in 0..trace.dims.len() {
            rows.push(MetricsRow {
                experiment: experiment.to_string(),
                strategy: trace.strategy.clone(),
                p,
                rep,
                seed,
                t: event.t,
                k: k + 1,
                spent: event.spent[k],
                band: event.bands[k],
                true_err: event.true_errors[k],
                loss_p1: event.loss_p1,
                loss_pinf: event.loss_pinf,
            });
        }
    }
    rows
}

pub fn write_rows<W: Write>(writer: W, rows: &[MetricsRow]) -> std::result::Result<(), csv::Error> {
    let mut out = csv::Writer::from_writer(writer);
    out.write_record(HEADER)?;
    for r in rows {
        out.write_record([
            r.experiment.clone(),
            r.strategy.clone(),
            r.p.map(|p| p.to_string()).unwrap_or_default(),
            r.rep.to_string(),
            r.seed.to_string(),
            r.t.to_string(),
            r.k.to_string(),
            r.spent.to_string(),
            format_float(r.band),
            format_float(r.true_err),
            format_float(r.loss_p1),
            format_float(r.loss_pinf),
        ])?;
    }
    out.flush()?;
    Ok(())
}

pub fn to_csv_string(rows: &[MetricsRow]) -> String {
    let mut buf = Vec::new();
    write_rows(&mut buf, rows).expect("writing to memory");
    String::from_utf8(buf).expect("csv output is utf-8")
}

pub fn read_rows<R: Read>(reader: R) -> Result<Vec<MetricsRow>> {
    let mut input = csv::Reader::from_reader(reader);
    let headers = input.headers().map_err(|e| Error::MalformedRow(e.to_string()))?.clone();
    if headers.iter().ne(HEADER.iter().copied()) {
        return Err(Error::MalformedRow(format!("unexpected header {headers:?}")));
    }
    let mut rows = Vec::new();
    for record in input.records() {
        let rec = record.map_err(|e| Error::MalformedRow(e.to_string()))?;
        let p = match &rec[2] {
            "" => None,
            s => Some(s.parse::<PNorm>()?),
        };
        rows.push(MetricsRow {
            experiment: rec[0].to_string(),
            strategy: rec[1].to_string(),
            p,
            rep: parse_int(&rec[3])?,
            seed: parse_int(&rec[4])?,
            t: parse_int(&rec[5])?,
            k: parse_int(&rec[6])?,
            spent: parse_int(&rec[7])?,
            band: parse_float(&rec[8])?,
            true_err: parse_float(&rec[9])?,
            loss_p1: parse_float(&rec[10])?,
            loss_pinf: parse_float(&rec[11])?,
        });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn header_is_exact() {
        let text = to_csv_string(&[]);
        assert_eq!(
            text.trim_end(),
            "experiment,strategy,p,rep,seed,t,k,T_k,B_k,true_err_k,loss_p1,loss_pinf"
        );
    }

    #[test]
    fn float_rendering() {
        assert_eq!(format_float(f64::INFINITY), "inf");
        assert_eq!(format_float(0.1), "1.0000000000000001e-1");
        assert_eq!(format_float(0.1).parse::<f64>().unwrap(), 0.1);
    }

    #[test]
    fn rejects_wrong_header() {
        assert!(read_rows("a,b\n1,2\n".as_bytes()).is_err());
    }

    fn arb_float() -> impl Strategy<Value = f64> {
        prop_oneof![
            any::<f64>().prop_filter("finite", |x| x.is_finite()),
            Just(f64::INFINITY)
        ]
    }

    fn arb_row() -> impl Strategy<Value = MetricsRow> {
        (
            "[a-z0-9-]{1,8}",
            prop_oneof![
                Just(None),
                Just(Some(PNorm::Infinite)),
                (1.0f64..10.0).prop_map(|p| Some(PNorm::Finite(p)))
            ],
            (any::<u16>(), any::<u64>(), any::<u32>(), 1usize..50, any::<u32>()),
            (arb_float(), arb_float(), arb_float(), arb_float()),
        )
            .prop_map(
                |(name, p, (rep, seed, t, k, spent), (band, err, l1, linf))| MetricsRow {
                    experiment: name.clone(),
                    strategy: format!("{name}-s"),
                    p,
                    rep: rep as usize,
                    seed,
                    t: t as usize,
                    k,
                    spent: spent as usize,
                    band,
                    true_err: err,
                    loss_p1: l1,
                    loss_pinf: linf,
                },
            )
    }

    proptest! {
        #[test]
        fn csv_round_trip(rows in proptest::collection::vec(arb_row(), 0..20)) {
            let text = to_csv_string(&rows);
            let back = read_rows(text.as_bytes()).unwrap();
            prop_assert_eq!(back, rows);
        }
    }
}

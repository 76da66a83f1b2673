//! CSV and JSON artifacts. Floats are written with 17 significant digits so
//! every value reloads bit for bit.

use std::fs::{File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dpe::{self, SolveDiagnostics, ValueGrid};
use crate::error::{Error, Result};
use crate::filter::FilterPath;
use crate::grid::Grid2D;
use crate::market::{Model, ModelParams, PathBundle};
use crate::regularization::ConvergenceReport;
use crate::rule::RuleKind;
use crate::state_space::{RegularizationConfig, StatePath, StateNoise};

/// `x` in scientific notation with 17 significant digits.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

pub fn parse_f64(s: &str) -> Result<f64> {
    s.trim()
        .parse()
        .map_err(|_| Error::Input(format!("not a number: {s:?}")))
}

fn writer(path: &Path) -> Result<csv::Writer<BufWriter<File>>> {
    Ok(csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(BufWriter::new(File::create(path)?)))
}

/// Write a CSV file with a header row.
pub fn write_csv<I>(path: &Path, header: &[String], rows: I) -> Result<()>
where
    I: IntoIterator<Item = Vec<String>>,
{
    let mut w = writer(path)?;
    w.write_record(header)?;
    for r in rows {
        if r.len() != header.len() {
            return Err(Error::Input(format!(
                "row has {} fields, header has {}",
                r.len(),
                header.len()
            )));
        }
        w.write_record(&r)?;
    }
    w.flush()?;
    Ok(())
}

/// Header and rows of a CSV file.
pub fn read_csv(path: &Path) -> Result<(Vec<String>, Vec<Vec<String>>)> {
    let mut r = csv::Reader::from_path(path)?;
    let header = r.headers()?.iter().map(str::to_string).collect();
    let rows = r
        .records()
        .map(|rec| rec.map(|r| r.iter().map(str::to_string).collect()))
        .collect::<std::result::Result<_, _>>()?;
    Ok((header, rows))
}

fn names(prefix: &str, n: usize) -> impl Iterator<Item = String> + '_ {
    (1..=n).map(move |i| format!("{prefix}_{i}"))
}

fn vech_names(d: usize) -> Vec<String> {
    (1..=d)
        .flat_map(|i| (1..=i).map(move |j| format!("Q_{i}{j}")))
        .collect()
}

fn vech(q: &[f64], d: usize) -> impl Iterator<Item = f64> + '_ {
    (0..d).flat_map(move |i| (0..=i).map(move |j| q[j * d + i]))
}

/// Bundle CSV: `t, mu_1..mu_d, R_1..R_d`.
pub fn write_bundle_csv(path: &Path, b: &PathBundle) -> Result<()> {
    let header: Vec<String> = std::iter::once("t".to_string())
        .chain(names("mu", b.d))
        .chain(names("R", b.d))
        .collect();
    let rows = (0..b.grid.len()).map(|i| {
        std::iter::once(b.grid[i])
            .chain(b.drift_at(i).iter().copied())
            .chain(b.return_at(i).iter().copied())
            .map(fmt_f64)
            .collect()
    });
    write_csv(path, &header, rows)
}

/// Views CSV: `T_k, Z_1..Z_d` (header only without arrivals).
pub fn write_views_csv(path: &Path, b: &PathBundle) -> Result<()> {
    let header: Vec<String> = std::iter::once("T_k".to_string()).chain(names("Z", b.d)).collect();
    let rows = b.views.iter().map(|v| {
        std::iter::once(v.arrival_time)
            .chain(v.value.iter().copied())
            .map(fmt_f64)
            .collect()
    });
    write_csv(path, &header, rows)
}

/// Filter CSV: `t, M_1..M_d, vech(Q), flag`.
pub fn write_filter_csv(path: &Path, f: &FilterPath) -> Result<()> {
    let d = f.d;
    let header: Vec<String> = std::iter::once("t".to_string())
        .chain(names("M", d))
        .chain(vech_names(d))
        .chain(std::iter::once("flag".to_string()))
        .collect();
    let rows = (0..f.len()).map(|r| {
        let q = &f.q[r * d * d..(r + 1) * d * d];
        let mut row: Vec<String> = std::iter::once(f.t[r])
            .chain(f.m_at(r).iter().copied())
            .chain(vech(q, d))
            .map(fmt_f64)
            .collect();
        row.push(f.kind[r].label().to_string());
        row
    });
    write_csv(path, &header, rows)
}

/// State path CSV: `t, m_1..m_d, g_1..g_n, flag` with `arrival` at view steps.
pub fn write_state_csv(path: &Path, model: &Model, noise: &StateNoise, p: &StatePath) -> Result<()> {
    let (d, n_g) = (model.d(), model.n_g());
    let dy = d + n_g;
    if p.y.len() != noise.grid.len() * dy {
        return Err(Error::Input("state path was not recorded".into()));
    }
    let header: Vec<String> = std::iter::once("t".to_string())
        .chain(names("m", d))
        .chain(names("g", n_g))
        .chain(std::iter::once("flag".to_string()))
        .collect();
    let rows = noise.grid.iter().enumerate().map(|(i, &t)| {
        let mut row: Vec<String> = std::iter::once(t)
            .chain(p.y[i * dy..(i + 1) * dy].iter().copied())
            .map(fmt_f64)
            .collect();
        let flag = if noise.view_steps.contains(&i) { "arrival" } else { "regular" };
        row.push(flag.to_string());
        row
    });
    write_csv(path, &header, rows)
}

/// Sidecar of a value-grid CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ValueGridMeta {
    pub grid: Grid2D,
    pub params: ModelParams,
    pub regularization: Option<RegularizationConfig>,
    pub diagnostics: SolveDiagnostics,
    /// Clip bound of the tabulated optimal rule.
    pub rule_clip: f64,
}

/// Value grid CSV (`t, m, q, V, Pi_star`) plus JSON sidecar.
pub fn write_value_grid(csv_path: &Path, json_path: &Path, model: &Model, vg: &ValueGrid) -> Result<()> {
    let rule = dpe::optimal_rule(model, vg)?;
    let RuleKind::Table(table) = &rule.kind else {
        return Err(Error::Consistency("optimal rule is not tabulated".into()));
    };
    let g = &vg.grid;
    let header: Vec<String> = ["t", "m", "q", "V", "Pi_star"].iter().map(|s| s.to_string()).collect();
    let rows = (0..g.t.n).flat_map(|i| {
        (0..g.q.n).flat_map(move |l| {
            (0..g.m.n).map(move |j| {
                let k = vg.index(i, j, l);
                [g.t.at(i), g.m.at(j), g.q.at(l), vg.values[k], table.values[k]]
                    .into_iter()
                    .map(fmt_f64)
                    .collect()
            })
        })
    });
    write_csv(csv_path, &header, rows)?;
    let meta = ValueGridMeta {
        grid: vg.grid,
        params: vg.params.clone(),
        regularization: vg.regularization,
        diagnostics: vg.diagnostics,
        rule_clip: rule.clip,
    };
    write_json(json_path, &meta)
}

/// Reload a value grid written by [`write_value_grid`].
pub fn read_value_grid(csv_path: &Path, json_path: &Path) -> Result<ValueGrid> {
    let meta: ValueGridMeta = read_json(json_path)?;
    let (header, rows) = read_csv(csv_path)?;
    if header != ["t", "m", "q", "V", "Pi_star"] {
        return Err(Error::Input(format!("unexpected value grid header {header:?}")));
    }
    let g = meta.grid;
    let n = g.t.n * g.q.n * g.m.n;
    if rows.len() != n {
        return Err(Error::Input(format!("value grid has {} rows, expected {n}", rows.len())));
    }
    let mut values = Vec::with_capacity(n);
    for (k, r) in rows.iter().enumerate() {
        let (i, rest) = (k / (g.q.n * g.m.n), k % (g.q.n * g.m.n));
        let (l, j) = (rest / g.m.n, rest % g.m.n);
        let t = parse_f64(&r[0])?;
        let m = parse_f64(&r[1])?;
        let q = parse_f64(&r[2])?;
        if t != g.t.at(i) || m != g.m.at(j) || q != g.q.at(l) {
            return Err(Error::Input(format!("row {} does not match the sidecar axes", k + 1)));
        }
        values.push(parse_f64(&r[3])?);
    }
    Ok(ValueGrid {
        grid: g,
        params: meta.params,
        regularization: meta.regularization,
        values,
        diagnostics: meta.diagnostics,
    })
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut f = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut f, value)?;
    f.write_all(b"\n")?;
    f.flush()?;
    Ok(())
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let f = File::open(path)?;
    Ok(serde_json::from_reader(std::io::BufReader::new(f))?)
}

/// Report as JSON plus the flat CSV `k, metric, estimate, std_error`.
pub fn write_report(json_path: &Path, csv_path: &Path, report: &ConvergenceReport) -> Result<()> {
    report.validate()?;
    write_json(json_path, report)?;
    let header: Vec<String> = ["k", "metric", "estimate", "std_error"].iter().map(|s| s.to_string()).collect();
    let rows = report
        .flat_rows()
        .into_iter()
        .map(|(k, name, est, se)| vec![k.to_string(), name.to_string(), fmt_f64(est), fmt_f64(se)]);
    write_csv(csv_path, &header, rows)
}

/// One row of the evaluation ledger.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LedgerRow {
    pub run_id: String,
    pub rule_kind: String,
    pub theta: f64,
    pub lambda: f64,
    pub n_paths: usize,
    pub estimate: f64,
    pub std_error: f64,
    pub seed: u64,
    pub wall_time_s: f64,
}

pub const LEDGER_HEADER: [&str; 9] = [
    "run_id", "rule_kind", "theta", "lambda", "n_paths", "estimate", "std_error", "seed", "wall_time_s",
];

impl LedgerRow {
    fn record(&self) -> Vec<String> {
        vec![
            self.run_id.clone(),
            self.rule_kind.clone(),
            fmt_f64(self.theta),
            fmt_f64(self.lambda),
            self.n_paths.to_string(),
            fmt_f64(self.estimate),
            fmt_f64(self.std_error),
            self.seed.to_string(),
            fmt_f64(self.wall_time_s),
        ]
    }
}

/// Append rows to a ledger, writing the header when the file is new or empty.
pub fn append_ledger(path: &Path, rows: &[LedgerRow]) -> Result<()> {
    let fresh = std::fs::metadata(path).map_or(true, |m| m.len() == 0);
    let file = OpenOptions::new().create(true).append(true).open(path)?;
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(BufWriter::new(file));
    if fresh {
        w.write_record(LEDGER_HEADER)?;
    }
    for r in rows {
        w.write_record(r.record())?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::market::{simulate_bundle, BundleOptions, OneAsset};
    use crate::rng::SeedTree;

    #[test]
    fn floats_round_trip() {
        for x in [0.1, 1.0 / 3.0, -2.5e-300, 6.02214076e23, f64::MIN_POSITIVE, 0.0] {
            assert_eq!(parse_f64(&fmt_f64(x)).unwrap().to_bits(), x.to_bits());
        }
        assert_eq!(fmt_f64(0.5), "5.0000000000000000e-1");
    }

    #[test]
    fn bundle_columns() {
        let m = OneAsset::default().model().unwrap();
        let b = simulate_bundle(&m, &BundleOptions { n_steps: 10 }, &SeedTree::new(1), 0).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("b.csv");
        write_bundle_csv(&p, &b).unwrap();
        let (h, rows) = read_csv(&p).unwrap();
        assert_eq!(h, ["t", "mu_1", "R_1"]);
        assert_eq!(rows.len(), b.grid.len());
        let text = std::fs::read_to_string(&p).unwrap();
        assert!(!text.contains('\r'));
    }

    #[test]
    fn vech_order() {
        assert_eq!(vech_names(2), ["Q_11", "Q_21", "Q_22"]);
        let q = [1.0, 2.0, 2.0, 3.0];
        assert_eq!(vech(&q, 2).collect::<Vec<_>>(), [1.0, 2.0, 3.0]);
    }

    #[test]
    fn ledger_header_once() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("l.csv");
        let row = LedgerRow {
            run_id: "a".into(),
            rule_kind: "zero".into(),
            theta: 0.5,
            lambda: 1.0,
            n_paths: 3,
            estimate: 1.0,
            std_error: 0.0,
            seed: 7,
            wall_time_s: 0.0,
        };
        append_ledger(&p, &[row.clone()]).unwrap();
        append_ledger(&p, &[row]).unwrap();
        let (h, rows) = read_csv(&p).unwrap();
        assert_eq!(h, LEDGER_HEADER);
        assert_eq!(rows.len(), 2);
    }
}

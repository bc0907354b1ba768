//! Text formats: data CSV, model checkpoints, fit reports, forecast and
//! predictive CSVs, correlogram CSVs and variational checkpoints.
//!
//! Every reader rejects malformed input with [`Error::Parse`] carrying the
//! 1-based line; none of them panic on arbitrary bytes.

use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, Read, Write};

use crate::bayes::{BayesModel, Prior, VariationalParams};
use crate::cells::{Activation, Architecture, CellParams, CellSpec, Dims, Readout, Slot};
use crate::diagnostics::PacfResult;
use crate::error::{ensure, Error, Result};
use crate::forecasting::{ForecastResult, Metrics, TrainedModel};
use crate::linalg::Matrix;
use crate::training::FitReport;

const TIME_HEADERS: [&str; 6] = ["timestamp", "time", "date", "datetime", "t", "index"];

/// Columns of a data file; `columns[j]` holds every row of column `j`.
#[derive(Debug, Clone, PartialEq)]
pub struct DataFrame {
    pub time_header: Option<String>,
    pub timestamps: Option<Vec<String>>,
    pub names: Vec<String>,
    pub columns: Vec<Vec<f64>>,
}

impl DataFrame {
    pub fn rows(&self) -> usize {
        self.columns.first().map_or(0, Vec::len)
    }

    pub fn index_of(&self, name: &str) -> Result<usize> {
        self.names
            .iter()
            .position(|n| n == name)
            .ok_or_else(|| Error::InvalidArgument(format!("no column named '{name}'")))
    }

    pub fn column(&self, name: &str) -> Result<&[f64]> {
        Ok(&self.columns[self.index_of(name)?])
    }

    /// Timestamps, or row indices when the file has none.
    pub fn timestamps(&self) -> Vec<String> {
        self.timestamps
            .clone()
            .unwrap_or_else(|| (0..self.rows()).map(|i| i.to_string()).collect())
    }

    /// `rows x names.len()` matrix of the named columns.
    pub fn matrix(&self, names: &[String]) -> Result<Matrix> {
        let idx = names
            .iter()
            .map(|n| self.index_of(n))
            .collect::<Result<Vec<_>>>()?;
        let mut m = Matrix::zeros(self.rows(), idx.len());
        for (j, &c) in idx.iter().enumerate() {
            for (r, v) in self.columns[c].iter().enumerate() {
                m.set(r, j, *v);
            }
        }
        Ok(m)
    }
}

fn csv_error(e: csv::Error) -> Error {
    let line = e.position().map_or(0, |p| p.line() as usize);
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        csv::ErrorKind::UnequalLengths {
            expected_len, len, ..
        } => Error::parse(line, format!("expected {expected_len} fields, found {len}")),
        csv::ErrorKind::Utf8 { err, .. } => Error::parse(line, format!("invalid UTF-8: {err}")),
        other => Error::parse(line, format!("{other:?}")),
    }
}

fn parse_number(field: &str, line: usize, column: &str) -> Result<f64> {
    match field.parse::<f64>() {
        Ok(v) if v.is_finite() => Ok(v),
        _ => Err(Error::parse(
            line,
            format!("column '{column}': cannot read '{field}' as a finite number"),
        )),
    }
}

fn csv_reader<R: Read>(r: R) -> csv::Reader<R> {
    csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .has_headers(true)
        .from_reader(r)
}

/// Reads a headed CSV whose optional first column is a timestamp.
pub fn read_data_csv<R: Read>(r: R) -> Result<DataFrame> {
    let mut rdr = csv_reader(r);
    let header: Vec<String> = rdr
        .headers()
        .map_err(csv_error)?
        .iter()
        .map(str::to_string)
        .collect();
    ensure!(
        !header.is_empty() && !(header.len() == 1 && header[0].is_empty()),
        InvalidArgument,
        "data file has no header row"
    );
    for (i, h) in header.iter().enumerate() {
        if h.is_empty() {
            return Err(Error::parse(
                1,
                format!("column {} has an empty name", i + 1),
            ));
        }
        if header[..i].contains(h) {
            return Err(Error::parse(1, format!("duplicate column '{h}'")));
        }
    }
    let mut records = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(csv_error)?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        records.push((line, rec));
    }
    let named_time = TIME_HEADERS.contains(&header[0].to_ascii_lowercase().as_str());
    let textual_time = records
        .first()
        .is_some_and(|(_, r)| r.get(0).is_some_and(|f| f.parse::<f64>().is_err()));
    let has_time = named_time || textual_time;
    let first = usize::from(has_time);
    let names: Vec<String> = header[first..].to_vec();
    ensure!(
        !names.is_empty(),
        InvalidArgument,
        "data file has no numeric columns"
    );
    let mut columns = vec![Vec::with_capacity(records.len()); names.len()];
    let mut stamps = Vec::with_capacity(records.len());
    for (line, rec) in &records {
        if has_time {
            stamps.push(rec.get(0).unwrap_or_default().to_string());
        }
        for (j, name) in names.iter().enumerate() {
            let field = rec.get(first + j).unwrap_or_default();
            columns[j].push(parse_number(field, *line, name)?);
        }
    }
    Ok(DataFrame {
        time_header: has_time.then(|| header[0].clone()),
        timestamps: has_time.then_some(stamps),
        names,
        columns,
    })
}

/// Writes a data CSV; each `comment` line is prefixed with `# `.
pub fn write_data_csv<W: Write>(
    mut w: W,
    comments: &[String],
    timestamps: &[String],
    names: &[&str],
    columns: &[&[f64]],
) -> Result<()> {
    ensure!(
        names.len() == columns.len(),
        Dimension,
        "{} names for {} columns",
        names.len(),
        columns.len()
    );
    ensure!(
        columns.iter().all(|c| c.len() == timestamps.len()),
        Dimension,
        "columns disagree with the timestamp count"
    );
    for c in comments {
        writeln!(w, "# {c}")?;
    }
    write!(w, "timestamp")?;
    for n in names {
        write!(w, ",{n}")?;
    }
    writeln!(w)?;
    for (i, t) in timestamps.iter().enumerate() {
        write!(w, "{t}")?;
        for c in columns {
            write!(w, ",{}", c[i])?;
        }
        writeln!(w)?;
    }
    Ok(())
}

fn fmt_row<W: Write>(w: &mut W, values: &[f64]) -> Result<()> {
    let row: Vec<String> = values.iter().map(|v| format!("{v:.16e}")).collect();
    writeln!(w, "{}", row.join(" "))?;
    Ok(())
}

fn write_tensor<W: Write>(w: &mut W, keyword: &str, name: &str, m: &Matrix) -> Result<()> {
    writeln!(w, "{keyword} {name} {} {}", m.rows(), m.cols())?;
    for r in 0..m.rows() {
        fmt_row(w, m.row(r))?;
    }
    Ok(())
}

/// Header fields of a model file.
#[derive(Debug, Clone, PartialEq)]
struct Header {
    spec: CellSpec,
    p: usize,
    m: usize,
    extra: BTreeMap<String, String>,
}

fn spec_fields(spec: &CellSpec, p: usize, m: usize) -> String {
    format!(
        "arch={} d={} h={} n={} p={p} m={m} activation={} readout={}",
        spec.arch.tag(),
        spec.dims.d,
        spec.dims.h,
        spec.dims.n,
        spec.activation.tag(),
        spec.readout.tag()
    )
}

fn parse_header(line: &str, magic: &str) -> Result<Header> {
    let mut it = line.split_whitespace();
    let tag = [it.next(), it.next()];
    if tag != [Some(magic), Some("v1")] {
        return Err(Error::parse(1, format!("expected a '{magic} v1' header")));
    }
    let mut kv = BTreeMap::new();
    for tok in it {
        let (k, v) = tok
            .split_once('=')
            .ok_or_else(|| Error::parse(1, format!("malformed header field '{tok}'")))?;
        if kv.insert(k.to_string(), v.to_string()).is_some() {
            return Err(Error::parse(1, format!("duplicate header field '{k}'")));
        }
    }
    let mut take = |k: &str| {
        kv.remove(k)
            .ok_or_else(|| Error::parse(1, format!("header lacks '{k}'")))
    };
    let arch: Architecture = take("arch")?
        .parse()
        .map_err(|e: Error| Error::parse(1, e.to_string()))?;
    let activation: Activation = take("activation")?
        .parse()
        .map_err(|e: Error| Error::parse(1, e.to_string()))?;
    let readout: Readout = take("readout")?
        .parse()
        .map_err(|e: Error| Error::parse(1, e.to_string()))?;
    let mut num = |k: &str| -> Result<usize> {
        let v = take(k)?;
        match v.parse::<usize>() {
            Ok(n) if (1..=1_000_000).contains(&n) => Ok(n),
            _ => Err(Error::parse(
                1,
                format!("header field '{k}' must be a positive integer, got '{v}'"),
            )),
        }
    };
    let (d, h, n, p, m) = (num("d")?, num("h")?, num("n")?, num("p")?, num("m")?);
    let size = h.saturating_mul(d.saturating_add(h).saturating_add(n));
    if size > 1_000_000 {
        return Err(Error::parse(
            1,
            "checkpoint dimensions are implausibly large",
        ));
    }
    Ok(Header {
        spec: CellSpec {
            arch,
            dims: Dims::new(d, h, n),
            activation,
            readout,
        },
        p,
        m,
        extra: kv,
    })
}

struct Lines<R> {
    inner: std::io::Lines<BufReader<R>>,
    line: usize,
}

impl<R: Read> Lines<R> {
    fn new(r: R) -> Self {
        Lines {
            inner: BufReader::new(r).lines(),
            line: 0,
        }
    }

    fn next_line(&mut self) -> Result<Option<String>> {
        loop {
            match self.inner.next() {
                None => return Ok(None),
                Some(l) => {
                    self.line += 1;
                    let l = l.map_err(|e| match e.kind() {
                        std::io::ErrorKind::InvalidData => Error::parse(self.line, "invalid UTF-8"),
                        _ => Error::Io(e),
                    })?;
                    if !l.trim().is_empty() {
                        return Ok(Some(l));
                    }
                }
            }
        }
    }

    fn expect_line(&mut self, what: &str) -> Result<String> {
        self.next_line()?.ok_or_else(|| {
            Error::parse(
                self.line + 1,
                format!("unexpected end of file, expected {what}"),
            )
        })
    }
}

fn parse_finite(tok: &str, line: usize) -> Result<f64> {
    match tok.parse::<f64>() {
        Ok(v) if v.is_finite() => Ok(v),
        _ => Err(Error::parse(
            line,
            format!("'{tok}' is not a finite number"),
        )),
    }
}

/// Reads `rows` lines of `cols` numbers.
fn read_matrix<R: Read>(lines: &mut Lines<R>, rows: usize, cols: usize) -> Result<Matrix> {
    let mut data = Vec::with_capacity(rows * cols);
    for _ in 0..rows {
        let l = lines.expect_line("a tensor row")?;
        let before = data.len();
        for tok in l.split_whitespace() {
            data.push(parse_finite(tok, lines.line)?);
        }
        if data.len() - before != cols {
            return Err(Error::parse(
                lines.line,
                format!("expected {cols} values, found {}", data.len() - before),
            ));
        }
    }
    Matrix::from_vec(rows, cols, data)
}

/// Parses `<keyword> <slot> <rows> <cols>` and checks the slot's shape.
fn read_block_header(line: &str, at: usize, spec: &CellSpec) -> Result<(String, Slot)> {
    let toks: Vec<&str> = line.split_whitespace().collect();
    if toks.len() != 4 {
        return Err(Error::parse(
            at,
            "expected '<keyword> <name> <rows> <cols>'",
        ));
    }
    let slot = Slot::from_name(toks[1])
        .ok_or_else(|| Error::parse(at, format!("unknown tensor '{}'", toks[1])))?;
    if !spec.arch.slots().contains(&slot) {
        return Err(Error::parse(
            at,
            format!("tensor '{}' does not belong to {}", toks[1], spec.arch),
        ));
    }
    let (r, c) = (toks[2].parse::<usize>(), toks[3].parse::<usize>());
    let want = slot.shape(spec.dims);
    match (r, c) {
        (Ok(r), Ok(c)) if (r, c) == want => Ok((toks[0].to_string(), slot)),
        _ => Err(Error::parse(
            at,
            format!("tensor '{}' must be {}x{}", toks[1], want.0, want.1),
        )),
    }
}

/// Writes a trained model as a text checkpoint.
pub fn write_checkpoint<W: Write>(mut w: W, model: &TrainedModel) -> Result<()> {
    writeln!(
        w,
        "smoothrnn-checkpoint v1 {}",
        spec_fields(&model.params.spec, model.p, model.m)
    )?;
    for (slot, m) in model.params.weights.iter() {
        write_tensor(&mut w, "tensor", slot.name(), m)?;
    }
    Ok(())
}

/// Reads a checkpoint; every tensor of the architecture must appear once.
pub fn read_checkpoint<R: Read>(r: R) -> Result<TrainedModel> {
    let mut lines = Lines::new(r);
    let head = lines.expect_line("a checkpoint header")?;
    let h = parse_header(&head, "smoothrnn-checkpoint")?;
    if let Some(k) = h.extra.keys().next() {
        return Err(Error::parse(1, format!("unknown header field '{k}'")));
    }
    let mut params = CellParams::zeros(h.spec);
    let mut seen = Vec::new();
    while let Some(l) = lines.next_line()? {
        let at = lines.line;
        let (kw, slot) = read_block_header(&l, at, &h.spec)?;
        if kw != "tensor" {
            return Err(Error::parse(at, format!("unexpected keyword '{kw}'")));
        }
        if seen.contains(&slot) {
            return Err(Error::parse(
                at,
                format!("tensor '{}' appears twice", slot.name()),
            ));
        }
        let (rows, cols) = slot.shape(h.spec.dims);
        params.set(slot, read_matrix(&mut lines, rows, cols)?)?;
        seen.push(slot);
    }
    for s in h.spec.arch.slots() {
        if !seen.contains(&s) {
            return Err(Error::parse(
                lines.line + 1,
                format!("checkpoint lacks tensor '{}'", s.name()),
            ));
        }
    }
    Ok(TrainedModel::new(params, h.p, h.m))
}

/// Key-value summary of a fit with its loss trace.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct FitReportFile {
    pub entries: Vec<(String, String)>,
    pub epoch_losses: Vec<f64>,
}

impl FitReportFile {
    /// Entries derived from a training report; timings are left out.
    pub fn from_report(report: &FitReport, extra: &[(String, String)]) -> Self {
        let mut entries = extra.to_vec();
        entries.push(("stopped_epoch".into(), report.stopped_epoch.to_string()));
        entries.push(("early_stopped".into(), report.early_stopped.to_string()));
        if let Some(l) = report.epoch_losses.last() {
            entries.push(("final_loss".into(), format!("{l:.16e}")));
        }
        if let Some(a) = report.alpha {
            entries.push(("alpha".into(), format!("{a:.16e}")));
        }
        if let Some(h) = report.half_life {
            entries.push(("half_life".into(), format!("{h:.16e}")));
        }
        FitReportFile {
            entries,
            epoch_losses: report.epoch_losses.clone(),
        }
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }
}

pub fn write_fit_report<W: Write>(mut w: W, report: &FitReportFile) -> Result<()> {
    writeln!(w, "# smoothrnn fit-report v1")?;
    for (k, v) in &report.entries {
        ensure!(
            !k.is_empty() && !k.contains(['=', '\n']) && !v.contains('\n'),
            InvalidArgument,
            "fit report key '{k}' is not writable"
        );
        writeln!(w, "{k} = {v}")?;
    }
    writeln!(w, "---")?;
    writeln!(w, "epoch,loss")?;
    for (i, l) in report.epoch_losses.iter().enumerate() {
        writeln!(w, "{},{l:.16e}", i + 1)?;
    }
    Ok(())
}

pub fn read_fit_report<R: Read>(r: R) -> Result<FitReportFile> {
    let mut lines = Lines::new(r);
    if lines.expect_line("a fit-report header")?.trim() != "# smoothrnn fit-report v1" {
        return Err(Error::parse(
            lines.line,
            "expected '# smoothrnn fit-report v1'",
        ));
    }
    let mut out = FitReportFile::default();
    loop {
        let l = lines.expect_line("'---'")?;
        if l.trim() == "---" {
            break;
        }
        let (k, v) = l
            .split_once('=')
            .ok_or_else(|| Error::parse(lines.line, "expected 'key = value'"))?;
        let k = k.trim();
        if k.is_empty() {
            return Err(Error::parse(lines.line, "empty key"));
        }
        out.entries.push((k.to_string(), v.trim().to_string()));
    }
    if lines.expect_line("'epoch,loss'")?.trim() != "epoch,loss" {
        return Err(Error::parse(lines.line, "expected 'epoch,loss'"));
    }
    while let Some(l) = lines.next_line()? {
        let (e, v) = l
            .split_once(',')
            .ok_or_else(|| Error::parse(lines.line, "expected 'epoch,loss'"))?;
        let want = out.epoch_losses.len() + 1;
        if e.trim().parse::<usize>().ok() != Some(want) {
            return Err(Error::parse(lines.line, format!("expected epoch {want}")));
        }
        out.epoch_losses.push(parse_finite(v.trim(), lines.line)?);
    }
    Ok(out)
}

pub fn write_forecast_csv<W: Write>(mut w: W, r: &ForecastResult) -> Result<()> {
    writeln!(w, "timestamp,observed,predicted,error,step")?;
    for i in 0..r.len() {
        writeln!(
            w,
            "{},{:.16e},{:.16e},{:.16e},{}",
            r.timestamps[i], r.observed[i], r.predicted[i], r.errors[i], r.steps[i]
        )?;
    }
    Ok(())
}

pub fn read_forecast_csv<R: Read>(r: R) -> Result<ForecastResult> {
    let mut rdr = csv_reader(r);
    let header: Vec<String> = rdr
        .headers()
        .map_err(csv_error)?
        .iter()
        .map(str::to_string)
        .collect();
    if header != ["timestamp", "observed", "predicted", "error", "step"] {
        return Err(Error::parse(
            1,
            "expected 'timestamp,observed,predicted,error,step'",
        ));
    }
    let mut out = ForecastResult {
        timestamps: Vec::new(),
        observed: Vec::new(),
        predicted: Vec::new(),
        errors: Vec::new(),
        steps: Vec::new(),
    };
    for rec in rdr.records() {
        let rec = rec.map_err(csv_error)?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        out.timestamps.push(rec[0].to_string());
        out.observed.push(parse_number(&rec[1], line, "observed")?);
        out.predicted
            .push(parse_number(&rec[2], line, "predicted")?);
        out.errors.push(parse_number(&rec[3], line, "error")?);
        let step = rec[4]
            .parse::<usize>()
            .ok()
            .filter(|s| *s >= 1)
            .ok_or_else(|| {
                Error::parse(
                    line,
                    format!("column 'step': '{}' is not a positive integer", &rec[4]),
                )
            })?;
        out.steps.push(step);
    }
    Ok(out)
}

pub fn write_metrics<W: Write>(mut w: W, m: &Metrics, extra: &[(String, String)]) -> Result<()> {
    for (k, v) in extra {
        writeln!(w, "{k} = {v}")?;
    }
    writeln!(w, "mse = {:.16e}", m.mse)?;
    writeln!(w, "mae = {:.16e}", m.mae)?;
    writeln!(w, "rmse = {:.16e}", m.rmse)?;
    Ok(())
}

/// `lag,estimate,band` rows starting at lag 1.
pub fn write_correlogram_csv<W: Write>(mut w: W, estimates: &[f64], band: f64) -> Result<()> {
    writeln!(w, "lag,estimate,band")?;
    for (i, v) in estimates.iter().enumerate() {
        writeln!(w, "{},{v:.16e},{band:.16e}", i + 1)?;
    }
    Ok(())
}

pub fn write_pacf_csv<W: Write>(w: W, r: &PacfResult) -> Result<()> {
    write_correlogram_csv(w, &r.values, r.band)
}

pub fn write_predictive_csv<W: Write>(mut w: W, r: &crate::bayes::PredictiveResult) -> Result<()> {
    writeln!(w, "timestamp,observed,mean,std,lower,upper,inside,step")?;
    for i in 0..r.len() {
        writeln!(
            w,
            "{},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{},{}",
            r.timestamps[i],
            r.observed[i],
            r.mean[i],
            r.std[i],
            r.lower[i],
            r.upper[i],
            u8::from(r.inside(i)),
            r.steps[i]
        )?;
    }
    Ok(())
}

/// Writes posterior means and scales per tensor.
pub fn write_variational_checkpoint<W: Write>(mut w: W, model: &BayesModel) -> Result<()> {
    let pr = model.posterior.prior;
    writeln!(
        w,
        "smoothrnn-variational v1 {} noise_std={:.16e} pi={:.16e} sigma1={:.16e} sigma2={:.16e}",
        spec_fields(&model.spec, model.p, model.m),
        model.noise_std,
        pr.pi,
        pr.sigma1,
        pr.sigma2
    )?;
    let mu = CellParams::zeros(model.spec).with_flat(&model.posterior.mu)?;
    let rho = CellParams::zeros(model.spec).with_flat(&model.posterior.rho)?;
    for ((slot, m), (_, r)) in mu.weights.iter().zip(rho.weights.iter()) {
        write_tensor(&mut w, "mu", slot.name(), m)?;
        write_tensor(&mut w, "rho", slot.name(), r)?;
    }
    Ok(())
}

pub fn read_variational_checkpoint<R: Read>(r: R) -> Result<BayesModel> {
    let mut lines = Lines::new(r);
    let head = lines.expect_line("a variational header")?;
    let mut h = parse_header(&head, "smoothrnn-variational")?;
    let mut real = |k: &str| -> Result<f64> {
        let v = h
            .extra
            .remove(k)
            .ok_or_else(|| Error::parse(1, format!("header lacks '{k}'")))?;
        parse_finite(&v, 1)
    };
    let noise_std = real("noise_std")?;
    let prior = Prior {
        pi: real("pi")?,
        sigma1: real("sigma1")?,
        sigma2: real("sigma2")?,
    };
    if let Some(k) = h.extra.keys().next() {
        return Err(Error::parse(1, format!("unknown header field '{k}'")));
    }
    prior
        .validate()
        .map_err(|e| Error::parse(1, e.to_string()))?;
    if noise_std <= 0.0 {
        return Err(Error::parse(1, "noise_std must be positive"));
    }
    let mut mu = CellParams::zeros(h.spec);
    let mut rho = CellParams::zeros(h.spec);
    let mut seen: Vec<(String, Slot)> = Vec::new();
    while let Some(l) = lines.next_line()? {
        let at = lines.line;
        let (kw, slot) = read_block_header(&l, at, &h.spec)?;
        let target = match kw.as_str() {
            "mu" => &mut mu,
            "rho" => &mut rho,
            _ => return Err(Error::parse(at, format!("unexpected keyword '{kw}'"))),
        };
        if seen.iter().any(|(k, s)| *k == kw && *s == slot) {
            return Err(Error::parse(
                at,
                format!("{kw} '{}' appears twice", slot.name()),
            ));
        }
        let (rows, cols) = slot.shape(h.spec.dims);
        target.set(slot, read_matrix(&mut lines, rows, cols)?)?;
        seen.push((kw, slot));
    }
    for s in h.spec.arch.slots() {
        for kw in ["mu", "rho"] {
            if !seen.iter().any(|(k, x)| k == kw && *x == s) {
                return Err(Error::parse(
                    lines.line + 1,
                    format!("missing {kw} '{}'", s.name()),
                ));
            }
        }
    }
    Ok(BayesModel {
        spec: h.spec,
        posterior: VariationalParams {
            mu: mu.flatten(),
            rho: rho.flatten(),
            prior,
        },
        noise_std,
        p: h.p,
        m: h.m,
    })
}

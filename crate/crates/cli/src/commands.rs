//! Subcommand implementations. Each writes deterministic files under the
//! output directory; wall-clock timings go to separate `*.timing.txt` files.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs::File;
use std::path::{Path, PathBuf};

use smoothrnn::bayes::{bayes_fit, bayes_predict, PredictiveResult};
use smoothrnn::diagnostics::{acf, adf_test, decompose, pacf, AdfResult, PacfResult};
use smoothrnn::forecasting::{
    forecast_direct, forecast_rolling, make_univariate_windows, make_windows, metrics, persistence,
    ForecastMode, ForecastResult, WindowedDataset,
};
use smoothrnn::io::{self, DataFrame, FitReportFile};
use smoothrnn::synthetic::{generate_alpha_rnn, generate_llm};
use smoothrnn::training::{cross_validate, train as fit_model};
use smoothrnn::{Error, Result as CoreResult};

use crate::{CliError, Context, DiagnoseArgs, EvaluateArgs, SimKind, SimulateArgs};

type Result<T> = std::result::Result<T, CliError>;

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| CliError::file(dir, e.into()))?;
    }
    std::fs::write(path, bytes).map_err(|e| CliError::file(path, e.into()))
}

fn render(f: impl FnOnce(&mut Vec<u8>) -> CoreResult<()>) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    f(&mut buf)?;
    Ok(buf)
}

fn open(path: &Path) -> Result<File> {
    File::open(path).map_err(|e| CliError::file(path, e.into()))
}

fn load_data(path: &Path) -> Result<DataFrame> {
    io::read_data_csv(open(path)?).map_err(|e| CliError::file(path, e))
}

fn data_path(ctx: &Context) -> Result<PathBuf> {
    ctx.cfg
        .data
        .path
        .clone()
        .ok_or_else(|| CliError::Usage("no data file given (use --data or [data] path)".into()))
}

fn kv(lines: &[(&str, String)]) -> String {
    lines.iter().fold(String::new(), |mut s, (k, v)| {
        let _ = writeln!(s, "{k} = {v}");
        s
    })
}

fn emit(path: &Path, bytes: &[u8]) -> Result<()> {
    write_file(path, bytes)?;
    println!("wrote {}", path.display());
    Ok(())
}

pub fn simulate(ctx: &mut Context, a: &SimulateArgs) -> Result<()> {
    let s = &mut ctx.cfg.simulate;
    if let Some(k) = a.kind {
        s.kind = k.tag().into();
    }
    if let Some(n) = a.n {
        s.n = n;
    }
    if let Some(al) = a.alpha {
        s.alpha = al;
    }
    let kind = match s.kind.as_str() {
        "llm" => SimKind::Llm,
        "alpha-rnn-dgp" => SimKind::AlphaRnnDgp,
        other => {
            return Err(CliError::Usage(format!(
                "unknown simulation kind '{other}' (llm, alpha-rnn-dgp)"
            )))
        }
    };
    let path = a
        .output
        .clone()
        .unwrap_or_else(|| ctx.output(&format!("{}.csv", kind.tag())));
    let bytes = match kind {
        SimKind::Llm => {
            let c = ctx.cfg.llm_config();
            let series = generate_llm(&c)?;
            let ts: Vec<String> = (0..c.n).map(|i| i.to_string()).collect();
            let comments = vec![format!(
                "smoothrnn simulate kind=llm seed={} n={} period={} sigma_u2={} sigma_chi2={} sigma_omega2={}",
                c.seed, c.n, c.period, c.sigma_u2, c.sigma_chi2, c.sigma_omega2
            )];
            render(|w| {
                io::write_data_csv(
                    w,
                    &comments,
                    &ts,
                    &["y", "level", "seasonal", "noise"],
                    &[&series.y, &series.level, &series.seasonal, &series.noise],
                )
            })?
        }
        SimKind::AlphaRnnDgp => {
            let c = ctx.cfg.dgp_config();
            let y = generate_alpha_rnn(&c)?;
            let ts: Vec<String> = (0..y.len()).map(|i| i.to_string()).collect();
            let comments = vec![format!(
                "smoothrnn simulate kind=alpha-rnn-dgp seed={} n={} p={} alpha={} phi={} sigma_n={} burn_in={}",
                c.seed, c.n, c.p, c.alpha, c.phi, c.sigma_n, c.burn_in
            )];
            render(|w| io::write_data_csv(w, &comments, &ts, &["y"], &[&y]))?
        }
    };
    emit(&path, &bytes)
}

fn adf_lines(prefix: &str, r: &AdfResult) -> Vec<(String, String)> {
    let mut out = vec![
        (
            format!("{prefix}adf_statistic"),
            format!("{:.6}", r.statistic),
        ),
        (format!("{prefix}adf_lags"), r.lags.to_string()),
        (format!("{prefix}adf_observations"), r.n_obs.to_string()),
    ];
    for (level, crit, reject) in &r.decisions {
        let pct = (level * 100.0).round() as u32;
        out.push((format!("{prefix}adf_critical_{pct}pct"), format!("{crit}")));
        out.push((format!("{prefix}adf_reject_{pct}pct"), reject.to_string()));
    }
    let verdict = if r.is_stationary() {
        "stationary"
    } else {
        "non-stationary"
    };
    out.push((format!("{prefix}verdict"), verdict.into()));
    out
}

fn pacf_lines(prefix: &str, r: &PacfResult, cap: usize) -> Vec<(String, String)> {
    let sig: Vec<String> = r.significant_lags().iter().map(usize::to_string).collect();
    vec![
        (format!("{prefix}band"), format!("{:.6}", r.band)),
        (format!("{prefix}significant_lags"), sig.join(" ")),
        (
            format!("{prefix}recommended_p"),
            r.recommended_order(cap).to_string(),
        ),
    ]
}

fn default_adf_lag(n: usize) -> usize {
    (12.0 * (n as f64 / 100.0).powf(0.25)).floor() as usize
}

pub fn diagnose(ctx: &mut Context, a: &DiagnoseArgs) -> Result<()> {
    let d = &mut ctx.cfg.diagnose;
    if a.column.is_some() {
        d.column = a.column.clone();
    }
    if let Some(v) = a.max_lag {
        d.max_lag = v;
    }
    if a.adf_max_lag.is_some() {
        d.adf_max_lag = a.adf_max_lag;
    }
    if let Some(v) = a.p_cap {
        d.p_cap = v;
    }
    if a.period.is_some() {
        d.period = a.period;
    }
    if a.data.is_some() {
        ctx.cfg.data.path = a.data.clone();
    }
    let d = ctx.cfg.diagnose.clone();
    let path = data_path(ctx)?;
    let df = load_data(&path)?;
    let column = d
        .column
        .clone()
        .or_else(|| ctx.cfg.data.target.clone())
        .unwrap_or_else(|| df.names[0].clone());
    let series = df.column(&column)?;
    let n = series.len();
    if n < 4 {
        return Err(Error::InvalidArgument(format!("column '{column}' has only {n} rows")).into());
    }
    let max_lag = d.max_lag.clamp(1, n - 2);
    let rho = acf(series, max_lag).map_err(|e| match e {
        Error::Degenerate(_) => Error::Degenerate(format!(
            "column '{column}' has zero variance; correlograms are undefined"
        )),
        other => other,
    })?;
    let pac = pacf(series, max_lag)?;
    let adf_lag = d
        .adf_max_lag
        .unwrap_or_else(|| default_adf_lag(n))
        .min(n.saturating_sub(11));
    let adf = adf_test(series, adf_lag)?;
    let mut summary: Vec<(String, String)> = vec![
        ("column".into(), column.clone()),
        ("n".into(), n.to_string()),
        ("max_lag".into(), max_lag.to_string()),
        ("p_cap".into(), d.p_cap.to_string()),
    ];
    summary.extend(pacf_lines("", &pac, d.p_cap));
    summary.extend(adf_lines("", &adf));
    emit(
        &ctx.output("acf.csv"),
        &render(|w| io::write_correlogram_csv(w, &rho[1..], pac.band))?,
    )?;
    emit(
        &ctx.output("pacf.csv"),
        &render(|w| io::write_pacf_csv(w, &pac))?,
    )?;
    if let Some(period) = d.period {
        let dec = decompose(series, period)?;
        let ts = df.timestamps();
        emit(
            &ctx.output("decomposition.csv"),
            &render(|w| {
                io::write_data_csv(
                    w,
                    &[format!("classical additive decomposition period={period}")],
                    &ts,
                    &["observed", "trend", "seasonal", "residual"],
                    &[series, &dec.trend, &dec.seasonal, &dec.residual],
                )
            })?,
        )?;
        let resid = &dec.residual;
        let rp = pacf(resid, max_lag)?;
        emit(
            &ctx.output("residual_pacf.csv"),
            &render(|w| io::write_pacf_csv(w, &rp))?,
        )?;
        summary.push(("period".into(), period.to_string()));
        summary.extend(pacf_lines("residual_", &rp, d.p_cap));
        summary.extend(adf_lines("residual_", &adf_test(resid, adf_lag)?));
    }
    let refs: Vec<(&str, String)> = summary
        .iter()
        .map(|(k, v)| (k.as_str(), v.clone()))
        .collect();
    let text = kv(&refs);
    emit(&ctx.output("diagnose.txt"), text.as_bytes())?;
    print!("{text}");
    Ok(())
}

/// Windowed data plus the components removed before modelling.
pub struct Prepared {
    pub ds: WindowedDataset,
    /// Trend plus seasonal value per row when a decomposition was applied.
    pub offsets: Option<Vec<f64>>,
}

impl Prepared {
    fn offsets_for(&self, timestamps: &[String]) -> Result<Option<Vec<f64>>> {
        let Some(off) = &self.offsets else {
            return Ok(None);
        };
        let rows: HashMap<&str, usize> = self
            .ds
            .timestamps
            .iter()
            .enumerate()
            .map(|(i, t)| (t.as_str(), i))
            .collect();
        timestamps
            .iter()
            .map(|t| {
                rows.get(t.as_str()).map(|&r| off[r]).ok_or_else(|| {
                    CliError::Core(Error::Mismatch(format!("unknown timestamp '{t}'")))
                })
            })
            .collect::<Result<Vec<f64>>>()
            .map(Some)
    }

    /// Adds removed components back onto observed and predicted values.
    pub fn restore(&self, r: ForecastResult) -> Result<ForecastResult> {
        match self.offsets_for(&r.timestamps)? {
            Some(o) => Ok(r.shifted(&o)?),
            None => Ok(r),
        }
    }

    fn restore_predictive(&self, mut r: PredictiveResult) -> Result<PredictiveResult> {
        if let Some(o) = self.offsets_for(&r.timestamps)? {
            for (i, v) in o.iter().enumerate() {
                r.observed[i] += v;
                r.mean[i] += v;
                r.lower[i] += v;
                r.upper[i] += v;
                for d in r.draws.iter_mut() {
                    d[i] += v;
                }
            }
        }
        Ok(r)
    }
}

pub fn prepare(ctx: &Context) -> Result<Prepared> {
    let cfg = &ctx.cfg;
    let path = data_path(ctx)?;
    let df = load_data(&path)?;
    let target = cfg
        .data
        .target
        .clone()
        .unwrap_or_else(|| df.names[0].clone());
    let features = if cfg.data.features.is_empty() {
        vec![target.clone()]
    } else {
        cfg.data.features.clone()
    };
    let splits = cfg.splits()?;
    let (p, m) = (cfg.model.p, cfg.model.m);
    let ts = df.timestamps();
    let y = df.column(&target)?;
    if let Some(period) = cfg.data.decompose_period {
        if features != [target.clone()] {
            return Err(CliError::Usage(
                "decomposition supports the target as the only feature".into(),
            ));
        }
        let mut seen = std::collections::HashSet::new();
        if !ts.iter().all(|t| seen.insert(t)) {
            return Err(
                Error::InvalidArgument("decomposition needs unique timestamps".into()).into(),
            );
        }
        let dec = decompose(y, period)?;
        let offsets: Vec<f64> = dec
            .trend
            .iter()
            .zip(&dec.seasonal)
            .map(|(a, b)| a + b)
            .collect();
        let ds = make_univariate_windows(&dec.residual, p, m, splits)?.with_timestamps(ts)?;
        return Ok(Prepared {
            ds,
            offsets: Some(offsets),
        });
    }
    let x = df.matrix(&features)?;
    let mut ds = make_windows(&x, y, p, m, splits)?.with_timestamps(ts)?;
    if let Some(i) = features.iter().position(|f| *f == target) {
        ds = ds.with_endogenous(i)?;
    }
    Ok(Prepared { ds, offsets: None })
}

fn check_geometry(
    kind: &str,
    arch: smoothrnn::cells::Architecture,
    d: usize,
    p: usize,
    m: usize,
    ctx: &Context,
    ds: &WindowedDataset,
) -> Result<()> {
    let want = ctx.cfg.arch()?;
    if arch != want {
        return Err(Error::Mismatch(format!(
            "{kind} holds a {arch} model but the configuration asks for {want}"
        ))
        .into());
    }
    if d != ds.d() {
        return Err(Error::Mismatch(format!(
            "{kind} expects {d} features, data provides {}",
            ds.d()
        ))
        .into());
    }
    if (p, m) != (ctx.cfg.model.p, ctx.cfg.model.m) {
        return Err(Error::Mismatch(format!(
            "{kind} was fitted with p = {p}, m = {m}; configuration has p = {}, m = {}",
            ctx.cfg.model.p, ctx.cfg.model.m
        ))
        .into());
    }
    Ok(())
}

fn run_forecast(
    model: &smoothrnn::forecasting::TrainedModel,
    ds: &WindowedDataset,
    mode: ForecastMode,
    horizon: usize,
) -> CoreResult<ForecastResult> {
    match mode {
        ForecastMode::Direct => forecast_direct(model, ds),
        ForecastMode::Rolling => forecast_rolling(model, ds, horizon),
    }
}

fn fmt_f(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn train(ctx: &Context) -> Result<()> {
    let cfg = &ctx.cfg;
    let prep = prepare(ctx)?;
    let mut tc = cfg.train_config()?;
    let arch = cfg.arch()?;
    let mut spec = cfg.spec(prep.ds.d())?;
    let mut entries: Vec<(String, String)> = vec![
        ("arch".into(), arch.tag().into()),
        ("seed".into(), cfg.seed.to_string()),
        ("p".into(), cfg.model.p.to_string()),
        ("m".into(), cfg.model.m.to_string()),
    ];
    if cfg.cv.enabled {
        let grid = cfg.cv_grid()?;
        let cv = cross_validate(spec, &prep.ds.train_samples()?, &grid, &tc)?;
        spec.dims.h = cv.best_hidden;
        tc.lambda1 = cv.best_lambda1;
        let mut text =
            String::from("hidden,lambda1,fold,train_windows,validation_windows,validation_loss\n");
        for s in &cv.scores {
            let _ = writeln!(
                text,
                "{},{},{},{},{},{}",
                s.hidden,
                s.lambda1,
                s.fold,
                s.train_windows,
                s.validation_windows,
                fmt_f(s.validation_loss)
            );
        }
        emit(
            &ctx.output(&format!("{}.cv.csv", arch.tag())),
            text.as_bytes(),
        )?;
        entries.push(("cv_folds".into(), grid.folds.to_string()));
    }
    entries.push(("hidden".into(), spec.dims.h.to_string()));
    entries.push(("lambda1".into(), tc.lambda1.to_string()));
    let samples = prep.ds.fit_samples()?;
    entries.push(("windows".into(), samples.len().to_string()));
    let (params, report) = fit_model(spec, &samples, &tc)?;
    let model = smoothrnn::forecasting::TrainedModel::new(params, cfg.model.p, cfg.model.m);
    let stem = arch.tag();
    emit(
        &ctx.output(&format!("{stem}.ckpt")),
        &render(|w| io::write_checkpoint(w, &model))?,
    )?;
    let file = FitReportFile::from_report(&report, &entries);
    emit(
        &ctx.output(&format!("{stem}.fit.txt")),
        &render(|w| io::write_fit_report(w, &file))?,
    )?;
    write_file(
        &ctx.output(&format!("{stem}.timing.txt")),
        format!("train_seconds = {:.3}\n", report.train_seconds).as_bytes(),
    )?;
    println!("arch = {stem}");
    println!("hidden = {}", spec.dims.h);
    println!("epochs = {}", report.stopped_epoch);
    if let Some(l) = report.epoch_losses.last() {
        println!("final_loss = {l:.6}");
    }
    if let (Some(a), Some(h)) = (report.alpha, report.half_life) {
        println!("alpha = {a:.4}");
        println!("half_life = {h:.3}");
    }
    Ok(())
}

pub fn forecast(ctx: &Context, checkpoint: Option<&Path>) -> Result<()> {
    let cfg = &ctx.cfg;
    let arch = cfg.arch()?;
    let path = checkpoint
        .map(Path::to_path_buf)
        .unwrap_or_else(|| ctx.output(&format!("{}.ckpt", arch.tag())));
    let model = io::read_checkpoint(open(&path)?).map_err(|e| CliError::file(&path, e))?;
    let prep = prepare(ctx)?;
    check_geometry(
        "checkpoint",
        model.params.arch(),
        model.params.dims().d,
        model.p,
        model.m,
        ctx,
        &prep.ds,
    )?;
    let mode = cfg.mode()?;
    let horizon = cfg.model.horizon;
    let result = prep.restore(run_forecast(&model, &prep.ds, mode, horizon)?)?;
    let base = prep.restore(persistence(&prep.ds, mode, horizon)?)?;
    let met = metrics(&result)?;
    let bm = metrics(&base)?;
    let stem = arch.tag();
    emit(
        &ctx.output(&format!("{stem}.forecast.csv")),
        &render(|w| io::write_forecast_csv(w, &result))?,
    )?;
    let extra = vec![
        ("arch".to_string(), stem.to_string()),
        ("mode".to_string(), mode.tag().to_string()),
        ("horizon".to_string(), horizon.to_string()),
        ("n".to_string(), result.len().to_string()),
        ("persistence_mse".to_string(), fmt_f(bm.mse)),
        ("persistence_mae".to_string(), fmt_f(bm.mae)),
    ];
    emit(
        &ctx.output(&format!("{stem}.metrics.txt")),
        &render(|w| io::write_metrics(w, &met, &extra))?,
    )?;
    println!("mse = {:.6}", met.mse);
    println!("mae = {:.6}", met.mae);
    println!("persistence_mse = {:.6}", bm.mse);
    Ok(())
}

fn read_key(path: &Path, key: &str) -> Option<String> {
    let text = std::fs::read_to_string(path).ok()?;
    text.lines().find_map(|l| {
        let (k, v) = l.split_once('=')?;
        (k.trim() == key).then(|| v.trim().to_string())
    })
}

pub fn evaluate(ctx: &Context, a: &EvaluateArgs) -> Result<()> {
    let mut text = String::from("model,n,mse,mae,rmse,alpha,half_life");
    if a.with_timings {
        text.push_str(",train_seconds");
    }
    text.push('\n');
    for f in &a.files {
        let r = io::read_forecast_csv(open(f)?).map_err(|e| CliError::file(f, e))?;
        let met = metrics(&r).map_err(|e| CliError::file(f, e))?;
        let name = f.file_name().and_then(|s| s.to_str()).unwrap_or("model");
        let label = name
            .strip_suffix(".forecast.csv")
            .or_else(|| name.strip_suffix(".csv"))
            .unwrap_or(name);
        let dir = f.parent().unwrap_or(Path::new("."));
        let fit = dir.join(format!("{label}.fit.txt"));
        let alpha = read_key(&fit, "alpha").unwrap_or_default();
        let half = read_key(&fit, "half_life").unwrap_or_default();
        let _ = write!(
            text,
            "{label},{},{},{},{},{alpha},{half}",
            r.len(),
            fmt_f(met.mse),
            fmt_f(met.mae),
            fmt_f(met.rmse)
        );
        if a.with_timings {
            let t = read_key(&dir.join(format!("{label}.timing.txt")), "train_seconds")
                .unwrap_or_default();
            let _ = write!(text, ",{t}");
        }
        text.push('\n');
    }
    let out = a
        .output
        .clone()
        .unwrap_or_else(|| ctx.output("summary.csv"));
    emit(&out, text.as_bytes())?;
    print!("{text}");
    Ok(())
}

pub fn bayes_train(ctx: &Context) -> Result<()> {
    let cfg = &ctx.cfg;
    let prep = prepare(ctx)?;
    let tc = cfg.train_config()?;
    let bc = cfg.bayes_config()?;
    let spec = cfg.spec(prep.ds.d())?;
    let start = std::time::Instant::now();
    let fit = bayes_fit(
        spec,
        &prep.ds.fit_samples()?,
        cfg.model.p,
        cfg.model.m,
        &tc,
        &bc,
    )?;
    let seconds = start.elapsed().as_secs_f64();
    let stem = spec.arch.tag();
    emit(
        &ctx.output(&format!("{stem}.vckpt")),
        &render(|w| io::write_variational_checkpoint(w, &fit.model))?,
    )?;
    let r = &fit.report;
    let report = FitReportFile {
        entries: vec![
            ("arch".into(), stem.into()),
            ("seed".into(), cfg.seed.to_string()),
            ("hidden".into(), spec.dims.h.to_string()),
            ("noise_std".into(), fmt_f(fit.model.noise_std)),
            ("stopped_epoch".into(), r.stopped_epoch.to_string()),
            ("early_stopped".into(), r.early_stopped.to_string()),
            ("objective".into(), "negative elbo".into()),
        ],
        epoch_losses: r.epoch_elbo.iter().map(|e| -e).collect(),
    };
    emit(
        &ctx.output(&format!("{stem}.bayes.txt")),
        &render(|w| io::write_fit_report(w, &report))?,
    )?;
    write_file(
        &ctx.output(&format!("{stem}.bayes-timing.txt")),
        format!("train_seconds = {seconds:.3}\n").as_bytes(),
    )?;
    println!("arch = {stem}");
    println!("epochs = {}", r.stopped_epoch);
    println!("noise_std = {:.6}", fit.model.noise_std);
    Ok(())
}

pub fn bayes_forecast(ctx: &Context, checkpoint: Option<&Path>) -> Result<()> {
    let cfg = &ctx.cfg;
    let opts = cfg.predict_options()?;
    let arch = cfg.arch()?;
    let path = checkpoint
        .map(Path::to_path_buf)
        .unwrap_or_else(|| ctx.output(&format!("{}.vckpt", arch.tag())));
    let model =
        io::read_variational_checkpoint(open(&path)?).map_err(|e| CliError::file(&path, e))?;
    let prep = prepare(ctx)?;
    check_geometry(
        "variational checkpoint",
        model.spec.arch,
        model.spec.dims.d,
        model.p,
        model.m,
        ctx,
        &prep.ds,
    )?;
    let r = prep.restore_predictive(bayes_predict(&model, &prep.ds, &opts)?)?;
    let met = metrics(&r.mean_forecast())?;
    let stem = arch.tag();
    emit(
        &ctx.output(&format!("{stem}.predictive.csv")),
        &render(|w| io::write_predictive_csv(w, &r))?,
    )?;
    let mut lines = vec![
        ("arch", stem.to_string()),
        ("mode", opts.mode.tag().to_string()),
        ("horizon", opts.horizon.to_string()),
        ("level", opts.level.to_string()),
        ("n_draws", opts.n_draws.to_string()),
        ("n", r.len().to_string()),
        ("coverage", format!("{:.6}", r.coverage)),
        ("rmse", fmt_f(met.rmse)),
        ("mae", fmt_f(met.mae)),
        ("mean_std", fmt_f(r.mean_std())),
    ];
    let by_step: Vec<(String, String)> = r
        .coverage_by_step()
        .iter()
        .map(|(s, c)| (format!("coverage_step_{s}"), format!("{c:.6}")))
        .collect();
    lines.extend(by_step.iter().map(|(k, v)| (k.as_str(), v.clone())));
    let text = kv(&lines);
    emit(
        &ctx.output(&format!("{stem}.predictive.txt")),
        text.as_bytes(),
    )?;
    print!("{text}");
    Ok(())
}

//! Named experiment presets, run configuration, and the drivers behind the
//! command line: repeated optimizer runs, the (d, L) risk scan, and the
//! (kappa, nu) vector field. All outputs are CSV.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{invalid, Error, Result};
use crate::optimizer::{self, Schedule, Trajectory, TrajectoryRow};
use crate::par::Exec;
use crate::risk::{self, RiskModel};
use crate::rng;
use crate::task::{self, TaskParams};

pub const DEFAULT_SEED: u64 = 0;
pub const SEED_ENV: &str = "SLR_SEED";
pub const QUANTILES: [f64; 3] = [0.025, 0.5, 0.975];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Preset {
    Fig3,
    Fig4a,
    Fig4b,
    Fig6,
    Fig7a,
    Fig7b,
}

impl Preset {
    pub const ALL: [Preset; 6] = [
        Preset::Fig3,
        Preset::Fig4a,
        Preset::Fig4b,
        Preset::Fig6,
        Preset::Fig7a,
        Preset::Fig7b,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Preset::Fig3 => "fig3",
            Preset::Fig4a => "fig4a",
            Preset::Fig4b => "fig4b",
            Preset::Fig6 => "fig6",
            Preset::Fig7a => "fig7a",
            Preset::Fig7b => "fig7b",
        }
    }

    pub fn config(self) -> RunConfig {
        let base = RunConfig {
            preset: Some(self),
            ..RunConfig::default()
        };
        match self {
            Preset::Fig3 => RunConfig {
                mode: Mode::Scan,
                eps: 0.0,
                ..base
            },
            Preset::Fig4a => RunConfig {
                lambda0: 1.0,
                decay: 1e-4,
                steps: 120_000,
                init_mode: InitMode::Sphere,
                ..base
            },
            Preset::Fig4b => base,
            Preset::Fig6 => RunConfig {
                mode: Mode::Spgd,
                d: 80,
                eps: 0.1,
                lambda0: 2.0,
                decay: 1e-4,
                alpha: 1e-3,
                steps: 200_000,
                batch_size: 5,
                init_mode: InitMode::Sphere,
                ..base
            },
            Preset::Fig7a => RunConfig {
                lambda0: 0.9,
                alpha: 1e-3,
                steps: 120_000,
                init_mode: InitMode::Sphere,
                ..base
            },
            Preset::Fig7b => RunConfig {
                init_mode: InitMode::Sphere,
                ..base
            },
        }
    }
}

impl FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Preset::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| invalid("preset", format!("unknown preset `{s}` (expected one of fig3, fig4a, fig4b, fig6, fig7a, fig7b)")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Exact-gradient PGD.
    Pgd,
    /// Stochastic PGD on minibatches.
    Spgd,
    /// Oracle vs linear risk over a (d, L) grid.
    Scan,
}

impl Mode {
    fn name(self) -> &'static str {
        match self {
            Mode::Pgd => "pgd",
            Mode::Spgd => "spgd",
            Mode::Scan => "scan",
        }
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pgd" => Ok(Mode::Pgd),
            "spgd" => Ok(Mode::Spgd),
            "scan" => Ok(Mode::Scan),
            _ => Err(invalid(
                "mode",
                format!("unknown mode `{s}` (expected pgd, spgd or scan)"),
            )),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InitMode {
    Sphere,
    Manifold,
}

impl InitMode {
    fn name(self) -> &'static str {
        match self {
            InitMode::Sphere => "sphere",
            InitMode::Manifold => "manifold",
        }
    }
}

impl FromStr for InitMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sphere" => Ok(InitMode::Sphere),
            "manifold" => Ok(InitMode::Manifold),
            _ => Err(invalid(
                "init_mode",
                format!("unknown init mode `{s}` (expected sphere or manifold)"),
            )),
        }
    }
}

/// Fully resolved run parameters. The defaults are the fig4b values without
/// a preset name.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub preset: Option<Preset>,
    pub mode: Mode,
    pub d: usize,
    pub seq_len: usize,
    pub gamma: f64,
    pub eps: f64,
    pub lambda0: f64,
    /// `lambda_t = lambda0 / (1 + decay t)`; zero means constant.
    pub decay: f64,
    pub alpha: f64,
    pub steps: usize,
    pub batch_size: usize,
    pub record_every: usize,
    pub repetitions: usize,
    pub init_mode: InitMode,
    /// `None` defers to the environment, then to `DEFAULT_SEED`.
    pub seed: Option<u64>,
    pub output_path: PathBuf,
    pub scan_d: Vec<usize>,
    pub scan_l: Vec<usize>,
    /// Scan uses `lambda = d^(-lambda_exponent)`.
    pub lambda_exponent: f64,
    /// Vector field grid is `field_n x field_n` over [-1, 1]^2.
    pub field_n: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            preset: None,
            mode: Mode::Pgd,
            d: 400,
            seq_len: 10,
            gamma: std::f64::consts::FRAC_1_SQRT_2,
            eps: 0.0,
            lambda0: 0.1,
            decay: 0.0,
            alpha: 4e-3,
            steps: 20_000,
            batch_size: 1,
            record_every: 10,
            repetitions: 30,
            init_mode: InitMode::Manifold,
            seed: None,
            output_path: PathBuf::from("out"),
            scan_d: vec![100, 200, 400, 800, 1600, 3200, 6400, 12_800, 25_600],
            scan_l: vec![2, 5, 10, 20, 50, 100],
            lambda_exponent: 0.4,
            field_n: 25,
        }
    }
}

fn parse_num<T: FromStr>(key: &str, value: &str) -> std::result::Result<T, String> {
    value
        .parse()
        .map_err(|_| format!("`{key}` expects a number, got `{value}`"))
}

fn parse_list(key: &str, value: &str) -> std::result::Result<Vec<usize>, String> {
    value.split(',').map(|s| parse_num(key, s.trim())).collect()
}

fn join(xs: &[usize]) -> String {
    xs.iter()
        .map(|x| x.to_string())
        .collect::<Vec<_>>()
        .join(",")
}

impl RunConfig {
    pub const KEYS: [&'static str; 20] = [
        "preset",
        "mode",
        "d",
        "L",
        "gamma",
        "eps",
        "lambda0",
        "decay",
        "alpha",
        "steps",
        "batch_size",
        "record_every",
        "repetitions",
        "init_mode",
        "seed",
        "output_path",
        "scan_d",
        "scan_L",
        "lambda_exponent",
        "field_n",
    ];

    /// Set one key from its textual value. `preset` is not accepted here;
    /// presets are applied before any override.
    pub fn set(&mut self, key: &str, value: &str) -> std::result::Result<(), String> {
        let e = |err: Error| err.to_string();
        match key {
            "mode" => self.mode = value.parse().map_err(e)?,
            "d" => self.d = parse_num(key, value)?,
            "L" => self.seq_len = parse_num(key, value)?,
            "gamma" => self.gamma = parse_num(key, value)?,
            "eps" => self.eps = parse_num(key, value)?,
            "lambda0" => self.lambda0 = parse_num(key, value)?,
            "decay" => self.decay = parse_num(key, value)?,
            "alpha" => self.alpha = parse_num(key, value)?,
            "steps" => self.steps = parse_num(key, value)?,
            "batch_size" => self.batch_size = parse_num(key, value)?,
            "record_every" => self.record_every = parse_num(key, value)?,
            "repetitions" => self.repetitions = parse_num(key, value)?,
            "init_mode" => self.init_mode = value.parse().map_err(e)?,
            "seed" => self.seed = Some(parse_num(key, value)?),
            "output_path" => self.output_path = PathBuf::from(value),
            "scan_d" => self.scan_d = parse_list(key, value)?,
            "scan_L" => self.scan_l = parse_list(key, value)?,
            "lambda_exponent" => self.lambda_exponent = parse_num(key, value)?,
            "field_n" => self.field_n = parse_num(key, value)?,
            "preset" => return Err("`preset` must be applied before overrides".into()),
            _ => return Err(format!("unknown key `{key}`")),
        }
        Ok(())
    }

    /// Parse `key=value` text. The preset (from `preset_override`, else from
    /// the file) is applied first, then every other line in order.
    pub fn from_config_text(text: &str, preset_override: Option<Preset>) -> Result<Self> {
        let mut entries = Vec::new();
        let mut file_preset = None;
        let mut seen = std::collections::HashSet::new();
        for (i, raw) in text.lines().enumerate() {
            let line_no = i + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| Error::Config {
                line: line_no,
                reason: format!("expected key=value, got `{line}`"),
            })?;
            let (key, value) = (key.trim(), value.trim());
            if !seen.insert(key.to_string()) {
                return Err(Error::Config {
                    line: line_no,
                    reason: format!("duplicate key `{key}`"),
                });
            }
            if key == "preset" {
                file_preset = Some(value.parse::<Preset>().map_err(|e| Error::Config {
                    line: line_no,
                    reason: e.to_string(),
                })?);
            } else {
                entries.push((line_no, key.to_string(), value.to_string()));
            }
        }
        let mut cfg = preset_override
            .or(file_preset)
            .map(Preset::config)
            .unwrap_or_default();
        for (line, key, value) in entries {
            cfg.set(&key, &value)
                .map_err(|reason| Error::Config { line, reason })?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Emit in config-file form; parsing the result gives back `self`.
    pub fn to_config_string(&self) -> String {
        let mut s = String::new();
        if let Some(p) = self.preset {
            let _ = writeln!(s, "preset={}", p.name());
        }
        let _ = writeln!(s, "mode={}", self.mode.name());
        let _ = writeln!(s, "d={}", self.d);
        let _ = writeln!(s, "L={}", self.seq_len);
        let _ = writeln!(s, "gamma={}", self.gamma);
        let _ = writeln!(s, "eps={}", self.eps);
        let _ = writeln!(s, "lambda0={}", self.lambda0);
        let _ = writeln!(s, "decay={}", self.decay);
        let _ = writeln!(s, "alpha={}", self.alpha);
        let _ = writeln!(s, "steps={}", self.steps);
        let _ = writeln!(s, "batch_size={}", self.batch_size);
        let _ = writeln!(s, "record_every={}", self.record_every);
        let _ = writeln!(s, "repetitions={}", self.repetitions);
        let _ = writeln!(s, "init_mode={}", self.init_mode.name());
        if let Some(seed) = self.seed {
            let _ = writeln!(s, "seed={seed}");
        }
        let _ = writeln!(s, "output_path={}", self.output_path.display());
        let _ = writeln!(s, "scan_d={}", join(&self.scan_d));
        let _ = writeln!(s, "scan_L={}", join(&self.scan_l));
        let _ = writeln!(s, "lambda_exponent={}", self.lambda_exponent);
        let _ = writeln!(s, "field_n={}", self.field_n);
        s
    }

    pub fn validate(&self) -> Result<()> {
        if self.d < 2 {
            return Err(invalid("d", "must be >= 2"));
        }
        if self.seq_len < 1 {
            return Err(invalid("L", "must be >= 1"));
        }
        if !(self.gamma > 0.0 && self.gamma.is_finite()) {
            return Err(invalid("gamma", "must be > 0"));
        }
        if !(self.eps >= 0.0 && self.eps.is_finite()) {
            return Err(invalid("eps", "must be >= 0"));
        }
        self.schedule().validate()?;
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(invalid("alpha", "must be > 0"));
        }
        if self.steps < 1 {
            return Err(invalid("steps", "must be >= 1"));
        }
        if self.batch_size < 1 {
            return Err(invalid("batch_size", "must be >= 1"));
        }
        if self.record_every < 1 {
            return Err(invalid("record_every", "must be >= 1"));
        }
        if self.repetitions < 1 {
            return Err(invalid("repetitions", "must be >= 1"));
        }
        if self.init_mode == InitMode::Manifold && self.d < 3 {
            return Err(invalid("init_mode", "manifold initialization needs d >= 3"));
        }
        if self.scan_d.is_empty() || self.scan_d.iter().any(|&d| d < 2) {
            return Err(invalid("scan_d", "needs at least one entry, all >= 2"));
        }
        if self.scan_l.is_empty() || self.scan_l.contains(&0) {
            return Err(invalid("scan_L", "needs at least one entry, all >= 1"));
        }
        if !(self.lambda_exponent.is_finite()) {
            return Err(invalid("lambda_exponent", "must be finite"));
        }
        if self.field_n < 2 {
            return Err(invalid("field_n", "must be >= 2"));
        }
        Ok(())
    }

    pub fn effective_seed(&self) -> u64 {
        self.seed.unwrap_or(DEFAULT_SEED)
    }

    pub fn schedule(&self) -> Schedule {
        if self.decay == 0.0 {
            Schedule::constant(self.lambda0)
        } else {
            Schedule::hyperbolic(self.lambda0, self.decay)
        }
    }

    /// The task shared by all repetitions, drawn from the seed's task stream.
    pub fn task(&self) -> Result<TaskParams> {
        let mut r = rng::stream(self.effective_seed(), rng::TASK_STREAM);
        task::make_task(
            self.d,
            self.seq_len,
            self.gamma,
            self.eps,
            self.lambda0,
            None,
            &mut r,
        )
    }
}

/// `SLR_SEED` from the environment, if set and parseable.
pub fn seed_from_env() -> Result<Option<u64>> {
    match std::env::var(SEED_ENV) {
        Ok(v) => v
            .trim()
            .parse()
            .map(Some)
            .map_err(|_| invalid("SLR_SEED", format!("not a 64-bit integer: `{v}`"))),
        Err(_) => Ok(None),
    }
}

/// One optimizer run; repetition `rep` draws its initialization (and, for
/// stochastic PGD, its minibatches) from stream `rep` of the seed.
pub fn run_repetition(cfg: &RunConfig, task: &TaskParams, rep: usize) -> Result<Trajectory> {
    let mut r = rng::stream(cfg.effective_seed(), rep as u64);
    let init = match cfg.init_mode {
        InitMode::Sphere => optimizer::init_on_sphere(cfg.d, &mut r),
        InitMode::Manifold => optimizer::init_on_manifold(task, &mut r)?,
    };
    let schedule = cfg.schedule();
    match cfg.mode {
        Mode::Pgd => optimizer::run_pgd(
            &init,
            &schedule,
            cfg.alpha,
            cfg.steps,
            cfg.record_every,
            task,
        ),
        Mode::Spgd => optimizer::run_spgd(
            &init,
            &schedule,
            cfg.alpha,
            cfg.steps,
            cfg.batch_size,
            cfg.record_every,
            task,
            &mut r,
        ),
        Mode::Scan => Err(invalid("mode", "scan mode has no optimizer runs")),
    }
}

pub fn run_repetitions(cfg: &RunConfig, exec: Exec) -> Result<Vec<Trajectory>> {
    cfg.validate()?;
    let task = cfg.task()?;
    exec.map(cfg.repetitions, |rep| run_repetition(cfg, &task, rep))
        .into_iter()
        .collect()
}

/// Linear-interpolation quantile of sorted data.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let h = (n - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Across-repetition quantiles at one recorded step. `values` follows
/// `TrajectoryRow::HEADER[1..]` followed by |kappa| and |nu|.
#[derive(Debug, Clone, PartialEq)]
pub struct AggregateRow {
    pub step: usize,
    pub quantile: f64,
    pub values: [f64; 11],
}

pub const AGGREGATE_HEADER: [&str; 13] = [
    "step",
    "quantile",
    "lambda",
    "kappa",
    "nu",
    "theta",
    "eta",
    "rho",
    "risk",
    "excess_risk",
    "dist_m",
    "abs_kappa",
    "abs_nu",
];

pub fn aggregate(trajs: &[Trajectory]) -> Result<Vec<AggregateRow>> {
    let first = trajs
        .first()
        .ok_or_else(|| invalid("repetitions", "nothing to aggregate"))?;
    let n_rows = first.rows.len();
    if trajs.iter().any(|t| t.rows.len() != n_rows) {
        return Err(Error::Shape("repetitions recorded different steps".into()));
    }
    let mut out = Vec::with_capacity(n_rows * QUANTILES.len());
    let mut column = vec![0.0; trajs.len()];
    for i in 0..n_rows {
        let step = first.rows[i].step;
        let mut per_q = [[0.0; 11]; 3];
        for j in 0..11 {
            for (c, t) in column.iter_mut().zip(trajs) {
                let row = &t.rows[i];
                let v = row.values();
                *c = match j {
                    0..=8 => v[j + 1],
                    9 => row.kappa.abs(),
                    _ => row.nu.abs(),
                };
            }
            column.sort_by(f64::total_cmp);
            for (qi, &q) in QUANTILES.iter().enumerate() {
                per_q[qi][j] = quantile_sorted(&column, q);
            }
        }
        for (qi, &q) in QUANTILES.iter().enumerate() {
            out.push(AggregateRow {
                step,
                quantile: q,
                values: per_q[qi],
            });
        }
    }
    Ok(out)
}

/// Floats are written with 17 significant digits, which round-trips exactly.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> Error {
    Error::Io {
        path: path.display().to_string(),
        reason: e.to_string(),
    }
}

fn write_rows<I, R>(path: &Path, header: &[&str], rows: I) -> Result<()>
where
    I: IntoIterator<Item = R>,
    R: IntoIterator<Item = String>,
{
    let mut w = csv::Writer::from_path(path).map_err(|e| io_err(path, e))?;
    w.write_record(header).map_err(|e| io_err(path, e))?;
    for row in rows {
        w.write_record(row).map_err(|e| io_err(path, e))?;
    }
    w.flush().map_err(|e| io_err(path, e))
}

fn trajectory_record(r: &TrajectoryRow) -> Vec<String> {
    let mut rec = vec![r.step.to_string()];
    rec.extend(r.values()[1..].iter().map(|&x| fmt_f64(x)));
    rec
}

pub fn write_trajectory_csv(path: &Path, traj: &Trajectory) -> Result<()> {
    write_rows(
        path,
        &TrajectoryRow::HEADER,
        traj.rows.iter().map(trajectory_record),
    )
}

pub fn write_aggregate_csv(path: &Path, rows: &[AggregateRow]) -> Result<()> {
    write_rows(
        path,
        &AGGREGATE_HEADER,
        rows.iter().map(|r| {
            let mut rec = vec![r.step.to_string(), r.quantile.to_string()];
            rec.extend(r.values.iter().map(|&x| fmt_f64(x)));
            rec
        }),
    )
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScanRow {
    pub d: usize,
    pub seq_len: usize,
    pub lambda: f64,
    pub oracle_risk: f64,
    pub linear_risk: f64,
}

pub const SCAN_HEADER: [&str; 5] = ["d", "L", "lambda", "oracle_risk", "linear_risk"];

/// A task with `k* = e1`, `v* = e2`; the risks do not depend on the
/// particular orthonormal pair.
fn canonical_task(
    d: usize,
    seq_len: usize,
    gamma: f64,
    eps: f64,
    lambda0: f64,
) -> Result<TaskParams> {
    let mut k = vec![0.0; d];
    let mut v = vec![0.0; d];
    k[0] = 1.0;
    v[1] = 1.0;
    TaskParams::new(
        d,
        seq_len,
        gamma,
        eps,
        lambda0,
        task::uniform_probs(seq_len),
        k,
        v,
    )
}

/// Oracle and best-linear risk over the `scan_d x scan_L` grid with
/// `lambda = d^(-lambda_exponent)` and uniform locations.
pub fn scan(cfg: &RunConfig, exec: Exec) -> Result<Vec<ScanRow>> {
    let points: Vec<(usize, usize)> = cfg
        .scan_d
        .iter()
        .flat_map(|&d| cfg.scan_l.iter().map(move |&l| (d, l)))
        .collect();
    exec.map(points.len(), |i| {
        let (d, l) = points[i];
        let lambda = (d as f64).powf(-cfg.lambda_exponent);
        let t = canonical_task(d, l, cfg.gamma, cfg.eps, lambda)?;
        Ok(ScanRow {
            d,
            seq_len: l,
            lambda,
            oracle_risk: risk::oracle_risk(&t)?,
            linear_risk: risk::linear_baseline(&t).risk,
        })
    })
    .into_iter()
    .collect()
}

pub fn write_scan_csv(path: &Path, rows: &[ScanRow]) -> Result<()> {
    write_rows(
        path,
        &SCAN_HEADER,
        rows.iter().map(|r| {
            vec![
                r.d.to_string(),
                r.seq_len.to_string(),
                fmt_f64(r.lambda),
                fmt_f64(r.oracle_risk),
                fmt_f64(r.linear_risk),
            ]
        }),
    )
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FieldRow {
    pub kappa: f64,
    pub nu: f64,
    /// `-dR/dkappa (1 - kappa^2)`
    pub f_kappa: f64,
    /// `-dR/dnu (1 - nu^2)`
    pub f_nu: f64,
    pub magnitude: f64,
}

pub const FIELD_HEADER: [&str; 5] = ["kappa", "nu", "f_kappa", "f_nu", "magnitude"];

/// The continuous-time flow of the reduced dynamics on a uniform grid over
/// [-1, 1]^2, at the config's task and `lambda0`.
pub fn vector_field(cfg: &RunConfig) -> Result<Vec<FieldRow>> {
    let t = canonical_task(cfg.d, cfg.seq_len, cfg.gamma, cfg.eps, cfg.lambda0)?;
    let model = RiskModel::new(&t, cfg.lambda0)?;
    let n = cfg.field_n;
    let at = |i: usize| -1.0 + 2.0 * i as f64 / (n - 1) as f64;
    let mut out = Vec::with_capacity(n * n);
    for i in 0..n {
        for j in 0..n {
            let (kappa, nu) = (at(i), at(j));
            let (dk, dn) = model.grad_manifold(kappa, nu);
            let f_kappa = -dk * (1.0 - kappa * kappa);
            let f_nu = -dn * (1.0 - nu * nu);
            out.push(FieldRow {
                kappa,
                nu,
                f_kappa,
                f_nu,
                magnitude: f_kappa.hypot(f_nu),
            });
        }
    }
    Ok(out)
}

pub fn write_field_csv(path: &Path, rows: &[FieldRow]) -> Result<()> {
    write_rows(
        path,
        &FIELD_HEADER,
        rows.iter().map(|r| {
            [r.kappa, r.nu, r.f_kappa, r.f_nu, r.magnitude]
                .iter()
                .map(|&x| fmt_f64(x))
                .collect::<Vec<_>>()
        }),
    )
}

/// What `run` wrote and a one-line summary per repetition or grid.
#[derive(Debug, Clone, Default)]
pub struct RunOutput {
    pub files: Vec<PathBuf>,
    pub summary: Vec<String>,
}

fn prepare_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| io_err(dir, e))
}

fn write_resolved_config(cfg: &RunConfig, out: &mut RunOutput) -> Result<()> {
    let path = cfg.output_path.join("config.txt");
    let mut resolved = cfg.clone();
    resolved.seed = Some(cfg.effective_seed());
    std::fs::write(&path, resolved.to_config_string()).map_err(|e| io_err(&path, e))?;
    out.files.push(path);
    Ok(())
}

/// Execute the configured experiment and write its CSVs under
/// `cfg.output_path`.
pub fn run(cfg: &RunConfig, exec: Exec) -> Result<RunOutput> {
    cfg.validate()?;
    prepare_dir(&cfg.output_path)?;
    let mut out = RunOutput::default();
    write_resolved_config(cfg, &mut out)?;
    match cfg.mode {
        Mode::Scan => {
            let rows = scan(cfg, exec)?;
            let path = cfg.output_path.join("fig3_scan.csv");
            write_scan_csv(&path, &rows)?;
            out.files.push(path);
            let beaten = rows
                .iter()
                .filter(|r| r.oracle_risk < r.linear_risk)
                .count();
            out.summary.push(format!(
                "scan: oracle below linear at {beaten}/{} grid points",
                rows.len()
            ));
        }
        Mode::Pgd | Mode::Spgd => {
            let trajs = run_repetitions(cfg, exec)?;
            for (rep, t) in trajs.iter().enumerate() {
                let path = cfg.output_path.join(format!("rep_{rep:03}.csv"));
                write_trajectory_csv(&path, t)?;
                out.files.push(path);
                let l = t.last();
                out.summary.push(format!(
                    "rep {rep:03}: step {} kappa {:+.6} nu {:+.6} excess_risk {:.6e} dist_m {:.3e}",
                    l.step, l.kappa, l.nu, l.excess_risk, l.dist_m
                ));
            }
            let path = cfg.output_path.join("aggregate.csv");
            write_aggregate_csv(&path, &aggregate(&trajs)?)?;
            out.files.push(path);
        }
    }
    Ok(out)
}

/// Write the vector-field grid to `cfg.output_path/vector_field.csv`.
pub fn run_field(cfg: &RunConfig) -> Result<RunOutput> {
    cfg.validate()?;
    prepare_dir(&cfg.output_path)?;
    let rows = vector_field(cfg)?;
    let path = cfg.output_path.join("vector_field.csv");
    write_field_csv(&path, &rows)?;
    Ok(RunOutput {
        summary: vec![format!("vector field: {} points", rows.len())],
        files: vec![path],
    })
}

//! Per-iteration diagnostics, rate certificates and trajectory comparison.

use std::io;
use std::path::Path;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::lyapunov::{AuditKind, LyapunovSample, LyapunovTracker};
use crate::ode::OdeState;
use crate::optimizers::{Method, MomentumParameter, RunConfig, RunState};
use crate::problems::CompositeProblem;

pub const CSV_HEADER: [&str; 7] = ["k_or_t", "gap", "grad_sq", "min_grad_sq", "lyap", "norm_gap", "norm_grad"];
/// Slack on certificates relative to `max(1, E(K₀))`.
pub const CERTIFICATE_TOL: f64 = 1e-10;
/// Required decade-over-decade decay of `norm_grad`.
pub const TREND_FACTOR: f64 = 2.0;
const THINNING_KNEE: u64 = 1000;

/// Which iterations are written out. The first and last iteration are
/// always recorded.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Cadence {
    Every(u64),
    /// Every iteration up to `k = 1000`, then every `⌈k/1000⌉`-th.
    Thinned,
}

impl Cadence {
    pub fn should_record(&self, k: u64, last: u64) -> bool {
        if k == 0 || k == last {
            return true;
        }
        match *self {
            Cadence::Every(n) => n > 0 && k % n == 0,
            Cadence::Thinned => k <= THINNING_KNEE || k % k.div_ceil(THINNING_KNEE) == 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RecordIndex {
    Iteration(u64),
    Time(f64),
}

impl RecordIndex {
    pub fn value(&self) -> f64 {
        match *self {
            RecordIndex::Iteration(k) => k as f64,
            RecordIndex::Time(t) => t,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrajectoryRecord {
    pub index: RecordIndex,
    pub gap: f64,
    pub grad_sq: f64,
    pub min_grad_sq: f64,
    pub lyap: Option<f64>,
    pub norm_gap: f64,
    pub norm_grad: f64,
}

/// `s^γ (k+1)^{2γ} · gap` for iterations, `t^{2γ} · gap` for ODE time.
pub fn normalized_gap(index: RecordIndex, gap: f64, gamma: f64, s: f64) -> f64 {
    match index {
        RecordIndex::Iteration(k) => s.powf(gamma) * (k as f64 + 1.0).powf(2.0 * gamma) * gap,
        RecordIndex::Time(t) => t.powf(2.0 * gamma) * gap,
    }
}

/// `s^{γ+1} k^{2γ+1} · min_grad_sq` for iterations, `t^{2γ+1} · min_grad_sq` for ODE time.
pub fn normalized_grad(index: RecordIndex, min_grad_sq: f64, gamma: f64, s: f64) -> f64 {
    match index {
        RecordIndex::Iteration(k) => s.powf(gamma + 1.0) * (k as f64).powf(2.0 * gamma + 1.0) * min_grad_sq,
        RecordIndex::Time(t) => t.powf(2.0 * gamma + 1.0) * min_grad_sq,
    }
}

impl TrajectoryRecord {
    pub fn new(index: RecordIndex, gap: f64, grad_sq: f64, prev_min: f64, lyap: Option<f64>, gamma: f64, s: f64) -> Self {
        let min_grad_sq = prev_min.min(grad_sq);
        Self {
            index,
            gap,
            grad_sq,
            min_grad_sq,
            lyap,
            norm_gap: normalized_gap(index, gap, gamma, s),
            norm_grad: normalized_grad(index, min_grad_sq, gamma, s),
        }
    }

    fn is_finite(&self) -> bool {
        [self.gap, self.grad_sq, self.min_grad_sq, self.norm_gap, self.norm_grad]
            .iter()
            .chain(self.lyap.as_ref())
            .all(|v| v.is_finite())
    }
}

/// The diagnostics row for a discrete state.
///
/// Gap and gradient are taken at the lookahead `y_k` (`f(y_k)`, `∇f(y_k)`)
/// for NAG and the phase-space form on smooth problems; FISTA and composite
/// runs use `Φ(x_k)` and the gradient map `G_s(y_k)`. `prev_min` is the
/// running minimum of `grad_sq` before this state (`+∞` at the start).
pub fn record(
    state: &RunState,
    problem: &CompositeProblem,
    method: Method,
    momentum: &MomentumParameter,
    s: f64,
    prev_min: f64,
    lyap: Option<f64>,
) -> Result<TrajectoryRecord> {
    let y = match method {
        Method::Phase => state.phase_lookahead(momentum, s),
        Method::Nag | Method::Fista => state.lookahead(momentum),
    };
    let (gap, grad_sq) = if method == Method::Fista || !problem.is_smooth() {
        (
            problem.composite_gap(&state.x_curr)?,
            problem.proximal_subgradient(&y, s).norm_squared(),
        )
    } else {
        (problem.smooth_gap(&y)?, problem.smooth().gradient(&y).norm_squared())
    };
    let rec = TrajectoryRecord::new(
        RecordIndex::Iteration(state.k),
        gap,
        grad_sq,
        prev_min,
        lyap,
        momentum.gamma(),
        s,
    );
    if !rec.is_finite() {
        return Err(Error::Divergence {
            iteration: state.k,
            detail: "non-finite diagnostics".into(),
        });
    }
    Ok(rec)
}

/// The diagnostics row for an ODE state: `f(X) − f(x⋆)` and `‖∇f(X)‖²`.
pub fn record_ode(state: &OdeState, problem: &CompositeProblem, gamma: f64, prev_min: f64, lyap: Option<f64>) -> Result<TrajectoryRecord> {
    let gap = problem.smooth_gap(&state.x)?;
    let grad_sq = problem.smooth().gradient(&state.x).norm_squared();
    Ok(TrajectoryRecord::new(
        RecordIndex::Time(state.t),
        gap,
        grad_sq,
        prev_min,
        lyap,
        gamma,
        1.0,
    ))
}

/// Single-writer accumulator for one discrete run.
pub struct Recorder<'a> {
    problem: &'a CompositeProblem,
    method: Method,
    momentum: MomentumParameter,
    step: f64,
    cadence: Cadence,
    last: u64,
    min_grad_sq: f64,
    tracker: Option<LyapunovTracker<'a>>,
    records: Vec<TrajectoryRecord>,
}

impl<'a> Recorder<'a> {
    /// Lyapunov values are tracked when `γ ≤ 1` and the problem has a known
    /// optimum; otherwise the `lyap` column stays empty.
    pub fn new(problem: &'a CompositeProblem, method: Method, cfg: &RunConfig) -> Self {
        let kind = AuditKind::for_run(method, problem, &cfg.momentum);
        let tracker = if cfg.momentum.gamma() <= 1.0 {
            LyapunovTracker::new(kind, cfg.momentum, cfg.step, problem).ok()
        } else {
            None
        };
        Self {
            problem,
            method,
            momentum: cfg.momentum,
            step: cfg.step,
            cadence: cfg.record_every,
            last: cfg.max_iter,
            min_grad_sq: f64::INFINITY,
            tracker,
            records: Vec::new(),
        }
    }

    pub fn observe(&mut self, state: &RunState) -> Result<()> {
        let lyap = match self.tracker.as_mut() {
            Some(t) => t.observe(state)?,
            None => None,
        };
        let rec = record(
            state,
            self.problem,
            self.method,
            &self.momentum,
            self.step,
            self.min_grad_sq,
            lyap,
        )?;
        self.min_grad_sq = rec.min_grad_sq;
        if self.cadence.should_record(state.k, self.last) {
            self.records.push(rec);
        }
        Ok(())
    }

    pub fn finish(self, final_state: &RunState) -> Result<(Vec<TrajectoryRecord>, Vec<LyapunovSample>)> {
        match self.records.last() {
            Some(r) if r.index == RecordIndex::Iteration(final_state.k) => {}
            _ => {
                return Err(Error::InsufficientData(format!(
                    "final iteration {} was not recorded",
                    final_state.k
                )))
            }
        }
        let samples = self.tracker.map(LyapunovTracker::into_samples).unwrap_or_default();
        Ok((self.records, samples))
    }
}

/// Which objective bound applies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum RateBound {
    /// `E(K₀) / (s^γ (k+1)^{2γ})`
    Nag,
    /// `E(K₀) / (s^γ k^{2γ})`
    Fista,
}

#[derive(Debug, Clone, Serialize)]
pub struct ObjectiveCertificate {
    pub bound: RateBound,
    pub k0: u64,
    pub e_k0: f64,
    pub checked: usize,
    /// Smallest `bound + tol − gap` over the checked records.
    pub worst_margin: Option<f64>,
    pub passed: bool,
}

/// Checks `gap_k ≤ E(K₀)/(s^γ (k+1)^{2γ}) + 1e−10·max(1, E(K₀))` (or the
/// `k^{2γ}` form) at every recorded `k ≥ K₀`.
pub fn certify_objective_rate(
    records: &[TrajectoryRecord],
    k0: u64,
    e_k0: f64,
    gamma: f64,
    s: f64,
    bound: RateBound,
) -> ObjectiveCertificate {
    let tol = CERTIFICATE_TOL * e_k0.abs().max(1.0);
    let margins: Vec<f64> = records
        .iter()
        .filter_map(|r| match r.index {
            RecordIndex::Iteration(k) if k >= k0 && k > 0 => Some((k as f64, r.gap)),
            _ => None,
        })
        .map(|(k, gap)| {
            let scale = match bound {
                RateBound::Nag => s.powf(gamma) * (k + 1.0).powf(2.0 * gamma),
                RateBound::Fista => s.powf(gamma) * k.powf(2.0 * gamma),
            };
            e_k0 / scale + tol - gap
        })
        .collect();
    let worst_margin = margins.iter().copied().reduce(f64::min);
    ObjectiveCertificate {
        bound,
        k0,
        e_k0,
        checked: margins.len(),
        worst_margin,
        passed: worst_margin.is_some_and(|m| m >= 0.0),
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct TrendCertificate {
    pub early_window: (u64, u64),
    pub late_window: (u64, u64),
    pub early_median: f64,
    pub late_median: f64,
    /// `early_median / late_median`; absent when the late median is 0.
    pub factor: Option<f64>,
    pub passed: bool,
}

fn median(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(f64::total_cmp);
    let n = xs.len();
    if n % 2 == 1 {
        xs[n / 2]
    } else {
        (xs[n / 2 - 1] + xs[n / 2]) / 2.0
    }
}

/// Compares the median of `norm_grad` over `[K₀, 10K₀]` with that over
/// `[k_max/10, k_max]`; passes when the decay factor is at least 2.
///
/// Refused with [`Error::InsufficientData`] unless the records span at
/// least two decades past `K₀`.
pub fn certify_gradient_trend(records: &[TrajectoryRecord], k0: u64) -> Result<TrendCertificate> {
    let k0 = k0.max(1);
    let k_max = records
        .iter()
        .filter_map(|r| match r.index {
            RecordIndex::Iteration(k) => Some(k),
            RecordIndex::Time(_) => None,
        })
        .max()
        .ok_or_else(|| Error::InsufficientData("no iteration records".into()))?;
    if k_max < 100 * k0 {
        return Err(Error::InsufficientData(format!(
            "gradient trend needs records up to 100·K₀ = {}, have {k_max}",
            100 * k0
        )));
    }
    let window = |lo: u64, hi: u64| -> Vec<f64> {
        records
            .iter()
            .filter_map(|r| match r.index {
                RecordIndex::Iteration(k) if k >= lo && k <= hi => Some(r.norm_grad),
                _ => None,
            })
            .collect()
    };
    let early_window = (k0, 10 * k0);
    let late_window = (k_max / 10, k_max);
    let early = window(early_window.0, early_window.1);
    let late = window(late_window.0, late_window.1);
    if early.is_empty() || late.is_empty() {
        return Err(Error::InsufficientData("a trend window holds no records".into()));
    }
    let early_median = median(early);
    let late_median = median(late);
    let factor = (late_median > 0.0).then(|| early_median / late_median);
    Ok(TrendCertificate {
        early_window,
        late_window,
        early_median,
        late_median,
        factor,
        passed: factor.is_none_or(|f| f >= TREND_FACTOR),
    })
}

/// Records of one run tagged with the problem they came from.
#[derive(Debug, Clone)]
pub struct RunLog {
    pub problem: String,
    pub records: Vec<TrajectoryRecord>,
}

/// Linear interpolation of `gap` at time `t` in time-ordered records.
pub fn interpolate_gap(records: &[TrajectoryRecord], t: f64) -> Result<f64> {
    let idx = records.partition_point(|r| r.index.value() < t);
    if idx < records.len() && records[idx].index.value() == t {
        return Ok(records[idx].gap);
    }
    if idx == 0 || idx == records.len() {
        return Err(Error::InsufficientData(format!("time {t} lies outside the ODE trajectory")));
    }
    let (a, b) = (&records[idx - 1], &records[idx]);
    let (ta, tb) = (a.index.value(), b.index.value());
    let w = (t - ta) / (tb - ta);
    Ok(a.gap + w * (b.gap - a.gap))
}

/// `sup_{1 ≤ k ≤ k_max} |gap_nag(k) − gap_ode(k√s)|` over the recorded NAG iterations.
pub fn sup_deviation(nag: &RunLog, ode: &RunLog, s: f64, k_max: u64) -> Result<f64> {
    if nag.problem != ode.problem {
        return Err(Error::InvalidParameter(format!(
            "cannot compare runs on different problems ({} vs {})",
            nag.problem, ode.problem
        )));
    }
    if k_max == 0 {
        return Err(Error::InvalidParameter("k_max must be positive".into()));
    }
    let mut sup = 0.0f64;
    let mut seen = 0;
    for r in &nag.records {
        let RecordIndex::Iteration(k) = r.index else {
            return Err(Error::InvalidParameter("NAG records must be indexed by iteration".into()));
        };
        if k == 0 || k > k_max {
            continue;
        }
        let ode_gap = interpolate_gap(&ode.records, k as f64 * s.sqrt())?;
        sup = sup.max((r.gap - ode_gap).abs());
        seen += 1;
    }
    if seen == 0 {
        return Err(Error::InsufficientData("no NAG records with 1 <= k <= k_max".into()));
    }
    Ok(sup)
}

#[derive(Debug, Clone, Serialize)]
pub struct DeviationReport {
    pub k_max: u64,
    pub low_res: f64,
    pub high_res: f64,
}

/// Sup-norm gap deviations of both ODE models from NAG under `t = k√s`.
pub fn compare_ode_nag(nag: &RunLog, low: &RunLog, high: &RunLog, s: f64, k_max: u64) -> Result<DeviationReport> {
    Ok(DeviationReport {
        k_max,
        low_res: sup_deviation(nag, low, s, k_max)?,
        high_res: sup_deviation(nag, high, s, k_max)?,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Field {
    Gap,
    GradSq,
    MinGradSq,
    Lyap,
    NormGap,
    NormGrad,
}

impl Field {
    pub fn get(&self, r: &TrajectoryRecord) -> Option<f64> {
        match self {
            Field::Gap => Some(r.gap),
            Field::GradSq => Some(r.grad_sq),
            Field::MinGradSq => Some(r.min_grad_sq),
            Field::Lyap => r.lyap,
            Field::NormGap => Some(r.norm_gap),
            Field::NormGrad => Some(r.norm_grad),
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct SlopeFit {
    pub slope: f64,
    pub intercept: f64,
    /// Root-mean-square residual in log space.
    pub residual: f64,
    pub points: usize,
}

/// Least-squares slope of `ln(field)` against `ln(k)` over `lo ≤ k ≤ hi`.
pub fn fit_loglog_slope(records: &[TrajectoryRecord], field: Field, lo: f64, hi: f64) -> Result<SlopeFit> {
    let pts: Vec<(f64, f64)> = records
        .iter()
        .filter(|r| (lo..=hi).contains(&r.index.value()))
        .map(|r| {
            let x = r.index.value();
            match field.get(r) {
                Some(y) if y > 0.0 && x > 0.0 => Ok((x.ln(), y.ln())),
                _ => Err(Error::InsufficientData(format!(
                    "field is missing or nonpositive at index {x}"
                ))),
            }
        })
        .collect::<Result<_>>()?;
    if pts.len() < 10 {
        return Err(Error::InsufficientData(format!(
            "slope fit needs at least 10 points, found {}",
            pts.len()
        )));
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let residual = (pts.iter().map(|p| (p.1 - intercept - slope * p.0).powi(2)).sum::<f64>() / n).sqrt();
    Ok(SlopeFit {
        slope,
        intercept,
        residual,
        points: pts.len(),
    })
}

fn fmt_float(x: f64) -> String {
    format!("{x:.16e}")
}

pub fn write_csv<W: io::Write>(writer: W, records: &[TrajectoryRecord]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(CSV_HEADER)?;
    for r in records {
        let index = match r.index {
            RecordIndex::Iteration(k) => k.to_string(),
            RecordIndex::Time(t) => fmt_float(t),
        };
        w.write_record([
            index,
            fmt_float(r.gap),
            fmt_float(r.grad_sq),
            fmt_float(r.min_grad_sq),
            r.lyap.map(fmt_float).unwrap_or_default(),
            fmt_float(r.norm_gap),
            fmt_float(r.norm_grad),
        ])?;
    }
    w.flush().map_err(|e| Error::Csv(e.into()))?;
    Ok(())
}

pub fn write_csv_file(path: &Path, records: &[TrajectoryRecord]) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_csv(io::BufWriter::new(file), records)
}

pub fn read_csv<R: io::Read>(reader: R) -> Result<Vec<TrajectoryRecord>> {
    let mut rdr = csv::Reader::from_reader(reader);
    let header = rdr.headers()?.clone();
    if header.iter().ne(CSV_HEADER) {
        return Err(Error::Malformed(format!(
            "expected header {}, found {}",
            CSV_HEADER.join(","),
            header.iter().collect::<Vec<_>>().join(",")
        )));
    }
    let mut out = Vec::new();
    for (line, row) in rdr.records().enumerate() {
        let row = row?;
        let num = |i: usize| -> Result<f64> {
            row[i]
                .parse()
                .map_err(|_| Error::Malformed(format!("row {}: bad value `{}` in {}", line + 1, &row[i], CSV_HEADER[i])))
        };
        let index = match row[0].parse::<u64>() {
            Ok(k) => RecordIndex::Iteration(k),
            Err(_) => RecordIndex::Time(num(0)?),
        };
        let lyap = if row[4].is_empty() { None } else { Some(num(4)?) };
        out.push(TrajectoryRecord {
            index,
            gap: num(1)?,
            grad_sq: num(2)?,
            min_grad_sq: num(3)?,
            lyap,
            norm_gap: num(5)?,
            norm_grad: num(6)?,
        });
    }
    Ok(out)
}

pub fn read_csv_file(path: &Path) -> Result<Vec<TrajectoryRecord>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_csv(io::BufReader::new(file))
}

//! Experiment harness behind the `rglab` binary.
//!
//! An [`ExperimentConfig`] names an experiment and its string parameters;
//! [`run`] produces JSON-lines [`Record`]s that embed the config, and
//! [`sweep`] varies one parameter and emits a CSV table.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use rglab::gaussian::seed_stream;
use rglab::kacrice::{
    isotropic_moments, kac_rice_expectation, mixed_kostlan_expectation, shub_smale_expectation, Domain,
    MixedKostlanSpec,
};
use rglab::kostlan::{cube_grid, kernel_sup_distance, sample_kostlan, KernelSpec, KernelVariant, MixedKostlanMap};
use rglab::nodal::{
    betti_sublevel, boundary_values, circle_distance, condition_report, condition_report_field,
    critical_count_on_curve, lattice_centers, marching_squares_components, reach_equation, sample_grid,
    semicontinuity_check, sharp_family, PlaneCurve, RadialBump, Rect, Region, ScalarField, TrigSum,
};
use rglab::zerocount::{
    circle_zero_count, mc_expected_count, projective_zero_count, sphere_zero_count, system_count_rp2, McSummary,
};

pub const EXPERIMENTS: [&str; 8] = [
    "mc-count",
    "kacrice-quadrature",
    "closed-form",
    "rescale-distance",
    "nodal-betti",
    "kappa",
    "semicontinuity",
    "sharp-family",
];

/// Header of the table written by [`sweep`].
pub const SWEEP_HEADER: &str = "experiment,param,param_value,value,stderr,seed";

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error("unknown experiment '{0}'; expected one of: {list}", list = EXPERIMENTS.join(", "))]
    UnknownExperiment(String),
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error(transparent)]
    Core(#[from] rglab::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("config is not valid JSON: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, HarnessError>;

/// Everything needed to reproduce a run. Parameter values are kept as the
/// strings given on the command line.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub experiment: String,
    #[serde(default)]
    pub params: BTreeMap<String, String>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trials: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out: Option<String>,
    #[serde(default)]
    pub check: bool,
}

impl ExperimentConfig {
    pub fn new(experiment: &str) -> Self {
        ExperimentConfig {
            experiment: experiment.to_string(),
            params: BTreeMap::new(),
            seed: 0,
            trials: None,
            out: None,
            check: false,
        }
    }

    pub fn with(mut self, key: &str, value: &str) -> Self {
        self.params.insert(key.to_string(), value.to_string());
        self
    }
}

/// One output line. `check` is `None` for experiments without a tolerance.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Record {
    pub config: ExperimentConfig,
    pub value: f64,
    pub stderr: f64,
    #[serde(default)]
    pub extra: BTreeMap<String, Value>,
    pub check: Option<bool>,
}

impl Record {
    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("records serialize")
    }
}

struct Params<'a> {
    cfg: &'a ExperimentConfig,
}

impl<'a> Params<'a> {
    fn new(cfg: &'a ExperimentConfig, allowed: &[&str]) -> Result<Self> {
        for k in cfg.params.keys() {
            if !allowed.contains(&k.as_str()) {
                return Err(HarnessError::InvalidParams(format!(
                    "'{k}' is not a parameter of {}; accepted: {}",
                    cfg.experiment,
                    allowed.join(", ")
                )));
            }
        }
        Ok(Params { cfg })
    }

    fn raw(&self, key: &str) -> Option<&str> {
        self.cfg.params.get(key).map(String::as_str)
    }

    fn parse<T: std::str::FromStr>(&self, key: &str, default: T) -> Result<T> {
        match self.raw(key) {
            None => Ok(default),
            Some(v) => v
                .trim()
                .parse()
                .map_err(|_| HarnessError::InvalidParams(format!("cannot parse {key}='{v}'"))),
        }
    }

    fn list<T: std::str::FromStr>(&self, key: &str, default: &str) -> Result<Vec<T>> {
        let v = self.raw(key).unwrap_or(default);
        let out: std::result::Result<Vec<T>, _> = v.split(',').map(|x| x.trim().parse()).collect();
        match out {
            Ok(list) if !list.is_empty() => Ok(list),
            _ => Err(HarnessError::InvalidParams(format!(
                "{key}='{v}' must be a comma-separated list of numbers"
            ))),
        }
    }

    fn choice(&self, key: &str, default: &str, options: &[&str]) -> Result<String> {
        let v = self.raw(key).unwrap_or(default);
        if options.contains(&v) {
            Ok(v.to_string())
        } else {
            Err(HarnessError::InvalidParams(format!(
                "{key}='{v}' is not one of: {}",
                options.join(", ")
            )))
        }
    }

    fn trials(&self, default: usize) -> usize {
        self.cfg.trials.unwrap_or(default)
    }
}

fn record(cfg: &ExperimentConfig, value: f64, stderr: f64, extra: Value, check: Option<bool>) -> Record {
    let extra = match extra {
        Value::Object(m) => m.into_iter().collect(),
        _ => BTreeMap::new(),
    };
    Record {
        config: cfg.clone(),
        value,
        stderr,
        extra,
        check,
    }
}

fn within_4_sigma(mean: f64, target: f64, stderr: f64) -> bool {
    (mean - target).abs() <= 4.0 * stderr || (mean - target).abs() <= 1e-9 * target.abs().max(1.0)
}

fn positive(name: &str, x: f64) -> Result<f64> {
    if x > 0.0 && x.is_finite() {
        Ok(x)
    } else {
        Err(HarnessError::InvalidParams(format!("{name} must be positive, got {x}")))
    }
}

/// True unless some record failed its tolerance.
pub fn all_checks_pass(records: &[Record]) -> bool {
    records.iter().all(|r| r.check != Some(false))
}

/// Runs one experiment.
pub fn run(cfg: &ExperimentConfig) -> Result<Vec<Record>> {
    match cfg.experiment.as_str() {
        "mc-count" => mc_count(cfg),
        "kacrice-quadrature" => kacrice_quadrature(cfg),
        "closed-form" => closed_form(cfg),
        "rescale-distance" => rescale_distance(cfg),
        "nodal-betti" => nodal_betti(cfg),
        "kappa" => kappa(cfg),
        "semicontinuity" => semicontinuity(cfg),
        "sharp-family" => sharp(cfg),
        other => Err(HarnessError::UnknownExperiment(other.to_string())),
    }
}

/// Runs `base` once per value of `param` and returns the CSV table with
/// header [`SWEEP_HEADER`], using the first record of each run.
pub fn sweep(base: &ExperimentConfig, param: &str, values: &[String]) -> Result<(String, Vec<Record>)> {
    if values.is_empty() {
        return Err(HarnessError::InvalidParams(format!("empty range for {param}")));
    }
    let mut csv = String::from(SWEEP_HEADER);
    csv.push('\n');
    let mut all = Vec::new();
    for v in values {
        let cfg = base.clone().with(param, v);
        let records = run(&cfg)?;
        let r = &records[0];
        csv.push_str(&format!(
            "{},{},{},{},{},{}\n",
            cfg.experiment, param, v, r.value, r.stderr, cfg.seed
        ));
        all.extend(records);
    }
    Ok((csv, all))
}

/// Parses `name=v1,v2,...`.
pub fn parse_range(spec: &str) -> Result<(String, Vec<String>)> {
    let (name, values) = spec
        .split_once('=')
        .ok_or_else(|| HarnessError::InvalidParams(format!("range '{spec}' must look like name=v1,v2,...")))?;
    let values: Vec<String> = values
        .split(',')
        .map(str::trim)
        .filter(|v| !v.is_empty())
        .map(String::from)
        .collect();
    if name.is_empty() || values.is_empty() {
        return Err(HarnessError::InvalidParams(format!("empty range in '{spec}'")));
    }
    Ok((name.to_string(), values))
}

fn summary_json(r: &McSummary, expected: f64) -> Value {
    json!({
        "expected": expected,
        "resample_rate": r.resample_rate,
        "resamples": r.resamples,
        "trials": r.trials,
    })
}

fn mc_count(cfg: &ExperimentConfig) -> Result<Vec<Record>> {
    let p = Params::new(cfg, &["kind", "d", "degrees", "series"])?;
    let kind = p.choice("kind", "circle", &["circle", "projective", "system", "mixture"])?;
    let trials = p.trials(2000);
    let s = seed_stream(cfg.seed, 0);
    let (r, expected) = match kind.as_str() {
        "circle" | "projective" => {
            let d: u32 = p.parse("d", 4)?;
            if d == 0 {
                return Err(HarnessError::InvalidParams("d must be at least 1".into()));
            }
            if kind == "circle" {
                let r = mc_expected_count(|st| sample_kostlan(1, 1, d, st), sphere_zero_count, trials, &s)?;
                (r, 2.0 * (d as f64).sqrt())
            } else {
                let r = mc_expected_count(|st| sample_kostlan(1, 1, d, st), projective_zero_count, trials, &s)?;
                (r, (d as f64).sqrt())
            }
        }
        "system" => {
            let degrees: Vec<u32> = p.list("degrees", "2,2")?;
            if degrees.len() != 2 || degrees.contains(&0) {
                return Err(HarnessError::InvalidParams(
                    "system counts need two positive degrees, e.g. degrees=2,1".into(),
                ));
            }
            let (d1, d2) = (degrees[0], degrees[1]);
            let r = mc_expected_count(
                |st| (sample_kostlan(2, 1, d1, st), sample_kostlan(2, 1, d2, st)),
                |(a, b)| system_count_rp2(a, b),
                trials,
                &s,
            )?;
            (r, shub_smale_expectation(&degrees)?)
        }
        _ => {
            let series: Vec<f64> = p.list("series", "0,0.5,0.5")?;
            let expected = mixed_kostlan_expectation(&MixedKostlanSpec::scalar(&series))?;
            let r = mc_expected_count(
                |st| MixedKostlanMap::sample_series(1, &series, st).expect("series validated above"),
                circle_zero_count,
                trials,
                &s,
            )?;
            (r, expected)
        }
    };
    let check = within_4_sigma(r.mean, expected, r.stderr);
    Ok(vec![record(cfg, r.mean, r.stderr, summary_json(&r, expected), Some(check))])
}

fn kacrice_quadrature(cfg: &ExperimentConfig) -> Result<Vec<Record>> {
    let p = Params::new(cfg, &["kernel", "d", "series", "a", "b", "nodes", "level"])?;
    let kernel = p.choice("kernel", "kostlan", &["kostlan", "bargmann-fock", "rescaled", "series"])?;
    let d: u32 = p.parse("d", 4)?;
    let (a, b): (f64, f64) = (p.parse("a", 0.0)?, p.parse("b", 2.0 * PI)?);
    let nodes: usize = p.parse("nodes", 32)?;
    let level: f64 = p.parse("level", 0.0)?;
    if !(b > a) || nodes == 0 {
        return Err(HarnessError::InvalidParams("need a < b and nodes ≥ 1".into()));
    }
    let (variant, density) = match kernel.as_str() {
        "kostlan" => (KernelVariant::Kostlan(d), Some((d as f64).sqrt() / PI)),
        "bargmann-fock" => (KernelVariant::BargmannFock, Some(1.0 / PI)),
        "rescaled" => (KernelVariant::Rescaled(d), None),
        _ => {
            let series: Vec<f64> = p.list("series", "0,0.5,0.5")?;
            let mom = isotropic_moments(&series, 1)?;
            let ratio = mom.sigma1[(0, 0)] / mom.sigma0[(0, 0)];
            (KernelVariant::IsotropicSeries(series), Some(ratio.sqrt() / PI))
        }
    };
    // The closed forms hold for the zero level only.
    let expected = density.filter(|_| level == 0.0).map(|rho| rho * (b - a));
    let spec = KernelSpec::scalar(variant);
    let (v, err) = kac_rice_expectation(&spec, &Domain::Interval(a, b), &[level], nodes, 0, &seed_stream(cfg.seed, 0))?;
    let check = expected.map(|e| (v - e).abs() <= 1e-6 * e.abs());
    Ok(vec![record(cfg, v, err, json!({ "expected": expected }), check)])
}

fn closed_form(cfg: &ExperimentConfig) -> Result<Vec<Record>> {
    let p = Params::new(cfg, &["formula", "degrees", "series", "d"])?;
    let formula = p.choice("formula", "shub-smale", &["shub-smale", "mixture", "circle"])?;
    let value = match formula.as_str() {
        "shub-smale" => shub_smale_expectation(&p.list::<u32>("degrees", "2,2")?)?,
        "mixture" => mixed_kostlan_expectation(&MixedKostlanSpec::scalar(&p.list::<f64>("series", "0,0.5,0.5")?))?,
        _ => 2.0 * (p.parse::<u32>("d", 4)? as f64).sqrt(),
    };
    Ok(vec![record(cfg, value, 0.0, json!({}), None)])
}

fn rescale_distance(cfg: &ExperimentConfig) -> Result<Vec<Record>> {
    let p = Params::new(cfg, &["d", "m", "n", "r"])?;
    let d: u32 = p.parse("d", 100)?;
    let m: usize = p.parse("m", 1)?;
    let n: usize = p.parse("n", 21)?;
    let r: u32 = p.parse("r", 0)?;
    if d < 2 || m == 0 || n < 2 {
        return Err(HarnessError::InvalidParams("need d ≥ 2, m ≥ 1 and n ≥ 2".into()));
    }
    let grid = cube_grid(m, -1.0, 1.0, n);
    let bf = KernelSpec::scalar(KernelVariant::BargmannFock);
    let dist = |d: u32| kernel_sup_distance(&KernelSpec::scalar(KernelVariant::Rescaled(d)), &bf, &grid, r);
    let value = dist(d)?;
    let half = dist(d / 2)?;
    let check = value < half && (d < 100 || m != 1 || r != 0 || value <= 0.03);
    Ok(vec![record(cfg, value, 0.0, json!({ "distance_at_half_degree": half }), Some(check))])
}

/// Components counted at `h` and `h/2`; `None` if they differ or either
/// grid is not transversal.
fn stable_components<F: ScalarField + ?Sized>(f: &F, rect: Rect, h: f64) -> Result<Option<usize>> {
    let a = marching_squares_components(&sample_grid(f, rect, h)?);
    let b = marching_squares_components(&sample_grid(f, rect, h / 2.0)?);
    Ok((a.transversal && b.transversal && a.components == b.components).then_some(a.components))
}

fn nodal_betti(cfg: &ExperimentConfig) -> Result<Vec<Record>> {
    let p = Params::new(cfg, &["field", "d", "radius", "box", "h"])?;
    let field = p.choice("field", "kostlan", &["kostlan", "circle"])?;
    let half = positive("box", p.parse("box", 1.0)?)?;
    let h = positive("h", p.parse("h", 0.01)?)?;
    let rect = Rect::square(half);
    let fields: Vec<Box<dyn ScalarField>> = match field.as_str() {
        "circle" => {
            let r = positive("radius", p.parse("radius", 0.21f64.sqrt())?)?;
            vec![Box::new(move |x: f64, y: f64| x * x + y * y - r * r)]
        }
        _ => {
            let d: u32 = p.parse("d", 3)?;
            let n = p.trials(20);
            let base = seed_stream(cfg.seed, 0);
            (0..n as u64)
                .map(|i| -> Result<Box<dyn ScalarField>> {
                    let form = sample_kostlan(2, 1, d, &mut base.derive(i));
                    Ok(Box::new(PlaneCurve::from_form(&form)?))
                })
                .collect::<Result<_>>()?
        }
    };
    let outcomes: Vec<Result<Option<(usize, usize, usize, usize)>>> = fields
        .par_iter()
        .map(|f| {
            if stable_components(f.as_ref(), rect, h)?.is_none() {
                return Ok(None);
            }
            let g = sample_grid(f.as_ref(), rect, h)?;
            let c = marching_squares_components(&g);
            let (s0, s1) = betti_sublevel(&g);
            match critical_count_on_curve(&c, [0.6, 0.8]) {
                Ok(crit) => Ok(Some((c.components, s0, s1, crit))),
                Err(rglab::Error::TieUnresolved) => Ok(None),
                Err(e) => Err(e.into()),
            }
        })
        .collect();
    let mut stats = rglab::stats::Welford::new();
    let (mut skipped, mut morse_ok, mut sub0, mut sub1) = (0usize, true, 0usize, 0usize);
    for o in outcomes {
        match o? {
            None => skipped += 1,
            Some((b0, s0, s1, crit)) => {
                stats.push(b0 as f64);
                sub0 += s0;
                sub1 += s1;
                morse_ok &= 2 * b0 <= crit;
            }
        }
    }
    let used = stats.count() as usize;
    if used == 0 {
        return Err(HarnessError::InvalidParams(
            "every instance was non-transversal or grid-unstable; change h or the seed".into(),
        ));
    }
    let stderr = if used > 1 { stats.stderr() } else { 0.0 };
    let extra = json!({
        "instances": used,
        "skipped": skipped,
        "mean_sublevel_b0": sub0 as f64 / used as f64,
        "mean_sublevel_b1": sub1 as f64 / used as f64,
        "morse_bound_holds": morse_ok,
    });
    Ok(vec![record(cfg, stats.mean(), stderr, extra, Some(morse_ok))])
}

fn kappa(cfg: &ExperimentConfig) -> Result<Vec<Record>> {
    let p = Params::new(cfg, &["field", "rho", "radius", "d", "box", "h"])?;
    let field = p.choice("field", "reach", &["reach", "kostlan"])?;
    let h = positive("h", p.parse("h", 1e-3)?)?;
    let (report, bound) = match field.as_str() {
        "reach" => {
            let rho = positive("rho", p.parse("rho", 1.0)?)?;
            let radius = positive("radius", p.parse("radius", 1.0)?)?;
            let half = positive("box", p.parse("box", 3.0)?)?;
            let eq = reach_equation(circle_distance(radius), rho)?;
            let rect = Rect::square(half);
            let region = Region::Disk { cx: 0.0, cy: 0.0, r: half };
            let b = boundary_values(&eq, rect, region, 4000);
            let rep = condition_report_field(&eq, rect, h, region, &b)?;
            (rep, Some(2.0 * (1.0 + 1.0 / rho.min(radius)) * (1.0 + 5.0 * h)))
        }
        _ => {
            let d: u32 = p.parse("d", 3)?;
            let half = positive("box", p.parse("box", 1.0)?)?;
            let f = PlaneCurve::from_form(&sample_kostlan(2, 1, d, &mut seed_stream(cfg.seed, 0)))?;
            let rect = Rect::square(half);
            let g = sample_grid(&f, rect, h)?;
            let b = boundary_values(&f, rect, Region::Full, 4 * g.nx);
            (condition_report(&g, Region::Full, &b)?, None)
        }
    };
    let extra = json!({
        "kappa0": report.kappa0,
        "nu0": report.nu0,
        "nu1": report.nu1,
        "margin": report.margin,
        "delta": report.delta,
        "bound": bound,
    });
    Ok(vec![record(cfg, report.kappa1, 0.0, extra, bound.map(|b| report.kappa1 <= b))])
}

fn semicontinuity(cfg: &ExperimentConfig) -> Result<Vec<Record>> {
    let p = Params::new(cfg, &["max-degree", "h", "box", "terms"])?;
    let max_degree: u32 = p.parse("max-degree", 6)?;
    let h = positive("h", p.parse("h", 0.01)?)?;
    let half = positive("box", p.parse("box", 1.0)?)?;
    let terms: usize = p.parse("terms", 4)?;
    if max_degree == 0 {
        return Err(HarnessError::InvalidParams("max-degree must be at least 1".into()));
    }
    let rect = Rect::square(half);
    let trials = p.trials(200);
    let base = seed_stream(cfg.seed, 0);
    let verdicts: Vec<Result<Option<bool>>> = (0..trials as u64)
        .into_par_iter()
        .map(|i| {
            let mut s = base.derive(i);
            let d = 1 + (i % max_degree as u64) as u32;
            let f = PlaneCurve::from_form(&sample_kostlan(2, 1, d, &mut s))?;
            let mut margin = f64::INFINITY;
            for hh in [h, h / 2.0] {
                let g = sample_grid(&f, rect, hh)?;
                let b = boundary_values(&f, rect, Region::Full, 4 * g.nx);
                let rep = condition_report(&g, Region::Full, &b)?;
                margin = margin.min(rep.margin).min(rep.delta);
            }
            let g = TrigSum::random(terms, (0.1 + 0.8 * s.uniform()) * margin, 3.0, &mut s);
            match (semicontinuity_check(&f, &g, rect, h), semicontinuity_check(&f, &g, rect, h / 2.0)) {
                (Ok(a), Ok(b)) if a.b0_f == b.b0_f && a.b0_perturbed == b.b0_perturbed => Ok(Some(a.pass)),
                (Ok(_), Ok(_))
                | (Err(rglab::Error::NonTransversalInstance), _)
                | (_, Err(rglab::Error::NonTransversalInstance)) => Ok(None),
                (Err(e), _) | (_, Err(e)) => Err(e.into()),
            }
        })
        .collect();
    let (mut valid, mut passed) = (0usize, 0usize);
    for v in verdicts {
        if let Some(ok) = v? {
            valid += 1;
            passed += usize::from(ok);
        }
    }
    let frac = if valid > 0 { passed as f64 / valid as f64 } else { f64::NAN };
    let stderr = if valid > 0 { (frac * (1.0 - frac) / valid as f64).sqrt() } else { f64::NAN };
    let extra = json!({ "valid": valid, "skipped": trials - valid, "failures": valid - passed });
    Ok(vec![record(cfg, frac, stderr, extra, Some(valid > 0 && passed == valid))])
}

fn sharp(cfg: &ExperimentConfig) -> Result<Vec<Record>> {
    let p = Params::new(cfg, &["ks", "h", "kappa-h"])?;
    let ks: Vec<f64> = p.list("ks", "2,4,8")?;
    let h = positive("h", p.parse("h", 2.0 / 750.0)?)?;
    let kh = positive("kappa-h", p.parse("kappa-h", 1e-3)?)?;
    let unit = Rect::square(1.0);
    let kappa1 = |f: &dyn ScalarField, h: f64| -> Result<f64> {
        let b = boundary_values(f, unit, Region::Full, 4000);
        Ok(condition_report_field(f, unit, h, Region::Full, &b)?.kappa1)
    };
    let base = RadialBump::default();
    let k_base = kappa1(&base, kh / 8.0)?;
    let mut out = Vec::new();
    for &k in &ks {
        positive("k", k)?;
        let centers = lattice_centers(k);
        let fk = sharp_family(base, k, &centers)?;
        let b0 = stable_components(&fk, unit, h)?;
        let kk = kappa1(&fk, kh)?;
        let b0v = b0.map_or(f64::NAN, |b| b as f64);
        let extra = json!({
            "k": k,
            "centers": centers.len(),
            "grid_stable": b0.is_some(),
            "kappa1": kk,
            "kappa1_bound": k * k_base,
            "b0_over_kappa1_sq": b0v / (kk * kk),
        });
        let check = b0 == Some(centers.len()) && kk <= k * k_base;
        out.push(record(cfg, b0v, 0.0, extra, Some(check)));
    }
    Ok(out)
}

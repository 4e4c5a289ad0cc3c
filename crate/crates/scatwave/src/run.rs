//! Run configuration, task pipelines, manifests and plot scripts.

use crate::error::{Error, Result};
use crate::flow::{
    check_nontrapping, integrate_bicharacteristic, radial_linearization, sample_characteristic_start,
    BCotangentPoint, FlowBudget,
};
use crate::geometry::{MetricDocument, PerturbationClass, Profile, ScatteringMetricSpec};
use crate::mellin::{fit_tail, match_resonances, ExpansionFit, MatchReport, TailFitOptions, TailSamples};
use crate::resonance::{exact_hyperbolic_resonances, perturbation_scan, resonances_for, ResonanceSet, Strip};
use crate::wave::{
    assemble_mode_problem, evolve_characteristic, extract_radiation_field, solve_on_blowup_chart, Chart,
    GridSpec, RadiationField, SourceSpec,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

pub const ARTIFACT_VERSION: &str = env!("CARGO_PKG_VERSION");
pub const MANIFEST_NAME: &str = "manifest.json";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    Flow,
    Solve,
    Resonances,
    Tails,
    Verify,
    Scan,
}

impl Task {
    pub fn name(&self) -> &'static str {
        match self {
            Task::Flow => "flow",
            Task::Solve => "solve",
            Task::Resonances => "resonances",
            Task::Tails => "tails",
            Task::Verify => "verify",
            Task::Scan => "scan",
        }
    }
}

impl std::str::FromStr for Task {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "flow" => Task::Flow,
            "solve" => Task::Solve,
            "resonances" => Task::Resonances,
            "tails" => Task::Tails,
            "verify" => Task::Verify,
            "scan" => Task::Scan,
            _ => return Err(Error::Config(format!("unknown task '{s}'"))),
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FlowConfig {
    pub samples: usize,
    pub budget: FlowBudget,
    /// Trajectories written out for plotting.
    pub trajectories: usize,
}

impl Default for FlowConfig {
    fn default() -> Self {
        FlowConfig {
            samples: 200,
            budget: FlowBudget::default(),
            trajectories: 4,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScanFamily {
    Potential,
    Conformal,
    NormalGaussian,
}

impl ScanFamily {
    pub fn profile(&self, eps: f64) -> Profile {
        match self {
            ScanFamily::Potential => Profile::Potential { eps },
            ScanFamily::Conformal => Profile::Conformal { eps },
            ScanFamily::NormalGaussian => Profile::NormalGaussian { eps },
        }
    }

    pub fn class(&self) -> PerturbationClass {
        match self {
            ScanFamily::Potential => PerturbationClass::NormallyShortRange,
            _ => PerturbationClass::NormallyVeryShortRange,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScanConfig {
    pub family: ScanFamily,
    pub eps: Vec<f64>,
    /// Also fit a tail exponent at every `eps`.
    #[serde(default)]
    pub tails: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub task: Task,
    /// Inline metric; exclusive with `metric_file`.
    #[serde(default)]
    pub metric: Option<MetricDocument>,
    #[serde(default)]
    pub metric_file: Option<PathBuf>,
    #[serde(default = "default_ells")]
    pub ells: Vec<usize>,
    /// Collocation size of the cap pencil.
    #[serde(default = "default_size")]
    pub size: usize,
    #[serde(default = "default_strip")]
    pub strip: Strip,
    /// Mode used by the wave solver.
    #[serde(default)]
    pub ell: usize,
    #[serde(default = "default_h")]
    pub h: f64,
    #[serde(default)]
    pub source: SourceSpec,
    #[serde(default = "default_chart")]
    pub chart: Chart,
    /// Tail window `[s_min, s_max]`.
    #[serde(default = "default_window")]
    pub window: [f64; 2],
    #[serde(default = "default_ratio")]
    pub ratio: f64,
    #[serde(default)]
    pub tail: TailFitOptions,
    /// Tolerance for `match_resonances`.
    #[serde(default = "default_match_tol")]
    pub match_tol: f64,
    /// Expected leading tail exponent and tolerance, checked when present.
    #[serde(default)]
    pub expect_exponent: Option<[f64; 2]>,
    #[serde(default)]
    pub flow: FlowConfig,
    #[serde(default)]
    pub scan: Option<ScanConfig>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub out: Option<PathBuf>,
}

fn default_ells() -> Vec<usize> {
    vec![0, 1, 2]
}
fn default_size() -> usize {
    64
}
fn default_strip() -> Strip {
    Strip::new(-4.0, 0.0, 2.0)
}
fn default_h() -> f64 {
    0.05
}
fn default_chart() -> Chart {
    Chart::Characteristic
}
fn default_window() -> [f64; 2] {
    [1e2, 1e4]
}
fn default_ratio() -> f64 {
    1.05
}
fn default_match_tol() -> f64 {
    0.1
}

impl RunConfig {
    pub fn new(task: Task, metric: MetricDocument) -> Self {
        let mut c: RunConfig = serde_json::from_value(serde_json::json!({ "task": task })).expect("defaults");
        c.metric = Some(metric);
        c
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut c = Self::from_json(&text)?;
        // relative metric files are resolved against the config location
        if let (Some(f), Some(dir)) = (&c.metric_file, path.parent()) {
            if f.is_relative() {
                c.metric_file = Some(dir.join(f));
            }
        }
        Ok(c)
    }

    pub fn metric_document(&self) -> Result<MetricDocument> {
        match (&self.metric, &self.metric_file) {
            (Some(m), None) => Ok(m.clone()),
            (None, Some(f)) => {
                let text = fs::read_to_string(f)
                    .map_err(|e| Error::Config(format!("metric file {}: {e}", f.display())))?;
                serde_json::from_str(&text).map_err(|e| Error::Config(format!("metric file {}: {e}", f.display())))
            }
            (Some(_), Some(_)) => Err(Error::Config("give either metric or metric_file, not both".into())),
            (None, None) => Err(Error::Config("no metric given".into())),
        }
    }

    /// Checks parameter ranges and builds the metric; does no numerics.
    pub fn validate(&self) -> Result<ScatteringMetricSpec> {
        let doc = self.metric_document()?;
        let spec = ScatteringMetricSpec::from_document(&doc)?;
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.ells.is_empty() {
            return bad("ells is empty");
        }
        if self.size < 8 {
            return bad("size must be at least 8");
        }
        let s = &self.strip;
        if !(s.im_min < s.im_max) || !(s.re_max > 0.0) {
            return bad("strip needs im_min < im_max and re_max > 0");
        }
        if !(self.h > 0.0 && self.h <= 1.0) {
            return bad("h must lie in (0, 1]");
        }
        if !(self.window[0] > 0.0 && self.window[1] > self.window[0]) {
            return bad("window needs 0 < s_min < s_max");
        }
        if !(self.ratio > 1.0) {
            return bad("ratio must exceed 1");
        }
        if !(self.match_tol > 0.0) {
            return bad("match_tol must be positive");
        }
        if self.task == Task::Flow && self.flow.samples == 0 {
            return bad("flow.samples must be positive");
        }
        if self.task == Task::Scan {
            match &self.scan {
                Some(sc) if !sc.eps.is_empty() => {}
                _ => return bad("scan task needs scan.eps"),
            }
        }
        Ok(spec)
    }

    /// SHA-256 of the canonical JSON with the output directory removed.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.out = None;
        let bytes = serde_json::to_vec(&c).expect("config serialises");
        let d = Sha256::digest(&bytes);
        d.iter().map(|b| format!("{b:02x}")).collect()
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct StageTiming {
    pub stage: String,
    pub seconds: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CheckResult {
    pub name: String,
    pub pass: bool,
    pub detail: String,
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct RunSummary {
    pub n: usize,
    pub eps: Option<f64>,
    pub exponent: Option<f64>,
    pub leading_resonance: Option<[f64; 2]>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunManifest {
    pub artifact_version: String,
    pub config_hash: String,
    pub task: Task,
    pub seed: u64,
    pub timings: Vec<StageTiming>,
    pub outputs: Vec<String>,
    pub checks: Vec<CheckResult>,
    pub pass: bool,
    pub failed_stage: Option<String>,
    pub error: Option<String>,
    pub summary: RunSummary,
}

impl RunManifest {
    pub fn load(path: &Path) -> Result<Self> {
        Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
    }
}

struct Run {
    dir: PathBuf,
    outputs: Vec<String>,
    timings: Vec<StageTiming>,
    checks: Vec<CheckResult>,
    summary: RunSummary,
}

impl Run {
    fn write(&mut self, name: &str, contents: &str) -> Result<()> {
        fs::write(self.dir.join(name), contents)?;
        self.outputs.push(name.to_string());
        Ok(())
    }

    fn write_json<T: Serialize>(&mut self, name: &str, v: &T) -> Result<()> {
        let text = serde_json::to_string_pretty(v)?;
        self.write(name, &(text + "\n"))
    }

    fn stage<T>(&mut self, name: &str, f: impl FnOnce(&mut Self) -> Result<T>) -> Result<T> {
        let t = Instant::now();
        let r = f(self).map_err(|e| e.in_stage(name));
        self.timings.push(StageTiming {
            stage: name.to_string(),
            seconds: t.elapsed().as_secs_f64(),
        });
        r
    }

    fn check(&mut self, name: &str, pass: bool, detail: String) {
        self.checks.push(CheckResult {
            name: name.to_string(),
            pass,
            detail,
        });
    }
}

/// Runs the configured task in `config.out` (default `out/<task>`).
///
/// The manifest is written last, through a temporary file and a rename. A
/// stage error still writes a failed manifest before it is returned.
pub fn run(config: &RunConfig) -> Result<RunManifest> {
    let spec = config.validate()?;
    let dir = config
        .out
        .clone()
        .unwrap_or_else(|| PathBuf::from("out").join(config.task.name()));
    fs::create_dir_all(&dir)?;
    let _ = fs::remove_file(dir.join(MANIFEST_NAME));
    let mut r = Run {
        dir: dir.clone(),
        outputs: Vec::new(),
        timings: Vec::new(),
        checks: Vec::new(),
        summary: RunSummary {
            n: spec.n(),
            eps: spec.family().and_then(|f| f.eps()),
            ..Default::default()
        },
    };
    let mut echo = config.clone();
    echo.out = None;
    r.write_json("config.json", &echo)?;
    let res = match config.task {
        Task::Flow => task_flow(&mut r, config, &spec),
        Task::Solve => task_solve(&mut r, config, &spec).map(|_| ()),
        Task::Resonances => task_resonances(&mut r, config, &spec).map(|_| ()),
        Task::Tails => task_tails(&mut r, config, &spec).map(|_| ()),
        Task::Verify => task_verify(&mut r, config, &spec),
        Task::Scan => task_scan(&mut r, config),
    };
    let (failed_stage, error) = match &res {
        Ok(()) => (None, None),
        Err(e) => (
            match e {
                Error::Stage { stage, .. } => Some(stage.clone()),
                _ => None,
            },
            Some(e.to_string()),
        ),
    };
    let manifest = RunManifest {
        artifact_version: ARTIFACT_VERSION.to_string(),
        config_hash: config.hash(),
        task: config.task,
        seed: config.seed,
        timings: r.timings,
        outputs: r.outputs,
        pass: res.is_ok() && r.checks.iter().all(|c| c.pass),
        checks: r.checks,
        failed_stage,
        error,
        summary: r.summary,
    };
    let tmp = dir.join(format!("{MANIFEST_NAME}.tmp"));
    fs::write(&tmp, serde_json::to_string_pretty(&manifest)? + "\n")?;
    fs::rename(&tmp, dir.join(MANIFEST_NAME))?;
    res.map(|_| manifest)
}

fn task_flow(r: &mut Run, c: &RunConfig, spec: &ScatteringMetricSpec) -> Result<()> {
    let n = spec.n();
    let report = r.stage("nontrapping", |_| check_nontrapping(spec, c.flow.samples, c.seed, &c.flow.budget))?;
    r.write_json("nontrapping.json", &report)?;
    r.check(
        "nontrapping",
        report.pass,
        format!("{} samples, {} failures", report.samples, report.failures.len()),
    );
    r.check(
        "lambda_drift",
        report.max_drift < 1e-6,
        format!("max drift {:.3e} (limit 1e-6)", report.max_drift),
    );
    let spectrum = r.stage("radial", |_| radial_linearization(spec, &BCotangentPoint::radial_point(n, 1.0)))?;
    r.write_json("radial_spectrum.json", &spectrum)?;
    let mult = spectrum.multiplicities();
    let want = if n > 2 { vec![1, n + 1, n - 2] } else { vec![1, n + 1] };
    r.check("radial_multiplicities", mult == want, format!("{mult:?}, expected {want:?}"));
    let mut rng = ChaCha8Rng::seed_from_u64(c.seed);
    let mut k = 0;
    let mut tries = 0;
    while k < c.flow.trajectories && tries < 100 * c.flow.trajectories.max(1) {
        tries += 1;
        let Some(start) = sample_characteristic_start(spec, &mut rng, 0.05) else {
            continue;
        };
        let tr = r.stage("trajectory", |_| integrate_bicharacteristic(spec, &start, 1.0, &c.flow.budget))?;
        r.write(&format!("trajectory_{k}.csv"), &tr.to_csv())?;
        k += 1;
    }
    if k > 0 {
        r.write("trajectories.gp", &trajectory_script(k))?;
    }
    Ok(())
}

/// Radiation field for the configured mode and chart.
pub fn radiation_field(c: &RunConfig, spec: &ScatteringMetricSpec) -> Result<RadiationField> {
    let grid = GridSpec::for_source(&c.source, c.h);
    let prob = assemble_mode_problem(spec, c.ell, c.source.clone(), grid)?;
    let field = match c.chart {
        Chart::Characteristic => evolve_characteristic(&prob)?,
        Chart::Blowup => solve_on_blowup_chart(&prob)?,
    };
    extract_radiation_field(&field)
}

fn task_solve(r: &mut Run, c: &RunConfig, spec: &ScatteringMetricSpec) -> Result<RadiationField> {
    let rf = r.stage("solve", |_| radiation_field(c, spec))?;
    r.write("radiation.csv", &rf.to_csv())?;
    r.write("radiation.gp", &tail_script("radiation.csv", None))?;
    let finite = rf.r.iter().all(|x| x.is_finite());
    r.check("radiation_finite", finite, format!("{} samples", rf.q.len()));
    Ok(rf)
}

fn task_resonances(r: &mut Run, c: &RunConfig, spec: &ScatteringMetricSpec) -> Result<ResonanceSet> {
    let set = r.stage("resonances", |_| resonances_for(spec, &c.ells, c.size, c.strip))?;
    r.write_json("resonances.json", &set.to_json())?;
    r.write("resonances.csv", &resonance_csv(&set))?;
    r.write("resonances.gp", &strip_script("resonances.csv", &c.strip))?;
    r.summary.leading_resonance = set.leading().map(|x| [x.sigma.re, x.sigma.im]);
    if spec.is_exact_minkowski() {
        let exact = exact_hyperbolic_resonances(spec.n(), c.strip);
        let (ok, detail) = compare_sets(&set, &exact, 1e-4);
        r.check("exact_lattice", ok, detail);
    }
    Ok(set)
}

fn compare_sets(got: &ResonanceSet, want: &ResonanceSet, tol: f64) -> (bool, String) {
    let g = distinct(&got.sigmas(), 1e-6);
    let w = want.sigmas();
    let mut worst: f64 = 0.0;
    let mut ok = g.len() == w.len();
    for z in &w {
        let d = g.iter().map(|x| (x - z).norm()).fold(f64::INFINITY, f64::min);
        worst = worst.max(d);
        ok &= d < tol;
    }
    (
        ok,
        format!("{} found, {} expected, worst error {:.3e} (limit {tol:e})", g.len(), w.len(), if w.is_empty() { 0.0 } else { worst }),
    )
}

/// Distinct values up to `tol`.
pub fn distinct(z: &[num_complex::Complex64], tol: f64) -> Vec<num_complex::Complex64> {
    let mut out: Vec<num_complex::Complex64> = Vec::new();
    for x in z {
        if !out.iter().any(|y| (y - x).norm() < tol) {
            out.push(*x);
        }
    }
    out
}

fn resonance_csv(set: &ResonanceSet) -> String {
    let mut s = String::from("re,im,ell,multiplicity,residual,kind\n");
    for (kind, list) in [("resonance", &set.resonances), ("extraneous", &set.extraneous)] {
        for x in list {
            s.push_str(&format!(
                "{:.12e},{:.12e},{},{},{:.3e},{kind}\n",
                x.sigma.re,
                x.sigma.im,
                x.ell.map(|l| l.to_string()).unwrap_or_default(),
                x.multiplicity,
                x.residual
            ));
        }
    }
    s
}

/// Tail fit of a radiation field over the configured window.
pub fn tail_fit(c: &RunConfig, rf: &RadiationField) -> Result<ExpansionFit> {
    let samples = TailSamples::from_radiation(rf, c.window[0], c.window[1], c.ratio)?;
    fit_tail(&samples, &c.tail)
}

fn task_tails(r: &mut Run, c: &RunConfig, spec: &ScatteringMetricSpec) -> Result<ExpansionFit> {
    let rf = task_solve(r, c, spec)?;
    let fit = r.stage("fit", |_| tail_fit(c, &rf))?;
    r.write_json("tail_fit.json", &fit.to_json())?;
    let mut s = String::from("s,local_slope\n");
    for (x, p) in &fit.local_slopes {
        s.push_str(&format!("{x:.12e},{p:.12e}\n"));
    }
    r.write("local_slopes.csv", &s)?;
    r.write("tail.gp", &tail_script("radiation.csv", Some(c.window)))?;
    r.summary.exponent = fit.leading_exponent();
    if let Some([p, tol]) = c.expect_exponent {
        let got = fit.leading_exponent();
        r.check(
            "expected_exponent",
            got.map(|g| (g - p).abs() <= tol).unwrap_or(false),
            format!("fitted {got:?}, expected {p} +- {tol}"),
        );
    }
    Ok(fit)
}

/// Outcome of the end-to-end tail/resonance comparison.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct VerifyOutcome {
    pub pass: bool,
    pub detail: String,
    pub report: MatchReport,
}

/// Passes when every fitted exponent matches a resonance, or when no tail
/// is seen and no resonance lies in the strip.
pub fn verify_match(fit: &ExpansionFit, set: &ResonanceSet, tol: f64) -> VerifyOutcome {
    let report = match_resonances(fit, set, tol);
    let (pass, detail) = if fit.below_noise {
        (
            set.is_empty(),
            format!("no tail above noise; {} resonances in strip", set.len()),
        )
    } else {
        (
            !report.vacuous && report.all_cap_matched(),
            format!(
                "exponents {:?}; matched {:?}; light cone {:?}; unmatched {:?}",
                fit.exponents(),
                report.pairs.iter().filter(|p| !p.light_cone).map(|p| (p.p, p.resonance.im)).collect::<Vec<_>>(),
                report.pairs.iter().filter(|p| p.light_cone).map(|p| (p.p, p.resonance.im)).collect::<Vec<_>>(),
                report.unmatched
            ),
        )
    };
    VerifyOutcome { pass, detail, report }
}

fn task_verify(r: &mut Run, c: &RunConfig, spec: &ScatteringMetricSpec) -> Result<()> {
    let set = task_resonances(r, c, spec)?;
    let fit = task_tails(r, c, spec)?;
    let out = verify_match(&fit, &set, c.match_tol);
    r.write_json("match.json", &out)?;
    r.check("tail_matches_resonances", out.pass, out.detail);
    Ok(())
}

fn task_scan(r: &mut Run, c: &RunConfig) -> Result<()> {
    let sc = c.scan.clone().expect("validated");
    let doc = c.metric_document()?;
    let n = doc.n;
    let family = |e: f64| ScatteringMetricSpec::unchecked(n, sc.family.class(), &sc.family.profile(e));
    let table = r.stage("scan", |_| perturbation_scan(family, &sc.eps, &c.ells, c.size, c.strip))?;
    r.write("scan.csv", &table.to_csv())?;
    r.write("scan.gp", &scan_script())?;
    let mut rows = String::from("eps,leading_re,leading_im,exponent\n");
    let mut manifests = Vec::new();
    for (i, &e) in sc.eps.iter().enumerate() {
        let lead = table.leading_at(i).map(|(_, z)| z);
        let exponent = if sc.tails {
            let spec = family(e)?;
            let rf = r.stage("scan_solve", |_| radiation_field(c, &spec))?;
            r.stage("scan_fit", |_| tail_fit(c, &rf))?.leading_exponent()
        } else {
            None
        };
        rows.push_str(&format!(
            "{e:.6e},{},{},{}\n",
            opt(lead.map(|z| z.re)),
            opt(lead.map(|z| z.im)),
            opt(exponent)
        ));
        manifests.push(RunSummary {
            n,
            eps: Some(e),
            exponent,
            leading_resonance: lead.map(|z| [z.re, z.im]),
        });
    }
    r.write("scan_leading.csv", &rows)?;
    if let Some(last) = manifests.last() {
        r.summary = last.clone();
    }
    Ok(())
}

fn opt(x: Option<f64>) -> String {
    x.map(|v| format!("{v:.12e}")).unwrap_or_default()
}

fn tail_script(csv: &str, window: Option<[f64; 2]>) -> String {
    let range = window
        .map(|w| format!("set xrange [{:e}:{:e}]\n", w[0], w[1]))
        .unwrap_or_default();
    format!(
        "set datafile separator ','\nset logscale xy\nset xlabel 's'\nset ylabel '|R(s)|'\n{range}\
         plot '{csv}' using 1:(abs($2)) skip 1 with lines title 'radiation field'\n"
    )
}

fn strip_script(csv: &str, strip: &Strip) -> String {
    format!(
        "set datafile separator ','\nset xlabel 'Re sigma'\nset ylabel 'Im sigma'\n\
         set xrange [{:e}:{:e}]\nset yrange [{:e}:{:e}]\n\
         plot '{csv}' using 1:($6 eq 'resonance' ? $2 : 1/0) skip 1 with points pt 7 title 'resonances', \\\n\
         \x20    '{csv}' using 1:($6 eq 'extraneous' ? $2 : 1/0) skip 1 with points pt 6 title 'light cone'\n",
        -strip.re_max, strip.re_max, strip.im_min, strip.im_max
    )
}

fn trajectory_script(k: usize) -> String {
    let mut s = String::from(
        "set datafile separator ','\nset xlabel 'theta'\nset ylabel 'rho'\nplot ",
    );
    for i in 0..k {
        if i > 0 {
            s.push_str(", \\\n     ");
        }
        s.push_str(&format!("'trajectory_{i}.csv' using 3:2 skip 1 with lines title 'trajectory {i}'"));
    }
    s.push('\n');
    s
}

fn scan_script() -> String {
    "set datafile separator ','\nset xlabel 'eps'\nset ylabel 'Im sigma'\n\
     plot 'scan.csv' using 1:5 skip 1 with points pt 7 title 'branches'\n"
        .to_string()
}

/// Aggregate table over several runs.
#[derive(Clone, Debug)]
pub struct Report {
    pub rows: Vec<RunSummary>,
    pub passes: Vec<bool>,
    pub csv: String,
    pub script: String,
    pub warnings: Vec<String>,
}

/// One row per manifest, sorted by `(eps, n)`.
pub fn emit_report(manifests: &[RunManifest]) -> Report {
    let mut warnings = Vec::new();
    if let Some(first) = manifests.first() {
        if manifests.iter().any(|m| m.artifact_version != first.artifact_version) {
            warnings.push("manifests come from different artifact versions".to_string());
        }
    }
    let mut rows: Vec<(RunSummary, bool)> = manifests.iter().map(|m| (m.summary.clone(), m.pass)).collect();
    rows.sort_by(|a, b| {
        let ea = a.0.eps.unwrap_or(0.0);
        let eb = b.0.eps.unwrap_or(0.0);
        ea.partial_cmp(&eb).unwrap_or(std::cmp::Ordering::Equal).then(a.0.n.cmp(&b.0.n))
    });
    let mut csv = String::from("n,eps,exponent,leading_re,leading_im,pass\n");
    for (s, pass) in &rows {
        csv.push_str(&format!(
            "{},{},{},{},{},{}\n",
            s.n,
            s.eps.map(|e| format!("{e:.6e}")).unwrap_or_default(),
            opt(s.exponent),
            opt(s.leading_resonance.map(|z| z[0])),
            opt(s.leading_resonance.map(|z| z[1])),
            pass
        ));
    }
    let script = "set datafile separator ','\nset xlabel 'eps'\nset ylabel 'exponent'\n\
                  plot 'report.csv' using 2:3 skip 1 with linespoints title 'tail exponent', \\\n\
                  \x20    'report.csv' using 2:(1-$5) skip 1 with points title '1 - Im sigma'\n"
        .to_string();
    Report {
        passes: rows.iter().map(|r| r.1).collect(),
        rows: rows.into_iter().map(|r| r.0).collect(),
        csv,
        script,
        warnings,
    }
}

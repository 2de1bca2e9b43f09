//! Scenario check execution and machine-readable reports.
//!
//! [`run`] executes a scenario's checks and collects one record per check.
//! A `validate` record mirrors the family audit itself, so a family that
//! fails its audit produces a fail record (and a nonzero process exit)
//! even when the scenario declares the failure as expected; the
//! declaration is tracked separately as `as_expected`. Every other check
//! kind is an assertion: the record passes when the outcome and all
//! declared expectations hold, including expected rejections.
//!
//! Reports are deterministic: given the same scenario, tolerance, seed,
//! and completeness mode, the serialized report is byte-identical.

use std::fmt;

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::Error;
use crate::family::{
    decompose, probabilities, validate_family, CompletenessMode, FamilyReport,
};
use crate::history::{inner, physically_equal, weight, HistoryState};
use crate::linalg::{C64, CKet};
use crate::marking::{
    branch_map, sequential_measure, simulate, MeasurementPlan, OutcomeNode,
};
use crate::observables::{
    measure_distribution, observable_family, ProductHistoryOperator, SpectralObservable,
};
use crate::scenario::schema::{
    BranchMapCheck, CheckSpec, Component, DecomposeCheck, EigenhistoriesCheck, Entry,
    ExpectOutcome, InnerCheck, KetSpec, ModeSpec, ProbabilitiesCheck, SequentialCheck,
    SimulateMarkingCheck, ValidateCheck, WeightCheck,
};
use crate::scenario::{expr, Scenario, ScenarioOperator};
use crate::{DEFAULT_SEED, DEFAULT_TOL};

/// Which checks a run covers: one check kind, or all of them.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Command {
    Validate,
    Weight,
    Inner,
    Decompose,
    Probabilities,
    Eigenhistories,
    SimulateMarking,
    BranchMap,
    Sequential,
    ReportAll,
}

impl Command {
    pub const ALL: [Command; 10] = [
        Command::Validate,
        Command::Weight,
        Command::Inner,
        Command::Decompose,
        Command::Probabilities,
        Command::Eigenhistories,
        Command::SimulateMarking,
        Command::BranchMap,
        Command::Sequential,
        Command::ReportAll,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Command::Validate => "validate",
            Command::Weight => "weight",
            Command::Inner => "inner",
            Command::Decompose => "decompose",
            Command::Probabilities => "probabilities",
            Command::Eigenhistories => "eigenhistories",
            Command::SimulateMarking => "simulate-marking",
            Command::BranchMap => "branch-map",
            Command::Sequential => "sequential",
            Command::ReportAll => "report-all",
        }
    }

    pub fn parse(s: &str) -> Option<Command> {
        Command::ALL.into_iter().find(|c| c.name() == s)
    }
}

impl fmt::Display for Command {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Which variant tags a run includes. Untagged checks always run.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum VariantFilter {
    All,
    Only(String),
}

impl VariantFilter {
    pub fn parse(s: &str) -> VariantFilter {
        if s == "all" {
            VariantFilter::All
        } else {
            VariantFilter::Only(s.to_string())
        }
    }

    pub fn includes(&self, variant: Option<&str>) -> bool {
        match self {
            VariantFilter::All => true,
            VariantFilter::Only(v) => variant.is_none_or(|x| x == v),
        }
    }
}

impl fmt::Display for VariantFilter {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            VariantFilter::All => f.write_str("all"),
            VariantFilter::Only(v) => f.write_str(v),
        }
    }
}

/// Run-wide settings. Per-check `tol` and `completeness` fields override
/// the run-wide values for that check.
#[derive(Clone, Debug)]
pub struct RunOptions {
    pub tol: f64,
    pub seed: u64,
    pub completeness: CompletenessMode,
    pub variant: VariantFilter,
}

impl Default for RunOptions {
    fn default() -> Self {
        RunOptions {
            tol: DEFAULT_TOL,
            seed: DEFAULT_SEED,
            completeness: CompletenessMode::Exact,
            variant: VariantFilter::All,
        }
    }
}

/// Report schema identifier.
pub const REPORT_SCHEMA: &str = "qhist-report/1";

#[derive(Clone, Debug, Serialize)]
pub struct Report {
    pub schema: &'static str,
    pub scenario: String,
    pub command: String,
    pub options: OptionsRecord,
    pub summary: Summary,
    pub checks: Vec<CheckRecord>,
}

#[derive(Clone, Debug, Serialize)]
pub struct OptionsRecord {
    pub tol: f64,
    pub seed: u64,
    pub completeness: String,
    pub variant: String,
}

#[derive(Clone, Debug, Serialize)]
pub struct Summary {
    pub checks: usize,
    pub passed: usize,
    pub failed: usize,
}

#[derive(Clone, Debug, Serialize)]
pub struct CheckRecord {
    pub name: String,
    pub cmd: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub variant: Option<String>,
    pub digest: String,
    pub tol: f64,
    pub pass: bool,
    pub detail: String,
    pub data: serde_json::Value,
}

impl Report {
    pub fn passed(&self) -> bool {
        self.summary.failed == 0
    }

    /// Pretty JSON with a trailing newline. Negative zeros are normalized
    /// so repeated runs are byte-identical.
    pub fn to_json(&self) -> String {
        let mut value = serde_json::to_value(self).expect("report serializes");
        clean(&mut value);
        let mut text = serde_json::to_string_pretty(&value).expect("report serializes");
        text.push('\n');
        text
    }

    /// Aligned plain text: a header, one line per check, a summary line.
    pub fn to_text(&self) -> String {
        let mut out = format!(
            "scenario {}: {} (tol {:e}, seed {}, completeness {}, variant {})\n",
            self.scenario,
            self.command,
            self.options.tol,
            self.options.seed,
            self.options.completeness,
            self.options.variant
        );
        let name_w = self.checks.iter().map(|c| c.name.len()).max().unwrap_or(0);
        let cmd_w = self.checks.iter().map(|c| c.cmd.len()).max().unwrap_or(0);
        for c in &self.checks {
            out.push_str(&format!(
                "{} {:name_w$}  [{:cmd_w$}] {}\n",
                if c.pass { "PASS" } else { "FAIL" },
                c.name,
                c.cmd,
                c.detail
            ));
        }
        out.push_str(&format!(
            "summary: {} checks, {} passed, {} failed\n",
            self.summary.checks, self.summary.passed, self.summary.failed
        ));
        out
    }
}

/// Replaces `-0.0` with `0.0` everywhere in a JSON value.
fn clean(v: &mut serde_json::Value) {
    match v {
        serde_json::Value::Number(n) => {
            if n.as_f64().is_some_and(|f| f == 0.0 && f.is_sign_negative()) {
                *v = serde_json::Value::from(0.0);
            }
        }
        serde_json::Value::Array(a) => a.iter_mut().for_each(clean),
        serde_json::Value::Object(o) => o.values_mut().for_each(clean),
        _ => {}
    }
}

/// The checks a command and variant filter select, in file order.
pub fn selected_checks<'s>(
    scenario: &'s Scenario,
    command: Command,
    variant: &VariantFilter,
) -> Vec<&'s CheckSpec> {
    scenario
        .checks
        .iter()
        .filter(|c| command == Command::ReportAll || c.cmd() == command.name())
        .filter(|c| variant.includes(c.variant()))
        .collect()
}

/// Runs the selected checks and assembles the report.
pub fn run(scenario: &Scenario, command: Command, opts: &RunOptions) -> Report {
    let selected = selected_checks(scenario, command, &opts.variant);
    let runner = Runner { scn: scenario, opts };
    let checks: Vec<CheckRecord> = selected.into_iter().map(|c| runner.check(c)).collect();
    let passed = checks.iter().filter(|c| c.pass).count();
    Report {
        schema: REPORT_SCHEMA,
        scenario: scenario.id.clone(),
        command: command.name().to_string(),
        options: OptionsRecord {
            tol: opts.tol,
            seed: opts.seed,
            completeness: mode_name(opts.completeness).to_string(),
            variant: opts.variant.to_string(),
        },
        summary: Summary {
            checks: checks.len(),
            passed,
            failed: checks.len() - passed,
        },
        checks,
    }
}

fn mode_name(m: CompletenessMode) -> &'static str {
    match m {
        CompletenessMode::Exact => "exact",
        CompletenessMode::Physical => "physical",
    }
}

fn mode_from(spec: Option<ModeSpec>, fallback: CompletenessMode) -> CompletenessMode {
    match spec {
        Some(ModeSpec::Exact) => CompletenessMode::Exact,
        Some(ModeSpec::Physical) => CompletenessMode::Physical,
        None => fallback,
    }
}

fn pair(z: C64) -> serde_json::Value {
    serde_json::json!([z.re, z.im])
}

fn ket_value(k: &CKet) -> serde_json::Value {
    serde_json::Value::Array(k.amplitudes().iter().map(|&z| pair(z)).collect())
}

struct Runner<'s> {
    scn: &'s Scenario,
    opts: &'s RunOptions,
}

/// Outcome of one check body: pass, human detail, structured data.
type Body = (bool, String, serde_json::Value);

impl Runner<'_> {
    fn check(&self, spec: &CheckSpec) -> CheckRecord {
        let tol = spec.tol_override().unwrap_or(self.opts.tol);
        let (pass, detail, data) = match spec {
            CheckSpec::Validate(c) => self.validate(c, tol),
            CheckSpec::Weight(c) => self.weight(c, tol),
            CheckSpec::Inner(c) => self.inner(c, tol),
            CheckSpec::Decompose(c) => self.decompose(c, tol),
            CheckSpec::Probabilities(c) => self.probabilities(c, tol),
            CheckSpec::Eigenhistories(c) => self.eigenhistories(c, tol),
            CheckSpec::SimulateMarking(c) => self.simulate_marking(c, tol),
            CheckSpec::BranchMap(c) => self.branch_map(c, tol),
            CheckSpec::Sequential(c) => self.sequential(c, tol),
        };
        CheckRecord {
            name: spec.name().to_string(),
            cmd: spec.cmd().to_string(),
            variant: spec.variant().map(str::to_string),
            digest: self.digest(spec, tol),
            tol,
            pass,
            detail,
            data,
        }
    }

    /// Digest over everything that determines the check's numbers: the
    /// scenario id, the effective settings, and the canonical check body.
    fn digest(&self, spec: &CheckSpec, tol: f64) -> String {
        let mode = self.mode(spec);
        let body = serde_json::to_string(&spec.to_value()).expect("check serializes");
        let input = format!(
            "{}\ntol={tol:e} seed={} completeness={}\n{body}",
            self.scn.id,
            self.opts.seed,
            mode_name(mode),
        );
        let mut h = Sha256::new();
        h.update(input.as_bytes());
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }

    fn mode(&self, spec: &CheckSpec) -> CompletenessMode {
        let over = match spec {
            CheckSpec::Validate(c) => c.completeness,
            CheckSpec::Decompose(c) => c.completeness,
            CheckSpec::Probabilities(c) => c.completeness,
            CheckSpec::BranchMap(c) => c.completeness,
            CheckSpec::Sequential(c) => c.completeness,
            _ => None,
        };
        mode_from(over, self.opts.completeness)
    }

    fn entry(&self, e: &Entry) -> Result<C64, Error> {
        let err = |d: expr::ExprError| Error::Numerical { detail: d.to_string() };
        match e {
            Entry::Real(x) => Ok(C64::new(*x, 0.0)),
            Entry::Expr(s) => expr::eval(s, &self.scn.constants).map_err(err),
            Entry::Pair(re, im) => Ok(C64::new(self.component(re)?, self.component(im)?)),
        }
    }

    fn component(&self, c: &Component) -> Result<f64, Error> {
        let err = |d: expr::ExprError| Error::Numerical { detail: d.to_string() };
        match c {
            Component::Real(x) => Ok(*x),
            Component::Expr(s) => Ok(expr::eval(s, &self.scn.constants).map_err(err)?.re),
        }
    }

    fn real(&self, e: &Entry) -> Result<f64, Error> {
        Ok(self.entry(e)?.re)
    }

    /// Rebuilds a ket from a canonical check payload.
    fn ket(&self, spec: &KetSpec) -> Result<CKet, Error> {
        match spec {
            KetSpec::Name(n) => self.scn.registry.ket(n),
            KetSpec::Bare(amps) => {
                let v: Result<Vec<C64>, Error> = amps.iter().map(|e| self.entry(e)).collect();
                CKet::new(v?)
            }
            KetSpec::Amplitudes(a) => {
                let v: Result<Vec<C64>, Error> =
                    a.amplitudes.iter().map(|e| self.entry(e)).collect();
                CKet::new(v?)
            }
            KetSpec::Basis(b) => CKet::basis(b.dim, b.basis),
            KetSpec::Kron(k) => {
                let mut out: Option<CKet> = None;
                for part in &k.kron {
                    let p = self.ket(part)?;
                    out = Some(match out {
                        None => p,
                        Some(acc) => acc.kron(&p),
                    });
                }
                out.ok_or_else(|| Error::shape("kron of no kets"))
            }
        }
    }

    fn state(&self, name: &str) -> &HistoryState {
        &self.scn.history_states[name]
    }

    fn validated_family(
        &self,
        name: &str,
        mode: CompletenessMode,
        tol: f64,
    ) -> Result<FamilyReport, String> {
        let f = &self.scn.families[name].family;
        match validate_family(f, &self.scn.bridging, tol, mode) {
            Err(e) => Err(format!("family {name:?} validation error: {e}")),
            Ok(report) if !report.passed() => Err(format!(
                "family {name:?} did not validate: {}",
                report.failures.join("; ")
            )),
            Ok(report) => Ok(report),
        }
    }

    fn validate(&self, c: &ValidateCheck, tol: f64) -> Body {
        let mode = mode_from(c.completeness, self.opts.completeness);
        let f = &self.scn.families[&c.family];
        let report = match validate_family(&f.family, &self.scn.bridging, tol, mode) {
            Ok(r) => r,
            Err(e) => {
                return (
                    false,
                    format!("family {:?} validation error: {e}", c.family),
                    serde_json::json!({ "error": e.to_string(), "as_expected": false }),
                )
            }
        };
        let family_passed = report.passed();
        let mut issues = Vec::new();

        let bound = self.scn.timeline.last_dim() * self.scn.timeline.dim(0);
        let nonzero = report
            .weights
            .iter()
            .filter(|&&w| (w - 1.0).abs() <= report.tol)
            .count();

        if let Some(expected) = &c.expect_weights {
            for (i, e) in expected.iter().enumerate() {
                let want = self.real(e).unwrap_or(f64::NAN);
                if (report.weights[i] - want).abs() > tol {
                    issues.push(format!(
                        "weight {} is {:.6}, expected {want:.6}",
                        f.family.labels()[i],
                        report.weights[i]
                    ));
                }
            }
        }
        if let Some(expected) = &c.expect_coefficients {
            for (i, e) in expected.iter().enumerate() {
                let want = self.entry(e).unwrap_or(C64::new(f64::NAN, 0.0));
                if (report.coefficients[i] - want).norm() > tol {
                    issues.push(format!(
                        "coefficient {} is {:.6}{:+.6}i, expected {:.6}{:+.6}i",
                        f.family.labels()[i],
                        report.coefficients[i].re,
                        report.coefficients[i].im,
                        want.re,
                        want.im
                    ));
                }
            }
        }
        if let Some(expected) = c.expect_nonzero_members {
            if nonzero != expected {
                issues.push(format!(
                    "{nonzero} nonzero members, expected {expected}"
                ));
            }
        }
        let mut mentions_ok = true;
        if let Some(mentions) = &c.expect_failure_mentions {
            let joined = report.failures.join("\n");
            for m in mentions {
                if !joined.contains(m) {
                    mentions_ok = false;
                    issues.push(format!("failure report does not mention {m:?}"));
                }
            }
        }

        let outcome_expected = match c.expect {
            ExpectOutcome::Pass => family_passed,
            ExpectOutcome::Fail => !family_passed,
            _ => false,
        };
        let as_expected = outcome_expected && issues.is_empty() && mentions_ok;
        // the record mirrors the audit; expectation mismatches only fail a
        // family that itself passed
        let pass = family_passed && issues.is_empty();
        let detail = if family_passed {
            let mut d = format!(
                "family {:?} passed ({}, residual {:.3e})",
                c.family,
                mode_name(mode),
                report.completeness_residual
            );
            if !issues.is_empty() {
                d = format!("{d}; {}", issues.join("; "));
            }
            d
        } else {
            format!(
                "family {:?} failed: {}",
                c.family,
                report.failures.join("; ")
            )
        };
        let data = serde_json::json!({
            "mode": mode_name(mode),
            "weights": report.weights,
            "coefficients": report.coefficients.iter().map(|&z| pair(z)).collect::<Vec<_>>(),
            "completeness_residual": report.completeness_residual,
            "failures": report.failures,
            "member_bound": bound,
            "nonzero_members": nonzero,
            "bound_saturated": nonzero == bound,
            "expected_outcome": match c.expect {
                ExpectOutcome::Pass => "pass",
                ExpectOutcome::Fail => "fail",
                _ => "invalid",
            },
            "as_expected": as_expected,
        });
        (pass, detail, data)
    }

    fn weight(&self, c: &WeightCheck, tol: f64) -> Body {
        let state = self.state(&c.state);
        let got = match weight(state, &self.scn.bridging) {
            Ok(w) => w,
            Err(e) => {
                return (
                    false,
                    format!("weight of {:?} failed: {e}", c.state),
                    serde_json::json!({ "error": e.to_string() }),
                )
            }
        };
        let want = self.real(&c.expect).unwrap_or(f64::NAN);
        let pass = (got - want).abs() <= tol;
        (
            pass,
            format!("weight({}) = {got:.6}, expected {want:.6}", c.state),
            serde_json::json!({ "weight": got, "expected": want }),
        )
    }

    fn inner(&self, c: &InnerCheck, tol: f64) -> Body {
        let got = match inner(self.state(&c.left), self.state(&c.right), &self.scn.bridging) {
            Ok(z) => z,
            Err(e) => {
                return (
                    false,
                    format!("inner({}, {}) failed: {e}", c.left, c.right),
                    serde_json::json!({ "error": e.to_string() }),
                )
            }
        };
        let want = self.entry(&c.expect).unwrap_or(C64::new(f64::NAN, 0.0));
        let pass = (got - want).norm() <= tol;
        (
            pass,
            format!(
                "inner({}, {}) = {:.6}{:+.6}i, expected {:.6}{:+.6}i",
                c.left, c.right, got.re, got.im, want.re, want.im
            ),
            serde_json::json!({ "inner": pair(got), "expected": pair(want) }),
        )
    }

    fn decompose(&self, c: &DecomposeCheck, tol: f64) -> Body {
        let mode = mode_from(c.completeness, self.opts.completeness);
        let report = match self.validated_family(&c.family, mode, tol) {
            Ok(r) => r,
            Err(d) => return (false, d, serde_json::Value::Null),
        };
        let f = &self.scn.families[&c.family];
        let (coeffs, residual) =
            match decompose(self.state(&c.state), &f.family, &report, &self.scn.bridging) {
                Ok(v) => v,
                Err(e) => {
                    return (
                        false,
                        format!("decomposition failed: {e}"),
                        serde_json::json!({ "error": e.to_string() }),
                    )
                }
            };
        let mut issues = Vec::new();
        for (i, e) in c.expect_coefficients.iter().enumerate() {
            let want = self.entry(e).unwrap_or(C64::new(f64::NAN, 0.0));
            if (coeffs[i] - want).norm() > tol {
                issues.push(format!(
                    "coefficient {} is {:.6}{:+.6}i, expected {:.6}{:+.6}i",
                    f.family.labels()[i],
                    coeffs[i].re,
                    coeffs[i].im,
                    want.re,
                    want.im
                ));
            }
        }
        if residual > tol {
            issues.push(format!("reconstruction residual {residual:.3e} exceeds {tol:.1e}"));
        }
        let pass = issues.is_empty();
        let detail = if pass {
            format!(
                "{} decomposes over {:?} (residual {residual:.3e})",
                c.state, c.family
            )
        } else {
            issues.join("; ")
        };
        let data = serde_json::json!({
            "coefficients": coeffs.iter().map(|&z| pair(z)).collect::<Vec<_>>(),
            "residual": residual,
        });
        (pass, detail, data)
    }

    fn probabilities(&self, c: &ProbabilitiesCheck, tol: f64) -> Body {
        let mode = mode_from(c.completeness, self.opts.completeness);
        let state = self.state(&c.state);
        match (&c.family, &c.observable) {
            (Some(fname), None) => {
                let report = match self.validated_family(fname, mode, tol) {
                    Ok(r) => r,
                    Err(d) => return (false, d, serde_json::Value::Null),
                };
                let f = &self.scn.families[fname];
                let probs =
                    match probabilities(state, &f.family, &report, &self.scn.bridging, tol) {
                        Ok(p) => p,
                        Err(e) => {
                            return (
                                false,
                                format!("probabilities failed: {e}"),
                                serde_json::json!({ "error": e.to_string() }),
                            )
                        }
                    };
                let expected = c.expect.as_ref().expect("validated at load");
                let mut issues = Vec::new();
                for (i, e) in expected.iter().enumerate() {
                    let want = self.real(e).unwrap_or(f64::NAN);
                    if (probs[i] - want).abs() > tol {
                        issues.push(format!(
                            "p({}) = {:.6}, expected {want:.6}",
                            f.family.labels()[i],
                            probs[i]
                        ));
                    }
                }
                let pass = issues.is_empty();
                let detail = if pass {
                    format!("member probabilities of {} match", c.state)
                } else {
                    issues.join("; ")
                };
                (pass, detail, serde_json::json!({ "probabilities": probs }))
            }
            (None, Some(oname)) => {
                let ScenarioOperator::Spectral { family, values } = &self.scn.operators[oname]
                else {
                    return (false, "not a spectral observable".into(), serde_json::Value::Null);
                };
                let report = match self.validated_family(family, mode, tol) {
                    Ok(r) => r,
                    Err(d) => return (false, d, serde_json::Value::Null),
                };
                let f = &self.scn.families[family];
                let dist = match SpectralObservable::new(
                    f.family.clone(),
                    report,
                    values.clone(),
                )
                .and_then(|obs| measure_distribution(state, &obs, &self.scn.bridging, tol))
                {
                    Ok(d) => d,
                    Err(e) => {
                        return (
                            false,
                            format!("measurement distribution failed: {e}"),
                            serde_json::json!({ "error": e.to_string() }),
                        )
                    }
                };
                let expected = c.expect_distribution.as_ref().expect("validated at load");
                let mut issues = Vec::new();
                if dist.len() != expected.len() {
                    issues.push(format!(
                        "{} distinct values, expected {}",
                        dist.len(),
                        expected.len()
                    ));
                } else {
                    for (i, (ev, ep)) in expected.iter().enumerate() {
                        let wv = self.real(ev).unwrap_or(f64::NAN);
                        let wp = self.real(ep).unwrap_or(f64::NAN);
                        if (dist[i].0 - wv).abs() > tol || (dist[i].1 - wp).abs() > tol {
                            issues.push(format!(
                                "entry {i} is ({:.6}, {:.6}), expected ({wv:.6}, {wp:.6})",
                                dist[i].0, dist[i].1
                            ));
                        }
                    }
                }
                let pass = issues.is_empty();
                let detail = if pass {
                    format!("distribution of {oname} in {} matches", c.state)
                } else {
                    issues.join("; ")
                };
                let data = serde_json::json!({
                    "distribution": dist.iter().map(|&(v, p)| vec![v, p]).collect::<Vec<_>>(),
                });
                (pass, detail, data)
            }
            _ => (false, "invalid check".into(), serde_json::Value::Null),
        }
    }

    fn eigenhistories(&self, c: &EigenhistoriesCheck, tol: f64) -> Body {
        let ops: Vec<ProductHistoryOperator> = c
            .operators
            .iter()
            .map(|n| match &self.scn.operators[n] {
                ScenarioOperator::Product(p) => p.clone(),
                ScenarioOperator::Spectral { .. } => unreachable!("validated at load"),
            })
            .collect();
        let of = match observable_family(&ops, &self.scn.bridging, tol, self.opts.seed) {
            Ok(of) => of,
            Err(e) => {
                let pass = c.expect == ExpectOutcome::Error;
                let detail = if pass {
                    format!("construction rejected as expected: {e}")
                } else {
                    format!("construction failed: {e}")
                };
                return (pass, detail, serde_json::json!({ "error": e.to_string() }));
            }
        };
        if c.expect == ExpectOutcome::Error {
            return (
                false,
                "construction succeeded but a rejection was expected".into(),
                serde_json::Value::Null,
            );
        }
        let mtol = tol.max(1e-9);
        let mut issues = Vec::new();

        if let Some(members) = &c.expect_members {
            let mut used = vec![false; of.family.len()];
            for name in members {
                let want = self.state(name);
                let mut found = false;
                for (j, got) in of.family.members().iter().enumerate() {
                    if used[j] {
                        continue;
                    }
                    if physically_equal(want, got, &self.scn.bridging, mtol).unwrap_or(false) {
                        used[j] = true;
                        found = true;
                        break;
                    }
                }
                if !found {
                    issues.push(format!("no produced member matches {name:?}"));
                }
            }
        }

        if let Some(vectors) = &c.expect_eigenvectors {
            let mut used = vec![false; of.eigenvectors.len()];
            for (i, spec) in vectors.iter().enumerate() {
                let want = match self.ket(spec) {
                    Ok(k) => k,
                    Err(e) => {
                        issues.push(format!("expected eigenvector {i}: {e}"));
                        continue;
                    }
                };
                let mut matched = None;
                for (j, got) in of.eigenvectors.iter().enumerate() {
                    if used[j] {
                        continue;
                    }
                    if want.inner(got).map(|z| z.norm()).unwrap_or(0.0) >= 1.0 - mtol {
                        used[j] = true;
                        matched = Some(j);
                        break;
                    }
                }
                match matched {
                    None => issues.push(format!(
                        "no produced eigenvector overlaps expected vector {i}"
                    )),
                    Some(j) => {
                        if let Some(values) = &c.expect_eigenvalues {
                            for (k, e) in values[i].iter().enumerate() {
                                let want_v = self.real(e).unwrap_or(f64::NAN);
                                let got_v = of.eigenvalues[k][j];
                                if (got_v - want_v).abs() > mtol {
                                    issues.push(format!(
                                        "eigenvalue of operator {} on expected vector {i} is \
                                         {got_v:.6}, expected {want_v:.6}",
                                        c.operators[k]
                                    ));
                                }
                            }
                        }
                    }
                }
            }
        }

        let pass = issues.is_empty();
        let detail = if pass {
            format!(
                "{} members from {} commuting operators",
                of.family.len(),
                c.operators.len()
            )
        } else {
            issues.join("; ")
        };
        let data = serde_json::json!({
            "members": of.family.len(),
            "weights": of.report.weights,
            "eigenvalues": of.eigenvalues,
            "eigenvectors": of.eigenvectors.iter().map(ket_value).collect::<Vec<_>>(),
        });
        (pass, detail, data)
    }

    fn simulate_marking(&self, c: &SimulateMarkingCheck, tol: f64) -> Body {
        let m = &self.scn.markings[&c.marking];
        let state = match simulate(m) {
            Ok(s) => s,
            Err(e) => {
                return (
                    false,
                    format!("simulation failed: {e}"),
                    serde_json::json!({ "error": e.to_string() }),
                )
            }
        };
        let mut pass = true;
        let mut detail = format!("final joint state of {:?} computed", c.marking);
        if let Some(spec) = &c.expect_state {
            match self.ket(spec) {
                Ok(want) => {
                    if state.approx_eq(&want, tol) {
                        detail = format!(
                            "final joint state of {:?} matches within {tol:.1e}",
                            c.marking
                        );
                    } else {
                        pass = false;
                        let dev = state
                            .sub(&want)
                            .map(|d| d.norm())
                            .unwrap_or(f64::INFINITY);
                        detail = format!(
                            "final joint state deviates from the expected state by {dev:.3e}"
                        );
                    }
                }
                Err(e) => {
                    pass = false;
                    detail = format!("expected state invalid: {e}");
                }
            }
        }
        let data = serde_json::json!({
            "amplitudes": ket_value(&state),
            "norm": state.norm(),
        });
        (pass, detail, data)
    }

    fn branch_map(&self, c: &BranchMapCheck, tol: f64) -> Body {
        let mode = mode_from(c.completeness, self.opts.completeness);
        let report = match self.validated_family(&c.family, mode, tol) {
            Ok(r) => r,
            Err(d) => return (false, d, serde_json::Value::Null),
        };
        let f = &self.scn.families[&c.family];
        let m = &self.scn.markings[&c.marking];
        match branch_map(m, &f.family, &report, tol) {
            Ok(bm) => {
                if c.expect == ExpectOutcome::Misaligned {
                    return (
                        false,
                        "branch map aligned but misalignment was expected".into(),
                        serde_json::json!({ "residual": bm.residual }),
                    );
                }
                let mut issues = Vec::new();
                if let Some(expected) = &c.expect_labels {
                    for (i, want) in expected.iter().enumerate() {
                        match (want, &bm.labels[i]) {
                            (None, None) => {}
                            (None, Some(_)) => issues.push(format!(
                                "member {} has a label but none was expected",
                                f.family.labels()[i]
                            )),
                            (Some(_), None) => issues.push(format!(
                                "member {} has no label but one was expected",
                                f.family.labels()[i]
                            )),
                            (Some(spec), Some(got)) => match self.ket(spec) {
                                Ok(want_k) => {
                                    if !got.eq_up_to_phase(&want_k, tol.max(1e-9)) {
                                        issues.push(format!(
                                            "label of member {} differs from the expected \
                                             ancilla state",
                                            f.family.labels()[i]
                                        ));
                                    }
                                }
                                Err(e) => issues.push(format!("expected label {i}: {e}")),
                            },
                        }
                    }
                }
                let pass = issues.is_empty();
                let detail = if pass {
                    format!(
                        "schedule measures {:?} (residual {:.3e})",
                        c.family, bm.residual
                    )
                } else {
                    issues.join("; ")
                };
                let data = serde_json::json!({
                    "residual": bm.residual,
                    "labels": bm.labels.iter().map(|l| match l {
                        None => serde_json::Value::Null,
                        Some(k) => ket_value(k),
                    }).collect::<Vec<_>>(),
                    "branches": bm.branches.iter().map(ket_value).collect::<Vec<_>>(),
                });
                (pass, detail, data)
            }
            Err(Error::Misaligned { residual, detail }) => {
                let pass = c.expect == ExpectOutcome::Misaligned;
                let d = if pass {
                    format!("misaligned as expected: {detail}")
                } else {
                    format!("schedule does not measure {:?}: {detail}", c.family)
                };
                (
                    pass,
                    d,
                    serde_json::json!({ "residual": residual, "misaligned": true }),
                )
            }
            Err(e) => (
                false,
                format!("branch map failed: {e}"),
                serde_json::json!({ "error": e.to_string() }),
            ),
        }
    }

    fn sequential(&self, c: &SequentialCheck, tol: f64) -> Body {
        let mode = mode_from(c.completeness, self.opts.completeness);
        let m = &self.scn.markings[&c.marking];
        let mut reports = Vec::with_capacity(c.plans.len());
        let mut bases = Vec::with_capacity(c.plans.len());
        for plan in &c.plans {
            match self.validated_family(&plan.family, mode, tol) {
                Ok(r) => reports.push(r),
                Err(d) => return (false, d, serde_json::Value::Null),
            }
            let mut basis = Vec::with_capacity(plan.basis.len());
            for (j, spec) in plan.basis.iter().enumerate() {
                match self.ket(spec) {
                    Ok(k) => basis.push(k),
                    Err(e) => {
                        return (
                            false,
                            format!("basis vector {j} invalid: {e}"),
                            serde_json::Value::Null,
                        )
                    }
                }
            }
            bases.push(basis);
        }
        let plans: Vec<MeasurementPlan> = c
            .plans
            .iter()
            .zip(reports.iter())
            .zip(bases.iter())
            .map(|((plan, report), basis)| MeasurementPlan {
                registers: match plan.registers {
                    crate::scenario::schema::RegistersSpec::One(r) => r..r + 1,
                    crate::scenario::schema::RegistersSpec::Range([s, e]) => s..e,
                },
                basis: basis.clone(),
                family: &self.scn.families[&plan.family].family,
                report,
            })
            .collect();
        let nodes = match sequential_measure(m, &plans, tol) {
            Ok(n) => n,
            Err(e) => {
                return (
                    false,
                    format!("sequential measurement failed: {e}"),
                    serde_json::json!({ "error": e.to_string() }),
                )
            }
        };

        let mut issues = Vec::new();
        if let Some(expected) = &c.expect_marginals {
            for (i, e) in expected.iter().enumerate() {
                let want = self.real(e).unwrap_or(f64::NAN);
                if (nodes[i].probability - want).abs() > tol {
                    issues.push(format!(
                        "stage-1 marginal of outcome {i} is {:.6}, expected {want:.6}",
                        nodes[i].probability
                    ));
                }
            }
        }
        if let Some(expected) = &c.expect_members {
            let labels = plans[0].family.labels();
            for (i, want) in expected.iter().enumerate() {
                let got = nodes[i].member.map(|j| labels[j].as_str());
                if got != want.as_deref() {
                    issues.push(format!(
                        "outcome {i} identifies member {}, expected {}",
                        got.unwrap_or("none"),
                        want.as_deref().unwrap_or("none")
                    ));
                }
            }
        }
        if let Some(expected) = &c.expect_conditionals {
            for (i, row) in expected.iter().enumerate() {
                if nodes[i].children.len() != row.len() {
                    issues.push(format!(
                        "outcome {i} has {} follow-up outcomes, expected {}",
                        nodes[i].children.len(),
                        row.len()
                    ));
                    continue;
                }
                for (j, e) in row.iter().enumerate() {
                    let want = self.real(e).unwrap_or(f64::NAN);
                    let got = nodes[i].children[j].probability;
                    if (got - want).abs() > tol {
                        issues.push(format!(
                            "conditional p({j}|{i}) is {got:.6}, expected {want:.6}"
                        ));
                    }
                }
            }
        }
        if let Some(expected) = &c.expect_leaf_joints {
            let mut leaves = Vec::new();
            collect_leaves(&nodes, &mut leaves);
            if leaves.len() != expected.len() {
                issues.push(format!(
                    "{} leaves, expected {}",
                    leaves.len(),
                    expected.len()
                ));
            } else {
                for (i, e) in expected.iter().enumerate() {
                    let want = self.real(e).unwrap_or(f64::NAN);
                    if (leaves[i] - want).abs() > tol {
                        issues.push(format!(
                            "leaf joint probability {i} is {:.6}, expected {want:.6}",
                            leaves[i]
                        ));
                    }
                }
            }
        }

        let pass = issues.is_empty();
        let detail = if pass {
            format!("{} stages over {:?} agree", c.plans.len(), c.marking)
        } else {
            issues.join("; ")
        };
        let stage_labels: Vec<&[String]> =
            plans.iter().map(|p| p.family.labels()).collect();
        let tree: Vec<serde_json::Value> =
            nodes.iter().map(|n| node_value(n, &stage_labels, 0)).collect();
        (pass, detail, serde_json::json!({ "tree": tree }))
    }
}

fn collect_leaves(nodes: &[OutcomeNode], out: &mut Vec<f64>) {
    for n in nodes {
        if n.children.is_empty() {
            out.push(n.joint_probability);
        } else {
            collect_leaves(&n.children, out);
        }
    }
}

fn node_value(
    n: &OutcomeNode,
    stage_labels: &[&[String]],
    depth: usize,
) -> serde_json::Value {
    let member = n
        .member
        .and_then(|j| stage_labels.get(depth).map(|l| l[j].clone()));
    serde_json::json!({
        "outcome": n.outcome,
        "probability": n.probability,
        "joint_probability": n.joint_probability,
        "member": member,
        "member_overlaps": n.member_overlaps,
        "children": n.children.iter().map(|ch| node_value(ch, stage_labels, depth + 1)).collect::<Vec<_>>(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_slot_scenario() -> Scenario {
        Scenario::load_str(
            r#"{
            "version": 1,
            "id": "runner-demo",
            "timeline": [
                {"label": "t1", "dim": 2},
                {"label": "t2", "dim": 2}
            ],
            "history_states": {
                "uu": {"terms": [{"trajectory": ["z+", "z+"]}]},
                "dd": {"terms": [{"trajectory": ["z-", "z-"]}]},
                "ud": {"terms": [{"trajectory": ["z+", "z-"]}]},
                "du": {"terms": [{"trajectory": ["z-", "z+"]}]},
                "heavy": {"combine": [{"coeff": 2, "state": "uu"}]}
            },
            "families": {
                "zz": {"members": ["uu", "ud", "du", "dd"]},
                "bad": {"members": ["uu", "heavy"], "variant": "broken"}
            },
            "operators": {
                "z-first": {"factors": ["sz", "I(2)"]}
            },
            "checks": [
                {"cmd": "validate", "name": "zz-valid", "family": "zz",
                 "expect_weights": [1, 0, 0, 1], "expect_nonzero_members": 2},
                {"cmd": "validate", "name": "bad-fails", "family": "bad",
                 "variant": "broken", "expect": "fail",
                 "expect_failure_mentions": ["heavy"]},
                {"cmd": "weight", "name": "w", "state": "uu", "expect": 1},
                {"cmd": "inner", "name": "x", "left": "uu", "right": "dd", "expect": 0},
                {"cmd": "decompose", "name": "d", "family": "zz", "state": "uu",
                 "expect_coefficients": [1, 0, 0, 0]},
                {"cmd": "probabilities", "name": "p", "family": "zz", "state": "uu",
                 "expect": [1, 0, 0, 0]},
                {"cmd": "eigenhistories", "name": "e", "operators": ["z-first"],
                 "expect_members": ["uu", "ud", "du", "dd"]}
            ]
        }"#,
        )
        .unwrap()
    }

    #[test]
    fn report_all_runs_every_check() {
        let s = two_slot_scenario();
        let r = run(&s, Command::ReportAll, &RunOptions::default());
        assert_eq!(r.summary.checks, 7);
        assert_eq!(r.summary.failed, 1);
        let bad = r.checks.iter().find(|c| c.name == "bad-fails").unwrap();
        assert!(!bad.pass);
        assert_eq!(bad.data["as_expected"], serde_json::json!(true));
        for c in r.checks.iter().filter(|c| c.name != "bad-fails") {
            assert!(c.pass, "{}: {}", c.name, c.detail);
        }
    }

    #[test]
    fn variant_filter_limits_the_run() {
        let s = two_slot_scenario();
        let mut opts = RunOptions::default();
        opts.variant = VariantFilter::parse("corrected");
        let r = run(&s, Command::ReportAll, &opts);
        assert_eq!(r.summary.checks, 6);
        assert!(r.passed());
        opts.variant = VariantFilter::parse("broken");
        let r = run(&s, Command::ReportAll, &opts);
        assert_eq!(r.summary.checks, 7);
        assert!(!r.passed());
    }

    #[test]
    fn command_selects_one_kind() {
        let s = two_slot_scenario();
        let r = run(&s, Command::Weight, &RunOptions::default());
        assert_eq!(r.summary.checks, 1);
        assert_eq!(r.checks[0].cmd, "weight");
        assert!(r.passed());
    }

    #[test]
    fn reports_are_byte_stable() {
        let s = two_slot_scenario();
        let a = run(&s, Command::ReportAll, &RunOptions::default()).to_json();
        let b = run(&s, Command::ReportAll, &RunOptions::default()).to_json();
        assert_eq!(a, b);
    }

    #[test]
    fn text_format_lists_every_check() {
        let s = two_slot_scenario();
        let r = run(&s, Command::ReportAll, &RunOptions::default());
        let text = r.to_text();
        assert!(text.starts_with("scenario runner-demo: report-all"));
        assert_eq!(text.matches("PASS ").count(), 6);
        assert_eq!(text.matches("FAIL ").count(), 1);
        assert!(text.trim_end().ends_with("7 checks, 6 passed, 1 failed"));
    }

    #[test]
    fn digests_cover_settings() {
        let s = two_slot_scenario();
        let a = run(&s, Command::Weight, &RunOptions::default());
        let mut opts = RunOptions::default();
        opts.seed = 8;
        let b = run(&s, Command::Weight, &opts);
        assert_ne!(a.checks[0].digest, b.checks[0].digest);
        assert_eq!(a.checks[0].digest.len(), 64);
    }

    #[test]
    fn command_names_round_trip() {
        for c in Command::ALL {
            assert_eq!(Command::parse(c.name()), Some(c));
        }
        assert_eq!(Command::parse("inspect"), None);
    }
}

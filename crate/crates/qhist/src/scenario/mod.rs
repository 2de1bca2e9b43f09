//! Declarative scenario files.
//!
//! A scenario is a JSON document naming a timeline, bridging steps, kets,
//! gates, history states, families, operators, marked evolutions, and a
//! list of checks with expected outcomes. Loading resolves every reference
//! and validates every shape up front, so a loaded [`Scenario`] holds only
//! constructed library objects; the first unresolved name or inconsistent
//! shape aborts the load with its location in the file.

pub mod expr;
pub mod schema;

use std::collections::{BTreeMap, BTreeSet};
use std::ops::Range;
use std::path::Path;
use std::sync::Arc;

use crate::error::Error;
use crate::family::Family;
use crate::history::{BridgingSet, ChainTerm, HistoryState, Slot, Timeline};
use crate::linalg::{C64, CKet, CMatrix};
use crate::marking::{MarkedSystem, MarkingStep};
use crate::observables::ProductHistoryOperator;
use crate::registry::Registry;
use crate::DEFAULT_TOL;

use schema::{
    AmplitudeSpec, BridgingSpec, ChainSpec, CheckSpec, Component, ControlSpec, Entry,
    ExpectOutcome, FamilySpec, KetSpec, MarkingSpec, MatrixSpec, OperatorSpec, PlanSpec,
    ProductOperatorSpec, RawScenario, RegistersSpec, SlotSpec, SpectralBody,
    SpectralOperatorSpec, StepSpec, TermSpec, TermsSpec, TimeRef, SCHEMA_VERSION,
};

/// Largest dimension the loader constructs for a single object.
const MAX_OBJECT_DIM: usize = 256;
/// Largest inline vector the loader accepts.
const MAX_KET_DIM: usize = 65536;
/// Largest full history space dimension.
const MAX_TOTAL_DIM: usize = 1024;

/// Why a scenario failed to load.
#[derive(Debug, thiserror::Error)]
pub enum LoadError {
    /// The file is not valid JSON for the documented schema.
    #[error("parse error: {detail}")]
    Parse { detail: String },
    /// A name does not resolve to any definition.
    #[error("unresolved reference at {location}: {detail}")]
    Resolution { location: String, detail: String },
    /// A value has an inconsistent or unsupported shape.
    #[error("shape error at {location}: {detail}")]
    Shape { location: String, detail: String },
}

fn shape(loc: impl Into<String>, detail: impl Into<String>) -> LoadError {
    LoadError::Shape { location: loc.into(), detail: detail.into() }
}

fn missing(loc: impl Into<String>, detail: impl Into<String>) -> LoadError {
    LoadError::Resolution { location: loc.into(), detail: detail.into() }
}

/// Maps a core construction error to a load diagnostic at `loc`.
fn core(loc: &str, e: Error) -> LoadError {
    match e {
        Error::UnknownName { name } => missing(loc, format!("unknown name {name:?}")),
        other => shape(loc, other.to_string()),
    }
}

/// A family together with its member state names and scenario variant tag.
#[derive(Clone, Debug)]
pub struct ScenarioFamily {
    pub family: Family,
    /// The history state names the members were built from.
    pub members: Vec<String>,
    pub variant: Option<String>,
}

/// A named operator: a product chain, or per-member values on a family.
#[derive(Clone, Debug)]
pub enum ScenarioOperator {
    Product(ProductHistoryOperator),
    Spectral { family: String, values: Vec<f64> },
}

/// A fully resolved scenario.
#[derive(Clone, Debug)]
pub struct Scenario {
    pub id: String,
    pub description: Option<String>,
    pub timeline: Arc<Timeline>,
    pub bridging: BridgingSet,
    pub registry: Registry,
    pub constants: BTreeMap<String, C64>,
    /// Kets the scenario defines (builtins live in `registry`).
    pub kets: BTreeMap<String, CKet>,
    /// Gates the scenario defines.
    pub gates: BTreeMap<String, CMatrix>,
    pub history_states: BTreeMap<String, HistoryState>,
    pub families: BTreeMap<String, ScenarioFamily>,
    pub operators: BTreeMap<String, ScenarioOperator>,
    pub markings: BTreeMap<String, MarkedSystem>,
    /// Canonicalized checks, file order.
    pub checks: Vec<CheckSpec>,
}

impl Scenario {
    /// Loads a scenario from a JSON string.
    pub fn load_str(text: &str) -> Result<Scenario, LoadError> {
        let raw: RawScenario = serde_json::from_str(text)
            .map_err(|e| LoadError::Parse { detail: e.to_string() })?;
        Scenario::from_raw(&raw)
    }

    /// Loads a scenario file.
    pub fn load_path(path: &Path) -> Result<Scenario, LoadError> {
        let text = std::fs::read_to_string(path).map_err(|e| LoadError::Parse {
            detail: format!("cannot read {}: {e}", path.display()),
        })?;
        Scenario::load_str(&text)
    }

    /// Resolves a parsed scenario document.
    pub fn from_raw(raw: &RawScenario) -> Result<Scenario, LoadError> {
        if raw.version != SCHEMA_VERSION {
            return Err(LoadError::Parse {
                detail: format!(
                    "unsupported schema version {} (this build reads version {SCHEMA_VERSION})",
                    raw.version
                ),
            });
        }
        if raw.id.is_empty() || raw.id.len() > 120 || raw.id.chars().any(|c| c.is_control()) {
            return Err(shape("id", "id must be a short non-empty string"));
        }

        let timeline = resolve_timeline(&raw.timeline)?;
        let mut r = Resolver {
            raw,
            timeline: timeline.clone(),
            builtins: Registry::with_builtins(),
            constants: BTreeMap::new(),
            kets: BTreeMap::new(),
            gates: BTreeMap::new(),
            states: BTreeMap::new(),
            visiting_kets: BTreeSet::new(),
            visiting_gates: BTreeSet::new(),
            visiting_states: BTreeSet::new(),
        };
        r.resolve_constants()?;
        for name in raw.kets.keys() {
            r.ket_by_name(name, &format!("kets.{name}"))?;
        }
        for name in raw.gates.keys() {
            r.gate_by_name(name, &format!("gates.{name}"))?;
        }
        let bridging = r.resolve_bridging()?;
        for name in raw.history_states.keys() {
            r.state_by_name(name, &format!("history_states.{name}"))?;
        }

        let mut families = BTreeMap::new();
        for (name, spec) in &raw.families {
            families.insert(name.clone(), r.family(name, spec)?);
        }
        let mut operators = BTreeMap::new();
        for (name, spec) in &raw.operators {
            operators.insert(name.clone(), r.operator(name, spec, &families)?);
        }
        let mut markings = BTreeMap::new();
        for (name, spec) in &raw.markings {
            markings.insert(name.clone(), r.marking(name, spec, &bridging)?);
        }

        let mut checks = Vec::with_capacity(raw.checks.len());
        let mut seen = BTreeSet::new();
        for (i, value) in raw.checks.iter().enumerate() {
            let check = r.check(value, i, &families, &operators, &markings)?;
            if !seen.insert(check.name().to_string()) {
                return Err(shape(
                    format!("checks[{i}]"),
                    format!("duplicate check name {:?}", check.name()),
                ));
            }
            checks.push(check);
        }

        let mut registry = Registry::with_builtins();
        for (name, ket) in &r.kets {
            registry
                .insert_ket(name, ket.clone())
                .map_err(|e| core(&format!("kets.{name}"), e))?;
        }
        for (name, gate) in &r.gates {
            registry
                .insert_gate(name, gate.clone())
                .map_err(|e| core(&format!("gates.{name}"), e))?;
        }

        Ok(Scenario {
            id: raw.id.clone(),
            description: raw.description.clone(),
            timeline,
            bridging,
            registry,
            constants: r.constants,
            kets: r.kets,
            gates: r.gates,
            history_states: r.states,
            families,
            operators,
            markings,
            checks,
        })
    }

    /// The scenario in canonical form: every value resolved and inlined,
    /// complex numbers as `[re, im]` pairs, no constants or shorthands.
    /// Loading the canonical form resolves to an identical scenario.
    pub fn canonical_raw(&self) -> RawScenario {
        RawScenario {
            version: SCHEMA_VERSION,
            id: self.id.clone(),
            description: self.description.clone(),
            timeline: self
                .timeline
                .slots()
                .iter()
                .map(|s| SlotSpec {
                    label: s.label.clone(),
                    dim: Some(s.dim),
                    parts: Some(s.parts.clone()),
                })
                .collect(),
            bridging: Some(BridgingSpec::Steps(
                (0..self.timeline.len() - 1)
                    .map(|j| canon_matrix(self.bridging.step(j)))
                    .collect(),
            )),
            constants: BTreeMap::new(),
            kets: self.kets.iter().map(|(n, k)| (n.clone(), canon_ket(k))).collect(),
            gates: self
                .gates
                .iter()
                .map(|(n, g)| (n.clone(), canon_matrix(g)))
                .collect(),
            history_states: self
                .history_states
                .iter()
                .map(|(n, s)| (n.clone(), canon_chain(s)))
                .collect(),
            families: self
                .families
                .iter()
                .map(|(n, f)| {
                    (
                        n.clone(),
                        FamilySpec {
                            variant: f.variant.clone(),
                            members: f.members.clone(),
                            labels: Some(f.family.labels().to_vec()),
                        },
                    )
                })
                .collect(),
            operators: self
                .operators
                .iter()
                .map(|(n, o)| (n.clone(), canon_operator(o)))
                .collect(),
            markings: self
                .markings
                .iter()
                .map(|(n, m)| (n.clone(), canon_marking(m)))
                .collect(),
            checks: self.checks.iter().map(|c| c.to_value()).collect(),
        }
    }

    /// Canonical pretty-printed JSON (see [`Scenario::canonical_raw`]).
    pub fn canonical_json(&self) -> String {
        let mut text =
            serde_json::to_string_pretty(&self.canonical_raw()).expect("canonical form serializes");
        text.push('\n');
        text
    }
}

fn resolve_timeline(slots: &[SlotSpec]) -> Result<Arc<Timeline>, LoadError> {
    if slots.is_empty() {
        return Err(shape("timeline", "timeline needs at least one slot"));
    }
    let mut out = Vec::with_capacity(slots.len());
    let mut labels = BTreeSet::new();
    for (i, s) in slots.iter().enumerate() {
        let loc = format!("timeline[{i}]");
        if s.label.is_empty() {
            return Err(shape(&loc, "slot label must not be empty"));
        }
        if !labels.insert(s.label.clone()) {
            return Err(shape(&loc, format!("duplicate slot label {:?}", s.label)));
        }
        let slot = match (&s.dim, &s.parts) {
            (Some(d), None) => Slot::new(s.label.clone(), *d),
            (None, Some(p)) => Slot::with_parts(s.label.clone(), p.clone()),
            (Some(d), Some(p)) => {
                let slot = Slot::with_parts(s.label.clone(), p.clone());
                if slot.dim != *d {
                    return Err(shape(
                        &loc,
                        format!("parts {:?} do not multiply to dim {}", p, d),
                    ));
                }
                slot
            }
            (None, None) => return Err(shape(&loc, "slot needs a dim or parts")),
        };
        if slot.dim == 0 || slot.dim > MAX_OBJECT_DIM {
            return Err(shape(
                &loc,
                format!("slot dimension {} outside the supported range 1..={MAX_OBJECT_DIM}", slot.dim),
            ));
        }
        out.push(slot);
    }
    let total: usize = out.iter().map(|s| s.dim).try_fold(1usize, |a, d| a.checked_mul(d))
        .unwrap_or(usize::MAX);
    if total > MAX_TOTAL_DIM {
        return Err(shape(
            "timeline",
            format!("history space dimension {total} exceeds the supported {MAX_TOTAL_DIM}"),
        ));
    }
    Timeline::new(out).map_err(|e| core("timeline", e))
}

struct Resolver<'r> {
    raw: &'r RawScenario,
    timeline: Arc<Timeline>,
    builtins: Registry,
    constants: BTreeMap<String, C64>,
    kets: BTreeMap<String, CKet>,
    gates: BTreeMap<String, CMatrix>,
    states: BTreeMap<String, HistoryState>,
    visiting_kets: BTreeSet<String>,
    visiting_gates: BTreeSet<String>,
    visiting_states: BTreeSet<String>,
}

impl Resolver<'_> {
    fn resolve_constants(&mut self) -> Result<(), LoadError> {
        let mut pending: Vec<(&String, &String)> = self.raw.constants.iter().collect();
        while !pending.is_empty() {
            let mut progressed = false;
            let mut still = Vec::new();
            for (name, src) in pending {
                match expr::eval(src, &self.constants) {
                    Ok(v) => {
                        self.constants.insert(name.clone(), v);
                        progressed = true;
                    }
                    Err(expr::ExprError::UnknownName { name: other })
                        if self.raw.constants.contains_key(&other) =>
                    {
                        still.push((name, src));
                    }
                    Err(e) => {
                        let loc = format!("constants.{name}");
                        return Err(match e {
                            expr::ExprError::UnknownName { name: other } => {
                                missing(loc, format!("unknown name {other:?}"))
                            }
                            other => shape(loc, other.to_string()),
                        });
                    }
                }
            }
            if !progressed && !still.is_empty() {
                let names: Vec<&str> = still.iter().map(|(n, _)| n.as_str()).collect();
                return Err(missing(
                    "constants",
                    format!("circular constant definitions: {}", names.join(", ")),
                ));
            }
            pending = still;
        }
        Ok(())
    }

    fn entry(&self, e: &Entry, loc: &str) -> Result<C64, LoadError> {
        let value = match e {
            Entry::Real(x) => C64::new(*x, 0.0),
            Entry::Expr(s) => expr::eval(s, &self.constants).map_err(|err| match err {
                expr::ExprError::UnknownName { name } => {
                    missing(loc, format!("unknown name {name:?}"))
                }
                other => shape(loc, other.to_string()),
            })?,
            Entry::Pair(re, im) => {
                C64::new(self.component(re, loc)?, self.component(im, loc)?)
            }
        };
        if !value.re.is_finite() || !value.im.is_finite() {
            return Err(shape(loc, "value is not finite"));
        }
        Ok(value)
    }

    fn component(&self, c: &Component, loc: &str) -> Result<f64, LoadError> {
        let v = match c {
            Component::Real(x) => C64::new(*x, 0.0),
            Component::Expr(s) => expr::eval(s, &self.constants).map_err(|err| match err {
                expr::ExprError::UnknownName { name } => {
                    missing(loc, format!("unknown name {name:?}"))
                }
                other => shape(loc, other.to_string()),
            })?,
        };
        if v.im != 0.0 {
            return Err(shape(loc, "component of a [re, im] pair must be real"));
        }
        Ok(v.re)
    }

    fn real_entry(&self, e: &Entry, loc: &str) -> Result<f64, LoadError> {
        let v = self.entry(e, loc)?;
        if v.im != 0.0 {
            return Err(shape(loc, "value must be real"));
        }
        Ok(v.re)
    }

    fn ket(&mut self, spec: &KetSpec, loc: &str) -> Result<CKet, LoadError> {
        match spec {
            KetSpec::Name(name) => self.ket_by_name(name, loc),
            KetSpec::Amplitudes(AmplitudeSpec { dim, amplitudes }) => {
                if let Some(d) = dim {
                    if *d != amplitudes.len() {
                        return Err(shape(
                            loc,
                            format!("{} amplitudes declared dim {d}", amplitudes.len()),
                        ));
                    }
                }
                self.inline_ket(amplitudes, loc)
            }
            KetSpec::Bare(amplitudes) => self.inline_ket(amplitudes, loc),
            KetSpec::Basis(b) => {
                if b.dim == 0 || b.dim > MAX_KET_DIM {
                    return Err(shape(loc, format!("unsupported basis dimension {}", b.dim)));
                }
                CKet::basis(b.dim, b.basis).map_err(|e| core(loc, e))
            }
            KetSpec::Kron(k) => {
                if k.kron.is_empty() {
                    return Err(shape(loc, "kron of no kets"));
                }
                let mut out: Option<CKet> = None;
                for (i, part) in k.kron.iter().enumerate() {
                    let p = self.ket(part, &format!("{loc}.kron[{i}]"))?;
                    out = Some(match out {
                        None => p,
                        Some(acc) => {
                            if acc.dim().saturating_mul(p.dim()) > MAX_KET_DIM {
                                return Err(shape(loc, "kron result exceeds the supported size"));
                            }
                            acc.kron(&p)
                        }
                    });
                }
                Ok(out.expect("nonempty kron"))
            }
        }
    }

    fn inline_ket(&self, amplitudes: &[Entry], loc: &str) -> Result<CKet, LoadError> {
        if amplitudes.len() > MAX_KET_DIM {
            return Err(shape(loc, "ket exceeds the supported size"));
        }
        let mut amps = Vec::with_capacity(amplitudes.len());
        for (i, e) in amplitudes.iter().enumerate() {
            amps.push(self.entry(e, &format!("{loc}[{i}]"))?);
        }
        CKet::new(amps).map_err(|e| core(loc, e))
    }

    fn ket_by_name(&mut self, name: &str, loc: &str) -> Result<CKet, LoadError> {
        if let Some(k) = self.kets.get(name) {
            return Ok(k.clone());
        }
        if let Some(spec) = self.raw.kets.get(name) {
            if !self.visiting_kets.insert(name.to_string()) {
                return Err(missing(
                    loc,
                    format!("circular ket definition involving {name:?}"),
                ));
            }
            let spec = spec.clone();
            let def_loc = format!("kets.{name}");
            let resolved = self.ket(&spec, &def_loc)?;
            self.visiting_kets.remove(name);
            self.kets.insert(name.to_string(), resolved.clone());
            return Ok(resolved);
        }
        self.builtins
            .ket(name)
            .map_err(|_| missing(loc, format!("unknown ket {name:?}")))
    }

    fn matrix(&mut self, spec: &MatrixSpec, loc: &str) -> Result<CMatrix, LoadError> {
        match spec {
            MatrixSpec::Name(name) => self.gate_by_name(name, loc),
            MatrixSpec::Rows(rows) => {
                if rows.is_empty() || rows.iter().any(|r| r.is_empty()) {
                    return Err(shape(loc, "matrix rows must not be empty"));
                }
                let width = rows[0].len();
                let mut data = Vec::with_capacity(rows.len());
                for (i, row) in rows.iter().enumerate() {
                    if row.len() != width {
                        return Err(shape(loc, format!("row {i} has ragged width")));
                    }
                    let mut out = Vec::with_capacity(width);
                    for (j, e) in row.iter().enumerate() {
                        out.push(self.entry(e, &format!("{loc}[{i}][{j}]"))?);
                    }
                    data.push(out);
                }
                CMatrix::from_rows(&data).map_err(|e| core(loc, e))
            }
            MatrixSpec::Project(p) => {
                let ket = self.ket(&p.project, &format!("{loc}.project"))?;
                ket.projector(DEFAULT_TOL).map_err(|e| core(loc, e))
            }
            MatrixSpec::Compose(c) => {
                if c.compose.is_empty() {
                    return Err(shape(loc, "compose of no matrices"));
                }
                let mut out: Option<CMatrix> = None;
                for (i, part) in c.compose.iter().enumerate() {
                    let m = self.matrix(part, &format!("{loc}.compose[{i}]"))?;
                    out = Some(match out {
                        None => m,
                        Some(acc) => acc.mul(&m).map_err(|e| core(loc, e))?,
                    });
                }
                Ok(out.expect("nonempty compose"))
            }
            MatrixSpec::Kron(k) => {
                if k.kron.is_empty() {
                    return Err(shape(loc, "kron of no matrices"));
                }
                let mut out: Option<CMatrix> = None;
                for (i, part) in k.kron.iter().enumerate() {
                    let m = self.matrix(part, &format!("{loc}.kron[{i}]"))?;
                    out = Some(match out {
                        None => m,
                        Some(acc) => {
                            if acc.rows().saturating_mul(m.rows()) > MAX_OBJECT_DIM
                                || acc.cols().saturating_mul(m.cols()) > MAX_OBJECT_DIM
                            {
                                return Err(shape(loc, "kron result exceeds the supported size"));
                            }
                            acc.kron(&m)
                        }
                    });
                }
                Ok(out.expect("nonempty kron"))
            }
        }
    }

    fn gate_by_name(&mut self, name: &str, loc: &str) -> Result<CMatrix, LoadError> {
        if let Some(g) = self.gates.get(name) {
            return Ok(g.clone());
        }
        if let Some(spec) = self.raw.gates.get(name) {
            if !self.visiting_gates.insert(name.to_string()) {
                return Err(missing(
                    loc,
                    format!("circular gate definition involving {name:?}"),
                ));
            }
            let spec = spec.clone();
            let def_loc = format!("gates.{name}");
            let resolved = self.matrix(&spec, &def_loc)?;
            self.visiting_gates.remove(name);
            self.gates.insert(name.to_string(), resolved.clone());
            return Ok(resolved);
        }
        if let Some(rest) = name.strip_prefix("I(") {
            if let Some(digits) = rest.strip_suffix(')') {
                if let Ok(d) = digits.parse::<usize>() {
                    if d > MAX_OBJECT_DIM {
                        return Err(shape(
                            loc,
                            format!("identity dimension {d} exceeds the supported {MAX_OBJECT_DIM}"),
                        ));
                    }
                }
            }
        }
        self.builtins
            .gate(name)
            .map_err(|_| missing(loc, format!("unknown gate {name:?}")))
    }

    fn resolve_bridging(&mut self) -> Result<BridgingSet, LoadError> {
        let spec = self.raw.bridging.clone();
        match spec {
            None => BridgingSet::trivial(&self.timeline).map_err(|e| core("bridging", e)),
            Some(BridgingSpec::Word(w)) if w == "trivial" => {
                BridgingSet::trivial(&self.timeline).map_err(|e| core("bridging", e))
            }
            Some(BridgingSpec::Word(w)) => Err(shape(
                "bridging",
                format!("unknown bridging keyword {w:?} (only \"trivial\")"),
            )),
            Some(BridgingSpec::Steps(steps)) => {
                if steps.len() != self.timeline.len() - 1 {
                    return Err(shape(
                        "bridging",
                        format!(
                            "{} steps for a timeline of {} slots (need {})",
                            steps.len(),
                            self.timeline.len(),
                            self.timeline.len() - 1
                        ),
                    ));
                }
                let mut mats = Vec::with_capacity(steps.len());
                for (j, s) in steps.iter().enumerate() {
                    mats.push(self.matrix(s, &format!("bridging[{j}]"))?);
                }
                BridgingSet::new(&self.timeline, mats, DEFAULT_TOL)
                    .map_err(|e| core("bridging", e))
            }
        }
    }

    fn chain(&mut self, spec: &ChainSpec, loc: &str) -> Result<HistoryState, LoadError> {
        match spec {
            ChainSpec::Terms(TermsSpec { terms }) => {
                if terms.is_empty() {
                    return Err(shape(loc, "history state needs at least one term"));
                }
                let n = self.timeline.len();
                let mut out = Vec::with_capacity(terms.len());
                for (i, term) in terms.iter().enumerate() {
                    let tloc = format!("{loc}.terms[{i}]");
                    let coeff = self.entry(&term.coeff, &format!("{tloc}.coeff"))?;
                    let factors = match (&term.factors, &term.trajectory) {
                        (Some(f), None) => {
                            if f.len() != n {
                                return Err(shape(
                                    &tloc,
                                    format!("{} factors for {n} slots", f.len()),
                                ));
                            }
                            let mut mats = Vec::with_capacity(n);
                            for (j, m) in f.iter().enumerate() {
                                mats.push(self.matrix(m, &format!("{tloc}.factors[{j}]"))?);
                            }
                            mats
                        }
                        (None, Some(t)) => {
                            if t.len() != n {
                                return Err(shape(
                                    &tloc,
                                    format!("trajectory of {} kets for {n} slots", t.len()),
                                ));
                            }
                            let mut mats = Vec::with_capacity(n);
                            for (j, k) in t.iter().enumerate() {
                                let jloc = format!("{tloc}.trajectory[{j}]");
                                let ket = self.ket(k, &jloc)?;
                                mats.push(ket.projector(DEFAULT_TOL).map_err(|e| core(&jloc, e))?);
                            }
                            mats
                        }
                        (Some(_), Some(_)) => {
                            return Err(shape(&tloc, "give factors or a trajectory, not both"))
                        }
                        (None, None) => {
                            return Err(shape(&tloc, "term needs factors or a trajectory"))
                        }
                    };
                    out.push(ChainTerm::new(coeff, factors));
                }
                HistoryState::new(self.timeline.clone(), out).map_err(|e| core(loc, e))
            }
            ChainSpec::Combine(c) => {
                if c.combine.is_empty() {
                    return Err(shape(loc, "combination of no states"));
                }
                let mut acc: Option<HistoryState> = None;
                for (i, part) in c.combine.iter().enumerate() {
                    let ploc = format!("{loc}.combine[{i}]");
                    let coeff = self.entry(&part.coeff, &format!("{ploc}.coeff"))?;
                    let state = self.state_by_name(&part.state, &ploc)?;
                    let scaled = state.scale(coeff);
                    acc = Some(match acc {
                        None => scaled,
                        Some(sum) => sum.add(&scaled).map_err(|e| core(&ploc, e))?,
                    });
                }
                Ok(acc.expect("nonempty combination"))
            }
        }
    }

    fn state_by_name(&mut self, name: &str, loc: &str) -> Result<HistoryState, LoadError> {
        if let Some(s) = self.states.get(name) {
            return Ok(s.clone());
        }
        let Some(spec) = self.raw.history_states.get(name) else {
            return Err(missing(loc, format!("unknown history state {name:?}")));
        };
        if !self.visiting_states.insert(name.to_string()) {
            return Err(missing(
                loc,
                format!("circular history state definition involving {name:?}"),
            ));
        }
        let spec = spec.clone();
        let def_loc = format!("history_states.{name}");
        let resolved = self.chain(&spec, &def_loc)?;
        self.visiting_states.remove(name);
        self.states.insert(name.to_string(), resolved.clone());
        Ok(resolved)
    }

    fn family(&mut self, name: &str, spec: &FamilySpec) -> Result<ScenarioFamily, LoadError> {
        let loc = format!("families.{name}");
        if spec.members.is_empty() {
            return Err(shape(&loc, "family needs at least one member"));
        }
        let mut members = Vec::with_capacity(spec.members.len());
        for (i, m) in spec.members.iter().enumerate() {
            members.push(self.state_by_name(m, &format!("{loc}.members[{i}]"))?);
        }
        let labels = spec.labels.clone().unwrap_or_else(|| spec.members.clone());
        let family = Family::with_labels(members, labels).map_err(|e| core(&loc, e))?;
        Ok(ScenarioFamily {
            family,
            members: spec.members.clone(),
            variant: spec.variant.clone(),
        })
    }

    fn operator(
        &mut self,
        name: &str,
        spec: &OperatorSpec,
        families: &BTreeMap<String, ScenarioFamily>,
    ) -> Result<ScenarioOperator, LoadError> {
        let loc = format!("operators.{name}");
        match spec {
            OperatorSpec::Product(ProductOperatorSpec { factors }) => {
                if factors.len() != self.timeline.len() {
                    return Err(shape(
                        &loc,
                        format!(
                            "{} factors for {} slots",
                            factors.len(),
                            self.timeline.len()
                        ),
                    ));
                }
                let mut mats = Vec::with_capacity(factors.len());
                for (j, m) in factors.iter().enumerate() {
                    mats.push(self.matrix(m, &format!("{loc}.factors[{j}]"))?);
                }
                let op = ProductHistoryOperator::new(self.timeline.clone(), mats)
                    .map_err(|e| core(&loc, e))?;
                Ok(ScenarioOperator::Product(op))
            }
            OperatorSpec::Spectral(SpectralOperatorSpec { spectral }) => {
                let SpectralBody { family, values } = spectral;
                let Some(f) = families.get(family) else {
                    return Err(missing(&loc, format!("unknown family {family:?}")));
                };
                if values.len() != f.family.len() {
                    return Err(shape(
                        &loc,
                        format!(
                            "{} values for a family of {} members",
                            values.len(),
                            f.family.len()
                        ),
                    ));
                }
                let mut out = Vec::with_capacity(values.len());
                for (i, v) in values.iter().enumerate() {
                    out.push(self.real_entry(v, &format!("{loc}.spectral.values[{i}]"))?);
                }
                Ok(ScenarioOperator::Spectral { family: family.clone(), values: out })
            }
        }
    }

    fn time_index(&self, t: &TimeRef, loc: &str) -> Result<usize, LoadError> {
        match t {
            TimeRef::Index(i) => Ok(*i),
            TimeRef::Label(l) => self
                .timeline
                .index_of(l)
                .map_err(|_| missing(loc, format!("no slot labeled {l:?}"))),
        }
    }

    fn marking(
        &mut self,
        name: &str,
        spec: &MarkingSpec,
        bridging: &BridgingSet,
    ) -> Result<MarkedSystem, LoadError> {
        let loc = format!("markings.{name}");
        let product: usize = spec.ancilla.iter().product();
        if spec.ancilla.is_empty() || product == 0 || product > MAX_OBJECT_DIM {
            return Err(shape(
                &loc,
                format!("ancilla registers {:?} outside the supported size", spec.ancilla),
            ));
        }
        let system_init = self.ket(&spec.system_init, &format!("{loc}.system_init"))?;
        let ancilla_init = match &spec.ancilla_init {
            Some(k) => self.ket(k, &format!("{loc}.ancilla_init"))?,
            None => CKet::basis(product, 0).map_err(|e| core(&loc, e))?,
        };
        let mut schedule = Vec::with_capacity(spec.schedule.len());
        for (i, step) in spec.schedule.iter().enumerate() {
            let sloc = format!("{loc}.schedule[{i}]");
            let time = self.time_index(&step.time, &format!("{sloc}.time"))?;
            if step.controls.is_empty() {
                return Err(shape(&sloc, "step needs at least one control"));
            }
            let mut controls = Vec::with_capacity(step.controls.len());
            for (j, c) in step.controls.iter().enumerate() {
                let cloc = format!("{sloc}.controls[{j}]");
                let when = self.matrix(&c.when, &format!("{cloc}.when"))?;
                let apply = self.matrix(&c.apply, &format!("{cloc}.apply"))?;
                controls.push((when, apply));
            }
            schedule.push(MarkingStep::new(time, controls));
        }
        MarkedSystem::new(
            self.timeline.clone(),
            bridging.clone(),
            spec.ancilla.clone(),
            system_init,
            ancilla_init,
            schedule,
            DEFAULT_TOL,
        )
        .map_err(|e| core(&loc, e))
    }

    fn check(
        &mut self,
        value: &serde_json::Value,
        idx: usize,
        families: &BTreeMap<String, ScenarioFamily>,
        operators: &BTreeMap<String, ScenarioOperator>,
        markings: &BTreeMap<String, MarkedSystem>,
    ) -> Result<CheckSpec, LoadError> {
        let loc = format!("checks[{idx}]");
        let mut check = CheckSpec::from_value(value).map_err(|e| shape(&loc, e))?;
        if check.name().is_empty() {
            return Err(shape(&loc, "check name must not be empty"));
        }
        if let Some(tol) = check.tol_override() {
            if !(tol.is_finite() && tol > 0.0) {
                return Err(shape(&loc, "tol must be a positive finite number"));
            }
        }
        match &mut check {
            CheckSpec::Validate(c) => {
                let f = family_of(families, &c.family, &loc)?;
                if !matches!(c.expect, ExpectOutcome::Pass | ExpectOutcome::Fail) {
                    return Err(shape(&loc, "validate checks expect \"pass\" or \"fail\""));
                }
                if let Some(w) = &c.expect_weights {
                    if w.len() != f.family.len() {
                        return Err(shape(
                            &loc,
                            format!(
                                "{} expected weights for {} members",
                                w.len(),
                                f.family.len()
                            ),
                        ));
                    }
                    c.expect_weights = Some(self.canon_reals(w, &loc)?);
                }
                if let Some(e) = &c.expect_coefficients {
                    if e.len() != f.family.len() {
                        return Err(shape(
                            &loc,
                            format!(
                                "{} expected coefficients for {} members",
                                e.len(),
                                f.family.len()
                            ),
                        ));
                    }
                    c.expect_coefficients = Some(self.canon_entries(e, &loc)?);
                }
            }
            CheckSpec::Weight(c) => {
                self.state_ref(&c.state, &loc)?;
                let w = self.real_entry(&c.expect, &loc)?;
                if w < 0.0 {
                    return Err(shape(&loc, "expected weight must be nonnegative"));
                }
                c.expect = rentry(w);
            }
            CheckSpec::Inner(c) => {
                self.state_ref(&c.left, &loc)?;
                self.state_ref(&c.right, &loc)?;
                c.expect = centry(self.entry(&c.expect, &loc)?);
            }
            CheckSpec::Decompose(c) => {
                let f = family_of(families, &c.family, &loc)?;
                self.state_ref(&c.state, &loc)?;
                if c.expect_coefficients.len() != f.family.len() {
                    return Err(shape(
                        &loc,
                        format!(
                            "{} expected coefficients for {} members",
                            c.expect_coefficients.len(),
                            f.family.len()
                        ),
                    ));
                }
                c.expect_coefficients = self.canon_entries(&c.expect_coefficients, &loc)?;
            }
            CheckSpec::Probabilities(c) => {
                self.state_ref(&c.state, &loc)?;
                match (&c.family, &c.observable) {
                    (Some(fname), None) => {
                        let f = family_of(families, fname, &loc)?;
                        let Some(e) = &c.expect else {
                            return Err(shape(&loc, "family probabilities need \"expect\""));
                        };
                        if c.expect_distribution.is_some() {
                            return Err(shape(
                                &loc,
                                "\"expect_distribution\" applies to observables only",
                            ));
                        }
                        if e.len() != f.family.len() {
                            return Err(shape(
                                &loc,
                                format!(
                                    "{} expected probabilities for {} members",
                                    e.len(),
                                    f.family.len()
                                ),
                            ));
                        }
                        c.expect = Some(self.canon_reals(e, &loc)?);
                    }
                    (None, Some(oname)) => {
                        let Some(op) = operators.get(oname) else {
                            return Err(missing(&loc, format!("unknown operator {oname:?}")));
                        };
                        if !matches!(op, ScenarioOperator::Spectral { .. }) {
                            return Err(shape(
                                &loc,
                                format!("operator {oname:?} is not a spectral observable"),
                            ));
                        }
                        let Some(d) = &c.expect_distribution else {
                            return Err(shape(
                                &loc,
                                "observable probabilities need \"expect_distribution\"",
                            ));
                        };
                        if c.expect.is_some() {
                            return Err(shape(&loc, "\"expect\" applies to families only"));
                        }
                        let mut canon = Vec::with_capacity(d.len());
                        for (v, p) in d {
                            canon.push((
                                rentry(self.real_entry(v, &loc)?),
                                rentry(self.real_entry(p, &loc)?),
                            ));
                        }
                        c.expect_distribution = Some(canon);
                    }
                    _ => {
                        return Err(shape(
                            &loc,
                            "give exactly one of \"family\" or \"observable\"",
                        ))
                    }
                }
            }
            CheckSpec::Eigenhistories(c) => {
                if c.operators.is_empty() {
                    return Err(shape(&loc, "eigenhistories need at least one operator"));
                }
                for name in &c.operators {
                    let Some(op) = operators.get(name) else {
                        return Err(missing(&loc, format!("unknown operator {name:?}")));
                    };
                    if !matches!(op, ScenarioOperator::Product(_)) {
                        return Err(shape(
                            &loc,
                            format!("operator {name:?} is not a product operator"),
                        ));
                    }
                }
                if !matches!(c.expect, ExpectOutcome::Pass | ExpectOutcome::Error) {
                    return Err(shape(
                        &loc,
                        "eigenhistories checks expect \"pass\" or \"error\"",
                    ));
                }
                if let Some(members) = &c.expect_members {
                    for m in members {
                        self.state_ref(m, &loc)?;
                    }
                }
                if let Some(vectors) = &c.expect_eigenvectors {
                    if vectors.len() != self.timeline.total_dim() {
                        return Err(shape(
                            &loc,
                            format!(
                                "{} expected eigenvectors for a history space of dimension {}",
                                vectors.len(),
                                self.timeline.total_dim()
                            ),
                        ));
                    }
                    let mut canon = Vec::with_capacity(vectors.len());
                    for (i, v) in vectors.iter().enumerate() {
                        let k = self.ket(v, &format!("{loc}.expect_eigenvectors[{i}]"))?;
                        if k.dim() != self.timeline.total_dim() {
                            return Err(shape(
                                &loc,
                                format!(
                                    "eigenvector {i} has dimension {}, history space has {}",
                                    k.dim(),
                                    self.timeline.total_dim()
                                ),
                            ));
                        }
                        canon.push(canon_ket(&k));
                    }
                    c.expect_eigenvectors = Some(canon);
                }
                if let Some(values) = &c.expect_eigenvalues {
                    let Some(vectors) = &c.expect_eigenvectors else {
                        return Err(shape(
                            &loc,
                            "\"expect_eigenvalues\" needs \"expect_eigenvectors\"",
                        ));
                    };
                    if values.len() != vectors.len()
                        || values.iter().any(|row| row.len() != c.operators.len())
                    {
                        return Err(shape(
                            &loc,
                            format!(
                                "expected eigenvalues must be {} rows of {} (one value per \
                                 operator for each expected eigenvector)",
                                vectors.len(),
                                c.operators.len()
                            ),
                        ));
                    }
                    let mut canon = Vec::with_capacity(values.len());
                    for row in values {
                        canon.push(self.canon_reals(row, &loc)?);
                    }
                    c.expect_eigenvalues = Some(canon);
                }
            }
            CheckSpec::SimulateMarking(c) => {
                let m = self.marking_ref(markings, &c.marking, &loc)?;
                if let Some(spec) = &c.expect_state {
                    let joint_dim = m.timeline().last_dim() * m.ancilla_dim();
                    let k = self.ket(spec, &format!("{loc}.expect_state"))?;
                    if k.dim() != joint_dim {
                        return Err(shape(
                            &loc,
                            format!(
                                "expected state has dimension {}, joint space has {joint_dim}",
                                k.dim()
                            ),
                        ));
                    }
                    c.expect_state = Some(canon_ket(&k));
                }
            }
            CheckSpec::BranchMap(c) => {
                let m = self.marking_ref(markings, &c.marking, &loc)?;
                let f = family_of(families, &c.family, &loc)?;
                if !matches!(c.expect, ExpectOutcome::Pass | ExpectOutcome::Misaligned) {
                    return Err(shape(
                        &loc,
                        "branch-map checks expect \"pass\" or \"misaligned\"",
                    ));
                }
                if let Some(labels) = &c.expect_labels {
                    if labels.len() != f.family.len() {
                        return Err(shape(
                            &loc,
                            format!(
                                "{} expected labels for {} members",
                                labels.len(),
                                f.family.len()
                            ),
                        ));
                    }
                    let anc = m.ancilla_dim();
                    let mut canon = Vec::with_capacity(labels.len());
                    for (i, l) in labels.iter().enumerate() {
                        match l {
                            None => canon.push(None),
                            Some(spec) => {
                                let lloc = format!("{loc}.expect_labels[{i}]");
                                let k = self.ket(spec, &lloc)?;
                                if k.dim() != anc {
                                    return Err(shape(
                                        &lloc,
                                        format!(
                                            "label has dimension {}, ancilla has {anc}",
                                            k.dim()
                                        ),
                                    ));
                                }
                                canon.push(Some(canon_ket(&k)));
                            }
                        }
                    }
                    c.expect_labels = Some(canon);
                }
            }
            CheckSpec::Sequential(c) => {
                let m = self.marking_ref(markings, &c.marking, &loc)?;
                if c.plans.is_empty() {
                    return Err(shape(&loc, "sequential check needs at least one plan"));
                }
                let dims = m.ancilla_dims().to_vec();
                let mut ranges: Vec<Range<usize>> = Vec::with_capacity(c.plans.len());
                let mut canon_plans = Vec::with_capacity(c.plans.len());
                for (i, plan) in c.plans.iter().enumerate() {
                    let ploc = format!("{loc}.plans[{i}]");
                    let range = match plan.registers {
                        RegistersSpec::One(r) => r..r + 1,
                        RegistersSpec::Range([s, e]) => s..e,
                    };
                    if range.start >= range.end || range.end > dims.len() {
                        return Err(shape(
                            &ploc,
                            format!(
                                "register range {}..{} invalid for {} registers",
                                range.start,
                                range.end,
                                dims.len()
                            ),
                        ));
                    }
                    for prior in &ranges {
                        if range.start < prior.end && prior.start < range.end {
                            return Err(shape(&ploc, "plans overlap on ancilla registers"));
                        }
                    }
                    let sub: usize = dims[range.clone()].iter().product();
                    if plan.basis.len() != sub {
                        return Err(shape(
                            &ploc,
                            format!(
                                "{} basis vectors for measured dimension {sub}",
                                plan.basis.len()
                            ),
                        ));
                    }
                    let mut basis = Vec::with_capacity(plan.basis.len());
                    for (j, b) in plan.basis.iter().enumerate() {
                        let bloc = format!("{ploc}.basis[{j}]");
                        let k = self.ket(b, &bloc)?;
                        if k.dim() != sub {
                            return Err(shape(
                                &bloc,
                                format!(
                                    "basis vector has dimension {}, measured registers have {sub}",
                                    k.dim()
                                ),
                            ));
                        }
                        basis.push(canon_ket(&k));
                    }
                    family_of(families, &plan.family, &ploc)?;
                    canon_plans.push(PlanSpec {
                        registers: RegistersSpec::Range([range.start, range.end]),
                        basis,
                        family: plan.family.clone(),
                    });
                    ranges.push(range);
                }
                let stage1 = family_of(families, &c.plans[0].family, &loc)?;
                let stage1_outcomes = canon_plans[0].basis.len();
                c.plans = canon_plans;
                if let Some(e) = &c.expect_marginals {
                    if e.len() != stage1_outcomes {
                        return Err(shape(
                            &loc,
                            format!(
                                "{} expected marginals for {stage1_outcomes} outcomes",
                                e.len()
                            ),
                        ));
                    }
                    c.expect_marginals = Some(self.canon_reals(e, &loc)?);
                }
                if let Some(members) = &c.expect_members {
                    if members.len() != stage1_outcomes {
                        return Err(shape(
                            &loc,
                            format!(
                                "{} expected members for {stage1_outcomes} outcomes",
                                members.len()
                            ),
                        ));
                    }
                    for m in members.iter().flatten() {
                        if !stage1.family.labels().iter().any(|l| l == m) {
                            return Err(missing(
                                &loc,
                                format!("no member labeled {m:?} in the first stage's family"),
                            ));
                        }
                    }
                }
                if let Some(cond) = &c.expect_conditionals {
                    if c.plans.len() < 2 {
                        return Err(shape(
                            &loc,
                            "\"expect_conditionals\" needs at least two stages",
                        ));
                    }
                    let stage2_outcomes = c.plans[1].basis.len();
                    if cond.len() != stage1_outcomes
                        || cond.iter().any(|row| row.len() != stage2_outcomes)
                    {
                        return Err(shape(
                            &loc,
                            format!(
                                "expected conditionals must be {stage1_outcomes} rows of \
                                 {stage2_outcomes}"
                            ),
                        ));
                    }
                    let mut canon = Vec::with_capacity(cond.len());
                    for row in cond {
                        canon.push(self.canon_reals(row, &loc)?);
                    }
                    c.expect_conditionals = Some(canon);
                }
                if let Some(joints) = &c.expect_leaf_joints {
                    c.expect_leaf_joints = Some(self.canon_reals(joints, &loc)?);
                }
            }
        }
        Ok(check)
    }

    fn state_ref(&mut self, name: &str, loc: &str) -> Result<(), LoadError> {
        self.state_by_name(name, loc).map(|_| ())
    }

    fn marking_ref<'m>(
        &self,
        markings: &'m BTreeMap<String, MarkedSystem>,
        name: &str,
        loc: &str,
    ) -> Result<&'m MarkedSystem, LoadError> {
        markings
            .get(name)
            .ok_or_else(|| missing(loc, format!("unknown marking {name:?}")))
    }

    fn canon_entries(&self, entries: &[Entry], loc: &str) -> Result<Vec<Entry>, LoadError> {
        entries.iter().map(|e| Ok(centry(self.entry(e, loc)?))).collect()
    }

    fn canon_reals(&self, entries: &[Entry], loc: &str) -> Result<Vec<Entry>, LoadError> {
        entries.iter().map(|e| Ok(rentry(self.real_entry(e, loc)?))).collect()
    }
}

fn family_of<'f>(
    families: &'f BTreeMap<String, ScenarioFamily>,
    name: &str,
    loc: &str,
) -> Result<&'f ScenarioFamily, LoadError> {
    families
        .get(name)
        .ok_or_else(|| missing(loc, format!("unknown family {name:?}")))
}

/// Drops the sign of a negative zero so canonical output is uniform.
fn num(x: f64) -> f64 {
    if x == 0.0 {
        0.0
    } else {
        x
    }
}

fn rentry(x: f64) -> Entry {
    Entry::Real(num(x))
}

fn centry(z: C64) -> Entry {
    Entry::Pair(Component::Real(num(z.re)), Component::Real(num(z.im)))
}

fn canon_ket(k: &CKet) -> KetSpec {
    KetSpec::Bare(k.amplitudes().iter().map(|&z| centry(z)).collect())
}

fn canon_matrix(m: &CMatrix) -> MatrixSpec {
    let mut rows = Vec::with_capacity(m.rows());
    for i in 0..m.rows() {
        rows.push((0..m.cols()).map(|j| centry(m.at(i, j))).collect());
    }
    MatrixSpec::Rows(rows)
}

fn canon_chain(s: &HistoryState) -> ChainSpec {
    ChainSpec::Terms(TermsSpec {
        terms: s
            .terms()
            .iter()
            .map(|t| TermSpec {
                coeff: centry(t.coeff),
                factors: Some(t.factors.iter().map(canon_matrix).collect()),
                trajectory: None,
            })
            .collect(),
    })
}

fn canon_operator(o: &ScenarioOperator) -> OperatorSpec {
    match o {
        ScenarioOperator::Product(p) => OperatorSpec::Product(ProductOperatorSpec {
            factors: p.factors().iter().map(canon_matrix).collect(),
        }),
        ScenarioOperator::Spectral { family, values } => {
            OperatorSpec::Spectral(SpectralOperatorSpec {
                spectral: SpectralBody {
                    family: family.clone(),
                    values: values.iter().map(|&v| rentry(v)).collect(),
                },
            })
        }
    }
}

fn canon_marking(m: &MarkedSystem) -> MarkingSpec {
    MarkingSpec {
        ancilla: m.ancilla_dims().to_vec(),
        system_init: canon_ket(m.system_init()),
        ancilla_init: Some(canon_ket(m.ancilla_init())),
        schedule: m
            .schedule()
            .iter()
            .map(|s| StepSpec {
                time: TimeRef::Index(s.time_index),
                controls: s
                    .controls
                    .iter()
                    .map(|(p, v)| ControlSpec { when: canon_matrix(p), apply: canon_matrix(v) })
                    .collect(),
            })
            .collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mini() -> String {
        r#"{
            "version": 1,
            "id": "mini",
            "timeline": [
                {"label": "t1", "dim": 2},
                {"label": "t2", "dim": 2}
            ],
            "bridging": ["H"],
            "constants": {"s": "1/sqrt(2)", "twice_s": "2*s"},
            "kets": {
                "plus": ["s", "s"],
                "pair": {"kron": ["plus", "0"]}
            },
            "gates": {
                "flip2": {"compose": ["sx", "sx"]},
                "pp": {"project": "plus"},
                "xx": {"kron": ["sx", "sx"]}
            },
            "history_states": {
                "up": {"terms": [{"trajectory": ["z+", "z-"]}]},
                "down": {"terms": [{"trajectory": ["z-", "z+"]}]},
                "tilted": {"combine": [
                    {"coeff": "s", "state": "up"},
                    {"coeff": "s", "state": "down"}
                ]}
            },
            "families": {
                "pairbasis": {"members": ["up", "down"], "variant": "corrected"}
            },
            "operators": {
                "zz": {"factors": ["sz", "sz"]}
            },
            "markings": {
                "tag": {
                    "ancilla": [2],
                    "system_init": "z+",
                    "schedule": [
                        {"time": "t2", "controls": [
                            {"when": {"project": "0"}, "apply": "I(2)"},
                            {"when": {"project": "1"}, "apply": "sx"}
                        ]}
                    ]
                }
            },
            "checks": [
                {"cmd": "weight", "name": "up-weight", "state": "up", "expect": "1/2"},
                {"cmd": "inner", "name": "cross", "left": "up", "right": "down", "expect": 0}
            ]
        }"#
        .to_string()
    }

    #[test]
    fn mini_scenario_resolves() {
        let s = Scenario::load_str(&mini()).unwrap();
        assert_eq!(s.timeline.len(), 2);
        assert_eq!(s.kets["pair"].dim(), 4);
        assert_eq!(s.gates["xx"].rows(), 4);
        assert!(s.gates["flip2"].sub(&CMatrix::identity(2)).unwrap().max_abs() <= 1e-15);
        assert_eq!(s.history_states["tilted"].terms().len(), 2);
        assert_eq!(s.families["pairbasis"].family.labels(), &["up", "down"]);
        assert_eq!(s.families["pairbasis"].variant.as_deref(), Some("corrected"));
        assert_eq!(s.markings["tag"].schedule()[0].time_index, 1);
        assert_eq!(s.checks.len(), 2);
        let c = (2f64).sqrt().recip();
        assert!((s.constants["twice_s"] - C64::new(2.0 * c, 0.0)).norm() <= 1e-15);
    }

    #[test]
    fn canonical_form_round_trips() {
        let s1 = Scenario::load_str(&mini()).unwrap();
        let text = s1.canonical_json();
        let s2 = Scenario::load_str(&text).unwrap();
        assert_eq!(text, s2.canonical_json());
    }

    fn patch(body: &str, from: &str, to: &str) -> String {
        assert!(body.contains(from), "patch target {from:?} missing");
        body.replacen(from, to, 1)
    }

    #[test]
    fn wrong_version_is_a_parse_error() {
        let text = patch(&mini(), "\"version\": 1", "\"version\": 3");
        match Scenario::load_str(&text).unwrap_err() {
            LoadError::Parse { detail } => assert!(detail.contains("version")),
            other => panic!("wrong error: {other}"),
        }
    }

    #[test]
    fn malformed_json_reports_position() {
        match Scenario::load_str("{\"version\": 1,").unwrap_err() {
            LoadError::Parse { detail } => assert!(detail.contains("line")),
            other => panic!("wrong error: {other}"),
        }
    }

    #[test]
    fn declared_dimension_must_match() {
        let text = patch(
            &mini(),
            r#""plus": ["s", "s"]"#,
            r#""plus": {"dim": 3, "amplitudes": ["s", "s"]}"#,
        );
        match Scenario::load_str(&text).unwrap_err() {
            LoadError::Shape { location, detail } => {
                assert_eq!(location, "kets.plus");
                assert!(detail.contains("declared dim 3"));
            }
            other => panic!("wrong error: {other}"),
        }
    }

    #[test]
    fn unknown_gate_is_a_resolution_error() {
        let text = patch(&mini(), r#""bridging": ["H"]"#, r#""bridging": ["Hh"]"#);
        match Scenario::load_str(&text).unwrap_err() {
            LoadError::Resolution { location, detail } => {
                assert_eq!(location, "bridging[0]");
                assert!(detail.contains("Hh"));
            }
            other => panic!("wrong error: {other}"),
        }
    }

    #[test]
    fn circular_constants_are_reported() {
        let text = patch(
            &mini(),
            r#""s": "1/sqrt(2)", "twice_s": "2*s""#,
            r#""s": "1/sqrt(2)", "a": "b+1", "b": "a-1""#,
        );
        match Scenario::load_str(&text).unwrap_err() {
            LoadError::Resolution { detail, .. } => assert!(detail.contains("circular")),
            other => panic!("wrong error: {other}"),
        }
    }

    #[test]
    fn circular_states_are_reported() {
        let text = patch(
            &mini(),
            r#""tilted": {"combine": [
                    {"coeff": "s", "state": "up"},
                    {"coeff": "s", "state": "down"}
                ]}"#,
            r#""tilted": {"combine": [{"coeff": "s", "state": "tilted"}]}"#,
        );
        match Scenario::load_str(&text).unwrap_err() {
            LoadError::Resolution { detail, .. } => assert!(detail.contains("circular")),
            other => panic!("wrong error: {other}"),
        }
    }

    #[test]
    fn duplicate_check_names_are_rejected() {
        let text = patch(&mini(), "\"name\": \"cross\"", "\"name\": \"up-weight\"");
        match Scenario::load_str(&text).unwrap_err() {
            LoadError::Shape { location, detail } => {
                assert_eq!(location, "checks[1]");
                assert!(detail.contains("duplicate"));
            }
            other => panic!("wrong error: {other}"),
        }
    }

    #[test]
    fn unknown_check_fields_are_rejected() {
        let text = patch(
            &mini(),
            r#""state": "up", "expect": "1/2""#,
            r#""state": "up", "expect": "1/2", "expct_more": 1"#,
        );
        match Scenario::load_str(&text).unwrap_err() {
            LoadError::Shape { location, detail } => {
                assert_eq!(location, "checks[0]");
                assert!(detail.contains("expct_more"), "{detail}");
            }
            other => panic!("wrong error: {other}"),
        }
    }

    #[test]
    fn unknown_check_command_is_rejected() {
        let text = patch(&mini(), "\"cmd\": \"inner\"", "\"cmd\": \"inspect\"");
        match Scenario::load_str(&text).unwrap_err() {
            LoadError::Shape { detail, .. } => assert!(detail.contains("inspect")),
            other => panic!("wrong error: {other}"),
        }
    }

    #[test]
    fn term_cannot_mix_factors_and_trajectory() {
        let text = patch(
            &mini(),
            r#""up": {"terms": [{"trajectory": ["z+", "z-"]}]}"#,
            r#""up": {"terms": [{"trajectory": ["z+", "z-"], "factors": ["sx", "sx"]}]}"#,
        );
        match Scenario::load_str(&text).unwrap_err() {
            LoadError::Shape { location, detail } => {
                assert_eq!(location, "history_states.up.terms[0]");
                assert!(detail.contains("not both"));
            }
            other => panic!("wrong error: {other}"),
        }
    }

    #[test]
    fn family_member_must_exist() {
        let text = patch(&mini(), r#""members": ["up", "down"]"#, r#""members": ["up", "dwn"]"#);
        match Scenario::load_str(&text).unwrap_err() {
            LoadError::Resolution { location, detail } => {
                assert_eq!(location, "families.pairbasis.members[1]");
                assert!(detail.contains("dwn"));
            }
            other => panic!("wrong error: {other}"),
        }
    }

    #[test]
    fn oversized_identities_are_rejected() {
        let text = patch(&mini(), r#"{"when": {"project": "0"}, "apply": "I(2)"}"#,
            r#"{"when": {"project": "0"}, "apply": "I(9999)"}"#);
        match Scenario::load_str(&text).unwrap_err() {
            LoadError::Shape { detail, .. } => assert!(detail.contains("9999")),
            other => panic!("wrong error: {other}"),
        }
    }

    #[test]
    fn builtin_names_cannot_be_shadowed() {
        let text = patch(&mini(), r#""plus": ["s", "s"]"#, r#""z+": ["s", "s"]"#);
        let err = Scenario::load_str(&text).unwrap_err();
        match err {
            LoadError::Resolution { detail, .. } | LoadError::Shape { detail, .. } => {
                assert!(detail.contains("z+") || detail.contains("plus"), "{detail}")
            }
            other => panic!("wrong error: {other}"),
        }
    }

    #[test]
    fn probabilities_check_needs_exactly_one_target() {
        let text = patch(
            &mini(),
            r#"{"cmd": "inner", "name": "cross", "left": "up", "right": "down", "expect": 0}"#,
            r#"{"cmd": "probabilities", "name": "p", "state": "up"}"#,
        );
        match Scenario::load_str(&text).unwrap_err() {
            LoadError::Shape { detail, .. } => assert!(detail.contains("exactly one")),
            other => panic!("wrong error: {other}"),
        }
    }
}

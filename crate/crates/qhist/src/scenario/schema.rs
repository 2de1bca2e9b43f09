//! Serialized form of a scenario file.
//!
//! The on-disk format is JSON with a `version` field. Complex numbers are
//! two-element `[re, im]` arrays, expression strings, or bare numbers;
//! matrices are row-major nested arrays; most positions also accept a name
//! that resolves through the registry or the scenario's own definitions.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

/// Current schema version.
pub const SCHEMA_VERSION: u32 = 1;

/// One complex scalar.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(untagged)]
pub enum Entry {
    Real(f64),
    Expr(String),
    Pair(Component, Component),
}

/// One real component of a `[re, im]` pair.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(untagged)]
pub enum Component {
    Real(f64),
    Expr(String),
}

/// A vector: a name, inline amplitudes, a basis vector, or a tensor product.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(untagged)]
pub enum KetSpec {
    Name(String),
    Bare(Vec<Entry>),
    Amplitudes(AmplitudeSpec),
    Basis(BasisSpec),
    Kron(KronKetSpec),
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct AmplitudeSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dim: Option<usize>,
    pub amplitudes: Vec<Entry>,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct BasisSpec {
    pub dim: usize,
    pub basis: usize,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct KronKetSpec {
    pub kron: Vec<KetSpec>,
}

/// A matrix: a name, row-major rows, a projector onto a ket, a product, or
/// a tensor product. Earlier factors of `kron` act on the slower index.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(untagged)]
pub enum MatrixSpec {
    Name(String),
    Rows(Vec<Vec<Entry>>),
    Project(ProjectSpec),
    Compose(ComposeSpec),
    Kron(KronMatrixSpec),
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ProjectSpec {
    pub project: KetSpec,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ComposeSpec {
    pub compose: Vec<MatrixSpec>,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct KronMatrixSpec {
    pub kron: Vec<MatrixSpec>,
}

/// One time slot. `dim` or `parts` (or both, consistently) must be given.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct SlotSpec {
    pub label: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dim: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parts: Option<Vec<usize>>,
}

/// The bridging steps: `"trivial"` or one matrix per adjacent slot pair.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(untagged)]
pub enum BridgingSpec {
    Word(String),
    Steps(Vec<MatrixSpec>),
}

/// A history state: explicit chain terms, or a combination of named states.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(untagged)]
pub enum ChainSpec {
    Terms(TermsSpec),
    Combine(CombineSpec),
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct TermsSpec {
    pub terms: Vec<TermSpec>,
}

/// One chain term: a coefficient and one factor per slot. `trajectory` is
/// shorthand for projector factors onto the listed kets.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct TermSpec {
    #[serde(default = "one", skip_serializing_if = "is_one")]
    pub coeff: Entry,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub factors: Option<Vec<MatrixSpec>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trajectory: Option<Vec<KetSpec>>,
}

fn one() -> Entry {
    Entry::Real(1.0)
}

fn is_one(e: &Entry) -> bool {
    matches!(e, Entry::Real(x) if *x == 1.0)
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct CombineSpec {
    pub combine: Vec<CombinePart>,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct CombinePart {
    pub coeff: Entry,
    pub state: String,
}

/// A family: named members, an optional variant tag, optional labels
/// (member names by default).
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct FamilySpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub variant: Option<String>,
    pub members: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub labels: Option<Vec<String>>,
}

/// An operator: a hermitian product chain (one factor per slot, earliest
/// first), or a spectral observable assigning a value to each member of a
/// named family.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(untagged)]
pub enum OperatorSpec {
    Product(ProductOperatorSpec),
    Spectral(SpectralOperatorSpec),
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ProductOperatorSpec {
    pub factors: Vec<MatrixSpec>,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct SpectralOperatorSpec {
    pub spectral: SpectralBody,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct SpectralBody {
    pub family: String,
    pub values: Vec<Entry>,
}

/// A marked evolution: ancilla register dimensions, initial states, and the
/// coupling schedule.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct MarkingSpec {
    pub ancilla: Vec<usize>,
    pub system_init: KetSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ancilla_init: Option<KetSpec>,
    #[serde(default)]
    pub schedule: Vec<StepSpec>,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct StepSpec {
    pub time: TimeRef,
    pub controls: Vec<ControlSpec>,
}

/// A slot, by index or by label.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(untagged)]
pub enum TimeRef {
    Index(usize),
    Label(String),
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ControlSpec {
    pub when: MatrixSpec,
    pub apply: MatrixSpec,
}

/// Registers measured by one plan stage: an index or a `[start, end)` pair.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(untagged)]
pub enum RegistersSpec {
    One(usize),
    Range([usize; 2]),
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct PlanSpec {
    pub registers: RegistersSpec,
    pub basis: Vec<KetSpec>,
    pub family: String,
}

/// What a check expects of its operation.
#[derive(Clone, Copy, Debug, Serialize, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "kebab-case")]
pub enum ExpectOutcome {
    /// The operation succeeds and every given expectation holds.
    Pass,
    /// Family validation reports failures.
    Fail,
    /// The schedule does not measure the family.
    Misaligned,
    /// The operation is rejected outright.
    Error,
}

/// Completeness test target.
#[derive(Clone, Copy, Debug, Serialize, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "kebab-case")]
pub enum ModeSpec {
    Exact,
    Physical,
}

fn expect_pass() -> ExpectOutcome {
    ExpectOutcome::Pass
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ValidateCheck {
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub variant: Option<String>,
    pub family: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub completeness: Option<ModeSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tol: Option<f64>,
    #[serde(default = "expect_pass")]
    pub expect: ExpectOutcome,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub expect_weights: Option<Vec<Entry>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub expect_coefficients: Option<Vec<Entry>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub expect_failure_mentions: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub expect_nonzero_members: Option<usize>,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct WeightCheck {
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub variant: Option<String>,
    pub state: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tol: Option<f64>,
    pub expect: Entry,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct InnerCheck {
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub variant: Option<String>,
    pub left: String,
    pub right: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tol: Option<f64>,
    pub expect: Entry,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct DecomposeCheck {
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub variant: Option<String>,
    pub family: String,
    pub state: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub completeness: Option<ModeSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tol: Option<f64>,
    pub expect_coefficients: Vec<Entry>,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ProbabilitiesCheck {
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub variant: Option<String>,
    pub state: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub family: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub observable: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub completeness: Option<ModeSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tol: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub expect: Option<Vec<Entry>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub expect_distribution: Option<Vec<(Entry, Entry)>>,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct EigenhistoriesCheck {
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub variant: Option<String>,
    pub operators: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tol: Option<f64>,
    #[serde(default = "expect_pass")]
    pub expect: ExpectOutcome,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub expect_members: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub expect_eigenvectors: Option<Vec<KetSpec>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub expect_eigenvalues: Option<Vec<Vec<Entry>>>,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct SimulateMarkingCheck {
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub variant: Option<String>,
    pub marking: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tol: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub expect_state: Option<KetSpec>,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct BranchMapCheck {
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub variant: Option<String>,
    pub marking: String,
    pub family: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub completeness: Option<ModeSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tol: Option<f64>,
    #[serde(default = "expect_pass")]
    pub expect: ExpectOutcome,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub expect_labels: Option<Vec<Option<KetSpec>>>,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct SequentialCheck {
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub variant: Option<String>,
    pub marking: String,
    pub plans: Vec<PlanSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub completeness: Option<ModeSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tol: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub expect_marginals: Option<Vec<Entry>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub expect_members: Option<Vec<Option<String>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub expect_conditionals: Option<Vec<Vec<Entry>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub expect_leaf_joints: Option<Vec<Entry>>,
}

/// One resolved, validated check. Carried in dispatch form so the command
/// filter and the runner share one representation.
#[derive(Clone, Debug, PartialEq)]
pub enum CheckSpec {
    Validate(ValidateCheck),
    Weight(WeightCheck),
    Inner(InnerCheck),
    Decompose(DecomposeCheck),
    Probabilities(ProbabilitiesCheck),
    Eigenhistories(EigenhistoriesCheck),
    SimulateMarking(SimulateMarkingCheck),
    BranchMap(BranchMapCheck),
    Sequential(SequentialCheck),
}

impl CheckSpec {
    pub fn cmd(&self) -> &'static str {
        match self {
            CheckSpec::Validate(_) => "validate",
            CheckSpec::Weight(_) => "weight",
            CheckSpec::Inner(_) => "inner",
            CheckSpec::Decompose(_) => "decompose",
            CheckSpec::Probabilities(_) => "probabilities",
            CheckSpec::Eigenhistories(_) => "eigenhistories",
            CheckSpec::SimulateMarking(_) => "simulate-marking",
            CheckSpec::BranchMap(_) => "branch-map",
            CheckSpec::Sequential(_) => "sequential",
        }
    }

    pub fn name(&self) -> &str {
        match self {
            CheckSpec::Validate(c) => &c.name,
            CheckSpec::Weight(c) => &c.name,
            CheckSpec::Inner(c) => &c.name,
            CheckSpec::Decompose(c) => &c.name,
            CheckSpec::Probabilities(c) => &c.name,
            CheckSpec::Eigenhistories(c) => &c.name,
            CheckSpec::SimulateMarking(c) => &c.name,
            CheckSpec::BranchMap(c) => &c.name,
            CheckSpec::Sequential(c) => &c.name,
        }
    }

    pub fn variant(&self) -> Option<&str> {
        match self {
            CheckSpec::Validate(c) => c.variant.as_deref(),
            CheckSpec::Weight(c) => c.variant.as_deref(),
            CheckSpec::Inner(c) => c.variant.as_deref(),
            CheckSpec::Decompose(c) => c.variant.as_deref(),
            CheckSpec::Probabilities(c) => c.variant.as_deref(),
            CheckSpec::Eigenhistories(c) => c.variant.as_deref(),
            CheckSpec::SimulateMarking(c) => c.variant.as_deref(),
            CheckSpec::BranchMap(c) => c.variant.as_deref(),
            CheckSpec::Sequential(c) => c.variant.as_deref(),
        }
    }

    pub fn tol_override(&self) -> Option<f64> {
        match self {
            CheckSpec::Validate(c) => c.tol,
            CheckSpec::Weight(c) => c.tol,
            CheckSpec::Inner(c) => c.tol,
            CheckSpec::Decompose(c) => c.tol,
            CheckSpec::Probabilities(c) => c.tol,
            CheckSpec::Eigenhistories(c) => c.tol,
            CheckSpec::SimulateMarking(c) => c.tol,
            CheckSpec::BranchMap(c) => c.tol,
            CheckSpec::Sequential(c) => c.tol,
        }
    }

    /// Reads one check from its JSON form, dispatching on the `cmd` field so
    /// unknown fields are rejected with a field-level diagnostic.
    pub fn from_value(value: &serde_json::Value) -> Result<CheckSpec, String> {
        let obj = value.as_object().ok_or("check must be an object")?;
        let mut rest = obj.clone();
        let cmd = rest
            .remove("cmd")
            .ok_or("check is missing the \"cmd\" field")?;
        let cmd = cmd.as_str().ok_or("\"cmd\" must be a string")?.to_string();
        let rest = serde_json::Value::Object(rest);
        let wrap = |e: serde_json::Error| e.to_string();
        match cmd.as_str() {
            "validate" => Ok(CheckSpec::Validate(serde_json::from_value(rest).map_err(wrap)?)),
            "weight" => Ok(CheckSpec::Weight(serde_json::from_value(rest).map_err(wrap)?)),
            "inner" => Ok(CheckSpec::Inner(serde_json::from_value(rest).map_err(wrap)?)),
            "decompose" => {
                Ok(CheckSpec::Decompose(serde_json::from_value(rest).map_err(wrap)?))
            }
            "probabilities" => {
                Ok(CheckSpec::Probabilities(serde_json::from_value(rest).map_err(wrap)?))
            }
            "eigenhistories" => {
                Ok(CheckSpec::Eigenhistories(serde_json::from_value(rest).map_err(wrap)?))
            }
            "simulate-marking" => {
                Ok(CheckSpec::SimulateMarking(serde_json::from_value(rest).map_err(wrap)?))
            }
            "branch-map" => {
                Ok(CheckSpec::BranchMap(serde_json::from_value(rest).map_err(wrap)?))
            }
            "sequential" => {
                Ok(CheckSpec::Sequential(serde_json::from_value(rest).map_err(wrap)?))
            }
            other => Err(format!("unknown check command {other:?}")),
        }
    }

    /// The JSON form of this check, with the `cmd` tag reinserted.
    pub fn to_value(&self) -> serde_json::Value {
        let inner = match self {
            CheckSpec::Validate(c) => serde_json::to_value(c),
            CheckSpec::Weight(c) => serde_json::to_value(c),
            CheckSpec::Inner(c) => serde_json::to_value(c),
            CheckSpec::Decompose(c) => serde_json::to_value(c),
            CheckSpec::Probabilities(c) => serde_json::to_value(c),
            CheckSpec::Eigenhistories(c) => serde_json::to_value(c),
            CheckSpec::SimulateMarking(c) => serde_json::to_value(c),
            CheckSpec::BranchMap(c) => serde_json::to_value(c),
            CheckSpec::Sequential(c) => serde_json::to_value(c),
        };
        let mut v = inner.expect("check spec serializes");
        v.as_object_mut()
            .expect("check spec is an object")
            .insert("cmd".into(), serde_json::Value::String(self.cmd().into()));
        v
    }
}

/// A whole scenario file, before resolution.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct RawScenario {
    pub version: u32,
    pub id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub description: Option<String>,
    pub timeline: Vec<SlotSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bridging: Option<BridgingSpec>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub constants: BTreeMap<String, String>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub kets: BTreeMap<String, KetSpec>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub gates: BTreeMap<String, MatrixSpec>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub history_states: BTreeMap<String, ChainSpec>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub families: BTreeMap<String, FamilySpec>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub operators: BTreeMap<String, OperatorSpec>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub markings: BTreeMap<String, MarkingSpec>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub checks: Vec<serde_json::Value>,
}

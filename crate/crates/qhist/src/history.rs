//! Histories of a closed system: timelines, bridging unitaries between
//! neighboring times, and history states as sums of operator chains.
//!
//! A timeline lists times `t1 < t2 < ... < tn`, each with its own Hilbert
//! space dimension. A chain assigns one square matrix per time; the full
//! history space orders slot factors with the latest time leftmost, so a
//! chain `F_n (x) ... (x) F_1` acts on `H_tn (x) ... (x) H_t1`. The chain
//! operator interleaves bridging steps between the slot factors and maps
//! every history state to an ordinary `dim(tn) x dim(t1)` matrix; all inner
//! products, weights and physical comparisons happen on that image.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::linalg::{cr, frob_inner, C64, CKet, CMatrix};

/// One time slot: a label, the slot dimension, and the tensor factorization
/// of the slot for multi-particle systems (`parts` multiply to `dim`).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Slot {
    pub label: String,
    pub dim: usize,
    pub parts: Vec<usize>,
}

impl Slot {
    pub fn new(label: impl Into<String>, dim: usize) -> Self {
        Slot { label: label.into(), dim, parts: vec![dim] }
    }

    pub fn with_parts(label: impl Into<String>, parts: Vec<usize>) -> Self {
        let dim = parts.iter().product();
        Slot { label: label.into(), dim, parts }
    }
}

/// Ordered list of time slots, earliest first.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Timeline {
    slots: Vec<Slot>,
}

impl Timeline {
    pub fn new(slots: Vec<Slot>) -> Result<Arc<Self>> {
        if slots.is_empty() {
            return Err(Error::shape("timeline needs at least one slot"));
        }
        for s in &slots {
            if s.dim == 0 || s.parts.is_empty() || s.parts.iter().any(|&p| p == 0) {
                return Err(Error::shape(format!("slot {:?} has zero dimension", s.label)));
            }
            if s.parts.iter().product::<usize>() != s.dim {
                return Err(Error::shape(format!(
                    "slot {:?}: parts {:?} do not multiply to dimension {}",
                    s.label, s.parts, s.dim
                )));
            }
        }
        Ok(Arc::new(Timeline { slots }))
    }

    /// Timeline of `n` slots of equal dimension, labeled `t1..tn`.
    pub fn uniform(n: usize, dim: usize) -> Result<Arc<Self>> {
        Timeline::new((1..=n).map(|i| Slot::new(format!("t{i}"), dim)).collect())
    }

    /// Number of time slots.
    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    pub fn slot(&self, i: usize) -> &Slot {
        &self.slots[i]
    }

    pub fn slots(&self) -> &[Slot] {
        &self.slots
    }

    pub fn dim(&self, i: usize) -> usize {
        self.slots[i].dim
    }

    /// Dimension of the earliest slot.
    pub fn first_dim(&self) -> usize {
        self.slots[0].dim
    }

    /// Dimension of the latest slot.
    pub fn last_dim(&self) -> usize {
        self.slots[self.len() - 1].dim
    }

    /// Dimension of the full history space (product over slots).
    pub fn total_dim(&self) -> usize {
        self.slots.iter().map(|s| s.dim).product()
    }

    /// Structural compatibility: same dimensions and slot factorizations.
    /// Labels are cosmetic.
    pub fn compatible(&self, other: &Timeline) -> bool {
        self.len() == other.len()
            && self
                .slots
                .iter()
                .zip(&other.slots)
                .all(|(a, b)| a.dim == b.dim && a.parts == b.parts)
    }

    /// Index of the slot with the given label.
    pub fn index_of(&self, label: &str) -> Result<usize> {
        self.slots
            .iter()
            .position(|s| s.label == label)
            .ok_or_else(|| Error::UnknownName { name: label.to_string() })
    }
}

/// Bridging steps `T(t_{j+1}, t_j)`, earliest step first. Each step must be
/// an isometry on the smaller of its two spaces; square steps are unitary.
#[derive(Clone, Debug)]
pub struct BridgingSet {
    dims: Vec<usize>,
    steps: Vec<CMatrix>,
}

impl BridgingSet {
    pub fn new(timeline: &Timeline, steps: Vec<CMatrix>, tol: f64) -> Result<Self> {
        if steps.len() + 1 != timeline.len() {
            return Err(Error::shape(format!(
                "timeline with {} slots needs {} bridging steps, got {}",
                timeline.len(),
                timeline.len() - 1,
                steps.len()
            )));
        }
        for (j, step) in steps.iter().enumerate() {
            let (rows, cols) = (timeline.dim(j + 1), timeline.dim(j));
            if step.rows() != rows || step.cols() != cols {
                return Err(Error::shape(format!(
                    "bridging step {} must be {}x{}, got {}x{}",
                    j,
                    rows,
                    cols,
                    step.rows(),
                    step.cols()
                )));
            }
            let dev = step.unitary_deviation();
            if dev > tol {
                return Err(Error::NotUnitary { deviation: dev });
            }
        }
        Ok(BridgingSet { dims: timeline.slots().iter().map(|s| s.dim).collect(), steps })
    }

    /// Identity bridging; every pair of neighboring slots must have equal
    /// dimension.
    pub fn trivial(timeline: &Timeline) -> Result<Self> {
        let steps = (0..timeline.len() - 1)
            .map(|j| {
                if timeline.dim(j) != timeline.dim(j + 1) {
                    return Err(Error::shape(format!(
                        "trivial bridging needs equal dimensions, slots {} and {} differ",
                        j,
                        j + 1
                    )));
                }
                Ok(CMatrix::identity(timeline.dim(j)))
            })
            .collect::<Result<_>>()?;
        Ok(BridgingSet { dims: timeline.slots().iter().map(|s| s.dim).collect(), steps })
    }

    pub fn step(&self, j: usize) -> &CMatrix {
        &self.steps[j]
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    /// True when this bridging was built for a timeline with these slot
    /// dimensions.
    pub fn matches(&self, timeline: &Timeline) -> bool {
        self.dims == timeline.slots().iter().map(|s| s.dim).collect::<Vec<_>>()
    }

    /// Composed evolution `T(t_j, t_i)` for slot indices `i <= j`.
    pub fn propagator(&self, i: usize, j: usize) -> Result<CMatrix> {
        if i > j || j >= self.dims.len() {
            return Err(Error::shape(format!("propagator indices {i}..{j} out of range")));
        }
        let mut acc = CMatrix::identity(self.dims[i]);
        for p in i..j {
            acc = self.steps[p].mul(&acc)?;
        }
        Ok(acc)
    }
}

/// One weighted chain: a complex coefficient and one square factor per slot,
/// earliest slot first.
#[derive(Clone, Debug)]
pub struct ChainTerm {
    pub coeff: C64,
    pub factors: Vec<CMatrix>,
}

impl ChainTerm {
    pub fn new(coeff: C64, factors: Vec<CMatrix>) -> Self {
        ChainTerm { coeff, factors }
    }
}

/// A history state: a formal complex combination of chains over one shared
/// timeline. The term list is kept as written; physical identifications
/// (anything the chain operator cannot distinguish) happen through
/// [`physically_equal`], not through the representation.
#[derive(Clone, Debug)]
pub struct HistoryState {
    timeline: Arc<Timeline>,
    terms: Vec<ChainTerm>,
}

impl HistoryState {
    pub fn new(timeline: Arc<Timeline>, terms: Vec<ChainTerm>) -> Result<Self> {
        for (ti, term) in terms.iter().enumerate() {
            if !term.coeff.re.is_finite() || !term.coeff.im.is_finite() {
                return Err(Error::NonFinite { context: format!("coefficient of term {ti}") });
            }
            if term.factors.len() != timeline.len() {
                return Err(Error::shape(format!(
                    "term {ti} has {} factors for a timeline with {} slots",
                    term.factors.len(),
                    timeline.len()
                )));
            }
            for (p, f) in term.factors.iter().enumerate() {
                let d = timeline.dim(p);
                if f.rows() != d || f.cols() != d {
                    return Err(Error::shape(format!(
                        "term {ti}, slot {p}: factor is {}x{}, slot dimension is {d}",
                        f.rows(),
                        f.cols()
                    )));
                }
            }
        }
        Ok(HistoryState { timeline, terms })
    }

    /// The zero history state: an empty term list.
    pub fn zero(timeline: Arc<Timeline>) -> Self {
        HistoryState { timeline, terms: Vec::new() }
    }

    /// Single-chain state.
    pub fn chain(timeline: Arc<Timeline>, coeff: C64, factors: Vec<CMatrix>) -> Result<Self> {
        HistoryState::new(timeline, vec![ChainTerm::new(coeff, factors)])
    }

    /// Single chain of rank-one projectors onto the given kets.
    pub fn projector_chain(timeline: Arc<Timeline>, coeff: C64, kets: &[CKet]) -> Result<Self> {
        let factors = kets.iter().map(|k| k.projector(1e-9)).collect::<Result<Vec<_>>>()?;
        HistoryState::chain(timeline, coeff, factors)
    }

    /// The unit history: one chain of identity factors.
    pub fn identity(timeline: Arc<Timeline>) -> Self {
        let factors = timeline.slots().iter().map(|s| CMatrix::identity(s.dim)).collect();
        HistoryState { timeline, terms: vec![ChainTerm::new(cr(1.0), factors)] }
    }

    pub fn timeline(&self) -> &Arc<Timeline> {
        &self.timeline
    }

    pub fn terms(&self) -> &[ChainTerm] {
        &self.terms
    }

    /// Formal sum; terms concatenate.
    pub fn add(&self, other: &HistoryState) -> Result<HistoryState> {
        if !self.timeline.compatible(&other.timeline) {
            return Err(Error::TimelineMismatch);
        }
        let mut terms = self.terms.clone();
        terms.extend(other.terms.iter().cloned());
        Ok(HistoryState { timeline: self.timeline.clone(), terms })
    }

    pub fn sub(&self, other: &HistoryState) -> Result<HistoryState> {
        self.add(&other.scale(cr(-1.0)))
    }

    /// Scales every coefficient.
    pub fn scale(&self, c: C64) -> HistoryState {
        let terms = self
            .terms
            .iter()
            .map(|t| ChainTerm::new(t.coeff * c, t.factors.clone()))
            .collect();
        HistoryState { timeline: self.timeline.clone(), terms }
    }

    /// Expands an operator on the full history space into elementary chains
    /// `|a_n><b_n| (x) ... (x) |a_1><b_1|`, one term per matrix entry.
    pub fn from_operator(timeline: Arc<Timeline>, op: &CMatrix) -> Result<HistoryState> {
        let total = timeline.total_dim();
        if op.rows() != total || op.cols() != total {
            return Err(Error::shape(format!(
                "operator is {}x{}, history space dimension is {total}",
                op.rows(),
                op.cols()
            )));
        }
        let n = timeline.len();
        // strides: slot 0 (earliest) varies fastest
        let mut strides = vec![1usize; n];
        for p in 1..n {
            strides[p] = strides[p - 1] * timeline.dim(p - 1);
        }
        let digit = |idx: usize, p: usize| (idx / strides[p]) % timeline.dim(p);
        let mut terms = Vec::with_capacity(total * total);
        for row in 0..total {
            for col in 0..total {
                let coeff = op.at(row, col);
                let factors: Vec<CMatrix> = (0..n)
                    .map(|p| {
                        let d = timeline.dim(p);
                        let mut e = CMatrix::zeros(d, d);
                        e.set(digit(row, p), digit(col, p), cr(1.0));
                        e
                    })
                    .collect();
                terms.push(ChainTerm::new(coeff, factors));
            }
        }
        HistoryState::new(timeline, terms)
    }

    /// Expands the projector onto a vector of the full history space.
    pub fn from_projector(timeline: Arc<Timeline>, vector: &CKet) -> Result<HistoryState> {
        if vector.dim() != timeline.total_dim() {
            return Err(Error::shape(format!(
                "projector vector has dimension {}, history space dimension is {}",
                vector.dim(),
                timeline.total_dim()
            )));
        }
        HistoryState::from_operator(timeline, &vector.outer(vector))
    }

    /// The state as one matrix on the full history space, latest slot
    /// leftmost in the Kronecker order.
    pub fn full_operator(&self) -> CMatrix {
        let total = self.timeline.total_dim();
        let mut acc = CMatrix::zeros(total, total);
        for term in &self.terms {
            let mut m = term.factors[self.timeline.len() - 1].clone();
            for p in (0..self.timeline.len() - 1).rev() {
                m = m.kron(&term.factors[p]);
            }
            acc = acc.add(&m.scale(term.coeff)).expect("shape fixed by timeline");
        }
        acc
    }
}

/// Chain operator of a single term: `coeff * F_n T(t_n,t_{n-1}) ... T(t_2,t_1) F_1`.
pub fn chain_k(term: &ChainTerm, bridging: &BridgingSet) -> Result<CMatrix> {
    if term.factors.len() != bridging.dims.len() {
        return Err(Error::TimelineMismatch);
    }
    let mut acc = term.factors[0].clone();
    for p in 1..term.factors.len() {
        acc = term.factors[p].mul(&bridging.step(p - 1).mul(&acc)?)?;
    }
    Ok(acc.scale(term.coeff))
}

/// Chain operator image of a history state: the coefficient-weighted sum of
/// its terms' chain operators.
pub fn k_of(state: &HistoryState, bridging: &BridgingSet) -> Result<CMatrix> {
    if !bridging.matches(state.timeline()) {
        return Err(Error::TimelineMismatch);
    }
    let tl = state.timeline();
    let mut acc = CMatrix::zeros(tl.last_dim(), tl.first_dim());
    for term in state.terms() {
        acc = acc.add(&chain_k(term, bridging)?)?;
    }
    Ok(acc)
}

/// Inner product `(phi|psi) = tr[K(phi)^dagger K(psi)]`, antilinear in the
/// first argument. Degenerate by design: chains the bridging suppresses
/// contribute nothing.
pub fn inner(phi: &HistoryState, psi: &HistoryState, bridging: &BridgingSet) -> Result<C64> {
    if !phi.timeline().compatible(psi.timeline()) {
        return Err(Error::TimelineMismatch);
    }
    frob_inner(&k_of(phi, bridging)?, &k_of(psi, bridging)?)
}

/// Weight `(psi|psi)`; real and nonnegative up to roundoff.
pub fn weight(psi: &HistoryState, bridging: &BridgingSet) -> Result<f64> {
    Ok(k_of(psi, bridging)?.frob_norm().powi(2))
}

/// Rescales to unit weight. Errors with [`Error::ZeroWeight`] when the
/// weight is at most `tol`.
pub fn normalize(psi: &HistoryState, bridging: &BridgingSet, tol: f64) -> Result<HistoryState> {
    let w = weight(psi, bridging)?;
    if w <= tol {
        return Err(Error::ZeroWeight);
    }
    Ok(psi.scale(cr(1.0 / w.sqrt())))
}

/// Physical equality: the chain images agree within `tol` in Frobenius norm.
/// States that differ only by chains the bridging suppresses are equal.
pub fn physically_equal(
    phi: &HistoryState,
    psi: &HistoryState,
    bridging: &BridgingSet,
    tol: f64,
) -> Result<bool> {
    if !phi.timeline().compatible(psi.timeline()) {
        return Err(Error::TimelineMismatch);
    }
    Ok(k_of(phi, bridging)?.sub(&k_of(psi, bridging)?)?.frob_norm() <= tol)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::registry::Registry;

    fn c(re: f64, im: f64) -> C64 {
        C64::new(re, im)
    }

    fn reg() -> Registry {
        Registry::with_builtins()
    }

    /// `[z-] (.) [x+] (.) [z+]` over three times with identity bridging.
    fn three_time_chain() -> (Arc<Timeline>, BridgingSet, HistoryState) {
        let tl = Timeline::uniform(3, 2).unwrap();
        let b = BridgingSet::trivial(&tl).unwrap();
        let r = reg();
        let s = HistoryState::projector_chain(
            tl.clone(),
            cr(1.0),
            &[r.ket("z+").unwrap(), r.ket("x+").unwrap(), r.ket("z-").unwrap()],
        )
        .unwrap();
        (tl, b, s)
    }

    #[test]
    fn chain_operator_collapses_to_half_transition() {
        let (_tl, b, s) = three_time_chain();
        let k = k_of(&s, &b).unwrap();
        // |z-><z-|x+><x+|z+><z+| = (1/2)|z-><z+|
        let mut want = CMatrix::zeros(2, 2);
        want.set(1, 0, c(0.5, 0.0));
        assert!(k.approx_eq(&want, 1e-12));
        assert!((weight(&s, &b).unwrap() - 0.25).abs() < 1e-12);
    }

    #[test]
    fn identity_chain_composes_bridging() {
        let tl = Timeline::uniform(3, 2).unwrap();
        let r = reg();
        let h = r.gate("H").unwrap();
        let sy = r.gate("sy").unwrap();
        let b = BridgingSet::new(&tl, vec![h.clone(), sy.clone()], 1e-10).unwrap();
        let k = k_of(&HistoryState::identity(tl), &b).unwrap();
        assert!(k.approx_eq(&sy.mul(&h).unwrap(), 1e-12));
    }

    #[test]
    fn identity_weight_equals_first_dimension() {
        for (n, d) in [(1usize, 2usize), (2, 3), (4, 2)] {
            let tl = Timeline::uniform(n, d).unwrap();
            let b = BridgingSet::trivial(&tl).unwrap();
            let w = weight(&HistoryState::identity(tl), &b).unwrap();
            assert!((w - d as f64).abs() < 1e-12);
        }
    }

    #[test]
    fn suppressed_chain_is_physically_invisible() {
        let tl = Timeline::uniform(2, 2).unwrap();
        let b = BridgingSet::trivial(&tl).unwrap();
        let r = reg();
        let zp = r.ket("z+").unwrap();
        let zm = r.ket("z-").unwrap();
        let psi = HistoryState::projector_chain(tl.clone(), cr(1.0), &[zp.clone(), zp.clone()])
            .unwrap();
        // [z-] after [z+] under identity evolution never happens
        let ghost =
            HistoryState::projector_chain(tl.clone(), cr(1.0), &[zp.clone(), zm.clone()]).unwrap();
        assert!((weight(&ghost, &b).unwrap()).abs() < 1e-12);
        let sum = psi.add(&ghost).unwrap();
        assert!(physically_equal(&psi, &sum, &b, 1e-10).unwrap());
        assert_eq!(sum.terms().len(), 2, "formal term list is kept as written");
    }

    #[test]
    fn zero_state_has_zero_weight_and_rejects_normalization() {
        let tl = Timeline::uniform(2, 2).unwrap();
        let b = BridgingSet::trivial(&tl).unwrap();
        let z = HistoryState::zero(tl);
        assert_eq!(z.terms().len(), 0);
        assert!((weight(&z, &b).unwrap()).abs() < 1e-15);
        assert!(matches!(normalize(&z, &b, 1e-10), Err(Error::ZeroWeight)));
    }

    #[test]
    fn timeline_mismatch_detected() {
        let tl2 = Timeline::uniform(2, 2).unwrap();
        let tl3 = Timeline::uniform(3, 2).unwrap();
        let a = HistoryState::identity(tl2.clone());
        let b_state = HistoryState::identity(tl3.clone());
        assert!(matches!(a.add(&b_state), Err(Error::TimelineMismatch)));
        let br3 = BridgingSet::trivial(&tl3).unwrap();
        assert!(matches!(k_of(&a, &br3), Err(Error::TimelineMismatch)));
    }

    #[test]
    fn bridging_shape_and_isometry_enforced() {
        let tl = Timeline::new(vec![Slot::new("t0", 1), Slot::new("t1", 2)]).unwrap();
        // valid isometry: |0a> -> (|b> + |c|)/sqrt(2)
        let h = std::f64::consts::FRAC_1_SQRT_2;
        let iso = CMatrix::from_rows(&[vec![c(h, 0.0)], vec![c(h, 0.0)]]).unwrap();
        assert!(BridgingSet::new(&tl, vec![iso], 1e-10).is_ok());
        let not_iso = CMatrix::from_rows(&[vec![c(1.0, 0.0)], vec![c(1.0, 0.0)]]).unwrap();
        assert!(matches!(
            BridgingSet::new(&tl, vec![not_iso], 1e-10),
            Err(Error::NotUnitary { .. })
        ));
        assert!(matches!(BridgingSet::trivial(&tl), Err(Error::ShapeMismatch { .. })));
    }

    #[test]
    fn operator_expansion_round_trips() {
        let tl = Timeline::uniform(2, 2).unwrap();
        let mut op = CMatrix::zeros(4, 4);
        let mut v = 0.7;
        for i in 0..4 {
            for j in 0..4 {
                v = (v * 23.3 + 0.4) % 1.0;
                op.set(i, j, c(v, 1.0 - v));
            }
        }
        let s = HistoryState::from_operator(tl, &op).unwrap();
        assert_eq!(s.terms().len(), 16);
        assert!(s.full_operator().approx_eq(&op, 1e-12));
    }

    #[test]
    fn projector_expansion_chain_image_is_m_times_conj_m() {
        // psi on two times with amplitude matrix m: K = m * conj(m)
        let tl = Timeline::uniform(2, 2).unwrap();
        let b = BridgingSet::trivial(&tl).unwrap();
        let amps = vec![c(0.5, 0.0), c(0.0, 0.5), c(-0.5, 0.0), c(0.0, -0.5)];
        let v = CKet::new(amps.clone()).unwrap();
        let s = HistoryState::from_projector(tl, &v).unwrap();
        let m = CMatrix::new(2, 2, amps).unwrap();
        let want = m.mul(&m.conj()).unwrap();
        assert!(k_of(&s, &b).unwrap().approx_eq(&want, 1e-12));
    }

    #[test]
    fn scale_and_add_act_on_coefficients() {
        let (_tl, b, s) = three_time_chain();
        let doubled = s.scale(c(2.0, 0.0));
        assert!((weight(&doubled, &b).unwrap() - 1.0).abs() < 1e-12);
        let diff = doubled.sub(&s).unwrap().sub(&s).unwrap();
        assert!((weight(&diff, &b).unwrap()).abs() < 1e-12);
    }
}

//! Operators on histories: per-slot conjugation chains, their matrix form on
//! the full history space, commutation analysis, eigenhistory families of
//! commuting operator sets, and spectral measurement distributions.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::family::{validate_family, CompletenessMode, Family, FamilyReport};
use crate::history::{normalize, weight, BridgingSet, HistoryState, Timeline};
use crate::linalg::{cr, eig_hermitian, CKet, CMatrix};
use std::sync::Arc;

/// An operator with one square factor per time slot (identity where not
/// specified). Acts on histories by conjugating each chain factor.
#[derive(Clone, Debug)]
pub struct ProductHistoryOperator {
    timeline: Arc<Timeline>,
    factors: Vec<CMatrix>,
}

impl ProductHistoryOperator {
    pub fn new(timeline: Arc<Timeline>, factors: Vec<CMatrix>) -> Result<Self> {
        if factors.len() != timeline.len() {
            return Err(Error::shape(format!(
                "{} factors for a timeline with {} slots",
                factors.len(),
                timeline.len()
            )));
        }
        for (p, f) in factors.iter().enumerate() {
            let d = timeline.dim(p);
            if f.rows() != d || f.cols() != d {
                return Err(Error::shape(format!(
                    "slot {p}: factor is {}x{}, slot dimension is {d}",
                    f.rows(),
                    f.cols()
                )));
            }
        }
        Ok(ProductHistoryOperator { timeline, factors })
    }

    /// Identity at every slot.
    pub fn identity(timeline: Arc<Timeline>) -> Self {
        let factors = timeline.slots().iter().map(|s| CMatrix::identity(s.dim)).collect();
        ProductHistoryOperator { timeline, factors }
    }

    /// Identity everywhere except the listed `(slot, factor)` pairs.
    pub fn from_slots(timeline: Arc<Timeline>, slots: &[(usize, CMatrix)]) -> Result<Self> {
        let mut factors: Vec<CMatrix> =
            timeline.slots().iter().map(|s| CMatrix::identity(s.dim)).collect();
        for (p, f) in slots {
            if *p >= timeline.len() {
                return Err(Error::shape(format!("slot index {p} out of range")));
            }
            factors[*p] = f.clone();
        }
        ProductHistoryOperator::new(timeline, factors)
    }

    pub fn timeline(&self) -> &Arc<Timeline> {
        &self.timeline
    }

    pub fn factors(&self) -> &[CMatrix] {
        &self.factors
    }

    /// True when every slot factor is hermitian within `tol`.
    pub fn is_hermitian(&self, tol: f64) -> bool {
        self.factors.iter().all(|f| f.hermitian_deviation() <= tol)
    }

    /// Kronecker product of the factors, latest slot leftmost: the operator
    /// as a matrix on the full history space.
    pub fn as_matrix(&self) -> CMatrix {
        let mut m = self.factors[self.timeline.len() - 1].clone();
        for p in (0..self.timeline.len() - 1).rev() {
            m = m.kron(&self.factors[p]);
        }
        m
    }
}

/// Applies the operator to a history state: every chain factor `F_j` becomes
/// `A_j F_j A_j^dagger`, linearly over terms.
pub fn conj_apply(op: &ProductHistoryOperator, psi: &HistoryState) -> Result<HistoryState> {
    if !op.timeline.compatible(psi.timeline()) {
        return Err(Error::TimelineMismatch);
    }
    let daggers: Vec<CMatrix> = op.factors.iter().map(|a| a.dagger()).collect();
    let terms = psi
        .terms()
        .iter()
        .map(|t| {
            let factors = t
                .factors
                .iter()
                .enumerate()
                .map(|(p, f)| op.factors[p].mul(f)?.mul(&daggers[p]))
                .collect::<Result<Vec<_>>>()?;
            Ok(crate::history::ChainTerm::new(t.coeff, factors))
        })
        .collect::<Result<Vec<_>>>()?;
    HistoryState::new(psi.timeline().clone(), terms)
}

/// Frobenius norm of the commutator of two matrices.
pub fn commutator_norm(x: &CMatrix, y: &CMatrix) -> Result<f64> {
    Ok(x.mul(y)?.sub(&y.mul(x)?)?.frob_norm())
}

/// Simultaneous eigenhistory family of a commuting hermitian operator set.
#[derive(Clone, Debug)]
pub struct ObservableFamily {
    pub family: Family,
    pub report: FamilyReport,
    /// Joint eigenvectors on the full history space, one per member.
    pub eigenvectors: Vec<CKet>,
    /// `eigenvalues[k][i]`: eigenvalue of operator `k` on eigenvector `i`.
    pub eigenvalues: Vec<Vec<f64>>,
}

fn ket_col(k: &CKet) -> CMatrix {
    CMatrix::new(k.dim(), 1, k.amplitudes().to_vec()).expect("finite ket")
}

fn col_ket(m: &CMatrix, j: usize) -> CKet {
    CKet::new((0..m.rows()).map(|i| m.at(i, j)).collect()).expect("finite column")
}

fn basis_matrix(block: &[CKet]) -> CMatrix {
    let mut b = CMatrix::zeros(block[0].dim(), block.len());
    for (j, v) in block.iter().enumerate() {
        for i in 0..v.dim() {
            b.set(i, j, v.at(i));
        }
    }
    b
}

/// Embeds a one-slot operator into the full history space.
fn embed_at_slot(tl: &Timeline, slot: usize, m: &CMatrix) -> CMatrix {
    let later: usize = (slot + 1..tl.len()).map(|q| tl.dim(q)).product();
    let earlier: usize = (0..slot).map(|q| tl.dim(q)).product();
    CMatrix::identity(later).kron(m).kron(&CMatrix::identity(earlier))
}

/// Splits indices of a descending value list where neighboring values differ
/// by more than `ctol`.
fn cluster_desc(values: &[f64], ctol: f64) -> Vec<std::ops::Range<usize>> {
    let mut ranges = Vec::new();
    let mut start = 0;
    for i in 1..values.len() {
        if values[i - 1] - values[i] > ctol {
            ranges.push(start..i);
            start = i;
        }
    }
    ranges.push(start..values.len());
    ranges
}

/// Refines each block by the eigenspaces of `m` restricted to it. Blocks the
/// operator does not leave invariant (within `itol`) are kept as they are
/// when `gated` is set.
fn refine_blocks(
    blocks: Vec<Vec<CKet>>,
    m: &CMatrix,
    ctol: f64,
    gated: bool,
) -> Result<Vec<Vec<CKet>>> {
    let mut out = Vec::new();
    for block in blocks {
        if block.len() == 1 {
            out.push(block);
            continue;
        }
        let b = basis_matrix(&block);
        let bdag = b.dagger();
        let mb = m.mul(&b)?;
        if gated {
            // invariance check: M B must stay inside the block's span
            let outside = mb.sub(&b.mul(&bdag.mul(&mb)?)?)?.frob_norm();
            if outside > 1e-8 * (1.0 + m.frob_norm()) {
                out.push(block);
                continue;
            }
        }
        let restricted = bdag.mul(&mb)?;
        let eig = eig_hermitian(&restricted, 1e-8)?;
        let mut rotated = Vec::with_capacity(block.len());
        for j in 0..block.len() {
            rotated.push(col_ket(&b.mul(&ket_col(&eig.vectors[j]))?, 0));
        }
        for r in cluster_desc(&eig.values, ctol) {
            out.push(rotated[r].to_vec());
        }
    }
    Ok(out)
}

/// Builds the family of simultaneous eigenhistories of commuting hermitian
/// product operators.
///
/// The joint eigenbasis comes from a seeded random real combination of the
/// operators, refined block by block: first by each operator, then by each
/// operator's slot factors and the slot computational bases (applied only
/// where they leave a block invariant), which pins degenerate blocks to
/// product form deterministically. Unit-weight eigenhistories are
/// normalized; suppressed ones stay as null members.
pub fn observable_family(
    ops: &[ProductHistoryOperator],
    b: &BridgingSet,
    tol: f64,
    seed: u64,
) -> Result<ObservableFamily> {
    if ops.is_empty() {
        return Err(Error::shape("operator list must not be empty"));
    }
    let tl = ops[0].timeline().clone();
    if ops.iter().any(|o| !o.timeline().compatible(&tl)) || !b.matches(&tl) {
        return Err(Error::TimelineMismatch);
    }
    for op in ops {
        if !op.is_hermitian(tol.max(1e-12)) {
            let dev = op
                .factors()
                .iter()
                .map(|f| f.hermitian_deviation())
                .fold(0.0, f64::max);
            return Err(Error::NotHermitian { deviation: dev });
        }
    }
    let mats: Vec<CMatrix> = ops.iter().map(|o| o.as_matrix()).collect();
    for i in 0..mats.len() {
        for j in (i + 1)..mats.len() {
            let dev = commutator_norm(&mats[i], &mats[j])?;
            if dev > tol.max(1e-12) {
                return Err(Error::NonCommuting { i, j, deviation: dev });
            }
        }
    }

    let total = tl.total_dim();
    let scale = mats.iter().map(|m| m.max_abs()).fold(1.0, f64::max);
    let ctol = 1e-7 * scale;

    // generic combination separates distinct joint eigenspaces
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut combo = CMatrix::zeros(total, total);
    for m in &mats {
        combo = combo.add(&m.scale(cr(0.5 + rng.random::<f64>())))?;
    }
    let first = eig_hermitian(&combo, 1e-9)?;
    let mut blocks: Vec<Vec<CKet>> = cluster_desc(&first.values, ctol)
        .into_iter()
        .map(|r| first.vectors[r].to_vec())
        .collect();

    for m in &mats {
        blocks = refine_blocks(blocks, m, ctol, false)?;
    }
    for op in ops {
        for slot in (0..tl.len()).rev() {
            let e = embed_at_slot(&tl, slot, &op.factors()[slot]);
            blocks = refine_blocks(blocks, &e, ctol, true)?;
        }
    }
    for slot in (0..tl.len()).rev() {
        let d = tl.dim(slot);
        let mut n = CMatrix::zeros(d, d);
        for i in 0..d {
            n.set(i, i, cr((d - 1 - i) as f64));
        }
        blocks = refine_blocks(blocks, &embed_at_slot(&tl, slot, &n), ctol, true)?;
    }

    let mut vectors: Vec<CKet> = blocks.into_iter().flatten().map(|v| v.fix_phase()).collect();
    let mut eigenvalues = vec![vec![0.0; vectors.len()]; ops.len()];
    for (k, m) in mats.iter().enumerate() {
        for (i, v) in vectors.iter().enumerate() {
            let mv = m.mul(&ket_col(v))?;
            let lambda = crate::linalg::frob_inner(&ket_col(v), &mv)?.re;
            let dev = mv.sub(&ket_col(v).scale(cr(lambda)))?.frob_norm();
            if dev > 1e-7 * scale.max(1.0) {
                return Err(Error::Numerical {
                    detail: format!(
                        "joint eigenvector {i} misses operator {k} by {dev:.3e}"
                    ),
                });
            }
            eigenvalues[k][i] = lambda;
        }
    }

    // canonical order: later operators outermost, descending eigenvalues
    let mut order: Vec<usize> = (0..vectors.len()).collect();
    let key = |i: usize| -> Vec<i64> {
        (0..ops.len())
            .rev()
            .map(|k| (eigenvalues[k][i] / ctol.max(1e-12)).round() as i64)
            .collect()
    };
    order.sort_by(|&a, &b2| key(b2).cmp(&key(a)));
    vectors = order.iter().map(|&i| vectors[i].clone()).collect();
    for lam in eigenvalues.iter_mut() {
        *lam = order.iter().map(|&i| lam[i]).collect();
    }

    let mut members = Vec::with_capacity(vectors.len());
    for v in &vectors {
        let raw = HistoryState::from_projector(tl.clone(), v)?;
        let w = weight(&raw, b)?;
        if w <= tol {
            members.push(raw);
        } else {
            members.push(normalize(&raw, b, tol)?);
        }
    }
    let family = Family::new(members)?;
    let report = validate_family(&family, b, tol.max(1e-12), CompletenessMode::Exact)?;
    if !report.passed() {
        return Err(Error::FamilyInvalid { detail: report.failures.join("; ") });
    }
    Ok(ObservableFamily { family, report, eigenvectors: vectors, eigenvalues })
}

/// A real-valued observable on histories: one value per family member.
#[derive(Clone, Debug)]
pub struct SpectralObservable {
    pub family: Family,
    pub report: FamilyReport,
    pub values: Vec<f64>,
}

impl SpectralObservable {
    pub fn new(family: Family, report: FamilyReport, values: Vec<f64>) -> Result<Self> {
        if report.labels.len() != family.len() || !report.passed() {
            return Err(Error::FamilyNotValidated);
        }
        if values.len() != family.len() {
            return Err(Error::shape(format!(
                "{} values for {} members",
                values.len(),
                family.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { context: "observable values".into() });
        }
        Ok(SpectralObservable { family, report, values })
    }
}

/// Measurement distribution of the observable in state `psi`: values paired
/// with probabilities, degenerate values merged within `tol`, sorted
/// ascending. `psi` must have unit weight within `tol`.
pub fn measure_distribution(
    psi: &HistoryState,
    obs: &SpectralObservable,
    b: &BridgingSet,
    tol: f64,
) -> Result<Vec<(f64, f64)>> {
    let probs = crate::family::probabilities(psi, &obs.family, &obs.report, b, tol)?;
    let mut pairs: Vec<(f64, f64)> = obs.values.iter().copied().zip(probs).collect();
    pairs.sort_by(|a, b2| a.0.total_cmp(&b2.0));
    let vtol = tol.max(1e-12);
    let mut grouped: Vec<(f64, f64)> = Vec::new();
    for (v, p) in pairs {
        match grouped.last_mut() {
            Some(last) if (v - last.0).abs() <= vtol => last.1 += p,
            _ => grouped.push((v, p)),
        }
    }
    Ok(grouped)
}

//! Families of history states: orthogonality and weight checks, completeness
//! coefficients, decomposition of a state over a family, Born-rule
//! probabilities, the member-count bound, compatibility between families, and
//! conditioning a history on a projector at one slot of one subsystem.

use crate::error::{Error, Result};
use crate::history::{
    inner, k_of, normalize, weight, BridgingSet, HistoryState, Timeline,
};
use crate::linalg::{lstsq, C64, CMatrix};

/// How the completeness condition (the family sums to the unit history) is
/// checked.
///
/// `Exact` demands the identity as operators on the full history space.
/// `Physical` only demands it modulo chains the bridging suppresses, i.e. on
/// chain-operator images.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum CompletenessMode {
    #[default]
    Exact,
    Physical,
}

/// An ordered, labeled list of history states over one timeline.
#[derive(Clone, Debug)]
pub struct Family {
    members: Vec<HistoryState>,
    labels: Vec<String>,
}

impl Family {
    /// Family with generated labels `m1..mk`.
    pub fn new(members: Vec<HistoryState>) -> Result<Self> {
        let labels = (1..=members.len()).map(|i| format!("m{i}")).collect();
        Family::with_labels(members, labels)
    }

    pub fn with_labels(members: Vec<HistoryState>, labels: Vec<String>) -> Result<Self> {
        if members.is_empty() {
            return Err(Error::shape("a family needs at least one member"));
        }
        if labels.len() != members.len() {
            return Err(Error::shape(format!(
                "{} labels for {} members",
                labels.len(),
                members.len()
            )));
        }
        let tl = members[0].timeline().clone();
        if members.iter().any(|m| !m.timeline().compatible(&tl)) {
            return Err(Error::TimelineMismatch);
        }
        Ok(Family { members, labels })
    }

    pub fn members(&self) -> &[HistoryState] {
        &self.members
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn timeline(&self) -> &std::sync::Arc<Timeline> {
        self.members[0].timeline()
    }
}

/// Full validation record for a family.
#[derive(Clone, Debug)]
pub struct FamilyReport {
    pub labels: Vec<String>,
    /// Pairwise inner products, member order.
    pub gram: CMatrix,
    /// Gram diagonal (real parts).
    pub weights: Vec<f64>,
    /// Least-squares completeness coefficients, one per member.
    pub coefficients: Vec<C64>,
    /// Distance from the coefficient-weighted member sum to the unit history.
    pub completeness_residual: f64,
    pub mode: CompletenessMode,
    pub tol: f64,
    /// Human-readable reasons the family fails; empty means pass.
    pub failures: Vec<String>,
}

impl FamilyReport {
    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }
}

/// Checks the two family conditions and solves for completeness
/// coefficients.
///
/// Condition one: members are pairwise orthogonal and each has weight 0 or 1
/// (zero-weight members are allowed). Condition two: some complex
/// combination of the members equals the unit history, checked per `mode`
/// and solved by least squares over the flattened operator space, so
/// overcomplete lists and null members are handled uniformly.
pub fn validate_family(
    f: &Family,
    b: &BridgingSet,
    tol: f64,
    mode: CompletenessMode,
) -> Result<FamilyReport> {
    let tl = f.timeline();
    if !b.matches(tl) {
        return Err(Error::TimelineMismatch);
    }
    let k = f.len();
    let mut failures = Vec::new();

    let mut gram = CMatrix::zeros(k, k);
    for i in 0..k {
        for j in 0..k {
            gram.set(i, j, inner(&f.members[i], &f.members[j], b)?);
        }
    }
    let weights: Vec<f64> = (0..k).map(|i| gram.at(i, i).re).collect();
    for (i, &w) in weights.iter().enumerate() {
        if w.abs() > tol && (w - 1.0).abs() > tol {
            failures.push(format!(
                "member {}: weight {:.6} is neither 0 nor 1",
                f.labels[i], w
            ));
        }
    }
    for i in 0..k {
        for j in (i + 1)..k {
            let v = gram.at(i, j).norm();
            if v > tol {
                failures.push(format!(
                    "members {} and {} are not orthogonal: |inner product| = {:.6}",
                    f.labels[i], f.labels[j], v
                ));
            }
        }
    }

    let column = |m: &HistoryState| -> Result<CMatrix> {
        Ok(match mode {
            CompletenessMode::Exact => m.full_operator().flatten_column(),
            CompletenessMode::Physical => k_of(m, b)?.flatten_column(),
        })
    };
    let target = match mode {
        CompletenessMode::Exact => CMatrix::identity(tl.total_dim()).flatten_column(),
        CompletenessMode::Physical => b.propagator(0, tl.len() - 1)?.flatten_column(),
    };
    let mut a = CMatrix::zeros(target.rows(), k);
    for (j, m) in f.members.iter().enumerate() {
        let col = column(m)?;
        for r in 0..target.rows() {
            a.set(r, j, col.at(r, 0));
        }
    }
    let sol = lstsq(&a, &target)?;
    let coefficients: Vec<C64> = (0..k).map(|j| sol.solution.at(j, 0)).collect();
    if sol.residual > tol {
        failures.push(format!(
            "completeness residual {:.3e} exceeds tolerance {:.1e}",
            sol.residual, tol
        ));
    }

    Ok(FamilyReport {
        labels: f.labels.clone(),
        gram,
        weights,
        coefficients,
        completeness_residual: sol.residual,
        mode,
        tol,
        failures,
    })
}

pub(crate) fn require_validated(f: &Family, report: &FamilyReport) -> Result<()> {
    if report.labels.len() != f.len() || !report.passed() {
        return Err(Error::FamilyNotValidated);
    }
    Ok(())
}

/// Expands `psi` over a validated family: `d_i` is the inner product with
/// member `i` for unit-weight members and 0 for null members. The residual
/// is the weight of the physical difference between `psi` and the
/// reconstruction.
pub fn decompose(
    psi: &HistoryState,
    f: &Family,
    report: &FamilyReport,
    b: &BridgingSet,
) -> Result<(Vec<C64>, f64)> {
    require_validated(f, report)?;
    let mut coeffs = Vec::with_capacity(f.len());
    for (i, m) in f.members().iter().enumerate() {
        if (report.weights[i] - 1.0).abs() <= report.tol {
            coeffs.push(inner(m, psi, b)?);
        } else {
            coeffs.push(C64::ZERO);
        }
    }
    let mut recon = HistoryState::zero(psi.timeline().clone());
    for (i, m) in f.members().iter().enumerate() {
        recon = recon.add(&m.scale(coeffs[i]))?;
    }
    let residual = weight(&psi.sub(&recon)?, b)?;
    Ok((coeffs, residual))
}

/// Born-rule probabilities of measuring `psi` to be each family member.
/// Requires unit weight within `tol`.
pub fn probabilities(
    psi: &HistoryState,
    f: &Family,
    report: &FamilyReport,
    b: &BridgingSet,
    tol: f64,
) -> Result<Vec<f64>> {
    require_validated(f, report)?;
    let w = weight(psi, b)?;
    if (w - 1.0).abs() > tol {
        return Err(Error::NotNormalized { weight: w });
    }
    f.members()
        .iter()
        .map(|m| Ok(inner(m, psi, b)?.norm_sqr()))
        .collect()
}

/// Checks the bound on the number of nonzero members: at most
/// `dim(t_n) * dim(t_1)` unit-weight members fit in one family.
pub fn nonzero_bound_check(f: &Family, report: &FamilyReport) -> Result<bool> {
    require_validated(f, report)?;
    let nonzero = report
        .weights
        .iter()
        .filter(|&&w| (w - 1.0).abs() <= report.tol)
        .count();
    let tl = f.timeline();
    Ok(nonzero <= tl.last_dim() * tl.first_dim())
}

/// Result of a compatibility test between two validated families.
#[derive(Clone, Debug)]
pub struct Compatibility {
    /// True when every member of the second family is physically a
    /// combination of members of the first.
    pub compatible: bool,
    /// Row `j` holds the coefficients expressing member `j` of the second
    /// family over the first family.
    pub transform: CMatrix,
    /// Per-member least-squares residuals on chain images.
    pub residuals: Vec<f64>,
}

/// Tests whether each member of `fb` is a linear combination of members of
/// `fa` up to physical equality, by least squares on chain-operator images.
pub fn compatible(
    fa: &Family,
    ra: &FamilyReport,
    fb: &Family,
    rb: &FamilyReport,
    b: &BridgingSet,
    tol: f64,
) -> Result<Compatibility> {
    require_validated(fa, ra)?;
    require_validated(fb, rb)?;
    if !fa.timeline().compatible(fb.timeline()) {
        return Err(Error::TimelineMismatch);
    }
    let ka = fa.len();
    let rows = fa.timeline().last_dim() * fa.timeline().first_dim();
    let mut a = CMatrix::zeros(rows, ka);
    for (j, m) in fa.members().iter().enumerate() {
        let col = k_of(m, b)?.flatten_column();
        for r in 0..rows {
            a.set(r, j, col.at(r, 0));
        }
    }
    let mut transform = CMatrix::zeros(fb.len(), ka);
    let mut residuals = Vec::with_capacity(fb.len());
    for (j, m) in fb.members().iter().enumerate() {
        let sol = lstsq(&a, &k_of(m, b)?.flatten_column())?;
        for i in 0..ka {
            transform.set(j, i, sol.solution.at(i, 0));
        }
        residuals.push(sol.residual);
    }
    let ok = residuals.iter().all(|&r| r <= tol);
    Ok(Compatibility { compatible: ok, transform, residuals })
}

/// Sandwiches every chain factor at `slot` with a projector acting on one
/// tensor part of that slot. No renormalization; the result's weight is the
/// probability weight passing the condition.
pub fn condition_raw(
    psi: &HistoryState,
    slot: usize,
    part: usize,
    p: &CMatrix,
) -> Result<HistoryState> {
    let tl = psi.timeline().clone();
    if slot >= tl.len() {
        return Err(Error::shape(format!("slot index {slot} out of range")));
    }
    let parts = &tl.slot(slot).parts;
    if part >= parts.len() {
        return Err(Error::shape(format!(
            "slot {slot} has {} parts, no part {part}",
            parts.len()
        )));
    }
    let d = parts[part];
    if p.rows() != d || p.cols() != d {
        return Err(Error::shape(format!(
            "projector is {}x{}, part dimension is {d}",
            p.rows(),
            p.cols()
        )));
    }
    let pre: usize = parts[..part].iter().product();
    let post: usize = parts[part + 1..].iter().product();
    let e = CMatrix::identity(pre).kron(p).kron(&CMatrix::identity(post));
    let edag = e.dagger();
    let terms = psi
        .terms()
        .iter()
        .map(|t| {
            let mut factors = t.factors.clone();
            factors[slot] = e.mul(&factors[slot])?.mul(&edag)?;
            Ok(crate::history::ChainTerm::new(t.coeff, factors))
        })
        .collect::<Result<Vec<_>>>()?;
    HistoryState::new(tl, terms)
}

/// Conditions `psi` on the projector and renormalizes. The projector must be
/// one within `tol`; conditioning that annihilates the state is
/// [`Error::ZeroWeight`].
pub fn conditional_history(
    psi: &HistoryState,
    slot: usize,
    part: usize,
    p: &CMatrix,
    b: &BridgingSet,
    tol: f64,
) -> Result<HistoryState> {
    let dev = p.projector_deviation();
    if dev > tol.max(1e-9) {
        return Err(Error::shape(format!(
            "conditioning operator is not a projector, deviation {dev:.3e}"
        )));
    }
    normalize(&condition_raw(psi, slot, part, p)?, b, tol)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::history::{physically_equal, Slot};
    use crate::linalg::cr;
    use crate::registry::Registry;
    use proptest::prelude::*;
    use std::sync::Arc;

    const TOL: f64 = 1e-10;
    const SQRT2: f64 = std::f64::consts::SQRT_2;

    fn chain3(tl: &Arc<Timeline>, coeff: f64, names: [&str; 3]) -> HistoryState {
        let r = Registry::with_builtins();
        let kets: Vec<_> = names.iter().map(|n| r.ket(n).unwrap()).collect();
        HistoryState::projector_chain(tl.clone(), cr(coeff), &kets).unwrap()
    }

    /// Pair of spin chains per member, latest time listed last here.
    fn y_member(tl: &Arc<Timeline>, a: [&str; 3], b: [&str; 3]) -> HistoryState {
        chain3(tl, SQRT2, a).add(&chain3(tl, SQRT2, b)).unwrap()
    }

    fn y_family(tl: &Arc<Timeline>) -> Family {
        let members = vec![
            y_member(tl, ["z+", "x+", "z+"], ["z+", "x-", "z-"]),
            y_member(tl, ["z+", "x+", "z-"], ["z+", "x-", "z+"]),
            y_member(tl, ["z-", "x+", "z+"], ["z-", "x-", "z-"]),
            y_member(tl, ["z-", "x+", "z-"], ["z-", "x-", "z+"]),
        ];
        let labels = (1..=4).map(|i| format!("Y{i}")).collect();
        Family::with_labels(members, labels).unwrap()
    }

    fn setup() -> (Arc<Timeline>, BridgingSet, Family) {
        let tl = Timeline::uniform(3, 2).unwrap();
        let b = BridgingSet::trivial(&tl).unwrap();
        let f = y_family(&tl);
        (tl, b, f)
    }

    #[test]
    fn spin_chain_family_passes_both_modes() {
        let (_tl, b, f) = setup();
        for mode in [CompletenessMode::Exact, CompletenessMode::Physical] {
            let report = validate_family(&f, &b, TOL, mode).unwrap();
            assert!(report.passed(), "failures: {:?}", report.failures);
            for &w in &report.weights {
                assert!((w - 1.0).abs() <= TOL);
            }
            for c in &report.coefficients {
                assert!((c.re - 1.0 / SQRT2).abs() <= 1e-9 && c.im.abs() <= 1e-9);
            }
            assert!(report.completeness_residual <= TOL);
        }
    }

    #[test]
    fn completeness_assembles_unit_history_exactly() {
        let (tl, b, f) = setup();
        let report = validate_family(&f, &b, TOL, CompletenessMode::Exact).unwrap();
        let mut acc = CMatrix::zeros(tl.total_dim(), tl.total_dim());
        for (c, m) in report.coefficients.iter().zip(f.members()) {
            acc = acc.add(&m.full_operator().scale(*c)).unwrap();
        }
        assert!(acc.approx_eq(&CMatrix::identity(tl.total_dim()), 1e-10));
    }

    #[test]
    fn doubled_coefficients_fail_the_weight_check() {
        let (_tl, b, f) = setup();
        let scaled =
            Family::new(f.members().iter().map(|m| m.scale(cr(SQRT2))).collect()).unwrap();
        let report = validate_family(&scaled, &b, TOL, CompletenessMode::Exact).unwrap();
        assert!(!report.passed());
        for &w in &report.weights {
            assert!((w - 2.0).abs() <= 1e-9, "weight {w}");
        }
        assert!(report.failures.iter().all(|m| m.contains("weight")));
    }

    #[test]
    fn duplicate_members_fail_orthogonality_naming_both() {
        let (tl, b, _f) = setup();
        let m = y_member(&tl, ["z+", "x+", "z+"], ["z+", "x-", "z-"]);
        let fam = Family::new(vec![m.clone(), m]).unwrap();
        let report = validate_family(&fam, &b, TOL, CompletenessMode::Exact).unwrap();
        assert!(!report.passed());
        assert!(report
            .failures
            .iter()
            .any(|msg| msg.contains("m1") && msg.contains("m2") && msg.contains("orthogonal")));
    }

    #[test]
    fn incomplete_subfamily_fails_only_completeness() {
        let (_tl, b, f) = setup();
        let sub = Family::new(f.members()[..2].to_vec()).unwrap();
        let report = validate_family(&sub, &b, TOL, CompletenessMode::Exact).unwrap();
        assert!(!report.passed());
        assert_eq!(report.failures.len(), 1);
        assert!(report.failures[0].contains("completeness"));
        assert_eq!(report.coefficients.len(), 2);
    }

    #[test]
    fn member_order_does_not_change_the_verdict() {
        let (_tl, b, f) = setup();
        let base = validate_family(&f, &b, TOL, CompletenessMode::Exact).unwrap();
        let perm = [3usize, 1, 0, 2];
        let shuffled = Family::new(perm.iter().map(|&i| f.members()[i].clone()).collect()).unwrap();
        let report = validate_family(&shuffled, &b, TOL, CompletenessMode::Exact).unwrap();
        assert!(report.passed());
        assert!((report.completeness_residual - base.completeness_residual).abs() <= 1e-12);
    }

    #[test]
    fn null_members_are_allowed_and_excluded_from_the_bound() {
        let (tl, b, f) = setup();
        let mut members = f.members().to_vec();
        members.push(HistoryState::zero(tl));
        let fam = Family::new(members).unwrap();
        let report = validate_family(&fam, &b, TOL, CompletenessMode::Exact).unwrap();
        assert!(report.passed(), "failures: {:?}", report.failures);
        assert!(report.weights[4].abs() <= TOL);
        assert!(nonzero_bound_check(&fam, &report).unwrap());
    }

    #[test]
    fn decomposition_splits_the_constant_spin_up_history() {
        let (tl, b, f) = setup();
        let report = validate_family(&f, &b, TOL, CompletenessMode::Exact).unwrap();
        let psi = chain3(&tl, 1.0, ["z+", "z+", "z+"]);
        let (d, residual) = decompose(&psi, &f, &report, &b).unwrap();
        let want = [1.0 / SQRT2, 1.0 / SQRT2, 0.0, 0.0];
        for (di, wi) in d.iter().zip(want) {
            assert!((di.re - wi).abs() <= 1e-10 && di.im.abs() <= 1e-10);
        }
        assert!(residual <= 1e-10);
        let total: f64 = d.iter().map(|c| c.norm_sqr()).sum();
        assert!((total - 1.0).abs() <= 1e-9);
    }

    #[test]
    fn decomposition_is_linear_in_the_state() {
        let (tl, b, f) = setup();
        let report = validate_family(&f, &b, TOL, CompletenessMode::Exact).unwrap();
        let alpha = C64::new(0.6, 0.0);
        let beta = C64::new(0.0, 0.8);
        let psi = chain3(&tl, 1.0, ["z+", "z+", "z+"])
            .scale(alpha)
            .add(&chain3(&tl, 1.0, ["z-", "z-", "z-"]).scale(beta))
            .unwrap();
        let (d, residual) = decompose(&psi, &f, &report, &b).unwrap();
        let want = [alpha / SQRT2, alpha / SQRT2, beta / SQRT2, beta / SQRT2];
        for (di, wi) in d.iter().zip(want) {
            assert!((di - wi).norm() <= 1e-10);
        }
        assert!(residual <= 1e-10);
    }

    #[test]
    fn a_member_decomposes_to_a_unit_vector() {
        let (_tl, b, f) = setup();
        let report = validate_family(&f, &b, TOL, CompletenessMode::Exact).unwrap();
        let (d, residual) = decompose(&f.members()[1].clone(), &f, &report, &b).unwrap();
        for (i, di) in d.iter().enumerate() {
            let want = if i == 1 { 1.0 } else { 0.0 };
            assert!((di - cr(want)).norm() <= 1e-10);
        }
        assert!(residual <= 1e-10);
    }

    #[test]
    fn unvalidated_families_are_rejected() {
        let (tl, b, f) = setup();
        let sub = Family::new(f.members()[..2].to_vec()).unwrap();
        let report = validate_family(&sub, &b, TOL, CompletenessMode::Exact).unwrap();
        let psi = chain3(&tl, 1.0, ["z+", "z+", "z+"]);
        assert!(matches!(
            decompose(&psi, &sub, &report, &b),
            Err(Error::FamilyNotValidated)
        ));
        assert!(matches!(
            probabilities(&psi, &sub, &report, &b, TOL),
            Err(Error::FamilyNotValidated)
        ));
    }

    #[test]
    fn born_rule_probabilities() {
        let (tl, b, f) = setup();
        let report = validate_family(&f, &b, TOL, CompletenessMode::Exact).unwrap();
        let psi = chain3(&tl, 1.0, ["z+", "z+", "z+"]);
        let p = probabilities(&psi, &f, &report, &b, TOL).unwrap();
        let want = [0.5, 0.5, 0.0, 0.0];
        for (pi, wi) in p.iter().zip(want) {
            assert!((pi - wi).abs() <= 1e-10);
        }
        let p1 = probabilities(&f.members()[0].clone(), &f, &report, &b, TOL).unwrap();
        assert!((p1[0] - 1.0).abs() <= 1e-10);
        assert!(p1[1..].iter().all(|&x| x <= 1e-10));
        let unnormalized = psi.scale(cr(2.0));
        assert!(matches!(
            probabilities(&unnormalized, &f, &report, &b, TOL),
            Err(Error::NotNormalized { .. })
        ));
    }

    #[test]
    fn saturated_family_meets_the_member_bound() {
        let (_tl, b, f) = setup();
        let report = validate_family(&f, &b, TOL, CompletenessMode::Exact).unwrap();
        assert_eq!(f.len(), 4);
        assert!(nonzero_bound_check(&f, &report).unwrap());
    }

    #[test]
    fn every_family_is_compatible_with_itself() {
        let (_tl, b, f) = setup();
        let report = validate_family(&f, &b, TOL, CompletenessMode::Exact).unwrap();
        let c = compatible(&f, &report, &f, &report, &b, TOL).unwrap();
        assert!(c.compatible);
        assert!(c.transform.approx_eq(&CMatrix::identity(4), 1e-9));
        assert!(c.residuals.iter().all(|&r| r <= 1e-10));
    }

    #[test]
    fn compatibility_is_direction_sensitive() {
        let (tl, b, f) = setup();
        let ry = validate_family(&f, &b, TOL, CompletenessMode::Exact).unwrap();
        let r = Registry::with_builtins();
        let final_slot = |name: &str| {
            HistoryState::chain(
                tl.clone(),
                cr(1.0),
                vec![
                    r.projector(name, TOL).unwrap(),
                    CMatrix::identity(2),
                    CMatrix::identity(2),
                ],
            )
            .unwrap()
        };
        let fa = Family::new(vec![final_slot("z+"), final_slot("z-")]).unwrap();
        let ra = validate_family(&fa, &b, TOL, CompletenessMode::Exact).unwrap();
        assert!(ra.passed(), "failures: {:?}", ra.failures);
        // the coarse two-member family spans only part of the chain image
        // space, so the spin-chain family cannot be expressed over it
        let forward = compatible(&fa, &ra, &f, &ry, &b, TOL).unwrap();
        assert!(!forward.compatible);
        assert!(forward.residuals.iter().any(|&r| r > 1e-3));
        // the reverse direction works: the saturated family spans everything
        let back = compatible(&f, &ry, &fa, &ra, &b, TOL).unwrap();
        assert!(back.compatible, "residuals: {:?}", back.residuals);
    }

    /// Two spin-1/2 particles at three times, trivial bridging: the
    /// time-entangled pair-state used by the conditioning tests.
    fn entangled_pair() -> (Arc<Timeline>, BridgingSet, HistoryState) {
        let tl = Timeline::new(vec![
            Slot::with_parts("t1", vec![2, 2]),
            Slot::with_parts("t2", vec![2, 2]),
            Slot::with_parts("t3", vec![2, 2]),
        ])
        .unwrap();
        let b = BridgingSet::trivial(&tl).unwrap();
        let r = Registry::with_builtins();
        let joint = |p1: &str, p2: Option<&str>| {
            let first = r.projector(p1, TOL).unwrap();
            match p2 {
                Some(name) => first.kron(&r.projector(name, TOL).unwrap()),
                None => first.kron(&CMatrix::identity(2)),
            }
        };
        // both terms: particle 1 measured in z at t1, passed through x+ at
        // t2; particle 2 starts at x+ and ends equal to particle 1's start
        let term = |s: &str| {
            vec![joint(s, Some("x+")), joint("x+", None), joint("z+", Some(s))]
        };
        let state = HistoryState::new(
            tl.clone(),
            vec![
                crate::history::ChainTerm::new(cr(2.0), term("z+")),
                crate::history::ChainTerm::new(cr(2.0), term("z-")),
            ],
        )
        .unwrap();
        (tl, b, state)
    }

    #[test]
    fn conditioning_at_the_first_time_fixes_the_partner_at_the_last() {
        let (_tl, b, z1) = entangled_pair();
        assert!((weight(&z1, &b).unwrap() - 1.0).abs() <= 1e-10);
        let r = Registry::with_builtins();
        let pz_plus = r.projector("z+", TOL).unwrap();
        let pz_minus = r.projector("z-", TOL).unwrap();
        let cond = conditional_history(&z1, 0, 0, &pz_plus, &b, TOL).unwrap();
        // particle 2 at the last time is now definitely spin up
        let keep = condition_raw(&cond, 2, 1, &pz_plus).unwrap();
        assert!((weight(&keep, &b).unwrap() - 1.0).abs() <= 1e-9);
        assert!(matches!(
            conditional_history(&cond, 2, 1, &pz_minus, &b, TOL),
            Err(Error::ZeroWeight)
        ));
        // and symmetrically for spin down
        let cond_down = conditional_history(&z1, 0, 0, &pz_minus, &b, TOL).unwrap();
        let keep_down = condition_raw(&cond_down, 2, 1, &pz_minus).unwrap();
        assert!((weight(&keep_down, &b).unwrap() - 1.0).abs() <= 1e-9);
    }

    #[test]
    fn complementary_conditions_split_the_weight() {
        let (_tl, b, z1) = entangled_pair();
        let r = Registry::with_builtins();
        let up = condition_raw(&z1, 0, 0, &r.projector("z+", TOL).unwrap()).unwrap();
        let down = condition_raw(&z1, 0, 0, &r.projector("z-", TOL).unwrap()).unwrap();
        let wu = weight(&up, &b).unwrap();
        let wd = weight(&down, &b).unwrap();
        assert!((wu - 0.5).abs() <= 1e-10);
        assert!((wd - 0.5).abs() <= 1e-10);
        assert!((wu + wd - weight(&z1, &b).unwrap()).abs() <= 1e-10);
    }

    #[test]
    fn conditioning_on_the_identity_changes_nothing() {
        let (_tl, b, z1) = entangled_pair();
        let cond = condition_raw(&z1, 1, 1, &CMatrix::identity(2)).unwrap();
        assert!(physically_equal(&z1, &cond, &b, 1e-10).unwrap());
    }

    #[test]
    fn non_projector_conditioning_is_rejected() {
        let (_tl, b, z1) = entangled_pair();
        let r = Registry::with_builtins();
        let h = r.gate("H").unwrap();
        assert!(conditional_history(&z1, 0, 0, &h, &b, TOL).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn random_superpositions_decompose_with_unit_total(
            ar in -1.0f64..1.0, ai in -1.0f64..1.0,
            br in -1.0f64..1.0, bi in -1.0f64..1.0,
        ) {
            let norm = (ar * ar + ai * ai + br * br + bi * bi).sqrt();
            prop_assume!(norm > 0.1);
            let (tl, b, f) = setup();
            let report = validate_family(&f, &b, TOL, CompletenessMode::Exact).unwrap();
            let alpha = C64::new(ar / norm, ai / norm);
            let beta = C64::new(br / norm, bi / norm);
            let psi = chain3(&tl, 1.0, ["z+", "z+", "z+"]).scale(alpha)
                .add(&chain3(&tl, 1.0, ["z-", "z-", "z-"]).scale(beta)).unwrap();
            let (d, residual) = decompose(&psi, &f, &report, &b).unwrap();
            let total: f64 = d.iter().map(|c| c.norm_sqr()).sum();
            prop_assert!((total - 1.0).abs() <= 1e-9);
            prop_assert!(residual <= 1e-9);
            let p = probabilities(&psi, &f, &report, &b, 1e-9).unwrap();
            let psum: f64 = p.iter().sum();
            prop_assert!((psum - 1.0).abs() <= 1e-9);
        }

        #[test]
        fn shuffled_members_validate_identically(perm in Just(vec![0usize,1,2,3]).prop_shuffle()) {
            let (_tl, b, f) = setup();
            let shuffled = Family::new(
                perm.iter().map(|&i| f.members()[i].clone()).collect()
            ).unwrap();
            let report = validate_family(&shuffled, &b, TOL, CompletenessMode::Exact).unwrap();
            prop_assert!(report.passed());
            prop_assert!(report.completeness_residual <= TOL);
        }
    }
}

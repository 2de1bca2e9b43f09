//! Ancilla marking: controlled couplings between the system and ancilla
//! registers at chosen times, joint simulation, reconstruction of which
//! ancilla label tags which family member, and ancilla measurements that
//! collapse the joint state, singly or in sequence.

use std::ops::Range;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::family::{require_validated, Family, FamilyReport};
use crate::history::{k_of, BridgingSet, Timeline};
use crate::linalg::{lstsq, C64, CKet, CMatrix};

/// One controlled coupling, applied right after the system arrives at slot
/// `time_index`. Each control pairs a projector on that slot with a unitary
/// on the whole ancilla register; together the projectors must resolve the
/// identity, so the coupling re-routes amplitude without discarding any.
#[derive(Clone, Debug)]
pub struct MarkingStep {
    pub time_index: usize,
    pub controls: Vec<(CMatrix, CMatrix)>,
}

impl MarkingStep {
    pub fn new(time_index: usize, controls: Vec<(CMatrix, CMatrix)>) -> Self {
        MarkingStep { time_index, controls }
    }

    /// Ancilla states the step writes for each control branch, starting from
    /// `anc0`.
    pub fn ancilla_images(&self, anc0: &CKet) -> Result<Vec<CKet>> {
        self.controls.iter().map(|(_, v)| anc0.apply(v)).collect()
    }
}

/// True when every pair of branch images is either parallel or orthogonal,
/// so the coupling distinguishes any two branches completely or not at all.
/// A coupling that fails this leaks partial which-branch information into
/// the ancilla; downstream, no family's labels can come out orthonormal.
pub fn sharp_coupling(images: &[CKet], tol: f64) -> Result<bool> {
    for (i, a) in images.iter().enumerate() {
        for b in images.iter().skip(i + 1) {
            let overlap = a.inner(b)?.norm();
            let scale = a.norm() * b.norm();
            let parallel = (overlap - scale).abs() <= tol * (1.0 + scale);
            let orthogonal = overlap <= tol * (1.0 + scale);
            if !parallel && !orthogonal {
                return Ok(false);
            }
        }
    }
    Ok(true)
}

/// A system evolving over a timeline with ancilla registers riding along,
/// coupled to it by a validated schedule of marking steps.
#[derive(Clone, Debug)]
pub struct MarkedSystem {
    timeline: Arc<Timeline>,
    bridging: BridgingSet,
    ancilla_dims: Vec<usize>,
    system_init: CKet,
    ancilla_init: CKet,
    schedule: Vec<MarkingStep>,
}

impl MarkedSystem {
    /// Validates shapes, normalization, schedule ordering, and every step's
    /// control structure up front; `simulate` can then assume all of it.
    pub fn new(
        timeline: Arc<Timeline>,
        bridging: BridgingSet,
        ancilla_dims: Vec<usize>,
        system_init: CKet,
        ancilla_init: CKet,
        schedule: Vec<MarkingStep>,
        tol: f64,
    ) -> Result<Self> {
        if !bridging.matches(&timeline) {
            return Err(Error::TimelineMismatch);
        }
        if ancilla_dims.is_empty() || ancilla_dims.iter().any(|&d| d == 0) {
            return Err(Error::shape("ancilla registers must have positive dimension"));
        }
        let anc_dim: usize = ancilla_dims.iter().product();
        if system_init.dim() != timeline.first_dim() {
            return Err(Error::shape(format!(
                "initial system ket has dimension {}, first slot has {}",
                system_init.dim(),
                timeline.first_dim()
            )));
        }
        if ancilla_init.dim() != anc_dim {
            return Err(Error::shape(format!(
                "initial ancilla ket has dimension {}, registers give {}",
                ancilla_init.dim(),
                anc_dim
            )));
        }
        if !system_init.is_normalized(tol) {
            return Err(Error::NormalizationError { norm: system_init.norm() });
        }
        if !ancilla_init.is_normalized(tol) {
            return Err(Error::NormalizationError { norm: ancilla_init.norm() });
        }
        for pair in schedule.windows(2) {
            if pair[0].time_index >= pair[1].time_index {
                return Err(Error::InvalidStep {
                    detail: "schedule must be strictly time-ordered with one step per slot"
                        .into(),
                });
            }
        }
        for step in &schedule {
            if step.time_index >= timeline.len() {
                return Err(Error::InvalidStep {
                    detail: format!(
                        "step at time {} outside a timeline of {} slots",
                        step.time_index,
                        timeline.len()
                    ),
                });
            }
            validate_step(step, timeline.dim(step.time_index), anc_dim, tol)?;
        }
        Ok(MarkedSystem {
            timeline,
            bridging,
            ancilla_dims,
            system_init,
            ancilla_init,
            schedule,
        })
    }

    pub fn timeline(&self) -> &Arc<Timeline> {
        &self.timeline
    }

    pub fn bridging(&self) -> &BridgingSet {
        &self.bridging
    }

    pub fn ancilla_dims(&self) -> &[usize] {
        &self.ancilla_dims
    }

    /// Dimension of the whole ancilla register.
    pub fn ancilla_dim(&self) -> usize {
        self.ancilla_dims.iter().product()
    }

    pub fn system_init(&self) -> &CKet {
        &self.system_init
    }

    pub fn ancilla_init(&self) -> &CKet {
        &self.ancilla_init
    }

    pub fn schedule(&self) -> &[MarkingStep] {
        &self.schedule
    }

    fn step_at(&self, time_index: usize) -> Option<&MarkingStep> {
        self.schedule.iter().find(|s| s.time_index == time_index)
    }
}

fn validate_step(step: &MarkingStep, slot_dim: usize, anc_dim: usize, tol: f64) -> Result<()> {
    let j = step.time_index;
    if step.controls.is_empty() {
        return Err(Error::InvalidStep {
            detail: format!("step at time {j} has no controls"),
        });
    }
    for (p, v) in &step.controls {
        if p.rows() != slot_dim || p.cols() != slot_dim {
            return Err(Error::InvalidStep {
                detail: format!(
                    "control projector at time {j} is {}x{}, slot dimension is {slot_dim}",
                    p.rows(),
                    p.cols()
                ),
            });
        }
        if p.hermitian_deviation() > tol || p.projector_deviation() > tol {
            return Err(Error::InvalidStep {
                detail: format!("control at time {j} is not a hermitian projector"),
            });
        }
        if v.rows() != anc_dim || v.cols() != anc_dim {
            return Err(Error::InvalidStep {
                detail: format!(
                    "ancilla operation at time {j} is {}x{}, register dimension is {anc_dim}",
                    v.rows(),
                    v.cols()
                ),
            });
        }
        if v.unitary_deviation() > tol {
            return Err(Error::InvalidStep {
                detail: format!("ancilla operation at time {j} is not unitary"),
            });
        }
    }
    for (i, (p, _)) in step.controls.iter().enumerate() {
        for (q, _) in step.controls.iter().skip(i + 1) {
            if p.mul(q)?.max_abs() > tol {
                return Err(Error::InvalidStep {
                    detail: format!("control projectors at time {j} overlap"),
                });
            }
        }
    }
    let mut sum = CMatrix::zeros(slot_dim, slot_dim);
    for (p, _) in &step.controls {
        sum = sum.add(p)?;
    }
    let deviation = sum.sub(&CMatrix::identity(slot_dim))?.max_abs();
    if deviation > tol {
        return Err(Error::InvalidStep {
            detail: format!(
                "control projectors at time {j} do not resolve the identity \
                 (deviation {deviation:.3e}); such a coupling would decohere the system"
            ),
        });
    }
    Ok(())
}

/// Applies `t` to the system factor of a joint ket with ancilla dimension
/// `anc`. The bridging step may change the system dimension.
fn apply_system(t: &CMatrix, joint: &CKet, anc: usize) -> Result<CKet> {
    let d_in = t.cols();
    if joint.dim() != d_in * anc {
        return Err(Error::shape(format!(
            "joint ket of dimension {} does not factor as {}x{}",
            joint.dim(),
            d_in,
            anc
        )));
    }
    let mut out = CKet::zeros(t.rows() * anc);
    for r in 0..t.rows() {
        for a in 0..anc {
            let mut acc = C64::ZERO;
            for s in 0..d_in {
                acc += t.at(r, s) * joint.at(s * anc + a);
            }
            out.set(r * anc + a, acc);
        }
    }
    Ok(out)
}

fn apply_step(step: &MarkingStep, joint: &CKet, anc: usize) -> Result<CKet> {
    let slot_dim = joint.dim() / anc;
    let mut op = CMatrix::zeros(slot_dim * anc, slot_dim * anc);
    for (p, v) in &step.controls {
        op = op.add(&p.kron(v))?;
    }
    joint.apply(&op)
}

/// Runs the marked evolution: alternately a bridging step on the system and
/// the scheduled coupling at the slot just reached, starting from
/// `system_init (x) ancilla_init`. A step at slot 0 fires before any
/// evolution.
pub fn simulate(m: &MarkedSystem) -> Result<CKet> {
    let anc = m.ancilla_dim();
    let mut joint = m.system_init.kron(&m.ancilla_init);
    if let Some(step) = m.step_at(0) {
        joint = apply_step(step, &joint, anc)?;
    }
    for p in 1..m.timeline.len() {
        joint = apply_system(m.bridging.step(p - 1), &joint, anc)?;
        if let Some(step) = m.step_at(p) {
            joint = apply_step(step, &joint, anc)?;
        }
    }
    let norm = joint.norm();
    if (norm - 1.0).abs() > 1e-9 {
        return Err(Error::Numerical {
            detail: format!("marked evolution drifted to norm {norm}"),
        });
    }
    Ok(joint)
}

/// The resolved correspondence between family members and ancilla states:
/// the final joint state equals the sum over members of
/// `branch_i (x) label_i`.
#[derive(Clone, Debug)]
pub struct BranchMap {
    /// Solved ancilla label per member; `None` for null members, which
    /// contribute no branch to tag.
    pub labels: Vec<Option<CKet>>,
    /// Weighted chain images `c_i K_i |psi0>` at the final slot, one per
    /// member.
    pub branches: Vec<CKet>,
    /// Least-squares residual of the reconstruction.
    pub residual: f64,
}

/// Solves the final joint state for one ancilla label per family member and
/// checks that the schedule actually measures the family: the labels of all
/// non-null members must come out orthonormal and the reconstruction must be
/// exact within `tol`.
pub fn branch_map(
    m: &MarkedSystem,
    f: &Family,
    report: &FamilyReport,
    tol: f64,
) -> Result<BranchMap> {
    require_validated(f, report)?;
    if !f.timeline().compatible(&m.timeline) {
        return Err(Error::TimelineMismatch);
    }
    let final_state = simulate(m)?;
    let sys = m.timeline.last_dim();
    let anc = m.ancilla_dim();
    let k = f.len();

    let mut branch_cols = CMatrix::zeros(sys, k);
    let mut branches = Vec::with_capacity(k);
    for (i, member) in f.members().iter().enumerate() {
        let chain = k_of(member, &m.bridging)?;
        let branch = m.system_init.apply(&chain)?.scale(report.coefficients[i]);
        for r in 0..sys {
            branch_cols.set(r, i, branch.at(r));
        }
        branches.push(branch);
    }
    let mut joint = CMatrix::zeros(sys, anc);
    for s in 0..sys {
        for a in 0..anc {
            joint.set(s, a, final_state.at(s * anc + a));
        }
    }
    let sol = lstsq(&branch_cols, &joint)?;
    if sol.residual > tol {
        return Err(Error::Misaligned {
            residual: sol.residual,
            detail: "the final joint state is not a combination of the family's branches"
                .into(),
        });
    }
    let mut labels: Vec<Option<CKet>> = Vec::with_capacity(k);
    for i in 0..k {
        if report.weights[i] < 0.5 {
            labels.push(None);
            continue;
        }
        let mut label = CKet::zeros(anc);
        for a in 0..anc {
            label.set(a, sol.solution.at(i, a));
        }
        labels.push(Some(label));
    }
    let tagged: Vec<&CKet> = labels.iter().flatten().collect();
    let mut deviation = 0.0f64;
    for (i, a) in tagged.iter().enumerate() {
        for (j, b) in tagged.iter().enumerate().skip(i) {
            let expect = if i == j { 1.0 } else { 0.0 };
            deviation = deviation.max((a.inner(b)?.norm() - expect).abs());
        }
    }
    if deviation > tol {
        return Err(Error::Misaligned {
            residual: sol.residual,
            detail: format!(
                "branch labels are not orthonormal (gram deviation {deviation:.3e}); \
                 the schedule does not measure this family"
            ),
        });
    }
    Ok(BranchMap { labels, branches, residual: sol.residual })
}

/// Register bookkeeping for a contiguous range of ancilla registers.
struct RegisterSplit {
    pre: usize,
    sub: usize,
    post: usize,
}

fn split_registers(dims: &[usize], registers: &Range<usize>) -> Result<RegisterSplit> {
    if registers.start >= registers.end || registers.end > dims.len() {
        return Err(Error::shape(format!(
            "register range {}..{} invalid for {} registers",
            registers.start,
            registers.end,
            dims.len()
        )));
    }
    Ok(RegisterSplit {
        pre: dims[..registers.start].iter().product(),
        sub: dims[registers.clone()].iter().product(),
        post: dims[registers.end..].iter().product(),
    })
}

/// Measures a contiguous range of ancilla registers of a joint state in the
/// given orthonormal basis. Returns one `(probability, collapsed joint
/// state)` pair per basis vector; outcomes with no amplitude are reported
/// with probability 0 and no collapsed state rather than dropped.
pub fn measure_ancilla(
    m: &MarkedSystem,
    state: &CKet,
    registers: Range<usize>,
    basis: &[CKet],
    tol: f64,
) -> Result<Vec<(f64, Option<CKet>)>> {
    let split = split_registers(&m.ancilla_dims, &registers)?;
    let sys = m.timeline.last_dim();
    let anc = m.ancilla_dim();
    if state.dim() != sys * anc {
        return Err(Error::shape(format!(
            "joint state has dimension {}, expected {}",
            state.dim(),
            sys * anc
        )));
    }
    if basis.len() != split.sub || basis.iter().any(|w| w.dim() != split.sub) {
        return Err(Error::BasisNotOrthonormal);
    }
    for (i, a) in basis.iter().enumerate() {
        for (j, b) in basis.iter().enumerate().skip(i) {
            let expect = if i == j { 1.0 } else { 0.0 };
            if (a.inner(b)?.norm() - expect).abs() > tol {
                return Err(Error::BasisNotOrthonormal);
            }
        }
    }

    let reduced_dim = sys * split.pre * split.post;
    let mut outcomes = Vec::with_capacity(basis.len());
    for w in basis {
        let mut reduced = vec![C64::ZERO; reduced_dim];
        for s in 0..sys {
            for qp in 0..split.pre {
                for qs in 0..split.sub {
                    for qq in 0..split.post {
                        let a = (qp * split.sub + qs) * split.post + qq;
                        reduced[(s * split.pre + qp) * split.post + qq] +=
                            w.at(qs).conj() * state.at(s * anc + a);
                    }
                }
            }
        }
        let probability: f64 = reduced.iter().map(|z| z.norm_sqr()).sum();
        if probability <= tol {
            outcomes.push((0.0, None));
            continue;
        }
        let scale = 1.0 / probability.sqrt();
        let mut collapsed = CKet::zeros(sys * anc);
        for s in 0..sys {
            for qp in 0..split.pre {
                for qs in 0..split.sub {
                    for qq in 0..split.post {
                        let a = (qp * split.sub + qs) * split.post + qq;
                        let amp = reduced[(s * split.pre + qp) * split.post + qq]
                            * w.at(qs)
                            * scale;
                        collapsed.set(s * anc + a, amp);
                    }
                }
            }
        }
        outcomes.push((probability, Some(collapsed)));
    }
    Ok(outcomes)
}

/// One stage of a sequential readout: which registers to measure, in which
/// basis, and which family the stage is meant to measure.
#[derive(Clone)]
pub struct MeasurementPlan<'a> {
    pub registers: Range<usize>,
    pub basis: Vec<CKet>,
    pub family: &'a Family,
    pub report: &'a FamilyReport,
}

/// One outcome in the sequential readout tree.
#[derive(Clone, Debug)]
pub struct OutcomeNode {
    /// Index into the stage's basis.
    pub outcome: usize,
    /// Probability of this outcome given every outcome above it.
    pub probability: f64,
    /// Product of probabilities from the root down to this node.
    pub joint_probability: f64,
    /// Overlap of this outcome's basis vector with each member's label on
    /// the measured registers (0 for null members).
    pub member_overlaps: Vec<f64>,
    /// Member with the dominant overlap, when one dominates.
    pub member: Option<usize>,
    /// Next stage's outcomes; empty at the last stage and below
    /// zero-probability outcomes.
    pub children: Vec<OutcomeNode>,
}

/// Measures several registers in sequence, one stage per plan. Every stage's
/// family must pass `branch_map` against the schedule; each node then
/// records the outcome statistics of measuring the collapsed state of its
/// parent, together with which family member the outcome's basis vector
/// reads out.
pub fn sequential_measure(
    m: &MarkedSystem,
    plans: &[MeasurementPlan],
    tol: f64,
) -> Result<Vec<OutcomeNode>> {
    if plans.is_empty() {
        return Err(Error::shape("sequential measurement needs at least one plan"));
    }
    for (i, a) in plans.iter().enumerate() {
        split_registers(&m.ancilla_dims, &a.registers)?;
        for b in plans.iter().skip(i + 1) {
            if a.registers.start < b.registers.end && b.registers.start < a.registers.end {
                return Err(Error::InvalidStep {
                    detail: "measurement plans overlap on ancilla registers".into(),
                });
            }
        }
    }
    let maps = plans
        .iter()
        .map(|p| branch_map(m, p.family, p.report, tol))
        .collect::<Result<Vec<_>>>()?;
    let final_state = simulate(m)?;
    walk_stage(m, &final_state, 1.0, plans, &maps, tol)
}

fn walk_stage(
    m: &MarkedSystem,
    state: &CKet,
    path_probability: f64,
    plans: &[MeasurementPlan],
    maps: &[BranchMap],
    tol: f64,
) -> Result<Vec<OutcomeNode>> {
    let plan = &plans[0];
    let map = &maps[0];
    let measured = measure_ancilla(m, state, plan.registers.clone(), &plan.basis, tol)?;
    let mut nodes = Vec::with_capacity(measured.len());
    for (outcome, (probability, collapsed)) in measured.into_iter().enumerate() {
        let Some(next_state) = collapsed else {
            nodes.push(OutcomeNode {
                outcome,
                probability: 0.0,
                joint_probability: 0.0,
                member_overlaps: vec![0.0; plan.family.len()],
                member: None,
                children: Vec::new(),
            });
            continue;
        };
        let overlaps =
            label_overlaps(map, &m.ancilla_dims, &plan.registers, &plan.basis[outcome])?;
        let member = dominant_member(&overlaps);
        let joint_probability = path_probability * probability;
        let children = if plans.len() > 1 {
            walk_stage(m, &next_state, joint_probability, &plans[1..], &maps[1..], tol)?
        } else {
            Vec::new()
        };
        nodes.push(OutcomeNode {
            outcome,
            probability,
            joint_probability,
            member_overlaps: overlaps,
            member,
            children,
        });
    }
    Ok(nodes)
}

/// Norm of each label after contracting the outcome's basis vector over the
/// measured registers: how strongly this outcome reads out each member.
fn label_overlaps(
    map: &BranchMap,
    dims: &[usize],
    registers: &Range<usize>,
    outcome: &CKet,
) -> Result<Vec<f64>> {
    let split = split_registers(dims, registers)?;
    let mut overlaps = Vec::with_capacity(map.labels.len());
    for label in &map.labels {
        let Some(label) = label else {
            overlaps.push(0.0);
            continue;
        };
        let mut total = 0.0f64;
        for qp in 0..split.pre {
            for qq in 0..split.post {
                let mut acc = C64::ZERO;
                for qs in 0..split.sub {
                    let a = (qp * split.sub + qs) * split.post + qq;
                    acc += outcome.at(qs).conj() * label.at(a);
                }
                total += acc.norm_sqr();
            }
        }
        overlaps.push(total.sqrt());
    }
    Ok(overlaps)
}

fn dominant_member(overlaps: &[f64]) -> Option<usize> {
    let mut best = 0usize;
    for (i, &v) in overlaps.iter().enumerate() {
        if v > overlaps[best] {
            best = i;
        }
    }
    if overlaps[best] <= 0.0 {
        return None;
    }
    let runner_up = overlaps
        .iter()
        .enumerate()
        .filter(|(i, _)| *i != best)
        .map(|(_, &v)| v)
        .fold(0.0f64, f64::max);
    if overlaps[best] - runner_up <= 1e-9 * overlaps[best] {
        None
    } else {
        Some(best)
    }
}

//! alpha-CROWN: projected gradient ascent on the lower slopes of unstable
//! ReLUs, one independent loop per spec branch and bound side.
//!
//! Intermediate bounds are computed once with the default slopes and stay
//! fixed while the slopes of the final pass are optimized.

use std::collections::BTreeMap;
use std::time::Instant;

use crate::engine::{
    backward::check_deadline, concretize_side, fill_partial, Algebra, BoundContext, BranchBounds, CrownVariant,
    PassStats, ReluRelaxation, Side, SlopeSource, SpecMatrix, Taped,
};
use crate::error::{Error, Result};
use crate::graph::{NetworkGraph, NodeId};
use crate::tape::{Tape, Var};
use crate::tensor::{BoundedTensor, Tensor};

#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerConfig {
    pub iterations: usize,
    pub lr: f64,
    /// Multiplies the learning rate after every step.
    pub lr_decay: f64,
    /// Non-improving iterations tolerated before stopping.
    pub patience: usize,
    pub early_stop: bool,
    /// Report the best iterate rather than the last one.
    pub best_restore: bool,
    pub optimize_lower: bool,
    pub optimize_upper: bool,
    /// Unused by the deterministic optimizer; kept so runs record it.
    pub seed: u64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            iterations: 20,
            lr: 0.5,
            lr_decay: 0.98,
            patience: 5,
            early_stop: true,
            best_restore: true,
            optimize_lower: true,
            optimize_upper: true,
            seed: 0,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 {
            return Err(Error::Config("iterations must be at least 1".into()));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("learning rate must be positive, got {}", self.lr)));
        }
        if !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            return Err(Error::Config(format!("lr decay must be in (0, 1], got {}", self.lr_decay)));
        }
        Ok(())
    }

    fn sides(&self) -> impl Iterator<Item = Side> + '_ {
        Side::BOTH.into_iter().filter(|s| match s {
            Side::Lower => self.optimize_lower,
            Side::Upper => self.optimize_upper,
        })
    }
}

type Key = (NodeId, usize, Side);

/// Lower slopes of unstable neurons, keyed by ReLU node, spec branch and
/// bound side. Values follow the order of the node's unstable indices.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct AlphaStore {
    values: BTreeMap<Key, Vec<f64>>,
    best: BTreeMap<(usize, Side), BTreeMap<NodeId, Vec<f64>>>,
}

impl AlphaStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn get(&self, node: NodeId, branch: usize, side: Side) -> Option<&[f64]> {
        self.values.get(&(node, branch, side)).map(Vec::as_slice)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&Key, &Vec<f64>)> {
        self.values.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&Key, &mut Vec<f64>)> {
        self.values.iter_mut()
    }

    /// Remember the current slopes of `(branch, side)` as the best so far.
    pub fn snapshot(&mut self, branch: usize, side: Side) {
        let snap = self
            .values
            .iter()
            .filter(|((_, b, s), _)| *b == branch && *s == side)
            .map(|((n, _, _), v)| (*n, v.clone()))
            .collect();
        self.best.insert((branch, side), snap);
    }

    /// Put back the slopes saved by [`Self::snapshot`]. Returns false when
    /// nothing was saved.
    pub fn restore(&mut self, branch: usize, side: Side) -> bool {
        let Some(snap) = self.best.get(&(branch, side)) else { return false };
        for (node, v) in snap {
            self.values.insert((*node, branch, side), v.clone());
        }
        true
    }

    pub fn best(&self, branch: usize, side: Side) -> Option<&BTreeMap<NodeId, Vec<f64>>> {
        self.best.get(&(branch, side))
    }
}

/// Slopes of `(node, branch, side)`, allocated at the default slopes on
/// first use. Fully stable nodes get nothing.
pub fn ensure_alpha<'s>(
    store: &'s mut AlphaStore,
    node: NodeId,
    branch: usize,
    side: Side,
    relax: &ReluRelaxation,
) -> Option<&'s mut Vec<f64>> {
    let unstable = relax.unstable_indices();
    if unstable.is_empty() {
        return None;
    }
    Some(
        store
            .values
            .entry((node, branch, side))
            .or_insert_with(|| unstable.iter().map(|&i| relax.neurons[i].lower_slope).collect()),
    )
}

pub fn project_alphas(store: &mut AlphaStore) {
    for v in store.values.values_mut() {
        for a in v.iter_mut() {
            *a = a.clamp(0.0, 1.0);
        }
    }
}

/// `-Σ lower` or `Σ upper`; smaller is tighter.
pub fn alpha_objective<'t>(bounds: Var<'t>, side: Side) -> Result<Var<'t>> {
    if bounds.value().numel() == 0 {
        return Err(Error::Config("no spec rows to optimize".into()));
    }
    Ok(match side {
        Side::Lower => bounds.scale(-1.0).sum(),
        Side::Upper => bounds.sum(),
    })
}

/// Reads slopes from a store, falling back to the relaxation defaults.
pub struct StoredSlopes<'s> {
    pub store: &'s AlphaStore,
    pub branch: usize,
    pub side: Side,
}

impl<A: Algebra> SlopeSource<A> for StoredSlopes<'_> {
    fn lower_slopes(&self, alg: &A, relu: NodeId, relax: &ReluRelaxation) -> Result<A::V> {
        let mut base = relax.lower_slopes().into_data();
        if let Some(values) = self.store.get(relu, self.branch, self.side) {
            let idx = relax.unstable_indices();
            if idx.len() != values.len() {
                return Err(Error::Config(format!("stored slopes of node {relu} do not match its unstable neurons")));
            }
            for (&i, &v) in idx.iter().zip(values) {
                base[i] = v;
            }
        }
        Ok(alg.lift(Tensor::from_vec(base)))
    }
}

#[derive(Clone, Debug)]
struct Segment {
    node: NodeId,
    indices: Vec<usize>,
    offset: usize,
}

struct TapedSlopes<'t, 'l> {
    param: Var<'t>,
    layout: &'l [Segment],
}

impl<'t> SlopeSource<Taped<'t>> for TapedSlopes<'t, '_> {
    fn lower_slopes(&self, alg: &Taped<'t>, relu: NodeId, relax: &ReluRelaxation) -> Result<Var<'t>> {
        let base = relax.lower_slopes();
        match self.layout.iter().find(|s| s.node == relu) {
            None => Ok(alg.lift(base)),
            Some(seg) => {
                let picks: Vec<usize> = (seg.offset..seg.offset + seg.indices.len()).collect();
                self.param.gather(&picks)?.scatter_into(&seg.indices, &base)
            }
        }
    }
}

/// The bound of one side of one spec branch as a function of the flattened
/// slopes of every unstable neuron.
pub struct AlphaProblem<'c, 'g> {
    ctx: &'c BoundContext<'g>,
    spec: &'c SpecMatrix,
    side: Side,
    layout: Vec<Segment>,
    size: usize,
}

impl<'c, 'g> AlphaProblem<'c, 'g> {
    /// `ctx` must already be prepared for the output node.
    pub fn new(ctx: &'c BoundContext<'g>, spec: &'c SpecMatrix, side: Side) -> Self {
        let mut layout = Vec::new();
        let mut offset = 0;
        for (&node, relax) in ctx.relaxations() {
            let indices = relax.unstable_indices();
            if indices.is_empty() {
                continue;
            }
            let n = indices.len();
            layout.push(Segment { node, indices, offset });
            offset += n;
        }
        AlphaProblem { ctx, spec, side, layout, size: offset }
    }

    pub fn num_params(&self) -> usize {
        self.size
    }

    /// Current slopes from the store, allocating defaults where missing.
    /// Panics when there are no unstable neurons.
    pub fn initial(&self, store: &mut AlphaStore) -> Tensor {
        let mut out = Vec::with_capacity(self.size);
        for seg in &self.layout {
            let relax = self.ctx.relaxation(seg.node).expect("layout built from relaxations");
            let v = ensure_alpha(store, seg.node, self.spec.branch, self.side, relax).expect("unstable node");
            out.extend_from_slice(v);
        }
        Tensor::from_vec(out)
    }

    pub fn write_back(&self, store: &mut AlphaStore, values: &Tensor) {
        for seg in &self.layout {
            let v = values.data()[seg.offset..seg.offset + seg.indices.len()].to_vec();
            store.values.insert((seg.node, self.spec.branch, self.side), v);
        }
    }

    /// Per-row bound of this side with slopes `alpha`.
    pub fn evaluate<'t>(&self, tape: &'t Tape, alpha: Var<'t>) -> Result<Var<'t>> {
        let alg = Taped { tape };
        let src = TapedSlopes { param: alpha, layout: &self.layout };
        let out = self.ctx.graph().output_id();
        let init = alg.lift(self.spec.rows.clone());
        let state = match self.side {
            Side::Lower => self.ctx.backward_from(&alg, out, init, Some(&src), None)?,
            Side::Upper => self.ctx.backward_from(&alg, out, init, None, Some(&src))?,
        };
        let bounds = state.side(self.side).expect("requested side");
        concretize_side(&alg, bounds, self.ctx.input(), self.side)
    }

    pub fn objective<'t>(&self, tape: &'t Tape, alpha: Var<'t>) -> Result<Var<'t>> {
        alpha_objective(self.evaluate(tape, alpha)?, self.side)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SideOutcome {
    /// Per-row bound at the reported slopes.
    pub values: Tensor,
    pub iterations: usize,
    /// Best objective after each evaluated iterate.
    pub history: Vec<f64>,
}

/// Optimize one side of one branch. `fallback` holds the default-slope
/// bounds of that side and is returned when no slope can move.
pub fn optimize_side(
    ctx: &BoundContext,
    spec: &SpecMatrix,
    side: Side,
    config: &OptimizerConfig,
    store: &mut AlphaStore,
    fallback: &Tensor,
) -> Result<SideOutcome> {
    let problem = AlphaProblem::new(ctx, spec, side);
    if problem.num_params() == 0 {
        return Ok(SideOutcome { values: fallback.clone(), iterations: 0, history: Vec::new() });
    }
    let mut x = problem.initial(store);
    let mut lr = config.lr;
    let mut best: Option<(f64, Tensor, Tensor)> = None;
    let mut last = fallback.clone();
    let mut stall = 0;
    let mut history = Vec::new();
    let mut iterations = 0;
    for it in 0..config.iterations {
        check_deadline(ctx.deadline())?;
        let tape = Tape::new();
        let p = tape.param(x.clone());
        let values = problem.evaluate(&tape, p)?;
        let obj = alpha_objective(values, side)?;
        let o = obj.value().data()[0];
        iterations = it + 1;
        if !o.is_finite() {
            break;
        }
        last = values.value().clone();
        if best.as_ref().map_or(true, |(b, _, _)| o < *b) {
            best = Some((o, x.clone(), last.clone()));
            stall = 0;
        } else {
            stall += 1;
        }
        history.push(best.as_ref().map(|b| b.0).unwrap_or(o));
        if (config.early_stop && stall >= config.patience) || it + 1 == config.iterations {
            break;
        }
        let grads = tape.backward(obj)?;
        let g = grads.get(p).expect("parameter on tape");
        x = x.sub(&g.scale(lr))?;
        problem.write_back(store, &x);
        project_alphas(store);
        x = problem.initial(store);
        lr *= config.lr_decay;
    }
    let values = match (&best, config.best_restore) {
        (Some((_, bx, bv)), true) => {
            problem.write_back(store, bx);
            store.snapshot(spec.branch, side);
            bv.clone()
        }
        (Some((_, bx, _)), false) => {
            problem.write_back(store, bx);
            store.snapshot(spec.branch, side);
            problem.write_back(store, &x);
            last
        }
        (None, _) => fallback.clone(),
    };
    Ok(SideOutcome { values, iterations, history })
}

#[derive(Clone, Debug)]
pub struct AlphaRun {
    pub branches: Vec<BranchBounds>,
    /// CROWN bounds at the default slopes, the starting point.
    pub crown: Vec<BranchBounds>,
    pub store: AlphaStore,
    /// Largest iteration count over all loops.
    pub iterations: usize,
    pub history: BTreeMap<(usize, Side), Vec<f64>>,
    pub stats: PassStats,
}

/// alpha-CROWN over every branch. On timeout the error carries the best
/// bounds found so far.
pub fn run_alpha_crown(
    graph: &NetworkGraph,
    input: &BoundedTensor,
    specs: &[SpecMatrix],
    variant: CrownVariant,
    config: &OptimizerConfig,
    deadline: Option<Instant>,
) -> Result<AlphaRun> {
    config.validate()?;
    let mut ctx = BoundContext::new(graph, input, variant, deadline)?;
    let ibp_partial = |ctx: &BoundContext| specs.iter().map(|s| ctx.ibp_spec_bounds(s)).collect::<Result<Vec<_>>>();
    let mut crown = Vec::with_capacity(specs.len());
    for spec in specs {
        match ctx.spec_bounds(spec, None) {
            Ok(b) => crown.push(b),
            Err(e) => return Err(fill_partial(e, || ibp_partial(&ctx))),
        }
    }
    let mut store = AlphaStore::new();
    let mut branches: Vec<BranchBounds> = Vec::with_capacity(specs.len());
    let mut history = BTreeMap::new();
    let mut iterations = 0;
    for (spec, base) in specs.iter().zip(&crown) {
        let (mut lower, mut upper) = (base.linear.lower().clone(), base.linear.upper().clone());
        for side in config.sides() {
            let fallback = if side == Side::Lower { &lower } else { &upper };
            let outcome = match optimize_side(&ctx, spec, side, config, &mut store, fallback) {
                Ok(o) => o,
                Err(e) => {
                    let done: Vec<BoundedTensor> = branches.iter().map(|b| b.bounds.clone()).collect();
                    let rest = crown[done.len()..].iter().map(|b| b.bounds.clone());
                    return Err(fill_partial(e, || Ok(done.into_iter().chain(rest).collect())));
                }
            };
            iterations = iterations.max(outcome.iterations);
            history.insert((spec.branch, side), outcome.history);
            match side {
                Side::Lower => lower = outcome.values,
                Side::Upper => upper = outcome.values,
            }
        }
        let linear = BoundedTensor::new_unchecked(lower, upper);
        let bounds = linear.intersect(&base.bounds)?;
        branches.push(BranchBounds { bounds, linear });
    }
    Ok(AlphaRun { branches, crown, store, iterations, history, stats: ctx.stats() })
}

//! Set-level bookkeeping of which messages can have reached which agent.
//!
//! A message is identified by `(sender, timestep)`. These functions carry
//! no payload; they exist to pin down exactly what the neural encoder is
//! allowed to depend on.

use std::collections::{BTreeMap, BTreeSet};

use super::{GraphError, NeighborGraph};

pub type InfoSet = BTreeSet<(usize, usize)>;

/// `h_{i,t+1}` unrolled over the whole history: walk back from `{agent}`
/// at `t + 1`, widening the sender set by one hop per timestep and
/// collecting every `(sender, k)` on the way.
pub fn info_direct(history: &[NeighborGraph], agent: usize, t: usize) -> Result<InfoSet, GraphError> {
    if history.len() <= t {
        return Err(GraphError::History {
            needed: t + 1,
            got: history.len(),
        });
    }
    if history[t].local(agent).is_none() {
        return Err(GraphError::UnknownAgent(agent));
    }
    let mut out = InfoSet::new();
    let mut beta: BTreeSet<usize> = BTreeSet::from([agent]);
    for k in (0..=t).rev() {
        let g = &history[k];
        let mut next = BTreeSet::new();
        for &j in &beta {
            if let Some(ns) = g.neighbors(j) {
                next.insert(j);
                next.extend(ns);
            }
        }
        out.extend(next.iter().map(|&j| (j, k)));
        beta = next;
    }
    Ok(out)
}

/// The two parts of one recursive update.
#[derive(Clone, Debug, PartialEq, Eq, Default)]
pub struct InfoStep {
    /// Union of the neighborhood's previous collections.
    pub psi: InfoSet,
    /// The neighborhood's messages sent at this timestep.
    pub phi: InfoSet,
    /// `psi ∪ phi`.
    pub next: InfoSet,
}

/// Empty collections for every agent of `graph`, the state before `t = 0`.
pub fn initial_sets(graph: &NeighborGraph) -> BTreeMap<usize, InfoSet> {
    graph.ids().iter().map(|&i| (i, InfoSet::new())).collect()
}

/// One step of the recursion: `h_{i,t+1} = ∪_{j ∈ N(i) ∪ i} h_{j,t} ∪ {(j, t)}`.
pub fn info_recursive(
    previous: &BTreeMap<usize, InfoSet>,
    graph: &NeighborGraph,
    t: usize,
) -> Result<BTreeMap<usize, InfoStep>, GraphError> {
    let mut out = BTreeMap::new();
    for &i in graph.ids() {
        let mut step = InfoStep::default();
        let mut hood = graph.neighbors(i).unwrap_or_default();
        hood.push(i);
        for j in hood {
            let prev = previous.get(&j).ok_or(GraphError::MissingState(j))?;
            step.psi.extend(prev.iter().copied());
            step.phi.insert((j, t));
        }
        step.next = step.psi.union(&step.phi).copied().collect();
        out.insert(i, step);
    }
    Ok(out)
}

/// Iterates [`info_recursive`] over a history, returning `h_{·,t+1}` for every `t`.
pub fn info_unrolled(history: &[NeighborGraph]) -> Result<Vec<BTreeMap<usize, InfoSet>>, GraphError> {
    let mut out = Vec::with_capacity(history.len());
    let mut state = match history.first() {
        Some(g) => initial_sets(g),
        None => return Ok(out),
    };
    for (t, g) in history.iter().enumerate() {
        let steps = info_recursive(&state, g, t)?;
        state = steps.into_iter().map(|(i, s)| (i, s.next)).collect();
        out.push(state.clone());
    }
    Ok(out)
}

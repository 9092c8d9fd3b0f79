//! Microservice applications as call DAGs.
//!
//! An [`AppDag`] is validated on construction: it is acyclic, has exactly one
//! frontend with no callers, every service is reachable from the frontend, and
//! databases never call compute services. Frontends and databases are
//! structurally pinned to the base region.
//!
//! Each call edge carries a `calls` multiplicity: the number of sequential
//! round trips the caller makes to the callee per request. Chatty interactions
//! (timeline fan-out, storage writes) pay the inter-region RTT once per round
//! trip.

use std::cmp::Reverse;
use std::collections::{BTreeMap, BTreeSet, BinaryHeap, HashMap};
use std::fs;
use std::path::Path;

use serde::de::{self, Deserializer, SeqAccess, Visitor};
use serde::ser::{SerializeSeq, Serializer};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ServiceKind {
    Frontend,
    Database,
    Compute,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Microservice {
    pub id: u32,
    pub name: String,
    pub kind: ServiceKind,
    pub structurally_pinned: bool,
    pub profile_key: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct CallEdge {
    pub caller: u32,
    pub callee: u32,
    /// Sequential round trips per request, at least 1.
    pub calls: u32,
}

impl CallEdge {
    pub fn new(caller: u32, callee: u32) -> Self {
        CallEdge { caller, callee, calls: 1 }
    }

    pub fn with_calls(caller: u32, callee: u32, calls: u32) -> Self {
        CallEdge { caller, callee, calls }
    }
}

// Edges are written as `[caller, callee]` or `[caller, callee, calls]`.
impl Serialize for CallEdge {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        let len = if self.calls == 1 { 2 } else { 3 };
        let mut seq = serializer.serialize_seq(Some(len))?;
        seq.serialize_element(&self.caller)?;
        seq.serialize_element(&self.callee)?;
        if self.calls != 1 {
            seq.serialize_element(&self.calls)?;
        }
        seq.end()
    }
}

impl<'de> Deserialize<'de> for CallEdge {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        struct EdgeVisitor;

        impl<'de> Visitor<'de> for EdgeVisitor {
            type Value = CallEdge;

            fn expecting(&self, f: &mut std::fmt::Formatter) -> std::fmt::Result {
                f.write_str("[caller, callee] or [caller, callee, calls]")
            }

            fn visit_seq<A: SeqAccess<'de>>(self, mut seq: A) -> std::result::Result<CallEdge, A::Error> {
                let caller = seq.next_element()?.ok_or_else(|| de::Error::invalid_length(0, &self))?;
                let callee = seq.next_element()?.ok_or_else(|| de::Error::invalid_length(1, &self))?;
                let calls = seq.next_element()?.unwrap_or(1);
                if seq.next_element::<u32>()?.is_some() {
                    return Err(de::Error::invalid_length(4, &self));
                }
                Ok(CallEdge { caller, callee, calls })
            }
        }

        deserializer.deserialize_seq(EdgeVisitor)
    }
}

/// On-disk application description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AppSpec {
    pub services: Vec<ServiceSpec>,
    pub edges: Vec<CallEdge>,
    pub frontend: u32,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub notes: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ServiceSpec {
    pub id: u32,
    pub name: String,
    pub kind: ServiceKind,
    pub profile_key: String,
    /// Extra pin for compute services bound to the base region by policy.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub pinned: bool,
}

#[derive(Debug, Clone)]
pub struct AppDag {
    services: Vec<Microservice>,
    edges: Vec<CallEdge>,
    frontend: u32,
    index: HashMap<u32, usize>,
    preds: Vec<Vec<(usize, u32)>>,
    succs: Vec<Vec<(usize, u32)>>,
    topo: Vec<usize>,
    notes: Vec<String>,
}

impl AppDag {
    pub fn from_spec(spec: AppSpec) -> Result<Self> {
        let mut specs = spec.services;
        specs.sort_by_key(|s| s.id);
        for pair in specs.windows(2) {
            if pair[0].id == pair[1].id {
                return Err(Error::Validation(format!("duplicate service id {}", pair[0].id)));
            }
        }
        let services: Vec<Microservice> = specs
            .into_iter()
            .map(|s| Microservice {
                structurally_pinned: s.pinned || matches!(s.kind, ServiceKind::Frontend | ServiceKind::Database),
                id: s.id,
                name: s.name,
                kind: s.kind,
                profile_key: s.profile_key,
            })
            .collect();
        let index: HashMap<u32, usize> = services.iter().enumerate().map(|(i, s)| (s.id, i)).collect();

        let frontends: Vec<u32> =
            services.iter().filter(|s| s.kind == ServiceKind::Frontend).map(|s| s.id).collect();
        if frontends.len() != 1 {
            return Err(Error::FrontendCount(frontends.len()));
        }
        if frontends[0] != spec.frontend {
            return Err(Error::Validation(format!(
                "frontend field {} does not name the frontend service {}",
                spec.frontend, frontends[0]
            )));
        }

        let n = services.len();
        let mut preds = vec![Vec::new(); n];
        let mut succs = vec![Vec::new(); n];
        let mut seen = BTreeSet::new();
        for e in &spec.edges {
            let (Some(&u), Some(&v)) = (index.get(&e.caller), index.get(&e.callee)) else {
                return Err(Error::DanglingEdge { caller: e.caller, callee: e.callee });
            };
            if e.calls == 0 {
                return Err(Error::Validation(format!("edge ({}, {}) has zero calls", e.caller, e.callee)));
            }
            if !seen.insert((e.caller, e.callee)) {
                return Err(Error::Validation(format!("duplicate edge ({}, {})", e.caller, e.callee)));
            }
            if e.callee == spec.frontend {
                return Err(Error::Validation(format!("frontend {} has an incoming edge", spec.frontend)));
            }
            if services[u].kind == ServiceKind::Database && services[v].kind == ServiceKind::Compute {
                return Err(Error::Validation(format!(
                    "database {} calls compute service {}",
                    e.caller, e.callee
                )));
            }
            succs[u].push((v, e.calls));
            preds[v].push((u, e.calls));
        }
        for list in succs.iter_mut().chain(preds.iter_mut()) {
            list.sort_unstable();
        }

        let topo = topo_order(&services, &preds, &succs)?;

        let root = index[&spec.frontend];
        let mut reached = vec![false; n];
        let mut stack = vec![root];
        reached[root] = true;
        while let Some(u) = stack.pop() {
            for &(v, _) in &succs[u] {
                if !reached[v] {
                    reached[v] = true;
                    stack.push(v);
                }
            }
        }
        if let Some(i) = reached.iter().position(|r| !r) {
            return Err(Error::Validation(format!(
                "service {} is not reachable from the frontend",
                services[i].id
            )));
        }

        let mut edges = spec.edges;
        edges.sort();
        Ok(AppDag {
            services,
            edges,
            frontend: spec.frontend,
            index,
            preds,
            succs,
            topo,
            notes: spec.notes,
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let spec: AppSpec =
            serde_json::from_str(&text).map_err(|e| Error::parse(path.display().to_string(), e))?;
        Self::from_spec(spec)
    }

    pub fn to_spec(&self) -> AppSpec {
        AppSpec {
            services: self
                .services
                .iter()
                .map(|s| ServiceSpec {
                    id: s.id,
                    name: s.name.clone(),
                    kind: s.kind,
                    profile_key: s.profile_key.clone(),
                    pinned: s.structurally_pinned && s.kind == ServiceKind::Compute,
                })
                .collect(),
            edges: self.edges.clone(),
            frontend: self.frontend,
            notes: self.notes.clone(),
        }
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(&self.to_spec())
            .map_err(|e| Error::parse(path.display().to_string(), e))?;
        fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }

    /// Services ordered by id.
    pub fn services(&self) -> &[Microservice] {
        &self.services
    }

    pub fn edges(&self) -> &[CallEdge] {
        &self.edges
    }

    pub fn len(&self) -> usize {
        self.services.len()
    }

    pub fn is_empty(&self) -> bool {
        self.services.is_empty()
    }

    pub fn frontend(&self) -> u32 {
        self.frontend
    }

    pub fn index_of(&self, id: u32) -> Option<usize> {
        self.index.get(&id).copied()
    }

    pub fn service(&self, id: u32) -> Option<&Microservice> {
        self.index_of(id).map(|i| &self.services[i])
    }

    /// Callers of the service at index `i` as `(index, calls)`.
    pub fn preds(&self, i: usize) -> &[(usize, u32)] {
        &self.preds[i]
    }

    pub fn succs(&self, i: usize) -> &[(usize, u32)] {
        &self.succs[i]
    }

    /// Service indices in a deterministic topological order.
    pub fn topo_order(&self) -> &[usize] {
        &self.topo
    }

    /// Indices of services without callees.
    pub fn sinks(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.services.len()).filter(|&i| self.succs[i].is_empty())
    }

    /// Ids of services that are not structurally pinned.
    pub fn unpinned_ids(&self) -> Vec<u32> {
        self.services.iter().filter(|s| !s.structurally_pinned).map(|s| s.id).collect()
    }

    pub fn notes(&self) -> &[String] {
        &self.notes
    }

    /// All services reachable from `id`, excluding `id` itself.
    pub fn descendants(&self, id: u32) -> Result<BTreeSet<u32>> {
        let start = self.index_of(id).ok_or(Error::UnknownService(id))?;
        let mut out = BTreeSet::new();
        let mut stack = vec![start];
        while let Some(u) = stack.pop() {
            for &(v, _) in &self.succs[u] {
                if out.insert(self.services[v].id) {
                    stack.push(v);
                }
            }
        }
        Ok(out)
    }
}

fn topo_order(services: &[Microservice], preds: &[Vec<(usize, u32)>], succs: &[Vec<(usize, u32)>]) -> Result<Vec<usize>> {
    let n = services.len();
    let mut indeg: Vec<usize> = preds.iter().map(Vec::len).collect();
    let mut ready: BinaryHeap<Reverse<usize>> = (0..n).filter(|&i| indeg[i] == 0).map(Reverse).collect();
    let mut order = Vec::with_capacity(n);
    while let Some(Reverse(u)) = ready.pop() {
        order.push(u);
        for &(v, _) in &succs[u] {
            indeg[v] -= 1;
            if indeg[v] == 0 {
                ready.push(Reverse(v));
            }
        }
    }
    if order.len() == n {
        return Ok(order);
    }
    // Walk predecessors among the leftover nodes until one repeats.
    let mut in_cycle = vec![false; n];
    let start = (0..n).find(|&i| indeg[i] > 0).expect("leftover node");
    let mut path = vec![start];
    in_cycle[start] = true;
    let mut cur = start;
    loop {
        let next = preds[cur].iter().map(|&(p, _)| p).find(|&p| indeg[p] > 0).expect("leftover pred");
        if in_cycle[next] {
            let pos = path.iter().position(|&x| x == next).unwrap();
            let mut ids: Vec<u32> = path[pos..].iter().rev().map(|&i| services[i].id).collect();
            let min = ids.iter().enumerate().min_by_key(|(_, id)| **id).map(|(k, _)| k).unwrap();
            ids.rotate_left(min);
            return Err(Error::CycleDetected(ids));
        }
        in_cycle[next] = true;
        path.push(next);
        cur = next;
    }
}

/// Activation stages from longest-path levelization.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ActivationSchedule {
    pub stages: Vec<BTreeSet<u32>>,
    pub stage_of: BTreeMap<u32, usize>,
}

impl ActivationSchedule {
    pub fn stage_count(&self) -> usize {
        self.stages.len()
    }
}

pub fn activation_stages(dag: &AppDag) -> ActivationSchedule {
    let mut level = vec![0usize; dag.len()];
    for &v in dag.topo_order() {
        level[v] = dag.preds(v).iter().map(|&(u, _)| level[u] + 1).max().unwrap_or(0);
    }
    let depth = level.iter().copied().max().map_or(0, |m| m + 1);
    let mut stages = vec![BTreeSet::new(); depth];
    let mut stage_of = BTreeMap::new();
    for (i, s) in dag.services().iter().enumerate() {
        stages[level[i]].insert(s.id);
        stage_of.insert(s.id, level[i]);
    }
    ActivationSchedule { stages, stage_of }
}

const PATH_EPS: f64 = 1e-9;

/// Maximum-weight path from the frontend to a sink. Ties resolve to the
/// lexicographically smallest id sequence.
pub fn structural_critical_path(dag: &AppDag, node_weights: &BTreeMap<u32, f64>) -> Result<(Vec<u32>, f64)> {
    let n = dag.len();
    let mut weight = vec![0.0; n];
    for (i, s) in dag.services().iter().enumerate() {
        let w = *node_weights.get(&s.id).ok_or(Error::MissingWeight(s.id))?;
        if !(w >= 0.0) {
            return Err(Error::Validation(format!("negative weight {w} for service {}", s.id)));
        }
        weight[i] = w;
    }
    // best[v]: heaviest suffix starting at v, as (length, id path).
    let mut best: Vec<(f64, Vec<u32>)> = vec![(0.0, Vec::new()); n];
    for &v in dag.topo_order().iter().rev() {
        let mut choice: Option<&(f64, Vec<u32>)> = None;
        for &(s, _) in dag.succs(v) {
            let cand = &best[s];
            choice = match choice {
                None => Some(cand),
                Some(cur) if cand.0 > cur.0 + PATH_EPS => Some(cand),
                Some(cur) if (cand.0 - cur.0).abs() <= PATH_EPS && cand.1 < cur.1 => Some(cand),
                keep => keep,
            };
        }
        let (len, tail) = choice.map(|(l, p)| (*l, p.clone())).unwrap_or((0.0, Vec::new()));
        let mut path = Vec::with_capacity(tail.len() + 1);
        path.push(dag.services()[v].id);
        path.extend(tail);
        best[v] = (len + weight[v], path);
    }
    let root = dag.index_of(dag.frontend()).expect("frontend indexed");
    let (len, path) = std::mem::take(&mut best[root]);
    Ok((path, len))
}

/// A service and its unpinned descendants, moved as a unit.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct SubtreeSpec {
    pub root_id: u32,
    pub member_ids: BTreeSet<u32>,
}

pub fn subtree(dag: &AppDag, root_id: u32) -> Result<SubtreeSpec> {
    let root = dag.service(root_id).ok_or(Error::UnknownService(root_id))?;
    if root.structurally_pinned {
        return Err(Error::PinnedRoot(root_id));
    }
    let mut member_ids: BTreeSet<u32> = dag
        .descendants(root_id)?
        .into_iter()
        .filter(|id| !dag.service(*id).is_some_and(|s| s.structurally_pinned))
        .collect();
    member_ids.insert(root_id);
    Ok(SubtreeSpec { root_id, member_ids })
}

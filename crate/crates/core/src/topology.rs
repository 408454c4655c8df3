//! Service dependency graph and state-machine workflow model.
//!
//! A topology document declares `services`, `edges`, `workflows` and
//! `entry_points`. Workflows compose requests recursively: each state of a
//! workflow is fulfilled by exactly one of its transitions, and a transition
//! may invoke a sub-workflow on the callee, which is where the combinatorial
//! path explosion comes from.

use std::collections::{BTreeMap, HashMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ServiceNode {
    pub name: String,
    pub pods: Vec<String>,
    /// Container ids per pod, same layout for every pod of the service.
    pub containers_per_pod: Vec<String>,
    /// Abstract work units per second.
    pub cpu_capacity: f64,
    pub memory_capacity_bytes: u64,
    /// `false` models unmonitored infrastructure such as databases: the
    /// service executes but emits no telemetry.
    pub monitored: bool,
}

impl ServiceNode {
    pub fn containers_of(&self, pod: &str) -> Vec<String> {
        self.containers_per_pod
            .iter()
            .map(|c| format!("{pod}-{c}"))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CallEdge {
    pub caller: String,
    pub callee: String,
    pub operation: String,
    pub base_latency_ms: f64,
    pub payload_bytes: u64,
    pub is_database_edge: bool,
}

impl CallEdge {
    pub fn id(&self) -> String {
        format!("{}->{}#{}", self.caller, self.callee, self.operation)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub name: String,
    pub service: String,
    pub operation: String,
    pub sub_workflow: Option<String>,
    pub weight: f64,
    /// A failed optional call does not fail the parent.
    pub optional: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct State {
    pub name: String,
    pub transitions: Vec<Transition>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkflowStateMachine {
    pub name: String,
    /// Service executing this workflow; its span is the workflow's root node.
    pub root_service: String,
    pub root_operation: String,
    /// Service time of the root node itself, before children.
    pub root_base_ms: f64,
    pub states: Vec<State>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ServiceGraph {
    pub services: Vec<ServiceNode>,
    pub edges: Vec<CallEdge>,
    pub entry_points: Vec<String>,
    index: HashMap<String, usize>,
}

impl ServiceGraph {
    pub fn service(&self, name: &str) -> Option<&ServiceNode> {
        self.index.get(name).map(|&i| &self.services[i])
    }

    pub fn service_names(&self) -> impl Iterator<Item = &str> {
        self.services.iter().map(|s| s.name.as_str())
    }

    pub fn edge(&self, caller: &str, callee: &str, operation: &str) -> Option<&CallEdge> {
        self.edges
            .iter()
            .find(|e| e.caller == caller && e.callee == callee && e.operation == operation)
    }

    pub fn edge_by_id(&self, id: &str) -> Option<&CallEdge> {
        self.edges.iter().find(|e| e.id() == id)
    }

    /// Distinct (service, operation) pairs appearing as edge callees or
    /// workflow roots; the target universe for operation-scoped faults.
    pub fn operations(&self, workflows: &[WorkflowStateMachine]) -> Vec<(String, String)> {
        let mut set = BTreeMap::new();
        for e in &self.edges {
            set.insert((e.callee.clone(), e.operation.clone()), ());
        }
        for w in workflows {
            set.insert((w.root_service.clone(), w.root_operation.clone()), ());
        }
        set.into_keys().collect()
    }
}

/// A fully validated topology: graph plus workflow set.
#[derive(Debug, Clone, PartialEq)]
pub struct Topology {
    pub graph: ServiceGraph,
    pub workflows: Vec<WorkflowStateMachine>,
}

impl Topology {
    pub fn workflow(&self, name: &str) -> Option<&WorkflowStateMachine> {
        self.workflows.iter().find(|w| w.name == name)
    }

    /// Workflows not referenced as a sub-workflow anywhere; these are the
    /// ones the load generator samples from.
    pub fn top_level_workflows(&self) -> Vec<&WorkflowStateMachine> {
        let subs: HashSet<&str> = self
            .workflows
            .iter()
            .flat_map(|w| w.states.iter())
            .flat_map(|s| s.transitions.iter())
            .filter_map(|t| t.sub_workflow.as_deref())
            .collect();
        self.workflows
            .iter()
            .filter(|w| !subs.contains(w.name.as_str()))
            .collect()
    }
}

// ---------------------------------------------------------------------------
// Config document (TOML schema)
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TopologyDoc {
    pub services: Vec<ServiceDoc>,
    pub edges: Vec<EdgeDoc>,
    #[serde(default)]
    pub workflows: Vec<WorkflowDoc>,
    pub entry_points: Vec<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ServiceDoc {
    pub name: String,
    #[serde(default = "default_pods")]
    pub pods: u32,
    #[serde(default = "default_containers")]
    pub containers: Vec<String>,
    #[serde(default = "default_capacity")]
    pub cpu_capacity: f64,
    #[serde(default = "default_memory_mb")]
    pub memory_mb: u64,
    #[serde(default = "default_true")]
    pub monitored: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EdgeDoc {
    pub caller: String,
    pub callee: String,
    pub operation: String,
    #[serde(default = "default_latency")]
    pub base_latency_ms: f64,
    #[serde(default = "default_payload")]
    pub payload_bytes: u64,
    #[serde(default)]
    pub database: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WorkflowDoc {
    pub name: String,
    pub root_service: String,
    pub root_operation: String,
    #[serde(default = "default_root_ms")]
    pub root_base_ms: f64,
    #[serde(default)]
    pub states: Vec<StateDoc>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StateDoc {
    pub name: String,
    pub transitions: Vec<TransitionDoc>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TransitionDoc {
    pub name: String,
    pub service: String,
    pub operation: String,
    #[serde(default)]
    pub sub_workflow: Option<String>,
    #[serde(default = "default_weight")]
    pub weight: f64,
    #[serde(default)]
    pub optional: bool,
}

fn default_pods() -> u32 {
    1
}
fn default_containers() -> Vec<String> {
    vec!["main".to_string()]
}
fn default_capacity() -> f64 {
    100.0
}
fn default_memory_mb() -> u64 {
    512
}
fn default_true() -> bool {
    true
}
fn default_latency() -> f64 {
    20.0
}
fn default_payload() -> u64 {
    2048
}
fn default_root_ms() -> f64 {
    10.0
}
fn default_weight() -> f64 {
    1.0
}

/// Parses and validates a topology config document.
pub fn load_topology(document: &str) -> Result<Topology> {
    let doc: TopologyDoc = toml::from_str(document).map_err(|e| Error::Parse(e.to_string()))?;
    validate_doc(&doc)
}

fn validate_doc(doc: &TopologyDoc) -> Result<Topology> {
    let mut index = HashMap::new();
    let mut services = Vec::new();
    for s in &doc.services {
        if index.contains_key(&s.name) {
            return Err(Error::Config(format!("duplicate service `{}`", s.name)));
        }
        if s.pods == 0 {
            return Err(Error::Config(format!("service `{}` needs >= 1 pod", s.name)));
        }
        if s.containers.is_empty() {
            return Err(Error::Config(format!(
                "service `{}` needs >= 1 container per pod",
                s.name
            )));
        }
        if s.cpu_capacity <= 0.0 || s.memory_mb == 0 {
            return Err(Error::Config(format!(
                "service `{}` capacities must be strictly positive",
                s.name
            )));
        }
        index.insert(s.name.clone(), services.len());
        services.push(ServiceNode {
            name: s.name.clone(),
            pods: (0..s.pods).map(|i| format!("{}-{}", s.name, i)).collect(),
            containers_per_pod: s.containers.clone(),
            cpu_capacity: s.cpu_capacity,
            memory_capacity_bytes: s.memory_mb * 1024 * 1024,
            monitored: s.monitored,
        });
    }

    let mut edges = Vec::new();
    for e in &doc.edges {
        for endpoint in [&e.caller, &e.callee] {
            if !index.contains_key(endpoint) {
                return Err(Error::DanglingReference {
                    kind: "service",
                    name: endpoint.clone(),
                });
            }
        }
        edges.push(CallEdge {
            caller: e.caller.clone(),
            callee: e.callee.clone(),
            operation: e.operation.clone(),
            base_latency_ms: e.base_latency_ms,
            payload_bytes: e.payload_bytes,
            is_database_edge: e.database,
        });
    }

    if doc.entry_points.is_empty() {
        return Err(Error::Config("at least one entry point required".into()));
    }
    for ep in &doc.entry_points {
        if !index.contains_key(ep) {
            return Err(Error::DanglingReference {
                kind: "service",
                name: ep.clone(),
            });
        }
    }

    check_call_graph_acyclic(&services, &edges, &index)?;

    let workflows = validate_workflows(doc, &edges)?;

    let graph = ServiceGraph {
        services,
        edges,
        entry_points: doc.entry_points.clone(),
        index,
    };
    Ok(Topology { graph, workflows })
}

fn check_call_graph_acyclic(
    services: &[ServiceNode],
    edges: &[CallEdge],
    index: &HashMap<String, usize>,
) -> Result<()> {
    let n = services.len();
    let mut adj = vec![Vec::new(); n];
    for e in edges {
        adj[index[&e.caller]].push(index[&e.callee]);
    }
    // 0 = unvisited, 1 = on stack, 2 = done
    let mut state = vec![0u8; n];
    let mut stack = Vec::new();
    for start in 0..n {
        if state[start] != 0 {
            continue;
        }
        if let Some(cycle) = dfs_cycle(start, &adj, &mut state, &mut stack) {
            let names: Vec<&str> = cycle.iter().map(|&i| services[i].name.as_str()).collect();
            return Err(Error::CycleDetected(names.join(" -> ")));
        }
    }
    Ok(())
}

fn dfs_cycle(
    node: usize,
    adj: &[Vec<usize>],
    state: &mut [u8],
    stack: &mut Vec<usize>,
) -> Option<Vec<usize>> {
    state[node] = 1;
    stack.push(node);
    for &next in &adj[node] {
        if state[next] == 1 {
            let pos = stack.iter().position(|&n| n == next).unwrap();
            let mut cycle = stack[pos..].to_vec();
            cycle.push(next);
            return Some(cycle);
        }
        if state[next] == 0 {
            if let Some(c) = dfs_cycle(next, adj, state, stack) {
                return Some(c);
            }
        }
    }
    stack.pop();
    state[node] = 2;
    None
}

fn validate_workflows(doc: &TopologyDoc, edges: &[CallEdge]) -> Result<Vec<WorkflowStateMachine>> {
    let mut by_name: HashMap<&str, &WorkflowDoc> = HashMap::new();
    for w in &doc.workflows {
        if by_name.insert(w.name.as_str(), w).is_some() {
            return Err(Error::Config(format!("duplicate workflow `{}`", w.name)));
        }
    }

    let edge_set: HashSet<(&str, &str, &str)> = edges
        .iter()
        .map(|e| (e.caller.as_str(), e.callee.as_str(), e.operation.as_str()))
        .collect();

    for w in &doc.workflows {
        for st in &w.states {
            if st.transitions.is_empty() {
                return Err(Error::Config(format!(
                    "state `{}` of workflow `{}` has no transitions",
                    st.name, w.name
                )));
            }
            let total_weight: f64 = st.transitions.iter().map(|t| t.weight).sum();
            if st.transitions.iter().any(|t| t.weight < 0.0) || total_weight <= 0.0 {
                return Err(Error::Config(format!(
                    "state `{}` of workflow `{}` has invalid transition weights",
                    st.name, w.name
                )));
            }
            for t in &st.transitions {
                if !edge_set.contains(&(
                    w.root_service.as_str(),
                    t.service.as_str(),
                    t.operation.as_str(),
                )) {
                    return Err(Error::DanglingReference {
                        kind: "edge",
                        name: format!("{}->{}#{}", w.root_service, t.service, t.operation),
                    });
                }
                if let Some(sub) = &t.sub_workflow {
                    let Some(sw) = by_name.get(sub.as_str()) else {
                        return Err(Error::DanglingReference {
                            kind: "workflow",
                            name: sub.clone(),
                        });
                    };
                    if sw.root_service != t.service || sw.root_operation != t.operation {
                        return Err(Error::Config(format!(
                            "transition `{}` of workflow `{}` invokes workflow `{}`, whose root ({}, {}) does not match the transition target ({}, {})",
                            t.name, w.name, sub, sw.root_service, sw.root_operation, t.service, t.operation
                        )));
                    }
                }
            }
        }
    }

    // sub-workflow relation must be acyclic
    let names: Vec<&str> = doc.workflows.iter().map(|w| w.name.as_str()).collect();
    let pos: HashMap<&str, usize> = names.iter().enumerate().map(|(i, &n)| (n, i)).collect();
    let mut adj = vec![Vec::new(); names.len()];
    for (i, w) in doc.workflows.iter().enumerate() {
        for st in &w.states {
            for t in &st.transitions {
                if let Some(sub) = &t.sub_workflow {
                    adj[i].push(pos[sub.as_str()]);
                }
            }
        }
    }
    let mut state = vec![0u8; names.len()];
    let mut stack = Vec::new();
    for i in 0..names.len() {
        if state[i] == 0 {
            if let Some(cycle) = dfs_cycle(i, &adj, &mut state, &mut stack) {
                let cyc: Vec<&str> = cycle.iter().map(|&i| names[i]).collect();
                return Err(Error::CycleDetected(format!(
                    "workflow recursion {}",
                    cyc.join(" -> ")
                )));
            }
        }
    }

    Ok(doc
        .workflows
        .iter()
        .map(|w| WorkflowStateMachine {
            name: w.name.clone(),
            root_service: w.root_service.clone(),
            root_operation: w.root_operation.clone(),
            root_base_ms: w.root_base_ms,
            states: w
                .states
                .iter()
                .map(|s| State {
                    name: s.name.clone(),
                    transitions: s
                        .transitions
                        .iter()
                        .map(|t| Transition {
                            name: t.name.clone(),
                            service: t.service.clone(),
                            operation: t.operation.clone(),
                            sub_workflow: t.sub_workflow.clone(),
                            weight: t.weight,
                            optional: t.optional,
                        })
                        .collect(),
                })
                .collect(),
        })
        .collect())
}

/// Re-emits a validated topology as a config document. Loading the result
/// yields an identical topology.
pub fn to_document(topo: &Topology) -> String {
    let doc = TopologyDoc {
        services: topo
            .graph
            .services
            .iter()
            .map(|s| ServiceDoc {
                name: s.name.clone(),
                pods: s.pods.len() as u32,
                containers: s.containers_per_pod.clone(),
                cpu_capacity: s.cpu_capacity,
                memory_mb: s.memory_capacity_bytes / (1024 * 1024),
                monitored: s.monitored,
            })
            .collect(),
        edges: topo
            .graph
            .edges
            .iter()
            .map(|e| EdgeDoc {
                caller: e.caller.clone(),
                callee: e.callee.clone(),
                operation: e.operation.clone(),
                base_latency_ms: e.base_latency_ms,
                payload_bytes: e.payload_bytes,
                database: e.is_database_edge,
            })
            .collect(),
        workflows: topo
            .workflows
            .iter()
            .map(|w| WorkflowDoc {
                name: w.name.clone(),
                root_service: w.root_service.clone(),
                root_operation: w.root_operation.clone(),
                root_base_ms: w.root_base_ms,
                states: w
                    .states
                    .iter()
                    .map(|s| StateDoc {
                        name: s.name.clone(),
                        transitions: s
                            .transitions
                            .iter()
                            .map(|t| TransitionDoc {
                                name: t.name.clone(),
                                service: t.service.clone(),
                                operation: t.operation.clone(),
                                sub_workflow: t.sub_workflow.clone(),
                                weight: t.weight,
                                optional: t.optional,
                            })
                            .collect(),
                    })
                    .collect(),
            })
            .collect(),
        entry_points: topo.graph.entry_points.clone(),
    };
    toml::to_string(&doc).expect("topology document serialization")
}

// ---------------------------------------------------------------------------
// Execution paths
// ---------------------------------------------------------------------------

/// One concrete invocation in a resolved execution path.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct PathCall {
    pub service: String,
    pub operation: String,
    pub children: Vec<PathChild>,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct PathChild {
    pub state: String,
    pub transition: String,
    pub optional: bool,
    pub call: PathCall,
}

/// A fully resolved execution path: the call tree of one request.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExecutionPath {
    pub workflow: String,
    /// Index of this path in depth-first declaration order.
    pub index: u128,
    pub root: PathCall,
}

impl ExecutionPath {
    pub fn services(&self) -> HashSet<&str> {
        let mut out = HashSet::new();
        collect_services(&self.root, &mut out);
        out
    }

    pub fn call_count(&self) -> usize {
        count_calls(&self.root)
    }
}

fn collect_services<'a>(call: &'a PathCall, out: &mut HashSet<&'a str>) {
    out.insert(call.service.as_str());
    for c in &call.children {
        collect_services(&c.call, out);
    }
}

fn count_calls(call: &PathCall) -> usize {
    1 + call.children.iter().map(|c| count_calls(&c.call)).sum::<usize>()
}

/// Number of distinct execution paths: the product over states of their
/// transition counts, expanded recursively through sub-workflows.
pub fn count_paths(topo: &Topology, workflow: &str) -> u128 {
    let mut memo = HashMap::new();
    count_paths_memo(topo, workflow, &mut memo)
}

fn count_paths_memo(topo: &Topology, workflow: &str, memo: &mut HashMap<String, u128>) -> u128 {
    if let Some(&c) = memo.get(workflow) {
        return c;
    }
    let w = topo.workflow(workflow).expect("validated workflow name");
    let mut total: u128 = 1;
    for st in &w.states {
        let mut options: u128 = 0;
        for t in &st.transitions {
            let sub = match &t.sub_workflow {
                Some(s) => count_paths_memo(topo, s, memo),
                None => 1,
            };
            options = options.checked_add(sub).expect("path count overflow");
        }
        total = total.checked_mul(options).expect("path count overflow");
    }
    memo.insert(workflow.to_string(), total);
    total
}

/// Decodes path `index` (depth-first, transition-declaration order) into a
/// concrete call tree. `index` must be < `count_paths`.
pub fn nth_path(topo: &Topology, workflow: &str, index: u128) -> ExecutionPath {
    let total = count_paths(topo, workflow);
    assert!(index < total, "path index {index} out of range {total}");
    let w = topo.workflow(workflow).expect("validated workflow name");
    let root = decode_call(topo, w, index);
    ExecutionPath {
        workflow: workflow.to_string(),
        index,
        root,
    }
}

fn decode_call(topo: &Topology, w: &WorkflowStateMachine, mut index: u128) -> PathCall {
    // Radix weights: state i spans the product of option counts of the
    // states after it, so earlier states are more significant digits.
    let option_counts: Vec<u128> = w
        .states
        .iter()
        .map(|st| {
            st.transitions
                .iter()
                .map(|t| match &t.sub_workflow {
                    Some(s) => count_paths(topo, s),
                    None => 1,
                })
                .sum()
        })
        .collect();
    let mut children = Vec::with_capacity(w.states.len());
    for (i, st) in w.states.iter().enumerate() {
        let tail: u128 = option_counts[i + 1..].iter().product();
        let mut digit = index / tail;
        index %= tail;
        // locate the transition block containing this digit
        let mut chosen = None;
        for t in &st.transitions {
            let block = match &t.sub_workflow {
                Some(s) => count_paths(topo, s),
                None => 1,
            };
            if digit < block {
                chosen = Some((t, digit));
                break;
            }
            digit -= block;
        }
        let (t, sub_index) = chosen.expect("digit within option count");
        let call = match &t.sub_workflow {
            Some(s) => decode_call(topo, topo.workflow(s).unwrap(), sub_index),
            None => PathCall {
                service: t.service.clone(),
                operation: t.operation.clone(),
                children: Vec::new(),
            },
        };
        children.push(PathChild {
            state: st.name.clone(),
            transition: t.name.clone(),
            optional: t.optional,
            call,
        });
    }
    PathCall {
        service: w.root_service.clone(),
        operation: w.root_operation.clone(),
        children,
    }
}

/// First `limit` paths in deterministic depth-first order.
pub fn enumerate_paths(topo: &Topology, workflow: &str, limit: u128) -> Vec<ExecutionPath> {
    assert!(limit >= 1, "limit must be >= 1");
    let total = count_paths(topo, workflow);
    let n = total.min(limit);
    (0..n).map(|i| nth_path(topo, workflow, i)).collect()
}

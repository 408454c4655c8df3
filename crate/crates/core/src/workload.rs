//! Open-loop workload generation: Poisson request arrivals whose execution
//! paths are sampled from the workflow state machines.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::telemetry::TimeMs;
use crate::topology::{count_paths, nth_path, ExecutionPath, Topology, WorkflowStateMachine};

/// Request rate as a function of time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RateSchedule {
    Constant { qps: f64 },
    /// Piecewise-constant segments; each entry applies from `start_s` until
    /// the next entry (or forever).
    Piecewise { segments: Vec<RateSegment> },
    /// `mean * (1 + amplitude * sin(2*pi*t/period))`, clamped to `cap`.
    Sine {
        mean: f64,
        amplitude: f64,
        period_s: f64,
        cap: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateSegment {
    pub start_s: f64,
    pub qps: f64,
}

impl RateSchedule {
    pub fn rate_at(&self, t_s: f64) -> f64 {
        match self {
            RateSchedule::Constant { qps } => *qps,
            RateSchedule::Piecewise { segments } => {
                let mut rate = segments.first().map_or(0.0, |s| s.qps);
                for seg in segments {
                    if t_s >= seg.start_s {
                        rate = seg.qps;
                    }
                }
                rate
            }
            RateSchedule::Sine {
                mean,
                amplitude,
                period_s,
                cap,
            } => {
                let v = mean * (1.0 + amplitude * (2.0 * std::f64::consts::PI * t_s / period_s).sin());
                v.clamp(0.0, *cap)
            }
        }
    }

    pub fn max_rate(&self) -> f64 {
        match self {
            RateSchedule::Constant { qps } => *qps,
            RateSchedule::Piecewise { segments } => {
                segments.iter().map(|s| s.qps).fold(0.0, f64::max)
            }
            RateSchedule::Sine {
                mean,
                amplitude,
                cap,
                ..
            } => (mean * (1.0 + amplitude)).min(*cap),
        }
    }

    /// Mean rate over `[0, duration)`, by midpoint sampling at 1 s.
    pub fn mean_rate(&self, duration_s: f64) -> f64 {
        let n = (duration_s.ceil() as usize).max(1);
        (0..n).map(|i| self.rate_at(i as f64 + 0.5)).sum::<f64>() / n as f64
    }

    fn validate(&self) -> Result<()> {
        let ok = match self {
            RateSchedule::Constant { qps } => *qps > 0.0,
            RateSchedule::Piecewise { segments } => {
                !segments.is_empty() && segments.iter().all(|s| s.qps > 0.0)
            }
            RateSchedule::Sine {
                mean,
                amplitude,
                period_s,
                cap,
            } => *mean > 0.0 && *amplitude >= 0.0 && *amplitude < 1.0 && *period_s > 0.0 && *cap > 0.0,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Config("rate schedule must be positive".into()))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PathPolicy {
    /// Uniform over the execution paths of the chosen workflow.
    Uniform,
    /// Each state picks a transition with probability proportional to its
    /// declared weight, recursively.
    WeightedTransitions,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkloadProfile {
    pub schedule: RateSchedule,
    pub policy: PathPolicy,
    /// Relative weight per top-level workflow name; unlisted workflows get 1.
    #[serde(default)]
    pub workflow_weights: Vec<(String, f64)>,
    pub seed: u64,
    pub duration_s: f64,
}

impl WorkloadProfile {
    pub fn constant(qps: f64, duration_s: f64, seed: u64) -> Self {
        WorkloadProfile {
            schedule: RateSchedule::Constant { qps },
            policy: PathPolicy::Uniform,
            workflow_weights: Vec::new(),
            seed,
            duration_s,
        }
    }

    /// Reference profile: mean 16.47 QPS with +-50% sinusoidal modulation,
    /// capped at 37.6 QPS.
    pub fn reference(duration_s: f64, seed: u64) -> Self {
        WorkloadProfile {
            schedule: RateSchedule::Sine {
                mean: 16.47,
                amplitude: 0.5,
                period_s: 120.0,
                cap: 37.6,
            },
            policy: PathPolicy::Uniform,
            workflow_weights: Vec::new(),
            seed,
            duration_s,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.schedule.validate()?;
        if self.duration_s <= 0.0 {
            return Err(Error::Config("duration must be positive".into()));
        }
        if self.workflow_weights.iter().any(|(_, w)| *w < 0.0)
            || (!self.workflow_weights.is_empty()
                && self.workflow_weights.iter().all(|(_, w)| *w == 0.0))
        {
            return Err(Error::Config("workflow weights must be nonnegative and not all zero".into()));
        }
        Ok(())
    }
}

/// One scheduled request.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RequestArrival {
    pub at_ms: TimeMs,
    pub workflow: String,
    pub path_index: u128,
}

impl RequestArrival {
    pub fn resolve(&self, topo: &Topology) -> ExecutionPath {
        nth_path(topo, &self.workflow, self.path_index)
    }
}

/// Generates the full arrival schedule. Fully determined by
/// `(profile, workflows, profile.seed)`.
///
/// Arrivals follow an inhomogeneous Poisson process realized by thinning at
/// the schedule's peak rate. Each arrival picks a workflow by weight, then a
/// path per the profile policy.
pub fn generate_arrivals(
    profile: &WorkloadProfile,
    topo: &Topology,
    workflows: &[&WorkflowStateMachine],
) -> Result<Vec<RequestArrival>> {
    profile.validate()?;
    if workflows.is_empty() {
        return Err(Error::Config("no workflows to sample from".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(profile.seed);
    let max_rate = profile.schedule.max_rate();
    let weights: Vec<f64> = workflows
        .iter()
        .map(|w| {
            profile
                .workflow_weights
                .iter()
                .find(|(n, _)| n == &w.name)
                .map_or(1.0, |(_, wt)| *wt)
        })
        .collect();
    let total_weight: f64 = weights.iter().sum();

    let mut out = Vec::new();
    let mut t_s = 0.0f64;
    loop {
        // candidate gap at the peak rate
        let u: f64 = rng.gen::<f64>().max(f64::MIN_POSITIVE);
        t_s += -u.ln() / max_rate;
        if t_s >= profile.duration_s {
            break;
        }
        let accept: f64 = rng.gen();
        if accept * max_rate > profile.schedule.rate_at(t_s) {
            continue;
        }
        let wf = pick_weighted(&mut rng, workflows, &weights, total_weight);
        let path_index = sample_path_index(&mut rng, topo, wf, profile.policy);
        out.push(RequestArrival {
            at_ms: (t_s * 1000.0).round() as TimeMs,
            workflow: wf.name.clone(),
            path_index,
        });
    }
    Ok(out)
}

fn pick_weighted<'a>(
    rng: &mut ChaCha8Rng,
    workflows: &[&'a WorkflowStateMachine],
    weights: &[f64],
    total: f64,
) -> &'a WorkflowStateMachine {
    let mut x: f64 = rng.gen::<f64>() * total;
    for (w, &wt) in workflows.iter().zip(weights) {
        if x < wt {
            return w;
        }
        x -= wt;
    }
    workflows.last().unwrap()
}

fn sample_path_index(
    rng: &mut ChaCha8Rng,
    topo: &Topology,
    wf: &WorkflowStateMachine,
    policy: PathPolicy,
) -> u128 {
    match policy {
        PathPolicy::Uniform => {
            let total = count_paths(topo, &wf.name);
            sample_u128(rng, total)
        }
        PathPolicy::WeightedTransitions => weighted_path_index(rng, topo, wf),
    }
}

fn sample_u128(rng: &mut ChaCha8Rng, bound: u128) -> u128 {
    if bound <= 1 {
        return 0;
    }
    if bound <= u64::MAX as u128 {
        return rng.gen_range(0..bound as u64) as u128;
    }
    // rejection sampling over the full 128-bit space
    let zone = u128::MAX - (u128::MAX % bound);
    loop {
        let v = ((rng.gen::<u64>() as u128) << 64) | rng.gen::<u64>() as u128;
        if v < zone {
            return v % bound;
        }
    }
}

/// Picks a transition per state by weight, recursively; inside a chosen
/// sub-workflow the same rule applies. Returns the path's enumeration index
/// so downstream consumers only ever deal in (workflow, index) pairs.
fn weighted_path_index(rng: &mut ChaCha8Rng, topo: &Topology, wf: &WorkflowStateMachine) -> u128 {
    let mut index: u128 = 0;
    for st in &wf.states {
        let option_count: u128 = st
            .transitions
            .iter()
            .map(|t| t.sub_workflow.as_deref().map_or(1, |s| count_paths(topo, s)))
            .sum();
        let total_w: f64 = st.transitions.iter().map(|t| t.weight).sum();
        let mut x: f64 = rng.gen::<f64>() * total_w;
        let mut offset: u128 = 0;
        let mut digit = None;
        for t in &st.transitions {
            let block = t
                .sub_workflow
                .as_deref()
                .map_or(1, |s| count_paths(topo, s));
            if x < t.weight {
                let sub_idx = match t.sub_workflow.as_deref() {
                    Some(s) => weighted_path_index(rng, topo, topo.workflow(s).unwrap()),
                    None => 0,
                };
                digit = Some(offset + sub_idx);
                break;
            }
            x -= t.weight;
            offset += block;
        }
        let digit = digit.unwrap_or(offset.saturating_sub(1));
        index = index * option_count + digit;
    }
    index
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::builtin::load_builtin;
    use crate::topology::load_topology;

    fn chain3() -> Topology {
        load_builtin("chain3").unwrap()
    }

    #[test]
    fn poisson_count_and_reproducibility() {
        let topo = chain3();
        let wfs = topo.top_level_workflows();
        let profile = WorkloadProfile::constant(10.0, 60.0, 99);
        let a = generate_arrivals(&profile, &topo, &wfs).unwrap();
        let b = generate_arrivals(&profile, &topo, &wfs).unwrap();
        assert_eq!(a, b);
        assert!(
            (480..=720).contains(&a.len()),
            "expected ~600 arrivals, got {}",
            a.len()
        );
        // nondecreasing arrival times
        for pair in a.windows(2) {
            assert!(pair[0].at_ms <= pair[1].at_ms);
        }
    }

    #[test]
    fn piecewise_rate_ratio() {
        let topo = chain3();
        let wfs = topo.top_level_workflows();
        let profile = WorkloadProfile {
            schedule: RateSchedule::Piecewise {
                segments: vec![
                    RateSegment { start_s: 0.0, qps: 5.0 },
                    RateSegment { start_s: 30.0, qps: 20.0 },
                ],
            },
            policy: PathPolicy::Uniform,
            workflow_weights: Vec::new(),
            seed: 7,
            duration_s: 60.0,
        };
        let arrivals = generate_arrivals(&profile, &topo, &wfs).unwrap();
        let first = arrivals.iter().filter(|a| a.at_ms < 30_000).count() as f64;
        let second = arrivals.iter().filter(|a| a.at_ms >= 30_000).count() as f64;
        let ratio = second / first;
        assert!((3.0..=5.3).contains(&ratio), "ratio = {ratio}");
    }

    #[test]
    fn uniform_policy_path_frequencies() {
        // 36-path booking workflow from the reference config
        let topo = load_builtin("trainticket50").unwrap();
        let booking = topo.workflow("booking").unwrap();
        let profile = WorkloadProfile::constant(100.0, 100.0, 3);
        let arrivals = generate_arrivals(&profile, &topo, &[booking]).unwrap();
        let target = arrivals.len() as f64 / 36.0;
        let mut counts = std::collections::HashMap::new();
        for a in &arrivals {
            *counts.entry(a.path_index).or_insert(0usize) += 1;
        }
        assert_eq!(counts.len(), 36);
        for (&idx, &c) in &counts {
            let dev = (c as f64 - target).abs() / target;
            assert!(dev <= 0.30, "path {idx}: count {c}, target {target}");
        }
    }

    #[test]
    fn realized_rate_converges() {
        let topo = chain3();
        let wfs = topo.top_level_workflows();
        let profile = WorkloadProfile::constant(10.0, 600.0, 1234);
        let arrivals = generate_arrivals(&profile, &topo, &wfs).unwrap();
        let realized = arrivals.len() as f64 / 600.0;
        assert!((realized - 10.0).abs() / 10.0 <= 0.05, "realized {realized}");
    }

    #[test]
    fn sine_schedule_respects_cap() {
        let s = RateSchedule::Sine {
            mean: 16.47,
            amplitude: 0.5,
            period_s: 120.0,
            cap: 20.0,
        };
        for t in 0..240 {
            assert!(s.rate_at(t as f64) <= 20.0);
        }
        assert_eq!(s.max_rate(), 20.0);
    }

    #[test]
    fn weighted_transitions_respect_weights() {
        let doc = r#"
entry_points = ["a"]
[[services]]
name = "a"
[[services]]
name = "b"
[[edges]]
caller = "a"
callee = "b"
operation = "x"
[[workflows]]
name = "wf"
root_service = "a"
root_operation = "r"
[[workflows.states]]
name = "s"
[[workflows.states.transitions]]
name = "heavy"
service = "b"
operation = "x"
weight = 9.0
[[workflows.states.transitions]]
name = "light"
service = "b"
operation = "x"
weight = 1.0
"#;
        let topo = load_topology(doc).unwrap();
        let wf = topo.workflow("wf").unwrap();
        let profile = WorkloadProfile {
            schedule: RateSchedule::Constant { qps: 100.0 },
            policy: PathPolicy::WeightedTransitions,
            workflow_weights: Vec::new(),
            seed: 11,
            duration_s: 50.0,
        };
        let arrivals = generate_arrivals(&profile, &topo, &[wf]).unwrap();
        let heavy = arrivals.iter().filter(|a| a.path_index == 0).count() as f64;
        let share = heavy / arrivals.len() as f64;
        assert!((share - 0.9).abs() < 0.05, "heavy share {share}");
    }

    #[test]
    fn invalid_profile_rejected() {
        let topo = chain3();
        let wfs = topo.top_level_workflows();
        let profile = WorkloadProfile::constant(0.0, 60.0, 1);
        assert!(generate_arrivals(&profile, &topo, &wfs).is_err());
    }
}

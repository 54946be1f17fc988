//! Episode execution: the dual-frequency navigation loop — fast local
//! control every step, slow global re-localization and replanning every
//! `global_period` steps or on a confidence-drop or blocked-edge trigger —
//! plus the event log that success evaluation and the loop-contract
//! checks read.

pub mod benchmark;
pub mod metrics;

pub use benchmark::{
    run_benchmark, run_variant, Ablation, BenchmarkRow, BenchmarkTable, EpisodeRecord,
    SuiteParams, Variant,
};
pub use metrics::{compute_metrics, Metrics};

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{wrap_angle, Pose, Vec2};
use crate::planner::{plan_path, BlockedEdges, NodePath};
use crate::policy::{ActionStep, AdapterParams, ControlParams, LocalPolicy};
use crate::retrieval::{confidence, localize, RetrievalMode};
use crate::simworld::{
    geodesic_distance, render_observation, ObservationFrame, RenderParams, Scene,
};
use crate::smg::{MemoryGraph, NodeId};
use crate::rng::substream;

/// Edge-traversal patience, in multiples of the stuck window: ticks without
/// a new best distance to the current waypoint before its edge is reported
/// blocked. Well above the policy's own escape threshold so wall-following
/// engages (and usually finishes the crossing) first.
const FUTILITY_WINDOW_FACTOR: u64 = 8;

/// What the agent is asked to reach.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum GoalKind {
    /// Reach the pose a goal image was captured at.
    ImageGoal,
    /// Reach a specific object instance (index into the scene's objects);
    /// the goal image's detections are filtered to that object's category.
    InstanceImageGoal { object: usize },
}

/// Timing and trigger parameters of the dual-frequency loop.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LoopParams {
    /// Global re-localization period, in local steps (T_g).
    pub global_period: u64,
    /// Steps per local control tick; one action applies per tick.
    pub local_period: u64,
    /// Re-localize early when waypoint confidence drops below this.
    pub confidence_floor: f64,
    /// Blocked-edge memory, in multiples of `global_period`.
    pub blocked_edge_ttl_periods: u64,
    /// Consecutive no-progress policy calls before escape engages.
    pub stuck_window: u32,
    /// Shortlist size for every localization.
    pub retrieval_candidates: usize,
    /// Retrieval mode for agent and goal localization.
    pub retrieval_mode: RetrievalMode,
}

impl Default for LoopParams {
    fn default() -> Self {
        LoopParams {
            global_period: 40,
            local_period: 1,
            confidence_floor: 0.35,
            blocked_edge_ttl_periods: 4,
            stuck_window: 12,
            retrieval_candidates: 5,
            retrieval_mode: RetrievalMode::Hybrid,
        }
    }
}

/// One navigation task: endpoints, goal kind, limits, and loop timing.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EpisodeSpec {
    pub id: u64,
    pub start: Pose,
    pub goal: Pose,
    pub goal_kind: GoalKind,
    pub seed: u64,
    pub max_steps: u64,
    pub success_radius: f64,
    pub loop_params: LoopParams,
}

impl EpisodeSpec {
    pub fn new(id: u64, start: Pose, goal: Pose, seed: u64) -> EpisodeSpec {
        EpisodeSpec {
            id,
            start,
            goal,
            goal_kind: GoalKind::ImageGoal,
            seed,
            max_steps: 500,
            success_radius: 1.0,
            loop_params: LoopParams::default(),
        }
    }

    fn validate(&self) -> Result<()> {
        if self.max_steps == 0 {
            return Err(Error::InvalidEpisode("max_steps must be positive".into()));
        }
        if !(self.success_radius > 0.0) {
            return Err(Error::InvalidEpisode("success radius must be positive".into()));
        }
        if self.loop_params.global_period == 0 || self.loop_params.local_period == 0 {
            return Err(Error::InvalidEpisode("loop periods must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.loop_params.confidence_floor) {
            return Err(Error::InvalidEpisode("confidence floor outside [0, 1]".into()));
        }
        if self.loop_params.retrieval_candidates == 0 {
            return Err(Error::InvalidEpisode("retrieval candidates must be positive".into()));
        }
        Ok(())
    }
}

/// Which stack drives the episode.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum EpisodeMode {
    /// Graph retrieval + planning + mode-switching local policy.
    Full,
    /// No graph: the local policy drives straight at the image goal.
    PolicyOnly,
}

/// Everything an episode runs against, shared read-only.
pub struct EpisodeContext<'a> {
    /// The world the agent walks in (may carry injected obstacles).
    pub scene: &'a Scene,
    /// The world the goal image was captured in (the clean scene).
    pub goal_scene: &'a Scene,
    pub graph: &'a MemoryGraph,
    pub adapter: &'a AdapterParams,
    pub render: RenderParams,
    pub control: ControlParams,
    pub mode: EpisodeMode,
    /// Observation noise scale; benchmarks run at 0.
    pub noise_sigma: f64,
}

/// Why a global localization fired.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum LocalizeReason {
    Initial,
    Scheduled,
    LowConfidence,
    BlockedEdge,
}

/// One entry of the episode event log.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub enum EpisodeEvent {
    GlobalLocalize {
        step: u64,
        reason: LocalizeReason,
        node: u32,
        confidence: f64,
    },
    GoalLocalized {
        step: u64,
        node: u32,
        score: f64,
    },
    Replanned {
        step: u64,
        nodes: Vec<u32>,
    },
    PlanUnreachable {
        step: u64,
    },
    WaypointReached {
        step: u64,
        node: u32,
        cursor: usize,
    },
    ImageGoalInvoked {
        step: u64,
        cursor: usize,
        path_len: usize,
    },
    BlockedEdgeMarked {
        step: u64,
        a: u32,
        b: u32,
    },
    Collision {
        step: u64,
    },
    Stopped {
        step: u64,
        distance_to_goal: f64,
    },
}

/// How the episode ended.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum EpisodeOutcome {
    /// The policy declared arrival (success iff within the radius).
    Stopped,
    /// The step budget ran out.
    StepLimit,
    /// Planning found no route and had no blocked edges left to drop.
    Unreachable,
}

/// Everything recorded about one executed episode.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EpisodeResult {
    pub spec_id: u64,
    pub success: bool,
    pub steps: u64,
    /// Executed path length p: sum of applied displacement magnitudes.
    pub path_length: f64,
    /// Geodesic optimum l between start and goal on the runtime scene.
    pub geodesic_optimum: f64,
    pub outcome: EpisodeOutcome,
    pub trajectory: Vec<Pose>,
    pub events: Vec<EpisodeEvent>,
}

impl EpisodeResult {
    pub fn count_events(&self, pred: impl Fn(&EpisodeEvent) -> bool) -> usize {
        self.events.iter().filter(|e| pred(e)).count()
    }
}

/// Run one episode of the dual-frequency loop and evaluate it.
///
/// Per step: render an observation; fire the global stage when scheduled,
/// on a waypoint-confidence drop, or on a blocked-edge signal (localize,
/// localize the goal once and cache it, replan with blocked edges
/// excluded); advance the path cursor within the region radius of the
/// current waypoint; refill the action chunk from the point-goal policy
/// before the final node and the image-goal policy at it; apply one
/// action, collision-checked against the true scene — a collision cancels
/// the rest of the chunk and raises the blocked-edge signal for the edge
/// in traversal. Ends on a stop flag, the step cap, or plan exhaustion;
/// success means the policy stopped within the success radius of the goal.
pub fn run_episode(spec: &EpisodeSpec, ctx: &EpisodeContext) -> Result<EpisodeResult> {
    spec.validate()?;
    ctx.scene.require_free(spec.start.xy())?;
    ctx.goal_scene.require_free(spec.goal.xy())?;
    let geodesic_optimum = geodesic_distance(ctx.scene, spec.start.xy(), spec.goal.xy())?;
    if !geodesic_optimum.is_finite() {
        return Err(Error::InvalidEpisode(
            "goal unreachable from start on the runtime scene".into(),
        ));
    }
    if ctx.mode == EpisodeMode::Full && ctx.graph.nodes.is_empty() {
        return Err(Error::EmptyGraph);
    }

    let goal_frame = prepare_goal_frame(spec, ctx)?;

    let mut control = ctx.control.clone();
    control.stuck_window = spec.loop_params.stuck_window;
    let mut policy = LocalPolicy::new(control)?;
    let mut obs_rng = substream(spec.seed, "episode-observations");

    let loop_params = &spec.loop_params;
    let blocked_ttl = loop_params.global_period * loop_params.blocked_edge_ttl_periods;

    let mut pose = spec.start;
    let mut trajectory = vec![pose];
    let mut events: Vec<EpisodeEvent> = Vec::new();
    let mut path_length = 0.0_f64;
    let mut steps: u64 = 0;
    let mut since_global: u64 = 0;
    let mut blocked = BlockedEdges::new();
    let mut blocked_signal = false;
    let mut plan: Option<NodePath> = None;
    let mut goal_node = None;
    let mut pending: VecDeque<ActionStep> = VecDeque::new();
    let mut outcome = EpisodeOutcome::StepLimit;
    // Edge-traversal futility tracker: best distance to the current graph
    // waypoint and ticks since it last improved. Local avoidance can skirt
    // a wall indefinitely without ever colliding, so the loop itself must
    // notice that an edge is not being traversed and report it blocked.
    let mut futile_target: Option<NodeId> = None;
    let mut futile_best = f64::INFINITY;
    let mut futile_ticks: u64 = 0;

    while steps < spec.max_steps {
        let obs = render_observation(ctx.scene, &pose, &ctx.render, ctx.noise_sigma, &mut obs_rng)?;

        if ctx.mode == EpisodeMode::Full {
            blocked.expire(steps);

            let reason = global_trigger(
                spec, ctx, &obs, steps, since_global, blocked_signal, plan.as_ref(),
            )?;
            if let Some(reason) = reason {
                blocked_signal = false;
                since_global = 0;
                pending.clear();

                let fix = localize(
                    &obs,
                    ctx.graph,
                    loop_params.retrieval_candidates,
                    loop_params.retrieval_mode,
                )?;
                events.push(EpisodeEvent::GlobalLocalize {
                    step: steps,
                    reason,
                    node: fix.node_id.0,
                    confidence: fix.keyframe_score,
                });

                // The goal image is static: localize it once and cache.
                if goal_node.is_none() {
                    let goal_fix = localize(
                        &goal_frame,
                        ctx.graph,
                        loop_params.retrieval_candidates,
                        loop_params.retrieval_mode,
                    )?;
                    events.push(EpisodeEvent::GoalLocalized {
                        step: steps,
                        node: goal_fix.node_id.0,
                        score: goal_fix.combined_score,
                    });
                    goal_node = Some(goal_fix.node_id);
                }
                let goal_id = goal_node.expect("cached above");

                let mut replanned = plan_path(ctx.graph, fix.node_id, goal_id, &blocked)?.into_path();
                if replanned.is_none() && !blocked.is_empty() {
                    // Stale blockages can wall off the only route; drop
                    // them and try once more before giving up.
                    blocked.clear();
                    replanned = plan_path(ctx.graph, fix.node_id, goal_id, &blocked)?.into_path();
                }
                match replanned {
                    Some(mut path) => {
                        path.goal_waypoint.goal_embedding =
                            Some(goal_frame.frame_embedding.clone());
                        path.goal_waypoint.eval_position = Some([spec.goal.xy().x, spec.goal.xy().y]);
                        // Resume mid-route instead of backtracking: start the
                        // cursor at the path node nearest the agent, stepping
                        // past it when its region is already reached. Without
                        // this every scheduled fix would walk the agent back
                        // to the localized node and forfeit edge progress.
                        let nearest = path
                            .node_ids
                            .iter()
                            .enumerate()
                            .map(|(i, &id)| {
                                Ok((i, pose.xy().distance(ctx.graph.node(id)?.center_xy())))
                            })
                            .collect::<Result<Vec<_>>>()?
                            .into_iter()
                            .min_by(|a, b| a.1.partial_cmp(&b.1).unwrap().then(a.0.cmp(&b.0)))
                            .expect("plans are never empty");
                        path.cursor = if nearest.1 <= ctx.graph.params.region_radius {
                            nearest.0 + 1
                        } else {
                            nearest.0
                        };
                        events.push(EpisodeEvent::Replanned {
                            step: steps,
                            nodes: path.node_ids.iter().map(|n| n.0).collect(),
                        });
                        plan = Some(path);
                    }
                    None => {
                        events.push(EpisodeEvent::PlanUnreachable { step: steps });
                        outcome = EpisodeOutcome::Unreachable;
                        break;
                    }
                }
            }

            // Advance the cursor over every waypoint already within reach.
            if let Some(path) = plan.as_mut() {
                while let Some(target) = path.target() {
                    let node = ctx.graph.node(target)?;
                    if pose.xy().distance(node.center_xy()) <= ctx.graph.params.region_radius {
                        events.push(EpisodeEvent::WaypointReached {
                            step: steps,
                            node: target.0,
                            cursor: path.cursor,
                        });
                        path.advance();
                        pending.clear(); // steer at the new waypoint now
                    } else {
                        break;
                    }
                }
            }
        }

        if pending.is_empty() {
            let chunk = match (ctx.mode, plan.as_ref()) {
                (EpisodeMode::PolicyOnly, _) => {
                    policy.act_image_goal(&obs, &goal_frame, ctx.adapter)?
                }
                (EpisodeMode::Full, Some(path)) => match path.target() {
                    Some(target) => {
                        let node = ctx.graph.node(target)?;
                        policy.act_point_goal(&obs, node.center_xy())?
                    }
                    None => {
                        events.push(EpisodeEvent::ImageGoalInvoked {
                            step: steps,
                            cursor: path.cursor,
                            path_len: path.node_ids.len(),
                        });
                        policy.act_image_goal(&obs, &goal_frame, ctx.adapter)?
                    }
                },
                (EpisodeMode::Full, None) => {
                    return Err(Error::InvariantViolated(
                        "full-mode step without a plan".into(),
                    ))
                }
            };

            if chunk.is_stop() {
                events.push(EpisodeEvent::Stopped {
                    step: steps,
                    distance_to_goal: pose.xy().distance(spec.goal.xy()),
                });
                outcome = EpisodeOutcome::Stopped;
                break;
            }
            if ctx.mode == EpisodeMode::Full && chunk.is_rotation_only() {
                // Fully enclosed on the local patch: treat the traversal
                // edge as blocked and let the trigger replan around it.
                mark_traversal_edge(plan.as_ref(), &mut blocked, steps, blocked_ttl, &mut events);
                blocked_signal = true;
            }
            pending.extend(chunk.steps().iter().copied());
        }

        // One action per local tick; an empty chunk station-keeps.
        let action = pending.pop_front().unwrap_or(ActionStep {
            displacement: Vec2::ZERO,
            heading_delta: 0.0,
        });
        let next = pose.xy().add(action.displacement);
        if scene_segment_blocked(ctx.scene, pose.xy(), next) {
            events.push(EpisodeEvent::Collision { step: steps });
            pending.clear();
            if ctx.mode == EpisodeMode::Full {
                mark_traversal_edge(plan.as_ref(), &mut blocked, steps, blocked_ttl, &mut events);
                blocked_signal = true;
            }
            // The pose is unchanged; the tick is still spent.
        } else {
            pose = Pose::planar(next.x, next.y, wrap_angle(pose.yaw + action.heading_delta))?;
            path_length += action.displacement.norm();
        }

        // Edge-traversal futility: when steering at a graph waypoint stops
        // closing the distance for a whole stuck window, the edge under
        // traversal is treated as blocked and the global stage reroutes.
        if ctx.mode == EpisodeMode::Full {
            match plan.as_ref().and_then(|p| p.target()) {
                Some(target) if futile_target == Some(target) => {
                    let d = pose.xy().distance(ctx.graph.node(target)?.center_xy());
                    if d + 1e-9 < futile_best {
                        futile_best = d;
                        futile_ticks = 0;
                    } else {
                        futile_ticks += 1;
                        // Patient by design: escape-mode wall-following must
                        // get room to round an obstruction (during which the
                        // distance to the waypoint legitimately rises) before
                        // the edge is declared untraversable.
                        if futile_ticks >= FUTILITY_WINDOW_FACTOR * u64::from(loop_params.stuck_window) {
                            mark_traversal_edge(
                                plan.as_ref(),
                                &mut blocked,
                                steps,
                                blocked_ttl,
                                &mut events,
                            );
                            blocked_signal = true;
                            pending.clear();
                            // The policy's own escape state is left alone: if
                            // the replanned route keeps this waypoint, an
                            // in-progress boundary trace must keep tracing,
                            // and a changed waypoint re-baselines it anyway.
                            futile_target = None;
                        }
                    }
                }
                Some(target) => {
                    futile_target = Some(target);
                    futile_best = pose.xy().distance(ctx.graph.node(target)?.center_xy());
                    futile_ticks = 0;
                }
                None => futile_target = None,
            }
        }

        trajectory.push(pose);
        steps += 1;
        since_global += 1;
    }

    let success = outcome == EpisodeOutcome::Stopped
        && pose.xy().distance(spec.goal.xy()) <= spec.success_radius;

    Ok(EpisodeResult {
        spec_id: spec.id,
        success,
        steps,
        path_length,
        geodesic_optimum,
        outcome,
        trajectory,
        events,
    })
}

/// Decide whether the global stage fires this tick, and why.
fn global_trigger(
    spec: &EpisodeSpec,
    ctx: &EpisodeContext,
    obs: &ObservationFrame,
    steps: u64,
    since_global: u64,
    blocked_signal: bool,
    plan: Option<&NodePath>,
) -> Result<Option<LocalizeReason>> {
    if steps == 0 {
        return Ok(Some(LocalizeReason::Initial));
    }
    if blocked_signal {
        return Ok(Some(LocalizeReason::BlockedEdge));
    }
    if since_global >= spec.loop_params.global_period {
        return Ok(Some(LocalizeReason::Scheduled));
    }
    if let Some(path) = plan {
        if let Some(target) = path.target() {
            let node = ctx.graph.node(target)?;
            if confidence(obs, node) < spec.loop_params.confidence_floor {
                return Ok(Some(LocalizeReason::LowConfidence));
            }
        }
    }
    Ok(None)
}

/// Render the goal observation on the clean scene; instance goals keep
/// only detections of the target object's category.
fn prepare_goal_frame(spec: &EpisodeSpec, ctx: &EpisodeContext) -> Result<ObservationFrame> {
    let mut goal_rng = substream(spec.seed, "episode-goal");
    let mut frame =
        render_observation(ctx.goal_scene, &spec.goal, &ctx.render, ctx.noise_sigma, &mut goal_rng)?;
    if let GoalKind::InstanceImageGoal { object } = spec.goal_kind {
        let target = ctx.goal_scene.objects().get(object).ok_or_else(|| {
            Error::InvalidEpisode(format!("goal object index {object} out of range"))
        })?;
        frame.detections.retain(|d| d.category == target.category);
    }
    Ok(frame)
}

/// Mark the edge currently in traversal — between the last reached node
/// and the node being steered at — as blocked.
fn mark_traversal_edge(
    plan: Option<&NodePath>,
    blocked: &mut BlockedEdges,
    steps: u64,
    ttl: u64,
    events: &mut Vec<EpisodeEvent>,
) {
    let Some(path) = plan else { return };
    if path.cursor == 0 || path.cursor >= path.node_ids.len() {
        return; // no graph edge under traversal (initial leg or goal stage)
    }
    let a = path.node_ids[path.cursor - 1];
    let b = path.node_ids[path.cursor];
    blocked.mark(a, b, steps, ttl);
    events.push(EpisodeEvent::BlockedEdgeMarked {
        step: steps,
        a: a.0,
        b: b.0,
    });
}

/// Collision test against the true occupancy grid: sample the segment at
/// half-cell spacing (start excluded — it is the agent's current cell).
fn scene_segment_blocked(scene: &Scene, from: Vec2, to: Vec2) -> bool {
    let length = from.distance(to);
    if length == 0.0 {
        return false;
    }
    let samples = (length / (scene.resolution() * 0.5)).ceil().max(1.0) as usize;
    for i in 1..=samples {
        let t = i as f64 / samples as f64;
        if !scene.is_free(from.add(to.sub(from).scale(t))) {
            return true;
        }
    }
    false
}

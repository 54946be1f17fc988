//! Mode-switching local controller: a deterministic scored-candidate
//! policy with a point-goal mode (steer to a waypoint), an image-goal mode
//! (steer toward a goal observation), a wall-following escape for traps,
//! and a rotate-in-place signal when the agent is fully enclosed.

use crate::error::{Error, Result};
use crate::features::cosine_similarity;
use crate::geometry::{angle_diff, wrap_angle, Vec2};
use crate::policy::adapter::{goal_alignment, AdapterParams};
use crate::simworld::{ObservationFrame, OccupancyPatch};

/// Hard cap on per-step displacement magnitude (meters).
pub const MAX_STEP_LENGTH: f64 = 0.25;
/// Hard cap on per-step heading change (radians): 30 degrees.
pub const MAX_HEADING_DELTA: f64 = std::f64::consts::FRAC_PI_6;

/// Progress below this per simulated step counts as none.
const PROGRESS_EPS: f64 = 1e-9;
/// Within this distance of the point target the controller holds station.
const ARRIVAL_TOLERANCE: f64 = 0.0625;
/// Net progress per call needed to leave escape mode.
const ESCAPE_EXIT_PROGRESS: f64 = 0.0625;
/// Preferred wall distance while escaping, and the gain pulling toward it.
const FOLLOW_DISTANCE: f64 = 0.4;
const FOLLOW_GAIN: f64 = 2.0;
/// Clearance shaping: penalty ramps up inside this distance of obstacles.
const SAFE_CLEARANCE: f64 = 0.5;
const CLEARANCE_WEIGHT: f64 = 0.3;
/// Length of the rotate-in-place chunk emitted when fully enclosed.
const ENCLOSED_ROTATION_STEPS: usize = 3;
/// How far ahead a virtual steering target is placed (meters).
const VIRTUAL_TARGET_RANGE: f64 = 1.0;

/// One local-frame motion command: a bounded planar displacement plus a
/// bounded heading change, both applied over one simulation step.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ActionStep {
    pub displacement: Vec2,
    pub heading_delta: f64,
}

/// Up to `horizon` consecutive steps plus an arrival declaration.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct ActionChunk {
    steps: Vec<ActionStep>,
    stop: bool,
}

impl ActionChunk {
    pub fn new(steps: Vec<ActionStep>, stop: bool, horizon: usize) -> Result<ActionChunk> {
        if steps.len() > horizon {
            return Err(Error::InvalidParameter(format!(
                "chunk of {} steps exceeds horizon {horizon}",
                steps.len()
            )));
        }
        for step in &steps {
            if !step.displacement.is_finite() || !step.heading_delta.is_finite() {
                return Err(Error::InvalidParameter("non-finite action step".into()));
            }
            if step.displacement.norm() > MAX_STEP_LENGTH + 1e-12 {
                return Err(Error::InvalidParameter(format!(
                    "step displacement {} exceeds {MAX_STEP_LENGTH} m",
                    step.displacement.norm()
                )));
            }
            if step.heading_delta.abs() > MAX_HEADING_DELTA + 1e-12 {
                return Err(Error::InvalidParameter(
                    "step heading delta exceeds 30 degrees".into(),
                ));
            }
        }
        Ok(ActionChunk { steps, stop })
    }

    fn stop_chunk() -> ActionChunk {
        ActionChunk {
            steps: Vec::new(),
            stop: true,
        }
    }

    pub fn steps(&self) -> &[ActionStep] {
        &self.steps
    }

    pub fn is_stop(&self) -> bool {
        self.stop
    }

    /// Sum of step displacements.
    pub fn net_displacement(&self) -> Vec2 {
        self.steps
            .iter()
            .fold(Vec2::ZERO, |acc, s| acc.add(s.displacement))
    }

    /// True for the enclosed-agent signal: movement-free, non-empty chunk.
    pub fn is_rotation_only(&self) -> bool {
        !self.steps.is_empty()
            && self
                .steps
                .iter()
                .all(|s| s.displacement.norm() == 0.0)
    }
}

/// How image-goal alignment is scored: the fused adapter blend, or raw
/// frame-embedding similarity alone (the no-adapter ablation).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum AlignmentMode {
    #[default]
    Fused,
    RawEmbedding,
}

/// Controller tuning; every field mirrors a documented default.
#[derive(Clone, Debug, PartialEq)]
pub struct ControlParams {
    /// Maximum steps per chunk (H).
    pub horizon: usize,
    /// Candidate motion directions sampled per simulated step.
    pub candidate_headings: usize,
    /// Candidate step lengths, tried per heading (meters).
    pub step_lengths: [f64; 2],
    /// Obstacle inflation radius for collision checks (meters).
    pub inflation_radius: f64,
    /// Consecutive no-progress calls before wall-following engages (S).
    pub stuck_window: u32,
    /// Alignment at or above which image-goal mode declares arrival.
    pub theta_stop: f64,
    /// Instance similarity above which a goal object counts as matched.
    pub tau_match: f64,
    /// Range at or below which a matched goal instance triggers a stop (m).
    pub instance_stop_range: f64,
    /// Alignment scoring variant for image-goal mode.
    pub alignment_mode: AlignmentMode,
}

impl Default for ControlParams {
    fn default() -> Self {
        ControlParams {
            horizon: 8,
            candidate_headings: 16,
            step_lengths: [0.25, 0.125],
            inflation_radius: 0.2,
            stuck_window: 12,
            theta_stop: 0.92,
            tau_match: 0.8,
            instance_stop_range: 0.9,
            alignment_mode: AlignmentMode::Fused,
        }
    }
}

impl ControlParams {
    pub fn validate(&self) -> Result<()> {
        if self.horizon == 0 || self.candidate_headings == 0 {
            return Err(Error::InvalidParameter(
                "controller horizon and heading count must be positive".into(),
            ));
        }
        for len in self.step_lengths {
            if !(len > 0.0 && len <= MAX_STEP_LENGTH) {
                return Err(Error::InvalidParameter(format!(
                    "step length {len} outside (0, {MAX_STEP_LENGTH}]"
                )));
            }
        }
        if !(self.inflation_radius >= 0.0 && self.inflation_radius.is_finite()) {
            return Err(Error::InvalidParameter("bad inflation radius".into()));
        }
        if self.stuck_window == 0 {
            return Err(Error::InvalidParameter("stuck window must be positive".into()));
        }
        for (name, v) in [("theta_stop", self.theta_stop), ("tau_match", self.tau_match)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::InvalidParameter(format!("{name} {v} outside [0, 1]")));
            }
        }
        if !(self.instance_stop_range > 0.0) {
            return Err(Error::InvalidParameter("bad instance stop range".into()));
        }
        Ok(())
    }
}

/// Per-episode controller state: the no-progress counter feeding escape
/// mode, the best distance ever reached toward the current point target
/// (so cross-call oscillation cannot masquerade as progress), and the
/// previous image-goal sample for gradient steering.
#[derive(Clone, Debug, Default)]
pub struct PolicyState {
    no_progress_calls: u32,
    escaping: bool,
    point_target: Option<Vec2>,
    best_distance: f64,
    /// World position of the wall cell the escape is currently tracing.
    followed_wall: Option<Vec2>,
    last_image_sample: Option<(Vec2, f64)>,
}

impl PolicyState {
    pub fn new() -> PolicyState {
        PolicyState::default()
    }

    pub fn is_escaping(&self) -> bool {
        self.escaping
    }

    /// Consecutive point-goal calls without a new best distance.
    pub fn no_progress_calls(&self) -> u32 {
        self.no_progress_calls
    }

    /// Best distance ever reached toward the current point target.
    pub fn best_distance(&self) -> f64 {
        self.best_distance
    }

    /// Wall cell the escape trace is currently following, if any.
    pub fn followed_wall(&self) -> Option<Vec2> {
        self.followed_wall
    }
}

/// The local policy: immutable tuning plus the mutable per-episode state.
#[derive(Clone, Debug)]
pub struct LocalPolicy {
    params: ControlParams,
    state: PolicyState,
}

impl LocalPolicy {
    pub fn new(params: ControlParams) -> Result<LocalPolicy> {
        params.validate()?;
        Ok(LocalPolicy {
            params,
            state: PolicyState::new(),
        })
    }

    pub fn params(&self) -> &ControlParams {
        &self.params
    }

    pub fn state(&self) -> &PolicyState {
        &self.state
    }

    /// Forget accumulated no-progress state, e.g. when the caller hands
    /// the policy a fresh route and stale escape state would misfire.
    pub fn reset_progress(&mut self) {
        self.state.no_progress_calls = 0;
        self.state.escaping = false;
        self.state.point_target = None;
        self.state.best_distance = f64::INFINITY;
        self.state.followed_wall = None;
    }

    /// Steer toward a waypoint in world coordinates.
    ///
    /// Scores candidate motions (headings x step lengths) on the local
    /// occupancy patch: projected progress toward the target, minus an
    /// infinite penalty for collisions and a shaping penalty for shaving
    /// obstacles; extends the chunk by receding simulation while progress
    /// holds. Repeated no-progress calls switch to wall-following escape;
    /// a fully enclosed agent gets a rotate-in-place chunk instead.
    pub fn act_point_goal(&mut self, obs: &ObservationFrame, target: Vec2) -> Result<ActionChunk> {
        if !target.is_finite() {
            return Err(Error::InvalidParameter("point-goal target not finite".into()));
        }
        self.drive_to_point(obs, target)
    }

    /// Steer toward a goal observation.
    ///
    /// Declares arrival when fused alignment reaches `theta_stop` or a
    /// matched goal instance sits within stopping range. Otherwise steers
    /// at the best-matching goal instance's bearing when one clears
    /// `tau_match`, else along the alignment gradient estimated from the
    /// last two calls, else toward the heading whose predicted detection
    /// bearings best replay the goal's detection set. Obstacle handling is
    /// shared with point-goal mode.
    pub fn act_image_goal(
        &mut self,
        obs: &ObservationFrame,
        goal: &ObservationFrame,
        adapter: &AdapterParams,
    ) -> Result<ActionChunk> {
        let alignment = match self.params.alignment_mode {
            AlignmentMode::Fused => goal_alignment(obs, goal, adapter)?,
            AlignmentMode::RawEmbedding => {
                cosine_similarity(&obs.frame_embedding, &goal.frame_embedding).max(0.0)
            }
        };
        let position = obs.pose.xy();

        if alignment >= self.params.theta_stop {
            self.state.last_image_sample = Some((position, alignment));
            return Ok(ActionChunk::stop_chunk());
        }

        let matched = best_instance_match(obs, goal, self.params.tau_match);
        if let Some((_, _, range)) = matched {
            if range <= self.params.instance_stop_range {
                self.state.last_image_sample = Some((position, alignment));
                return Ok(ActionChunk::stop_chunk());
            }
        }

        let target = match matched {
            Some((_, bearing, range)) => {
                let heading = wrap_angle(obs.pose.yaw + bearing);
                position.add(Vec2::from_angle(heading).scale(range))
            }
            None => self.image_goal_fallback_target(obs, goal, alignment),
        };

        let chunk = self.drive_to_point(obs, target)?;
        self.state.last_image_sample = Some((position, alignment));
        Ok(chunk)
    }

    /// Gradient steering from the previous call, falling back to a
    /// rotate-and-rescore over candidate headings when no gradient exists.
    fn image_goal_fallback_target(
        &self,
        obs: &ObservationFrame,
        goal: &ObservationFrame,
        alignment: f64,
    ) -> Vec2 {
        let position = obs.pose.xy();
        if let Some((prev_pos, prev_alignment)) = self.state.last_image_sample {
            let moved = position.sub(prev_pos);
            if moved.norm() > 1e-9 && alignment != prev_alignment {
                let sign = if alignment > prev_alignment { 1.0 } else { -1.0 };
                let dir = moved.scale(sign / moved.norm());
                return position.add(dir.scale(VIRTUAL_TARGET_RANGE));
            }
        }
        let heading = self.rescore_headings(obs, goal);
        position.add(Vec2::from_angle(heading).scale(VIRTUAL_TARGET_RANGE))
    }

    /// Virtual-heading rescore: pick the heading under which the current
    /// detections would sit at the same relative bearings the goal frame
    /// records for their matching instances.
    fn rescore_headings(&self, obs: &ObservationFrame, goal: &ObservationFrame) -> f64 {
        let mut best = (f64::NEG_INFINITY, obs.pose.yaw);
        for k in 0..self.params.candidate_headings {
            let heading =
                wrap_angle(k as f64 * std::f64::consts::TAU / self.params.candidate_headings as f64);
            let mut score = 0.0;
            for det in &obs.detections {
                for goal_det in &goal.detections {
                    if det.category != goal_det.category {
                        continue;
                    }
                    let sim = cosine_similarity(&det.embedding, &goal_det.embedding).max(0.0);
                    let world_bearing = wrap_angle(obs.pose.yaw + det.bearing);
                    let virtual_bearing = angle_diff(world_bearing, heading);
                    score += sim * (virtual_bearing - goal_det.bearing).cos();
                }
            }
            if score > best.0 + 1e-12 {
                best = (score, heading);
            }
        }
        if best.0 == f64::NEG_INFINITY || best.0 == 0.0 {
            obs.pose.yaw
        } else {
            best.1
        }
    }

    /// Shared motion core for both modes.
    fn drive_to_point(&mut self, obs: &ObservationFrame, target: Vec2) -> Result<ActionChunk> {
        let patch = &obs.local_occupancy;
        let blocked_centers = blocked_cell_centers(patch);
        let position = obs.pose.xy();
        let entry_distance = position.distance(target);

        // A new target is a fresh progress baseline.
        let same_target = self
            .state
            .point_target
            .is_some_and(|t| t.distance(target) <= 1e-9);
        if !same_target {
            self.state.point_target = Some(target);
            self.state.best_distance = entry_distance;
            self.state.no_progress_calls = 0;
            self.state.escaping = false;
            self.state.followed_wall = None;
        }

        if entry_distance <= ARRIVAL_TOLERANCE {
            self.state.escaping = false;
            self.state.no_progress_calls = 0;
            self.state.best_distance = entry_distance;
            self.state.followed_wall = None;
            return ActionChunk::new(Vec::new(), false, self.params.horizon);
        }

        if self.fully_enclosed(patch, position) {
            return self.rotate_in_place(obs.pose.yaw);
        }

        // Progress means beating the best distance ever reached toward this
        // target; comparing consecutive calls would credit oscillation. The
        // re-baselining call itself is neutral.
        if same_target {
            if self.state.escaping {
                if entry_distance + ESCAPE_EXIT_PROGRESS < self.state.best_distance {
                    self.state.escaping = false;
                    self.state.no_progress_calls = 0;
                    self.state.best_distance = entry_distance;
                    self.state.followed_wall = None;
                }
            } else if entry_distance + PROGRESS_EPS < self.state.best_distance {
                self.state.best_distance = entry_distance;
                self.state.no_progress_calls = 0;
            } else {
                self.state.no_progress_calls += 1;
                if self.state.no_progress_calls >= self.params.stuck_window {
                    self.state.escaping = true;
                }
            }
        }

        if self.state.escaping {
            self.wall_follow_chunk(obs, &blocked_centers)
        } else {
            self.greedy_chunk(obs, target)
        }
    }

    /// Receding-horizon greedy chunk: per simulated step, pick the best
    /// collision-free candidate; extend only while progress holds.
    fn greedy_chunk(&self, obs: &ObservationFrame, target: Vec2) -> Result<ActionChunk> {
        let patch = &obs.local_occupancy;
        let blocked_centers = blocked_cell_centers(patch);
        let mut sim_pos = obs.pose.xy();
        let mut sim_heading = obs.pose.yaw;
        let mut steps = Vec::new();

        for _ in 0..self.params.horizon {
            let Some((candidate, progress)) =
                self.best_candidate(patch, &blocked_centers, sim_pos, target)
            else {
                break;
            };
            // The first step may lose ground (sidestepping a wall); later
            // steps extend the chunk only while it keeps gaining.
            if !steps.is_empty() && progress <= PROGRESS_EPS {
                break;
            }
            sim_pos = sim_pos.add(candidate.displacement);
            sim_heading = wrap_angle(sim_heading + candidate.heading_delta);
            steps.push(candidate);
            if sim_pos.distance(target) <= ARRIVAL_TOLERANCE {
                break;
            }
        }
        let mut heading = obs.pose.yaw;
        let steps = steps
            .into_iter()
            .map(|s| {
                let step = reclamp_heading(s, heading);
                heading = wrap_angle(heading + step.heading_delta);
                step
            })
            .collect();
        ActionChunk::new(steps, false, self.params.horizon)
    }

    /// Score all (heading, step length) candidates from `from`; returns
    /// the winner and its progress, or None when everything collides.
    fn best_candidate(
        &self,
        patch: &OccupancyPatch,
        blocked_centers: &[Vec2],
        from: Vec2,
        target: Vec2,
    ) -> Option<(ActionStep, f64)> {
        let current_dist = from.distance(target);
        let mut best: Option<(f64, ActionStep, f64)> = None;
        for k in 0..self.params.candidate_headings {
            let dir = k as f64 * std::f64::consts::TAU / self.params.candidate_headings as f64;
            let unit = Vec2::from_angle(dir);
            for len in self.params.step_lengths {
                let end = from.add(unit.scale(len));
                if segment_collides(patch, from, end, self.params.inflation_radius) {
                    continue;
                }
                let progress = current_dist - end.distance(target);
                let score = progress - clearance_penalty(blocked_centers, end, patch.resolution);
                if best.as_ref().is_none_or(|(s, _, _)| score > s + 1e-12) {
                    best = Some((score, ActionStep { displacement: unit.scale(len), heading_delta: 0.0 }, progress));
                }
            }
        }
        best.map(|(_, step, progress)| (step, progress))
    }

    /// Wall-following escape by the right-hand rule: per step, sweep the
    /// candidate directions from a right turn (the wall side) leftward and
    /// take the first collision-free one. Turning right whenever possible
    /// rounds convex corners; the leftward sweep turns concave corners —
    /// plain tangent tracking stalls on those because the tangent itself
    /// is blocked by the adjoining wall.
    fn wall_follow_chunk(
        &mut self,
        obs: &ObservationFrame,
        blocked_centers: &[Vec2],
    ) -> Result<ActionChunk> {
        let patch = &obs.local_occupancy;
        let mut sim_pos = obs.pose.xy();
        let mut steps = Vec::new();
        let n = self.params.candidate_headings;
        let increment = std::f64::consts::TAU / n as f64;

        let mut follow = match self.state.follow_heading {
            Some(h) => h,
            None => {
                let Some(nearest) = nearest_blocked(blocked_centers, sim_pos) else {
                    // Nothing to follow: report an empty chunk and let the
                    // caller's stall handling take over.
                    return ActionChunk::new(Vec::new(), false, self.params.horizon);
                };
                let inward = nearest.sub(sim_pos);
                // The tangent with the wall on the right-hand side, snapped
                // onto the candidate direction lattice.
                let tangent = Vec2::new(-inward.y, inward.x).angle();
                (tangent / increment).round() * increment
            }
        };

        'sim: for _ in 0..self.params.horizon {
            let quarter = (n / 4) as i64;
            for turn in -quarter..(n as i64 - quarter) {
                let dir = wrap_angle(follow + turn as f64 * increment);
                let unit = Vec2::from_angle(dir);
                for len in self.params.step_lengths {
                    let end = sim_pos.add(unit.scale(len));
                    if !segment_collides(patch, sim_pos, end, self.params.inflation_radius) {
                        steps.push(ActionStep {
                            displacement: unit.scale(len),
                            heading_delta: 0.0,
                        });
                        sim_pos = end;
                        follow = dir;
                        continue 'sim;
                    }
                }
            }
            break; // no feasible direction at all
        }
        self.state.follow_heading = Some(follow);
        let mut heading = obs.pose.yaw;
        let steps = steps
            .into_iter()
            .map(|s| {
                let step = reclamp_heading(s, heading);
                heading = wrap_angle(heading + step.heading_delta);
                step
            })
            .collect();
        ActionChunk::new(steps, false, self.params.horizon)
    }

    /// The collision-free candidate whose direction is angularly closest
    /// to `desired_dir`, preferring the longer step at equal direction.
    fn candidate_nearest_heading(
        &self,
        patch: &OccupancyPatch,
        from: Vec2,
        desired_dir: f64,
    ) -> Option<ActionStep> {
        let mut best: Option<(f64, ActionStep)> = None;
        for k in 0..self.params.candidate_headings {
            let dir = k as f64 * std::f64::consts::TAU / self.params.candidate_headings as f64;
            let gap = angle_diff(dir, desired_dir).abs();
            let unit = Vec2::from_angle(dir);
            for len in self.params.step_lengths {
                let end = from.add(unit.scale(len));
                if segment_collides(patch, from, end, self.params.inflation_radius) {
                    continue;
                }
                if best.as_ref().is_none_or(|(g, _)| gap + 1e-12 < *g) {
                    best = Some((gap, ActionStep { displacement: unit.scale(len), heading_delta: 0.0 }));
                }
                break; // longer length accepted; skip the shorter one
            }
        }
        best.map(|(_, step)| step)
    }

    fn fully_enclosed(&self, patch: &OccupancyPatch, from: Vec2) -> bool {
        for k in 0..self.params.candidate_headings {
            let dir = k as f64 * std::f64::consts::TAU / self.params.candidate_headings as f64;
            let unit = Vec2::from_angle(dir);
            for len in self.params.step_lengths {
                let end = from.add(unit.scale(len));
                if !segment_collides(patch, from, end, self.params.inflation_radius) {
                    return false;
                }
            }
        }
        true
    }

    /// Movement-free chunk signalling a blocked edge to the episode loop.
    fn rotate_in_place(&self, _yaw: f64) -> Result<ActionChunk> {
        let steps = vec![
            ActionStep {
                displacement: Vec2::ZERO,
                heading_delta: MAX_HEADING_DELTA,
            };
            ENCLOSED_ROTATION_STEPS.min(self.params.horizon)
        ];
        ActionChunk::new(steps, false, self.params.horizon)
    }
}

/// The (similarity, bearing, range) of the observation detection that
/// best matches any goal detection of the same category above `tau`.
/// Near-ties in similarity (ubiquitous at zero noise, where every shared
/// instance matches exactly) break toward the instance the goal
/// observation stands closest to — the most location-identifying landmark.
fn best_instance_match(
    obs: &ObservationFrame,
    goal: &ObservationFrame,
    tau: f64,
) -> Option<(f64, f64, f64)> {
    let mut best: Option<(f64, f64, f64, f64)> = None; // (sim, goal range, bearing, range)
    for det in &obs.detections {
        for goal_det in &goal.detections {
            if det.category != goal_det.category {
                continue;
            }
            let sim = cosine_similarity(&det.embedding, &goal_det.embedding);
            if sim <= tau {
                continue;
            }
            let better = match &best {
                None => true,
                Some((s, gr, _, _)) => {
                    sim > s + 1e-9 || (sim >= s - 1e-9 && goal_det.range < *gr - 1e-12)
                }
            };
            if better {
                best = Some((sim, goal_det.range, det.bearing, det.range));
            }
        }
    }
    best.map(|(sim, _, bearing, range)| (sim, bearing, range))
}

/// Turn toward the motion direction, clamped to the per-step bound.
fn reclamp_heading(step: ActionStep, current_heading: f64) -> ActionStep {
    if step.displacement.norm() == 0.0 {
        return step;
    }
    let desired = step.displacement.angle();
    let delta = angle_diff(desired, current_heading)
        .clamp(-MAX_HEADING_DELTA, MAX_HEADING_DELTA);
    ActionStep {
        displacement: step.displacement,
        heading_delta: delta,
    }
}

/// World-frame centers of the blocked cells of a patch.
fn blocked_cell_centers(patch: &OccupancyPatch) -> Vec<Vec2> {
    let mut centers = Vec::new();
    for row in 0..patch.side {
        for col in 0..patch.side {
            if patch.is_blocked(row, col) {
                centers.push(Vec2::new(
                    patch.origin.x + (col as f64 + 0.5) * patch.resolution,
                    patch.origin.y + (row as f64 + 0.5) * patch.resolution,
                ));
            }
        }
    }
    centers
}

fn nearest_blocked(blocked_centers: &[Vec2], from: Vec2) -> Option<Vec2> {
    blocked_centers
        .iter()
        .copied()
        .min_by(|a, b| a.distance(from).total_cmp(&b.distance(from)))
}

/// Advance the followed wall cell along the boundary being traced: stay
/// within the previous cell's neighborhood, preferring whichever of those
/// cells is nearest the agent, so the trace slides along one wall instead
/// of teleporting to whatever is momentarily closest. Falls back to the
/// globally nearest cell when the trace has no usable continuation (or no
/// wall was being followed yet).
fn next_followed_wall(
    blocked_centers: &[Vec2],
    previous: Option<Vec2>,
    from: Vec2,
    continuity_radius: f64,
) -> Option<Vec2> {
    if let Some(prev) = previous {
        let continuation = blocked_centers
            .iter()
            .copied()
            .filter(|c| c.distance(prev) <= continuity_radius)
            .min_by(|a, b| a.distance(from).total_cmp(&b.distance(from)));
        if continuation.is_some() {
            return continuation;
        }
    }
    nearest_blocked(blocked_centers, from)
}

/// Penalty that ramps up as the endpoint shaves obstacle cells.
fn clearance_penalty(blocked_centers: &[Vec2], at: Vec2, resolution: f64) -> f64 {
    let Some(nearest) = nearest_blocked(blocked_centers, at) else {
        return 0.0;
    };
    // Distance to the cell edge, approximated from the center.
    let clearance = (nearest.distance(at) - 0.5 * resolution).max(0.0);
    CLEARANCE_WEIGHT * (SAFE_CLEARANCE - clearance).max(0.0)
}

/// Swept collision test: sample the segment densely and probe a disk of
/// the inflation radius at every sample. Leaving the patch counts as a
/// collision (the patch reports unknown space as blocked). The start
/// point itself is not probed — it is the agent's given position, and an
/// agent standing inside the inflation margin must still be able to move.
pub fn segment_collides(
    patch: &OccupancyPatch,
    from: Vec2,
    to: Vec2,
    inflation: f64,
) -> bool {
    let length = from.distance(to);
    let samples = (length / (patch.resolution * 0.25)).ceil().max(1.0) as usize;
    for i in 1..=samples {
        let t = i as f64 / samples as f64;
        let point = from.add(to.sub(from).scale(t));
        if point_probe_collides(patch, point, inflation) {
            return true;
        }
    }
    false
}

fn point_probe_collides(patch: &OccupancyPatch, point: Vec2, inflation: f64) -> bool {
    if patch.is_blocked_at(point) {
        return true;
    }
    if inflation <= 0.0 {
        return false;
    }
    for ring in [0.5 * inflation, inflation] {
        for k in 0..8 {
            let theta = k as f64 * std::f64::consts::TAU / 8.0;
            let probe = point.add(Vec2::from_angle(theta).scale(ring));
            if patch.is_blocked_at(probe) {
                return true;
            }
        }
    }
    false
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::{Embedding, TokenGrid};
    use crate::geometry::Pose;
    use crate::policy::adapter::AdapterParams;
    use crate::simworld::Detection;
    use std::collections::VecDeque;

    /// A hand-drawn static world for controller tests: '#' cells are
    /// blocked; the policy sees it through a re-rendered local patch.
    struct GridWorld {
        rows: usize,
        cols: usize,
        blocked: Vec<bool>,
        resolution: f64,
    }

    impl GridWorld {
        fn parse(art: &[&str]) -> GridWorld {
            let rows = art.len();
            let cols = art[0].len();
            // Row 0 of the art is drawn at the TOP, but row 0 of the grid
            // has the smallest y; flip so the art reads naturally.
            let mut blocked = vec![false; rows * cols];
            for (art_row, line) in art.iter().enumerate() {
                assert_eq!(line.len(), cols, "ragged fixture art");
                let grid_row = rows - 1 - art_row;
                for (col, ch) in line.chars().enumerate() {
                    blocked[grid_row * cols + col] = ch == '#';
                }
            }
            GridWorld {
                rows,
                cols,
                blocked,
                resolution: 0.25,
            }
        }

        fn is_blocked_at(&self, p: Vec2) -> bool {
            let col = (p.x / self.resolution).floor();
            let row = (p.y / self.resolution).floor();
            if row < 0.0 || col < 0.0 || row >= self.rows as f64 || col >= self.cols as f64 {
                return true;
            }
            self.blocked[row as usize * self.cols + col as usize]
        }

        /// Local patch centered on the agent, mirroring the simulator's
        /// convention (cells outside the world read as blocked).
        fn patch_at(&self, center: Vec2, side: usize) -> OccupancyPatch {
            assert!(side % 2 == 1);
            let half = side / 2;
            let center_col = (center.x / self.resolution).floor() as isize;
            let center_row = (center.y / self.resolution).floor() as isize;
            let origin = Vec2::new(
                (center_col - half as isize) as f64 * self.resolution,
                (center_row - half as isize) as f64 * self.resolution,
            );
            let mut blocked = vec![false; side * side];
            for r in 0..side {
                for c in 0..side {
                    let world_row = center_row - half as isize + r as isize;
                    let world_col = center_col - half as isize + c as isize;
                    blocked[r * side + c] = if world_row < 0
                        || world_col < 0
                        || world_row >= self.rows as isize
                        || world_col >= self.cols as isize
                    {
                        true
                    } else {
                        self.blocked[world_row as usize * self.cols + world_col as usize]
                    };
                }
            }
            OccupancyPatch {
                side,
                resolution: self.resolution,
                origin,
                blocked,
            }
        }

        /// Breadth-first reachability between cells: the oracle that a
        /// fixture actually has an exit before we demand an escape.
        fn reachable(&self, from: Vec2, to: Vec2) -> bool {
            let cell = |p: Vec2| {
                (
                    (p.y / self.resolution).floor() as usize,
                    (p.x / self.resolution).floor() as usize,
                )
            };
            let (sr, sc) = cell(from);
            let (tr, tc) = cell(to);
            let mut seen = vec![false; self.rows * self.cols];
            let mut queue = VecDeque::from([(sr, sc)]);
            seen[sr * self.cols + sc] = true;
            while let Some((r, c)) = queue.pop_front() {
                if (r, c) == (tr, tc) {
                    return true;
                }
                let mut push = |r: usize, c: usize| {
                    if r < self.rows && c < self.cols && !self.blocked[r * self.cols + c]
                        && !seen[r * self.cols + c]
                    {
                        seen[r * self.cols + c] = true;
                        queue.push_back((r, c));
                    }
                };
                if r > 0 {
                    push(r - 1, c);
                }
                push(r + 1, c);
                if c > 0 {
                    push(r, c - 1);
                }
                push(r, c + 1);
            }
            false
        }
    }

    fn observation_at(world: &GridWorld, pos: Vec2, yaw: f64) -> ObservationFrame {
        ObservationFrame {
            pose: Pose::planar(pos.x, pos.y, yaw).unwrap(),
            frame_embedding: Embedding::normalize(&[1.0, 0.0]).unwrap(),
            geometry_grid: TokenGrid::zeros(8, 8, 16),
            detections: Vec::new(),
            local_occupancy: world.patch_at(pos, 17),
        }
    }

    /// Drive the policy in `world` toward `target` until `done` fires or
    /// the step budget runs out; asserts collision-freedom throughout.
    fn drive(
        world: &GridWorld,
        start: Vec2,
        target: Vec2,
        max_steps: usize,
        done: impl Fn(Vec2) -> bool,
    ) -> (Vec2, usize, bool) {
        let mut policy = LocalPolicy::new(ControlParams::default()).unwrap();
        let mut pos = start;
        let mut yaw = 0.0;
        let mut steps = 0;
        while steps < max_steps {
            if done(pos) {
                return (pos, steps, true);
            }
            let obs = observation_at(world, pos, yaw);
            let chunk = policy.act_point_goal(&obs, target).unwrap();
            if chunk.steps().is_empty() {
                steps += 1; // station-keeping call still consumes time
                continue;
            }
            for step in chunk.steps() {
                let next = pos.add(step.displacement);
                assert!(
                    !world.is_blocked_at(next),
                    "policy stepped into a wall at ({:.2}, {:.2})",
                    next.x,
                    next.y
                );
                pos = next;
                yaw = wrap_angle(yaw + step.heading_delta);
                steps += 1;
                if done(pos) {
                    return (pos, steps, true);
                }
                if steps >= max_steps {
                    return (pos, steps, done(pos));
                }
            }
        }
        (pos, steps, done(pos))
    }

    fn open_world() -> GridWorld {
        GridWorld::parse(&[
            "....................",
            "....................",
            "....................",
            "....................",
            "....................",
            "....................",
            "....................",
            "....................",
            "....................",
            "....................",
            "....................",
            "....................",
            "....................",
            "....................",
            "....................",
            "....................",
            "....................",
            "....................",
            "....................",
            "....................",
        ])
    }

    #[test]
    fn free_space_reaches_a_one_meter_target() {
        let world = open_world();
        let start = Vec2::new(2.0, 2.0);
        let target = Vec2::new(3.0, 2.0);
        let mut policy = LocalPolicy::new(ControlParams::default()).unwrap();
        let obs = observation_at(&world, start, 0.0);
        let chunk = policy.act_point_goal(&obs, target).unwrap();

        let net = chunk.net_displacement();
        // Commanded distance is 1 m; the chunk must cover at least 0.9 of it.
        assert!(net.x >= 0.9, "net progress along target axis {:.3}", net.x);
        assert!(net.y.abs() < 0.2, "needless lateral drift {:.3}", net.y);
        assert!(!chunk.is_stop());
        for step in chunk.steps() {
            assert!(step.displacement.norm() <= MAX_STEP_LENGTH + 1e-12);
            assert!(step.heading_delta.abs() <= MAX_HEADING_DELTA + 1e-12);
        }
    }

    #[test]
    fn arrival_tolerance_holds_station() {
        let world = open_world();
        let start = Vec2::new(2.0, 2.0);
        let mut policy = LocalPolicy::new(ControlParams::default()).unwrap();
        let obs = observation_at(&world, start, 0.0);
        let chunk = policy.act_point_goal(&obs, start).unwrap();
        assert!(chunk.steps().is_empty());
        assert!(!chunk.is_stop());
    }

    #[test]
    fn wall_ahead_yields_lateral_first_step() {
        // Wall directly ahead (east of the agent), target beyond it.
        let world = GridWorld::parse(&[
            "....................",
            "..........#.........",
            "..........#.........",
            "..........#.........",
            "..........#.........",
            "..........#.........",
            "..........#.........",
            "....................",
        ]);
        let start = Vec2::new(2.3, 1.1); // just west of the wall column
        let target = Vec2::new(3.5, 1.1); // east of the wall
        let mut policy = LocalPolicy::new(ControlParams::default()).unwrap();
        let obs = observation_at(&world, start, 0.0);
        let chunk = policy.act_point_goal(&obs, target).unwrap();

        let first = chunk.steps().first().expect("non-empty chunk");
        assert!(
            first.displacement.y.abs() > 1e-9,
            "first action must carry a lateral component, got {:?}",
            first.displacement
        );
        // Replay the chunk against the true world: zero collisions.
        let mut pos = start;
        for step in chunk.steps() {
            pos = pos.add(step.displacement);
            assert!(!world.is_blocked_at(pos));
        }
    }

    #[test]
    fn c_trap_escape_within_budget() {
        // A C-shaped trap opening west; the target lies east, behind the
        // closed side. Greedy progress dead-ends on the inner wall, the
        // stuck counter fills, and wall-following walks out the opening.
        let world = GridWorld::parse(&[
            "....................",
            "....................",
            "......#######.......",
            "............#.......",
            "............#.......",
            "............#.......",
            "......#######.......",
            "....................",
            "....................",
        ]);
        // Inside the C, near its closed (east) wall.
        let start = Vec2::new(2.6, 1.125);
        let target = Vec2::new(4.125, 1.125);
        assert!(
            world.reachable(start, target),
            "fixture oracle: exit must exist"
        );

        let (pos, steps, done) = drive(&world, start, target, 150, |p| {
            p.distance(target) <= 0.25
        });
        assert!(
            done,
            "agent stuck after {steps} steps at ({:.2}, {:.2})",
            pos.x,
            pos.y
        );
    }

    #[test]
    fn fully_enclosed_emits_rotation_only_chunk() {
        let world = GridWorld::parse(&[
            "#####",
            "#####",
            "##.##",
            "#####",
            "#####",
        ]);
        let start = Vec2::new(0.625, 0.625); // center cell
        let target = Vec2::new(10.0, 0.625);
        let mut policy = LocalPolicy::new(ControlParams::default()).unwrap();
        let obs = observation_at(&world, start, 0.0);
        let chunk = policy.act_point_goal(&obs, target).unwrap();
        assert!(chunk.is_rotation_only(), "expected rotate-in-place signal");
        assert_eq!(chunk.net_displacement(), Vec2::ZERO);
    }

    #[test]
    fn chunks_are_deterministic() {
        let world = GridWorld::parse(&[
            "............",
            "....##......",
            "....##......",
            "............",
        ]);
        let start = Vec2::new(0.6, 0.6);
        let target = Vec2::new(2.5, 0.6);
        let run = || {
            let mut policy = LocalPolicy::new(ControlParams::default()).unwrap();
            let obs = observation_at(&world, start, 0.0);
            policy.act_point_goal(&obs, target).unwrap()
        };
        assert_eq!(run(), run());
    }

    fn image_frame(
        world: &GridWorld,
        pos: Vec2,
        yaw: f64,
        embedding: &[f64],
        detections: Vec<Detection>,
    ) -> ObservationFrame {
        ObservationFrame {
            pose: Pose::planar(pos.x, pos.y, yaw).unwrap(),
            frame_embedding: Embedding::normalize(embedding).unwrap(),
            geometry_grid: TokenGrid::zeros(8, 8, 16),
            detections,
            local_occupancy: world.patch_at(pos, 17),
        }
    }

    fn adapter() -> AdapterParams {
        AdapterParams::seeded(16, 32, 32, 11).unwrap()
    }

    #[test]
    fn identical_observation_stops_immediately() {
        let world = open_world();
        let mut frame = image_frame(&world, Vec2::new(2.0, 2.0), 0.0, &[0.4, 0.6, 0.2], vec![]);
        // A rendered geometry grid is never all-zero; give the fixture
        // frame some structure so the fused-alignment half is defined.
        let data: Vec<f64> = (0..8 * 8 * 16).map(|i| 0.05 * (i % 7) as f64).collect();
        frame.geometry_grid = TokenGrid::new(8, 8, 16, data).unwrap();
        let mut policy = LocalPolicy::new(ControlParams::default()).unwrap();
        let chunk = policy.act_image_goal(&frame, &frame, &adapter()).unwrap();
        assert!(chunk.is_stop());
        assert!(chunk.steps().is_empty());
    }

    #[test]
    fn matched_instance_at_thirty_degrees_steers_toward_it() {
        let world = open_world();
        let instance = Embedding::normalize(&[0.2, 0.9, 0.1]).unwrap();
        let obs = image_frame(
            &world,
            Vec2::new(2.0, 2.0),
            0.0,
            &[1.0, 0.0, 0.0],
            vec![Detection {
                category: 3,
                embedding: instance.clone(),
                bearing: 30f64.to_radians(),
                range: 2.0,
            }],
        );
        let goal = image_frame(
            &world,
            Vec2::new(4.0, 3.5),
            0.0,
            &[0.0, 1.0, 0.0], // dissimilar frame: alignment below stop
            vec![Detection {
                category: 3,
                embedding: instance,
                bearing: 0.0,
                range: 0.5,
            }],
        );
        let mut policy = LocalPolicy::new(ControlParams::default()).unwrap();
        let chunk = policy.act_image_goal(&obs, &goal, &adapter()).unwrap();
        assert!(!chunk.is_stop());
        let first = chunk.steps().first().expect("steering chunk");
        assert!(
            first.heading_delta > 0.0,
            "expected a positive turn toward bearing +30 degrees, got {:?}",
            first
        );
        // Motion direction matches the instance bearing closely.
        let dir = first.displacement.angle();
        assert!(angle_diff(dir, 30f64.to_radians()).abs() < 0.2, "dir {dir}");
    }

    #[test]
    fn matched_instance_in_stop_range_stops() {
        let world = open_world();
        let instance = Embedding::normalize(&[0.5, 0.5, 0.5]).unwrap();
        let obs = image_frame(
            &world,
            Vec2::new(2.0, 2.0),
            0.0,
            &[1.0, 0.0, 0.0],
            vec![Detection {
                category: 1,
                embedding: instance.clone(),
                bearing: 0.0,
                range: 0.5,
            }],
        );
        let goal = image_frame(
            &world,
            Vec2::new(2.5, 2.0),
            0.0,
            &[0.0, 1.0, 0.0],
            vec![Detection {
                category: 1,
                embedding: instance,
                bearing: 0.0,
                range: 0.4,
            }],
        );
        let mut policy = LocalPolicy::new(ControlParams::default()).unwrap();
        let chunk = policy.act_image_goal(&obs, &goal, &adapter()).unwrap();
        assert!(chunk.is_stop(), "0.5 m matched instance must stop");
    }

    #[test]
    fn gradient_steering_reverses_when_alignment_falls() {
        let world = open_world();
        let goal = image_frame(&world, Vec2::new(6.0, 2.0), 0.0, &[0.0, 1.0, 0.0], vec![]);
        let mut policy = LocalPolicy::new(ControlParams::default()).unwrap();

        // First call from (2, 2): no history, no detections — the policy
        // still produces some exploratory chunk.
        let obs1 = image_frame(&world, Vec2::new(2.0, 2.0), 0.0, &[0.8, 0.6, 0.0], vec![]);
        let _ = policy.act_image_goal(&obs1, &goal, &adapter()).unwrap();

        // Second call from further west with WORSE alignment: the
        // gradient estimate must now point back east.
        let obs2 = image_frame(&world, Vec2::new(1.5, 2.0), 0.0, &[1.0, 0.0, 0.0], vec![]);
        let chunk = policy.act_image_goal(&obs2, &goal, &adapter()).unwrap();
        let net = chunk.net_displacement();
        assert!(
            net.x > 0.0,
            "alignment dropped moving west; expected eastward correction, got {:?}",
            net
        );
    }

    #[test]
    fn image_mode_is_deterministic() {
        let world = open_world();
        let goal = image_frame(&world, Vec2::new(5.0, 2.0), 0.0, &[0.2, 0.9, 0.1], vec![]);
        let run = || {
            let mut policy = LocalPolicy::new(ControlParams::default()).unwrap();
            let obs =
                image_frame(&world, Vec2::new(2.0, 2.0), 0.3, &[0.9, 0.2, 0.1], vec![]);
            policy.act_image_goal(&obs, &goal, &adapter()).unwrap()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn chunk_validation_rejects_out_of_bounds_steps() {
        let too_long = ActionStep {
            displacement: Vec2::new(0.3, 0.0),
            heading_delta: 0.0,
        };
        assert!(ActionChunk::new(vec![too_long], false, 8).is_err());

        let sharp_turn = ActionStep {
            displacement: Vec2::new(0.1, 0.0),
            heading_delta: 1.0,
        };
        assert!(ActionChunk::new(vec![sharp_turn], false, 8).is_err());

        let ok = ActionStep {
            displacement: Vec2::new(0.2, 0.1),
            heading_delta: 0.3,
        };
        assert!(ActionChunk::new(vec![ok; 9], false, 8).is_err());
        assert!(ActionChunk::new(vec![ok; 8], false, 8).is_ok());
    }

    #[test]
    fn emitted_actions_never_intersect_patch_obstacles() {
        // Sweep several fixtures; verify the collision-freedom invariant
        // against each patch directly.
        let fixtures: Vec<(GridWorld, Vec2, Vec2)> = vec![
            (open_world(), Vec2::new(2.0, 2.0), Vec2::new(4.0, 3.0)),
            (
                GridWorld::parse(&[
                    "................",
                    "......####......",
                    "......#..#......",
                    "................",
                ]),
                Vec2::new(0.6, 0.6),
                Vec2::new(3.5, 0.6),
            ),
            (
                GridWorld::parse(&[
                    "########",
                    "#......#",
                    "#.####.#",
                    "#.#..#.#",
                    "#.#..#.#",
                    "#....#.#",
                    "########",
                ]),
                Vec2::new(0.875, 0.375),
                Vec2::new(1.6, 1.1),
            ),
        ];
        for (world, start, target) in fixtures {
            let mut policy = LocalPolicy::new(ControlParams::default()).unwrap();
            let mut pos = start;
            let mut yaw = 0.0;
            for _ in 0..40 {
                let obs = observation_at(&world, pos, yaw);
                let chunk = policy.act_point_goal(&obs, target).unwrap();
                let patch = world.patch_at(pos, 17);
                let mut sim = pos;
                for step in chunk.steps() {
                    let next = sim.add(step.displacement);
                    assert!(
                        !segment_collides(&patch, sim, next, 0.0),
                        "emitted action crosses a blocked cell"
                    );
                    sim = next;
                }
                for step in chunk.steps() {
                    pos = pos.add(step.displacement);
                    yaw = wrap_angle(yaw + step.heading_delta);
                }
                if chunk.steps().is_empty() {
                    break;
                }
            }
        }
    }
}

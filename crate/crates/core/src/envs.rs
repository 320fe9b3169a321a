//! Deterministic goal-conditioned kinematic environments.
//!
//! Three toy manipulation tasks (reach, push, pick-and-place) with the sparse
//! reward and fixed-horizon episode structure of goal-reaching benchmarks:
//! reward is 0 when the achieved goal is within a distance threshold of the
//! desired goal and -1 otherwise, episodes end only at the step limit, and the
//! reward is a pure function of `(achieved, desired)` so transitions can be
//! relabeled in hindsight.
//!
//! There is no physics: the gripper is a point moved by a velocity command,
//! the object is dragged while the gripper is within a contact radius (push)
//! or follows the gripper after a grasp (pick-and-place).

use rand::distributions::{Distribution, Uniform};
use rand::rngs::StdRng;
use rand::SeedableRng;
use serde::{Deserialize, Serialize};
use std::io::{BufRead, Write};

use crate::error::{Error, Result};

/// Goals are 3D positions.
pub const GOAL_DIM: usize = 3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    Reach,
    Push,
    PickAndPlace,
}

impl Task {
    pub fn name(&self) -> &'static str {
        match self {
            Task::Reach => "reach",
            Task::Push => "push",
            Task::PickAndPlace => "pick_and_place",
        }
    }

    pub fn parse(s: &str) -> Result<Task> {
        match s {
            "reach" => Ok(Task::Reach),
            "push" => Ok(Task::Push),
            "pick_and_place" | "pick-and-place" | "pick" => Ok(Task::PickAndPlace),
            other => Err(Error::InvalidArgument(format!(
                "unknown task '{other}' (expected reach, push, or pick_and_place)"
            ))),
        }
    }
}

/// Static description of one environment instance.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnvSpec {
    pub task: Task,
    pub workspace_min: [f64; GOAL_DIM],
    pub workspace_max: [f64; GOAL_DIM],
    pub max_episode_steps: usize,
    /// Distance at or under which the goal counts as reached.
    pub success_threshold: f64,
    /// Meters of gripper travel per unit action component per step.
    pub action_scale: f64,
    /// Push: the object is dragged while within this distance of the gripper.
    pub contact_radius: f64,
    /// Pick-and-place: grasping requires the gripper within this distance.
    pub grasp_radius: f64,
}

impl EnvSpec {
    /// Desk-scale defaults. Reach uses the unit box; push and pick-and-place
    /// use a centered 0.4-wide box so random exploration finds the object
    /// within a short horizon.
    pub fn new(task: Task) -> EnvSpec {
        let (lo, hi) = match task {
            Task::Reach => (0.0, 1.0),
            Task::Push | Task::PickAndPlace => (0.3, 0.7),
        };
        EnvSpec {
            task,
            workspace_min: [lo; GOAL_DIM],
            workspace_max: [hi; GOAL_DIM],
            max_episode_steps: 30,
            success_threshold: 0.05,
            action_scale: 0.05,
            contact_radius: 0.05,
            grasp_radius: 0.05,
        }
    }

    /// 3 velocity components, plus a gripper command for object tasks.
    pub fn action_dim(&self) -> usize {
        match self.task {
            Task::Reach => 3,
            Task::Push | Task::PickAndPlace => 4,
        }
    }

    /// Gripper position, plus object position, object-minus-gripper offset,
    /// and per-step object velocity for object tasks.
    pub fn observation_dim(&self) -> usize {
        match self.task {
            Task::Reach => 3,
            Task::Push | Task::PickAndPlace => 12,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let mut violations = Vec::new();
        self.collect_violations(&mut violations);
        if violations.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidConfig(violations))
        }
    }

    pub(crate) fn collect_violations(&self, out: &mut Vec<String>) {
        if self.max_episode_steps < 1 {
            out.push("env.max_episode_steps must be >= 1".into());
        }
        if !(self.success_threshold > 0.0) {
            out.push("env.success_threshold must be > 0".into());
        }
        if !(self.action_scale > 0.0) {
            out.push("env.action_scale must be > 0".into());
        }
        if !(self.contact_radius > 0.0) {
            out.push("env.contact_radius must be > 0".into());
        }
        if !(self.grasp_radius > 0.0) {
            out.push("env.grasp_radius must be > 0".into());
        }
        for d in 0..GOAL_DIM {
            if !(self.workspace_min[d] < self.workspace_max[d]) {
                out.push(format!("env.workspace must have min < max in axis {d}"));
                break;
            }
        }
    }

    fn center(&self) -> [f64; GOAL_DIM] {
        let mut c = [0.0; GOAL_DIM];
        for d in 0..GOAL_DIM {
            c[d] = 0.5 * (self.workspace_min[d] + self.workspace_max[d]);
        }
        c
    }

    fn clamp_to_workspace(&self, p: &mut [f64; GOAL_DIM]) {
        for d in 0..GOAL_DIM {
            p[d] = p[d].clamp(self.workspace_min[d], self.workspace_max[d]);
        }
    }
}

/// What the agent (and HER) sees after a step.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GoalObservation {
    pub observation: Vec<f64>,
    pub achieved_goal: Vec<f64>,
    pub desired_goal: Vec<f64>,
}

/// One environment step, the unit stored and sampled.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub state: GoalObservation,
    pub action: Vec<f64>,
    pub reward: f64,
    pub next_state: GoalObservation,
    pub done: bool,
    pub success: bool,
}

/// Sparse goal-reaching reward: 0 within `threshold` (inclusive), else -1.
///
/// Pure function of its arguments, usable for hindsight relabeling.
pub fn compute_reward(achieved: &[f64], desired: &[f64], threshold: f64) -> Result<f64> {
    if achieved.len() != desired.len() {
        return Err(Error::InvalidArgument(format!(
            "achieved goal has length {}, desired {}",
            achieved.len(),
            desired.len()
        )));
    }
    if !(threshold > 0.0) {
        return Err(Error::InvalidArgument(format!("threshold must be > 0, got {threshold}")));
    }
    let dist2: f64 = achieved
        .iter()
        .zip(desired)
        .map(|(a, d)| (a - d) * (a - d))
        .sum();
    if dist2.sqrt() <= threshold {
        Ok(0.0)
    } else {
        Ok(-1.0)
    }
}

/// A running episode. Value object: cloning forks the trajectory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ToyEnv {
    spec: EnvSpec,
    gripper: [f64; GOAL_DIM],
    object: Option<[f64; GOAL_DIM]>,
    object_vel: [f64; GOAL_DIM],
    goal: [f64; GOAL_DIM],
    grasped: bool,
    steps_taken: usize,
    done: bool,
}

impl ToyEnv {
    /// Starts an episode: gripper at the workspace center, object (for object
    /// tasks) and goal sampled uniformly in the workspace, re-sampling the
    /// goal until it starts more than `success_threshold` from the achieved
    /// goal. Identical `(spec, seed)` give identical episodes.
    pub fn reset(spec: &EnvSpec, seed: u64) -> (ToyEnv, GoalObservation) {
        let mut rng = StdRng::seed_from_u64(seed);
        let gripper = spec.center();
        let object = match spec.task {
            Task::Reach => None,
            Task::Push | Task::PickAndPlace => Some(sample_point(spec, &mut rng)),
        };
        let initial_achieved = object.unwrap_or(gripper);
        let goal = loop {
            let g = sample_point(spec, &mut rng);
            if distance(&g, &initial_achieved) > spec.success_threshold {
                break g;
            }
        };
        let env = ToyEnv {
            spec: spec.clone(),
            gripper,
            object,
            object_vel: [0.0; GOAL_DIM],
            goal,
            grasped: false,
            steps_taken: 0,
            done: false,
        };
        let obs = env.observe();
        (env, obs)
    }

    pub fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    pub fn done(&self) -> bool {
        self.done
    }

    pub fn steps_taken(&self) -> usize {
        self.steps_taken
    }

    pub fn observe(&self) -> GoalObservation {
        let mut observation = self.gripper.to_vec();
        if let Some(obj) = self.object {
            observation.extend_from_slice(&obj);
            for d in 0..GOAL_DIM {
                observation.push(obj[d] - self.gripper[d]);
            }
            observation.extend_from_slice(&self.object_vel);
        }
        let achieved_goal = self.object.unwrap_or(self.gripper).to_vec();
        GoalObservation {
            observation,
            achieved_goal,
            desired_goal: self.goal.to_vec(),
        }
    }

    /// Advances one step. Action components are clamped to `[-1, 1]`; the
    /// gripper moves by `action_scale * action` and stays inside the
    /// workspace. Episodes end only at the step limit.
    pub fn step(&mut self, action: &[f64]) -> Result<Transition> {
        if self.done {
            return Err(Error::ContractViolation(
                "step called on a finished episode".into(),
            ));
        }
        if action.len() != self.spec.action_dim() {
            return Err(Error::InvalidArgument(format!(
                "action length {} does not match action dim {}",
                action.len(),
                self.spec.action_dim()
            )));
        }
        if action.iter().any(|a| !a.is_finite()) {
            return Err(Error::NumericInput("action contains NaN or infinity".into()));
        }
        let action: Vec<f64> = action.iter().map(|a| a.clamp(-1.0, 1.0)).collect();
        let state = self.observe();

        let prev_gripper = self.gripper;
        for d in 0..GOAL_DIM {
            self.gripper[d] += self.spec.action_scale * action[d];
        }
        self.spec.clamp_to_workspace(&mut self.gripper);
        let displacement = [
            self.gripper[0] - prev_gripper[0],
            self.gripper[1] - prev_gripper[1],
            self.gripper[2] - prev_gripper[2],
        ];

        if let Some(mut obj) = self.object {
            let prev_obj = obj;
            match self.spec.task {
                Task::Push => {
                    if distance(&prev_gripper, &prev_obj) <= self.spec.contact_radius {
                        for d in 0..GOAL_DIM {
                            obj[d] += displacement[d];
                        }
                        self.spec.clamp_to_workspace(&mut obj);
                    }
                }
                Task::PickAndPlace => {
                    if !self.grasped
                        && distance(&prev_gripper, &prev_obj) <= self.spec.grasp_radius
                        && action[3] > 0.5
                    {
                        self.grasped = true;
                    }
                    if self.grasped {
                        obj = self.gripper;
                    }
                }
                Task::Reach => unreachable!("reach has no object"),
            }
            for d in 0..GOAL_DIM {
                self.object_vel[d] = obj[d] - prev_obj[d];
            }
            self.object = Some(obj);
        }

        self.steps_taken += 1;
        self.done = self.steps_taken >= self.spec.max_episode_steps;

        let next_state = self.observe();
        let reward = compute_reward(
            &next_state.achieved_goal,
            &next_state.desired_goal,
            self.spec.success_threshold,
        )?;
        Ok(Transition {
            state,
            action,
            reward,
            next_state,
            done: self.done,
            success: reward == 0.0,
        })
    }
}

fn sample_point(spec: &EnvSpec, rng: &mut StdRng) -> [f64; GOAL_DIM] {
    let mut p = [0.0; GOAL_DIM];
    for d in 0..GOAL_DIM {
        p[d] = Uniform::new_inclusive(spec.workspace_min[d], spec.workspace_max[d]).sample(rng);
    }
    p
}

fn distance(a: &[f64; GOAL_DIM], b: &[f64; GOAL_DIM]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Writes one transition per line as JSON (debugging dump format).
pub fn write_episode_jsonl<W: Write>(episode: &[Transition], mut w: W) -> Result<()> {
    for t in episode {
        serde_json::to_writer(&mut w, t)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_episode_jsonl<R: BufRead>(r: R) -> Result<Vec<Transition>> {
    let mut out = Vec::new();
    for line in r.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line)?);
    }
    Ok(out)
}

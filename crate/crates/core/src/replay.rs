//! Episode replay storage with hindsight goal relabeling at sample time.
//!
//! Episodes are stored whole (fixed length) so a sampled transition can be
//! relabeled with an achieved goal from later in the same episode — the
//! "future" strategy. Relabeling happens on the sampled copies; the buffer is
//! never mutated by sampling.

use rand::Rng;
use std::collections::VecDeque;

use crate::envs::{compute_reward, GoalObservation, Transition};
use crate::error::{Error, Result};

/// Ring buffer over whole episodes, FIFO eviction.
#[derive(Clone, Debug)]
pub struct ReplayBuffer {
    capacity: usize,
    episode_len: usize,
    success_threshold: f64,
    episodes: VecDeque<Vec<Transition>>,
}

/// A sampled batch as parallel arrays. `desired_goals` holds the post-relabel
/// goal, which also replaces the goal inside `states`/`next_states`.
#[derive(Clone, Debug, PartialEq)]
pub struct TransitionBatch {
    pub states: Vec<GoalObservation>,
    pub actions: Vec<Vec<f64>>,
    pub rewards: Vec<f64>,
    pub next_states: Vec<GoalObservation>,
    pub desired_goals: Vec<Vec<f64>>,
    /// True termination flags for bootstrap masking. Always false for the
    /// fixed-horizon toy tasks; kept so the TD target stays general.
    pub terminals: Vec<bool>,
    /// Which entries were relabeled with a future achieved goal.
    pub relabeled: Vec<bool>,
}

impl TransitionBatch {
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    /// Goal-conditioned network inputs: `observation ‖ desired_goal`.
    pub fn state_inputs(&self) -> Vec<Vec<f64>> {
        self.states.iter().map(goal_conditioned_input).collect()
    }

    pub fn next_state_inputs(&self) -> Vec<Vec<f64>> {
        self.next_states.iter().map(goal_conditioned_input).collect()
    }
}

/// `observation ‖ desired_goal`, the input every network conditions on.
pub fn goal_conditioned_input(obs: &GoalObservation) -> Vec<f64> {
    let mut x = Vec::with_capacity(obs.observation.len() + obs.desired_goal.len());
    x.extend_from_slice(&obs.observation);
    x.extend_from_slice(&obs.desired_goal);
    x
}

impl ReplayBuffer {
    pub fn new(capacity: usize, episode_len: usize, success_threshold: f64) -> Result<ReplayBuffer> {
        if capacity < 1 || episode_len < 1 {
            return Err(Error::InvalidArgument(
                "capacity and episode length must be >= 1".into(),
            ));
        }
        if !(success_threshold > 0.0) {
            return Err(Error::InvalidArgument("success threshold must be > 0".into()));
        }
        Ok(ReplayBuffer {
            capacity,
            episode_len,
            success_threshold,
            episodes: VecDeque::new(),
        })
    }

    /// Stored episode count.
    pub fn len(&self) -> usize {
        self.episodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.episodes.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn episode_len(&self) -> usize {
        self.episode_len
    }

    pub fn transition_count(&self) -> usize {
        self.len() * self.episode_len
    }

    pub fn episode(&self, index: usize) -> Option<&[Transition]> {
        self.episodes.get(index).map(|e| e.as_slice())
    }

    /// Appends one fixed-length episode, evicting the oldest when full.
    pub fn store_episode(&mut self, episode: Vec<Transition>) -> Result<()> {
        if episode.len() != self.episode_len {
            return Err(Error::InvalidArgument(format!(
                "episode has {} transitions, buffer expects {}",
                episode.len(),
                self.episode_len
            )));
        }
        if self.episodes.len() == self.capacity {
            self.episodes.pop_front();
        }
        self.episodes.push_back(episode);
        Ok(())
    }

    /// Samples `(episode, t)` pairs uniformly; each is relabeled with
    /// probability `future_k / (future_k + 1)` using a future index drawn
    /// uniformly from `[t, episode_end]`. Deterministic given the RNG state.
    pub fn sample_with_her<R: Rng>(
        &self,
        batch_size: usize,
        future_k: f64,
        rng: &mut R,
    ) -> Result<TransitionBatch> {
        if self.is_empty() {
            return Err(Error::EmptyBuffer);
        }
        if batch_size < 1 {
            return Err(Error::InvalidArgument("batch_size must be >= 1".into()));
        }
        if !(future_k >= 0.0) {
            return Err(Error::InvalidArgument(format!(
                "future_k must be >= 0, got {future_k}"
            )));
        }
        let relabel_prob = future_k / (future_k + 1.0);
        let n = batch_size;
        let mut batch = TransitionBatch {
            states: Vec::with_capacity(n),
            actions: Vec::with_capacity(n),
            rewards: Vec::with_capacity(n),
            next_states: Vec::with_capacity(n),
            desired_goals: Vec::with_capacity(n),
            terminals: Vec::with_capacity(n),
            relabeled: Vec::with_capacity(n),
        };
        for _ in 0..n {
            let ep_idx = rng.gen_range(0..self.episodes.len());
            let t = rng.gen_range(0..self.episode_len);
            let episode = &self.episodes[ep_idx];
            let relabel = rng.gen::<f64>() < relabel_prob;
            let transition = if relabel {
                let future_index = rng.gen_range(t..self.episode_len);
                her_relabel(episode, t, future_index, self.success_threshold)?
            } else {
                episode[t].clone()
            };
            batch.desired_goals.push(transition.state.desired_goal.clone());
            batch.states.push(transition.state);
            batch.actions.push(transition.action);
            batch.rewards.push(transition.reward);
            batch.next_states.push(transition.next_state);
            batch.terminals.push(false);
            batch.relabeled.push(relabel);
        }
        Ok(batch)
    }
}

/// Returns transition `t` with the desired goal replaced by the achieved goal
/// of `episode[future_index].next_state` and the reward (and success flag)
/// recomputed. Only the goal components change.
pub fn her_relabel(
    episode: &[Transition],
    t: usize,
    future_index: usize,
    threshold: f64,
) -> Result<Transition> {
    if t >= episode.len() || future_index >= episode.len() || future_index < t {
        return Err(Error::InvalidArgument(format!(
            "need t <= future_index < len, got t={t} future_index={future_index} len={}",
            episode.len()
        )));
    }
    let mut out = episode[t].clone();
    let new_goal = episode[future_index].next_state.achieved_goal.clone();
    out.state.desired_goal = new_goal.clone();
    out.next_state.desired_goal = new_goal.clone();
    out.reward = compute_reward(&out.next_state.achieved_goal, &new_goal, threshold)?;
    out.success = out.reward == 0.0;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::{EnvSpec, Task, ToyEnv};
    use rand::rngs::StdRng;
    use rand::SeedableRng;

    fn scripted_episode(spec: &EnvSpec, seed: u64, rng: &mut StdRng) -> Vec<Transition> {
        let (mut env, _) = ToyEnv::reset(spec, seed);
        let mut episode = Vec::new();
        while !env.done() {
            let action: Vec<f64> = (0..spec.action_dim())
                .map(|_| rng.gen_range(-1.0..1.0))
                .collect();
            episode.push(env.step(&action).unwrap());
        }
        episode
    }

    fn filled_buffer(n_episodes: usize) -> (ReplayBuffer, EnvSpec) {
        let spec = EnvSpec::new(Task::Push);
        let mut buffer =
            ReplayBuffer::new(1000, spec.max_episode_steps, spec.success_threshold).unwrap();
        let mut rng = StdRng::seed_from_u64(99);
        for seed in 0..n_episodes as u64 {
            buffer.store_episode(scripted_episode(&spec, seed, &mut rng)).unwrap();
        }
        (buffer, spec)
    }

    #[test]
    fn store_grows_then_evicts_fifo() {
        let spec = EnvSpec::new(Task::Reach);
        let mut buffer = ReplayBuffer::new(3, spec.max_episode_steps, spec.success_threshold).unwrap();
        let mut rng = StdRng::seed_from_u64(0);
        let episodes: Vec<_> = (0..4).map(|s| scripted_episode(&spec, s, &mut rng)).collect();
        buffer.store_episode(episodes[0].clone()).unwrap();
        assert_eq!(buffer.len(), 1);
        // stored episode is retrievable bit-identical
        assert_eq!(buffer.episode(0).unwrap(), episodes[0].as_slice());
        for ep in &episodes[1..] {
            buffer.store_episode(ep.clone()).unwrap();
        }
        assert_eq!(buffer.len(), 3);
        // first episode evicted, second now at the front
        assert_eq!(buffer.episode(0).unwrap(), episodes[1].as_slice());
    }

    #[test]
    fn store_rejects_wrong_length() {
        let spec = EnvSpec::new(Task::Reach);
        let mut buffer = ReplayBuffer::new(3, spec.max_episode_steps, spec.success_threshold).unwrap();
        let mut rng = StdRng::seed_from_u64(0);
        let mut ep = scripted_episode(&spec, 0, &mut rng);
        ep.pop();
        assert!(matches!(buffer.store_episode(ep), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn relabel_with_own_future_is_a_success() {
        let (buffer, spec) = filled_buffer(1);
        let episode = buffer.episode(0).unwrap();
        for t in [0, 5, spec.max_episode_steps - 1] {
            let relabeled = her_relabel(episode, t, t, spec.success_threshold).unwrap();
            assert_eq!(relabeled.reward, 0.0);
            assert!(relabeled.success);
        }
    }

    #[test]
    fn relabel_far_goal_stays_failure() {
        // reach: the achieved goal is the gripper, which moves every episode
        let spec = EnvSpec::new(Task::Reach);
        let mut buffer =
            ReplayBuffer::new(4, spec.max_episode_steps, spec.success_threshold).unwrap();
        let mut rng = StdRng::seed_from_u64(42);
        buffer.store_episode(scripted_episode(&spec, 0, &mut rng)).unwrap();
        let episode = buffer.episode(0).unwrap();
        // distance oracle: find (t, future) whose goals are beyond threshold
        let mut checked = false;
        for t in 0..episode.len() {
            for f in t..episode.len() {
                let next_achieved = &episode[t].next_state.achieved_goal;
                let future_goal = &episode[f].next_state.achieved_goal;
                let dist: f64 = next_achieved
                    .iter()
                    .zip(future_goal)
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>()
                    .sqrt();
                if dist > spec.success_threshold {
                    let relabeled = her_relabel(episode, t, f, spec.success_threshold).unwrap();
                    assert_eq!(relabeled.reward, -1.0);
                    checked = true;
                }
            }
        }
        assert!(checked, "episode never produced a far relabel pair");
    }

    #[test]
    fn relabel_changes_only_goal_components() {
        let (buffer, spec) = filled_buffer(1);
        let episode = buffer.episode(0).unwrap();
        let orig = &episode[2];
        let relabeled = her_relabel(episode, 2, 7, spec.success_threshold).unwrap();
        assert_eq!(relabeled.state.observation, orig.state.observation);
        assert_eq!(relabeled.state.achieved_goal, orig.state.achieved_goal);
        assert_eq!(relabeled.action, orig.action);
        assert_eq!(relabeled.next_state.observation, orig.next_state.observation);
        assert_eq!(relabeled.next_state.achieved_goal, orig.next_state.achieved_goal);
        assert_eq!(relabeled.done, orig.done);
        assert_eq!(
            relabeled.state.desired_goal,
            episode[7].next_state.achieved_goal
        );
    }

    #[test]
    fn relabel_rejects_bad_indices() {
        let (buffer, spec) = filled_buffer(1);
        let episode = buffer.episode(0).unwrap();
        assert!(her_relabel(episode, 5, 3, spec.success_threshold).is_err());
        assert!(her_relabel(episode, 0, episode.len(), spec.success_threshold).is_err());
    }

    #[test]
    fn future_k_zero_means_no_relabeling() {
        let (buffer, _) = filled_buffer(4);
        let mut rng = StdRng::seed_from_u64(5);
        let batch = buffer.sample_with_her(256, 0.0, &mut rng).unwrap();
        assert!(batch.relabeled.iter().all(|r| !r));
        // rewards equal stored rewards: spot-check through reward recomputation
        for i in 0..batch.len() {
            let r = compute_reward(
                &batch.next_states[i].achieved_goal,
                &batch.desired_goals[i],
                0.05,
            )
            .unwrap();
            assert_eq!(r, batch.rewards[i]);
        }
    }

    #[test]
    fn relabel_fraction_tracks_future_k() {
        let (buffer, _) = filled_buffer(8);
        let mut rng = StdRng::seed_from_u64(11);
        let batch = buffer.sample_with_her(10_000, 4.0, &mut rng).unwrap();
        let fraction = batch.relabeled.iter().filter(|r| **r).count() as f64 / 10_000.0;
        assert!((fraction - 0.8).abs() <= 0.02, "observed fraction {fraction}");
    }

    #[test]
    fn sampling_is_seed_deterministic_and_does_not_mutate() {
        let (buffer, _) = filled_buffer(4);
        let snapshot: Vec<Vec<Transition>> = (0..buffer.len())
            .map(|i| buffer.episode(i).unwrap().to_vec())
            .collect();
        let mut rng_a = StdRng::seed_from_u64(21);
        let mut rng_b = StdRng::seed_from_u64(21);
        let a = buffer.sample_with_her(64, 4.0, &mut rng_a).unwrap();
        let b = buffer.sample_with_her(64, 4.0, &mut rng_b).unwrap();
        assert_eq!(a, b);
        for i in 0..buffer.len() {
            assert_eq!(buffer.episode(i).unwrap(), snapshot[i].as_slice());
        }
    }

    #[test]
    fn sampled_rewards_are_consistent_with_goals() {
        let (buffer, spec) = filled_buffer(6);
        let mut rng = StdRng::seed_from_u64(2);
        let batch = buffer.sample_with_her(2_000, 4.0, &mut rng).unwrap();
        for i in 0..batch.len() {
            let r = compute_reward(
                &batch.next_states[i].achieved_goal,
                &batch.next_states[i].desired_goal,
                spec.success_threshold,
            )
            .unwrap();
            assert_eq!(r, batch.rewards[i], "entry {i}");
            assert_eq!(batch.desired_goals[i], batch.states[i].desired_goal);
            assert_eq!(batch.desired_goals[i], batch.next_states[i].desired_goal);
        }
    }

    #[test]
    fn selection_is_uniform_over_transitions() {
        let spec = EnvSpec::new(Task::Reach);
        let mut buffer = ReplayBuffer::new(5, spec.max_episode_steps, spec.success_threshold).unwrap();
        let mut rng = StdRng::seed_from_u64(7);
        for seed in 0..5 {
            buffer.store_episode(scripted_episode(&spec, seed, &mut rng)).unwrap();
        }
        // count (episode, t) picks via a goal-tagged lookup: use future_k = 0 so
        // entries are stored transitions verbatim, identifiable by exact match
        let total = buffer.transition_count();
        let draws = 60_000;
        let mut counts = vec![0usize; total];
        let mut sample_rng = StdRng::seed_from_u64(4321);
        let batch = buffer.sample_with_her(draws, 0.0, &mut sample_rng).unwrap();
        'outer: for i in 0..batch.len() {
            for ep in 0..buffer.len() {
                let episode = buffer.episode(ep).unwrap();
                for (t, tr) in episode.iter().enumerate() {
                    if tr.state == batch.states[i] && tr.action == batch.actions[i] {
                        counts[ep * spec.max_episode_steps + t] += 1;
                        continue 'outer;
                    }
                }
            }
            panic!("sampled transition not found in buffer");
        }
        let expected = draws as f64 / total as f64;
        let p = 1.0 / total as f64;
        let sigma = (draws as f64 * p * (1.0 - p)).sqrt();
        for (i, &c) in counts.iter().enumerate() {
            assert!(
                (c as f64 - expected).abs() <= 3.0 * sigma,
                "transition {i} drawn {c} times, expected {expected:.1} ± {:.1}",
                3.0 * sigma
            );
        }
    }

    #[test]
    fn sampling_empty_buffer_errors() {
        let buffer = ReplayBuffer::new(3, 30, 0.05).unwrap();
        let mut rng = StdRng::seed_from_u64(0);
        assert!(matches!(
            buffer.sample_with_her(8, 4.0, &mut rng),
            Err(Error::EmptyBuffer)
        ));
    }
}

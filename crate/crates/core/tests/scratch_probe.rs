// temporary diagnostic; deleted before finalizing
use nsr_core::agent::{Agent, WeightMode};
use nsr_core::envs::{Task, ToyEnv};
use nsr_core::replay::ReplayBuffer;
use nsr_core::runner::{collect_episode, evaluate_detailed, RunConfig};
use nsr_core::seeding::derive_seed;
use rand::rngs::StdRng;
use rand::SeedableRng;

#[test]
#[ignore]
fn probe_push() {
    let mut cfg = RunConfig::desk_default(Task::Push);
    cfg.env.workspace_min = [0.4; 3];
    cfg.env.workspace_max = [0.6; 3];
    cfg.weight_mode = WeightMode::Uniform;
    let seed = 0u64;
    let mut agent = Agent::new(&cfg.agent_config(), derive_seed(seed, 1)).unwrap();
    let mut rng = StdRng::seed_from_u64(derive_seed(seed, 2));
    let mut buffer = ReplayBuffer::new(cfg.buffer_capacity, 30, 0.05).unwrap();

    for epoch in 0..12 {
        let mut moved = 0usize;
        let mut total = 0usize;
        let mut closs = 0.0;
        let mut q_est = 0.0;
        let mut n_upd = 0usize;
        for _ in 0..cfg.cycles_per_epoch {
            for _ in 0..cfg.episodes_per_cycle {
                let ep = collect_episode(&cfg.env, &agent, true, &mut rng).unwrap();
                let obj0 = &ep[0].state.observation[3..6];
                let obj_last = &ep[ep.len()-1].next_state.observation[3..6];
                let d: f64 = obj0.iter().zip(obj_last).map(|(a,b)|(a-b)*(a-b)).sum::<f64>().sqrt();
                if d > 1e-9 { moved += 1; }
                total += 1;
                buffer.store_episode(ep).unwrap();
            }
            for m in agent.update_cycle(&buffer, cfg.updates_per_cycle, &mut rng).unwrap() {
                closs += m.critic_loss; n_upd += 1;
            }
        }
        let batch = buffer.sample_with_her(128, 4.0, &mut rng).unwrap();
        let si = batch.state_inputs();
        for (s, a) in si.iter().zip(&batch.actions) {
            let mut x = s.clone(); x.extend_from_slice(a);
            q_est += agent.critic.forward(&x).unwrap()[0];
        }
        q_est /= si.len() as f64;
        let stats = evaluate_detailed(&agent, &cfg.env, 20, derive_seed(seed, 1000 + epoch)).unwrap();
        println!(
            "epoch {epoch:2}: moved {moved:2}/{total} | critic_loss {:.4} | meanQ {q_est:.2} | eval succ {:.2} ret {:.1}",
            closs / n_upd as f64, stats.success_rate, stats.mean_return
        );
    }
    let (mut env, obs) = ToyEnv::reset(&cfg.env, derive_seed(999, 0));
    println!("eval episode: gripper {:?} object {:?} goal {:?}",
        &obs.observation[..3], &obs.observation[3..6], &obs.desired_goal);
    let mut r = StdRng::seed_from_u64(0);
    for step in 0..30 {
        let o = env.observe();
        let a = agent.select_action(&o, false, &mut r);
        let t = env.step(&a).unwrap();
        if step % 5 == 0 || t.success {
            println!("  step {step:2}: a {:?} grip {:?} obj {:?} succ {}",
                a.iter().map(|v| (v*100.0).round()/100.0).collect::<Vec<_>>(),
                t.next_state.observation[..3].iter().map(|v| (v*1000.0).round()/1000.0).collect::<Vec<_>>(),
                t.next_state.observation[3..6].iter().map(|v| (v*1000.0).round()/1000.0).collect::<Vec<_>>(),
                t.success);
        }
        if env.done() { break; }
    }
}

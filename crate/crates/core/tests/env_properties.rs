use nvif_lab::env_gather::{observe, GridWorld, TaskConfig, TaskKind, ACTION_COUNT, OBS_CHANNELS};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn small_task() -> impl Strategy<Value = TaskConfig> {
    (8usize..13, 1usize..7, 1usize..10, 1usize..25, 1usize..4, any::<u64>(), any::<bool>()).prop_map(
        |(map_size, n_omnivores, n_food, max_steps, view_radius, seed, random)| TaskConfig {
            task_kind: if random { TaskKind::Random } else { TaskKind::Normal },
            map_size,
            n_omnivores,
            n_food,
            max_steps,
            view_radius,
            seed,
            ..TaskConfig::default()
        },
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn random_play_keeps_the_board_consistent(task in small_task(), action_seed in any::<u64>()) {
        let mut world = GridWorld::new(task.clone()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(action_seed);
        world.check_invariants().unwrap();
        while !world.done() {
            let actions: Vec<_> = world.alive_ids().into_iter().map(|i| (i, rng.random_range(0..ACTION_COUNT))).collect();
            let r = world.step(&actions).unwrap();
            prop_assert_eq!(world.check_invariants(), Ok(()));
            prop_assert!(world.t() <= task.max_steps);
            prop_assert_eq!(r.done, world.t() == task.max_steps || r.food_remaining == 0);
            prop_assert_eq!(r.rewards.len(), task.n_omnivores);
            for (i, &alive) in r.alive.iter().enumerate() {
                if !alive {
                    prop_assert!(world.position(i).is_err());
                }
            }
        }
        prop_assert!(world.step(&[]).is_err());
    }

    #[test]
    fn observation_channels_stay_in_range(task in small_task(), steps in 0usize..5, action_seed in any::<u64>()) {
        let mut world = GridWorld::new(task.clone()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(action_seed);
        for _ in 0..steps {
            if world.done() {
                break;
            }
            let actions: Vec<_> = world.alive_ids().into_iter().map(|i| (i, rng.random_range(0..ACTION_COUNT))).collect();
            world.step(&actions).unwrap();
        }
        let w = task.window();
        for agent in world.alive_ids() {
            let obs = observe(&world, agent).unwrap();
            prop_assert_eq!(obs.data.len(), task.obs_len());
            for c in 0..OBS_CHANNELS {
                for row in 0..w {
                    for col in 0..w {
                        let v = obs.at(c, row, col);
                        match c {
                            0 | 1 | 3 => prop_assert!(v == 0.0 || v == 1.0, "channel {} holds {}", c, v),
                            2 | 4 => prop_assert!((0.0..=1.0).contains(&v)),
                            5 => prop_assert_eq!(v, obs.position.0),
                            6 => prop_assert_eq!(v, obs.position.1),
                            _ => unreachable!(),
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn reset_with_the_same_seed_replays_identically(task in small_task(), action_seed in any::<u64>()) {
        let play = || {
            let mut world = GridWorld::new(task.clone()).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(action_seed);
            let mut trace = Vec::new();
            while !world.done() {
                let actions: Vec<_> = world.alive_ids().into_iter().map(|i| (i, rng.random_range(0..ACTION_COUNT))).collect();
                trace.push(world.step(&actions).unwrap());
            }
            trace
        };
        prop_assert_eq!(play(), play());
    }
}

use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use super::EnvError;

/// Number of discrete actions.
pub const ACTION_COUNT: usize = 33;
/// Index of the do-nothing action.
pub const NOOP: usize = 32;
/// First attack index; attacks are up, down, left, right.
pub const FIRST_ATTACK: usize = 28;
/// Moves reach every lattice offset with `0 < dx² + dy² <= MOVE_RADIUS_SQ`.
pub const MOVE_RADIUS_SQ: i32 = 9;

/// What an action index does. `y` grows downwards, so "up" is `dy = -1`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ActionKind {
    Move { dx: i32, dy: i32 },
    Attack { dx: i32, dy: i32 },
    Noop,
}

fn table() -> &'static [ActionKind; ACTION_COUNT] {
    static TABLE: OnceLock<[ActionKind; ACTION_COUNT]> = OnceLock::new();
    TABLE.get_or_init(|| {
        let mut moves = Vec::with_capacity(FIRST_ATTACK);
        for dy in -3..=3i32 {
            for dx in -3..=3i32 {
                let d = dx * dx + dy * dy;
                if d > 0 && d <= MOVE_RADIUS_SQ {
                    moves.push(ActionKind::Move { dx, dy });
                }
            }
        }
        debug_assert_eq!(moves.len(), FIRST_ATTACK);
        let mut out = [ActionKind::Noop; ACTION_COUNT];
        out[..FIRST_ATTACK].copy_from_slice(&moves);
        out[FIRST_ATTACK] = ActionKind::Attack { dx: 0, dy: -1 };
        out[FIRST_ATTACK + 1] = ActionKind::Attack { dx: 0, dy: 1 };
        out[FIRST_ATTACK + 2] = ActionKind::Attack { dx: -1, dy: 0 };
        out[FIRST_ATTACK + 3] = ActionKind::Attack { dx: 1, dy: 0 };
        out[NOOP] = ActionKind::Noop;
        out
    })
}

pub fn decode_action(index: usize) -> Result<ActionKind, EnvError> {
    table()
        .get(index)
        .copied()
        .ok_or(EnvError::ActionOutOfRange(index))
}

/// Inverse of [`decode_action`].
pub fn encode_action(kind: ActionKind) -> Option<usize> {
    table().iter().position(|&k| k == kind)
}

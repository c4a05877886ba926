use super::world::{AgentId, Cell, GridWorld};
use super::EnvError;

/// Channels per window cell: obstacle mask, omnivore presence, omnivore hp,
/// food presence, food hp, x broadcast, y broadcast.
pub const OBS_CHANNELS: usize = 7;

/// A channel-major `7 × w × w` local view plus the agent's normalized position.
#[derive(Clone, Debug, PartialEq)]
pub struct Observation {
    pub window: usize,
    pub data: Vec<f64>,
    pub position: (f64, f64),
}

impl Observation {
    pub fn at(&self, channel: usize, row: usize, col: usize) -> f64 {
        self.data[(channel * self.window + row) * self.window + col]
    }
}

/// Normalized position `(x, y) / (map_size − 1)`.
pub fn normalized_position(world: &GridWorld, pos: (usize, usize)) -> (f64, f64) {
    let scale = (world.config().map_size - 1) as f64;
    (pos.0 as f64 / scale, pos.1 as f64 / scale)
}

pub fn observe(world: &GridWorld, agent: AgentId) -> Result<Observation, EnvError> {
    let window = world.config().window();
    let mut data = vec![0.0; OBS_CHANNELS * window * window];
    let position = observe_into(world, agent, &mut data)?;
    Ok(Observation {
        window,
        data,
        position,
    })
}

/// Writes the flattened view into `out` (length [`super::TaskConfig::obs_len`])
/// and returns the normalized position.
pub fn observe_into(
    world: &GridWorld,
    agent: AgentId,
    out: &mut [f64],
) -> Result<(f64, f64), EnvError> {
    let cfg = world.config();
    let pos = world.position(agent)?;
    let w = cfg.window();
    let plane = w * w;
    assert_eq!(out.len(), OBS_CHANNELS * plane, "observation buffer length");
    out.fill(0.0);
    let (nx, ny) = normalized_position(world, pos);
    let radius = cfg.view_radius as i64;
    for row in 0..w {
        for col in 0..w {
            let x = pos.0 as i64 + col as i64 - radius;
            let y = pos.1 as i64 + row as i64 - radius;
            let k = row * w + col;
            match world.cell(x, y) {
                None => out[k] = 1.0,
                Some(Cell::Omnivore(o)) if o != agent => {
                    out[plane + k] = 1.0;
                    out[2 * plane + k] = world.omnivores()[o].hp as f64 / cfg.hp_omnivore as f64;
                }
                Some(Cell::Food(f)) => {
                    out[3 * plane + k] = 1.0;
                    out[4 * plane + k] = world.food()[f].hp as f64 / cfg.hp_food as f64;
                }
                _ => {}
            }
            out[5 * plane + k] = nx;
            out[6 * plane + k] = ny;
        }
    }
    Ok((nx, ny))
}

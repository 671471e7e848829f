//! Learning-rate schedules.

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LrSchedule {
    Constant(f32),
    /// Linear rise from `max/25` to `max` over the first 45% of steps, linear
    /// fall back to `max/25` over the next 45%, then linear decay to
    /// `max/250` over the final 10%.
    OneCycle {
        max_lr: f32,
    },
}

impl LrSchedule {
    pub fn lr(&self, step: usize, total: usize) -> f32 {
        match *self {
            LrSchedule::Constant(lr) => lr,
            LrSchedule::OneCycle { max_lr } => one_cycle(max_lr, step, total),
        }
    }

    pub fn peak(&self) -> f32 {
        match *self {
            LrSchedule::Constant(lr) => lr,
            LrSchedule::OneCycle { max_lr } => max_lr,
        }
    }
}

pub fn one_cycle(max_lr: f32, step: usize, total: usize) -> f32 {
    let start = max_lr / 25.0;
    let end = max_lr / 250.0;
    if total <= 1 {
        return max_lr;
    }
    let last = (total - 1) as f64;
    let up = (0.45 * last).round().max(1.0);
    let down = (0.90 * last).round().max(up + 1.0).min(last - 1.0);
    let s = step.min(total - 1) as f64;
    let lerp = |a: f32, b: f32, t: f64| (a as f64 + (b as f64 - a as f64) * t) as f32;
    if s <= up {
        lerp(start, max_lr, s / up)
    } else if s <= down {
        lerp(max_lr, start, (s - up) / (down - up))
    } else {
        lerp(start, end, (s - down) / (last - down))
    }
}

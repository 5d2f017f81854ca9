use super::{TrainConfig, TrainError};

/// First and second moments per parameter plus the shared step counter.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    t: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new(sizes: &[usize], cfg: &TrainConfig) -> Self {
        Self {
            beta1: cfg.beta1,
            beta2: cfg.beta2,
            eps: cfg.eps,
            t: 0,
            m: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            v: sizes.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }

    pub fn step(&self) -> u64 {
        self.t
    }

    pub fn moments(&self, i: usize) -> (&[f64], &[f64]) {
        (&self.m[i], &self.v[i])
    }
}

/// Restricts an update to the listed rows of a `[rows×width]` table.
/// Rows outside the mask keep their values and moments untouched.
#[derive(Debug, Clone, Copy)]
pub struct RowMask<'a> {
    pub width: usize,
    pub used: &'a [bool],
}

pub struct ParamSlot<'a> {
    pub values: &'a mut [f64],
    pub grad: &'a [f64],
    pub rows: Option<RowMask<'a>>,
}

/// One Adam step over every slot.
///
/// Gradients are clipped to `grad_clip_norm` by global norm before the
/// moment updates; weight decay `θ ← θ − lr·wd·θ` follows the Adam update.
pub fn adam_step(slots: &mut [ParamSlot<'_>], state: &mut AdamState, cfg: &TrainConfig) -> Result<(), TrainError> {
    if slots.len() != state.m.len() {
        return Err(TrainError::ShapeMismatch {
            name: "parameter list".into(),
            expected: vec![state.m.len()],
            found: vec![slots.len()],
        });
    }
    for (i, s) in slots.iter().enumerate() {
        let n = state.m[i].len();
        if s.values.len() != n || s.grad.len() != n || s.rows.is_some_and(|r| r.width * r.used.len() != n) {
            return Err(TrainError::ShapeMismatch {
                name: format!("parameter {i}"),
                expected: vec![n],
                found: vec![s.values.len(), s.grad.len()],
            });
        }
    }

    let mut clip = 1.0;
    if let Some(max_norm) = cfg.grad_clip_norm {
        let norm = slots.iter().flat_map(|s| s.grad.iter()).map(|g| g * g).sum::<f64>().sqrt();
        if norm > max_norm {
            clip = max_norm / norm;
        }
    }

    state.t += 1;
    let (b1, b2, eps) = (state.beta1, state.beta2, state.eps);
    let c1 = 1.0 - b1.powi(state.t as i32);
    let c2 = 1.0 - b2.powi(state.t as i32);
    let lr = cfg.learning_rate;
    let wd = cfg.weight_decay;
    for (i, s) in slots.iter_mut().enumerate() {
        let (m, v) = (&mut state.m[i], &mut state.v[i]);
        let n = s.values.len();
        let ranges: Vec<std::ops::Range<usize>> = match s.rows {
            None => vec![0..n],
            Some(mask) => mask
                .used
                .iter()
                .enumerate()
                .filter(|(_, &u)| u)
                .map(|(r, _)| r * mask.width..(r + 1) * mask.width)
                .collect(),
        };
        for j in ranges.into_iter().flatten() {
            let g = s.grad[j] * clip;
            m[j] = b1 * m[j] + (1.0 - b1) * g;
            v[j] = b2 * v[j] + (1.0 - b2) * g * g;
            let mh = m[j] / c1;
            let vh = v[j] / c2;
            let mut theta = s.values[j] - lr * mh / (vh.sqrt() + eps);
            theta -= lr * wd * theta;
            s.values[j] = theta;
        }
    }
    Ok(())
}

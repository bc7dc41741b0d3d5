use crate::error::Result;

/// Classical fourth-order Runge–Kutta with reusable stage buffers.
#[derive(Clone, Debug, Default)]
pub struct Rk4 {
    k1: Vec<f64>,
    k2: Vec<f64>,
    k3: Vec<f64>,
    k4: Vec<f64>,
    stage: Vec<f64>,
}

impl Rk4 {
    pub fn new() -> Self {
        Self::default()
    }

    /// Advances `y` from `t` to `t + h` in place. `f(t, y, dy)` writes the
    /// derivative.
    pub fn step<F>(&mut self, f: &mut F, t: f64, h: f64, y: &mut [f64]) -> Result<()>
    where
        F: FnMut(f64, &[f64], &mut [f64]) -> Result<()>,
    {
        let dim = y.len();
        for buf in [&mut self.k1, &mut self.k2, &mut self.k3, &mut self.k4, &mut self.stage] {
            buf.resize(dim, 0.0);
        }

        f(t, y, &mut self.k1)?;

        for i in 0..dim {
            self.stage[i] = y[i] + 0.5 * h * self.k1[i];
        }
        f(t + 0.5 * h, &self.stage, &mut self.k2)?;

        for i in 0..dim {
            self.stage[i] = y[i] + 0.5 * h * self.k2[i];
        }
        f(t + 0.5 * h, &self.stage, &mut self.k3)?;

        for i in 0..dim {
            self.stage[i] = y[i] + h * self.k3[i];
        }
        f(t + h, &self.stage, &mut self.k4)?;

        for i in 0..dim {
            y[i] += h / 6.0 * (self.k1[i] + 2.0 * self.k2[i] + 2.0 * self.k3[i] + self.k4[i]);
        }
        Ok(())
    }
}

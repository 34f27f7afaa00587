use nalgebra::DVector;

use crate::error::{QmngError, Result};

/// Stage buffers for classical RK4 so that repeated steps do not allocate.
#[derive(Debug, Clone)]
pub struct Rk4Workspace {
    k1: Vec<f64>,
    k2: Vec<f64>,
    k3: Vec<f64>,
    k4: Vec<f64>,
    stage: Vec<f64>,
}

impl Rk4Workspace {
    pub fn new(len: usize) -> Self {
        Self {
            k1: vec![0.0; len],
            k2: vec![0.0; len],
            k3: vec![0.0; len],
            k4: vec![0.0; len],
            stage: vec![0.0; len],
        }
    }

    /// Advances `q` in place by one RK4 step. `f(q, t, out)` writes the
    /// right-hand side into `out`.
    pub fn step<F>(&mut self, f: &mut F, q: &mut [f64], t: f64, dt: f64) -> Result<()>
    where
        F: FnMut(&[f64], f64, &mut [f64]) -> Result<()>,
    {
        if !(dt > 0.0) {
            return Err(QmngError::InvalidConfig(format!("time step must be positive, got {dt}")));
        }
        let half = 0.5 * dt;
        f(q, t, &mut self.k1)?;
        check_finite(&self.k1, t)?;
        combine(&mut self.stage, q, half, &self.k1);
        f(&self.stage, t + half, &mut self.k2)?;
        check_finite(&self.k2, t)?;
        combine(&mut self.stage, q, half, &self.k2);
        f(&self.stage, t + half, &mut self.k3)?;
        check_finite(&self.k3, t)?;
        combine(&mut self.stage, q, dt, &self.k3);
        f(&self.stage, t + dt, &mut self.k4)?;
        check_finite(&self.k4, t)?;
        let w = dt / 6.0;
        for i in 0..q.len() {
            q[i] += w * (self.k1[i] + 2.0 * self.k2[i] + 2.0 * self.k3[i] + self.k4[i]);
        }
        Ok(())
    }
}

fn combine(dst: &mut [f64], q: &[f64], h: f64, k: &[f64]) {
    for ((d, &qi), &ki) in dst.iter_mut().zip(q).zip(k) {
        *d = qi + h * ki;
    }
}

fn check_finite(k: &[f64], t: f64) -> Result<()> {
    if k.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(QmngError::Integration {
            mu: f64::NAN,
            t,
            reason: "non-finite value in RK4 stage".into(),
        })
    }
}

/// One classical RK4 step of `q' = f(t, q)`.
pub fn rk4_step<F>(mut f: F, q: &DVector<f64>, t: f64, dt: f64) -> Result<DVector<f64>>
where
    F: FnMut(&DVector<f64>, f64) -> Result<DVector<f64>>,
{
    let mut ws = Rk4Workspace::new(q.len());
    let mut out = q.clone();
    let mut g = |x: &[f64], t: f64, o: &mut [f64]| -> Result<()> {
        let v = f(&DVector::from_column_slice(x), t)?;
        o.copy_from_slice(v.as_slice());
        Ok(())
    };
    ws.step(&mut g, out.as_mut_slice(), t, dt)?;
    Ok(out)
}

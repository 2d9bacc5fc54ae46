//! Optimizers shared across the crate: a derivative-free Nelder-Mead
//! simplex for the maximum-likelihood fits and adaptive moment estimation
//! for the adversarial training loop.

use crate::networks::ParamSet;

/// Result of a simplex minimization.
#[derive(Debug, Clone)]
pub struct SimplexOutcome {
    pub x: Vec<f64>,
    pub value: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Nelder-Mead minimization with standard reflection/expansion/contraction
/// coefficients (1, 2, 0.5, 0.5).
///
/// Converges when the best value improves by less than `tol` over a full
/// cycle of the simplex, or stops at `max_iters` with `converged = false`.
pub fn nelder_mead<F>(mut f: F, x0: &[f64], initial_step: f64, tol: f64, max_iters: usize) -> SimplexOutcome
where
    F: FnMut(&[f64]) -> f64,
{
    let n = x0.len();
    let mut simplex: Vec<Vec<f64>> = Vec::with_capacity(n + 1);
    simplex.push(x0.to_vec());
    for i in 0..n {
        let mut v = x0.to_vec();
        let step = if v[i].abs() > 1e-8 { initial_step * v[i].abs() } else { initial_step };
        v[i] += step;
        simplex.push(v);
    }
    let mut values: Vec<f64> = simplex.iter().map(|v| guard(f(v))).collect();

    let mut iterations = 0;
    let mut converged = false;

    while iterations < max_iters {
        iterations += 1;
        // order ascending by value
        let mut idx: Vec<usize> = (0..=n).collect();
        idx.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
        let new_simplex: Vec<Vec<f64>> = idx.iter().map(|&i| simplex[i].clone()).collect();
        let new_values: Vec<f64> = idx.iter().map(|&i| values[i]).collect();
        simplex = new_simplex;
        values = new_values;

        // value spread across the whole simplex below tolerance
        if values[n].is_finite() && values[n] - values[0] <= tol * (1.0 + values[0].abs()) {
            converged = true;
            break;
        }

        // centroid of all but the worst
        let mut centroid = vec![0.0; n];
        for v in simplex.iter().take(n) {
            for (c, vi) in centroid.iter_mut().zip(v) {
                *c += vi / n as f64;
            }
        }
        let worst = values[n];
        let second_worst = values[n - 1];

        let reflect: Vec<f64> = centroid
            .iter()
            .zip(&simplex[n])
            .map(|(c, w)| c + (c - w))
            .collect();
        let fr = guard(f(&reflect));

        if fr < values[0] {
            let expand: Vec<f64> = centroid
                .iter()
                .zip(&simplex[n])
                .map(|(c, w)| c + 2.0 * (c - w))
                .collect();
            let fe = guard(f(&expand));
            if fe < fr {
                simplex[n] = expand;
                values[n] = fe;
            } else {
                simplex[n] = reflect;
                values[n] = fr;
            }
        } else if fr < second_worst {
            simplex[n] = reflect;
            values[n] = fr;
        } else {
            let contract_base = if fr < worst { &reflect } else { &simplex[n] };
            let contract: Vec<f64> = centroid
                .iter()
                .zip(contract_base)
                .map(|(c, w)| c + 0.5 * (w - c))
                .collect();
            let fc = guard(f(&contract));
            if fc < worst.min(fr) {
                simplex[n] = contract;
                values[n] = fc;
            } else {
                // shrink toward the best vertex
                let best_v = simplex[0].clone();
                for i in 1..=n {
                    for (vi, bi) in simplex[i].iter_mut().zip(&best_v) {
                        *vi = bi + 0.5 * (*vi - bi);
                    }
                    values[i] = guard(f(&simplex[i]));
                }
            }
        }
    }

    let mut idx: Vec<usize> = (0..=n).collect();
    idx.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    SimplexOutcome {
        x: simplex[idx[0]].clone(),
        value: values[idx[0]],
        iterations,
        converged,
    }
}

/// Non-finite objective values are treated as infinitely bad.
fn guard(v: f64) -> f64 {
    if v.is_finite() {
        v
    } else {
        f64::INFINITY
    }
}

/// Adaptive moment estimation over a [`ParamSet`], state kept per tensor in
/// declaration order.
#[derive(Debug, Clone)]
pub struct Adam {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    step: u64,
}

impl Adam {
    pub fn new(learning_rate: f64, beta1: f64, beta2: f64, epsilon: f64, params: &ParamSet) -> Self {
        let m = params.iter().map(|p| vec![0.0; p.value.len()]).collect();
        let v = params.iter().map(|p| vec![0.0; p.value.len()]).collect();
        Self {
            learning_rate,
            beta1,
            beta2,
            epsilon,
            m,
            v,
            step: 0,
        }
    }

    /// One descent step. `grads` must align with the param set's declaration
    /// order; gradients of the loss being *minimized*.
    pub fn step(&mut self, params: &mut ParamSet, grads: &[Vec<f64>]) {
        assert_eq!(grads.len(), params.len(), "gradient/parameter count mismatch");
        self.step += 1;
        let b1c = 1.0 - self.beta1.powi(self.step as i32);
        let b2c = 1.0 - self.beta2.powi(self.step as i32);
        for i in 0..params.len() {
            let g = &grads[i];
            let m = &mut self.m[i];
            let v = &mut self.v[i];
            let p = params.get_mut(i);
            let data = p.value.data_mut();
            assert_eq!(g.len(), data.len(), "gradient length mismatch at {}", p.name);
            for j in 0..data.len() {
                m[j] = self.beta1 * m[j] + (1.0 - self.beta1) * g[j];
                v[j] = self.beta2 * v[j] + (1.0 - self.beta2) * g[j] * g[j];
                let m_hat = m[j] / b1c;
                let v_hat = v[j] / b2c;
                data[j] -= self.learning_rate * m_hat / (v_hat.sqrt() + self.epsilon);
            }
        }
    }
}

/// Plain gradient step, used by the textbook-alternation comparison path.
pub fn sgd_step(params: &mut ParamSet, grads: &[Vec<f64>], learning_rate: f64) {
    assert_eq!(grads.len(), params.len());
    for i in 0..params.len() {
        let g = &grads[i];
        let data = params.get_mut(i).value.data_mut();
        for j in 0..data.len() {
            data[j] -= learning_rate * g[j];
        }
    }
}

//! Decoupled-weight-decay adaptive gradient optimizer over a [`VarStore`].
//!
//! Parameters that received no gradient in a step (no path to the loss, for
//! example the recognition head when its loss weight is zero) are skipped
//! entirely: no moment update, no decay.

use crate::error::{Error, Result};
use crate::model::{Binding, VarStore};
use crate::{Gradients, Tensor};

pub struct AdamW {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    step_count: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl AdamW {
    pub fn new(store: &VarStore, lr: f64, weight_decay: f64) -> AdamW {
        let m = store.ids().map(|id| vec![0.0; store.value(id).len()]).collect();
        let v = store.ids().map(|id| vec![0.0; store.value(id).len()]).collect();
        AdamW {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
            step_count: 0,
            m,
            v,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    /// Applies one update from the gradients of a bound step. Returns the
    /// global gradient norm before clipping; `clip` rescales gradients when
    /// the norm exceeds it.
    pub fn step(
        &mut self,
        store: &mut VarStore,
        binding: &Binding,
        grads: &Gradients,
        clip: Option<f64>,
    ) -> f64 {
        self.step_count += 1;
        let t = self.step_count as i32;
        let bias1 = 1.0 - self.beta1.powi(t);
        let bias2 = 1.0 - self.beta2.powi(t);

        let ids: Vec<_> = store.ids().collect();
        let mut norm_sq = 0.0;
        for &id in &ids {
            if let Some(node) = binding.node_of(id) {
                if let Some(g) = grads.raw(node) {
                    norm_sq += g.iter().map(|x| x * x).sum::<f64>();
                }
            }
        }
        let norm = norm_sq.sqrt();
        let scale = match clip {
            Some(c) if norm > c && norm > 0.0 => c / norm,
            _ => 1.0,
        };

        for (idx, &id) in ids.iter().enumerate() {
            let Some(node) = binding.node_of(id) else { continue };
            let Some(g) = grads.raw(node) else { continue };
            let m = &mut self.m[idx];
            let v = &mut self.v[idx];
            let (lr, b1, b2, eps, wd) = (self.lr, self.beta1, self.beta2, self.eps, self.weight_decay);
            store.update(id, |p| {
                for i in 0..p.len() {
                    let gi = g[i] * scale;
                    m[i] = b1 * m[i] + (1.0 - b1) * gi;
                    v[i] = b2 * v[i] + (1.0 - b2) * gi * gi;
                    let m_hat = m[i] / bias1;
                    let v_hat = v[i] / bias2;
                    p[i] -= lr * (m_hat / (v_hat.sqrt() + eps) + wd * p[i]);
                }
            });
        }
        norm
    }

    /// Optimizer state as named tensors for checkpointing.
    pub fn state_entries(&self, store: &VarStore) -> Vec<(String, Tensor)> {
        let mut out = vec![(
            "optim.step".to_string(),
            Tensor::scalar(self.step_count as f64),
        )];
        for (idx, id) in store.ids().enumerate() {
            let shape = store.value(id).shape().to_vec();
            let name = store.name(id);
            out.push((
                format!("optim.m.{name}"),
                Tensor::from_vec(&shape, self.m[idx].clone()).expect("moment shape"),
            ));
            out.push((
                format!("optim.v.{name}"),
                Tensor::from_vec(&shape, self.v[idx].clone()).expect("moment shape"),
            ));
        }
        out
    }

    /// Restores state written by [`AdamW::state_entries`]; entries for
    /// unknown parameters are an error, missing ones keep zeros.
    pub fn load_state(&mut self, store: &VarStore, entries: &[(String, Tensor)]) -> Result<()> {
        for (name, tensor) in entries {
            if name == "optim.step" {
                self.step_count = tensor.item() as u64;
                continue;
            }
            let (kind, param) = match name.strip_prefix("optim.m.") {
                Some(p) => ("m", p),
                None => match name.strip_prefix("optim.v.") {
                    Some(p) => ("v", p),
                    None => continue,
                },
            };
            let Some(idx) = store.ids().position(|id| store.name(id) == param) else {
                return Err(Error::Incompatible(format!(
                    "optimizer state for unknown parameter {param}"
                )));
            };
            let slot = if kind == "m" {
                &mut self.m[idx]
            } else {
                &mut self.v[idx]
            };
            if slot.len() != tensor.len() {
                return Err(Error::Incompatible(format!(
                    "optimizer state {name} has {} values, expected {}",
                    tensor.len(),
                    slot.len()
                )));
            }
            slot.copy_from_slice(tensor.values());
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::Tape;

    fn quadratic_store() -> (VarStore, crate::model::ParamId) {
        let mut store = VarStore::new();
        let id = store.add("x", Tensor::from_vec(&[3], vec![1.0, -2.0, 3.0]).unwrap());
        (store, id)
    }

    fn loss_of(store: &VarStore) -> f64 {
        store
            .iter()
            .map(|(_, t)| t.values().iter().map(|v| v * v).sum::<f64>())
            .sum()
    }

    #[test]
    fn steps_descend_a_quadratic() {
        let (mut store, id) = quadratic_store();
        let mut opt = AdamW::new(&store, 0.05, 0.0);
        let mut last = loss_of(&store);
        for _ in 0..50 {
            let tape = Tape::new();
            let bind = store.bind(Some(&tape));
            let loss = bind.get(id).mul(bind.get(id)).sum();
            let grads = loss.backward().unwrap();
            opt.step(&mut store, &bind, &grads, None);
            let now = loss_of(&store);
            assert!(now < last);
            last = now;
        }
        assert!(last < 1.0);
    }

    #[test]
    fn untouched_parameters_stay_bit_identical() {
        let mut store = VarStore::new();
        let used = store.add("used", Tensor::from_vec(&[2], vec![1.0, 2.0]).unwrap());
        let unused = store.add("unused", Tensor::from_vec(&[2], vec![5.0, 6.0]).unwrap());
        let before = store.value(unused).to_vec();
        let mut opt = AdamW::new(&store, 0.1, 0.01);
        let tape = Tape::new();
        let bind = store.bind(Some(&tape));
        let loss = bind.get(used).sum();
        let grads = loss.backward().unwrap();
        opt.step(&mut store, &bind, &grads, None);
        assert_eq!(store.value(unused).to_vec(), before);
        assert_ne!(store.value(used).values()[0], 1.0);
    }

    #[test]
    fn state_round_trip_preserves_trajectory() {
        let (mut store_a, id_a) = quadratic_store();
        let (mut store_b, id_b) = quadratic_store();
        let mut opt_a = AdamW::new(&store_a, 0.05, 0.01);

        let run_step = |store: &mut VarStore, id, opt: &mut AdamW| {
            let tape = Tape::new();
            let bind = store.bind(Some(&tape));
            let loss = bind.get(id).mul(bind.get(id)).sum();
            let grads = loss.backward().unwrap();
            opt.step(store, &bind, &grads, Some(1.0));
        };

        for _ in 0..3 {
            run_step(&mut store_a, id_a, &mut opt_a);
        }
        // clone state into a fresh optimizer and fresh store copy
        let entries = opt_a.state_entries(&store_a);
        let mut opt_b = AdamW::new(&store_b, 0.05, 0.01);
        opt_b.load_state(&store_b, &entries).unwrap();
        store_b
            .load_from(&[("x".to_string(), store_a.value(id_a).clone())])
            .unwrap();

        run_step(&mut store_a, id_a, &mut opt_a);
        run_step(&mut store_b, id_b, &mut opt_b);
        assert_eq!(store_a.value(id_a).values(), store_b.value(id_b).values());
    }
}

//! Browser bindings: loss curves, a DevGrad batch explorer and an
//! interactive hypergrid trainer.
//!
//! Each export is a thin wrapper over a plain Rust function so the logic is
//! testable off the wasm target.

use ftb_core::devgrad::{devgrad_batch_loss, DeltaBatch};
use ftb_core::gfn::{BehaviorPolicy, Normalization, TrainConfig, Trainer};
use ftb_core::hypergrid::HypergridEnv;
use ftb_core::loss::{loss, loss_deriv};
use ftb_core::Divergence;
use wasm_bindgen::prelude::*;

fn parse_divergence(name: &str) -> Result<Divergence, String> {
    name.parse().map_err(|e: ftb_core::Error| e.to_string())
}

/// `[Δ_0, L(Δ_0), L'(Δ_0), Δ_1, ...]` on `n` evenly spaced points.
pub fn loss_curve_points(divergence: &str, lo: f64, hi: f64, n: usize) -> Result<Vec<f64>, String> {
    let div = parse_divergence(divergence)?;
    if n < 2 || !(lo < hi) {
        return Err("need n >= 2 and lo < hi".into());
    }
    let mut out = Vec::with_capacity(3 * n);
    for i in 0..n {
        let d = lo + (hi - lo) * i as f64 / (n - 1) as f64;
        out.push(d);
        out.push(loss(div, d).map_err(|e| e.to_string())?);
        out.push(loss_deriv(div, d).map_err(|e| e.to_string())?);
    }
    Ok(out)
}

/// `[log Ẑ, loss, w_1, ..., w_B]` for a batch of log-ratio deviations.
pub fn devgrad_summary(divergence: &str, deltas: Vec<f64>) -> Result<Vec<f64>, String> {
    let div = parse_divergence(divergence)?;
    let batch = DeltaBatch::new(deltas).map_err(|e| e.to_string())?;
    let r = devgrad_batch_loss(div, &batch).map_err(|e| e.to_string())?;
    let mut out = vec![r.log_z_hat, r.loss];
    out.extend(r.weights);
    Ok(out)
}

#[wasm_bindgen(js_name = lossCurve)]
pub fn loss_curve(divergence: &str, lo: f64, hi: f64, n: usize) -> Result<Vec<f64>, JsError> {
    loss_curve_points(divergence, lo, hi, n).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen(js_name = devgradBatch)]
pub fn devgrad_batch(divergence: &str, deltas: Vec<f64>) -> Result<Vec<f64>, JsError> {
    devgrad_summary(divergence, deltas).map_err(|e| JsError::new(&e))
}

/// A 2-D hypergrid trainer that can be stepped from the page.
#[wasm_bindgen]
pub struct GridDemo {
    trainer: Trainer,
    target: Vec<f64>,
}

impl GridDemo {
    pub fn create(divergence: &str, h: usize, epsilon: f64, seed: u64) -> Result<GridDemo, String> {
        let env = HypergridEnv::new(2, h, 1e-3).map_err(|e| e.to_string())?;
        let target = env.exact_target_distribution().map_err(|e| e.to_string())?;
        let mut config = TrainConfig::new(env, parse_divergence(divergence)?);
        config.behavior = BehaviorPolicy::EpsUniform { epsilon };
        config.normalization = Normalization::Devgrad;
        config.batch_size = 64;
        config.lr = 0.05;
        config.steps = usize::MAX;
        config.seed = seed;
        let trainer = Trainer::new(config).map_err(|e| e.to_string())?;
        Ok(GridDemo { trainer, target })
    }

    pub fn advance(&mut self, steps: usize) -> Result<f64, String> {
        let mut loss = f64::NAN;
        for _ in 0..steps {
            loss = self.trainer.step().map_err(|e| e.to_string())?.loss;
        }
        Ok(loss)
    }
}

#[wasm_bindgen]
impl GridDemo {
    #[wasm_bindgen(constructor)]
    pub fn new(divergence: &str, h: usize, epsilon: f64, seed: u64) -> Result<GridDemo, JsError> {
        Self::create(divergence, h, epsilon, seed).map_err(|e| JsError::new(&e))
    }

    /// Takes `steps` training steps and returns the last batch loss.
    pub fn step(&mut self, steps: usize) -> Result<f64, JsError> {
        self.advance(steps).map_err(|e| JsError::new(&e))
    }

    /// Terminal distribution of the current policy, row-major with the first
    /// coordinate fastest.
    pub fn distribution(&self) -> Vec<f64> {
        self.trainer
            .params()
            .terminal_distribution(&self.trainer.config().env)
            .unwrap_or_default()
    }

    pub fn target(&self) -> Vec<f64> {
        self.target.clone()
    }

    pub fn side(&self) -> usize {
        self.trainer.config().env.h()
    }

    #[wasm_bindgen(js_name = stepsTaken)]
    pub fn steps_taken(&self) -> usize {
        self.trainer.step_index()
    }

    pub fn l1(&self) -> f64 {
        self.trainer.evaluate().l1
    }

    #[wasm_bindgen(js_name = modesFound)]
    pub fn modes_found(&self) -> usize {
        self.trainer.modes_found()
    }

    #[wasm_bindgen(js_name = logZ)]
    pub fn log_z(&self) -> f64 {
        self.trainer.params().log_z
    }
}

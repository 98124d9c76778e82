//! WebAssembly bindings for the browser demo; the logic lives in [`session`].

pub mod session;

use wasm_bindgen::prelude::*;

use session::{demo_config, Session, DENSITY_EXTENT};

fn js(e: cflow::Error) -> JsError {
    JsError::new(&e.to_string())
}

/// A synthetic dataset plus the model currently being trained on it.
#[wasm_bindgen]
pub struct Demo(Session);

#[wasm_bindgen]
impl Demo {
    #[wasm_bindgen(constructor)]
    pub fn new(seed: u32, shift: f64) -> Result<Demo, JsError> {
        Session::new(demo_config(seed as u64, shift))
            .map(Demo)
            .map_err(js)
    }

    pub fn width(&self) -> usize {
        self.0.image_size().1
    }

    pub fn height(&self) -> usize {
        self.0.image_size().0
    }

    pub fn test_count(&self) -> usize {
        self.0.test_count()
    }

    pub fn is_anomalous(&self, index: usize) -> bool {
        self.0.is_anomalous(index)
    }

    /// Ground-truth mask as 0/1 bytes.
    pub fn mask(&self, index: usize) -> Vec<u8> {
        self.0
            .mask(index)
            .map(|m| m.iter().map(|&b| b as u8).collect())
            .unwrap_or_default()
    }

    pub fn start_flow(&mut self, epochs: usize, conditional: bool) -> Result<(), JsError> {
        self.0.start_flow(epochs, conditional).map_err(js)
    }

    /// Loss of the epoch just run, or `undefined` once training is done and maps are ready.
    pub fn train_epoch(&mut self) -> Result<Option<f64>, JsError> {
        self.0.train_epoch().map_err(js)
    }

    pub fn epochs_done(&self) -> usize {
        self.0.epochs_done()
    }

    pub fn fit_mvg(&mut self) -> Result<(), JsError> {
        self.0.fit_mvg().map_err(js)
    }

    /// Row-major anomaly map, scaled to `[0, 1]` over the whole test set; empty before scoring.
    pub fn anomaly_map(&self, index: usize) -> Vec<f64> {
        match (self.0.anomaly_map(index), self.0.score_range()) {
            (Some(map), Some((lo, hi))) => {
                let span = if hi > lo { hi - lo } else { 1.0 };
                map.iter().map(|v| (v - lo) / span).collect()
            }
            _ => Vec::new(),
        }
    }

    /// `[detection AUROC, localization AUROC, AUPRO]`, `NaN` where undefined.
    pub fn metrics(&self) -> Result<Vec<f64>, JsError> {
        let r = self.0.evaluate().map_err(js)?;
        Ok([r.detection_auroc, r.localization_auroc, r.aupro]
            .iter()
            .map(|v| v.unwrap_or(f64::NAN))
            .collect())
    }
}

/// Log-density grid of a random 2-D conditional flow followed by its integral
/// over `[-DENSITY_EXTENT, DENSITY_EXTENT]²` (the last element).
#[wasm_bindgen]
pub fn flow_density(
    seed: u32,
    magnitude: f64,
    layers: usize,
    y: usize,
    x: usize,
    steps: usize,
) -> Result<Vec<f64>, JsError> {
    let (mut grid, mass) = session::flow_density(
        seed as u64,
        magnitude,
        layers,
        (y, x),
        steps,
        DENSITY_EXTENT,
    )
    .map_err(js)?;
    grid.push(mass);
    Ok(grid)
}

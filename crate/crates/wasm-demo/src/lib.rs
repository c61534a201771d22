//! Browser bindings: mosaic generation, box fusion and the learning rate
//! curve. Each export wraps a plain function so the logic also runs natively.

use fieldforge::fusion::{nms, wbf, ScoredBox};
use fieldforge::mosaic::{demo_corpus, generate_mosaic, procedural_soil_texture, write_annotations, SoilRatio, TilePool};
use fieldforge::schedule::LrSchedule;
use fieldforge::{rng, MosaicSpec};
use wasm_bindgen::prelude::*;

/// Demo corpus size; big enough that every class shows up many times.
const DEMO_IMAGES: usize = 48;

/// RGBA pixels plus the annotation table of one mosaic.
#[wasm_bindgen]
pub struct Mosaic {
    width: u32,
    height: u32,
    rgba: Vec<u8>,
    annotations: String,
    plants: u32,
    sick: u32,
}

#[wasm_bindgen]
impl Mosaic {
    #[wasm_bindgen(getter)]
    pub fn width(&self) -> u32 {
        self.width
    }

    #[wasm_bindgen(getter)]
    pub fn height(&self) -> u32 {
        self.height
    }

    /// RGBA bytes, ready for `ImageData`.
    #[wasm_bindgen(getter)]
    pub fn rgba(&self) -> Vec<u8> {
        self.rgba.clone()
    }

    #[wasm_bindgen(getter)]
    pub fn annotations(&self) -> String {
        self.annotations.clone()
    }

    #[wasm_bindgen(getter)]
    pub fn plants(&self) -> u32 {
        self.plants
    }

    #[wasm_bindgen(getter)]
    pub fn sick(&self) -> u32 {
        self.sick
    }
}

pub fn build_mosaic(seed: u32, soil: u32, leaf: u32) -> Result<Mosaic, String> {
    let spec = MosaicSpec {
        soil_ratio: SoilRatio { soil, leaf },
        rng_seed: u64::from(seed),
        ..MosaicSpec::default()
    };
    let (records, images) = demo_corpus(DEMO_IMAGES, u64::from(seed));
    let pool = TilePool::prepare(&records, &images, &spec).map_err(|e| e.to_string())?;
    let texture = procedural_soil_texture(256, 256, rng::derive_seed(u64::from(seed), &[u64::MAX]));
    let item = generate_mosaic(&pool, &texture, &spec).map_err(|e| e.to_string())?;
    let rgba = item.image.pixels().flat_map(|p| [p[0], p[1], p[2], 255]).collect();
    Ok(Mosaic {
        width: spec.width_px,
        height: spec.height_px,
        rgba,
        annotations: write_annotations(&item.annotations),
        plants: item.annotations.len() as u32,
        sick: item.sick_count() as u32,
    })
}

/// `boxes_json` is a list of box lists (`[[{"box": [...], "score": s, "label": l}]]`).
pub fn fuse_json(boxes_json: &str, method: &str, iou: f64, source_count: u32) -> Result<String, String> {
    let lists: Vec<Vec<ScoredBox>> = serde_json::from_str(boxes_json).map_err(|e| e.to_string())?;
    for b in lists.iter().flatten() {
        b.validate().map_err(|e| e.to_string())?;
    }
    let fused = match method {
        "nms" => nms(&lists.concat(), iou),
        "wbf" => wbf(&lists, iou, source_count as usize),
        other => return Err(format!("unknown method `{other}`, expected nms or wbf")),
    };
    serde_json::to_string(&fused).map_err(|e| e.to_string())
}

pub fn lr_values(
    epochs: u32,
    lr_start: f64,
    lr_max: f64,
    lr_min: f64,
    ramp_epochs: u32,
    sustain_epochs: u32,
    decay: f64,
) -> Result<Vec<f64>, String> {
    let schedule = LrSchedule {
        lr_start,
        lr_max,
        lr_min,
        ramp_epochs,
        sustain_epochs,
        decay,
    };
    schedule.validate().map_err(|e| e.to_string())?;
    Ok(schedule.curve(epochs))
}

#[wasm_bindgen(js_name = generateMosaic)]
pub fn generate_mosaic_js(seed: u32, soil: u32, leaf: u32) -> Result<Mosaic, JsError> {
    build_mosaic(seed, soil, leaf).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen(js_name = fuseBoxes)]
pub fn fuse_boxes_js(boxes_json: &str, method: &str, iou: f64, source_count: u32) -> Result<String, JsError> {
    fuse_json(boxes_json, method, iou, source_count).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen(js_name = lrCurve)]
pub fn lr_curve_js(
    epochs: u32,
    lr_start: f64,
    lr_max: f64,
    lr_min: f64,
    ramp_epochs: u32,
    sustain_epochs: u32,
    decay: f64,
) -> Result<Vec<f64>, JsError> {
    lr_values(epochs, lr_start, lr_max, lr_min, ramp_epochs, sustain_epochs, decay).map_err(|e| JsError::new(&e))
}

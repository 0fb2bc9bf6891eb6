//! JSON documents for models, training histories and metrics; PPM images.

use std::fs;
use std::path::Path;

use ifsem_core::em::{TrainHistory, TrainRecord};
use ifsem_core::geometry::ROTATION_TOL;
use ifsem_core::numeric::Summary;
use ifsem_core::render::RasterImage;
use ifsem_core::{CovarianceMode, IfsModel, Matrix, MogModel, Similitude};
use serde::ser::SerializeMap;
use serde::{Deserialize, Serialize, Serializer};

use crate::error::{IoError, Result};

/// Tolerance for rotations and simplex vectors read from disk.
pub const LOAD_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Serialize, Deserialize)]
struct SimilitudeDoc {
    s: f64,
    r: Vec<f64>,
    t: Vec<f64>,
}

impl From<&Similitude> for SimilitudeDoc {
    fn from(f: &Similitude) -> Self {
        SimilitudeDoc { s: f.scale(), r: f.rotation().as_slice().to_vec(), t: f.translation().to_vec() }
    }
}

impl SimilitudeDoc {
    fn into_similitude(self, h: usize) -> Result<Similitude, String> {
        if self.r.len() != h * h || self.t.len() != h {
            return Err(format!("similitude needs r of length {} and t of length {h}", h * h));
        }
        let f = Similitude::with_tolerance(self.s, Matrix::from_row_major(h, h, self.r), self.t, LOAD_TOL)
            .map_err(|e| e.to_string())?;
        if f.rotation().orthogonality_error() > ROTATION_TOL {
            return Ok(f.reorthonormalized());
        }
        Ok(f)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ModelDoc {
    h: usize,
    k: usize,
    d: usize,
    components: Vec<SimilitudeDoc>,
    w: Vec<f64>,
    v: Vec<f64>,
    post: SimilitudeDoc,
}

/// Renormalizes a vector lying within [`LOAD_TOL`] of the probability
/// simplex.
pub fn repair_simplex(name: &str, mut values: Vec<f64>) -> Result<Vec<f64>, String> {
    if values.iter().any(|v| !v.is_finite() || *v < -LOAD_TOL) {
        return Err(format!("{name} has negative or non-finite entries"));
    }
    for v in values.iter_mut() {
        *v = v.max(0.0);
    }
    let sum: f64 = values.iter().sum();
    if (sum - 1.0).abs() > LOAD_TOL {
        return Err(format!("{name} sums to {sum}, not 1"));
    }
    values.iter_mut().for_each(|v| *v /= sum);
    Ok(values)
}

pub fn model_to_json(model: &IfsModel) -> String {
    let doc = ModelDoc {
        h: model.dim(),
        k: model.k(),
        d: model.depth(),
        components: model.components().iter().map(SimilitudeDoc::from).collect(),
        w: model.weights().to_vec(),
        v: model.depth_weights().to_vec(),
        post: model.post().into(),
    };
    serde_json::to_string_pretty(&doc).expect("model serializes") + "\n"
}

pub fn model_from_json(text: &str) -> Result<IfsModel, String> {
    let doc: ModelDoc = serde_json::from_str(text).map_err(|e| e.to_string())?;
    if doc.components.len() != doc.k || doc.w.len() != doc.k {
        return Err(format!("expected {} components and weights", doc.k));
    }
    if doc.v.len() != doc.d + 1 {
        return Err(format!("expected {} depth weights", doc.d + 1));
    }
    let h = doc.h;
    let components = doc.components.into_iter().map(|c| c.into_similitude(h)).collect::<Result<Vec<_>, _>>()?;
    let post = doc.post.into_similitude(h)?;
    let w = repair_simplex("w", doc.w)?;
    let v = repair_simplex("v", doc.v)?;
    IfsModel::new(components, w, v, post).map_err(|e| e.to_string())
}

pub fn save_model(path: impl AsRef<Path>, model: &IfsModel) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, model_to_json(model)).map_err(|e| IoError::io(path, e))
}

pub fn load_model(path: impl AsRef<Path>) -> Result<IfsModel> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| IoError::io(path, e))?;
    model_from_json(&text).map_err(|m| IoError::format(path, m))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct MogDoc {
    k: usize,
    h: usize,
    mode: String,
    means: Vec<Vec<f64>>,
    /// Row-major `H×H` covariance per component (`σ²I` in spherical mode).
    covariances: Vec<Vec<f64>>,
    weights: Vec<f64>,
}

pub fn mog_to_json(model: &MogModel) -> String {
    let doc = MogDoc {
        k: model.k(),
        h: model.dim(),
        mode: model.mode().name().to_string(),
        means: model.means().to_vec(),
        covariances: (0..model.k()).map(|j| model.covariance(j).as_slice().to_vec()).collect(),
        weights: model.weights().to_vec(),
    };
    serde_json::to_string_pretty(&doc).expect("mixture serializes") + "\n"
}

pub fn mog_from_json(text: &str) -> Result<MogModel, String> {
    let doc: MogDoc = serde_json::from_str(text).map_err(|e| e.to_string())?;
    let mode: CovarianceMode = doc.mode.parse().map_err(|e: ifsem_core::Error| e.to_string())?;
    let h = doc.h;
    if doc.means.len() != doc.k || doc.covariances.len() != doc.k || doc.weights.len() != doc.k {
        return Err(format!("expected {} means, covariances and weights", doc.k));
    }
    if doc.covariances.iter().any(|c| c.len() != h * h) {
        return Err(format!("covariances must hold {} entries", h * h));
    }
    let weights = repair_simplex("weights", doc.weights)?;
    let model = match mode {
        CovarianceMode::Spherical => {
            let variances = doc
                .covariances
                .iter()
                .map(|c| {
                    let var = c[0];
                    let iso = (0..h * h).all(|i| {
                        let expected = if i % (h + 1) == 0 { var } else { 0.0 };
                        (c[i] - expected).abs() <= LOAD_TOL * var.abs()
                    });
                    if iso {
                        Ok(var)
                    } else {
                        Err("spherical covariance must be a multiple of the identity".to_string())
                    }
                })
                .collect::<Result<Vec<_>, _>>()?;
            MogModel::spherical(doc.means, variances, weights)
        }
        CovarianceMode::Full => MogModel::full(
            doc.means,
            doc.covariances.into_iter().map(|c| Matrix::from_row_major(h, h, c)).collect(),
            weights,
        ),
    };
    model.map_err(|e| e.to_string())
}

pub fn save_mog(path: impl AsRef<Path>, model: &MogModel) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, mog_to_json(model)).map_err(|e| IoError::io(path, e))
}

pub fn load_mog(path: impl AsRef<Path>) -> Result<MogModel> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| IoError::io(path, e))?;
    mog_from_json(&text).map_err(|m| IoError::format(path, m))
}

/// Either model kind, as told apart by the `mode` field.
#[derive(Debug, Clone, PartialEq)]
pub enum AnyModel {
    Ifs(IfsModel),
    Mog(MogModel),
}

impl AnyModel {
    pub fn dim(&self) -> usize {
        match self {
            AnyModel::Ifs(m) => m.dim(),
            AnyModel::Mog(m) => m.dim(),
        }
    }

    pub fn mean_log_likelihood(&self, points: &ifsem_core::Points) -> ifsem_core::Result<f64> {
        match self {
            AnyModel::Ifs(m) => m.mean_log_likelihood(points),
            AnyModel::Mog(m) => m.mean_log_likelihood(points),
        }
    }
}

pub fn load_any_model(path: impl AsRef<Path>) -> Result<AnyModel> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| IoError::io(path, e))?;
    let value: serde_json::Value = serde_json::from_str(&text).map_err(|e| IoError::format(path, e.to_string()))?;
    let parsed = if value.get("mode").is_some() {
        mog_from_json(&text).map(AnyModel::Mog)
    } else {
        model_from_json(&text).map(AnyModel::Ifs)
    };
    parsed.map_err(|m| IoError::format(path, m))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoryLine {
    pub iter: usize,
    pub mean_ll_test: Option<f64>,
    pub mean_depth: f64,
    pub v: Vec<f64>,
    pub seconds: Option<f64>,
    pub starved: Vec<usize>,
    pub weights_kept: bool,
}

impl From<&TrainRecord> for HistoryLine {
    fn from(r: &TrainRecord) -> Self {
        HistoryLine {
            iter: r.iter,
            mean_ll_test: r.mean_ll_test,
            mean_depth: r.mean_depth,
            v: r.depth_weights.clone(),
            seconds: r.seconds,
            starved: r.starved.clone(),
            weights_kept: r.weights_kept,
        }
    }
}

/// JSON lines, one object per iteration.
pub fn history_to_jsonl(history: &TrainHistory) -> String {
    let mut out = String::new();
    for r in history {
        out.push_str(&serde_json::to_string(&HistoryLine::from(r)).expect("history serializes"));
        out.push('\n');
    }
    out
}

pub fn parse_history(text: &str) -> Result<Vec<HistoryLine>, String> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .enumerate()
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| format!("line {}: {e}", i + 1)))
        .collect()
}

pub fn save_history(path: impl AsRef<Path>, history: &TrainHistory) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, history_to_jsonl(history)).map_err(|e| IoError::io(path, e))
}

/// Per-method run results, kept in insertion order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Metrics {
    methods: Vec<(String, Vec<f64>)>,
}

impl Metrics {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, method: &str, value: f64) {
        match self.methods.iter_mut().find(|(m, _)| m == method) {
            Some((_, runs)) => runs.push(value),
            None => self.methods.push((method.to_string(), vec![value])),
        }
    }

    pub fn runs(&self, method: &str) -> Option<&[f64]> {
        self.methods.iter().find(|(m, _)| m == method).map(|(_, r)| r.as_slice())
    }

    pub fn methods(&self) -> impl Iterator<Item = &str> {
        self.methods.iter().map(|(m, _)| m.as_str())
    }
}

#[derive(Serialize)]
struct MethodDoc<'a> {
    runs: &'a [f64],
    mean: f64,
    stderr: f64,
    min: f64,
    max: f64,
}

impl Serialize for Metrics {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        let mut map = serializer.serialize_map(Some(self.methods.len()))?;
        for (method, runs) in &self.methods {
            let s = Summary::of(runs).expect("every method has a run");
            map.serialize_entry(method, &MethodDoc { runs, mean: s.mean, stderr: s.stderr, min: s.min, max: s.max })?;
        }
        map.end()
    }
}

/// `{method: {runs, mean, stderr, min, max}}`.
pub fn write_metrics(metrics: &Metrics) -> String {
    serde_json::to_string_pretty(metrics).expect("metrics serialize") + "\n"
}

pub fn save_ppm(path: impl AsRef<Path>, image: &RasterImage) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, image.to_ppm()).map_err(|e| IoError::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ifsem_core::data::{koch_ifs, sierpinski_ifs};
    use serde_json::Value;

    #[test]
    fn model_round_trip_is_exact() {
        let mut model = koch_ifs();
        model.set_depth_weights(vec![0.1, 0.2, 0.7]).unwrap();
        let text = model_to_json(&model);
        let back = model_from_json(&text).unwrap();
        assert_eq!(model_to_json(&back), text);
        let v: Value = serde_json::from_str(&text).unwrap();
        assert_eq!(v["h"], 2);
        assert_eq!(v["k"], 4);
        assert_eq!(v["d"], 2);
        assert_eq!(v["components"][0]["r"].as_array().unwrap().len(), 4);
    }

    #[test]
    fn load_repairs_small_drift_and_rejects_large() {
        let text = model_to_json(&sierpinski_ifs([1.0 / 3.0; 3]));
        let mut v: Value = serde_json::from_str(&text).unwrap();
        v["w"] = serde_json::json!([0.3333334, 0.3333333, 0.3333333]);
        let m = model_from_json(&v.to_string()).unwrap();
        assert!((m.weights().iter().sum::<f64>() - 1.0).abs() < 1e-15);

        v["w"] = serde_json::json!([0.5, 0.3, 0.3]);
        assert!(model_from_json(&v.to_string()).unwrap_err().contains("sums to"));

        v["w"] = serde_json::json!([0.4, 0.3, 0.3]);
        v["components"][0]["r"] = serde_json::json!([1.0, 1e-7, 0.0, 1.0]);
        assert!(model_from_json(&v.to_string()).is_ok());
        v["components"][0]["r"] = serde_json::json!([1.0, 1e-3, 0.0, 1.0]);
        assert!(model_from_json(&v.to_string()).is_err());
        v["components"][0]["r"] = serde_json::json!([1.0, 0.0, 0.0, -1.0]);
        assert!(model_from_json(&v.to_string()).is_err());
        v["components"][0]["r"] = serde_json::json!([1.0, 0.0, 0.0]);
        assert!(model_from_json(&v.to_string()).is_err());
    }

    #[test]
    fn mog_round_trip() {
        let s = MogModel::spherical(vec![vec![0.0, 1.0], vec![2.0, 3.0]], vec![0.5, 2.0], vec![0.25, 0.75]).unwrap();
        assert_eq!(mog_from_json(&mog_to_json(&s)).unwrap(), s);
        let c = Matrix::from_row_major(2, 2, vec![2.0, 0.3, 0.3, 1.0]);
        let f = MogModel::full(vec![vec![0.0, 1.0]], vec![c], vec![1.0]).unwrap();
        assert_eq!(mog_from_json(&mog_to_json(&f)).unwrap(), f);
        let v: Value = serde_json::from_str(&mog_to_json(&f)).unwrap();
        assert_eq!(v["mode"], "full");
        assert!(mog_from_json(&mog_to_json(&f).replace("\"full\"", "\"spherical\"")).is_err());
    }

    #[test]
    fn history_lines() {
        let history = vec![
            TrainRecord {
                iter: 0,
                mean_ll_test: None,
                mean_depth: 1.5,
                depth_weights: vec![0.5, 0.5],
                seconds: None,
                starved: vec![],
                weights_kept: false,
            },
            TrainRecord {
                iter: 1,
                mean_ll_test: Some(-1.25),
                mean_depth: 0.75,
                depth_weights: vec![0.25, 0.75],
                seconds: Some(0.5),
                starved: vec![2],
                weights_kept: true,
            },
        ];
        let text = history_to_jsonl(&history);
        assert_eq!(text.lines().count(), 2);
        let first: Value = serde_json::from_str(text.lines().next().unwrap()).unwrap();
        assert!(first["mean_ll_test"].is_null());
        assert!(first["seconds"].is_null());
        let parsed = parse_history(&text).unwrap();
        assert_eq!(parsed[1], HistoryLine::from(&history[1]));
    }

    #[test]
    fn metrics_document() {
        let mut m = Metrics::new();
        m.push("ifs", 2.0);
        m.push("iso", 1.0);
        m.push("iso", 3.0);
        let v: Value = serde_json::from_str(&write_metrics(&m)).unwrap();
        assert_eq!(v["ifs"]["mean"], 2.0);
        assert_eq!(v["ifs"]["stderr"], 0.0);
        assert_eq!(v["iso"]["mean"], 2.0);
        assert_eq!(v["iso"]["stderr"], 1.0);
        assert_eq!(v["iso"]["min"], 1.0);
        assert_eq!(v["iso"]["max"], 3.0);
        assert_eq!(v["iso"]["runs"], serde_json::json!([1.0, 3.0]));
        assert_eq!(m.methods().collect::<Vec<_>>(), ["ifs", "iso"]);
    }
}

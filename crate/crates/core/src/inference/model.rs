use std::fmt::Write as _;

use super::InferenceError;

pub const DEFAULT_FEATURES: [&str; 6] = ["age", "sys", "dia", "cholesterol", "height", "weight"];
pub const DEFAULT_BLOCK_SIZE: usize = 8;
/// The two test records of the reference walkthrough and their true labels.
pub const APPENDIX_RECORDS: [[f64; 6]; 2] =
    [[25.0, 120.0, 80.0, 156.0, 67.0, 136.0], [56.0, 141.0, 100.0, 428.0, 65.0, 171.0]];
pub const APPENDIX_LABELS: [u8; 2] = [0, 1];

/// Logistic-regression weights. Only the affine score `w·x + bias` is ever
/// evaluated; the label is read off its sign.
#[derive(Clone, Debug, PartialEq)]
pub struct LinearModel {
    feature_names: Vec<String>,
    weights: Vec<f64>,
    bias: f64,
    block_size: usize,
}

impl LinearModel {
    pub fn new(
        feature_names: Vec<String>,
        weights: Vec<f64>,
        bias: f64,
        block_size: usize,
    ) -> Result<Self, InferenceError> {
        if feature_names.is_empty() || feature_names.len() != weights.len() {
            return Err(InferenceError::BadModel(format!(
                "{} feature names for {} weights",
                feature_names.len(),
                weights.len()
            )));
        }
        for (i, name) in feature_names.iter().enumerate() {
            if name.is_empty() || name.chars().any(char::is_whitespace) {
                return Err(InferenceError::BadModel(format!("bad feature name {name:?}")));
            }
            if feature_names[..i].contains(name) {
                return Err(InferenceError::BadModel(format!("duplicate feature {name}")));
            }
        }
        if !weights.iter().chain([&bias]).all(|w| w.is_finite()) {
            return Err(InferenceError::BadModel("weights must be finite".into()));
        }
        if !block_size.is_power_of_two() || block_size < weights.len() + 2 {
            return Err(InferenceError::BadBlockSize(block_size));
        }
        Ok(Self { feature_names, weights, bias, block_size })
    }

    /// Smallest power-of-two block that fits the features, the constant slot
    /// and one pad slot.
    pub fn natural_block_size(features: usize) -> usize {
        (features + 2).next_power_of_two()
    }

    /// The six-feature cardiovascular model used throughout the examples.
    pub fn appendix() -> Self {
        Self::new(
            DEFAULT_FEATURES.iter().map(|s| s.to_string()).collect(),
            vec![0.072, 0.013, -0.029, 0.008, -0.053, 0.021],
            -5.329,
            DEFAULT_BLOCK_SIZE,
        )
        .expect("built-in model is valid")
    }

    pub fn feature_names(&self) -> &[String] {
        &self.feature_names
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn bias(&self) -> f64 {
        self.bias
    }

    pub fn block_size(&self) -> usize {
        self.block_size
    }

    pub fn dimension(&self) -> usize {
        self.weights.len()
    }

    /// Same model with weight `index` shifted by `delta`.
    ///
    /// # Panics
    /// If `index` is out of range.
    pub fn shift_weight(&self, index: usize, delta: f64) -> Self {
        let mut weights = self.weights.clone();
        weights[index] += delta;
        Self { weights, ..self.clone() }
    }

    /// Parses `feature <name> <weight>` lines followed by one `bias <value>`
    /// line. Blank lines and `#` comments are ignored.
    pub fn parse(text: &str) -> Result<Self, InferenceError> {
        let mut names = Vec::new();
        let mut weights = Vec::new();
        let mut bias = None;
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let err = |message: String| InferenceError::Parse { line: i + 1, message };
            let fields: Vec<&str> = line.split_whitespace().collect();
            match fields.as_slice() {
                ["feature", name, w] => {
                    if bias.is_some() {
                        return Err(err("feature after bias".into()));
                    }
                    names.push(name.to_string());
                    weights.push(parse_real(w).map_err(err)?);
                }
                ["bias", b] => {
                    if bias.is_some() {
                        return Err(err("second bias line".into()));
                    }
                    bias = Some(parse_real(b).map_err(err)?);
                }
                _ => return Err(err(format!("unrecognised line {line:?}"))),
            }
        }
        let bias = bias.ok_or(InferenceError::Parse {
            line: text.lines().count(),
            message: "missing bias line".into(),
        })?;
        let block = Self::natural_block_size(weights.len());
        Self::new(names, weights, bias, block)
    }

    /// Inverse of [`parse`](Self::parse); values use the shortest round-trip
    /// decimal form.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (name, w) in self.feature_names.iter().zip(&self.weights) {
            writeln!(out, "feature {name} {w}").unwrap();
        }
        writeln!(out, "bias {}", self.bias).unwrap();
        out
    }
}

fn parse_real(s: &str) -> Result<f64, String> {
    match s.parse::<f64>() {
        Ok(v) if v.is_finite() => Ok(v),
        _ => Err(format!("bad number {s:?}")),
    }
}

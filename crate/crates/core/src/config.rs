//! INI model configuration: marker sections, layer partition, and weight
//! functions, normalized into a [`PipelineConfig`].
//!
//! Each marker is one section. Recognized keys: `datatype` (`categorical` or
//! `continuous-binned`), `layer`, `weight`, `bins` and `range=lo:hi` (binned
//! markers only), and the optional `related` list. A required `[general]`
//! section names the subject and time columns. An optional `[layers]`
//! section assigns explicit layer weights; without it layers are weighted
//! uniformly. Unknown keys are kept but ignored, each with a warning record.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const GENERAL_SECTION: &str = "general";
const LAYERS_SECTION: &str = "layers";

/// Tolerance under which a weight group counts as already normalized.
/// Skipping the division in that case makes rebalancing idempotent bit for
/// bit.
const WEIGHT_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Datatype {
    Categorical,
    /// Equal-width binning of a continuous score over `[lo, hi]`.
    ContinuousBinned { bins: usize, lo: f64, hi: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarkerSpec {
    pub name: String,
    pub datatype: Datatype,
    pub layer: String,
    /// Weight of the marker within its layer, normalized by rebalancing.
    pub weight: f64,
    pub related_markers: Vec<String>,
    /// Unrecognized keys, kept verbatim.
    pub extra: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub name: String,
    /// Weight of the layer among all layers, normalized by rebalancing.
    pub weight: f64,
    pub marker_names: Vec<String>,
}

/// A structured note attached to a parse: something tolerated but worth
/// surfacing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Warning {
    pub section: String,
    pub key: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub markers: BTreeMap<String, MarkerSpec>,
    pub layers: BTreeMap<String, LayerSpec>,
    pub id_column: String,
    pub time_column: String,
    pub warnings: Vec<Warning>,
}

impl PipelineConfig {
    /// Marker names in deterministic (sorted) order.
    pub fn marker_names(&self) -> Vec<&str> {
        self.markers.keys().map(String::as_str).collect()
    }

    pub fn marker(&self, name: &str) -> Result<&MarkerSpec> {
        self.markers
            .get(name)
            .ok_or_else(|| Error::UnknownMarker(name.to_string()))
    }
}

fn schema_err(section: &str, message: impl Into<String>) -> Error {
    Error::Schema {
        section: section.to_string(),
        message: message.into(),
    }
}

/// Raw INI scan: ordered sections of (key, value) pairs with
/// duplicate-section detection. Syntax: `[section]` headers, `key = value`
/// pairs, `#`/`;` comments, blank lines.
fn scan_ini(text: &str) -> Result<Vec<(String, Vec<(String, String)>)>> {
    let mut sections: Vec<(String, Vec<(String, String)>)> = Vec::new();
    let mut current: Option<usize> = None;
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') || line.starts_with(';') {
            continue;
        }
        if let Some(rest) = line.strip_prefix('[') {
            let name = rest.strip_suffix(']').ok_or_else(|| {
                schema_err("", format!("line {}: unterminated section header", lineno + 1))
            })?;
            let name = name.trim();
            if name.is_empty() {
                return Err(schema_err(
                    "",
                    format!("line {}: empty section name", lineno + 1),
                ));
            }
            if sections.iter().any(|(n, _)| n == name) {
                return Err(schema_err(name, "duplicate section"));
            }
            sections.push((name.to_string(), Vec::new()));
            current = Some(sections.len() - 1);
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(schema_err(
                "",
                format!("line {}: expected `key = value`, got `{line}`", lineno + 1),
            ));
        };
        let Some(idx) = current else {
            return Err(schema_err(
                "",
                format!("line {}: key `{}` outside any section", lineno + 1, key.trim()),
            ));
        };
        sections[idx]
            .1
            .push((key.trim().to_string(), value.trim().to_string()));
    }
    Ok(sections)
}

fn parse_weight(section: &str, value: &str) -> Result<f64> {
    let w: f64 = value
        .parse()
        .map_err(|_| schema_err(section, format!("weight `{value}` is not a number")))?;
    if !w.is_finite() || w < 0.0 {
        return Err(schema_err(section, format!("weight {w} must be >= 0")));
    }
    Ok(w)
}

fn parse_marker_section(
    name: &str,
    pairs: &[(String, String)],
    warnings: &mut Vec<Warning>,
) -> Result<MarkerSpec> {
    let mut fields: BTreeMap<&str, &str> = BTreeMap::new();
    for (key, value) in pairs {
        if fields.insert(key.as_str(), value.as_str()).is_some() {
            warnings.push(Warning {
                section: name.to_string(),
                key: key.clone(),
                message: "duplicate key, last value wins".into(),
            });
        }
    }

    let layer = fields
        .get("layer")
        .ok_or_else(|| schema_err(name, "missing required key `layer`"))?
        .to_string();
    if layer.is_empty() {
        return Err(schema_err(name, "`layer` must not be empty"));
    }
    let datatype = match fields.get("datatype") {
        None => return Err(schema_err(name, "missing required key `datatype`")),
        Some(&"categorical") => {
            for key in ["bins", "range"] {
                if fields.contains_key(key) {
                    warnings.push(Warning {
                        section: name.to_string(),
                        key: key.into(),
                        message: "ignored for categorical datatype".into(),
                    });
                }
            }
            Datatype::Categorical
        }
        Some(&"continuous-binned") => {
            let bins_raw = fields
                .get("bins")
                .ok_or_else(|| schema_err(name, "continuous-binned marker needs `bins`"))?;
            let bins: usize = bins_raw
                .parse()
                .map_err(|_| schema_err(name, format!("`bins = {bins_raw}` is not an integer")))?;
            if bins < 2 {
                return Err(schema_err(name, format!("`bins` must be >= 2, got {bins}")));
            }
            let range_raw = fields
                .get("range")
                .ok_or_else(|| schema_err(name, "continuous-binned marker needs `range = lo:hi`"))?;
            let Some((lo_s, hi_s)) = range_raw.split_once(':') else {
                return Err(schema_err(name, format!("`range = {range_raw}` is not `lo:hi`")));
            };
            let lo: f64 = lo_s
                .trim()
                .parse()
                .map_err(|_| schema_err(name, format!("range bound `{lo_s}` is not a number")))?;
            let hi: f64 = hi_s
                .trim()
                .parse()
                .map_err(|_| schema_err(name, format!("range bound `{hi_s}` is not a number")))?;
            if !(lo < hi) {
                return Err(schema_err(name, format!("range requires lo < hi, got {lo}:{hi}")));
            }
            Datatype::ContinuousBinned { bins, lo, hi }
        }
        Some(other) => {
            return Err(schema_err(
                name,
                format!("unknown datatype `{other}` (expected `categorical` or `continuous-binned`)"),
            ))
        }
    };

    let weight = match fields.get("weight") {
        Some(value) => parse_weight(name, value)?,
        None => {
            warnings.push(Warning {
                section: name.to_string(),
                key: "weight".into(),
                message: "missing, treated as 0 (uniform if the whole layer is unweighted)".into(),
            });
            0.0
        }
    };

    let related_markers = fields
        .get("related")
        .map(|v| {
            v.split(',')
                .map(|s| s.trim().to_string())
                .filter(|s| !s.is_empty())
                .collect()
        })
        .unwrap_or_default();

    let known = ["datatype", "layer", "weight", "bins", "range", "related"];
    let mut extra = BTreeMap::new();
    for (key, value) in &fields {
        if !known.contains(key) {
            warnings.push(Warning {
                section: name.to_string(),
                key: key.to_string(),
                message: "unknown key, ignored".into(),
            });
            extra.insert(key.to_string(), value.to_string());
        }
    }

    Ok(MarkerSpec {
        name: name.to_string(),
        datatype,
        layer,
        weight,
        related_markers,
        extra,
    })
}

/// Parse an INI document into a validated, weight-rebalanced config.
pub fn parse_config(text: &str) -> Result<PipelineConfig> {
    let sections = scan_ini(text)?;
    let mut warnings = Vec::new();

    let general = sections
        .iter()
        .find(|(name, _)| name == GENERAL_SECTION)
        .ok_or_else(|| schema_err(GENERAL_SECTION, "missing required section"))?;
    let lookup = |key: &str| -> Result<String> {
        general
            .1
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.clone())
            .ok_or_else(|| schema_err(GENERAL_SECTION, format!("missing required key `{key}`")))
    };
    let id_column = lookup("id_column")?;
    let time_column = lookup("time_column")?;

    let mut markers = BTreeMap::new();
    let mut layer_markers: BTreeMap<String, Vec<String>> = BTreeMap::new();
    for (name, pairs) in &sections {
        if name == GENERAL_SECTION || name == LAYERS_SECTION {
            continue;
        }
        let spec = parse_marker_section(name, pairs, &mut warnings)?;
        layer_markers
            .entry(spec.layer.clone())
            .or_default()
            .push(name.clone());
        markers.insert(name.clone(), spec);
    }
    if markers.is_empty() {
        return Err(schema_err("", "config declares no marker sections"));
    }

    // Explicit layer weights must cover the layer partition exactly;
    // otherwise every layer weighs the same.
    let explicit: Option<BTreeMap<String, f64>> =
        match sections.iter().find(|(name, _)| name == LAYERS_SECTION) {
            Some((_, pairs)) => {
                let mut map = BTreeMap::new();
                for (key, value) in pairs {
                    if !layer_markers.contains_key(key) {
                        return Err(schema_err(
                            LAYERS_SECTION,
                            format!("`{key}` does not match any marker's layer"),
                        ));
                    }
                    map.insert(key.clone(), parse_weight(LAYERS_SECTION, value)?);
                }
                for layer in layer_markers.keys() {
                    if !map.contains_key(layer) {
                        return Err(schema_err(
                            LAYERS_SECTION,
                            format!("layer `{layer}` has no weight entry"),
                        ));
                    }
                }
                Some(map)
            }
            None => None,
        };
    let mut layers = BTreeMap::new();
    for (layer_name, mut marker_names) in layer_markers {
        marker_names.sort();
        let weight = explicit.as_ref().map(|m| m[&layer_name]).unwrap_or(1.0);
        layers.insert(
            layer_name.clone(),
            LayerSpec {
                name: layer_name,
                weight,
                marker_names,
            },
        );
    }

    rebalance_weights(PipelineConfig {
        markers,
        layers,
        id_column,
        time_column,
        warnings,
    })
}

/// Normalize marker weights within each layer and layer weights across
/// layers. All-zero groups become uniform; groups already summing to 1 are
/// left untouched, which makes the operation idempotent.
pub fn rebalance_weights(mut config: PipelineConfig) -> Result<PipelineConfig> {
    for spec in config.markers.values() {
        if spec.weight < 0.0 {
            return Err(schema_err(
                &spec.name,
                format!("weight {} must be >= 0", spec.weight),
            ));
        }
    }
    for layer in config.layers.values() {
        if layer.weight < 0.0 {
            return Err(schema_err(
                &layer.name,
                format!("weight {} must be >= 0", layer.weight),
            ));
        }
    }

    let groups: Vec<Vec<String>> = config
        .layers
        .values()
        .map(|l| l.marker_names.clone())
        .collect();
    for names in groups {
        for name in &names {
            if !config.markers.contains_key(name) {
                return Err(schema_err(name, "layer references unknown marker"));
            }
        }
        let sum: f64 = names.iter().map(|n| config.markers[n].weight).sum();
        if sum == 0.0 {
            let uniform = 1.0 / names.len() as f64;
            for name in &names {
                config.markers.get_mut(name).unwrap().weight = uniform;
            }
        } else if (sum - 1.0).abs() > WEIGHT_TOL {
            for name in &names {
                config.markers.get_mut(name).unwrap().weight /= sum;
            }
        }
    }

    let layer_sum: f64 = config.layers.values().map(|l| l.weight).sum();
    if layer_sum == 0.0 {
        let uniform = 1.0 / config.layers.len() as f64;
        for layer in config.layers.values_mut() {
            layer.weight = uniform;
        }
    } else if (layer_sum - 1.0).abs() > WEIGHT_TOL {
        for layer in config.layers.values_mut() {
            layer.weight /= layer_sum;
        }
    }
    Ok(config)
}

/// The trail weight of a marker: its within-layer weight times its layer's
/// weight. Over a rebalanced config these products sum to 1.
pub fn trail_weight(config: &PipelineConfig, marker: &str) -> Result<f64> {
    let spec = config.marker(marker)?;
    let layer = config
        .layers
        .get(&spec.layer)
        .ok_or_else(|| Error::UnknownMarker(format!("layer `{}`", spec.layer)))?;
    Ok(spec.weight * layer.weight)
}

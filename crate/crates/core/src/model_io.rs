//! Keyed text format for [`PipelineModel`].
//!
//! One scalar per line as `section.key = value`, fields in a fixed order,
//! reals written with 17 significant digits. Lines starting with `#` and
//! blank lines are ignored by the reader.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::str::FromStr;

use thiserror::Error;

use crate::gamut::LatticeConfig;
use crate::model::{
    Channel, ColorMatrix, CurveDirection, Lattice3, ModelMetadata, PipelineModel, Rgb, SolverSettings, ToneCurve,
};
use crate::monotone::FitConfig;
use crate::rank::RankConfig;

pub const FORMAT_NAME: &str = "rankcal-model";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error, Clone, PartialEq)]
#[error("{}{key}: {message}", line.map(|l| format!("line {l}: ")).unwrap_or_default())]
pub struct ParseError {
    pub line: Option<usize>,
    pub key: String,
    pub message: String,
}

impl ParseError {
    fn new(line: Option<usize>, key: impl Into<String>, message: impl Into<String>) -> Self {
        Self { line, key: key.into(), message: message.into() }
    }
}

fn real(v: f64) -> String {
    format!("{v:.16e}")
}

/// Serializes a model to the keyed text format.
pub fn serialize_model(model: &PipelineModel) -> String {
    let mut out = String::new();
    let mut put = |key: &str, value: String| {
        let _ = writeln!(out, "{key} = {value}");
    };
    put("format", FORMAT_NAME.to_string());
    put("version", FORMAT_VERSION.to_string());

    let meta = &model.metadata;
    put("metadata.camera_id", meta.camera_id.clone());
    put("metadata.sample_count", meta.sample_count.to_string());
    let s = &meta.settings;
    put("settings.seed", s.seed.to_string());
    put("settings.rank.sphere_points", s.rank.sphere_points.to_string());
    put("settings.rank.trials", s.rank.trials.to_string());
    put("settings.rank.max_colors", s.rank.max_colors.to_string());
    put("settings.fit.degree", s.fit.degree.to_string());
    put("settings.fit.lambda", real(s.fit.lambda));
    put("settings.fit.constraint_grid", s.fit.constraint_grid.to_string());
    put("settings.lattice.resolution", s.lattice.resolution.to_string());
    put("settings.lattice.mu", real(s.lattice.mu));

    for (i, row) in model.matrix.rows.iter().enumerate() {
        for (j, v) in row.iter().enumerate() {
            put(&format!("matrix.m{}{}", i + 1, j + 1), real(*v));
        }
    }
    for (section, tones) in [("forward_tone", &model.forward_tones), ("inverse_tone", &model.inverse_tones)] {
        for curve in tones.iter() {
            put(&format!("{section}.{}.degree", curve.channel()), curve.degree().to_string());
            for (i, c) in curve.coefficients().iter().enumerate() {
                put(&format!("{section}.{}.c{i}", curve.channel()), real(*c));
            }
        }
    }
    for (section, lut) in [("forward_lut", &model.forward_lut), ("backward_lut", &model.backward_lut)] {
        put(&format!("{section}.resolution"), lut.resolution().to_string());
        for (i, node) in lut.nodes().iter().enumerate() {
            for c in Channel::ALL {
                put(&format!("{section}.node.{i}.{c}"), real(node[c.index()]));
            }
        }
    }
    out
}

struct Fields {
    values: HashMap<String, (usize, String)>,
}

impl Fields {
    fn parse(text: &str) -> Result<Self, ParseError> {
        let mut values = HashMap::new();
        for (idx, raw) in text.lines().enumerate() {
            let line_no = idx + 1;
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| ParseError::new(Some(line_no), line, "expected `key = value`"))?;
            let key = key.trim().to_string();
            if key.is_empty() {
                return Err(ParseError::new(Some(line_no), "", "empty key"));
            }
            if let Some((prev, _)) = values.insert(key.clone(), (line_no, value.trim().to_string())) {
                return Err(ParseError::new(Some(line_no), key, format!("duplicate key (first on line {prev})")));
            }
        }
        Ok(Self { values })
    }

    fn take_str(&mut self, key: &str) -> Result<(usize, String), ParseError> {
        self.values.remove(key).ok_or_else(|| ParseError::new(None, key, "missing field"))
    }

    fn take<T: FromStr>(&mut self, key: &str) -> Result<T, ParseError> {
        let (line, v) = self.take_str(key)?;
        v.parse().map_err(|_| ParseError::new(Some(line), key, format!("cannot parse `{v}`")))
    }

    fn take_real(&mut self, key: &str) -> Result<f64, ParseError> {
        let (line, v) = self.take_str(key)?;
        let x: f64 = v.parse().map_err(|_| ParseError::new(Some(line), key, format!("cannot parse `{v}` as a real")))?;
        if !x.is_finite() {
            return Err(ParseError::new(Some(line), key, format!("non-finite value `{v}`")));
        }
        Ok(x)
    }

    fn finish(self) -> Result<(), ParseError> {
        let mut left: Vec<_> = self.values.into_iter().collect();
        left.sort_by_key(|(_, (line, _))| *line);
        match left.first() {
            None => Ok(()),
            Some((key, (line, _))) if key.contains("_lut.node.") => {
                Err(ParseError::new(Some(*line), key.clone(), "node index beyond lattice size (wrong node count)"))
            }
            Some((key, (line, _))) => Err(ParseError::new(Some(*line), key.clone(), "unknown field")),
        }
    }
}

/// Parses the keyed text format back into a validated model.
pub fn deserialize_model(text: &str) -> Result<PipelineModel, ParseError> {
    let mut f = Fields::parse(text)?;
    let (line, format) = f.take_str("format")?;
    if format != FORMAT_NAME {
        return Err(ParseError::new(Some(line), "format", format!("unknown format `{format}`")));
    }
    let (line, version) = f.take_str("version")?;
    if version != FORMAT_VERSION.to_string() {
        return Err(ParseError::new(Some(line), "version", format!("unsupported version `{version}`")));
    }

    let camera_id = f.take_str("metadata.camera_id")?.1;
    let sample_count = f.take("metadata.sample_count")?;
    let settings = SolverSettings {
        seed: f.take("settings.seed")?,
        rank: RankConfig {
            sphere_points: f.take("settings.rank.sphere_points")?,
            trials: f.take("settings.rank.trials")?,
            max_colors: f.take("settings.rank.max_colors")?,
        },
        fit: FitConfig {
            degree: f.take("settings.fit.degree")?,
            lambda: f.take_real("settings.fit.lambda")?,
            constraint_grid: f.take("settings.fit.constraint_grid")?,
        },
        lattice: LatticeConfig {
            resolution: f.take("settings.lattice.resolution")?,
            mu: f.take_real("settings.lattice.mu")?,
        },
    };

    let mut rows = [[0.0; 3]; 3];
    for (i, row) in rows.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            *v = f.take_real(&format!("matrix.m{}{}", i + 1, j + 1))?;
        }
    }
    let matrix = ColorMatrix::new(rows).map_err(|e| ParseError::new(None, "matrix", e.to_string()))?;

    let forward_tones = read_tones(&mut f, "forward_tone", CurveDirection::Forward)?;
    let forward_lut = read_lattice(&mut f, "forward_lut")?;
    let inverse_tones = read_tones(&mut f, "inverse_tone", CurveDirection::Inverse)?;
    let backward_lut = read_lattice(&mut f, "backward_lut")?;
    f.finish()?;

    let model = PipelineModel {
        matrix,
        forward_tones,
        forward_lut,
        inverse_tones,
        backward_lut,
        metadata: ModelMetadata { camera_id, sample_count, settings },
    };
    model.validate().map_err(|e| ParseError::new(None, "model", e.to_string()))?;
    Ok(model)
}

fn read_tones(f: &mut Fields, section: &str, dir: CurveDirection) -> Result<[ToneCurve; 3], ParseError> {
    let mut curves = Vec::with_capacity(3);
    for c in Channel::ALL {
        let key = format!("{section}.{c}.degree");
        let degree: usize = f.take(&key)?;
        if degree == 0 || degree > 32 {
            return Err(ParseError::new(None, key, format!("unsupported degree {degree}")));
        }
        let coeffs =
            (0..=degree).map(|i| f.take_real(&format!("{section}.{c}.c{i}"))).collect::<Result<Vec<_>, _>>()?;
        let curve = ToneCurve::new(coeffs, dir, c).map_err(|e| ParseError::new(None, format!("{section}.{c}"), e.to_string()))?;
        curves.push(curve);
    }
    Ok(curves.try_into().expect("three channels"))
}

fn read_lattice(f: &mut Fields, section: &str) -> Result<Lattice3, ParseError> {
    let key = format!("{section}.resolution");
    let res: usize = f.take(&key)?;
    if !(2..=64).contains(&res) {
        return Err(ParseError::new(None, key, format!("unsupported resolution {res}")));
    }
    let mut nodes = Vec::with_capacity(res.pow(3));
    for i in 0..res.pow(3) {
        let mut v = [0.0; 3];
        for c in Channel::ALL {
            let key = format!("{section}.node.{i}.{c}");
            if !f.values.contains_key(&key) {
                return Err(ParseError::new(
                    None,
                    key,
                    format!("missing node {i} (resolution {res} needs {} nodes)", res.pow(3)),
                ));
            }
            v[c.index()] = f.take_real(&key)?;
        }
        nodes.push(Rgb::from_array(v));
    }
    Lattice3::new(res, nodes).map_err(|e| ParseError::new(None, section, e.to_string()))
}

//! File formats and output plumbing shared by the subcommands.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use centerpose_core::synth::{default_models, make_primitive_model, ModelRegistry, PrimitiveKind, DEFAULT_MODEL_POINTS};
use centerpose_core::{CameraIntrinsics, ObjectModel, Pose, Quaternion};
use nalgebra::Vector3;
use serde::{Deserialize, Serialize};
use serde_json::Value;

/// On-disk pose record.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PoseJson {
    pub class_id: u16,
    pub quaternion_wxyz: [f64; 4],
    pub translation_m: [f64; 3],
}

impl PoseJson {
    pub fn from_pose(class_id: u16, pose: &Pose) -> Self {
        let t = pose.translation;
        Self { class_id, quaternion_wxyz: pose.rotation().to_array(), translation_m: [t.x, t.y, t.z] }
    }

    pub fn to_pose(&self) -> Result<Pose> {
        let [x, y, z] = self.translation_m;
        Ok(Pose::new(Quaternion::from_array(self.quaternion_wxyz), Vector3::new(x, y, z))?)
    }
}

/// Rounds to 9 significant digits.
pub fn sig9(x: f64) -> f64 {
    if !x.is_finite() || x == 0.0 {
        return x;
    }
    format!("{x:.8e}").parse().unwrap_or(x)
}

fn round_floats(v: &mut Value) {
    match v {
        Value::Number(n) if n.is_f64() => {
            if let Some(r) = n.as_f64().and_then(|x| serde_json::Number::from_f64(sig9(x))) {
                *n = r;
            }
        }
        Value::Array(items) => items.iter_mut().for_each(round_floats),
        Value::Object(map) => map.values_mut().for_each(round_floats),
        _ => {}
    }
}

/// Pretty JSON with every float rounded to 9 significant digits.
pub fn json_bytes<T: Serialize>(value: &T) -> Result<Vec<u8>> {
    let mut v = serde_json::to_value(value)?;
    round_floats(&mut v);
    let mut out = serde_json::to_vec_pretty(&v)?;
    out.push(b'\n');
    Ok(out)
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("cannot parse {}", path.display()))
}

pub fn read_pose(path: &Path) -> Result<PoseJson> {
    read_json(path)
}

/// A pose list: a bare array, or an object with a `poses` array (as written
/// by `synth`). `null` entries stand for missing estimates.
pub fn read_pose_list(path: &Path) -> Result<Vec<Option<PoseJson>>> {
    let v: Value = read_json(path)?;
    let list = match v {
        Value::Array(_) => v,
        Value::Object(mut map) => map.remove("poses").ok_or_else(|| anyhow!("{}: no `poses` array", path.display()))?,
        _ => bail!("{}: expected a pose list", path.display()),
    };
    serde_json::from_value(list).with_context(|| format!("cannot parse poses in {}", path.display()))
}

/// Intrinsics from `{fx, fy, px, py}` or any object with an `intrinsics` member.
pub fn read_intrinsics(path: &Path) -> Result<CameraIntrinsics> {
    let v: Value = read_json(path)?;
    let inner = match v.get("intrinsics") {
        Some(k) => k.clone(),
        None => v,
    };
    let k: CameraIntrinsics =
        serde_json::from_value(inner).with_context(|| format!("cannot parse intrinsics in {}", path.display()))?;
    k.validate()?;
    Ok(k)
}

/// Canonical scale of each built-in primitive, meters.
pub fn primitive_scale(kind: PrimitiveKind) -> f64 {
    match kind {
        PrimitiveKind::Cube => 0.08,
        PrimitiveKind::Bar2Fold => 0.16,
        PrimitiveKind::AsymmetricBlob | PrimitiveKind::Cylinder => 0.10,
    }
}

/// `--model` value: `[CLASS=]SOURCE`, where the source is a PLY path or a
/// built-in primitive name (`cube`, `bar`, `blob`, `cylinder`).
#[derive(Debug, Clone, PartialEq)]
pub struct ModelArg {
    pub class_id: Option<u16>,
    pub source: String,
}

impl std::str::FromStr for ModelArg {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.split_once('=') {
            Some((c, src)) => {
                let class_id = c.parse::<u16>().map_err(|_| format!("bad class id `{c}`"))?;
                if class_id == 0 {
                    return Err("class id 0 is reserved for background".into());
                }
                Ok(Self { class_id: Some(class_id), source: src.to_string() })
            }
            None => Ok(Self { class_id: None, source: s.to_string() }),
        }
    }
}

impl ModelArg {
    pub fn load(&self, class_id: u16) -> Result<ObjectModel> {
        let path = Path::new(&self.source);
        if !path.exists() {
            if let Ok(kind) = self.source.parse::<PrimitiveKind>() {
                let m = make_primitive_model(kind, primitive_scale(kind), DEFAULT_MODEL_POINTS)?;
                return Ok(m.with_class_id(class_id));
            }
        }
        centerpose_core::ply::read_ply(path, class_id).with_context(|| format!("cannot load model {}", path.display()))
    }
}

/// Built-in registry overridden by `CLASS=SOURCE` arguments. A bare source
/// is bound to `default_class`, which is required in that case.
pub fn build_registry(args: &[ModelArg], default_class: Option<u16>) -> Result<ModelRegistry> {
    let mut models = default_models();
    for a in args {
        let class = a
            .class_id
            .or(default_class)
            .ok_or_else(|| anyhow!("model `{}` needs a class id here (use CLASS=PATH)", a.source))?;
        models.insert(class, a.load(class)?);
    }
    Ok(models)
}

/// Refuses to run when an output would overwrite one of the inputs.
pub fn ensure_distinct(inputs: &[&Path], outputs: &[&Path]) -> Result<()> {
    for out in outputs {
        let Ok(o) = fs::canonicalize(out) else { continue };
        for input in inputs {
            if fs::canonicalize(input).is_ok_and(|i| i == o) {
                bail!("output {} would overwrite an input", out.display());
            }
        }
    }
    Ok(())
}

/// Writes `bytes` to a temporary file beside `path` and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d.to_path_buf(),
        _ => PathBuf::from("."),
    };
    fs::create_dir_all(&dir).with_context(|| format!("cannot create {}", dir.display()))?;
    let mut tmp = tempfile::NamedTempFile::new_in(&dir)?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).with_context(|| format!("cannot write {}", path.display()))?;
    Ok(())
}

/// Output files collected in memory and written only once every one of them
/// has been produced.
#[derive(Debug, Default)]
pub struct Outputs {
    files: Vec<(PathBuf, Vec<u8>)>,
    stdout: Vec<u8>,
}

impl Outputs {
    pub fn file(&mut self, path: impl Into<PathBuf>, bytes: Vec<u8>) {
        self.files.push((path.into(), bytes));
    }

    /// Writes to `path` if given, else to stdout.
    pub fn file_or_stdout(&mut self, path: Option<&Path>, bytes: Vec<u8>) {
        match path {
            Some(p) => self.file(p, bytes),
            None => self.stdout.extend(bytes),
        }
    }

    pub fn paths(&self) -> Vec<&Path> {
        self.files.iter().map(|(p, _)| p.as_path()).collect()
    }

    pub fn commit(self) -> Result<()> {
        for (path, bytes) in &self.files {
            write_atomic(path, bytes)?;
        }
        std::io::stdout().write_all(&self.stdout)?;
        Ok(())
    }
}

/// Formats one CSV number, 9 significant digits; missing values are `inf`.
pub fn csv_num(x: Option<f64>) -> String {
    match x {
        Some(v) => {
            let r = sig9(v);
            if r == 0.0 || (1e-4..1e15).contains(&r.abs()) {
                r.to_string()
            } else {
                format!("{r:e}")
            }
        }
        None => "inf".into(),
    }
}

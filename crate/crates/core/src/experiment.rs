//! Declarative experiments and reproducibility manifests.
//!
//! An [`ExperimentSpec`] names a model, a kind of probe, and its parameters.
//! [`run`] resolves every latent and renders every image in memory first,
//! so a bad spec fails before anything is written, then writes the PNGs and
//! finally `manifest.json`, which records SHA-256 hashes of every output.
//! [`rerun_check`] re-executes the recorded spec and compares hashes.

use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::anchors::AnchorStore;
use crate::arithmetic::{average_anchors, evaluate_arithmetic, ArithmeticExpression, Sign};
use crate::error::{Error, Result};
use crate::format::load_model;
use crate::fsutil::{sha256_hex, write_atomic};
use crate::image::{compose_grid, tensor_to_image, GridLayout, ImageBuffer};
use crate::latent::{format_latents, parse_latents, sample_latents, LatentVector};
use crate::model::GeneratorModel;
use crate::tensor::Tensor;
use crate::traverse::{traverse, TraversalKind, DEFAULT_STEPS};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const DEFAULT_GRID_COLS: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    Samples,
    Interpolate,
    Extrapolate,
    CircularPaper,
    Slerp,
    Arithmetic,
}

impl ExperimentKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ExperimentKind::Samples => "samples",
            ExperimentKind::Interpolate => "interpolate",
            ExperimentKind::Extrapolate => "extrapolate",
            ExperimentKind::CircularPaper => "circular_paper",
            ExperimentKind::Slerp => "slerp",
            ExperimentKind::Arithmetic => "arithmetic",
        }
    }

    pub fn traversal(self) -> Option<TraversalKind> {
        match self {
            ExperimentKind::Interpolate => Some(TraversalKind::Linear),
            ExperimentKind::Extrapolate => Some(TraversalKind::ExtrapolateTwoSided),
            ExperimentKind::CircularPaper => Some(TraversalKind::CircularPaper),
            ExperimentKind::Slerp => Some(TraversalKind::Slerp),
            ExperimentKind::Samples | ExperimentKind::Arithmetic => None,
        }
    }

    pub const ALL: [ExperimentKind; 6] = [
        ExperimentKind::Samples,
        ExperimentKind::Interpolate,
        ExperimentKind::Extrapolate,
        ExperimentKind::CircularPaper,
        ExperimentKind::Slerp,
        ExperimentKind::Arithmetic,
    ];
}

/// Where traversal endpoints come from. Absent means: draw both from the
/// spec's `seed` with one `sample_latents(count = 2)` call.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum Endpoints {
    /// One seed per endpoint, each the first vector of `sample_latents(count = 1)`.
    Seeds([u64; 2]),
    /// Latent record files; the first record of each is used.
    Files([PathBuf; 2]),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TermSpec {
    pub sign: Sign,
    pub anchor_set: String,
}

fn default_n() -> usize {
    DEFAULT_STEPS
}

fn default_cols() -> usize {
    DEFAULT_GRID_COLS
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    pub kind: ExperimentKind,
    pub model_path: PathBuf,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_n")]
    pub n: usize,
    #[serde(default = "default_cols")]
    pub grid_cols: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub endpoints: Option<Endpoints>,
    /// Circular traversal radius; 1 when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub radius: Option<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub terms: Vec<TermSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub store_path: Option<PathBuf>,
    pub output_dir: PathBuf,
}

impl ExperimentSpec {
    pub fn new(
        kind: ExperimentKind,
        model_path: impl Into<PathBuf>,
        output_dir: impl Into<PathBuf>,
    ) -> Self {
        Self {
            kind,
            model_path: model_path.into(),
            seed: 0,
            n: DEFAULT_STEPS,
            grid_cols: DEFAULT_GRID_COLS,
            endpoints: None,
            radius: None,
            terms: Vec::new(),
            store_path: None,
            output_dir: output_dir.into(),
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let spec: Self = serde_json::from_str(text)
            .map_err(|e| Error::invalid(format!("experiment spec: {e}")))?;
        spec.check()?;
        Ok(spec)
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("spec serializes")
    }

    /// Structural checks that need no files.
    pub fn check(&self) -> Result<()> {
        let kind = self.kind.as_str();
        if self.grid_cols == 0 {
            return Err(Error::invalid("grid_cols must be >= 1"));
        }
        match self.kind {
            ExperimentKind::Samples => {
                if self.n < 1 {
                    return Err(Error::invalid("samples needs n >= 1"));
                }
            }
            ExperimentKind::Arithmetic => {
                if self.terms.is_empty() {
                    return Err(Error::invalid("arithmetic needs at least one term"));
                }
                if self.store_path.is_none() {
                    return Err(Error::invalid("arithmetic needs store_path"));
                }
            }
            _ => {
                if self.n < 2 {
                    return Err(Error::invalid(format!("{kind} needs n >= 2")));
                }
                if self.kind == ExperimentKind::Extrapolate && self.n % 2 == 1 {
                    return Err(Error::invalid(format!(
                        "extrapolate needs an even n (got {})",
                        self.n
                    )));
                }
            }
        }
        let traversal = self.kind.traversal().is_some();
        let arithmetic = self.kind == ExperimentKind::Arithmetic;
        if self.endpoints.is_some() && !traversal {
            return Err(Error::invalid(format!("{kind} does not take endpoints")));
        }
        if self.radius.is_some() && self.kind != ExperimentKind::CircularPaper {
            return Err(Error::invalid(format!("{kind} does not take radius")));
        }
        if let Some(r) = self.radius {
            if !(r.is_finite() && r > 0.0) {
                return Err(Error::invalid(format!("radius must be positive (got {r})")));
            }
        }
        if !arithmetic && (!self.terms.is_empty() || self.store_path.is_some()) {
            return Err(Error::invalid(format!(
                "{kind} does not take terms or store_path"
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy)]
pub struct RunOptions {
    /// Worker threads for forward passes; 1 runs sequentially.
    pub jobs: usize,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self { jobs: 1 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutputFile {
    pub name: String,
    pub sha256: String,
    pub bytes: u64,
}

/// Image-space diagnostics for traversal runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraversalMetrics {
    /// L2 distance between consecutive generator outputs (tensor space).
    pub adjacent_l2: Vec<f64>,
    /// 1-based tile pair `(i, i + 1)` with the largest jump.
    pub largest_jump_pair: [usize; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub engine_version: String,
    pub spec: ExperimentSpec,
    /// Every latent decoded, in tile order, as text records.
    pub latents: Vec<String>,
    pub files: Vec<OutputFile>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub metrics: Option<TraversalMetrics>,
    pub duration_ms: u64,
}

impl RunManifest {
    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => {
                Error::Resolution(format!("manifest {}", path.display()))
            }
            _ => Error::io(path, e),
        })?;
        serde_json::from_str(&text)
            .map_err(|e| Error::Format(format!("manifest {}: {e}", path.display())))
    }
}

/// Everything a run produces, before it touches the filesystem.
#[derive(Debug)]
pub struct RenderedRun {
    pub latents: Vec<LatentVector>,
    pub files: Vec<(String, Vec<u8>)>,
    pub metrics: Option<TraversalMetrics>,
}

fn resolve_model(path: &Path) -> Result<GeneratorModel> {
    load_model(path).map_err(|e| match e {
        Error::Io { source, .. } if source.kind() == std::io::ErrorKind::NotFound => {
            Error::Resolution(format!("model {}", path.display()))
        }
        other => other,
    })
}

fn read_latent_file(path: &Path) -> Result<LatentVector> {
    let text = std::fs::read_to_string(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => {
            Error::Resolution(format!("latent file {}", path.display()))
        }
        _ => Error::io(path, e),
    })?;
    parse_latents(&text)?
        .into_iter()
        .next()
        .ok_or_else(|| Error::Format(format!("latent file {} is empty", path.display())))
}

fn check_model_dim(model: &GeneratorModel, z: &LatentVector, what: &str) -> Result<()> {
    if z.dim() != model.input_dim() {
        return Err(Error::validation(
            None,
            format!(
                "{what} has dim {} but the model expects {}",
                z.dim(),
                model.input_dim()
            ),
        ));
    }
    Ok(())
}

fn forward_all(
    model: &GeneratorModel,
    latents: &[LatentVector],
    jobs: usize,
) -> Result<Vec<Tensor>> {
    if jobs <= 1 {
        return latents.iter().map(|z| model.forward(z)).collect();
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| Error::invalid(format!("thread pool: {e}")))?;
    pool.install(|| latents.par_iter().map(|z| model.forward(z)).collect())
}

/// Resolve, decode and encode everything for `spec` without writing.
pub fn render(spec: &ExperimentSpec, opts: RunOptions) -> Result<RenderedRun> {
    spec.check()?;
    let model = resolve_model(&spec.model_path)?;
    let prefix = spec.kind.as_str();

    let (latents, operand_count) = match spec.kind {
        ExperimentKind::Samples => (
            sample_latents(model.input_space(), model.input_dim(), spec.n, spec.seed)?,
            0,
        ),
        ExperimentKind::Arithmetic => {
            let store_path = spec.store_path.as_ref().expect("checked");
            let store = AnchorStore::open_existing(store_path)?;
            let mut terms = Vec::with_capacity(spec.terms.len());
            for t in &spec.terms {
                let set = store.get(&t.anchor_set).map_err(|e| match e {
                    Error::NotFound(what) => Error::Resolution(what),
                    other => other,
                })?;
                check_model_dim(
                    &model,
                    &set.members()[0],
                    &format!("anchor set `{}`", set.name()),
                )?;
                terms.push((t.sign, set));
            }
            let expr = ArithmeticExpression::new(terms)?;
            let mut latents: Vec<LatentVector> =
                expr.terms.iter().map(|(_, s)| average_anchors(s)).collect();
            latents.push(evaluate_arithmetic(&expr)?);
            (latents, expr.terms.len())
        }
        kind => {
            let tk = kind.traversal().expect("traversal kind");
            let (a, b) = match &spec.endpoints {
                None => {
                    let mut pair =
                        sample_latents(model.input_space(), model.input_dim(), 2, spec.seed)?;
                    let b = pair.pop().unwrap();
                    (pair.pop().unwrap(), b)
                }
                Some(Endpoints::Seeds([sa, sb])) => {
                    let draw = |s: u64| -> Result<LatentVector> {
                        Ok(
                            sample_latents(model.input_space(), model.input_dim(), 1, s)?
                                .pop()
                                .unwrap(),
                        )
                    };
                    (draw(*sa)?, draw(*sb)?)
                }
                Some(Endpoints::Files([fa, fb])) => (read_latent_file(fa)?, read_latent_file(fb)?),
            };
            check_model_dim(&model, &a, "first endpoint")?;
            check_model_dim(&model, &b, "second endpoint")?;
            let seq = traverse(tk, &a, &b, spec.n, spec.radius.unwrap_or(1.0))?;
            (seq.points, 0)
        }
    };

    let outputs = forward_all(&model, &latents, opts.jobs)?;
    let images = outputs
        .iter()
        .map(tensor_to_image)
        .collect::<Result<Vec<ImageBuffer>>>()?;

    let cols = if spec.kind == ExperimentKind::Arithmetic {
        images.len()
    } else {
        spec.grid_cols
    };
    let grid = compose_grid(&images, GridLayout::flush(cols))?;

    let mut files: Vec<(String, Vec<u8>)> = images
        .iter()
        .enumerate()
        .map(|(i, img)| (format!("{prefix}_{i:02}.png"), img.to_png()))
        .collect();
    files.push((format!("{prefix}_grid.png"), grid.to_png()));
    if spec.kind == ExperimentKind::Arithmetic {
        let result = &latents[operand_count];
        files.push((
            format!("{prefix}_result.latent"),
            format_latents(std::slice::from_ref(result)).into_bytes(),
        ));
    }

    let metrics = spec.kind.traversal().map(|_| traversal_metrics(&outputs));

    Ok(RenderedRun {
        latents,
        files,
        metrics,
    })
}

fn traversal_metrics(outputs: &[Tensor]) -> TraversalMetrics {
    let adjacent_l2: Vec<f64> = outputs
        .windows(2)
        .map(|w| w[0].l2_distance(&w[1]))
        .collect();
    let i = adjacent_l2.iter().enumerate().fold(
        0,
        |best, (i, d)| if *d > adjacent_l2[best] { i } else { best },
    );
    TraversalMetrics {
        adjacent_l2,
        largest_jump_pair: [i + 1, i + 2],
    }
}

/// Execute `spec`, write all outputs into `spec.output_dir`, and write the
/// manifest last.
pub fn run(spec: &ExperimentSpec, opts: RunOptions) -> Result<RunManifest> {
    let started = Instant::now();
    let rendered = render(spec, opts)?;

    let dir = &spec.output_dir;
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut files = Vec::with_capacity(rendered.files.len());
    for (name, bytes) in &rendered.files {
        write_atomic(&dir.join(name), bytes)?;
        files.push(OutputFile {
            name: name.clone(),
            sha256: sha256_hex(bytes),
            bytes: bytes.len() as u64,
        });
    }
    let manifest = RunManifest {
        engine_version: crate::ENGINE_VERSION.to_string(),
        spec: spec.clone(),
        latents: rendered.latents.iter().map(LatentVector::to_line).collect(),
        files,
        metrics: rendered.metrics,
        duration_ms: started.elapsed().as_millis() as u64,
    };
    let mut json = serde_json::to_vec_pretty(&manifest).expect("manifest serializes");
    json.push(b'\n');
    write_atomic(&dir.join(MANIFEST_FILE), &json)?;
    Ok(manifest)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RerunReport {
    pub matched: Vec<String>,
    /// Regenerated bytes differ from the recorded hash.
    pub diverged: Vec<String>,
    /// Recorded file is missing next to the manifest.
    pub missing: Vec<String>,
    /// File on disk no longer matches its recorded hash.
    pub modified: Vec<String>,
    /// Regenerated outputs the manifest does not list.
    pub unexpected: Vec<String>,
}

impl RerunReport {
    pub fn all_match(&self) -> bool {
        self.diverged.is_empty()
            && self.missing.is_empty()
            && self.modified.is_empty()
            && self.unexpected.is_empty()
    }

    /// Every file name that failed any check, sorted and deduplicated.
    pub fn divergent_files(&self) -> Vec<String> {
        let mut all: Vec<String> = self
            .diverged
            .iter()
            .chain(&self.missing)
            .chain(&self.modified)
            .chain(&self.unexpected)
            .cloned()
            .collect();
        all.sort();
        all.dedup();
        all
    }
}

/// Re-execute the manifest's spec in memory and compare every output
/// against the recorded hashes and against the files beside the manifest.
pub fn rerun_check(manifest_path: impl AsRef<Path>, opts: RunOptions) -> Result<RerunReport> {
    let manifest_path = manifest_path.as_ref();
    let manifest = RunManifest::from_file(manifest_path)?;
    let dir = manifest_path
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .unwrap_or(Path::new("."));
    let rendered = render(&manifest.spec, opts)?;

    let mut report = RerunReport {
        matched: Vec::new(),
        diverged: Vec::new(),
        missing: Vec::new(),
        modified: Vec::new(),
        unexpected: Vec::new(),
    };
    for f in &manifest.files {
        let fresh = rendered
            .files
            .iter()
            .find(|(n, _)| n == &f.name)
            .map(|(_, b)| sha256_hex(b));
        let mut ok = true;
        if fresh.as_deref() != Some(f.sha256.as_str()) {
            report.diverged.push(f.name.clone());
            ok = false;
        }
        let on_disk = dir.join(&f.name);
        match std::fs::read(&on_disk) {
            Ok(bytes) => {
                if sha256_hex(&bytes) != f.sha256 {
                    report.modified.push(f.name.clone());
                    ok = false;
                }
            }
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
                report.missing.push(f.name.clone());
                ok = false;
            }
            Err(e) => return Err(Error::io(on_disk, e)),
        }
        if ok {
            report.matched.push(f.name.clone());
        }
    }
    for (name, _) in &rendered.files {
        if !manifest.files.iter().any(|f| &f.name == name) {
            report.unexpected.push(name.clone());
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn strict_spec_parsing() {
        let ok = r#"{"kind":"interpolate","model_path":"m.lgw1","output_dir":"o"}"#;
        let s = ExperimentSpec::from_json(ok).unwrap();
        assert_eq!((s.n, s.grid_cols, s.seed), (16, 4, 0));

        let typo = r#"{"kind":"interpolate","model_path":"m","output_dir":"o","sed":3}"#;
        assert!(matches!(
            ExperimentSpec::from_json(typo),
            Err(Error::InvalidArgument(_))
        ));

        let odd = r#"{"kind":"extrapolate","model_path":"m","output_dir":"o","n":15}"#;
        assert!(ExperimentSpec::from_json(odd).is_err());

        let no_terms =
            r#"{"kind":"arithmetic","model_path":"m","output_dir":"o","store_path":"s"}"#;
        assert!(ExperimentSpec::from_json(no_terms).is_err());

        let stray = r#"{"kind":"samples","model_path":"m","output_dir":"o","radius":2}"#;
        assert!(ExperimentSpec::from_json(stray).is_err());
    }

    #[test]
    fn spec_json_round_trip() {
        let mut s = ExperimentSpec::new(ExperimentKind::Arithmetic, "m.lgw1", "out");
        s.store_path = Some("store.json".into());
        s.terms = vec![
            TermSpec {
                sign: Sign::Plus,
                anchor_set: "a".into(),
            },
            TermSpec {
                sign: Sign::Minus,
                anchor_set: "b".into(),
            },
        ];
        assert_eq!(ExperimentSpec::from_json(&s.to_json()).unwrap(), s);

        let mut t = ExperimentSpec::new(ExperimentKind::CircularPaper, "m", "o");
        t.endpoints = Some(Endpoints::Seeds([3, 4]));
        t.radius = Some(0.5);
        let json = t.to_json();
        assert!(json.contains("\"seeds\""));
        assert_eq!(ExperimentSpec::from_json(&json).unwrap(), t);
    }

    #[test]
    fn largest_jump_pair_is_one_based() {
        let t = |v: f64| Tensor::from_vec(vec![v]);
        let m = traversal_metrics(&[t(0.0), t(0.1), t(5.0), t(5.2)]);
        assert_eq!(m.largest_jump_pair, [2, 3]);
        assert_eq!(m.adjacent_l2.len(), 3);
    }
}

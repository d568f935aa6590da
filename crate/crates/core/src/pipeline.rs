//! End-to-end feature chain over an ordered list of frames.
//!
//! For every consecutive pair `t`: flow (estimated or read from `.flo`), the reconstructed
//! next frame and its residual. For every frame: HOG and, when weights are given, the attention
//! output. Everything lands in one directory together with `manifest.tsv`, one
//! `path<TAB>B,C,H,W` line per written file.

use std::fs;
use std::path::{Path, PathBuf};

use log::info;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::flow::{horn_schunck, FlowParams};
use crate::ggca::{ggca_forward, init_weights, read_weights, GgcaWeights};
use crate::hog::{hog, HogFeature, DEFAULT_POOL};
use crate::io::{encode_flo, encode_tensor, load_frame, read_flo};
use crate::tensor::{Dims, FlowField, Tensor4};
use crate::warp::{reconstruct_frame, residual};

pub const MANIFEST: &str = "manifest.tsv";

#[derive(Clone, Debug, PartialEq)]
pub enum FlowSource {
    Builtin(FlowParams),
    /// One `.flo` per consecutive pair.
    Files(Vec<PathBuf>),
}

#[derive(Clone, Debug, PartialEq)]
pub enum WeightsSource {
    File(PathBuf),
    Init { channels: usize, groups: usize, seed: u64 },
}

impl WeightsSource {
    pub fn load(&self) -> Result<GgcaWeights> {
        match self {
            WeightsSource::File(p) => read_weights(p),
            WeightsSource::Init { channels, groups, seed } => init_weights(*channels, *groups, *seed),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct EmitFlags {
    pub flow: bool,
    pub recon: bool,
    pub residual: bool,
    pub hog: bool,
    /// Residual channels followed by the pair's second-frame HOG, nearest-upsampled to `H x W`.
    pub concat: bool,
}

impl Default for EmitFlags {
    fn default() -> Self {
        EmitFlags {
            flow: true,
            recon: true,
            residual: true,
            hog: true,
            concat: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PipelineConfig {
    pub frames: Vec<PathBuf>,
    pub flow: FlowSource,
    pub hog_pool: usize,
    pub ggca: Option<WeightsSource>,
    pub out_dir: PathBuf,
    pub emit: EmitFlags,
    /// Worker threads; `None` uses the global pool. Outputs do not depend on it.
    pub threads: Option<usize>,
}

impl PipelineConfig {
    pub fn new(frames: Vec<PathBuf>, out_dir: impl Into<PathBuf>) -> Self {
        PipelineConfig {
            frames,
            flow: FlowSource::Builtin(FlowParams::default()),
            hog_pool: DEFAULT_POOL,
            ggca: None,
            out_dir: out_dir.into(),
            emit: EmitFlags::default(),
            threads: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ManifestEntry {
    /// Relative to the output directory.
    pub path: String,
    pub dims: Dims,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PipelineSummary {
    pub entries: Vec<ManifestEntry>,
    /// Pairs whose flow came from the built-in estimator.
    pub estimated_pairs: usize,
}

/// Writes files and remembers them so a failed run can be rolled back.
struct OutputSet {
    dir: PathBuf,
    written: Vec<PathBuf>,
    entries: Vec<ManifestEntry>,
}

impl OutputSet {
    fn put(&mut self, name: String, dims: Dims, bytes: &[u8]) -> Result<()> {
        let path = self.dir.join(&name);
        self.written.push(path.clone());
        fs::write(&path, bytes)?;
        self.entries.push(ManifestEntry { path: name, dims });
        Ok(())
    }

    fn tensor(&mut self, name: String, t: &Tensor4) -> Result<()> {
        self.put(name, t.dims(), &encode_tensor(t))
    }

    fn rollback(&self) {
        for p in &self.written {
            let _ = fs::remove_file(p);
        }
    }
}

struct PairOutput {
    flow: FlowField,
    recon: Tensor4,
    residual: Tensor4,
}

/// Nearest-neighbour upsampling of a folded HOG map to `h x w`.
fn upsample_hog(feature: &HogFeature, pool: usize, h: usize, w: usize) -> Tensor4 {
    let folded = feature.to_tensor();
    let d = folded.dims();
    Tensor4::from_fn([d.b, d.c, h, w], |b, c, y, x| folded.get(b, c, y / pool, x / pool))
}

fn load_inputs(cfg: &PipelineConfig) -> Result<(Vec<Tensor4>, Option<Vec<FlowField>>)> {
    if cfg.frames.len() < 2 {
        return Err(Error::param(format!("need at least 2 frames, got {}", cfg.frames.len())));
    }
    let frames = cfg.frames.iter().map(load_frame).collect::<Result<Vec<_>>>()?;
    let d0 = frames[0].dims();
    for (p, f) in cfg.frames.iter().zip(&frames) {
        if f.dims() != d0 {
            return Err(Error::shape(format!(
                "{} is {}, first frame is {d0}",
                p.display(),
                f.dims()
            )));
        }
    }
    let flows = match &cfg.flow {
        FlowSource::Builtin(params) => {
            params.validate()?;
            None
        }
        FlowSource::Files(paths) => {
            if paths.len() != frames.len() - 1 {
                return Err(Error::param(format!(
                    "{} frames need {} flow files, got {}",
                    frames.len(),
                    frames.len() - 1,
                    paths.len()
                )));
            }
            let flows = paths.iter().map(read_flo).collect::<Result<Vec<_>>>()?;
            for (p, f) in paths.iter().zip(&flows) {
                let fd = f.dims();
                if (fd.b, fd.h, fd.w) != (d0.b, d0.h, d0.w) {
                    return Err(Error::shape(format!("{} is {fd}, frames are {d0}", p.display())));
                }
            }
            Some(flows)
        }
    };
    Ok((frames, flows))
}

fn run_stages(cfg: &PipelineConfig, out: &mut OutputSet) -> Result<usize> {
    if cfg.hog_pool < 1 {
        return Err(Error::param("pool size must be >= 1"));
    }
    let (frames, flows) = load_inputs(cfg)?;
    let weights = cfg.ggca.as_ref().map(WeightsSource::load).transpose()?;

    let estimated_pairs = if flows.is_none() { frames.len() - 1 } else { 0 };
    let pairs: Vec<PairOutput> = (0..frames.len() - 1)
        .into_par_iter()
        .map(|t| {
            let flow = match (&flows, &cfg.flow) {
                (Some(f), _) => f[t].clone(),
                (None, FlowSource::Builtin(params)) => {
                    info!("estimating flow for pair {t} with Horn-Schunck");
                    horn_schunck(&frames[t], &frames[t + 1], params)?
                }
                (None, FlowSource::Files(_)) => unreachable!("flow files are loaded up front"),
            };
            let recon = reconstruct_frame(&frames[t], &flow)?;
            let residual = residual(&recon, &frames[t + 1])?;
            Ok(PairOutput { flow, recon, residual })
        })
        .collect::<Result<_>>()?;
    let hogs: Vec<HogFeature> = frames
        .par_iter()
        .map(|f| hog(f, cfg.hog_pool))
        .collect::<Result<_>>()?;
    let attended: Option<Vec<Tensor4>> = weights
        .as_ref()
        .map(|w| frames.par_iter().map(|f| ggca_forward(f, w)).collect::<Result<_>>())
        .transpose()?;

    let e = cfg.emit;
    for (t, p) in pairs.iter().enumerate() {
        if e.flow {
            out.put(format!("flow_{t}.flo"), p.flow.dims(), &encode_flo(&p.flow)?)?;
        }
        if e.recon {
            out.tensor(format!("recon_{t}.gcft"), &p.recon)?;
        }
        if e.residual {
            out.tensor(format!("residual_{t}.gcft"), &p.residual)?;
        }
        if e.concat {
            let d = p.residual.dims();
            let up = upsample_hog(&hogs[t + 1], cfg.hog_pool, d.h, d.w);
            out.tensor(format!("concat_{t}.gcft"), &Tensor4::concat_channels(&[&p.residual, &up])?)?;
        }
    }
    if e.hog {
        for (t, h) in hogs.iter().enumerate() {
            out.tensor(format!("hog_{t}.gcft"), &h.to_tensor())?;
        }
    }
    if let Some(att) = &attended {
        for (t, a) in att.iter().enumerate() {
            out.tensor(format!("ggca_{t}.gcft"), a)?;
        }
    }
    Ok(estimated_pairs)
}

fn manifest_text(entries: &[ManifestEntry]) -> String {
    entries
        .iter()
        .map(|e| format!("{}\t{}\n", e.path, e.dims))
        .collect()
}

/// Parses `path<TAB>B,C,H,W` lines.
pub fn parse_manifest(text: &str) -> Result<Vec<ManifestEntry>> {
    text.lines()
        .filter(|l| !l.is_empty())
        .map(|line| {
            let bad = || Error::Header {
                format: "manifest",
                reason: format!("bad line {line:?}"),
            };
            let (path, dims) = line.split_once('\t').ok_or_else(bad)?;
            let d: Vec<usize> = dims
                .split(',')
                .map(|s| s.parse().map_err(|_| bad()))
                .collect::<Result<_>>()?;
            let d: [usize; 4] = d.try_into().map_err(|_| bad())?;
            Ok(ManifestEntry {
                path: path.to_string(),
                dims: d.into(),
            })
        })
        .collect()
}

fn run_in_dir(cfg: &PipelineConfig) -> Result<PipelineSummary> {
    fs::create_dir_all(&cfg.out_dir)?;
    let mut out = OutputSet {
        dir: cfg.out_dir.clone(),
        written: Vec::new(),
        entries: Vec::new(),
    };
    let result = run_stages(cfg, &mut out).and_then(|estimated| {
        let manifest = manifest_text(&out.entries);
        out.written.push(cfg.out_dir.join(MANIFEST));
        fs::write(cfg.out_dir.join(MANIFEST), manifest)?;
        Ok(estimated)
    });
    match result {
        Ok(estimated_pairs) => Ok(PipelineSummary {
            entries: out.entries,
            estimated_pairs,
        }),
        Err(e) => {
            out.rollback();
            Err(e)
        }
    }
}

/// Runs the whole chain; on failure every file this run wrote is removed again.
pub fn pipeline_run(cfg: &PipelineConfig) -> Result<PipelineSummary> {
    match cfg.threads {
        None => run_in_dir(cfg),
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| Error::param(format!("cannot build thread pool: {e}")))?
            .install(|| run_in_dir(cfg)),
    }
}

/// Convenience for callers holding paths: the manifest of a finished run.
pub fn read_manifest(dir: &Path) -> Result<Vec<ManifestEntry>> {
    parse_manifest(&fs::read_to_string(dir.join(MANIFEST))?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::io::write_image;

    fn frame(shift: usize) -> Tensor4 {
        Tensor4::from_fn([1, 3, 16, 16], |_, c, y, x| (((x + shift) * 3 + y * 5 + c) % 17) as f32 / 16.0)
    }

    fn write_frames(dir: &Path, frames: &[Tensor4]) -> Vec<PathBuf> {
        frames
            .iter()
            .enumerate()
            .map(|(i, f)| {
                let p = dir.join(format!("in_{i}.ppm"));
                write_image(f, &p).unwrap();
                p
            })
            .collect()
    }

    #[test]
    fn two_frames_write_the_documented_files() {
        let tmp = tempfile::tempdir().unwrap();
        let frames = write_frames(tmp.path(), &[frame(0), frame(1)]);
        let out = tmp.path().join("out");
        let summary = pipeline_run(&PipelineConfig::new(frames, &out)).unwrap();
        let names: Vec<&str> = summary.entries.iter().map(|e| e.path.as_str()).collect();
        assert_eq!(names, ["flow_0.flo", "recon_0.gcft", "residual_0.gcft", "hog_0.gcft", "hog_1.gcft"]);
        assert_eq!(summary.estimated_pairs, 1);
        assert_eq!(read_manifest(&out).unwrap(), summary.entries);
        assert_eq!(summary.entries[3].dims, Dims::new(1, 27, 2, 2));
    }

    #[test]
    fn concat_and_attention_outputs() {
        let tmp = tempfile::tempdir().unwrap();
        let frames = write_frames(tmp.path(), &[frame(0), frame(1), frame(2)]);
        let mut cfg = PipelineConfig::new(frames, tmp.path().join("o"));
        cfg.emit.concat = true;
        cfg.hog_pool = 4;
        cfg.ggca = Some(WeightsSource::Init { channels: 3, groups: 1, seed: 42 });
        let s = pipeline_run(&cfg).unwrap();
        let concat = s.entries.iter().find(|e| e.path == "concat_1.gcft").unwrap();
        assert_eq!(concat.dims, Dims::new(1, 30, 16, 16));
        assert!(s.entries.iter().any(|e| e.path == "ggca_2.gcft"));
    }

    #[test]
    fn upsampling_repeats_blocks() {
        let f = hog(&frame(0), 4).unwrap();
        let up = upsample_hog(&f, 4, 16, 16);
        let folded = f.to_tensor();
        assert_eq!(up.get(0, 5, 7, 13), folded.get(0, 5, 1, 3));
    }

    #[test]
    fn failure_removes_partial_outputs() {
        let tmp = tempfile::tempdir().unwrap();
        let frames = write_frames(tmp.path(), &[frame(0), frame(1)]);
        let out = tmp.path().join("o");
        let mut cfg = PipelineConfig::new(frames, &out);
        // weights for the wrong channel count fail after the flow outputs are computed
        cfg.ggca = Some(WeightsSource::Init { channels: 4, groups: 2, seed: 1 });
        assert!(pipeline_run(&cfg).is_err());
        assert_eq!(fs::read_dir(&out).unwrap().count(), 0);
    }

    #[test]
    fn rejects_inconsistent_inputs() {
        let tmp = tempfile::tempdir().unwrap();
        let mut frames = write_frames(tmp.path(), &[frame(0)]);
        let out = tmp.path().join("o");
        assert!(pipeline_run(&PipelineConfig::new(frames.clone(), &out)).is_err());
        let small = tmp.path().join("small.ppm");
        write_image(&Tensor4::zeros([1, 3, 8, 8]), &small).unwrap();
        frames.push(small);
        assert!(matches!(pipeline_run(&PipelineConfig::new(frames, &out)), Err(Error::Shape(_))));
    }

    #[test]
    fn manifest_parse_errors() {
        assert!(parse_manifest("a.gcft\t1,2,3\n").is_err());
        assert!(parse_manifest("a.gcft 1,2,3,4\n").is_err());
        assert_eq!(parse_manifest("a\t1,2,3,4\n").unwrap()[0].dims, Dims::new(1, 2, 3, 4));
    }
}
